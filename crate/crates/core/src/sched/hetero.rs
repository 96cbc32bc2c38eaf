//! Linear-complexity heuristic for heterogeneous packet lengths.

use rand::Rng;

use super::{evaluate_set, select_nrt, BestSet, EligibleSlotView, RtCandidate, SlotDecision};
use crate::error::Result;

/// Positions in `rt` sorted by `Y * gain / L` descending, ties by user id.
pub fn heterogeneous_order(rt: &[RtCandidate]) -> Vec<usize> {
    let key = |c: &RtCandidate| c.y * c.gain / c.packet_bits;
    let mut order: Vec<usize> = (0..rt.len()).collect();
    order.sort_by(|&a, &b| {
        key(&rt[b])
            .total_cmp(&key(&rt[a]))
            .then(rt[a].user.cmp(&rt[b].user))
    });
    order
}

pub fn schedule_hetero<R: Rng + ?Sized>(
    view: &EligibleSlotView,
    rng: &mut R,
) -> Result<SlotDecision> {
    let order = heterogeneous_order(&view.rt);
    let nrt = select_nrt(view, rng);
    let mut best = BestSet::default();
    for n in 0..=order.len() {
        best.offer(evaluate_set(view, &order[..n], nrt.as_ref())?);
    }
    Ok(best.into_decision(view))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::view;
    use super::super::schedule_exhaustive;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn order_uses_value_per_bit() {
        let mut v = view(&[(4.0, 1.0), (3.0, 2.0), (4.0, 1.0)], &[], 1.0);
        v.rt[0].packet_bits = 2.0;
        // keys: 2, 6, 4
        assert_eq!(heterogeneous_order(&v.rt), vec![1, 2, 0]);
    }

    #[test]
    fn evaluates_linear_number_of_sets() {
        let v = view(&[(1.0, 1.0); 6], &[(1.0, 1.0)], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(schedule_hetero(&v, &mut rng).unwrap().sets_evaluated, 7);
    }

    #[test]
    fn never_beats_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let n = rng.gen_range(0..6);
            let rt: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.0..8.0), rng.gen_range(0.2..4.0)))
                .collect();
            let mut v = view(&rt, &[(rng.gen_range(0.0..10.0), 1.0)], 1.0);
            for c in &mut v.rt {
                c.packet_bits = rng.gen_range(0.2..1.5);
            }
            let seed = rng.gen();
            let h = schedule_hetero(&v, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let e = schedule_exhaustive(&v, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(h.objective <= e.objective + 1e-9 * e.objective.abs().max(1.0));
        }
    }
}
