//! Closed-form scheduler for unit-gain on-off channels.
//!
//! With every connected user at gain 1, all scheduled RT users share one
//! power, so only the prefixes of the users sorted by `Y` can be optimal.

use rand::Rng;

use super::{assemble, select_nrt, BestSet, EligibleSlotView, NrtChoice, SlotDecision};
use crate::error::{Error, Result};
use crate::kernels::{lambert_point, rate};

/// Indices into `view.rt` sorted by `Y` descending (ties by user id), and
/// the `N + 1` prefixes of that order, starting with the empty set.
pub fn candidate_prefixes(view: &EligibleSlotView) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..view.rt.len()).collect();
    order.sort_by(|&a, &b| {
        view.rt[b]
            .y
            .total_cmp(&view.rt[a].y)
            .then(view.rt[a].user.cmp(&view.rt[b].user))
    });
    (0..=order.len()).map(|n| order[..n].to_vec()).collect()
}

/// Shared power and rate for a unit-gain prefix, plus the multiplier.
/// `None` when the prefix does not fit even at `Pmax`.
fn prefix_point(
    view: &EligibleSlotView,
    bits: f64,
    nrt: Option<&NrtChoice>,
) -> Option<(f64, f64, f64)> {
    let ts = view.slot_len;
    let max_rate = rate(view.p_max, 1.0);
    if bits / max_rate > ts * (1.0 + 1e-12) {
        return None;
    }
    if view.x <= 0.0 {
        return Some((view.p_max, max_rate, 0.0));
    }
    let psi = nrt.map_or(0.0, |n| n.psi);
    let free = lambert_point(psi * ts / view.x, 1.0, view.p_max);
    if free.rate > 0.0 && bits / free.rate <= ts {
        return Some((free.power, free.rate, 0.0));
    }
    // the slot is exactly filled by the RT packets
    let r = (bits / ts).min(max_rate);
    let power = r.exp_m1().min(view.p_max);
    let phi_tilde = (r - 1.0) * r.exp() + 1.0;
    let phi = (phi_tilde * view.x / ts - psi).max(0.0);
    Some((power, r, phi))
}

pub fn schedule_onoff<R: Rng + ?Sized>(
    view: &EligibleSlotView,
    rng: &mut R,
) -> Result<SlotDecision> {
    if let Some(c) = view.rt.iter().find(|c| (c.gain - 1.0).abs() > 1e-12) {
        return Err(Error::config(
            "scheduler",
            format!(
                "onoff needs unit gains, user {} has gain {}",
                c.user, c.gain
            ),
        ));
    }
    let nrt = select_nrt(view, rng);
    let mut best = BestSet::default();
    for prefix in candidate_prefixes(view) {
        if prefix.is_empty() {
            best.offer(Some(assemble(view, &prefix, &[], &[], 0.0, nrt.as_ref())));
            continue;
        }
        let bits: f64 = prefix.iter().map(|&i| view.rt[i].packet_bits).sum();
        let cand = prefix_point(view, bits, nrt.as_ref()).map(|(p, r, phi)| {
            let n = prefix.len();
            assemble(view, &prefix, &vec![p; n], &vec![r; n], phi, nrt.as_ref())
        });
        best.offer(cand);
    }
    Ok(best.into_decision(view))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::view;
    use super::super::{evaluate_set, schedule_exhaustive};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prefixes_follow_y_order() {
        let v = view(&[(1.0, 1.0), (3.0, 1.0), (2.0, 1.0), (3.0, 1.0)], &[], 1.0);
        let p = candidate_prefixes(&v);
        assert_eq!(p.len(), 5);
        assert_eq!(p[4], vec![1, 3, 2, 0]);
        assert!(p[0].is_empty());
    }

    #[test]
    fn closed_form_matches_general_solver() {
        let v = view(
            &[(5.0, 1.0), (2.0, 1.0), (0.5, 1.0)],
            &[(4.0, 1.0), (2.0, 1.0)],
            3.0,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nrt = select_nrt(&v, &mut rng);
        for prefix in candidate_prefixes(&v).into_iter().skip(1) {
            let bits: f64 = prefix.iter().map(|&i| v.rt[i].packet_bits).sum();
            let closed = prefix_point(&v, bits, nrt.as_ref());
            let general = evaluate_set(&v, &prefix, nrt.as_ref()).unwrap();
            match (closed, general) {
                (None, None) => {}
                (Some((p, _, phi)), Some(g)) => {
                    assert!((p - g.allocs[0].power).abs() < 1e-8, "{p} vs {:?}", g.allocs);
                    assert!((phi - g.phi).abs() < 1e-6 * phi.max(1.0));
                }
                (c, g) => panic!("mismatch {c:?} {}", g.is_some()),
            }
        }
    }

    #[test]
    fn matches_exhaustive_on_unit_gains() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n_rt = rng.gen_range(0..6);
            let rt: Vec<(f64, f64)> = (0..n_rt).map(|_| (rng.gen_range(0.0..10.0), 1.0)).collect();
            let nrt: Vec<(f64, f64)> = (0..2).map(|_| (rng.gen_range(0.0..20.0), 1.0)).collect();
            let v = view(&rt, &nrt, rng.gen_range(0.0..5.0));
            let seed = rng.gen();
            let a = schedule_onoff(&v, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = schedule_exhaustive(&v, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let tol = 1e-9 * a.objective.abs().max(1.0);
            assert!((a.objective - b.objective).abs() <= tol, "{} vs {}", a.objective, b.objective);
        }
    }

    #[test]
    fn rejects_non_unit_gain() {
        let v = view(&[(1.0, 2.0)], &[], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(schedule_onoff(&v, &mut rng), Err(Error::Config { .. })));
    }

    #[test]
    fn worked_example_single_rt_no_nrt() {
        // one RT user, nobody else: power e - 1 fills the slot
        let v = view(&[(5.0, 1.0)], &[], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = schedule_onoff(&v, &mut rng).unwrap();
        assert_eq!(d.rt.len(), 1);
        assert!((d.rt[0].power - 1.718281828459045).abs() < 1e-12);
        assert!((d.objective - (5.0 - 1.718281828459045)).abs() < 1e-12);
    }
}
