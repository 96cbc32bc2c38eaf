//! Baseline: every scheduled user transmits at `Pmax`, a biased coin picks
//! between RT and NRT service each slot.

use rand::Rng;

use super::{per_slot_objective, EligibleSlotView, NrtAlloc, RtAlloc, SlotDecision};
use crate::kernels::rate;

fn rt_branch(view: &EligibleSlotView) -> Vec<RtAlloc> {
    let mut order: Vec<usize> = (0..view.rt.len()).collect();
    order.sort_by(|&a, &b| {
        view.rt[b]
            .y
            .total_cmp(&view.rt[a].y)
            .then(view.rt[a].user.cmp(&view.rt[b].user))
    });
    let mut used = 0.0;
    let mut out = Vec::new();
    for i in order {
        let c = &view.rt[i];
        let r = rate(view.p_max, c.gain);
        let d = c.packet_bits / r;
        if used + d > view.slot_len * (1.0 + 1e-12) {
            break;
        }
        used += d;
        out.push(RtAlloc {
            user: c.user,
            power: view.p_max,
            duration: d,
            rate: r,
            packet_bits: c.packet_bits,
        });
    }
    out
}

fn nrt_branch(view: &EligibleSlotView) -> Option<NrtAlloc> {
    let mut best: Option<&super::NrtCandidate> = None;
    for u in view.nrt.iter().filter(|u| u.gain > 0.0 && u.queue > 0.0) {
        if best.is_none_or(|b| u.queue > b.queue) {
            best = Some(u);
        }
    }
    best.map(|u| NrtAlloc {
        user: u.user,
        power: view.p_max,
        duration: view.slot_len,
        rate: rate(view.p_max, u.gain),
    })
}

/// `coin_bias` is the probability of the RT branch. A branch with nobody to
/// serve falls through to the other one.
pub fn schedule_fixedp<R: Rng + ?Sized>(
    view: &EligibleSlotView,
    rng: &mut R,
    coin_bias: f64,
) -> SlotDecision {
    let rt_first = rng.gen::<f64>() < coin_bias;
    let mut d = SlotDecision {
        rt: Vec::new(),
        nrt: None,
        admissions: view.admissions(),
        phi: 0.0,
        objective: 0.0,
        sets_evaluated: 1,
        fell_through: false,
    };
    if rt_first {
        d.rt = rt_branch(view);
        if d.rt.is_empty() {
            d.nrt = nrt_branch(view);
            d.fell_through = d.nrt.is_some();
        }
    } else {
        d.nrt = nrt_branch(view);
        if d.nrt.is_none() {
            d.rt = rt_branch(view);
            d.fell_through = !d.rt.is_empty();
        }
    }
    if d.fell_through {
        log::debug!("fixedp: chosen branch empty, serving the other one");
    }
    d.objective = per_slot_objective(&d, view);
    d
}

#[cfg(test)]
mod tests {
    use super::super::testutil::view;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rt_branch_packs_three_unit_packets() {
        let v = view(&[(1.0, 1.0); 5], &[], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = schedule_fixedp(&v, &mut rng, 1.0);
        assert_eq!(d.rt.len(), 3);
        assert!((d.rt[0].duration - 1.0 / 21f64.ln()).abs() < 1e-15);
        assert!(d.total_duration() <= 1.0);
    }

    #[test]
    fn nrt_branch_takes_whole_slot() {
        let v = view(&[(1.0, 1.0)], &[(3.0, 1.0), (9.0, 1.0)], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = schedule_fixedp(&v, &mut rng, 0.0);
        let n = d.nrt.unwrap();
        assert_eq!(n.user, 1);
        assert_eq!(n.duration, 1.0);
        assert_eq!(n.power, 20.0);
        assert!(d.rt.is_empty());
    }

    #[test]
    fn zero_bias_never_serves_rt_when_nrt_available() {
        let v = view(&[(5.0, 1.0)], &[(1.0, 1.0)], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            assert!(schedule_fixedp(&v, &mut rng, 0.0).rt.is_empty());
        }
    }

    #[test]
    fn falls_through_on_empty_branch() {
        let v = view(&[], &[(2.0, 1.0)], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = schedule_fixedp(&v, &mut rng, 1.0);
        assert!(d.fell_through);
        assert!(d.nrt.is_some());
    }
}
