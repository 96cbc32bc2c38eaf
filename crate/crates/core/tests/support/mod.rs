//! Random slot views and small helpers shared by the integration tests.
#![allow(dead_code)]

use dlsched::sched::{EligibleSlotView, NrtCandidate, RtCandidate, SlotDecision};
use dlsched::ChannelModel;
use rand::Rng;

/// Unit-gain RT users with random (sometimes tied) `Y`, a few NRT users.
pub fn onoff_view<R: Rng>(rng: &mut R, max_rt: usize) -> EligibleSlotView {
    let n_rt = rng.gen_range(0..=max_rt);
    let rt = (0..n_rt)
        .map(|user| {
            let y: f64 = rng.gen_range(0.0..10.0);
            RtCandidate {
                user,
                // round some values so that ties occur
                y: if rng.gen_bool(0.3) { y.round() } else { y },
                gain: 1.0,
                packet_bits: 1.0,
            }
        })
        .collect();
    EligibleSlotView {
        rt,
        nrt: nrt_users(rng, |r| if r.gen_bool(0.8) { 1.0 } else { 0.0 }),
        x: rng.gen_range(0.0..6.0),
        slot_len: 1.0,
        p_max: 20.0,
        b_max: 1e4,
        admit_all: false,
    }
}

/// Rayleigh gains for every user.
pub fn rayleigh_view<R: Rng>(rng: &mut R, max_rt: usize) -> EligibleSlotView {
    let channel = ChannelModel::Rayleigh {
        mean_gain: 1.0,
        gamma_max: 50.0,
    };
    let n_rt = rng.gen_range(0..=max_rt);
    let slot_len = if rng.gen_bool(0.5) { 1.0 } else { 5.0 };
    let rt = (0..n_rt)
        .map(|user| RtCandidate {
            user,
            y: rng.gen_range(0.0..10.0),
            gain: channel.sample(rng).max(1e-6),
            packet_bits: 1.0,
        })
        .collect();
    EligibleSlotView {
        rt,
        nrt: nrt_users(rng, |r| channel.sample(r)),
        x: rng.gen_range(0.0..20.0),
        slot_len,
        p_max: 20.0,
        b_max: 100.0,
        admit_all: false,
    }
}

fn nrt_users<R: Rng>(rng: &mut R, mut gain: impl FnMut(&mut R) -> f64) -> Vec<NrtCandidate> {
    let n = rng.gen_range(0..=4);
    (0..n)
        .map(|user| NrtCandidate {
            user,
            queue: rng.gen_range(0.0..30.0),
            gain: gain(rng),
            arrival: rng.gen_bool(0.5),
        })
        .collect()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Checks slot budget and full-packet delivery on one decision; returns
/// the number of broken invariants.
pub fn decision_violations(view: &EligibleSlotView, d: &SlotDecision) -> u64 {
    let mut bad = 0;
    if d.total_duration() > view.slot_len + 1e-9 {
        bad += 1;
    }
    for a in &d.rt {
        if (a.duration * a.rate - a.packet_bits).abs() > 1e-9 * a.packet_bits {
            bad += 1;
        }
        if !(0.0..=view.p_max).contains(&a.power) {
            bad += 1;
        }
    }
    if let Some(n) = &d.nrt {
        if !(0.0..=view.p_max).contains(&n.power) {
            bad += 1;
        }
    }
    bad
}
