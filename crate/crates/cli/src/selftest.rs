//! Fast numerical checks printed as PASS/FAIL lines.

use dlsched::kernels::{lambert_w0, psi_nr_star, solve_phi, PowerPolicyInput, RtLink};
use dlsched::region::{max_scaling, RegionQuery};
use dlsched::sched::{schedule_exhaustive, schedule_onoff, EligibleSlotView, NrtCandidate, RtCandidate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(name: &str, ok: bool) -> bool {
    println!("{} {name}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn lambert() -> bool {
    let omega = 0.567_143_290_409_783_8;
    lambert_w0(1.0).is_ok_and(|w| (w - omega).abs() < 1e-14)
}

fn waterfilling() -> bool {
    let (p, v) = psi_nr_star(&PowerPolicyInput {
        queue_weight: 15.0,
        power_price: 1.0,
        gain: 1.0,
        p_max: 20.0,
        slot_len: 1.0,
        packet_bits: 1.0,
    });
    p == 14.0 && (v - (15.0 * 15f64.ln() - 14.0)).abs() < 1e-12
}

fn budget() -> bool {
    let links = vec![
        RtLink {
            gain: 1.0,
            packet_bits: 1.0,
        };
        2
    ];
    solve_phi(&links, 1.0, 0.0, 1.0, 20.0)
        .is_ok_and(|s| s.residual.abs() < 1e-9 && (s.powers[0] - 2f64.exp_m1()).abs() < 1e-6)
}

fn onoff_oracle() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..200).all(|_| {
        let n_rt = rng.gen_range(0..8);
        let view = EligibleSlotView {
            rt: (0..n_rt)
                .map(|user| RtCandidate {
                    user,
                    y: rng.gen_range(0.0..10.0),
                    gain: 1.0,
                    packet_bits: 1.0,
                })
                .collect(),
            nrt: (0..3)
                .map(|user| NrtCandidate {
                    user,
                    queue: rng.gen_range(0.0..20.0),
                    gain: 1.0,
                    arrival: false,
                })
                .collect(),
            x: rng.gen_range(0.0..5.0),
            slot_len: 1.0,
            p_max: 20.0,
            b_max: 1e4,
            admit_all: false,
        };
        let seed = rng.gen();
        let a = schedule_onoff(&view, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = schedule_exhaustive(&view, &mut ChaCha8Rng::seed_from_u64(seed));
        match (a, b) {
            (Ok(a), Ok(b)) => (a.objective - b.objective).abs() <= 1e-9 * b.objective.abs().max(1.0),
            _ => false,
        }
    })
}

fn region() -> bool {
    let q = RegionQuery {
        lambda_nrt: vec![1.0],
        lambda_rt: vec![],
        q: vec![],
        packet_bits: 1.0,
        slot_len: 1.0,
        p_avg: 20.0,
        p_max: 20.0,
        states: vec![1.0],
        probs: vec![1.0],
        grid_levels: 64,
    };
    max_scaling(&q).is_ok_and(|t| t.is_some_and(|t| (t - 21f64.ln()).abs() < 1e-6))
}

pub fn run_all() -> bool {
    let results = [
        check("lambert_w0(1) = omega", lambert()),
        check("water-filling power and value", waterfilling()),
        check("two-packet slot budget", budget()),
        check("onoff matches exhaustive on 200 slots", onoff_oracle()),
        check("single-state region boundary", region()),
    ];
    results.iter().all(|&ok| ok)
}
