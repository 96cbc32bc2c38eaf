//! Numerical kernels: the principal Lambert-W branch, channel rate, the
//! water-filling rule for non-real-time users, the Lambert rule for real-time
//! users, and the bisection on the slot-budget multiplier.
//!
//! Rates are in nats per second (natural log). Every function here is pure.

use std::f64::consts::E;

use crate::error::{Error, Result};

/// `-1/e`, the branch point of W.
pub const BRANCH_POINT: f64 = -1.0 / E;

const W0_DOMAIN_SLACK: f64 = 1e-12;
const W0_MAX_ITER: usize = 50;

/// Principal branch `W0(z)` of the Lambert W function, i.e. the `w >= -1`
/// solving `w * exp(w) = z`.
///
/// Halley iteration started from a piecewise guess: a branch-point series
/// near `-1/e`, `ln(1 + z)` for moderate arguments and the two-term
/// asymptotic expansion for large ones.
pub fn lambert_w0(z: f64) -> Result<f64> {
    if !z.is_finite() || z < BRANCH_POINT - W0_DOMAIN_SLACK {
        return Err(Error::Domain {
            op: "lambert_w0",
            arg: "z",
            value: z,
        });
    }
    if z <= BRANCH_POINT {
        return Ok(-1.0);
    }
    if z == 0.0 {
        return Ok(0.0);
    }

    let mut w = if z < -0.25 {
        let p = (2.0 * (E * z + 1.0)).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if z < 3.0 {
        z.ln_1p()
    } else {
        let l1 = z.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };

    let tol = 1e-12 * z.abs().max(1.0);
    for _ in 0..W0_MAX_ITER {
        let ew = w.exp();
        let f = w * ew - z;
        if f.abs() <= tol {
            break;
        }
        let wp1 = w + 1.0;
        if wp1 <= 0.0 {
            // overshot the branch point
            w = -1.0 + 1e-8;
            continue;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if w < -1.0 {
            w = -1.0;
        }
        if step.abs() <= 1e-15 * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

/// Channel rate `ln(1 + P * gamma)` in nats per second.
#[inline]
pub fn rate(power: f64, gain: f64) -> f64 {
    (power * gain).ln_1p()
}

/// Time needed to push `packet_bits` through a link running at `rate`.
pub fn rt_duration(packet_bits: f64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::ZeroRate);
    }
    Ok(packet_bits / rate)
}

/// Inputs shared by the per-user power rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPolicyInput {
    /// Queue backlog `Q` in bits.
    pub queue_weight: f64,
    /// Power virtual queue `X`.
    pub power_price: f64,
    /// Channel power gain.
    pub gain: f64,
    pub p_max: f64,
    /// Slot length in seconds.
    pub slot_len: f64,
    pub packet_bits: f64,
}

impl PowerPolicyInput {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("queue_weight", self.queue_weight, false),
            ("power_price", self.power_price, false),
            ("gain", self.gain, false),
            ("p_max", self.p_max, true),
            ("slot_len", self.slot_len, true),
            ("packet_bits", self.packet_bits, true),
        ];
        for (name, v, strict) in fields {
            let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
            if !ok {
                return Err(Error::Domain {
                    op: "PowerPolicyInput",
                    arg: name,
                    value: v,
                });
            }
        }
        Ok(())
    }
}

/// Water-filling power for a non-real-time user:
/// `min((Ts * Q / X - 1 / gamma)^+, Pmax)`.
///
/// This is the exact maximiser of `Q * ln(1 + P gamma) - X * P / Ts` over
/// `[0, Pmax]`. A zero power price saturates at `Pmax`.
pub fn waterfilling_power(input: &PowerPolicyInput) -> f64 {
    if input.gain <= 0.0 || input.queue_weight <= 0.0 {
        return 0.0;
    }
    if input.power_price <= 0.0 {
        log::trace!("zero power price, water-filling saturates at p_max");
        return input.p_max;
    }
    let level = input.slot_len * input.queue_weight / input.power_price - 1.0 / input.gain;
    level.max(0.0).min(input.p_max)
}

/// Per-second value `Q * R - X * P / Ts` of giving the slot to a
/// non-real-time user at power `power`.
#[inline]
pub fn psi_nr(input: &PowerPolicyInput, power: f64) -> f64 {
    input.queue_weight * rate(power, input.gain) - input.power_price * power / input.slot_len
}

/// Optimal non-real-time value: `psi_nr` at the water-filling power.
/// Returns `(power, value)`.
pub fn psi_nr_star(input: &PowerPolicyInput) -> (f64, f64) {
    let p = waterfilling_power(input);
    if p == 0.0 {
        return (0.0, 0.0);
    }
    (p, psi_nr(input, p))
}

/// Power and rate produced by the Lambert rule for one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambertPoint {
    pub power: f64,
    pub rate: f64,
    pub clipped: bool,
}

/// Lambert rule with clipping. With `u = phi_tilde * gain` and
/// `w = W0((u - 1) / e)` the unclipped optimum has `1 + P gamma = e^(1 + w)`,
/// so the rate is simply `1 + w`. `u <= 0` gives zero power.
pub fn lambert_point(phi_tilde: f64, gain: f64, p_max: f64) -> LambertPoint {
    let u = phi_tilde * gain;
    if !(u > 0.0) || gain <= 0.0 {
        return LambertPoint {
            power: 0.0,
            rate: 0.0,
            clipped: false,
        };
    }
    let max_rate = rate(p_max, gain);
    if u.is_infinite() {
        return LambertPoint {
            power: p_max,
            rate: max_rate,
            clipped: true,
        };
    }
    // argument is > -1/e because u > 0
    let w = lambert_w0((u - 1.0) / E).unwrap_or(-1.0);
    let r = 1.0 + w;
    if r >= max_rate {
        LambertPoint {
            power: p_max,
            rate: max_rate,
            clipped: true,
        }
    } else {
        LambertPoint {
            power: r.exp_m1() / gain,
            rate: r,
            clipped: false,
        }
    }
}

/// Lambert power for a real-time user,
/// `min((1/gamma) * [(u - 1) / W0((u - 1)/e) - 1], Pmax)` with `u = phi_tilde * gamma`,
/// taking the analytic limit `(e - 1)/gamma` at `u = 1`.
pub fn lambert_rt_power(phi_tilde: f64, gain: f64, p_max: f64) -> f64 {
    lambert_point(phi_tilde, gain, p_max).power
}

/// Residual of the stationarity condition
/// `ln(1 + P gamma) - 1 - (u - 1)/(1 + P gamma)` for an unclipped Lambert power.
pub fn lambert_fixed_point_residual(phi_tilde: f64, gain: f64, power: f64) -> f64 {
    let s = 1.0 + power * gain;
    s.ln() - 1.0 - (phi_tilde * gain - 1.0) / s
}

/// Power for a lone scheduled real-time user: `min((e^(L/Ts) - 1)/gamma, Pmax)`.
pub fn single_rt_power(packet_bits: f64, slot_len: f64, gain: f64, p_max: f64) -> f64 {
    if gain.is_infinite() {
        return 0.0;
    }
    ((packet_bits / slot_len).exp_m1() / gain).min(p_max)
}

/// Equal power that makes `n` unit-gain real-time packets fill the slot
/// exactly: `exp(n L / Ts) - 1`.
pub fn rt_only_power(n_scheduled: usize, packet_bits: f64, slot_len: f64) -> Result<f64> {
    if n_scheduled == 0 {
        return Err(Error::Domain {
            op: "rt_only_power",
            arg: "n_scheduled",
            value: 0.0,
        });
    }
    Ok((n_scheduled as f64 * packet_bits / slot_len).exp_m1())
}

/// One real-time user as seen by [`solve_phi`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtLink {
    pub gain: f64,
    pub packet_bits: f64,
}

/// Multiplier and per-user allocation for one real-time set.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiSolution {
    pub phi: f64,
    pub powers: Vec<f64>,
    pub durations: Vec<f64>,
    pub rates: Vec<f64>,
    /// Slot time left for the non-real-time user, `Ts - sum(durations)`.
    pub residual: f64,
}

impl PhiSolution {
    pub fn total_duration(&self) -> f64 {
        self.durations.iter().sum()
    }
}

const PHI_MAX_ITER: usize = 200;
const PHI_REL_TOL: f64 = 1e-12;

/// Finds the slot-budget multiplier `phi` for a fixed real-time set and
/// returns the induced Lambert powers.
///
/// `phi = 0` is kept whenever the set fits with time to spare. Otherwise the
/// duration sum, which decreases in `phi`, is bisected until it meets `Ts`;
/// the returned point always satisfies `sum(durations) <= Ts`.
pub fn solve_phi(
    rt: &[RtLink],
    power_price: f64,
    psi_nr_star: f64,
    slot_len: f64,
    p_max: f64,
) -> Result<PhiSolution> {
    if rt.is_empty() {
        return Err(Error::Domain {
            op: "solve_phi",
            arg: "rt_set.len",
            value: 0.0,
        });
    }
    for link in rt {
        if !(link.gain > 0.0) || !link.gain.is_finite() {
            return Err(Error::Domain {
                op: "solve_phi",
                arg: "gain",
                value: link.gain,
            });
        }
        if !(link.packet_bits > 0.0) {
            return Err(Error::Domain {
                op: "solve_phi",
                arg: "packet_bits",
                value: link.packet_bits,
            });
        }
    }
    let psi = psi_nr_star.max(0.0);

    let fastest: f64 = rt
        .iter()
        .map(|l| l.packet_bits / rate(p_max, l.gain))
        .sum();
    if fastest > slot_len * (1.0 + PHI_REL_TOL) {
        return Err(Error::InfeasibleSet { size: rt.len() });
    }

    let points = |t: f64| -> Vec<LambertPoint> {
        rt.iter().map(|l| lambert_point(t, l.gain, p_max)).collect()
    };
    let total = |pts: &[LambertPoint]| -> f64 {
        rt.iter()
            .zip(pts)
            .map(|(l, p)| {
                if p.rate > 0.0 {
                    l.packet_bits / p.rate
                } else {
                    f64::INFINITY
                }
            })
            .sum()
    };

    let finish = |phi: f64, pts: Vec<LambertPoint>| -> PhiSolution {
        let durations: Vec<f64> = rt
            .iter()
            .zip(&pts)
            .map(|(l, p)| l.packet_bits / p.rate)
            .collect();
        let residual = slot_len - durations.iter().sum::<f64>();
        PhiSolution {
            phi,
            powers: pts.iter().map(|p| p.power).collect(),
            rates: pts.iter().map(|p| p.rate).collect(),
            durations,
            residual,
        }
    };

    if power_price <= 0.0 {
        // energy is free: run everyone flat out
        return Ok(finish(0.0, points(f64::INFINITY)));
    }

    let to_tilde = |phi: f64| (psi + phi) * slot_len / power_price;
    let t0 = to_tilde(0.0);
    let pts0 = points(t0);
    if total(&pts0) <= slot_len {
        return Ok(finish(0.0, pts0));
    }

    // Upper bracket: the larger of the closed-form bound and the value at
    // which every user is clipped at Pmax.
    let bits: f64 = rt.iter().map(|l| l.packet_bits).sum();
    let a = bits / slot_len;
    let bound_tilde = a.exp() * bits * p_max / a.exp_m1();
    let clip_tilde = rt
        .iter()
        .map(|l| {
            let r = rate(p_max, l.gain);
            ((r - 1.0) * r.exp() + 1.0) / l.gain
        })
        .fold(0.0, f64::max);
    let mut hi = bound_tilde.max(clip_tilde).max(t0);
    let mut pts_hi = points(hi);
    let mut guard = 0;
    while total(&pts_hi) > slot_len && guard < 64 {
        hi *= 2.0;
        pts_hi = points(hi);
        guard += 1;
    }
    if total(&pts_hi) > slot_len {
        // only reachable when the all-Pmax duration sits within rounding of Ts
        pts_hi = points(f64::INFINITY);
    }
    let mut lo = t0;
    for _ in 0..PHI_MAX_ITER {
        if slot_len - total(&pts_hi) <= PHI_REL_TOL * slot_len {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let pts_mid = points(mid);
        if total(&pts_mid) > slot_len {
            lo = mid;
        } else {
            hi = mid;
            pts_hi = pts_mid;
        }
    }
    let phi = (hi * power_price / slot_len - psi).max(0.0);
    Ok(finish(phi, pts_hi))
}
