//! Seeded arrival, packet-length and channel-gain generators.
//!
//! Every (purpose, user class, user) triple owns its own ChaCha stream, so a
//! run with more users replays the streams of a run with fewer, and two
//! schedulers fed the same seed see identical traffic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel power-gain model, i.i.d. across users and slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelModel {
    /// Gain 1 with probability `p_on`, else 0.
    OnOff {
        #[serde(default = "one")]
        p_on: f64,
    },
    /// Exponential power gain with mean `mean_gain`, truncated at `gamma_max`.
    Rayleigh {
        #[serde(default = "one")]
        mean_gain: f64,
        #[serde(default = "default_gamma_max")]
        gamma_max: f64,
    },
    /// Finite state set with probabilities.
    Discrete { states: Vec<f64>, probs: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

fn default_gamma_max() -> f64 {
    50.0
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel::OnOff { p_on: 1.0 }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            ChannelModel::OnOff { p_on } => {
                if !(0.0..=1.0).contains(p_on) {
                    return Err(Error::config("channel.p_on", "must lie in [0, 1]"));
                }
            }
            ChannelModel::Rayleigh {
                mean_gain,
                gamma_max,
            } => {
                if !(*mean_gain > 0.0 && mean_gain.is_finite()) {
                    return Err(Error::config("channel.mean_gain", "must be positive"));
                }
                if !(*gamma_max > 0.0 && gamma_max.is_finite()) {
                    return Err(Error::config(
                        "channel.gamma_max",
                        "must be positive and finite",
                    ));
                }
            }
            ChannelModel::Discrete { states, probs } => {
                if states.is_empty() || states.len() != probs.len() {
                    return Err(Error::config(
                        "channel.probs",
                        "needs one probability per state",
                    ));
                }
                if states.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
                    return Err(Error::config("channel.states", "gains must be finite and >= 0"));
                }
                if probs.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::config("channel.probs", "must be non-negative"));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::config(
                        "channel.probs",
                        format!("sum to {total}, expected 1"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Largest gain the model can emit.
    pub fn gamma_max(&self) -> f64 {
        match self {
            ChannelModel::OnOff { .. } => 1.0,
            ChannelModel::Rayleigh { gamma_max, .. } => *gamma_max,
            ChannelModel::Discrete { states, .. } => states.iter().cloned().fold(0.0, f64::max),
        }
    }

    pub fn is_on_off(&self) -> bool {
        match self {
            ChannelModel::OnOff { .. } => true,
            ChannelModel::Discrete { states, .. } => states.iter().all(|&g| g == 0.0 || g == 1.0),
            ChannelModel::Rayleigh { .. } => false,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ChannelModel::OnOff { p_on } => {
                if rng.gen::<f64>() < *p_on {
                    1.0
                } else {
                    0.0
                }
            }
            ChannelModel::Rayleigh {
                mean_gain,
                gamma_max,
            } => {
                // inverse CDF of the exponential truncated to [0, gamma_max]
                let mass = -(-gamma_max / mean_gain).exp_m1();
                let u: f64 = rng.gen();
                -mean_gain * (-u * mass).ln_1p()
            }
            ChannelModel::Discrete { states, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (g, p) in states.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *g;
                    }
                }
                *states.last().unwrap()
            }
        }
    }
}

/// Packet length model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PacketModel {
    Fixed {
        #[serde(default = "one")]
        bits: f64,
    },
    /// All users share one length per slot, uniform on `[min, max]`.
    Homogeneous { min: f64, max: f64 },
    /// Each user draws its own length per slot, uniform on `[min, max]`.
    Heterogeneous { min: f64, max: f64 },
}

impl Default for PacketModel {
    fn default() -> Self {
        PacketModel::Fixed { bits: 1.0 }
    }
}

impl PacketModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            PacketModel::Fixed { bits } => {
                if !(*bits > 0.0 && bits.is_finite()) {
                    return Err(Error::config("packet.bits", "must be positive"));
                }
            }
            PacketModel::Homogeneous { min, max } | PacketModel::Heterogeneous { min, max } => {
                if !(*min > 0.0 && max >= min && max.is_finite()) {
                    return Err(Error::config("packet", "need 0 < min <= max"));
                }
            }
        }
        Ok(())
    }

    /// Nominal (mean) packet length.
    pub fn mean_bits(&self) -> f64 {
        match self {
            PacketModel::Fixed { bits } => *bits,
            PacketModel::Homogeneous { min, max } | PacketModel::Heterogeneous { min, max } => {
                0.5 * (min + max)
            }
        }
    }

    pub fn max_bits(&self) -> f64 {
        match self {
            PacketModel::Fixed { bits } => *bits,
            PacketModel::Homogeneous { max, .. } | PacketModel::Heterogeneous { max, .. } => *max,
        }
    }

    pub fn is_heterogeneous(&self) -> bool {
        matches!(self, PacketModel::Heterogeneous { .. })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            PacketModel::Fixed { bits } => *bits,
            PacketModel::Homogeneous { min, max } | PacketModel::Heterogeneous { min, max } => {
                if max > min {
                    rng.gen_range(*min..=*max)
                } else {
                    *min
                }
            }
        }
    }
}

/// Arrival rates (Bernoulli, packets per slot) and packet lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficModel {
    pub lambda: Vec<f64>,
    pub packet: PacketModel,
}

/// Independent Bernoulli(lambda_i) arrivals from a single generator.
pub fn draw_arrivals<R: Rng + ?Sized>(rng: &mut R, traffic: &TrafficModel, n_users: usize) -> Vec<bool> {
    (0..n_users)
        .map(|i| bernoulli(rng, traffic.lambda[i]))
        .collect()
}

/// I.i.d. gains from a single generator.
pub fn draw_gains<R: Rng + ?Sized>(rng: &mut R, model: &ChannelModel, n_users: usize) -> Vec<f64> {
    (0..n_users).map(|_| model.sample(rng)).collect()
}

#[inline]
fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    if p >= 1.0 {
        // keep stream alignment: always consume one draw
        let _: f64 = rng.gen();
        true
    } else {
        rng.gen::<f64>() < p
    }
}

/// Stream purposes; part of the stream id.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum StreamPurpose {
    Arrival = 1,
    Gain = 2,
    PacketBits = 3,
    Scheduler = 4,
}

/// Opens stream `user` of `purpose` within user class `class` (0 = RT, 1 = NRT).
pub fn stream(seed: u64, purpose: StreamPurpose, class: u64, user: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) | (class << 32) | user);
    rng
}

/// Realisation of one slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotDraw {
    pub rt_arrivals: Vec<bool>,
    pub nrt_arrivals: Vec<bool>,
    pub rt_gains: Vec<f64>,
    pub nrt_gains: Vec<f64>,
    pub rt_bits: Vec<f64>,
    pub nrt_bits: Vec<f64>,
}

struct UserStreams {
    arrival: ChaCha8Rng,
    gain: ChaCha8Rng,
    bits: ChaCha8Rng,
}

/// Per-user stream bundle driving one run.
pub struct TrafficGenerator {
    rt: Vec<UserStreams>,
    nrt: Vec<UserStreams>,
    shared_bits: ChaCha8Rng,
    rt_lambda: Vec<f64>,
    nrt_lambda: Vec<f64>,
    channel: ChannelModel,
    packet: PacketModel,
}

impl TrafficGenerator {
    pub fn new(
        seed: u64,
        rt_lambda: Vec<f64>,
        nrt_lambda: Vec<f64>,
        channel: ChannelModel,
        packet: PacketModel,
    ) -> Self {
        let make = |class: u64, n: usize| -> Vec<UserStreams> {
            (0..n as u64)
                .map(|u| UserStreams {
                    arrival: stream(seed, StreamPurpose::Arrival, class, u),
                    gain: stream(seed, StreamPurpose::Gain, class, u),
                    bits: stream(seed, StreamPurpose::PacketBits, class, u),
                })
                .collect()
        };
        Self {
            rt: make(0, rt_lambda.len()),
            nrt: make(1, nrt_lambda.len()),
            shared_bits: stream(seed, StreamPurpose::PacketBits, 2, 0),
            rt_lambda,
            nrt_lambda,
            channel,
            packet,
        }
    }

    /// Draws the next slot into `out`, reusing its buffers.
    pub fn next_slot(&mut self, out: &mut SlotDraw) {
        let shared = match self.packet {
            PacketModel::Homogeneous { .. } => Some(self.packet.sample(&mut self.shared_bits)),
            _ => None,
        };
        let fill = |streams: &mut [UserStreams],
                    lambda: &[f64],
                    arrivals: &mut Vec<bool>,
                    gains: &mut Vec<f64>,
                    bits: &mut Vec<f64>,
                    channel: &ChannelModel,
                    packet: &PacketModel| {
            arrivals.clear();
            gains.clear();
            bits.clear();
            for (s, &lam) in streams.iter_mut().zip(lambda) {
                arrivals.push(bernoulli(&mut s.arrival, lam));
                gains.push(channel.sample(&mut s.gain));
                bits.push(match shared {
                    Some(b) => b,
                    None => packet.sample(&mut s.bits),
                });
            }
        };
        fill(
            &mut self.rt,
            &self.rt_lambda,
            &mut out.rt_arrivals,
            &mut out.rt_gains,
            &mut out.rt_bits,
            &self.channel,
            &self.packet,
        );
        fill(
            &mut self.nrt,
            &self.nrt_lambda,
            &mut out.nrt_arrivals,
            &mut out.nrt_gains,
            &mut out.nrt_bits,
            &self.channel,
            &self.packet,
        );
    }
}
