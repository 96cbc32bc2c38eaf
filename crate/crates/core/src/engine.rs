//! Slot loop: traffic -> scheduler -> service -> queue updates -> metrics.

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::kernels::rate;
use crate::queues::{
    update_data_queue, update_virtual_x, update_virtual_y, MetricsTrace, QueueState, SlotOutcome,
};
use crate::sched::{EligibleSlotView, NrtCandidate, RtCandidate, SchedulerKind, SlotDecision};
use crate::traffic::{stream, SlotDraw, StreamPurpose, TrafficGenerator};

pub use crate::sched::per_slot_objective;

/// Tolerance for the slot-budget and deadline checks.
pub const BUDGET_TOL: f64 = 1e-9;
/// Relative slack on the average-power constraint flag.
pub const POWER_SLACK: f64 = 0.02;
/// Absolute slack on each delivery-ratio target.
pub const QOS_SLACK: f64 = 0.02;
/// Threshold on `X(K)/K` and `Y_i(K)/K`.
pub const STABILITY_EPS: f64 = 1e-3;

/// Hook called after every slot.
pub trait SlotObserver {
    fn on_slot(
        &mut self,
        _slot: u64,
        _view: &EligibleSlotView,
        _decision: &SlotDecision,
        _after: &QueueState,
    ) -> Result<()> {
        Ok(())
    }
}

impl SlotObserver for () {}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub slots: u64,
    pub sum_throughput: f64,
    pub served_rate: Vec<f64>,
    pub admitted_avg: Vec<f64>,
    pub delivery_ratio: Vec<f64>,
    pub min_delivery_ratio: f64,
    pub avg_power: f64,
    pub mean_queue: Vec<f64>,
    pub mean_sets_evaluated: f64,
    pub x_stability: f64,
    pub y_stability: Vec<f64>,
    pub power_ok: bool,
    pub qos_ok: bool,
    pub stability_ok: bool,
    /// Drift-bound constant `C`.
    pub gap_constant: f64,
    /// `C / (L * Bmax)`.
    pub gap_bound: f64,
    pub budget_violations: u64,
    pub deadline_violations: u64,
    pub power_range_violations: u64,
    pub idle_slots: u64,
    pub fell_through_slots: u64,
    /// Metrics rows, see [`MetricsTrace::CSV_HEADER`].
    #[serde(skip)]
    pub samples: Vec<String>,
}

impl RunReport {
    pub fn constraints_ok(&self) -> bool {
        self.power_ok && self.qos_ok && self.stability_ok
    }

    pub fn invariant_violations(&self) -> u64 {
        self.budget_violations + self.deadline_violations + self.power_range_violations
    }

    pub fn write_json(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn write_metrics_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", MetricsTrace::CSV_HEADER)?;
        for row in &self.samples {
            writeln!(w, "{row}")?;
        }
        Ok(())
    }
}

/// `C = [sum(q_i^2 + 1) + Pmax^2 + Pavg^2 + N_NR (L^2 + Ts^2 Rmax^2)] / 2`
/// with `Rmax = ln(1 + Pmax * gamma_max)`.
pub fn gap_constant(cfg: &SystemConfig) -> Result<f64> {
    let q = cfg.q_targets()?;
    let rt: f64 = q.iter().map(|q| q * q + 1.0).sum();
    let l = cfg.packet.max_bits();
    let r_max = rate(cfg.p_max, cfg.channel.gamma_max());
    let nrt = cfg.n_nrt as f64 * (l * l + cfg.slot_len * cfg.slot_len * r_max * r_max);
    Ok(0.5 * (rt + cfg.p_max * cfg.p_max + cfg.p_avg * cfg.p_avg + nrt))
}

/// Runs a config to completion.
pub fn run(cfg: &SystemConfig) -> Result<RunReport> {
    run_with_observer(cfg, &mut ())
}

pub fn run_with_observer<O: SlotObserver + ?Sized>(
    cfg: &SystemConfig,
    observer: &mut O,
) -> Result<RunReport> {
    let mut sim = Simulation::new(cfg)?;
    for _ in 0..cfg.horizon {
        sim.step(observer)?;
    }
    sim.finish()
}

/// A run in progress. Plain data; can be moved between threads.
pub struct Simulation {
    cfg: SystemConfig,
    traffic: TrafficGenerator,
    rng: ChaCha8Rng,
    q_targets: Vec<f64>,
    coin_bias: f64,
    state: QueueState,
    metrics: MetricsTrace,
    draw: SlotDraw,
    slot: u64,
    nominal_bits: f64,
    budget_violations: u64,
    deadline_violations: u64,
    power_range_violations: u64,
    idle_slots: u64,
    fell_through_slots: u64,
    samples: Vec<String>,
}

impl Simulation {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        cfg.validate()?;
        let nominal_bits = cfg.packet.mean_bits();
        Ok(Self {
            traffic: TrafficGenerator::new(
                cfg.seed,
                cfg.rt_lambda()?,
                cfg.nrt_lambda()?,
                cfg.channel.clone(),
                cfg.packet.clone(),
            ),
            rng: stream(cfg.seed, StreamPurpose::Scheduler, 0, 0),
            q_targets: cfg.q_targets()?,
            coin_bias: cfg.coin_bias()?,
            state: QueueState::new(cfg.n_rt, cfg.n_nrt),
            metrics: MetricsTrace::new(
                cfg.n_rt,
                cfg.n_nrt,
                cfg.slot_len,
                nominal_bits,
                cfg.burn_in,
            ),
            draw: SlotDraw::default(),
            slot: 0,
            nominal_bits,
            budget_violations: 0,
            deadline_violations: 0,
            power_range_violations: 0,
            idle_slots: 0,
            fell_through_slots: 0,
            samples: Vec::new(),
            cfg: cfg.clone(),
        })
    }

    pub fn state(&self) -> &QueueState {
        &self.state
    }

    pub fn metrics(&self) -> &MetricsTrace {
        &self.metrics
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Scheduler input for the current draw.
    fn view(&self) -> EligibleSlotView {
        let d = &self.draw;
        let rt = (0..self.cfg.n_rt)
            .filter(|&i| d.rt_arrivals[i] && d.rt_gains[i] > 0.0)
            .map(|i| RtCandidate {
                user: i,
                y: self.state.y_q[i],
                gain: d.rt_gains[i],
                packet_bits: d.rt_bits[i],
            })
            .collect();
        let nrt = (0..self.cfg.n_nrt)
            .map(|i| {
                let q = self.state.data_q[i];
                NrtCandidate {
                    user: i,
                    // the heavy-traffic source never runs dry
                    queue: if self.cfg.heavy_traffic {
                        q.max(self.nominal_bits)
                    } else {
                        q
                    },
                    gain: d.nrt_gains[i],
                    arrival: d.nrt_arrivals[i],
                }
            })
            .collect();
        EligibleSlotView {
            rt,
            nrt,
            x: self.state.x_q,
            slot_len: self.cfg.slot_len,
            p_max: self.cfg.p_max,
            b_max: self.cfg.b_max,
            admit_all: self.cfg.admit_all,
        }
    }

    fn check_decision(&mut self, d: &SlotDecision) -> Result<()> {
        let finite = d.objective.is_finite()
            && d.phi.is_finite()
            && d.rt
                .iter()
                .all(|a| a.power.is_finite() && a.duration.is_finite())
            && d.nrt
                .is_none_or(|n| n.power.is_finite() && n.duration.is_finite());
        if !finite {
            return Err(Error::Numeric {
                slot: self.slot,
                what: "scheduler decision",
            });
        }
        if d.total_duration() > self.cfg.slot_len + BUDGET_TOL {
            self.budget_violations += 1;
        }
        for a in &d.rt {
            if (a.duration * a.rate - a.packet_bits).abs() > BUDGET_TOL * a.packet_bits {
                self.deadline_violations += 1;
            }
        }
        let powers = d.rt.iter().map(|a| a.power).chain(d.nrt.map(|n| n.power));
        for p in powers {
            if !(0.0..=self.cfg.p_max).contains(&p) {
                self.power_range_violations += 1;
            }
        }
        Ok(())
    }

    /// Advances one slot.
    pub fn step<O: SlotObserver + ?Sized>(&mut self, observer: &mut O) -> Result<()> {
        self.traffic.next_slot(&mut self.draw);
        let view = self.view();
        let decision = self
            .cfg
            .scheduler
            .decide(&view, &mut self.rng, self.coin_bias)?;
        self.check_decision(&decision)?;
        debug_assert!({
            let recomputed = per_slot_objective(&decision, &view);
            (recomputed - decision.objective).abs() <= 1e-7 * recomputed.abs().max(1.0)
        });
        if decision.rt.is_empty() && decision.nrt.is_none() {
            self.idle_slots += 1;
        }
        if decision.fell_through {
            self.fell_through_slots += 1;
        }

        let n_rt = self.cfg.n_rt;
        let n_nrt = self.cfg.n_nrt;
        let mut outcome = SlotOutcome {
            rt_arrivals: self.draw.rt_arrivals.clone(),
            rt_served: vec![false; n_rt],
            nrt_admitted: decision.admissions.clone(),
            nrt_delivered_bits: vec![0.0; n_nrt],
            slot_energy: decision.slot_energy(),
            sets_evaluated: decision.sets_evaluated,
        };
        for a in &decision.rt {
            outcome.rt_served[a.user] = true;
        }
        let mut served_bits = vec![0.0; n_nrt];
        if let Some(n) = decision.nrt {
            let capacity = n.duration * n.rate;
            served_bits[n.user] = capacity;
            outcome.nrt_delivered_bits[n.user] = if self.cfg.heavy_traffic {
                capacity
            } else {
                capacity.min(self.state.data_q[n.user])
            };
        }

        for i in 0..n_nrt {
            let admitted = if decision.admissions[i] {
                self.draw.nrt_bits[i]
            } else {
                0.0
            };
            self.state.data_q[i] = update_data_queue(self.state.data_q[i], admitted, served_bits[i]);
        }
        for i in 0..n_rt {
            self.state.y_q[i] = update_virtual_y(
                self.state.y_q[i],
                self.draw.rt_arrivals[i],
                self.q_targets[i],
                outcome.rt_served[i],
            );
        }
        self.state.x_q = update_virtual_x(
            self.state.x_q,
            outcome.slot_energy,
            self.cfg.slot_len,
            self.cfg.p_avg,
        );
        if !self.state.x_q.is_finite() {
            return Err(Error::Numeric {
                slot: self.slot,
                what: "power virtual queue",
            });
        }

        self.metrics.record(self.slot, &outcome, &self.state);
        observer.on_slot(self.slot, &view, &decision, &self.state)?;
        self.slot += 1;
        if self.slot.is_multiple_of(self.cfg.sample_every) || self.slot == self.cfg.horizon {
            self.samples.push(self.metrics.csv_row());
        }
        Ok(())
    }

    pub fn finish(self) -> Result<RunReport> {
        let m = &self.metrics;
        let cfg = &self.cfg;
        let delivery_ratio = m.delivery_ratio();
        let y_stability = m.y_stability();
        let avg_power = m.avg_power();
        let gap = gap_constant(cfg)?;
        Ok(RunReport {
            scheduler: cfg.scheduler,
            seed: cfg.seed,
            slots: m.total_slots(),
            sum_throughput: m.sum_throughput(),
            served_rate: m.served_rate(),
            admitted_avg: m.admitted_avg(),
            min_delivery_ratio: m.min_delivery_ratio(),
            power_ok: avg_power <= cfg.p_avg * (1.0 + POWER_SLACK),
            qos_ok: delivery_ratio
                .iter()
                .zip(&self.q_targets)
                .all(|(d, q)| *d >= q - QOS_SLACK),
            stability_ok: m.x_stability() <= STABILITY_EPS
                && y_stability.iter().all(|y| *y <= STABILITY_EPS),
            delivery_ratio,
            avg_power,
            mean_queue: m.mean_queue(),
            mean_sets_evaluated: m.mean_sets_evaluated(),
            x_stability: m.x_stability(),
            y_stability,
            gap_constant: gap,
            gap_bound: gap / (cfg.packet.mean_bits() * cfg.b_max),
            budget_violations: self.budget_violations,
            deadline_violations: self.deadline_violations,
            power_range_violations: self.power_range_violations,
            idle_slots: self.idle_slots,
            fell_through_slots: self.fell_through_slots,
            samples: self.samples,
        })
    }
}

/// Streams one CSV row per slot:
/// `slot,rt_set,nrt_pick,phi,objective,sets_evaluated,allocations`.
///
/// `rt_set` is a hex bitmask over RT user ids, `nrt_pick` is empty when no
/// NRT user is served, and `allocations` lists `class:user:power:duration`
/// entries separated by `;`.
pub struct DecisionLog<W: Write> {
    out: W,
}

impl<W: Write> DecisionLog<W> {
    pub const HEADER: &'static str = "slot,rt_set,nrt_pick,phi,objective,sets_evaluated,allocations";

    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{}", Self::HEADER)?;
        Ok(Self { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Hex bitmask with bit `i` set for every user in `users`.
pub fn bitmask_hex(users: &[usize]) -> String {
    let Some(&top) = users.iter().max() else {
        return "0".to_string();
    };
    let mut nibbles = vec![0u8; top / 4 + 1];
    for &u in users {
        nibbles[u / 4] |= 1 << (u % 4);
    }
    nibbles
        .iter()
        .rev()
        .map(|n| format!("{n:x}"))
        .collect::<String>()
}

impl<W: Write> SlotObserver for DecisionLog<W> {
    fn on_slot(
        &mut self,
        slot: u64,
        _view: &EligibleSlotView,
        d: &SlotDecision,
        _after: &QueueState,
    ) -> Result<()> {
        let mut allocs: Vec<String> = d
            .rt
            .iter()
            .map(|a| format!("rt:{}:{}:{}", a.user, a.power, a.duration))
            .collect();
        if let Some(n) = d.nrt {
            allocs.push(format!("nrt:{}:{}:{}", n.user, n.power, n.duration));
        }
        writeln!(
            self.out,
            "{},{},{},{},{},{},{}",
            slot,
            bitmask_hex(&d.rt_set()),
            d.nrt.map(|n| n.user.to_string()).unwrap_or_default(),
            d.phi,
            d.objective,
            d.sets_evaluated,
            allocs.join(";")
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PerUser;
    use crate::traffic::ChannelModel;

    fn base() -> SystemConfig {
        let mut c = SystemConfig::new(2, 2, 10.0);
        c.lambda_rt = PerUser::Scalar(0.5);
        c.lambda_nrt = PerUser::Scalar(0.7);
        c.q = PerUser::Scalar(0.3);
        c.horizon = 2000;
        c.seed = 3;
        c
    }

    #[test]
    fn gap_constant_empty_system() {
        let c = SystemConfig::new(0, 0, 10.0);
        assert_eq!(gap_constant(&c).unwrap(), 0.5 * (400.0 + 100.0));
    }

    #[test]
    fn gap_constant_reference_setup() {
        let mut c = SystemConfig::new(10, 10, 10.0);
        c.q = PerUser::Scalar(0.3);
        let l21 = 21f64.ln();
        let want = 0.5 * (10.0 * 1.09 + 400.0 + 100.0 + 10.0 * (1.0 + l21 * l21));
        assert!((gap_constant(&c).unwrap() - want).abs() < 1e-12);
        let r = run(&SystemConfig { horizon: 1, ..c.clone() }).unwrap();
        let doubled = run(&SystemConfig {
            horizon: 1,
            b_max: 2e4,
            ..c
        })
        .unwrap();
        assert!((r.gap_bound - 2.0 * doubled.gap_bound).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = run(&base()).unwrap();
        let b = run(&base()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn no_rt_heavy_traffic_is_pure_nrt() {
        let mut c = base();
        c.lambda_rt = PerUser::Scalar(0.0);
        c.lambda_nrt = PerUser::Scalar(1.0);
        c.heavy_traffic = true;
        struct Check;
        impl SlotObserver for Check {
            fn on_slot(
                &mut self,
                _: u64,
                view: &EligibleSlotView,
                d: &SlotDecision,
                _: &QueueState,
            ) -> Result<()> {
                assert!(d.rt.is_empty());
                let wf = |u: &NrtCandidate| {
                    crate::kernels::waterfilling_power(&crate::kernels::PowerPolicyInput {
                        queue_weight: u.queue,
                        power_price: view.x,
                        gain: u.gain,
                        p_max: view.p_max,
                        slot_len: view.slot_len,
                        packet_bits: 1.0,
                    })
                };
                match d.nrt {
                    Some(n) => {
                        assert_eq!(n.duration, view.slot_len);
                        assert_eq!(n.power, wf(&view.nrt[n.user]));
                    }
                    // water-filling level below zero for everyone
                    None => assert!(view.nrt.iter().all(|u| wf(u) == 0.0)),
                }
                Ok(())
            }
        }
        run_with_observer(&c, &mut Check).unwrap();
    }

    #[test]
    fn loose_power_budget_keeps_x_at_zero() {
        let mut c = base();
        c.p_avg = 20.0;
        struct XZero;
        impl SlotObserver for XZero {
            fn on_slot(
                &mut self,
                _: u64,
                _: &EligibleSlotView,
                _: &SlotDecision,
                after: &QueueState,
            ) -> Result<()> {
                assert_eq!(after.x_q, 0.0);
                Ok(())
            }
        }
        run_with_observer(&c, &mut XZero).unwrap();
    }

    #[test]
    fn invariants_hold_for_every_scheduler() {
        for kind in [
            SchedulerKind::LambertStrict,
            SchedulerKind::Exhaustive,
            SchedulerKind::Fixedp,
            SchedulerKind::HeteroHeuristic,
        ] {
            let mut c = base();
            c.scheduler = kind;
            c.channel = ChannelModel::Rayleigh {
                mean_gain: 1.0,
                gamma_max: 50.0,
            };
            let r = run(&c).unwrap();
            assert_eq!(r.invariant_violations(), 0, "{kind:?}");
        }
        let r = run(&base()).unwrap();
        assert_eq!(r.invariant_violations(), 0);
    }

    #[test]
    fn decision_log_rows() {
        let mut c = base();
        c.horizon = 50;
        let mut log = DecisionLog::new(Vec::new()).unwrap();
        run_with_observer(&c, &mut log).unwrap();
        let text = String::from_utf8(log.into_inner()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 51);
        assert_eq!(lines[0], DecisionLog::<Vec<u8>>::HEADER);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 7));
    }

    #[test]
    fn bitmask_examples() {
        assert_eq!(bitmask_hex(&[]), "0");
        assert_eq!(bitmask_hex(&[0, 2]), "5");
        assert_eq!(bitmask_hex(&[4]), "10");
        assert_eq!(bitmask_hex(&[0, 1, 2, 3, 9]), "20f");
    }

    #[test]
    fn samples_every_interval_plus_final() {
        let mut c = base();
        c.horizon = 2500;
        let r = run(&c).unwrap();
        assert_eq!(r.samples.len(), 3);
        assert!(r.samples[2].starts_with("2500,"));
    }
}
