//! Per-slot schedulers.
//!
//! Each scheduler maps an [`EligibleSlotView`] to a [`SlotDecision`]: which
//! real-time users transmit (each gets exactly the time its packet needs at
//! the chosen power), which single non-real-time user takes the remaining
//! time, and at what powers.

mod fixedp;
mod hetero;
mod onoff;
mod strict;

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernels::{self, PowerPolicyInput, RtLink};
use crate::queues::admit;

pub use fixedp::schedule_fixedp;
pub use hetero::{heterogeneous_order, schedule_hetero};
pub use onoff::{candidate_prefixes, schedule_onoff};
pub use strict::{
    dominated_set, enumerate_undominated, schedule_exhaustive, schedule_lambert_strict,
    EXHAUSTIVE_LIMIT,
};

/// A real-time user that arrived and has a usable channel this slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtCandidate {
    pub user: usize,
    pub y: f64,
    pub gain: f64,
    pub packet_bits: f64,
}

/// A non-real-time user. Every NRT user appears in the view (admission
/// control needs all of them); only those with positive gain can be picked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrtCandidate {
    pub user: usize,
    pub queue: f64,
    pub gain: f64,
    pub arrival: bool,
}

/// Scheduler input for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EligibleSlotView {
    pub rt: Vec<RtCandidate>,
    pub nrt: Vec<NrtCandidate>,
    pub x: f64,
    pub slot_len: f64,
    pub p_max: f64,
    pub b_max: f64,
    /// Capacity-probe mode: every NRT arrival is admitted.
    pub admit_all: bool,
}

impl EligibleSlotView {
    /// Admission vector over all NRT users.
    pub fn admissions(&self) -> Vec<bool> {
        self.nrt
            .iter()
            .map(|u| {
                if self.admit_all {
                    u.arrival
                } else {
                    admit(u.queue, u.arrival, self.b_max)
                }
            })
            .collect()
    }

    fn links(&self, members: &[usize]) -> Vec<RtLink> {
        members
            .iter()
            .map(|&i| RtLink {
                gain: self.rt[i].gain,
                packet_bits: self.rt[i].packet_bits,
            })
            .collect()
    }

    fn policy_input(&self, u: &NrtCandidate) -> PowerPolicyInput {
        PowerPolicyInput {
            queue_weight: u.queue,
            power_price: self.x,
            gain: u.gain,
            p_max: self.p_max,
            slot_len: self.slot_len,
            packet_bits: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtAlloc {
    pub user: usize,
    pub power: f64,
    pub duration: f64,
    pub rate: f64,
    pub packet_bits: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrtAlloc {
    pub user: usize,
    pub power: f64,
    pub duration: f64,
    pub rate: f64,
}

/// Scheduler output for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDecision {
    pub rt: Vec<RtAlloc>,
    pub nrt: Option<NrtAlloc>,
    /// Admission decision for every NRT user.
    pub admissions: Vec<bool>,
    pub phi: f64,
    pub objective: f64,
    pub sets_evaluated: usize,
    /// FixedP only: the coin's branch had nobody to serve.
    #[serde(default)]
    pub fell_through: bool,
}

impl SlotDecision {
    pub fn total_duration(&self) -> f64 {
        self.rt.iter().map(|a| a.duration).sum::<f64>() + self.nrt.map_or(0.0, |n| n.duration)
    }

    /// `sum(mu * P)`.
    pub fn slot_energy(&self) -> f64 {
        self.rt.iter().map(|a| a.duration * a.power).sum::<f64>()
            + self.nrt.map_or(0.0, |n| n.duration * n.power)
    }

    /// Scheduled RT users, ascending.
    pub fn rt_set(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.rt.iter().map(|a| a.user).collect();
        s.sort_unstable();
        s
    }
}

/// The NRT user that would take the residual time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NrtChoice {
    pub user: usize,
    pub power: f64,
    pub rate: f64,
    /// Per-second value of the residual time.
    pub psi: f64,
}

/// Picks the NRT user with the largest water-filling value, ties broken
/// uniformly at random. No pick when every value is non-positive.
pub fn select_nrt<R: Rng + ?Sized>(view: &EligibleSlotView, rng: &mut R) -> Option<NrtChoice> {
    let mut best: Option<NrtChoice> = None;
    let mut ties = 0u32;
    for u in view.nrt.iter().filter(|u| u.gain > 0.0) {
        let inp = view.policy_input(u);
        let (p, psi) = kernels::psi_nr_star(&inp);
        if !(psi > 0.0) {
            continue;
        }
        let cand = NrtChoice {
            user: u.user,
            power: p,
            rate: kernels::rate(p, u.gain),
            psi,
        };
        match best {
            None => {
                best = Some(cand);
                ties = 1;
            }
            Some(b) => {
                let tol = 1e-12 * b.psi.abs().max(1.0);
                if psi > b.psi + tol {
                    best = Some(cand);
                    ties = 1;
                } else if (psi - b.psi).abs() <= tol {
                    // reservoir sampling over the tied users
                    ties += 1;
                    if rng.gen_range(0..ties) == 0 {
                        best = Some(cand);
                    }
                }
            }
        }
    }
    best
}

/// Evaluated candidate set, before it becomes a decision.
#[derive(Debug, Clone)]
pub(crate) struct Evaluated {
    pub users: Vec<usize>,
    pub allocs: Vec<RtAlloc>,
    pub nrt: Option<NrtAlloc>,
    pub phi: f64,
    pub objective: f64,
}

/// Value of a real-time set given the allocation: sum over RT users of
/// `Y - X P mu / Ts` plus `psi * mu_nrt`.
pub(crate) fn assemble(
    view: &EligibleSlotView,
    members: &[usize],
    powers: &[f64],
    rates: &[f64],
    phi: f64,
    nrt: Option<&NrtChoice>,
) -> Evaluated {
    let mut allocs = Vec::with_capacity(members.len());
    let mut used = 0.0;
    let mut objective = 0.0;
    for (k, &i) in members.iter().enumerate() {
        let c = &view.rt[i];
        let duration = c.packet_bits / rates[k];
        used += duration;
        objective += c.y - view.x * powers[k] * duration / view.slot_len;
        allocs.push(RtAlloc {
            user: c.user,
            power: powers[k],
            duration,
            rate: rates[k],
            packet_bits: c.packet_bits,
        });
    }
    let nrt_alloc = nrt.and_then(|n| {
        let left = (view.slot_len - used).max(0.0);
        (left > 0.0).then_some(NrtAlloc {
            user: n.user,
            power: n.power,
            duration: left,
            rate: n.rate,
        })
    });
    if let Some(a) = &nrt_alloc {
        objective += nrt.unwrap().psi * a.duration;
    }
    let mut users: Vec<usize> = members.iter().map(|&i| view.rt[i].user).collect();
    users.sort_unstable();
    Evaluated {
        users,
        allocs,
        nrt: nrt_alloc,
        phi,
        objective,
    }
}

/// Solves the power split for `members` (indices into `view.rt`). `None`
/// when the set cannot fit in the slot.
pub(crate) fn evaluate_set(
    view: &EligibleSlotView,
    members: &[usize],
    nrt: Option<&NrtChoice>,
) -> Result<Option<Evaluated>> {
    if members.is_empty() {
        return Ok(Some(assemble(view, members, &[], &[], 0.0, nrt)));
    }
    let psi = nrt.map_or(0.0, |n| n.psi);
    match kernels::solve_phi(&view.links(members), view.x, psi, view.slot_len, view.p_max) {
        Ok(sol) => Ok(Some(assemble(
            view,
            members,
            &sol.powers,
            &sol.rates,
            sol.phi,
            nrt,
        ))),
        Err(crate::Error::InfeasibleSet { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Relative objective tolerance used for tie detection.
pub const OBJECTIVE_TIE_TOL: f64 = 1e-12;

/// True when `a` should replace `b`: higher objective, or a tie resolved by
/// smaller cardinality then lexicographically smaller user list.
pub(crate) fn preferred(a: &Evaluated, b: &Evaluated) -> bool {
    let tol = OBJECTIVE_TIE_TOL * a.objective.abs().max(b.objective.abs()).max(1.0);
    if a.objective > b.objective + tol {
        return true;
    }
    if a.objective < b.objective - tol {
        return false;
    }
    match a.users.len().cmp(&b.users.len()) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.users < b.users,
    }
}

/// Tracks the best set seen so far.
#[derive(Default)]
pub(crate) struct BestSet {
    best: Option<Evaluated>,
    pub evaluated: usize,
}

impl BestSet {
    pub fn offer(&mut self, cand: Option<Evaluated>) {
        self.evaluated += 1;
        if let Some(c) = cand {
            match &self.best {
                Some(b) if !preferred(&c, b) => {}
                _ => self.best = Some(c),
            }
        }
    }

    pub fn into_decision(self, view: &EligibleSlotView) -> SlotDecision {
        let best = self.best.expect("the empty set is always feasible");
        SlotDecision {
            rt: best.allocs,
            nrt: best.nrt,
            admissions: view.admissions(),
            phi: best.phi,
            objective: best.objective,
            sets_evaluated: self.evaluated,
            fell_through: false,
        }
    }
}

/// Objective of an arbitrary decision against the view it was made for:
/// RT terms `Y - X P mu / Ts` plus `(Q R - X P / Ts) * mu` for the NRT user.
pub fn per_slot_objective(decision: &SlotDecision, view: &EligibleSlotView) -> f64 {
    let mut total = 0.0;
    for a in &decision.rt {
        let y = view
            .rt
            .iter()
            .find(|c| c.user == a.user)
            .map_or(0.0, |c| c.y);
        total += y - view.x * a.power * a.duration / view.slot_len;
    }
    if let Some(n) = decision.nrt {
        if let Some(u) = view.nrt.iter().find(|u| u.user == n.user) {
            let inp = view.policy_input(u);
            total += kernels::psi_nr(&inp, n.power) * n.duration;
        }
    }
    total
}

/// Which per-slot decision rule drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Onoff,
    LambertStrict,
    Exhaustive,
    Fixedp,
    HeteroHeuristic,
}

impl SchedulerKind {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Onoff => "onoff",
            SchedulerKind::LambertStrict => "lambert_strict",
            SchedulerKind::Exhaustive => "exhaustive",
            SchedulerKind::Fixedp => "fixedp",
            SchedulerKind::HeteroHeuristic => "hetero_heuristic",
        }
    }

    /// Runs this rule. `coin_bias` is the RT probability used by FixedP.
    pub fn decide<R: Rng + ?Sized>(
        self,
        view: &EligibleSlotView,
        rng: &mut R,
        coin_bias: f64,
    ) -> Result<SlotDecision> {
        match self {
            SchedulerKind::Onoff => schedule_onoff(view, rng),
            SchedulerKind::LambertStrict => schedule_lambert_strict(view, rng),
            SchedulerKind::Exhaustive => schedule_exhaustive(view, rng),
            SchedulerKind::Fixedp => Ok(schedule_fixedp(view, rng, coin_bias)),
            SchedulerKind::HeteroHeuristic => schedule_hetero(view, rng),
        }
    }
}

impl std::str::FromStr for SchedulerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| crate::Error::config("scheduler", format!("unknown scheduler {s:?}")))
    }
}
