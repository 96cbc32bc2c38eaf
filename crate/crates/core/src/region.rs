//! Capacity-region probe over discrete fading.
//!
//! Powers are restricted to a per-user grid and the time each user spends
//! at each grid level in each joint fading state becomes an LP variable.
//! Time sharing between levels makes membership a single linear program.
//! Membership is one-sided: "inside" comes with a certificate, "outside"
//! only means "not found at this grid resolution".

use std::io::Write;

use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOutcome, Variable};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PerUser, SystemConfig};
use crate::engine::{run_with_observer, RunReport, SlotObserver};
use crate::error::{Error, Result};
use crate::kernels::rate;
use crate::queues::QueueState;
use crate::sched::{EligibleSlotView, SchedulerKind, SlotDecision};
use crate::traffic::{ChannelModel, PacketModel};

/// Largest joint fading state space the probe will enumerate.
pub const MAX_JOINT_STATES: usize = 10_000;
/// Cap on the scaling factor so all-zero demands stay bounded.
pub const THETA_CAP: f64 = 1e6;
/// Certificate slack tolerance.
pub const CERT_TOL: f64 = 1e-9;

fn one() -> f64 {
    1.0
}
fn d_p_max() -> f64 {
    20.0
}
fn d_levels() -> usize {
    64
}

/// System and rate vector to test. Every user sees the same fading
/// marginal (`states`, `probs`), independently of the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionQuery {
    /// NRT arrival rates in packets per slot.
    pub lambda_nrt: Vec<f64>,
    #[serde(default)]
    pub lambda_rt: Vec<f64>,
    #[serde(default)]
    pub q: Vec<f64>,
    #[serde(default = "one")]
    pub packet_bits: f64,
    #[serde(default = "one")]
    pub slot_len: f64,
    pub p_avg: f64,
    #[serde(default = "d_p_max")]
    pub p_max: f64,
    pub states: Vec<f64>,
    pub probs: Vec<f64>,
    /// Power levels per user-state: zero plus log-spaced levels up to `p_max`.
    #[serde(default = "d_levels")]
    pub grid_levels: usize,
}

impl RegionQuery {
    pub fn n_users(&self) -> usize {
        self.lambda_rt.len() + self.lambda_nrt.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.len() != self.lambda_rt.len() {
            return Err(Error::config("q", "need one target per RT user"));
        }
        if self.q.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::config("q", "targets must lie in [0, 1]"));
        }
        if self
            .lambda_nrt
            .iter()
            .chain(&self.lambda_rt)
            .any(|l| !(*l >= 0.0 && l.is_finite()))
        {
            return Err(Error::config("lambda", "rates must be non-negative"));
        }
        if !(self.packet_bits > 0.0 && self.slot_len > 0.0 && self.p_max > 0.0) {
            return Err(Error::config(
                "region",
                "packet_bits, slot_len and p_max must be positive",
            ));
        }
        if !(self.p_avg >= 0.0) {
            return Err(Error::config("p_avg", "must be non-negative"));
        }
        if self.grid_levels < 2 {
            return Err(Error::config("grid_levels", "need at least 2 levels"));
        }
        ChannelModel::Discrete {
            states: self.states.clone(),
            probs: self.probs.clone(),
        }
        .validate()?;
        self.joint_state_count()?;
        Ok(())
    }

    fn joint_state_count(&self) -> Result<usize> {
        let base = self.states.len();
        let mut total = 1usize;
        for _ in 0..self.n_users() {
            total = total.saturating_mul(base);
            if total > MAX_JOINT_STATES {
                return Err(Error::StateSpace {
                    states: total,
                    limit: MAX_JOINT_STATES,
                });
            }
        }
        Ok(total)
    }

    /// Joint states with non-zero probability: `(prob, gain per user)`.
    /// Users are RT first, then NRT.
    pub fn joint_states(&self) -> Result<Vec<(f64, Vec<f64>)>> {
        let total = self.joint_state_count()?;
        let n = self.n_users();
        let base = self.states.len();
        let mut out = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rem = idx;
            let mut prob = 1.0;
            let mut gains = Vec::with_capacity(n);
            for _ in 0..n {
                let s = rem % base;
                rem /= base;
                prob *= self.probs[s];
                gains.push(self.states[s]);
            }
            if prob > 0.0 {
                out.push((prob, gains));
            }
        }
        Ok(out)
    }

    /// Power grid: zero, then log-spaced from `p_max / 1000` to `p_max`.
    pub fn power_grid(&self) -> Vec<f64> {
        let g = self.grid_levels;
        let mut levels = vec![0.0];
        if g == 2 {
            levels.push(self.p_max);
            return levels;
        }
        for l in 0..g - 1 {
            let e = -3.0 * (g - 2 - l) as f64 / (g - 2) as f64;
            levels.push(self.p_max * 10f64.powf(e));
        }
        levels
    }

    /// Same query with the NRT rates replaced.
    pub fn with_lambda(&self, lambda_nrt: Vec<f64>) -> Self {
        Self {
            lambda_nrt,
            ..self.clone()
        }
    }

    /// Simulation config matching this query, in admit-all mode.
    pub fn to_config(&self, scheduler: SchedulerKind, horizon: u64, seed: u64) -> SystemConfig {
        let mut c = SystemConfig::new(self.lambda_rt.len(), self.lambda_nrt.len(), self.p_avg);
        c.lambda_rt = PerUser::List(self.lambda_rt.clone());
        c.lambda_nrt = PerUser::List(self.lambda_nrt.clone());
        c.q = PerUser::List(self.q.clone());
        c.packet = PacketModel::Fixed {
            bits: self.packet_bits,
        };
        c.slot_len = self.slot_len;
        c.p_max = self.p_max;
        c.channel = ChannelModel::Discrete {
            states: self.states.clone(),
            probs: self.probs.clone(),
        };
        c.scheduler = scheduler;
        c.horizon = horizon;
        c.seed = seed;
        c.admit_all = true;
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserClass {
    Rt,
    Nrt,
}

/// Time `time` spent by one user at power `power` in joint state `state`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertEntry {
    pub state: usize,
    pub class: UserClass,
    pub user: usize,
    pub power: f64,
    pub time: f64,
}

/// Constraint slacks of a certificate; all should be `>= -CERT_TOL`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slacks {
    /// `Ts - sum(time)` per joint state.
    pub slot: Vec<f64>,
    /// Delivered minus required packets per slot, per NRT user.
    pub nrt: Vec<f64>,
    /// Delivered minus `q * lambda`, per RT user.
    pub rt: Vec<f64>,
    /// `Pavg - average power`.
    pub power: f64,
}

impl Slacks {
    pub fn min(&self) -> f64 {
        self.slot
            .iter()
            .chain(&self.nrt)
            .chain(&self.rt)
            .chain(std::iter::once(&self.power))
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Witness that a rate vector is supportable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCertificate {
    pub entries: Vec<CertEntry>,
    pub slacks: Slacks,
    pub avg_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionVerdict {
    pub inside: bool,
    /// Largest `theta` with `theta * lambda_nrt` supportable, capped at
    /// [`THETA_CAP`]. `None` when the RT demands alone are unsupportable.
    pub max_scaling: Option<f64>,
    pub certificate: Option<RegionCertificate>,
}

impl RegionVerdict {
    /// `theta - 1`, i.e. how far the rates could grow and stay inside.
    pub fn margin(&self) -> Option<f64> {
        self.max_scaling.map(|t| t - 1.0)
    }
}

struct Lp {
    problem: Problem,
    vars: Vec<(Variable, CertEntry)>,
    theta: Option<Variable>,
}

/// Builds the time-share LP. With `maximize_theta` the NRT demands are
/// `theta * lambda` and `theta` is maximised; otherwise the demands are
/// `lambda` and average power is minimised.
fn build_lp(query: &RegionQuery, states: &[(f64, Vec<f64>)], maximize_theta: bool) -> Lp {
    let dir = if maximize_theta {
        OptimizationDirection::Maximize
    } else {
        OptimizationDirection::Minimize
    };
    let mut problem = Problem::new(dir);
    let grid = query.power_grid();
    let n_rt = query.lambda_rt.len();
    let n = query.n_users();
    let ts = query.slot_len;
    let l = query.packet_bits;

    let mut vars = Vec::new();
    let mut per_user: Vec<Vec<(Variable, f64)>> = vec![Vec::new(); n];
    let mut power_row = Vec::new();
    for (m, (prob, gains)) in states.iter().enumerate() {
        let mut slot_row = Vec::new();
        for (u, &gain) in gains.iter().enumerate() {
            let mut rt_cap_row = Vec::new();
            for &p in grid.iter().filter(|&&p| p > 0.0) {
                let r = rate(p, gain);
                if r <= 0.0 || (u < n_rt && l / r > ts * (1.0 + 1e-12)) {
                    continue;
                }
                let cost = if maximize_theta { 0.0 } else { prob * p / ts };
                let v = problem.add_var(cost, (0.0, ts));
                slot_row.push((v, 1.0));
                per_user[u].push((v, prob * r / l));
                power_row.push((v, prob * p / ts));
                if u < n_rt {
                    rt_cap_row.push((v, r / l));
                }
                let (class, user) = if u < n_rt {
                    (UserClass::Rt, u)
                } else {
                    (UserClass::Nrt, u - n_rt)
                };
                vars.push((
                    v,
                    CertEntry {
                        state: m,
                        class,
                        user,
                        power: p,
                        time: 0.0,
                    },
                ));
            }
            if u < n_rt && !rt_cap_row.is_empty() {
                // an RT user is served at most once per arrival
                problem.add_constraint(rt_cap_row, ComparisonOp::Le, query.lambda_rt[u]);
            }
        }
        if !slot_row.is_empty() {
            problem.add_constraint(slot_row, ComparisonOp::Le, ts);
        }
    }
    if !power_row.is_empty() {
        problem.add_constraint(power_row, ComparisonOp::Le, query.p_avg);
    }
    for (j, row) in per_user.iter().enumerate().take(n_rt) {
        let need = query.q[j] * query.lambda_rt[j];
        problem.add_constraint(row.clone(), ComparisonOp::Ge, need);
    }
    let theta = maximize_theta.then(|| problem.add_var(1.0, (0.0, THETA_CAP)));
    for (i, row) in per_user.iter().enumerate().skip(n_rt) {
        let lam = query.lambda_nrt[i - n_rt];
        let mut row = row.clone();
        match theta {
            Some(t) => {
                row.push((t, -lam));
                problem.add_constraint(row, ComparisonOp::Ge, 0.0);
            }
            None => problem.add_constraint(row, ComparisonOp::Ge, lam),
        }
    }
    Lp {
        problem,
        vars,
        theta,
    }
}

fn solve(lp: &Lp) -> Result<Option<microlp::Solution>> {
    match lp.problem.solve() {
        Ok(SolveOutcome::Solution(s)) => Ok(Some(s)),
        Ok(SolveOutcome::Interrupted(_)) => Err(Error::Lp("solver interrupted".into())),
        Err(microlp::Error::Infeasible) => Ok(None),
        Err(e) => Err(Error::Lp(e.to_string())),
    }
}

/// Largest `theta` such that `theta * lambda_nrt` is supportable on the
/// grid. `None` when the RT demands cannot be met at all.
pub fn max_scaling(query: &RegionQuery) -> Result<Option<f64>> {
    query.validate()?;
    let states = query.joint_states()?;
    let lp = build_lp(query, &states, true);
    Ok(solve(&lp)?.map(|s| s.var_value(lp.theta.unwrap())))
}

/// Membership test with a minimum-power certificate when inside.
pub fn in_lambert_region(query: &RegionQuery) -> Result<RegionVerdict> {
    query.validate()?;
    let states = query.joint_states()?;
    let lp = build_lp(query, &states, true);
    let theta = solve(&lp)?.map(|s| s.var_value(lp.theta.unwrap()));
    if !theta.is_some_and(|t| t >= 1.0) {
        return Ok(RegionVerdict {
            inside: false,
            max_scaling: theta,
            certificate: None,
        });
    }
    let lp = build_lp(query, &states, false);
    let Some(sol) = solve(&lp)? else {
        // only possible through solver round-off right at the boundary
        return Ok(RegionVerdict {
            inside: false,
            max_scaling: theta,
            certificate: None,
        });
    };
    let entries: Vec<CertEntry> = lp
        .vars
        .iter()
        .filter_map(|(v, e)| {
            let t = sol.var_value(*v);
            (t > 0.0).then_some(CertEntry { time: t, ..*e })
        })
        .collect();
    let slacks = certificate_slacks(query, &states, &entries);
    let avg_power = query.p_avg - slacks.power;
    let cert = RegionCertificate {
        entries,
        slacks,
        avg_power,
    };
    let inside = cert.slacks.min() >= -CERT_TOL;
    if !inside {
        log::warn!("certificate failed re-verification, min slack {}", cert.slacks.min());
    }
    Ok(RegionVerdict {
        inside,
        max_scaling: theta,
        certificate: inside.then_some(cert),
    })
}

fn certificate_slacks(
    query: &RegionQuery,
    states: &[(f64, Vec<f64>)],
    entries: &[CertEntry],
) -> Slacks {
    let n_rt = query.lambda_rt.len();
    let mut used = vec![0.0; states.len()];
    let mut nrt: Vec<f64> = query.lambda_nrt.iter().map(|l| -l).collect();
    let mut rt: Vec<f64> = query
        .lambda_rt
        .iter()
        .zip(&query.q)
        .map(|(l, q)| -l * q)
        .collect();
    let mut power = 0.0;
    let mut bad = false;
    for e in entries {
        if !(e.time >= 0.0) || !(0.0..=query.p_max).contains(&e.power) || e.state >= states.len() {
            bad = true;
            continue;
        }
        let (prob, gains) = &states[e.state];
        let g = match e.class {
            UserClass::Rt => gains[e.user],
            UserClass::Nrt => gains[n_rt + e.user],
        };
        let served = prob * e.time * rate(e.power, g) / query.packet_bits;
        match e.class {
            UserClass::Rt => rt[e.user] += served,
            UserClass::Nrt => nrt[e.user] += served,
        }
        used[e.state] += e.time;
        power += prob * e.time * e.power / query.slot_len;
    }
    let mut slot: Vec<f64> = used.iter().map(|u| query.slot_len - u).collect();
    if bad {
        slot.push(f64::NEG_INFINITY);
    }
    Slacks {
        slot,
        nrt,
        rt,
        power: query.p_avg - power,
    }
}

/// Recomputes every constraint from the certificate entries alone and
/// returns the smallest slack.
pub fn verify_certificate(query: &RegionQuery, cert: &RegionCertificate) -> Result<f64> {
    let states = query.joint_states()?;
    Ok(certificate_slacks(query, &states, &cert.entries).min())
}

/// Boundary point along `direction` by bisection on membership, to
/// relative width `rel_tol`. Returns the last scale found inside.
pub fn boundary_bisect(query: &RegionQuery, direction: &[f64], rel_tol: f64) -> Result<f64> {
    let at = |s: f64| -> Result<bool> {
        let lam = direction.iter().map(|d| d * s).collect();
        Ok(in_lambert_region(&query.with_lambda(lam))?.inside)
    };
    if !at(0.0)? {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while at(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > THETA_CAP {
            return Ok(lo);
        }
    }
    if lo == 0.0 {
        // shrink until something is inside so the relative test makes sense
        let mut probe = hi * 0.5;
        while probe > 1e-12 && !at(probe)? {
            hi = probe;
            probe *= 0.5;
        }
        if probe <= 1e-12 {
            return Ok(0.0);
        }
        lo = probe;
    }
    while (hi - lo) > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if at(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Verdict of a long admit-all run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    /// Least-squares slope of each NRT backlog over the second half, bits per slot.
    pub slopes: Vec<f64>,
    pub threshold: f64,
    pub report: RunReport,
}

/// Online least-squares slope of each queue over slots `[start, K)`.
struct SlopeTracker {
    start: u64,
    n: f64,
    sx: f64,
    sxx: f64,
    sy: Vec<f64>,
    sxy: Vec<f64>,
}

impl SlopeTracker {
    fn new(start: u64, users: usize) -> Self {
        Self {
            start,
            n: 0.0,
            sx: 0.0,
            sxx: 0.0,
            sy: vec![0.0; users],
            sxy: vec![0.0; users],
        }
    }

    fn slopes(&self) -> Vec<f64> {
        let den = self.n * self.sxx - self.sx * self.sx;
        self.sy
            .iter()
            .zip(&self.sxy)
            .map(|(sy, sxy)| {
                if den > 0.0 {
                    (self.n * sxy - self.sx * sy) / den
                } else {
                    0.0
                }
            })
            .collect()
    }
}

impl SlotObserver for SlopeTracker {
    fn on_slot(
        &mut self,
        slot: u64,
        _view: &EligibleSlotView,
        _decision: &SlotDecision,
        after: &QueueState,
    ) -> Result<()> {
        if slot < self.start {
            return Ok(());
        }
        let x = (slot - self.start) as f64;
        self.n += 1.0;
        self.sx += x;
        self.sxx += x * x;
        for (i, &q) in after.data_q.iter().enumerate() {
            self.sy[i] += q;
            self.sxy[i] += x * q;
        }
        Ok(())
    }
}

/// Runs the query's system with every arrival admitted; "stable" iff every
/// backlog slope over the last `K/2` slots is at most `1e-3 * L`.
pub fn stress_stability(
    query: &RegionQuery,
    scheduler: SchedulerKind,
    horizon: u64,
    seed: u64,
) -> Result<StabilityVerdict> {
    if !matches!(scheduler, SchedulerKind::LambertStrict | SchedulerKind::Onoff) {
        return Err(Error::config(
            "scheduler",
            "stress test supports lambert_strict and onoff",
        ));
    }
    query.validate()?;
    let cfg = query.to_config(scheduler, horizon, seed);
    let mut tracker = SlopeTracker::new(horizon / 2, query.lambda_nrt.len());
    let report = run_with_observer(&cfg, &mut tracker)?;
    let slopes = tracker.slopes();
    let threshold = 1e-3 * query.packet_bits;
    Ok(StabilityVerdict {
        stable: slopes.iter().all(|s| *s <= threshold),
        slopes,
        threshold,
        report,
    })
}

/// Rays to trace for `cmd_region`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSweep {
    pub query: RegionQuery,
    /// Directions in NRT rate space; one boundary point per ray.
    pub rays: Vec<Vec<f64>>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_rel_tol() -> f64 {
    0.01
}

/// One emitted boundary point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub ray: usize,
    pub scale: f64,
    pub lambda: Vec<f64>,
    /// Exact grid scaling from the LP, for comparison with `scale`.
    pub lp_scale: f64,
}

/// Bisects every ray (in parallel) and returns the points in ray order.
pub fn trace_boundary(sweep: &RegionSweep) -> Result<Vec<BoundaryPoint>> {
    sweep.query.validate()?;
    for (i, r) in sweep.rays.iter().enumerate() {
        if r.len() != sweep.query.lambda_nrt.len() || r.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::config(
                format!("rays[{i}]"),
                "need one non-negative entry per NRT user",
            ));
        }
    }
    sweep
        .rays
        .par_iter()
        .enumerate()
        .map(|(ray, dir)| {
            let scale = boundary_bisect(&sweep.query, dir, sweep.rel_tol)?;
            let lp_scale = max_scaling(&sweep.query.with_lambda(dir.clone()))?.unwrap_or(0.0);
            Ok(BoundaryPoint {
                ray,
                scale,
                lambda: dir.iter().map(|d| d * scale).collect(),
                lp_scale,
            })
        })
        .collect()
}

/// Long-format CSV: `ray,scale,lp_scale,user,lambda`.
pub fn write_boundary_csv(points: &[BoundaryPoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "ray,scale,lp_scale,user,lambda")?;
    for p in points {
        for (u, l) in p.lambda.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", p.ray, p.scale, p.lp_scale, u, l)?;
        }
    }
    Ok(())
}
