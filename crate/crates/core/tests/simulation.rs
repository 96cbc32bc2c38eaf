mod support;

use dlsched::engine::{DecisionLog, SlotObserver};
use dlsched::queues::QueueState;
use dlsched::sched::{EligibleSlotView, SlotDecision};
use dlsched::sweep::{run_sweep, write_sweep_csv, SweepAxis, SweepRow, SweepSpec, SWEEP_CSV_HEADER};
use dlsched::{run, run_with_observer, ChannelModel, PerUser, SchedulerKind, SystemConfig};

fn light_onoff(p_avg: f64, lambda_rt: f64, lambda_nrt: f64, scheduler: SchedulerKind) -> SystemConfig {
    let mut c = SystemConfig::new(10, 10, p_avg);
    c.lambda_rt = PerUser::Scalar(lambda_rt);
    c.lambda_nrt = PerUser::Scalar(lambda_nrt);
    c.q = PerUser::Scalar(0.3);
    c.b_max = 1e4;
    c.horizon = 200_000;
    c.seed = 1;
    c.scheduler = scheduler;
    c
}

#[test]
fn feasible_onoff_points_meet_every_constraint() {
    for (p_avg, lrt, lnrt) in [(2.0, 0.1, 0.05), (10.0, 0.2, 0.1)] {
        let r = run(&light_onoff(p_avg, lrt, lnrt, SchedulerKind::Onoff)).unwrap();
        assert!(r.constraints_ok(), "Pavg={p_avg}: {r:?}");
        assert_eq!(r.invariant_violations(), 0);
        // every admitted NRT packet is eventually served
        let offered = 10.0 * lnrt;
        assert!((r.sum_throughput - offered).abs() < 0.02 * offered, "{}", r.sum_throughput);
    }
}

#[test]
fn onoff_beats_fixedp_when_the_power_limit_binds() {
    let on = run(&light_onoff(2.0, 0.1, 0.05, SchedulerKind::Onoff)).unwrap();
    let fx = run(&light_onoff(2.0, 0.1, 0.05, SchedulerKind::Fixedp)).unwrap();
    assert!(on.power_ok && !fx.power_ok);
    assert!(on.sum_throughput > fx.sum_throughput);
}

#[test]
fn runs_are_deterministic_per_seed() {
    let mut c = light_onoff(10.0, 0.5, 0.5, SchedulerKind::Onoff);
    c.horizon = 20_000;
    let a = run(&c).unwrap();
    let b = run(&c).unwrap();
    assert_eq!(a, b);
    c.seed = 2;
    assert_ne!(run(&c).unwrap().sum_throughput, a.sum_throughput);
}

/// Records the arrival pattern each scheduler sees.
#[derive(Default)]
struct ArrivalTrace(Vec<(Vec<usize>, Vec<bool>)>);

impl SlotObserver for ArrivalTrace {
    fn on_slot(
        &mut self,
        _slot: u64,
        view: &EligibleSlotView,
        _decision: &SlotDecision,
        _after: &QueueState,
    ) -> dlsched::Result<()> {
        let rt = view.rt.iter().map(|u| u.user).collect();
        let nrt = view.nrt.iter().map(|u| u.arrival).collect();
        self.0.push((rt, nrt));
        Ok(())
    }
}

#[test]
fn schedulers_share_random_numbers() {
    let mut c = light_onoff(10.0, 0.5, 0.5, SchedulerKind::Onoff);
    c.horizon = 5_000;
    let mut a = ArrivalTrace::default();
    run_with_observer(&c, &mut a).unwrap();
    c.scheduler = SchedulerKind::Fixedp;
    let mut b = ArrivalTrace::default();
    run_with_observer(&c, &mut b).unwrap();
    assert_eq!(a.0, b.0);
}

#[test]
fn decision_log_has_one_row_per_slot() {
    let mut c = light_onoff(10.0, 0.5, 0.5, SchedulerKind::Onoff);
    c.horizon = 300;
    let mut log = DecisionLog::new(Vec::new()).unwrap();
    run_with_observer(&c, &mut log).unwrap();
    let text = String::from_utf8(log.into_inner()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], DecisionLog::<Vec<u8>>::HEADER);
    assert_eq!(lines.len(), 301);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 7));
}

#[test]
fn report_json_round_trips() {
    let mut c = light_onoff(10.0, 0.5, 0.5, SchedulerKind::LambertStrict);
    c.channel = ChannelModel::Rayleigh {
        mean_gain: 1.0,
        gamma_max: 50.0,
    };
    c.horizon = 2_000;
    let r = run(&c).unwrap();
    let mut buf = Vec::new();
    r.write_json(&mut buf).unwrap();
    let back: dlsched::RunReport = serde_json::from_slice(&buf).unwrap();
    assert_eq!(back.sum_throughput, r.sum_throughput);
    assert_eq!(back.delivery_ratio, r.delivery_ratio);
    let mut csv = Vec::new();
    r.write_metrics_csv(&mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + r.samples.len());
}

#[test]
fn sweep_csv_round_trips() {
    let spec = SweepSpec {
        base: {
            let mut c = light_onoff(2.0, 0.2, 0.2, SchedulerKind::Onoff);
            c.horizon = 3_000;
            c
        },
        axis: SweepAxis::PAvg,
        values: vec![2.0, 4.0, 6.0, 8.0, 10.0],
        seeds: vec![1, 2],
        schedulers: vec![SchedulerKind::Onoff, SchedulerKind::Fixedp],
        output: None,
    };
    let rows = run_sweep(&spec, 1).unwrap();
    assert_eq!(rows.len(), 2 * 5 * 2);
    let mut buf = Vec::new();
    let n = write_sweep_csv(&spec, 2, &mut buf).unwrap();
    assert_eq!(n, rows.len());
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
    let parsed: Vec<SweepRow> = lines.map(|l| SweepRow::parse_csv(l).unwrap()).collect();
    // thread count does not change results or order
    assert_eq!(parsed, rows);
}
