//! Data queues, virtual queues, admission control and running averages.

use serde::{Deserialize, Serialize};

/// Backlog after one slot: `(q + admitted - served)^+`.
#[inline]
pub fn update_data_queue(q: f64, admitted_bits: f64, served_bits: f64) -> f64 {
    (q + admitted_bits - served_bits).max(0.0)
}

/// Delivery-ratio virtual queue: `(y + a * q_target - served)^+`.
#[inline]
pub fn update_virtual_y(y: f64, arrival: bool, q_target: f64, served: bool) -> f64 {
    let a = if arrival { q_target } else { 0.0 };
    let s = if served { 1.0 } else { 0.0 };
    (y + a - s).max(0.0)
}

/// Average-power virtual queue: `(x + energy / Ts - Pavg)^+`.
#[inline]
pub fn update_virtual_x(x: f64, slot_energy: f64, slot_len: f64, p_avg: f64) -> f64 {
    (x + slot_energy / slot_len - p_avg).max(0.0)
}

/// Admit the arrival only while the backlog is below `b_max`.
#[inline]
pub fn admit(q: f64, arrival: bool, b_max: f64) -> bool {
    arrival && q < b_max
}

/// Empirical mean-rate-stability statistic: final value over horizon.
pub fn stability_statistic(trace: &[f64]) -> f64 {
    match trace.last() {
        Some(&last) => last / trace.len() as f64,
        None => 0.0,
    }
}

/// All queue state carried between slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    /// NRT backlogs in bits.
    pub data_q: Vec<f64>,
    /// RT delivery-ratio virtual queues.
    pub y_q: Vec<f64>,
    /// Power virtual queue.
    pub x_q: f64,
}

impl QueueState {
    pub fn new(n_rt: usize, n_nrt: usize) -> Self {
        Self {
            data_q: vec![0.0; n_nrt],
            y_q: vec![0.0; n_rt],
            x_q: 0.0,
        }
    }
}

/// What happened in one slot, as needed by the metrics.
#[derive(Debug, Clone, Default)]
pub struct SlotOutcome {
    pub rt_arrivals: Vec<bool>,
    pub rt_served: Vec<bool>,
    pub nrt_admitted: Vec<bool>,
    /// Bits actually delivered to each NRT user.
    pub nrt_delivered_bits: Vec<f64>,
    /// `sum(mu * P)` over every scheduled user.
    pub slot_energy: f64,
    pub sets_evaluated: usize,
}

/// Running time-averages of a simulation.
///
/// Slots before `burn_in` update the queues but not the averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTrace {
    pub burn_in: u64,
    pub slots: u64,
    pub slot_len: f64,
    pub packet_bits: f64,
    admitted_sum: Vec<f64>,
    served_bits_sum: Vec<f64>,
    rt_arrivals: Vec<u64>,
    rt_served: Vec<u64>,
    energy_sum: f64,
    q_sum: Vec<f64>,
    sets_sum: u64,
    final_y: Vec<f64>,
    final_x: f64,
    final_q: Vec<f64>,
    total_slots: u64,
}

impl MetricsTrace {
    pub fn new(n_rt: usize, n_nrt: usize, slot_len: f64, packet_bits: f64, burn_in: u64) -> Self {
        Self {
            burn_in,
            slots: 0,
            slot_len,
            packet_bits,
            admitted_sum: vec![0.0; n_nrt],
            served_bits_sum: vec![0.0; n_nrt],
            rt_arrivals: vec![0; n_rt],
            rt_served: vec![0; n_rt],
            energy_sum: 0.0,
            q_sum: vec![0.0; n_nrt],
            sets_sum: 0,
            final_y: vec![0.0; n_rt],
            final_x: 0.0,
            final_q: vec![0.0; n_nrt],
            total_slots: 0,
        }
    }

    /// Records slot `k` (0-based) given its outcome and the queues after the update.
    pub fn record(&mut self, k: u64, outcome: &SlotOutcome, after: &QueueState) {
        self.total_slots = k + 1;
        self.final_y.clone_from(&after.y_q);
        self.final_x = after.x_q;
        self.final_q.clone_from(&after.data_q);
        if k < self.burn_in {
            return;
        }
        self.slots += 1;
        for (i, &a) in outcome.nrt_admitted.iter().enumerate() {
            if a {
                self.admitted_sum[i] += 1.0;
            }
        }
        for (i, &b) in outcome.nrt_delivered_bits.iter().enumerate() {
            self.served_bits_sum[i] += b;
        }
        for i in 0..self.rt_arrivals.len() {
            if outcome.rt_arrivals[i] {
                self.rt_arrivals[i] += 1;
            }
            if outcome.rt_served[i] {
                self.rt_served[i] += 1;
            }
        }
        self.energy_sum += outcome.slot_energy;
        for (s, &q) in self.q_sum.iter_mut().zip(&after.data_q) {
            *s += q;
        }
        self.sets_sum += outcome.sets_evaluated as u64;
    }

    fn denom(&self) -> f64 {
        self.slots.max(1) as f64
    }

    /// Mean admissions per slot for each NRT user.
    pub fn admitted_avg(&self) -> Vec<f64> {
        self.admitted_sum.iter().map(|s| s / self.denom()).collect()
    }

    /// Mean `mu * R / (L * Ts)` per slot for each NRT user.
    pub fn served_rate(&self) -> Vec<f64> {
        let scale = self.packet_bits * self.slot_len * self.denom();
        self.served_bits_sum.iter().map(|s| s / scale).collect()
    }

    pub fn sum_throughput(&self) -> f64 {
        self.served_rate().iter().sum()
    }

    /// Fraction of RT arrivals delivered by their deadline; 1 with no arrivals.
    pub fn delivery_ratio(&self) -> Vec<f64> {
        self.rt_arrivals
            .iter()
            .zip(&self.rt_served)
            .map(|(&a, &s)| if a == 0 { 1.0 } else { s as f64 / a as f64 })
            .collect()
    }

    pub fn min_delivery_ratio(&self) -> f64 {
        self.delivery_ratio().into_iter().fold(1.0, f64::min)
    }

    /// Mean transmitted power `sum(mu P) / Ts` per slot.
    pub fn avg_power(&self) -> f64 {
        self.energy_sum / (self.slot_len * self.denom())
    }

    pub fn mean_queue(&self) -> Vec<f64> {
        self.q_sum.iter().map(|s| s / self.denom()).collect()
    }

    pub fn mean_sets_evaluated(&self) -> f64 {
        self.sets_sum as f64 / self.denom()
    }

    /// `X(K)/K`.
    pub fn x_stability(&self) -> f64 {
        self.final_x / self.total_slots.max(1) as f64
    }

    /// `Y_i(K)/K` for each RT user.
    pub fn y_stability(&self) -> Vec<f64> {
        let k = self.total_slots.max(1) as f64;
        self.final_y.iter().map(|y| y / k).collect()
    }

    pub fn final_queues(&self) -> &[f64] {
        &self.final_q
    }

    pub fn total_slots(&self) -> u64 {
        self.total_slots
    }

    /// One CSV sample row, see [`MetricsTrace::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let max_y = self.final_y.iter().cloned().fold(0.0, f64::max);
        let mean_q = {
            let q = self.mean_queue();
            if q.is_empty() {
                0.0
            } else {
                q.iter().sum::<f64>() / q.len() as f64
            }
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.total_slots,
            self.sum_throughput(),
            self.avg_power(),
            self.min_delivery_ratio(),
            self.final_x,
            max_y,
            mean_q,
            self.mean_sets_evaluated()
        )
    }

    pub const CSV_HEADER: &'static str =
        "slot,sum_throughput,avg_power,min_delivery_ratio,x_queue,max_y_queue,mean_nrt_queue,mean_sets_evaluated";
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn data_queue_examples() {
        assert_eq!(update_data_queue(10.0, 1.0, 3.0), 8.0);
        assert_eq!(update_data_queue(2.0, 0.0, 5.0), 0.0);
        assert_eq!(update_data_queue(0.0, 1.0, 0.0), 1.0);
    }

    #[test]
    fn virtual_y_examples() {
        assert!((update_virtual_y(5.0, true, 0.3, false) - 5.3).abs() < 1e-15);
        assert!((update_virtual_y(5.0, true, 0.3, true) - 4.3).abs() < 1e-15);
        assert_eq!(update_virtual_y(0.5, false, 0.3, true), 0.0);
    }

    #[test]
    fn virtual_x_examples() {
        assert_eq!(update_virtual_x(0.0, 5.0, 1.0, 10.0), 0.0);
        assert_eq!(update_virtual_x(3.0, 12.0, 1.0, 10.0), 5.0);
        assert_eq!(update_virtual_x(3.0, 12.0, 2.0, 10.0), 0.0);
    }

    #[test]
    fn admit_examples() {
        assert!(admit(50.0, true, 100.0));
        assert!(!admit(150.0, true, 100.0));
        assert!(!admit(50.0, false, 100.0));
    }

    #[test]
    fn stability_statistic_examples() {
        assert!((stability_statistic(&vec![7.0; 1000]) - 0.007).abs() < 1e-15);
        assert_eq!(stability_statistic(&vec![0.0; 50]), 0.0);
        let lin: Vec<f64> = (1..=1000).map(|k| k as f64).collect();
        assert_eq!(stability_statistic(&lin), 1.0);
    }

    #[test]
    fn metrics_burn_in_skips_averages_but_keeps_final_state() {
        let mut m = MetricsTrace::new(1, 1, 1.0, 1.0, 1);
        let out = SlotOutcome {
            rt_arrivals: vec![true],
            rt_served: vec![false],
            nrt_admitted: vec![true],
            nrt_delivered_bits: vec![2.0],
            slot_energy: 4.0,
            sets_evaluated: 2,
        };
        let st = QueueState {
            data_q: vec![3.0],
            y_q: vec![0.3],
            x_q: 1.0,
        };
        m.record(0, &out, &st);
        assert_eq!(m.slots, 0);
        let served = SlotOutcome {
            rt_served: vec![true],
            ..out.clone()
        };
        m.record(1, &served, &st);
        assert_eq!(m.slots, 1);
        assert_eq!(m.delivery_ratio(), vec![1.0]);
        assert_eq!(m.avg_power(), 4.0);
        assert_eq!(m.sum_throughput(), 2.0);
        assert_eq!(m.x_stability(), 0.5);
    }

    proptest! {
        #[test]
        fn queues_never_negative(
            q in 0.0f64..100.0, adm in 0.0f64..5.0, served in 0.0f64..200.0,
            y in 0.0f64..10.0, arr: bool, qt in 0.0f64..=1.0, srv: bool,
            x in 0.0f64..50.0, e in 0.0f64..100.0, ts in 0.1f64..10.0, pavg in 0.0f64..20.0,
        ) {
            prop_assert!(update_data_queue(q, adm, served) >= 0.0);
            prop_assert!(update_virtual_y(y, arr, qt, srv) >= 0.0);
            prop_assert!(update_virtual_x(x, e, ts, pavg) >= 0.0);
        }

        #[test]
        fn admission_never_exceeds_arrival(q in 0.0f64..1e4, arr: bool, b in 1.0f64..1e4) {
            prop_assert!(!admit(q, arr, b) || arr);
        }

        #[test]
        fn admit_then_serve_keeps_backlog_bounded(
            steps in proptest::collection::vec((any::<bool>(), 0.0f64..3.0), 1..400),
            b_max in 1.0f64..50.0,
        ) {
            let l = 1.0;
            let mut q = 0.0;
            for (arr, served) in steps {
                let r = admit(q, arr, b_max);
                q = update_data_queue(q, if r { l } else { 0.0 }, served);
                prop_assert!(q <= b_max + l);
            }
        }
    }
}
