//! Replay metrics and their canonical serialized form.

use std::collections::BTreeMap;

/// Everything one replay produces. Serialization is byte-stable: same
/// inputs, same seed, same bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub system: String,
    pub policy: String,
    /// Calls in the trace.
    pub calls: usize,
    /// Calls whose callee actually executed.
    pub dispatched_calls: usize,
    pub total_gas: u64,
    pub gas_per_call_mean: f64,
    /// Gwei paid per call on average.
    pub ether_per_call_mean: f64,
    /// Mean gas per call over consecutive window periods.
    pub gas_per_call_series: Vec<f64>,
    /// Windows per series period.
    pub period_windows: usize,
    /// batch size → number of batches.
    pub batch_sizes: BTreeMap<usize, usize>,
    pub batches_formed: usize,
    /// Gas of each batch transaction, in emission order.
    pub per_batch_gas: Vec<u64>,
    pub windows_total: usize,
    pub windows_batched: usize,
    /// delay in blocks → calls (present when a baseline run was made).
    pub block_delays: BTreeMap<i64, usize>,
    pub block_delay_mean: f64,
}

impl MetricsReport {
    pub fn new(system: &str, policy: &str) -> MetricsReport {
        MetricsReport {
            system: system.to_string(),
            policy: policy.to_string(),
            calls: 0,
            dispatched_calls: 0,
            total_gas: 0,
            gas_per_call_mean: 0.0,
            ether_per_call_mean: 0.0,
            gas_per_call_series: Vec::new(),
            period_windows: 200,
            batch_sizes: BTreeMap::new(),
            batches_formed: 0,
            per_batch_gas: Vec::new(),
            windows_total: 0,
            windows_batched: 0,
            block_delays: BTreeMap::new(),
            block_delay_mean: 0.0,
        }
    }

    pub fn mean_batch_size(&self) -> f64 {
        if self.batches_formed == 0 {
            return 0.0;
        }
        let total: usize = self.batch_sizes.iter().map(|(size, n)| size * n).sum();
        total as f64 / self.batches_formed as f64
    }

    /// `metric,name,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,name,value\n");
        let mut push = |metric: &str, name: &str, value: String| {
            out.push_str(metric);
            out.push(',');
            out.push_str(name);
            out.push(',');
            out.push_str(&value);
            out.push('\n');
        };
        push("system", "", self.system.clone());
        push("policy", "", self.policy.clone());
        push("calls", "total", self.calls.to_string());
        push("calls", "dispatched", self.dispatched_calls.to_string());
        push("gas", "total", self.total_gas.to_string());
        push(
            "gas_per_call",
            "mean",
            format!("{:.6}", self.gas_per_call_mean),
        );
        push(
            "ether_per_call",
            "mean_gwei",
            format!("{:.6}", self.ether_per_call_mean),
        );
        for (i, v) in self.gas_per_call_series.iter().enumerate() {
            push(
                "gas_per_call_series",
                &format!("period_{i}"),
                format!("{v:.6}"),
            );
        }
        push("batches", "formed", self.batches_formed.to_string());
        push(
            "batches",
            "mean_size",
            format!("{:.6}", self.mean_batch_size()),
        );
        for (size, n) in &self.batch_sizes {
            push(
                "batch_size_histogram",
                &format!("size_{size}"),
                n.to_string(),
            );
        }
        for (i, g) in self.per_batch_gas.iter().enumerate() {
            push("batch_gas", &format!("batch_{i}"), g.to_string());
        }
        push("windows", "total", self.windows_total.to_string());
        push("windows", "batched", self.windows_batched.to_string());
        push(
            "block_delay",
            "mean",
            format!("{:.6}", self.block_delay_mean),
        );
        for (delay, n) in &self.block_delays {
            push(
                "block_delay_histogram",
                &format!("delay_{delay}"),
                n.to_string(),
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_totals_match_counts() {
        let mut r = MetricsReport::new("ibatch", "120sec-min5");
        r.batch_sizes.insert(5, 3);
        r.batch_sizes.insert(8, 1);
        r.batches_formed = 4;
        assert!((r.mean_batch_size() - 23.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn csv_is_stable() {
        let mut r = MetricsReport::new("b0", "none");
        r.calls = 3;
        r.gas_per_call_mean = 21000.0;
        assert_eq!(r.to_csv(), r.clone().to_csv());
        assert!(r.to_csv().contains("gas_per_call,mean,21000.000000\n"));
    }
}
