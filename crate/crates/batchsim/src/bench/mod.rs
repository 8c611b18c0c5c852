//! Trace ingestion, synthetic workload generation, the replay engines,
//! and metric computation.
//!
//! Two replay engines cover the two halves of the evaluation: the
//! full-chain engine drives submissions through the protocol, policies,
//! Dispatcher, and block production to measure gas; the fee-market engine
//! replays against a background block trace with the inclusion rule to
//! measure Ether cost and block delay under the pricing policies.

mod feemarket;
mod metrics;
mod replay;
mod synth;
mod trace;

pub use feemarket::{
    gen_fee_market, replay_fee_market, DelayPolicy, DelayReport, FeeMarketCall, FeeMarketSpec,
};
pub use metrics::MetricsReport;
pub use replay::{
    replay, replay_with_history, ReplayConfig, ReplayError, SystemKind, ERC20_TRANSFER_Y,
};
pub use synth::{
    gen_synthetic, synth_callee_address, ArrivalMode, CalleeKind, SynthSpec, SYNTH_RECEIVER,
};
pub use trace::{load_trace, parse_trace, trace_to_csv, ParseError, TraceRecord, TRACE_HEADER};

use std::collections::BTreeMap;

/// Cumulative distribution of blocks by their per-block call count,
/// bucketed the way the motivating workload study presents it. The raw
/// per-block counts are retained for downstream estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CallsPerBlockCdf {
    /// Calls per block, keyed by block height; only blocks the trace
    /// names are counted.
    pub block_counts: BTreeMap<u64, u64>,
    /// `(label, fraction)` per bucket; fractions sum to 1 when any block
    /// was observed.
    pub buckets: Vec<(&'static str, f64)>,
}

pub const CDF_BUCKET_LABELS: [&str; 6] = ["<=1", "(1,2]", "(2,5]", "(5,10]", "(10,20]", ">20"];

/// Buckets the trace's origin blocks by call count, optionally filtered to
/// one callee.
pub fn calls_per_block_cdf(
    trace: &[TraceRecord],
    callee_filter: Option<crate::core::Address>,
) -> CallsPerBlockCdf {
    let mut block_counts: BTreeMap<u64, u64> = BTreeMap::new();
    for rec in trace {
        if let Some(filter) = callee_filter {
            if rec.callee != filter {
                continue;
            }
        }
        if let Some(block) = rec.origin_block {
            *block_counts.entry(block).or_insert(0) += 1;
        }
    }
    let total = block_counts.len() as f64;
    let mut tallies = [0u64; 6];
    for &count in block_counts.values() {
        let idx = match count {
            0..=1 => 0,
            2 => 1,
            3..=5 => 2,
            6..=10 => 3,
            11..=20 => 4,
            _ => 5,
        };
        tallies[idx] += 1;
    }
    let buckets = CDF_BUCKET_LABELS
        .iter()
        .zip(tallies)
        .map(|(&label, n)| (label, if total > 0.0 { n as f64 / total } else { 0.0 }))
        .collect();
    CallsPerBlockCdf {
        block_counts,
        buckets,
    }
}

/// Expected fraction of total cost saved by batching the calls that
/// already share a block: a block with `k` calls saves `k−1` of its `k`
/// per-transaction fees, weighted by `fee_share`, the fee fraction of the
/// overall cost.
pub fn expected_saving_from_cdf(cdf: &CallsPerBlockCdf, fee_share: f64) -> f64 {
    let total_calls: u64 = cdf.block_counts.values().sum();
    if total_calls == 0 {
        return 0.0;
    }
    let saved: u64 = cdf.block_counts.values().map(|&k| k - 1).sum();
    fee_share * saved as f64 / total_calls as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{Address, Selector};

    fn rec(block: u64, callee: u8) -> TraceRecord {
        TraceRecord {
            submit_time_ms: block * 13_000,
            origin_block: Some(block),
            caller: Address([1; 20]),
            callee: Address([callee; 20]),
            func: Selector::from_name("transfer"),
            args: vec![],
            gas_price: 5,
            measured_gas: None,
        }
    }

    #[test]
    fn single_call_blocks_all_land_in_first_bucket() {
        let trace: Vec<TraceRecord> = (0..10).map(|b| rec(b, 0xee)).collect();
        let cdf = calls_per_block_cdf(&trace, None);
        assert_eq!(cdf.buckets[0], ("<=1", 1.0));
        assert!((cdf.buckets.iter().map(|(_, f)| f).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_built_distribution() {
        // Blocks with 1, 3, and 6 calls.
        let mut trace = vec![rec(0, 0xee)];
        trace.extend((0..3).map(|_| rec(1, 0xee)));
        trace.extend((0..6).map(|_| rec(2, 0xee)));
        let cdf = calls_per_block_cdf(&trace, None);
        let third = 1.0 / 3.0;
        assert!((cdf.buckets[0].1 - third).abs() < 1e-12); // the 1-call block
        assert!((cdf.buckets[2].1 - third).abs() < 1e-12); // (2,5] holds 3
        assert!((cdf.buckets[3].1 - third).abs() < 1e-12); // (5,10] holds 6
    }

    #[test]
    fn empty_trace_is_an_empty_cdf() {
        let cdf = calls_per_block_cdf(&[], None);
        assert!(cdf.block_counts.is_empty());
        assert!(cdf.buckets.iter().all(|&(_, f)| f == 0.0));
    }

    #[test]
    fn callee_filter_restricts_counting() {
        let mut trace = vec![rec(0, 0xee), rec(0, 0xee)];
        trace.push(rec(0, 0x11));
        let cdf = calls_per_block_cdf(&trace, Some(Address([0xee; 20])));
        assert_eq!(cdf.block_counts[&0], 2);
    }

    #[test]
    fn saving_limit_cases() {
        let trace: Vec<TraceRecord> = (0..4).map(|b| rec(b, 0xee)).collect();
        let cdf = calls_per_block_cdf(&trace, None);
        assert_eq!(expected_saving_from_cdf(&cdf, 1.0), 0.0);

        let trace: Vec<TraceRecord> = (0..20).map(|_| rec(0, 0xee)).collect();
        let cdf = calls_per_block_cdf(&trace, None);
        assert!((expected_saving_from_cdf(&cdf, 1.0) - 19.0 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn saving_matches_hand_computation_on_mixed_blocks() {
        // Blocks of 1, 3, 6 calls: saving = (0 + 2 + 5) / 10.
        let mut trace = vec![rec(0, 0xee)];
        trace.extend((0..3).map(|_| rec(1, 0xee)));
        trace.extend((0..6).map(|_| rec(2, 0xee)));
        let cdf = calls_per_block_cdf(&trace, None);
        assert!((expected_saving_from_cdf(&cdf, 1.0) - 0.7).abs() < 1e-12);
        assert!((expected_saving_from_cdf(&cdf, 0.5) - 0.35).abs() < 1e-12);
    }
}
