//! Fee-market replay: Ether cost and block delay under the inclusion
//! rule, against a synthetic background block trace.
//!
//! This engine does not execute contracts. Each call's unbatched baseline
//! is the first background block after its submission containing a
//! transaction priced below the call's own gas price; batches follow the
//! same rule at the batch's price from its formation time. Gas amounts
//! come from the analytic cost forms, so the engine isolates the pricing
//! and timing behavior of the policies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chainsim::{replay_inclusion_block, TraceBlock};
use crate::costmodel::GasCostModel;
use crate::policy::{bpool_evict, offline_optimal, price_batch, PricingPolicy};

use super::trace::TraceRecord;

/// Background fee market: `blocks` blocks at a fixed cadence, each with
/// `txs_per_block` transactions priced uniformly in the given range.
#[derive(Debug, Clone, Copy)]
pub struct FeeMarketSpec {
    pub blocks: usize,
    pub block_interval_ms: u64,
    pub txs_per_block: usize,
    pub price_min: u64,
    pub price_max: u64,
    pub seed: u64,
}

impl Default for FeeMarketSpec {
    fn default() -> Self {
        FeeMarketSpec {
            blocks: 400,
            block_interval_ms: crate::chainsim::DEFAULT_BLOCK_INTERVAL_MS,
            txs_per_block: 8,
            price_min: 1,
            price_max: 60,
            seed: 1,
        }
    }
}

pub fn gen_fee_market(spec: &FeeMarketSpec) -> Vec<TraceBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xfee);
    (0..spec.blocks)
        .map(|i| TraceBlock {
            height: i as u64,
            timestamp_ms: (i as u64 + 1) * spec.block_interval_ms,
            tx_gas_prices: (0..spec.txs_per_block)
                .map(|_| rng.gen_range(spec.price_min..=spec.price_max))
                .collect(),
        })
        .collect()
}

/// One call as the fee-market engine sees it.
#[derive(Debug, Clone, Copy)]
pub struct FeeMarketCall {
    pub submit_time_ms: u64,
    pub gas_price: u64,
    pub arg_words: u64,
}

impl From<&TraceRecord> for FeeMarketCall {
    fn from(rec: &TraceRecord) -> FeeMarketCall {
        FeeMarketCall {
            submit_time_ms: rec.submit_time_ms,
            gas_price: rec.gas_price,
            arg_words: rec.args.len() as u64,
        }
    }
}

/// Batching discipline under the fee-market engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayPolicy {
    /// Hold calls until the end of their window.
    Windowed { window_s: u64 },
    /// Evict the buffer `d` seconds after every background block, using
    /// the threshold heuristic against the upcoming block as the txpool
    /// view.
    OneBlock { d_s: u64 },
    /// Oracle: group calls by their unbatched block and price each batch
    /// just above that block's minimum.
    OfflineOptimal,
}

#[derive(Debug, Clone)]
pub struct DelayReport {
    pub calls: usize,
    /// Per-call block delay, for calls whose baseline and actual inclusion
    /// both exist.
    pub delays: Vec<i64>,
    pub mean_delay: f64,
    /// Gwei per call.
    pub ether_per_call_mean: f64,
    pub batches: usize,
    pub batched_calls: usize,
    /// Calls whose transaction found no inclusion within the horizon.
    pub unincluded: usize,
}

impl DelayReport {
    fn finish(mut self) -> DelayReport {
        if !self.delays.is_empty() {
            self.mean_delay = self.delays.iter().sum::<i64>() as f64 / self.delays.len() as f64;
        }
        self
    }
}

fn per_entry_gas(model: &GasCostModel, arg_words: u64, callee_y: u64) -> u64 {
    model.batch_entry_data_gas(arg_words)
        + model.sig_verify
        + model.internal_call_gas(arg_words + 1)
        + callee_y
}

fn b0_gas(model: &GasCostModel, arg_words: u64, callee_y: u64) -> u64 {
    model.transaction_gas(arg_words) + callee_y
}

struct Accounting {
    delays: Vec<i64>,
    ether_total: f64,
    ether_calls: usize,
    batches: usize,
    batched_calls: usize,
    unincluded: usize,
}

impl Accounting {
    fn new() -> Accounting {
        Accounting {
            delays: Vec::new(),
            ether_total: 0.0,
            ether_calls: 0,
            batches: 0,
            batched_calls: 0,
            unincluded: 0,
        }
    }

    fn record_b0(
        &mut self,
        bg: &[TraceBlock],
        call: &FeeMarketCall,
        send_time_ms: u64,
        baseline: Option<u64>,
        model: &GasCostModel,
        callee_y: u64,
    ) {
        let gas = b0_gas(model, call.arg_words, callee_y);
        self.ether_total += gas as f64 * call.gas_price as f64;
        self.ether_calls += 1;
        match (
            replay_inclusion_block(bg, send_time_ms, call.gas_price).ok(),
            baseline,
        ) {
            (Some(actual), Some(base)) => {
                self.delays.push(crate::chainsim::block_delay(actual, base))
            }
            _ => self.unincluded += 1,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record_batch(
        &mut self,
        bg: &[TraceBlock],
        members: &[(usize, FeeMarketCall)],
        baselines: &[Option<u64>],
        send_time_ms: u64,
        batch_price: u64,
        model: &GasCostModel,
        callee_y: u64,
    ) {
        let n = members.len() as u64;
        let batch_gas: u64 = model.tx_base
            + members
                .iter()
                .map(|(_, c)| per_entry_gas(model, c.arg_words, callee_y))
                .sum::<u64>();
        let per_call_ether = batch_gas as f64 * batch_price as f64 / n as f64;
        let inclusion = replay_inclusion_block(bg, send_time_ms, batch_price).ok();
        for (idx, _) in members {
            self.ether_total += per_call_ether;
            self.ether_calls += 1;
            match (inclusion, baselines[*idx]) {
                (Some(actual), Some(base)) => {
                    self.delays.push(crate::chainsim::block_delay(actual, base))
                }
                _ => self.unincluded += 1,
            }
        }
        self.batches += 1;
        self.batched_calls += members.len();
    }

    fn into_report(self, calls: usize) -> DelayReport {
        DelayReport {
            calls,
            delays: self.delays,
            mean_delay: 0.0,
            ether_per_call_mean: if self.ether_calls > 0 {
                self.ether_total / self.ether_calls as f64
            } else {
                0.0
            },
            batches: self.batches,
            batched_calls: self.batched_calls,
            unincluded: self.unincluded,
        }
        .finish()
    }
}

/// Replays the calls against the background trace under one policy and
/// pricing configuration.
#[allow(clippy::too_many_arguments)]
pub fn replay_fee_market(
    calls: &[FeeMarketCall],
    bg: &[TraceBlock],
    policy: DelayPolicy,
    pricing: PricingPolicy,
    min_batch: usize,
    max_batch: usize,
    callee_y: u64,
    model: &GasCostModel,
    gas_limit: u64,
) -> DelayReport {
    // Baseline inclusion of every call sent unbatched at submission time.
    let baselines: Vec<Option<u64>> = calls
        .iter()
        .map(|c| replay_inclusion_block(bg, c.submit_time_ms, c.gas_price).ok())
        .collect();

    let next_block_after = |t_ms: u64| bg.iter().find(|b| b.timestamp_ms > t_ms);

    let mut acc = Accounting::new();

    match policy {
        DelayPolicy::Windowed { window_s } => {
            let window_ms = window_s * 1000;
            let mut by_window: std::collections::BTreeMap<u64, Vec<(usize, FeeMarketCall)>> =
                Default::default();
            for (i, c) in calls.iter().enumerate() {
                by_window
                    .entry(c.submit_time_ms / window_ms)
                    .or_default()
                    .push((i, *c));
            }
            for (window, mut members) in by_window {
                let send_time = (window + 1) * window_ms;
                if members.len() < min_batch {
                    for (i, c) in members {
                        acc.record_b0(bg, &c, send_time, baselines[i], model, callee_y);
                    }
                    continue;
                }
                let overflow = members.split_off(members.len().min(max_batch));
                let prices: Vec<u64> = members.iter().map(|(_, c)| c.gas_price).collect();
                let context: Vec<u64> = next_block_after(send_time)
                    .map(|b| b.tx_gas_prices.clone())
                    .unwrap_or_default();
                let batch_price =
                    price_batch(&prices, &context, pricing).unwrap_or_else(|_| prices[0]);
                acc.record_batch(
                    bg,
                    &members,
                    &baselines,
                    send_time,
                    batch_price,
                    model,
                    callee_y,
                );
                for (i, c) in overflow {
                    acc.record_b0(bg, &c, send_time, baselines[i], model, callee_y);
                }
            }
        }

        DelayPolicy::OneBlock { d_s } => {
            let mut buffered: Vec<(usize, FeeMarketCall)> = Vec::new();
            let mut cursor = 0usize;
            for block in bg {
                let evict_time = block.timestamp_ms + d_s * 1000;
                while cursor < calls.len() && calls[cursor].submit_time_ms <= evict_time {
                    buffered.push((cursor, calls[cursor]));
                    cursor += 1;
                }
                if buffered.is_empty() {
                    continue;
                }
                // The upcoming block's transactions stand in for the
                // txpool the eviction heuristic reads.
                let txpool: Vec<(u64, u64)> = next_block_after(evict_time)
                    .map(|b| {
                        b.tx_gas_prices
                            .iter()
                            .map(|&p| (p, model.tx_base))
                            .collect()
                    })
                    .unwrap_or_default();
                let pool: Vec<(u64, u64)> = buffered
                    .iter()
                    .map(|(_, c)| (c.gas_price, per_entry_gas(model, c.arg_words, callee_y)))
                    .collect();
                let (selected, _h) = match bpool_evict(&pool, &txpool, gas_limit) {
                    Ok(r) => r,
                    Err(_) => continue,
                };
                if selected.len() < min_batch {
                    continue;
                }
                let selected: Vec<usize> = selected.into_iter().take(max_batch).collect();
                let members: Vec<(usize, FeeMarketCall)> =
                    selected.iter().map(|&i| buffered[i]).collect();
                let prices: Vec<u64> = members.iter().map(|(_, c)| c.gas_price).collect();
                let context: Vec<u64> = next_block_after(evict_time)
                    .map(|b| b.tx_gas_prices.clone())
                    .unwrap_or_default();
                let batch_price =
                    price_batch(&prices, &context, pricing).unwrap_or_else(|_| prices[0]);
                acc.record_batch(
                    bg,
                    &members,
                    &baselines,
                    evict_time,
                    batch_price,
                    model,
                    callee_y,
                );
                let selected_set: std::collections::BTreeSet<usize> =
                    selected.into_iter().collect();
                buffered = buffered
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| !selected_set.contains(i))
                    .map(|(_, m)| m)
                    .collect();
            }
            // Whatever never got evicted goes out unbatched at the end of
            // the horizon.
            let horizon = bg.last().map(|b| b.timestamp_ms).unwrap_or(0);
            for (i, c) in buffered {
                acc.record_b0(bg, &c, horizon, baselines[i], model, callee_y);
            }
        }

        DelayPolicy::OfflineOptimal => {
            // Group calls by their baseline block; calls without a
            // baseline stay unbatched at submission time.
            let mut grouped: Vec<(usize, u64)> = Vec::new();
            for (i, base) in baselines.iter().enumerate() {
                match base {
                    Some(b) => grouped.push((i, *b)),
                    None => acc.record_b0(
                        bg,
                        &calls[i],
                        calls[i].submit_time_ms,
                        None,
                        model,
                        callee_y,
                    ),
                }
            }
            let block_min: std::collections::BTreeMap<u64, u64> = bg
                .iter()
                .filter_map(|b| b.tx_gas_prices.iter().min().map(|&m| (b.height, m)))
                .collect();
            for assignment in offline_optimal(&grouped, &block_min, min_batch) {
                // Submitting right after the preceding block makes the
                // target the first candidate.
                let send_time = if assignment.block == 0 {
                    0
                } else {
                    bg[assignment.block as usize - 1].timestamp_ms
                };
                if assignment.batched {
                    let members: Vec<(usize, FeeMarketCall)> =
                        assignment.calls.iter().map(|&i| (i, calls[i])).collect();
                    acc.record_batch(
                        bg,
                        &members,
                        &baselines,
                        send_time,
                        assignment.gas_price,
                        model,
                        callee_y,
                    );
                } else {
                    for &i in &assignment.calls {
                        acc.record_b0(
                            bg,
                            &calls[i],
                            calls[i].submit_time_ms,
                            baselines[i],
                            model,
                            callee_y,
                        );
                    }
                }
            }
        }
    }

    acc.into_report(calls.len())
}
