//! Batching decision engine: window policies (batch-all, top1, minimum
//! size), the one-block online mechanism (threshold eviction against the
//! txpool plus dynamic pricing), and the offline-optimal oracle.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::core::{Address, Invocation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("a single invocation's gas exceeds the block gas limit")]
    Oversize,
    #[error("pricing needs a non-empty price multiset")]
    PricingError,
    #[error("{0}")]
    BadSpec(String),
}

/// How the batch transaction's gas price is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PricingPolicy {
    Fixed(u64),
    /// Above `X%` of the invocation prices in the batch.
    BatchPct(u8),
    /// Above `X%` of all transaction prices in the target block, the
    /// batch's invocations included.
    BlockPct(u8),
}

impl PricingPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        match self {
            PricingPolicy::BatchPct(x) | PricingPolicy::BlockPct(x) => {
                if *x == 0 || *x > 100 {
                    return Err(PolicyError::BadSpec(format!(
                        "pricing percentile {x} outside (0, 100]"
                    )));
                }
                Ok(())
            }
            PricingPolicy::Fixed(_) => Ok(()),
        }
    }

    pub fn parse(s: &str) -> Option<PricingPolicy> {
        let (kind, value) = s.split_once(':')?;
        let value: u64 = value.parse().ok()?;
        Some(match kind {
            "batch" => PricingPolicy::BatchPct(value.try_into().ok()?),
            "block" => PricingPolicy::BlockPct(value.try_into().ok()?),
            "fixed" => PricingPolicy::Fixed(value),
            _ => return None,
        })
    }

    pub fn name(&self) -> String {
        match self {
            PricingPolicy::Fixed(p) => format!("fixed:{p}"),
            PricingPolicy::BatchPct(x) => format!("batch:{x}"),
            PricingPolicy::BlockPct(x) => format!("block:{x}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    /// Batch what arrived in each fixed window.
    Windowed,
    /// Evict from the buffer `d` seconds after every block.
    OneBlock,
}

/// Batching configuration.
#[derive(Debug, Clone, Copy)]
pub struct PolicySpec {
    pub mode: PolicyMode,
    /// Window length in seconds.
    pub window_s: u64,
    /// Restrict each window to the most intensive sender.
    pub top1: bool,
    /// Smallest batch worth forming; smaller selections fall back to
    /// dedicated transactions.
    pub min_batch: usize,
    /// Cap keeping one batch under the block gas limit.
    pub max_batch: usize,
    /// Post-block wait before eviction, one-block mode only.
    pub d_s: u64,
    pub pricing: PricingPolicy,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec {
            mode: PolicyMode::Windowed,
            window_s: 120,
            top1: false,
            min_batch: 5,
            max_batch: 60,
            d_s: 10,
            pricing: PricingPolicy::BatchPct(50),
        }
    }
}

impl PolicySpec {
    pub fn validate(&self, block_interval_s: u64) -> Result<(), PolicyError> {
        if self.min_batch < 1 {
            return Err(PolicyError::BadSpec("min_batch must be at least 1".into()));
        }
        if self.max_batch < self.min_batch {
            return Err(PolicyError::BadSpec("max_batch below min_batch".into()));
        }
        if self.mode == PolicyMode::OneBlock && self.d_s >= block_interval_s {
            return Err(PolicyError::BadSpec(format!(
                "post-block wait {}s must stay under the block interval {}s",
                self.d_s, block_interval_s
            )));
        }
        self.pricing.validate()
    }

    pub fn label(&self) -> String {
        match self.mode {
            PolicyMode::Windowed => {
                let mut s = format!("{}sec", self.window_s);
                if self.top1 {
                    s.push_str("-top1");
                } else {
                    s.push_str(&format!("-min{}", self.min_batch));
                }
                s
            }
            PolicyMode::OneBlock => format!("1block-d{}-{}", self.d_s, self.pricing.name()),
        }
    }
}

/// Picks the invocations of one window, by pool index in arrival order.
///
/// `None` means the window yields no batch and its calls fall back to
/// dedicated transactions.
pub fn select_windowed(
    pool: &[Invocation],
    spec: &PolicySpec,
    window_start_ms: u64,
    window_end_ms: u64,
) -> Option<Vec<usize>> {
    let mut candidates: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(_, inv)| {
            inv.submit_time_ms >= window_start_ms && inv.submit_time_ms < window_end_ms
        })
        .map(|(i, _)| i)
        .collect();

    if spec.top1 {
        let mut counts: BTreeMap<Address, usize> = BTreeMap::new();
        for &i in &candidates {
            *counts.entry(pool[i].caller).or_insert(0) += 1;
        }
        // Most intensive sender; ties go to the lexicographically
        // smallest address.
        let top = counts
            .iter()
            .max_by(|(a1, c1), (a2, c2)| c1.cmp(c2).then(a2.cmp(a1)))
            .map(|(a, _)| *a)?;
        candidates.retain(|&i| pool[i].caller == top);
    }

    if candidates.len() < spec.min_batch {
        return None;
    }
    candidates.truncate(spec.max_batch);
    Some(candidates)
}

/// One-block eviction: finds the smallest integer threshold `h` such that
/// the pooled transactions and buffered invocations priced above `h` fit
/// under the gas limit together, and returns the buffered invocations
/// above that threshold.
///
/// Inputs are `(gas_price, gas)` pairs; invocation gas comes from a
/// metered dry run. The degenerate everything-fits case yields `h = 0`.
pub fn bpool_evict(
    bpool: &[(u64, u64)],
    txpool: &[(u64, u64)],
    gas_limit: u64,
) -> Result<(Vec<usize>, u64), PolicyError> {
    if bpool.iter().any(|&(_, gas)| gas > gas_limit) {
        return Err(PolicyError::Oversize);
    }

    let total_above = |h: u64| -> u128 {
        let tx: u128 = txpool
            .iter()
            .filter(|&&(p, _)| p > h)
            .map(|&(_, g)| g as u128)
            .sum();
        let inv: u128 = bpool
            .iter()
            .filter(|&&(p, _)| p > h)
            .map(|&(_, g)| g as u128)
            .sum();
        tx + inv
    };

    let fits = |h: u64| total_above(h) <= gas_limit as u128;

    let h = if fits(0) {
        0
    } else {
        // The included set only changes at distinct price values, so the
        // smallest feasible integer threshold is one of them.
        let mut prices: Vec<u64> = txpool.iter().chain(bpool.iter()).map(|&(p, _)| p).collect();
        prices.sort_unstable();
        prices.dedup();
        *prices
            .iter()
            .find(|&&p| fits(p))
            .expect("the empty set always fits")
    };

    let selection: Vec<usize> = bpool
        .iter()
        .enumerate()
        .filter(|(_, &(p, _))| p > h)
        .map(|(i, _)| i)
        .collect();
    Ok((selection, h))
}

/// The ceiling-rank order statistic: the smallest element of the multiset
/// with at least `pct`% of the multiset less than or equal to it.
fn order_statistic(prices: &[u64], pct: u8) -> Result<u64, PolicyError> {
    if prices.is_empty() {
        return Err(PolicyError::PricingError);
    }
    let mut sorted = prices.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as u64;
    let rank = (u64::from(pct) * n).div_ceil(100).max(1);
    Ok(sorted[(rank - 1) as usize])
}

/// Prices a batch transaction.
///
/// `selection_prices` are the gas prices of the batched invocations;
/// `block_prices` the prices of the co-included block transactions
/// (without the invocations — they are merged in here for the block
/// percentile).
pub fn price_batch(
    selection_prices: &[u64],
    block_prices: &[u64],
    pricing: PricingPolicy,
) -> Result<u64, PolicyError> {
    pricing.validate()?;
    match pricing {
        PricingPolicy::Fixed(p) => Ok(p),
        PricingPolicy::BatchPct(x) => order_statistic(selection_prices, x),
        PricingPolicy::BlockPct(x) => {
            let mut all = block_prices.to_vec();
            all.extend_from_slice(selection_prices);
            order_statistic(&all, x)
        }
    }
}

/// Where the offline oracle put one group of calls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfflineAssignment {
    /// The block every call of this group lands in unbatched.
    pub block: u64,
    /// Call identifiers, as given.
    pub calls: Vec<usize>,
    /// Chosen batch gas price: just above the block's cheapest
    /// transaction, which guarantees same-block inclusion.
    pub gas_price: u64,
    /// False when the group stayed under the minimum batch size and falls
    /// back to dedicated transactions (also zero delay, by construction).
    pub batched: bool,
}

/// Offline-optimal batching: group calls by the block each would land in
/// unbatched and price every batch just above that block's minimum, so no
/// call is delayed.
pub fn offline_optimal(
    calls: &[(usize, u64)],
    block_min_price: &BTreeMap<u64, u64>,
    min_batch: usize,
) -> Vec<OfflineAssignment> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for &(id, block) in calls {
        groups.entry(block).or_default().push(id);
    }
    groups
        .into_iter()
        .map(|(block, calls)| {
            let batched = calls.len() >= min_batch;
            let gas_price = block_min_price.get(&block).map(|&p| p + 1).unwrap_or(1);
            OfflineAssignment {
                block,
                calls,
                gas_price,
                batched,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{Selector, Word};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inv(caller: u8, submit_s: u64, price: u64) -> Invocation {
        Invocation {
            caller: Address([caller; 20]),
            callee: Address([0xee; 20]),
            func: Selector::from_name("transfer"),
            args: vec![Word::from_u128(1)],
            caller_nonce: 0,
            gas_price: price,
            submit_time_ms: submit_s * 1000,
            origin_block: None,
        }
    }

    fn spec() -> PolicySpec {
        PolicySpec::default()
    }

    #[test]
    fn windowed_takes_all_above_minimum() {
        let pool: Vec<Invocation> = (0..6).map(|i| inv(i, 10 + i as u64, 5)).collect();
        let sel = select_windowed(&pool, &spec(), 0, 120_000).unwrap();
        assert_eq!(sel.len(), 6);
    }

    #[test]
    fn top1_restricts_to_most_intensive_sender() {
        // A×4, B×3: top1 picks A's four; with min_batch 5 that is no batch.
        let mut pool = Vec::new();
        for i in 0..4 {
            pool.push(inv(1, 10 + i, 5));
        }
        for i in 0..3 {
            pool.push(inv(2, 20 + i, 5));
        }
        let mut s = spec();
        s.top1 = true;
        s.min_batch = 1;
        let sel = select_windowed(&pool, &s, 0, 120_000).unwrap();
        assert_eq!(sel.len(), 4);
        assert!(sel.iter().all(|&i| pool[i].caller == Address([1; 20])));

        s.min_batch = 5;
        assert_eq!(select_windowed(&pool, &s, 0, 120_000), None);
    }

    #[test]
    fn top1_ties_break_to_smallest_address() {
        let pool = vec![inv(2, 1, 5), inv(1, 2, 5), inv(2, 3, 5), inv(1, 4, 5)];
        let mut s = spec();
        s.top1 = true;
        s.min_batch = 1;
        let sel = select_windowed(&pool, &s, 0, 120_000).unwrap();
        assert!(sel.iter().all(|&i| pool[i].caller == Address([1; 20])));
    }

    #[test]
    fn windowed_caps_at_max_batch() {
        let pool: Vec<Invocation> = (0..70).map(|i| inv((i % 9) as u8, i as u64, 5)).collect();
        let sel = select_windowed(&pool, &spec(), 0, 120_000).unwrap();
        assert_eq!(sel.len(), 60);
        // FIFO prefix.
        assert_eq!(sel, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn below_minimum_is_no_batch() {
        let pool: Vec<Invocation> = (0..3).map(|i| inv(i, 10, 5)).collect();
        assert_eq!(select_windowed(&pool, &spec(), 0, 120_000), None);
    }

    #[test]
    fn window_bounds_are_half_open() {
        let pool = vec![inv(1, 119, 5), inv(2, 120, 5)];
        let mut s = spec();
        s.min_batch = 1;
        let sel = select_windowed(&pool, &s, 0, 120_000).unwrap();
        assert_eq!(sel, vec![0]);
    }

    #[test]
    fn evict_degenerate_case_takes_everything() {
        let bpool = vec![(3u64, 30_000u64), (6, 30_000)];
        let txpool = vec![(4u64, 20_000u64)];
        let (sel, h) = bpool_evict(&bpool, &txpool, 1_000_000).unwrap();
        assert_eq!(h, 0);
        assert_eq!(sel, vec![0, 1]);
    }

    #[test]
    fn evict_toy_case_matches_hand_threshold() {
        // limit 100k; txpool (price 4, 60k); bpool (3, 30k), (6, 30k).
        let bpool = vec![(3u64, 30_000u64), (6, 30_000)];
        let txpool = vec![(4u64, 60_000u64)];
        let (sel, h) = bpool_evict(&bpool, &txpool, 100_000).unwrap();
        assert_eq!(h, 3);
        assert_eq!(sel, vec![1]);
    }

    #[test]
    fn overfull_txpool_can_leave_nothing_to_evict() {
        let bpool = vec![(2u64, 30_000u64)];
        let txpool = vec![(9u64, 150_000u64), (8, 40_000)];
        let (sel, h) = bpool_evict(&bpool, &txpool, 100_000).unwrap();
        assert!(h >= 2, "h={h}");
        assert!(sel.is_empty());
    }

    #[test]
    fn oversize_invocation_is_an_error() {
        let bpool = vec![(5u64, 2_000_000u64)];
        assert_eq!(
            bpool_evict(&bpool, &[], 1_000_000).unwrap_err(),
            PolicyError::Oversize
        );
    }

    #[test]
    fn evict_agrees_with_brute_force_on_random_pools() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..200 {
            let limit = rng.gen_range(50_000..400_000u64);
            let bpool: Vec<(u64, u64)> = (0..rng.gen_range(0..20))
                .map(|_| (rng.gen_range(1..30), rng.gen_range(1_000..50_000)))
                .collect();
            let txpool: Vec<(u64, u64)> = (0..rng.gen_range(0..20))
                .map(|_| (rng.gen_range(1..30), rng.gen_range(1_000..50_000)))
                .collect();
            if bpool.iter().any(|&(_, g)| g > limit) {
                continue;
            }
            let (sel, h) = bpool_evict(&bpool, &txpool, limit).unwrap();

            // Oracle: scan every integer threshold from zero.
            let total = |hh: u64| -> u128 {
                txpool
                    .iter()
                    .chain(bpool.iter())
                    .filter(|&&(p, _)| p > hh)
                    .map(|&(_, g)| g as u128)
                    .sum()
            };
            let mut oracle_h = 0;
            while total(oracle_h) > limit as u128 {
                oracle_h += 1;
            }
            assert_eq!(h, oracle_h, "case {case}");
            let oracle_sel: Vec<usize> = bpool
                .iter()
                .enumerate()
                .filter(|(_, &(p, _))| p > oracle_h)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(sel, oracle_sel, "case {case}");
        }
    }

    #[test]
    fn pricing_worked_example() {
        let invocations = [8u64, 9, 10];
        let block = [1u64, 2, 3, 4, 5, 6, 7];
        assert_eq!(
            price_batch(&invocations, &[], PricingPolicy::BatchPct(50)).unwrap(),
            9
        );
        assert_eq!(
            price_batch(&invocations, &block, PricingPolicy::BlockPct(10)).unwrap(),
            1
        );
        assert_eq!(
            price_batch(&invocations, &[], PricingPolicy::BatchPct(100)).unwrap(),
            10
        );
    }

    #[test]
    fn pricing_rejects_empty_input() {
        assert_eq!(
            price_batch(&[], &[], PricingPolicy::BatchPct(50)).unwrap_err(),
            PolicyError::PricingError
        );
    }

    #[test]
    fn pricing_is_monotone_in_the_percentile() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let prices: Vec<u64> = (0..rng.gen_range(1..30))
                .map(|_| rng.gen_range(1..100))
                .collect();
            let mut last = 0;
            for x in [10u8, 25, 50, 75, 100] {
                let p = price_batch(&prices, &[], PricingPolicy::BatchPct(x)).unwrap();
                assert!(p >= last, "x={x} p={p} last={last}");
                last = p;
            }
        }
    }

    #[test]
    fn offline_oracle_groups_by_block_and_underprices_nothing() {
        let calls = vec![(0usize, 5u64), (1, 5), (2, 7), (3, 5), (4, 9)];
        let mut mins = BTreeMap::new();
        mins.insert(5u64, 12u64);
        mins.insert(7, 3);
        mins.insert(9, 30);
        let got = offline_optimal(&calls, &mins, 2);
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].block, 5);
        assert_eq!(got[0].calls, vec![0, 1, 3]);
        assert_eq!(got[0].gas_price, 13);
        assert!(got[0].batched);
        assert!(!got[1].batched); // single call in block 7
        assert_eq!(got[2].gas_price, 31);
    }

    #[test]
    fn spec_validation() {
        let mut s = spec();
        assert!(s.validate(13).is_ok());
        s.max_batch = 2;
        assert!(s.validate(13).is_err());
        let mut s = spec();
        s.mode = PolicyMode::OneBlock;
        s.d_s = 20;
        assert!(s.validate(13).is_err());
        s.d_s = 10;
        assert!(s.validate(13).is_ok());
        assert!(PricingPolicy::BatchPct(0).validate().is_err());
        assert!(PricingPolicy::BlockPct(101).validate().is_err());
    }

    #[test]
    fn pricing_parse_round_trip() {
        for s in ["batch:50", "block:10", "fixed:42"] {
            assert_eq!(PricingPolicy::parse(s).unwrap().name(), s);
        }
        assert_eq!(PricingPolicy::parse("nope:1"), None);
    }
}
