//! Deterministic synthetic workload generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core::{Address, Selector, Word};
use crate::identity::{keygen, Keystore};

use super::trace::TraceRecord;

/// How call arrival times are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalMode {
    /// Poisson arrivals at `rate_per_s` calls per second.
    Poisson { rate_per_s: f64 },
    /// Exactly `per_window` calls in every window, evenly spaced; the
    /// fixed-batch-size methodology.
    FixedBatch { per_window: usize },
}

/// Which bundled callee the workload drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalleeKind {
    /// The ERC20 fixture's `transfer(to, value)` with update-only effects.
    Erc20,
    /// The constant-cost callee's `work(..)` with `args` unused words.
    ConstantCost { args: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub mode: ArrivalMode,
    pub duration_s: u64,
    /// Window used by the fixed-batch mode (and by batching policies
    /// downstream).
    pub window_s: u64,
    pub callers: usize,
    pub callees: usize,
    pub price_min: u64,
    pub price_max: u64,
    pub seed: u64,
    pub callee_kind: CalleeKind,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            mode: ArrivalMode::Poisson { rate_per_s: 0.1 },
            duration_s: 1200,
            window_s: 120,
            callers: 8,
            callees: 1,
            price_min: 4,
            price_max: 20,
            seed: 1,
            callee_kind: CalleeKind::Erc20,
        }
    }
}

/// Address of the `i`-th synthetic callee contract.
pub fn synth_callee_address(i: usize) -> Address {
    let mut bytes = [0xe0u8; 20];
    bytes[18] = (i >> 8) as u8;
    bytes[19] = i as u8;
    Address(bytes)
}

/// Fixed sink receiving synthetic token transfers.
pub const SYNTH_RECEIVER: Address = Address([0x77; 20]);

/// Generates a trace and its keystore. Identical specs yield identical
/// traces.
pub fn gen_synthetic(spec: &SynthSpec) -> (Vec<TraceRecord>, Keystore) {
    assert!(spec.callers > 0, "need at least one caller");
    assert!(spec.callees > 0, "need at least one callee");
    assert!(spec.price_min > 0 && spec.price_min <= spec.price_max);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut keystore = Keystore::new();
    let mut caller_addrs = Vec::with_capacity(spec.callers);
    for i in 0..spec.callers {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&spec.seed.to_be_bytes());
        seed[8..16].copy_from_slice(&(i as u64 + 1).to_be_bytes());
        seed[16] = 0xca;
        let kp = keygen(&seed).expect("nonzero seed");
        caller_addrs.push(kp.address);
        keystore.add(kp);
    }

    // Arrival times in milliseconds.
    let mut times: Vec<u64> = Vec::new();
    match spec.mode {
        ArrivalMode::Poisson { rate_per_s } => {
            if rate_per_s > 0.0 {
                let mut t = 0.0f64;
                loop {
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    t += -u.ln() / rate_per_s;
                    if t >= spec.duration_s as f64 {
                        break;
                    }
                    times.push((t * 1000.0) as u64);
                }
            }
        }
        ArrivalMode::FixedBatch { per_window } => {
            let windows = spec.duration_s / spec.window_s;
            let window_ms = spec.window_s * 1000;
            for w in 0..windows {
                for k in 0..per_window {
                    // Spread inside the window, strictly before its end.
                    let offset = (k as u64 * window_ms) / (per_window as u64 + 1);
                    times.push(w * window_ms + offset);
                }
            }
        }
    }
    times.sort_unstable();

    let block_interval_ms = crate::chainsim::DEFAULT_BLOCK_INTERVAL_MS;
    let records = times
        .iter()
        .map(|&t| {
            let caller = caller_addrs[rng.gen_range(0..caller_addrs.len())];
            let callee = synth_callee_address(rng.gen_range(0..spec.callees));
            let gas_price = rng.gen_range(spec.price_min..=spec.price_max);
            let (func, args) = match spec.callee_kind {
                CalleeKind::Erc20 => (
                    Selector::from_name("transfer"),
                    vec![
                        SYNTH_RECEIVER.to_word(),
                        Word::from_u128(rng.gen_range(1..100u128)),
                    ],
                ),
                CalleeKind::ConstantCost { args } => (
                    Selector::from_name("work"),
                    (0..args)
                        .map(|_| Word::from_u128(rng.gen_range(0..1u128 << 60)))
                        .collect(),
                ),
            };
            TraceRecord {
                submit_time_ms: t,
                origin_block: Some(t / block_interval_ms),
                caller,
                callee,
                func,
                args,
                gas_price,
                measured_gas: None,
            }
        })
        .collect();

    (records, keystore)
}
