//! Trace replay through the full stack: protocol, policy, Dispatcher, and
//! block production, with per-call gas and ether accounting.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::chainsim::{ChainState, Route, SubmitError, SubmitOutcome, TxId};
use crate::core::{
    assemble_batch_tx, encode_plain_call_data, Address, BatchEntry, BatchMessage, BatchTransaction,
    Invocation, ProtocolError, Transaction, Word,
};
use crate::costmodel::GasCostModel;
use crate::dispatcher::{b2_entry_message, ideal_entry_message, ContractAccount, DispatchMode};
use crate::identity::{Keystore, Signature};
use crate::policy::{
    bpool_evict, price_batch, select_windowed, PolicyError, PolicyMode, PolicySpec,
};
use crate::protocol::CallerAgent;
use crate::rewriter::{fixtures, rewrite};

use super::synth::{CalleeKind, SYNTH_RECEIVER};
use super::trace::TraceRecord;
use super::MetricsReport;

/// Callee execution gas of the ERC20 fixture's update-only `transfer`:
/// one blacklist read plus a read/update pair per balance cell.
pub const ERC20_TRANSFER_Y: u64 = 200 + 2 * (200 + 5000);

/// Which scheme serves the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SystemKind {
    /// Dedicated transaction per call.
    B0,
    /// Jointly signed batching against rewritten callees.
    IBatch,
    /// Same, with callee bodies executed inside the Dispatcher.
    Inlined,
    /// Allowance-based batching against unmodified callees.
    B1,
    /// Batching with on-chain per-caller nonces.
    B2,
    /// Per-entry signatures without replay defense.
    Ideal,
}

impl SystemKind {
    pub fn parse(s: &str) -> Option<SystemKind> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "b0" => SystemKind::B0,
            "ibatch" => SystemKind::IBatch,
            "inlined" => SystemKind::Inlined,
            "b1" => SystemKind::B1,
            "b2" => SystemKind::B2,
            "ideal" => SystemKind::Ideal,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::B0 => "b0",
            SystemKind::IBatch => "ibatch",
            SystemKind::Inlined => "inlined",
            SystemKind::B1 => "b1",
            SystemKind::B2 => "b2",
            SystemKind::Ideal => "ideal",
        }
    }

    fn dispatch_mode(&self) -> DispatchMode {
        match self {
            SystemKind::B0 => DispatchMode::BaselineB0,
            SystemKind::IBatch => DispatchMode::IBatch,
            SystemKind::Inlined => DispatchMode::IBatchInlined,
            SystemKind::B1 => DispatchMode::BaselineB1,
            SystemKind::B2 => DispatchMode::BaselineB2,
            SystemKind::Ideal => DispatchMode::IdealNoReplayDefense,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayConfig {
    pub policy: PolicySpec,
    pub model: GasCostModel,
    pub gas_limit: u64,
    pub block_interval_ms: u64,
    /// Windows per reporting period of the gas series.
    pub period_windows: usize,
    pub callee_kind: CalleeKind,
    /// Also run an internal unbatched baseline to fill in block delays.
    pub compute_delays: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            policy: PolicySpec::default(),
            model: GasCostModel::default(),
            gas_limit: crate::chainsim::DEFAULT_GAS_LIMIT,
            block_interval_ms: crate::chainsim::DEFAULT_BLOCK_INTERVAL_MS,
            period_windows: 200,
            callee_kind: CalleeKind::Erc20,
            compute_delays: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("caller {0} has no key in the keystore")]
    MissingKey(String),
    #[error("chain rejected a transaction: {0}")]
    Submit(#[from] SubmitError),
    #[error("policy error: {0}")]
    Policy(#[from] PolicyError),
    #[error("batch assembly failed: {0}")]
    Assembly(#[from] ProtocolError),
    #[error("dispatch mode violation: {0}")]
    ModeViolation(String),
    #[error("block production stalled with transactions still pooled")]
    Stalled,
}

const DISPATCHER_ADDR: Address = Address([0xdd; 20]);
const BATCHER_SEED: [u8; 32] = [0xbb; 32];
const CALLER_FUNDS: u128 = 1_000_000_000_000_000;
const TOKEN_SEED_BALANCE: u128 = 1_000_000_000_000_000_000_000_000;

/// Where each trace record ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Placement {
    Own(TxId),
    InBatch { tx: TxId, size: usize },
}

fn build_chain(
    trace: &[TraceRecord],
    keystore: &Keystore,
    cfg: &ReplayConfig,
    mode: DispatchMode,
) -> Result<(ChainState, BTreeMap<Address, CallerAgent>), ReplayError> {
    let mut chain = ChainState::new(DISPATCHER_ADDR, cfg.model.clone());
    chain.gas_limit = cfg.gas_limit;
    chain.dispatch_mode = mode;

    let mut agents = BTreeMap::new();
    for rec in trace {
        if agents.contains_key(&rec.caller) {
            continue;
        }
        let kp = keystore
            .lookup(&rec.caller)
            .ok_or_else(|| ReplayError::MissingKey(rec.caller.to_hex()))?;
        chain.fund(rec.caller, CALLER_FUNDS);
        agents.insert(rec.caller, CallerAgent::new(kp.clone()));
    }
    let batcher = crate::identity::keygen(&BATCHER_SEED).expect("nonzero seed");
    chain.fund(batcher.address, CALLER_FUNDS);

    let code = match cfg.callee_kind {
        CalleeKind::Erc20 => rewrite(&fixtures::erc20(), DISPATCHER_ADDR).expect("fixture"),
        CalleeKind::ConstantCost { args } => {
            rewrite(&fixtures::constant_cost_callee(args), DISPATCHER_ADDR).expect("fixture")
        }
    };
    let mut callees: Vec<Address> = trace.iter().map(|r| r.callee).collect();
    callees.sort_unstable();
    callees.dedup();
    for callee in callees {
        let mut account = ContractAccount::new(callee, code.clone());
        match cfg.callee_kind {
            CalleeKind::Erc20 => {
                for caller in agents.keys() {
                    account.state.set(
                        "balances",
                        vec![caller.to_word()],
                        Word::from_u128(TOKEN_SEED_BALANCE),
                    );
                }
                // Seed every transfer receiver so credits stay updates.
                account.state.set(
                    "balances",
                    vec![SYNTH_RECEIVER.to_word()],
                    Word::from_u128(1),
                );
                for rec in trace.iter().filter(|r| r.callee == callee) {
                    if let Some(receiver) = rec.args.first() {
                        let slot = ("balances".to_string(), vec![*receiver]);
                        account
                            .state
                            .storage
                            .entry(slot)
                            .or_insert(Word::from_u128(1));
                    }
                }
            }
            CalleeKind::ConstantCost { .. } => {
                for caller in agents.keys() {
                    account
                        .state
                        .set("counters", vec![caller.to_word()], Word::from_u128(1));
                }
                account.state.set("total", vec![], Word::from_u128(1));
            }
        }
        chain.deploy(account);
    }
    Ok((chain, agents))
}

struct Runner<'a> {
    cfg: &'a ReplayConfig,
    system: SystemKind,
    chain: ChainState,
    agents: BTreeMap<Address, CallerAgent>,
    batcher: crate::identity::KeyPair,
    batcher_nonce: u64,
    b2_nonces: BTreeMap<Address, u64>,
    placements: Vec<Option<Placement>>,
    batch_members: BTreeMap<TxId, Vec<usize>>,
    next_block: u64,
    next_window: u64,
    /// Eviction scheduled `d` seconds after the latest block (one-block
    /// mode only).
    pending_evict: Option<u64>,
    windows_batched: usize,
    windows_with_calls: std::collections::BTreeSet<u64>,
    window_pool: Vec<(usize, Invocation)>,
    batch_sizes: BTreeMap<usize, usize>,
    batches_formed: usize,
}

impl<'a> Runner<'a> {
    fn window_ms(&self) -> u64 {
        self.cfg.policy.window_s * 1000
    }

    fn advance_to(&mut self, t_ms: u64, trace: &[TraceRecord]) -> Result<(), ReplayError> {
        let batching = self.system != SystemKind::B0;
        let windowed = batching && self.cfg.policy.mode == PolicyMode::Windowed;
        let one_block = batching && self.cfg.policy.mode == PolicyMode::OneBlock;
        loop {
            let block_t = (self.next_block + 1) * self.cfg.block_interval_ms;
            let window_t = if windowed {
                (self.next_window + 1) * self.window_ms()
            } else {
                u64::MAX
            };
            let evict_t = if one_block {
                self.pending_evict.unwrap_or(u64::MAX)
            } else {
                u64::MAX
            };
            let next = block_t.min(window_t).min(evict_t);
            if next > t_ms {
                break;
            }
            if next == block_t {
                self.chain.produce_block(block_t);
                self.next_block += 1;
                if one_block {
                    // The service waits d seconds after every block before
                    // running its eviction.
                    self.pending_evict = Some(block_t + self.cfg.policy.d_s * 1000);
                }
            } else if next == evict_t {
                self.pending_evict = None;
                self.evict_buffer()?;
            } else {
                self.close_window(trace)?;
            }
        }
        Ok(())
    }

    /// Metered dry run of one buffered invocation's callee execution.
    fn estimate_callee_gas(&self, inv: &Invocation) -> u64 {
        let contract = match self.chain.contracts.get(&inv.callee) {
            Some(c) => c,
            None => return 0,
        };
        let name = match contract.function_by_selector(inv.func) {
            Some(n) => n.to_string(),
            None => return 0,
        };
        let mut scratch = contract.state.clone();
        let env = crate::rewriter::ExecEnv::new(inv.caller, inv.callee);
        crate::rewriter::exec(
            &contract.code,
            &name,
            &env,
            &mut scratch,
            &inv.args,
            &self.cfg.model,
        )
        .map(|t| t.gas)
        .unwrap_or(0)
    }

    /// One-block eviction: threshold selection of buffered invocations
    /// against the current txpool, then one batch transaction.
    fn evict_buffer(&mut self) -> Result<(), ReplayError> {
        if self.window_pool.is_empty() {
            return Ok(());
        }
        let estimates: Vec<(u64, u64)> = self
            .window_pool
            .iter()
            .map(|(_, inv)| {
                let per_entry = self.cfg.model.batch_entry_data_gas(inv.arg_words())
                    + self.cfg.model.sig_verify
                    + self.cfg.model.internal_call_gas(inv.arg_words() + 1)
                    + self.estimate_callee_gas(inv);
                (inv.gas_price, per_entry)
            })
            .collect();
        let txpool = self.chain.txpool_snapshot();
        let (selected, _h) = bpool_evict(&estimates, &txpool, self.chain.gas_limit)?;
        if selected.len() < self.cfg.policy.min_batch {
            // Too few above the threshold; everything waits for the next
            // eviction round.
            return Ok(());
        }
        let selected: Vec<usize> = selected
            .into_iter()
            .take(self.cfg.policy.max_batch)
            .collect();
        let members: Vec<(usize, Invocation)> = selected
            .iter()
            .map(|&i| self.window_pool[i].clone())
            .collect();
        let selected_set: std::collections::BTreeSet<usize> = selected.into_iter().collect();
        self.window_pool = self
            .window_pool
            .iter()
            .enumerate()
            .filter(|(i, _)| !selected_set.contains(i))
            .map(|(_, m)| m.clone())
            .collect();
        self.windows_batched += 1;
        self.emit_batch(&members)
    }

    fn submit_record(&mut self, idx: usize, rec: &TraceRecord) -> Result<(), ReplayError> {
        if self.system == SystemKind::B0 {
            self.send_dedicated(idx, rec.caller, rec)?;
            return Ok(());
        }
        let agent = self.agents.get_mut(&rec.caller).expect("agent exists");
        let invocation = Invocation {
            caller: rec.caller,
            callee: rec.callee,
            func: rec.func,
            args: rec.args.clone(),
            caller_nonce: agent.local_nonce,
            gas_price: rec.gas_price,
            submit_time_ms: rec.submit_time_ms,
            origin_block: rec.origin_block,
        };
        agent.pending.push(crate::protocol::PendingRecord {
            caller_nonce: agent.local_nonce,
            tuple: invocation.tuple(),
            acked_tx: None,
        });
        agent.local_nonce += 1;
        self.windows_with_calls
            .insert(rec.submit_time_ms / self.window_ms());
        self.window_pool.push((idx, invocation));
        Ok(())
    }

    fn send_dedicated(
        &mut self,
        idx: usize,
        caller: Address,
        rec: &TraceRecord,
    ) -> Result<(), ReplayError> {
        let keys = self.agents[&caller].keys.clone();
        let nonce = self.chain.account(&caller).nonce + self.chain.pending_count(&caller);
        let data = encode_plain_call_data(rec.func, &rec.args);
        let signing = Transaction::signing_bytes(nonce, rec.callee, 0, rec.gas_price, &data);
        let tx = Transaction {
            sender: caller,
            nonce,
            to: rec.callee,
            value: 0,
            gas_price: rec.gas_price,
            data,
            signature: keys.sign(&signing),
        };
        match self.chain.send_raw_transaction(tx, Route::Direct)? {
            SubmitOutcome::Pooled(id) => {
                self.placements[idx] = Some(Placement::Own(id));
                Ok(())
            }
            SubmitOutcome::Buffered => unreachable!("direct route"),
        }
    }

    fn close_window(&mut self, trace: &[TraceRecord]) -> Result<(), ReplayError> {
        let window = self.next_window;
        self.next_window += 1;
        let start = window * self.window_ms();
        let end = (window + 1) * self.window_ms();
        if self.window_pool.is_empty() {
            return Ok(());
        }
        let pool: Vec<Invocation> = self
            .window_pool
            .iter()
            .map(|(_, inv)| inv.clone())
            .collect();
        let selected = select_windowed(&pool, &self.cfg.policy, start, end);

        let members: Vec<(usize, Invocation)> = match &selected {
            Some(indices) => indices
                .iter()
                .map(|&i| self.window_pool[i].clone())
                .collect(),
            None => Vec::new(),
        };
        let selected_set: std::collections::BTreeSet<usize> = match &selected {
            Some(indices) => indices.iter().copied().collect(),
            None => Default::default(),
        };
        let leftovers: Vec<(usize, Invocation)> = self
            .window_pool
            .iter()
            .enumerate()
            .filter(|(i, _)| !selected_set.contains(i))
            .map(|(_, m)| m.clone())
            .collect();
        self.window_pool.clear();

        if !members.is_empty() {
            self.windows_batched += 1;
            self.emit_batch(&members)?;
        }
        for (idx, _inv) in leftovers {
            let rec = &trace[idx];
            self.send_dedicated(idx, rec.caller, rec)?;
        }
        Ok(())
    }

    fn emit_batch(&mut self, members: &[(usize, Invocation)]) -> Result<(), ReplayError> {
        let entries: Vec<BatchEntry> = members
            .iter()
            .map(|(_, inv)| BatchEntry {
                invocation: inv.clone(),
                caller_nonce: inv.caller_nonce,
            })
            .collect();
        let bmsg = BatchMessage {
            entries,
            batcher_nonce: self.batcher_nonce,
        };
        let payload = bmsg.sign_payload();

        let prices: Vec<u64> = members.iter().map(|(_, inv)| inv.gas_price).collect();
        let block_context: Vec<u64> = self
            .chain
            .txpool_snapshot()
            .iter()
            .map(|&(p, _)| p)
            .collect();
        let gas_price = price_batch(&prices, &block_context, self.cfg.policy.pricing)?;

        let batch: BatchTransaction = match self.system {
            SystemKind::IBatch | SystemKind::Inlined | SystemKind::B1 => {
                let sigs: Vec<Signature> = bmsg
                    .entries
                    .iter()
                    .map(|e| {
                        self.agents[&e.invocation.caller]
                            .validate_and_sign(&bmsg)
                            .expect("honest replay message")
                    })
                    .collect();
                assemble_batch_tx(
                    payload,
                    sigs,
                    &self.batcher,
                    self.batcher_nonce,
                    DISPATCHER_ADDR,
                    gas_price,
                    0,
                )?
            }
            SystemKind::Ideal => {
                let sigs: Vec<Signature> = payload
                    .calls
                    .iter()
                    .map(|c| self.agents[&c.caller].keys.sign(&ideal_entry_message(c)))
                    .collect();
                assemble_batch_tx(
                    payload,
                    sigs,
                    &self.batcher,
                    self.batcher_nonce,
                    DISPATCHER_ADDR,
                    gas_price,
                    0,
                )?
            }
            SystemKind::B2 => {
                let mut entry_nonces = Vec::with_capacity(payload.calls.len());
                let mut sigs = Vec::with_capacity(payload.calls.len());
                for call in &payload.calls {
                    let next = self.b2_nonces.entry(call.caller).or_insert(0);
                    entry_nonces.push(*next);
                    sigs.push(
                        self.agents[&call.caller]
                            .keys
                            .sign(&b2_entry_message(call, *next)),
                    );
                    *next += 1;
                }
                let data = crate::core::encode_dispatch_nonces_data(&payload, &entry_nonces, &sigs)
                    .map_err(ProtocolError::Encoding)?;
                let signing = Transaction::signing_bytes(
                    self.batcher_nonce,
                    DISPATCHER_ADDR,
                    0,
                    gas_price,
                    &data,
                );
                BatchTransaction {
                    tx: Transaction {
                        sender: self.batcher.address,
                        nonce: self.batcher_nonce,
                        to: DISPATCHER_ADDR,
                        value: 0,
                        gas_price,
                        data,
                        signature: self.batcher.sign(&signing),
                    },
                    payload,
                    caller_sigs: sigs,
                }
            }
            SystemKind::B0 => unreachable!("B0 never batches"),
        };

        let id = match self
            .chain
            .send_raw_transaction(batch.tx.clone(), Route::Direct)?
        {
            SubmitOutcome::Pooled(id) => id,
            SubmitOutcome::Buffered => unreachable!("direct route"),
        };
        self.batcher_nonce += 1;
        let n = members.len();
        for (idx, inv) in members {
            self.placements[*idx] = Some(Placement::InBatch { tx: id, size: n });
            if let Some(agent) = self.agents.get_mut(&inv.caller) {
                if let Some(rec) = agent
                    .pending
                    .iter_mut()
                    .find(|r| r.tuple == inv.tuple() && r.acked_tx.is_none())
                {
                    rec.acked_tx = Some(id);
                }
                agent.received_acks.push(id);
            }
        }
        self.batch_members
            .insert(id, members.iter().map(|(i, _)| *i).collect());
        *self.batch_sizes.entry(n).or_insert(0) += 1;
        self.batches_formed += 1;
        Ok(())
    }

    fn flush(&mut self, trace: &[TraceRecord]) -> Result<(), ReplayError> {
        if self.system != SystemKind::B0 && !self.window_pool.is_empty() {
            match self.cfg.policy.mode {
                PolicyMode::Windowed => self.close_window(trace)?,
                PolicyMode::OneBlock => {
                    // One last eviction; whatever stays buffered goes out
                    // in dedicated transactions.
                    self.evict_buffer()?;
                    let leftovers = std::mem::take(&mut self.window_pool);
                    for (idx, _inv) in leftovers {
                        let rec = &trace[idx];
                        self.send_dedicated(idx, rec.caller, rec)?;
                    }
                }
            }
        }
        let mut guard = 0;
        while self.chain.txpool_len() > 0 {
            let t = (self.next_block + 1) * self.cfg.block_interval_ms;
            self.chain.produce_block(t);
            self.next_block += 1;
            guard += 1;
            if guard > 10_000 {
                return Err(ReplayError::Stalled);
            }
        }
        Ok(())
    }
}

fn run_once(
    trace: &[TraceRecord],
    keystore: &Keystore,
    system: SystemKind,
    cfg: &ReplayConfig,
) -> Result<(MetricsReport, Vec<Option<u64>>, ChainState), ReplayError> {
    let (chain, agents) = build_chain(trace, keystore, cfg, system.dispatch_mode())?;
    let batcher = crate::identity::keygen(&BATCHER_SEED).expect("nonzero seed");
    let mut runner = Runner {
        cfg,
        system,
        chain,
        agents,
        batcher,
        batcher_nonce: 0,
        b2_nonces: BTreeMap::new(),
        placements: vec![None; trace.len()],
        batch_members: BTreeMap::new(),
        next_block: 0,
        next_window: 0,
        pending_evict: None,
        windows_batched: 0,
        windows_with_calls: Default::default(),
        window_pool: Vec::new(),
        batch_sizes: BTreeMap::new(),
        batches_formed: 0,
    };

    for (idx, rec) in trace.iter().enumerate() {
        runner.advance_to(rec.submit_time_ms, trace)?;
        runner.submit_record(idx, rec)?;
    }
    // Close the trailing window, then mine out the pool.
    if system != SystemKind::B0 && cfg.policy.mode == PolicyMode::Windowed {
        let last_window_end = (runner.next_window + 1) * runner.window_ms();
        runner.advance_to(last_window_end, trace)?;
    }
    runner.flush(trace)?;

    // --- accounting ------------------------------------------------------
    let mut report = MetricsReport::new(system.name(), &cfg.policy.label());
    report.period_windows = cfg.period_windows;
    report.calls = trace.len();
    report.batch_sizes = runner.batch_sizes.clone();
    report.batches_formed = runner.batches_formed;
    report.windows_total = if trace.is_empty() {
        0
    } else {
        runner.windows_with_calls.len()
    };
    report.windows_batched = runner.windows_batched;

    // Gas and placement of every included transaction.
    let mut tx_gas: BTreeMap<TxId, u64> = BTreeMap::new();
    let mut heights: Vec<Option<u64>> = vec![None; trace.len()];
    let mut dispatched = 0usize;
    for block in &runner.chain.blocks {
        for tx in &block.txs {
            tx_gas.insert(tx.id, tx.gas_used);
            report.total_gas += tx.gas_used;
            if let Some(results) = &tx.batch_results {
                dispatched += results.iter().filter(|r| r.outcome.executed()).count();
                if let Some(members) = runner.batch_members.get(&tx.id) {
                    for &idx in members {
                        heights[idx] = Some(block.height);
                    }
                }
                report.per_batch_gas.push(tx.gas_used);
            } else if tx.kind == crate::chainsim::TxKind::ContractCall {
                dispatched += 1;
            }
        }
    }
    for (idx, placement) in runner.placements.iter().enumerate() {
        if let Some(Placement::Own(id)) = placement {
            heights[idx] = runner.chain.inclusion_height(*id);
        }
    }
    report.dispatched_calls = dispatched;

    // Per-call gas and ether, plus the per-period series.
    let window_ms = cfg.policy.window_s * 1000;
    let mut period_totals: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut gas_sum = 0.0f64;
    let mut ether_sum = 0.0f64;
    let mut counted = 0usize;
    for (idx, placement) in runner.placements.iter().enumerate() {
        let (gas, price) = match placement {
            Some(Placement::Own(id)) => match tx_gas.get(id) {
                Some(&g) => (g as f64, trace[idx].gas_price as f64),
                None => continue,
            },
            Some(Placement::InBatch { tx, size }) => match tx_gas.get(tx) {
                Some(&g) => {
                    let price = runner
                        .chain
                        .blocks
                        .iter()
                        .flat_map(|b| b.txs.iter())
                        .find(|t| t.id == *tx)
                        .map(|t| t.tx.gas_price)
                        .unwrap_or(0);
                    (g as f64 / *size as f64, price as f64)
                }
                None => continue,
            },
            None => continue,
        };
        gas_sum += gas;
        ether_sum += gas * price;
        counted += 1;
        let period = (trace[idx].submit_time_ms / window_ms) as usize / cfg.period_windows;
        let entry = period_totals.entry(period).or_insert((0.0, 0));
        entry.0 += gas;
        entry.1 += 1;
    }
    if counted > 0 {
        report.gas_per_call_mean = gas_sum / counted as f64;
        report.ether_per_call_mean = ether_sum / counted as f64;
    }
    report.gas_per_call_series = period_totals
        .values()
        .map(|&(total, n)| total / n as f64)
        .collect();

    Ok((report, heights, runner.chain))
}

/// Replays `trace` under `system`, returning the metric report. With
/// `compute_delays` set and a batching system, an unbatched baseline run
/// on the same trace supplies per-call inclusion heights and the report
/// carries the delay distribution.
pub fn replay(
    trace: &[TraceRecord],
    keystore: &Keystore,
    system: SystemKind,
    cfg: &ReplayConfig,
) -> Result<MetricsReport, ReplayError> {
    if system == SystemKind::B1 && !matches!(cfg.callee_kind, CalleeKind::Erc20) {
        return Err(ReplayError::ModeViolation(
            "the allowance baseline needs a token callee".into(),
        ));
    }
    let (mut report, heights, _) = run_once(trace, keystore, system, cfg)?;
    if cfg.compute_delays && system != SystemKind::B0 {
        let (_, baseline, _) = run_once(trace, keystore, SystemKind::B0, cfg)?;
        let mut sum = 0i64;
        let mut n = 0usize;
        for (actual, base) in heights.iter().zip(baseline.iter()) {
            if let (Some(a), Some(b)) = (actual, base) {
                let d = crate::chainsim::block_delay(*a, *b);
                *report.block_delays.entry(d).or_insert(0) += 1;
                sum += d;
                n += 1;
            }
        }
        if n > 0 {
            report.block_delay_mean = sum as f64 / n as f64;
        }
    }
    Ok(report)
}

/// [`replay`], additionally returning the produced chain history as CSV
/// (`height,timestamp,tx_index,sender,to,gas_price,gas_used,kind`).
pub fn replay_with_history(
    trace: &[TraceRecord],
    keystore: &Keystore,
    system: SystemKind,
    cfg: &ReplayConfig,
) -> Result<(MetricsReport, String), ReplayError> {
    if system == SystemKind::B1 && !matches!(cfg.callee_kind, CalleeKind::Erc20) {
        return Err(ReplayError::ModeViolation(
            "the allowance baseline needs a token callee".into(),
        ));
    }
    let (report, _, chain) = run_once(trace, keystore, system, cfg)?;
    Ok((report, chain.export_history_csv()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::synth::{gen_synthetic, ArrivalMode, SynthSpec};
    use crate::costmodel::WorkloadShape;

    fn fixed_batch_spec(per_window: usize, windows: u64, callee: CalleeKind) -> SynthSpec {
        SynthSpec {
            mode: ArrivalMode::FixedBatch { per_window },
            duration_s: windows * 120,
            window_s: 120,
            callers: 6,
            callees: 1,
            price_min: 5,
            price_max: 9,
            seed: 77,
            callee_kind: callee,
        }
    }

    fn cfg_for(callee: CalleeKind) -> ReplayConfig {
        ReplayConfig {
            callee_kind: callee,
            ..ReplayConfig::default()
        }
    }

    #[test]
    fn b0_gas_equals_analytic_sum() {
        let (trace, keystore) = gen_synthetic(&fixed_batch_spec(4, 2, CalleeKind::Erc20));
        let cfg = cfg_for(CalleeKind::Erc20);
        let report = replay(&trace, &keystore, SystemKind::B0, &cfg).unwrap();
        assert_eq!(report.calls, 8);
        assert_eq!(report.dispatched_calls, 8);
        let per_call = cfg
            .model
            .cost_b0(&WorkloadShape::new(1, 2, ERC20_TRANSFER_Y))
            .unwrap();
        assert_eq!(report.total_gas, per_call * 8);
        assert!((report.gas_per_call_mean - per_call as f64).abs() < 1e-9);
    }

    #[test]
    fn fixed_batch_window_forms_one_batch_per_window() {
        let (trace, keystore) = gen_synthetic(&fixed_batch_spec(6, 3, CalleeKind::Erc20));
        let cfg = cfg_for(CalleeKind::Erc20);
        let report = replay(&trace, &keystore, SystemKind::IBatch, &cfg).unwrap();
        assert_eq!(report.batches_formed, 3);
        assert_eq!(report.batch_sizes[&6], 3);
        assert_eq!(report.dispatched_calls, 18);
        let expected = cfg
            .model
            .cost_ibatch(&WorkloadShape::new(6, 2, ERC20_TRANSFER_Y))
            .unwrap();
        for &gas in &report.per_batch_gas {
            assert_eq!(gas, expected);
        }
    }

    #[test]
    fn below_min_batch_falls_back_to_dedicated_sends() {
        let (trace, keystore) = gen_synthetic(&fixed_batch_spec(4, 2, CalleeKind::Erc20));
        let cfg = cfg_for(CalleeKind::Erc20);
        let batched = replay(&trace, &keystore, SystemKind::IBatch, &cfg).unwrap();
        let baseline = replay(&trace, &keystore, SystemKind::B0, &cfg).unwrap();
        assert_eq!(batched.batches_formed, 0);
        assert_eq!(batched.windows_batched, 0);
        assert_eq!(batched.total_gas, baseline.total_gas);
        assert_eq!(batched.dispatched_calls, 8);
    }

    #[test]
    fn batching_beats_b0_at_size_six() {
        let (trace, keystore) = gen_synthetic(&fixed_batch_spec(6, 2, CalleeKind::Erc20));
        let cfg = cfg_for(CalleeKind::Erc20);
        let batched = replay(&trace, &keystore, SystemKind::IBatch, &cfg).unwrap();
        let baseline = replay(&trace, &keystore, SystemKind::B0, &cfg).unwrap();
        assert!(batched.gas_per_call_mean < baseline.gas_per_call_mean);
    }

    #[test]
    fn all_batch_systems_dispatch_every_call() {
        let (trace, keystore) = gen_synthetic(&fixed_batch_spec(6, 2, CalleeKind::Erc20));
        let cfg = cfg_for(CalleeKind::Erc20);
        for system in [
            SystemKind::IBatch,
            SystemKind::Inlined,
            SystemKind::B1,
            SystemKind::B2,
            SystemKind::Ideal,
        ] {
            let report = replay(&trace, &keystore, system, &cfg).unwrap();
            assert_eq!(report.dispatched_calls, 12, "{system:?}");
        }
    }

    #[test]
    fn delays_are_nonnegative_and_reported() {
        let (trace, keystore) = gen_synthetic(&fixed_batch_spec(6, 2, CalleeKind::Erc20));
        let mut cfg = cfg_for(CalleeKind::Erc20);
        cfg.compute_delays = true;
        let report = replay(&trace, &keystore, SystemKind::IBatch, &cfg).unwrap();
        let total: usize = report.block_delays.values().sum();
        assert_eq!(total, 12);
        assert!(report.block_delays.keys().all(|&d| d >= 0));
    }

    #[test]
    fn one_block_policy_batches_after_blocks() {
        // Calls arrive over ~4 block intervals; the one-block mechanism
        // evicts d seconds after each block instead of waiting for a
        // two-minute window.
        let spec = SynthSpec {
            mode: ArrivalMode::Poisson { rate_per_s: 0.4 },
            duration_s: 60,
            window_s: 120,
            callers: 6,
            callees: 1,
            price_min: 5,
            price_max: 9,
            seed: 31,
            callee_kind: CalleeKind::Erc20,
        };
        let (trace, keystore) = gen_synthetic(&spec);
        assert!(trace.len() >= 10, "workload too thin: {}", trace.len());
        let mut cfg = cfg_for(CalleeKind::Erc20);
        cfg.policy.mode = crate::policy::PolicyMode::OneBlock;
        cfg.policy.min_batch = 1;
        cfg.compute_delays = true;
        let one_block = replay(&trace, &keystore, SystemKind::IBatch, &cfg).unwrap();
        assert_eq!(one_block.dispatched_calls, trace.len());
        // Several evictions, not one big window batch.
        assert!(
            one_block.batches_formed >= 2,
            "batches: {}",
            one_block.batches_formed
        );

        let mut windowed_cfg = cfg_for(CalleeKind::Erc20);
        windowed_cfg.policy.min_batch = 1;
        windowed_cfg.compute_delays = true;
        let windowed = replay(&trace, &keystore, SystemKind::IBatch, &windowed_cfg).unwrap();
        assert!(
            one_block.block_delay_mean <= windowed.block_delay_mean,
            "one-block {} vs windowed {}",
            one_block.block_delay_mean,
            windowed.block_delay_mean
        );
    }

    #[test]
    fn empty_trace_yields_empty_report() {
        let keystore = crate::identity::Keystore::new();
        let cfg = cfg_for(CalleeKind::Erc20);
        for system in [SystemKind::B0, SystemKind::IBatch] {
            let report = replay(&[], &keystore, system, &cfg).unwrap();
            assert_eq!(report.calls, 0);
            assert_eq!(report.total_gas, 0);
            assert_eq!(report.windows_total, 0);
            assert_eq!(report.gas_per_call_mean, 0.0);
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let (trace, keystore) = gen_synthetic(&fixed_batch_spec(6, 2, CalleeKind::Erc20));
        let cfg = cfg_for(CalleeKind::Erc20);
        let a = replay(&trace, &keystore, SystemKind::IBatch, &cfg).unwrap();
        let b = replay(&trace, &keystore, SystemKind::IBatch, &cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn constant_cost_callee_matches_formula_exactly() {
        let (trace, keystore) = gen_synthetic(&fixed_batch_spec(
            10,
            1,
            CalleeKind::ConstantCost { args: 3 },
        ));
        let cfg = cfg_for(CalleeKind::ConstantCost { args: 3 });
        let report = replay(&trace, &keystore, SystemKind::IBatch, &cfg).unwrap();
        let y = 2 * (200 + 5000);
        let expected = cfg
            .model
            .cost_ibatch(&WorkloadShape::new(10, 3, y))
            .unwrap();
        assert_eq!(report.per_batch_gas, vec![expected]);
    }
}
