//! Deterministic simulated blockchain: externally owned accounts with
//! nonces, a price-ordered txpool, block production under a gas limit, the
//! trace-driven inclusion rule, and block-delay accounting.
//!
//! All balances and fees are denominated in Gwei; a transaction's fee is
//! `gas × gas_price` and moves to a fee-sink account, so total balance is
//! conserved across block application. Iteration everywhere is over
//! ordered maps and ties in gas price break by arrival order, which makes
//! chain history a pure function of the inputs.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::core::{decode_plain_call_data, word_len, Address, Invocation, Transaction};
use crate::costmodel::{GasCostModel, MeterOp};
use crate::dispatcher::{dispatch_tx, CallResult, ContractAccount, DispatchMode};
use crate::identity::recover;
use crate::rewriter::{exec, ContractState, ExecEnv};

/// Default block gas limit: fits roughly sixty average batched invocations
/// in one transaction.
pub const DEFAULT_GAS_LIMIT: u64 = 12_500_000;
/// Default block interval.
pub const DEFAULT_BLOCK_INTERVAL_MS: u64 = 13_000;

/// Account address collecting transaction fees.
pub const FEE_SINK: Address = Address([0xfe; 20]);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubmitError {
    #[error("transaction signature does not recover the sender")]
    BadSignature,
    #[error("nonce {got} does not match expected {expected}")]
    BadNonce { expected: u64, got: u64 },
    #[error("sender balance cannot cover value plus worst-case fee")]
    InsufficientFunds,
    #[error("batcher-bound transaction data is not a plain call: {0}")]
    NotACall(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("empty block trace")]
    EmptyTrace,
    #[error("no block after {t_ms} ms admits gas price {price}")]
    NoInclusion { t_ms: u64, price: u64 },
}

/// How submitted transactions reach the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Straight into the txpool.
    Direct,
    /// Intercepted: unmarshalled into an invocation and buffered for the
    /// Batcher instead of entering the txpool.
    ViaBatcher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitOutcome {
    Pooled(TxId),
    Buffered,
}

pub type TxId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AccountState {
    pub nonce: u64,
    /// Gwei.
    pub balance: u128,
}

/// What an included transaction did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxKind {
    Transfer,
    ContractCall,
    ContractCallReverted,
    Batch,
    BatchReverted,
}

impl TxKind {
    pub fn name(&self) -> &'static str {
        match self {
            TxKind::Transfer => "transfer",
            TxKind::ContractCall => "call",
            TxKind::ContractCallReverted => "call-reverted",
            TxKind::Batch => "batch",
            TxKind::BatchReverted => "batch-reverted",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecutedTx {
    pub id: TxId,
    pub tx: Transaction,
    pub gas_used: u64,
    pub kind: TxKind,
    /// Per-entry results when this was a batch transaction.
    pub batch_results: Option<Vec<CallResult>>,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub height: u64,
    pub timestamp_ms: u64,
    pub txs: Vec<ExecutedTx>,
    pub gas_used: u64,
    pub gas_limit: u64,
}

/// When blocks are produced.
#[derive(Debug, Clone)]
pub enum BlockSchedule {
    FixedInterval { interval_ms: u64 },
    FromTrace { timestamps_ms: Vec<u64> },
}

impl Default for BlockSchedule {
    fn default() -> Self {
        BlockSchedule::FixedInterval {
            interval_ms: DEFAULT_BLOCK_INTERVAL_MS,
        }
    }
}

impl BlockSchedule {
    /// Timestamp of block number `height` (0-based).
    pub fn block_time_ms(&self, height: u64) -> Option<u64> {
        match self {
            BlockSchedule::FixedInterval { interval_ms } => Some((height + 1) * interval_ms),
            BlockSchedule::FromTrace { timestamps_ms } => {
                timestamps_ms.get(height as usize).copied()
            }
        }
    }
}

struct PendingTx {
    tx: Transaction,
    id: TxId,
    arrival: u64,
}

/// The simulated ledger plus the Batcher-side invocation buffer that the
/// intercepted submission path feeds.
pub struct ChainState {
    pub accounts: BTreeMap<Address, AccountState>,
    pub contracts: BTreeMap<Address, ContractAccount>,
    pub dispatcher_address: Address,
    pub dispatcher_state: ContractState,
    /// How Dispatcher-bound transactions execute.
    pub dispatch_mode: DispatchMode,
    pub blocks: Vec<Block>,
    pub gas_limit: u64,
    pub clock_ms: u64,
    pub model: GasCostModel,
    /// Invocations intercepted on the `ViaBatcher` route.
    pub bpool: Vec<Invocation>,
    txpool: Vec<PendingTx>,
    next_tx_id: TxId,
    arrival_counter: u64,
}

impl ChainState {
    pub fn new(dispatcher_address: Address, model: GasCostModel) -> ChainState {
        ChainState {
            accounts: BTreeMap::new(),
            contracts: BTreeMap::new(),
            dispatcher_address,
            dispatcher_state: ContractState::new(),
            dispatch_mode: DispatchMode::IBatch,
            blocks: Vec::new(),
            gas_limit: DEFAULT_GAS_LIMIT,
            clock_ms: 0,
            model,
            bpool: Vec::new(),
            txpool: Vec::new(),
            next_tx_id: 0,
            arrival_counter: 0,
        }
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn fund(&mut self, address: Address, balance: u128) {
        self.accounts.entry(address).or_default().balance = balance;
    }

    pub fn deploy(&mut self, contract: ContractAccount) {
        self.contracts.insert(contract.address, contract);
    }

    pub fn account(&self, address: &Address) -> AccountState {
        self.accounts.get(address).copied().unwrap_or_default()
    }

    pub fn pending_count(&self, sender: &Address) -> u64 {
        self.txpool
            .iter()
            .filter(|p| p.tx.sender == *sender)
            .count() as u64
    }

    pub fn txpool_len(&self) -> usize {
        self.txpool.len()
    }

    /// Prices and estimated gas of pooled transactions, the view the
    /// one-block eviction heuristic reads.
    pub fn txpool_snapshot(&self) -> Vec<(u64, u64)> {
        self.txpool
            .iter()
            .map(|p| (p.tx.gas_price, self.estimate_tx_gas(&p.tx)))
            .collect()
    }

    /// Total Gwei across accounts; conserved by block application.
    pub fn total_balance(&self) -> u128 {
        self.accounts.values().map(|a| a.balance).sum()
    }

    /// Accepts a signed transaction. `Direct` pools it for mining;
    /// `ViaBatcher` unmarshals the call and buffers it for the Batcher.
    pub fn send_raw_transaction(
        &mut self,
        tx: Transaction,
        route: Route,
    ) -> Result<SubmitOutcome, SubmitError> {
        let recovered = recover(&tx.to_signing_bytes(), &tx.signature)
            .map_err(|_| SubmitError::BadSignature)?;
        if recovered != tx.sender {
            return Err(SubmitError::BadSignature);
        }
        let expected = self.account(&tx.sender).nonce + self.pending_count(&tx.sender);
        if tx.nonce != expected {
            return Err(SubmitError::BadNonce {
                expected,
                got: tx.nonce,
            });
        }
        match route {
            Route::Direct => {
                let id = self.next_tx_id;
                self.next_tx_id += 1;
                self.arrival_counter += 1;
                self.txpool.push(PendingTx {
                    tx,
                    id,
                    arrival: self.arrival_counter,
                });
                Ok(SubmitOutcome::Pooled(id))
            }
            Route::ViaBatcher => {
                let (func, args) = decode_plain_call_data(&tx.data)
                    .map_err(|e| SubmitError::NotACall(e.to_string()))?;
                self.bpool.push(Invocation {
                    caller: tx.sender,
                    callee: tx.to,
                    func,
                    args,
                    caller_nonce: tx.nonce,
                    gas_price: tx.gas_price,
                    submit_time_ms: self.clock_ms,
                    origin_block: None,
                });
                Ok(SubmitOutcome::Buffered)
            }
        }
    }

    /// Gas a pooled transaction will use, by a metered dry run against the
    /// current state.
    pub fn estimate_tx_gas(&self, tx: &Transaction) -> u64 {
        let mut contracts = self.contracts.clone();
        let mut dstate = self.dispatcher_state.clone();
        self.execute_tx(tx, &mut contracts, &mut dstate).0
    }

    /// Executes one transaction against the given state views, returning
    /// gas used, the kind, and batch results when applicable.
    fn execute_tx(
        &self,
        tx: &Transaction,
        contracts: &mut BTreeMap<Address, ContractAccount>,
        dispatcher_state: &mut ContractState,
    ) -> (u64, TxKind, Option<Vec<CallResult>>) {
        let now_s = self.clock_ms / 1000;
        if tx.to == self.dispatcher_address {
            return match dispatch_tx(
                tx,
                self.dispatch_mode,
                contracts,
                self.dispatcher_address,
                dispatcher_state,
                now_s,
                &self.model,
            ) {
                Ok(exec) => (exec.gas, TxKind::Batch, Some(exec.results)),
                Err(failure) => (failure.gas, TxKind::BatchReverted, None),
            };
        }
        if let Some(contract) = contracts.get_mut(&tx.to) {
            // Dedicated contract call: transaction base plus argument
            // words, then the callee metered inside the interpreter.
            return match decode_plain_call_data(&tx.data) {
                Ok((func, args)) => {
                    let data_gas = self.model.meter(&[MeterOp::Transaction {
                        data_words: args.len() as u64,
                    }]);
                    let name = contract.function_by_selector(func).map(str::to_string);
                    match name {
                        Some(name) => {
                            let env = ExecEnv::new(tx.sender, tx.to).at_time(now_s);
                            match exec(
                                &contract.code,
                                &name,
                                &env,
                                &mut contract.state,
                                &args,
                                &self.model,
                            ) {
                                Ok(trace) => (data_gas + trace.gas, TxKind::ContractCall, None),
                                Err(_) => (data_gas, TxKind::ContractCallReverted, None),
                            }
                        }
                        None => (data_gas, TxKind::ContractCallReverted, None),
                    }
                }
                Err(_) => (
                    self.model.transaction_gas(word_len(&tx.data)),
                    TxKind::ContractCallReverted,
                    None,
                ),
            };
        }
        (
            self.model.transaction_gas(word_len(&tx.data)),
            TxKind::Transfer,
            None,
        )
    }

    /// Produces a block at `at_time_ms`: pool transactions are considered
    /// in descending gas price (arrival order on ties) and included while
    /// their gas fits under the block limit. Included transactions are
    /// executed, fees settle to the fee sink, and deferred transactions
    /// stay pooled.
    pub fn produce_block(&mut self, at_time_ms: u64) -> &Block {
        assert!(
            self.blocks
                .last()
                .map(|b| b.timestamp_ms <= at_time_ms)
                .unwrap_or(true),
            "block time going backwards"
        );
        self.clock_ms = self.clock_ms.max(at_time_ms);

        let mut order: Vec<usize> = (0..self.txpool.len()).collect();
        order.sort_by(|&a, &b| {
            let pa = &self.txpool[a];
            let pb = &self.txpool[b];
            pb.tx
                .gas_price
                .cmp(&pa.tx.gas_price)
                .then(pa.arrival.cmp(&pb.arrival))
        });

        let mut gas_used = 0u64;
        let mut included: Vec<usize> = Vec::new();
        let mut executed: Vec<ExecutedTx> = Vec::new();

        for idx in order {
            let pending = &self.txpool[idx];
            let tx = pending.tx.clone();
            let id = pending.id;

            // Trial execution against scratch copies; commit only if the
            // gas fits.
            let mut contracts = self.contracts.clone();
            let mut dstate = self.dispatcher_state.clone();
            let (gas, kind, batch_results) = self.execute_tx(&tx, &mut contracts, &mut dstate);
            if gas_used + gas > self.gas_limit {
                continue;
            }

            let fee = gas as u128 * tx.gas_price as u128;
            let sender = self.accounts.entry(tx.sender).or_default();
            if sender.balance < fee + tx.value {
                // Unable to pay: drop the transaction outright.
                included.push(idx);
                continue;
            }
            sender.balance -= fee + tx.value;
            sender.nonce += 1;
            if kind == TxKind::Transfer {
                self.accounts.entry(tx.to).or_default().balance += tx.value;
            } else {
                // Contract-bound value accrues to the contract account.
                self.accounts.entry(tx.to).or_default().balance += tx.value;
            }
            self.accounts.entry(FEE_SINK).or_default().balance += fee;

            self.contracts = contracts;
            self.dispatcher_state = dstate;
            gas_used += gas;
            included.push(idx);
            executed.push(ExecutedTx {
                id,
                tx,
                gas_used: gas,
                kind,
                batch_results,
            });
        }

        // Remove included (and dropped) transactions from the pool.
        included.sort_unstable();
        for idx in included.into_iter().rev() {
            self.txpool.remove(idx);
        }

        let block = Block {
            height: self.height(),
            timestamp_ms: at_time_ms,
            txs: executed,
            gas_used,
            gas_limit: self.gas_limit,
        };
        self.blocks.push(block);
        self.blocks.last().expect("just pushed")
    }

    /// Height of the block carrying `tx_id`, if included.
    pub fn inclusion_height(&self, tx_id: TxId) -> Option<u64> {
        self.blocks
            .iter()
            .find(|b| b.txs.iter().any(|t| t.id == tx_id))
            .map(|b| b.height)
    }

    /// Chain history as CSV: `height,timestamp,tx_index,sender,to,
    /// gas_price,gas_used,kind`.
    pub fn export_history_csv(&self) -> String {
        let mut out = String::from("height,timestamp,tx_index,sender,to,gas_price,gas_used,kind\n");
        for block in &self.blocks {
            for (i, tx) in block.txs.iter().enumerate() {
                out.push_str(&format!(
                    "{},{}.{:03},{},{},{},{},{},{}\n",
                    block.height,
                    block.timestamp_ms / 1000,
                    block.timestamp_ms % 1000,
                    i,
                    tx.tx.sender.to_hex(),
                    tx.tx.to.to_hex(),
                    tx.tx.gas_price,
                    tx.gas_used,
                    tx.kind.name(),
                ));
            }
        }
        out
    }
}

/// One block of a historical fee-market trace: the gas prices of the
/// transactions it included.
#[derive(Debug, Clone)]
pub struct TraceBlock {
    pub height: u64,
    pub timestamp_ms: u64,
    pub tx_gas_prices: Vec<u64>,
}

/// The trace-replay inclusion rule: a transaction submitted at `t` with
/// gas price `p` lands in the first block after `t` that included at least
/// one transaction priced below `p`.
pub fn replay_inclusion_block(
    trace: &[TraceBlock],
    t_submit_ms: u64,
    gas_price: u64,
) -> Result<u64, TraceError> {
    if trace.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    trace
        .iter()
        .find(|b| b.timestamp_ms > t_submit_ms && b.tx_gas_prices.iter().any(|&p| p < gas_price))
        .map(|b| b.height)
        .ok_or(TraceError::NoInclusion {
            t_ms: t_submit_ms,
            price: gas_price,
        })
}

/// Inclusion-height difference between a batched invocation and its
/// unbatched counterpart.
pub fn block_delay(actual_block: u64, baseline_block: u64) -> i64 {
    actual_block as i64 - baseline_block as i64
}
