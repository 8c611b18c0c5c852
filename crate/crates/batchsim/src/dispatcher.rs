//! The simulated on-chain Dispatcher: stateless verification and relay of
//! batched invocations, plus the baseline and customization variants.
//!
//! In the standard mode the Dispatcher parses the batch transaction,
//! recovers each caller from its batch signature over the jointly signed
//! payload, and internal-calls the callee's `ByD` twin with the recovered
//! sender prepended. A bad or missing signature skips that entry only; the
//! rest of the batch proceeds. Framing errors and a batcher-nonce mismatch
//! revert the whole transaction with gas still charged.
//!
//! Variants:
//! - `IBatchInlined` executes the callee body inside the Dispatcher, so no
//!   internal call is charged.
//! - `Top1Elided` skips per-entry verification and uses the transaction
//!   sender as `from`; valid only when every entry's caller *is* the
//!   transaction sender.
//! - `BaselineB1` relays through allowance state against the unmodified
//!   callee: one extra storage update per entry, no forwarded sender word.
//! - `BaselineB2` keeps a per-caller nonce word in Dispatcher storage and
//!   rejects non-incrementing entries.
//! - `IdealNoReplayDefense` verifies each signature over the bare call
//!   only; gas-identical to the standard mode, replayable by design.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::core::{
    decode_dispatch_data, decode_dispatch_nonces_data, encode_call, Address, BatchTransaction,
    CallTuple, EncodingError, Selector, Word,
};
use crate::costmodel::{GasCostModel, MeterOp};
use crate::identity::recover;
use crate::rewriter::{exec, ContractIR, ContractState, ExecEnv, ExecError, BYD_SUFFIX};

/// A deployed contract: immutable code plus its storage and ether state.
#[derive(Debug, Clone)]
pub struct ContractAccount {
    pub address: Address,
    pub code: ContractIR,
    pub state: ContractState,
}

impl ContractAccount {
    pub fn new(address: Address, code: ContractIR) -> ContractAccount {
        ContractAccount {
            address,
            code,
            state: ContractState::new(),
        }
    }

    /// Resolves a wire selector to the function name it was derived from.
    pub fn function_by_selector(&self, selector: Selector) -> Option<&str> {
        self.code
            .functions
            .iter()
            .map(|f| f.name.as_str())
            .find(|name| Selector::from_name(name) == selector)
    }
}

/// How a batch transaction is verified and relayed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DispatchMode {
    IBatch,
    IBatchInlined,
    Top1Elided,
    BaselineB0,
    BaselineB1,
    BaselineB2,
    IdealNoReplayDefense,
}

impl DispatchMode {
    pub fn parse(s: &str) -> Option<DispatchMode> {
        Some(match s.to_ascii_lowercase().as_str() {
            "ibatch" => DispatchMode::IBatch,
            "inlined" | "ibatch-inlined" => DispatchMode::IBatchInlined,
            "top1" | "top1-elided" => DispatchMode::Top1Elided,
            "b0" => DispatchMode::BaselineB0,
            "b1" => DispatchMode::BaselineB1,
            "b2" => DispatchMode::BaselineB2,
            "ideal" => DispatchMode::IdealNoReplayDefense,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            DispatchMode::IBatch => "ibatch",
            DispatchMode::IBatchInlined => "inlined",
            DispatchMode::Top1Elided => "top1-elided",
            DispatchMode::BaselineB0 => "b0",
            DispatchMode::BaselineB1 => "b1",
            DispatchMode::BaselineB2 => "b2",
            DispatchMode::IdealNoReplayDefense => "ideal",
        }
    }
}

/// Caller/callee cardinality class of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchType {
    S1,
    S2,
    S3,
    S4,
}

/// Classifies by distinct callers and callees. Panics on an empty batch;
/// callers never form one.
pub fn classify_batch(calls: &[CallTuple]) -> BatchType {
    assert!(!calls.is_empty(), "cannot classify an empty batch");
    let one_caller = calls.iter().all(|c| c.caller == calls[0].caller);
    let one_callee = calls.iter().all(|c| c.callee == calls[0].callee);
    match (one_caller, one_callee) {
        (true, true) => BatchType::S1,
        (false, true) => BatchType::S2,
        (true, false) => BatchType::S3,
        (false, false) => BatchType::S4,
    }
}

/// Knobs for picking a dispatch variant for one batch.
#[derive(Debug, Clone, Copy)]
pub struct SelectConfig {
    pub inlining: bool,
    /// Sender of the batch transaction.
    pub batch_sender: Address,
    /// The batch's unique caller, when it has one (S1/S3).
    pub batch_caller: Option<Address>,
}

/// Picks the cheapest applicable variant: verification elision when the
/// single caller is the batch sender, inlining for single-callee batches,
/// otherwise the general mechanism.
pub fn select_mode(bt: BatchType, config: &SelectConfig) -> DispatchMode {
    if matches!(bt, BatchType::S1 | BatchType::S3)
        && config.batch_caller == Some(config.batch_sender)
    {
        return DispatchMode::Top1Elided;
    }
    if matches!(bt, BatchType::S1 | BatchType::S2) && config.inlining {
        return DispatchMode::IBatchInlined;
    }
    DispatchMode::IBatch
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DispatchError {
    #[error("malformed batch data: {0}")]
    Malformed(EncodingError),
    #[error("signed batcher nonce {signed} does not match transaction nonce {tx}")]
    BatcherNonceMismatch { signed: u64, tx: u64 },
    #[error("mode violation: {0}")]
    ModeViolation(String),
}

/// Whole-transaction failure; gas is charged regardless.
#[derive(Debug, PartialEq, Eq)]
pub struct DispatchFailure {
    pub error: DispatchError,
    pub gas: u64,
}

/// Fate of one batch entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallOutcome {
    Executed {
        output: Vec<Word>,
    },
    /// Zero-signature sentinel: the caller never signed (DoS timeout).
    SkippedMissingSignature,
    /// Recovery failed or recovered a different account.
    SkippedBadSignature,
    /// Nonce-checking baseline rejected a replayed or stale entry nonce.
    SkippedNonceReplay,
    /// Callee has no Dispatcher-callable twin for this function.
    AccessDenied,
    /// Callee reverted; effects of this entry rolled back.
    Failed(String),
}

impl CallOutcome {
    pub fn executed(&self) -> bool {
        matches!(self, CallOutcome::Executed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallResult {
    pub index: usize,
    pub caller: Address,
    pub callee: Address,
    pub outcome: CallOutcome,
}

/// Metered result of a dispatched batch.
#[derive(Debug, Clone)]
pub struct BatchExecution {
    pub results: Vec<CallResult>,
    pub gas: u64,
    pub ops: Vec<MeterOp>,
}

impl BatchExecution {
    pub fn executed_count(&self) -> usize {
        self.results.iter().filter(|r| r.outcome.executed()).count()
    }
}

/// Per-entry message of the no-replay-defense baseline: the bare call.
pub fn ideal_entry_message(call: &CallTuple) -> Vec<u8> {
    encode_call(call).expect("entry already validated")
}

/// Per-entry message of the nonce baseline: the call plus its nonce.
pub fn b2_entry_message(call: &CallTuple, nonce: u64) -> Vec<u8> {
    let mut out = encode_call(call).expect("entry already validated");
    out.extend_from_slice(&nonce.to_be_bytes());
    out
}

/// Storage variable holding B2's per-caller nonces in Dispatcher storage.
pub const B2_NONCE_VAR: &str = "caller_nonces";

fn whole_batch_gas(model: &GasCostModel, data: &[u8]) -> u64 {
    model.transaction_gas(crate::core::word_len(data))
}

/// Executes a batch transaction against the callee registry.
///
/// `dispatcher_state` is the Dispatcher's own storage; only the B2 variant
/// writes to it. The batch transaction base and per-entry framing are
/// metered here, callee execution inside the interpreter, all against the
/// same schedule.
#[allow(clippy::too_many_arguments)]
pub fn dispatch(
    batch: &BatchTransaction,
    mode: DispatchMode,
    contracts: &mut BTreeMap<Address, ContractAccount>,
    dispatcher_address: Address,
    dispatcher_state: &mut ContractState,
    now_s: u64,
    model: &GasCostModel,
) -> Result<BatchExecution, DispatchFailure> {
    dispatch_tx(
        &batch.tx,
        mode,
        contracts,
        dispatcher_address,
        dispatcher_state,
        now_s,
        model,
    )
}

/// [`dispatch`] against a raw transaction, the form the chain simulator
/// uses when applying a block: everything is parsed from the data field.
#[allow(clippy::too_many_arguments)]
pub fn dispatch_tx(
    tx: &crate::core::Transaction,
    mode: DispatchMode,
    contracts: &mut BTreeMap<Address, ContractAccount>,
    dispatcher_address: Address,
    dispatcher_state: &mut ContractState,
    now_s: u64,
    model: &GasCostModel,
) -> Result<BatchExecution, DispatchFailure> {
    let data = &tx.data;
    let fail = |error: DispatchError| DispatchFailure {
        error,
        gas: whole_batch_gas(model, data),
    };

    // Parse the data field per the mode's wire layout.
    let (payload, payload_bytes, entry_nonces, sigs) = if mode == DispatchMode::BaselineB2 {
        match decode_dispatch_nonces_data(data) {
            Ok(d) => {
                let bytes = crate::core::encode_sign_payload(&d.payload)
                    .map_err(|e| fail(DispatchError::Malformed(e)))?;
                (d.payload, bytes, Some(d.entry_nonces), d.sigs)
            }
            Err(e) => return Err(fail(DispatchError::Malformed(e))),
        }
    } else {
        match decode_dispatch_data(data) {
            Ok(d) => (d.payload, d.payload_bytes, None, d.sigs),
            Err(e) => return Err(fail(DispatchError::Malformed(e))),
        }
    };

    if sigs.len() != payload.calls.len() {
        return Err(fail(DispatchError::Malformed(EncodingError::Truncated(
            "one signature per call",
        ))));
    }
    if let Some(nonces) = &entry_nonces {
        if nonces.len() != payload.calls.len() {
            return Err(fail(DispatchError::Malformed(EncodingError::Truncated(
                "one nonce per call",
            ))));
        }
    }

    // The callers signed the batcher nonce; a replayed data field under a
    // fresh transaction nonce dies here.
    if payload.batcher_nonce != tx.nonce {
        return Err(fail(DispatchError::BatcherNonceMismatch {
            signed: payload.batcher_nonce,
            tx: tx.nonce,
        }));
    }

    match mode {
        DispatchMode::BaselineB0 => {
            return Err(fail(DispatchError::ModeViolation(
                "B0 sends dedicated transactions, not batches".into(),
            )))
        }
        DispatchMode::Top1Elided => {
            if payload.calls.iter().any(|c| c.caller != tx.sender) {
                return Err(fail(DispatchError::ModeViolation(
                    "top1-elided requires every caller to be the batch sender".into(),
                )));
            }
        }
        DispatchMode::BaselineB1 => {
            for call in &payload.calls {
                let is_token = contracts
                    .get(&call.callee)
                    .map(|c| c.code.function("transferFrom").is_some())
                    .unwrap_or(false);
                if !is_token {
                    return Err(fail(DispatchError::ModeViolation(
                        "allowance baseline requires token callees".into(),
                    )));
                }
            }
        }
        _ => {}
    }

    let mut ops: Vec<MeterOp> = vec![MeterOp::Transaction { data_words: 0 }];
    let mut results = Vec::with_capacity(payload.calls.len());

    for (i, call) in payload.calls.iter().enumerate() {
        let arg_words = call.args.len() as u64;
        ops.push(MeterOp::BatchEntryData { arg_words });

        // Establish the sender identity for this entry.
        let from = match mode {
            DispatchMode::Top1Elided => tx.sender,
            _ => {
                let sig = &sigs[i];
                if sig.is_zero() {
                    results.push(CallResult {
                        index: i,
                        caller: call.caller,
                        callee: call.callee,
                        outcome: CallOutcome::SkippedMissingSignature,
                    });
                    continue;
                }
                ops.push(MeterOp::SignatureVerify);
                let message: Vec<u8> = match mode {
                    DispatchMode::IdealNoReplayDefense => ideal_entry_message(call),
                    DispatchMode::BaselineB2 => {
                        b2_entry_message(call, entry_nonces.as_ref().expect("b2 nonces")[i])
                    }
                    _ => payload_bytes.clone(),
                };
                match recover(&message, sig) {
                    Ok(addr) if addr == call.caller => addr,
                    _ => {
                        results.push(CallResult {
                            index: i,
                            caller: call.caller,
                            callee: call.callee,
                            outcome: CallOutcome::SkippedBadSignature,
                        });
                        continue;
                    }
                }
            }
        };

        // Nonce gate of the on-chain-counter baseline.
        if mode == DispatchMode::BaselineB2 {
            let nonce = entry_nonces.as_ref().expect("b2 nonces")[i];
            let key = vec![call.caller.to_word()];
            ops.push(MeterOp::StorageRead { words: 1 });
            let stored = dispatcher_state.get(B2_NONCE_VAR, &key);
            let expected = stored.as_u128().unwrap_or(0) as u64;
            if nonce != expected {
                results.push(CallResult {
                    index: i,
                    caller: call.caller,
                    callee: call.callee,
                    outcome: CallOutcome::SkippedNonceReplay,
                });
                continue;
            }
            // Nonce slots are modeled as warm: charged as an update.
            ops.push(MeterOp::StorageUpdate { words: 1 });
            dispatcher_state.set(B2_NONCE_VAR, key, Word::from_u128(expected as u128 + 1));
        }

        let contract = match contracts.get_mut(&call.callee) {
            Some(c) => c,
            None => {
                results.push(CallResult {
                    index: i,
                    caller: call.caller,
                    callee: call.callee,
                    outcome: CallOutcome::Failed("unknown callee".into()),
                });
                continue;
            }
        };

        let func_name = match contract.function_by_selector(call.func) {
            Some(name) => name.to_string(),
            None => {
                results.push(CallResult {
                    index: i,
                    caller: call.caller,
                    callee: call.callee,
                    outcome: CallOutcome::Failed("unknown selector".into()),
                });
                continue;
            }
        };

        let outcome = match mode {
            DispatchMode::BaselineB1 => {
                // Relay through pre-approved allowance: one storage touch
                // for the allowance word, then the unmodified function with
                // the entry's sender identity.
                ops.push(MeterOp::StorageUpdate { words: 1 });
                ops.push(MeterOp::InternalCall {
                    data_words: arg_words,
                });
                let env = ExecEnv::new(dispatcher_address, call.callee)
                    .at_time(now_s)
                    .with_from_override(from);
                match exec(
                    &contract.code,
                    &func_name,
                    &env,
                    &mut contract.state,
                    &call.args,
                    model,
                ) {
                    Ok(trace) => {
                        ops.extend_from_slice(&trace.ops);
                        CallOutcome::Executed {
                            output: trace.output,
                        }
                    }
                    Err(e) => exec_failure(e),
                }
            }
            _ => {
                let twin = format!("{func_name}{BYD_SUFFIX}");
                if contract.code.function(&twin).is_none() {
                    results.push(CallResult {
                        index: i,
                        caller: call.caller,
                        callee: call.callee,
                        outcome: CallOutcome::AccessDenied,
                    });
                    continue;
                }
                if mode != DispatchMode::IBatchInlined {
                    // The forwarded sender rides as one extra call word.
                    ops.push(MeterOp::InternalCall {
                        data_words: arg_words + 1,
                    });
                }
                let mut args = Vec::with_capacity(call.args.len() + 1);
                args.push(from.to_word());
                args.extend_from_slice(&call.args);
                let env = ExecEnv::new(dispatcher_address, call.callee).at_time(now_s);
                match exec(
                    &contract.code,
                    &twin,
                    &env,
                    &mut contract.state,
                    &args,
                    model,
                ) {
                    Ok(trace) => {
                        ops.extend_from_slice(&trace.ops);
                        CallOutcome::Executed {
                            output: trace.output,
                        }
                    }
                    Err(e) => exec_failure(e),
                }
            }
        };

        results.push(CallResult {
            index: i,
            caller: call.caller,
            callee: call.callee,
            outcome,
        });
    }

    let gas = model.meter(&ops);
    Ok(BatchExecution { results, gas, ops })
}

fn exec_failure(e: ExecError) -> CallOutcome {
    match e {
        ExecError::AccessDenied => CallOutcome::AccessDenied,
        other => CallOutcome::Failed(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{
        assemble_batch_tx, BatchSignPayload, Invocation, Transaction, DISPATCH_NONCES_SELECTOR,
    };
    use crate::costmodel::WorkloadShape;
    use crate::identity::Signature;
    use crate::identity::{keygen, KeyPair};
    use crate::rewriter::{fixtures, rewrite};

    fn model() -> GasCostModel {
        GasCostModel::default()
    }

    struct Rig {
        batcher: KeyPair,
        callers: Vec<KeyPair>,
        dispatcher_addr: Address,
        token_addr: Address,
        contracts: BTreeMap<Address, ContractAccount>,
        dispatcher_state: ContractState,
    }

    fn rig(n_callers: usize) -> Rig {
        let batcher = keygen(&[0xbb; 32]).unwrap();
        let callers: Vec<KeyPair> = (0..n_callers)
            .map(|i| {
                let mut seed = [0u8; 32];
                seed[0] = 1;
                seed[1] = i as u8;
                keygen(&seed).unwrap()
            })
            .collect();
        let dispatcher_addr = Address([0xdd; 20]);
        let token_addr = Address([0xee; 20]);
        let token = rewrite(&fixtures::erc20(), dispatcher_addr).unwrap();
        let mut account = ContractAccount::new(token_addr, token);
        for kp in &callers {
            account.state.set(
                "balances",
                vec![kp.address.to_word()],
                Word::from_u128(1_000_000),
            );
        }
        // Receiver cell pre-seeded so transfers stay update-only.
        account.state.set(
            "balances",
            vec![Address([0x77; 20]).to_word()],
            Word::from_u128(1),
        );
        let mut contracts = BTreeMap::new();
        contracts.insert(token_addr, account);
        Rig {
            batcher,
            callers,
            dispatcher_addr,
            token_addr,
            contracts,
            dispatcher_state: ContractState::new(),
        }
    }

    fn transfer_invocation(rig: &Rig, caller_idx: usize, amount: u128) -> Invocation {
        Invocation {
            caller: rig.callers[caller_idx].address,
            callee: rig.token_addr,
            func: Selector::from_name("transfer"),
            args: vec![Address([0x77; 20]).to_word(), Word::from_u128(amount)],
            caller_nonce: 0,
            gas_price: 5,
            submit_time_ms: 0,
            origin_block: None,
        }
    }

    fn signed_batch(rig: &Rig, calls: Vec<CallTuple>, nonce: u64) -> BatchTransaction {
        let payload = BatchSignPayload {
            calls,
            batcher_nonce: nonce,
        };
        let bytes = crate::core::encode_sign_payload(&payload).unwrap();
        let sigs: Vec<Signature> = payload
            .calls
            .iter()
            .map(|c| {
                rig.callers
                    .iter()
                    .find(|kp| kp.address == c.caller)
                    .expect("caller key")
                    .sign(&bytes)
            })
            .collect();
        assemble_batch_tx(
            payload,
            sigs,
            &rig.batcher,
            nonce,
            rig.dispatcher_addr,
            9,
            0,
        )
        .unwrap()
    }

    fn b2_batch(
        rig: &Rig,
        calls: Vec<CallTuple>,
        entry_nonces: Vec<u64>,
        nonce: u64,
    ) -> BatchTransaction {
        let payload = BatchSignPayload {
            calls,
            batcher_nonce: nonce,
        };
        let sigs: Vec<Signature> = payload
            .calls
            .iter()
            .zip(&entry_nonces)
            .map(|(c, n)| {
                rig.callers
                    .iter()
                    .find(|kp| kp.address == c.caller)
                    .expect("caller key")
                    .sign(&b2_entry_message(c, *n))
            })
            .collect();
        let data =
            crate::core::encode_dispatch_nonces_data(&payload, &entry_nonces, &sigs).unwrap();
        let signing = Transaction::signing_bytes(nonce, rig.dispatcher_addr, 0, 9, &data);
        BatchTransaction {
            tx: Transaction {
                sender: rig.batcher.address,
                nonce,
                to: rig.dispatcher_addr,
                value: 0,
                gas_price: 9,
                data,
                signature: rig.batcher.sign(&signing),
            },
            payload,
            caller_sigs: sigs,
        }
    }

    #[test]
    fn single_entry_gas_matches_analytic_form() {
        let mut r = rig(1);
        let inv = transfer_invocation(&r, 0, 10);
        let batch = signed_batch(&r, vec![inv.tuple()], 0);
        let exec = dispatch(
            &batch,
            DispatchMode::IBatch,
            &mut r.contracts,
            r.dispatcher_addr,
            &mut r.dispatcher_state,
            0,
            &model(),
        )
        .unwrap();
        assert_eq!(exec.executed_count(), 1);
        // Callee gas: blacklist read + two read/update pairs.
        let y = 200 + 2 * (200 + 5000);
        let expected = model().cost_ibatch(&WorkloadShape::new(1, 2, y)).unwrap();
        assert_eq!(exec.gas, expected);
    }

    #[test]
    fn forged_entry_is_skipped_others_proceed() {
        let mut r = rig(3);
        let calls: Vec<CallTuple> = (0..3)
            .map(|i| transfer_invocation(&r, i, 10 + i as u128).tuple())
            .collect();
        let payload = BatchSignPayload {
            calls,
            batcher_nonce: 0,
        };
        let bytes = crate::core::encode_sign_payload(&payload).unwrap();
        let outsider = keygen(&[0x66; 32]).unwrap();
        let mut sigs: Vec<Signature> = (0..3).map(|i| r.callers[i].sign(&bytes)).collect();
        // Entry 1 forged: signed by someone who is not the claimed caller.
        sigs[1] = outsider.sign(&bytes);
        let batch =
            assemble_batch_tx(payload, sigs, &r.batcher, 0, r.dispatcher_addr, 9, 0).unwrap();

        let exec = dispatch(
            &batch,
            DispatchMode::IBatch,
            &mut r.contracts,
            r.dispatcher_addr,
            &mut r.dispatcher_state,
            0,
            &model(),
        )
        .unwrap();
        assert_eq!(exec.executed_count(), 2);
        assert_eq!(exec.results[1].outcome, CallOutcome::SkippedBadSignature);
        // The victim's balance is untouched.
        let token = &r.contracts[&r.token_addr];
        assert_eq!(
            token
                .state
                .get("balances", &[r.callers[1].address.to_word()]),
            Word::from_u128(1_000_000)
        );
    }

    #[test]
    fn replayed_data_under_fresh_nonce_is_rejected() {
        let mut r = rig(1);
        let inv = transfer_invocation(&r, 0, 10);
        let batch = signed_batch(&r, vec![inv.tuple()], 0);
        // Same data, bumped transaction nonce.
        let mut replayed = batch.clone();
        replayed.tx.nonce = 1;
        let failure = dispatch(
            &replayed,
            DispatchMode::IBatch,
            &mut r.contracts,
            r.dispatcher_addr,
            &mut r.dispatcher_state,
            0,
            &model(),
        )
        .unwrap_err();
        assert_eq!(
            failure.error,
            DispatchError::BatcherNonceMismatch { signed: 0, tx: 1 }
        );
        assert!(failure.gas > 0);
    }

    #[test]
    fn zero_sentinel_entry_is_skipped_without_verification() {
        let mut r = rig(2);
        let calls: Vec<CallTuple> = (0..2)
            .map(|i| transfer_invocation(&r, i, 5).tuple())
            .collect();
        let payload = BatchSignPayload {
            calls,
            batcher_nonce: 0,
        };
        let bytes = crate::core::encode_sign_payload(&payload).unwrap();
        let sigs = vec![r.callers[0].sign(&bytes), Signature::ZERO];
        let batch =
            assemble_batch_tx(payload, sigs, &r.batcher, 0, r.dispatcher_addr, 9, 0).unwrap();
        let exec = dispatch(
            &batch,
            DispatchMode::IBatch,
            &mut r.contracts,
            r.dispatcher_addr,
            &mut r.dispatcher_state,
            0,
            &model(),
        )
        .unwrap();
        assert_eq!(
            exec.results[1].outcome,
            CallOutcome::SkippedMissingSignature
        );
        let verifies = exec
            .ops
            .iter()
            .filter(|op| matches!(op, MeterOp::SignatureVerify))
            .count();
        assert_eq!(verifies, 1);
    }

    #[test]
    fn statelessness_outside_b2() {
        let r = rig(2);
        let calls: Vec<CallTuple> = (0..2)
            .map(|i| transfer_invocation(&r, i, 5).tuple())
            .collect();
        for mode in [
            DispatchMode::IBatch,
            DispatchMode::IBatchInlined,
            DispatchMode::IdealNoReplayDefense,
        ] {
            let batch = match mode {
                DispatchMode::IdealNoReplayDefense => {
                    // Per-entry signatures over the bare calls.
                    let payload = BatchSignPayload {
                        calls: calls.clone(),
                        batcher_nonce: 0,
                    };
                    let sigs: Vec<Signature> = payload
                        .calls
                        .iter()
                        .enumerate()
                        .map(|(i, c)| r.callers[i].sign(&ideal_entry_message(c)))
                        .collect();
                    assemble_batch_tx(payload, sigs, &r.batcher, 0, r.dispatcher_addr, 9, 0)
                        .unwrap()
                }
                _ => signed_batch(&r, calls.clone(), 0),
            };
            let mut contracts = r.contracts.clone();
            let mut dstate = ContractState::new();
            let exec = dispatch(
                &batch,
                mode,
                &mut contracts,
                r.dispatcher_addr,
                &mut dstate,
                0,
                &model(),
            )
            .unwrap();
            assert_eq!(exec.executed_count(), 2, "{mode:?}");
            assert_eq!(dstate.occupied_cells(), 0, "{mode:?}");
        }
    }

    #[test]
    fn b2_rejects_replayed_entry_nonce() {
        let mut r = rig(1);
        let call = transfer_invocation(&r, 0, 5).tuple();

        let batch = b2_batch(&r, vec![call.clone()], vec![0], 0);
        let exec1 = dispatch(
            &batch,
            DispatchMode::BaselineB2,
            &mut r.contracts,
            r.dispatcher_addr,
            &mut r.dispatcher_state,
            0,
            &model(),
        )
        .unwrap();
        assert_eq!(exec1.executed_count(), 1);
        assert_eq!(r.dispatcher_state.occupied_cells(), 1);

        // Same entry nonce again under a fresh batch: rejected.
        let batch2 = b2_batch(&r, vec![call], vec![0], 1);
        let exec2 = dispatch(
            &batch2,
            DispatchMode::BaselineB2,
            &mut r.contracts,
            r.dispatcher_addr,
            &mut r.dispatcher_state,
            0,
            &model(),
        )
        .unwrap();
        assert_eq!(exec2.results[0].outcome, CallOutcome::SkippedNonceReplay);
    }

    #[test]
    fn top1_requires_uniform_sender() {
        let mut r = rig(2);
        let calls: Vec<CallTuple> = (0..2)
            .map(|i| transfer_invocation(&r, i, 5).tuple())
            .collect();
        let batch = signed_batch(&r, calls, 0);
        let failure = dispatch(
            &batch,
            DispatchMode::Top1Elided,
            &mut r.contracts,
            r.dispatcher_addr,
            &mut r.dispatcher_state,
            0,
            &model(),
        )
        .unwrap_err();
        assert!(matches!(failure.error, DispatchError::ModeViolation(_)));
    }

    #[test]
    fn b1_on_non_token_callee_is_a_mode_violation() {
        let mut r = rig(1);
        // Swap in a callee without transferFrom.
        let htlc_addr = Address([0xe2; 20]);
        let htlc = rewrite(&fixtures::htlc(), r.dispatcher_addr).unwrap();
        r.contracts
            .insert(htlc_addr, ContractAccount::new(htlc_addr, htlc));
        let mut inv = transfer_invocation(&r, 0, 5);
        inv.callee = htlc_addr;
        let batch = signed_batch(&r, vec![inv.tuple()], 0);
        let failure = dispatch(
            &batch,
            DispatchMode::BaselineB1,
            &mut r.contracts,
            r.dispatcher_addr,
            &mut r.dispatcher_state,
            0,
            &model(),
        )
        .unwrap_err();
        assert!(matches!(failure.error, DispatchError::ModeViolation(_)));
    }

    #[test]
    fn unrewritten_callee_is_access_denied() {
        let mut r = rig(1);
        let plain_addr = Address([0xe3; 20]);
        r.contracts.insert(
            plain_addr,
            ContractAccount::new(plain_addr, fixtures::erc20()),
        );
        let mut inv = transfer_invocation(&r, 0, 5);
        inv.callee = plain_addr;
        let batch = signed_batch(&r, vec![inv.tuple()], 0);
        let exec = dispatch(
            &batch,
            DispatchMode::IBatch,
            &mut r.contracts,
            r.dispatcher_addr,
            &mut r.dispatcher_state,
            0,
            &model(),
        )
        .unwrap();
        assert_eq!(exec.results[0].outcome, CallOutcome::AccessDenied);
    }

    #[test]
    fn failing_entry_is_isolated() {
        let mut r = rig(2);
        // Entry 0 exceeds its balance; entry 1 is fine.
        let calls = vec![
            transfer_invocation(&r, 0, 10_000_000).tuple(),
            transfer_invocation(&r, 1, 5).tuple(),
        ];
        let batch = signed_batch(&r, calls, 0);
        let exec = dispatch(
            &batch,
            DispatchMode::IBatch,
            &mut r.contracts,
            r.dispatcher_addr,
            &mut r.dispatcher_state,
            0,
            &model(),
        )
        .unwrap();
        assert!(matches!(exec.results[0].outcome, CallOutcome::Failed(_)));
        assert!(exec.results[1].outcome.executed());
        let token = &r.contracts[&r.token_addr];
        assert_eq!(
            token
                .state
                .get("balances", &[r.callers[0].address.to_word()]),
            Word::from_u128(1_000_000)
        );
        assert_eq!(
            token
                .state
                .get("balances", &[r.callers[1].address.to_word()]),
            Word::from_u128(999_995)
        );
    }

    #[test]
    fn mode_equivalence_of_state_transitions() {
        // The same batch under IBatch and IBatchInlined yields identical
        // callee state; only gas differs (by exactly the call charges).
        let r = rig(3);
        let calls: Vec<CallTuple> = (0..3)
            .map(|i| transfer_invocation(&r, i, 7).tuple())
            .collect();
        let batch = signed_batch(&r, calls, 0);
        let run = |mode: DispatchMode| {
            let mut contracts = r.contracts.clone();
            let mut dstate = ContractState::new();
            let exec = dispatch(
                &batch,
                mode,
                &mut contracts,
                r.dispatcher_addr,
                &mut dstate,
                0,
                &model(),
            )
            .unwrap();
            (contracts[&r.token_addr].state.clone(), exec.gas)
        };
        let (state_plain, gas_plain) = run(DispatchMode::IBatch);
        let (state_inlined, gas_inlined) = run(DispatchMode::IBatchInlined);
        assert_eq!(state_plain, state_inlined);
        let call_charge = 3 * model().internal_call_gas(2 + 1);
        assert_eq!(gas_plain - gas_inlined, call_charge);
    }

    #[test]
    fn gas_ordering_across_modes() {
        // inlined < ibatch < both storage-writing baselines, which sit
        // within 15% of each other.
        let r = rig(5);
        let calls: Vec<CallTuple> = (0..5)
            .map(|i| transfer_invocation(&r, i, 3).tuple())
            .collect();

        let gas_of = |mode: DispatchMode| -> u64 {
            let mut contracts = r.contracts.clone();
            let mut dstate = ContractState::new();
            let batch = match mode {
                DispatchMode::BaselineB2 => b2_batch(&r, calls.clone(), vec![0; 5], 0),
                DispatchMode::IdealNoReplayDefense => {
                    let payload = BatchSignPayload {
                        calls: calls.clone(),
                        batcher_nonce: 0,
                    };
                    let sigs: Vec<Signature> = payload
                        .calls
                        .iter()
                        .enumerate()
                        .map(|(i, c)| r.callers[i].sign(&ideal_entry_message(c)))
                        .collect();
                    assemble_batch_tx(payload, sigs, &r.batcher, 0, r.dispatcher_addr, 9, 0)
                        .unwrap()
                }
                _ => signed_batch(&r, calls.clone(), 0),
            };
            dispatch(
                &batch,
                mode,
                &mut contracts,
                r.dispatcher_addr,
                &mut dstate,
                0,
                &model(),
            )
            .unwrap()
            .gas
        };

        let inlined = gas_of(DispatchMode::IBatchInlined);
        let ibatch = gas_of(DispatchMode::IBatch);
        let ideal = gas_of(DispatchMode::IdealNoReplayDefense);
        let b1 = gas_of(DispatchMode::BaselineB1);
        let b2 = gas_of(DispatchMode::BaselineB2);
        assert!(inlined < ibatch);
        assert_eq!(ibatch, ideal);
        assert!(ibatch < b1);
        assert!(ibatch < b2);
        let spread = b2.abs_diff(b1) as f64 / b1.max(b2) as f64;
        assert!(spread < 0.15, "b1={b1} b2={b2}");
    }

    #[test]
    fn b1_gas_matches_analytic_form() {
        let mut r = rig(4);
        let calls: Vec<CallTuple> = (0..4)
            .map(|i| transfer_invocation(&r, i, 7).tuple())
            .collect();
        let batch = signed_batch(&r, calls, 0);
        let exec = dispatch(
            &batch,
            DispatchMode::BaselineB1,
            &mut r.contracts,
            r.dispatcher_addr,
            &mut r.dispatcher_state,
            0,
            &model(),
        )
        .unwrap();
        assert_eq!(exec.executed_count(), 4);
        let y = 200 + 2 * (200 + 5000);
        let expected = model().cost_b1(&WorkloadShape::new(4, 2, y)).unwrap();
        assert_eq!(exec.gas, expected);
    }

    #[test]
    fn classification_table() {
        let a = Address([1; 20]);
        let b = Address([2; 20]);
        let c = Address([0xe1; 20]);
        let d = Address([0xe2; 20]);
        let call = |caller: Address, callee: Address| CallTuple {
            caller,
            callee,
            func: Selector::from_name("transfer"),
            args: vec![],
        };
        assert_eq!(classify_batch(&[call(a, c), call(a, c)]), BatchType::S1);
        assert_eq!(classify_batch(&[call(a, c), call(b, c)]), BatchType::S2);
        assert_eq!(classify_batch(&[call(a, c), call(a, d)]), BatchType::S3);
        assert_eq!(classify_batch(&[call(a, c), call(b, d)]), BatchType::S4);
    }

    #[test]
    fn mode_selection_honors_customizations() {
        let batcher = Address([0xbb; 20]);
        let other = Address([0xaa; 20]);
        let cfg = |inlining: bool, caller: Option<Address>| SelectConfig {
            inlining,
            batch_sender: batcher,
            batch_caller: caller,
        };
        assert_eq!(
            select_mode(BatchType::S2, &cfg(true, None)),
            DispatchMode::IBatchInlined
        );
        assert_eq!(
            select_mode(BatchType::S1, &cfg(false, Some(batcher))),
            DispatchMode::Top1Elided
        );
        assert_eq!(
            select_mode(BatchType::S1, &cfg(false, Some(other))),
            DispatchMode::IBatch
        );
        assert_eq!(
            select_mode(BatchType::S4, &cfg(true, None)),
            DispatchMode::IBatch
        );
    }

    #[test]
    fn nonce_dispatch_data_round_trip() {
        let r = rig(1);
        let inv = transfer_invocation(&r, 0, 5);
        let payload = BatchSignPayload {
            calls: vec![inv.tuple()],
            batcher_nonce: 3,
        };
        let sigs = vec![r.callers[0].sign(b"x")];
        let data = crate::core::encode_dispatch_nonces_data(&payload, &[7], &sigs).unwrap();
        assert_eq!(&data[..4], &DISPATCH_NONCES_SELECTOR.0);
        let decoded = crate::core::decode_dispatch_nonces_data(&data).unwrap();
        assert_eq!(decoded.payload, payload);
        assert_eq!(decoded.entry_nonces, vec![7]);
    }
}
