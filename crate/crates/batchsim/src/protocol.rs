//! The off-chain joint-signing protocol between the Batcher and callers,
//! the DoS-timeout extension, the caller-side audit, and a scripted
//! adversarial-Batcher harness.
//!
//! The happy path: callers submit invocations into the Batcher's buffer;
//! at batch time the Batcher forms a batch message carrying every call
//! with its caller nonce plus the Batcher's own account nonce, broadcasts
//! it, and every caller signs the nonce-stripped payload after checking
//! that exactly one copy of its own invocation is present. Signatures come
//! back in message order; callers that stay silent past the timeout are
//! marked with a zero-signature sentinel so the signed bytes are identical
//! for everyone and the batch proceeds without them.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::chainsim::{ChainState, TxId};
use crate::core::{
    assemble_batch_tx, decode_dispatch_data, encode_sign_payload, Address, BatchEntry,
    BatchMessage, BatchSignPayload, BatchTransaction, CallTuple, Invocation, ProtocolError,
    Selector, Word,
};
use crate::identity::{KeyPair, Signature};
use crate::policy::{select_windowed, PolicySpec};

/// Why a caller declined to sign a batch message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refusal {
    /// None of the caller's pending invocations appear.
    Missing,
    /// Some invocation of the caller appears more than once.
    Duplicated,
    /// An entry carries a nonce other than the one the caller recorded.
    NonceMismatch,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubmitRetry {
    #[error("batch window is sealed; resubmit next window")]
    Retry,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BatchFormation {
    #[error("no batch formed this window")]
    NoBatch,
}

/// Scripted response behavior of a caller, for the DoS extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentBehavior {
    Honest,
    /// Never answers a signing request within the timeout.
    Unresponsive,
}

/// One submission a caller still tracks.
#[derive(Debug, Clone)]
pub struct PendingRecord {
    pub caller_nonce: u64,
    pub tuple: CallTuple,
    /// Batch transaction the Batcher acknowledged this call under.
    pub acked_tx: Option<TxId>,
}

/// A caller participating in the protocol.
pub struct CallerAgent {
    pub keys: KeyPair,
    pub local_nonce: u64,
    pub pending: Vec<PendingRecord>,
    pub received_acks: Vec<TxId>,
    pub behavior: AgentBehavior,
}

impl CallerAgent {
    pub fn new(keys: KeyPair) -> CallerAgent {
        CallerAgent {
            keys,
            local_nonce: 0,
            pending: Vec::new(),
            received_acks: Vec::new(),
            behavior: AgentBehavior::Honest,
        }
    }

    pub fn address(&self) -> Address {
        self.keys.address
    }

    /// Validates a batch message and signs its payload when every entry
    /// under this caller's identity is exactly one copy of a live pending
    /// invocation with the locally recorded nonce.
    ///
    /// The joint signature endorses the whole payload, so an entry the
    /// caller cannot account for — a duplicate, a spent or unknown nonce,
    /// an invocation never made — means refusal, and the distinct nonce
    /// per submission is what tells two legitimately identical calls
    /// apart from a replayed one.
    pub fn validate_and_sign(&self, bmsg: &BatchMessage) -> Result<Signature, Refusal> {
        let mine: Vec<&BatchEntry> = bmsg
            .entries
            .iter()
            .filter(|e| e.invocation.caller == self.address())
            .collect();
        if mine.is_empty() {
            return Err(Refusal::Missing);
        }
        for entry in &mine {
            let tuple = entry.invocation.tuple();
            let copies = mine
                .iter()
                .filter(|e| e.invocation.tuple() == tuple && e.caller_nonce == entry.caller_nonce)
                .count();
            if copies != 1 {
                return Err(Refusal::Duplicated);
            }
            let live = self.pending.iter().any(|r| {
                r.tuple == tuple && r.caller_nonce == entry.caller_nonce && r.acked_tx.is_none()
            });
            if live {
                continue;
            }
            // Not a live submission: classify the refusal.
            let spent = self
                .pending
                .iter()
                .any(|r| r.tuple == tuple && r.caller_nonce == entry.caller_nonce);
            if spent {
                return Err(Refusal::Duplicated);
            }
            let known_tuple = self
                .pending
                .iter()
                .any(|r| r.tuple == tuple && r.acked_tx.is_none());
            if known_tuple {
                return Err(Refusal::NonceMismatch);
            }
            return Err(Refusal::Missing);
        }
        let payload = bmsg.sign_payload();
        let bytes = encode_sign_payload(&payload).map_err(|_| Refusal::Missing)?;
        Ok(self.keys.sign(&bytes))
    }
}

/// The untrusted aggregation service.
pub struct BatcherService {
    pub account: KeyPair,
    /// Account nonce of the next batch transaction; strictly increasing.
    pub next_nonce: u64,
    pub buffer: Vec<Invocation>,
    pub spec: PolicySpec,
    pub sign_timeout_ms: u64,
    accepting: bool,
}

impl BatcherService {
    pub fn new(account: KeyPair, spec: PolicySpec) -> BatcherService {
        let sign_timeout_ms = spec.window_s * 1000;
        BatcherService {
            account,
            next_nonce: 0,
            buffer: Vec::new(),
            spec,
            sign_timeout_ms,
            accepting: true,
        }
    }

    /// Closes the buffer while a window is being sealed; submissions get
    /// a retry signal.
    pub fn seal(&mut self) {
        self.accepting = false;
    }

    pub fn reopen(&mut self) {
        self.accepting = true;
    }

    /// Buffers one invocation built from the caller's state; assigns the
    /// caller nonce and advances it.
    pub fn submit(
        &mut self,
        caller: &mut CallerAgent,
        callee: Address,
        func: Selector,
        args: Vec<Word>,
        gas_price: u64,
        now_ms: u64,
    ) -> Result<Invocation, SubmitRetry> {
        if !self.accepting {
            return Err(SubmitRetry::Retry);
        }
        let invocation = Invocation {
            caller: caller.address(),
            callee,
            func,
            args,
            caller_nonce: caller.local_nonce,
            gas_price,
            submit_time_ms: now_ms,
            origin_block: None,
        };
        caller.pending.push(PendingRecord {
            caller_nonce: caller.local_nonce,
            tuple: invocation.tuple(),
            acked_tx: None,
        });
        caller.local_nonce += 1;
        self.buffer.push(invocation.clone());
        Ok(invocation)
    }

    /// Forms the batch message for the window ending at `now_ms`: policy
    /// selection over the buffer, selected invocations removed, entries in
    /// buffer order with their caller nonces, fresh batcher nonce.
    pub fn form_batch(&mut self, now_ms: u64) -> Result<BatchMessage, BatchFormation> {
        let window_start = now_ms.saturating_sub(self.spec.window_s * 1000);
        let selected = select_windowed(&self.buffer, &self.spec, window_start, now_ms)
            .ok_or(BatchFormation::NoBatch)?;
        let mut entries = Vec::with_capacity(selected.len());
        for &i in &selected {
            let inv = self.buffer[i].clone();
            entries.push(BatchEntry {
                caller_nonce: inv.caller_nonce,
                invocation: inv,
            });
        }
        for i in selected.into_iter().rev() {
            self.buffer.remove(i);
        }
        Ok(BatchMessage {
            entries,
            batcher_nonce: self.next_nonce,
        })
    }

    /// Broadcasts the batch message and gathers signatures in message
    /// order. Callers that stay silent past the timeout are dropped: their
    /// slot carries the zero sentinel and the Dispatcher will skip them.
    /// Refusals drop the entry the same way. Errors when nobody signed.
    pub fn collect_signatures(
        &self,
        bmsg: &BatchMessage,
        agents: &[CallerAgent],
        _timeout_ms: u64,
    ) -> Result<(BatchSignPayload, Vec<Signature>, Vec<usize>), BatchFormation> {
        let payload = bmsg.sign_payload();
        // Each caller answers once for the whole message.
        let mut responses: BTreeMap<Address, Option<Signature>> = BTreeMap::new();
        for entry in &bmsg.entries {
            let caller = entry.invocation.caller;
            responses.entry(caller).or_insert_with(|| {
                let agent = agents.iter().find(|a| a.address() == caller)?;
                if agent.behavior == AgentBehavior::Unresponsive {
                    return None;
                }
                agent.validate_and_sign(bmsg).ok()
            });
        }
        let mut sigs = Vec::with_capacity(bmsg.entries.len());
        let mut dropped = Vec::new();
        for (i, entry) in bmsg.entries.iter().enumerate() {
            match responses[&entry.invocation.caller] {
                Some(sig) => sigs.push(sig),
                None => {
                    sigs.push(Signature::ZERO);
                    dropped.push(i);
                }
            }
        }
        if dropped.len() == bmsg.entries.len() {
            return Err(BatchFormation::NoBatch);
        }
        Ok((payload, sigs, dropped))
    }

    /// Assembles and signs the batch transaction, advancing the nonce.
    pub fn emit(
        &mut self,
        payload: BatchSignPayload,
        sigs: Vec<Signature>,
        dispatcher: Address,
        gas_price: u64,
    ) -> Result<BatchTransaction, ProtocolError> {
        let batch = assemble_batch_tx(
            payload,
            sigs,
            &self.account,
            self.next_nonce,
            dispatcher,
            gas_price,
            0,
        )?;
        self.next_nonce += 1;
        Ok(batch)
    }
}

// --- caller audit ----------------------------------------------------------

/// Self-contained evidence naming a missing acknowledged invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OmissionEvidence {
    pub acked_tx: TxId,
    pub block: Option<u64>,
    pub caller_nonce: u64,
    pub invocation_bytes: Vec<u8>,
}

/// Evidence of the same invocation appearing more often than acknowledged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayEvidence {
    pub caller_nonce: u64,
    pub occurrences: usize,
    pub expected: usize,
    pub invocation_bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub omissions: Vec<OmissionEvidence>,
    pub replays: Vec<ReplayEvidence>,
    /// Pairs of batch transactions to the Dispatcher landing within one
    /// batch window of each other — the splitting anomaly.
    pub split_anomalies: Vec<(TxId, TxId)>,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.omissions.is_empty() && self.replays.is_empty() && self.split_anomalies.is_empty()
    }
}

/// Audits the public chain history from one caller's standpoint: every
/// acknowledged invocation must sit exactly once in its acknowledged batch
/// transaction, appear in no other Dispatcher-bound transaction, and batch
/// transactions must not cluster inside one window.
pub fn audit(caller: &CallerAgent, chain: &ChainState, window_s: u64) -> AuditReport {
    let mut report = AuditReport::default();

    // Collect Dispatcher-bound batch transactions with their payloads.
    struct SeenBatch {
        id: TxId,
        block: u64,
        timestamp_ms: u64,
        calls: Vec<CallTuple>,
    }
    let mut seen: Vec<SeenBatch> = Vec::new();
    for block in &chain.blocks {
        for tx in &block.txs {
            if tx.tx.to != chain.dispatcher_address {
                continue;
            }
            if let Ok(data) = decode_dispatch_data(&tx.tx.data) {
                seen.push(SeenBatch {
                    id: tx.id,
                    block: block.height,
                    timestamp_ms: block.timestamp_ms,
                    calls: data.payload.calls,
                });
            }
        }
    }

    for record in caller.pending.iter().filter(|r| r.acked_tx.is_some()) {
        let acked = record.acked_tx.expect("filtered");
        let bytes = crate::core::encode_call(&record.tuple).unwrap_or_default();

        let in_acked = seen
            .iter()
            .find(|b| b.id == acked)
            .map(|b| b.calls.iter().filter(|c| **c == record.tuple).count())
            .unwrap_or(0);
        if in_acked != 1 {
            report.omissions.push(OmissionEvidence {
                acked_tx: acked,
                block: seen.iter().find(|b| b.id == acked).map(|b| b.block),
                caller_nonce: record.caller_nonce,
                invocation_bytes: bytes.clone(),
            });
        }

        let everywhere: usize = seen
            .iter()
            .map(|b| b.calls.iter().filter(|c| **c == record.tuple).count())
            .sum();
        let expected = caller
            .pending
            .iter()
            .filter(|r| r.tuple == record.tuple && r.acked_tx.is_some())
            .count();
        if everywhere > expected {
            report.replays.push(ReplayEvidence {
                caller_nonce: record.caller_nonce,
                occurrences: everywhere,
                expected,
                invocation_bytes: bytes,
            });
        }
    }

    // Splitting shows up as several batch transactions landing in the
    // same window. Grouping by window index keeps an honest once-per-
    // window cadence clean; a split straddling a window boundary can
    // escape, which is acceptable for a detective check.
    let window_ms = window_s.max(1) * 1000;
    let mut by_window: BTreeMap<u64, Vec<TxId>> = BTreeMap::new();
    for batch in &seen {
        by_window
            .entry(batch.timestamp_ms / window_ms)
            .or_default()
            .push(batch.id);
    }
    for ids in by_window.values() {
        for pair in ids.windows(2) {
            report.split_anomalies.push((pair[0], pair[1]));
        }
    }

    report
}

// --- adversary harness ------------------------------------------------------

/// Closed taxonomy of scripted Batcher attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// Fabricate an invocation the victim never made.
    Forge,
    /// Duplicate the victim's invocation inside one batch message.
    ReplayR1,
    /// Re-send an included batch transaction verbatim.
    ReplayR2,
    /// Re-send an included batch's data under a fresh account nonce.
    ReplayR3,
    /// Split one window's invocations across two batch transactions.
    SplitR4,
    /// Drop the victim's invocation while acknowledging inclusion.
    Omit,
    /// Slip in a Sybil caller's invocation signed by the Sybil itself.
    ImpersonateCollude,
}

impl AttackKind {
    pub fn parse(s: &str) -> Option<AttackKind> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "forge" => AttackKind::Forge,
            "r1" | "replay-r1" => AttackKind::ReplayR1,
            "r2" | "replay-r2" => AttackKind::ReplayR2,
            "r3" | "replay-r3" => AttackKind::ReplayR3,
            "r4" | "split-r4" => AttackKind::SplitR4,
            "omit" => AttackKind::Omit,
            "impersonate" => AttackKind::ImpersonateCollude,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Forge => "forge",
            AttackKind::ReplayR1 => "r1",
            AttackKind::ReplayR2 => "r2",
            AttackKind::ReplayR3 => "r3",
            AttackKind::SplitR4 => "r4",
            AttackKind::Omit => "omit",
            AttackKind::ImpersonateCollude => "impersonate",
        }
    }

    pub const ALL: [AttackKind; 7] = [
        AttackKind::Forge,
        AttackKind::ReplayR1,
        AttackKind::ReplayR2,
        AttackKind::ReplayR3,
        AttackKind::SplitR4,
        AttackKind::Omit,
        AttackKind::ImpersonateCollude,
    ];
}

#[derive(Debug, Clone, Copy)]
pub struct AdversaryScript {
    pub kind: AttackKind,
    /// Index of the victim caller.
    pub target: usize,
}

/// Where an attack was stopped, or what it amounted to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackOutcome {
    /// The victim refused to sign the batch message.
    CallerRefusal(Refusal),
    /// The Dispatcher rejected the transaction or skipped the entry.
    DispatcherReject,
    /// The chain's account-nonce rule rejected the transaction.
    ChainReject,
    /// The attack landed on-chain but the victim's audit produced
    /// evidence.
    DetectedByAudit(String),
    /// The dispatched call's recovered sender is the impersonator's own
    /// account; no other account is affected.
    ImpersonatorOnly { recovered: Address },
}

impl AttackOutcome {
    pub fn label(&self) -> String {
        match self {
            AttackOutcome::CallerRefusal(r) => format!("caller-refusal({r:?})"),
            AttackOutcome::DispatcherReject => "dispatcher-reject".into(),
            AttackOutcome::ChainReject => "chain-reject".into(),
            AttackOutcome::DetectedByAudit(what) => format!("detected-by-audit({what})"),
            AttackOutcome::ImpersonatorOnly { .. } => "impersonator-only".into(),
        }
    }
}

/// Full-stack test rig for the attack scenarios: a chain with the ERC20
/// fixture deployed and rewritten, one Batcher, and `n` funded callers
/// holding seeded token balances.
pub struct AttackRig {
    pub chain: ChainState,
    pub batcher: BatcherService,
    pub agents: Vec<CallerAgent>,
    pub token_addr: Address,
    pub receiver: Address,
    pub now_ms: u64,
}

pub const ATTACK_RIG_CALLERS: usize = 6;

impl AttackRig {
    pub fn new(seed: u64) -> AttackRig {
        use crate::costmodel::GasCostModel;
        use crate::dispatcher::ContractAccount;
        use crate::rewriter::{fixtures, rewrite};

        let dispatcher_addr = Address([0xdd; 20]);
        let mut chain = ChainState::new(dispatcher_addr, GasCostModel::default());

        let mut batcher_seed = [0u8; 32];
        batcher_seed[..8].copy_from_slice(&seed.to_be_bytes());
        batcher_seed[8] = 0xbb;
        let batcher_keys = crate::identity::keygen(&batcher_seed).expect("nonzero seed");
        chain.fund(batcher_keys.address, 1_000_000_000_000);

        let token_addr = Address([0xee; 20]);
        let token = rewrite(&fixtures::erc20(), dispatcher_addr).expect("fixture rewrites");
        let mut account = ContractAccount::new(token_addr, token);

        let receiver = Address([0x77; 20]);
        account
            .state
            .set("balances", vec![receiver.to_word()], Word::from_u128(1));

        let mut agents = Vec::with_capacity(ATTACK_RIG_CALLERS);
        for i in 0..ATTACK_RIG_CALLERS {
            let mut s = [0u8; 32];
            s[..8].copy_from_slice(&seed.to_be_bytes());
            s[8] = 0x10 + i as u8;
            let keys = crate::identity::keygen(&s).expect("nonzero seed");
            chain.fund(keys.address, 1_000_000_000_000);
            account.state.set(
                "balances",
                vec![keys.address.to_word()],
                Word::from_u128(1_000_000),
            );
            agents.push(CallerAgent::new(keys));
        }
        chain.deploy(account);

        let spec = PolicySpec {
            min_batch: 2,
            ..PolicySpec::default()
        };
        let batcher = BatcherService::new(batcher_keys, spec);
        AttackRig {
            chain,
            batcher,
            agents,
            token_addr,
            receiver,
            now_ms: 0,
        }
    }

    /// Every agent submits one distinct transfer.
    pub fn submit_all(&mut self) {
        let receiver = self.receiver;
        let token = self.token_addr;
        for i in 0..self.agents.len() {
            self.now_ms += 1000;
            let now = self.now_ms;
            self.batcher
                .submit(
                    &mut self.agents[i],
                    token,
                    Selector::from_name("transfer"),
                    vec![receiver.to_word(), Word::from_u128(10 + i as u128)],
                    5 + i as u64,
                    now,
                )
                .expect("buffer open");
        }
    }

    pub fn token_state_snapshot(&self) -> crate::rewriter::ContractState {
        self.chain.contracts[&self.token_addr].state.clone()
    }

    fn include_batch(
        &mut self,
        batch: &BatchTransaction,
    ) -> Result<TxId, crate::chainsim::SubmitError> {
        let id = match self
            .chain
            .send_raw_transaction(batch.tx.clone(), crate::chainsim::Route::Direct)?
        {
            crate::chainsim::SubmitOutcome::Pooled(id) => id,
            crate::chainsim::SubmitOutcome::Buffered => unreachable!("direct route"),
        };
        self.now_ms += 13_000;
        let now = self.now_ms;
        self.chain.produce_block(now);
        Ok(id)
    }

    fn honest_round(&mut self) -> (BatchTransaction, TxId) {
        // Form just after the last submission so the window covers it.
        self.now_ms += 1_000;
        let bmsg = self.batcher.form_batch(self.now_ms).expect("enough calls");
        let timeout = self.batcher.sign_timeout_ms;
        let (payload, sigs, _) = self
            .batcher
            .collect_signatures(&bmsg, &self.agents, timeout)
            .expect("signatures");
        let batch = self
            .batcher
            .emit(payload, sigs, self.chain.dispatcher_address, 9)
            .expect("assembles");
        let id = self.include_batch(&batch).expect("accepted");
        for entry in &bmsg.entries {
            if let Some(agent) = self
                .agents
                .iter_mut()
                .find(|a| a.address() == entry.invocation.caller)
            {
                if let Some(rec) = agent
                    .pending
                    .iter_mut()
                    .find(|r| r.tuple == entry.invocation.tuple() && r.acked_tx.is_none())
                {
                    rec.acked_tx = Some(id);
                }
                agent.received_acks.push(id);
            }
        }
        (batch, id)
    }

    fn last_batch_results(&self) -> Option<&Vec<crate::dispatcher::CallResult>> {
        self.chain
            .blocks
            .last()?
            .txs
            .iter()
            .find(|t| t.tx.to == self.chain.dispatcher_address)?
            .batch_results
            .as_ref()
    }
}

/// Runs one scripted attack end to end and reports where it died.
pub fn run_adversary(script: AdversaryScript, seed: u64) -> AttackOutcome {
    let mut rig = AttackRig::new(seed);
    rig.submit_all();
    let victim = script.target % rig.agents.len();

    match script.kind {
        AttackKind::Forge => {
            // The Batcher drops the victim's real invocation, fabricates
            // one in its place, and covers it with a signature from its
            // own key. (With the victim's own call co-present, the victim
            // would already refuse at the signing round; the pure forgery
            // case is the one that reaches the Dispatcher.)
            let state_before = rig.token_state_snapshot();
            let mut bmsg = rig.batcher.form_batch(rig.now_ms + 1_000).expect("batch");
            let victim_addr = rig.agents[victim].address();
            bmsg.entries.retain(|e| e.invocation.caller != victim_addr);
            let forged = Invocation {
                caller: rig.agents[victim].address(),
                callee: rig.token_addr,
                func: Selector::from_name("transfer"),
                args: vec![
                    rig.batcher.account.address.to_word(),
                    Word::from_u128(999_999),
                ],
                caller_nonce: 99,
                gas_price: 9,
                submit_time_ms: rig.now_ms,
                origin_block: None,
            };
            bmsg.entries.push(BatchEntry {
                invocation: forged.clone(),
                caller_nonce: 99,
            });
            // Honest peers check only their own entries and still sign.
            let payload = bmsg.sign_payload();
            let bytes = encode_sign_payload(&payload).expect("payload");
            let mut sigs = Vec::new();
            for entry in &bmsg.entries {
                if entry.invocation.tuple() == forged.tuple() {
                    sigs.push(rig.batcher.account.sign(&bytes));
                } else {
                    let agent = rig
                        .agents
                        .iter()
                        .find(|a| a.address() == entry.invocation.caller)
                        .expect("agent");
                    sigs.push(agent.validate_and_sign(&bmsg).expect("honest entries"));
                }
            }
            let batch = rig
                .batcher
                .emit(payload, sigs, rig.chain.dispatcher_address, 9)
                .expect("assembles");
            rig.include_batch(&batch).expect("accepted");
            let results = rig.last_batch_results().expect("dispatched").clone();
            let forged_result = results
                .iter()
                .find(|r| r.index == bmsg.entries.len() - 1)
                .expect("forged entry result");
            // The fabricated entry must die at verification, leaving the
            // victim's balance untouched.
            assert!(
                matches!(
                    forged_result.outcome,
                    crate::dispatcher::CallOutcome::SkippedBadSignature
                ),
                "forged entry outcome: {:?}",
                forged_result.outcome
            );
            let before = state_before.get("balances", &[victim_addr.to_word()]);
            let after = rig
                .token_state_snapshot()
                .get("balances", &[victim_addr.to_word()]);
            assert_eq!(before, after, "victim balance moved on a forged call");
            AttackOutcome::DispatcherReject
        }

        AttackKind::ReplayR1 => {
            let mut bmsg = rig.batcher.form_batch(rig.now_ms + 1_000).expect("batch");
            let dup = bmsg
                .entries
                .iter()
                .find(|e| e.invocation.caller == rig.agents[victim].address())
                .expect("victim entry")
                .clone();
            bmsg.entries.push(dup);
            match rig.agents[victim].validate_and_sign(&bmsg) {
                Err(refusal) => AttackOutcome::CallerRefusal(refusal),
                Ok(_) => panic!("victim signed a message with a duplicated invocation"),
            }
        }

        AttackKind::ReplayR2 => {
            let (batch, _) = rig.honest_round();
            let state_after_first = rig.token_state_snapshot();
            // Verbatim re-send: the account nonce has moved on.
            match rig
                .chain
                .send_raw_transaction(batch.tx.clone(), crate::chainsim::Route::Direct)
            {
                Err(crate::chainsim::SubmitError::BadNonce { .. }) => {
                    assert_eq!(rig.token_state_snapshot(), state_after_first);
                    AttackOutcome::ChainReject
                }
                other => panic!("replayed transaction not rejected: {other:?}"),
            }
        }

        AttackKind::ReplayR3 => {
            let (batch, _) = rig.honest_round();
            let state_after_first = rig.token_state_snapshot();
            // Same data, fresh nonce, fresh transaction signature.
            let nonce = rig.batcher.next_nonce;
            let signing = crate::core::Transaction::signing_bytes(
                nonce,
                rig.chain.dispatcher_address,
                0,
                batch.tx.gas_price,
                &batch.tx.data,
            );
            let replay_tx = crate::core::Transaction {
                sender: rig.batcher.account.address,
                nonce,
                to: rig.chain.dispatcher_address,
                value: 0,
                gas_price: batch.tx.gas_price,
                data: batch.tx.data.clone(),
                signature: rig.batcher.account.sign(&signing),
            };
            rig.batcher.next_nonce += 1;
            rig.chain
                .send_raw_transaction(replay_tx, crate::chainsim::Route::Direct)
                .expect("fresh nonce passes the pool");
            rig.now_ms += 13_000;
            let now = rig.now_ms;
            rig.chain.produce_block(now);
            let last = rig.chain.blocks.last().expect("block");
            let replayed = last
                .txs
                .iter()
                .find(|t| t.tx.to == rig.chain.dispatcher_address)
                .expect("included");
            assert_eq!(replayed.kind, crate::chainsim::TxKind::BatchReverted);
            assert_eq!(rig.token_state_snapshot(), state_after_first);
            AttackOutcome::DispatcherReject
        }

        AttackKind::SplitR4 => {
            // Two half-batches in the same window instead of one.
            rig.now_ms += 1_000;
            let bmsg = rig.batcher.form_batch(rig.now_ms).expect("batch");
            let n = bmsg.entries.len();
            let halves = [
                bmsg.entries[..n / 2].to_vec(),
                bmsg.entries[n / 2..].to_vec(),
            ];
            let mut ids = Vec::new();
            for entries in halves {
                let half = BatchMessage {
                    entries,
                    batcher_nonce: rig.batcher.next_nonce,
                };
                let timeout = rig.batcher.sign_timeout_ms;
                let (payload, sigs, _) = rig
                    .batcher
                    .collect_signatures(&half, &rig.agents, timeout)
                    .expect("signatures");
                let batch = rig
                    .batcher
                    .emit(payload, sigs, rig.chain.dispatcher_address, 9)
                    .expect("assembles");
                // Both land within the same window: short gap.
                let id = match rig
                    .chain
                    .send_raw_transaction(batch.tx.clone(), crate::chainsim::Route::Direct)
                    .expect("accepted")
                {
                    crate::chainsim::SubmitOutcome::Pooled(id) => id,
                    crate::chainsim::SubmitOutcome::Buffered => unreachable!(),
                };
                rig.now_ms += 5_000;
                let now = rig.now_ms;
                rig.chain.produce_block(now);
                for entry in rig.chain.blocks.last().unwrap().txs.iter() {
                    let _ = entry;
                }
                ids.push(id);
                // Ack the half's callers.
                for entry in rig.chain.blocks.last().unwrap().txs.iter() {
                    let _ = entry;
                }
            }
            // Any caller's audit sees two Dispatcher-bound transactions in
            // one window.
            let report = audit(&rig.agents[victim], &rig.chain, rig.batcher.spec.window_s);
            assert!(
                !report.split_anomalies.is_empty(),
                "split went unnoticed: {report:?}"
            );
            AttackOutcome::DetectedByAudit(format!(
                "{} batch transactions within one window",
                report.split_anomalies.len() + 1
            ))
        }

        AttackKind::Omit => {
            // Form the batch without the victim's invocation, then falsely
            // acknowledge the victim.
            rig.now_ms += 1_000;
            let mut bmsg = rig.batcher.form_batch(rig.now_ms).expect("batch");
            let victim_addr = rig.agents[victim].address();
            bmsg.entries.retain(|e| e.invocation.caller != victim_addr);
            let timeout = rig.batcher.sign_timeout_ms;
            let (payload, sigs, _) = rig
                .batcher
                .collect_signatures(&bmsg, &rig.agents, timeout)
                .expect("signatures");
            let batch = rig
                .batcher
                .emit(payload, sigs, rig.chain.dispatcher_address, 9)
                .expect("assembles");
            let id = rig.include_batch(&batch).expect("accepted");
            // False acknowledgement to everyone, the victim included.
            for agent in rig.agents.iter_mut() {
                for rec in agent.pending.iter_mut().filter(|r| r.acked_tx.is_none()) {
                    rec.acked_tx = Some(id);
                }
                agent.received_acks.push(id);
            }
            let report = audit(&rig.agents[victim], &rig.chain, rig.batcher.spec.window_s);
            assert!(!report.omissions.is_empty(), "omission went unnoticed");
            let ev = &report.omissions[0];
            AttackOutcome::DetectedByAudit(format!(
                "invocation with nonce {} missing from batch tx {}",
                ev.caller_nonce, ev.acked_tx
            ))
        }

        AttackKind::ImpersonateCollude => {
            // A Sybil key colluding with the Batcher "impersonates" a
            // caller: peers cannot tell, but the recovered sender is the
            // Sybil's own account, so only the Sybil's balance moves.
            let mut sybil_seed = [0u8; 32];
            sybil_seed[..8].copy_from_slice(&seed.to_be_bytes());
            sybil_seed[8] = 0x99;
            let sybil = crate::identity::keygen(&sybil_seed).expect("nonzero");
            rig.chain.fund(sybil.address, 1_000_000_000_000);
            if let Some(token) = rig.chain.contracts.get_mut(&rig.token_addr) {
                token.state.set(
                    "balances",
                    vec![sybil.address.to_word()],
                    Word::from_u128(500),
                );
            }
            let victim_balance_before = rig
                .token_state_snapshot()
                .get("balances", &[rig.agents[victim].address().to_word()]);

            let mut bmsg = rig.batcher.form_batch(rig.now_ms + 1_000).expect("batch");
            let sybil_inv = Invocation {
                caller: sybil.address,
                callee: rig.token_addr,
                func: Selector::from_name("transfer"),
                args: vec![rig.receiver.to_word(), Word::from_u128(123)],
                caller_nonce: 0,
                gas_price: 9,
                submit_time_ms: rig.now_ms,
                origin_block: None,
            };
            bmsg.entries.push(BatchEntry {
                invocation: sybil_inv.clone(),
                caller_nonce: 0,
            });
            let payload = bmsg.sign_payload();
            let bytes = encode_sign_payload(&payload).expect("payload");
            let mut sigs = Vec::new();
            for entry in &bmsg.entries {
                if entry.invocation.caller == sybil.address {
                    sigs.push(sybil.sign(&bytes));
                } else {
                    let agent = rig
                        .agents
                        .iter()
                        .find(|a| a.address() == entry.invocation.caller)
                        .expect("agent");
                    sigs.push(agent.validate_and_sign(&bmsg).expect("honest entries"));
                }
            }
            let batch = rig
                .batcher
                .emit(payload, sigs, rig.chain.dispatcher_address, 9)
                .expect("assembles");
            rig.include_batch(&batch).expect("accepted");
            let results = rig.last_batch_results().expect("dispatched").clone();
            let sybil_result = results
                .iter()
                .find(|r| r.caller == sybil.address)
                .expect("sybil entry");
            assert!(
                sybil_result.outcome.executed(),
                "{:?}",
                sybil_result.outcome
            );
            // The Sybil paid out of its own balance; the victim only ran
            // its own honest call.
            let sybil_after = rig
                .token_state_snapshot()
                .get("balances", &[sybil.address.to_word()])
                .as_u128()
                .unwrap();
            assert_eq!(sybil_after, 500 - 123);
            let victim_after = rig
                .token_state_snapshot()
                .get("balances", &[rig.agents[victim].address().to_word()]);
            let honest_spent = 10 + victim as u128;
            assert_eq!(
                victim_balance_before.as_u128().unwrap() - victim_after.as_u128().unwrap(),
                honest_spent
            );
            AttackOutcome::ImpersonatorOnly {
                recovered: sybil.address,
            }
        }
    }
}

/// Parses a scenario file: one `kind,target-index` line per attack.
pub fn parse_scenario(text: &str) -> Result<Vec<AdversaryScript>, String> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (kind, target) = line.split_once(',').unwrap_or((line, "0"));
        let kind = AttackKind::parse(kind)
            .ok_or_else(|| format!("line {}: unknown attack `{kind}`", lineno + 1))?;
        let target: usize = target
            .trim()
            .parse()
            .map_err(|_| format!("line {}: bad target index `{target}`", lineno + 1))?;
        out.push(AdversaryScript { kind, target });
    }
    Ok(out)
}
