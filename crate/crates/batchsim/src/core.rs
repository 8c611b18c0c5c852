//! Domain types and byte-exact encodings shared by every other module.
//!
//! The wire format is a custom length-prefixed encoding, not Ethereum ABI:
//! injectivity and determinism are the only properties the protocol and the
//! gas meter rely on. All multi-byte integers are big-endian; every
//! variable-length field carries a `u32` length prefix, which makes the
//! encoding collision-free on structurally distinct inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{KeyPair, Signature};

/// Number of bytes in an [`Address`].
pub const ADDRESS_LEN: usize = 20;
/// Number of bytes in a [`Word`].
pub const WORD_LEN: usize = 32;
/// Number of bytes in a function selector.
pub const SELECTOR_LEN: usize = 4;
/// Upper bound on argument words per invocation.
pub const MAX_ARG_WORDS: usize = 999;

/// 4-byte selector identifying the batch-dispatch entry point in a
/// transaction's data field.
pub const DISPATCH_SELECTOR: Selector = Selector([0xd1, 0x59, 0xa7, 0xc4]);
/// Selector for the nonce-checking baseline entry point (B2), whose data
/// layout additionally carries per-entry caller nonces.
pub const DISPATCH_NONCES_SELECTOR: Selector = Selector([0xd2, 0x59, 0xa7, 0xc4]);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodingError {
    #[error("invocation carries {0} argument words; limit is {MAX_ARG_WORDS}")]
    OversizedArgs(usize),
    #[error("batch message has no entries")]
    EmptyBatch,
    #[error("truncated input while decoding {0}")]
    Truncated(&'static str),
    #[error("trailing {0} bytes after a complete value")]
    TrailingBytes(usize),
    #[error("length prefix {0} exceeds remaining input")]
    BadLengthPrefix(u64),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("{calls} calls but {sigs} caller signatures")]
    SignatureArity { calls: usize, sigs: usize },
    #[error("payload batcher nonce {payload} does not match account nonce {account}")]
    BatcherNonceMismatch { payload: u64, account: u64 },
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

/// 20-byte account identifier, derivable from a public key by the fixed
/// hash-truncate rule in [`crate::identity`].
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct Address(pub [u8; ADDRESS_LEN]);

impl Address {
    pub const ZERO: Address = Address([0; ADDRESS_LEN]);

    pub fn from_hex(s: &str) -> Option<Address> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; ADDRESS_LEN] = bytes.try_into().ok()?;
        Some(Address(arr))
    }

    pub fn to_hex(&self) -> String {
        format!("0x{}", hex::encode(self.0))
    }

    /// Right-aligned 32-byte representation, used as a storage key.
    pub fn to_word(&self) -> Word {
        let mut w = [0u8; WORD_LEN];
        w[WORD_LEN - ADDRESS_LEN..].copy_from_slice(&self.0);
        Word(w)
    }
}

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

/// 32-byte big-endian value: the unit the gas schedule meters data in, and
/// the cell type of contract storage.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct Word(pub [u8; WORD_LEN]);

impl Word {
    pub const ZERO: Word = Word([0; WORD_LEN]);

    pub fn from_u128(v: u128) -> Word {
        let mut w = [0u8; WORD_LEN];
        w[WORD_LEN - 16..].copy_from_slice(&v.to_be_bytes());
        Word(w)
    }

    /// Numeric view of the low 16 bytes. Returns `None` when the high half
    /// is non-zero (e.g. hash outputs), which the contract interpreter
    /// treats as an arithmetic type error.
    pub fn as_u128(&self) -> Option<u128> {
        if self.0[..WORD_LEN - 16].iter().any(|&b| b != 0) {
            return None;
        }
        let mut buf = [0u8; 16];
        buf.copy_from_slice(&self.0[WORD_LEN - 16..]);
        Some(u128::from_be_bytes(buf))
    }

    pub fn from_hex(s: &str) -> Option<Word> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(s).ok()?;
        if bytes.len() > WORD_LEN {
            return None;
        }
        let mut w = [0u8; WORD_LEN];
        w[WORD_LEN - bytes.len()..].copy_from_slice(&bytes);
        Some(Word(w))
    }

    pub fn to_hex(&self) -> String {
        format!("0x{}", hex::encode(self.0))
    }
}

/// 4-byte function selector, mirroring the EVM calling convention.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct Selector(pub [u8; SELECTOR_LEN]);

impl Selector {
    /// Derives a selector from a function name by hash-truncation.
    pub fn from_name(name: &str) -> Selector {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(name.as_bytes());
        Selector([digest[0], digest[1], digest[2], digest[3]])
    }

    pub fn from_hex(s: &str) -> Option<Selector> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; SELECTOR_LEN] = bytes.try_into().ok()?;
        Some(Selector(arr))
    }

    pub fn to_hex(&self) -> String {
        format!("0x{}", hex::encode(self.0))
    }
}

/// Number of 32-byte words needed to hold `len` bytes.
///
/// Single source of truth for the word count used by both the encodings and
/// the gas meter.
pub fn word_len(data: &[u8]) -> u64 {
    (data.len() as u64).div_ceil(WORD_LEN as u64)
}

/// The signed unit of a batch entry: caller account, callee contract,
/// function selector, and argument words. Caller nonce and fee metadata
/// ride outside this tuple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CallTuple {
    pub caller: Address,
    pub callee: Address,
    pub func: Selector,
    pub args: Vec<Word>,
}

/// One caller→callee call request together with the metadata the Batcher
/// and the simulator need: the caller's local nonce, the gas price the
/// caller is willing to pay, and the submission time on the simulation
/// clock. `origin_block` is carried when the invocation was lifted from a
/// replay trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub caller: Address,
    pub callee: Address,
    pub func: Selector,
    pub args: Vec<Word>,
    pub caller_nonce: u64,
    /// Gwei per gas; strictly positive.
    pub gas_price: u64,
    /// Submission time in milliseconds on the simulation clock.
    pub submit_time_ms: u64,
    pub origin_block: Option<u64>,
}

impl Invocation {
    pub fn tuple(&self) -> CallTuple {
        CallTuple {
            caller: self.caller,
            callee: self.callee,
            func: self.func,
            args: self.args.clone(),
        }
    }

    /// Argument size in words; the `X` of the analytic cost formulas.
    pub fn arg_words(&self) -> u64 {
        self.args.len() as u64
    }
}

/// One entry of a batch message: the invocation plus the caller nonce the
/// Batcher claims for it. Kept separate from `Invocation::caller_nonce` so
/// an adversarial Batcher can misreport it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchEntry {
    pub invocation: Invocation,
    pub caller_nonce: u64,
}

/// The first-round message of the joint-signing protocol: the ordered
/// entries with their caller nonces, plus the Batcher account nonce that
/// pins the batch to one transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchMessage {
    pub entries: Vec<BatchEntry>,
    pub batcher_nonce: u64,
}

impl BatchMessage {
    /// The payload every caller signs: the calls in message order with the
    /// caller nonces stripped and the Batcher nonce retained.
    pub fn sign_payload(&self) -> BatchSignPayload {
        BatchSignPayload {
            calls: self.entries.iter().map(|e| e.invocation.tuple()).collect(),
            batcher_nonce: self.batcher_nonce,
        }
    }
}

/// The jointly signed content of a batch transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSignPayload {
    pub calls: Vec<CallTuple>,
    pub batcher_nonce: u64,
}

/// A plain signed transaction of the simulated chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub sender: Address,
    pub nonce: u64,
    pub to: Address,
    /// Wei attached to the call.
    pub value: u128,
    /// Gwei per gas.
    pub gas_price: u64,
    pub data: Vec<u8>,
    pub signature: Signature,
}

impl Transaction {
    /// The bytes covered by the sender signature.
    pub fn signing_bytes(
        nonce: u64,
        to: Address,
        value: u128,
        gas_price: u64,
        data: &[u8],
    ) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + ADDRESS_LEN + 16 + 8 + 4 + data.len());
        out.extend_from_slice(&nonce.to_be_bytes());
        out.extend_from_slice(&to.0);
        out.extend_from_slice(&value.to_be_bytes());
        out.extend_from_slice(&gas_price.to_be_bytes());
        put_bytes(&mut out, data);
        out
    }

    pub fn to_signing_bytes(&self) -> Vec<u8> {
        Self::signing_bytes(self.nonce, self.to, self.value, self.gas_price, &self.data)
    }

    /// Data size in words, as the gas meter counts it.
    pub fn data_words(&self) -> u64 {
        word_len(&self.data)
    }
}

/// The batch transaction: a Dispatcher-bound [`Transaction`] whose data
/// field carries the sign payload and the callers' batch signatures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchTransaction {
    pub tx: Transaction,
    pub payload: BatchSignPayload,
    pub caller_sigs: Vec<Signature>,
}

// --- encoding helpers ---------------------------------------------------

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

/// Cursor over an input slice with length-checked reads.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], EncodingError> {
        if self.buf.len() - self.pos < n {
            return Err(EncodingError::Truncated(what));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, EncodingError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, EncodingError> {
        let b = self.take(8, what)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self, what: &'static str) -> Result<&'a [u8], EncodingError> {
        let len = self.u32(what)? as usize;
        if self.buf.len() - self.pos < len {
            return Err(EncodingError::BadLengthPrefix(len as u64));
        }
        self.take(len, what)
    }

    fn finish(self) -> Result<(), EncodingError> {
        let left = self.buf.len() - self.pos;
        if left != 0 {
            return Err(EncodingError::TrailingBytes(left));
        }
        Ok(())
    }
}

fn put_call(out: &mut Vec<u8>, call: &CallTuple) -> Result<(), EncodingError> {
    if call.args.len() > MAX_ARG_WORDS {
        return Err(EncodingError::OversizedArgs(call.args.len()));
    }
    out.extend_from_slice(&call.caller.0);
    out.extend_from_slice(&call.callee.0);
    out.extend_from_slice(&call.func.0);
    out.extend_from_slice(&(call.args.len() as u32).to_be_bytes());
    for w in &call.args {
        out.extend_from_slice(&w.0);
    }
    Ok(())
}

fn read_call(r: &mut Reader<'_>) -> Result<CallTuple, EncodingError> {
    let caller = Address(r.take(ADDRESS_LEN, "caller")?.try_into().expect("20 bytes"));
    let callee = Address(r.take(ADDRESS_LEN, "callee")?.try_into().expect("20 bytes"));
    let func = Selector(r.take(SELECTOR_LEN, "func")?.try_into().expect("4 bytes"));
    let argc = r.u32("arg count")? as usize;
    if argc > MAX_ARG_WORDS {
        return Err(EncodingError::OversizedArgs(argc));
    }
    let mut args = Vec::with_capacity(argc);
    for _ in 0..argc {
        args.push(Word(
            r.take(WORD_LEN, "arg word")?.try_into().expect("32 bytes"),
        ));
    }
    Ok(CallTuple {
        caller,
        callee,
        func,
        args,
    })
}

/// Encodes the signed tuple of an invocation: caller, callee, selector, and
/// the argument words behind a count prefix.
pub fn encode_invocation(call: &Invocation) -> Result<Vec<u8>, EncodingError> {
    encode_call(&call.tuple())
}

pub fn encode_call(call: &CallTuple) -> Result<Vec<u8>, EncodingError> {
    let mut out = Vec::new();
    put_call(&mut out, call)?;
    Ok(out)
}

pub fn decode_call(bytes: &[u8]) -> Result<CallTuple, EncodingError> {
    let mut r = Reader::new(bytes);
    let call = read_call(&mut r)?;
    r.finish()?;
    Ok(call)
}

/// Encodes a batch message: entry count, then per entry the call tuple and
/// its caller nonce, then the Batcher nonce.
pub fn encode_batch_message(bmsg: &BatchMessage) -> Result<Vec<u8>, EncodingError> {
    if bmsg.entries.is_empty() {
        return Err(EncodingError::EmptyBatch);
    }
    let mut out = Vec::new();
    out.extend_from_slice(&(bmsg.entries.len() as u32).to_be_bytes());
    for entry in &bmsg.entries {
        put_call(&mut out, &entry.invocation.tuple())?;
        out.extend_from_slice(&entry.caller_nonce.to_be_bytes());
    }
    out.extend_from_slice(&bmsg.batcher_nonce.to_be_bytes());
    Ok(out)
}

/// Encodes the sign payload: call count, call tuples in message order, and
/// the Batcher nonce. These are exactly the bytes every caller signs.
pub fn encode_sign_payload(p: &BatchSignPayload) -> Result<Vec<u8>, EncodingError> {
    if p.calls.is_empty() {
        return Err(EncodingError::EmptyBatch);
    }
    let mut out = Vec::new();
    out.extend_from_slice(&(p.calls.len() as u32).to_be_bytes());
    for call in &p.calls {
        put_call(&mut out, call)?;
    }
    out.extend_from_slice(&p.batcher_nonce.to_be_bytes());
    Ok(out)
}

pub fn decode_sign_payload(bytes: &[u8]) -> Result<BatchSignPayload, EncodingError> {
    let mut r = Reader::new(bytes);
    let payload = read_sign_payload(&mut r)?;
    r.finish()?;
    Ok(payload)
}

fn read_sign_payload(r: &mut Reader<'_>) -> Result<BatchSignPayload, EncodingError> {
    let count = r.u32("call count")? as usize;
    if count == 0 {
        return Err(EncodingError::EmptyBatch);
    }
    let mut calls = Vec::with_capacity(count);
    for _ in 0..count {
        calls.push(read_call(r)?);
    }
    let batcher_nonce = r.u64("batcher nonce")?;
    Ok(BatchSignPayload {
        calls,
        batcher_nonce,
    })
}

/// Layout of a Dispatcher-bound data field: the dispatch selector, the
/// length-prefixed sign payload, and one 65-byte signature per call.
pub fn encode_dispatch_data(
    selector: Selector,
    payload: &BatchSignPayload,
    sigs: &[Signature],
) -> Result<Vec<u8>, EncodingError> {
    let mut out = Vec::new();
    out.extend_from_slice(&selector.0);
    put_bytes(&mut out, &encode_sign_payload(payload)?);
    out.extend_from_slice(&(sigs.len() as u32).to_be_bytes());
    for sig in sigs {
        out.extend_from_slice(&sig.0);
    }
    Ok(out)
}

/// Parsed view of a Dispatcher-bound data field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchData {
    pub selector: Selector,
    pub payload: BatchSignPayload,
    /// Exact bytes the callers signed, needed for recovery.
    pub payload_bytes: Vec<u8>,
    pub sigs: Vec<Signature>,
}

pub fn decode_dispatch_data(data: &[u8]) -> Result<DispatchData, EncodingError> {
    let mut r = Reader::new(data);
    let selector = Selector(
        r.take(SELECTOR_LEN, "selector")?
            .try_into()
            .expect("4 bytes"),
    );
    let payload_bytes = r.bytes("payload")?.to_vec();
    let payload = decode_sign_payload(&payload_bytes)?;
    let count = r.u32("sig count")? as usize;
    let mut sigs = Vec::with_capacity(count);
    for _ in 0..count {
        sigs.push(Signature(
            r.take(crate::identity::SIGNATURE_LEN, "signature")?
                .try_into()
                .expect("65 bytes"),
        ));
    }
    r.finish()?;
    Ok(DispatchData {
        selector,
        payload,
        payload_bytes,
        sigs,
    })
}

/// Layout of the nonce-checking baseline's data field: like
/// [`encode_dispatch_data`] but with one caller nonce per entry between
/// the payload and the signatures.
pub fn encode_dispatch_nonces_data(
    payload: &BatchSignPayload,
    entry_nonces: &[u64],
    sigs: &[Signature],
) -> Result<Vec<u8>, EncodingError> {
    let mut out = Vec::new();
    out.extend_from_slice(&DISPATCH_NONCES_SELECTOR.0);
    put_bytes(&mut out, &encode_sign_payload(payload)?);
    out.extend_from_slice(&(entry_nonces.len() as u32).to_be_bytes());
    for nonce in entry_nonces {
        out.extend_from_slice(&nonce.to_be_bytes());
    }
    out.extend_from_slice(&(sigs.len() as u32).to_be_bytes());
    for sig in sigs {
        out.extend_from_slice(&sig.0);
    }
    Ok(out)
}

/// Parsed view of a nonce-carrying data field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchNoncesData {
    pub payload: BatchSignPayload,
    pub entry_nonces: Vec<u64>,
    pub sigs: Vec<Signature>,
}

pub fn decode_dispatch_nonces_data(data: &[u8]) -> Result<DispatchNoncesData, EncodingError> {
    let mut r = Reader::new(data);
    let selector = Selector(
        r.take(SELECTOR_LEN, "selector")?
            .try_into()
            .expect("4 bytes"),
    );
    if selector != DISPATCH_NONCES_SELECTOR {
        return Err(EncodingError::Truncated("nonce-dispatch selector"));
    }
    let payload_bytes = r.bytes("payload")?.to_vec();
    let payload = decode_sign_payload(&payload_bytes)?;
    let nonce_count = r.u32("nonce count")? as usize;
    let mut entry_nonces = Vec::with_capacity(nonce_count);
    for _ in 0..nonce_count {
        entry_nonces.push(r.u64("entry nonce")?);
    }
    let count = r.u32("sig count")? as usize;
    let mut sigs = Vec::with_capacity(count);
    for _ in 0..count {
        sigs.push(Signature(
            r.take(crate::identity::SIGNATURE_LEN, "signature")?
                .try_into()
                .expect("65 bytes"),
        ));
    }
    r.finish()?;
    Ok(DispatchNoncesData {
        payload,
        entry_nonces,
        sigs,
    })
}

/// Data field of an unbatched (B0) callee-bound transaction: selector plus
/// raw argument words.
pub fn encode_plain_call_data(func: Selector, args: &[Word]) -> Vec<u8> {
    let mut out = Vec::with_capacity(SELECTOR_LEN + args.len() * WORD_LEN);
    out.extend_from_slice(&func.0);
    for w in args {
        out.extend_from_slice(&w.0);
    }
    out
}

pub fn decode_plain_call_data(data: &[u8]) -> Result<(Selector, Vec<Word>), EncodingError> {
    let mut r = Reader::new(data);
    let func = Selector(
        r.take(SELECTOR_LEN, "selector")?
            .try_into()
            .expect("4 bytes"),
    );
    let rest = r.buf.len() - r.pos;
    if !rest.is_multiple_of(WORD_LEN) {
        return Err(EncodingError::Truncated("argument words"));
    }
    let mut args = Vec::with_capacity(rest / WORD_LEN);
    while r.pos < r.buf.len() {
        args.push(Word(
            r.take(WORD_LEN, "arg word")?.try_into().expect("32 bytes"),
        ));
    }
    Ok((func, args))
}

/// Assembles and signs the batch transaction for a collected payload.
///
/// `batcher_account_nonce` is the on-chain nonce of the Batcher account; it
/// must equal the nonce the callers signed over.
pub fn assemble_batch_tx(
    payload: BatchSignPayload,
    caller_sigs: Vec<Signature>,
    batcher: &KeyPair,
    batcher_account_nonce: u64,
    dispatcher: Address,
    gas_price: u64,
    value: u128,
) -> Result<BatchTransaction, ProtocolError> {
    if caller_sigs.len() != payload.calls.len() {
        return Err(ProtocolError::SignatureArity {
            calls: payload.calls.len(),
            sigs: caller_sigs.len(),
        });
    }
    if payload.batcher_nonce != batcher_account_nonce {
        return Err(ProtocolError::BatcherNonceMismatch {
            payload: payload.batcher_nonce,
            account: batcher_account_nonce,
        });
    }
    let data = encode_dispatch_data(DISPATCH_SELECTOR, &payload, &caller_sigs)?;
    let signing =
        Transaction::signing_bytes(payload.batcher_nonce, dispatcher, value, gas_price, &data);
    let signature = batcher.sign(&signing);
    let tx = Transaction {
        sender: batcher.address,
        nonce: payload.batcher_nonce,
        to: dispatcher,
        value,
        gas_price,
        data,
        signature,
    };
    Ok(BatchTransaction {
        tx,
        payload,
        caller_sigs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::keygen;
    use proptest::prelude::*;

    fn addr(b: u8) -> Address {
        Address([b; ADDRESS_LEN])
    }

    fn inv(caller: u8, args: usize) -> Invocation {
        Invocation {
            caller: addr(caller),
            callee: addr(0xee),
            func: Selector([1, 2, 3, 4]),
            args: (0..args).map(|i| Word::from_u128(i as u128)).collect(),
            caller_nonce: 7,
            gas_price: 5,
            submit_time_ms: 0,
            origin_block: None,
        }
    }

    #[test]
    fn word_len_matches_hand_values() {
        assert_eq!(word_len(&[]), 0);
        assert_eq!(word_len(&[0u8; 32]), 1);
        assert_eq!(word_len(&[0u8; 33]), 2);
    }

    #[test]
    fn zero_arg_call_is_minimal_and_round_trips() {
        let call = inv(1, 0);
        let bytes = encode_invocation(&call).unwrap();
        // caller + callee + func + 4-byte arg count prefix
        assert_eq!(bytes.len(), 20 + 20 + 4 + 4);
        assert_eq!(decode_call(&bytes).unwrap(), call.tuple());
    }

    #[test]
    fn differing_arg_words_give_distinct_encodings() {
        let a = inv(1, 2);
        let mut b = a.clone();
        b.args[1] = Word::from_u128(999);
        assert_ne!(
            encode_invocation(&a).unwrap(),
            encode_invocation(&b).unwrap()
        );
    }

    #[test]
    fn oversized_args_are_rejected() {
        let call = inv(1, MAX_ARG_WORDS + 1);
        assert_eq!(
            encode_invocation(&call).unwrap_err(),
            EncodingError::OversizedArgs(MAX_ARG_WORDS + 1)
        );
    }

    #[test]
    fn sign_payload_strips_nonces_and_keeps_order() {
        let entries: Vec<BatchEntry> = (0u8..3)
            .map(|i| BatchEntry {
                invocation: inv(i, 1),
                caller_nonce: i as u64 + 10,
            })
            .collect();
        let bmsg = BatchMessage {
            entries,
            batcher_nonce: 42,
        };
        let payload = bmsg.sign_payload();
        assert_eq!(payload.batcher_nonce, 42);
        assert_eq!(payload.calls.len(), 3);
        for (i, call) in payload.calls.iter().enumerate() {
            assert_eq!(call.caller, addr(i as u8));
        }
    }

    #[test]
    fn single_entry_payload_contains_call_and_nonce_only() {
        let bmsg = BatchMessage {
            entries: vec![BatchEntry {
                invocation: inv(9, 1),
                caller_nonce: 3,
            }],
            batcher_nonce: 8,
        };
        let payload = bmsg.sign_payload();
        let bytes = encode_sign_payload(&payload).unwrap();
        let expected = 4 + (20 + 20 + 4 + 4 + 32) + 8;
        assert_eq!(bytes.len(), expected);
        assert_eq!(decode_sign_payload(&bytes).unwrap(), payload);
    }

    #[test]
    fn empty_batch_is_an_encoding_error() {
        let payload = BatchSignPayload {
            calls: vec![],
            batcher_nonce: 0,
        };
        assert_eq!(
            encode_sign_payload(&payload).unwrap_err(),
            EncodingError::EmptyBatch
        );
        let bmsg = BatchMessage {
            entries: vec![],
            batcher_nonce: 0,
        };
        assert_eq!(
            encode_batch_message(&bmsg).unwrap_err(),
            EncodingError::EmptyBatch
        );
    }

    #[test]
    fn assemble_batch_tx_checks_arity_and_nonce() {
        let batcher = keygen(&[9u8; 32]).unwrap();
        let caller = keygen(&[1u8; 32]).unwrap();
        let payload = BatchSignPayload {
            calls: vec![inv(1, 1).tuple(), inv(2, 1).tuple()],
            batcher_nonce: 4,
        };
        let payload_bytes = encode_sign_payload(&payload).unwrap();
        let sig = caller.sign(&payload_bytes);

        let err = assemble_batch_tx(payload.clone(), vec![sig], &batcher, 4, addr(0xdd), 6, 0)
            .unwrap_err();
        assert!(matches!(
            err,
            ProtocolError::SignatureArity { calls: 2, sigs: 1 }
        ));

        let err = assemble_batch_tx(
            payload.clone(),
            vec![sig, sig],
            &batcher,
            5,
            addr(0xdd),
            6,
            0,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ProtocolError::BatcherNonceMismatch {
                payload: 4,
                account: 5
            }
        ));

        let batch =
            assemble_batch_tx(payload, vec![sig, sig], &batcher, 4, addr(0xdd), 6, 0).unwrap();
        assert_eq!(batch.tx.to, addr(0xdd));
        assert_eq!(batch.tx.nonce, 4);
        let decoded = decode_dispatch_data(&batch.tx.data).unwrap();
        assert_eq!(decoded.payload, batch.payload);
        assert_eq!(decoded.sigs.len(), 2);
        // The transaction signature verifies under the batcher account.
        let recovered =
            crate::identity::recover(&batch.tx.to_signing_bytes(), &batch.tx.signature).unwrap();
        assert_eq!(recovered, batcher.address);
    }

    prop_compose! {
        fn arb_word()(bytes in proptest::array::uniform32(any::<u8>())) -> Word {
            Word(bytes)
        }
    }

    prop_compose! {
        fn arb_call()(
            caller in proptest::array::uniform20(any::<u8>()),
            callee in proptest::array::uniform20(any::<u8>()),
            func in proptest::array::uniform4(any::<u8>()),
            args in proptest::collection::vec(arb_word(), 0..8),
        ) -> CallTuple {
            CallTuple { caller: Address(caller), callee: Address(callee), func: Selector(func), args }
        }
    }

    proptest! {
        #[test]
        fn call_round_trip(call in arb_call()) {
            let bytes = encode_call(&call).unwrap();
            prop_assert_eq!(decode_call(&bytes).unwrap(), call);
        }

        #[test]
        fn payload_round_trip(
            calls in proptest::collection::vec(arb_call(), 1..6),
            nonce in any::<u64>(),
        ) {
            let payload = BatchSignPayload { calls, batcher_nonce: nonce };
            let bytes = encode_sign_payload(&payload).unwrap();
            prop_assert_eq!(decode_sign_payload(&bytes).unwrap(), payload);
        }

        #[test]
        fn distinct_calls_encode_distinctly(a in arb_call(), b in arb_call()) {
            prop_assume!(a != b);
            prop_assert_ne!(encode_call(&a).unwrap(), encode_call(&b).unwrap());
        }
    }
}
