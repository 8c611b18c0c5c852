//! Deterministic interpreter for the contract IR with gas metering.
//!
//! Execution works on a scratch copy of the state and commits only on
//! success, so failed requires roll back completely. Gas covers storage
//! reads/writes (insert vs. update by key presence), hashing, and ether
//! transfers; pure computation and same-contract calls are free, matching
//! the convention that intra-contract calls are jumps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ContractIR, Expr, FunctionIR, RequireKind, Stmt};
use crate::core::{Address, Word, ADDRESS_LEN, WORD_LEN};
use crate::costmodel::{GasCostModel, MeterOp};

const MAX_CALL_DEPTH: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{func}` expects {expected} args, got {got}")]
    ArityMismatch {
        func: String,
        expected: usize,
        got: usize,
    },
    #[error("caller is not the Dispatcher")]
    AccessDenied,
    #[error("require failed in `{0}`")]
    Revert(String),
    #[error("arithmetic on a non-numeric word in `{0}`")]
    TypeError(String),
    #[error("arithmetic overflow in `{0}`")]
    Overflow(String),
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("call depth limit exceeded")]
    CallDepth,
    #[error("insufficient contract ether for transfer")]
    InsufficientEther,
}

/// Persistent state of one deployed contract: its storage cells plus the
/// ether ledger its transfers settle against (the contract's own holdings
/// and the accounts it pays). Fee accounting lives in the chain simulator,
/// not here.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContractState {
    pub storage: BTreeMap<(String, Vec<Word>), Word>,
    pub ether: BTreeMap<Address, u128>,
}

impl ContractState {
    pub fn new() -> ContractState {
        ContractState::default()
    }

    pub fn set(&mut self, var: &str, keys: Vec<Word>, value: Word) {
        self.storage.insert((var.to_string(), keys), value);
    }

    pub fn get(&self, var: &str, keys: &[Word]) -> Word {
        self.storage
            .get(&(var.to_string(), keys.to_vec()))
            .copied()
            .unwrap_or(Word::ZERO)
    }

    /// Number of occupied storage cells; the Dispatcher statelessness
    /// check counts these.
    pub fn occupied_cells(&self) -> usize {
        self.storage.len()
    }
}

/// Per-call execution context.
#[derive(Debug, Clone)]
pub struct ExecEnv {
    /// The account the contract sees as `msg.sender`, unless overridden.
    pub caller: Address,
    /// Trusted-relay override: when set, `msg.sender` evaluates to this
    /// address instead of `caller`. Used to model the allowance baseline,
    /// which authorizes through state rather than per-call signatures.
    pub from_override: Option<Address>,
    /// Address of the executing contract, the payer of `Transfer`s.
    pub self_address: Address,
    /// Block timestamp in seconds.
    pub now_s: u64,
}

impl ExecEnv {
    pub fn new(caller: Address, self_address: Address) -> ExecEnv {
        ExecEnv {
            caller,
            from_override: None,
            self_address,
            now_s: 0,
        }
    }

    pub fn at_time(mut self, now_s: u64) -> ExecEnv {
        self.now_s = now_s;
        self
    }

    pub fn with_from_override(mut self, from: Address) -> ExecEnv {
        self.from_override = Some(from);
        self
    }
}

/// Outcome of a successful execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecTrace {
    pub end_state: ContractState,
    pub output: Vec<Word>,
    pub gas: u64,
    pub ops: Vec<MeterOp>,
}

struct Interp<'a> {
    contract: &'a ContractIR,
    env: &'a ExecEnv,
    state: ContractState,
    ops: Vec<MeterOp>,
    output: Vec<Word>,
}

enum Flow {
    Continue,
    Return,
}

impl<'a> Interp<'a> {
    fn sender_word(&self) -> Word {
        self.env.from_override.unwrap_or(self.env.caller).to_word()
    }

    fn eval(
        &mut self,
        expr: &Expr,
        locals: &BTreeMap<String, Word>,
        fname: &str,
    ) -> Result<Word, ExecError> {
        match expr {
            Expr::Const(w) => Ok(*w),
            Expr::Param(name) | Expr::Local(name) => locals
                .get(name)
                .copied()
                .ok_or_else(|| ExecError::UnknownIdentifier(name.clone())),
            Expr::MsgSender => Ok(self.sender_word()),
            Expr::Now => Ok(Word::from_u128(self.env.now_s as u128)),
            Expr::StorageGet { var, keys } => {
                let keys = self.eval_all(keys, locals, fname)?;
                self.ops.push(MeterOp::StorageRead { words: 1 });
                Ok(self.state.get(var, &keys))
            }
            Expr::Add(a, b) => {
                let (a, b) = self.numeric_pair(a, b, locals, fname)?;
                let sum = a
                    .checked_add(b)
                    .ok_or_else(|| ExecError::Overflow(fname.to_string()))?;
                Ok(Word::from_u128(sum))
            }
            Expr::Sub(a, b) => {
                let (a, b) = self.numeric_pair(a, b, locals, fname)?;
                // SafeMath semantics: underflow reverts.
                let diff = a
                    .checked_sub(b)
                    .ok_or_else(|| ExecError::Revert(fname.to_string()))?;
                Ok(Word::from_u128(diff))
            }
            Expr::Eq(a, b) => {
                let a = self.eval(a, locals, fname)?;
                let b = self.eval(b, locals, fname)?;
                Ok(bool_word(a == b))
            }
            Expr::Ge(a, b) => {
                let (a, b) = self.numeric_pair(a, b, locals, fname)?;
                Ok(bool_word(a >= b))
            }
            Expr::Gt(a, b) => {
                let (a, b) = self.numeric_pair(a, b, locals, fname)?;
                Ok(bool_word(a > b))
            }
            Expr::Not(a) => {
                let a = self.eval(a, locals, fname)?;
                Ok(bool_word(a == Word::ZERO))
            }
            Expr::Hash(args) => {
                let words = self.eval_all(args, locals, fname)?;
                self.ops.push(MeterOp::Hash {
                    words: words.len() as u64,
                });
                let mut hasher = Sha256::new();
                for w in &words {
                    hasher.update(w.0);
                }
                let digest = hasher.finalize();
                let mut out = [0u8; WORD_LEN];
                out.copy_from_slice(&digest);
                Ok(Word(out))
            }
        }
    }

    fn numeric_pair(
        &mut self,
        a: &Expr,
        b: &Expr,
        locals: &BTreeMap<String, Word>,
        fname: &str,
    ) -> Result<(u128, u128), ExecError> {
        let a = self.eval(a, locals, fname)?;
        let b = self.eval(b, locals, fname)?;
        let a = a
            .as_u128()
            .ok_or_else(|| ExecError::TypeError(fname.to_string()))?;
        let b = b
            .as_u128()
            .ok_or_else(|| ExecError::TypeError(fname.to_string()))?;
        Ok((a, b))
    }

    fn eval_all(
        &mut self,
        exprs: &[Expr],
        locals: &BTreeMap<String, Word>,
        fname: &str,
    ) -> Result<Vec<Word>, ExecError> {
        exprs.iter().map(|e| self.eval(e, locals, fname)).collect()
    }

    fn run_function(
        &mut self,
        func: &FunctionIR,
        args: &[Word],
        depth: usize,
    ) -> Result<(), ExecError> {
        if depth > MAX_CALL_DEPTH {
            return Err(ExecError::CallDepth);
        }
        if args.len() != func.params.len() {
            return Err(ExecError::ArityMismatch {
                func: func.name.clone(),
                expected: func.params.len(),
                got: args.len(),
            });
        }
        let mut locals: BTreeMap<String, Word> = func
            .params
            .iter()
            .zip(args)
            .map(|(p, v)| (p.name.clone(), *v))
            .collect();

        // Guard modifiers run before the body, with their own scope.
        for m in &func.modifiers_applied {
            let modifier = self
                .contract
                .modifier(&m.name)
                .ok_or_else(|| ExecError::UnknownFunction(m.name.clone()))?
                .clone();
            let margs = self.eval_all(&m.args, &locals, &func.name)?;
            self.run_function(&modifier, &margs, depth + 1)?;
        }

        self.run_body(&func.body, &mut locals, &func.name, depth)?;
        Ok(())
    }

    fn run_body(
        &mut self,
        body: &[Stmt],
        locals: &mut BTreeMap<String, Word>,
        fname: &str,
        depth: usize,
    ) -> Result<Flow, ExecError> {
        for stmt in body {
            match stmt {
                Stmt::Let { name, value } => {
                    let v = self.eval(value, locals, fname)?;
                    locals.insert(name.clone(), v);
                }
                Stmt::Require { cond, kind } => {
                    let v = self.eval(cond, locals, fname)?;
                    if v == Word::ZERO {
                        return Err(match kind {
                            RequireKind::DispatcherGuard => ExecError::AccessDenied,
                            RequireKind::Plain => ExecError::Revert(fname.to_string()),
                        });
                    }
                }
                Stmt::StorageSet { var, keys, value } => {
                    let keys = self.eval_all(keys, locals, fname)?;
                    let value = self.eval(value, locals, fname)?;
                    let slot = (var.clone(), keys.clone());
                    if self.state.storage.contains_key(&slot) {
                        self.ops.push(MeterOp::StorageUpdate { words: 1 });
                    } else {
                        self.ops.push(MeterOp::StorageInsert { words: 1 });
                    }
                    self.state.set(var, keys, value);
                }
                Stmt::Call { func, args } => {
                    let callee = self
                        .contract
                        .function(func)
                        .ok_or_else(|| ExecError::UnknownFunction(func.clone()))?
                        .clone();
                    let argv = self.eval_all(args, locals, fname)?;
                    self.run_function(&callee, &argv, depth + 1)?;
                }
                Stmt::Transfer { to, amount } => {
                    let to = self.eval(to, locals, fname)?;
                    let amount = self
                        .eval(amount, locals, fname)?
                        .as_u128()
                        .ok_or_else(|| ExecError::TypeError(fname.to_string()))?;
                    let to = word_to_address(to);
                    self.ops.push(MeterOp::InternalCall { data_words: 0 });
                    let own = self
                        .state
                        .ether
                        .get(&self.env.self_address)
                        .copied()
                        .unwrap_or(0);
                    if own < amount {
                        return Err(ExecError::InsufficientEther);
                    }
                    self.state.ether.insert(self.env.self_address, own - amount);
                    *self.state.ether.entry(to).or_insert(0) += amount;
                }
                Stmt::Return { values } => {
                    self.output = self.eval_all(values, locals, fname)?;
                    return Ok(Flow::Return);
                }
            }
        }
        Ok(Flow::Continue)
    }
}

fn bool_word(b: bool) -> Word {
    if b {
        Word::from_u128(1)
    } else {
        Word::ZERO
    }
}

fn word_to_address(w: Word) -> Address {
    let mut out = [0u8; ADDRESS_LEN];
    out.copy_from_slice(&w.0[WORD_LEN - ADDRESS_LEN..]);
    Address(out)
}

/// Runs `function` with `args` against `state`, committing effects only on
/// success and returning the metered trace.
pub fn exec(
    contract: &ContractIR,
    function: &str,
    env: &ExecEnv,
    state: &mut ContractState,
    args: &[Word],
    model: &GasCostModel,
) -> Result<ExecTrace, ExecError> {
    let func = contract
        .function(function)
        .ok_or_else(|| ExecError::UnknownFunction(function.to_string()))?
        .clone();
    let mut interp = Interp {
        contract,
        env,
        state: state.clone(),
        ops: Vec::new(),
        output: Vec::new(),
    };
    interp.run_function(&func, args, 0)?;
    let gas = model.meter(&interp.ops);
    *state = interp.state.clone();
    Ok(ExecTrace {
        end_state: interp.state,
        output: interp.output,
        gas,
        ops: interp.ops,
    })
}
