//! A miniature contract IR, the source-level `ByD` rewrite, and the
//! backward-compatibility harness.
//!
//! Contracts are modeled as named storage variables plus functions and
//! guard-style modifiers over a small statement language. The rewrite
//! produces, for every function that (transitively) depends on the caller
//! identity, a `fooByD(from, …)` twin that is callable only by the
//! Dispatcher and reads `from` where the original read `msg.sender`. The
//! rewritten contract inherits the original function set, so both routes
//! stay callable on one deployment.
//!
//! Contracts serialize as JSON documents with the shape
//! `{ name, dispatcher?, storage_vars: [{name, kind}], functions: [...],
//! modifiers: [...] }`; functions carry `params`, `modifiers_applied`, and
//! a `body` statement list.

mod equivalence;
mod exec;
pub mod fixtures;
mod rewrite;

pub use equivalence::{
    check_equivalence, fuzz_routing, FuzzReport, ProgramCall, RoutingDivergence,
};
pub use exec::{exec, ContractState, ExecEnv, ExecError, ExecTrace};
pub use rewrite::{is_rewritten_twin, rewrite, RewriteError, BYD_SUFFIX, FROM_PARAM};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{Address, Word};

/// Storage variable shape: a single cell or a keyed map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageKind {
    Scalar,
    Map,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageDecl {
    pub name: String,
    pub kind: StorageKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    Address,
    Uint,
    Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub ty: ParamType,
}

impl Param {
    pub fn address(name: &str) -> Param {
        Param {
            name: name.into(),
            ty: ParamType::Address,
        }
    }

    pub fn uint(name: &str) -> Param {
        Param {
            name: name.into(),
            ty: ParamType::Uint,
        }
    }

    pub fn word(name: &str) -> Param {
        Param {
            name: name.into(),
            ty: ParamType::Word,
        }
    }
}

/// Expression over 32-byte words. `MsgSender` is the caller identity the
/// rewrite replaces; `Now` is the block timestamp in seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Const(Word),
    Param(String),
    Local(String),
    MsgSender,
    Now,
    StorageGet {
        var: String,
        keys: Vec<Expr>,
    },
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Eq(Box<Expr>, Box<Expr>),
    Ge(Box<Expr>, Box<Expr>),
    Gt(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    /// Word-granular hash of the evaluated arguments; metered.
    Hash(Vec<Expr>),
}

impl Expr {
    pub fn constant(v: u128) -> Expr {
        Expr::Const(Word::from_u128(v))
    }

    pub fn param(name: &str) -> Expr {
        Expr::Param(name.into())
    }

    pub fn local(name: &str) -> Expr {
        Expr::Local(name.into())
    }

    pub fn get(var: &str, keys: Vec<Expr>) -> Expr {
        Expr::StorageGet {
            var: var.into(),
            keys,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn eq(a: Expr, b: Expr) -> Expr {
        Expr::Eq(Box::new(a), Box::new(b))
    }

    pub fn ge(a: Expr, b: Expr) -> Expr {
        Expr::Ge(Box::new(a), Box::new(b))
    }

    pub fn gt(a: Expr, b: Expr) -> Expr {
        Expr::Gt(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: Expr) -> Expr {
        Expr::Not(Box::new(a))
    }
}

/// Distinguishes the injected Dispatcher gate from ordinary asserts so the
/// interpreter can surface `AccessDenied` rather than a plain revert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequireKind {
    Plain,
    DispatcherGuard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stmt {
    Let {
        name: String,
        value: Expr,
    },
    Require {
        cond: Expr,
        kind: RequireKind,
    },
    StorageSet {
        var: String,
        keys: Vec<Expr>,
        value: Expr,
    },
    /// Same-contract call; costs nothing beyond the callee's own ops.
    Call {
        func: String,
        args: Vec<Expr>,
    },
    /// Pays `amount` of the contract's ether to `to`.
    Transfer {
        to: Expr,
        amount: Expr,
    },
    Return {
        values: Vec<Expr>,
    },
}

impl Stmt {
    pub fn require(cond: Expr) -> Stmt {
        Stmt::Require {
            cond,
            kind: RequireKind::Plain,
        }
    }

    pub fn set(var: &str, keys: Vec<Expr>, value: Expr) -> Stmt {
        Stmt::StorageSet {
            var: var.into(),
            keys,
            value,
        }
    }

    pub fn let_(name: &str, value: Expr) -> Stmt {
        Stmt::Let {
            name: name.into(),
            value,
        }
    }

    pub fn call(func: &str, args: Vec<Expr>) -> Stmt {
        Stmt::Call {
            func: func.into(),
            args,
        }
    }
}

/// A modifier applied to a function, with its argument expressions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModifierUse {
    pub name: String,
    pub args: Vec<Expr>,
}

/// A function or guard-style modifier body. Modifiers run before the
/// function body, Solidity `assert(...); _;` style.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionIR {
    pub name: String,
    pub params: Vec<Param>,
    #[serde(default)]
    pub modifiers_applied: Vec<ModifierUse>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractIR {
    pub name: String,
    /// Set when this contract is the output of [`rewrite`].
    #[serde(default)]
    pub dispatcher: Option<Address>,
    pub storage_vars: Vec<StorageDecl>,
    pub functions: Vec<FunctionIR>,
    #[serde(default)]
    pub modifiers: Vec<FunctionIR>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IrError {
    #[error("duplicate function name `{0}`")]
    DuplicateFunction(String),
    #[error("function `{func}` references undeclared storage var `{var}`")]
    UndeclaredStorage { func: String, var: String },
    #[error("function `{func}` calls unknown function `{target}`")]
    UnknownCallTarget { func: String, target: String },
    #[error("function `{func}` applies unknown modifier `{target}`")]
    UnknownModifier { func: String, target: String },
}

impl ContractIR {
    pub fn function(&self, name: &str) -> Option<&FunctionIR> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn modifier(&self, name: &str) -> Option<&FunctionIR> {
        self.modifiers.iter().find(|m| m.name == name)
    }

    pub fn has_storage_var(&self, name: &str) -> bool {
        self.storage_vars.iter().any(|v| v.name == name)
    }

    /// Structural well-formedness: unique names, declared storage,
    /// resolvable call and modifier targets.
    pub fn validate(&self) -> Result<(), IrError> {
        let mut seen = std::collections::BTreeSet::new();
        for f in self.functions.iter().chain(self.modifiers.iter()) {
            if !seen.insert(f.name.clone()) {
                return Err(IrError::DuplicateFunction(f.name.clone()));
            }
        }
        for f in self.functions.iter().chain(self.modifiers.iter()) {
            for m in &f.modifiers_applied {
                if self.modifier(&m.name).is_none() {
                    return Err(IrError::UnknownModifier {
                        func: f.name.clone(),
                        target: m.name.clone(),
                    });
                }
            }
            self.validate_stmts(&f.name, &f.body)?;
        }
        Ok(())
    }

    fn validate_stmts(&self, func: &str, body: &[Stmt]) -> Result<(), IrError> {
        for stmt in body {
            match stmt {
                Stmt::Let { value, .. } => self.validate_expr(func, value)?,
                Stmt::Require { cond, .. } => self.validate_expr(func, cond)?,
                Stmt::StorageSet { var, keys, value } => {
                    if !self.has_storage_var(var) {
                        return Err(IrError::UndeclaredStorage {
                            func: func.to_string(),
                            var: var.clone(),
                        });
                    }
                    for k in keys {
                        self.validate_expr(func, k)?;
                    }
                    self.validate_expr(func, value)?;
                }
                Stmt::Call { func: target, args } => {
                    if self.function(target).is_none() {
                        return Err(IrError::UnknownCallTarget {
                            func: func.to_string(),
                            target: target.clone(),
                        });
                    }
                    for a in args {
                        self.validate_expr(func, a)?;
                    }
                }
                Stmt::Transfer { to, amount } => {
                    self.validate_expr(func, to)?;
                    self.validate_expr(func, amount)?;
                }
                Stmt::Return { values } => {
                    for v in values {
                        self.validate_expr(func, v)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_expr(&self, func: &str, expr: &Expr) -> Result<(), IrError> {
        match expr {
            Expr::StorageGet { var, keys } => {
                if !self.has_storage_var(var) {
                    return Err(IrError::UndeclaredStorage {
                        func: func.to_string(),
                        var: var.clone(),
                    });
                }
                for k in keys {
                    self.validate_expr(func, k)?;
                }
                Ok(())
            }
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Eq(a, b)
            | Expr::Ge(a, b)
            | Expr::Gt(a, b) => {
                self.validate_expr(func, a)?;
                self.validate_expr(func, b)
            }
            Expr::Not(a) => self.validate_expr(func, a),
            Expr::Hash(args) => {
                for a in args {
                    self.validate_expr(func, a)?;
                }
                Ok(())
            }
            Expr::Const(_) | Expr::Param(_) | Expr::Local(_) | Expr::MsgSender | Expr::Now => {
                Ok(())
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("IR serializes")
    }

    pub fn from_json(text: &str) -> Result<ContractIR, serde_json::Error> {
        serde_json::from_str(text)
    }
}
