//! The source-level rewrite producing Dispatcher-callable `ByD` twins.
//!
//! For every function or modifier that transitively depends on the caller
//! identity, the rewrite emits a twin with an `Address from` parameter
//! prepended, where
//!
//! 1. every `msg.sender` reference becomes a reference to `from`,
//! 2. the twin body opens with a gate asserting the actual caller is the
//!    Dispatcher,
//! 3. calls and modifier applications that lead to rewritten targets are
//!    renamed to the twins with `from` forwarded.
//!
//! `transferFrom` is the one exception: its first argument already names
//! the owner, so it is never twinned and calls into it stay untouched.

use std::collections::BTreeSet;

use thiserror::Error;

use super::{ContractIR, Expr, FunctionIR, ModifierUse, RequireKind, Stmt};
use crate::core::Address;

/// Suffix marking rewritten twins.
pub const BYD_SUFFIX: &str = "ByD";
/// Name of the prepended sender parameter.
pub const FROM_PARAM: &str = "from";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewriteError {
    #[error("recursive call or modifier cycle through `{0}`")]
    Recursion(String),
    #[error(transparent)]
    Ir(#[from] super::IrError),
}

pub fn is_rewritten_twin(name: &str) -> bool {
    name.ends_with(BYD_SUFFIX)
}

fn expr_refs_sender(expr: &Expr) -> bool {
    match expr {
        Expr::MsgSender => true,
        Expr::StorageGet { keys, .. } => keys.iter().any(expr_refs_sender),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Eq(a, b) | Expr::Ge(a, b) | Expr::Gt(a, b) => {
            expr_refs_sender(a) || expr_refs_sender(b)
        }
        Expr::Not(a) => expr_refs_sender(a),
        Expr::Hash(args) => args.iter().any(expr_refs_sender),
        Expr::Const(_) | Expr::Param(_) | Expr::Local(_) | Expr::Now => false,
    }
}

fn stmt_refs_sender(stmt: &Stmt) -> bool {
    match stmt {
        Stmt::Let { value, .. } => expr_refs_sender(value),
        Stmt::Require { cond, .. } => expr_refs_sender(cond),
        Stmt::StorageSet { keys, value, .. } => {
            keys.iter().any(expr_refs_sender) || expr_refs_sender(value)
        }
        Stmt::Call { args, .. } => args.iter().any(expr_refs_sender),
        Stmt::Transfer { to, amount } => expr_refs_sender(to) || expr_refs_sender(amount),
        Stmt::Return { values } => values.iter().any(expr_refs_sender),
    }
}

fn body_refs_sender(f: &FunctionIR) -> bool {
    f.body.iter().any(stmt_refs_sender)
        || f.modifiers_applied
            .iter()
            .any(|m| m.args.iter().any(expr_refs_sender))
}

/// Names of functions/modifiers a body invokes.
fn invoked_names(f: &FunctionIR) -> Vec<String> {
    let mut out: Vec<String> = f.modifiers_applied.iter().map(|m| m.name.clone()).collect();
    for stmt in &f.body {
        if let Stmt::Call { func, .. } = stmt {
            out.push(func.clone());
        }
    }
    out
}

/// Computes the set of functions needing a twin: direct `msg.sender`
/// users plus everything that (transitively) invokes one. Rejects cyclic
/// call/modifier graphs, which the forwarding rewrite cannot terminate on.
fn rewrite_set(contract: &ContractIR) -> Result<BTreeSet<String>, RewriteError> {
    // Cycle check over the invocation graph.
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        InProgress,
        Done,
    }
    fn visit(
        contract: &ContractIR,
        name: &str,
        marks: &mut std::collections::BTreeMap<String, Mark>,
    ) -> Result<(), RewriteError> {
        match marks.get(name) {
            Some(Mark::InProgress) => return Err(RewriteError::Recursion(name.to_string())),
            Some(Mark::Done) => return Ok(()),
            None => {}
        }
        marks.insert(name.to_string(), Mark::InProgress);
        let f = contract.function(name).or_else(|| contract.modifier(name));
        if let Some(f) = f {
            for target in invoked_names(f) {
                visit(contract, &target, marks)?;
            }
        }
        marks.insert(name.to_string(), Mark::Done);
        Ok(())
    }
    let mut marks = std::collections::BTreeMap::new();
    for f in contract.functions.iter().chain(contract.modifiers.iter()) {
        visit(contract, &f.name, &mut marks)?;
    }

    let all: Vec<&FunctionIR> = contract
        .functions
        .iter()
        .chain(contract.modifiers.iter())
        .collect();
    let mut need: BTreeSet<String> = all
        .iter()
        .filter(|f| body_refs_sender(f) && f.name != "transferFrom")
        .map(|f| f.name.clone())
        .collect();

    // Propagate upward: anything invoking a member of the set joins it.
    loop {
        let mut grew = false;
        for f in &all {
            if need.contains(&f.name) || f.name == "transferFrom" {
                continue;
            }
            if invoked_names(f).iter().any(|t| need.contains(t)) {
                need.insert(f.name.clone());
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    Ok(need)
}

fn substitute_expr(expr: &Expr) -> Expr {
    match expr {
        Expr::MsgSender => Expr::Param(FROM_PARAM.into()),
        Expr::StorageGet { var, keys } => Expr::StorageGet {
            var: var.clone(),
            keys: keys.iter().map(substitute_expr).collect(),
        },
        Expr::Add(a, b) => Expr::Add(Box::new(substitute_expr(a)), Box::new(substitute_expr(b))),
        Expr::Sub(a, b) => Expr::Sub(Box::new(substitute_expr(a)), Box::new(substitute_expr(b))),
        Expr::Eq(a, b) => Expr::Eq(Box::new(substitute_expr(a)), Box::new(substitute_expr(b))),
        Expr::Ge(a, b) => Expr::Ge(Box::new(substitute_expr(a)), Box::new(substitute_expr(b))),
        Expr::Gt(a, b) => Expr::Gt(Box::new(substitute_expr(a)), Box::new(substitute_expr(b))),
        Expr::Not(a) => Expr::Not(Box::new(substitute_expr(a))),
        Expr::Hash(args) => Expr::Hash(args.iter().map(substitute_expr).collect()),
        other => other.clone(),
    }
}

fn substitute_stmt(stmt: &Stmt, need: &BTreeSet<String>) -> Stmt {
    match stmt {
        Stmt::Let { name, value } => Stmt::Let {
            name: name.clone(),
            value: substitute_expr(value),
        },
        Stmt::Require { cond, kind } => Stmt::Require {
            cond: substitute_expr(cond),
            kind: *kind,
        },
        Stmt::StorageSet { var, keys, value } => Stmt::StorageSet {
            var: var.clone(),
            keys: keys.iter().map(substitute_expr).collect(),
            value: substitute_expr(value),
        },
        Stmt::Call { func, args } => {
            let mut args: Vec<Expr> = args.iter().map(substitute_expr).collect();
            let func = if need.contains(func) {
                args.insert(0, Expr::Param(FROM_PARAM.into()));
                format!("{func}{BYD_SUFFIX}")
            } else {
                // Includes the transferFrom case: the call keeps its own
                // first argument as the owner.
                func.clone()
            };
            Stmt::Call { func, args }
        }
        Stmt::Transfer { to, amount } => Stmt::Transfer {
            to: substitute_expr(to),
            amount: substitute_expr(amount),
        },
        Stmt::Return { values } => Stmt::Return {
            values: values.iter().map(substitute_expr).collect(),
        },
    }
}

fn twin_of(f: &FunctionIR, need: &BTreeSet<String>, dispatcher: Address, gate: bool) -> FunctionIR {
    let mut params = f.params.clone();
    params.insert(0, super::Param::address(FROM_PARAM));

    let mut body: Vec<Stmt> = Vec::with_capacity(f.body.len() + 1);
    if gate {
        body.push(Stmt::Require {
            cond: Expr::eq(Expr::MsgSender, Expr::Const(dispatcher.to_word())),
            kind: RequireKind::DispatcherGuard,
        });
    }
    body.extend(f.body.iter().map(|s| substitute_stmt(s, need)));

    let modifiers_applied = f
        .modifiers_applied
        .iter()
        .map(|m| {
            let mut args: Vec<Expr> = m.args.iter().map(substitute_expr).collect();
            if need.contains(&m.name) {
                args.insert(0, Expr::Param(FROM_PARAM.into()));
                ModifierUse {
                    name: format!("{}{BYD_SUFFIX}", m.name),
                    args,
                }
            } else {
                ModifierUse {
                    name: m.name.clone(),
                    args,
                }
            }
        })
        .collect();

    FunctionIR {
        name: format!("{}{BYD_SUFFIX}", f.name),
        params,
        modifiers_applied,
        body,
    }
}

/// Produces the rewritten contract: the original function set plus `ByD`
/// twins for everything that depends on the caller identity. Idempotent —
/// rewriting a rewritten contract adds no further twins.
pub fn rewrite(contract: &ContractIR, dispatcher: Address) -> Result<ContractIR, RewriteError> {
    contract.validate()?;
    let need_all = rewrite_set(contract)?;
    // Skip names that are already twins or already have one.
    let need: BTreeSet<String> = need_all
        .into_iter()
        .filter(|name| {
            !is_rewritten_twin(name)
                && contract.function(&format!("{name}{BYD_SUFFIX}")).is_none()
                && contract.modifier(&format!("{name}{BYD_SUFFIX}")).is_none()
        })
        .collect();

    let mut out = contract.clone();
    if !is_rewritten_twin(&out.name) {
        out.name = format!("{}{BYD_SUFFIX}", out.name);
    }
    out.dispatcher = Some(dispatcher);

    for f in &contract.functions {
        if need.contains(&f.name) {
            out.functions.push(twin_of(f, &need, dispatcher, true));
        }
    }
    // Modifier twins carry no gate of their own; the owning function's
    // gate runs first.
    for m in &contract.modifiers {
        if need.contains(&m.name) {
            out.modifiers.push(twin_of(m, &need, dispatcher, false));
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{exec, fixtures, ContractState, ExecEnv, ExecError};
    use super::*;
    use crate::core::Word;
    use crate::costmodel::GasCostModel;

    fn addr(b: u8) -> Address {
        Address([b; 20])
    }

    fn dispatcher() -> Address {
        addr(0xdd)
    }

    #[test]
    fn erc20_rewrite_matches_expected_shape() {
        let token = fixtures::erc20();
        let byd = rewrite(&token, dispatcher()).unwrap();

        // transfer and its blacklist modifier both get twins.
        let transfer_byd = byd.function("transferByD").expect("transferByD twin");
        assert_eq!(transfer_byd.params[0].name, FROM_PARAM);
        assert_eq!(transfer_byd.params.len(), 3);
        assert_eq!(transfer_byd.modifiers_applied[0].name, "noBlacklistedByD");
        assert_eq!(
            transfer_byd.modifiers_applied[0].args[0],
            Expr::param(FROM_PARAM)
        );
        assert!(matches!(
            transfer_byd.body[0],
            Stmt::Require {
                kind: RequireKind::DispatcherGuard,
                ..
            }
        ));
        let modifier = byd.modifier("noBlacklistedByD").expect("modifier twin");
        assert!(!modifier.body.iter().any(super::stmt_refs_sender));

        // The sender-using internal is twinned; the target of the call in
        // transferByD threads `from` through.
        assert!(byd.function("debitByD").is_some());
        match &transfer_byd.body[1] {
            Stmt::Call { func, args } => {
                assert_eq!(func, "debitByD");
                assert_eq!(args[0], Expr::param(FROM_PARAM));
            }
            other => panic!("unexpected stmt {other:?}"),
        }

        // credit never touches msg.sender: no twin, call untouched.
        assert!(byd.function("creditByD").is_none());
        match &transfer_byd.body[2] {
            Stmt::Call { func, .. } => assert_eq!(func, "credit"),
            other => panic!("unexpected stmt {other:?}"),
        }

        // transferFrom is special-cased: no twin despite msg.sender use.
        assert!(byd.function("transferFromByD").is_none());

        // approve twin exists.
        assert!(byd.function("approveByD").is_some());
    }

    #[test]
    fn rewrite_is_idempotent() {
        let byd = rewrite(&fixtures::erc20(), dispatcher()).unwrap();
        let twice = rewrite(&byd, dispatcher()).unwrap();
        assert_eq!(byd.functions.len(), twice.functions.len());
        assert_eq!(byd.modifiers.len(), twice.modifiers.len());
        assert_eq!(byd.name, twice.name);
    }

    #[test]
    fn byd_functions_reject_every_non_dispatcher_caller() {
        let byd = rewrite(&fixtures::erc20(), dispatcher()).unwrap();
        let model = GasCostModel::default();
        let alice = addr(1);
        for caller in [addr(1), addr(2), addr(0xee), Address::ZERO] {
            let mut st = ContractState::new();
            st.set("balances", vec![alice.to_word()], Word::from_u128(10));
            let env = ExecEnv::new(caller, addr(0xcc));
            let err = exec(
                &byd,
                "transferByD",
                &env,
                &mut st,
                &[alice.to_word(), addr(2).to_word(), Word::from_u128(1)],
                &model,
            )
            .unwrap_err();
            assert_eq!(err, ExecError::AccessDenied);
        }
    }

    #[test]
    fn byd_transfer_acts_for_the_named_owner() {
        let byd = rewrite(&fixtures::erc20(), dispatcher()).unwrap();
        let model = GasCostModel::default();
        let alice = addr(1);
        let bob = addr(2);
        let mut st = ContractState::new();
        st.set("balances", vec![alice.to_word()], Word::from_u128(50));
        st.set("balances", vec![bob.to_word()], Word::from_u128(1));
        let env = ExecEnv::new(dispatcher(), addr(0xcc));
        exec(
            &byd,
            "transferByD",
            &env,
            &mut st,
            &[alice.to_word(), bob.to_word(), Word::from_u128(20)],
            &model,
        )
        .unwrap();
        assert_eq!(st.get("balances", &[alice.to_word()]), Word::from_u128(30));
        assert_eq!(st.get("balances", &[bob.to_word()]), Word::from_u128(21));
    }

    #[test]
    fn blacklist_check_applies_to_from_not_dispatcher() {
        let byd = rewrite(&fixtures::erc20(), dispatcher()).unwrap();
        let model = GasCostModel::default();
        let alice = addr(1);
        let mut st = ContractState::new();
        st.set("balances", vec![alice.to_word()], Word::from_u128(50));
        st.set("blacklist", vec![alice.to_word()], Word::from_u128(1));
        let env = ExecEnv::new(dispatcher(), addr(0xcc));
        let err = exec(
            &byd,
            "transferByD",
            &env,
            &mut st,
            &[alice.to_word(), addr(2).to_word(), Word::from_u128(1)],
            &model,
        )
        .unwrap_err();
        assert!(matches!(err, ExecError::Revert(_)));
    }

    #[test]
    fn functions_without_sender_refs_are_untouched() {
        let token = fixtures::erc20();
        let byd = rewrite(&token, dispatcher()).unwrap();
        assert_eq!(byd.function("credit"), token.function("credit"));
    }

    #[test]
    fn gas_neutrality_of_the_twin() {
        // The twin's metered exec differs from the original only by the
        // free dispatcher gate: identical gas.
        let token = fixtures::erc20();
        let byd = rewrite(&token, dispatcher()).unwrap();
        let model = GasCostModel::default();
        let alice = addr(1);
        let bob = addr(2);

        let mut st_orig = ContractState::new();
        st_orig.set("balances", vec![alice.to_word()], Word::from_u128(50));
        st_orig.set("balances", vec![bob.to_word()], Word::from_u128(5));
        let mut st_twin = st_orig.clone();

        let orig = exec(
            &token,
            "transfer",
            &ExecEnv::new(alice, addr(0xcc)),
            &mut st_orig,
            &[bob.to_word(), Word::from_u128(7)],
            &model,
        )
        .unwrap();
        let twin = exec(
            &byd,
            "transferByD",
            &ExecEnv::new(dispatcher(), addr(0xcc)),
            &mut st_twin,
            &[alice.to_word(), bob.to_word(), Word::from_u128(7)],
            &model,
        )
        .unwrap();
        assert_eq!(orig.gas, twin.gas);
        assert_eq!(st_orig, st_twin);
    }

    #[test]
    fn recursion_is_rejected() {
        let mut c = fixtures::erc20();
        // debit calls itself.
        c.functions
            .iter_mut()
            .find(|f| f.name == "debit")
            .unwrap()
            .body
            .push(Stmt::call("debit", vec![Expr::param("amount")]));
        assert!(matches!(
            rewrite(&c, dispatcher()).unwrap_err(),
            RewriteError::Recursion(_)
        ));
    }

    #[test]
    fn htlc_and_exchange_twins_exist() {
        let htlc = rewrite(&fixtures::htlc(), dispatcher()).unwrap();
        for f in ["newContractByD", "withdrawByD", "refundByD"] {
            assert!(htlc.function(f).is_some(), "missing {f}");
        }
        let ex = rewrite(&fixtures::exchange(), dispatcher()).unwrap();
        for f in ["depositByD", "tradeByD", "withdrawByD"] {
            assert!(ex.function(f).is_some(), "missing {f}");
        }
    }
}
