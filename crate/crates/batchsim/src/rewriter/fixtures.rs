//! Bundled application contracts: a minimal ERC20 token with a blacklist
//! modifier, a hashed time-lock contract, and a small exchange. These are
//! the rewrite and equivalence test subjects, and the callees the replay
//! benchmarks drive.

use super::{ContractIR, Expr, FunctionIR, ModifierUse, Param, Stmt, StorageDecl, StorageKind};

fn map(name: &str) -> StorageDecl {
    StorageDecl {
        name: name.into(),
        kind: StorageKind::Map,
    }
}

fn scalar(name: &str) -> StorageDecl {
    StorageDecl {
        name: name.into(),
        kind: StorageKind::Scalar,
    }
}

/// Minimal ERC20: `transfer` guarded by a blacklist modifier and split
/// into `debit`/`credit` internals (only `debit` touches the sender),
/// `approve`, and `transferFrom` spending the caller's allowance.
pub fn erc20() -> ContractIR {
    let no_blacklisted = FunctionIR {
        name: "noBlacklisted".into(),
        params: vec![],
        modifiers_applied: vec![],
        body: vec![Stmt::require(Expr::not(Expr::get(
            "blacklist",
            vec![Expr::MsgSender],
        )))],
    };

    let debit = FunctionIR {
        name: "debit".into(),
        params: vec![Param::uint("amount")],
        modifiers_applied: vec![],
        body: vec![
            Stmt::let_("bal", Expr::get("balances", vec![Expr::MsgSender])),
            Stmt::require(Expr::ge(Expr::local("bal"), Expr::param("amount"))),
            Stmt::set(
                "balances",
                vec![Expr::MsgSender],
                Expr::sub(Expr::local("bal"), Expr::param("amount")),
            ),
        ],
    };

    let credit = FunctionIR {
        name: "credit".into(),
        params: vec![Param::address("to"), Param::uint("amount")],
        modifiers_applied: vec![],
        body: vec![
            Stmt::let_("bal", Expr::get("balances", vec![Expr::param("to")])),
            Stmt::set(
                "balances",
                vec![Expr::param("to")],
                Expr::add(Expr::local("bal"), Expr::param("amount")),
            ),
        ],
    };

    let transfer = FunctionIR {
        name: "transfer".into(),
        params: vec![Param::address("to"), Param::uint("value")],
        modifiers_applied: vec![ModifierUse {
            name: "noBlacklisted".into(),
            args: vec![],
        }],
        body: vec![
            Stmt::call("debit", vec![Expr::param("value")]),
            Stmt::call("credit", vec![Expr::param("to"), Expr::param("value")]),
        ],
    };

    let approve = FunctionIR {
        name: "approve".into(),
        params: vec![Param::address("spender"), Param::uint("value")],
        modifiers_applied: vec![],
        body: vec![Stmt::set(
            "allowance",
            vec![Expr::MsgSender, Expr::param("spender")],
            Expr::param("value"),
        )],
    };

    let transfer_from = FunctionIR {
        name: "transferFrom".into(),
        params: vec![
            Param::address("from"),
            Param::address("to"),
            Param::uint("value"),
        ],
        modifiers_applied: vec![],
        body: vec![
            Stmt::let_(
                "allowed",
                Expr::get("allowance", vec![Expr::param("from"), Expr::MsgSender]),
            ),
            Stmt::require(Expr::ge(Expr::local("allowed"), Expr::param("value"))),
            Stmt::set(
                "allowance",
                vec![Expr::param("from"), Expr::MsgSender],
                Expr::sub(Expr::local("allowed"), Expr::param("value")),
            ),
            Stmt::let_("bal", Expr::get("balances", vec![Expr::param("from")])),
            Stmt::require(Expr::ge(Expr::local("bal"), Expr::param("value"))),
            Stmt::set(
                "balances",
                vec![Expr::param("from")],
                Expr::sub(Expr::local("bal"), Expr::param("value")),
            ),
            Stmt::call("credit", vec![Expr::param("to"), Expr::param("value")]),
        ],
    };

    ContractIR {
        name: "Token".into(),
        dispatcher: None,
        storage_vars: vec![map("balances"), map("allowance"), map("blacklist")],
        functions: vec![transfer, approve, transfer_from, debit, credit],
        modifiers: vec![no_blacklisted],
    }
}

/// Hashed time-lock contract keyed by a caller-chosen id. `withdraw` needs
/// the hash preimage and the receiver identity; `refund` needs the sender
/// identity and an expired timelock.
pub fn htlc() -> ContractIR {
    let id = || Expr::param("id");

    let new_contract = FunctionIR {
        name: "newContract".into(),
        params: vec![
            Param::word("id"),
            Param::address("receiver"),
            Param::word("hashlock"),
            Param::uint("timelock"),
            Param::uint("amount"),
        ],
        modifiers_applied: vec![],
        body: vec![
            Stmt::require(Expr::eq(
                Expr::get("h_status", vec![id()]),
                Expr::constant(0),
            )),
            Stmt::set("h_sender", vec![id()], Expr::MsgSender),
            Stmt::set("h_receiver", vec![id()], Expr::param("receiver")),
            Stmt::set("h_hashlock", vec![id()], Expr::param("hashlock")),
            Stmt::set("h_timelock", vec![id()], Expr::param("timelock")),
            Stmt::set("h_amount", vec![id()], Expr::param("amount")),
            Stmt::set("h_status", vec![id()], Expr::constant(1)),
        ],
    };

    let withdraw = FunctionIR {
        name: "withdraw".into(),
        params: vec![Param::word("id"), Param::word("preimage")],
        modifiers_applied: vec![],
        body: vec![
            Stmt::require(Expr::eq(
                Expr::get("h_status", vec![id()]),
                Expr::constant(1),
            )),
            Stmt::require(Expr::eq(
                Expr::Hash(vec![Expr::param("preimage")]),
                Expr::get("h_hashlock", vec![id()]),
            )),
            Stmt::require(Expr::eq(
                Expr::MsgSender,
                Expr::get("h_receiver", vec![id()]),
            )),
            Stmt::set("h_status", vec![id()], Expr::constant(2)),
            Stmt::Transfer {
                to: Expr::get("h_receiver", vec![id()]),
                amount: Expr::get("h_amount", vec![id()]),
            },
        ],
    };

    let refund = FunctionIR {
        name: "refund".into(),
        params: vec![Param::word("id")],
        modifiers_applied: vec![],
        body: vec![
            Stmt::require(Expr::eq(
                Expr::get("h_status", vec![id()]),
                Expr::constant(1),
            )),
            Stmt::require(Expr::eq(Expr::MsgSender, Expr::get("h_sender", vec![id()]))),
            Stmt::require(Expr::gt(Expr::Now, Expr::get("h_timelock", vec![id()]))),
            Stmt::set("h_status", vec![id()], Expr::constant(3)),
            Stmt::Transfer {
                to: Expr::get("h_sender", vec![id()]),
                amount: Expr::get("h_amount", vec![id()]),
            },
        ],
    };

    ContractIR {
        name: "Htlc".into(),
        dispatcher: None,
        storage_vars: vec![
            map("h_sender"),
            map("h_receiver"),
            map("h_hashlock"),
            map("h_timelock"),
            map("h_amount"),
            map("h_status"),
        ],
        functions: vec![new_contract, withdraw, refund],
        modifiers: vec![],
    }
}

/// Exchange with per-user ether and token books: `deposit` credits ether,
/// `trade` swaps tokens for ether with a counterparty, `withdraw` pays
/// ether out.
pub fn exchange() -> ContractIR {
    let deposit = FunctionIR {
        name: "deposit".into(),
        params: vec![Param::uint("amount")],
        modifiers_applied: vec![],
        body: vec![
            Stmt::let_("bal", Expr::get("ether_bal", vec![Expr::MsgSender])),
            Stmt::set(
                "ether_bal",
                vec![Expr::MsgSender],
                Expr::add(Expr::local("bal"), Expr::param("amount")),
            ),
        ],
    };

    let trade = FunctionIR {
        name: "trade".into(),
        params: vec![
            Param::address("counterparty"),
            Param::uint("token_amount"),
            Param::uint("ether_amount"),
        ],
        modifiers_applied: vec![],
        body: vec![
            Stmt::let_(
                "seller_tokens",
                Expr::get("token_bal", vec![Expr::param("counterparty")]),
            ),
            Stmt::require(Expr::ge(
                Expr::local("seller_tokens"),
                Expr::param("token_amount"),
            )),
            Stmt::let_("buyer_ether", Expr::get("ether_bal", vec![Expr::MsgSender])),
            Stmt::require(Expr::ge(
                Expr::local("buyer_ether"),
                Expr::param("ether_amount"),
            )),
            Stmt::set(
                "token_bal",
                vec![Expr::param("counterparty")],
                Expr::sub(Expr::local("seller_tokens"), Expr::param("token_amount")),
            ),
            Stmt::let_(
                "buyer_tokens",
                Expr::get("token_bal", vec![Expr::MsgSender]),
            ),
            Stmt::set(
                "token_bal",
                vec![Expr::MsgSender],
                Expr::add(Expr::local("buyer_tokens"), Expr::param("token_amount")),
            ),
            Stmt::set(
                "ether_bal",
                vec![Expr::MsgSender],
                Expr::sub(Expr::local("buyer_ether"), Expr::param("ether_amount")),
            ),
            Stmt::let_(
                "seller_ether",
                Expr::get("ether_bal", vec![Expr::param("counterparty")]),
            ),
            Stmt::set(
                "ether_bal",
                vec![Expr::param("counterparty")],
                Expr::add(Expr::local("seller_ether"), Expr::param("ether_amount")),
            ),
        ],
    };

    let withdraw = FunctionIR {
        name: "withdraw".into(),
        params: vec![Param::uint("amount")],
        modifiers_applied: vec![],
        body: vec![
            Stmt::let_("bal", Expr::get("ether_bal", vec![Expr::MsgSender])),
            Stmt::require(Expr::ge(Expr::local("bal"), Expr::param("amount"))),
            Stmt::set(
                "ether_bal",
                vec![Expr::MsgSender],
                Expr::sub(Expr::local("bal"), Expr::param("amount")),
            ),
            Stmt::Transfer {
                to: Expr::MsgSender,
                amount: Expr::param("amount"),
            },
        ],
    };

    ContractIR {
        name: "Exchange".into(),
        dispatcher: None,
        storage_vars: vec![map("token_bal"), map("ether_bal")],
        functions: vec![deposit, trade, withdraw],
        modifiers: vec![],
    }
}

/// Callee with constant execution gas: `work` takes `n_args` unused words
/// and performs two read-update pairs on caller-keyed cells. With the
/// cells pre-seeded, every call costs exactly 2·(sload + update).
pub fn constant_cost_callee(n_args: usize) -> ContractIR {
    let params = (0..n_args).map(|i| Param::word(&format!("a{i}"))).collect();
    let work = FunctionIR {
        name: "work".into(),
        params,
        modifiers_applied: vec![],
        body: vec![
            Stmt::let_("c", Expr::get("counters", vec![Expr::MsgSender])),
            Stmt::set(
                "counters",
                vec![Expr::MsgSender],
                Expr::add(Expr::local("c"), Expr::constant(1)),
            ),
            Stmt::let_("t", Expr::get("total", vec![])),
            Stmt::set(
                "total",
                vec![],
                Expr::add(Expr::local("t"), Expr::constant(1)),
            ),
        ],
    };

    ContractIR {
        name: "Bench".into(),
        dispatcher: None,
        storage_vars: vec![map("counters"), scalar("total")],
        functions: vec![work],
        modifiers: vec![],
    }
}
