//! Backward-compatibility checks for rewritten contracts.
//!
//! A twin is backward-compatible when, for any owner, state, and argument
//! vector, `owner.foo(state, args)` and `Dispatcher.fooByD(state, owner ‖
//! args)` produce the same end state and output. `check_equivalence` tests
//! one such triple; `fuzz_routing` drives a short call program through
//! every external/batched routing combination and compares final states
//! against the all-external reference.

use super::{exec, ContractIR, ContractState, ExecEnv, ExecError, BYD_SUFFIX};
use crate::core::{Address, Word};
use crate::costmodel::GasCostModel;

/// Outcome of one call leg, normalized for comparison: either the output
/// words or the failure class.
#[derive(Debug, Clone, PartialEq, Eq)]
enum LegOutcome {
    Ok(Vec<Word>),
    Failed(String),
}

fn run_leg(
    contract: &ContractIR,
    function: &str,
    env: &ExecEnv,
    state: &mut ContractState,
    args: &[Word],
    model: &GasCostModel,
) -> LegOutcome {
    match exec(contract, function, env, state, args, model) {
        Ok(trace) => LegOutcome::Ok(trace.output),
        // Rollback already happened; classify by error shape so both routes
        // must fail the same way to count as equivalent.
        Err(ExecError::Revert(_)) => LegOutcome::Failed("revert".into()),
        Err(other) => LegOutcome::Failed(format!("{other:?}")),
    }
}

/// Checks one invocation triple for functional equivalence between the
/// original `function` and its `ByD` twin called by the Dispatcher.
#[allow(clippy::too_many_arguments)]
pub fn check_equivalence(
    original: &ContractIR,
    rewritten: &ContractIR,
    function: &str,
    owner: Address,
    state: &ContractState,
    args: &[Word],
    now_s: u64,
    model: &GasCostModel,
) -> bool {
    let dispatcher = match rewritten.dispatcher {
        Some(d) => d,
        None => return false,
    };
    let self_address = Address([0xcc; 20]);

    let mut direct_state = state.clone();
    let direct = run_leg(
        original,
        function,
        &ExecEnv::new(owner, self_address).at_time(now_s),
        &mut direct_state,
        args,
        model,
    );

    let mut routed_state = state.clone();
    let mut routed_args = Vec::with_capacity(args.len() + 1);
    routed_args.push(owner.to_word());
    routed_args.extend_from_slice(args);
    let routed = run_leg(
        rewritten,
        &format!("{function}{BYD_SUFFIX}"),
        &ExecEnv::new(dispatcher, self_address).at_time(now_s),
        &mut routed_state,
        &routed_args,
        model,
    );

    direct == routed && direct_state == routed_state
}

/// One call of a routing test program.
#[derive(Debug, Clone)]
pub struct ProgramCall {
    pub function: String,
    pub owner: Address,
    pub args: Vec<Word>,
    pub now_s: u64,
}

#[derive(Debug, Clone)]
pub struct RoutingDivergence {
    /// Bitmask of the routing (bit i set = call i went through the
    /// Dispatcher).
    pub mask: u32,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct FuzzReport {
    pub combinations: u32,
    pub divergences: Vec<RoutingDivergence>,
}

impl FuzzReport {
    pub fn passed(&self) -> bool {
        self.divergences.is_empty()
    }
}

/// Runs the program under all `2^N` external/batched routings and compares
/// each final state against the all-external reference. All routings run
/// on the rewritten contract, which inherits the original functions.
pub fn fuzz_routing(
    program: &[ProgramCall],
    rewritten: &ContractIR,
    initial: &ContractState,
    model: &GasCostModel,
) -> FuzzReport {
    assert!(program.len() <= 4, "routing programs are at most 4 calls");
    let dispatcher = rewritten
        .dispatcher
        .expect("fuzz_routing needs a rewritten contract");
    let self_address = Address([0xcc; 20]);
    let combos = 1u32 << program.len();

    let run_mask = |mask: u32| -> (ContractState, Vec<LegOutcome>) {
        let mut state = initial.clone();
        let mut outcomes = Vec::with_capacity(program.len());
        for (i, call) in program.iter().enumerate() {
            let outcome = if mask & (1 << i) != 0 {
                let mut args = Vec::with_capacity(call.args.len() + 1);
                args.push(call.owner.to_word());
                args.extend_from_slice(&call.args);
                run_leg(
                    rewritten,
                    &format!("{}{BYD_SUFFIX}", call.function),
                    &ExecEnv::new(dispatcher, self_address).at_time(call.now_s),
                    &mut state,
                    &args,
                    model,
                )
            } else {
                run_leg(
                    rewritten,
                    &call.function,
                    &ExecEnv::new(call.owner, self_address).at_time(call.now_s),
                    &mut state,
                    &call.args,
                    model,
                )
            };
            outcomes.push(outcome);
        }
        (state, outcomes)
    };

    let (reference_state, reference_outcomes) = run_mask(0);
    let mut divergences = Vec::new();
    for mask in 1..combos {
        let (state, outcomes) = run_mask(mask);
        if state != reference_state {
            divergences.push(RoutingDivergence {
                mask,
                detail: "final state differs from all-external reference".into(),
            });
        } else if outcomes != reference_outcomes {
            divergences.push(RoutingDivergence {
                mask,
                detail: "call outcomes differ from all-external reference".into(),
            });
        }
    }
    FuzzReport {
        combinations: combos,
        divergences,
    }
}
