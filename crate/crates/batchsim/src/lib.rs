//! A desk-scale laboratory for secure invocation batching on a simulated
//! fee-market blockchain.
//!
//! Callers hand their contract invocations to an untrusted off-chain
//! `Batcher`, which aggregates them into a single jointly-signed batch
//! transaction bound for a stateless on-chain `Dispatcher` contract. The
//! Dispatcher recovers each caller from its batch signature and relays the
//! call to the (rewritten) callee. The crate bundles everything needed to
//! study the cost/delay trade-offs of that design:
//!
//! - [`core`]: domain types and byte-exact encodings (invocations, batch
//!   messages, transactions).
//! - [`identity`]: recoverable ECDSA keys, signing, and sender recovery.
//! - [`costmodel`]: the parametric gas schedule, analytic cost formulas,
//!   break-even batch size, and the runtime gas meter.
//! - [`rewriter`]: a miniature contract IR, the `ByD` source rewrite, and
//!   backward-compatibility checking.
//! - [`dispatcher`]: the simulated Dispatcher contract plus baselines
//!   (B0/B1/B2/Ideal) and customization variants (inlined, top1-elided).
//! - [`chainsim`]: deterministic chain state, txpool, price-ordered block
//!   production, and the trace-driven inclusion rule.
//! - [`policy`]: batching policies (windowed, top1, minX, one-block
//!   eviction with threshold selection and dynamic pricing) and the
//!   offline-optimal oracle.
//! - [`protocol`]: the off-chain joint-signing protocol, caller audit, and
//!   an adversarial Batcher harness.
//! - [`bench`]: trace ingestion, synthetic workload generation, replay
//!   engines, and metric reports.

pub mod bench;
pub mod chainsim;
pub mod core;
pub mod costmodel;
pub mod dispatcher;
pub mod identity;
pub mod policy;
pub mod protocol;
pub mod rewriter;
