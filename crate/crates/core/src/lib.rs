//! Automatic generation of partitioned matrix expressions (PMEs).
//!
//! Given an operation described by its operands' properties and the
//! equation they satisfy, the pipeline
//!
//! 1. binds operand dimensions over the equation tree and enumerates the
//!    viable combinations of partitioning rules ([`binding`]),
//! 2. partitions the operands and multiplies out the blocked equation
//!    ([`partition`], [`blockarith`]),
//! 3. repeatedly matches the per-block equations against a knowledge base of
//!    solved patterns until every output block is expressed in terms of known
//!    quantities ([`engine`]).
//!
//! [`oracle`] instantiates the symbolic results with random matrices so that
//! every derived PME can be checked numerically.

pub mod binding;
pub mod blockarith;
pub mod engine;
pub mod expr;
pub mod opspec;
pub mod oracle;
pub mod partition;
pub mod random_spec;
pub mod render;

pub use binding::{bind_dimensions, enumerate_combinations, RuleCombination};
pub use blockarith::{blocked_postcondition, detect_star, validate_conformance};
pub use engine::{derive_all, derive_pme, learn, seed_builtins, KnowledgeBase, Pme};
pub use expr::{normalize, Equation, Expr};
pub use opspec::{parse_operation, render_spec, OperationSpec};
