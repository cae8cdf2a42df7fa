//! Markov population models with mean-field and quasi-equilibrium reductions.
//!
//! Models are plain data ([`model::Model`]) parsed from JSON with symbolic
//! rate expressions. From there:
//!
//! * [`stoich`] computes stoichiometry, p-invariants and reduced images exactly;
//! * [`ssa`] and [`cme`] treat the model as a continuous-time Markov chain;
//! * [`meanfield`] builds the deterministic drift and its equilibria;
//! * [`qe`] separates fast from slow transitions and averages the fast part out;
//! * [`pipeline`] composes the two reductions in both orders and compares them;
//! * [`limits`] measures how far each reduction is from its source.

// `!(a <= b)` is deliberate throughout: it sends NaN into the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cme;
pub mod error;
pub mod expr;
pub mod fixtures;
pub mod limits;
pub mod meanfield;
pub mod model;
pub mod pipeline;
pub mod qe;
pub mod ssa;
pub mod stoich;

pub use error::{Error, Result};
pub use expr::RateExpr;
pub use model::{Bound, CompiledModel, Model, RateSource, Scale, Transition};
