//! Stochastic gradient methods on finite sums under arbitrary data orderings.
//!
//! The crate provides finite-sum problems ([`problems`]), index schedules
//! ([`ordering`]), the constant-stepsize SGD loop ([`engine`]), estimators for
//! ordering-dependent gradient variance ([`variance`]), closed-form bounds and
//! runtime checkers ([`bounds`]), a LIBSVM reader ([`libsvm`]) and a
//! config-driven experiment runner ([`harness`]).

pub mod bounds;
pub mod engine;
pub mod harness;
pub mod libsvm;
pub mod linalg;
pub mod ordering;
pub mod problems;
pub mod rng;
pub mod stats;
pub mod variance;
