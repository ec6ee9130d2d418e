//! Encrypted distributed state estimation by affine averaging.
//!
//! Agents estimate absolute scalar states from noisy relative measurements.
//! Every follower iterates on ciphertexts under an additively homomorphic
//! scheme; only the leader (agent `0`) holds the secret key and its own
//! estimate in plaintext. Because the fixed-point scale grows by a factor
//! `s` per iteration, the leader periodically resets all states through a
//! spanning tree so the integers never leave the message space.
//!
//! Module map:
//!
//! | module | contents |
//! |---|---|
//! | [`graph`] | measured graphs, incidence/Laplacian algebra, pseudoinverse, reset trees |
//! | [`estimation`] | measurement model, centralized solution, real-valued affine averaging |
//! | [`fixedpoint`] | integer dynamics, modular reconstruction, overflow budget, error bound |
//! | [`he`] | additively homomorphic backends (Paillier and an exact mock) |
//! | [`reset`] | distances, reset shifts, encrypted tree aggregation and distribution |
//! | [`engine`] | full encrypted runs and plaintext reference pipelines |
//! | [`analysis`] | means and covariances of the estimators, Monte Carlo checks |
//! | [`bench`] | the `example5`, `simulate`, `bench` and `analyze` commands |
//!
//! Node indices are zero-based in code; agent `0` is the leader.

pub mod analysis;
pub mod bench;
pub mod engine;
pub mod error;
pub mod estimation;
pub mod fixedpoint;
pub mod graph;
pub mod he;
pub mod par;
pub mod reset;
pub mod rng;

pub use error::{Error, Result};
