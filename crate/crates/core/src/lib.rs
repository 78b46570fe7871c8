//! Locally differentially private distributed online stochastic optimization
//! over directed graphs.
//!
//! A network of agents minimizes the average of their streaming empirical
//! risks by exchanging dynamically quantized messages along two directed
//! graphs: decision variables are pulled along a zero-row-sum matrix `R`,
//! gradient-tracking variables pushed along a zero-column-sum matrix `C`,
//! and an auxiliary iteration estimates the left eigenvector that rescales
//! the updates. The unbiased two-level quantizer masks every transmitted
//! value, and because its stepsize decays slower than the iterate
//! sensitivity, each agent retains a finite `(0, delta_i)` local privacy
//! budget over the whole horizon while the iterates still converge.
//!
//! The crate is organized around that pipeline:
//!
//! - [`topology`]: weight-matrix validation, eigenvectors, geometric fits;
//! - [`quantizer`]: the dynamic stochastic quantizer and its exact oracles;
//! - [`problems`]: logistic / quadratic streams, gradients, optima;
//! - [`engine`]: round-synchronous execution and the unquantized baseline;
//! - [`privacy`]: twin-run sensitivity, budget composition, analytic bounds;
//! - [`metrics`]: consensus errors, objective gaps, decay-rate fits;
//! - [`config`] / [`output`]: the TOML surface and delimited-text files.
//!
//! The narrative guide in `book/` walks through the same pieces; its code
//! snippets compile and run as doctests of this crate (see [`guide`]).

pub mod config;
pub mod engine;
pub mod error;
pub mod guide;
pub mod metrics;
pub mod output;
pub mod privacy;
pub mod problems;
pub mod quantizer;
pub mod rng;
pub mod schedule;
pub mod topology;

pub use error::{Error, Result};
pub use schedule::{QuantSchedule, StepSchedule};
