//! Bespoke MAC co-processor toolchain.
//!
//! Takes a quantized MLP, selects the constants of a bank of by-constant
//! multipliers together with a per-neuron decomposition schedule that
//! minimizes the number of co-processor calls, then emits the co-processor
//! HDL, the host call program, and simulates the result against an integer
//! reference.
//!
//! Module map:
//!
//! - [`model`]: quantized MLP loading, validation and reference inference
//! - [`solver`]: constant selection and product decomposition (exact and heuristic)
//! - [`codegen`]: slot geometry, call programs, HDL and host source emission
//! - [`sim`]: cycle-level co-processor simulation and host cost model
//! - [`cost`]: area/power proxies and Monte Carlo sweeps
//! - [`cli`]: command implementations behind the `bespoke-forge` binary

pub mod cli;
pub mod codegen;
pub mod cost;
pub mod model;
pub mod sim;
pub mod solver;

pub use model::{load_model, mac_count, reference_inference, NeuronId, QuantizedMlp};
pub use solver::{solve, ProblemInstance, Selection, SolveMode, SolveOutcome};

/// Serializes to pretty JSON with object keys sorted, plus a trailing newline.
///
/// Going through `serde_json::Value` sorts keys because the `preserve_order`
/// feature is off, which keeps every artifact byte-stable.
pub fn canonical_json<T: serde::Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("artifact types serialize infallibly");
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}
