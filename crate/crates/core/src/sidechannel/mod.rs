//! Synthetic leakage and correlation attacks on a MAC kernel.
//!
//! Traces are one sample per retired instruction: the Hamming weight of the
//! writeback plus Gaussian noise. Attacks score every nonzero 8-bit
//! signed candidate for one weight at a time against the running accumulator.
//!
//! Numeric code is generic over the sample type (`f32` or `f64`); the crate
//! root carries `f64` aliases.

mod campaign;
mod collect;
mod cpa;
mod io;

pub use campaign::{
    recovery_point, schedule_points, sweep_experiment, AttackReport, Campaign, CampaignConfig, Scenario, SweepRow,
    WeightResult, DEFAULT_SCHEDULE, DEFAULT_STABILITY,
};
pub use collect::{collect_traces, mac_kernel_source, Core, LeakageModel, MacTarget, TraceSet};
pub use cpa::{candidate_index, cema_attack, hypotheses, pearson, CpaAccumulator, Ranking, CANDIDATES};
pub use io::{read_pvtr, sweep_csv, sweep_svg, write_inputs_csv, write_pvtr, PvtrError, PvtrHeader};

use thiserror::Error;

use crate::cpu::Trap;
use crate::transform::LowerError;

/// Sample type usable by the attack code.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + 'static
{
}

impl<T> Real for T where
    T: num_traits::Float
        + num_traits::NumAssign
        + num_traits::FromPrimitive
        + ndarray::LinalgScalar
        + ndarray::ScalarOperand
        + Send
        + Sync
        + std::fmt::Debug
        + std::fmt::Display
        + std::iter::Sum
        + 'static
{
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SideError {
    #[error("need at least 2 traces, got {0}")]
    TooFewTraces(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("weight index {k} out of range for N={n}")]
    WeightIndex { k: usize, n: usize },
    #[error("prefix has {got} weights, attack on weight {k} needs {k}")]
    Prefix { k: usize, got: usize },
    #[error("run {run} failed: {trap}")]
    Trap { run: usize, trap: Trap },
    #[error("run {run} did not halt within {steps} steps")]
    Runaway { run: usize, steps: u64 },
    #[error("run {run} produced {got} samples, expected {expected}")]
    TraceLength { run: usize, expected: usize, got: usize },
    #[error("noise sigma must be finite and non-negative, got {0}")]
    Sigma(f64),
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error("{0}")]
    Config(String),
}

pub fn hamming_weight(v: u32) -> u32 {
    v.count_ones()
}
