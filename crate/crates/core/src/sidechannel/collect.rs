use std::fmt;
use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{hamming_weight, Real, SideError};
use crate::cpu::{Cpu, CpuConfig, RunError};
use crate::rng::{mix_seed, HybridRng};
use crate::transform::{lower, parse_kernel, LigAssignment, Lowered, Mode};

/// Which core runs the MAC kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Core {
    /// Plain RV32IM, iterations in order.
    Sequential,
    /// PermuteV with the given LIG block size.
    Permuted { block_size: u32 },
}

impl fmt::Display for Core {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Core::Sequential => f.write_str("sequential"),
            Core::Permuted { block_size } => write!(f, "B={block_size}"),
        }
    }
}

impl std::str::FromStr for Core {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "sequential" || s == "seq" {
            return Ok(Core::Sequential);
        }
        let b = s.strip_prefix("B=").or_else(|| s.strip_prefix("b=")).unwrap_or(s);
        b.parse::<u32>()
            .map(|block_size| Core::Permuted { block_size })
            .map_err(|_| format!("unknown core `{s}` (expected sequential or B=<n>)"))
    }
}

/// Leakage model: sample = HW(writeback) + N(0, sigma).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageModel<S> {
    pub sigma: S,
    pub seed: u64,
}

impl<S: Real> LeakageModel<S> {
    pub fn new(sigma: S, seed: u64) -> Result<Self, SideError> {
        let s = sigma.to_f64().unwrap_or(f64::NAN);
        if !s.is_finite() || s < 0.0 {
            return Err(SideError::Sigma(s));
        }
        Ok(LeakageModel { sigma, seed })
    }
}

/// Dot-product kernel source for `n` weights.
pub fn mac_kernel_source(n: usize) -> String {
    format!(
        "# multiply-accumulate over {n} weights\n\
         const N = {n}\n\
         array a[N]\n\
         array w[N]\n\
         scalar s\n\
         for i in 0..N {{\n    s reduce+ = a[i] * w[i]\n}}\n"
    )
}

/// The compiled MAC kernel for one core configuration.
#[derive(Debug, Clone)]
pub struct MacTarget {
    pub n: usize,
    pub core: Core,
    pub lowered: Lowered,
}

impl MacTarget {
    pub fn new(n: usize, core: Core) -> Result<Self, SideError> {
        if n == 0 {
            return Err(SideError::Config("N must be positive".into()));
        }
        let ir = parse_kernel(&mac_kernel_source(n)).map_err(|e| SideError::Config(e.to_string()))?;
        let mode = match core {
            Core::Sequential => Mode::Baseline,
            Core::Permuted { .. } => Mode::Permuted,
        };
        let lowered = lower(&ir, mode, LigAssignment::default())?;
        Ok(MacTarget { n, core, lowered })
    }

    fn cpu_config(&self) -> CpuConfig {
        let block_size = match self.core {
            Core::Sequential => 4,
            Core::Permuted { block_size } => block_size,
        };
        CpuConfig { mem_size: self.lowered.layout.mem_size, block_size }
    }

    /// Loads one input vector and the secret into a core.
    fn prepare(&self, cpu: &mut Cpu, input: &[u8], weights: &[i8]) {
        let a: Vec<u32> = input.iter().map(|&x| x as u32).collect();
        let w: Vec<u32> = weights.iter().map(|&x| x as i32 as u32).collect();
        let layout = &self.lowered.layout;
        cpu.write_words(layout.arrays["a"].0, &a).expect("layout fits memory");
        cpu.write_words(layout.arrays["w"].0, &w).expect("layout fits memory");
        cpu.write_words(layout.scalars["s"], &[0]).expect("layout fits memory");
    }

    /// Runs once and returns the retire log (for inspection and tests).
    pub fn run_events(
        &self,
        input: &[u8],
        weights: &[i8],
        lig_seed: u64,
    ) -> Result<Vec<crate::cpu::RetireEvent>, RunError> {
        let mut cpu = Cpu::new(self.cpu_config(), HybridRng::seed(lig_seed));
        cpu.load_program(&self.lowered.program).expect("program fits memory");
        self.prepare(&mut cpu, input, weights);
        cpu.run(self.max_steps())
    }

    fn max_steps(&self) -> u64 {
        64 * self.n as u64 + 1024
    }

    /// Cycle range covering the loop body in every run.
    pub fn window(&self) -> Range<usize> {
        let zeros = vec![0u8; self.n];
        let w = vec![0i8; self.n];
        let events = self.run_events(&zeros, &w, 1).expect("MAC kernel runs");
        let (top, end) = self.lowered.body_range(0);
        let inside: Vec<usize> =
            events.iter().enumerate().filter(|(_, e)| (top..end).contains(&e.pc)).map(|(k, _)| k).collect();
        inside[0]..inside[inside.len() - 1] + 1
    }
}

/// One campaign's traces: row t is the leakage of input row t.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet<S> {
    pub samples: Array2<S>,
    /// Per-run LIG seeds (empty for the sequential core).
    pub lig_seeds: Vec<u64>,
}

const CHUNK: usize = 256;

/// Runs the target once per input row and records leakage. Run `t` uses LIG
/// seed `mix_seed(lig_seed, t)` and noise seed `mix_seed(model.seed, t)`,
/// so results do not depend on how runs are scheduled across threads.
pub fn collect_traces<S: Real>(
    target: &MacTarget,
    weights: &[i8],
    inputs: ArrayView2<u8>,
    model: &LeakageModel<S>,
    lig_seed: u64,
) -> Result<TraceSet<S>, SideError> {
    if weights.len() != target.n {
        return Err(SideError::LengthMismatch(weights.len(), target.n));
    }
    if inputs.ncols() != target.n {
        return Err(SideError::LengthMismatch(inputs.ncols(), target.n));
    }
    let runs = inputs.nrows();
    let sigma = model.sigma.to_f64().unwrap();
    let normal = Normal::new(0.0, sigma).map_err(|_| SideError::Sigma(sigma))?;
    let config = target.cpu_config();
    let steps = target.max_steps();
    let permuted = matches!(target.core, Core::Permuted { .. });

    let chunks: Vec<Result<Vec<Vec<S>>, SideError>> = (0..runs.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut cpu = Cpu::new(config, HybridRng::seed(1));
            cpu.load_program(&target.lowered.program).expect("program fits memory");
            let mut rows = Vec::new();
            for t in c * CHUNK..((c + 1) * CHUNK).min(runs) {
                cpu.reset(HybridRng::seed(mix_seed(lig_seed, t as u64)));
                let input = inputs.row(t).to_vec();
                target.prepare(&mut cpu, &input, weights);
                let mut noise = ChaCha8Rng::seed_from_u64(mix_seed(model.seed, t as u64));
                let mut row = Vec::with_capacity(steps as usize);
                let res = cpu.run_with(steps, |ev| {
                    let hw = ev.writeback.map_or(0, hamming_weight) as f64;
                    let n = if sigma > 0.0 { normal.sample(&mut noise) } else { 0.0 };
                    row.push(S::from_f64(hw + n).unwrap());
                });
                match res {
                    Ok(_) => rows.push(row),
                    Err(RunError::Trap(trap)) => return Err(SideError::Trap { run: t, trap }),
                    Err(_) => return Err(SideError::Runaway { run: t, steps }),
                }
            }
            Ok(rows)
        })
        .collect();

    let mut flat = Vec::new();
    let mut len = None;
    let mut t = 0;
    for chunk in chunks {
        for row in chunk? {
            let expected = *len.get_or_insert(row.len());
            if row.len() != expected {
                return Err(SideError::TraceLength { run: t, expected, got: row.len() });
            }
            flat.extend(row);
            t += 1;
        }
    }
    let samples = Array2::from_shape_vec((runs, len.unwrap_or(0)), flat).expect("rectangular");
    let lig_seeds = if permuted { (0..runs as u64).map(|t| mix_seed(lig_seed, t)).collect() } else { Vec::new() };
    Ok(TraceSet { samples, lig_seeds })
}
