//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use permutev_core::rng::parse_seed;
use permutev_core::sidechannel::{Core, Scenario, DEFAULT_SCHEDULE, DEFAULT_STABILITY};
use permutev_core::transform::Mode;
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "PERMUTEV_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kernel: String,
    pub mode: Mode,
    pub n: usize,
    pub block_size: u32,
    /// Master seed; LIG, noise, input and weight seeds are derived from it.
    pub seed: u64,
    pub sigma: f64,
    pub traces: usize,
    pub schedule: Vec<usize>,
    pub stability: usize,
    pub scenario: Scenario,
    pub sweep_n: Vec<usize>,
    pub sweep_b: Vec<u32>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kernel: String::new(),
            mode: Mode::Permuted,
            n: 16,
            block_size: 4,
            seed: 1,
            sigma: 1.0,
            traces: 5_000,
            schedule: DEFAULT_SCHEDULE.to_vec(),
            stability: DEFAULT_STABILITY,
            scenario: Scenario::WhiteBox,
            sweep_n: vec![16, 32, 48, 64],
            sweep_b: vec![4, 8],
            out: PathBuf::from("out"),
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| anyhow!("{key}: bad list element `{s}`")))
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.replace('_', "").parse().map_err(|_| anyhow!("{key}: bad number `{v}`"))
}

impl ExperimentConfig {
    /// Core under attack: sequential for baseline code, else PermuteV with `B`.
    pub fn core(&self) -> Core {
        match self.mode {
            Mode::Baseline => Core::Sequential,
            Mode::Permuted => Core::Permuted { block_size: self.block_size },
        }
    }

    pub fn set_core(&mut self, core: Core) {
        match core {
            Core::Sequential => self.mode = Mode::Baseline,
            Core::Permuted { block_size } => {
                self.mode = Mode::Permuted;
                self.block_size = block_size;
            }
        }
    }

    /// Canonical text form; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# permutev experiment config\n");
        let _ = writeln!(s, "kernel = {}", self.kernel);
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "N = {}", self.n);
        let _ = writeln!(s, "B = {}", self.block_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "traces = {}", self.traces);
        let _ = writeln!(s, "schedule = {}", list(&self.schedule));
        let _ = writeln!(s, "stability = {}", self.stability);
        let _ = writeln!(s, "scenario = {}", self.scenario);
        let _ = writeln!(s, "sweep_N = {}", list(&self.sweep_n));
        let _ = writeln!(s, "sweep_B = {}", list(&self.sweep_b));
        let _ = writeln!(s, "out = {}", self.out.display());
        s
    }

    /// Applies `key = value` lines over the defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected `key = value`", no + 1))?;
            c.set(key.trim(), value.trim()).with_context(|| format!("line {}", no + 1))?;
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "kernel" => self.kernel = v.to_string(),
            "mode" => self.mode = v.parse().map_err(|e: String| anyhow!(e))?,
            "N" => self.n = num(key, v)?,
            "B" => self.block_size = num(key, v)?,
            "seed" => self.seed = parse_seed(v).ok_or_else(|| anyhow!("seed: bad value `{v}`"))?,
            "sigma" => self.sigma = num(key, v)?,
            "traces" => self.traces = num(key, v)?,
            "schedule" => self.schedule = parse_list(key, v)?,
            "stability" => self.stability = num(key, v)?,
            "scenario" => self.scenario = v.parse().map_err(|e: String| anyhow!(e))?,
            "sweep_N" => self.sweep_n = parse_list(key, v)?,
            "sweep_B" => self.sweep_b = parse_list(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Overrides the seed from `PERMUTEV_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse_seed(&v).ok_or_else(|| anyhow!("{SEED_ENV}: bad seed `{v}`"))?;
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical text, leaving
    /// out the output directory so moved results keep their identity.
    pub fn hash(&self) -> String {
        let text = ExperimentConfig { out: PathBuf::new(), ..self.clone() }.to_text();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Provenance line placed at the top of every artifact (without the
    /// comment marker, which depends on the file type).
    pub fn provenance(&self, command: &str) -> String {
        format!("permutev {command} config={} seed={}", self.hash(), self.seed)
    }
}
