use std::fmt;
use std::ops::Range;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::collect::{collect_traces, Core, LeakageModel, MacTarget, TraceSet};
use super::cpa::{accumulate, prefix_sums, CpaAccumulator, Ranking, CANDIDATES};
use super::{Real, SideError};
use crate::rng::mix_seed;

/// Trace counts at which attacks are evaluated (the budget is appended).
pub const DEFAULT_SCHEDULE: [usize; 9] = [100, 200, 500, 1_000, 2_000, 5_000, 10_000, 20_000, 50_000];
/// Consecutive schedule points a weight must stay rank 1.
pub const DEFAULT_STABILITY: usize = 2;
/// Black-box candidates kept when several prefixes score identically.
const MAX_TIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Earlier weights are known exactly.
    WhiteBox,
    /// Earlier weights are the attacker's own recoveries.
    BlackBox,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::WhiteBox => "white-box",
            Scenario::BlackBox => "black-box",
        })
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "white-box" | "whitebox" | "white" => Ok(Scenario::WhiteBox),
            "black-box" | "blackbox" | "black" => Ok(Scenario::BlackBox),
            _ => Err(format!("unknown scenario `{s}` (expected white-box or black-box)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignConfig {
    pub n: usize,
    pub core: Core,
    pub sigma: f64,
    /// Number of traces collected (the attack budget).
    pub traces: usize,
    pub seed: u64,
}

/// Secret weights, public inputs and the resulting leakage traces.
#[derive(Debug, Clone)]
pub struct Campaign<S> {
    pub config: CampaignConfig,
    pub target: MacTarget,
    pub weights: Vec<i8>,
    pub inputs: Array2<u8>,
    pub traces: TraceSet<S>,
    /// Sample columns covering the loop body.
    pub window: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightResult {
    pub index: usize,
    pub true_value: i8,
    /// Top candidate at the full budget.
    pub best: i8,
    /// Rank of the true value at the full budget.
    pub rank: usize,
    /// First schedule point from which the true value stays rank 1.
    pub min_traces: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub scenario: Scenario,
    pub core: Core,
    pub n: usize,
    pub sigma: f64,
    pub budget: usize,
    pub weights: Vec<WeightResult>,
}

impl AttackReport {
    pub fn recovered(&self) -> usize {
        self.weights.iter().filter(|w| w.min_traces.is_some()).count()
    }

    /// One row per metric, one column per weight; unrecovered weights are
    /// marked with ✗.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,core,N,sigma,budget,metric");
        for w in &self.weights {
            out += &format!(",w{}", w.index);
        }
        out.push('\n');
        let lead = format!("{},{},{},{},{}", self.scenario, self.core, self.n, self.sigma, self.budget);
        let rows: [(&str, Box<dyn Fn(&WeightResult) -> String>); 4] = [
            ("min_traces", Box::new(|w| w.min_traces.map_or("✗".into(), |v| v.to_string()))),
            ("true", Box::new(|w| w.true_value.to_string())),
            ("best", Box::new(|w| w.best.to_string())),
            ("rank", Box::new(|w| w.rank.to_string())),
        ];
        for (name, f) in rows {
            out += &format!("{lead},{name}");
            for w in &self.weights {
                out += &format!(",{}", f(w));
            }
            out.push('\n');
        }
        out
    }
}

/// Schedule points not above the budget, ending with the budget itself.
pub fn schedule_points(budget: usize, schedule: &[usize]) -> Vec<usize> {
    let mut pts: Vec<usize> = schedule.iter().copied().filter(|&p| p >= 2 && p < budget).collect();
    pts.sort_unstable();
    pts.dedup();
    if budget >= 2 {
        pts.push(budget);
    }
    pts
}

/// Start of the final run of rank-1 points, provided the run reaches the
/// last point (the budget) and spans at least `stability` points. A weight
/// that is rank 1 for a while and then loses it is not recovered.
pub fn recovery_point(ranks: &[(usize, usize)], stability: usize) -> Option<usize> {
    let run = ranks.iter().rev().take_while(|&&(_, r)| r == 1).count();
    (run > 0 && run >= stability.max(1)).then(|| ranks[ranks.len() - run].0)
}

impl<S: Real> Campaign<S> {
    /// Nonzero 8-bit signed weights.
    pub fn secret_weights(n: usize, seed: u64) -> Vec<i8> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x77));
        (0..n)
            .map(|_| loop {
                let w: i8 = rng.random();
                if w != 0 {
                    break w;
                }
            })
            .collect()
    }

    /// Uniform 8-bit inputs; row t is the same for any `count` > t.
    pub fn random_inputs(n: usize, count: usize, seed: u64) -> Array2<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x1a));
        Array2::from_shape_simple_fn((count, n), || rng.random())
    }

    pub fn generate(config: CampaignConfig) -> Result<Self, SideError> {
        let target = MacTarget::new(config.n, config.core)?;
        let weights = Self::secret_weights(config.n, config.seed);
        let inputs = Self::random_inputs(config.n, config.traces, config.seed);
        let model = LeakageModel::new(S::from_f64(config.sigma).ok_or(SideError::Sigma(config.sigma))?, mix_seed(config.seed, 0x5e))?;
        let traces = collect_traces(&target, &weights, inputs.view(), &model, mix_seed(config.seed, 0x11))?;
        let window = target.window();
        Ok(Campaign { config, target, weights, inputs, traces, window })
    }

    /// Ranking of weight `k` using the first `count` traces.
    pub fn rank(&self, k: usize, count: usize, prefix: &[i8]) -> Result<Ranking<S>, SideError> {
        let count = count.min(self.inputs.nrows());
        super::cema_attack(
            self.traces.samples.slice(s![..count, ..]),
            self.inputs.slice(s![..count, ..]),
            k,
            prefix,
            self.window.clone(),
        )
    }

    /// Ranks of the true weight `k` at each schedule point (white-box).
    fn white_ranks(&self, k: usize, points: &[usize]) -> (Vec<(usize, usize)>, Option<Ranking<S>>) {
        let mut acc = CpaAccumulator::new(CANDIDATES.len(), self.window.len());
        let sums = vec![prefix_sums(self.inputs.view(), &self.weights[..k])];
        let mut done = 0;
        let mut ranks = Vec::new();
        let mut last = None;
        for &p in points {
            accumulate(&mut acc, self.traces.samples.view(), self.inputs.view(), k, &sums, done..p, self.window.clone());
            done = p;
            let r = Ranking { scores: acc.scores() };
            ranks.push((p, r.rank_of(self.weights[k])));
            last = Some(r);
        }
        (ranks, last)
    }

    /// Black-box chain over all weights using the first `count` traces.
    /// Returns (rank of true value, best candidate) per weight.
    fn black_chain(&self, count: usize) -> Vec<(usize, i8)> {
        let inputs = self.inputs.slice(s![..count, ..]);
        let traces = self.traces.samples.slice(s![..count, ..]);
        let mut prefixes: Vec<Vec<i8>> = vec![Vec::new()];
        let mut out = Vec::with_capacity(self.config.n);
        for k in 0..self.config.n {
            let sums: Vec<Vec<i32>> = prefixes.iter().map(|p| prefix_sums(inputs, p)).collect();
            let mut acc = CpaAccumulator::new(CANDIDATES.len() * prefixes.len(), self.window.len());
            accumulate(&mut acc, traces, inputs, k, &sums, 0..count, self.window.clone());
            let rows = acc.scores();
            let per_cand: Vec<S> = (0..CANDIDATES.len())
                .map(|c| (0..prefixes.len()).map(|p| rows[p * CANDIDATES.len() + c]).fold(S::zero(), S::max))
                .collect();
            let ranking = Ranking { scores: per_cand };
            out.push((ranking.rank_of(self.weights[k]), ranking.best()));

            let top = rows.iter().copied().fold(S::zero(), S::max);
            let tol = top * S::from_f64(1e-9).unwrap();
            let mut next = Vec::new();
            for (p, prefix) in prefixes.iter().enumerate() {
                for (c, &cand) in CANDIDATES.iter().enumerate() {
                    if top - rows[p * CANDIDATES.len() + c] <= tol && next.len() < MAX_TIES {
                        let mut v = prefix.clone();
                        v.push(cand);
                        next.push(v);
                    }
                }
            }
            prefixes = next;
        }
        out
    }

    /// Runs the attack on every weight.
    pub fn attack(&self, scenario: Scenario, schedule: &[usize], stability: usize) -> Result<AttackReport, SideError> {
        let budget = self.inputs.nrows();
        let points = schedule_points(budget, schedule);
        let n = self.config.n;
        let weights: Vec<WeightResult> = if points.is_empty() {
            (0..n)
                .map(|k| WeightResult { index: k, true_value: self.weights[k], best: 0, rank: CANDIDATES.len(), min_traces: None })
                .collect()
        } else {
            match scenario {
                Scenario::WhiteBox => (0..n)
                    .into_par_iter()
                    .map(|k| {
                        let (ranks, last) = self.white_ranks(k, &points);
                        let last = last.expect("at least one point");
                        WeightResult {
                            index: k,
                            true_value: self.weights[k],
                            best: last.best(),
                            rank: last.rank_of(self.weights[k]),
                            min_traces: recovery_point(&ranks, stability),
                        }
                    })
                    .collect(),
                Scenario::BlackBox => {
                    let chains: Vec<Vec<(usize, i8)>> = points.par_iter().map(|&p| self.black_chain(p)).collect();
                    let final_chain = chains.last().expect("at least one point");
                    (0..n)
                        .map(|k| {
                            let ranks: Vec<(usize, usize)> = points.iter().zip(&chains).map(|(&p, c)| (p, c[k].0)).collect();
                            WeightResult {
                                index: k,
                                true_value: self.weights[k],
                                best: final_chain[k].1,
                                rank: final_chain[k].0,
                                min_traces: recovery_point(&ranks, stability),
                            }
                        })
                        .collect()
                }
            }
        };
        Ok(AttackReport { scenario, core: self.config.core, n, sigma: self.config.sigma, budget, weights })
    }

    /// Smallest stable rank-1 trace count for one weight.
    pub fn min_traces_to_recover(
        &self,
        k: usize,
        scenario: Scenario,
        schedule: &[usize],
        stability: usize,
    ) -> Result<Option<usize>, SideError> {
        if k >= self.config.n {
            return Err(SideError::WeightIndex { k, n: self.config.n });
        }
        let points = schedule_points(self.inputs.nrows(), schedule);
        let ranks: Vec<(usize, usize)> = match scenario {
            Scenario::WhiteBox => self.white_ranks(k, &points).0,
            Scenario::BlackBox => points.iter().map(|&p| (p, self.black_chain(p)[k].0)).collect(),
        };
        Ok(recovery_point(&ranks, stability))
    }
}

/// One cell of the N-scaling sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepRow {
    pub n: usize,
    pub core: Core,
    pub scenario: Scenario,
    pub budget: usize,
    pub recovered: usize,
}

/// Recovered-weight counts for every (N, core) pair, N-major order.
pub fn sweep_experiment<S: Real>(
    ns: &[usize],
    cores: &[Core],
    scenario: Scenario,
    budget: usize,
    sigma: f64,
    seed: u64,
    schedule: &[usize],
    stability: usize,
) -> Result<Vec<SweepRow>, SideError> {
    let mut rows = Vec::new();
    for &n in ns {
        for &core in cores {
            let c = Campaign::<S>::generate(CampaignConfig { n, core, sigma, traces: budget, seed })?;
            let report = c.attack(scenario, schedule, stability)?;
            rows.push(SweepRow { n, core, scenario, budget, recovered: report.recovered() });
        }
    }
    Ok(rows)
}
