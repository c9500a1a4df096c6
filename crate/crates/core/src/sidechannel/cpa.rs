use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{hamming_weight, Real, SideError};

/// Every nonzero 8-bit signed weight value, ascending. Zero is left out:
/// its hypothesis is the previous accumulator value, which leaks at full
/// strength and would tie with the true weight.
pub const CANDIDATES: [i8; 255] = {
    let mut out = [0i8; 255];
    let mut i = 0;
    while i < 255 {
        let v = i as i32 - 128;
        out[i] = if v >= 0 { (v + 1) as i8 } else { v as i8 };
        i += 1;
    }
    out
};
const N_CAND: usize = CANDIDATES.len();

/// Row of `c` in candidate order, `None` for 0.
pub fn candidate_index(c: i8) -> Option<usize> {
    match c {
        0 => None,
        c if c < 0 => Some((c as i32 + 128) as usize),
        c => Some((c as i32 + 127) as usize),
    }
}
/// Traces folded into the accumulator per GEMM call.
const CHUNK: usize = 4096;

/// Sample Pearson correlation; 0 when either side has zero variance.
pub fn pearson<S: Real>(x: &[S], y: &[S]) -> Result<S, SideError> {
    if x.len() != y.len() {
        return Err(SideError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(SideError::TooFewTraces(x.len()));
    }
    let n = S::from_usize(x.len()).unwrap();
    let mx = x.iter().copied().sum::<S>() / n;
    let my = y.iter().copied().sum::<S>() / n;
    let (mut sxy, mut sxx, mut syy) = (S::zero(), S::zero(), S::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy = sxy + da * db;
        sxx = sxx + da * da;
        syy = syy + db * db;
    }
    if sxx <= S::zero() || syy <= S::zero() {
        return Ok(S::zero());
    }
    Ok((sxy / (sxx * syy).sqrt()).max(-S::one()).min(S::one()))
}

/// Running sums for correlating many hypothesis rows against many sample
/// columns at once. Inputs are shifted by fixed references before summing
/// to keep the one-pass formula well conditioned.
#[derive(Debug, Clone)]
pub struct CpaAccumulator<S> {
    n: usize,
    sh: Array1<S>,
    shh: Array1<S>,
    sx: Array1<S>,
    sxx: Array1<S>,
    shx: Array2<S>,
    x_ref: Option<Array1<S>>,
}

impl<S: Real> CpaAccumulator<S> {
    const H_REF: f64 = 16.0;

    pub fn new(rows: usize, cols: usize) -> Self {
        CpaAccumulator {
            n: 0,
            sh: Array1::zeros(rows),
            shh: Array1::zeros(rows),
            sx: Array1::zeros(cols),
            sxx: Array1::zeros(cols),
            shx: Array2::zeros((rows, cols)),
            x_ref: None,
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Adds `m` traces: `h` is rows × m, `x` is m × cols.
    pub fn update(&mut self, h: ArrayView2<S>, x: ArrayView2<S>) {
        assert_eq!(h.ncols(), x.nrows(), "hypothesis and trace counts differ");
        if x.nrows() == 0 {
            return;
        }
        let x_ref = self.x_ref.get_or_insert_with(|| x.row(0).to_owned()).clone();
        let xc = &x - &x_ref;
        let hc = h.mapv(|v| v - S::from_f64(Self::H_REF).unwrap());
        self.sh += &hc.sum_axis(Axis(1));
        self.shh += &hc.mapv(|v| v * v).sum_axis(Axis(1));
        self.sx += &xc.sum_axis(Axis(0));
        self.sxx += &xc.mapv(|v| v * v).sum_axis(Axis(0));
        self.shx += &hc.dot(&xc);
        self.n += x.nrows();
    }

    /// Correlation of every hypothesis row with every column.
    pub fn correlations(&self) -> Array2<S> {
        let n = S::from_usize(self.n).unwrap();
        let tiny = S::epsilon() * S::from_f64(64.0).unwrap();
        let vh = self.shh.mapv(|v| v * n) - self.sh.mapv(|v| v * v);
        let vx = self.sxx.mapv(|v| v * n) - self.sx.mapv(|v| v * v);
        let mut out = Array2::zeros(self.shx.raw_dim());
        for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            if vh[r] <= tiny * self.shh[r] * n || self.n < 2 {
                continue;
            }
            for (c, v) in row.iter_mut().enumerate() {
                if vx[c] <= tiny * self.sxx[c] * n {
                    continue;
                }
                let num = self.shx[[r, c]] * n - self.sh[r] * self.sx[c];
                *v = num / (vh[r] * vx[c]).sqrt();
            }
        }
        out
    }

    /// Max absolute correlation per hypothesis row.
    pub fn scores(&self) -> Vec<S> {
        self.correlations()
            .axis_iter(Axis(0))
            .map(|row| row.iter().fold(S::zero(), |m, v| m.max(v.abs())))
            .collect()
    }
}

/// Scores for every candidate of one weight, in `CANDIDATES` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking<S> {
    pub scores: Vec<S>,
}

impl<S: Real> Ranking<S> {
    /// Score of a candidate; 0 is not a candidate and scores zero.
    pub fn score(&self, candidate: i8) -> S {
        candidate_index(candidate).map_or(S::zero(), |i| self.scores[i])
    }

    /// 1 + number of candidates scoring strictly higher; ties share a rank.
    /// A value outside the candidate set ranks last.
    pub fn rank_of(&self, candidate: i8) -> usize {
        if candidate_index(candidate).is_none() {
            return N_CAND + 1;
        }
        let s = self.score(candidate);
        1 + self.scores.iter().filter(|&&x| x > s).count()
    }

    /// Candidates by descending score, ties in ascending value.
    pub fn ordered(&self) -> Vec<(i8, S)> {
        let mut v: Vec<(i8, S)> =
            CANDIDATES.iter().copied().zip(self.scores.iter().copied()).collect();
        v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        v
    }

    pub fn best(&self) -> i8 {
        self.ordered()[0].0
    }
}

/// Σ_{j<k} A[t][j]·prefix[j] for every trace, wrapping at 32 bits.
pub(crate) fn prefix_sums(inputs: ArrayView2<u8>, prefix: &[i8]) -> Vec<i32> {
    inputs
        .axis_iter(Axis(0))
        .map(|row| {
            prefix.iter().zip(row.iter()).fold(0i32, |s, (&w, &a)| s.wrapping_add(a as i32 * w as i32))
        })
        .collect()
}

/// Hypothesis matrix (candidates × traces) for weight `k` given prefix sums:
/// HW(sum + A[k]·c) for each candidate c.
pub fn hypotheses<S: Real>(sums: &[i32], a_k: &[u8]) -> Array2<S> {
    let m = sums.len();
    let mut h = Array2::zeros((N_CAND, m));
    for (r, &c) in CANDIDATES.iter().enumerate() {
        for t in 0..m {
            let v = sums[t].wrapping_add(a_k[t] as i32 * c as i32) as u32;
            h[[r, t]] = S::from_u32(hamming_weight(v)).unwrap();
        }
    }
    h
}

/// Feeds traces `range` into an accumulator with one candidate block per prefix.
pub(crate) fn accumulate<S: Real>(
    acc: &mut CpaAccumulator<S>,
    traces: ArrayView2<S>,
    inputs: ArrayView2<u8>,
    k: usize,
    sums: &[Vec<i32>],
    range: Range<usize>,
    window: Range<usize>,
) {
    let mut t0 = range.start;
    while t0 < range.end {
        let t1 = (t0 + CHUNK).min(range.end);
        let a_k: Vec<u8> = inputs.slice(s![t0..t1, k]).to_vec();
        let blocks: Vec<Array2<S>> = sums.iter().map(|p| hypotheses(&p[t0..t1], &a_k)).collect();
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let h = ndarray::concatenate(Axis(0), &views).expect("same width");
        acc.update(h.view(), traces.slice(s![t0..t1, window.clone()]));
        t0 = t1;
    }
}

/// Correlation attack on weight `k` using the first `traces.nrows()` traces.
/// `prefix` holds the weights assumed for indices below `k`: the true ones
/// in the white-box setting, earlier recoveries in the black-box one.
pub fn cema_attack<S: Real>(
    traces: ArrayView2<S>,
    inputs: ArrayView2<u8>,
    k: usize,
    prefix: &[i8],
    window: Range<usize>,
) -> Result<Ranking<S>, SideError> {
    let n = inputs.ncols();
    if k >= n {
        return Err(SideError::WeightIndex { k, n });
    }
    if prefix.len() != k {
        return Err(SideError::Prefix { k, got: prefix.len() });
    }
    if traces.nrows() != inputs.nrows() {
        return Err(SideError::LengthMismatch(traces.nrows(), inputs.nrows()));
    }
    if traces.nrows() < 2 {
        return Err(SideError::TooFewTraces(traces.nrows()));
    }
    if window.end > traces.ncols() || window.is_empty() {
        return Err(SideError::Config(format!("window {window:?} outside {} samples", traces.ncols())));
    }
    let mut acc = CpaAccumulator::new(N_CAND, window.len());
    let sums = vec![prefix_sums(inputs, prefix)];
    accumulate(&mut acc, traces, inputs, k, &sums, 0..traces.nrows(), window);
    Ok(Ranking { scores: acc.scores() })
}
