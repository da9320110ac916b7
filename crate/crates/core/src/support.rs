//! Rejective (conditional Bernoulli) support distributions.
//!
//! A support `I` of size `S` has probability proportional to
//! `prod_{i in I} w_i * prod_{j not in I} (1 - w_j)`. Writing
//! `r_i = w_i / (1 - w_i)`, this is `prod_{i in I} r_i / e_S(r)` where `e_S`
//! is the elementary symmetric polynomial of degree `S`. Indices with
//! `w_i = 1` are forced into every support; indices with `w_i = 0` never
//! appear.

use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupportError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus vector {index} has length {got}, expected {expected}")]
    LengthMismatch { index: usize, expected: usize, got: usize },
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("all weights are zero: nothing survived thresholding")]
    AllZeroWeights,
    #[error("weight {index} = {value} outside [0, 1]")]
    InvalidWeight { index: usize, value: f64 },
    #[error("support size {size} infeasible: {forced} forced indices, {free} free indices")]
    Infeasible { size: usize, forced: usize, free: usize },
    #[error("target sparsity {target} exceeds {positive} positive weights")]
    InfeasibleTarget { target: f64, positive: usize },
    #[error("rejection sampler exceeded {0} attempts")]
    RejectionCap(u64),
}

/// Per-coefficient inclusion weights `w` with `S = sum(w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    values: Vec<f64>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SupportError> {
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(SupportError::InvalidWeight { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn uniform(len: usize, sparsity: f64) -> Result<Self, SupportError> {
        Self::new(vec![sparsity / len as f64; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `S = sum_i w_i`.
    pub fn sparsity(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Entry `W[row, col]` of the weight matrix with `vec(W) = w`
    /// (column-major).
    pub fn matrix_entry(&self, side: usize, row: usize, col: usize) -> f64 {
        self.values[row + side * col]
    }

    pub fn flipped(&self) -> Self {
        Self {
            values: flip(&self.values),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMode {
    Absolute,
    RelativeToMax,
}

/// Relative frequency with which each coefficient exceeds the threshold.
pub fn estimate_weights<V: AsRef<[f64]>>(
    corpus: &[V],
    threshold: f64,
    mode: ThresholdMode,
) -> Result<WeightVector, SupportError> {
    if corpus.is_empty() {
        return Err(SupportError::EmptyCorpus);
    }
    if !(threshold > 0.0) {
        return Err(SupportError::InvalidThreshold(threshold));
    }
    let len = corpus[0].as_ref().len();
    let mut counts = vec![0usize; len];
    for (index, v) in corpus.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != len {
            return Err(SupportError::LengthMismatch {
                index,
                expected: len,
                got: v.len(),
            });
        }
        let t = match mode {
            ThresholdMode::Absolute => threshold,
            ThresholdMode::RelativeToMax => threshold * v.iter().fold(0.0f64, |m, c| m.max(c.abs())),
        };
        for (c, x) in counts.iter_mut().zip(v) {
            if x.abs() > t {
                *c += 1;
            }
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(SupportError::AllZeroWeights);
    }
    let n = corpus.len() as f64;
    WeightVector::new(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Rescales `w` to sum to `target`, clamping at 1 and redistributing the
/// excess proportionally over the unclamped entries.
pub fn normalize_weights(w: &[f64], target: f64) -> Result<WeightVector, SupportError> {
    for (index, &value) in w.iter().enumerate() {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(SupportError::InvalidWeight { index, value });
        }
    }
    let positive = w.iter().filter(|&&v| v > 0.0).count();
    if positive == 0 {
        return Err(SupportError::AllZeroWeights);
    }
    if target > positive as f64 + 1e-12 {
        return Err(SupportError::InfeasibleTarget { target, positive });
    }
    let mut out = vec![0.0; w.len()];
    let mut clamped = vec![false; w.len()];
    loop {
        let fixed = clamped.iter().filter(|&&c| c).count() as f64;
        let free_mass: f64 = w.iter().zip(&clamped).filter(|(_, &c)| !c).map(|(v, _)| v).sum();
        let scale = (target - fixed) / free_mass;
        let mut changed = false;
        for i in 0..w.len() {
            if clamped[i] {
                out[i] = 1.0;
            } else {
                out[i] = w[i] * scale;
                if out[i] > 1.0 {
                    clamped[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    for v in out.iter_mut() {
        *v = v.min(1.0);
    }
    WeightVector::new(out)
}

/// Exact index reversal.
pub fn flip<T: Clone>(v: &[T]) -> Vec<T> {
    v.iter().rev().cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingMethod {
    Rejection,
    ExactSequential,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// The distribution over supports of a fixed size.
#[derive(Debug, Clone)]
pub struct SupportDistribution {
    weights: WeightVector,
    size: usize,
    forced: Vec<usize>,
    free: Vec<usize>,
    log_ratio: Vec<f64>,
    /// `suffix[j * (need + 1) + k] = ln e_k(r_{free[j..]})`.
    suffix: Vec<f64>,
    need: usize,
    rejection_cap: u64,
}

impl SupportDistribution {
    /// Support size defaults to `round(sum w)`.
    pub fn new(weights: WeightVector) -> Result<Self, SupportError> {
        let size = weights.sparsity().round() as usize;
        Self::with_size(weights, size)
    }

    pub fn with_size(weights: WeightVector, size: usize) -> Result<Self, SupportError> {
        let mut forced = vec![];
        let mut free = vec![];
        for (i, &w) in weights.as_slice().iter().enumerate() {
            if w >= 1.0 {
                forced.push(i);
            } else if w > 0.0 {
                free.push(i);
            }
        }
        if size < forced.len() || size - forced.len() > free.len() {
            return Err(SupportError::Infeasible {
                size,
                forced: forced.len(),
                free: free.len(),
            });
        }
        let need = size - forced.len();
        let log_ratio: Vec<f64> = free
            .iter()
            .map(|&i| {
                let w = weights.as_slice()[i];
                w.ln() - (-w).ln_1p()
            })
            .collect();
        let n = free.len();
        let width = need + 1;
        let mut suffix = vec![f64::NEG_INFINITY; (n + 1) * width];
        suffix[n * width] = 0.0;
        for j in (0..n).rev() {
            for k in 0..=need {
                let skip = suffix[(j + 1) * width + k];
                let take = if k > 0 {
                    log_ratio[j] + suffix[(j + 1) * width + k - 1]
                } else {
                    f64::NEG_INFINITY
                };
                suffix[j * width + k] = log_add_exp(skip, take);
            }
        }
        Ok(Self {
            weights,
            size,
            forced,
            free,
            log_ratio,
            suffix,
            need,
            rejection_cap: 1_000_000,
        })
    }

    pub fn with_rejection_cap(mut self, cap: u64) -> Self {
        self.rejection_cap = cap;
        self
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn log_e(&self, j: usize, k: usize) -> f64 {
        self.suffix[j * (self.need + 1) + k]
    }

    /// `ln c`, where `P(I) = c * prod_{I} w_i * prod_{not I} (1 - w_j)`.
    pub fn log_normalizer(&self) -> f64 {
        let log_free: f64 = self.free.iter().map(|&i| (-self.weights.as_slice()[i]).ln_1p()).sum();
        -(log_free + self.log_e(0, self.need))
    }

    pub fn normalizer(&self) -> f64 {
        self.log_normalizer().exp()
    }

    /// Probability of the support `I` (any order, no duplicates).
    pub fn support_prob(&self, support: &[usize]) -> f64 {
        if support.len() != self.size {
            return 0.0;
        }
        let w = self.weights.as_slice();
        let mut in_support = vec![false; w.len()];
        for &i in support {
            if i >= w.len() || in_support[i] {
                return 0.0;
            }
            in_support[i] = true;
        }
        if self.forced.iter().any(|&i| !in_support[i]) {
            return 0.0;
        }
        let mut log_p = -self.log_e(0, self.need);
        for &i in support {
            if w[i] <= 0.0 {
                return 0.0;
            }
            if w[i] < 1.0 {
                log_p += w[i].ln() - (-w[i]).ln_1p();
            }
        }
        log_p.exp()
    }

    /// Probability of including free index `j` given `k` more inclusions
    /// are still required among `free[j..]`.
    fn conditional_inclusion(&self, j: usize, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        (self.log_ratio[j] + self.log_e(j + 1, k - 1) - self.log_e(j, k)).exp().min(1.0)
    }

    /// Product of the sequential sampler's decision probabilities along the
    /// path that produces `support`.
    pub fn sequential_path_probability(&self, support: &[usize]) -> f64 {
        if support.len() != self.size {
            return 0.0;
        }
        let mut in_support = vec![false; self.len()];
        for &i in support {
            if i >= self.len() {
                return 0.0;
            }
            in_support[i] = true;
        }
        if self.forced.iter().any(|&i| !in_support[i]) {
            return 0.0;
        }
        let mut k = self.need;
        let mut p = 1.0;
        let mut taken = 0;
        for (j, &idx) in self.free.iter().enumerate() {
            let q = self.conditional_inclusion(j, k);
            if in_support[idx] {
                p *= q;
                k -= 1;
                taken += 1;
            } else {
                p *= 1.0 - q;
            }
        }
        if taken + self.forced.len() != self.size {
            return 0.0;
        }
        p
    }

    pub fn sample_support_with<R: Rng + ?Sized>(
        &self,
        method: SamplingMethod,
        rng: &mut R,
    ) -> Result<Vec<usize>, SupportError> {
        match method {
            SamplingMethod::ExactSequential => {
                let mut out = self.forced.clone();
                let mut k = self.need;
                for (j, &idx) in self.free.iter().enumerate() {
                    if k == 0 {
                        break;
                    }
                    if rng.random::<f64>() < self.conditional_inclusion(j, k) {
                        out.push(idx);
                        k -= 1;
                    }
                }
                out.sort_unstable();
                Ok(out)
            }
            SamplingMethod::Rejection => {
                let w = self.weights.as_slice();
                let mut out = Vec::with_capacity(self.size);
                for _ in 0..self.rejection_cap {
                    out.clear();
                    for (i, &wi) in w.iter().enumerate() {
                        if rng.random::<f64>() < wi {
                            out.push(i);
                        }
                    }
                    if out.len() == self.size {
                        return Ok(out);
                    }
                }
                Err(SupportError::RejectionCap(self.rejection_cap))
            }
        }
    }

    pub fn sample_support(&self, method: SamplingMethod, seed: u64) -> Result<Vec<usize>, SupportError> {
        self.sample_support_with(method, &mut seed::rng(seed))
    }

    pub fn draw_signal_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SparseSignal, SupportError> {
        let support = self.sample_support_with(SamplingMethod::ExactSequential, rng)?;
        let signs: Vec<f64> = support
            .iter()
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut values = vec![0.0; self.len()];
        for (&i, &s) in support.iter().zip(&signs) {
            values[i] = s;
        }
        Ok(SparseSignal { support, signs, values })
    }

    /// Support from the exact sampler, Rademacher signs, unit magnitudes.
    pub fn draw_signal(&self, seed: u64) -> Result<SparseSignal, SupportError> {
        self.draw_signal_with(&mut seed::rng(seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSignal {
    /// Sorted support.
    pub support: Vec<usize>,
    pub signs: Vec<f64>,
    pub values: Vec<f64>,
}
