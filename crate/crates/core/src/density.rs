//! Sampling densities over rows or blocks of `A0`.
//!
//! The adapted density weights block `k` by
//! `max{ ||B_k D_w B_k*||_2, ||B_k* B_k||_{inf,1} }`; for isolated rows the
//! first term reduces to `sum_l |a_{k,l}|^2 w_l` and the second to
//! `max_l |a_{k,l}|^2`.

use crate::partition::{BlockPartition, PartitionKind};
use crate::support::WeightVector;
use crate::transforms::{Measurement, Operator, OperatorSpec, RowVector, TransformError};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest block handled by the dense Gram path.
pub const MAX_BLOCK_ROWS: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("weights have length {got}, operator has K = {expected}")]
    WeightLength { expected: usize, got: usize },
    #[error("partition covers {got} rows, operator has K = {expected}")]
    PartitionMismatch { expected: usize, got: usize },
    #[error("closed form unavailable: {0}")]
    ClosedFormUnavailable(String),
    #[error("density kind not applicable: {0}")]
    KindMismatch(String),
    #[error("block of {0} rows exceeds the dense limit")]
    BlockTooLarge(usize),
    #[error("density entries must be finite and non-negative with positive sum")]
    Degenerate,
    #[error("density sums to {0}, expected 1")]
    Unnormalized(f64),
    #[error("length {0} is not dyadic")]
    NonDyadic(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensityKind {
    AdaptedIsolated,
    AdaptedBlocks,
    Uniform,
    Coherence,
    Polynomial,
    Loaded,
}

/// A probability vector `pi` with its normalizer `L = sum of numerators`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    values: Vec<f64>,
    normalizer: f64,
    kind: DensityKind,
}

impl Density {
    pub fn from_numerators(numerators: Vec<f64>, kind: DensityKind) -> Result<Self, DensityError> {
        if numerators.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DensityError::Degenerate);
        }
        // sequential summation keeps L reproducible
        let total: f64 = numerators.iter().sum();
        if !(total > 0.0) {
            return Err(DensityError::Degenerate);
        }
        Ok(Self {
            values: numerators.iter().map(|v| v / total).collect(),
            normalizer: total,
            kind,
        })
    }

    /// Wraps an already-normalized probability vector.
    pub fn from_probabilities(values: Vec<f64>) -> Result<Self, DensityError> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DensityError::Degenerate);
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DensityError::Unnormalized(total));
        }
        Ok(Self {
            values,
            normalizer: 1.0,
            kind: DensityKind::Loaded,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn kind(&self) -> DensityKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn support_size(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }
}

fn check_weights(op: &Operator, w: &WeightVector) -> Result<(), DensityError> {
    if w.len() != op.len() {
        return Err(DensityError::WeightLength {
            expected: op.len(),
            got: w.len(),
        });
    }
    Ok(())
}

fn check_partition(op: &Operator, p: &BlockPartition) -> Result<(), DensityError> {
    if p.domain_len() != op.len() {
        return Err(DensityError::PartitionMismatch {
            expected: op.len(),
            got: p.domain_len(),
        });
    }
    Ok(())
}

/// Which columns of `A0` enter the coherence term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Columns {
    All,
    /// Columns with `w_l = 0` are zeroed first; signals never live there.
    #[default]
    WeightSupport,
}

/// `pi_k ∝ max{ a_k D_w a_k*, ||a_k||_inf^2 }`, streaming one row at a time.
pub fn adapted_isolated(op: &Operator, w: &WeightVector) -> Result<Density, DensityError> {
    adapted_isolated_on(op, w, Columns::WeightSupport)
}

pub fn adapted_isolated_on(op: &Operator, w: &WeightVector, columns: Columns) -> Result<Density, DensityError> {
    check_weights(op, w)?;
    let weights = w.as_slice();
    let numerators = (0..op.len())
        .map(|k| {
            let row = op.row(k)?;
            let coherence = match columns {
                Columns::All => row.coherence(),
                Columns::WeightSupport => row
                    .entries
                    .iter()
                    .zip(weights)
                    .filter(|(_, &wl)| wl > 0.0)
                    .map(|(v, _)| v.norm_sqr())
                    .fold(0.0, f64::max),
            };
            Ok(row.weighted_energy(weights).max(coherence))
        })
        .collect::<Result<Vec<_>, TransformError>>()?;
    Density::from_numerators(numerators, DensityKind::AdaptedIsolated)
}

/// `||B D_w B*||_{2,2}` via a dense Hermitian eigensolve of the small Gram.
pub fn block_gram_opnorm(rows: &[RowVector], w: &WeightVector) -> Result<f64, DensityError> {
    let n = rows.len();
    if n == 0 {
        return Ok(0.0);
    }
    if n > MAX_BLOCK_ROWS {
        return Err(DensityError::BlockTooLarge(n));
    }
    let weights = w.as_slice();
    for r in rows {
        if r.entries.len() != weights.len() {
            return Err(DensityError::WeightLength {
                expected: r.entries.len(),
                got: weights.len(),
            });
        }
    }
    if n == 1 {
        return Ok(rows[0].weighted_energy(weights));
    }
    let active: Vec<(usize, f64)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| (i, v.sqrt()))
        .collect();
    let scaled: Vec<Vec<Complex64>> = rows
        .iter()
        .map(|r| active.iter().map(|&(i, s)| r.entries[i] * s).collect())
        .collect();
    let mut gram = DMatrix::<Complex64>::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let g: Complex64 = scaled[a].iter().zip(&scaled[b]).map(|(x, y)| x * y.conj()).sum();
            gram[(a, b)] = g;
            gram[(b, a)] = g.conj();
        }
    }
    let eig = SymmetricEigen::new(gram);
    Ok(eig.eigenvalues.iter().cloned().fold(0.0, f64::max))
}

/// `||B* B||_{inf,1}`, the largest entry modulus of the PSD matrix `B* B`.
/// By Cauchy-Schwarz it sits on the diagonal: `max_l sum_r |B_{r,l}|^2`.
pub fn block_inf1_norm(rows: &[RowVector]) -> f64 {
    let Some(first) = rows.first() else { return 0.0 };
    let mut diag = vec![0.0; first.entries.len()];
    for r in rows {
        for (d, v) in diag.iter_mut().zip(&r.entries) {
            *d += v.norm_sqr();
        }
    }
    diag.into_iter().fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockMethod {
    ClosedFormLines,
    Generic,
}

/// Both terms of the block numerator, per block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTerms {
    pub gram: Vec<f64>,
    pub inf1: Vec<f64>,
}

impl BlockTerms {
    pub fn numerators(&self) -> Vec<f64> {
        self.gram.iter().zip(&self.inf1).map(|(a, b)| a.max(*b)).collect()
    }
}

pub fn block_terms(
    op: &Operator,
    partition: &BlockPartition,
    w: &WeightVector,
    method: BlockMethod,
) -> Result<BlockTerms, DensityError> {
    check_weights(op, w)?;
    check_partition(op, partition)?;
    match method {
        BlockMethod::Generic => {
            let mut gram = Vec::with_capacity(partition.num_blocks());
            let mut inf1 = Vec::with_capacity(partition.num_blocks());
            for k in 0..partition.num_blocks() {
                let rows = op.block_rows(partition, k)?;
                gram.push(block_gram_opnorm(&rows, w)?);
                inf1.push(block_inf1_norm(&rows));
            }
            Ok(BlockTerms { gram, inf1 })
        }
        BlockMethod::ClosedFormLines => {
            if !partition.is_lines() {
                return Err(DensityError::ClosedFormUnavailable(format!(
                    "partition {} is not a line partition",
                    partition.kind()
                )));
            }
            let factor = op.spec().kronecker_factor().ok_or_else(|| {
                DensityError::ClosedFormUnavailable(format!("operator {} is not a Kronecker product", op.spec()))
            })?;
            let phi = Operator::new(factor)?;
            let side = op.spec().side;
            let vertical = partition.kind() == PartitionKind::VerticalLines;
            let mut gram = Vec::with_capacity(side);
            let mut inf1 = Vec::with_capacity(side);
            for k in 0..side {
                let p: Vec<f64> = phi.row(k)?.entries.iter().map(|v| v.norm_sqr()).collect();
                let best = (0..side)
                    .map(|l| {
                        (0..side)
                            .map(|i| {
                                let wv = if vertical {
                                    w.matrix_entry(side, l, i)
                                } else {
                                    w.matrix_entry(side, i, l)
                                };
                                p[i] * wv
                            })
                            .sum::<f64>()
                    })
                    .fold(0.0, f64::max);
                gram.push(best);
                inf1.push(p.iter().cloned().fold(0.0, f64::max));
            }
            Ok(BlockTerms { gram, inf1 })
        }
    }
}

pub fn adapted_blocks(
    op: &Operator,
    partition: &BlockPartition,
    w: &WeightVector,
    method: BlockMethod,
) -> Result<Density, DensityError> {
    let terms = block_terms(op, partition, w, method)?;
    Density::from_numerators(terms.numerators(), DensityKind::AdaptedBlocks)
}

/// Adapted density for any partition: the isolated formula for singletons,
/// the closed form for lines on Kronecker operators, the generic path
/// otherwise.
pub fn adapted(op: &Operator, partition: &BlockPartition, w: &WeightVector) -> Result<Density, DensityError> {
    if partition.kind() == PartitionKind::Singletons {
        return adapted_isolated(op, w);
    }
    let method = if partition.is_lines() && op.spec().kronecker_factor().is_some() {
        BlockMethod::ClosedFormLines
    } else {
        BlockMethod::Generic
    };
    adapted_blocks(op, partition, w, method)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    Uniform,
    Coherence,
    /// `1 / (k1^2 + k2^2)^exponent` over signed 2D frequencies.
    Polynomial(f64),
}

pub const DEFAULT_POLYNOMIAL_EXPONENT: f64 = 2.5;

/// Per-row polynomial decay weight; the DC cell takes the value at (1, 1).
pub fn polynomial_row_weight(spec: &OperatorSpec, row: usize, exponent: f64) -> f64 {
    let side = spec.side;
    let k1 = OperatorSpec::signed_frequency(row % side, side);
    let k2 = OperatorSpec::signed_frequency(row / side, side);
    let r2 = if k1 == 0 && k2 == 0 { 2.0 } else { (k1 * k1 + k2 * k2) as f64 };
    r2.powf(-exponent)
}

pub fn baseline_density(kind: Baseline, op: &Operator, partition: &BlockPartition) -> Result<Density, DensityError> {
    check_partition(op, partition)?;
    let m = partition.num_blocks();
    match kind {
        Baseline::Uniform => Density::from_numerators(vec![1.0; m], DensityKind::Uniform),
        Baseline::Coherence => {
            let nums = (0..m)
                .map(|k| Ok(block_inf1_norm(&op.block_rows(partition, k)?)))
                .collect::<Result<Vec<_>, TransformError>>()?;
            Density::from_numerators(nums, DensityKind::Coherence)
        }
        Baseline::Polynomial(exponent) => {
            if op.spec().measurement != Measurement::Dft2d {
                return Err(DensityError::KindMismatch(format!(
                    "polynomial density needs a 2D Fourier measurement, got {}",
                    op.spec()
                )));
            }
            let nums = partition
                .blocks()
                .iter()
                .map(|b| b.iter().map(|&r| polynomial_row_weight(op.spec(), r, exponent)).sum())
                .collect();
            Density::from_numerators(nums, DensityKind::Polynomial)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LevelsLayout {
    Dyadic1D,
    RowwiseDyadic2D,
}

/// Per-level `l1` masses of the weights over the dyadic bands
/// `Omega_0 = {0, 1}`, `Omega_j = [2^j, 2^{j+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelsSummary {
    pub masses: Vec<f64>,
    /// 2D only: `max_k ||W_{k, Omega_l}||_1`.
    pub row_max: Option<Vec<f64>>,
}

pub fn dyadic_bands(n: usize) -> Result<Vec<std::ops::Range<usize>>, DensityError> {
    if n < 2 || !n.is_power_of_two() {
        return Err(DensityError::NonDyadic(n));
    }
    let top = n.trailing_zeros() as usize;
    let mut bands = vec![0..2];
    for j in 1..top {
        bands.push((1 << j)..(1 << (j + 1)));
    }
    Ok(bands)
}

pub fn levels_summary(w: &WeightVector, layout: LevelsLayout) -> Result<LevelsSummary, DensityError> {
    let v = w.as_slice();
    match layout {
        LevelsLayout::Dyadic1D => {
            let bands = dyadic_bands(v.len())?;
            Ok(LevelsSummary {
                masses: bands.into_iter().map(|b| v[b].iter().sum()).collect(),
                row_max: None,
            })
        }
        LevelsLayout::RowwiseDyadic2D => {
            let side = (v.len() as f64).sqrt().round() as usize;
            if side * side != v.len() {
                return Err(DensityError::NonDyadic(v.len()));
            }
            let bands = dyadic_bands(side)?;
            let mut masses = vec![0.0; bands.len()];
            let mut row_max = vec![0.0f64; bands.len()];
            for (l, band) in bands.iter().enumerate() {
                for row in 0..side {
                    let s: f64 = band.clone().map(|col| w.matrix_entry(side, row, col)).sum();
                    masses[l] += s;
                    row_max[l] = row_max[l].max(s);
                }
            }
            Ok(LevelsSummary {
                masses,
                row_max: Some(row_max),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{Sparsity, Wavelet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op(m: Measurement, s: Sparsity, side: usize) -> Operator {
        Operator::new(OperatorSpec::new(m, s, side)).unwrap()
    }

    fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> WeightVector {
        WeightVector::new((0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn fourier_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = op(Measurement::Dft1d, Sparsity::Identity, 64);
        let d = adapted_isolated(&o, &random_weights(&mut rng, 64)).unwrap();
        assert!(d.values().iter().all(|v| (v - 1.0 / 64.0).abs() < 1e-12));
    }

    #[test]
    fn identity_operator_samples_the_support() {
        let o = op(Measurement::Identity, Sparsity::Identity, 4);
        let w = WeightVector::new(vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let d = adapted_isolated(&o, &w).unwrap();
        assert_eq!(d.values(), &[0.5, 0.5, 0.0, 0.0]);
        // every column kept: the coherence term is 1 on every row
        let d = adapted_isolated_on(&o, &w, Columns::All).unwrap();
        assert_eq!(d.values(), &[0.25; 4]);
    }

    #[test]
    fn two_by_two_hadamard_hand_example() {
        let o = op(Measurement::Hadamard1d, Sparsity::Identity, 2);
        let w = WeightVector::new(vec![0.6, 0.4]).unwrap();
        let d = adapted_isolated(&o, &w).unwrap();
        assert!((d.values()[0] - 0.5).abs() < 1e-15 && (d.values()[1] - 0.5).abs() < 1e-15);
        assert!((d.normalizer() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singleton_gram_is_weighted_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let o = op(Measurement::Hadamard2d, Sparsity::Multilevel2d(Wavelet::Haar), 8);
        let w = random_weights(&mut rng, 64);
        let mut total = 0.0;
        for k in 0..64 {
            let r = o.row(k).unwrap();
            let g = block_gram_opnorm(std::slice::from_ref(&r), &w).unwrap();
            assert!((g - r.weighted_energy(w.as_slice())).abs() < 1e-15);
            assert!(block_inf1_norm(std::slice::from_ref(&r)) <= r.coherence() + 1e-15);
            total += g;
        }
        assert!((total - w.sparsity()).abs() < 1e-10);
    }

    #[test]
    fn hadamard_vertical_line_hand_example() {
        // W = [[0.2, 0.4], [0.1, 0.3]], vec column-major
        let w = WeightVector::new(vec![0.2, 0.1, 0.4, 0.3]).unwrap();
        let o = op(Measurement::Hadamard2d, Sparsity::Identity, 2);
        let p = BlockPartition::vertical_lines(2);
        for method in [BlockMethod::Generic, BlockMethod::ClosedFormLines] {
            let t = block_terms(&o, &p, &w, method).unwrap();
            for k in 0..2 {
                assert!((t.gram[k] - 0.3).abs() < 1e-12, "{method:?} {:?}", t.gram);
                assert!((t.inf1[k] - 0.5).abs() < 1e-12);
            }
        }
        // horizontal lines maximize over columns of W: (0.2+0.1)/2, (0.4+0.3)/2
        let t = block_terms(&o, &BlockPartition::horizontal_lines(2), &w, BlockMethod::ClosedFormLines).unwrap();
        assert!((t.gram[0] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn inf1_matches_dense_entries() {
        let o = op(Measurement::Dft2d, Sparsity::Tensor2d(Wavelet::Db4), 4);
        let p = BlockPartition::squares(4, 2).unwrap();
        for k in 0..p.num_blocks() {
            let rows = o.block_rows(&p, k).unwrap();
            let mut dense_max = 0.0f64;
            for i in 0..16 {
                for j in 0..16 {
                    let v: Complex64 = rows.iter().map(|r| r.entries[i].conj() * r.entries[j]).sum();
                    dense_max = dense_max.max(v.norm());
                }
            }
            assert!((block_inf1_norm(&rows) - dense_max).abs() < 1e-14);
        }
        // rows selecting canonical coordinates give a projector
        let id = op(Measurement::Identity, Sparsity::Identity, 8);
        let rows: Vec<RowVector> = [1, 4, 6].iter().map(|&k| id.row(k).unwrap()).collect();
        assert_eq!(block_inf1_norm(&rows), 1.0);
    }

    #[test]
    fn closed_form_matches_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = op(Measurement::Dft2d, Sparsity::Tensor2d(Wavelet::Haar), 4);
        for p in [BlockPartition::vertical_lines(4), BlockPartition::horizontal_lines(4)] {
            let w = random_weights(&mut rng, 16);
            let a = block_terms(&o, &p, &w, BlockMethod::Generic).unwrap();
            let b = block_terms(&o, &p, &w, BlockMethod::ClosedFormLines).unwrap();
            for k in 0..4 {
                assert!((a.gram[k] - b.gram[k]).abs() < 1e-10);
                assert!((a.inf1[k] - b.inf1[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_weights_on_vertical_lines() {
        // every row of phi has unit norm, so the Gram term is (S/K) * 1
        let o = op(Measurement::Dft2d, Sparsity::Tensor2d(Wavelet::Db4), 16);
        let s = 8.0;
        let w = WeightVector::uniform(256, s).unwrap();
        let t = block_terms(&o, &BlockPartition::vertical_lines(16), &w, BlockMethod::ClosedFormLines).unwrap();
        for g in t.gram {
            assert!((g - s / 256.0).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_errors() {
        let o = op(Measurement::Dft2d, Sparsity::Multilevel2d(Wavelet::Haar), 8);
        let w = WeightVector::uniform(64, 2.0).unwrap();
        assert!(matches!(
            block_terms(&o, &BlockPartition::vertical_lines(8), &w, BlockMethod::ClosedFormLines),
            Err(DensityError::ClosedFormUnavailable(_))
        ));
        let o = op(Measurement::Dft2d, Sparsity::Tensor2d(Wavelet::Haar), 8);
        assert!(matches!(
            block_terms(&o, &BlockPartition::squares(8, 2).unwrap(), &w, BlockMethod::ClosedFormLines),
            Err(DensityError::ClosedFormUnavailable(_))
        ));
    }

    #[test]
    fn squares_density_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let o = op(Measurement::Dft2d, Sparsity::Multilevel2d(Wavelet::Db4), 16);
        let p = BlockPartition::squares(16, 4).unwrap();
        let d = adapted(&o, &p, &random_weights(&mut rng, 256)).unwrap();
        assert_eq!(d.len(), 16);
        assert!((d.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn baselines() {
        let o = op(Measurement::Dft1d, Sparsity::Identity, 32);
        let p = BlockPartition::singletons(32);
        let u = baseline_density(Baseline::Uniform, &o, &p).unwrap();
        assert!(u.values().iter().all(|&v| v == 1.0 / 32.0));
        let c = baseline_density(Baseline::Coherence, &o, &p).unwrap();
        assert!(c.values().iter().all(|&v| (v - 1.0 / 32.0).abs() < 1e-14));
        assert!(matches!(
            baseline_density(Baseline::Polynomial(2.5), &o, &p),
            Err(DensityError::KindMismatch(_))
        ));

        let o2 = op(Measurement::Dft2d, Sparsity::Identity, 4);
        let d = baseline_density(Baseline::Polynomial(2.5), &o2, &BlockPartition::singletons(16)).unwrap();
        let at = |i: usize, j: usize| d.values()[i + 4 * j];
        assert!((at(1, 1) / at(2, 2) - 32.0).abs() < 1e-12);
        assert_eq!(at(0, 0), at(1, 1));
        // signed frequencies: index 3 is -1
        assert_eq!(at(3, 3), at(1, 1));
    }

    #[test]
    fn loaded_density_validation() {
        assert!(Density::from_probabilities(vec![0.5, 0.5]).is_ok());
        assert!(matches!(Density::from_probabilities(vec![0.5, 0.6]), Err(DensityError::Unnormalized(_))));
        assert_eq!(Density::from_numerators(vec![0.0, 0.0], DensityKind::Uniform).unwrap_err(), DensityError::Degenerate);
    }

    #[test]
    fn levels_examples() {
        let k = 16;
        let s = 4.0;
        let w = WeightVector::uniform(k, s).unwrap();
        let l = levels_summary(&w, LevelsLayout::Dyadic1D).unwrap();
        assert_eq!(l.masses.len(), 4);
        for j in 1..4 {
            assert!((l.masses[j] - s / k as f64 * (1 << j) as f64).abs() < 1e-15);
        }
        assert!((l.masses.iter().sum::<f64>() - s).abs() < 1e-12);

        let mut v = vec![0.0; 16];
        for x in v.iter_mut().skip(8) {
            *x = 0.5;
        }
        let l = levels_summary(&WeightVector::new(v).unwrap(), LevelsLayout::Dyadic1D).unwrap();
        assert_eq!(l.masses, vec![0.0, 0.0, 0.0, 4.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_weights(&mut rng, 16);
        let l = levels_summary(&w, LevelsLayout::Dyadic1D).unwrap();
        assert!((l.masses.iter().sum::<f64>() - w.sparsity()).abs() < 1e-12);

        let l2 = levels_summary(&w, LevelsLayout::RowwiseDyadic2D).unwrap();
        let rm = l2.row_max.unwrap();
        assert!(rm.iter().zip(&l2.masses).all(|(r, m)| r <= m));
        assert!((l2.masses.iter().sum::<f64>() - w.sparsity()).abs() < 1e-12);

        assert!(matches!(
            levels_summary(&WeightVector::uniform(12, 1.0).unwrap(), LevelsLayout::Dyadic1D),
            Err(DensityError::NonDyadic(12))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn trace_identity(w in prop::collection::vec(0.0f64..1.0, 64)) {
                let o = op(Measurement::Dft2d, Sparsity::Multilevel2d(Wavelet::Db4), 8);
                let wv = WeightVector::new(w).unwrap();
                let total: f64 = (0..64).map(|k| o.row(k).unwrap().weighted_energy(wv.as_slice())).sum();
                prop_assert!((total - wv.sparsity()).abs() < 1e-8);
            }

            #[test]
            fn flip_equivariance_for_fourier(w in prop::collection::vec(0.0f64..1.0, 64)) {
                let o = op(Measurement::Dft2d, Sparsity::Identity, 8);
                let wv = WeightVector::new(w).unwrap();
                prop_assume!(wv.sparsity() > 0.0);
                let d = adapted_isolated(&o, &wv).unwrap();
                let df = adapted_isolated(&o, &wv.flipped()).unwrap();
                let reindexed = crate::support::flip(d.values());
                for (a, b) in df.values().iter().zip(&reindexed) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }

            #[test]
            fn numerators_monotone_in_weights(
                w in prop::collection::vec(0.0f64..0.9, 16),
                idx in 0usize..16,
                bump in 0.0f64..0.1,
            ) {
                let o = op(Measurement::Hadamard2d, Sparsity::Multilevel2d(Wavelet::Haar), 4);
                let mut w2 = w.clone();
                w2[idx] += bump;
                let a = WeightVector::new(w).unwrap();
                let b = WeightVector::new(w2).unwrap();
                for k in 0..16 {
                    let r = o.row(k).unwrap();
                    let na = r.weighted_energy(a.as_slice()).max(r.coherence());
                    let nb = r.weighted_energy(b.as_slice()).max(r.coherence());
                    prop_assert!(nb >= na);
                }
            }
        }
    }
}
