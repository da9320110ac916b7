//! Row-selection measurement operators and an equality-constrained basis
//! pursuit solver.
//!
//! The solver minimises a Huber-smoothed `l1` norm over the affine set
//! `{x : A x = y}` with accelerated projected gradient steps. Selected rows
//! of a unitary matrix satisfy `A A* = I`, so the projection onto the
//! constraint set is exactly `z - A*(A z - y)`. The smoothing parameter is
//! decreased geometrically over a few continuation stages, each warm-started
//! from the last.

use crate::density::Density;
use crate::mask::{Mask, MaskError};
use crate::partition::BlockPartition;
use crate::transforms::{Direction, Operator, TransformError};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("expected length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("solver needs orthonormal rows: {0}")]
    UnsupportedSolver(String),
    #[error("support Gram matrix is singular (smallest eigenvalue {0:e})")]
    SingularGram(f64),
    #[error("support of size {support} exceeds {rows} measurements")]
    Underdetermined { support: usize, rows: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scaling {
    Unscaled,
    /// Row `r` of the draw list is multiplied by `factors[r] = 1/sqrt(m pi_j)`.
    Theorem { factors: Vec<f64> },
}

/// `A = R A0`, optionally rescaled, where `R` selects the mask's rows
/// (repeated by multiplicity).
#[derive(Debug, Clone)]
pub struct MeasurementOp<'a> {
    op: &'a Operator,
    rows: Vec<usize>,
    scaling: Scaling,
    distinct: bool,
}

impl<'a> MeasurementOp<'a> {
    pub fn unscaled(op: &'a Operator, mask: &Mask) -> Result<Self, ReconError> {
        if mask.domain_len() != op.len() {
            return Err(ReconError::DimensionMismatch {
                expected: op.len(),
                got: mask.domain_len(),
            });
        }
        Ok(Self {
            op,
            rows: mask.draw_list(),
            scaling: Scaling::Unscaled,
            distinct: mask.is_distinct(),
        })
    }

    /// `A = m^{-1/2} (pi_{j_l}^{-1/2} B_{j_l})_l` from a mask over the blocks
    /// of `partition`, `m` counting repeated draws.
    pub fn theorem_scaled(
        op: &'a Operator,
        block_mask: &Mask,
        partition: &BlockPartition,
        density: &Density,
    ) -> Result<Self, ReconError> {
        if partition.domain_len() != op.len() {
            return Err(ReconError::DimensionMismatch {
                expected: op.len(),
                got: partition.domain_len(),
            });
        }
        if block_mask.domain_len() != partition.num_blocks() || density.len() != partition.num_blocks() {
            return Err(MaskError::PartitionMismatch {
                mask: block_mask.domain_len(),
                partition: partition.num_blocks(),
            }
            .into());
        }
        let m = block_mask.draws() as f64;
        let mut rows = vec![];
        let mut factors = vec![];
        for j in block_mask.draw_list() {
            let f = 1.0 / (m * density.values()[j]).sqrt();
            for &r in partition.block(j).expect("checked size") {
                rows.push(r);
                factors.push(f);
            }
        }
        Ok(Self {
            op,
            rows,
            scaling: Scaling::Theorem { factors },
            distinct: false,
        })
    }

    pub fn operator(&self) -> &Operator {
        self.op
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    pub fn num_measurements(&self) -> usize {
        self.rows.len()
    }

    pub fn domain_len(&self) -> usize {
        self.op.len()
    }

    /// True when `A A* = I` holds exactly.
    pub fn is_orthonormal(&self) -> bool {
        self.distinct && self.scaling == Scaling::Unscaled
    }

    pub fn measure(&self, x: &[Complex64]) -> Result<Vec<Complex64>, ReconError> {
        let full = self.op.apply(Direction::Forward, x)?;
        let mut y: Vec<Complex64> = self.rows.iter().map(|&r| full[r]).collect();
        if let Scaling::Theorem { factors } = &self.scaling {
            y.iter_mut().zip(factors).for_each(|(v, f)| *v *= *f);
        }
        Ok(y)
    }

    pub fn adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>, ReconError> {
        if y.len() != self.rows.len() {
            return Err(ReconError::DimensionMismatch {
                expected: self.rows.len(),
                got: y.len(),
            });
        }
        let mut buf = vec![ZERO; self.op.len()];
        match &self.scaling {
            Scaling::Unscaled => self.rows.iter().zip(y).for_each(|(&r, v)| buf[r] += v),
            Scaling::Theorem { factors } => {
                for ((&r, v), f) in self.rows.iter().zip(y).zip(factors) {
                    buf[r] += v * f;
                }
            }
        }
        self.op.apply_in_place(Direction::Adjoint, &mut buf)?;
        Ok(buf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub stages: usize,
    /// Final smoothing is `final_mu_factor * max|A* y|`.
    pub final_mu_factor: f64,
    /// First stage smoothing is `initial_mu_factor * max|A* y|`.
    pub initial_mu_factor: f64,
    pub tolerance: f64,
    pub max_inner_iterations: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            stages: 5,
            final_mu_factor: 1e-6,
            initial_mu_factor: 0.9,
            tolerance: 1e-7,
            max_inner_iterations: 3000,
        }
    }
}

impl SolverParams {
    fn validate(&self) -> Result<(), ReconError> {
        let ok = self.stages >= 1
            && self.final_mu_factor > 0.0
            && self.initial_mu_factor >= self.final_mu_factor
            && self.tolerance > 0.0
            && self.max_inner_iterations >= 1;
        if ok {
            Ok(())
        } else {
            Err(ReconError::UnsupportedSolver(format!("invalid solver parameters {self:?}")))
        }
    }

    /// Geometric schedule from the initial to the final smoothing.
    pub fn mu_schedule(&self, scale: f64) -> Vec<f64> {
        let hi = self.initial_mu_factor * scale;
        let lo = self.final_mu_factor * scale;
        if self.stages == 1 {
            return vec![lo];
        }
        let ratio = (lo / hi).powf(1.0 / (self.stages - 1) as f64);
        (0..self.stages)
            .map(|s| if s + 1 == self.stages { lo } else { hi * ratio.powi(s as i32) })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<Complex64>,
    pub converged: bool,
    pub iterations: usize,
    /// `||A x - y|| / ||y||`.
    pub residual: f64,
    /// `||x||_1` at the end of each stage.
    pub stage_objectives: Vec<f64>,
}

fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn l1(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).sum()
}

fn huber(v: &[Complex64], mu: f64) -> f64 {
    v.iter()
        .map(|z| {
            let a = z.norm();
            if a < mu {
                a * a / (2.0 * mu)
            } else {
                a - mu / 2.0
            }
        })
        .sum()
}

fn project(a: &MeasurementOp, z: &mut [Complex64], y: &[Complex64]) -> Result<(), ReconError> {
    let mut r = a.measure(z)?;
    r.iter_mut().zip(y).for_each(|(ri, yi)| *ri -= yi);
    let c = a.adjoint(&r)?;
    z.iter_mut().zip(&c).for_each(|(zi, ci)| *zi -= ci);
    Ok(())
}

/// Approximately solves `min ||x||_1 s.t. A x = y` for an orthonormal `A`.
pub fn solve_bp(y: &[Complex64], a: &MeasurementOp, params: &SolverParams) -> Result<Solution, ReconError> {
    params.validate()?;
    if !a.is_orthonormal() {
        return Err(ReconError::UnsupportedSolver(
            "operator must be an unscaled selection of distinct rows".into(),
        ));
    }
    if y.len() != a.num_measurements() {
        return Err(ReconError::DimensionMismatch {
            expected: a.num_measurements(),
            got: y.len(),
        });
    }
    let k = a.domain_len();
    let y_norm = norm2(y);
    if y_norm == 0.0 {
        return Ok(Solution {
            x: vec![ZERO; k],
            converged: true,
            iterations: 0,
            residual: 0.0,
            stage_objectives: vec![0.0; params.stages],
        });
    }
    let mut x = a.adjoint(y)?;
    let scale = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut total_iterations = 0;
    let mut converged = true;
    let mut stage_objectives = Vec::with_capacity(params.stages);
    let mut grad = vec![ZERO; k];
    for mu in params.mu_schedule(scale) {
        let mut v = x.clone();
        let mut t = 1.0f64;
        let mut f_prev = huber(&x, mu);
        let mut history: std::collections::VecDeque<f64> = std::collections::VecDeque::with_capacity(10);
        let mut stage_done = false;
        for _ in 0..params.max_inner_iterations {
            total_iterations += 1;
            for (g, vi) in grad.iter_mut().zip(&v) {
                *g = vi / vi.norm().max(mu);
            }
            let mut next: Vec<Complex64> = v.iter().zip(&grad).map(|(vi, gi)| vi - gi * mu).collect();
            project(a, &mut next, y)?;
            let f = huber(&next, mu);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if f > f_prev {
                // adaptive restart
                t = 1.0;
                v.clone_from(&next);
            } else {
                let beta = (t - 1.0) / t_next;
                for ((vi, ni), pi) in v.iter_mut().zip(&next).zip(&x) {
                    *vi = ni + (ni - pi) * beta;
                }
                t = t_next;
            }
            x = next;
            let mean = if history.is_empty() {
                f_prev
            } else {
                history.iter().sum::<f64>() / history.len() as f64
            };
            if history.len() == 10 {
                history.pop_front();
            }
            history.push_back(f);
            f_prev = f;
            if (f - mean).abs() <= params.tolerance * mean.abs().max(f64::MIN_POSITIVE) {
                stage_done = true;
                break;
            }
        }
        converged &= stage_done;
        stage_objectives.push(l1(&x));
    }
    let mut r = a.measure(&x)?;
    r.iter_mut().zip(y).for_each(|(ri, yi)| *ri -= yi);
    let residual = norm2(&r) / y_norm;
    if !converged {
        log::warn!("basis pursuit hit the iteration cap; relative residual {residual:.3e}");
    }
    Ok(Solution {
        x,
        converged,
        iterations: total_iterations,
        residual,
        stage_objectives,
    })
}

/// Columns `A e_i` for `i` in `support`, restricted to the mask rows.
fn support_columns(a: &MeasurementOp, support: &[usize]) -> Result<DMatrix<Complex64>, ReconError> {
    let m = a.num_measurements();
    let mut cols = DMatrix::<Complex64>::zeros(m, support.len());
    let mut e = vec![ZERO; a.domain_len()];
    for (c, &i) in support.iter().enumerate() {
        if i >= a.domain_len() {
            return Err(TransformError::IndexOutOfRange {
                index: i,
                len: a.domain_len(),
            }
            .into());
        }
        e[i] = Complex64::new(1.0, 0.0);
        let col = a.measure(&e)?;
        e[i] = ZERO;
        for (r, v) in col.into_iter().enumerate() {
            cols[(r, c)] = v;
        }
    }
    Ok(cols)
}

/// Dual certificate `||A_{I^c}* A_I (A_I* A_I)^{-1} sigma||_inf`; a value
/// below 1 certifies that the signal with support `I` and phases `sigma` is
/// the unique basis pursuit solution.
pub fn check_fuchs(a: &MeasurementOp, support: &[usize], signs: &[Complex64]) -> Result<f64, ReconError> {
    if support.len() != signs.len() {
        return Err(ReconError::DimensionMismatch {
            expected: support.len(),
            got: signs.len(),
        });
    }
    if support.len() > a.num_measurements() {
        return Err(ReconError::Underdetermined {
            support: support.len(),
            rows: a.num_measurements(),
        });
    }
    if support.is_empty() {
        return Ok(0.0);
    }
    let cols = support_columns(a, support)?;
    let gram = cols.adjoint() * &cols;
    let eig = SymmetricEigen::new(gram.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if !(lo > 1e-10 * hi.max(f64::MIN_POSITIVE)) {
        return Err(ReconError::SingularGram(lo));
    }
    let sigma = DVector::from_column_slice(signs);
    let coeffs = gram
        .cholesky()
        .ok_or(ReconError::SingularGram(lo))?
        .solve(&sigma);
    let v = &cols * coeffs;
    let w = a.adjoint(v.as_slice())?;
    let mut on_support = vec![false; a.domain_len()];
    support.iter().for_each(|&i| on_support[i] = true);
    Ok(w.iter()
        .zip(&on_support)
        .filter(|(_, &s)| !s)
        .map(|(z, _)| z.norm())
        .fold(0.0, f64::max))
}

/// Spectral norm of `A_I* A_I - I`.
pub fn support_gram_deviation(a: &MeasurementOp, support: &[usize]) -> Result<f64, ReconError> {
    let cols = support_columns(a, support)?;
    let mut gram = cols.adjoint() * &cols;
    for i in 0..support.len() {
        gram[(i, i)] -= Complex64::new(1.0, 0.0);
    }
    let eig = SymmetricEigen::new(gram);
    Ok(eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{draw_mask, MaskMode};
    use crate::density::{Density, DensityKind};
    use crate::transforms::{Measurement, OperatorSpec, Sparsity, Wavelet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_complex(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    fn uniform_mask(k: usize, m: usize, seed: u64) -> Mask {
        let d = Density::from_numerators(vec![1.0; k], DensityKind::Uniform).unwrap();
        draw_mask(&d, m, MaskMode::DistinctUntilBudget, seed).unwrap()
    }

    fn planted(k: usize, support: &[usize], signs: &[f64]) -> Vec<Complex64> {
        let mut x = vec![ZERO; k];
        for (&i, &s) in support.iter().zip(signs) {
            x[i] = Complex64::new(s, 0.0);
        }
        x
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let d: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm2(&d) / norm2(b)
    }

    #[test]
    fn full_mask_measurement_is_unitary() {
        let op = Operator::new(OperatorSpec::new(Measurement::Dft2d, Sparsity::Multilevel2d(Wavelet::Db4), 8)).unwrap();
        let a = MeasurementOp::unscaled(&op, &Mask::full(64)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_complex(&mut rng, 64);
        let y = a.measure(&x).unwrap();
        assert!((norm2(&y) - norm2(&x)).abs() < 1e-12);
        assert!(a.measure(&[ZERO; 64]).unwrap().iter().all(|v| *v == ZERO));
        let sol = solve_bp(&y, &a, &SolverParams::default()).unwrap();
        assert!(rel_err(&sol.x, &x) < 1e-8);
    }

    #[test]
    fn adjoint_consistency() {
        let op = Operator::new(OperatorSpec::new(Measurement::Hadamard2d, Sparsity::Multilevel2d(Wavelet::Haar), 8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mask = uniform_mask(64, 20, 3);
        let density = Density::from_numerators((1..=64).map(|i| i as f64).collect(), DensityKind::Uniform).unwrap();
        let iid = draw_mask(&density, 30, MaskMode::IidWithReplacement, 4).unwrap();
        let singles = BlockPartition::singletons(64);
        let ops = [
            MeasurementOp::unscaled(&op, &mask).unwrap(),
            MeasurementOp::theorem_scaled(&op, &iid, &singles, &density).unwrap(),
        ];
        for a in &ops {
            let x = random_complex(&mut rng, 64);
            let u = random_complex(&mut rng, a.num_measurements());
            let lhs: Complex64 = a.measure(&x).unwrap().iter().zip(&u).map(|(p, q)| p * q.conj()).sum();
            let rhs: Complex64 = x.iter().zip(&a.adjoint(&u).unwrap()).map(|(p, q)| p * q.conj()).sum();
            assert!((lhs - rhs).norm() < 1e-10);
        }
        assert!(ops[0].is_orthonormal());
        assert!(matches!(
            solve_bp(&vec![ZERO; 30], &ops[1], &SolverParams::default()),
            Err(ReconError::UnsupportedSolver(_))
        ));
    }

    #[test]
    fn projector_is_exact() {
        let op = Operator::new(OperatorSpec::new(Measurement::Dft1d, Sparsity::Wavelet1d(Wavelet::Db4), 128)).unwrap();
        let a = MeasurementOp::unscaled(&op, &uniform_mask(128, 40, 9)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_complex(&mut rng, 40);
        let back = a.measure(&a.adjoint(&u).unwrap()).unwrap();
        assert!(rel_err(&back, &u) < 1e-10);
    }

    #[test]
    fn zero_measurements_give_zero() {
        let op = Operator::new(OperatorSpec::new(Measurement::Dft1d, Sparsity::Identity, 64)).unwrap();
        let a = MeasurementOp::unscaled(&op, &uniform_mask(64, 16, 1)).unwrap();
        let sol = solve_bp(&[ZERO; 16], &a, &SolverParams::default()).unwrap();
        assert!(sol.x.iter().all(|v| *v == ZERO));
    }

    #[test]
    fn certificate_full_mask_is_zero() {
        let op = Operator::new(OperatorSpec::new(Measurement::Hadamard1d, Sparsity::Wavelet1d(Wavelet::Haar), 32)).unwrap();
        let a = MeasurementOp::unscaled(&op, &Mask::full(32)).unwrap();
        let sigma = [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0)];
        assert!(check_fuchs(&a, &[2, 7, 30], &sigma).unwrap() < 1e-12);
    }

    #[test]
    fn certificate_flags_undersampling() {
        let op = Operator::new(OperatorSpec::new(Measurement::Hadamard1d, Sparsity::Identity, 64)).unwrap();
        // Hadamard rows 0 and 1 cannot separate coordinates 0 and 1 from 2 and 3
        let mask = Mask::from_indices(64, &[0, 1], MaskMode::DistinctUntilBudget).unwrap();
        let a = MeasurementOp::unscaled(&op, &mask).unwrap();
        let sigma = [Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
        match check_fuchs(&a, &[0, 2], &sigma) {
            Err(ReconError::SingularGram(_)) => {}
            Ok(v) => assert!(v >= 1.0, "certificate {v}"),
            Err(e) => panic!("{e}"),
        }
        assert!(matches!(
            check_fuchs(&a, &[0, 1, 2], &[sigma[0]; 3]),
            Err(ReconError::Underdetermined { .. })
        ));
    }

    #[test]
    fn certified_instances_are_recovered() {
        let op = Operator::new(OperatorSpec::new(Measurement::Dft1d, Sparsity::Identity, 64)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut solved = 0;
        for trial in 0..40u64 {
            let mask = uniform_mask(64, 32, 100 + trial);
            let a = MeasurementOp::unscaled(&op, &mask).unwrap();
            let s = if trial % 2 == 0 { 2 } else { 4 };
            let mut support: Vec<usize> = rand::seq::index::sample(&mut rng, 64, s).into_vec();
            support.sort_unstable();
            let signs: Vec<f64> = (0..s).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let sigma: Vec<Complex64> = signs.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            let Ok(cert) = check_fuchs(&a, &support, &sigma) else { continue };
            if cert >= 0.99 {
                continue;
            }
            let x = planted(64, &support, &signs);
            let sol = solve_bp(&a.measure(&x).unwrap(), &a, &SolverParams::default()).unwrap();
            assert!(rel_err(&sol.x, &x) <= 1e-4, "trial {trial}: {}", rel_err(&sol.x, &x));
            assert!(sol.residual <= 1e-6);
            for w in sol.stage_objectives.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", sol.stage_objectives);
            }
            solved += 1;
        }
        assert!(solved >= 20);
    }

    #[test]
    fn scale_equivariance() {
        let op = Operator::new(OperatorSpec::new(Measurement::Hadamard1d, Sparsity::Wavelet1d(Wavelet::Haar), 64)).unwrap();
        let a = MeasurementOp::unscaled(&op, &uniform_mask(64, 24, 8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let y = random_complex(&mut rng, 24);
        let p = SolverParams::default();
        let base = solve_bp(&y, &a, &p).unwrap().x;
        for alpha in [0.01, 3.0, 250.0] {
            let ys: Vec<Complex64> = y.iter().map(|v| v * alpha).collect();
            let xs = solve_bp(&ys, &a, &p).unwrap().x;
            let scaled: Vec<Complex64> = base.iter().map(|v| v * alpha).collect();
            assert!(rel_err(&xs, &scaled) < 1e-6);
        }
    }

    #[test]
    fn theorem_scaling_is_isotropic_in_expectation_for_uniform() {
        // uniform singleton density: factors are sqrt(K/m)
        let op = Operator::new(OperatorSpec::new(Measurement::Dft1d, Sparsity::Identity, 16)).unwrap();
        let d = Density::from_numerators(vec![1.0; 16], DensityKind::Uniform).unwrap();
        let mask = draw_mask(&d, 8, MaskMode::IidWithReplacement, 3).unwrap();
        let a = MeasurementOp::theorem_scaled(&op, &mask, &BlockPartition::singletons(16), &d).unwrap();
        let Scaling::Theorem { factors } = a.scaling() else { panic!() };
        assert!(factors.iter().all(|f| (f - 2f64.sqrt()).abs() < 1e-15));
    }

    #[test]
    fn mu_schedule_is_geometric_and_decreasing() {
        let s = SolverParams::default().mu_schedule(2.0);
        assert_eq!(s.len(), 5);
        assert!((s[0] - 1.8).abs() < 1e-15 && (s[4] - 2e-6).abs() < 1e-18);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
    }
}
