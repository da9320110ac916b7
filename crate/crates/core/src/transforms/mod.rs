//! Fast unitary operators `A0 = Phi Psi*` built from a measurement transform
//! `Phi` and a sparsity transform `Psi`.
//!
//! `Forward` maps sparse coefficients to measurements, `Adjoint` maps
//! measurements back to coefficients. 2D operators act on column-major
//! vectorised `side x side` arrays, so `A0 = phi (x) phi` whenever both
//! factors are separable.

mod hadamard;
mod wavelet;

pub use hadamard::fwht;
pub use wavelet::Wavelet;

use crate::partition::BlockPartition;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;
use wavelet::FilterBank;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row index {index} out of range for K = {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("incompatible operator: {0}")]
    Incompatible(String),
    #[error("invalid decomposition depth {levels} for length {len}")]
    InvalidLevels { levels: usize, len: usize },
    #[error("cannot parse operator spec '{0}'")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measurement {
    Dft1d,
    Dft2d,
    Hadamard1d,
    Hadamard2d,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sparsity {
    Identity,
    Wavelet1d(Wavelet),
    /// Standard square multiresolution analysis.
    Multilevel2d(Wavelet),
    /// Separable `psi (x) psi`.
    Tensor2d(Wavelet),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Adjoint,
}

/// Declarative description of `A0`.
///
/// `side` is the signal length for 1D operators and the image side for 2D
/// operators. `levels = None` selects the default depth: full depth in 1D,
/// `log2(side) - 3` (at least 1) in 2D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub measurement: Measurement,
    pub sparsity: Sparsity,
    pub side: usize,
    pub levels: Option<usize>,
}

impl OperatorSpec {
    pub fn new(measurement: Measurement, sparsity: Sparsity, side: usize) -> Self {
        Self {
            measurement,
            sparsity,
            side,
            levels: None,
        }
    }

    pub fn with_levels(mut self, levels: usize) -> Self {
        self.levels = Some(levels);
        self
    }

    pub fn is_2d(&self) -> bool {
        matches!(self.measurement, Measurement::Dft2d | Measurement::Hadamard2d)
            || matches!(self.sparsity, Sparsity::Multilevel2d(_) | Sparsity::Tensor2d(_))
    }

    /// Number of coefficients `K`.
    pub fn len(&self) -> usize {
        if self.is_2d() {
            self.side * self.side
        } else {
            self.side
        }
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn resolved_levels(&self) -> usize {
        let log = self.side.max(1).trailing_zeros() as usize;
        match self.levels {
            Some(l) => l,
            None if self.is_2d() => log.saturating_sub(3).max(1),
            None => log.max(1),
        }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        if self.side < 2 || !self.side.is_power_of_two() {
            return Err(TransformError::NotPowerOfTwo(self.side));
        }
        let meas_1d = matches!(self.measurement, Measurement::Dft1d | Measurement::Hadamard1d);
        let meas_2d = matches!(self.measurement, Measurement::Dft2d | Measurement::Hadamard2d);
        let sp_1d = matches!(self.sparsity, Sparsity::Wavelet1d(_));
        let sp_2d = matches!(self.sparsity, Sparsity::Multilevel2d(_) | Sparsity::Tensor2d(_));
        if (meas_1d && sp_2d) || (meas_2d && sp_1d) {
            return Err(TransformError::Incompatible(format!(
                "{:?} measurement with {:?} sparsity",
                self.measurement, self.sparsity
            )));
        }
        if !matches!(self.sparsity, Sparsity::Identity) {
            let levels = self.resolved_levels();
            let max = self.side.trailing_zeros() as usize;
            if levels == 0 || levels > max {
                return Err(TransformError::InvalidLevels { levels, len: self.side });
            }
        }
        Ok(())
    }

    /// The 1D factor `phi` when `A0 = phi (x) phi`, i.e. separable
    /// measurement and sparsity transforms.
    pub fn kronecker_factor(&self) -> Option<OperatorSpec> {
        if !self.is_2d() {
            return None;
        }
        let measurement = match self.measurement {
            Measurement::Dft2d => Measurement::Dft1d,
            Measurement::Hadamard2d => Measurement::Hadamard1d,
            Measurement::Identity => Measurement::Identity,
            _ => return None,
        };
        let sparsity = match self.sparsity {
            Sparsity::Identity => Sparsity::Identity,
            Sparsity::Tensor2d(w) => Sparsity::Wavelet1d(w),
            _ => return None,
        };
        Some(OperatorSpec {
            measurement,
            sparsity,
            side: self.side,
            levels: Some(self.resolved_levels()),
        })
    }

    /// Signed frequency of storage index `i` along an axis of length `n`,
    /// in the range `-n/2+1 ..= n/2`.
    pub fn signed_frequency(i: usize, n: usize) -> i64 {
        let i = i as i64;
        let n = n as i64;
        if i > n / 2 {
            i - n
        } else {
            i
        }
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = match self.measurement {
            Measurement::Dft1d => "dft1d",
            Measurement::Dft2d => "dft2d",
            Measurement::Hadamard1d => "hadamard1d",
            Measurement::Hadamard2d => "hadamard2d",
            Measurement::Identity => "identity",
        };
        let s = match self.sparsity {
            Sparsity::Identity => "identity",
            Sparsity::Wavelet1d(Wavelet::Haar) => "haar1d",
            Sparsity::Wavelet1d(Wavelet::Db4) => "db4-1d",
            Sparsity::Multilevel2d(Wavelet::Haar) => "haar2d",
            Sparsity::Multilevel2d(Wavelet::Db4) => "db4-2d",
            Sparsity::Tensor2d(Wavelet::Haar) => "tensor-haar",
            Sparsity::Tensor2d(Wavelet::Db4) => "tensor-db4",
        };
        write!(f, "{m}/{s}/{}", self.side)?;
        if let Some(l) = self.levels {
            write!(f, "/{l}")?;
        }
        Ok(())
    }
}

/// Parses `measurement/sparsity/side[/levels]`, e.g. `dft2d/db4-2d/64/3`.
impl FromStr for OperatorSpec {
    type Err = TransformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TransformError::Parse(s.to_string());
        let parts: Vec<&str> = s.trim().split('/').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(err());
        }
        let measurement = match parts[0].to_ascii_lowercase().as_str() {
            "dft1d" => Measurement::Dft1d,
            "dft2d" => Measurement::Dft2d,
            "hadamard1d" => Measurement::Hadamard1d,
            "hadamard2d" => Measurement::Hadamard2d,
            "identity" => Measurement::Identity,
            _ => return Err(err()),
        };
        let sparsity = match parts[1].to_ascii_lowercase().as_str() {
            "identity" => Sparsity::Identity,
            "haar1d" => Sparsity::Wavelet1d(Wavelet::Haar),
            "db4-1d" => Sparsity::Wavelet1d(Wavelet::Db4),
            "haar2d" => Sparsity::Multilevel2d(Wavelet::Haar),
            "db4-2d" => Sparsity::Multilevel2d(Wavelet::Db4),
            "tensor-haar" => Sparsity::Tensor2d(Wavelet::Haar),
            "tensor-db4" => Sparsity::Tensor2d(Wavelet::Db4),
            _ => return Err(err()),
        };
        let side = parts[2].parse().map_err(|_| err())?;
        let levels = match parts.get(3) {
            Some(l) => Some(l.parse().map_err(|_| err())?),
            None => None,
        };
        let spec = OperatorSpec {
            measurement,
            sparsity,
            side,
            levels,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A row `a_k` of `A0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowVector {
    pub index: usize,
    pub entries: Vec<Complex64>,
}

impl RowVector {
    /// `max_l |a_{k,l}|^2`
    pub fn coherence(&self) -> f64 {
        self.entries.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max)
    }

    pub fn weighted_energy(&self, weights: &[f64]) -> f64 {
        self.entries.iter().zip(weights).map(|(a, w)| a.norm_sqr() * w).sum()
    }

    pub fn dot(&self, x: &[Complex64]) -> Complex64 {
        self.entries.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// A compiled operator holding FFT plans. Cheap to share across threads.
#[derive(Clone)]
pub struct Operator {
    spec: OperatorSpec,
    levels: usize,
    len: usize,
    fft_fwd: Option<Arc<dyn Fft<f64>>>,
    fft_inv: Option<Arc<dyn Fft<f64>>>,
    filters: Option<FilterBank>,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Operator").field("spec", &self.spec).finish()
    }
}

impl Operator {
    pub fn new(spec: OperatorSpec) -> Result<Self, TransformError> {
        spec.validate()?;
        let (fft_fwd, fft_inv) = match spec.measurement {
            Measurement::Dft1d | Measurement::Dft2d => {
                let mut planner = FftPlanner::new();
                (
                    Some(planner.plan_fft_forward(spec.side)),
                    Some(planner.plan_fft_inverse(spec.side)),
                )
            }
            _ => (None, None),
        };
        let filters = match spec.sparsity {
            Sparsity::Identity => None,
            Sparsity::Wavelet1d(w) | Sparsity::Multilevel2d(w) | Sparsity::Tensor2d(w) => Some(FilterBank::new(w)),
        };
        Ok(Self {
            spec,
            levels: spec.resolved_levels(),
            len: spec.len(),
            fft_fwd,
            fft_inv,
            filters,
        })
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn check_len(&self, got: usize) -> Result<(), TransformError> {
        if got != self.len {
            return Err(TransformError::DimensionMismatch {
                expected: self.len,
                got,
            });
        }
        Ok(())
    }

    pub fn apply(&self, dir: Direction, x: &[Complex64]) -> Result<Vec<Complex64>, TransformError> {
        let mut buf = x.to_vec();
        self.apply_in_place(dir, &mut buf)?;
        Ok(buf)
    }

    pub fn apply_in_place(&self, dir: Direction, buf: &mut [Complex64]) -> Result<(), TransformError> {
        self.check_len(buf.len())?;
        match dir {
            Direction::Forward => {
                self.synthesize(buf);
                self.measure(buf, false);
            }
            Direction::Adjoint => {
                self.measure(buf, true);
                self.analyze(buf);
            }
        }
        Ok(())
    }

    /// `Psi`: image -> coefficients.
    pub fn analyze(&self, buf: &mut [Complex64]) {
        let Some(bank) = &self.filters else { return };
        match self.spec.sparsity {
            Sparsity::Wavelet1d(_) => bank.analysis_1d(buf, self.levels),
            Sparsity::Multilevel2d(_) => bank.analysis_2d_multilevel(buf, self.spec.side, self.levels),
            Sparsity::Tensor2d(_) => bank.analysis_2d_tensor(buf, self.spec.side, self.levels),
            Sparsity::Identity => {}
        }
    }

    /// `Psi*`: coefficients -> image.
    pub fn synthesize(&self, buf: &mut [Complex64]) {
        let Some(bank) = &self.filters else { return };
        match self.spec.sparsity {
            Sparsity::Wavelet1d(_) => bank.synthesis_1d(buf, self.levels),
            Sparsity::Multilevel2d(_) => bank.synthesis_2d_multilevel(buf, self.spec.side, self.levels),
            Sparsity::Tensor2d(_) => bank.synthesis_2d_tensor(buf, self.spec.side, self.levels),
            Sparsity::Identity => {}
        }
    }

    /// `Phi` (or `Phi*` when `adjoint`) applied to an image buffer.
    fn measure(&self, buf: &mut [Complex64], adjoint: bool) {
        let side = self.spec.side;
        match self.spec.measurement {
            Measurement::Identity => {}
            Measurement::Hadamard1d => fwht(buf),
            Measurement::Hadamard2d => {
                buf.chunks_exact_mut(side).for_each(fwht);
                transpose_square(buf, side);
                buf.chunks_exact_mut(side).for_each(fwht);
                transpose_square(buf, side);
            }
            Measurement::Dft1d | Measurement::Dft2d => {
                let plan = if adjoint { &self.fft_inv } else { &self.fft_fwd };
                let plan = plan.as_ref().expect("fft plan for Fourier measurement");
                // process() runs the plan over every consecutive chunk of `side`
                plan.process(buf);
                let mut scale = 1.0 / (side as f64).sqrt();
                if self.spec.measurement == Measurement::Dft2d {
                    transpose_square(buf, side);
                    plan.process(buf);
                    transpose_square(buf, side);
                    scale /= (side as f64).sqrt();
                }
                for v in buf.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }

    /// `a_k = conj(A0* e_k)`, one transform per row.
    pub fn row(&self, k: usize) -> Result<RowVector, TransformError> {
        if k >= self.len {
            return Err(TransformError::IndexOutOfRange { index: k, len: self.len });
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        buf[k] = Complex64::new(1.0, 0.0);
        self.apply_in_place(Direction::Adjoint, &mut buf)?;
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        Ok(RowVector { index: k, entries: buf })
    }

    /// Column `A0 e_l`.
    pub fn column(&self, l: usize) -> Result<Vec<Complex64>, TransformError> {
        if l >= self.len {
            return Err(TransformError::IndexOutOfRange { index: l, len: self.len });
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        buf[l] = Complex64::new(1.0, 0.0);
        self.apply_in_place(Direction::Forward, &mut buf)?;
        Ok(buf)
    }

    pub fn block_rows(&self, partition: &BlockPartition, k: usize) -> Result<Vec<RowVector>, TransformError> {
        if partition.domain_len() != self.len {
            return Err(TransformError::DimensionMismatch {
                expected: self.len,
                got: partition.domain_len(),
            });
        }
        let block = partition.block(k).ok_or(TransformError::IndexOutOfRange {
            index: k,
            len: partition.num_blocks(),
        })?;
        block.iter().map(|&i| self.row(i)).collect()
    }
}

fn transpose_square(buf: &mut [Complex64], side: usize) {
    for i in 0..side {
        for j in (i + 1)..side {
            buf.swap(i * side + j, j * side + i);
        }
    }
}

/// One-shot `A0 x` or `A0* x`.
pub fn apply(spec: &OperatorSpec, dir: Direction, x: &[Complex64]) -> Result<Vec<Complex64>, TransformError> {
    Operator::new(*spec)?.apply(dir, x)
}

pub fn row(spec: &OperatorSpec, k: usize) -> Result<RowVector, TransformError> {
    Operator::new(*spec)?.row(k)
}

pub fn block_rows(spec: &OperatorSpec, partition: &BlockPartition, k: usize) -> Result<Vec<RowVector>, TransformError> {
    Operator::new(*spec)?.block_rows(partition, k)
}

/// Dense `K x K` matrix of `A0`, row-major. Only for small oracles.
pub fn dense_matrix(op: &Operator) -> Vec<Vec<Complex64>> {
    (0..op.len()).map(|k| op.row(k).expect("row in range").entries).collect()
}
