//! Periodic orthonormal discrete wavelet transforms (Haar and Daubechies-4).
//!
//! Coefficients are laid out coarse-to-fine: `[approx_J | detail_J | ... | detail_1]`,
//! so index 0 is the coarsest scaling coefficient. 2D transforms act on
//! column-major `side x side` buffers.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

/// Orthonormal Daubechies scaling filter with 4 vanishing moments (8 taps).
const DB4_LOWPASS: [f64; 8] = [
    0.2303778133088965,
    0.7148465705529157,
    0.6308807679298589,
    -0.027983769416859854,
    -0.18703481171909309,
    0.030841381835560764,
    0.0328830116668852,
    -0.010597401785069032,
];

const HAAR_LOWPASS: [f64; 2] = [FRAC_1_SQRT_2, FRAC_1_SQRT_2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    Haar,
    Db4,
}

impl Wavelet {
    pub fn lowpass(self) -> &'static [f64] {
        match self {
            Wavelet::Haar => &HAAR_LOWPASS,
            Wavelet::Db4 => &DB4_LOWPASS,
        }
    }

    /// Quadrature mirror highpass `g[k] = (-1)^k h[L-1-k]`.
    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let n = h.len();
        (0..n)
            .map(|k| {
                let v = h[n - 1 - k];
                if k % 2 == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect()
    }
}

/// Precomputed filters for one wavelet family.
#[derive(Debug, Clone)]
pub(crate) struct FilterBank {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl FilterBank {
    pub(crate) fn new(w: Wavelet) -> Self {
        Self {
            lo: w.lowpass().to_vec(),
            hi: w.highpass(),
        }
    }

    /// One analysis step on a strided, periodic signal of length `n`.
    fn analysis_step(&self, data: &mut [Complex64], offset: usize, stride: usize, n: usize, tmp: &mut Vec<Complex64>) {
        let half = n / 2;
        tmp.clear();
        tmp.resize(n, Complex64::new(0.0, 0.0));
        for i in 0..half {
            let mut a = Complex64::new(0.0, 0.0);
            let mut d = Complex64::new(0.0, 0.0);
            for (k, (&h, &g)) in self.lo.iter().zip(self.hi.iter()).enumerate() {
                let v = data[offset + ((2 * i + k) % n) * stride];
                a += v * h;
                d += v * g;
            }
            tmp[i] = a;
            tmp[half + i] = d;
        }
        for (i, v) in tmp.iter().enumerate() {
            data[offset + i * stride] = *v;
        }
    }

    /// Transpose of `analysis_step`.
    fn synthesis_step(&self, data: &mut [Complex64], offset: usize, stride: usize, n: usize, tmp: &mut Vec<Complex64>) {
        let half = n / 2;
        tmp.clear();
        tmp.resize(n, Complex64::new(0.0, 0.0));
        for i in 0..half {
            let a = data[offset + i * stride];
            let d = data[offset + (half + i) * stride];
            for (k, (&h, &g)) in self.lo.iter().zip(self.hi.iter()).enumerate() {
                tmp[(2 * i + k) % n] += a * h + d * g;
            }
        }
        for (i, v) in tmp.iter().enumerate() {
            data[offset + i * stride] = *v;
        }
    }

    pub(crate) fn analysis_1d(&self, data: &mut [Complex64], levels: usize) {
        let n = data.len();
        let mut tmp = Vec::with_capacity(n);
        for l in 0..levels {
            self.analysis_step(data, 0, 1, n >> l, &mut tmp);
        }
    }

    pub(crate) fn synthesis_1d(&self, data: &mut [Complex64], levels: usize) {
        let n = data.len();
        let mut tmp = Vec::with_capacity(n);
        for l in (0..levels).rev() {
            self.synthesis_step(data, 0, 1, n >> l, &mut tmp);
        }
    }

    /// Square multiresolution analysis: each level splits the current
    /// low-low block along columns and rows.
    pub(crate) fn analysis_2d_multilevel(&self, data: &mut [Complex64], side: usize, levels: usize) {
        let mut tmp = Vec::with_capacity(side);
        for l in 0..levels {
            let len = side >> l;
            for col in 0..len {
                self.analysis_step(data, col * side, 1, len, &mut tmp);
            }
            for row in 0..len {
                self.analysis_step(data, row, side, len, &mut tmp);
            }
        }
    }

    pub(crate) fn synthesis_2d_multilevel(&self, data: &mut [Complex64], side: usize, levels: usize) {
        let mut tmp = Vec::with_capacity(side);
        for l in (0..levels).rev() {
            let len = side >> l;
            for row in 0..len {
                self.synthesis_step(data, row, side, len, &mut tmp);
            }
            for col in 0..len {
                self.synthesis_step(data, col * side, 1, len, &mut tmp);
            }
        }
    }

    /// Separable transform `psi (x) psi`: full 1D multilevel along every
    /// column, then along every row.
    pub(crate) fn analysis_2d_tensor(&self, data: &mut [Complex64], side: usize, levels: usize) {
        let mut tmp = Vec::with_capacity(side);
        for col in 0..side {
            for l in 0..levels {
                self.analysis_step(data, col * side, 1, side >> l, &mut tmp);
            }
        }
        for row in 0..side {
            for l in 0..levels {
                self.analysis_step(data, row, side, side >> l, &mut tmp);
            }
        }
    }

    pub(crate) fn synthesis_2d_tensor(&self, data: &mut [Complex64], side: usize, levels: usize) {
        let mut tmp = Vec::with_capacity(side);
        for row in 0..side {
            for l in (0..levels).rev() {
                self.synthesis_step(data, row, side, side >> l, &mut tmp);
            }
        }
        for col in 0..side {
            for l in (0..levels).rev() {
                self.synthesis_step(data, col * side, 1, side >> l, &mut tmp);
            }
        }
    }
}
