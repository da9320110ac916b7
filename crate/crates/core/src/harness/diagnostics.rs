use super::{ser_db, DensityChoice, ExperimentConfig, HarnessError, Prepared, REPORT_SCHEMA_VERSION};
use crate::density::{self, BlockMethod, Density};
use crate::mask::{self, MaskMode};
use crate::partition::{BlockPartition, PartitionKind};
use crate::recon::{self, MeasurementOp};
use crate::seed::{derive_seed, STREAM_MASK, STREAM_SUPPORT};
use crate::support::{SamplingMethod, SupportDistribution, WeightVector};
use crate::transforms::Operator;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Deviations at or above this count as a failed near-isometry.
pub const GRAM_TAIL_LEVEL: f64 = 0.5;
pub const MAX_DIAGNOSTIC_LEN: usize = 4096;

fn default_draws() -> usize {
    200
}

fn default_epsilon() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_draws")]
    pub draws: usize,
    /// Failure probability in the sampling thresholds.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Block draws per mask; empty means `{2S, 4S, 8S, 16S}`.
    #[serde(default)]
    pub measurements: Vec<usize>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            epsilon: default_epsilon(),
            measurements: vec![],
        }
    }
}

/// Monte-Carlo summary at one number of block draws `m`.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub measurements: usize,
    pub draws: usize,
    #[serde(serialize_with = "ser_db")]
    pub mu: f64,
    #[serde(serialize_with = "ser_db")]
    pub lambda_mean: f64,
    #[serde(serialize_with = "ser_db")]
    pub lambda_max: f64,
    pub gram_deviation_mean: f64,
    pub gram_deviation_max: f64,
    /// Fraction of draws with `||A_I* A_I - I|| >= 1/2`.
    pub gram_tail: f64,
}

/// Sufficient numbers of block draws: one driven by the `inf,1` block norms,
/// one by the weighted Gram norms.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Thresholds {
    pub epsilon: f64,
    #[serde(serialize_with = "ser_db")]
    pub coherence: f64,
    #[serde(serialize_with = "ser_db")]
    pub gram: f64,
}

fn check_size(op: &Operator, partition: &BlockPartition, density: &Density) -> Result<(), HarnessError> {
    if op.len() > MAX_DIAGNOSTIC_LEN {
        return Err(HarnessError::Config(format!(
            "diagnostics need K <= {MAX_DIAGNOSTIC_LEN}, got {}",
            op.len()
        )));
    }
    if partition.domain_len() != op.len() {
        return Err(HarnessError::ShapeMismatch(partition.domain_len(), op.len()));
    }
    if density.len() != partition.num_blocks() {
        return Err(HarnessError::ShapeMismatch(density.len(), partition.num_blocks()));
    }
    Ok(())
}

/// `max_k v_k / pi_k` over blocks; a block with positive `v` but zero
/// probability makes the ratio infinite.
fn max_ratio(values: &[f64], density: &Density) -> f64 {
    values
        .iter()
        .zip(density.values())
        .map(|(&v, &p)| match (v > 0.0, p > 0.0) {
            (_, true) => v / p,
            (true, false) => f64::INFINITY,
            (false, false) => 0.0,
        })
        .fold(0.0, f64::max)
}

fn block_method(op: &Operator, partition: &BlockPartition) -> BlockMethod {
    if partition.is_lines() && op.spec().kronecker_factor().is_some() {
        BlockMethod::ClosedFormLines
    } else {
        BlockMethod::Generic
    }
}

pub fn thresholds(
    op: &Operator,
    partition: &BlockPartition,
    density: &Density,
    weights: &WeightVector,
    epsilon: f64,
) -> Result<Thresholds, HarnessError> {
    check_size(op, partition, density)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(HarnessError::Config(format!("epsilon {epsilon} outside (0, 1)")));
    }
    let terms = density::block_terms(op, partition, weights, block_method(op, partition))?;
    let log = (partition.num_blocks() as f64 / epsilon).ln();
    Ok(Thresholds {
        epsilon,
        coherence: max_ratio(&terms.inf1, density) * log.powi(3),
        gram: max_ratio(&terms.gram, density) * log.powi(2),
    })
}

/// `max_k inf1(B_k) / (pi_k m)`.
pub fn mu(op: &Operator, partition: &BlockPartition, density: &Density, m: usize) -> Result<f64, HarnessError> {
    check_size(op, partition, density)?;
    let inf1 = (0..partition.num_blocks())
        .map(|k| Ok(density::block_inf1_norm(&op.block_rows(partition, k)?)))
        .collect::<Result<Vec<f64>, HarnessError>>()?;
    Ok(max_ratio(&inf1, density) / m as f64)
}

/// `max_k ||R_I* B_k* B_k R_I|| / (pi_k m)` for one support `I`.
pub fn lambda(
    op: &Operator,
    partition: &BlockPartition,
    density: &Density,
    support: &[usize],
    m: usize,
) -> Result<f64, HarnessError> {
    check_size(op, partition, density)?;
    let columns = support
        .iter()
        .map(|&i| op.column(i))
        .collect::<Result<Vec<_>, _>>()?;
    let norms: Vec<f64> = partition
        .blocks()
        .iter()
        .map(|rows| restricted_block_norm(&columns, rows))
        .collect();
    Ok(max_ratio(&norms, density) / m as f64)
}

/// Largest eigenvalue of `M M*` with `M[r][c] = columns[c][rows[r]]`.
fn restricted_block_norm(columns: &[Vec<Complex64>], rows: &[usize]) -> f64 {
    if columns.is_empty() {
        return 0.0;
    }
    if rows.len() == 1 {
        return columns.iter().map(|c| c[rows[0]].norm_sqr()).sum();
    }
    let m = DMatrix::from_fn(rows.len(), columns.len(), |r, c| columns[c][rows[r]]);
    let gram = if rows.len() <= columns.len() {
        &m * m.adjoint()
    } else {
        m.adjoint() * &m
    };
    SymmetricEigen::new(gram).eigenvalues.iter().cloned().fold(0.0, f64::max)
}

/// Samples `draws` supports from the rejective model on `weights` and as
/// many i.i.d. block masks of `m` draws from `density`, and summarises the
/// theorem quantities under the rescaled sensing operator.
///
/// Supports are seeded by `[STREAM_SUPPORT, draw]`, so the same supports are
/// reused across values of `m`; masks by `[STREAM_MASK, m, draw]`.
pub fn diagnostics(
    op: &Operator,
    partition: &BlockPartition,
    density: &Density,
    weights: &WeightVector,
    m: usize,
    draws: usize,
    seed: u64,
) -> Result<Diagnostics, HarnessError> {
    check_size(op, partition, density)?;
    if m == 0 || draws == 0 {
        return Err(HarnessError::Config("diagnostics need m >= 1 and draws >= 1".into()));
    }
    let model = SupportDistribution::new(weights.clone())?;
    let mut lambdas = Vec::with_capacity(draws);
    let mut deviations = Vec::with_capacity(draws);
    for d in 0..draws as u64 {
        let support = model.sample_support(SamplingMethod::ExactSequential, derive_seed(seed, &[STREAM_SUPPORT, d]))?;
        let blocks = mask::draw_mask(
            density,
            m,
            MaskMode::IidWithReplacement,
            derive_seed(seed, &[STREAM_MASK, m as u64, d]),
        )?;
        let a = MeasurementOp::theorem_scaled(op, &blocks, partition, density)?;
        deviations.push(recon::support_gram_deviation(&a, &support)?);
        lambdas.push(lambda(op, partition, density, &support, m)?);
    }
    let n = draws as f64;
    Ok(Diagnostics {
        measurements: m,
        draws,
        mu: mu(op, partition, density, m)?,
        lambda_mean: lambdas.iter().sum::<f64>() / n,
        lambda_max: lambdas.iter().cloned().fold(0.0, f64::max),
        gram_deviation_mean: deviations.iter().sum::<f64>() / n,
        gram_deviation_max: deviations.iter().cloned().fold(0.0, f64::max),
        gram_tail: deviations.iter().filter(|&&v| v >= GRAM_TAIL_LEVEL).count() as f64 / n,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityDiagnostics {
    pub density: String,
    pub thresholds: Thresholds,
    pub points: Vec<Diagnostics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub spec: String,
    pub partition: PartitionKind,
    pub sparsity: f64,
    pub master_seed: u64,
    pub settings: DiagnosticsConfig,
    pub densities: Vec<DensityDiagnostics>,
}

impl DiagnosticsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn for_density(&self, choice: DensityChoice) -> Option<&DensityDiagnostics> {
        let name = choice.to_string();
        self.densities.iter().find(|d| d.density == name)
    }
}

/// Diagnostics for every density of an experiment config, evaluated on the
/// ground-truth weights.
pub fn diagnose(cfg: &ExperimentConfig) -> Result<DiagnosticsReport, HarnessError> {
    let settings = cfg.diagnostics.clone().unwrap_or_default();
    let prep = Prepared::new(cfg)?;
    let s = prep.truth.sparsity().round().max(1.0) as usize;
    let ms = if settings.measurements.is_empty() {
        vec![2 * s, 4 * s, 8 * s, 16 * s]
    } else {
        settings.measurements.clone()
    };
    let mut densities = vec![];
    for (choice, density) in &prep.densities {
        let thresholds = thresholds(&prep.op, &prep.partition, density, &prep.truth, settings.epsilon)?;
        let points = ms
            .iter()
            .map(|&m| diagnostics(&prep.op, &prep.partition, density, &prep.truth, m, settings.draws, cfg.master_seed))
            .collect::<Result<Vec<_>, _>>()?;
        densities.push(DensityDiagnostics {
            density: choice.to_string(),
            thresholds,
            points,
        });
    }
    Ok(DiagnosticsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        spec: cfg.spec.to_string(),
        partition: cfg.partition,
        sparsity: prep.truth.sparsity(),
        master_seed: cfg.master_seed,
        settings,
        densities,
    })
}
