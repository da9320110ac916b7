//! End-to-end experiments: weights, densities, masks, reconstruction and
//! scoring, plus sampling diagnostics and phase-transition sweeps.
//!
//! Every random stream is seeded by `derive_seed(master, path)`:
//! `[STREAM_CORPUS]` for the synthetic training corpus, `[STREAM_SIGNAL, t]`
//! for the signal of trial `t` and `[STREAM_MASK, t, d]` for the mask drawn
//! from density `d` in that trial. Phase sweeps use
//! `[STREAM_MASK, g, t, d]` for grid point `g`.

mod diagnostics;
mod phase;

pub use diagnostics::{
    diagnose, diagnostics, lambda, mu, thresholds, DensityDiagnostics, Diagnostics, DiagnosticsConfig, DiagnosticsReport,
    Thresholds, GRAM_TAIL_LEVEL,
};
pub use phase::{phase_transition, PhaseConfig, PhaseRow, PhaseTable};

use crate::density::{self, Baseline, Density, DensityError, DEFAULT_POLYNOMIAL_EXPONENT};
use crate::io::{self, IoError};
use crate::mask::{self, MaskError, MaskMode};
use crate::partition::{BlockPartition, PartitionError, PartitionKind};
use crate::recon::{self, MeasurementOp, ReconError, SolverParams};
use crate::seed::{self, derive_seed, STREAM_CORPUS, STREAM_MASK, STREAM_SIGNAL};
use crate::support::{self, SamplingMethod, SupportDistribution, SupportError, ThresholdMode, WeightVector};
use crate::transforms::{Operator, OperatorSpec, Sparsity, TransformError};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize, Serializer};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const PSNR_CONVENTION: &str = "image domain, peak = max |reference|";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("peak must be positive, got {0}")]
    InvalidPeak(f64),
}

/// `10 log10(peak^2 / MSE)`; identical inputs give `+inf`.
pub fn psnr(reference: &[Complex64], reconstruction: &[Complex64], peak: Option<f64>) -> Result<f64, HarnessError> {
    if reference.len() != reconstruction.len() {
        return Err(HarnessError::ShapeMismatch(reference.len(), reconstruction.len()));
    }
    let peak = peak.unwrap_or_else(|| reference.iter().map(|z| z.norm()).fold(0.0, f64::max));
    if !(peak > 0.0) {
        return Err(HarnessError::InvalidPeak(peak));
    }
    let mse = reference
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / reference.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn relative_error(estimate: &[Complex64], truth: &[Complex64]) -> f64 {
    let num: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = truth.iter().map(|z| z.norm_sqr()).sum();
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// Coefficient vectors with supports from the rejective model, random signs
/// and magnitudes in `[floor, 2 floor)`.
pub fn synth_corpus(truth: &WeightVector, n: usize, floor: f64, seed: u64) -> Result<Vec<Vec<f64>>, SupportError> {
    let dist = SupportDistribution::new(truth.clone())?;
    let mut rng = seed::rng(seed);
    (0..n)
        .map(|_| {
            let support = dist.sample_support_with(SamplingMethod::ExactSequential, &mut rng)?;
            let mut v = vec![0.0; truth.len()];
            for i in support {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                v[i] = sign * floor * (1.0 + rng.random::<f64>());
            }
            Ok(v)
        })
        .collect()
}

/// Dyadic scale of coefficient `index`: the bit length of its 1D position,
/// or of the larger of its two grid coordinates in 2D.
pub fn coefficient_level(spec: &OperatorSpec, index: usize) -> usize {
    let bits = |v: usize| (usize::BITS - v.leading_zeros()) as usize;
    if spec.is_2d() {
        let side = spec.side;
        bits((index % side).max(index / side))
    } else {
        bits(index)
    }
}

/// Ground-truth weight profile `w*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Uniform {
        sparsity: f64,
    },
    /// `w_i ∝ 2^(-decay * level(i))`, scaled by `1 + asymmetry` below the
    /// grid diagonal, then normalised to `sparsity`.
    LevelDecay {
        sparsity: f64,
        decay: f64,
        #[serde(default)]
        asymmetry: f64,
    },
    File {
        path: PathBuf,
    },
}

impl Profile {
    pub fn weights(&self, spec: &OperatorSpec) -> Result<WeightVector, HarnessError> {
        let k = spec.len();
        match self {
            Profile::Uniform { sparsity } => Ok(WeightVector::uniform(k, *sparsity)?),
            Profile::LevelDecay {
                sparsity,
                decay,
                asymmetry,
            } => {
                let raw: Vec<f64> = (0..k)
                    .map(|i| {
                        let base = 2f64.powf(-decay * coefficient_level(spec, i) as f64);
                        let below = spec.is_2d() && i % spec.side > i / spec.side;
                        if below {
                            base * (1.0 + asymmetry)
                        } else {
                            base
                        }
                    })
                    .collect();
                Ok(support::normalize_weights(&raw, *sparsity)?)
            }
            Profile::File { path } => {
                let v = io::read_tensor(path)?.into_real()?;
                if v.len() != k {
                    return Err(HarnessError::ShapeMismatch(v.len(), k));
                }
                Ok(WeightVector::new(v)?)
            }
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Profile::File { path } = self {
            *path = base.join(&*path);
        }
    }
}

/// How the weights fed to the adapted density are obtained.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightEstimate {
    /// Use the ground-truth profile.
    #[default]
    Exact,
    /// Threshold frequencies over a synthetic corpus drawn from the profile.
    SyntheticCorpus {
        size: usize,
        floor: f64,
        threshold: f64,
        #[serde(default)]
        relative: bool,
    },
    /// Threshold frequencies over the sparsity coefficients of every `.pgm`
    /// image in `dir`.
    PgmCorpus {
        dir: PathBuf,
        threshold: f64,
        #[serde(default)]
        relative: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SignalSource {
    /// Rejective-model support, Rademacher signs, unit magnitudes.
    #[default]
    Model,
    /// The sparsity coefficients of a fixed image, shared by all trials.
    Image { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityChoice {
    Adapted,
    Uniform,
    Coherence,
    Polynomial(f64),
}

impl fmt::Display for DensityChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensityChoice::Adapted => write!(f, "adapted"),
            DensityChoice::Uniform => write!(f, "uniform"),
            DensityChoice::Coherence => write!(f, "coherence"),
            DensityChoice::Polynomial(e) if *e == DEFAULT_POLYNOMIAL_EXPONENT => write!(f, "polynomial"),
            DensityChoice::Polynomial(e) => write!(f, "polynomial:{e}"),
        }
    }
}

impl FromStr for DensityChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "adapted" => Ok(DensityChoice::Adapted),
            "uniform" => Ok(DensityChoice::Uniform),
            "coherence" => Ok(DensityChoice::Coherence),
            "polynomial" => Ok(DensityChoice::Polynomial(DEFAULT_POLYNOMIAL_EXPONENT)),
            other => other
                .strip_prefix("polynomial:")
                .and_then(|e| e.parse().ok())
                .map(DensityChoice::Polynomial)
                .ok_or_else(|| format!("unknown density kind '{s}'")),
        }
    }
}

impl Serialize for DensityChoice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DensityChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Computes the density of `choice` over the atoms of `partition`.
pub fn compute_density(
    choice: DensityChoice,
    op: &Operator,
    partition: &BlockPartition,
    weights: &WeightVector,
) -> Result<Density, DensityError> {
    match choice {
        DensityChoice::Adapted => density::adapted(op, partition, weights),
        DensityChoice::Uniform => density::baseline_density(Baseline::Uniform, op, partition),
        DensityChoice::Coherence => density::baseline_density(Baseline::Coherence, op, partition),
        DensityChoice::Polynomial(e) => density::baseline_density(Baseline::Polynomial(e), op, partition),
    }
}

fn default_partition() -> PartitionKind {
    PartitionKind::Singletons
}

fn default_mode() -> MaskMode {
    MaskMode::DistinctUntilBudget
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(with = "crate::serde_str")]
    pub spec: OperatorSpec,
    #[serde(with = "crate::serde_str", default = "default_partition")]
    pub partition: PartitionKind,
    pub truth: Profile,
    #[serde(default)]
    pub estimate: WeightEstimate,
    #[serde(default)]
    pub signal: SignalSource,
    pub densities: Vec<DensityChoice>,
    /// Fraction of atoms (rows or blocks) to measure.
    #[serde(default)]
    pub fraction: Option<f64>,
    /// Number of atoms to measure; overrides `fraction`.
    #[serde(default)]
    pub measurements: Option<usize>,
    #[serde(default = "default_mode")]
    pub mode: MaskMode,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub flip: bool,
    #[serde(default = "yes")]
    pub record_timings: bool,
    /// Directory for PGM panels (densities, first-trial masks and
    /// reconstructions); 2D operators only.
    #[serde(default)]
    pub figures: Option<PathBuf>,
    #[serde(default)]
    pub diagnostics: Option<DiagnosticsConfig>,
    #[serde(default)]
    pub phase: Option<PhaseConfig>,
}

impl ExperimentConfig {
    pub fn new(spec: OperatorSpec, truth: Profile, densities: Vec<DensityChoice>, trials: usize, master_seed: u64) -> Self {
        Self {
            schema_version: io::CONFIG_SCHEMA_VERSION,
            spec,
            partition: PartitionKind::Singletons,
            truth,
            estimate: WeightEstimate::Exact,
            signal: SignalSource::Model,
            densities,
            fraction: None,
            measurements: None,
            mode: MaskMode::DistinctUntilBudget,
            trials,
            master_seed,
            solver: SolverParams::default(),
            flip: false,
            record_timings: true,
            figures: None,
            diagnostics: None,
            phase: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.spec.validate()?;
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        if self.densities.is_empty() {
            return Err(HarnessError::Config("no density kinds given".into()));
        }
        if let Some(f) = self.fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(HarnessError::Config(format!("fraction {f} outside (0, 1]")));
            }
        }
        if self.fraction.is_none() && self.measurements.is_none() && self.phase.is_none() && self.diagnostics.is_none() {
            return Err(HarnessError::Config("set either fraction or measurements".into()));
        }
        if self.measurements == Some(0) {
            return Err(HarnessError::Config("measurements must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.truth.resolve_paths(base);
        match &mut self.estimate {
            WeightEstimate::PgmCorpus { dir, .. } => *dir = base.join(&*dir),
            WeightEstimate::Exact | WeightEstimate::SyntheticCorpus { .. } => {}
        }
        if let SignalSource::Image { path } = &mut self.signal {
            *path = base.join(&*path);
        }
        if let Some(f) = &mut self.figures {
            *f = base.join(&*f);
        }
    }

    pub fn budget(&self, atoms: usize) -> Result<usize, HarnessError> {
        match (self.measurements, self.fraction) {
            (Some(m), _) => Ok(m),
            (None, Some(f)) => Ok(mask::budget_from_fraction(f, atoms)?),
            (None, None) => Err(HarnessError::Config("set either fraction or measurements".into())),
        }
    }
}

/// Sparsity coefficients of every `.pgm` image in `dir`, sorted by name.
pub fn pgm_corpus(dir: &Path, op: &Operator) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(image_coefficients(op, &io::read_pgm(p)?)?.iter().map(|z| z.norm()).collect()))
        .collect()
}

/// `Psi` applied to a square image matching the operator grid.
pub fn image_coefficients(op: &Operator, image: &io::Image) -> Result<Vec<Complex64>, HarnessError> {
    let spec = op.spec();
    if !spec.is_2d() || image.width != spec.side || image.height != spec.side {
        return Err(HarnessError::Config(format!(
            "image {}x{} does not match operator {}",
            image.height, image.width, spec
        )));
    }
    let mut buf: Vec<Complex64> = image.to_column_major().into_iter().map(|v| Complex64::new(v, 0.0)).collect();
    op.analyze(&mut buf);
    Ok(buf)
}

pub fn image_of(op: &Operator, coefficients: &[Complex64]) -> Vec<Complex64> {
    let mut buf = coefficients.to_vec();
    op.synthesize(&mut buf);
    buf
}

/// Everything a trial needs, computed once per configuration.
pub struct Prepared {
    pub op: Operator,
    pub partition: BlockPartition,
    pub truth: WeightVector,
    pub estimate: WeightVector,
    pub densities: Vec<(DensityChoice, Density)>,
    support_model: Option<SupportDistribution>,
    fixed_signal: Option<Vec<Complex64>>,
    flip: bool,
    master_seed: u64,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let op = Operator::new(cfg.spec)?;
        let k = op.len();
        let partition = BlockPartition::from_kind(cfg.partition, k, cfg.spec.side)?;
        let truth = cfg.truth.weights(&cfg.spec)?;
        let estimate = match &cfg.estimate {
            WeightEstimate::Exact => truth.clone(),
            WeightEstimate::SyntheticCorpus {
                size,
                floor,
                threshold,
                relative,
            } => {
                let corpus = synth_corpus(&truth, *size, *floor, derive_seed(cfg.master_seed, &[STREAM_CORPUS]))?;
                support::estimate_weights(&corpus, *threshold, threshold_mode(*relative))?
            }
            WeightEstimate::PgmCorpus { dir, threshold, relative } => {
                let corpus = pgm_corpus(dir, &op)?;
                support::estimate_weights(&corpus, *threshold, threshold_mode(*relative))?
            }
        };
        let (truth, estimate) = if cfg.flip {
            (truth.flipped(), estimate.flipped())
        } else {
            (truth, estimate)
        };
        let densities = cfg
            .densities
            .iter()
            .map(|&c| Ok((c, compute_density(c, &op, &partition, &estimate)?)))
            .collect::<Result<Vec<_>, DensityError>>()?;
        let (support_model, fixed_signal) = match &cfg.signal {
            SignalSource::Model => (Some(SupportDistribution::new(truth.clone())?), None),
            SignalSource::Image { path } => {
                let x = image_coefficients(&op, &io::read_pgm(path)?)?;
                (None, Some(if cfg.flip { support::flip(&x) } else { x }))
            }
        };
        Ok(Self {
            op,
            partition,
            truth,
            estimate,
            densities,
            support_model,
            fixed_signal,
            flip: cfg.flip,
            master_seed: cfg.master_seed,
        })
    }

    /// Coefficient vector of trial `t`.
    pub fn signal(&self, trial: u64) -> Result<Vec<Complex64>, HarnessError> {
        if let Some(x) = &self.fixed_signal {
            return Ok(x.clone());
        }
        let model = self.support_model.as_ref().expect("model signal source");
        let s = model.draw_signal(derive_seed(self.master_seed, &[STREAM_SIGNAL, trial]))?;
        Ok(s.values.into_iter().map(|v| Complex64::new(v, 0.0)).collect())
    }

    pub fn is_flipped(&self) -> bool {
        self.flip
    }

    /// Draws a mask of `budget` atoms from density `d`, measures `x` and
    /// reconstructs it.
    pub fn reconstruct(
        &self,
        x: &[Complex64],
        d: usize,
        budget: usize,
        mode: MaskMode,
        mask_seed: u64,
        solver: &SolverParams,
    ) -> Result<Outcome, HarnessError> {
        let density = &self.densities[d].1;
        let atoms = mask::draw_mask(density, budget, mode, mask_seed)?;
        let (rows, fraction) = mask::expand_blocks(&atoms, &self.partition)?;
        let a = MeasurementOp::unscaled(&self.op, &rows)?;
        let y = a.measure(x)?;
        let sol = recon::solve_bp(&y, &a, solver)?;
        Ok(Outcome {
            atoms: atoms.indices().to_vec(),
            rows: rows.indices().to_vec(),
            measured_fraction: fraction,
            relative_error: relative_error(&sol.x, x),
            converged: sol.converged,
            iterations: sol.iterations,
            residual: sol.residual,
            x: sol.x,
        })
    }
}

fn threshold_mode(relative: bool) -> ThresholdMode {
    if relative {
        ThresholdMode::RelativeToMax
    } else {
        ThresholdMode::Absolute
    }
}

pub struct Outcome {
    pub atoms: Vec<usize>,
    pub rows: Vec<usize>,
    pub measured_fraction: f64,
    pub relative_error: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub x: Vec<Complex64>,
}

/// Writes `+inf` as a string and NaN as null.
pub(crate) fn ser_db<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if *v == f64::INFINITY {
        s.serialize_str("+inf")
    } else if v.is_nan() {
        s.serialize_none()
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DensitySummary {
    pub name: String,
    pub kind: density::DensityKind,
    pub atoms: usize,
    pub support_size: usize,
    pub normalizer: f64,
    pub max_probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KindResult {
    pub density: String,
    pub mask_seed: u64,
    /// Measured atoms (rows or blocks).
    pub mask: Vec<usize>,
    pub measured_fraction: f64,
    #[serde(serialize_with = "ser_db")]
    pub psnr: f64,
    pub relative_error: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub signal_seed: u64,
    pub results: Vec<KindResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KindSummary {
    pub density: String,
    #[serde(serialize_with = "ser_db")]
    pub mean_psnr: f64,
    #[serde(serialize_with = "ser_db")]
    pub sd_psnr: f64,
    pub mean_relative_error: f64,
    pub converged_trials: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub densities_seconds: f64,
    pub trials_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub psnr_convention: String,
    pub mask_mode: MaskMode,
    pub budget: usize,
    pub truth_sparsity: f64,
    pub estimate_sparsity: f64,
    pub densities: Vec<DensitySummary>,
    pub trials: Vec<TrialRecord>,
    pub summary: Vec<KindSummary>,
    pub timings: Option<Timings>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn summary_for(&self, choice: DensityChoice) -> Option<&KindSummary> {
        let name = choice.to_string();
        self.summary.iter().find(|s| s.density == name)
    }
}

/// Mean and sample standard deviation; infinite entries give an infinite
/// mean and an undefined (NaN) deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() || values.len() < 2 {
        return (mean, if mean.is_finite() { 0.0 } else { f64::NAN });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let start = Instant::now();
    let prep = Prepared::new(cfg)?;
    let densities_seconds = start.elapsed().as_secs_f64();
    let budget = cfg.budget(prep.partition.num_blocks())?;
    let mut trials = Vec::with_capacity(cfg.trials);
    let trial_start = Instant::now();
    for t in 0..cfg.trials as u64 {
        let x = prep.signal(t)?;
        let reference = image_of(&prep.op, &x);
        let peak = reference.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut results = Vec::with_capacity(prep.densities.len());
        for (d, (choice, _)) in prep.densities.iter().enumerate() {
            let mask_seed = derive_seed(cfg.master_seed, &[STREAM_MASK, t, d as u64]);
            let out = prep.reconstruct(&x, d, budget, cfg.mode, mask_seed, &cfg.solver)?;
            let rec = image_of(&prep.op, &out.x);
            let score = if peak > 0.0 {
                psnr(&reference, &rec, Some(peak))?
            } else {
                f64::NAN
            };
            if t == 0 {
                if let Some(dir) = &cfg.figures {
                    write_trial_figures(dir, &prep, *choice, &out, &rec)?;
                }
            }
            results.push(KindResult {
                density: choice.to_string(),
                mask_seed,
                mask: out.atoms,
                measured_fraction: out.measured_fraction,
                psnr: score,
                relative_error: out.relative_error,
                converged: out.converged,
                iterations: out.iterations,
                residual: out.residual,
            });
        }
        if t == 0 {
            if let Some(dir) = &cfg.figures {
                write_panel(dir, "reference", &prep, &reference)?;
            }
        }
        trials.push(TrialRecord {
            trial: t,
            signal_seed: derive_seed(cfg.master_seed, &[STREAM_SIGNAL, t]),
            results,
        });
    }
    if let Some(dir) = &cfg.figures {
        write_density_figures(dir, &prep)?;
    }
    let summary = prep
        .densities
        .iter()
        .enumerate()
        .map(|(d, (choice, _))| {
            let psnrs: Vec<f64> = trials.iter().map(|t| t.results[d].psnr).collect();
            let errs: Vec<f64> = trials.iter().map(|t| t.results[d].relative_error).collect();
            let (mean_psnr, sd_psnr) = mean_sd(&psnrs);
            KindSummary {
                density: choice.to_string(),
                mean_psnr,
                sd_psnr,
                mean_relative_error: mean_sd(&errs).0,
                converged_trials: trials.iter().filter(|t| t.results[d].converged).count(),
            }
        })
        .collect();
    let densities = prep
        .densities
        .iter()
        .map(|(c, d)| DensitySummary {
            name: c.to_string(),
            kind: d.kind(),
            atoms: d.len(),
            support_size: d.support_size(),
            normalizer: d.normalizer(),
            max_probability: d.values().iter().cloned().fold(0.0, f64::max),
        })
        .collect();
    let timings = cfg.record_timings.then(|| Timings {
        densities_seconds,
        trials_seconds: trial_start.elapsed().as_secs_f64(),
    });
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        psnr_convention: PSNR_CONVENTION.into(),
        mask_mode: cfg.mode,
        budget,
        truth_sparsity: prep.truth.sparsity(),
        estimate_sparsity: prep.estimate.sparsity(),
        densities,
        trials,
        summary,
        timings,
    })
}

/// Per-row view of a density over blocks: each row carries its block's
/// probability shared equally among the block's rows.
pub fn density_per_row(density: &Density, partition: &BlockPartition) -> Vec<f64> {
    let mut rows = vec![0.0; partition.domain_len()];
    for (b, block) in partition.blocks().iter().enumerate() {
        let share = density.values()[b] / block.len() as f64;
        block.iter().for_each(|&r| rows[r] = share);
    }
    rows
}

fn panel_side(prep: &Prepared) -> Option<usize> {
    prep.op.spec().is_2d().then_some(prep.op.spec().side)
}

fn write_panel(dir: &Path, name: &str, prep: &Prepared, values: &[Complex64]) -> Result<(), HarnessError> {
    let Some(side) = panel_side(prep) else { return Ok(()) };
    let mags: Vec<f64> = values.iter().map(|z| z.norm()).collect();
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    let scaled: Vec<f64> = mags.iter().map(|m| if peak > 0.0 { m / peak } else { 0.0 }).collect();
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    io::write_pgm(&dir.join(format!("{name}.pgm")), &io::Image::from_column_major(side, side, &scaled))?;
    Ok(())
}

fn write_trial_figures(
    dir: &Path,
    prep: &Prepared,
    choice: DensityChoice,
    out: &Outcome,
    rec: &[Complex64],
) -> Result<(), HarnessError> {
    let mut mask = vec![Complex64::new(0.0, 0.0); prep.op.len()];
    out.rows.iter().for_each(|&r| mask[r] = Complex64::new(1.0, 0.0));
    write_panel(dir, &format!("mask-{choice}"), prep, &mask)?;
    write_panel(dir, &format!("reconstruction-{choice}"), prep, rec)
}

fn write_density_figures(dir: &Path, prep: &Prepared) -> Result<(), HarnessError> {
    let Some(side) = panel_side(prep) else { return Ok(()) };
    for (choice, d) in &prep.densities {
        let rows = density_per_row(d, &prep.partition);
        io::write_pgm(&dir.join(format!("density-{choice}.pgm")), &io::log_image(side, side, &rows, 6.0))?;
    }
    io::write_pgm(
        &dir.join("weights.pgm"),
        &io::Image::from_column_major(side, side, prep.estimate.as_slice()),
    )?;
    Ok(())
}

/// Sparsity transforms whose coefficient layout is two dimensional.
pub fn is_grid_sparsity(s: Sparsity) -> bool {
    matches!(s, Sparsity::Multilevel2d(_) | Sparsity::Tensor2d(_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{Measurement, Wavelet};

    fn c(v: &[f64]) -> Vec<Complex64> {
        v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
    }

    #[test]
    fn psnr_examples() {
        let r = c(&[1.0, 0.0]);
        assert_eq!(psnr(&r, &r, None).unwrap(), f64::INFINITY);
        // MSE 1 with peak 1
        assert!(psnr(&c(&[0.0, 0.0]), &c(&[1.0, 1.0]), Some(1.0)).unwrap().abs() < 1e-12);
        // MSE 1e-3
        let e = 1e-3f64.sqrt();
        assert!((psnr(&c(&[0.0]), &c(&[e]), Some(1.0)).unwrap() - 30.0).abs() < 1e-9);
        assert!(matches!(psnr(&r, &c(&[1.0]), None), Err(HarnessError::ShapeMismatch(2, 1))));
        assert!(matches!(psnr(&c(&[0.0]), &c(&[1.0]), None), Err(HarnessError::InvalidPeak(_))));
    }

    #[test]
    fn psnr_symmetric_with_fixed_peak() {
        let a = c(&[0.3, -1.0, 2.0]);
        let b = c(&[0.1, -0.7, 2.5]);
        assert_eq!(psnr(&a, &b, Some(2.0)).unwrap(), psnr(&b, &a, Some(2.0)).unwrap());
    }

    #[test]
    fn corpus_from_indicator_weights() {
        let w = WeightVector::new(vec![0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let corpus = synth_corpus(&w, 20, 0.5, 1).unwrap();
        for v in &corpus {
            let support: Vec<usize> = (0..5).filter(|&i| v[i] != 0.0).collect();
            assert_eq!(support, vec![1, 3, 4]);
            assert!(v.iter().filter(|x| **x != 0.0).all(|x| x.abs() >= 0.5));
        }
    }

    #[test]
    fn density_choice_strings() {
        for s in ["adapted", "uniform", "coherence", "polynomial", "polynomial:3"] {
            assert_eq!(s.parse::<DensityChoice>().unwrap().to_string(), s);
        }
        assert!("bogus".parse::<DensityChoice>().is_err());
    }

    #[test]
    fn levels_of_coefficients() {
        let s1 = OperatorSpec::new(Measurement::Hadamard1d, Sparsity::Wavelet1d(Wavelet::Haar), 16);
        let got: Vec<usize> = (0..8).map(|i| coefficient_level(&s1, i)).collect();
        assert_eq!(got, vec![0, 1, 2, 2, 3, 3, 3, 3]);
        let s2 = OperatorSpec::new(Measurement::Hadamard2d, Sparsity::Multilevel2d(Wavelet::Haar), 8);
        assert_eq!(coefficient_level(&s2, 0), 0);
        assert_eq!(coefficient_level(&s2, 1 + 8 * 3), 2);
        assert_eq!(coefficient_level(&s2, 63), 3);
    }

    #[test]
    fn level_decay_profile() {
        let spec = OperatorSpec::new(Measurement::Dft2d, Sparsity::Multilevel2d(Wavelet::Db4), 16);
        let w = Profile::LevelDecay {
            sparsity: 8.0,
            decay: 2.0,
            asymmetry: 1.0,
        }
        .weights(&spec)
        .unwrap();
        assert!((w.sparsity() - 8.0).abs() < 1e-9);
        // below the diagonal carries twice the weight of the mirrored cell
        let below = 5 + 16 * 2;
        let above = 2 + 16 * 5;
        assert!((w.as_slice()[below] - 2.0 * w.as_slice()[above]).abs() < 1e-12);
    }

    #[test]
    fn full_sampling_gives_infinite_or_huge_psnr() {
        let spec = OperatorSpec::new(Measurement::Hadamard2d, Sparsity::Multilevel2d(Wavelet::Haar), 8);
        let mut cfg = ExperimentConfig::new(
            spec,
            Profile::Uniform { sparsity: 4.0 },
            vec![DensityChoice::Adapted, DensityChoice::Uniform, DensityChoice::Coherence],
            1,
            9,
        );
        cfg.fraction = Some(1.0);
        let report = run_experiment(&cfg).unwrap();
        for s in &report.summary {
            assert_eq!(s.mean_psnr, f64::INFINITY, "{}", s.density);
        }
        assert!(report.to_json().contains("\"+inf\""));
    }

    #[test]
    fn reports_are_reproducible() {
        let spec = OperatorSpec::new(Measurement::Dft2d, Sparsity::Multilevel2d(Wavelet::Haar), 16);
        let mut cfg = ExperimentConfig::new(
            spec,
            Profile::LevelDecay {
                sparsity: 6.0,
                decay: 2.0,
                asymmetry: 0.0,
            },
            vec![DensityChoice::Adapted, DensityChoice::Polynomial(2.5)],
            2,
            77,
        );
        cfg.fraction = Some(0.3);
        cfg.record_timings = false;
        let a = run_experiment(&cfg).unwrap().to_json();
        let b = run_experiment(&cfg).unwrap().to_json();
        assert_eq!(a, b);
        cfg.master_seed = 78;
        assert_ne!(a, run_experiment(&cfg).unwrap().to_json());
    }

    #[test]
    fn mean_sd_conventions() {
        assert_eq!(mean_sd(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
        let (m, s) = mean_sd(&[f64::INFINITY, 1.0]);
        assert_eq!(m, f64::INFINITY);
        assert!(s.is_nan());
    }
}
