use avds::density::Density;
use avds::harness::{self, DensityChoice, HarnessError};
use avds::io::{self, IoError, Tensor};
use avds::mask::{self, MaskMode};
use avds::partition::{BlockPartition, PartitionKind};
use avds::recon::{self, MeasurementOp, SolverParams};
use avds::support::{self, ThresholdMode, WeightVector};
use avds::transforms::{Operator, OperatorSpec};
use avds::Complex64;
use clap::{Args, Parser, Subcommand};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "avds", version, about = "Adapted variable density subsampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate weights from a directory of PGM images.
    EstimateWeights {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        transform: OperatorSpec,
        #[arg(long)]
        threshold: f64,
        /// Threshold relative to each image's largest coefficient.
        #[arg(long)]
        relative: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a sampling density over rows or blocks.
    Density {
        #[arg(long)]
        spec: OperatorSpec,
        /// Required for the adapted density.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        kind: DensityChoice,
        #[arg(long, default_value = "singletons")]
        partition: PartitionKind,
        #[arg(long)]
        out: PathBuf,
        /// Also render the per-row density on a log scale (2D specs only).
        #[arg(long)]
        png_log: Option<PathBuf>,
    },
    /// Draw a mask from a density file.
    Mask(MaskArgs),
    /// Solve basis pursuit for measurements on a row mask.
    Reconstruct {
        #[arg(long)]
        spec: OperatorSpec,
        #[arg(long)]
        mask: PathBuf,
        /// Measurements, one complex value per mask row in index order.
        #[arg(long, conflicts_with = "image", required_unless_present = "image")]
        input: Option<PathBuf>,
        /// Measure this image first.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Solver parameters as TOML.
        #[arg(long)]
        solver: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write the reconstructed image magnitude as PGM (2D specs only).
        #[arg(long)]
        out_image: Option<PathBuf>,
    },
    /// Run a full experiment and write its JSON report.
    Experiment(ConfigArgs),
    /// Gram deviation tails and sampling thresholds for the densities of a config.
    Diagnose(ConfigArgs),
    /// Success rate against the number of measurements.
    Phase(ConfigArgs),
    /// Reverse the order of a tensor's entries.
    Flip {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long)]
    density: PathBuf,
    #[arg(long, conflicts_with = "m", required_unless_present = "m")]
    fraction: Option<f64>,
    /// Number of atoms (rows or blocks) to draw.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value = "distinct")]
    mode: MaskMode,
    #[arg(long)]
    seed: u64,
    /// With `--partition`, expand a block mask to rows.
    #[arg(long, requires = "partition")]
    spec: Option<OperatorSpec>,
    #[arg(long, requires = "spec")]
    partition: Option<PartitionKind>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure reported as a single machine-readable class on stdout and
/// details on stderr.
struct Failure {
    class: &'static str,
    detail: String,
}

impl Failure {
    fn new(class: &'static str, detail: impl Display) -> Self {
        Self {
            class,
            detail: detail.to_string(),
        }
    }
}

fn harness_class(e: &HarnessError) -> &'static str {
    match e {
        HarnessError::Transform(_) => "transform-error",
        HarnessError::Partition(_) => "partition-error",
        HarnessError::Support(_) => "support-error",
        HarnessError::Density(_) => "density-error",
        HarnessError::Mask(_) => "mask-error",
        HarnessError::Recon(_) => "recon-error",
        HarnessError::Io(e) => io_class(e),
        HarnessError::Config(_) => "config-error",
        HarnessError::ShapeMismatch(..) | HarnessError::InvalidPeak(_) => "shape-error",
    }
}

fn io_class(e: &IoError) -> &'static str {
    match e {
        IoError::Io { .. } => "io-error",
        IoError::Pgm { .. } => "pgm-error",
        IoError::Config(_) => "config-error",
        _ => "format-error",
    }
}

macro_rules! failure_from {
    ($($ty:ty => $class:expr),* $(,)?) => {
        $(impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Failure::new($class, e)
            }
        })*
    };
}

failure_from! {
    avds::transforms::TransformError => "transform-error",
    avds::partition::PartitionError => "partition-error",
    avds::support::SupportError => "support-error",
    avds::density::DensityError => "density-error",
    avds::mask::MaskError => "mask-error",
    avds::recon::ReconError => "recon-error",
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::new(harness_class(&e), e)
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::new(io_class(&e), e)
    }
}

fn write_text(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => Ok(io::write_atomic(p, text.as_bytes())?),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_density(path: &Path) -> Result<Density, Failure> {
    Ok(Density::from_probabilities(io::read_tensor(path)?.into_real()?)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::EstimateWeights {
            corpus,
            transform,
            threshold,
            relative,
            out,
        } => {
            let op = Operator::new(transform)?;
            let coeffs = harness::pgm_corpus(&corpus, &op)?;
            let mode = if relative {
                ThresholdMode::RelativeToMax
            } else {
                ThresholdMode::Absolute
            };
            let w = support::estimate_weights(&coeffs, threshold, mode)?;
            log::info!("{} images, sparsity {:.3}", coeffs.len(), w.sparsity());
            io::write_tensor(&out, &Tensor::vector(w.into_vec()))?;
        }
        Command::Density {
            spec,
            weights,
            kind,
            partition,
            out,
            png_log,
        } => {
            let op = Operator::new(spec)?;
            let part = BlockPartition::from_kind(partition, op.len(), spec.side)?;
            let w = match weights {
                Some(p) => WeightVector::new(io::read_tensor(&p)?.into_real()?)?,
                None if kind == DensityChoice::Adapted => {
                    return Err(Failure::new("usage-error", "--weights is required for the adapted density"))
                }
                None => WeightVector::uniform(op.len(), 1.0)?,
            };
            if w.len() != op.len() {
                return Err(Failure::new(
                    "shape-error",
                    format!("weights have {} entries, operator has {}", w.len(), op.len()),
                ));
            }
            let pi = harness::compute_density(kind, &op, &part, &w)?;
            io::write_tensor(&out, &Tensor::vector(pi.values().to_vec()))?;
            if let Some(png) = png_log {
                if !spec.is_2d() {
                    return Err(Failure::new("usage-error", "--png-log needs a 2D spec"));
                }
                let rows = harness::density_per_row(&pi, &part);
                io::write_pgm(&png, &io::log_image(spec.side, spec.side, &rows, 6.0))?;
            }
        }
        Command::Mask(args) => {
            let pi = read_density(&args.density)?;
            let budget = match (args.m, args.fraction) {
                (Some(m), _) => m,
                (None, Some(f)) => mask::budget_from_fraction(f, pi.len())?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let drawn = mask::draw_mask(&pi, budget, args.mode, args.seed)?;
            let out = match (args.spec, args.partition) {
                (Some(spec), Some(kind)) => {
                    let part = BlockPartition::from_kind(kind, spec.len(), spec.side)?;
                    let (rows, fraction) = mask::expand_blocks(&drawn, &part)?;
                    log::info!("{} rows, fraction {fraction:.4}", rows.len());
                    rows
                }
                _ => drawn,
            };
            io::write_tensor(&args.out, &io::mask_to_tensor(&out))?;
        }
        Command::Reconstruct {
            spec,
            mask,
            input,
            image,
            solver,
            out,
            out_image,
        } => {
            let op = Operator::new(spec)?;
            let rows = io::mask_from_tensor(io::read_tensor(&mask)?, op.len())?;
            let a = MeasurementOp::unscaled(&op, &rows)?;
            let y = match (input, image) {
                (Some(p), _) => io::read_tensor(&p)?.into_complex(),
                (None, Some(p)) => a.measure(&harness::image_coefficients(&op, &io::read_pgm(&p)?)?)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            if y.len() != a.num_measurements() {
                return Err(Failure::new(
                    "shape-error",
                    format!("{} measurements for a mask of {} rows", y.len(), a.num_measurements()),
                ));
            }
            let params = match solver {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|source| IoError::Io { path: p.clone(), source })?;
                    toml::from_str::<SolverParams>(&text).map_err(|e| Failure::new("config-error", e.message()))?
                }
                None => SolverParams::default(),
            };
            let sol = recon::solve_bp(&y, &a, &params)?;
            if !sol.converged {
                eprintln!("warning: solver did not converge (residual {:.3e})", sol.residual);
            }
            if let Some(p) = out_image {
                if !spec.is_2d() {
                    return Err(Failure::new("usage-error", "--out-image needs a 2D spec"));
                }
                let img = harness::image_of(&op, &sol.x);
                let mags: Vec<f64> = img.iter().map(|z| z.norm()).collect();
                let peak = mags.iter().cloned().fold(0.0, f64::max);
                let scaled: Vec<f64> = mags.iter().map(|m| if peak > 0.0 { m / peak } else { 0.0 }).collect();
                io::write_pgm(&p, &io::Image::from_column_major(spec.side, spec.side, &scaled))?;
            }
            io::write_tensor(&out, &Tensor::complex(vec![sol.x.len() as u64], sol.x)?)?;
        }
        Command::Experiment(args) => {
            let cfg = io::load_run_config(&args.config)?;
            let report = harness::run_experiment(&cfg)?;
            for s in &report.summary {
                eprintln!("{}: mean PSNR {:.2} dB (sd {:.2})", s.density, s.mean_psnr, s.sd_psnr);
            }
            write_text(args.out.as_deref(), &report.to_json())?;
        }
        Command::Diagnose(args) => {
            let cfg = io::load_run_config(&args.config)?;
            write_text(args.out.as_deref(), &harness::diagnose(&cfg)?.to_json())?;
        }
        Command::Phase(args) => {
            let cfg = io::load_run_config(&args.config)?;
            write_text(args.out.as_deref(), &harness::phase_transition(&cfg)?.to_json())?;
        }
        Command::Flip { input, out } => {
            let t = io::read_tensor(&input)?;
            let dims = t.dims().to_vec();
            let flipped = match t.data() {
                io::TensorData::Real(v) => Tensor::real(dims, support::flip(v))?,
                io::TensorData::Complex(v) => Tensor::complex(dims, support::flip::<Complex64>(v))?,
            };
            io::write_tensor(&out, &flipped)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            println!("error: {}", f.class);
            eprintln!("{}", f.detail);
            ExitCode::from(1)
        }
    }
}
