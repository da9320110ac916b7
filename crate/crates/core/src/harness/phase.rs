use super::{ExperimentConfig, HarnessError, Prepared, REPORT_SCHEMA_VERSION};
use crate::seed::{derive_seed, STREAM_MASK};
use serde::{Deserialize, Serialize};

fn default_threshold() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    /// Numbers of measured atoms, ascending.
    pub grid: Vec<usize>,
    /// Relative l2 error counted as exact recovery.
    #[serde(default = "default_threshold")]
    pub success_threshold: f64,
    /// Stop sweeping a density once its success rate reaches this value;
    /// later grid points are left empty.
    #[serde(default)]
    pub stop_at_rate: Option<f64>,
    /// Overrides the experiment's trial count.
    #[serde(default)]
    pub trials: Option<usize>,
}

impl PhaseConfig {
    /// `step, 2 step, ...` up to `max`.
    pub fn stepped(step: usize, max: usize) -> Self {
        Self {
            grid: (1..=max / step.max(1)).map(|i| i * step).collect(),
            success_threshold: default_threshold(),
            stop_at_rate: None,
            trials: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseRow {
    pub density: String,
    /// Success rate per grid point; `None` where the sweep stopped early.
    pub rates: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseTable {
    pub schema_version: u32,
    pub spec: String,
    pub master_seed: u64,
    pub trials: usize,
    pub success_threshold: f64,
    pub grid: Vec<usize>,
    pub rows: Vec<PhaseRow>,
}

impl PhaseTable {
    /// Smallest grid point whose success rate is at least `rate`.
    pub fn smallest_reaching(&self, density: &str, rate: f64) -> Option<usize> {
        let row = self.rows.iter().find(|r| r.density == density)?;
        self.grid
            .iter()
            .zip(&row.rates)
            .find(|(_, r)| r.is_some_and(|r| r >= rate))
            .map(|(&m, _)| m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises")
    }
}

/// Success rate of exact recovery against the number of measured atoms.
///
/// Trial `t` uses the same signal at every grid point; its mask at grid
/// index `g` for density `d` is seeded by `[STREAM_MASK, g, t, d]`.
pub fn phase_transition(cfg: &ExperimentConfig) -> Result<PhaseTable, HarnessError> {
    let phase = cfg
        .phase
        .clone()
        .ok_or_else(|| HarnessError::Config("missing [phase] section".into()))?;
    if phase.grid.is_empty() {
        return Err(HarnessError::Config("empty phase grid".into()));
    }
    let prep = Prepared::new(cfg)?;
    let atoms = prep.partition.num_blocks();
    if let Some(&bad) = phase.grid.iter().find(|&&m| m == 0 || m > atoms) {
        return Err(HarnessError::Config(format!("grid point {bad} outside 1..={atoms}")));
    }
    let trials = phase.trials.unwrap_or(cfg.trials);
    let signals = (0..trials as u64).map(|t| prep.signal(t)).collect::<Result<Vec<_>, _>>()?;
    let mut rows = vec![];
    for (d, (choice, _)) in prep.densities.iter().enumerate() {
        let mut rates = vec![None; phase.grid.len()];
        for (g, &m) in phase.grid.iter().enumerate() {
            let mut hits = 0usize;
            for (t, x) in signals.iter().enumerate() {
                let seed = derive_seed(cfg.master_seed, &[STREAM_MASK, g as u64, t as u64, d as u64]);
                let out = prep.reconstruct(x, d, m, cfg.mode, seed, &cfg.solver)?;
                if out.relative_error <= phase.success_threshold {
                    hits += 1;
                }
            }
            let rate = hits as f64 / trials as f64;
            rates[g] = Some(rate);
            log::info!("phase {choice} m={m}: {rate}");
            if phase.stop_at_rate.is_some_and(|stop| rate >= stop) {
                break;
            }
        }
        rows.push(PhaseRow {
            density: choice.to_string(),
            rates,
        });
    }
    Ok(PhaseTable {
        schema_version: REPORT_SCHEMA_VERSION,
        spec: cfg.spec.to_string(),
        master_seed: cfg.master_seed,
        trials,
        success_threshold: phase.success_threshold,
        grid: phase.grid,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{DensityChoice, Profile};

    fn config(grid: Vec<usize>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(
            "hadamard1d/haar1d/64".parse().unwrap(),
            Profile::Uniform { sparsity: 4.0 },
            vec![DensityChoice::Adapted, DensityChoice::Coherence],
            5,
            11,
        );
        cfg.phase = Some(PhaseConfig {
            grid,
            success_threshold: 1e-3,
            stop_at_rate: None,
            trials: None,
        });
        cfg
    }

    #[test]
    fn full_sampling_always_succeeds() {
        let table = phase_transition(&config(vec![64])).unwrap();
        for row in &table.rows {
            assert_eq!(row.rates, vec![Some(1.0)]);
        }
    }

    #[test]
    fn fewer_measurements_than_support_always_fail() {
        let table = phase_transition(&config(vec![3])).unwrap();
        for row in &table.rows {
            assert_eq!(row.rates, vec![Some(0.0)]);
        }
    }

    #[test]
    fn early_stop_leaves_later_points_empty() {
        let mut cfg = config(vec![64, 64]);
        cfg.phase.as_mut().unwrap().stop_at_rate = Some(0.95);
        let table = phase_transition(&cfg).unwrap();
        assert_eq!(table.rows[0].rates, vec![Some(1.0), None]);
        assert_eq!(table.smallest_reaching("adapted", 0.95), Some(64));
    }

    #[test]
    fn stepped_grid() {
        assert_eq!(PhaseConfig::stepped(16, 64).grid, vec![16, 32, 48, 64]);
    }
}
