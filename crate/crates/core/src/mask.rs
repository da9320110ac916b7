//! Measurement masks drawn from a density.

use crate::density::{Density, DensityKind};
use crate::partition::BlockPartition;
use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("budget {budget} exceeds the {available} atoms with positive probability")]
    InfeasibleBudget { budget: usize, available: usize },
    #[error("density sums to {0}, expected 1")]
    Unnormalized(f64),
    #[error("mask has {mask} atoms, partition has {partition} blocks")]
    PartitionMismatch { mask: usize, partition: usize },
    #[error("index {index} outside domain of size {len}")]
    OutOfRange { index: usize, len: usize },
    #[error("fraction {0} outside (0, 1]")]
    BadFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    #[serde(alias = "iid")]
    IidWithReplacement,
    #[serde(alias = "distinct")]
    DistinctUntilBudget,
}

impl std::str::FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iid" | "iid-with-replacement" => Ok(MaskMode::IidWithReplacement),
            "distinct" | "distinct-until-budget" => Ok(MaskMode::DistinctUntilBudget),
            other => Err(format!("unknown mask mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    indices: Vec<usize>,
    multiplicities: Vec<u64>,
    mode: MaskMode,
    domain_len: usize,
    seed: Option<u64>,
    density_kind: Option<DensityKind>,
}

impl Mask {
    /// Builds a mask from raw indices; repeated indices are merged into
    /// multiplicities.
    pub fn from_indices(domain_len: usize, raw: &[usize], mode: MaskMode) -> Result<Self, MaskError> {
        let mut counts = BTreeMap::new();
        for &i in raw {
            if i >= domain_len {
                return Err(MaskError::OutOfRange { index: i, len: domain_len });
            }
            *counts.entry(i).or_insert(0u64) += 1;
        }
        Self::from_counts(domain_len, counts, mode)
    }

    pub fn from_counts(domain_len: usize, counts: BTreeMap<usize, u64>, mode: MaskMode) -> Result<Self, MaskError> {
        let (indices, mut multiplicities): (Vec<usize>, Vec<u64>) = counts.into_iter().unzip();
        if let Some(&last) = indices.last() {
            if last >= domain_len {
                return Err(MaskError::OutOfRange { index: last, len: domain_len });
            }
        }
        if mode == MaskMode::DistinctUntilBudget {
            multiplicities.iter_mut().for_each(|m| *m = 1);
        }
        Ok(Self {
            indices,
            multiplicities,
            mode,
            domain_len,
            seed: None,
            density_kind: None,
        })
    }

    /// Every row, once.
    pub fn full(domain_len: usize) -> Self {
        Self {
            indices: (0..domain_len).collect(),
            multiplicities: vec![1; domain_len],
            mode: MaskMode::DistinctUntilBudget,
            domain_len,
            seed: None,
            density_kind: None,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn multiplicities(&self) -> &[u64] {
        &self.multiplicities
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn domain_len(&self) -> usize {
        self.domain_len
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn density_kind(&self) -> Option<DensityKind> {
        self.density_kind
    }

    /// Number of distinct atoms.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of draws, counting multiplicity.
    pub fn draws(&self) -> u64 {
        self.multiplicities.iter().sum()
    }

    pub fn is_distinct(&self) -> bool {
        self.multiplicities.iter().all(|&m| m == 1)
    }

    /// Indices repeated by multiplicity, in sorted order.
    pub fn draw_list(&self) -> Vec<usize> {
        self.indices
            .iter()
            .zip(&self.multiplicities)
            .flat_map(|(&i, &m)| std::iter::repeat_n(i, m as usize))
            .collect()
    }
}

/// `round(fraction * atoms)`, at least 1.
pub fn budget_from_fraction(fraction: f64, atoms: usize) -> Result<usize, MaskError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MaskError::BadFraction(fraction));
    }
    Ok(((fraction * atoms as f64).round() as usize).clamp(1, atoms.max(1)))
}

struct Categorical {
    cdf: Vec<f64>,
    last_positive: usize,
}

impl Categorical {
    fn new(p: &[f64]) -> Option<Self> {
        let mut acc = 0.0;
        let cdf: Vec<f64> = p
            .iter()
            .map(|&v| {
                acc += v;
                acc
            })
            .collect();
        let last_positive = p.iter().rposition(|&v| v > 0.0)?;
        Some(Self { cdf, last_positive })
    }

    fn total(&self) -> f64 {
        *self.cdf.last().unwrap_or(&0.0)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.total();
        self.cdf.partition_point(|&c| c <= u).min(self.last_positive)
    }
}

fn check_density(density: &Density) -> Result<(), MaskError> {
    let total: f64 = density.values().iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(MaskError::Unnormalized(total));
    }
    Ok(())
}

/// Consecutive repeats tolerated before the table is rebuilt over the
/// unselected atoms. Rebuilding conditions on "not yet selected", which is
/// exactly the law of skipping repeats.
const REBUILD_AFTER: usize = 16;

pub fn draw_mask_with<R: Rng + ?Sized>(
    density: &Density,
    budget: usize,
    mode: MaskMode,
    rng: &mut R,
) -> Result<Mask, MaskError> {
    if budget == 0 {
        return Err(MaskError::ZeroBudget);
    }
    check_density(density)?;
    let p = density.values();
    let available = density.support_size();
    let mut table = Categorical::new(p).ok_or(MaskError::Unnormalized(0.0))?;
    let mut counts = BTreeMap::new();
    match mode {
        MaskMode::IidWithReplacement => {
            for _ in 0..budget {
                *counts.entry(table.sample(rng)).or_insert(0u64) += 1;
            }
        }
        MaskMode::DistinctUntilBudget => {
            if budget > available {
                return Err(MaskError::InfeasibleBudget { budget, available });
            }
            let mut selected = vec![false; p.len()];
            let mut repeats = 0;
            while counts.len() < budget {
                let i = table.sample(rng);
                if selected[i] {
                    repeats += 1;
                    if repeats >= REBUILD_AFTER {
                        let rest: Vec<f64> = p.iter().zip(&selected).map(|(&v, &s)| if s { 0.0 } else { v }).collect();
                        table = Categorical::new(&rest).expect("unselected mass remains");
                        repeats = 0;
                    }
                    continue;
                }
                repeats = 0;
                selected[i] = true;
                counts.insert(i, 1u64);
            }
        }
    }
    let mut mask = Mask::from_counts(p.len(), counts, mode)?;
    mask.density_kind = Some(density.kind());
    Ok(mask)
}

/// Deterministic given `seed`.
pub fn draw_mask(density: &Density, budget: usize, mode: MaskMode, seed: u64) -> Result<Mask, MaskError> {
    let mut mask = draw_mask_with(density, budget, mode, &mut seed::rng(seed))?;
    mask.seed = Some(seed);
    Ok(mask)
}

/// Flat row mask from a block mask, with the measured fraction
/// `sum |I_j| / K` (counting multiplicity).
pub fn expand_blocks(mask: &Mask, partition: &BlockPartition) -> Result<(Mask, f64), MaskError> {
    if mask.domain_len() != partition.num_blocks() {
        return Err(MaskError::PartitionMismatch {
            mask: mask.domain_len(),
            partition: partition.num_blocks(),
        });
    }
    let mut counts = BTreeMap::new();
    let mut measured = 0u64;
    for (&b, &m) in mask.indices().iter().zip(mask.multiplicities()) {
        let block = partition.block(b).expect("index checked against partition size");
        for &r in block {
            counts.insert(r, m);
        }
        measured += m * block.len() as u64;
    }
    let mut flat = Mask::from_counts(partition.domain_len(), counts, mask.mode())?;
    flat.seed = mask.seed;
    flat.density_kind = mask.density_kind;
    Ok((flat, measured as f64 / partition.domain_len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensityKind;

    fn uniform(n: usize) -> Density {
        Density::from_numerators(vec![1.0; n], DensityKind::Uniform).unwrap()
    }

    #[test]
    fn exhaustive_distinct_budget() {
        let m = draw_mask(&uniform(4), 4, MaskMode::DistinctUntilBudget, 3).unwrap();
        assert_eq!(m.indices(), &[0, 1, 2, 3]);
        assert!(m.is_distinct());
    }

    #[test]
    fn degenerate_density_iid() {
        let d = Density::from_numerators(vec![1.0, 0.0, 0.0], DensityKind::Uniform).unwrap();
        let m = draw_mask(&d, 7, MaskMode::IidWithReplacement, 1).unwrap();
        assert_eq!(m.indices(), &[0]);
        assert_eq!(m.multiplicities(), &[7]);
    }

    #[test]
    fn distinct_budget_errors() {
        let d = Density::from_numerators(vec![1.0, 0.0, 1.0], DensityKind::Uniform).unwrap();
        assert_eq!(
            draw_mask(&d, 3, MaskMode::DistinctUntilBudget, 0).unwrap_err(),
            MaskError::InfeasibleBudget { budget: 3, available: 2 }
        );
        let m = draw_mask(&d, 2, MaskMode::DistinctUntilBudget, 0).unwrap();
        assert_eq!(m.indices(), &[0, 2]);
        assert_eq!(draw_mask(&d, 0, MaskMode::IidWithReplacement, 0).unwrap_err(), MaskError::ZeroBudget);
    }

    #[test]
    fn determinism() {
        let d = Density::from_numerators((1..=50).map(|i| i as f64).collect(), DensityKind::Uniform).unwrap();
        for mode in [MaskMode::DistinctUntilBudget, MaskMode::IidWithReplacement] {
            assert_eq!(draw_mask(&d, 20, mode, 42).unwrap(), draw_mask(&d, 20, mode, 42).unwrap());
        }
    }

    #[test]
    fn peaked_density_fills_distinct_budget() {
        let mut nums = vec![1e-9; 256];
        nums[0] = 1.0;
        let d = Density::from_numerators(nums, DensityKind::Uniform).unwrap();
        let m = draw_mask(&d, 256, MaskMode::DistinctUntilBudget, 5).unwrap();
        assert_eq!(m.len(), 256);
    }

    #[test]
    fn iid_concentration() {
        let m = draw_mask(&uniform(64), 6400, MaskMode::IidWithReplacement, 11).unwrap();
        assert_eq!(m.draws(), 6400);
        // binomial(6400, 1/64): mean 100, sd ~ 9.92
        let sd = (6400.0f64 * (1.0 / 64.0) * (63.0 / 64.0)).sqrt();
        for &c in m.multiplicities() {
            assert!((c as f64 - 100.0).abs() <= 3.0 * sd + 1e-9, "count {c}");
        }
    }

    #[test]
    fn iid_chi_square() {
        let nums: Vec<f64> = (0..64).map(|i| 1.0 + (i % 7) as f64).collect();
        let d = Density::from_numerators(nums, DensityKind::Uniform).unwrap();
        let n = 100_000u64;
        let m = draw_mask(&d, n as usize, MaskMode::IidWithReplacement, 17).unwrap();
        let mut observed = vec![0u64; 64];
        for (&i, &c) in m.indices().iter().zip(m.multiplicities()) {
            observed[i] = c;
        }
        let stat: f64 = d
            .values()
            .iter()
            .zip(&observed)
            .map(|(&p, &o)| {
                let e = p * n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        // 0.99 quantile of chi-square with 63 degrees of freedom
        assert!(stat < 92.01002361413214, "chi2 = {stat}");
    }

    #[test]
    fn zero_mass_atoms_never_drawn() {
        let nums: Vec<f64> = (0..32).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 }).collect();
        let d = Density::from_numerators(nums, DensityKind::Uniform).unwrap();
        for seed in 0..20 {
            let m = draw_mask(&d, 15, MaskMode::DistinctUntilBudget, seed).unwrap();
            assert!(m.indices().iter().all(|i| i % 3 != 0));
            let m = draw_mask(&d, 50, MaskMode::IidWithReplacement, seed).unwrap();
            assert!(m.indices().iter().all(|i| i % 3 != 0));
        }
    }

    #[test]
    fn expansion_examples() {
        let single = BlockPartition::singletons(8);
        let m = Mask::from_indices(8, &[1, 5], MaskMode::DistinctUntilBudget).unwrap();
        let (flat, frac) = expand_blocks(&m, &single).unwrap();
        assert_eq!(flat.indices(), m.indices());
        assert_eq!(frac, 0.25);

        // strided lines {k, k+4, k+8, k+12}
        let lines = BlockPartition::horizontal_lines(4);
        let m = Mask::from_indices(4, &[1, 3], MaskMode::DistinctUntilBudget).unwrap();
        let (flat, frac) = expand_blocks(&m, &lines).unwrap();
        assert_eq!(flat.indices(), &[1, 3, 5, 7, 9, 11, 13, 15]);
        assert_eq!(frac, 0.5);

        let m = Mask::from_indices(4, &[2, 2, 0], MaskMode::IidWithReplacement).unwrap();
        let (flat, frac) = expand_blocks(&m, &BlockPartition::vertical_lines(4)).unwrap();
        assert_eq!(flat.draws(), 12);
        assert_eq!(frac, 0.75);
        assert_eq!(flat.multiplicities()[flat.indices().iter().position(|&i| i == 8).unwrap()], 2);

        assert!(matches!(expand_blocks(&m, &BlockPartition::singletons(16)), Err(MaskError::PartitionMismatch { .. })));
    }

    #[test]
    fn fraction_budget() {
        assert_eq!(budget_from_fraction(0.05, 4096).unwrap(), 205);
        assert_eq!(budget_from_fraction(1e-6, 10).unwrap(), 1);
        assert!(budget_from_fraction(0.0, 10).is_err());
        assert!(budget_from_fraction(1.5, 10).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn distinct_block_masks_never_duplicate(seed in any::<u64>(), m in 1usize..16) {
                let p = BlockPartition::squares(16, 4).unwrap();
                let d = uniform(p.num_blocks());
                let mask = draw_mask(&d, m, MaskMode::DistinctUntilBudget, seed).unwrap();
                let (flat, frac) = expand_blocks(&mask, &p).unwrap();
                prop_assert!(flat.is_distinct());
                prop_assert_eq!(flat.len(), 16 * m);
                prop_assert!((frac - m as f64 / 16.0).abs() < 1e-15);
            }
        }
    }
}
