//! Band ensembles: one weak learner per group of adjacent scales, and the
//! pixel → patch → vertebra → patient score aggregation.

pub mod cart;
pub mod stvm;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{remap_lu, Label3, PatientStatus, MAX_PATCHES_PER_VERTEBRA};
use crate::error::{Result, StvError};
use crate::phantom::mix_seed;

pub use cart::{fit_tree, gini, DecisionTree, Node};

/// Default vertebra-score cutoff.
pub const DEFAULT_CUTOFF: f64 = 0.45;
/// Default number of trees per band in forest mode.
pub const DEFAULT_FOREST_SIZE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandConfig {
    pub n_components: usize,
    pub scales_per_band: usize,
    /// Sliding windows of stride 1 instead of disjoint bands.
    pub overlapping: bool,
}

impl Default for BandConfig {
    fn default() -> Self {
        BandConfig {
            n_components: 120,
            scales_per_band: 5,
            overlapping: false,
        }
    }
}

impl BandConfig {
    pub fn validate(&self) -> Result<()> {
        let (n, s) = (self.n_components, self.scales_per_band);
        if n == 0 || s == 0 || s > n {
            return Err(StvError::InvalidConfig(format!(
                "scales_per_band must lie in 1..={n}, got {s}"
            )));
        }
        if !self.overlapping && n % s != 0 {
            return Err(StvError::InvalidConfig(format!(
                "scales_per_band {s} does not divide n_components {n}"
            )));
        }
        Ok(())
    }

    pub fn band_count(&self) -> usize {
        if self.overlapping {
            self.n_components - self.scales_per_band + 1
        } else {
            self.n_components / self.scales_per_band
        }
    }

    /// Zero-based component range of band `j`.
    pub fn band_range(&self, j: usize) -> Range<usize> {
        let start = if self.overlapping { j } else { j * self.scales_per_band };
        start..start + self.scales_per_band
    }
}

/// Splits a signature into its band feature vectors, ascending in scale.
pub fn band_split<'a>(signature: &'a [f64], config: &BandConfig) -> Result<Vec<&'a [f64]>> {
    config.validate()?;
    if signature.len() != config.n_components {
        return Err(StvError::dims(config.n_components, signature.len()));
    }
    Ok((0..config.band_count())
        .map(|j| &signature[config.band_range(j)])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Tree,
    Forest,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Tree => "tree",
            Mode::Forest => "forest",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = StvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(Mode::Tree),
            "forest" => Ok(Mode::Forest),
            other => Err(StvError::InvalidConfig(format!("unknown mode {other:?} (tree|forest)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub bands: BandConfig,
    pub mode: Mode,
    pub forest_size: usize,
    pub cutoff: f64,
    /// Enhancement exponent applied to signatures before banding.
    pub p_enh: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            bands: BandConfig::default(),
            mode: Mode::Tree,
            forest_size: DEFAULT_FOREST_SIZE,
            cutoff: DEFAULT_CUTOFF,
            p_enh: 1.0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        self.bands.validate()?;
        if !(0.0..=1.0).contains(&self.cutoff) {
            return Err(StvError::InvalidConfig(format!("cutoff {} outside [0, 1]", self.cutoff)));
        }
        if self.mode == Mode::Forest && self.forest_size == 0 {
            return Err(StvError::InvalidConfig("forest_size must be positive".into()));
        }
        if !(self.p_enh >= 0.0 && self.p_enh.is_finite()) {
            return Err(StvError::InvalidConfig(format!("p_enh must be >= 0, got {}", self.p_enh)));
        }
        Ok(())
    }
}

/// The learner of one band.
#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    Tree(DecisionTree),
    Forest { trees: Vec<DecisionTree>, seeds: Vec<u64> },
}

impl Learner {
    /// Forest votes are a plurality; any tie for the top count yields NORMAL.
    pub fn predict(&self, x: &[f64]) -> Label3 {
        match self {
            Learner::Tree(t) => t.predict(x),
            Learner::Forest { trees, .. } => {
                let mut votes = [0usize; 3];
                for t in trees {
                    votes[t.predict(x).index()] += 1;
                }
                let top = *votes.iter().max().unwrap_or(&0);
                let winners: Vec<usize> = (0..3).filter(|&c| votes[c] == top).collect();
                if winners.len() == 1 {
                    Label3::ALL[winners[0]]
                } else {
                    Label3::Normal
                }
            }
        }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        match self {
            Learner::Tree(t) => std::slice::from_ref(t),
            Learner::Forest { trees, .. } => trees,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub config: EnsembleConfig,
    pub learners: Vec<Learner>,
}

/// Trains one learner per band on that band's features only.
///
/// `rows` are signatures (already enhanced as `config.p_enh` prescribes).
/// Bands are trained in parallel on the current rayon pool; forest trees of
/// band `j` use seeds `mix_seed(seed, [j, tree])`, so the model does not
/// depend on scheduling.
pub fn fit_band_ensemble(
    rows: &[&[f64]],
    labels: &[Label3],
    config: &EnsembleConfig,
    seed: u64,
) -> Result<EnsembleModel> {
    config.validate()?;
    if rows.is_empty() {
        return Err(StvError::Empty("no training rows".into()));
    }
    if rows.len() != labels.len() {
        return Err(StvError::dims(rows.len(), labels.len()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != config.bands.n_components) {
        return Err(StvError::dims(config.bands.n_components, bad.len()));
    }
    let learners = (0..config.bands.band_count())
        .into_par_iter()
        .map(|j| {
            let range = config.bands.band_range(j);
            let band: Vec<&[f64]> = rows.iter().map(|r| &r[range.clone()]).collect();
            fit_learner(&band, labels, config, j as u64, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel {
        config: *config,
        learners,
    })
}

fn fit_learner(
    band: &[&[f64]],
    labels: &[Label3],
    config: &EnsembleConfig,
    band_index: u64,
    seed: u64,
) -> Result<Learner> {
    match config.mode {
        Mode::Tree => fit_tree(band, labels).map(Learner::Tree),
        Mode::Forest => {
            let s = config.bands.scales_per_band;
            let per_split = (s as f64).sqrt().ceil() as usize;
            let mut trees = Vec::with_capacity(config.forest_size);
            let mut seeds = Vec::with_capacity(config.forest_size);
            for t in 0..config.forest_size {
                let tree_seed = mix_seed(seed, &[band_index, t as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
                let n = band.len();
                let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                let sub = cart::Subsample {
                    rng: &mut rng,
                    per_split,
                };
                trees.push(cart::fit_indices(band, labels, idx, Some(sub))?);
                seeds.push(tree_seed);
            }
            Ok(Learner::Forest { trees, seeds })
        }
    }
}

impl EnsembleModel {
    pub fn band_count(&self) -> usize {
        self.learners.len()
    }

    /// Binary tag (after the LU remap) of every band learner.
    pub fn pixel_tags(&self, signature: &[f64]) -> Result<Vec<u8>> {
        let bands = band_split(signature, &self.config.bands)?;
        Ok(self
            .learners
            .iter()
            .zip(bands)
            .map(|(l, x)| remap_lu(l.predict(x)))
            .collect())
    }

    /// Mean of the band tags.
    pub fn predict_pixel(&self, signature: &[f64]) -> Result<f64> {
        let tags = self.pixel_tags(signature)?;
        Ok(mean_tags(&tags, None))
    }
}

/// Mean of binary tags, optionally leaving one band out.
pub fn mean_tags(tags: &[u8], exclude: Option<usize>) -> f64 {
    let kept = tags.len() - usize::from(exclude.is_some_and(|b| b < tags.len()));
    let ones: usize = tags
        .iter()
        .enumerate()
        .filter(|&(j, _)| Some(j) != exclude)
        .map(|(_, &t)| t as usize)
        .sum();
    if kept == 0 {
        0.0
    } else {
        ones as f64 / kept as f64
    }
}

/// Mean taken over the sorted values, so it does not depend on input order.
fn mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / values.len() as f64
}

/// Patch score: mean of the pixel scores over the mask.
pub fn score_patch(pixel_scores: &[f64], mask_len: usize) -> Result<f64> {
    if pixel_scores.len() != mask_len || mask_len == 0 {
        return Err(StvError::dims(format!("{mask_len} masked pixels"), pixel_scores.len()));
    }
    Ok(mean(pixel_scores))
}

/// Vertebra score: mean of its 1 to 6 patch scores.
pub fn score_vertebra(patch_scores: &[f64]) -> Result<f64> {
    if patch_scores.is_empty() {
        return Err(StvError::Empty("vertebra without patch scores".into()));
    }
    if patch_scores.len() > MAX_PATCHES_PER_VERTEBRA {
        return Err(StvError::Contract(format!(
            "{} patches on one vertebra (at most {MAX_PATCHES_PER_VERTEBRA})",
            patch_scores.len()
        )));
    }
    Ok(mean(patch_scores))
}

/// Patient decision: Pathological iff the highest vertebra score exceeds the
/// cutoff. Returns the decision and that highest score.
pub fn classify_patient(vertebra_scores: &[f64], cutoff: f64) -> Result<(PatientStatus, f64)> {
    let score = vertebra_scores
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or_else(|| StvError::Empty("patient without vertebra scores".into()))?;
    let status = if score > cutoff {
        PatientStatus::Pathological
    } else {
        PatientStatus::Normal
    };
    Ok((status, score))
}
