//! Dataset splitting, stratified k-fold generation, experiment lineage
//! records, and comparative report tables.
//!
//! Strata are image-level label-combination sets: an image with fire and
//! smoke ground truth belongs to the {fire, smoke} stratum, an empty image
//! to {}. Splits and folds shuffle within each stratum with a seeded
//! generator, so every assignment is a pure function of (dataset order,
//! seed).

mod tables;

pub use tables::{render_table, TableFormat, TableLayout};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{ClassId, ClassTable, Dataset, ImageRecord};
use crate::efficiency::RunMetrics;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;

/// Image-level label-combination key: the set of classes present in the
/// image's ground truth.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stratum(pub BTreeSet<ClassId>);

impl Stratum {
    pub fn of_image(image: &ImageRecord) -> Self {
        Self(image.ground_truth.iter().map(|g| g.class).collect())
    }

    /// Human-readable key like `{fire,smoke}`; `{}` for empty images.
    pub fn label(&self, classes: &ClassTable) -> String {
        let names: Vec<String> = self
            .0
            .iter()
            .map(|id| {
                classes
                    .get(*id)
                    .map(|d| d.name.clone())
                    .unwrap_or_else(|| id.to_string())
            })
            .collect();
        format!("{{{}}}", names.join(","))
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.0.iter().map(|id| id.to_string()).collect();
        write!(f, "{{{}}}", ids.join(","))
    }
}

/// Groups image ids by stratum, preserving dataset order within each.
pub fn stratify(dataset: &Dataset) -> BTreeMap<Stratum, Vec<String>> {
    let mut strata: BTreeMap<Stratum, Vec<String>> = BTreeMap::new();
    for image in &dataset.images {
        strata
            .entry(Stratum::of_image(image))
            .or_default()
            .push(image.image_id.clone());
    }
    strata
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSet {
    Train,
    Val,
    Test,
}

impl SplitSet {
    pub const ALL: [SplitSet; 3] = [SplitSet::Train, SplitSet::Val, SplitSet::Test];

    pub fn name(&self) -> &'static str {
        match self {
            SplitSet::Train => "train",
            SplitSet::Val => "val",
            SplitSet::Test => "test",
        }
    }
}

impl fmt::Display for SplitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A train/val/test partition with the seed and ratios that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    /// Every image appears exactly once.
    pub assignment: BTreeMap<String, SplitSet>,
}

impl SplitAssignment {
    pub fn ids_in(&self, set: SplitSet) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == set)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for set in self.assignment.values() {
            counts[*set as usize] += 1;
        }
        counts
    }
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::RatioSum { ratios, sum });
    }
    Ok(())
}

/// Largest-remainder apportionment of `n` items over three ratios.
///
/// Floors the ideal counts, then hands leftover items to the largest
/// fractional remainders; remainder ties go to the earlier set (train,
/// then val).
fn largest_remainder(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let ideal: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &idx in order.iter().take(n - assigned) {
        counts[idx] += 1;
    }
    [counts[0], counts[1], counts[2]]
}

fn split_groups(
    groups: &BTreeMap<Stratum, Vec<String>>,
    ratios: [f64; 3],
    seed: u64,
) -> SplitAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    for ids in groups.values() {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        let [n_train, n_val, _] = largest_remainder(ids.len(), ratios);
        for (i, id) in ids.into_iter().enumerate() {
            let set = if i < n_train {
                SplitSet::Train
            } else if i < n_train + n_val {
                SplitSet::Val
            } else {
                SplitSet::Test
            };
            assignment.insert(id, set);
        }
    }
    SplitAssignment {
        seed,
        ratios,
        assignment,
    }
}

/// Stratified train/val/test split with largest-remainder rounding per stratum.
pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    check_ratios(ratios)?;
    if dataset.images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(split_groups(&stratify(dataset), ratios, seed))
}

/// Split ignoring strata: the whole dataset is shuffled as one group.
pub fn split_unstratified(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    check_ratios(ratios)?;
    if dataset.images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut groups = BTreeMap::new();
    let ids: Vec<String> = dataset.images.iter().map(|i| i.image_id.clone()).collect();
    groups.insert(Stratum(BTreeSet::new()), ids);
    Ok(split_groups(&groups, ratios, seed))
}

/// A k-way partition with the seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    /// image id -> fold index in [0, k)
    pub assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn ids_in_fold(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

fn kfold_groups(groups: &BTreeMap<Stratum, Vec<String>>, k: usize, seed: u64) -> FoldAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    // The fold cursor carries across strata so small strata do not all pile
    // into the low folds.
    let mut cursor = 0usize;
    for ids in groups.values() {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        for id in ids {
            assignment.insert(id, cursor % k);
            cursor += 1;
        }
    }
    FoldAssignment {
        k,
        seed,
        assignment,
    }
}

/// Stratified k-fold: seeded shuffle within each stratum, then round-robin
/// over the folds. Per-stratum fold counts differ by at most one.
pub fn stratified_kfold(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > dataset.images.len() {
        return Err(Error::InvalidFoldCount {
            k,
            n_images: dataset.images.len(),
        });
    }
    Ok(kfold_groups(&stratify(dataset), k, seed))
}

/// K-fold ignoring strata.
pub fn kfold_unstratified(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > dataset.images.len() {
        return Err(Error::InvalidFoldCount {
            k,
            n_images: dataset.images.len(),
        });
    }
    let mut groups = BTreeMap::new();
    let ids: Vec<String> = dataset.images.iter().map(|i| i.image_id.clone()).collect();
    groups.insert(Stratum(BTreeSet::new()), ids);
    Ok(kfold_groups(&groups, k, seed))
}

/// One cross-validation iteration: fold `fold` validates, the rest train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvIteration {
    pub fold: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

/// Expands a fold assignment into its k train/validation iterations.
pub fn cv_iterations(folds: &FoldAssignment) -> Vec<CvIteration> {
    (0..folds.k)
        .map(|fold| {
            let mut train = Vec::new();
            let mut validation = Vec::new();
            for (id, &f) in &folds.assignment {
                if f == fold {
                    validation.push(id.clone());
                } else {
                    train.push(id.clone());
                }
            }
            CvIteration {
                fold,
                train,
                validation,
            }
        })
        .collect()
}

/// Mean and sample standard deviation (n-1 denominator) of per-fold APs.
pub fn ap_dispersion(per_fold_aps: &[f64]) -> Result<(f64, f64)> {
    if per_fold_aps.len() < 2 {
        return Err(Error::TooFewValues {
            found: per_fold_aps.len(),
        });
    }
    let n = per_fold_aps.len() as f64;
    let mean = per_fold_aps.iter().sum::<f64>() / n;
    let var = per_fold_aps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// One fine-tuning stage of a transfer-learning lineage. Descriptive
/// metadata only; nothing here executes training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TLStage {
    /// 1-based position in the lineage.
    pub index: u32,
    /// Where the starting weights came from: "scratch", "COCO", "FASDD", ...
    pub source_weights: String,
    /// Dataset this stage trained on.
    pub dataset: String,
    pub frozen_layers: u32,
    pub epochs: u32,
    pub initial_lr: f64,
    pub training_time_hours: f64,
}

/// One training/evaluation run: lineage, accuracy reports, and optional
/// efficiency measurements. The row unit of the report tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: String,
    pub model: String,
    /// Time spent producing the pre-trained weights themselves, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_train_time_hours: Option<f64>,
    pub stages: Vec<TLStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub testing: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_metrics: Option<RunMetrics>,
    /// Name of the EDP comparison group this run belongs to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edp_group: Option<String>,
}

impl ExperimentRecord {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidRecord {
                run_id: self.run_id.clone(),
                message: "stages must be non-empty".to_string(),
            });
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.index as usize != i + 1 {
                return Err(Error::InvalidRecord {
                    run_id: self.run_id.clone(),
                    message: format!(
                        "stage indices must run 1..{}, found {} at position {}",
                        self.stages.len(),
                        stage.index,
                        i + 1
                    ),
                });
            }
            if stage.epochs == 0 {
                return Err(Error::InvalidRecord {
                    run_id: self.run_id.clone(),
                    message: format!("stage {} has zero epochs", stage.index),
                });
            }
        }
        if let Some(metrics) = &self.run_metrics {
            metrics.validate()?;
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let record: ExperimentRecord =
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
        record.validate()?;
        Ok(record)
    }

    /// All training time spent to reach this run's final weights: the
    /// pre-trained weights' own time plus every stage.
    pub fn total_training_time_hours(&self) -> f64 {
        self.weights_train_time_hours.unwrap_or(0.0)
            + self.stages.iter().map(|s| s.training_time_hours).sum::<f64>()
    }
}
