//! Mutual-information feature ranking and cross-validated choice of the
//! top-`n` subset.
//!
//! Features are discretized into equal-frequency bins and scored with the
//! plug-in mutual information against the class label, in bits. The subset
//! size is picked by stratified k-fold cross-validation in which the ranking
//! is recomputed from each fold's training part only.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, GaussianNbModel};
use crate::recording::Label;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("labels are constant; mutual information is undefined")]
    ConstantLabels,
    #[error("{features} values but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("at least 2 samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("bin count must be at least 1")]
    NoBins,
    #[error("class {class} has {count} trials, fewer than the {folds} folds")]
    Stratification { class: Label, count: usize, folds: usize },
    #[error("invalid cross-validation setup: {0}")]
    Config(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// What produced a feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    CspFilter,
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub band_index: usize,
    /// Row of the band's CSP matrix, or channel index.
    pub source_index: usize,
    pub source_kind: SourceKind,
}

/// Trials × features with per-column provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: DMatrix<f64>,
    pub labels: Vec<Label>,
    pub columns: Vec<ColumnMeta>,
}

impl FeatureMatrix {
    pub fn num_trials(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    fn subset(&self, rows: &[usize], cols: &[usize]) -> (DMatrix<f64>, Vec<Label>) {
        let values = DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.values[(rows[i], cols[j])]);
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        (values, labels)
    }
}

/// Equal-frequency bin index of each value. Tied values share the bin of
/// their first rank, so a constant feature falls in a single bin.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let t = values.len();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut assigned = vec![0; t];
    let mut rank = 0;
    while rank < t {
        let start = rank;
        let v = values[order[start]];
        while rank < t && values[order[rank]] == v {
            rank += 1;
        }
        let bin = start * bins / t;
        for &i in &order[start..rank] {
            assigned[i] = bin;
        }
    }
    assigned
}

/// Plug-in mutual information between two discrete sequences, in bits.
pub fn discrete_mutual_information(symbols: &[usize], labels: &[Label]) -> f64 {
    let t = symbols.len();
    if t == 0 {
        return 0.0;
    }
    let classes: Vec<Label> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let n_symbols = symbols.iter().max().map_or(0, |&m| m + 1);
    let mut joint = vec![vec![0usize; classes.len()]; n_symbols];
    for (&s, label) in symbols.iter().zip(labels) {
        let c = classes.binary_search(label).expect("label present");
        joint[s][c] += 1;
    }
    let symbol_counts: Vec<usize> = joint.iter().map(|row| row.iter().sum()).collect();
    let class_counts: Vec<usize> = (0..classes.len())
        .map(|c| joint.iter().map(|row| row[c]).sum())
        .collect();
    let tf = t as f64;
    let mut mi = 0.0;
    for (s, row) in joint.iter().enumerate() {
        for (c, &n) in row.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let ratio = (n as f64 * tf) / (symbol_counts[s] as f64 * class_counts[c] as f64);
            mi += n as f64 / tf * ratio.log2();
        }
    }
    mi.max(0.0)
}

/// Mutual information of an equal-frequency-discretized feature with the
/// labels, in bits. Uses `floor(T/2)` bins when fewer than `2 × bins`
/// samples are available.
pub fn mutual_information(
    feature: &[f64],
    labels: &[Label],
    bins: usize,
) -> Result<f64, SelectionError> {
    if feature.len() != labels.len() {
        return Err(SelectionError::LengthMismatch {
            features: feature.len(),
            labels: labels.len(),
        });
    }
    if bins == 0 {
        return Err(SelectionError::NoBins);
    }
    let t = feature.len();
    if t < 2 {
        return Err(SelectionError::TooFewSamples(t));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(SelectionError::ConstantLabels);
    }
    let bins = if t < 2 * bins {
        log::debug!("{t} samples for {bins} bins; using {} bins", t / 2);
        t / 2
    } else {
        bins
    };
    Ok(discrete_mutual_information(
        &equal_frequency_bins(feature, bins),
        labels,
    ))
}

/// Columns ordered by mutual information, highest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub order: Vec<usize>,
    /// Score of column `j`, in bits.
    pub scores: Vec<f64>,
}

impl Ranking {
    pub fn top(&self, n: usize) -> Vec<usize> {
        self.order[..n.min(self.order.len())].to_vec()
    }
}

fn rank_columns(
    values: &DMatrix<f64>,
    labels: &[Label],
    bins: usize,
) -> Result<Ranking, SelectionError> {
    let scores = (0..values.ncols())
        .map(|j| {
            let col: Vec<f64> = values.column(j).iter().copied().collect();
            mutual_information(&col, labels, bins)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(Ranking { order, scores })
}

pub fn rank_features(fm: &FeatureMatrix, bins: usize) -> Result<Ranking, SelectionError> {
    rank_columns(&fm.values, &fm.labels, bins)
}

/// Stratified k-fold assignment: each class is shuffled and dealt
/// round-robin, so every fold holds every class.
pub fn stratified_folds(
    labels: &[Label],
    folds: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, SelectionError> {
    if folds < 2 {
        return Err(SelectionError::Config(format!("need at least 2 folds, got {folds}")));
    }
    if labels.len() < folds {
        return Err(SelectionError::Config(format!(
            "{} trials for {folds} folds",
            labels.len()
        )));
    }
    let classes: BTreeSet<Label> = labels.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Vec::new(); folds];
    for class in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < folds {
            return Err(SelectionError::Stratification {
                class,
                count: members.len(),
                folds,
            });
        }
        members.shuffle(&mut rng);
        for (pos, idx) in members.into_iter().enumerate() {
            assignment[pos % folds].push(idx);
        }
    }
    for fold in &mut assignment {
        fold.sort_unstable();
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub bins: usize,
    pub folds: usize,
    /// Subset sizes to try; `None` means every size from 1 to F.
    pub candidate_ns: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            bins: 10,
            folds: 10,
            candidate_ns: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub n: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub n: usize,
    /// Top-`n` columns ranked on the full training set.
    pub selected: Vec<usize>,
    pub cv_curve: Vec<CvPoint>,
}

fn complement(n: usize, held: &[usize]) -> Vec<usize> {
    let held: BTreeSet<usize> = held.iter().copied().collect();
    (0..n).filter(|i| !held.contains(i)).collect()
}

/// Ranking computed from the training part of each fold (every row not in
/// that fold). Validation rows never contribute.
pub fn fold_rankings(
    fm: &FeatureMatrix,
    folds: &[Vec<usize>],
    bins: usize,
) -> Result<Vec<Ranking>, SelectionError> {
    let all: Vec<usize> = (0..fm.num_features()).collect();
    folds
        .par_iter()
        .map(|val_rows| {
            let (x, y) = fm.subset(&complement(fm.num_trials(), val_rows), &all);
            rank_columns(&x, &y, bins)
        })
        .collect()
}

/// Accuracy per candidate `n` on one held-out fold.
fn fold_accuracies(
    fm: &FeatureMatrix,
    val_rows: &[usize],
    ranking: &Ranking,
    candidates: &[usize],
) -> Result<Vec<f64>, SelectionError> {
    let train_rows = complement(fm.num_trials(), val_rows);
    candidates
        .iter()
        .map(|&n| {
            let cols = ranking.top(n);
            let (tx, ty) = fm.subset(&train_rows, &cols);
            let model = GaussianNbModel::fit(&tx, &ty)?;
            let (vx, vy) = fm.subset(val_rows, &cols);
            let predicted = model.predict_rows(&vx)?;
            let correct = predicted.iter().zip(&vy).filter(|(p, y)| p == y).count();
            Ok(correct as f64 / vy.len() as f64)
        })
        .collect()
}

pub fn select_top_n_cv(
    fm: &FeatureMatrix,
    config: &SelectionConfig,
) -> Result<CvSelection, SelectionError> {
    let f = fm.num_features();
    if f == 0 {
        return Err(SelectionError::Config("feature matrix has no columns".into()));
    }
    let candidates: Vec<usize> = match &config.candidate_ns {
        Some(ns) => {
            if let Some(bad) = ns.iter().find(|&&n| n == 0 || n > f) {
                return Err(SelectionError::Config(format!(
                    "candidate n = {bad} outside 1..={f}"
                )));
            }
            let set: BTreeSet<usize> = ns.iter().copied().collect();
            set.into_iter().collect()
        }
        None => (1..=f).collect(),
    };
    if candidates.is_empty() {
        return Err(SelectionError::Config("no candidate subset sizes".into()));
    }

    let folds = stratified_folds(&fm.labels, config.folds, config.seed)?;
    let rankings = fold_rankings(fm, &folds, config.bins)?;
    let per_fold = folds
        .par_iter()
        .zip(&rankings)
        .map(|(val_rows, ranking)| fold_accuracies(fm, val_rows, ranking, &candidates))
        .collect::<Result<Vec<_>, _>>()?;

    let k = per_fold.len() as f64;
    let cv_curve: Vec<CvPoint> = candidates
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let mean = per_fold.iter().map(|acc| acc[c]).sum::<f64>() / k;
            let var = per_fold.iter().map(|acc| (acc[c] - mean).powi(2)).sum::<f64>() / k;
            CvPoint {
                n,
                mean_accuracy: mean,
                std_accuracy: var.sqrt(),
            }
        })
        .collect();

    // strict improvement only, so ties keep the smaller n
    let best = cv_curve
        .iter()
        .fold(cv_curve[0], |best, p| if p.mean_accuracy > best.mean_accuracy { *p } else { best });

    let ranking = rank_features(fm, config.bins)?;
    Ok(CvSelection {
        n: best.n,
        selected: ranking.top(best.n),
        cv_curve,
    })
}

/// `n,mean_accuracy,std_accuracy` rows with a header.
pub fn cv_curve_csv(curve: &[CvPoint]) -> String {
    let mut out = String::from("n,mean_accuracy,std_accuracy\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.n, p.mean_accuracy, p.std_accuracy));
    }
    out
}
