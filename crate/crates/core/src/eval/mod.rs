//! Leave-one-subject-out evaluation, o/x outcome grids and report output.

mod report;
mod svg;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{
    fit_cascade, predict_unseen, CascadeConfig, CascadeModel, CascadeMonitor, LabeledVector, Level,
    Prediction, TrialId, UnseenReport, UnseenTrial,
};
use crate::dataio::{load_landmark_trajectory, load_ppg, Dataset, TrialRecord};
use crate::error::{Error, Result};
use crate::landmarks::{
    average_movement_with, trim_trajectory, LandmarkGroup, MovementFeatures, MovementOptions,
};
use crate::mlp::{MlpModel, TrainHistory};
use crate::ppg::{extract_ppg_features, segment_beats, Beat, SegmentParams};
use crate::stats::{self, Summary};

pub use report::{render_report, write_run_manifest, RenderedReport};

/// Paper-reported accuracies, kept for side-by-side display only.
pub const REFERENCE_NN1_ACCURACY: f64 = 0.90;
pub const REFERENCE_NN2_ACCURACY: f64 = 0.80;
pub const REFERENCE_OVERALL_ACCURACY: f64 = 0.817;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    /// Seconds dropped from the start of every landmark trajectory.
    pub trim_seconds: f64,
    pub segment: SegmentParams,
    pub movement: MovementOptions,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            trim_seconds: 2.0,
            segment: SegmentParams::default(),
            movement: MovementOptions::default(),
        }
    }
}

/// Both feature vectors of one trial plus the beat periods behind D2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFeatures {
    pub id: TrialId,
    pub d1: Vec<f64>,
    /// Absent only for unseen trials whose PPG had too few beats.
    pub d2: Option<Vec<f64>>,
    pub beat_periods: Vec<f64>,
}

pub fn movement_features(
    dataset: &Dataset,
    trial: &TrialRecord,
    options: &FeatureOptions,
) -> Result<MovementFeatures> {
    let traj = load_landmark_trajectory(&dataset.resolve(&trial.landmark_path), dataset.fps)?;
    let trimmed = trim_trajectory(&traj, options.trim_seconds, dataset.fps)?;
    average_movement_with(&trimmed.to_derived()?, options.movement)
}

pub fn trial_beats(dataset: &Dataset, trial: &TrialRecord, options: &FeatureOptions) -> Result<Vec<Beat>> {
    let ppg = load_ppg(&dataset.resolve(&trial.ppg_path), Some(dataset.ppg_rate))?;
    segment_beats(&ppg, options.segment)
}

/// Loads, trims and featurises one trial. Labelled trials must yield both
/// feature sets; unseen trials may lack D2 when too few beats are found.
pub fn extract_trial_features(
    dataset: &Dataset,
    trial: &TrialRecord,
    options: &FeatureOptions,
) -> Result<TrialFeatures> {
    let d1 = movement_features(dataset, trial, options)?.into_vec();
    let beats = trial_beats(dataset, trial, options)?;
    let d2 = match extract_ppg_features(&beats) {
        Ok(f) => Some(f.into_vec()),
        Err(Error::InsufficientBeats { .. }) if !trial.label.is_labeled() => None,
        Err(Error::InsufficientBeats { found, required }) => {
            return Err(Error::InsufficientData(format!(
                "{}/{}: PPG has {found} beats, {required} needed",
                trial.subject_id, trial.label
            )))
        }
        Err(e) => return Err(e),
    };
    Ok(TrialFeatures {
        id: TrialId::new(&trial.subject_id, trial.label),
        d1,
        d2,
        beat_periods: beats.iter().map(Beat::period).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub cascade: CascadeConfig,
    pub features: FeatureOptions,
    pub seed: u64,
    /// Worker threads for the folds; 1 runs them sequentially. Results do
    /// not depend on it, so it is not recorded.
    #[serde(skip, default = "one")]
    pub jobs: usize,
    /// Early-stopping patience for NN2. The validation data is the next
    /// subject in fold order, removed from that fold's NN2 training rows.
    pub nn2_early_stopping: Option<usize>,
}

fn one() -> usize {
    1
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cascade: CascadeConfig::default(),
            features: FeatureOptions::default(),
            seed: 7,
            jobs: 1,
            nn2_early_stopping: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub id: TrialId,
    pub truth: Level,
    pub prediction: Prediction,
    /// NN2 probabilities for true 0% and 50% trials, whatever NN1 decided.
    pub nn2_probs: Option<[f64; 2]>,
}

impl TrialOutcome {
    pub fn correct(&self) -> bool {
        self.prediction.level == self.truth
    }

    pub fn nn1_correct(&self) -> bool {
        self.prediction.routed_to_a() == self.truth.in_group_a()
    }

    pub fn nn2_correct(&self) -> Option<bool> {
        let p = self.nn2_probs?;
        let predicted = if crate::mlp::argmax(&p) == 0 {
            Level::Pct0
        } else {
            Level::Pct50
        };
        Some(predicted == self.truth)
    }
}

/// Evidence that a fold's fitted statistics saw none of its held-out trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub held_out: Vec<TrialId>,
    /// Held-out trials found among NN1 / NN2 training rows. Batch-norm
    /// statistics are computed over the same full-batch rows.
    pub nn1_overlap: usize,
    pub nn2_overlap: usize,
    pub nn2_has_pct100: bool,
    /// Largest gap between each stored scaler and one refitted on the
    /// recorded training rows.
    pub nn1_scaler_deviation: f64,
    pub nn2_scaler_deviation: f64,
}

pub const SCALER_AUDIT_TOLERANCE: f64 = 1e-12;

impl LeakageAudit {
    pub fn passed(&self) -> bool {
        self.nn1_overlap == 0
            && self.nn2_overlap == 0
            && !self.nn2_has_pct100
            && self.nn1_scaler_deviation <= SCALER_AUDIT_TOLERANCE
            && self.nn2_scaler_deviation <= SCALER_AUDIT_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub held_out_subject: String,
    pub trials: Vec<TrialOutcome>,
    pub nn1_history: TrainHistory,
    pub nn2_history: TrainHistory,
    pub audit: LeakageAudit,
}

/// A row of o/x cells, one per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub name: String,
    pub cells: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    fn count(rows: &[GridRow]) -> Accuracy {
        Accuracy {
            correct: rows.iter().flat_map(|r| &r.cells).filter(|&&c| c).count(),
            total: rows.iter().map(|r| r.cells.len()).sum(),
        }
    }

    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBox {
    pub level: Level,
    pub group: LandmarkGroup,
    /// Over the per-trial mean movement of the group's landmarks.
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub level: Level,
    /// Over every segmented beat of every trial at this level.
    pub summary: Summary,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub nn1_accuracy: f64,
    pub nn2_accuracy: f64,
    pub overall_accuracy: f64,
    pub reproducible: bool,
    pub note: String,
}

impl Default for ReferenceValues {
    fn default() -> Self {
        ReferenceValues {
            nn1_accuracy: REFERENCE_NN1_ACCURACY,
            nn2_accuracy: REFERENCE_NN2_ACCURACY,
            overall_accuracy: REFERENCE_OVERALL_ACCURACY,
            reproducible: false,
            note: "published figures from a private 20-subject recording; not reproducible from this data".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub subjects: Vec<String>,
    /// Rows group A and group B. A group-B cell is 'o' only when both of
    /// that subject's 0% and 50% trials were routed to group B.
    pub nn1_grid: Vec<GridRow>,
    /// Rows 0% and 50%, scored on NN2's direct output.
    pub nn2_grid: Vec<GridRow>,
    /// Rows 0%, 50%, 100%, scored on the full cascade.
    pub final_grid: Vec<GridRow>,
    pub nn1_accuracy: Accuracy,
    pub nn2_accuracy: Accuracy,
    pub overall_accuracy: Accuracy,
    pub group_boxes: Vec<GroupBox>,
    pub intervals: Vec<IntervalSummary>,
    pub reference: ReferenceValues,
}

/// Everything `render_report` needs; serialised as `evaluation.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvOutcome {
    pub config: EvalConfig,
    pub report: EvaluationReport,
    pub folds: Vec<FoldResult>,
    pub features: Vec<TrialFeatures>,
    #[serde(default)]
    pub robustness: Option<UnseenReport>,
}

fn check_shape(dataset: &Dataset) -> Result<Vec<String>> {
    dataset.validate()?;
    let mut have: BTreeMap<&str, BTreeSet<Level>> = BTreeMap::new();
    for t in dataset.labeled() {
        let level = Level::from_label(t.label).expect("labeled");
        have.entry(&t.subject_id).or_default().insert(level);
    }
    for (subject, levels) in &have {
        if levels.len() != Level::ALL.len() {
            let missing: Vec<&str> = Level::ALL
                .iter()
                .filter(|l| !levels.contains(l))
                .map(|l| l.percent())
                .collect();
            return Err(Error::DatasetShape(format!(
                "subject {subject} is missing its {} trial",
                missing.join(" and ")
            )));
        }
    }
    if have.len() < 2 {
        return Err(Error::DatasetShape(format!(
            "cross-validation needs at least 2 subjects with labelled trials, found {}",
            have.len()
        )));
    }
    Ok(have.keys().map(|s| s.to_string()).collect())
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::Usage("jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker threads: {e}")))
}

/// Extracts features for every labelled trial, in manifest order.
pub fn extract_dataset_features(
    dataset: &Dataset,
    options: &FeatureOptions,
    jobs: usize,
) -> Result<Vec<TrialFeatures>> {
    let trials: Vec<&TrialRecord> = dataset.labeled().collect();
    thread_pool(jobs)?.install(|| {
        trials
            .par_iter()
            .map(|t| extract_trial_features(dataset, t, options))
            .collect()
    })
}

pub(crate) fn d1_vectors<'a>(rows: impl IntoIterator<Item = &'a TrialFeatures>) -> Vec<LabeledVector> {
    rows.into_iter()
        .map(|f| LabeledVector {
            id: f.id.clone(),
            level: Level::from_label(f.id.label).expect("labeled"),
            values: f.d1.clone(),
        })
        .collect()
}

pub(crate) fn d2_vectors<'a>(rows: impl IntoIterator<Item = &'a TrialFeatures>) -> Vec<LabeledVector> {
    rows.into_iter()
        .map(|f| LabeledVector {
            id: f.id.clone(),
            level: Level::from_label(f.id.label).expect("labeled"),
            values: f.d2.clone().expect("labelled trials carry D2"),
        })
        .collect()
}

/// Trains a cascade on every labelled trial.
pub fn fit_on_features(
    features: &[TrialFeatures],
    config: &CascadeConfig,
    seed: u64,
) -> Result<CascadeModel> {
    let cfg = config.clone().with_seed(seed);
    let (model, _) = fit_cascade(
        &d1_vectors(features),
        &d2_vectors(features),
        &cfg,
        &CascadeMonitor::default(),
    )?;
    Ok(model)
}

fn scaler_deviation(model: &MlpModel, rows: &[&[f64]]) -> f64 {
    let x = ndarray::Array2::from_shape_fn((rows.len(), model.input_dim()), |(i, j)| rows[i][j]);
    let refit = crate::mlp::Scaler::fit(x.view());
    refit
        .mean
        .iter()
        .zip(&model.scaler.mean)
        .chain(refit.sd.iter().zip(&model.scaler.sd))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn run_fold(
    fold: usize,
    subjects: &[String],
    features: &[TrialFeatures],
    config: &EvalConfig,
) -> Result<FoldResult> {
    let held_out = &subjects[fold];
    let seed = config.seed ^ fold as u64;
    let cascade = config.cascade.clone().with_seed(seed);

    let (test, train): (Vec<&TrialFeatures>, Vec<&TrialFeatures>) =
        features.iter().partition(|f| &f.id.subject == held_out);
    let validation_subject = config
        .nn2_early_stopping
        .map(|_| &subjects[(fold + 1) % subjects.len()]);
    let nn2_train = train
        .iter()
        .copied()
        .filter(|f| Some(&f.id.subject) != validation_subject);
    let validation = train
        .iter()
        .copied()
        .filter(|f| Some(&f.id.subject) == validation_subject);

    let mut cascade = cascade;
    cascade.nn2.early_stopping_patience = config.nn2_early_stopping;
    let monitor = CascadeMonitor {
        nn1_report: d1_vectors(test.iter().copied()),
        nn2_report: d2_vectors(test.iter().copied()),
        nn2_validation: d2_vectors(validation),
    };
    let (model, fit) = fit_cascade(
        &d1_vectors(train.iter().copied()),
        &d2_vectors(nn2_train),
        &cascade,
        &monitor,
    )?;

    let mut trials = Vec::with_capacity(test.len());
    for f in &test {
        let d2 = f.d2.as_deref().expect("labelled trials carry D2");
        let truth = Level::from_label(f.id.label).expect("labeled");
        let nn2_probs = (!truth.in_group_a())
            .then(|| model.nn2_probs(d2))
            .transpose()?;
        trials.push(TrialOutcome {
            id: f.id.clone(),
            truth,
            prediction: model.predict(&f.d1, Some(d2))?,
            nn2_probs,
        });
    }

    let by_id: BTreeMap<&TrialId, &TrialFeatures> = features.iter().map(|f| (&f.id, f)).collect();
    let held: BTreeSet<&TrialId> = test.iter().map(|f| &f.id).collect();
    let rows_of = |ids: &[TrialId], d2: bool| -> Vec<&[f64]> {
        ids.iter()
            .map(|id| {
                let f = by_id[id];
                if d2 {
                    f.d2.as_deref().expect("labelled trials carry D2")
                } else {
                    &f.d1[..]
                }
            })
            .collect()
    };
    let audit = LeakageAudit {
        held_out: test.iter().map(|f| f.id.clone()).collect(),
        nn1_overlap: fit.nn1_rows.iter().filter(|id| held.contains(id)).count(),
        nn2_overlap: fit.nn2_rows.iter().filter(|id| held.contains(id)).count(),
        nn2_has_pct100: fit
            .nn2_rows
            .iter()
            .any(|id| id.label == crate::dataio::Label::Pct100),
        nn1_scaler_deviation: scaler_deviation(&model.nn1, &rows_of(&fit.nn1_rows, false)),
        nn2_scaler_deviation: scaler_deviation(&model.nn2, &rows_of(&fit.nn2_rows, true)),
    };

    Ok(FoldResult {
        fold,
        seed,
        held_out_subject: held_out.clone(),
        trials,
        nn1_history: fit.nn1_history,
        nn2_history: fit.nn2_history,
        audit,
    })
}

/// One fold per subject. Every fitted quantity of a fold (scalers, weights,
/// batch-norm statistics) comes from the other subjects only.
pub fn loocv(dataset: &Dataset, config: &EvalConfig) -> Result<LoocvOutcome> {
    let subjects = check_shape(dataset)?;
    let features = extract_dataset_features(dataset, &config.features, config.jobs)?;
    loocv_on_features(subjects, features, config)
}

pub fn loocv_on_features(
    subjects: Vec<String>,
    features: Vec<TrialFeatures>,
    config: &EvalConfig,
) -> Result<LoocvOutcome> {
    let folds: Vec<FoldResult> = thread_pool(config.jobs)?.install(|| {
        (0..subjects.len())
            .into_par_iter()
            .map(|k| run_fold(k, &subjects, &features, config))
            .collect::<Result<_>>()
    })?;
    let report = build_report(&subjects, &folds, &features)?;
    Ok(LoocvOutcome {
        config: config.clone(),
        report,
        folds,
        features,
        robustness: None,
    })
}

/// Builds o/x grids, accuracies and descriptive statistics from fold results.
pub fn build_report(
    subjects: &[String],
    folds: &[FoldResult],
    features: &[TrialFeatures],
) -> Result<EvaluationReport> {
    let outcomes: BTreeMap<(&str, Level), &TrialOutcome> = folds
        .iter()
        .flat_map(|f| &f.trials)
        .map(|t| ((t.id.subject.as_str(), t.truth), t))
        .collect();
    let get = |s: &str, level: Level| -> Result<&TrialOutcome> {
        outcomes.get(&(s, level)).copied().ok_or_else(|| {
            Error::DatasetShape(format!("no {} outcome for subject {s}", level.percent()))
        })
    };
    let row = |name: &str, f: &dyn Fn(&str) -> Result<bool>| -> Result<GridRow> {
        Ok(GridRow {
            name: name.to_string(),
            cells: subjects.iter().map(|s| f(s)).collect::<Result<_>>()?,
        })
    };

    let final_grid = vec![
        row("0%", &|s| Ok(get(s, Level::Pct0)?.correct()))?,
        row("50%", &|s| Ok(get(s, Level::Pct50)?.correct()))?,
        row("100%", &|s| Ok(get(s, Level::Pct100)?.correct()))?,
    ];
    let nn1_grid = vec![
        row("group A (100%)", &|s| Ok(get(s, Level::Pct100)?.nn1_correct()))?,
        row("group B (0% & 50%)", &|s| {
            Ok(get(s, Level::Pct0)?.nn1_correct() && get(s, Level::Pct50)?.nn1_correct())
        })?,
    ];
    let nn2_cell = |s: &str, level: Level| -> Result<bool> {
        get(s, level)?
            .nn2_correct()
            .ok_or_else(|| Error::DatasetShape(format!("no NN2 output for {s}/{}", level.percent())))
    };
    let nn2_grid = vec![
        row("0%", &|s| nn2_cell(s, Level::Pct0))?,
        row("50%", &|s| nn2_cell(s, Level::Pct50))?,
    ];

    let mut group_boxes = Vec::new();
    for level in Level::ALL {
        let at_level: Vec<&TrialFeatures> = features
            .iter()
            .filter(|f| Level::from_label(f.id.label) == Some(level))
            .collect();
        for group in LandmarkGroup::ALL {
            let idx = group.indices();
            let values: Vec<f64> = at_level
                .iter()
                .map(|f| stats::mean(&idx.iter().map(|&j| f.d1[j]).collect::<Vec<_>>()))
                .collect();
            if let Some(summary) = stats::summarize(&values) {
                group_boxes.push(GroupBox {
                    level,
                    group,
                    summary,
                });
            }
        }
    }
    let mut intervals = Vec::new();
    for level in [Level::Pct0, Level::Pct50] {
        let periods: Vec<f64> = features
            .iter()
            .filter(|f| Level::from_label(f.id.label) == Some(level))
            .flat_map(|f| f.beat_periods.iter().copied())
            .collect();
        if let Some(summary) = stats::summarize(&periods) {
            intervals.push(IntervalSummary {
                level,
                summary,
                sd: stats::sample_sd(&periods),
            });
        }
    }

    Ok(EvaluationReport {
        subjects: subjects.to_vec(),
        nn1_accuracy: Accuracy::count(&nn1_grid),
        nn2_accuracy: Accuracy::count(&nn2_grid),
        overall_accuracy: Accuracy::count(&final_grid),
        nn1_grid,
        nn2_grid,
        final_grid,
        group_boxes,
        intervals,
        reference: ReferenceValues::default(),
    })
}

/// Features of every unseen trial in the dataset, in manifest order.
pub fn extract_unseen(dataset: &Dataset, options: &FeatureOptions) -> Result<Vec<UnseenTrial>> {
    dataset
        .unseen()
        .map(|t| {
            let f = extract_trial_features(dataset, t, options)?;
            Ok(UnseenTrial {
                id: f.id,
                d1: f.d1,
                d2: f.d2,
            })
        })
        .collect()
}

/// Runs the unseen-activity trials through a trained cascade.
pub fn robustness_eval(
    dataset: &Dataset,
    model: Option<&CascadeModel>,
    options: &FeatureOptions,
) -> Result<UnseenReport> {
    let model = model.ok_or_else(|| {
        Error::Usage("robustness evaluation needs a trained cascade model".into())
    })?;
    predict_unseen(model, &extract_unseen(dataset, options)?)
}
