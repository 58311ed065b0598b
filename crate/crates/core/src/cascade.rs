//! Two-stage force-level classifier.
//!
//! NN1 reads the 128 movement features and separates group A (100%) from
//! group B (0% and 50%). Trials routed to group B go on to NN2, which reads
//! the 21 PPG features and separates 0% from 50%.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::landmarks::DERIVED_POINTS;
use crate::mlp::{self, argmax, Holdout, MlpConfig, MlpModel, TrainHistory};
use crate::ppg::PPG_FEATURES;

/// One of the three trained force levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Pct0,
    Pct50,
    Pct100,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Pct0, Level::Pct50, Level::Pct100];

    pub fn label(self) -> Label {
        match self {
            Level::Pct0 => Label::Pct0,
            Level::Pct50 => Label::Pct50,
            Level::Pct100 => Label::Pct100,
        }
    }

    pub fn from_label(label: Label) -> Option<Level> {
        match label {
            Label::Pct0 => Some(Level::Pct0),
            Label::Pct50 => Some(Level::Pct50),
            Label::Pct100 => Some(Level::Pct100),
            Label::Unseen => None,
        }
    }

    pub fn percent(self) -> &'static str {
        match self {
            Level::Pct0 => "0%",
            Level::Pct50 => "50%",
            Level::Pct100 => "100%",
        }
    }

    pub fn in_group_a(self) -> bool {
        self == Level::Pct100
    }
}

/// Identifies a trial within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialId {
    pub subject: String,
    pub label: Label,
}

impl TrialId {
    pub fn new(subject: impl Into<String>, label: Label) -> Self {
        TrialId {
            subject: subject.into(),
            label,
        }
    }
}

impl std::fmt::Display for TrialId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.subject, self.label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub id: TrialId,
    pub level: Level,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub nn1: MlpConfig,
    pub nn2: MlpConfig,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            nn1: MlpConfig {
                epochs: 200,
                ..MlpConfig::default()
            },
            nn2: MlpConfig {
                epochs: 175,
                ..MlpConfig::default()
            },
        }
    }
}

impl CascadeConfig {
    /// Derives both network seeds from one master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.nn1.seed = seed;
        self.nn2.seed = seed ^ 0x9e37_79b9_7f4a_7c15;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeMetadata {
    pub nn1_seed: u64,
    pub nn2_seed: u64,
    pub nn1_epochs: usize,
    pub nn2_epochs: usize,
    pub nn1_training_rows: usize,
    pub nn2_training_rows: usize,
    /// Output class names, index order, for each stage.
    pub nn1_classes: [String; 2],
    pub nn2_classes: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    pub nn1: MlpModel,
    pub nn2: MlpModel,
    pub metadata: CascadeMetadata,
}

/// Training-side record of a fit: curves plus the exact rows each network
/// (and therefore its scaler and batch statistics) saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeFit {
    pub nn1_history: TrainHistory,
    pub nn2_history: TrainHistory,
    pub nn1_rows: Vec<TrialId>,
    pub nn2_rows: Vec<TrialId>,
}

/// Optional per-epoch monitoring data for each stage.
#[derive(Debug, Clone, Default)]
pub struct CascadeMonitor {
    /// Evaluated each epoch for the training curves only.
    pub nn1_report: Vec<LabeledVector>,
    pub nn2_report: Vec<LabeledVector>,
    /// Drives NN2 early stopping when the NN2 config enables it.
    pub nn2_validation: Vec<LabeledVector>,
}

fn matrix(rows: &[&LabeledVector], dim: usize, stage: &str) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        if r.values.len() != dim {
            return Err(Error::Shape(format!(
                "{stage} row {} has {} features, expected {dim}",
                r.id,
                r.values.len()
            )));
        }
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&r.values[..]));
    }
    Ok(x)
}

fn nn1_class(level: Level) -> usize {
    if level.in_group_a() {
        0
    } else {
        1
    }
}

fn nn2_class(level: Level) -> Option<usize> {
    match level {
        Level::Pct0 => Some(0),
        Level::Pct50 => Some(1),
        Level::Pct100 => None,
    }
}

fn stage_data(
    rows: &[&LabeledVector],
    dim: usize,
    stage: &str,
    class_of: impl Fn(Level) -> usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let x = matrix(rows, dim, stage)?;
    let labels: Vec<usize> = rows.iter().map(|r| class_of(r.level)).collect();
    Ok((x, mlp::one_hot(&labels, 2)))
}

/// Trains NN1 on every movement vector (A = 100%, B = 0% and 50%) and NN2 on
/// the 0% and 50% PPG vectors. 100% rows in `d2_set` are skipped.
pub fn fit_cascade(
    d1_set: &[LabeledVector],
    d2_set: &[LabeledVector],
    config: &CascadeConfig,
    monitor: &CascadeMonitor,
) -> Result<(CascadeModel, CascadeFit)> {
    let nn1_rows: Vec<&LabeledVector> = d1_set.iter().collect();
    for level in Level::ALL {
        if !nn1_rows.iter().any(|r| r.level == level) {
            return Err(Error::DegenerateLabels(format!(
                "NN1 training set has no {} samples",
                level.percent()
            )));
        }
    }
    let nn2_rows: Vec<&LabeledVector> = d2_set
        .iter()
        .filter(|r| nn2_class(r.level).is_some())
        .collect();
    for level in [Level::Pct0, Level::Pct50] {
        if !nn2_rows.iter().any(|r| r.level == level) {
            return Err(Error::DegenerateLabels(format!(
                "NN2 training set has no {} samples",
                level.percent()
            )));
        }
    }

    let (x1, y1) = stage_data(&nn1_rows, DERIVED_POINTS, "NN1", nn1_class)?;
    let (x2, y2) = stage_data(&nn2_rows, PPG_FEATURES, "NN2", |l| {
        nn2_class(l).expect("filtered")
    })?;

    let report1: Vec<&LabeledVector> = monitor.nn1_report.iter().collect();
    let report2: Vec<&LabeledVector> = monitor
        .nn2_report
        .iter()
        .filter(|r| nn2_class(r.level).is_some())
        .collect();
    let val2: Vec<&LabeledVector> = monitor
        .nn2_validation
        .iter()
        .filter(|r| nn2_class(r.level).is_some())
        .collect();
    let r1 = (!report1.is_empty())
        .then(|| stage_data(&report1, DERIVED_POINTS, "NN1", nn1_class))
        .transpose()?;
    let r2 = (!report2.is_empty())
        .then(|| stage_data(&report2, PPG_FEATURES, "NN2", |l| nn2_class(l).expect("filtered")))
        .transpose()?;
    let v2 = (!val2.is_empty())
        .then(|| stage_data(&val2, PPG_FEATURES, "NN2", |l| nn2_class(l).expect("filtered")))
        .transpose()?;

    let (nn1, nn1_history) = mlp::train(
        x1.view(),
        &y1,
        &config.nn1,
        r1.as_ref().map(|(x, y)| Holdout { x: x.view(), y }),
        None,
    )?;
    let (nn2, nn2_history) = mlp::train(
        x2.view(),
        &y2,
        &config.nn2,
        r2.as_ref().map(|(x, y)| Holdout { x: x.view(), y }),
        v2.as_ref().map(|(x, y)| Holdout { x: x.view(), y }),
    )?;

    let model = CascadeModel {
        nn1,
        nn2,
        metadata: CascadeMetadata {
            nn1_seed: config.nn1.seed,
            nn2_seed: config.nn2.seed,
            nn1_epochs: nn1_history.len(),
            nn2_epochs: nn2_history.len(),
            nn1_training_rows: nn1_rows.len(),
            nn2_training_rows: nn2_rows.len(),
            nn1_classes: ["group A (100%)".into(), "group B (0% & 50%)".into()],
            nn2_classes: ["0%".into(), "50%".into()],
        },
    };
    let fit = CascadeFit {
        nn1_history,
        nn2_history,
        nn1_rows: nn1_rows.iter().map(|r| r.id.clone()).collect(),
        nn2_rows: nn2_rows.iter().map(|r| r.id.clone()).collect(),
    };
    Ok((model, fit))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub level: Level,
    /// (group A, group B)
    pub group_probs: [f64; 2],
    /// (0%, 50%), present only for group-B routings.
    pub level_probs: Option<[f64; 2]>,
}

impl Prediction {
    pub fn routed_to_a(&self) -> bool {
        self.level == Level::Pct100
    }

    /// Combines stage outputs by argmax, ties going to group A and to 0%.
    /// `level_probs` is consulted (and required) only for group-B routings.
    pub fn from_probabilities(
        group_probs: [f64; 2],
        level_probs: impl FnOnce() -> Result<[f64; 2]>,
    ) -> Result<Prediction> {
        if argmax(&group_probs) == 0 {
            return Ok(Prediction {
                level: Level::Pct100,
                group_probs,
                level_probs: None,
            });
        }
        let lp = level_probs()?;
        let level = if argmax(&lp) == 0 {
            Level::Pct0
        } else {
            Level::Pct50
        };
        Ok(Prediction {
            level,
            group_probs,
            level_probs: Some(lp),
        })
    }
}

fn probs_row(model: &MlpModel, values: &[f64], stage: &str, dim: usize) -> Result<[f64; 2]> {
    if values.len() != dim {
        return Err(Error::Shape(format!(
            "{stage} input has {} features, expected {dim}",
            values.len()
        )));
    }
    let x = Array2::from_shape_vec((1, dim), values.to_vec()).expect("shape checked");
    let p = model.predict_proba(x.view())?;
    Ok([p[[0, 0]], p[[0, 1]]])
}

impl CascadeModel {
    pub fn nn1_probs(&self, d1: &[f64]) -> Result<[f64; 2]> {
        probs_row(&self.nn1, d1, "NN1", DERIVED_POINTS)
    }

    pub fn nn2_probs(&self, d2: &[f64]) -> Result<[f64; 2]> {
        probs_row(&self.nn2, d2, "NN2", PPG_FEATURES)
    }

    /// Routes one trial through the cascade. `d2` may be absent when NN1
    /// assigns the trial to group A.
    pub fn predict(&self, d1: &[f64], d2: Option<&[f64]>) -> Result<Prediction> {
        let group = self.nn1_probs(d1)?;
        Prediction::from_probabilities(group, || match d2 {
            Some(d2) => self.nn2_probs(d2),
            None => Err(Error::MissingFeatures(
                "trial routed to group B but no PPG features were supplied".into(),
            )),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.nn1.input_dim() == DERIVED_POINTS
            && self.nn2.input_dim() == PPG_FEATURES
            && self.nn1.output_dim() == 2
            && self.nn2.output_dim() == 2;
        if !ok {
            return Err(Error::Format(format!(
                "cascade stages have shapes {}->{} and {}->{}, expected {DERIVED_POINTS}->2 and {PPG_FEATURES}->2",
                self.nn1.input_dim(),
                self.nn1.output_dim(),
                self.nn2.input_dim(),
                self.nn2.output_dim()
            )));
        }
        if !self.nn1.is_finite() || !self.nn2.is_finite() {
            return Err(Error::Numeric("cascade has non-finite parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnseenTrial {
    pub id: TrialId,
    pub d1: Vec<f64>,
    pub d2: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnseenReport {
    pub predictions: Vec<(TrialId, Prediction)>,
    pub routed_a: usize,
    pub routed_b: usize,
    pub pct0: usize,
    pub pct50: usize,
}

impl UnseenReport {
    pub fn summary_line(&self) -> String {
        let total = self.predictions.len();
        if total == 0 {
            return "no unseen-activity trials to evaluate".into();
        }
        format!(
            "{} of {total} routed to group B; NN2 predicted 0% for {} and 50% for {}",
            self.routed_b, self.pct0, self.pct50
        )
    }
}

pub fn predict_unseen(model: &CascadeModel, trials: &[UnseenTrial]) -> Result<UnseenReport> {
    let mut report = UnseenReport::default();
    for t in trials {
        let p = model.predict(&t.d1, t.d2.as_deref())?;
        match p.level {
            Level::Pct100 => report.routed_a += 1,
            Level::Pct0 => {
                report.routed_b += 1;
                report.pct0 += 1;
            }
            Level::Pct50 => {
                report.routed_b += 1;
                report.pct50 += 1;
            }
        }
        report.predictions.push((t.id.clone(), p));
    }
    Ok(report)
}

pub const PREDICTION_CSV_HEADER: &str = "subject,label,predicted,probA,probB,prob0,prob50";

/// `subject,label,predicted,probA,probB,prob0,prob50`; unknown label and
/// absent stage-2 probabilities are left empty.
pub fn prediction_csv_row(subject: &str, label: Option<Label>, p: &Prediction) -> String {
    let (p0, p50) = p
        .level_probs
        .map(|[a, b]| (a.to_string(), b.to_string()))
        .unwrap_or_default();
    format!(
        "{subject},{},{},{},{},{p0},{p50}",
        label.map(|l| l.to_string()).unwrap_or_default(),
        p.level.label(),
        p.group_probs[0],
        p.group_probs[1],
    )
}
