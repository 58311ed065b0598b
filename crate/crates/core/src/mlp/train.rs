use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::network::{accuracy, weighted_loss, Activation, MlpModel, Mode};
use super::scaler::Scaler;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Per-class loss weights; `None` trains unweighted.
    pub class_weights: Option<Vec<f64>>,
    /// Stop once validation loss has not improved for this many epochs.
    /// Only consulted when a validation set is supplied.
    pub early_stopping_patience: Option<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_dims: vec![35, 35, 35],
            output_dim: 2,
            activation: Activation::default(),
            batch_norm: true,
            dropout_rate: 0.5,
            epochs: 200,
            adam: AdamConfig::default(),
            seed: 0,
            class_weights: None,
            early_stopping_patience: None,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.iter().any(|&d| d == 0) || self.output_dim == 0 {
            return Err(Error::Usage("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Usage(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Usage("epochs must be at least 1".into()));
        }
        if let Activation::Elu { alpha } = self.activation {
            if !(alpha > 0.0) {
                return Err(Error::Usage(format!("ELU alpha must be positive, got {alpha}")));
            }
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.output_dim || w.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Usage(
                    "class weights need one positive value per output".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// `epoch,train_loss,train_acc[,test_loss,test_acc]`
    pub fn to_csv(&self) -> String {
        let with_test = self.epochs.iter().any(|e| e.test_loss.is_some());
        let mut out = String::from("epoch,train_loss,train_acc");
        if with_test {
            out.push_str(",test_loss,test_acc");
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}", e.epoch, e.train_loss, e.train_acc));
            if with_test {
                let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!(",{},{}", fmt(e.test_loss), fmt(e.test_acc)));
            }
            out.push('\n');
        }
        out
    }
}

/// Labelled rows evaluated after every epoch but never used for updates.
pub struct Holdout<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: &'a Array2<f64>,
}

pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut t = Array2::zeros((labels.len(), classes));
    for (i, &k) in labels.iter().enumerate() {
        t[[i, k]] = 1.0;
    }
    t
}

/// Full-batch training with Adam.
///
/// Fits the feature scaler on `x`, initialises the network from
/// `config.seed`, then runs `config.epochs` updates. Batch-norm running
/// statistics follow each epoch's batch statistics with momentum 0.9.
///
/// `report` only feeds the test columns of the history. `validation`
/// drives early stopping when `config.early_stopping_patience` is set.
pub fn train(
    x: ArrayView2<'_, f64>,
    y: &Array2<f64>,
    config: &MlpConfig,
    report: Option<Holdout<'_>>,
    validation: Option<Holdout<'_>>,
) -> Result<(MlpModel, TrainHistory)> {
    config.validate()?;
    if x.nrows() < 2 {
        return Err(Error::InsufficientData(format!(
            "training needs at least 2 rows, got {}",
            x.nrows()
        )));
    }
    if y.nrows() != x.nrows() || y.ncols() != config.output_dim {
        return Err(Error::Shape(format!(
            "labels have shape {:?}, expected ({}, {})",
            y.dim(),
            x.nrows(),
            config.output_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite training feature".into()));
    }
    let class_counts: Vec<f64> = (0..config.output_dim)
        .map(|k| y.column(k).sum())
        .collect();
    if class_counts.iter().any(|&c| c == 0.0) {
        return Err(Error::DegenerateLabels(format!(
            "every class needs at least one training row; per-class counts {class_counts:?}"
        )));
    }
    let row_weights: Option<Vec<f64>> = config.class_weights.as_ref().map(|w| {
        y.rows()
            .into_iter()
            .map(|r| r.iter().zip(w).map(|(t, w)| t * w).sum())
            .collect()
    });

    let scaler = Scaler::fit(x);
    let xs = scaler.transform(x);
    let report_std = report.map(|h| (scaler.transform(h.x), h.y));
    let validation_std = validation.map(|h| (scaler.transform(h.x), h.y));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MlpModel::init(
        x.ncols(),
        &config.hidden_dims,
        config.output_dim,
        config.activation,
        config.dropout_rate,
        config.batch_norm,
        scaler,
        &mut rng,
    );
    let mut state = AdamState::zeros(model.parameters().iter().map(|p| p.len()));
    let mut history = TrainHistory::default();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;

    for epoch in 1..=config.epochs {
        let fwd = model.forward(xs.view(), Mode::Train(&mut rng))?;
        let cache = fwd.cache.expect("training pass returns a cache");
        let train_loss = weighted_loss(&fwd.probs, y, row_weights.as_deref());
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("loss is not finite at epoch {epoch}")));
        }
        let train_acc = accuracy(&fwd.probs, y);
        let grads = model.backward(&cache, y, row_weights.as_deref())?;
        adam_step(
            &mut model.parameters_mut(),
            &grads.0,
            &mut state,
            epoch as u64,
            &config.adam,
        )
        .map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("{msg} at epoch {epoch}")),
            other => other,
        })?;
        model.update_running_stats(&cache);

        let mut record = EpochRecord {
            epoch,
            train_loss,
            train_acc,
            test_loss: None,
            test_acc: None,
        };
        if let Some((hx, hy)) = &report_std {
            let probs = model.forward_infer(hx.view())?;
            record.test_loss = Some(weighted_loss(&probs, hy, None));
            record.test_acc = Some(accuracy(&probs, hy));
        }
        history.epochs.push(record);
        if let (Some(patience), Some((vx, vy))) =
            (config.early_stopping_patience, &validation_std)
        {
            let probs = model.forward_infer(vx.view())?;
            let l = weighted_loss(&probs, vy, None);
            if l < best_val {
                best_val = l;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    if !model.is_finite() {
        return Err(Error::Numeric("training produced non-finite parameters".into()));
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 3));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 2;
            let centre = if class == 0 { -1.5 } else { 1.5 };
            x[[i, 0]] = centre + rng.gen_range(-0.5..0.5);
            x[[i, 1]] = rng.gen_range(-1.0..1.0);
            x[[i, 2]] = rng.gen_range(-1.0..1.0);
            labels.push(class);
        }
        (x, one_hot(&labels, 2))
    }

    #[test]
    fn history_matches_epochs_and_is_reproducible() {
        let (x, y) = separable(20, 1);
        let cfg = MlpConfig {
            epochs: 15,
            seed: 9,
            ..MlpConfig::default()
        };
        let (m1, h1) = train(x.view(), &y, &cfg, None, None).unwrap();
        let (m2, h2) = train(x.view(), &y, &cfg, None, None).unwrap();
        assert_eq!(h1.len(), 15);
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = Array2::ones((4, 2));
        let y = one_hot(&[0, 0, 0, 0], 2);
        assert!(matches!(
            train(x.view(), &y, &MlpConfig::default(), None, None),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn early_stopping_needs_holdout_and_stops() {
        let (x, y) = separable(20, 2);
        let (hx, hy) = separable(10, 3);
        let cfg = MlpConfig {
            epochs: 400,
            early_stopping_patience: Some(5),
            ..MlpConfig::default()
        };
        let (_, hist) = train(x.view(), &y, &cfg, None, None).unwrap();
        assert_eq!(hist.len(), 400);
        let report = Holdout { x: hx.view(), y: &hy };
        let (_, hist) = train(x.view(), &y, &cfg, Some(report), None).unwrap();
        assert_eq!(hist.len(), 400);
        assert!(hist.epochs.iter().all(|e| e.test_loss.is_some()));
        // labels swapped so validation loss rises as training fits
        let flipped = hy.slice(ndarray::s![.., ..;-1]).to_owned();
        let val = Holdout { x: hx.view(), y: &flipped };
        let (_, hist) = train(x.view(), &y, &cfg, None, Some(val)).unwrap();
        assert!(hist.len() < 400);
        assert!(hist.epochs.iter().all(|e| e.test_loss.is_none()));
    }

    #[test]
    fn curve_csv_header() {
        let (x, y) = separable(10, 4);
        let cfg = MlpConfig {
            epochs: 3,
            ..MlpConfig::default()
        };
        let (_, hist) = train(x.view(), &y, &cfg, None, None).unwrap();
        let csv = hist.to_csv();
        assert!(csv.starts_with("epoch,train_loss,train_acc\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
