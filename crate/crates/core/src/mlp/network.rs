use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::scaler::Scaler;
use crate::error::{Error, Result};

/// Lower clamp on probabilities inside the cross-entropy logarithm.
pub const LOG_EPSILON: f64 = 1e-12;
/// Added to the batch variance before normalising.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Elu { alpha: f64 },
    /// Linear pass-through, used to check gradients on a purely affine stack.
    Identity,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Elu { alpha: 1.0 }
    }
}

/// Exponential linear unit: `x` for `x >= 0`, otherwise `alpha * (e^x - 1)`.
pub fn elu(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu { alpha } => elu(x, alpha),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu { alpha } => {
                if x >= 0.0 {
                    1.0
                } else {
                    alpha * x.exp()
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `inputs x outputs`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: Option<BatchNorm>,
}

/// Fully connected classifier: hidden blocks of affine, batch norm,
/// activation and dropout, then an affine softmax output. Carries the
/// feature scaler fitted on its training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub scaler: Scaler,
}

/// Which normalisation statistics a training-mode pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormStats {
    /// Mean and variance of the current batch; gradients flow through them.
    Batch,
    /// The stored running statistics, treated as constants.
    Running,
}

/// Per-hidden-layer dropout multipliers: 0 for dropped units,
/// `1 / (1 - rate)` for kept ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks(pub Vec<Array2<f64>>);

impl DropoutMasks {
    pub fn sample(model: &MlpModel, rows: usize, rng: &mut dyn RngCore) -> Self {
        let rate = model.dropout_rate;
        let keep = 1.0 / (1.0 - rate);
        DropoutMasks(
            model
                .hidden
                .iter()
                .map(|layer| {
                    Array2::from_shape_simple_fn((rows, layer.dense.bias.len()), || {
                        if rate > 0.0 && rng.gen::<f64>() < rate {
                            0.0
                        } else {
                            keep
                        }
                    })
                })
                .collect(),
        )
    }

    pub fn keep_all(model: &MlpModel, rows: usize) -> Self {
        DropoutMasks(
            model
                .hidden
                .iter()
                .map(|layer| Array2::ones((rows, layer.dense.bias.len())))
                .collect(),
        )
    }
}

pub enum Mode<'a> {
    Infer,
    Train(&'a mut dyn RngCore),
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    pre_activation: Array2<f64>,
    normalized: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    batch_mean: Option<Array1<f64>>,
    batch_var: Option<Array1<f64>>,
    mask: Array2<f64>,
}

/// Intermediate values of a training-mode forward pass, consumed by
/// [`MlpModel::backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    layers: Vec<LayerCache>,
    last_hidden: Array2<f64>,
    logits: Array2<f64>,
    probs: Array2<f64>,
    stats: NormStats,
}

impl Cache {
    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn masks(&self) -> DropoutMasks {
        DropoutMasks(self.layers.iter().map(|l| l.mask.clone()).collect())
    }
}

pub struct Forward {
    pub probs: Array2<f64>,
    pub cache: Option<Cache>,
}

/// Gradients in [`MlpModel::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean categorical cross-entropy, `-sum_k t_k ln(max(p_k, 1e-12))` per row.
pub fn loss(probs: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    weighted_loss(probs, targets, None)
}

/// Cross-entropy averaged with per-row weights (plain mean when `None`).
pub fn weighted_loss(probs: &Array2<f64>, targets: &Array2<f64>, weights: Option<&[f64]>) -> f64 {
    let mut total = 0.0;
    let mut norm = 0.0;
    for (i, (p, t)) in probs.rows().into_iter().zip(targets.rows()).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let row: f64 = p
            .iter()
            .zip(t)
            .map(|(p, t)| -t * p.max(LOG_EPSILON).ln())
            .sum();
        total += w * row;
        norm += w;
    }
    total / norm
}

/// [`loss`] evaluated from logits through a log-softmax, which keeps full
/// relative precision when the target probability is close to 1.
pub fn loss_from_logits(logits: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    let floor = LOG_EPSILON.ln();
    let mut total = 0.0;
    for (z, t) in logits.rows().into_iter().zip(targets.rows()) {
        let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        // sum of exp(z_j - max) over j != argmax, so the log uses ln_1p
        let top = z.iter().position(|&v| v == max).unwrap_or(0);
        let rest: f64 = z
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != top)
            .map(|(_, v)| (v - max).exp())
            .sum();
        let lse = rest.ln_1p();
        total += z
            .iter()
            .zip(t)
            .map(|(v, t)| -t * (v - max - lse).max(floor))
            .sum::<f64>();
    }
    total / logits.nrows() as f64
}

/// Fraction of rows whose probability argmax (lowest index on ties) matches
/// the one-hot target.
pub fn accuracy(probs: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    let correct = probs
        .rows()
        .into_iter()
        .zip(targets.rows())
        .filter(|(p, t)| argmax(p.as_slice().unwrap()) == argmax(t.as_slice().unwrap()))
        .count();
    correct as f64 / probs.nrows() as f64
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_finite(a: &Array2<f64>, layer: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activation in {layer}")))
    }
}

impl MlpModel {
    /// Random initial weights: uniform in `±sqrt(6 / fan_in)`, zero biases,
    /// unit batch-norm scale and running variance.
    pub fn init(
        input_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
        activation: Activation,
        dropout_rate: f64,
        batch_norm: bool,
        scaler: Scaler,
        rng: &mut dyn RngCore,
    ) -> MlpModel {
        let mut dense = |fan_in: usize, fan_out: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            Dense {
                weights: Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    rng.gen_range(-bound..bound)
                }),
                bias: Array1::zeros(fan_out),
            }
        };
        let mut hidden = Vec::with_capacity(hidden_dims.len());
        let mut fan_in = input_dim;
        for &width in hidden_dims {
            hidden.push(HiddenLayer {
                dense: dense(fan_in, width),
                norm: batch_norm.then(|| BatchNorm {
                    gamma: Array1::ones(width),
                    beta: Array1::zeros(width),
                    running_mean: Array1::zeros(width),
                    running_var: Array1::ones(width),
                }),
            });
            fan_in = width;
        }
        let output = dense(fan_in, output_dim);
        MlpModel {
            hidden,
            output,
            activation,
            dropout_rate,
            scaler,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.bias.len()
    }

    /// Every trainable tensor, flattened: per hidden layer weights, bias and
    /// (with batch norm) gamma, beta; then output weights and bias.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.hidden {
            out.push(layer.dense.weights.as_slice().expect("standard layout"));
            out.push(layer.dense.bias.as_slice().expect("standard layout"));
            if let Some(bn) = &layer.norm {
                out.push(bn.gamma.as_slice().expect("standard layout"));
                out.push(bn.beta.as_slice().expect("standard layout"));
            }
        }
        out.push(self.output.weights.as_slice().expect("standard layout"));
        out.push(self.output.bias.as_slice().expect("standard layout"));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.hidden {
            out.push(layer.dense.weights.as_slice_mut().expect("standard layout"));
            out.push(layer.dense.bias.as_slice_mut().expect("standard layout"));
            if let Some(bn) = &mut layer.norm {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.output.weights.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.hidden.iter().all(|l| {
                l.norm.as_ref().map_or(true, |bn| {
                    bn.running_mean.iter().all(|v| v.is_finite())
                        && bn.running_var.iter().all(|v| v.is_finite() && *v >= 0.0)
                })
            })
            && self.scaler.mean.iter().all(|v| v.is_finite())
            && self.scaler.sd.iter().all(|v| v.is_finite() && *v > 0.0)
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        let expected = self.hidden.first().map_or(self.output.weights.nrows(), |l| {
            l.dense.weights.nrows()
        });
        if x.ncols() != expected {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {expected}",
                x.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Shape("empty input batch".into()));
        }
        Ok(())
    }

    /// Forward pass on already-standardised inputs.
    pub fn forward(&self, x: ArrayView2<'_, f64>, mode: Mode<'_>) -> Result<Forward> {
        match mode {
            Mode::Infer => Ok(Forward {
                probs: self.forward_infer(x)?,
                cache: None,
            }),
            Mode::Train(rng) => {
                self.check_input(x)?;
                let masks = DropoutMasks::sample(self, x.nrows(), rng);
                let cache = self.forward_with(x, &masks, NormStats::Batch)?;
                Ok(Forward {
                    probs: cache.probs.clone(),
                    cache: Some(cache),
                })
            }
        }
    }

    /// Deterministic inference: running statistics, no dropout.
    pub fn forward_infer(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.to_owned();
        for (k, layer) in self.hidden.iter().enumerate() {
            let mut y = layer.dense.forward(h.view());
            if let Some(bn) = &layer.norm {
                let scale = (&bn.running_var + BN_EPSILON).mapv(|v| 1.0 / v.sqrt());
                y = (&y - &bn.running_mean) * &scale * &bn.gamma + &bn.beta;
            }
            h = y.mapv(|v| self.activation.apply(v));
            check_finite(&h, &format!("hidden layer {}", k + 1))?;
        }
        let logits = self.output.forward(h.view());
        check_finite(&logits, "output layer")?;
        Ok(softmax_rows(&logits))
    }

    /// Training-mode pass with explicit dropout masks and a choice of
    /// normalisation statistics; returns the cache needed by `backward`.
    pub fn forward_with(
        &self,
        x: ArrayView2<'_, f64>,
        masks: &DropoutMasks,
        stats: NormStats,
    ) -> Result<Cache> {
        self.check_input(x)?;
        if masks.0.len() != self.hidden.len() {
            return Err(Error::Shape(format!(
                "{} dropout masks for {} hidden layers",
                masks.0.len(),
                self.hidden.len()
            )));
        }
        let n = x.nrows() as f64;
        let mut h = x.to_owned();
        let mut layers = Vec::with_capacity(self.hidden.len());
        for (k, (layer, mask)) in self.hidden.iter().zip(&masks.0).enumerate() {
            if mask.dim() != (x.nrows(), layer.dense.bias.len()) {
                return Err(Error::Shape(format!(
                    "dropout mask {} has shape {:?}",
                    k + 1,
                    mask.dim()
                )));
            }
            let z = layer.dense.forward(h.view());
            let mut cache = LayerCache {
                input: h,
                pre_activation: z,
                normalized: None,
                inv_std: None,
                batch_mean: None,
                batch_var: None,
                mask: mask.clone(),
            };
            if let Some(bn) = &layer.norm {
                let (mean, var) = match stats {
                    NormStats::Batch => {
                        let z = &cache.pre_activation;
                        let mean = z.sum_axis(Axis(0)) / n;
                        let var = (z - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / n;
                        (mean, var)
                    }
                    NormStats::Running => (bn.running_mean.clone(), bn.running_var.clone()),
                };
                let inv_std = (&var + BN_EPSILON).mapv(|v| 1.0 / v.sqrt());
                let xhat = (&cache.pre_activation - &mean) * &inv_std;
                cache.pre_activation = &xhat * &bn.gamma + &bn.beta;
                cache.normalized = Some(xhat);
                cache.inv_std = Some(inv_std);
                if stats == NormStats::Batch {
                    cache.batch_mean = Some(mean);
                    cache.batch_var = Some(var);
                }
            }
            let activated = cache.pre_activation.mapv(|v| self.activation.apply(v));
            h = activated * mask;
            check_finite(&h, &format!("hidden layer {}", k + 1))?;
            layers.push(cache);
        }
        let logits = self.output.forward(h.view());
        check_finite(&logits, "output layer")?;
        let probs = softmax_rows(&logits);
        Ok(Cache {
            layers,
            last_hidden: h,
            logits,
            probs,
            stats,
        })
    }

    /// Exact gradients of the (optionally row-weighted) mean cross-entropy.
    pub fn backward(
        &self,
        cache: &Cache,
        targets: &Array2<f64>,
        weights: Option<&[f64]>,
    ) -> Result<Gradients> {
        let rows = cache.probs.nrows();
        let stale = cache.layers.len() != self.hidden.len()
            || cache.probs.ncols() != self.output_dim()
            || cache
                .layers
                .iter()
                .zip(&self.hidden)
                .any(|(c, l)| c.pre_activation.ncols() != l.dense.bias.len()
                    || c.normalized.is_some() != l.norm.is_some());
        if stale {
            return Err(Error::Usage(
                "cache does not belong to this network; run a training forward pass first".into(),
            ));
        }
        if targets.dim() != cache.probs.dim() {
            return Err(Error::Shape(format!(
                "targets have shape {:?}, predictions {:?}",
                targets.dim(),
                cache.probs.dim()
            )));
        }
        if weights.is_some_and(|w| w.len() != rows) {
            return Err(Error::Shape("one weight per row required".into()));
        }
        let total_weight: f64 = weights.map_or(rows as f64, |w| w.iter().sum());

        // d loss / d logits; a clamped probability contributes no gradient
        let mut grad = Array2::zeros(cache.probs.dim());
        for (i, ((p, t), mut g)) in cache
            .probs
            .rows()
            .into_iter()
            .zip(targets.rows())
            .zip(grad.rows_mut())
            .enumerate()
        {
            let w: Vec<f64> = p
                .iter()
                .zip(t)
                .map(|(p, t)| if *p > LOG_EPSILON { *t } else { 0.0 })
                .collect();
            let w_sum: f64 = w.iter().sum();
            let scale = weights.map_or(1.0, |ws| ws[i]) / total_weight;
            for (k, g) in g.iter_mut().enumerate() {
                *g = (p[k] * w_sum - w[k]) * scale;
            }
        }

        let mut tensors: Vec<Vec<f64>> = Vec::new();
        let out_w = cache.last_hidden.t().dot(&grad);
        let out_b = grad.sum_axis(Axis(0));
        let mut upstream = grad.dot(&self.output.weights.t());

        let mut per_layer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.hidden.len());
        for (layer, lc) in self.hidden.iter().zip(&cache.layers).rev() {
            let act_grad = lc.pre_activation.mapv(|v| self.activation.derivative(v));
            let dy = upstream * &lc.mask * act_grad;
            let mut grads = Vec::with_capacity(4);
            let dz = match (&layer.norm, &lc.normalized, &lc.inv_std) {
                (Some(bn), Some(xhat), Some(inv_std)) => {
                    let dgamma = (&dy * xhat).sum_axis(Axis(0));
                    let dbeta = dy.sum_axis(Axis(0));
                    let dxhat = &dy * &bn.gamma;
                    let dz = match cache.stats {
                        NormStats::Running => dxhat * inv_std,
                        NormStats::Batch => {
                            let n = rows as f64;
                            let sum_dxhat = dxhat.sum_axis(Axis(0));
                            let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                            ((dxhat * n) - &sum_dxhat - xhat * &sum_dxhat_xhat) * inv_std / n
                        }
                    };
                    grads.push(dgamma.to_vec());
                    grads.push(dbeta.to_vec());
                    dz
                }
                _ => dy,
            };
            let dw = lc.input.t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            upstream = dz.dot(&layer.dense.weights.t());
            let mut layer_grads = vec![
                dw.as_standard_layout().iter().copied().collect(),
                db.to_vec(),
            ];
            layer_grads.extend(grads);
            per_layer.push(layer_grads);
        }
        per_layer.reverse();
        for layer in per_layer {
            tensors.extend(layer);
        }
        tensors.push(out_w.as_standard_layout().iter().copied().collect());
        tensors.push(out_b.to_vec());
        Ok(Gradients(tensors))
    }

    /// Blends the batch statistics recorded in `cache` into the running
    /// statistics with momentum [`BN_MOMENTUM`].
    pub fn update_running_stats(&mut self, cache: &Cache) {
        for (layer, lc) in self.hidden.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(mean), Some(var)) =
                (&mut layer.norm, &lc.batch_mean, &lc.batch_var)
            {
                bn.running_mean = &bn.running_mean * BN_MOMENTUM + mean * (1.0 - BN_MOMENTUM);
                bn.running_var = &bn.running_var * BN_MOMENTUM + var * (1.0 - BN_MOMENTUM);
            }
        }
    }

    /// Standardises raw features with the model's scaler and runs inference.
    pub fn predict_proba(&self, raw: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if raw.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                raw.ncols(),
                self.input_dim()
            )));
        }
        self.forward_infer(self.scaler.transform(raw).view())
    }
}
