//! Finite-difference verification of [`MlpModel::backward`].

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::network::{loss_from_logits, Activation, DropoutMasks, MlpModel, NormStats};
use super::scaler::Scaler;
use super::train::one_hot;

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub step: f64,
    pub seed: u64,
    pub activation: Activation,
    pub batch_norm: bool,
    pub dropout_rate: f64,
    pub norm_stats: NormStats,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trials: 50,
            step: 1e-5,
            seed: 0,
            activation: Activation::default(),
            batch_norm: true,
            dropout_rate: 0.5,
            norm_stats: NormStats::Batch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub parameters_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn random_model(rng: &mut ChaCha8Rng, config: &GradCheckConfig) -> MlpModel {
    let input = rng.gen_range(3..=6);
    let depth = rng.gen_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(3..=8)).collect();
    let scaler = Scaler {
        mean: vec![0.0; input],
        sd: vec![1.0; input],
    };
    let mut model = MlpModel::init(
        input,
        &hidden,
        2,
        config.activation,
        config.dropout_rate,
        config.batch_norm,
        scaler,
        rng,
    );
    // move every parameter off its initial value so biases, gamma and beta
    // are exercised away from 0 and 1
    for tensor in model.parameters_mut() {
        for v in tensor.iter_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for layer in &mut model.hidden {
        if let Some(bn) = &mut layer.norm {
            bn.running_mean.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            bn.running_var.mapv_inplace(|_| rng.gen_range(0.5..2.0));
        }
    }
    model
}

/// Compares analytic gradients with central differences on random small
/// networks. Dropout masks are drawn once per model and reused for every
/// perturbed evaluation, so the loss is a deterministic function of the
/// parameters.
pub fn gradient_check(config: &GradCheckConfig) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..config.trials {
        let mut model = random_model(&mut rng, config);
        let rows = rng.gen_range(5..=10);
        let x = Array2::from_shape_simple_fn((rows, model.input_dim()), || {
            rng.sample::<f64, _>(StandardNormal)
        });
        let labels: Vec<usize> = (0..rows).map(|i| (i + rng.gen_range(0..2)) % 2).collect();
        let targets = one_hot(&labels, 2);
        let masks = DropoutMasks::sample(&model, rows, &mut rng as &mut dyn RngCore);

        let cache = model
            .forward_with(x.view(), &masks, config.norm_stats)
            .expect("finite forward pass");
        let analytic = model.backward(&cache, &targets, None).expect("matching cache");

        let eval = |m: &MlpModel| {
            let c = m
                .forward_with(x.view(), &masks, config.norm_stats)
                .expect("finite forward pass");
            loss_from_logits(c.logits(), &targets)
        };
        let n_tensors = analytic.0.len();
        for t in 0..n_tensors {
            for i in 0..analytic.0[t].len() {
                let original = model.parameters()[t][i];
                model.parameters_mut()[t][i] = original + config.step;
                let plus = eval(&model);
                model.parameters_mut()[t][i] = original - config.step;
                let minus = eval(&model);
                model.parameters_mut()[t][i] = original;
                let numeric = (plus - minus) / (2.0 * config.step);
                worst = worst.max(relative_error(analytic.0[t][i], numeric));
                checked += 1;
            }
        }
    }
    GradCheckReport {
        max_relative_error: worst,
        parameters_checked: checked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_agrees() {
        let report = gradient_check(&GradCheckConfig {
            trials: 5,
            ..GradCheckConfig::default()
        });
        assert!(report.parameters_checked > 0);
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn running_statistics_variant_agrees() {
        let report = gradient_check(&GradCheckConfig {
            trials: 5,
            norm_stats: NormStats::Running,
            ..GradCheckConfig::default()
        });
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}
