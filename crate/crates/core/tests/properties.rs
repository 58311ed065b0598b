use exertion::cascade::{CascadeMetadata, CascadeModel, Level};
use exertion::landmarks::{
    average_movement, derive_cheek_landmarks, LandmarkTrajectory, Point, CHEEK_POINTS,
    INPUT_POINTS,
};
use exertion::mlp::{
    gradient_check, softmax_rows, Activation, GradCheckConfig, MlpModel, NormStats, Scaler,
};
use exertion::ppg::{extract_ppg_features, segment_beats, PpgRecord, SegmentParams};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_frames(seed: u64, n: usize) -> Vec<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<Point> = (0..INPUT_POINTS)
        .map(|_| Point::new(rng.gen_range(100.0..500.0), rng.gen_range(100.0..400.0)))
        .collect();
    (0..n)
        .map(|_| {
            base.iter()
                .map(|p| Point::new(p.x + rng.gen_range(-3.0..3.0), p.y + rng.gen_range(-3.0..3.0)))
                .collect()
        })
        .collect()
}

fn features(frames: &[Vec<Point>]) -> Vec<f64> {
    let traj = LandmarkTrajectory::from_frames(frames.to_vec()).unwrap();
    average_movement(&traj.to_derived().unwrap()).unwrap().into_vec()
}

fn map_frames(frames: &[Vec<Point>], f: impl Fn(Point) -> Point) -> Vec<Vec<Point>> {
    frames.iter().map(|fr| fr.iter().map(|&p| f(p)).collect()).collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "entry {k}: {x} vs {y}");
    }
}

/// iBUG index of each point's mirror image.
fn ibug_mirror(j: usize) -> usize {
    match j {
        0..=16 => 16 - j,
        17..=26 => 43 - j,
        27..=30 => j,
        31..=35 => 66 - j,
        36..=39 => 81 - j,
        40 | 41 => 87 - j,
        42..=45 => 81 - j,
        46 | 47 => 87 - j,
        48..=54 => 102 - j,
        55..=59 => 114 - j,
        60..=64 => 124 - j,
        65..=67 => 132 - j,
        _ => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn movement_is_translation_invariant(seed in any::<u64>(), dx in -1e3..1e3f64, dy in -1e3..1e3f64) {
        let frames = random_frames(seed, 12);
        let moved = map_frames(&frames, |p| Point::new(p.x + dx, p.y + dy));
        assert_close(&features(&moved), &features(&frames), 1e-9);
    }

    #[test]
    fn movement_is_rotation_invariant(seed in any::<u64>(), theta in -3.2..3.2f64) {
        let frames = random_frames(seed, 12);
        let (s, c) = theta.sin_cos();
        let rotated = map_frames(&frames, |p| Point::new(c * p.x - s * p.y, s * p.x + c * p.y));
        assert_close(&features(&rotated), &features(&frames), 1e-9);
    }

    #[test]
    fn movement_scales_linearly(seed in any::<u64>(), k in 0.1..10.0f64) {
        let frames = random_frames(seed, 12);
        let scaled = map_frames(&frames, |p| Point::new(k * p.x, k * p.y));
        let expect: Vec<f64> = features(&frames).iter().map(|v| k * v).collect();
        assert_close(&features(&scaled), &expect, 1e-9);
    }

    #[test]
    fn cheeks_mirror_with_the_face(seed in any::<u64>()) {
        let frame = random_frames(seed, 1).remove(0);
        let mirrored: Vec<Point> = (0..INPUT_POINTS)
            .map(|j| {
                let p = frame[ibug_mirror(j)];
                Point::new(-p.x, p.y)
            })
            .collect();
        let a = derive_cheek_landmarks(&frame).unwrap();
        let b = derive_cheek_landmarks(&mirrored).unwrap();
        for k in 0..CHEEK_POINTS {
            let left_a = a[INPUT_POINTS + k];
            let right_b = b[INPUT_POINTS + CHEEK_POINTS + k];
            prop_assert!((left_a.x + right_b.x).abs() < 1e-9 && (left_a.y - right_b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn ppg_timing_ignores_offset_and_gain(seed in any::<u64>(), shift in -5e3..5e3f64, gain in 0.1..20.0f64) {
        let x = pulse_train(seed, 128.0, 8.0);
        let base = PpgRecord::new(x.clone(), 128.0, 0.0).unwrap();
        let changed = PpgRecord::new(x.iter().map(|v| gain * v + shift).collect(), 128.0, 0.0).unwrap();
        let p = SegmentParams::default();
        let b0 = segment_beats(&base, p).unwrap();
        let b1 = segment_beats(&changed, p).unwrap();
        prop_assert_eq!(b0.len(), b1.len());
        for (a, b) in b0.iter().zip(&b1) {
            prop_assert_eq!((a.t1, a.t2, a.t3), (b.t1, b.t2, b.t3));
        }
        let f0 = extract_ppg_features(&b0).unwrap().into_vec();
        let f1 = extract_ppg_features(&b1).unwrap().into_vec();
        for k in 0..21 {
            // f14 and f15 are amplitude SDs: they follow the gain only
            let expect = if k == 13 || k == 14 { gain * f0[k] } else { f0[k] };
            prop_assert!((f1[k] - expect).abs() <= 1e-9 * (1.0 + expect.abs()), "f{}", k + 1);
        }
    }

    #[test]
    fn ppg_resampling_preserves_periods(seed in any::<u64>()) {
        let p = SegmentParams::default();
        let slow = segment_beats(&PpgRecord::new(pulse_train(seed, 100.0, 8.0), 100.0, 0.0).unwrap(), p).unwrap();
        let fast = segment_beats(&PpgRecord::new(pulse_train(seed, 200.0, 8.0), 200.0, 0.0).unwrap(), p).unwrap();
        prop_assert_eq!(slow.len(), fast.len());
        for (a, b) in slow.iter().zip(&fast) {
            prop_assert!((a.period() - b.period()).abs() <= 2.0 / 100.0);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), shift in -50.0..50.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Array2::from_shape_fn((8, 3), |_| rng.gen_range(-40.0..40.0));
        let p = softmax_rows(&logits);
        let q = softmax_rows(&(&logits + shift));
        for (row, other) in p.rows().into_iter().zip(q.rows()) {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
            for (a, b) in row.iter().zip(other) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn routing_ignores_ppg_features(seed in any::<u64>()) {
        let model = random_cascade(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let d1: Vec<f64> = (0..128).map(|_| rng.gen_range(0.0..5.0)).collect();
        let first: Vec<f64> = (0..21).map(|_| rng.gen_range(0.0..2.0)).collect();
        let second: Vec<f64> = (0..21).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let a = model.predict(&d1, Some(&first)).unwrap();
        let b = model.predict(&d1, Some(&second)).unwrap();
        prop_assert_eq!(a.group_probs, b.group_probs);
        prop_assert_eq!(a.routed_to_a(), b.routed_to_a());
        for p in [a, b] {
            prop_assert!((p.group_probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            match p.level {
                Level::Pct100 => prop_assert!(p.level_probs.is_none()),
                _ => {
                    let lp = p.level_probs.unwrap();
                    prop_assert!((lp[0] + lp[1] - 1.0).abs() <= 1e-9);
                }
            }
        }
    }
}

/// Raised-cosine pulses with jittered periods around 0.9 s, evaluated at
/// `rate`; the waveform depends only on `seed`, not on the rate.
fn pulse_train(seed: u64, rate: f64, seconds: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bounds = vec![-rng.gen_range(0.0..0.9)];
    while *bounds.last().unwrap() <= seconds {
        let next = bounds.last().unwrap() + rng.gen_range(0.75..1.05);
        bounds.push(next);
    }
    let n = (seconds * rate) as usize;
    let mut beat = 0;
    (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            while bounds[beat + 1] <= t {
                beat += 1;
            }
            let phase = (t - bounds[beat]) / (bounds[beat + 1] - bounds[beat]);
            let rise = 0.3;
            let v = if phase < rise {
                0.5 * (1.0 - (std::f64::consts::PI * phase / rise).cos())
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * (phase - rise) / (1.0 - rise)).cos())
            };
            1000.0 + 800.0 * v + 20.0 * (0.6 * t).sin()
        })
        .collect()
}

fn random_cascade(seed: u64) -> CascadeModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mk = |dim: usize| {
        let scaler = Scaler {
            mean: vec![1.0; dim],
            sd: vec![0.5; dim],
        };
        MlpModel::init(dim, &[6, 5], 2, Activation::default(), 0.5, true, scaler, &mut rng)
    };
    CascadeModel {
        nn1: mk(128),
        nn2: mk(21),
        metadata: CascadeMetadata {
            nn1_seed: seed,
            nn2_seed: seed,
            nn1_epochs: 0,
            nn2_epochs: 0,
            nn1_training_rows: 0,
            nn2_training_rows: 0,
            nn1_classes: ["A".into(), "B".into()],
            nn2_classes: ["0".into(), "50".into()],
        },
    }
}

#[test]
fn smooth_network_gradients_are_tight() {
    for norm_stats in [NormStats::Batch, NormStats::Running] {
        let r = gradient_check(&GradCheckConfig {
            trials: 20,
            seed: 3,
            activation: Activation::Identity,
            batch_norm: false,
            dropout_rate: 0.0,
            norm_stats,
            ..GradCheckConfig::default()
        });
        assert!(r.max_relative_error < 1e-8, "{norm_stats:?}: {:e}", r.max_relative_error);
    }
}

#[test]
fn coarse_step_gradients_stay_close() {
    let r = gradient_check(&GradCheckConfig {
        trials: 20,
        step: 1e-3,
        seed: 4,
        ..GradCheckConfig::default()
    });
    assert!(r.max_relative_error < 1e-2, "{:e}", r.max_relative_error);
}
