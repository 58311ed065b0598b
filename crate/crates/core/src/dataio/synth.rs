//! Deterministic synthetic trials standing in for recorded face video and
//! PPG data.
//!
//! Each subject gets a jittered copy of a 68-point template face. Landmarks
//! oscillate with an amplitude set by the trial's class, scaled per landmark
//! group (the nose moves least). For the first two seconds an extra settling
//! offset decays to zero. PPG traces are pulse trains whose mean beat period
//! is the class value, shifted per subject and jittered per beat.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tables::{write_landmark_trajectory, write_ppg};
use super::{Dataset, Label, TrialRecord};
use crate::error::{Error, Result};
use crate::landmarks::{LandmarkTrajectory, Point, INPUT_POINTS};
use crate::ppg::PpgRecord;

/// One value per training level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassValues {
    pub pct0: f64,
    pub pct50: f64,
    pub pct100: f64,
}

impl ClassValues {
    pub fn get(&self, label: Label) -> Option<f64> {
        match label {
            Label::Pct0 => Some(self.pct0),
            Label::Pct50 => Some(self.pct50),
            Label::Pct100 => Some(self.pct100),
            Label::Unseen => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub seed: u64,
    /// Typical landmark oscillation amplitude per class, pixels.
    pub movement_means: ClassValues,
    /// Mean beat period per class, seconds.
    pub beat_period_means: ClassValues,
    /// Scales every random perturbation; 0 gives noise-free signals.
    pub noise_scale: f64,
    /// Adds one talking trial per subject, labelled unseen.
    pub include_unseen: bool,
    /// Beat period of the talking trials; the 0% period when absent.
    #[serde(default)]
    pub unseen_beat_period: Option<f64>,
    pub fps: f64,
    pub ppg_rate: f64,
    pub video_seconds: f64,
    pub ppg_seconds: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 20,
            seed: 7,
            movement_means: ClassValues {
                pct0: 1.0,
                pct50: 1.6,
                pct100: 4.0,
            },
            beat_period_means: ClassValues {
                pct0: 1.03,
                pct50: 0.86,
                pct100: 0.75,
            },
            noise_scale: 1.0,
            include_unseen: false,
            unseen_beat_period: None,
            fps: super::DEFAULT_FPS,
            ppg_rate: super::DEFAULT_PPG_RATE,
            video_seconds: 9.0,
            ppg_seconds: 7.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::Usage(format!(
                "need at least 2 subjects, got {}",
                self.n_subjects
            )));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::Usage("noise scale must be non-negative".into()));
        }
        let positive = [
            self.fps,
            self.ppg_rate,
            self.video_seconds,
            self.ppg_seconds,
            self.beat_period_means.pct0,
            self.beat_period_means.pct50,
            self.beat_period_means.pct100,
            self.unseen_beat_period.unwrap_or(1.0),
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Usage(
                "rates, durations and beat periods must be positive".into(),
            ));
        }
        let m = self.movement_means;
        if [m.pct0, m.pct50, m.pct100].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Usage("movement means must be non-negative".into()));
        }
        Ok(())
    }
}

/// Frontal 68-point face centred on the origin, iBUG order, roughly 190 px wide.
fn template_face() -> Vec<Point> {
    let mut p = Vec::with_capacity(INPUT_POINTS);
    for i in 0..17 {
        let theta = PI * i as f64 / 16.0;
        p.push(Point::new(-95.0 * theta.cos(), -20.0 + 130.0 * theta.sin()));
    }
    for start in [-80.0, 20.0] {
        for k in 0..5 {
            let arch = 8.0 * (PI * k as f64 / 4.0).sin();
            p.push(Point::new(start + 15.0 * k as f64, -60.0 - arch));
        }
    }
    for y in [-35.0, -20.0, -5.0, 10.0] {
        p.push(Point::new(0.0, y));
    }
    for (x, y) in [(-20.0, 25.0), (-10.0, 28.0), (0.0, 30.0), (10.0, 28.0), (20.0, 25.0)] {
        p.push(Point::new(x, y));
    }
    let eye = [
        (-65.0, -30.0),
        (-52.0, -38.0),
        (-38.0, -38.0),
        (-25.0, -30.0),
        (-38.0, -23.0),
        (-52.0, -23.0),
        (25.0, -30.0),
        (38.0, -38.0),
        (52.0, -38.0),
        (65.0, -30.0),
        (52.0, -23.0),
        (38.0, -23.0),
    ];
    let mouth = [
        (-35.0, 60.0),
        (-22.0, 52.0),
        (-10.0, 48.0),
        (0.0, 50.0),
        (10.0, 48.0),
        (22.0, 52.0),
        (35.0, 60.0),
        (22.0, 70.0),
        (10.0, 74.0),
        (0.0, 75.0),
        (-10.0, 74.0),
        (-22.0, 70.0),
        (-28.0, 60.0),
        (-10.0, 56.0),
        (0.0, 57.0),
        (10.0, 56.0),
        (28.0, 60.0),
        (10.0, 64.0),
        (0.0, 65.0),
        (-10.0, 64.0),
    ];
    p.extend(eye.iter().chain(&mouth).map(|&(x, y)| Point::new(x, y)));
    debug_assert_eq!(p.len(), INPUT_POINTS);
    p
}

/// Relative movement of each input landmark; the nose moves least.
fn group_factor(j: usize) -> f64 {
    match j {
        0..=16 => 1.0,
        17..=26 => 1.1,
        27..=35 => 0.25,
        36..=47 => 1.1,
        _ => 0.9,
    }
}

fn is_lips(j: usize) -> bool {
    (48..68).contains(&j)
}

struct Subject {
    face: Vec<Point>,
    movement_scale: f64,
    period_offset: f64,
    rise_fraction: f64,
    ppg_amplitude: f64,
    ppg_baseline: f64,
}

fn trial_rng(seed: u64, subject: usize, label: Label) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slot = match label {
        Label::Pct0 => 1,
        Label::Pct50 => 2,
        Label::Pct100 => 3,
        Label::Unseen => 4,
    };
    rng.set_stream((subject as u64) * 8 + slot);
    rng
}

fn make_subject(config: &SynthConfig, index: usize) -> Subject {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream((index as u64) * 8);
    let ns = config.noise_scale;
    let scale = 1.5 * rng.gen_range(0.9..=1.1);
    let cx = 320.0 + 20.0 * rng.gen_range(-1.0..=1.0);
    let cy = 240.0 + 20.0 * rng.gen_range(-1.0..=1.0);
    let face = template_face()
        .into_iter()
        .map(|p| {
            Point::new(
                cx + scale * p.x + ns * rng.gen_range(-1.0..=1.0),
                cy + scale * p.y + ns * rng.gen_range(-1.0..=1.0),
            )
        })
        .collect();
    Subject {
        face,
        movement_scale: 1.0 + 0.15 * ns.min(1.0) * rng.gen_range(-1.0..=1.0),
        period_offset: 0.04 * ns * rng.gen_range(-1.0..=1.0),
        rise_fraction: 0.31 + 0.03 * ns.min(1.0) * rng.gen_range(-1.0..=1.0),
        ppg_amplitude: 1000.0 * (1.0 + 0.2 * ns.min(1.0) * rng.gen_range(-1.0..=1.0)),
        ppg_baseline: 2000.0 + 500.0 * ns * rng.gen_range(-1.0..=1.0),
    }
}

fn synth_landmarks(
    config: &SynthConfig,
    subject: &Subject,
    label: Label,
    rng: &mut ChaCha8Rng,
) -> Result<LandmarkTrajectory> {
    let m = config.movement_means;
    let (class_amp, lips_boost) = match config.movement_means.get(label) {
        Some(a) => (a, 1.0),
        None => (0.5 * (m.pct0 + m.pct50), 3.0),
    };
    let ns = config.noise_scale;
    let trial_scale = 1.0 + 0.05 * ns.min(1.0) * rng.gen_range(-1.0..=1.0);
    let pixel_noise = Normal::new(0.0, 0.05 * ns + f64::MIN_POSITIVE).expect("valid sd");

    struct Motion {
        amp: f64,
        dir: (f64, f64),
        f1: f64,
        p1: f64,
        f2: f64,
        p2: f64,
    }
    let motions: Vec<Motion> = (0..INPUT_POINTS)
        .map(|j| {
            let boost = if is_lips(j) { lips_boost } else { 1.0 };
            let angle = rng.gen_range(0.0..2.0 * PI);
            Motion {
                amp: class_amp
                    * group_factor(j)
                    * boost
                    * subject.movement_scale
                    * trial_scale
                    * (1.0 + 0.2 * ns.min(1.0) * rng.gen_range(-1.0..=1.0)),
                dir: (angle.cos(), angle.sin()),
                f1: rng.gen_range(0.3..1.2),
                p1: rng.gen_range(0.0..2.0 * PI),
                f2: rng.gen_range(0.2..0.8),
                p2: rng.gen_range(0.0..2.0 * PI),
            }
        })
        .collect();
    let head_phase = rng.gen_range(0.0..2.0 * PI);

    let n_frames = (config.video_seconds * config.fps).round() as usize;
    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let t = i as f64 / config.fps;
        let settle = (1.0 - t / 2.0).max(0.0) * 1.5;
        let head = (
            0.2 * ns * (2.0 * PI * 0.2 * t + head_phase).sin(),
            0.1 * ns * (2.0 * PI * 0.15 * t + head_phase).cos(),
        );
        let frame = subject
            .face
            .iter()
            .zip(&motions)
            .map(|(base, mo)| {
                let a = (2.0 * PI * mo.f1 * t + mo.p1).sin();
                let b = 0.5 * (2.0 * PI * mo.f2 * t + mo.p2).sin();
                let along = mo.amp * (a + settle);
                let across = mo.amp * b;
                Point::new(
                    base.x + along * mo.dir.0 - across * mo.dir.1 + head.0 + pixel_noise.sample(rng),
                    base.y + along * mo.dir.1 + across * mo.dir.0 + head.1 + pixel_noise.sample(rng),
                )
            })
            .collect();
        frames.push(frame);
    }
    LandmarkTrajectory::from_frames(frames)
}

fn pulse_shape(phase: f64, rise: f64) -> f64 {
    if phase < rise {
        0.5 * (1.0 - (PI * phase / rise).cos())
    } else {
        0.5 * (1.0 + (PI * (phase - rise) / (1.0 - rise)).cos())
    }
}

fn synth_ppg(
    config: &SynthConfig,
    subject: &Subject,
    label: Label,
    rng: &mut ChaCha8Rng,
) -> Result<PpgRecord> {
    let ns = config.noise_scale;
    let period = config
        .beat_period_means
        .get(label)
        .or(config.unseen_beat_period)
        .unwrap_or(config.beat_period_means.pct0)
        + subject.period_offset;
    let duration = config.ppg_seconds;

    // beat boundaries covering [0, duration]
    let mut bounds = vec![-rng.gen_range(0.0..period)];
    let mut amps = Vec::new();
    while *bounds.last().expect("non-empty") <= duration {
        let p = (period + 0.04 * ns * rng.gen_range(-1.0..=1.0)).max(0.2);
        let next = bounds.last().expect("non-empty") + p;
        bounds.push(next);
        amps.push(subject.ppg_amplitude * (1.0 + 0.05 * ns.min(1.0) * rng.gen_range(-1.0..=1.0)));
    }
    let wander_phase = rng.gen_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, 0.01 * subject.ppg_amplitude * ns + f64::MIN_POSITIVE)
        .expect("valid sd");

    let n = (duration * config.ppg_rate).round() as usize;
    let mut beat = 0;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / config.ppg_rate;
            while bounds[beat + 1] <= t {
                beat += 1;
            }
            let phase = (t - bounds[beat]) / (bounds[beat + 1] - bounds[beat]);
            let wander = 0.05 * ns * subject.ppg_amplitude * (2.0 * PI * 0.1 * t + wander_phase).sin();
            subject.ppg_baseline
                + amps[beat] * pulse_shape(phase, subject.rise_fraction)
                + wander
                + noise.sample(rng)
        })
        .collect();
    PpgRecord::new(samples, config.ppg_rate, 0.0)
}

fn subject_id(index: usize, total: usize) -> String {
    let width = total.to_string().len().max(2);
    format!("s{:0width$}", index + 1)
}

/// Generates trial files under `out_dir` and writes `manifest.toml` there.
/// Output depends only on `config`.
pub fn synth_dataset(config: &SynthConfig, out_dir: &Path) -> Result<Dataset> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut labels: Vec<Label> = Label::LEVELS.to_vec();
    if config.include_unseen {
        labels.push(Label::Unseen);
    }
    let mut trials = Vec::new();
    for s in 0..config.n_subjects {
        let id = subject_id(s, config.n_subjects);
        let subject = make_subject(config, s);
        let dir = out_dir.join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for &label in &labels {
            let mut rng = trial_rng(config.seed, s, label);
            let traj = synth_landmarks(config, &subject, label, &mut rng)?;
            let ppg = synth_ppg(config, &subject, label, &mut rng)?;
            let landmark_path = PathBuf::from(&id).join(format!("{label}_landmarks.csv"));
            let ppg_path = PathBuf::from(&id).join(format!("{label}_ppg.csv"));
            write_landmark_trajectory(&out_dir.join(&landmark_path), &traj)?;
            write_ppg(&out_dir.join(&ppg_path), &ppg, true)?;
            trials.push(TrialRecord {
                subject_id: id.clone(),
                label,
                landmark_path,
                ppg_path,
            });
        }
    }
    let dataset = Dataset {
        trials,
        fps: config.fps,
        ppg_rate: config.ppg_rate,
        root: out_dir.to_path_buf(),
    };
    dataset.save_manifest(&out_dir.join("manifest.toml"))?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_is_mirror_symmetric_about_x0() {
        let f = template_face();
        // jaw, eyes and outer mouth corners
        for (a, b) in [(0, 16), (4, 12), (36, 45), (39, 42), (40, 47), (48, 54), (31, 35)] {
            assert!((f[a].x + f[b].x).abs() < 1e-9 && (f[a].y - f[b].y).abs() < 1e-9);
        }
    }

    #[test]
    fn counts_trials() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_subjects: 4,
            include_unseen: true,
            ..SynthConfig::default()
        };
        let ds = synth_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(ds.labeled().count(), 12);
        assert_eq!(ds.unseen().count(), 4);
        assert_eq!(ds.subjects(), vec!["s01", "s02", "s03", "s04"]);
    }

    #[test]
    fn rejects_single_subject() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_subjects: 1,
            ..SynthConfig::default()
        };
        assert!(synth_dataset(&cfg, dir.path()).is_err());
    }
}
