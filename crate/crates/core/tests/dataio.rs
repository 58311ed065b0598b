use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use exertion::cascade::{CascadeMetadata, CascadeModel};
use exertion::dataio::{
    load_landmark_trajectory, load_model, load_ppg, save_model, synth_dataset,
    write_landmark_trajectory, write_ppg, Dataset, Label, SynthConfig,
};
use exertion::landmarks::{average_movement, LandmarkTrajectory, Point, INPUT_POINTS};
use exertion::mlp::{Activation, MlpModel, Scaler};
use exertion::ppg::{segment_beats, PpgRecord, SegmentParams};
use exertion::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn landmark_csv(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from("frame");
    for j in 0..INPUT_POINTS {
        let _ = write!(s, ",x{j},y{j}");
    }
    s.push('\n');
    for i in 0..rows {
        let _ = write!(s, "{i}");
        for _ in 0..INPUT_POINTS {
            let _ = write!(s, ",{},{}", rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0));
        }
        s.push('\n');
    }
    s
}

#[test]
fn full_length_landmark_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    std::fs::write(&path, landmark_csv(350, 1)).unwrap();
    let traj = load_landmark_trajectory(&path, 50.0).unwrap();
    assert_eq!(traj.n_frames(), 350);
    assert_eq!(traj.points_per_frame(), 68);
}

#[test]
fn single_frame_gives_zero_movement() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    std::fs::write(&path, landmark_csv(1, 2)).unwrap();
    let traj = load_landmark_trajectory(&path, 50.0).unwrap();
    assert_eq!(traj.n_frames(), 1);
    let f = average_movement(&traj.to_derived().unwrap()).unwrap();
    assert_eq!(f.as_slice().len(), 128);
    assert!(f.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn missing_cell_error_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    let text = landmark_csv(10, 3);
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    // data row 7 is line 7 after the header; x3 is the 8th field
    let mut cells: Vec<&str> = lines[7].split(',').collect();
    cells[7] = "";
    lines[7] = cells.join(",");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    match load_landmark_trajectory(&path, 50.0) {
        Err(Error::Parse { row, message, .. }) => {
            assert_eq!(row, 7);
            assert!(message.contains("x3"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn single_column_ppg_length_is_duration_times_rate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let mut s = String::from("value\n");
    for i in 0..896 {
        let _ = writeln!(s, "{}", (i as f64 * 0.05).sin());
    }
    std::fs::write(&path, s).unwrap();
    let rec = load_ppg(&path, Some(128.0)).unwrap();
    assert_eq!(rec.samples().len(), 896);
    assert_eq!(rec.rate(), 128.0);
    assert!(matches!(load_ppg(&path, None), Err(Error::Usage(_))));
}

#[test]
fn timestamp_step_sets_the_rate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let mut s = String::from("t,value\n");
    for i in 0..300 {
        let _ = writeln!(s, "{},{}", i as f64 * 0.0078125, i % 7);
    }
    std::fs::write(&path, &s).unwrap();
    let rec = load_ppg(&path, None).unwrap();
    assert!((rec.rate() - 128.0).abs() < 1e-9, "{}", rec.rate());

    let mut gapped = String::from("t,value\n");
    for i in 0..300 {
        let t = i as f64 * 0.0078125 + if i >= 150 { 0.5 } else { 0.0 };
        let _ = writeln!(gapped, "{t},{}", i % 7);
    }
    std::fs::write(&path, gapped).unwrap();
    assert!(matches!(load_ppg(&path, None), Err(Error::Sampling(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trajectories_round_trip_bit_exact(seed in any::<u64>(), n in 1usize..6, derived in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = if derived { 128 } else { 68 };
        let frames: Vec<Vec<Point>> = (0..n)
            .map(|_| (0..points).map(|_| Point::new(rng.gen_range(-1e4..1e4), rng.gen::<f64>())).collect())
            .collect();
        let traj = LandmarkTrajectory::from_frames(frames).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_landmark_trajectory(&path, &traj).unwrap();
        let back = load_landmark_trajectory(&path, 50.0).unwrap();
        prop_assert_eq!(back.n_frames(), traj.n_frames());
        for (a, b) in traj.frames().zip(back.frames()) {
            for (p, q) in a.iter().zip(b) {
                prop_assert_eq!(p.x.to_bits(), q.x.to_bits());
                prop_assert_eq!(p.y.to_bits(), q.y.to_bits());
            }
        }
    }

    #[test]
    fn ppg_records_round_trip_bit_exact(seed in any::<u64>(), n in 2usize..400, rate_index in 0usize..4) {
        let rate = [50.0, 100.0, 128.0, 256.0][rate_index];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<f64> = (0..n).map(|_| rng.gen_range(-3e3..3e3)).collect();
        let rec = PpgRecord::new(samples, rate, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        for with_time in [false, true] {
            write_ppg(&path, &rec, with_time).unwrap();
            let back = load_ppg(&path, Some(rate)).unwrap();
            prop_assert_eq!(back.rate(), rate);
            prop_assert_eq!(back.samples().len(), n);
            for (a, b) in rec.samples().iter().zip(back.samples()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

fn random_cascade(seed: u64) -> CascadeModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mk = |dim: usize| {
        let scaler = Scaler {
            mean: (0..dim).map(|_| rng.gen_range(0.0..2.0)).collect(),
            sd: (0..dim).map(|_| rng.gen_range(0.2..2.0)).collect(),
        };
        MlpModel::init(dim, &[35, 35, 35], 2, Activation::default(), 0.5, true, scaler, &mut rng)
    };
    let nn1 = mk(128);
    let nn2 = mk(21);
    CascadeModel {
        nn1,
        nn2,
        metadata: CascadeMetadata {
            nn1_seed: seed,
            nn2_seed: seed ^ 1,
            nn1_epochs: 200,
            nn2_epochs: 175,
            nn1_training_rows: 57,
            nn2_training_rows: 38,
            nn1_classes: ["A".into(), "B".into()],
            nn2_classes: ["0".into(), "50".into()],
        },
    }
}

#[test]
fn saved_model_predicts_identically() {
    let model = random_cascade(11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let d1: Vec<f64> = (0..128).map(|_| rng.gen_range(0.0..6.0)).collect();
        let d2: Vec<f64> = (0..21).map(|_| rng.gen_range(-1.0..3.0)).collect();
        let a = model.predict(&d1, Some(&d2)).unwrap();
        let b = loaded.predict(&d1, Some(&d2)).unwrap();
        assert_eq!(a.level, b.level);
        assert_eq!(a.group_probs.map(f64::to_bits), b.group_probs.map(f64::to_bits));
        assert_eq!(
            a.level_probs.map(|p| p.map(f64::to_bits)),
            b.level_probs.map(|p| p.map(f64::to_bits))
        );
    }
}

#[test]
fn corrupted_length_field_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_model(&random_cascade(3), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[12] ^= 0x5a;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Format(_))));
    bytes[12] ^= 0x5a;
    bytes[19] = 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Format(_))));
}

#[test]
fn unknown_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_model(&random_cascade(4), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8..12].copy_from_slice(&999u32.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_model(&path),
        Err(Error::UnsupportedVersion { found: 999, .. })
    ));
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn synthesis_is_deterministic() {
    let cfg = SynthConfig {
        n_subjects: 3,
        include_unseen: true,
        ..SynthConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_dataset(&cfg, a.path()).unwrap();
    synth_dataset(&cfg, b.path()).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert_eq!(ta.len(), 3 * 8 + 1);
    assert_eq!(ta, tb);

    let c = tempfile::tempdir().unwrap();
    synth_dataset(&SynthConfig { seed: 8, ..cfg }, c.path()).unwrap();
    assert_ne!(ta, read_tree(c.path()));
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn trial_movement(ds: &Dataset, subject: &str, label: Label) -> f64 {
    let t = ds
        .trials
        .iter()
        .find(|t| t.subject_id == subject && t.label == label)
        .unwrap();
    let traj = load_landmark_trajectory(&ds.resolve(&t.landmark_path), ds.fps).unwrap();
    mean(average_movement(&traj.to_derived().unwrap()).unwrap().as_slice())
}

fn trial_periods(ds: &Dataset, subject: &str, label: Label) -> Vec<f64> {
    let t = ds
        .trials
        .iter()
        .find(|t| t.subject_id == subject && t.label == label)
        .unwrap();
    let rec = load_ppg(&ds.resolve(&t.ppg_path), Some(ds.ppg_rate)).unwrap();
    segment_beats(&rec, SegmentParams::default())
        .unwrap()
        .iter()
        .map(|b| b.period())
        .collect()
}

#[test]
fn synthetic_classes_are_ordered_per_subject() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(
        &SynthConfig {
            n_subjects: 8,
            seed: 21,
            ..SynthConfig::default()
        },
        dir.path(),
    )
    .unwrap();
    for s in ds.subjects() {
        let m0 = trial_movement(&ds, &s, Label::Pct0);
        let m50 = trial_movement(&ds, &s, Label::Pct50);
        let m100 = trial_movement(&ds, &s, Label::Pct100);
        assert!(m100 > m50 && m50 >= m0, "{s}: {m0} {m50} {m100}");
        let p0 = mean(&trial_periods(&ds, &s, Label::Pct0));
        let p50 = mean(&trial_periods(&ds, &s, Label::Pct50));
        assert!(p0 > p50, "{s}: {p0} {p50}");
    }
}

#[test]
fn synthetic_beat_periods_hit_their_targets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default();
    let ds = synth_dataset(&cfg, dir.path()).unwrap();
    for (label, target) in [
        (Label::Pct0, cfg.beat_period_means.pct0),
        (Label::Pct50, cfg.beat_period_means.pct50),
    ] {
        let pooled: Vec<f64> = ds
            .subjects()
            .iter()
            .flat_map(|s| trial_periods(&ds, s, label))
            .collect();
        let m = mean(&pooled);
        assert!((m - target).abs() <= 0.05 * target, "{label}: {m} vs {target}");
    }
}
