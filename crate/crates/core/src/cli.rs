//! Command-line front end. `run` parses arguments, dispatches to the
//! library and maps failures onto exit codes: 2 for usage errors, 1 for
//! pipeline errors. Errors are printed as one line, `error[kind]: message`.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::cascade::{
    prediction_csv_row, CascadeConfig, CascadeModel, UnseenTrial, PREDICTION_CSV_HEADER,
};
use crate::dataio::{
    self, load_landmark_trajectory, load_ppg, load_model, save_model, synth_dataset, ClassValues,
    Dataset, Label, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::{
    extract_dataset_features, extract_trial_features, fit_on_features, loocv,
    render_report, robustness_eval, write_run_manifest, EvalConfig, FeatureOptions, LoocvOutcome,
};
use crate::landmarks::{average_movement_with, trim_trajectory, MovementOptions, DERIVED_POINTS};
use crate::mlp::{AdamConfig, MlpConfig};
use crate::ppg::{extract_ppg_features, segment_beats, SegmentParams, PPG_FEATURES};

#[derive(Parser, Debug)]
#[command(
    name = "exertion",
    version,
    about = "Force-exertion level classification from facial landmarks and PPG"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and its manifest
    Synth(SynthArgs),
    /// Compute one feature vector from a landmark or PPG file
    #[command(subcommand)]
    Extract(ExtractCommand),
    /// Train a cascade on every labelled trial of a dataset
    Train(TrainCmd),
    /// Leave-one-subject-out evaluation with report, plus a final model
    Evaluate(EvaluateCmd),
    /// Classify trials with a trained cascade
    Predict(PredictCmd),
    /// Re-render a report from a saved evaluation.json
    Report(ReportCmd),
}

#[derive(Args, Debug, Clone)]
struct OutDir {
    /// Output directory
    #[arg(long, env = "EXERTION_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SynthArgs {
    /// Number of subjects
    #[arg(long, default_value_t = 20)]
    subjects: usize,
    /// Random seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Scale applied to every random perturbation
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Landmark amplitude (pixels) for 0%, 50%, 100%
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 1.6, 4.0])]
    movement: Vec<f64>,
    /// Mean beat period (seconds) for 0%, 50%, 100%
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.03, 0.86, 0.75])]
    periods: Vec<f64>,
    /// Also generate one unseen-activity (talking) trial per subject
    #[arg(long)]
    unseen: bool,
    /// Beat period of unseen trials; defaults to the 0% period
    #[arg(long)]
    unseen_period: Option<f64>,
    /// Video frame rate
    #[arg(long, default_value_t = dataio::DEFAULT_FPS)]
    fps: f64,
    /// PPG sampling rate
    #[arg(long, default_value_t = dataio::DEFAULT_PPG_RATE)]
    ppg_rate: f64,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

#[derive(Subcommand, Debug)]
enum ExtractCommand {
    /// 128 average-movement features from a landmark CSV
    Landmarks(ExtractLandmarks),
    /// 21 beat features from a PPG CSV
    Ppg(ExtractPpg),
}

#[derive(Args, Debug)]
struct ExtractLandmarks {
    /// Landmark CSV (68 or 128 points)
    #[arg(long = "in")]
    input: PathBuf,
    /// Video frame rate
    #[arg(long, default_value_t = dataio::DEFAULT_FPS)]
    fps: f64,
    /// Seconds dropped from the start
    #[arg(long, default_value_t = 2.0)]
    trim: f64,
    /// Divide features by the first frame's interocular distance
    #[arg(long)]
    normalize_interocular: bool,
    /// Write CSV here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtractPpg {
    /// PPG CSV (`t,value` or `value`)
    #[arg(long = "in")]
    input: PathBuf,
    /// Sampling rate; required for single-column files
    #[arg(long)]
    rate: Option<f64>,
    #[command(flatten)]
    segment: SegmentArgs,
    /// Write CSV here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SegmentArgs {
    /// Minimum peak prominence as a fraction of the signal range
    #[arg(long, default_value_t = 0.1)]
    prominence: f64,
    /// Minimum beat duration in seconds
    #[arg(long, default_value_t = 0.3)]
    min_period: f64,
}

impl SegmentArgs {
    fn params(&self) -> SegmentParams {
        SegmentParams {
            min_prominence: self.prominence,
            min_period: self.min_period,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct FeatureArgs {
    /// Seconds dropped from the start of each landmark trajectory
    #[arg(long, default_value_t = 2.0)]
    trim: f64,
    /// Divide movement features by the first frame's interocular distance
    #[arg(long)]
    normalize_interocular: bool,
    #[command(flatten)]
    segment: SegmentArgs,
}

impl FeatureArgs {
    fn options(&self) -> FeatureOptions {
        FeatureOptions {
            trim_seconds: self.trim,
            segment: self.segment.params(),
            movement: MovementOptions {
                normalize_interocular: self.normalize_interocular,
            },
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct ModelArgs {
    /// NN1 training epochs
    #[arg(long, default_value_t = 200)]
    nn1_epochs: usize,
    /// NN2 training epochs
    #[arg(long, default_value_t = 175)]
    nn2_epochs: usize,
    /// Hidden layer widths
    #[arg(long, value_delimiter = ',', default_values_t = [35, 35, 35])]
    hidden: Vec<usize>,
    /// Dropout rate of every hidden layer
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    /// Disable batch normalisation
    #[arg(long)]
    no_batch_norm: bool,
    /// NN1 loss weights for group A and group B
    #[arg(long, value_delimiter = ',', num_args = 2)]
    nn1_class_weights: Option<Vec<f64>>,
}

impl ModelArgs {
    fn cascade(&self) -> CascadeConfig {
        let base = MlpConfig {
            hidden_dims: self.hidden.clone(),
            batch_norm: !self.no_batch_norm,
            dropout_rate: self.dropout,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            ..MlpConfig::default()
        };
        CascadeConfig {
            nn1: MlpConfig {
                epochs: self.nn1_epochs,
                class_weights: self.nn1_class_weights.clone(),
                ..base.clone()
            },
            nn2: MlpConfig {
                epochs: self.nn2_epochs,
                ..base
            },
        }
    }
}

#[derive(Args, Debug)]
struct TrainCmd {
    /// Dataset manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Random seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Model file; defaults to <out>/model.bin
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    training: ModelArgs,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args, Debug)]
struct EvaluateCmd {
    /// Dataset manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Master seed; fold k uses seed xor k
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Folds run in parallel
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Early-stopping patience for NN2, validated on the next subject
    #[arg(long)]
    nn2_early_stopping: Option<usize>,
    /// Skip training the final all-subject model
    #[arg(long)]
    no_final_model: bool,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    training: ModelArgs,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args, Debug)]
struct PredictCmd {
    /// Trained model file
    #[arg(long)]
    model: PathBuf,
    /// Predict every trial of this manifest
    #[arg(long, conflicts_with_all = ["landmarks", "ppg"])]
    manifest: Option<PathBuf>,
    /// Landmark CSV of a single trial
    #[arg(long, required_unless_present = "manifest")]
    landmarks: Option<PathBuf>,
    /// PPG CSV of a single trial; needed when NN1 routes to group B
    #[arg(long)]
    ppg: Option<PathBuf>,
    /// Subject id written in the output
    #[arg(long, default_value = "trial")]
    subject: String,
    /// Video frame rate (single-trial mode)
    #[arg(long, default_value_t = dataio::DEFAULT_FPS)]
    fps: f64,
    /// PPG sampling rate (single-trial mode); required for single-column files
    #[arg(long)]
    rate: Option<f64>,
    #[command(flatten)]
    features: FeatureArgs,
    /// Write CSV here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportCmd {
    /// evaluation.json written by `evaluate`
    #[arg(long)]
    evaluation: PathBuf,
    #[command(flatten)]
    out: OutDir,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            if matches!(e, Error::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Extract(ExtractCommand::Landmarks(a)) => extract_landmarks(a),
        Command::Extract(ExtractCommand::Ppg(a)) => extract_ppg(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::Report(a) => report(a),
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn feature_row(prefix: &str, count: usize, values: &[f64]) -> String {
    let header: Vec<String> = (0..count).map(|k| format!("{prefix}{k}")).collect();
    let row: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    format!("{}\n{}\n", header.join(","), row.join(","))
}

fn synth(a: SynthArgs) -> Result<()> {
    let class = |v: &[f64]| ClassValues {
        pct0: v[0],
        pct50: v[1],
        pct100: v[2],
    };
    let config = SynthConfig {
        n_subjects: a.subjects,
        seed: a.seed,
        movement_means: class(&a.movement),
        beat_period_means: class(&a.periods),
        noise_scale: a.noise,
        include_unseen: a.unseen,
        unseen_beat_period: a.unseen_period,
        fps: a.fps,
        ppg_rate: a.ppg_rate,
        ..SynthConfig::default()
    };
    let ds = synth_dataset(&config, &a.out.out)?;
    println!(
        "wrote {} trials for {} subjects to {}",
        ds.trials.len(),
        ds.subjects().len(),
        a.out.out.join("manifest.toml").display()
    );
    Ok(())
}

fn extract_landmarks(a: ExtractLandmarks) -> Result<()> {
    let traj = load_landmark_trajectory(&a.input, a.fps)?;
    let trimmed = trim_trajectory(&traj, a.trim, a.fps)?;
    let d1 = average_movement_with(
        &trimmed.to_derived()?,
        MovementOptions {
            normalize_interocular: a.normalize_interocular,
        },
    )?;
    emit(a.output.as_deref(), &feature_row("d", DERIVED_POINTS, d1.as_slice()))
}

fn extract_ppg(a: ExtractPpg) -> Result<()> {
    let ppg = load_ppg(&a.input, a.rate)?;
    let beats = segment_beats(&ppg, a.segment.params())?;
    let d2 = extract_ppg_features(&beats)?;
    let header: Vec<String> = (1..=PPG_FEATURES).map(|k| format!("f{k}")).collect();
    let row: Vec<String> = d2.as_slice().iter().map(|v| v.to_string()).collect();
    emit(
        a.output.as_deref(),
        &format!("{}\n{}\n", header.join(","), row.join(",")),
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn train(a: TrainCmd) -> Result<()> {
    let dataset = Dataset::load_manifest(&a.manifest)?;
    let features = extract_dataset_features(&dataset, &a.features.options(), 1)?;
    let model = fit_on_features(&features, &a.training.cascade(), a.seed)?;
    let path = match a.model {
        Some(p) => p,
        None => {
            create_dir(&a.out.out)?;
            a.out.out.join("model.bin")
        }
    };
    save_model(&model, &path)?;
    println!(
        "trained on {} trials ({} NN2 rows); model written to {}",
        model.metadata.nn1_training_rows,
        model.metadata.nn2_training_rows,
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluateRun<'a> {
    command: &'static str,
    manifest_sha256: String,
    evaluation: &'a EvalConfig,
    final_model: bool,
}

fn evaluate(a: EvaluateCmd) -> Result<()> {
    let dataset = Dataset::load_manifest(&a.manifest)?;
    let config = EvalConfig {
        cascade: a.training.cascade(),
        features: a.features.options(),
        seed: a.seed,
        jobs: a.jobs,
        nn2_early_stopping: a.nn2_early_stopping,
    };
    let mut outcome = loocv(&dataset, &config)?;
    let out = &a.out.out;
    create_dir(out)?;
    if !a.no_final_model {
        let model = fit_on_features(&outcome.features, &config.cascade, config.seed)?;
        save_model(&model, &out.join("model.bin"))?;
        if dataset.unseen().next().is_some() {
            outcome.robustness = Some(robustness_eval(&dataset, Some(&model), &config.features)?);
        }
    }
    render_report(&outcome, out)?;
    write_run_manifest(
        out,
        &EvaluateRun {
            command: "evaluate",
            manifest_sha256: file_sha256(&a.manifest)?,
            evaluation: &config,
            final_model: !a.no_final_model,
        },
    )?;
    print_summary(&outcome);
    println!("report written to {}", out.join("report.md").display());
    Ok(())
}

fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn print_summary(outcome: &LoocvOutcome) {
    let r = &outcome.report;
    for (name, acc) in [
        ("NN1", r.nn1_accuracy),
        ("NN2", r.nn2_accuracy),
        ("overall", r.overall_accuracy),
    ] {
        println!("{name} accuracy {}/{} = {:.4}", acc.correct, acc.total, acc.value());
    }
    if let Some(u) = &outcome.robustness {
        println!("unseen: {}", u.summary_line());
    }
}

fn predict(a: PredictCmd) -> Result<()> {
    let model = load_model(&a.model)?;
    let options = a.features.options();
    let mut csv = format!("{PREDICTION_CSV_HEADER}\n");
    if let Some(manifest) = &a.manifest {
        let dataset = Dataset::load_manifest(manifest)?;
        for t in &dataset.trials {
            let f = extract_trial_features(&dataset, t, &options)?;
            let p = model.predict(&f.d1, f.d2.as_deref())?;
            let label = t.label.is_labeled().then_some(t.label);
            csv.push_str(&prediction_csv_row(&t.subject_id, label, &p));
            csv.push('\n');
        }
    } else {
        let trial = single_trial(&a, &options)?;
        let p = predict_single(&model, &trial)?;
        csv.push_str(&prediction_csv_row(&a.subject, None, &p));
        csv.push('\n');
    }
    emit(a.output.as_deref(), &csv)
}

fn single_trial(a: &PredictCmd, options: &FeatureOptions) -> Result<UnseenTrial> {
    let path = a.landmarks.as_ref().expect("clap enforces --landmarks");
    let traj = load_landmark_trajectory(path, a.fps)?;
    let trimmed = trim_trajectory(&traj, options.trim_seconds, a.fps)?;
    let d1 = average_movement_with(&trimmed.to_derived()?, options.movement)?.into_vec();
    let d2 = match &a.ppg {
        Some(p) => {
            let ppg = load_ppg(p, a.rate)?;
            Some(extract_ppg_features(&segment_beats(&ppg, options.segment)?)?.into_vec())
        }
        None => None,
    };
    Ok(UnseenTrial {
        id: crate::cascade::TrialId::new(&a.subject, Label::Unseen),
        d1,
        d2,
    })
}

fn predict_single(model: &CascadeModel, t: &UnseenTrial) -> Result<crate::cascade::Prediction> {
    model.predict(&t.d1, t.d2.as_deref())
}

fn report(a: ReportCmd) -> Result<()> {
    let path = &a.evaluation;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let outcome: LoocvOutcome = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    create_dir(&a.out.out)?;
    let rendered = render_report(&outcome, &a.out.out)?;
    write_run_manifest(
        &a.out.out,
        &serde_json::json!({ "command": "report", "evaluation": outcome.config }),
    )?;
    print_summary(&outcome);
    println!(
        "wrote {} files to {}",
        rendered.files.len() + 1,
        a.out.out.display()
    );
    Ok(())
}
