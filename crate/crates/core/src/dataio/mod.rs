//! File formats, dataset manifests, model persistence and the synthetic
//! dataset generator.

mod model_file;
mod tables;
mod synth;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model_file::{decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION};
pub use synth::{synth_dataset, ClassValues, SynthConfig};
pub use tables::{
    load_landmark_trajectory, load_ppg, write_landmark_trajectory, write_ppg, TIMESTAMP_JITTER,
};

pub const DEFAULT_FPS: f64 = 50.0;
pub const DEFAULT_PPG_RATE: f64 = 128.0;
pub const MANIFEST_VERSION: u32 = 1;

/// Activity label of a recorded trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Pct0,
    Pct50,
    Pct100,
    /// An activity outside the training levels (e.g. talking); never trained on.
    Unseen,
}

impl Label {
    pub const LEVELS: [Label; 3] = [Label::Pct0, Label::Pct50, Label::Pct100];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Pct0 => "pct0",
            Label::Pct50 => "pct50",
            Label::Pct100 => "pct100",
            Label::Unseen => "unseen",
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unseen
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pct0" | "0" | "0%" => Ok(Label::Pct0),
            "pct50" | "50" | "50%" => Ok(Label::Pct50),
            "pct100" | "100" | "100%" => Ok(Label::Pct100),
            "unseen" | "talking" => Ok(Label::Unseen),
            other => Err(Error::Format(format!("unknown trial label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub subject_id: String,
    pub label: Label,
    pub landmark_path: PathBuf,
    pub ppg_path: PathBuf,
}

/// A set of trials plus the sampling rates shared by their files.
/// Relative trial paths resolve against `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trials: Vec<TrialRecord>,
    pub fps: f64,
    pub ppg_rate: f64,
    pub root: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    fps: f64,
    ppg_rate: f64,
    #[serde(rename = "trial", default)]
    trials: Vec<TrialRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(Error::Format(format!("fps must be positive, got {}", self.fps)));
        }
        if !(self.ppg_rate > 0.0) || !self.ppg_rate.is_finite() {
            return Err(Error::Format(format!(
                "ppg_rate must be positive, got {}",
                self.ppg_rate
            )));
        }
        let mut seen = HashSet::new();
        for t in self.trials.iter().filter(|t| t.label.is_labeled()) {
            if !seen.insert((t.subject_id.as_str(), t.label)) {
                return Err(Error::DatasetShape(format!(
                    "subject {} has more than one {} trial",
                    t.subject_id, t.label
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    /// Subjects in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        self.trials
            .iter()
            .map(|t| t.subject_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn labeled(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(|t| t.label.is_labeled())
    }

    pub fn unseen(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(|t| !t.label.is_labeled())
    }

    pub fn load_manifest(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ManifestFile = toml::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {}", path.display(), e.message())))?;
        if file.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "{}: manifest version {} is not supported",
                path.display(),
                file.version
            )));
        }
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let dataset = Dataset {
            trials: file.trials,
            fps: file.fps,
            ppg_rate: file.ppg_rate,
            root,
        };
        dataset.validate()?;
        for t in &dataset.trials {
            for p in [&t.landmark_path, &t.ppg_path] {
                let full = dataset.resolve(p);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "trial file not found"),
                    ));
                }
            }
        }
        Ok(dataset)
    }

    pub fn save_manifest(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let file = ManifestFile {
            version: MANIFEST_VERSION,
            fps: self.fps,
            ppg_rate: self.ppg_rate,
            trials: self.trials.clone(),
        };
        let text = toml::to_string(&file)
            .map_err(|e| Error::Format(format!("cannot serialise manifest: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
