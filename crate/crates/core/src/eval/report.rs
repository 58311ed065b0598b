use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::svg::{self, BoxCategory, Panel, Series, PALETTE};
use super::{Accuracy, GridRow, LoocvOutcome};
use crate::cascade::{prediction_csv_row, Level, PREDICTION_CSV_HEADER};
use crate::error::{Error, Result};
use crate::landmarks::LandmarkGroup;
use crate::mlp::TrainHistory;

/// Paths written by `render_report`, relative to its output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderedReport {
    pub files: Vec<PathBuf>,
}

struct Writer<'a> {
    root: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn put(&mut self, rel: impl Into<PathBuf>, contents: impl AsRef<[u8]>) -> Result<()> {
        let rel = rel.into();
        let path = self.root.join(&rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(rel);
        Ok(())
    }
}

fn grid_table(out: &mut String, subjects: &[String], rows: &[GridRow]) {
    out.push_str("| |");
    for s in subjects {
        let _ = write!(out, " {s} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(subjects.len()));
    out.push('\n');
    for row in rows {
        let _ = write!(out, "| {} |", row.name);
        for &c in &row.cells {
            out.push_str(if c { " o |" } else { " x |" });
        }
        out.push('\n');
    }
}

fn accuracy_line(name: &str, a: &Accuracy) -> String {
    format!("{name} accuracy: {}/{} = {:.4}\n", a.correct, a.total, a.value())
}

fn curve_svg(title: &str, h: &TrainHistory) -> String {
    let pts = |f: &dyn Fn(&crate::mlp::EpochRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        h.epochs
            .iter()
            .filter_map(|e| f(e).map(|v| (e.epoch as f64, v)))
            .collect()
    };
    let loss_title = format!("{title}: loss");
    let acc_title = format!("{title}: accuracy");
    svg::line_panels(
        &[
            Panel {
                title: &loss_title,
                y_label: "cross-entropy",
                series: vec![
                    Series {
                        name: "train",
                        points: pts(&|e| Some(e.train_loss)),
                        color: PALETTE[0],
                    },
                    Series {
                        name: "held-out",
                        points: pts(&|e| e.test_loss),
                        color: PALETTE[1],
                    },
                ],
            },
            Panel {
                title: &acc_title,
                y_label: "accuracy",
                series: vec![
                    Series {
                        name: "train",
                        points: pts(&|e| Some(e.train_acc)),
                        color: PALETTE[0],
                    },
                    Series {
                        name: "held-out",
                        points: pts(&|e| e.test_acc),
                        color: PALETTE[1],
                    },
                ],
            },
        ],
        "epoch",
    )
}

fn last_acc(h: &TrainHistory) -> (String, String) {
    h.epochs
        .last()
        .map(|e| {
            (
                format!("{:.3}", e.train_acc),
                e.test_acc.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into()),
            )
        })
        .unwrap_or_else(|| ("-".into(), "-".into()))
}

fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes report.md, the CSV tables, per-fold training curves, the group
/// movement and beat interval plots, and evaluation.json into `out_dir`.
/// Output bytes depend only on `outcome`.
pub fn render_report(outcome: &LoocvOutcome, out_dir: &Path) -> Result<RenderedReport> {
    let r = &outcome.report;
    if r.subjects.is_empty() {
        return Err(Error::Usage("cannot render an empty evaluation".into()));
    }
    let mut w = Writer {
        root: out_dir,
        files: Vec::new(),
    };

    let mut md = String::from("# Force-level evaluation\n\n");
    let _ = writeln!(
        md,
        "Leave-one-subject-out cross-validation over {n} subjects ({n} folds, {} evaluated trials). \
         Master seed {}; fold k uses seed `{} xor k`.\n",
        outcome.folds.iter().map(|f| f.trials.len()).sum::<usize>(),
        outcome.config.seed,
        outcome.config.seed,
        n = r.subjects.len(),
    );

    md.push_str("## Stage 1: NN1, group A (100%) vs group B (0% & 50%)\n\n");
    grid_table(&mut md, &r.subjects, &r.nn1_grid);
    md.push('\n');
    md.push_str(&accuracy_line("NN1", &r.nn1_accuracy));

    md.push_str("\n## Stage 2: NN2, 0% vs 50%\n\n");
    grid_table(&mut md, &r.subjects, &r.nn2_grid);
    md.push('\n');
    md.push_str(&accuracy_line("NN2", &r.nn2_accuracy));

    md.push_str("\n## Final predictions (NN1 then NN2)\n\n");
    grid_table(&mut md, &r.subjects, &r.final_grid);
    md.push('\n');
    md.push_str(&accuracy_line("Overall", &r.overall_accuracy));
    let _ = writeln!(
        md,
        "\nReference values ({}): NN1 {:.3}, NN2 {:.3}, overall {:.3}.",
        r.reference.note, r.reference.nn1_accuracy, r.reference.nn2_accuracy, r.reference.overall_accuracy
    );

    md.push_str("\n## Leakage audit\n\n");
    let failed: Vec<&str> = outcome
        .folds
        .iter()
        .filter(|f| !f.audit.passed())
        .map(|f| f.held_out_subject.as_str())
        .collect();
    if failed.is_empty() {
        let _ = writeln!(
            md,
            "All {} folds passed: no held-out trial among training, scaler or batch-norm rows.",
            outcome.folds.len()
        );
    } else {
        let _ = writeln!(md, "FAILED for held-out subjects: {}", failed.join(", "));
    }

    md.push_str("\n## Landmark group movement\n\nPer-trial mean movement of each group's landmarks (pixels).\n\n");
    md.push_str("| Level | Group | n | min | Q1 | median | Q3 | max |\n|---|---|---|---|---|---|---|---|\n");
    let mut groups_csv = String::from("level,group,name,count,mean,min,q1,median,q3,max\n");
    for b in &r.group_boxes {
        let s = &b.summary;
        let _ = writeln!(
            md,
            "| {} | {}. {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
            b.level.percent(),
            b.group.number(),
            b.group.name(),
            s.count,
            s.min,
            s.q1,
            s.median,
            s.q3,
            s.max
        );
        let _ = writeln!(
            groups_csv,
            "{},{},{},{},{},{},{},{},{},{}",
            b.level.label(),
            b.group.number(),
            b.group.name(),
            s.count,
            s.mean,
            s.min,
            s.q1,
            s.median,
            s.q3,
            s.max
        );
    }
    md.push_str("\n![group movement](group_movement.svg)\n");
    let categories: Vec<BoxCategory> = LandmarkGroup::ALL
        .iter()
        .map(|&g| BoxCategory {
            name: format!("{}. {}", g.number(), g.name()),
            boxes: Level::ALL
                .iter()
                .map(|&l| {
                    r.group_boxes
                        .iter()
                        .find(|b| b.group == g && b.level == l)
                        .map(|b| &b.summary)
                })
                .collect(),
        })
        .collect();
    let level_names: Vec<&str> = Level::ALL.iter().map(|l| l.percent()).collect();
    w.put(
        "group_movement.svg",
        svg::box_plot("Landmark group movement", "pixels", &level_names, &categories),
    )?;
    w.put("group_stats.csv", groups_csv)?;

    md.push_str("\n## Beat intervals (T3 - T1)\n\n| Level | beats | mean (s) | SD (s) | median (s) |\n|---|---|---|---|---|\n");
    for iv in &r.intervals {
        let _ = writeln!(
            md,
            "| {} | {} | {:.4} | {:.4} | {:.4} |",
            iv.level.percent(),
            iv.summary.count,
            iv.summary.mean,
            iv.sd,
            iv.summary.median
        );
    }
    md.push_str("\n![beat intervals](intervals.svg)\n");
    let interval_names: Vec<&str> = r.intervals.iter().map(|iv| iv.level.percent()).collect();
    w.put(
        "intervals.svg",
        svg::box_plot(
            "Beat interval T3 - T1",
            "seconds",
            &interval_names,
            &[BoxCategory {
                name: "T3 - T1".into(),
                boxes: r.intervals.iter().map(|iv| Some(&iv.summary)).collect(),
            }],
        ),
    )?;

    md.push_str("\n## Training curves\n\nHeld-out curves are computed for display only; they never influence training.\n\n");
    md.push_str("| Fold | Held out | NN1 epochs | NN1 train acc | NN1 held-out acc | NN2 epochs | NN2 train acc | NN2 held-out acc | Curves |\n");
    md.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for f in &outcome.folds {
        let stem = format!("curves/fold_{:02}", f.fold + 1);
        w.put(format!("{stem}_nn1.csv"), f.nn1_history.to_csv())?;
        w.put(format!("{stem}_nn2.csv"), f.nn2_history.to_csv())?;
        w.put(
            format!("{stem}_nn1.svg"),
            curve_svg(&format!("NN1, held out {}", f.held_out_subject), &f.nn1_history),
        )?;
        w.put(
            format!("{stem}_nn2.svg"),
            curve_svg(&format!("NN2, held out {}", f.held_out_subject), &f.nn2_history),
        )?;
        let (a1, b1) = last_acc(&f.nn1_history);
        let (a2, b2) = last_acc(&f.nn2_history);
        let _ = writeln!(
            md,
            "| {} | {} | {} | {a1} | {b1} | {} | {a2} | {b2} | [NN1]({stem}_nn1.svg) [NN2]({stem}_nn2.svg) |",
            f.fold + 1,
            f.held_out_subject,
            f.nn1_history.len(),
            f.nn2_history.len(),
        );
    }

    let mut predictions = format!("{PREDICTION_CSV_HEADER}\n");
    for f in &outcome.folds {
        for t in &f.trials {
            predictions.push_str(&prediction_csv_row(&t.id.subject, Some(t.id.label), &t.prediction));
            predictions.push('\n');
        }
    }
    w.put("predictions.csv", predictions)?;

    if let Some(u) = &outcome.robustness {
        md.push_str("\n## Unseen activity\n\n");
        let _ = writeln!(md, "{}", u.summary_line());
        if !u.predictions.is_empty() {
            md.push_str("\n| Trial | Predicted | P(A) | P(B) | P(0%) | P(50%) |\n|---|---|---|---|---|---|\n");
            let mut csv = format!("{PREDICTION_CSV_HEADER}\n");
            for (id, p) in &u.predictions {
                let (p0, p50) = p
                    .level_probs
                    .map(|[a, b]| (format!("{a:.3}"), format!("{b:.3}")))
                    .unwrap_or_else(|| ("-".into(), "-".into()));
                let _ = writeln!(
                    md,
                    "| {id} | {} | {:.3} | {:.3} | {p0} | {p50} |",
                    p.level.percent(),
                    p.group_probs[0],
                    p.group_probs[1]
                );
                csv.push_str(&prediction_csv_row(&id.subject, Some(id.label), p));
                csv.push('\n');
            }
            w.put("unseen_predictions.csv", csv)?;
        }
    }

    let mut d1 = String::from("subject,label");
    for j in 0..crate::landmarks::DERIVED_POINTS {
        let _ = write!(d1, ",d{j}");
    }
    d1.push('\n');
    let mut d2 = String::from("subject,label");
    for k in 1..=crate::ppg::PPG_FEATURES {
        let _ = write!(d2, ",f{k}");
    }
    d2.push('\n');
    for f in &outcome.features {
        let _ = writeln!(d1, "{},{},{}", f.id.subject, f.id.label, join_f64(&f.d1));
        if let Some(v) = &f.d2 {
            let _ = writeln!(d2, "{},{},{}", f.id.subject, f.id.label, join_f64(v));
        }
    }
    w.put("d1.csv", d1)?;
    w.put("d2.csv", d2)?;

    w.put("report.md", md)?;
    let json = serde_json::to_vec_pretty(outcome)
        .map_err(|e| Error::Format(format!("cannot serialise evaluation: {e}")))?;
    w.put("evaluation.json", json)?;

    w.files.sort();
    Ok(RenderedReport { files: w.files })
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    config: &'a C,
    artifacts: Vec<Artifact>,
}

/// Writes `run.json`: the run configuration plus the SHA-256 of every other
/// file under `out_dir`, sorted by path.
pub fn write_run_manifest<C: Serialize>(out_dir: &Path, config: &C) -> Result<()> {
    let mut files = Vec::new();
    collect_files(out_dir, out_dir, &mut files)?;
    files.retain(|p| p != Path::new("run.json"));
    files.sort();
    let mut artifacts = Vec::with_capacity(files.len());
    for rel in files {
        let path = out_dir.join(&rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        artifacts.push(Artifact {
            path: rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/"),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let json = serde_json::to_vec_pretty(&RunManifest { config, artifacts })
        .map_err(|e| Error::Format(format!("cannot serialise run manifest: {e}")))?;
    let path = out_dir.join("run.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}
