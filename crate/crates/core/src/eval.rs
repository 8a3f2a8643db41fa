//! Dataset manifests, per-video records and the accuracy / F1 report.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::au::EmotionLabel;
use crate::chain::{Prediction, StageId};

/// Difficulty band by number of visible faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Easy,
    Medium,
    Hard,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Easy, Tier::Medium, Tier::Hard];

    /// Easy above 6 faces, Medium 4 to 6, Hard 3 or fewer.
    pub fn from_face_count(n: usize) -> Tier {
        match n {
            7.. => Tier::Easy,
            4..=6 => Tier::Medium,
            _ => Tier::Hard,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::Easy => "Easy",
            Tier::Medium => "Medium",
            Tier::Hard => "Hard",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tier::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown tier {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    /// Directory holding `frame_{index:06}.png` files.
    pub frames_dir: PathBuf,
    pub sidecar: PathBuf,
    pub target_face_id: u32,
    pub label: EmotionLabel,
    pub tier: Tier,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    video_id: String,
    frames_dir: PathBuf,
    sidecar: PathBuf,
    target_face_id: u32,
    label: String,
    tier: String,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest line {line}{}: {message}", entry.as_ref().map(|e| format!(" ({e})")).unwrap_or_default())]
    Entry {
        line: usize,
        entry: Option<String>,
        message: String,
    },
}

fn entry_error(line: usize, entry: Option<&str>, message: impl Into<String>) -> ManifestError {
    ManifestError::Entry {
        line,
        entry: entry.map(str::to_string),
        message: message.into(),
    }
}

/// Parses a JSON-lines manifest. Relative paths are joined to `base_dir`;
/// blank lines and lines starting with `#` are skipped. File existence is not
/// checked here.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>, ManifestError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let raw: RawEntry =
            serde_json::from_str(trimmed).map_err(|e| entry_error(lineno, None, e.to_string()))?;
        let id = raw.video_id.as_str();
        if id.is_empty() {
            return Err(entry_error(lineno, None, "empty video_id"));
        }
        if !seen.insert(raw.video_id.clone()) {
            return Err(entry_error(lineno, Some(id), "duplicate video_id"));
        }
        if raw.target_face_id == 0 {
            return Err(entry_error(lineno, Some(id), "target_face_id must be positive"));
        }
        let label = raw
            .label
            .parse::<EmotionLabel>()
            .map_err(|e| entry_error(lineno, Some(id), e.to_string()))?;
        let tier = raw
            .tier
            .parse::<Tier>()
            .map_err(|e| entry_error(lineno, Some(id), e))?;
        out.push(ManifestEntry {
            frames_dir: base_dir.join(&raw.frames_dir),
            sidecar: base_dir.join(&raw.sidecar),
            video_id: raw.video_id,
            target_face_id: raw.target_face_id,
            label,
            tier,
        });
    }
    Ok(out)
}

/// Reads and validates a manifest, including that every referenced path
/// exists.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base)?;
    for (n, e) in entries.iter().enumerate() {
        for (what, p) in [("frames_dir", &e.frames_dir), ("sidecar", &e.sidecar)] {
            if !p.exists() {
                return Err(entry_error(
                    n + 1,
                    Some(&e.video_id),
                    format!("{what} {} does not exist", p.display()),
                ));
            }
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLatency {
    pub stage: StageId,
    pub latency_ms: u64,
}

/// Outcome for one manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub video_id: String,
    pub tier: Tier,
    pub ground_truth: EmotionLabel,
    pub prediction: Prediction,
    pub stage_latencies: Vec<StageLatency>,
    pub total_inference_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn is_correct(&self) -> bool {
        self.prediction == Prediction::Label(self.ground_truth)
    }
}

pub fn write_records(records: &[EvalRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

pub fn read_records(text: &str) -> Result<Vec<EvalRecord>, ManifestError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| entry_error(i + 1, None, e.to_string())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Averaging {
    #[default]
    Macro,
    Micro,
}

impl FromStr for F1Averaging {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "macro" => Ok(F1Averaging::Macro),
            "micro" => Ok(F1Averaging::Micro),
            other => Err(format!("unknown F1 averaging {other:?}")),
        }
    }
}

/// Accuracy and F1 over one slice of records, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub name: String,
    pub count: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionAccuracy {
    pub label: EmotionLabel,
    pub count: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

/// Rows are predictions (seven labels, then Unparseable), columns are ground
/// truth in label order.
pub type Confusion = [[usize; 7]; 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub f1_averaging: F1Averaging,
    /// Easy, Medium, Hard, Total.
    pub slices: Vec<SliceMetrics>,
    pub per_emotion: Vec<EmotionAccuracy>,
    pub confusion: Confusion,
    pub mean_inference_secs: Option<f64>,
    pub errors: usize,
}

impl Report {
    pub fn slice(&self, name: &str) -> Option<&SliceMetrics> {
        self.slices.iter().find(|s| s.name == name)
    }

    pub fn total(&self) -> &SliceMetrics {
        self.slices.last().expect("report always has a total")
    }
}

fn confusion_of<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> Confusion {
    let mut m = [[0usize; 7]; 8];
    for r in records {
        let row = r.prediction.label().map_or(7, |l| l.index());
        m[row][r.ground_truth.index()] += 1;
    }
    m
}

fn f1_percent(m: &Confusion, averaging: F1Averaging) -> f64 {
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let per_class = |c: usize| {
        let tp = m[c][c];
        let predicted: usize = m[c].iter().sum();
        let actual: usize = m.iter().map(|row| row[c]).sum();
        (tp, predicted - tp, actual - tp)
    };
    let score = match averaging {
        F1Averaging::Macro => (0..7).map(|c| {
            let (tp, fp, fn_) = per_class(c);
            f1(tp, fp, fn_)
        })
        .sum::<f64>()
            / 7.0,
        F1Averaging::Micro => {
            let (tp, fp, fn_) = (0..7)
                .map(per_class)
                .fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
            f1(tp, fp, fn_)
        }
    };
    100.0 * score
}

fn slice_metrics(name: &str, records: &[&EvalRecord], averaging: F1Averaging) -> SliceMetrics {
    let correct = records.iter().filter(|r| r.is_correct()).count();
    let (accuracy, f1) = if records.is_empty() {
        (None, None)
    } else {
        let m = confusion_of(records.iter().copied());
        (
            Some(100.0 * correct as f64 / records.len() as f64),
            Some(f1_percent(&m, averaging)),
        )
    };
    SliceMetrics {
        name: name.to_string(),
        count: records.len(),
        correct,
        accuracy,
        f1,
    }
}

/// Macro-F1 report; see [`evaluate_with`].
pub fn evaluate(records: &[EvalRecord]) -> Report {
    evaluate_with(records, F1Averaging::Macro)
}

/// Aggregates records into per-tier and overall metrics.
///
/// Unparseable predictions count as wrong and as no prediction for every
/// class. Macro-F1 averages over all seven classes, so a class that never
/// appears contributes zero.
pub fn evaluate_with(records: &[EvalRecord], averaging: F1Averaging) -> Report {
    let mut slices: Vec<SliceMetrics> = Tier::ALL
        .iter()
        .map(|t| {
            let sub: Vec<&EvalRecord> = records.iter().filter(|r| r.tier == *t).collect();
            slice_metrics(t.as_str(), &sub, averaging)
        })
        .collect();
    let all: Vec<&EvalRecord> = records.iter().collect();
    slices.push(slice_metrics("Total", &all, averaging));

    let per_emotion = EmotionLabel::ALL
        .iter()
        .map(|&label| {
            let count = records.iter().filter(|r| r.ground_truth == label).count();
            let correct = records
                .iter()
                .filter(|r| r.ground_truth == label && r.is_correct())
                .count();
            EmotionAccuracy {
                label,
                count,
                correct,
                accuracy: (count > 0).then(|| 100.0 * correct as f64 / count as f64),
            }
        })
        .collect();

    let mean_inference_secs = (!records.is_empty()).then(|| {
        records.iter().map(|r| r.total_inference_secs).sum::<f64>() / records.len() as f64
    });

    Report {
        f1_averaging: averaging,
        slices,
        per_emotion,
        confusion: confusion_of(records),
        mean_inference_secs,
        errors: records.iter().filter(|r| r.error.is_some()).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Table,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown report format {0:?} (expected json or table)")]
pub struct UnknownFormat(pub String);

impl FromStr for ReportFormat {
    type Err = UnknownFormat;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "table" | "text" => Ok(ReportFormat::Table),
            _ => Err(UnknownFormat(s.to_string())),
        }
    }
}

pub const EMPTY_CELL: &str = "—";

/// Two decimals, or an em dash for an empty slice.
pub fn format_cell(v: Option<f64>) -> String {
    v.map_or_else(|| EMPTY_CELL.to_string(), |x| format!("{x:.2}"))
}

fn pad(s: &str, width: usize) -> String {
    let n = s.chars().count();
    " ".repeat(width.saturating_sub(n)) + s
}

pub fn emit_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("report serializes") + "\n"
        }
        ReportFormat::Table => render_table(report),
    }
}

fn render_table(report: &Report) -> String {
    const W: usize = 9;
    let mut out = String::new();
    let f1_name = match report.f1_averaging {
        F1Averaging::Macro => "F@1",
        F1Averaging::Micro => "F@1 (micro)",
    };
    let label_w = 12;
    let row = |out: &mut String, name: &str, cells: Vec<String>| {
        let _ = write!(out, "{name:<label_w$}");
        for c in cells {
            out.push_str(&pad(&c, W));
        }
        out.push('\n');
    };

    row(&mut out, "", report.slices.iter().map(|s| s.name.clone()).collect());
    row(&mut out, "Acc%", report.slices.iter().map(|s| format_cell(s.accuracy)).collect());
    row(&mut out, f1_name, report.slices.iter().map(|s| format_cell(s.f1)).collect());
    row(&mut out, "Videos", report.slices.iter().map(|s| s.count.to_string()).collect());

    out.push('\n');
    row(&mut out, "Emotion", vec!["Acc%".into(), "Videos".into()]);
    for e in &report.per_emotion {
        row(&mut out, e.label.as_str(), vec![format_cell(e.accuracy), e.count.to_string()]);
    }

    out.push('\n');
    out.push_str("Confusion (rows: prediction, columns: ground truth)\n");
    row(
        &mut out,
        "",
        EmotionLabel::ALL.iter().map(|l| l.as_str()[..3].to_string()).collect(),
    );
    for (i, counts) in report.confusion.iter().enumerate() {
        let name = EmotionLabel::ALL.get(i).map_or("Unparseable", |l| l.as_str());
        row(&mut out, name, counts.iter().map(|c| c.to_string()).collect());
    }

    out.push('\n');
    let _ = writeln!(out, "Mean inference time (s): {}", format_cell(report.mean_inference_secs));
    let _ = writeln!(out, "Entries with errors: {}", report.errors);
    out
}
