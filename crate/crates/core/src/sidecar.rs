//! Detection sidecar ingestion.
//!
//! A sidecar is the per-video JSON document produced by the detector adapter:
//! frame dimensions plus, for every frame, the raw face detections with
//! landmarks and AU activations. The layout is described field by field in
//! `assets/sidecar.schema.json`. Validation collects every violation instead
//! of stopping at the first, so the adapter and the core can be compared on
//! the same corpus of broken files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::au::EmotionLabel;
use crate::geometry::{BoundingBox, FaceObservation, Point, LANDMARK_COUNT};

pub const SIDECAR_SCHEMA_VERSION: u32 = 1;

/// JSON schema shipped for the adapter side.
pub const SIDECAR_SCHEMA_JSON: &str = include_str!("../assets/sidecar.schema.json");

/// One invariant violation, located as precisely as the document allows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub frame: Option<usize>,
    pub face: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.frame, self.face) {
            (Some(fr), Some(fa)) => write!(f, "frame {fr}, face {fa}, {}: {}", self.field, self.message),
            (Some(fr), None) => write!(f, "frame {fr}, {}: {}", self.field, self.message),
            _ => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("cannot read sidecar {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("sidecar schema error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("sidecar has {} violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
}

impl SidecarError {
    pub fn violations(&self) -> Vec<Violation> {
        match self {
            SidecarError::Invalid(v) => v.clone(),
            SidecarError::Syntax {
                line,
                column,
                message,
            } => vec![Violation {
                frame: None,
                face: None,
                field: format!("line {line}, column {column}"),
                message: message.clone(),
            }],
            SidecarError::Io { path, source } => vec![Violation {
                frame: None,
                face: None,
                field: path.display().to_string(),
                message: source.to_string(),
            }],
        }
    }
}

// Raw wire structures: permissive numeric types so that range violations are
// reported as violations rather than as parse failures.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSidecar {
    pub schema_version: u32,
    pub video_id: String,
    pub frame_width: u32,
    pub frame_height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<serde_json::Value>,
    pub frames: Vec<RawFrame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawFrame {
    pub frame_index: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub detector_failed: bool,
    pub detections: Vec<RawDetection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDetection {
    #[serde(rename = "box")]
    pub bbox: RawBox,
    pub confidence: f64,
    #[serde(default)]
    pub landmarks: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub au_scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub dominant_emotion: Option<String>,
    #[serde(default)]
    pub mask: Option<String>,
}

/// A validated sidecar, ready for the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Sidecar {
    pub video_id: String,
    pub frame_width: u32,
    pub frame_height: u32,
    /// Ascending by frame index.
    pub frames: Vec<SidecarFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SidecarFrame {
    pub frame_index: usize,
    pub detector_failed: bool,
    pub faces: Vec<FaceObservation>,
}

impl Sidecar {
    pub fn load(path: &Path) -> Result<Self, SidecarError> {
        let text = std::fs::read_to_string(path).map_err(|source| SidecarError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json_str(&text, base)
    }

    /// Parses and validates. Mask paths are resolved against `base_dir`.
    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self, SidecarError> {
        let raw: RawSidecar = serde_json::from_str(text).map_err(|e| SidecarError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let violations = validate_raw(&raw);
        if !violations.is_empty() {
            return Err(SidecarError::Invalid(violations));
        }
        Ok(Self::from_raw_unchecked(raw, base_dir))
    }

    fn from_raw_unchecked(raw: RawSidecar, base_dir: &Path) -> Self {
        let mut frames: Vec<SidecarFrame> = raw
            .frames
            .into_iter()
            .map(|f| {
                let idx = f.frame_index;
                let faces = f
                    .detections
                    .into_iter()
                    .map(|d| FaceObservation {
                        frame_index: idx,
                        bbox: BoundingBox::new(d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max)
                            .expect("validated"),
                        landmarks: d
                            .landmarks
                            .map(|pts| pts.into_iter().map(|[x, y]| Point::new(x, y)).collect()),
                        au_scores: d
                            .au_scores
                            .into_iter()
                            .map(|(k, v)| (k.parse::<u32>().expect("validated"), v))
                            .collect(),
                        dominant_emotion_hint: d
                            .dominant_emotion
                            .map(|s| s.parse::<EmotionLabel>().expect("validated")),
                        confidence: d.confidence,
                        mask: d.mask.map(|m| base_dir.join(m)),
                    })
                    .collect();
                SidecarFrame {
                    frame_index: idx,
                    detector_failed: f.detector_failed,
                    faces,
                }
            })
            .collect();
        frames.sort_by_key(|f| f.frame_index);
        Self {
            video_id: raw.video_id,
            frame_width: raw.frame_width,
            frame_height: raw.frame_height,
            frames,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// Checks a sidecar file and returns every violation found; empty means valid.
pub fn validate_sidecar(path: &Path) -> Vec<Violation> {
    match Sidecar::load(path) {
        Ok(_) => Vec::new(),
        Err(e) => e.violations(),
    }
}

pub fn validate_raw(raw: &RawSidecar) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |frame, face, field: &str, message: String| {
        out.push(Violation {
            frame,
            face,
            field: field.to_string(),
            message,
        })
    };

    if raw.schema_version != SIDECAR_SCHEMA_VERSION {
        push(
            None,
            None,
            "schema_version",
            format!("expected {SIDECAR_SCHEMA_VERSION}, got {}", raw.schema_version),
        );
    }
    if raw.video_id.trim().is_empty() {
        push(None, None, "video_id", "must not be empty".into());
    }
    if raw.frame_width == 0 || raw.frame_height == 0 {
        push(None, None, "frame_width/frame_height", "must be positive".into());
    }
    let (w, h) = (raw.frame_width as f64, raw.frame_height as f64);

    let mut seen = BTreeSet::new();
    for frame in &raw.frames {
        if !seen.insert(frame.frame_index) {
            push(Some(frame.frame_index), None, "frame_index", "duplicate frame index".into());
        }
    }
    for expected in 0..raw.frames.len() {
        if !seen.contains(&expected) {
            push(Some(expected), None, "frame_index", "missing frame index".into());
        }
    }

    for frame in &raw.frames {
        let fi = Some(frame.frame_index);
        for (j, det) in frame.detections.iter().enumerate() {
            let fa = Some(j);
            let b = &det.bbox;
            match BoundingBox::new(b.x_min, b.y_min, b.x_max, b.y_max) {
                Err(e) => push(fi, fa, "box", e.to_string()),
                Ok(_) if b.x_max > w || b.y_max > h => push(
                    fi,
                    fa,
                    "box",
                    format!("extends beyond the {w}x{h} frame"),
                ),
                Ok(_) => {}
            }
            if !(0.0..=1.0).contains(&det.confidence) {
                push(fi, fa, "confidence", format!("{} outside [0, 1]", det.confidence));
            }
            if let Some(lm) = &det.landmarks {
                if lm.len() != LANDMARK_COUNT {
                    push(
                        fi,
                        fa,
                        "landmarks",
                        format!("expected {LANDMARK_COUNT} points, got {}", lm.len()),
                    );
                }
                if let Some((i, p)) = lm
                    .iter()
                    .enumerate()
                    .find(|(_, [x, y])| !(0.0..=w).contains(x) || !(0.0..=h).contains(y))
                {
                    push(
                        fi,
                        fa,
                        "landmarks",
                        format!("point {i} ({}, {}) outside the frame", p[0], p[1]),
                    );
                }
            }
            for (key, score) in &det.au_scores {
                match key.parse::<u32>() {
                    Ok(id) if id > 0 => {}
                    _ => push(fi, fa, "au_scores", format!("key {key:?} is not a positive AU id")),
                }
                if !(0.0..=1.0).contains(score) {
                    push(
                        fi,
                        fa,
                        "au_scores",
                        format!("AU{key} score {score} outside [0, 1]"),
                    );
                }
            }
            if let Some(label) = &det.dominant_emotion {
                if label.parse::<EmotionLabel>().is_err() {
                    push(fi, fa, "dominant_emotion", format!("unknown label {label:?}"));
                }
            }
            if let Some(mask) = &det.mask {
                if mask.is_empty() || Path::new(mask).is_absolute() {
                    push(fi, fa, "mask", "must be a non-empty relative path".into());
                }
            }
        }
    }
    out
}
