//! Box arithmetic, occlusion-driven overlap resolution, and cross-frame face IDs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::au::EmotionLabel;

/// Number of points in the standard facial landmark layout.
pub const LANDMARK_COUNT: usize = 68;

/// Default overlap threshold. Any measurable overlap discards the smaller face.
pub const DEFAULT_EPSILON: f64 = 0.0;

/// Default IoU needed to continue a track into the next frame.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max}): {reason}")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned box in pixel coordinates, origin top-left.
///
/// Construction enforces `0 <= x_min < x_max` and `0 <= y_min < y_max`, so
/// every box has strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let err = |reason| GeometryError::InvalidBox {
            x_min,
            y_min,
            x_max,
            y_max,
            reason,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(err("non-finite coordinate"));
        }
        if x_min < 0.0 || y_min < 0.0 {
            return Err(err("negative coordinate"));
        }
        if x_min >= x_max {
            return Err(err("x_min must be less than x_max"));
        }
        if y_min >= y_max {
            return Err(err("y_min must be less than y_max"));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
    pub fn top_left(&self) -> Point {
        Point::new(self.x_min, self.y_min)
    }

    /// Multiplies every coordinate by the given factors.
    pub fn scaled(&self, sx: f64, sy: f64) -> Result<Self, GeometryError> {
        Self::new(
            self.x_min * sx,
            self.y_min * sy,
            self.x_max * sx,
            self.y_max * sy,
        )
    }

    fn intersection_area(&self, other: &Self) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x_min: f64,
            y_min: f64,
            x_max: f64,
            y_max: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        BoundingBox::new(raw.x_min, raw.y_min, raw.x_max, raw.y_max)
            .map_err(serde::de::Error::custom)
    }
}

pub fn area(b: &BoundingBox) -> f64 {
    b.width() * b.height()
}

/// Intersection over the smaller of the two areas.
///
/// Unlike IoU this reaches 1.0 whenever one box contains the other, which is
/// what makes it an occlusion measure.
pub fn overlap_ratio(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    (inter / area(a).min(area(b))).clamp(0.0, 1.0)
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = area(a) + area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One detected face in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceObservation {
    pub frame_index: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// Exactly [`LANDMARK_COUNT`] points when present.
    pub landmarks: Option<Vec<Point>>,
    /// AU id to activation in `[0, 1]`.
    pub au_scores: BTreeMap<u32, f64>,
    pub dominant_emotion_hint: Option<EmotionLabel>,
    pub confidence: f64,
    /// Optional body-mask raster supplied by the detector.
    pub mask: Option<PathBuf>,
}

impl FaceObservation {
    /// A bare observation with no landmarks, AU scores or hint.
    pub fn from_box(frame_index: usize, bbox: BoundingBox) -> Self {
        Self {
            frame_index,
            bbox,
            landmarks: None,
            au_scores: BTreeMap::new(),
            dominant_emotion_hint: None,
            confidence: 1.0,
            mask: None,
        }
    }
}

/// Which already-seen faces a candidate is compared against during
/// overlap resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapPolicy {
    /// A candidate must clear every face kept so far.
    #[default]
    AllAccepted,
    /// Compatibility mode: a candidate is compared only with its immediate
    /// predecessor in area order, whether or not that predecessor was kept.
    AdjacentPairs,
}

/// Keeps the larger faces and drops any face whose overlap ratio with a kept
/// face exceeds `epsilon`. A ratio exactly equal to `epsilon` is kept.
///
/// Output is in kept order: area descending, ties resolved by input order.
pub fn resolve_overlaps(faces: &[FaceObservation], epsilon: f64) -> Vec<FaceObservation> {
    resolve_overlaps_with(faces, epsilon, OverlapPolicy::AllAccepted)
}

pub fn resolve_overlaps_with(
    faces: &[FaceObservation],
    epsilon: f64,
    policy: OverlapPolicy,
) -> Vec<FaceObservation> {
    sorted_kept_indices(faces.iter().map(|f| &f.bbox), epsilon, policy)
        .into_iter()
        .map(|i| faces[i].clone())
        .collect()
}

/// Index form of [`resolve_overlaps_with`], over bare boxes.
pub fn sorted_kept_indices<'a>(
    boxes: impl IntoIterator<Item = &'a BoundingBox>,
    epsilon: f64,
    policy: OverlapPolicy,
) -> Vec<usize> {
    let boxes: Vec<&BoundingBox> = boxes.into_iter().collect();
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    // stable: equal areas keep input order
    order.sort_by(|&a, &b| area(boxes[b]).total_cmp(&area(boxes[a])));

    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    for (pos, &candidate) in order.iter().enumerate() {
        let keep = match policy {
            OverlapPolicy::AllAccepted => kept
                .iter()
                .all(|&k| overlap_ratio(boxes[candidate], boxes[k]) <= epsilon),
            OverlapPolicy::AdjacentPairs => {
                pos == 0 || overlap_ratio(boxes[candidate], boxes[order[pos - 1]]) <= epsilon
            }
        };
        if keep {
            kept.push(candidate);
        }
    }
    kept
}

/// A face identity followed across frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedFace {
    pub face_id: u32,
    pub observations: BTreeMap<usize, FaceObservation>,
}

impl TrackedFace {
    pub fn at(&self, frame_index: usize) -> Option<&FaceObservation> {
        self.observations.get(&frame_index)
    }
}

/// Greedy IoU tracking between consecutive entries of `per_frame`.
///
/// Pairs are matched in order of decreasing IoU; a face with no partner at or
/// above `iou_threshold` opens a new track. IDs start at 1 and are assigned in
/// the order tracks open, so the first frame's faces get IDs in kept order.
/// A frame in which a face is missing ends its track.
pub fn assign_ids(
    per_frame_kept: &[(usize, Vec<FaceObservation>)],
    iou_threshold: f64,
) -> Vec<TrackedFace> {
    let mut tracks: Vec<TrackedFace> = Vec::new();
    // (track index, box) for faces in the previous entry
    let mut previous: Vec<(usize, BoundingBox)> = Vec::new();

    for (frame_index, faces) in per_frame_kept {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (p, (_, prev_box)) in previous.iter().enumerate() {
            for (j, face) in faces.iter().enumerate() {
                let score = iou(prev_box, &face.bbox);
                if score > 0.0 && score >= iou_threshold {
                    pairs.push((score, p, j));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| previous[a.1].0.cmp(&previous[b.1].0))
                .then_with(|| a.2.cmp(&b.2))
        });

        let mut face_track: Vec<Option<usize>> = vec![None; faces.len()];
        let mut prev_used = vec![false; previous.len()];
        for (_, p, j) in pairs {
            if prev_used[p] || face_track[j].is_some() {
                continue;
            }
            prev_used[p] = true;
            face_track[j] = Some(previous[p].0);
        }

        let mut current = Vec::with_capacity(faces.len());
        for (j, face) in faces.iter().enumerate() {
            let track_idx = match face_track[j] {
                Some(t) => t,
                None => {
                    tracks.push(TrackedFace {
                        face_id: tracks.len() as u32 + 1,
                        observations: BTreeMap::new(),
                    });
                    tracks.len() - 1
                }
            };
            let mut obs = face.clone();
            obs.frame_index = *frame_index;
            tracks[track_idx].observations.insert(*frame_index, obs);
            current.push((track_idx, face.bbox));
        }
        previous = current;
    }
    tracks
}
