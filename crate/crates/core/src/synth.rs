//! Small synthetic videos (frames, sidecar, manifest) for smoke tests and
//! demos. Everything is deterministic.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::au::{AuCatalog, EmotionLabel};
use crate::eval::Tier;
use crate::geometry::{BoundingBox, Point, LANDMARK_COUNT};
use crate::pipeline::frame_path;
use crate::sidecar::{RawBox, RawDetection, RawFrame, RawSidecar, SIDECAR_SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFace {
    /// Box in the first frame: x_min, y_min, x_max, y_max.
    pub bbox: [f64; 4],
    /// Shift per frame.
    pub drift: (f64, f64),
    /// Drives the AU scores and the detector hint.
    pub emotion: Option<EmotionLabel>,
    pub landmarks: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    pub faces: Vec<SynthFace>,
    pub label: EmotionLabel,
    pub tier: Tier,
    pub target_face_id: u32,
}

impl SynthFace {
    fn box_at(&self, frame: usize) -> [f64; 4] {
        let [x0, y0, x1, y1] = self.bbox;
        let (dx, dy) = (self.drift.0 * frame as f64, self.drift.1 * frame as f64);
        [x0 + dx, y0 + dy, x1 + dx, y1 + dy]
    }
}

/// A plausible 68-point layout inside `b`.
pub fn face_landmarks(b: &BoundingBox) -> Vec<Point> {
    let mut unit: Vec<(f64, f64)> = Vec::with_capacity(LANDMARK_COUNT);
    // jaw, left ear round the chin to the right ear
    for i in 0..17 {
        let t = std::f64::consts::PI * (1.0 - i as f64 / 16.0);
        unit.push((0.5 + 0.45 * t.cos(), 0.45 + 0.5 * t.sin()));
    }
    for i in 0..5 {
        unit.push((0.15 + 0.065 * i as f64, 0.3));
    }
    for i in 0..5 {
        unit.push((0.59 + 0.065 * i as f64, 0.3));
    }
    for i in 0..4 {
        unit.push((0.5, 0.36 + 0.06 * i as f64));
    }
    for i in 0..5 {
        unit.push((0.4 + 0.05 * i as f64, 0.6));
    }
    let ring = |cx: f64, cy: f64, rx: f64, ry: f64, n: usize, out: &mut Vec<(f64, f64)>| {
        for i in 0..n {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            out.push((cx - rx * t.cos(), cy - ry * t.sin()));
        }
    };
    ring(0.3, 0.4, 0.07, 0.03, 6, &mut unit);
    ring(0.7, 0.4, 0.07, 0.03, 6, &mut unit);
    ring(0.5, 0.75, 0.18, 0.07, 12, &mut unit);
    ring(0.5, 0.75, 0.1, 0.03, 8, &mut unit);
    debug_assert_eq!(unit.len(), LANDMARK_COUNT);
    unit.into_iter()
        .map(|(u, v)| Point::new(b.x_min() + u * b.width(), b.y_min() + v * b.height()))
        .collect()
}

/// High scores on the emotion's AUs, low elsewhere.
pub fn au_scores_for(emotion: Option<EmotionLabel>, catalog: &AuCatalog) -> BTreeMap<u32, f64> {
    let active = emotion.map(|e| catalog.aus_for_emotion(e)).unwrap_or_default();
    catalog
        .entries()
        .map(|e| {
            let s = if active.contains(&e.au_id) {
                0.6 + 0.1 * (e.au_id % 4) as f64
            } else {
                0.05 * (e.au_id % 3) as f64
            };
            (e.au_id, s)
        })
        .collect()
}

fn frame_image(video: &SynthVideo, frame: usize) -> RgbImage {
    let (w, h) = (video.width, video.height);
    let mut img = RgbImage::from_fn(w, h, |x, y| {
        Rgb([(x * 255 / w) as u8, (y * 255 / h) as u8, (40 + 20 * frame) as u8])
    });
    for (n, face) in video.faces.iter().enumerate() {
        let [x0, y0, x1, y1] = face.box_at(frame);
        let tone = Rgb([200 - 12 * n as u8 % 80, 160, 130]);
        for y in (y0.floor() as u32)..(y1.ceil() as u32).min(h) {
            for x in (x0.floor() as u32)..(x1.ceil() as u32).min(w) {
                img.put_pixel(x, y, tone);
            }
        }
    }
    img
}

pub fn sidecar_for(video: &SynthVideo, catalog: &AuCatalog) -> RawSidecar {
    let frames = (0..video.frames)
        .map(|f| RawFrame {
            frame_index: f,
            detector_failed: false,
            detections: video
                .faces
                .iter()
                .map(|face| {
                    let [x0, y0, x1, y1] = face.box_at(f);
                    let bbox = BoundingBox::new(x0, y0, x1, y1).expect("synthetic boxes are valid");
                    RawDetection {
                        bbox: RawBox {
                            x_min: x0,
                            y_min: y0,
                            x_max: x1,
                            y_max: y1,
                        },
                        confidence: 0.99,
                        landmarks: face
                            .landmarks
                            .then(|| face_landmarks(&bbox).into_iter().map(|p| [p.x, p.y]).collect()),
                        au_scores: au_scores_for(face.emotion, catalog)
                            .into_iter()
                            .map(|(k, v)| (k.to_string(), v))
                            .collect(),
                        dominant_emotion: face.emotion.map(|e| e.to_string()),
                        mask: None,
                    }
                })
                .collect(),
        })
        .collect();
    RawSidecar {
        schema_version: SIDECAR_SCHEMA_VERSION,
        video_id: video.video_id.clone(),
        frame_width: video.width,
        frame_height: video.height,
        detector: Some(serde_json::json!({"name": "synthetic"})),
        frames,
    }
}

/// Writes `dir/frame_NNNNNN.png` and `dir/sidecar.json`; returns the sidecar
/// path.
pub fn write_video(dir: &Path, video: &SynthVideo, catalog: &AuCatalog) -> io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    for f in 0..video.frames {
        frame_image(video, f)
            .save(frame_path(dir, f))
            .map_err(io::Error::other)?;
    }
    let path = dir.join("sidecar.json");
    let json = serde_json::to_string_pretty(&sidecar_for(video, catalog)).map_err(io::Error::other)?;
    std::fs::write(&path, json)?;
    Ok(path)
}

#[derive(Serialize)]
struct ManifestLine<'a> {
    video_id: &'a str,
    frames_dir: String,
    sidecar: String,
    target_face_id: u32,
    label: String,
    tier: String,
}

/// Writes each video under `dir/<video_id>/` plus `dir/manifest.jsonl` with
/// relative paths; returns the manifest path.
pub fn write_dataset(dir: &Path, videos: &[SynthVideo]) -> io::Result<PathBuf> {
    let catalog = AuCatalog::default();
    let mut manifest = String::new();
    for v in videos {
        write_video(&dir.join(&v.video_id), v, &catalog)?;
        let line = ManifestLine {
            video_id: &v.video_id,
            frames_dir: v.video_id.clone(),
            sidecar: format!("{}/sidecar.json", v.video_id),
            target_face_id: v.target_face_id,
            label: v.label.to_string(),
            tier: v.tier.to_string(),
        };
        manifest.push_str(&serde_json::to_string(&line).map_err(io::Error::other)?);
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, manifest)?;
    Ok(path)
}

fn grid_faces(n: usize, width: u32, emotion: EmotionLabel) -> Vec<SynthFace> {
    let cols = 4;
    let size = width as f64 / (cols as f64 + 1.0);
    (0..n)
        .map(|i| {
            let (c, r) = ((i % cols) as f64, (i / cols) as f64);
            let x = 4.0 + c * (size + 4.0);
            let y = 4.0 + r * (size + 4.0);
            // first face is the largest so it gets ID 1
            let s = if i == 0 { size } else { size - 2.0 };
            SynthFace {
                bbox: [x, y, x + s, y + s],
                drift: (1.0, 0.5),
                emotion: Some(if i == 0 { emotion } else { EmotionLabel::Neutral }),
                landmarks: i % 2 == 0,
            }
        })
        .collect()
}

/// Three 3-frame videos, one per tier. The first has an extra face hidden
/// inside the target's box that overlap resolution removes.
pub fn demo_videos() -> Vec<SynthVideo> {
    let (w, h) = (180, 120);
    let mut hard = grid_faces(2, w, EmotionLabel::Happiness);
    hard.push(SynthFace {
        bbox: [10.0, 10.0, 20.0, 20.0],
        drift: (1.0, 0.5),
        emotion: None,
        landmarks: false,
    });
    vec![
        SynthVideo {
            video_id: "synthetic_hard".into(),
            width: w,
            height: h,
            frames: 3,
            faces: hard,
            label: EmotionLabel::Happiness,
            tier: Tier::Hard,
            target_face_id: 1,
        },
        SynthVideo {
            video_id: "synthetic_medium".into(),
            width: w,
            height: h,
            frames: 3,
            faces: grid_faces(5, w, EmotionLabel::Sadness),
            label: EmotionLabel::Sadness,
            tier: Tier::Medium,
            target_face_id: 1,
        },
        SynthVideo {
            video_id: "synthetic_easy".into(),
            width: w,
            height: h,
            frames: 3,
            faces: grid_faces(8, w, EmotionLabel::Anger),
            label: EmotionLabel::Anger,
            tier: Tier::Easy,
            target_face_id: 1,
        },
    ]
}
