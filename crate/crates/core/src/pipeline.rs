//! End-to-end run for one video or a whole manifest: sample frames, resolve
//! overlapping faces, track IDs, rank AUs, render overlays and run the chain.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{GrayImage, ImageFormat, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::au::{AuCatalog, EmotionLabel, RankedAus, DEFAULT_TAU, DEFAULT_TOP_K};
use crate::chain::{run_voted, ChainInputs, ChainParams, Prediction, PromptMode, TemplateSet, TranscriptEntry};
use crate::client::Backend;
use crate::eval::{EvalRecord, ManifestEntry, StageLatency};
use crate::geometry::{
    assign_ids, resolve_overlaps_with, FaceObservation, OverlapPolicy, Point, TrackedFace, DEFAULT_EPSILON,
    DEFAULT_IOU_THRESHOLD,
};
use crate::render::{
    plan_overlays, rasterize, DetailScope, LayerToggles, MaskLayer, OverlayOptions, OverlayStyle, RenderError,
    RenderPlan,
};
use crate::sidecar::{Sidecar, SidecarError};

pub const DEFAULT_FRAME_SAMPLES: usize = 8;
pub const DEFAULT_FRAME_SIZE: (u32, u32) = (600, 400);

/// Image size limits in units of square patches, applied to every frame sent
/// to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBudget {
    pub min_patches: u32,
    pub max_patches: u32,
    pub patch: u32,
}

impl Default for PixelBudget {
    fn default() -> Self {
        Self {
            min_patches: 180,
            max_patches: 210,
            patch: 28,
        }
    }
}

impl PixelBudget {
    /// Target size: each side a multiple of `patch`, aspect ratio roughly
    /// kept, total patch count within `[min_patches, max_patches]` where the
    /// grid allows.
    pub fn fit(&self, width: u32, height: u32) -> (u32, u32) {
        let p = self.patch.max(1) as f64;
        let (w, h) = (width as f64, height as f64);
        let round = |v: f64| (v / p).round().max(1.0) * p;
        let (mut tw, mut th) = (round(w), round(h));
        let min_px = self.min_patches as f64 * p * p;
        let max_px = self.max_patches as f64 * p * p;
        if tw * th > max_px {
            let beta = (w * h / max_px).sqrt();
            tw = ((w / beta / p).floor().max(1.0)) * p;
            th = ((h / beta / p).floor().max(1.0)) * p;
        } else if tw * th < min_px {
            let beta = (min_px / (w * h)).sqrt();
            tw = (w * beta / p).ceil() * p;
            th = (h * beta / p).ceil() * p;
        }
        (tw as u32, th as u32)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.patch == 0 || self.min_patches == 0 || self.min_patches > self.max_patches {
            return Err(format!("invalid pixel budget {self:?}"));
        }
        Ok(())
    }
}

/// Everything that affects a pipeline run other than the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub epsilon: f64,
    pub overlap_policy: OverlapPolicy,
    pub iou_threshold: f64,
    pub tau: f64,
    pub top_k: usize,
    pub frame_sample_count: usize,
    pub sample_seed: u64,
    /// Frames are resized to this before drawing; `None` keeps native size.
    pub frame_size: Option<(u32, u32)>,
    /// Applied to rendered frames before they are sent; `None` sends as is.
    pub pixel_budget: Option<PixelBudget>,
    pub mode: PromptMode,
    pub layers: LayerToggles,
    pub style: OverlayStyle,
    /// Draw landmarks and AU tags on the target face only.
    pub target_detail_only: bool,
    pub chain: ChainParams,
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            overlap_policy: OverlapPolicy::default(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            tau: DEFAULT_TAU,
            top_k: DEFAULT_TOP_K,
            frame_sample_count: DEFAULT_FRAME_SAMPLES,
            sample_seed: 0,
            frame_size: Some(DEFAULT_FRAME_SIZE),
            pixel_budget: Some(PixelBudget::default()),
            mode: PromptMode::default(),
            layers: LayerToggles::default(),
            style: OverlayStyle::default(),
            target_detail_only: false,
            chain: ChainParams::default(),
            parallelism: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must be in [0, 1], got {v}"))
            }
        };
        unit("epsilon", self.epsilon)?;
        unit("iou_threshold", self.iou_threshold)?;
        unit("tau", self.tau)?;
        if self.top_k == 0 {
            return Err("k must be at least 1".into());
        }
        if self.frame_sample_count == 0 {
            return Err("frame sample count must be at least 1".into());
        }
        if matches!(self.frame_size, Some((0, _)) | Some((_, 0))) {
            return Err("frame size must be positive".into());
        }
        if let Some(b) = &self.pixel_budget {
            b.validate()?;
        }
        if self.chain.max_tokens == 0 {
            return Err("max_tokens must be at least 1".into());
        }
        if !(self.chain.temperature >= 0.0 && self.chain.temperature.is_finite()) {
            return Err(format!("temperature must be non-negative, got {}", self.chain.temperature));
        }
        if self.chain.num_trajectories == 0 {
            return Err("trajectories must be at least 1".into());
        }
        if self.parallelism == 0 {
            return Err("parallelism must be at least 1".into());
        }
        Ok(())
    }

    /// Overlay layers actually drawn: none for the plain baseline.
    pub fn effective_layers(&self) -> LayerToggles {
        if self.mode.uses_visual_prompts() {
            self.layers
        } else {
            LayerToggles::none()
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("sidecar: {0}")]
    Sidecar(#[from] SidecarError),
    #[error("frame {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("render: {0}")]
    Render(#[from] RenderError),
    #[error("sidecar has no frames")]
    NoFrames,
    #[error("face {0} is not tracked in this video")]
    TargetNotFound(u32),
}

/// `frame_000042.png` inside `dir`.
pub fn frame_path(dir: &Path, frame_index: usize) -> PathBuf {
    dir.join(format!("frame_{frame_index:06}.png"))
}

/// `count` frame indices out of `total`, evenly spaced with a seeded phase.
/// All frames are returned when `count >= total`.
pub fn sample_frames(total: usize, count: usize, seed: u64) -> Vec<usize> {
    if count == 0 || total == 0 {
        return Vec::new();
    }
    if count >= total {
        return (0..total).collect();
    }
    let stride = total as f64 / count as f64;
    let phase = ChaCha8Rng::seed_from_u64(seed).gen_range(0.0..stride);
    (0..count)
        .map(|i| ((phase + i as f64 * stride).floor() as usize).min(total - 1))
        .collect()
}

fn scale_observation(obs: &FaceObservation, sx: f64, sy: f64) -> FaceObservation {
    let mut out = obs.clone();
    out.bbox = obs.bbox.scaled(sx, sy).expect("positive scale keeps a box valid");
    out.landmarks = obs
        .landmarks
        .as_ref()
        .map(|l| l.iter().map(|p| Point::new(p.x * sx, p.y * sy)).collect());
    out
}

/// Faces of one video after overlap resolution and tracking, in the
/// coordinates of the frames that will be drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedVideo {
    pub video_id: String,
    pub native_size: (u32, u32),
    pub frame_size: (u32, u32),
    pub frame_indices: Vec<usize>,
    /// Faces kept per frame, in frame order.
    pub kept_counts: Vec<(usize, usize)>,
    pub tracks: Vec<TrackedFace>,
}

impl PreparedVideo {
    pub fn track(&self, face_id: u32) -> Option<&TrackedFace> {
        self.tracks.iter().find(|t| t.face_id == face_id)
    }
}

pub fn prepare_video(sidecar: &Sidecar, cfg: &PipelineConfig) -> PreparedVideo {
    let native = (sidecar.frame_width, sidecar.frame_height);
    let size = cfg.frame_size.unwrap_or(native);
    let sx = size.0 as f64 / native.0 as f64;
    let sy = size.1 as f64 / native.1 as f64;

    // Overlap ratio and IoU are scale invariant; working in native
    // coordinates keeps exact area ties intact.
    let kept: Vec<(usize, Vec<FaceObservation>)> = sidecar
        .frames
        .iter()
        .map(|f| (f.frame_index, resolve_overlaps_with(&f.faces, cfg.epsilon, cfg.overlap_policy)))
        .collect();
    let mut tracks = assign_ids(&kept, cfg.iou_threshold);
    for t in &mut tracks {
        for obs in t.observations.values_mut() {
            *obs = scale_observation(obs, sx, sy);
        }
    }
    PreparedVideo {
        video_id: sidecar.video_id.clone(),
        native_size: native,
        frame_size: size,
        frame_indices: sidecar.frames.iter().map(|f| f.frame_index).collect(),
        kept_counts: kept.iter().map(|(i, f)| (*i, f.len())).collect(),
        tracks,
    }
}

/// Per-face AU ranking for one frame.
pub fn rank_frame(
    tracks: &[TrackedFace],
    frame_index: usize,
    catalog: &AuCatalog,
    cfg: &PipelineConfig,
) -> BTreeMap<u32, RankedAus> {
    tracks
        .iter()
        .filter_map(|t| {
            let obs = t.at(frame_index)?;
            Some((
                t.face_id,
                catalog.rank_sorted(&obs.au_scores, obs.dominant_emotion_hint, cfg.tau, cfg.top_k),
            ))
        })
        .collect()
}

/// Ranks a face's AUs by mean score over `frames` (all its frames if it is
/// absent from every one). The hint is the most frequent one, earliest on
/// ties.
pub fn rank_track(track: &TrackedFace, frames: &[usize], catalog: &AuCatalog, cfg: &PipelineConfig) -> RankedAus {
    let mut obs: Vec<&FaceObservation> = frames.iter().filter_map(|i| track.at(*i)).collect();
    if obs.is_empty() {
        obs = track.observations.values().collect();
    }
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    let mut hints: Vec<(EmotionLabel, usize)> = Vec::new();
    for o in &obs {
        for (&id, &s) in &o.au_scores {
            let e = sums.entry(id).or_default();
            e.0 += s;
            e.1 += 1;
        }
        if let Some(h) = o.dominant_emotion_hint {
            match hints.iter_mut().find(|(l, _)| *l == h) {
                Some((_, n)) => *n += 1,
                None => hints.push((h, 1)),
            }
        }
    }
    let means: BTreeMap<u32, f64> = sums.into_iter().map(|(id, (s, n))| (id, s / n as f64)).collect();
    let best = hints.iter().map(|(_, n)| *n).max();
    let hint = hints.iter().find(|(_, n)| Some(*n) == best).map(|(l, _)| *l);
    catalog.rank_sorted(&means, hint, cfg.tau, cfg.top_k)
}

fn load_rgb(path: &Path) -> Result<RgbImage, PipelineError> {
    image::open(path)
        .map(|i| i.into_rgb8())
        .map_err(|e| PipelineError::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

fn load_mask(path: &Path, native: (u32, u32), target: (u32, u32)) -> Result<GrayImage, PipelineError> {
    let img = image::open(path)
        .map_err(|e| PipelineError::Render(RenderError::Mask {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }))?
        .into_luma8();
    if img.dimensions() != native {
        return Err(PipelineError::Render(RenderError::Mask {
            path: path.to_path_buf(),
            reason: format!("size {:?} differs from frame {:?}", img.dimensions(), native),
        }));
    }
    Ok(if native == target {
        img
    } else {
        imageops::resize(&img, target.0, target.1, FilterType::Nearest)
    })
}

/// Loads, normalizes and annotates one frame.
pub fn render_frame(
    video: &PreparedVideo,
    frames_dir: &Path,
    frame_index: usize,
    catalog: &AuCatalog,
    cfg: &PipelineConfig,
    detail: DetailScope,
) -> Result<RgbImage, PipelineError> {
    let path = frame_path(frames_dir, frame_index);
    let raw = load_rgb(&path)?;
    if raw.dimensions() != video.native_size {
        return Err(PipelineError::Image {
            path,
            reason: format!(
                "size {:?} differs from sidecar {:?}",
                raw.dimensions(),
                video.native_size
            ),
        });
    }
    let (w, h) = video.frame_size;
    let image = if raw.dimensions() == (w, h) {
        raw
    } else {
        imageops::resize(&raw, w, h, FilterType::Triangle)
    };
    let opts = OverlayOptions {
        layers: cfg.effective_layers(),
        style: cfg.style.clone(),
        detail,
    };
    let ranked = rank_frame(&video.tracks, frame_index, catalog, cfg);
    let mut plan: RenderPlan = plan_overlays(frame_index, &video.tracks, &ranked, catalog, &opts, (w, h));
    for spec in &mut plan.overlays {
        if let Some(p) = &spec.mask_path {
            spec.mask = Some(MaskLayer(load_mask(p, video.native_size, (w, h))?));
        }
    }
    Ok(rasterize(&plan, &image)?)
}

pub fn encode_png(image: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    buf.into_inner()
}

/// Resizes to the pixel budget (if any) and encodes as PNG.
pub fn encode_for_model(image: &RgbImage, budget: Option<PixelBudget>) -> Vec<u8> {
    match budget {
        Some(b) => {
            let (w, h) = b.fit(image.width(), image.height());
            if (w, h) == image.dimensions() {
                encode_png(image)
            } else {
                encode_png(&imageops::resize(image, w, h, FilterType::Triangle))
            }
        }
        None => encode_png(image),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    /// Bad or missing input files.
    Data,
    /// The model endpoint failed.
    Backend,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub video_id: String,
    pub kind: FailureKind,
    pub message: String,
}

/// Everything produced for one manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryOutcome {
    pub record: EvalRecord,
    pub transcript: Vec<TranscriptEntry>,
    pub failure: Option<EntryFailure>,
}

/// Shared, read-only inputs for a run.
pub struct PipelineContext<'a> {
    pub backend: &'a dyn Backend,
    pub catalog: &'a AuCatalog,
    pub templates: &'a TemplateSet,
    pub config: &'a PipelineConfig,
}

fn latencies(transcript: &[TranscriptEntry]) -> (Vec<StageLatency>, f64) {
    let lat: Vec<StageLatency> = transcript
        .iter()
        .filter(|t| t.error.is_none())
        .map(|t| StageLatency {
            stage: t.stage,
            latency_ms: t.latency_ms,
        })
        .collect();
    let total = lat.iter().map(|l| l.latency_ms).sum::<u64>() as f64 / 1000.0;
    (lat, total)
}

/// Frames for the chain, PNG-encoded, plus the target's AU ranking.
fn prepare_inputs(
    entry: &ManifestEntry,
    ctx: &PipelineContext<'_>,
) -> Result<(Vec<Vec<u8>>, RankedAus), PipelineError> {
    let cfg = ctx.config;
    let sidecar = Sidecar::load(&entry.sidecar)?;
    let video = prepare_video(&sidecar, cfg);
    if video.frame_indices.is_empty() {
        return Err(PipelineError::NoFrames);
    }
    let picks: Vec<usize> = sample_frames(video.frame_indices.len(), cfg.frame_sample_count, cfg.sample_seed)
        .into_iter()
        .map(|i| video.frame_indices[i])
        .collect();
    let target = video
        .track(entry.target_face_id)
        .ok_or(PipelineError::TargetNotFound(entry.target_face_id))?;
    let ranked = rank_track(target, &picks, ctx.catalog, cfg);
    let detail = if cfg.target_detail_only {
        DetailScope::Only(entry.target_face_id)
    } else {
        DetailScope::All
    };
    let frames = picks
        .iter()
        .map(|&i| {
            render_frame(&video, &entry.frames_dir, i, ctx.catalog, cfg, detail)
                .map(|img| encode_for_model(&img, cfg.pixel_budget))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((frames, ranked))
}

/// Runs one entry. Never fails: problems become an Unparseable record with
/// an error note.
pub fn run_entry(entry: &ManifestEntry, ctx: &PipelineContext<'_>) -> EntryOutcome {
    let mut record = EvalRecord {
        video_id: entry.video_id.clone(),
        tier: entry.tier,
        ground_truth: entry.label,
        prediction: Prediction::Unparseable,
        stage_latencies: Vec::new(),
        total_inference_secs: 0.0,
        error: None,
    };
    let fail = |mut record: EvalRecord, transcript, kind, message: String| {
        record.error = Some(message.clone());
        EntryOutcome {
            record,
            transcript,
            failure: Some(EntryFailure {
                video_id: entry.video_id.clone(),
                kind,
                message,
            }),
        }
    };

    let (frames, ranked) = match prepare_inputs(entry, ctx) {
        Ok(v) => v,
        Err(e) => return fail(record, Vec::new(), FailureKind::Data, e.to_string()),
    };
    let inputs = ChainInputs {
        frames: &frames,
        target_face_id: entry.target_face_id,
        ranked: &ranked,
        templates: ctx.templates,
        catalog: ctx.catalog,
        video_id: Some(&entry.video_id),
    };
    match run_voted(&inputs, ctx.backend, &ctx.config.chain) {
        Ok(voted) => {
            let transcript = voted.transcript();
            (record.stage_latencies, record.total_inference_secs) = latencies(&transcript);
            record.prediction = voted.label;
            EntryOutcome {
                record,
                transcript,
                failure: None,
            }
        }
        Err(abort) => {
            (record.stage_latencies, record.total_inference_secs) = latencies(&abort.transcript);
            let msg = abort.to_string();
            fail(record, abort.transcript, FailureKind::Backend, msg)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub records: Vec<EvalRecord>,
    pub transcript: Vec<TranscriptEntry>,
    pub failures: Vec<EntryFailure>,
}

/// Runs every entry on a pool of `config.parallelism` workers. Output order
/// follows the manifest regardless of scheduling.
pub fn run_pipeline(entries: &[ManifestEntry], ctx: &PipelineContext<'_>) -> PipelineOutput {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.config.parallelism.max(1))
        .build()
        .expect("thread pool");
    let outcomes: Vec<EntryOutcome> = pool.install(|| entries.par_iter().map(|e| run_entry(e, ctx)).collect());

    let mut out = PipelineOutput {
        records: Vec::with_capacity(outcomes.len()),
        transcript: Vec::new(),
        failures: Vec::new(),
    };
    for o in outcomes {
        out.records.push(o.record);
        out.transcript.extend(o.transcript);
        out.failures.extend(o.failure);
    }
    out
}

pub fn write_transcript(entries: &[TranscriptEntry]) -> String {
    entries
        .iter()
        .map(|t| serde_json::to_string(t).expect("transcript serializes") + "\n")
        .collect()
}

/// Flattens any serializable settings into sorted `key = value` lines, with
/// nested fields joined by dots.
pub fn header_lines<T: Serialize>(prefix: &str, value: &T) -> Vec<String> {
    fn walk(key: String, v: &serde_json::Value, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, child) in map {
                    let next = if key.is_empty() { k.clone() } else { format!("{key}.{k}") };
                    walk(next, child, out);
                }
            }
            other => out.push(format!("{key} = {other}")),
        }
    }
    let mut out = Vec::new();
    walk(prefix.to_string(), &serde_json::to_value(value).expect("settings serialize"), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_even_and_seeded() {
        let a = sample_frames(100, 8, 7);
        assert_eq!(a, sample_frames(100, 8, 7));
        assert_eq!(a.len(), 8);
        let gaps: Vec<usize> = a.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| *g == 12 || *g == 13), "{gaps:?}");
        assert_eq!(sample_frames(3, 8, 0), vec![0, 1, 2]);
        assert!(sample_frames(0, 8, 0).is_empty());
    }

    #[test]
    fn pixel_budget_fits_patch_grid() {
        let b = PixelBudget::default();
        let (w, h) = b.fit(600, 400);
        assert_eq!((w % 28, h % 28), (0, 0));
        let patches = (w / 28) * (h / 28);
        assert!((180..=210).contains(&patches), "{w}x{h}");
        let (w, h) = b.fit(56, 28);
        assert!((w / 28) * (h / 28) >= 180);
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = PipelineConfig {
            epsilon: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            parallelism: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn header_covers_every_field() {
        let lines = header_lines("pipeline", &PipelineConfig::default());
        assert!(lines.contains(&"pipeline.epsilon = 0.0".to_string()));
        assert!(lines.contains(&"pipeline.layers.masks = false".to_string()));
        assert!(lines.contains(&"pipeline.chain.max_tokens = 1024".to_string()));
        assert!(lines.iter().any(|l| l.starts_with("pipeline.frame_size = [600,400]")));
    }

    #[test]
    fn plain_mode_draws_nothing() {
        let cfg = PipelineConfig {
            mode: PromptMode::Plain,
            ..Default::default()
        };
        assert_eq!(cfg.effective_layers(), LayerToggles::none());
    }
}
