//! Visual prompt rendering: numbered face boxes, landmark dots, AU tags and
//! optional body masks drawn over the full, uncropped frame.
//!
//! Rendering is split in two. [`plan_overlays`] decides *what* goes on a frame
//! (one [`OverlaySpec`] per visible face, ordered by face ID) and [`rasterize`]
//! turns a plan into pixels. Between the two sits [`layout`], which resolves a
//! plan into concrete primitives with pixel rectangles; both rasterization and
//! [`footprint`] are computed from that layout.

use std::collections::BTreeMap;
use std::path::PathBuf;

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{GrayImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::au::{AuCatalog, RankedAus};
use crate::geometry::{BoundingBox, Point, TrackedFace};

const GLYPH: u32 = 8;

/// Fixed 8-colour cycle, indexed by `(face_id - 1) % 8`.
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("image is {actual:?} but the plan was made for {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("mask {path}: {reason}")]
    Mask { path: PathBuf, reason: String },
    #[error("contact sheet needs at least one frame of uniform size")]
    ContactSheet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerToggles {
    pub boxes: bool,
    pub numbers: bool,
    pub landmarks: bool,
    pub au_tags: bool,
    pub masks: bool,
}

impl Default for LayerToggles {
    fn default() -> Self {
        Self {
            boxes: true,
            numbers: true,
            landmarks: true,
            au_tags: true,
            masks: false,
        }
    }
}

impl LayerToggles {
    pub fn none() -> Self {
        Self {
            boxes: false,
            numbers: false,
            landmarks: false,
            au_tags: false,
            masks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayStyle {
    pub box_thickness: u32,
    /// Integer scale of the 8x8 glyphs used for ID labels.
    pub number_scale: u32,
    /// Integer scale of the 8x8 glyphs used for AU tags.
    pub tag_scale: u32,
    pub landmark_radius: u32,
    pub palette: Vec<[u8; 3]>,
    pub tag_background: [u8; 3],
    /// Mask tint opacity in 1/255 steps.
    pub mask_alpha: u8,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            box_thickness: 2,
            number_scale: 2,
            tag_scale: 1,
            landmark_radius: 1,
            palette: PALETTE.to_vec(),
            tag_background: [0, 0, 0],
            mask_alpha: 96,
        }
    }
}

impl OverlayStyle {
    pub fn color_for(&self, face_id: u32) -> [u8; 3] {
        if self.palette.is_empty() {
            return [255, 0, 0];
        }
        self.palette[(face_id.saturating_sub(1) as usize) % self.palette.len()]
    }
}

/// Which faces receive landmark dots and AU tags. Boxes and numbers are always
/// drawn for every visible face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DetailScope {
    #[default]
    All,
    Only(u32),
}

impl DetailScope {
    fn includes(&self, face_id: u32) -> bool {
        match self {
            DetailScope::All => true,
            DetailScope::Only(id) => *id == face_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OverlayOptions {
    pub layers: LayerToggles,
    pub style: OverlayStyle,
    pub detail: DetailScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuTag {
    pub au_id: u32,
    pub score: f64,
    pub text: String,
    pub anchor: Point,
}

/// Body-mask raster, same size as the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLayer(pub GrayImage);

#[derive(Debug, Clone, PartialEq)]
pub struct OverlaySpec {
    pub face_id: u32,
    pub bbox: BoundingBox,
    pub color: [u8; 3],
    pub draw_box: bool,
    pub draw_number: bool,
    pub landmarks: Option<Vec<Point>>,
    pub au_tags: Vec<AuTag>,
    pub mask_path: Option<PathBuf>,
    pub mask: Option<MaskLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderPlan {
    pub frame_index: usize,
    pub width: u32,
    pub height: u32,
    pub style: OverlayStyle,
    /// Ascending by face ID.
    pub overlays: Vec<OverlaySpec>,
}

impl RenderPlan {
    pub fn empty(frame_index: usize, width: u32, height: u32) -> Self {
        Self {
            frame_index,
            width,
            height,
            style: OverlayStyle::default(),
            overlays: Vec::new(),
        }
    }

    /// Reads every referenced mask PNG. Masks must match the frame size.
    pub fn load_masks(&mut self) -> Result<(), RenderError> {
        for spec in &mut self.overlays {
            let Some(path) = &spec.mask_path else { continue };
            let img = image::open(path)
                .map_err(|e| RenderError::Mask {
                    path: path.clone(),
                    reason: e.to_string(),
                })?
                .into_luma8();
            if img.dimensions() != (self.width, self.height) {
                return Err(RenderError::Mask {
                    path: path.clone(),
                    reason: format!(
                        "size {:?} differs from frame {:?}",
                        img.dimensions(),
                        (self.width, self.height)
                    ),
                });
            }
            spec.mask = Some(MaskLayer(img));
        }
        Ok(())
    }
}

/// Builds the overlay plan for one frame.
///
/// Tracks with no observation at `frame_index` are skipped. AU tags come from
/// `ranked`; with landmarks each tag sits at its AU's landmark centroid,
/// otherwise tags stack downward from the box's top-left corner.
pub fn plan_overlays(
    frame_index: usize,
    tracks: &[TrackedFace],
    ranked: &BTreeMap<u32, RankedAus>,
    catalog: &AuCatalog,
    opts: &OverlayOptions,
    frame_size: (u32, u32),
) -> RenderPlan {
    let layers = &opts.layers;
    let tag_height = (GLYPH * opts.style.tag_scale.max(1) + 2) as f64;
    let mut overlays: Vec<OverlaySpec> = tracks
        .iter()
        .filter_map(|track| {
            let obs = track.at(frame_index)?;
            let detailed = opts.detail.includes(track.face_id);
            let landmarks = obs.landmarks.as_ref().filter(|l| l.len() == crate::geometry::LANDMARK_COUNT);

            let au_tags = match (layers.au_tags && detailed, ranked.get(&track.face_id)) {
                (true, Some(r)) => r
                    .iter()
                    .enumerate()
                    .filter_map(|(i, au)| {
                        let name = catalog.name(au.au_id)?;
                        let anchor = match landmarks {
                            Some(lm) => catalog.au_anchor(au.au_id, lm).ok()?,
                            None => Point::new(
                                obs.bbox.x_min(),
                                obs.bbox.y_min() + i as f64 * tag_height,
                            ),
                        };
                        Some(AuTag {
                            au_id: au.au_id,
                            score: au.score,
                            text: format!("AU{} {}", au.au_id, name),
                            anchor,
                        })
                    })
                    .collect(),
                _ => Vec::new(),
            };

            Some(OverlaySpec {
                face_id: track.face_id,
                bbox: obs.bbox,
                color: opts.style.color_for(track.face_id),
                draw_box: layers.boxes,
                draw_number: layers.numbers,
                landmarks: if layers.landmarks && detailed {
                    landmarks.cloned()
                } else {
                    None
                },
                au_tags,
                mask_path: if layers.masks { obs.mask.clone() } else { None },
                mask: None,
            })
        })
        .collect();
    overlays.sort_by_key(|o| o.face_id);

    RenderPlan {
        frame_index,
        width: frame_size.0,
        height: frame_size.1,
        style: opts.style.clone(),
        overlays,
    }
}

/// Inclusive pixel rectangle, already clipped to the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// Intersects `[x0, x1] x [y0, y1]` (signed) with the frame.
    fn clipped(x0: i64, y0: i64, x1: i64, y1: i64, w: u32, h: u32) -> Option<Self> {
        let (x0, y0) = (x0.max(0), y0.max(0));
        let (x1, y1) = (x1.min(w as i64 - 1), y1.min(h as i64 - 1));
        if w == 0 || h == 0 || x0 > x1 || y0 > y1 {
            return None;
        }
        Some(Self {
            x0: x0 as u32,
            y0: y0 as u32,
            x1: x1 as u32,
            y1: y1 as u32,
        })
    }
}

/// A resolved drawing operation.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Mask {
        rect: PixelRect,
        face: usize,
        color: [u8; 3],
    },
    Outline {
        rect: PixelRect,
        thickness: u32,
        color: [u8; 3],
    },
    Fill {
        rect: PixelRect,
        color: [u8; 3],
    },
    Text {
        origin: (i64, i64),
        rect: PixelRect,
        scale: u32,
        text: String,
        color: [u8; 3],
    },
}

impl Primitive {
    pub fn rect(&self) -> PixelRect {
        match self {
            Primitive::Mask { rect, .. }
            | Primitive::Outline { rect, .. }
            | Primitive::Fill { rect, .. }
            | Primitive::Text { rect, .. } => *rect,
        }
    }
}

fn text_size(text: &str, scale: u32) -> (u32, u32) {
    (text.chars().count() as u32 * GLYPH * scale, GLYPH * scale)
}

/// Top-left position that keeps a `w x h` block inside the frame when it fits.
fn clamp_origin(x: f64, y: f64, w: u32, h: u32, fw: u32, fh: u32) -> (i64, i64) {
    let max_x = (fw as i64 - w as i64).max(0);
    let max_y = (fh as i64 - h as i64).max(0);
    let cx = if x.is_finite() { x.round() as i64 } else { 0 };
    let cy = if y.is_finite() { y.round() as i64 } else { 0 };
    (cx.clamp(0, max_x), cy.clamp(0, max_y))
}

/// Pixel columns/rows covered by a box: every pixel the box touches.
pub fn box_pixels(b: &BoundingBox, w: u32, h: u32) -> Option<PixelRect> {
    PixelRect::clipped(
        b.x_min().floor() as i64,
        b.y_min().floor() as i64,
        b.x_max().ceil() as i64 - 1,
        b.y_max().ceil() as i64 - 1,
        w,
        h,
    )
}

/// Resolves a plan into primitives in paint order: masks, boxes, landmarks,
/// AU tags, then ID labels on top.
pub fn layout(plan: &RenderPlan) -> Vec<Primitive> {
    let (w, h) = (plan.width, plan.height);
    let style = &plan.style;
    let mut masks = Vec::new();
    let mut boxes = Vec::new();
    let mut dots = Vec::new();
    let mut tags = Vec::new();
    let mut labels = Vec::new();

    for (face, spec) in plan.overlays.iter().enumerate() {
        if let Some(MaskLayer(mask)) = &spec.mask {
            if let Some(rect) = mask_bounds(mask) {
                masks.push(Primitive::Mask {
                    rect,
                    face,
                    color: spec.color,
                });
            }
        }

        let bpx = box_pixels(&spec.bbox, w, h);
        if spec.draw_box {
            if let Some(rect) = bpx {
                boxes.push(Primitive::Outline {
                    rect,
                    thickness: style.box_thickness.max(1),
                    color: spec.color,
                });
            }
        }

        if let Some(landmarks) = &spec.landmarks {
            let r = style.landmark_radius as i64;
            for p in landmarks {
                let (cx, cy) = clamp_origin(p.x, p.y, 1, 1, w, h);
                if let Some(rect) = PixelRect::clipped(cx - r, cy - r, cx + r, cy + r, w, h) {
                    dots.push(Primitive::Fill {
                        rect,
                        color: spec.color,
                    });
                }
            }
        }

        let scale = style.tag_scale.max(1);
        for tag in &spec.au_tags {
            let (tw, th) = text_size(&tag.text, scale);
            let (bw, bh) = (tw + 2, th + 2);
            let (x, y) = clamp_origin(tag.anchor.x, tag.anchor.y, bw, bh, w, h);
            if let Some(rect) = PixelRect::clipped(x, y, x + bw as i64 - 1, y + bh as i64 - 1, w, h) {
                tags.push(Primitive::Fill {
                    rect,
                    color: style.tag_background,
                });
            }
            if let Some(rect) = PixelRect::clipped(x + 1, y + 1, x + tw as i64, y + th as i64, w, h) {
                tags.push(Primitive::Text {
                    origin: (x + 1, y + 1),
                    rect,
                    scale,
                    text: tag.text.clone(),
                    color: spec.color,
                });
            }
        }

        if spec.draw_number {
            let scale = style.number_scale.max(1);
            let text = spec.face_id.to_string();
            let (tw, th) = text_size(&text, scale);
            let pad = scale as i64;
            let (bw, bh) = (tw + 2 * scale, th + 2 * scale);
            let top = spec.bbox.y_min().floor();
            // above the box when there is room, otherwise just inside it
            let y = if top >= bh as f64 { top - bh as f64 } else { top };
            let (x, y) = clamp_origin(spec.bbox.x_min().floor(), y, bw, bh, w, h);
            if let Some(rect) = PixelRect::clipped(x, y, x + bw as i64 - 1, y + bh as i64 - 1, w, h) {
                labels.push(Primitive::Fill {
                    rect,
                    color: spec.color,
                });
            }
            if let Some(rect) =
                PixelRect::clipped(x + pad, y + pad, x + pad + tw as i64 - 1, y + pad + th as i64 - 1, w, h)
            {
                labels.push(Primitive::Text {
                    origin: (x + pad, y + pad),
                    rect,
                    scale,
                    text,
                    color: contrast_color(spec.color),
                });
            }
        }
    }

    masks
        .into_iter()
        .chain(boxes)
        .chain(dots)
        .chain(tags)
        .chain(labels)
        .collect()
}

/// Rectangles that together cover every pixel the plan may change.
pub fn footprint(plan: &RenderPlan) -> Vec<PixelRect> {
    layout(plan).iter().map(Primitive::rect).collect()
}

fn mask_bounds(mask: &GrayImage) -> Option<PixelRect> {
    let mut rect: Option<PixelRect> = None;
    for (x, y, p) in mask.enumerate_pixels() {
        if p.0[0] == 0 {
            continue;
        }
        rect = Some(match rect {
            None => PixelRect { x0: x, y0: y, x1: x, y1: y },
            Some(r) => PixelRect {
                x0: r.x0.min(x),
                y0: r.y0.min(y),
                x1: r.x1.max(x),
                y1: r.y1.max(y),
            },
        });
    }
    rect
}

fn contrast_color(bg: [u8; 3]) -> [u8; 3] {
    let luma = 299 * bg[0] as u32 + 587 * bg[1] as u32 + 114 * bg[2] as u32;
    if luma > 128_000 {
        [0, 0, 0]
    } else {
        [255, 255, 255]
    }
}

/// Draws the plan onto a copy of `image`. Pixels outside the drawn primitives
/// are left untouched.
pub fn rasterize(plan: &RenderPlan, image: &RgbImage) -> Result<RgbImage, RenderError> {
    if image.dimensions() != (plan.width, plan.height) {
        return Err(RenderError::DimensionMismatch {
            expected: (plan.width, plan.height),
            actual: image.dimensions(),
        });
    }
    let mut out = image.clone();
    for prim in layout(plan) {
        match prim {
            Primitive::Mask { rect, face, color } => {
                let Some(MaskLayer(mask)) = &plan.overlays[face].mask else {
                    continue;
                };
                let a = plan.style.mask_alpha as u32;
                for y in rect.y0..=rect.y1 {
                    for x in rect.x0..=rect.x1 {
                        if mask.get_pixel(x, y).0[0] == 0 {
                            continue;
                        }
                        let px = out.get_pixel_mut(x, y);
                        for (ch, &c) in px.0.iter_mut().zip(&color) {
                            *ch = ((*ch as u32 * (255 - a) + c as u32 * a + 127) / 255) as u8;
                        }
                    }
                }
            }
            Primitive::Outline {
                rect,
                thickness,
                color,
            } => {
                for y in rect.y0..=rect.y1 {
                    for x in rect.x0..=rect.x1 {
                        let edge = x < rect.x0 + thickness
                            || x + thickness > rect.x1
                            || y < rect.y0 + thickness
                            || y + thickness > rect.y1;
                        if edge {
                            out.put_pixel(x, y, Rgb(color));
                        }
                    }
                }
            }
            Primitive::Fill { rect, color } => {
                for y in rect.y0..=rect.y1 {
                    for x in rect.x0..=rect.x1 {
                        out.put_pixel(x, y, Rgb(color));
                    }
                }
            }
            Primitive::Text {
                origin,
                rect,
                scale,
                text,
                color,
            } => draw_text(&mut out, origin, rect, scale, &text, color),
        }
    }
    Ok(out)
}

fn draw_text(out: &mut RgbImage, origin: (i64, i64), clip: PixelRect, scale: u32, text: &str, color: [u8; 3]) {
    let step = (GLYPH * scale) as i64;
    for (i, ch) in text.chars().enumerate() {
        let glyph = BASIC_FONTS
            .get(ch)
            .or_else(|| BASIC_FONTS.get('?'))
            .unwrap_or([0; 8]);
        let gx = origin.0 + i as i64 * step;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..GLYPH {
                if bits & (1 << col) == 0 {
                    continue;
                }
                for dy in 0..scale as i64 {
                    for dx in 0..scale as i64 {
                        let x = gx + col as i64 * scale as i64 + dx;
                        let y = origin.1 + row as i64 * scale as i64 + dy;
                        if x >= 0 && y >= 0 && clip.contains(x as u32, y as u32) {
                            out.put_pixel(x as u32, y as u32, Rgb(color));
                        }
                    }
                }
            }
        }
    }
}

/// Tiles frames of equal size into a grid, row-major, on a black background.
pub fn contact_sheet(frames: &[RgbImage], columns: u32) -> Result<RgbImage, RenderError> {
    let first = frames.first().ok_or(RenderError::ContactSheet)?;
    let (fw, fh) = first.dimensions();
    if frames.iter().any(|f| f.dimensions() != (fw, fh)) {
        return Err(RenderError::ContactSheet);
    }
    let cols = columns.max(1).min(frames.len() as u32);
    let rows = (frames.len() as u32).div_ceil(cols);
    let mut sheet = RgbImage::new(fw * cols, fh * rows);
    for (i, frame) in frames.iter().enumerate() {
        let (c, r) = (i as u32 % cols, i as u32 / cols);
        image::imageops::replace(&mut sheet, frame, (c * fw) as i64, (r * fh) as i64);
    }
    Ok(sheet)
}
