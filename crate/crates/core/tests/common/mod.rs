//! Reference implementations used as test oracles. They are written
//! independently of the library: integer geometry, subset enumeration and
//! direct per-class counting.

#![allow(dead_code)]

use rand::Rng;
use sovtp_core::au::{AuCatalog, EmotionLabel, RankedAu, RankedAus};
use sovtp_core::chain::Prediction;
use sovtp_core::eval::{EvalRecord, Tier};
use sovtp_core::geometry::{BoundingBox, FaceObservation, Point, TrackedFace};
use sovtp_core::render::{
    plan_overlays, DetailScope, LayerToggles, MaskLayer, OverlayOptions, OverlayStyle, RenderPlan,
};
use std::collections::BTreeMap;

/// Integer box: x0, y0, x1, y1 with x0 < x1 and y0 < y1.
pub type IBox = (i64, i64, i64, i64);

pub fn to_box(b: IBox) -> BoundingBox {
    BoundingBox::new(b.0 as f64, b.1 as f64, b.2 as f64, b.3 as f64).unwrap()
}

/// Unit cells covered by both boxes, counted one by one.
pub fn grid_intersection(a: IBox, b: IBox) -> i64 {
    let mut n = 0;
    for x in a.0.max(b.0)..a.2.min(b.2) {
        for _ in a.1.max(b.1)..a.3.min(b.3) {
            let _ = x;
            n += 1;
        }
    }
    n
}

pub fn grid_area(a: IBox) -> i64 {
    grid_intersection(a, a)
}

/// `ratio(a, b) > num/den`, decided in exact integer arithmetic.
pub fn overlaps_beyond(a: IBox, b: IBox, num: i64, den: i64) -> bool {
    let inter = grid_intersection(a, b);
    let min = grid_area(a).min(grid_area(b));
    inter * den > num * min
}

/// Priority order: larger area first, input order among equals.
pub fn priority(boxes: &[IBox]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..boxes.len()).collect();
    // insertion sort keeps equal areas in input order
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && grid_area(boxes[idx[j - 1]]) < grid_area(boxes[idx[j]]) {
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    idx
}

/// Enumerates every subset and returns the one consistent with the rule
/// "a face is kept iff it clears every kept face ahead of it in priority
/// order", listed in priority order.
pub fn subset_oracle(boxes: &[IBox], num: i64, den: i64) -> Vec<usize> {
    let order = priority(boxes);
    let n = boxes.len();
    let mut found: Option<Vec<usize>> = None;
    for mask in 0u32..(1 << n) {
        let member = |i: usize| mask & (1 << i) != 0;
        let consistent = order.iter().enumerate().all(|(pos, &f)| {
            let clears = order[..pos]
                .iter()
                .filter(|&&g| member(g))
                .all(|&g| !overlaps_beyond(boxes[f], boxes[g], num, den));
            member(f) == clears
        });
        if consistent {
            assert!(found.is_none(), "rule must determine a unique subset");
            found = Some(order.iter().copied().filter(|&i| member(i)).collect());
        }
    }
    found.expect("some subset is consistent")
}

pub fn random_ibox(rng: &mut impl Rng, extent: i64) -> IBox {
    let x = rng.gen_range(0..extent - 1);
    let y = rng.gen_range(0..extent - 1);
    let w = rng.gen_range(1..=(extent - x).min(extent / 2));
    let h = rng.gen_range(1..=(extent - y).min(extent / 2));
    (x, y, x + w, y + h)
}

pub fn random_frame(rng: &mut impl Rng, max_boxes: usize, extent: i64) -> Vec<IBox> {
    let n = rng.gen_range(0..=max_boxes);
    (0..n).map(|_| random_ibox(rng, extent)).collect()
}

/// Per-class counts straight from the records.
pub fn oracle_accuracy(records: &[EvalRecord]) -> f64 {
    let hits = records
        .iter()
        .filter(|r| matches!(r.prediction, Prediction::Label(p) if p == r.ground_truth))
        .count();
    100.0 * hits as f64 / records.len() as f64
}

pub fn oracle_macro_f1(records: &[EvalRecord]) -> f64 {
    let mut total = 0.0;
    for c in EmotionLabel::ALL {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for r in records {
            let predicted_c = r.prediction == Prediction::Label(c);
            let actual_c = r.ground_truth == c;
            match (predicted_c, actual_c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    100.0 * total / 7.0
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

pub fn random_records(rng: &mut impl Rng, max: usize) -> Vec<EvalRecord> {
    let n = rng.gen_range(1..=max);
    (0..n)
        .map(|i| {
            let truth = EmotionLabel::ALL[rng.gen_range(0..7)];
            let p = rng.gen_range(0..8);
            EvalRecord {
                video_id: format!("v{i}"),
                tier: Tier::ALL[rng.gen_range(0..3)],
                ground_truth: truth,
                prediction: if p == 7 {
                    Prediction::Unparseable
                } else {
                    Prediction::Label(EmotionLabel::ALL[p])
                },
                stage_latencies: Vec::new(),
                total_inference_secs: rng.gen_range(0.0..10.0),
                error: None,
            }
        })
        .collect()
}

pub fn record(tier: Tier, truth: EmotionLabel, pred: Prediction) -> EvalRecord {
    EvalRecord {
        video_id: String::new(),
        tier,
        ground_truth: truth,
        prediction: pred,
        stage_latencies: Vec::new(),
        total_inference_secs: 0.0,
        error: None,
    }
}

fn random_landmarks(rng: &mut impl Rng, w: u32, h: u32) -> Vec<Point> {
    // deliberately allowed to stray past the frame to exercise clamping
    (0..68)
        .map(|_| Point::new(rng.gen_range(-5.0..w as f64 + 5.0), rng.gen_range(-5.0..h as f64 + 5.0)))
        .collect()
}

/// A random overlay plan over a `w x h` frame, masks included.
pub fn random_plan(rng: &mut impl Rng, w: u32, h: u32) -> RenderPlan {
    let catalog = AuCatalog::default();
    let ids: Vec<u32> = catalog.entries().map(|e| e.au_id).collect();
    let n = rng.gen_range(0..5);
    let tracks: Vec<TrackedFace> = (0..n)
        .map(|i| {
            let x = rng.gen_range(0.0..w as f64 - 4.0);
            let y = rng.gen_range(0.0..h as f64 - 4.0);
            let bw = rng.gen_range(2.0..(w as f64 - x).max(2.1));
            let bh = rng.gen_range(2.0..(h as f64 - y).max(2.1));
            let mut obs = FaceObservation::from_box(0, BoundingBox::new(x, y, (x + bw).min(w as f64), (y + bh).min(h as f64)).unwrap());
            if rng.gen_bool(0.5) {
                obs.landmarks = Some(random_landmarks(rng, w, h));
            }
            TrackedFace {
                face_id: i as u32 + 1 + rng.gen_range(0..20),
                observations: [(0usize, obs)].into(),
            }
        })
        .collect();
    let ranked: BTreeMap<u32, RankedAus> = tracks
        .iter()
        .map(|t| {
            let k = rng.gen_range(0..4);
            let aus = (0..k)
                .map(|_| RankedAu {
                    au_id: ids[rng.gen_range(0..ids.len())],
                    score: rng.gen_range(0.0..1.0),
                })
                .collect();
            (t.face_id, RankedAus(aus))
        })
        .collect();
    let opts = OverlayOptions {
        layers: LayerToggles {
            boxes: rng.gen_bool(0.8),
            numbers: rng.gen_bool(0.8),
            landmarks: rng.gen_bool(0.8),
            au_tags: rng.gen_bool(0.8),
            masks: false,
        },
        style: OverlayStyle {
            box_thickness: rng.gen_range(1..4),
            number_scale: rng.gen_range(1..3),
            tag_scale: rng.gen_range(1..3),
            landmark_radius: rng.gen_range(0..3),
            ..OverlayStyle::default()
        },
        detail: if rng.gen_bool(0.5) { DetailScope::All } else { DetailScope::Only(1) },
    };
    let mut plan = plan_overlays(0, &tracks, &ranked, &catalog, &opts, (w, h));
    for spec in &mut plan.overlays {
        if rng.gen_bool(0.3) {
            let mask = image::GrayImage::from_fn(w, h, |x, y| {
                let inside = spec.bbox.x_min() <= x as f64 && (x as f64) < spec.bbox.x_max()
                    && spec.bbox.y_min() <= y as f64 && (y as f64) < spec.bbox.y_max();
                image::Luma([if inside { 255 } else { 0 }])
            });
            spec.mask = Some(MaskLayer(mask));
        }
    }
    plan
}

pub fn noise_image(rng: &mut impl Rng, w: u32, h: u32) -> image::RgbImage {
    image::RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]))
}
