//! Regions of interest: detector abstraction, guided-category filtering,
//! IoU and detection mAP.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned pixel rectangle, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BBox { x, y, w, h }
    }

    /// Like [`BBox::new`] but rejects zero extents.
    pub fn checked(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidInput(format!("box {w}x{h} has zero area")));
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn full(image: &RgbImage) -> Self {
        BBox::new(0, 0, image.width(), image.height())
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width as u64 && self.bottom() <= height as u64
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let w = self.right().min(other.right()).saturating_sub(self.x.max(other.x) as u64);
        let h = self.bottom().min(other.bottom()).saturating_sub(self.y.max(other.y) as u64);
        w * h
    }

    /// The part of this box inside a `width × height` image, if any.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<BBox> {
        let x1 = self.right().min(width as u64);
        let y1 = self.bottom().min(height as u64);
        if (self.x as u64) >= x1 || (self.y as u64) >= y1 {
            return None;
        }
        Some(BBox::new(self.x, self.y, (x1 - self.x as u64) as u32, (y1 - self.y as u64) as u32))
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// One detector output: where, what, how confident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub category: String,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, category: impl Into<String>, score: f64) -> Self {
        Detection {
            bbox,
            category: category.into(),
            score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub bbox: BBox,
    pub category: String,
}

/// A detector that reports boxes for every category at once.
/// Implementations must be deterministic for a given input.
pub trait Detector: Send + Sync {
    /// `image_id` is known for catalog images and absent for ad-hoc
    /// query images.
    fn detect(&self, image_id: Option<&str>, image: &RgbImage) -> Vec<Detection>;
}

/// Never detects anything; every image falls back to its full frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullDetector;

impl Detector for NullDetector {
    fn detect(&self, _: Option<&str>, _: &RgbImage) -> Vec<Detection> {
        Vec::new()
    }
}

/// Replays detections from a fixture file. Records with `image_id` `"*"`
/// are returned for every image, after the image's own records.
#[derive(Debug, Clone, Default)]
pub struct StubDetector {
    by_image: BTreeMap<String, Vec<Detection>>,
    wildcard: Vec<Detection>,
}

impl StubDetector {
    pub fn new(by_image: BTreeMap<String, Vec<Detection>>) -> Self {
        let mut by_image = by_image;
        let wildcard = by_image.remove("*").unwrap_or_default();
        StubDetector { by_image, wildcard }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(read_detections(path)?))
    }
}

impl Detector for StubDetector {
    fn detect(&self, image_id: Option<&str>, _: &RgbImage) -> Vec<Detection> {
        let mut out = image_id
            .and_then(|id| self.by_image.get(id))
            .cloned()
            .unwrap_or_default();
        out.extend(self.wildcard.iter().cloned());
        out
    }
}

/// Keeps only detections of the guided category, in order. Without a
/// guide the input is returned as is.
pub fn guided_filter(detections: Vec<Detection>, guided: Option<&str>) -> Vec<Detection> {
    match guided {
        None => detections,
        Some(g) => detections.into_iter().filter(|d| d.category == g).collect(),
    }
}

/// Box of the highest-scoring detection (earliest wins ties), or
/// `fallback` when there is none.
pub fn select_roi(detections: &[Detection], fallback: BBox) -> BBox {
    let mut best: Option<&Detection> = None;
    for d in detections {
        if best.is_none_or(|b| d.score > b.score) {
            best = Some(d);
        }
    }
    best.map_or(fallback, |d| d.bbox)
}

/// mAP at one IoU threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapRow {
    pub iou_threshold: f64,
    pub map: f64,
    pub per_category: BTreeMap<String, f64>,
}

/// Detection mAP for each IoU threshold.
///
/// Per category, detections from all images are ranked by descending score
/// (ties keep image-id then input order). Each is matched to the
/// highest-IoU ground truth of the same category and image not yet
/// matched; it is a true positive iff that IoU reaches the threshold. AP is
/// the all-point interpolated area under the precision/recall curve, and
/// mAP averages AP over categories present in the ground truth.
pub fn evaluate_map(
    predictions: &BTreeMap<String, Vec<Detection>>,
    ground_truth: &[GroundTruthBox],
    iou_thresholds: &[f64],
) -> Result<Vec<MapRow>> {
    if ground_truth.is_empty() {
        return Err(Error::InvalidInput("empty ground truth".into()));
    }
    if let Some(t) = iou_thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidInput(format!("IoU threshold {t} outside [0, 1]")));
    }
    let categories: BTreeSet<&str> = ground_truth.iter().map(|g| g.category.as_str()).collect();
    let mut rows = Vec::with_capacity(iou_thresholds.len());
    for &threshold in iou_thresholds {
        let mut per_category = BTreeMap::new();
        for &cat in &categories {
            let gts: Vec<&GroundTruthBox> =
                ground_truth.iter().filter(|g| g.category == cat).collect();
            let mut ranked: Vec<(&str, &Detection)> = predictions
                .iter()
                .flat_map(|(img, dets)| dets.iter().map(move |d| (img.as_str(), d)))
                .filter(|(_, d)| d.category == cat)
                .collect();
            ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

            let mut matched = vec![false; gts.len()];
            let mut hits = Vec::with_capacity(ranked.len());
            for (img, det) in ranked {
                let best = gts
                    .iter()
                    .enumerate()
                    .filter(|(i, g)| !matched[*i] && g.image_id == img)
                    .map(|(i, g)| (i, iou(&det.bbox, &g.bbox)))
                    .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
                        Some((_, bv)) if bv >= v => acc,
                        _ => Some((i, v)),
                    });
                let tp = match best {
                    Some((i, v)) if v >= threshold => {
                        matched[i] = true;
                        true
                    }
                    _ => false,
                };
                hits.push(tp);
            }
            per_category.insert(cat.to_string(), average_precision(&hits, gts.len()));
        }
        let map = per_category.values().sum::<f64>() / per_category.len() as f64;
        rows.push(MapRow {
            iou_threshold: threshold,
            map,
            per_category,
        });
    }
    Ok(rows)
}

/// All-point interpolated AP from ranked true/false-positive flags.
pub fn average_precision(hits: &[bool], num_ground_truth: usize) -> f64 {
    if num_ground_truth == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let step = 1.0 / num_ground_truth as f64;
    hits.iter()
        .zip(&precision)
        .filter(|(&hit, _)| hit)
        .map(|(_, &p)| p * step)
        .sum()
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    image_id: String,
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    category: String,
    #[serde(default)]
    score: Option<f64>,
}

fn read_records(path: &Path) -> Result<Vec<DetectionRecord>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidInput(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        BBox::checked(rec.x, rec.y, rec.w, rec.h)?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads a detection JSON Lines file, grouped by image id.
pub fn read_detections(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for rec in read_records(path.as_ref())? {
        let score = rec
            .score
            .ok_or_else(|| Error::InvalidInput(format!("detection for {} lacks a score", rec.image_id)))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidInput(format!("score {score} outside [0, 1]")));
        }
        out.entry(rec.image_id).or_default().push(Detection::new(
            BBox::new(rec.x, rec.y, rec.w, rec.h),
            rec.category,
            score,
        ));
    }
    Ok(out)
}

/// Reads a ground-truth JSON Lines file (same shape, no score).
pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthBox>> {
    Ok(read_records(path.as_ref())?
        .into_iter()
        .map(|r| GroundTruthBox {
            image_id: r.image_id,
            bbox: BBox::new(r.x, r.y, r.w, r.h),
            category: r.category,
        })
        .collect())
}

/// Serializes detections back into the fixture format.
pub fn detections_to_jsonl(detections: &BTreeMap<String, Vec<Detection>>) -> String {
    let mut out = String::new();
    for (img, dets) in detections {
        for d in dets {
            let rec = DetectionRecord {
                image_id: img.clone(),
                x: d.bbox.x,
                y: d.bbox.y,
                w: d.bbox.w,
                h: d.bbox.h,
                category: d.category.clone(),
                score: Some(d.score),
            };
            out.push_str(&serde_json::to_string(&rec).expect("serializable"));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_basics() {
        let a = BBox::new(0, 0, 10, 10);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20, 20, 5, 5)), 0.0);
        assert_eq!(iou(&a, &BBox::new(10, 0, 5, 5)), 0.0);
        let b = BBox::new(5, 0, 10, 10);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn guided_filter_keeps_matching_category() {
        let dets = vec![
            Detection::new(BBox::new(0, 0, 5, 5), "skirt", 0.9),
            Detection::new(BBox::new(1, 1, 5, 5), "blouse", 0.8),
        ];
        let out = guided_filter(dets.clone(), Some("blouse"));
        assert_eq!(out, vec![dets[1].clone()]);
        assert_eq!(guided_filter(dets.clone(), None), dets);
        assert!(guided_filter(dets, Some("bag")).is_empty());
    }

    #[test]
    fn select_roi_prefers_score_then_order() {
        let full = BBox::new(0, 0, 100, 100);
        let a = Detection::new(BBox::new(1, 1, 5, 5), "bag", 0.8);
        let b = Detection::new(BBox::new(2, 2, 5, 5), "bag", 0.9);
        assert_eq!(select_roi(&[a.clone(), b.clone()], full), b.bbox);
        assert_eq!(select_roi(&[], full), full);
        let c = Detection::new(BBox::new(3, 3, 5, 5), "bag", 0.8);
        assert_eq!(select_roi(&[a.clone(), c], full), a.bbox);
    }

    #[test]
    fn clamping() {
        let b = BBox::new(8, 8, 10, 10);
        assert_eq!(b.clamp_to(12, 20), Some(BBox::new(8, 8, 4, 10)));
        assert_eq!(b.clamp_to(8, 20), None);
        assert!(BBox::new(0, 0, 4, 4).fits_within(4, 4));
        assert!(!BBox::new(1, 0, 4, 4).fits_within(4, 4));
    }

    fn gt(img: &str, b: BBox, cat: &str) -> GroundTruthBox {
        GroundTruthBox {
            image_id: img.into(),
            bbox: b,
            category: cat.into(),
        }
    }

    #[test]
    fn single_detection_thresholding() {
        let g = vec![gt("a", BBox::new(0, 0, 10, 10), "bag")];
        // IoU 0.6: intersection 60, union 100.
        let mut preds = BTreeMap::new();
        preds.insert(
            "a".to_string(),
            vec![Detection::new(BBox::new(0, 0, 10, 6), "bag", 0.5)],
        );
        let rows = evaluate_map(&preds, &g, &[0.5]).unwrap();
        assert_eq!(rows[0].map, 1.0);

        // IoU 0.3.
        preds.insert(
            "a".to_string(),
            vec![Detection::new(BBox::new(0, 0, 10, 3), "bag", 0.5)],
        );
        let rows = evaluate_map(&preds, &g, &[0.5]).unwrap();
        assert_eq!(rows[0].map, 0.0);
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        assert!(evaluate_map(&BTreeMap::new(), &[], &[0.5]).is_err());
    }

    #[test]
    fn average_precision_by_hand() {
        // TP, FP, TP with 2 GT: precisions 1, 1/2, 2/3 -> envelope 1, 2/3, 2/3.
        let ap = average_precision(&[true, false, true], 2);
        assert!((ap - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(average_precision(&[false, false], 1), 0.0);
        // One GT never found.
        assert_eq!(average_precision(&[true], 2), 0.5);
    }
}
