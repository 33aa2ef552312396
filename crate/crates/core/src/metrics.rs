//! Evaluation quantities: average precision at an IoU match threshold,
//! IOD-normalized keypoint regression error, and the translation jitter
//! metric.

use std::collections::HashMap;

use thiserror::Error;

use crate::detection::{BBox, Detection, KeypointSlot, NUM_COORDS, NUM_KEYPOINTS};
use crate::postprocess::rank_order;
use crate::tensor::{Shape, Tensor};

pub const AP_MATCH_IOU: f32 = 0.5;
pub const JITTER_MATCH_IOU: f32 = 0.3;

/// The eight unit shifts around the origin plus two-pixel shifts along each
/// axis.
pub const DEFAULT_JITTER_OFFSETS: [(i32, i32); 12] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (-2, 0),
    (2, 0),
    (0, -2),
    (0, 2),
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("degenerate face: inter-ocular distance is {0}")]
    DegenerateFace(f64),
    #[error("no predictions matched any ground-truth face")]
    NoMatches,
    #[error("detector found nothing on the original image")]
    NoDetections,
    #[error("no displaced detection matched an original detection")]
    NoJitterPairs,
    #[error("detector failed: {0}")]
    Detector(#[source] Box<dyn std::error::Error + Send + Sync>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub bbox: BBox,
    pub keypoints: [[f32; 2]; NUM_KEYPOINTS],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub image_id: String,
    pub faces: Vec<Face>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImagePredictions {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    /// Index into the image's detection list.
    pub prediction: usize,
    /// Index into the image's face list.
    pub truth: usize,
    pub iou: f32,
}

/// Greedy per-image assignment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageMatches {
    pub image_id: String,
    pub matches: Vec<Match>,
    /// Detection indices that matched nothing.
    pub false_positives: Vec<usize>,
    /// Face indices left unmatched.
    pub missed: Vec<usize>,
}

/// Visits detections by descending score; each takes the unmatched face with
/// the highest IoU, provided it reaches `match_iou`.
pub fn match_image(image_id: &str, detections: &[Detection], faces: &[Face], match_iou: f32) -> ImageMatches {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| rank_order(&detections[a], &detections[b]).then(a.cmp(&b)));
    let mut taken = vec![false; faces.len()];
    let mut out = ImageMatches {
        image_id: image_id.to_owned(),
        ..Default::default()
    };
    for p in order {
        let best = faces
            .iter()
            .enumerate()
            .filter(|(t, _)| !taken[*t])
            .map(|(t, f)| (t, detections[p].bbox.iou(&f.bbox)))
            .filter(|&(_, iou)| iou >= match_iou)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((t, iou)) => {
                taken[t] = true;
                out.matches.push(Match {
                    prediction: p,
                    truth: t,
                    iou,
                });
            }
            None => out.false_positives.push(p),
        }
    }
    out.missed = (0..faces.len()).filter(|&t| !taken[t]).collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApInterpolation {
    /// Precision at each true positive, averaged over all truths.
    Stepwise,
    /// Precision replaced by its running maximum from the right.
    Envelope,
}

/// How an AP value was obtained when the truth set is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApConvention {
    /// No faces and no predictions: AP reported as 1.
    NothingToFind,
    /// No faces but some predictions: AP reported as 0.
    OnlyFalsePositives,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragePrecision {
    pub value: f64,
    pub convention: Option<ApConvention>,
}

pub fn average_precision(
    predictions: &[ImagePredictions],
    truth: &[GroundTruth],
    match_iou: f32,
) -> AveragePrecision {
    average_precision_with(predictions, truth, match_iou, ApInterpolation::Stepwise)
}

pub fn average_precision_with(
    predictions: &[ImagePredictions],
    truth: &[GroundTruth],
    match_iou: f32,
    interpolation: ApInterpolation,
) -> AveragePrecision {
    let faces: HashMap<&str, &[Face]> = truth
        .iter()
        .map(|g| (g.image_id.as_str(), g.faces.as_slice()))
        .collect();
    let total_truth: usize = truth.iter().map(|g| g.faces.len()).sum();
    let total_preds: usize = predictions.iter().map(|p| p.detections.len()).sum();

    if total_truth == 0 {
        return if total_preds == 0 {
            AveragePrecision {
                value: 1.0,
                convention: Some(ApConvention::NothingToFind),
            }
        } else {
            AveragePrecision {
                value: 0.0,
                convention: Some(ApConvention::OnlyFalsePositives),
            }
        };
    }

    // (detection, image id, is true positive)
    let mut ranked: Vec<(&Detection, &str, bool)> = Vec::with_capacity(total_preds);
    for img in predictions {
        let img_faces = faces.get(img.image_id.as_str()).copied().unwrap_or(&[]);
        let m = match_image(&img.image_id, &img.detections, img_faces, match_iou);
        let mut tp = vec![false; img.detections.len()];
        for hit in &m.matches {
            tp[hit.prediction] = true;
        }
        for (d, is_tp) in img.detections.iter().zip(tp) {
            ranked.push((d, img.image_id.as_str(), is_tp));
        }
    }
    ranked.sort_by(|a, b| rank_order(a.0, b.0).then_with(|| a.1.cmp(b.1)));

    let n = total_truth as f64;
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked.len());
    for (rank, &(_, _, is_tp)) in ranked.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        let precision = tp as f64 / (rank + 1) as f64;
        points.push((tp as f64 / n, precision, is_tp));
    }

    let value = match interpolation {
        ApInterpolation::Stepwise => points.iter().filter(|p| p.2).map(|p| p.1).sum::<f64>() / n,
        ApInterpolation::Envelope => {
            let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
            for i in (0..envelope.len().saturating_sub(1)).rev() {
                envelope[i] = envelope[i].max(envelope[i + 1]);
            }
            let mut prev_recall = 0.0;
            let mut area = 0.0;
            for (p, env) in points.iter().zip(envelope) {
                if p.0 > prev_recall {
                    area += (p.0 - prev_recall) * env;
                    prev_recall = p.0;
                }
            }
            area
        }
    };
    AveragePrecision {
        value,
        convention: None,
    }
}

pub fn inter_ocular_distance(keypoints: &[[f32; 2]; NUM_KEYPOINTS]) -> Result<f64, MetricsError> {
    let a = keypoints[KeypointSlot::RightEye as usize];
    let b = keypoints[KeypointSlot::LeftEye as usize];
    let d = (a[0] as f64 - b[0] as f64).hypot(a[1] as f64 - b[1] as f64);
    if d > 0.0 && d.is_finite() {
        Ok(d)
    } else {
        Err(MetricsError::DegenerateFace(d))
    }
}

/// Median (mean of the two middle values for even counts). `None` if empty.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len().is_multiple_of(2) {
        (values[mid - 1] + values[mid]) / 2.0
    } else {
        values[mid]
    })
}

/// Absolute keypoint coordinate errors of matched faces, each divided by the
/// face's true inter-ocular distance.
pub fn regression_errors(predictions: &[ImagePredictions], truth: &[GroundTruth]) -> Result<Vec<f64>, MetricsError> {
    let faces: HashMap<&str, &[Face]> = truth
        .iter()
        .map(|g| (g.image_id.as_str(), g.faces.as_slice()))
        .collect();
    let mut errors = Vec::new();
    for img in predictions {
        let Some(img_faces) = faces.get(img.image_id.as_str()) else {
            continue;
        };
        let m = match_image(&img.image_id, &img.detections, img_faces, AP_MATCH_IOU);
        for hit in m.matches {
            let face = &img_faces[hit.truth];
            let iod = inter_ocular_distance(&face.keypoints)?;
            let pred = &img.detections[hit.prediction];
            for (p, t) in pred.keypoints.iter().zip(&face.keypoints) {
                errors.push((p[0] as f64 - t[0] as f64).abs() / iod);
                errors.push((p[1] as f64 - t[1] as f64).abs() / iod);
            }
        }
    }
    Ok(errors)
}

pub fn regression_error(predictions: &[ImagePredictions], truth: &[GroundTruth]) -> Result<f64, MetricsError> {
    median(&mut regression_errors(predictions, truth)?).ok_or(MetricsError::NoMatches)
}

/// Shifts image content by `(dx, dy)` pixels, replicating edge pixels into
/// the uncovered border.
pub fn translate_image(image: &Tensor, dx: i32, dy: i32) -> Tensor {
    let s: Shape = image.shape();
    let src = |o: usize, d: i32, extent: usize| (o as i64 - d as i64).clamp(0, extent as i64 - 1) as usize;
    let mut data = Vec::with_capacity(s.numel());
    for n in 0..s.batch {
        for y in 0..s.height {
            let sy = src(y, dy, s.height);
            for x in 0..s.width {
                let sx = src(x, dx, s.width);
                let base = s.offset(n, sy, sx, 0);
                data.extend_from_slice(&image.data()[base..base + s.channels]);
            }
        }
    }
    Tensor::from_parts(s, data)
}

/// RMS of IOD-normalized coordinate differences between original and
/// displaced-input detections. Partial reports merge by summing squares, so
/// aggregation over images is order-independent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JitterReport {
    pub sum_sq: f64,
    pub samples: usize,
    /// Displaced detections paired with an original.
    pub matched: usize,
    /// Displaced detections with no original above the pairing IoU.
    pub unmatched: usize,
    /// Pairs skipped because the original had coincident eye keypoints.
    pub degenerate: usize,
}

impl JitterReport {
    pub fn jitter_iod(&self) -> f64 {
        if self.samples == 0 {
            f64::NAN
        } else {
            (self.sum_sq / self.samples as f64).sqrt()
        }
    }

    pub fn merge(&mut self, other: &JitterReport) {
        self.sum_sq += other.sum_sq;
        self.samples += other.samples;
        self.matched += other.matched;
        self.unmatched += other.unmatched;
        self.degenerate += other.degenerate;
    }
}

/// Runs `detector` on the image and on each translated copy, undoes the
/// translation on the displaced detections, pairs them with the originals by
/// IoU and accumulates squared coordinate differences over the original's
/// inter-ocular distance.
pub fn jitter_metric<F, E>(mut detector: F, image: &Tensor, offsets: &[(i32, i32)]) -> Result<JitterReport, MetricsError>
where
    F: FnMut(&Tensor) -> Result<Vec<Detection>, E>,
    E: std::error::Error + Send + Sync + 'static,
{
    let run = |d: &mut F, img: &Tensor| d(img).map_err(|e| MetricsError::Detector(Box::new(e)));
    let originals = run(&mut detector, image)?;
    if originals.is_empty() {
        return Err(MetricsError::NoDetections);
    }
    let iods: Vec<Option<f64>> = originals
        .iter()
        .map(|d| inter_ocular_distance(&d.keypoints).ok())
        .collect();
    let s = image.shape();
    let mut report = JitterReport::default();
    for &(dx, dy) in offsets {
        let shifted = translate_image(image, dx, dy);
        for det in run(&mut detector, &shifted)? {
            let back = det.translated(-(dx as f32) / s.width as f32, -(dy as f32) / s.height as f32);
            let best = originals
                .iter()
                .enumerate()
                .map(|(i, o)| (i, o.bbox.iou(&back.bbox)))
                .filter(|&(_, iou)| iou >= JITTER_MATCH_IOU)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            let Some((i, _)) = best else {
                report.unmatched += 1;
                continue;
            };
            let Some(iod) = iods[i] else {
                report.degenerate += 1;
                continue;
            };
            report.matched += 1;
            let orig = originals[i].coords();
            for (a, b) in back.coords().iter().zip(orig.iter()) {
                let diff = (*a as f64 - *b as f64) / iod;
                report.sum_sq += diff * diff;
            }
            report.samples += NUM_COORDS;
        }
    }
    if report.samples == 0 {
        return Err(MetricsError::NoJitterPairs);
    }
    Ok(report)
}
