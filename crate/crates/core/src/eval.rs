//! Dataset index parsing and the evaluation harness behind `eval`.
//!
//! Index format, one image per line:
//!
//! ```text
//! # comment
//! path/to/image.ppm xmin ymin xmax ymax kx1 ky1 ... kx6 ky6 ; <next face> ...
//! ```
//!
//! Coordinates are normalized; relative paths resolve against the index
//! file's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::detection::{BBox, Detection, NUM_KEYPOINTS};
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::image::load_image;
use crate::metrics::{
    average_precision, jitter_metric, match_image, regression_errors, median, AveragePrecision, Face, GroundTruth,
    ImageMatches, ImagePredictions, JitterReport, MetricsError, AP_MATCH_IOU,
};

const VALUES_PER_FACE: usize = 4 + 2 * NUM_KEYPOINTS;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset index line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub image_path: PathBuf,
    pub truth: GroundTruth,
}

fn parse_face(text: &str, line: usize) -> std::result::Result<Face, DatasetError> {
    let err = |reason: String| DatasetError::Parse { line, reason };
    let values = text
        .split_whitespace()
        .map(|t| t.parse::<f32>().map_err(|_| err(format!("not a number: {t:?}"))))
        .collect::<std::result::Result<Vec<f32>, _>>()?;
    if values.len() != VALUES_PER_FACE {
        return Err(err(format!(
            "face needs {VALUES_PER_FACE} values (box + 6 keypoints), got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(err("non-finite coordinate".into()));
    }
    let bbox = BBox::new(values[0], values[1], values[2], values[3]);
    if !bbox.is_valid() {
        return Err(err("box has min > max".into()));
    }
    let mut keypoints = [[0.0f32; 2]; NUM_KEYPOINTS];
    for (i, kp) in keypoints.iter_mut().enumerate() {
        *kp = [values[4 + 2 * i], values[5 + 2 * i]];
    }
    Ok(Face { bbox, keypoints })
}

pub fn parse_dataset_index(text: &str, base_dir: &Path) -> std::result::Result<Vec<DatasetRecord>, DatasetError> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (path, rest) = content
            .split_once(char::is_whitespace)
            .map_or((content, ""), |(p, r)| (p, r.trim()));
        let faces = rest
            .split(';')
            .map(str::trim)
            .filter(|f| !f.is_empty())
            .map(|f| parse_face(f, line))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let image_path = base_dir.join(path);
        records.push(DatasetRecord {
            truth: GroundTruth {
                image_id: path.to_owned(),
                faces,
            },
            image_path,
        });
    }
    Ok(records)
}

pub fn load_dataset_index(path: impl AsRef<Path>) -> std::result::Result<Vec<DatasetRecord>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset_index(&text, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub average_precision: AveragePrecision,
    /// `None` when no prediction matched a face.
    pub median_abs_regression_error_iod: Option<f64>,
    pub jitter: JitterReport,
    /// Images where jitter could not be measured (no detections or pairs).
    pub jitter_skipped: usize,
    pub images: Vec<ImageMatches>,
}

impl EvalReport {
    pub fn jitter_iod(&self) -> f64 {
        self.jitter.jitter_iod()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let faces: usize = self.images.iter().map(|m| m.matches.len() + m.missed.len()).sum();
        let fps: usize = self.images.iter().map(|m| m.false_positives.len()).sum();
        let tps: usize = self.images.iter().map(|m| m.matches.len()).sum();
        let _ = writeln!(s, "images evaluated      {}", self.images.len());
        let _ = writeln!(s, "faces                 {faces}");
        let _ = writeln!(s, "true positives        {tps}");
        let _ = writeln!(s, "false positives       {fps}");
        let _ = write!(s, "average precision     {:.4}", self.average_precision.value);
        if let Some(c) = self.average_precision.convention {
            let _ = write!(s, "  (by convention: {c:?})");
        }
        s.push('\n');
        match self.median_abs_regression_error_iod {
            Some(e) => {
                let _ = writeln!(s, "regression error      {:.2}% of IOD", e * 100.0);
            }
            None => s.push_str("regression error      n/a (no matches)\n"),
        }
        if self.jitter.samples > 0 {
            let _ = writeln!(s, "jitter                {:.2}% of IOD", self.jitter_iod() * 100.0);
        } else {
            s.push_str("jitter                n/a\n");
        }
        let _ = writeln!(
            s,
            "jitter pairs          {} matched, {} unmatched, {} images skipped",
            self.jitter.matched, self.jitter.unmatched, self.jitter_skipped
        );
        s
    }

    pub fn to_key_values(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_owned(), |v| format!("{v:.6}"));
        let jitter = (self.jitter.samples > 0).then(|| self.jitter_iod());
        let convention = self
            .average_precision
            .convention
            .map_or_else(|| "none".to_owned(), |c| format!("{c:?}"));
        format!(
            "images={}\naverage_precision={:.6}\nap_convention={}\nmedian_abs_regression_error_iod={}\njitter_iod={}\njitter_matched={}\njitter_unmatched={}\njitter_skipped={}\n",
            self.images.len(),
            self.average_precision.value,
            convention,
            opt(self.median_abs_regression_error_iod),
            opt(jitter),
            self.jitter.matched,
            self.jitter.unmatched,
            self.jitter_skipped,
        )
    }
}

struct ImageOutcome {
    predictions: ImagePredictions,
    truth: GroundTruth,
    jitter: Option<JitterReport>,
}

fn keep_large(faces: &[Face], min_area: f32) -> Vec<Face> {
    faces.iter().copied().filter(|f| f.bbox.area() >= min_area).collect()
}

fn evaluate_one(detector: &Detector, record: &DatasetRecord) -> Result<ImageOutcome> {
    let min_area = detector.config().min_face_area;
    let image = load_image(&record.image_path)?;
    let detections: Vec<Detection> = detector
        .detect(&image)?
        .into_iter()
        .filter(|d| d.bbox.area() >= min_area)
        .collect();
    let jitter = match jitter_metric(|img| detector.detect(img), &image, &detector.config().jitter_offsets) {
        Ok(r) => Some(r),
        Err(MetricsError::NoDetections | MetricsError::NoJitterPairs) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(ImageOutcome {
        predictions: ImagePredictions {
            image_id: record.truth.image_id.clone(),
            detections,
        },
        truth: GroundTruth {
            image_id: record.truth.image_id.clone(),
            faces: keep_large(&record.truth.faces, min_area),
        },
        jitter,
    })
}

/// Runs the detector over every record (in parallel) and aggregates AP,
/// regression error and jitter. Aggregation is independent of completion
/// order.
pub fn evaluate(detector: &Detector, records: &[DatasetRecord]) -> Result<EvalReport> {
    let outcomes = records
        .par_iter()
        .map(|r| evaluate_one(detector, r))
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<ImagePredictions> = outcomes.iter().map(|o| o.predictions.clone()).collect();
    let truth: Vec<GroundTruth> = outcomes.iter().map(|o| o.truth.clone()).collect();

    let images = predictions
        .iter()
        .zip(&truth)
        .map(|(p, t)| match_image(&p.image_id, &p.detections, &t.faces, AP_MATCH_IOU))
        .collect();
    let mut jitter = JitterReport::default();
    let mut jitter_skipped = 0;
    for o in &outcomes {
        match &o.jitter {
            Some(j) => jitter.merge(j),
            None => jitter_skipped += 1,
        }
    }
    let regression = median(&mut regression_errors(&predictions, &truth).map_err(Error::from)?);
    Ok(EvalReport {
        average_precision: average_precision(&predictions, &truth, AP_MATCH_IOU),
        median_abs_regression_error_iod: regression,
        jitter,
        jitter_skipped,
        images,
    })
}
