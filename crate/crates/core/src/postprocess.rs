//! Tie resolution between overlapping detections.
//!
//! Both modes walk detections greedily in descending score order and cluster
//! everything overlapping the current top detection. Suppression keeps the
//! top detection; blending replaces its coordinates with the score-weighted
//! mean of the cluster. Cluster membership and emitted scores are identical
//! across modes.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::detection::{Detection, NUM_COORDS};

pub const DEFAULT_CLUSTER_IOU: f32 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieMode {
    Suppression,
    Blending,
}

impl FromStr for TieMode {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nms" | "suppression" => Ok(TieMode::Suppression),
            "blend" | "blending" => Ok(TieMode::Blending),
            other => Err(PolicyError::UnknownMode(other.to_owned())),
        }
    }
}

impl fmt::Display for TieMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TieMode::Suppression => "nms",
            TieMode::Blending => "blend",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("cluster IoU threshold {0} is outside (0, 1]")]
    Threshold(f32),
    #[error("unknown tie-resolution mode {0:?} (expected blend or nms)")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiePolicy {
    mode: TieMode,
    iou_threshold: f32,
}

impl TiePolicy {
    pub fn new(mode: TieMode, iou_threshold: f32) -> Result<Self, PolicyError> {
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
            return Err(PolicyError::Threshold(iou_threshold));
        }
        Ok(Self { mode, iou_threshold })
    }

    pub fn blending() -> Self {
        Self {
            mode: TieMode::Blending,
            iou_threshold: DEFAULT_CLUSTER_IOU,
        }
    }

    pub fn suppression() -> Self {
        Self {
            mode: TieMode::Suppression,
            iou_threshold: DEFAULT_CLUSTER_IOU,
        }
    }

    pub fn mode(&self) -> TieMode {
        self.mode
    }

    pub fn iou_threshold(&self) -> f32 {
        self.iou_threshold
    }
}

impl Default for TiePolicy {
    fn default() -> Self {
        Self::blending()
    }
}

/// Score descending, then anchor ascending, then coordinates; a total order
/// so the result does not depend on input order.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.anchor.cmp(&b.anchor))
        .then_with(|| {
            a.coords()
                .iter()
                .zip(b.coords().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

pub fn resolve(detections: &[Detection], policy: &TiePolicy) -> Vec<Detection> {
    let mut remaining = detections.to_vec();
    // descending rank from the back, so `pop` yields the current top
    remaining.sort_by(|a, b| rank_order(b, a));
    let mut out = Vec::new();
    let mut cluster = Vec::new();
    while let Some(top) = remaining.pop() {
        cluster.clear();
        // the head always joins its own cluster, even when degenerate
        cluster.push(top);
        remaining.retain(|d| {
            if top.bbox.iou(&d.bbox) >= policy.iou_threshold {
                cluster.push(*d);
                false
            } else {
                true
            }
        });
        out.push(match policy.mode {
            TieMode::Suppression => top,
            TieMode::Blending => blend(&cluster),
        });
    }
    out
}

/// Score-weighted mean of all coordinates; score and anchor from the head.
fn blend(cluster: &[Detection]) -> Detection {
    let top = cluster[0];
    let total: f64 = cluster.iter().map(|d| d.score as f64).sum();
    if total.is_nan() || total <= 0.0 {
        return top;
    }
    let mut acc = [0.0f64; NUM_COORDS];
    for d in cluster {
        let w = d.score as f64;
        for (a, v) in acc.iter_mut().zip(d.coords()) {
            *a += w * v as f64;
        }
    }
    let coords = acc.map(|a| (a / total) as f32);
    top.with_coords(&coords)
}
