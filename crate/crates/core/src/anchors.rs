//! Static anchor set and decoding of raw head outputs into detections.
//!
//! Anchors sit on cell centers of a 16x16 grid (2 per cell) and an 8x8 grid
//! (6 per cell), all square with unit size. Regression outputs are offsets in
//! input pixels (divided by [`OFFSET_SCALE`]) scaled by the anchor size.

use thiserror::Error;

use crate::detection::{BBox, Detection, NUM_KEYPOINTS};
use crate::net::REGRESSORS_PER_ANCHOR;

/// `(grid size, anchors per cell)` in anchor-row order.
pub const FRONTAL_GRIDS: [(usize, usize); 2] = [(16, 2), (8, 6)];
pub const NUM_ANCHORS: usize = 16 * 16 * 2 + 8 * 8 * 6;
/// Input-pixel units per normalized unit.
pub const OFFSET_SCALE: f32 = 128.0;
pub const LOGIT_CLAMP: f32 = 80.0;
pub const DEFAULT_MIN_SCORE: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

/// Where an anchor row lives on the feature-map lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AnchorSlot {
    pub grid: usize,
    pub row: usize,
    pub col: usize,
    /// Position within the cell.
    pub k: usize,
}

/// Enumerates anchor rows in head-output order.
pub fn anchor_slots() -> Vec<AnchorSlot> {
    let mut slots = Vec::with_capacity(NUM_ANCHORS);
    for (grid, per_cell) in FRONTAL_GRIDS {
        for row in 0..grid {
            for col in 0..grid {
                for k in 0..per_cell {
                    slots.push(AnchorSlot { grid, row, col, k });
                }
            }
        }
    }
    slots
}

/// Row index of `slot`, or `None` if it is not on the frontal lattice.
pub fn slot_index(slot: AnchorSlot) -> Option<usize> {
    let mut offset = 0;
    for (grid, per_cell) in FRONTAL_GRIDS {
        if grid == slot.grid {
            if slot.row >= grid || slot.col >= grid || slot.k >= per_cell {
                return None;
            }
            return Some(offset + (slot.row * grid + slot.col) * per_cell + slot.k);
        }
        offset += grid * grid * per_cell;
    }
    None
}

pub fn generate_anchors() -> Vec<Anchor> {
    anchor_slots()
        .into_iter()
        .map(|s| Anchor {
            cx: (s.col as f32 + 0.5) / s.grid as f32,
            cy: (s.row as f32 + 0.5) / s.grid as f32,
            w: 1.0,
            h: 1.0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("length mismatch: {scores} scores, {regressors} regressor rows, {anchors} anchors")]
    LengthMismatch {
        scores: usize,
        regressors: usize,
        anchors: usize,
    },
}

pub fn sigmoid(logit: f32) -> f32 {
    let z = logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    1.0 / (1.0 + (-z).exp())
}

/// Decodes one anchor row without thresholding or clamping.
pub fn decode_row(logit: f32, reg: &[f32; REGRESSORS_PER_ANCHOR], anchor: &Anchor, index: usize) -> Detection {
    let cx = anchor.cx + reg[0] / OFFSET_SCALE * anchor.w;
    let cy = anchor.cy + reg[1] / OFFSET_SCALE * anchor.h;
    let w = (reg[2] / OFFSET_SCALE * anchor.w).abs();
    let h = (reg[3] / OFFSET_SCALE * anchor.h).abs();
    let mut keypoints = [[0.0f32; 2]; NUM_KEYPOINTS];
    for (i, kp) in keypoints.iter_mut().enumerate() {
        *kp = [
            anchor.cx + reg[4 + 2 * i] / OFFSET_SCALE * anchor.w,
            anchor.cy + reg[5 + 2 * i] / OFFSET_SCALE * anchor.h,
        ];
    }
    Detection {
        bbox: BBox::from_center(cx, cy, w, h),
        keypoints,
        score: sigmoid(logit),
        anchor: index,
    }
}

fn clamp_unit(d: Detection) -> Detection {
    let c = d.coords().map(|v| v.clamp(0.0, 1.0));
    d.with_coords(&c)
}

/// Decodes every row, drops scores below `min_score`, clamps to `[0, 1]`.
pub fn decode(
    scores: &[f32],
    regressors: &[[f32; REGRESSORS_PER_ANCHOR]],
    anchors: &[Anchor],
    min_score: f32,
) -> Result<Vec<Detection>, DecodeError> {
    if scores.len() != regressors.len() || scores.len() != anchors.len() {
        return Err(DecodeError::LengthMismatch {
            scores: scores.len(),
            regressors: regressors.len(),
            anchors: anchors.len(),
        });
    }
    Ok(scores
        .iter()
        .zip(regressors)
        .zip(anchors)
        .enumerate()
        .filter(|(_, ((&logit, _), _))| sigmoid(logit) >= min_score)
        .map(|(i, ((&logit, reg), anchor))| clamp_unit(decode_row(logit, reg, anchor, i)))
        .collect())
}

/// CSV dump: `index,grid,row,col,cx,cy,w,h`.
pub fn anchors_csv() -> String {
    let mut out = String::from("index,grid,row,col,cx,cy,w,h\n");
    for (i, (slot, a)) in anchor_slots().iter().zip(generate_anchors()).enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{},{},{}\n",
            slot.grid, slot.row, slot.col, a.cx, a.cy, a.w, a.h
        ));
    }
    out
}
