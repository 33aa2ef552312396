//! Boxes, keypoints and decoded detections in normalized image coordinates.

pub const NUM_KEYPOINTS: usize = 6;
/// Box (4) plus keypoint (12) coordinates.
pub const NUM_COORDS: usize = 4 + 2 * NUM_KEYPOINTS;

/// Keypoint slot order. The two eye centers come first; metrics rely on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum KeypointSlot {
    RightEye = 0,
    LeftEye = 1,
    NoseTip = 2,
    MouthCenter = 3,
    RightEarTragion = 4,
    LeftEarTragion = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub xmin: f32,
    pub ymin: f32,
    pub xmax: f32,
    pub ymax: f32,
}

impl BBox {
    pub const fn new(xmin: f32, ymin: f32, xmax: f32, ymax: f32) -> Self {
        Self { xmin, ymin, xmax, ymax }
    }

    pub fn from_center(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f32 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f32 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.xmin <= self.xmax && self.ymin <= self.ymax
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f32 {
        let iw = (self.xmax.min(other.xmax) - self.xmin.max(other.xmin)).max(0.0);
        let ih = (self.ymax.min(other.ymax) - self.ymin.max(other.ymin)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    pub fn to_array(self) -> [f32; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f32 {
    a.iou(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    /// `(x, y)` per [`KeypointSlot`].
    pub keypoints: [[f32; 2]; NUM_KEYPOINTS],
    pub score: f32,
    /// Anchor row the detection was decoded from; used as a sort tie-break.
    pub anchor: usize,
}

impl Detection {
    pub fn keypoint(&self, slot: KeypointSlot) -> [f32; 2] {
        self.keypoints[slot as usize]
    }

    /// Box then keypoints, flattened.
    pub fn coords(&self) -> [f32; NUM_COORDS] {
        let mut out = [0.0; NUM_COORDS];
        out[..4].copy_from_slice(&self.bbox.to_array());
        for (i, kp) in self.keypoints.iter().enumerate() {
            out[4 + 2 * i] = kp[0];
            out[5 + 2 * i] = kp[1];
        }
        out
    }

    pub fn with_coords(mut self, c: &[f32; NUM_COORDS]) -> Self {
        self.bbox = BBox::new(c[0], c[1], c[2], c[3]);
        for (i, kp) in self.keypoints.iter_mut().enumerate() {
            *kp = [c[4 + 2 * i], c[5 + 2 * i]];
        }
        self
    }

    /// Shifts every coordinate by `(dx, dy)` in normalized units.
    pub fn translated(&self, dx: f32, dy: f32) -> Self {
        let mut c = self.coords();
        for (i, v) in c.iter_mut().enumerate() {
            *v += if i % 2 == 0 { dx } else { dy };
        }
        self.with_coords(&c)
    }

    /// Multiplies every coordinate by `s`.
    pub fn scaled(&self, s: f32) -> Self {
        let c = self.coords().map(|v| v * s);
        self.with_coords(&c)
    }
}
