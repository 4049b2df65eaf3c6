//! Box representations, overlap measures, regression losses and coordinate
//! quantization.
//!
//! Boxes live in normalized image coordinates. [`Box`] is center format
//! `(cx, cy, w, h)`, which is what the regression head emits; [`CornerBox`]
//! is `(x1, y1, x2, y2)` and is what the overlap measures work on.

use crate::error::{Error, Result};

/// Center-format box in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Corner-format box, `x1 <= x2` and `y1 <= y2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CornerBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Four bin indices, one per center-format coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuantizedBox {
    pub bx: u32,
    pub by: u32,
    pub bw: u32,
    pub bh: u32,
}

impl Box {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// `0 <= cx, cy <= 1` and `0 < w, h <= 1`, all finite.
    pub fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.cx) && unit(self.cy) && self.w > 0.0 && self.w <= 1.0 && self.h > 0.0 && self.h <= 1.0
    }

    pub fn validate(self) -> Result<Self> {
        if self.is_valid() {
            Ok(self)
        } else {
            Err(Error::InvalidBox(self.to_array()))
        }
    }

    /// Corners clamped to the unit square.
    pub fn to_corners(self) -> CornerBox {
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        let x1 = clamp(self.cx - self.w / 2.0);
        let x2 = clamp(self.cx + self.w / 2.0);
        let y1 = clamp(self.cy - self.h / 2.0);
        let y2 = clamp(self.cy + self.h / 2.0);
        CornerBox {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        }
    }
}

impl CornerBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn to_center(self) -> Box {
        Box::new(
            (self.x1 + self.x2) / 2.0,
            (self.y1 + self.y2) / 2.0,
            self.x2 - self.x1,
            self.y2 - self.y1,
        )
    }

    pub fn intersection(&self, other: &CornerBox) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        iw * ih
    }

    /// Smallest box enclosing both.
    pub fn hull(&self, other: &CornerBox) -> CornerBox {
        CornerBox::new(
            self.x1.min(other.x1),
            self.y1.min(other.y1),
            self.x2.max(other.x2),
            self.y2.max(other.y2),
        )
    }
}

pub fn to_corners(b: Box) -> CornerBox {
    b.to_corners()
}

/// Intersection over union; zero when the union is empty.
pub fn iou(a: &CornerBox, b: &CornerBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `iou - (hull - union) / hull`; zero when the hull is empty.
pub fn giou(a: &CornerBox, b: &CornerBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    let hull = a.hull(b).area();
    if hull <= 0.0 {
        return 0.0;
    }
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    iou - (hull - union) / hull
}

/// Sum of absolute coordinate differences in center format.
pub fn l1_loss(pred: &Box, gold: &Box) -> f64 {
    pred.to_array()
        .iter()
        .zip(gold.to_array().iter())
        .map(|(p, g)| (p - g).abs())
        .sum()
}

pub fn giou_loss(pred: &Box, gold: &Box) -> f64 {
    1.0 - giou(&pred.to_corners(), &gold.to_corners())
}

/// Gradient of `l1_loss` with respect to the predicted center-format box.
pub fn l1_loss_grad(pred: &Box, gold: &Box) -> [f64; 4] {
    let p = pred.to_array();
    let g = gold.to_array();
    core::array::from_fn(|i| sign(p[i] - g[i]))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `giou_loss` and its gradient with respect to the predicted center-format
/// box. Coordinates pinned by corner clamping get zero gradient.
pub fn giou_loss_with_grad(pred: &Box, gold: &Box) -> (f64, [f64; 4]) {
    let a = pred.to_corners();
    let b = gold.to_corners();

    let ix1 = a.x1.max(b.x1);
    let ix2 = a.x2.min(b.x2);
    let iy1 = a.y1.max(b.y1);
    let iy2 = a.y2.min(b.y2);
    let iw = (ix2 - ix1).max(0.0);
    let ih = (iy2 - iy1).max(0.0);
    let inter = iw * ih;
    let area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
    let area_b = b.area();
    let union = area_a + area_b - inter;
    let cx1 = a.x1.min(b.x1);
    let cx2 = a.x2.max(b.x2);
    let cy1 = a.y1.min(b.y1);
    let cy2 = a.y2.max(b.y2);
    let cw = cx2 - cx1;
    let ch = cy2 - cy1;
    let hull = cw * ch;
    if hull <= 0.0 || union <= 0.0 {
        let g = if hull <= 0.0 { 0.0 } else { giou(&a, &b) };
        return (1.0 - g, [0.0; 4]);
    }
    let giou_v = inter / union - (hull - union) / hull;

    // giou = I/U - 1 + U/C
    let d_inter_direct = 1.0 / union;
    let d_union = -inter / (union * union) + 1.0 / hull;
    let d_hull = -union / (hull * hull);
    let d_inter = d_inter_direct - d_union;
    let d_area_a = d_union;

    // partials of giou w.r.t. the predicted corners
    let mut g_x1 = d_area_a * -(a.y2 - a.y1);
    let mut g_x2 = d_area_a * (a.y2 - a.y1);
    let mut g_y1 = d_area_a * -(a.x2 - a.x1);
    let mut g_y2 = d_area_a * (a.x2 - a.x1);
    if iw > 0.0 && ih > 0.0 {
        if a.x1 > b.x1 {
            g_x1 += d_inter * -ih;
        }
        if a.x2 < b.x2 {
            g_x2 += d_inter * ih;
        }
        if a.y1 > b.y1 {
            g_y1 += d_inter * -iw;
        }
        if a.y2 < b.y2 {
            g_y2 += d_inter * iw;
        }
    }
    if a.x1 < b.x1 {
        g_x1 += d_hull * -ch;
    }
    if a.x2 > b.x2 {
        g_x2 += d_hull * ch;
    }
    if a.y1 < b.y1 {
        g_y1 += d_hull * -cw;
    }
    if a.y2 > b.y2 {
        g_y2 += d_hull * cw;
    }

    // chain through the clamped center->corner map
    let free = |v: f64| v > 0.0 && v < 1.0;
    let (rx1, rx2) = (pred.cx - pred.w / 2.0, pred.cx + pred.w / 2.0);
    let (ry1, ry2) = (pred.cy - pred.h / 2.0, pred.cy + pred.h / 2.0);
    let gx1 = if free(rx1) { g_x1 } else { 0.0 };
    let gx2 = if free(rx2) { g_x2 } else { 0.0 };
    let gy1 = if free(ry1) { g_y1 } else { 0.0 };
    let gy2 = if free(ry2) { g_y2 } else { 0.0 };
    let d_giou = [gx1 + gx2, gy1 + gy2, (gx2 - gx1) / 2.0, (gy2 - gy1) / 2.0];
    (1.0 - giou_v, d_giou.map(|v| -v))
}

/// Bin index of a normalized coordinate: `min(floor(v * bins), bins - 1)`.
pub fn quantize_value(v: f64, bins: u32) -> u32 {
    let scaled = libm::floor(v.clamp(0.0, 1.0) * bins as f64);
    (scaled as u32).min(bins - 1)
}

/// Center of bin `i`: `(i + 0.5) / bins`.
pub fn dequantize_value(i: u32, bins: u32) -> f64 {
    (i as f64 + 0.5) / bins as f64
}

pub fn quantize(b: &Box, bins: u32) -> Result<QuantizedBox> {
    check_bins(bins)?;
    Ok(QuantizedBox {
        bx: quantize_value(b.cx, bins),
        by: quantize_value(b.cy, bins),
        bw: quantize_value(b.w, bins),
        bh: quantize_value(b.h, bins),
    })
}

pub fn dequantize(q: &QuantizedBox, bins: u32) -> Result<Box> {
    check_bins(bins)?;
    if q.to_array().iter().any(|&i| i >= bins) {
        return Err(Error::BinOutOfRange { bins, qbox: q.to_array() });
    }
    Ok(Box::new(
        dequantize_value(q.bx, bins),
        dequantize_value(q.by, bins),
        dequantize_value(q.bw, bins),
        dequantize_value(q.bh, bins),
    ))
}

fn check_bins(bins: u32) -> Result<()> {
    if bins < 2 {
        Err(Error::TooFewBins(bins))
    } else {
        Ok(())
    }
}

impl QuantizedBox {
    pub fn to_array(self) -> [u32; 4] {
        [self.bx, self.by, self.bw, self.bh]
    }

    pub fn from_array(v: [u32; 4]) -> Self {
        Self { bx: v[0], by: v[1], bw: v[2], bh: v[3] }
    }
}
