//! Box representations and overlap measures.
//!
//! Two box forms are used throughout the crate:
//!
//! * [`BoxXYXY`]: pixel corners `(x1, y1, x2, y2)` with half-open area semantics,
//!   `area = (x2 - x1) * (y2 - y1)`. No `+1` pixel convention.
//! * [`BoxRel`]: normalized center form `(cx, cy, h, w)`. The field order puts
//!   **height before width**. Conversion to pixels scales `w` by the image
//!   width and `h` by the image height; never index the fields positionally.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },
    #[error("invalid relative box (cx={cx}, cy={cy}, h={h}, w={w}): {reason}")]
    InvalidRelBox {
        cx: f64,
        cy: f64,
        h: f64,
        w: f64,
        reason: &'static str,
    },
    #[error("degenerate box has zero area")]
    Degenerate,
    #[error("image size must be at least 1x1, got {width}x{height}")]
    ZeroImage { width: u32, height: u32 },
}

/// Axis-aligned box in pixel corner form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxXYXY {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxXYXY {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let b = BoxXYXY { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from top-left corner plus width and height (MOT convention).
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let reason = if ![self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
        {
            Some("non-finite coordinate")
        } else if self.x1 > self.x2 {
            Some("x1 > x2")
        } else if self.y1 > self.y2 {
            Some("y1 > y2")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(GeometryError::InvalidBox {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
                reason,
            }),
            None => Ok(()),
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn is_degenerate(&self) -> bool {
        self.width() <= 0.0 || self.height() <= 0.0
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BoxXYXY {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        BoxXYXY {
            x1: self.x1 * s,
            y1: self.y1 * s,
            x2: self.x2 * s,
            y2: self.y2 * s,
        }
    }

    /// Clips the box to `[0, width] x [0, height]`.
    pub fn clip(&self, size: ImageSize) -> Self {
        let (w, h) = (size.width as f64, size.height as f64);
        BoxXYXY {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        }
    }

    pub fn intersection_area(&self, other: &BoxXYXY) -> f64 {
        let iw = self.x2.min(other.x2) - self.x1.max(other.x1);
        let ih = self.y2.min(other.y2) - self.y1.max(other.y1);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Smallest box containing both inputs.
    pub fn enclosing(&self, other: &BoxXYXY) -> BoxXYXY {
        BoxXYXY {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// Normalizes into center form after clipping to the image.
    pub fn to_rel(&self, size: ImageSize) -> Result<BoxRel, GeometryError> {
        size.validate()?;
        let c = self.clip(size);
        let (w, h) = (size.width as f64, size.height as f64);
        Ok(BoxRel {
            cx: (c.x1 + c.x2) * 0.5 / w,
            cy: (c.y1 + c.y2) * 0.5 / h,
            h: c.height() / h,
            w: c.width() / w,
        })
    }
}

/// Normalized center-form box. Fields are ordered `(cx, cy, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRel {
    pub cx: f64,
    pub cy: f64,
    pub h: f64,
    pub w: f64,
}

impl BoxRel {
    pub fn new(cx: f64, cy: f64, h: f64, w: f64) -> Result<Self, GeometryError> {
        let b = BoxRel { cx, cy, h, w };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = [self.cx, self.cy, self.h, self.w]
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v));
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidRelBox {
                cx: self.cx,
                cy: self.cy,
                h: self.h,
                w: self.w,
                reason: "components must lie in [0, 1]",
            })
        }
    }

    /// Components in storage order `[cx, cy, h, w]`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.h, self.w]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoxRel {
            cx: a[0],
            cy: a[1],
            h: a[2],
            w: a[3],
        }
    }

    /// Corner form inside the unit square (no image scaling).
    pub fn to_unit_corners(&self) -> BoxXYXY {
        BoxXYXY {
            x1: self.cx - self.w * 0.5,
            y1: self.cy - self.h * 0.5,
            x2: self.cx + self.w * 0.5,
            y2: self.cy + self.h * 0.5,
        }
    }

    /// Pixel corners: `w` scales by image width, `h` by image height.
    pub fn to_abs(&self, size: ImageSize) -> Result<BoxXYXY, GeometryError> {
        size.validate()?;
        self.validate()?;
        let (iw, ih) = (size.width as f64, size.height as f64);
        let (cx, cy) = (self.cx * iw, self.cy * ih);
        let (bw, bh) = (self.w * iw, self.h * ih);
        Ok(BoxXYXY {
            x1: cx - bw * 0.5,
            y1: cy - bh * 0.5,
            x2: cx + bw * 0.5,
            y2: cy + bh * 0.5,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        let s = ImageSize { width, height };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.width == 0 || self.height == 0 {
            Err(GeometryError::ZeroImage {
                width: self.width,
                height: self.height,
            })
        } else {
            Ok(())
        }
    }
}

/// Intersection over union. Returns 0 when the union is empty.
pub fn iou(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `IoU - (|C| - |A ∪ B|) / |C|` with `C` the enclosing box.
pub fn giou(a: &BoxXYXY, b: &BoxXYXY) -> Result<f64, GeometryError> {
    if a.is_degenerate() || b.is_degenerate() {
        return Err(GeometryError::Degenerate);
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let enclosing = a.enclosing(b).area();
    Ok(inter / union - (enclosing - union) / enclosing)
}
