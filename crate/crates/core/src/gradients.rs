//! Gradient fields and patch-local normalization.

use std::f64::consts::{PI, TAU};

use crate::editing::EditingCombo;
use crate::error::{Error, Result};
use crate::imgio::{Image, Plane};

/// Default `eps_g` in the magnitude normalizer.
pub const DEFAULT_EPS_G: f64 = 1e-8;

/// Central-difference gradients. Border pixels are masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// Angle in `[0, 2pi)`; `None` where the magnitude is zero or masked.
    pub orientation: Vec<Option<f64>>,
    pub valid: Vec<bool>,
}

impl GradientField {
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitude.iter().copied().fold(0.0, f64::max)
    }
}

/// Gradient field of a grayscale image.
pub fn gradient_field(img: &Image) -> Result<GradientField> {
    if !img.is_gray() {
        return Err(Error::Shape("gradient_field needs a grayscale image".into()));
    }
    Ok(gradient_field_plane(&img.to_plane()?))
}

pub fn gradient_field_plane(plane: &Plane) -> GradientField {
    let (w, h) = (plane.width, plane.height);
    let n = w * h;
    let mut gf = GradientField {
        width: w,
        height: h,
        dx: vec![0.0; n],
        dy: vec![0.0; n],
        magnitude: vec![0.0; n],
        orientation: vec![None; n],
        valid: vec![false; n],
    };
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let dx = (plane.get(x + 1, y) - plane.get(x - 1, y)) / 2.0;
            let dy = (plane.get(x, y + 1) - plane.get(x, y - 1)) / 2.0;
            let m = dx.hypot(dy);
            gf.dx[i] = dx;
            gf.dy[i] = dy;
            gf.magnitude[i] = m;
            gf.valid[i] = true;
            if m > 0.0 {
                let mut t = dy.atan2(dx);
                if t < 0.0 {
                    t += TAU;
                }
                // atan2 can return -0.0 + 2pi rounding to exactly 2pi
                if t >= TAU {
                    t -= TAU;
                }
                gf.orientation[i] = Some(t);
            }
        }
    }
    gf
}

/// Axis-aligned patch rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchWindow {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl PatchWindow {
    pub fn square(x: usize, y: usize, size: usize) -> Self {
        Self {
            x,
            y,
            width: size,
            height: size,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Patch-normalized magnitudes, unit orientation vectors and patch-local
/// positions in `[0,1]^2`, all in row-major patch order.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPatch {
    pub width: usize,
    pub height: usize,
    pub magnitudes: Vec<f64>,
    /// `[sin theta, cos theta]`, `None` where the orientation is undefined.
    pub orientations: Vec<Option<[f64; 2]>>,
    pub positions: Vec<[f64; 2]>,
    pub eps_g: f64,
}

impl NormalizedPatch {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }
}

/// Patch-local coordinates of a `width x height` patch, row-major.
pub fn patch_positions(width: usize, height: usize) -> Vec<[f64; 2]> {
    let coord = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            out.push([coord(x, width), coord(y, height)]);
        }
    }
    out
}

/// `m~(z) = m(z) / sqrt(sum_P m^2 + eps_g)`. Masked pixels count as zero
/// magnitude. When the denominator is zero (flat patch with `eps_g = 0`)
/// every normalized magnitude is zero.
pub fn normalize_patch(gf: &GradientField, window: PatchWindow, eps_g: f64) -> Result<NormalizedPatch> {
    if window.is_empty() {
        return Err(Error::Empty("patch window has no pixels".into()));
    }
    if window.x + window.width > gf.width || window.y + window.height > gf.height {
        return Err(Error::Shape(format!(
            "window {window:?} exceeds {}x{} field",
            gf.width, gf.height
        )));
    }
    if !(eps_g >= 0.0) {
        return Err(Error::Parameter(format!("eps_g must be >= 0, got {eps_g}")));
    }
    let n = window.len();
    let mut raw = Vec::with_capacity(n);
    let mut orientations = Vec::with_capacity(n);
    for y in window.y..window.y + window.height {
        for x in window.x..window.x + window.width {
            let i = gf.index(x, y);
            if gf.valid[i] {
                raw.push(gf.magnitude[i]);
                orientations.push(gf.orientation[i].map(|t| [t.sin(), t.cos()]));
            } else {
                raw.push(0.0);
                orientations.push(None);
            }
        }
    }
    let mut sum_sq = 0.0;
    for &m in &raw {
        sum_sq += m * m;
    }
    let denom = (sum_sq + eps_g).sqrt();
    let magnitudes = if denom > 0.0 {
        raw.iter().map(|&m| m / denom).collect()
    } else {
        vec![0.0; n]
    };
    Ok(NormalizedPatch {
        width: window.width,
        height: window.height,
        magnitudes,
        orientations,
        positions: patch_positions(window.width, window.height),
        eps_g,
    })
}

/// Per-variant normalized magnitudes and their weighted sum
/// `m^_g(z) = sum_i a_i m~_i(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EditedMagnitudes {
    pub per_variant: Vec<Vec<f64>>,
    pub combined: Vec<f64>,
}

pub(crate) fn check_aligned(variants: &[NormalizedPatch]) -> Result<()> {
    let first = variants
        .first()
        .ok_or_else(|| Error::Empty("no variant patches".into()))?;
    for v in &variants[1..] {
        if v.width != first.width || v.height != first.height {
            return Err(Error::Shape(format!(
                "variant patch {}x{} does not match {}x{}",
                v.width, v.height, first.width, first.height
            )));
        }
    }
    Ok(())
}

pub fn edited_magnitudes(variants: &[NormalizedPatch], combo: &EditingCombo) -> Result<EditedMagnitudes> {
    check_aligned(variants)?;
    if variants.len() != combo.len() {
        return Err(Error::Shape(format!(
            "{} variants but combo has {} weights",
            variants.len(),
            combo.len()
        )));
    }
    let n = variants[0].len();
    let mut combined = vec![0.0; n];
    for (v, &a) in variants.iter().zip(combo.weights()) {
        for (c, &m) in combined.iter_mut().zip(&v.magnitudes) {
            *c += a * m;
        }
    }
    Ok(EditedMagnitudes {
        per_variant: variants.iter().map(|v| v.magnitudes.clone()).collect(),
        combined,
    })
}

/// Angular deviation between two gradient fields over strong pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationStats {
    pub max: f64,
    pub mean: f64,
    /// Number of pixels compared.
    pub count: usize,
}

/// Smallest angle between `a` and `b` on the circle, in `[0, pi]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Compares orientations at pixels where the original magnitude exceeds
/// `threshold_frac * max(m)`.
pub fn orientation_consistency(
    original: &GradientField,
    edited: &GradientField,
    threshold_frac: f64,
) -> Result<OrientationStats> {
    if original.width != edited.width || original.height != edited.height {
        return Err(Error::Shape("gradient fields differ in size".into()));
    }
    let threshold = threshold_frac * original.max_magnitude();
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..original.magnitude.len() {
        if !original.valid[i] || original.magnitude[i] <= threshold {
            continue;
        }
        let dev = match (original.orientation[i], edited.orientation[i]) {
            (Some(a), Some(b)) => angular_distance(a, b),
            // an edited gradient that vanished carries no direction at all
            _ => PI,
        };
        max = max.max(dev);
        sum += dev;
        count += 1;
    }
    Ok(OrientationStats {
        max,
        mean: if count > 0 { sum / count as f64 } else { 0.0 },
        count,
    })
}
