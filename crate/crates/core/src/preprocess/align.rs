//! Moment-based in-plane similarity alignment of head masks.

use crate::imagekit::{to_u8, GrayImage};

use super::mask::{head_mask, Mask};
use super::PreprocessError;

/// Relative tolerance under which the second moments count as isotropic.
const ISOTROPY_EPS: f64 = 1e-9;

/// Area, centroid and second-order central moments of a mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskMoments {
    pub area: f64,
    pub cx: f64,
    pub cy: f64,
    pub mu20: f64,
    pub mu02: f64,
    pub mu11: f64,
}

impl MaskMoments {
    pub fn of(mask: &Mask) -> Result<Self, PreprocessError> {
        let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) {
                    let (xf, yf) = (x as f64, y as f64);
                    n += 1.0;
                    sx += xf;
                    sy += yf;
                    sxx += xf * xf;
                    syy += yf * yf;
                    sxy += xf * yf;
                }
            }
        }
        if n == 0.0 {
            return Err(PreprocessError::EmptyForeground);
        }
        let (cx, cy) = (sx / n, sy / n);
        Ok(Self { area: n, cx, cy, mu20: sxx / n - cx * cx, mu02: syy / n - cy * cy, mu11: sxy / n - cx * cy })
    }

    /// Principal-axis angle in degrees, measured from +x towards +y (clockwise
    /// on screen), in (-90, 90].
    pub fn orientation_deg(&self) -> Result<f64, PreprocessError> {
        let scale = (self.mu20 + self.mu02).abs().max(f64::MIN_POSITIVE);
        if (self.mu20 - self.mu02).abs() <= ISOTROPY_EPS * scale && self.mu11.abs() <= ISOTROPY_EPS * scale {
            return Err(PreprocessError::DegenerateMoments);
        }
        let theta = 0.5 * (2.0 * self.mu11).atan2(self.mu20 - self.mu02);
        Ok(wrap_half_turn(theta.to_degrees()))
    }
}

/// Maps an angle in degrees to its equivalent modulo 180 in (-90, 90].
pub fn wrap_half_turn(deg: f64) -> f64 {
    let mut a = deg.rem_euclid(180.0);
    if a > 90.0 {
        a -= 180.0;
    }
    a
}

/// Result of [`align`].
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub image: GrayImage,
    /// Clockwise correction applied to the moving image, degrees.
    pub rotation_deg: f64,
    pub scale_factor: f64,
}

/// Estimates the rotation and isotropic scale that bring `moving`'s head mask
/// onto `fixed`'s, and returns `moving` resampled with that transform about its
/// own centroid.
///
/// The rotation is the difference of principal-axis orientations, wrapped to
/// (-90, 90]. Because an almost round mask can swap its major and minor axes,
/// the candidate rotated by a further 90 degrees is also scored and the one
/// with the larger mask overlap wins (ties go to the smaller magnitude). When
/// either mask is isotropic the orientation is undefined and the rotation is 0.
/// The scale is `sqrt(area_fixed / area_moving)`.
pub fn align(moving: &GrayImage, fixed: &GrayImage) -> Result<Alignment, PreprocessError> {
    let (rotation_deg, scale_factor) = estimate(moving, fixed)?;
    Ok(Alignment { image: transform_about_centroid(moving, rotation_deg, scale_factor)?, rotation_deg, scale_factor })
}

/// Parameters only; see [`align`].
pub fn estimate(moving: &GrayImage, fixed: &GrayImage) -> Result<(f64, f64), PreprocessError> {
    let mm = head_mask(moving);
    let fm = head_mask(fixed);
    let m = MaskMoments::of(&mm)?;
    let f = MaskMoments::of(&fm)?;
    let scale = (f.area / m.area).sqrt();

    let rotation = match (m.orientation_deg(), f.orientation_deg()) {
        (Ok(theta_m), Ok(theta_f)) => {
            let primary = wrap_half_turn(theta_f - theta_m);
            let swapped = wrap_half_turn(primary + 90.0);
            let score_p = overlap(&mm, &m, &fm, &f, primary, scale);
            let score_s = overlap(&mm, &m, &fm, &f, swapped, scale);
            if score_s > score_p || (score_s == score_p && swapped.abs() < primary.abs()) {
                swapped
            } else {
                primary
            }
        }
        (Err(PreprocessError::DegenerateMoments), _) | (_, Err(PreprocessError::DegenerateMoments)) => 0.0,
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    Ok((rotation, scale))
}

/// Intersection-over-union of `moving` (rotated and scaled about its
/// centroid, then translated onto the fixed centroid) with `fixed`.
fn overlap(moving: &Mask, mm: &MaskMoments, fixed: &Mask, fm: &MaskMoments, rot_deg: f64, scale: f64) -> f64 {
    let (sin, cos) = rot_deg.to_radians().sin_cos();
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..fixed.height() {
        for x in 0..fixed.width() {
            let dx = (x as f64 - fm.cx) / scale;
            let dy = (y as f64 - fm.cy) / scale;
            let sx = (mm.cx + cos * dx + sin * dy).round();
            let sy = (mm.cy - sin * dx + cos * dy).round();
            let in_moving = sx >= 0.0
                && sy >= 0.0
                && (sx as usize) < moving.width()
                && (sy as usize) < moving.height()
                && moving.get(sx as usize, sy as usize);
            let in_fixed = fixed.get(x, y);
            inter += (in_moving && in_fixed) as usize;
            union += (in_moving || in_fixed) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Rotates `img` clockwise by `rotation_deg` and scales it by `scale` about
/// the centroid of its head mask. Same canvas; outside samples read 0.
pub fn transform_about_centroid(img: &GrayImage, rotation_deg: f64, scale: f64) -> Result<GrayImage, PreprocessError> {
    if rotation_deg == 0.0 && scale == 1.0 {
        return Ok(img.clone());
    }
    let m = MaskMoments::of(&head_mask(img))?;
    Ok(similarity_warp(img, m.cx, m.cy, rotation_deg, scale))
}

pub(crate) fn similarity_warp(img: &GrayImage, cx: f64, cy: f64, rotation_deg: f64, scale: f64) -> GrayImage {
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let dx = (x as f64 - cx) / scale;
        let dy = (y as f64 - cy) / scale;
        let sx = cx + cos * dx + sin * dy;
        let sy = cy - sin * dx + cos * dy;
        to_u8(img.sample_bilinear_zero(sx, sy))
    })
}
