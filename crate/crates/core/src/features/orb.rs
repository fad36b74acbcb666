use crate::imagekit::GrayImage;

use super::gradient::Gradients;
use super::segment_test::{segment_test_score, suppress_non_maxima};
use super::{ensure_min_size, rank_order, DetectorConfig, FeatureError, Keypoint};

/// Side of the square patch described around an ORB keypoint at its own level.
pub const ORB_PATCH_SIZE: f32 = 31.0;
/// Radius of the circular patch used for the intensity-centroid orientation.
const ORIENTATION_RADIUS: i32 = 15;
/// Keypoints must sit this far from the border of their pyramid level.
const LEVEL_MARGIN: usize = 16;
const HARRIS_BLOCK: i32 = 7;
const HARRIS_K: f64 = 0.04;
/// Smallest pyramid level accepted.
const MIN_LEVEL_SIZE: usize = 32;

/// Level `level` of the pyramid: the base image resized by
/// `scale_factor^-level` with bilinear interpolation.
pub fn pyramid_level(img: &GrayImage, scale: f64) -> GrayImage {
    let (w, h) = level_dimensions(img.width(), img.height(), scale);
    img.resize_bilinear(w, h)
}

pub(crate) fn level_dimensions(width: usize, height: usize, scale: f64) -> (usize, usize) {
    (((width as f64 / scale).round() as usize).max(1), ((height as f64 / scale).round() as usize).max(1))
}

/// Harris corner measure `det(M) - 0.04 trace(M)^2` over a 7x7 block of Sobel
/// gradients centered at `(x, y)`. The block must fit inside the image.
pub fn harris_response(img: &GrayImage, x: usize, y: usize) -> f64 {
    let g = Gradients::sobel(img);
    harris_from(&g, x, y)
}

fn harris_from(g: &Gradients, x: usize, y: usize) -> f64 {
    let r = HARRIS_BLOCK / 2;
    // Normalize so responses are comparable to OpenCV's scaling.
    let norm = 1.0 / (4.0 * HARRIS_BLOCK as f64 * 255.0);
    let (mut a, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
    for dy in -r..=r {
        for dx in -r..=r {
            let i = (y as i32 + dy) as usize * g.width + (x as i32 + dx) as usize;
            let (gx, gy) = (g.gx[i] as f64 * norm, g.gy[i] as f64 * norm);
            a += gx * gx;
            b += gx * gy;
            c += gy * gy;
        }
    }
    a * c - b * b - HARRIS_K * (a + c) * (a + c)
}

/// Orientation of the intensity centroid `atan2(m01, m10)` over the disk of
/// radius 15 around `(x, y)`, in degrees in [0, 360). The disk must fit.
pub fn intensity_centroid_angle(img: &GrayImage, x: usize, y: usize) -> f32 {
    let (mut m10, mut m01) = (0i64, 0i64);
    let r = ORIENTATION_RADIUS;
    for dy in -r..=r {
        let half = ((r * r - dy * dy) as f64).sqrt().floor() as i32;
        for dx in -half..=half {
            let v = img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize) as i64;
            m10 += dx as i64 * v;
            m01 += dy as i64 * v;
        }
    }
    let deg = (m01 as f64).atan2(m10 as f64).to_degrees().rem_euclid(360.0) as f32;
    if deg >= 360.0 {
        0.0
    } else {
        deg
    }
}

/// ORB keypoints: FAST-9 with non-maximum suppression on every level of a
/// `orb_n_levels`-level pyramid (factor `orb_scale_factor`), re-scored with the
/// Harris measure, and the global top `orb_n_features` kept. Each keypoint
/// gets its intensity-centroid orientation and coordinates in the level-0
/// frame; its diameter is `31 * scale^octave`.
pub fn detect_orb_keypoints(img: &GrayImage, cfg: &DetectorConfig) -> Result<Vec<Keypoint>, FeatureError> {
    cfg.validate()?;
    let top_scale = cfg.orb_scale_factor.powi(cfg.orb_n_levels as i32 - 1);
    let (tw, th) = level_dimensions(img.width(), img.height(), top_scale);
    if tw < MIN_LEVEL_SIZE || th < MIN_LEVEL_SIZE {
        let need = (MIN_LEVEL_SIZE as f64 * top_scale).ceil() as usize;
        return Err(FeatureError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min_width: need,
            min_height: need,
        });
    }
    ensure_min_size(img, MIN_LEVEL_SIZE, MIN_LEVEL_SIZE)?;
    let threshold = cfg.fast_threshold as i32;

    let mut all = Vec::new();
    for octave in 0..cfg.orb_n_levels {
        let scale = cfg.orb_scale_factor.powi(octave as i32);
        let level = pyramid_level(img, scale);
        let (w, h) = level.dimensions();
        let mut scores = vec![0i32; w * h];
        for y in LEVEL_MARGIN..h - LEVEL_MARGIN {
            for x in LEVEL_MARGIN..w - LEVEL_MARGIN {
                let s = segment_test_score(&level, x, y);
                if s >= threshold {
                    scores[y * w + x] = s;
                }
            }
        }
        let corners = suppress_non_maxima(&scores, w, h);
        if corners.is_empty() {
            continue;
        }
        let grads = Gradients::sobel(&level);
        let (rx, ry) = (img.width() as f64 / w as f64, img.height() as f64 / h as f64);
        for (x, y, _) in corners {
            let harris = harris_from(&grads, x, y);
            if harris <= 0.0 {
                continue;
            }
            all.push(Keypoint {
                x: ((x as f64 + 0.5) * rx - 0.5) as f32,
                y: ((y as f64 + 0.5) * ry - 0.5) as f32,
                response: harris as f32,
                octave: octave as u32,
                angle: Some(intensity_centroid_angle(&level, x, y)),
                diameter: (ORB_PATCH_SIZE as f64 * scale) as f32,
            });
        }
    }
    all.sort_by(|a, b| rank_order((a.response, a.y, a.x), (b.response, b.y, b.x)).then(a.octave.cmp(&b.octave)));
    all.truncate(cfg.orb_n_features);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::super::DetectorKind;
    use super::*;
    use crate::phantom::ellipse_phantom;

    fn cfg() -> DetectorConfig {
        DetectorConfig::with_kind(DetectorKind::Orb)
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        assert!(detect_orb_keypoints(&GrayImage::filled(160, 160, 50), &cfg()).unwrap().is_empty());
    }

    #[test]
    fn too_small_for_pyramid() {
        assert!(matches!(
            detect_orb_keypoints(&GrayImage::filled(64, 64, 0), &cfg()),
            Err(FeatureError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn ramp_orientation_points_towards_brighter_side() {
        // Brightness rises to the right: the centroid lies at +x, angle 0.
        let img = GrayImage::from_fn(41, 41, |x, _| (x * 6) as u8);
        let a = intensity_centroid_angle(&img, 20, 20);
        assert!(a.min(360.0 - a) <= 5.0, "angle {a}");
        // Brighter towards +y gives 90 degrees.
        let img = GrayImage::from_fn(41, 41, |_, y| (y * 6) as u8);
        assert!((intensity_centroid_angle(&img, 20, 20) - 90.0).abs() <= 5.0);
    }

    #[test]
    fn keypoints_are_oriented_and_inside() {
        let img = ellipse_phantom(192, 192);
        let kps = detect_orb_keypoints(&img, &cfg()).unwrap();
        assert!(!kps.is_empty());
        assert!(kps.len() <= 500);
        for kp in &kps {
            let a = kp.angle.unwrap();
            assert!((0.0..360.0).contains(&a));
            assert!(kp.response > 0.0);
            assert!(kp.x >= 0.0 && kp.y >= 0.0 && kp.x < 192.0 && kp.y < 192.0);
        }
    }

    #[test]
    fn single_feature_is_the_strongest() {
        let img = ellipse_phantom(192, 192);
        let all = detect_orb_keypoints(&img, &cfg()).unwrap();
        let one = detect_orb_keypoints(&img, &DetectorConfig { orb_n_features: 1, ..cfg() }).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], all[0]);
        assert!(all.iter().all(|k| k.response <= one[0].response));
    }
}
