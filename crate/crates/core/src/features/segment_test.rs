use crate::imagekit::GrayImage;

use super::{ensure_min_size, rank_order, DetectorConfig, FeatureError, Keypoint, CORNER_DIAMETER};

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
pub const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

const ARC: usize = 9;
const RADIUS: usize = 3;

/// Largest threshold `t` for which `(x, y)` still passes the 9-of-16 segment
/// test, i.e. some 9 contiguous circle pixels are all `> center + t` or all
/// `< center - t`. Non-corners score below 1. `(x, y)` must be at least 3 px
/// from the border.
pub fn segment_test_score(img: &GrayImage, x: usize, y: usize) -> i32 {
    let center = img.get(x, y) as i32;
    let mut diff = [0i32; 16];
    for (d, (dx, dy)) in diff.iter_mut().zip(CIRCLE) {
        *d = img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize) as i32 - center;
    }
    let mut best = i32::MIN;
    for start in 0..16 {
        let mut brighter = i32::MAX;
        let mut darker = i32::MAX;
        for k in 0..ARC {
            let d = diff[(start + k) % 16];
            brighter = brighter.min(d);
            darker = darker.min(-d);
        }
        best = best.max(brighter).max(darker);
    }
    best - 1
}

/// Segment-test corners (FAST-9; the AGAST decision tree accelerates the same
/// test), with 3x3 non-maximum suppression on the corner score.
///
/// Keypoints are at least 3 px from the border, have octave 0, no orientation
/// and diameter [`CORNER_DIAMETER`]. No two returned keypoints are 8-adjacent.
pub fn detect_agast(img: &GrayImage, cfg: &DetectorConfig) -> Result<Vec<Keypoint>, FeatureError> {
    ensure_min_size(img, 2 * RADIUS + 1, 2 * RADIUS + 1)?;
    cfg.validate()?;
    let threshold = cfg.fast_threshold as i32;
    let (w, h) = img.dimensions();
    let mut scores = vec![0i32; w * h];
    for y in RADIUS..h - RADIUS {
        for x in RADIUS..w - RADIUS {
            let s = segment_test_score(img, x, y);
            if s >= threshold {
                scores[y * w + x] = s;
            }
        }
    }
    Ok(suppress_non_maxima(&scores, w, h)
        .into_iter()
        .map(|(x, y, s)| Keypoint {
            x: x as f32,
            y: y as f32,
            response: s as f32,
            octave: 0,
            angle: None,
            diameter: CORNER_DIAMETER,
        })
        .collect())
}

/// Keeps positive entries that beat all 8 neighbours under the ranking order
/// (score, then lower y, then lower x). Output is in raster order.
pub(crate) fn suppress_non_maxima(scores: &[i32], w: usize, h: usize) -> Vec<(usize, usize, i32)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let s = scores[y * w + x];
            if s <= 0 {
                continue;
            }
            let mut is_max = true;
            'scan: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if (nx, ny) == (x, y) {
                        continue;
                    }
                    let ns = scores[ny * w + nx];
                    if ns > 0 && rank_order((ns as f32, ny as f32, nx as f32), (s as f32, y as f32, x as f32)).is_lt() {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                out.push((x, y, s));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::bright_square;

    fn cfg(t: u16) -> DetectorConfig {
        DetectorConfig { fast_threshold: t, ..DetectorConfig::with_kind(super::super::DetectorKind::Agast) }
    }

    #[test]
    fn constant_image_has_no_corners() {
        assert!(detect_agast(&GrayImage::filled(32, 32, 90), &cfg(20)).unwrap().is_empty());
    }

    #[test]
    fn square_corners_only() {
        let img = bright_square(48, 48, 14, 14, 20);
        let kps = detect_agast(&img, &cfg(20)).unwrap();
        assert!(!kps.is_empty());
        let corners = [(14.0, 14.0), (33.0, 14.0), (14.0, 33.0), (33.0, 33.0)];
        for kp in &kps {
            let near = corners.iter().any(|(cx, cy)| (kp.x - cx).abs() <= 2.0 && (kp.y - cy).abs() <= 2.0);
            assert!(near, "keypoint off-corner at ({}, {})", kp.x, kp.y);
        }
        for (cx, cy) in corners {
            assert!(kps.iter().any(|kp| (kp.x - cx).abs() <= 2.0 && (kp.y - cy).abs() <= 2.0));
        }
    }

    #[test]
    fn threshold_beyond_dynamic_range() {
        let img = bright_square(48, 48, 14, 14, 20);
        assert!(detect_agast(&img, &cfg(300)).unwrap().is_empty());
    }

    #[test]
    fn too_small() {
        assert!(matches!(
            detect_agast(&GrayImage::filled(6, 10, 0), &cfg(20)),
            Err(FeatureError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn score_of_isolated_bright_pixel() {
        let mut img = GrayImage::filled(9, 9, 100);
        img.set(4, 4, 180);
        // every circle pixel is 80 darker
        assert_eq!(segment_test_score(&img, 4, 4), 79);
    }

    #[test]
    fn equal_scores_suppress_to_one() {
        let scores = vec![0, 0, 0, 0, 5, 5, 0, 0, 0];
        let kept = suppress_non_maxima(&scores, 3, 3);
        assert_eq!(kept, vec![(1, 1, 5)]);
    }
}
