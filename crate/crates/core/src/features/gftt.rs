use crate::imagekit::GrayImage;

use super::gradient::Gradients;
use super::{ensure_min_size, rank_order, DetectorConfig, FeatureError, Keypoint, CORNER_DIAMETER};

/// Normalized 3x3 Gaussian window with sigma 1.
fn gaussian_window() -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    let mut sum = 0.0;
    for (dy, row) in k.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (fx, fy) = (dx as f64 - 1.0, dy as f64 - 1.0);
            *v = (-(fx * fx + fy * fy) / 2.0).exp();
            sum += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    k
}

/// Shi-Tomasi response: the smaller eigenvalue of the Gaussian-weighted (3x3,
/// sigma 1) structure tensor of Sobel gradients. Pixels closer than 2 px to
/// the border, where the window is incomplete, are 0.
pub fn min_eigenvalue_map(img: &GrayImage) -> Vec<f64> {
    let (w, h) = img.dimensions();
    let g = Gradients::sobel(img);
    let n = w * h;
    let (mut xx, mut yy, mut xy) = (vec![0f64; n], vec![0f64; n], vec![0f64; n]);
    for i in 0..n {
        let (gx, gy) = (g.gx[i] as f64, g.gy[i] as f64);
        xx[i] = gx * gx;
        yy[i] = gy * gy;
        xy[i] = gx * gy;
    }
    let k = gaussian_window();
    let mut out = vec![0f64; n];
    if w < 5 || h < 5 {
        return out;
    }
    for y in 2..h - 2 {
        for x in 2..w - 2 {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for (dy, row) in k.iter().enumerate() {
                for (dx, &wgt) in row.iter().enumerate() {
                    let j = (y + dy - 1) * w + (x + dx - 1);
                    a += wgt * xx[j];
                    b += wgt * xy[j];
                    c += wgt * yy[j];
                }
            }
            let half_trace = (a + c) / 2.0;
            let half_diff = (a - c) / 2.0;
            out[y * w + x] = half_trace - (half_diff * half_diff + b * b).sqrt();
        }
    }
    out
}

/// Good-features-to-track corners.
///
/// Candidates have a positive response of at least `gftt_quality` times the
/// maximum response; they are accepted greedily in ranking order (response,
/// then lower y, then lower x) while keeping every accepted pair at least
/// `gftt_min_distance` apart, up to `gftt_max_corners`.
pub fn detect_gftt(img: &GrayImage, cfg: &DetectorConfig) -> Result<Vec<Keypoint>, FeatureError> {
    ensure_min_size(img, 7, 7)?;
    cfg.validate()?;
    let w = img.width();
    let response = min_eigenvalue_map(img);
    let max = response.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Ok(Vec::new());
    }
    let floor = cfg.gftt_quality * max;
    let mut candidates: Vec<(f32, f32, f32)> = response
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 0.0 && r >= floor)
        .map(|(i, &r)| (r as f32, (i / w) as f32, (i % w) as f32))
        .collect();
    candidates.sort_by(|a, b| rank_order(*a, *b));

    let min_d2 = (cfg.gftt_min_distance * cfg.gftt_min_distance) as f32;
    let mut accepted: Vec<Keypoint> = Vec::new();
    for (r, y, x) in candidates {
        if accepted.len() >= cfg.gftt_max_corners {
            break;
        }
        let clear = accepted.iter().all(|k| {
            let (dx, dy) = (k.x - x, k.y - y);
            dx * dx + dy * dy >= min_d2
        });
        if clear {
            accepted.push(Keypoint { x, y, response: r, octave: 0, angle: None, diameter: CORNER_DIAMETER });
        }
    }
    Ok(accepted)
}
