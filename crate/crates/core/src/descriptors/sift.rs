use std::f32::consts::TAU;

use crate::features::gradient::Gradients;
use crate::features::{Keypoint, ORB_PATCH_SIZE};
use crate::imagekit::GrayImage;

use super::{DescriptorSet, Descriptors, FloatDescriptor, FLOAT_LEN};

const SAMPLES: usize = 16;
const CELLS: usize = 4;
const BINS: usize = 8;
const WEIGHT_SIGMA: f32 = 8.0;
const CLAMP: f32 = 0.2;

/// SIFT descriptors at the given keypoints.
///
/// A 16x16 grid of Sobel gradient samples is taken around each keypoint,
/// rotated by its angle (0 when undefined) and spaced `max(1, diameter/31)`
/// pixels apart. Samples are Gaussian weighted (sigma 8 samples) and spread
/// over 4x4 cells x 8 orientations by trilinear interpolation. The vector is
/// L2-normalized, clamped at 0.2 and normalized again; a patch without any
/// gradient yields the zero vector. Keypoints whose grid leaves the image
/// interior are dropped and counted in [`DescriptorSet::dropped`].
pub fn describe_sift(img: &GrayImage, keypoints: &[Keypoint]) -> DescriptorSet {
    let grads = Gradients::sobel(img);
    let mut kept = Vec::with_capacity(keypoints.len());
    let mut vectors = Vec::with_capacity(keypoints.len());
    for kp in keypoints {
        if let Some(v) = describe_one(&grads, kp) {
            kept.push(*kp);
            vectors.push(v);
        }
    }
    let dropped = keypoints.len() - kept.len();
    DescriptorSet { keypoints: kept, descriptors: Descriptors::Float(vectors), dropped }
}

fn describe_one(g: &Gradients, kp: &Keypoint) -> Option<FloatDescriptor> {
    let spacing = (kp.diameter / ORB_PATCH_SIZE).max(1.0);
    let theta = kp.angle.unwrap_or(0.0).to_radians();
    let (sin, cos) = theta.sin_cos();
    let half = SAMPLES as f32 / 2.0 - 0.5;
    let (xmax, ymax) = (g.width as f32 - 2.0, g.height as f32 - 2.0);

    let mut hist = [0f32; FLOAT_LEN];
    for j in 0..SAMPLES {
        for i in 0..SAMPLES {
            let (u, v) = (i as f32 - half, j as f32 - half);
            let x = kp.x + (cos * u - sin * v) * spacing;
            let y = kp.y + (sin * u + cos * v) * spacing;
            if !(x >= 1.0 && y >= 1.0 && x <= xmax && y <= ymax) {
                return None;
            }
            let (gx, gy) = g.sample(x, y);
            // gradient expressed in the patch frame
            let (px, py) = (cos * gx + sin * gy, -sin * gx + cos * gy);
            let mag = (px * px + py * py).sqrt();
            if mag == 0.0 {
                continue;
            }
            let weight = (-(u * u + v * v) / (2.0 * WEIGHT_SIGMA * WEIGHT_SIGMA)).exp();
            let ori = py.atan2(px).rem_euclid(TAU) / TAU * BINS as f32;
            accumulate(&mut hist, (i as f32 + 0.5) / 4.0 - 0.5, (j as f32 + 0.5) / 4.0 - 0.5, ori, mag * weight);
        }
    }
    normalize(&mut hist);
    Some(hist)
}

fn accumulate(hist: &mut [f32; FLOAT_LEN], cx: f32, cy: f32, ori: f32, value: f32) {
    let (x0, y0, o0) = (cx.floor(), cy.floor(), ori.floor());
    let (fx, fy, fo) = (cx - x0, cy - y0, ori - o0);
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        let row = y0 as i32 + dy;
        if !(0..CELLS as i32).contains(&row) || wy == 0.0 {
            continue;
        }
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let col = x0 as i32 + dx;
            if !(0..CELLS as i32).contains(&col) || wx == 0.0 {
                continue;
            }
            for (d_o, wo) in [(0, 1.0 - fo), (1, fo)] {
                let bin = (o0 as usize + d_o) % BINS;
                hist[(row as usize * CELLS + col as usize) * BINS + bin] += value * wy * wx * wo;
            }
        }
    }
}

fn normalize(hist: &mut [f32; FLOAT_LEN]) {
    let norm = |h: &[f32]| h.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt();
    let n = norm(hist);
    if n < 1e-9 {
        hist.fill(0.0);
        return;
    }
    for c in hist.iter_mut() {
        *c = ((*c as f64 / n) as f32).min(CLAMP);
    }
    let n = norm(hist);
    for c in hist.iter_mut() {
        *c = (*c as f64 / n) as f32;
    }
}
