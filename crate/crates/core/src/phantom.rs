//! Deterministic synthetic images and slice stacks.
//!
//! The volume generator places seeded ellipsoidal "structures" inside an
//! ellipsoidal head with a bright rim. Consecutive slices through it change
//! gradually, distant slices look different, which is the property slice
//! localization relies on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imagekit::{to_u8, GrayImage, Plane, SliceStack};

/// Elongated ellipse at 20 degrees with a bright rim and asymmetric interior
/// structures, centered on the canvas.
pub fn ellipse_phantom(width: usize, height: usize) -> GrayImage {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let (a, b) = (0.40 * width as f64, 0.24 * height as f64);
    let (sin, cos) = 20f64.to_radians().sin_cos();
    // (u, v) offsets in units of the outer semi-axes, radii, value
    let inner: [(f64, f64, f64, f64, u8); 7] = [
        (-0.55, 0.05, 0.16, 0.30, 230),
        (-0.20, -0.35, 0.10, 0.22, 40),
        (0.10, 0.30, 0.14, 0.25, 210),
        (0.35, -0.20, 0.08, 0.35, 60),
        (0.62, 0.15, 0.12, 0.28, 250),
        (0.00, 0.00, 0.06, 0.12, 20),
        (-0.38, 0.45, 0.07, 0.18, 180),
    ];
    supersample(width, height, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        let u = (cos * dx + sin * dy) / a;
        let v = (-sin * dx + cos * dy) / b;
        let r = u * u + v * v;
        if r > 1.0 {
            return 0.0;
        }
        if r > 0.86 {
            return 220.0;
        }
        for &(ou, ov, ru, rv, value) in &inner {
            let (du, dv) = ((u - ou) / ru, (v - ov) / rv);
            if du * du + dv * dv <= 1.0 {
                return value as f64;
            }
        }
        120.0
    })
}

/// `cols x rows` checkerboard of `cell`-pixel squares alternating 0 and 255.
/// It has `(cols - 1) * (rows - 1)` interior intersections.
pub fn checkerboard(cols: usize, rows: usize, cell: usize) -> GrayImage {
    GrayImage::from_fn(cols * cell, rows * cell, |x, y| if (x / cell + y / cell).is_multiple_of(2) { 0 } else { 255 })
}

/// Bright `side`-pixel square with its top-left corner at `(x0, y0)` on black.
pub fn bright_square(width: usize, height: usize, x0: usize, y0: usize, side: usize) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| {
        if (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y) {
            255
        } else {
            0
        }
    })
}

/// Averages a 2x2 grid of samples per pixel; `f` receives pixel coordinates.
fn supersample(width: usize, height: usize, f: impl Fn(f64, f64) -> f64) -> GrayImage {
    const OFFSETS: [f64; 2] = [-0.25, 0.25];
    GrayImage::from_fn(width, height, |x, y| {
        let mut acc = 0.0;
        for oy in OFFSETS {
            for ox in OFFSETS {
                acc += f(x as f64 + ox, y as f64 + oy);
            }
        }
        to_u8(acc / 4.0)
    })
}

#[derive(Debug, Clone, PartialEq)]
struct Structure {
    /// Center in head-normalized coordinates: x, y in [-1, 1] of the head's
    /// in-plane semi-axes; z in slice units.
    cx: f64,
    cy: f64,
    cz: f64,
    rx: f64,
    ry: f64,
    rz: f64,
    angle: f64,
    delta: f64,
}

/// Parameters of the procedural head volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeParams {
    pub width: usize,
    pub height: usize,
    pub slices: usize,
    pub structures: usize,
    pub seed: u64,
}

impl VolumeParams {
    pub fn new(size: usize, slices: usize, seed: u64) -> Self {
        Self { width: size, height: size, slices, structures: 200, seed }
    }
}

/// Seeded procedural head volume that can be sliced into a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVolume {
    params: VolumeParams,
    structures: Vec<Structure>,
    mirrored: bool,
}

impl SyntheticVolume {
    pub fn generate(params: VolumeParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let n = params.slices as f64;
        let structures = (0..params.structures)
            .map(|_| {
                let elongated = rng.random::<f64>() < 0.3;
                let (rx, ry) = if elongated {
                    (rng.random_range(0.10..0.22), rng.random_range(0.015..0.035))
                } else {
                    (rng.random_range(0.04..0.12), rng.random_range(0.04..0.12))
                };
                // Rejection-sample the center inside the unit disk.
                let (cx, cy) = loop {
                    let (x, y) = (rng.random_range(-0.85..0.85), rng.random_range(-0.85..0.85));
                    if x * x + y * y < 0.72 {
                        break (x, y);
                    }
                };
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Structure {
                    cx,
                    cy,
                    cz: rng.random_range(-0.1 * n..1.1 * n),
                    rx,
                    ry,
                    rz: rng.random_range(5.0..12.0),
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                    delta: sign * rng.random_range(35.0..90.0),
                }
            })
            .collect();
        Self { params, structures, mirrored: false }
    }

    /// A second "subject": the same anatomy with every structure jittered
    /// in position, size and contrast by up to `amount` (relative).
    pub fn perturbed(&self, seed: u64, amount: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = |v: f64, scale: f64| v + scale * amount * rng.random_range(-1.0..1.0);
        let structures = self
            .structures
            .iter()
            .map(|s| Structure {
                cx: jitter(s.cx, 0.1),
                cy: jitter(s.cy, 0.1),
                cz: jitter(s.cz, 1.0),
                rx: (s.rx * (1.0 + jitter(0.0, 0.5))).max(0.01),
                ry: (s.ry * (1.0 + jitter(0.0, 0.5))).max(0.01),
                rz: s.rz,
                angle: jitter(s.angle, 0.5),
                delta: s.delta * (1.0 + jitter(0.0, 0.5)),
            })
            .collect();
        Self { params: self.params.clone(), structures, mirrored: self.mirrored }
    }

    /// Makes slice `k` identical to slice `n - 1 - k`, like the two
    /// hemispheres of a symmetric head cut sagittally.
    pub fn mirrored(mut self) -> Self {
        self.mirrored = true;
        self
    }

    pub fn params(&self) -> &VolumeParams {
        &self.params
    }

    /// Renders the cross-section at slice position `z`.
    pub fn render_slice(&self, z: f64) -> GrayImage {
        let p = &self.params;
        let n = p.slices as f64;
        let mid = (n - 1.0) / 2.0;
        let z = if self.mirrored { mid + (z - mid).abs() } else { z };
        let (cx, cy) = ((p.width as f64 - 1.0) / 2.0, (p.height as f64 - 1.0) / 2.0);
        let (ax, ay) = (0.42 * p.width as f64, 0.36 * p.height as f64);
        let head_rz = 0.62 * n;
        let t = 1.0 - ((z - mid) / head_rz).powi(2);
        if t <= 0.0 {
            return GrayImage::filled(p.width, p.height, 0);
        }
        let head_scale = t.sqrt();

        // Cross-sections of the structures at this z, in normalized coordinates.
        let active: Vec<(f64, f64, f64, f64, f64, f64, f64)> = self
            .structures
            .iter()
            .filter_map(|s| {
                let tz = 1.0 - ((z - s.cz) / s.rz).powi(2);
                (tz > 0.0).then(|| {
                    let k = tz.sqrt();
                    let (sin, cos) = s.angle.sin_cos();
                    (
                        s.cx * head_scale,
                        s.cy * head_scale,
                        s.rx * k * head_scale,
                        s.ry * k * head_scale,
                        sin,
                        cos,
                        s.delta,
                    )
                })
            })
            .collect();

        supersample(p.width, p.height, |x, y| {
            let (u, v) = ((x - cx) / ax, (y - cy) / ay);
            let r = (u * u + v * v).sqrt() / head_scale;
            if r > 1.0 {
                return 0.0;
            }
            if r > 0.93 {
                return 215.0;
            }
            let mut value = 105.0;
            for &(ox, oy, rx, ry, sin, cos, delta) in &active {
                let (du, dv) = (u - ox, v - oy);
                let a = (cos * du + sin * dv) / rx;
                let b = (-sin * du + cos * dv) / ry;
                if a * a + b * b <= 1.0 {
                    value += delta;
                }
            }
            value.clamp(0.0, 255.0)
        })
    }

    /// All slices at integer positions, as a stack with indices `0..slices`.
    pub fn stack(&self, subject_id: &str, plane: Plane) -> SliceStack {
        let slices = (0..self.params.slices).map(|k| self.render_slice(k as f64)).collect();
        SliceStack::new(subject_id, plane, 1.0, 0, slices).expect("rendered slices share dimensions")
    }
}

/// 40-slice style textured axial stack from `seed`.
pub fn textured_stack(seed: u64, slices: usize, size: usize) -> SliceStack {
    SyntheticVolume::generate(VolumeParams::new(size, slices, seed)).stack(&format!("synth-{seed}"), Plane::Axial)
}

/// Applies the gamma curve `255 * (v / 255)^gamma` to every pixel.
pub fn gamma_warp(img: &GrayImage, gamma: f64) -> GrayImage {
    let lut: Vec<u8> = (0..256).map(|v| to_u8(255.0 * (v as f64 / 255.0).powf(gamma))).collect();
    img.map(|v| lut[v as usize])
}
