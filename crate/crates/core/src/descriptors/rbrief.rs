use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::features::{pyramid_level, Keypoint, ORB_PATCH_SIZE};
use crate::imagekit::GrayImage;

use super::{BinaryDescriptor, DescriptorError, DescriptorSet, Descriptors};

/// Seed of the generator that draws the test pattern.
pub const RBRIEF_SEED: u64 = 0x5F1C_EF1D;
/// Number of discrete orientations the pattern is pre-rotated to (12 degrees apart).
pub const RBRIEF_ANGLE_STEPS: usize = 30;
const PAIRS: usize = 256;
const MAX_RADIUS: i32 = 13;
const MARGIN: usize = 16;
const BOX_RADIUS: i32 = 2;

/// One intensity comparison: bit is set iff `I(p) < I(q)`. Offsets are in
/// pixels relative to the keypoint, `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestPair {
    pub p: [i8; 2],
    pub q: [i8; 2],
}

/// The 256 unrotated test pairs. Coordinates are drawn from a Gaussian with
/// sigma 31/5 (ChaCha8 seeded with [`RBRIEF_SEED`]) and rounded; a pair is
/// redrawn when either point lies farther than 13 px from the center or both
/// points coincide.
pub fn rbrief_pattern() -> &'static [TestPair; PAIRS] {
    static PATTERN: OnceLock<[TestPair; PAIRS]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(RBRIEF_SEED);
        let normal = Normal::new(0.0, ORB_PATCH_SIZE as f64 / 5.0).expect("valid sigma");
        let mut draw = || rng.sample(normal).round() as i32;
        let inside = |x: i32, y: i32| x * x + y * y <= MAX_RADIUS * MAX_RADIUS;
        let mut out = [TestPair { p: [0, 0], q: [0, 0] }; PAIRS];
        for pair in out.iter_mut() {
            loop {
                let (px, py, qx, qy) = (draw(), draw(), draw(), draw());
                if inside(px, py) && inside(qx, qy) && (px, py) != (qx, qy) {
                    *pair = TestPair { p: [px as i8, py as i8], q: [qx as i8, qy as i8] };
                    break;
                }
            }
        }
        out
    })
}

fn rotated_patterns() -> &'static Vec<[TestPair; PAIRS]> {
    static ROTATED: OnceLock<Vec<[TestPair; PAIRS]>> = OnceLock::new();
    ROTATED.get_or_init(|| {
        let base = rbrief_pattern();
        (0..RBRIEF_ANGLE_STEPS)
            .map(|step| {
                let (sin, cos) = (step as f64 * 360.0 / RBRIEF_ANGLE_STEPS as f64).to_radians().sin_cos();
                let rot = |[x, y]: [i8; 2]| {
                    let (x, y) = (x as f64, y as f64);
                    [(cos * x - sin * y).round() as i8, (sin * x + cos * y).round() as i8]
                };
                let mut out = *base;
                for pair in out.iter_mut() {
                    *pair = TestPair { p: rot(pair.p), q: rot(pair.q) };
                }
                out
            })
            .collect()
    })
}

fn angle_step(angle_deg: f32) -> usize {
    let step = 360.0 / RBRIEF_ANGLE_STEPS as f64;
    ((angle_deg as f64 / step).round() as i64).rem_euclid(RBRIEF_ANGLE_STEPS as i64) as usize
}

/// 5x5 box sums (border-clamped) of one pyramid level.
struct SmoothedLevel {
    width: usize,
    height: usize,
    sums: Vec<u16>,
}

impl SmoothedLevel {
    fn new(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let clamp = |v: i32, n: usize| v.clamp(0, n as i32 - 1) as usize;
        let mut rows = vec![0u16; w * h];
        for y in 0..h {
            for x in 0..w {
                rows[y * w + x] = (-BOX_RADIUS..=BOX_RADIUS).map(|d| img.get(clamp(x as i32 + d, w), y) as u16).sum();
            }
        }
        let mut sums = vec![0u16; w * h];
        for y in 0..h {
            for x in 0..w {
                sums[y * w + x] = (-BOX_RADIUS..=BOX_RADIUS).map(|d| rows[clamp(y as i32 + d, h) * w + x]).sum();
            }
        }
        Self { width: w, height: h, sums }
    }

    fn at(&self, x: usize, y: usize, [dx, dy]: [i8; 2]) -> u16 {
        self.sums[(y as i32 + dy as i32) as usize * self.width + (x as i32 + dx as i32) as usize]
    }
}

/// Rotated-BRIEF descriptors.
///
/// Each keypoint is described on the pyramid level implied by its diameter
/// (`diameter / 31`, at least 1), smoothed with a 5x5 box filter. The test
/// pattern is rotated to the keypoint angle rounded to a multiple of 12
/// degrees. Keypoints closer than 16 px to their level's border are dropped
/// and counted in [`DescriptorSet::dropped`].
pub fn describe_rbrief(img: &GrayImage, keypoints: &[Keypoint]) -> Result<DescriptorSet, DescriptorError> {
    if let Some(index) = keypoints.iter().position(|k| k.angle.is_none()) {
        return Err(DescriptorError::UndefinedAngle { index });
    }
    let mut levels: BTreeMap<u32, SmoothedLevel> = BTreeMap::new();
    let patterns = rotated_patterns();
    let mut kept = Vec::with_capacity(keypoints.len());
    let mut vectors = Vec::with_capacity(keypoints.len());
    for kp in keypoints {
        let scale = (kp.diameter / ORB_PATCH_SIZE).max(1.0);
        let level = levels.entry(scale.to_bits()).or_insert_with(|| {
            if scale == 1.0 {
                SmoothedLevel::new(img)
            } else {
                SmoothedLevel::new(&pyramid_level(img, scale as f64))
            }
        });
        let rx = img.width() as f64 / level.width as f64;
        let ry = img.height() as f64 / level.height as f64;
        let lx = ((kp.x as f64 + 0.5) / rx - 0.5).round();
        let ly = ((kp.y as f64 + 0.5) / ry - 0.5).round();
        let fits = |v: f64, n: usize| v >= MARGIN as f64 && v + (MARGIN as f64) < n as f64;
        if !fits(lx, level.width) || !fits(ly, level.height) {
            continue;
        }
        let (lx, ly) = (lx as usize, ly as usize);
        let pattern = &patterns[angle_step(kp.angle.unwrap_or(0.0))];
        let mut d: BinaryDescriptor = [0; 32];
        for (i, pair) in pattern.iter().enumerate() {
            if level.at(lx, ly, pair.p) < level.at(lx, ly, pair.q) {
                d[i / 8] |= 1 << (i % 8);
            }
        }
        kept.push(*kp);
        vectors.push(d);
    }
    let dropped = keypoints.len() - kept.len();
    Ok(DescriptorSet { keypoints: kept, descriptors: Descriptors::Binary(vectors), dropped })
}
