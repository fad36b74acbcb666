//! Binary masks, Otsu thresholding and the morphology used by skull extraction
//! and alignment.

use crate::imagekit::GrayImage;

use super::equalize::histogram;

/// Row-major boolean raster.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    fn get_i(&self, x: i64, y: i64, outside: bool) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            outside
        } else {
            self.bits[y as usize * self.width + x as usize]
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// 255 where set, 0 elsewhere.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| if self.get(x, y) { 255 } else { 0 })
    }

    /// Number of 8-connected components.
    pub fn component_count(&self) -> usize {
        label_components(self).1.len()
    }

    /// Keeps only the largest 8-connected component. Ties go to the component
    /// whose first pixel comes first in raster order.
    pub fn largest_component(&self) -> Mask {
        let (labels, sizes) = label_components(self);
        let Some(best) =
            sizes.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).map(|(i, _)| i as u32 + 1)
        else {
            return self.clone();
        };
        Mask { width: self.width, height: self.height, bits: labels.iter().map(|&l| l == best).collect() }
    }

    /// Dilation with the 3x3 cross.
    pub fn dilate_cross(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            CROSS.iter().any(|(dx, dy)| self.get_i(x + dx, y + dy, false))
        })
    }

    /// Erosion with the 3x3 cross. Pixels beyond the raster count as set so
    /// that `erode(dilate(m))` never loses pixels of `m` at the border.
    pub fn erode_cross(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            CROSS.iter().all(|(dx, dy)| self.get_i(x + dx, y + dy, true))
        })
    }

    /// Closing (dilate then erode) with the 3x3 cross, `iterations` times each.
    pub fn close_cross(&self, iterations: usize) -> Mask {
        let mut m = self.clone();
        for _ in 0..iterations {
            m = m.dilate_cross();
        }
        for _ in 0..iterations {
            m = m.erode_cross();
        }
        m
    }

    /// Sets every background pixel that is not 4-connected to the raster border.
    pub fn fill_holes(&self) -> Mask {
        let (w, h) = (self.width, self.height);
        let mut outside = vec![false; w * h];
        let mut stack = Vec::new();
        for x in 0..w {
            stack.push((x, 0));
            stack.push((x, h - 1));
        }
        for y in 0..h {
            stack.push((0, y));
            stack.push((w - 1, y));
        }
        while let Some((x, y)) = stack.pop() {
            let i = y * w + x;
            if self.bits[i] || outside[i] {
                continue;
            }
            outside[i] = true;
            if x > 0 {
                stack.push((x - 1, y));
            }
            if x + 1 < w {
                stack.push((x + 1, y));
            }
            if y > 0 {
                stack.push((x, y - 1));
            }
            if y + 1 < h {
                stack.push((x, y + 1));
            }
        }
        Mask { width: w, height: h, bits: outside.into_iter().map(|o| !o).collect() }
    }

    /// Erosion by a Euclidean disk of `radius` pixels; the area beyond the
    /// raster counts as background.
    pub fn erode_disk(&self, radius: i64) -> Mask {
        let offsets: Vec<(i64, i64)> = (-radius..=radius)
            .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= radius * radius)
            .collect();
        Mask::from_fn(self.width, self.height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            self.get_i(x, y, false) && offsets.iter().all(|(dx, dy)| self.get_i(x + dx, y + dy, false))
        })
    }
}

const CROSS: [(i64, i64); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];

/// 8-connected labelling. Labels start at 1; `sizes[l - 1]` is the size of label `l`.
fn label_components(mask: &Mask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        let mut size = 0usize;
        labels[start] = label;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits[j] && labels[j] == 0 {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Otsu threshold: the level `t` maximizing between-class variance when
/// pixels `<= t` form the background.
pub fn otsu_level(img: &GrayImage) -> u8 {
    let hist = histogram(img);
    let total = img.as_raw().len() as f64;
    let total_sum: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();
    let mut background_weight = 0.0;
    let mut background_sum = 0.0;
    let mut best = (0.0f64, 0u8);
    for (t, &count) in hist.iter().enumerate() {
        background_weight += count as f64;
        if background_weight == 0.0 {
            continue;
        }
        let foreground_weight = total - background_weight;
        if foreground_weight == 0.0 {
            break;
        }
        background_sum += t as f64 * count as f64;
        let mean_b = background_sum / background_weight;
        let mean_f = (total_sum - background_sum) / foreground_weight;
        let between = background_weight * foreground_weight * (mean_b - mean_f).powi(2);
        if between > best.0 {
            best = (between, t as u8);
        }
    }
    best.1
}

/// Pixels strictly brighter than the Otsu level.
pub fn otsu_foreground(img: &GrayImage) -> Mask {
    let t = otsu_level(img);
    Mask::from_fn(img.width(), img.height(), |x, y| img.get(x, y) > t)
}

/// Otsu foreground reduced to its largest component, closed with the 3x3
/// cross (two iterations) and hole-filled: the outline of the head.
pub fn head_mask(img: &GrayImage) -> Mask {
    otsu_foreground(img).largest_component().close_cross(2).fill_holes()
}
