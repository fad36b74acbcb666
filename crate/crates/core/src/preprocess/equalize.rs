use crate::imagekit::GrayImage;

/// 256-bin intensity histogram.
pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in img.as_raw() {
        hist[v as usize] += 1;
    }
    hist
}

/// Global histogram equalization over [0, 255].
///
/// Uses the classic `round((cdf(v) - cdf_min) / (N - cdf_min) * 255)` mapping,
/// which is monotone non-decreasing in `v`. A single-valued image has no
/// spread to redistribute and is returned unchanged.
pub fn equalize(img: &GrayImage) -> GrayImage {
    let lut = equalization_lut(&histogram(img));
    img.map(|v| lut[v as usize])
}

pub(crate) fn equalization_lut(hist: &[u64; 256]) -> [u8; 256] {
    let total: u64 = hist.iter().sum();
    let cdf_min = hist.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let mut lut = [0u8; 256];
    if total == cdf_min {
        for (v, slot) in lut.iter_mut().enumerate() {
            *slot = v as u8;
        }
        return lut;
    }
    let denom = (total - cdf_min) as f64;
    let mut cdf = 0u64;
    for (v, &count) in hist.iter().enumerate() {
        cdf += count;
        let scaled = (cdf.saturating_sub(cdf_min)) as f64 / denom * 255.0;
        lut[v] = scaled.round().clamp(0.0, 255.0) as u8;
    }
    lut
}
