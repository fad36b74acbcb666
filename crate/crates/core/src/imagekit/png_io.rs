use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::{GrayImage, ImageError};

/// Loads a PNG as an 8-bit grayscale raster.
///
/// Color inputs are reduced to BT.601 luma (`0.299 R + 0.587 G + 0.114 B`,
/// rounded half up). 16-bit samples are first rescaled with `v * 255 / 65535`
/// rounded to nearest. Alpha is ignored.
pub fn load_png(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ImageError::MissingFile(path.to_path_buf()),
        _ => ImageError::IoFailure { path: path.to_path_buf(), source: e },
    })?;
    let malformed = |reason: String| ImageError::MalformedPng { path: path.to_path_buf(), reason };

    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| malformed(e.to_string()))?;

    let header_depth = reader.info().bit_depth;
    let header_color = reader.info().color_type;
    let accepted = match (header_color, header_depth) {
        (_, BitDepth::Eight | BitDepth::Sixteen) => true,
        // Palette indices of any depth expand to 8-bit RGB.
        (ColorType::Indexed, _) => true,
        _ => false,
    };
    if !accepted {
        return Err(ImageError::UnsupportedBitDepth { path: path.to_path_buf(), depth: header_depth as u8 });
    }

    let size = reader.output_buffer_size().ok_or_else(|| malformed("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| malformed(e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(malformed("palette was not expanded".into())),
    };
    let wide = info.bit_depth == BitDepth::Sixteen;
    let bytes_per_sample = if wide { 2 } else { 1 };
    let line = info.line_size;

    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = &buf[y * line..y * line + width * channels * bytes_per_sample];
        for x in 0..width {
            let sample = |c: usize| -> u32 {
                let at = (x * channels + c) * bytes_per_sample;
                if wide {
                    let v = u16::from_be_bytes([row[at], row[at + 1]]) as u32;
                    rescale_16(v)
                } else {
                    row[at] as u32
                }
            };
            let value = if channels >= 3 { bt601_luma(sample(0), sample(1), sample(2)) } else { sample(0) as u8 };
            data.push(value);
        }
    }
    GrayImage::new(width, height, data).map_err(|e| malformed(e.to_string()))
}

/// Writes an 8-bit grayscale PNG. Round-trips bit-exactly through [`load_png`].
pub fn save_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let io_err = |source: std::io::Error| ImageError::IoFailure { path: path.to_path_buf(), source };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    encoder.set_color(ColorType::Grayscale);
    encoder.set_depth(BitDepth::Eight);
    let encode_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(source) => io_err(source),
        other => io_err(std::io::Error::other(other.to_string())),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(img.as_raw()).map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;
    Ok(())
}

#[inline]
fn rescale_16(v: u32) -> u32 {
    (v * 255 + 65535 / 2) / 65535
}

/// Integer BT.601 luma, rounded half up.
#[inline]
pub(crate) fn bt601_luma(r: u32, g: u32, b: u32) -> u8 {
    ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_png(path: &Path, w: u32, h: u32, color: ColorType, depth: BitDepth, data: &[u8]) {
        let file = fs::File::create(path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().unwrap();
        writer.write_image_data(data).unwrap();
    }

    #[test]
    fn gray_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        write_png(&p, 2, 2, ColorType::Grayscale, BitDepth::Eight, &[128; 4]);
        let img = load_png(&p).unwrap();
        assert_eq!(img, GrayImage::new(2, 2, vec![128; 4]).unwrap());
    }

    #[test]
    fn rgb_red_uses_bt601() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        write_png(&p, 1, 1, ColorType::Rgb, BitDepth::Eight, &[255, 0, 0]);
        // 0.299 * 255 = 76.245
        assert_eq!(load_png(&p).unwrap().get(0, 0), 76);
        let p = dir.path().join("rgba.png");
        write_png(&p, 1, 1, ColorType::Rgba, BitDepth::Eight, &[0, 255, 0, 10]);
        // 0.587 * 255 = 149.685
        assert_eq!(load_png(&p).unwrap().get(0, 0), 150);
    }

    #[test]
    fn sixteen_bit_is_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g16.png");
        let values: [u16; 3] = [0, 65535, 32896];
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
        write_png(&p, 3, 1, ColorType::Grayscale, BitDepth::Sixteen, &bytes);
        let img = load_png(&p).unwrap();
        // 32896 * 255 / 65535 = 128.0
        assert_eq!(img.as_raw(), &[0, 255, 128]);
    }

    #[test]
    fn low_bit_depth_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g1.png");
        write_png(&p, 8, 1, ColorType::Grayscale, BitDepth::One, &[0b1010_1010]);
        assert!(matches!(load_png(&p), Err(ImageError::UnsupportedBitDepth { depth: 1, .. })));
    }

    #[test]
    fn missing_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_png(dir.path().join("nope.png")), Err(ImageError::MissingFile(_))));
        let p = dir.path().join("junk.png");
        fs::write(&p, b"definitely not a png").unwrap();
        assert!(matches!(load_png(&p), Err(ImageError::MalformedPng { .. })));
    }

    #[test]
    fn save_single_black_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.png");
        save_png(&GrayImage::filled(1, 1, 0), &p).unwrap();
        assert_eq!(load_png(&p).unwrap().as_raw(), &[0]);
    }

    #[test]
    fn save_into_missing_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("no/such/dir/x.png");
        assert!(matches!(save_png(&GrayImage::filled(1, 1, 0), p), Err(ImageError::IoFailure { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn png_round_trip_is_lossless(w in 1usize..24, h in 1usize..24, seed in any::<u64>()) {
            let mut state = seed;
            let img = GrayImage::from_fn(w, h, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 56) as u8
            });
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rt.png");
            save_png(&img, &p).unwrap();
            prop_assert_eq!(load_png(&p).unwrap(), img);
        }
    }
}
