use crate::imagekit::GrayImage;

use super::mask::{head_mask, Mask};
use super::PreprocessError;

/// Width of the rim removed from the head outline, in pixels.
pub const SKULL_MARGIN_PX: i64 = 4;

/// Removes non-brain tissue.
///
/// Otsu foreground, largest 8-connected component, closing with the 3x3
/// cross (two iterations), hole filling, then erosion by a disk of
/// [`SKULL_MARGIN_PX`] to strip the skull rim. If the erosion splits the
/// mask only the largest piece is kept. Pixels outside the mask are set to 0.
pub fn skull_extract(img: &GrayImage) -> Result<(GrayImage, Mask), PreprocessError> {
    let head = head_mask(img);
    if head.is_empty() {
        return Err(PreprocessError::EmptyForeground);
    }
    let brain = head.erode_disk(SKULL_MARGIN_PX).largest_component();
    if brain.is_empty() {
        return Err(PreprocessError::EmptyForeground);
    }
    let out = GrayImage::from_fn(img.width(), img.height(), |x, y| if brain.get(x, y) { img.get(x, y) } else { 0 });
    Ok((out, brain))
}
