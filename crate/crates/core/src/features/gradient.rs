use crate::imagekit::GrayImage;

/// Sobel derivatives. Entries within 1 px of the border are 0.
pub(crate) struct Gradients {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f32>,
    pub gy: Vec<f32>,
}

impl Gradients {
    pub fn sobel(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let mut gx = vec![0f32; w * h];
        let mut gy = vec![0f32; w * h];
        let p = img.as_raw();
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let at = |dx: isize, dy: isize| p[(y as isize + dy) as usize * w + (x as isize + dx) as usize] as i32;
                let sx = (at(1, -1) + 2 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2 * at(-1, 0) + at(-1, 1));
                let sy = (at(-1, 1) + 2 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2 * at(0, -1) + at(1, -1));
                gx[y * w + x] = sx as f32;
                gy[y * w + x] = sy as f32;
            }
        }
        Self { width: w, height: h, gx, gy }
    }

    /// Bilinear sample of both components. Caller keeps `(x, y)` inside
    /// `[0, width - 1] x [0, height - 1]`.
    #[inline]
    pub fn sample(&self, x: f32, y: f32) -> (f32, f32) {
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let lerp = |v: &[f32]| {
            let top = v[y0 * self.width + x0] * (1.0 - fx) + v[y0 * self.width + x1] * fx;
            let bottom = v[y1 * self.width + x0] * (1.0 - fx) + v[y1 * self.width + x1] * fx;
            top * (1.0 - fy) + bottom * fy
        };
        (lerp(&self.gx), lerp(&self.gy))
    }
}
