//! Grayscale raster container with a validity mask.
//!
//! Intensities live in `[0, 1]` as f64 (8-bit sources are divided by 255 on
//! load). The validity mask marks pixels that carry real content; warping and
//! downscaling propagate invalidity conservatively.

use crate::geometry::{GeometryError, PlanarTransform};

/// Row-major grayscale image, pixel centers at integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: u32,
    height: u32,
    pixels: Vec<f64>,
    valid: Vec<bool>,
    /// Ground sample distance in meters per pixel, when known.
    gsd: Option<f64>,
}

impl Image2D {
    /// Builds an image from row-major intensities, all pixels valid.
    ///
    /// # Panics
    /// Panics when the buffer length does not match `width * height`.
    pub fn new(width: u32, height: u32, pixels: Vec<f64>) -> Self {
        assert_eq!(
            pixels.len(),
            width as usize * height as usize,
            "pixel buffer length must be width * height"
        );
        let valid = vec![true; pixels.len()];
        Self {
            width,
            height,
            pixels,
            valid,
            gsd: None,
        }
    }

    /// Builds an image with an explicit validity mask.
    ///
    /// # Panics
    /// Panics when buffer lengths do not match `width * height`.
    pub fn with_mask(width: u32, height: u32, pixels: Vec<f64>, valid: Vec<bool>) -> Self {
        assert_eq!(pixels.len(), width as usize * height as usize);
        assert_eq!(valid.len(), pixels.len());
        Self {
            width,
            height,
            pixels,
            valid,
            gsd: None,
        }
    }

    /// Constant-valued image, all pixels valid.
    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    /// 8-bit grayscale input scaled into `[0, 1]`.
    pub fn from_gray_u8(width: u32, height: u32, bytes: &[u8]) -> Self {
        let pixels = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Self::new(width, height, pixels)
    }

    /// Quantizes back to 8 bits (rounding, clamped).
    pub fn to_gray_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn gsd(&self) -> Option<f64> {
        self.gsd
    }

    pub fn set_gsd(&mut self, gsd: Option<f64>) {
        self.gsd = gsd;
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn validity_mut(&mut self) -> &mut [bool] {
        &mut self.valid
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.pixels[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        let i = self.index(x, y);
        self.pixels[i] = value;
    }

    #[inline]
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[self.index(x, y)]
    }

    pub fn set_valid(&mut self, x: u32, y: u32, v: bool) {
        let i = self.index(x, y);
        self.valid[i] = v;
    }

    /// Bilinear intensity at a real-valued position. None outside the image
    /// or when any of the four supporting pixels is invalid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 {
            return None;
        }
        let (wf, hf) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if x > wf || y > hf {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width as usize - 1);
        let y0 = (y.floor() as usize).min(self.height as usize - 1);
        let x1 = (x0 + 1).min(self.width as usize - 1);
        let y1 = (y0 + 1).min(self.height as usize - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let w = self.width as usize;
        let idx = [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1];
        if idx.iter().any(|&i| !self.valid[i]) {
            return None;
        }
        let top = self.pixels[idx[0]] * (1.0 - fx) + self.pixels[idx[1]] * fx;
        let bottom = self.pixels[idx[2]] * (1.0 - fx) + self.pixels[idx[3]] * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// Warps the image through a planar transform: each output pixel samples
    /// the input at the transform's inverse mapping. Outputs falling outside
    /// the input (or on invalid input pixels) are marked invalid.
    ///
    /// `out_size` must equal the transform's target size.
    pub fn apply_transform(
        &self,
        transform: &PlanarTransform,
        out_size: (u32, u32),
    ) -> Result<Image2D, GeometryError> {
        if out_size != transform.target_size() {
            return Err(GeometryError::SizeMismatch {
                expected: transform.target_size(),
                got: out_size,
            });
        }
        if transform.source_size() != self.size() {
            return Err(GeometryError::SizeMismatch {
                expected: transform.source_size(),
                got: self.size(),
            });
        }
        let unmap = transform.unmap_fn()?;
        let (ow, oh) = out_size;
        let n = ow as usize * oh as usize;
        let mut pixels = vec![0.0; n];
        let mut valid = vec![false; n];
        for y in 0..oh {
            for x in 0..ow {
                let i = y as usize * ow as usize + x as usize;
                if let Some((sx, sy)) = unmap(x as f64, y as f64) {
                    if let Some(v) = self.sample_bilinear(sx, sy) {
                        pixels[i] = v;
                        valid[i] = true;
                    }
                }
            }
        }
        let mut out = Image2D::with_mask(ow, oh, pixels, valid);
        out.gsd = self.gsd;
        Ok(out)
    }

    /// Separable Gaussian smoothing with a kernel radius of `3 * sigma`.
    ///
    /// Weights renormalize over the pixels actually present, so image borders
    /// and invalid regions do not darken: the filter computes
    /// `G∗(p·m) / G∗m` with `m` the validity mask. The mask itself is
    /// preserved — invalid pixels keep their stored value and stay invalid,
    /// and they contribute nothing to their neighbours. A non-positive
    /// `sigma` returns the image unchanged.
    pub fn smooth(&self, sigma: f64) -> Image2D {
        if !(sigma > 0.0) {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil().max(1.0) as i64;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
            .collect();
        let (w, h) = (self.width as i64, self.height as i64);
        let at = |x: i64, y: i64| (y * w + x) as usize;

        // Horizontal then vertical pass over the masked numerator and the
        // mask itself; the final division renormalizes per pixel.
        let mut num = vec![0.0; self.pixels.len()];
        let mut den = vec![0.0; self.pixels.len()];
        for y in 0..h {
            for x in 0..w {
                let (mut n, mut d) = (0.0, 0.0);
                for (k, weight) in kernel.iter().enumerate() {
                    let sx = x + k as i64 - radius;
                    if sx < 0 || sx >= w {
                        continue;
                    }
                    let si = at(sx, y);
                    if self.valid[si] {
                        n += weight * self.pixels[si];
                        d += weight;
                    }
                }
                num[at(x, y)] = n;
                den[at(x, y)] = d;
            }
        }
        let mut pixels = self.pixels.clone();
        for x in 0..w {
            for y in 0..h {
                let i = at(x, y);
                if !self.valid[i] {
                    continue;
                }
                let (mut n, mut d) = (0.0, 0.0);
                for (k, weight) in kernel.iter().enumerate() {
                    let sy = y + k as i64 - radius;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let si = at(x, sy);
                    n += weight * num[si];
                    d += weight * den[si];
                }
                if d > 0.0 {
                    pixels[i] = n / d;
                }
            }
        }
        let mut out = Image2D::with_mask(self.width, self.height, pixels, self.valid.clone());
        out.gsd = self.gsd;
        out
    }

    /// Box-average downscale by an integer factor that divides both
    /// dimensions. An output pixel is valid only when all covered input
    /// pixels are valid.
    pub fn downscale(&self, factor: u32) -> Result<Image2D, GeometryError> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(GeometryError::SizeMismatch {
                expected: (self.width, self.height),
                got: (factor, factor),
            });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let ow = self.width / factor;
        let oh = self.height / factor;
        let n = ow as usize * oh as usize;
        let mut pixels = vec![0.0; n];
        let mut valid = vec![true; n];
        let area = (factor * factor) as f64;
        for y in 0..oh {
            for x in 0..ow {
                let mut sum = 0.0;
                let mut ok = true;
                for dy in 0..factor {
                    for dx in 0..factor {
                        let sx = x * factor + dx;
                        let sy = y * factor + dy;
                        let si = self.index(sx, sy);
                        sum += self.pixels[si];
                        ok &= self.valid[si];
                    }
                }
                let i = y as usize * ow as usize + x as usize;
                pixels[i] = sum / area;
                valid[i] = ok;
            }
        }
        let mut out = Image2D::with_mask(ow, oh, pixels, valid);
        out.gsd = self.gsd.map(|g| g * factor as f64);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    fn ramp(width: u32, height: u32) -> Image2D {
        let mut px = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                px.push((x + y * width) as f64 / (width * height) as f64);
            }
        }
        Image2D::new(width, height, px)
    }

    #[test]
    fn bilinear_interpolates_linearly() {
        // A plane a + b x + c y is reproduced exactly by bilinear sampling.
        let (w, h) = (16, 12);
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                px.push(0.1 + 0.02 * x as f64 + 0.03 * y as f64);
            }
        }
        let img = Image2D::new(w, h, px);
        for &(x, y) in &[(0.0, 0.0), (3.25, 7.5), (14.9, 10.1)] {
            let got = img.sample_bilinear(x, y).unwrap();
            assert_relative_eq!(got, 0.1 + 0.02 * x + 0.03 * y, epsilon = 1e-12);
        }
        assert!(img.sample_bilinear(-0.1, 0.0).is_none());
        assert!(img.sample_bilinear(15.01, 0.0).is_none());
    }

    #[test]
    fn invalid_pixels_poison_sampling() {
        let mut img = ramp(8, 8);
        img.set_valid(3, 3, false);
        assert!(img.sample_bilinear(3.0, 3.0).is_none());
        assert!(img.sample_bilinear(2.5, 2.5).is_none());
        assert!(img.sample_bilinear(4.5, 4.5).is_some());
    }

    #[test]
    fn integer_translation_shifts_and_invalidates_strip() {
        let img = ramp(10, 6);
        let m = Matrix3::new(1.0, 0.0, 3.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let t = PlanarTransform::homography(m, (10, 6), (10, 6)).unwrap();
        let out = img.apply_transform(&t, (10, 6)).unwrap();
        // Left 3 columns have no preimage.
        for y in 0..6 {
            for x in 0..3 {
                assert!(!out.is_valid(x, y));
            }
            for x in 3..10 {
                assert!(out.is_valid(x, y));
                assert_relative_eq!(out.get(x, y), img.get(x - 3, y), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn warp_round_trip_stays_close_on_smooth_content() {
        // Band-limited content: a low-frequency sinusoid.
        let (w, h) = (64, 64);
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = 0.5
                    + 0.25 * (x as f64 * 0.15).sin() * (y as f64 * 0.12).cos()
                    + 0.1 * (y as f64 * 0.09).sin();
                px.push(v);
            }
        }
        let img = Image2D::new(w as u32, h as u32, px);
        let m = Matrix3::new(0.97, -0.05, 2.0, 0.05, 0.97, -1.5, 0.0, 0.0, 1.0);
        let t = PlanarTransform::homography(m, (64, 64), (64, 64)).unwrap();
        let warped = img.apply_transform(&t, (64, 64)).unwrap();
        let back = warped.apply_transform(&t.invert().unwrap(), (64, 64)).unwrap();
        let mut worst: f64 = 0.0;
        for y in 8..56 {
            for x in 8..56 {
                if back.is_valid(x, y) {
                    worst = worst.max((back.get(x, y) - img.get(x, y)).abs());
                }
            }
        }
        assert!(
            worst <= 2.0 / 255.0,
            "round trip error {worst} above 2/255 threshold"
        );
    }

    #[test]
    fn downscale_box_averages_and_scales_gsd() {
        let mut img = ramp(8, 8);
        img.set_gsd(Some(0.5));
        let half = img.downscale(2).unwrap();
        assert_eq!(half.size(), (4, 4));
        let expected = (img.get(0, 0) + img.get(1, 0) + img.get(0, 1) + img.get(1, 1)) / 4.0;
        assert_relative_eq!(half.get(0, 0), expected, epsilon = 1e-12);
        assert_relative_eq!(half.gsd().unwrap(), 1.0, epsilon = 1e-12);
        // Invalid input pixel invalidates its covering output pixel.
        let mut img2 = ramp(8, 8);
        img2.set_valid(5, 1, false);
        let half2 = img2.downscale(2).unwrap();
        assert!(!half2.is_valid(2, 0));
        assert!(half2.is_valid(0, 0));
    }

    #[test]
    fn smoothing_preserves_constants_and_mask() {
        // Renormalized weights reproduce a constant exactly, borders included.
        let mut img = Image2D::filled(9, 7, 0.37);
        img.set_valid(4, 3, false);
        img.set(4, 3, 123.0);
        let out = img.smooth(1.2);
        for y in 0..7 {
            for x in 0..9 {
                if (x, y) == (4, 3) {
                    // Invalid pixels pass through untouched.
                    assert!(!out.is_valid(x, y));
                    assert_relative_eq!(out.get(x, y), 123.0);
                } else {
                    assert!(out.is_valid(x, y));
                    assert_relative_eq!(out.get(x, y), 0.37, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn smoothing_is_symmetric_and_contracts_noise() {
        // An impulse spreads symmetrically.
        let mut img = Image2D::filled(11, 11, 0.0);
        img.set(5, 5, 1.0);
        let out = img.smooth(1.0);
        for (dx, dy) in [(1i64, 0i64), (0, 1), (2, 1), (3, 2)] {
            let a = out.get((5 + dx) as u32, (5 + dy) as u32);
            let b = out.get((5 - dx) as u32, (5 - dy) as u32);
            let c = out.get((5 + dy) as u32, (5 + dx) as u32);
            assert_relative_eq!(a, b, epsilon = 1e-12);
            assert_relative_eq!(a, c, epsilon = 1e-12);
        }
        assert!(out.get(5, 5) < 1.0 && out.get(5, 5) > out.get(6, 5));
        // Zero sigma is the identity.
        assert_eq!(img.smooth(0.0), img);
        // Alternating checkerboard noise collapses toward its mean.
        let mut noisy = Vec::new();
        for y in 0..16u32 {
            for x in 0..16u32 {
                noisy.push(if (x + y) % 2 == 0 { 1.0 } else { 0.0 });
            }
        }
        let rough = Image2D::new(16, 16, noisy);
        let calm = rough.smooth(1.0);
        // Away from the border (where truncated kernels attenuate less), the
        // alternating component all but vanishes.
        let dev = |img: &Image2D| {
            let mut worst = 0.0f64;
            for y in 3..13 {
                for x in 3..13 {
                    worst = worst.max((img.get(x, y) - 0.5).abs());
                }
            }
            worst
        };
        assert!(dev(&calm) < 0.05 * dev(&rough));
    }

    #[test]
    fn u8_round_trip() {
        let bytes: Vec<u8> = (0..=255).collect();
        let img = Image2D::from_gray_u8(16, 16, &bytes);
        assert_eq!(img.to_gray_u8(), bytes);
    }
}
