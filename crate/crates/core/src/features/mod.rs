//! Feature extraction: radiometric normalization, unit-normalized patch
//! descriptors, and geometry-aware extraction through alignment transforms.
//!
//! The built-in descriptor at a pixel is its `(2r+1)^2` neighborhood,
//! mean-subtracted and L2-normalized, so the cosine of two descriptors equals
//! the normalized cross-correlation of the raw patches.
//!
//! Geometry-aware extraction computes features in an aligned image space and
//! warps them back to the native space:
//!
//! ```text
//! F(I) = T^-1 [ E( T(I) ) ]
//! ```
//!
//! where `T` is the prior's alignment transform for the given side (including
//! its quarter-turn rotation) and `E` the per-pixel extractor. Unit-length
//! vectors are re-normalized after interpolation.

use thiserror::Error;

use crate::geometry::{GeometryError, GeometryPrior, PlanarTransform, PriorSide};
use crate::image::Image2D;

/// Unit norm tolerance for normalized feature vectors.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Variances below this count as "no texture".
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("no images or no valid pixels in input")]
    EmptyInput,
    #[error("radiometric variance below {VARIANCE_FLOOR:e}; cannot normalize")]
    ZeroVariance,
    #[error("patch radius {radius} leaves no interior in a {width}x{height} image")]
    InvalidRadius {
        radius: usize,
        width: u32,
        height: u32,
    },
    #[error("feature map size {got:?} does not match expected {expected:?}")]
    SizeMismatch {
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Dense per-pixel feature vectors, channel-interleaved row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: u32,
    height: u32,
    channels: u32,
    values: Vec<f64>,
    valid: Vec<bool>,
    unit_normalized: bool,
}

impl FeatureMap {
    pub fn new(
        width: u32,
        height: u32,
        channels: u32,
        values: Vec<f64>,
        valid: Vec<bool>,
        unit_normalized: bool,
    ) -> Self {
        assert_eq!(
            values.len(),
            width as usize * height as usize * channels as usize
        );
        assert_eq!(valid.len(), width as usize * height as usize);
        Self {
            width,
            height,
            channels,
            values,
            valid,
            unit_normalized,
        }
    }

    /// All-invalid map of the given shape.
    pub fn invalid(width: u32, height: u32, channels: u32, unit_normalized: bool) -> Self {
        Self::new(
            width,
            height,
            channels,
            vec![0.0; width as usize * height as usize * channels as usize],
            vec![false; width as usize * height as usize],
            unit_normalized,
        )
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

    /// Pixel count.
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn unit_normalized(&self) -> bool {
        self.unit_normalized
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn pixel_index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[self.pixel_index(x, y)]
    }

    /// Feature vector at an integer pixel.
    #[inline]
    pub fn vector_at(&self, x: u32, y: u32) -> &[f64] {
        let c = self.channels as usize;
        let base = self.pixel_index(x, y) * c;
        &self.values[base..base + c]
    }

    pub fn set_vector(&mut self, x: u32, y: u32, vector: &[f64], valid: bool) {
        let c = self.channels as usize;
        let i = self.pixel_index(x, y);
        self.values[i * c..i * c + c].copy_from_slice(vector);
        self.valid[i] = valid;
    }

    /// Bilinear sample of the feature vector at a real-valued position into
    /// `out`. Fails (returns false) outside the map or when any of the four
    /// supporting pixels is invalid; re-normalizes when the map is unit
    /// normalized (a norm collapse below tolerance also fails).
    pub fn sample_bilinear_into(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        debug_assert_eq!(out.len(), self.channels as usize);
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 {
            return false;
        }
        let (wf, hf) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if x > wf || y > hf {
            return false;
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
            return false;
        }
        let weights = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        let c = self.channels as usize;
        out.fill(0.0);
        for (&i, &wgt) in idx.iter().zip(&weights) {
            let base = i * c;
            for (o, v) in out.iter_mut().zip(&self.values[base..base + c]) {
                *o += wgt * v;
            }
        }
        if self.unit_normalized {
            let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < VARIANCE_FLOOR {
                return false;
            }
            for o in out.iter_mut() {
                *o /= norm;
            }
        }
        true
    }

    /// Warps the feature map through a planar transform (per-channel bilinear
    /// interpolation at the transform's inverse mapping), marking outputs
    /// invalid where the source is unavailable. Unit-length maps are
    /// re-normalized per pixel.
    pub fn apply_transform(
        &self,
        transform: &PlanarTransform,
        out_size: (u32, u32),
    ) -> Result<FeatureMap> {
        if out_size != transform.target_size() {
            return Err(GeometryError::SizeMismatch {
                expected: transform.target_size(),
                got: out_size,
            }
            .into());
        }
        if transform.source_size() != self.size() {
            return Err(GeometryError::SizeMismatch {
                expected: transform.source_size(),
                got: self.size(),
            }
            .into());
        }
        let unmap = transform.unmap_fn().map_err(FeatureError::from)?;
        let (ow, oh) = out_size;
        let c = self.channels as usize;
        let n = ow as usize * oh as usize;
        let mut values = vec![0.0; n * c];
        let mut valid = vec![false; n];
        let mut buf = vec![0.0; c];
        for y in 0..oh {
            for x in 0..ow {
                let i = y as usize * ow as usize + x as usize;
                if let Some((sx, sy)) = unmap(x as f64, y as f64) {
                    if self.sample_bilinear_into(sx, sy, &mut buf) {
                        values[i * c..i * c + c].copy_from_slice(&buf);
                        valid[i] = true;
                    }
                }
            }
        }
        Ok(FeatureMap::new(
            ow,
            oh,
            self.channels,
            values,
            valid,
            self.unit_normalized,
        ))
    }
}

/// Dataset-level radiometric statistics (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiometricStats {
    pub mean: f64,
    pub stddev: f64,
}

/// An image together with its radiometrically normalized values
/// (`(intensity - mean) / stddev`; invalid pixels hold 0).
#[derive(Debug, Clone)]
pub struct NormalizedImage {
    /// The untouched `[0, 1]` intensity image.
    pub image: Image2D,
    /// Z-scored intensities, same layout as the image.
    pub normalized: Vec<f64>,
}

/// Normalizes a set of images to zero mean, unit standard deviation.
///
/// When `stats` is None the mean and population stddev are computed over all
/// valid pixels of the whole set (statistics are per dataset, not per image);
/// pass the returned stats to normalize further imagery consistently.
pub fn normalize_radiometry(
    images: &[Image2D],
    stats: Option<RadiometricStats>,
) -> Result<(Vec<NormalizedImage>, RadiometricStats)> {
    if images.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    let stats = match stats {
        Some(s) => s,
        None => {
            let mut n = 0usize;
            let mut sum = 0.0;
            for img in images {
                for (&p, &v) in img.pixels().iter().zip(img.validity()) {
                    if v {
                        sum += p;
                        n += 1;
                    }
                }
            }
            if n == 0 {
                return Err(FeatureError::EmptyInput);
            }
            let mean = sum / n as f64;
            let mut ss = 0.0;
            for img in images {
                for (&p, &v) in img.pixels().iter().zip(img.validity()) {
                    if v {
                        ss += (p - mean) * (p - mean);
                    }
                }
            }
            let stddev = (ss / n as f64).sqrt();
            RadiometricStats { mean, stddev }
        }
    };
    if stats.stddev < VARIANCE_FLOOR {
        return Err(FeatureError::ZeroVariance);
    }
    let out = images
        .iter()
        .map(|img| {
            let normalized = img
                .pixels()
                .iter()
                .zip(img.validity())
                .map(|(&p, &v)| if v { (p - stats.mean) / stats.stddev } else { 0.0 })
                .collect();
            NormalizedImage {
                image: img.clone(),
                normalized,
            }
        })
        .collect();
    Ok((out, stats))
}

/// Extracts `(2r+1)^2`-dimensional patch descriptors at every pixel.
///
/// Each descriptor is the raw patch, mean-subtracted and L2-normalized
/// (vector entries ordered row-major within the patch). Pixels whose patch
/// leaves the image, touches an invalid pixel, or has zero variance get a
/// zero vector and an invalid flag.
pub fn extract_patch_descriptors(image: &Image2D, radius: usize) -> Result<FeatureMap> {
    let side = 2 * radius + 1;
    let (w, h) = (image.width() as usize, image.height() as usize);
    if side > w || side > h {
        return Err(FeatureError::InvalidRadius {
            radius,
            width: image.width(),
            height: image.height(),
        });
    }
    let channels = (side * side) as u32;
    let c = channels as usize;
    let mut values = vec![0.0; w * h * c];
    let mut valid = vec![false; w * h];
    let pixels = image.pixels();
    let mask = image.validity();
    let mut patch = vec![0.0; c];
    for y in radius..h - radius {
        for x in radius..w - radius {
            let mut ok = true;
            let mut k = 0;
            for dy in 0..side {
                let row = (y + dy - radius) * w + (x - radius);
                for dx in 0..side {
                    ok &= mask[row + dx];
                    patch[k] = pixels[row + dx];
                    k += 1;
                }
            }
            if !ok {
                continue;
            }
            let mean = patch.iter().sum::<f64>() / c as f64;
            let mut norm_sq = 0.0;
            for p in patch.iter_mut() {
                *p -= mean;
                norm_sq += *p * *p;
            }
            if norm_sq < VARIANCE_FLOOR {
                continue;
            }
            let inv_norm = norm_sq.sqrt().recip();
            let i = y * w + x;
            for (slot, &p) in values[i * c..i * c + c].iter_mut().zip(patch.iter()) {
                *slot = p * inv_norm;
            }
            valid[i] = true;
        }
    }
    Ok(FeatureMap::new(
        image.width(),
        image.height(),
        channels,
        values,
        valid,
        true,
    ))
}

/// Per-pixel feature source for [`geometry_aware_features`].
#[derive(Debug, Clone, Copy)]
pub enum FeatureExtractor<'a> {
    /// Built-in patch descriptor of the given radius.
    Builtin { radius: usize },
    /// Externally produced features of the *aligned* image (dimensions must
    /// match the aligned space).
    External(&'a FeatureMap),
}

/// Extracts features in the prior's aligned space and warps them back to the
/// native image space. With no prior the extractor runs natively.
pub fn geometry_aware_features(
    image: &Image2D,
    prior: Option<&GeometryPrior>,
    side: PriorSide,
    extractor: FeatureExtractor<'_>,
) -> Result<FeatureMap> {
    let transform = match prior {
        Some(p) => p.transform_for(side, image.size())?,
        None => PlanarTransform::identity(image.size()),
    };
    let aligned = image.apply_transform(&transform, transform.target_size())?;
    let aligned_features = match extractor {
        FeatureExtractor::Builtin { radius } => extract_patch_descriptors(&aligned, radius)?,
        FeatureExtractor::External(map) => {
            if map.size() != aligned.size() {
                return Err(FeatureError::SizeMismatch {
                    expected: aligned.size(),
                    got: map.size(),
                });
            }
            let mut map = map.clone();
            // Pixels the alignment could not cover carry no image content.
            for (mv, &iv) in map.valid.iter_mut().zip(aligned.validity()) {
                *mv &= iv;
            }
            map
        }
    };
    aligned_features.apply_transform(&transform.invert()?, image.size())
}
