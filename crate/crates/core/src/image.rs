//! Real-valued 2D rasters.

use crate::error::{Result, StvError};

/// A row-major raster of finite `f64` intensities.
///
/// Pixel `(x, y)` lives at `values[y * width + x]`. Construction rejects empty
/// shapes and non-finite samples, so every `GrayImage` in circulation is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(StvError::InvalidImage(format!(
                "shape {width}x{height} has no pixels"
            )));
        }
        if values.len() != width * height {
            return Err(StvError::dims(
                format!("{} values for {width}x{height}", width * height),
                format!("{} values", values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(StvError::InvalidImage(format!(
                "non-finite value at pixel ({}, {})",
                i % width,
                i / width
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Internal constructor for buffers that are finite by construction.
    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::constant(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    /// A single-row image holding a 1D signal.
    pub fn from_signal(signal: &[f64]) -> Result<Self> {
        Self::new(signal.len(), 1, signal.to_vec())
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn same_shape(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_shape(&self, other: &GrayImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(StvError::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }

    /// Left-to-right sum; the fixed order keeps results reproducible.
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Euclidean inner product. Panics if the shapes differ.
    pub fn dot(&self, other: &GrayImage) -> f64 {
        assert!(self.same_shape(other), "dot of mismatched images");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn max_abs_diff(&self, other: &GrayImage) -> f64 {
        assert!(self.same_shape(other), "difference of mismatched images");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest deviation from the image mean; zero for constant images.
    pub fn oscillation(&self) -> f64 {
        self.max_value() - self.min_value()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scaled(&self, factor: f64) -> GrayImage {
        self.map(|v| v * factor)
    }

    /// Mirror across the vertical axis: `(x, y) -> (w-1-x, y)`.
    pub fn flip_horizontal(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        let mut out = Vec::with_capacity(self.len());
        for y in 0..h {
            for x in 0..w {
                out.push(self.values[y * w + (w - 1 - x)]);
            }
        }
        GrayImage::from_raw(w, h, out)
    }

    /// Mirror across the horizontal axis: `(x, y) -> (x, h-1-y)`.
    pub fn flip_vertical(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        let mut out = Vec::with_capacity(self.len());
        for y in 0..h {
            out.extend_from_slice(&self.values[(h - 1 - y) * w..(h - y) * w]);
        }
        GrayImage::from_raw(w, h, out)
    }

    pub fn transpose(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        let mut out = Vec::with_capacity(self.len());
        for x in 0..w {
            for y in 0..h {
                out.push(self.values[y * w + x]);
            }
        }
        GrayImage::from_raw(h, w, out)
    }

    /// Quarter turn counter-clockwise (in display orientation, y pointing down).
    pub fn rot90(&self) -> GrayImage {
        self.transpose().flip_vertical()
    }

    /// Shift content by `(dx, dy)` pixels; vacated pixels take `fill`.
    pub fn translate(&self, dx: isize, dy: isize, fill: f64) -> GrayImage {
        let (w, h) = (self.width as isize, self.height as isize);
        let mut out = vec![fill; self.len()];
        for y in 0..h {
            let sy = y - dy;
            if sy < 0 || sy >= h {
                continue;
            }
            for x in 0..w {
                let sx = x - dx;
                if sx < 0 || sx >= w {
                    continue;
                }
                out[(y * w + x) as usize] = self.values[(sy * w + sx) as usize];
            }
        }
        GrayImage::from_raw(self.width, self.height, out)
    }

    /// Cyclic shift by `(dx, dy)` pixels.
    pub fn roll(&self, dx: isize, dy: isize) -> GrayImage {
        let (w, h) = (self.width as isize, self.height as isize);
        let mut out = vec![0.0; self.len()];
        for y in 0..h {
            let ty = (y + dy).rem_euclid(h);
            for x in 0..w {
                let tx = (x + dx).rem_euclid(w);
                out[(ty * w + tx) as usize] = self.values[(y * w + x) as usize];
            }
        }
        GrayImage::from_raw(self.width, self.height, out)
    }

    /// Nearest-neighbour upsampling: every pixel becomes a `factor x factor` block.
    pub fn replicate(&self, factor: usize) -> GrayImage {
        assert!(factor >= 1);
        let (w, h) = (self.width * factor, self.height * factor);
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                out.push(self.get(x / factor, y / factor));
            }
        }
        GrayImage::from_raw(w, h, out)
    }

    /// Block-mean downsampling; dimensions must be multiples of `factor`.
    pub fn block_mean(&self, factor: usize) -> Result<GrayImage> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(StvError::InvalidConfig(format!(
                "block size {factor} does not tile {}x{}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let area = (factor * factor) as f64;
        let mut out = Vec::with_capacity(w * h);
        for by in 0..h {
            for bx in 0..w {
                let mut acc = 0.0;
                for y in by * factor..(by + 1) * factor {
                    for x in bx * factor..(bx + 1) * factor {
                        acc += self.get(x, y);
                    }
                }
                out.push(acc / area);
            }
        }
        Ok(GrayImage::from_raw(w, h, out))
    }

}
