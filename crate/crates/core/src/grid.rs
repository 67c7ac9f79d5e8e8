//! Dense 2-D fields: core images, heatmaps, masks, score maps and network
//! activations all share this type.
//!
//! Origin is the top-left pixel. Storage is channel-planar and row-major
//! within a plane, so `values[c * h * w + row * w + col]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(channels >= 1, "a grid needs at least one channel");
        Self {
            height,
            width,
            channels,
            values: vec![value; height * width * channels],
        }
    }

    /// Builds a grid from planar values.
    pub fn from_planar(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::shape("channels >= 1", 0));
        }
        let n = height * width * channels;
        if values.len() != n {
            return Err(Error::shape(n, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite grid value {v}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.shape() == other.shape()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        let i = self.index(row, col, channel);
        self.values[i] = value;
    }

    #[inline]
    fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        debug_assert!(row < self.height && col < self.width && channel < self.channels);
        channel * self.height * self.width + row * self.width + col
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.plane_len();
        &self.values[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.values[channel * n..(channel + 1) * n]
    }

    /// Copies one channel out as a single-channel grid.
    pub fn channel(&self, channel: usize) -> ImageGrid {
        ImageGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            values: self.plane(channel).to_vec(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// True when every value is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn in_unit_range(&self) -> bool {
        self.values.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    /// `d x d` max pooling with partial windows at the right/bottom edges.
    pub fn max_pool(&self, d: usize) -> ImageGrid {
        assert!(d >= 1);
        let oh = self.height.div_ceil(d);
        let ow = self.width.div_ceil(d);
        let mut out = ImageGrid::filled(oh, ow, self.channels, f64::NEG_INFINITY);
        for c in 0..self.channels {
            for r in 0..self.height {
                for col in 0..self.width {
                    let v = self.get(r, col, c);
                    let i = out.index(r / d, col / d, c);
                    if v > out.values[i] {
                        out.values[i] = v;
                    }
                }
            }
        }
        out
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upscale(&self, d: usize) -> ImageGrid {
        let mut out = ImageGrid::zeros(self.height * d, self.width * d, self.channels);
        for c in 0..self.channels {
            for r in 0..out.height {
                for col in 0..out.width {
                    let v = self.get(r / d, col / d, c);
                    out.set(r, col, c, v);
                }
            }
        }
        out
    }

    /// Pixel-wise product with a single-channel grid of the same spatial size.
    pub fn masked(&self, mask: &ImageGrid) -> Result<ImageGrid> {
        if mask.channels != 1 || mask.height != self.height || mask.width != self.width {
            return Err(Error::shape(
                format!("{}x{}x1", self.height, self.width),
                format!("{}x{}x{}", mask.height, mask.width, mask.channels),
            ));
        }
        let mut out = self.clone();
        for c in 0..self.channels {
            for (v, m) in out.plane_mut(c).iter_mut().zip(mask.values.iter()) {
                *v *= m;
            }
        }
        Ok(out)
    }
}
