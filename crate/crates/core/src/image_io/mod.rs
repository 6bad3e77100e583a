//! Grayscale rasters, PGM I/O, geometric transforms and the three-channel
//! network input.

mod channels;
mod pgm;
mod transform;

pub use channels::{
    build_channel_stack, downsample_2x2, edge_maps, normalize_plane, prepare_window, raw_channels, yuv_planes,
    ChannelStack, CROP_H, CROP_W, STACK_H, STACK_W,
};
pub use pgm::{load_pgm, read_pgm, save_pgm, write_pgm, PgmEncoding};
pub use transform::{resize_bilinear, rotate90_cw, rotate_about_center, sobel_magnitude};

use crate::error::{Error, Result};

/// Single-channel raster with row-major `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::arg(format!("data length {} does not match {height}x{width}", data.len())));
        }
        Ok(GrayImage { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    /// Sample with coordinates clamped to the image (border replication).
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.get(r, c)
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::arg(format!(
                "crop {height}x{width} at ({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Self::from_fn(height, width, |r, c| self.get(row + r, col + c))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| self.get(c, r)).expect("non-empty")
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.height, self.width), (other.height, other.width));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}
