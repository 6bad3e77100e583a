//! Three-channel network input built from an 84×28 grayscale crop.
//!
//! Channel layout (rows × cols):
//!
//! * channel 0: the Y plane at full 84×28 resolution;
//! * channel 1: Y, U, V downsampled to 42×14 and tiled into quadrants
//!   (top-left Y, top-right U, bottom-left V, bottom-right zero);
//! * channel 2: Sobel magnitude of the three 42×14 planes plus their
//!   per-pixel maximum, tiled in the same quadrant order.
//!
//! Grayscale sources map to Y = intensity, U = V = 0. Every channel is then
//! normalized to zero mean and unit variance; constant channels become zero.

use super::{resize_bilinear, rotate90_cw, rotate_about_center, sobel_magnitude, GrayImage};
use crate::error::{Error, Result};

pub const STACK_H: usize = 84;
pub const STACK_W: usize = 28;
/// Size of a training crop / detection window in the source images.
pub const CROP_H: usize = 40;
pub const CROP_W: usize = 100;

const HALF_H: usize = STACK_H / 2;
const HALF_W: usize = STACK_W / 2;
const PLANE: usize = STACK_H * STACK_W;
const VARIANCE_FLOOR: f64 = 1e-8;

/// Normalized 3×84×28 input, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    data: Vec<f32>,
}

impl ChannelStack {
    pub fn from_planes(planes: [&[f64]; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * PLANE);
        for p in planes {
            if p.len() != PLANE {
                return Err(Error::arg(format!("plane has {} samples, want {PLANE}", p.len())));
            }
            data.extend(p.iter().map(|&v| v as f32));
        }
        Ok(ChannelStack { data })
    }

    pub fn channel(&self, idx: usize) -> &[f32] {
        &self.data[idx * PLANE..(idx + 1) * PLANE]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn zeros() -> Self {
        ChannelStack { data: vec![0.0; 3 * PLANE] }
    }
}

pub fn downsample_2x2(img: &GrayImage) -> Result<GrayImage> {
    let (h, w) = (img.height() / 2, img.width() / 2);
    if h == 0 || w == 0 {
        return Err(Error::arg("image too small for 2x2 block averaging"));
    }
    GrayImage::from_fn(h, w, |r, c| {
        let (r2, c2) = (2 * r, 2 * c);
        0.25 * (img.get(r2, c2) + img.get(r2, c2 + 1) + img.get(r2 + 1, c2) + img.get(r2 + 1, c2 + 1))
    })
}

/// Y, U, V planes of a grayscale crop.
pub fn yuv_planes(gray: &GrayImage) -> [GrayImage; 3] {
    let zero = GrayImage::filled(gray.height(), gray.width(), 0.0).expect("non-empty");
    [gray.clone(), zero.clone(), zero]
}

/// Sobel magnitudes of three planes plus their pointwise maximum.
pub fn edge_maps(planes: &[GrayImage; 3]) -> Result<[GrayImage; 4]> {
    let e0 = sobel_magnitude(&planes[0])?;
    let e1 = sobel_magnitude(&planes[1])?;
    let e2 = sobel_magnitude(&planes[2])?;
    let mut emax = e0.clone();
    for ((m, &b), &c) in emax.data_mut().iter_mut().zip(e1.data()).zip(e2.data()) {
        *m = m.max(b).max(c);
    }
    Ok([e0, e1, e2, emax])
}

fn tile_quadrants(tiles: [Option<&GrayImage>; 4]) -> GrayImage {
    let mut out = GrayImage::filled(STACK_H, STACK_W, 0.0).expect("non-empty");
    for (q, tile) in tiles.iter().enumerate() {
        let Some(tile) = tile else { continue };
        let (r0, c0) = ((q / 2) * HALF_H, (q % 2) * HALF_W);
        for r in 0..HALF_H {
            for c in 0..HALF_W {
                out.set(r0 + r, c0 + c, tile.get(r, c));
            }
        }
    }
    out
}

/// Zero mean / unit variance in place; a (near-)constant plane becomes zero.
pub fn normalize_plane(plane: &mut [f64]) {
    let n = plane.len() as f64;
    let mean = plane.iter().sum::<f64>() / n;
    let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var < VARIANCE_FLOOR {
        plane.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let inv_std = 1.0 / var.sqrt();
    plane.iter_mut().for_each(|v| *v = (*v - mean) * inv_std);
}

/// The three channels before normalization.
pub fn raw_channels(crop: &GrayImage) -> Result<[GrayImage; 3]> {
    if crop.height() != STACK_H || crop.width() != STACK_W {
        return Err(Error::arg(format!(
            "channel stack needs an {STACK_H}x{STACK_W} crop, got {}x{}",
            crop.height(),
            crop.width()
        )));
    }
    let full = yuv_planes(crop);
    let small = [downsample_2x2(&full[0])?, downsample_2x2(&full[1])?, downsample_2x2(&full[2])?];
    let edges = edge_maps(&small)?;
    let ch1 = tile_quadrants([Some(&small[0]), Some(&small[1]), Some(&small[2]), None]);
    let ch2 = tile_quadrants([Some(&edges[0]), Some(&edges[1]), Some(&edges[2]), Some(&edges[3])]);
    let [y, _, _] = full;
    Ok([y, ch1, ch2])
}

pub fn build_channel_stack(crop: &GrayImage) -> Result<ChannelStack> {
    let [mut a, mut b, mut c] = raw_channels(crop)?;
    normalize_plane(a.data_mut());
    normalize_plane(b.data_mut());
    normalize_plane(c.data_mut());
    ChannelStack::from_planes([a.data(), b.data(), c.data()])
}

/// Full window pipeline: optional rotation of the 40×100 crop, quarter turn
/// clockwise so the car length runs down the rows, bilinear resize to 84×28
/// and channel construction.
pub fn prepare_window(window: &GrayImage, rotation_deg: f64) -> Result<ChannelStack> {
    if window.height() != CROP_H || window.width() != CROP_W {
        return Err(Error::arg(format!(
            "window must be {CROP_H}x{CROP_W}, got {}x{}",
            window.height(),
            window.width()
        )));
    }
    let rotated;
    let src = if rotation_deg != 0.0 {
        rotated = rotate_about_center(window, rotation_deg)?;
        &rotated
    } else {
        window
    };
    let upright = rotate90_cw(src);
    let scaled = resize_bilinear(&upright, STACK_H, STACK_W)?;
    build_channel_stack(&scaled)
}
