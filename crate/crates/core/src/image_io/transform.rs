use super::GrayImage;
use crate::error::{Error, Result};

/// Bilinear sample at fractional `(row, col)`; coordinates outside the
/// image are clamped to the border.
fn sample_bilinear(img: &GrayImage, row: f64, col: f64) -> f64 {
    let max_r = (img.height() - 1) as f64;
    let max_c = (img.width() - 1) as f64;
    let r = row.clamp(0.0, max_r);
    let c = col.clamp(0.0, max_c);
    let r0 = r.floor();
    let c0 = c.floor();
    let fr = r - r0;
    let fc = c - c0;
    let (r0, c0) = (r0 as usize, c0 as usize);
    let r1 = (r0 + 1).min(img.height() - 1);
    let c1 = (c0 + 1).min(img.width() - 1);
    let top = (1.0 - fc) * img.get(r0, c0) + fc * img.get(r0, c1);
    let bottom = (1.0 - fc) * img.get(r1, c0) + fc * img.get(r1, c1);
    (1.0 - fr) * top + fr * bottom
}

/// Bilinear resize with pixel-centre alignment:
/// `src = (dst + 0.5) * in / out - 0.5`.
pub fn resize_bilinear(img: &GrayImage, out_h: usize, out_w: usize) -> Result<GrayImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg(format!("resize target {out_h}x{out_w} is empty")));
    }
    let sy = img.height() as f64 / out_h as f64;
    let sx = img.width() as f64 / out_w as f64;
    GrayImage::from_fn(out_h, out_w, |r, c| {
        let src_r = (r as f64 + 0.5) * sy - 0.5;
        let src_c = (c as f64 + 0.5) * sx - 0.5;
        sample_bilinear(img, src_r, src_c)
    })
}

/// Rotates counter-clockwise (as displayed, rows pointing down) by `degrees`
/// about the image centre. The output keeps the input size; samples that
/// fall outside the source replicate the nearest border pixel.
pub fn rotate_about_center(img: &GrayImage, degrees: f64) -> Result<GrayImage> {
    if degrees.is_nan() || degrees.abs() > 90.0 {
        return Err(Error::arg(format!("rotation {degrees} outside [-90, 90]")));
    }
    if degrees == 0.0 {
        return Ok(img.clone());
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let cx = (img.width() as f64 - 1.0) / 2.0;
    GrayImage::from_fn(img.height(), img.width(), |r, c| {
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        // inverse mapping of the forward rotation
        let src_x = cx + dx * cos - dy * sin;
        let src_y = cy + dx * sin + dy * cos;
        sample_bilinear(img, src_y, src_x)
    })
}

/// Quarter turn clockwise: an `h×w` image becomes `w×h`.
pub fn rotate90_cw(img: &GrayImage) -> GrayImage {
    let h = img.height();
    GrayImage::from_fn(img.width(), h, |r, c| img.get(h - 1 - c, r)).expect("non-empty")
}

/// Per-pixel `sqrt(gx² + gy²)` with the 3×3 Sobel kernels and replicated
/// borders.
pub fn sobel_magnitude(img: &GrayImage) -> Result<GrayImage> {
    if img.height() < 3 || img.width() < 3 {
        return Err(Error::arg(format!("sobel needs at least 3x3, got {}x{}", img.height(), img.width())));
    }
    GrayImage::from_fn(img.height(), img.width(), |r, c| {
        let p = |dr: isize, dc: isize| img.get_clamped(r as isize + dr, c as isize + dc);
        let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        gx.hypot(gy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(h: usize, w: usize) -> GrayImage {
        GrayImage::from_fn(h, w, |r, c| {
            let (y, x) = (r as f64 / h as f64, c as f64 / w as f64);
            100.0 + 60.0 * (3.0 * x).sin() * (2.0 * y).cos() + 40.0 * x * y
        })
        .unwrap()
    }

    #[test]
    fn resize_constant_and_identity() {
        let k = GrayImage::filled(5, 9, 7.0).unwrap();
        let out = resize_bilinear(&k, 13, 4).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.0));

        let img = smooth(40, 100);
        assert_eq!(resize_bilinear(&img, 40, 100).unwrap(), img);
        assert!(resize_bilinear(&img, 0, 3).is_err());
    }

    #[test]
    fn resize_middle_column() {
        let img = GrayImage::new(2, 2, vec![0.0, 10.0, 0.0, 10.0]).unwrap();
        let out = resize_bilinear(&img, 2, 3).unwrap();
        assert_eq!(out.get(0, 1), 5.0);
        assert_eq!(out.get(1, 1), 5.0);
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(out.get(0, 2), 10.0);
    }

    #[test]
    fn rotation_fixed_points() {
        let img = smooth(40, 100);
        assert_eq!(rotate_about_center(&img, 0.0).unwrap(), img);

        let k = GrayImage::filled(11, 6, 3.5).unwrap();
        let out = rotate_about_center(&k, 7.0).unwrap();
        assert!(out.data().iter().all(|&v| (v - 3.5).abs() < 1e-12));

        let mut dot = GrayImage::filled(3, 3, 0.0).unwrap();
        dot.set(1, 1, 255.0);
        let out = rotate_about_center(&dot, 10.0).unwrap();
        assert_eq!(out.get(1, 1), 255.0);

        assert!(rotate_about_center(&img, 91.0).is_err());
    }

    #[test]
    fn rotation_round_trip_interior() {
        let img = smooth(40, 100);
        let range = 200.0;
        for deg in [-10.0, -3.0, 4.0, 10.0] {
            let back = rotate_about_center(&rotate_about_center(&img, deg).unwrap(), -deg).unwrap();
            let band = 8;
            let mut worst: f64 = 0.0;
            for r in band..40 - band {
                for c in band..100 - band {
                    worst = worst.max((back.get(r, c) - img.get(r, c)).abs());
                }
            }
            assert!(worst < 0.15 * range, "deg {deg}: {worst}");
        }
    }

    #[test]
    fn rotation_direction_is_counter_clockwise() {
        // a bright pixel to the right of centre moves up for a positive angle
        let mut img = GrayImage::filled(21, 21, 0.0).unwrap();
        img.set(10, 18, 100.0);
        let out = rotate_about_center(&img, 90.0).unwrap();
        assert!((out.get(2, 10) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn quarter_turn() {
        let img = GrayImage::from_fn(2, 3, |r, c| (r * 3 + c) as f64).unwrap();
        // [0 1 2; 3 4 5] -> [3 0; 4 1; 5 2]
        let out = rotate90_cw(&img);
        assert_eq!((out.height(), out.width()), (3, 2));
        assert_eq!(out.data(), &[3.0, 0.0, 4.0, 1.0, 5.0, 2.0]);
    }

    #[test]
    fn sobel_constant_and_step() {
        let k = GrayImage::filled(6, 6, 42.0).unwrap();
        assert!(sobel_magnitude(&k).unwrap().data().iter().all(|&v| v == 0.0));

        let step = GrayImage::from_fn(6, 8, |_, c| if c >= 4 { 1.0 } else { 0.0 }).unwrap();
        let m = sobel_magnitude(&step).unwrap();
        for r in 0..6 {
            assert_eq!(m.get(r, 3), 4.0);
            assert_eq!(m.get(r, 4), 4.0);
            assert_eq!(m.get(r, 1), 0.0);
        }
        assert!(sobel_magnitude(&GrayImage::filled(2, 5, 0.0).unwrap()).is_err());
    }

    #[test]
    fn sobel_transpose_symmetry() {
        let img = GrayImage::from_fn(7, 5, |r, c| ((r * 31 + c * 17) % 23) as f64).unwrap();
        let a = sobel_magnitude(&img.transpose()).unwrap();
        let b = sobel_magnitude(&img).unwrap().transpose();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
