//! Valid cross-correlation (`out[k](y,x) = b_k + Σ in[c](y+i,x+j)·w[k,c,i,j]`,
//! no kernel flip) implemented as im2col followed by a GEMM.

use super::Tensor3;
use crate::error::{Error, Result};
use crate::real::Real;

/// `count` filters of `in_channels × f_h × f_w` weights plus one bias each.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T> {
    pub count: usize,
    pub in_channels: usize,
    pub f_h: usize,
    pub f_w: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Real> FilterBank<T> {
    pub fn new(
        count: usize,
        in_channels: usize,
        f_h: usize,
        f_w: usize,
        weights: Vec<T>,
        biases: Vec<T>,
    ) -> Result<Self> {
        if count == 0 || in_channels == 0 || f_h == 0 || f_w == 0 {
            return Err(Error::arg("filter bank dimensions must be positive"));
        }
        if weights.len() != count * in_channels * f_h * f_w || biases.len() != count {
            return Err(Error::arg(format!(
                "filter bank {count}x{in_channels}x{f_h}x{f_w}: got {} weights, {} biases",
                weights.len(),
                biases.len()
            )));
        }
        Ok(FilterBank { count, in_channels, f_h, f_w, weights, biases })
    }

    pub fn zeros(count: usize, in_channels: usize, f_h: usize, f_w: usize) -> Self {
        FilterBank {
            count,
            in_channels,
            f_h,
            f_w,
            weights: vec![T::zero(); count * in_channels * f_h * f_w],
            biases: vec![T::zero(); count],
        }
    }

    #[inline]
    pub fn filter_len(&self) -> usize {
        self.in_channels * self.f_h * self.f_w
    }

    #[inline]
    pub fn weight(&self, k: usize, c: usize, i: usize, j: usize) -> T {
        self.weights[((k * self.in_channels + c) * self.f_h + i) * self.f_w + j]
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> FilterBank<U> {
        FilterBank {
            count: self.count,
            in_channels: self.in_channels,
            f_h: self.f_h,
            f_w: self.f_w,
            weights: self.weights.iter().map(|&v| f(v)).collect(),
            biases: self.biases.iter().map(|&v| f(v)).collect(),
        }
    }

    fn output_dims(&self, input: &Tensor3<T>) -> Result<(usize, usize)> {
        let (c, h, w) = input.dims();
        if c != self.in_channels {
            return Err(Error::arg(format!("input has {c} channels, filters expect {}", self.in_channels)));
        }
        if self.f_h > h || self.f_w > w {
            return Err(Error::arg(format!("{}x{} filter does not fit {h}x{w} input", self.f_h, self.f_w)));
        }
        Ok((h - self.f_h + 1, w - self.f_w + 1))
    }
}

/// Unrolls every `C×fh×fw` receptive field into a column. The result is a
/// `(C·fh·fw) × (oh·ow)` row-major matrix.
pub fn im2col<T: Real>(input: &Tensor3<T>, f_h: usize, f_w: usize) -> Vec<T> {
    let (c_in, h, w) = input.dims();
    let (oh, ow) = (h + 1 - f_h, w + 1 - f_w);
    let p = oh * ow;
    let mut cols = vec![T::zero(); c_in * f_h * f_w * p];
    let src = input.data();
    for c in 0..c_in {
        for i in 0..f_h {
            for j in 0..f_w {
                let row = (c * f_h + i) * f_w + j;
                let dst = &mut cols[row * p..(row + 1) * p];
                for y in 0..oh {
                    let base = (c * h + y + i) * w + j;
                    dst[y * ow..(y + 1) * ow].copy_from_slice(&src[base..base + ow]);
                }
            }
        }
    }
    cols
}

/// Convolution from a precomputed [`im2col`] matrix.
pub fn conv2d_valid_cols<T: Real>(cols: &[T], oh: usize, ow: usize, bank: &FilterBank<T>) -> Tensor3<T> {
    let p = oh * ow;
    let k = bank.filter_len();
    let mut out = vec![T::zero(); bank.count * p];
    for (row, &b) in out.chunks_mut(p).zip(&bank.biases) {
        row.iter_mut().for_each(|v| *v = b);
    }
    T::gemm(
        bank.count,
        k,
        p,
        T::one(),
        &bank.weights,
        k as isize,
        1,
        cols,
        p as isize,
        1,
        T::one(),
        &mut out,
        p as isize,
        1,
    );
    Tensor3::new(bank.count, oh, ow, out).expect("consistent dims")
}

pub fn conv2d_valid<T: Real>(input: &Tensor3<T>, bank: &FilterBank<T>) -> Result<Tensor3<T>> {
    let (oh, ow) = bank.output_dims(input)?;
    let cols = im2col(input, bank.f_h, bank.f_w);
    Ok(conv2d_valid_cols(&cols, oh, ow, bank))
}

/// Accumulates `dW += dout · colsᵀ` and `db += Σ dout` into the given
/// gradient bank.
pub fn conv2d_weight_grad<T: Real>(cols: &[T], dout: &Tensor3<T>, grad: &mut FilterBank<T>) {
    let p = dout.height() * dout.width();
    let k = grad.filter_len();
    debug_assert_eq!(dout.channels(), grad.count);
    debug_assert_eq!(cols.len(), k * p);
    T::gemm(
        grad.count,
        p,
        k,
        T::one(),
        dout.data(),
        p as isize,
        1,
        cols,
        1,
        p as isize,
        T::one(),
        &mut grad.weights,
        k as isize,
        1,
    );
    for (b, row) in grad.biases.iter_mut().zip(dout.data().chunks(p)) {
        *b = *b + row.iter().copied().sum::<T>();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_dimensions() {
        let input = Tensor3::<f32>::zeros(3, 84, 28);
        let bank = FilterBank::<f32>::zeros(64, 3, 9, 9);
        let out = conv2d_valid(&input, &bank).unwrap();
        assert_eq!(out.dims(), (64, 76, 20));
    }

    #[test]
    fn identity_filter() {
        let input = Tensor3::from_fn(1, 4, 5, |_, y, x| (y * 5 + x) as f64 * 0.5);
        let bank = FilterBank::new(1, 1, 1, 1, vec![1.0], vec![0.0]).unwrap();
        assert_eq!(conv2d_valid(&input, &bank).unwrap(), input);
    }

    #[test]
    fn mismatches_rejected() {
        let input = Tensor3::<f64>::zeros(2, 4, 4);
        assert!(conv2d_valid(&input, &FilterBank::zeros(1, 3, 3, 3)).is_err());
        assert!(conv2d_valid(&input, &FilterBank::zeros(1, 2, 5, 3)).is_err());
        assert!(FilterBank::<f64>::new(1, 1, 2, 2, vec![0.0; 3], vec![0.0]).is_err());
    }

    #[test]
    fn bias_only() {
        let input = Tensor3::<f64>::zeros(2, 5, 5);
        let mut bank = FilterBank::zeros(2, 2, 3, 3);
        bank.biases = vec![1.5, -2.0];
        let out = conv2d_valid(&input, &bank).unwrap();
        assert!(out.plane(0).iter().all(|&v| v == 1.5));
        assert!(out.plane(1).iter().all(|&v| v == -2.0));
    }
}
