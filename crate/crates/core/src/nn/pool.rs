use super::Tensor3;
use crate::error::{Error, Result};
use crate::real::Real;

fn pooled_len(n: usize, size: usize, stride: usize) -> usize {
    (n - size) / stride + 1
}

/// Average ("boxcar") pooling. Rows/columns not covered by a full window are
/// dropped.
pub fn avg_pool_boxcar<T: Real>(input: &Tensor3<T>, size: usize, stride: usize) -> Result<Tensor3<T>> {
    let (c, h, w) = input.dims();
    if size == 0 || stride == 0 {
        return Err(Error::arg("pool size and stride must be positive"));
    }
    if h < size || w < size {
        return Err(Error::arg(format!("{h}x{w} map is smaller than the {size}x{size} pool")));
    }
    let (oh, ow) = (pooled_len(h, size, stride), pooled_len(w, size, stride));
    let scale = T::one() / T::of((size * size) as f64);
    let mut out = Tensor3::zeros(c, oh, ow);
    for ch in 0..c {
        let plane = input.plane(ch);
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = T::zero();
                for i in 0..size {
                    let row = &plane[(y * stride + i) * w + x * stride..][..size];
                    acc = acc + row.iter().copied().sum::<T>();
                }
                out.set(ch, y, x, acc * scale);
            }
        }
    }
    Ok(out)
}

/// Spreads each pooled gradient uniformly over its window.
pub fn avg_pool_boxcar_backward<T: Real>(
    dout: &Tensor3<T>,
    input_dims: (usize, usize, usize),
    size: usize,
    stride: usize,
) -> Tensor3<T> {
    let (c, h, w) = input_dims;
    let scale = T::one() / T::of((size * size) as f64);
    let mut din = Tensor3::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..dout.height() {
            for x in 0..dout.width() {
                let g = dout.get(ch, y, x) * scale;
                for i in 0..size {
                    for j in 0..size {
                        let idx = din.index(ch, y * stride + i, x * stride + j);
                        din.data_mut()[idx] = din.data()[idx] + g;
                    }
                }
            }
        }
    }
    din
}
