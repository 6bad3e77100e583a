//! Summed maps, global max pooling and the quadratic deformation basis.
//!
//! Grid coordinates are `(x, y) = (row, col)`. With anchor `(a_x, a_y)`:
//!
//! ```text
//! d1 = (x - a_x)²   d2 = (y - a_y)²   d3 = x - a_x   d4 = y - a_y
//! B  = M + c1·d1 + c2·d2 + c3·d3 + c4·d4
//! s  = max B,  loc = argmax B (first in row-major order)
//! ```
//!
//! The constant `c5 = c3²/4c1 + c4²/4c2` is left out of `B`: it shifts every
//! cell equally and never moves the argmax.

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense 2-D map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Map2<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::arg(format!("map {height}x{width} with {} values", data.len())));
        }
        Ok(Map2 { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Map2 { height, width, data: vec![T::zero(); height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Map2 { height, width, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[x * self.width + y]
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// The four predefined deformation maps of one part.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationBasis<T> {
    pub anchor: (usize, usize),
    pub maps: [Map2<T>; 4],
}

impl<T: Real> DeformationBasis<T> {
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }

    /// `(d1, d2, d3, d4)` at one cell.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [T; 4] {
        [self.maps[0].get(x, y), self.maps[1].get(x, y), self.maps[2].get(x, y), self.maps[3].get(x, y)]
    }
}

pub fn quadratic_basis<T: Real>(map_h: usize, map_w: usize, anchor: (usize, usize)) -> Result<DeformationBasis<T>> {
    if map_h == 0 || map_w == 0 {
        return Err(Error::arg("empty deformation grid"));
    }
    if anchor.0 >= map_h || anchor.1 >= map_w {
        return Err(Error::arg(format!("anchor {anchor:?} outside {map_h}x{map_w} map")));
    }
    let ax = anchor.0 as f64;
    let ay = anchor.1 as f64;
    let dx = |x: usize| x as f64 - ax;
    let dy = |y: usize| y as f64 - ay;
    Ok(DeformationBasis {
        anchor,
        maps: [
            Map2::from_fn(map_h, map_w, |x, _| T::of(dx(x) * dx(x))),
            Map2::from_fn(map_h, map_w, |_, y| T::of(dy(y) * dy(y))),
            Map2::from_fn(map_h, map_w, |x, _| T::of(dx(x))),
            Map2::from_fn(map_h, map_w, |_, y| T::of(dy(y))),
        ],
    })
}

/// `B = M + Σ c_n·D_n`, summed in the order `c1..c4`.
pub fn summed_map<T: Real>(m: &Map2<T>, coeffs: &[T; 4], basis: &DeformationBasis<T>) -> Result<Map2<T>> {
    if m.dims() != basis.dims() {
        return Err(Error::arg(format!(
            "part map {:?} and deformation basis {:?} differ in size",
            m.dims(),
            basis.dims()
        )));
    }
    let [d1, d2, d3, d4] = &basis.maps;
    let [c1, c2, c3, c4] = *coeffs;
    let data = (0..m.data.len())
        .map(|i| m.data[i] + c1 * d1.data[i] + c2 * d2.data[i] + c3 * d3.data[i] + c4 * d4.data[i])
        .collect();
    Ok(Map2 { height: m.height, width: m.width, data })
}

/// Global maximum and its first row-major location.
pub fn part_score<T: Real>(b: &Map2<T>) -> (T, (usize, usize)) {
    let mut best = 0;
    for (i, &v) in b.data.iter().enumerate().skip(1) {
        if v > b.data[best] {
            best = i;
        }
    }
    (b.data[best], (best / b.width, best % b.width))
}

/// Gradient of `s = B(loc)`: only the argmax cell of `M` receives `ds` and
/// `dc_n = ds · d_n(loc)`.
pub fn deformation_backward<T: Real>(
    ds: T,
    loc: (usize, usize),
    basis: &DeformationBasis<T>,
) -> Result<(Map2<T>, [T; 4])> {
    let (h, w) = basis.dims();
    if loc.0 >= h || loc.1 >= w {
        return Err(Error::Internal(format!("argmax {loc:?} outside {h}x{w} map")));
    }
    let mut dm = Map2::zeros(h, w);
    dm.data[loc.0 * w + loc.1] = ds;
    let d = basis.at(loc.0, loc.1);
    Ok((dm, [ds * d[0], ds * d[1], ds * d[2], ds * d[3]]))
}

/// Both closed forms of the quadratic deformation for one part.
#[derive(Debug, Clone)]
pub struct QuadraticExpansion<T> {
    /// `M + c1·D1 + c2·D2 + c3·D3 + c4·D4` (without `c5`).
    pub linear: Map2<T>,
    /// `None` when `|c1|` or `|c2|` is below the degeneracy threshold.
    pub c5: Option<T>,
    pub center: Option<(T, T)>,
    /// `m + c1(x - a_x + c3/2c1)² + c2(y - a_y + c4/2c2)²`.
    pub completed_square: Option<Map2<T>>,
}

impl<T: Real> QuadraticExpansion<T> {
    pub fn is_degenerate(&self) -> bool {
        self.c5.is_none()
    }

    /// Linear form plus `c5`, i.e. the full expanded `B`.
    pub fn with_c5(&self) -> Option<Map2<T>> {
        let c5 = self.c5?;
        Some(Map2 {
            height: self.linear.height,
            width: self.linear.width,
            data: self.linear.data.iter().map(|&v| v + c5).collect(),
        })
    }
}

pub const DEGENERATE_COEFF: f64 = 1e-12;

pub fn expand_quadratic<T: Real>(
    coeffs: &[T; 4],
    anchor: (usize, usize),
    m: &Map2<T>,
) -> Result<QuadraticExpansion<T>> {
    let basis = quadratic_basis(m.height, m.width, anchor)?;
    let linear = summed_map(m, coeffs, &basis)?;
    let [c1, c2, c3, c4] = *coeffs;
    let tiny = T::of(DEGENERATE_COEFF);
    if c1.abs() < tiny || c2.abs() < tiny {
        return Ok(QuadraticExpansion { linear, c5: None, center: None, completed_square: None });
    }
    let two = T::of(2.0);
    let four = T::of(4.0);
    let c5 = c3 * c3 / (four * c1) + c4 * c4 / (four * c2);
    let (ax, ay) = (T::of(anchor.0 as f64), T::of(anchor.1 as f64));
    let shift_x = c3 / (two * c1);
    let shift_y = c4 / (two * c2);
    let center = (ax - shift_x, ay - shift_y);
    let completed = Map2::from_fn(m.height, m.width, |x, y| {
        let u = T::of(x as f64) - ax + shift_x;
        let v = T::of(y as f64) - ay + shift_y;
        m.get(x, y) + c1 * u * u + c2 * v * v
    });
    Ok(QuadraticExpansion { linear, c5: Some(c5), center: Some(center), completed_square: Some(completed) })
}
