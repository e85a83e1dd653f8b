//! Grid tensor fields and componentwise spatial differentiation.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::spectral::{differentiate_line, LineScratch};

/// `(l, m)`: number of contravariant and covariant indices.
pub type Valence = (usize, usize);

/// Highest derivative order accepted by [`derivative`] and the Sobolev norms.
pub const MAX_DERIVATIVE_ORDER: u32 = 6;

/// A tensor field sampled on a grid.
///
/// Storage is row-major over grid points, then components; component indices
/// list the upper indices first, then the lower ones, each running over `0..D`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: GridSpec,
    valence: Valence,
    symmetric: bool,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: &GridSpec, valence: Valence) -> Self {
        let ncomp = grid.dim().pow((valence.0 + valence.1) as u32);
        Self { grid: grid.clone(), valence, symmetric: false, data: vec![0.0; ncomp * grid.npts()] }
    }

    /// Spatially constant field with the given components.
    pub fn constant(grid: &GridSpec, valence: Valence, comps: &[f64]) -> Self {
        let mut f = Self::zeros(grid, valence);
        assert_eq!(comps.len(), f.ncomp(), "component count does not match valence");
        for chunk in f.data.chunks_mut(comps.len()) {
            chunk.copy_from_slice(comps);
        }
        f
    }

    /// Fills every point with `fill(x_active, comps)`, where `x_active` holds the
    /// coordinates along the active directions in slot order.
    pub fn from_fn(grid: &GridSpec, valence: Valence, mut fill: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut f = Self::zeros(grid, valence);
        let ncomp = f.ncomp();
        for p in 0..grid.npts() {
            let x = grid.coords(p);
            fill(&x, &mut f.data[p * ncomp..(p + 1) * ncomp]);
        }
        f
    }

    pub fn scalar_from_fn(grid: &GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn(grid, (0, 0), |x, c| c[0] = f(x))
    }

    pub fn from_data(grid: &GridSpec, valence: Valence, data: Vec<f64>) -> Result<Self> {
        let f = Self::zeros(grid, valence);
        if data.len() != f.data.len() {
            return Err(Error::Domain(format!(
                "field data has {} entries, expected {}",
                data.len(),
                f.data.len()
            )));
        }
        Ok(Self { data, ..f })
    }

    /// Marks a symmetric 2-tensor; setting the flag symmetrizes the data.
    pub fn with_symmetric(mut self, symmetric: bool) -> Self {
        if symmetric {
            assert!(
                self.valence == (0, 2) || self.valence == (2, 0),
                "only (0,2) and (2,0) fields carry the symmetric flag"
            );
            self.symmetrize();
        }
        self.symmetric = symmetric;
        self
    }

    pub fn is_symmetric_flagged(&self) -> bool {
        self.symmetric
    }

    /// Replaces `T_ij` with `(T_ij + T_ji) / 2` at every point.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rank(), 2, "symmetrize needs a rank-2 field");
        let d = self.dim();
        for chunk in self.data.chunks_mut(d * d) {
            for i in 0..d {
                for j in (i + 1)..d {
                    let avg = 0.5 * (chunk[i * d + j] + chunk[j * d + i]);
                    chunk[i * d + j] = avg;
                    chunk[j * d + i] = avg;
                }
            }
        }
    }

    /// Largest `|T_ij - T_ji|` over the grid.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rank(), 2);
        let d = self.dim();
        self.data
            .chunks(d * d)
            .flat_map(|c| (0..d).flat_map(move |i| (0..d).map(move |j| (c[i * d + j] - c[j * d + i]).abs())))
            .fold(0.0, f64::max)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn valence(&self) -> Valence {
        self.valence
    }

    pub fn rank(&self) -> usize {
        self.valence.0 + self.valence.1
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn ncomp(&self) -> usize {
        self.dim().pow(self.rank() as u32)
    }

    pub fn npts(&self) -> usize {
        self.grid.npts()
    }

    pub fn at(&self, p: usize) -> &[f64] {
        let n = self.ncomp();
        &self.data[p * n..(p + 1) * n]
    }

    pub fn at_mut(&mut self, p: usize) -> &mut [f64] {
        let n = self.ncomp();
        &mut self.data[p * n..(p + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Values of component `c` over all grid points.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.ncomp()).copied().collect()
    }

    /// Value of a rank-0 field at point `p`.
    pub fn value(&self, p: usize) -> f64 {
        debug_assert_eq!(self.rank(), 0);
        self.data[p]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn check_same_shape(&self, other: &TensorField) -> Result<()> {
        if !self.grid.compatible(&other.grid) || self.valence != other.valence {
            return Err(Error::Domain(format!(
                "field shapes differ: valence {:?} vs {:?}",
                self.valence, other.valence
            )));
        }
        Ok(())
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &TensorField) -> Result<TensorField> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        out.symmetric = self.symmetric && other.symmetric;
        for (o, x) in out.data.iter_mut().zip(&other.data) {
            *o += a * x;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &TensorField) -> Result<TensorField> {
        self.axpy(-1.0, other)
    }

    pub fn add(&self, other: &TensorField) -> Result<TensorField> {
        self.axpy(1.0, other)
    }

    pub fn scaled(&self, s: f64) -> TensorField {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Applies `f` to every entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> TensorField {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Componentwise derivative; see [`derivative`].
    pub fn derivative(&self, direction: usize, order: u32) -> TensorField {
        derivative(self, direction, order)
    }

    /// `∂_I T` for a multi-index given as derivative counts per active slot.
    pub fn partial(&self, counts: &[u32]) -> TensorField {
        assert_eq!(counts.len(), self.grid.n_active(), "one count per active direction");
        let mut out = self.clone();
        for (slot, &c) in counts.iter().enumerate() {
            if c > 0 {
                out = derivative(&out, self.grid.active()[slot], c);
            }
        }
        out
    }

    /// The `(l, m+1)` field `∂_i T` with the derivative index first among the lower ones.
    pub fn gradient(&self) -> TensorField {
        let d = self.dim();
        let (l, m) = self.valence;
        let upper = d.pow(l as u32);
        let lower = d.pow(m as u32);
        let mut out = TensorField::zeros(&self.grid, (l, m + 1));
        let ncomp_out = out.ncomp();
        for &dir in self.grid.active() {
            let di = self.derivative(dir, 1);
            for p in 0..self.npts() {
                let src = di.at(p);
                let dst = &mut out.data[p * ncomp_out..(p + 1) * ncomp_out];
                for u in 0..upper {
                    for w in 0..lower {
                        dst[(u * d + dir) * lower + w] = src[u * lower + w];
                    }
                }
            }
        }
        out
    }
}

/// Componentwise periodic derivative of order `order` along `direction` (0-based).
///
/// Inactive directions give an exactly zero field. Lines that are exactly constant
/// also differentiate to exact zeros.
pub fn derivative(f: &TensorField, direction: usize, order: u32) -> TensorField {
    assert!(direction < f.dim(), "direction {direction} out of range");
    assert!(order <= MAX_DERIVATIVE_ORDER, "derivative order {order} exceeds {MAX_DERIVATIVE_ORDER}");
    if order == 0 {
        return f.clone();
    }
    let mut out = TensorField::zeros(&f.grid, f.valence);
    out.symmetric = f.symmetric;
    let Some(slot) = f.grid.slot_of(direction) else {
        return out;
    };
    let n = f.grid.points()[slot];
    let stride = f.grid.stride(slot);
    let ncomp = f.ncomp();
    let scheme = f.grid.scheme();
    let dealias = f.grid.dealias();
    let mut line = vec![0.0; n];
    let mut dline = vec![0.0; n];
    let mut scratch = LineScratch::default();
    for start in f.grid.line_starts(slot) {
        for c in 0..ncomp {
            for (i, v) in line.iter_mut().enumerate() {
                *v = f.data[(start + i * stride) * ncomp + c];
            }
            differentiate_line(&line, &mut dline, order, scheme, dealias, &mut scratch);
            for (i, v) in dline.iter().enumerate() {
                out.data[(start + i * stride) * ncomp + c] = *v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Scheme;
    use std::f64::consts::PI;

    fn grid1(n: usize) -> GridSpec {
        GridSpec::new(3, vec![0], vec![n], Scheme::Spectral).unwrap()
    }

    #[test]
    fn constant_differentiates_to_zero() {
        let g = grid1(16);
        let f = TensorField::constant(&g, (1, 1), &[1.5; 9]);
        let d = derivative(&f, 0, 1);
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inactive_direction_is_zero() {
        let g = grid1(16);
        let f = TensorField::scalar_from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        assert_eq!(derivative(&f, 2, 1).max_abs(), 0.0);
    }

    #[test]
    fn sine_first_derivative() {
        let g = grid1(32);
        let f = TensorField::scalar_from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        let d = derivative(&f, 0, 1);
        for p in 0..g.npts() {
            let x = g.coords(p)[0];
            assert!((d.value(p) - 2.0 * PI * (2.0 * PI * x).cos()).abs() <= 1e-10);
        }
    }

    #[test]
    fn exp_sine_second_derivative() {
        let g = grid1(64);
        let f = TensorField::scalar_from_fn(&g, |x| (2.0 * PI * x[0]).sin().exp());
        let d = derivative(&f, 0, 2);
        for p in 0..g.npts() {
            let x = g.coords(p)[0];
            let (s, c) = (2.0 * PI * x).sin_cos();
            let w = 2.0 * PI;
            let exact = s.exp() * w * w * (c * c - s);
            assert!((d.value(p) - exact).abs() <= 1e-8, "{} vs {exact}", d.value(p));
        }
    }

    #[test]
    fn gradient_places_derivative_index_first() {
        let g = GridSpec::new(2, vec![1], vec![16], Scheme::Spectral).unwrap();
        let f = TensorField::from_fn(&g, (0, 2), |x, c| {
            c[1] = (2.0 * PI * x[0]).sin();
            c[2] = c[1];
        });
        let gr = f.gradient();
        assert_eq!(gr.valence(), (0, 3));
        let p = 3;
        let x = g.coords(p)[0];
        let expect = 2.0 * PI * (2.0 * PI * x).cos();
        // (∂g)_{1,0,1} with direction index 1
        assert!((gr.at(p)[4 + 1] - expect).abs() < 1e-10);
        assert_eq!(gr.at(p)[1], 0.0);
    }

    #[test]
    fn symmetric_flag_symmetrizes() {
        let g = GridSpec::homogeneous(2);
        let f = TensorField::constant(&g, (0, 2), &[1.0, 2.0, 0.0, 1.0]).with_symmetric(true);
        assert_eq!(f.at(0), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(f.asymmetry(), 0.0);
    }
}
