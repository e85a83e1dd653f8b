use crate::error::{Error, Result};
use crate::field::TensorField;
use crate::grid::GridSpec;
use crate::linalg;

/// One CMC slice: metric, inverse metric, mixed second fundamental form and lapse.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionState {
    pub t: f64,
    /// `g_ij`, valence (0,2), symmetric.
    pub g: TensorField,
    /// `g^ij`, valence (2,0), symmetric.
    pub ginv: TensorField,
    /// `K^i_j`, valence (1,1).
    pub k: TensorField,
    /// Lapse `n`, scalar.
    pub n: TensorField,
}

/// Tolerance on `g^{-1} g = I` at every grid point.
pub const INVERSE_TOL: f64 = 1e-10;

impl SolutionState {
    /// Builds a state and checks every invariant.
    pub fn new(t: f64, g: TensorField, ginv: TensorField, k: TensorField, n: TensorField) -> Result<Self> {
        let s = Self::new_unchecked(t, g, ginv, k, n);
        s.validate()?;
        Ok(s)
    }

    pub fn new_unchecked(t: f64, g: TensorField, ginv: TensorField, k: TensorField, n: TensorField) -> Self {
        Self { t, g, ginv, k, n }
    }

    /// Computes `g^{-1}` by pointwise inversion, then validates.
    pub fn from_metric(t: f64, g: TensorField, k: TensorField, n: TensorField) -> Result<Self> {
        let ginv = invert_metric(&g)?;
        Self::new(t, g.with_symmetric(true), ginv, k, n)
    }

    pub fn grid(&self) -> &GridSpec {
        self.g.grid()
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(Error::InvalidState(format!("time must be positive, got {}", self.t)));
        }
        let grid = self.grid();
        for (name, f, val) in [
            ("g", &self.g, (0, 2)),
            ("ginv", &self.ginv, (2, 0)),
            ("K", &self.k, (1, 1)),
            ("n", &self.n, (0, 0)),
        ] {
            if f.valence() != val || !f.grid().compatible(grid) {
                return Err(Error::InvalidState(format!("{name} has the wrong valence or grid")));
            }
            if f.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidState(format!("{name} has non-finite entries")));
            }
        }
        let d = self.dim();
        for p in 0..grid.npts() {
            let g = self.g.at(p);
            if !linalg::is_spd(g, d) {
                return Err(Error::InvalidState(format!("metric is not positive definite at point {p}")));
            }
            let prod = linalg::matmul(self.ginv.at(p), g, d);
            for i in 0..d {
                for j in 0..d {
                    let e = if i == j { 1.0 } else { 0.0 };
                    if (prod[i * d + j] - e).abs() > INVERSE_TOL {
                        return Err(Error::InvalidState(format!(
                            "g^-1 g deviates from the identity by {:e} at point {p}",
                            (prod[i * d + j] - e).abs()
                        )));
                    }
                }
            }
        }
        let n_min = self.n.min_value();
        if !(n_min > 0.0) {
            return Err(Error::InvalidState(format!("lapse is not positive: min n = {n_min}")));
        }
        Ok(())
    }

    /// `t K`, the rescaled second fundamental form.
    pub fn kappa(&self) -> TensorField {
        self.k.scaled(self.t)
    }
}

/// Pointwise inverse of a symmetric positive-definite (0,2) field.
pub fn invert_metric(g: &TensorField) -> Result<TensorField> {
    let d = g.dim();
    let mut ginv = TensorField::zeros(g.grid(), (2, 0));
    for p in 0..g.npts() {
        let inv = linalg::invert_spd(g.at(p), d)
            .ok_or_else(|| Error::InvalidState(format!("metric is not positive definite at point {p}")))?;
        ginv.at_mut(p).copy_from_slice(&inv);
    }
    Ok(ginv.with_symmetric(true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Scheme;

    #[test]
    fn rejects_indefinite_metric() {
        let grid = GridSpec::homogeneous(2);
        let g = TensorField::constant(&grid, (0, 2), &[1.0, 2.0, 2.0, 1.0]);
        let k = TensorField::zeros(&grid, (1, 1));
        let n = TensorField::constant(&grid, (0, 0), &[1.0]);
        assert!(SolutionState::from_metric(1.0, g, k, n).is_err());
    }

    #[test]
    fn rejects_bad_inverse_and_lapse() {
        let grid = GridSpec::new(2, vec![0], vec![8], Scheme::Spectral).unwrap();
        let id = [1.0, 0.0, 0.0, 1.0];
        let g = TensorField::constant(&grid, (0, 2), &id);
        let bad = TensorField::constant(&grid, (2, 0), &[2.0, 0.0, 0.0, 1.0]);
        let k = TensorField::zeros(&grid, (1, 1));
        let n = TensorField::constant(&grid, (0, 0), &[1.0]);
        assert!(SolutionState::new(1.0, g.clone(), bad, k.clone(), n.clone()).is_err());
        let ginv = TensorField::constant(&grid, (2, 0), &id);
        let n0 = TensorField::constant(&grid, (0, 0), &[0.0]);
        assert!(SolutionState::new(1.0, g.clone(), ginv.clone(), k.clone(), n0).is_err());
        assert!(SolutionState::new(1.0, g, ginv, k, n).is_ok());
    }
}
