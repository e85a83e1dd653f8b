//! Periodic grids on the unit torus with a few "active" directions.
//!
//! Fields are constant along every inactive direction, so only the active
//! directions carry grid points. All `D^{l+m}` tensor components are kept.

use crate::error::{Error, Result};

/// Spatial derivative discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Fourier pseudo-spectral differentiation.
    #[default]
    Spectral,
    /// Fourth-order centered finite differences.
    Fd4,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Scheme::Spectral),
            "fd4" => Ok(Scheme::Fd4),
            other => Err(Error::Config(format!(
                "unknown derivative scheme '{other}' (expected 'spectral' or 'fd4')"
            ))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Spectral => write!(f, "spectral"),
            Scheme::Fd4 => write!(f, "fd4"),
        }
    }
}

/// Maximum number of active directions.
pub const MAX_ACTIVE: usize = 3;
/// Minimum number of points along an active direction.
pub const MIN_POINTS: usize = 8;

/// Grid description. Directions are 0-based here; files and the CLI use 1-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    dim: usize,
    active: Vec<usize>,
    points: Vec<usize>,
    scheme: Scheme,
    dealias: bool,
}

impl GridSpec {
    pub fn new(dim: usize, active: Vec<usize>, points: Vec<usize>, scheme: Scheme) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if active.len() > MAX_ACTIVE {
            return Err(Error::Config(format!(
                "at most {MAX_ACTIVE} active directions are supported, got {}",
                active.len()
            )));
        }
        if active.len() != points.len() {
            return Err(Error::Config(format!(
                "{} active directions but {} point counts",
                active.len(),
                points.len()
            )));
        }
        for (slot, &a) in active.iter().enumerate() {
            if a >= dim {
                return Err(Error::Config(format!(
                    "active direction {} is outside 1..={dim}",
                    a + 1
                )));
            }
            if active[..slot].contains(&a) {
                return Err(Error::Config(format!("active direction {} repeated", a + 1)));
            }
        }
        for &n in &points {
            if n < MIN_POINTS || n % 2 != 0 {
                return Err(Error::Config(format!(
                    "points per active direction must be even and >= {MIN_POINTS}, got {n}"
                )));
            }
        }
        Ok(Self { dim, active, points, scheme, dealias: false })
    }

    /// A single-point grid for spatially homogeneous data.
    pub fn homogeneous(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim, active: Vec::new(), points: Vec::new(), scheme: Scheme::Spectral, dealias: false }
    }

    /// Turns the 2/3-rule filter on spectral derivatives on or off.
    pub fn with_dealias(mut self, on: bool) -> Self {
        self.dealias = on;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn dealias(&self) -> bool {
        self.dealias
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    /// Total number of grid points (1 for a homogeneous grid).
    pub fn npts(&self) -> usize {
        self.points.iter().product()
    }

    /// Slot of `direction` among the active directions.
    pub fn slot_of(&self, direction: usize) -> Option<usize> {
        self.active.iter().position(|&a| a == direction)
    }

    pub fn is_active(&self, direction: usize) -> bool {
        self.slot_of(direction).is_some()
    }

    /// Flat-index stride of an active slot; the last slot varies fastest.
    pub fn stride(&self, slot: usize) -> usize {
        self.points[slot + 1..].iter().product()
    }

    /// Grid index along each active slot of flat point `p`.
    pub fn multi_index(&self, p: usize) -> Vec<usize> {
        (0..self.n_active())
            .map(|s| (p / self.stride(s)) % self.points[s])
            .collect()
    }

    /// Coordinates in `[0, 1)` along each active slot of flat point `p`.
    pub fn coords(&self, p: usize) -> Vec<f64> {
        self.multi_index(p)
            .iter()
            .zip(&self.points)
            .map(|(&i, &n)| i as f64 / n as f64)
            .collect()
    }

    /// First flat index of every grid line running along `slot`.
    pub fn line_starts(&self, slot: usize) -> Vec<usize> {
        let stride = self.stride(slot);
        let n = self.points[slot];
        (0..self.npts()).filter(|p| (p / stride).is_multiple_of(n)).collect()
    }

    /// True when both grids sample the same torus the same way.
    pub fn compatible(&self, other: &GridSpec) -> bool {
        self.dim == other.dim && self.active == other.active && self.points == other.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(0, vec![], vec![], Scheme::Spectral).is_err());
        assert!(GridSpec::new(4, vec![0, 0], vec![8, 8], Scheme::Spectral).is_err());
        assert!(GridSpec::new(4, vec![4], vec![8], Scheme::Spectral).is_err());
        assert!(GridSpec::new(4, vec![0], vec![6], Scheme::Spectral).is_err());
        assert!(GridSpec::new(4, vec![0], vec![9], Scheme::Spectral).is_err());
        assert!(GridSpec::new(5, vec![0, 1, 2, 3], vec![8; 4], Scheme::Spectral).is_err());
        assert!(GridSpec::new(4, vec![0], vec![8, 8], Scheme::Spectral).is_err());
    }

    #[test]
    fn indexing_last_slot_fastest() {
        let g = GridSpec::new(5, vec![1, 3], vec![8, 10], Scheme::Spectral).unwrap();
        assert_eq!(g.npts(), 80);
        assert_eq!(g.stride(0), 10);
        assert_eq!(g.stride(1), 1);
        assert_eq!(g.multi_index(23), vec![2, 3]);
        assert_eq!(g.coords(23), vec![0.25, 0.3]);
        assert_eq!(g.line_starts(0).len(), 10);
        assert_eq!(g.line_starts(1).len(), 8);
        assert_eq!(g.slot_of(3), Some(1));
        assert!(!g.is_active(0));
    }

    #[test]
    fn homogeneous_has_one_point() {
        let g = GridSpec::homogeneous(38);
        assert_eq!(g.npts(), 1);
        assert!(g.coords(0).is_empty());
    }
}
