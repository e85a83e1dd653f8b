//! Kasner exponent families and the exact Kasner solution.
//!
//! The exact solution is `-dt^2 + sum_i t^{2 q_i} (dx^i)^2` on `(0, 1] x T^D`, with
//! constant-mean-curvature slices `t = const` and lapse `n = 1`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::TensorField;
use crate::grid::GridSpec;
use crate::state::SolutionState;

/// Tolerance used for the two algebraic Kasner constraints.
pub const CONSTRAINT_TOL: f64 = 1e-12;

/// Upper bound (strict) on `max|q_i|` for moderately anisotropic exponents.
pub const MODERATE_BOUND: f64 = 1.0 / 6.0;

/// Which root of the quadratic for the 37th exponent to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Root {
    #[default]
    Plus,
    Minus,
}

/// A validated list of Kasner exponents, `sum q = 1 = sum q^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct KasnerExponents {
    q: Vec<f64>,
}

impl KasnerExponents {
    /// Validates both algebraic constraints to [`CONSTRAINT_TOL`].
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::Domain("Kasner exponents need at least one entry".into()));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("Kasner exponents must be finite".into()));
        }
        let sum: f64 = q.iter().sum();
        let sum_sq: f64 = q.iter().map(|v| v * v).sum();
        if (sum - 1.0).abs() > CONSTRAINT_TOL {
            return Err(Error::Domain(format!("sum of exponents is {sum}, expected 1")));
        }
        if (sum_sq - 1.0).abs() > CONSTRAINT_TOL {
            return Err(Error::Domain(format!("sum of squared exponents is {sum_sq}, expected 1")));
        }
        Ok(Self { q })
    }

    /// The fifteen `-1/6`, twenty-one `+1/6` pattern in `D = 36`. It satisfies both
    /// constraints but sits exactly on the moderate-anisotropy boundary.
    pub fn boundary_pattern_36() -> Self {
        let mut q = vec![-1.0 / 6.0; 15];
        q.extend(std::iter::repeat_n(1.0 / 6.0, 21));
        Self::new(q).expect("the D = 36 boundary pattern satisfies the Kasner constraints")
    }

    /// The flat exceptional family `(1, 0, ..., 0)`.
    pub fn flat(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        let mut q = vec![0.0; dim];
        q[0] = 1.0;
        Self::new(q)
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Summary of the algebraic properties of an exponent list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentReport {
    pub sum: f64,
    pub sum_sq: f64,
    pub max_abs: f64,
    /// `max_abs < 1/6`.
    pub moderate: bool,
    /// `dhs_margin > 0`.
    pub dhs_ok: bool,
    /// `min (2 q_i + sum_{l != i,j,k} q_l)` over distinct `i, j, k`.
    pub dhs_margin: f64,
}

/// Builds the moderately anisotropic family in `dim >= 38` dimensions:
/// fifteen copies of `-1/6 + eps`, twenty-one of `1/6 - eps`, the pair
/// `q37 = 3 eps ± sqrt(6 eps - 27 eps^2)`, `q38 = 6 eps - q37`, then zeros.
pub fn construct_exponents(dim: usize, eps: f64, root: Root) -> Result<KasnerExponents> {
    if dim < 38 {
        return Err(Error::NoModerateFamily { dim });
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!("eps must be a positive finite real, got {eps}")));
    }
    let disc = 6.0 * eps - 27.0 * eps * eps;
    if disc <= 0.0 {
        return Err(Error::Domain(format!(
            "eps = {eps} makes 6 eps - 27 eps^2 = {disc} non-positive; q37 would not be real"
        )));
    }
    let root_term = disc.sqrt();
    let q37 = match root {
        Root::Plus => 3.0 * eps + root_term,
        Root::Minus => 3.0 * eps - root_term,
    };
    let q38 = 6.0 * eps - q37;

    let mut q = Vec::with_capacity(dim);
    q.extend(std::iter::repeat_n(-1.0 / 6.0 + eps, 15));
    q.extend(std::iter::repeat_n(1.0 / 6.0 - eps, 21));
    q.push(q37);
    q.push(q38);
    q.resize(dim, 0.0);

    let max_abs = q.iter().fold(0.0_f64, |m, v: &f64| m.max(v.abs()));
    if max_abs >= MODERATE_BOUND {
        return Err(Error::Domain(format!(
            "eps = {eps} is too large: max|q_i| = {max_abs} violates the bound max|q_i| < 1/6"
        )));
    }
    KasnerExponents::new(q)
}

/// Computes sums, the anisotropy bound and the triple-index margin by exact enumeration.
pub fn validate_exponents(q: &KasnerExponents) -> Result<ExponentReport> {
    let q = q.as_slice();
    let dim = q.len();
    if dim < 3 {
        return Err(Error::Domain(format!(
            "the triple-index inequality needs at least 3 exponents, got {dim}"
        )));
    }
    let sum: f64 = q.iter().sum();
    let sum_sq: f64 = q.iter().map(|v| v * v).sum();
    let max_abs = q.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    let mut margin = f64::INFINITY;
    for i in 0..dim {
        for j in 0..dim {
            if j == i {
                continue;
            }
            for k in (j + 1)..dim {
                if k == i {
                    continue;
                }
                let rest: f64 = (0..dim)
                    .filter(|&l| l != i && l != j && l != k)
                    .map(|l| q[l])
                    .sum();
                margin = margin.min(2.0 * q[i] + rest);
            }
        }
    }

    Ok(ExponentReport {
        sum,
        sum_sq,
        max_abs,
        moderate: max_abs < MODERATE_BOUND,
        dhs_ok: margin > 0.0,
        dhs_margin: margin,
    })
}

/// The exact Kasner slice at time `t` sampled on `grid`.
pub fn kasner_state(q: &KasnerExponents, t: f64, grid: &GridSpec) -> Result<SolutionState> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("Kasner time must be positive, got {t}")));
    }
    if grid.dim() != q.dim() {
        return Err(Error::Domain(format!(
            "grid dimension {} does not match {} exponents",
            grid.dim(),
            q.dim()
        )));
    }
    let (g, ginv, k) = kasner_matrices(q, t);
    Ok(SolutionState::new_unchecked(
        t,
        TensorField::constant(grid, (0, 2), &g).with_symmetric(true),
        TensorField::constant(grid, (2, 0), &ginv).with_symmetric(true),
        TensorField::constant(grid, (1, 1), &k),
        TensorField::constant(grid, (0, 0), &[1.0]),
    ))
}

/// Row-major `(g, g^-1, K)` of the Kasner solution at time `t`.
pub fn kasner_matrices(q: &KasnerExponents, t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = q.dim();
    let mut g = vec![0.0; d * d];
    let mut ginv = vec![0.0; d * d];
    let mut k = vec![0.0; d * d];
    for (i, &qi) in q.as_slice().iter().enumerate() {
        g[i * d + i] = t.powf(2.0 * qi);
        ginv[i * d + i] = t.powf(-2.0 * qi);
        k[i * d + i] = -qi / t;
    }
    (g, ginv, k)
}

/// `C` such that the Kasner Kretschmann scalar equals `C t^-4`:
/// `4 { sum_i (q_i^2 - q_i)^2 + sum_{i<j} q_i^2 q_j^2 }`.
pub fn kretschmann_constant(q: &KasnerExponents) -> f64 {
    let q = q.as_slice();
    let diag = compensated_sum(q.iter().map(|&v| (v * v - v).powi(2)));
    let s2 = compensated_sum(q.iter().map(|&v| v * v));
    let s4 = compensated_sum(q.iter().map(|&v| v.powi(4)));
    // Σ_{i<j} q_i² q_j² = ((Σq²)² - Σq⁴) / 2
    4.0 * (diag + 0.5 * (s2 * s2 - s4))
}

/// Neumaier summation.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Scheme;

    #[test]
    fn construction_matches_hand_substitution() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let s = q.as_slice();
        let q37 = 0.003 + (0.006_f64 - 27e-6).sqrt();
        assert!((s[36] - q37).abs() < 1e-15);
        assert!((s[36] - 0.0802852).abs() < 1e-7);
        assert!((s[37] + 0.0742852).abs() < 1e-7);
        assert!((q.max_abs() - (1.0 / 6.0 - 0.001)).abs() < 1e-15);
        let sum: f64 = s.iter().sum();
        let sum_sq: f64 = s.iter().map(|v| v * v).sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        assert!((sum_sq - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn padding_with_zeros() {
        let base = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let q = construct_exponents(40, 0.001, Root::Plus).unwrap();
        assert_eq!(&q.as_slice()[..38], base.as_slice());
        assert_eq!(&q.as_slice()[38..], &[0.0, 0.0]);
    }

    #[test]
    fn minus_root_is_also_valid() {
        let q = construct_exponents(38, 0.001, Root::Minus).unwrap();
        assert!((q.as_slice()[36] - (0.003 - (0.005973_f64).sqrt())).abs() < 1e-15);
        assert!(validate_exponents(&q).unwrap().moderate);
    }

    #[test]
    fn too_few_dimensions_rejected() {
        for dim in [3, 36, 37] {
            let err = construct_exponents(dim, 0.001, Root::Plus).unwrap_err();
            assert_eq!(err, Error::NoModerateFamily { dim });
        }
    }

    #[test]
    fn large_eps_rejected_with_bound() {
        let err = construct_exponents(38, 0.01, Root::Plus).unwrap_err();
        assert!(err.to_string().contains("max|q_i| < 1/6"), "{err}");
        assert!(construct_exponents(38, 0.3, Root::Plus).is_err());
        assert!(construct_exponents(38, -1.0, Root::Plus).is_err());
    }

    #[test]
    fn flat_report() {
        let r = validate_exponents(&KasnerExponents::flat(38).unwrap()).unwrap();
        assert_eq!(r.sum, 1.0);
        assert_eq!(r.sum_sq, 1.0);
        assert_eq!(r.max_abs, 1.0);
        assert!(!r.moderate);
    }

    #[test]
    fn boundary_pattern_is_not_moderate() {
        let r = validate_exponents(&KasnerExponents::boundary_pattern_36()).unwrap();
        assert!((r.sum - 1.0).abs() < 1e-14);
        assert!((r.sum_sq - 1.0).abs() < 1e-14);
        assert_eq!(r.max_abs, 1.0 / 6.0);
        assert!(!r.moderate);
    }

    #[test]
    fn short_lists_rejected() {
        let q = KasnerExponents::new(vec![1.0, 0.0]).unwrap();
        assert!(validate_exponents(&q).is_err());
    }

    #[test]
    fn constraint_violations_rejected() {
        assert!(KasnerExponents::new(vec![0.5, 0.5, 0.0]).is_err());
        assert!(KasnerExponents::new(vec![]).is_err());
    }

    #[test]
    fn kretschmann_constant_values() {
        assert_eq!(kretschmann_constant(&KasnerExponents::flat(38).unwrap()), 0.0);
        let c = kretschmann_constant(&KasnerExponents::boundary_pattern_36());
        assert!((c - 35.0 / 6.0).abs() < 1e-14, "{c}");
    }

    #[test]
    fn kasner_state_at_unit_time() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let grid = GridSpec::homogeneous(38);
        let s = kasner_state(&q, 1.0, &grid).unwrap();
        let g = s.g.at(0);
        let k = s.k.at(0);
        for i in 0..38 {
            for j in 0..38 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert_eq!(g[i * 38 + j], id);
                assert_eq!(k[i * 38 + j], -q.as_slice()[i] * id);
            }
        }
        assert_eq!(s.n.at(0), &[1.0]);
    }

    #[test]
    fn kasner_trace_is_cmc() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let grid = GridSpec::new(38, vec![0], vec![8], Scheme::Spectral).unwrap();
        let s = kasner_state(&q, 0.1, &grid).unwrap();
        for p in 0..grid.npts() {
            let k = s.k.at(p);
            let tr: f64 = (0..38).map(|i| k[i * 38 + i]).sum();
            assert!((tr + 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kasner_metric_power_matches_exp_log() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let s = kasner_state(&q, 0.25, &GridSpec::homogeneous(38)).unwrap();
        // index 16 carries 1/6 - 0.001
        let expected = (2.0 * (1.0 / 6.0 - 0.001) * 0.25_f64.ln()).exp();
        let got = s.g.at(0)[15 * 38 + 15];
        assert!(((got - expected) / expected).abs() < 1e-14);
    }

    #[test]
    fn nonpositive_time_rejected() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let grid = GridSpec::homogeneous(38);
        assert!(kasner_state(&q, 0.0, &grid).is_err());
        assert!(kasner_state(&q, -1.0, &grid).is_err());
        assert!(kasner_state(&q, 1.0, &GridSpec::homogeneous(39)).is_err());
    }
}
