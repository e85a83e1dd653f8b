//! Velocity-term-dominated metrics `Σ t^{2 q_i(x)} dx^i ⊗ dx^i` with spatially
//! varying Kasner exponents, and the decay of `t² Ric` toward `t = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::TensorField;
use crate::geometry::ricci_mixed;
use crate::grid::GridSpec;
use crate::kasner::{construct_exponents, KasnerExponents, Root};

#[derive(Debug, Clone)]
pub struct VtdProfile {
    pub grid: GridSpec,
    /// Exponents at every grid point.
    pub q_field: Vec<KasnerExponents>,
}

impl VtdProfile {
    /// Exponents `q(x)` given directly; each point must satisfy the Kasner constraints.
    pub fn from_fn(grid: &GridSpec, q: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let q_field = (0..grid.npts())
            .map(|p| KasnerExponents::new(q(&grid.coords(p))))
            .collect::<Result<Vec<_>>>()?;
        if q_field.iter().any(|q| q.dim() != grid.dim()) {
            return Err(Error::Domain("profile exponents must match the grid dimension".into()));
        }
        Ok(Self { grid: grid.clone(), q_field })
    }

    /// The moderate construction applied pointwise with `ε(x)`.
    pub fn from_eps(grid: &GridSpec, root: Root, eps: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let q_field = (0..grid.npts())
            .map(|p| construct_exponents(grid.dim(), eps(&grid.coords(p)), root))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: grid.clone(), q_field })
    }

    pub fn constant(grid: &GridSpec, q: &KasnerExponents) -> Result<Self> {
        if q.dim() != grid.dim() {
            return Err(Error::Domain("profile exponents must match the grid dimension".into()));
        }
        Ok(Self { grid: grid.clone(), q_field: vec![q.clone(); grid.npts()] })
    }

    pub fn max_abs_exponent(&self) -> f64 {
        self.q_field.iter().map(|q| q.max_abs()).fold(0.0, f64::max)
    }
}

/// `g_ii(t, x) = t^{2 q_i(x)}`.
pub fn vtd_metric(profile: &VtdProfile, t: f64) -> Result<TensorField> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    let d = profile.grid.dim();
    let mut g = TensorField::zeros(&profile.grid, (0, 2)).with_symmetric(true);
    for (p, q) in profile.q_field.iter().enumerate() {
        let c = g.at_mut(p);
        for (i, &qi) in q.as_slice().iter().enumerate() {
            c[i * d + i] = t.powf(2.0 * qi);
        }
    }
    Ok(g)
}

fn vtd_inverse(profile: &VtdProfile, t: f64) -> TensorField {
    let d = profile.grid.dim();
    let mut h = TensorField::zeros(&profile.grid, (2, 0)).with_symmetric(true);
    for (p, q) in profile.q_field.iter().enumerate() {
        let c = h.at_mut(p);
        for (i, &qi) in q.as_slice().iter().enumerate() {
            c[i * d + i] = t.powf(-2.0 * qi);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub t: Vec<f64>,
    /// `sup_{x, i, j} |t² Ric^i_j|` at each `t`.
    pub sup_t2_ricci: Vec<f64>,
    /// Least-squares slope of `ln sup` against `ln t`; `None` when some sup vanishes.
    pub slope: Option<f64>,
    /// Every sup strictly below its predecessor.
    pub strictly_decreasing: bool,
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn ricci_decay_check(profile: &VtdProfile, t_list: &[f64]) -> Result<DecayReport> {
    if t_list.len() < 3 {
        return Err(Error::Config(format!("the decay fit needs at least 3 times, got {}", t_list.len())));
    }
    if t_list.iter().any(|&t| !(t > 0.0)) || t_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("t_list must be positive and strictly decreasing".into()));
    }
    let decades = (t_list[0] / t_list[t_list.len() - 1]).log10();
    if decades < 1.5 - 1e-12 {
        return Err(Error::Config(format!("t_list spans {decades:.2} decades; at least 1.5 are needed")));
    }
    let mut sups = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let g = vtd_metric(profile, t)?;
        let ric = ricci_mixed(&g, &vtd_inverse(profile, t))?;
        sups.push(t * t * ric.max_abs());
    }
    let slope = if sups.iter().all(|&s| s > 0.0) {
        let lx: Vec<f64> = t_list.iter().map(|t| t.ln()).collect();
        let ly: Vec<f64> = sups.iter().map(|s| s.ln()).collect();
        Some(fit_slope(&lx, &ly))
    } else {
        None
    };
    let strictly_decreasing = sups.windows(2).all(|w| w[1] < w[0]);
    Ok(DecayReport { t: t_list.to_vec(), sup_t2_ricci: sups, slope, strictly_decreasing })
}

/// `n` log-spaced times from `t_hi` down to `t_lo`.
pub fn log_times(t_hi: f64, t_lo: f64, n: usize) -> Vec<f64> {
    let (a, b) = (t_hi.ln(), t_lo.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Exponents on the `D = 3` Kasner circle at angle `θ`.
pub fn kasner_circle(theta: f64) -> Vec<f64> {
    use std::f64::consts::PI;
    (0..3)
        .map(|i| 1.0 / 3.0 + 2.0 / 3.0 * (theta - 2.0 * PI * i as f64 / 3.0).cos())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Scheme;
    use std::f64::consts::PI;

    fn grid38() -> GridSpec {
        GridSpec::new(38, vec![0], vec![32], Scheme::Spectral).unwrap()
    }

    #[test]
    fn constant_profile_gives_kasner() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let prof = VtdProfile::constant(&grid38(), &q).unwrap();
        let g = vtd_metric(&prof, 0.3).unwrap();
        for (i, &qi) in q.as_slice().iter().enumerate() {
            assert_eq!(g.at(7)[i * 38 + i], 0.3f64.powf(2.0 * qi));
        }
        let rep = ricci_decay_check(&prof, &log_times(0.1, 1e-3, 5)).unwrap();
        assert!(rep.sup_t2_ricci.iter().all(|&s| s == 0.0));
        assert_eq!(rep.slope, None);
    }

    #[test]
    fn unit_time_is_identity() {
        let prof = VtdProfile::from_eps(&grid38(), Root::Plus, |x| 0.001 * (1.0 + 0.5 * (2.0 * PI * x[0]).sin())).unwrap();
        let g = vtd_metric(&prof, 1.0).unwrap();
        for p in 0..32 {
            for i in 0..38 {
                assert_eq!(g.at(p)[i * 38 + i], 1.0);
            }
        }
    }

    #[test]
    fn pointwise_construction() {
        let prof = VtdProfile::from_eps(&grid38(), Root::Plus, |x| 0.001 * (1.0 + 0.5 * (2.0 * PI * x[0]).sin())).unwrap();
        // grid point 8 of 32 is x = 0.25
        let q = construct_exponents(38, 0.0015, Root::Plus).unwrap();
        let g = vtd_metric(&prof, 0.2).unwrap();
        for (i, &qi) in q.as_slice().iter().enumerate() {
            let want = 0.2f64.powf(2.0 * qi);
            assert!((g.at(8)[i * 38 + i] - want).abs() <= 1e-15 * want);
        }
        for q in &prof.q_field {
            let s: f64 = q.as_slice().iter().sum();
            let s2: f64 = q.as_slice().iter().map(|v| v * v).sum();
            assert!((s - 1.0).abs() <= 1e-12 && (s2 - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn circle_is_kasner() {
        for th in [0.0, 0.3, 1.7] {
            let q = kasner_circle(th);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn fit_rejects_short_lists() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let prof = VtdProfile::constant(&grid38(), &q).unwrap();
        assert!(matches!(ricci_decay_check(&prof, &[0.1, 0.01]), Err(Error::Config(_))));
        assert!(matches!(ricci_decay_check(&prof, &[0.1, 0.05, 0.02]), Err(Error::Config(_))));
        assert!((fit_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-15);
    }
}
