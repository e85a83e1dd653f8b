//! Hamiltonian, momentum and CMC-trace residuals of a slice.

use crate::field::TensorField;
use crate::geometry::{christoffel, ricci_mixed, scalar_from_ricci, Christoffel};
use crate::linalg::{matmul, trace};
use crate::state::SolutionState;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct ConstraintResiduals {
    pub hamiltonian: TensorField,
    pub momentum: TensorField,
    pub cmc_trace: TensorField,
    /// L∞ of hamiltonian, momentum (frame norm) and cmc_trace, in that order.
    pub sup_norms: [f64; 3],
}

impl ConstraintResiduals {
    pub fn compute(state: &SolutionState) -> Result<Self> {
        let sc = scalar_from_ricci(&ricci_mixed(&state.g, &state.ginv)?);
        let chr = christoffel(&state.g, &state.ginv)?;
        let hamiltonian = hamiltonian_from(state, &sc);
        let momentum = momentum_from(state, &chr);
        let cmc_trace = cmc_residual(state);
        let mom_sup = (0..momentum.npts())
            .map(|p| momentum.at(p).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let sup_norms = [hamiltonian.max_abs(), mom_sup, cmc_trace.max_abs()];
        Ok(Self { hamiltonian, momentum, cmc_trace, sup_norms })
    }

    /// Sups rescaled to O(1) units: `t² H`, `t M`, `t (K^a_a + 1/t)`.
    pub fn rescaled_sups(&self, t: f64) -> [f64; 3] {
        [t * t * self.sup_norms[0], t * self.sup_norms[1], t * self.sup_norms[2]]
    }
}

/// `Sc - K^a_b K^b_a + t^-2`.
pub fn hamiltonian_residual(state: &SolutionState) -> Result<TensorField> {
    let sc = scalar_from_ricci(&ricci_mixed(&state.g, &state.ginv)?);
    Ok(hamiltonian_from(state, &sc))
}

pub(crate) fn hamiltonian_from(state: &SolutionState, sc: &TensorField) -> TensorField {
    let d = state.dim();
    let inv_t2 = state.t.powi(-2);
    let mut out = TensorField::zeros(state.grid(), (0, 0));
    for p in 0..state.grid().npts() {
        let k = state.k.at(p);
        out.at_mut(p)[0] = sc.value(p) - trace(&matmul(k, k, d), d) + inv_t2;
    }
    out
}

/// `∇_a K^a_i = ∂_a K^a_i + Γ^a_{ab} K^b_i - Γ^b_{ai} K^a_b`.
pub fn momentum_residual(state: &SolutionState) -> Result<TensorField> {
    let chr = christoffel(&state.g, &state.ginv)?;
    Ok(momentum_from(state, &chr))
}

pub(crate) fn momentum_from(state: &SolutionState, chr: &Christoffel) -> TensorField {
    let d = state.dim();
    let grid = state.grid();
    let mut out = TensorField::zeros(grid, (0, 1));
    let dk: Vec<(usize, TensorField)> =
        grid.active().iter().map(|&a| (a, state.k.derivative(a, 1))).collect();
    for p in 0..grid.npts() {
        let k = state.k.at(p);
        let gm = chr.mixed.at(p);
        let o = out.at_mut(p);
        for (a, f) in &dk {
            let v = f.at(p);
            for i in 0..d {
                o[i] += v[a * d + i];
            }
        }
        if gm.iter().all(|&v| v == 0.0) {
            continue;
        }
        for b in 0..d {
            let trace_ab: f64 = (0..d).map(|a| gm[(a * d + a) * d + b]).sum();
            if trace_ab != 0.0 {
                for i in 0..d {
                    o[i] += trace_ab * k[b * d + i];
                }
            }
        }
        for i in 0..d {
            let mut s = 0.0;
            for a in 0..d {
                for b in 0..d {
                    let gbai = gm[(b * d + a) * d + i];
                    if gbai != 0.0 {
                        s += gbai * k[a * d + b];
                    }
                }
            }
            o[i] -= s;
        }
    }
    out
}

/// `K^a_a + 1/t`.
pub fn cmc_residual(state: &SolutionState) -> TensorField {
    let d = state.dim();
    let mut out = TensorField::zeros(state.grid(), (0, 0));
    for p in 0..state.grid().npts() {
        out.at_mut(p)[0] = trace(state.k.at(p), d) + 1.0 / state.t;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, Scheme};
    use crate::kasner::{construct_exponents, kasner_state, Root};
    use crate::state::invert_metric;
    use std::f64::consts::PI;

    #[test]
    fn kasner_residuals_vanish() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let grid = GridSpec::new(38, vec![0], vec![8], Scheme::Spectral).unwrap();
        for t in [1.0, 0.1, 0.01] {
            let s = kasner_state(&q, t, &grid).unwrap();
            let r = ConstraintResiduals::compute(&s).unwrap();
            assert!(r.sup_norms[0] <= 1e-10 * t.powi(-2), "{:?}", r.sup_norms);
            assert_eq!(r.sup_norms[1], 0.0);
            assert!(r.sup_norms[2] <= 1e-12 / t);
        }
    }

    #[test]
    fn flat_metric_zero_k() {
        let grid = GridSpec::homogeneous(4);
        let g = TensorField::constant(&grid, (0, 2), &identity(4));
        let s = SolutionState::from_metric(1.0, g, TensorField::zeros(&grid, (1, 1)), TensorField::constant(&grid, (0, 0), &[1.0])).unwrap();
        let h = hamiltonian_residual(&s).unwrap();
        assert_eq!(h.value(0), 1.0);
    }

    #[test]
    fn scaled_k_trace() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let mut s = kasner_state(&q, 1.0, &GridSpec::homogeneous(38)).unwrap();
        s.k = s.k.scaled(1.001);
        assert!((cmc_residual(&s).value(0) + 1e-3).abs() < 1e-14);
    }

    #[test]
    fn manufactured_divergence_flat() {
        let grid = GridSpec::new(3, vec![0, 1], vec![32, 32], Scheme::Spectral).unwrap();
        let g = TensorField::constant(&grid, (0, 2), &identity(3));
        let k = TensorField::from_fn(&grid, (1, 1), |x, c| {
            c[0] = (2.0 * PI * x[0]).sin();
            c[5] = (2.0 * PI * x[1]).cos();
            c[2] = (2.0 * PI * (x[0] + x[1])).sin();
        });
        let n = TensorField::constant(&grid, (0, 0), &[1.0]);
        let s = SolutionState::from_metric(1.0, g, k, n).unwrap();
        let m = momentum_residual(&s).unwrap();
        for p in 0..grid.npts() {
            let x = grid.coords(p);
            let exact = [
                2.0 * PI * (2.0 * PI * x[0]).cos(),
                0.0,
                2.0 * PI * (2.0 * PI * (x[0] + x[1])).cos() - 2.0 * PI * (2.0 * PI * x[1]).sin(),
            ];
            for i in 0..3 {
                assert!((m.at(p)[i] - exact[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn perturbed_residual_converges() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let a = 1e-3;
        let residual = |pts: usize, scheme| {
            let grid = GridSpec::new(38, vec![0], vec![pts], scheme).unwrap();
            let mut s = kasner_state(&q, 1.0, &grid).unwrap();
            // a warped g22 carries curvature; a pure g11 bump would be a coordinate change
            let pert = TensorField::from_fn(&grid, (0, 2), |x, c| c[38 + 1] = a * (2.0 * PI * x[0]).sin());
            s.g = s.g.add(&pert).unwrap();
            s.ginv = invert_metric(&s.g).unwrap();
            hamiltonian_residual(&s).unwrap()
        };
        let reference = residual(64, Scheme::Spectral);
        assert!(reference.max_abs() > 0.1 * a && reference.max_abs() < 100.0 * a);
        let err = |pts: usize| {
            let h = residual(pts, Scheme::Fd4);
            (0..pts).map(|p| (h.value(p) - reference.value(p * (64 / pts))).abs()).fold(0.0, f64::max)
        };
        let (e16, e32) = (err(16), err(32));
        let ratio = e16 / e32;
        assert!((12.8..=19.2).contains(&ratio), "ratio {ratio}");
    }

    fn identity(d: usize) -> Vec<f64> {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        m
    }
}
