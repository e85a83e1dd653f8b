//! The elliptic CMC lapse equation, solved for `u = n - 1`:
//! `(L - t^-2 - Sc) u = Sc` with `L = g^{ab}∂_a∂_b - g^{ab}Γ^c_{ab}∂_c`.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::TensorField;
use crate::geometry::{Jet, PointMetric};
use crate::grid::GridSpec;
use crate::spectral::{differentiation_matrix, fft_line, symbol};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapseConfig {
    /// Target L² (root-mean-square) residual of the discrete equation.
    pub tol: f64,
    pub max_iterations: usize,
    /// Largest unknown count handled by dense LU.
    pub dense_limit: usize,
}

impl Default for LapseConfig {
    fn default() -> Self {
        Self { tol: 1e-12, max_iterations: 500, dense_limit: 4096 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LapseMethod {
    /// `Sc ≡ 0`, so `n ≡ 1` without a solve.
    Trivial,
    Dense,
    Krylov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LapseSolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub n_min: f64,
    pub n_max: f64,
    pub method: LapseMethod,
}

/// Pointwise coefficients of `L - c` on one slice.
struct Operator {
    grid: GridSpec,
    /// `g^{α_s α_t}` per point, `n_slots²` entries each.
    h: Vec<f64>,
    /// `g^{ab}Γ^{α_s}_{ab}` per point.
    z: Vec<f64>,
    c: Vec<f64>,
}

impl Operator {
    fn new(g: &TensorField, ginv: &TensorField, c: Vec<f64>) -> Self {
        let grid = g.grid().clone();
        let active = grid.active().to_vec();
        let ns = active.len();
        let d = g.dim();
        let jet = Jet::of(g);
        let mut h = Vec::with_capacity(grid.npts() * ns * ns);
        let mut z = Vec::with_capacity(grid.npts() * ns);
        for p in 0..grid.npts() {
            let hp = ginv.at(p);
            for &a in &active {
                for &b in &active {
                    h.push(hp[a * d + b]);
                }
            }
            let up = PointMetric::new(g, ginv, &jet, p).contracted_gamma_up();
            z.extend(active.iter().map(|&a| up[a]));
        }
        Self { grid, h, z, c }
    }

    fn ns(&self) -> usize {
        self.grid.n_active()
    }

    /// `(L - c) u`, matrix-free.
    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let ns = self.ns();
        let f = TensorField::from_data(&self.grid, (0, 0), u.to_vec()).expect("lapse vector length");
        let mut out: Vec<f64> = u.iter().zip(&self.c).map(|(u, c)| -c * u).collect();
        if ns == 0 {
            return out;
        }
        let jet = Jet::of(&f);
        for p in 0..self.grid.npts() {
            let mut v = 0.0;
            for s in 0..ns {
                for t in 0..ns {
                    v += self.h[p * ns * ns + s * ns + t] * jet.pair(s, t).value(p);
                }
                v -= self.z[p * ns + s] * jet.first[s].value(p);
            }
            out[p] += v;
        }
        out
    }

    fn dense(&self) -> DMatrix<f64> {
        let grid = &self.grid;
        let ns = self.ns();
        let npts = grid.npts();
        let (scheme, dealias) = (grid.scheme(), grid.dealias());
        let d1: Vec<Vec<f64>> =
            grid.points().iter().map(|&n| differentiation_matrix(n, 1, scheme, dealias)).collect();
        let d2: Vec<Vec<f64>> =
            grid.points().iter().map(|&n| differentiation_matrix(n, 2, scheme, dealias)).collect();
        let mut m = DMatrix::<f64>::zeros(npts, npts);
        for p in 0..npts {
            m[(p, p)] -= self.c[p];
            let idx = grid.multi_index(p);
            for s in 0..ns {
                let n_s = grid.points()[s];
                let base_s = p - idx[s] * grid.stride(s);
                for j in 0..n_s {
                    let q = base_s + j * grid.stride(s);
                    let a = self.h[p * ns * ns + s * ns + s] * d2[s][idx[s] * n_s + j]
                        - self.z[p * ns + s] * d1[s][idx[s] * n_s + j];
                    m[(p, q)] += a;
                }
                for t in 0..ns {
                    if t == s {
                        continue;
                    }
                    let n_t = grid.points()[t];
                    let hst = self.h[p * ns * ns + s * ns + t];
                    if hst == 0.0 {
                        continue;
                    }
                    let base = p - idx[s] * grid.stride(s) - idx[t] * grid.stride(t);
                    for j in 0..n_s {
                        let ds = d1[s][idx[s] * n_s + j];
                        if ds == 0.0 {
                            continue;
                        }
                        for l in 0..n_t {
                            let q = base + j * grid.stride(s) + l * grid.stride(t);
                            m[(p, q)] += hst * ds * d1[t][idx[t] * n_t + l];
                        }
                    }
                }
            }
        }
        m
    }
}

/// Inverse of the constant-coefficient operator built from grid averages.
struct FourierPreconditioner {
    grid: GridSpec,
    inv_symbol: Vec<Complex64>,
}

impl FourierPreconditioner {
    fn new(op: &Operator) -> Self {
        let grid = op.grid.clone();
        let ns = grid.n_active();
        let npts = grid.npts() as f64;
        let mean = |v: &[f64], stride: usize, off: usize| -> f64 {
            v.iter().skip(off).step_by(stride).sum::<f64>() / npts
        };
        let hbar: Vec<f64> = (0..ns * ns).map(|i| mean(&op.h, ns * ns, i)).collect();
        let zbar: Vec<f64> = (0..ns).map(|i| mean(&op.z, ns, i)).collect();
        let cbar = mean(&op.c, 1, 0);
        let (scheme, dealias) = (grid.scheme(), grid.dealias());
        let inv_symbol = (0..grid.npts())
            .map(|p| {
                let k = grid.multi_index(p);
                let s1: Vec<Complex64> =
                    (0..ns).map(|s| symbol(k[s], grid.points()[s], 1, scheme, dealias)).collect();
                let mut sym = Complex64::new(-cbar, 0.0);
                for s in 0..ns {
                    sym += hbar[s * ns + s] * symbol(k[s], grid.points()[s], 2, scheme, dealias);
                    sym -= zbar[s] * s1[s];
                    for t in 0..ns {
                        if t != s {
                            sym += hbar[s * ns + t] * s1[s] * s1[t];
                        }
                    }
                }
                1.0 / sym
            })
            .collect();
        Self { grid, inv_symbol }
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = r.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fftn(&self.grid, &mut buf, false);
        buf.iter_mut().zip(&self.inv_symbol).for_each(|(b, s)| *b *= s);
        fftn(&self.grid, &mut buf, true);
        buf.iter().map(|c| c.re).collect()
    }
}

fn fftn(grid: &GridSpec, data: &mut [Complex64], inverse: bool) {
    for slot in 0..grid.n_active() {
        let n = grid.points()[slot];
        let stride = grid.stride(slot);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for start in grid.line_starts(slot) {
            for (j, l) in line.iter_mut().enumerate() {
                *l = data[start + j * stride];
            }
            fft_line(&mut line, inverse);
            for (j, l) in line.iter().enumerate() {
                data[start + j * stride] = *l;
            }
        }
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `g^{ab}∇_a∇_b n = t^-2 (n - 1) + n Sc` for `n`.
pub fn solve_lapse(
    g: &TensorField,
    ginv: &TensorField,
    sc: &TensorField,
    t: f64,
    cfg: &LapseConfig,
) -> Result<(TensorField, LapseSolveReport)> {
    solve_lapse_forced(g, ginv, sc, t, None, cfg)
}

/// As [`solve_lapse`] with an extra source:
/// `g^{ab}∇_a∇_b n - t^-2 (n - 1) - n Sc = forcing`.
pub fn solve_lapse_forced(
    g: &TensorField,
    ginv: &TensorField,
    sc: &TensorField,
    t: f64,
    forcing: Option<&TensorField>,
    cfg: &LapseConfig,
) -> Result<(TensorField, LapseSolveReport)> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    if g.valence() != (0, 2) || ginv.valence() != (2, 0) || sc.valence() != (0, 0) {
        return Err(Error::Domain("lapse solve needs g (0,2), g^-1 (2,0) and scalar Sc".into()));
    }
    let grid = g.grid();
    for f in [ginv, sc].into_iter().chain(forcing) {
        if !grid.compatible(f.grid()) {
            return Err(Error::Domain("lapse inputs live on different grids".into()));
        }
    }
    let npts = grid.npts();
    let rhs: Vec<f64> = match forcing {
        Some(f) => sc.data().iter().zip(f.data()).map(|(s, f)| s + f).collect(),
        None => sc.data().to_vec(),
    };
    if rhs.iter().all(|&v| v == 0.0) {
        let n = TensorField::constant(grid, (0, 0), &[1.0]);
        let report = LapseSolveReport { iterations: 0, final_residual: 0.0, n_min: 1.0, n_max: 1.0, method: LapseMethod::Trivial };
        return Ok((n, report));
    }
    let inv_t2 = t.powi(-2);
    let c: Vec<f64> = sc.data().iter().map(|s| inv_t2 + s).collect();
    let c_min = c.iter().copied().fold(f64::INFINITY, f64::min);
    if !(c_min > 0.0) {
        return Err(Error::LapseIndefinite { min_coefficient: c_min });
    }
    let op = Operator::new(g, ginv, c);

    let (u, iterations, method) = if npts <= cfg.dense_limit {
        let m = op.dense();
        let lu = m.lu();
        let b = DVector::from_column_slice(&rhs);
        let mut x = lu.solve(&b).ok_or(Error::SolverDivergence { iterations: 0, final_residual: f64::NAN })?;
        // one round of iterative refinement against the matrix-free operator
        let r: Vec<f64> = rhs.iter().zip(op.apply(x.as_slice())).map(|(b, a)| b - a).collect();
        if let Some(dx) = lu.solve(&DVector::from_column_slice(&r)) {
            x += dx;
        }
        (x.as_slice().to_vec(), 1, LapseMethod::Dense)
    } else {
        let pre = FourierPreconditioner::new(&op);
        let (u, it) = bicgstab(&op, &pre, &rhs, cfg)?;
        (u, it, LapseMethod::Krylov)
    };

    let resid: Vec<f64> = rhs.iter().zip(op.apply(&u)).map(|(b, a)| b - a).collect();
    let final_residual = rms(&resid);
    if !final_residual.is_finite() || final_residual > cfg.tol {
        return Err(Error::SolverDivergence { iterations, final_residual });
    }
    let n = TensorField::from_data(grid, (0, 0), u.iter().map(|u| 1.0 + u).collect())?;
    let (n_min, n_max) = (n.min_value(), n.max_value());
    if !(n_min > 0.0) {
        return Err(Error::InvalidLapse { n_min });
    }
    Ok((n, LapseSolveReport { iterations, final_residual, n_min, n_max, method }))
}

fn bicgstab(op: &Operator, pre: &FourierPreconditioner, b: &[f64], cfg: &LapseConfig) -> Result<(Vec<f64>, usize)> {
    let npts = b.len();
    let mut x = pre.apply(b);
    let mut r: Vec<f64> = b.iter().zip(op.apply(&x)).map(|(b, a)| b - a).collect();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; npts];
    let mut p = vec![0.0; npts];
    // the final check is against the matrix-free residual, keep a small margin here
    let target = 0.5 * cfg.tol;
    for it in 1..=cfg.max_iterations {
        if rms(&r) <= target {
            return Ok((x, it - 1));
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..npts {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = pre.apply(&p);
        v = op.apply(&y);
        alpha = rho_new / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        if rms(&s) <= target {
            x.iter_mut().zip(&y).for_each(|(x, y)| *x += alpha * y);
            return Ok((x, it));
        }
        let zz = pre.apply(&s);
        let tt = op.apply(&zz);
        omega = dot(&tt, &s) / dot(&tt, &tt);
        for i in 0..npts {
            x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * tt[i];
        }
        rho = rho_new;
        if !omega.is_finite() || omega == 0.0 {
            break;
        }
    }
    let final_residual = rms(&r);
    if final_residual <= cfg.tol {
        return Ok((x, cfg.max_iterations));
    }
    Err(Error::SolverDivergence { iterations: cfg.max_iterations, final_residual })
}

/// `(‖n - 1‖_∞, t² ‖n Sc‖_∞)`, the two sides of the maximum-principle bound.
pub fn maximum_principle_sides(n: &TensorField, sc: &TensorField, t: f64) -> (f64, f64) {
    let lhs = n.data().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let rhs = n.data().iter().zip(sc.data()).map(|(n, s)| (n * s).abs()).fold(0.0, f64::max);
    (lhs, t * t * rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::scalar_curvature;
    use crate::grid::Scheme;
    use crate::kasner::{construct_exponents, kasner_state, Root};
    use crate::state::invert_metric;
    use std::f64::consts::PI;

    const W: f64 = 2.0 * PI;

    fn warped(grid: &GridSpec, a: f64) -> (TensorField, TensorField) {
        let d = grid.dim();
        let g = TensorField::from_fn(grid, (0, 2), |x, c| {
            for i in 0..d {
                c[i * d + i] = 1.0;
            }
            c[0] = 1.0 + a * (W * x[0]).sin();
            c[d + 1] = 1.0 + a * (W * x[0]).cos();
        });
        let ginv = invert_metric(&g).unwrap();
        (g, ginv)
    }

    /// Forcing that makes `n* = 1 + 0.01 sin(2πx)` exact, from analytic coefficients.
    fn manufactured(grid: &GridSpec, a: f64, t: f64, sc: &TensorField) -> TensorField {
        let mut f = TensorField::zeros(grid, (0, 0));
        for p in 0..grid.npts() {
            let x = grid.coords(p)[0];
            let (s, c) = (W * x).sin_cos();
            let (g11, g22) = (1.0 + a * s, 1.0 + a * c);
            let (dg11, dg22) = (a * W * c, -a * W * s);
            let z1 = dg11 / (2.0 * g11 * g11) - dg22 / (2.0 * g11 * g22);
            let u = 0.01 * s;
            let du = 0.01 * W * c;
            let ddu = -0.01 * W * W * s;
            let lu = ddu / g11 - z1 * du;
            f.at_mut(p)[0] = lu - (t.powi(-2) + sc.value(p)) * u - sc.value(p);
        }
        f
    }

    #[test]
    fn kasner_slice_is_trivial() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let grid = GridSpec::new(38, vec![0], vec![16], Scheme::Spectral).unwrap();
        let s = kasner_state(&q, 0.3, &grid).unwrap();
        let sc = TensorField::zeros(&grid, (0, 0));
        let (n, rep) = solve_lapse(&s.g, &s.ginv, &sc, 0.3, &LapseConfig::default()).unwrap();
        assert!(n.data().iter().all(|&v| v == 1.0));
        assert_eq!(rep.iterations, 0);
        assert!(rep.final_residual <= 1e-13);
    }

    #[test]
    fn manufactured_solution_dense() {
        let grid = GridSpec::new(3, vec![0], vec![64], Scheme::Spectral).unwrap();
        let (a, t) = (0.05, 0.5);
        let (g, ginv) = warped(&grid, a);
        let sc = scalar_curvature(&g, &ginv).unwrap();
        assert!(sc.max_abs() > 0.1);
        let f = manufactured(&grid, a, t, &sc);
        let (n, rep) = solve_lapse_forced(&g, &ginv, &sc, t, Some(&f), &LapseConfig::default()).unwrap();
        assert_eq!(rep.method, LapseMethod::Dense);
        let err = (0..64)
            .map(|p| (n.value(p) - 1.0 - 0.01 * (W * grid.coords(p)[0]).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "max error {err}");
    }

    #[test]
    fn krylov_matches_dense() {
        let grid = GridSpec::new(3, vec![0], vec![64], Scheme::Spectral).unwrap();
        let (a, t) = (0.05, 0.5);
        let (g, ginv) = warped(&grid, a);
        let sc = scalar_curvature(&g, &ginv).unwrap();
        let f = manufactured(&grid, a, t, &sc);
        let dense = solve_lapse_forced(&g, &ginv, &sc, t, Some(&f), &LapseConfig::default()).unwrap();
        let cfg = LapseConfig { dense_limit: 0, ..LapseConfig::default() };
        let (n, rep) = solve_lapse_forced(&g, &ginv, &sc, t, Some(&f), &cfg).unwrap();
        assert_eq!(rep.method, LapseMethod::Krylov);
        assert!(rep.iterations < 100);
        let diff = n.sub(&dense.0).unwrap().max_abs();
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn krylov_two_active_directions() {
        let grid = GridSpec::new(4, vec![0, 1], vec![16, 16], Scheme::Spectral).unwrap();
        let g = TensorField::from_fn(&grid, (0, 2), |x, c| {
            for i in 0..4 {
                c[i * 4 + i] = 1.0;
            }
            c[0] = 1.0 + 0.05 * (W * x[1]).sin();
            c[5] = 1.0 + 0.05 * (W * x[0]).cos();
            c[1] = 0.02 * (W * (x[0] + x[1])).sin();
            c[4] = c[1];
        });
        let ginv = invert_metric(&g).unwrap();
        let sc = scalar_curvature(&g, &ginv).unwrap();
        let dense = solve_lapse(&g, &ginv, &sc, 0.2, &LapseConfig::default()).unwrap();
        let cfg = LapseConfig { dense_limit: 0, ..LapseConfig::default() };
        let krylov = solve_lapse(&g, &ginv, &sc, 0.2, &cfg).unwrap();
        assert!(krylov.0.sub(&dense.0).unwrap().max_abs() < 1e-10);
        let (lhs, rhs) = maximum_principle_sides(&dense.0, &sc, 0.2);
        assert!(lhs <= 1.1 * rhs);
    }

    #[test]
    fn maximum_principle_on_perturbed_kasner() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let grid = GridSpec::new(38, vec![0], vec![32], Scheme::Spectral).unwrap();
        for t in [1.0, 0.5, 0.1] {
            let mut s = kasner_state(&q, t, &grid).unwrap();
            let pert = TensorField::from_fn(&grid, (0, 2), |x, c| c[38 + 1] = 1e-3 * (W * x[0]).sin());
            s.g = s.g.add(&pert).unwrap();
            s.ginv = invert_metric(&s.g).unwrap();
            let sc = scalar_curvature(&s.g, &s.ginv).unwrap();
            let (n, _) = solve_lapse(&s.g, &s.ginv, &sc, t, &LapseConfig::default()).unwrap();
            let (lhs, rhs) = maximum_principle_sides(&n, &sc, t);
            assert!(lhs > 0.0 && lhs <= 1.1 * rhs, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn indefinite_operator_reported() {
        let grid = GridSpec::new(3, vec![0], vec![16], Scheme::Spectral).unwrap();
        let (g, ginv) = warped(&grid, 0.1);
        let sc = TensorField::constant(&grid, (0, 0), &[-2.0]);
        let err = solve_lapse(&g, &ginv, &sc, 1.0, &LapseConfig::default()).unwrap_err();
        assert!(matches!(err, Error::LapseIndefinite { .. }));
    }

    #[test]
    fn iteration_cap_reports_divergence() {
        let grid = GridSpec::new(3, vec![0], vec![64], Scheme::Spectral).unwrap();
        let (g, ginv) = warped(&grid, 0.2);
        let sc = scalar_curvature(&g, &ginv).unwrap();
        let cfg = LapseConfig { tol: 1e-14, max_iterations: 1, dense_limit: 0 };
        let err = solve_lapse(&g, &ginv, &sc, 0.2, &cfg).unwrap_err();
        assert!(matches!(err, Error::SolverDivergence { iterations: 1, .. }));
    }
}
