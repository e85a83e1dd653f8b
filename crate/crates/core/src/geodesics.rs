//! Past-directed causal geodesics of `-n² dt² + g_ab dx^a dx^b` and the
//! affine-length bound toward the singularity.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::TensorField;
use crate::kasner::KasnerExponents;
use crate::linalg::invert_spd;
use crate::state::SolutionState;

/// Slice data at one event.
#[derive(Debug, Clone)]
pub struct SliceSample {
    pub active: Vec<usize>,
    pub g: Vec<f64>,
    pub ginv: Vec<f64>,
    /// Mixed `K^a_b`, stored `[a][b]`.
    pub k: Vec<f64>,
    pub n: f64,
    /// `∂_a n` for every coordinate direction.
    pub dn: Vec<f64>,
    pub dt_n: f64,
    /// `∂_{α_s} g` for each active slot.
    pub dg: Vec<Vec<f64>>,
}

impl SliceSample {
    fn dim(&self) -> usize {
        self.dn.len()
    }

    /// `Γ^j_{ab} u^a u^b` of the spatial metric.
    fn gamma_uu(&self, u: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut low = vec![0.0; d];
        for (s, &al) in self.active.iter().enumerate() {
            let a = &self.dg[s];
            let au: Vec<f64> = (0..d).map(|i| (0..d).map(|j| a[i * d + j] * u[j]).sum()).collect();
            let uau: f64 = au.iter().zip(u).map(|(x, y)| x * y).sum();
            for c in 0..d {
                low[c] += u[al] * au[c];
            }
            low[al] -= 0.5 * uau;
        }
        (0..d).map(|j| (0..d).map(|c| self.ginv[j * d + c] * low[c]).sum()).collect()
    }

    /// `g_4(v, v)` with `v = (v0, v^a)`.
    pub fn causal_norm(&self, v0: f64, v: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = -self.n * self.n * v0 * v0;
        for a in 0..d {
            for b in 0..d {
                s += self.g[a * d + b] * v[a] * v[b];
            }
        }
        s
    }
}

/// Anything that can report slice data at an event `(t, x)`.
pub trait Spacetime {
    fn dim(&self) -> usize;
    fn sample(&self, t: f64, x: &[f64]) -> Result<SliceSample>;
}

/// The exact Kasner spacetime.
#[derive(Debug, Clone)]
pub struct KasnerSpacetime {
    pub q: KasnerExponents,
}

impl Spacetime for KasnerSpacetime {
    fn dim(&self) -> usize {
        self.q.dim()
    }

    fn sample(&self, t: f64, _x: &[f64]) -> Result<SliceSample> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("Kasner sample needs t > 0, got {t}")));
        }
        let d = self.q.dim();
        let mut g = vec![0.0; d * d];
        let mut ginv = vec![0.0; d * d];
        let mut k = vec![0.0; d * d];
        for (i, &qi) in self.q.as_slice().iter().enumerate() {
            g[i * d + i] = t.powf(2.0 * qi);
            ginv[i * d + i] = t.powf(-2.0 * qi);
            k[i * d + i] = -qi / t;
        }
        Ok(SliceSample { active: Vec::new(), g, ginv, k, n: 1.0, dn: vec![0.0; d], dt_n: 0.0, dg: Vec::new() })
    }
}

/// Stored simulation slices, interpolated linearly in `τ = -ln t` and with
/// periodic cubic Lagrange interpolation in space. Times up to half a slice
/// interval outside the stored range are extrapolated linearly.
#[derive(Debug, Clone)]
pub struct SliceSpacetime {
    taus: Vec<f64>,
    /// Per slice: `g`, `K`, `n`, `∂_τ n`, then `∂_s g` and `∂_s n` per active slot.
    fields: Vec<Vec<TensorField>>,
    active: Vec<usize>,
    points: Vec<usize>,
    dim: usize,
}

impl SliceSpacetime {
    /// `slices` in any order; at least two distinct times on one grid.
    pub fn new(mut slices: Vec<SolutionState>) -> Result<Self> {
        if slices.len() < 2 {
            return Err(Error::Domain("slice interpolation needs at least two slices".into()));
        }
        slices.sort_by(|a, b| b.t.total_cmp(&a.t));
        let grid = slices[0].grid().clone();
        if slices.iter().any(|s| !s.grid().compatible(&grid)) {
            return Err(Error::Domain("slices live on different grids".into()));
        }
        let taus: Vec<f64> = slices.iter().map(|s| -s.t.ln()).collect();
        if taus.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("slice times must be distinct".into()));
        }
        let m = slices.len();
        let mut fields = Vec::with_capacity(m);
        for (i, s) in slices.iter().enumerate() {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(m - 1));
            let dn_dtau = slices[hi].n.sub(&slices[lo].n)?.scaled(1.0 / (taus[hi] - taus[lo]));
            let mut f = vec![s.g.clone(), s.k.clone(), s.n.clone(), dn_dtau];
            for &a in grid.active() {
                f.push(s.g.derivative(a, 1));
            }
            for &a in grid.active() {
                f.push(s.n.derivative(a, 1));
            }
            fields.push(f);
        }
        Ok(Self { taus, fields, active: grid.active().to_vec(), points: grid.points().to_vec(), dim: grid.dim() })
    }

    pub fn t_range(&self) -> (f64, f64) {
        ((-self.taus[self.taus.len() - 1]).exp(), (-self.taus[0]).exp())
    }

    /// Flat indices and weights of the cubic stencil around `x`.
    fn stencil(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0f64)];
        for (s, &a) in self.active.iter().enumerate() {
            let n = self.points[s];
            let stride: usize = self.points[s + 1..].iter().product();
            let y = x[a].rem_euclid(1.0) * n as f64;
            let i = y.floor();
            let r = y - i;
            let w = [
                -r * (r - 1.0) * (r - 2.0) / 6.0,
                (r + 1.0) * (r - 1.0) * (r - 2.0) / 2.0,
                -(r + 1.0) * r * (r - 2.0) / 2.0,
                (r + 1.0) * r * (r - 1.0) / 6.0,
            ];
            let mut next = Vec::with_capacity(out.len() * 4);
            for &(idx, wt) in &out {
                for (o, &wo) in w.iter().enumerate() {
                    let j = (i as i64 - 1 + o as i64).rem_euclid(n as i64) as usize;
                    next.push((idx + j * stride, wt * wo));
                }
            }
            out = next;
        }
        out
    }

    fn interp(&self, slice: usize, field: usize, stencil: &[(usize, f64)]) -> Vec<f64> {
        let f = &self.fields[slice][field];
        let mut out = vec![0.0; f.ncomp()];
        for &(p, w) in stencil {
            for (o, v) in out.iter_mut().zip(f.at(p)) {
                *o += w * v;
            }
        }
        out
    }
}

impl Spacetime for SliceSpacetime {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, t: f64, x: &[f64]) -> Result<SliceSample> {
        let tau = -t.ln();
        let last = self.taus.len() - 1;
        // Runge-Kutta stages may probe a little past the stored range
        let slack_lo = 0.5 * (self.taus[1] - self.taus[0]);
        let slack_hi = 0.5 * (self.taus[last] - self.taus[last - 1]);
        if !(tau >= self.taus[0] - slack_lo && tau <= self.taus[last] + slack_hi) {
            let (lo, hi) = self.t_range();
            return Err(Error::Domain(format!("t = {t} lies outside the stored slices [{lo}, {hi}]")));
        }
        let k = self.taus.partition_point(|&s| s <= tau).clamp(1, last);
        let lam = (tau - self.taus[k - 1]) / (self.taus[k] - self.taus[k - 1]);
        let st = self.stencil(x);
        let mix = |field: usize| -> Vec<f64> {
            let a = self.interp(k - 1, field, &st);
            let b = self.interp(k, field, &st);
            a.iter().zip(&b).map(|(a, b)| (1.0 - lam) * a + lam * b).collect()
        };
        let d = self.dim;
        let ns = self.active.len();
        let mut g = mix(0);
        for i in 0..d {
            for j in (i + 1)..d {
                let v = 0.5 * (g[i * d + j] + g[j * d + i]);
                g[i * d + j] = v;
                g[j * d + i] = v;
            }
        }
        let ginv = invert_spd(&g, d).ok_or_else(|| Error::InvalidState("interpolated metric is not positive definite".into()))?;
        let n = mix(2)[0];
        let dt_n = -mix(3)[0] / t;
        let dg: Vec<Vec<f64>> = (0..ns).map(|s| mix(4 + s)).collect();
        let mut dn = vec![0.0; d];
        for (s, &a) in self.active.iter().enumerate() {
            dn[a] = mix(4 + ns + s)[0];
        }
        Ok(SliceSample { active: self.active.clone(), g, ginv, k: mix(1), n, dn, dt_n, dg })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeodesicSample {
    pub affine: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub v0: f64,
    pub v: Vec<f64>,
    pub causal_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeodesicPath {
    pub samples: Vec<GeodesicSample>,
    pub terminal_affine: f64,
}

impl GeodesicPath {
    /// `ζ̇⁰` at the start of the path.
    pub fn initial_v0(&self) -> f64 {
        self.samples[0].v0
    }

    pub fn max_causal_norm_drift(&self) -> f64 {
        let c0 = self.samples[0].causal_norm;
        self.samples.iter().map(|s| (s.causal_norm - c0).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicOptions {
    /// Affine step is `h t / |ζ̇⁰|`.
    pub h: f64,
    /// Largest admissible `g_4(ζ̇, ζ̇)` (relative to `(ζ̇⁰)²`) before the path counts as spacelike.
    pub causal_tol: f64,
    pub max_steps: usize,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self { h: 1e-3, causal_tol: 1e-8, max_steps: 10_000_000 }
    }
}

/// `(t, x, v0, v)` packed.
type Phase = Vec<f64>;

fn accel(st: &dyn Spacetime, y: &[f64]) -> Result<Phase> {
    let d = st.dim();
    let t = y[0];
    let x = &y[1..1 + d];
    let v0 = y[1 + d];
    let v = &y[2 + d..];
    let s = st.sample(t, x)?;
    let mut out = vec![0.0; 2 * d + 2];
    out[0] = v0;
    out[1..1 + d].copy_from_slice(v);
    // Γ⁰: ∂_t ln n, ∂_a ln n, -n^-1 g_ac K^c_b
    let dln: f64 = (0..d).map(|a| s.dn[a] * v[a]).sum::<f64>() / s.n;
    let kv: Vec<f64> = (0..d).map(|c| (0..d).map(|b| s.k[c * d + b] * v[b]).sum()).collect();
    let gkvv: f64 = (0..d).map(|a| v[a] * (0..d).map(|c| s.g[a * d + c] * kv[c]).sum::<f64>()).sum();
    out[1 + d] = -(s.dt_n / s.n * v0 * v0 + 2.0 * dln * v0 - gkvv / s.n);
    // Γʲ: n g^{ja}∂_a n, -n K^j_b, spatial Γ
    let guu = s.gamma_uu(v);
    for j in 0..d {
        let grad: f64 = (0..d).map(|a| s.ginv[j * d + a] * s.dn[a]).sum();
        out[2 + d + j] = -(s.n * grad * v0 * v0 - 2.0 * s.n * kv[j] * v0 + guu[j]);
    }
    Ok(out)
}

fn rk4(st: &dyn Spacetime, y: &[f64], h: f64) -> Result<Phase> {
    let shift = |k: &[f64], c: f64| -> Phase { y.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    let k1 = accel(st, y)?;
    let k2 = accel(st, &shift(&k1, 0.5 * h))?;
    let k3 = accel(st, &shift(&k2, 0.5 * h))?;
    let k4 = accel(st, &shift(&k3, h))?;
    Ok((0..y.len()).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

/// Integrate from `(t0, x0)` with velocity `(v0, v)` until `t = t_min`, with `𝒜 = 0` at the start.
pub fn integrate_geodesic(
    st: &dyn Spacetime,
    event0: (f64, &[f64]),
    velocity0: (f64, &[f64]),
    t_min: f64,
    opts: &GeodesicOptions,
) -> Result<GeodesicPath> {
    let d = st.dim();
    let (t0, x0) = event0;
    let (v00, v) = velocity0;
    if x0.len() != d || v.len() != d {
        return Err(Error::Domain(format!("event and velocity need {d} spatial components")));
    }
    if !(t_min > 0.0 && t_min < t0) {
        return Err(Error::Domain(format!("need 0 < t_min < t0, got t_min = {t_min}, t0 = {t0}")));
    }
    if !(v00 < 0.0) {
        return Err(Error::Domain(format!("velocity must be past-directed (ζ̇⁰ < 0), got {v00}")));
    }
    let s0 = st.sample(t0, x0)?;
    let c0 = s0.causal_norm(v00, v);
    let scale = s0.n * s0.n * v00 * v00;
    if c0 > opts.causal_tol * scale {
        return Err(Error::Domain(format!("initial velocity is spacelike: g4(v, v) = {c0}")));
    }
    let mut y: Phase = std::iter::once(t0).chain(x0.iter().copied()).chain(std::iter::once(v00)).chain(v.iter().copied()).collect();
    let mut affine = 0.0;
    let record = |y: &[f64], affine: f64, c: f64| GeodesicSample {
        affine,
        t: y[0],
        x: y[1..1 + d].to_vec(),
        v0: y[1 + d],
        v: y[2 + d..].to_vec(),
        causal_norm: c,
    };
    let mut samples = vec![record(&y, 0.0, c0)];
    for _ in 0..opts.max_steps {
        let h = opts.h * y[0] / y[1 + d].abs();
        let mut next = rk4(st, &y, h)?;
        let mut step = h;
        let landing = next[0] <= t_min;
        if landing {
            // secant on the step length for t(step) = t_min
            let (mut a, mut fa) = (0.0, y[0] - t_min);
            let (mut b, mut fb) = (h, next[0] - t_min);
            for _ in 0..60 {
                if fb == 0.0 || (b - a).abs() <= 1e-15 * h {
                    break;
                }
                let c = b - fb * (b - a) / (fb - fa);
                let yc = rk4(st, &y, c)?;
                a = b;
                fa = fb;
                b = c;
                fb = yc[0] - t_min;
                next = yc;
            }
            step = b;
            next[0] = t_min;
        }
        affine += step;
        let s = st.sample(next[0], &next[1..1 + d])?;
        let c = s.causal_norm(next[1 + d], &next[2 + d..]);
        if c > opts.causal_tol * (s.n * next[1 + d]).powi(2) {
            return Err(Error::SpacelikeTurn { affine, causal_norm: c });
        }
        samples.push(record(&next, affine, c));
        y = next;
        if landing {
            return Ok(GeodesicPath { samples, terminal_affine: affine });
        }
    }
    Err(Error::Domain(format!("geodesic did not reach t_min = {t_min} within {} steps", opts.max_steps)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineBound {
    pub holds: bool,
    pub bound: f64,
    pub terminal_affine: f64,
    pub margin: f64,
}

/// `𝒜_terminal ≤ |𝒜'(1)| / (1 - σ)` with `𝒜'(1) = 1/ζ̇⁰(1)`.
pub fn affine_bound_check(path: &GeodesicPath, sigma: f64) -> AffineBound {
    let bound = (1.0 / path.initial_v0()).abs() / (1.0 - sigma);
    let margin = bound - path.terminal_affine;
    AffineBound { holds: margin >= 0.0, bound, terminal_affine: path.terminal_affine, margin }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, Scheme};
    use crate::kasner::{construct_exponents, kasner_state, Root};

    fn kasner() -> KasnerSpacetime {
        KasnerSpacetime { q: construct_exponents(38, 0.001, Root::Plus).unwrap() }
    }

    #[test]
    fn vertical_geodesic() {
        let st = kasner();
        let x0 = vec![0.0; 38];
        let v = vec![0.0; 38];
        let path = integrate_geodesic(&st, (1.0, &x0), (-1.0, &v), 0.01, &GeodesicOptions::default()).unwrap();
        assert!((path.terminal_affine - 0.99).abs() < 1e-10);
        let b = affine_bound_check(&path, 0.16);
        assert!(b.holds);
        assert!((b.margin - (1.0 / 0.84 - 0.99)).abs() < 1e-10);
        let half = integrate_geodesic(&st, (1.0, &x0), (-2.0, &v), 0.01, &GeodesicOptions::default()).unwrap();
        assert!((half.terminal_affine - 0.495).abs() < 1e-10);
        assert!(affine_bound_check(&half, 0.16).holds);
    }

    #[test]
    fn tilted_geodesic_conserves_momenta() {
        let st = kasner();
        let d = 38;
        let x0 = vec![0.0; d];
        let mut v = vec![0.0; d];
        v[0] = 0.3;
        v[20] = -0.2;
        v[36] = 0.1;
        let v0 = -(1.0 + v.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let path = integrate_geodesic(&st, (1.0, &x0), (v0, &v), 0.01, &GeodesicOptions::default()).unwrap();
        let q = st.q.as_slice();
        for s in &path.samples {
            for i in [0, 20, 36] {
                let p = s.t.powf(2.0 * q[i]) * s.v[i];
                assert!((p - v[i]).abs() < 1e-8, "momentum {i} drifted: {p} vs {}", v[i]);
            }
        }
        assert!(path.max_causal_norm_drift() < 1e-8);
        let sigma = st.q.max_abs() + 1e-4;
        assert!(affine_bound_check(&path, sigma).margin >= 0.0);
    }

    #[test]
    fn reparametrisation_scales_affine_length() {
        let st = kasner();
        let x0 = vec![0.0; 38];
        let mut v = vec![0.0; 38];
        v[3] = 0.5;
        let v0 = -(1.0 + 0.25f64).sqrt();
        let a = integrate_geodesic(&st, (1.0, &x0), (v0, &v), 0.05, &GeodesicOptions::default()).unwrap();
        let v2: Vec<f64> = v.iter().map(|x| 3.0 * x).collect();
        let b = integrate_geodesic(&st, (1.0, &x0), (3.0 * v0, &v2), 0.05, &GeodesicOptions::default()).unwrap();
        assert!((b.terminal_affine * 3.0 - a.terminal_affine).abs() < 1e-10);
    }

    #[test]
    fn rejects_spacelike_and_future_directed() {
        let st = kasner();
        let x0 = vec![0.0; 38];
        let mut v = vec![0.0; 38];
        v[0] = 2.0;
        assert!(integrate_geodesic(&st, (1.0, &x0), (-1.0, &v), 0.1, &GeodesicOptions::default()).is_err());
        let v = vec![0.0; 38];
        assert!(integrate_geodesic(&st, (1.0, &x0), (1.0, &v), 0.1, &GeodesicOptions::default()).is_err());
    }

    #[test]
    fn slices_of_kasner_reproduce_vertical_path() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let grid = GridSpec::new(38, vec![0], vec![8], Scheme::Spectral).unwrap();
        let slices: Vec<SolutionState> =
            (0..=20).map(|i| kasner_state(&q, (-(i as f64) * 0.2).exp(), &grid).unwrap()).collect();
        let st = SliceSpacetime::new(slices).unwrap();
        let x0 = vec![0.3; 38];
        let v = vec![0.0; 38];
        let t_min = (-4.0f64).exp();
        let path = integrate_geodesic(&st, (1.0, &x0), (-1.0, &v), t_min, &GeodesicOptions::default()).unwrap();
        assert!((path.terminal_affine - (1.0 - t_min)).abs() < 1e-10);
    }

    #[test]
    fn slice_interpolation_is_exact_for_cubics_in_space() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let grid = GridSpec::new(38, vec![0], vec![16], Scheme::Spectral).unwrap();
        let mut a = kasner_state(&q, 1.0, &grid).unwrap();
        a.n = TensorField::scalar_from_fn(&grid, |x| 1.0 + 0.01 * (2.0 * std::f64::consts::PI * x[0]).sin());
        let b = kasner_state(&q, 0.5, &grid).unwrap();
        let st = SliceSpacetime::new(vec![a, b]).unwrap();
        let s = st.sample(1.0, &[0.25; 38]).unwrap();
        assert!((s.n - 1.01).abs() < 1e-12);
        let s = st.sample(1.0, &[0.03125; 38]).unwrap();
        let exact = 1.0 + 0.01 * (2.0 * std::f64::consts::PI * 0.03125).sin();
        assert!((s.n - exact).abs() < 1e-5);
    }
}
