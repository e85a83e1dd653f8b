//! Christoffel symbols and curvature of the spatial metric, the spacetime
//! curvature blocks of a CMC slice, and the Kretschmann scalar.
//!
//! Index conventions: `Γ_{iak} = g_{ab} Γ^b_{ik}` keeps the lowered index in the
//! middle and is stored `[i][a][k]`; the mixed symbol `Γ^i_{jk}` is stored
//! `[i][j][k]`. Riemann follows `∇_a∇_b X_c - ∇_b∇_a X_c = Riem_{abcd} X^d`.
//!
//! Metric derivatives only exist along active directions, which keeps the Ricci
//! evaluation at a handful of `D x D` matrix products per point.

use crate::error::{Error, Result};
use crate::field::TensorField;
use crate::linalg::{self, frobenius_dot, matmul, matmul3, trace};
use crate::norms::g_norm_sq_at;
use crate::state::SolutionState;

/// First and second coordinate derivatives of a field along the active directions.
#[derive(Debug, Clone)]
pub struct Jet {
    /// `∂_s T`, one field per active slot.
    pub first: Vec<TensorField>,
    /// `∂_s ∂_t T`, indexed by [`Jet::pair`].
    pub second: Vec<TensorField>,
    n_slots: usize,
}

impl Jet {
    pub fn of(f: &TensorField) -> Self {
        let active = f.grid().active().to_vec();
        let n = active.len();
        let first: Vec<TensorField> = active.iter().map(|&a| f.derivative(a, 1)).collect();
        let mut second = Vec::with_capacity(n * n);
        for s in 0..n {
            for t in 0..n {
                second.push(if s == t {
                    f.derivative(active[s], 2)
                } else {
                    first[s].derivative(active[t], 1)
                });
            }
        }
        // mixed partials symmetric by construction
        for s in 0..n {
            for t in (s + 1)..n {
                let avg = second[s * n + t].axpy(1.0, &second[t * n + s]).unwrap().scaled(0.5);
                second[s * n + t] = avg.clone();
                second[t * n + s] = avg;
            }
        }
        Self { first, second, n_slots: n }
    }

    pub fn pair(&self, s: usize, t: usize) -> &TensorField {
        &self.second[s * self.n_slots + t]
    }
}

/// Metric data at one grid point.
pub(crate) struct PointMetric<'a> {
    pub d: usize,
    pub active: &'a [usize],
    pub h: &'a [f64],
    pub a: Vec<&'a [f64]>,
    pub b: Vec<&'a [f64]>,
}

impl<'a> PointMetric<'a> {
    pub fn new(g: &'a TensorField, ginv: &'a TensorField, jet: &'a Jet, p: usize) -> Self {
        Self {
            d: g.dim(),
            active: g.grid().active(),
            h: ginv.at(p),
            a: jet.first.iter().map(|f| f.at(p)).collect(),
            b: jet.second.iter().map(|f| f.at(p)).collect(),
        }
    }

    fn n_slots(&self) -> usize {
        self.active.len()
    }

    fn bb(&self, s: usize, t: usize) -> &[f64] {
        self.b[s * self.n_slots() + t]
    }

    pub fn is_flat_jet(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|m| m.iter().all(|&v| v == 0.0))
    }

    /// `∂_i ∂_j g_{kl}`.
    fn ddg(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let si = self.active.iter().position(|&x| x == i);
        let sj = self.active.iter().position(|&x| x == j);
        match (si, sj) {
            (Some(s), Some(t)) => self.bb(s, t)[k * self.d + l],
            _ => 0.0,
        }
    }

    /// Lowered Christoffel symbols `Γ_{iak} = ½(∂_i g_ak + ∂_k g_ia - ∂_a g_ik)`.
    pub fn gamma_lower(&self) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; d * d * d];
        for (s, &al) in self.active.iter().enumerate() {
            let a_s = self.a[s];
            for x in 0..d {
                for y in 0..d {
                    let v = 0.5 * a_s[x * d + y];
                    if v == 0.0 {
                        continue;
                    }
                    // ∂_i g_ak with i = al
                    out[(al * d + x) * d + y] += v;
                    // ∂_k g_ia with k = al: i = x, a = y
                    out[(x * d + y) * d + al] += v;
                    // -∂_a g_ik with a = al: i = x, k = y
                    out[(x * d + al) * d + y] -= v;
                }
            }
        }
        out
    }

    /// Mixed symbols `Γ^i_{jk} = g^{ia} Γ_{jak}` from the lowered ones.
    pub fn gamma_mixed(&self, lower: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; d * d * d];
        for j in 0..d {
            for a in 0..d {
                for k in 0..d {
                    let v = lower[(j * d + a) * d + k];
                    if v == 0.0 {
                        continue;
                    }
                    for i in 0..d {
                        out[(i * d + j) * d + k] += self.h[i * d + a] * v;
                    }
                }
            }
        }
        out
    }

    /// `v_b = g^{cd} Γ_{cbd}`, the contracted lowered symbol.
    pub fn contracted_gamma(&self) -> Vec<f64> {
        let d = self.d;
        let mut v = vec![0.0; d];
        for (s, &al) in self.active.iter().enumerate() {
            let ah = matmul(self.a[s], self.h, d);
            for b in 0..d {
                v[b] += ah[b * d + al];
            }
            v[al] -= 0.5 * frobenius_dot(self.h, self.a[s]);
        }
        v
    }

    /// `g^{ab} Γ^c_{ab}` as a vector over `c`.
    pub fn contracted_gamma_up(&self) -> Vec<f64> {
        let v = self.contracted_gamma();
        mat_vec(self.h, &v, self.d)
    }

    /// Mixed Ricci tensor `Ric^i_j` in matrix form.
    pub fn ricci_mixed(&self) -> Vec<f64> {
        let d = self.d;
        let n = self.n_slots();
        let h = self.h;
        let mut inner = vec![0.0; d * d];
        if self.is_flat_jet() {
            return inner;
        }

        // second-derivative terms
        for s in 0..n {
            let e = self.active[s];
            for t in 0..n {
                let c = self.active[t];
                let bst = self.bb(s, t);
                let hb = matmul(h, bst, d);
                let bh = matmul(bst, h, d);
                for j in 0..d {
                    // ∂_e∂_c g_dj contracted with g^{cd}
                    inner[e * d + j] += 0.5 * hb[c * d + j];
                }
                for x in 0..d {
                    // ∂_c∂_j g_ed with j = c' (active), contracted on (c, d)
                    inner[x * d + c] += 0.5 * bh[x * d + e];
                }
                // -∂_e∂_j g_cd g^{cd}
                inner[e * d + c] -= 0.5 * trace(&hb, d);
                // -∂_c∂_d g_ej g^{cd}
                let hcd = h[e * d + c];
                if hcd != 0.0 {
                    for (o, v) in inner.iter_mut().zip(bst) {
                        *o -= 0.5 * hcd * v;
                    }
                }
            }
        }

        // g^{ab} g^{cd} Γ_{eac} Γ_{jbd}
        let ah: Vec<Vec<f64>> = self.a.iter().map(|a| matmul(a, h, d)).collect();
        let ha: Vec<Vec<f64>> = self.a.iter().map(|a| matmul(h, a, d)).collect();
        for s in 0..n {
            let al_s = self.active[s];
            for t in 0..n {
                let al_t = self.active[t];
                let st = matmul(&ha[t], h, d);
                inner[al_s * d + al_t] += 0.25 * frobenius_dot(self.a[s], &st);
                let aha = matmul(&ah[s], self.a[t], d);
                let hst = h[al_s * d + al_t];
                for e in 0..d {
                    let ahs_e = ah[s][e * d + al_t];
                    for j in 0..d {
                        inner[e * d + j] += 0.5 * aha[e * d + j] * hst
                            - 0.5 * ahs_e * ha[t][al_s * d + j];
                    }
                }
            }
        }

        // - g^{ab} g^{cd} Γ_{eaj} Γ_{cbd}
        let v = self.contracted_gamma();
        let z = mat_vec(h, &v, d);
        for s in 0..n {
            let al = self.active[s];
            let az = mat_vec(self.a[s], &z, d);
            for j in 0..d {
                inner[al * d + j] -= 0.5 * az[j];
                inner[j * d + al] -= 0.5 * az[j];
            }
            let zs = z[al];
            for (o, v) in inner.iter_mut().zip(self.a[s]) {
                *o += 0.5 * zs * v;
            }
        }

        matmul(h, &inner, d)
    }

    /// Full covariant Riemann tensor `Riem_{ijkl}` at this point.
    pub fn riemann(&self) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; d * d * d * d];
        if self.is_flat_jet() {
            return out;
        }
        let idx = |i: usize, j: usize, k: usize, l: usize| ((i * d + j) * d + k) * d + l;

        // ½{∂_j∂_k g_il + ∂_i∂_l g_jk - ∂_i∂_k g_jl - ∂_j∂_l g_ik}
        for &x in self.active {
            for &y in self.active {
                for u in 0..d {
                    for w in 0..d {
                        let v = 0.5 * self.ddg(x, y, u, w);
                        if v == 0.0 {
                            continue;
                        }
                        // (j,k) = (x,y), (i,l) = (u,w)
                        out[idx(u, x, y, w)] += v;
                        // (i,l) = (x,y), (j,k) = (u,w)
                        out[idx(x, u, w, y)] += v;
                        // (i,k) = (x,y), (j,l) = (u,w)
                        out[idx(x, u, y, w)] -= v;
                        // (j,l) = (x,y), (i,k) = (u,w)
                        out[idx(u, x, w, y)] -= v;
                    }
                }
            }
        }

        // g^{ab}Γ_{ial}Γ_{jbk} - g^{ab}Γ_{iak}Γ_{jbl} = X[i,l,j,k] - X[i,k,j,l],
        // X[i,l,j,k] = Σ_a Γ_{ial} Γ^a_{jk}
        let lower = self.gamma_lower();
        let mixed = self.gamma_mixed(&lower);
        let mut x_il = vec![0.0; d * d];
        for i in 0..d {
            let nz: Vec<(usize, usize, f64)> = (0..d)
                .flat_map(|a| (0..d).map(move |l| (a, l)))
                .filter_map(|(a, l)| {
                    let v = lower[(i * d + a) * d + l];
                    (v != 0.0).then_some((a, l, v))
                })
                .collect();
            if nz.is_empty() {
                continue;
            }
            for j in 0..d {
                x_il.iter_mut().for_each(|v| *v = 0.0);
                for &(a, l, v) in &nz {
                    let row = &mixed[(a * d + j) * d..(a * d + j + 1) * d];
                    let dst = &mut x_il[l * d..(l + 1) * d];
                    for (o, m) in dst.iter_mut().zip(row) {
                        *o += v * m;
                    }
                }
                // x_il[l][k] = X[i,l,j,k]
                for k in 0..d {
                    for l in 0..d {
                        let xv = x_il[l * d + k];
                        if xv != 0.0 {
                            out[idx(i, j, k, l)] += xv;
                            out[idx(i, j, l, k)] -= xv;
                        }
                    }
                }
            }
        }
        out
    }
}

pub(crate) fn mat_vec(m: &[f64], v: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|i| m[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn check_metric(g: &TensorField, ginv: &TensorField) -> Result<()> {
    if g.valence() != (0, 2) || ginv.valence() != (2, 0) || !g.grid().compatible(ginv.grid()) {
        return Err(Error::Domain("geometry needs a (0,2) metric and its (2,0) inverse on one grid".into()));
    }
    Ok(())
}

/// Lowered and mixed Christoffel symbols.
#[derive(Debug, Clone)]
pub struct Christoffel {
    /// `Γ_{iak}`, valence (0,3).
    pub lower: TensorField,
    /// `Γ^i_{jk}`, valence (1,2).
    pub mixed: TensorField,
}

pub fn christoffel(g: &TensorField, ginv: &TensorField) -> Result<Christoffel> {
    check_metric(g, ginv)?;
    let jet = Jet::of(g);
    let mut lower = TensorField::zeros(g.grid(), (0, 3));
    let mut mixed = TensorField::zeros(g.grid(), (1, 2));
    for p in 0..g.npts() {
        let pm = PointMetric::new(g, ginv, &jet, p);
        let lo = pm.gamma_lower();
        mixed.at_mut(p).copy_from_slice(&pm.gamma_mixed(&lo));
        lower.at_mut(p).copy_from_slice(&lo);
    }
    Ok(Christoffel { lower, mixed })
}

/// `Ric^i_j` of `g`.
pub fn ricci_mixed(g: &TensorField, ginv: &TensorField) -> Result<TensorField> {
    check_metric(g, ginv)?;
    let jet = Jet::of(g);
    Ok(ricci_from_jet(g, ginv, &jet))
}

pub(crate) fn ricci_from_jet(g: &TensorField, ginv: &TensorField, jet: &Jet) -> TensorField {
    let mut ric = TensorField::zeros(g.grid(), (1, 1));
    for p in 0..g.npts() {
        let r = PointMetric::new(g, ginv, jet, p).ricci_mixed();
        ric.at_mut(p).copy_from_slice(&r);
    }
    ric
}

/// `Sc = Ric^a_a`.
pub fn scalar_from_ricci(ric: &TensorField) -> TensorField {
    let d = ric.dim();
    let mut sc = TensorField::zeros(ric.grid(), (0, 0));
    for p in 0..ric.npts() {
        sc.at_mut(p)[0] = trace(ric.at(p), d);
    }
    sc
}

pub fn scalar_curvature(g: &TensorField, ginv: &TensorField) -> Result<TensorField> {
    Ok(scalar_from_ricci(&ricci_mixed(g, ginv)?))
}

/// Covariant Riemann tensor, valence (0,4).
pub fn riemann(g: &TensorField, ginv: &TensorField) -> Result<TensorField> {
    check_metric(g, ginv)?;
    let jet = Jet::of(g);
    let mut out = TensorField::zeros(g.grid(), (0, 4));
    for p in 0..g.npts() {
        out.at_mut(p).copy_from_slice(&PointMetric::new(g, ginv, &jet, p).riemann());
    }
    Ok(out)
}

/// Christoffels, Ricci, scalar curvature and (optionally) Riemann of one metric.
#[derive(Debug, Clone)]
pub struct GeometryCache {
    pub gamma_lower: TensorField,
    pub gamma_mixed: TensorField,
    pub ricci_mixed: TensorField,
    pub scalar_curv: TensorField,
    pub riemann: Option<TensorField>,
}

impl GeometryCache {
    pub fn compute(g: &TensorField, ginv: &TensorField, with_riemann: bool) -> Result<Self> {
        let Christoffel { lower, mixed } = christoffel(g, ginv)?;
        let ricci = ricci_mixed(g, ginv)?;
        let scalar_curv = scalar_from_ricci(&ricci);
        let riemann = if with_riemann { Some(riemann(g, ginv)?) } else { None };
        Ok(Self { gamma_lower: lower, gamma_mixed: mixed, ricci_mixed: ricci, scalar_curv, riemann })
    }
}

/// Spacetime curvature of a CMC slice split into its index blocks.
#[derive(Debug, Clone)]
pub struct CurvatureBlocks {
    /// `R_{ab}^{cd}` stored `[c][d][a][b]`, valence (2,2).
    pub spatial_block: TensorField,
    /// `R_{a0}^{c0}` stored `[c][a]`, valence (1,1).
    pub mixed_block: TensorField,
    /// `n^{-1} R_{0b}^{cd}` stored `[c][d][b]`, valence (2,1).
    pub zero_block: TensorField,
    /// `Riem4_{αβγδ} Riem4^{αβγδ}`.
    pub kretschmann: TensorField,
}

struct SliceJets {
    g: Jet,
    k: Jet,
    n: Jet,
}

/// Blocks at one point: (spatial `D^4`, mixed `D^2`, zero `D^3`).
fn blocks_at(
    state: &SolutionState,
    dt_tk: &TensorField,
    jets: &SliceJets,
    p: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = state.dim();
    let t = state.t;
    let pm = PointMetric::new(&state.g, &state.ginv, &jets.g, p);
    let h = pm.h;
    let k = state.k.at(p);
    let n = state.n.value(p);
    let active = state.grid().active();

    // R_ab^cd = K^c_a K^d_b - K^d_a K^c_b + Riem_ab^cd
    let riem = pm.riemann();
    let mut spatial = vec![0.0; d * d * d * d];
    for c in 0..d {
        for dd in 0..d {
            for a in 0..d {
                let kca = k[c * d + a];
                let kda = k[dd * d + a];
                if kca == 0.0 && kda == 0.0 {
                    continue;
                }
                for b in 0..d {
                    spatial[((c * d + dd) * d + a) * d + b] = kca * k[dd * d + b] - kda * k[c * d + b];
                }
            }
        }
    }
    for a in 0..d {
        for b in 0..d {
            let block = &riem[(a * d + b) * d * d..(a * d + b + 1) * d * d];
            if block.iter().all(|&v| v == 0.0) {
                continue;
            }
            let raised = matmul3(h, block, h, d);
            for c in 0..d {
                for dd in 0..d {
                    spatial[((c * d + dd) * d + a) * d + b] += raised[c * d + dd];
                }
            }
        }
    }

    // first and second derivatives of n at this point, by coordinate direction
    let mut dn = vec![0.0; d];
    for (s, &al) in active.iter().enumerate() {
        dn[al] = jets.n.first[s].value(p);
    }
    let lower = pm.gamma_lower();
    let mixed_gamma = pm.gamma_mixed(&lower);

    // R_a0^c0 = t^-1 K^c_a + K^c_e K^e_a + Δ_a0^c0
    let kk = matmul(k, k, d);
    let dtk = dt_tk.at(p);
    let mut mixed = vec![0.0; d * d];
    for c in 0..d {
        for a in 0..d {
            let kca = k[c * d + a];
            let mut v = kca / t + kk[c * d + a];
            v += -dtk[c * d + a] / (t * n) + (1.0 / n - 1.0) * kca / t;
            // -n^-1 g^{ec} ∂_a∂_e n + n^-1 g^{ec} Γ^f_{ae} ∂_f n
            if let Some(sa) = active.iter().position(|&x| x == a) {
                for (se, &e) in active.iter().enumerate() {
                    let ddn = jets.n.pair(sa, se).value(p);
                    v -= h[e * d + c] * ddn / n;
                }
            }
            for e in 0..d {
                let hec = h[e * d + c];
                if hec == 0.0 {
                    continue;
                }
                let mut gdn = 0.0;
                for &f in active {
                    gdn += mixed_gamma[(f * d + a) * d + e] * dn[f];
                }
                v += hec * gdn / n;
            }
            mixed[c * d + a] = v;
        }
    }

    // n^-1 R_0b^cd = g^{ce}∂_e K^d_b - g^{de}∂_e K^c_b + g^{ce}Γ^d_{ef}K^f_b
    //   - g^{ce}Γ^f_{eb}K^d_f - g^{de}Γ^c_{ef}K^f_b + g^{de}Γ^f_{eb}K^c_f
    // Y[c][d][b] := g^{ce}∂_e K^d_b + g^{ce}Γ^d_{ef}K^f_b - g^{ce}Γ^f_{eb}K^d_f,
    // zero block = Y[c][d][b] - Y[d][c][b].
    let mut w = vec![0.0; d * d * d]; // w[e][d][b] before contraction with g^{ce}
    for (s, &e) in active.iter().enumerate() {
        let dk = jets.k.first[s].at(p);
        for x in 0..d {
            for b in 0..d {
                w[(e * d + x) * d + b] += dk[x * d + b];
            }
        }
    }
    for x in 0..d {
        // Γ^x_{e·} K, (e,b)
        let gam = &mixed_gamma[x * d * d..(x + 1) * d * d];
        if gam.iter().any(|&v| v != 0.0) {
            let gk = matmul(gam, k, d);
            for e in 0..d {
                for b in 0..d {
                    w[(e * d + x) * d + b] += gk[e * d + b];
                }
            }
        }
    }
    for e in 0..d {
        for f in 0..d {
            for b in 0..d {
                let gfeb = mixed_gamma[(f * d + e) * d + b];
                if gfeb == 0.0 {
                    continue;
                }
                for x in 0..d {
                    w[(e * d + x) * d + b] -= gfeb * k[x * d + f];
                }
            }
        }
    }
    let mut y = vec![0.0; d * d * d];
    for e in 0..d {
        let we = &w[e * d * d..(e + 1) * d * d];
        if we.iter().all(|&v| v == 0.0) {
            continue;
        }
        for c in 0..d {
            let hce = h[c * d + e];
            if hce == 0.0 {
                continue;
            }
            for (o, v) in y[c * d * d..(c + 1) * d * d].iter_mut().zip(we) {
                *o += hce * v;
            }
        }
    }
    let mut zero = vec![0.0; d * d * d];
    for c in 0..d {
        for x in 0..d {
            for b in 0..d {
                zero[(c * d + x) * d + b] = y[(c * d + x) * d + b] - y[(x * d + c) * d + b];
            }
        }
    }
    (spatial, mixed, zero)
}

fn kretschmann_from_blocks(spatial: &[f64], mixed: &[f64], zero: &[f64], g: &[f64], h: &[f64], d: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..d {
        for dd in 0..d {
            for a in 0..d {
                for b in 0..d {
                    let r1 = spatial[((c * d + dd) * d + a) * d + b];
                    if r1 != 0.0 {
                        s += r1 * spatial[((a * d + b) * d + c) * d + dd];
                    }
                }
            }
        }
    }
    let mut m = 0.0;
    for c in 0..d {
        for a in 0..d {
            m += mixed[c * d + a] * mixed[a * d + c];
        }
    }
    let z = if zero.iter().all(|&v| v == 0.0) { 0.0 } else { g_norm_sq_at(zero, (2, 1), g, h, d) };
    s + 4.0 * m - 4.0 * z
}

fn slice_jets(state: &SolutionState) -> SliceJets {
    SliceJets { g: Jet::of(&state.g), k: Jet::of(&state.k), n: Jet::of(&state.n) }
}

fn check_blocks_input(state: &SolutionState, dt_tk: &TensorField) -> Result<()> {
    if dt_tk.valence() != (1, 1) || !dt_tk.grid().compatible(state.grid()) {
        return Err(Error::Domain("∂_t(tK) must be a (1,1) field on the state grid".into()));
    }
    let n_min = state.n.min_value();
    if !(n_min > 0.0) {
        return Err(Error::InvalidState(format!("lapse must be positive, min n = {n_min}")));
    }
    Ok(())
}

/// All spacetime curvature blocks and the Kretschmann scalar assembled from them.
///
/// `dt_tk` is `∂_t(t K)`, supplied by the caller (zero for exact Kasner).
pub fn curvature_blocks(state: &SolutionState, dt_tk: &TensorField) -> Result<CurvatureBlocks> {
    check_blocks_input(state, dt_tk)?;
    let grid = state.grid();
    let d = state.dim();
    let jets = slice_jets(state);
    let mut spatial_block = TensorField::zeros(grid, (2, 2));
    let mut mixed_block = TensorField::zeros(grid, (1, 1));
    let mut zero_block = TensorField::zeros(grid, (2, 1));
    let mut kretschmann = TensorField::zeros(grid, (0, 0));
    for p in 0..grid.npts() {
        let (s, m, z) = blocks_at(state, dt_tk, &jets, p);
        kretschmann.at_mut(p)[0] = kretschmann_from_blocks(&s, &m, &z, state.g.at(p), state.ginv.at(p), d);
        spatial_block.at_mut(p).copy_from_slice(&s);
        mixed_block.at_mut(p).copy_from_slice(&m);
        zero_block.at_mut(p).copy_from_slice(&z);
    }
    Ok(CurvatureBlocks { spatial_block, mixed_block, zero_block, kretschmann })
}

/// Kretschmann scalar only, without keeping the `D^4` spatial block per point.
pub fn kretschmann_scalar(state: &SolutionState, dt_tk: &TensorField) -> Result<TensorField> {
    check_blocks_input(state, dt_tk)?;
    let d = state.dim();
    let jets = slice_jets(state);
    let mut out = TensorField::zeros(state.grid(), (0, 0));
    for p in 0..state.grid().npts() {
        let (s, m, z) = blocks_at(state, dt_tk, &jets, p);
        out.at_mut(p)[0] = kretschmann_from_blocks(&s, &m, &z, state.g.at(p), state.ginv.at(p), d);
    }
    Ok(out)
}

/// Eigenvalue range of `g` over the grid, used by norm-comparison checks.
pub fn metric_eigen_range(g: &TensorField) -> (f64, f64) {
    let d = g.dim();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in 0..g.npts() {
        let ev = linalg::sym_eigenvalues(g.at(p), d);
        lo = lo.min(ev[0]);
        hi = hi.max(ev[d - 1]);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, Scheme};
    use crate::kasner::{construct_exponents, kasner_state, kretschmann_constant, KasnerExponents, Root};
    use crate::state::invert_metric;
    use std::f64::consts::PI;

    fn conformal_2d(n: usize, dim: usize) -> (TensorField, TensorField) {
        let grid = GridSpec::new(dim, vec![0, 1], vec![n, n], Scheme::Spectral).unwrap();
        let g = TensorField::from_fn(&grid, (0, 2), |x, c| {
            let phi = 0.1 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin();
            for i in 0..dim {
                c[i * dim + i] = if i < 2 { (2.0 * phi).exp() } else { 1.0 };
            }
        });
        let ginv = invert_metric(&g).unwrap();
        (g, ginv)
    }

    #[test]
    fn flat_and_kasner_have_no_christoffels() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let grid = GridSpec::new(38, vec![0], vec![8], Scheme::Spectral).unwrap();
        let s = kasner_state(&q, 0.4, &grid).unwrap();
        let c = christoffel(&s.g, &s.ginv).unwrap();
        assert_eq!(c.lower.max_abs(), 0.0);
        assert_eq!(c.mixed.max_abs(), 0.0);
        assert_eq!(ricci_mixed(&s.g, &s.ginv).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn conformal_christoffels_match_analytic() {
        let (g, ginv) = conformal_2d(32, 3);
        let c = christoffel(&g, &ginv).unwrap();
        let grid = g.grid().clone();
        for p in 0..grid.npts() {
            let x = grid.coords(p);
            let (s1, c1) = (2.0 * PI * x[0]).sin_cos();
            let (s2, c2) = (2.0 * PI * x[1]).sin_cos();
            let dphi = [0.2 * PI * c1 * s2, 0.2 * PI * s1 * c2];
            let m = c.mixed.at(p);
            // Γ^i_{jk} = δ^i_j ∂_k φ + δ^i_k ∂_j φ - δ_jk ∂_i φ within the conformal block
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        let kd = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                        let exact = kd(i, j) * dphi[k] + kd(i, k) * dphi[j] - kd(j, k) * dphi[i];
                        assert!((m[(i * 3 + j) * 3 + k] - exact).abs() < 1e-10);
                    }
                }
            }
            assert_eq!(m[(2 * 3 + 2) * 3 + 2], 0.0);
        }
    }

    #[test]
    fn conformal_scalar_curvature() {
        let (g, ginv) = conformal_2d(64, 4);
        let sc = scalar_curvature(&g, &ginv).unwrap();
        let grid = g.grid().clone();
        let mut err: f64 = 0.0;
        for p in 0..grid.npts() {
            let x = grid.coords(p);
            let phi = 0.1 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin();
            let lap = -8.0 * PI * PI * phi;
            let exact = -2.0 * (-2.0 * phi).exp() * lap;
            err = err.max((sc.value(p) - exact).abs());
        }
        assert!(err < 1e-7, "max error {err}");
    }

    #[test]
    fn riemann_contracts_to_ricci() {
        let grid = GridSpec::new(4, vec![0, 2], vec![16, 16], Scheme::Spectral).unwrap();
        let g = TensorField::from_fn(&grid, (0, 2), |x, c| {
            let (a, b) = ((2.0 * PI * x[0]).sin(), (2.0 * PI * x[1]).cos());
            for i in 0..4 {
                c[i * 4 + i] = 1.0 + 0.1 * (i as f64 + 1.0) * a * b;
            }
            c[1] = 0.05 * a;
            c[4] = 0.05 * a;
            c[2 * 4 + 3] = 0.03 * b;
            c[3 * 4 + 2] = 0.03 * b;
        });
        let ginv = invert_metric(&g).unwrap();
        let riem = riemann(&g, &ginv).unwrap();
        let ric = ricci_mixed(&g, &ginv).unwrap();
        let d = 4;
        for p in 0..grid.npts() {
            let r = riem.at(p);
            let h = ginv.at(p);
            // Ric_jl = g^{ik} Riem_{ijkl}; Ric^m_l = g^{mj} Ric_jl
            let mut ric_lo = vec![0.0; 16];
            for j in 0..d {
                for l in 0..d {
                    let mut s = 0.0;
                    for i in 0..d {
                        for k in 0..d {
                            s += h[i * d + k] * r[((i * d + j) * d + k) * d + l];
                        }
                    }
                    ric_lo[j * d + l] = s;
                }
            }
            let ric_up = matmul(h, &ric_lo, d);
            for (a, b) in ric_up.iter().zip(ric.at(p)) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn kasner_kretschmann_blocks() {
        let q = KasnerExponents::boundary_pattern_36();
        let s = kasner_state(&q, 0.5, &GridSpec::homogeneous(36)).unwrap();
        let zero = TensorField::zeros(s.grid(), (1, 1));
        let blocks = curvature_blocks(&s, &zero).unwrap();
        let expected = kretschmann_constant(&q) * 16.0;
        assert!((blocks.kretschmann.value(0) - expected).abs() < 1e-8 * expected);
        assert!((expected - 280.0 / 3.0).abs() < 1e-10);
        let fast = kretschmann_scalar(&s, &zero).unwrap();
        assert!((fast.value(0) - blocks.kretschmann.value(0)).abs() < 1e-12 * expected);
    }

    #[test]
    fn flat_kasner_kretschmann_vanishes() {
        let q = KasnerExponents::flat(38).unwrap();
        let s = kasner_state(&q, 0.3, &GridSpec::homogeneous(38)).unwrap();
        let zero = TensorField::zeros(s.grid(), (1, 1));
        assert!(kretschmann_scalar(&s, &zero).unwrap().value(0).abs() < 1e-10);
    }

    #[test]
    fn hamiltonian_identity_on_kasner() {
        let q = construct_exponents(38, 0.002, Root::Plus).unwrap();
        let s = kasner_state(&q, 0.7, &GridSpec::homogeneous(38)).unwrap();
        let sc = scalar_curvature(&s.g, &s.ginv).unwrap().value(0);
        let kk = trace(&matmul(s.k.at(0), s.k.at(0), 38), 38);
        assert!((sc - (kk - 0.7f64.powi(-2))).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_lapse_rejected() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let mut s = kasner_state(&q, 0.5, &GridSpec::homogeneous(38)).unwrap();
        s.n = s.n.scaled(-1.0);
        let zero = TensorField::zeros(s.grid(), (1, 1));
        assert!(matches!(curvature_blocks(&s, &zero), Err(Error::InvalidState(_))));
    }
}
