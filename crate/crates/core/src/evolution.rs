//! Log-time evolution of `(g, κ = tK)` in CMC-transported coordinates.
//!
//! With `τ = -ln t`:
//! `∂_τ g = 2n g κ`,
//! `∂_τ κ = -(1-n) κ + t² g^{-1}∂∂n - t² g^{ia}Γ^b_{aj}∂_b n - t² n Ric`.
//! The lapse is re-solved at every Runge-Kutta stage.

use std::str::FromStr;

use serde::Serialize;

use crate::constraints::ConstraintResiduals;
use crate::diagnostics::{DiagnosticsRecord, NormParams};
use crate::error::{Error, Result};
use crate::field::TensorField;
use crate::geometry::{kretschmann_scalar, ricci_from_jet, scalar_from_ricci, Jet};
use crate::kasner::KasnerExponents;
use crate::lapse::{solve_lapse, LapseConfig, LapseSolveReport};
use crate::linalg::matmul;
use crate::state::{invert_metric, SolutionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Rk4,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            other => Err(Error::Config(format!("unknown integration method `{other}` (expected rk4)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub dtau: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub method: Method,
    /// Ceiling on `sup |κ^a_a + 1|`.
    pub cmc_drift_ceiling: f64,
    /// Ceiling on the rescaled constraint sups `t² |H|` and `t |M|`.
    pub residual_ceiling: f64,
    /// Remove the trace drift `(κ^a_a + 1)/D` from `κ` after every step.
    pub cmc_projection: bool,
    /// Also evolve `g^{-1}` as its own field and report its drift from `inv(g)`.
    pub track_inverse: bool,
    pub lapse: LapseConfig,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dtau: 0.01,
            t_start: 1.0,
            t_end: 0.01,
            method: Method::Rk4,
            cmc_drift_ceiling: 1e-6,
            residual_ceiling: 1e-2,
            cmc_projection: false,
            track_inverse: false,
            lapse: LapseConfig::default(),
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.dtau > 0.0 && self.dtau.is_finite()) {
            bad.push(format!("dtau = {} must be positive", self.dtau));
        }
        if !(self.t_start > 0.0) {
            bad.push(format!("t_start = {} must be positive", self.t_start));
        }
        if !(self.t_end > 0.0) {
            bad.push(format!("t_end = {} must be positive", self.t_end));
        }
        if !(self.t_end < self.t_start) {
            bad.push(format!("t_end = {} must be smaller than t_start = {}", self.t_end, self.t_start));
        }
        if !(self.cmc_drift_ceiling >= 0.0) {
            bad.push("cmc_drift_ceiling must be nonnegative".into());
        }
        if !(self.residual_ceiling >= 0.0) {
            bad.push("residual_ceiling must be nonnegative".into());
        }
        if !(self.lapse.tol > 0.0) {
            bad.push("lapse tolerance must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Evolved variables at log-time `tau`, with the lapse and inverse metric cached.
#[derive(Debug, Clone)]
pub struct EvolState {
    pub tau: f64,
    pub g: TensorField,
    pub kappa: TensorField,
    pub n: TensorField,
    pub ginv: TensorField,
    pub ginv_tracked: Option<TensorField>,
}

impl EvolState {
    pub fn from_solution(s: &SolutionState, track_inverse: bool) -> Self {
        Self {
            tau: -s.t.ln(),
            g: s.g.clone(),
            kappa: s.kappa(),
            n: s.n.clone(),
            ginv: s.ginv.clone(),
            ginv_tracked: track_inverse.then(|| s.ginv.clone()),
        }
    }

    pub fn t(&self) -> f64 {
        (-self.tau).exp()
    }

    pub fn to_solution(&self) -> SolutionState {
        let t = self.t();
        SolutionState::new_unchecked(t, self.g.clone(), self.ginv.clone(), self.kappa.scaled(1.0 / t), self.n.clone())
    }

    /// `max |g^{-1}_tracked - inv(g)|` when the inverse is tracked.
    pub fn inverse_drift(&self) -> Option<f64> {
        self.ginv_tracked.as_ref().map(|h| h.sub(&self.ginv).expect("same grid").max_abs())
    }
}

/// Right-hand side at one state, with everything computed on the way.
#[derive(Debug, Clone)]
pub struct Rates {
    pub dg: TensorField,
    pub dkappa: TensorField,
    pub dginv: Option<TensorField>,
    pub n: TensorField,
    pub ginv: TensorField,
    pub ricci: TensorField,
    pub sc: TensorField,
    pub lapse: LapseSolveReport,
}

pub fn rhs(state: &EvolState, lapse_cfg: &LapseConfig) -> Result<Rates> {
    let t = state.t();
    let t2 = t * t;
    let g = &state.g;
    let grid = g.grid();
    let d = g.dim();
    let ginv = invert_metric(g)?;
    let jet = Jet::of(g);
    let ricci = ricci_from_jet(g, &ginv, &jet);
    let sc = scalar_from_ricci(&ricci);
    let (n, lapse) = solve_lapse(g, &ginv, &sc, t, lapse_cfg)?;
    let ns = grid.n_active();
    let hess = (ns > 0 && lapse.iterations > 0).then(|| hessian_from_jet(g, &ginv, &jet, &n));

    let mut dg = TensorField::zeros(grid, (0, 2)).with_symmetric(true);
    let mut dkappa = TensorField::zeros(grid, (1, 1));
    let mut dginv = state.ginv_tracked.as_ref().map(|_| TensorField::zeros(grid, (2, 0)).with_symmetric(true));
    for p in 0..grid.npts() {
        let np = n.value(p);
        let kap = state.kappa.at(p);
        let gk = matmul(g.at(p), kap, d);
        for (o, v) in dg.at_mut(p).iter_mut().zip(&gk) {
            *o = 2.0 * np * v;
        }
        if let (Some(dh), Some(h)) = (dginv.as_mut(), state.ginv_tracked.as_ref()) {
            // ∂_τ g^{ij} = -2n g^{ia} κ^j_a
            let hp = h.at(p);
            let out = dh.at_mut(p);
            for i in 0..d {
                for j in 0..d {
                    let s: f64 = (0..d).map(|a| hp[i * d + a] * kap[j * d + a]).sum();
                    out[i * d + j] = -2.0 * np * s;
                }
            }
        }
        let ric = ricci.at(p);
        let out = dkappa.at_mut(p);
        for i in 0..d * d {
            out[i] = -(1.0 - np) * kap[i] - t2 * np * ric[i];
        }
        if let Some(hess) = &hess {
            for (o, v) in out.iter_mut().zip(hess.at(p)) {
                *o += t2 * v;
            }
        }
    }
    Ok(Rates { dg, dkappa, dginv, n, ginv, ricci, sc, lapse })
}

/// `∇^i ∇_j n = g^{ia}(∂_a∂_j n - Γ^b_{aj} ∂_b n)`.
pub fn hessian_mixed(g: &TensorField, ginv: &TensorField, n: &TensorField) -> TensorField {
    hessian_from_jet(g, ginv, &Jet::of(g), n)
}

fn hessian_from_jet(g: &TensorField, ginv: &TensorField, jet: &Jet, n: &TensorField) -> TensorField {
    let grid = g.grid();
    let d = g.dim();
    let active = grid.active();
    let nj = Jet::of(n);
    let mut out = TensorField::zeros(grid, (1, 1));
    for p in 0..grid.npts() {
        let h = ginv.at(p);
        // m = ∂∂n - G with G[a,j] = Γ^b_{aj} ∂_b n = Σ_c w_c Γ_{acj}, w = g^{-1} ∂n
        let mut m = vec![0.0; d * d];
        let mut dn = vec![0.0; d];
        for (s, &a) in active.iter().enumerate() {
            dn[a] = nj.first[s].value(p);
            for (r, &b) in active.iter().enumerate() {
                m[a * d + b] += nj.pair(s, r).value(p);
            }
        }
        let w: Vec<f64> = (0..d).map(|i| (0..d).map(|c| h[i * d + c] * dn[c]).sum()).collect();
        for (s, &al) in active.iter().enumerate() {
            let a_s = jet.first[s].at(p);
            let aw: Vec<f64> = (0..d).map(|i| (0..d).map(|c| a_s[i * d + c] * w[c]).sum()).collect();
            for j in 0..d {
                m[al * d + j] -= 0.5 * aw[j];
                m[j * d + al] -= 0.5 * aw[j];
            }
            let wa = 0.5 * w[al];
            for (o, v) in m.iter_mut().zip(a_s) {
                *o += wa * v;
            }
        }
        out.at_mut(p).copy_from_slice(&matmul(h, &m, d));
    }
    out
}

fn advance(base: &EvolState, h: f64, r: &Rates) -> Result<EvolState> {
    Ok(EvolState {
        tau: base.tau + h,
        g: base.g.axpy(h, &r.dg)?,
        kappa: base.kappa.axpy(h, &r.dkappa)?,
        n: r.n.clone(),
        ginv: r.ginv.clone(),
        ginv_tracked: match (&base.ginv_tracked, &r.dginv) {
            (Some(a), Some(b)) => Some(a.axpy(h, b)?),
            _ => None,
        },
    })
}

fn combine(a: &TensorField, h: f64, ks: [&TensorField; 4]) -> Result<TensorField> {
    let w = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
    let mut out = a.clone();
    for (k, c) in ks.iter().zip(w) {
        out = out.axpy(c, k)?;
    }
    Ok(out)
}

/// One classical RK4 step of size `dtau`; `k1` may be supplied when already known.
///
/// The returned state carries the lapse and inverse of the last stage; callers
/// that need them at the new time recompute them with [`rhs`].
pub fn step_with(state: &EvolState, dtau: f64, cfg: &IntegratorConfig, k1: Option<Rates>) -> Result<EvolState> {
    if dtau == 0.0 {
        return Ok(state.clone());
    }
    let k1 = match k1 {
        Some(k) => k,
        None => rhs(state, &cfg.lapse)?,
    };
    let k2 = rhs(&advance(state, 0.5 * dtau, &k1)?, &cfg.lapse)?;
    let k3 = rhs(&advance(state, 0.5 * dtau, &k2)?, &cfg.lapse)?;
    let k4 = rhs(&advance(state, dtau, &k3)?, &cfg.lapse)?;
    let mut g = combine(&state.g, dtau, [&k1.dg, &k2.dg, &k3.dg, &k4.dg])?;
    g.symmetrize();
    let mut kappa = combine(&state.kappa, dtau, [&k1.dkappa, &k2.dkappa, &k3.dkappa, &k4.dkappa])?;
    if cfg.cmc_projection {
        project_trace(&mut kappa);
    }
    let ginv_tracked = match &state.ginv_tracked {
        Some(h0) => {
            let ks = [&k1, &k2, &k3, &k4].map(|k| k.dginv.as_ref().expect("tracked inverse rate"));
            let mut h = combine(h0, dtau, ks)?;
            h.symmetrize();
            Some(h)
        }
        None => None,
    };
    Ok(EvolState { tau: state.tau + dtau, g, kappa, n: k4.n, ginv: k4.ginv, ginv_tracked })
}

pub fn step(state: &EvolState, dtau: f64, cfg: &IntegratorConfig) -> Result<EvolState> {
    step_with(state, dtau, cfg, None)
}

fn project_trace(kappa: &mut TensorField) {
    let d = kappa.dim();
    for p in 0..kappa.npts() {
        let k = kappa.at_mut(p);
        let shift = ((0..d).map(|i| k[i * d + i]).sum::<f64>() + 1.0) / d as f64;
        for i in 0..d {
            k[i * d + i] -= shift;
        }
    }
}

/// What the simulator measures on every accepted step.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub q: KasnerExponents,
    pub params: NormParams,
    /// Evaluate the Kretschmann scalar every this many steps (0 disables it);
    /// the first and last states are always included when enabled.
    pub kretschmann_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortKind {
    ResidualCeiling,
    CmcDrift,
    LapseFailure,
    MetricDegenerate,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbortRecord {
    pub t: f64,
    pub tau: f64,
    pub kind: AbortKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub completed: bool,
    pub steps: usize,
    pub t_final: f64,
    pub tau_final: f64,
    pub abort: Option<AbortRecord>,
    /// Largest `t² sup|H|` over accepted steps.
    pub max_rescaled_hamiltonian: f64,
    /// Largest `t sup|M|`.
    pub max_rescaled_momentum: f64,
    /// Largest `sup |κ^a_a + 1|`.
    pub max_cmc_drift: f64,
    pub max_lapse_residual: f64,
    pub max_lapse_iterations: usize,
    pub initial_tk_deviation: f64,
    pub max_tk_deviation: f64,
    pub max_inverse_drift: Option<f64>,
    pub final_record: Option<DiagnosticsRecord>,
}

pub struct SimulationOutcome {
    pub summary: RunSummary,
    pub final_state: EvolState,
}

fn abort_kind(e: &Error) -> AbortKind {
    match e {
        Error::LapseIndefinite { .. } | Error::SolverDivergence { .. } | Error::InvalidLapse { .. } => {
            AbortKind::LapseFailure
        }
        _ => AbortKind::MetricDegenerate,
    }
}

/// Integrate from `initial` (at `cfg.t_start`) toward `cfg.t_end`, handing every
/// accepted record to `sink`. Ceiling violations and solver failures end the run
/// with an abort record; only configuration and sink errors are returned as `Err`.
pub fn simulate(
    initial: &SolutionState,
    cfg: &IntegratorConfig,
    monitor: &Monitor,
    sink: &mut dyn FnMut(&DiagnosticsRecord, &EvolState) -> Result<()>,
) -> Result<SimulationOutcome> {
    cfg.validate()?;
    if (initial.t - cfg.t_start).abs() > 1e-12 * cfg.t_start {
        return Err(Error::Config(format!(
            "initial state is at t = {} but t_start = {}",
            initial.t, cfg.t_start
        )));
    }
    monitor.params.validate_for(&monitor.q)?;
    let tau_end = -cfg.t_end.ln();
    let mut state = EvolState::from_solution(initial, cfg.track_inverse);
    let mut summary = RunSummary {
        completed: false,
        steps: 0,
        t_final: state.t(),
        tau_final: state.tau,
        abort: None,
        max_rescaled_hamiltonian: 0.0,
        max_rescaled_momentum: 0.0,
        max_cmc_drift: 0.0,
        max_lapse_residual: 0.0,
        max_lapse_iterations: 0,
        initial_tk_deviation: f64::NAN,
        max_tk_deviation: 0.0,
        max_inverse_drift: cfg.track_inverse.then_some(0.0),
        final_record: None,
    };
    let mut step_index = 0usize;
    loop {
        let t = state.t();
        let last = state.tau >= tau_end - 1e-12;
        let abort = |kind, message: String| AbortRecord { t, tau: state.tau, kind, message };
        let rates = match rhs(&state, &cfg.lapse) {
            Ok(r) => r,
            Err(e) => {
                summary.abort = Some(abort(abort_kind(&e), e.to_string()));
                break;
            }
        };
        state.n = rates.n.clone();
        state.ginv = rates.ginv.clone();
        let sol = state.to_solution();
        let residuals = ConstraintResiduals::compute(&sol)?;
        let want_k = monitor.kretschmann_every > 0 && (step_index.is_multiple_of(monitor.kretschmann_every) || last);
        let kret = if want_k {
            let dt_tk = rates.dkappa.scaled(-1.0 / t);
            Some(kretschmann_scalar(&sol, &dt_tk)?)
        } else {
            None
        };
        let record = DiagnosticsRecord::assemble(&sol, &monitor.q, &monitor.params, &residuals, &rates.lapse, kret.as_ref())?;
        sink(&record, &state)?;

        let [h, m, _] = residuals.rescaled_sups(t);
        let drift = residuals.sup_norms[2] * t;
        summary.steps = step_index;
        summary.t_final = t;
        summary.tau_final = state.tau;
        summary.max_rescaled_hamiltonian = summary.max_rescaled_hamiltonian.max(h);
        summary.max_rescaled_momentum = summary.max_rescaled_momentum.max(m);
        summary.max_cmc_drift = summary.max_cmc_drift.max(drift);
        summary.max_lapse_residual = summary.max_lapse_residual.max(rates.lapse.final_residual);
        summary.max_lapse_iterations = summary.max_lapse_iterations.max(rates.lapse.iterations);
        if step_index == 0 {
            summary.initial_tk_deviation = record.tk_deviation;
        }
        summary.max_tk_deviation = summary.max_tk_deviation.max(record.tk_deviation);
        if let (Some(acc), Some(dr)) = (summary.max_inverse_drift.as_mut(), state.inverse_drift()) {
            *acc = acc.max(dr);
        }
        summary.final_record = Some(record);

        if !record.is_finite() {
            summary.abort = Some(abort(AbortKind::NonFinite, "non-finite diagnostics".into()));
            break;
        }
        if h > cfg.residual_ceiling || m > cfg.residual_ceiling {
            summary.abort = Some(abort(
                AbortKind::ResidualCeiling,
                format!(
                    "rescaled constraint residuals (t^2 H = {h:.3e}, t M = {m:.3e}) exceed the ceiling {:.3e}",
                    cfg.residual_ceiling
                ),
            ));
            break;
        }
        if drift > cfg.cmc_drift_ceiling {
            summary.abort = Some(abort(
                AbortKind::CmcDrift,
                format!("CMC drift {drift:.3e} exceeds the ceiling {:.3e}", cfg.cmc_drift_ceiling),
            ));
            break;
        }
        if last {
            summary.completed = true;
            break;
        }
        let h_step = cfg.dtau.min(tau_end - state.tau);
        match step_with(&state, h_step, cfg, Some(rates)) {
            Ok(mut next) => {
                if (tau_end - next.tau).abs() < 1e-12 {
                    next.tau = tau_end;
                }
                state = next;
            }
            Err(e) => {
                summary.abort = Some(abort(abort_kind(&e), e.to_string()));
                break;
            }
        }
        step_index += 1;
    }
    Ok(SimulationOutcome { summary, final_state: state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, Scheme};
    use crate::kasner::{construct_exponents, kasner_matrices, kasner_state, Root};

    fn q38() -> KasnerExponents {
        construct_exponents(38, 0.001, Root::Plus).unwrap()
    }

    fn grid() -> GridSpec {
        GridSpec::new(38, vec![0], vec![16], Scheme::Spectral).unwrap()
    }

    #[test]
    fn kasner_is_a_fixed_point_of_kappa() {
        let q = q38();
        let s = kasner_state(&q, 0.4, &grid()).unwrap();
        let e = EvolState::from_solution(&s, false);
        let r = rhs(&e, &LapseConfig::default()).unwrap();
        assert_eq!(r.dkappa.max_abs(), 0.0);
        let (g0, _, _) = kasner_matrices(&q, 0.4);
        for (i, &qi) in q.as_slice().iter().enumerate() {
            let rate = r.dg.at(3)[i * 38 + i];
            assert!((rate + 2.0 * qi * g0[i * 38 + i]).abs() <= 1e-15 * g0[i * 38 + i].abs().max(1.0));
        }
    }

    #[test]
    fn shifted_lapse_rate() {
        // with a homogeneous grid the solve is trivial; build the rates by hand
        let q = q38();
        let s = kasner_state(&q, 1.0, &GridSpec::homogeneous(38)).unwrap();
        let delta = 1e-3;
        let kap = s.kappa();
        let expected: Vec<f64> = kap.data().iter().map(|k| -(1.0 - (1.0 + delta)) * k).collect();
        // -(1-n)κ = δ κ = -δ q on the diagonal
        for i in 0..38 {
            assert!((expected[i * 38 + i] + delta * q.as_slice()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn one_step_matches_exponential() {
        let q = q38();
        let s = kasner_state(&q, 1.0, &grid()).unwrap();
        let e = EvolState::from_solution(&s, false);
        let next = step(&e, 0.01, &IntegratorConfig::default()).unwrap();
        for (i, &qi) in q.as_slice().iter().enumerate() {
            let exact = (-2.0 * qi * 0.01f64).exp();
            let got = next.g.at(5)[i * 38 + i];
            assert!((got - exact).abs() <= 1e-12 * exact);
        }
        assert_eq!(next.kappa.data(), e.kappa.data());
    }

    #[test]
    fn zero_step_is_identity() {
        let s = kasner_state(&q38(), 0.5, &grid()).unwrap();
        let e = EvolState::from_solution(&s, false);
        let same = step(&e, 0.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(same.g.data(), e.g.data());
        assert_eq!(same.tau, e.tau);
    }

    #[test]
    fn bianchi_i_matches_ode() {
        // homogeneous diagonal data off the Kasner circle: n ≡ 1, Ric = 0, so
        // κ is frozen and g_ii(τ) = g_ii(0) exp(2 κ_ii τ)
        let d = 4;
        let grid = GridSpec::homogeneous(d);
        let kap = [-0.5, -0.3, -0.1, -0.1];
        let mut kmat = vec![0.0; d * d];
        let mut gmat = vec![0.0; d * d];
        for i in 0..d {
            kmat[i * d + i] = kap[i];
            gmat[i * d + i] = 1.0 + 0.1 * i as f64;
        }
        let s = SolutionState::from_metric(
            1.0,
            TensorField::constant(&grid, (0, 2), &gmat),
            TensorField::constant(&grid, (1, 1), &kmat),
            TensorField::constant(&grid, (0, 0), &[1.0]),
        )
        .unwrap();
        let mut e = EvolState::from_solution(&s, true);
        let cfg = IntegratorConfig::default();
        for _ in 0..50 {
            e = step(&e, 0.02, &cfg).unwrap();
        }
        for i in 0..d {
            let exact = gmat[i * d + i] * (2.0 * kap[i] * 1.0f64).exp();
            let z = 2.0 * kap[i] * 0.02;
            let amp = 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0;
            let discrete = gmat[i * d + i] * amp.powi(50);
            let got = e.g.at(0)[i * d + i];
            assert!((got - discrete).abs() < 1e-13 * exact);
            assert!((got - exact).abs() < 1e-8 * exact);
        }
        let ginv = invert_metric(&e.g).unwrap();
        assert!(e.ginv_tracked.as_ref().unwrap().sub(&ginv).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn hessian_matches_christoffel_form() {
        use crate::geometry::christoffel;
        use std::f64::consts::PI;
        let grid = GridSpec::new(4, vec![0, 2], vec![16, 16], Scheme::Spectral).unwrap();
        let g = TensorField::from_fn(&grid, (0, 2), |x, c| {
            let (a, b) = ((2.0 * PI * x[0]).sin(), (2.0 * PI * x[1]).cos());
            for i in 0..4 {
                c[i * 4 + i] = 1.0 + 0.1 * (i as f64 + 1.0) * a * b;
            }
            c[2] = 0.05 * a;
            c[8] = 0.05 * a;
        });
        let ginv = invert_metric(&g).unwrap();
        let n = TensorField::scalar_from_fn(&grid, |x| 1.0 + 0.1 * (2.0 * PI * (x[0] + 2.0 * x[1])).sin());
        let hess = hessian_mixed(&g, &ginv, &n);
        let chr = christoffel(&g, &ginv).unwrap();
        let dn = n.gradient();
        let ddn = dn.gradient();
        let d = 4;
        for p in 0..grid.npts() {
            let gm = chr.mixed.at(p);
            let mut cov = vec![0.0; d * d];
            for a in 0..d {
                for j in 0..d {
                    // gradient puts the new derivative index first: ddn[a][j] = ∂_a ∂_j n
                    let mut v = ddn.at(p)[a * d + j];
                    for b in 0..d {
                        v -= gm[(b * d + a) * d + j] * dn.at(p)[b];
                    }
                    cov[a * d + j] = v;
                }
            }
            let expect = matmul(ginv.at(p), &cov, d);
            for (x, y) in expect.iter().zip(hess.at(p)) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn rejects_reversed_times() {
        let cfg = IntegratorConfig { t_start: 0.5, t_end: 0.9, ..IntegratorConfig::default() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("t_end") && msg.contains("t_start"));
    }

    #[test]
    fn short_kasner_run() {
        let q = q38();
        let s = kasner_state(&q, 1.0, &grid()).unwrap();
        let cfg = IntegratorConfig { t_end: 0.5, dtau: 0.05, ..IntegratorConfig::default() };
        let monitor = Monitor { q: q.clone(), params: NormParams::for_exponents(&q, 1.0, 3).unwrap(), kretschmann_every: 0 };
        let mut rows = Vec::new();
        let out = simulate(&s, &cfg, &monitor, &mut |r, _| {
            rows.push(*r);
            Ok(())
        })
        .unwrap();
        assert!(out.summary.completed, "{:?}", out.summary.abort);
        assert!((out.final_state.t() - 0.5).abs() < 1e-13);
        assert_eq!(rows.len(), out.summary.steps + 1);
        let worst = rows.iter().map(|r| r.low_g).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn zero_ceiling_aborts_perturbed_run() {
        let q = q38();
        let mut s = kasner_state(&q, 1.0, &grid()).unwrap();
        let pert = TensorField::from_fn(s.grid(), (1, 1), |x, c| {
            c[0] = 1e-4 * (2.0 * std::f64::consts::PI * x[0]).sin();
        });
        s.k = s.k.add(&pert).unwrap();
        let cfg = IntegratorConfig { t_end: 0.5, residual_ceiling: 0.0, cmc_drift_ceiling: 1.0, ..IntegratorConfig::default() };
        let monitor = Monitor { q: q.clone(), params: NormParams::for_exponents(&q, 1.0, 3).unwrap(), kretschmann_every: 0 };
        let out = simulate(&s, &cfg, &monitor, &mut |_, _| Ok(())).unwrap();
        assert!(!out.summary.completed);
        assert_eq!(out.summary.abort.unwrap().kind, AbortKind::ResidualCeiling);
    }
}
