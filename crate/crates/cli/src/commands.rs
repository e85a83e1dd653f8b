//! Running a validated configuration and writing its artifacts.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use kasnerlab_core::diagnostics::{fmt_real, kasner_relative_errors, metric_gradient_norm};
use kasnerlab_core::evolution::{EvolState, Monitor};
use kasnerlab_core::geodesics::GeodesicOptions;
use kasnerlab_core::lapse::{maximum_principle_sides, solve_lapse_forced};
use kasnerlab_core::snapshot::write_snapshot;
use kasnerlab_core::state::invert_metric;
use kasnerlab_core::vtd::{kasner_circle, log_times};
use kasnerlab_core::{
    affine_bound_check, high_norms, integrate_geodesic, kasner_state, kretschmann_constant, kretschmann_scalar,
    low_norms, ricci_decay_check, riemann, scalar_curvature, simulate, solve_lapse, validate_exponents, Error,
    GridSpec, KasnerExponents, KasnerSpacetime, Scheme, SliceSpacetime, SolutionState, Spacetime,
    TensorField, VtdProfile, CSV_HEADER,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{
    Command, ConfigErrors, ExponentSource, Expectation, PerturbedField, RunConfig, SpacetimeKind, VtdConfig, VtdProfileKind,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error("{0}")]
    Core(#[from] Error),
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(Error::Config(_) | Error::NoModerateFamily { .. }) => 2,
            _ => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// What a finished command reports back to `main`.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// False when a configured ceiling or expectation was violated.
    pub success: bool,
    pub summary: Value,
    pub summary_path: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn finish(cfg: &RunConfig, dir: &Path, success: bool, mut summary: Value, start: Instant) -> CliResult<Outcome> {
    summary["command"] = json!(cfg.command.name());
    summary["success"] = json!(success);
    summary["elapsed_seconds"] = json!(start.elapsed().as_secs_f64());
    let path = dir.join(&cfg.output.summary);
    let text = serde_json::to_string_pretty(&summary).expect("summary values serialize");
    write_text(&path, &(text + "\n"))?;
    Ok(Outcome { success, summary, summary_path: path })
}

/// Runs `cfg`, writing artifacts under `dir` and a human-readable digest to `out`.
pub fn run(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> CliResult<Outcome> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let start = Instant::now();
    let (success, summary) = match cfg.command {
        Command::Exponents => exponents(cfg, dir, out)?,
        Command::Kretschmann => kretschmann(cfg, dir, out)?,
        Command::Simulate => simulate_cmd(cfg, dir, out)?,
        Command::Geodesic => geodesic(cfg, dir, out)?,
        Command::VtdCheck => vtd_check(cfg, dir, out)?,
        Command::LapseCheck => lapse_check(cfg, dir, out)?,
        Command::GeometryCheck => geometry_check(cfg, out)?,
        Command::NormsCheck => norms_check(cfg, out)?,
    };
    finish(cfg, dir, success, summary, start)
}

fn exponents(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> CliResult<(bool, Value)> {
    let q = cfg.kasner()?;
    let r = validate_exponents(&q)?;
    let mut csv = String::from("index,q\n");
    for (i, qi) in q.as_slice().iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, fmt_real(*qi)));
    }
    write_text(&dir.join("exponents.csv"), &csv)?;
    emit(out, &csv)?;
    emit(
        out,
        &format!(
            "# sum_q - 1 = {:.3e}, sum_q2 - 1 = {:.3e}, max|q| = {}, dhs_margin = {}, moderate = {}\n",
            r.sum - 1.0,
            r.sum_sq - 1.0,
            fmt_real(r.max_abs),
            fmt_real(r.dhs_margin),
            r.moderate
        ),
    )?;
    let constructed = matches!(cfg.exponents.as_ref().map(|e| &e.source), Some(ExponentSource::Construct { .. }));
    let success = !constructed || (r.moderate && r.dhs_ok);
    Ok((success, json!({ "dim": q.dim(), "exponents": q.as_slice(), "report": r })))
}

fn kretschmann(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> CliResult<(bool, Value)> {
    let q = cfg.kasner()?;
    let c = kretschmann_constant(&q);
    let grid = cfg.grid.build(q.dim())?;
    let mut csv = String::from("t,kretschmann_min,kretschmann_max,analytic\n");
    let mut worst: f64 = 0.0;
    let mut logs = (Vec::new(), Vec::new());
    for &t in &cfg.kretschmann.times {
        let s = kasner_state(&q, t, &grid)?;
        let zero = TensorField::zeros(&grid, (1, 1));
        let k = kretschmann_scalar(&s, &zero)?;
        let (lo, hi) = (k.min_value(), k.max_value());
        let analytic = c * t.powi(-4);
        let dev = (lo - analytic).abs().max((hi - analytic).abs());
        worst = worst.max(if analytic != 0.0 { dev / analytic.abs() } else { dev });
        if lo > 0.0 {
            logs.0.push(t.ln());
            logs.1.push(lo.ln());
        }
        csv.push_str(&format!("{},{},{},{}\n", fmt_real(t), fmt_real(lo), fmt_real(hi), fmt_real(analytic)));
    }
    let slope = (logs.0.len() >= 2).then(|| kasnerlab_core::vtd::fit_slope(&logs.0, &logs.1));
    write_text(&dir.join("kretschmann.csv"), &csv)?;
    emit(out, &csv)?;
    let slope_text = slope.map(fmt_real).unwrap_or_else(|| "n/a".into());
    emit(out, &format!("# C = {}, max relative deviation = {worst:.3e}, log-log slope = {slope_text}\n", fmt_real(c)))?;
    let success = worst <= cfg.kretschmann.tolerance;
    Ok((success, json!({ "constant": c, "max_relative_deviation": worst, "slope": slope, "tolerance": cfg.kretschmann.tolerance })))
}

/// Kasner data at `t` on the configured grid plus the configured perturbations.
pub fn initial_state(cfg: &RunConfig, q: &KasnerExponents, t: f64, scale: f64) -> CliResult<SolutionState> {
    let grid = cfg.grid.build(q.dim())?;
    let s = kasner_state(q, t, &grid)?;
    let d = q.dim();
    let (mut g, mut k) = (s.g.clone(), s.k.clone());
    for p in &cfg.perturbations {
        let (i, j) = p.component;
        for point in 0..grid.npts() {
            let v = scale * p.value(&grid.coords(point));
            match p.field {
                PerturbedField::Metric => {
                    g.at_mut(point)[i * d + j] += v;
                    if i != j {
                        g.at_mut(point)[j * d + i] += v;
                    }
                }
                PerturbedField::SecondFundamentalForm => k.at_mut(point)[i * d + j] += v,
            }
        }
    }
    Ok(SolutionState::from_metric(t, g, k, s.n)?)
}

fn snapshot_fields(dir: &Path, stem: &str, st: &EvolState) -> kasnerlab_core::Result<()> {
    let sol = st.to_solution();
    for (name, field) in [("g", &sol.g), ("k", &sol.k), ("n", &sol.n)] {
        write_snapshot(&dir.join(format!("{stem}_{name}.csv")), field, sol.t)?;
    }
    Ok(())
}

fn simulate_cmd(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> CliResult<(bool, Value)> {
    let q = cfg.kasner()?;
    let params = cfg.norms.build(&q)?;
    let initial = initial_state(cfg, &q, cfg.integrator.t_start, 1.0)?;
    let monitor = Monitor { q: q.clone(), params, kretschmann_every: cfg.kretschmann.every };
    let csv_path = dir.join(&cfg.output.diagnostics);
    let file = File::create(&csv_path).map_err(io_err(&csv_path))?;
    let mut csv = BufWriter::new(file);
    let as_core = |path: &Path| {
        let p = path.display().to_string();
        move |e: std::io::Error| Error::Io { path: p, message: e.to_string() }
    };
    writeln!(csv, "{CSV_HEADER}").map_err(io_err(&csv_path))?;
    let snap_dir = dir.join("snapshots");
    if cfg.output.snapshot_every > 0 || cfg.output.snapshot_final {
        fs::create_dir_all(&snap_dir).map_err(io_err(&snap_dir))?;
    }
    let mut step = 0usize;
    let mut background_error: f64 = 0.0;
    let track_background = cfg.regression.max_background_error.is_some();
    let outcome = simulate(&initial, &cfg.integrator, &monitor, &mut |rec, st| {
        writeln!(csv, "{}", rec.csv_row()).map_err(as_core(&csv_path))?;
        if track_background {
            let (eg, ek) = kasner_relative_errors(&st.to_solution(), &q)?;
            background_error = background_error.max(eg).max(ek);
        }
        if cfg.output.snapshot_every > 0 && step.is_multiple_of(cfg.output.snapshot_every) {
            snapshot_fields(&snap_dir, &format!("step_{step:06}"), st)?;
        }
        step += 1;
        Ok(())
    })?;
    csv.flush().map_err(io_err(&csv_path))?;
    if cfg.output.snapshot_final {
        snapshot_fields(&snap_dir, "final", &outcome.final_state)?;
    }
    let sm = &outcome.summary;
    let (eg, ek) = kasner_relative_errors(&outcome.final_state.to_solution(), &q)?;
    let status = match &sm.abort {
        None => "completed".to_string(),
        Some(a) => format!("aborted at t = {:.6e}: {}", a.t, a.message),
    };
    emit(
        out,
        &format!(
            "simulate: {status}\n  steps = {}, t_final = {}\n  max rescaled residuals: hamiltonian {:.3e}, momentum {:.3e}, cmc drift {:.3e}\n  relative deviation from the Kasner background: g {eg:.3e}, kappa {ek:.3e}\n  diagnostics: {}\n",
            sm.steps,
            fmt_real(sm.t_final),
            sm.max_rescaled_hamiltonian,
            sm.max_rescaled_momentum,
            sm.max_cmc_drift,
            csv_path.display()
        ),
    )?;
    let mut success = sm.completed && sm.abort.is_none();
    let mut regression = serde_json::Map::new();
    if let Some(ceiling) = cfg.regression.max_background_error {
        let ok = background_error <= ceiling;
        success &= ok;
        regression.insert("max_background_error".into(), json!({ "value": background_error, "ceiling": ceiling, "ok": ok }));
        emit(out, &format!("  max deviation from Kasner over the run: {background_error:.3e} (ceiling {ceiling:.1e})\n"))?;
    }
    if let Some(factor) = cfg.regression.max_tk_growth {
        let growth = sm.max_tk_deviation / sm.initial_tk_deviation;
        let ok = sm.max_tk_deviation <= factor * sm.initial_tk_deviation;
        success &= ok;
        regression.insert("tk_growth".into(), json!({ "value": growth, "ceiling": factor, "ok": ok }));
        emit(
            out,
            &format!(
                "  | |tK|_g - 1 |: initial {:.3e}, max {:.3e} (growth {growth:.3} against ceiling {factor})\n",
                sm.initial_tk_deviation, sm.max_tk_deviation
            ),
        )?;
    }
    if !cfg.regression.convergence_dtaus.is_empty() {
        let study = convergence_study(cfg, &q)?;
        success &= study["ok"].as_bool().unwrap_or(false);
        emit(out, &format!("  step-halving errors {} ratios {}\n", study["errors"], study["ratios"]))?;
        regression.insert("convergence".into(), study);
    }
    Ok((
        success,
        json!({
            "run": sm,
            "norm_params": params,
            "kasner_comparison": { "g_relative_error": eg, "kappa_error": ek },
            "regression": regression,
            "diagnostics_csv": csv_path,
        }),
    ))
}

/// Unperturbed Kasner runs at each configured step size; errors in `g` against the exact solution.
fn convergence_study(cfg: &RunConfig, q: &KasnerExponents) -> CliResult<Value> {
    let rc = &cfg.regression;
    let grid = cfg.grid.build(q.dim())?;
    let initial = kasner_state(q, cfg.integrator.t_start, &grid)?;
    let monitor = Monitor { q: q.clone(), params: cfg.norms.build(q)?, kretschmann_every: 0 };
    let mut errors = Vec::new();
    for &dtau in &rc.convergence_dtaus {
        let integ = kasnerlab_core::IntegratorConfig { dtau, t_end: rc.convergence_t_end, ..cfg.integrator.clone() };
        let res = simulate(&initial, &integ, &monitor, &mut |_, _| Ok(()))?;
        if let Some(a) = res.summary.abort {
            return Err(Error::Domain(format!("convergence run at dtau = {dtau} aborted: {}", a.message)).into());
        }
        errors.push(kasner_relative_errors(&res.final_state.to_solution(), q)?.0);
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = ratios.iter().all(|r| ((r / rc.convergence_ratio) - 1.0).abs() <= rc.convergence_tolerance);
    Ok(json!({
        "dtaus": rc.convergence_dtaus,
        "t_end": rc.convergence_t_end,
        "errors": errors,
        "ratios": ratios,
        "expected_ratio": rc.convergence_ratio,
        "tolerance": rc.convergence_tolerance,
        "ok": ok,
    }))
}

/// Stored slices of a simulation run, for geodesics on simulated spacetimes.
fn simulated_slices(cfg: &RunConfig, q: &KasnerExponents) -> CliResult<SliceSpacetime> {
    let params = cfg.norms.build(q)?;
    let initial = initial_state(cfg, q, cfg.integrator.t_start, 1.0)?;
    let monitor = Monitor { q: q.clone(), params, kretschmann_every: 0 };
    let mut slices = Vec::new();
    let mut step = 0usize;
    let outcome = simulate(&initial, &cfg.integrator, &monitor, &mut |_, st| {
        if step.is_multiple_of(cfg.geodesic.slice_every) {
            slices.push(st.to_solution());
        }
        step += 1;
        Ok(())
    })?;
    if let Some(a) = &outcome.summary.abort {
        return Err(Error::Domain(format!("the background simulation aborted at t = {}: {}", a.t, a.message)).into());
    }
    let last = outcome.final_state.to_solution();
    if slices.last().is_none_or(|s| s.t != last.t) {
        slices.push(last);
    }
    Ok(SliceSpacetime::new(slices)?)
}

/// Start position, fixed `v0` (solved from the mass when `None`), spatial velocity, mass.
type Start = (Vec<f64>, Option<f64>, Vec<f64>, f64);

fn geodesic(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> CliResult<(bool, Value)> {
    let gc = &cfg.geodesic;
    let q = cfg.kasner()?;
    let d = q.dim();
    let sigma = match gc.sigma {
        Some(s) => s,
        None => cfg.norms.build(&q)?.sigma,
    };
    let st: Box<dyn Spacetime> = match gc.spacetime {
        SpacetimeKind::Kasner => Box::new(KasnerSpacetime { q: q.clone() }),
        SpacetimeKind::Simulation => Box::new(simulated_slices(cfg, &q)?),
    };
    let opts = GeodesicOptions { h: gc.h, causal_tol: gc.causal_tol, max_steps: gc.max_steps };
    let t0 = 1.0;

    let mut starts: Vec<Start> = Vec::new();
    if gc.vertical {
        starts.push((vec![0.0; d], Some(-1.0), vec![0.0; d], 1.0));
    }
    if gc.random > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(gc.seed);
        for _ in 0..gc.random {
            let x0: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let v: Vec<f64> = (0..d).map(|_| gc.speed * rng.random_range(-1.0..=1.0)).collect();
            let mass = gc.max_mass * rng.random_range(0.0..=1.0);
            starts.push((x0, None, v, mass));
        }
    } else {
        let x0 = gc.x0.clone().unwrap_or_else(|| vec![0.0; d]);
        let v = gc.velocity.clone().unwrap_or_else(|| vec![0.0; d]);
        starts.push((x0, gc.v0, v, gc.mass));
    }

    let csv_path = dir.join("geodesics.csv");
    let file = File::create(&csv_path).map_err(io_err(&csv_path))?;
    let mut csv = BufWriter::new(file);
    let mut header = String::from("path,affine,t,v0,causal_norm");
    (1..=d).for_each(|i| header.push_str(&format!(",x{i}")));
    (1..=d).for_each(|i| header.push_str(&format!(",v{i}")));
    writeln!(csv, "{header}").map_err(io_err(&csv_path))?;

    let mut paths = Vec::new();
    let mut all_hold = true;
    let mut worst_drift: f64 = 0.0;
    let mut min_margin = f64::INFINITY;
    let mut vertical_error = None;
    for (idx, (x0, v0, v, mass)) in starts.iter().enumerate() {
        let v0 = match v0 {
            Some(v0) => *v0,
            None => {
                let s = st.sample(t0, x0)?;
                let gvv: f64 = (0..d).map(|a| v[a] * (0..d).map(|b| s.g[a * d + b] * v[b]).sum::<f64>()).sum();
                -((mass + gvv).max(0.0)).sqrt() / s.n
            }
        };
        if v0 >= 0.0 {
            return Err(Error::Domain(format!("start {idx} has zero velocity; give a positive mass or a nonzero velocity")).into());
        }
        let path = integrate_geodesic(st.as_ref(), (t0, x0), (v0, v), gc.t_min, &opts)?;
        let bound = affine_bound_check(&path, sigma);
        let drift = path.max_causal_norm_drift() / (v0 * v0);
        worst_drift = worst_drift.max(drift);
        min_margin = min_margin.min(bound.margin);
        all_hold &= bound.holds;
        if gc.vertical && idx == 0 {
            vertical_error = Some((path.terminal_affine - (t0 - gc.t_min)).abs());
        }
        let n = path.samples.len();
        for (i, s) in path.samples.iter().enumerate() {
            if i % cfg.output.sample_every != 0 && i + 1 != n {
                continue;
            }
            let mut row = format!("{idx},{},{},{},{}", fmt_real(s.affine), fmt_real(s.t), fmt_real(s.v0), fmt_real(s.causal_norm));
            for x in s.x.iter().chain(&s.v) {
                row.push(',');
                row.push_str(&fmt_real(*x));
            }
            writeln!(csv, "{row}").map_err(io_err(&csv_path))?;
        }
        paths.push(json!({
            "path": idx,
            "v0": v0,
            "terminal_affine": path.terminal_affine,
            "bound": bound.bound,
            "margin": bound.margin,
            "holds": bound.holds,
            "relative_causal_drift": drift,
        }));
    }
    csv.flush().map_err(io_err(&csv_path))?;
    let vertical_ok = vertical_error.is_none_or(|e| e <= 1e-10);
    let success = all_hold && worst_drift <= gc.causal_tol && vertical_ok;
    let vtext = vertical_error.map(|e| format!(", vertical terminal error = {e:.3e}")).unwrap_or_default();
    emit(
        out,
        &format!(
            "# paths = {}, sigma = {}, bound holds on all = {all_hold}, min margin = {}, max relative causal drift = {worst_drift:.3e}{vtext}\n",
            paths.len(),
            fmt_real(sigma),
            fmt_real(min_margin)
        ),
    )?;
    Ok((
        success,
        json!({
            "sigma": sigma,
            "t_min": gc.t_min,
            "all_bounds_hold": all_hold,
            "min_margin": min_margin,
            "max_relative_causal_drift": worst_drift,
            "vertical_terminal_error": vertical_error,
            "paths": paths,
            "samples_csv": csv_path,
        }),
    ))
}

fn vtd_check(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> CliResult<(bool, Value)> {
    let (mut success, main) = vtd_profile(&cfg.vtd, &dir.join("vtd.csv"), out)?;
    let mut summary = json!({ "profile": main });
    if let Some(contrast) = &cfg.vtd_contrast {
        let (ok, value) = vtd_profile(contrast, &dir.join("vtd_contrast.csv"), out)?;
        success &= ok;
        summary["contrast"] = value;
    }
    Ok((success, summary))
}

fn vtd_profile(vc: &VtdConfig, csv_path: &Path, out: &mut dyn Write) -> CliResult<(bool, Value)> {
    let k = vc.wave as f64;
    let (profile, dim) = match vc.profile {
        VtdProfileKind::Eps { dim, root, eps, amplitude } => {
            let grid = GridSpec::new(dim, vec![0], vec![vc.points], Scheme::Spectral)?;
            let p = VtdProfile::from_eps(&grid, root, |x| eps * (1.0 + amplitude * (2.0 * PI * k * x[0]).sin()))?;
            (p, dim)
        }
        VtdProfileKind::KasnerCircle { theta, amplitude } => {
            let grid = GridSpec::new(3, vec![0], vec![vc.points], Scheme::Spectral)?;
            let p = VtdProfile::from_fn(&grid, |x| kasner_circle(theta + amplitude * (2.0 * PI * k * x[0]).sin()))?;
            (p, 3)
        }
    };
    let times = log_times(vc.t_max, vc.t_min, vc.samples);
    let report = ricci_decay_check(&profile, &times)?;
    let mut csv = String::from("t,sup_t2_ricci\n");
    for (t, s) in report.t.iter().zip(&report.sup_t2_ricci) {
        csv.push_str(&format!("{},{}\n", fmt_real(*t), fmt_real(*s)));
    }
    write_text(csv_path, &csv)?;
    emit(out, &csv)?;
    let slope = report.slope.unwrap_or(f64::NAN);
    emit(
        out,
        &format!(
            "# dim = {dim}, max|q| = {}, slope = {}, strictly decreasing = {}\n",
            fmt_real(profile.max_abs_exponent()),
            fmt_real(slope),
            report.strictly_decreasing
        ),
    )?;
    let success = match vc.expect {
        Expectation::Decay => report.strictly_decreasing && slope > vc.min_slope,
        Expectation::NoDecay => slope <= 0.0,
        Expectation::None => true,
    };
    Ok((
        success,
        json!({ "dim": dim, "max_abs_exponent": profile.max_abs_exponent(), "report": report, "expectation_met": success }),
    ))
}

/// Diagonal 3-metric `diag(1 + a sin, 1 + a cos, 1)` in the first coordinate.
fn warped_metric(grid: &GridSpec, a: f64) -> TensorField {
    TensorField::from_fn(grid, (0, 2), |x, c| {
        c[0] = 1.0 + a * (2.0 * PI * x[0]).sin();
        c[4] = 1.0 + a * (2.0 * PI * x[0]).cos();
        c[8] = 1.0;
    })
}

fn lapse_check(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> CliResult<(bool, Value)> {
    let lc = &cfg.lapse_check;
    let lapse_cfg = cfg.integrator.lapse;
    let grid = GridSpec::new(3, vec![0], vec![lc.points], Scheme::Spectral)?;
    let (a, t, amp) = (lc.warp, lc.t, lc.solution_amplitude);
    let w = 2.0 * PI;
    let g = warped_metric(&grid, a);
    let ginv = invert_metric(&g)?;
    let sc = scalar_curvature(&g, &ginv)?;
    // forcing for the exact solution n = 1 + amp sin(2πx)
    let mut forcing = TensorField::zeros(&grid, (0, 0));
    for p in 0..grid.npts() {
        let x = grid.coords(p)[0];
        let (s, c) = (w * x).sin_cos();
        let (g11, g22) = (1.0 + a * s, 1.0 + a * c);
        let z1 = a * w * c / (2.0 * g11 * g11) + a * w * s / (2.0 * g11 * g22);
        let (u, du, ddu) = (amp * s, amp * w * c, -amp * w * w * s);
        forcing.at_mut(p)[0] = ddu / g11 - z1 * du - (t.powi(-2) + sc.value(p)) * u - sc.value(p);
    }
    let (n, rep) = solve_lapse_forced(&g, &ginv, &sc, t, Some(&forcing), &lapse_cfg)?;
    let err = (0..grid.npts())
        .map(|p| (n.value(p) - 1.0 - amp * (w * grid.coords(p)[0]).sin()).abs())
        .fold(0.0, f64::max);
    let mut success = err <= lc.tolerance;
    emit(out, &format!("manufactured solution: max error = {err:.3e} ({} iterations)\n", rep.iterations))?;

    let mut csv = String::from("t,scale,status,iterations,residual,n_minus_1_sup,t2_n_sc_sup,ratio\n");
    let mut worst: f64 = 0.0;
    let (mut solved, mut refused, mut failed) = (0usize, 0usize, 0usize);
    if !lc.sweep_times.is_empty() {
        let q = cfg.kasner()?;
        for &ts in &lc.sweep_times {
            for &scale in &lc.sweep_scales {
                let s = initial_state(cfg, &q, ts, scale)?;
                let sc = scalar_curvature(&s.g, &s.ginv)?;
                match solve_lapse(&s.g, &s.ginv, &sc, ts, &lapse_cfg) {
                    Ok((n, r)) => {
                        solved += 1;
                        let (lhs, rhs) = maximum_principle_sides(&n, &sc, ts);
                        let ratio = if rhs > 0.0 { lhs / rhs } else if lhs == 0.0 { 0.0 } else { f64::INFINITY };
                        worst = worst.max(ratio);
                        csv.push_str(&format!(
                            "{},{},converged,{},{},{},{},{}\n",
                            fmt_real(ts),
                            fmt_real(scale),
                            r.iterations,
                            fmt_real(r.final_residual),
                            fmt_real(lhs),
                            fmt_real(rhs),
                            fmt_real(ratio)
                        ));
                    }
                    Err(e) => {
                        let status = if matches!(e, Error::LapseIndefinite { .. }) {
                            refused += 1;
                            "indefinite"
                        } else {
                            failed += 1;
                            "failed"
                        };
                        csv.push_str(&format!("{},{},{status},,,,,\n", fmt_real(ts), fmt_real(scale)));
                    }
                }
            }
        }
        success &= worst <= lc.slack && failed == 0;
        emit(
            out,
            &format!(
                "maximum principle: worst ratio = {worst:.4} over {solved} converged solves ({refused} indefinite, {failed} failed)\n"
            ),
        )?;
    }
    write_text(&dir.join("lapse_sweep.csv"), &csv)?;
    Ok((
        success,
        json!({
            "manufactured_error": err,
            "manufactured_iterations": rep.iterations,
            "max_principle_worst_ratio": worst,
            "converged_solves": solved,
            "indefinite_refusals": refused,
            "failed_solves": failed,
        }),
    ))
}

fn geometry_check(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<(bool, Value)> {
    let gc = &cfg.geometry_check;
    let n = gc.points;
    let grid = GridSpec::new(4, vec![0, 1], vec![n, n], Scheme::Spectral)?;
    let amp = gc.phi_amplitude;
    let phi = |x: &[f64]| amp * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin();
    let g = TensorField::from_fn(&grid, (0, 2), |x, c| {
        let e = (2.0 * phi(x)).exp();
        c[0] = e;
        c[5] = e;
        c[10] = 1.0;
        c[15] = 1.0;
    });
    let sc = scalar_curvature(&g, &invert_metric(&g)?)?;
    let mut conformal_err: f64 = 0.0;
    for p in 0..grid.npts() {
        let x = grid.coords(p);
        let laplacian = -8.0 * PI * PI * phi(&x);
        conformal_err = conformal_err.max((sc.value(p) + 2.0 * (-2.0 * phi(&x)).exp() * laplacian).abs());
    }

    let d = gc.random_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(gc.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..gc.random_metrics {
        let active = if d >= 3 { vec![0, 2] } else { vec![0, 1] };
        let grid = GridSpec::new(d, active, vec![gc.random_points; 2], Scheme::Spectral)?;
        let coef: Vec<[f64; 4]> =
            (0..d * d).map(|_| [0.0; 4].map(|_: f64| gc.random_amplitude * rng.random_range(-1.0..1.0))).collect();
        let g = TensorField::from_fn(&grid, (0, 2), |x, c| {
            let modes = [
                (2.0 * PI * x[0]).sin(),
                (2.0 * PI * x[1]).cos(),
                (2.0 * PI * (x[0] + x[1])).sin(),
                (4.0 * PI * x[0]).cos(),
            ];
            for i in 0..d {
                for j in 0..d {
                    let k = &coef[i.min(j) * d + i.max(j)];
                    c[i * d + j] = f64::from(u8::from(i == j)) + (0..4).map(|m| k[m] * modes[m]).sum::<f64>();
                }
            }
        });
        let r = riemann(&g, &invert_metric(&g)?)?;
        let scale = r.max_abs().max(f64::MIN_POSITIVE);
        let idx = |i: usize, j: usize, k: usize, l: usize| ((i * d + j) * d + k) * d + l;
        for p in 0..grid.npts() {
            let v = r.at(p);
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        for l in 0..d {
                            let x = v[idx(i, j, k, l)];
                            let defects = [
                                x + v[idx(j, i, k, l)],
                                x + v[idx(i, j, l, k)],
                                x - v[idx(k, l, i, j)],
                                x + v[idx(i, k, l, j)] + v[idx(i, l, j, k)],
                            ];
                            worst = defects.iter().fold(worst, |m, e| m.max(e.abs() / scale));
                        }
                    }
                }
            }
        }
    }
    emit(
        out,
        &format!(
            "conformal scalar curvature: max error = {conformal_err:.3e}\nRiemann symmetries: worst relative defect = {worst:.3e} over {} random metrics\n",
            gc.random_metrics
        ),
    )?;
    let success = conformal_err <= gc.tolerance && worst <= gc.symmetry_tolerance;
    Ok((success, json!({ "conformal_error": conformal_err, "riemann_symmetry_defect": worst })))
}

fn norms_check(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<(bool, Value)> {
    let nc = &cfg.norms_check;
    let q = cfg.kasner()?;
    let d = q.dim();
    let params = cfg.norms.build(&q)?;
    let grid = cfg.grid.build(d)?;
    if grid.n_active() == 0 {
        return Err(Error::Config("norms-check needs at least one active grid direction".into()).into());
    }
    let mut kasner_max: f64 = 0.0;
    for &t in &nc.times {
        let s = kasner_state(&q, t, &grid)?;
        let low = low_norms(&s, &q, &params)?;
        let high = high_norms(&s, &q, &params)?;
        kasner_max = kasner_max.max(low.low_g).max(low.low_n).max(high.high_g).max(high.high_n);
    }

    let dir = grid.active()[0];
    let wave = |x: &[f64]| (2.0 * PI * x[0]).sin();
    let with_k = |amp: f64| -> CliResult<(f64, f64)> {
        let mut s = kasner_state(&q, 1.0, &grid)?;
        for p in 0..grid.npts() {
            let v = amp * wave(&grid.coords(p));
            s.k.at_mut(p)[0] += v;
            s.k.at_mut(p)[d * d - 1] -= v;
        }
        Ok((high_norms(&s, &q, &params)?.high_g, low_norms(&s, &q, &params)?.second_fund))
    };
    let (h1, l1) = with_k(nc.amplitude)?;
    let (h2, l2) = with_k(2.0 * nc.amplitude)?;
    let homogeneity = (h2 / h1 - 2.0).abs().max((l2 / l1 - 2.0).abs());

    let a = nc.amplitude;
    let m = params.order;
    let mut s = kasner_state(&q, 1.0, &grid)?;
    for p in 0..grid.npts() {
        s.g.at_mut(p)[dir * d + dir] += a * wave(&grid.coords(p));
    }
    s.ginv = invert_metric(&s.g)?;
    let high = high_norms(&s, &q, &params)?;
    let entry = |name: &str| high.metric_entries.iter().find(|e| e.name == name).map(|e| e.value).unwrap_or(f64::NAN);
    let frame_exact = a * (2.0 * PI).powi(m as i32) / 2f64.sqrt();
    let frame_err = (entry("g_HFrame_N") - frame_exact).abs() / frame_exact;
    // ∫ (g^{dd})^3 (∂^{N+1} g_dd)^2 dx by a fine rectangle rule (exact for this trigonometric integrand)
    let fine = 4096;
    let integral: f64 = (0..fine)
        .map(|i| {
            let x = i as f64 / fine as f64;
            let h = 1.0 / (1.0 + a * (2.0 * PI * x).sin());
            let der = a * (2.0 * PI).powi(m as i32 + 1) * (2.0 * PI * x + (m as f64 + 1.0) * PI / 2.0).sin();
            h.powi(3) * der * der
        })
        .sum::<f64>()
        / fine as f64;
    let dg_exact = integral.sqrt();
    let dg_err = (entry("dg_Hg_N") - dg_exact)
        .abs()
        .max((metric_gradient_norm(&s.g, &s.ginv, m)? - dg_exact).abs())
        / dg_exact;
    let single_mode = frame_err.max(dg_err);
    emit(
        out,
        &format!(
            "Kasner norms: max = {kasner_max:.3e}\nhomogeneity defect = {homogeneity:.3e}\nsingle-mode relative errors: frame {frame_err:.3e}, dg {dg_err:.3e}\n"
        ),
    )?;
    let tol = nc.tolerance;
    let success = kasner_max <= tol && homogeneity <= tol && single_mode <= tol;
    Ok((
        success,
        json!({
            "kasner_max_norm": kasner_max,
            "homogeneity_defect": homogeneity,
            "single_mode_frame_error": frame_err,
            "single_mode_dg_error": dg_err,
            "norm_params": params,
        }),
    ))
}
