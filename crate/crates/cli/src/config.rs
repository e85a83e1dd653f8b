//! TOML run configuration: parsing, schema checks, and conversion to core types.
//!
//! Parsing never stops at the first problem. Every unknown key, type mismatch
//! and range violation is collected with its dotted path.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use kasnerlab_core::{
    construct_exponents, validate_exponents, GridSpec, IntegratorConfig, KasnerExponents, LapseConfig, Method,
    NormParams, Root, Scheme,
};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// All schema violations found in one configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<Violation>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem{}):", self.0.len(), if self.0.len() == 1 { "" } else { "s" })?;
        for v in &self.0 {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Exponents,
    Kretschmann,
    Simulate,
    Geodesic,
    VtdCheck,
    LapseCheck,
    GeometryCheck,
    NormsCheck,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Exponents,
        Command::Kretschmann,
        Command::Simulate,
        Command::Geodesic,
        Command::VtdCheck,
        Command::LapseCheck,
        Command::GeometryCheck,
        Command::NormsCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Exponents => "exponents",
            Command::Kretschmann => "kretschmann",
            Command::Simulate => "simulate",
            Command::Geodesic => "geodesic",
            Command::VtdCheck => "vtd-check",
            Command::LapseCheck => "lapse-check",
            Command::GeometryCheck => "geometry-check",
            Command::NormsCheck => "norms-check",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<_> = Command::ALL.iter().map(|c| c.name()).collect();
            format!("unknown command '{s}' (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExponentSource {
    Construct { dim: usize, eps: f64 },
    Values(Vec<f64>),
    Pattern36,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExponentSpec {
    pub source: ExponentSource,
    pub root: Root,
}

impl ExponentSpec {
    pub fn build(&self) -> kasnerlab_core::Result<KasnerExponents> {
        match &self.source {
            ExponentSource::Construct { dim, eps } => construct_exponents(*dim, *eps, self.root),
            ExponentSource::Values(v) => KasnerExponents::new(v.clone()),
            ExponentSource::Pattern36 => Ok(KasnerExponents::boundary_pattern_36()),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.source {
            ExponentSource::Construct { dim, .. } => *dim,
            ExponentSource::Values(v) => v.len(),
            ExponentSource::Pattern36 => 36,
        }
    }
}

/// Grid section with 0-based directions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub active: Vec<usize>,
    pub points: Vec<usize>,
    pub scheme: Scheme,
    pub dealias: bool,
}

impl GridConfig {
    pub fn build(&self, dim: usize) -> kasnerlab_core::Result<GridSpec> {
        if self.active.is_empty() {
            return Ok(GridSpec::homogeneous(dim).with_scheme(self.scheme));
        }
        Ok(GridSpec::new(dim, self.active.clone(), self.points.clone(), self.scheme)?.with_dealias(self.dealias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbedField {
    /// `g_ij`, added symmetrically.
    Metric,
    /// `K^i_j`, added to the one component only.
    SecondFundamentalForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Sin,
    Cos,
}

/// `amplitude * sin(2π m·x)` (or `cos`) added to one component at `t_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub field: PerturbedField,
    /// 0-based `(i, j)`.
    pub component: (usize, usize),
    /// Wave numbers along the active directions, in grid order.
    pub mode: Vec<i64>,
    pub amplitude: f64,
    pub phase: Phase,
}

impl Perturbation {
    pub fn value(&self, x: &[f64]) -> f64 {
        let arg: f64 = 2.0 * std::f64::consts::PI * self.mode.iter().zip(x).map(|(&m, &xi)| m as f64 * xi).sum::<f64>();
        self.amplitude
            * match self.phase {
                Phase::Sin => arg.sin(),
                Phase::Cos => arg.cos(),
            }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormsConfig {
    pub order: u32,
    pub blowup_exp: f64,
    pub sigma: Option<f64>,
    pub gamma: Option<f64>,
}

impl NormsConfig {
    pub fn build(&self, q: &KasnerExponents) -> kasnerlab_core::Result<NormParams> {
        match (self.sigma, self.gamma) {
            (Some(s), Some(g)) => {
                let p = NormParams::new(s, g, self.blowup_exp, self.order)?;
                p.validate_for(q)?;
                Ok(p)
            }
            _ => NormParams::for_exponents(q, self.blowup_exp, self.order),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub diagnostics: String,
    pub summary: String,
    /// Write field snapshots every this many steps (0: never).
    pub snapshot_every: usize,
    pub snapshot_final: bool,
    /// Keep every this many geodesic samples in the CSV.
    pub sample_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KretschmannConfig {
    pub times: Vec<f64>,
    /// Evaluation cadence in steps during `simulate` (0: off).
    pub every: usize,
    /// Ceiling on the relative deviation from `C t^-4`.
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpacetimeKind {
    Kasner,
    Simulation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicConfig {
    pub spacetime: SpacetimeKind,
    pub t_min: f64,
    pub x0: Option<Vec<f64>>,
    pub velocity: Option<Vec<f64>>,
    pub v0: Option<f64>,
    /// `-g4(v, v)` of the starting velocity when `v0` is derived.
    pub mass: f64,
    pub random: usize,
    pub seed: u64,
    pub speed: f64,
    pub max_mass: f64,
    pub h: f64,
    pub causal_tol: f64,
    pub max_steps: usize,
    pub sigma: Option<f64>,
    pub slice_every: usize,
    /// Also integrate the vertical geodesic `x = 0, v = 0, v0 = -1` (Kasner only).
    pub vertical: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VtdProfileKind {
    /// Moderate family with `eps(x) = eps (1 + amplitude sin 2π k x)`.
    Eps { dim: usize, root: Root, eps: f64, amplitude: f64 },
    /// Three-dimensional Kasner circle at `θ(x) = θ0 + amplitude sin 2π k x`.
    KasnerCircle { theta: f64, amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    Decay,
    NoDecay,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VtdConfig {
    pub profile: VtdProfileKind,
    pub wave: i64,
    pub points: usize,
    pub t_max: f64,
    pub t_min: f64,
    pub samples: usize,
    pub expect: Expectation,
    pub min_slope: f64,
}

/// Extra ceilings for `simulate`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionConfig {
    /// Ceiling on the relative deviation of `g` and `κ` from the Kasner background, at every step.
    pub max_background_error: Option<f64>,
    /// Ceiling on `max ‖|tK|_g - 1‖_∞` as a multiple of its initial value.
    pub max_tk_growth: Option<f64>,
    /// Step sizes for a step-halving study against the exact Kasner solution (empty: none).
    pub convergence_dtaus: Vec<f64>,
    pub convergence_t_end: f64,
    pub convergence_ratio: f64,
    /// Allowed relative deviation of each error ratio from `convergence_ratio`.
    pub convergence_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LapseCheckConfig {
    pub points: usize,
    pub t: f64,
    pub warp: f64,
    pub solution_amplitude: f64,
    pub tolerance: f64,
    pub sweep_times: Vec<f64>,
    pub sweep_scales: Vec<f64>,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryCheckConfig {
    pub points: usize,
    pub phi_amplitude: f64,
    pub tolerance: f64,
    pub random_metrics: usize,
    pub random_dim: usize,
    pub random_points: usize,
    pub random_amplitude: f64,
    pub seed: u64,
    pub symmetry_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormsCheckConfig {
    pub times: Vec<f64>,
    pub amplitude: f64,
    pub tolerance: f64,
}

/// A fully validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub exponents: Option<ExponentSpec>,
    pub grid: GridConfig,
    pub perturbations: Vec<Perturbation>,
    pub integrator: IntegratorConfig,
    pub norms: NormsConfig,
    pub output: OutputConfig,
    pub kretschmann: KretschmannConfig,
    pub geodesic: GeodesicConfig,
    pub vtd: VtdConfig,
    /// Second profile checked in the same `vtd-check` run.
    pub vtd_contrast: Option<VtdConfig>,
    pub regression: RegressionConfig,
    pub lapse_check: LapseCheckConfig,
    pub geometry_check: GeometryCheckConfig,
    pub norms_check: NormsCheckConfig,
}

impl RunConfig {
    /// The background exponents; only called for commands whose validation required them.
    pub fn kasner(&self) -> kasnerlab_core::Result<KasnerExponents> {
        self.exponents
            .as_ref()
            .ok_or_else(|| kasnerlab_core::Error::Config("no [exponents] section".into()))?
            .build()
    }
}

struct Errors(Vec<Violation>);

impl Errors {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation { path: path.into(), message: message.into() });
    }
}

/// One TOML table being consumed key by key; leftovers are unknown keys.
struct Section {
    path: String,
    table: Table,
    present: bool,
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a float",
        Value::Boolean(_) => "a boolean",
        Value::Datetime(_) => "a datetime",
        Value::Array(_) => "an array",
        Value::Table(_) => "a table",
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

impl Section {
    fn from_value(path: String, v: Option<Value>, errs: &mut Errors) -> Self {
        match v {
            None => Section { path, table: Table::new(), present: false },
            Some(Value::Table(t)) => Section { path, table: t, present: true },
            Some(other) => {
                errs.push(&path, format!("expected a table, found {}", type_name(&other)));
                Section { path, table: Table::new(), present: false }
            }
        }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn has(&self, k: &str) -> bool {
        self.table.contains_key(k)
    }

    fn opt_f64(&mut self, k: &str, errs: &mut Errors) -> Option<f64> {
        let v = self.table.remove(k)?;
        match as_f64(&v) {
            Some(x) if x.is_finite() => Some(x),
            Some(_) => {
                errs.push(self.key(k), "must be finite");
                None
            }
            None => {
                errs.push(self.key(k), format!("expected a number, found {}", type_name(&v)));
                None
            }
        }
    }

    fn f64(&mut self, k: &str, default: f64, errs: &mut Errors) -> f64 {
        self.opt_f64(k, errs).unwrap_or(default)
    }

    fn opt_int(&mut self, k: &str, errs: &mut Errors) -> Option<i64> {
        let v = self.table.remove(k)?;
        match v {
            Value::Integer(i) => Some(i),
            other => {
                errs.push(self.key(k), format!("expected an integer, found {}", type_name(&other)));
                None
            }
        }
    }

    fn opt_usize(&mut self, k: &str, errs: &mut Errors) -> Option<usize> {
        let i = self.opt_int(k, errs)?;
        if i < 0 {
            errs.push(self.key(k), format!("must be nonnegative, got {i}"));
            return None;
        }
        Some(i as usize)
    }

    fn usize(&mut self, k: &str, default: usize, errs: &mut Errors) -> usize {
        self.opt_usize(k, errs).unwrap_or(default)
    }

    fn bool(&mut self, k: &str, default: bool, errs: &mut Errors) -> bool {
        match self.table.remove(k) {
            None => default,
            Some(Value::Boolean(b)) => b,
            Some(other) => {
                errs.push(self.key(k), format!("expected a boolean, found {}", type_name(&other)));
                default
            }
        }
    }

    fn opt_str(&mut self, k: &str, errs: &mut Errors) -> Option<String> {
        match self.table.remove(k)? {
            Value::String(s) => Some(s),
            other => {
                errs.push(self.key(k), format!("expected a string, found {}", type_name(&other)));
                None
            }
        }
    }

    fn opt_array(&mut self, k: &str, errs: &mut Errors) -> Option<Vec<Value>> {
        match self.table.remove(k)? {
            Value::Array(a) => Some(a),
            other => {
                errs.push(self.key(k), format!("expected an array, found {}", type_name(&other)));
                None
            }
        }
    }

    fn opt_f64_list(&mut self, k: &str, errs: &mut Errors) -> Option<Vec<f64>> {
        let arr = self.opt_array(k, errs)?;
        let mut out = Vec::with_capacity(arr.len());
        for (i, v) in arr.iter().enumerate() {
            match as_f64(v) {
                Some(x) if x.is_finite() => out.push(x),
                _ => {
                    errs.push(format!("{}[{i}]", self.key(k)), "expected a finite number");
                    return None;
                }
            }
        }
        Some(out)
    }

    fn opt_int_list(&mut self, k: &str, errs: &mut Errors) -> Option<Vec<i64>> {
        let arr = self.opt_array(k, errs)?;
        let mut out = Vec::with_capacity(arr.len());
        for (i, v) in arr.iter().enumerate() {
            match v {
                Value::Integer(x) => out.push(*x),
                other => {
                    errs.push(format!("{}[{i}]", self.key(k)), format!("expected an integer, found {}", type_name(other)));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn finish(self, errs: &mut Errors) {
        let path = self.path.clone();
        for k in self.table.keys() {
            let full = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            errs.push(full, "unknown key");
        }
    }
}

fn positive(x: f64, path: String, errs: &mut Errors) {
    if !(x > 0.0) {
        errs.push(path, format!("must be positive, got {x}"));
    }
}

fn nonnegative(x: f64, path: String, errs: &mut Errors) {
    if !(x >= 0.0) {
        errs.push(path, format!("must be nonnegative, got {x}"));
    }
}

fn parse_root(s: &mut Section, errs: &mut Errors) -> Root {
    match s.opt_str("root", errs).as_deref() {
        None | Some("plus") => Root::Plus,
        Some("minus") => Root::Minus,
        Some(other) => {
            errs.push(s.key("root"), format!("expected 'plus' or 'minus', got '{other}'"));
            Root::Plus
        }
    }
}

fn parse_exponents(mut s: Section, errs: &mut Errors) -> Option<ExponentSpec> {
    if !s.present {
        return None;
    }
    let root = parse_root(&mut s, errs);
    let dim = s.opt_usize("dim", errs);
    let eps = s.opt_f64("eps", errs);
    let values = s.opt_f64_list("values", errs);
    let pattern = s.opt_str("pattern", errs);
    let given = [eps.is_some(), values.is_some(), pattern.is_some()].iter().filter(|&&b| b).count();
    let source = if given != 1 {
        errs.push(s.key("eps"), "give exactly one of exponents.eps, exponents.values or exponents.pattern");
        None
    } else if let Some(eps) = eps {
        match dim {
            None => {
                errs.push(s.key("dim"), "required together with exponents.eps");
                None
            }
            Some(dim) => {
                positive(eps, s.key("eps"), errs);
                Some(ExponentSource::Construct { dim, eps })
            }
        }
    } else if let Some(v) = values {
        if let Some(d) = dim {
            if d != v.len() {
                errs.push(s.key("dim"), format!("dim = {d} but exponents.values has {} entries", v.len()));
            }
        }
        Some(ExponentSource::Values(v))
    } else {
        let p = pattern.unwrap_or_default();
        if p != "boundary36" {
            errs.push(s.key("pattern"), format!("unknown pattern '{p}' (expected 'boundary36')"));
            None
        } else {
            if let Some(d) = dim.filter(|&d| d != 36) {
                errs.push(s.key("dim"), format!("the boundary36 pattern has dim 36, not {d}"));
            }
            Some(ExponentSource::Pattern36)
        }
    };
    s.finish(errs);
    source.map(|source| ExponentSpec { source, root })
}

fn parse_grid(mut s: Section, dim: Option<usize>, errs: &mut Errors) -> GridConfig {
    let active = s.opt_int_list("active", errs).unwrap_or_default();
    let points = s.opt_int_list("points", errs).unwrap_or_default();
    let scheme = match s.opt_str("scheme", errs) {
        None => Scheme::Spectral,
        Some(v) => v.parse().unwrap_or_else(|e: kasnerlab_core::Error| {
            errs.push(s.key("scheme"), e.to_string().trim_start_matches("configuration error: ").to_string());
            Scheme::Spectral
        }),
    };
    let dealias = s.bool("dealias", false, errs);
    let mut active0 = Vec::new();
    for (i, &a) in active.iter().enumerate() {
        let ok = a >= 1 && dim.is_none_or(|d| a as usize <= d);
        if !ok {
            let range = dim.map(|d| format!("1..={d}")).unwrap_or_else(|| "1..".into());
            errs.push(format!("{}[{i}]", s.key("active")), format!("direction {a} is outside {range}"));
        } else {
            active0.push(a as usize - 1);
        }
    }
    let mut pts = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        if p < kasnerlab_core::grid::MIN_POINTS as i64 || p % 2 != 0 {
            errs.push(
                format!("{}[{i}]", s.key("points")),
                format!("must be even and at least {}, got {p}", kasnerlab_core::grid::MIN_POINTS),
            );
        } else {
            pts.push(p as usize);
        }
    }
    if active.len() != points.len() {
        errs.push(s.key("points"), format!("{} entries but grid.active has {}", points.len(), active.len()));
    }
    if active.len() > kasnerlab_core::grid::MAX_ACTIVE {
        errs.push(s.key("active"), format!("at most {} active directions are supported", kasnerlab_core::grid::MAX_ACTIVE));
    }
    let mut seen = active0.clone();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        errs.push(s.key("active"), "directions must be distinct");
    }
    s.finish(errs);
    GridConfig { active: active0, points: pts, scheme, dealias }
}

fn parse_perturbations(v: Option<Value>, dim: Option<usize>, n_active: usize, errs: &mut Errors) -> Vec<Perturbation> {
    let arr = match v {
        None => return Vec::new(),
        Some(Value::Array(a)) => a,
        Some(other) => {
            errs.push("perturbation", format!("expected an array of tables ([[perturbation]]), found {}", type_name(&other)));
            return Vec::new();
        }
    };
    let mut out = Vec::new();
    for (idx, item) in arr.into_iter().enumerate() {
        let mut s = Section::from_value(format!("perturbation[{idx}]"), Some(item), errs);
        let field = match s.opt_str("field", errs).as_deref() {
            Some("g") => Some(PerturbedField::Metric),
            Some("k") => Some(PerturbedField::SecondFundamentalForm),
            Some(other) => {
                errs.push(s.key("field"), format!("expected 'g' or 'k', got '{other}'"));
                None
            }
            None => {
                errs.push(s.key("field"), "required");
                None
            }
        };
        let component = match s.opt_int_list("component", errs) {
            Some(c) if c.len() == 2 => {
                let ok = |i: i64| i >= 1 && dim.is_none_or(|d| i as usize <= d);
                if ok(c[0]) && ok(c[1]) {
                    Some((c[0] as usize - 1, c[1] as usize - 1))
                } else {
                    let range = dim.map(|d| format!("1..={d}")).unwrap_or_else(|| "1..".into());
                    errs.push(s.key("component"), format!("indices {c:?} must lie in {range}"));
                    None
                }
            }
            Some(c) => {
                errs.push(s.key("component"), format!("expected two indices, got {}", c.len()));
                None
            }
            None => {
                errs.push(s.key("component"), "required");
                None
            }
        };
        let mode = s.opt_int_list("mode", errs).unwrap_or_else(|| vec![1; n_active]);
        if mode.len() != n_active {
            errs.push(s.key("mode"), format!("{} wave numbers for {n_active} active directions", mode.len()));
        }
        let amplitude = s.f64("amplitude", 0.0, errs);
        let phase = match s.opt_str("phase", errs).as_deref() {
            None | Some("sin") => Phase::Sin,
            Some("cos") => Phase::Cos,
            Some(other) => {
                errs.push(s.key("phase"), format!("expected 'sin' or 'cos', got '{other}'"));
                Phase::Sin
            }
        };
        s.finish(errs);
        if let (Some(field), Some(component)) = (field, component) {
            out.push(Perturbation { field, component, mode, amplitude, phase });
        }
    }
    out
}

fn parse_integrator(mut s: Section, mut lapse: Section, errs: &mut Errors) -> IntegratorConfig {
    let d = IntegratorConfig::default();
    let t_start = s.f64("t_start", d.t_start, errs);
    let t_end = s.f64("t_end", d.t_end, errs);
    let dtau = s.f64("dtau", d.dtau, errs);
    let method = match s.opt_str("method", errs) {
        None => d.method,
        Some(m) => m.parse::<Method>().unwrap_or_else(|e| {
            errs.push(s.key("method"), e.to_string().trim_start_matches("configuration error: ").to_string());
            d.method
        }),
    };
    let residual_ceiling = s.f64("residual_ceiling", d.residual_ceiling, errs);
    let cmc_drift_ceiling = s.f64("cmc_drift_ceiling", d.cmc_drift_ceiling, errs);
    let cmc_projection = s.bool("cmc_projection", d.cmc_projection, errs);
    let track_inverse = s.bool("track_inverse", d.track_inverse, errs);
    positive(t_start, s.key("t_start"), errs);
    positive(t_end, s.key("t_end"), errs);
    positive(dtau, s.key("dtau"), errs);
    if t_end >= t_start {
        errs.push(
            s.key("t_end"),
            format!("integrator.t_end = {t_end} must be smaller than integrator.t_start = {t_start} (evolution runs toward the singularity)"),
        );
    }
    nonnegative(residual_ceiling, s.key("residual_ceiling"), errs);
    nonnegative(cmc_drift_ceiling, s.key("cmc_drift_ceiling"), errs);
    s.finish(errs);

    let ld = LapseConfig::default();
    let tol = lapse.f64("tol", ld.tol, errs);
    positive(tol, lapse.key("tol"), errs);
    let max_iterations = lapse.usize("max_iterations", ld.max_iterations, errs);
    if max_iterations == 0 {
        errs.push(lapse.key("max_iterations"), "must be at least 1");
    }
    let dense_limit = lapse.usize("dense_limit", ld.dense_limit, errs);
    lapse.finish(errs);
    IntegratorConfig {
        dtau,
        t_start,
        t_end,
        method,
        cmc_drift_ceiling,
        residual_ceiling,
        cmc_projection,
        track_inverse,
        lapse: LapseConfig { tol, max_iterations, dense_limit },
    }
}

fn parse_norms(mut s: Section, errs: &mut Errors) -> NormsConfig {
    let order = s.usize("order", 3, errs);
    if !(2..=kasnerlab_core::field::MAX_DERIVATIVE_ORDER as usize).contains(&order) {
        errs.push(s.key("order"), format!("must lie in 2..={}", kasnerlab_core::field::MAX_DERIVATIVE_ORDER));
    }
    let blowup_exp = s.f64("blowup_exp", 1.0, errs);
    if blowup_exp < 1.0 {
        errs.push(s.key("blowup_exp"), format!("must be at least 1, got {blowup_exp}"));
    }
    let sigma = s.opt_f64("sigma", errs);
    let gamma = s.opt_f64("gamma", errs);
    if sigma.is_some() != gamma.is_some() {
        errs.push(s.key("sigma"), "norms.sigma and norms.gamma must be given together");
    }
    for (k, v) in [("sigma", sigma), ("gamma", gamma)] {
        if let Some(v) = v {
            positive(v, s.key(k), errs);
        }
    }
    s.finish(errs);
    NormsConfig { order: order as u32, blowup_exp, sigma, gamma }
}

fn parse_output(mut s: Section, errs: &mut Errors) -> OutputConfig {
    let dir = s.opt_str("dir", errs).map(PathBuf::from);
    let diagnostics = s.opt_str("diagnostics", errs).unwrap_or_else(|| "diagnostics.csv".into());
    let summary = s.opt_str("summary", errs).unwrap_or_else(|| "summary.json".into());
    for (k, v) in [("diagnostics", &diagnostics), ("summary", &summary)] {
        if v.is_empty() || v.contains('/') {
            errs.push(s.key(k), "must be a plain file name");
        }
    }
    let snapshot_every = s.usize("snapshot_every", 0, errs);
    let snapshot_final = s.bool("snapshot_final", true, errs);
    let sample_every = s.usize("sample_every", 10, errs);
    if sample_every == 0 {
        errs.push(s.key("sample_every"), "must be at least 1");
    }
    s.finish(errs);
    OutputConfig { dir, diagnostics, summary, snapshot_every, snapshot_final, sample_every }
}

fn check_times(times: &[f64], path: String, errs: &mut Errors) {
    if times.iter().any(|&t| !(t > 0.0)) {
        errs.push(path, "times must be positive");
    }
}

fn parse_kretschmann(mut s: Section, errs: &mut Errors) -> KretschmannConfig {
    let times = s.opt_f64_list("times", errs).unwrap_or_else(|| vec![1.0, 0.5, 0.25]);
    check_times(&times, s.key("times"), errs);
    if times.is_empty() {
        errs.push(s.key("times"), "needs at least one time");
    }
    let every = s.usize("every", 0, errs);
    let tolerance = s.f64("tolerance", 1e-8, errs);
    positive(tolerance, s.key("tolerance"), errs);
    s.finish(errs);
    KretschmannConfig { times, every, tolerance }
}

fn parse_geodesic(mut s: Section, dim: Option<usize>, errs: &mut Errors) -> GeodesicConfig {
    let spacetime = match s.opt_str("spacetime", errs).as_deref() {
        None | Some("kasner") => SpacetimeKind::Kasner,
        Some("simulation") => SpacetimeKind::Simulation,
        Some(other) => {
            errs.push(s.key("spacetime"), format!("expected 'kasner' or 'simulation', got '{other}'"));
            SpacetimeKind::Kasner
        }
    };
    let t_min = s.f64("t_min", 0.01, errs);
    if !(t_min > 0.0 && t_min < 1.0) {
        errs.push(s.key("t_min"), format!("must lie in (0, 1), got {t_min}"));
    }
    let x0 = s.opt_f64_list("x0", errs);
    let velocity = s.opt_f64_list("velocity", errs);
    if let Some(d) = dim {
        for (k, v) in [("x0", &x0), ("velocity", &velocity)] {
            if let Some(v) = v {
                if v.len() != d {
                    errs.push(s.key(k), format!("{} entries for dimension {d}", v.len()));
                }
            }
        }
    }
    let v0 = s.opt_f64("v0", errs);
    if let Some(v) = v0 {
        if !(v < 0.0) {
            errs.push(s.key("v0"), format!("must be negative (past-directed), got {v}"));
        }
    }
    let mass = s.f64("mass", 1.0, errs);
    nonnegative(mass, s.key("mass"), errs);
    if v0.is_some() && s.has("mass") {
        errs.push(s.key("mass"), "give geodesic.v0 or geodesic.mass, not both");
    }
    let random = s.usize("random", 0, errs);
    let seed = s.opt_int("seed", errs).unwrap_or(2024) as u64;
    let speed = s.f64("speed", 0.5, errs);
    nonnegative(speed, s.key("speed"), errs);
    let max_mass = s.f64("max_mass", 2.0, errs);
    nonnegative(max_mass, s.key("max_mass"), errs);
    let h = s.f64("h", 1e-3, errs);
    positive(h, s.key("h"), errs);
    let causal_tol = s.f64("causal_tol", 1e-8, errs);
    positive(causal_tol, s.key("causal_tol"), errs);
    let max_steps = s.usize("max_steps", 1_000_000, errs);
    let sigma = s.opt_f64("sigma", errs);
    if let Some(sg) = sigma {
        if !(0.0..1.0).contains(&sg) {
            errs.push(s.key("sigma"), format!("must lie in [0, 1), got {sg}"));
        }
    }
    let vertical = s.bool("vertical", spacetime == SpacetimeKind::Kasner, errs);
    if vertical && spacetime == SpacetimeKind::Simulation {
        errs.push(s.key("vertical"), "the vertical oracle only applies to the Kasner spacetime");
    }
    let slice_every = s.usize("slice_every", 1, errs);
    if slice_every == 0 {
        errs.push(s.key("slice_every"), "must be at least 1");
    }
    s.finish(errs);
    GeodesicConfig {
        spacetime,
        t_min,
        x0,
        velocity,
        v0,
        mass,
        random,
        seed,
        speed,
        max_mass,
        h,
        causal_tol,
        max_steps,
        sigma,
        slice_every,
        vertical,
    }
}

fn parse_vtd(mut s: Section, errs: &mut Errors) -> VtdConfig {
    let kind = s.opt_str("profile", errs).unwrap_or_else(|| "eps".into());
    let profile = match kind.as_str() {
        "eps" => {
            let dim = s.usize("dim", 38, errs);
            let root = parse_root(&mut s, errs);
            let eps = s.f64("eps", 0.001, errs);
            positive(eps, s.key("eps"), errs);
            let amplitude = s.f64("amplitude", 0.5, errs);
            if !(amplitude.abs() < 1.0) {
                errs.push(s.key("amplitude"), "relative amplitude must lie in (-1, 1)");
            }
            VtdProfileKind::Eps { dim, root, eps, amplitude }
        }
        "kasner-circle" => {
            let theta = s.f64("theta", 0.3, errs);
            let amplitude = s.f64("amplitude", 0.05, errs);
            VtdProfileKind::KasnerCircle { theta, amplitude }
        }
        other => {
            errs.push(s.key("profile"), format!("expected 'eps' or 'kasner-circle', got '{other}'"));
            VtdProfileKind::Eps { dim: 38, root: Root::Plus, eps: 0.001, amplitude: 0.5 }
        }
    };
    let wave = s.opt_int("wave", errs).unwrap_or(1);
    if wave == 0 {
        errs.push(s.key("wave"), "must be nonzero");
    }
    let points = s.usize("points", 64, errs);
    if points < kasnerlab_core::grid::MIN_POINTS || !points.is_multiple_of(2) {
        errs.push(s.key("points"), format!("must be even and at least {}", kasnerlab_core::grid::MIN_POINTS));
    }
    let t_max = s.f64("t_max", 0.1, errs);
    let t_min = s.f64("t_min", 1e-3, errs);
    positive(t_min, s.key("t_min"), errs);
    if !(t_min < t_max) {
        errs.push(s.key("t_min"), format!("vtd.t_min = {t_min} must be smaller than vtd.t_max = {t_max}"));
    }
    let samples = s.usize("samples", 9, errs);
    if samples < 3 {
        errs.push(s.key("samples"), "a slope fit needs at least 3 samples");
    }
    let expect = match s.opt_str("expect", errs).as_deref() {
        None | Some("none") => Expectation::None,
        Some("decay") => Expectation::Decay,
        Some("no-decay") => Expectation::NoDecay,
        Some(other) => {
            errs.push(s.key("expect"), format!("expected 'decay', 'no-decay' or 'none', got '{other}'"));
            Expectation::None
        }
    };
    let min_slope = s.f64("min_slope", 0.2, errs);
    s.finish(errs);
    VtdConfig { profile, wave, points, t_max, t_min, samples, expect, min_slope }
}

fn parse_regression(mut s: Section, errs: &mut Errors) -> RegressionConfig {
    let max_background_error = s.opt_f64("max_background_error", errs);
    let max_tk_growth = s.opt_f64("max_tk_growth", errs);
    for (k, v) in [("max_background_error", max_background_error), ("max_tk_growth", max_tk_growth)] {
        if let Some(v) = v {
            nonnegative(v, s.key(k), errs);
        }
    }
    let convergence_dtaus = s.opt_f64_list("convergence_dtaus", errs).unwrap_or_default();
    if convergence_dtaus.len() == 1 {
        errs.push(s.key("convergence_dtaus"), "a convergence study needs at least two step sizes");
    }
    if convergence_dtaus.iter().any(|&h| !(h > 0.0)) {
        errs.push(s.key("convergence_dtaus"), "step sizes must be positive");
    }
    let convergence_t_end = s.f64("convergence_t_end", (-4.0f64).exp(), errs);
    positive(convergence_t_end, s.key("convergence_t_end"), errs);
    let convergence_ratio = s.f64("convergence_ratio", 16.0, errs);
    positive(convergence_ratio, s.key("convergence_ratio"), errs);
    let convergence_tolerance = s.f64("convergence_tolerance", 0.2, errs);
    positive(convergence_tolerance, s.key("convergence_tolerance"), errs);
    s.finish(errs);
    RegressionConfig {
        max_background_error,
        max_tk_growth,
        convergence_dtaus,
        convergence_t_end,
        convergence_ratio,
        convergence_tolerance,
    }
}

fn parse_lapse_check(mut s: Section, errs: &mut Errors) -> LapseCheckConfig {
    let points = s.usize("points", 64, errs);
    if points < kasnerlab_core::grid::MIN_POINTS || !points.is_multiple_of(2) {
        errs.push(s.key("points"), format!("must be even and at least {}", kasnerlab_core::grid::MIN_POINTS));
    }
    let t = s.f64("t", 0.5, errs);
    positive(t, s.key("t"), errs);
    let warp = s.f64("warp", 0.05, errs);
    if !(warp.abs() < 0.5) {
        errs.push(s.key("warp"), "must lie in (-0.5, 0.5)");
    }
    let solution_amplitude = s.f64("solution_amplitude", 0.01, errs);
    let tolerance = s.f64("tolerance", 1e-8, errs);
    positive(tolerance, s.key("tolerance"), errs);
    let sweep_times = s.opt_f64_list("sweep_times", errs).unwrap_or_default();
    check_times(&sweep_times, s.key("sweep_times"), errs);
    let sweep_scales = s.opt_f64_list("sweep_scales", errs).unwrap_or_else(|| vec![1.0]);
    let slack = s.f64("slack", 1.1, errs);
    positive(slack, s.key("slack"), errs);
    s.finish(errs);
    LapseCheckConfig { points, t, warp, solution_amplitude, tolerance, sweep_times, sweep_scales, slack }
}

fn parse_geometry_check(mut s: Section, errs: &mut Errors) -> GeometryCheckConfig {
    let points = s.usize("points", 64, errs);
    let random_points = s.usize("random_points", 16, errs);
    for (k, p) in [("points", points), ("random_points", random_points)] {
        if p < kasnerlab_core::grid::MIN_POINTS || p % 2 != 0 {
            errs.push(s.key(k), format!("must be even and at least {}", kasnerlab_core::grid::MIN_POINTS));
        }
    }
    let phi_amplitude = s.f64("phi_amplitude", 0.1, errs);
    let tolerance = s.f64("tolerance", 1e-7, errs);
    positive(tolerance, s.key("tolerance"), errs);
    let random_metrics = s.usize("random_metrics", 5, errs);
    let random_dim = s.usize("random_dim", 4, errs);
    if random_dim < 2 {
        errs.push(s.key("random_dim"), "must be at least 2");
    }
    let random_amplitude = s.f64("random_amplitude", 0.05, errs);
    if !(random_amplitude >= 0.0 && random_amplitude * random_dim as f64 * 4.0 < 1.0) {
        errs.push(s.key("random_amplitude"), "must be nonnegative and small enough to keep the metric positive definite");
    }
    let seed = s.opt_int("seed", errs).unwrap_or(7) as u64;
    let symmetry_tolerance = s.f64("symmetry_tolerance", 1e-9, errs);
    positive(symmetry_tolerance, s.key("symmetry_tolerance"), errs);
    s.finish(errs);
    GeometryCheckConfig {
        points,
        phi_amplitude,
        tolerance,
        random_metrics,
        random_dim,
        random_points,
        random_amplitude,
        seed,
        symmetry_tolerance,
    }
}

fn parse_norms_check(mut s: Section, errs: &mut Errors) -> NormsCheckConfig {
    let times = s.opt_f64_list("times", errs).unwrap_or_else(|| vec![1.0, 0.1, 0.01]);
    check_times(&times, s.key("times"), errs);
    let amplitude = s.f64("amplitude", 1e-3, errs);
    positive(amplitude, s.key("amplitude"), errs);
    let tolerance = s.f64("tolerance", 1e-10, errs);
    positive(tolerance, s.key("tolerance"), errs);
    s.finish(errs);
    NormsCheckConfig { times, amplitude, tolerance }
}

fn needs_exponents(c: Command) -> bool {
    matches!(c, Command::Exponents | Command::Kretschmann | Command::Simulate | Command::Geodesic | Command::NormsCheck)
}

fn needs_moderate(c: Command) -> bool {
    matches!(c, Command::Simulate | Command::NormsCheck)
}

/// Parses and validates TOML text.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        ConfigErrors(vec![Violation { path: "(syntax)".into(), message: e.message().to_string() }])
    })?;
    parse_table(table)
}

/// Validates an already parsed TOML table.
pub fn parse_table(mut root: Table) -> Result<RunConfig, ConfigErrors> {
    let mut errs = Errors(Vec::new());
    let command = match root.remove("command") {
        Some(Value::String(s)) => s.parse::<Command>().map_err(|m| errs.push("command", m)).ok(),
        Some(other) => {
            errs.push("command", format!("expected a string, found {}", type_name(&other)));
            None
        }
        None => {
            errs.push("command", "required");
            None
        }
    };
    let mut take = |name: &str, errs: &mut Errors| Section::from_value(name.to_string(), root.remove(name), errs);
    let exp_section = take("exponents", &mut errs);
    let exponents = parse_exponents(exp_section, &mut errs);
    let dim = exponents.as_ref().map(ExponentSpec::dim);
    let grid_section = take("grid", &mut errs);
    let grid = parse_grid(grid_section, dim, &mut errs);
    let integrator_section = take("integrator", &mut errs);
    let lapse_section = take("lapse", &mut errs);
    let integrator = parse_integrator(integrator_section, lapse_section, &mut errs);
    let norms = parse_norms(take("norms", &mut errs), &mut errs);
    let output = parse_output(take("output", &mut errs), &mut errs);
    let kretschmann = parse_kretschmann(take("kretschmann", &mut errs), &mut errs);
    let geodesic = parse_geodesic(take("geodesic", &mut errs), dim, &mut errs);
    let vtd = parse_vtd(take("vtd", &mut errs), &mut errs);
    let contrast_section = take("vtd_contrast", &mut errs);
    let vtd_contrast = contrast_section.present.then(|| parse_vtd(contrast_section, &mut errs));
    let regression = parse_regression(take("regression", &mut errs), &mut errs);
    let lapse_check = parse_lapse_check(take("lapse_check", &mut errs), &mut errs);
    let geometry_check = parse_geometry_check(take("geometry_check", &mut errs), &mut errs);
    let norms_check = parse_norms_check(take("norms_check", &mut errs), &mut errs);
    let perturbations = parse_perturbations(root.remove("perturbation"), dim, grid.active.len(), &mut errs);
    for k in root.keys() {
        errs.push(k.clone(), "unknown key or section");
    }

    if let Some(cmd) = command {
        let wants_exponents = needs_exponents(cmd)
            || (cmd == Command::LapseCheck && !lapse_check.sweep_times.is_empty());
        match &exponents {
            None if wants_exponents => errs.push("exponents", format!("the {} command needs an [exponents] section", cmd.name())),
            Some(spec) if wants_exponents => match spec.build() {
                Err(e) => errs.push("exponents", e.to_string()),
                Ok(q) => {
                    let report = validate_exponents(&q);
                    if needs_moderate(cmd) || (cmd == Command::Geodesic && geodesic.sigma.is_none()) {
                        match &report {
                            Ok(r) if !r.moderate => errs.push(
                                "exponents",
                                format!("max|q| = {} is not below 1/6; the {} command needs a moderately anisotropic background", r.max_abs, cmd.name()),
                            ),
                            Err(e) => errs.push("exponents", e.to_string()),
                            _ => {}
                        }
                        if needs_moderate(cmd) && q.max_abs() < 1.0 / 6.0 {
                            if let Err(e) = norms.build(&q) {
                                errs.push("norms", e.to_string());
                            }
                        }
                    } else if let Err(e) = report {
                        errs.push("exponents", e.to_string());
                    }
                }
            },
            _ => {}
        }
        if cmd == Command::Simulate || (cmd == Command::Geodesic && geodesic.spacetime == SpacetimeKind::Simulation) {
            if cmd == Command::Geodesic && integrator.t_start != 1.0 {
                errs.push("integrator.t_start", "geodesics start at t = 1, so the simulation must too");
            }
            if cmd == Command::Geodesic && geodesic.t_min < integrator.t_end {
                errs.push(
                    "geodesic.t_min",
                    format!("geodesic.t_min = {} lies before integrator.t_end = {}", geodesic.t_min, integrator.t_end),
                );
            }
            if cmd == Command::Simulate && !regression.convergence_dtaus.is_empty() {
                if !perturbations.is_empty() {
                    errs.push(
                        "regression.convergence_dtaus",
                        "the step-halving study compares with the exact Kasner solution and cannot be combined with [[perturbation]]",
                    );
                }
                if !(regression.convergence_t_end < integrator.t_start) {
                    errs.push(
                        "regression.convergence_t_end",
                        format!(
                            "regression.convergence_t_end = {} must be smaller than integrator.t_start = {}",
                            regression.convergence_t_end, integrator.t_start
                        ),
                    );
                }
            }
        } else if !perturbations.is_empty() && cmd != Command::LapseCheck {
            errs.push("perturbation", format!("perturbations are not used by the {} command", cmd.name()));
        }
    }

    if !errs.0.is_empty() {
        return Err(ConfigErrors(errs.0));
    }
    Ok(RunConfig {
        command: command.expect("checked above"),
        exponents,
        grid,
        perturbations,
        integrator,
        norms,
        output,
        kretschmann,
        geodesic,
        vtd,
        vtd_contrast,
        regression,
        lapse_check,
        geometry_check,
        norms_check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_exponents_config() {
        let c = parse_config("command = \"exponents\"\n[exponents]\ndim = 38\neps = 0.001\n").unwrap();
        assert_eq!(c.command, Command::Exponents);
        assert_eq!(c.kasner().unwrap().dim(), 38);
    }

    #[test]
    fn collects_every_violation() {
        let text = r#"
            command = "simulate"
            bogus = 1
            [exponents]
            dim = 38
            eps = 0.001
            colour = "red"
            [grid]
            active = [39]
            points = [7]
            [integrator]
            dtau = -1
        "#;
        let errs = parse_config(text).unwrap_err().0;
        let paths: Vec<_> = errs.iter().map(|v| v.path.as_str()).collect();
        for p in ["bogus", "exponents.colour", "grid.active[0]", "grid.points[0]", "integrator.dtau"] {
            assert!(paths.contains(&p), "{p} missing from {paths:?}");
        }
    }

    #[test]
    fn type_errors_name_the_path() {
        let errs = parse_config("command = \"exponents\"\n[exponents]\ndim = \"many\"\neps = 0.001\n").unwrap_err().0;
        assert_eq!(errs[0].path, "exponents.dim");
        assert!(errs[0].message.contains("integer"));
    }

    #[test]
    fn syntax_errors_are_reported() {
        let errs = parse_config("command = ").unwrap_err().0;
        assert_eq!(errs[0].path, "(syntax)");
    }
}
