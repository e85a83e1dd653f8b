use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kasnerlab_cli::{parse_table, resolve_out_dir, run, CliError, ConfigErrors, Violation, OUT_DIR_ENV};
use toml::{Table, Value};

const EXIT_CODES: &str = "\
Exit status:
  0  the command finished and every configured ceiling or expectation held
  1  the command finished but a ceiling or expectation was violated (see summary.json)
  2  invalid configuration or command line
  3  runtime failure (I/O, solver breakdown, degenerate data)

Artifacts (CSV files, snapshots and summary.json) go to --out-dir, else $KASNERLAB_OUT_DIR,
else [output].dir from the config, else ./kasnerlab-out. Grid directions and tensor
indices are 1-based in configs and files.";

#[derive(Parser)]
#[command(
    name = "kasnerlab",
    version,
    about = "Kasner backgrounds, CMC-gauge Einstein-vacuum evolution and big-bang diagnostics",
    after_help = EXIT_CODES
)]
struct Cli {
    /// Output directory for CSV, snapshot and summary files
    #[arg(long, global = true, env = OUT_DIR_ENV, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Default)]
struct ExponentArgs {
    /// Spatial dimension D (built with the moderately anisotropic construction) [default: 38]
    #[arg(long)]
    dim: Option<i64>,
    /// Construction parameter eps [default: 0.001]
    #[arg(long)]
    eps: Option<f64>,
    /// Take the "-" root for the 37th exponent instead of "+"
    #[arg(long)]
    minus_root: bool,
}

#[derive(Subcommand)]
enum Sub {
    /// Print the Kasner exponents and their algebraic report as CSV (index,q)
    Exponents {
        /// TOML config; flags given here override it
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[command(flatten)]
        exponents: ExponentArgs,
    },
    /// Kretschmann scalar of exact Kasner against C t^-4 (CSV: t,kretschmann_min,kretschmann_max,analytic)
    Kretschmann {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[command(flatten)]
        exponents: ExponentArgs,
        /// Use the 36-dimensional boundary pattern (fifteen -1/6, twenty-one 1/6)
        #[arg(long, conflicts_with_all = ["dim", "eps"])]
        pattern36: bool,
        /// Comma-separated times [default: 1,0.5,0.25]
        #[arg(long, value_delimiter = ',', value_name = "T,..")]
        times: Option<Vec<f64>>,
    },
    /// Evolve perturbed Kasner data toward t = 0 and write the diagnostics CSV and summary
    Simulate {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Override integrator.dtau
        #[arg(long)]
        dtau: Option<f64>,
        /// Override integrator.t_end
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Integrate past-directed causal geodesics and check the affine-parameter bound
    Geodesic {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[command(flatten)]
        exponents: ExponentArgs,
        /// Stop time geodesic.t_min [default: 0.01]
        #[arg(long)]
        t_min: Option<f64>,
        /// Comma-separated spatial velocity components (D of them) [default: all zero]
        #[arg(long, value_delimiter = ',', value_name = "V,..")]
        velocity: Option<Vec<f64>>,
        /// -g4(v, v) used to solve for the time component [default: 1]
        #[arg(long)]
        mass: Option<f64>,
        /// Integrate this many random causal starts instead of one
        #[arg(long)]
        random: Option<i64>,
        /// Seed for the random starts [default: 2024]
        #[arg(long)]
        seed: Option<i64>,
    },
    /// Decay of sup |t^2 Ric| for a VTD metric with spatially varying exponents (CSV: t,sup_t2_ricci)
    VtdCheck {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// "eps" (moderate family) or "kasner-circle" (D = 3) [default: eps]
        #[arg(long)]
        profile: Option<String>,
        /// Largest sampled time [default: 0.1]
        #[arg(long)]
        t_max: Option<f64>,
        /// Smallest sampled time [default: 1e-3]
        #[arg(long)]
        t_min: Option<f64>,
        /// Number of log-spaced times [default: 9]
        #[arg(long)]
        samples: Option<i64>,
        /// "decay", "no-decay" or "none": what makes the exit status 0 [default: none]
        #[arg(long)]
        expect: Option<String>,
    },
    /// Lapse solver checks: manufactured solution and the discrete maximum principle
    LapseCheck {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Geometry checks: conformally flat scalar curvature and Riemann symmetries
    GeometryCheck {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Norm monitor checks: zero on Kasner, homogeneity, single-mode values
    NormsCheck {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[command(flatten)]
        exponents: ExponentArgs,
    },
    /// Validate a config file and list every problem with its key path
    CheckConfig {
        /// TOML config file
        file: PathBuf,
    },
    /// Run a config file with the command named by its `command` key
    Run {
        /// TOML config file
        file: PathBuf,
    },
}

fn load(path: &Path) -> Result<Table, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    text.parse::<Table>().map_err(|e| {
        ConfigErrors(vec![Violation { path: format!("{} (syntax)", path.display()), message: e.message().to_string() }])
            .into()
    })
}

fn section<'a>(t: &'a mut Table, name: &str) -> &'a mut Table {
    let entry = t.entry(name.to_string()).or_insert_with(|| Value::Table(Table::new()));
    if !entry.is_table() {
        *entry = Value::Table(Table::new());
    }
    entry.as_table_mut().expect("just made a table")
}

fn set(t: &mut Table, sec: &str, key: &str, v: Option<Value>) {
    if let Some(v) = v {
        section(t, sec).insert(key.to_string(), v);
    }
}

fn floats(v: Option<Vec<f64>>) -> Option<Value> {
    v.map(|v| Value::Array(v.into_iter().map(Value::Float).collect()))
}

fn apply_exponents(t: &mut Table, a: &ExponentArgs) {
    if !t.contains_key("exponents") {
        set(t, "exponents", "dim", Some(Value::Integer(38)));
        set(t, "exponents", "eps", Some(Value::Float(0.001)));
    }
    if a.dim.is_some() || a.eps.is_some() {
        let s = section(t, "exponents");
        s.remove("values");
        s.remove("pattern");
    }
    set(t, "exponents", "dim", a.dim.map(Value::Integer));
    set(t, "exponents", "eps", a.eps.map(Value::Float));
    if a.minus_root {
        set(t, "exponents", "root", Some(Value::String("minus".into())));
    }
}

/// Builds the TOML table for a subcommand: the config file (if any) plus command line overrides.
fn assemble(sub: &Sub) -> Result<Table, CliError> {
    let (name, config) = match sub {
        Sub::Exponents { config, .. } => ("exponents", config.clone()),
        Sub::Kretschmann { config, .. } => ("kretschmann", config.clone()),
        Sub::Simulate { config, .. } => ("simulate", Some(config.clone())),
        Sub::Geodesic { config, .. } => ("geodesic", config.clone()),
        Sub::VtdCheck { config, .. } => ("vtd-check", config.clone()),
        Sub::LapseCheck { config } => ("lapse-check", config.clone()),
        Sub::GeometryCheck { config } => ("geometry-check", config.clone()),
        Sub::NormsCheck { config, .. } => ("norms-check", config.clone()),
        Sub::CheckConfig { file } | Sub::Run { file } => return load(file),
    };
    let mut t = match &config {
        Some(p) => load(p)?,
        None => Table::new(),
    };
    match t.get("command") {
        None => {
            t.insert("command".into(), Value::String(name.into()));
        }
        Some(Value::String(c)) if c == name => {}
        Some(other) => {
            let shown = other.as_str().map(str::to_string).unwrap_or_else(|| other.to_string());
            return Err(ConfigErrors(vec![Violation {
                path: "command".into(),
                message: format!("the config is for '{shown}' but the subcommand is '{name}' (use `kasnerlab run`)"),
            }])
            .into());
        }
    }
    match sub {
        Sub::Exponents { exponents, .. } => apply_exponents(&mut t, exponents),
        Sub::Kretschmann { exponents, pattern36, times, .. } => {
            if *pattern36 {
                let s = section(&mut t, "exponents");
                s.clear();
                s.insert("pattern".into(), Value::String("boundary36".into()));
            }
            apply_exponents(&mut t, exponents);
            set(&mut t, "kretschmann", "times", floats(times.clone()));
        }
        Sub::Simulate { dtau, t_end, .. } => {
            set(&mut t, "integrator", "dtau", dtau.map(Value::Float));
            set(&mut t, "integrator", "t_end", t_end.map(Value::Float));
        }
        Sub::Geodesic { exponents, t_min, velocity, mass, random, seed, .. } => {
            apply_exponents(&mut t, exponents);
            set(&mut t, "geodesic", "t_min", t_min.map(Value::Float));
            set(&mut t, "geodesic", "velocity", floats(velocity.clone()));
            set(&mut t, "geodesic", "mass", mass.map(Value::Float));
            set(&mut t, "geodesic", "random", random.map(Value::Integer));
            set(&mut t, "geodesic", "seed", seed.map(Value::Integer));
        }
        Sub::VtdCheck { profile, t_max, t_min, samples, expect, .. } => {
            set(&mut t, "vtd", "profile", profile.clone().map(Value::String));
            set(&mut t, "vtd", "t_max", t_max.map(Value::Float));
            set(&mut t, "vtd", "t_min", t_min.map(Value::Float));
            set(&mut t, "vtd", "samples", samples.map(Value::Integer));
            set(&mut t, "vtd", "expect", expect.clone().map(Value::String));
        }
        Sub::NormsCheck { exponents, .. } => apply_exponents(&mut t, exponents),
        _ => {}
    }
    Ok(t)
}

fn execute(cli: &Cli) -> Result<bool, CliError> {
    let table = assemble(&cli.command)?;
    let cfg = parse_table(table)?;
    if let Sub::CheckConfig { file } = &cli.command {
        println!("{}: valid {} configuration", file.display(), cfg.command.name());
        return Ok(true);
    }
    let dir = resolve_out_dir(cli.out_dir.as_deref(), &cfg);
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let outcome = run(&cfg, &dir, &mut lock)?;
    lock.flush().ok();
    if !outcome.success {
        eprintln!(
            "kasnerlab: {} finished with a violated ceiling or expectation; see {}",
            cfg.command.name(),
            outcome.summary_path.display()
        );
    }
    Ok(outcome.success)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let text = e.to_string();
            eprintln!("kasnerlab: {}", text.trim_end());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
