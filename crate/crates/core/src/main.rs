use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geolab::cli::{render_summary, resolve_out_dir, run, CommandName, RunOptions, Scenario, OUT_DIR_ENV};
use serde_json::{json, Map, Value};

/// Jacobi fields, Riccati comparison, volume-density certificates,
/// parametrix coefficients and Weyl counting along geodesics.
///
/// Global options go before the subcommand.
#[derive(Debug, Parser)]
#[command(name = "geolab", version, about)]
struct Cli {
    /// JSON scenario file (replaces the subcommand).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: scenario outputs.dir, then $GEOLAB_OUT_DIR, then ./geolab-out].
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads for sweep cells.
    #[arg(long)]
    jobs: Option<usize>,
    /// Multiplies every check tolerance.
    #[arg(long, default_value_t = 1.0)]
    tol_scale: f64,
    /// Seed for `random:` profiles.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a matrix Jacobi field and dump the trajectory.
    Jacobi(JacobiArgs),
    /// Bridge matrices N_{s,t} and growth matrices M(s) over grids.
    Bridge(BridgeArgs),
    /// Lower-bound certificate for the volume density.
    ThetaBound(ThetaBoundArgs),
    /// Hadamard parametrix coefficients on a radial model.
    Parametrix(ParametrixArgs),
    /// Eigenvalue counting on a flat torus.
    Weyl(WeylArgs),
    /// Cartesian product of parameter axes over a scenario template.
    Sweep(SweepArgs),
    /// Closed-form constant-curvature suite.
    Selftest,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SeedArg {
    #[value(name = "A")]
    A,
    #[value(name = "J1")]
    J1,
    #[value(name = "J2")]
    J2,
}

#[derive(Debug, Args)]
struct JacobiArgs {
    /// Profile spec, e.g. constant:n=3,c=-1 or seeded:n=2,phi=<expr>.
    #[arg(long)]
    profile: String,
    #[arg(long, value_enum)]
    seed: Option<SeedArg>,
    #[arg(long)]
    t_max: f64,
    #[arg(long)]
    step: Option<f64>,
    /// CSV file name inside the output directory.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct BridgeArgs {
    #[arg(long)]
    profile: String,
    #[arg(long, value_delimiter = ',', required = true)]
    s_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    t_grid: Vec<f64>,
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Debug, Args)]
struct ThetaBoundArgs {
    #[arg(long)]
    profile: String,
    #[arg(long)]
    s: f64,
    /// Defaults to 2s.
    #[arg(long)]
    t_min: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    t_count: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Debug, Args)]
struct ParametrixArgs {
    /// flat:n=<int> or hyperbolic:n=<int>[,k=<f>].
    #[arg(long)]
    model: String,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    r_max: Option<f64>,
    #[arg(long)]
    r_count: Option<usize>,
    #[arg(long)]
    variant: Option<String>,
    /// simpson or trapezoid.
    #[arg(long)]
    rule: Option<String>,
    /// Skip the grid-doubling comparison.
    #[arg(long)]
    no_self_convergence: bool,
}

#[derive(Debug, Args)]
struct WeylArgs {
    /// Side lengths, e.g. L=2*pi,2*pi.
    #[arg(long)]
    torus: String,
    #[arg(long)]
    lambda_max: f64,
    #[arg(long)]
    lambda_count: usize,
    /// Largest number of lattice columns to enumerate.
    #[arg(long)]
    cap: Option<u64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Scenario file used as the template for every cell.
    #[arg(long)]
    template: PathBuf,
    /// name=v1;v2;... where each value is JSON or a bare string.
    #[arg(long = "axis", required = true)]
    axes: Vec<String>,
}

fn insert<T: serde::Serialize>(map: &mut Map<String, Value>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        map.insert(key.to_string(), json!(v));
    }
}

fn parse_axis(spec: &str) -> Result<(String, Vec<Value>), String> {
    let (name, values) = spec.split_once('=').ok_or_else(|| format!("axis '{spec}' needs name=values"))?;
    let values = values
        .split(';')
        .filter(|v| !v.trim().is_empty())
        .map(|v| serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().to_string())))
        .collect();
    Ok((name.trim().to_string(), values))
}

fn scenario_from(command: Command) -> Result<Scenario, String> {
    let mut p = Map::new();
    let name = match command {
        Command::Jacobi(a) => {
            p.insert("profile".into(), json!(a.profile));
            insert(&mut p, "seed", a.seed.map(|s| format!("{s:?}")));
            p.insert("t_max".into(), json!(a.t_max));
            insert(&mut p, "step", a.step);
            insert(&mut p, "out", a.out);
            CommandName::Jacobi
        }
        Command::Bridge(a) => {
            p.insert("profile".into(), json!(a.profile));
            p.insert("s_grid".into(), json!(a.s_grid));
            p.insert("t_grid".into(), json!(a.t_grid));
            insert(&mut p, "step", a.step);
            CommandName::Bridge
        }
        Command::ThetaBound(a) => {
            p.insert("profile".into(), json!(a.profile));
            p.insert("s".into(), json!(a.s));
            insert(&mut p, "t_min", a.t_min);
            insert(&mut p, "t_max", a.t_max);
            insert(&mut p, "t_count", a.t_count);
            insert(&mut p, "step", a.step);
            CommandName::ThetaBound
        }
        Command::Parametrix(a) => {
            p.insert("model".into(), json!(a.model));
            insert(&mut p, "k_max", a.k_max);
            insert(&mut p, "r_max", a.r_max);
            insert(&mut p, "r_count", a.r_count);
            insert(&mut p, "variant", a.variant);
            insert(&mut p, "rule", a.rule);
            if a.no_self_convergence {
                p.insert("self_convergence".into(), json!(false));
            }
            CommandName::Parametrix
        }
        Command::Weyl(a) => {
            p.insert("torus".into(), json!(a.torus));
            p.insert("lambda_max".into(), json!(a.lambda_max));
            p.insert("lambda_count".into(), json!(a.lambda_count));
            insert(&mut p, "cap", a.cap);
            CommandName::Weyl
        }
        Command::Sweep(a) => {
            let text = std::fs::read_to_string(&a.template).map_err(|e| format!("{}: {e}", a.template.display()))?;
            let template: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", a.template.display()))?;
            let mut axes = Map::new();
            for spec in &a.axes {
                let (name, values) = parse_axis(spec)?;
                axes.insert(name, Value::Array(values));
            }
            p.insert("template".into(), template);
            p.insert("axes".into(), Value::Object(axes));
            CommandName::Sweep
        }
        Command::Selftest => CommandName::Selftest,
    };
    Ok(Scenario::new(name, p))
}

fn load_scenario(cli: &mut Cli) -> Result<Scenario, String> {
    match (cli.config.as_ref(), cli.command.take()) {
        (Some(_), Some(_)) => Err("--config and a subcommand are mutually exclusive".into()),
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            Scenario::from_json(&text).map_err(|e| e.to_string())
        }
        (None, Some(command)) => scenario_from(command),
        (None, None) => Err("expected a subcommand or --config <path>".into()),
    }
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    let scenario = match load_scenario(&mut cli) {
        Ok(s) => s,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(2);
        }
    };
    let env = std::env::var(OUT_DIR_ENV).ok();
    let options = RunOptions {
        out_dir: resolve_out_dir(cli.out_dir.as_deref(), &scenario, env.as_deref()),
        jobs: cli.jobs,
        tol_scale: cli.tol_scale,
        seed: cli.seed,
    };
    let report = run(&scenario, &options);
    print!("{}", render_summary(&report));
    println!("report: {}", options.out_dir.join(geolab::cli::REPORT_FILE).display());
    ExitCode::from(report.exit_code as u8)
}
