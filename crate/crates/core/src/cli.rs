//! Scenario runner behind the `geolab` binary: validates JSON scenarios,
//! runs the module pipelines, and writes CSV tables plus a JSON report.
//!
//! Exit codes: 0 when every check passes, 1 for I/O failures, 2 for schema
//! or precondition violations, 3 for numerical failures (a conjugate point
//! where none is allowed, unconverged tails, overflow) and 4 when a
//! guaranteed bound is violated, which points at an implementation bug.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::boundary::{bridge_matrix, growth_table_covering};
use crate::curvature::{
    parse_profile_spec, random_seeded_profile, scalar_a, constant_profile, CurvatureProfile, Dimension, MetricFile,
    DEFAULT_HORIZON,
};
use crate::error::GeoError;
use crate::jacobi::{field_a, first_conjugate_time, integrate, wronskian_drift, JacobiSeed, JacobiTrajectory};
use crate::linalg;
use crate::parametrix::{
    coefficient_table, growth_fit, self_convergence, uniform_grid, QuadratureRule, RadialModel, Variant,
};
use crate::riccati::{lower_bound_certificate, riccati_bound_check, riccati_from, theta};
use crate::weyl::{count_eigenvalues, remainder_diagnostic_with_cap, FlatTorusModel, DEFAULT_CAP, GUARD};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPORT_FILE: &str = "report.json";
pub const OUT_DIR_ENV: &str = "GEOLAB_OUT_DIR";

/// Process exit status, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exit {
    Pass,
    Io,
    Schema,
    Numerical,
    Falsified,
}

impl Exit {
    pub fn code(self) -> i32 {
        match self {
            Exit::Pass => 0,
            Exit::Io => 1,
            Exit::Schema => 2,
            Exit::Numerical => 3,
            Exit::Falsified => 4,
        }
    }

    fn from_error(e: &GeoError) -> Exit {
        match e {
            GeoError::InvalidInput(_) | GeoError::Parse { .. } => Exit::Schema,
            GeoError::Io(_) => Exit::Io,
            _ => Exit::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Jacobi,
    Bridge,
    ThetaBound,
    Parametrix,
    Weyl,
    Sweep,
    Selftest,
}

/// Check tolerances. Defaults are the acceptance tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Doubling increment at which the growth matrix counts as converged.
    pub growth: f64,
    /// Wronskian drift relative to `1 + sup|X|·sup|X'|`.
    pub wronskian: f64,
    /// Relative error against closed-form oracles.
    pub oracle: f64,
    /// Slack in `‖U‖ ≤ k coth(kt)`.
    pub riccati_ratio: f64,
    pub bridge_symmetry: f64,
    pub bridge_lambda: f64,
    pub margin: f64,
    /// Exact parametrix identities (`u_k ≡ 0` flat, `ũ_0 ≡ 1` hyperbolic).
    pub parametrix_exact: f64,
    pub self_convergence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            growth: 1e-10,
            wronskian: 1e-8,
            oracle: 1e-6,
            riccati_ratio: 1e-6,
            bridge_symmetry: 1e-9,
            bridge_lambda: 1e-9,
            margin: 1e-8,
            parametrix_exact: 1e-10,
            self_convergence: 1e-6,
        }
    }
}

impl Tolerances {
    fn values(&self) -> [(&'static str, f64); 9] {
        [
            ("growth", self.growth),
            ("wronskian", self.wronskian),
            ("oracle", self.oracle),
            ("riccati_ratio", self.riccati_ratio),
            ("bridge_symmetry", self.bridge_symmetry),
            ("bridge_lambda", self.bridge_lambda),
            ("margin", self.margin),
            ("parametrix_exact", self.parametrix_exact),
            ("self_convergence", self.self_convergence),
        ]
    }

    fn validate(&self) -> Result<(), GeoError> {
        match self.values().iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            Some((name, v)) => Err(GeoError::InvalidInput(format!("tolerance '{name}' must be positive, got {v}"))),
            None => Ok(()),
        }
    }

    /// Scales every check tolerance; the growth convergence threshold is a
    /// numerical parameter and stays fixed.
    fn scaled(&self, factor: f64) -> Tolerances {
        Tolerances {
            growth: self.growth,
            wronskian: self.wronskian * factor,
            oracle: self.oracle * factor,
            riccati_ratio: self.riccati_ratio * factor,
            bridge_symmetry: self.bridge_symmetry * factor,
            bridge_lambda: self.bridge_lambda * factor,
            margin: self.margin * factor,
            parametrix_exact: self.parametrix_exact * factor,
            self_convergence: self.self_convergence * factor,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Output directory, overridden by `--out-dir` (see [`resolve_out_dir`]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

/// One run of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub command: CommandName,
    #[serde(default)]
    pub parameters: Map<String, Value>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl Scenario {
    pub fn new(command: CommandName, parameters: Map<String, Value>) -> Self {
        Scenario { command, parameters, outputs: Outputs::default(), tolerances: Tolerances::default() }
    }

    pub fn from_json(text: &str) -> Result<Self, GeoError> {
        serde_json::from_str(text).map_err(|e| GeoError::InvalidInput(format!("scenario: {e}")))
    }
}

/// Options that come from the command line rather than the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads for sweeps; `None` uses the rayon default.
    pub jobs: Option<usize>,
    pub tol_scale: f64,
    /// Seed for `random:` profiles.
    pub seed: u64,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions { out_dir: out_dir.into(), jobs: None, tol_scale: 1.0, seed: 0 }
    }
}

/// Command line beats the scenario file, which beats `GEOLAB_OUT_DIR`,
/// which beats `./geolab-out`.
pub fn resolve_out_dir(cli: Option<&Path>, scenario: &Scenario, env: Option<&str>) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| scenario.outputs.dir.as_ref().map(PathBuf::from))
        .or_else(|| env.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("geolab-out"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
}

/// Whether a failed check falsifies a guaranteed bound or only reports a
/// loss of numerical accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    Bound,
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub status: Status,
    pub value: f64,
    pub tolerance: f64,
    /// Where the measured value was attained.
    pub witness: Value,
    /// Exit status on failure when it is not implied by `kind`, as for
    /// sweep cells that carry their own exit code.
    #[serde(skip)]
    severity: Option<Exit>,
}

impl Check {
    /// Passes when `value ≤ tolerance`.
    fn at_most(name: impl Into<String>, kind: CheckKind, value: f64, tolerance: f64, witness: Value) -> Self {
        let pass = value <= tolerance;
        Check { name: name.into(), kind, status: status(pass), value, tolerance, witness, severity: None }
    }

    /// Passes when `value ≥ -tolerance`.
    fn at_least_minus(name: impl Into<String>, kind: CheckKind, value: f64, tolerance: f64, witness: Value) -> Self {
        let pass = value >= -tolerance;
        Check { name: name.into(), kind, status: status(pass), value, tolerance, witness, severity: None }
    }

    fn exit(&self) -> Exit {
        match (self.status, self.kind) {
            (Status::Pass, _) => Exit::Pass,
            (Status::Fail, _) if self.severity.is_some() => self.severity.unwrap(),
            (Status::Fail, CheckKind::Bound) => Exit::Falsified,
            (Status::Fail, CheckKind::Accuracy) => Exit::Numerical,
        }
    }
}

fn status(pass: bool) -> Status {
    if pass {
        Status::Pass
    } else {
        Status::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub kind: Exit,
    pub message: String,
    pub witness: Value,
}

impl ErrorReport {
    fn from_error(e: &GeoError) -> Self {
        let witness = match e {
            GeoError::ConjugatePoint { t } => json!({ "conjugate_point": t }),
            GeoError::NotConverged { t_used, increment } => json!({ "t_used": t_used, "increment": increment }),
            GeoError::Singular { t, cond } => json!({ "t": t, "cond": cond }),
            GeoError::Overflow { last_valid } => json!({ "last_valid": last_valid }),
            GeoError::OutOfRange { t, lo, hi } => json!({ "t": t, "lo": lo, "hi": hi }),
            GeoError::EnumerationCap { points, cap } => json!({ "points": points.to_string(), "cap": cap.to_string() }),
            _ => Value::Null,
        };
        ErrorReport { kind: Exit::from_error(e), message: e.to_string(), witness }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub scenario: Scenario,
    pub tol_scale: f64,
    pub seed: u64,
    pub status: Status,
    pub exit_code: i32,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
    pub summary: Value,
    pub profile_fingerprints: BTreeMap<String, String>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub timing: Timing,
}

impl RunReport {
    pub fn exit(&self) -> Exit {
        let from_checks = self.checks.iter().map(Check::exit).max().unwrap_or(Exit::Pass);
        let from_error = self.error.as_ref().map_or(Exit::Pass, |e| e.kind);
        from_checks.max(from_error)
    }
}

/// Results of one command before they are wrapped into a report.
#[derive(Default)]
struct Output {
    checks: Vec<Check>,
    summary: Map<String, Value>,
    fingerprints: BTreeMap<String, String>,
    outputs: Vec<String>,
}

struct Context<'a> {
    dir: &'a Path,
    tol: Tolerances,
    options: &'a RunOptions,
}

impl Context<'_> {
    fn profile(&self, spec: &str, geodesic: Option<&Geodesic>, out: &mut Output) -> Result<CurvatureProfile, GeoError> {
        let profile = resolve_profile(spec, geodesic, self.options.seed)?;
        out.fingerprints.insert(profile.label().to_string(), profile.fingerprint());
        Ok(profile)
    }

    fn write(&self, name: &str, body: &str, out: &mut Output) -> Result<(), GeoError> {
        std::fs::write(self.dir.join(name), body)?;
        out.outputs.push(name.to_string());
        Ok(())
    }
}

/// A geodesic override for `metric:<file>` profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geodesic {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

/// Resolves profile strings, adding `random:n=<int>[,index=<int>][,horizon=<f>]`
/// (a sign-changing seeded profile drawn from `seed`) and geodesic
/// overrides for metric files.
pub fn resolve_profile(spec: &str, geodesic: Option<&Geodesic>, seed: u64) -> Result<CurvatureProfile, GeoError> {
    let spec = spec.trim();
    if let Some(rest) = spec.strip_prefix("random:") {
        let (mut n, mut index, mut horizon) = (None, 0_u64, DEFAULT_HORIZON);
        for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| GeoError::InvalidInput(format!("expected key=value, got '{part}'")))?;
            let bad = || GeoError::InvalidInput(format!("bad value '{v}' for '{k}'"));
            match k.trim() {
                "n" => n = Some(v.trim().parse::<usize>().map_err(|_| bad())?),
                "index" => index = v.trim().parse::<u64>().map_err(|_| bad())?,
                "horizon" => horizon = v.trim().parse::<f64>().map_err(|_| bad())?,
                other => return Err(GeoError::InvalidInput(format!("unknown key '{other}'"))),
            }
        }
        let n = Dimension::new(n.ok_or_else(|| GeoError::InvalidInput("random profile needs n=<int>".into()))?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        return random_seeded_profile(&mut rng, n, horizon);
    }
    match (spec.strip_prefix("metric:"), geodesic) {
        (Some(path), Some(g)) => {
            let text = std::fs::read_to_string(path.trim())?;
            let file: MetricFile =
                serde_json::from_str(&text).map_err(|e| GeoError::InvalidInput(format!("metric file {path}: {e}")))?;
            let label = format!("{spec}:x={:?}:u={:?}", g.x, g.u);
            file.with_geodesic(g.x.clone(), g.u.clone())?.into_profile(&label)
        }
        (None, Some(_)) => Err(GeoError::InvalidInput("a geodesic override needs a metric: profile".into())),
        _ => parse_profile_spec(spec),
    }
}

fn params<T: for<'de> Deserialize<'de>>(scenario: &Scenario) -> Result<T, GeoError> {
    serde_json::from_value(Value::Object(scenario.parameters.clone()))
        .map_err(|e| GeoError::InvalidInput(format!("parameters of '{}': {e}", command_label(scenario.command))))
}

fn command_label(c: CommandName) -> String {
    serde_json::to_value(c).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// CSV with doubles printed at 17 significant digits.
struct Csv {
    writer: csv::Writer<Vec<u8>>,
}

impl Csv {
    fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut csv = Csv { writer: csv::Writer::from_writer(Vec::new()) };
        csv.row(header);
        csv
    }

    fn row<S: AsRef<str>>(&mut self, cells: &[S]) {
        // writing into a Vec cannot fail
        self.writer.write_record(cells.iter().map(|c| c.as_ref())).expect("in-memory csv");
    }

    fn text(self) -> String {
        let bytes = self.writer.into_inner().expect("in-memory csv");
        String::from_utf8(bytes).expect("csv cells are utf-8")
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

fn default_step() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
enum SeedChoice {
    A,
    J1,
    J2,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JacobiParams {
    profile: String,
    #[serde(default = "seed_a")]
    seed: SeedChoice,
    t_max: f64,
    #[serde(default = "default_step")]
    step: f64,
    #[serde(default)]
    out: Option<String>,
    #[serde(default)]
    geodesic: Option<Geodesic>,
}

fn seed_a() -> SeedChoice {
    SeedChoice::A
}

fn run_jacobi(scenario: &Scenario, ctx: &Context) -> Result<Output, GeoError> {
    let p: JacobiParams = params(scenario)?;
    let mut out = Output::default();
    let profile = ctx.profile(&p.profile, p.geodesic.as_ref(), &mut out)?;
    let m = profile.dim().transverse();
    let traj = match p.seed {
        SeedChoice::A => field_a(&profile, p.t_max, p.step)?,
        SeedChoice::J1 => integrate(&profile, &JacobiSeed::j1(m), 0.0, p.t_max, p.step)?,
        SeedChoice::J2 => integrate(&profile, &JacobiSeed::j2(m), 0.0, p.t_max, p.step)?,
    };
    let mut header = vec!["t".to_string()];
    for prefix in ["x", "xp"] {
        for i in 0..m {
            for j in 0..m {
                header.push(format!("{prefix}_{i}_{j}"));
            }
        }
    }
    header.push("det_x".into());
    let mut csv = Csv::new(&header);
    for s in traj.states() {
        let mut row = vec![num(s.t)];
        // row-major, unlike nalgebra's column-major storage
        for mat in [&s.x, &s.xp] {
            for i in 0..m {
                for j in 0..m {
                    row.push(num(mat[(i, j)]));
                }
            }
        }
        row.push(num(linalg::det(&s.x)));
        csv.row(&row);
    }
    ctx.write(p.out.as_deref().unwrap_or("jacobi.csv"), &csv.text(), &mut out)?;

    let (drift, scale) = wronskian_drift(&traj, &traj)?;
    out.checks.push(Check::at_most(
        "self-wronskian-drift",
        CheckKind::Accuracy,
        drift / (1.0 + scale),
        ctx.tol.wronskian,
        json!({ "drift": drift, "scale": scale }),
    ));
    if p.seed == SeedChoice::A {
        if let Some(check) = oracle_check(&traj, ctx.tol.oracle) {
            out.checks.push(check);
        }
        out.summary.insert("first_conjugate_time".into(), json!(first_conjugate_time(&traj)));
    }
    out.summary.insert("method".into(), json!(traj.method()));
    out.summary.insert("states".into(), json!(traj.states().len()));
    Ok(out)
}

/// Relative error of `X` against the profile's closed-form `A`, away from
/// the origin where both vanish.
fn oracle_check(traj: &JacobiTrajectory, tol: f64) -> Option<Check> {
    let profile = traj.profile();
    let (mut worst, mut at) = (0.0_f64, f64::NAN);
    for s in traj.states().iter().filter(|s| s.t.abs() >= 0.1) {
        let (a, _) = profile.oracle_a(s.t)?;
        let err = linalg::rel_err(&s.x, &a);
        if err > worst || at.is_nan() {
            worst = err;
            at = s.t;
        }
    }
    if at.is_nan() {
        return None;
    }
    Some(Check::at_most("oracle-agreement", CheckKind::Accuracy, worst, tol, json!({ "t": at })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BridgeParams {
    profile: String,
    s_grid: Vec<f64>,
    t_grid: Vec<f64>,
    #[serde(default = "default_step")]
    step: f64,
    #[serde(default)]
    geodesic: Option<Geodesic>,
}

fn run_bridge(scenario: &Scenario, ctx: &Context) -> Result<Output, GeoError> {
    let p: BridgeParams = params(scenario)?;
    if p.s_grid.is_empty() || p.t_grid.is_empty() {
        return Err(GeoError::InvalidInput("s_grid and t_grid must be non-empty".into()));
    }
    let mut out = Output::default();
    let profile = ctx.profile(&p.profile, p.geodesic.as_ref(), &mut out)?;
    let s_min = p.s_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let s_max = p.s_grid.iter().copied().fold(0.0, f64::max);
    let table = growth_table_covering(&profile, s_min, s_max, p.step, ctx.tol.growth)?;
    let mut csv = Csv::new(&["s", "t", "lambda_min_n", "asymmetry_n", "norm_m", "tail_increment"]);
    let (mut worst_asym, mut asym_at) = (0.0_f64, json!(null));
    let (mut worst_lambda, mut lambda_at) = (f64::INFINITY, json!(null));
    for &s in &p.s_grid {
        let m_s = table.matrix_at(s)?;
        for &t in &p.t_grid {
            let b = bridge_matrix(&profile, s, t, p.step)?;
            let (lam, asym) = (b.lambda_min(), b.asymmetry / (1.0 + b.norm()));
            if asym > worst_asym || asym_at.is_null() {
                worst_asym = asym;
                asym_at = json!({ "s": s, "t": t });
            }
            if lam < worst_lambda {
                worst_lambda = lam;
                lambda_at = json!({ "s": s, "t": t });
            }
            csv.row(&[
                num(s),
                num(t),
                num(lam),
                num(b.asymmetry),
                num(linalg::sym_norm(&m_s.value)),
                num(m_s.tail_increment),
            ]);
        }
    }
    ctx.write("bridge.csv", &csv.text(), &mut out)?;
    out.checks.push(Check::at_most(
        "bridge-symmetry",
        CheckKind::Bound,
        worst_asym,
        ctx.tol.bridge_symmetry,
        asym_at,
    ));
    out.checks.push(Check::at_least_minus(
        "bridge-positivity",
        CheckKind::Bound,
        worst_lambda,
        ctx.tol.bridge_lambda,
        lambda_at,
    ));
    out.summary.insert("growth_convergence".into(), json!(table.convergence()));
    out.summary.insert("t_used".into(), json!(table.t_used()));
    out.summary.insert("min_lambda".into(), json!(worst_lambda));
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThetaBoundParams {
    profile: String,
    s: f64,
    #[serde(default)]
    t_min: Option<f64>,
    #[serde(default = "default_t_max")]
    t_max: f64,
    #[serde(default = "default_t_count")]
    t_count: usize,
    #[serde(default = "default_step")]
    step: f64,
    #[serde(default)]
    geodesic: Option<Geodesic>,
}

fn default_t_max() -> f64 {
    10.0
}

fn default_t_count() -> usize {
    40
}

fn run_theta_bound(scenario: &Scenario, ctx: &Context) -> Result<Output, GeoError> {
    let p: ThetaBoundParams = params(scenario)?;
    if p.t_count == 0 {
        return Err(GeoError::InvalidInput("t_count must be positive".into()));
    }
    let mut out = Output::default();
    let profile = ctx.profile(&p.profile, p.geodesic.as_ref(), &mut out)?;
    let t_grid = linspace(p.t_min.unwrap_or(2.0 * p.s), p.t_max, p.t_count);
    let cert = lower_bound_certificate(&profile, p.s, &t_grid, p.step)?;
    let json = serde_json::to_string_pretty(&cert).map_err(|e| GeoError::Io(e.to_string()))?;
    ctx.write("certificate.json", &(json + "\n"), &mut out)?;
    let mut csv = Csv::new(&["t", "vartheta", "vartheta_inv", "rhs", "margin", "rhs_frobenius"]);
    for e in &cert.entries {
        csv.row(&[num(e.t), num(e.vartheta), num(e.vartheta_inv), num(e.rhs), num(e.margin), num(e.rhs_frobenius)]);
    }
    ctx.write("certificate.csv", &csv.text(), &mut out)?;

    let worst = cert.entries.iter().min_by(|a, b| a.margin.total_cmp(&b.margin)).expect("non-empty grid");
    out.checks.push(Check::at_least_minus(
        "certificate-margin",
        CheckKind::Bound,
        worst.margin,
        ctx.tol.margin,
        json!({ "t": worst.t, "vartheta_inv": worst.vartheta_inv, "rhs": worst.rhs }),
    ));
    let t_end = t_grid.iter().copied().fold(0.0, f64::max);
    let u = riccati_from(&field_a(&profile, t_end, p.step)?)?;
    let bound = riccati_bound_check(&u, cert.k, &t_grid)?;
    out.checks.push(Check::at_most(
        "riccati-comparison",
        CheckKind::Bound,
        bound.max_ratio - 1.0,
        ctx.tol.riccati_ratio,
        json!({ "t": bound.t_max_ratio, "ratio": bound.max_ratio }),
    ));
    out.summary.insert("C".into(), json!(cert.constant));
    out.summary.insert("k".into(), json!(cert.k));
    out.summary.insert("bridge_norm".into(), json!(cert.bridge_norm));
    out.summary.insert("min_margin".into(), json!(worst.margin));
    out.summary.insert("max_ratio".into(), json!(bound.max_ratio));
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParametrixParams {
    model: String,
    #[serde(default = "default_k_max")]
    k_max: usize,
    #[serde(default = "default_r_max")]
    r_max: f64,
    #[serde(default = "default_r_count")]
    r_count: usize,
    #[serde(default = "default_variant")]
    variant: Variant,
    #[serde(default = "default_rule")]
    rule: QuadratureRule,
    /// Also compare against a grid with twice the resolution.
    #[serde(default = "yes")]
    self_convergence: bool,
}

fn default_k_max() -> usize {
    3
}

fn default_r_max() -> f64 {
    8.0
}

fn default_r_count() -> usize {
    8001
}

fn default_variant() -> Variant {
    Variant::Standard
}

fn default_rule() -> QuadratureRule {
    QuadratureRule::Simpson
}

fn yes() -> bool {
    true
}

fn run_parametrix(scenario: &Scenario, ctx: &Context) -> Result<Output, GeoError> {
    let p: ParametrixParams = params(scenario)?;
    let model = RadialModel::parse(&p.model)?;
    let mut out = Output::default();
    let r_grid = uniform_grid(p.r_max, p.r_count);
    let table = coefficient_table(&model, p.variant, p.k_max, &r_grid, p.rule)?;
    let mut header = vec!["r".to_string()];
    header.extend((0..=p.k_max).map(|k| format!("u_{k}")));
    let mut csv = Csv::new(&header);
    for (i, &r) in table.r_grid.iter().enumerate() {
        let mut row = vec![num(r)];
        row.extend(table.rows.iter().map(|u| num(u[i])));
        csv.row(&row);
    }
    let variant = command_label_variant(p.variant);
    ctx.write(&format!("parametrix-{variant}.csv"), &csv.text(), &mut out)?;

    let envelopes = growth_fit(&table);
    let infinite: Vec<usize> =
        envelopes.iter().filter(|e| !(e.c_envelope.is_finite() && e.alpha.is_finite())).map(|e| e.k).collect();
    out.checks.push(Check {
        name: "growth-envelopes-finite".into(),
        kind: CheckKind::Bound,
        status: status(infinite.is_empty()),
        value: infinite.len() as f64,
        tolerance: 0.0,
        witness: json!({ "non_finite_k": infinite }),
        severity: None,
    });
    let peak = |k: usize, shift: f64| table.row(k).iter().fold(0.0_f64, |m, v| m.max((v - shift).abs()));
    match (model.constant_curvature(), p.variant) {
        (Some(c), Variant::Standard) if c == 0.0 && p.k_max >= 1 => {
            let (k, v) = (1..=p.k_max).map(|k| (k, peak(k, 0.0))).max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
            out.checks.push(Check::at_most(
                "flat-coefficients-vanish",
                CheckKind::Accuracy,
                v,
                ctx.tol.parametrix_exact,
                json!({ "k": k }),
            ));
        }
        (Some(c), Variant::Modified) if c < 0.0 => {
            out.checks.push(Check::at_most(
                "modified-u0-is-one",
                CheckKind::Accuracy,
                peak(0, 1.0),
                ctx.tol.parametrix_exact,
                json!({ "k": 0 }),
            ));
        }
        _ => {}
    }
    if p.self_convergence && p.k_max >= 1 && p.r_max > 0.5 {
        let k_top = p.k_max.min(2);
        let conv = self_convergence(&model, p.variant, k_top, p.r_max, p.r_count, (0.5, p.r_max))?;
        let (k, v) = (1..=k_top).map(|k| (k, conv[k])).max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        out.checks.push(Check::at_most(
            "self-convergence",
            CheckKind::Accuracy,
            v,
            ctx.tol.self_convergence,
            json!({ "k": k, "window": [0.5, p.r_max] }),
        ));
    }
    out.summary.insert("envelopes".into(), json!(envelopes));
    Ok(out)
}

fn command_label_variant(v: Variant) -> &'static str {
    match v {
        Variant::Standard => "standard",
        Variant::Modified => "modified",
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeylParams {
    torus: String,
    lambda_max: f64,
    lambda_count: usize,
    #[serde(default)]
    cap: Option<u64>,
}

fn run_weyl(scenario: &Scenario, ctx: &Context) -> Result<Output, GeoError> {
    let p: WeylParams = params(scenario)?;
    if !(p.lambda_max > 0.0) || p.lambda_count == 0 {
        return Err(GeoError::InvalidInput("lambda_max and lambda_count must be positive".into()));
    }
    let model = FlatTorusModel::parse(&p.torus)?;
    let grid: Vec<f64> = (1..=p.lambda_count).map(|i| p.lambda_max * i as f64 / p.lambda_count as f64).collect();
    let cap = p.cap.map_or(DEFAULT_CAP, u128::from);
    let result = remainder_diagnostic_with_cap(&model, &grid, cap)?;
    let mut out = Output::default();
    let mut csv = Csv::new(&["lambda", "count", "leading", "remainder", "ratio"]);
    for i in 0..grid.len() {
        csv.row(&[
            num(grid[i]),
            result.counts[i].to_string(),
            num(result.leading[i]),
            num(result.remainder[i]),
            result.ratio[i].map(num).unwrap_or_default(),
        ]);
    }
    ctx.write("weyl.csv", &csv.text(), &mut out)?;
    let non_finite = result.ratio.iter().flatten().filter(|r| !r.is_finite()).count();
    out.checks.push(Check {
        name: "ratio-finite".into(),
        kind: CheckKind::Accuracy,
        status: status(non_finite == 0),
        value: non_finite as f64,
        tolerance: 0.0,
        witness: json!({ "sup_ratio": result.sup_ratio() }),
        severity: None,
    });
    if model.n() == 1 {
        // N - 2λL/2π lies in [-2, 1] on the circle; the counting guard can
        // add a few ulps of λ just below a shell
        let (mut worst, mut at) = (f64::NEG_INFINITY, f64::NAN);
        for (&l, &r) in grid.iter().zip(&result.remainder) {
            let excess = (r - 1.0).max(-2.0 - r) - 2.0 * GUARD * l.max(1.0);
            if excess > worst {
                worst = excess;
                at = l;
            }
        }
        out.checks.push(Check::at_most(
            "circle-remainder-range",
            CheckKind::Bound,
            worst,
            0.0,
            json!({ "lambda": at }),
        ));
    }
    out.summary.insert("sup_ratio".into(), json!(result.sup_ratio()));
    out.summary.insert("volume".into(), json!(model.volume()));
    Ok(out)
}

/// Closed-form constant-curvature suite with bundled defaults.
fn run_selftest(scenario: &Scenario, ctx: &Context) -> Result<Output, GeoError> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct SelftestParams {}
    let _: SelftestParams = params(scenario)?;
    let mut out = Output::default();
    let step = default_step();
    let ts = linspace(0.1, 10.0, 100);
    for c in [0.0, -1.0, -4.0] {
        for n in [2, 3, 4] {
            let profile = constant_profile(Dimension::new(n)?, c);
            out.fingerprints.insert(profile.label().to_string(), profile.fingerprint());
            let tag = format!("c={c},n={n}");
            let a = field_a(&profile, 10.0, step)?;
            let samples = theta(&profile, &ts, step)?;
            let (mut err_a, mut err_theta) = (0.0_f64, 0.0_f64);
            for (&t, sample) in ts.iter().zip(&samples) {
                let (sn, _) = scalar_a(c, t);
                let (x, _) = profile.oracle_a(t).expect("constant profiles carry an oracle");
                err_a = err_a.max(linalg::rel_err(&a.x_at(t)?, &x));
                let exact = sn.powi(n as i32 - 1);
                err_theta = err_theta.max((sample.vartheta - exact).abs() / exact);
            }
            out.checks.push(Check::at_most(
                format!("closed-form-a[{tag}]"),
                CheckKind::Accuracy,
                err_a,
                ctx.tol.oracle,
                json!({ "t_range": [0.1, 10.0] }),
            ));
            out.checks.push(Check::at_most(
                format!("closed-form-vartheta[{tag}]"),
                CheckKind::Accuracy,
                err_theta,
                ctx.tol.oracle,
                json!({ "t_range": [0.1, 10.0] }),
            ));
            let cert = lower_bound_certificate(&profile, 0.5, &linspace(1.0, 10.0, 19), step)?;
            out.checks.push(Check::at_least_minus(
                format!("certificate-margin[{tag}]"),
                CheckKind::Bound,
                cert.min_margin(),
                ctx.tol.margin,
                json!({ "s": 0.5 }),
            ));
            let b = bridge_matrix(&profile, 1.0, 1.0, step)?;
            out.checks.push(Check::at_least_minus(
                format!("bridge-positivity[{tag}]"),
                CheckKind::Bound,
                b.lambda_min(),
                ctx.tol.bridge_lambda,
                json!({ "s": 1.0, "t": 1.0 }),
            ));
        }
    }
    let sphere = constant_profile(Dimension::new(2)?, 1.0);
    let t_conj = first_conjugate_time(&field_a(&sphere, 5.0, step)?);
    out.checks.push(Check::at_most(
        "sphere-conjugate-point",
        CheckKind::Accuracy,
        t_conj.map_or(f64::INFINITY, |t| (t - std::f64::consts::PI).abs()),
        1e-6,
        json!({ "t": t_conj }),
    ));
    let square = FlatTorusModel::square(2, std::f64::consts::TAU)?;
    let n81 = count_eigenvalues(&square, 5.0)?;
    out.checks.push(Check::at_most(
        "square-torus-count",
        CheckKind::Accuracy,
        (n81 as f64 - 81.0).abs(),
        0.0,
        json!({ "lambda": 5.0, "count": n81 }),
    ));
    let flat = RadialModel::flat(Dimension::new(3)?);
    let table = coefficient_table(&flat, Variant::Standard, 3, &uniform_grid(8.0, 2001), QuadratureRule::Simpson)?;
    let vanish = (1..=3).flat_map(|k| table.row(k).iter()).fold(0.0_f64, |m, v| m.max(v.abs()));
    out.checks.push(Check::at_most(
        "flat-parametrix-vanishes",
        CheckKind::Accuracy,
        vanish,
        ctx.tol.parametrix_exact,
        json!({ "n": 3 }),
    ));
    let passed = out.checks.iter().filter(|c| c.status == Status::Pass).count();
    out.summary.insert("passed".into(), json!(passed));
    out.summary.insert("total".into(), json!(out.checks.len()));
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepParams {
    template: Scenario,
    /// Parameter name to the values it takes; cells are the Cartesian
    /// product in key order, last key fastest.
    axes: BTreeMap<String, Vec<Value>>,
}

fn sweep_cells(p: &SweepParams) -> Result<Vec<Vec<(String, Value)>>, GeoError> {
    if p.template.command == CommandName::Sweep {
        return Err(GeoError::InvalidInput("sweeps cannot be nested".into()));
    }
    if p.axes.is_empty() {
        return Err(GeoError::InvalidInput("a sweep needs at least one axis".into()));
    }
    if let Some((name, _)) = p.axes.iter().find(|(_, v)| v.is_empty()) {
        return Err(GeoError::InvalidInput(format!("axis '{name}' is empty")));
    }
    let mut cells: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (name, values) in &p.axes {
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                values.iter().map(move |v| {
                    let mut next = cell.clone();
                    next.push((name.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    Ok(cells)
}

fn run_sweep(scenario: &Scenario, ctx: &Context) -> Result<Output, GeoError> {
    let p: SweepParams = params(scenario)?;
    let cells = sweep_cells(&p)?;
    let runs: Vec<(Scenario, RunOptions)> = cells
        .iter()
        .enumerate()
        .map(|(i, assignment)| {
            let mut cell = p.template.clone();
            cell.tolerances = scenario.tolerances;
            cell.outputs = Outputs::default();
            for (k, v) in assignment {
                cell.parameters.insert(k.clone(), v.clone());
            }
            let options = RunOptions { out_dir: ctx.dir.join(format!("cell-{i:04}")), ..ctx.options.clone() };
            (cell, options)
        })
        .collect();
    let execute = || runs.par_iter().map(|(s, o)| run(s, o)).collect::<Vec<_>>();
    let reports = match ctx.options.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| GeoError::Io(e.to_string()))?
            .install(execute),
        None => execute(),
    };

    let mut out = Output::default();
    let axis_names: Vec<&String> = p.axes.keys().collect();
    let mut header: Vec<String> = vec!["cell".into()];
    header.extend(axis_names.iter().map(|s| s.to_string()));
    header.extend(["exit_code", "min_margin", "C", "max_ratio", "min_lambda"].map(String::from));
    let mut csv = Csv::new(&header);
    let (mut min_margin, mut max_ratio) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut cell_summaries = Vec::new();
    for (i, (assignment, report)) in cells.iter().zip(&reports).enumerate() {
        let metric = |key: &str| report.summary.get(key).and_then(Value::as_f64);
        if let Some(m) = metric("min_margin") {
            min_margin = min_margin.min(m);
        }
        if let Some(r) = metric("max_ratio") {
            max_ratio = max_ratio.max(r);
        }
        let mut row = vec![format!("{i:04}")];
        row.extend(assignment.iter().map(|(_, v)| value_cell(v)));
        row.push(report.exit().code().to_string());
        for key in ["min_margin", "C", "max_ratio", "min_lambda"] {
            row.push(metric(key).map(num).unwrap_or_default());
        }
        csv.row(&row);
        let exit = report.exit();
        let assignment_json: Map<String, Value> = assignment.iter().cloned().collect();
        out.checks.push(Check {
            name: format!("cell-{i:04}"),
            kind: if exit == Exit::Falsified { CheckKind::Bound } else { CheckKind::Accuracy },
            status: status(exit == Exit::Pass),
            value: exit.code() as f64,
            tolerance: 0.0,
            witness: json!({
                "assignment": assignment_json,
                "error": report.error.as_ref().map(|e| &e.message),
                "failed_checks": report.checks.iter().filter(|c| c.status == Status::Fail).map(|c| &c.name).collect::<Vec<_>>(),
            }),
            severity: Some(exit),
        });
        out.fingerprints.extend(report.profile_fingerprints.clone());
        cell_summaries.push(json!({ "cell": i, "exit_code": exit.code(), "summary": report.summary }));
    }
    ctx.write("sweep.csv", &csv.text(), &mut out)?;
    if min_margin.is_finite() {
        out.summary.insert("min_margin".into(), json!(min_margin));
    }
    if max_ratio.is_finite() {
        out.summary.insert("max_ratio".into(), json!(max_ratio));
    }
    if axis_names.len() == 1 && axis_names[0] == "s" {
        let cs: Vec<Option<f64>> = reports.iter().map(|r| r.summary.get("C").and_then(Value::as_f64)).collect();
        if cs.iter().all(Option::is_some) {
            let decreasing = cs.windows(2).all(|w| w[1] <= w[0]);
            out.summary.insert("c_decreasing_in_s".into(), json!(decreasing));
        }
    }
    out.summary.insert("cells".into(), Value::Array(cell_summaries));
    Ok(out)
}

fn value_cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Runs one scenario, writes its outputs and `report.json` into
/// `options.out_dir`, and returns the report.
pub fn run(scenario: &Scenario, options: &RunOptions) -> RunReport {
    let start = Instant::now();
    let outcome = prepare(scenario, options).and_then(|tol| {
        let ctx = Context { dir: &options.out_dir, tol, options };
        match scenario.command {
            CommandName::Jacobi => run_jacobi(scenario, &ctx),
            CommandName::Bridge => run_bridge(scenario, &ctx),
            CommandName::ThetaBound => run_theta_bound(scenario, &ctx),
            CommandName::Parametrix => run_parametrix(scenario, &ctx),
            CommandName::Weyl => run_weyl(scenario, &ctx),
            CommandName::Sweep => run_sweep(scenario, &ctx),
            CommandName::Selftest => run_selftest(scenario, &ctx),
        }
    });
    let (output, error) = match outcome {
        Ok(o) => (o, None),
        Err(e) => (Output::default(), Some(ErrorReport::from_error(&e))),
    };
    let mut report = RunReport {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION,
        scenario: scenario.clone(),
        tol_scale: options.tol_scale,
        seed: options.seed,
        status: Status::Pass,
        exit_code: 0,
        checks: output.checks,
        error,
        summary: Value::Object(output.summary),
        profile_fingerprints: output.fingerprints,
        outputs: output.outputs,
        timing: Timing { seconds: start.elapsed().as_secs_f64() },
    };
    let exit = report.exit();
    report.exit_code = exit.code();
    report.status = status(exit == Exit::Pass);
    if let Err(e) = write_report(&report, &options.out_dir) {
        report.error.get_or_insert_with(|| ErrorReport::from_error(&e));
        report.exit_code = report.exit().code();
        report.status = Status::Fail;
    }
    report
}

fn prepare(scenario: &Scenario, options: &RunOptions) -> Result<Tolerances, GeoError> {
    if !(options.tol_scale > 0.0 && options.tol_scale.is_finite()) {
        return Err(GeoError::InvalidInput(format!("tol-scale must be positive, got {}", options.tol_scale)));
    }
    scenario.tolerances.validate()?;
    std::fs::create_dir_all(&options.out_dir)?;
    Ok(scenario.tolerances.scaled(options.tol_scale))
}

fn write_report(report: &RunReport, dir: &Path) -> Result<(), GeoError> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(report).map_err(|e| GeoError::Io(e.to_string()))?;
    std::fs::write(dir.join(REPORT_FILE), text + "\n")?;
    Ok(())
}

/// One line per check for the terminal.
pub fn render_summary(report: &RunReport) -> String {
    let mut text = String::new();
    for c in &report.checks {
        let mark = if c.status == Status::Pass { "PASS" } else { "FAIL" };
        let _ = writeln!(text, "{mark} {} value={:.6e} tol={:.3e}", c.name, c.value, c.tolerance);
    }
    if let Some(e) = &report.error {
        let _ = writeln!(text, "ERROR {}: {}", command_label(report.scenario.command), e.message);
    }
    let _ = writeln!(text, "exit {}", report.exit_code);
    text
}
