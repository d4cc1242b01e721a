//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::Instant;

use geolab::boundary::{bridge_matrix, slope_bvp};
use geolab::curvature::{constant_profile, estimate_bounds, random_seeded_profile, CurvatureProfile, Dimension};
use geolab::error::GeoError;
use geolab::jacobi::{field_a, first_conjugate_time, integrate, wronskian_drift, JacobiSeed};
use geolab::linalg::{self, Mat};
use geolab::parametrix::{
    coefficient_table, growth_fit, self_convergence, uniform_grid, QuadratureRule, RadialModel, Variant,
};
use geolab::riccati::{inverse_norm_bound_check, lower_bound_certificate, riccati_bound_check, riccati_from, theta};
use geolab::weyl::{count_eigenvalues, remainder_diagnostic, FlatTorusModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;
const SEED: u64 = 20_240_601;
const SEEDED_COUNT: usize = 50;
const CURVATURES: [f64; 3] = [0.0, -1.0, -4.0];
const DIMS: [usize; 3] = [2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Outcome { pass: false, detail: format!("error: {e}") }
    }
}

fn grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

fn constants() -> Vec<(f64, CurvatureProfile)> {
    let mut out = Vec::new();
    for &c in &CURVATURES {
        for &n in &DIMS {
            out.push((c, constant_profile(Dimension::new(n).unwrap(), c)));
        }
    }
    out
}

fn seeded() -> Vec<CurvatureProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    (0..SEEDED_COUNT)
        .map(|_| {
            let n = DIMS[rng.random_range(0..DIMS.len())];
            random_seeded_profile(&mut rng, Dimension::new(n).unwrap(), 64.0).unwrap()
        })
        .collect()
}

/// Closed forms for constant curvature `c`: `sn_c(t)` and `sn_c'(t)`.
fn sn(c: f64, t: f64) -> (f64, f64) {
    if c == 0.0 {
        (t, 1.0)
    } else if c < 0.0 {
        let k = (-c).sqrt();
        ((k * t).sinh() / k, (k * t).cosh())
    } else {
        let k = c.sqrt();
        ((k * t).sin() / k, (k * t).cos())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_1(constants: &[(f64, CurvatureProfile)]) -> Outcome {
    let start = Instant::now();
    let ts = grid(0.1, 10.0, 100);
    let mut worst = 0.0_f64;
    for (c, p) in constants {
        let m = p.dim().transverse();
        let a = match field_a(p, 10.0, STEP) {
            Ok(a) => a,
            Err(e) => return Outcome::error(e),
        };
        let u = match riccati_from(&a) {
            Ok(u) => u,
            Err(e) => return Outcome::error(e),
        };
        let samples = match theta(p, &ts, STEP) {
            Ok(s) => s,
            Err(e) => return Outcome::error(e),
        };
        for (&t, sample) in ts.iter().zip(&samples) {
            let (s, sp) = sn(*c, t);
            let a_ref = Mat::identity(m, m) * s;
            let u_ref = Mat::identity(m, m) * (sp / s);
            worst = worst.max(linalg::rel_err(&a.x_at(t).unwrap(), &a_ref));
            worst = worst.max(linalg::rel_err(&u.at(t).unwrap(), &u_ref));
            worst = worst.max(rel(sample.theta, (s / t).powi(m as i32)));
            worst = worst.max(rel(sample.vartheta, s.powi(m as i32)));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Outcome::new(
        worst <= 1e-6 && elapsed < 5.0,
        format!("max relative error {worst:.3e} (tol 1e-6), runtime {elapsed:.2} s (limit 5 s)"),
    )
}

fn criterion_2(seeded: &[CurvatureProfile]) -> Outcome {
    let mut worst = 0.0_f64;
    let mut worst_scaled = 0.0_f64;
    for p in seeded {
        let m = p.dim().transverse();
        let run = || -> Result<(f64, f64), GeoError> {
            let j1 = integrate(p, &JacobiSeed::j1(m), 0.0, 10.0, STEP)?;
            let j2 = integrate(p, &JacobiSeed::j2(m), 0.0, 10.0, STEP)?;
            let a = field_a(p, 10.0, STEP)?;
            let mut drift = 0.0_f64;
            let mut scaled = 0.0_f64;
            for (b, c) in [(&j1, &j2), (&a, &a), (&j1, &j1)] {
                let (d, scale) = wronskian_drift(b, c)?;
                drift = drift.max(d);
                scaled = scaled.max(d / (1.0 + scale));
            }
            Ok((drift, scaled))
        };
        match run() {
            Ok((d, s)) => {
                worst = worst.max(d);
                worst_scaled = worst_scaled.max(s);
            }
            Err(e) => return Outcome::error(e),
        }
    }
    // The Wronskian is a difference of products of size sup|X|·sup|X'|
    // (up to ~1e9 here), so its drift is measured relative to that size.
    Outcome::new(
        worst_scaled <= 1e-8,
        format!("sup drift / (1 + sup|X| sup|X'|) {worst_scaled:.3e} (tol 1e-8); absolute sup drift {worst:.3e}"),
    )
}

fn criterion_3(constants: &[(f64, CurvatureProfile)], seeded: &[CurvatureProfile]) -> Outcome {
    let ts = grid(0.1, 10.0, 100);
    let mut worst = 0.0_f64;
    for p in seeded {
        let k = match estimate_bounds(p, STEP) {
            Ok(b) => b.k_lower,
            Err(e) => return Outcome::error(e),
        };
        match field_a(p, 10.0, STEP).and_then(|a| riccati_from(&a)).and_then(|u| riccati_bound_check(&u, k, &ts)) {
            Ok(check) => worst = worst.max(check.max_ratio),
            Err(e) => return Outcome::error(format!("{}: {e}", p.label())),
        }
    }
    let mut equality = 0.0_f64;
    for (c, p) in constants {
        let k = (-c).sqrt();
        match field_a(p, 10.0, STEP).and_then(|a| riccati_from(&a)).and_then(|u| riccati_bound_check(&u, k, &ts)) {
            Ok(check) => equality = equality.max((check.max_ratio - 1.0).abs()),
            Err(e) => return Outcome::error(e),
        }
    }
    Outcome::new(
        worst <= 1.0 + 1e-6 && equality <= 1e-6,
        format!("seeded max ratio {worst:.9} (limit 1 + 1e-6), constant-model |ratio - 1| {equality:.3e} (tol 1e-6)"),
    )
}

fn criterion_4(profiles: &[&CurvatureProfile]) -> Outcome {
    let points = [0.1, 0.5, 1.0, 2.0, 5.0];
    let (mut asym, mut lam) = (0.0_f64, f64::INFINITY);
    for p in profiles {
        for &s in &points {
            for &t in &points {
                match bridge_matrix(p, s, t, STEP) {
                    Ok(b) => {
                        asym = asym.max(b.asymmetry / (1.0 + b.norm()));
                        lam = lam.min(b.lambda_min());
                    }
                    Err(e) => return Outcome::error(format!("{} s={s} t={t}: {e}", p.label())),
                }
            }
        }
    }
    Outcome::new(
        asym <= 1e-9 && lam > -1e-9,
        format!("max asymmetry / (1 + |N|) {asym:.3e} (tol 1e-9), min eigenvalue {lam:.4e} (limit > -1e-9)"),
    )
}

fn criterion_5(profiles: &[&CurvatureProfile]) -> Outcome {
    let mut min_margin = f64::INFINITY;
    for p in profiles {
        for &s in &[0.1, 0.5, 1.0] {
            let ts = grid(2.0 * s, 10.0, 40);
            match lower_bound_certificate(p, s, &ts, STEP) {
                Ok(cert) => min_margin = min_margin.min(cert.min_margin()),
                Err(e) => return Outcome::error(format!("{} s={s}: {e}", p.label())),
            }
        }
    }
    // closed forms for c = -1, n = 2, s = 0.5, t = 2
    let (s, t) = (0.5_f64, 2.0_f64);
    let norm_ref = 2.0 / s.tanh();
    let rhs_ref = (2.0 / t.tanh() * norm_ref).sqrt();
    let inv_ref = 1.0 / t.sinh();
    let cell = match lower_bound_certificate(&constant_profile(Dimension::new(2).unwrap(), -1.0), s, &[t], STEP) {
        Ok(c) => c,
        Err(e) => return Outcome::error(e),
    };
    let e = cell.entries[0];
    let cell_err = (cell.bridge_norm - norm_ref).abs().max((e.rhs - rhs_ref).abs()).max((e.vartheta_inv - inv_ref).abs());
    Outcome::new(
        min_margin >= -1e-8 && cell_err <= 1e-4,
        format!(
            "min margin {min_margin:.4e} (limit -1e-8); reference cell |N| {:.4} rhs {:.4} inverse {:.4}, max error {cell_err:.2e} (tol 1e-4)",
            cell.bridge_norm, e.rhs, e.vartheta_inv
        ),
    )
}

fn criterion_6(constants: &[(f64, CurvatureProfile)], seeded: &[CurvatureProfile]) -> Outcome {
    const FLOOR: f64 = 1e-9;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_ratio = 0.0_f64;
    let profiles = constants.iter().map(|(_, p)| p).chain(seeded);
    for p in profiles {
        let k_max = p.k_max();
        let hi = 0.1 * if k_max > 1.0 { k_max.powf(-0.5) } else { 1.0 };
        let m = p.dim().transverse();
        for s in grid(0.01, hi, 8) {
            match slope_bvp(p, s, STEP) {
                Ok(b) => {
                    let defect = linalg::op_norm(&(b.slope + Mat::identity(m, m) / s)) / s;
                    worst = worst.max(defect - 5.0 * k_max - FLOOR);
                    worst_ratio = worst_ratio.max(defect / (5.0 * k_max + FLOOR));
                }
                Err(e) => return Outcome::error(format!("{} s={s}: {e}", p.label())),
            }
        }
    }
    // hyperbolic small-s value k²/3 from coth(ks) = 1/(ks) + ks/3 + ...
    let mut hyper = 0.0_f64;
    for (c, p) in constants.iter().filter(|(c, _)| *c < 0.0) {
        let m = p.dim().transverse();
        let s = 0.01;
        match slope_bvp(p, s, STEP) {
            Ok(b) => {
                let value = linalg::op_norm(&(b.slope + Mat::identity(m, m) / s)) / s;
                hyper = hyper.max(rel(value, -c / 3.0));
            }
            Err(e) => return Outcome::error(e),
        }
    }
    Outcome::new(
        worst <= 0.0 && hyper <= 0.05,
        format!(
            "max defect / (5 k_max + 1e-9) {worst_ratio:.4} (limit 1); hyperbolic k^2/3 relative error {hyper:.3e} (tol 5%)"
        ),
    )
}

fn criterion_7(constants: &[(f64, CurvatureProfile)], seeded: &[CurvatureProfile]) -> Outcome {
    let ts = grid(0.5, 8.0, 16);
    let mut worst_constant = 0.0_f64;
    for (c, p) in constants {
        match inverse_norm_bound_check(p, &ts, (-c).sqrt(), STEP, 1e-10) {
            Ok(check) => worst_constant = worst_constant.max(check.identity_residual),
            Err(e) => return Outcome::error(e),
        }
    }
    let mut worst_seeded = 0.0_f64;
    for p in seeded {
        let k = p.k_lower();
        match inverse_norm_bound_check(p, &ts, k, STEP, 1e-10) {
            Ok(check) => worst_seeded = worst_seeded.max(check.identity_residual),
            Err(e) => return Outcome::error(format!("{}: {e}", p.label())),
        }
    }
    Outcome::new(
        worst_constant <= 1e-6 && worst_seeded <= 1e-5,
        format!("constant models {worst_constant:.3e} (tol 1e-6), seeded {worst_seeded:.3e} (tol 1e-5)"),
    )
}

fn criterion_8() -> Outcome {
    let run = || -> Result<Outcome, GeoError> {
        let r_grid = uniform_grid(8.0, 8001);
        let mut flat = 0.0_f64;
        let mut hyper_u0 = 0.0_f64;
        let mut self_conv = 0.0_f64;
        let mut envelopes_finite = true;
        for &n in &DIMS {
            let dim = Dimension::new(n)?;
            let models = [RadialModel::flat(dim), RadialModel::hyperbolic(dim, 1.0)?];
            let table = coefficient_table(&models[0], Variant::Standard, 3, &r_grid, QuadratureRule::Simpson)?;
            for k in 1..=3 {
                flat = flat.max(table.row(k).iter().fold(0.0, |m, v| m.max(v.abs())));
            }
            for variant in [Variant::Standard, Variant::Modified] {
                for model in &models {
                    let conv = self_convergence(model, variant, 2, 8.0, 8001, (0.5, 8.0))?;
                    self_conv = self_conv.max(conv[1]).max(conv[2]);
                    let table = coefficient_table(model, variant, 3, &r_grid, QuadratureRule::Simpson)?;
                    envelopes_finite &= growth_fit(&table)
                        .iter()
                        .all(|e| e.c_envelope.is_finite() && e.alpha.is_finite() && e.max_violation.is_finite());
                }
            }
            let table = coefficient_table(&models[1], Variant::Modified, 0, &r_grid, QuadratureRule::Simpson)?;
            hyper_u0 = hyper_u0.max(table.row(0).iter().fold(0.0, |m, v| m.max((v - 1.0).abs())));
        }
        Ok(Outcome::new(
            flat <= 1e-10 && hyper_u0 <= 1e-10 && self_conv <= 1e-6 && envelopes_finite,
            format!(
                "flat |u_k| {flat:.2e}, hyperbolic |u_0 - 1| {hyper_u0:.2e} (tol 1e-10); \
                 self-convergence {self_conv:.2e} (tol 1e-6); envelopes finite: {envelopes_finite}"
            ),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

fn criterion_9() -> Outcome {
    let run = || -> Result<Outcome, GeoError> {
        let square = FlatTorusModel::square(2, 2.0 * PI)?;
        let n81 = count_eigenvalues(&square, 5.0)?;
        // dyadic grid: exact in floating point, so no guard-band effects
        let circle = FlatTorusModel::square(1, 2.0 * PI)?;
        let lambdas: Vec<f64> = (1..=4000).map(|i| i as f64 * 0.25).collect();
        let diag = remainder_diagnostic(&circle, &lambdas)?;
        let (lo, hi) = diag.remainder.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
        let start = Instant::now();
        let grid: Vec<f64> = (1..=400).map(|i| i as f64 * 0.5).collect();
        let table = remainder_diagnostic(&square, &grid)?;
        let elapsed = start.elapsed().as_secs_f64();
        let ratios_finite = table.ratio.iter().flatten().all(|r| r.is_finite())
            && table.ratio.iter().zip(&grid).filter(|(_, &l)| l > std::f64::consts::E).all(|(r, _)| r.is_some());
        Ok(Outcome::new(
            n81 == 81 && lo >= -2.0 && hi <= 1.0 && ratios_finite && elapsed < 10.0,
            format!(
                "N(5) = {n81} (expected 81); circle remainder in [{lo}, {hi}] (limit [-2, 1]); \
                 ratio column finite: {ratios_finite}, sup {:.4}, runtime {elapsed:.2} s (limit 10 s)",
                table.sup_ratio().unwrap_or(f64::NAN)
            ),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

fn criterion_10() -> Outcome {
    let sphere = constant_profile(Dimension::new(2).unwrap(), 1.0);
    let t_conj = match field_a(&sphere, 5.0, STEP) {
        Ok(a) => first_conjugate_time(&a),
        Err(e) => return Outcome::error(e),
    };
    let conj_ok = t_conj.is_some_and(|t| (t - PI).abs() <= 1e-6);
    let library_refuses = matches!(
        lower_bound_certificate(&sphere, 0.5, &grid(1.0, 4.0, 10), STEP),
        Err(GeoError::ConjugatePoint { .. })
    );
    let out_dir = tempfile::tempdir().expect("temporary directory");
    let status = Command::new(env!("CARGO_BIN_EXE_geolab"))
        .args(["--out-dir", out_dir.path().to_str().unwrap(), "theta-bound", "--profile", "constant:n=2,c=1"])
        .args(["--s", "0.5", "--t-max", "4"])
        .output();
    let exit = match status {
        Ok(out) => out.status.code(),
        Err(e) => return Outcome::error(e),
    };
    Outcome::new(
        conj_ok && library_refuses && exit == Some(3),
        format!(
            "first conjugate time {} (expected pi within 1e-6); certificate refused: {library_refuses}; CLI exit {:?} (expected 3)",
            t_conj.map_or("none".to_string(), |t| format!("{t:.9}")),
            exit
        ),
    )
}

fn main() -> ExitCode {
    let constants = constants();
    let seeded = seeded();
    let all: Vec<&CurvatureProfile> = constants.iter().map(|(_, p)| p).chain(&seeded).collect();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("closed-form Jacobi accuracy", Box::new(|| criterion_1(&constants))),
        ("Wronskian conservation", Box::new(|| criterion_2(&seeded))),
        ("Riccati comparison bound", Box::new(|| criterion_3(&constants, &seeded))),
        ("bridge matrix symmetry and positivity", Box::new(|| criterion_4(&all))),
        ("lower-bound certificate", Box::new(|| criterion_5(&all))),
        ("small-s slope asymptotic", Box::new(|| criterion_6(&constants, &seeded))),
        ("growth-matrix identity", Box::new(|| criterion_7(&constants, &seeded))),
        ("parametrix coefficients", Box::new(criterion_8)),
        ("Weyl counting", Box::new(criterion_9)),
        ("conjugate-point negative control", Box::new(criterion_10)),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        failures += usize::from(!outcome.pass);
        println!(
            "criterion {:>2} {verdict} {name}: {} [{:.2} s]",
            i + 1,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
