//! Hadamard coefficients on radially symmetric models.
//!
//! On a rotationally symmetric model the coefficients depend on the radius
//! alone and `Δ` acts as `f'' + (ϑ'/ϑ) f'`. Both recursions share the shape
//!
//! ```text
//! u_{k+1}(r) = D_k(r)⁻¹ ∫₀ʳ W_k(s) (L_k u_k)(s) ds
//! ```
//!
//! * standard: `W_k = s^k √Θ(s)`, `D_k = r^{k+1} √Θ(r)`, `L_k = -Δ`, `u_0 = Θ^{-1/2}`;
//! * modified: with `a = k - (n-1)/2`, `W_k = sinh(s)^a √ϑ(s)`,
//!   `D_k = sinh(r)^{a+1} √ϑ(r)`, `L_k = -Δ + k² - n + 1`,
//!   `ũ_0 = (sinh(r)^{n-1}/ϑ(r))^{1/2}`.
//!
//! Weights are evaluated as `s^k · sinhc(s)^a · √Θ(s)` with
//! `sinhc(s) = sinh(s)/s`, so every factor stays finite at `s = 0` and
//! `u_{k+1}(0) = (L_k u_k)(0)/(k+1)` in both variants.

use serde::{Deserialize, Serialize};

use crate::curvature::{CurvatureProfile, Dimension};
use crate::error::{GeoError, Result};
use crate::jacobi::{field_a, first_conjugate_time, JacobiTrajectory};
use crate::linalg;
use crate::quadrature::cumulative_simpson;

fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 + x * x / 6.0
    } else {
        x.sinh() / x
    }
}

/// `k r coth(k r)`, continued by 1 at `r = 0`.
fn kr_coth(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 + x * x / 3.0
    } else {
        x / x.tanh()
    }
}

#[derive(Debug, Clone)]
enum Density {
    Flat,
    /// `ϑ = (sinh(kr)/k)^{n-1}`.
    Hyperbolic(f64),
    /// `ϑ = det A(r)` along a curvature profile.
    Profile(JacobiTrajectory),
}

/// Radial density `ϑ(r)` of a rotationally symmetric model.
#[derive(Debug, Clone)]
pub struct RadialModel {
    n: Dimension,
    density: Density,
}

impl RadialModel {
    pub fn flat(n: Dimension) -> Self {
        RadialModel { n, density: Density::Flat }
    }

    /// Constant curvature `-k²`.
    pub fn hyperbolic(n: Dimension, k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(GeoError::InvalidInput(format!("hyperbolic model needs k > 0, got {k}")));
        }
        Ok(RadialModel { n, density: Density::Hyperbolic(k) })
    }

    /// `ϑ = det A` computed along `profile` up to `r_max`.
    pub fn from_profile(profile: &CurvatureProfile, r_max: f64, step: f64) -> Result<Self> {
        let a = field_a(profile, r_max, step)?;
        if let Some(t) = first_conjugate_time(&a) {
            return Err(GeoError::ConjugatePoint { t });
        }
        Ok(RadialModel { n: profile.dim(), density: Density::Profile(a) })
    }

    /// `flat:n=<int>` or `hyperbolic:n=<int>[,k=<f>]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let mut n = None;
        let mut k = 1.0;
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| GeoError::InvalidInput(format!("expected key=value in model, got '{part}'")))?;
            let number = |v: &str| {
                v.trim().parse::<f64>().map_err(|_| GeoError::InvalidInput(format!("bad number '{v}' in model")))
            };
            match key.trim() {
                "n" => {
                    let v = value
                        .trim()
                        .parse::<usize>()
                        .map_err(|_| GeoError::InvalidInput(format!("bad dimension '{value}'")))?;
                    n = Some(Dimension::new(v)?);
                }
                "k" => k = number(value)?,
                other => return Err(GeoError::InvalidInput(format!("unknown model key '{other}'"))),
            }
        }
        let n = n.ok_or_else(|| GeoError::InvalidInput("model needs n=<int>".into()))?;
        match kind.trim() {
            "flat" => Ok(Self::flat(n)),
            "hyperbolic" => Self::hyperbolic(n, k),
            other => Err(GeoError::InvalidInput(format!("unknown model '{other}'"))),
        }
    }

    pub fn dim(&self) -> Dimension {
        self.n
    }

    /// The constant curvature of the closed-form models.
    pub fn constant_curvature(&self) -> Option<f64> {
        match self.density {
            Density::Flat => Some(0.0),
            Density::Hyperbolic(k) => Some(-k * k),
            Density::Profile(_) => None,
        }
    }

    /// `Θ(r) = ϑ(r)/r^{n-1}`, equal to 1 at `r = 0`.
    pub fn theta(&self, r: f64) -> Result<f64> {
        let m = self.n.transverse() as i32;
        let value = match &self.density {
            Density::Flat => 1.0,
            Density::Hyperbolic(k) => sinhc(k * r).powi(m),
            Density::Profile(a) => {
                if r == 0.0 {
                    1.0
                } else {
                    linalg::det(&(a.x_at(r)? / r))
                }
            }
        };
        if !(value > 0.0) {
            return Err(GeoError::InvalidInput(format!("density is not positive at r = {r} (Θ = {value})")));
        }
        Ok(value)
    }

    pub fn vartheta(&self, r: f64) -> Result<f64> {
        Ok(self.theta(r)? * r.powi(self.n.transverse() as i32))
    }

    /// `r ϑ'(r)/ϑ(r)`, equal to `n - 1` at `r = 0`.
    fn r_log_derivative(&self, r: f64) -> Result<f64> {
        let m = self.n.transverse() as f64;
        Ok(match &self.density {
            Density::Flat => m,
            Density::Hyperbolic(k) => m * kr_coth(k * r),
            Density::Profile(a) => {
                if r == 0.0 {
                    m
                } else {
                    let (x, xp) = a.at(r)?;
                    let inv = linalg::inverse(&x).ok_or(GeoError::ConjugatePoint { t: r })?;
                    r * (xp * inv).trace()
                }
            }
        })
    }
}

fn check_grid(r_grid: &[f64], from_zero: bool) -> Result<f64> {
    if r_grid.len() < 5 {
        return Err(GeoError::InvalidInput(format!("radial grid needs at least 5 points, got {}", r_grid.len())));
    }
    let h = r_grid[1] - r_grid[0];
    if !(h > 0.0) {
        return Err(GeoError::InvalidInput("radial grid must be increasing".into()));
    }
    if r_grid.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(w[1].abs())) {
        return Err(GeoError::InvalidInput("radial grid must be uniform".into()));
    }
    if r_grid[0] < 0.0 || (from_zero && r_grid[0] != 0.0) {
        let want = if from_zero { "start at 0" } else { "be nonnegative" };
        return Err(GeoError::InvalidInput(format!("radial grid must {want}")));
    }
    Ok(h)
}

/// `f'' + (ϑ'/ϑ) f'` by second-order differences: centered inside,
/// one-sided at the right end and at a left end `r > 0`. A node at `r = 0`
/// uses the even extension, where the operator reduces to `n f''(0)`.
pub fn radial_laplacian(f: &[f64], r_grid: &[f64], model: &RadialModel) -> Result<Vec<f64>> {
    if f.len() != r_grid.len() {
        return Err(GeoError::InvalidInput("samples and grid differ in length".into()));
    }
    let h = check_grid(r_grid, false)?;
    let n = f.len();
    let h2 = h * h;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let r = r_grid[i];
        if i == 0 && r == 0.0 {
            out.push(model.n.n() as f64 * 2.0 * (f[1] - f[0]) / h2);
            continue;
        }
        let (d2, d1) = if i == 0 {
            (
                (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2,
                (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h),
            )
        } else if i == n - 1 {
            (
                (2.0 * f[i] - 5.0 * f[i - 1] + 4.0 * f[i - 2] - f[i - 3]) / h2,
                (3.0 * f[i] - 4.0 * f[i - 1] + f[i - 2]) / (2.0 * h),
            )
        } else {
            ((f[i + 1] - 2.0 * f[i] + f[i - 1]) / h2, (f[i + 1] - f[i - 1]) / (2.0 * h))
        };
        out.push(d2 + model.r_log_derivative(r)? / r * d1);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Standard,
    Modified,
}

/// Rule for the running integrals `∫₀ʳ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    Trapezoid,
    Simpson,
}

fn cumulative(rule: QuadratureRule, r: &[f64], f: &[f64]) -> Vec<f64> {
    match rule {
        QuadratureRule::Simpson => cumulative_simpson(r, f),
        QuadratureRule::Trapezoid => {
            let mut out = vec![0.0; r.len()];
            for i in 1..r.len() {
                out[i] = out[i - 1] + 0.5 * (r[i] - r[i - 1]) * (f[i] + f[i - 1]);
            }
            out
        }
    }
}

/// `u_0 ..= u_{k_max}` sampled on a uniform grid starting at `r = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientTable {
    pub variant: Variant,
    pub rule: QuadratureRule,
    pub n: usize,
    pub r_grid: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl CoefficientTable {
    pub fn k_max(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }
}

fn coefficients(
    model: &RadialModel,
    k_max: usize,
    r_grid: &[f64],
    rule: QuadratureRule,
    variant: Variant,
) -> Result<CoefficientTable> {
    check_grid(r_grid, true)?;
    let n = model.n.n();
    let half = (n - 1) as f64 / 2.0;
    let sqrt_theta = r_grid.iter().map(|&r| Ok(model.theta(r)?.sqrt())).collect::<Result<Vec<_>>>()?;
    let u0: Vec<f64> = match variant {
        Variant::Standard => sqrt_theta.iter().map(|s| 1.0 / s).collect(),
        Variant::Modified => r_grid.iter().zip(&sqrt_theta).map(|(&r, s)| sinhc(r).powf(half) / s).collect(),
    };
    let mut rows = vec![u0];
    for k in 0..k_max {
        let kf = k as f64;
        // sinhc exponent of the weight
        let a = match variant {
            Variant::Standard => 0.0,
            Variant::Modified => kf - half,
        };
        let shift = match variant {
            Variant::Standard => 0.0,
            Variant::Modified => kf * kf - n as f64 + 1.0,
        };
        let u = &rows[k];
        let lap = radial_laplacian(u, r_grid, model)?;
        let g: Vec<f64> = lap.iter().zip(u).map(|(l, v)| -l + shift * v).collect();
        let integrand: Vec<f64> = r_grid
            .iter()
            .zip(&sqrt_theta)
            .zip(&g)
            .map(|((&s, st), gi)| s.powi(k as i32) * sinhc(s).powf(a) * st * gi)
            .collect();
        let running = cumulative(rule, r_grid, &integrand);
        let next: Vec<f64> = r_grid
            .iter()
            .zip(&sqrt_theta)
            .zip(&running)
            .enumerate()
            .map(|(i, ((&r, st), f))| {
                if i == 0 {
                    g[0] / (kf + 1.0)
                } else {
                    f / (r.powi(k as i32 + 1) * sinhc(r).powf(a + 1.0) * st)
                }
            })
            .collect();
        rows.push(next);
    }
    Ok(CoefficientTable { variant, rule, n, r_grid: r_grid.to_vec(), rows })
}

pub fn hadamard_coefficients(
    model: &RadialModel,
    k_max: usize,
    r_grid: &[f64],
    rule: QuadratureRule,
) -> Result<CoefficientTable> {
    coefficients(model, k_max, r_grid, rule, Variant::Standard)
}

pub fn modified_coefficients(
    model: &RadialModel,
    k_max: usize,
    r_grid: &[f64],
    rule: QuadratureRule,
) -> Result<CoefficientTable> {
    coefficients(model, k_max, r_grid, rule, Variant::Modified)
}

pub fn coefficient_table(
    model: &RadialModel,
    variant: Variant,
    k_max: usize,
    r_grid: &[f64],
    rule: QuadratureRule,
) -> Result<CoefficientTable> {
    coefficients(model, k_max, r_grid, rule, variant)
}

/// `count` equally spaced radii on `[0, r_max]`.
pub fn uniform_grid(r_max: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| r_max * i as f64 / (count - 1) as f64).collect()
}

/// Per `k`, `max |u_k^{(h)} - u_k^{(h/2)}| / max(1, max |u_k^{(h/2)}|)` over
/// grid nodes in `[lo, hi]`, comparing `count` nodes with `2·count - 1`.
///
/// The unit floor is the scale of `u_0(0) = 1`; without it, rows that vanish
/// identically (like `ũ_2` on hyperbolic 3-space) would compare noise with
/// noise.
pub fn self_convergence(
    model: &RadialModel,
    variant: Variant,
    k_max: usize,
    r_max: f64,
    count: usize,
    window: (f64, f64),
) -> Result<Vec<f64>> {
    let coarse = coefficient_table(model, variant, k_max, &uniform_grid(r_max, count), QuadratureRule::Simpson)?;
    let fine =
        coefficient_table(model, variant, k_max, &uniform_grid(r_max, 2 * count - 1), QuadratureRule::Simpson)?;
    Ok((0..=k_max)
        .map(|k| {
            let (mut diff, mut scale) = (0.0_f64, 0.0_f64);
            for (i, &r) in coarse.r_grid.iter().enumerate() {
                if r < window.0 || r > window.1 {
                    continue;
                }
                let (c, f) = (coarse.rows[k][i], fine.rows[k][2 * i]);
                diff = diff.max((c - f).abs());
                scale = scale.max(f.abs());
            }
            diff / scale.max(1.0)
        })
        .collect())
}

/// Exponential envelope `|u_k(r)| ≤ C e^{α r}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthEnvelope {
    pub k: usize,
    /// Least-squares fit of `log |u_k|` against `r` on the tail half.
    pub c: f64,
    pub alpha: f64,
    /// Largest `|u_k| / (C e^{α r}) - 1` over the grid (`r > 0`).
    pub max_violation: f64,
    /// `C` raised so that the envelope holds at every grid node.
    pub c_envelope: f64,
}

/// Rows whose largest entry is below this are reported as identically zero.
const ZERO_ROW: f64 = 1e-12;

pub fn growth_fit(table: &CoefficientTable) -> Vec<GrowthEnvelope> {
    let r = &table.r_grid;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let peak = row.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if peak < ZERO_ROW {
                return GrowthEnvelope { k, c: 0.0, alpha: 0.0, max_violation: 0.0, c_envelope: 0.0 };
            }
            let tail: Vec<(f64, f64)> = (r.len() / 2..r.len())
                .filter(|&i| row[i].abs() > 0.0)
                .map(|i| (r[i], row[i].abs().ln()))
                .collect();
            let (alpha, log_c) = least_squares(&tail);
            let (c, alpha) = (log_c.exp(), alpha);
            let worst = r
                .iter()
                .zip(row)
                .filter(|(ri, _)| **ri > 0.0)
                .map(|(ri, v)| v.abs() / (c * (alpha * ri).exp()))
                .fold(0.0_f64, f64::max);
            GrowthEnvelope { k, c, alpha, max_violation: worst - 1.0, c_envelope: c * worst.max(1.0) }
        })
        .collect()
}

/// Slope and intercept of the least-squares line; a single point gives a
/// flat line through it.
fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let m = points.len() as f64;
    if points.is_empty() {
        return (0.0, 0.0);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::constant_profile;

    fn dim(n: usize) -> Dimension {
        Dimension::new(n).unwrap()
    }

    #[test]
    fn laplacian_examples() {
        let grid: Vec<f64> = (1..=200).map(|i| i as f64 * 0.01).collect();
        let flat3 = RadialModel::flat(dim(3));
        let f: Vec<f64> = grid.iter().map(|r| r * r).collect();
        for v in radial_laplacian(&f, &grid, &flat3).unwrap() {
            assert!((v - 6.0).abs() < 1e-9);
        }
        let hyp2 = RadialModel::hyperbolic(dim(2), 1.0).unwrap();
        let f: Vec<f64> = grid.iter().map(|r| r.cosh()).collect();
        let lap = radial_laplacian(&f, &grid, &hyp2).unwrap();
        for (r, v) in grid.iter().zip(&lap).skip(1).take(198) {
            assert!((v - 2.0 * r.cosh()).abs() < 1e-4, "r = {r}");
        }
        let flat2 = RadialModel::flat(dim(2));
        let f: Vec<f64> = grid.iter().map(|r| r.ln()).collect();
        let lap = radial_laplacian(&f, &grid, &flat2).unwrap();
        for v in &lap[50..190] {
            assert!(v.abs() < 1e-3);
        }
        assert!(radial_laplacian(&f[..4], &grid[..4], &flat2).is_err());
    }

    #[test]
    fn laplacian_is_second_order() {
        let flat3 = RadialModel::flat(dim(3));
        let defect = |h: f64| {
            let grid: Vec<f64> = (0..=40).map(|i| 1.0 + i as f64 * h).collect();
            let f: Vec<f64> = grid.iter().map(|r| r.powi(3)).collect();
            let lap = radial_laplacian(&f, &grid, &flat3).unwrap();
            grid.iter().zip(&lap).map(|(r, v)| (v - 12.0 * r).abs()).fold(0.0, f64::max)
        };
        let ratio = defect(0.02) / defect(0.01);
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn flat_coefficients_vanish() {
        let grid = uniform_grid(8.0, 801);
        for n in 2..=4 {
            let t = hadamard_coefficients(&RadialModel::flat(dim(n)), 3, &grid, QuadratureRule::Simpson).unwrap();
            assert!(t.row(0).iter().all(|v| (v - 1.0).abs() < 1e-14));
            for k in 1..=3 {
                assert!(t.row(k).iter().all(|v| v.abs() < 1e-10));
            }
        }
    }

    #[test]
    fn hyperbolic_u0() {
        let grid = uniform_grid(8.0, 801);
        let model = RadialModel::hyperbolic(dim(3), 1.0).unwrap();
        let t = hadamard_coefficients(&model, 1, &grid, QuadratureRule::Simpson).unwrap();
        for (r, u) in grid.iter().zip(t.row(0)).skip(1) {
            assert!((u - r / r.sinh()).abs() < 1e-12);
        }
        let m = modified_coefficients(&model, 0, &grid, QuadratureRule::Simpson).unwrap();
        assert!(m.row(0).iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn modified_first_step_on_hyperbolic_plane() {
        // exact model: the weight is identically one, so ũ_1 = -r / sinh r
        let grid = uniform_grid(6.0, 1201);
        let model = RadialModel::hyperbolic(dim(2), 1.0).unwrap();
        let t = modified_coefficients(&model, 1, &grid, QuadratureRule::Simpson).unwrap();
        for (r, u) in grid.iter().zip(t.row(1)) {
            let want = if *r == 0.0 { -1.0 } else { -r / r.sinh() };
            assert!((u - want).abs() < 1e-7, "r = {r}: {u} vs {want}");
        }
    }

    #[test]
    fn flat_model_in_modified_recursion() {
        let grid = uniform_grid(4.0, 401);
        let t = modified_coefficients(&RadialModel::flat(dim(4)), 0, &grid, QuadratureRule::Simpson).unwrap();
        for (r, u) in grid.iter().zip(t.row(0)).skip(1) {
            assert!((u - (r.sinh() / r).powf(1.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_model_matches_closed_form() {
        let p = constant_profile(dim(3), -1.0);
        let tab = RadialModel::from_profile(&p, 8.0, 1e-3).unwrap();
        let exact = RadialModel::hyperbolic(dim(3), 1.0).unwrap();
        let grid = uniform_grid(8.0, 801);
        let a = hadamard_coefficients(&tab, 2, &grid, QuadratureRule::Simpson).unwrap();
        let b = hadamard_coefficients(&exact, 2, &grid, QuadratureRule::Simpson).unwrap();
        // each order applies one more second difference to the integrator
        // error in ϑ, so agreement degrades by roughly 1/h² per step
        for (k, tol) in [(0, 1e-10), (1, 1e-7), (2, 1e-3)] {
            for (x, y) in a.row(k).iter().zip(b.row(k)) {
                assert!((x - y).abs() < tol * (1.0 + y.abs()), "k = {k}");
            }
        }
    }

    #[test]
    fn quadrature_rules_agree_roughly() {
        let model = RadialModel::hyperbolic(dim(3), 1.0).unwrap();
        let grid = uniform_grid(8.0, 1601);
        let s = hadamard_coefficients(&model, 1, &grid, QuadratureRule::Simpson).unwrap();
        let t = hadamard_coefficients(&model, 1, &grid, QuadratureRule::Trapezoid).unwrap();
        let i = 200; // r = 1
        assert!((s.row(1)[i] - t.row(1)[i]).abs() < 1e-4 * s.row(1)[i].abs());
    }

    #[test]
    fn growth_fit_examples() {
        let grid = uniform_grid(8.0, 801);
        let flat = hadamard_coefficients(&RadialModel::flat(dim(3)), 2, &grid, QuadratureRule::Simpson).unwrap();
        let fits = growth_fit(&flat);
        assert_eq!((fits[1].c, fits[1].alpha), (0.0, 0.0));
        let hyp = RadialModel::hyperbolic(dim(3), 1.0).unwrap();
        let fits = growth_fit(&hadamard_coefficients(&hyp, 3, &grid, QuadratureRule::Simpson).unwrap());
        assert!(fits[0].alpha <= 1e-6, "{:?}", fits[0]);
        assert!(fits.iter().all(|f| f.c_envelope.is_finite() && f.alpha.is_finite()));
    }

    #[test]
    fn model_parsing() {
        assert!(RadialModel::parse("flat:n=3").is_ok());
        assert!(RadialModel::parse("hyperbolic:n=2,k=0.5").is_ok());
        assert!(RadialModel::parse("hyperbolic:n=1").is_err());
        assert!(RadialModel::parse("sphere:n=2").is_err());
        assert!(RadialModel::parse("flat:n=2,q=1").is_err());
    }
}
