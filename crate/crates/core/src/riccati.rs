//! Riccati solutions `V = X'X⁻¹`, the comparison bound `‖V‖ ≤ k coth(kt)`,
//! the volume density `ϑ = det A`, and the lower-bound certificate
//!
//! ```text
//! ϑ(t)⁻¹ ≤ {2k coth(kt) ‖N_{s,s}‖}^{(n-1)/2},     t > s > 0.
//! ```

use serde::Serialize;

use crate::boundary::{bridge_matrix, green_field, growth_table_covering, Convergence};
use crate::curvature::CurvatureProfile;
use crate::error::{GeoError, Result};
use crate::jacobi::{field_a, first_conjugate_time, JacobiTrajectory, SeedKind};
use crate::linalg::{self, k_coth, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiccatiSource {
    /// `U = A'A⁻¹`.
    FromA,
    /// `V = D'D⁻¹` for a (truncated) Green field.
    FromGreen,
    Custom,
}

/// `V(t) = X'(t) X(t)⁻¹` sampled on the grid of a Jacobi trajectory.
#[derive(Debug, Clone)]
pub struct RiccatiTrajectory {
    source: RiccatiSource,
    field: JacobiTrajectory,
    grid: Vec<f64>,
    values: Vec<Mat>,
    symmetry_defect: f64,
}

fn riccati_value(x: &Mat, xp: &Mat, t: f64) -> Result<Mat> {
    let inv = linalg::inverse(x).ok_or(GeoError::ConjugatePoint { t })?;
    let v = xp * inv;
    if !linalg::is_finite(&v) {
        return Err(GeoError::ConjugatePoint { t });
    }
    Ok(v)
}

/// Builds `X'X⁻¹` on every grid node. The node where the trajectory was
/// seeded is skipped when `X` vanishes there (as for `A` at `t = 0`).
pub fn riccati_from(trajectory: &JacobiTrajectory) -> Result<RiccatiTrajectory> {
    let source = match trajectory.seed_kind() {
        SeedKind::A | SeedKind::J2 => RiccatiSource::FromA,
        _ => RiccatiSource::Custom,
    };
    riccati_with_source(trajectory, source)
}

pub fn riccati_with_source(trajectory: &JacobiTrajectory, source: RiccatiSource) -> Result<RiccatiTrajectory> {
    let mut grid = Vec::with_capacity(trajectory.states().len());
    let mut values = Vec::with_capacity(trajectory.states().len());
    let mut symmetry_defect = 0.0_f64;
    for s in trajectory.states() {
        if s.t == trajectory.origin() && s.x.amax() == 0.0 {
            continue;
        }
        let v = riccati_value(&s.x, &s.xp, s.t)?;
        symmetry_defect = symmetry_defect.max(linalg::asymmetry(&v) / (1.0 + linalg::op_norm(&v)));
        grid.push(s.t);
        values.push(v);
    }
    if grid.is_empty() {
        return Err(GeoError::InvalidInput("trajectory has no invertible states".into()));
    }
    Ok(RiccatiTrajectory { source, field: trajectory.clone(), grid, values, symmetry_defect })
}

/// `V = D_T' D_T⁻¹` for the Green field truncated at `t_trunc`.
pub fn green_riccati(profile: &CurvatureProfile, t_trunc: f64, step: f64) -> Result<RiccatiTrajectory> {
    riccati_with_source(&green_field(profile, t_trunc, step)?, RiccatiSource::FromGreen)
}

/// Worst Riccati residual `‖V' + V² + K‖` over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiccatiResidual {
    pub absolute: f64,
    /// `absolute / (1 + ‖V‖²)` at the worst node for this measure.
    pub scaled: f64,
    pub t_worst: f64,
}

impl RiccatiTrajectory {
    pub fn source(&self) -> RiccatiSource {
        self.source
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn field(&self) -> &JacobiTrajectory {
        &self.field
    }

    /// Largest `‖V - Vᵀ‖ / (1 + ‖V‖)` over the grid.
    pub fn symmetry_defect(&self) -> f64 {
        self.symmetry_defect
    }

    /// `V(t)` from the dense output of the underlying field.
    pub fn at(&self, t: f64) -> Result<Mat> {
        let (x, xp) = self.field.at(t)?;
        riccati_value(&x, &xp, t)
    }

    /// Residual on grid nodes inside `[lo, hi]`, with `V'` from the
    /// five-point centered difference on uniformly spaced stencils.
    pub fn residual(&self, lo: f64, hi: f64) -> RiccatiResidual {
        let profile = self.field.profile();
        let h = self.field.step();
        let mut out = RiccatiResidual { absolute: 0.0, scaled: 0.0, t_worst: f64::NAN };
        let g = &self.grid;
        for i in 2..g.len().saturating_sub(2) {
            let t = g[i];
            if t < lo || t > hi {
                continue;
            }
            let uniform = (0..4).all(|j| ((g[i - 1 + j] - g[i - 2 + j]) - h).abs() <= 1e-9 * h);
            if !uniform {
                continue;
            }
            let v = &self.values;
            let dv = (&v[i - 2] - &v[i - 1] * 8.0 + &v[i + 1] * 8.0 - &v[i + 2]) / (12.0 * h);
            let r = linalg::op_norm(&(dv + &v[i] * &v[i] + profile.evaluate(t)));
            let nv = linalg::op_norm(&v[i]);
            let scaled = r / (1.0 + nv * nv);
            out.absolute = out.absolute.max(r);
            if scaled > out.scaled {
                out.scaled = scaled;
                out.t_worst = t;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundWitness {
    pub t: f64,
    pub norm: f64,
    pub bound: f64,
}

/// Outcome of comparing `‖V(t)‖` with `k coth(kt)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub k: f64,
    /// Largest `‖V(t)‖ / (k coth kt)` in operator norm.
    pub max_ratio: f64,
    pub t_max_ratio: f64,
    /// Same ratio with the Frobenius norm, at most `√(n-1)` times larger.
    pub max_ratio_frobenius: f64,
    /// Set when the operator-norm ratio exceeds `1 + 1e-6`.
    pub witness: Option<BoundWitness>,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.witness.is_none()
    }
}

/// `K(t) ≥ -k²`, with slack for `k` estimated from a sampled scan.
fn check_lower_curvature(profile: &CurvatureProfile, k: f64, t: f64) -> Result<()> {
    let lam = linalg::lambda_min(&profile.evaluate(t));
    if lam < -k * k * (1.0 + 1e-6) - 1e-12 {
        return Err(GeoError::InvalidInput(format!(
            "curvature {lam:.6e} at t = {t} is below -k^2 = {:.6e}",
            -k * k
        )));
    }
    Ok(())
}

pub fn riccati_bound_check(v: &RiccatiTrajectory, k: f64, t_grid: &[f64]) -> Result<BoundCheck> {
    if !(k >= 0.0) {
        return Err(GeoError::InvalidInput(format!("k must be non-negative, got {k}")));
    }
    let profile = v.field().profile();
    let mut out = BoundCheck { k, max_ratio: 0.0, t_max_ratio: f64::NAN, max_ratio_frobenius: 0.0, witness: None };
    for &t in t_grid {
        if !(t > 0.0) {
            return Err(GeoError::InvalidInput(format!("bound is stated for t > 0, got {t}")));
        }
        check_lower_curvature(profile, k, t)?;
        let vt = v.at(t)?;
        let bound = k_coth(k, t);
        let norm = linalg::op_norm(&vt);
        let ratio = norm / bound;
        out.max_ratio_frobenius = out.max_ratio_frobenius.max(linalg::frobenius(&vt) / bound);
        if ratio > out.max_ratio {
            out.max_ratio = ratio;
            out.t_max_ratio = t;
            if ratio > 1.0 + 1e-6 {
                out.witness = Some(BoundWitness { t, norm, bound });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaSample {
    pub t: f64,
    /// `Θ = det(A(t)/t)`.
    pub theta: f64,
    /// `ϑ = det A(t)`.
    pub vartheta: f64,
    pub log_vartheta: f64,
}

fn conjugate_free_a(profile: &CurvatureProfile, t_max: f64, step: f64) -> Result<JacobiTrajectory> {
    let a = field_a(profile, t_max, step)?;
    match first_conjugate_time(&a) {
        Some(t) => Err(GeoError::ConjugatePoint { t }),
        None => Ok(a),
    }
}

fn positive_grid(t_grid: &[f64]) -> Result<f64> {
    if t_grid.is_empty() {
        return Err(GeoError::InvalidInput("empty time grid".into()));
    }
    if let Some(t) = t_grid.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(GeoError::InvalidInput(format!("grid times must be positive, got {t}")));
    }
    Ok(t_grid.iter().copied().fold(0.0, f64::max))
}

fn theta_sample(a: &JacobiTrajectory, t: f64) -> Result<ThetaSample> {
    let x = a.x_at(t)?;
    let (sign, log_abs) = linalg::log_det(&x);
    if sign <= 0.0 {
        return Err(GeoError::ConjugatePoint { t });
    }
    Ok(ThetaSample { t, theta: linalg::det(&(x / t)), vartheta: log_abs.exp(), log_vartheta: log_abs })
}

/// `Θ` and `ϑ` along the grid.
pub fn theta(profile: &CurvatureProfile, t_grid: &[f64], step: f64) -> Result<Vec<ThetaSample>> {
    let t_max = positive_grid(t_grid)?;
    let a = conjugate_free_a(profile, t_max, step)?;
    t_grid.iter().map(|&t| theta_sample(&a, t)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogDerivativeCheck {
    pub max_defect: f64,
    pub t_worst: f64,
}

/// Compares the five-point difference of `log ϑ` with `Tr U(t)`.
pub fn log_derivative_check(profile: &CurvatureProfile, t_grid: &[f64], step: f64) -> Result<LogDerivativeCheck> {
    let t_max = positive_grid(t_grid)?;
    let h = step;
    if let Some(t) = t_grid.iter().find(|&&t| t - 2.0 * h <= 0.0) {
        return Err(GeoError::InvalidInput(format!("t = {t} is too close to the origin for the stencil")));
    }
    let a = conjugate_free_a(profile, (t_max + 2.0 * h).min(profile.covered_range().1), step)?;
    let log_theta = |t: f64| -> Result<f64> { Ok(linalg::log_det(&a.x_at(t)?).1) };
    let mut out = LogDerivativeCheck { max_defect: 0.0, t_worst: f64::NAN };
    for &t in t_grid {
        let d = (log_theta(t - 2.0 * h)? - 8.0 * log_theta(t - h)? + 8.0 * log_theta(t + h)? - log_theta(t + 2.0 * h)?)
            / (12.0 * h);
        let (x, xp) = a.at(t)?;
        let trace = riccati_value(&x, &xp, t)?.trace();
        let defect = (d - trace).abs();
        if defect > out.max_defect || out.t_worst.is_nan() {
            out.max_defect = defect;
            out.t_worst = t;
        }
    }
    Ok(out)
}

/// Residuals of `U - V = A⁻ᵀ M⁻¹ A⁻¹` and of `‖A⁻¹‖² ≤ 2‖M‖ k coth(kt)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InverseNormCheck {
    /// Largest relative defect of the identity.
    pub identity_residual: f64,
    /// Largest `‖A⁻¹‖² / (2‖M‖ k coth kt)`.
    pub norm_ratio: f64,
    pub t_used: f64,
    pub convergence: Convergence,
}

/// The identity is checked with `V` from the Green field truncated at the
/// same horizon `T` as the growth matrix, for which it holds exactly; the
/// norm inequality uses the best estimate of `M`.
pub fn inverse_norm_bound_check(
    profile: &CurvatureProfile,
    t_grid: &[f64],
    k: f64,
    step: f64,
    tol: f64,
) -> Result<InverseNormCheck> {
    let t_max = positive_grid(t_grid)?;
    let t_min = t_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let table = growth_table_covering(profile, t_min, t_max, step, tol)?;
    if table.convergence() == Convergence::LowerBound {
        return Err(GeoError::NotConverged { t_used: table.t_used(), increment: table.tail_increment() });
    }
    if t_max >= table.t_used() {
        return Err(GeoError::OutOfRange { t: t_max, lo: t_min, hi: table.t_used() });
    }
    let green = green_field(profile, table.t_used(), step)?;
    let a = table.field();
    let mut out = InverseNormCheck {
        identity_residual: 0.0,
        norm_ratio: 0.0,
        t_used: table.t_used(),
        convergence: table.convergence(),
    };
    for &t in t_grid {
        check_lower_curvature(profile, k, t)?;
        let (x, xp) = a.at(t)?;
        let u = riccati_value(&x, &xp, t)?;
        let (y, yp) = green.at(t)?;
        let v = riccati_value(&y, &yp, t)?;
        let m = table.matrix_at(t)?;
        let a_inv = linalg::inverse(&x).ok_or(GeoError::ConjugatePoint { t })?;
        let m_inv = linalg::inverse(&m.truncated).ok_or(GeoError::Singular { t, cond: f64::INFINITY })?;
        let rhs = a_inv.transpose() * m_inv * &a_inv;
        out.identity_residual = out.identity_residual.max(linalg::rel_err(&(u - v), &rhs));
        let lhs = linalg::op_norm(&a_inv).powi(2);
        out.norm_ratio = out.norm_ratio.max(lhs / (2.0 * linalg::sym_norm(&m.value) * k_coth(k, t)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateEntry {
    pub t: f64,
    pub vartheta: f64,
    pub vartheta_inv: f64,
    pub rhs: f64,
    pub margin: f64,
    /// Right-hand side with the Frobenius norm of `N_{s,s}`.
    pub rhs_frobenius: f64,
}

/// Per-time check of `ϑ(t)⁻¹ ≤ {2k coth(kt) ‖N_{s,s}‖}^{(n-1)/2}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundCertificate {
    pub profile: String,
    pub fingerprint: String,
    pub s: f64,
    pub k: f64,
    pub n: usize,
    pub bridge_norm: f64,
    pub bridge_frobenius: f64,
    pub bridge_asymmetry: f64,
    pub entries: Vec<CertificateEntry>,
    /// `min_t rhs(t)⁻¹`, a lower bound for `ϑ` on the grid.
    #[serde(rename = "C")]
    pub constant: f64,
}

impl LowerBoundCertificate {
    pub fn min_margin(&self) -> f64 {
        self.entries.iter().map(|e| e.margin).fold(f64::INFINITY, f64::min)
    }

    /// Entries with margin below `-tol`.
    pub fn witnesses(&self, tol: f64) -> Vec<&CertificateEntry> {
        self.entries.iter().filter(|e| e.margin < -tol).collect()
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.witnesses(tol).is_empty()
    }
}

pub fn lower_bound_certificate(
    profile: &CurvatureProfile,
    s: f64,
    t_grid: &[f64],
    step: f64,
) -> Result<LowerBoundCertificate> {
    let t_max = positive_grid(t_grid)?;
    if !(s > 0.0) {
        return Err(GeoError::InvalidInput(format!("s must be positive, got {s}")));
    }
    if let Some(t) = t_grid.iter().find(|&&t| t <= s) {
        return Err(GeoError::InvalidInput(format!("certificate times must exceed s = {s}, got {t}")));
    }
    let a = conjugate_free_a(profile, t_max, step)?;
    let bridge = bridge_matrix(profile, s, s, step)?;
    let k = profile.k_lower();
    let n = profile.dim().n();
    let power = (n - 1) as f64 / 2.0;
    let (norm, frob) = (bridge.norm(), bridge.frobenius());
    let entries = t_grid
        .iter()
        .map(|&t| {
            let sample = theta_sample(&a, t)?;
            let kc = 2.0 * k_coth(k, t);
            let rhs = (kc * norm).powf(power);
            let vartheta_inv = (-sample.log_vartheta).exp();
            Ok(CertificateEntry {
                t,
                vartheta: sample.vartheta,
                vartheta_inv,
                rhs,
                margin: rhs - vartheta_inv,
                rhs_frobenius: (kc * frob).powf(power),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let constant = entries.iter().map(|e| 1.0 / e.rhs).fold(f64::INFINITY, f64::min);
    Ok(LowerBoundCertificate {
        profile: profile.label().to_string(),
        fingerprint: profile.fingerprint(),
        s,
        k,
        n,
        bridge_norm: norm,
        bridge_frobenius: frob,
        bridge_asymmetry: bridge.asymmetry,
        entries,
        constant,
    })
}

/// Samples of `ϑ` and whether they increase over the second half of the
/// grid. Purely descriptive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub samples: Vec<(f64, f64)>,
    pub tail_from: f64,
    pub increasing_on_tail: bool,
}

pub fn divergence_diagnostic(profile: &CurvatureProfile, t_grid: &[f64], step: f64) -> Result<DivergenceReport> {
    let samples: Vec<(f64, f64)> = theta(profile, t_grid, step)?.into_iter().map(|s| (s.t, s.vartheta)).collect();
    let tail = &samples[samples.len() / 2..];
    let increasing_on_tail = tail.windows(2).all(|w| w[1].1 > w[0].1);
    Ok(DivergenceReport { tail_from: tail[0].0, samples, increasing_on_tail })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::{constant_profile, seeded_profile, Dimension};

    const STEP: f64 = 1e-3;

    fn constant(n: usize, c: f64) -> CurvatureProfile {
        constant_profile(Dimension::new(n).unwrap(), c)
    }

    fn grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
    }

    #[test]
    fn u_examples() {
        let u = riccati_from(&field_a(&constant(3, 0.0), 5.0, STEP).unwrap()).unwrap();
        assert!((u.at(2.0).unwrap() - Mat::identity(2, 2) * 0.5).amax() < 1e-12);
        let u = riccati_from(&field_a(&constant(2, -1.0), 5.0, STEP).unwrap()).unwrap();
        assert!((u.at(2.0).unwrap()[(0, 0)] - 1.0 / 2.0_f64.tanh()).abs() < 1e-9);
        assert!(u.symmetry_defect() < 1e-12);
        let r = u.residual(0.2, 4.8);
        assert!(r.scaled < 1e-5, "{r:?}");
    }

    #[test]
    fn green_riccati_is_minus_one_for_hyperbolic() {
        let v = green_riccati(&constant(2, -1.0), 32.0, STEP).unwrap();
        for &t in &[0.0, 1.0, 8.0] {
            assert!((v.at(t).unwrap()[(0, 0)] + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn comparison_bound_is_sharp_for_constant_curvature() {
        for (c, k) in [(0.0, 0.0), (-1.0, 1.0), (-4.0, 2.0)] {
            let u = riccati_from(&field_a(&constant(3, c), 10.0, STEP).unwrap()).unwrap();
            let check = riccati_bound_check(&u, k, &grid(0.1, 10.0, 50)).unwrap();
            assert!(check.holds());
            assert!((check.max_ratio - 1.0).abs() < 1e-6, "c = {c}: {}", check.max_ratio);
        }
        // a too small k is refused
        let u = riccati_from(&field_a(&constant(2, -1.0), 2.0, STEP).unwrap()).unwrap();
        assert!(riccati_bound_check(&u, 0.5, &[1.0]).is_err());
    }

    #[test]
    fn theta_examples() {
        let s = theta(&constant(3, 0.0), &[2.0], STEP).unwrap()[0];
        assert!((s.theta - 1.0).abs() < 1e-12 && (s.vartheta - 4.0).abs() < 1e-12);
        let s = theta(&constant(2, -1.0), &[2.0], STEP).unwrap()[0];
        assert!((s.theta - 2.0_f64.sinh() / 2.0).abs() < 1e-8);
        assert!((s.vartheta - 2.0_f64.sinh()).abs() < 1e-8);
        assert!((s.vartheta / 2.0 - s.theta).abs() < 1e-12 * s.theta);
        assert!(matches!(theta(&constant(2, 1.0), &[4.0], STEP), Err(GeoError::ConjugatePoint { .. })));
    }

    #[test]
    fn log_derivative_matches_trace() {
        for p in [constant(3, 0.0), constant(2, -1.0), seeded_profile(&["0.3*sin(t)*tanh(t)^2"], 20.0).unwrap()] {
            let check = log_derivative_check(&p, &grid(0.1, 10.0, 100), STEP).unwrap();
            assert!(check.max_defect < 1e-6, "{}: {check:?}", p.label());
        }
    }

    #[test]
    fn inverse_norm_identity() {
        for c in [0.0, -1.0] {
            let check = inverse_norm_bound_check(&constant(3, c), &grid(0.5, 8.0, 16), (-c).sqrt(), STEP, 1e-10)
                .unwrap();
            assert!(check.identity_residual < 1e-6, "c = {c}: {check:?}");
            assert!(check.norm_ratio <= 1.0 + 1e-6, "c = {c}: {check:?}");
        }
    }

    #[test]
    fn certificate_examples() {
        let cert = lower_bound_certificate(&constant(2, -1.0), 0.5, &[2.0], STEP).unwrap();
        let e = cert.entries[0];
        assert!((cert.bridge_norm - 2.0 / 0.5_f64.tanh()).abs() < 1e-4);
        assert!((e.rhs - 2.9965).abs() < 1e-4);
        assert!((e.vartheta_inv - 0.2757).abs() < 1e-4);
        assert!(cert.holds(1e-8));

        let cert = lower_bound_certificate(&constant(2, 0.0), 1.0, &[4.0], STEP).unwrap();
        let e = cert.entries[0];
        assert!((e.rhs - 1.0).abs() < 1e-9 && (e.vartheta_inv - 0.25).abs() < 1e-12);
        assert!((e.margin - 0.75).abs() < 1e-9);

        assert!(lower_bound_certificate(&constant(2, 0.0), 1.0, &[1.0], STEP).is_err());
        assert!(matches!(
            lower_bound_certificate(&constant(2, 1.0), 0.5, &[1.0, 4.0], STEP),
            Err(GeoError::ConjugatePoint { .. })
        ));
    }

    #[test]
    fn divergence_examples() {
        let r = divergence_diagnostic(&constant(2, -1.0), &grid(0.5, 10.0, 20), STEP).unwrap();
        assert!(r.increasing_on_tail);
        let r = divergence_diagnostic(&constant(2, 0.0), &grid(0.5, 10.0, 20), STEP).unwrap();
        assert!(r.increasing_on_tail);
    }
}
