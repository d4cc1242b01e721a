//! Two-point boundary fields along a geodesic.
//!
//! `D_t` is the Jacobi solution with `D_t(0) = 1` and `D_t(t) = 0`. Its
//! initial slope is `D_t'(0) = -J₂(t)⁻¹ J₁(t)`, and slopes at different end
//! points differ by integrals of `G(ℓ) = A(ℓ)⁻¹ A(ℓ)⁻ᵀ`:
//!
//! ```text
//! D_t'(0) - D_s'(0) = ∫ₛᵗ G(ℓ) dℓ,      M(s) = ∫ₛ^∞ G(ℓ) dℓ.
//! ```
//!
//! Near `ℓ = 0` the integrand behaves like `ℓ⁻²`, so quadratures integrate
//! `G(ℓ) - ℓ⁻²·1` and add `∫ ℓ⁻²` analytically.

use serde::Serialize;

use crate::curvature::CurvatureProfile;
use crate::error::{GeoError, Result};
use crate::jacobi::{field_a, first_conjugate_time, integrate, JacobiSeed, JacobiTrajectory};
use crate::linalg::{self, Mat};
use crate::quadrature::{cumulative_simpson, simpson};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeMethod {
    Bvp,
    Quadrature,
}

/// `D_t'(0)` for a single end point.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySlope {
    pub t: f64,
    pub slope: Mat,
    pub method: SlopeMethod,
}

/// `D_t'(0) = -J₂(t)⁻¹ J₁(t)`, integrating backward when `t < 0`.
pub fn slope_bvp(profile: &CurvatureProfile, t: f64, step: f64) -> Result<BoundarySlope> {
    if t == 0.0 || !t.is_finite() {
        return Err(GeoError::InvalidInput(format!("boundary time must be non-zero, got {t}")));
    }
    let m = profile.dim().transverse();
    let j1 = integrate(profile, &JacobiSeed::j1(m), 0.0, t, step)?;
    let j2 = integrate(profile, &JacobiSeed::j2(m), 0.0, t, step)?;
    if let Some(tc) = first_conjugate_time(&j2) {
        return Err(GeoError::ConjugatePoint { t: tc });
    }
    let inv = linalg::inverse(&j2.x_at(t)?).ok_or(GeoError::ConjugatePoint { t })?;
    Ok(BoundarySlope { t, slope: -(inv * j1.x_at(t)?), method: SlopeMethod::Bvp })
}

/// `G(ℓ) = A(ℓ)⁻¹A(ℓ)⁻ᵀ`, optionally minus `ℓ⁻²·1`.
fn inverse_gram(a: &JacobiTrajectory, l: f64, regularize: bool) -> Result<Mat> {
    let x = a.x_at(l)?;
    let inv = linalg::inverse(&x).ok_or(GeoError::ConjugatePoint { t: l })?;
    let mut g = &inv * inv.transpose();
    if regularize {
        let m = g.nrows();
        g -= Mat::identity(m, m) / (l * l);
    }
    Ok(g)
}

/// Quadrature nodes on `[lo, hi]`: the trajectory grid, minus nodes within
/// half a step of either end, bracketed by the end points.
fn range_nodes(a: &JacobiTrajectory, lo: f64, hi: f64) -> Vec<f64> {
    let h = 0.5 * a.step();
    let mut nodes = vec![lo];
    nodes.extend(a.states().iter().map(|s| s.t).filter(|&t| t > lo + h && t < hi - h));
    nodes.push(hi);
    if nodes.len() == 2 {
        nodes.insert(1, 0.5 * (lo + hi));
    }
    nodes
}

fn integrate_gram(a: &JacobiTrajectory, lo: f64, hi: f64, regularize: bool) -> Result<Mat> {
    let nodes = range_nodes(a, lo, hi);
    let values = nodes.iter().map(|&l| inverse_gram(a, l, regularize)).collect::<Result<Vec<_>>>()?;
    Ok(simpson(&nodes, &values))
}

/// `∫ₛᵗ G(ℓ) dℓ` for `0 < s < t` on the grid of `a`.
pub fn gram_integral(a: &JacobiTrajectory, s: f64, t: f64) -> Result<Mat> {
    if !(s > 0.0 && t > s) {
        return Err(GeoError::InvalidInput(format!("need 0 < s < t, got s = {s}, t = {t}")));
    }
    let m = a.profile().dim().transverse();
    Ok(integrate_gram(a, s, t, true)? + Mat::identity(m, m) * (1.0 / s - 1.0 / t))
}

fn checked_field_a(profile: &CurvatureProfile, t_end: f64, step: f64) -> Result<JacobiTrajectory> {
    let a = field_a(profile, t_end, step)?;
    match first_conjugate_time(&a) {
        Some(t) => Err(GeoError::ConjugatePoint { t }),
        None => Ok(a),
    }
}

/// `D_t(s) = A(s) ∫ₛᵗ G(ℓ) dℓ`.
pub fn slope_quadrature(profile: &CurvatureProfile, t: f64, s_eval: f64, step: f64) -> Result<Mat> {
    if !(s_eval > 0.0 && s_eval < t) {
        return Err(GeoError::InvalidInput(format!("need 0 < s < t, got s = {s_eval}, t = {t}")));
    }
    let a = checked_field_a(profile, t, step)?;
    Ok(a.x_at(s_eval)? * gram_integral(&a, s_eval, t)?)
}

/// `D_t'(0)` from `D_s'(0) + ∫ₛᵗ G`, for `0 < s < t`.
pub fn slope_from_difference(profile: &CurvatureProfile, s: f64, t: f64, step: f64) -> Result<BoundarySlope> {
    let base = slope_bvp(profile, s, step)?;
    let a = checked_field_a(profile, t, step)?;
    Ok(BoundarySlope { t, slope: base.slope + gram_integral(&a, s, t)?, method: SlopeMethod::Quadrature })
}

/// How a truncated growth matrix relates to its limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convergence {
    /// The last doubling increment fell below the tolerance.
    Converged,
    /// The horizon ran out, but the doubling increments decay geometrically
    /// and the remaining tail was summed as a geometric series.
    Extrapolated,
    /// The horizon ran out; `value` is the truncated integral, a lower bound
    /// as quadratic forms.
    LowerBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthMatrix {
    pub s: f64,
    /// Best estimate of `M(s)`.
    pub value: Mat,
    /// `∫ₛᵀ G` at the truncation horizon `T = t_used`.
    pub truncated: Mat,
    pub t_used: f64,
    /// Norm of the last doubling increment `∫_{T/2}^{T} G`.
    pub tail_increment: f64,
    pub convergence: Convergence,
}

impl GrowthMatrix {
    pub fn converged(&self) -> bool {
        self.convergence == Convergence::Converged
    }
}

/// `M_T(x) = ∫ₓᵀ G` on a node grid, from which `M(s)` is read off for
/// every `s` above the base.
#[derive(Debug, Clone)]
pub struct GrowthTable {
    a: JacobiTrajectory,
    nodes: Vec<f64>,
    /// `∫_{nodes[i]}^{T} G`.
    remaining: Vec<Mat>,
    t_used: f64,
    tail: Mat,
    tail_increment: f64,
    convergence: Convergence,
}

/// Below this radius `G` is integrated as `(G - ℓ⁻²) + ℓ⁻²`, which is smooth
/// at the origin. Above it `G` is accumulated directly from the horizon
/// down, which keeps full relative accuracy when `M` decays exponentially.
const REGULARIZE_BELOW: f64 = 1.0;

/// `∫ₓᵀ G` at every node, accumulated backward from `T = nodes.last()`.
fn remaining_integrals(a: &JacobiTrajectory, nodes: &[f64]) -> Result<Vec<Mat>> {
    let cut = nodes.partition_point(|&x| x < REGULARIZE_BELOW).min(nodes.len() - 2);
    let upper = &nodes[cut..];
    let rev_t: Vec<f64> = upper.iter().rev().map(|x| -x).collect();
    let rev_g = upper.iter().rev().map(|&l| inverse_gram(a, l, false)).collect::<Result<Vec<_>>>()?;
    let mut out: Vec<Mat> = cumulative_simpson(&rev_t, &rev_g).into_iter().rev().collect();
    if cut > 0 {
        let lower = &nodes[..=cut];
        let vals = lower.iter().map(|&l| inverse_gram(a, l, true)).collect::<Result<Vec<_>>>()?;
        let cum = cumulative_simpson(lower, &vals);
        let (x_c, at_cut) = (nodes[cut], out[0].clone());
        let m = at_cut.nrows();
        let head: Vec<Mat> = (0..cut)
            .map(|i| &at_cut + (&cum[cut] - &cum[i]) + Mat::identity(m, m) * (1.0 / nodes[i] - 1.0 / x_c))
            .collect();
        out.splice(0..0, head);
    }
    Ok(out)
}

/// Doubles the horizon from `4·max(1, s_min)` until an increment
/// `∫_T^{2T} G` has norm below `tol` or the next doubling would pass the
/// profile horizon.
pub fn growth_table(profile: &CurvatureProfile, s_min: f64, step: f64, tol: f64) -> Result<GrowthTable> {
    growth_table_covering(profile, s_min, 0.0, step, tol)
}

/// As [`growth_table`], with the starting horizon raised to at least
/// `2·t_cover` so that `[s_min, t_cover]` stays well inside the truncation.
pub fn growth_table_covering(
    profile: &CurvatureProfile,
    s_min: f64,
    t_cover: f64,
    step: f64,
    tol: f64,
) -> Result<GrowthTable> {
    let hi = profile.covered_range().1;
    if !(s_min > 0.0) {
        return Err(GeoError::InvalidInput(format!("growth matrix needs s > 0, got {s_min}")));
    }
    if s_min >= hi {
        return Err(GeoError::OutOfRange { t: s_min, lo: 0.0, hi });
    }
    let mut t_used = (4.0 * s_min.max(1.0)).max(2.0 * t_cover).min(hi);
    let mut a = field_a(profile, t_used, step)?;
    let mut convergence = Convergence::LowerBound;
    while 2.0 * t_used <= hi {
        a = a.extend_to(2.0 * t_used)?;
        let inc = integrate_gram(&a, t_used, 2.0 * t_used, false)?;
        t_used *= 2.0;
        if linalg::sym_norm(&inc) < tol {
            convergence = Convergence::Converged;
            break;
        }
    }
    if let Some(t) = first_conjugate_time(&a) {
        return Err(GeoError::ConjugatePoint { t });
    }
    // the last three dyadic increments ending at the horizon, oldest first
    let dyadic = [8.0, 4.0, 2.0]
        .iter()
        .map(|d| integrate_gram(&a, t_used / d, 2.0 * t_used / d, false))
        .collect::<Result<Vec<_>>>()?;
    let tail_increment = linalg::sym_norm(&dyadic[2]);
    let m = profile.dim().transverse();
    let mut tail = Mat::zeros(m, m);
    if convergence != Convergence::Converged {
        if let Some(geometric) = geometric_tail(&dyadic) {
            tail = geometric;
            convergence = Convergence::Extrapolated;
        }
    }
    let nodes = range_nodes(&a, s_min, t_used);
    let remaining = remaining_integrals(&a, &nodes)?;
    Ok(GrowthTable { a, nodes, remaining, t_used, tail, tail_increment, convergence })
}

/// Sum of the remaining doublings when three consecutive dyadic increments
/// shrink by a steady ratio `r < 0.9`.
fn geometric_tail(dyadic: &[Mat]) -> Option<Mat> {
    let norms: Vec<f64> = dyadic.iter().map(linalg::sym_norm).collect();
    if norms.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let (r1, r2) = (norms[1] / norms[0], norms[2] / norms[1]);
    if !(r2 < 0.9) || (r1 - r2).abs() > 0.05 * r2 {
        return None;
    }
    Some(&dyadic[2] * (r2 / (1.0 - r2)))
}

impl GrowthTable {
    pub fn t_used(&self) -> f64 {
        self.t_used
    }

    pub fn convergence(&self) -> Convergence {
        self.convergence
    }

    pub fn tail_increment(&self) -> f64 {
        self.tail_increment
    }

    /// The field `A` the table was built from, valid on `[0, t_used]`.
    pub fn field(&self) -> &JacobiTrajectory {
        &self.a
    }

    /// `∫ₜᵀ G` from the next node up plus a local Simpson panel.
    fn remaining_at(&self, t: f64) -> Result<Mat> {
        let lo = self.nodes[0];
        if t < lo - 1e-12 || t > self.t_used + 1e-12 {
            return Err(GeoError::OutOfRange { t, lo, hi: self.t_used });
        }
        let j = self.nodes.partition_point(|&x| x < t).min(self.nodes.len() - 1);
        let to = self.nodes[j];
        let base = self.remaining[j].clone();
        if to - t <= 1e-14 * (1.0 + t) {
            return Ok(base);
        }
        let regularize = t < REGULARIZE_BELOW;
        let mid = 0.5 * (t + to);
        let vals = [
            inverse_gram(&self.a, t, regularize)?,
            inverse_gram(&self.a, mid, regularize)?,
            inverse_gram(&self.a, to, regularize)?,
        ];
        let mut piece = simpson(&[t, mid, to], &vals);
        if regularize {
            let m = piece.nrows();
            piece += Mat::identity(m, m) * (1.0 / t - 1.0 / to);
        }
        Ok(base + piece)
    }

    /// `M(s)` for `s` between the table base and the truncation horizon.
    pub fn matrix_at(&self, s: f64) -> Result<GrowthMatrix> {
        let truncated = linalg::symmetrize(&self.remaining_at(s)?);
        Ok(GrowthMatrix {
            s,
            value: &truncated + &self.tail,
            truncated,
            t_used: self.t_used,
            tail_increment: self.tail_increment,
            convergence: self.convergence,
        })
    }

    /// `D₊∞(s) = A(s) M(s)`, with `D₊∞(0) = 1`.
    pub fn d_infinity(&self, s: f64) -> Result<DInfinity> {
        let m = self.a.profile().dim().transverse();
        let value = if s == 0.0 {
            Mat::identity(m, m)
        } else {
            self.a.x_at(s)? * self.matrix_at(s)?.value
        };
        let condition = linalg::condition_number(&value);
        if !condition.is_finite() {
            return Err(GeoError::Singular { t: s, cond: condition });
        }
        Ok(DInfinity { s, value, condition, convergence: self.convergence })
    }
}

pub fn growth_matrix(profile: &CurvatureProfile, s: f64, step: f64, tol: f64) -> Result<GrowthMatrix> {
    growth_table(profile, s, step, tol)?.matrix_at(s)
}

/// `N_{s,t} = D'_{-s}(0) - D'_t(0)`, symmetrized, with the raw asymmetry kept.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeMatrix {
    pub s: f64,
    pub t: f64,
    pub value: Mat,
    /// `‖N - Nᵀ‖` before symmetrization.
    pub asymmetry: f64,
}

impl BridgeMatrix {
    pub fn lambda_min(&self) -> f64 {
        linalg::lambda_min(&self.value)
    }

    pub fn norm(&self) -> f64 {
        linalg::sym_norm(&self.value)
    }

    pub fn frobenius(&self) -> f64 {
        linalg::frobenius(&self.value)
    }
}

pub fn bridge_matrix(profile: &CurvatureProfile, s: f64, t: f64, step: f64) -> Result<BridgeMatrix> {
    if !(s > 0.0 && t > 0.0) {
        return Err(GeoError::InvalidInput(format!("bridge needs s, t > 0, got s = {s}, t = {t}")));
    }
    let raw = slope_bvp(profile, -s, step)?.slope - slope_bvp(profile, t, step)?.slope;
    Ok(BridgeMatrix { s, t, asymmetry: linalg::asymmetry(&raw), value: linalg::symmetrize(&raw) })
}

/// `D₊∞'(0)` computed two ways.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenLimit {
    pub slope: Mat,
    /// `‖(D_s'(0) + M(s)) - D_T'(0)‖` at the truncation horizon `T`.
    pub residual: f64,
    pub t_used: f64,
    pub convergence: Convergence,
}

/// Reports `D_T'(0)` when the growth matrix converged at `T`, and
/// `D_s'(0) + M(s)` (which carries the extrapolated tail) otherwise.
pub fn green_limit_slope(profile: &CurvatureProfile, s_fix: f64, step: f64, tol: f64) -> Result<GreenLimit> {
    let table = growth_table(profile, s_fix, step, tol)?;
    let via_growth = slope_bvp(profile, s_fix, step)?.slope + table.matrix_at(s_fix)?.value;
    let via_bvp = slope_bvp(profile, table.t_used(), step)?.slope;
    let residual = linalg::op_norm(&(&via_growth - &via_bvp));
    let slope = if table.convergence() == Convergence::Converged { via_bvp } else { via_growth };
    Ok(GreenLimit { slope, residual, t_used: table.t_used(), convergence: table.convergence() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DInfinity {
    pub s: f64,
    pub value: Mat,
    pub condition: f64,
    pub convergence: Convergence,
}

pub fn d_infinity(profile: &CurvatureProfile, s: f64, step: f64, tol: f64) -> Result<DInfinity> {
    if s < 0.0 {
        return Err(GeoError::InvalidInput(format!("D∞ is evaluated at s ≥ 0, got {s}")));
    }
    if s == 0.0 {
        let m = profile.dim().transverse();
        return Ok(DInfinity { s, value: Mat::identity(m, m), condition: 1.0, convergence: Convergence::Converged });
    }
    growth_table(profile, s, step, tol)?.d_infinity(s)
}

/// The truncated Green field `D_T` (`D_T(0) = 1`, `D_T(T) = 0`) on `[0, T]`.
///
/// Integrated backward from `Y(T) = 0`, `Y'(T) = -1`, which is the growing
/// direction, then normalized by `Y(0)⁻¹`.
pub fn green_field(profile: &CurvatureProfile, t_trunc: f64, step: f64) -> Result<JacobiTrajectory> {
    if !(t_trunc > 0.0) {
        return Err(GeoError::InvalidInput(format!("truncation must be positive, got {t_trunc}")));
    }
    let m = profile.dim().transverse();
    let seed = JacobiSeed::custom(Mat::zeros(m, m), -Mat::identity(m, m));
    let y = integrate(profile, &seed, t_trunc, 0.0, step)?;
    let y0 = y.x_at(0.0)?;
    let inv = linalg::inverse(&y0).ok_or(GeoError::ConjugatePoint { t: 0.0 })?;
    Ok(y.times_right(&inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::{constant_profile, seeded_profile, Dimension};

    const STEP: f64 = 1e-3;

    fn constant(n: usize, c: f64) -> CurvatureProfile {
        constant_profile(Dimension::new(n).unwrap(), c)
    }

    fn scalar(m: &Mat) -> f64 {
        assert!((m - Mat::identity(m.nrows(), m.ncols()) * m[(0, 0)]).amax() < 1e-9);
        m[(0, 0)]
    }

    #[test]
    fn slope_examples() {
        let flat = constant(3, 0.0);
        assert!((scalar(&slope_bvp(&flat, 2.0, STEP).unwrap().slope) + 0.5).abs() < 1e-12);
        let hyp = constant(3, -1.0);
        let s = scalar(&slope_bvp(&hyp, 2.0, STEP).unwrap().slope);
        assert!((s + 1.0 / 2.0_f64.tanh()).abs() < 1e-9);
        let s = scalar(&slope_bvp(&hyp, -0.5, STEP).unwrap().slope);
        assert!((s - 1.0 / 0.5_f64.tanh()).abs() < 1e-9);
        assert!(slope_bvp(&hyp, 0.0, STEP).is_err());
    }

    #[test]
    fn conjugate_point_is_flagged() {
        let sphere = constant(2, 1.0);
        match slope_bvp(&sphere, 4.0, STEP) {
            Err(GeoError::ConjugatePoint { t }) => assert!((t - std::f64::consts::PI).abs() < 1e-6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quadrature_examples() {
        let d = slope_quadrature(&constant(2, 0.0), 4.0, 1.0, STEP).unwrap();
        assert!((scalar(&d) - 0.75).abs() < 1e-10);
        let d = slope_quadrature(&constant(3, -1.0), 4.0, 1.0, STEP).unwrap();
        assert!((scalar(&d) - 3.0_f64.sinh() / 4.0_f64.sinh()).abs() < 1e-9);
    }

    #[test]
    fn quadrature_agrees_with_bvp_on_seeded_profile() {
        let p = seeded_profile(&["0.3*sin(t)*tanh(t)^2", "log(cosh(0.5*t))"], 20.0).unwrap();
        let (t, s) = (4.0, 1.3);
        let slope = slope_bvp(&p, t, STEP).unwrap().slope;
        let m = p.dim().transverse();
        let j1 = integrate(&p, &JacobiSeed::j1(m), 0.0, t, STEP).unwrap();
        let j2 = integrate(&p, &JacobiSeed::j2(m), 0.0, t, STEP).unwrap();
        let via_bvp = j1.x_at(s).unwrap() + j2.x_at(s).unwrap() * slope;
        let via_quad = slope_quadrature(&p, t, s, STEP).unwrap();
        assert!(linalg::rel_err(&via_quad, &via_bvp) < 1e-6);

        let diff = slope_from_difference(&p, 0.7, t, STEP).unwrap();
        assert!(linalg::rel_err(&diff.slope, &slope_bvp(&p, t, STEP).unwrap().slope) < 1e-6);
    }

    #[test]
    fn growth_examples() {
        let g = growth_matrix(&constant(3, -1.0), 0.5, STEP, 1e-10).unwrap();
        assert!(g.converged());
        assert!((scalar(&g.value) - (1.0 / 0.5_f64.tanh() - 1.0)).abs() < 1e-8);
        let g = growth_matrix(&constant(2, -1.0), 2.0, STEP, 1e-10).unwrap();
        assert!((scalar(&g.value) - (1.0 / 2.0_f64.tanh() - 1.0)).abs() < 1e-8);

        let g = growth_matrix(&constant(2, 0.0), 1.0, STEP, 1e-10).unwrap();
        assert_eq!(g.convergence, Convergence::Extrapolated);
        assert!((scalar(&g.value) - 1.0).abs() < 1e-8);
        assert!((scalar(&g.truncated) - (1.0 - 1.0 / g.t_used)).abs() < 1e-10);
    }

    #[test]
    fn bridge_examples() {
        let b = bridge_matrix(&constant(2, 0.0), 1.0, 2.0, STEP).unwrap();
        assert!((scalar(&b.value) - 1.5).abs() < 1e-10);
        let b = bridge_matrix(&constant(4, -1.0), 0.5, 2.0, STEP).unwrap();
        let want = 1.0 / 0.5_f64.tanh() + 1.0 / 2.0_f64.tanh();
        assert!((scalar(&b.value) - want).abs() < 1e-8);
        assert!(b.asymmetry < 1e-12);
    }

    #[test]
    fn green_limit_examples() {
        for (c, want) in [(0.0, 0.0), (-1.0, -1.0), (-4.0, -2.0)] {
            let g = green_limit_slope(&constant(3, c), 1.0, STEP, 1e-10).unwrap();
            assert!((scalar(&g.slope) - want).abs() < 1e-7, "c = {c}: {}", g.slope);
        }
    }

    #[test]
    fn d_infinity_examples() {
        let d = d_infinity(&constant(2, 0.0), 3.0, STEP, 1e-10).unwrap();
        assert!((scalar(&d.value) - 1.0).abs() < 1e-8);
        let d = d_infinity(&constant(3, -1.0), 1.0, STEP, 1e-10).unwrap();
        assert!((scalar(&d.value) - (-1.0_f64).exp()).abs() < 1e-8);
        assert_eq!(d_infinity(&constant(3, -1.0), 0.0, STEP, 1e-10).unwrap().value, Mat::identity(2, 2));
    }

    #[test]
    fn green_field_matches_closed_form() {
        let d = green_field(&constant(2, -1.0), 20.0, STEP).unwrap();
        for &t in &[0.0, 1.0, 5.0] {
            assert!((d.x_at(t).unwrap()[(0, 0)] - (20.0 - t).sinh() / 20.0_f64.sinh()).abs() < 1e-9);
        }
    }
}
