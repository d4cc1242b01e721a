use rand::Rng;

use super::{CurvatureProfile, Dimension};
use crate::error::{GeoError, Result};
use crate::expr::{Expr, Jet};
use crate::jacobi::{integrate, JacobiSeed};
use crate::linalg::Mat;

/// Below this radius, seeds that are singular at the origin are evaluated
/// through an even quadratic fit instead of directly.
const REGULAR_RADIUS: f64 = 1e-2;

#[derive(Debug, Clone)]
struct Seed {
    phi: Expr,
    /// `φ` itself is not finite at `t = 0` (e.g. `log(sinh(t)/t)`).
    singular_origin: bool,
}

/// Diagonal curvature `K_i = -w_i''/w_i` induced by `w_i(t) = t·exp(φ_i(t))`.
///
/// Because every `w_i` is positive for `t > 0`, the Jacobi field
/// `A(t) = diag(w_i(t))` never degenerates and the profile is free of
/// conjugate points by construction.
#[derive(Debug, Clone)]
pub struct SeededDiagonalProfile {
    seeds: Vec<Seed>,
}

impl SeededDiagonalProfile {
    pub fn new(phis: Vec<Expr>) -> Result<Self> {
        if phis.is_empty() {
            return Err(GeoError::InvalidInput("at least one seed function is required".into()));
        }
        let mut seeds = Vec::with_capacity(phis.len());
        for phi in phis {
            let at_zero = phi.jet(0.0);
            let singular_origin = !at_zero.is_finite();
            let (value, slope) = if singular_origin {
                // linear extrapolation to the origin from two small radii
                let (h1, h2) = (1e-3, 2e-3);
                let (j1, j2) = (phi.jet(h1), phi.jet(h2));
                (2.0 * j1.v - j2.v, 2.0 * j1.d1 - j2.d1)
            } else {
                (at_zero.v, at_zero.d1)
            };
            let tol = if singular_origin { 1e-5 } else { 1e-12 };
            if value.abs() > tol || slope.abs() > tol || !value.is_finite() || !slope.is_finite() {
                return Err(GeoError::InvalidInput(format!(
                    "seed '{}' must satisfy phi(0) = phi'(0) = 0 (got {value:.3e}, {slope:.3e})",
                    phi.source()
                )));
            }
            seeds.push(Seed { phi, singular_origin });
        }
        Ok(SeededDiagonalProfile { seeds })
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn expressions(&self) -> Vec<&Expr> {
        self.seeds.iter().map(|s| &s.phi).collect()
    }

    fn raw_entry(phi: &Expr, tau: f64) -> f64 {
        let j: Jet = phi.jet(tau);
        if tau == 0.0 {
            -3.0 * j.d2
        } else {
            -(j.d1 * j.d1 + 2.0 * j.d1 / tau + j.d2)
        }
    }

    /// `K_i(|t|)`.
    pub fn entry(&self, i: usize, t: f64) -> f64 {
        let seed = &self.seeds[i];
        let tau = t.abs();
        if seed.singular_origin && tau < REGULAR_RADIUS {
            let (t1, t2) = (REGULAR_RADIUS, 2.0 * REGULAR_RADIUS);
            let (k1, k2) = (Self::raw_entry(&seed.phi, t1), Self::raw_entry(&seed.phi, t2));
            let b = (k2 - k1) / (t2 * t2 - t1 * t1);
            return k1 + b * (tau * tau - t1 * t1);
        }
        Self::raw_entry(&seed.phi, tau)
    }

    pub fn curvature(&self, t: f64) -> Mat {
        let m = self.seeds.len();
        Mat::from_fn(m, m, |i, j| if i == j { self.entry(i, t) } else { 0.0 })
    }

    /// `(w_i(t), w_i'(t))`, extended oddly to `t < 0`.
    pub fn oracle_entry(&self, i: usize, t: f64) -> (f64, f64) {
        let tau = t.abs();
        if tau == 0.0 {
            return (0.0, 1.0);
        }
        let j = self.seeds[i].phi.jet(tau);
        let e = j.v.exp();
        (t * e, e * (1.0 + tau * j.d1))
    }

    pub fn oracle(&self, t: f64) -> (Mat, Mat) {
        let m = self.seeds.len();
        let mut a = Mat::zeros(m, m);
        let mut ap = Mat::zeros(m, m);
        for i in 0..m {
            let (w, wp) = self.oracle_entry(i, t);
            a[(i, i)] = w;
            ap[(i, i)] = wp;
        }
        (a, ap)
    }

    pub(crate) fn scan_bounds(&self, horizon: f64, step: f64) -> (f64, f64) {
        let count = (horizon / step).ceil() as usize;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for k in 0..=count {
            let t = (k as f64 * step).min(horizon);
            for i in 0..self.seeds.len() {
                let v = self.entry(i, t);
                lo = lo.min(v);
                hi = hi.max(v.abs());
            }
        }
        ((-lo).max(0.0).sqrt(), hi)
    }

    /// Whether some entry takes both signs on `[0, t_max]`.
    pub fn changes_sign(&self, t_max: f64, step: f64) -> bool {
        let count = (t_max / step).ceil() as usize;
        let (mut pos, mut neg) = (false, false);
        for k in 0..=count {
            let t = (k as f64 * step).min(t_max);
            for i in 0..self.seeds.len() {
                let v = self.entry(i, t);
                pos |= v > 1e-12;
                neg |= v < -1e-12;
            }
        }
        pos && neg
    }
}

/// Builds a seeded profile from `φ_i` expressions, one per transverse
/// direction.
pub fn seeded_profile(phis: &[&str], horizon: f64) -> Result<CurvatureProfile> {
    if !(horizon > 0.0) {
        return Err(GeoError::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let exprs = phis.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>()?;
    let seeded = SeededDiagonalProfile::new(exprs)?;
    Ok(CurvatureProfile::from_seeded(seeded, horizon))
}

/// Random seeds of the form
/// `log(cosh(c t)) + a sin(ω t + θ) tanh(t)^2`, one per transverse direction.
///
/// The `log cosh` part gives exponential growth of `w`, the oscillating
/// part pushes the curvature positive in places. Coefficients are bounded:
/// `c ∈ [0.3, 0.8]`, `|a| ≤ 0.5`, `ω ∈ [0.5, 2]`.
pub fn random_seed_expressions<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<String> {
    (0..count)
        .map(|_| {
            let c: f64 = rng.random_range(0.3..0.8);
            let a: f64 = rng.random_range(-0.5..0.5);
            let w: f64 = rng.random_range(0.5..2.0);
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            format!("log(cosh({c:.6}*t)) + {a:.6}*sin({w:.6}*t + {th:.6})*tanh(t)^2")
        })
        .collect()
}

/// Whether the even Jacobi solution (`X(0) = 1`, `X'(0) = 0`) stays positive
/// on `[0, t_max]`.
///
/// `diag(w_i)` only rules out conjugate points along rays from the origin.
/// The curvature is extended evenly to `t < 0`, and a positive even solution
/// rules out conjugate pairs straddling the origin as well (Sturm
/// separation), so the profile is conjugate-free on `[-t_max, t_max]`.
pub fn conjugate_free_on_line(profile: &CurvatureProfile, t_max: f64, step: f64) -> Result<bool> {
    let m = profile.dim().transverse();
    let even = integrate(profile, &JacobiSeed::j1(m), 0.0, t_max, step)?;
    Ok(even.states().iter().all(|s| (0..m).all(|i| s.x[(i, i)] > 0.0)))
}

/// Draws seeded profiles until one has sign-changing curvature on
/// `[0, min(10, horizon)]` and no conjugate points on `[-horizon, horizon]`.
pub fn random_seeded_profile<R: Rng + ?Sized>(
    rng: &mut R,
    n: Dimension,
    horizon: f64,
) -> Result<CurvatureProfile> {
    for _ in 0..1000 {
        let sources = random_seed_expressions(rng, n.transverse());
        let refs: Vec<&str> = sources.iter().map(String::as_str).collect();
        let profile = seeded_profile(&refs, horizon)?;
        let scan_to = horizon.min(10.0);
        if profile.seeded().is_some_and(|s| s.changes_sign(scan_to, 1e-2))
            && conjugate_free_on_line(&profile, horizon, 1e-2)?
        {
            return Ok(profile);
        }
    }
    Err(GeoError::InvalidInput("could not draw a sign-changing profile".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `-w''/w` by central differences of `w = t exp(φ)`.
    fn fd_curvature(phi: &Expr, t: f64) -> f64 {
        let w = |s: f64| s * phi.eval(s).exp();
        let h = 1e-4;
        -(w(t + h) - 2.0 * w(t) + w(t - h)) / (h * h) / w(t)
    }

    #[test]
    fn flat_seed() {
        let p = seeded_profile(&["0"], 10.0).unwrap();
        assert_eq!(p.evaluate(3.0)[(0, 0)], 0.0);
        let (a, ap) = p.oracle_a(2.5).unwrap();
        assert_eq!((a[(0, 0)], ap[(0, 0)]), (2.5, 1.0));
    }

    #[test]
    fn hyperbolic_seed_through_removable_singularity() {
        let p = seeded_profile(&["log(sinh(t)/t)"], 10.0).unwrap();
        for &t in &[0.0, 1e-3, 5e-3, 0.02, 0.5, 3.0, 9.0] {
            let k = p.evaluate(t)[(0, 0)];
            assert!((k + 1.0).abs() < 1e-7, "K({t}) = {k}");
        }
        let (a, ap) = p.oracle_a(2.0).unwrap();
        assert!((a[(0, 0)] - 2.0_f64.sinh()).abs() < 1e-12);
        assert!((ap[(0, 0)] - 2.0_f64.cosh()).abs() < 1e-12);
    }

    #[test]
    fn sign_changing_seed_matches_finite_differences() {
        let src = "0.3*sin(t)*tanh(t)^2";
        let p = seeded_profile(&[src], 10.0).unwrap();
        let phi = Expr::parse(src).unwrap();
        let (mut pos, mut neg) = (false, false);
        for i in 1..=1000 {
            let t = i as f64 * 0.01;
            let k = p.evaluate(t)[(0, 0)];
            let oracle = fd_curvature(&phi, t);
            assert!((k - oracle).abs() < 1e-5 * (1.0 + oracle.abs()), "t = {t}");
            pos |= k > 0.0;
            neg |= k < 0.0;
            let (a, _) = p.oracle_a(t).unwrap();
            assert!(a[(0, 0)] > 0.0);
        }
        assert!(pos && neg);
        // even extension and odd oracle
        assert_eq!(p.evaluate(-2.0), p.evaluate(2.0));
        assert_eq!(p.oracle_a(-2.0).unwrap().0, -p.oracle_a(2.0).unwrap().0);
    }

    #[test]
    fn origin_limit_is_minus_three_phi_second() {
        // φ = t^2/2 ⇒ K(0) = -3 φ''(0) = -3
        let p = seeded_profile(&["0.5*t^2"], 5.0).unwrap();
        assert!((p.evaluate(0.0)[(0, 0)] + 3.0).abs() < 1e-14);
        assert!((p.evaluate(1e-9)[(0, 0)] + 3.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_seeds() {
        assert!(seeded_profile(&["t"], 5.0).is_err());
        assert!(seeded_profile(&["1 + t^2"], 5.0).is_err());
        assert!(seeded_profile(&["log(t)"], 5.0).is_err());
        assert!(seeded_profile(&["0"], -1.0).is_err());
    }

    #[test]
    fn random_profiles_change_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..=4 {
            let p = random_seeded_profile(&mut rng, Dimension::new(n).unwrap(), 20.0).unwrap();
            assert!(p.seeded().unwrap().changes_sign(10.0, 1e-2));
            assert!(p.k_lower() > 0.0);
        }
    }

    #[test]
    fn even_extension_can_carry_conjugate_pairs() {
        // w = t exp(-4t²) is positive on rays, but K(0) = 24 focuses the
        // even solution before the curvature turns negative
        let focusing = seeded_profile(&["-4*t^2"], 5.0).unwrap();
        assert!(!conjugate_free_on_line(&focusing, 5.0, 1e-3).unwrap());
        let mild = seeded_profile(&["log(cosh(0.5*t))"], 20.0).unwrap();
        assert!(conjugate_free_on_line(&mild, 20.0, 1e-3).unwrap());
    }
}
