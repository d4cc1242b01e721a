//! The matrix Jacobi equation `X'' + K(t) X = 0` along a geodesic.
//!
//! Integration is classical fixed-step RK4 on the first-order system
//! `(X, X')' = (X', -K X)`. Trajectories keep every grid state, and dense
//! output between grid points uses cubic Hermite interpolation: `X` from
//! `(X, X')` and `X'` from `(X', X'' = -K X)` at the two ends.

use std::sync::Arc;

use serde::Serialize;

use crate::curvature::CurvatureProfile;
use crate::error::{GeoError, Result};
use crate::linalg::{self, Mat};

pub const METHOD: &str = "rk4-fixed-step";

/// Initial data family of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SeedKind {
    /// `X(0) = 0`, `X'(0) = 1`.
    A,
    /// `X(0) = 1`, `X'(0) = 0`.
    J1,
    /// `X(0) = 0`, `X'(0) = 1`, integrated from the origin without a
    /// Taylor start.
    J2,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobiSeed {
    pub kind: SeedKind,
    pub x0: Mat,
    pub xp0: Mat,
}

impl JacobiSeed {
    pub fn j1(m: usize) -> Self {
        JacobiSeed { kind: SeedKind::J1, x0: Mat::identity(m, m), xp0: Mat::zeros(m, m) }
    }

    pub fn j2(m: usize) -> Self {
        JacobiSeed { kind: SeedKind::J2, x0: Mat::zeros(m, m), xp0: Mat::identity(m, m) }
    }

    pub fn a(m: usize) -> Self {
        JacobiSeed { kind: SeedKind::A, ..Self::j2(m) }
    }

    pub fn custom(x0: Mat, xp0: Mat) -> Self {
        JacobiSeed { kind: SeedKind::Custom, x0, xp0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobiState {
    pub t: f64,
    pub x: Mat,
    pub xp: Mat,
}

/// Sampled solution of the Jacobi equation, stored with increasing `t`
/// regardless of the integration direction.
#[derive(Debug, Clone)]
pub struct JacobiTrajectory {
    profile: CurvatureProfile,
    seed: SeedKind,
    step: f64,
    /// Integration start; `states` are ordered by `t`, not by time of
    /// computation.
    origin: f64,
    states: Arc<Vec<JacobiState>>,
}

fn rk4_step(profile: &CurvatureProfile, k0: &Mat, t: f64, h: f64, x: &Mat, xp: &Mat) -> (Mat, Mat, Mat) {
    let k_mid = profile.evaluate(t + 0.5 * h);
    let k_end = profile.evaluate(t + h);

    let a1 = xp.clone();
    let b1 = -(k0 * x);
    let x2 = x + &a1 * (0.5 * h);
    let p2 = xp + &b1 * (0.5 * h);
    let a2 = p2.clone();
    let b2 = -(&k_mid * &x2);
    let x3 = x + &a2 * (0.5 * h);
    let p3 = xp + &b2 * (0.5 * h);
    let a3 = p3.clone();
    let b3 = -(&k_mid * &x3);
    let x4 = x + &a3 * h;
    let p4 = xp + &b3 * h;
    let a4 = p4;
    let b4 = -(&k_end * &x4);

    let x_new = x + (a1 + (a2 + a3) * 2.0 + a4) * (h / 6.0);
    let xp_new = xp + (b1 + (b2 + b3) * 2.0 + b4) * (h / 6.0);
    (x_new, xp_new, k_end)
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(GeoError::InvalidInput(format!("step must be positive, got {step}")));
    }
    Ok(())
}

/// Integrates from `seed` at `t_start` to `t_end` (backward if
/// `t_end < t_start`).
pub fn integrate(
    profile: &CurvatureProfile,
    seed: &JacobiSeed,
    t_start: f64,
    t_end: f64,
    step: f64,
) -> Result<JacobiTrajectory> {
    check_step(step)?;
    let m = profile.dim().transverse();
    if seed.x0.shape() != (m, m) || seed.xp0.shape() != (m, m) {
        return Err(GeoError::InvalidInput(format!("seed matrices must be {m}x{m}")));
    }
    for t in [t_start, t_end] {
        if !profile.covers(t) {
            let (lo, hi) = profile.covered_range();
            return Err(GeoError::OutOfRange { t, lo, hi });
        }
    }
    let states = run(profile, seed.x0.clone(), seed.xp0.clone(), t_start, t_end, step)?;
    Ok(JacobiTrajectory::assemble(profile.clone(), seed.kind, step, t_start, states))
}

fn run(profile: &CurvatureProfile, x0: Mat, xp0: Mat, t_start: f64, t_end: f64, step: f64) -> Result<Vec<JacobiState>> {
    let span = t_end - t_start;
    let dir = if span < 0.0 { -1.0 } else { 1.0 };
    let count = (span.abs() / step - 1e-9).ceil().max(0.0) as usize;
    let mut states = Vec::with_capacity(count + 1);
    let (mut x, mut xp) = (x0, xp0);
    let mut t = t_start;
    let mut k = profile.evaluate(t);
    states.push(JacobiState { t, x: x.clone(), xp: xp.clone() });
    for i in 1..=count {
        let t_next = if i == count { t_end } else { t_start + dir * i as f64 * step };
        let (xn, xpn, kn) = rk4_step(profile, &k, t, t_next - t, &x, &xp);
        if !linalg::is_finite(&xn) || !linalg::is_finite(&xpn) {
            return Err(GeoError::Overflow { last_valid: t });
        }
        x = xn;
        xp = xpn;
        k = kn;
        t = t_next;
        states.push(JacobiState { t, x: x.clone(), xp: xp.clone() });
    }
    Ok(states)
}

/// The field `A` with `A(0) = 0`, `A'(0) = 1`.
///
/// Integration starts at `t₀ = ±step` from the third-order Taylor data
/// `X(t₀) = t₀ - (t₀³/6) K(0)`, `X'(t₀) = 1 - (t₀²/2) K(0)`; the exact
/// origin state is prepended to the grid. A negative `t_end` gives the
/// field on the negative ray.
pub fn field_a(profile: &CurvatureProfile, t_end: f64, step: f64) -> Result<JacobiTrajectory> {
    check_step(step)?;
    if t_end == 0.0 {
        return Err(GeoError::InvalidInput("field A needs a non-zero end time".into()));
    }
    if !profile.covers(t_end) {
        let (lo, hi) = profile.covered_range();
        return Err(GeoError::OutOfRange { t: t_end, lo, hi });
    }
    let m = profile.dim().transverse();
    let id = Mat::identity(m, m);
    let dir = t_end.signum();
    let t0 = dir * step.min(t_end.abs());
    let k0 = profile.evaluate(0.0);
    let x0 = &id * t0 - &k0 * (t0 * t0 * t0 / 6.0);
    let xp0 = &id - &k0 * (t0 * t0 / 2.0);
    let mut states = vec![JacobiState { t: 0.0, x: Mat::zeros(m, m), xp: id }];
    states.extend(run(profile, x0, xp0, t0, t_end, step)?);
    Ok(JacobiTrajectory::assemble(profile.clone(), SeedKind::A, step, 0.0, states))
}

impl JacobiTrajectory {
    fn assemble(profile: CurvatureProfile, seed: SeedKind, step: f64, origin: f64, mut states: Vec<JacobiState>) -> Self {
        if states.len() > 1 && states[0].t > states[states.len() - 1].t {
            states.reverse();
        }
        JacobiTrajectory { profile, seed, step, origin, states: Arc::new(states) }
    }

    pub fn profile(&self) -> &CurvatureProfile {
        &self.profile
    }

    pub fn seed_kind(&self) -> SeedKind {
        self.seed
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn method(&self) -> &'static str {
        METHOD
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn states(&self) -> &[JacobiState] {
        &self.states
    }

    pub fn grid(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn t_min(&self) -> f64 {
        self.states[0].t
    }

    pub fn t_max(&self) -> f64 {
        self.states[self.states.len() - 1].t
    }

    /// Whether the trajectory was integrated toward increasing `t`.
    pub fn is_forward(&self) -> bool {
        self.t_max() > self.origin || self.states.len() == 1
    }

    pub fn covers(&self, t: f64) -> bool {
        let slack = 1e-12 * (1.0 + t.abs());
        t >= self.t_min() - slack && t <= self.t_max() + slack
    }

    /// Index `i` with `t_i ≤ t ≤ t_{i+1}`.
    fn interval(&self, t: f64) -> Result<usize> {
        if !self.covers(t) {
            return Err(GeoError::OutOfRange { t, lo: self.t_min(), hi: self.t_max() });
        }
        let n = self.states.len();
        if n == 1 {
            return Ok(0);
        }
        let idx = self.states.partition_point(|s| s.t <= t);
        Ok(idx.saturating_sub(1).min(n - 2))
    }

    /// Dense output `(X(t), X'(t))`.
    pub fn at(&self, t: f64) -> Result<(Mat, Mat)> {
        let i = self.interval(t)?;
        if self.states.len() == 1 {
            return Ok((self.states[0].x.clone(), self.states[0].xp.clone()));
        }
        let (s0, s1) = (&self.states[i], &self.states[i + 1]);
        if t == s0.t {
            return Ok((s0.x.clone(), s0.xp.clone()));
        }
        if t == s1.t {
            return Ok((s1.x.clone(), s1.xp.clone()));
        }
        let h = s1.t - s0.t;
        let u = ((t - s0.t) / h).clamp(0.0, 1.0);
        let (h00, h10, h01, h11) = hermite_basis(u);
        let x = &s0.x * h00 + &s0.xp * (h10 * h) + &s1.x * h01 + &s1.xp * (h11 * h);
        let a0 = -(self.profile.evaluate(s0.t) * &s0.x);
        let a1 = -(self.profile.evaluate(s1.t) * &s1.x);
        let xp = &s0.xp * h00 + a0 * (h10 * h) + &s1.xp * h01 + a1 * (h11 * h);
        Ok((x, xp))
    }

    pub fn x_at(&self, t: f64) -> Result<Mat> {
        Ok(self.at(t)?.0)
    }

    /// `det X(t)` by LU with partial pivoting.
    pub fn det_at(&self, t: f64) -> Result<f64> {
        Ok(linalg::det(&self.x_at(t)?))
    }

    /// Right-multiplies every state by a constant matrix; the result is
    /// again a Jacobi solution.
    pub fn times_right(&self, c: &Mat) -> JacobiTrajectory {
        let states = self
            .states
            .iter()
            .map(|s| JacobiState { t: s.t, x: &s.x * c, xp: &s.xp * c })
            .collect();
        JacobiTrajectory {
            profile: self.profile.clone(),
            seed: SeedKind::Custom,
            step: self.step,
            origin: self.origin,
            states: Arc::new(states),
        }
    }

    /// Continues a forward trajectory up to `t_end`.
    pub fn extend_to(&self, t_end: f64) -> Result<JacobiTrajectory> {
        if !self.is_forward() {
            return Err(GeoError::InvalidInput("only forward trajectories can be extended".into()));
        }
        if t_end <= self.t_max() {
            return Ok(self.clone());
        }
        if !self.profile.covers(t_end) {
            let (lo, hi) = self.profile.covered_range();
            return Err(GeoError::OutOfRange { t: t_end, lo, hi });
        }
        let last = &self.states[self.states.len() - 1];
        // keep the grid aligned with multiples of the step from the origin
        let next_node = self.origin + ((last.t - self.origin) / self.step + 1e-9).floor() * self.step;
        let mut states: Vec<JacobiState> = self.states.as_ref().clone();
        if (last.t - next_node).abs() > 1e-9 * self.step {
            // the previous end was a partial step; drop it and restart from the last full node
            states.pop();
        }
        let base = states.pop().expect("non-empty trajectory");
        let tail = run(&self.profile, base.x.clone(), base.xp.clone(), base.t, t_end, self.step)?;
        states.extend(tail);
        Ok(JacobiTrajectory {
            profile: self.profile.clone(),
            seed: self.seed,
            step: self.step,
            origin: self.origin,
            states: Arc::new(states),
        })
    }
}

fn hermite_basis(u: f64) -> (f64, f64, f64, f64) {
    let u2 = u * u;
    let u3 = u2 * u;
    (2.0 * u3 - 3.0 * u2 + 1.0, u3 - 2.0 * u2 + u, -2.0 * u3 + 3.0 * u2, u3 - u2)
}

/// `W(B, C)(t) = B(t)ᵀ C'(t) - B'(t)ᵀ C(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WronskianValue {
    pub value: Mat,
    pub pair: (SeedKind, SeedKind),
    pub t: f64,
}

fn same_profile(a: &CurvatureProfile, b: &CurvatureProfile) -> bool {
    a.same_as(b) || (a.label() == b.label() && a.dim() == b.dim())
}

pub fn wronskian(b: &JacobiTrajectory, c: &JacobiTrajectory, t: f64) -> Result<WronskianValue> {
    if !same_profile(b.profile(), c.profile()) {
        return Err(GeoError::ProfileMismatch);
    }
    let (bx, bp) = b.at(t)?;
    let (cx, cp) = c.at(t)?;
    Ok(WronskianValue { value: bx.transpose() * cp - bp.transpose() * cx, pair: (b.seed_kind(), c.seed_kind()), t })
}

/// Largest `‖W(t) - W(t₀)‖` over the common grid, with `t₀` the first
/// common grid point, together with the scale `sup‖X‖ · sup‖X'‖`.
pub fn wronskian_drift(b: &JacobiTrajectory, c: &JacobiTrajectory) -> Result<(f64, f64)> {
    if !same_profile(b.profile(), c.profile()) {
        return Err(GeoError::ProfileMismatch);
    }
    let lo = b.t_min().max(c.t_min());
    let hi = b.t_max().min(c.t_max());
    let nodes: Vec<&JacobiState> = b.states().iter().filter(|s| s.t >= lo && s.t <= hi).collect();
    let first = wronskian(b, c, nodes[0].t)?.value;
    let mut drift = 0.0_f64;
    let (mut sup_x, mut sup_xp) = (0.0_f64, 0.0_f64);
    for s in nodes {
        let w = wronskian(b, c, s.t)?.value;
        drift = drift.max(linalg::op_norm(&(w - &first)));
        let (cx, cp) = c.at(s.t)?;
        sup_x = sup_x.max(linalg::op_norm(&s.x)).max(linalg::op_norm(&cx));
        sup_xp = sup_xp.max(linalg::op_norm(&s.xp)).max(linalg::op_norm(&cp));
    }
    Ok((drift, sup_x * sup_xp))
}

fn sigma_min(x: &Mat) -> f64 {
    linalg::singular_values(x).first().copied().unwrap_or(0.0)
}

/// First time away from the origin at which `A` loses rank, if any.
///
/// A grid interval is flagged when `det A` changes sign (refined by
/// bisection on `det`), or when the smallest singular value drops below
/// `1e-10·|t|^{n-1}` at a node or at a local minimum refined by
/// golden-section search. The latter catches even-multiplicity conjugate
/// points where the determinant only touches zero.
pub fn first_conjugate_time(a: &JacobiTrajectory) -> Option<f64> {
    let n1 = a.profile().dim().transverse() as i32;
    let threshold = |t: f64| 1e-10 * t.abs().powi(n1);
    let mut nodes: Vec<&JacobiState> = a.states().iter().filter(|s| s.t != a.origin()).collect();
    if !a.is_forward() {
        nodes.reverse();
    }
    if nodes.is_empty() {
        return None;
    }
    let dets: Vec<f64> = nodes.iter().map(|s| linalg::det(&s.x)).collect();
    let sig: Vec<f64> = nodes.iter().map(|s| sigma_min(&s.x)).collect();
    if sig[0] < threshold(nodes[0].t) {
        return Some(nodes[0].t);
    }
    for i in 1..nodes.len() {
        let (t0, t1) = (nodes[i - 1].t, nodes[i].t);
        if dets[i - 1] * dets[i] < 0.0 {
            return Some(bisect_det(a, t0, t1, dets[i - 1]));
        }
        if sig[i] < threshold(t1) {
            return Some(t1);
        }
        if i + 1 < nodes.len() && sig[i] <= sig[i - 1] && sig[i] <= sig[i + 1] {
            let (t_star, s_star) = golden_min(a, t0, nodes[i + 1].t);
            if s_star < threshold(t_star) {
                return Some(t_star);
            }
        }
    }
    None
}

fn bisect_det(a: &JacobiTrajectory, mut lo: f64, mut hi: f64, det_lo: f64) -> f64 {
    let sign_lo = det_lo.signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let d = a.det_at(mid).unwrap_or(0.0);
        if d == 0.0 {
            return mid;
        }
        if d.signum() == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn golden_min(a: &JacobiTrajectory, lo: f64, hi: f64) -> (f64, f64) {
    let f = |t: f64| a.x_at(t).map(|x| sigma_min(&x)).unwrap_or(f64::INFINITY);
    let ratio = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a_, mut b_) = (lo.min(hi), lo.max(hi));
    let mut c = b_ - ratio * (b_ - a_);
    let mut d = a_ + ratio * (b_ - a_);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b_ - a_).abs() <= 1e-15 * (1.0 + b_.abs()) {
            break;
        }
        if fc < fd {
            b_ = d;
            d = c;
            fd = fc;
            c = b_ - ratio * (b_ - a_);
            fc = f(c);
        } else {
            a_ = c;
            c = d;
            fc = fd;
            d = a_ + ratio * (b_ - a_);
            fd = f(d);
        }
    }
    let t = 0.5 * (a_ + b_);
    (t, f(t))
}
