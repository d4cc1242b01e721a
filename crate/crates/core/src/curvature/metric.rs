//! Curvature profiles computed from a metric in coordinates.
//!
//! The geodesic and a parallel orthonormal frame are integrated jointly
//! with classical RK4:
//!
//! ```text
//! x' = v,   v'^k = -Γ^k_ij v^i v^j,   e_a'^k = -Γ^k_ij v^i e_a^j
//! ```
//!
//! and `K_ab(t) = g(R(e_a, γ') γ', e_b)` is sampled for the transverse frame
//! vectors, with `R(X,Y)Z = ∇_X∇_Y Z - ∇_Y∇_X Z - ∇_[X,Y] Z`.

use serde::{Deserialize, Serialize};

use super::{CurvatureProfile, Dimension, SampledCurve};
use crate::error::{GeoError, Result};
use crate::linalg::{self, Mat};

const FRAME_DRIFT_LIMIT: f64 = 1e-6;
const METRIC_COND_LIMIT: f64 = 1e12;

/// Closed-form coordinate models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricModel {
    /// `g = 1`.
    Euclidean,
    /// Poincaré ball, `g = 4/(1-|x|²)²·1`, curvature −1.
    PoincareBall,
    /// Stereographic sphere, `g = 4/(1+|x|²)²·1`, curvature +1.
    SphereStereographic,
    /// `R^{n-2} × H²`, the hyperbolic plane in Poincaré disk coordinates
    /// on the last two axes.
    FlatTimesHyperbolicPlane,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    #[default]
    ClosedForm,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateMetric {
    dim: Dimension,
    model: MetricModel,
    derivatives: DerivativeMode,
}

impl CoordinateMetric {
    pub fn new(dim: Dimension, model: MetricModel) -> Result<Self> {
        if model == MetricModel::FlatTimesHyperbolicPlane && dim.n() < 3 {
            return Err(GeoError::InvalidInput("flat × hyperbolic plane needs n ≥ 3".into()));
        }
        Ok(CoordinateMetric { dim, model, derivatives: DerivativeMode::ClosedForm })
    }

    pub fn with_derivatives(mut self, mode: DerivativeMode) -> Self {
        self.derivatives = mode;
        self
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn model(&self) -> MetricModel {
        self.model
    }

    /// First index of the conformally scaled block.
    fn conformal_start(&self) -> usize {
        match self.model {
            MetricModel::Euclidean => self.dim.n(),
            MetricModel::PoincareBall | MetricModel::SphereStereographic => 0,
            MetricModel::FlatTimesHyperbolicPlane => self.dim.n() - 2,
        }
    }

    /// Conformal factor `λ(q)` and its first two derivatives in `q = |x_C|²`.
    fn factor(&self, q: f64) -> (f64, f64, f64) {
        match self.model {
            MetricModel::Euclidean => (1.0, 0.0, 0.0),
            MetricModel::PoincareBall | MetricModel::FlatTimesHyperbolicPlane => {
                let d = 1.0 - q;
                (4.0 / (d * d), 8.0 / (d * d * d), 24.0 / (d * d * d * d))
            }
            MetricModel::SphereStereographic => {
                let d = 1.0 + q;
                (4.0 / (d * d), -8.0 / (d * d * d), 24.0 / (d * d * d * d))
            }
        }
    }

    fn conformal_q(&self, x: &[f64]) -> f64 {
        x[self.conformal_start()..].iter().map(|v| v * v).sum()
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.len() == self.dim.n()
            && x.iter().all(|v| v.is_finite())
            && match self.model {
                MetricModel::PoincareBall | MetricModel::FlatTimesHyperbolicPlane => self.conformal_q(x) < 1.0,
                _ => true,
            }
    }

    pub fn g(&self, x: &[f64]) -> Mat {
        let n = self.dim.n();
        let c0 = self.conformal_start();
        let (lam, _, _) = self.factor(self.conformal_q(x));
        Mat::from_fn(n, n, |i, j| match (i == j, i >= c0) {
            (true, true) => lam,
            (true, false) => 1.0,
            _ => 0.0,
        })
    }

    /// `∂_k g` for each coordinate `k`.
    pub fn dg(&self, x: &[f64]) -> Vec<Mat> {
        match self.derivatives {
            DerivativeMode::ClosedForm => self.dg_exact(x),
            DerivativeMode::FiniteDifference => self.dg_fd(x),
        }
    }

    /// `∂_k ∂_l g`, indexed `[k][l]`.
    pub fn d2g(&self, x: &[f64]) -> Vec<Vec<Mat>> {
        match self.derivatives {
            DerivativeMode::ClosedForm => self.d2g_exact(x),
            DerivativeMode::FiniteDifference => self.d2g_fd(x),
        }
    }

    fn dg_exact(&self, x: &[f64]) -> Vec<Mat> {
        let n = self.dim.n();
        let c0 = self.conformal_start();
        let (_, dl, _) = self.factor(self.conformal_q(x));
        (0..n)
            .map(|k| {
                let mut m = Mat::zeros(n, n);
                if k >= c0 {
                    for i in c0..n {
                        m[(i, i)] = 2.0 * dl * x[k];
                    }
                }
                m
            })
            .collect()
    }

    fn d2g_exact(&self, x: &[f64]) -> Vec<Vec<Mat>> {
        let n = self.dim.n();
        let c0 = self.conformal_start();
        let (_, dl, d2l) = self.factor(self.conformal_q(x));
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|l| {
                        let mut m = Mat::zeros(n, n);
                        if k >= c0 && l >= c0 {
                            let delta = if k == l { 1.0 } else { 0.0 };
                            let v = 4.0 * d2l * x[k] * x[l] + 2.0 * dl * delta;
                            for i in c0..n {
                                m[(i, i)] = v;
                            }
                        }
                        m
                    })
                    .collect()
            })
            .collect()
    }

    fn fd_step(x: &[f64], scale: f64) -> f64 {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        scale * (1.0 + norm)
    }

    fn shifted(x: &[f64], moves: &[(usize, f64)]) -> Vec<f64> {
        let mut y = x.to_vec();
        for &(k, d) in moves {
            y[k] += d;
        }
        y
    }

    /// Central differences with `h = 1e-5 (1 + |x|)`.
    fn dg_fd(&self, x: &[f64]) -> Vec<Mat> {
        let h = Self::fd_step(x, 1e-5);
        (0..self.dim.n())
            .map(|k| (self.g(&Self::shifted(x, &[(k, h)])) - self.g(&Self::shifted(x, &[(k, -h)]))) / (2.0 * h))
            .collect()
    }

    /// Second differences with `h = 1e-4 (1 + |x|)`; the first-derivative
    /// step would leave round-off of order `ε/h²`.
    fn d2g_fd(&self, x: &[f64]) -> Vec<Vec<Mat>> {
        let n = self.dim.n();
        let h = Self::fd_step(x, 1e-4);
        let g0 = self.g(x);
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|l| {
                        if k == l {
                            let p = self.g(&Self::shifted(x, &[(k, h)]));
                            let m = self.g(&Self::shifted(x, &[(k, -h)]));
                            (p - &g0 * 2.0 + m) / (h * h)
                        } else {
                            let pp = self.g(&Self::shifted(x, &[(k, h), (l, h)]));
                            let pm = self.g(&Self::shifted(x, &[(k, h), (l, -h)]));
                            let mp = self.g(&Self::shifted(x, &[(k, -h), (l, h)]));
                            let mm = self.g(&Self::shifted(x, &[(k, -h), (l, -h)]));
                            (pp - pm - mp + mm) / (4.0 * h * h)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// `Γ^k_ij`, returned as one matrix `(i, j)` per upper index `k`.
    pub fn christoffel(&self, x: &[f64]) -> Vec<Mat> {
        let g_inv = linalg::inverse(&self.g(x)).unwrap_or_else(|| Mat::from_element(self.dim.n(), self.dim.n(), f64::NAN));
        christoffel_from(&g_inv, &self.dg(x))
    }

    /// `∂_m Γ^k_ij`, indexed `[m][k]`.
    pub fn christoffel_derivative(&self, x: &[f64]) -> Vec<Vec<Mat>> {
        let n = self.dim.n();
        let g_inv = linalg::inverse(&self.g(x)).unwrap_or_else(|| Mat::from_element(n, n, f64::NAN));
        let dg = self.dg(x);
        let d2g = self.d2g(x);
        (0..n)
            .map(|m| {
                let dginv = -(&g_inv * &dg[m] * &g_inv);
                (0..n)
                    .map(|k| {
                        Mat::from_fn(n, n, |i, j| {
                            let mut acc = 0.0;
                            for l in 0..n {
                                let s = dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)];
                                let ds = d2g[m][i][(j, l)] + d2g[m][j][(i, l)] - d2g[m][l][(i, j)];
                                acc += dginv[(k, l)] * s + g_inv[(k, l)] * ds;
                            }
                            0.5 * acc
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// `R(X, Y) Y` in coordinates.
    pub fn curvature_apply(&self, x: &[f64], xv: &[f64], yv: &[f64]) -> Vec<f64> {
        let n = self.dim.n();
        let gamma = self.christoffel(x);
        let dgamma = self.christoffel_derivative(x);
        let mut out = vec![0.0; n];
        // R^l_kij = ∂_i Γ^l_jk - ∂_j Γ^l_ik + Γ^l_im Γ^m_jk - Γ^l_jm Γ^m_ik
        for (l, out_l) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let xy = xv[i] * yv[j];
                    if xy == 0.0 {
                        continue;
                    }
                    for k in 0..n {
                        let mut r = dgamma[i][l][(j, k)] - dgamma[j][l][(i, k)];
                        for m in 0..n {
                            r += gamma[l][(i, m)] * gamma[m][(j, k)] - gamma[l][(j, m)] * gamma[m][(i, k)];
                        }
                        acc += xy * yv[k] * r;
                    }
                }
            }
            *out_l = acc;
        }
        out
    }
}

fn christoffel_from(g_inv: &Mat, dg: &[Mat]) -> Vec<Mat> {
    let n = g_inv.nrows();
    (0..n)
        .map(|k| {
            Mat::from_fn(n, n, |i, j| {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += g_inv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                }
                0.5 * acc
            })
        })
        .collect()
}

fn inner(g: &Mat, a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += a[i] * g[(i, j)] * b[j];
        }
    }
    acc
}

/// Start point and unit initial direction of a geodesic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSpec {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl GeodesicSpec {
    /// Validates `|‖u‖_g - 1| ≤ 1e-10`.
    pub fn new(metric: &CoordinateMetric, x: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        let spec = GeodesicSpec { x, u };
        spec.check(metric)?;
        let norm = inner(&metric.g(&spec.x), &spec.u, &spec.u).sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(GeoError::InvalidInput(format!("initial direction has g-norm {norm}, expected 1")));
        }
        Ok(spec)
    }

    /// Rescales `u` to unit `g`-length.
    pub fn normalized(metric: &CoordinateMetric, x: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        let spec = GeodesicSpec { x, u };
        spec.check(metric)?;
        let norm = inner(&metric.g(&spec.x), &spec.u, &spec.u).sqrt();
        if !(norm > 0.0) {
            return Err(GeoError::InvalidInput("initial direction is zero".into()));
        }
        let u = spec.u.iter().map(|v| v / norm).collect();
        Self::new(metric, spec.x, u)
    }

    fn check(&self, metric: &CoordinateMetric) -> Result<()> {
        let n = metric.dim().n();
        if self.x.len() != n || self.u.len() != n {
            return Err(GeoError::InvalidInput(format!("geodesic data must have {n} coordinates")));
        }
        if !metric.in_domain(&self.x) {
            return Err(GeoError::InvalidInput(format!("start point {:?} outside the chart", self.x)));
        }
        Ok(())
    }
}

/// Integration grid for [`profile_from_metric`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSampling {
    pub horizon: f64,
    pub step: f64,
}

/// One sample of the geodesic with its parallel frame. The last frame
/// column is the velocity.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub frame: Mat,
    pub drift: f64,
}

struct FrameState {
    x: Vec<f64>,
    v: Vec<f64>,
    frame: Mat,
}

impl FrameState {
    fn axpy(&self, h: f64, d: &FrameState) -> FrameState {
        FrameState {
            x: self.x.iter().zip(&d.x).map(|(a, b)| a + h * b).collect(),
            v: self.v.iter().zip(&d.v).map(|(a, b)| a + h * b).collect(),
            frame: &self.frame + &d.frame * h,
        }
    }
}

fn frame_rhs(metric: &CoordinateMetric, s: &FrameState) -> FrameState {
    let n = s.x.len();
    let gamma = metric.christoffel(&s.x);
    let mut dv = vec![0.0; n];
    let mut dframe = Mat::zeros(n, n);
    for k in 0..n {
        // (Γ^k v)_j = Γ^k_ij v^i
        let gv: Vec<f64> = (0..n).map(|j| (0..n).map(|i| gamma[k][(i, j)] * s.v[i]).sum()).collect();
        dv[k] = -(0..n).map(|j| gv[j] * s.v[j]).sum::<f64>();
        for a in 0..n {
            dframe[(k, a)] = -(0..n).map(|j| gv[j] * s.frame[(j, a)]).sum::<f64>();
        }
    }
    FrameState { x: s.v.clone(), v: dv, frame: dframe }
}

fn rk4_frame(metric: &CoordinateMetric, s: &FrameState, h: f64) -> FrameState {
    let k1 = frame_rhs(metric, s);
    let k2 = frame_rhs(metric, &s.axpy(0.5 * h, &k1));
    let k3 = frame_rhs(metric, &s.axpy(0.5 * h, &k2));
    let k4 = frame_rhs(metric, &s.axpy(h, &k3));
    let mut out = s.axpy(h / 6.0, &k1);
    out = out.axpy(h / 3.0, &k2);
    out = out.axpy(h / 3.0, &k3);
    out.axpy(h / 6.0, &k4)
}

/// Direct `g`-orthonormal basis whose last vector is `u`.
fn initial_frame(metric: &CoordinateMetric, geo: &GeodesicSpec) -> Result<Mat> {
    let n = metric.dim().n();
    let g = metric.g(&geo.x);
    let mut basis: Vec<Vec<f64>> = vec![geo.u.clone()];
    for c in 0..n {
        if basis.len() == n {
            break;
        }
        let mut w: Vec<f64> = (0..n).map(|i| if i == c { 1.0 } else { 0.0 }).collect();
        for b in &basis {
            let p = inner(&g, &w, b);
            for i in 0..n {
                w[i] -= p * b[i];
            }
        }
        let norm = inner(&g, &w, &w).sqrt();
        if norm > 1e-8 {
            basis.push(w.iter().map(|v| v / norm).collect());
        }
    }
    if basis.len() != n {
        return Err(GeoError::InvalidInput("could not complete an orthonormal frame".into()));
    }
    // transverse vectors first, direction last
    basis.rotate_left(1);
    let mut frame = Mat::from_fn(n, n, |i, a| basis[a][i]);
    if linalg::det(&frame) < 0.0 {
        for i in 0..n {
            frame[(i, 0)] = -frame[(i, 0)];
        }
    }
    Ok(frame)
}

fn frame_drift(metric: &CoordinateMetric, s: &FrameState) -> f64 {
    let g = metric.g(&s.x);
    let gram = s.frame.transpose() * g * &s.frame;
    (gram - Mat::identity(s.x.len(), s.x.len())).amax()
}

fn metric_condition(metric: &CoordinateMetric, x: &[f64]) -> f64 {
    let eig = linalg::sym_eigenvalues(&metric.g(x));
    let (lo, hi) = (eig[0], *eig.last().unwrap());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Integrates the geodesic and parallel frame from `t = 0` to `t_end`
/// (backward when `t_end < 0`), sampling every `step`.
pub fn integrate_frame(
    metric: &CoordinateMetric,
    geo: &GeodesicSpec,
    t_end: f64,
    step: f64,
) -> Result<Vec<FrameSample>> {
    if !(step > 0.0) {
        return Err(GeoError::InvalidInput(format!("step must be positive, got {step}")));
    }
    let dir = if t_end < 0.0 { -1.0 } else { 1.0 };
    let count = (t_end.abs() / step - 1e-9).ceil().max(0.0) as usize;
    let mut state = FrameState { x: geo.x.clone(), v: geo.u.clone(), frame: initial_frame(metric, geo)? };
    let mut out = Vec::with_capacity(count + 1);
    let mut t = 0.0;
    for i in 0..=count {
        if i > 0 {
            let t_next = if i == count { t_end } else { dir * i as f64 * step };
            state = rk4_frame(metric, &state, t_next - t);
            t = t_next;
        }
        if !metric.in_domain(&state.x) {
            return Err(GeoError::DegenerateMetric { t, cond: f64::INFINITY });
        }
        let cond = metric_condition(metric, &state.x);
        if cond > METRIC_COND_LIMIT {
            return Err(GeoError::DegenerateMetric { t, cond });
        }
        let drift = frame_drift(metric, &state);
        if drift > FRAME_DRIFT_LIMIT {
            return Err(GeoError::FrameDrift { t, drift });
        }
        out.push(FrameSample { t, x: state.x.clone(), v: state.v.clone(), frame: state.frame.clone(), drift });
    }
    Ok(out)
}

fn transverse_curvature(metric: &CoordinateMetric, sample: &FrameSample) -> Mat {
    let n = sample.x.len();
    let g = metric.g(&sample.x);
    let columns: Vec<Vec<f64>> = (0..n - 1).map(|a| sample.frame.column(a).iter().copied().collect()).collect();
    let images: Vec<Vec<f64>> = columns.iter().map(|e| metric.curvature_apply(&sample.x, e, &sample.v)).collect();
    Mat::from_fn(n - 1, n - 1, |a, b| inner(&g, &images[a], &columns[b]))
}

/// Samples `K(t)` along the geodesic on `[-horizon, horizon]`.
pub fn profile_from_metric(
    metric: &CoordinateMetric,
    geo: &GeodesicSpec,
    horizon: f64,
    step: f64,
) -> Result<CurvatureProfile> {
    if !(horizon > 0.0) {
        return Err(GeoError::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let forward = integrate_frame(metric, geo, horizon, step)?;
    let backward = integrate_frame(metric, geo, -horizon, step)?;
    let mut times = Vec::with_capacity(forward.len() + backward.len());
    let mut values = Vec::with_capacity(forward.len() + backward.len());
    for s in backward.iter().skip(1).rev().chain(forward.iter()) {
        times.push(s.t);
        values.push(transverse_curvature(metric, s));
    }
    let curve = SampledCurve::new(times, values)?;
    let label = format!(
        "metric:{:?}:n={}:x={:?}:u={:?}:horizon={}:step={}",
        metric.model(),
        metric.dim().n(),
        geo.x,
        geo.u,
        horizon,
        step
    );
    CurvatureProfile::from_samples(metric.dim(), curve, label)
}

/// JSON metric description accepted by `metric:<file>` profile strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MetricFile {
    /// A closed-form model and one geodesic in it.
    ClosedForm {
        dim: usize,
        id: MetricModel,
        x: Vec<f64>,
        u: Vec<f64>,
        /// Rescale `u` to unit length instead of rejecting it.
        #[serde(default)]
        normalize: bool,
        horizon: f64,
        step: f64,
        #[serde(default)]
        derivatives: DerivativeMode,
    },
    /// Pre-sampled transverse curvature blocks.
    Samples { dim: usize, times: Vec<f64>, curvature: Vec<Vec<Vec<f64>>> },
}

impl MetricFile {
    /// Replaces the geodesic of a closed-form description.
    pub fn with_geodesic(&self, x: Vec<f64>, u: Vec<f64>) -> Result<MetricFile> {
        match self {
            MetricFile::ClosedForm { dim, id, normalize, horizon, step, derivatives, .. } => Ok(MetricFile::ClosedForm {
                dim: *dim,
                id: *id,
                x,
                u,
                normalize: *normalize,
                horizon: *horizon,
                step: *step,
                derivatives: *derivatives,
            }),
            MetricFile::Samples { .. } => Err(GeoError::InvalidInput("sampled metric files carry no geodesic".into())),
        }
    }

    pub fn into_profile(&self, label: &str) -> Result<CurvatureProfile> {
        match self {
            MetricFile::ClosedForm { dim, id, x, u, normalize, horizon, step, derivatives } => {
                let metric = CoordinateMetric::new(Dimension::new(*dim)?, *id)?.with_derivatives(*derivatives);
                let geo = if *normalize {
                    GeodesicSpec::normalized(&metric, x.clone(), u.clone())?
                } else {
                    GeodesicSpec::new(&metric, x.clone(), u.clone())?
                };
                profile_from_metric(&metric, &geo, *horizon, *step)
            }
            MetricFile::Samples { dim, times, curvature } => {
                let dim = Dimension::new(*dim)?;
                let m = dim.transverse();
                let mut mats = Vec::with_capacity(curvature.len());
                for rows in curvature {
                    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                        return Err(GeoError::InvalidInput(format!("curvature samples must be {m}x{m}")));
                    }
                    mats.push(Mat::from_fn(m, m, |i, j| rows[i][j]));
                }
                let curve = SampledCurve::new(times.clone(), mats)?;
                CurvatureProfile::from_samples(dim, curve, label.to_string())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(n: usize) -> CoordinateMetric {
        CoordinateMetric::new(Dimension::new(n).unwrap(), MetricModel::PoincareBall).unwrap()
    }

    #[test]
    fn fd_christoffel_matches_closed_form() {
        let exact = ball(3);
        let fd = exact.with_derivatives(DerivativeMode::FiniteDifference);
        let x = [0.2, -0.1, 0.3];
        let (a, b) = (exact.christoffel(&x), fd.christoffel(&x));
        for k in 0..3 {
            assert!((&a[k] - &b[k]).amax() < 1e-8, "k = {k}");
        }
        let (da, db) = (exact.christoffel_derivative(&x), fd.christoffel_derivative(&x));
        for m in 0..3 {
            for k in 0..3 {
                assert!((&da[m][k] - &db[m][k]).amax() < 1e-5);
            }
        }
    }

    #[test]
    fn sectional_curvature_signs() {
        let x = [0.1, 0.2];
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        for (model, expected) in [(MetricModel::PoincareBall, -1.0), (MetricModel::SphereStereographic, 1.0)] {
            let m = CoordinateMetric::new(Dimension::new(2).unwrap(), model).unwrap();
            let g = m.g(&x);
            let r = m.curvature_apply(&x, &e1, &e2);
            let sec = inner(&g, &r, &e1) / (g[(0, 0)] * g[(1, 1)]);
            assert!((sec - expected).abs() < 1e-12, "{model:?}: {sec}");
        }
    }

    #[test]
    fn poincare_geodesic_from_origin() {
        let m = ball(2);
        let geo = GeodesicSpec::new(&m, vec![0.0, 0.0], vec![0.5, 0.0]).unwrap();
        let track = integrate_frame(&m, &geo, 4.0, 1e-3).unwrap();
        let last = track.last().unwrap();
        assert!((last.x[0] - (2.0_f64).tanh()).abs() < 1e-10);
        assert!(last.x[1].abs() < 1e-14);
        assert!(track.iter().all(|s| s.drift <= 1e-6));
    }

    #[test]
    fn rejects_non_unit_direction() {
        let m = ball(2);
        assert!(GeodesicSpec::new(&m, vec![0.0, 0.0], vec![1.0, 0.0]).is_err());
        let g = GeodesicSpec::normalized(&m, vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert!((g.u[0] - 0.5).abs() < 1e-15);
        assert!(GeodesicSpec::new(&m, vec![2.0, 0.0], vec![0.5, 0.0]).is_err());
    }

    #[test]
    fn metric_file_parses() {
        let text = r#"{"kind":"closed-form","dim":2,"id":"poincare-ball","x":[0,0],"u":[1,0],"normalize":true,"horizon":1,"step":0.01}"#;
        let f: MetricFile = serde_json::from_str(text).unwrap();
        let p = f.into_profile("t").unwrap();
        assert!((p.evaluate(0.5)[(0, 0)] + 1.0).abs() < 1e-8);
        let bad = r#"{"kind":"closed-form","dim":2,"id":"poincare-ball","x":[0,0],"u":[1,0],"horizon":1,"step":0.01,"extra":1}"#;
        assert!(serde_json::from_str::<MetricFile>(bad).is_err());
        let samples = r#"{"kind":"samples","dim":2,"times":[0,1,2,3],"curvature":[[[-1]],[[-1]],[[-1]],[[-1]]]}"#;
        let f: MetricFile = serde_json::from_str(samples).unwrap();
        assert_eq!(f.into_profile("s").unwrap().evaluate(1.5)[(0, 0)], -1.0);
    }
}
