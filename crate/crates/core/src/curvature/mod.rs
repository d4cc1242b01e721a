//! Curvature operators along a unit-speed geodesic.
//!
//! A [`CurvatureProfile`] is the symmetric matrix curve `t ↦ K(t)` acting on
//! the orthogonal complement of the geodesic direction, expressed in a
//! parallel orthonormal frame. It is the only input the Jacobi machinery
//! needs. Three sources are supported:
//!
//! * constant curvature `K(t) = c·1`,
//! * seeded diagonal profiles built from `w(t) = t·exp(φ(t))`, which have an
//!   exact Jacobi solution and never develop conjugate points,
//! * samples, either computed from a coordinate metric by integrating the
//!   geodesic and a parallel frame, or loaded as raw data.
//!
//! Profiles are cheap to clone and immutable once built.

mod metric;
mod seeded;
mod spline;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GeoError, Result};
use crate::linalg::{self, Mat};

pub use metric::{
    integrate_frame, profile_from_metric, CoordinateMetric, DerivativeMode, FrameSample, GeodesicSpec,
    MetricFile, MetricModel, MetricSampling,
};
pub use seeded::{conjugate_free_on_line, random_seed_expressions, random_seeded_profile, seeded_profile, SeededDiagonalProfile};
pub use spline::SampledCurve;

/// Default horizon for analytic profiles.
pub const DEFAULT_HORIZON: f64 = 64.0;

/// Manifold dimension `n ≥ 2`. Jacobi matrices are `(n-1)×(n-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dimension(usize);

impl Dimension {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(GeoError::InvalidInput(format!("dimension must be at least 2, got {n}")));
        }
        Ok(Dimension(n))
    }

    pub fn n(self) -> usize {
        self.0
    }

    /// Size of the transverse block.
    pub fn transverse(self) -> usize {
        self.0 - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    Constant,
    DiagonalSeeded,
    SampledFromMetric,
}

#[derive(Debug)]
enum Source {
    Constant(f64),
    Seeded(SeededDiagonalProfile),
    Sampled(SampledCurve),
}

#[derive(Debug)]
struct ProfileInner {
    dim: Dimension,
    kind: ProfileKind,
    source: Source,
    k_max: f64,
    k_lower: f64,
    horizon: f64,
    label: String,
}

/// Curvature operator curve `K(t)` along one geodesic.
#[derive(Debug, Clone)]
pub struct CurvatureProfile {
    inner: Arc<ProfileInner>,
}

impl CurvatureProfile {
    fn build(dim: Dimension, kind: ProfileKind, source: Source, horizon: f64, label: String) -> Self {
        let (k_lower, k_max) = match &source {
            Source::Constant(c) => ((-c).max(0.0).sqrt(), c.abs()),
            Source::Seeded(s) => s.scan_bounds(horizon, 1e-3),
            Source::Sampled(s) => s.sample_bounds(),
        };
        CurvatureProfile {
            inner: Arc::new(ProfileInner { dim, kind, source, k_max, k_lower, horizon, label }),
        }
    }

    pub(crate) fn from_seeded(seeded: SeededDiagonalProfile, horizon: f64) -> Self {
        let dim = Dimension(seeded.len() + 1);
        let phis: Vec<&str> = seeded.expressions().iter().map(|e| e.source()).collect();
        let label = format!("seeded:n={},horizon={},phi={}", dim.n(), horizon, phis.join(";"));
        Self::build(dim, ProfileKind::DiagonalSeeded, Source::Seeded(seeded), horizon, label)
    }

    /// Wraps sampled curvature data (from a metric or a file).
    pub fn from_samples(dim: Dimension, curve: SampledCurve, label: impl Into<String>) -> Result<Self> {
        if curve.block_size() != dim.transverse() {
            return Err(GeoError::InvalidInput(format!(
                "sample blocks are {}x{}, expected {}x{}",
                curve.block_size(),
                curve.block_size(),
                dim.transverse(),
                dim.transverse()
            )));
        }
        let horizon = curve.t_max();
        Ok(Self::build(dim, ProfileKind::SampledFromMetric, Source::Sampled(curve), horizon, label.into()))
    }

    /// Returns a copy analyzed on a different horizon. Only analytic kinds
    /// can be extended; sampled profiles keep their data range.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(GeoError::InvalidInput(format!("horizon must be positive, got {horizon}")));
        }
        match &self.inner.source {
            Source::Constant(c) => Ok(constant_with_horizon(self.inner.dim, *c, horizon)),
            Source::Seeded(s) => Ok(Self::from_seeded(s.clone(), horizon)),
            Source::Sampled(_) => Err(GeoError::InvalidInput(
                "sampled profiles cannot change their horizon".into(),
            )),
        }
    }

    pub fn dim(&self) -> Dimension {
        self.inner.dim
    }

    pub fn kind(&self) -> ProfileKind {
        self.inner.kind
    }

    /// Supremum of `‖K(t)‖` over the horizon.
    pub fn k_max(&self) -> f64 {
        self.inner.k_max
    }

    /// Smallest `k ≥ 0` with `K(t) ≥ -k²·1` over the horizon.
    pub fn k_lower(&self) -> f64 {
        self.inner.k_lower
    }

    pub fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    /// Time range on which `evaluate` is backed by data.
    pub fn covered_range(&self) -> (f64, f64) {
        match &self.inner.source {
            Source::Sampled(s) => (s.t_min(), s.t_max()),
            _ => (-self.inner.horizon, self.inner.horizon),
        }
    }

    pub fn covers(&self, t: f64) -> bool {
        let (lo, hi) = self.covered_range();
        let slack = 1e-9 * (1.0 + hi.abs().max(lo.abs()));
        t >= lo - slack && t <= hi + slack
    }

    pub fn label(&self) -> &str {
        &self.inner.label
    }

    /// Short stable hash of the profile's spec string.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.inner.label)
    }

    pub fn constant_curvature(&self) -> Option<f64> {
        match self.inner.source {
            Source::Constant(c) => Some(c),
            _ => None,
        }
    }

    pub fn seeded(&self) -> Option<&SeededDiagonalProfile> {
        match &self.inner.source {
            Source::Seeded(s) => Some(s),
            _ => None,
        }
    }

    /// `K(t)`. Constant and seeded kinds are extended evenly to `t < 0`.
    pub fn evaluate(&self, t: f64) -> Mat {
        let m = self.inner.dim.transverse();
        match &self.inner.source {
            Source::Constant(c) => Mat::identity(m, m) * *c,
            Source::Seeded(s) => s.curvature(t),
            Source::Sampled(s) => s.evaluate(t),
        }
    }

    /// Exact `A(t)` (with `A(0)=0`, `A'(0)=1`) and `A'(t)` when known in
    /// closed form.
    pub fn oracle_a(&self, t: f64) -> Option<(Mat, Mat)> {
        let m = self.inner.dim.transverse();
        match &self.inner.source {
            Source::Constant(c) => {
                let (a, ap) = scalar_a(*c, t);
                Some((Mat::identity(m, m) * a, Mat::identity(m, m) * ap))
            }
            Source::Seeded(s) => Some(s.oracle(t)),
            Source::Sampled(_) => None,
        }
    }

    /// Same object (not just equal data).
    pub fn same_as(&self, other: &CurvatureProfile) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Closed-form `(a, a')` for `a'' + c a = 0`, `a(0)=0`, `a'(0)=1`.
pub fn scalar_a(c: f64, t: f64) -> (f64, f64) {
    if c > 0.0 {
        let k = c.sqrt();
        ((k * t).sin() / k, (k * t).cos())
    } else if c < 0.0 {
        let k = (-c).sqrt();
        ((k * t).sinh() / k, (k * t).cosh())
    } else {
        (t, 1.0)
    }
}

pub(crate) fn fingerprint(spec: &str) -> String {
    let digest = Sha256::digest(spec.as_bytes());
    hex::encode(&digest[..8])
}

/// Constant curvature `K(t) = c·1` on the default horizon.
pub fn constant_profile(n: Dimension, c: f64) -> CurvatureProfile {
    constant_with_horizon(n, c, DEFAULT_HORIZON)
}

fn constant_with_horizon(n: Dimension, c: f64, horizon: f64) -> CurvatureProfile {
    let label = if horizon == DEFAULT_HORIZON {
        format!("constant:n={},c={}", n.n(), c)
    } else {
        format!("constant:n={},c={},horizon={}", n.n(), c, horizon)
    };
    CurvatureProfile::build(n, ProfileKind::Constant, Source::Constant(c), horizon, label)
}

/// Curvature bounds found by a grid scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsEstimate {
    pub k_lower: f64,
    pub k_max: f64,
    pub grid_step: f64,
    pub samples: usize,
}

/// Scans `K` on a uniform grid over the covered range.
///
/// `k_max` is the largest spectral norm seen and `k_lower` is
/// `sqrt(max(0, -λ_min))` over the grid.
pub fn estimate_bounds(profile: &CurvatureProfile, grid_step: f64) -> Result<BoundsEstimate> {
    if !(grid_step > 0.0) {
        return Err(GeoError::InvalidInput(format!("grid step must be positive, got {grid_step}")));
    }
    let (lo, hi) = match profile.kind() {
        // even extension: the negative ray repeats the positive one
        ProfileKind::Constant | ProfileKind::DiagonalSeeded => (0.0, profile.horizon()),
        ProfileKind::SampledFromMetric => profile.covered_range(),
    };
    let count = ((hi - lo) / grid_step).ceil() as usize;
    let mut k_max = 0.0_f64;
    let mut min_eig = f64::INFINITY;
    for i in 0..=count {
        let t = (lo + i as f64 * grid_step).min(hi);
        let k = profile.evaluate(t);
        let eigs = linalg::sym_eigenvalues(&k);
        let norm = eigs.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        k_max = k_max.max(norm);
        min_eig = min_eig.min(eigs[0]);
    }
    Ok(BoundsEstimate {
        k_lower: (-min_eig).max(0.0).sqrt(),
        k_max,
        grid_step,
        samples: count + 1,
    })
}

/// Parses a profile specification string:
///
/// * `constant:n=<int>,c=<float>[,horizon=<float>]`
/// * `seeded:n=<int>[,horizon=<float>],phi=<expr>[;<expr>...]`
/// * `metric:<file>`
pub fn parse_profile_spec(spec: &str) -> Result<CurvatureProfile> {
    let spec = spec.trim();
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| GeoError::InvalidInput(format!("profile spec '{spec}' lacks a kind prefix")))?;
    match kind {
        "constant" => {
            let kv = parse_pairs(rest)?;
            let mut n = None;
            let mut c = None;
            let mut horizon = None;
            for (k, v) in kv {
                match k.as_str() {
                    "n" => n = Some(parse_usize(&v)?),
                    "c" => c = Some(parse_f64(&v)?),
                    "horizon" => horizon = Some(parse_f64(&v)?),
                    other => return Err(GeoError::InvalidInput(format!("unknown key '{other}'"))),
                }
            }
            let n = Dimension::new(n.ok_or_else(|| missing("n"))?)?;
            let c = c.ok_or_else(|| missing("c"))?;
            let profile = constant_profile(n, c);
            match horizon {
                Some(h) => profile.with_horizon(h),
                None => Ok(profile),
            }
        }
        "seeded" => {
            let (head, phis) = match rest.find("phi=") {
                Some(i) => (rest[..i].trim_end_matches(','), &rest[i + 4..]),
                None => return Err(missing("phi")),
            };
            let mut n = None;
            let mut horizon = DEFAULT_HORIZON;
            for (k, v) in parse_pairs(head)? {
                match k.as_str() {
                    "n" => n = Some(parse_usize(&v)?),
                    "horizon" => horizon = parse_f64(&v)?,
                    other => return Err(GeoError::InvalidInput(format!("unknown key '{other}'"))),
                }
            }
            let n = Dimension::new(n.ok_or_else(|| missing("n"))?)?;
            let mut sources: Vec<&str> = phis.split(';').map(str::trim).collect();
            if sources.len() == 1 && n.transverse() > 1 {
                sources = vec![sources[0]; n.transverse()];
            }
            if sources.len() != n.transverse() {
                return Err(GeoError::InvalidInput(format!(
                    "expected {} phi expressions for n={}, got {}",
                    n.transverse(),
                    n.n(),
                    sources.len()
                )));
            }
            seeded_profile(&sources, horizon)
        }
        "metric" => {
            let path = Path::new(rest.trim());
            let text = std::fs::read_to_string(path)?;
            let file: MetricFile = serde_json::from_str(&text)
                .map_err(|e| GeoError::InvalidInput(format!("metric file {}: {e}", path.display())))?;
            file.into_profile(&format!("metric:{}", text.trim()))
        }
        other => Err(GeoError::InvalidInput(format!("unknown profile kind '{other}'"))),
    }
}

fn missing(key: &str) -> GeoError {
    GeoError::InvalidInput(format!("missing key '{key}'"))
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            item.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| GeoError::InvalidInput(format!("expected key=value, got '{item}'")))
        })
        .collect()
}

fn parse_f64(v: &str) -> Result<f64> {
    v.parse().map_err(|_| GeoError::InvalidInput(format!("bad number '{v}'")))
}

fn parse_usize(v: &str) -> Result<usize> {
    v.parse().map_err(|_| GeoError::InvalidInput(format!("bad integer '{v}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_examples() {
        let p = constant_profile(Dimension::new(2).unwrap(), 0.0);
        assert_eq!(p.evaluate(3.0), Mat::zeros(1, 1));
        assert_eq!((p.k_lower(), p.k_max()), (0.0, 0.0));

        let p = constant_profile(Dimension::new(3).unwrap(), -1.0);
        assert_eq!(p.evaluate(0.7), -Mat::identity(2, 2));
        assert_eq!(p.k_lower(), 1.0);

        let p = constant_profile(Dimension::new(2).unwrap(), 1.0);
        assert_eq!(p.evaluate(1.0)[(0, 0)], 1.0);
        assert_eq!(p.k_lower(), 0.0);
    }

    #[test]
    fn dimension_rejects_one() {
        assert!(Dimension::new(1).is_err());
        assert_eq!(Dimension::new(4).unwrap().transverse(), 3);
    }

    #[test]
    fn bounds_for_constants() {
        let p = constant_profile(Dimension::new(3).unwrap(), -4.0);
        let b = estimate_bounds(&p, 0.5).unwrap();
        assert_eq!((b.k_lower, b.k_max), (2.0, 4.0));
        let p = constant_profile(Dimension::new(3).unwrap(), 0.0);
        let b = estimate_bounds(&p, 0.5).unwrap();
        assert_eq!((b.k_lower, b.k_max), (0.0, 0.0));
        assert!(estimate_bounds(&p, 0.0).is_err());
    }

    #[test]
    fn parse_profile_strings() {
        let p = parse_profile_spec("constant:n=3,c=-1").unwrap();
        assert_eq!(p.constant_curvature(), Some(-1.0));
        assert_eq!(p.dim().n(), 3);
        let p = parse_profile_spec("constant:n=2,c=0,horizon=12").unwrap();
        assert_eq!(p.horizon(), 12.0);
        let p = parse_profile_spec("seeded:n=3,horizon=10,phi=0.1*t^2*tanh(t)").unwrap();
        assert_eq!(p.dim().transverse(), 2);
        assert_eq!(p.horizon(), 10.0);
        let p = parse_profile_spec("seeded:n=3,phi=0;0.2*sin(t)*tanh(t)^2").unwrap();
        assert_eq!(p.kind(), ProfileKind::DiagonalSeeded);
        assert!(parse_profile_spec("seeded:n=4,phi=0;0").is_err());
        assert!(parse_profile_spec("constant:n=3").is_err());
        assert!(parse_profile_spec("constant:n=3,c=1,q=2").is_err());
        assert!(parse_profile_spec("wobbly:n=3").is_err());
        assert!(parse_profile_spec("seeded:n=2,phi=t").is_err());
    }

    #[test]
    fn fingerprints_are_stable() {
        let a = parse_profile_spec("constant:n=3,c=-1").unwrap();
        let b = parse_profile_spec("constant:n=3,c=-1").unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
        assert!(!a.same_as(&b));
        assert!(a.same_as(&a.clone()));
    }
}
