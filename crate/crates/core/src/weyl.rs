//! Eigenvalue counting on rectangular flat tori.
//!
//! The Laplace spectrum of `ℝⁿ / (L₁ℤ × … × Lₙℤ)` is
//! `μ = Σ (2π mᵢ / Lᵢ)²` over integer vectors `m`, so `N(λ) = #{μ ≤ λ²}` is
//! a lattice-point count in an ellipsoid. The first `n - 1` coordinates are
//! enumerated, the last one is counted in closed form.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GeoError, Result};
use crate::expr::Expr;

/// Default cap on the number of enumerated lattice columns.
pub const DEFAULT_CAP: u128 = 1_000_000_000;

/// Relative slack on `λ²` so that exact ties such as `3² + 4² = 5²` are
/// counted despite rounding in `(2π/L)²`.
pub const GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatTorusModel {
    lengths: Vec<f64>,
}

impl FlatTorusModel {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(GeoError::InvalidInput("a torus needs at least one side length".into()));
        }
        if let Some(l) = lengths.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(GeoError::InvalidInput(format!("side lengths must be positive, got {l}")));
        }
        Ok(FlatTorusModel { lengths })
    }

    /// `n` equal sides of length `length`.
    pub fn square(n: usize, length: f64) -> Result<Self> {
        Self::new(vec![length; n])
    }

    /// `L=<expr>[,<expr>...]`, e.g. `L=2*pi,2*pi`.
    pub fn parse(spec: &str) -> Result<Self> {
        let body = spec
            .trim()
            .strip_prefix("L=")
            .ok_or_else(|| GeoError::InvalidInput(format!("torus must look like L=<len>[,<len>...], got '{spec}'")))?;
        let lengths = body
            .split(',')
            .map(|s| Expr::parse(s).map(|e| e.eval(0.0)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(lengths)
    }

    pub fn n(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// `(2π/Lᵢ)²`.
    fn weights(&self) -> Vec<f64> {
        self.lengths.iter().map(|l| (std::f64::consts::TAU / l).powi(2)).collect()
    }

    /// Eigenvalue for the lattice vector `m`.
    pub fn eigenvalue(&self, m: &[i64]) -> f64 {
        self.weights().iter().zip(m).map(|(w, &k)| w * (k as f64).powi(2)).sum()
    }

    /// `N(λ)` scaled by 2 on every side maps to `N(2λ)` here.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.lengths.iter().map(|l| l * factor).collect())
    }
}

/// Largest `m ≥ 0` with `w m² ≤ budget`, or `None` if `budget < 0`.
fn axis_radius(w: f64, budget: f64) -> Option<i64> {
    if budget < 0.0 {
        return None;
    }
    let mut m = (budget / w).sqrt().floor() as i64;
    while w * ((m + 1) as f64).powi(2) <= budget {
        m += 1;
    }
    while m > 0 && w * (m as f64).powi(2) > budget {
        m -= 1;
    }
    Some(m)
}

fn count_recursive(weights: &[f64], budget: f64) -> u64 {
    let (w, rest) = weights.split_first().expect("non-empty");
    let Some(radius) = axis_radius(*w, budget) else { return 0 };
    if rest.is_empty() {
        return 2 * radius as u64 + 1;
    }
    let mut total = count_recursive(rest, budget);
    for m in 1..=radius {
        total += 2 * count_recursive(rest, budget - w * (m as f64).powi(2));
    }
    total
}

/// Number of enumerated columns, `Π_{i<n} (2⌈λLᵢ/2π⌉ + 1)`.
fn enumeration_size(model: &FlatTorusModel, lambda: f64) -> u128 {
    model.lengths[..model.n() - 1]
        .iter()
        .map(|l| 2 * (lambda * l / std::f64::consts::TAU).ceil() as u128 + 1)
        .product()
}

pub fn count_eigenvalues(model: &FlatTorusModel, lambda: f64) -> Result<u64> {
    count_eigenvalues_with_cap(model, lambda, DEFAULT_CAP)
}

/// `#{μ ≤ λ²}` counted with multiplicity; ties on the boundary are included.
pub fn count_eigenvalues_with_cap(model: &FlatTorusModel, lambda: f64, cap: u128) -> Result<u64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(GeoError::InvalidInput(format!("λ must be finite and nonnegative, got {lambda}")));
    }
    let points = enumeration_size(model, lambda);
    if points > cap {
        return Err(GeoError::EnumerationCap { points, cap });
    }
    let l2 = lambda * lambda;
    Ok(count_recursive(&model.weights(), l2 + GUARD * l2.max(1.0)))
}

/// Unit-ball volume `ω_n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => std::f64::consts::TAU / n as f64 * unit_ball_volume(n - 2),
    }
}

/// `ω_n vol(M) λⁿ / (2π)ⁿ`.
pub fn weyl_leading(model: &FlatTorusModel, lambda: f64) -> f64 {
    let n = model.n();
    let scaled_volume: f64 = model.lengths.iter().map(|l| l / std::f64::consts::TAU).product();
    unit_ball_volume(n) * scaled_volume * lambda.powi(n as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountResult {
    pub lambda_grid: Vec<f64>,
    pub counts: Vec<u64>,
    pub leading: Vec<f64>,
    pub remainder: Vec<f64>,
    /// `|remainder| / (λ^{n-1} / log λ)` where `λ > e`.
    pub ratio: Vec<Option<f64>>,
}

impl CountResult {
    pub fn sup_ratio(&self) -> Option<f64> {
        self.ratio.iter().flatten().copied().reduce(f64::max)
    }
}

pub fn remainder_diagnostic(model: &FlatTorusModel, lambda_grid: &[f64]) -> Result<CountResult> {
    remainder_diagnostic_with_cap(model, lambda_grid, DEFAULT_CAP)
}

/// Counts every grid point concurrently; the output follows the grid order.
pub fn remainder_diagnostic_with_cap(model: &FlatTorusModel, lambda_grid: &[f64], cap: u128) -> Result<CountResult> {
    let counts = lambda_grid
        .par_iter()
        .map(|&l| count_eigenvalues_with_cap(model, l, cap))
        .collect::<Result<Vec<_>>>()?;
    let n = model.n() as i32;
    let leading: Vec<f64> = lambda_grid.iter().map(|&l| weyl_leading(model, l)).collect();
    let remainder: Vec<f64> = counts.iter().zip(&leading).map(|(&c, l)| c as f64 - l).collect();
    let ratio = lambda_grid
        .iter()
        .zip(&remainder)
        .map(|(&l, r)| (l > std::f64::consts::E).then(|| r.abs() / (l.powi(n - 1) / l.ln())))
        .collect();
    Ok(CountResult { lambda_grid: lambda_grid.to_vec(), counts, leading, remainder, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{PI, TAU};

    fn brute_force(model: &FlatTorusModel, lambda: f64) -> u64 {
        let r = (lambda * model.lengths().iter().fold(0.0_f64, |a, b| a.max(*b)) / TAU).ceil() as i64 + 1;
        let n = model.n();
        let mut count = 0;
        let mut m = vec![-r; n];
        loop {
            let mu = model.eigenvalue(&m);
            if mu <= lambda * lambda * (1.0 + 1e-12) {
                count += 1;
            }
            let mut i = 0;
            while i < n {
                m[i] += 1;
                if m[i] <= r {
                    break;
                }
                m[i] = -r;
                i += 1;
            }
            if i == n {
                return count;
            }
        }
    }

    #[test]
    fn count_examples() {
        let square = FlatTorusModel::square(2, TAU).unwrap();
        assert_eq!(count_eigenvalues(&square, 5.0).unwrap(), 81);
        assert_eq!(count_eigenvalues(&square, 0.0).unwrap(), 1);
        let circle = FlatTorusModel::square(1, TAU).unwrap();
        assert_eq!(count_eigenvalues(&circle, 3.0).unwrap(), 7);
        assert!(count_eigenvalues(&square, -1.0).is_err());
    }

    #[test]
    fn leading_examples() {
        let square = FlatTorusModel::square(2, TAU).unwrap();
        assert!((weyl_leading(&square, 5.0) - 25.0 * PI).abs() < 1e-12);
        assert_eq!(weyl_leading(&square, 0.0), 0.0);
        let cube = FlatTorusModel::square(3, TAU).unwrap();
        assert!((weyl_leading(&cube, 2.0) - 4.0 * PI / 3.0 * 8.0).abs() < 1e-12);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn cap_is_enforced() {
        let cube = FlatTorusModel::square(3, TAU).unwrap();
        assert!(matches!(count_eigenvalues_with_cap(&cube, 100.0, 1000), Err(GeoError::EnumerationCap { .. })));
    }

    #[test]
    fn circle_remainder_is_bounded() {
        let circle = FlatTorusModel::square(1, TAU).unwrap();
        let grid: Vec<f64> = (0..=4000).map(|i| i as f64 * 0.25).collect();
        let result = remainder_diagnostic(&circle, &grid).unwrap();
        assert!(result.remainder.iter().all(|r| (-2.0..=1.0).contains(r)));

        // a λ a few ulps below a shell is counted with the shell, so the
        // remainder may exceed 1 by the guard band
        let grid: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.997).collect();
        let result = remainder_diagnostic(&circle, &grid).unwrap();
        for (l, r) in grid.iter().zip(&result.remainder) {
            assert!(*r >= -2.0 && *r <= 1.0 + 2.0 * GUARD * l.max(1.0), "λ = {l}: {r}");
        }
    }

    #[test]
    fn ratio_column_needs_lambda_above_e() {
        let square = FlatTorusModel::square(2, TAU).unwrap();
        let result = remainder_diagnostic(&square, &[2.0]).unwrap();
        assert_eq!(result.counts, vec![13]);
        assert_eq!(result.ratio, vec![None]);
        assert_eq!(result.sup_ratio(), None);
    }

    #[test]
    fn parses_expressions() {
        let t = FlatTorusModel::parse("L=2*pi, 3").unwrap();
        assert_eq!(t.n(), 2);
        assert!((t.lengths()[0] - TAU).abs() < 1e-15);
        assert!(FlatTorusModel::parse("2,3").is_err());
        assert!(FlatTorusModel::parse("L=1,-2").is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force(l1 in 0.5f64..8.0, l2 in 0.5f64..8.0, lambda in 0.0f64..12.0) {
            let model = FlatTorusModel::new(vec![l1, l2]).unwrap();
            prop_assert_eq!(count_eigenvalues(&model, lambda).unwrap(), brute_force(&model, lambda));
        }

        #[test]
        fn doubling_sides_doubles_lambda(l1 in 0.5f64..5.0, l2 in 0.5f64..5.0, l3 in 0.5f64..5.0, lambda in 0.0f64..6.0) {
            let model = FlatTorusModel::new(vec![l1, l2, l3]).unwrap();
            let doubled = model.scaled(2.0).unwrap();
            prop_assert_eq!(count_eigenvalues(&doubled, lambda).unwrap(), count_eigenvalues(&model, 2.0 * lambda).unwrap());
        }

        #[test]
        fn counts_are_monotone(lo in 0.0f64..20.0, step in 0.0f64..5.0) {
            let model = FlatTorusModel::new(vec![TAU, 4.0]).unwrap();
            prop_assert!(count_eigenvalues(&model, lo).unwrap() <= count_eigenvalues(&model, lo + step).unwrap());
        }
    }
}
