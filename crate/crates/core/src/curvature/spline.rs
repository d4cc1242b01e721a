use crate::error::{GeoError, Result};
use crate::linalg::{self, Mat};

/// Matrix samples `K(t_i)` with natural cubic spline interpolation applied
/// entrywise. Inputs are symmetrized on construction.
#[derive(Debug, Clone)]
pub struct SampledCurve {
    times: Vec<f64>,
    values: Vec<Mat>,
    /// Second derivatives of the spline at the knots.
    second: Vec<Mat>,
    max_asymmetry: f64,
}

impl SampledCurve {
    pub fn new(times: Vec<f64>, values: Vec<Mat>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(GeoError::InvalidInput("times and samples differ in length".into()));
        }
        if times.len() < 4 {
            return Err(GeoError::InvalidInput("need at least 4 samples".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GeoError::InvalidInput("sample times must be strictly increasing".into()));
        }
        let m = values[0].nrows();
        if values.iter().any(|v| v.nrows() != m || v.ncols() != m) {
            return Err(GeoError::InvalidInput("samples must be square with a common size".into()));
        }
        let mut max_asymmetry = 0.0_f64;
        let values: Vec<Mat> = values
            .into_iter()
            .map(|v| {
                let scale = 1.0 + linalg::frobenius(&v);
                max_asymmetry = max_asymmetry.max((&v - v.transpose()).amax() / scale);
                linalg::symmetrize(&v)
            })
            .collect();
        if values.iter().any(|v| !linalg::is_finite(v)) {
            return Err(GeoError::InvalidInput("samples contain non-finite entries".into()));
        }
        let second = natural_second_derivatives(&times, &values);
        Ok(SampledCurve { times, values, second, max_asymmetry })
    }

    pub fn block_size(&self) -> usize {
        self.values[0].nrows()
    }

    pub fn t_min(&self) -> f64 {
        self.times[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn samples(&self) -> &[Mat] {
        &self.values
    }

    /// Largest relative asymmetry seen in the raw input.
    pub fn max_asymmetry(&self) -> f64 {
        self.max_asymmetry
    }

    /// Spline value; clamps to the end samples outside the data range.
    pub fn evaluate(&self, t: f64) -> Mat {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1].clone();
        }
        let i = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => return self.values[i].clone(),
            Err(i) => i - 1,
        };
        let h = self.times[i + 1] - self.times[i];
        let a = (self.times[i + 1] - t) / h;
        let b = 1.0 - a;
        let c = (a * a * a - a) * h * h / 6.0;
        let d = (b * b * b - b) * h * h / 6.0;
        &self.values[i] * a + &self.values[i + 1] * b + &self.second[i] * c + &self.second[i + 1] * d
    }

    pub(crate) fn sample_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for v in &self.values {
            let eigs = linalg::sym_eigenvalues(v);
            lo = lo.min(eigs[0]);
            hi = hi.max(eigs.iter().fold(0.0_f64, |a, x| a.max(x.abs())));
        }
        ((-lo).max(0.0).sqrt(), hi)
    }
}

/// Thomas algorithm for the natural spline system, with matrix right-hand
/// sides.
fn natural_second_derivatives(t: &[f64], y: &[Mat]) -> Vec<Mat> {
    let n = t.len();
    let shape = (y[0].nrows(), y[0].ncols());
    let zero = || Mat::zeros(shape.0, shape.1);
    let mut second = vec![zero(); n];
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![zero(); n];
    for i in 1..n - 1 {
        let h0 = t[i] - t[i - 1];
        let h1 = t[i + 1] - t[i];
        let lower = h0 / 6.0;
        let diag = (h0 + h1) / 3.0;
        let upper = h1 / 6.0;
        let rhs = (&y[i + 1] - &y[i]) / h1 - (&y[i] - &y[i - 1]) / h0;
        let denom = diag - lower * c_prime[i - 1];
        c_prime[i] = upper / denom;
        d_prime[i] = (rhs - &d_prime[i - 1] * lower) / denom;
    }
    for i in (1..n - 1).rev() {
        second[i] = &d_prime[i] - &second[i + 1] * c_prime[i];
    }
    second
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn reproduces_smooth_function() {
        let times: Vec<f64> = (0..=200).map(|i| -1.0 + i as f64 * 0.01).collect();
        let values = times.iter().map(|&t| scalar(t.sin())).collect();
        let curve = SampledCurve::new(times, values).unwrap();
        for &t in &[-0.503, -0.1234, 0.0, 0.33333, 0.777] {
            let v = curve.evaluate(t)[(0, 0)];
            assert!((v - t.sin()).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn symmetrizes_and_records_asymmetry() {
        let times = vec![0.0, 1.0, 2.0, 3.0];
        let m = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.3, 2.0]);
        let curve = SampledCurve::new(times, vec![m.clone(); 4]).unwrap();
        let e = curve.evaluate(1.5);
        assert_eq!(e[(0, 1)], e[(1, 0)]);
        assert!(curve.max_asymmetry() > 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SampledCurve::new(vec![0.0, 1.0], vec![scalar(0.0); 2]).is_err());
        assert!(SampledCurve::new(vec![0.0, 1.0, 1.0, 2.0], vec![scalar(0.0); 4]).is_err());
        assert!(SampledCurve::new(vec![0.0, 1.0, 2.0, 3.0], vec![scalar(f64::NAN); 4]).is_err());
    }
}
