//! Composite Simpson quadrature on arbitrary increasing nodes.
//!
//! Panels are consecutive node triples with possibly unequal spacing. The
//! running integral at the middle node of a panel uses the exact integral of
//! the interpolating parabola over the first half. For an even node count
//! the trailing interval is covered by the second half of the last panel.

use std::ops::{Add, Mul};

/// Weights of `∫_{x0}^{x2}` for the parabola through `(x0, x1, x2)` with
/// `a = x1 - x0`, `b = x2 - x1`.
fn panel_weights(a: f64, b: f64) -> [f64; 3] {
    let s = a + b;
    [s * (2.0 * a - b) / (6.0 * a), s * s * s / (6.0 * a * b), s * (2.0 * b - a) / (6.0 * b)]
}

/// Weights of `∫_{x0}^{x1}` for the same parabola.
fn first_half_weights(a: f64, b: f64) -> [f64; 3] {
    [a * (2.0 * a + 3.0 * b) / (6.0 * (a + b)), a * (a + 3.0 * b) / (6.0 * b), -a * a * a / (6.0 * b * (a + b))]
}

fn combine<T>(f: &[T], w: [f64; 3]) -> T
where
    T: Clone + Add<Output = T> + Mul<f64, Output = T>,
{
    f[0].clone() * w[0] + f[1].clone() * w[1] + f[2].clone() * w[2]
}

/// Running integrals `∫_{t_0}^{t_i} f` for every node.
///
/// Needs at least two nodes; two nodes fall back to the trapezoid rule.
pub fn cumulative_simpson<T>(ts: &[f64], fs: &[T]) -> Vec<T>
where
    T: Clone + Add<Output = T> + Mul<f64, Output = T>,
{
    assert_eq!(ts.len(), fs.len(), "nodes and values differ in length");
    assert!(ts.len() >= 2, "need at least two nodes");
    let n = ts.len();
    let zero = fs[0].clone() * 0.0;
    let mut out = vec![zero; n];
    if n == 2 {
        let h = ts[1] - ts[0];
        out[1] = (fs[0].clone() + fs[1].clone()) * (0.5 * h);
        return out;
    }
    let mut j = 0;
    while j + 2 < n {
        let a = ts[j + 1] - ts[j];
        let b = ts[j + 2] - ts[j + 1];
        let panel = &fs[j..j + 3];
        out[j + 1] = out[j].clone() + combine(panel, first_half_weights(a, b));
        out[j + 2] = out[j].clone() + combine(panel, panel_weights(a, b));
        j += 2;
    }
    if n % 2 == 0 {
        let j = n - 3;
        let a = ts[j + 1] - ts[j];
        let b = ts[j + 2] - ts[j + 1];
        let full = panel_weights(a, b);
        let first = first_half_weights(a, b);
        let second = [full[0] - first[0], full[1] - first[1], full[2] - first[2]];
        out[n - 1] = out[n - 2].clone() + combine(&fs[j..j + 3], second);
    }
    out
}

/// `∫_{t_0}^{t_last} f`.
pub fn simpson<T>(ts: &[f64], fs: &[T]) -> T
where
    T: Clone + Add<Output = T> + Mul<f64, Output = T>,
{
    cumulative_simpson(ts, fs).pop().expect("non-empty")
}
