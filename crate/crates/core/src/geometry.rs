//! Small numerical helpers: polyline distances, finite differences, fits.

use nalgebra::DVector;

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let x = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - a - ab * x).norm()
}

/// Distance from `p` to a polyline (or to a single point).
pub fn point_polyline_distance(p: &DVector<f64>, line: &[DVector<f64>]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [a] => (p - a).norm(),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Symmetric Hausdorff distance between two polylines, measured from the
/// vertices of each to the other polyline.
pub fn hausdorff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let one_way = |x: &[DVector<f64>], y: &[DVector<f64>]| {
        x.iter().map(|p| point_polyline_distance(p, y)).fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

/// Second-order central first derivative on a uniform grid (interior points).
pub fn central_first(values: &[f64], h: f64) -> Vec<f64> {
    values.windows(3).map(|w| (w[2] - w[0]) / (2.0 * h)).collect()
}

/// Second-order central second derivative on a uniform grid (interior points).
pub fn central_second(values: &[f64], h: f64) -> Vec<f64> {
    values.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]) / (h * h)).collect()
}

/// Fourth-order five-point first derivative (points 2..len-2).
pub fn five_point_first(values: &[f64], h: f64) -> Vec<f64> {
    values
        .windows(5)
        .map(|w| (w[0] - 8.0 * w[1] + 8.0 * w[3] - w[4]) / (12.0 * h))
        .collect()
}

/// Eighth-order central first derivative (nine-point stencil).
pub fn nine_point_first(values: &[f64], h: f64) -> Vec<f64> {
    const W: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
    values
        .windows(9)
        .map(|w| W.iter().enumerate().map(|(k, c)| c * (w[5 + k] - w[3 - k])).sum::<f64>() / h)
        .collect()
}

/// Three-point first derivative on a non-uniform grid (interior points).
pub fn nonuniform_first(x: &[f64], y: &[f64]) -> Vec<f64> {
    (1..x.len().saturating_sub(1))
        .map(|i| {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            (-h1 / (h0 * (h0 + h1))) * y[i - 1] + ((h1 - h0) / (h0 * h1)) * y[i] + (h0 / (h1 * (h0 + h1))) * y[i + 1]
        })
        .collect()
}

/// Least-squares line `y = intercept + slope x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Cumulative trapezoid integral of `y(x)` starting from 0.
pub fn cumulative_trapezoid(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        if i > 0 {
            acc += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
        }
        out.push(acc);
    }
    out
}
