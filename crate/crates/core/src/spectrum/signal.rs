//! Small sampled-signal helpers shared by the spectrum and servo code.

/// Median of a slice (mean of the two middle values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Centered moving median; the window shrinks symmetrically at the edges.
pub fn moving_median(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    let mut buf: Vec<f64> = Vec::with_capacity(window);
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            buf.clear();
            buf.extend_from_slice(&values[i - h..=i + h]);
            buf.sort_by(f64::total_cmp);
            buf[h]
        })
        .collect()
}

/// Centered moving average of odd width; the first and last `window / 2`
/// outputs replicate the nearest full-window value.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let half = window / 2;
    if window <= 1 || n <= 2 * half {
        return values.to_vec();
    }
    let mut out = vec![0.0; n];
    let mut acc: f64 = values[..window].iter().sum();
    out[half] = acc / window as f64;
    for i in half + 1..n - half {
        acc += values[i + half] - values[i - half - 1];
        out[i] = acc / window as f64;
    }
    for i in 0..half {
        out[i] = out[half];
        out[n - 1 - i] = out[n - 1 - half];
    }
    out
}

/// Indices of strict interior local maxima whose value exceeds `threshold`.
///
/// Flat tops count once, at their first sample.
pub fn local_maxima(values: &[f64], threshold: f64) -> Vec<usize> {
    let n = values.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] && values[i] > threshold {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Linear interpolation on a strictly increasing grid, clamped at the ends.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let t = (x - x0) / (x1 - x0);
    ys[i - 1] + t * (ys[i] - ys[i - 1])
}
