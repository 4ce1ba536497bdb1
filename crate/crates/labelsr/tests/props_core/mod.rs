//! Reference implementations ("oracles") shared by the randomized
//! invariant target and the shipping-gate target. Each is written
//! independently of the library code it checks: brute force over clever.

/// O(n·m) Kolmogorov-Smirnov statistic: the empirical CDF gap evaluated
/// at every sample value.
pub fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut d = 0.0f64;
    for &v in a.iter().chain(b) {
        let fa = a.iter().filter(|&&x| x <= v).count() as f64 / a.len() as f64;
        let fb = b.iter().filter(|&&x| x <= v).count() as f64 / b.len() as f64;
        d = d.max((fa - fb).abs());
    }
    d
}

/// Sliding median by explicit window gathering: mirror indexing at the
/// edges (edge element not repeated), sort, take the middle element.
pub fn median_oracle(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len() as isize;
    let half = (window as isize) / 2;
    (0..n)
        .map(|t| {
            let mut w: Vec<f64> = (t - half..=t + half)
                .map(|mut i| {
                    if n == 1 {
                        return values[0];
                    }
                    while i < 0 || i >= n {
                        i = if i < 0 { -i } else { 2 * (n - 1) - i };
                    }
                    values[i as usize]
                })
                .collect();
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            w[window / 2]
        })
        .collect()
}
