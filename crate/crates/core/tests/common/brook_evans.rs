//! Markov-chain approximation of the Gaussian CUSUM run length.
//!
//! The one-sided statistic on `[0, h]` is discretized into `n` states of
//! width `w = 2h / (2n − 1)`; state `i` stands for the value `i·w`, state 0
//! for the reflecting boundary. The ARL from the zero state is the first
//! entry of `(I − R)⁻¹ 1`.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

pub const STATES: usize = 200;

/// One-sided ARL of `C⁺ = max(0, C⁺ + x − k)` with `x ~ N(mu, 1)`.
pub fn one_sided_arl(k: f64, h: f64, mu: f64) -> f64 {
    let n = STATES;
    let w = 2.0 * h / (2 * n - 1) as f64;
    let phi = Normal::new(mu, 1.0).unwrap();
    let cdf = |x: f64| phi.cdf(x);
    let mut a = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let from = i as f64 * w;
        a[(i, 0)] -= cdf(k - from + w / 2.0);
        for j in 1..n {
            let to = j as f64 * w;
            a[(i, j)] -= cdf(to - from + k + w / 2.0) - cdf(to - from + k - w / 2.0);
        }
    }
    let arl = a.lu().solve(&DVector::from_element(n, 1.0)).expect("nonsingular chain");
    arl[0]
}

/// Two-sided ARL with symmetric limits `±h`: `1/ARL = 1/ARL⁺ + 1/ARL⁻`.
pub fn two_sided_arl(k: f64, h: f64, mu: f64) -> f64 {
    let up = one_sided_arl(k, h, mu);
    let down = one_sided_arl(k, h, -mu);
    1.0 / (1.0 / up + 1.0 / down)
}

/// Limit `h` giving a two-sided in-control ARL of `target`.
pub fn limit_for(k: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.1, 20.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if two_sided_arl(k, mid, 0.0) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
