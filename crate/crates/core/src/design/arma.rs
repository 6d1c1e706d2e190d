//! ARMA simulation and fitting, and location-scale Student-t fits, used by
//! the parametric arm of the bootstrap comparison.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const MODULE: &str = "bootstrap-design";

/// `x_t − μ = Σ φ_i (x_{t−i} − μ) + e_t + Σ θ_j e_{t−j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arma {
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub mean: f64,
}

impl Arma {
    pub fn new(ar: Vec<f64>, ma: Vec<f64>) -> Self {
        Arma { ar, ma, mean: 0.0 }
    }

    /// Filters `innovations` through the model, starting from zero history.
    pub fn filter(&self, innovations: impl IntoIterator<Item = f64>) -> Vec<f64> {
        let (p, q) = (self.ar.len(), self.ma.len());
        let mut x: Vec<f64> = Vec::new();
        let mut e: Vec<f64> = Vec::new();
        for (t, et) in innovations.into_iter().enumerate() {
            let mut v = et;
            for i in 1..=p.min(t) {
                v += self.ar[i - 1] * x[t - i];
            }
            for j in 1..=q.min(t) {
                v += self.ma[j - 1] * e[t - j];
            }
            x.push(v);
            e.push(et);
        }
        for v in &mut x {
            *v += self.mean;
        }
        x
    }

    /// Simulates `n` values with Gaussian innovations of scale `sigma`,
    /// after discarding `burn_in` warm-up values.
    pub fn simulate<R: Rng + ?Sized>(&self, n: usize, sigma: f64, burn_in: usize, rng: &mut R) -> Vec<f64> {
        let e: Vec<f64> = (0..n + burn_in)
            .map(|_| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        self.filter(e).split_off(burn_in)
    }

    /// One-step-ahead residuals of `x`, starting from zero history.
    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let (p, q) = (self.ar.len(), self.ma.len());
        let mut e = Vec::with_capacity(x.len());
        for t in 0..x.len() {
            let mut v = x[t] - self.mean;
            for i in 1..=p.min(t) {
                v -= self.ar[i - 1] * (x[t - i] - self.mean);
            }
            for j in 1..=q.min(t) {
                v -= self.ma[j - 1] * e[t - j];
            }
            e.push(v);
        }
        e
    }
}

fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n <= m {
        return Err(Error::data(MODULE, format!("{n} equations for {m} ARMA regressors")));
    }
    let a = DMatrix::from_fn(n, m, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(y);
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::non_convergence(MODULE, format!("ARMA least squares failed: {e}")))?;
    Ok(sol.iter().copied().collect())
}

/// True if every root of `1 − Σ c_i z^i` (sign −1) or `1 + Σ c_i z^i`
/// (sign +1) lies outside the unit circle.
fn roots_outside_unit_circle(coefs: &[f64], sign: f64) -> bool {
    let n = coefs.len();
    if n == 0 {
        return true;
    }
    // Companion matrix of z^n − Σ a_i z^{n−i}, whose eigenvalues are the
    // reciprocal roots.
    let a: Vec<f64> = coefs.iter().map(|c| -sign * c).collect();
    let m = DMatrix::from_fn(n, n, |i, j| if i == 0 { a[j] } else if i == j + 1 { 1.0 } else { 0.0 });
    m.complex_eigenvalues().iter().all(|z| z.norm() < 0.999)
}

impl Arma {
    pub fn is_stationary(&self) -> bool {
        roots_outside_unit_circle(&self.ar, -1.0)
    }

    pub fn is_invertible(&self) -> bool {
        roots_outside_unit_circle(&self.ma, 1.0)
    }
}

/// Conditional sum of squares over several series, skipping the first
/// `max(p, q)` residuals of each.
struct Css<'a> {
    series: &'a [Vec<f64>],
    p: usize,
    q: usize,
}

impl Css<'_> {
    fn model(&self, theta: &[f64]) -> Arma {
        Arma { mean: theta[0], ar: theta[1..1 + self.p].to_vec(), ma: theta[1 + self.p..].to_vec() }
    }
}

impl CostFunction for Css<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let m = self.model(theta);
        if !m.is_stationary() || !m.is_invertible() {
            return Ok(f64::INFINITY);
        }
        let skip = self.p.max(self.q);
        Ok(self.series.iter().map(|s| m.residuals(s).iter().skip(skip).map(|e| e * e).sum::<f64>()).sum())
    }
}

fn refine_css(series: &[Vec<f64>], start: &Arma) -> Option<Arma> {
    let (p, q) = (start.ar.len(), start.ma.len());
    let mut x0 = vec![start.mean];
    x0.extend(&start.ar);
    x0.extend(&start.ma);
    // Shrink a non-invertible or explosive starting point into the
    // admissible region.
    let css = Css { series, p, q };
    let mut shrink = 1.0;
    while !css.cost(&x0).ok()?.is_finite() {
        shrink *= 0.8;
        if shrink < 1e-3 {
            x0[1..].iter_mut().for_each(|v| *v = 0.0);
            break;
        }
        x0[1..].iter_mut().for_each(|v| *v *= 0.8);
    }
    let mut simplex = vec![x0.clone()];
    for i in 0..x0.len() {
        let mut v = x0.clone();
        v[i] += if i == 0 { 0.1 } else { 0.05 };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-12).ok()?;
    let res = Executor::new(css, solver).configure(|s| s.max_iters(4000)).run().ok()?;
    let best = res.state().best_param.clone()?;
    let m = Css { series, p, q }.model(&best);
    (m.is_stationary() && m.is_invertible()).then_some(m)
}

/// ARMA(p, q) fit pooled over several series: a Hannan–Rissanen estimate
/// (long autoregression for innovations, then least squares on lagged values
/// and innovations) refined by minimizing the conditional sum of squares
/// over stationary, invertible models.
pub fn fit_arma(series: &[Vec<f64>], p: usize, q: usize) -> Result<Arma> {
    let hr = fit_arma_hannan_rissanen(series, p, q)?;
    refine_css(series, &hr)
        .ok_or_else(|| Error::non_convergence(MODULE, "ARMA conditional least squares did not converge"))
}

/// Hannan–Rissanen estimate of an ARMA(p, q) model pooled over several
/// series: a long autoregression supplies innovation estimates, then the
/// series is regressed on its own lags and the lagged innovations.
pub fn fit_arma_hannan_rissanen(series: &[Vec<f64>], p: usize, q: usize) -> Result<Arma> {
    let n_total: usize = series.iter().map(Vec::len).sum();
    if n_total == 0 {
        return Err(Error::data(MODULE, "no data to fit an ARMA model"));
    }
    let mean = series.iter().flatten().sum::<f64>() / n_total as f64;
    let centered: Vec<Vec<f64>> = series.iter().map(|s| s.iter().map(|v| v - mean).collect()).collect();
    let long = (p + q + 10).max(20);

    let mut rows = Vec::new();
    let mut y = Vec::new();
    for s in &centered {
        for t in long..s.len() {
            rows.push((1..=long).map(|i| s[t - i]).collect::<Vec<f64>>());
            y.push(s[t]);
        }
    }
    let pi = least_squares(&rows, &y)?;
    let innovations: Vec<Vec<f64>> = centered
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|t| if t < long { f64::NAN } else { s[t] - (1..=long).map(|i| pi[i - 1] * s[t - i]).sum::<f64>() })
                .collect()
        })
        .collect();

    rows.clear();
    y.clear();
    let start = long + q.max(p);
    for (s, e) in centered.iter().zip(&innovations) {
        for t in start..s.len() {
            let mut r: Vec<f64> = (1..=p).map(|i| s[t - i]).collect();
            r.extend((1..=q).map(|j| e[t - j]));
            rows.push(r);
            y.push(s[t]);
        }
    }
    let beta = least_squares(&rows, &y)?;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::non_convergence(MODULE, "ARMA fit produced non-finite coefficients"));
    }
    Ok(Arma { ar: beta[..p].to_vec(), ma: beta[p..].to_vec(), mean })
}

/// Location-scale Student-t law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentTFit {
    pub location: f64,
    pub scale: f64,
    pub dof: f64,
}

impl StudentTFit {
    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let nu = self.dof;
        let c = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln() - self.scale.ln();
        x.iter()
            .map(|v| {
                let z = (v - self.location) / self.scale;
                c - (nu + 1.0) / 2.0 * (z * z / nu).ln_1p()
            })
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // `dof` is validated positive at fit time.
        let t = StudentT::new(self.dof).expect("positive degrees of freedom");
        self.location + self.scale * t.sample(rng)
    }

    /// Standard t draw, i.e. a sample of `(X − location) / scale`.
    pub fn sample_standardized<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        StudentT::new(self.dof).expect("positive degrees of freedom").sample(rng)
    }
}

/// Location and scale for fixed degrees of freedom, by the usual EM
/// reweighting iteration.
fn fit_t_fixed_dof(x: &[f64], nu: f64, mut mu: f64, mut s2: f64) -> (f64, f64) {
    for _ in 0..200 {
        let w: Vec<f64> = x.iter().map(|v| (nu + 1.0) / (nu + (v - mu).powi(2) / s2)).collect();
        let sw: f64 = w.iter().sum();
        let mu_new = x.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() / sw;
        let s2_new = (x.iter().zip(&w).map(|(v, w)| w * (v - mu_new).powi(2)).sum::<f64>() / x.len() as f64).max(1e-300);
        let done = (mu_new - mu).abs() <= 1e-10 * (1.0 + mu.abs()) && (s2_new / s2 - 1.0).abs() <= 1e-10;
        mu = mu_new;
        s2 = s2_new;
        if done {
            break;
        }
    }
    (mu, s2.sqrt())
}

/// Maximum-likelihood location-scale Student-t fit. Degrees of freedom are
/// searched on a log scale over [1, 200].
pub fn fit_student_t(x: &[f64]) -> Result<StudentTFit> {
    if x.len() < 3 {
        return Err(Error::data(MODULE, "need at least 3 residuals for a t fit"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::data(MODULE, "residuals are constant; t fit undefined"));
    }
    let profile = |log_nu: f64| {
        let nu = log_nu.exp();
        let (mu, s) = fit_t_fixed_dof(x, nu, mean, var);
        let fit = StudentTFit { location: mu, scale: s, dof: nu };
        (fit.log_likelihood(x), fit)
    };
    // Golden-section search for the profile maximum.
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0f64, 200f64.ln());
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (profile(c).0, profile(d).0);
    while b - a > 1e-4 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = profile(c).0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = profile(d).0;
        }
    }
    Ok(profile(0.5 * (a + b)).1)
}
