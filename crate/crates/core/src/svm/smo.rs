//! Pairwise (SMO) solver for the support-vector dual
//!
//! ```text
//! min ½ αᵀQα + pᵀα   s.t.  yᵀα = 0,  0 ≤ α ≤ C
//! ```
//!
//! with `Q_ij = y_i y_j K(x_{π(i)}, x_{π(j)})` and `y_i = ±1`. Classification
//! uses one variable per point; ε-regression uses two per point, both mapped
//! to the same kernel row by `π`. Working pairs are chosen by the
//! second-order rule of Fan, Chen and Lin (2005), and variables stuck at a
//! bound are shrunk out of the active set as in LIBSVM.

use log::warn;

use super::kernel::{Kernel, KernelRows};

const TAU: f64 = 1e-12;

pub(crate) struct Problem<'k, 'a> {
    pub rows: &'k mut KernelRows<'a>,
    pub p: Vec<f64>,
    pub y: Vec<i8>,
    pub c: f64,
    /// Kernel point of each variable.
    pub point: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Largest violation `m(α) − M(α)` at exit.
    pub kkt_gap: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

/// Working-set state shared by the selection, shrinking and update steps.
struct State<'p> {
    p: &'p [f64],
    y: &'p [i8],
    yf: Vec<f64>,
    point: &'p [usize],
    c: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    /// `Σ_{j at upper bound} C Q_tj`, kept for every variable so gradients of
    /// shrunk variables can be rebuilt.
    g_bar: Vec<f64>,
    active: Vec<usize>,
    /// Whether each variable may increase its `y_t α_t` (`I_up`) or decrease
    /// it (`I_low`).
    up: Vec<bool>,
    low: Vec<bool>,
}

impl State<'_> {
    fn upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.c
    }

    fn lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    fn refresh(&mut self, t: usize) {
        let (at_upper, at_lower) = (self.upper(t), self.lower(t));
        if self.y[t] == 1 {
            (self.up[t], self.low[t]) = (!at_upper, !at_lower);
        } else {
            (self.up[t], self.low[t]) = (!at_lower, !at_upper);
        }
    }

    /// `−y_t ∇_t` if `t` may move up, else `None`.
    #[inline]
    fn up_value(&self, t: usize) -> Option<f64> {
        self.up[t].then(|| -self.yf[t] * self.grad[t])
    }

    /// `y_t ∇_t` if `t` may move down, else `None`.
    #[inline]
    fn low_value(&self, t: usize) -> Option<f64> {
        self.low[t].then(|| self.yf[t] * self.grad[t])
    }

    /// `(m(α), −M(α))` over the active set.
    fn extremes(&self) -> (f64, f64) {
        let (mut g1, mut g2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &t in &self.active {
            if let Some(v) = self.up_value(t) {
                g1 = g1.max(v);
            }
            if let Some(v) = self.low_value(t) {
                g2 = g2.max(v);
            }
        }
        (g1, g2)
    }

    /// Second-order working-set selection. Returns `(i, j, gap)`; `j` is
    /// `None` when no pair makes progress.
    /// `first` is the `(m(α), i)` pair when already known.
    fn select(&self, rows: &mut KernelRows<'_>, qd: &[f64], first: Option<(f64, usize)>) -> (Option<(usize, usize)>, f64) {
        let (gmax, i_sel) = first.unwrap_or_else(|| self.first_index());
        if i_sel == usize::MAX {
            return (None, 0.0);
        }
        let i = i_sel;
        let ki = rows.row(self.point[i]);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for &t in &self.active {
            let Some(v) = self.low_value(t) else { continue };
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let q_it = self.yf[i] * self.yf[t] * f64::from(ki[self.point[t]]);
                let mut a = qd[i] + qd[t] - 2.0 * self.yf[i] * self.yf[t] * q_it;
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -diff * diff / a;
                if obj <= best {
                    best = obj;
                    j_sel = t;
                }
            }
        }
        let gap = gmax + gmax2;
        ((j_sel != usize::MAX).then_some((i, j_sel)), gap)
    }

    fn first_index(&self) -> (f64, usize) {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for &t in &self.active {
            if let Some(v) = self.up_value(t) {
                if v >= gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        (gmax, i_sel)
    }

    fn shrinkable(&self, t: usize, g1: f64, g2: f64) -> bool {
        let g = self.grad[t];
        if self.upper(t) {
            if self.y[t] == 1 { -g > g1 } else { -g > g2 }
        } else if self.lower(t) {
            if self.y[t] == 1 { g > g2 } else { g > g1 }
        } else {
            false
        }
    }

    /// Recomputes the gradient of inactive variables and reactivates them.
    fn unshrink(&mut self, rows: &mut KernelRows<'_>) {
        let l = self.alpha.len();
        if self.active.len() == l {
            return;
        }
        let mut is_active = vec![false; l];
        for &t in &self.active {
            is_active[t] = true;
        }
        let inactive: Vec<usize> = (0..l).filter(|&t| !is_active[t]).collect();
        rows.reset_active();
        for &t in &inactive {
            self.grad[t] = self.g_bar[t] + self.p[t];
        }
        for j in 0..l {
            let a = self.alpha[j];
            if a > 0.0 && a < self.c {
                let kj = rows.row(self.point[j]);
                let s = self.yf[j] * a;
                for &t in &inactive {
                    self.grad[t] += self.yf[t] * s * f64::from(kj[self.point[t]]);
                }
            }
        }
        self.active = (0..l).collect();
    }
}

pub(crate) fn solve(prob: Problem<'_, '_>, settings: SolverSettings) -> Solution {
    let Problem { rows, p, y, c, point } = prob;
    let l = p.len();
    let qd: Vec<f64> = point.iter().map(|&k| rows.diag(k)).collect();
    let mut s = State {
        p: &p,
        y: &y,
        yf: y.iter().map(|&v| f64::from(v)).collect(),
        point: &point,
        c,
        alpha: vec![0.0; l],
        grad: p.clone(),
        g_bar: vec![0.0; l],
        active: (0..l).collect(),
        up: vec![false; l],
        low: vec![false; l],
    };
    for t in 0..l {
        s.refresh(t);
    }
    let period = l.min(1000);
    let mut counter = period + 1;
    let mut unshrunk = false;
    let mut first = None;

    let mut iter = 0;
    let mut gap = f64::INFINITY;
    let mut converged = false;
    while iter < settings.max_iterations {
        counter -= 1;
        if counter == 0 {
            counter = period;
            let (g1, g2) = s.extremes();
            if !unshrunk && g1 + g2 <= 10.0 * settings.tolerance {
                unshrunk = true;
                s.unshrink(rows);
            }
            let (g1, g2) = s.extremes();
            let keep: Vec<usize> = s.active.iter().copied().filter(|&t| !s.shrinkable(t, g1, g2)).collect();
            if keep.len() < s.active.len() {
                let mut mask = vec![false; rows.len()];
                for &t in &keep {
                    mask[point[t]] = true;
                }
                rows.restrict(mask);
            }
            s.active = keep;
            first = None;
        }

        let (mut pair, mut g) = s.select(rows, &qd, first.take());
        if pair.is_none() || g < settings.tolerance {
            if s.active.len() < l {
                s.unshrink(rows);
                (pair, g) = s.select(rows, &qd, None);
                counter = 1;
            }
            if pair.is_none() || g < settings.tolerance {
                gap = g;
                converged = true;
                break;
            }
        }
        gap = g;
        let (i, j) = pair.expect("checked above");
        iter += 1;

        let (ki, kj) = rows.row_pair(point[i], point[j]);
        let (yi, yj) = (s.yf[i], s.yf[j]);
        let q_ij = yi * yj * f64::from(ki[point[j]]);
        let (old_i, old_j) = (s.alpha[i], s.alpha[j]);
        let (was_upper_i, was_upper_j) = (s.upper(i), s.upper(j));
        let alpha = &mut s.alpha;
        let grad = &s.grad;
        if y[i] != y[j] {
            let mut a = qd[i] + qd[j] + 2.0 * q_ij;
            if a <= 0.0 {
                a = TAU;
            }
            let delta = (-grad[i] - grad[j]) / a;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut a = qd[i] + qd[j] - 2.0 * q_ij;
            if a <= 0.0 {
                a = TAU;
            }
            let delta = (grad[i] - grad[j]) / a;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        s.refresh(i);
        s.refresh(j);
        let (di, dj) = (s.alpha[i] - old_i, s.alpha[j] - old_j);
        let (si, sj) = (yi * di, yj * dj);
        let (mut gmax, mut i_next) = (f64::NEG_INFINITY, usize::MAX);
        for &t in &s.active {
            let pt = point[t];
            let g = s.grad[t] + s.yf[t] * (si * f64::from(ki[pt]) + sj * f64::from(kj[pt]));
            s.grad[t] = g;
            if s.up[t] {
                let v = -s.yf[t] * g;
                if v >= gmax {
                    gmax = v;
                    i_next = t;
                }
            }
        }
        first = Some((gmax, i_next));
        for (v, was, yv) in [(i, was_upper_i, yi), (j, was_upper_j, yj)] {
            let now = s.upper(v);
            if now != was {
                let row = rows.full_row(point[v]);
                let w = if now { c * yv } else { -c * yv };
                for t in 0..l {
                    s.g_bar[t] += s.yf[t] * w * f64::from(row[point[t]]);
                }
            }
        }
    }
    if !converged {
        warn!("SMO stopped after {iter} iterations with KKT gap {gap:.3e}");
    }
    s.unshrink(rows);

    // Bias from free variables, or the midpoint of the feasible interval.
    let (mut ub, mut lb, mut sum_free, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..l {
        let yg = s.yf[t] * s.grad[t];
        if s.upper(t) {
            if y[t] == -1 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if s.lower(t) {
            if y[t] == 1 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { 0.5 * (ub + lb) };
    let objective = 0.5 * s.alpha.iter().zip(&s.grad).zip(&p).map(|((a, g), p)| a * (g + p)).sum::<f64>();
    Solution { alpha: s.alpha, rho, objective, iterations: iter, kkt_gap: gap.max(0.0), converged }
}

/// A dual problem over explicit points, for callers outside the trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct DualProblem {
    pub kernel: Kernel,
    /// Row-major points of dimension `dim`.
    pub data: Vec<f64>,
    pub dim: usize,
    pub p: Vec<f64>,
    pub y: Vec<i8>,
    pub c: f64,
    pub point: Vec<usize>,
}

pub fn solve_dual(problem: &DualProblem, settings: SolverSettings) -> Solution {
    let mut rows = KernelRows::new(problem.kernel, &problem.data, problem.dim, 64 << 20);
    let prob = Problem {
        rows: &mut rows,
        p: problem.p.clone(),
        y: problem.y.clone(),
        c: problem.c,
        point: problem.point.clone(),
    };
    solve(prob, settings)
}
