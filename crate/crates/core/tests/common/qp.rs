//! Dense interior-point reference for box- and equality-constrained QPs,
//! `min ½ αᵀQα + pᵀα  s.t.  yᵀα = 0, 0 ≤ α ≤ C`, by a log-barrier method
//! with equality-constrained Newton steps.

use nalgebra::{DMatrix, DVector};
use panelwatch::svm::Kernel;

pub struct DenseQp {
    pub q: DMatrix<f64>,
    pub p: DVector<f64>,
    pub y: DVector<f64>,
    pub c: f64,
}

impl DenseQp {
    /// `Q_ij = y_i y_j K(x_π(i), x_π(j))` in full double precision.
    pub fn from_points(kernel: Kernel, points: &[Vec<f64>], p: &[f64], y: &[i8], c: f64, point: &[usize]) -> Self {
        let l = p.len();
        let q = DMatrix::from_fn(l, l, |i, j| {
            f64::from(y[i]) * f64::from(y[j]) * kernel.eval(&points[point[i]], &points[point[j]])
        });
        DenseQp { q, p: DVector::from_column_slice(p), y: DVector::from_iterator(l, y.iter().map(|&v| f64::from(v))), c }
    }

    pub fn objective(&self, a: &DVector<f64>) -> f64 {
        0.5 * a.dot(&(&self.q * a)) + self.p.dot(a)
    }

    pub fn gradient(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.q * a + &self.p
    }

    /// `max_{I_up} −y∇ − min_{I_low} −y∇`, the quantity a pairwise solver
    /// drives below its tolerance.
    pub fn kkt_violation(&self, a: &DVector<f64>) -> f64 {
        let g = self.gradient(a);
        let (mut up, mut low) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..a.len() {
            let v = -self.y[i] * g[i];
            let (at_lo, at_hi) = (a[i] <= 0.0, a[i] >= self.c);
            let in_up = if self.y[i] > 0.0 { !at_hi } else { !at_lo };
            let in_low = if self.y[i] > 0.0 { !at_lo } else { !at_hi };
            if in_up {
                up = up.max(v);
            }
            if in_low {
                low = low.min(v);
            }
        }
        up - low
    }

    fn interior_start(&self) -> DVector<f64> {
        let pos = self.y.iter().filter(|v| **v > 0.0).count() as f64;
        let neg = self.y.len() as f64 - pos;
        let base = self.c / 2.0;
        let (ap, an) = if pos >= neg { (base * neg / pos, base) } else { (base, base * pos / neg) };
        DVector::from_iterator(self.y.len(), self.y.iter().map(|v| if *v > 0.0 { ap } else { an }))
    }

    /// Returns `(α, objective)` with duality gap below `gap`.
    pub fn solve(&self, gap: f64) -> (DVector<f64>, f64) {
        let l = self.p.len();
        let mut a = self.interior_start();
        let mut t = 1.0;
        let phi = |a: &DVector<f64>, t: f64| -> f64 {
            let mut v = t * self.objective(a);
            for &x in a.iter() {
                if x <= 0.0 || x >= self.c {
                    return f64::INFINITY;
                }
                v -= x.ln() + (self.c - x).ln();
            }
            v
        };
        loop {
            for _ in 0..200 {
                let g = self.gradient(&a) * t
                    + DVector::from_iterator(l, a.iter().map(|&x| -1.0 / x + 1.0 / (self.c - x)));
                let mut kkt = DMatrix::zeros(l + 1, l + 1);
                kkt.view_mut((0, 0), (l, l)).copy_from(&(&self.q * t));
                for i in 0..l {
                    kkt[(i, i)] += 1.0 / (a[i] * a[i]) + 1.0 / ((self.c - a[i]) * (self.c - a[i]));
                    kkt[(i, l)] = self.y[i];
                    kkt[(l, i)] = self.y[i];
                }
                let mut rhs = DVector::zeros(l + 1);
                rhs.rows_mut(0, l).copy_from(&(-&g));
                let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
                let step = sol.rows(0, l).into_owned();
                let decrement = -g.dot(&step);
                if decrement / 2.0 < 1e-14 {
                    break;
                }
                let f0 = phi(&a, t);
                let mut s = 1.0;
                loop {
                    let cand = &a + &step * s;
                    if phi(&cand, t) <= f0 - 0.25 * s * decrement {
                        a = cand;
                        break;
                    }
                    s *= 0.5;
                    if s < 1e-16 {
                        break;
                    }
                }
            }
            if 2.0 * l as f64 / t < gap {
                break;
            }
            t *= 8.0;
        }
        let obj = self.objective(&a);
        (a, obj)
    }
}
