//! Kernels and the cached kernel-row store used by the solver.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Row-major training points with a bounded LRU cache of kernel rows.
pub(crate) struct KernelRows<'a> {
    kernel: Kernel,
    data: &'a [f64],
    dim: usize,
    n: usize,
    sq_norms: Vec<f64>,
    diag: Vec<f64>,
    slot_of: Vec<u32>,
    rows: Vec<Vec<f32>>,
    owner: Vec<usize>,
    stamp: Vec<u64>,
    /// Whether each cached row holds every entry or only the active ones.
    complete: Vec<bool>,
    /// Points the solver still reads; `None` means all.
    active: Option<Vec<bool>>,
    clock: u64,
    capacity: usize,
}

const NO_SLOT: u32 = u32::MAX;

impl<'a> KernelRows<'a> {
    pub fn new(kernel: Kernel, data: &'a [f64], dim: usize, cache_bytes: usize) -> Self {
        let n = data.len() / dim;
        let sq_norms: Vec<f64> = data.chunks_exact(dim).map(|x| dot(x, x)).collect();
        let diag = data.chunks_exact(dim).map(|x| kernel.eval(x, x)).collect();
        let row_bytes = n.max(1) * std::mem::size_of::<f32>();
        let capacity = (cache_bytes / row_bytes).clamp(2, n.max(2));
        KernelRows {
            kernel,
            data,
            dim,
            n,
            sq_norms,
            diag,
            slot_of: vec![NO_SLOT; n],
            rows: Vec::new(),
            owner: Vec::new(),
            stamp: Vec::new(),
            complete: Vec::new(),
            active: None,
            clock: 0,
            capacity,
        }
    }


    pub fn len(&self) -> usize {
        self.n
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Restricts later row computations to `active` points. Entries of
    /// other points in rows returned by [`row`](Self::row) are then
    /// unspecified until [`reset_active`](Self::reset_active).
    pub fn restrict(&mut self, active: Vec<bool>) {
        self.active = Some(active);
    }

    /// Makes every point active again, dropping partially computed rows.
    pub fn reset_active(&mut self) {
        if self.active.take().is_none() {
            return;
        }
        for slot in 0..self.rows.len() {
            if !self.complete[slot] {
                self.slot_of[self.owner[slot]] = NO_SLOT;
                self.stamp[slot] = 0;
            }
        }
    }

    fn fill(&self, i: usize, out: &mut [f32], only: Option<&[bool]>) {
        let xi = self.point(i);
        let value = |j: usize| match self.kernel {
            Kernel::Linear => dot(xi, self.point(j)),
            Kernel::Rbf { gamma } => {
                let d2 = (self.sq_norms[i] + self.sq_norms[j] - 2.0 * dot(xi, self.point(j))).max(0.0);
                (-gamma * d2).exp()
            }
        };
        match only {
            None => out.iter_mut().enumerate().for_each(|(j, o)| *o = value(j) as f32),
            Some(mask) => {
                for (j, o) in out.iter_mut().enumerate() {
                    if mask[j] {
                        *o = value(j) as f32;
                    }
                }
            }
        }
    }

    /// Kernel row of point `i` with every entry computed.
    pub fn full_row(&mut self, i: usize) -> &[f32] {
        self.row(i);
        let slot = self.slot_of[i] as usize;
        if !self.complete[slot] {
            let mut buf = std::mem::take(&mut self.rows[slot]);
            self.fill(i, &mut buf, None);
            self.rows[slot] = buf;
            self.complete[slot] = true;
        }
        &self.rows[slot]
    }

    /// Kernel row of point `i`.
    pub fn row(&mut self, i: usize) -> &[f32] {
        self.clock += 1;
        let slot = self.slot_of[i];
        if slot != NO_SLOT {
            self.stamp[slot as usize] = self.clock;
            return &self.rows[slot as usize];
        }
        let slot = if self.rows.len() < self.capacity {
            self.rows.push(vec![0.0; self.n]);
            self.owner.push(i);
            self.stamp.push(0);
            self.complete.push(false);
            self.rows.len() - 1
        } else {
            let victim = (0..self.rows.len()).min_by_key(|&s| self.stamp[s]).unwrap_or(0);
            if self.slot_of[self.owner[victim]] == victim as u32 {
                self.slot_of[self.owner[victim]] = NO_SLOT;
            }
            self.owner[victim] = i;
            victim
        };
        let mut buf = std::mem::take(&mut self.rows[slot]);
        self.fill(i, &mut buf, self.active.as_deref());
        self.rows[slot] = buf;
        self.complete[slot] = self.active.is_none();
        self.slot_of[i] = slot as u32;
        self.stamp[slot] = self.clock;
        &self.rows[slot]
    }

    /// Two rows at once; `i != j`.
    pub fn row_pair(&mut self, i: usize, j: usize) -> (&[f32], &[f32]) {
        self.row(i);
        self.row(j);
        let (si, sj) = (self.slot_of[i] as usize, self.slot_of[j] as usize);
        (&self.rows[si], &self.rows[sj])
    }
}
