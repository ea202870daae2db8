//! Revised simplex for `min c^T x, A x = b, x >= 0` with implicitly defined
//! sparse columns, and the bounded-Lipschitz program built on it.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("problem is infeasible (phase one residual {residual})")]
    Infeasible { residual: f64 },
    #[error("objective is unbounded below")]
    Unbounded,
    #[error("no convergence after {pivots} pivots")]
    IterationLimit { pivots: usize },
    #[error("basis matrix became singular")]
    Singular,
}

/// At most three nonzeros per column.
#[derive(Debug, Clone, Copy, Default)]
pub struct Column {
    len: usize,
    entries: [(usize, f64); 3],
}

impl Column {
    pub fn push(&mut self, row: usize, value: f64) {
        self.entries[self.len] = (row, value);
        self.len += 1;
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries[..self.len]
    }
}

/// Standard-form problem whose columns are generated on demand.
pub trait ColumnSource {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn cost(&self, j: usize) -> f64;
    fn column(&self, j: usize) -> Column;
    fn rhs(&self) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub struct SimplexSolution {
    pub objective: f64,
    /// Values of the basic structural variables, `(column, value)`.
    pub basic: Vec<(usize, f64)>,
    /// Simplex multipliers `y = c_B B^{-1}`, one per row.
    pub duals: Vec<f64>,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-11;
const PRICE_TOL: f64 = 1e-10;
const REFACTOR_EVERY: usize = 100;
const DEGENERATE_STREAK: usize = 50;

struct Tableau<'a, S: ColumnSource> {
    src: &'a S,
    m: usize,
    n: usize,
    /// Rows whose sign was flipped so the right-hand side is nonnegative.
    sign: Vec<f64>,
    b: Vec<f64>,
    /// Basis as column indices; `n + r` is the artificial of row `r`.
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    binv: Vec<f64>,
    beta: Vec<f64>,
    pivots: usize,
}

impl<'a, S: ColumnSource> Tableau<'a, S> {
    fn new(src: &'a S) -> Self {
        let m = src.rows();
        let n = src.cols();
        let mut b = src.rhs();
        let sign: Vec<f64> = b.iter().map(|&x| if x < 0.0 { -1.0 } else { 1.0 }).collect();
        for (x, s) in b.iter_mut().zip(&sign) {
            *x *= s;
        }
        let mut binv = vec![0.0; m * m];
        for r in 0..m {
            binv[r * m + r] = 1.0;
        }
        let beta = b.clone();
        let mut in_basis = vec![false; n + m];
        for r in 0..m {
            in_basis[n + r] = true;
        }
        Self { src, m, n, sign, b, basis: (n..n + m).collect(), in_basis, binv, beta, pivots: 0 }
    }

    fn column(&self, j: usize) -> Column {
        if j >= self.n {
            let mut c = Column::default();
            c.push(j - self.n, 1.0);
            return c;
        }
        let mut c = self.src.column(j);
        for e in &mut c.entries[..c.len] {
            e.1 *= self.sign[e.0];
        }
        c
    }

    fn cost(&self, j: usize, phase_one: bool) -> f64 {
        match (phase_one, j >= self.n) {
            (true, true) => 1.0,
            (true, false) => 0.0,
            (false, true) => 0.0,
            (false, false) => self.src.cost(j),
        }
    }

    fn multipliers(&self, phase_one: bool) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (r, &j) in self.basis.iter().enumerate() {
            let c = self.cost(j, phase_one);
            if c != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for (yi, bi) in y.iter_mut().zip(row) {
                    *yi += c * bi;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64], phase_one: bool) -> f64 {
        let col = self.column(j);
        self.cost(j, phase_one) - col.entries().iter().map(|&(r, a)| y[r] * a).sum::<f64>()
    }

    fn direction(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let col = self.column(j);
        let mut alpha = vec![0.0; m];
        for (r, a) in alpha.iter_mut().enumerate() {
            let row = &self.binv[r * m..(r + 1) * m];
            *a = col.entries().iter().map(|&(k, v)| row[k] * v).sum();
        }
        alpha
    }

    fn pivot(&mut self, leave: usize, enter: usize, alpha: &[f64]) {
        let m = self.m;
        let p = alpha[leave];
        let theta = self.beta[leave] / p;
        for r in 0..m {
            if r != leave {
                self.beta[r] -= theta * alpha[r];
                if self.beta[r] < 0.0 && self.beta[r] > -1e-13 {
                    self.beta[r] = 0.0;
                }
            }
        }
        self.beta[leave] = theta;
        let (head, rest) = self.binv.split_at_mut(leave * m);
        let (prow, tail) = rest.split_at_mut(m);
        for v in prow.iter_mut() {
            *v /= p;
        }
        for (r, row) in head.chunks_exact_mut(m).enumerate() {
            let f = alpha[r];
            if f != 0.0 {
                row.iter_mut().zip(prow.iter()).for_each(|(x, q)| *x -= f * q);
            }
        }
        for (k, row) in tail.chunks_exact_mut(m).enumerate() {
            let f = alpha[leave + 1 + k];
            if f != 0.0 {
                row.iter_mut().zip(prow.iter()).for_each(|(x, q)| *x -= f * q);
            }
        }
        self.in_basis[self.basis[leave]] = false;
        self.in_basis[enter] = true;
        self.basis[leave] = enter;
        self.pivots += 1;
        if self.pivots % REFACTOR_EVERY == 0 {
            // on failure keep the updated inverse; the next refactor retries
            let _ = self.refactor();
        }
    }

    /// Rebuild `B^{-1}` by Gauss-Jordan with partial pivoting.
    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (c, &j) in self.basis.iter().enumerate() {
            for &(r, v) in self.column(j).entries() {
                a[r * m + c] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for r in 0..m {
            inv[r * m + r] = 1.0;
        }
        for c in 0..m {
            let (best, val) = (c..m)
                .map(|r| (r, libm::fabs(a[r * m + c])))
                .fold((c, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if val < 1e-14 {
                return Err(LpError::Singular);
            }
            if best != c {
                for k in 0..m {
                    a.swap(best * m + k, c * m + k);
                    inv.swap(best * m + k, c * m + k);
                }
            }
            let p = a[c * m + c];
            for k in 0..m {
                a[c * m + k] /= p;
                inv[c * m + k] /= p;
            }
            for r in 0..m {
                if r != c {
                    let f = a[r * m + c];
                    if f != 0.0 {
                        for k in 0..m {
                            a[r * m + k] -= f * a[c * m + k];
                            inv[r * m + k] -= f * inv[c * m + k];
                        }
                    }
                }
            }
        }
        // rows of `inv` now correspond to basis positions
        self.binv = inv;
        for r in 0..m {
            let row = &self.binv[r * m..(r + 1) * m];
            self.beta[r] = row.iter().zip(&self.b).map(|(x, y)| x * y).sum::<f64>().max(0.0);
        }
        Ok(())
    }

    fn run(&mut self, phase_one: bool, max_pivots: usize) -> Result<(), LpError> {
        let mut degenerate = 0usize;
        loop {
            if self.pivots >= max_pivots {
                return Err(LpError::IterationLimit { pivots: self.pivots });
            }
            let y = self.multipliers(phase_one);
            let bland = degenerate >= DEGENERATE_STREAK;
            let mut enter = None;
            let mut best = -PRICE_TOL;
            // artificials may leave but never re-enter
            for j in 0..self.n {
                if self.in_basis[j] {
                    continue;
                }
                let d = self.reduced_cost(j, &y, phase_one);
                if d < best {
                    best = d;
                    enter = Some(j);
                    if bland {
                        break;
                    }
                }
            }
            let Some(q) = enter else { return Ok(()) };
            let alpha = self.direction(q);
            let mut leave: Option<usize> = None;
            let mut ratio = f64::INFINITY;
            for r in 0..self.m {
                if !phase_one && self.basis[r] >= self.n && libm::fabs(alpha[r]) > PIVOT_TOL {
                    // a zero-level artificial must not move
                    leave = Some(r);
                    ratio = 0.0;
                    break;
                }
                if alpha[r] > PIVOT_TOL {
                    let t = self.beta[r] / alpha[r];
                    let better = match leave {
                        None => true,
                        Some(l) if bland => t < ratio - 1e-14 || (t <= ratio + 1e-14 && self.basis[r] < self.basis[l]),
                        Some(l) => t < ratio - 1e-14 || (t <= ratio + 1e-14 && alpha[r] > alpha[l]),
                    };
                    if better {
                        ratio = t;
                        leave = Some(r);
                    }
                }
            }
            let Some(l) = leave else { return Err(LpError::Unbounded) };
            if ratio <= 1e-14 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(l, q, &alpha);
        }
    }

    /// Swap zero-level artificials out of the basis where possible.
    fn drive_out_artificials(&mut self) {
        for r in 0..self.m {
            if self.basis[r] < self.n {
                continue;
            }
            let m = self.m;
            let row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
            let candidate = (0..self.n).filter(|&j| !self.in_basis[j]).find(|&j| {
                let v: f64 = self.column(j).entries().iter().map(|&(k, a)| row[k] * a).sum();
                libm::fabs(v) > 1e-9
            });
            if let Some(j) = candidate {
                let alpha = self.direction(j);
                self.pivot(r, j, &alpha);
            }
        }
    }
}

/// Solve `min c^T x` subject to `A x = b`, `x >= 0`.
pub fn solve<S: ColumnSource>(src: &S, max_pivots: usize) -> Result<SimplexSolution, LpError> {
    let mut t = Tableau::new(src);
    t.run(true, max_pivots)?;
    t.refactor()?;
    let residual: f64 = t.basis.iter().zip(&t.beta).filter(|(&j, _)| j >= t.n).map(|(_, &v)| v).sum();
    let scale = 1.0 + t.b.iter().map(|x| libm::fabs(*x)).sum::<f64>();
    if residual > 1e-9 * scale {
        return Err(LpError::Infeasible { residual });
    }
    t.drive_out_artificials();
    t.run(false, max_pivots)?;
    t.refactor()?;
    let y = t.multipliers(false);
    let duals = y.iter().zip(&t.sign).map(|(v, s)| v * s).collect();
    let basic: Vec<(usize, f64)> =
        t.basis.iter().zip(&t.beta).filter(|(&j, _)| j < t.n).map(|(&j, &v)| (j, v)).collect();
    let objective = basic.iter().map(|&(j, v)| src.cost(j) * v).sum();
    Ok(SimplexSolution { objective, basic, duals, pivots: t.pivots })
}

/// Dual of the bounded-Lipschitz program on `n` atoms with signed masses
/// `sigma` and pairwise distances `dist` (row-major `n x n`).
///
/// Primal: maximize `sum sigma_i psi_i` over `0 <= psi_i <= 2a`,
/// `psi_i - psi_j <= L d_ij`, `a + L <= 1`. With `psi = phi + a` this is the
/// supremum of `int phi d(mu - nu)` over `|phi| <= a`, `Lip(phi) <= L`.
///
/// Dual columns, in order: `x_ij` for ordered pairs `i != j`, `z_i`, `w`,
/// then surplus columns for every row. Rows `0..n` belong to the atoms, row
/// `n` to `a` and row `n + 1` to `L`.
pub struct BoundedLipschitzDual<'a> {
    pub sigma: &'a [f64],
    pub dist: &'a [f64],
}

impl BoundedLipschitzDual<'_> {
    fn n(&self) -> usize {
        self.sigma.len()
    }

    fn pairs(&self) -> usize {
        self.n() * (self.n() - 1)
    }

    fn pair(&self, j: usize) -> (usize, usize) {
        let n = self.n();
        let i = j / (n - 1);
        let k = j % (n - 1);
        (i, if k >= i { k + 1 } else { k })
    }

    fn w_col(&self) -> usize {
        self.pairs() + self.n()
    }
}

impl ColumnSource for BoundedLipschitzDual<'_> {
    fn rows(&self) -> usize {
        self.n() + 2
    }

    fn cols(&self) -> usize {
        self.pairs() + self.n() + 1 + self.rows()
    }

    fn cost(&self, j: usize) -> f64 {
        if j == self.w_col() {
            1.0
        } else {
            0.0
        }
    }

    fn column(&self, j: usize) -> Column {
        let n = self.n();
        let mut c = Column::default();
        if j < self.pairs() {
            let (a, b) = self.pair(j);
            c.push(a, 1.0);
            c.push(b, -1.0);
            c.push(n + 1, -self.dist[a * n + b]);
        } else if j < self.pairs() + n {
            c.push(j - self.pairs(), 1.0);
            c.push(n, -2.0);
        } else if j == self.w_col() {
            c.push(n, 1.0);
            c.push(n + 1, 1.0);
        } else {
            c.push(j - self.w_col() - 1, -1.0);
        }
        c
    }

    fn rhs(&self) -> Vec<f64> {
        let mut b = self.sigma.to_vec();
        b.push(0.0);
        b.push(0.0);
        b
    }
}

/// Optimal value and primal certificate of the bounded-Lipschitz program.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedLipschitzSolution {
    pub value: f64,
    /// Optimal test function at the atoms, shifted to `[0, 2a]`.
    pub psi: Vec<f64>,
    pub a: f64,
    pub lip: f64,
    pub pivots: usize,
}

/// `sup { sum sigma_i phi_i : |phi| <= a, Lip(phi) <= L, a + L <= 1 }`.
/// `sigma` must sum to zero.
pub fn bounded_lipschitz(sigma: &[f64], dist: &[f64]) -> Result<BoundedLipschitzSolution, LpError> {
    let n = sigma.len();
    if n < 2 || sigma.iter().all(|&s| s == 0.0) {
        return Ok(BoundedLipschitzSolution { value: 0.0, psi: vec![0.0; n], a: 0.0, lip: 0.0, pivots: 0 });
    }
    let src = BoundedLipschitzDual { sigma, dist };
    let sol = solve(&src, 200 * (n + 2) + 10_000)?;
    let psi = sol.duals[..n].to_vec();
    Ok(BoundedLipschitzSolution {
        value: sol.objective,
        psi,
        a: sol.duals[n],
        lip: sol.duals[n + 1],
        pivots: sol.pivots,
    })
}
