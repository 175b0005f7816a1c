//! Dense two-phase tableau simplex with Bland's rule.
//!
//! The free variables of [`LinearProgram`] are split as `V = V⁺ − V⁻`,
//! inequality rows get a slack, every row gets an artificial for phase 1.
//! The tableau is periodically rebuilt from the original data through an LU
//! factorisation of the basis so that round-off does not accumulate over
//! long pivot sequences.

use nalgebra::{DMatrix, DVector};

use crate::lp::LinearProgram;

const PIVOT_EPS: f64 = 1e-9;
const COST_EPS: f64 = 1e-10;
const REFACTOR_EVERY: usize = 64;

pub(crate) enum Outcome {
    Optimal { x: DVector<f64>, y: DVector<f64> },
    Infeasible,
    Unbounded,
}

/// Standard-form data `min dᵀz, A z = b, z ≥ 0` with `b ≥ 0`.
struct Standard {
    a: DMatrix<f64>,
    b: DVector<f64>,
    d: DVector<f64>,
    /// Row sign flips applied to make `b ≥ 0`.
    sign: Vec<f64>,
    /// Number of structural (non-artificial) columns.
    n_struct: usize,
}

fn standard_form(lp: &LinearProgram) -> Standard {
    let n = lp.n_vars();
    let p = lp.n_eq();
    let q = lp.n_ineq();
    let m = p + q;
    let n_struct = 2 * n + q;
    let a_full = lp.stacked_a();
    let b_full = lp.stacked_b();
    let mut a = DMatrix::zeros(m, n_struct + m);
    let mut b = DVector::zeros(m);
    let mut sign = vec![1.0; m];
    for i in 0..m {
        let s = if b_full[i] < 0.0 { -1.0 } else { 1.0 };
        sign[i] = s;
        for j in 0..n {
            a[(i, j)] = s * a_full[(i, j)];
            a[(i, n + j)] = -s * a_full[(i, j)];
        }
        if i >= p {
            a[(i, 2 * n + (i - p))] = s;
        }
        a[(i, n_struct + i)] = 1.0;
        b[i] = s * b_full[i];
    }
    let mut d = DVector::zeros(n_struct + m);
    for j in 0..n {
        d[j] = lp.c()[j];
        d[n + j] = -lp.c()[j];
    }
    Standard {
        a,
        b,
        d,
        sign,
        n_struct,
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// Row-major `rows × (cols + 1)`; last column is the rhs.
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, r: usize, k: usize) {
        let w = self.cols + 1;
        let piv = self.t[r * w + k];
        for j in 0..w {
            self.t[r * w + j] /= piv;
        }
        let prow: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * w + k];
            if f != 0.0 {
                let row = &mut self.t[i * w..(i + 1) * w];
                for (x, &pv) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * pv;
                }
                row[k] = 0.0;
            }
        }
        self.basis[r] = k;
    }

    /// Rebuild `B⁻¹A | B⁻¹b` from the original data. Returns false when the
    /// basis matrix is numerically singular.
    fn refactor(&mut self, std: &Standard) -> bool {
        let m = self.rows;
        let bmat = DMatrix::from_fn(m, m, |i, k| std.a[(i, self.basis[k])]);
        let lu = bmat.lu();
        let mut rhs = DMatrix::zeros(m, self.cols + 1);
        rhs.columns_mut(0, self.cols).copy_from(&std.a);
        rhs.column_mut(self.cols).copy_from(&std.b);
        let Some(sol) = lu.solve(&rhs) else {
            return false;
        };
        if sol.iter().any(|x| !x.is_finite()) {
            return false;
        }
        let w = self.cols + 1;
        for i in 0..m {
            for j in 0..w {
                self.t[i * w + j] = sol[(i, j)];
            }
        }
        // Clean up basic columns exactly.
        for (i, &bj) in self.basis.iter().enumerate() {
            for r in 0..m {
                self.t[r * w + bj] = if r == i { 1.0 } else { 0.0 };
            }
        }
        true
    }

    fn reduced_costs(&self, d: &DVector<f64>, allowed: usize) -> Vec<f64> {
        let mut r: Vec<f64> = (0..allowed).map(|j| d[j]).collect();
        for i in 0..self.rows {
            let cb = d[self.basis[i]];
            if cb != 0.0 {
                for (j, rj) in r.iter_mut().enumerate() {
                    *rj -= cb * self.at(i, j);
                }
            }
        }
        r
    }
}

enum PhaseResult {
    Optimal,
    Unbounded,
}

/// Bland's rule iterations restricted to the first `allowed` columns.
fn run_phase(tab: &mut Tableau, std: &Standard, d: &DVector<f64>, allowed: usize) -> PhaseResult {
    let mut since_refactor = 0;
    loop {
        let r = tab.reduced_costs(d, allowed);
        let entering = (0..allowed).find(|&j| r[j] < -COST_EPS && !tab.basis.contains(&j));
        let Some(k) = entering else {
            if since_refactor > 0 && tab.refactor(std) {
                since_refactor = 0;
                continue;
            }
            return PhaseResult::Optimal;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..tab.rows {
            let a = tab.at(i, k);
            if a > PIVOT_EPS {
                let ratio = tab.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        let tol = 1e-12 * (1.0 + lr.abs());
                        if ratio < lr - tol
                            || (ratio <= lr + tol && tab.basis[i] < tab.basis[li])
                        {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let Some((row, _)) = leave else {
            return PhaseResult::Unbounded;
        };
        tab.pivot(row, k);
        since_refactor += 1;
        if since_refactor >= REFACTOR_EVERY && tab.refactor(std) {
            since_refactor = 0;
        }
    }
}

pub(crate) fn solve(lp: &LinearProgram) -> Outcome {
    let std = standard_form(lp);
    let m = std.a.nrows();
    let cols = std.a.ncols();
    let mut t = vec![0.0; m * (cols + 1)];
    for i in 0..m {
        for j in 0..cols {
            t[i * (cols + 1) + j] = std.a[(i, j)];
        }
        t[i * (cols + 1) + cols] = std.b[i];
    }
    let mut tab = Tableau {
        rows: m,
        cols,
        t,
        basis: (std.n_struct..std.n_struct + m).collect(),
    };

    // Phase 1: minimise the sum of artificials.
    let mut d1 = DVector::zeros(cols);
    for j in std.n_struct..cols {
        d1[j] = 1.0;
    }
    run_phase(&mut tab, &std, &d1, cols);
    let infeas: f64 = (0..m)
        .filter(|&i| tab.basis[i] >= std.n_struct)
        .map(|i| tab.rhs(i))
        .sum();
    let scale = 1.0 + std.b.amax();
    if infeas > 1e-8 * scale {
        return Outcome::Infeasible;
    }
    // Drive zero-level artificials out of the basis where possible.
    for i in 0..m {
        if tab.basis[i] >= std.n_struct {
            if let Some(k) = (0..std.n_struct)
                .find(|&j| tab.at(i, j).abs() > PIVOT_EPS && !tab.basis.contains(&j))
            {
                tab.pivot(i, k);
            }
        }
    }

    // Phase 2 over structural columns only; leftover artificials sit on
    // redundant rows at level zero.
    let mut d2 = std.d.clone();
    for j in std.n_struct..cols {
        d2[j] = 0.0;
    }
    if let PhaseResult::Unbounded = run_phase(&mut tab, &std, &d2, std.n_struct) {
        return Outcome::Unbounded;
    }
    tab.refactor(&std);

    let n = lp.n_vars();
    let mut z = DVector::zeros(cols);
    for i in 0..m {
        z[tab.basis[i]] = tab.rhs(i).max(0.0);
    }
    let x = DVector::from_fn(n, |j, _| z[j] - z[n + j]);

    // Duals from Bᵀy = d_B, then undo the row sign flips.
    let bmat = DMatrix::from_fn(m, m, |i, k| std.a[(i, tab.basis[k])]);
    let db = DVector::from_fn(m, |k, _| d2[tab.basis[k]]);
    let y_std = bmat
        .transpose()
        .lu()
        .solve(&db)
        .unwrap_or_else(|| DVector::zeros(m));
    let y = DVector::from_fn(m, |i, _| std.sign[i] * y_std[i]);
    Outcome::Optimal { x, y }
}
