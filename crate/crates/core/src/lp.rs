//! Linear programs in inequality/equality form and the transformations the
//! circuit construction relies on.
//!
//! The problem form is
//!
//! ```text
//!     min  cᵀV
//!     s.t. A_eq V  = b_eq
//!          A_ineq V ≤ b_ineq
//! ```
//!
//! with `V` free. [`canonicalize`] rewrites any such problem into one whose
//! cost and constraint matrices are entrywise non-negative, which is the
//! form a resistor network can realise directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A linear program `min cᵀV s.t. A_eq V = b_eq, A_ineq V ≤ b_ineq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LpFile", into = "LpFile")]
pub struct LinearProgram {
    c: DVector<f64>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    a_ineq: DMatrix<f64>,
    b_ineq: DVector<f64>,
}

/// On-disk JSON layout: row-major nested arrays, empty blocks as `[]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LpFile {
    c: Vec<f64>,
    #[serde(default)]
    a_eq: Vec<Vec<f64>>,
    #[serde(default)]
    b_eq: Vec<f64>,
    #[serde(default)]
    a_ineq: Vec<Vec<f64>>,
    #[serde(default)]
    b_ineq: Vec<f64>,
}

impl TryFrom<LpFile> for LinearProgram {
    type Error = Error;

    fn try_from(f: LpFile) -> Result<Self> {
        let n = f.c.len();
        LinearProgram::new(
            DVector::from_vec(f.c),
            rows_to_matrix(&f.a_eq, n, "a_eq")?,
            DVector::from_vec(f.b_eq),
            rows_to_matrix(&f.a_ineq, n, "a_ineq")?,
            DVector::from_vec(f.b_ineq),
        )
    }
}

impl From<LinearProgram> for LpFile {
    fn from(lp: LinearProgram) -> Self {
        LpFile {
            c: lp.c.iter().copied().collect(),
            a_eq: matrix_to_rows(&lp.a_eq),
            b_eq: lp.b_eq.iter().copied().collect(),
            a_ineq: matrix_to_rows(&lp.a_ineq),
            b_ineq: lp.b_ineq.iter().copied().collect(),
        }
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::Dimension(format!(
                "{what} row {i} has {} entries, expected {n}",
                r.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl LinearProgram {
    pub fn new(
        c: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_ineq: DMatrix<f64>,
        b_ineq: DVector<f64>,
    ) -> Result<Self> {
        let n = c.len();
        // Empty blocks may arrive as 0×0; normalise them to 0×n.
        let a_eq = if a_eq.nrows() == 0 { DMatrix::zeros(0, n) } else { a_eq };
        let a_ineq = if a_ineq.nrows() == 0 { DMatrix::zeros(0, n) } else { a_ineq };
        if a_eq.ncols() != n || a_ineq.ncols() != n {
            return Err(Error::Dimension(format!(
                "constraint matrices have {} / {} columns, cost has {n}",
                a_eq.ncols(),
                a_ineq.ncols()
            )));
        }
        if a_eq.nrows() != b_eq.len() {
            return Err(Error::Dimension(format!(
                "a_eq has {} rows but b_eq has {} entries",
                a_eq.nrows(),
                b_eq.len()
            )));
        }
        if a_ineq.nrows() != b_ineq.len() {
            return Err(Error::Dimension(format!(
                "a_ineq has {} rows but b_ineq has {} entries",
                a_ineq.nrows(),
                b_ineq.len()
            )));
        }
        if a_eq.nrows() + a_ineq.nrows() == 0 {
            return Err(Error::NoConstraints);
        }
        for (name, ok) in [
            ("c", c.iter().all(|x| x.is_finite())),
            ("a_eq", a_eq.iter().all(|x| x.is_finite())),
            ("b_eq", b_eq.iter().all(|x| x.is_finite())),
            ("a_ineq", a_ineq.iter().all(|x| x.is_finite())),
            ("b_ineq", b_ineq.iter().all(|x| x.is_finite())),
        ] {
            if !ok {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(LinearProgram {
            c,
            a_eq,
            b_eq,
            a_ineq,
            b_ineq,
        })
    }

    /// Convenience constructor from row-major slices.
    pub fn from_rows(
        c: &[f64],
        a_eq: &[Vec<f64>],
        b_eq: &[f64],
        a_ineq: &[Vec<f64>],
        b_ineq: &[f64],
    ) -> Result<Self> {
        let n = c.len();
        Self::new(
            DVector::from_column_slice(c),
            rows_to_matrix(a_eq, n, "a_eq")?,
            DVector::from_column_slice(b_eq),
            rows_to_matrix(a_ineq, n, "a_ineq")?,
            DVector::from_column_slice(b_ineq),
        )
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
    pub fn a_eq(&self) -> &DMatrix<f64> {
        &self.a_eq
    }
    pub fn b_eq(&self) -> &DVector<f64> {
        &self.b_eq
    }
    pub fn a_ineq(&self) -> &DMatrix<f64> {
        &self.a_ineq
    }
    pub fn b_ineq(&self) -> &DVector<f64> {
        &self.b_ineq
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }
    pub fn n_eq(&self) -> usize {
        self.a_eq.nrows()
    }
    pub fn n_ineq(&self) -> usize {
        self.a_ineq.nrows()
    }

    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        self.c.dot(v)
    }

    /// Largest violation of any constraint at `v` (0 when feasible).
    pub fn max_violation(&self, v: &DVector<f64>) -> f64 {
        let eq = (&self.a_eq * v - &self.b_eq).amax();
        let ineq = (&self.a_ineq * v - &self.b_ineq)
            .iter()
            .fold(0.0_f64, |m, &x| m.max(x));
        eq.max(ineq)
    }

    /// Stacked constraint matrix `[A_eq; A_ineq]`.
    pub fn stacked_a(&self) -> DMatrix<f64> {
        stack_rows(&self.a_eq, &self.a_ineq)
    }

    pub fn stacked_b(&self) -> DVector<f64> {
        let mut b = DVector::zeros(self.n_eq() + self.n_ineq());
        b.rows_mut(0, self.n_eq()).copy_from(&self.b_eq);
        b.rows_mut(self.n_eq(), self.n_ineq()).copy_from(&self.b_ineq);
        b
    }

    /// True when cost and both constraint matrices are entrywise ≥ 0.
    pub fn is_nonnegative(&self) -> bool {
        self.c.iter().all(|&x| x >= 0.0)
            && self.a_eq.iter().all(|&x| x >= 0.0)
            && self.a_ineq.iter().all(|&x| x >= 0.0)
    }

    /// Same constraints, different cost vector.
    pub fn with_cost(&self, c: DVector<f64>) -> Result<Self> {
        Self::new(
            c,
            self.a_eq.clone(),
            self.b_eq.clone(),
            self.a_ineq.clone(),
            self.b_ineq.clone(),
        )
    }

    /// Same matrices, different right-hand sides.
    pub fn with_rhs(&self, b_eq: DVector<f64>, b_ineq: DVector<f64>) -> Result<Self> {
        Self::new(
            self.c.clone(),
            self.a_eq.clone(),
            b_eq,
            self.a_ineq.clone(),
            b_ineq,
        )
    }

    /// Remove variable `j` by fixing it to `value`. Rows left without any
    /// coefficient are dropped (they must be satisfied by the fixed value).
    /// Returns the reduced problem and the constant added to the objective.
    pub fn fix_variable(&self, j: usize, value: f64) -> Result<(Self, f64)> {
        let n = self.n_vars();
        if j >= n {
            return Err(Error::Dimension(format!("variable {j} out of range {n}")));
        }
        let keep: Vec<usize> = (0..n).filter(|&k| k != j).collect();
        let reduce = |a: &DMatrix<f64>, b: &DVector<f64>, eq: bool| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
            let mut rows = Vec::new();
            let mut rhs = Vec::new();
            for i in 0..a.nrows() {
                let row: Vec<f64> = keep.iter().map(|&k| a[(i, k)]).collect();
                let r = b[i] - a[(i, j)] * value;
                if row.iter().all(|&x| x == 0.0) {
                    let bad = if eq { r.abs() > 1e-12 } else { r < -1e-12 };
                    if bad {
                        return Err(Error::Infeasible);
                    }
                    continue;
                }
                rows.push(row);
                rhs.push(r);
            }
            Ok((rows, rhs))
        };
        let (ae, be) = reduce(&self.a_eq, &self.b_eq, true)?;
        let (ai, bi) = reduce(&self.a_ineq, &self.b_ineq, false)?;
        let c: Vec<f64> = keep.iter().map(|&k| self.c[k]).collect();
        Ok((Self::from_rows(&c, &ae, &be, &ai, &bi)?, self.c[j] * value))
    }
}

pub(crate) fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let n = top.ncols().max(bottom.ncols());
    let mut m = DMatrix::zeros(top.nrows() + bottom.nrows(), n);
    if top.nrows() > 0 {
        m.rows_mut(0, top.nrows()).copy_from(top);
    }
    if bottom.nrows() > 0 {
        m.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    }
    m
}

fn pos_part(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn neg_part(x: f64) -> f64 {
    if x < 0.0 {
        -x
    } else {
        0.0
    }
}

/// A non-negative LP obtained by splitting every variable into a `plus`
/// copy (`V⁺ = V`) and a `minus` copy (`V⁻ = −V`) tied together by the
/// equality row `V⁺ + V⁻ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalLP {
    pub inner: LinearProgram,
    /// `(plus, minus)` column indices of each original variable.
    pub pairing: Vec<(usize, usize)>,
    pub origin_dim: usize,
    /// Index in `inner.a_eq()` of the first pairing row; rows before it are
    /// the original equalities.
    pub pairing_row_start: usize,
}

impl CanonicalLP {
    /// Map canonical variables back to the original ones (`V = V⁺`).
    pub fn recover(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.pairing.len(), self.pairing.iter().map(|&(p, _)| v[p]))
    }

    /// Lift an original point into canonical coordinates.
    pub fn lift(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.inner.n_vars());
        for (k, &(p, m)) in self.pairing.iter().enumerate() {
            v[p] = x[k];
            v[m] = -x[k];
        }
        v
    }

    /// Canonical column index of original variable `j`'s plus copy.
    pub fn plus_index(&self, j: usize) -> usize {
        self.pairing[j].0
    }
}

/// Rewrite `lp` with non-negative coefficients.
///
/// Columns are ordered `[V⁺₁..V⁺ₙ, V⁻₁..V⁻ₙ]`; each original row `aᵀV`
/// becomes `(a⁺)ᵀV⁺ + (a⁻)ᵀV⁻`, and the `n` pairing rows are appended after
/// the original equality rows.
pub fn canonicalize(lp: &LinearProgram) -> Result<CanonicalLP> {
    let n = lp.n_vars();
    for j in 0..n {
        let used = lp.c[j] != 0.0
            || lp.a_eq.column(j).iter().any(|&x| x != 0.0)
            || lp.a_ineq.column(j).iter().any(|&x| x != 0.0);
        if !used {
            return Err(Error::ZeroColumn(j));
        }
    }
    let a = lp.stacked_a();
    for i in 0..a.nrows() {
        if a.row(i).iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroRow(i));
        }
    }

    let split = |m: &DMatrix<f64>| {
        DMatrix::from_fn(m.nrows(), 2 * n, |i, j| {
            if j < n {
                pos_part(m[(i, j)])
            } else {
                neg_part(m[(i, j - n)])
            }
        })
    };
    let c = DVector::from_fn(2 * n, |j, _| {
        if j < n {
            pos_part(lp.c[j])
        } else {
            neg_part(lp.c[j - n])
        }
    });

    let p = lp.n_eq();
    let mut a_eq = DMatrix::zeros(p + n, 2 * n);
    a_eq.rows_mut(0, p).copy_from(&split(&lp.a_eq));
    for j in 0..n {
        a_eq[(p + j, j)] = 1.0;
        a_eq[(p + j, n + j)] = 1.0;
    }
    let mut b_eq = DVector::zeros(p + n);
    b_eq.rows_mut(0, p).copy_from(&lp.b_eq);

    let inner = LinearProgram::new(c, a_eq, b_eq, split(&lp.a_ineq), lp.b_ineq.clone())?;
    Ok(CanonicalLP {
        inner,
        pairing: (0..n).map(|j| (j, n + j)).collect(),
        origin_dim: n,
        pairing_row_start: p,
    })
}

/// Sign restriction of a dual variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DualSign {
    Free,
    NonPositive,
}

/// `max bᵀλ s.t. [A_eqᵀ A_ineqᵀ] λ = c`, inequality multipliers `≤ 0`.
///
/// With this sign convention a KKT multiplier `λ_kkt ≥ 0` of the primal
/// corresponds to `λ = −λ_kkt`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualLP {
    pub objective: DVector<f64>,
    pub constraint: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub signs: Vec<DualSign>,
}

impl DualLP {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// The dual as a minimisation LP (`min −bᵀλ`), for feeding to a solver.
    /// The dual optimum is the negated optimum of the returned problem.
    pub fn as_min_lp(&self) -> Result<LinearProgram> {
        let k = self.n_vars();
        let restricted: Vec<usize> = (0..k)
            .filter(|&i| self.signs[i] == DualSign::NonPositive)
            .collect();
        let mut a_ineq = DMatrix::zeros(restricted.len(), k);
        for (r, &i) in restricted.iter().enumerate() {
            a_ineq[(r, i)] = 1.0;
        }
        LinearProgram::new(
            -&self.objective,
            self.constraint.clone(),
            self.rhs.clone(),
            a_ineq,
            DVector::zeros(restricted.len()),
        )
    }
}

pub fn build_dual(lp: &LinearProgram) -> DualLP {
    let p = lp.n_eq();
    let q = lp.n_ineq();
    let mut signs = vec![DualSign::Free; p];
    signs.extend(std::iter::repeat_n(DualSign::NonPositive, q));
    DualLP {
        objective: lp.stacked_b(),
        constraint: lp.stacked_a().transpose(),
        rhs: lp.c.clone(),
        signs,
    }
}

/// Feasibility problem whose solutions are exactly the optimal primal/dual
/// pairs of an LP.
///
/// Variables are ordered `[V (n), λ (p+q), λ₋ (p+q)]`. Equality rows are
/// the primal equalities, the `n` dual equalities `Aᵀλ = c`, the gap row
/// `cᵀV + b₋ᵀλ + b₊ᵀλ₋ = 0`, and the pairing rows `λ + λ₋ = 0`. Inequality
/// rows are the primal inequalities followed by `λ_ineq ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualSystem {
    pub system: LinearProgram,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub b_plus: DVector<f64>,
    pub b_minus: DVector<f64>,
    /// Row of `system.a_eq()` holding the zero-duality-gap constraint.
    pub gap_row: usize,
    /// Gap row has no nonzero coefficient (`c = 0` and `b = 0`).
    pub degenerate_gap: bool,
}

impl PrimalDualSystem {
    pub fn primal_part(&self, w: &DVector<f64>) -> DVector<f64> {
        w.rows(0, self.n).into_owned()
    }

    pub fn dual_part(&self, w: &DVector<f64>) -> DVector<f64> {
        w.rows(self.n, self.p + self.q).into_owned()
    }
}

pub fn build_primal_dual(lp: &LinearProgram) -> PrimalDualSystem {
    let n = lp.n_vars();
    let p = lp.n_eq();
    let q = lp.n_ineq();
    let k = p + q;
    let nv = n + 2 * k;
    let a = lp.stacked_a();
    let b = lp.stacked_b();
    let b_plus = b.map(pos_part);
    let b_minus = b.map(neg_part);

    let n_eq = p + n + 1 + k;
    let mut a_eq = DMatrix::zeros(n_eq, nv);
    let mut b_eq = DVector::zeros(n_eq);
    // primal equalities
    for i in 0..p {
        for j in 0..n {
            a_eq[(i, j)] = lp.a_eq[(i, j)];
        }
        b_eq[i] = lp.b_eq[i];
    }
    // dual equalities Aᵀλ = c
    for j in 0..n {
        for i in 0..k {
            a_eq[(p + j, n + i)] = a[(i, j)];
        }
        b_eq[p + j] = lp.c[j];
    }
    // zero duality gap
    let gap_row = p + n;
    for j in 0..n {
        a_eq[(gap_row, j)] = lp.c[j];
    }
    for i in 0..k {
        a_eq[(gap_row, n + i)] = b_minus[i];
        a_eq[(gap_row, n + k + i)] = b_plus[i];
    }
    // λ + λ₋ = 0
    for i in 0..k {
        a_eq[(gap_row + 1 + i, n + i)] = 1.0;
        a_eq[(gap_row + 1 + i, n + k + i)] = 1.0;
    }

    let mut a_ineq = DMatrix::zeros(2 * q, nv);
    let mut b_ineq = DVector::zeros(2 * q);
    for i in 0..q {
        for j in 0..n {
            a_ineq[(i, j)] = lp.a_ineq[(i, j)];
        }
        b_ineq[i] = lp.b_ineq[i];
        a_ineq[(q + i, n + p + i)] = 1.0;
    }

    let degenerate_gap = a_eq.row(gap_row).iter().all(|&x| x == 0.0);
    let system = LinearProgram::new(DVector::zeros(nv), a_eq, b_eq, a_ineq, b_ineq)
        .expect("primal-dual system dimensions are consistent by construction");
    PrimalDualSystem {
        system,
        n,
        p,
        q,
        b_plus,
        b_minus,
        gap_row,
        degenerate_gap,
    }
}

/// Max-norm KKT residuals of a primal/dual triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// KKT residuals for `c + A_eqᵀμ + A_ineqᵀλ = 0`, `λ ≥ 0`, feasibility and
/// complementary slackness.
pub fn kkt_residual(
    lp: &LinearProgram,
    v: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<KktResidual> {
    if v.len() != lp.n_vars() || lambda.len() != lp.n_ineq() || mu.len() != lp.n_eq() {
        return Err(Error::Dimension(format!(
            "kkt_residual: got v={}, lambda={}, mu={} for n={}, q={}, p={}",
            v.len(),
            lambda.len(),
            mu.len(),
            lp.n_vars(),
            lp.n_ineq(),
            lp.n_eq()
        )));
    }
    let grad = &lp.c + lp.a_eq.transpose() * mu + lp.a_ineq.transpose() * lambda;
    let slack = &lp.a_ineq * v - &lp.b_ineq;
    let complementarity = slack
        .iter()
        .zip(lambda.iter())
        .fold(0.0_f64, |m, (s, l)| m.max((s * l).abs()));
    Ok(KktResidual {
        stationarity: grad.amax(),
        primal: lp.max_violation(v),
        dual: lambda.iter().fold(0.0_f64, |m, &l| m.max(-l)),
        complementarity,
    })
}
