//! Convex quadratic programs with linear constraints, solved through their
//! KKT conditions.
//!
//! ```text
//!     min ½ xᵀP x + fᵀx   s.t.  E x = e,  A x ≤ a          (P ⪰ 0)
//! ```
//!
//! The equality block is eliminated through the factorised KKT matrix
//! `[P Eᵀ; E 0]`, leaving a complementarity problem in the inequality
//! multipliers that [`crate::lcp`] solves. The final point is recomputed from
//! the KKT system of the identified active set.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lcp::{self, LcpFailure, LcpMethod};

pub struct QpData<'a> {
    pub hessian: &'a DMatrix<f64>,
    pub linear: &'a DVector<f64>,
    pub eq: &'a DMatrix<f64>,
    pub eq_rhs: &'a DVector<f64>,
    pub ineq: &'a DMatrix<f64>,
    pub ineq_rhs: &'a DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Equality multipliers (zero on rows found to be linearly dependent).
    pub mu: DVector<f64>,
    /// Inequality multipliers, `≥ 0`.
    pub lambda: DVector<f64>,
    /// Inequality rows held tight in the final KKT solve.
    pub active: Vec<bool>,
    pub method: LcpMethod,
    pub pivots: usize,
}

/// Greedy selection of linearly independent rows, in order, by modified
/// Gram–Schmidt with reorthogonalisation.
pub(crate) fn independent_rows(m: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for i in 0..m.nrows() {
        let row = m.row(i).transpose();
        let norm0 = row.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut r = row;
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&r);
                r.axpy(-d, b, 1.0);
            }
        }
        let nr = r.norm();
        if nr > rel_tol * norm0 {
            basis.push(r / nr);
            keep.push(i);
        }
    }
    keep
}

const RANK_TOL: f64 = 1e-9;
const RELAX: f64 = 1e-10;

fn lcp_error(f: LcpFailure, q: usize) -> Error {
    match f {
        LcpFailure::Ray => Error::Infeasible,
        LcpFailure::PivotLimit => Error::NoConvergence {
            iterations: 50 * q + 1000,
            residual: f64::NAN,
        },
    }
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

fn kkt_matrix(p: &DMatrix<f64>, e: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let k = e.nrows();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(p);
    if k > 0 {
        kkt.view_mut((n, 0), (k, n)).copy_from(e);
        kkt.view_mut((0, n), (n, k)).copy_from(&e.transpose());
    }
    kkt
}

/// Solve a KKT system, verifying the result so that numerically singular
/// matrices are reported rather than silently producing garbage.
fn kkt_solve(kkt: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(rhs)?;
    if sol.iter().any(|x| !x.is_finite()) {
        return None;
    }
    // Iterative refinement recovers digits lost to large multipliers.
    for _ in 0..2 {
        let r = rhs - kkt * &sol;
        match lu.solve(&r) {
            Some(dx) if dx.iter().all(|x| x.is_finite()) => sol += dx,
            _ => break,
        }
    }
    let res = (kkt * &sol - rhs).amax();
    let scale = 1.0 + rhs.amax() + kkt.amax() * sol.amax();
    if res > 1e-9 * scale {
        return None;
    }
    Some(sol)
}

pub fn solve_qp(d: &QpData<'_>) -> Result<QpSolution> {
    let n = d.hessian.nrows();
    let q = d.ineq.nrows();
    let p_all = d.eq.nrows();
    let scale = 1.0 + d.eq_rhs.amax().max(d.ineq_rhs.amax());

    let keep = independent_rows(d.eq, RANK_TOL);
    let e = select_rows(d.eq, &keep);
    let e_rhs = DVector::from_fn(keep.len(), |i, _| d.eq_rhs[keep[i]]);
    let k = keep.len();

    let kkt = kkt_matrix(d.hessian, &e);
    let mut rhs = DMatrix::zeros(n + k, 1 + q);
    for i in 0..n {
        rhs[(i, 0)] = -d.linear[i];
    }
    for i in 0..k {
        rhs[(n + i, 0)] = e_rhs[i];
    }
    for r in 0..q {
        for j in 0..n {
            rhs[(j, 1 + r)] = d.ineq[(r, j)];
        }
    }
    let sol = kkt_solve(&kkt, &rhs).ok_or_else(|| {
        Error::Singular(format!(
            "KKT matrix of size {} is singular (hessian not definite on the equality null space)",
            n + k
        ))
    })?;
    let x0 = sol.view((0, 0), (n, 1)).column(0).into_owned();
    let h_x = sol.view((0, 1), (n, q)).into_owned();

    let (x, mu_k, lambda, active, method, pivots) = if q == 0 {
        let mu = sol.view((n, 0), (k, 1)).column(0).into_owned();
        (x0, mu, DVector::zeros(0), Vec::new(), LcpMethod::Trivial, 0)
    } else {
        let m = d.ineq * &h_x;
        let qv = d.ineq_rhs - d.ineq * &x0;
        let mu0 = sol.view((n, 0), (k, 1)).column(0).into_owned();
        let h_mu = sol.view((n, 1), (k, q)).into_owned();
        match lcp::solve(&m, &qv) {
            Ok(lcp) => {
                let x = &x0 - &h_x * &lcp.z;
                let mu = mu0 - h_mu * &lcp.z;
                match polish(d, &e, &e_rhs, &lcp.basic, scale) {
                    Some((x, mu, lambda, active)) => (x, mu, lambda, active, lcp.method, lcp.pivots),
                    None => (x, mu, lcp.z.clone(), lcp.basic.clone(), lcp.method, lcp.pivots),
                }
            }
            // A feasible set with empty interior (a single point, say) can
            // look infeasible after rounding. Loosen the rows slightly to
            // find the active set, then accept it only if it checks out on
            // the exact data.
            Err(LcpFailure::Ray) => {
                let relaxed = qv.add_scalar(RELAX * scale);
                let lcp = lcp::solve(&m, &relaxed).map_err(|f| lcp_error(f, q))?;
                let (x, mu, lambda, active) =
                    polish(d, &e, &e_rhs, &lcp.basic, scale).ok_or(Error::Infeasible)?;
                (x, mu, lambda, active, lcp.method, lcp.pivots)
            }
            Err(f) => return Err(lcp_error(f, q)),
        }
    };

    // Dependent equality rows must be satisfied by the solution.
    let eq_res = if p_all > 0 { (d.eq * &x - d.eq_rhs).amax() } else { 0.0 };
    if eq_res > 1e-7 * scale {
        return Err(Error::InconsistentEqualities { residual: eq_res });
    }

    let mut mu = DVector::zeros(p_all);
    for (i, &r) in keep.iter().enumerate() {
        mu[r] = mu_k[i];
    }
    let (mu, lambda) = match min_norm_multipliers(d, &x, &active, scale) {
        Some(ml) => ml,
        None => (mu, lambda),
    };
    Ok(QpSolution {
        x,
        mu,
        lambda,
        active,
        method,
        pivots,
    })
}

/// Multipliers of smallest norm over all equality rows and the active
/// inequality rows. With dependent or degenerate rows the multipliers are
/// not unique and the row-dropping solve picks an arbitrary vertex of the
/// multiplier set; the minimum-norm choice does not depend on row order.
/// `None` when it would make an inequality multiplier negative.
fn min_norm_multipliers(
    d: &QpData<'_>,
    x: &DVector<f64>,
    active: &[bool],
    scale: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = d.hessian.nrows();
    let p = d.eq.nrows();
    let q = d.ineq.nrows();
    let act: Vec<usize> = (0..q).filter(|&i| active[i]).collect();
    let rows = p + act.len();
    if rows == 0 {
        return None;
    }
    let mut st = DMatrix::zeros(n, rows);
    for i in 0..p {
        st.column_mut(i).copy_from(&d.eq.row(i).transpose());
    }
    for (r, &i) in act.iter().enumerate() {
        st.column_mut(p + r).copy_from(&d.ineq.row(i).transpose());
    }
    let rhs = -(d.hessian * x + d.linear);
    let svd = st.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let y = svd.solve(&rhs, 1e-10 * smax).ok()?;
    let res = (&st * &y - &rhs).amax();
    if !res.is_finite() || res > 1e-9 * (1.0 + rhs.amax() + smax * y.amax()) {
        return None;
    }
    let tol = 1e-9 * scale.max(1.0 + y.amax());
    if act.iter().enumerate().any(|(r, _)| y[p + r] < -tol) {
        return None;
    }
    let mu = y.rows(0, p).into_owned();
    let mut lambda = DVector::zeros(q);
    for (r, &i) in act.iter().enumerate() {
        lambda[i] = y[p + r].max(0.0);
    }
    Some((mu, lambda))
}

/// Re-solve the KKT system with the active inequality rows as equalities.
/// Returns `None` when the recomputed point fails the optimality checks,
/// in which case the caller keeps the complementarity solution.
fn polish(
    d: &QpData<'_>,
    e: &DMatrix<f64>,
    e_rhs: &DVector<f64>,
    basic: &[bool],
    scale: f64,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, Vec<bool>)> {
    let n = d.hessian.nrows();
    let q = d.ineq.nrows();
    let k = e.nrows();
    let act: Vec<usize> = (0..q).filter(|&i| basic[i]).collect();
    let mut stacked = DMatrix::zeros(k + act.len(), n);
    let mut stacked_rhs = DVector::zeros(k + act.len());
    if k > 0 {
        stacked.rows_mut(0, k).copy_from(e);
        stacked_rhs.rows_mut(0, k).copy_from(e_rhs);
    }
    for (r, &i) in act.iter().enumerate() {
        stacked.row_mut(k + r).copy_from(&d.ineq.row(i));
        stacked_rhs[k + r] = d.ineq_rhs[i];
    }
    let rows = independent_rows(&stacked, RANK_TOL);
    if rows.len() < k || rows.iter().take(k).enumerate().any(|(a, &b)| a != b) {
        return None;
    }
    let sub = select_rows(&stacked, &rows);
    let kkt = kkt_matrix(d.hessian, &sub);
    let mut rhs = DMatrix::zeros(n + rows.len(), 1);
    for i in 0..n {
        rhs[(i, 0)] = -d.linear[i];
    }
    for (r, &i) in rows.iter().enumerate() {
        rhs[(n + r, 0)] = stacked_rhs[i];
    }
    let sol = kkt_solve(&kkt, &rhs)?;
    let x = sol.view((0, 0), (n, 1)).column(0).into_owned();
    let mu = sol.view((n, 0), (k, 1)).column(0).into_owned();
    let mut lambda = DVector::zeros(q);
    let mut active = vec![false; q];
    for (r, &i) in rows.iter().enumerate().skip(k) {
        let row = act[i - k];
        lambda[row] = sol[(n + r, 0)];
        active[row] = true;
    }
    let tol = 1e-9 * scale.max(1.0 + lambda.amax());
    if lambda.iter().any(|&l| l < -tol) {
        return None;
    }
    let slack = d.ineq_rhs - d.ineq * &x;
    if slack.iter().any(|&s| s < -1e-9 * scale) {
        return None;
    }
    Some((x, mu, lambda.map(|l| l.max(0.0)), active))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independent_rows_skips_duplicates() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 1.0, 0.0]);
        assert_eq!(independent_rows(&m, 1e-9), vec![0, 2]);
    }

    #[test]
    fn box_constrained_projection() {
        // min ½‖x − (2, −1)‖²  s.t. 0 ≤ x ≤ 1  →  (1, 0)
        let p = DMatrix::identity(2, 2);
        let f = DVector::from_vec(vec![-2.0, 1.0]);
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        let e = DMatrix::zeros(0, 2);
        let er = DVector::zeros(0);
        let s = solve_qp(&QpData {
            hessian: &p,
            linear: &f,
            eq: &e,
            eq_rhs: &er,
            ineq: &a,
            ineq_rhs: &b,
        })
        .unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!(s.x[1].abs() < 1e-12);
        assert!((s.lambda[0] - 1.0).abs() < 1e-12);
        assert!((s.lambda[3] - 1.0).abs() < 1e-12);
        assert_eq!(s.active, vec![true, false, false, true]);
    }

    #[test]
    fn dependent_equalities_are_tolerated() {
        // min ½x² + ½y² s.t. x + y = 2 (stated twice)
        let p = DMatrix::identity(2, 2);
        let f = DVector::zeros(2);
        let e = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let er = DVector::from_vec(vec![2.0, 4.0]);
        let a = DMatrix::zeros(0, 2);
        let ar = DVector::zeros(0);
        let s = solve_qp(&QpData {
            hessian: &p,
            linear: &f,
            eq: &e,
            eq_rhs: &er,
            ineq: &a,
            ineq_rhs: &ar,
        })
        .unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        // minimum-norm split between the two copies: μ ∝ (1, 2)
        let g = &s.x + e.transpose() * &s.mu;
        assert!(g.amax() < 1e-12);
        assert!((s.mu[1] - 2.0 * s.mu[0]).abs() < 1e-12);

        let er = DVector::from_vec(vec![2.0, 5.0]);
        let r = solve_qp(&QpData {
            hessian: &p,
            linear: &f,
            eq: &e,
            eq_rhs: &er,
            ineq: &a,
            ineq_rhs: &ar,
        });
        assert!(matches!(r, Err(Error::InconsistentEqualities { .. })));
    }

    #[test]
    fn infeasible_inequalities() {
        let p = DMatrix::identity(1, 1);
        let f = DVector::zeros(1);
        let e = DMatrix::zeros(0, 1);
        let er = DVector::zeros(0);
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![0.0, -1.0]);
        let r = solve_qp(&QpData {
            hessian: &p,
            linear: &f,
            eq: &e,
            eq_rhs: &er,
            ineq: &a,
            ineq_rhs: &b,
        });
        assert_eq!(r.unwrap_err(), Error::Infeasible);
    }

    #[test]
    fn singular_hessian_reported() {
        let p = DMatrix::zeros(2, 2);
        let f = DVector::zeros(2);
        let e = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let er = DVector::from_vec(vec![1.0]);
        let a = DMatrix::zeros(0, 2);
        let ar = DVector::zeros(0);
        let r = solve_qp(&QpData {
            hessian: &p,
            linear: &f,
            eq: &e,
            eq_rhs: &er,
            ineq: &a,
            ineq_rhs: &ar,
        });
        assert!(matches!(r, Err(Error::Singular(_))));
    }
}
