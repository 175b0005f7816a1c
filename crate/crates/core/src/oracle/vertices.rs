use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lp::LinearProgram;

pub const MAX_ENUM_VARS: usize = 12;
pub const MAX_ENUM_ROWS: usize = 25;

const RANK_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const DEDUP_TOL: f64 = 1e-9;

/// All basic feasible points of `lp`, deduplicated and sorted
/// lexicographically.
///
/// Every vertex is the unique solution of the equality rows plus some set of
/// tight inequality rows, so it suffices to try each subset of
/// `n − rank(A_eq)` inequality rows.
pub fn enumerate_vertices(lp: &LinearProgram) -> Result<Vec<DVector<f64>>> {
    let n = lp.n_vars();
    let p = lp.n_eq();
    let q = lp.n_ineq();
    if n > MAX_ENUM_VARS || p + q > MAX_ENUM_ROWS {
        return Err(Error::TooLarge(format!(
            "vertex enumeration limited to n ≤ {MAX_ENUM_VARS}, p + q ≤ {MAX_ENUM_ROWS} (got n = {n}, p + q = {})",
            p + q
        )));
    }
    let eq_rank = if p == 0 { 0 } else { lp.a_eq().clone().svd(false, false).rank(RANK_TOL) };
    if eq_rank > n {
        return Ok(Vec::new());
    }
    let k = n - eq_rank;
    let mut found: Vec<DVector<f64>> = Vec::new();
    if k > q {
        return Ok(found);
    }

    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        if let Some(v) = solve_subset(lp, &subset) {
            if lp.max_violation(&v) <= FEAS_TOL * (1.0 + v.amax())
                && !found.iter().any(|u| (u - &v).amax() <= DEDUP_TOL)
            {
                found.push(v);
            }
        }
        if !next_combination(&mut subset, q) {
            break;
        }
    }
    found.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(found)
}

fn solve_subset(lp: &LinearProgram, subset: &[usize]) -> Option<DVector<f64>> {
    let n = lp.n_vars();
    let p = lp.n_eq();
    let rows = p + subset.len();
    let mut m = DMatrix::zeros(rows, n);
    let mut rhs = DVector::zeros(rows);
    for i in 0..p {
        m.row_mut(i).copy_from(&lp.a_eq().row(i));
        rhs[i] = lp.b_eq()[i];
    }
    for (r, &i) in subset.iter().enumerate() {
        m.row_mut(p + r).copy_from(&lp.a_ineq().row(i));
        rhs[p + r] = lp.b_ineq()[i];
    }
    let svd = m.clone().svd(true, true);
    if svd.rank(RANK_TOL) < n {
        return None;
    }
    let v = svd.solve(&rhs, RANK_TOL).ok()?;
    // Inconsistent equality systems show up as a nonzero residual.
    if (&m * &v - &rhs).amax() > FEAS_TOL * (1.0 + rhs.amax()) {
        return None;
    }
    Some(v)
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
