//! Solvers for the linear complementarity problem
//!
//! ```text
//!     w = M z + q,   w ≥ 0,   z ≥ 0,   wᵀz = 0
//! ```
//!
//! In circuit terms `z` are diode currents and `w` the constraint slacks of
//! the inequality rows. Three strategies are tried in order: single-flip
//! principal pivoting on the diode partition, exhaustive partition search
//! for a handful of diodes, and Lemke's method with a lexicographic ratio
//! test.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LcpMethod {
    Trivial,
    PartitionFlip,
    Exhaustive,
    Lemke,
}

#[derive(Debug, Clone)]
pub struct LcpSolution {
    pub z: DVector<f64>,
    pub w: DVector<f64>,
    /// Indices whose complementary variable `z` is basic (diode conducting).
    pub basic: Vec<bool>,
    pub method: LcpMethod,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LcpFailure {
    /// Lemke terminated on a secondary ray: no solution exists for a
    /// positive semidefinite `M`.
    Ray,
    PivotLimit,
}

/// Largest number of diodes for which every partition is tried.
pub const EXHAUSTIVE_LIMIT: usize = 12;

pub fn solve(m: &DMatrix<f64>, q: &DVector<f64>) -> Result<LcpSolution, LcpFailure> {
    let n = q.len();
    let tol = tolerance(m, q);
    if q.iter().all(|&x| x >= -tol) {
        return Ok(LcpSolution {
            z: DVector::zeros(n),
            w: q.clone(),
            basic: vec![false; n],
            method: LcpMethod::Trivial,
            pivots: 0,
        });
    }
    if let Some(s) = partition_flip(m, q, tol) {
        return Ok(s);
    }
    if n <= EXHAUSTIVE_LIMIT {
        if let Some(s) = exhaustive(m, q, tol) {
            return Ok(s);
        }
    }
    lemke(m, q, tol)
}

fn tolerance(m: &DMatrix<f64>, q: &DVector<f64>) -> f64 {
    1e-11 * (1.0 + q.amax() + m.amax())
}

/// Solve the principal subsystem for partition `basic` and return `(z, w)`.
fn partition_point(
    m: &DMatrix<f64>,
    q: &DVector<f64>,
    basic: &[bool],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = q.len();
    let idx: Vec<usize> = (0..n).filter(|&i| basic[i]).collect();
    let mut z = DVector::zeros(n);
    if !idx.is_empty() {
        let k = idx.len();
        let sub = DMatrix::from_fn(k, k, |a, b| m[(idx[a], idx[b])]);
        let rhs = DVector::from_fn(k, |a, _| -q[idx[a]]);
        let sol = sub.lu().solve(&rhs)?;
        if sol.iter().any(|x| !x.is_finite()) {
            return None;
        }
        for (a, &i) in idx.iter().enumerate() {
            z[i] = sol[a];
        }
        // Reject near-singular principal blocks.
        let res = DMatrix::from_fn(k, k, |a, b| m[(idx[a], idx[b])]) * &sol - &rhs;
        if res.amax() > 1e-8 * (1.0 + rhs.amax()) {
            return None;
        }
    }
    let mut w = m * &z + q;
    for &i in &idx {
        w[i] = 0.0;
    }
    Some((z, w))
}

fn worst_violation(z: &DVector<f64>, w: &DVector<f64>, basic: &[bool], tol: f64) -> Option<(usize, f64)> {
    let mut worst: Option<(usize, f64)> = None;
    for i in 0..z.len() {
        let v = if basic[i] { -z[i] } else { -w[i] };
        if v > tol && worst.is_none_or(|(_, b)| v > b) {
            worst = Some((i, v));
        }
    }
    worst
}

/// Start with every diode blocking and flip the most violated one until the
/// partition is consistent. Gives up when a partition repeats, a principal
/// block is singular, or the iteration cap is hit.
fn partition_flip(m: &DMatrix<f64>, q: &DVector<f64>, tol: f64) -> Option<LcpSolution> {
    let n = q.len();
    let mut basic = vec![false; n];
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    seen.insert(basic.clone());
    let cap = 4 * n + 20;
    for it in 0..cap {
        let (z, w) = partition_point(m, q, &basic)?;
        match worst_violation(&z, &w, &basic, tol) {
            None => {
                return Some(LcpSolution {
                    z: z.map(|x| x.max(0.0)),
                    w: w.map(|x| x.max(0.0)),
                    basic,
                    method: LcpMethod::PartitionFlip,
                    pivots: it,
                })
            }
            Some((i, _)) => {
                basic[i] = !basic[i];
                if !seen.insert(basic.clone()) {
                    return None;
                }
            }
        }
    }
    None
}

fn exhaustive(m: &DMatrix<f64>, q: &DVector<f64>, tol: f64) -> Option<LcpSolution> {
    let n = q.len();
    let mut masks: Vec<u32> = (0..(1u32 << n)).collect();
    masks.sort_by_key(|x| (x.count_ones(), *x));
    for (tries, mask) in masks.into_iter().enumerate() {
        let basic: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        if let Some((z, w)) = partition_point(m, q, &basic) {
            if worst_violation(&z, &w, &basic, tol).is_none() {
                return Some(LcpSolution {
                    z: z.map(|x| x.max(0.0)),
                    w: w.map(|x| x.max(0.0)),
                    basic,
                    method: LcpMethod::Exhaustive,
                    pivots: tries,
                });
            }
        }
    }
    None
}

/// Lemke's complementary pivoting with covering vector `d = 1`.
///
/// Column layout of the tableau: `w₀..w_{n−1}, z₀..z_{n−1}, z₀ (artificial)`.
/// The `w` block of the tableau always holds `B⁻¹`, which feeds the
/// lexicographic tie-break.
pub fn lemke(m: &DMatrix<f64>, q: &DVector<f64>, tol: f64) -> Result<LcpSolution, LcpFailure> {
    let n = q.len();
    let art = 2 * n;
    let cols = 2 * n + 1;
    let width = cols + 1;
    let mut t = vec![0.0; n * width];
    for i in 0..n {
        t[i * width + i] = 1.0;
        for j in 0..n {
            t[i * width + n + j] = -m[(i, j)];
        }
        t[i * width + art] = -1.0;
        t[i * width + cols] = q[i];
    }
    let mut basis: Vec<usize> = (0..n).collect();

    let pivot = |t: &mut Vec<f64>, basis: &mut Vec<usize>, r: usize, k: usize| {
        let piv = t[r * width + k];
        for j in 0..width {
            t[r * width + j] /= piv;
        }
        let prow: Vec<f64> = t[r * width..(r + 1) * width].to_vec();
        for i in 0..n {
            if i != r {
                let f = t[i * width + k];
                if f != 0.0 {
                    for j in 0..width {
                        t[i * width + j] -= f * prow[j];
                    }
                    t[i * width + k] = 0.0;
                }
            }
        }
        basis[r] = k;
    };

    // Initial pivot: artificial enters on the most negative q.
    let mut r0 = 0;
    for i in 1..n {
        if q[i] < q[r0] {
            r0 = i;
        }
    }
    pivot(&mut t, &mut basis, r0, art);
    let mut entering = n + r0; // complement of w_{r0}
    let max_pivots = 50 * n + 1000;

    for pivots in 1..=max_pivots {
        // Lexicographic minimum ratio test.
        let mut cand: Vec<usize> = (0..n).filter(|&i| t[i * width + entering] > tol).collect();
        if cand.is_empty() {
            return Err(LcpFailure::Ray);
        }
        let ratio = |i: usize, col: usize| t[i * width + col] / t[i * width + entering];
        let min_rhs = cand.iter().map(|&i| ratio(i, cols)).fold(f64::INFINITY, f64::min);
        let rtol = 1e-12 * (1.0 + min_rhs.abs());
        cand.retain(|&i| ratio(i, cols) <= min_rhs + rtol);
        let leave = if let Some(&i) = cand.iter().find(|&&i| basis[i] == art) {
            i
        } else {
            let mut col = 0;
            while cand.len() > 1 && col < n {
                let best = cand.iter().map(|&i| ratio(i, col)).fold(f64::INFINITY, f64::min);
                let ctol = 1e-12 * (1.0 + best.abs());
                cand.retain(|&i| ratio(i, col) <= best + ctol);
                col += 1;
            }
            cand[0]
        };
        let leaving = basis[leave];
        pivot(&mut t, &mut basis, leave, entering);
        if leaving == art {
            let mut z = DVector::zeros(n);
            let mut w = DVector::zeros(n);
            let mut basic = vec![false; n];
            for (i, &b) in basis.iter().enumerate() {
                let v = t[i * width + cols].max(0.0);
                if b < n {
                    w[b] = v;
                } else if b < 2 * n {
                    z[b - n] = v;
                    basic[b - n] = true;
                }
            }
            return Ok(LcpSolution {
                z,
                w,
                basic,
                method: LcpMethod::Lemke,
                pivots,
            });
        }
        entering = if leaving < n { leaving + n } else { leaving - n };
    }
    Err(LcpFailure::PivotLimit)
}
