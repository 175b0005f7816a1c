//! Ground-truth LP solving used to check circuit results.
//!
//! Nothing in here shares code with the circuit solvers; it only consumes
//! [`LinearProgram`] values.

mod simplex;
mod vertices;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::lp::{kkt_residual, LinearProgram};

pub use vertices::{enumerate_vertices, MAX_ENUM_ROWS, MAX_ENUM_VARS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub status: LpStatus,
    pub v_star: DVector<f64>,
    /// KKT multipliers of the inequality rows (`≥ 0`).
    pub lambda_star: DVector<f64>,
    /// KKT multipliers of the equality rows.
    pub mu_star: DVector<f64>,
    pub cost: f64,
}

impl OracleSolution {
    fn empty(lp: &LinearProgram, status: LpStatus) -> Self {
        let cost = match status {
            LpStatus::Infeasible => f64::INFINITY,
            _ => f64::NEG_INFINITY,
        };
        OracleSolution {
            status,
            v_star: DVector::zeros(lp.n_vars()),
            lambda_star: DVector::zeros(lp.n_ineq()),
            mu_star: DVector::zeros(lp.n_eq()),
            cost,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Dual variables in the `Aᵀλ = c`, `λ_ineq ≤ 0` convention of
    /// [`crate::lp::DualLP`].
    pub fn dual_point(&self) -> DVector<f64> {
        let p = self.mu_star.len();
        let q = self.lambda_star.len();
        DVector::from_fn(p + q, |i, _| {
            if i < p {
                -self.mu_star[i]
            } else {
                -self.lambda_star[i - p]
            }
        })
    }
}

/// Solve `lp` with the simplex method (Bland's rule).
pub fn solve_lp(lp: &LinearProgram) -> OracleSolution {
    match simplex::solve(lp) {
        simplex::Outcome::Infeasible => OracleSolution::empty(lp, LpStatus::Infeasible),
        simplex::Outcome::Unbounded => OracleSolution::empty(lp, LpStatus::Unbounded),
        simplex::Outcome::Optimal { x, y } => {
            let p = lp.n_eq();
            let q = lp.n_ineq();
            let mu_star = DVector::from_fn(p, |i, _| -y[i]);
            // Tiny negative multipliers are round-off on degenerate rows.
            let lambda_star = DVector::from_fn(q, |i, _| (-y[p + i]).max(0.0));
            let cost = lp.objective(&x);
            OracleSolution {
                status: LpStatus::Optimal,
                v_star: x,
                lambda_star,
                mu_star,
                cost,
            }
        }
    }
}

/// True when `sol` is the only optimizer of `lp`, decided by enumerating the
/// vertices of a bounded feasible set. `None` when the instance is outside
/// the enumeration guard.
pub fn optimum_is_unique(lp: &LinearProgram, sol: &OracleSolution, tol: f64) -> Option<bool> {
    let verts = enumerate_vertices(lp).ok()?;
    let scale = 1.0 + sol.cost.abs();
    let optimal = verts
        .iter()
        .filter(|v| (lp.objective(v) - sol.cost).abs() <= tol * scale)
        .count();
    Some(optimal == 1)
}

/// Max KKT residual of an oracle solution against its problem.
pub fn certify(lp: &LinearProgram, sol: &OracleSolution) -> f64 {
    kkt_residual(lp, &sol.v_star, &sol.lambda_star, &sol.mu_star)
        .map(|r| r.max())
        .unwrap_or(f64::INFINITY)
}
