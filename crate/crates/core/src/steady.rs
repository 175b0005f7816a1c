//! Steady state of the LP circuit.
//!
//! With `r_i = Σ_j G_ij` and `D = diag(r)`, Kirchhoff's laws at the
//! variable nodes together with the diode conditions are the optimality
//! conditions of the convex QP
//!
//! ```text
//!     min ½ VᵀP V − U_cost cᵀV   s.t.  A_eq V = b_eq,  A_ineq V ≤ b_ineq
//!     P = diag(c) + diag(1ᵀA) − Aᵀ D⁻¹ A
//! ```
//!
//! whose multipliers `y = [μ; λ]` give the row currents `I = D y` and the
//! constraint-node voltages `U = D⁻¹ A V − y`. Forced variable nodes enter
//! as extra equality rows whose multipliers are the source currents.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::circuit::{
    compile, compile_primal_dual_nonnegative, Circuit, PrimalDualCircuit,
};
use crate::error::{Error, Result};
use crate::lcp::LcpMethod;
use crate::lp::{canonicalize, kkt_residual, CanonicalLP, LinearProgram};
use crate::oracle::{self, LpStatus};
use crate::qp::{solve_qp, QpData};

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub v: DVector<f64>,
    /// Constraint-node voltages `U_1..U_m`.
    pub u: DVector<f64>,
    /// Row currents `I_1..I_m`.
    pub i: DVector<f64>,
    pub i_cost: f64,
    pub u_cost: f64,
    /// Conducting diodes, as 0-based indices among the inequality rows.
    pub active_set: Vec<usize>,
    pub method: LcpMethod,
    pub pivots: usize,
}

impl SteadyState {
    pub fn cost(&self, circuit: &Circuit) -> f64 {
        circuit.cost().dot(&self.v)
    }

    pub fn conducting(&self, n_ineq: usize) -> Vec<bool> {
        let mut out = vec![false; n_ineq];
        for &k in &self.active_set {
            out[k] = true;
        }
        out
    }
}

/// Max-norm residuals of the circuit equations, divided by
/// `max(1, ‖b‖∞, |U_cost|, max |forced voltage|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyResiduals {
    /// `A V − D U − I`
    pub row_current: f64,
    /// `c U_cost + Aᵀ U − diag(c + 1ᵀA) V` on unforced variable nodes
    pub node_current: f64,
    /// `A_eq V − b_eq`
    pub equality: f64,
    /// `max(A_ineq V − b_ineq, 0)`
    pub inequality: f64,
    /// `max(−I_ineq, 0)`
    pub diode_sign: f64,
    /// `|(A_ineq V − b_ineq)_k · I_k|`
    pub complementarity: f64,
    /// `cᵀV − (Σc) U_cost − I_cost`
    pub cost_current: f64,
    /// Forced node voltage error.
    pub forced: f64,
}

impl SteadyResiduals {
    pub fn max(&self) -> f64 {
        [
            self.row_current,
            self.node_current,
            self.equality,
            self.inequality,
            self.diode_sign,
            self.complementarity,
            self.cost_current,
            self.forced,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn residual_scale(circuit: &Circuit, u_cost: f64) -> f64 {
    let forced = circuit.forced_nodes().values().fold(0.0_f64, |m, v| m.max(v.abs()));
    1.0_f64.max(circuit.b().amax()).max(u_cost.abs()).max(forced)
}

fn residuals_with_cost(circuit: &Circuit, c: &DVector<f64>, st: &SteadyState) -> SteadyResiduals {
    let a = circuit.a();
    let m = circuit.n_constraints();
    let p = circuit.n_eq();
    let q = circuit.n_ineq();
    let r = DVector::from_fn(m, |i, _| a.row(i).sum());
    let b = circuit.b().rows(1, m).into_owned();
    let scale = residual_scale(circuit, st.u_cost);
    let av = &a * &st.v;

    let row_current = (&av - r.component_mul(&st.u) - &st.i).amax();
    let colsum = DVector::from_fn(circuit.n_vars(), |j, _| a.column(j).sum());
    let node = c * st.u_cost + a.transpose() * &st.u - (c + colsum).component_mul(&st.v);
    let node_current = (0..circuit.n_vars())
        .filter(|j| !circuit.forced_nodes().contains_key(j))
        .fold(0.0_f64, |mx, j| mx.max(node[j].abs()));
    let slack = &av - &b;
    let equality = (0..p).fold(0.0_f64, |mx, k| mx.max(slack[k].abs()));
    let inequality = (p..p + q).fold(0.0_f64, |mx, k| mx.max(slack[k]));
    let diode_sign = (p..p + q).fold(0.0_f64, |mx, k| mx.max(-st.i[k]));
    let i_scale = 1.0_f64.max(st.i.rows(p, q).amax());
    let complementarity = (p..p + q).fold(0.0_f64, |mx, k| mx.max((slack[k] * st.i[k]).abs())) / i_scale;
    let cost_current = (c.dot(&st.v) - c.sum() * st.u_cost - st.i_cost).abs();
    let forced = circuit
        .forced_nodes()
        .iter()
        .fold(0.0_f64, |mx, (&j, &x)| mx.max((st.v[j] - x).abs()));
    SteadyResiduals {
        row_current: row_current / scale,
        node_current: node_current / scale,
        equality: equality / scale,
        inequality: inequality / scale,
        diode_sign: diode_sign / scale,
        complementarity: complementarity / scale,
        cost_current: cost_current / scale,
        forced: forced / scale,
    }
}

/// Circuit equation residuals of `st`.
pub fn residuals(circuit: &Circuit, st: &SteadyState) -> SteadyResiduals {
    residuals_with_cost(circuit, &circuit.cost(), st)
}

/// `diag(1ᵀA) − Aᵀ D⁻¹ A`, the curvature contributed by the constraint rows.
pub fn constraint_hessian(circuit: &Circuit) -> DMatrix<f64> {
    let a = circuit.a();
    let n = circuit.n_vars();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..a.nrows() {
        let row = a.row(i);
        let r = row.sum();
        for j in 0..n {
            let aj = row[j];
            if aj == 0.0 {
                continue;
            }
            h[(j, j)] += aj;
            for k in 0..n {
                h[(j, k)] -= aj * row[k] / r;
            }
        }
    }
    h
}

fn solve_with_cost(circuit: &Circuit, c: &DVector<f64>, u_cost: f64, hessian: &DMatrix<f64>) -> Result<SteadyState> {
    if !u_cost.is_finite() {
        return Err(Error::NonFinite("u_cost"));
    }
    let n = circuit.n_vars();
    let m = circuit.n_constraints();
    let p = circuit.n_eq();
    let q = circuit.n_ineq();
    let a = circuit.a();
    let b = circuit.b();
    let forced: Vec<(usize, f64)> = circuit.forced_nodes().iter().map(|(&j, &v)| (j, v)).collect();

    let mut eq = DMatrix::zeros(p + forced.len(), n);
    let mut eq_rhs = DVector::zeros(p + forced.len());
    eq.rows_mut(0, p).copy_from(&a.rows(0, p));
    eq_rhs.rows_mut(0, p).copy_from(&b.rows(1, p));
    for (k, &(j, v)) in forced.iter().enumerate() {
        eq[(p + k, j)] = 1.0;
        eq_rhs[p + k] = v;
    }
    let ineq = a.rows(p, q).into_owned();
    let ineq_rhs = b.rows(1 + p, q).into_owned();
    let linear = c * (-u_cost);

    let sol = solve_qp(&QpData {
        hessian,
        linear: &linear,
        eq: &eq,
        eq_rhs: &eq_rhs,
        ineq: &ineq,
        ineq_rhs: &ineq_rhs,
    })?;

    let mut y = DVector::zeros(m);
    y.rows_mut(0, p).copy_from(&sol.mu.rows(0, p));
    y.rows_mut(p, q).copy_from(&sol.lambda);
    let r = DVector::from_fn(m, |i, _| a.row(i).sum());
    let i = r.component_mul(&y);
    let u = (&a * &sol.x).component_div(&r) - &y;
    let i_cost = c.dot(&sol.x) - c.sum() * u_cost;
    let active_set = (0..q).filter(|&k| sol.active[k]).collect();
    Ok(SteadyState {
        v: sol.x,
        u,
        i,
        i_cost,
        u_cost,
        active_set,
        method: sol.method,
        pivots: sol.pivots,
    })
}

/// Steady state of `circuit` driven at `u_cost`.
pub fn solve_steady_state(circuit: &Circuit, u_cost: f64) -> Result<SteadyState> {
    let c = circuit.cost();
    let mut h = constraint_hessian(circuit);
    for j in 0..circuit.n_vars() {
        h[(j, j)] += c[j];
    }
    solve_with_cost(circuit, &c, u_cost, &h)
}

/// Solution of the cost-free QP `min ½ VᵀQ V` over the circuit's
/// constraints and the circuit quantities it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct QpConstruction {
    pub q: DMatrix<f64>,
    pub v_star: DVector<f64>,
    pub mu_star: DVector<f64>,
    pub lambda_star: DVector<f64>,
    pub u_eq: DVector<f64>,
    pub u_ineq: DVector<f64>,
    pub i_eq: DVector<f64>,
    pub i_ineq: DVector<f64>,
}

impl QpConstruction {
    /// The mapped quantities as a circuit state at `U_cost = 0`.
    pub fn state(&self) -> SteadyState {
        let p = self.u_eq.len();
        let q = self.u_ineq.len();
        let mut u = DVector::zeros(p + q);
        let mut i = DVector::zeros(p + q);
        u.rows_mut(0, p).copy_from(&self.u_eq);
        u.rows_mut(p, q).copy_from(&self.u_ineq);
        i.rows_mut(0, p).copy_from(&self.i_eq);
        i.rows_mut(p, q).copy_from(&self.i_ineq);
        SteadyState {
            v: self.v_star.clone(),
            u,
            i,
            i_cost: 0.0,
            u_cost: 0.0,
            active_set: (0..q).filter(|&k| self.lambda_star[k] > 0.0).collect(),
            method: LcpMethod::Trivial,
            pivots: 0,
        }
    }

    /// Circuit equation residuals with the cost row removed.
    pub fn residuals(&self, circuit: &Circuit) -> SteadyResiduals {
        residuals_with_cost(circuit, &DVector::zeros(circuit.n_vars()), &self.state())
    }
}

/// Solve the cost-free QP of `circuit` and map its primal/dual solution to
/// row voltages and currents. The cost row, if any, is ignored.
pub fn solve_nocost_qp(circuit: &Circuit) -> Result<QpConstruction> {
    let q = constraint_hessian(circuit);
    let c = DVector::zeros(circuit.n_vars());
    let st = solve_with_cost(circuit, &c, 0.0, &q)?;
    let p = circuit.n_eq();
    let k = circuit.n_ineq();
    let r = DVector::from_fn(p + k, |i, _| circuit.g().row(i + 1).sum());
    let y = st.i.component_div(&r);
    Ok(QpConstruction {
        q,
        v_star: st.v,
        mu_star: y.rows(0, p).into_owned(),
        lambda_star: y.rows(p, k).into_owned(),
        u_eq: st.u.rows(0, p).into_owned(),
        u_ineq: st.u.rows(p, k).into_owned(),
        i_eq: st.i.rows(0, p).into_owned(),
        i_ineq: st.i.rows(p, k).into_owned(),
    })
}

/// Voltage of the gap row in a steady state of the primal–dual circuit.
/// When the gap row is empty every feasible point is optimal and any cost
/// voltage works; zero is returned.
pub fn ucrit_of(pdc: &PrimalDualCircuit) -> Result<f64> {
    let st = solve_steady_state(&pdc.circuit, 0.0)?;
    Ok(pdc.gap_row.map(|r| st.u[r - 1]).unwrap_or(0.0))
}

fn check_assumptions(lp: &LinearProgram) -> Result<()> {
    match oracle::solve_lp(lp).status {
        LpStatus::Optimal => Ok(()),
        LpStatus::Infeasible => Err(Error::Assumption {
            assumption: "feasible primal",
            detail: "the LP has no feasible point".into(),
        }),
        LpStatus::Unbounded => Err(Error::Assumption {
            assumption: "feasible dual (bounded optimum)",
            detail: "the LP objective is unbounded below".into(),
        }),
    }
}

/// Largest cost voltage at which the circuit of `lp` is guaranteed to sit
/// at an LP optimizer.
pub fn compute_ucrit(lp: &LinearProgram) -> Result<f64> {
    check_assumptions(lp)?;
    let clp = canonicalize(lp)?;
    ucrit_of(&compile_primal_dual_nonnegative(&clp.inner)?)
}

/// Critical voltage of a compiled (possibly perturbed, possibly forced)
/// circuit, from the LP it realises.
pub fn compute_ucrit_circuit(circuit: &Circuit) -> Result<f64> {
    let lp = circuit.to_lp_with_forced();
    check_assumptions(&lp)?;
    ucrit_of(&compile_primal_dual_nonnegative(&lp)?)
}

/// `cᵀ(V(u + δ) − V(u)) / δ`.
pub fn cost_sensitivity(circuit: &Circuit, u_cost: f64, delta: f64) -> Result<f64> {
    if delta == 0.0 || !delta.is_finite() {
        return Err(Error::Config(format!("delta must be finite and nonzero, got {delta}")));
    }
    let a = solve_steady_state(circuit, u_cost)?;
    let b = solve_steady_state(circuit, u_cost + delta)?;
    Ok((b.cost(circuit) - a.cost(circuit)) / delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub status: VerifyStatus,
    /// `|circuit cost − oracle cost| / max(1, |oracle cost|)`
    pub cost_gap: Option<f64>,
    pub max_violation: Option<f64>,
    /// KKT residual of the circuit point with LP multipliers fitted on the
    /// conducting rows.
    pub kkt_residual: Option<f64>,
    pub u_crit: Option<f64>,
    pub u_cost: Option<f64>,
    /// Conducting diodes (0-based inequality rows).
    pub active_set: Vec<usize>,
    pub circuit_cost: Option<f64>,
    pub oracle_cost: Option<f64>,
    /// Circuit point mapped back to the LP variables.
    pub x: Vec<f64>,
    /// Per-coordinate distance to the oracle optimizer, only when the
    /// optimizer is certified unique by vertex enumeration.
    pub coordinate_gap: Option<f64>,
    /// Largest scaled circuit equation residual.
    pub circuit_residual: Option<f64>,
    pub message: Option<String>,
}

impl EquivalenceReport {
    fn failed(status: VerifyStatus, message: String) -> Self {
        EquivalenceReport {
            status,
            cost_gap: None,
            max_violation: None,
            kkt_residual: None,
            u_crit: None,
            u_cost: None,
            active_set: Vec::new(),
            circuit_cost: None,
            oracle_cost: None,
            x: Vec::new(),
            coordinate_gap: None,
            circuit_residual: None,
            message: Some(message),
        }
    }
}

/// Compile `lp`, solve its circuit at `u_cost` (default `U_crit − 1`) and
/// compare with the oracle. Failures are carried in the report.
pub fn verify_equivalence(lp: &LinearProgram, u_cost: Option<f64>) -> EquivalenceReport {
    match EquivalenceCheck::new(lp) {
        Ok(v) => v.at(u_cost),
        Err(r) => r,
    }
}

/// Oracle solve, compiled circuit and `U_crit` of one LP, reusable across
/// cost voltages.
pub struct EquivalenceCheck<'a> {
    lp: &'a LinearProgram,
    clp: CanonicalLP,
    circuit: Circuit,
    oracle_sol: oracle::OracleSolution,
    unique: bool,
    u_crit: Option<f64>,
}

impl<'a> EquivalenceCheck<'a> {
    pub fn new(lp: &'a LinearProgram) -> std::result::Result<Self, EquivalenceReport> {
        let clp = canonicalize(lp).map_err(|e| EquivalenceReport::failed(VerifyStatus::Failed, e.to_string()))?;
        let circuit = compile(&clp).map_err(|e| EquivalenceReport::failed(VerifyStatus::Failed, e.to_string()))?;
        let oracle_sol = oracle::solve_lp(lp);
        let unique = oracle_sol.is_optimal() && oracle::optimum_is_unique(lp, &oracle_sol, 1e-9) == Some(true);
        Ok(EquivalenceCheck {
            lp,
            clp,
            circuit,
            oracle_sol,
            unique,
            u_crit: compute_ucrit(lp).ok(),
        })
    }

    pub fn u_crit(&self) -> Option<f64> {
        self.u_crit
    }

    /// Report at `u_cost`, default `U_crit − 1`.
    pub fn at(&self, u_cost: Option<f64>) -> EquivalenceReport {
        let lp = self.lp;
        let u_crit = self.u_crit;
        let u = u_cost.or(u_crit.map(|x| x - 1.0)).unwrap_or(0.0);

        let st = match solve_steady_state(&self.circuit, u) {
            Ok(s) => s,
            Err(e @ (Error::Infeasible | Error::InconsistentEqualities { .. })) => {
                let mut r = EquivalenceReport::failed(VerifyStatus::Infeasible, e.to_string());
                r.u_cost = Some(u);
                return r;
            }
            Err(e) => {
                let mut r = EquivalenceReport::failed(VerifyStatus::Failed, e.to_string());
                r.u_cost = Some(u);
                r.u_crit = u_crit;
                return r;
            }
        };
        let x = self.clp.recover(&st.v);
        let circuit_cost = lp.objective(&x);
        let circuit_residual = residuals(&self.circuit, &st).max();
        let max_violation = lp.max_violation(&x);
        let kkt = fitted_kkt_residual(lp, &x, &st.active_set);

        let mut report = EquivalenceReport {
            status: VerifyStatus::Optimal,
            cost_gap: None,
            max_violation: Some(max_violation),
            kkt_residual: Some(kkt),
            u_crit,
            u_cost: Some(u),
            active_set: st.active_set.clone(),
            circuit_cost: Some(circuit_cost),
            oracle_cost: None,
            x: x.iter().copied().collect(),
            coordinate_gap: None,
            circuit_residual: Some(circuit_residual),
            message: None,
        };
        let sol = &self.oracle_sol;
        match sol.status {
            LpStatus::Optimal => {
                report.oracle_cost = Some(sol.cost);
                report.cost_gap = Some((circuit_cost - sol.cost).abs() / sol.cost.abs().max(1.0));
                if self.unique {
                    report.coordinate_gap = Some((&x - &sol.v_star).amax());
                }
            }
            LpStatus::Infeasible => {
                report.status = VerifyStatus::Infeasible;
                report.message = Some("oracle reports an infeasible LP".into());
            }
            LpStatus::Unbounded => {
                report.status = VerifyStatus::Unbounded;
                report.message = Some("oracle reports an unbounded LP".into());
            }
        }
        report
    }
}

/// Fit LP multipliers `μ` (free) and `λ ≥ 0` on the `active` inequality
/// rows by non-negative least squares on stationarity, then evaluate the
/// full KKT residual at `x`.
pub fn fitted_kkt_residual(lp: &LinearProgram, x: &DVector<f64>, active: &[usize]) -> f64 {
    let n = lp.n_vars();
    let p = lp.n_eq();
    let k = active.len();
    let mut m = DMatrix::zeros(n, 2 * p + k);
    for i in 0..p {
        for j in 0..n {
            m[(j, i)] = lp.a_eq()[(i, j)];
            m[(j, p + i)] = -lp.a_eq()[(i, j)];
        }
    }
    for (r, &i) in active.iter().enumerate() {
        for j in 0..n {
            m[(j, 2 * p + r)] = lp.a_ineq()[(i, j)];
        }
    }
    let z = nnls(&m, &(-lp.c()));
    let mu = DVector::from_fn(p, |i, _| z[i] - z[p + i]);
    let mut lambda = DVector::zeros(lp.n_ineq());
    for (r, &i) in active.iter().enumerate() {
        lambda[i] = z[2 * p + r];
    }
    kkt_residual(lp, x, &lambda, &mu).map(|r| r.max()).unwrap_or(f64::INFINITY)
}

/// Lawson–Hanson non-negative least squares, `min ‖M z − d‖`, `z ≥ 0`.
fn nnls(m: &DMatrix<f64>, d: &DVector<f64>) -> DVector<f64> {
    let cols = m.ncols();
    let mut z = DVector::zeros(cols);
    if cols == 0 {
        return z;
    }
    let tol = 1e-12 * (1.0 + m.amax()) * (1.0 + d.amax());
    let mut passive = vec![false; cols];
    for _ in 0..3 * cols + 10 {
        let w = m.transpose() * (d - m * &z);
        let next = (0..cols)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(t) = next else { break };
        passive[t] = true;
        for _ in 0..3 * cols + 10 {
            let idx: Vec<usize> = (0..cols).filter(|&j| passive[j]).collect();
            let sub = DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])]);
            let Ok(s_sub) = sub.svd(true, true).solve(d, 1e-12) else { return z };
            let mut s = DVector::zeros(cols);
            for (c, &j) in idx.iter().enumerate() {
                s[j] = s_sub[c];
            }
            if idx.iter().all(|&j| s[j] > 0.0) {
                z = s;
                break;
            }
            let alpha = idx
                .iter()
                .filter(|&&j| s[j] <= 0.0)
                .map(|&j| z[j] / (z[j] - s[j]))
                .fold(f64::INFINITY, f64::min);
            z = &z + (s - &z) * alpha;
            for &j in &idx {
                if z[j] <= tol {
                    z[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    z
}
