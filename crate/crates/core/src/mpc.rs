//! Receding-horizon control of the scalar plant `dx/dt = −x + u` with an
//! LP solved either by the circuit or by the oracle at every sample.
//!
//! The horizon-`N` problem at sample `k` is
//!
//! ```text
//!     min Σ_{i=1..N} |x_i − r_{k+i}|
//!     s.t. x_{i+1} = x_i + (u_i − x_i) δ     i = 0..N−1
//!          u_lo ≤ u_i ≤ u_hi                  i = 0..N−1
//!          x_0 = measured state
//! ```
//!
//! with each absolute value replaced by an epigraph variable `t_i`. The LP
//! variables are ordered `(u_0..u_{N−1}, x_0..x_N, t_1..t_N)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{compile, Circuit};
use crate::error::{Error, Result};
use crate::lcp::LcpMethod;
use crate::lp::{canonicalize, CanonicalLP, LinearProgram};
use crate::oracle;
use crate::steady::{compute_ucrit_circuit, residuals, solve_steady_state};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSpec {
    pub horizon_n: usize,
    /// Sampling time, seconds.
    pub delta: f64,
    /// Reference per sample; the last value is held beyond the end.
    pub x_ref: Vec<f64>,
    #[serde(default = "default_bounds")]
    pub u_bounds: (f64, f64),
    #[serde(default)]
    pub plant_initial: f64,
}

fn default_bounds() -> (f64, f64) {
    (-1.5, 1.5)
}

impl MpcSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_n == 0 {
            return Err(Error::Config("horizon must be at least one step".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("sampling time must be positive, got {}", self.delta)));
        }
        if self.x_ref.is_empty() || self.x_ref.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("reference must be a non-empty list of finite values".into()));
        }
        let (lo, hi) = self.u_bounds;
        if !(lo < hi) {
            return Err(Error::Config(format!("input bounds out of order: ({lo}, {hi})")));
        }
        Ok(())
    }

    pub fn reference(&self, k: usize) -> f64 {
        self.x_ref[k.min(self.x_ref.len() - 1)]
    }

    pub fn n_vars(&self) -> usize {
        3 * self.horizon_n + 1
    }
    pub fn u_index(&self, i: usize) -> usize {
        i
    }
    pub fn x_index(&self, i: usize) -> usize {
        self.horizon_n + i
    }
    pub fn t_index(&self, i: usize) -> usize {
        2 * self.horizon_n + i
    }
}

/// Horizon LP at sample `k` without the `x_0` row, for the circuit, where
/// `x_0` is a forced node instead.
fn horizon_lp(spec: &MpcSpec, k: usize, x0: Option<f64>) -> LinearProgram {
    let n_h = spec.horizon_n;
    let nv = spec.n_vars();
    let d = spec.delta;
    let extra = usize::from(x0.is_some());
    let mut a_eq = DMatrix::zeros(n_h + extra, nv);
    let mut b_eq = DVector::zeros(n_h + extra);
    for i in 0..n_h {
        a_eq[(i, spec.x_index(i + 1))] = 1.0;
        a_eq[(i, spec.x_index(i))] = -(1.0 - d);
        a_eq[(i, spec.u_index(i))] = -d;
    }
    if let Some(x0) = x0 {
        a_eq[(n_h, spec.x_index(0))] = 1.0;
        b_eq[n_h] = x0;
    }
    let (lo, hi) = spec.u_bounds;
    let mut a_in = DMatrix::zeros(4 * n_h, nv);
    let mut b_in = DVector::zeros(4 * n_h);
    for i in 0..n_h {
        a_in[(2 * i, spec.u_index(i))] = 1.0;
        b_in[2 * i] = hi;
        a_in[(2 * i + 1, spec.u_index(i))] = -1.0;
        b_in[2 * i + 1] = -lo;
    }
    for i in 1..=n_h {
        let r = spec.reference(k + i);
        let row = 2 * n_h + 2 * (i - 1);
        a_in[(row, spec.x_index(i))] = 1.0;
        a_in[(row, spec.t_index(i))] = -1.0;
        b_in[row] = r;
        a_in[(row + 1, spec.x_index(i))] = -1.0;
        a_in[(row + 1, spec.t_index(i))] = -1.0;
        b_in[row + 1] = -r;
    }
    let mut c = DVector::zeros(nv);
    for i in 1..=n_h {
        c[spec.t_index(i)] = 1.0;
    }
    LinearProgram::new(c, a_eq, b_eq, a_in, b_in).expect("horizon LP dimensions are consistent")
}

/// Horizon LP at sample 0 with measured state `x0`.
pub fn build_mpc_lp(spec: &MpcSpec, x0: f64) -> LinearProgram {
    build_mpc_lp_at(spec, x0, 0)
}

/// Horizon LP at sample `k` (reference shifted by `k`).
pub fn build_mpc_lp_at(spec: &MpcSpec, x0: f64, k: usize) -> LinearProgram {
    horizon_lp(spec, k, Some(x0))
}

/// Exact plant step under a zero-order-hold input.
pub fn plant_step(x: f64, u: f64, delta: f64) -> f64 {
    u + (x - u) * (-delta).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Circuit,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// LP objective of the applied plan, evaluated on the nominal LP.
    pub lp_cost: f64,
    pub u_cost: Option<f64>,
    pub u_crit: Option<f64>,
    /// The cost voltage had to be lowered at this step.
    pub u_cost_lowered: bool,
    pub residual: Option<f64>,
    pub method: Option<LcpMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopResult {
    pub times: Vec<f64>,
    /// Plant state at each sample (before the input is applied).
    pub states: Vec<f64>,
    pub inputs: Vec<f64>,
    pub reports: Vec<StepReport>,
    /// Set when a step failed; the vectors hold the samples before it.
    pub aborted: Option<String>,
}

impl ClosedLoopResult {
    /// CSV with header `t,x,u,cost`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,u,cost")?;
        for k in 0..self.times.len() {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e}",
                self.times[k], self.states[k], self.inputs[k], self.reports[k].lp_cost
            )?;
        }
        Ok(())
    }
}

/// Circuit realising the horizon LP with `x_0` as a forced node.
struct CircuitSolver {
    circuit: Circuit,
    x0_node: usize,
    u0_node: usize,
    u_cost: Option<f64>,
}

impl CircuitSolver {
    fn new(spec: &MpcSpec, sigma: f64, seed: u64) -> Result<Self> {
        let lp = horizon_lp(spec, 0, None);
        if lp.a_eq().column(spec.x_index(0)).iter().all(|&v| v == 0.0) {
            return Err(Error::Config(
                "with delta = 1 the measured state does not enter the prediction".into(),
            ));
        }
        let clp = canonicalize(&lp)?;
        let nominal = compile(&clp)?;
        let circuit = if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            nominal.perturbed(sigma, &mut rng)?
        } else {
            nominal
        };
        Ok(CircuitSolver {
            circuit,
            x0_node: clp.plus_index(spec.x_index(0)),
            u0_node: clp.plus_index(spec.u_index(0)),
            u_cost: None,
        })
    }

    fn load(&mut self, clp: &CanonicalLP, x0: f64) -> Result<()> {
        let b = clp.inner.stacked_b();
        for (r, &v) in b.iter().enumerate() {
            self.circuit.set_rhs(r + 1, v)?;
        }
        self.circuit.force_node(self.x0_node, x0)
    }

    fn step(&mut self, spec: &MpcSpec, x: f64, k: usize) -> Result<(DVector<f64>, StepReport)> {
        let clp = canonicalize(&horizon_lp(spec, k, None))?;
        self.load(&clp, x)?;
        // The cost voltage is kept across samples and lowered only when the
        // new right-hand side moves the critical voltage below it.
        let u_crit = compute_ucrit_circuit(&self.circuit)?;
        let mut lowered = false;
        let u = match self.u_cost {
            Some(u) if u <= u_crit => u,
            prev => {
                lowered = prev.is_some();
                u_crit - 1.0
            }
        };
        self.u_cost = Some(u);
        let st = solve_steady_state(&self.circuit, u)?;
        let v = clp.recover(&st.v);
        let report = StepReport {
            lp_cost: 0.0,
            u_cost: Some(u),
            u_crit: Some(u_crit),
            u_cost_lowered: lowered,
            residual: Some(residuals(&self.circuit, &st).max()),
            method: Some(st.method),
        };
        debug_assert_eq!(v[spec.u_index(0)], st.v[self.u0_node]);
        Ok((v, report))
    }
}

/// Run the loop for `duration` seconds. With `sigma > 0` every circuit
/// resistor is scaled once by `1 + ε`, `ε ~ N(0, sigma)` from `seed`; the
/// oracle solver ignores `sigma`.
pub fn closed_loop(
    spec: &MpcSpec,
    duration: f64,
    solver: SolverKind,
    sigma: f64,
    seed: u64,
) -> Result<ClosedLoopResult> {
    spec.validate()?;
    if !(duration >= spec.delta) {
        return Err(Error::Config(format!("duration {duration} is shorter than one sample")));
    }
    let steps = (duration / spec.delta + 1e-9).floor() as usize;
    let mut circuit = match solver {
        SolverKind::Circuit => Some(CircuitSolver::new(spec, sigma, seed)?),
        SolverKind::Oracle => None,
    };
    let mut out = ClosedLoopResult {
        times: Vec::with_capacity(steps),
        states: Vec::with_capacity(steps),
        inputs: Vec::with_capacity(steps),
        reports: Vec::with_capacity(steps),
        aborted: None,
    };
    let mut x = spec.plant_initial;
    for k in 0..steps {
        let nominal = build_mpc_lp_at(spec, x, k);
        let solved = match circuit.as_mut() {
            Some(cs) => cs.step(spec, x, k),
            None => {
                let s = oracle::solve_lp(&nominal);
                if s.is_optimal() {
                    Ok((
                        s.v_star,
                        StepReport {
                            lp_cost: 0.0,
                            u_cost: None,
                            u_crit: None,
                            u_cost_lowered: false,
                            residual: None,
                            method: None,
                        },
                    ))
                } else {
                    Err(Error::Infeasible)
                }
            }
        };
        let (v, mut report) = match solved {
            Ok(r) => r,
            Err(e) => {
                out.aborted = Some(format!("step {k}: {e}"));
                break;
            }
        };
        report.lp_cost = nominal.objective(&v);
        let u = v[spec.u_index(0)];
        out.times.push(k as f64 * spec.delta);
        out.states.push(x);
        out.inputs.push(u);
        out.reports.push(report);
        x = plant_step(x, u, spec.delta);
    }
    Ok(out)
}
