//! Time-domain simulation of the LP circuit with series inductance on every
//! resistor branch and switch-modelled diodes.
//!
//! Each step replaces an inductive branch by its implicit companion model
//! (conductance plus history current) and solves the node equations for the
//! free variable nodes and the constraint nodes. Diode states are updated
//! once per step from the solved currents and voltages; the nodal matrix is
//! refactored only when a diode changes state.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, RowKind};
use crate::error::{Error, Result};
use crate::lcp::LcpMethod;
use crate::steady::SteadyState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    BackwardEuler,
    Trapezoidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientConfig {
    /// Series inductance of every resistor branch, henries.
    pub branch_inductance: f64,
    pub diode_r_on: f64,
    pub diode_r_off: f64,
    pub step: f64,
    pub horizon: f64,
    pub integrator: Integrator,
    /// Relative cost band used for settling.
    pub settle_tolerance: f64,
}

impl Default for TransientConfig {
    fn default() -> Self {
        TransientConfig {
            branch_inductance: 100e-9,
            diode_r_on: 1e-9,
            diode_r_off: 1e12,
            step: 1e-9,
            horizon: 20e-6,
            integrator: Integrator::BackwardEuler,
            settle_tolerance: 0.005,
        }
    }
}

impl TransientConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step > 0.0
            && self.horizon >= self.step
            && self.diode_r_on > 0.0
            && self.diode_r_off > self.diode_r_on
            && self.branch_inductance >= 0.0
            && self.settle_tolerance > 0.0
            && [self.step, self.horizon, self.diode_r_off, self.branch_inductance]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid transient configuration: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Variable-node voltages per time.
    pub v_nodes: Vec<DVector<f64>>,
    /// `cᵀV` per time.
    pub cost_values: Vec<f64>,
    /// Diode states (true = conducting) in force during each step.
    pub diode_states: Vec<Vec<bool>>,
    /// Constraint-node voltages and row currents at the last step.
    pub final_u: DVector<f64>,
    pub final_i: DVector<f64>,
    pub final_i_cost: f64,
    pub u_cost: f64,
    /// Number of nodal matrix factorisations.
    pub factorizations: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_v(&self) -> &DVector<f64> {
        self.v_nodes.last().expect("trajectory has at least one step")
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_values.last().expect("trajectory has at least one step")
    }

    /// Time of the last step at which any diode changed state, if any did.
    pub fn last_diode_change(&self) -> Option<f64> {
        (1..self.diode_states.len())
            .rev()
            .find(|&k| self.diode_states[k] != self.diode_states[k - 1])
            .map(|k| self.times[k])
    }

    /// The last point as a circuit state, for residual checks.
    pub fn final_state(&self) -> SteadyState {
        let last = self.diode_states.last().cloned().unwrap_or_default();
        SteadyState {
            v: self.final_v().clone(),
            u: self.final_u.clone(),
            i: self.final_i.clone(),
            i_cost: self.final_i_cost,
            u_cost: self.u_cost,
            active_set: (0..last.len()).filter(|&k| last[k]).collect(),
            method: LcpMethod::Trivial,
            pivots: 0,
        }
    }

    /// CSV with header `t,V1..Vn,cost,d1..dq`, one row per step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.v_nodes.first().map_or(0, |v| v.len());
        let q = self.diode_states.first().map_or(0, |d| d.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|j| format!("V{j}")));
        header.push("cost".into());
        header.extend((1..=q).map(|k| format!("d{k}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.times.len() {
            let mut row = vec![format!("{:e}", self.times[k])];
            row.extend(self.v_nodes[k].iter().map(|x| format!("{x:e}")));
            row.push(format!("{:e}", self.cost_values[k]));
            row.extend(self.diode_states[k].iter().map(|&d| if d { "1" } else { "0" }.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

struct Companion {
    integrator: Integrator,
    g: Vec<f64>,
    hist: Vec<f64>,
}

impl Companion {
    fn history(&self, k: usize, current: f64, du_prev: f64) -> f64 {
        match self.integrator {
            Integrator::BackwardEuler => self.hist[k] * current,
            Integrator::Trapezoidal => self.g[k] * du_prev + self.hist[k] * current,
        }
    }
}

struct Branch {
    row: usize,
    var: usize,
    resistance: f64,
}

/// Simulate from all-zero currents with every diode blocking.
pub fn simulate(circuit: &Circuit, u_cost: f64, cfg: &TransientConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if !u_cost.is_finite() {
        return Err(Error::NonFinite("u_cost"));
    }
    let n = circuit.n_vars();
    let m = circuit.n_constraints();
    let g = circuit.g();
    let ineq_start = circuit.ineq_rows().start;
    let q = circuit.n_ineq();
    let forced = circuit.forced_nodes();

    // Unknowns: free variable nodes, then U_1..U_m.
    let mut var_index = vec![usize::MAX; n];
    let mut free = 0;
    for j in 0..n {
        if !forced.contains_key(&j) {
            var_index[j] = free;
            free += 1;
        }
    }
    let size = free + m;
    let u_index = |i: usize| free + i - 1;

    let mut branches = Vec::new();
    for i in 0..=m {
        for j in 0..n {
            if g[(i, j)] > 0.0 {
                branches.push(Branch {
                    row: i,
                    var: j,
                    resistance: 1.0 / g[(i, j)],
                });
            }
        }
    }
    let h = cfg.step;
    let l = cfg.branch_inductance;
    // Companion model i₁ = g_b·Δu₁ + history. The trapezoidal rule is
    // started, and restarted after every diode switch, with one backward
    // Euler step since the voltages right before are not consistent.
    let companion = |integrator: Integrator| -> Companion {
        let (g, hist) = branches
            .iter()
            .map(|b| match integrator {
                Integrator::BackwardEuler => {
                    let gb = 1.0 / (l / h + b.resistance);
                    (gb, gb * l / h)
                }
                Integrator::Trapezoidal => {
                    let gb = 1.0 / (2.0 * l / h + b.resistance);
                    (gb, gb * (2.0 * l / h - b.resistance))
                }
            })
            .unzip();
        Companion {
            integrator,
            g,
            hist,
        }
    };
    let modes = [companion(Integrator::BackwardEuler), companion(cfg.integrator)];

    let row_r = circuit.row_sums();
    let source = DVector::from_fn(m + 1, |i, _| if i == 0 { 0.0 } else { circuit.b()[i] / row_r[i] });
    let neg_r = circuit.neg_resistance();
    let row_conductance = |i: usize, on: &[bool]| -> f64 {
        match circuit.row_kind()[i] {
            RowKind::Cost => 0.0,
            RowKind::Equality => 1.0 / neg_r[i],
            RowKind::Inequality => {
                let rd = if on[i - ineq_start] { cfg.diode_r_on } else { cfg.diode_r_off };
                1.0 / (rd + neg_r[i])
            }
        }
    };

    let node_voltage = |x: &DVector<f64>, row: Option<usize>, var: Option<usize>| -> f64 {
        match (row, var) {
            (Some(0), _) => u_cost,
            (Some(i), _) => x[u_index(i)],
            (None, Some(j)) => match forced.get(&j) {
                Some(&v) => v,
                None => x[var_index[j]],
            },
            _ => unreachable!(),
        }
    };

    let assemble = |on: &[bool], comp: &Companion| -> DMatrix<f64> {
        let mut y = DMatrix::zeros(size, size);
        for (b, &gb) in branches.iter().zip(&comp.g) {
            let a = (b.row > 0).then(|| u_index(b.row));
            let c = (var_index[b.var] != usize::MAX).then(|| var_index[b.var]);
            if let Some(a) = a {
                y[(a, a)] += gb;
            }
            if let Some(c) = c {
                y[(c, c)] += gb;
            }
            if let (Some(a), Some(c)) = (a, c) {
                y[(a, c)] -= gb;
                y[(c, a)] -= gb;
            }
        }
        for i in 1..=m {
            let k = u_index(i);
            y[(k, k)] += row_conductance(i, on);
        }
        y
    };

    let steps = (cfg.horizon / h).round().max(1.0) as usize;
    let mut on = vec![false; q];
    let mut lus: [Option<LU<f64, Dyn, Dyn>>; 2] = [None, None];
    let mut factorizations = 0;
    let mut restart = true;
    let mut i_branch = vec![0.0; branches.len()];
    let mut du_prev = vec![0.0; branches.len()];
    let cost = circuit.cost();

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps),
        v_nodes: Vec::with_capacity(steps),
        cost_values: Vec::with_capacity(steps),
        diode_states: Vec::with_capacity(steps),
        final_u: DVector::zeros(m),
        final_i: DVector::zeros(m),
        final_i_cost: 0.0,
        u_cost,
        factorizations: 0,
    };

    for step in 1..=steps {
        let t = step as f64 * h;
        let mode = usize::from(!restart && cfg.integrator == Integrator::Trapezoidal);
        let comp = &modes[mode];
        if lus[mode].is_none() {
            lus[mode] = Some(assemble(&on, comp).lu());
            factorizations += 1;
        }
        let mut rhs = DVector::zeros(size);
        for (k, b) in branches.iter().enumerate() {
            let hist = comp.history(k, i_branch[k], du_prev[k]);
            // Known voltages at either end move to the right-hand side.
            let gb = comp.g[k];
            let a = (b.row > 0).then(|| u_index(b.row));
            let c = (var_index[b.var] != usize::MAX).then(|| var_index[b.var]);
            if let Some(a) = a {
                rhs[a] -= hist;
                if c.is_none() {
                    rhs[a] += gb * forced[&b.var];
                }
            }
            if let Some(c) = c {
                rhs[c] += hist;
                if a.is_none() {
                    rhs[c] += gb * u_cost;
                }
            }
        }
        for i in 1..=m {
            rhs[u_index(i)] += row_conductance(i, &on) * source[i];
        }
        let x = lus[mode]
            .as_ref()
            .expect("factored above")
            .solve(&rhs)
            .ok_or_else(|| Error::Singular(format!("nodal matrix singular at t = {t:e}")))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { time: t });
        }

        let mut i_cost = 0.0;
        for (k, b) in branches.iter().enumerate() {
            let du = node_voltage(&x, Some(b.row), None) - node_voltage(&x, None, Some(b.var));
            let hist = comp.history(k, i_branch[k], du_prev[k]);
            i_branch[k] = comp.g[k] * du + hist;
            du_prev[k] = du;
            if b.row == 0 {
                i_cost -= i_branch[k];
            }
        }
        let v = DVector::from_fn(n, |j, _| node_voltage(&x, None, Some(j)));
        let mut row_i = DVector::zeros(m);
        for i in 1..=m {
            row_i[i - 1] = row_conductance(i, &on) * (x[u_index(i)] - source[i]);
        }
        traj.times.push(t);
        traj.cost_values.push(cost.dot(&v));
        traj.v_nodes.push(v);
        traj.diode_states.push(on.clone());
        if step == steps {
            traj.final_u = DVector::from_fn(m, |i, _| x[u_index(i + 1)]);
            traj.final_i = row_i;
            traj.final_i_cost = i_cost;
            break;
        }

        // Diode update: a conducting diode opens when its current reverses,
        // a blocking one closes when forward biased.
        let mut changed = false;
        for k in 0..q {
            let i = ineq_start + k;
            let next = if on[k] { row_i[i - 1] >= 0.0 } else { x[u_index(i)] > source[i] };
            if next != on[k] {
                on[k] = next;
                changed = true;
            }
        }
        restart = changed;
        if changed {
            lus = [None, None];
        }
    }
    traj.factorizations = factorizations;
    Ok(traj)
}

/// First time after which `|cost − reference| ≤ rel_tol·max(1, |reference|)`
/// holds for the rest of the trajectory; `None` if the last point is
/// outside the band.
pub fn settling_time(traj: &Trajectory, reference_cost: f64, rel_tol: f64) -> Option<f64> {
    let band = rel_tol * reference_cost.abs().max(1.0);
    let inside = |c: f64| (c - reference_cost).abs() <= band;
    if !traj.cost_values.last().is_some_and(|&c| inside(c)) {
        return None;
    }
    let first_in = (0..traj.cost_values.len())
        .rev()
        .take_while(|&k| inside(traj.cost_values[k]))
        .last()
        .expect("last point is inside");
    // A trajectory inside the band from its first sample settled at t = 0.
    if first_in == 0 {
        Some(0.0)
    } else {
        Some(traj.times[first_in])
    }
}
