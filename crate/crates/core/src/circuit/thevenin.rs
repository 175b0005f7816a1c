//! Equivalent resistance between ports of the resistor network left after
//! removing the diodes and zeroing the sources.
//!
//! Each constraint row `i` is drawn with its diode/source branch swapped so
//! the row is the chain `β_i -[−1/Σ_j G_ij]- α_i -[G_ij]- V_j`, with `β_i`
//! the port node and `α_i` the row node. The cost row has no
//! negative resistor and its port is `α_0` itself.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Circuit, RowKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Port {
    Cost,
    /// Constraint row, 1-based.
    Row(usize),
    /// Common node of the shorted sources; only connected under
    /// [`PortNetwork::with_sources_shorted`].
    Ground,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortResistanceReport {
    pub pairs: Vec<(Port, Port, f64)>,
    /// Parallel combination of the cost resistors, `1/Σ_i c_i`.
    pub cost_port_lower_bound: f64,
}

pub struct PortNetwork<'a> {
    circuit: &'a Circuit,
    /// Per row (index 0 unused): port node tied to ground.
    grounded: Vec<bool>,
    ground_forced: bool,
}

impl<'a> PortNetwork<'a> {
    /// Resistor-only N-port: every port floats.
    pub fn new(circuit: &'a Circuit) -> Self {
        PortNetwork {
            circuit,
            grounded: vec![false; circuit.n_constraints() + 1],
            ground_forced: false,
        }
    }

    /// Network seen with every source replaced by a short: equality rows
    /// and the inequality rows marked `conducting` reach ground, blocking
    /// diodes are open, forced variable nodes are grounded.
    pub fn with_sources_shorted(circuit: &'a Circuit, conducting: &[bool]) -> Result<Self> {
        let q = circuit.n_ineq();
        if conducting.len() != q {
            return Err(Error::Dimension(format!("{} diode states for {q} inequality rows", conducting.len())));
        }
        let start = circuit.ineq_rows().start;
        let grounded = (0..=circuit.n_constraints())
            .map(|i| match circuit.row_kind()[i] {
                RowKind::Cost => false,
                RowKind::Equality => true,
                RowKind::Inequality => conducting[i - start],
            })
            .collect();
        Ok(PortNetwork {
            circuit,
            grounded,
            ground_forced: true,
        })
    }

    fn ground(&self) -> usize {
        self.circuit.n_vars() + 2 * self.circuit.n_constraints() + 1
    }

    fn var_node(&self, j: usize) -> usize {
        if self.ground_forced && self.circuit.forced_nodes().contains_key(&j) {
            self.ground()
        } else {
            j
        }
    }

    fn alpha(&self, i: usize) -> usize {
        self.circuit.n_vars() + i
    }

    fn beta(&self, i: usize) -> usize {
        if self.grounded[i] {
            self.ground()
        } else {
            self.circuit.n_vars() + self.circuit.n_constraints() + i
        }
    }

    fn port_node(&self, p: Port) -> Result<usize> {
        match p {
            Port::Cost => Ok(self.alpha(0)),
            Port::Row(i) if i >= 1 && i <= self.circuit.n_constraints() => Ok(self.beta(i)),
            Port::Row(i) => Err(Error::Dimension(format!("row {i} is not a constraint row"))),
            Port::Ground => Ok(self.ground()),
        }
    }

    fn edges(&self) -> Vec<(usize, usize, f64)> {
        let c = self.circuit;
        let g = c.g();
        let mut out = Vec::new();
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                if g[(i, j)] > 0.0 {
                    out.push((self.alpha(i), self.var_node(j), g[(i, j)]));
                }
            }
            if i > 0 {
                out.push((self.alpha(i), self.beta(i), 1.0 / c.neg_resistance()[i]));
            }
        }
        out
    }

    /// Equivalent resistance between two ports, by injecting a unit current
    /// at `a` and drawing it out at `b`.
    pub fn resistance(&self, a: Port, b: Port) -> Result<f64> {
        let na = self.port_node(a)?;
        let nb = self.port_node(b)?;
        if na == nb {
            return Ok(0.0);
        }
        let edges = self.edges();
        let total = self.ground() + 1;
        let mut adj = vec![Vec::new(); total];
        for (k, &(u, v, _)) in edges.iter().enumerate() {
            adj[u].push(k);
            adj[v].push(k);
        }
        let mut index = vec![usize::MAX; total];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([na]);
        index[na] = 0;
        order.push(na);
        while let Some(u) = queue.pop_front() {
            for &k in &adj[u] {
                let (x, y, _) = edges[k];
                let w = if x == u { y } else { x };
                if index[w] == usize::MAX {
                    index[w] = order.len();
                    order.push(w);
                    queue.push_back(w);
                }
            }
        }
        if index[nb] == usize::MAX {
            return Err(Error::Singular(format!("ports {a:?} and {b:?} are not connected")));
        }

        let size = order.len();
        let mut lap = DMatrix::zeros(size, size);
        for &(u, v, g) in &edges {
            if u == v || index[u] == usize::MAX {
                continue;
            }
            let (iu, iv) = (index[u], index[v]);
            lap[(iu, iu)] += g;
            lap[(iv, iv)] += g;
            lap[(iu, iv)] -= g;
            lap[(iv, iu)] -= g;
        }
        let (ia, ib) = (index[na], index[nb]);

        // Reference the network at b and solve for the potential at a.
        let keep: Vec<usize> = (0..size).filter(|&k| k != ib).collect();
        let reduced = DMatrix::from_fn(keep.len(), keep.len(), |r, s| lap[(keep[r], keep[s])]);
        let pos_a = keep.iter().position(|&k| k == ia).expect("a differs from b");
        let mut rhs = DVector::zeros(keep.len());
        rhs[pos_a] = 1.0;
        if let Some(phi) = reduced.clone().lu().solve(&rhs) {
            let res = (&reduced * &phi - &rhs).amax();
            if phi.iter().all(|x| x.is_finite()) && res <= 1e-9 * (1.0 + reduced.amax() * phi.amax()) {
                return Ok(phi[pos_a]);
            }
        }

        // Singular reduced system: fall back to the pseudo-inverse of the
        // full Laplacian, R = dᵀ L⁺ d with d = e_a − e_b.
        let mut d = DVector::zeros(size);
        d[ia] = 1.0;
        d[ib] = -1.0;
        let tol = 1e-12 * (1.0 + lap.amax());
        let pinv = lap
            .pseudo_inverse(tol)
            .map_err(|e| Error::Singular(e.to_string()))?;
        let r = d.dot(&(pinv * &d));
        if !r.is_finite() {
            return Err(Error::Singular(format!("no finite resistance between {a:?} and {b:?}")));
        }
        Ok(r)
    }

    pub fn report(&self, pairs: &[(Port, Port)]) -> Result<PortResistanceReport> {
        let pairs = pairs
            .iter()
            .map(|&(a, b)| Ok((a, b, self.resistance(a, b)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PortResistanceReport {
            pairs,
            cost_port_lower_bound: 1.0 / self.circuit.cost().sum(),
        })
    }
}

/// Equivalent resistance between two ports of the resistor-only network.
pub fn thevenin_resistance(circuit: &Circuit, a: Port, b: Port) -> Result<f64> {
    PortNetwork::new(circuit).resistance(a, b)
}
