//! SPICE deck export.

use std::fmt::Write;

use super::{Circuit, RowKind};

#[derive(Debug, Clone, PartialEq)]
pub struct NetlistOptions {
    pub u_cost: f64,
    /// Series inductance per resistor branch, henries.
    pub branch_inductance: Option<f64>,
    pub r_on: f64,
    pub r_off: f64,
    pub tran_step: f64,
    pub tran_stop: f64,
}

impl NetlistOptions {
    pub fn new(u_cost: f64) -> Self {
        NetlistOptions {
            u_cost,
            branch_inductance: None,
            r_on: 1e-3,
            r_off: 1e9,
            tran_step: 1e-9,
            tran_stop: 1e-5,
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Deck with default switch parameters and no parasitics.
pub fn export_netlist(circuit: &Circuit, u_cost: f64) -> String {
    export_netlist_with(circuit, &NetlistOptions::new(u_cost))
}

/// Variable nodes are `V1..Vn`, constraint nodes `U0..Um` (`U0` is the
/// cost node). Row `i` reaches ground through `RN<i>` (negative) into node
/// `N<i>` and the source `VB<i>`; inequality rows put switch `S<i>` between
/// `U<i>` and `D<i>` so current can only leave `U<i>`.
pub fn export_netlist_with(circuit: &Circuit, opts: &NetlistOptions) -> String {
    let n = circuit.n_vars();
    let m = circuit.n_constraints();
    let g = circuit.g();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "* LP circuit: {n} variables, {} equality rows, {} inequality rows",
        circuit.n_eq(),
        circuit.n_ineq()
    );
    if circuit.n_ineq() > 0 {
        let _ = writeln!(
            s,
            ".model DSW SW(RON={} ROFF={} VT=0 VH=0)",
            num(opts.r_on),
            num(opts.r_off)
        );
    }
    let _ = writeln!(s, "VCOST U0 0 DC {}", num(opts.u_cost));

    for i in 0..=m {
        let kind = circuit.row_kind()[i];
        match kind {
            RowKind::Cost => {
                let _ = writeln!(s, "* row 0 cost");
            }
            RowKind::Equality => {
                let _ = writeln!(s, "* row {i} equality b={}", num(circuit.b()[i]));
            }
            RowKind::Inequality => {
                let _ = writeln!(s, "* row {i} inequality b={}", num(circuit.b()[i]));
            }
        }
        for j in 0..n {
            let gij = g[(i, j)];
            if gij <= 0.0 {
                continue;
            }
            let r = num(1.0 / gij);
            match opts.branch_inductance {
                None => {
                    let _ = writeln!(s, "R{i}_{} U{i} V{} {r}", j + 1, j + 1);
                }
                Some(l) => {
                    let _ = writeln!(s, "R{i}_{} U{i} X{i}_{} {r}", j + 1, j + 1);
                    let _ = writeln!(s, "L{i}_{} X{i}_{} V{} {}", j + 1, j + 1, j + 1, num(l));
                }
            }
        }
        if i == 0 {
            continue;
        }
        let rn = circuit.neg_resistance()[i];
        let src = circuit.b()[i] / circuit.g().row(i).sum();
        let top = if kind == RowKind::Inequality {
            let _ = writeln!(s, "S{i} U{i} D{i} U{i} D{i} DSW");
            format!("D{i}")
        } else {
            format!("U{i}")
        };
        let _ = writeln!(s, "RN{i} {top} N{i} {}", num(rn));
        let _ = writeln!(s, "VB{i} N{i} 0 DC {}", num(src));
    }
    for (&j, &v) in circuit.forced_nodes() {
        let _ = writeln!(s, "VF{} V{} 0 DC {}", j + 1, j + 1, num(v));
    }
    let _ = writeln!(s, ".op");
    let _ = writeln!(s, ".tran {} {}", num(opts.tran_step), num(opts.tran_stop));
    let _ = writeln!(s, ".end");
    s
}
