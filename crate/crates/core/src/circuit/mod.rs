//! Resistor/diode networks realising a non-negative LP.
//!
//! Every variable is a node `V_j`. Every row `i` of the conductance matrix
//! `G = [cᵀ; A_eq; A_ineq]` is a node `U_i` joined to `V_j` by a resistor of
//! conductance `G_ij` (absent when `G_ij = 0`). Row 0 is the cost node,
//! driven by an external source `U_cost`. Each constraint node reaches
//! ground through a negative resistance `−1/Σ_j G_ij` in series with a
//! source `b_i / Σ_j G_ij`; inequality rows add an ideal diode that only
//! lets current leave the node.

mod netlist;
mod thevenin;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{build_primal_dual, canonicalize, CanonicalLP, LinearProgram, PrimalDualSystem};

pub use netlist::{export_netlist, export_netlist_with, NetlistOptions};
pub use thevenin::{thevenin_resistance, Port, PortNetwork, PortResistanceReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Cost,
    Equality,
    Inequality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    g: DMatrix<f64>,
    row_kind: Vec<RowKind>,
    /// Right-hand side per row; entry 0 (cost row) is unused and zero.
    b: DVector<f64>,
    /// `−1/Σ_j G_ij` per row; entry 0 is zero (the cost row has none).
    neg_resistance: DVector<f64>,
    forced: BTreeMap<usize, f64>,
}

impl Circuit {
    /// Build a circuit from its conductance matrix. Row 0 is the cost row,
    /// rows `1..=n_eq` equalities and the rest inequalities; `b` holds one
    /// entry per constraint row.
    pub fn new(g: DMatrix<f64>, n_eq: usize, b: DVector<f64>) -> Result<Self> {
        let rows = g.nrows();
        let n = g.ncols();
        if rows < 2 {
            return Err(Error::NoConstraints);
        }
        if b.len() != rows - 1 {
            return Err(Error::Dimension(format!(
                "{} constraint rows but {} right-hand sides",
                rows - 1,
                b.len()
            )));
        }
        if n_eq > rows - 1 {
            return Err(Error::Dimension(format!("{n_eq} equality rows out of {}", rows - 1)));
        }
        if g.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("circuit"));
        }
        for i in 0..rows {
            for j in 0..n {
                if g[(i, j)] < 0.0 {
                    return Err(Error::NegativeConductance { row: i, col: j });
                }
            }
        }
        for j in 0..n {
            if g.column(j).sum() <= 0.0 {
                return Err(Error::ZeroColumn(j));
            }
        }
        let mut neg_resistance = DVector::zeros(rows);
        for i in 1..rows {
            let s = g.row(i).sum();
            if s <= 0.0 {
                return Err(Error::ZeroRow(i));
            }
            neg_resistance[i] = -1.0 / s;
        }
        let mut row_kind = vec![RowKind::Cost];
        row_kind.extend(std::iter::repeat_n(RowKind::Equality, n_eq));
        row_kind.extend(std::iter::repeat_n(RowKind::Inequality, rows - 1 - n_eq));
        let mut bb = DVector::zeros(rows);
        bb.rows_mut(1, rows - 1).copy_from(&b);
        Ok(Circuit {
            g,
            row_kind,
            b: bb,
            neg_resistance,
            forced: BTreeMap::new(),
        })
    }

    /// Circuit of an LP whose cost and constraint matrices are already
    /// non-negative.
    pub fn from_nonnegative_lp(lp: &LinearProgram) -> Result<Self> {
        let n = lp.n_vars();
        let m = lp.n_eq() + lp.n_ineq();
        let mut g = DMatrix::zeros(m + 1, n);
        g.row_mut(0).copy_from(&lp.c().transpose());
        if m > 0 {
            g.rows_mut(1, m).copy_from(&lp.stacked_a());
        }
        Self::new(g, lp.n_eq(), lp.stacked_b())
    }

    /// The LP this circuit realises (forced nodes are not included).
    pub fn to_lp(&self) -> LinearProgram {
        let p = self.n_eq();
        let q = self.n_ineq();
        let n = self.n_vars();
        LinearProgram::new(
            self.g.row(0).transpose(),
            self.g.view((1, 0), (p, n)).into_owned(),
            self.b.rows(1, p).into_owned(),
            self.g.view((1 + p, 0), (q, n)).into_owned(),
            self.b.rows(1 + p, q).into_owned(),
        )
        .expect("circuit rows are consistent")
    }

    /// [`Circuit::to_lp`] plus one equality row `V_j = value` per forced
    /// node, which is what the forced circuit solves.
    pub fn to_lp_with_forced(&self) -> LinearProgram {
        let lp = self.to_lp();
        if self.forced.is_empty() {
            return lp;
        }
        let n = self.n_vars();
        let p = lp.n_eq();
        let k = self.forced.len();
        let mut a_eq = DMatrix::zeros(p + k, n);
        let mut b_eq = DVector::zeros(p + k);
        a_eq.rows_mut(0, p).copy_from(lp.a_eq());
        b_eq.rows_mut(0, p).copy_from(lp.b_eq());
        for (r, (&j, &v)) in self.forced.iter().enumerate() {
            a_eq[(p + r, j)] = 1.0;
            b_eq[p + r] = v;
        }
        LinearProgram::new(lp.c().clone(), a_eq, b_eq, lp.a_ineq().clone(), lp.b_ineq().clone())
            .expect("forced rows match the variable count")
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn row_kind(&self) -> &[RowKind] {
        &self.row_kind
    }
    /// Per-row right-hand side; index 0 is the (unused) cost row.
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn neg_resistance(&self) -> &DVector<f64> {
        &self.neg_resistance
    }
    pub fn forced_nodes(&self) -> &BTreeMap<usize, f64> {
        &self.forced
    }

    pub fn n_vars(&self) -> usize {
        self.g.ncols()
    }
    /// Number of constraint rows `m` (the cost row is not counted).
    pub fn n_constraints(&self) -> usize {
        self.g.nrows() - 1
    }
    pub fn n_eq(&self) -> usize {
        self.row_kind.iter().filter(|k| **k == RowKind::Equality).count()
    }
    pub fn n_ineq(&self) -> usize {
        self.row_kind.iter().filter(|k| **k == RowKind::Inequality).count()
    }
    pub fn cost(&self) -> DVector<f64> {
        self.g.row(0).transpose()
    }
    /// Constraint block `A` (rows 1..=m of `G`).
    pub fn a(&self) -> DMatrix<f64> {
        self.g.rows(1, self.n_constraints()).into_owned()
    }
    /// `Σ_j G_ij` for every row.
    pub fn row_sums(&self) -> DVector<f64> {
        DVector::from_fn(self.g.nrows(), |i, _| self.g.row(i).sum())
    }
    /// Resistance of the `(i, j)` resistor, `None` when absent.
    pub fn resistance(&self, i: usize, j: usize) -> Option<f64> {
        let g = self.g[(i, j)];
        (g > 0.0).then(|| 1.0 / g)
    }
    /// Indices (into `1..=m`) of inequality rows.
    pub fn ineq_rows(&self) -> std::ops::Range<usize> {
        let p = self.n_eq();
        1 + p..1 + self.n_constraints()
    }

    /// Pin variable node `j` to `volts` with an ideal source.
    pub fn force_node(&mut self, j: usize, volts: f64) -> Result<()> {
        if j >= self.n_vars() {
            return Err(Error::Dimension(format!("variable node {j} out of range")));
        }
        if !volts.is_finite() {
            return Err(Error::NonFinite("forced node voltage"));
        }
        self.forced.insert(j, volts);
        Ok(())
    }

    pub fn release_node(&mut self, j: usize) {
        self.forced.remove(&j);
    }

    /// Change the source target of constraint row `row` (1-based).
    pub fn set_rhs(&mut self, row: usize, value: f64) -> Result<()> {
        if row == 0 || row > self.n_constraints() {
            return Err(Error::Dimension(format!("row {row} is not a constraint row")));
        }
        self.b[row] = value;
        Ok(())
    }

    /// Scale every resistor by its own factor `1 + ε`, `ε ~ N(0, sigma)`.
    /// Negative resistances track the perturbed row sums, so the perturbed
    /// circuit realises the LP with perturbed coefficients.
    pub fn perturbed<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::Config(format!("perturbation sigma must be ≥ 0, got {sigma}")));
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut g = self.g.clone();
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                if g[(i, j)] > 0.0 {
                    // Resistor values are perturbed; conductance follows.
                    let r = (1.0 + normal.sample(rng)) / g[(i, j)];
                    if r <= 0.0 {
                        return Err(Error::Config("perturbation produced a non-positive resistor".into()));
                    }
                    g[(i, j)] = 1.0 / r;
                }
            }
        }
        let mut out = Circuit::new(g, self.n_eq(), self.b.rows(1, self.n_constraints()).into_owned())?;
        out.forced = self.forced.clone();
        Ok(out)
    }
}

/// Compile a canonical LP into its circuit.
pub fn compile(clp: &CanonicalLP) -> Result<Circuit> {
    Circuit::from_nonnegative_lp(&clp.inner)
}

/// Circuit of the primal–dual feasibility problem together with the row of
/// its zero-duality-gap sub-circuit, the single connection between the
/// primal and dual halves.
#[derive(Debug, Clone)]
pub struct PrimalDualCircuit {
    pub circuit: Circuit,
    pub system: PrimalDualSystem,
    /// Circuit row id (1-based) of the gap equality; `None` when the gap
    /// row is empty and was left out.
    pub gap_row: Option<usize>,
}

impl PrimalDualCircuit {
    /// Number of primal variable nodes (`V`), which come first.
    pub fn n_primal(&self) -> usize {
        self.system.n
    }
}

/// Canonicalise `lp` and build the circuit of its primal–dual problem.
pub fn compile_primal_dual(lp: &LinearProgram) -> Result<(PrimalDualCircuit, CanonicalLP)> {
    let clp = canonicalize(lp)?;
    Ok((compile_primal_dual_nonnegative(&clp.inner)?, clp))
}

/// Primal–dual circuit of an LP that is already non-negative, e.g. the LP
/// read back from a (possibly perturbed) circuit.
pub fn compile_primal_dual_nonnegative(lp: &LinearProgram) -> Result<PrimalDualCircuit> {
    if !lp.is_nonnegative() {
        return Err(Error::Assumption {
            assumption: "non-negative coefficients",
            detail: "canonicalize the problem first".into(),
        });
    }
    let pd = build_primal_dual(lp);
    let sys = &pd.system;
    let (circuit, gap_row) = if pd.degenerate_gap {
        let keep: Vec<usize> = (0..sys.n_eq()).filter(|&i| i != pd.gap_row).collect();
        let a_eq = DMatrix::from_fn(keep.len(), sys.n_vars(), |i, j| sys.a_eq()[(keep[i], j)]);
        let b_eq = DVector::from_fn(keep.len(), |i, _| sys.b_eq()[keep[i]]);
        let reduced = LinearProgram::new(
            sys.c().clone(),
            a_eq,
            b_eq,
            sys.a_ineq().clone(),
            sys.b_ineq().clone(),
        )?;
        (Circuit::from_nonnegative_lp(&reduced)?, None)
    } else {
        (Circuit::from_nonnegative_lp(sys)?, Some(1 + pd.gap_row))
    };
    Ok(PrimalDualCircuit {
        circuit,
        system: pd,
        gap_row,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn hardware_lp() -> LinearProgram {
        LinearProgram::from_rows(
            &[-1.0, -1.0],
            &[],
            &[],
            &[
                vec![5.0 / 12.0, -1.0],
                vec![5.0 / 2.0, 1.0],
                vec![-1.0, 0.0],
                vec![0.0, 1.0],
            ],
            &[35.0 / 12.0, 35.0 / 2.0, 5.0, 5.0],
        )
        .unwrap()
    }

    #[test]
    fn unit_equality_circuit_shape() {
        let lp = LinearProgram::from_rows(&[1.0], &[vec![1.0]], &[1.0], &[], &[]).unwrap();
        let c = compile(&canonicalize(&lp).unwrap()).unwrap();
        assert_eq!(c.g().shape(), (3, 2));
        assert_eq!(c.row_kind(), &[RowKind::Cost, RowKind::Equality, RowKind::Equality]);
        // row 1: x⁺ = 1 has row sum 1, row 2: x⁺ + x⁻ = 0 has row sum 2
        assert_eq!(c.neg_resistance()[1], -1.0);
        assert_eq!(c.neg_resistance()[2], -0.5);
        assert_eq!(c.b().as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(c.resistance(0, 1), None);
        assert_eq!(c.resistance(2, 1), Some(1.0));
    }

    #[test]
    fn hardware_circuit_resistors() {
        let c = compile(&canonicalize(&hardware_lp()).unwrap()).unwrap();
        // cost, 2 pairing equalities, 4 inequalities; columns x1⁺ x2⁺ x1⁻ x2⁻
        assert_eq!(c.n_eq(), 2);
        assert_eq!(c.n_ineq(), 4);
        let r = c.ineq_rows().start;
        assert!((c.resistance(r, 0).unwrap() - 12.0 / 5.0).abs() < 1e-12);
        assert_eq!(c.resistance(r, 3), Some(1.0));
        assert_eq!(c.resistance(r + 1, 0), Some(1.0 / 2.5));
        assert_eq!(c.resistance(r + 1, 1), Some(1.0));
        assert_eq!(c.resistance(r + 2, 2), Some(1.0));
        assert_eq!(c.b()[r], 35.0 / 12.0);
    }

    #[test]
    fn negative_resistance_cancels_row_conductance() {
        let c = compile(&canonicalize(&hardware_lp()).unwrap()).unwrap();
        let sums = c.row_sums();
        for i in 1..=c.n_constraints() {
            assert_eq!(sums[i] * c.neg_resistance()[i], -1.0);
        }
    }

    #[test]
    fn rejects_invalid_conductances() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, -1.0]);
        assert!(matches!(
            Circuit::new(g, 1, DVector::from_vec(vec![1.0])),
            Err(Error::NegativeConductance { row: 1, col: 1 })
        ));
        let g = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]);
        assert_eq!(Circuit::new(g, 1, DVector::from_vec(vec![1.0, 1.0])), Err(Error::ZeroRow(2)));
    }

    #[test]
    fn round_trips_through_lp() {
        let clp = canonicalize(&hardware_lp()).unwrap();
        let c = compile(&clp).unwrap();
        assert_eq!(c.to_lp(), clp.inner);
    }

    #[test]
    fn primal_dual_circuit_counts() {
        let lp = hardware_lp();
        let (pdc, clp) = compile_primal_dual(&lp).unwrap();
        let inner = &clp.inner;
        let (n, p, q) = (inner.n_vars(), inner.n_eq(), inner.n_ineq());
        let c = &pdc.circuit;
        // primal rows + dual rows (equalities and sign rows) + gap + pairing
        assert_eq!(c.n_constraints(), (p + q) + (n + q) + 1 + (p + q));
        assert_eq!(c.n_vars(), n + 2 * (p + q));
        assert_eq!(c.cost().sum(), 0.0);
        let gap = pdc.gap_row.unwrap();
        assert_eq!(c.row_kind()[gap], RowKind::Equality);
        // the gap row reaches both primal and dual variable nodes
        assert!((0..n).any(|j| c.g()[(gap, j)] > 0.0));
        assert!((n..c.n_vars()).any(|j| c.g()[(gap, j)] > 0.0));
    }

    #[test]
    fn perturbation_keeps_invariants() {
        let c = compile(&canonicalize(&hardware_lp()).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = c.perturbed(0.01, &mut rng).unwrap();
        let sums = p.row_sums();
        for i in 1..=p.n_constraints() {
            assert!((sums[i] * p.neg_resistance()[i] + 1.0).abs() < 1e-15);
        }
        for (a, b) in c.g().iter().zip(p.g().iter()) {
            assert_eq!(*a == 0.0, *b == 0.0);
            if *a > 0.0 {
                assert!((b / a - 1.0).abs() < 0.06);
            }
        }
        assert_eq!(p.b(), c.b());
    }
}
