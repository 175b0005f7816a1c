//! Seeded generator of feasible, bounded LPs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::LinearProgram;
use crate::oracle::{certify, solve_lp};

const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomLpSpec {
    pub n_vars: usize,
    pub n_eq: usize,
    /// Includes the `n_vars` sign rows `−x_j ≤ 0` and one budget row
    /// `Σ x_j ≤ B`, so it must be at least `n_vars + 1`.
    pub n_ineq: usize,
    /// Probability that a matrix or cost entry is nonzero.
    pub density: f64,
    pub seed: u64,
}

impl RandomLpSpec {
    pub fn new(n_vars: usize, n_eq: usize, n_ineq: usize, seed: u64) -> Self {
        RandomLpSpec {
            n_vars,
            n_eq,
            n_ineq,
            density: 0.3,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_vars == 0 || self.n_eq >= self.n_vars {
            return Err(Error::Config(format!(
                "need 0 ≤ n_eq < n_vars, got n_eq = {}, n_vars = {}",
                self.n_eq, self.n_vars
            )));
        }
        if self.n_ineq < self.n_vars + 1 {
            return Err(Error::Config(format!(
                "n_ineq = {} is below n_vars + 1 = {} (sign rows plus budget row)",
                self.n_ineq,
                self.n_vars + 1
            )));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!("density must lie in (0, 1], got {}", self.density)));
        }
        Ok(())
    }
}

fn sparse_row<R: Rng>(rng: &mut R, n: usize, density: f64) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(density) { rng.gen_range(0.1..1.0) } else { 0.0 })
        .collect();
    // at least two entries so that no row pins a single variable
    while row.iter().filter(|&&x| x != 0.0).count() < 2.min(n) {
        let j = rng.gen_range(0..n);
        row[j] = rng.gen_range(0.1..1.0);
    }
    row
}

fn sample<R: Rng>(spec: &RandomLpSpec, rng: &mut R) -> LinearProgram {
    let n = spec.n_vars;
    let p = spec.n_eq;
    let q = spec.n_ineq;
    let v0 = DVector::from_fn(n, |_, _| rng.gen_range(0.5..2.0));

    let mut a_eq = DMatrix::zeros(p, n);
    for i in 0..p {
        let row = sparse_row(rng, n, spec.density);
        for j in 0..n {
            a_eq[(i, j)] = row[j];
        }
    }
    let b_eq = &a_eq * &v0;

    let mut a_ineq = DMatrix::zeros(q, n);
    let mut b_ineq = DVector::zeros(q);
    for j in 0..n {
        a_ineq[(j, j)] = -1.0;
    }
    for j in 0..n {
        a_ineq[(n, j)] = 1.0;
    }
    b_ineq[n] = v0.sum() + rng.gen_range(1.0..(n as f64).max(2.0));
    for i in n + 1..q {
        let row = sparse_row(rng, n, spec.density);
        let mut s = 0.0;
        for j in 0..n {
            a_ineq[(i, j)] = row[j];
            s += row[j] * v0[j];
        }
        b_ineq[i] = s + rng.gen_range(0.1..1.0);
    }

    let mut c: DVector<f64> =
        DVector::from_fn(n, |_, _| if rng.gen_bool(spec.density) { rng.gen_range(0.1..1.0) } else { 0.0 });
    if c.iter().all(|&x| x == 0.0) {
        c[rng.gen_range(0..n)] = rng.gen_range(0.1..1.0);
    }
    LinearProgram::new(c, a_eq, b_eq, a_ineq, b_ineq).expect("dimensions consistent by construction")
}

/// Feasible LP with a bounded feasible set and non-negative cost,
/// certified optimal by the oracle. Deterministic per seed.
pub fn generate_random_lp(spec: &RandomLpSpec) -> Result<LinearProgram> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..MAX_ATTEMPTS {
        let lp = sample(spec, &mut rng);
        let sol = solve_lp(&lp);
        if sol.is_optimal() && certify(&lp, &sol) <= 1e-7 {
            return Ok(lp);
        }
    }
    Err(Error::Generation(MAX_ATTEMPTS))
}
