//! Two-phase primal simplex for the tiny dense LPs of dead-time splitting.
//!
//! Maximizes c·x subject to mixed ≤/= constraints and x ≥ 0. Bland's rule
//! (lowest eligible index enters, lowest basic index breaks ratio ties)
//! prevents cycling and, together with the fixed column order, makes the
//! returned vertex deterministic.

use crate::error::{Error, Result};

const TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cmp {
    Le,
    Eq,
}

#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    pub coeffs: Vec<f64>,
    pub cmp: Cmp,
    pub rhs: f64,
}

/// Result of a solve: the structural variables and the objective value.
#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

struct Tableau {
    /// rows × (ncols + 1); last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn rhs(&self, row: usize) -> f64 {
        self.t[row][self.ncols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= piv;
        }
        for r in 0..self.t.len() {
            if r == row {
                continue;
            }
            let f = self.t[r][col];
            if f != 0.0 {
                for c in 0..=self.ncols {
                    let delta = f * self.t[row][c];
                    self.t[r][c] -= delta;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Bland-rule simplex on the current basis; `cost[j]` is the
    /// maximization objective over all columns, `allowed` masks columns that
    /// may enter.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<()> {
        for _ in 0..MAX_PIVOTS {
            // Reduced costs c_j − z_j for nonbasic allowed columns.
            let mut entering = None;
            for j in 0..self.ncols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let mut z = 0.0;
                for (r, &bv) in self.basis.iter().enumerate() {
                    z += cost[bv] * self.t[r][j];
                }
                if cost[j] - z > TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(col) = entering else {
                return Ok(());
            };
            let mut leaving: Option<(usize, f64)> = None;
            for r in 0..self.t.len() {
                let a = self.t[r][col];
                if a > TOL {
                    let ratio = self.rhs(r) / a;
                    let better = match leaving {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - TOL
                                || (ratio < lratio + TOL && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leaving = Some((r, ratio));
                    }
                }
            }
            let Some((row, _)) = leaving else {
                return Err(Error::LinearProgram("objective is unbounded".into()));
            };
            self.pivot(row, col);
        }
        Err(Error::LinearProgram(format!(
            "no convergence within {MAX_PIVOTS} pivots"
        )))
    }
}

/// Maximize `objective`·x subject to `constraints` and x ≥ 0.
pub(crate) fn maximize(objective: &[f64], constraints: &[Constraint]) -> Result<LpSolution> {
    let n = objective.len();
    let mut rows: Vec<(Vec<f64>, Cmp, f64)> = Vec::with_capacity(constraints.len());
    for con in constraints {
        if con.coeffs.len() != n {
            return Err(Error::LinearProgram(format!(
                "constraint has {} coefficients for {n} variables",
                con.coeffs.len()
            )));
        }
        let (mut coeffs, mut rhs) = (con.coeffs.clone(), con.rhs);
        if rhs < 0.0 {
            match con.cmp {
                Cmp::Eq => {
                    for v in coeffs.iter_mut() {
                        *v = -*v;
                    }
                    rhs = -rhs;
                }
                Cmp::Le => {
                    return Err(Error::LinearProgram(
                        "upper-bound rows must have nonnegative right-hand sides".into(),
                    ));
                }
            }
        }
        rows.push((coeffs, con.cmp, rhs));
    }

    let n_slack = rows.iter().filter(|(_, cmp, _)| *cmp == Cmp::Le).count();
    let n_art = rows.len() - n_slack;
    let ncols = n + n_slack + n_art;
    let mut t = Vec::with_capacity(rows.len());
    let mut basis = Vec::with_capacity(rows.len());
    let mut slack_at = n;
    let mut art_at = n + n_slack;
    let mut art_cols = Vec::new();
    for (coeffs, cmp, rhs) in &rows {
        let mut row = vec![0.0; ncols + 1];
        row[..n].copy_from_slice(coeffs);
        row[ncols] = *rhs;
        match cmp {
            Cmp::Le => {
                row[slack_at] = 1.0;
                basis.push(slack_at);
                slack_at += 1;
            }
            Cmp::Eq => {
                row[art_at] = 1.0;
                basis.push(art_at);
                art_cols.push(art_at);
                art_at += 1;
            }
        }
        t.push(row);
    }
    let mut tab = Tableau { t, basis, ncols };

    if n_art > 0 {
        // Phase 1: drive the artificial variables to zero.
        let mut cost = vec![0.0; ncols];
        for &j in &art_cols {
            cost[j] = -1.0;
        }
        let allowed = vec![true; ncols];
        tab.optimize(&cost, &allowed)?;
        let infeas: f64 = tab
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &bv)| art_cols.contains(&bv))
            .map(|(r, _)| tab.rhs(r))
            .sum();
        if infeas > 1e-7 {
            return Err(Error::LinearProgram("constraints are infeasible".into()));
        }
        // Pivot lingering zero-valued artificials out of the basis; rows
        // that cannot pivot are redundant and dropped.
        let mut drop_rows = Vec::new();
        for r in 0..tab.t.len() {
            if !art_cols.contains(&tab.basis[r]) {
                continue;
            }
            let col = (0..n + n_slack).find(|&j| tab.t[r][j].abs() > TOL);
            match col {
                Some(j) => tab.pivot(r, j),
                None => drop_rows.push(r),
            }
        }
        for &r in drop_rows.iter().rev() {
            tab.t.remove(r);
            tab.basis.remove(r);
        }
    }

    // Phase 2 over the true objective; artificial columns are frozen.
    let mut cost = vec![0.0; ncols];
    cost[..n].copy_from_slice(objective);
    let mut allowed = vec![true; ncols];
    for &j in &art_cols {
        allowed[j] = false;
    }
    tab.optimize(&cost, &allowed)?;

    let mut x = vec![0.0; n];
    for (r, &bv) in tab.basis.iter().enumerate() {
        if bv < n {
            x[bv] = tab.rhs(r);
        }
    }
    let objective_value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        x,
        objective: objective_value,
    })
}
