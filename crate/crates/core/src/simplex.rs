//! Dense two-phase tableau simplex for small and medium linear programs.
//!
//! Programs are stated as `max c.x` subject to `LE`/`EQ`/`GE` rows and
//! `x >= 0`. Phase 1 minimizes the sum of artificial variables attached to
//! `EQ`/`GE` rows (and to `LE` rows with a negative right-hand side); phase 2
//! optimizes the real objective from the feasible basis phase 1 leaves behind.
//! Every optimal point is re-checked against the original rows before it is
//! returned.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest magnitude accepted as a pivot element or an improving reduced cost.
pub const PIVOT_TOL: f64 = 1e-9;
/// Largest constraint violation tolerated in a returned optimum.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `max objective.x` subject to `constraints`, `x >= 0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        LinearProgram { objective, constraints: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    /// Adds a row given as `(variable, coefficient)` pairs; repeated variables accumulate.
    pub fn add_sparse(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64) {
        let mut coeffs = vec![0.0; self.n_vars()];
        for &(j, v) in terms {
            coeffs[j] += v;
        }
        self.add(coeffs, relation, rhs);
    }

    fn check_well_formed(&self) -> Result<()> {
        let n = self.n_vars();
        if let Some(v) = self.objective.iter().find(|v| !v.is_finite()) {
            return Err(Error::MalformedProgram(format!("objective coefficient {v}")));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(Error::MalformedProgram(format!(
                    "row {i} has {} coefficients, expected {n}",
                    c.coeffs.len()
                )));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::MalformedProgram(format!("row {i} has a non-finite entry")));
            }
        }
        Ok(())
    }
}

/// One constraint per line, `name: terms REL rhs`, with zero terms omitted.
impl fmt::Display for LinearProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# {} variables, {} constraints, x >= 0", self.n_vars(), self.n_constraints())?;
        write!(f, "max:")?;
        write_terms(f, &self.objective)?;
        writeln!(f)?;
        for (i, c) in self.constraints.iter().enumerate() {
            write!(f, "c{i}:")?;
            write_terms(f, &c.coeffs)?;
            writeln!(f, " {} {:?}", c.relation, c.rhs)?;
        }
        Ok(())
    }
}

fn write_terms(f: &mut fmt::Formatter<'_>, coeffs: &[f64]) -> fmt::Result {
    let mut any = false;
    for (j, v) in coeffs.iter().enumerate().filter(|(_, v)| **v != 0.0) {
        write!(f, " {:+?} x{j}", v)?;
        any = true;
    }
    if !any {
        write!(f, " 0")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Option<Vec<f64>>,
    pub objective_value: Option<f64>,
    pub iterations: usize,
}

/// Entering-variable selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PivotRule {
    /// Smallest-index improving column and smallest-index leaving row.
    Bland,
    /// Most negative reduced cost; switches to Bland's rule after a run of
    /// degenerate pivots and back once the objective moves again.
    DantzigBlandFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub pivot_rule: PivotRule,
    /// Defaults to `50 * (n_vars + n_constraints)` when `None`.
    pub max_iterations: Option<usize>,
    /// Consecutive degenerate pivots tolerated before Bland's rule takes over.
    pub degenerate_streak: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            pivot_rule: PivotRule::DantzigBlandFallback,
            max_iterations: None,
            degenerate_streak: 20,
        }
    }
}

impl SimplexOptions {
    pub fn bland() -> Self {
        SimplexOptions { pivot_rule: PivotRule::Bland, ..Self::default() }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    solve_with(lp, &SimplexOptions::default())
}

pub fn solve_with(lp: &LinearProgram, options: &SimplexOptions) -> Result<LpSolution> {
    lp.check_well_formed()?;
    let limit = options
        .max_iterations
        .unwrap_or(50 * (lp.n_vars() + lp.n_constraints()).max(1));
    let mut tableau = Tableau::build(lp);
    let mut run = Run { options, limit, iterations: 0 };

    if tableau.n_artificial > 0 {
        match run.iterate(&mut tableau, Phase::One)? {
            Outcome::Optimal => {}
            // Phase 1 is bounded below by zero; an unbounded ray means garbage.
            Outcome::Unbounded => {
                return Err(Error::MalformedProgram("phase 1 reported an unbounded ray".into()))
            }
        }
        let infeasibility = -tableau.obj_value(Phase::One);
        if infeasibility > FEASIBILITY_TOL {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: None,
                objective_value: None,
                iterations: run.iterations,
            });
        }
        tableau.drive_out_artificials();
    }

    match run.iterate(&mut tableau, Phase::Two)? {
        Outcome::Unbounded => Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: None,
            objective_value: None,
            iterations: run.iterations,
        }),
        Outcome::Optimal => {
            let x = tableau.primal(lp.n_vars());
            let violation = check_solution(lp, &x)?;
            if violation > FEASIBILITY_TOL {
                return Err(Error::NumericalFailure { violation });
            }
            let objective_value = dot(&lp.objective, &x);
            Ok(LpSolution {
                status: LpStatus::Optimal,
                x: Some(x),
                objective_value: Some(objective_value),
                iterations: run.iterations,
            })
        }
    }
}

/// Largest signed violation of `x` over all rows and the bounds `x >= 0`.
/// Non-positive for a feasible point.
pub fn check_solution(lp: &LinearProgram, x: &[f64]) -> Result<f64> {
    if x.len() != lp.n_vars() {
        return Err(Error::MalformedProgram(format!(
            "point has {} entries, program has {} variables",
            x.len(),
            lp.n_vars()
        )));
    }
    let mut worst = x.iter().map(|v| -v).fold(f64::NEG_INFINITY, f64::max);
    for c in &lp.constraints {
        if c.coeffs.len() != x.len() {
            return Err(Error::MalformedProgram("row length mismatch".into()));
        }
        let lhs = dot(&c.coeffs, x);
        let v = match c.relation {
            Relation::Le => lhs - c.rhs,
            Relation::Ge => c.rhs - lhs,
            Relation::Eq => (lhs - c.rhs).abs(),
        };
        worst = worst.max(v);
    }
    Ok(if worst == f64::NEG_INFINITY { 0.0 } else { worst })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

enum Outcome {
    Optimal,
    Unbounded,
}

/// Row-major tableau. Columns: structural, slack/surplus, artificial, rhs.
struct Tableau {
    m: usize,
    width: usize,
    n_cols: usize,
    first_artificial: usize,
    n_artificial: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    /// `z_j - c_j` rows (rhs slot holds the objective value) for each phase.
    obj2: Vec<f64>,
    obj1: Vec<f64>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.n_vars();
        let m = lp.n_constraints();
        // Normalize to rhs >= 0, then count auxiliaries.
        let rows: Vec<(f64, Relation)> = lp
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let rel = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (-1.0, rel)
                } else {
                    (1.0, c.relation)
                }
            })
            .collect();
        let n_slack = rows.iter().filter(|(_, r)| *r != Relation::Eq).count();
        let n_artificial = rows.iter().filter(|(_, r)| *r != Relation::Le).count();
        let first_artificial = n + n_slack;
        let n_cols = first_artificial + n_artificial;
        let width = n_cols + 1;

        let mut data = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut obj1 = vec![0.0; width];
        let mut next_slack = n;
        let mut next_art = first_artificial;
        for (i, (c, (sign, rel))) in lp.constraints.iter().zip(&rows).enumerate() {
            let row = &mut data[i * width..(i + 1) * width];
            for (dst, v) in row[..n].iter_mut().zip(&c.coeffs) {
                *dst = sign * v;
            }
            row[n_cols] = sign * c.rhs;
            match rel {
                Relation::Le => {
                    row[next_slack] = 1.0;
                    basis[i] = next_slack;
                    next_slack += 1;
                }
                Relation::Ge => {
                    row[next_slack] = -1.0;
                    next_slack += 1;
                    row[next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
                Relation::Eq => {
                    row[next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
            }
            if *rel != Relation::Le {
                // Phase 1 maximizes -sum(artificials): z_j - c_j = -sum of artificial rows.
                for (o, v) in obj1[..first_artificial].iter_mut().zip(&row[..first_artificial]) {
                    *o -= v;
                }
                obj1[n_cols] -= row[n_cols];
            }
        }
        let mut obj2 = vec![0.0; width];
        for (o, c) in obj2.iter_mut().zip(&lp.objective) {
            *o = -c;
        }
        Tableau { m, width, n_cols, first_artificial, n_artificial, data, basis, obj2, obj1 }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.width + self.n_cols]
    }

    fn obj(&self, phase: Phase) -> &[f64] {
        match phase {
            Phase::One => &self.obj1,
            Phase::Two => &self.obj2,
        }
    }

    fn obj_value(&self, phase: Phase) -> f64 {
        self.obj(phase)[self.n_cols]
    }

    fn priced_columns(&self, phase: Phase) -> usize {
        match phase {
            Phase::One => self.n_cols,
            Phase::Two => self.first_artificial,
        }
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let width = self.width;
        let inv = 1.0 / self.at(r, col);
        let (before, rest) = self.data.split_at_mut(r * width);
        let (pivot_row, after) = rest.split_at_mut(width);
        for v in pivot_row.iter_mut() {
            *v *= inv;
        }
        pivot_row[col] = 1.0;
        let nz: Vec<usize> = (0..width).filter(|&j| pivot_row[j] != 0.0).collect();
        let dense = nz.len() * 2 > width;
        let eliminate = |row: &mut [f64]| {
            let f = row[col];
            if f == 0.0 {
                return;
            }
            if dense {
                for (x, p) in row.iter_mut().zip(pivot_row.iter()) {
                    *x -= f * p;
                }
            } else {
                for &j in &nz {
                    row[j] -= f * pivot_row[j];
                }
            }
            row[col] = 0.0;
        };
        for row in before.chunks_exact_mut(width).chain(after.chunks_exact_mut(width)) {
            eliminate(row);
        }
        eliminate(&mut self.obj1);
        eliminate(&mut self.obj2);
        self.basis[r] = col;
    }

    /// Pivots zero-valued artificials out of the basis where a structural or
    /// slack column allows it. Rows left with a basic artificial are
    /// redundant: they are zero outside the artificial columns and no later
    /// pivot can touch them.
    fn drive_out_artificials(&mut self) {
        for i in 0..self.m {
            if self.basis[i] < self.first_artificial {
                continue;
            }
            let row = self.row(i);
            let best = (0..self.first_artificial)
                .map(|j| (j, row[j].abs()))
                .filter(|&(_, v)| v > PIVOT_TOL)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((j, _)) = best {
                self.pivot(i, j);
            }
        }
    }

    fn primal(&self, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < n {
                x[b] = self.rhs(i);
            }
        }
        x
    }

    /// Minimum-ratio row for entering column `col`; ties go to the smallest basic index.
    fn leaving_row(&self, col: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let a = self.at(i, col);
            if a <= PIVOT_TOL {
                continue;
            }
            let ratio = self.rhs(i).max(0.0) / a;
            best = match best {
                None => Some((i, ratio)),
                Some((bi, br)) => {
                    if ratio < br - 1e-12 || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi]) {
                        Some((i, ratio))
                    } else {
                        Some((bi, br))
                    }
                }
            };
        }
        best
    }
}

struct Run<'a> {
    options: &'a SimplexOptions,
    limit: usize,
    iterations: usize,
}

impl Run<'_> {
    fn iterate(&mut self, t: &mut Tableau, phase: Phase) -> Result<Outcome> {
        let mut degenerate = 0usize;
        loop {
            let use_bland = match self.options.pivot_rule {
                PivotRule::Bland => true,
                PivotRule::DantzigBlandFallback => degenerate >= self.options.degenerate_streak,
            };
            let priced = &t.obj(phase)[..t.priced_columns(phase)];
            let entering = if use_bland {
                priced.iter().position(|&d| d < -PIVOT_TOL)
            } else {
                priced
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| **d < -PIVOT_TOL)
                    .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                    .map(|(j, _)| j)
            };
            let Some(col) = entering else {
                return Ok(Outcome::Optimal);
            };
            let Some((row, ratio)) = t.leaving_row(col) else {
                return Ok(Outcome::Unbounded);
            };
            if self.iterations >= self.limit {
                return Err(Error::IterationLimit { limit: self.limit });
            }
            self.iterations += 1;
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            t.pivot(row, col);
        }
    }
}
