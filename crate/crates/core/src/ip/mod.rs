//! Binary linear programming: the LP relaxation, branch-and-bound, and the
//! relax-and-round approximation used by cardinality matching.
//!
//! Every variable is binary. Programs are always maximized; callers that
//! want to minimize negate their objective.

mod branch;
mod round;
mod simplex;

use std::fmt::{self, Write as _};
use std::time::Duration;

use serde::Serialize;

pub use branch::solve_ip_with_incumbent;

/// Relation of a linear constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
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

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    /// Sparse coefficients as `(variable, coefficient)`.
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
    /// Optional name used in LP dumps and infeasibility reports.
    pub label: Option<String>,
}

impl LinearConstraint {
    pub fn new(terms: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> Self {
        Self {
            terms,
            relation,
            rhs,
            label: None,
        }
    }

    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * values[j]).sum()
    }

    /// True when `values` satisfy the row within `tol` (scaled by the row magnitude).
    pub fn is_satisfied(&self, values: &[f64], tol: f64) -> bool {
        let act = self.activity(values);
        let scale = 1.0 + self.rhs.abs() + self.terms.iter().map(|t| t.1.abs()).sum::<f64>();
        let slack = tol * scale;
        match self.relation {
            Relation::Le => act <= self.rhs + slack,
            Relation::Ge => act >= self.rhs - slack,
            Relation::Eq => (act - self.rhs).abs() <= slack,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ProgramError {
    #[error("constraint {row} references variable {var} but the program has {n_vars} variables")]
    UnknownVariable { row: usize, var: usize, n_vars: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
}

/// A binary program: maximize `objective · x` subject to linear rows, `x ∈ {0,1}ⁿ`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntegerProgram {
    objective: Vec<f64>,
    constraints: Vec<LinearConstraint>,
}

impl IntegerProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn set_objective(&mut self, objective: Vec<f64>) {
        assert_eq!(objective.len(), self.objective.len(), "objective length changed");
        self.objective = objective;
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    /// Appends a row. Empty rows that are trivially satisfied are dropped.
    pub fn add_constraint(&mut self, constraint: LinearConstraint) {
        if constraint.terms.is_empty() && constraint.is_satisfied(&[], 0.0) {
            return;
        }
        self.constraints.push(constraint);
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        let n = self.n_vars();
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(ProgramError::NonFinite("objective".into()));
        }
        for (row, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(ProgramError::NonFinite(format!("rhs of row {row}")));
            }
            for &(var, a) in &c.terms {
                if var >= n {
                    return Err(ProgramError::UnknownVariable { row, var, n_vars: n });
                }
                if !a.is_finite() {
                    return Err(ProgramError::NonFinite(format!("row {row}")));
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.objective.iter().zip(values).map(|(c, x)| c * x).sum()
    }

    pub fn is_feasible(&self, values: &[f64], tol: f64) -> bool {
        self.constraints.iter().all(|c| c.is_satisfied(values, tol))
    }

    /// Renders the program in CPLEX-style LP text for cross-checking with
    /// external solvers.
    pub fn to_lp_string(&self) -> String {
        let mut out = String::from("Maximize\n obj:");
        write_terms(&mut out, self.objective.iter().copied().enumerate());
        out.push_str("\nSubject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            let label = c.label.clone().unwrap_or_else(|| format!("c{i}"));
            let label: String = label
                .chars()
                .map(|ch| if ch.is_ascii_alphanumeric() || ch == '_' { ch } else { '_' })
                .collect();
            let _ = write!(out, " {label}:");
            write_terms(&mut out, c.terms.iter().copied());
            let _ = writeln!(out, " {} {}", c.relation, c.rhs);
        }
        out.push_str("Binary\n");
        for j in 0..self.n_vars() {
            let _ = write!(out, " x{j}");
            if j % 16 == 15 {
                out.push('\n');
            }
        }
        out.push_str("\nEnd\n");
        out
    }
}

fn write_terms(out: &mut String, terms: impl Iterator<Item = (usize, f64)>) {
    let mut any = false;
    for (j, a) in terms {
        if a == 0.0 {
            continue;
        }
        let sign = if a < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {} x{j}", a.abs());
        any = true;
    }
    if !any {
        out.push_str(" 0 x0");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    /// An incumbent was found but the search stopped early; `bound_gap` is the
    /// distance between the best remaining bound and the incumbent.
    Feasible { bound_gap: f64 },
    Infeasible,
    /// The time limit expired before any feasible point was found.
    InfeasibleUnproven,
    /// LP relaxation optimum with fractional entries.
    RelaxationFractional,
}

impl SolveStatus {
    pub fn has_solution(&self) -> bool {
        matches!(
            self,
            SolveStatus::Optimal | SolveStatus::Feasible { .. } | SolveStatus::RelaxationFractional
        )
    }

    pub fn tag(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible { .. } => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::InfeasibleUnproven => "infeasible-unproven",
            SolveStatus::RelaxationFractional => "relaxation-fractional",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// Branch-and-bound nodes explored (1 for a pure LP solve).
    pub nodes: usize,
}

impl Solution {
    fn without_point(status: SolveStatus, n: usize) -> Self {
        Self {
            status,
            values: vec![0.0; n],
            objective_value: f64::NEG_INFINITY,
            nodes: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpOptions {
    pub time_limit: Option<Duration>,
    /// Relative optimality gap at which a node is pruned.
    pub gap_tolerance: f64,
}

impl Default for IpOptions {
    fn default() -> Self {
        Self {
            time_limit: Some(Duration::from_secs(10)),
            gap_tolerance: 1e-9,
        }
    }
}

pub(crate) const INTEGRALITY_TOL: f64 = 1e-6;

fn is_integral(values: &[f64]) -> bool {
    values.iter().all(|v| (v - v.round()).abs() <= INTEGRALITY_TOL)
}

/// Solves the LP relaxation with every variable in `[0, 1]`.
pub fn solve_lp(program: &IntegerProgram) -> Result<Solution, ProgramError> {
    program.validate()?;
    let n = program.n_vars();
    let lower = vec![0.0; n];
    let upper = vec![1.0; n];
    let mut tableau = simplex::Tableau::new(program, &lower, &upper);
    Ok(match tableau.solve() {
        simplex::LpOutcome::Optimal => {
            let values = tableau.structural_values();
            let status = if is_integral(&values) {
                SolveStatus::Optimal
            } else {
                SolveStatus::RelaxationFractional
            };
            Solution {
                status,
                objective_value: program.evaluate(&values),
                values,
                nodes: 1,
            }
        }
        simplex::LpOutcome::Infeasible => Solution::without_point(SolveStatus::Infeasible, n),
        simplex::LpOutcome::IterationLimit => {
            Solution::without_point(SolveStatus::InfeasibleUnproven, n)
        }
    })
}

/// Exact binary optimization by best-first branch-and-bound on the LP relaxation.
pub fn solve_ip(program: &IntegerProgram, options: &IpOptions) -> Result<Solution, ProgramError> {
    solve_ip_with_incumbent(program, options, None)
}

pub use round::relax_and_round;

#[cfg(test)]
mod tests {
    use super::*;

    fn le(terms: &[(usize, f64)], rhs: f64) -> LinearConstraint {
        LinearConstraint::new(terms.to_vec(), Relation::Le, rhs)
    }

    fn odd_cycle() -> IntegerProgram {
        let mut p = IntegerProgram::new(vec![1.0; 3]);
        p.add_constraint(le(&[(0, 1.0), (1, 1.0)], 1.0));
        p.add_constraint(le(&[(1, 1.0), (2, 1.0)], 1.0));
        p.add_constraint(le(&[(0, 1.0), (2, 1.0)], 1.0));
        p
    }

    #[test]
    fn lp_single_tight_row() {
        let mut p = IntegerProgram::new(vec![1.0, 1.0]);
        p.add_constraint(le(&[(0, 1.0), (1, 1.0)], 1.0));
        let s = solve_lp(&p).unwrap();
        assert!((s.objective_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lp_fractional_bound() {
        let mut p = IntegerProgram::new(vec![1.0]);
        p.add_constraint(le(&[(0, 1.0)], 0.5));
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, SolveStatus::RelaxationFractional);
        assert!((s.objective_value - 0.5).abs() < 1e-9);
    }

    #[test]
    fn lp_odd_cycle_is_three_halves() {
        // (½,½,½) is feasible with value 1.5; summing the three rows gives
        // 2(x₁+x₂+x₃) ≤ 3, so 1.5 is also an upper bound.
        let s = solve_lp(&odd_cycle()).unwrap();
        assert!((s.objective_value - 1.5).abs() < 1e-9);
    }

    #[test]
    fn ip_odd_cycle_matches_enumeration() {
        let p = odd_cycle();
        let brute = (0..8u32)
            .map(|mask| (0..3).map(|j| ((mask >> j) & 1) as f64).collect::<Vec<_>>())
            .filter(|x| p.is_feasible(x, 1e-12))
            .map(|x| p.evaluate(&x))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(brute, 1.0);
        let s = solve_ip(&p, &IpOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective_value - brute).abs() < 1e-9);
    }

    #[test]
    fn ip_prefers_heavier_variable() {
        let mut p = IntegerProgram::new(vec![2.0, 1.0]);
        p.add_constraint(le(&[(0, 1.0), (1, 1.0)], 1.0));
        let s = solve_ip(&p, &IpOptions::default()).unwrap();
        assert_eq!(s.values, vec![1.0, 0.0]);
        assert!((s.objective_value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ip_contradictory_rows_are_infeasible() {
        let mut p = IntegerProgram::new(vec![1.0]);
        p.add_constraint(LinearConstraint::new(vec![(0, 1.0)], Relation::Ge, 1.0));
        p.add_constraint(le(&[(0, 1.0)], 0.0));
        assert_eq!(solve_ip(&p, &IpOptions::default()).unwrap().status, SolveStatus::Infeasible);
        assert_eq!(solve_lp(&p).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn equality_rows_are_honoured() {
        let mut p = IntegerProgram::new(vec![-1.0, -2.0, -3.0]);
        p.add_constraint(LinearConstraint::new(
            vec![(0, 1.0), (1, 1.0), (2, 1.0)],
            Relation::Eq,
            2.0,
        ));
        let s = solve_ip(&p, &IpOptions::default()).unwrap();
        assert_eq!(s.values, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn relax_and_round_odd_cycle_gap() {
        let s = relax_and_round(&odd_cycle()).unwrap();
        assert!((s.objective_value - 1.0).abs() < 1e-9);
        match s.status {
            SolveStatus::Feasible { bound_gap } => assert!((bound_gap - 0.5).abs() < 1e-9),
            other => panic!("unexpected status {other:?}"),
        }
    }

    #[test]
    fn relax_and_round_integral_lp_is_unchanged() {
        let mut p = IntegerProgram::new(vec![1.0, 1.0]);
        p.add_constraint(le(&[(0, 1.0), (1, 1.0)], 2.0));
        let lp = solve_lp(&p).unwrap();
        let r = relax_and_round(&p).unwrap();
        assert_eq!(r.values, lp.values);
        assert_eq!(r.status, SolveStatus::Optimal);
    }

    #[test]
    fn relax_and_round_can_return_empty() {
        // Every single variable alone violates the balance row; only pairs work,
        // and the LP optimum is fractional across the two.
        let mut p = IntegerProgram::new(vec![1.0, 1.0]);
        p.add_constraint(le(&[(0, 1.0), (1, -1.0)], 0.0));
        p.add_constraint(le(&[(0, -1.0), (1, 1.0)], 0.0));
        p.add_constraint(le(&[(0, 1.0), (1, 1.0)], 1.0));
        let r = relax_and_round(&p).unwrap();
        assert_eq!(r.objective_value, 0.0);
        assert!(r.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lp_dump_lists_every_row() {
        let text = odd_cycle().to_lp_string();
        assert!(text.starts_with("Maximize"));
        assert_eq!(text.matches("<= 1").count(), 3);
        assert!(text.contains("Binary"));
    }

    #[test]
    fn validate_rejects_unknown_variable() {
        let mut p = IntegerProgram::new(vec![1.0]);
        p.add_constraint(le(&[(3, 1.0)], 1.0));
        assert!(matches!(
            p.validate(),
            Err(ProgramError::UnknownVariable { var: 3, .. })
        ));
    }
}
