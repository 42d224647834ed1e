//! Best-first branch-and-bound. Each popped node starts from a copy of the
//! optimal root tableau with its fixings applied; the search then dives from
//! it, re-optimizing with the dual simplex after every branching decision and
//! queueing the sibling. Nonbasic variables whose reduced cost exceeds the
//! gap to the incumbent are fixed along the way; when the root fixes most of
//! the program, the remainder is solved as a smaller program.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::simplex::{LpOutcome, Tableau};
use super::{
    round, IntegerProgram, IpOptions, LinearConstraint, ProgramError, Relation, Solution, SolveStatus, INTEGRALITY_TOL,
};

/// Smallest program worth shrinking after root fixings.
const REDUCE_MIN_VARS: usize = 40;

struct Node {
    bound: f64,
    seq: u64,
    fixes: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Largest LP bound among parts of the tree left unexplored, or `None` when
/// the search finished.
type OpenBound = Option<f64>;

struct Search<'a> {
    program: &'a IntegerProgram,
    integral_objective: bool,
    /// Rows of the form `Σ x ≤ 1`; their slack is binary at integer points.
    packing_rows: Vec<usize>,
    gap_tolerance: f64,
    /// Only points strictly above this value are of interest.
    cutoff: f64,
    incumbent: Option<(f64, Vec<f64>)>,
    deadline: Option<Instant>,
    nodes: usize,
}

impl<'a> Search<'a> {
    fn new(program: &'a IntegerProgram, gap_tolerance: f64, cutoff: f64, deadline: Option<Instant>) -> Self {
        Search {
            program,
            integral_objective: program
                .objective()
                .iter()
                .all(|c| (c - c.round()).abs() < 1e-12),
            packing_rows: program
                .constraints()
                .iter()
                .enumerate()
                .filter(|(_, c)| {
                    c.relation == Relation::Le && c.rhs == 1.0 && c.terms.len() > 1 && c.terms.iter().all(|t| t.1 == 1.0)
                })
                .map(|(i, _)| i)
                .collect(),
            gap_tolerance,
            cutoff,
            incumbent: None,
            deadline,
            nodes: 0,
        }
    }

    fn best(&self) -> Option<f64> {
        match &self.incumbent {
            Some((v, _)) => Some(v.max(self.cutoff)),
            None if self.cutoff > f64::NEG_INFINITY => Some(self.cutoff),
            None => None,
        }
    }

    /// Whether a node with LP bound `bound` can still beat the incumbent.
    fn promising(&self, bound: f64) -> bool {
        let Some(best) = self.best() else {
            return true;
        };
        if self.integral_objective {
            (bound + 1e-6).floor() > best + 0.5
        } else {
            bound > best + self.gap_tolerance * best.abs().max(1.0) + 1e-9
        }
    }

    fn out_of_time(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    fn offer(&mut self, values: Vec<f64>) {
        let rounded: Vec<f64> = values.iter().map(|v| v.round()).collect();
        if !self.program.is_feasible(&rounded, 1e-9) {
            return;
        }
        let obj = self.program.evaluate(&rounded);
        if obj <= self.cutoff + 1e-12 {
            return;
        }
        let improves = match &self.incumbent {
            None => true,
            Some((best, _)) => obj > *best + 1e-12,
        };
        if improves {
            self.incumbent = Some((obj, rounded));
        }
    }

    /// Variables that can be fixed at their current bound in every point
    /// beating the incumbent, given an optimal tableau with value `bound`.
    fn reduced_cost_fixes(&self, tableau: &Tableau, bound: f64) -> Vec<(usize, f64)> {
        if self.best().is_none() {
            return Vec::new();
        }
        let slack = 1e-9 * (1.0 + bound.abs());
        tableau
            .nonbasic_penalties()
            .into_iter()
            .filter(|&(_, _, penalty)| !self.promising(bound - penalty + slack))
            .map(|(k, v, _)| (k, v.round()))
            .collect()
    }

    /// Tableau column to branch on: the slack of the most fractional packing
    /// row, which splits on whether the row is used at all, else the most
    /// fractional variable.
    fn branch_column(&self, tableau: &Tableau, values: &[f64]) -> (usize, f64) {
        let mut pick = None;
        let mut best = INTEGRALITY_TOL;
        for &i in &self.packing_rows {
            let v = tableau.slack_value(i);
            let frac = (v - v.round()).abs();
            if frac > best + 1e-12 {
                best = frac;
                pick = Some((values.len() + i, v));
            }
        }
        pick.unwrap_or_else(|| {
            let j = most_fractional(values).expect("fractional point");
            (j, values[j])
        })
    }

    fn run(&mut self) -> OpenBound {
        let n = self.program.n_vars();
        if self.out_of_time() {
            return Some(f64::INFINITY);
        }
        let mut root = Tableau::new(self.program, &vec![0.0; n], &vec![1.0; n]);
        self.nodes += 1;
        match root.solve() {
            LpOutcome::Infeasible => return None,
            LpOutcome::IterationLimit => return Some(f64::INFINITY),
            LpOutcome::Optimal => {}
        }
        let bound = root.objective_value();
        let values = root.structural_values();
        if most_fractional(&values).is_none() {
            self.offer(values);
            return None;
        }
        // A cheap rounding of the root relaxation gives an early incumbent.
        if let Some(x) = round::greedy_round(self.program, &values) {
            self.offer(x);
        }
        if !self.promising(bound) {
            return None;
        }
        let fixes = self.reduced_cost_fixes(&root, bound);
        if n >= REDUCE_MIN_VARS && 3 * fixes.len() >= n {
            return self.run_reduced(&fixes);
        }
        self.run_tree(root, bound)
    }

    /// Solves the program left after applying `fixes`, over the variables
    /// still free, and folds the result back.
    fn run_reduced(&mut self, fixes: &[(usize, f64)]) -> OpenBound {
        let n = self.program.n_vars();
        let mut fixed = vec![None; n];
        for &(j, v) in fixes {
            fixed[j] = Some(v);
        }
        let keep: Vec<usize> = (0..n).filter(|&j| fixed[j].is_none()).collect();
        let mut position = vec![usize::MAX; n];
        for (k, &j) in keep.iter().enumerate() {
            position[j] = k;
        }
        let objective = self.program.objective();
        let constant: f64 = fixes.iter().map(|&(j, v)| objective[j] * v).sum();
        let mut reduced = IntegerProgram::new(keep.iter().map(|&j| objective[j]).collect());
        for c in self.program.constraints() {
            let mut rhs = c.rhs;
            let mut terms = Vec::with_capacity(c.terms.len());
            for &(j, a) in &c.terms {
                match fixed[j] {
                    Some(v) => rhs -= a * v,
                    None => terms.push((position[j], a)),
                }
            }
            reduced.add_constraint(LinearConstraint {
                terms,
                relation: c.relation,
                rhs,
                label: None,
            });
        }

        let cutoff = self.best().map_or(f64::NEG_INFINITY, |b| b - constant);
        let mut inner = Search::new(&reduced, self.gap_tolerance, cutoff, self.deadline);
        let open = inner.run();
        self.nodes += inner.nodes;
        if let Some((_, sub)) = inner.incumbent {
            let mut full = vec![0.0; n];
            for &(j, v) in fixes {
                full[j] = v;
            }
            for (k, &j) in keep.iter().enumerate() {
                full[j] = sub[k];
            }
            self.offer(full);
        }
        open.map(|b| b + constant).filter(|&b| self.promising(b))
    }

    fn run_tree(&mut self, root: Tableau, root_bound: f64) -> OpenBound {
        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        heap.push(Node {
            bound: root_bound,
            seq,
            fixes: Vec::new(),
        });
        let mut interrupted: Option<f64> = None;
        let mut first = true;

        while let Some(node) = heap.pop() {
            if !self.promising(node.bound) {
                continue;
            }
            if self.out_of_time() {
                interrupted = Some(node.bound);
                break;
            }
            let mut tableau = root.clone();
            let mut outcome = if std::mem::take(&mut first) {
                LpOutcome::Optimal
            } else {
                self.nodes += 1;
                let bounds: Vec<(usize, f64, f64)> = node.fixes.iter().map(|&(j, v)| (j, v, v)).collect();
                tableau.rebound_many_and_resolve(&bounds)
            };
            let mut fixes = node.fixes;
            let mut node_bound = node.bound;

            loop {
                match outcome {
                    LpOutcome::Infeasible => break,
                    LpOutcome::IterationLimit => {
                        interrupted = Some(interrupted.unwrap_or(f64::NEG_INFINITY).max(node_bound));
                        break;
                    }
                    LpOutcome::Optimal => {}
                }
                let bound = tableau.objective_value().min(node_bound);
                if !self.promising(bound) {
                    break;
                }
                let values = tableau.structural_values();
                if most_fractional(&values).is_none() {
                    self.offer(values);
                    break;
                }
                let (j, value) = self.branch_column(&tableau, &values);
                if self.out_of_time() {
                    interrupted = Some(interrupted.unwrap_or(f64::NEG_INFINITY).max(bound));
                    break;
                }
                for (k, v) in self.reduced_cost_fixes(&tableau, bound) {
                    tableau.fix_nonbasic(k);
                    fixes.push((k, v));
                }
                let preferred = if value >= 0.5 { 1.0 } else { 0.0 };
                seq += 1;
                let mut sibling = fixes.clone();
                sibling.push((j, 1.0 - preferred));
                heap.push(Node {
                    bound,
                    seq,
                    fixes: sibling,
                });
                fixes.push((j, preferred));
                node_bound = bound;
                self.nodes += 1;
                outcome = tableau.rebound_and_resolve(j, preferred, preferred);
            }
        }

        heap.iter()
            .filter(|nd| self.promising(nd.bound))
            .map(|nd| nd.bound)
            .chain(interrupted)
            .reduce(f64::max)
    }
}

fn most_fractional(values: &[f64]) -> Option<usize> {
    let mut pick = None;
    let mut best = INTEGRALITY_TOL;
    for (j, v) in values.iter().enumerate() {
        let frac = (v - v.round()).abs();
        if frac > best + 1e-12 {
            best = frac;
            pick = Some(j);
        }
    }
    pick
}

/// Branch-and-bound seeded with an optional known feasible point.
pub fn solve_ip_with_incumbent(
    program: &IntegerProgram,
    options: &IpOptions,
    incumbent: Option<&[f64]>,
) -> Result<Solution, ProgramError> {
    program.validate()?;
    let n = program.n_vars();
    let deadline = options.time_limit.map(|lim| Instant::now() + lim);
    let mut search = Search::new(program, options.gap_tolerance.max(0.0), f64::NEG_INFINITY, deadline);
    if let Some(x) = incumbent {
        search.offer(x.to_vec());
    }
    let open = search.run();
    let nodes = search.nodes;

    Ok(match search.incumbent {
        Some((obj, values)) => Solution {
            status: match open {
                None => SolveStatus::Optimal,
                Some(b) => SolveStatus::Feasible {
                    bound_gap: (b - obj).max(0.0),
                },
            },
            values,
            objective_value: obj,
            nodes,
        },
        None => Solution {
            status: if open.is_none() {
                SolveStatus::Infeasible
            } else {
                SolveStatus::InfeasibleUnproven
            },
            values: vec![0.0; n],
            objective_value: f64::NEG_INFINITY,
            nodes,
        },
    })
}
