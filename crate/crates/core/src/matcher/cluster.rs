//! Cluster-level assignment over a pair table.

use serde::Serialize;

use super::table::PairTable;
use super::Objective;
use crate::balance::{build_cluster_constraints, CompiledSpec};
use crate::data::Dataset;
use crate::ip::{
    solve_ip, solve_ip_with_incumbent, IntegerProgram, IpOptions, LinearConstraint, ProgramError, Relation,
    SolveStatus,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfeasibilityReport {
    pub message: String,
    /// Constraints whose removal alone admits a non-empty match.
    pub binding: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Selected table positions `(row, column)`, sorted.
    pub pairs: Vec<(usize, usize)>,
    /// Σ (m + λ) over selected pairs, or the number of contributing pairs
    /// under the min-distance objective.
    pub objective: f64,
    pub statuses: Vec<SolveStatus>,
    pub infeasibility: Option<InfeasibilityReport>,
}

pub(crate) struct Selection {
    pub chosen: Vec<usize>,
    pub objective: f64,
    pub statuses: Vec<SolveStatus>,
}

fn chosen(values: &[f64]) -> Vec<usize> {
    (0..values.len()).filter(|&j| values[j] > 0.5).collect()
}

/// Maximizes Σ reward·a over candidate cluster pairs under the cluster
/// constraints, then minimizes Σ cost·a with the first optimum pinned.
/// Zero-reward pairs a solution can do without are dropped afterwards.
pub(crate) fn select_pairs(
    ds: &Dataset,
    spec: &CompiledSpec,
    candidates: &[(usize, usize)],
    reward: &[f64],
    cost: &[f64],
    options: &IpOptions,
) -> Result<Selection, ProgramError> {
    let mut statuses = Vec::new();
    if candidates.is_empty() || reward.iter().all(|&r| r <= 0.0) {
        return Ok(Selection {
            chosen: Vec::new(),
            objective: 0.0,
            statuses,
        });
    }
    let mut base = IntegerProgram::new(reward.to_vec());
    for row in build_cluster_constraints(spec, ds, candidates) {
        base.add_constraint(row);
    }
    let first = solve_ip(&base, options)?;
    statuses.push(first.status);
    if !first.status.has_solution() {
        return Ok(Selection {
            chosen: Vec::new(),
            objective: 0.0,
            statuses,
        });
    }
    let opt = base.evaluate(&first.values);
    let mut values = first.values;
    let picked = chosen(&values);
    let spread = picked.iter().any(|&j| cost[j] != 0.0) || cost.iter().any(|&c| c < 0.0);
    if opt > 0.0 && spread {
        let mut program = base.clone();
        let terms = reward
            .iter()
            .enumerate()
            .filter(|(_, &r)| r != 0.0)
            .map(|(j, &r)| (j, r))
            .collect();
        program.add_constraint(
            LinearConstraint::new(terms, Relation::Ge, opt - 1e-7 * (1.0 + opt.abs())).labeled("pinned_objective"),
        );
        program.set_objective(cost.iter().map(|c| -c).collect());
        let second = solve_ip_with_incumbent(&program, options, Some(&values))?;
        statuses.push(second.status);
        if second.status.has_solution() {
            values = second.values;
        }
    }
    for j in chosen(&values) {
        if reward[j] == 0.0 {
            values[j] = 0.0;
            if !base.is_feasible(&values, 1e-9) {
                values[j] = 1.0;
            }
        }
    }
    let chosen = chosen(&values);
    Ok(Selection {
        objective: chosen.iter().map(|&j| reward[j]).fold(0.0, |a, r| a + r),
        chosen,
        statuses,
    })
}

/// Picks the cluster pairs of the final match from a completed table.
/// Under `MaxCardinality` the program maximizes Σ (m + λ)·a; under
/// `MinDistance` it maximizes the number of pairs holding units. Ties go to
/// the smallest Σ d·a.
pub fn cluster_match(
    table: &PairTable,
    ds: &Dataset,
    spec: &CompiledSpec,
    lambda: f64,
    objective: Objective,
    options: &IpOptions,
) -> Result<ClusterAssignment, ProgramError> {
    let ballast = spec.has_cluster_balance_rows();
    let mut positions = Vec::new();
    let mut candidates = Vec::new();
    let mut reward = Vec::new();
    let mut cost = Vec::new();
    for i in 0..table.n_treated() {
        for j in 0..table.n_control() {
            if !table.admissible(i, j) {
                continue;
            }
            let m = table.m(i, j) as f64;
            if m == 0.0 && lambda <= 0.0 && !ballast {
                continue;
            }
            positions.push((i, j));
            candidates.push((table.treated[i], table.control[j]));
            reward.push(match objective {
                Objective::MaxCardinality => m + lambda,
                Objective::MinDistance => f64::from(u8::from(m > 0.0)),
            });
            cost.push(table.d(i, j));
        }
    }
    let sel = select_pairs(ds, spec, &candidates, &reward, &cost, options)?;
    let mut pairs: Vec<(usize, usize)> = sel.chosen.iter().map(|&k| positions[k]).collect();
    pairs.sort_unstable();
    let infeasibility = if pairs.is_empty() && reward.iter().any(|&r| r > 0.0) {
        Some(explain(ds, spec, &candidates, &reward, options)?)
    } else {
        None
    };
    Ok(ClusterAssignment {
        pairs,
        objective: sel.objective,
        statuses: sel.statuses,
        infeasibility,
    })
}

fn explain(
    ds: &Dataset,
    spec: &CompiledSpec,
    candidates: &[(usize, usize)],
    reward: &[f64],
    options: &IpOptions,
) -> Result<InfeasibilityReport, ProgramError> {
    let zero = vec![0.0; reward.len()];
    let mut binding = Vec::new();
    let softs: Vec<usize> = (0..spec.cluster.len()).filter(|&k| !spec.cluster[k].is_exact()).collect();
    for &k in &softs {
        let mut relaxed = spec.clone();
        relaxed.cluster.remove(k);
        if !select_pairs(ds, &relaxed, candidates, reward, &zero, options)?.chosen.is_empty() {
            binding.push(spec.cluster[k].constraint.describe());
        }
    }
    if binding.is_empty() {
        binding = softs.iter().map(|&k| spec.cluster[k].constraint.describe()).collect();
    }
    Ok(InfeasibilityReport {
        message: "no non-empty set of cluster pairs satisfies the cluster-level constraints".into(),
        binding,
    })
}
