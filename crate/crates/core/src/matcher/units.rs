//! Cardinality matching of units inside one cluster pair.

use crate::balance::{build_unit_constraints, CompiledSpec, UnitProgram};
use crate::data::Dataset;
use crate::distance::DistanceMatrix;
use crate::ip::{
    relax_and_round, solve_ip, solve_ip_with_incumbent, IntegerProgram, IpOptions, LinearConstraint, ProgramError,
    Relation, SolveStatus,
};
use crate::sample::UnitPair;

#[derive(Debug, Clone, PartialEq)]
pub struct UnitMatch {
    pub pairs: Vec<UnitPair>,
    pub total_distance: f64,
    /// A solver stopped before proving optimality.
    pub below_optimal: bool,
    /// Status of every solve performed, in order.
    pub statuses: Vec<SolveStatus>,
}

impl UnitMatch {
    pub fn empty() -> Self {
        Self {
            pairs: Vec::new(),
            total_distance: 0.0,
            below_optimal: false,
            statuses: Vec::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.pairs.len()
    }
}

fn program_with(objective: Vec<f64>, up: &UnitProgram) -> IntegerProgram {
    let mut p = IntegerProgram::new(objective);
    for c in &up.constraints {
        p.add_constraint(c.clone());
    }
    p
}

fn chosen(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.5)
        .map(|(j, _)| j)
        .collect()
}

/// Lowers the distance of a feasible 0/1 point by exchanges that keep the
/// number of pairs: re-pairing one side of a chosen pair with a free unit, or
/// crossing two chosen pairs. Only the rows touched by a move are rechecked.
fn exchange_descent(program: &IntegerProgram, edges: &[(usize, usize)], delta: &[f64], values: &mut [f64]) {
    let rows = program.constraints();
    let mut column: Vec<Vec<(usize, f64)>> = vec![Vec::new(); values.len()];
    for (r, c) in rows.iter().enumerate() {
        for &(j, a) in &c.terms {
            column[j].push((r, a));
        }
    }
    let slack: Vec<f64> = rows
        .iter()
        .map(|c| 1e-9 * (1.0 + c.rhs.abs() + c.terms.iter().map(|t| t.1.abs()).sum::<f64>()))
        .collect();
    let mut act: Vec<f64> = rows.iter().map(|c| c.activity(values)).collect();
    let ok = |r: usize, act: &[f64]| {
        let c = &rows[r];
        match c.relation {
            Relation::Le => act[r] <= c.rhs + slack[r],
            Relation::Ge => act[r] >= c.rhs - slack[r],
            Relation::Eq => (act[r] - c.rhs).abs() <= slack[r],
        }
    };
    let apply = |act: &mut [f64], out: &[usize], inn: &[usize]| -> bool {
        for &j in out {
            column[j].iter().for_each(|&(r, a)| act[r] -= a);
        }
        for &j in inn {
            column[j].iter().for_each(|&(r, a)| act[r] += a);
        }
        let feasible = out.iter().chain(inn).all(|&j| column[j].iter().all(|&(r, _)| ok(r, act)));
        if !feasible {
            for &j in out {
                column[j].iter().for_each(|&(r, a)| act[r] += a);
            }
            for &j in inn {
                column[j].iter().for_each(|&(r, a)| act[r] -= a);
            }
        }
        feasible
    };

    let index: std::collections::HashMap<(usize, usize), usize> =
        edges.iter().enumerate().map(|(j, &e)| (e, j)).collect();
    let mut by_treated: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    let mut by_control: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for (j, &(t, c)) in edges.iter().enumerate() {
        by_treated.entry(t).or_default().push(j);
        by_control.entry(c).or_default().push(j);
    }
    for _ in 0..50 {
        let mut improved = false;
        let mut used = std::collections::HashSet::new();
        for (j, &v) in values.iter().enumerate() {
            if v > 0.5 {
                used.insert(edges[j].0);
                used.insert(edges[j].1);
            }
        }
        for j in 0..edges.len() {
            if values[j] < 0.5 {
                continue;
            }
            let (t, c) = edges[j];
            let mut alternatives: Vec<usize> = by_treated[&t]
                .iter()
                .chain(&by_control[&c])
                .copied()
                .filter(|&k| {
                    let (t2, c2) = edges[k];
                    let other = if t2 == t { c2 } else { t2 };
                    k != j && !used.contains(&other) && delta[k] < delta[j] - 1e-12
                })
                .collect();
            alternatives.sort_by(|&x, &y| delta[x].total_cmp(&delta[y]));
            let best = alternatives.into_iter().find(|&k| apply(&mut act, &[j], &[k]));
            if let Some(k) = best {
                values[j] = 0.0;
                values[k] = 1.0;
                let (t2, c2) = edges[k];
                used.remove(&if t2 == t { c } else { t });
                used.insert(if t2 == t { c2 } else { t2 });
                improved = true;
            }
        }
        let picked: Vec<usize> = (0..edges.len()).filter(|&j| values[j] > 0.5).collect();
        for (a, &j1) in picked.iter().enumerate() {
            for &j2 in &picked[a + 1..] {
                if values[j1] < 0.5 || values[j2] < 0.5 {
                    continue;
                }
                let (t1, c1) = edges[j1];
                let (t2, c2) = edges[j2];
                let (Some(&k1), Some(&k2)) = (index.get(&(t1, c2)), index.get(&(t2, c1))) else {
                    continue;
                };
                if delta[k1] + delta[k2] < delta[j1] + delta[j2] - 1e-12 && apply(&mut act, &[j1, j2], &[k1, k2]) {
                    values[j1] = 0.0;
                    values[j2] = 0.0;
                    values[k1] = 1.0;
                    values[k2] = 1.0;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Builds the within-pair program over the finite entries of `distances`
/// (rows are `treated_units`, columns `control_units`).
pub fn unit_program(
    ds: &Dataset,
    spec: &CompiledSpec,
    treated_units: &[usize],
    control_units: &[usize],
    distances: &DistanceMatrix,
) -> UnitProgram {
    let mut edges = Vec::new();
    for (i, &t) in treated_units.iter().enumerate() {
        for (j, &c) in control_units.iter().enumerate() {
            if distances.get(i, j).is_finite() {
                edges.push((t, c));
            }
        }
    }
    build_unit_constraints(spec, ds, treated_units, control_units, &edges)
}

/// Largest set of unit pairs satisfying the unit-level constraints, then the
/// smallest total distance among those. With `approximate`, a single LP
/// relaxation is rounded with a small distance perturbation instead.
pub fn cardinality_match_units(
    ds: &Dataset,
    spec: &CompiledSpec,
    treated_units: &[usize],
    control_units: &[usize],
    distances: &DistanceMatrix,
    options: &IpOptions,
    approximate: bool,
) -> Result<UnitMatch, ProgramError> {
    let up = unit_program(ds, spec, treated_units, control_units, distances);
    if up.edges.is_empty() {
        return Ok(UnitMatch::empty());
    }
    let row_of: std::collections::HashMap<usize, usize> =
        treated_units.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let col_of: std::collections::HashMap<usize, usize> =
        control_units.iter().enumerate().map(|(j, &u)| (u, j)).collect();
    let delta: Vec<f64> = up
        .edges
        .iter()
        .map(|(t, c)| distances.get(row_of[t], col_of[c]))
        .collect();
    let n = up.edges.len();
    let mut statuses = Vec::new();

    let values = if approximate {
        let top = delta.iter().cloned().fold(0.0, f64::max);
        let eps = 0.5 / (n as f64 + 1.0);
        let objective = delta
            .iter()
            .map(|d| if top > 0.0 { 1.0 - eps * d / top } else { 1.0 })
            .collect();
        let sol = relax_and_round(&program_with(objective, &up))?;
        statuses.push(sol.status);
        sol.values
    } else {
        let started = std::time::Instant::now();
        let mut program = program_with(vec![1.0; n], &up);
        let first = solve_ip(&program, options)?;
        statuses.push(first.status);
        if !first.status.has_solution() {
            return Ok(UnitMatch {
                below_optimal: first.status != SolveStatus::Infeasible,
                statuses,
                ..UnitMatch::empty()
            });
        }
        let m = chosen(&first.values).len();
        let spread = delta.iter().any(|&d| d != delta[0]);
        if m == 0 || !spread {
            first.values
        } else {
            let pin = LinearConstraint::new((0..n).map(|j| (j, 1.0)).collect(), Relation::Eq, m as f64)
                .labeled("cardinality");
            program.add_constraint(pin);
            program.set_objective(delta.iter().map(|d| -d).collect());
            let mut start = first.values.clone();
            exchange_descent(&program, &up.edges, &delta, &mut start);
            // The time limit covers both stages.
            let remaining = IpOptions {
                time_limit: options.time_limit.map(|lim| lim.saturating_sub(started.elapsed())),
                ..options.clone()
            };
            let second = solve_ip_with_incumbent(&program, &remaining, Some(&start))?;
            statuses.push(second.status);
            if second.status.has_solution() {
                second.values
            } else {
                first.values
            }
        }
    };
    let pairs: Vec<UnitPair> = chosen(&values)
        .into_iter()
        .map(|j| UnitPair {
            treated: up.edges[j].0,
            control: up.edges[j].1,
            distance: delta[j],
        })
        .collect();
    Ok(UnitMatch {
        total_distance: pairs.iter().map(|p| p.distance).fold(0.0, |a, d| a + d),
        below_optimal: statuses.iter().any(|s| *s != SolveStatus::Optimal),
        statuses,
        pairs,
    })
}
