//! LP rounding heuristics.

use super::{is_integral, solve_lp, IntegerProgram, ProgramError, Relation, Solution, SolveStatus};

const ROUND_TOL: f64 = 1e-9;

/// Greedy rounding of a fractional point: start from the variables the LP
/// set to one, then add the remaining ones in decreasing LP value while
/// every row stays satisfied. Returns `None` if no feasible point was found.
pub(crate) fn greedy_round(program: &IntegerProgram, lp_values: &[f64]) -> Option<Vec<f64>> {
    let n = program.n_vars();
    let mut order: Vec<usize> = (0..n)
        .filter(|&j| lp_values[j] > super::INTEGRALITY_TOL && lp_values[j] < 1.0 - super::INTEGRALITY_TOL)
        .filter(|&j| program.objective()[j] > 0.0)
        .collect();
    order.sort_by(|&a, &b| lp_values[b].total_cmp(&lp_values[a]).then(a.cmp(&b)));

    let start: Vec<f64> = lp_values
        .iter()
        .map(|&v| if v >= 1.0 - super::INTEGRALITY_TOL { 1.0 } else { 0.0 })
        .collect();
    if program.is_feasible(&start, ROUND_TOL) {
        let mut x = start;
        for &j in &order {
            x[j] = 1.0;
            if !program.is_feasible(&x, ROUND_TOL) {
                x[j] = 0.0;
            }
        }
        return Some(x);
    }

    // The integral part already breaks a row: rebuild from scratch, only
    // guarding the upper sides, and check everything at the end.
    let mut all: Vec<usize> = (0..n).filter(|&j| lp_values[j] > super::INTEGRALITY_TOL).collect();
    all.sort_by(|&a, &b| lp_values[b].total_cmp(&lp_values[a]).then(a.cmp(&b)));
    let mut x = vec![0.0; n];
    for &j in &all {
        x[j] = 1.0;
        let breaks_upper = program.constraints().iter().any(|c| {
            matches!(c.relation, Relation::Le | Relation::Eq)
                && c.activity(&x) > c.rhs + ROUND_TOL * (1.0 + c.rhs.abs())
        });
        if breaks_upper {
            x[j] = 0.0;
        }
    }
    program.is_feasible(&x, ROUND_TOL).then_some(x)
}

/// Solves the LP relaxation and rounds it greedily. The status is `Optimal`
/// when the relaxation was already integral, otherwise `Feasible` with the
/// gap to the LP bound.
pub fn relax_and_round(program: &IntegerProgram) -> Result<Solution, ProgramError> {
    let lp = solve_lp(program)?;
    let n = program.n_vars();
    if !lp.status.has_solution() {
        return Ok(lp);
    }
    if is_integral(&lp.values) {
        let values: Vec<f64> = lp.values.iter().map(|v| v.round()).collect();
        return Ok(Solution {
            status: SolveStatus::Optimal,
            objective_value: program.evaluate(&values),
            values,
            nodes: 1,
        });
    }
    Ok(match greedy_round(program, &lp.values) {
        Some(values) => {
            let obj = program.evaluate(&values);
            Solution {
                status: SolveStatus::Feasible {
                    bound_gap: (lp.objective_value - obj).max(0.0),
                },
                values,
                objective_value: obj,
                nodes: 1,
            }
        }
        None => Solution::without_point(SolveStatus::InfeasibleUnproven, n),
    })
}
