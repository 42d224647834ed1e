//! Dense bounded-variable simplex on an explicit tableau.
//!
//! Row `i` of the program becomes `a_i·x + s_i = b_i` with the slack bounded
//! according to the relation. Rows whose slack cannot absorb the starting
//! point get an artificial column, driven to zero in phase one. The tableau
//! `B⁻¹[A | I | art]` is kept explicitly, which makes warm re-solves after a
//! bound change (dual simplex) straightforward.

use super::{IntegerProgram, Relation};

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpOutcome {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Clone)]
pub(crate) struct Tableau {
    rows: usize,
    cols: usize,
    n_struct: usize,
    first_artificial: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    x: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    objective: Vec<f64>,
    d: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
    scratch_idx: Vec<usize>,
    scratch_val: Vec<f64>,
}

impl Tableau {
    /// Builds the starting tableau with structural variables at their lower bounds.
    pub(crate) fn new(program: &IntegerProgram, lower: &[f64], upper: &[f64]) -> Self {
        let n = program.n_vars();
        let m = program.constraints().len();

        let mut residual = Vec::with_capacity(m);
        let mut needs_art = Vec::with_capacity(m);
        let mut slack_bounds = Vec::with_capacity(m);
        for c in program.constraints() {
            let act: f64 = c.terms.iter().map(|&(j, a)| a * lower[j]).sum();
            let r = c.rhs - act;
            let (sl, su) = match c.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            let scale = 1.0 + c.rhs.abs();
            needs_art.push(r < sl - FEAS_TOL * scale || r > su + FEAS_TOL * scale);
            residual.push(r);
            slack_bounds.push((sl, su));
        }
        let n_art = needs_art.iter().filter(|&&b| b).count();
        let cols = n + m + n_art;

        let mut t = vec![0.0; m * cols];
        let mut basis = vec![0; m];
        let mut state = vec![VarState::Lower; cols];
        let mut x = vec![0.0; cols];
        let mut lo = vec![0.0; cols];
        let mut up = vec![0.0; cols];
        lo[..n].copy_from_slice(lower);
        up[..n].copy_from_slice(upper);
        x[..n].copy_from_slice(lower);

        let mut art = n + m;
        for (i, c) in program.constraints().iter().enumerate() {
            let (sl, su) = slack_bounds[i];
            let slack = n + i;
            lo[slack] = sl;
            up[slack] = su;
            let row = &mut t[i * cols..(i + 1) * cols];
            let r = residual[i];
            if needs_art[i] {
                let s0 = if r < sl { sl } else { su };
                let sigma = if r - s0 > 0.0 { 1.0 } else { -1.0 };
                for &(j, a) in &c.terms {
                    row[j] += sigma * a;
                }
                row[slack] = sigma;
                row[art] = 1.0;
                x[slack] = s0;
                state[slack] = if s0 == sl { VarState::Lower } else { VarState::Upper };
                lo[art] = 0.0;
                up[art] = f64::INFINITY;
                x[art] = (r - s0).abs();
                state[art] = VarState::Basic;
                basis[i] = art;
                art += 1;
            } else {
                for &(j, a) in &c.terms {
                    row[j] += a;
                }
                row[slack] = 1.0;
                x[slack] = r;
                state[slack] = VarState::Basic;
                basis[i] = slack;
            }
        }

        let mut objective = vec![0.0; cols];
        objective[..n].copy_from_slice(program.objective());
        Tableau {
            rows: m,
            cols,
            n_struct: n,
            first_artificial: n + m,
            t,
            basis,
            state,
            x,
            lower: lo,
            upper: up,
            cost: vec![0.0; cols],
            objective,
            d: vec![0.0; cols],
            iterations: 0,
            max_iterations: 50 * (m + cols) + 1000,
            scratch_idx: Vec::with_capacity(cols),
            scratch_val: Vec::with_capacity(cols),
        }
    }

    pub(crate) fn structural_values(&self) -> Vec<f64> {
        self.x[..self.n_struct]
            .iter()
            .zip(&self.lower[..self.n_struct])
            .zip(&self.upper[..self.n_struct])
            .map(|((&v, &l), &u)| v.clamp(l, u))
            .collect()
    }

    pub(crate) fn objective_value(&self) -> f64 {
        self.objective[..self.n_struct]
            .iter()
            .zip(&self.x[..self.n_struct])
            .map(|(c, v)| c * v)
            .sum()
    }

    /// Current value of the slack of row `i`.
    pub(crate) fn slack_value(&self, i: usize) -> f64 {
        self.x[self.n_struct + i]
    }

    /// Nonbasic, unfixed structurals with their current value and the loss in
    /// objective from moving them to the opposite bound.
    pub(crate) fn nonbasic_penalties(&self) -> Vec<(usize, f64, f64)> {
        (0..self.n_struct)
            .filter(|&j| self.state[j] != VarState::Basic && !self.is_fixed(j))
            .map(|j| (j, self.x[j], self.d[j].abs()))
            .collect()
    }

    /// Fixes a nonbasic variable at its current value. The basis and primal
    /// solution are unchanged.
    pub(crate) fn fix_nonbasic(&mut self, var: usize) {
        debug_assert!(self.state[var] != VarState::Basic);
        self.lower[var] = self.x[var];
        self.upper[var] = self.x[var];
    }

    /// Two-phase primal simplex from the starting basis.
    pub(crate) fn solve(&mut self) -> LpOutcome {
        if self.first_artificial < self.cols {
            self.cost.iter_mut().for_each(|c| *c = 0.0);
            for j in self.first_artificial..self.cols {
                self.cost[j] = -1.0;
            }
            self.recompute_reduced_costs();
            match self.primal() {
                LpOutcome::Optimal => {}
                other => return other,
            }
            let infeasibility: f64 = (self.first_artificial..self.cols).map(|j| self.x[j]).sum();
            if infeasibility > 1e-7 * (1.0 + self.rows as f64) {
                return LpOutcome::Infeasible;
            }
            for j in self.first_artificial..self.cols {
                self.upper[j] = 0.0;
                if self.state[j] != VarState::Basic {
                    self.x[j] = 0.0;
                    self.state[j] = VarState::Lower;
                }
            }
        }
        self.cost.copy_from_slice(&self.objective);
        self.recompute_reduced_costs();
        self.primal()
    }

    /// Tightens the bounds of a variable of an already optimal tableau and
    /// re-optimizes with the dual simplex.
    pub(crate) fn rebound_and_resolve(&mut self, var: usize, lo: f64, hi: f64) -> LpOutcome {
        self.rebound_many_and_resolve(&[(var, lo, hi)])
    }

    pub(crate) fn rebound_many_and_resolve(&mut self, bounds: &[(usize, f64, f64)]) -> LpOutcome {
        self.iterations = 0;
        for &(var, lo, hi) in bounds {
            self.lower[var] = lo;
            self.upper[var] = hi;
            if self.state[var] == VarState::Basic {
                continue;
            }
            let (target, st) = match self.state[var] {
                VarState::Upper if hi > lo => (hi, VarState::Upper),
                _ => (lo, VarState::Lower),
            };
            let delta = target - self.x[var];
            if delta != 0.0 {
                for i in 0..self.rows {
                    let a = self.t[i * self.cols + var];
                    if a != 0.0 {
                        self.x[self.basis[i]] -= a * delta;
                    }
                }
            }
            self.x[var] = target;
            self.state[var] = st;
        }
        match self.dual() {
            LpOutcome::Optimal => self.primal(),
            other => other,
        }
    }

    fn recompute_reduced_costs(&mut self) {
        self.d.copy_from_slice(&self.cost);
        for i in 0..self.rows {
            let cb = self.cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.t[i * self.cols..(i + 1) * self.cols];
            for (dj, &a) in self.d.iter_mut().zip(row) {
                *dj -= cb * a;
            }
        }
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.upper[j] - self.lower[j] <= FEAS_TOL
    }

    fn primal(&mut self) -> LpOutcome {
        let mut degenerate = 0usize;
        loop {
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return LpOutcome::IterationLimit;
            }
            let bland = degenerate > DEGENERATE_RUN;
            let Some((q, dir)) = self.choose_entering(bland) else {
                return LpOutcome::Optimal;
            };

            let mut theta = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, bool)> = None;
            let mut best_alpha = 0.0;
            for i in 0..self.rows {
                let alpha = dir * self.t[i * self.cols + q];
                let b = self.basis[i];
                let (limit, to_lower) = if alpha > PIVOT_TOL {
                    if self.lower[b] == f64::NEG_INFINITY {
                        continue;
                    }
                    ((self.x[b] - self.lower[b]) / alpha, true)
                } else if alpha < -PIVOT_TOL {
                    if self.upper[b] == f64::INFINITY {
                        continue;
                    }
                    ((self.upper[b] - self.x[b]) / -alpha, false)
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let better = match leave {
                    None => limit < theta,
                    Some((r, _)) => {
                        if limit < theta - 1e-12 {
                            true
                        } else if limit <= theta + 1e-12 {
                            if bland {
                                b < self.basis[r]
                            } else {
                                alpha.abs() > best_alpha
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    theta = limit;
                    leave = Some((i, to_lower));
                    best_alpha = alpha.abs();
                }
            }
            if !theta.is_finite() {
                // Cannot happen with bounded structurals; treat as numerical failure.
                return LpOutcome::IterationLimit;
            }
            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            if theta > 0.0 {
                self.x[q] += dir * theta;
                for i in 0..self.rows {
                    let a = self.t[i * self.cols + q];
                    if a != 0.0 {
                        self.x[self.basis[i]] -= dir * theta * a;
                    }
                }
            }
            match leave {
                None => {
                    // bound flip
                    if dir > 0.0 {
                        self.x[q] = self.upper[q];
                        self.state[q] = VarState::Upper;
                    } else {
                        self.x[q] = self.lower[q];
                        self.state[q] = VarState::Lower;
                    }
                }
                Some((r, to_lower)) => {
                    let b = self.basis[r];
                    if to_lower {
                        self.x[b] = self.lower[b];
                        self.state[b] = VarState::Lower;
                    } else {
                        self.x[b] = self.upper[b];
                        self.state[b] = VarState::Upper;
                    }
                    self.pivot(r, q);
                }
            }
        }
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.cols {
            let dir = match self.state[j] {
                VarState::Basic => continue,
                VarState::Lower if self.d[j] > OPT_TOL => 1.0,
                VarState::Upper if self.d[j] < -OPT_TOL => -1.0,
                _ => continue,
            };
            if self.is_fixed(j) {
                continue;
            }
            if bland {
                return Some((j, dir));
            }
            let score = self.d[j].abs();
            if score > best_score {
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    fn dual(&mut self) -> LpOutcome {
        loop {
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return LpOutcome::IterationLimit;
            }
            let mut pick: Option<(usize, f64)> = None;
            let mut worst = 0.0;
            for i in 0..self.rows {
                let b = self.basis[i];
                let v = self.x[b];
                let scale = 1.0 + v.abs();
                let viol = if v < self.lower[b] - FEAS_TOL * scale {
                    self.lower[b] - v
                } else if v > self.upper[b] + FEAS_TOL * scale {
                    v - self.upper[b]
                } else {
                    continue;
                };
                if viol > worst {
                    worst = viol;
                    pick = Some((i, if v < self.lower[b] { self.lower[b] } else { self.upper[b] }));
                }
            }
            let Some((r, target)) = pick else {
                return LpOutcome::Optimal;
            };
            let b = self.basis[r];
            let increase = self.x[b] < target;
            let row = &self.t[r * self.cols..(r + 1) * self.cols];

            let mut entering: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            let mut best_alpha = 0.0;
            for j in 0..self.cols {
                let st = self.state[j];
                if st == VarState::Basic || self.is_fixed(j) {
                    continue;
                }
                let a = row[j];
                let eligible = match (st, increase) {
                    (VarState::Lower, true) => a < -PIVOT_TOL,
                    (VarState::Upper, true) => a > PIVOT_TOL,
                    (VarState::Lower, false) => a > PIVOT_TOL,
                    (VarState::Upper, false) => a < -PIVOT_TOL,
                    _ => false,
                };
                if !eligible {
                    continue;
                }
                let ratio = self.d[j].abs() / a.abs();
                if ratio < best_ratio - 1e-12 || (ratio <= best_ratio + 1e-12 && a.abs() > best_alpha) {
                    best_ratio = ratio;
                    best_alpha = a.abs();
                    entering = Some(j);
                }
            }
            let Some(q) = entering else {
                return LpOutcome::Infeasible;
            };
            let alpha = self.t[r * self.cols + q];
            let delta = (self.x[b] - target) / alpha;
            self.x[q] += delta;
            for i in 0..self.rows {
                let a = self.t[i * self.cols + q];
                if a != 0.0 {
                    self.x[self.basis[i]] -= a * delta;
                }
            }
            self.x[b] = target;
            self.state[b] = if increase { VarState::Lower } else { VarState::Upper };
            self.pivot(r, q);
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let cols = self.cols;
        let p = self.t[r * cols + q];
        let inv = 1.0 / p;
        self.scratch_idx.clear();
        self.scratch_val.clear();
        {
            let row = &mut self.t[r * cols..(r + 1) * cols];
            for (j, v) in row.iter_mut().enumerate() {
                if *v != 0.0 {
                    *v *= inv;
                    if v.abs() < 1e-14 {
                        *v = 0.0;
                    } else {
                        self.scratch_idx.push(j);
                        self.scratch_val.push(*v);
                    }
                }
            }
            row[q] = 1.0;
        }
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * cols + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * cols..(i + 1) * cols];
            for (&j, &v) in self.scratch_idx.iter().zip(&self.scratch_val) {
                let nv = row[j] - f * v;
                row[j] = if nv.abs() < 1e-14 { 0.0 } else { nv };
            }
            row[q] = 0.0;
        }
        let f = self.d[q];
        if f != 0.0 {
            for (&j, &v) in self.scratch_idx.iter().zip(&self.scratch_val) {
                self.d[j] -= f * v;
            }
            self.d[q] = 0.0;
        }
        let leaving = self.basis[r];
        if self.state[leaving] == VarState::Basic {
            self.state[leaving] = VarState::Lower;
        }
        self.basis[r] = q;
        self.state[q] = VarState::Basic;
    }
}
