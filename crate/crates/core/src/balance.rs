//! Balance constraints as linear rows over pair variables, and the matching
//! diagnostics (standardized differences, fine-balance deviations, KS
//! statistics, total variation distances).
//!
//! Unit-level constraints apply within each cluster pair; cluster-level
//! constraints apply to the set of matched cluster pairs.

use serde::{Deserialize, Serialize};

use crate::data::{Column, CovariateKind, Dataset, Level, Role};
use crate::ip::{LinearConstraint, Relation};
use crate::sample::MatchedSample;
use crate::stats;

pub const DEFAULT_KS_GRID: usize = 10;
/// Tolerance used when re-checking constraints on a finished sample. Looser
/// than the solver's acceptance tolerance so accepted solutions always pass.
const REPORT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ConstraintKind {
    /// |mean_t - mean_c| ≤ tolerance · pooled SD.
    Mean { tolerance: f64 },
    /// Per-category |count_t - count_c| ≤ slack.
    Fine { slack: u32 },
    /// ECDF gap ≤ max_gap at `grid_size` pooled quantile cut-points.
    Ks { max_gap: f64, grid_size: usize },
    /// Pairs must agree on the covariate.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstraint")]
pub struct BalanceConstraint {
    #[serde(flatten)]
    pub kind: ConstraintKind,
    pub covariate: String,
    pub weight_by_cluster_size: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    #[serde(rename = "type")]
    kind: String,
    covariate: String,
    tolerance: Option<f64>,
    slack: Option<u32>,
    max_gap: Option<f64>,
    grid_size: Option<usize>,
    #[serde(default)]
    weight_by_cluster_size: bool,
}

impl TryFrom<RawConstraint> for BalanceConstraint {
    type Error = String;

    fn try_from(r: RawConstraint) -> Result<Self, String> {
        let stray = |field: &str, present: bool| {
            if present {
                Err(format!("`{field}` does not apply to a `{}` constraint", r.kind))
            } else {
                Ok(())
            }
        };
        let kind = match r.kind.as_str() {
            "mean" => {
                stray("slack", r.slack.is_some())?;
                stray("max_gap", r.max_gap.is_some())?;
                stray("grid_size", r.grid_size.is_some())?;
                ConstraintKind::Mean {
                    tolerance: r.tolerance.ok_or("mean constraint needs `tolerance`")?,
                }
            }
            "fine" => {
                stray("tolerance", r.tolerance.is_some())?;
                stray("max_gap", r.max_gap.is_some())?;
                stray("grid_size", r.grid_size.is_some())?;
                ConstraintKind::Fine {
                    slack: r.slack.unwrap_or(0),
                }
            }
            "ks" => {
                stray("tolerance", r.tolerance.is_some())?;
                stray("slack", r.slack.is_some())?;
                ConstraintKind::Ks {
                    max_gap: r.max_gap.ok_or("ks constraint needs `max_gap`")?,
                    grid_size: r.grid_size.unwrap_or(DEFAULT_KS_GRID),
                }
            }
            "exact" => {
                stray("tolerance", r.tolerance.is_some())?;
                stray("slack", r.slack.is_some())?;
                stray("max_gap", r.max_gap.is_some())?;
                stray("grid_size", r.grid_size.is_some())?;
                ConstraintKind::Exact
            }
            other => return Err(format!("unknown constraint type `{other}` (mean, fine, ks, exact)")),
        };
        Ok(Self {
            kind,
            covariate: r.covariate,
            weight_by_cluster_size: r.weight_by_cluster_size,
        })
    }
}

impl BalanceConstraint {
    pub fn mean(covariate: &str, tolerance: f64) -> Self {
        Self {
            kind: ConstraintKind::Mean { tolerance },
            covariate: covariate.into(),
            weight_by_cluster_size: false,
        }
    }

    pub fn fine(covariate: &str, slack: u32) -> Self {
        Self {
            kind: ConstraintKind::Fine { slack },
            covariate: covariate.into(),
            weight_by_cluster_size: false,
        }
    }

    pub fn ks(covariate: &str, max_gap: f64, grid_size: usize) -> Self {
        Self {
            kind: ConstraintKind::Ks { max_gap, grid_size },
            covariate: covariate.into(),
            weight_by_cluster_size: false,
        }
    }

    pub fn exact(covariate: &str) -> Self {
        Self {
            kind: ConstraintKind::Exact,
            covariate: covariate.into(),
            weight_by_cluster_size: false,
        }
    }

    pub fn weighted(mut self) -> Self {
        self.weight_by_cluster_size = true;
        self
    }

    pub fn describe(&self) -> String {
        let w = if self.weight_by_cluster_size { ", weighted" } else { "" };
        match self.kind {
            ConstraintKind::Mean { tolerance } => format!("mean({}, {tolerance} SD{w})", self.covariate),
            ConstraintKind::Fine { slack } => format!("fine({}, slack {slack})", self.covariate),
            ConstraintKind::Ks { max_gap, grid_size } => {
                format!("ks({}, gap {max_gap}, grid {grid_size})", self.covariate)
            }
            ConstraintKind::Exact => format!("exact({})", self.covariate),
        }
    }
}

/// Unit-level constraints (within each cluster pair) and cluster-level ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceSpec {
    #[serde(default)]
    pub unit: Vec<BalanceConstraint>,
    #[serde(default)]
    pub cluster: Vec<BalanceConstraint>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BalanceError {
    #[error("balance constraint `{constraint}`: {reason}")]
    Spec { constraint: String, reason: String },
    #[error("undefined sample: {0}")]
    EmptySample(String),
}

/// A constraint resolved against a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    pub constraint: BalanceConstraint,
    pub col: Column,
    pub sd: f64,
    pub cutpoints: Vec<f64>,
    pub categories: Vec<String>,
}

impl Compiled {
    pub fn is_exact(&self) -> bool {
        self.constraint.kind == ConstraintKind::Exact
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledSpec {
    pub unit: Vec<Compiled>,
    pub cluster: Vec<Compiled>,
}

impl CompiledSpec {
    /// Unit-level exact constraints.
    pub fn unit_exact(&self) -> impl Iterator<Item = &Compiled> {
        self.unit.iter().filter(|c| c.is_exact())
    }

    /// Whether cluster-level rows beyond exact matching exist.
    pub fn has_cluster_balance_rows(&self) -> bool {
        self.cluster.iter().any(|c| !c.is_exact())
    }
}

/// Pooled pre-match quantile cut-points at `j/(grid+1)`, deduplicated.
pub fn ks_cutpoints(values: &[f64], grid: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cuts: Vec<f64> = (1..=grid)
        .map(|j| stats::quantile_sorted(&sorted, j as f64 / (grid + 1) as f64))
        .collect();
    cuts.dedup();
    cuts
}

fn compile_one(ds: &Dataset, c: &BalanceConstraint, level: Level) -> Result<Compiled, BalanceError> {
    let err = |reason: String| BalanceError::Spec {
        constraint: c.describe(),
        reason,
    };
    let (entry, col) = ds.covariate(&c.covariate).map_err(|e| err(e.to_string()))?;
    if col.level != level {
        return Err(err(format!("`{}` is not a {level:?}-level covariate", c.covariate).to_lowercase()));
    }
    if c.weight_by_cluster_size {
        if level != Level::Cluster {
            return Err(err("weighting by cluster size applies to cluster constraints only".into()));
        }
        if !matches!(c.kind, ConstraintKind::Mean { .. }) {
            return Err(err("weighting by cluster size applies to mean constraints only".into()));
        }
    }
    let sd = ds.pooled_sd(col);
    let mut cutpoints = Vec::new();
    match c.kind {
        ConstraintKind::Mean { tolerance } => {
            let Some(sd) = sd else {
                return Err(err("mean balance needs a numeric covariate".into()));
            };
            if !(tolerance > 0.0 || (sd.degenerate && tolerance >= 0.0)) {
                return Err(err("tolerance must be positive".into()));
            }
        }
        ConstraintKind::Fine { .. } => {
            if entry.kind != CovariateKind::Nominal {
                return Err(err("fine balance needs a nominal covariate".into()));
            }
        }
        ConstraintKind::Ks { max_gap, grid_size } => {
            if sd.is_none() {
                return Err(err("ks balance needs a numeric covariate".into()));
            }
            if !(max_gap > 0.0 && max_gap <= 1.0) {
                return Err(err("max_gap must lie in (0, 1]".into()));
            }
            if grid_size == 0 {
                return Err(err("grid_size must be at least 1".into()));
            }
            let (mut t, c) = ds.split_by_arm(col);
            t.extend(c);
            cutpoints = ks_cutpoints(&t, grid_size);
        }
        ConstraintKind::Exact => {
            if entry.kind == CovariateKind::Continuous {
                return Err(err("exact matching needs a nominal or binary covariate".into()));
            }
        }
    }
    Ok(Compiled {
        constraint: c.clone(),
        col,
        sd: sd.map_or(0.0, |s| s.value),
        cutpoints,
        categories: entry.categories.clone(),
    })
}

impl BalanceSpec {
    pub fn compile(&self, ds: &Dataset) -> Result<CompiledSpec, BalanceError> {
        Ok(CompiledSpec {
            unit: self
                .unit
                .iter()
                .map(|c| compile_one(ds, c, Level::Unit))
                .collect::<Result<_, _>>()?,
            cluster: self
                .cluster
                .iter()
                .map(|c| compile_one(ds, c, Level::Cluster))
                .collect::<Result<_, _>>()?,
        })
    }
}

/// Covariate values of the two members of each candidate pair.
pub(crate) struct PairValues<'a> {
    pub value_t: &'a dyn Fn(usize) -> f64,
    pub value_c: &'a dyn Fn(usize) -> f64,
}

/// Balance rows for one non-exact constraint over pair variables
/// `x_j` joining `pairs[j] = (t, c)`, each with weight `weights[j]`.
pub(crate) fn balance_rows(
    c: &Compiled,
    pairs: &[(usize, usize)],
    weights: &[f64],
    vals: &PairValues<'_>,
) -> Vec<LinearConstraint> {
    let name = &c.constraint.covariate;
    let mut rows = Vec::new();
    let two_sided = |rows: &mut Vec<LinearConstraint>, diffs: Vec<f64>, allowance: &dyn Fn(usize) -> f64, label: String| {
        let up: Vec<(usize, f64)> = diffs
            .iter()
            .enumerate()
            .map(|(j, d)| (j, d - allowance(j)))
            .filter(|t| t.1 != 0.0)
            .collect();
        let down: Vec<(usize, f64)> = diffs
            .iter()
            .enumerate()
            .map(|(j, d)| (j, -d - allowance(j)))
            .filter(|t| t.1 != 0.0)
            .collect();
        rows.push(LinearConstraint::new(up, Relation::Le, 0.0).labeled(format!("{label}_hi")));
        rows.push(LinearConstraint::new(down, Relation::Le, 0.0).labeled(format!("{label}_lo")));
    };
    match c.constraint.kind {
        ConstraintKind::Mean { tolerance } => {
            let diffs = pairs
                .iter()
                .zip(weights)
                .map(|(&(t, k), w)| w * ((vals.value_t)(t) - (vals.value_c)(k)))
                .collect();
            let allow = |j: usize| weights[j] * tolerance * c.sd;
            two_sided(&mut rows, diffs, &allow, format!("mean_{name}"));
        }
        ConstraintKind::Fine { slack } => {
            for (g, cat) in c.categories.iter().enumerate() {
                let g = g as f64;
                let terms: Vec<(usize, f64)> = pairs
                    .iter()
                    .enumerate()
                    .map(|(j, &(t, k))| {
                        let a = f64::from(u8::from((vals.value_t)(t) == g));
                        let b = f64::from(u8::from((vals.value_c)(k) == g));
                        (j, a - b)
                    })
                    .filter(|t| t.1 != 0.0)
                    .collect();
                let label = format!("fine_{name}_{cat}");
                let neg = terms.iter().map(|&(j, a)| (j, -a)).collect();
                rows.push(LinearConstraint::new(terms, Relation::Le, f64::from(slack)).labeled(format!("{label}_hi")));
                rows.push(LinearConstraint::new(neg, Relation::Le, f64::from(slack)).labeled(format!("{label}_lo")));
            }
        }
        ConstraintKind::Ks { max_gap, .. } => {
            for (q, &cut) in c.cutpoints.iter().enumerate() {
                let diffs = pairs
                    .iter()
                    .map(|&(t, k)| {
                        f64::from(u8::from((vals.value_t)(t) <= cut)) - f64::from(u8::from((vals.value_c)(k) <= cut))
                    })
                    .collect();
                two_sided(&mut rows, diffs, &|_| max_gap, format!("ks_{name}_{q}"));
            }
        }
        ConstraintKind::Exact => {}
    }
    rows
}

/// Edge variables and rows of one within-cluster-pair matching problem.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitProgram {
    /// Surviving candidate edges `(treated_unit, control_unit)`; variable `j`
    /// is edge `j`.
    pub edges: Vec<(usize, usize)>,
    pub constraints: Vec<LinearConstraint>,
}

/// Degree rows (each unit in at most one pair) plus the unit-level balance
/// rows. Exact constraints remove the edges they forbid.
pub fn build_unit_constraints(
    spec: &CompiledSpec,
    ds: &Dataset,
    treated_units: &[usize],
    control_units: &[usize],
    candidate_edges: &[(usize, usize)],
) -> UnitProgram {
    let edges: Vec<(usize, usize)> = candidate_edges
        .iter()
        .copied()
        .filter(|&(t, c)| {
            spec.unit_exact()
                .all(|e| ds.unit_value(t, e.col) == ds.unit_value(c, e.col))
        })
        .collect();
    let mut constraints = degree_rows(&edges, treated_units, control_units, "unit");
    let ones = vec![1.0; edges.len()];
    for c in spec.unit.iter().filter(|c| !c.is_exact()) {
        let col = c.col;
        let value = |u: usize| ds.unit_value(u, col);
        let vals = PairValues {
            value_t: &value,
            value_c: &value,
        };
        constraints.extend(balance_rows(c, &edges, &ones, &vals));
    }
    UnitProgram { edges, constraints }
}

fn degree_rows(pairs: &[(usize, usize)], left: &[usize], right: &[usize], tag: &str) -> Vec<LinearConstraint> {
    let mut rows = Vec::new();
    for (side, members) in [("t", left), ("c", right)] {
        for &u in members {
            let terms: Vec<(usize, f64)> = pairs
                .iter()
                .enumerate()
                .filter(|(_, &(t, c))| if side == "t" { t == u } else { c == u })
                .map(|(j, _)| (j, 1.0))
                .collect();
            if terms.len() > 1 {
                rows.push(LinearConstraint::new(terms, Relation::Le, 1.0).labeled(format!("deg_{tag}_{side}{u}")));
            }
        }
    }
    rows
}

/// Whether two clusters may be paired: same stratum and agreement on every
/// cluster-level exact constraint.
pub fn clusters_admissible(spec: &CompiledSpec, ds: &Dataset, t: usize, c: usize) -> bool {
    ds.clusters[t].stratum == ds.clusters[c].stratum
        && spec
            .cluster
            .iter()
            .filter(|k| k.is_exact())
            .all(|k| ds.cluster_value(t, k.col) == ds.cluster_value(c, k.col))
}

/// Pair weight for cluster constraints weighted by size: the pre-match
/// number of units of both clusters, identical on both sides of the pair.
pub fn cluster_pair_weight(ds: &Dataset, t: usize, c: usize) -> f64 {
    (ds.clusters[t].units.len() + ds.clusters[c].units.len()) as f64
}

/// Degree rows and cluster-level balance rows over pair variables
/// `a_j` for `pairs[j] = (treated_cluster, control_cluster)`.
pub fn build_cluster_constraints(
    spec: &CompiledSpec,
    ds: &Dataset,
    pairs: &[(usize, usize)],
) -> Vec<LinearConstraint> {
    let mut left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let mut right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    left.sort_unstable();
    left.dedup();
    right.sort_unstable();
    right.dedup();
    let mut rows = degree_rows(pairs, &left, &right, "cluster");
    rows.extend(cluster_balance_rows(spec, ds, pairs));
    rows
}

fn cluster_balance_rows(spec: &CompiledSpec, ds: &Dataset, pairs: &[(usize, usize)]) -> Vec<LinearConstraint> {
    let mut rows = Vec::new();
    for c in spec.cluster.iter().filter(|c| !c.is_exact()) {
        let weights: Vec<f64> = pairs
            .iter()
            .map(|&(t, k)| {
                if c.constraint.weight_by_cluster_size {
                    cluster_pair_weight(ds, t, k)
                } else {
                    1.0
                }
            })
            .collect();
        let col = c.col;
        let value = |k: usize| ds.cluster_value(k, col);
        let vals = PairValues {
            value_t: &value,
            value_c: &value,
        };
        rows.extend(balance_rows(c, pairs, &weights, &vals));
    }
    rows
}

pub fn ks_statistic(treated: &[f64], control: &[f64]) -> Result<f64, BalanceError> {
    if treated.is_empty() || control.is_empty() {
        return Err(BalanceError::EmptySample("ks statistic of an empty group".into()));
    }
    let mut a = treated.to_vec();
    let mut b = control.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

/// Category counts of `values` (category indices) over `n_categories`.
pub fn category_counts(values: &[f64], n_categories: usize) -> Vec<usize> {
    let mut counts = vec![0; n_categories];
    for &v in values {
        counts[v as usize] += 1;
    }
    counts
}

/// `Σ_g |count_t(g) - count_c(g)| / 2`.
pub fn fine_balance_deviation(treated: &[usize], control: &[usize]) -> usize {
    let total: usize = treated.iter().zip(control).map(|(a, b)| a.abs_diff(*b)).sum();
    total / 2 + total % 2
}

/// `Σ_cov ½ Σ_g |p_t(g) - p_c(g)|` over the given per-covariate counts.
pub fn total_variation_distance(counts: &[(Vec<usize>, Vec<usize>)]) -> f64 {
    counts.iter().map(|(t, c)| 0.5 * proportion_gap(t, c)).sum()
}

fn proportion_gap(t: &[usize], c: &[usize]) -> f64 {
    let nt: usize = t.iter().sum();
    let nc: usize = c.iter().sum();
    let p = |x: usize, n: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    t.iter().zip(c).map(|(&a, &b)| (p(a, nt) - p(b, nc)).abs()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub level: Level,
    pub covariate: String,
    pub category: Option<String>,
    pub mean_treated: f64,
    pub mean_control: f64,
    pub std_dif: f64,
    pub count_treated: Option<usize>,
    pub count_control: Option<usize>,
    pub ks: Option<f64>,
    pub fine_deviation: Option<usize>,
    /// Cluster rows only: means with each matched pair weighted by the
    /// pre-match size of its two clusters.
    pub weighted_mean_treated: Option<f64>,
    pub weighted_mean_control: Option<f64>,
    pub weighted_std_dif: Option<f64>,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub level: Level,
    pub covariate: String,
    pub constraint: String,
    /// Cluster pair (position in the sample) for unit-level violations.
    pub pair: Option<usize>,
    pub row: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub rows: Vec<ReportRow>,
    pub violations: Vec<Violation>,
    /// `Σ_cov ½ Σ_g |Δp|` over unit-level nominal balance covariates.
    pub tv: f64,
    /// Same without the ½ factor.
    pub tv_raw: f64,
    /// Cluster-level numeric covariates with |std dif| above 0.1.
    pub cluster_mean_imbalances: usize,
}

impl BalanceReport {
    pub fn violation_count(&self) -> usize {
        self.violations.len()
    }
}

/// Pre-match pooled SD of the indicator of category `g`.
fn category_sd(ds: &Dataset, col: Column, g: f64) -> f64 {
    let (t, c) = ds.split_by_arm(col);
    let ind = |v: &[f64]| v.iter().map(|&x| f64::from(u8::from(x == g))).collect::<Vec<_>>();
    let var = |v: Vec<f64>| stats::sample_variance(&v).unwrap_or(0.0);
    ((var(ind(&t)) + var(ind(&c))) / 2.0).sqrt()
}

fn std_dif(diff: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        diff / sd
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

fn weighted_mean_or_nan(v: &[f64], w: &[f64]) -> f64 {
    stats::weighted_mean(v, w).unwrap_or(f64::NAN)
}

/// Covariates that get a report row at a level: balance-role columns plus
/// anything a constraint references.
fn reported_columns<'a>(ds: &'a Dataset, constraints: &'a [Compiled], level: Level) -> Vec<(&'a crate::data::CovariateSchema, Column)> {
    ds.columns(level)
        .filter(|(s, col)| s.role == Role::Balance || constraints.iter().any(|c| c.col == *col))
        .collect()
}

pub fn balance_report(sample: &MatchedSample, ds: &Dataset, spec: &CompiledSpec) -> BalanceReport {
    let mut violations = Vec::new();

    for (p, pair) in sample.pairs.iter().enumerate() {
        let edges: Vec<(usize, usize)> = pair.units.iter().map(|u| (u.treated, u.control)).collect();
        if edges.is_empty() {
            continue;
        }
        let ones = vec![1.0; edges.len()];
        for c in &spec.unit {
            let rows = if c.is_exact() {
                edges
                    .iter()
                    .filter(|&&(t, k)| ds.unit_value(t, c.col) != ds.unit_value(k, c.col))
                    .map(|_| "exact".to_string())
                    .collect::<Vec<_>>()
            } else {
                let col = c.col;
                let value = |u: usize| ds.unit_value(u, col);
                let vals = PairValues {
                    value_t: &value,
                    value_c: &value,
                };
                balance_rows(c, &edges, &ones, &vals)
                    .into_iter()
                    .filter(|r| !r.is_satisfied(&ones, REPORT_TOL))
                    .map(|r| r.label.unwrap_or_default())
                    .collect()
            };
            for row in rows.into_iter().take(1) {
                violations.push(Violation {
                    level: Level::Unit,
                    covariate: c.constraint.covariate.clone(),
                    constraint: c.constraint.describe(),
                    pair: Some(p),
                    row,
                });
            }
        }
    }
    let cpairs: Vec<(usize, usize)> = sample.pairs.iter().map(|p| (p.treated, p.control)).collect();
    if !cpairs.is_empty() {
        let ones = vec![1.0; cpairs.len()];
        for c in &spec.cluster {
            let failed: Vec<String> = if c.is_exact() {
                cpairs
                    .iter()
                    .filter(|&&(t, k)| ds.cluster_value(t, c.col) != ds.cluster_value(k, c.col))
                    .map(|_| "exact".to_string())
                    .collect()
            } else {
                let weights: Vec<f64> = cpairs
                    .iter()
                    .map(|&(t, k)| if c.constraint.weight_by_cluster_size { cluster_pair_weight(ds, t, k) } else { 1.0 })
                    .collect();
                let col = c.col;
                let value = |k: usize| ds.cluster_value(k, col);
                let vals = PairValues {
                    value_t: &value,
                    value_c: &value,
                };
                balance_rows(c, &cpairs, &weights, &vals)
                    .into_iter()
                    .filter(|r| !r.is_satisfied(&ones, REPORT_TOL))
                    .map(|r| r.label.unwrap_or_default())
                    .collect()
            };
            if let Some(row) = failed.into_iter().next() {
                violations.push(Violation {
                    level: Level::Cluster,
                    covariate: c.constraint.covariate.clone(),
                    constraint: c.constraint.describe(),
                    pair: None,
                    row,
                });
            }
        }
    }
    for p in &sample.pairs {
        if ds.clusters[p.treated].stratum != ds.clusters[p.control].stratum {
            violations.push(Violation {
                level: Level::Cluster,
                covariate: "stratum".into(),
                constraint: "exact(stratum)".into(),
                pair: None,
                row: "stratum".into(),
            });
            break;
        }
    }

    let flagged = |level: Level, name: &str| violations.iter().any(|v| v.level == level && v.covariate == name);

    let tu = sample.treated_units();
    let cu = sample.control_units();
    let mut rows = Vec::new();
    let mut tv_counts = Vec::new();
    for (s, col) in reported_columns(ds, &spec.unit, Level::Unit) {
        let vt: Vec<f64> = tu.iter().map(|&u| ds.unit_value(u, col)).collect();
        let vc: Vec<f64> = cu.iter().map(|&u| ds.unit_value(u, col)).collect();
        let violated = flagged(Level::Unit, &s.name);
        push_rows(&mut rows, ds, s, col, Level::Unit, &vt, &vc, None, violated);
        if s.kind == CovariateKind::Nominal && s.role == Role::Balance {
            let n = s.categories.len();
            tv_counts.push((category_counts(&vt, n), category_counts(&vc, n)));
        }
    }
    let weights: Vec<f64> = cpairs.iter().map(|&(t, c)| cluster_pair_weight(ds, t, c)).collect();
    for (s, col) in reported_columns(ds, &spec.cluster, Level::Cluster) {
        let vt: Vec<f64> = cpairs.iter().map(|&(t, _)| ds.cluster_value(t, col)).collect();
        let vc: Vec<f64> = cpairs.iter().map(|&(_, c)| ds.cluster_value(c, col)).collect();
        let violated = flagged(Level::Cluster, &s.name);
        push_rows(&mut rows, ds, s, col, Level::Cluster, &vt, &vc, Some(&weights), violated);
    }

    let cluster_mean_imbalances = rows
        .iter()
        .filter(|r| r.level == Level::Cluster && r.category.is_none() && r.std_dif.abs() > 0.1)
        .count();
    let tv = total_variation_distance(&tv_counts);
    let tv_raw = tv_counts.iter().map(|(t, c)| proportion_gap(t, c)).sum();
    BalanceReport {
        rows,
        violations,
        tv,
        tv_raw,
        cluster_mean_imbalances,
    }
}

#[allow(clippy::too_many_arguments)]
fn push_rows(
    rows: &mut Vec<ReportRow>,
    ds: &Dataset,
    s: &crate::data::CovariateSchema,
    col: Column,
    level: Level,
    vt: &[f64],
    vc: &[f64],
    weights: Option<&[f64]>,
    violated: bool,
) {
    let mean = |v: &[f64]| stats::mean(v).unwrap_or(f64::NAN);
    if s.kind == CovariateKind::Nominal {
        let n = s.categories.len();
        let ct = category_counts(vt, n);
        let cc = category_counts(vc, n);
        let dev = fine_balance_deviation(&ct, &cc);
        for (g, cat) in s.categories.iter().enumerate() {
            let it: Vec<f64> = vt.iter().map(|&x| f64::from(u8::from(x == g as f64))).collect();
            let ic: Vec<f64> = vc.iter().map(|&x| f64::from(u8::from(x == g as f64))).collect();
            let sd = category_sd(ds, col, g as f64);
            let (mt, mc) = (mean(&it), mean(&ic));
            let weighted = weights.map(|w| (weighted_mean_or_nan(&it, w), weighted_mean_or_nan(&ic, w)));
            rows.push(ReportRow {
                level,
                covariate: s.name.clone(),
                category: Some(cat.clone()),
                mean_treated: mt,
                mean_control: mc,
                std_dif: std_dif(mt - mc, sd),
                count_treated: Some(ct[g]),
                count_control: Some(cc[g]),
                ks: None,
                fine_deviation: Some(dev),
                weighted_mean_treated: weighted.map(|w| w.0),
                weighted_mean_control: weighted.map(|w| w.1),
                weighted_std_dif: weighted.map(|w| std_dif(w.0 - w.1, sd)),
                violated,
            });
        }
    } else {
        let sd = ds.pooled_sd(col).map_or(0.0, |p| p.value);
        let (mt, mc) = (mean(vt), mean(vc));
        let weighted = weights.map(|w| (weighted_mean_or_nan(vt, w), weighted_mean_or_nan(vc, w)));
        rows.push(ReportRow {
            level,
            covariate: s.name.clone(),
            category: None,
            mean_treated: mt,
            mean_control: mc,
            std_dif: std_dif(mt - mc, sd),
            count_treated: None,
            count_control: None,
            ks: if s.kind == CovariateKind::Continuous {
                ks_statistic(vt, vc).ok()
            } else {
                None
            },
            fine_deviation: None,
            weighted_mean_treated: weighted.map(|w| w.0),
            weighted_mean_control: weighted.map(|w| w.1),
            weighted_std_dif: weighted.map(|w| std_dif(w.0 - w.1, sd)),
            violated,
        });
    }
}

/// Per-arm description of the full, unmatched and matched unit samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescriptionRow {
    pub covariate: String,
    pub treated_all: f64,
    pub treated_unmatched: Option<f64>,
    pub treated_matched: f64,
    pub control_matched: f64,
    pub control_unmatched: Option<f64>,
    pub control_all: f64,
}

/// Means of unit-level numeric covariates and category proportions of
/// nominal ones, for each arm before and after matching.
pub fn sample_description(sample: &MatchedSample, ds: &Dataset) -> Vec<DescriptionRow> {
    let mut matched = vec![false; ds.units.len()];
    for u in sample.unit_pairs() {
        matched[u.treated] = true;
        matched[u.control] = true;
    }
    let select = |treated: bool, state: Option<bool>| -> Vec<usize> {
        (0..ds.units.len())
            .filter(|&u| ds.is_treated_unit(u) == treated && state.is_none_or(|m| matched[u] == m))
            .collect()
    };
    let groups = [
        select(true, None),
        select(true, Some(false)),
        select(true, Some(true)),
        select(false, Some(true)),
        select(false, Some(false)),
        select(false, None),
    ];
    let mut out = Vec::new();
    let mut emit = |name: String, f: &dyn Fn(usize) -> f64| {
        let m: Vec<Option<f64>> = groups
            .iter()
            .map(|g| stats::mean(&g.iter().map(|&u| f(u)).collect::<Vec<_>>()))
            .collect();
        out.push(DescriptionRow {
            covariate: name,
            treated_all: m[0].unwrap_or(f64::NAN),
            treated_unmatched: m[1],
            treated_matched: m[2].unwrap_or(f64::NAN),
            control_matched: m[3].unwrap_or(f64::NAN),
            control_unmatched: m[4],
            control_all: m[5].unwrap_or(f64::NAN),
        });
    };
    for (s, col) in ds.columns(Level::Unit).filter(|(s, _)| s.role == Role::Balance) {
        if s.kind == CovariateKind::Nominal {
            for (g, cat) in s.categories.iter().enumerate() {
                let g = g as f64;
                emit(format!("{}={cat}", s.name), &|u| f64::from(u8::from(ds.unit_value(u, col) == g)));
            }
        } else {
            emit(s.name.clone(), &|u| ds.unit_value(u, col));
        }
    }
    out
}
