//! Multilevel matching: unit matchings for every cluster pair, then the
//! cluster assignment, plus the cluster-first baselines.

pub mod assignment;
pub mod cluster;
pub mod table;
pub mod units;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use assignment::{min_distance_assignment, Assignment};
pub use cluster::{cluster_match, ClusterAssignment, InfeasibilityReport};
pub use table::{compute_pair_table, PairTable};
pub use units::{cardinality_match_units, UnitMatch};

use crate::balance::{clusters_admissible, CompiledSpec};
use crate::data::Dataset;
use crate::distance::{DistanceMatrix, DistanceModel};
use crate::ip::{IpOptions, ProgramError, SolveStatus};
use crate::sample::{ClusterPair, MatchedSample, Strategy, UnitPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    MaxCardinality,
    MinDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MyopicMode {
    Optimal,
    Cardinality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOptions {
    pub objective: Objective,
    pub lambda: f64,
    pub approximate: bool,
    pub ip: IpOptions,
    pub threads: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            objective: Objective::MaxCardinality,
            lambda: 0.0,
            approximate: false,
            ip: IpOptions::default(),
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRun {
    #[serde(skip)]
    pub sample: MatchedSample,
    pub strategy: Strategy,
    pub cluster_pairs: usize,
    pub unit_pairs: usize,
    pub total_distance: f64,
    /// Integer or linear programs solved, all stages included.
    pub problems_solved: usize,
    pub unit_problems: usize,
    pub below_optimal: usize,
    pub status_counts: BTreeMap<String, usize>,
    pub stage_seconds: BTreeMap<String, f64>,
    pub infeasibility: Option<InfeasibilityReport>,
}

impl MatchRun {
    fn new(sample: MatchedSample) -> Self {
        Self {
            strategy: sample.strategy,
            cluster_pairs: sample.pairs.len(),
            unit_pairs: sample.n_unit_pairs(),
            total_distance: sample.total_distance(),
            sample,
            problems_solved: 0,
            unit_problems: 0,
            below_optimal: 0,
            status_counts: BTreeMap::new(),
            stage_seconds: BTreeMap::new(),
            infeasibility: None,
        }
    }

    fn count(&mut self, statuses: &[SolveStatus]) {
        self.problems_solved += statuses.len();
        for s in statuses {
            *self.status_counts.entry(s.tag().to_string()).or_default() += 1;
        }
    }
}

/// Every unit-level pair table entry, then the cluster assignment; the
/// selected entries' cached pairings form the sample.
pub fn multilevel_match(
    ds: &Dataset,
    spec: &CompiledSpec,
    unit_model: &DistanceModel,
    options: &MatchOptions,
) -> Result<MatchRun, ProgramError> {
    let clock = Instant::now();
    let table = compute_pair_table(ds, spec, unit_model, &options.ip, options.approximate, options.threads)?;
    let table_secs = clock.elapsed().as_secs_f64();
    log::info!("pair table: {} subproblems in {table_secs:.2}s", table.solved);
    let clock = Instant::now();
    let assignment = cluster_match(&table, ds, spec, options.lambda, options.objective, &options.ip)?;
    let cluster_secs = clock.elapsed().as_secs_f64();
    let pairs = assignment
        .pairs
        .iter()
        .map(|&(i, j)| ClusterPair {
            treated: table.treated[i],
            control: table.control[j],
            units: table.pairing(i, j).to_vec(),
        })
        .collect();
    let mut run = MatchRun::new(MatchedSample {
        pairs,
        strategy: Strategy::Dynamic,
    });
    run.unit_problems = table.solved;
    run.below_optimal = table.below_optimal;
    for (tag, n) in &table.status_counts {
        run.problems_solved += n;
        *run.status_counts.entry(tag.clone()).or_default() += n;
    }
    run.count(&assignment.statuses);
    run.infeasibility = assignment.infeasibility;
    if run.infeasibility.is_none() && run.cluster_pairs == 0 && table.solved > 0 {
        run.infeasibility = Some(InfeasibilityReport {
            message: "no cluster pair admits a unit pair satisfying the unit-level constraints".into(),
            binding: spec.unit.iter().map(|c| c.constraint.describe()).collect(),
        });
    }
    run.stage_seconds.insert("pair_table".into(), table_secs);
    run.stage_seconds.insert("cluster".into(), cluster_secs);
    Ok(run)
}

fn admissible_matrix(ds: &Dataset, spec: &CompiledSpec, model: &DistanceModel) -> DistanceMatrix {
    let treated = ds.treated_clusters();
    let control = ds.control_clusters();
    DistanceMatrix::from_fn(treated, control, |t, c| {
        if clusters_admissible(spec, ds, t, c) {
            model.distance(t, c)
        } else {
            f64::INFINITY
        }
    })
}

/// Clusters first using cluster covariates only, then units inside the
/// chosen cluster pairs.
pub fn myopic_match(
    ds: &Dataset,
    spec: &CompiledSpec,
    mode: MyopicMode,
    unit_model: &DistanceModel,
    cluster_model: &DistanceModel,
    options: &MatchOptions,
) -> Result<MatchRun, ProgramError> {
    let clock = Instant::now();
    let cm = admissible_matrix(ds, spec, cluster_model);
    let mut statuses = Vec::new();
    let cluster_pairs: Vec<(usize, usize)> = match mode {
        MyopicMode::Optimal => min_distance_assignment(&cm)
            .pairs
            .into_iter()
            .map(|(i, j)| (cm.rows[i], cm.cols[j]))
            .collect(),
        MyopicMode::Cardinality => {
            let mut candidates = Vec::new();
            let mut cost = Vec::new();
            for i in 0..cm.n_rows() {
                for j in 0..cm.n_cols() {
                    if cm.get(i, j).is_finite() {
                        candidates.push((cm.rows[i], cm.cols[j]));
                        cost.push(cm.get(i, j));
                    }
                }
            }
            let reward = vec![1.0; candidates.len()];
            let sel = cluster::select_pairs(ds, spec, &candidates, &reward, &cost, &options.ip)?;
            statuses.extend(sel.statuses);
            sel.chosen.into_iter().map(|k| candidates[k]).collect()
        }
    };
    let cluster_secs = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let mut pairs = Vec::new();
    let mut below = 0;
    for &(t, c) in &cluster_pairs {
        let tu = &ds.clusters[t].units;
        let cu = &ds.clusters[c].units;
        let mut um = unit_model.matrix(tu, cu);
        let units = match mode {
            MyopicMode::Optimal => {
                for (i, &a) in tu.iter().enumerate() {
                    for (j, &b) in cu.iter().enumerate() {
                        if spec.unit_exact().any(|e| ds.unit_value(a, e.col) != ds.unit_value(b, e.col)) {
                            um.set(i, j, f64::INFINITY);
                        }
                    }
                }
                min_distance_assignment(&um)
                    .pairs
                    .into_iter()
                    .map(|(i, j)| UnitPair {
                        treated: tu[i],
                        control: cu[j],
                        distance: um.get(i, j),
                    })
                    .collect()
            }
            MyopicMode::Cardinality => {
                let r = cardinality_match_units(ds, spec, tu, cu, &um, &options.ip, options.approximate)?;
                statuses.extend(r.statuses.iter().copied());
                below += usize::from(r.below_optimal);
                r.pairs
            }
        };
        pairs.push(ClusterPair { treated: t, control: c, units });
    }
    pairs.sort_by_key(|p| (p.treated, p.control));
    let mut run = MatchRun::new(MatchedSample {
        pairs,
        strategy: match mode {
            MyopicMode::Optimal => Strategy::MyopicOptimal,
            MyopicMode::Cardinality => Strategy::MyopicCardinality,
        },
    });
    run.count(&statuses);
    run.unit_problems = cluster_pairs.len();
    run.below_optimal = below;
    run.stage_seconds.insert("cluster".into(), cluster_secs);
    run.stage_seconds.insert("units".into(), clock.elapsed().as_secs_f64());
    Ok(run)
}
