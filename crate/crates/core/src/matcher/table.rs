//! The treated × control table of per-cluster-pair unit matchings.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::units::{cardinality_match_units, UnitMatch};
use crate::balance::{clusters_admissible, CompiledSpec};
use crate::data::Dataset;
use crate::distance::DistanceModel;
use crate::ip::{IpOptions, ProgramError};
use crate::sample::UnitPair;

#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    /// Cluster indices of the rows.
    pub treated: Vec<usize>,
    /// Cluster indices of the columns.
    pub control: Vec<usize>,
    m: Vec<usize>,
    d: Vec<f64>,
    admissible: Vec<bool>,
    pairings: Vec<Vec<UnitPair>>,
    /// Subproblems actually solved (admissible entries).
    pub solved: usize,
    pub below_optimal: usize,
    pub status_counts: BTreeMap<String, usize>,
}

impl PairTable {
    /// Table from known counts and distances, without cached pairings.
    pub fn from_counts(treated: Vec<usize>, control: Vec<usize>, m: Vec<Vec<usize>>, d: Vec<Vec<f64>>) -> Self {
        let kc = control.len();
        let flat_m: Vec<usize> = m.into_iter().flatten().collect();
        let flat_d: Vec<f64> = d.into_iter().flatten().collect();
        assert_eq!(flat_m.len(), treated.len() * kc);
        assert_eq!(flat_d.len(), flat_m.len());
        Self {
            admissible: vec![true; flat_m.len()],
            pairings: vec![Vec::new(); flat_m.len()],
            solved: 0,
            below_optimal: 0,
            status_counts: BTreeMap::new(),
            treated,
            control,
            m: flat_m,
            d: flat_d,
        }
    }

    pub fn n_treated(&self) -> usize {
        self.treated.len()
    }

    pub fn n_control(&self) -> usize {
        self.control.len()
    }

    fn at(&self, i: usize, j: usize) -> usize {
        i * self.control.len() + j
    }

    pub fn m(&self, i: usize, j: usize) -> usize {
        self.m[self.at(i, j)]
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.d[self.at(i, j)]
    }

    pub fn admissible(&self, i: usize, j: usize) -> bool {
        self.admissible[self.at(i, j)]
    }

    pub fn set_admissible(&mut self, i: usize, j: usize, value: bool) {
        let k = self.at(i, j);
        self.admissible[k] = value;
    }

    pub fn pairing(&self, i: usize, j: usize) -> &[UnitPair] {
        &self.pairings[self.at(i, j)]
    }
}

/// Solves the unit matching of every admissible cluster pair, `threads`
/// at a time. Results are stored in row-major order whatever the
/// completion order.
pub fn compute_pair_table(
    ds: &Dataset,
    spec: &CompiledSpec,
    model: &DistanceModel,
    options: &IpOptions,
    approximate: bool,
    threads: usize,
) -> Result<PairTable, ProgramError> {
    let treated = ds.treated_clusters();
    let control = ds.control_clusters();
    let cells: Vec<(usize, usize)> = treated
        .iter()
        .flat_map(|&t| control.iter().map(move |&c| (t, c)))
        .collect();
    let solve = |&(t, c): &(usize, usize)| -> Result<Option<UnitMatch>, ProgramError> {
        if !clusters_admissible(spec, ds, t, c) {
            return Ok(None);
        }
        let tu = &ds.clusters[t].units;
        let cu = &ds.clusters[c].units;
        let matrix = model.matrix(tu, cu);
        cardinality_match_units(ds, spec, tu, cu, &matrix, options, approximate).map(Some)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Option<UnitMatch>> =
        pool.install(|| cells.par_iter().map(solve).collect::<Result<Vec<_>, _>>())?;

    let mut table = PairTable::from_counts(
        treated.clone(),
        control.clone(),
        vec![vec![0; control.len()]; treated.len()],
        vec![vec![0.0; control.len()]; treated.len()],
    );
    for (k, r) in results.into_iter().enumerate() {
        match r {
            None => table.admissible[k] = false,
            Some(u) => {
                table.solved += 1;
                table.below_optimal += usize::from(u.below_optimal);
                for s in &u.statuses {
                    *table.status_counts.entry(s.tag().to_string()).or_default() += 1;
                }
                table.m[k] = u.m();
                table.d[k] = u.total_distance;
                table.pairings[k] = u.pairs;
            }
        }
    }
    Ok(table)
}
