//! Matched samples: cluster pairs with the unit pairs formed inside them.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{DataError, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Dynamic,
    MyopicCardinality,
    MyopicOptimal,
    /// Read back from files; the originating strategy is unknown.
    Loaded,
}

impl Strategy {
    pub fn tag(&self) -> &'static str {
        match self {
            Strategy::Dynamic => "dynamic",
            Strategy::MyopicCardinality => "myopic-cardinality",
            Strategy::MyopicOptimal => "myopic-optimal",
            Strategy::Loaded => "loaded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitPair {
    pub treated: usize,
    pub control: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPair {
    pub treated: usize,
    pub control: usize,
    pub units: Vec<UnitPair>,
}

impl ClusterPair {
    pub fn m(&self) -> usize {
        self.units.len()
    }

    pub fn total_distance(&self) -> f64 {
        self.units.iter().map(|p| p.distance).fold(0.0, |a, d| a + d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSample {
    pub pairs: Vec<ClusterPair>,
    pub strategy: Strategy,
}

#[derive(Debug, thiserror::Error)]
pub enum SampleError {
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Data(#[from] DataError),
    #[error("matched sample is inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Serialize, Deserialize)]
struct ClusterPairRow {
    pair_id: usize,
    treated_cluster: String,
    control_cluster: String,
    m: usize,
    total_distance: f64,
}

#[derive(Serialize, Deserialize)]
struct UnitPairRow {
    pair_id: usize,
    treated_unit: String,
    control_unit: String,
    distance: f64,
}

impl MatchedSample {
    pub fn n_unit_pairs(&self) -> usize {
        self.pairs.iter().map(ClusterPair::m).sum()
    }

    pub fn total_distance(&self) -> f64 {
        self.pairs.iter().map(ClusterPair::total_distance).fold(0.0, |a, d| a + d)
    }

    pub fn treated_units(&self) -> Vec<usize> {
        self.unit_pairs().map(|p| p.treated).collect()
    }

    pub fn control_units(&self) -> Vec<usize> {
        self.unit_pairs().map(|p| p.control).collect()
    }

    pub fn unit_pairs(&self) -> impl Iterator<Item = &UnitPair> {
        self.pairs.iter().flat_map(|p| p.units.iter())
    }

    /// Checks the structural invariants: one treated and one control cluster
    /// per pair, every entity used at most once, unit pairs inside their
    /// cluster pair.
    pub fn validate(&self, ds: &Dataset) -> Result<(), SampleError> {
        let mut clusters = vec![false; ds.clusters.len()];
        let mut units = vec![false; ds.units.len()];
        let bad = |msg: String| Err(SampleError::Inconsistent(msg));
        for (i, p) in self.pairs.iter().enumerate() {
            if !ds.clusters[p.treated].treated || ds.clusters[p.control].treated {
                return bad(format!("pair {i} does not join a treated and a control cluster"));
            }
            for k in [p.treated, p.control] {
                if std::mem::replace(&mut clusters[k], true) {
                    return bad(format!("cluster `{}` used twice", ds.clusters[k].cluster_id));
                }
            }
            for u in &p.units {
                if ds.units[u.treated].cluster != p.treated || ds.units[u.control].cluster != p.control {
                    return bad(format!("pair {i} holds a unit from another cluster"));
                }
                for j in [u.treated, u.control] {
                    if std::mem::replace(&mut units[j], true) {
                        return bad(format!("unit `{}` used twice", ds.units[j].unit_id));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, ds: &Dataset, clusters: impl Write, units: impl Write) -> Result<(), SampleError> {
        let mut cw = csv::Writer::from_writer(clusters);
        let mut uw = csv::Writer::from_writer(units);
        for (id, p) in self.pairs.iter().enumerate() {
            cw.serialize(ClusterPairRow {
                pair_id: id + 1,
                treated_cluster: ds.clusters[p.treated].cluster_id.clone(),
                control_cluster: ds.clusters[p.control].cluster_id.clone(),
                m: p.m(),
                total_distance: p.total_distance(),
            })?;
            for u in &p.units {
                uw.serialize(UnitPairRow {
                    pair_id: id + 1,
                    treated_unit: ds.units[u.treated].unit_id.clone(),
                    control_unit: ds.units[u.control].unit_id.clone(),
                    distance: u.distance,
                })?;
            }
        }
        if self.pairs.is_empty() {
            cw.write_record(["pair_id", "treated_cluster", "control_cluster", "m", "total_distance"])?;
        }
        if self.n_unit_pairs() == 0 {
            uw.write_record(["pair_id", "treated_unit", "control_unit", "distance"])?;
        }
        cw.flush().map_err(csv::Error::from)?;
        uw.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv(ds: &Dataset, clusters: impl Read, units: impl Read) -> Result<Self, SampleError> {
        let mut pairs = Vec::new();
        let mut by_id = HashMap::new();
        let cluster_ix = |id: &str| {
            ds.cluster_index(id)
                .ok_or_else(|| SampleError::Inconsistent(format!("unknown cluster `{id}`")))
        };
        for row in csv::Reader::from_reader(clusters).deserialize::<ClusterPairRow>() {
            let row = row?;
            by_id.insert(row.pair_id, pairs.len());
            pairs.push(ClusterPair {
                treated: cluster_ix(&row.treated_cluster)?,
                control: cluster_ix(&row.control_cluster)?,
                units: Vec::new(),
            });
        }
        let unit_ix = ds.unit_index_map();
        let lookup = |id: &str| {
            unit_ix
                .get(id)
                .copied()
                .ok_or_else(|| SampleError::Inconsistent(format!("unknown unit `{id}`")))
        };
        for row in csv::Reader::from_reader(units).deserialize::<UnitPairRow>() {
            let row = row?;
            let &p = by_id
                .get(&row.pair_id)
                .ok_or_else(|| SampleError::Inconsistent(format!("unknown pair_id {}", row.pair_id)))?;
            pairs[p].units.push(UnitPair {
                treated: lookup(&row.treated_unit)?,
                control: lookup(&row.control_unit)?,
                distance: row.distance,
            });
        }
        let sample = Self {
            pairs,
            strategy: Strategy::Loaded,
        };
        sample.validate(ds)?;
        Ok(sample)
    }
}
