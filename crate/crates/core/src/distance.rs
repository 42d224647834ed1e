//! Unit and cluster distances: rank-based robust Mahalanobis distance,
//! logistic propensity scores and soft calipers.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateKind, DataError, Dataset, Level};
use crate::stats;

/// Treated-by-control distances; `+∞` marks a forbidden pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(rows: Vec<usize>, cols: Vec<usize>, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), rows.len() * cols.len());
        Self { rows, cols, entries }
    }

    pub fn from_fn(rows: Vec<usize>, cols: Vec<usize>, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = Vec::with_capacity(rows.len() * cols.len());
        for &r in &rows {
            for &c in &cols {
                entries.push(f(r, c));
            }
        }
        Self { rows, cols, entries }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    /// Entry at row position `i`, column position `j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols.len() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.cols.len();
        self.entries[i * n + j] = v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Long-format CSV `treated,control,distance` with the given labels.
    pub fn write_csv(
        &self,
        out: impl Write,
        row_label: impl Fn(usize) -> String,
        col_label: impl Fn(usize) -> String,
    ) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["treated", "control", "distance"])?;
        for (i, &r) in self.rows.iter().enumerate() {
            for (j, &c) in self.cols.iter().enumerate() {
                w.write_record([row_label(r), col_label(c), format!("{}", self.get(i, j))])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Mahalanobis distance on average ranks with the rank covariance rescaled
/// so every diagonal entry equals the variance of untied ranks.
#[derive(Debug, Clone)]
pub struct RankMahalanobis {
    ranks: Vec<Vec<f64>>,
    inverse: DMatrix<f64>,
    /// Input columns kept (at least two distinct values).
    pub kept: Vec<usize>,
    /// Set when the rank covariance was singular and a ridge was added.
    pub ridged: bool,
}

impl RankMahalanobis {
    /// Fits on `rows` (one covariate vector per entity).
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let mut kept = Vec::new();
        let mut rank_cols = Vec::new();
        for j in 0..p {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let first = col.first().copied();
            if col.iter().all(|&v| Some(v) == first) {
                log::warn!("distance covariate {j} is constant and was dropped");
                continue;
            }
            kept.push(j);
            rank_cols.push(stats::average_ranks(&col));
        }
        let k = kept.len();
        let ranks: Vec<Vec<f64>> = (0..n).map(|i| rank_cols.iter().map(|c| c[i]).collect()).collect();
        if k == 0 || n < 2 {
            return Self {
                ranks,
                inverse: DMatrix::zeros(k, k),
                kept,
                ridged: false,
            };
        }

        let means: Vec<f64> = rank_cols.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
        let mut cov = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let s: f64 = (0..n)
                    .map(|i| (rank_cols[a][i] - means[a]) * (rank_cols[b][i] - means[b]))
                    .sum();
                cov[(a, b)] = s / (n - 1) as f64;
                cov[(b, a)] = cov[(a, b)];
            }
        }
        let untied = (n * (n + 1)) as f64 / 12.0;
        let scale: Vec<f64> = (0..k).map(|a| (untied / cov[(a, a)]).sqrt()).collect();
        for a in 0..k {
            for b in 0..k {
                cov[(a, b)] *= scale[a] * scale[b];
            }
        }

        let (inverse, ridged) = match cov.clone().cholesky() {
            Some(ch) if well_conditioned(&ch.l().diagonal()) => (ch.inverse(), false),
            _ => {
                let ridge = 1e-8 * cov.trace();
                log::warn!("rank covariance is singular; adding a ridge of {ridge:e}");
                for a in 0..k {
                    cov[(a, a)] += ridge;
                }
                let inv = cov
                    .clone()
                    .cholesky()
                    .map(|c| c.inverse())
                    .or_else(|| cov.clone().pseudo_inverse(1e-12).ok())
                    .unwrap_or_else(|| DMatrix::zeros(k, k));
                (inv, true)
            }
        };
        Self {
            ranks,
            inverse,
            kept,
            ridged,
        }
    }

    /// Squared distance between fitted entities `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let k = self.kept.len();
        if k == 0 {
            return 0.0;
        }
        let d = DVector::from_iterator(k, (0..k).map(|a| self.ranks[i][a] - self.ranks[j][a]));
        (d.transpose() * &self.inverse * &d)[(0, 0)].max(0.0)
    }
}

/// Cholesky diagonal ratio test; a tiny pivot means a (near) singular matrix.
fn well_conditioned(diag: &DVector<f64>) -> bool {
    let max = diag.iter().copied().fold(0.0, f64::max);
    diag.iter().all(|&d| d > 1e-6 * max)
}

/// Robust Mahalanobis distances between two groups, with ranks taken over
/// the two groups pooled.
pub fn robust_mahalanobis(treated: &[Vec<f64>], control: &[Vec<f64>]) -> DistanceMatrix {
    let mut rows = treated.to_vec();
    rows.extend_from_slice(control);
    let model = RankMahalanobis::fit(&rows);
    let nt = treated.len();
    DistanceMatrix::from_fn((0..nt).collect(), (0..control.len()).collect(), |i, j| {
        model.distance(i, nt + j)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    pub scores: Vec<f64>,
    /// Intercept first, then one coefficient per kept column.
    pub coefficients: Vec<f64>,
    pub kept_columns: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

const IRLS_MAX_ITER: usize = 25;
const SCORE_CLAMP: f64 = 1e-6;

/// Columns of `x` (after the intercept) that are linearly independent of
/// the intercept and previously kept columns.
pub(crate) fn independent_columns(x: &[Vec<f64>]) -> Vec<usize> {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    let mut basis: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0 / (n as f64).sqrt())];
    let mut kept = Vec::new();
    for j in 0..p {
        let mut v = DVector::from_iterator(n, x.iter().map(|r| r[j]));
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm > 1e-8 * norm0 {
            basis.push(v / norm);
            kept.push(j);
        }
    }
    kept
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression of `z` on an intercept and `x`, fit by iteratively
/// reweighted least squares.
pub fn fit_logistic(x: &[Vec<f64>], z: &[bool]) -> PropensityFit {
    let n = x.len();
    assert_eq!(n, z.len());
    let kept = independent_columns(x);
    let p = kept.len() + 1;
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x[i][kept[j - 1]] });
    let y = DVector::from_iterator(n, z.iter().map(|&b| f64::from(u8::from(b))));

    let loglik = |eta: &DVector<f64>| -> f64 {
        eta.iter()
            .zip(y.iter())
            .map(|(&e, &yi)| {
                // log(1 + exp(e)) computed stably
                let soft = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
                yi * e - soft
            })
            .sum()
    };

    let mut beta = DVector::zeros(p);
    let mut eta = DVector::zeros(n);
    let mut ll = loglik(&eta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let mu: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let w: Vec<f64> = mu.iter().map(|&m| (m * (1.0 - m)).max(1e-12)).collect();
        let work = DVector::from_iterator(n, (0..n).map(|i| eta[i] + (y[i] - mu[i]) / w[i]));
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        for i in 0..n {
            let row = design.row(i);
            for a in 0..p {
                let wa = w[i] * row[a];
                xtwz[a] += wa * work[i];
                for b in a..p {
                    xtwx[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        let Some(next) = xtwx.clone().cholesky().map(|c| c.solve(&xtwz)).or_else(|| xtwx.lu().solve(&xtwz)) else {
            break;
        };
        beta = next;
        eta = &design * &beta;
        let new_ll = loglik(&eta);
        let change = (new_ll - ll).abs() / (new_ll.abs() + 0.1);
        ll = new_ll;
        if change < 1e-8 {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("propensity model did not converge in {IRLS_MAX_ITER} iterations (possible separation)");
    }
    let scores = eta
        .iter()
        .map(|&e| sigmoid(e).clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP))
        .collect();
    PropensityFit {
        scores,
        coefficients: beta.iter().copied().collect(),
        kept_columns: kept,
        converged,
        iterations,
    }
}

/// Propensity scores for every unit (`Level::Unit`) or cluster
/// (`Level::Cluster`). Unit models may use cluster covariates.
pub fn estimate_propensity(ds: &Dataset, covariates: &[String], level: Level) -> Result<PropensityFit, DataError> {
    let cols = resolve_numeric(ds, covariates, level)?;
    let (x, z): (Vec<Vec<f64>>, Vec<bool>) = match level {
        Level::Unit => (0..ds.units.len())
            .map(|u| (cols.iter().map(|&c| ds.value_for_unit(u, c)).collect(), ds.is_treated_unit(u)))
            .unzip(),
        Level::Cluster => (0..ds.clusters.len())
            .map(|k| (cols.iter().map(|&c| ds.cluster_value(k, c)).collect(), ds.clusters[k].treated))
            .unzip(),
    };
    Ok(fit_logistic(&x, &z))
}

fn resolve_numeric(ds: &Dataset, names: &[String], level: Level) -> Result<Vec<crate::data::Column>, DataError> {
    names
        .iter()
        .map(|name| {
            let (s, col) = ds.covariate(name)?;
            if s.kind == CovariateKind::Nominal {
                return Err(DataError::Schema(format!("distance covariate `{name}` must be numeric")));
            }
            if level == Level::Cluster && col.level != Level::Cluster {
                return Err(DataError::Schema(format!("`{name}` is not a cluster-level covariate")));
            }
            Ok(col)
        })
        .collect()
}

/// Soft caliper: entries whose score gap exceeds `width · sd` gain
/// `1000 · (gap - width · sd) / sd`.
pub fn apply_caliper(
    matrix: &DistanceMatrix,
    score_rows: &[f64],
    score_cols: &[f64],
    width: f64,
    sd: f64,
) -> DistanceMatrix {
    let mut out = matrix.clone();
    if !(sd > 0.0) || !width.is_finite() {
        return out;
    }
    let limit = width * sd;
    for (i, &st) in score_rows.iter().enumerate() {
        for (j, &sc) in score_cols.iter().enumerate() {
            let gap = (st - sc).abs();
            if gap > limit {
                out.set(i, j, matrix.get(i, j) + 1000.0 * (gap - limit) / sd);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConfig {
    /// Unit-level (or cluster-level) numeric covariates for unit distances.
    /// Defaults to every numeric unit-level balance or distance-only column.
    #[serde(default)]
    pub unit_covariates: Option<Vec<String>>,
    /// Cluster covariates for the cluster-first baseline. Defaults to every
    /// numeric cluster-level balance or distance-only column.
    #[serde(default)]
    pub cluster_covariates: Option<Vec<String>>,
    /// Propensity caliper on unit distances, in SDs of the score.
    #[serde(default = "default_caliper")]
    pub unit_caliper: Option<f64>,
    /// Propensity caliper on cluster distances, in SDs of the score.
    #[serde(default = "default_caliper")]
    pub cluster_caliper: Option<f64>,
}

fn default_caliper() -> Option<f64> {
    Some(0.2)
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            unit_covariates: None,
            cluster_covariates: None,
            unit_caliper: default_caliper(),
            cluster_caliper: default_caliper(),
        }
    }
}

pub(crate) fn default_columns(ds: &Dataset, level: Level) -> Vec<String> {
    use crate::data::Role;
    ds.columns(level)
        .filter(|(s, _)| s.is_numeric() && matches!(s.role, Role::Balance | Role::DistanceOnly))
        .map(|(s, _)| s.name.clone())
        .collect()
}

/// Distance model over a whole dataset at one level: ranks fitted on every
/// entity, optional propensity caliper.
#[derive(Debug, Clone)]
pub struct DistanceModel {
    pub level: Level,
    model: RankMahalanobis,
    scores: Option<Vec<f64>>,
    score_sd: f64,
    caliper: Option<f64>,
    pub propensity_converged: bool,
}

impl DistanceModel {
    pub fn fit(ds: &Dataset, config: &DistanceConfig, level: Level) -> Result<Self, DataError> {
        let (names, caliper) = match level {
            Level::Unit => (
                config.unit_covariates.clone().unwrap_or_else(|| default_columns(ds, Level::Unit)),
                config.unit_caliper,
            ),
            Level::Cluster => (
                config
                    .cluster_covariates
                    .clone()
                    .unwrap_or_else(|| default_columns(ds, Level::Cluster)),
                config.cluster_caliper,
            ),
        };
        if let Some(w) = caliper {
            if !(w > 0.0) {
                return Err(DataError::Schema("caliper width must be positive".into()));
            }
        }
        let cols = resolve_numeric(ds, &names, level)?;
        let rows: Vec<Vec<f64>> = match level {
            Level::Unit => (0..ds.units.len())
                .map(|u| cols.iter().map(|&c| ds.value_for_unit(u, c)).collect())
                .collect(),
            Level::Cluster => (0..ds.clusters.len())
                .map(|k| cols.iter().map(|&c| ds.cluster_value(k, c)).collect())
                .collect(),
        };
        let model = RankMahalanobis::fit(&rows);
        let (scores, score_sd, converged) = match caliper {
            Some(_) if !names.is_empty() => {
                let fit = estimate_propensity(ds, &names, level)?;
                let sd = stats::sample_sd(&fit.scores).unwrap_or(0.0);
                (Some(fit.scores), sd, fit.converged)
            }
            _ => (None, 0.0, true),
        };
        Ok(Self {
            level,
            model,
            scores,
            score_sd,
            caliper,
            propensity_converged: converged,
        })
    }

    /// Distance between two entities of this model's level, caliper included.
    pub fn distance(&self, t: usize, c: usize) -> f64 {
        let mut d = self.model.distance(t, c);
        if let (Some(scores), Some(width)) = (&self.scores, self.caliper) {
            let limit = width * self.score_sd;
            let gap = (scores[t] - scores[c]).abs();
            if self.score_sd > 0.0 && gap > limit {
                d += 1000.0 * (gap - limit) / self.score_sd;
            }
        }
        d
    }

    pub fn matrix(&self, rows: &[usize], cols: &[usize]) -> DistanceMatrix {
        DistanceMatrix::from_fn(rows.to_vec(), cols.to_vec(), |t, c| self.distance(t, c))
    }

    pub fn ridged(&self) -> bool {
        self.model.ridged
    }
}
