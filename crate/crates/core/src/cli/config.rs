//! The single JSON document driving every command.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::balance::BalanceSpec;
use crate::data::CovariateSchema;
use crate::distance::DistanceConfig;
use crate::inference::InferenceOptions;
use crate::ip::IpOptions;
use crate::matcher::{MatchOptions, Objective};

fn default_time_limit() -> Option<f64> {
    Some(10.0)
}

fn default_gap() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatcherConfig {
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub approximate: bool,
    /// Per-subproblem limit; `null` for none.
    #[serde(default = "default_time_limit")]
    pub time_limit_secs: Option<f64>,
    #[serde(default = "default_gap")]
    pub gap_tolerance: f64,
    /// Pair-table workers; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            objective: Objective::default(),
            lambda: 0.0,
            approximate: false,
            time_limit_secs: default_time_limit(),
            gap_tolerance: default_gap(),
            threads: None,
        }
    }
}

impl MatcherConfig {
    pub fn options(&self) -> MatchOptions {
        let mut o = MatchOptions {
            objective: self.objective,
            lambda: self.lambda,
            approximate: self.approximate,
            ip: IpOptions {
                time_limit: self.time_limit_secs.map(Duration::from_secs_f64),
                gap_tolerance: self.gap_tolerance,
            },
            ..MatchOptions::default()
        };
        if let Some(t) = self.threads {
            o.threads = t;
        }
        o
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda >= 0.0) {
            return Err(format!("matcher.lambda must be non-negative, got {}", self.lambda));
        }
        if self.time_limit_secs.is_some_and(|t| !(t > 0.0)) {
            return Err("matcher.time_limit_secs must be positive".into());
        }
        if !(self.gap_tolerance >= 0.0) {
            return Err("matcher.gap_tolerance must be non-negative".into());
        }
        if self.threads == Some(0) {
            return Err("matcher.threads must be at least 1".into());
        }
        Ok(())
    }
}

fn default_count() -> usize {
    10
}

fn default_units() -> usize {
    20
}

fn default_dims() -> usize {
    2
}

fn default_icc() -> f64 {
    0.2
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_count")]
    pub treated_clusters: usize,
    #[serde(default = "default_count")]
    pub control_clusters: usize,
    #[serde(default = "default_units")]
    pub units_per_cluster: usize,
    #[serde(default = "default_dims")]
    pub unit_covariates: usize,
    #[serde(default = "one")]
    pub cluster_covariates: usize,
    #[serde(default = "default_icc")]
    pub icc: f64,
    #[serde(default)]
    pub effect: f64,
    /// Number of strata; 1 writes no stratum column.
    #[serde(default = "one")]
    pub strata: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.treated_clusters == 0 || self.control_clusters == 0 || self.units_per_cluster == 0 {
            return Err("simulate: cluster and unit counts must be positive".into());
        }
        if self.strata == 0 {
            return Err("simulate.strata must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.icc) {
            return Err(format!("simulate.icc must lie in [0, 1), got {}", self.icc));
        }
        if !self.effect.is_finite() {
            return Err("simulate.effect must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub units_file: Option<PathBuf>,
    #[serde(default)]
    pub clusters_file: Option<PathBuf>,
    #[serde(default)]
    pub schema: Vec<CovariateSchema>,
    #[serde(default)]
    pub balance: BalanceSpec,
    #[serde(default)]
    pub distance: DistanceConfig,
    #[serde(default)]
    pub matcher: MatcherConfig,
    #[serde(default)]
    pub inference: InferenceOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl StudyConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, String> {
        let mut c: StudyConfig = serde_json::from_str(text).map_err(|e| format!("invalid config: {e}"))?;
        c.base_dir = base_dir.to_path_buf();
        c.matcher.validate()?;
        if let Some(s) = &c.simulate {
            s.validate()?;
        }
        if !(c.inference.alpha > 0.0 && c.inference.alpha < 1.0) {
            return Err(format!("inference.alpha must lie in (0, 1), got {}", c.inference.alpha));
        }
        if let Some(d) = c.inference.deltas.iter().find(|d| !(**d > 0.0)) {
            return Err(format!("inference.deltas must be positive, got {d}"));
        }
        if let Some(g) = c.inference.gamma_grid.iter().find(|g| !(**g >= 1.0)) {
            return Err(format!("inference.gamma_grid entries must be at least 1, got {g}"));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_paths(&self) -> Result<(PathBuf, PathBuf), String> {
        let u = self.units_file.as_ref().ok_or("config lacks `units_file`")?;
        let c = self.clusters_file.as_ref().ok_or("config lacks `clusters_file`")?;
        Ok((self.resolve(u), self.resolve(c)))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(self.output_dir.as_deref().unwrap_or(Path::new("out")))
    }
}
