//! Two-level dataset: clusters (where treatment is assigned) holding units.
//!
//! Covariate values are stored as `f64`; nominal values hold the index of
//! their category. Missing cells are mean-imputed over the full sample with an
//! appended `<name>_missing` indicator, or rejected, per the schema.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Unit,
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateKind {
    Continuous,
    Binary,
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    #[default]
    Balance,
    DistanceOnly,
    Outcome,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    MeanImputeWithIndicator,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSchema {
    pub name: String,
    pub kind: CovariateKind,
    pub level: Level,
    #[serde(default)]
    pub role: Role,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
    /// Category labels for nominal covariates.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    /// Set on missingness indicators created at load time.
    #[serde(skip)]
    pub derived: bool,
}

impl CovariateSchema {
    pub fn new(name: impl Into<String>, kind: CovariateKind, level: Level) -> Self {
        Self {
            name: name.into(),
            kind,
            level,
            role: Role::Balance,
            missing_policy: MissingPolicy::MeanImputeWithIndicator,
            categories: Vec::new(),
            derived: false,
        }
    }

    pub fn nominal(name: impl Into<String>, level: Level, categories: &[&str]) -> Self {
        let mut s = Self::new(name, CovariateKind::Nominal, level);
        s.categories = categories.iter().map(|c| c.to_string()).collect();
        s
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn with_missing_policy(mut self, policy: MissingPolicy) -> Self {
        self.missing_policy = policy;
        self
    }

    pub fn is_numeric(&self) -> bool {
        self.kind != CovariateKind::Nominal
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{file}: {source}")]
    Csv { file: String, source: csv::Error },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("units file line {line}: unknown cluster_id `{cluster_id}`")]
    UnknownCluster { cluster_id: String, line: usize },
    #[error("structural error: {0}")]
    Structural(String),
    #[error("{file} line {line}, column `{column}`: cannot parse `{value}`")]
    Parse {
        file: String,
        line: usize,
        column: String,
        value: String,
    },
    #[error("{file} line {line}: missing value in `{column}` whose policy is `error`")]
    Missing { file: String, line: usize, column: String },
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("undefined sample: {0}")]
    EmptySample(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub unit_id: String,
    /// Index of the owning cluster in `Dataset::clusters`.
    pub cluster: usize,
    /// Values aligned to `Dataset::unit_columns`.
    pub values: Vec<f64>,
    pub imputed: Vec<bool>,
    pub outcome: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub cluster_id: String,
    pub treated: bool,
    pub stratum: Option<String>,
    /// Values aligned to `Dataset::cluster_columns`.
    pub values: Vec<f64>,
    pub imputed: Vec<bool>,
    /// Indices into `Dataset::units`, in file order.
    pub units: Vec<usize>,
}

/// Location of a covariate's values: its level and its column inside the
/// per-unit or per-cluster value vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Column {
    pub level: Level,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledSd {
    pub value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<CovariateSchema>,
    source_schema: Vec<CovariateSchema>,
    unit_columns: Vec<usize>,
    cluster_columns: Vec<usize>,
    outcome: Option<usize>,
    pub clusters: Vec<Cluster>,
    pub units: Vec<Unit>,
    /// Pre-match pooled SD per schema entry (`None` for nominal and outcome).
    pooled: Vec<Option<PooledSd>>,
}

const NA: &str = "NA";

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == NA
}

fn validate_schema(schema: &[CovariateSchema]) -> Result<(), DataError> {
    let mut seen = HashMap::new();
    let mut outcomes = 0;
    for s in schema {
        if s.name.is_empty() {
            return Err(DataError::Schema("empty covariate name".into()));
        }
        if matches!(s.name.as_str(), "unit_id" | "cluster_id" | "treated" | "stratum") {
            return Err(DataError::Schema(format!("`{}` is a reserved column name", s.name)));
        }
        if seen.insert(s.name.clone(), ()).is_some() {
            return Err(DataError::Schema(format!("duplicate covariate `{}`", s.name)));
        }
        if s.kind == CovariateKind::Nominal {
            if s.categories.is_empty() {
                return Err(DataError::Schema(format!("nominal `{}` has no categories", s.name)));
            }
            let mut cats = s.categories.clone();
            cats.sort();
            cats.dedup();
            if cats.len() != s.categories.len() {
                return Err(DataError::Schema(format!("nominal `{}` repeats a category", s.name)));
            }
        } else if !s.categories.is_empty() {
            return Err(DataError::Schema(format!("`{}` lists categories but is not nominal", s.name)));
        }
        if s.role == Role::Outcome {
            outcomes += 1;
            if s.level != Level::Unit || s.kind == CovariateKind::Nominal {
                return Err(DataError::Schema(format!(
                    "outcome `{}` must be a numeric unit-level column",
                    s.name
                )));
            }
        }
    }
    if outcomes > 1 {
        return Err(DataError::Schema("at most one covariate may be the outcome".into()));
    }
    Ok(())
}

struct Table {
    file: String,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(reader: impl Read, file: &str) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let csv_err = |source| DataError::Csv {
            file: file.to_string(),
            source,
        };
        let headers = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let rows = rdr.records().collect::<Result<Vec<_>, _>>().map_err(csv_err)?;
        Ok(Self {
            file: file.to_string(),
            headers,
            rows,
        })
    }

    fn position(&self, column: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == column)
    }

    fn require(&self, column: &str) -> Result<usize, DataError> {
        self.position(column).ok_or_else(|| DataError::MissingColumn {
            file: self.file.clone(),
            column: column.to_string(),
        })
    }

    fn parse_error(&self, row: usize, column: &str, value: &str) -> DataError {
        DataError::Parse {
            file: self.file.clone(),
            line: row + 2,
            column: column.to_string(),
            value: value.to_string(),
        }
    }
}

fn parse_treated(table: &Table, row: usize, cell: &str) -> Result<bool, DataError> {
    match cell {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(table.parse_error(row, "treated", other)),
    }
}

/// Parses one covariate column. Missing cells come back as `None`.
fn parse_column(
    table: &Table,
    column: usize,
    schema: &CovariateSchema,
) -> Result<Vec<Option<f64>>, DataError> {
    let mut out = Vec::with_capacity(table.rows.len());
    for (r, rec) in table.rows.iter().enumerate() {
        let cell = rec.get(column).unwrap_or("");
        if is_missing(cell) {
            if schema.missing_policy == MissingPolicy::Error && schema.role != Role::Outcome {
                return Err(DataError::Missing {
                    file: table.file.clone(),
                    line: r + 2,
                    column: schema.name.clone(),
                });
            }
            out.push(None);
            continue;
        }
        let v = match schema.kind {
            CovariateKind::Nominal => schema
                .categories
                .iter()
                .position(|c| c == cell)
                .map(|i| i as f64),
            CovariateKind::Binary => match cell.parse::<f64>() {
                Ok(v) if v == 0.0 || v == 1.0 => Some(v),
                _ => None,
            },
            CovariateKind::Continuous => cell.parse::<f64>().ok().filter(|v| v.is_finite()),
        };
        out.push(Some(v.ok_or_else(|| table.parse_error(r, &schema.name, cell))?));
    }
    Ok(out)
}

/// Fills missing cells. Numeric columns take the full-sample mean and gain an
/// indicator; nominal columns gain an extra `NA` category.
fn fill_missing(
    schema: &mut CovariateSchema,
    column: Vec<Option<f64>>,
) -> (Vec<f64>, Vec<bool>, Option<CovariateSchema>) {
    let imputed: Vec<bool> = column.iter().map(Option::is_none).collect();
    if !imputed.iter().any(|&b| b) || schema.role == Role::Outcome {
        let values = column.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        return (values, imputed, None);
    }
    match schema.kind {
        CovariateKind::Nominal => {
            let na = schema.categories.len() as f64;
            schema.categories.push(NA.to_string());
            let values = column.iter().map(|v| v.unwrap_or(na)).collect();
            (values, imputed, None)
        }
        _ => {
            let observed: Vec<f64> = column.iter().flatten().copied().collect();
            let fill = stats::mean(&observed).unwrap_or(0.0);
            let values = column.iter().map(|v| v.unwrap_or(fill)).collect();
            let mut indicator = CovariateSchema::new(
                format!("{}_missing", schema.name),
                CovariateKind::Binary,
                schema.level,
            );
            indicator.role = if schema.role == Role::Ignore { Role::Ignore } else { Role::Balance };
            indicator.derived = true;
            (values, imputed, Some(indicator))
        }
    }
}

/// Reads both tables from disk.
pub fn load_dataset(
    units_file: impl AsRef<Path>,
    clusters_file: impl AsRef<Path>,
    schema: &[CovariateSchema],
) -> Result<Dataset, DataError> {
    let open = |p: &Path| {
        File::open(p).map_err(|source| DataError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let up = units_file.as_ref();
    let cp = clusters_file.as_ref();
    let units = Table::read(open(up)?, &up.display().to_string())?;
    let clusters = Table::read(open(cp)?, &cp.display().to_string())?;
    Dataset::from_tables(units, clusters, schema)
}

/// Same as [`load_dataset`] but from in-memory CSV text.
pub fn load_dataset_from_readers(
    units: impl Read,
    clusters: impl Read,
    schema: &[CovariateSchema],
) -> Result<Dataset, DataError> {
    let units = Table::read(units, "units.csv")?;
    let clusters = Table::read(clusters, "clusters.csv")?;
    Dataset::from_tables(units, clusters, schema)
}

impl Dataset {
    fn from_tables(
        unit_table: Table,
        cluster_table: Table,
        source: &[CovariateSchema],
    ) -> Result<Self, DataError> {
        validate_schema(source)?;

        let cid = cluster_table.require("cluster_id")?;
        let treated_col = cluster_table.require("treated")?;
        let stratum_col = cluster_table.position("stratum");
        let mut clusters = Vec::with_capacity(cluster_table.rows.len());
        let mut by_id: HashMap<String, usize> = HashMap::new();
        for (r, rec) in cluster_table.rows.iter().enumerate() {
            let id = rec.get(cid).unwrap_or("").to_string();
            if id.is_empty() {
                return Err(cluster_table.parse_error(r, "cluster_id", ""));
            }
            let treated = parse_treated(&cluster_table, r, rec.get(treated_col).unwrap_or(""))?;
            if let Some(&prev) = by_id.get(&id) {
                let c: &Cluster = &clusters[prev];
                return Err(DataError::Structural(if c.treated != treated {
                    format!("treatment varies within cluster `{id}`")
                } else {
                    format!("cluster `{id}` listed twice")
                }));
            }
            let stratum = stratum_col
                .and_then(|c| rec.get(c))
                .filter(|s| !is_missing(s))
                .map(str::to_string);
            by_id.insert(id.clone(), clusters.len());
            clusters.push(Cluster {
                cluster_id: id,
                treated,
                stratum,
                values: Vec::new(),
                imputed: Vec::new(),
                units: Vec::new(),
            });
        }

        let uid = unit_table.require("unit_id")?;
        let ucid = unit_table.require("cluster_id")?;
        let unit_treated = unit_table.position("treated");
        let mut units = Vec::with_capacity(unit_table.rows.len());
        let mut unit_ids = HashMap::new();
        for (r, rec) in unit_table.rows.iter().enumerate() {
            let id = rec.get(uid).unwrap_or("").to_string();
            if id.is_empty() {
                return Err(unit_table.parse_error(r, "unit_id", ""));
            }
            if unit_ids.insert(id.clone(), ()).is_some() {
                return Err(DataError::Structural(format!("unit `{id}` listed twice")));
            }
            let cluster_id = rec.get(ucid).unwrap_or("");
            let &k = by_id.get(cluster_id).ok_or_else(|| DataError::UnknownCluster {
                cluster_id: cluster_id.to_string(),
                line: r + 2,
            })?;
            if let Some(c) = unit_treated {
                let z = parse_treated(&unit_table, r, rec.get(c).unwrap_or(""))?;
                if z != clusters[k].treated {
                    return Err(DataError::Structural(format!(
                        "treatment varies within cluster `{cluster_id}` (unit `{id}`)"
                    )));
                }
            }
            clusters[k].units.push(units.len());
            units.push(Unit {
                unit_id: id,
                cluster: k,
                values: Vec::new(),
                imputed: Vec::new(),
                outcome: None,
            });
        }
        if let Some(c) = clusters.iter().find(|c| c.units.is_empty()) {
            return Err(DataError::Structural(format!("cluster `{}` has no units", c.cluster_id)));
        }
        if !clusters.iter().any(|c| c.treated) || clusters.iter().all(|c| c.treated) {
            return Err(DataError::Structural(
                "need at least one treated and one control cluster".into(),
            ));
        }

        let mut schema = Vec::new();
        let mut unit_columns = Vec::new();
        let mut cluster_columns = Vec::new();
        let mut outcome = None;
        for entry in source {
            let mut entry = entry.clone();
            entry.derived = false;
            let table = match entry.level {
                Level::Unit => &unit_table,
                Level::Cluster => &cluster_table,
            };
            let raw = parse_column(table, table.require(&entry.name)?, &entry)?;
            let (values, imputed, indicator) = fill_missing(&mut entry, raw);
            let idx = schema.len();
            if entry.role == Role::Outcome {
                outcome = Some(idx);
                for (u, v) in units.iter_mut().zip(&values) {
                    u.outcome = v.is_finite().then_some(*v);
                }
                schema.push(entry);
                continue;
            }
            let level = entry.level;
            schema.push(entry);
            let mut columns = vec![(idx, values, imputed.clone())];
            if let Some(ind) = indicator {
                let flags = imputed.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
                columns.push((schema.len(), flags, vec![false; imputed.len()]));
                schema.push(ind);
            }
            for (idx, values, imputed) in columns {
                match level {
                    Level::Unit => {
                        unit_columns.push(idx);
                        for ((u, v), m) in units.iter_mut().zip(values).zip(imputed) {
                            u.values.push(v);
                            u.imputed.push(m);
                        }
                    }
                    Level::Cluster => {
                        cluster_columns.push(idx);
                        for ((c, v), m) in clusters.iter_mut().zip(values).zip(imputed) {
                            c.values.push(v);
                            c.imputed.push(m);
                        }
                    }
                }
            }
        }

        let mut ds = Dataset {
            schema,
            source_schema: source.to_vec(),
            unit_columns,
            cluster_columns,
            outcome,
            clusters,
            units,
            pooled: Vec::new(),
        };
        ds.pooled = (0..ds.schema.len()).map(|i| ds.compute_pooled(i)).collect();
        Ok(ds)
    }

    fn compute_pooled(&self, schema_idx: usize) -> Option<PooledSd> {
        let entry = &self.schema[schema_idx];
        if !entry.is_numeric() || entry.role == Role::Outcome {
            return None;
        }
        let col = self.column_of(schema_idx)?;
        let (t, c) = self.split_by_arm(col);
        let var = |v: &[f64]| stats::sample_variance(v).unwrap_or(0.0);
        let value = ((var(&t) + var(&c)) / 2.0).sqrt();
        Some(PooledSd {
            value,
            degenerate: value == 0.0,
        })
    }

    fn column_of(&self, schema_idx: usize) -> Option<Column> {
        let level = self.schema[schema_idx].level;
        let list = match level {
            Level::Unit => &self.unit_columns,
            Level::Cluster => &self.cluster_columns,
        };
        list.iter()
            .position(|&i| i == schema_idx)
            .map(|index| Column { level, index })
    }

    /// Full pre-match values of a column split into (treated, control).
    pub fn split_by_arm(&self, col: Column) -> (Vec<f64>, Vec<f64>) {
        let mut t = Vec::new();
        let mut c = Vec::new();
        match col.level {
            Level::Unit => {
                for u in &self.units {
                    let v = u.values[col.index];
                    if self.clusters[u.cluster].treated {
                        t.push(v);
                    } else {
                        c.push(v);
                    }
                }
            }
            Level::Cluster => {
                for k in &self.clusters {
                    if k.treated {
                        t.push(k.values[col.index]);
                    } else {
                        c.push(k.values[col.index]);
                    }
                }
            }
        }
        (t, c)
    }

    /// Every schema entry, including derived missingness indicators.
    pub fn schema(&self) -> &[CovariateSchema] {
        &self.schema
    }

    /// The schema the dataset was loaded with.
    pub fn source_schema(&self) -> &[CovariateSchema] {
        &self.source_schema
    }

    pub fn covariate(&self, name: &str) -> Result<(&CovariateSchema, Column), DataError> {
        let idx = self
            .schema
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| DataError::UnknownCovariate(name.to_string()))?;
        let col = self
            .column_of(idx)
            .ok_or_else(|| DataError::Schema(format!("`{name}` is the outcome, not a covariate")))?;
        Ok((&self.schema[idx], col))
    }

    /// Schema entries stored at `level`, in column order.
    pub fn columns(&self, level: Level) -> impl Iterator<Item = (&CovariateSchema, Column)> {
        let list = match level {
            Level::Unit => &self.unit_columns,
            Level::Cluster => &self.cluster_columns,
        };
        list.iter()
            .enumerate()
            .map(move |(index, &i)| (&self.schema[i], Column { level, index }))
    }

    pub fn outcome_name(&self) -> Option<&str> {
        self.outcome.map(|i| self.schema[i].name.as_str())
    }

    pub fn unit_value(&self, unit: usize, col: Column) -> f64 {
        debug_assert_eq!(col.level, Level::Unit);
        self.units[unit].values[col.index]
    }

    /// Value of `col` seen from a unit: its own value or its cluster's.
    pub fn value_for_unit(&self, unit: usize, col: Column) -> f64 {
        match col.level {
            Level::Unit => self.units[unit].values[col.index],
            Level::Cluster => self.clusters[self.units[unit].cluster].values[col.index],
        }
    }

    pub fn cluster_value(&self, cluster: usize, col: Column) -> f64 {
        debug_assert_eq!(col.level, Level::Cluster);
        self.clusters[cluster].values[col.index]
    }

    pub fn is_treated_unit(&self, unit: usize) -> bool {
        self.clusters[self.units[unit].cluster].treated
    }

    pub fn treated_clusters(&self) -> Vec<usize> {
        (0..self.clusters.len()).filter(|&k| self.clusters[k].treated).collect()
    }

    pub fn control_clusters(&self) -> Vec<usize> {
        (0..self.clusters.len()).filter(|&k| !self.clusters[k].treated).collect()
    }

    pub fn pooled_sd(&self, col: Column) -> Option<PooledSd> {
        let list = match col.level {
            Level::Unit => &self.unit_columns,
            Level::Cluster => &self.cluster_columns,
        };
        self.pooled[list[col.index]]
    }

    pub fn cluster_index(&self, id: &str) -> Option<usize> {
        self.clusters.iter().position(|c| c.cluster_id == id)
    }

    pub fn unit_index_map(&self) -> HashMap<&str, usize> {
        self.units
            .iter()
            .enumerate()
            .map(|(i, u)| (u.unit_id.as_str(), i))
            .collect()
    }

    pub fn has_strata(&self) -> bool {
        self.clusters.iter().any(|c| c.stratum.is_some())
    }

    fn cell(&self, entry: &CovariateSchema, value: f64, imputed: bool) -> String {
        if imputed || !value.is_finite() {
            return NA.to_string();
        }
        match entry.kind {
            CovariateKind::Nominal => entry.categories[value as usize].clone(),
            _ => format!("{value}"),
        }
    }

    /// Writes the two tables so that loading them with `source_schema()`
    /// reproduces this dataset. Imputed cells are written back as `NA` and
    /// derived indicator columns are omitted.
    pub fn write_csv(&self, units: impl Write, clusters: impl Write) -> Result<(), csv::Error> {
        let source_names: Vec<&str> = self.source_schema.iter().map(|s| s.name.as_str()).collect();
        let kept = |level: Level| {
            self.columns(level)
                .filter(|(s, _)| !s.derived && source_names.contains(&s.name.as_str()))
                .collect::<Vec<_>>()
        };

        let mut w = csv::Writer::from_writer(clusters);
        let ccols = kept(Level::Cluster);
        let with_stratum = self.has_strata();
        let mut header = vec!["cluster_id".to_string(), "treated".to_string()];
        if with_stratum {
            header.push("stratum".into());
        }
        header.extend(ccols.iter().map(|(s, _)| s.name.clone()));
        w.write_record(&header)?;
        for c in &self.clusters {
            let mut rec = vec![c.cluster_id.clone(), if c.treated { "1" } else { "0" }.to_string()];
            if with_stratum {
                rec.push(c.stratum.clone().unwrap_or_else(|| NA.to_string()));
            }
            for (s, col) in &ccols {
                rec.push(self.cell(s, c.values[col.index], c.imputed[col.index]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_writer(units);
        let ucols = kept(Level::Unit);
        let mut header = vec!["unit_id".to_string(), "cluster_id".to_string()];
        header.extend(ucols.iter().map(|(s, _)| s.name.clone()));
        let outcome = self.outcome.map(|i| &self.schema[i]);
        if let Some(o) = outcome {
            header.push(o.name.clone());
        }
        w.write_record(&header)?;
        for u in &self.units {
            let mut rec = vec![u.unit_id.clone(), self.clusters[u.cluster].cluster_id.clone()];
            for (s, col) in &ucols {
                rec.push(self.cell(s, u.values[col.index], u.imputed[col.index]));
            }
            if let Some(o) = outcome {
                rec.push(self.cell(o, u.outcome.unwrap_or(f64::NAN), false));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes `units.csv` and `clusters.csv` into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<(), DataError> {
    let dir = dir.as_ref();
    let create = |name: &str| {
        let p = dir.join(name);
        File::create(&p).map_err(|source| DataError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let units = create("units.csv")?;
    let clusters = create("clusters.csv")?;
    dataset.write_csv(units, clusters).map_err(|source| DataError::Csv {
        file: dir.display().to_string(),
        source,
    })
}

/// `sqrt((s_t² + s_c²) / 2)` over the full pre-match sample.
pub fn pooled_std(dataset: &Dataset, covariate: &str) -> Result<PooledSd, DataError> {
    let (entry, col) = dataset.covariate(covariate)?;
    dataset
        .pooled_sd(col)
        .ok_or_else(|| DataError::Schema(format!("`{}` is not numeric", entry.name)))
}

/// `(mean_t - mean_c) / pooled`. With a zero pooled SD the result is 0 for
/// equal means and signed infinity otherwise.
pub fn standardized_difference(treated: &[f64], control: &[f64], pooled: f64) -> Result<f64, DataError> {
    let (Some(mt), Some(mc)) = (stats::mean(treated), stats::mean(control)) else {
        return Err(DataError::EmptySample("no matched units in one arm".into()));
    };
    let diff = mt - mc;
    if pooled > 0.0 {
        Ok(diff / pooled)
    } else if diff.abs() <= 1e-12 * (1.0 + mt.abs().max(mc.abs())) {
        Ok(0.0)
    } else {
        Ok(f64::INFINITY.copysign(diff))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<CovariateSchema> {
        vec![
            CovariateSchema::new("x", CovariateKind::Continuous, Level::Unit),
            CovariateSchema::new("size", CovariateKind::Continuous, Level::Cluster),
        ]
    }

    const CLUSTERS: &str = "cluster_id,treated,size\nA,1,10\nB,0,12\n";

    #[test]
    fn loads_minimal_dataset() {
        let units = "unit_id,cluster_id,x\nu1,A,1\nu2,A,2\nu3,B,3\nu4,B,4\n";
        let ds = load_dataset_from_readers(units.as_bytes(), CLUSTERS.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.units.len(), 4);
        assert_eq!(ds.clusters.len(), 2);
        assert_eq!(ds.clusters[0].units, vec![0, 1]);
        assert!(ds.is_treated_unit(1) && !ds.is_treated_unit(2));
    }

    #[test]
    fn unknown_cluster_is_named() {
        let units = "unit_id,cluster_id,x\nu1,A,1\nu2,X,2\n";
        let err = load_dataset_from_readers(units.as_bytes(), CLUSTERS.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(&err, DataError::UnknownCluster { cluster_id, line: 3 } if cluster_id == "X"));
        assert!(err.to_string().contains("`X`"));
    }

    #[test]
    fn parse_error_reports_line() {
        let units = "unit_id,cluster_id,x\nu1,A,1\nu2,A,abc\nu3,B,1\n";
        let err = load_dataset_from_readers(units.as_bytes(), CLUSTERS.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }));
    }

    #[test]
    fn treatment_must_be_constant_within_cluster() {
        let units = "unit_id,cluster_id,treated,x\nu1,A,1,1\nu2,A,0,2\nu3,B,0,3\n";
        let err = load_dataset_from_readers(units.as_bytes(), CLUSTERS.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, DataError::Structural(_)));
        let clusters = "cluster_id,treated,size\nA,1,10\nA,0,10\nB,0,12\n";
        let units = "unit_id,cluster_id,x\nu1,A,1\nu3,B,3\n";
        let err = load_dataset_from_readers(units.as_bytes(), clusters.as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("varies"));
    }

    #[test]
    fn mean_imputation_adds_indicator() {
        let units = "unit_id,cluster_id,x\nu1,A,1\nu2,A,NA\nu3,B,3\nu4,B,8\n";
        let ds = load_dataset_from_readers(units.as_bytes(), CLUSTERS.as_bytes(), &schema()).unwrap();
        let (_, x) = ds.covariate("x").unwrap();
        assert_eq!(ds.unit_value(1, x), 4.0);
        assert_eq!(ds.unit_value(0, x), 1.0);
        let (entry, ind) = ds.covariate("x_missing").unwrap();
        assert!(entry.derived);
        let flags: Vec<f64> = (0..4).map(|u| ds.unit_value(u, ind)).collect();
        assert_eq!(flags, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_with_error_policy_fails() {
        let mut s = schema();
        s[0].missing_policy = MissingPolicy::Error;
        let units = "unit_id,cluster_id,x\nu1,A,1\nu2,A,NA\nu3,B,3\n";
        let err = load_dataset_from_readers(units.as_bytes(), CLUSTERS.as_bytes(), &s).unwrap_err();
        assert!(matches!(err, DataError::Missing { line: 3, .. }));
    }

    #[test]
    fn pooled_sd_examples() {
        let units = "unit_id,cluster_id,x\nu1,A,0\nu2,A,2\nu3,B,0\nu4,B,2\n";
        let ds = load_dataset_from_readers(units.as_bytes(), CLUSTERS.as_bytes(), &schema()).unwrap();
        let sd = pooled_std(&ds, "x").unwrap();
        assert!((sd.value - 2f64.sqrt()).abs() < 1e-12 && !sd.degenerate);

        let units = "unit_id,cluster_id,x\nu1,A,1\nu2,A,3\nu5,A,5\nu3,B,2\nu4,B,2\nu6,B,2\n";
        let ds = load_dataset_from_readers(units.as_bytes(), CLUSTERS.as_bytes(), &schema()).unwrap();
        assert!((pooled_std(&ds, "x").unwrap().value - 2f64.sqrt()).abs() < 1e-12);

        let units = "unit_id,cluster_id,x\nu1,A,7\nu2,A,7\nu3,B,7\nu4,B,7\n";
        let ds = load_dataset_from_readers(units.as_bytes(), CLUSTERS.as_bytes(), &schema()).unwrap();
        let sd = pooled_std(&ds, "x").unwrap();
        assert_eq!(sd.value, 0.0);
        assert!(sd.degenerate);
    }

    #[test]
    fn standardized_difference_examples() {
        assert_eq!(standardized_difference(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap(), 0.0);
        assert_eq!(standardized_difference(&[1.0], &[0.0], 2.0).unwrap(), 0.5);
        assert!((standardized_difference(&[245.71], &[244.92], 39.5).unwrap() - 0.02).abs() < 1e-12);
        assert!(standardized_difference(&[], &[0.0], 1.0).is_err());
        assert_eq!(standardized_difference(&[1.0], &[1.0], 0.0).unwrap(), 0.0);
        assert_eq!(standardized_difference(&[2.0], &[1.0], 0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn round_trip_through_csv() {
        let schema = vec![
            CovariateSchema::new("x", CovariateKind::Continuous, Level::Unit),
            CovariateSchema::nominal("sex", Level::Unit, &["f", "m"]),
            CovariateSchema::new("y", CovariateKind::Continuous, Level::Unit).with_role(Role::Outcome),
            CovariateSchema::new("size", CovariateKind::Continuous, Level::Cluster),
        ];
        let units = "unit_id,cluster_id,x,sex,y\nu1,A,0.1,f,1.5\nu2,A,NA,NA,2\nu3,B,3.25,m,NA\n";
        let clusters = "cluster_id,treated,stratum,size\nA,1,R1,10\nB,0,R1,NA\n";
        let ds = load_dataset_from_readers(units.as_bytes(), clusters.as_bytes(), &schema).unwrap();
        let mut ub = Vec::new();
        let mut cb = Vec::new();
        ds.write_csv(&mut ub, &mut cb).unwrap();
        let again = load_dataset_from_readers(ub.as_slice(), cb.as_slice(), ds.source_schema()).unwrap();
        assert_eq!(again, ds);
    }
}
