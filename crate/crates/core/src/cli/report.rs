//! CSV and plain-text report writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::balance::{BalanceReport, DescriptionRow};
use crate::data::Level;

pub const TABLE1: [&str; 4] = ["covariate", "mean_treated", "mean_control", "std_dif"];
pub const TABLE2: [&str; 4] = ["covariate", "category", "count_treated", "count_control"];
pub const TABLE3: [&str; 7] = [
    "covariate",
    "mean_treated",
    "mean_control",
    "std_dif",
    "weighted_mean_treated",
    "weighted_mean_control",
    "weighted_std_dif",
];
pub const TABLE5: [&str; 7] = [
    "covariate",
    "treated_all",
    "treated_unmatched",
    "treated_matched",
    "control_matched",
    "control_unmatched",
    "control_all",
];
pub const BALANCE_REPORT: [&str; 14] = [
    "level",
    "covariate",
    "category",
    "mean_treated",
    "mean_control",
    "std_dif",
    "count_treated",
    "count_control",
    "ks",
    "fine_deviation",
    "weighted_mean_treated",
    "weighted_mean_control",
    "weighted_std_dif",
    "violated",
];
pub const COMPARISON: [&str; 7] = [
    "method",
    "clusters",
    "units",
    "mean_imbalances_clusters",
    "tv_units",
    "tv_units_raw",
    "problems_solved",
];

/// Writes `header` then one record per row, so empty tables keep their
/// header.
pub fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

fn label(covariate: &str, category: Option<&String>) -> String {
    match category {
        Some(c) => format!("{covariate}={c}"),
        None => covariate.to_string(),
    }
}

pub fn table1(report: &BalanceReport) -> Vec<(String, f64, f64, f64)> {
    report
        .rows
        .iter()
        .filter(|r| r.level == Level::Unit)
        .map(|r| (label(&r.covariate, r.category.as_ref()), r.mean_treated, r.mean_control, r.std_dif))
        .collect()
}

pub fn table2(report: &BalanceReport) -> Vec<(String, String, usize, usize)> {
    report
        .rows
        .iter()
        .filter(|r| r.level == Level::Unit)
        .filter_map(|r| {
            Some((
                r.covariate.clone(),
                r.category.clone()?,
                r.count_treated?,
                r.count_control?,
            ))
        })
        .collect()
}

#[allow(clippy::type_complexity)]
pub fn table3(report: &BalanceReport) -> Vec<(String, f64, f64, f64, Option<f64>, Option<f64>, Option<f64>)> {
    report
        .rows
        .iter()
        .filter(|r| r.level == Level::Cluster)
        .map(|r| {
            (
                label(&r.covariate, r.category.as_ref()),
                r.mean_treated,
                r.mean_control,
                r.std_dif,
                r.weighted_mean_treated,
                r.weighted_mean_control,
                r.weighted_std_dif,
            )
        })
        .collect()
}

fn cell(v: &str) -> String {
    v.to_string()
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

/// Columns padded to their widest entry.
pub fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            width[i] = width[i].max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:<w$}", w = width[i]))
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.iter().map(|h| cell(h)).collect());
    out.push_str(&line(width.iter().map(|&w| "-".repeat(w)).collect()));
    for r in rows {
        out.push_str(&line(r.clone()));
    }
    out
}

/// All balance tables as aligned text.
pub fn balance_text(report: &BalanceReport, description: &[DescriptionRow]) -> String {
    let mut out = String::from("Unit-level balance\n");
    let t1: Vec<Vec<String>> = table1(report)
        .into_iter()
        .map(|(c, a, b, d)| vec![c, num(a), num(b), num(d)])
        .collect();
    out.push_str(&aligned(&TABLE1, &t1));
    out.push_str("\nCategory counts\n");
    let t2: Vec<Vec<String>> = table2(report)
        .into_iter()
        .map(|(c, g, a, b)| vec![c, g, a.to_string(), b.to_string()])
        .collect();
    out.push_str(&aligned(&TABLE2, &t2));
    out.push_str("\nCluster-level balance\n");
    let t3: Vec<Vec<String>> = table3(report)
        .into_iter()
        .map(|(c, a, b, d, e, f, g)| vec![c, num(a), num(b), num(d), opt(e), opt(f), opt(g)])
        .collect();
    out.push_str(&aligned(&TABLE3, &t3));
    out.push_str("\nSample description\n");
    let t5: Vec<Vec<String>> = description
        .iter()
        .map(|r| {
            vec![
                r.covariate.clone(),
                num(r.treated_all),
                opt(r.treated_unmatched),
                num(r.treated_matched),
                num(r.control_matched),
                opt(r.control_unmatched),
                num(r.control_all),
            ]
        })
        .collect();
    out.push_str(&aligned(&TABLE5, &t5));
    out.push_str(&format!("\nviolations: {}\n", report.violation_count()));
    for v in &report.violations {
        out.push_str(&format!("  {} ({}) {}\n", v.constraint, v.covariate, v.row));
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())
}
