//! Synthetic two-level studies with a cluster-level treatment.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Normal};

use super::config::{SimulateConfig, StudyConfig};
use crate::balance::{BalanceConstraint, BalanceSpec};
use crate::data::{CovariateKind, CovariateSchema, Level, Role};

pub struct Simulated {
    pub units_csv: String,
    pub clusters_csv: String,
    pub config: StudyConfig,
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite sd")
}

/// Cluster means of every unit covariate and a random effect share `icc` of
/// the variance; treatment goes to exactly `treated_clusters` clusters,
/// drawn without replacement with odds `exp(score)` from a logistic score
/// on cluster covariates.
pub fn simulate(p: &SimulateConfig, seed: u64) -> Simulated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = p.treated_clusters + p.control_clusters;
    let between = normal(p.icc.sqrt());
    let within = normal((1.0 - p.icc).sqrt());
    let std = normal(1.0);
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit scale");

    let w: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..p.cluster_covariates).map(|_| std.sample(&mut rng)).collect())
        .collect();
    let centre: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..p.unit_covariates).map(|_| between.sample(&mut rng)).collect())
        .collect();
    let effect: Vec<f64> = (0..k).map(|_| between.sample(&mut rng)).collect();
    let strata: Vec<usize> = (0..k).map(|_| rng.random_range(0..p.strata)).collect();

    let mut keys: Vec<(f64, usize)> = (0..k)
        .map(|c| {
            let score = 0.5 * w[c].first().copied().unwrap_or(0.0) + 0.5 * centre[c].first().copied().unwrap_or(0.0);
            (score + gumbel.sample(&mut rng), c)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut treated = vec![false; k];
    for &(_, c) in keys.iter().take(p.treated_clusters) {
        treated[c] = true;
    }

    let xs: Vec<String> = (1..=p.unit_covariates).map(|j| format!("x{j}")).collect();
    let ws: Vec<String> = (1..=p.cluster_covariates).map(|j| format!("w{j}")).collect();
    let mut clusters = String::from("cluster_id,treated");
    if p.strata > 1 {
        clusters.push_str(",stratum");
    }
    for name in &ws {
        let _ = write!(clusters, ",{name}");
    }
    clusters.push('\n');
    let mut units = String::from("unit_id,cluster_id");
    for name in &xs {
        let _ = write!(units, ",{name}");
    }
    units.push_str(",sex,y\n");

    let width = k.to_string().len();
    for c in 0..k {
        let id = format!("C{c:0width$}");
        let _ = write!(clusters, "{id},{}", u8::from(treated[c]));
        if p.strata > 1 {
            let _ = write!(clusters, ",R{}", strata[c] + 1);
        }
        for v in &w[c] {
            let _ = write!(clusters, ",{v:.6}");
        }
        clusters.push('\n');
        for i in 0..p.units_per_cluster {
            let x: Vec<f64> = centre[c].iter().map(|m| m + within.sample(&mut rng)).collect();
            let female = rng.random_bool(0.5);
            let noise = within.sample(&mut rng);
            let y = p.effect * f64::from(u8::from(treated[c])) + 0.5 * x.iter().sum::<f64>() + effect[c] + noise;
            let _ = write!(units, "{id}_{i:03},{id}");
            for v in &x {
                let _ = write!(units, ",{v:.6}");
            }
            let _ = writeln!(units, ",{},{y:.6}", if female { "F" } else { "M" });
        }
    }

    let mut schema: Vec<CovariateSchema> = xs
        .iter()
        .map(|n| CovariateSchema::new(n.as_str(), CovariateKind::Continuous, Level::Unit))
        .collect();
    schema.push(CovariateSchema::nominal("sex", Level::Unit, &["F", "M"]));
    schema.push(CovariateSchema::new("y", CovariateKind::Continuous, Level::Unit).with_role(Role::Outcome));
    schema.extend(ws.iter().map(|n| CovariateSchema::new(n.as_str(), CovariateKind::Continuous, Level::Cluster)));
    let mut unit: Vec<BalanceConstraint> = xs.iter().map(|n| BalanceConstraint::mean(n, 0.1)).collect();
    unit.push(BalanceConstraint::fine("sex", 2));
    let cluster = ws.iter().map(|n| BalanceConstraint::mean(n, 0.25)).collect();
    let config = StudyConfig {
        units_file: Some("units.csv".into()),
        clusters_file: Some("clusters.csv".into()),
        schema,
        balance: BalanceSpec { unit, cluster },
        output_dir: Some("out".into()),
        seed,
        ..serde_json::from_str("{}").expect("defaults")
    };
    Simulated {
        units_csv: units,
        clusters_csv: clusters,
        config,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_dataset_from_readers;

    fn params(icc: f64) -> SimulateConfig {
        SimulateConfig {
            treated_clusters: 15,
            control_clusters: 25,
            units_per_cluster: 30,
            icc,
            ..SimulateConfig::default()
        }
    }

    #[test]
    fn output_loads_and_is_reproducible() {
        let a = simulate(&params(0.2), 9);
        let b = simulate(&params(0.2), 9);
        assert_eq!(a.units_csv, b.units_csv);
        assert_eq!(a.clusters_csv, b.clusters_csv);
        let ds = load_dataset_from_readers(a.units_csv.as_bytes(), a.clusters_csv.as_bytes(), &a.config.schema).unwrap();
        assert_eq!(ds.treated_clusters().len(), 15);
        assert_eq!(ds.units.len(), 40 * 30);
        assert_ne!(simulate(&params(0.2), 10).units_csv, a.units_csv);
    }

    fn between_share(icc: f64) -> f64 {
        let s = simulate(&SimulateConfig { effect: 0.0, ..params(icc) }, 4);
        let ds = load_dataset_from_readers(s.units_csv.as_bytes(), s.clusters_csv.as_bytes(), &s.config.schema).unwrap();
        let y: Vec<Vec<f64>> = ds
            .clusters
            .iter()
            .map(|c| c.units.iter().map(|&u| ds.units[u].outcome.unwrap()).collect())
            .collect();
        let n = y[0].len() as f64;
        let grand = y.iter().flatten().sum::<f64>() / (n * y.len() as f64);
        let means: Vec<f64> = y.iter().map(|v| v.iter().sum::<f64>() / n).collect();
        let within: f64 = y
            .iter()
            .zip(&means)
            .map(|(v, m)| v.iter().map(|x| (x - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (y.len() as f64 * (n - 1.0));
        let spread = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (means.len() as f64 - 1.0);
        let between = (spread - within / n).max(0.0);
        between / (between + within)
    }

    #[test]
    fn icc_controls_the_between_cluster_share() {
        assert!(between_share(0.0) < 0.03);
        let s = between_share(0.4);
        assert!((0.2..0.6).contains(&s), "{s}");
    }
}
