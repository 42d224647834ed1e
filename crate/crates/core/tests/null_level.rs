use multimatch::cli::config::SimulateConfig;
use multimatch::cli::simulate::simulate;
use multimatch::data::{load_dataset_from_readers, Level};
use multimatch::distance::DistanceModel;
use multimatch::inference::{analyze, InferenceOptions};
use multimatch::matcher::{multilevel_match, MatchOptions};

/// Simulated studies with no effect, matched and analyzed end to end.
#[test]
fn no_effect_rejects_at_about_alpha() {
    let params = SimulateConfig {
        treated_clusters: 8,
        control_clusters: 8,
        units_per_cluster: 8,
        effect: 0.0,
        ..SimulateConfig::default()
    };
    let options = InferenceOptions {
        gamma_grid: vec![1.0],
        ..InferenceOptions::default()
    };
    let (mut runs, mut rejected, mut covered) = (0, 0, 0);
    let mut taus = Vec::new();
    for seed in 0..200 {
        let sim = simulate(&params, seed);
        let ds = load_dataset_from_readers(sim.units_csv.as_bytes(), sim.clusters_csv.as_bytes(), &sim.config.schema).unwrap();
        let spec = sim.config.balance.compile(&ds).unwrap();
        let unit = DistanceModel::fit(&ds, &sim.config.distance, Level::Unit).unwrap();
        let run = multilevel_match(&ds, &spec, &unit, &MatchOptions { threads: 1, ..MatchOptions::default() }).unwrap();
        let Ok(result) = analyze(&ds, &run.sample, &options) else {
            continue;
        };
        runs += 1;
        rejected += usize::from(result.p_one_sided < 0.05);
        covered += usize::from(result.ci.0 <= 0.0 && 0.0 <= result.ci.1);
        taus.push(result.tau_hat);
    }
    eprintln!("runs {runs} rejected {rejected} covered {covered}");
    assert!(runs >= 180, "only {runs} analyzable replications");
    let rate = rejected as f64 / runs as f64;
    let coverage = covered as f64 / runs as f64;
    let mean_tau = taus.iter().sum::<f64>() / taus.len() as f64;
    assert!(rate <= 0.1, "rejection rate {rate}");
    assert!(coverage >= 0.9, "coverage {coverage}");
    assert!(mean_tau.abs() < 0.25, "mean estimate {mean_tau}");
}
