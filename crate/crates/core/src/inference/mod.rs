//! Randomization inference for a cluster-level treatment on a matched
//! sample: the statistic T, p-values, Hodges-Lehmann estimate, intervals,
//! equivalence tests and Γ sensitivity analysis.

pub mod huber;
pub mod pvalue;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use huber::{huber_residual_ranks, Design, HuberFit};
pub use pvalue::{randomization_pvalue, sensitivity_bound, PMode, PValue, ScoredSample};

use crate::data::{DataError, Dataset, Level};
use crate::distance::default_columns;
use crate::sample::MatchedSample;
use crate::stats;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum InferenceError {
    #[error("exact p-values need at most 20 pairs or integer scores (got {0} pairs)")]
    ExactTooLarge(usize),
    #[error("no estimate: {0}")]
    NoEstimate(String),
    #[error("matched unit `{0}` has no outcome")]
    MissingOutcome(String),
    #[error("the matched sample has no unit pairs")]
    EmptySample,
    #[error("the dataset declares no outcome column")]
    NoOutcome,
    #[error("{0}")]
    Parameter(String),
    #[error("{0}")]
    Data(String),
}

impl From<DataError> for InferenceError {
    fn from(e: DataError) -> Self {
        InferenceError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    #[default]
    Constant,
    SizeProportional,
}

/// Matched units in pair order: each pair's treated units, then its
/// control units.
pub fn matched_units(sample: &MatchedSample) -> Vec<usize> {
    let mut out = Vec::new();
    for p in &sample.pairs {
        out.extend(p.units.iter().map(|u| u.treated));
        out.extend(p.units.iter().map(|u| u.control));
    }
    out
}

/// `B_k` and `Q_k` from unit scores `q` aligned with [`matched_units`].
/// The first cluster of a pair is the one listed first in the dataset.
pub fn cluster_statistic(sample: &MatchedSample, q: &[f64], rule: WeightRule) -> ScoredSample {
    let total: f64 = sample.pairs.iter().map(|p| 2.0 * p.m() as f64).sum();
    let mut b = Vec::new();
    let mut qs = Vec::new();
    let mut w = Vec::new();
    let mut at = 0;
    for p in &sample.pairs {
        let m = p.m();
        let weight = match rule {
            WeightRule::Constant => 1.0,
            WeightRule::SizeProportional => 2.0 * m as f64 / total,
        };
        let diff = if m == 0 {
            0.0
        } else {
            let mean = |s: &[f64]| s.iter().sum::<f64>() / m as f64;
            mean(&q[at..at + m]) - mean(&q[at + m..at + 2 * m])
        };
        at += 2 * m;
        let treated_first = p.treated < p.control;
        b.push(if treated_first { 1.0 } else { -1.0 });
        qs.push(weight * if treated_first { diff } else { -diff });
        w.push(weight);
    }
    ScoredSample { b, q: qs, w }
}

/// Outcomes, covariates and pair structure of a matched sample, ready for
/// repeated evaluation of the shifted statistic `T_τ`.
#[derive(Debug, Clone)]
pub struct Analysis {
    sample: MatchedSample,
    y: Vec<f64>,
    treated: Vec<bool>,
    design: Design,
    rule: WeightRule,
    mode: PMode,
    /// Sample SD of the matched outcomes (1 when degenerate).
    pub scale: f64,
}

impl Analysis {
    /// Regresses outcomes on `covariates` (default: the numeric unit-level
    /// balance covariates).
    pub fn new(
        ds: &Dataset,
        sample: &MatchedSample,
        covariates: Option<&[String]>,
        rule: WeightRule,
        mode: PMode,
    ) -> Result<Self, InferenceError> {
        if ds.outcome_name().is_none() {
            return Err(InferenceError::NoOutcome);
        }
        let units = matched_units(sample);
        if units.is_empty() {
            return Err(InferenceError::EmptySample);
        }
        let names = covariates.map_or_else(|| default_columns(ds, Level::Unit), <[String]>::to_vec);
        let cols = names
            .iter()
            .map(|n| {
                let (s, col) = ds.covariate(n)?;
                if s.is_numeric() {
                    Ok(col)
                } else {
                    Err(InferenceError::Parameter(format!("regression covariate `{n}` must be numeric")))
                }
            })
            .collect::<Result<Vec<_>, InferenceError>>()?;
        let y = units
            .iter()
            .map(|&u| ds.units[u].outcome.ok_or_else(|| InferenceError::MissingOutcome(ds.units[u].unit_id.clone())))
            .collect::<Result<Vec<f64>, _>>()?;
        let x: Vec<Vec<f64>> = units.iter().map(|&u| cols.iter().map(|&c| ds.value_for_unit(u, c)).collect()).collect();
        let sd = stats::sample_sd(&y).unwrap_or(0.0);
        Ok(Self {
            sample: sample.clone(),
            treated: units.iter().map(|&u| ds.is_treated_unit(u)).collect(),
            design: Design::new(&x),
            scale: if sd > 0.0 { sd } else { 1.0 },
            y,
            rule,
            mode,
        })
    }

    /// Built from raw pieces: outcomes and covariate rows aligned with
    /// [`matched_units`] of `sample`.
    pub fn from_parts(
        sample: &MatchedSample,
        treated: Vec<bool>,
        y: Vec<f64>,
        x: &[Vec<f64>],
        rule: WeightRule,
        mode: PMode,
    ) -> Self {
        let sd = stats::sample_sd(&y).unwrap_or(0.0);
        Self {
            sample: sample.clone(),
            treated,
            design: Design::new(x),
            scale: if sd > 0.0 { sd } else { 1.0 },
            y,
            rule,
            mode,
        }
    }

    pub fn mode(&self) -> PMode {
        self.mode
    }

    /// Residual-rank scores of `Y − Z·τ₀`, with a flag for Huber convergence.
    pub fn scores(&self, tau0: f64) -> (Vec<f64>, bool) {
        let shifted: Vec<f64> = self
            .y
            .iter()
            .zip(&self.treated)
            .map(|(&y, &z)| if z { y - tau0 } else { y })
            .collect();
        let fit = self.design.huber(&shifted);
        (stats::average_ranks(&fit.residuals), fit.converged)
    }

    pub fn scored(&self, tau0: f64) -> ScoredSample {
        cluster_statistic(&self.sample, &self.scores(tau0).0, self.rule)
    }

    fn z(&self, tau0: f64) -> f64 {
        let s = self.scored(tau0);
        let v = s.variance();
        if v > 0.0 {
            s.statistic() / v.sqrt()
        } else {
            0.0
        }
    }

    fn tolerance(&self) -> f64 {
        1e-6 * self.scale
    }
}

/// Bisection for the boundary of `{τ : pred(τ)}` given `pred(lo)` and
/// `!pred(hi)`.
fn boundary(mut lo: f64, mut hi: f64, tol: f64, pred: impl Fn(f64) -> bool) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Hodges-Lehmann estimate: the centre of the set of shifts τ₀ where
/// `T_τ₀` changes sign.
pub fn hl_estimate(analysis: &Analysis) -> Result<f64, InferenceError> {
    let span = 10.0 * analysis.scale;
    let t = |tau: f64| analysis.scored(tau).statistic();
    let (lo, hi) = (-span, span);
    if !(t(lo) > 0.0) || !(t(hi) < 0.0) {
        return Err(InferenceError::NoEstimate(format!(
            "the statistic does not change sign for shifts within ±{span:.4}"
        )));
    }
    let tol = analysis.tolerance();
    let upper = boundary(lo, hi, tol, |tau| t(tau) > 0.0);
    let lower = boundary(lo, hi, tol, |tau| t(tau) >= 0.0);
    Ok(0.5 * (upper + lower))
}

/// Endpoint search that widens the bracket up to a few times. Ranks stop
/// changing once the shift dominates the data, so a limit still inside after
/// the widest bracket is infinite.
fn bracketed(analysis: &Analysis, from: f64, dir: f64, inside: &dyn Fn(f64) -> bool) -> f64 {
    let mut span = 10.0 * analysis.scale;
    for _ in 0..4 {
        let far = from + dir * span;
        if !inside(far) {
            let (a, b) = if dir > 0.0 { (from, far) } else { (far, from) };
            let tol = analysis.tolerance();
            return if dir > 0.0 {
                boundary(a, b, tol, inside)
            } else {
                boundary(a, b, tol, |tau| !inside(tau))
            };
        }
        span *= 4.0;
    }
    f64::INFINITY.copysign(dir)
}

/// Two-sided `1 − alpha` interval by inverting the two one-sided normal
/// tests at level `alpha/2`. With few pairs a side can be unbounded.
pub fn confidence_interval(analysis: &Analysis, alpha: f64, tau_hat: f64) -> Result<(f64, f64), InferenceError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let z = stats::normal_quantile(1.0 - alpha / 2.0);
    let lo = bracketed(analysis, tau_hat, -1.0, &|tau| analysis.z(tau) < z);
    let hi = bracketed(analysis, tau_hat, 1.0, &|tau| analysis.z(tau) > -z);
    Ok((lo.min(tau_hat), hi.max(tau_hat)))
}

/// The larger of the two one-sided (Γ-bounded) p-values for `τ ≤ −δ` and
/// `τ ≥ δ`.
pub fn equivalence_test(analysis: &Analysis, delta: f64, gamma: f64) -> Result<EquivalenceP, InferenceError> {
    if !(delta > 0.0) {
        return Err(InferenceError::Parameter(format!("delta must be positive, got {delta}")));
    }
    let lower = sensitivity_bound(&analysis.scored(-delta), gamma, analysis.mode)?;
    let upper = sensitivity_bound(&analysis.scored(delta).negated(), gamma, analysis.mode)?;
    Ok(EquivalenceP {
        p: lower.p.max(upper.p),
        p_lower: lower.p,
        p_upper: upper.p,
        degenerate: lower.degenerate || upper.degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivalenceP {
    pub p: f64,
    /// p-value against `τ ≤ −δ`.
    pub p_lower: f64,
    /// p-value against `τ ≥ δ`.
    pub p_upper: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaFlag {
    /// Not significant even at Γ = 1.
    NotSignificant,
    /// Still significant at the top of the search range.
    AboveRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaThreshold {
    pub gamma_star: f64,
    pub flag: Option<GammaFlag>,
}

impl GammaThreshold {
    pub fn display(&self) -> String {
        match self.flag {
            Some(GammaFlag::AboveRange) => format!(">{}", GAMMA_MAX),
            Some(GammaFlag::NotSignificant) => format!("{:.2} (not significant)", self.gamma_star),
            None => format!("{:.2}", self.gamma_star),
        }
    }
}

pub const GAMMA_MAX: f64 = 100.0;
const GAMMA_TOL: f64 = 0.01;

/// Smallest Γ in `[1, 100]` at which the bounded p-value exceeds `alpha`,
/// to within 0.01.
pub fn gamma_threshold(
    p_at: impl Fn(f64) -> Result<f64, InferenceError>,
    alpha: f64,
) -> Result<GammaThreshold, InferenceError> {
    if p_at(1.0)? > alpha {
        return Ok(GammaThreshold {
            gamma_star: 1.0,
            flag: Some(GammaFlag::NotSignificant),
        });
    }
    if p_at(GAMMA_MAX)? <= alpha {
        return Ok(GammaThreshold {
            gamma_star: GAMMA_MAX,
            flag: Some(GammaFlag::AboveRange),
        });
    }
    let (mut lo, mut hi) = (1.0, GAMMA_MAX);
    while hi - lo > GAMMA_TOL {
        let mid = 0.5 * (lo + hi);
        if p_at(mid)? > alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(GammaThreshold {
        gamma_star: hi,
        flag: None,
    })
}

fn default_alpha() -> f64 {
    0.05
}

fn default_grid() -> Vec<f64> {
    (0..=40).map(|i| 1.0 + 0.05 * f64::from(i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceOptions {
    #[serde(default)]
    pub weight_rule: WeightRule,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Equivalence margins in outcome units.
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default = "default_grid")]
    pub gamma_grid: Vec<f64>,
    /// Outcome-model covariates; numeric unit-level balance covariates when
    /// absent.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub mode: PMode,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            weight_rule: WeightRule::default(),
            alpha: default_alpha(),
            deltas: Vec::new(),
            gamma_grid: default_grid(),
            covariates: None,
            mode: PMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceRow {
    pub delta: f64,
    pub p: f64,
    pub p_lower: f64,
    pub p_upper: f64,
    pub gamma_star: GammaThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub p_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResult {
    pub pairs: usize,
    pub units: usize,
    pub weight_rule: WeightRule,
    pub mode: PMode,
    #[serde(rename = "T")]
    pub t: f64,
    pub variance: f64,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    pub p_one_sided: f64,
    pub degenerate: bool,
    pub tau_hat: f64,
    pub alpha: f64,
    pub ci: (f64, f64),
    pub equivalence: Vec<EquivalenceRow>,
    pub sensitivity: Vec<SweepRow>,
    pub gamma_star: GammaThreshold,
    pub huber_converged: bool,
}

/// Every inference quantity for one matched sample.
pub fn analyze(ds: &Dataset, sample: &MatchedSample, options: &InferenceOptions) -> Result<InferenceResult, InferenceError> {
    let analysis = Analysis::new(ds, sample, options.covariates.as_deref(), options.weight_rule, options.mode)?;
    let (scores, huber_converged) = analysis.scores(0.0);
    let scored = cluster_statistic(sample, &scores, options.weight_rule);
    let p = randomization_pvalue(&scored, options.mode)?;
    let tau_hat = hl_estimate(&analysis)?;
    let ci = confidence_interval(&analysis, options.alpha, tau_hat)?;
    let sensitivity = options
        .gamma_grid
        .iter()
        .map(|&gamma| {
            Ok(SweepRow {
                gamma,
                p_upper: sensitivity_bound(&scored, gamma, options.mode)?.p,
            })
        })
        .collect::<Result<Vec<_>, InferenceError>>()?;
    let gamma_star = gamma_threshold(|g| Ok(sensitivity_bound(&scored, g, options.mode)?.p), options.alpha)?;
    let equivalence = options
        .deltas
        .iter()
        .map(|&delta| {
            let e = equivalence_test(&analysis, delta, 1.0)?;
            Ok(EquivalenceRow {
                delta,
                p: e.p,
                p_lower: e.p_lower,
                p_upper: e.p_upper,
                gamma_star: gamma_threshold(|g| Ok(equivalence_test(&analysis, delta, g)?.p), options.alpha)?,
            })
        })
        .collect::<Result<Vec<_>, InferenceError>>()?;
    Ok(InferenceResult {
        pairs: sample.pairs.len(),
        units: sample.n_unit_pairs() * 2,
        weight_rule: options.weight_rule,
        mode: options.mode,
        t: scored.statistic(),
        variance: scored.variance(),
        q: scored.q.clone(),
        p_one_sided: p.p,
        degenerate: p.degenerate,
        tau_hat,
        alpha: options.alpha,
        ci,
        equivalence,
        sensitivity,
        gamma_star,
        huber_converged,
    })
}

impl InferenceResult {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cluster pairs        {}", self.pairs);
        let _ = writeln!(s, "matched units        {}", self.units);
        let _ = writeln!(s, "weights              {:?}", self.weight_rule);
        let _ = writeln!(s, "T                    {:.6}", self.t);
        let _ = writeln!(s, "var(T)               {:.6}", self.variance);
        let _ = writeln!(s, "p_one_sided          {:.6}", self.p_one_sided);
        let _ = writeln!(s, "tau_hat              {:.6}", self.tau_hat);
        let level = 100.0 * (1.0 - self.alpha);
        let _ = writeln!(s, "ci ({level:.0}%)             [{:.6}, {:.6}]", self.ci.0, self.ci.1);
        let _ = writeln!(s, "gamma_star           {}", self.gamma_star.display());
        for e in &self.equivalence {
            let _ = writeln!(
                s,
                "equivalence delta={:<8} p={:.6} gamma_star={}",
                e.delta,
                e.p,
                e.gamma_star.display()
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{ClusterPair, Strategy, UnitPair};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `k` cluster pairs of `m` units; the treated cluster comes first.
    fn sample(k: usize, m: usize) -> MatchedSample {
        let pairs = (0..k)
            .map(|i| ClusterPair {
                treated: 2 * i,
                control: 2 * i + 1,
                units: (0..m)
                    .map(|j| UnitPair {
                        treated: 2 * (i * m + j),
                        control: 2 * (i * m + j) + 1,
                        distance: 0.0,
                    })
                    .collect(),
            })
            .collect();
        MatchedSample {
            pairs,
            strategy: Strategy::Loaded,
        }
    }

    /// Outcomes aligned with `matched_units`: per pair, `m` treated then `m`
    /// control values.
    fn analysis(k: usize, m: usize, y: Vec<f64>) -> Analysis {
        let s = sample(k, m);
        let treated = (0..k).flat_map(|_| (0..2 * m).map(move |j| j < m)).collect();
        let x = vec![Vec::new(); y.len()];
        Analysis::from_parts(&s, treated, y, &x, WeightRule::Constant, PMode::Normal)
    }

    fn shifted(rng: &mut ChaCha8Rng, k: usize, m: usize, shift: f64) -> Analysis {
        let mut y = Vec::new();
        for _ in 0..k {
            let base: f64 = rng.random_range(-1.0..1.0);
            for j in 0..2 * m {
                let noise: f64 = rng.random_range(-1.0..1.0);
                y.push(base + noise + if j < m { shift } else { 0.0 });
            }
        }
        analysis(k, m, y)
    }

    #[test]
    fn statistic_from_unit_scores() {
        let s = sample(2, 1);
        let scored = cluster_statistic(&s, &[3.0, 1.0, 1.0, 2.0], WeightRule::Constant);
        assert_eq!(scored.q, vec![2.0, -1.0]);
        assert_eq!(scored.statistic(), 1.0);
        assert_eq!(scored.variance(), 5.0);
        let zero = cluster_statistic(&s, &[1.0; 4], WeightRule::Constant);
        assert_eq!(zero.statistic(), 0.0);
    }

    #[test]
    fn second_listed_treated_cluster_flips_sign() {
        let mut s = sample(1, 1);
        s.pairs[0].treated = 5;
        s.pairs[0].control = 2;
        let scored = cluster_statistic(&s, &[3.0, 1.0], WeightRule::Constant);
        assert_eq!((scored.b[0], scored.q[0], scored.statistic()), (-1.0, -2.0, 2.0));
    }

    #[test]
    fn size_weights_sum_to_one() {
        let mut s = sample(2, 2);
        s.pairs[1].units.pop();
        let scored = cluster_statistic(&s, &[4.0, 3.0, 1.0, 2.0, 5.0, 6.0], WeightRule::SizeProportional);
        assert!((scored.w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((scored.w[0] - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn hl_recovers_an_exact_shift() {
        let mut y = Vec::new();
        for i in 0..8 {
            let c = f64::from(i * i % 7);
            y.extend([c + 5.0, c]);
        }
        let a = analysis(8, 1, y.clone());
        let tau = hl_estimate(&a).unwrap();
        assert!((tau - 5.0).abs() < 1e-5, "{tau}");
        assert_eq!(a.scored(5.0).statistic(), 0.0);
        let negated: Vec<f64> = y.chunks(2).flat_map(|p| [p[1], p[0]]).collect();
        let b = analysis(8, 1, negated);
        assert!((hl_estimate(&b).unwrap() + tau).abs() < 1e-5);
    }

    #[test]
    fn hl_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = shifted(&mut rng, 12, 3, 0.0);
        let tau = hl_estimate(&a).unwrap();
        assert!(tau.abs() < 1.0);
        let y: Vec<f64> = a.y.iter().zip(&a.treated).map(|(&y, &z)| if z { y + 2.5 } else { y }).collect();
        let b = Analysis::from_parts(&a.sample, a.treated.clone(), y, &vec![Vec::new(); a.y.len()], WeightRule::Constant, PMode::Normal);
        assert!((hl_estimate(&b).unwrap() - tau - 2.5).abs() < 1e-4);
    }

    #[test]
    fn intervals_nest_and_contain_the_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = shifted(&mut rng, 15, 2, 1.0);
        let tau = hl_estimate(&a).unwrap();
        let wide = confidence_interval(&a, 0.05, tau).unwrap();
        let narrow = confidence_interval(&a, 0.10, tau).unwrap();
        assert!(wide.0 <= tau && tau <= wide.1);
        assert!(wide.0 <= narrow.0 + 1e-6 && narrow.1 <= wide.1 + 1e-6);
    }

    #[test]
    fn three_pairs_give_an_unbounded_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = shifted(&mut rng, 3, 4, 1.0);
        let tau = hl_estimate(&a).unwrap();
        assert_eq!(confidence_interval(&a, 0.05, tau).unwrap(), (f64::NEG_INFINITY, f64::INFINITY));
    }

    #[test]
    fn equivalence_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = shifted(&mut rng, 50, 1, 0.0);
        let e = equivalence_test(&a, 3.0 * a.scale, 1.0).unwrap();
        assert!(e.p < 0.05, "{e:?}");
        assert_eq!(e.p, e.p_lower.max(e.p_upper));
        let tiny = equivalence_test(&a, 1e-9, 1.0).unwrap();
        assert!(tiny.p >= 0.5 - 1e-6, "{tiny:?}");
        let mut last = 0.0;
        for g in [1.0, 1.5, 2.0, 4.0] {
            let p = equivalence_test(&a, a.scale, g).unwrap().p;
            assert!(p >= last);
            last = p;
        }
        assert!(equivalence_test(&a, 0.0, 1.0).is_err());
    }

    #[test]
    fn gamma_threshold_examples() {
        let s = ScoredSample::new(vec![1.0; 50], (0..50).map(|i| 1.0 + f64::from(i % 3)).collect());
        let p = |g: f64| Ok(sensitivity_bound(&s, g, PMode::Normal)?.p);
        let at05 = gamma_threshold(p, 0.05).unwrap();
        assert!(at05.flag.is_none());
        let scan = (0..=9900)
            .map(|i| 1.0 + f64::from(i) * 0.01)
            .find(|&g| p(g).unwrap() > 0.05)
            .unwrap();
        assert!((at05.gamma_star - scan).abs() <= 0.011, "{} vs {scan}", at05.gamma_star);
        let at01 = gamma_threshold(p, 0.01).unwrap();
        assert!(at01.gamma_star <= at05.gamma_star);
        let weak = ScoredSample::new(vec![1.0, -1.0], vec![1.0, 1.0]);
        let t = gamma_threshold(|g| Ok(sensitivity_bound(&weak, g, PMode::Normal)?.p), 0.05).unwrap();
        assert_eq!((t.gamma_star, t.flag), (1.0, Some(GammaFlag::NotSignificant)));
    }

    #[test]
    fn sensitivity_is_monotone_in_gamma() {
        let s = ScoredSample::new(vec![1.0; 6], vec![0.5, 1.0, -0.3, 2.0, 0.1, 0.7]);
        for mode in [PMode::Normal, PMode::Exact] {
            let mut last = 0.0;
            for i in 0..100 {
                let p = sensitivity_bound(&s, 1.0 + 0.1 * f64::from(i), mode).unwrap().p;
                assert!(p >= last);
                last = p;
            }
        }
    }
}
