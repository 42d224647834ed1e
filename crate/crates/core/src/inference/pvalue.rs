//! Sign-flip randomization p-values and their Γ sensitivity bounds.

use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::stats;

const EXACT_ENUMERATION_MAX: usize = 20;
const LATTICE_MAX: f64 = 4e6;

/// Per cluster pair `k`: the sign `B_k` and the weighted score difference
/// `Q_k` between its first and second cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredSample {
    pub b: Vec<f64>,
    pub q: Vec<f64>,
    pub w: Vec<f64>,
}

impl ScoredSample {
    pub fn new(b: Vec<f64>, q: Vec<f64>) -> Self {
        let w = vec![1.0; q.len()];
        Self { b, q, w }
    }

    pub fn k(&self) -> usize {
        self.q.len()
    }

    pub fn statistic(&self) -> f64 {
        self.b.iter().zip(&self.q).map(|(b, q)| b * q).sum()
    }

    /// Null variance `Σ Q_k²`.
    pub fn variance(&self) -> f64 {
        self.q.iter().map(|q| q * q).sum()
    }

    /// The same sample with every sign flipped, so the statistic is negated.
    pub fn negated(&self) -> Self {
        Self {
            b: self.b.iter().map(|b| -b).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PMode {
    #[default]
    Normal,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PValue {
    pub p: f64,
    /// The null distribution is a point mass.
    pub degenerate: bool,
}

/// Normal upper-tail bound when each term is `+|Q_k|` with probability
/// `Γ/(1+Γ)`.
fn normal_bound(t: f64, abs_sum: f64, sq_sum: f64, gamma: f64) -> PValue {
    let mu = (gamma - 1.0) / (gamma + 1.0) * abs_sum;
    let var = 4.0 * gamma / ((1.0 + gamma) * (1.0 + gamma)) * sq_sum;
    if var <= 0.0 {
        return PValue {
            p: if t - mu > 0.0 { 0.0 } else { 1.0 },
            degenerate: true,
        };
    }
    PValue {
        p: stats::normal_sf((t - mu) / var.sqrt()),
        degenerate: false,
    }
}

/// `P(Σ ±|Q_k| ≥ t)` with each sign positive with probability `pi`.
fn exact_tail(abs_q: &[f64], t: f64, pi: f64) -> Result<f64, InferenceError> {
    let k = abs_q.len();
    let total: f64 = abs_q.iter().sum();
    let tol = 1e-9 * (1.0 + total);
    if k <= EXACT_ENUMERATION_MAX {
        // Gray-code walk over sign vectors, starting from all negative
        let mut sum = -total;
        let mut plus = 0usize;
        let mut signs = vec![false; k];
        let mut tail = 0.0;
        for step in 0u64..(1u64 << k) {
            if step > 0 {
                let j = step.trailing_zeros() as usize;
                signs[j] = !signs[j];
                if signs[j] {
                    sum += 2.0 * abs_q[j];
                    plus += 1;
                } else {
                    sum -= 2.0 * abs_q[j];
                    plus -= 1;
                }
            }
            if sum >= t - tol {
                tail += pi.powi(plus as i32) * (1.0 - pi).powi((k - plus) as i32);
            }
        }
        return Ok(tail.min(1.0));
    }
    let integral = abs_q.iter().all(|q| (q - q.round()).abs() <= 1e-9);
    if !integral || total > LATTICE_MAX {
        return Err(InferenceError::ExactTooLarge(k));
    }
    // distribution of the positive part P; the statistic is 2P − total
    let size = total.round() as usize;
    let mut dist = vec![0.0; size + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for q in abs_q {
        let q = q.round() as usize;
        if q == 0 {
            continue;
        }
        for s in (0..=reach).rev() {
            let mass = dist[s];
            if mass != 0.0 {
                dist[s + q] += mass * pi;
                dist[s] = mass * (1.0 - pi);
            }
        }
        reach += q;
    }
    let threshold = (t - tol + total) / 2.0;
    let tail: f64 = dist
        .iter()
        .enumerate()
        .filter(|(s, _)| *s as f64 >= threshold)
        .map(|(_, m)| m)
        .sum();
    Ok(tail.min(1.0))
}

/// One-sided upper-tail randomization p-value of `T = Σ B_k Q_k`.
pub fn randomization_pvalue(scored: &ScoredSample, mode: PMode) -> Result<PValue, InferenceError> {
    sensitivity_bound(scored, 1.0, mode)
}

/// Upper bound on the one-sided p-value when assignment odds within a
/// cluster pair may differ by at most `gamma`.
pub fn sensitivity_bound(scored: &ScoredSample, gamma: f64, mode: PMode) -> Result<PValue, InferenceError> {
    if !(gamma >= 1.0) {
        return Err(InferenceError::Parameter(format!("gamma must be at least 1, got {gamma}")));
    }
    let t = scored.statistic();
    let abs_q: Vec<f64> = scored.q.iter().map(|q| q.abs()).collect();
    let sq_sum = scored.variance();
    match mode {
        PMode::Normal => Ok(normal_bound(t, abs_q.iter().sum(), sq_sum, gamma)),
        PMode::Exact => {
            if sq_sum <= 0.0 {
                return Ok(normal_bound(t, 0.0, 0.0, gamma));
            }
            Ok(PValue {
                p: exact_tail(&abs_q, t, gamma / (1.0 + gamma))?,
                degenerate: false,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(k: usize) -> ScoredSample {
        ScoredSample::new(vec![1.0; k], vec![1.0; k])
    }

    #[test]
    fn statistic_example() {
        let s = ScoredSample::new(vec![1.0, 1.0], vec![2.0, -1.0]);
        assert_eq!(s.statistic(), 1.0);
        assert_eq!(s.variance(), 5.0);
        assert_eq!(s.negated().statistic(), -1.0);
    }

    #[test]
    fn zero_statistic_has_half_normal_p() {
        let s = ScoredSample::new(vec![1.0, -1.0], vec![1.0, 1.0]);
        assert_eq!(randomization_pvalue(&s, PMode::Normal).unwrap().p, 0.5);
    }

    #[test]
    fn single_pair_modes_diverge() {
        let s = ScoredSample::new(vec![1.0], vec![2.0]);
        assert_eq!(randomization_pvalue(&s, PMode::Exact).unwrap().p, 0.5);
        let p = randomization_pvalue(&s, PMode::Normal).unwrap().p;
        assert!((p - 0.158_655_253_931_457).abs() < 1e-10);
    }

    #[test]
    fn four_unit_scores() {
        let s = ones(4);
        assert!((randomization_pvalue(&s, PMode::Normal).unwrap().p - 0.022_750_131_948_179).abs() < 1e-10);
        assert!((randomization_pvalue(&s, PMode::Exact).unwrap().p - 1.0 / 16.0).abs() < 1e-15);
        let normal = sensitivity_bound(&s, 3.0, PMode::Normal).unwrap().p;
        let expected = stats::normal_sf(2.0 / 3f64.sqrt());
        assert!((normal - expected).abs() < 1e-15);
        assert!((normal - 0.124).abs() < 1e-3);
        let exact = sensitivity_bound(&s, 3.0, PMode::Exact).unwrap().p;
        assert!((exact - 0.75f64.powi(4)).abs() < 1e-12);
        assert!((exact - 0.3164).abs() < 1e-4);
    }

    #[test]
    fn degenerate_scores() {
        let s = ScoredSample::new(vec![1.0, -1.0], vec![0.0, 0.0]);
        let p = randomization_pvalue(&s, PMode::Normal).unwrap();
        assert_eq!((p.p, p.degenerate), (1.0, true));
        assert_eq!(randomization_pvalue(&s, PMode::Exact).unwrap().p, 1.0);
    }

    #[test]
    fn lattice_agrees_with_enumeration() {
        let q: Vec<f64> = (0..18).map(|i| f64::from(i % 5 + 1)).collect();
        let abs = q.clone();
        for &t in &[-3.0, 0.0, 7.0, 20.0] {
            for &pi in &[0.5, 0.7] {
                let small = exact_tail(&abs, t, pi).unwrap();
                let mut dummy = abs.clone();
                dummy.extend([0.0; 5]);
                let big = exact_tail(&dummy, t, pi).unwrap();
                assert!((small - big).abs() < 1e-12, "t={t} pi={pi}: {small} vs {big}");
            }
        }
    }

    #[test]
    fn exact_rejects_large_fractional_k() {
        let s = ScoredSample::new(vec![1.0; 25], vec![0.5; 25]);
        assert!(matches!(randomization_pvalue(&s, PMode::Exact), Err(InferenceError::ExactTooLarge(25))));
    }

    #[test]
    fn gamma_one_is_bit_equal() {
        let s = ScoredSample::new(vec![1.0, -1.0, 1.0], vec![0.3, 1.7, -2.2]);
        for mode in [PMode::Normal, PMode::Exact] {
            assert_eq!(
                sensitivity_bound(&s, 1.0, mode).unwrap(),
                randomization_pvalue(&s, mode).unwrap()
            );
        }
    }
}
