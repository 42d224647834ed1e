#![allow(dead_code)]

use multimatch::balance::{BalanceConstraint, BalanceSpec};
use multimatch::data::{load_dataset_from_readers, CovariateKind, CovariateSchema, Dataset, Level};
use multimatch::ip::{IntegerProgram, LinearConstraint, Relation};
use rand::Rng;

/// Exhaustive optimum over `{0,1}ⁿ`, walking a Gray code so each step
/// updates row activities for a single flipped variable.
pub fn brute_force(program: &IntegerProgram) -> Option<(f64, Vec<f64>)> {
    let n = program.n_vars();
    assert!(n <= 24);
    let rows = program.constraints();
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, c) in rows.iter().enumerate() {
        for &(j, a) in &c.terms {
            columns[j].push((i, a));
        }
    }
    let mut act = vec![0.0; rows.len()];
    let mut x = vec![0.0; n];
    let mut obj = 0.0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let feasible = |act: &[f64]| {
        rows.iter().zip(act).all(|(c, &a)| {
            let tol = 1e-9 * (1.0 + c.rhs.abs());
            match c.relation {
                Relation::Le => a <= c.rhs + tol,
                Relation::Ge => a >= c.rhs - tol,
                Relation::Eq => (a - c.rhs).abs() <= tol,
            }
        })
    };
    for step in 0u64..(1u64 << n) {
        if step > 0 {
            let j = step.trailing_zeros() as usize;
            let delta = if x[j] == 0.0 { 1.0 } else { -1.0 };
            x[j] += delta;
            obj += delta * program.objective()[j];
            for &(i, a) in &columns[j] {
                act[i] += delta * a;
            }
        }
        if feasible(&act) && best.as_ref().is_none_or(|(b, _)| obj > *b + 1e-9) {
            best = Some((obj, x.clone()));
        }
    }
    best.map(|(_, x)| (program.evaluate(&x), x))
}

/// Random binary program with integer coefficients. Right-hand sides are
/// usually built around a random point so most instances are feasible.
pub fn random_program(rng: &mut impl Rng, max_vars: usize, max_rows: usize) -> IntegerProgram {
    let n = rng.random_range(1..=max_vars);
    let m = rng.random_range(0..=max_rows);
    let halves = rng.random_bool(0.3);
    let objective = (0..n)
        .map(|_| {
            let c = rng.random_range(-3..=8) as f64;
            if halves {
                c / 2.0
            } else {
                c
            }
        })
        .collect();
    let mut p = IntegerProgram::new(objective);
    let anchor: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
    for _ in 0..m {
        let density = rng.random_range(0.2..0.9);
        let mut terms = Vec::new();
        for j in 0..n {
            if rng.random_bool(density) {
                let a = rng.random_range(-4..=6) as f64;
                if a != 0.0 {
                    terms.push((j, a));
                }
            }
        }
        let act: f64 = terms.iter().map(|&(j, a)| a * anchor[j]).sum();
        let roll = rng.random_range(0..10);
        let (relation, rhs) = match roll {
            0 => (Relation::Eq, act),
            1..=2 => (Relation::Ge, act - rng.random_range(0..=3) as f64),
            3 => (Relation::Le, rng.random_range(-3..=6) as f64),
            _ => (Relation::Le, act + rng.random_range(0..=3) as f64),
        };
        p.add_constraint(LinearConstraint::new(terms, relation, rhs));
    }
    p
}

#[derive(Debug, Clone)]
pub struct RawCluster {
    pub treated: bool,
    pub stratum: String,
    pub w: f64,
    /// `(x, g)` per unit, `g` indexing categories `A`, `B`.
    pub units: Vec<(f64, usize)>,
}

#[derive(Debug, Clone)]
pub struct RawInstance {
    pub clusters: Vec<RawCluster>,
    pub strata: bool,
}

pub fn schema() -> Vec<CovariateSchema> {
    vec![
        CovariateSchema::new("x", CovariateKind::Continuous, Level::Unit),
        CovariateSchema::nominal("g", Level::Unit, &["A", "B"]),
        CovariateSchema::new("w", CovariateKind::Continuous, Level::Cluster),
    ]
}

impl RawInstance {
    /// Between one and `max_t` treated and `max_c` control clusters of one
    /// to `max_n` units; covariates on small integer grids so ties occur.
    pub fn random(rng: &mut impl Rng, max_t: usize, max_c: usize, max_n: usize) -> Self {
        let kt = rng.random_range(1..=max_t);
        let kc = rng.random_range(1..=max_c);
        let strata = rng.random_bool(0.3);
        let clusters = (0..kt + kc)
            .map(|k| RawCluster {
                treated: k < kt,
                stratum: if strata && rng.random_bool(0.5) { "S2" } else { "S1" }.to_string(),
                w: f64::from(rng.random_range(0..10)),
                units: (0..rng.random_range(1..=max_n))
                    .map(|_| (f64::from(rng.random_range(0..7)), rng.random_range(0..2)))
                    .collect(),
            })
            .collect();
        Self { clusters, strata }
    }

    pub fn csv(&self) -> (String, String) {
        let mut units = String::from("unit_id,cluster_id,x,g\n");
        let mut clusters = if self.strata {
            String::from("cluster_id,treated,stratum,w\n")
        } else {
            String::from("cluster_id,treated,w\n")
        };
        for (k, c) in self.clusters.iter().enumerate() {
            if self.strata {
                clusters.push_str(&format!("K{k},{},{},{}\n", u8::from(c.treated), c.stratum, c.w));
            } else {
                clusters.push_str(&format!("K{k},{},{}\n", u8::from(c.treated), c.w));
            }
            for (i, &(x, g)) in c.units.iter().enumerate() {
                units.push_str(&format!("U{k}_{i},K{k},{x},{}\n", ["A", "B"][g]));
            }
        }
        (units, clusters)
    }

    pub fn dataset(&self) -> Dataset {
        let (u, c) = self.csv();
        load_dataset_from_readers(u.as_bytes(), c.as_bytes(), &schema()).expect("fixture loads")
    }

    /// Dataset unit index of unit `i` of cluster `k`.
    pub fn unit_index(&self, k: usize, i: usize) -> usize {
        self.clusters[..k].iter().map(|c| c.units.len()).sum::<usize>() + i
    }
}

/// Balance requirements drawn alongside a random instance.
#[derive(Debug, Clone)]
pub struct RawSpec {
    pub unit_mean_tol: f64,
    pub fine_slack: Option<u32>,
    /// Cluster mean tolerance on `w` and whether it is size-weighted.
    pub cluster_mean: Option<(f64, bool)>,
}

impl RawSpec {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            unit_mean_tol: [0.05, 0.2, 0.5][rng.random_range(0..3)],
            fine_slack: rng.random_bool(0.5).then(|| rng.random_range(0..2)),
            cluster_mean: rng
                .random_bool(0.4)
                .then(|| ([0.1, 0.3, 1.0][rng.random_range(0..3)], rng.random_bool(0.5))),
        }
    }

    pub fn spec(&self) -> BalanceSpec {
        let mut unit = vec![BalanceConstraint::mean("x", self.unit_mean_tol)];
        if let Some(s) = self.fine_slack {
            unit.push(BalanceConstraint::fine("g", s));
        }
        let cluster = self
            .cluster_mean
            .map(|(tol, weighted)| {
                let c = BalanceConstraint::mean("w", tol);
                if weighted {
                    c.weighted()
                } else {
                    c
                }
            })
            .into_iter()
            .collect();
        BalanceSpec { unit, cluster }
    }
}

pub fn pooled(t: &[f64], c: &[f64]) -> f64 {
    let var = |v: &[f64]| {
        if v.len() < 2 {
            return 0.0;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    ((var(t) + var(c)) / 2.0).sqrt()
}

/// Best `(pairs, distance)` in lexicographic order over every partial
/// injection of `left` into `right`, keeping only those `ok` accepts.
fn best_injection<T: Copy>(
    left: &[T],
    right: &[T],
    ok: &dyn Fn(&[(T, T)]) -> bool,
    score: &dyn Fn(&[(T, T)]) -> (usize, f64),
) -> (usize, f64) {
    fn rec<T: Copy>(
        i: usize,
        left: &[T],
        right: &[T],
        used: &mut Vec<bool>,
        cur: &mut Vec<(T, T)>,
        ok: &dyn Fn(&[(T, T)]) -> bool,
        score: &dyn Fn(&[(T, T)]) -> (usize, f64),
        best: &mut (usize, f64),
    ) {
        if i == left.len() {
            if ok(cur) {
                let s = score(cur);
                if s.0 > best.0 || (s.0 == best.0 && s.1 < best.1 - 1e-9) {
                    *best = s;
                }
            }
            return;
        }
        rec(i + 1, left, right, used, cur, ok, score, best);
        for j in 0..right.len() {
            if !used[j] {
                used[j] = true;
                cur.push((left[i], right[j]));
                rec(i + 1, left, right, used, cur, ok, score, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0.0);
    rec(0, left, right, &mut vec![false; right.len()], &mut Vec::new(), ok, score, &mut best);
    best
}

/// Exhaustive optimum of the full two-level problem: every cluster
/// assignment combined with every unit pairing inside it, ranked by pair
/// count and then total distance. Constraints are checked from the raw
/// values, independently of the library's constraint builders.
pub fn oracle_optimum(raw: &RawInstance, spec: &RawSpec, distance: &dyn Fn(usize, usize) -> f64) -> (usize, f64) {
    let xs = |treated: bool| -> Vec<f64> {
        raw.clusters
            .iter()
            .filter(|c| c.treated == treated)
            .flat_map(|c| c.units.iter().map(|u| u.0))
            .collect()
    };
    let sd_x = pooled(&xs(true), &xs(false));
    let ws = |treated: bool| -> Vec<f64> { raw.clusters.iter().filter(|c| c.treated == treated).map(|c| c.w).collect() };
    let sd_w = pooled(&ws(true), &ws(false));
    let treated: Vec<usize> = (0..raw.clusters.len()).filter(|&k| raw.clusters[k].treated).collect();
    let control: Vec<usize> = (0..raw.clusters.len()).filter(|&k| !raw.clusters[k].treated).collect();

    let mut per_pair = std::collections::HashMap::new();
    for &t in &treated {
        for &c in &control {
            let lu: Vec<(usize, usize)> = (0..raw.clusters[t].units.len()).map(|i| (t, i)).collect();
            let ru: Vec<(usize, usize)> = (0..raw.clusters[c].units.len()).map(|i| (c, i)).collect();
            let unit = |&(k, i): &(usize, usize)| raw.clusters[k].units[i];
            let ok = |pairs: &[((usize, usize), (usize, usize))]| {
                let diff: f64 = pairs.iter().map(|(a, b)| unit(a).0 - unit(b).0).sum();
                if diff.abs() > spec.unit_mean_tol * sd_x * pairs.len() as f64 + 1e-9 {
                    return false;
                }
                spec.fine_slack.is_none_or(|s| {
                    (0..2).all(|g| {
                        let d: i64 = pairs
                            .iter()
                            .map(|(a, b)| i64::from(unit(a).1 == g) - i64::from(unit(b).1 == g))
                            .sum();
                        d.unsigned_abs() <= u64::from(s)
                    })
                })
            };
            let score = |pairs: &[((usize, usize), (usize, usize))]| {
                let d = pairs
                    .iter()
                    .map(|&((k, i), (l, j))| distance(raw.unit_index(k, i), raw.unit_index(l, j)))
                    .sum();
                (pairs.len(), d)
            };
            per_pair.insert((t, c), best_injection(&lu, &ru, &ok, &score));
        }
    }
    let ok = |pairs: &[(usize, usize)]| {
        if pairs.iter().any(|&(t, c)| raw.clusters[t].stratum != raw.clusters[c].stratum) {
            return false;
        }
        spec.cluster_mean.is_none_or(|(tol, weighted)| {
            let weight =
                |t: usize, c: usize| if weighted { (raw.clusters[t].units.len() + raw.clusters[c].units.len()) as f64 } else { 1.0 };
            let diff: f64 = pairs.iter().map(|&(t, c)| weight(t, c) * (raw.clusters[t].w - raw.clusters[c].w)).sum();
            let total: f64 = pairs.iter().map(|&(t, c)| weight(t, c)).sum();
            diff.abs() <= tol * sd_w * total + 1e-9 * (1.0 + total)
        })
    };
    let score = |pairs: &[(usize, usize)]| {
        pairs.iter().fold((0, 0.0), |acc, p| {
            let (m, d) = per_pair[p];
            (acc.0 + m, acc.1 + d)
        })
    };
    best_injection(&treated, &control, &ok, &score)
}
