//! Side-by-side evaluation of the policy and the reference solvers.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camp::{self, CampError, CampParams, DecodeMode};
use crate::instance::{DistKind, Instance, Variant};
use crate::oracle::{self, OracleError, EXACT_MAX_CLIENTS, EXACT_MAX_VEHICLES};
use crate::trainer::derive_seed;
use crate::validator::{self, Solution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    CampGreedy,
    CampSample,
    Greedy,
    Random,
    Exact,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::CampGreedy,
        Method::CampSample,
        Method::Greedy,
        Method::Random,
        Method::Exact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CampGreedy => "camp-greedy",
            Method::CampSample => "camp-sample",
            Method::Greedy => "greedy",
            Method::Random => "random",
            Method::Exact => "exact",
        }
    }

    pub fn needs_policy(self) -> bool {
        matches!(self, Method::CampGreedy | Method::CampSample)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub instance_id: String,
    pub n: usize,
    pub m: usize,
    pub dist_kind: DistKind,
    pub variant: Variant,
    pub alpha: f64,
    pub method: Method,
    pub samples: usize,
    pub cost: f64,
    pub pref: f64,
    pub reward: f64,
    /// Percent shortfall against the exact optimum, when it was computed.
    pub gap_vs_exact: Option<f64>,
    /// Left empty unless timing was requested.
    pub time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    /// Overrides the instance weight; `None` keeps each instance's own.
    pub alphas: Option<Vec<f64>>,
    /// Sampled rollouts for `camp-sample`, on top of the greedy one.
    pub samples: usize,
    pub seed: u64,
    pub timed: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: Method::ALL.to_vec(),
            alphas: None,
            samples: 128,
            seed: 0,
            timed: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("methods {0} need a policy checkpoint")]
    MissingPolicy(String),
    #[error("instance {id}: {source}")]
    Policy { id: String, source: CampError },
    #[error("instance {id}: {source}")]
    Oracle { id: String, source: OracleError },
}

/// `(reference - value) / |reference| * 100`; zero when both vanish.
pub fn gap_percent(reference: f64, value: f64) -> f64 {
    if reference == 0.0 {
        if value == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (reference - value) / reference.abs() * 100.0
    }
}

pub fn exact_applicable(instance: &Instance) -> bool {
    instance.n <= EXACT_MAX_CLIENTS && instance.m <= EXACT_MAX_VEHICLES
}

fn solve(
    method: Method,
    inst: &Instance,
    policy: Option<&CampParams>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Option<(Solution, usize)>, EvalError> {
    let id = || inst.id.clone();
    let policy_err = |source| EvalError::Policy { id: id(), source };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Some(match method {
        Method::CampGreedy => {
            let p = policy.ok_or_else(|| EvalError::MissingPolicy(method.to_string()))?;
            let r = camp::rollout(inst, p, DecodeMode::Greedy, &mut rng).map_err(policy_err)?;
            (r.solution, 1)
        }
        Method::CampSample => {
            let p = policy.ok_or_else(|| EvalError::MissingPolicy(method.to_string()))?;
            let mut best = camp::rollout(inst, p, DecodeMode::Greedy, &mut rng).map_err(policy_err)?;
            for _ in 0..cfg.samples {
                let r = camp::rollout(inst, p, DecodeMode::Sample, &mut rng).map_err(policy_err)?;
                if r.reward > best.reward {
                    best = r;
                }
            }
            (best.solution, cfg.samples)
        }
        Method::Greedy => (oracle::greedy_solve(inst).solution, 1),
        Method::Random => {
            let r = oracle::random_rollout(inst, &mut rng).map_err(|source| EvalError::Oracle { id: id(), source })?;
            (r.solution, 1)
        }
        Method::Exact => {
            if !exact_applicable(inst) {
                return Ok(None);
            }
            let r = oracle::exact_solve(inst).map_err(|source| EvalError::Oracle { id: id(), source })?;
            (r.solution, 1)
        }
    }))
}

/// Evaluates every method on every instance and weight. Rows come back
/// sorted by instance id, method name and weight; gaps are filled in when
/// the exact method ran on the same instance and weight.
pub fn evaluate(instances: &[Instance], policy: Option<&CampParams>, cfg: &EvalConfig) -> Result<Vec<EvalRow>, EvalError> {
    if policy.is_none() {
        let missing: Vec<&str> = cfg.methods.iter().filter(|m| m.needs_policy()).map(|m| m.as_str()).collect();
        if !missing.is_empty() {
            return Err(EvalError::MissingPolicy(missing.join(", ")));
        }
    }
    let mut rows = Vec::new();
    for (ii, base) in instances.iter().enumerate() {
        let alphas = cfg.alphas.clone().unwrap_or_else(|| vec![base.alpha]);
        for (ai, &alpha) in alphas.iter().enumerate() {
            let mut inst = base.clone();
            inst.alpha = alpha;
            let mut group = Vec::new();
            for (mi, &method) in cfg.methods.iter().enumerate() {
                let seed = derive_seed(&[cfg.seed, ii as u64, ai as u64, mi as u64]);
                let start = Instant::now();
                let Some((solution, samples)) = solve(method, &inst, policy, cfg, seed)? else {
                    continue;
                };
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                let b = validator::breakdown(&inst, &solution);
                group.push(EvalRow {
                    instance_id: inst.id.clone(),
                    n: inst.n,
                    m: inst.m,
                    dist_kind: inst.dist_kind,
                    variant: inst.variant,
                    alpha,
                    method,
                    samples,
                    cost: b.cost,
                    pref: b.pref,
                    reward: b.reward(&inst),
                    gap_vs_exact: None,
                    time_ms: cfg.timed.then_some(elapsed),
                });
            }
            if let Some(reference) = group.iter().find(|r| r.method == Method::Exact).map(|r| r.reward) {
                for r in &mut group {
                    r.gap_vs_exact = Some(gap_percent(reference, r.reward));
                }
            }
            rows.extend(group);
        }
    }
    rows.sort_by(|a, b| {
        a.instance_id
            .cmp(&b.instance_id)
            .then(a.method.as_str().cmp(b.method.as_str()))
            .then(a.alpha.total_cmp(&b.alpha))
    });
    Ok(rows)
}

/// Mean cost and preference per weight and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub alpha: f64,
    pub method: Method,
    pub mean_cost: f64,
    pub mean_pref: f64,
    pub mean_reward: f64,
    pub count: usize,
}

pub fn pareto(rows: &[EvalRow]) -> Vec<ParetoPoint> {
    let mut keys: Vec<(f64, Method)> = rows.iter().map(|r| (r.alpha, r.method)).collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.as_str().cmp(b.1.as_str())));
    keys.dedup();
    keys.into_iter()
        .map(|(alpha, method)| {
            let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.alpha == alpha && r.method == method).collect();
            let k = sel.len() as f64;
            ParetoPoint {
                alpha,
                method,
                mean_cost: sel.iter().map(|r| r.cost).sum::<f64>() / k,
                mean_pref: sel.iter().map(|r| r.pref).sum::<f64>() / k,
                mean_reward: sel.iter().map(|r| r.reward).sum::<f64>() / k,
                count: sel.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camp::{init_params, CampConfig};
    use crate::instance::{generate, GenConfig};

    fn instances(k: usize, n: usize) -> Vec<Instance> {
        (0..k)
            .map(|s| generate(&GenConfig::new(n, 2, DistKind::ALL[s % 4], s as u64)).unwrap())
            .collect()
    }

    #[test]
    fn cartesian_row_count() {
        let p = init_params(&CampConfig { d_h: 8, heads: 2, ffn_width: 8, layers: 1, ..CampConfig::default() }, 0).unwrap();
        let cfg = EvalConfig {
            methods: vec![Method::CampGreedy, Method::Greedy, Method::Random],
            alphas: Some(vec![0.0, 0.1, 0.2]),
            samples: 2,
            ..EvalConfig::default()
        };
        let rows = evaluate(&instances(10, 5), Some(&p), &cfg).unwrap();
        assert_eq!(rows.len(), 90);
        assert!(rows.iter().all(|r| r.gap_vs_exact.is_none() && r.time_ms.is_none()));
        let pts = pareto(&rows);
        assert_eq!(pts.len(), 9);
        assert!(pts.iter().all(|p| p.count == 10));
    }

    #[test]
    fn sampling_dominates_greedy_and_gaps_are_nonnegative() {
        let p = init_params(&CampConfig { d_h: 8, heads: 2, ffn_width: 8, layers: 1, ..CampConfig::default() }, 1).unwrap();
        let cfg = EvalConfig {
            samples: 8,
            ..EvalConfig::default()
        };
        let rows = evaluate(&instances(6, 5), Some(&p), &cfg).unwrap();
        for chunk in rows.chunks(5) {
            let get = |m: Method| chunk.iter().find(|r| r.method == m).unwrap();
            assert!(get(Method::CampSample).reward >= get(Method::CampGreedy).reward);
            assert_eq!(get(Method::Exact).gap_vs_exact, Some(0.0));
            for r in chunk {
                assert!(r.gap_vs_exact.unwrap() >= -1e-9, "{r:?}");
                let recomputed = match r.variant {
                    Variant::Preferences => r.alpha * r.pref - r.cost,
                    Variant::ZoneConstraints => -r.cost,
                };
                assert!((recomputed - r.reward).abs() < 1e-9);
            }
        }
        let again = evaluate(&instances(6, 5), Some(&p), &cfg).unwrap();
        assert_eq!(rows, again);
    }

    #[test]
    fn policy_is_required_for_policy_methods() {
        let err = evaluate(&instances(1, 4), None, &EvalConfig::default());
        assert!(matches!(err, Err(EvalError::MissingPolicy(_))));
        let cfg = EvalConfig {
            methods: vec![Method::Greedy],
            ..EvalConfig::default()
        };
        assert_eq!(evaluate(&instances(1, 4), None, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn gap_formula() {
        assert_eq!(gap_percent(-2.0, -3.0), 50.0);
        assert_eq!(gap_percent(-2.0, -2.0), 0.0);
        assert_eq!(gap_percent(0.0, 0.0), 0.0);
    }
}
