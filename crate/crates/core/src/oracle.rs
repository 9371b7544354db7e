//! Reference solvers for small instances: exhaustive search, a myopic greedy
//! constructor, and a uniformly random policy.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, EnvError};
use crate::instance::{Instance, Variant};
use crate::validator::{self, Solution};

pub const EXACT_MAX_CLIENTS: usize = 8;
pub const EXACT_MAX_VEHICLES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub solution: Solution,
    pub value: f64,
    pub nodes_explored: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("exact search refused: n = {n}, m = {m} exceeds the limit of n <= {EXACT_MAX_CLIENTS}, m <= {EXACT_MAX_VEHICLES}")]
    TooLarge { n: usize, m: usize },
    #[error("instance has no feasible solution")]
    Infeasible,
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Value of traversing arc `(from, to)` with vehicle `k`.
#[inline]
fn arc_value(instance: &Instance, k: usize, from: usize, to: usize) -> f64 {
    let travel = instance.dist(from, to) / instance.speeds[k];
    match instance.variant {
        Variant::Preferences => instance.alpha * instance.profile(k, from) - travel,
        Variant::ZoneConstraints => -travel,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Key {
    served: u32,
    vehicle: u8,
    pos: u8,
    load_bits: u64,
}

#[derive(Debug, Clone, Copy)]
enum Move {
    Visit(usize),
    Reload,
    NextVehicle,
    Stop,
}

struct Search<'a> {
    instance: &'a Instance,
    memo: HashMap<Key, (f64, Move)>,
    full: u32,
}

impl Search<'_> {
    /// Best achievable future value from a partial construction in which
    /// vehicles before `vehicle` are finished.
    fn best(&mut self, served: u32, vehicle: usize, pos: usize, remaining: f64) -> f64 {
        let key = Key {
            served,
            vehicle: vehicle as u8,
            pos: pos as u8,
            load_bits: remaining.to_bits(),
        };
        if let Some(&(v, _)) = self.memo.get(&key) {
            return v;
        }
        let inst = self.instance;
        let mut best = f64::NEG_INFINITY;
        let mut choice = Move::Stop;
        for j in 1..=inst.n {
            if served & (1 << (j - 1)) != 0 || !inst.allowed(vehicle, j) {
                continue;
            }
            let d = inst.demand(j);
            if d > remaining {
                continue;
            }
            let v = arc_value(inst, vehicle, pos, j) + self.best(served | (1 << (j - 1)), vehicle, j, remaining - d);
            if v > best {
                best = v;
                choice = Move::Visit(j);
            }
        }
        if pos != 0 {
            let v = arc_value(inst, vehicle, pos, 0) + self.best(served, vehicle, 0, inst.capacities[vehicle]);
            if v > best {
                best = v;
                choice = Move::Reload;
            }
        } else if vehicle + 1 < inst.m {
            let v = self.best(served, vehicle + 1, 0, inst.capacities[vehicle + 1]);
            if v > best {
                best = v;
                choice = Move::NextVehicle;
            }
        } else if served == self.full && 0.0 > best {
            best = 0.0;
            choice = Move::Stop;
        }
        self.memo.insert(key, (best, choice));
        best
    }
}

/// Exhaustive search over all multi-trip solutions.
///
/// Routes are built one vehicle at a time in index order, which enumerates
/// every set of final routes since the objective does not depend on the
/// interleaving of vehicles. States are memoized on (served set, vehicle,
/// position, exact remaining load).
pub fn exact_solve(instance: &Instance) -> Result<OracleResult, OracleError> {
    if instance.n > EXACT_MAX_CLIENTS || instance.m > EXACT_MAX_VEHICLES {
        return Err(OracleError::TooLarge {
            n: instance.n,
            m: instance.m,
        });
    }
    let mut search = Search {
        instance,
        memo: HashMap::new(),
        full: ((1u64 << instance.n) - 1) as u32,
    };
    let value = search.best(0, 0, 0, instance.capacities[0]);
    if !value.is_finite() {
        return Err(OracleError::Infeasible);
    }

    let mut routes = vec![vec![0usize]; instance.m];
    let (mut served, mut vehicle, mut pos, mut remaining) = (0u32, 0usize, 0usize, instance.capacities[0]);
    loop {
        let key = Key {
            served,
            vehicle: vehicle as u8,
            pos: pos as u8,
            load_bits: remaining.to_bits(),
        };
        match search.memo[&key].1 {
            Move::Visit(j) => {
                routes[vehicle].push(j);
                served |= 1 << (j - 1);
                remaining -= instance.demand(j);
                pos = j;
            }
            Move::Reload => {
                routes[vehicle].push(0);
                pos = 0;
                remaining = instance.capacities[vehicle];
            }
            Move::NextVehicle => {
                vehicle += 1;
                remaining = instance.capacities[vehicle];
            }
            Move::Stop => break,
        }
    }
    for r in routes.iter_mut() {
        if r.len() == 1 {
            r.clear();
        }
    }
    let solution = Solution { routes };
    let value = validator::objective(instance, &solution).map_err(|_| OracleError::Infeasible)?;
    Ok(OracleResult {
        solution,
        value,
        nodes_explored: search.memo.len(),
    })
}

/// Myopic constructor. At every iteration the (vehicle, client) pair with the
/// best marginal `alpha * p - travel / speed` is appended; a vehicle whose load
/// does not fit reaches the client through a depot reload, paying for the detour.
pub fn greedy_solve(instance: &Instance) -> OracleResult {
    let m = instance.m;
    let mut pos = vec![0usize; m];
    let mut remaining = instance.capacities.clone();
    let mut routes = vec![vec![0usize]; m];
    let mut unserved: Vec<bool> = (0..=instance.n).map(|i| i > 0).collect();
    let mut explored = 0usize;

    loop {
        let mut best: Option<(f64, usize, usize, bool)> = None;
        for k in 0..m {
            for j in 1..=instance.n {
                if !unserved[j] || !instance.allowed(k, j) || instance.demand(j) > instance.capacities[k] {
                    continue;
                }
                explored += 1;
                let (gain, reload) = if instance.demand(j) <= remaining[k] {
                    (arc_value(instance, k, pos[k], j), false)
                } else {
                    (
                        arc_value(instance, k, pos[k], 0) + arc_value(instance, k, 0, j),
                        true,
                    )
                };
                if best.map_or(true, |(g, ..)| gain > g) {
                    best = Some((gain, k, j, reload));
                }
            }
        }
        let Some((_, k, j, reload)) = best else { break };
        if reload {
            routes[k].push(0);
            remaining[k] = instance.capacities[k];
        }
        routes[k].push(j);
        remaining[k] -= instance.demand(j);
        pos[k] = j;
        unserved[j] = false;
    }
    for r in routes.iter_mut() {
        if r.len() == 1 {
            r.clear();
        } else if r.last() != Some(&0) {
            r.push(0);
        }
    }
    let solution = Solution { routes };
    let value = validator::objective_unchecked(instance, &solution);
    OracleResult {
        solution,
        value,
        nodes_explored: explored,
    }
}

/// Environment rollout choosing uniformly among each vehicle's feasible nodes.
pub fn random_rollout<R: Rng + ?Sized>(instance: &Instance, rng: &mut R) -> Result<OracleResult, OracleError> {
    let mut state = env::reset(instance);
    let mut steps = 0;
    while !state.done {
        let mask = env::feasible_mask(instance, &state)?;
        let mut proposed = Vec::with_capacity(instance.m);
        let mut probs = Vec::with_capacity(instance.m);
        for k in 0..instance.m {
            let options: Vec<usize> = mask.feasible_nodes(k).collect();
            let pick = options[rng.gen_range(0..options.len())];
            proposed.push(pick);
            probs.push(1.0 / options.len() as f64);
        }
        let action = env::resolve_conflicts(&proposed, &probs, &state.positions());
        env::step_mut(instance, &mut state, &action)?;
        steps += 1;
    }
    let value = env::terminal_reward(instance, &state)?;
    Ok(OracleResult {
        solution: env::solution_from(&state),
        value,
        nodes_explored: steps,
    })
}
