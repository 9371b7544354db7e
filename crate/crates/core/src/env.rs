//! The routing MDP with parallel construction.
//!
//! At every step each vehicle proposes one target node. Proposals are made
//! conflict-free with [`resolve_conflicts`] and applied together by
//! [`step`]. The only nonzero reward is the terminal one, which is the
//! validator objective of the finished routes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::instance::Instance;
use crate::validator::{self, Solution};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("episode exceeded its step budget of {budget}")]
    Runaway { budget: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Remaining capacity on the current trip.
    pub remaining: f64,
    /// Travel time accumulated so far.
    pub elapsed: f64,
    pub current: usize,
    pub route: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub vehicles: Vec<VehicleState>,
    /// Remaining demand per node, index 0 being the depot (always 0).
    pub demands: Vec<f64>,
    pub step: usize,
    pub done: bool,
}

impl State {
    pub fn unserved(&self) -> impl Iterator<Item = usize> + '_ {
        self.demands
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &d)| d > 0.0)
            .map(|(i, _)| i)
    }

    pub fn all_served(&self) -> bool {
        self.demands.iter().all(|&d| d == 0.0)
    }

    pub fn positions(&self) -> Vec<usize> {
        self.vehicles.iter().map(|v| v.current).collect()
    }
}

/// Per-vehicle target nodes.
pub type JointAction = Vec<usize>;

/// `m x (n + 1)` feasibility matrix; `true` = allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub m: usize,
    pub width: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    #[inline]
    pub fn get(&self, k: usize, node: usize) -> bool {
        self.cells[k * self.width + node]
    }

    pub fn row(&self, k: usize) -> &[bool] {
        &self.cells[k * self.width..(k + 1) * self.width]
    }

    pub fn feasible_nodes(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(k).iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

/// Upper bound on the number of steps of an episode.
pub fn step_budget(instance: &Instance) -> usize {
    2 * (instance.n + 2 * instance.m) + 4
}

pub fn reset(instance: &Instance) -> State {
    let vehicles = instance
        .capacities
        .iter()
        .map(|&q| VehicleState {
            remaining: q,
            elapsed: 0.0,
            current: 0,
            route: vec![0],
        })
        .collect();
    let demands = (0..=instance.n).map(|i| instance.demand(i)).collect();
    let mut state = State {
        vehicles,
        demands,
        step: 0,
        done: false,
    };
    state.done = state.all_served();
    state
}

#[inline]
fn client_feasible(instance: &Instance, state: &State, k: usize, j: usize) -> bool {
    let d = state.demands[j];
    d > 0.0 && d <= state.vehicles[k].remaining && instance.allowed(k, j)
}

/// Feasible targets for every vehicle.
///
/// A client is feasible when it still has demand, fits in the remaining
/// capacity, and is permitted for the vehicle. The depot is feasible for a
/// vehicle away from it (return and reload) and for a vehicle at the depot
/// that may idle there. Idling is refused to exactly one vehicle: when every
/// vehicle is at the depot, the one returned by [`designated_vehicle`] must
/// leave. Every other step has at least one vehicle away from the depot, and
/// such a vehicle can only move, so every step makes progress.
pub fn feasible_mask(instance: &Instance, state: &State) -> Result<Mask, EnvError> {
    if state.done {
        return Err(EnvError::Contract("feasible_mask called on a finished episode".into()));
    }
    let width = instance.n + 1;
    let mut cells = vec![false; instance.m * width];
    let mut has_work = vec![false; instance.m];
    for k in 0..instance.m {
        let row = &mut cells[k * width..(k + 1) * width];
        for (j, cell) in row.iter_mut().enumerate().skip(1) {
            *cell = client_feasible(instance, state, k, j);
            has_work[k] |= *cell;
        }
        row[0] = true;
    }
    if state.vehicles.iter().all(|v| v.current == 0) {
        if let Some(k) = designated_vehicle(instance, &has_work) {
            cells[k * width] = false;
        }
    }
    Ok(Mask {
        m: instance.m,
        width,
        cells,
    })
}

/// The vehicle that may not idle when the whole fleet is at the depot: the
/// fastest one with a feasible client, lowest index on ties.
pub fn designated_vehicle(instance: &Instance, has_work: &[bool]) -> Option<usize> {
    (0..instance.m)
        .filter(|&k| has_work[k])
        .fold(None, |best: Option<usize>, k| match best {
            Some(b) if instance.speeds[b] >= instance.speeds[k] => Some(b),
            _ => Some(k),
        })
}

/// Makes a joint action conflict-free: a client claimed by several vehicles
/// goes to the one with the highest selection probability (lowest index on
/// ties); the others stay where they are. The depot is never exclusive.
pub fn resolve_conflicts(proposed: &[usize], probs: &[f64], current: &[usize]) -> JointAction {
    let mut resolved = proposed.to_vec();
    for k in 0..proposed.len() {
        let node = proposed[k];
        if node == 0 {
            continue;
        }
        let winner = (0..proposed.len())
            .filter(|&o| proposed[o] == node)
            .fold(None::<usize>, |best, o| match best {
                Some(b) if probs[b] >= probs[o] => Some(b),
                _ => Some(o),
            })
            .unwrap();
        if winner != k {
            resolved[k] = current[k];
        }
    }
    resolved
}

/// Applies a conflict-free joint action in place.
pub fn step_mut(instance: &Instance, state: &mut State, action: &[usize]) -> Result<(), EnvError> {
    if state.done {
        return Err(EnvError::Contract("step called on a finished episode".into()));
    }
    if action.len() != instance.m {
        return Err(EnvError::Contract(format!(
            "expected {} actions, got {}",
            instance.m,
            action.len()
        )));
    }
    let mask = feasible_mask(instance, state)?;
    for (k, &a) in action.iter().enumerate() {
        if a > instance.n {
            return Err(EnvError::Contract(format!("vehicle {k} targets unknown node {a}")));
        }
        if a != state.vehicles[k].current && !mask.get(k, a) {
            return Err(EnvError::Contract(format!("vehicle {k} targets infeasible node {a}")));
        }
        if a != 0 && action[..k].contains(&a) {
            return Err(EnvError::Contract(format!("node {a} claimed by several vehicles")));
        }
    }
    for (k, &a) in action.iter().enumerate() {
        let cur = state.vehicles[k].current;
        if a == cur {
            continue;
        }
        let travel = instance.dist(cur, a) / instance.speeds[k];
        let v = &mut state.vehicles[k];
        v.elapsed += travel;
        v.current = a;
        v.route.push(a);
        if a == 0 {
            v.remaining = instance.capacities[k];
        } else {
            v.remaining -= state.demands[a];
            state.demands[a] = 0.0;
        }
    }
    state.step += 1;
    state.done = state.all_served() && state.vehicles.iter().all(|v| v.current == 0);
    let budget = step_budget(instance);
    if state.step > budget {
        return Err(EnvError::Runaway { budget });
    }
    Ok(())
}

pub fn step(instance: &Instance, state: &State, action: &[usize]) -> Result<State, EnvError> {
    let mut next = state.clone();
    step_mut(instance, &mut next, action)?;
    Ok(next)
}

/// Finished routes; a trailing depot is appended where missing.
pub fn solution_from(state: &State) -> Solution {
    let routes = state
        .vehicles
        .iter()
        .map(|v| {
            let mut r = v.route.clone();
            if r.last() != Some(&0) {
                r.push(0);
            }
            r
        })
        .collect();
    Solution { routes }
}

/// Terminal reward: the validator objective of the finished routes.
pub fn terminal_reward(instance: &Instance, state: &State) -> Result<f64, EnvError> {
    if !state.done {
        return Err(EnvError::Contract("terminal reward requested before the episode ended".into()));
    }
    debug_assert!(state.vehicles.iter().all(|v| v.current == 0));
    validator::objective(instance, &solution_from(state))
        .map_err(|e| EnvError::Contract(format!("finished routes are invalid: {e}")))
}

/// One record of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub positions: Vec<usize>,
    pub remaining: Vec<f64>,
    pub elapsed: Vec<f64>,
    pub unserved: Vec<usize>,
    pub mask: Vec<Vec<bool>>,
    pub proposed: Vec<usize>,
    pub action: Vec<usize>,
}

impl TrajectoryRecord {
    pub fn capture(state: &State, mask: &Mask, proposed: &[usize], action: &[usize]) -> Self {
        TrajectoryRecord {
            step: state.step,
            positions: state.positions(),
            remaining: state.vehicles.iter().map(|v| v.remaining).collect(),
            elapsed: state.vehicles.iter().map(|v| v.elapsed).collect(),
            unserved: state.unserved().collect(),
            mask: (0..mask.m).map(|k| mask.row(k).to_vec()).collect(),
            proposed: proposed.to_vec(),
            action: action.to_vec(),
        }
    }
}

/// Writes one JSON record per line.
pub fn write_trajectory<W: Write>(mut out: W, records: &[TrajectoryRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
