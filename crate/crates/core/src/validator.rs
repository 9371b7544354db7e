//! Route-level feasibility checks and objective evaluation.
//!
//! A [`Solution`] holds one node sequence per vehicle. Interior visits to the
//! depot (node 0) delimit trips; the vehicle reloads to full capacity there.
//! The representation makes flow conservation, subtour elimination, and trip
//! ordering hold by construction, so only the remaining constraints are
//! checked explicitly.

use serde::{Deserialize, Serialize};

use crate::instance::{Instance, Variant};

/// Relative slack on the per-trip capacity comparison, absorbing rounding
/// differences between summed and successively subtracted loads.
pub const CAPACITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Solution {
    pub routes: Vec<Vec<usize>>,
}

impl Solution {
    pub fn new(routes: Vec<Vec<usize>>) -> Self {
        Solution { routes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintId {
    VisitOnce,
    Capacity,
    Flow,
    Zone,
    RouteShape,
}

impl ConstraintId {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintId::VisitOnce => "visit-once",
            ConstraintId::Capacity => "capacity",
            ConstraintId::Flow => "flow",
            ConstraintId::Zone => "zone",
            ConstraintId::RouteShape => "route-shape",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintId,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn has(&self, id: ConstraintId) -> bool {
        self.violations.iter().any(|v| v.constraint == id)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("expected {expected} routes, got {got}")]
    RouteCount { expected: usize, got: usize },
    #[error("vehicle {vehicle} visits node {node}, but the instance has nodes 0..={max}")]
    NodeOutOfRange { vehicle: usize, node: usize, max: usize },
    #[error("solution is infeasible: {0}")]
    Infeasible(String),
}

fn check_structure(instance: &Instance, solution: &Solution) -> Result<(), ValidationError> {
    if solution.routes.len() != instance.m {
        return Err(ValidationError::RouteCount {
            expected: instance.m,
            got: solution.routes.len(),
        });
    }
    for (k, route) in solution.routes.iter().enumerate() {
        if let Some(&node) = route.iter().find(|&&v| v > instance.n) {
            return Err(ValidationError::NodeOutOfRange {
                vehicle: k,
                node,
                max: instance.n,
            });
        }
    }
    Ok(())
}

/// Checks every route-level constraint. Structural problems (wrong route
/// count, unknown nodes) are errors rather than violations.
pub fn validate(instance: &Instance, solution: &Solution) -> Result<ValidationReport, ValidationError> {
    check_structure(instance, solution)?;
    let mut violations = Vec::new();
    let mut push = |constraint, detail: String| violations.push(Violation { constraint, detail });

    let mut visits = vec![0usize; instance.n + 1];
    for (k, route) in solution.routes.iter().enumerate() {
        if route.is_empty() {
            continue;
        }
        if route[0] != 0 || route[route.len() - 1] != 0 {
            push(
                ConstraintId::RouteShape,
                format!("route of vehicle {k} must start and end at the depot"),
            );
        }
        for w in route.windows(2) {
            if w[0] == w[1] && w[0] != 0 {
                push(ConstraintId::Flow, format!("vehicle {k} has a self-loop at node {}", w[0]));
            }
        }
        let cap = instance.capacities[k];
        let mut load = 0.0;
        let mut trip = 0;
        for &node in route {
            if node == 0 {
                if load > cap * (1.0 + CAPACITY_TOLERANCE) {
                    push(
                        ConstraintId::Capacity,
                        format!("vehicle {k} trip {trip} carries {load} > {cap}"),
                    );
                }
                if load > 0.0 {
                    trip += 1;
                }
                load = 0.0;
                continue;
            }
            visits[node] += 1;
            load += instance.demand(node);
            if !instance.allowed(k, node) {
                push(ConstraintId::Zone, format!("vehicle {k} may not serve client {node}"));
            }
        }
        if load > cap * (1.0 + CAPACITY_TOLERANCE) {
            push(
                ConstraintId::Capacity,
                format!("vehicle {k} trip {trip} carries {load} > {cap}"),
            );
        }
    }
    for (node, &count) in visits.iter().enumerate().skip(1) {
        if count != 1 {
            push(
                ConstraintId::VisitOnce,
                format!("client {node} visited {count} times"),
            );
        }
    }
    Ok(ValidationReport {
        feasible: violations.is_empty(),
        violations,
    })
}

/// Total travel time of one route for vehicle `k`.
pub fn route_duration(instance: &Instance, k: usize, route: &[usize]) -> f64 {
    let length: f64 = route.windows(2).map(|w| instance.dist(w[0], w[1])).sum();
    length / instance.speeds[k]
}

/// Arc-wise value of one route: each arc `(i, j)` contributes
/// `alpha * p(i, k) - c(i, j) / s_k` under preferences and `-c(i, j) / s_k`
/// under zone constraints.
pub fn route_value(instance: &Instance, k: usize, route: &[usize]) -> f64 {
    let speed = instance.speeds[k];
    match instance.variant {
        Variant::Preferences => route
            .windows(2)
            .map(|w| instance.alpha * instance.profile(k, w[0]) - instance.dist(w[0], w[1]) / speed)
            .sum(),
        Variant::ZoneConstraints => -route
            .windows(2)
            .map(|w| instance.dist(w[0], w[1]) / speed)
            .sum::<f64>(),
    }
}

/// Objective of a solution without checking feasibility.
pub fn objective_unchecked(instance: &Instance, solution: &Solution) -> f64 {
    solution
        .routes
        .iter()
        .enumerate()
        .map(|(k, r)| route_value(instance, k, r))
        .sum()
}

/// Objective (to be maximized) of a feasible solution.
pub fn objective(instance: &Instance, solution: &Solution) -> Result<f64, ValidationError> {
    let report = validate(instance, solution)?;
    if !report.feasible {
        let detail = report
            .violations
            .iter()
            .map(|v| format!("{}: {}", v.constraint.as_str(), v.detail))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(ValidationError::Infeasible(detail));
    }
    Ok(objective_unchecked(instance, solution))
}

/// Duration and preference totals of a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    /// Sum of `c_ij / s_k` over all arcs.
    pub cost: f64,
    /// Sum of `p_ik` over served clients (0 under zone constraints).
    pub pref: f64,
}

impl Breakdown {
    pub fn reward(&self, instance: &Instance) -> f64 {
        match instance.variant {
            Variant::Preferences => instance.alpha * self.pref - self.cost,
            Variant::ZoneConstraints => -self.cost,
        }
    }
}

pub fn breakdown(instance: &Instance, solution: &Solution) -> Breakdown {
    let mut cost = 0.0;
    let mut pref = 0.0;
    for (k, route) in solution.routes.iter().enumerate() {
        cost += route_duration(instance, k, route);
        if instance.variant == Variant::Preferences {
            pref += route.iter().filter(|&&v| v != 0).map(|&v| instance.profile(k, v)).sum::<f64>();
        }
    }
    Breakdown { cost, pref }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::DistKind;

    pub(crate) fn tiny(variant: Variant, alpha: f64, speed: f64) -> Instance {
        Instance {
            id: "tiny".into(),
            n: 2,
            m: 1,
            depot: [0.0, 0.0],
            clients: vec![[0.3, 0.4], [0.6, 0.8]],
            demands: vec![1.0, 1.0],
            capacities: vec![10.0],
            speeds: vec![speed],
            profiles: vec![vec![0.5, 1.0]],
            variant,
            alpha,
            dist_kind: if variant == Variant::Preferences {
                DistKind::Random
            } else {
                DistKind::Zone
            },
            seed: 0,
        }
    }

    #[test]
    fn simple_route_is_feasible() {
        let inst = tiny(Variant::Preferences, 0.0, 1.0);
        let r = validate(&inst, &Solution::new(vec![vec![0, 1, 2, 0]])).unwrap();
        assert!(r.feasible, "{:?}", r.violations);
    }

    #[test]
    fn double_visit_is_flagged() {
        let mut inst = tiny(Variant::Preferences, 0.0, 1.0);
        inst.m = 2;
        inst.capacities.push(10.0);
        inst.speeds.push(1.0);
        inst.profiles.push(vec![0.0, 0.0]);
        let r = validate(&inst, &Solution::new(vec![vec![0, 1, 2, 0], vec![0, 1, 0]])).unwrap();
        assert!(!r.feasible);
        assert!(r.has(ConstraintId::VisitOnce));
    }

    #[test]
    fn missing_client_is_flagged() {
        let inst = tiny(Variant::Preferences, 0.0, 1.0);
        let r = validate(&inst, &Solution::new(vec![vec![0, 1, 0]])).unwrap();
        assert!(r.has(ConstraintId::VisitOnce));
    }

    #[test]
    fn zone_violation_is_flagged() {
        let mut inst = tiny(Variant::ZoneConstraints, 0.0, 1.0);
        inst.profiles = vec![vec![0.0, 1.0]];
        let r = validate(&inst, &Solution::new(vec![vec![0, 1, 2, 0]])).unwrap();
        assert!(r.has(ConstraintId::Zone));
    }

    #[test]
    fn capacity_is_per_trip() {
        let mut inst = tiny(Variant::Preferences, 0.0, 1.0);
        inst.demands = vec![6.0, 6.0];
        let one_trip = validate(&inst, &Solution::new(vec![vec![0, 1, 2, 0]])).unwrap();
        assert!(one_trip.has(ConstraintId::Capacity));
        let two_trips = validate(&inst, &Solution::new(vec![vec![0, 1, 0, 2, 0]])).unwrap();
        assert!(two_trips.feasible);
    }

    #[test]
    fn shape_and_self_loops() {
        let inst = tiny(Variant::Preferences, 0.0, 1.0);
        let r = validate(&inst, &Solution::new(vec![vec![1, 2, 0]])).unwrap();
        assert!(r.has(ConstraintId::RouteShape));
        let r = validate(&inst, &Solution::new(vec![vec![0, 1, 1, 2, 0]])).unwrap();
        assert!(r.has(ConstraintId::Flow));
        // idle depot steps are legal
        let r = validate(&inst, &Solution::new(vec![vec![0, 0, 1, 2, 0, 0]])).unwrap();
        assert!(r.feasible);
    }

    #[test]
    fn structural_errors() {
        let inst = tiny(Variant::Preferences, 0.0, 1.0);
        assert!(matches!(
            validate(&inst, &Solution::new(vec![vec![0, 3, 0]])),
            Err(ValidationError::NodeOutOfRange { node: 3, .. })
        ));
        assert!(matches!(
            validate(&inst, &Solution::new(vec![])),
            Err(ValidationError::RouteCount { .. })
        ));
    }

    #[test]
    fn objective_examples() {
        let mut inst = tiny(Variant::Preferences, 0.0, 1.0);
        inst.n = 1;
        inst.clients.truncate(1);
        inst.demands.truncate(1);
        inst.profiles[0].truncate(1);
        let sol = Solution::new(vec![vec![0, 1, 0]]);
        assert!((objective(&inst, &sol).unwrap() + 1.0).abs() < 1e-15);
        inst.speeds[0] = 2.0;
        assert!((objective(&inst, &sol).unwrap() + 0.5).abs() < 1e-15);
        inst.speeds[0] = 1.0;
        inst.alpha = 0.2;
        assert!((objective(&inst, &sol).unwrap() + 0.9).abs() < 1e-15);
    }

    #[test]
    fn infeasible_objective_is_an_error() {
        let inst = tiny(Variant::Preferences, 0.0, 1.0);
        assert!(matches!(
            objective(&inst, &Solution::new(vec![vec![0, 1, 0]])),
            Err(ValidationError::Infeasible(_))
        ));
    }

    #[test]
    fn durations() {
        let inst = tiny(Variant::Preferences, 0.0, 1.0);
        assert_eq!(route_duration(&inst, 0, &[0, 0]), 0.0);
        assert_eq!(route_duration(&inst, 0, &[]), 0.0);
        let mut half = inst.clone();
        half.clients[0] = [0.3, 0.4];
        half.depot = [0.0, 0.0];
        // dist(0, 1) = 0.5
        half.clients[0] = [0.5, 0.0];
        assert!((route_duration(&half, 0, &[0, 1, 0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn breakdown_matches_objective() {
        let inst = tiny(Variant::Preferences, 0.15, 0.7);
        let sol = Solution::new(vec![vec![0, 2, 1, 0]]);
        let b = breakdown(&inst, &sol);
        assert!((b.reward(&inst) - objective(&inst, &sol).unwrap()).abs() < 1e-12);
        assert!((b.pref - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_alpha_matches_zone_objective() {
        let p = tiny(Variant::Preferences, 0.0, 0.8);
        let mut z = p.clone();
        z.variant = Variant::ZoneConstraints;
        z.profiles = vec![vec![1.0, 1.0]];
        let sol = Solution::new(vec![vec![0, 1, 0, 2, 0]]);
        assert_eq!(objective(&p, &sol).unwrap(), objective(&z, &sol).unwrap());
    }
}
