//! Problem instance description: test-bed geometry, keep-out zones, stage
//! cost, and the per-step constraint-violation indicator.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    allocate_thrusters_with_cap, propagate, ControlImpulse, FreeFlyerState, ThrusterBank,
};

/// Axis-aligned rectangle, `min <= p <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Rect {
    pub fn new(min: Vector2<f64>, max: Vector2<f64>) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vector2<f64>, tol: f64) -> bool {
        p.x >= self.min.x - tol
            && p.x <= self.max.x + tol
            && p.y >= self.min.y - tol
            && p.y <= self.max.y + tol
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(&other.min, 0.0) && self.contains(&other.max, 0.0)
    }

    pub fn center(&self) -> Vector2<f64> {
        (self.min + self.max) * 0.5
    }

    /// Largest componentwise distance outside the rectangle (zero inside).
    pub fn violation(&self, p: &Vector2<f64>) -> f64 {
        let dx = (self.min.x - p.x).max(p.x - self.max.x).max(0.0);
        let dy = (self.min.y - p.y).max(p.y - self.max.y).max(0.0);
        dx.max(dy)
    }

    /// Euclidean distance from a point to the rectangle (zero inside).
    pub fn distance(&self, p: &Vector2<f64>) -> f64 {
        let dx = (self.min.x - p.x).max(p.x - self.max.x).max(0.0);
        let dy = (self.min.y - p.y).max(p.y - self.max.y).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }
}

/// Circular keep-out zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vector2<f64>,
    pub radius: f64,
}

/// Scene description shared by a family of problem instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub table: Rect,
    pub obstacles: Vec<Obstacle>,
    pub start_region: Rect,
    pub goal_region: Rect,
    pub bank: ThrusterBank,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !self.table.contains_rect(&self.start_region)
            || !self.table.contains_rect(&self.goal_region)
        {
            return Err(ScenarioError::InvalidScenario(
                "start/goal regions must lie inside the table".into(),
            ));
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) {
                return Err(ScenarioError::InvalidScenario(format!(
                    "obstacle {k} has non-positive radius"
                )));
            }
            if !self.table.contains(&o.center, 0.0) {
                return Err(ScenarioError::InvalidScenario(format!(
                    "obstacle {k} center lies outside the table"
                )));
            }
        }
        self.bank
            .validate()
            .map_err(|e| ScenarioError::InvalidScenario(e.to_string()))
    }

    /// Default desk-scale family: a 3.5 m x 2.5 m table with 0.5 m start and
    /// goal squares at opposite corners and four mid-table keep-out zones.
    pub fn default_family() -> Self {
        Scenario {
            table: Rect::new(Vector2::new(0.0, 0.0), Vector2::new(3.5, 2.5)),
            obstacles: default_obstacles(),
            start_region: Rect::new(Vector2::new(0.15, 0.15), Vector2::new(0.65, 0.65)),
            goal_region: Rect::new(Vector2::new(2.85, 1.85), Vector2::new(3.35, 2.35)),
            bank: ThrusterBank::default(),
        }
    }
}

/// Four keep-out zones spread across the middle of the default table.
pub fn default_obstacles() -> Vec<Obstacle> {
    vec![
        Obstacle {
            center: Vector2::new(1.2, 0.8),
            radius: 0.25,
        },
        Obstacle {
            center: Vector2::new(1.8, 1.6),
            radius: 0.3,
        },
        Obstacle {
            center: Vector2::new(2.4, 0.9),
            radius: 0.2,
        },
        Obstacle {
            center: Vector2::new(1.0, 1.9),
            radius: 0.22,
        },
    ]
}

/// A fully-specified optimal control problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpInstance {
    pub scenario: Scenario,
    pub x_start: FreeFlyerState,
    pub x_goal: FreeFlyerState,
    /// Horizon length [s]; `n_steps = t_final / dt` exactly.
    pub t_final: f64,
    pub n_steps: usize,
}

impl OcpInstance {
    /// Builds and validates an instance. `t_final` must be an integer
    /// multiple of the bank timestep with at least two steps, and both
    /// endpoints must sit inside the table clear of every keep-out zone.
    pub fn new(
        scenario: Scenario,
        x_start: FreeFlyerState,
        x_goal: FreeFlyerState,
        t_final: f64,
    ) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let dt = scenario.bank.dt;
        let steps = t_final / dt;
        let n_steps = steps.round() as usize;
        if n_steps < 2 || (steps - n_steps as f64).abs() > 1e-9 {
            return Err(ScenarioError::InvalidInstance(format!(
                "t_final {t_final} is not an integer multiple (>= 2) of dt {dt}"
            )));
        }
        for (name, x) in [("start", &x_start), ("goal", &x_goal)] {
            if !x.is_finite() {
                return Err(ScenarioError::InvalidInstance(format!(
                    "{name} state is not finite"
                )));
            }
            if !scenario.table.contains(&x.r, 0.0) {
                return Err(ScenarioError::InvalidInstance(format!(
                    "{name} position lies outside the table"
                )));
            }
            if gamma(x, &scenario.obstacles).iter().any(|&g| g < 0.0) {
                return Err(ScenarioError::InvalidInstance(format!(
                    "{name} position violates a keep-out zone"
                )));
            }
        }
        Ok(Self {
            scenario,
            x_start,
            x_goal,
            t_final,
            n_steps,
        })
    }

    pub fn dt(&self) -> f64 {
        self.scenario.bank.dt
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("trajectory lengths inconsistent: {states} states / {controls} controls for {n_steps} steps")]
    LengthMismatch {
        states: usize,
        controls: usize,
        n_steps: usize,
    },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

/// Keep-out clearances: component `m` is the signed distance of the position
/// to the boundary of obstacle `m` (positive outside).
pub fn gamma(x: &FreeFlyerState, obstacles: &[Obstacle]) -> Vec<f64> {
    obstacles
        .iter()
        .map(|o| (x.r - o.center).norm() - o.radius)
        .collect()
}

/// Control effort of one impulsive step: the L1 norm of the impulse. The
/// instantaneous reward is its negation.
pub fn stage_cost(u: &ControlImpulse) -> f64 {
    u.0.iter().map(|c| c.abs()).sum()
}

/// Per-step constraint check: true when the pair `(x, u)` violates the table
/// bounds, a keep-out zone, or the thruster actuation limits, each measured
/// with slack `tol`.
pub fn violation_indicator(
    x: &FreeFlyerState,
    u: &ControlImpulse,
    instance: &OcpInstance,
    tol: f64,
) -> bool {
    debug_assert!(tol >= 0.0);
    if instance.scenario.table.violation(&x.r) > tol {
        return true;
    }
    if gamma(x, &instance.scenario.obstacles)
        .iter()
        .any(|&g| g < -tol)
    {
        return true;
    }
    let bank = &instance.scenario.bank;
    allocate_thrusters_with_cap(u, x.psi, bank, bank.dv_max + tol).is_err()
}

/// Full-trajectory constraint report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Number of steps whose `(x, u)` pair violates a constraint.
    pub violation_count: usize,
    /// Smallest keep-out clearance over all checked steps (infinite when the
    /// scene has no obstacles).
    pub worst_clearance: f64,
    pub indicators: Vec<bool>,
    /// Largest componentwise defect of `x_{i+1} = propagate(x_i, u_i)`.
    pub max_dynamics_residual: f64,
    pub start_residual: f64,
    pub goal_residual: f64,
    pub dynamics_consistent: bool,
    pub endpoints_ok: bool,
}

impl FeasibilityReport {
    /// Clean means: no per-step violations, dynamics consistent, and both
    /// endpoint constraints met.
    pub fn passes(&self) -> bool {
        self.violation_count == 0 && self.dynamics_consistent && self.endpoints_ok
    }
}

const DYNAMICS_RESIDUAL_TOL: f64 = 1e-7;

/// Checks a candidate trajectory against every constraint of the instance:
/// per-step indicators over the `n_steps` control intervals, dynamic
/// consistency, and the endpoint constraints (within `tol`).
pub fn trajectory_feasible(
    states: &[FreeFlyerState],
    controls: &[ControlImpulse],
    instance: &OcpInstance,
    tol: f64,
) -> Result<FeasibilityReport, ScenarioError> {
    let n = instance.n_steps;
    if states.len() != n + 1 || controls.len() != n {
        return Err(ScenarioError::LengthMismatch {
            states: states.len(),
            controls: controls.len(),
            n_steps: n,
        });
    }
    let dt = instance.dt();
    let mut indicators = Vec::with_capacity(n);
    let mut worst_clearance = f64::INFINITY;
    let mut max_dyn: f64 = 0.0;
    for i in 0..n {
        indicators.push(violation_indicator(&states[i], &controls[i], instance, tol));
        for g in gamma(&states[i], &instance.scenario.obstacles) {
            worst_clearance = worst_clearance.min(g);
        }
        let predicted = propagate(&states[i], &controls[i], dt);
        max_dyn = max_dyn.max(predicted.max_abs_diff(&states[i + 1]));
    }
    let start_residual = states[0].max_abs_diff(&instance.x_start);
    let goal_residual = states[n].max_abs_diff(&instance.x_goal);
    Ok(FeasibilityReport {
        violation_count: indicators.iter().filter(|&&b| b).count(),
        worst_clearance,
        indicators,
        max_dynamics_residual: max_dyn,
        start_residual,
        goal_residual,
        dynamics_consistent: max_dyn <= DYNAMICS_RESIDUAL_TOL,
        endpoints_ok: start_residual <= tol && goal_residual <= tol,
    })
}

/// Default tolerance for feasibility classification: one order looser than
/// the LP core tolerance to absorb accumulation.
pub const FEASIBILITY_TOL: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rest(x: f64, y: f64) -> FreeFlyerState {
        FreeFlyerState::at_rest(Vector2::new(x, y), 0.0)
    }

    fn test_instance(obstacles: Vec<Obstacle>) -> OcpInstance {
        let mut scenario = Scenario::default_family();
        scenario.obstacles = obstacles;
        OcpInstance::new(scenario, rest(0.4, 0.4), rest(3.1, 2.1), 40.0).unwrap()
    }

    #[test]
    fn gamma_at_center_is_negative_radius() {
        let obs = vec![Obstacle {
            center: Vector2::new(1.0, 1.0),
            radius: 0.3,
        }];
        let g = gamma(&rest(1.0, 1.0), &obs);
        assert_relative_eq!(g[0], -0.3, epsilon = 1e-15);
    }

    #[test]
    fn gamma_axis_aligned() {
        let obs = vec![Obstacle {
            center: Vector2::new(1.0, 1.0),
            radius: 0.3,
        }];
        let g = gamma(&rest(2.0, 1.0), &obs);
        assert_relative_eq!(g[0], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn gamma_two_obstacles_matches_norm_oracle() {
        let obs = vec![
            Obstacle {
                center: Vector2::new(0.0, 0.0),
                radius: 0.2,
            },
            Obstacle {
                center: Vector2::new(1.0, 1.0),
                radius: 0.4,
            },
        ];
        let g = gamma(&rest(0.5, 0.5), &obs);
        let d = 0.5f64.sqrt();
        assert_relative_eq!(g[0], d - 0.2, epsilon = 1e-12);
        assert_relative_eq!(g[1], d - 0.4, epsilon = 1e-12);
    }

    #[test]
    fn gamma_is_lipschitz_in_position() {
        let obs = default_obstacles();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a = rest(rng.gen_range(-1.0..4.0), rng.gen_range(-1.0..3.0));
            let b = rest(rng.gen_range(-1.0..4.0), rng.gen_range(-1.0..3.0));
            let ga = gamma(&a, &obs);
            let gb = gamma(&b, &obs);
            let dist = (a.r - b.r).norm();
            for (x, y) in ga.iter().zip(gb.iter()) {
                assert!((x - y).abs() <= dist + 1e-12);
            }
        }
    }

    #[test]
    fn stage_cost_examples() {
        assert_eq!(stage_cost(&ControlImpulse::zero()), 0.0);
        assert_relative_eq!(
            stage_cost(&ControlImpulse::new(0.1, -0.2, 0.05)),
            0.35,
            epsilon = 1e-15
        );
    }

    #[test]
    fn indicator_clean_at_table_center() {
        let instance = test_instance(default_obstacles());
        let x = rest(0.4, 0.4);
        assert!(!violation_indicator(
            &x,
            &ControlImpulse::zero(),
            &instance,
            1e-5
        ));
    }

    #[test]
    fn indicator_inside_obstacle() {
        let instance = test_instance(default_obstacles());
        let x = rest(1.2, 0.8);
        assert!(violation_indicator(
            &x,
            &ControlImpulse::zero(),
            &instance,
            1e-5
        ));
    }

    #[test]
    fn indicator_on_obstacle_boundary_is_feasible() {
        let instance = test_instance(vec![Obstacle {
            center: Vector2::new(1.0, 1.0),
            radius: 0.3,
        }]);
        let x = rest(1.3, 1.0); // clearance exactly zero
        assert!(!violation_indicator(
            &x,
            &ControlImpulse::zero(),
            &instance,
            1e-6
        ));
    }

    #[test]
    fn indicator_flags_unreachable_impulse() {
        let instance = test_instance(vec![]);
        let x = rest(1.0, 1.0);
        let u = ControlImpulse::new(1.0, 0.0, 0.0); // far beyond thruster authority
        assert!(violation_indicator(&x, &u, &instance, 1e-5));
    }

    #[test]
    fn indicator_monotone_in_tol() {
        let instance = test_instance(default_obstacles());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = rest(rng.gen_range(0.0..3.5), rng.gen_range(0.0..2.5));
            let u = ControlImpulse::new(
                rng.gen_range(-0.02..0.02),
                rng.gen_range(-0.02..0.02),
                rng.gen_range(-0.005..0.005),
            );
            let tight = violation_indicator(&x, &u, &instance, 1e-7);
            let loose = violation_indicator(&x, &u, &instance, 1e-3);
            // Larger tolerance never increases the indicator.
            assert!(loose <= tight);
        }
    }

    #[test]
    fn trajectory_feasible_flags_length_mismatch() {
        let instance = test_instance(vec![]);
        let states = vec![rest(0.4, 0.4); 3];
        let controls = vec![ControlImpulse::zero(); 3];
        assert!(matches!(
            trajectory_feasible(&states, &controls, &instance, 1e-5),
            Err(ScenarioError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn consistent_hover_trajectory_is_clean_without_obstacles() {
        let mut scenario = Scenario::default_family();
        scenario.obstacles = vec![];
        let start = rest(0.4, 0.4);
        let instance = OcpInstance::new(scenario, start, start, 40.0).unwrap();
        let n = instance.n_steps;
        let states = vec![start; n + 1];
        let controls = vec![ControlImpulse::zero(); n];
        let report = trajectory_feasible(&states, &controls, &instance, 1e-5).unwrap();
        assert_eq!(report.violation_count, 0);
        assert!(report.passes());
        assert_eq!(report.worst_clearance, f64::INFINITY);
    }

    #[test]
    fn dynamics_inconsistency_detected() {
        let instance = test_instance(vec![]);
        let n = instance.n_steps;
        let mut states = vec![rest(0.4, 0.4); n + 1];
        states[n] = instance.x_goal; // teleport at the end
        let controls = vec![ControlImpulse::zero(); n];
        let report = trajectory_feasible(&states, &controls, &instance, 1e-5).unwrap();
        assert!(!report.dynamics_consistent);
        assert!(!report.passes());
    }

    #[test]
    fn instance_validation_rejects_bad_inputs() {
        let scenario = Scenario::default_family();
        // Horizon not a multiple of dt.
        assert!(matches!(
            OcpInstance::new(scenario.clone(), rest(0.4, 0.4), rest(3.1, 2.1), 40.3),
            Err(ScenarioError::InvalidInstance(_))
        ));
        // Start inside an obstacle.
        assert!(matches!(
            OcpInstance::new(scenario.clone(), rest(1.2, 0.8), rest(3.1, 2.1), 40.0),
            Err(ScenarioError::InvalidInstance(_))
        ));
        // Goal outside the table.
        assert!(matches!(
            OcpInstance::new(scenario, rest(0.4, 0.4), rest(4.0, 2.0), 40.0),
            Err(ScenarioError::InvalidInstance(_))
        ));
    }

    #[test]
    fn scenario_json_round_trip() {
        let instance = test_instance(default_obstacles());
        let json = serde_json::to_string(&instance).unwrap();
        let back: OcpInstance = serde_json::from_str(&json).unwrap();
        assert_eq!(instance, back);
    }
}
