//! Trajectory optimization: the convex relaxation baseline (REL) and the
//! sequential convex programming solver for the full nonconvex problem.
//!
//! Both solvers condense the exact linear dynamics, so the subproblem
//! decision variables are controls (plus bookkeeping variables) rather than
//! state trajectories:
//!
//! - REL drops the keep-out zones and replaces the attitude-coupled thruster
//!   limits with the per-axis control box, giving a single LP whose optimum
//!   lower-bounds every feasible cost of the full problem.
//! - The SCP iterates linearize the two nonconvexities about a reference
//!   trajectory: keep-out clearances (first-order, with penalized slack) and
//!   the attitude coupling (thruster frame frozen at the reference heading),
//!   inside per-block trust regions. Accepted candidates are realized by
//!   exact propagation, so converged solutions are dynamically consistent and
//!   actuation-feasible by construction.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    control_box_bounds, propagate, rotation_body_to_global, ControlImpulse, FreeFlyerState,
    NUM_THRUSTERS,
};
use crate::lp::{solve_lp, LinearProgram, LpStatus};
use crate::scenario::{gamma, stage_cost, trajectory_feasible, Obstacle, OcpInstance};

/// Where a warm start came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WarmStartSource {
    Rel,
    Art,
    Other(String),
}

/// An initial state/control trajectory guess for the SCP loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarmStart {
    pub states: Vec<FreeFlyerState>,
    pub controls: Vec<ControlImpulse>,
    pub source: WarmStartSource,
}

impl WarmStart {
    pub fn matches(&self, instance: &OcpInstance) -> bool {
        self.states.len() == instance.n_steps + 1
            && self.controls.len() == instance.n_steps
            && self.states.iter().all(|x| x.is_finite())
            && self.controls.iter().all(|u| u.is_finite())
    }
}

/// SCP solver knobs. Trust radii are per state block; infinite radii skip the
/// corresponding constraint rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScpConfig {
    pub max_iterations: usize,
    pub trust_radius_pos: f64,
    pub trust_radius_heading: f64,
    pub trust_radius_vel: f64,
    pub trust_radius_rate: f64,
    pub trust_shrink: f64,
    pub trust_expand: f64,
    pub trust_underflow: f64,
    pub penalty_weight: f64,
    pub convergence_tol: f64,
    pub slack_tol: f64,
    pub lp_tol: f64,
    pub lp_max_iter: usize,
}

impl Default for ScpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            trust_radius_pos: 0.5,
            trust_radius_heading: 0.5,
            trust_radius_vel: f64::INFINITY,
            trust_radius_rate: f64::INFINITY,
            trust_shrink: 0.5,
            trust_expand: 1.5,
            trust_underflow: 1e-4,
            penalty_weight: 1e3,
            convergence_tol: 1e-4,
            slack_tol: 1e-6,
            lp_tol: 1e-6,
            lp_max_iter: 50_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    Infeasible,
    MaxIterations,
}

/// One accepted SCP iteration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterationRecord {
    pub cost: f64,
    pub max_slack: f64,
    pub trust_radius: f64,
    /// Penalized objective the acceptance test monitors.
    pub penalized: f64,
}

/// Outcome of a solve, REL or SCP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Summed L1 control effort of the returned trajectory.
    pub cost: f64,
    /// Accepted subproblem solves.
    pub iterations: usize,
    pub states: Vec<FreeFlyerState>,
    pub controls: Vec<ControlImpulse>,
    /// Per-step constraint violations of the returned trajectory.
    pub violation_count: usize,
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Error)]
pub enum TrajOptError {
    #[error("relaxation infeasible: endpoints unreachable within the horizon under box bounds")]
    RelInfeasible,
    #[error("subproblem solver terminated with {0:?}")]
    Lp(LpStatus),
}

/// Total L1 control effort of a control sequence.
pub fn trajectory_cost(controls: &[ControlImpulse]) -> f64 {
    controls.iter().map(stage_cost).sum()
}

/// Drift-only state at 1-indexed node `k`: where the vehicle would be with
/// all controls zero.
fn drift_state(instance: &OcpInstance, k: usize) -> FreeFlyerState {
    let t = (k as f64 - 1.0) * instance.dt();
    let x = &instance.x_start;
    FreeFlyerState {
        r: x.r + x.v * t,
        psi: x.psi + x.omega * t,
        v: x.v,
        omega: x.omega,
    }
}

/// First-order model of a keep-out clearance about a reference position:
/// returns the unit outward gradient and the clearance at the reference. A
/// reference sitting exactly on the obstacle center is nudged along +x so the
/// gradient stays defined (deterministically).
pub fn obstacle_linearization(ref_pos: &Vector2<f64>, o: &Obstacle) -> (Vector2<f64>, f64) {
    let mut d = ref_pos - o.center;
    if d.norm() < 1e-9 {
        d = Vector2::new(1e-6, 0.0);
    }
    let dist = d.norm();
    (d / dist, dist - o.radius)
}

// ---------------------------------------------------------------------------
// REL: convex relaxation.
// ---------------------------------------------------------------------------

/// Solves the relaxed problem: exact dynamics and endpoints, table bounds,
/// per-axis control box instead of the thruster model, keep-out zones
/// dropped. The L1 objective is written with a split `u = up - um`,
/// `up, um >= 0`, which is exact at any optimum.
///
/// The reported cost is a lower bound on every feasible cost of the full
/// problem; the returned trajectory typically violates keep-out zones and
/// thruster limits, which is what makes it an informative baseline.
pub fn solve_rel(instance: &OcpInstance) -> Result<(SolveReport, WarmStart), TrajOptError> {
    let n = instance.n_steps;
    let dt = instance.dt();
    let bounds = control_box_bounds(&instance.scenario.bank);
    let table = &instance.scenario.table;

    // Layout: per step j (0-based): up at 6j..6j+3, um at 6j+3..6j+6;
    // then one table-bounded position variable per interior node and axis.
    let base_w = 6 * n;
    let n_vars = base_w + 2 * (n - 1);

    let m_eq = 6 + 2 * (n - 1);
    let mut a_eq = DMatrix::zeros(m_eq, n_vars);
    let mut b_eq = DVector::zeros(m_eq);

    // Endpoint rows: positions then rates.
    let goal = instance.x_goal.to_vector();
    let drift_end = drift_state(instance, n + 1).to_vector();
    for axis in 0..3 {
        for j in 1..=n {
            let coeff = (n + 1 - j) as f64 * dt;
            let col = 6 * (j - 1) + axis;
            a_eq[(axis, col)] = coeff;
            a_eq[(axis, col + 3)] = -coeff;
        }
        b_eq[axis] = goal[axis] - drift_end[axis];
    }
    for axis in 0..3 {
        let row = 3 + axis;
        for j in 1..=n {
            let col = 6 * (j - 1) + axis;
            a_eq[(row, col)] = 1.0;
            a_eq[(row, col + 3)] = -1.0;
        }
        b_eq[row] = goal[3 + axis] - drift_end[3 + axis];
    }

    // Interior position rows: expr(u) - w = -drift.
    for k in 2..=n {
        let drift = drift_state(instance, k);
        for axis in 0..2 {
            let row = 6 + 2 * (k - 2) + axis;
            for j in 1..k {
                let coeff = (k - j) as f64 * dt;
                let col = 6 * (j - 1) + axis;
                a_eq[(row, col)] = coeff;
                a_eq[(row, col + 3)] = -coeff;
            }
            let w_col = base_w + 2 * (k - 2) + axis;
            a_eq[(row, w_col)] = -1.0;
            b_eq[row] = -drift.r[axis];
        }
    }

    let mut c = DVector::zeros(n_vars);
    let mut lb = DVector::zeros(n_vars);
    let mut ub = DVector::from_element(n_vars, f64::INFINITY);
    for j in 0..n {
        for axis in 0..3 {
            let cap = if axis < 2 { bounds.trans } else { bounds.rot };
            c[6 * j + axis] = 1.0;
            c[6 * j + 3 + axis] = 1.0;
            ub[6 * j + axis] = cap;
            ub[6 * j + 3 + axis] = cap;
        }
    }
    for k in 0..(n - 1) {
        for axis in 0..2 {
            let col = base_w + 2 * k + axis;
            lb[col] = table.min[axis];
            ub[col] = table.max[axis];
        }
    }

    let lp = LinearProgram::new(
        c,
        DMatrix::zeros(0, n_vars),
        DVector::zeros(0),
        a_eq,
        b_eq,
        lb,
        ub,
    )
    .expect("REL subproblem is well-formed");
    let sol = solve_lp(&lp, 1e-8, 200_000);
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(TrajOptError::RelInfeasible),
        other => return Err(TrajOptError::Lp(other)),
    }

    let mut controls = Vec::with_capacity(n);
    for j in 0..n {
        let u = ControlImpulse::new(
            sol.z[6 * j] - sol.z[6 * j + 3],
            sol.z[6 * j + 1] - sol.z[6 * j + 4],
            sol.z[6 * j + 2] - sol.z[6 * j + 5],
        );
        controls.push(u);
    }
    let mut states = Vec::with_capacity(n + 1);
    states.push(instance.x_start);
    for u in &controls {
        let next = propagate(states.last().unwrap(), u, dt);
        states.push(next);
    }

    let cost = trajectory_cost(&controls);
    let feas = trajectory_feasible(&states, &controls, instance, crate::scenario::FEASIBILITY_TOL)
        .expect("lengths consistent by construction");
    let report = SolveReport {
        status: SolveStatus::Converged,
        cost,
        iterations: 1,
        states: states.clone(),
        controls: controls.clone(),
        violation_count: feas.violation_count,
        history: vec![IterationRecord {
            cost,
            max_slack: 0.0,
            trust_radius: f64::INFINITY,
            penalized: cost,
        }],
    };
    let warm = WarmStart {
        states,
        controls,
        source: WarmStartSource::Rel,
    };
    Ok((report, warm))
}

// ---------------------------------------------------------------------------
// SCP subproblem.
// ---------------------------------------------------------------------------

/// A convexified subproblem plus the layout needed to pull the thruster
/// delta-Vs back out of the solution vector.
pub struct ConvexSubproblem {
    pub lp: LinearProgram,
    n_steps: usize,
    /// Column of the shared obstacle slack per 1-indexed node, if any.
    slack_cols: Vec<Option<usize>>,
}

impl ConvexSubproblem {
    pub fn thruster_allocations(&self, z: &DVector<f64>, dv_max: f64) -> Vec<[f64; NUM_THRUSTERS]> {
        let mut out = Vec::with_capacity(self.n_steps);
        for j in 0..self.n_steps {
            let mut dv = [0.0; NUM_THRUSTERS];
            for t in 0..NUM_THRUSTERS {
                dv[t] = z[NUM_THRUSTERS * j + t].clamp(0.0, dv_max);
            }
            out.push(dv);
        }
        out
    }

    pub fn max_obstacle_slack(&self, z: &DVector<f64>) -> f64 {
        self.slack_cols
            .iter()
            .flatten()
            .map(|&c| z[c])
            .fold(0.0, f64::max)
    }
}

/// Builds the convex subproblem about a reference trajectory.
///
/// Decision variables per step: eight thruster delta-Vs (attitude frozen at
/// the reference heading), the split global impulse for the L1 objective,
/// and per-node position/heading variables that carry the table bounds and
/// the trust region as plain variable bounds. Keep-out zones enter as
/// linearized clearance rows with one shared nonnegative slack per node,
/// penalized in the objective; rows that cannot bind inside the trust region
/// are omitted (they are implied by the position bounds).
pub fn convexify(
    instance: &OcpInstance,
    reference: &[FreeFlyerState],
    config: &ScpConfig,
    trust_scale: f64,
) -> ConvexSubproblem {
    let n = instance.n_steps;
    assert_eq!(reference.len(), n + 1, "reference length mismatch");
    let dt = instance.dt();
    let bank = &instance.scenario.bank;
    let table = &instance.scenario.table;
    let obstacles = &instance.scenario.obstacles;

    let rho_pos = config.trust_radius_pos * trust_scale;
    let rho_psi = config.trust_radius_heading * trust_scale;
    let rho_vel = config.trust_radius_vel * trust_scale;
    let rho_rate = config.trust_radius_rate * trust_scale;
    let vel_rows = rho_vel.is_finite();
    let rate_rows = rho_rate.is_finite();

    // Thruster map rotated into the global frame at the reference heading of
    // the node where each impulse fires.
    let rl: Vec<DMatrix<f64>> = (0..n)
        .map(|j| {
            let r = rotation_body_to_global(reference[j].psi);
            let mut m = DMatrix::zeros(3, NUM_THRUSTERS);
            for row in 0..3 {
                for col in 0..NUM_THRUSTERS {
                    let mut acc = 0.0;
                    for t in 0..3 {
                        acc += r[(row, t)] * bank.lambda[(t, col)];
                    }
                    m[(row, col)] = acc;
                }
            }
            m
        })
        .collect();

    // Variable layout.
    let base_up = NUM_THRUSTERS * n;
    let base_um = base_up + 3 * n;
    let base_w = base_um + 3 * n;
    let base_h = base_w + 2 * (n - 1);
    let base_vel = base_h + (n - 1);
    let n_vel = if vel_rows { 2 * (n - 1) } else { 0 };
    let base_rate = base_vel + n_vel;
    let n_rate = if rate_rows { n - 1 } else { 0 };
    let base_s = base_rate + n_rate;

    // Active obstacle rows: prune nodes whose reference clearance exceeds the
    // largest move the position bounds allow.
    let prune = 2.0f64.sqrt() * rho_pos + 1e-6;
    let mut obstacle_rows: Vec<(usize, usize)> = Vec::new(); // (node k, obstacle m)
    let mut slack_cols: Vec<Option<usize>> = vec![None; n + 2];
    let mut n_slack = 0;
    for k in 2..=n {
        let mut any = false;
        for (m, o) in obstacles.iter().enumerate() {
            let (_, clearance) = obstacle_linearization(&reference[k - 1].r, o);
            if clearance <= prune {
                obstacle_rows.push((k, m));
                any = true;
            }
        }
        if any {
            slack_cols[k] = Some(base_s + n_slack);
            n_slack += 1;
        }
    }
    let n_vars = base_s + n_slack;

    let m_eq = 3 * n + 6 + 2 * (n - 1) + (n - 1) + n_vel + n_rate;
    let mut a_eq = DMatrix::zeros(m_eq, n_vars);
    let mut b_eq = DVector::zeros(m_eq);
    let mut row = 0;

    // Impulse definition rows: RL_j dv_j - up_j + um_j = 0.
    for j in 0..n {
        for axis in 0..3 {
            for t in 0..NUM_THRUSTERS {
                a_eq[(row, NUM_THRUSTERS * j + t)] = rl[j][(axis, t)];
            }
            a_eq[(row, base_up + 3 * j + axis)] = -1.0;
            a_eq[(row, base_um + 3 * j + axis)] = 1.0;
            row += 1;
        }
    }

    // Endpoint rows.
    let goal = instance.x_goal.to_vector();
    let drift_end = drift_state(instance, n + 1).to_vector();
    for axis in 0..3 {
        for j in 1..=n {
            let coeff = (n + 1 - j) as f64 * dt;
            for t in 0..NUM_THRUSTERS {
                a_eq[(row, NUM_THRUSTERS * (j - 1) + t)] = coeff * rl[j - 1][(axis, t)];
            }
        }
        b_eq[row] = goal[axis] - drift_end[axis];
        row += 1;
    }
    for axis in 0..3 {
        for j in 1..=n {
            for t in 0..NUM_THRUSTERS {
                a_eq[(row, NUM_THRUSTERS * (j - 1) + t)] = rl[j - 1][(axis, t)];
            }
        }
        b_eq[row] = goal[3 + axis] - drift_end[3 + axis];
        row += 1;
    }

    // Node position rows: expr(dv) - w = -drift.
    for k in 2..=n {
        let drift = drift_state(instance, k);
        for axis in 0..2 {
            for j in 1..k {
                let coeff = (k - j) as f64 * dt;
                for t in 0..NUM_THRUSTERS {
                    a_eq[(row, NUM_THRUSTERS * (j - 1) + t)] = coeff * rl[j - 1][(axis, t)];
                }
            }
            a_eq[(row, base_w + 2 * (k - 2) + axis)] = -1.0;
            b_eq[row] = -drift.r[axis];
            row += 1;
        }
    }

    // Node heading rows.
    for k in 2..=n {
        let drift = drift_state(instance, k);
        for j in 1..k {
            let coeff = (k - j) as f64 * dt;
            for t in 0..NUM_THRUSTERS {
                a_eq[(row, NUM_THRUSTERS * (j - 1) + t)] = coeff * rl[j - 1][(2, t)];
            }
        }
        a_eq[(row, base_h + (k - 2))] = -1.0;
        b_eq[row] = -drift.psi;
        row += 1;
    }

    // Optional velocity / rate trust rows.
    if vel_rows {
        for k in 2..=n {
            let drift = drift_state(instance, k);
            for axis in 0..2 {
                for j in 1..k {
                    for t in 0..NUM_THRUSTERS {
                        a_eq[(row, NUM_THRUSTERS * (j - 1) + t)] = rl[j - 1][(axis, t)];
                    }
                }
                a_eq[(row, base_vel + 2 * (k - 2) + axis)] = -1.0;
                b_eq[row] = -drift.v[axis];
                row += 1;
            }
        }
    }
    if rate_rows {
        for k in 2..=n {
            let drift = drift_state(instance, k);
            for j in 1..k {
                for t in 0..NUM_THRUSTERS {
                    a_eq[(row, NUM_THRUSTERS * (j - 1) + t)] = rl[j - 1][(2, t)];
                }
            }
            a_eq[(row, base_rate + (k - 2))] = -1.0;
            b_eq[row] = -drift.omega;
            row += 1;
        }
    }
    debug_assert_eq!(row, m_eq);

    // Obstacle rows: -g' w_k - s_k <= clearance - g' ref.
    let m_ub = obstacle_rows.len();
    let mut a_ub = DMatrix::zeros(m_ub, n_vars);
    let mut b_ub = DVector::zeros(m_ub);
    for (idx, &(k, m)) in obstacle_rows.iter().enumerate() {
        let rp = &reference[k - 1].r;
        let (g, clearance) = obstacle_linearization(rp, &obstacles[m]);
        a_ub[(idx, base_w + 2 * (k - 2))] = -g.x;
        a_ub[(idx, base_w + 2 * (k - 2) + 1)] = -g.y;
        a_ub[(idx, slack_cols[k].expect("slack allocated"))] = -1.0;
        b_ub[idx] = clearance - g.dot(rp);
    }

    // Objective and bounds.
    let mut c = DVector::zeros(n_vars);
    let mut lb = DVector::from_element(n_vars, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(n_vars, f64::INFINITY);
    for j in 0..n {
        for t in 0..NUM_THRUSTERS {
            let col = NUM_THRUSTERS * j + t;
            // Tiny regularization picks a deterministic minimum-firing
            // allocation among equal-cost impulse schedules.
            c[col] = 1e-9;
            lb[col] = 0.0;
            ub[col] = bank.dv_max;
        }
        for axis in 0..3 {
            c[base_up + 3 * j + axis] = 1.0;
            c[base_um + 3 * j + axis] = 1.0;
            lb[base_up + 3 * j + axis] = 0.0;
            lb[base_um + 3 * j + axis] = 0.0;
        }
    }
    for k in 2..=n {
        let rp = &reference[k - 1].r;
        for axis in 0..2 {
            let col = base_w + 2 * (k - 2) + axis;
            let anchored = rp[axis].clamp(table.min[axis], table.max[axis]);
            lb[col] = (anchored - rho_pos).max(table.min[axis]);
            ub[col] = (anchored + rho_pos).min(table.max[axis]);
        }
        let h_col = base_h + (k - 2);
        lb[h_col] = reference[k - 1].psi - rho_psi;
        ub[h_col] = reference[k - 1].psi + rho_psi;
        if vel_rows {
            for axis in 0..2 {
                let col = base_vel + 2 * (k - 2) + axis;
                lb[col] = reference[k - 1].v[axis] - rho_vel;
                ub[col] = reference[k - 1].v[axis] + rho_vel;
            }
        }
        if rate_rows {
            let col = base_rate + (k - 2);
            lb[col] = reference[k - 1].omega - rho_rate;
            ub[col] = reference[k - 1].omega + rho_rate;
        }
    }
    for k in 2..=n {
        if let Some(col) = slack_cols[k] {
            c[col] = config.penalty_weight;
            lb[col] = 0.0;
        }
    }

    let lp = LinearProgram::new(c, a_ub, b_ub, a_eq, b_eq, lb, ub)
        .expect("SCP subproblem is well-formed");
    ConvexSubproblem {
        lp,
        n_steps: n,
        slack_cols,
    }
}

/// Realizes a thruster schedule into a trajectory by exact propagation, with
/// each impulse rotated at the attitude the vehicle actually has when firing.
fn realize(
    instance: &OcpInstance,
    allocations: &[[f64; NUM_THRUSTERS]],
) -> (Vec<FreeFlyerState>, Vec<ControlImpulse>) {
    let dt = instance.dt();
    let bank = &instance.scenario.bank;
    let mut states = Vec::with_capacity(instance.n_steps + 1);
    let mut controls = Vec::with_capacity(instance.n_steps);
    states.push(instance.x_start);
    for dv in allocations {
        let x = *states.last().unwrap();
        let mut body = [0.0; 3];
        for (t, &d) in dv.iter().enumerate() {
            for axis in 0..3 {
                body[axis] += bank.lambda[(axis, t)] * d;
            }
        }
        let rot = rotation_body_to_global(x.psi);
        let u = ControlImpulse(rot * nalgebra::Vector3::new(body[0], body[1], body[2]));
        controls.push(u);
        states.push(propagate(&x, &u, dt));
    }
    (states, controls)
}

struct Merit {
    cost: f64,
    /// Worst single violation: obstacle depth, table excursion, or endpoint
    /// residual component.
    max_violation: f64,
    value: f64,
}

fn merit(instance: &OcpInstance, states: &[FreeFlyerState], controls: &[ControlImpulse], config: &ScpConfig) -> Merit {
    let n = instance.n_steps;
    let cost = trajectory_cost(controls);
    let mut sum_viol = 0.0;
    let mut max_viol: f64 = 0.0;
    for k in 2..=n {
        let x = &states[k - 1];
        let mut node_viol = instance.scenario.table.violation(&x.r);
        for g in gamma(x, &instance.scenario.obstacles) {
            node_viol = node_viol.max(-g);
        }
        let node_viol = node_viol.max(0.0);
        sum_viol += node_viol;
        max_viol = max_viol.max(node_viol);
    }
    let endpoint = (states[n].to_vector() - instance.x_goal.to_vector()).abs();
    let endpoint_l1: f64 = endpoint.iter().sum();
    max_viol = max_viol.max(endpoint.amax());
    Merit {
        cost,
        max_violation: max_viol,
        value: cost + config.penalty_weight * (sum_viol + endpoint_l1),
    }
}

/// Sequential convex programming about a warm start.
///
/// Each iteration solves the convexified subproblem, realizes the candidate
/// by exact propagation, and accepts it when the penalized objective does not
/// increase (the first candidate is always accepted, since the warm start
/// itself may be infeasible for the full problem). Acceptance expands the
/// trust region; rejection shrinks it and re-solves about the unchanged
/// reference. Convergence requires a small state update and violations within
/// the slack tolerance.
pub fn solve_scp(instance: &OcpInstance, warm: &WarmStart, config: &ScpConfig) -> SolveReport {
    assert!(warm.matches(instance), "warm start does not fit the instance");
    let n = instance.n_steps;
    let bank = &instance.scenario.bank;

    let mut ref_states = warm.states.clone();
    let mut ref_merit: Option<f64> = None;
    let mut best: Option<(Vec<FreeFlyerState>, Vec<ControlImpulse>, f64)> = None;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut scale = 1.0f64;
    let mut accepted = 0usize;
    let mut total_solves = 0usize;

    let status = loop {
        if accepted >= config.max_iterations || total_solves >= config.max_iterations + 40 {
            break SolveStatus::MaxIterations;
        }
        if config.trust_radius_pos * scale < config.trust_underflow {
            break SolveStatus::Infeasible;
        }
        let sub = convexify(instance, &ref_states, config, scale);
        let sol = solve_lp(&sub.lp, config.lp_tol, config.lp_max_iter);
        total_solves += 1;
        if sol.status != LpStatus::Optimal {
            break SolveStatus::Infeasible;
        }
        let allocations = sub.thruster_allocations(&sol.z, bank.dv_max);
        let (cand_states, cand_controls) = realize(instance, &allocations);
        let m = merit(instance, &cand_states, &cand_controls, config);

        let accept = ref_merit.map_or(true, |rm| m.value <= rm);
        if accept {
            accepted += 1;
            let update = ref_states
                .iter()
                .zip(cand_states.iter())
                .map(|(a, b)| a.max_abs_diff(b))
                .fold(0.0, f64::max);
            history.push(IterationRecord {
                cost: m.cost,
                max_slack: m.max_violation,
                trust_radius: config.trust_radius_pos * scale,
                penalized: m.value,
            });
            ref_states = cand_states.clone();
            ref_merit = Some(m.value);
            best = Some((cand_states, cand_controls, m.cost));
            scale = (scale * config.trust_expand).min(1.0);
            if update < config.convergence_tol && m.max_violation <= config.slack_tol {
                break SolveStatus::Converged;
            }
        } else {
            scale *= config.trust_shrink;
        }
    };

    match best {
        Some((states, controls, cost)) => {
            let feas =
                trajectory_feasible(&states, &controls, instance, crate::scenario::FEASIBILITY_TOL)
                    .expect("lengths consistent by construction");
            SolveReport {
                status,
                cost,
                iterations: accepted,
                states,
                controls,
                violation_count: feas.violation_count,
                history,
            }
        }
        None => SolveReport {
            status: SolveStatus::Infeasible,
            cost: f64::NAN,
            iterations: 0,
            states: warm.states.clone(),
            controls: warm.controls.clone(),
            violation_count: usize::MAX,
            history,
        },
    }
}
