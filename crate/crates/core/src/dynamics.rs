//! Planar free-flyer kinematics, rotation handling, thruster allocation, and
//! impulsive state propagation.
//!
//! The vehicle is a planar body with position, heading, velocity, and angular
//! rate, actuated by eight on-off thrusters that produce impulsive delta-Vs.
//! Impulses are applied at the start of each interval, followed by a constant
//! drift over the timestep.

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{solve_lp, LinearProgram, LpStatus};

/// Planar rigid-body state: position `r` [m], heading `psi` [rad], velocity
/// `v` [m/s], angular rate `omega` [rad/s]. The heading is stored unwrapped
/// (no modular reduction) so propagation stays continuous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeFlyerState {
    pub r: Vector2<f64>,
    pub psi: f64,
    pub v: Vector2<f64>,
    pub omega: f64,
}

impl FreeFlyerState {
    pub fn new(r: Vector2<f64>, psi: f64, v: Vector2<f64>, omega: f64) -> Self {
        Self { r, psi, v, omega }
    }

    /// At rest at the given pose.
    pub fn at_rest(r: Vector2<f64>, psi: f64) -> Self {
        Self::new(r, psi, Vector2::zeros(), 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().all(|x| x.is_finite())
            && self.psi.is_finite()
            && self.v.iter().all(|x| x.is_finite())
            && self.omega.is_finite()
    }

    /// Stacks the state as `[r_x, r_y, psi, v_x, v_y, omega]`
    /// (position-block then rate-block).
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.r.x, self.r.y, self.psi, self.v.x, self.v.y, self.omega)
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            r: Vector2::new(x[0], x[1]),
            psi: x[2],
            v: Vector2::new(x[3], x[4]),
            omega: x[5],
        }
    }

    /// Componentwise max-abs difference, mixed units.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.to_vector() - other.to_vector()).amax()
    }
}

/// Global-frame impulse `(dv_x [m/s], dv_y [m/s], domega [rad/s])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlImpulse(pub Vector3<f64>);

impl ControlImpulse {
    pub fn new(dv_x: f64, dv_y: f64, domega: f64) -> Self {
        Self(Vector3::new(dv_x, dv_y, domega))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn delta_v(&self) -> Vector2<f64> {
        self.0.xy()
    }

    pub fn delta_omega(&self) -> f64 {
        self.0.z
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

pub const NUM_THRUSTERS: usize = 8;

/// Thruster geometry and physical limits.
///
/// `lambda` maps per-thruster delta-Vs to a body-frame impulse
/// `(x, y, angular)`; each thruster is one-directional, so feasible
/// allocations satisfy `0 <= dv <= dv_max` with `dv_max = thrust * dt / mass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BankJson", into = "BankJson")]
pub struct ThrusterBank {
    pub lambda: SMatrix<f64, 3, NUM_THRUSTERS>,
    pub dv_max: f64,
    pub thrust: f64,
    pub mass: f64,
    pub dt: f64,
}

/// JSON shape: `{mass, thrust, dt, dv_max, lambda}` with `lambda` the
/// row-major 24 numbers of the 3x8 configuration matrix.
#[derive(Serialize, Deserialize)]
struct BankJson {
    mass: f64,
    thrust: f64,
    dt: f64,
    dv_max: f64,
    lambda: Vec<f64>,
}

impl From<ThrusterBank> for BankJson {
    fn from(b: ThrusterBank) -> Self {
        let mut lambda = Vec::with_capacity(24);
        for i in 0..3 {
            for j in 0..NUM_THRUSTERS {
                lambda.push(b.lambda[(i, j)]);
            }
        }
        BankJson {
            mass: b.mass,
            thrust: b.thrust,
            dt: b.dt,
            dv_max: b.dv_max,
            lambda,
        }
    }
}

impl TryFrom<BankJson> for ThrusterBank {
    type Error = DynamicsError;

    fn try_from(j: BankJson) -> Result<Self, Self::Error> {
        if j.lambda.len() != 24 {
            return Err(DynamicsError::InvalidBank(format!(
                "lambda must have 24 entries, got {}",
                j.lambda.len()
            )));
        }
        let lambda = SMatrix::<f64, 3, NUM_THRUSTERS>::from_row_slice(&j.lambda);
        let bank = ThrusterBank {
            lambda,
            dv_max: j.dv_max,
            thrust: j.thrust,
            mass: j.mass,
            dt: j.dt,
        };
        bank.validate()?;
        Ok(bank)
    }
}

impl Default for ThrusterBank {
    /// Eight thrusters, two per body face, with +-0.15 m torque arms
    /// alternating within each pair. Columns are scaled so a unit thruster
    /// delta-V contributes a unit body-axis delta-V.
    fn default() -> Self {
        const ARM: f64 = 0.15;
        let mut lambda = SMatrix::<f64, 3, NUM_THRUSTERS>::zeros();
        let faces = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)];
        for (f, &(fx, fy)) in faces.iter().enumerate() {
            for k in 0..2 {
                let col = 2 * f + k;
                lambda[(0, col)] = fx;
                lambda[(1, col)] = fy;
                lambda[(2, col)] = if k == 0 { ARM } else { -ARM };
            }
        }
        let mass = 16.0;
        let thrust = 0.2;
        let dt = 0.5;
        ThrusterBank {
            lambda,
            dv_max: thrust * dt / mass,
            thrust,
            mass,
            dt,
        }
    }
}

impl ThrusterBank {
    /// Checks finiteness, positivity, rank, and full on-off controllability
    /// (the nonnegative column span must contain a neighbourhood of the
    /// origin, probed along all six signed axes).
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.mass > 0.0 && self.thrust > 0.0 && self.dt > 0.0 && self.dv_max > 0.0) {
            return Err(DynamicsError::InvalidBank(
                "mass, thrust, dt, dv_max must be positive".into(),
            ));
        }
        if self.lambda.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::InvalidBank("non-finite lambda".into()));
        }
        if self.lambda.rank(1e-9) < 3 {
            return Err(DynamicsError::InvalidBank("lambda rank below 3".into()));
        }
        let probe = self.dv_max * 1e-3;
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let mut u = Vector3::zeros();
                u[axis] = sign * probe;
                if allocate_body_frame(&u, self, self.dv_max).is_none() {
                    return Err(DynamicsError::InvalidBank(format!(
                        "axis {axis} direction {sign} unreachable: thrusters cannot span R^3"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("requested impulse is outside the reachable set at this attitude")]
    InfeasibleImpulse,
    #[error("invalid thruster bank: {0}")]
    InvalidBank(String),
}

/// Rotation from the body-fixed frame to the global frame: planar rotation by
/// `psi` on the translational block, identity on the angular component.
pub fn rotation_body_to_global(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Impulsive propagation over one interval: the impulse updates the rates at
/// the interval start, then the state drifts for `dt` at the new rates.
pub fn propagate(x: &FreeFlyerState, u: &ControlImpulse, dt: f64) -> FreeFlyerState {
    debug_assert!(dt > 0.0);
    let v = x.v + u.delta_v();
    let omega = x.omega + u.delta_omega();
    FreeFlyerState {
        r: x.r + v * dt,
        psi: x.psi + omega * dt,
        v,
        omega,
    }
}

/// State-transition matrix of the drift in `[r, psi, v, omega]` ordering.
pub fn drift_matrix(dt: f64) -> SMatrix<f64, 6, 6> {
    let mut a = SMatrix::<f64, 6, 6>::identity();
    for k in 0..3 {
        a[(k, k + 3)] = dt;
    }
    a
}

/// Input matrix mapping a global impulse to the state update, matching
/// `propagate`: rates jump by `u`, positions advance by `dt * u`.
pub fn impulse_matrix(dt: f64) -> SMatrix<f64, 6, 3> {
    let mut b = SMatrix::<f64, 6, 3>::zeros();
    for k in 0..3 {
        b[(k, k)] = dt;
        b[(k + 3, k)] = 1.0;
    }
    b
}

/// Min-fuel allocation in the body frame: minimize the summed thruster
/// delta-Vs reproducing the body-frame impulse `u_body` under `0 <= dv <= cap`.
/// Returns `None` when unreachable.
fn allocate_body_frame(
    u_body: &Vector3<f64>,
    bank: &ThrusterBank,
    cap: f64,
) -> Option<SVector<f64, NUM_THRUSTERS>> {
    use nalgebra::{DMatrix, DVector};
    let n = NUM_THRUSTERS;
    let mut a_eq = DMatrix::zeros(3, n);
    for i in 0..3 {
        for j in 0..n {
            a_eq[(i, j)] = bank.lambda[(i, j)];
        }
    }
    let b_eq = DVector::from_column_slice(u_body.as_slice());
    let lp = LinearProgram::new(
        DVector::from_element(n, 1.0),
        DMatrix::zeros(0, n),
        DVector::zeros(0),
        a_eq,
        b_eq,
        DVector::zeros(n),
        DVector::from_element(n, cap),
    )
    .expect("allocation LP is well-formed");
    let sol = solve_lp(&lp, 1e-9, 2000);
    match sol.status {
        LpStatus::Optimal => {
            let mut out = SVector::<f64, NUM_THRUSTERS>::zeros();
            for j in 0..n {
                out[j] = sol.z[j].clamp(0.0, cap);
            }
            Some(out)
        }
        _ => None,
    }
}

/// Min-fuel thruster allocation for a global-frame impulse at attitude `psi`.
pub fn allocate_thrusters(
    u: &ControlImpulse,
    psi: f64,
    bank: &ThrusterBank,
) -> Result<SVector<f64, NUM_THRUSTERS>, DynamicsError> {
    allocate_thrusters_with_cap(u, psi, bank, bank.dv_max)
}

/// Allocation with an explicit per-thruster cap (used by the feasibility
/// classifier, which inflates the cap by a tolerance slack).
pub fn allocate_thrusters_with_cap(
    u: &ControlImpulse,
    psi: f64,
    bank: &ThrusterBank,
    cap: f64,
) -> Result<SVector<f64, NUM_THRUSTERS>, DynamicsError> {
    let u_body = rotation_body_to_global(psi).transpose() * u.0;
    allocate_body_frame(&u_body, bank, cap).ok_or(DynamicsError::InfeasibleImpulse)
}

/// Per-axis bounds of the relaxed control box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    /// Bound on each global translational impulse component [m/s].
    pub trans: f64,
    /// Bound on the angular impulse component [rad/s].
    pub rot: f64,
}

/// Smallest per-axis box containing every attitude-feasible impulse.
///
/// The attitude sweeps the translational part of the reachable zonotope over
/// all rotations, so the per-component bound equals the largest Euclidean
/// norm of the translational block over the zonotope vertices; the angular
/// bound is rotation-invariant.
pub fn control_box_bounds(bank: &ThrusterBank) -> ControlBounds {
    let mut trans: f64 = 0.0;
    let mut rot: f64 = 0.0;
    for mask in 0u32..(1 << NUM_THRUSTERS) {
        let mut w = Vector3::zeros();
        for t in 0..NUM_THRUSTERS {
            if mask & (1 << t) != 0 {
                w += bank.lambda.column(t) * bank.dv_max;
            }
        }
        trans = trans.max(w.xy().norm());
        rot = rot.max(w.z.abs());
    }
    ControlBounds { trans, rot }
}
