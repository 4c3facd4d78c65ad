//! Two-link arm driven by pneumatic artificial muscles (PAMs).
//!
//! The plant combines rigid-body dynamics of the human arm plus exoskeleton
//! links with a first-order pressure lag for each PAM. States and controls
//! are plain value types; every operation here is a pure function of its
//! inputs, so plant values can be shared freely between threads.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::util::{fmt_g9, parse_f64_field, split_csv_line};

/// Safety limit on PAM pressure (MPa). Commanded and measured pressures are
/// clamped to `[0, PRESSURE_MAX]`.
pub const PRESSURE_MAX: f64 = 0.8;

/// Finite-difference step used by [`linearize`].
const JACOBIAN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, thiserror::Error)]
pub enum PlantError {
    #[error("dynamics produced a non-finite state (unstable parameters or dt too large)")]
    NonFinite,
    #[error("dynamics produced a non-finite state at step {step}")]
    NonFiniteAt { step: usize },
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
    #[error("no static hold pressure for joint {joint}: required torque {torque:.4} N*m not achievable")]
    HoldInfeasible { joint: usize, torque: f64 },
    #[error("rollout needs at least one control input")]
    EmptyControls,
    #[error("bad trajectory CSV: {0}")]
    CsvFormat(String),
}

/// Full plant state: joint angles (rad), angular velocities (rad/s) and
/// measured PAM pressures (MPa). Index 1 is the shoulder, 2 the elbow.
///
/// Angles are measured from the downward vertical, positive in the throwing
/// direction (+x forward, +y up in the sagittal plane).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub theta1: f64,
    pub theta2: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl PlantState {
    pub fn new(theta1: f64, theta2: f64, omega1: f64, omega2: f64, p1: f64, p2: f64) -> Self {
        Self { theta1, theta2, omega1, omega2, p1, p2 }
    }

    /// State as the vector `[theta1, theta2, omega1, omega2, p1, p2]`.
    pub fn to_vector(&self) -> SVector<f64, 6> {
        SVector::<f64, 6>::from([self.theta1, self.theta2, self.omega1, self.omega2, self.p1, self.p2])
    }

    pub fn from_vector(v: &SVector<f64, 6>) -> Self {
        Self { theta1: v[0], theta2: v[1], omega1: v[2], omega2: v[3], p1: v[4], p2: v[5] }
    }

    pub fn theta(&self) -> Vector2<f64> {
        Vector2::new(self.theta1, self.theta2)
    }

    pub fn omega(&self) -> Vector2<f64> {
        Vector2::new(self.omega1, self.omega2)
    }

    pub fn pressures(&self) -> Vector2<f64> {
        Vector2::new(self.p1, self.p2)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

/// Desired PAM pressures (MPa), one per joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub pref1: f64,
    pub pref2: f64,
}

impl ControlInput {
    pub fn new(pref1: f64, pref2: f64) -> Self {
        Self { pref1, pref2 }
    }

    /// Construct with both references clamped to `[0, PRESSURE_MAX]`.
    pub fn clamped(pref1: f64, pref2: f64) -> Self {
        Self {
            pref1: pref1.clamp(0.0, PRESSURE_MAX),
            pref2: pref2.clamp(0.0, PRESSURE_MAX),
        }
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.pref1, self.pref2)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self { pref1: v[0], pref2: v[1] }
    }
}

/// Per-link rigid-body parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    /// Combined human + robot link mass (kg).
    pub mass: f64,
    /// Link length (m).
    pub length: f64,
    /// Center-of-mass offset from the proximal joint (m).
    pub com_offset: f64,
    /// Rotational inertia about the center of mass (kg*m^2).
    pub inertia: f64,
}

/// Per-joint actuation parameters. One PAM pulls each joint in flexion;
/// extension is restored by gravity and friction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointParams {
    /// Pulley radius converting PAM force to joint torque (m).
    pub pulley_radius: f64,
    /// Affine pressure-force gain (N/MPa).
    pub pam_gain: f64,
    /// Affine pressure-force offset (N); force is `max(gain*P - offset, 0)`.
    pub pam_offset: f64,
    /// Viscous friction coefficient (N*m*s/rad).
    pub viscous_friction: f64,
}

/// Parameters of the combined human + robot two-link arm.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmModel {
    /// Link 1 = upper arm, link 2 = forearm + hand.
    pub links: [LinkParams; 2],
    /// Joint 1 = shoulder flexion/extension, joint 2 = elbow flexion/extension.
    pub joints: [JointParams; 2],
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
    /// Simulation time step (s).
    pub dt: f64,
    /// Pressure lag time constant while PAM torque is rising (s).
    pub tc_rise: f64,
    /// Pressure lag time constant otherwise (s).
    pub tc_fall: f64,
}

impl Default for ArmModel {
    /// Representative anthropometric + robot parameters; not measured values.
    fn default() -> Self {
        Self {
            links: [
                LinkParams { mass: 2.0, length: 0.30, com_offset: 0.15, inertia: 2.0 * 0.30 * 0.30 / 12.0 },
                LinkParams { mass: 1.7, length: 0.35, com_offset: 0.175, inertia: 1.7 * 0.35 * 0.35 / 12.0 },
            ],
            joints: [
                JointParams { pulley_radius: 0.05, pam_gain: 1000.0, pam_offset: 0.0, viscous_friction: 0.1 },
                JointParams { pulley_radius: 0.05, pam_gain: 1000.0, pam_offset: 0.0, viscous_friction: 0.1 },
            ],
            gravity: 9.81,
            dt: 0.01,
            tc_rise: 0.08,
            tc_fall: 0.4,
        }
    }
}

impl ArmModel {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |what: &str| Err(PlantError::InvalidModel(what.to_string()));
        for (i, link) in self.links.iter().enumerate() {
            if link.mass <= 0.0 {
                return bad(&format!("link {} mass must be positive", i + 1));
            }
            if link.length <= 0.0 {
                return bad(&format!("link {} length must be positive", i + 1));
            }
            if link.inertia <= 0.0 {
                return bad(&format!("link {} inertia must be positive", i + 1));
            }
            if link.com_offset <= 0.0 || link.com_offset > link.length {
                return bad(&format!("link {} com_offset must lie in (0, length]", i + 1));
            }
        }
        for (i, joint) in self.joints.iter().enumerate() {
            if joint.pulley_radius <= 0.0 {
                return bad(&format!("joint {} pulley_radius must be positive", i + 1));
            }
            if joint.pam_gain <= 0.0 {
                return bad(&format!("joint {} pam_gain must be positive", i + 1));
            }
            if joint.viscous_friction < 0.0 {
                return bad(&format!("joint {} viscous_friction must be nonnegative", i + 1));
            }
        }
        if self.gravity < 0.0 {
            return bad("gravity must be nonnegative");
        }
        if self.dt <= 0.0 {
            return bad("dt must be positive");
        }
        if self.tc_rise <= 0.0 || self.tc_fall <= 0.0 {
            return bad("pressure time constants must be positive");
        }
        Ok(())
    }
}

/// Joint-space inertia matrix `M(theta)`.
pub fn mass_matrix(theta: &Vector2<f64>, model: &ArmModel) -> Matrix2<f64> {
    let (l1, lc1, m1, i1) = (
        model.links[0].length,
        model.links[0].com_offset,
        model.links[0].mass,
        model.links[0].inertia,
    );
    let (lc2, m2, i2) = (model.links[1].com_offset, model.links[1].mass, model.links[1].inertia);
    let c2 = theta[1].cos();
    let m11 = m1 * lc1 * lc1 + i1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + i2;
    let m12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
    let m22 = m2 * lc2 * lc2 + i2;
    Matrix2::new(m11, m12, m12, m22)
}

/// Coriolis/centrifugal torque `C(theta, omega) * omega`.
pub fn coriolis_torque(theta: &Vector2<f64>, omega: &Vector2<f64>, model: &ArmModel) -> Vector2<f64> {
    let h = model.links[1].mass * model.links[0].length * model.links[1].com_offset * theta[1].sin();
    Vector2::new(
        -h * omega[1] * (2.0 * omega[0] + omega[1]),
        h * omega[0] * omega[0],
    )
}

/// Gravity torque `G(theta)` with angles measured from the downward vertical.
pub fn gravity_torque(theta: &Vector2<f64>, model: &ArmModel) -> Vector2<f64> {
    let g = model.gravity;
    let (m1, lc1, l1) = (model.links[0].mass, model.links[0].com_offset, model.links[0].length);
    let (m2, lc2) = (model.links[1].mass, model.links[1].com_offset);
    let s1 = theta[0].sin();
    let s12 = (theta[0] + theta[1]).sin();
    Vector2::new(
        (m1 * lc1 + m2 * l1) * g * s1 + m2 * lc2 * g * s12,
        m2 * lc2 * g * s12,
    )
}

fn pam_torque_at(pressures: &Vector2<f64>, model: &ArmModel) -> Vector2<f64> {
    let mut tau = Vector2::zeros();
    for j in 0..2 {
        let jp = &model.joints[j];
        // A muscle can only pull.
        let force = (jp.pam_gain * pressures[j] - jp.pam_offset).max(0.0);
        tau[j] = jp.pulley_radius * force;
    }
    tau
}

/// Joint torque (N*m) produced by the PAMs at the state's measured pressures.
pub fn pam_torque(state: &PlantState, model: &ArmModel) -> Vector2<f64> {
    pam_torque_at(&state.pressures(), model)
}

/// One exact exponential step of the first-order pressure lag
/// `dP/dt = (P_ref - P) / t_c`, clamped to `[0, PRESSURE_MAX]`.
///
/// `torque_rate_sign > 0` selects the rise time constant, anything else the
/// fall constant. With the affine force model the torque rate has the sign
/// of the pressure rate, so callers pass `pref - p`.
pub fn pressure_step(p: f64, pref: f64, torque_rate_sign: f64, dt: f64, model: &ArmModel) -> f64 {
    let tc = if torque_rate_sign > 0.0 { model.tc_rise } else { model.tc_fall };
    let next = pref + (p - pref) * (-dt / tc).exp();
    next.clamp(0.0, PRESSURE_MAX)
}

/// Joint accelerations from `M(theta) a = tau - C*omega - G - B*omega`.
fn joint_accel(
    theta: &Vector2<f64>,
    omega: &Vector2<f64>,
    pressures: &Vector2<f64>,
    model: &ArmModel,
) -> Vector2<f64> {
    let tau = pam_torque_at(pressures, model);
    let friction = Vector2::new(
        model.joints[0].viscous_friction * omega[0],
        model.joints[1].viscous_friction * omega[1],
    );
    let rhs = tau - coriolis_torque(theta, omega, model) - gravity_torque(theta, model) - friction;
    let m = mass_matrix(theta, model);
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Vector2::new(
        (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det,
        (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]) / det,
    )
}

/// Advance the plant one time step.
///
/// The rigid-body part integrates with fixed-step RK4; pressures follow the
/// exact exponential lag solution and are evaluated at the RK4 stage times so
/// the mechanical stages see the in-step pressure transient.
pub fn dynamics_step(state: &PlantState, u: &ControlInput, model: &ArmModel) -> Result<PlantState, PlantError> {
    let dt = model.dt;
    let p0 = state.pressures();
    let pref = u.to_vector();

    let tc = Vector2::new(
        if pref[0] - p0[0] > 0.0 { model.tc_rise } else { model.tc_fall },
        if pref[1] - p0[1] > 0.0 { model.tc_rise } else { model.tc_fall },
    );
    let p_at = |s: f64| {
        Vector2::new(
            pref[0] + (p0[0] - pref[0]) * (-s / tc[0]).exp(),
            pref[1] + (p0[1] - pref[1]) * (-s / tc[1]).exp(),
        )
    };
    let p_half = p_at(0.5 * dt);
    let p_end = p_at(dt);

    let theta0 = state.theta();
    let omega0 = state.omega();
    let deriv = |theta: Vector2<f64>, omega: Vector2<f64>, p: &Vector2<f64>| {
        (omega, joint_accel(&theta, &omega, p, model))
    };

    let (k1t, k1w) = deriv(theta0, omega0, &p0);
    let (k2t, k2w) = deriv(theta0 + k1t * (0.5 * dt), omega0 + k1w * (0.5 * dt), &p_half);
    let (k3t, k3w) = deriv(theta0 + k2t * (0.5 * dt), omega0 + k2w * (0.5 * dt), &p_half);
    let (k4t, k4w) = deriv(theta0 + k3t * dt, omega0 + k3w * dt, &p_end);

    let theta = theta0 + (k1t + k2t * 2.0 + k3t * 2.0 + k4t) * (dt / 6.0);
    let omega = omega0 + (k1w + k2w * 2.0 + k3w * 2.0 + k4w) * (dt / 6.0);

    let next = PlantState {
        theta1: theta[0],
        theta2: theta[1],
        omega1: omega[0],
        omega2: omega[1],
        p1: p_end[0].clamp(0.0, PRESSURE_MAX),
        p2: p_end[1].clamp(0.0, PRESSURE_MAX),
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(PlantError::NonFinite)
    }
}

/// Jacobians of [`dynamics_step`] with respect to state and control,
/// by central finite differences of the full step.
pub fn linearize(
    state: &PlantState,
    u: &ControlInput,
    model: &ArmModel,
) -> Result<(SMatrix<f64, 6, 6>, SMatrix<f64, 6, 2>), PlantError> {
    let h = JACOBIAN_STEP;
    let x0 = state.to_vector();
    let u0 = u.to_vector();

    let step_vec = |xv: SVector<f64, 6>, uv: Vector2<f64>| -> Result<SVector<f64, 6>, PlantError> {
        let s = PlantState::from_vector(&xv);
        let c = ControlInput::from_vector(&uv);
        dynamics_step(&s, &c, model).map(|n| n.to_vector())
    };

    let mut a = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..6 {
        let mut xp = x0;
        let mut xm = x0;
        xp[i] += h;
        xm[i] -= h;
        let fp = step_vec(xp, u0)?;
        let fm = step_vec(xm, u0)?;
        a.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    let mut b = SMatrix::<f64, 6, 2>::zeros();
    for i in 0..2 {
        let mut up = u0;
        let mut um = u0;
        up[i] += h;
        um[i] -= h;
        let fp = step_vec(x0, up)?;
        let fm = step_vec(x0, um)?;
        b.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    Ok((a, b))
}

/// Open-loop rollout of a control sequence from `x0`.
pub fn rollout(x0: &PlantState, controls: &[ControlInput], model: &ArmModel) -> Result<Trajectory, PlantError> {
    if controls.is_empty() {
        return Err(PlantError::EmptyControls);
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    for (k, u) in controls.iter().enumerate() {
        let next = dynamics_step(states.last().unwrap(), u, model)
            .map_err(|_| PlantError::NonFiniteAt { step: k })?;
        states.push(next);
    }
    Ok(Trajectory { states, controls: controls.to_vec(), dt: model.dt })
}

/// Pressures that statically hold `theta` (with zero velocity and `pref = p`).
///
/// Inverts the affine torque model against the gravity torque; fails when a
/// joint would need negative PAM force or pressure above the clamp.
pub fn gravity_hold(theta: &Vector2<f64>, model: &ArmModel) -> Result<ControlInput, PlantError> {
    let g = gravity_torque(theta, model);
    let mut p = [0.0; 2];
    for j in 0..2 {
        let jp = &model.joints[j];
        if g[j] < -1e-12 {
            return Err(PlantError::HoldInfeasible { joint: j + 1, torque: g[j] });
        }
        let force = g[j].max(0.0) / jp.pulley_radius;
        let pressure = (force + jp.pam_offset) / jp.pam_gain;
        if pressure > PRESSURE_MAX + 1e-12 {
            return Err(PlantError::HoldInfeasible { joint: j + 1, torque: g[j] });
        }
        p[j] = pressure.clamp(0.0, PRESSURE_MAX);
    }
    Ok(ControlInput::new(p[0], p[1]))
}

/// A state-feedback control law over the plant, indexed by time step.
///
/// Implementations must accept every `k < horizon()`; querying beyond the
/// horizon is a caller bug and may panic.
pub trait ControlLaw {
    fn horizon(&self) -> usize;
    fn control(&self, x: &PlantState, k: usize) -> ControlInput;
}

/// Closed-loop rollout applying `law` for `steps` steps.
pub fn closed_loop_rollout(
    law: &dyn ControlLaw,
    x0: &PlantState,
    steps: usize,
    model: &ArmModel,
) -> Result<Trajectory, PlantError> {
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    states.push(*x0);
    for k in 0..steps {
        let x = *states.last().unwrap();
        let u = law.control(&x, k);
        let next = dynamics_step(&x, &u, model).map_err(|_| PlantError::NonFiniteAt { step: k })?;
        states.push(next);
        controls.push(u);
    }
    Ok(Trajectory { states, controls, dt: model.dt })
}

/// A simulated state/control history: N+1 states and N controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<PlantState>,
    pub controls: Vec<ControlInput>,
    pub dt: f64,
}

pub const TRAJECTORY_CSV_HEADER: &str = "k,t,theta1,theta2,omega1,omega2,p1,p2,pref1,pref2";

impl Trajectory {
    /// Number of control steps N (states run 0..=N).
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self) -> &PlantState {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Write as CSV. The terminal row has no control; its pref cells are
    /// left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRAJECTORY_CSV_HEADER}")?;
        for (k, s) in self.states.iter().enumerate() {
            let t = k as f64 * self.dt;
            let (u1, u2) = match self.controls.get(k) {
                Some(u) => (fmt_g9(u.pref1), fmt_g9(u.pref2)),
                None => (String::new(), String::new()),
            };
            writeln!(
                w,
                "{k},{},{},{},{},{},{},{},{u1},{u2}",
                fmt_g9(t),
                fmt_g9(s.theta1),
                fmt_g9(s.theta2),
                fmt_g9(s.omega1),
                fmt_g9(s.omega2),
                fmt_g9(s.p1),
                fmt_g9(s.p2),
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, PlantError> {
        let bad = |msg: String| PlantError::CsvFormat(msg);
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .map_err(|e| bad(e.to_string()))?;
        if header.trim() != TRAJECTORY_CSV_HEADER {
            return Err(bad(format!("unexpected header `{header}`")));
        }
        let mut states = Vec::new();
        let mut controls = Vec::new();
        let mut times = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields = split_csv_line(&line);
            if fields.len() != 10 {
                return Err(bad(format!("row {row}: expected 10 fields, got {}", fields.len())));
            }
            let k: usize = fields[0]
                .parse()
                .map_err(|_| bad(format!("row {row}: bad index `{}`", fields[0])))?;
            if k != row {
                return Err(bad(format!("row {row}: non-contiguous index {k}")));
            }
            let num = |i: usize, name: &str| {
                parse_f64_field(&fields[i], name).map_err(|e| bad(format!("row {row}: {e}")))
            };
            times.push(num(1, "t")?);
            states.push(PlantState::new(
                num(2, "theta1")?,
                num(3, "theta2")?,
                num(4, "omega1")?,
                num(5, "omega2")?,
                num(6, "p1")?,
                num(7, "p2")?,
            ));
            if !fields[8].is_empty() || !fields[9].is_empty() {
                controls.push(ControlInput::new(num(8, "pref1")?, num(9, "pref2")?));
            }
        }
        if states.is_empty() {
            return Err(bad("no data rows".into()));
        }
        if controls.len() + 1 != states.len() {
            return Err(bad(format!(
                "{} states need {} controls, got {}",
                states.len(),
                states.len() - 1,
                controls.len()
            )));
        }
        let dt = if times.len() >= 2 { times[1] - times[0] } else { 0.0 };
        Ok(Trajectory { states, controls, dt })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> ArmModel {
        ArmModel::default()
    }

    #[test]
    fn default_model_is_valid() {
        model().validate().unwrap();
    }

    #[test]
    fn pam_torque_zero_pressure_zero_offset() {
        let state = PlantState::new(0.3, 0.5, 0.0, 0.0, 0.0, 0.0);
        let tau = pam_torque(&state, &model());
        assert_eq!(tau, Vector2::new(0.0, 0.0));
    }

    #[test]
    fn pam_torque_affine_evaluation() {
        // r = 0.05, a = 1000, b = 0, P = (0.4, 0.2) -> tau = (20, 10)
        let state = PlantState::new(0.0, 0.0, 0.0, 0.0, 0.4, 0.2);
        let tau = pam_torque(&state, &model());
        assert_relative_eq!(tau[0], 20.0, max_relative = 1e-12);
        assert_relative_eq!(tau[1], 10.0, max_relative = 1e-12);
    }

    #[test]
    fn pam_force_cannot_push() {
        let mut m = model();
        m.joints[0].pam_offset = 100.0;
        let state = PlantState::new(0.0, 0.0, 0.0, 0.0, 0.05, 0.0);
        // gain*P - offset = 50 - 100 < 0, clamped to zero force
        let tau = pam_torque(&state, &m);
        assert_eq!(tau[0], 0.0);
    }

    #[test]
    fn pressure_step_fixed_point() {
        let p = pressure_step(0.3, 0.3, 0.0, 0.01, &model());
        assert_eq!(p, 0.3);
    }

    #[test]
    fn pressure_step_exact_exponential() {
        // p = 0, pref = 0.8, dt = tc_rise = 0.08: p' = 0.8 (1 - e^-1)
        let p = pressure_step(0.0, 0.8, 1.0, 0.08, &model());
        assert_relative_eq!(p, 0.5056964470628461, max_relative = 1e-12);
    }

    #[test]
    fn pressure_step_clamps_overrange_target() {
        let m = model();
        let mut p = 0.0;
        for _ in 0..2000 {
            p = pressure_step(p, 1.2, 1.2 - p, m.dt, &m);
            assert!(p <= PRESSURE_MAX);
        }
        assert_relative_eq!(p, PRESSURE_MAX, max_relative = 1e-9);
    }

    #[test]
    fn pressure_step_uses_fall_constant_when_dropping() {
        let m = model();
        let rising = pressure_step(0.0, 0.4, 0.4, m.dt, &m);
        let falling = pressure_step(0.4, 0.0, -0.4, m.dt, &m);
        // tc_fall = 5x tc_rise, so the drop toward target is much slower.
        assert!((0.4 - falling) < (rising - 0.0));
        assert_relative_eq!(falling, 0.4 * (-0.01f64 / 0.4).exp(), max_relative = 1e-12);
    }

    #[test]
    fn hanging_equilibrium_is_fixed_point() {
        let m = model();
        // theta = (0, 0) has zero gravity torque; hold pressure is zero.
        let hold = gravity_hold(&Vector2::new(0.0, 0.0), &m).unwrap();
        let x0 = PlantState::new(0.0, 0.0, 0.0, 0.0, hold.pref1, hold.pref2);
        let next = dynamics_step(&x0, &hold, &m).unwrap();
        let err = (next.to_vector() - x0.to_vector()).amax();
        assert!(err < 1e-9, "equilibrium drifted by {err}");
    }

    #[test]
    fn raised_equilibrium_is_fixed_point() {
        let m = model();
        let theta = Vector2::new(0.0, std::f64::consts::FRAC_PI_2);
        let hold = gravity_hold(&theta, &m).unwrap();
        let x0 = PlantState::new(theta[0], theta[1], 0.0, 0.0, hold.pref1, hold.pref2);
        let next = dynamics_step(&x0, &hold, &m).unwrap();
        let err = (next.to_vector() - x0.to_vector()).amax();
        assert!(err < 1e-9, "equilibrium drifted by {err}");
    }

    #[test]
    fn free_rotation_advances_angle() {
        let mut m = model();
        m.gravity = 0.0;
        m.joints[0].viscous_friction = 0.0;
        m.joints[1].viscous_friction = 0.0;
        let x0 = PlantState::new(0.0, 0.0, 0.1, 0.0, 0.0, 0.0);
        let u = ControlInput::new(0.0, 0.0);
        let next = dynamics_step(&x0, &u, &m).unwrap();
        assert_relative_eq!(next.theta1, 0.1 * m.dt, epsilon = 1e-6);
    }

    #[test]
    fn rollout_rejects_empty_controls() {
        assert!(matches!(
            rollout(&PlantState::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0), &[], &model()),
            Err(PlantError::EmptyControls)
        ));
    }

    #[test]
    fn rollout_is_deterministic() {
        let m = model();
        let x0 = PlantState::new(0.1, 0.2, 0.0, 0.0, 0.1, 0.1);
        let controls: Vec<ControlInput> =
            (0..50).map(|k| ControlInput::new(0.2 + 0.001 * k as f64, 0.1)).collect();
        let a = rollout(&x0, &controls, &m).unwrap();
        let b = rollout(&x0, &controls, &m).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gravity_hold_matches_needed_torque() {
        let m = model();
        let theta = Vector2::new(0.4, 0.9);
        let hold = gravity_hold(&theta, &m).unwrap();
        let state = PlantState::new(theta[0], theta[1], 0.0, 0.0, hold.pref1, hold.pref2);
        let tau = pam_torque(&state, &m);
        let g = gravity_torque(&theta, &m);
        assert_relative_eq!(tau[0], g[0], max_relative = 1e-12);
        assert_relative_eq!(tau[1], g[1], max_relative = 1e-12);
    }

    #[test]
    fn linearize_theta_rows_have_kinematic_structure() {
        let m = model();
        let state = PlantState::new(0.2, 0.4, 0.5, -0.2, 0.2, 0.15);
        let u = ControlInput::new(0.25, 0.2);
        let (a, b) = linearize(&state, &u, &m).unwrap();
        // d theta' / d omega ~ dt * I for small dt
        assert_relative_eq!(a[(0, 2)], m.dt, max_relative = 1e-2);
        assert_relative_eq!(a[(1, 3)], m.dt, max_relative = 1e-2);
        // pressure rows carry the exponential lag factor
        let lag = (-m.dt / m.tc_rise).exp();
        assert_relative_eq!(a[(4, 4)], lag, max_relative = 1e-6);
        assert_relative_eq!(a[(5, 5)], lag, max_relative = 1e-6);
        // control columns of the pressure rows are nonzero
        assert!(b[(4, 0)].abs() > 1e-3);
        assert!(b[(5, 1)].abs() > 1e-3);
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let m = model();
        let x0 = PlantState::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let controls: Vec<ControlInput> = (0..5).map(|k| ControlInput::new(0.1 * k as f64, 0.05)).collect();
        let traj = rollout(&x0, &controls, &m).unwrap();
        let csv = traj.to_csv_string();
        let back = Trajectory::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(back.states.len(), traj.states.len());
        assert_eq!(back.controls.len(), traj.controls.len());
        assert_relative_eq!(back.dt, traj.dt, max_relative = 1e-9);
        for (a, b) in traj.states.iter().zip(back.states.iter()) {
            assert_relative_eq!(a.theta1, b.theta1, max_relative = 1e-8);
            assert_relative_eq!(a.omega2, b.omega2, max_relative = 1e-8);
            assert_relative_eq!(a.p1, b.p1, max_relative = 1e-8);
        }
    }
}
