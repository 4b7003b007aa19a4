//! Ego dynamic bicycle model in Frenet coordinates, its Euler linearization,
//! and the kinematic model driven by surrounding vehicles.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::track::FrenetPose;

pub const GRAVITY: f64 = 9.81;
/// Below this longitudinal speed slip angles are undefined.
pub const MIN_SLIP_SPEED: f64 = 0.1;

pub const STATE_DIM: usize = 6;
pub const INPUT_DIM: usize = 2;
pub type StateVec = SVector<f64, STATE_DIM>;
pub type InputVec = SVector<f64, INPUT_DIM>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VehicleError {
    #[error("longitudinal speed {v_x} m/s is below the slip-angle threshold")]
    LowSpeed { v_x: f64 },
    #[error("Frenet denominator 1 - kappa*e_y = {0} is not positive")]
    FrenetSingular(f64),
}

/// `[v_x, v_y, w, s, e_y, e_psi]`
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoState {
    pub v_x: f64,
    pub v_y: f64,
    pub w: f64,
    pub s: f64,
    pub e_y: f64,
    pub e_psi: f64,
}

impl EgoState {
    pub fn to_vec(&self) -> StateVec {
        StateVec::new(self.v_x, self.v_y, self.w, self.s, self.e_y, self.e_psi)
    }

    pub fn from_vec(v: &StateVec) -> Self {
        Self { v_x: v[0], v_y: v[1], w: v[2], s: v[3], e_y: v[4], e_psi: v[5] }
    }

    pub fn pose(&self) -> FrenetPose {
        FrenetPose { s: self.s, e_y: self.e_y, e_psi: self.e_psi }
    }
}

/// `[a_x, delta]`
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub a_x: f64,
    pub delta: f64,
}

impl ControlInput {
    pub fn to_vec(&self) -> InputVec {
        InputVec::new(self.a_x, self.delta)
    }

    pub fn from_vec(v: &InputVec) -> Self {
        Self { a_x: v[0], delta: v[1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChassisParams {
    pub mass: f64,
    pub i_z: f64,
    pub l_f: f64,
    pub l_r: f64,
    pub length: f64,
    pub width: f64,
    pub b_f: f64,
    pub c_f: f64,
    pub d_f: f64,
    pub b_r: f64,
    pub c_r: f64,
    pub d_r: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub delta_max: f64,
}

impl Default for ChassisParams {
    fn default() -> Self {
        let (mass, l_f, l_r) = (1292.0, 1.56, 1.04);
        let wheelbase = l_f + l_r;
        Self {
            mass,
            i_z: 1343.1,
            l_f,
            l_r,
            length: 3.5,
            width: 1.8,
            // B is kept low enough that the Euler prediction model at 0.1 s
            // stays stable at traffic speeds.
            b_f: 2.0,
            c_f: 1.9,
            d_f: 0.9 * mass * GRAVITY * l_r / wheelbase,
            b_r: 2.0,
            c_r: 1.9,
            d_r: 0.9 * mass * GRAVITY * l_f / wheelbase,
            a_min: -3.0,
            a_max: 3.0,
            delta_max: 0.44,
        }
    }
}

impl ChassisParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("mass", self.mass),
            ("i_z", self.i_z),
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("length", self.length),
            ("width", self.width),
            ("b_f", self.b_f),
            ("c_f", self.c_f),
            ("d_f", self.d_f),
            ("b_r", self.b_r),
            ("c_r", self.c_r),
            ("d_r", self.d_r),
            ("a_max", self.a_max),
            ("delta_max", self.delta_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("chassis.{name} must be positive, got {v}"));
            }
        }
        if self.a_min >= 0.0 {
            return Err("chassis.a_min must be negative".into());
        }
        if self.l_f + self.l_r > self.length {
            return Err("wheelbase exceeds vehicle length".into());
        }
        Ok(())
    }

    /// Length of the body diagonal.
    pub fn diagonal(&self) -> f64 {
        self.length.hypot(self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TireForces {
    pub f_fy: f64,
    pub f_ry: f64,
    pub alpha_f: f64,
    pub alpha_r: f64,
}

fn magic(b: f64, c: f64, d: f64, alpha: f64) -> f64 {
    2.0 * d * (c * (b * alpha).atan()).sin()
}

fn magic_slope(b: f64, c: f64, d: f64, alpha: f64) -> f64 {
    let ba = b * alpha;
    2.0 * d * (c * ba.atan()).cos() * c * b / (1.0 + ba * ba)
}

/// Front and rear lateral forces from the magic formula.
pub fn tire_forces(state: &EgoState, delta_f: f64, p: &ChassisParams) -> Result<TireForces, VehicleError> {
    if !(state.v_x > MIN_SLIP_SPEED) {
        return Err(VehicleError::LowSpeed { v_x: state.v_x });
    }
    let alpha_f = delta_f - ((p.l_f * state.w + state.v_y) / state.v_x).atan();
    let alpha_r = ((p.l_r * state.w - state.v_y) / state.v_x).atan();
    Ok(TireForces {
        f_fy: magic(p.b_f, p.c_f, p.d_f, alpha_f),
        f_ry: magic(p.b_r, p.c_r, p.d_r, alpha_r),
        alpha_f,
        alpha_r,
    })
}

/// Continuous-time dynamics `f(x, u)` at curvature `kappa`. Below the slip
/// threshold the lateral forces are taken as zero.
pub fn ego_derivative(state: &EgoState, u: &ControlInput, kappa: f64, p: &ChassisParams) -> Result<StateVec, VehicleError> {
    let den = 1.0 - kappa * state.e_y;
    if !(den > 0.0) {
        return Err(VehicleError::FrenetSingular(den));
    }
    let (f_fy, f_ry) = match tire_forces(state, u.delta, p) {
        Ok(t) => (t.f_fy, t.f_ry),
        Err(_) => (0.0, 0.0),
    };
    let EgoState { v_x, v_y, w, e_psi, .. } = *state;
    let (sd, cd) = u.delta.sin_cos();
    let (se, ce) = e_psi.sin_cos();
    let s_dot = (v_x * ce - v_y * se) / den;
    Ok(StateVec::new(
        u.a_x - f_fy * sd / p.mass + w * v_y,
        (f_fy * cd + f_ry) / p.mass - w * v_x,
        (p.l_f * f_fy * cd - p.l_r * f_ry) / p.i_z,
        s_dot,
        v_x * se + v_y * ce,
        w - kappa * s_dot,
    ))
}

/// Analytic Jacobians `(∂f/∂x, ∂f/∂u)`.
pub fn ego_jacobians(
    state: &EgoState,
    u: &ControlInput,
    kappa: f64,
    p: &ChassisParams,
) -> Result<(SMatrix<f64, 6, 6>, SMatrix<f64, 6, 2>), VehicleError> {
    let den = 1.0 - kappa * state.e_y;
    if !(den > 0.0) {
        return Err(VehicleError::FrenetSingular(den));
    }
    let EgoState { v_x, v_y, w, e_y: _, e_psi, .. } = *state;
    let delta = u.delta;
    let (sd, cd) = delta.sin_cos();
    let (se, ce) = e_psi.sin_cos();
    let mut jx = SMatrix::<f64, 6, 6>::zeros();
    let mut ju = SMatrix::<f64, 6, 2>::zeros();

    // tire forces and their gradients with respect to (v_x, v_y, w, delta)
    let (ff, dff, dfr) = match tire_forces(state, delta, p) {
        Ok(t) => {
            let qf = (p.l_f * w + v_y) / v_x;
            let qr = (p.l_r * w - v_y) / v_x;
            let gf = 1.0 / (1.0 + qf * qf);
            let gr = 1.0 / (1.0 + qr * qr);
            let sf = magic_slope(p.b_f, p.c_f, p.d_f, t.alpha_f);
            let sr = magic_slope(p.b_r, p.c_r, p.d_r, t.alpha_r);
            // dα_f / d(v_x, v_y, w, δ), dα_r / d(v_x, v_y, w, δ)
            let daf = [gf * qf / v_x, -gf / v_x, -gf * p.l_f / v_x, 1.0];
            let dar = [-gr * qr / v_x, -gr / v_x, gr * p.l_r / v_x, 0.0];
            (t.f_fy, daf.map(|d| sf * d), dar.map(|d| sr * d))
        }
        Err(_) => (0.0, [0.0; 4], [0.0; 4]),
    };

    for j in 0..3 {
        jx[(0, j)] = -sd * dff[j] / p.mass;
        jx[(1, j)] = (cd * dff[j] + dfr[j]) / p.mass;
        jx[(2, j)] = (p.l_f * cd * dff[j] - p.l_r * dfr[j]) / p.i_z;
    }
    jx[(0, 1)] += w;
    jx[(0, 2)] += v_y;
    jx[(1, 0)] -= w;
    jx[(1, 2)] -= v_x;

    ju[(0, 0)] = 1.0;
    ju[(0, 1)] = -(dff[3] * sd + ff * cd) / p.mass;
    ju[(1, 1)] = (dff[3] * cd - ff * sd + dfr[3]) / p.mass;
    ju[(2, 1)] = p.l_f * (dff[3] * cd - ff * sd) / p.i_z - p.l_r * dfr[3] / p.i_z;

    // ṡ
    let num = v_x * ce - v_y * se;
    jx[(3, 0)] = ce / den;
    jx[(3, 1)] = -se / den;
    jx[(3, 4)] = num * kappa / (den * den);
    jx[(3, 5)] = (-v_x * se - v_y * ce) / den;
    // ė_y
    jx[(4, 0)] = se;
    jx[(4, 1)] = ce;
    jx[(4, 5)] = v_x * ce - v_y * se;
    // ė_ψ = w − κ ṡ
    for j in 0..6 {
        jx[(5, j)] = -kappa * jx[(3, j)];
    }
    jx[(5, 2)] += 1.0;
    Ok((jx, ju))
}

pub fn euler_step(state: &EgoState, u: &ControlInput, kappa: f64, p: &ChassisParams, dt: f64) -> Result<EgoState, VehicleError> {
    let f = ego_derivative(state, u, kappa, p)?;
    Ok(EgoState::from_vec(&(state.to_vec() + f * dt)))
}

/// Discrete affine model `x⁺ = A x + B u + C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedModel {
    pub a: SMatrix<f64, 6, 6>,
    pub b: SMatrix<f64, 6, 2>,
    pub c: StateVec,
    pub dt: f64,
}

impl LinearizedModel {
    pub fn step(&self, x: &StateVec, u: &InputVec) -> StateVec {
        self.a * x + self.b * u + self.c
    }
}

pub fn discretize_linearize(
    op_state: &EgoState,
    op_input: &ControlInput,
    kappa: f64,
    p: &ChassisParams,
    dt: f64,
) -> Result<LinearizedModel, VehicleError> {
    let f = ego_derivative(op_state, op_input, kappa, p)?;
    let (jx, ju) = ego_jacobians(op_state, op_input, kappa, p)?;
    let x = op_state.to_vec();
    let u = op_input.to_vec();
    Ok(LinearizedModel {
        a: SMatrix::<f64, 6, 6>::identity() + jx * dt,
        b: ju * dt,
        c: (f - jx * x - ju * u) * dt,
        dt,
    })
}

/// A surrounding vehicle in global coordinates with its cached Frenet pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurroundingState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub beta: f64,
    pub lane: usize,
    pub frenet: FrenetPose,
}

/// One Euler step of the kinematic bicycle model.
pub fn kinematic_step(state: &SurroundingState, a: f64, delta_f: f64, p: &ChassisParams, dt: f64) -> SurroundingState {
    let beta = (p.l_r / (p.l_f + p.l_r) * delta_f.tan()).atan();
    let mut next = *state;
    next.x += state.v * (state.psi + beta).cos() * dt;
    next.y += state.v * (state.psi + beta).sin() * dt;
    next.psi += state.v / p.l_r * beta.sin() * dt;
    next.v = (state.v + a * dt).max(0.0);
    next.beta = beta;
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ChassisParams {
        ChassisParams::default()
    }

    #[test]
    fn zero_slip_gives_zero_force() {
        let s = EgoState { v_x: 10.0, ..Default::default() };
        let t = tire_forces(&s, 0.0, &p()).unwrap();
        assert_eq!((t.alpha_f, t.alpha_r, t.f_fy, t.f_ry), (0.0, 0.0, 0.0, 0.0));
        let t = tire_forces(&s, 0.1, &p()).unwrap();
        assert!((t.alpha_f - 0.1).abs() < 1e-15);
        assert!(tire_forces(&EgoState::default(), 0.0, &p()).is_err());
    }

    #[test]
    fn steady_straight_driving() {
        let s = EgoState { v_x: 12.0, s: 5.0, ..Default::default() };
        let d = ego_derivative(&s, &ControlInput::default(), 0.0, &p()).unwrap();
        assert_eq!(d, StateVec::new(0.0, 0.0, 0.0, 12.0, 0.0, 0.0));
        let d = ego_derivative(&s, &ControlInput { a_x: 1.0, delta: 0.0 }, 0.0, &p()).unwrap();
        assert_eq!(d, StateVec::new(1.0, 0.0, 0.0, 12.0, 0.0, 0.0));
    }

    #[test]
    fn frenet_singularity_is_reported() {
        let s = EgoState { v_x: 10.0, e_y: 10.0, ..Default::default() };
        assert!(matches!(
            ego_derivative(&s, &ControlInput::default(), 0.1, &p()),
            Err(VehicleError::FrenetSingular(_))
        ));
    }

    #[test]
    fn linearization_is_exact_at_the_expansion_point() {
        let s = EgoState { v_x: 11.0, v_y: 0.3, w: 0.1, s: 20.0, e_y: 0.5, e_psi: 0.05 };
        let u = ControlInput { a_x: 0.7, delta: 0.04 };
        let m = discretize_linearize(&s, &u, 0.1, &p(), 0.1).unwrap();
        let lin = m.step(&s.to_vec(), &u.to_vec());
        let nl = euler_step(&s, &u, 0.1, &p(), 0.1).unwrap().to_vec();
        assert!((lin - nl).amax() < 1e-12);
    }

    #[test]
    fn s_row_on_a_straight_at_zero_deviation() {
        let s = EgoState { v_x: 9.0, ..Default::default() };
        let m = discretize_linearize(&s, &ControlInput::default(), 0.0, &p(), 0.1).unwrap();
        let mut x = s.to_vec();
        x[3] = 7.0;
        let next = m.step(&x, &InputVec::zeros());
        assert!((next[3] - (7.0 + 0.1 * 9.0)).abs() < 1e-12);
    }

    #[test]
    fn kinematic_zero_input_and_acceleration() {
        let s = SurroundingState {
            x: 1.0,
            y: 2.0,
            psi: 0.3,
            v: 10.0,
            beta: 0.0,
            lane: 1,
            frenet: FrenetPose { s: 0.0, e_y: 0.0, e_psi: 0.0 },
        };
        let n = kinematic_step(&s, 0.0, 0.0, &p(), 0.1);
        assert!((n.x - (1.0 + 0.3f64.cos())).abs() < 1e-12);
        assert!((n.y - (2.0 + 0.3f64.sin())).abs() < 1e-12);
        assert_eq!((n.psi, n.v), (0.3, 10.0));
        let n = kinematic_step(&s, 1.0, 0.0, &p(), 0.1);
        assert!((n.v - 10.1).abs() < 1e-12);
    }

    #[test]
    fn default_params_are_valid() {
        assert!(p().validate().is_ok());
        assert!((p().diagonal() - 3.5f64.hypot(1.8)).abs() < 1e-12);
    }
}
