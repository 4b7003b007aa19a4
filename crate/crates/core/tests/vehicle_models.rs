use ideam_core::track::FrenetPose;
use ideam_core::vehicle::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params() -> ChassisParams {
    ChassisParams::default()
}

#[test]
fn front_force_matches_symbolic_evaluation() {
    // 2·D_f·sin(C·atan(B·0.05)) evaluated with sympy at default coefficients
    let s = EgoState { v_x: 10.0, ..Default::default() };
    let t = tire_forces(&s, 0.05, &params()).unwrap();
    assert!((t.f_fy - 1717.8189036900222642).abs() < 1e-9);
}

#[test]
fn derivative_on_a_curve_matches_symbolic_evaluation() {
    let s = EgoState { v_x: 12.0, v_y: 0.4, w: 0.15, s: 30.0, e_y: 0.5, e_psi: 0.05 };
    let u = ControlInput { a_x: 0.8, delta: 0.06 };
    let d = ego_derivative(&s, &u, 0.1, &params()).unwrap();
    let expected = [
        0.84838892938357861543,
        -2.4239632542587214643,
        1.1076552902060936073,
        12.594748902138235397,
        0.99925013540612644416,
        -1.1094748902138235397,
    ];
    for i in 0..6 {
        assert!((d[i] - expected[i]).abs() < 1e-10, "component {i}: {} vs {}", d[i], expected[i]);
    }
}

fn rk4(state: &EgoState, u: &ControlInput, kappa: f64, dt: f64) -> StateVec {
    let p = params();
    let f = |x: &StateVec| ego_derivative(&EgoState::from_vec(x), u, kappa, &p).unwrap();
    let x = state.to_vec();
    let k1 = f(&x);
    let k2 = f(&(x + k1 * (dt / 2.0)));
    let k3 = f(&(x + k2 * (dt / 2.0)));
    let k4 = f(&(x + k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

#[test]
fn euler_local_error_is_second_order() {
    let s = EgoState { v_x: 14.0, v_y: 0.2, w: 0.1, s: 0.0, e_y: 0.3, e_psi: 0.02 };
    let u = ControlInput { a_x: 1.0, delta: 0.03 };
    let err = |dt: f64| {
        // fine RK4 reference over one step
        let mut x = s;
        let n = 100;
        for _ in 0..n {
            x = EgoState::from_vec(&rk4(&x, &u, 0.05, dt / n as f64));
        }
        let e = euler_step(&s, &u, 0.05, &params(), dt).unwrap();
        (e.to_vec() - x.to_vec()).norm()
    };
    let (e1, e2) = (err(0.02), err(0.01));
    let ratio = e1 / e2;
    assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    assert_eq!(euler_step(&s, &u, 0.05, &params(), 0.0).unwrap(), s);
}

#[test]
fn constant_speed_on_a_straight() {
    let mut s = EgoState { v_x: 15.0, ..Default::default() };
    for _ in 0..100 {
        s = euler_step(&s, &ControlInput::default(), 0.0, &params(), 0.1).unwrap();
    }
    assert_eq!(s.v_x, 15.0);
    assert!((s.s - 150.0).abs() < 1e-9);
}

fn random_point(rng: &mut ChaCha8Rng) -> (EgoState, ControlInput, f64) {
    let s = EgoState {
        v_x: rng.gen_range(4.0..22.0),
        v_y: rng.gen_range(-1.0..1.0),
        w: rng.gen_range(-0.5..0.5),
        s: rng.gen_range(0.0..300.0),
        e_y: rng.gen_range(-5.0..5.0),
        e_psi: rng.gen_range(-0.3..0.3),
    };
    let u = ControlInput { a_x: rng.gen_range(-3.0..3.0), delta: rng.gen_range(-0.44..0.44) };
    (s, u, rng.gen_range(-0.1..0.1))
}

/// Central differences of the one-step Euler map against `A` and `B`.
#[test]
fn jacobians_match_central_differences() {
    let p = params();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dt = 0.1;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (s, u, kappa) = random_point(&mut rng);
        let m = discretize_linearize(&s, &u, kappa, &p, dt).unwrap();
        let step = |x: &StateVec, uu: &InputVec| {
            euler_step(&EgoState::from_vec(x), &ControlInput::from_vec(uu), kappa, &p, dt).unwrap().to_vec()
        };
        let x0 = s.to_vec();
        let u0 = u.to_vec();
        for j in 0..6 {
            let mut xp = x0;
            let mut xm = x0;
            xp[j] += h;
            xm[j] -= h;
            let col = (step(&xp, &u0) - step(&xm, &u0)) / (2.0 * h);
            for i in 0..6 {
                worst = worst.max(rel_err(m.a[(i, j)], col[i]));
            }
        }
        for j in 0..2 {
            let mut up = u0;
            let mut um = u0;
            up[j] += h;
            um[j] -= h;
            let col = (step(&x0, &up) - step(&x0, &um)) / (2.0 * h);
            for i in 0..6 {
                worst = worst.max(rel_err(m.b[(i, j)], col[i]));
            }
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

#[test]
fn kinematic_constant_steer_follows_a_circle() {
    let p = params();
    let delta = 0.05;
    let beta = (p.l_r / (p.l_f + p.l_r) * f64::tan(delta)).atan();
    let radius = p.l_r / beta.sin();
    let v = 10.0;
    let err = |dt: f64, steps: usize| {
        let mut st = SurroundingState {
            x: 0.0,
            y: 0.0,
            psi: 0.0,
            v,
            beta: 0.0,
            lane: 1,
            frenet: FrenetPose { s: 0.0, e_y: 0.0, e_psi: 0.0 },
        };
        for _ in 0..steps {
            st = kinematic_step(&st, 0.0, delta, &p, dt);
        }
        // closed form: velocity direction ψ+β rotates at v/R about a fixed center
        let t = dt * steps as f64;
        let theta = v / radius * t;
        let cx = -radius * beta.sin();
        let cy = radius * beta.cos();
        let x = cx + radius * (theta + beta).sin();
        let y = cy - radius * (theta + beta).cos();
        ((st.x - x).powi(2) + (st.y - y).powi(2)).sqrt()
    };
    let e1 = err(0.1, 100);
    let e2 = err(0.05, 200);
    assert!(e1 < 1.0, "error {e1}");
    let ratio = e1 / e2;
    assert!(ratio > 1.8 && ratio < 2.2, "first-order convergence ratio {ratio}");
}
