//! Solver checks against independent dense oracles.

use ideam_qp::{CscMatrix, QpProblem, Settings, Solver, Status, WarmStart};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense_to_csc(m: &DMatrix<f64>) -> CscMatrix {
    let mut trips = Vec::new();
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if m[(r, c)] != 0.0 {
                trips.push((r, c, m[(r, c)]));
            }
        }
    }
    CscMatrix::from_triplets(m.nrows(), m.ncols(), &trips).unwrap()
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    m.transpose() * &m + DMatrix::identity(n, n) * 0.5
}

/// min ½xᵀPx + qᵀx s.t. Gx ≤ h, solved by trying every active set.
fn enumerate_active_sets(p: &DMatrix<f64>, q: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> Option<DVector<f64>> {
    let n = p.nrows();
    let m = g.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if act.len() > n {
            continue;
        }
        let k = n + act.len();
        let mut kkt = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        kkt.view_mut((0, 0), (n, n)).copy_from(p);
        for j in 0..n {
            rhs[j] = -q[j];
        }
        for (r, &i) in act.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = g[(i, j)];
                kkt[(j, n + r)] = g[(i, j)];
            }
            rhs[n + r] = h[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        let lam_ok = (0..act.len()).all(|r| sol[n + r] >= -1e-9);
        let feas = (g * &x - h).iter().all(|&v| v <= 1e-9);
        if lam_ok && feas {
            let obj = 0.5 * x.dot(&(p * &x)) + q.dot(&x);
            if best.as_ref().map_or(true, |(o, _)| obj < *o) {
                best = Some((obj, x));
            }
        }
    }
    best.map(|(_, x)| x)
}

fn ineq_problem(p: &DMatrix<f64>, q: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> QpProblem {
    let mut prob = QpProblem::unconstrained(dense_to_csc(p), q.iter().copied().collect());
    prob.a_ineq = dense_to_csc(g);
    prob.l_ineq = vec![f64::NEG_INFINITY; g.nrows()];
    prob.u_ineq = h.iter().copied().collect();
    prob
}

#[test]
fn random_qps_match_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut solver = Solver::default();
    for case in 0..100 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=10);
        let p = random_spd(&mut rng, n);
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
        let g = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        // x = 0 is strictly feasible, so the problem is feasible.
        let h = DVector::from_fn(m, |_, _| rng.gen_range(0.1..2.0));
        let expected = enumerate_active_sets(&p, &q, &g, &h).expect("oracle found no KKT point");
        let sol = solver.solve(&ineq_problem(&p, &q, &g, &h)).unwrap();
        assert_eq!(sol.status, Status::Optimal, "case {case}");
        for j in 0..n {
            assert!(
                (sol.x[j] - expected[j]).abs() < 1e-4,
                "case {case} var {j}: {} vs {}",
                sol.x[j],
                expected[j]
            );
        }
    }
}

/// Builds a QP whose optimum is known by construction: choose x*, an active
/// set with positive multipliers, and solve stationarity for q.
#[test]
fn planted_optimum_larger_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut solver = Solver::default();
    for case in 0..100 {
        let n = rng.gen_range(2..=20);
        let m = rng.gen_range(1..=40);
        let n_eq = rng.gen_range(0..=(n / 3));
        let p = random_spd(&mut rng, n);
        let x_star = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        let g = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let a_eq = DMatrix::from_fn(n_eq, n, |_, _| rng.gen_range(-1.0..1.0));
        let gx = &g * &x_star;
        let max_active = (n - n_eq).min(m);
        let mut lam = DVector::zeros(m);
        let mut upper = DVector::zeros(m);
        let mut lower = DVector::zeros(m);
        for i in 0..m {
            let active = i < max_active && rng.gen_bool(0.5);
            if active {
                // active at the upper side with a positive multiplier
                lam[i] = rng.gen_range(0.1..2.0);
                upper[i] = gx[i];
                lower[i] = gx[i] - rng.gen_range(0.5..3.0);
            } else {
                upper[i] = gx[i] + rng.gen_range(0.1..3.0);
                lower[i] = if rng.gen_bool(0.5) { f64::NEG_INFINITY } else { gx[i] - rng.gen_range(0.1..3.0) };
            }
        }
        let nu = DVector::from_fn(n_eq, |_, _| rng.gen_range(-2.0..2.0));
        let q = -(&p * &x_star) - g.transpose() * &lam - a_eq.transpose() * &nu;

        let mut prob = QpProblem::unconstrained(dense_to_csc(&p), q.iter().copied().collect());
        prob.a_ineq = dense_to_csc(&g);
        prob.l_ineq = lower.iter().copied().collect();
        prob.u_ineq = upper.iter().copied().collect();
        prob.a_eq = dense_to_csc(&a_eq);
        prob.b_eq = (&a_eq * &x_star).iter().copied().collect();
        let sol = solver.solve(&prob).unwrap();
        assert_eq!(sol.status, Status::Optimal, "case {case}");
        for j in 0..n {
            assert!((sol.x[j] - x_star[j]).abs() < 1e-4, "case {case} var {j}: {} vs {}", sol.x[j], x_star[j]);
        }
    }
}

#[test]
fn contradictory_rows_are_flagged_infeasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut solver = Solver::default();
    for case in 0..30 {
        let n = rng.gen_range(2..=10);
        let m = rng.gen_range(2..=15);
        let p = random_spd(&mut rng, n);
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mut g = DMatrix::from_fn(m + 2, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut h = DVector::from_fn(m + 2, |_, _| rng.gen_range(0.5..2.0));
        // aᵀx ≤ b and -aᵀx ≤ -(b + gap)  ⇔  aᵀx ≥ b + gap
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        for j in 0..n {
            g[(m, j)] = a[j];
            g[(m + 1, j)] = -a[j];
        }
        h[m] = b;
        h[m + 1] = -(b + rng.gen_range(0.5..2.0));
        let sol = solver.solve(&ineq_problem(&p, &q, &g, &h)).unwrap();
        assert_eq!(sol.status, Status::PrimalInfeasible, "case {case}");
    }
}

#[test]
fn scaling_cost_and_rows_leaves_argmin_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut solver = Solver::default();
    for _ in 0..20 {
        let n = rng.gen_range(2..=8);
        let m = rng.gen_range(2..=12);
        let p = random_spd(&mut rng, n);
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
        let g = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = DVector::from_fn(m, |_, _| rng.gen_range(0.1..2.0));
        let prob = ineq_problem(&p, &q, &g, &h);
        let base = solver.solve(&prob).unwrap();
        for (cost, rows) in [(10.0, 1.0), (0.01, 100.0), (1e3, 1e-2)] {
            let scaled = solver.solve(&prob.scaled(cost, rows)).unwrap();
            assert_eq!(scaled.status, Status::Optimal);
            for j in 0..n {
                assert!((scaled.x[j] - base.x[j]).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn identical_inputs_give_identical_bits() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_spd(&mut rng, 6);
    let q = DVector::from_fn(6, |_, _| rng.gen_range(-5.0..5.0));
    let g = DMatrix::from_fn(9, 6, |_, _| rng.gen_range(-1.0..1.0));
    let h = DVector::from_fn(9, |_, _| rng.gen_range(0.1..2.0));
    let mut prob = ineq_problem(&p, &q, &g, &h);
    prob.warm_start = Some(WarmStart { x: vec![0.1; 6], y: None });
    let a = Solver::default().solve(&prob).unwrap();
    let b = Solver::default().solve(&prob).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.y, b.y);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn warm_start_from_solution_converges_quickly() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut solver = Solver::default();
    for _ in 0..10 {
        let n = 12;
        let p = random_spd(&mut rng, n);
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
        let g = DMatrix::from_fn(20, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = DVector::from_fn(20, |_, _| rng.gen_range(0.1..2.0));
        let mut prob = ineq_problem(&p, &q, &g, &h);
        let cold = solver.solve(&prob).unwrap();
        prob.warm_start = Some(WarmStart { x: cold.x.clone(), y: Some(cold.y.clone()) });
        let warm = solver.solve(&prob).unwrap();
        assert_eq!(warm.status, Status::Optimal);
        assert!(warm.iterations <= cold.iterations, "{} > {}", warm.iterations, cold.iterations);
    }
}

/// The best combined residual seen in each 50-iteration window never gets
/// worse than in the window before it.
#[test]
fn windowed_residual_trend_is_non_increasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let settings = Settings { check_interval: 1, polish: false, eps_abs: 1e-9, eps_rel: 1e-9, max_iter: 1000, ..Settings::default() };
    let mut solver = Solver::new(settings);
    for _ in 0..10 {
        let n = 15;
        let p = random_spd(&mut rng, n);
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
        let g = DMatrix::from_fn(30, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = DVector::from_fn(30, |_, _| rng.gen_range(0.1..2.0));
        let sol = solver.solve(&ineq_problem(&p, &q, &g, &h)).unwrap();
        let mins: Vec<f64> = sol
            .residual_history
            .chunks(50)
            .filter(|c| c.len() == 50)
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let mut best = f64::INFINITY;
        for w in mins {
            assert!(w <= best * (1.0 + 1e-9) || w < 1.0, "window minimum rose: {w} after {best}");
            best = best.min(w);
        }
    }
}
