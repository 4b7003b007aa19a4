//! Operator-splitting (ADMM) iterations on the stacked form
//! `min ½xᵀPx + qᵀx s.t. l ≤ Ax ≤ u`.
//!
//! Each iteration solves one quasi-definite KKT system whose factorization is
//! cached and only recomputed when the step size ρ changes. Data are
//! equilibrated with modified Ruiz scaling; termination is judged on the
//! unscaled residuals.

use std::time::Instant;

use crate::csc::CscMatrix;
use crate::ldl::{minimum_degree_order, PermutedLdl};
use crate::problem::{QpProblem, StackedForm};
use crate::QpError;

const INF_BOUND: f64 = 1e20;
const RHO_EQ_SCALE: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter in (0, 2).
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
    pub max_iter: usize,
    pub scaling_iters: usize,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    /// Refactor only when ρ moves by more than this factor.
    pub adaptive_rho_tolerance: f64,
    /// Residuals and infeasibility are checked every this many iterations.
    pub check_interval: usize,
    pub polish: bool,
    pub polish_delta: f64,
    pub polish_refine_iter: usize,
    /// Attempt a polish every this many iterations before convergence and
    /// stop if it satisfies the tolerances (0 disables).
    pub early_polish_interval: usize,
    pub verify_convexity: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            eps_prim_inf: 1e-5,
            eps_dual_inf: 1e-5,
            max_iter: 4000,
            scaling_iters: 10,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            adaptive_rho_tolerance: 5.0,
            check_interval: 5,
            polish: true,
            polish_delta: 1e-6,
            early_polish_interval: 100,
            polish_refine_iter: 3,
            verify_convexity: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    MaxIterations,
    PrimalInfeasible,
    DualInfeasible,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Status::Optimal => "optimal",
            Status::MaxIterations => "max_iterations",
            Status::PrimalInfeasible => "primal_infeasible",
            Status::DualInfeasible => "dual_infeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Duals in the stacked row layout (see [`QpProblem::stacked`]).
    pub y: Vec<f64>,
    pub status: Status,
    pub prim_res: f64,
    pub dual_res: f64,
    /// Primal tolerance `eps_abs + eps_rel·max(‖Ax‖∞, ‖z‖∞)` at exit; every
    /// row of the returned point is violated by at most `prim_res`.
    pub prim_tol: f64,
    pub iterations: usize,
    pub solve_time_ms: f64,
    pub polished: bool,
    pub rho: f64,
    pub refactorizations: usize,
    /// `max(prim_res/eps_prim, dual_res/eps_dual)` at every residual check.
    pub residual_history: Vec<f64>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

/// Checks the standard certificate of primal infeasibility for
/// `l ≤ Ax ≤ u`: a dual direction `δy` with `Aᵀδy ≈ 0` and
/// `uᵀ max(δy, 0) + lᵀ min(δy, 0) < 0`.
pub fn infeasibility_certificate(a: &CscMatrix, l: &[f64], u: &[f64], delta_y: &[f64], eps: f64) -> bool {
    let dy: Vec<f64> = delta_y
        .iter()
        .zip(l.iter().zip(u))
        .map(|(&d, (&lo, &hi))| {
            let mut d = d;
            if hi >= INF_BOUND {
                d = d.min(0.0);
            }
            if lo <= -INF_BOUND {
                d = d.max(0.0);
            }
            d
        })
        .collect();
    let norm_dy = inf_norm(&dy);
    if norm_dy <= eps {
        return false;
    }
    let mut aty = vec![0.0; a.ncols];
    a.tr_mul_vec(&dy, &mut aty);
    if inf_norm(&aty) > eps * norm_dy {
        return false;
    }
    let support: f64 = dy
        .iter()
        .zip(l.iter().zip(u))
        .map(|(&d, (&lo, &hi))| if d > 0.0 { hi * d } else if d < 0.0 { lo * d } else { 0.0 })
        .sum();
    support < -eps * norm_dy
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn clamp_bound(v: f64) -> f64 {
    v.clamp(-INF_BOUND, INF_BOUND)
}

struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

/// Modified Ruiz equilibration of `[P Aᵀ; A 0]` plus a cost scale.
fn equilibrate(p: &mut CscMatrix, q: &mut [f64], a: &mut CscMatrix, iters: usize) -> Scaling {
    let n = q.len();
    let m = a.nrows;
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    let limit = |x: f64| {
        if x < SCALE_MIN {
            1.0
        } else {
            x.min(SCALE_MAX)
        }
    };
    for _ in 0..iters {
        // P is stored as an upper triangle; column norms need both halves.
        let mut pcol = p.col_inf_norms();
        for (r, _, v) in p.triplets() {
            pcol[r] = pcol[r].max(v.abs());
        }
        let acol = a.col_inf_norms();
        let dt: Vec<f64> = (0..n).map(|j| 1.0 / limit(pcol[j].max(acol[j])).sqrt()).collect();
        let et: Vec<f64> = a.row_inf_norms().into_iter().map(|r| 1.0 / limit(r).sqrt()).collect();
        p.scale(&dt, &dt);
        a.scale(&et, &dt);
        for j in 0..n {
            q[j] *= dt[j];
            d[j] *= dt[j];
        }
        for i in 0..m {
            e[i] *= et[i];
        }

        let mut pcol = p.col_inf_norms();
        for (r, _, v) in p.triplets() {
            pcol[r] = pcol[r].max(v.abs());
        }
        let mean = if n > 0 { pcol.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let ct = 1.0 / limit(mean.max(inf_norm(q)));
        p.values.iter_mut().for_each(|v| *v *= ct);
        q.iter_mut().for_each(|v| *v *= ct);
        c *= ct;
    }
    Scaling { d, e, c }
}

struct Cached {
    pattern: u64,
    perm: Vec<usize>,
}

/// ADMM solver instance. Owns workspace buffers and the cached ordering of
/// the KKT pattern from the previous solve.
pub struct Solver {
    pub settings: Settings,
    cache: Option<Cached>,
}

impl Default for Solver {
    fn default() -> Self {
        Self::new(Settings::default())
    }
}

struct Workspace {
    n: usize,
    m: usize,
    p: CscMatrix,
    q: Vec<f64>,
    a: CscMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    scaling: Scaling,
    rho: Vec<f64>,
}

impl Workspace {
    fn kkt(&self, sigma: f64) -> CscMatrix {
        let (n, m) = (self.n, self.m);
        let mut trips = Vec::with_capacity(self.p.nnz() + self.a.nnz() + n + m);
        trips.extend(self.p.triplets());
        trips.extend((0..n).map(|j| (j, j, sigma)));
        trips.extend(self.a.triplets().map(|(r, c, v)| (c, n + r, v)));
        trips.extend((0..m).map(|i| (n + i, n + i, -1.0 / self.rho[i])));
        CscMatrix::from_triplets(n + m, n + m, &trips).expect("kkt assembly")
    }

    /// Unscaled primal residual and its tolerance scale.
    fn prim_residual(&self, ax: &[f64], z: &[f64]) -> (f64, f64) {
        let e = &self.scaling.e;
        let mut res = 0.0f64;
        let mut ax_n = 0.0f64;
        let mut z_n = 0.0f64;
        for i in 0..self.m {
            res = res.max(((ax[i] - z[i]) / e[i]).abs());
            ax_n = ax_n.max((ax[i] / e[i]).abs());
            z_n = z_n.max((z[i] / e[i]).abs());
        }
        (res, ax_n.max(z_n))
    }

    /// Unscaled dual residual and its tolerance scale.
    fn dual_residual(&self, px: &[f64], aty: &[f64]) -> (f64, f64) {
        let d = &self.scaling.d;
        let cinv = 1.0 / self.scaling.c;
        let mut res = 0.0f64;
        let (mut pn, mut an, mut qn) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..self.n {
            res = res.max((cinv * (px[j] + self.q[j] + aty[j]) / d[j]).abs());
            pn = pn.max((cinv * px[j] / d[j]).abs());
            an = an.max((cinv * aty[j] / d[j]).abs());
            qn = qn.max((cinv * self.q[j] / d[j]).abs());
        }
        (res, pn.max(an).max(qn))
    }

    fn sym_mul(&self, x: &[f64], out: &mut [f64]) {
        // P stored as upper triangle.
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, c, v) in self.p.triplets() {
            out[r] += v * x[c];
            if r != c {
                out[c] += v * x[r];
            }
        }
    }

    fn set_rho(&mut self, rho: f64) {
        for i in 0..self.m {
            let (l, u) = (self.l[i], self.u[i]);
            self.rho[i] = if l <= -INF_BOUND && u >= INF_BOUND {
                RHO_MIN
            } else if (u - l).abs() < 1e-12 {
                RHO_EQ_SCALE * rho
            } else {
                rho
            };
        }
    }
}

impl Solver {
    pub fn new(settings: Settings) -> Self {
        Self { settings, cache: None }
    }

    fn factor_kkt(&mut self, kkt: &CscMatrix) -> Result<PermutedLdl, QpError> {
        let mut h = 0u64;
        kkt.pattern_hash(&mut h);
        let perm = match &self.cache {
            Some(c) if c.pattern == h => c.perm.clone(),
            _ => {
                let perm = minimum_degree_order(kkt);
                self.cache = Some(Cached {
                    pattern: h,
                    perm: perm.clone(),
                });
                perm
            }
        };
        PermutedLdl::new(kkt, perm)
    }

    pub fn solve(&mut self, problem: &QpProblem) -> Result<QpSolution, QpError> {
        let start = Instant::now();
        problem.validate()?;
        if self.settings.verify_convexity {
            problem.check_convexity()?;
        }
        let StackedForm {
            mut p_upper,
            mut q,
            mut a,
            l,
            u,
            ..
        } = problem.stacked()?;
        let orig_a = a.clone();
        let orig_l: Vec<f64> = l.iter().map(|&v| clamp_bound(v)).collect();
        let orig_u: Vec<f64> = u.iter().map(|&v| clamp_bound(v)).collect();
        let s = self.settings.clone();
        let n = q.len();
        let m = a.nrows;

        let scaling = equilibrate(&mut p_upper, &mut q, &mut a, s.scaling_iters);
        let scale_bound = |v: f64, e: f64| if v.abs() >= INF_BOUND { v } else { v * e };
        let l: Vec<f64> = orig_l.iter().zip(&scaling.e).map(|(&v, &e)| scale_bound(v, e)).collect();
        let u: Vec<f64> = orig_u.iter().zip(&scaling.e).map(|(&v, &e)| scale_bound(v, e)).collect();

        let mut ws = Workspace {
            n,
            m,
            p: p_upper,
            q,
            a,
            l,
            u,
            scaling,
            rho: vec![0.0; m],
        };
        let mut rho = s.rho;
        ws.set_rho(rho);

        let mut x = vec![0.0; n];
        let mut z = vec![0.0; m];
        let mut y = vec![0.0; m];
        if let Some(warm) = &problem.warm_start {
            for j in 0..n {
                x[j] = warm.x[j] / ws.scaling.d[j];
            }
            if let Some(wy) = &warm.y {
                if wy.len() == m {
                    for i in 0..m {
                        y[i] = wy[i] * ws.scaling.c / ws.scaling.e[i];
                    }
                }
            }
            ws.a.mul_vec(&x, &mut z);
            for i in 0..m {
                z[i] = z[i].clamp(ws.l[i], ws.u[i]);
            }
        }

        let mut kkt = ws.kkt(s.sigma);
        let mut factor = self.factor_kkt(&kkt)?;
        let mut refactorizations = 1;

        let mut rhs = vec![0.0; n + m];
        let mut x_prev = vec![0.0; n];
        let mut z_prev = vec![0.0; m];
        let mut y_prev = vec![0.0; m];
        let mut ax = vec![0.0; m];
        let mut px = vec![0.0; n];
        let mut aty = vec![0.0; n];
        let mut history = Vec::new();
        let mut status = Status::MaxIterations;
        let mut prim_res = f64::INFINITY;
        let mut dual_res = f64::INFINITY;
        let mut prim_tol = s.eps_abs;
        let mut iter = 0;
        let mut early_polished = false;
        let check = s.check_interval.max(1);

        while iter < s.max_iter {
            iter += 1;
            x_prev.copy_from_slice(&x);
            z_prev.copy_from_slice(&z);
            y_prev.copy_from_slice(&y);

            for j in 0..n {
                rhs[j] = s.sigma * x[j] - ws.q[j];
            }
            for i in 0..m {
                rhs[n + i] = z[i] - y[i] / ws.rho[i];
            }
            factor.solve(&mut rhs);
            for i in 0..m {
                let z_tilde = z[i] + (rhs[n + i] - y[i]) / ws.rho[i];
                let z_relaxed = s.alpha * z_tilde + (1.0 - s.alpha) * z_prev[i];
                let z_new = (z_relaxed + y[i] / ws.rho[i]).clamp(ws.l[i], ws.u[i]);
                y[i] += ws.rho[i] * (z_relaxed - z_new);
                z[i] = z_new;
            }
            for j in 0..n {
                x[j] = s.alpha * rhs[j] + (1.0 - s.alpha) * x_prev[j];
            }

            let adapt_now = s.adaptive_rho && iter % s.adaptive_rho_interval.max(1) == 0;
            if iter % check == 0 || adapt_now || iter == s.max_iter {
                ws.a.mul_vec(&x, &mut ax);
                ws.sym_mul(&x, &mut px);
                ws.a.tr_mul_vec(&y, &mut aty);
                let (pr, pr_scale) = ws.prim_residual(&ax, &z);
                let (dr, dr_scale) = ws.dual_residual(&px, &aty);
                prim_res = pr;
                dual_res = dr;
                let eps_prim = s.eps_abs + s.eps_rel * pr_scale;
                let eps_dual = s.eps_abs + s.eps_rel * dr_scale;
                prim_tol = eps_prim;
                history.push((pr / eps_prim).max(dr / eps_dual));
                if pr <= eps_prim && dr <= eps_dual {
                    status = Status::Optimal;
                    break;
                }
                if s.polish && s.early_polish_interval > 0 && iter % s.early_polish_interval == 0 {
                    if let Some(p) = self.polish(&ws, &z, &y, &s) {
                        if p.converged(&s) {
                            x = p.x;
                            y = p.y;
                            prim_res = p.prim_res;
                            dual_res = p.dual_res;
                            prim_tol = s.eps_abs + s.eps_rel * p.prim_scale;
                            status = Status::Optimal;
                            early_polished = true;
                            break;
                        }
                    }
                }

                let dy: Vec<f64> = (0..m)
                    .map(|i| (y[i] - y_prev[i]) * ws.scaling.e[i] / ws.scaling.c)
                    .collect();
                if infeasibility_certificate(&orig_a, &orig_l, &orig_u, &dy, s.eps_prim_inf) {
                    status = Status::PrimalInfeasible;
                    break;
                }
                if self.dual_infeasible(&ws, &x, &x_prev, s.eps_dual_inf) {
                    status = Status::DualInfeasible;
                    break;
                }

                if adapt_now {
                    let prim_norm = pr / pr_scale.max(1e-12);
                    let dual_norm = dr / dr_scale.max(1e-12);
                    let new_rho = (rho * (prim_norm / dual_norm.max(1e-12)).sqrt()).clamp(RHO_MIN, RHO_MAX);
                    if new_rho > rho * s.adaptive_rho_tolerance || new_rho < rho / s.adaptive_rho_tolerance {
                        rho = new_rho;
                        ws.set_rho(rho);
                        kkt = ws.kkt(s.sigma);
                        factor.refactor(&kkt)?;
                        refactorizations += 1;
                    }
                }
            }
        }

        let mut polished = early_polished;
        if status == Status::Optimal && s.polish && !early_polished {
            if let Some(p) = self.polish(&ws, &z, &y, &s) {
                if p.prim_res <= prim_res.max(s.eps_abs) && p.dual_res <= dual_res.max(s.eps_abs) {
                    x = p.x;
                    y = p.y;
                    prim_res = p.prim_res;
                    dual_res = p.dual_res;
                    prim_tol = prim_tol.max(s.eps_abs + s.eps_rel * p.prim_scale);
                    polished = true;
                }
            }
        }

        let x_out: Vec<f64> = (0..n).map(|j| x[j] * ws.scaling.d[j]).collect();
        let y_out: Vec<f64> = (0..m).map(|i| y[i] * ws.scaling.e[i] / ws.scaling.c).collect();
        Ok(QpSolution {
            x: x_out,
            y: y_out,
            status,
            prim_res,
            dual_res,
            prim_tol,
            iterations: iter,
            solve_time_ms: start.elapsed().as_secs_f64() * 1e3,
            polished,
            rho,
            refactorizations,
            residual_history: history,
        })
    }

    fn dual_infeasible(&self, ws: &Workspace, x: &[f64], x_prev: &[f64], eps: f64) -> bool {
        let n = ws.n;
        let dx: Vec<f64> = (0..n).map(|j| (x[j] - x_prev[j]) * ws.scaling.d[j]).collect();
        let norm_dx = inf_norm(&dx);
        if norm_dx <= eps {
            return false;
        }
        let dx_scaled: Vec<f64> = (0..n).map(|j| x[j] - x_prev[j]).collect();
        let qdx: f64 = (0..n).map(|j| ws.q[j] * dx_scaled[j]).sum::<f64>() / ws.scaling.c;
        if qdx >= -eps * norm_dx {
            return false;
        }
        let mut pdx = vec![0.0; n];
        ws.sym_mul(&dx_scaled, &mut pdx);
        let pdx_norm = (0..n).map(|j| (pdx[j] / ws.scaling.d[j]).abs()).fold(0.0, f64::max) / ws.scaling.c;
        if pdx_norm > eps * norm_dx {
            return false;
        }
        let mut adx = vec![0.0; ws.m];
        ws.a.mul_vec(&dx_scaled, &mut adx);
        (0..ws.m).all(|i| {
            let v = adx[i] / ws.scaling.e[i];
            let lo_ok = ws.l[i] <= -INF_BOUND || v >= -eps * norm_dx;
            let hi_ok = ws.u[i] >= INF_BOUND || v <= eps * norm_dx;
            lo_ok && hi_ok
        })
    }

    /// Solves the equality-constrained problem on the guessed active set with
    /// regularization and iterative refinement.
    fn polish(
        &self,
        ws: &Workspace,
        z: &[f64],
        y: &[f64],
        s: &Settings,
    ) -> Option<Polished> {
        let (n, m) = (ws.n, ws.m);
        let mut active = Vec::new();
        let mut target = Vec::new();
        // -1 lower, +1 upper, 0 equality
        let mut side = Vec::new();
        for i in 0..m {
            let eq = (ws.u[i] - ws.l[i]).abs() < 1e-12;
            if z[i] - ws.l[i] < -y[i] {
                active.push(i);
                target.push(ws.l[i]);
                side.push(if eq { 0.0 } else { -1.0 });
            } else if ws.u[i] - z[i] < y[i] {
                active.push(i);
                target.push(ws.u[i]);
                side.push(if eq { 0.0 } else { 1.0 });
            }
        }
        let na = active.len();
        let mut row_of = vec![usize::MAX; m];
        for (k, &i) in active.iter().enumerate() {
            row_of[i] = k;
        }
        let mut trips = Vec::new();
        trips.extend(ws.p.triplets());
        let mut reg = trips.clone();
        reg.extend((0..n).map(|j| (j, j, s.polish_delta)));
        let a_trips: Vec<_> = ws
            .a
            .triplets()
            .filter(|&(r, _, _)| row_of[r] != usize::MAX)
            .map(|(r, c, v)| (c, n + row_of[r], v))
            .collect();
        trips.extend(a_trips.iter().copied());
        reg.extend(a_trips.iter().copied());
        reg.extend((0..na).map(|k| (n + k, n + k, -s.polish_delta)));
        let k_true = CscMatrix::from_triplets(n + na, n + na, &trips).ok()?;
        let k_reg = CscMatrix::from_triplets(n + na, n + na, &reg).ok()?;
        let perm = minimum_degree_order(&k_reg);
        let mut f = PermutedLdl::new(&k_reg, perm).ok()?;

        let mut b = vec![0.0; n + na];
        for j in 0..n {
            b[j] = -ws.q[j];
        }
        b[n..].copy_from_slice(&target);
        let mut sol = b.clone();
        f.solve(&mut sol);
        let mut r = vec![0.0; n + na];
        for _ in 0..s.polish_refine_iter {
            sym_upper_mul(&k_true, &sol, &mut r);
            for i in 0..n + na {
                r[i] = b[i] - r[i];
            }
            f.solve(&mut r);
            for i in 0..n + na {
                sol[i] += r[i];
            }
        }

        let xp = sol[..n].to_vec();
        let mut yp = vec![0.0; m];
        for (k, &i) in active.iter().enumerate() {
            yp[i] = sol[n + k];
        }
        let mut ax = vec![0.0; m];
        ws.a.mul_vec(&xp, &mut ax);
        let zp: Vec<f64> = (0..m).map(|i| ax[i].clamp(ws.l[i], ws.u[i])).collect();
        let mut px = vec![0.0; n];
        ws.sym_mul(&xp, &mut px);
        let mut aty = vec![0.0; n];
        ws.a.tr_mul_vec(&yp, &mut aty);
        let (pr, pr_scale) = ws.prim_residual(&ax, &zp);
        let (dr, dr_scale) = ws.dual_residual(&px, &aty);
        if !pr.is_finite() || !dr.is_finite() {
            return None;
        }
        // multipliers of inequality rows must push the right way
        let y_max = inf_norm(&yp);
        let wrong_sign = active
            .iter()
            .zip(&side)
            .any(|(&i, &sd)| sd * yp[i] < -s.eps_abs * (1.0 + y_max));
        if wrong_sign {
            return None;
        }
        Some(Polished { x: xp, y: yp, prim_res: pr, dual_res: dr, prim_scale: pr_scale, dual_scale: dr_scale })
    }
}

struct Polished {
    x: Vec<f64>,
    y: Vec<f64>,
    prim_res: f64,
    dual_res: f64,
    prim_scale: f64,
    dual_scale: f64,
}

impl Polished {
    fn converged(&self, s: &Settings) -> bool {
        self.prim_res <= s.eps_abs + s.eps_rel * self.prim_scale
            && self.dual_res <= s.eps_abs + s.eps_rel * self.dual_scale
    }
}

fn sym_upper_mul(upper: &CscMatrix, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (r, c, v) in upper.triplets() {
        out[r] += v * x[c];
        if r != c {
            out[c] += v * x[r];
        }
    }
}
