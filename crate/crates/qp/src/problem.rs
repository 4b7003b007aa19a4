use crate::csc::{vstack, CscMatrix};
use crate::ldl::{minimum_degree_order, PermutedLdl};
use crate::QpError;

/// Primal and dual starting point for the solver.
///
/// `y` uses the stacked constraint layout described on [`QpProblem::stacked`].
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
}

/// minimize ½ xᵀ H x + qᵀ x
/// subject to A_eq x = b_eq, l ≤ A_in x ≤ u, lb ≤ x ≤ ub.
#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Full symmetric Hessian (both triangles stored).
    pub hessian: CscMatrix,
    pub q: Vec<f64>,
    pub a_eq: CscMatrix,
    pub b_eq: Vec<f64>,
    pub a_ineq: CscMatrix,
    pub l_ineq: Vec<f64>,
    pub u_ineq: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub warm_start: Option<WarmStart>,
}

/// The single two-sided form `l ≤ A x ≤ u` the solver iterates on.
#[derive(Debug, Clone)]
pub struct StackedForm {
    pub p_upper: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
    /// Variable index of each bound row, in order.
    pub bound_vars: Vec<usize>,
}

impl QpProblem {
    /// An unconstrained problem in `n` variables with no bounds.
    pub fn unconstrained(hessian: CscMatrix, q: Vec<f64>) -> Self {
        let n = q.len();
        Self {
            hessian,
            q,
            a_eq: CscMatrix::zeros(0, n),
            b_eq: Vec::new(),
            a_ineq: CscMatrix::zeros(0, n),
            l_ineq: Vec::new(),
            u_ineq: Vec::new(),
            lb: vec![f64::NEG_INFINITY; n],
            ub: vec![f64::INFINITY; n],
            warm_start: None,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    /// Checks dimensions, finiteness, bound ordering and symmetry.
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.q.len();
        let dim = |what: &str, got: usize, want: usize| {
            if got != want {
                Err(QpError::Dimension(format!("{what}: got {got}, expected {want}")))
            } else {
                Ok(())
            }
        };
        dim("hessian rows", self.hessian.nrows, n)?;
        dim("hessian cols", self.hessian.ncols, n)?;
        dim("a_eq cols", self.a_eq.ncols, n)?;
        dim("b_eq", self.b_eq.len(), self.a_eq.nrows)?;
        dim("a_ineq cols", self.a_ineq.ncols, n)?;
        dim("l_ineq", self.l_ineq.len(), self.a_ineq.nrows)?;
        dim("u_ineq", self.u_ineq.len(), self.a_ineq.nrows)?;
        dim("lb", self.lb.len(), n)?;
        dim("ub", self.ub.len(), n)?;
        if let Some(ws) = &self.warm_start {
            dim("warm start x", ws.x.len(), n)?;
        }
        if self.q.iter().chain(&self.b_eq).any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("linear cost or equality rhs".into()));
        }
        for (i, (&l, &u)) in self.l_ineq.iter().zip(&self.u_ineq).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(QpError::InvalidBounds(format!("inequality row {i}: [{l}, {u}]")));
            }
        }
        for (i, (&l, &u)) in self.lb.iter().zip(&self.ub).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(QpError::InvalidBounds(format!("variable {i}: [{l}, {u}]")));
            }
        }
        if !self.hessian.is_symmetric(1e-9) {
            return Err(QpError::NotConvex("hessian is not symmetric".into()));
        }
        Ok(())
    }

    /// Probes positive semidefiniteness: `H + shift·I` must factor with all
    /// pivots positive.
    pub fn check_convexity(&self) -> Result<(), QpError> {
        let n = self.q.len();
        if n == 0 {
            return Ok(());
        }
        let max_diag = (0..n).map(|i| self.hessian.get(i, i).abs()).fold(0.0, f64::max);
        let shift = 1e-9 * (1.0 + max_diag);
        let mut trips: Vec<_> = self.hessian.upper_triangle().triplets().collect();
        trips.extend((0..n).map(|i| (i, i, shift)));
        let shifted = CscMatrix::from_triplets(n, n, &trips)?;
        let perm = minimum_degree_order(&shifted);
        let f = PermutedLdl::new(&shifted, perm)
            .map_err(|_| QpError::NotConvex("hessian is not positive semidefinite".into()))?;
        if f.positive_pivots() != n {
            return Err(QpError::NotConvex("hessian is not positive semidefinite".into()));
        }
        Ok(())
    }

    /// Rows are stacked as: equalities, inequalities, then one row per
    /// variable with at least one finite bound (ascending variable index).
    pub fn stacked(&self) -> Result<StackedForm, QpError> {
        let n = self.q.len();
        let bound_vars: Vec<usize> = (0..n)
            .filter(|&j| self.lb[j].is_finite() || self.ub[j].is_finite())
            .collect();
        let trips: Vec<_> = bound_vars.iter().enumerate().map(|(r, &j)| (r, j, 1.0)).collect();
        let bounds = CscMatrix::from_triplets(bound_vars.len(), n, &trips)?;
        let a = vstack(&[&self.a_eq, &self.a_ineq, &bounds])?;
        let mut l = Vec::with_capacity(a.nrows);
        let mut u = Vec::with_capacity(a.nrows);
        l.extend_from_slice(&self.b_eq);
        u.extend_from_slice(&self.b_eq);
        l.extend_from_slice(&self.l_ineq);
        u.extend_from_slice(&self.u_ineq);
        l.extend(bound_vars.iter().map(|&j| self.lb[j]));
        u.extend(bound_vars.iter().map(|&j| self.ub[j]));
        Ok(StackedForm {
            p_upper: self.hessian.upper_triangle(),
            q: self.q.clone(),
            a,
            l,
            u,
            bound_vars,
        })
    }

    /// Returns a copy with the objective scaled by `cost` and every
    /// constraint row (equalities and inequalities) scaled by `rows`.
    pub fn scaled(&self, cost: f64, rows: f64) -> Self {
        let mut out = self.clone();
        out.hessian.values.iter_mut().for_each(|v| *v *= cost);
        out.q.iter_mut().for_each(|v| *v *= cost);
        out.a_eq.values.iter_mut().for_each(|v| *v *= rows);
        out.b_eq.iter_mut().for_each(|v| *v *= rows);
        out.a_ineq.values.iter_mut().for_each(|v| *v *= rows);
        out.l_ineq.iter_mut().for_each(|v| *v *= rows);
        out.u_ineq.iter_mut().for_each(|v| *v *= rows);
        out
    }

    /// ½ xᵀ H x + qᵀ x
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut hx = vec![0.0; x.len()];
        self.hessian.mul_vec(x, &mut hx);
        x.iter().zip(&hx).map(|(a, b)| 0.5 * a * b).sum::<f64>()
            + x.iter().zip(&self.q).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        let mut r = vec![0.0; self.a_eq.nrows];
        self.a_eq.mul_vec(x, &mut r);
        for (v, b) in r.iter().zip(&self.b_eq) {
            worst = worst.max((v - b).abs());
        }
        let mut r = vec![0.0; self.a_ineq.nrows];
        self.a_ineq.mul_vec(x, &mut r);
        for ((v, l), u) in r.iter().zip(&self.l_ineq).zip(&self.u_ineq) {
            worst = worst.max(l - v).max(v - u);
        }
        for ((v, l), u) in x.iter().zip(&self.lb).zip(&self.ub) {
            worst = worst.max(l - v).max(v - u);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacking_appends_bound_rows_for_bounded_variables_only() {
        let mut p = QpProblem::unconstrained(CscMatrix::identity(3), vec![0.0; 3]);
        p.lb[1] = 0.0;
        p.ub[2] = 4.0;
        p.a_eq = CscMatrix::from_triplets(1, 3, &[(0, 0, 1.0), (0, 2, 1.0)]).unwrap();
        p.b_eq = vec![2.0];
        let s = p.stacked().unwrap();
        assert_eq!(s.a.nrows, 3);
        assert_eq!(s.bound_vars, vec![1, 2]);
        assert_eq!(s.l, vec![2.0, 0.0, f64::NEG_INFINITY]);
        assert_eq!(s.u, vec![2.0, f64::INFINITY, 4.0]);
    }

    #[test]
    fn indefinite_hessian_fails_the_probe() {
        let h = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
        let p = QpProblem::unconstrained(h, vec![0.0; 2]);
        assert!(matches!(p.check_convexity(), Err(QpError::NotConvex(_))));
        let semidef = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0)]).unwrap();
        assert!(QpProblem::unconstrained(semidef, vec![0.0; 2]).check_convexity().is_ok());
    }

    #[test]
    fn crossed_bounds_are_rejected() {
        let mut p = QpProblem::unconstrained(CscMatrix::identity(1), vec![0.0]);
        p.lb[0] = 1.0;
        p.ub[0] = 0.0;
        assert!(matches!(p.validate(), Err(QpError::InvalidBounds(_))));
    }
}
