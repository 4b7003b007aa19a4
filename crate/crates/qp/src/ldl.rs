//! Sparse LDLᵀ factorization of quasi-definite matrices.
//!
//! The input is the upper triangle of a symmetric matrix in CSC form. A
//! minimum-degree permutation is computed once per sparsity pattern; numeric
//! refactorization reuses the elimination tree.

use crate::csc::CscMatrix;
use crate::QpError;

const NONE: usize = usize::MAX;

/// Minimum-degree ordering on the adjacency graph of a symmetric pattern.
///
/// Returns `perm` with `perm[new] = old`. Ties are broken by the lowest
/// original index so the ordering is deterministic.
pub fn minimum_degree_order(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in upper.triplets() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }

    let mut alive = vec![true; n];
    let mut perm = Vec::with_capacity(n);
    let mut merged: Vec<usize> = Vec::new();
    for _ in 0..n {
        let mut best = NONE;
        let mut best_deg = usize::MAX;
        for v in 0..n {
            if alive[v] && adj[v].len() < best_deg {
                best = v;
                best_deg = adj[v].len();
                if best_deg == 0 {
                    break;
                }
            }
        }
        let v = best;
        alive[v] = false;
        perm.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            // adj[u] <- (adj[u] ∪ nbrs) \ {u, v}
            merged.clear();
            let (a, b) = (&adj[u], &nbrs);
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                let next = if j >= b.len() || (i < a.len() && a[i] <= b[j]) {
                    let x = a[i];
                    if j < b.len() && b[j] == x {
                        j += 1;
                    }
                    i += 1;
                    x
                } else {
                    let x = b[j];
                    j += 1;
                    x
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
        }
    }
    perm
}

/// Permutes a symmetric matrix stored as its upper triangle: returns the
/// upper triangle of `P A Pᵀ` where `pinv[old] = new`.
pub fn permute_upper(upper: &CscMatrix, pinv: &[usize]) -> CscMatrix {
    let trips: Vec<_> = upper
        .triplets()
        .map(|(r, c, v)| {
            let (pr, pc) = (pinv[r], pinv[c]);
            if pr <= pc {
                (pr, pc, v)
            } else {
                (pc, pr, v)
            }
        })
        .collect();
    CscMatrix::from_triplets(upper.nrows, upper.ncols, &trips).expect("permutation of a valid matrix")
}

/// Elimination tree and column counts of `L`.
#[derive(Debug, Clone)]
pub struct Symbolic {
    pub n: usize,
    etree: Vec<usize>,
    lp: Vec<usize>,
}

impl Symbolic {
    pub fn analyze(upper: &CscMatrix) -> Result<Self, QpError> {
        let n = upper.ncols;
        let mut work = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut etree = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in upper.colptr[j]..upper.colptr[j + 1] {
                let mut i = upper.rowind[p];
                if i > j {
                    return Err(QpError::Factorization("matrix is not upper triangular".into()));
                }
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        Ok(Self { n, etree, lp })
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }
}

/// Numeric factors `A = L D Lᵀ` with unit lower-triangular `L`.
#[derive(Debug, Clone)]
pub struct Ldl {
    sym: Symbolic,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
}

impl Ldl {
    pub fn factor(sym: Symbolic, upper: &CscMatrix) -> Result<Self, QpError> {
        let mut f = Self {
            li: vec![0; sym.nnz_l()],
            lx: vec![0.0; sym.nnz_l()],
            d: vec![0.0; sym.n],
            dinv: vec![0.0; sym.n],
            sym,
        };
        f.refactor(upper)?;
        Ok(f)
    }

    /// Numeric factorization of a matrix with the analyzed pattern.
    pub fn refactor(&mut self, upper: &CscMatrix) -> Result<(), QpError> {
        let n = self.sym.n;
        let etree = &self.sym.etree;
        let lp = &self.sym.lp;
        let mut used = vec![false; n];
        let mut y = vec![0.0; n];
        let mut yidx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut lnext: Vec<usize> = lp[..n].to_vec();

        for k in 0..n {
            self.d[k] = 0.0;
            let mut nnz_y = 0;
            for p in upper.colptr[k]..upper.colptr[k + 1] {
                let b = upper.rowind[p];
                if b == k {
                    self.d[k] = upper.values[p];
                    continue;
                }
                y[b] = upper.values[p];
                if !used[b] {
                    used[b] = true;
                    elim[0] = b;
                    let mut ne = 1;
                    let mut next = etree[b];
                    while next != NONE && next < k {
                        if used[next] {
                            break;
                        }
                        used[next] = true;
                        elim[ne] = next;
                        ne += 1;
                        next = etree[next];
                    }
                    while ne > 0 {
                        ne -= 1;
                        yidx[nnz_y] = elim[ne];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = yidx[i];
                let tmp = lnext[c];
                let yc = y[c];
                for j in lp[c]..tmp {
                    y[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                self.lx[tmp] = yc * self.dinv[c];
                self.d[k] -= yc * self.lx[tmp];
                lnext[c] += 1;
                y[c] = 0.0;
                used[c] = false;
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(QpError::Factorization(format!("zero pivot at column {k}")));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    /// Number of strictly positive pivots.
    pub fn positive_pivots(&self) -> usize {
        self.d.iter().filter(|&&d| d > 0.0).count()
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, x: &mut [f64]) {
        let n = self.sym.n;
        let lp = &self.sym.lp;
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in lp[i]..lp[i + 1] {
                    x[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in lp[i]..lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
    }
}

/// A factorization bundled with the permutation it was computed under.
#[derive(Debug, Clone)]
pub struct PermutedLdl {
    perm: Vec<usize>,
    pinv: Vec<usize>,
    ldl: Ldl,
    work: Vec<f64>,
}

impl PermutedLdl {
    pub fn new(upper: &CscMatrix, perm: Vec<usize>) -> Result<Self, QpError> {
        let pinv = inverse_permutation(&perm);
        let permuted = permute_upper(upper, &pinv);
        let sym = Symbolic::analyze(&permuted)?;
        let ldl = Ldl::factor(sym, &permuted)?;
        Ok(Self {
            work: vec![0.0; perm.len()],
            perm,
            pinv,
            ldl,
        })
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Refactors a matrix with the same pattern as the original.
    pub fn refactor(&mut self, upper: &CscMatrix) -> Result<(), QpError> {
        let permuted = permute_upper(upper, &self.pinv);
        self.ldl.refactor(&permuted)
    }

    pub fn positive_pivots(&self) -> usize {
        self.ldl.positive_pivots()
    }

    pub fn solve(&mut self, b: &mut [f64]) {
        for (new, &old) in self.perm.iter().enumerate() {
            self.work[new] = b[old];
        }
        self.ldl.solve(&mut self.work);
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = self.work[new];
        }
    }
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut pinv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        pinv[old] = new;
    }
    pinv
}
