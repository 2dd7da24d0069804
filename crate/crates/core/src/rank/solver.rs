//! Linear solves for the spring stationarity system
//!
//! ```text
//! [d_out_i + d_in_i + shift] s_i - sum_j (A_ij + A_ji) s_j = d_out_i - d_in_i
//! ```
//!
//! The operator is a weighted graph Laplacian plus a diagonal shift, so it is
//! symmetric positive semi-definite and CG applies directly.

use nalgebra::{DMatrix, DVector};

use super::ComparisonMatrix;

/// Symmetric adjacency `w_ij = A_ij + A_ji` in compressed rows plus the
/// right-hand side `d_out - d_in`.
#[derive(Debug, Clone)]
pub(crate) struct SpringSystem {
    degree: Vec<f64>,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl SpringSystem {
    pub fn from_matrix(m: &ComparisonMatrix) -> Self {
        let n = m.len();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut rhs = vec![0.0; n];
        for (i, j, w) in m.entries() {
            rows[i].push((j, w));
            rows[j].push((i, w));
            rhs[i] += w;
            rhs[j] -= w;
        }
        let mut row_start = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut degree = vec![0.0; n];
        row_start.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, w) in row {
                degree[i] += w;
                if last == Some(j) {
                    *vals.last_mut().unwrap() += w;
                } else {
                    cols.push(j);
                    vals.push(w);
                    last = Some(j);
                }
            }
            row_start.push(cols.len());
        }
        SpringSystem { degree, row_start, cols, vals, rhs }
    }

    pub fn len(&self) -> usize {
        self.degree.len()
    }

    /// `y = (L + shift I) x`
    pub fn apply(&self, shift: f64, x: &[f64], y: &mut [f64]) {
        for i in 0..self.len() {
            let mut acc = (self.degree[i] + shift) * x[i];
            for k in self.row_start[i]..self.row_start[i + 1] {
                acc -= self.vals[k] * x[self.cols[k]];
            }
            y[i] = acc;
        }
    }

    /// `‖b - (L + shift I) x‖∞`
    pub fn residual(&self, shift: f64, x: &[f64], b: &[f64]) -> f64 {
        let mut y = vec![0.0; self.len()];
        self.apply(shift, x, &mut y);
        y.iter().zip(b).map(|(yi, bi)| (bi - yi).abs()).fold(0.0, f64::max)
    }

    pub fn dense(&self, shift: f64) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.degree[i] + shift;
            for k in self.row_start[i]..self.row_start[i + 1] {
                m[(i, self.cols[k])] -= self.vals[k];
            }
        }
        m
    }

    /// Connected components over nonzero adjacency, labelled `0..k`.
    pub fn components(&self) -> Vec<usize> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(i) = stack.pop() {
                for k in self.row_start[i]..self.row_start[i + 1] {
                    let j = self.cols[k];
                    if label[j] == usize::MAX {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// Outcome of one inner solve.
pub(crate) struct InnerSolve {
    pub x: Vec<f64>,
    pub iterations: usize,
}

/// Dense Cholesky, falling back to LU if the factorization breaks down.
pub(crate) fn solve_dense(sys: &SpringSystem, shift: f64, b: &[f64]) -> Option<InnerSolve> {
    let a = sys.dense(shift);
    let rhs = DVector::from_column_slice(b);
    let x = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a.lu().solve(&rhs)?,
    };
    Some(InnerSolve { x: x.iter().copied().collect(), iterations: 1 })
}

/// Jacobi-preconditioned conjugate gradient from a zero start. Stops once the
/// residual infinity norm drops to `tol` or after `max_iter` steps.
pub(crate) fn solve_cg(sys: &SpringSystem, shift: f64, b: &[f64], tol: f64, max_iter: usize) -> InnerSolve {
    let n = sys.len();
    let inv_diag: Vec<f64> = sys
        .degree
        .iter()
        .map(|&d| if d + shift > 0.0 { 1.0 / (d + shift) } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);

    let mut iterations = 0;
    while iterations < max_iter && norm_inf(&r) > tol {
        sys.apply(shift, &p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        iterations += 1;
        // recompute the true residual periodically to stop drift
        if iterations % 50 == 0 {
            sys.apply(shift, &x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    InnerSolve { x, iterations }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
