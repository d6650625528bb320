//! Compressed sparse rows, Jacobi-preconditioned CG and a banded LU.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Largest system the dense direct solver accepts.
pub const DENSE_LIMIT: usize = 2000;
/// Default size limit of the banded direct solver.
pub const BAND_LIMIT: usize = 50_000;

/// Square sparse matrix with sorted column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Accumulates `(row, col, value)` contributions; duplicates are summed.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i, j, v));
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; self.n + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

impl CsrMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.cols[a..b].binary_search(&j) {
            Ok(k) => self.vals[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| self.row(i).map(|(j, v)| v * x[j]).sum())
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| self.get(i, i))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// `max |a_ij - a_ji| / max |a_ij|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut scale: f64 = 0.0;
        let mut defect: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                scale = scale.max(v.abs());
                defect = defect.max((v - self.get(j, i)).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            defect / scale
        }
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Final relative residual `||b - A x|| / ||b||`.
    pub residual: f64,
}

/// Preconditioned conjugate gradients with a Jacobi preconditioner.
/// `max_iter` defaults to `10 n`.
pub fn pcg(
    a: &CsrMatrix,
    b: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    rtol: f64,
    max_iter: Option<usize>,
) -> Result<CgOutcome> {
    let n = a.n();
    if b.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: b.len() });
    }
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            x: DVector::zeros(n),
            iterations: 0,
            residual: 0.0,
        });
    }
    let inv_diag = a.diagonal().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 });
    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut r = b - a.matvec(&x);
    let mut z = r.component_mul(&inv_diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let max_iter = max_iter.unwrap_or(10 * n.max(1));
    let mut history = Vec::new();
    let mut res = r.norm() / bnorm;
    if res <= rtol {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual: res,
        });
    }
    for it in 1..=max_iter {
        let ap = a.matvec(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        res = r.norm() / bnorm;
        history.push(res);
        if res <= rtol {
            return Ok(CgOutcome {
                x,
                iterations: it,
                residual: res,
            });
        }
        z = r.component_mul(&inv_diag);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + &p * beta;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res,
        history,
    })
}

/// Dense direct solve (Cholesky, LU if not positive definite).
pub fn dense_solve(a: &CsrMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.n() > DENSE_LIMIT {
        return Err(Error::TooLarge {
            size: a.n(),
            limit: DENSE_LIMIT,
        });
    }
    let d = a.to_dense();
    if let Some(ch) = nalgebra::Cholesky::new(d.clone()) {
        return Ok(ch.solve(b));
    }
    d.lu().solve(b).ok_or(Error::Singular {
        cell: usize::MAX,
        cond: f64::INFINITY,
    })
}

/// Reverse Cuthill-McKee ordering of the symmetrized pattern. Returns
/// `perm` with `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, _) in a.row(i) {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (deg[i], i));
    for &start in &by_degree {
        if seen[start] {
            continue;
        }
        let root = peripheral(&adj, start);
        let root = if seen[root] { start } else { root };
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
            nb.sort_by_key(|&w| (deg[w], w));
            for w in nb {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

// a few sweeps of the George-Liu pseudo-peripheral search
fn peripheral(adj: &[Vec<usize>], start: usize) -> usize {
    let mut root = start;
    let mut ecc = 0;
    for _ in 0..4 {
        let (far, depth) = farthest(adj, root);
        if depth <= ecc {
            break;
        }
        ecc = depth;
        root = far;
    }
    root
}

fn farthest(adj: &[Vec<usize>], root: usize) -> (usize, usize) {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut last = (root, 0);
    while let Some(v) = queue.pop_front() {
        if dist[v] > last.1 || (dist[v] == last.1 && adj[v].len() < adj[last.0].len()) {
            last = (v, dist[v]);
        }
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    last
}

/// Banded LU with partial pivoting after an RCM reordering. Works for
/// indefinite and non-symmetric matrices.
pub fn band_solve(a: &CsrMatrix, b: &DVector<f64>, limit: usize) -> Result<DVector<f64>> {
    let n = a.n();
    if n > limit {
        return Err(Error::TooLarge { size: n, limit });
    }
    if b.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: b.len() });
    }
    let perm = rcm_ordering(a);
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut kl = 0usize;
    let mut ku = 0usize;
    for i in 0..n {
        for (j, _) in a.row(i) {
            let (pi, pj) = (inv[i], inv[j]);
            if pi > pj {
                kl = kl.max(pi - pj);
            } else {
                ku = ku.max(pj - pi);
            }
        }
    }
    let mut lu = BandLu::new(n, kl, ku);
    for i in 0..n {
        for (j, v) in a.row(i) {
            *lu.at(inv[i], inv[j]) += v;
        }
    }
    lu.factor()?;
    let pb = DVector::from_fn(n, |i, _| b[perm[i]]);
    let px = lu.solve(pb);
    let mut x = DVector::zeros(n);
    for (new, &old) in perm.iter().enumerate() {
        x[old] = px[new];
    }
    Ok(x)
}

struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    fn new(n: usize, kl: usize, ku: usize) -> Self {
        // row i holds columns i-kl ..= i+ku+kl (fill from row swaps)
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
        }
    }

    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        let off = j + self.kl - i;
        &mut self.data[i * self.width + off]
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j + self.kl - i]
    }

    fn factor(&mut self) -> Result<()> {
        let n = self.n;
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.kl + self.ku).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular {
                    cell: usize::MAX,
                    cond: f64::INFINITY,
                });
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let a = self.get(k, j);
                    let b = self.get(p, j);
                    *self.at(k, j) = b;
                    *self.at(p, j) = a;
                }
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last_row {
                let f = self.get(i, k) / pivot;
                if f == 0.0 {
                    continue;
                }
                *self.at(i, k) = f;
                for j in k + 1..=last_col {
                    let u = self.get(k, j);
                    if u != 0.0 {
                        *self.at(i, j) -= f * u;
                    }
                }
            }
        }
        Ok(())
    }

    fn solve(&self, mut b: DVector<f64>) -> DVector<f64> {
        let n = self.n;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap_rows(k, p);
            }
            let last_row = (k + self.kl).min(n - 1);
            for i in k + 1..=last_row {
                b[i] -= self.get(i, k) * b[k];
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + self.kl + self.ku).min(n - 1);
            let mut s = b[k];
            for j in k + 1..=last_col {
                s -= self.get(k, j) * b[j];
            }
            b[k] = s / self.get(k, k);
        }
        b
    }
}
