//! Compressed sparse row matrices, incomplete-factorization preconditioners
//! and the two Krylov solvers used by the elliptic and porous-media solvers.

use crate::error::{NiotError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a square matrix from per-row `(column, value)` lists.
    /// Duplicate columns in a row are summed; columns end up sorted.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let start = cols.len();
            for (c, v) in row {
                debug_assert!(c < n);
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    /// Builds a matrix from CSR arrays whose columns are already sorted and
    /// unique within each row.
    pub fn from_csr_parts(n: usize, row_ptr: Vec<usize>, cols: Vec<usize>, vals: Vec<f64>) -> Self {
        debug_assert_eq!(row_ptr.len(), n + 1);
        debug_assert_eq!(cols.len(), vals.len());
        debug_assert!((0..n).all(|i| cols[row_ptr[i]..row_ptr[i + 1]].windows(2).all(|w| w[0] < w[1])));
        Self { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[s..e], &self.vals[s..e])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&j).map_or(0.0, |k| v[k])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let (c, v) = self.row(i);
            let mut s = 0.0;
            for (&cj, &vj) in c.iter().zip(v) {
                s += vj * x[cj];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&cj, &vj) in c.iter().zip(v) {
                rows[cj].push((i, vj));
            }
        }
        CsrMatrix::from_rows(rows)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Row-major dense copy; meant for small test problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&cj, &vj) in c.iter().zip(v) {
                row[cj] = vj;
            }
        }
        d
    }

    pub fn scale(&mut self, factor: f64) {
        self.vals.iter_mut().for_each(|v| *v *= factor);
    }
}

/// A square linear map `y = A x`.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }
}

/// Approximate inverse applied inside a Krylov iteration.
pub trait Preconditioner: Send + Sync {
    fn name(&self) -> &'static str;
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn name(&self) -> &'static str {
        "none"
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

pub struct JacobiPreconditioner {
    inv_diag: Vec<f64>,
}

impl JacobiPreconditioner {
    pub fn new(a: &CsrMatrix) -> Self {
        let inv_diag = a
            .diagonal()
            .into_iter()
            .map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Self { inv_diag }
    }
}

impl Preconditioner for JacobiPreconditioner {
    fn name(&self) -> &'static str {
        "diagonal"
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

/// Zero-fill incomplete Cholesky factor `L` (lower triangle, diagonal last in
/// each row) of a symmetric matrix. A small relative diagonal shift keeps the
/// factorization of singular Neumann operators well defined.
pub struct Ic0Preconditioner {
    lower: CsrMatrix,
}

impl Ic0Preconditioner {
    const SHIFT: f64 = 1e-10;

    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.n();
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut diag = vec![0.0; n];
        for i in 0..n {
            let (c, v) = a.row(i);
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut aii = 0.0;
            for (&j, &aij) in c.iter().zip(v) {
                if j < i {
                    // L_ij = (a_ij - Σ_{k<j} L_ik L_jk) / L_jj
                    let s = sparse_dot_before(&row, &rows[j], j);
                    row.push((j, (aij - s) / diag[j]));
                } else if j == i {
                    aii = aij;
                }
            }
            let sq: f64 = row.iter().map(|(_, l)| l * l).sum();
            let mut pivot = aii * (1.0 + Self::SHIFT) - sq;
            if !(pivot > 0.0) {
                pivot = aii.abs().max(f64::MIN_POSITIVE) * Self::SHIFT;
            }
            diag[i] = pivot.sqrt();
            row.push((i, diag[i]));
            rows.push(row);
        }
        Ok(Self {
            lower: CsrMatrix::from_rows(rows),
        })
    }
}

/// Σ a_k b_k over common columns k < `limit`; both rows sorted by column.
fn sparse_dot_before(a: &[(usize, f64)], b: &[(usize, f64)], limit: usize) -> f64 {
    let (mut p, mut q, mut s) = (0, 0, 0.0);
    while p < a.len() && q < b.len() {
        let (ca, cb) = (a[p].0, b[q].0);
        if ca >= limit || cb >= limit {
            break;
        }
        match ca.cmp(&cb) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                s += a[p].1 * b[q].1;
                p += 1;
                q += 1;
            }
        }
    }
    s
}

impl Preconditioner for Ic0Preconditioner {
    fn name(&self) -> &'static str {
        "ic0"
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let l = &self.lower;
        let n = l.n();
        // L y = r
        for i in 0..n {
            let (c, v) = l.row(i);
            let k = c.len() - 1;
            let mut s = r[i];
            for t in 0..k {
                s -= v[t] * z[c[t]];
            }
            z[i] = s / v[k];
        }
        // Lᵀ x = y, column sweep over the rows of L
        for i in (0..n).rev() {
            let (c, v) = l.row(i);
            let k = c.len() - 1;
            z[i] /= v[k];
            let zi = z[i];
            for t in 0..k {
                z[c[t]] -= v[t] * zi;
            }
        }
    }
}

/// Zero-fill incomplete LU on the sparsity pattern of `A`.
pub struct Ilu0Preconditioner {
    lu: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0Preconditioner {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.n;
        let mut diag_pos = vec![usize::MAX; n];
        for (i, d) in diag_pos.iter_mut().enumerate() {
            let (c, _) = lu.row(i);
            let k = c
                .binary_search(&i)
                .map_err(|_| NiotError::InvalidParameter(format!("ILU(0) needs a stored diagonal in row {i}")))?;
            *d = lu.row_ptr[i] + k;
        }
        let mut col_pos = vec![usize::MAX; n];
        for i in 0..n {
            let (s, e) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for p in s..e {
                col_pos[lu.cols[p]] = p;
            }
            for p in s..e {
                let k = lu.cols[p];
                if k >= i {
                    break;
                }
                let pivot = lu.vals[diag_pos[k]];
                if pivot == 0.0 {
                    return Err(NiotError::InvalidParameter(format!("ILU(0) zero pivot in row {k}")));
                }
                let lik = lu.vals[p] / pivot;
                lu.vals[p] = lik;
                for q in diag_pos[k] + 1..lu.row_ptr[k + 1] {
                    let j = lu.cols[q];
                    let pos = col_pos[j];
                    if pos != usize::MAX {
                        lu.vals[pos] -= lik * lu.vals[q];
                    }
                }
            }
            for p in s..e {
                col_pos[lu.cols[p]] = usize::MAX;
            }
            if lu.vals[diag_pos[i]] == 0.0 {
                return Err(NiotError::InvalidParameter(format!("ILU(0) zero pivot in row {i}")));
            }
        }
        Ok(Self { lu, diag_pos })
    }
}

impl Preconditioner for Ilu0Preconditioner {
    fn name(&self) -> &'static str {
        "ilu0"
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let lu = &self.lu;
        let n = lu.n;
        for i in 0..n {
            let mut s = r[i];
            for p in lu.row_ptr[i]..self.diag_pos[i] {
                s -= lu.vals[p] * z[lu.cols[p]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for p in self.diag_pos[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.vals[p] * z[lu.cols[p]];
            }
            z[i] = s / lu.vals[self.diag_pos[i]];
        }
    }
}

type PreconditionerFactory = fn(&CsrMatrix) -> Result<Box<dyn Preconditioner>>;

const PRECONDITIONERS: &[(&str, PreconditionerFactory)] = &[
    ("none", |_| Ok(Box::new(IdentityPreconditioner))),
    ("diagonal", |a| Ok(Box::new(JacobiPreconditioner::new(a)))),
    ("ic0", |a| Ok(Box::new(Ic0Preconditioner::new(a)?))),
    ("ilu0", |a| Ok(Box::new(Ilu0Preconditioner::new(a)?))),
];

pub fn preconditioner_names() -> impl Iterator<Item = &'static str> {
    PRECONDITIONERS.iter().map(|(n, _)| *n)
}

pub fn is_known_preconditioner(name: &str) -> bool {
    preconditioner_names().any(|n| n == name)
}

/// Builds the preconditioner registered under `name` for matrix `a`.
pub fn build_preconditioner(name: &str, a: &CsrMatrix) -> Result<Box<dyn Preconditioner>> {
    let (_, factory) = PRECONDITIONERS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| NiotError::UnknownStrategy {
            kind: "preconditioner",
            name: name.to_string(),
            known: preconditioner_names().collect::<Vec<_>>().join(", "),
        })?;
    factory(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovOutcome {
    pub iterations: usize,
    /// Final true relative residual ‖b − Ax‖ / ‖b‖.
    pub relative_residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

fn true_residual(a: &dyn LinearOperator, b: &[f64], x: &[f64], r: &mut [f64]) {
    a.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

/// Preconditioned conjugate gradients for symmetric positive (semi)definite
/// systems. With `singular_neumann`, the right-hand side must have zero mean
/// and residuals and preconditioned residuals are projected onto the
/// mean-zero subspace; the returned `x` has zero mean.
pub fn pcg(
    a: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    prec: &dyn Preconditioner,
    rtol: f64,
    max_iter: usize,
    singular_neumann: bool,
) -> Result<KrylovOutcome> {
    let n = a.dim();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    if singular_neumann {
        remove_mean(x);
    }
    let target = rtol * bnorm;
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    // Outer loop replaces the recursive residual by the true one whenever the
    // recursion claims convergence but the true residual disagrees.
    loop {
        true_residual(a, b, x, &mut r);
        if singular_neumann {
            remove_mean(&mut r);
        }
        let mut rnorm = norm(&r);
        if rnorm <= target {
            return Ok(KrylovOutcome {
                iterations,
                relative_residual: rnorm / bnorm,
            });
        }
        if iterations >= max_iter {
            return Err(NiotError::NoConvergence {
                iterations,
                residual: rnorm / bnorm,
            });
        }
        prec.apply(&r, &mut z);
        if singular_neumann {
            remove_mean(&mut z);
        }
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            a.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            let mut rr = 0.0;
            for (((xi, ri), pi), api) in x.iter_mut().zip(r.iter_mut()).zip(&p).zip(&ap) {
                *xi += alpha * pi;
                *ri -= alpha * api;
                rr += *ri * *ri;
            }
            rnorm = rr.sqrt();
            if rnorm <= target {
                break;
            }
            prec.apply(&r, &mut z);
            // The mean projection of z is folded into the dot product and the
            // direction update.
            let (mut zsum, mut rsum, mut rz_raw) = (0.0, 0.0, 0.0);
            for (ri, zi) in r.iter().zip(&z) {
                zsum += zi;
                rsum += ri;
                rz_raw += ri * zi;
            }
            let zmean = if singular_neumann { zsum / n as f64 } else { 0.0 };
            let rz_new = rz_raw - zmean * rsum;
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = (zi - zmean) + beta * *pi;
            }
        }
        if singular_neumann {
            remove_mean(x);
        }
        // Stagnation guard: if a full restart made no progress, give up.
        let mut check = vec![0.0; n];
        true_residual(a, b, x, &mut check);
        if singular_neumann {
            remove_mean(&mut check);
        }
        let true_norm = norm(&check);
        if true_norm <= target {
            return Ok(KrylovOutcome {
                iterations,
                relative_residual: true_norm / bnorm,
            });
        }
        if iterations >= max_iter {
            return Err(NiotError::NoConvergence {
                iterations,
                residual: true_norm / bnorm,
            });
        }
    }
}

/// Right-preconditioned BiCGSTAB for general nonsingular systems.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    prec: &dyn Preconditioner,
    rtol: f64,
    max_iter: usize,
) -> Result<KrylovOutcome> {
    let n = a.n();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let target = rtol * bnorm;
    let mut r = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut iterations = 0;
    loop {
        true_residual(a, b, x, &mut r);
        let rnorm = norm(&r);
        if rnorm <= target {
            return Ok(KrylovOutcome {
                iterations,
                relative_residual: rnorm / bnorm,
            });
        }
        if iterations >= max_iter {
            return Err(NiotError::NoConvergence {
                iterations,
                residual: rnorm / bnorm,
            });
        }
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        p.iter_mut().for_each(|x| *x = 0.0);
        v.iter_mut().for_each(|x| *x = 0.0);
        while iterations < max_iter {
            iterations += 1;
            let rho_new = dot(&r0, &r);
            if rho_new == 0.0 || omega == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            prec.apply(&p, &mut phat);
            a.matvec(&phat, &mut v);
            let r0v = dot(&r0, &v);
            if r0v == 0.0 {
                break;
            }
            alpha = rho / r0v;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if norm(&s) <= target {
                for i in 0..n {
                    x[i] += alpha * phat[i];
                }
                break;
            }
            prec.apply(&s, &mut shat);
            a.matvec(&shat, &mut t);
            let tt = dot(&t, &t);
            if tt == 0.0 {
                break;
            }
            omega = dot(&t, &s) / tt;
            for i in 0..n {
                x[i] += alpha * phat[i] + omega * shat[i];
                r[i] = s[i] - omega * t[i];
            }
            if norm(&r) <= target {
                break;
            }
        }
        true_residual(a, b, x, &mut r);
        let rn = norm(&r);
        if rn <= target {
            return Ok(KrylovOutcome {
                iterations,
                relative_residual: rn / bnorm,
            });
        }
        if iterations >= max_iter {
            return Err(NiotError::NoConvergence {
                iterations,
                residual: rn / bnorm,
            });
        }
    }
}
