//! Krylov solvers: restarted GMRES (Arnoldi with modified Gram-Schmidt and Givens
//! rotations) and Jacobi preconditioned conjugate gradients.

use crate::scalar::{axpy, dot, norm2, Real};
use crate::sparse::CsrMatrix;

/// A square linear map.
pub trait LinearOperator<T: Real> {
    fn dim(&self) -> usize;
    /// `y = A x`
    fn apply(&self, x: &[T], y: &mut [T]);
}

impl<T: Real> LinearOperator<T> for CsrMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        self.matvec_into(x, y);
    }
}

/// Outcome of a Krylov solve.
#[derive(Clone, Debug)]
pub struct KrylovReport<T> {
    pub iterations: usize,
    /// Residual norm at entry and after every iteration.
    pub residuals: Vec<T>,
    pub converged: bool,
}

impl<T: Real> KrylovReport<T> {
    pub fn final_residual(&self) -> T {
        *self.residuals.last().expect("residual history is never empty")
    }
}

fn residual<T: Real>(op: &dyn LinearOperator<T>, b: &[T], x: &[T], r: &mut [T]) {
    op.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = *bi - *ri;
    }
}

#[inline]
fn givens<T: Real>(a: T, b: T) -> (T, T) {
    if b == T::zero() {
        (T::one(), T::zero())
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}

/// Restarted GMRES without preconditioning. Stops after `max_iter` Arnoldi steps
/// in total or when the residual drops below `tol * ||b||`. The residual
/// history is monotone non-increasing.
pub fn gmres<T: Real>(
    op: &dyn LinearOperator<T>,
    b: &[T],
    x: &mut [T],
    restart: usize,
    max_iter: usize,
    tol: T,
) -> KrylovReport<T> {
    let n = op.dim();
    let restart = restart.max(1);
    let target = tol * norm2(b);
    let mut r = vec![T::zero(); n];
    residual(op, b, x, &mut r);
    let mut beta = norm2(&r);
    let mut history = vec![beta];
    let mut total = 0;
    let mut w = vec![T::zero(); n];
    while total < max_iter && beta > target && beta > T::zero() {
        let m = restart.min(max_iter - total);
        let mut v: Vec<Vec<T>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|&ri| ri / beta).collect());
        let mut hcols: Vec<Vec<T>> = Vec::with_capacity(m);
        let mut cs: Vec<(T, T)> = Vec::with_capacity(m);
        let mut g = vec![T::zero(); m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m {
            op.apply(&v[k], &mut w);
            let mut h = vec![T::zero(); k + 2];
            for (i, vi) in v.iter().enumerate() {
                h[i] = dot(&w, vi);
                axpy(-h[i], vi, &mut w);
            }
            let hnext = norm2(&w);
            let scale = h.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            h[k + 1] = hnext;
            for (i, &(c, s)) in cs.iter().enumerate() {
                let (a, bb) = (h[i], h[i + 1]);
                h[i] = c * a + s * bb;
                h[i + 1] = -s * a + c * bb;
            }
            let (c, s) = givens(h[k], h[k + 1]);
            h[k] = c * h[k] + s * h[k + 1];
            h[k + 1] = T::zero();
            g[k + 1] = -s * g[k];
            g[k] = c * g[k];
            cs.push((c, s));
            let breakdown = !(hnext > T::epsilon() * scale);
            if !breakdown {
                v.push(w.iter().map(|&wi| wi / hnext).collect());
            }
            hcols.push(h);
            k += 1;
            total += 1;
            let est = g[k].abs();
            history.push(est);
            if est <= target || breakdown {
                break;
            }
        }
        // back substitution on the k x k triangle
        let mut y = vec![T::zero(); k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for (j, yj) in y.iter().enumerate().skip(i + 1) {
                acc -= hcols[j][i] * *yj;
            }
            y[i] = if hcols[i][i] != T::zero() { acc / hcols[i][i] } else { T::zero() };
        }
        for (i, yi) in y.iter().enumerate() {
            axpy(*yi, &v[i], x);
        }
        residual(op, b, x, &mut r);
        beta = norm2(&r);
        // replace the estimate with the true residual, keeping the history monotone
        let last = history.len() - 1;
        history[last] = beta.min(history[last - 1]);
        if k < m && beta > target {
            // breakdown: the Krylov space is exhausted
            break;
        }
    }
    let fin = *history.last().unwrap();
    KrylovReport {
        iterations: total,
        converged: fin <= target,
        residuals: history,
    }
}

/// Scratch vectors for [`gmres_smooth_with`], reusable across calls.
#[derive(Clone, Debug, Default)]
pub struct SmootherWorkspace<T> {
    basis: Vec<Vec<T>>,
    w: Vec<T>,
}

impl<T: Real> SmootherWorkspace<T> {
    pub fn new(n: usize, iters: usize) -> Self {
        Self {
            basis: vec![vec![T::zero(); n]; iters + 1],
            w: vec![T::zero(); n],
        }
    }

    fn ensure(&mut self, n: usize, iters: usize) {
        if self.basis.len() < iters + 1 || self.w.len() != n {
            *self = Self::new(n, iters);
        }
    }
}

/// A single cycle of at most `iters` GMRES iterations without a convergence test,
/// used as a multigrid smoother. `r` holds `b - A x` on entry and the updated
/// residual on exit, obtained from the Arnoldi relation `r = V (beta e1 - H y)`
/// rather than a fresh product with `A`. Returns the number of iterations taken.
pub fn gmres_smooth<T: Real>(op: &dyn LinearOperator<T>, x: &mut [T], r: &mut [T], iters: usize) -> usize {
    let mut ws = SmootherWorkspace::new(op.dim(), iters);
    gmres_smooth_with(op, x, r, iters, &mut ws)
}

/// [`gmres_smooth`] with caller provided scratch space.
pub fn gmres_smooth_with<T: Real>(
    op: &dyn LinearOperator<T>,
    x: &mut [T],
    r: &mut [T],
    iters: usize,
    ws: &mut SmootherWorkspace<T>,
) -> usize {
    let beta = norm2(r);
    if !(beta > T::zero()) || iters == 0 {
        return 0;
    }
    ws.ensure(op.dim(), iters);
    for (v, ri) in ws.basis[0].iter_mut().zip(r.iter()) {
        *v = *ri / beta;
    }
    let mut nbasis = 1;
    // unrotated Hessenberg columns for the residual, rotated ones for the solve
    let mut raw: Vec<Vec<T>> = Vec::with_capacity(iters);
    let mut hcols: Vec<Vec<T>> = Vec::with_capacity(iters);
    let mut cs: Vec<(T, T)> = Vec::with_capacity(iters);
    let mut g = vec![T::zero(); iters + 1];
    g[0] = beta;
    let mut k = 0;
    while k < iters {
        op.apply(&ws.basis[k], &mut ws.w);
        let mut h = vec![T::zero(); k + 2];
        for (i, vi) in ws.basis[..=k].iter().enumerate() {
            h[i] = dot(&ws.w, vi);
            axpy(-h[i], vi, &mut ws.w);
        }
        let hnext = norm2(&ws.w);
        let scale = h.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        h[k + 1] = hnext;
        raw.push(h.clone());
        for (i, &(c, s)) in cs.iter().enumerate() {
            let (a, bb) = (h[i], h[i + 1]);
            h[i] = c * a + s * bb;
            h[i + 1] = -s * a + c * bb;
        }
        let (c, s) = givens(h[k], h[k + 1]);
        h[k] = c * h[k] + s * h[k + 1];
        h[k + 1] = T::zero();
        g[k + 1] = -s * g[k];
        g[k] = c * g[k];
        cs.push((c, s));
        hcols.push(h);
        k += 1;
        if !(hnext > T::epsilon() * scale) {
            break;
        }
        std::mem::swap(&mut ws.w, &mut ws.basis[k]);
        ws.basis[k].iter_mut().for_each(|wi| *wi /= hnext);
        nbasis += 1;
    }
    let mut y = vec![T::zero(); k];
    for i in (0..k).rev() {
        let mut acc = g[i];
        for (j, yj) in y.iter().enumerate().skip(i + 1) {
            acc -= hcols[j][i] * *yj;
        }
        y[i] = if hcols[i][i] != T::zero() { acc / hcols[i][i] } else { T::zero() };
    }
    let mut coef = vec![T::zero(); nbasis];
    coef[0] = beta;
    for (j, yj) in y.iter().enumerate() {
        axpy(*yj, &ws.basis[j], x);
        for (i, hij) in raw[j].iter().enumerate().take(nbasis) {
            coef[i] -= *hij * *yj;
        }
    }
    r.iter_mut().for_each(|ri| *ri = T::zero());
    for (c, v) in coef.iter().zip(&ws.basis) {
        axpy(*c, v, r);
    }
    k
}

/// Conjugate gradients with a Jacobi preconditioner for symmetric positive definite
/// matrices. Stops when `||r|| <= tol * ||b||` or after `max_iter` iterations.
pub fn pcg<T: Real>(a: &CsrMatrix<T>, b: &[T], x: &mut [T], tol: T, max_iter: usize) -> KrylovReport<T> {
    let n = a.nrows();
    let inv_diag: Vec<T> = a
        .diagonal()
        .iter()
        .map(|&d| if d != T::zero() { T::one() / d } else { T::one() })
        .collect();
    let target = tol * norm2(b);
    let mut r = vec![T::zero(); n];
    residual(a, b, x, &mut r);
    let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(ri, di)| *ri * *di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut history = vec![norm2(&r)];
    let mut ap = vec![T::zero(); n];
    let mut it = 0;
    while it < max_iter && *history.last().unwrap() > target {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        for ((zi, ri), di) in z.iter_mut().zip(&r).zip(&inv_diag) {
            *zi = *ri * *di;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = *zi + beta * *pi;
        }
        history.push(norm2(&r));
        it += 1;
    }
    let fin = *history.last().unwrap();
    KrylovReport {
        iterations: it,
        converged: fin <= target,
        residuals: history,
    }
}
