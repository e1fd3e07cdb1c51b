//! Geometric multigrid for the linearised implicit midpoint system.
//!
//! The Newton update `(du, dh, dS)` solves
//!
//! ```text
//! [ M1         -a D^T   -b D^T ] [du]   [-R_u]
//! [ c D         M2       0     ] [dh] = [-R_h]
//! [ 0           0        M2    ] [dS]   [-R_S]
//! ```
//!
//! with `a = dt g / 4`, `b = dt / 4` and `c = dt H / 2`. The depth row is scaled by
//! `rho = sqrt(a / c)` and the depth unknown by `1 / rho`, which turns the
//! velocity/depth coupling skew-symmetric and keeps GMRES smoothing effective
//! when `c` dwarfs `a`. Coarse operators are rediscretisations; the spaces are
//! nested, so they coincide with the Galerkin products `P^T A P`.

use crate::error::{Result, TswError};
use crate::krylov::{gmres_smooth_with, LinearOperator, SmootherWorkspace};
use crate::mesh::{Axis, MeshHierarchy, MeshLevel};
use crate::operators::LevelOperators;
use crate::scalar::{norm2, Real};
use crate::sparse::CsrMatrix;

/// Coefficients of the linearised block system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockCoefficients<T> {
    pub dt: T,
    /// Reference buoyancy (domain mean of `s`).
    pub g: T,
    /// Reference depth (domain mean of `h`).
    pub depth: T,
}

impl<T: Real> BlockCoefficients<T> {
    pub fn a(&self) -> T {
        self.dt * self.g * T::lit(0.25)
    }

    pub fn b(&self) -> T {
        self.dt * T::lit(0.25)
    }

    pub fn c(&self) -> T {
        self.dt * self.depth * T::half()
    }

    fn row_scale(&self) -> T {
        let (a, c) = (self.a(), self.c());
        if a > T::zero() && c > T::zero() {
            (a / c).sqrt()
        } else {
            T::one()
        }
    }
}

/// The block operator on one level, stacked as `[u; h; S]`.
#[derive(Clone, Debug)]
pub struct BlockSystem<T> {
    pub ops: LevelOperators<T>,
    pub coeffs: BlockCoefficients<T>,
    n_u: usize,
    n_c: usize,
}

impl<T: Real> BlockSystem<T> {
    pub fn new(level: &MeshLevel<T>, coeffs: BlockCoefficients<T>) -> Self {
        Self::from_ops(LevelOperators::assemble(level), coeffs)
    }

    pub fn from_ops(ops: LevelOperators<T>, coeffs: BlockCoefficients<T>) -> Self {
        let n_u = ops.m1.nrows();
        let n_c = ops.areas.len();
        Self {
            ops,
            coeffs,
            n_u,
            n_c,
        }
    }

    fn as_scaled(&self) -> ScaledView<'_, T> {
        ScaledView(self)
    }

    pub fn n_dofs(&self) -> usize {
        self.n_u + 2 * self.n_c
    }

    /// Sizes of the velocity and cell blocks.
    pub fn block_sizes(&self) -> (usize, usize) {
        (self.n_u, self.n_c)
    }

    fn apply_with(&self, x: &[T], y: &mut [T], rho: T) {
        let (nu, nc) = (self.n_u, self.n_c);
        let a = self.coeffs.a() / rho;
        let b = self.coeffs.b();
        let c = self.coeffs.c() * rho;
        let (xu, rest) = x.split_at(nu);
        let (xh, xs) = rest.split_at(nc);
        let (yu, rest) = y.split_at_mut(nu);
        let (yh, ys) = rest.split_at_mut(nc);
        self.ops.m1.matvec_into(xu, yu);
        // the S block of y doubles as scratch for the combined gradient argument
        for k in 0..nc {
            ys[k] = a * xh[k] + b * xs[k];
        }
        self.ops.div_t.matvec_add(-T::one(), ys, yu);
        self.ops.div.matvec_into(xu, yh);
        for k in 0..nc {
            yh[k] = c * yh[k] + self.ops.areas[k] * xh[k];
            ys[k] = self.ops.areas[k] * xs[k];
        }
    }

    /// Dense copy of the unscaled operator (tests and small oracles).
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let n = self.n_dofs();
        let mut cols = vec![vec![T::zero(); n]; n];
        let mut e = vec![T::zero(); n];
        let mut y = vec![T::zero(); n];
        for (j, col) in cols.iter_mut().enumerate() {
            e[j] = T::one();
            self.apply(&e, &mut y);
            col.copy_from_slice(&y);
            e[j] = T::zero();
        }
        (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
    }
}

impl<T: Real> LinearOperator<T> for BlockSystem<T> {
    fn dim(&self) -> usize {
        self.n_dofs()
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        self.apply_with(x, y, T::one());
    }
}

/// The row/column scaled operator the multigrid iterates on.
struct ScaledView<'a, T>(&'a BlockSystem<T>);

impl<T: Real> LinearOperator<T> for ScaledView<'_, T> {
    fn dim(&self) -> usize {
        self.0.n_dofs()
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        self.0.apply_with(x, y, self.0.coeffs.row_scale());
    }
}

/// Prolongation between two consecutive levels.
#[derive(Clone, Debug)]
pub struct Transfer<T> {
    /// `W1L` embedding, fine edges by coarse edges.
    pub p_u: CsrMatrix<T>,
    /// `W2L` injection, fine cells by coarse cells.
    pub p_c: CsrMatrix<T>,
    /// Coarse cell areas and edge lengths for the primal restrictions.
    coarse_areas: Vec<T>,
    coarse_lengths: Vec<T>,
    fine_areas: Vec<T>,
    fine_lengths: Vec<T>,
}

impl<T: Real> Transfer<T> {
    /// Builds the transfer from `coarse` to `fine`, which must halve every cell.
    pub fn new(coarse: &MeshLevel<T>, fine: &MeshLevel<T>) -> Result<Self> {
        if fine.nx != 2 * coarse.nx || fine.ny != 2 * coarse.ny {
            return Err(TswError::Config(format!(
                "levels {}x{} and {}x{} are not nested by factor two",
                coarse.nx, coarse.ny, fine.nx, fine.ny
            )));
        }
        let mut tu = Vec::new();
        for (fe, edge) in fine.edges().iter().enumerate() {
            let (fi, fj) = fine.cell_ij(edge.upper);
            let (ci, cj) = (fi / 2, fj / 2);
            let ce = coarse.cell_edges(ci, cj);
            match edge.normal {
                Axis::X if fi % 2 == 0 => tu.push((fe, ce[0], T::one())),
                Axis::Y if fj % 2 == 0 => tu.push((fe, ce[2], T::one())),
                Axis::X => {
                    let theta = (edge.position - coarse.x_edges[ci]) / coarse.dx(ci);
                    tu.push((fe, ce[0], T::one() - theta));
                    tu.push((fe, ce[1], theta));
                }
                Axis::Y => {
                    let theta = (edge.position - coarse.y_edges[cj]) / coarse.dy(cj);
                    tu.push((fe, ce[2], T::one() - theta));
                    tu.push((fe, ce[3], theta));
                }
            }
        }
        let tc: Vec<(usize, usize, T)> = (0..fine.n_cells())
            .map(|f| {
                let (i, j) = fine.cell_ij(f);
                (f, coarse.cell_index(i / 2, j / 2), T::one())
            })
            .collect();
        Ok(Self {
            p_u: CsrMatrix::from_triplets(fine.n_edges(), coarse.n_edges(), &tu),
            p_c: CsrMatrix::from_triplets(fine.n_cells(), coarse.n_cells(), &tc),
            coarse_areas: coarse.cell_areas(),
            coarse_lengths: coarse.edges().iter().map(|e| e.length).collect(),
            fine_areas: fine.cell_areas(),
            fine_lengths: fine.edges().iter().map(|e| e.length).collect(),
        })
    }

    fn prolong_block(&self, coarse: &[T], fine: &mut [T], nu_c: usize, nc_c: usize, nu_f: usize, nc_f: usize) {
        self.p_u.matvec_add(T::one(), &coarse[..nu_c], &mut fine[..nu_f]);
        self.p_c.matvec_add(T::one(), &coarse[nu_c..nu_c + nc_c], &mut fine[nu_f..nu_f + nc_f]);
        self.p_c.matvec_add(T::one(), &coarse[nu_c + nc_c..], &mut fine[nu_f + nc_f..]);
    }

    fn restrict_block(&self, fine: &[T], coarse: &mut [T], nu_f: usize, nc_f: usize) {
        let nu_c = self.p_u.ncols();
        let nc_c = self.p_c.ncols();
        let (cu, rest) = coarse.split_at_mut(nu_c);
        let (ch, cs) = rest.split_at_mut(nc_c);
        self.p_u.transpose_matvec_into(&fine[..nu_f], cu);
        self.p_c.transpose_matvec_into(&fine[nu_f..nu_f + nc_f], ch);
        self.p_c.transpose_matvec_into(&fine[nu_f + nc_f..], cs);
    }

    /// Restriction of a `W1L` field: coarse normal velocity from the flux through
    /// the fine edges it covers.
    pub fn restrict_flux_field(&self, fine: &[T]) -> Vec<T> {
        let mut flux = vec![T::zero(); self.coarse_lengths.len()];
        for (fe, (cols, vals)) in (0..self.p_u.nrows()).map(|r| (r, self.p_u.row(r))) {
            if cols.len() == 1 && vals[0] == T::one() {
                flux[cols[0]] += fine[fe] * self.fine_lengths[fe];
            }
        }
        flux.iter().zip(&self.coarse_lengths).map(|(f, l)| *f / *l).collect()
    }

    /// Restriction of a `W2L` field: area weighted average over the children.
    pub fn restrict_cell_field(&self, fine: &[T]) -> Vec<T> {
        let weighted: Vec<T> = fine.iter().zip(&self.fine_areas).map(|(v, a)| *v * *a).collect();
        self.p_c
            .transpose_matvec(&weighted)
            .iter()
            .zip(&self.coarse_areas)
            .map(|(v, a)| *v / *a)
            .collect()
    }
}

/// Multigrid parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverParams<T> {
    pub pre_smooth: usize,
    pub post_smooth: usize,
    pub coarse_iterations: usize,
    pub max_cycles: usize,
    /// Relative residual target.
    pub rtol: T,
    /// Relative residual below which growth counts as stagnation rather than divergence.
    pub divergence_floor: T,
}

impl<T: Real> Default for SolverParams<T> {
    fn default() -> Self {
        Self {
            pre_smooth: 2,
            post_smooth: 2,
            coarse_iterations: 4,
            max_cycles: 50,
            rtol: T::lit(1e-13),
            divergence_floor: T::lit(1e-10),
        }
    }
}

/// Result of a multigrid solve.
#[derive(Clone, Debug)]
pub struct SolveReport<T> {
    pub cycles: usize,
    /// Relative residual before the first and after every cycle.
    pub history: Vec<T>,
    pub converged: bool,
}

/// V-cycle multigrid over a mesh hierarchy.
#[derive(Clone, Debug)]
pub struct Multigrid<T> {
    pub systems: Vec<BlockSystem<T>>,
    pub transfers: Vec<Transfer<T>>,
    pub params: SolverParams<T>,
}

impl<T: Real> Multigrid<T> {
    pub fn new(hierarchy: &MeshHierarchy<T>, coeffs: BlockCoefficients<T>, params: SolverParams<T>) -> Result<Self> {
        let systems = hierarchy.levels.iter().map(|l| BlockSystem::new(l, coeffs)).collect();
        let transfers = build_transfers(hierarchy)?;
        Ok(Self {
            systems,
            transfers,
            params,
        })
    }

    pub fn set_coefficients(&mut self, coeffs: BlockCoefficients<T>) {
        for s in &mut self.systems {
            s.coeffs = coeffs;
        }
    }

    pub fn finest(&self) -> &BlockSystem<T> {
        self.systems.last().expect("at least one level")
    }

    fn workspace(&self) -> Vec<LevelWork<T>> {
        self.systems
            .iter()
            .enumerate()
            .map(|(l, sys)| {
                let n = sys.n_dofs();
                let iters = if l == 0 {
                    self.params.coarse_iterations
                } else {
                    self.params.pre_smooth.max(self.params.post_smooth)
                };
                LevelWork {
                    smooth: SmootherWorkspace::new(n, iters),
                    x: vec![T::zero(); n],
                    r: vec![T::zero(); n],
                    e: vec![T::zero(); n],
                    ae: vec![T::zero(); n],
                }
            })
            .collect()
    }

    /// One V-cycle on `level`. `r` holds the scaled residual `b - A x` on entry
    /// and the updated residual on exit. `work` holds the buffers of this level
    /// and every coarser one.
    fn vcycle(&self, level: usize, x: &mut [T], r: &mut [T], residuals: &mut [T], work: &mut [LevelWork<T>]) {
        let sys = &self.systems[level];
        let op = sys.as_scaled();
        let p = &self.params;
        let (coarser, here) = work.split_at_mut(level);
        let here = &mut here[0];
        if level == 0 {
            gmres_smooth_with(&op, x, r, p.coarse_iterations, &mut here.smooth);
            residuals[0] = norm2(r);
            return;
        }
        gmres_smooth_with(&op, x, r, p.pre_smooth, &mut here.smooth);
        let (nu_f, nc_f) = sys.block_sizes();
        let (nu_c, nc_c) = self.systems[level - 1].block_sizes();
        let t = &self.transfers[level - 1];
        let mut rc = std::mem::take(&mut coarser[level - 1].r);
        let mut ec = std::mem::take(&mut coarser[level - 1].x);
        t.restrict_block(r, &mut rc, nu_f, nc_f);
        ec.iter_mut().for_each(|v| *v = T::zero());
        self.vcycle(level - 1, &mut ec, &mut rc, residuals, coarser);
        here.e.iter_mut().for_each(|v| *v = T::zero());
        t.prolong_block(&ec, &mut here.e, nu_c, nc_c, nu_f, nc_f);
        coarser[level - 1].r = rc;
        coarser[level - 1].x = ec;
        op.apply(&here.e, &mut here.ae);
        for k in 0..x.len() {
            x[k] += here.e[k];
            r[k] -= here.ae[k];
        }
        gmres_smooth_with(&op, x, r, p.post_smooth, &mut here.smooth);
        residuals[level] = norm2(r);
    }

    /// Solves `A x = b` on the finest level starting from `x`.
    pub fn solve(&self, b: &[T], x: &mut [T]) -> Result<SolveReport<T>> {
        let fine = self.finest();
        let rho = fine.coeffs.row_scale();
        let (nu, nc) = fine.block_sizes();
        let bnorm = norm2(b);
        if bnorm == T::zero() {
            x.iter_mut().for_each(|v| *v = T::zero());
            return Ok(SolveReport {
                cycles: 0,
                history: vec![T::zero()],
                converged: true,
            });
        }
        // change of variables: b_hat = R b, x = C y
        let mut y = x.to_vec();
        y[nu..nu + nc].iter_mut().for_each(|v| *v *= rho);
        let mut xx = vec![T::zero(); y.len()];
        let mut r = vec![T::zero(); y.len()];
        // unscaled residual of the iterate `y`; `r` receives its scaled form
        let mut true_residual = |y: &[T], r: &mut [T]| -> T {
            xx.copy_from_slice(y);
            xx[nu..nu + nc].iter_mut().for_each(|v| *v /= rho);
            fine.apply(&xx, r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = *bi - *ri;
            }
            let rel = norm2(r) / bnorm;
            r[nu..nu + nc].iter_mut().for_each(|v| *v *= rho);
            rel
        };
        // relative norm of the unscaled residual from its scaled form
        let scaled_norm = |r: &[T]| -> T {
            let hpart: T = r[nu..nu + nc].iter().map(|v| (*v / rho) * (*v / rho)).sum();
            let rest: T = r[..nu].iter().chain(&r[nu + nc..]).map(|v| *v * *v).sum();
            (hpart + rest).sqrt() / bnorm
        };
        let mut work = self.workspace();
        let mut history = vec![true_residual(&y, &mut r)];
        let mut per_level = vec![T::zero(); self.systems.len()];
        let mut converged = history[0] < self.params.rtol;
        let mut cycles = 0;
        let mut trial = y.clone();
        let mut r_trial = r.clone();
        while !converged && cycles < self.params.max_cycles {
            trial.copy_from_slice(&y);
            r_trial.copy_from_slice(&r);
            self.vcycle(self.systems.len() - 1, &mut trial, &mut r_trial, &mut per_level, &mut work);
            cycles += 1;
            let mut rel = scaled_norm(&r_trial);
            if rel < self.params.rtol || !rel.is_finite() {
                // confirm with the true residual, which also removes any drift
                rel = true_residual(&trial, &mut r_trial);
            }
            let prev = *history.last().unwrap();
            if !rel.is_finite() || (rel > prev && rel > self.params.divergence_floor) {
                return Err(TswError::MultigridDivergence {
                    cycle: cycles,
                    before: prev.to_f64_lossy(),
                    after: rel.to_f64_lossy(),
                    per_level: per_level.iter().map(|v| v.to_f64_lossy()).collect(),
                });
            }
            if rel >= prev {
                // stagnation at round-off: keep the better iterate
                history.push(prev);
                break;
            }
            std::mem::swap(&mut y, &mut trial);
            std::mem::swap(&mut r, &mut r_trial);
            history.push(rel);
            converged = rel < self.params.rtol;
        }
        y[nu..nu + nc].iter_mut().for_each(|v| *v /= rho);
        x.copy_from_slice(&y);
        Ok(SolveReport {
            cycles,
            converged: *history.last().unwrap() < self.params.rtol,
            history,
        })
    }
}

/// Per level scratch buffers of one solve.
#[derive(Debug)]
struct LevelWork<T> {
    smooth: SmootherWorkspace<T>,
    /// Correction and residual when this level is the coarse problem.
    x: Vec<T>,
    r: Vec<T>,
    e: Vec<T>,
    ae: Vec<T>,
}

/// Transfers between every pair of consecutive levels, coarsest pair first.
pub fn build_transfers<T: Real>(hierarchy: &MeshHierarchy<T>) -> Result<Vec<Transfer<T>>> {
    hierarchy
        .levels
        .windows(2)
        .map(|w| Transfer::new(&w[0], &w[1]))
        .collect()
}
