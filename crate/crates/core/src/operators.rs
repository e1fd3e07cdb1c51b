//! Assembly of the low order bilinear forms and the facet couplings.
//!
//! Volume integrals use a 3-point tensor Gauss-Legendre rule, which is exact for
//! every product of lowest order basis functions appearing here. Reference
//! element data is shared by all cells: the maps are diagonal affine and the
//! `W1L` dofs are normal velocities, so physical basis functions are plain
//! compositions with the map.
//!
//! Facet terms follow the jump/mean convention of [`crate::mesh::Edge`]:
//! `[a] = a_lower - a_upper`, with the unit normal leaving the lower cell.

use crate::error::{Result, TswError};
use crate::mesh::MeshLevel;
use crate::scalar::Real;
use crate::spaces::{eval_basis, tensor_rule, BasisEval, SpaceKind};
use crate::sparse::CsrMatrix;

/// Quadrature points per dimension for low order volume integrals.
pub const LOW_ORDER_QUADRATURE: usize = 3;

/// Reference-element data for the lowest order spaces.
#[derive(Clone, Debug)]
pub struct LowOrderElement<T> {
    pub rule: Vec<(T, T, T)>,
    pub w0: BasisEval<T>,
    pub w1: BasisEval<T>,
    /// `sum_q w_q v_a . v_b` on the reference square.
    pub m1_ref: [[T; 4]; 4],
    /// `sum_q w_q psi_a psi_b` on the reference square.
    pub m0_ref: [[T; 4]; 4],
}

impl<T: Real> LowOrderElement<T> {
    pub fn new() -> Self {
        let rule = tensor_rule::<T>(LOW_ORDER_QUADRATURE);
        let pts: Vec<(T, T)> = rule.iter().map(|&(x, y, _)| (x, y)).collect();
        let w0 = eval_basis(SpaceKind::W0L, &pts, &[]);
        let w1 = eval_basis(SpaceKind::W1L, &pts, &[]);
        let mut m1_ref = [[T::zero(); 4]; 4];
        let mut m0_ref = [[T::zero(); 4]; 4];
        for (q, &(_, _, w)) in rule.iter().enumerate() {
            for a in 0..4 {
                for b in 0..4 {
                    let va = w1.values[q][a];
                    let vb = w1.values[q][b];
                    m1_ref[a][b] += w * (va[0] * vb[0] + va[1] * vb[1]);
                    m0_ref[a][b] += w * w0.values[q][a][0] * w0.values[q][b][0];
                }
            }
        }
        Self {
            rule,
            w0,
            w1,
            m1_ref,
            m0_ref,
        }
    }
}

impl<T: Real> Default for LowOrderElement<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn jacobian<T: Real>(level: &MeshLevel<T>, i: usize, j: usize) -> (T, T, T) {
    let dx = level.dx(i);
    let dy = level.dy(j);
    (dx, dy, dx * dy * T::lit(0.25))
}

/// `M1 = int v . w` on `W1L`.
pub fn assemble_mass_w1<T: Real>(level: &MeshLevel<T>) -> CsrMatrix<T> {
    let el = LowOrderElement::<T>::new();
    let mut trip = Vec::with_capacity(level.n_cells() * 8);
    for j in 0..level.ny {
        for i in 0..level.nx {
            let (_, _, jac) = jacobian(level, i, j);
            let es = level.cell_edges(i, j);
            for a in 0..4 {
                for b in 0..4 {
                    let v = el.m1_ref[a][b] * jac;
                    if v != T::zero() {
                        trip.push((es[a], es[b], v));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(level.n_edges(), level.n_edges(), &trip)
}

/// `M2 = int phi sigma` on `W2L`: diagonal with the cell areas.
pub fn assemble_mass_w2<T: Real>(level: &MeshLevel<T>) -> CsrMatrix<T> {
    CsrMatrix::from_diagonal(&level.cell_areas())
}

/// `D = int phi div v`, mapping `W1L` to `W2L`.
pub fn assemble_div<T: Real>(level: &MeshLevel<T>) -> CsrMatrix<T> {
    let el = LowOrderElement::<T>::new();
    let two = T::lit(2.0);
    let mut trip = Vec::with_capacity(level.n_cells() * 4);
    for j in 0..level.ny {
        for i in 0..level.nx {
            let (dx, dy, jac) = jacobian(level, i, j);
            let c = level.cell_index(i, j);
            let es = level.cell_edges(i, j);
            for (b, &e) in es.iter().enumerate() {
                let scale = if b < 2 { two / dx } else { two / dy };
                let mut acc = T::zero();
                for (q, &(_, _, w)) in el.rule.iter().enumerate() {
                    acc += w * jac * scale * el.w1.divs[q][b];
                }
                trip.push((c, e, acc));
            }
        }
    }
    CsrMatrix::from_triplets(level.n_cells(), level.n_edges(), &trip)
}

/// `int psi h psi'` on `W0L` for a piecewise constant weight `h`.
pub fn assemble_weighted_mass_w0<T: Real>(level: &MeshLevel<T>, h: &[T]) -> Result<CsrMatrix<T>> {
    if let Some(c) = h.iter().position(|v| !(*v > T::zero())) {
        return Err(TswError::State(format!("non-positive depth {:e} in cell {c}", h[c])));
    }
    let el = LowOrderElement::<T>::new();
    let mut trip = Vec::with_capacity(level.n_cells() * 16);
    for j in 0..level.ny {
        for i in 0..level.nx {
            let (_, _, jac) = jacobian(level, i, j);
            let c = level.cell_index(i, j);
            let vs = level.cell_vertices(i, j);
            for a in 0..4 {
                for b in 0..4 {
                    trip.push((vs[a], vs[b], el.m0_ref[a][b] * jac * h[c]));
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(level.n_vertices(), level.n_vertices(), &trip))
}

/// `W0L` mass matrices with a piecewise constant weight, reassembled on a fixed
/// sparsity pattern.
#[derive(Clone, Debug)]
pub struct WeightedMassW0<T> {
    matrix: CsrMatrix<T>,
    /// Value slots and unweighted entries of every cell's 4x4 block.
    cell_slots: Vec<[usize; 16]>,
    cell_values: Vec<[T; 16]>,
}

impl<T: Real> WeightedMassW0<T> {
    pub fn new(level: &MeshLevel<T>) -> Self {
        let ones = vec![T::one(); level.n_cells()];
        let matrix = assemble_weighted_mass_w0(level, &ones).expect("unit weight is positive");
        let el = LowOrderElement::<T>::new();
        let mut cell_slots = Vec::with_capacity(level.n_cells());
        let mut cell_values = Vec::with_capacity(level.n_cells());
        for c in 0..level.n_cells() {
            let (i, j) = level.cell_ij(c);
            let (_, _, jac) = jacobian(level, i, j);
            let vs = level.cell_vertices(i, j);
            let mut slots = [0; 16];
            let mut vals = [T::zero(); 16];
            for a in 0..4 {
                for b in 0..4 {
                    slots[4 * a + b] = matrix.slot(vs[a], vs[b]).expect("pattern holds every cell block");
                    vals[4 * a + b] = el.m0_ref[a][b] * jac;
                }
            }
            cell_slots.push(slots);
            cell_values.push(vals);
        }
        Self {
            matrix,
            cell_slots,
            cell_values,
        }
    }

    /// `int psi h psi'`; same result as [`assemble_weighted_mass_w0`].
    pub fn assemble(&self, h: &[T]) -> Result<CsrMatrix<T>> {
        if let Some(c) = h.iter().position(|v| !(*v > T::zero())) {
            return Err(TswError::State(format!("non-positive depth {:e} in cell {c}", h[c])));
        }
        let mut matrix = self.matrix.clone();
        let values = matrix.values_mut();
        values.iter_mut().for_each(|v| *v = T::zero());
        for ((slots, vals), hc) in self.cell_slots.iter().zip(&self.cell_values).zip(h) {
            for k in 0..16 {
                values[slots[k]] += vals[k] * *hc;
            }
        }
        Ok(matrix)
    }
}

/// Weak curl `C[psi, v] = int perp_grad(psi) . v`, mapping `W1L` to `W0L`.
///
/// `perp_grad(psi) = (d psi/dy, -d psi/dx)`, so that on a periodic domain
/// `int perp_grad(psi) . u = int psi (du_y/dx - du_x/dy)`.
pub fn assemble_weak_curl<T: Real>(level: &MeshLevel<T>) -> CsrMatrix<T> {
    let el = LowOrderElement::<T>::new();
    let two = T::lit(2.0);
    let mut trip = Vec::with_capacity(level.n_cells() * 16);
    for j in 0..level.ny {
        for i in 0..level.nx {
            let (dx, dy, jac) = jacobian(level, i, j);
            let vs = level.cell_vertices(i, j);
            let es = level.cell_edges(i, j);
            for a in 0..4 {
                for b in 0..4 {
                    let mut acc = T::zero();
                    for (q, &(_, _, w)) in el.rule.iter().enumerate() {
                        let g = el.w0.grads[q][a];
                        let v = el.w1.values[q][b];
                        acc += w * jac * (two / dy * g[1] * v[0] - two / dx * g[0] * v[1]);
                    }
                    if acc != T::zero() {
                        trip.push((vs[a], es[b], acc));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(level.n_vertices(), level.n_edges(), &trip)
}

/// `int perp_grad(psi) . u` for every `W0L` basis function `psi`.
pub fn apply_perp_grad<T: Real>(level: &MeshLevel<T>, u: &[T]) -> Vec<T> {
    assemble_weak_curl(level).matvec(u)
}

/// Matrix-free `int v . (h w)` for a piecewise constant weight `h`.
pub fn apply_weighted_mass_w1<T: Real>(el: &LowOrderElement<T>, level: &MeshLevel<T>, weight: &[T], w: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); level.n_edges()];
    for j in 0..level.ny {
        for i in 0..level.nx {
            let (_, _, jac) = jacobian(level, i, j);
            let c = level.cell_index(i, j);
            let es = level.cell_edges(i, j);
            let s = jac * weight[c];
            for a in 0..4 {
                let mut acc = T::zero();
                for b in 0..4 {
                    acc += el.m1_ref[a][b] * w[es[b]];
                }
                out[es[a]] += s * acc;
            }
        }
    }
    out
}

/// Per-cell integral `int_cell a . b` of two `W1L` fields.
pub fn cell_integral_dot<T: Real>(el: &LowOrderElement<T>, level: &MeshLevel<T>, a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); level.n_cells()];
    for j in 0..level.ny {
        for i in 0..level.nx {
            let (_, _, jac) = jacobian(level, i, j);
            let es = level.cell_edges(i, j);
            let mut acc = T::zero();
            for p in 0..4 {
                for q in 0..4 {
                    acc += el.m1_ref[p][q] * a[es[p]] * b[es[q]];
                }
            }
            out[level.cell_index(i, j)] = acc * jac;
        }
    }
    out
}

/// `int v . (q k x F) = int q (-F_y v_x + F_x v_y)` for every `W1L` test function,
/// evaluated element by element at the volume quadrature points.
pub fn apply_vorticity_flux<T: Real>(el: &LowOrderElement<T>, level: &MeshLevel<T>, q: &[T], flux: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); level.n_edges()];
    for j in 0..level.ny {
        for i in 0..level.nx {
            let (_, _, jac) = jacobian(level, i, j);
            let es = level.cell_edges(i, j);
            let vs = level.cell_vertices(i, j);
            let mut local = [T::zero(); 4];
            for (k, &(_, _, w)) in el.rule.iter().enumerate() {
                let mut qv = T::zero();
                for a in 0..4 {
                    qv += q[vs[a]] * el.w0.values[k][a][0];
                }
                let mut fx = T::zero();
                let mut fy = T::zero();
                for b in 0..4 {
                    let v = el.w1.values[k][b];
                    fx += flux[es[b]] * v[0];
                    fy += flux[es[b]] * v[1];
                }
                let s = w * jac * qv;
                for b in 0..4 {
                    let v = el.w1.values[k][b];
                    local[b] += s * (-fy * v[0] + fx * v[1]);
                }
            }
            for b in 0..4 {
                out[es[b]] += local[b];
            }
        }
    }
    out
}

/// Selector for the facet couplings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FacetKind {
    /// `int v . n {s} [T]` for every `W1L` test function (`aux` is `T` in `W2L`).
    JumpMeanST,
    /// `int [sigma] {s} F . n` for every `W2L` test function (`aux` is `F` in `W1L`).
    JumpMeanSF,
    /// `int |F . n| [sigma] [s]` for every `W2L` test function (`aux` is `F` in `W1L`).
    Upwind,
}

/// Evaluates a facet coupling as a dual vector.
pub fn assemble_facet_term<T: Real>(kind: FacetKind, level: &MeshLevel<T>, s: &[T], aux: &[T]) -> Vec<T> {
    match kind {
        FacetKind::JumpMeanST => jump_mean_st(level, s, aux),
        FacetKind::JumpMeanSF => jump_mean_sf(level, s, aux),
        FacetKind::Upwind => upwind_sf(level, s, aux),
    }
}

/// `int v_e . n {s} [t]` for each edge basis function `v_e` (normal component 1 on `e`).
pub fn jump_mean_st<T: Real>(level: &MeshLevel<T>, s: &[T], t: &[T]) -> Vec<T> {
    let h = T::half();
    level
        .edges()
        .iter()
        .map(|e| e.length * h * (s[e.lower] + s[e.upper]) * (t[e.lower] - t[e.upper]))
        .collect()
}

/// `int [sigma_c] {s} F . n` for each cell indicator `sigma_c`.
pub fn jump_mean_sf<T: Real>(level: &MeshLevel<T>, s: &[T], flux: &[T]) -> Vec<T> {
    let h = T::half();
    let mut out = vec![T::zero(); level.n_cells()];
    for (k, e) in level.edges().iter().enumerate() {
        let v = e.length * h * (s[e.lower] + s[e.upper]) * flux[k];
        out[e.lower] += v;
        out[e.upper] -= v;
    }
    out
}

/// `int {sigma_c} [s] F . n` for each cell indicator `sigma_c`.
pub fn mean_jump_sf<T: Real>(level: &MeshLevel<T>, s: &[T], flux: &[T]) -> Vec<T> {
    let h = T::half();
    let mut out = vec![T::zero(); level.n_cells()];
    for (k, e) in level.edges().iter().enumerate() {
        let v = e.length * h * (s[e.lower] - s[e.upper]) * flux[k];
        out[e.lower] += v;
        out[e.upper] += v;
    }
    out
}

/// `int |F . n| [sigma_c] [s]` for each cell indicator `sigma_c`.
pub fn upwind_sf<T: Real>(level: &MeshLevel<T>, s: &[T], flux: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); level.n_cells()];
    for (k, e) in level.edges().iter().enumerate() {
        let v = e.length * flux[k].abs() * (s[e.lower] - s[e.upper]);
        out[e.lower] += v;
        out[e.upper] -= v;
    }
    out
}

/// `G(s)` with `G(s) t = jump_mean_st(s, t)`. Its transpose is the buoyancy flux
/// operator: `G(s)^T F = jump_mean_sf(s, F)`.
pub fn facet_gradient_operator<T: Real>(level: &MeshLevel<T>, s: &[T]) -> CsrMatrix<T> {
    let h = T::half();
    let mut trip = Vec::with_capacity(2 * level.n_edges());
    for (k, e) in level.edges().iter().enumerate() {
        let m = e.length * h * (s[e.lower] + s[e.upper]);
        trip.push((k, e.lower, m));
        trip.push((k, e.upper, -m));
    }
    CsrMatrix::from_triplets(level.n_edges(), level.n_cells(), &trip)
}

/// Assembled fine-grid operators reused across Newton iterations.
#[derive(Clone, Debug)]
pub struct LevelOperators<T> {
    pub m1: CsrMatrix<T>,
    pub areas: Vec<T>,
    pub div: CsrMatrix<T>,
    pub div_t: CsrMatrix<T>,
    pub curl: CsrMatrix<T>,
}

impl<T: Real> LevelOperators<T> {
    pub fn assemble(level: &MeshLevel<T>) -> Self {
        let div = assemble_div(level);
        Self {
            m1: assemble_mass_w1(level),
            areas: level.cell_areas(),
            div_t: div.transpose(),
            div,
            curl: assemble_weak_curl(level),
        }
    }
}
