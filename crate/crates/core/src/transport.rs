//! High order DG transport of buoyancy in skew-symmetric form.
//!
//! The semi-discrete system is `M_h ds/dt = -R(s)` with
//!
//! ```text
//! R = -1/2 int grad(chi) . F s + 1/2 int [chi]{s} F.n + 1/2 int chi F . grad(s)
//!     - 1/2 int F.n {chi}[s] - 1/2 int chi s div F + alpha/2 int |F.n| [chi][s]
//! ```
//!
//! With `alpha = 1` the facet terms reduce to the classical upwind flux. A penalty of
//! full `|F.n|` doubles the stiffest eigenvalues and puts SSP-RK3 outside its
//! stability interval at the advection test time steps.
//!
//! Volume integrals use the collocated Gauss-Legendre rule, so the mass matrix is
//! diagonal and the two advective volume terms are exact transposes of each other.
//! Facet integrals use the same 1D rule along DG element boundaries, so every facet
//! point is a tangential node and only the four nodes of one normal line touch it.

use crate::error::{Result, TswError};
use crate::mesh::{Axis, MeshHierarchy, MeshLevel};
use crate::scalar::Real;
use crate::spaces::{derivative_matrix, lagrange_1d, w2h_node_coords, Collocation};

/// Flux samples needed by the DG operator.
#[derive(Clone, Debug)]
pub struct FluxSamples<T> {
    /// `F_x`, `F_y` and `div F` at every `W2H` node (dof order).
    pub fx: Vec<T>,
    pub fy: Vec<T>,
    pub div: Vec<T>,
    /// `F . n` at the quadrature points of every DG facet: `facet_fn[4 * edge + b]`.
    pub facet_fn: Vec<T>,
}

impl<T: Real> FluxSamples<T> {
    /// Samples an analytic flux and its divergence.
    pub fn analytic(
        hierarchy: &MeshHierarchy<T>,
        flux: impl Fn(T, T) -> (T, T),
        divergence: impl Fn(T, T) -> T,
    ) -> Result<Self> {
        let dg = dg_level(hierarchy)?;
        let coords = w2h_node_coords(hierarchy)?;
        let mut fx = Vec::with_capacity(coords.len());
        let mut fy = Vec::with_capacity(coords.len());
        let mut div = Vec::with_capacity(coords.len());
        for &(x, y) in &coords {
            let (a, b) = flux(x, y);
            fx.push(a);
            fy.push(b);
            div.push(divergence(x, y));
        }
        let gl = &hierarchy.gl_points;
        let mut facet_fn = Vec::with_capacity(dg.n_edges() * gl.len());
        for e in dg.edges() {
            let (t0, t1) = e.tangent_range;
            for &g in gl {
                let t = t0 + (g + T::one()) * T::half() * (t1 - t0);
                let v = match e.normal {
                    Axis::X => flux(e.position, t).0,
                    Axis::Y => flux(t, e.position).1,
                };
                facet_fn.push(v);
            }
        }
        Ok(Self { fx, fy, div, facet_fn })
    }

    /// Samples a lowest order flux on the finest level: the `W1L` field is
    /// evaluated at each node inside its fine cell and its divergence is the cell
    /// divergence. Facet normals are the single-valued edge normals.
    pub fn from_w1l(hierarchy: &MeshHierarchy<T>, colloc: &Collocation, flux: &[T]) -> Result<Self> {
        let dg = dg_level(hierarchy)?;
        let fine = hierarchy.finest();
        if flux.len() != fine.n_edges() {
            return Err(TswError::State(format!(
                "flux has {} values, the finest level has {} edges",
                flux.len(),
                fine.n_edges()
            )));
        }
        let coords = w2h_node_coords(hierarchy)?;
        let n = coords.len();
        let (mut fx, mut fy, mut div) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
        let h = T::half();
        for (dof, &(x, y)) in coords.iter().enumerate() {
            let c = colloc.dg_to_fine[dof];
            let (i, j) = fine.cell_ij(c);
            let xi = T::lit(2.0) * (x - fine.x_edges[i]) / fine.dx(i) - T::one();
            let eta = T::lit(2.0) * (y - fine.y_edges[j]) / fine.dy(j) - T::one();
            let es = fine.cell_edges(i, j);
            fx[dof] = h * (T::one() - xi) * flux[es[0]] + h * (T::one() + xi) * flux[es[1]];
            fy[dof] = h * (T::one() - eta) * flux[es[2]] + h * (T::one() + eta) * flux[es[3]];
            let net = fine.dy(j) * (flux[es[1]] - flux[es[0]]) + fine.dx(i) * (flux[es[3]] - flux[es[2]]);
            div[dof] = net / fine.cell_area(c);
        }
        let p1 = hierarchy.gl_points.len();
        let mut facet_fn = Vec::with_capacity(dg.n_edges() * p1);
        for e in dg.edges() {
            let (i, j) = dg.cell_ij(e.upper);
            for b in 0..p1 {
                let fe = match e.normal {
                    Axis::X => fine.cell_edges(p1 * i, p1 * j + b)[0],
                    Axis::Y => fine.cell_edges(p1 * i + b, p1 * j)[2],
                };
                facet_fn.push(flux[fe]);
            }
        }
        Ok(Self { fx, fy, div, facet_fn })
    }
}

fn dg_level<T: Real>(hierarchy: &MeshHierarchy<T>) -> Result<&MeshLevel<T>> {
    hierarchy
        .dg_level()
        .ok_or_else(|| TswError::Config("DG transport needs a hierarchy with at least 3 levels".into()))
}

/// Frozen operands of one transport step.
#[derive(Clone, Debug)]
pub struct TransportOperands<'a, T> {
    pub flux: &'a FluxSamples<T>,
    /// Depth at every `W2H` node (dof order).
    pub hbar: &'a [T],
    pub alpha: T,
}

impl<T: Real> TransportOperands<'_, T> {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.hbar.iter().position(|h| !(*h > T::zero())) {
            return Err(TswError::State(format!("non-positive transport depth at node {k}")));
        }
        if self.alpha != T::zero() && self.alpha != T::one() {
            return Err(TswError::Config(format!("upwind switch must be 0 or 1, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Integrals reported by [`DgTransport::audit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransportAudit<T> {
    pub total: T,
    pub variance: T,
    pub facet_dissipation: T,
}

/// Reference data and the mesh of the DG transport operator.
#[derive(Clone, Debug)]
pub struct DgTransport<T> {
    pub level: MeshLevel<T>,
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
    /// `deriv[c][a] = l_a'(x_c)`.
    deriv: Vec<Vec<T>>,
    /// Basis values at the right (`+1`) and left (`-1`) element ends.
    right: Vec<T>,
    left: Vec<T>,
}

impl<T: Real> DgTransport<T> {
    pub fn new(hierarchy: &MeshHierarchy<T>) -> Result<Self> {
        let level = dg_level(hierarchy)?.clone();
        let nodes = hierarchy.gl_points.clone();
        let weights = hierarchy.gl_weights.clone();
        let deriv = derivative_matrix(&nodes);
        let right = lagrange_1d(&nodes, T::one()).0;
        let left = lagrange_1d(&nodes, -T::one()).0;
        Ok(Self {
            level,
            nodes,
            weights,
            deriv,
            right,
            left,
        })
    }

    #[inline]
    fn p1(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.level.n_cells() * self.p1() * self.p1()
    }

    /// Quadrature weight `w_a w_b J` of every node.
    pub fn node_weights(&self) -> Vec<T> {
        let p1 = self.p1();
        let mut out = Vec::with_capacity(self.n_dofs());
        for c in 0..self.level.n_cells() {
            let (i, j) = self.level.cell_ij(c);
            let jac = self.level.dx(i) * self.level.dy(j) * T::lit(0.25);
            for b in 0..p1 {
                for a in 0..p1 {
                    out.push(self.weights[a] * self.weights[b] * jac);
                }
            }
        }
        out
    }

    /// Diagonal of `M_h`.
    pub fn mass_diagonal(&self, hbar: &[T]) -> Vec<T> {
        self.node_weights().iter().zip(hbar).map(|(w, h)| *w * *h).collect()
    }

    /// Traces of `s` on both sides of every facet point: `(lower, upper)`.
    fn traces(&self, s: &[T], edge: usize, b: usize) -> (T, T, [usize; 4], [usize; 4]) {
        let p1 = self.p1();
        let e = self.level.edge(edge);
        let mut lo_idx = [0usize; 4];
        let mut up_idx = [0usize; 4];
        for m in 0..p1 {
            let (l, u) = match e.normal {
                Axis::X => (e.lower * p1 * p1 + b * p1 + m, e.upper * p1 * p1 + b * p1 + m),
                Axis::Y => (e.lower * p1 * p1 + m * p1 + b, e.upper * p1 * p1 + m * p1 + b),
            };
            lo_idx[m] = l;
            up_idx[m] = u;
        }
        let mut sl = T::zero();
        let mut su = T::zero();
        for m in 0..p1 {
            sl += self.right[m] * s[lo_idx[m]];
            su += self.left[m] * s[up_idx[m]];
        }
        (sl, su, lo_idx, up_idx)
    }

    /// The dual vector `R(s)`.
    pub fn residual(&self, s: &[T], flux: &FluxSamples<T>, alpha: T) -> Vec<T> {
        let p1 = self.p1();
        let level = &self.level;
        let mut r = vec![T::zero(); self.n_dofs()];
        let h = T::half();
        let two = T::lit(2.0);
        // volume terms, element by element
        let mut gx = vec![T::zero(); p1 * p1];
        let mut gy = vec![T::zero(); p1 * p1];
        for c in 0..level.n_cells() {
            let (i, j) = level.cell_ij(c);
            let (dx, dy) = (level.dx(i), level.dy(j));
            let jac = dx * dy * T::lit(0.25);
            let base = c * p1 * p1;
            let sx = two / dx;
            let sy = two / dy;
            for b in 0..p1 {
                for a in 0..p1 {
                    let mut dsx = T::zero();
                    let mut dsy = T::zero();
                    for m in 0..p1 {
                        dsx += self.deriv[a][m] * s[base + b * p1 + m];
                        dsy += self.deriv[b][m] * s[base + m * p1 + a];
                    }
                    gx[b * p1 + a] = dsx * sx;
                    gy[b * p1 + a] = dsy * sy;
                }
            }
            for b in 0..p1 {
                for a in 0..p1 {
                    let k = base + b * p1 + a;
                    let w = self.weights[a] * self.weights[b] * jac;
                    // 1/2 chi F . grad s - 1/2 chi s div F
                    let mut acc =
                        h * w * (flux.fx[k] * gx[b * p1 + a] + flux.fy[k] * gy[b * p1 + a] - s[k] * flux.div[k]);
                    // -1/2 grad chi . F s, with grad chi_ab nonzero along its node lines
                    for m in 0..p1 {
                        let km = base + b * p1 + m;
                        let wm = self.weights[m] * self.weights[b] * jac;
                        acc -= h * wm * s[km] * flux.fx[km] * sx * self.deriv[m][a];
                        let kn = base + m * p1 + a;
                        let wn = self.weights[a] * self.weights[m] * jac;
                        acc -= h * wn * s[kn] * flux.fy[kn] * sy * self.deriv[m][b];
                    }
                    r[k] += acc;
                }
            }
        }
        // facet terms
        let quarter = T::lit(0.25);
        for (ei, e) in level.edges().iter().enumerate() {
            for b in 0..p1 {
                let wb = self.weights[b] * e.length * h;
                let fnv = flux.facet_fn[ei * p1 + b];
                let (sl, su, lo, up) = self.traces(s, ei, b);
                let mean = h * (sl + su);
                let jump = sl - su;
                let pen = h * alpha * fnv.abs() * jump;
                let lower = wb * (h * mean * fnv - quarter * fnv * jump + pen);
                let upper = wb * (-h * mean * fnv - quarter * fnv * jump - pen);
                for m in 0..p1 {
                    r[lo[m]] += self.right[m] * lower;
                    r[up[m]] += self.left[m] * upper;
                }
            }
        }
        r
    }

    /// `L(s) = -M_h^{-1} R(s)`.
    pub fn rhs(&self, s: &[T], ops: &TransportOperands<'_, T>) -> Vec<T> {
        let r = self.residual(s, ops.flux, ops.alpha);
        let m = self.mass_diagonal(ops.hbar);
        r.iter().zip(&m).map(|(ri, mi)| -*ri / *mi).collect()
    }

    /// One SSP-RK3 step of length `dt` with frozen operands.
    pub fn ssp_rk3_step(&self, s: &[T], ops: &TransportOperands<'_, T>, dt: T) -> Result<Vec<T>> {
        ops.validate()?;
        let check = |v: &[T], stage: usize| -> Result<()> {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(TswError::BlowUp {
                    step: 0,
                    reason: format!("non-finite buoyancy in RK3 stage {stage}"),
                })
            }
        };
        let l0 = self.rhs(s, ops);
        let s1: Vec<T> = s.iter().zip(&l0).map(|(a, l)| *a + dt * *l).collect();
        check(&s1, 1)?;
        let l1 = self.rhs(&s1, ops);
        let (q3, q1) = (T::lit(0.75), T::lit(0.25));
        let s2: Vec<T> = s
            .iter()
            .zip(&s1)
            .zip(&l1)
            .map(|((a, b), l)| q3 * *a + q1 * (*b + dt * *l))
            .collect();
        check(&s2, 2)?;
        let l2 = self.rhs(&s2, ops);
        let (t1, t2) = (T::one() / T::lit(3.0), T::lit(2.0) / T::lit(3.0));
        let s3: Vec<T> = s
            .iter()
            .zip(&s2)
            .zip(&l2)
            .map(|((a, b), l)| t1 * *a + t2 * (*b + dt * *l))
            .collect();
        check(&s3, 3)?;
        Ok(s3)
    }

    /// `int |F.n| [s]^2` over all DG facets.
    pub fn facet_dissipation(&self, s: &[T], flux: &FluxSamples<T>) -> T {
        self.facet_dissipation_per_facet(s, flux).into_iter().sum()
    }

    /// `int_e |F.n| [s]^2` for every DG facet `e`.
    pub fn facet_dissipation_per_facet(&self, s: &[T], flux: &FluxSamples<T>) -> Vec<T> {
        let p1 = self.p1();
        self.level
            .edges()
            .iter()
            .enumerate()
            .map(|(ei, e)| {
                let mut acc = T::zero();
                for b in 0..p1 {
                    let (sl, su, _, _) = self.traces(s, ei, b);
                    let j = sl - su;
                    acc += self.weights[b] * e.length * T::half() * flux.facet_fn[ei * p1 + b].abs() * j * j;
                }
                acc
            })
            .collect()
    }

    /// Collocated `int s^2 div F`.
    pub fn divergence_contraction(&self, s: &[T], flux: &FluxSamples<T>) -> T {
        self.node_weights()
            .iter()
            .enumerate()
            .map(|(k, w)| *w * s[k] * s[k] * flux.div[k])
            .sum()
    }

    pub fn total(&self, s: &[T], hbar: &[T]) -> T {
        self.mass_diagonal(hbar).iter().zip(s).map(|(m, v)| *m * *v).sum()
    }

    pub fn variance(&self, s: &[T], hbar: &[T]) -> T {
        T::half() * self.mass_diagonal(hbar).iter().zip(s).map(|(m, v)| *m * *v * *v).sum::<T>()
    }

    pub fn audit(&self, s: &[T], ops: &TransportOperands<'_, T>) -> TransportAudit<T> {
        TransportAudit {
            total: self.total(s, ops.hbar),
            variance: self.variance(s, ops.hbar),
            facet_dissipation: self.facet_dissipation(s, ops.flux),
        }
    }

    /// Node-wise L2 error against `exact`, weighted by `hbar`-free node weights.
    pub fn l2_error(&self, s: &[T], exact: &[T]) -> T {
        self.node_weights()
            .iter()
            .zip(s.iter().zip(exact))
            .map(|(w, (a, b))| *w * (*a - *b) * (*a - *b))
            .sum::<T>()
            .sqrt()
    }
}
