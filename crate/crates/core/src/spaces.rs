//! Degree-of-freedom maps and reference bases for the four discrete spaces.
//!
//! * `W0L`: bilinear, continuous, one dof per vertex.
//! * `W1L`: lowest order div-conforming quadrilateral element. The x-component is
//!   linear in x and constant in y (and vice versa); a dof is the normal velocity
//!   on an edge, so the physical normal component is continuous.
//! * `W2L`: piecewise constant, one dof per cell.
//! * `W2H`: tensor Lagrange polynomials of degree `p` on the Gauss-Legendre nodes
//!   of each DG element.

use crate::error::{Result, TswError};
use crate::mesh::{MeshHierarchy, MeshLevel, GL_POINTS_PER_ELEMENT};
use crate::scalar::Real;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    W0L,
    W1L,
    W2L,
    W2H,
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SpaceKind::W0L => "W0L",
            SpaceKind::W1L => "W1L",
            SpaceKind::W2L => "W2L",
            SpaceKind::W2H => "W2H",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SpaceKind {
    type Err = TswError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "W0L" => Ok(SpaceKind::W0L),
            "W1L" => Ok(SpaceKind::W1L),
            "W2L" => Ok(SpaceKind::W2L),
            "W2H" => Ok(SpaceKind::W2H),
            other => Err(TswError::Parse(format!("unknown space tag {other:?}"))),
        }
    }
}

/// A space on a particular level of the hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpaceTag {
    pub kind: SpaceKind,
    pub level: usize,
}

impl SpaceTag {
    pub fn new(kind: SpaceKind, level: usize) -> Self {
        Self { kind, level }
    }

    pub fn validate<T: Real>(&self, hierarchy: &MeshHierarchy<T>) -> Result<()> {
        if self.level >= hierarchy.n_levels() {
            return Err(TswError::Config(format!(
                "level {} does not exist (hierarchy has {} levels)",
                self.level,
                hierarchy.n_levels()
            )));
        }
        if self.kind == SpaceKind::W2H && hierarchy.dg_level_index != Some(self.level) {
            return Err(TswError::Config(format!(
                "W2H lives on the DG level {:?}, not on level {}",
                hierarchy.dg_level_index, self.level
            )));
        }
        Ok(())
    }
}

/// Coefficient vector tagged with the space it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    pub tag: SpaceTag,
    pub values: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn new(tag: SpaceTag, values: Vec<T>) -> Self {
        Self { tag, values }
    }

    pub fn zeros(map: &DofMap) -> Self {
        Self::new(map.tag, vec![T::zero(); map.n_dofs])
    }
}

/// Global numbering for a space. Numbering is contiguous and structured:
/// vertices, edges and cells use the indices of the mesh level; `W2H` dofs are
/// `16 * element + 4 * b + a` for node `(a, b)` of an element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DofMap {
    pub tag: SpaceTag,
    pub n_dofs: usize,
    pub dofs_per_entity: usize,
    /// Index range of the dofs of each entity kind: vertices, edges, cells.
    pub vertex_range: std::ops::Range<usize>,
    pub edge_range: std::ops::Range<usize>,
    pub cell_range: std::ops::Range<usize>,
    /// Nodes per dimension inside a DG element (`W2H` only).
    pub nodes_per_dim: usize,
}

impl DofMap {
    pub fn build<T: Real>(hierarchy: &MeshHierarchy<T>, tag: SpaceTag) -> Result<Self> {
        tag.validate(hierarchy)?;
        let level = &hierarchy.levels[tag.level];
        let (nv, ne, nc) = (level.n_vertices(), level.n_edges(), level.n_cells());
        let map = match tag.kind {
            SpaceKind::W0L => Self {
                tag,
                n_dofs: nv,
                dofs_per_entity: 1,
                vertex_range: 0..nv,
                edge_range: 0..0,
                cell_range: 0..0,
                nodes_per_dim: 0,
            },
            SpaceKind::W1L => Self {
                tag,
                n_dofs: ne,
                dofs_per_entity: 1,
                vertex_range: 0..0,
                edge_range: 0..ne,
                cell_range: 0..0,
                nodes_per_dim: 0,
            },
            SpaceKind::W2L => Self {
                tag,
                n_dofs: nc,
                dofs_per_entity: 1,
                vertex_range: 0..0,
                edge_range: 0..0,
                cell_range: 0..nc,
                nodes_per_dim: 0,
            },
            SpaceKind::W2H => {
                let p1 = hierarchy.dg_order + 1;
                Self {
                    tag,
                    n_dofs: nc * p1 * p1,
                    dofs_per_entity: p1 * p1,
                    vertex_range: 0..0,
                    edge_range: 0..0,
                    cell_range: 0..nc * p1 * p1,
                    nodes_per_dim: p1,
                }
            }
        };
        Ok(map)
    }

    #[inline]
    pub fn w2h_dof(&self, element: usize, a: usize, b: usize) -> usize {
        let p1 = self.nodes_per_dim;
        element * p1 * p1 + b * p1 + a
    }
}

/// The 1:1 map between fine-level cells and DG nodes.
#[derive(Clone, Debug)]
pub struct Collocation {
    pub fine_to_dg: Vec<usize>,
    pub dg_to_fine: Vec<usize>,
}

impl Collocation {
    pub fn new<T: Real>(hierarchy: &MeshHierarchy<T>) -> Result<Self> {
        let dg = hierarchy
            .dg_level()
            .ok_or_else(|| TswError::Config("hierarchy has no DG level (needs at least 3 levels)".into()))?;
        let fine = hierarchy.finest();
        let p1 = GL_POINTS_PER_ELEMENT;
        let mut fine_to_dg = vec![0; fine.n_cells()];
        let mut dg_to_fine = vec![0; fine.n_cells()];
        for jf in 0..fine.ny {
            for if_ in 0..fine.nx {
                let elem = dg.cell_index(if_ / p1, jf / p1);
                let dof = elem * p1 * p1 + (jf % p1) * p1 + (if_ % p1);
                let c = fine.cell_index(if_, jf);
                fine_to_dg[c] = dof;
                dg_to_fine[dof] = c;
            }
        }
        Ok(Self { fine_to_dg, dg_to_fine })
    }

    /// Reorders a fine `W2L` vector into `W2H` numbering.
    pub fn to_dg<T: Real>(&self, fine: &[T]) -> Vec<T> {
        self.dg_to_fine.iter().map(|&c| fine[c]).collect()
    }

    /// Reorders a `W2H` vector into fine `W2L` numbering.
    pub fn to_fine<T: Real>(&self, dg: &[T]) -> Vec<T> {
        self.fine_to_dg.iter().map(|&d| dg[d]).collect()
    }
}

/// 1D Lagrange basis on `nodes`: values and derivatives at `x`.
pub fn lagrange_1d<T: Real>(nodes: &[T], x: T) -> (Vec<T>, Vec<T>) {
    let n = nodes.len();
    let mut vals = vec![T::one(); n];
    let mut ders = vec![T::zero(); n];
    for a in 0..n {
        let mut denom = T::one();
        for m in 0..n {
            if m != a {
                denom *= nodes[a] - nodes[m];
                vals[a] *= x - nodes[m];
            }
        }
        vals[a] /= denom;
        let mut d = T::zero();
        for k in 0..n {
            if k == a {
                continue;
            }
            let mut prod = T::one();
            for m in 0..n {
                if m != a && m != k {
                    prod *= x - nodes[m];
                }
            }
            d += prod;
        }
        ders[a] = d / denom;
    }
    (vals, ders)
}

/// `D[c][a] = l_a'(x_c)`: derivative of basis `a` at node `c`.
pub fn derivative_matrix<T: Real>(nodes: &[T]) -> Vec<Vec<T>> {
    nodes.iter().map(|&x| lagrange_1d(nodes, x).1).collect()
}

/// Reference basis values on `[-1, 1]^2`.
#[derive(Clone, Debug)]
pub struct BasisEval<T> {
    pub kind: SpaceKind,
    pub n_basis: usize,
    pub points: Vec<(T, T)>,
    /// `values[p][b]`; scalar spaces use component 0 only.
    pub values: Vec<Vec<[T; 2]>>,
    /// Reference gradients of scalar bases (`d/dxi`, `d/deta`).
    pub grads: Vec<Vec<[T; 2]>>,
    /// Reference divergence of `W1L` bases.
    pub divs: Vec<Vec<T>>,
}

/// Evaluates the element-local basis of `kind` at reference points. For `W2H`
/// the nodes of the 1D Lagrange factors are `gl_nodes`.
pub fn eval_basis<T: Real>(kind: SpaceKind, points: &[(T, T)], gl_nodes: &[T]) -> BasisEval<T> {
    let h = T::half();
    let one = T::one();
    let z = T::zero();
    let mut values = Vec::with_capacity(points.len());
    let mut grads = Vec::with_capacity(points.len());
    let mut divs = Vec::with_capacity(points.len());
    for &(xi, eta) in points {
        let (v, g, d) = match kind {
            SpaceKind::W0L => {
                let lx = [(one - xi) * h, (one + xi) * h];
                let ly = [(one - eta) * h, (one + eta) * h];
                let dlx = [-h, h];
                let dly = [-h, h];
                let mut v = Vec::with_capacity(4);
                let mut g = Vec::with_capacity(4);
                for (ly_, dly_) in ly.iter().zip(&dly) {
                    for (lx_, dlx_) in lx.iter().zip(&dlx) {
                        v.push([*lx_ * *ly_, z]);
                        g.push([*dlx_ * *ly_, *lx_ * *dly_]);
                    }
                }
                (v, g, vec![])
            }
            SpaceKind::W1L => {
                let v = vec![
                    [(one - xi) * h, z],
                    [(one + xi) * h, z],
                    [z, (one - eta) * h],
                    [z, (one + eta) * h],
                ];
                (v, vec![], vec![-h, h, -h, h])
            }
            SpaceKind::W2L => (vec![[one, z]], vec![[z, z]], vec![]),
            SpaceKind::W2H => {
                let (lx, dlx) = lagrange_1d(gl_nodes, xi);
                let (ly, dly) = lagrange_1d(gl_nodes, eta);
                let n = gl_nodes.len();
                let mut v = Vec::with_capacity(n * n);
                let mut g = Vec::with_capacity(n * n);
                for b in 0..n {
                    for a in 0..n {
                        v.push([lx[a] * ly[b], z]);
                        g.push([dlx[a] * ly[b], lx[a] * dly[b]]);
                    }
                }
                (v, g, vec![])
            }
        };
        values.push(v);
        grads.push(g);
        divs.push(d);
    }
    let n_basis = values.first().map(|v| v.len()).unwrap_or(match kind {
        SpaceKind::W0L | SpaceKind::W1L => 4,
        SpaceKind::W2L => 1,
        SpaceKind::W2H => gl_nodes.len() * gl_nodes.len(),
    });
    BasisEval {
        kind,
        n_basis,
        points: points.to_vec(),
        values,
        grads,
        divs,
    }
}

/// Tensor Gauss-Legendre rule on the reference square: `(xi, eta, weight)`.
pub fn tensor_rule<T: Real>(n: usize) -> Vec<(T, T, T)> {
    let (p, w) = crate::mesh::gauss_legendre::<T>(n);
    let mut out = Vec::with_capacity(n * n);
    for b in 0..n {
        for a in 0..n {
            out.push((p[a], p[b], w[a] * w[b]));
        }
    }
    out
}

/// Point evaluation of fields. Scalar spaces return `[value, 0]`.
pub fn evaluate_field<T: Real>(hierarchy: &MeshHierarchy<T>, field: &Field<T>, points: &[(T, T)]) -> Vec<[T; 2]> {
    let level = &hierarchy.levels[field.tag.level];
    let v = &field.values;
    let h = T::half();
    let one = T::one();
    let z = T::zero();
    points
        .iter()
        .map(|&(x, y)| {
            let (i, j, xi, eta) = level.locate(x, y);
            match field.tag.kind {
                SpaceKind::W2L => [v[level.cell_index(i, j)], z],
                SpaceKind::W0L => {
                    let vs = level.cell_vertices(i, j);
                    let lx = [(one - xi) * h, (one + xi) * h];
                    let ly = [(one - eta) * h, (one + eta) * h];
                    [
                        v[vs[0]] * lx[0] * ly[0]
                            + v[vs[1]] * lx[1] * ly[0]
                            + v[vs[2]] * lx[0] * ly[1]
                            + v[vs[3]] * lx[1] * ly[1],
                        z,
                    ]
                }
                SpaceKind::W1L => {
                    let es = level.cell_edges(i, j);
                    [
                        v[es[0]] * (one - xi) * h + v[es[1]] * (one + xi) * h,
                        v[es[2]] * (one - eta) * h + v[es[3]] * (one + eta) * h,
                    ]
                }
                SpaceKind::W2H => {
                    let (lx, _) = lagrange_1d(&hierarchy.gl_points, xi);
                    let (ly, _) = lagrange_1d(&hierarchy.gl_points, eta);
                    let n = hierarchy.gl_points.len();
                    let base = level.cell_index(i, j) * n * n;
                    let mut acc = z;
                    for b in 0..n {
                        for a in 0..n {
                            acc += v[base + b * n + a] * lx[a] * ly[b];
                        }
                    }
                    [acc, z]
                }
            }
        })
        .collect()
}

/// Physical coordinates of every `W2H` node, in dof order.
pub fn w2h_node_coords<T: Real>(hierarchy: &MeshHierarchy<T>) -> Result<Vec<(T, T)>> {
    let dg = hierarchy
        .dg_level()
        .ok_or_else(|| TswError::Config("hierarchy has no DG level".into()))?;
    let gl = &hierarchy.gl_points;
    let n = gl.len();
    let mut out = Vec::with_capacity(dg.n_cells() * n * n);
    for c in 0..dg.n_cells() {
        let (i, j) = dg.cell_ij(c);
        for b in 0..n {
            for a in 0..n {
                out.push(dg.to_physical(i, j, gl[a], gl[b]));
            }
        }
    }
    Ok(out)
}

/// Nodal interpolation into `W2H`.
pub fn interpolate_w2h<T: Real>(hierarchy: &MeshHierarchy<T>, f: impl Fn(T, T) -> T) -> Result<Field<T>> {
    let k = hierarchy.dg_level_index.expect("checked by w2h_node_coords");
    let coords = w2h_node_coords(hierarchy)?;
    Ok(Field::new(
        SpaceTag::new(SpaceKind::W2H, k),
        coords.into_iter().map(|(x, y)| f(x, y)).collect(),
    ))
}

/// Cell averages computed with an `n`-point tensor Gauss-Legendre rule.
pub fn project_w2l<T: Real>(level: &MeshLevel<T>, f: impl Fn(T, T) -> T, n: usize) -> Vec<T> {
    let rule = tensor_rule::<T>(n);
    let quarter = T::lit(0.25);
    (0..level.n_cells())
        .map(|c| {
            let (i, j) = level.cell_ij(c);
            let mut acc = T::zero();
            for &(xi, eta, w) in &rule {
                let (x, y) = level.to_physical(i, j, xi, eta);
                acc += w * quarter * f(x, y);
            }
            acc
        })
        .collect()
}

/// Edge averages of the normal component computed with an `n`-point rule.
pub fn project_w1l<T: Real>(level: &MeshLevel<T>, f: impl Fn(T, T) -> (T, T), n: usize) -> Vec<T> {
    level
        .edges()
        .iter()
        .map(|e| {
            let mut acc = T::zero();
            for (x, y, w) in crate::mesh::facet_quadrature(e, n) {
                let (fx, fy) = f(x, y);
                let fnormal = match e.normal {
                    crate::mesh::Axis::X => fx,
                    crate::mesh::Axis::Y => fy,
                };
                acc += w * fnormal;
            }
            acc / e.length
        })
        .collect()
}

/// Vertex interpolation into `W0L`.
pub fn interpolate_w0l<T: Real>(level: &MeshLevel<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    (0..level.n_vertices())
        .map(|v| {
            let (x, y) = level.vertex_coords(v);
            f(x, y)
        })
        .collect()
}
