//! Periodic structured quadrilateral meshes and the nested multigrid hierarchy.
//!
//! The finest level is not uniform: inside every DG element the four fine cells
//! in each direction have widths equal to the 4-point Gauss-Legendre weights
//! scaled by half the element width, so each fine cell holds exactly one
//! Gauss-Legendre node of the element. The level above the finest pairs those
//! cells symmetrically (its interior edge sits at the element centre), and all
//! coarser levels are uniform.

use crate::error::{Result, TswError};
use crate::scalar::Real;
use std::fmt;

/// Gauss-Legendre rule with `n` points on `[-1, 1]`, points in increasing order.
pub fn gauss_legendre<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one point");
    let mut points = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    let nf = T::from_usize_lossy(n);
    let one = T::one();
    let two = T::lit(2.0);
    let eps = T::epsilon() * T::lit(4.0);
    for i in 0..(n + 1) / 2 {
        // Chebyshev-like initial guess for the i-th largest root.
        let guess = (T::PI() * (T::from_usize_lossy(i) + T::lit(0.75)) / (nf + T::half())).cos();
        let mut x = guess;
        let mut dp = T::one();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= eps {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = two / ((one - x * x) * dp * dp);
        points[i] = -x;
        points[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        points[n / 2] = T::zero();
    }
    (points, weights)
}

/// Value and derivative of the Legendre polynomial of degree `n` at `x`.
fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    let mut p0 = T::one();
    let mut p1 = x;
    if n == 0 {
        return (p0, T::zero());
    }
    for k in 2..=n {
        let kf = T::from_usize_lossy(k);
        let p2 = ((T::lit(2.0) * kf - T::one()) * x * p1 - (kf - T::one()) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = T::from_usize_lossy(n);
    let d = nf * (x * p1 - p0) / (x * x - T::one());
    (p1, d)
}

/// Axis-aligned doubly periodic rectangle `[x0, x0+lx) x [y0, y0+ly)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain<T> {
    pub x0: T,
    pub y0: T,
    pub lx: T,
    pub ly: T,
}

impl<T: Real> Domain<T> {
    pub fn new(x0: T, y0: T, lx: T, ly: T) -> Self {
        Self { x0, y0, lx, ly }
    }

    pub fn area(&self) -> T {
        self.lx * self.ly
    }

    /// Maps a point back into the fundamental periodic cell.
    pub fn wrap(&self, x: T, y: T) -> (T, T) {
        (wrap_coord(x, self.x0, self.lx), wrap_coord(y, self.y0, self.ly))
    }
}

fn wrap_coord<T: Real>(x: T, x0: T, l: T) -> T {
    let mut r = (x - x0) % l;
    if r < T::zero() {
        r += l;
    }
    x0 + r
}

/// Direction of the unit normal of an edge. The normal always points towards
/// increasing coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

/// A facet of a periodic level.
///
/// `lower` is the cell the normal leaves and `upper` the cell it enters. Jumps
/// are taken as `[a] = a_lower - a_upper` and means as `{a} = (a_lower + a_upper) / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge<T> {
    pub normal: Axis,
    pub lower: usize,
    pub upper: usize,
    pub length: T,
    /// Coordinate of the edge along its normal.
    pub position: T,
    /// Start and end coordinates along the tangential direction.
    pub tangent_range: (T, T),
}

/// One periodic structured level.
#[derive(Clone, Debug)]
pub struct MeshLevel<T> {
    pub nx: usize,
    pub ny: usize,
    /// Sorted partition, length `nx + 1`, last entry is `x0 + lx`.
    pub x_edges: Vec<T>,
    pub y_edges: Vec<T>,
    pub domain: Domain<T>,
    edges: Vec<Edge<T>>,
}

impl<T: Real> MeshLevel<T> {
    pub fn from_partitions(domain: Domain<T>, x_edges: Vec<T>, y_edges: Vec<T>) -> Result<Self> {
        let nx = x_edges.len().saturating_sub(1);
        let ny = y_edges.len().saturating_sub(1);
        if nx == 0 || ny == 0 {
            return Err(TswError::Config("a mesh level needs at least one cell per dimension".into()));
        }
        for w in x_edges.windows(2).chain(y_edges.windows(2)) {
            if !(w[1] > w[0]) {
                return Err(TswError::Config("mesh partition is not strictly increasing".into()));
            }
        }
        let mut level = Self {
            nx,
            ny,
            x_edges,
            y_edges,
            domain,
            edges: Vec::new(),
        };
        level.edges = level.build_edges();
        Ok(level)
    }

    pub fn uniform(domain: Domain<T>, nx: usize, ny: usize) -> Result<Self> {
        let xs = uniform_partition(domain.x0, domain.lx, nx);
        let ys = uniform_partition(domain.y0, domain.ly, ny);
        Self::from_partitions(domain, xs, ys)
    }

    fn build_edges(&self) -> Vec<Edge<T>> {
        let (nx, ny) = (self.nx, self.ny);
        let mut edges = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                edges.push(Edge {
                    normal: Axis::X,
                    lower: self.cell_index((i + nx - 1) % nx, j),
                    upper: self.cell_index(i, j),
                    length: self.dy(j),
                    position: self.x_edges[i],
                    tangent_range: (self.y_edges[j], self.y_edges[j + 1]),
                });
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                edges.push(Edge {
                    normal: Axis::Y,
                    lower: self.cell_index(i, (j + ny - 1) % ny),
                    upper: self.cell_index(i, j),
                    length: self.dx(i),
                    position: self.y_edges[j],
                    tangent_range: (self.x_edges[i], self.x_edges[i + 1]),
                });
            }
        }
        edges
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn n_edges(&self) -> usize {
        2 * self.nx * self.ny
    }

    #[inline]
    pub fn n_vertices(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    #[inline]
    pub fn dx(&self, i: usize) -> T {
        self.x_edges[i + 1] - self.x_edges[i]
    }

    #[inline]
    pub fn dy(&self, j: usize) -> T {
        self.y_edges[j + 1] - self.y_edges[j]
    }

    #[inline]
    pub fn cell_area(&self, c: usize) -> T {
        let (i, j) = self.cell_ij(c);
        self.dx(i) * self.dy(j)
    }

    pub fn cell_areas(&self) -> Vec<T> {
        (0..self.n_cells()).map(|c| self.cell_area(c)).collect()
    }

    /// Global indices of the four edges of cell `(i, j)`: west, east, south, north.
    #[inline]
    pub fn cell_edges(&self, i: usize, j: usize) -> [usize; 4] {
        let (nx, ny) = (self.nx, self.ny);
        let off = nx * ny;
        [
            j * nx + i,
            j * nx + (i + 1) % nx,
            off + j * nx + i,
            off + ((j + 1) % ny) * nx + i,
        ]
    }

    /// Global vertex indices of cell `(i, j)` in the order
    /// south-west, south-east, north-west, north-east.
    #[inline]
    pub fn cell_vertices(&self, i: usize, j: usize) -> [usize; 4] {
        let (nx, ny) = (self.nx, self.ny);
        let ip = (i + 1) % nx;
        let jp = (j + 1) % ny;
        [j * nx + i, j * nx + ip, jp * nx + i, jp * nx + ip]
    }

    pub fn vertex_coords(&self, v: usize) -> (T, T) {
        (self.x_edges[v % self.nx], self.y_edges[v / self.nx])
    }

    pub fn edges(&self) -> &[Edge<T>] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge<T> {
        &self.edges[e]
    }

    /// Maps reference coordinates of cell `(i, j)` to physical coordinates.
    #[inline]
    pub fn to_physical(&self, i: usize, j: usize, xi: T, eta: T) -> (T, T) {
        let h = T::half();
        (
            self.x_edges[i] + (xi + T::one()) * h * self.dx(i),
            self.y_edges[j] + (eta + T::one()) * h * self.dy(j),
        )
    }

    /// Cell containing a (periodically wrapped) point plus its reference coordinates.
    pub fn locate(&self, x: T, y: T) -> (usize, usize, T, T) {
        let (x, y) = self.domain.wrap(x, y);
        let i = locate_in_partition(&self.x_edges, x);
        let j = locate_in_partition(&self.y_edges, y);
        let two = T::lit(2.0);
        let xi = two * (x - self.x_edges[i]) / self.dx(i) - T::one();
        let eta = two * (y - self.y_edges[j]) / self.dy(j) - T::one();
        (i, j, xi, eta)
    }

    /// Total number of facets lying on a non-periodic boundary (always zero).
    pub fn boundary_facet_count(&self) -> usize {
        self.edges.iter().filter(|e| e.lower == usize::MAX || e.upper == usize::MAX).count()
    }
}

impl<T: Real> fmt::Display for MeshLevel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let min_dx = (0..self.nx).map(|i| self.dx(i)).fold(T::infinity(), T::min);
        let max_dx = (0..self.nx).map(|i| self.dx(i)).fold(T::zero(), T::max);
        write!(
            f,
            "{}x{} cells, {} edges, dx in [{:.6e}, {:.6e}]",
            self.nx,
            self.ny,
            self.n_edges(),
            min_dx,
            max_dx
        )
    }
}

fn locate_in_partition<T: Real>(edges: &[T], x: T) -> usize {
    let n = edges.len() - 1;
    // partition_point returns the first index with edges[k] > x
    let k = edges.partition_point(|e| *e <= x);
    k.saturating_sub(1).min(n - 1)
}

fn uniform_partition<T: Real>(x0: T, l: T, n: usize) -> Vec<T> {
    let nf = T::from_usize_lossy(n);
    (0..=n)
        .map(|k| x0 + l * T::from_usize_lossy(k) / nf)
        .collect()
}

/// Partition of `n_elem` uniform elements, each subdivided at the cumulative
/// Gauss-Legendre weights. The midpoint of an element is placed exactly.
fn gl_partition<T: Real>(x0: T, l: T, n_elem: usize, weights: &[T]) -> Vec<T> {
    let n = weights.len();
    let two = T::lit(2.0);
    let mut cumulative = vec![T::zero(); n + 1];
    for m in 1..=n / 2 {
        cumulative[m] = cumulative[m - 1] + weights[m - 1];
    }
    cumulative[n] = two;
    for m in (n / 2 + 1..n).rev() {
        cumulative[m] = cumulative[m + 1] - weights[m];
    }
    if n % 2 == 0 {
        cumulative[n / 2] = T::one();
    }
    let nf = T::from_usize_lossy(n_elem);
    let mut out = Vec::with_capacity(n_elem * n + 1);
    for e in 0..n_elem {
        let a = x0 + l * T::from_usize_lossy(e) / nf;
        let b = x0 + l * T::from_usize_lossy(e + 1) / nf;
        let half = (b - a) / two;
        for c in cumulative.iter().take(n) {
            out.push(a + *c * half);
        }
    }
    out.push(x0 + l);
    out
}

/// Nested periodic levels, coarsest first.
#[derive(Clone, Debug)]
pub struct MeshHierarchy<T> {
    pub levels: Vec<MeshLevel<T>>,
    /// Index of the level whose cells coincide with the DG elements.
    pub dg_level_index: Option<usize>,
    pub dg_order: usize,
    pub gl_points: Vec<T>,
    pub gl_weights: Vec<T>,
}

/// Fine cells per DG element and dimension.
pub const GL_POINTS_PER_ELEMENT: usize = 4;

impl<T: Real> MeshHierarchy<T> {
    /// Builds `levels` nested levels with `fine_cells_per_dim` cells per
    /// dimension on the finest. With three or more levels the finest carries the
    /// Gauss-Legendre partition of the DG mesh located two levels below it.
    pub fn build(domain: Domain<T>, fine_cells_per_dim: usize, levels: usize, dg_order: usize) -> Result<Self> {
        if levels == 0 {
            return Err(TswError::Config("at least one mesh level is required".into()));
        }
        let factor = 1usize << (levels - 1);
        if fine_cells_per_dim == 0 || fine_cells_per_dim % factor != 0 {
            return Err(TswError::Config(format!(
                "fine cell count {fine_cells_per_dim} is not divisible by 2^(levels-1) = {factor} for {levels} levels"
            )));
        }
        let (gl_points, gl_weights) = gauss_legendre::<T>(GL_POINTS_PER_ELEMENT);
        let fine = if levels >= 3 {
            if dg_order + 1 != GL_POINTS_PER_ELEMENT {
                return Err(TswError::Config(format!(
                    "DG order {dg_order} gives {} nodes per dimension but each DG element holds {GL_POINTS_PER_ELEMENT} fine cells",
                    dg_order + 1
                )));
            }
            let n_dg = fine_cells_per_dim / GL_POINTS_PER_ELEMENT;
            let xs = gl_partition(domain.x0, domain.lx, n_dg, &gl_weights);
            let ys = gl_partition(domain.y0, domain.ly, n_dg, &gl_weights);
            MeshLevel::from_partitions(domain, xs, ys)?
        } else {
            MeshLevel::uniform(domain, fine_cells_per_dim, fine_cells_per_dim)?
        };
        let mut stack = vec![fine];
        for _ in 1..levels {
            let finer = stack.last().expect("non-empty");
            let xs: Vec<T> = finer.x_edges.iter().step_by(2).copied().collect();
            let ys: Vec<T> = finer.y_edges.iter().step_by(2).copied().collect();
            stack.push(MeshLevel::from_partitions(domain, xs, ys)?);
        }
        stack.reverse();
        let dg_level_index = if levels >= 3 { Some(levels - 3) } else { None };
        Ok(Self {
            levels: stack,
            dg_level_index,
            dg_order,
            gl_points,
            gl_weights,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &MeshLevel<T> {
        self.levels.last().expect("hierarchy has levels")
    }

    pub fn finest_index(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn dg_level(&self) -> Option<&MeshLevel<T>> {
        self.dg_level_index.map(|k| &self.levels[k])
    }

    pub fn domain(&self) -> Domain<T> {
        self.finest().domain
    }

    /// Human-readable summary used by the CLI.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (k, level) in self.levels.iter().enumerate() {
            let tag = if Some(k) == self.dg_level_index { " (DG elements)" } else { "" };
            s.push_str(&format!("level {k}: {level}{tag}\n"));
        }
        s
    }
}

/// Gauss-Legendre rule mapped onto an edge: `(x, y, weight)` triples.
pub fn facet_quadrature<T: Real>(edge: &Edge<T>, n_points: usize) -> Vec<(T, T, T)> {
    let (pts, wts) = gauss_legendre::<T>(n_points);
    let (a, b) = edge.tangent_range;
    let half = (b - a) * T::half();
    let mid = (a + b) * T::half();
    pts.iter()
        .zip(&wts)
        .map(|(p, w)| {
            let t = mid + *p * half;
            match edge.normal {
                Axis::X => (edge.position, t, *w * half),
                Axis::Y => (t, edge.position, *w * half),
            }
        })
        .collect()
}
