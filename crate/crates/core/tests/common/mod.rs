//! Independent oracles shared by the integration tests: basis functions written
//! out from the geometry, a 5-point Gauss-Legendre rule and seeded random data.

#![allow(dead_code)]

pub mod dg;
pub mod oracles;

use rand::RngExt;
use proptest::test_runner::{RngAlgorithm, TestRng};
use tsw::mesh::{Domain, MeshLevel};

/// 5-point Gauss-Legendre rule on [-1, 1].
pub const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
pub const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

pub fn rng(seed: u8) -> TestRng {
    TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32])
}

pub fn random_vec(rng: &mut TestRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Small meshes covering the uniform, shifted and stretched cases.
pub fn small_meshes() -> Vec<MeshLevel<f64>> {
    vec![
        MeshLevel::uniform(Domain::new(0.0, 0.0, 1.0, 1.0), 2, 2).unwrap(),
        MeshLevel::uniform(Domain::new(-1.0, 0.5, 3.0, 1.5), 3, 3).unwrap(),
        MeshLevel::from_partitions(
            Domain::new(0.0, -0.5, 1.3, 1.5),
            vec![0.0, 0.2, 0.7, 1.3],
            vec![-0.5, 0.1, 0.4, 1.0],
        )
        .unwrap(),
    ]
}

/// Tensor 5x5 rule on cell `(i, j)`: `(x, y, weight)`.
pub fn cell_rule(level: &MeshLevel<f64>, i: usize, j: usize) -> Vec<(f64, f64, f64)> {
    let (x0, x1) = (level.x_edges[i], level.x_edges[i + 1]);
    let (y0, y1) = (level.y_edges[j], level.y_edges[j + 1]);
    let mut out = Vec::with_capacity(25);
    for (a, wa) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
        for (b, wb) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
            let x = x0 + 0.5 * (a + 1.0) * (x1 - x0);
            let y = y0 + 0.5 * (b + 1.0) * (y1 - y0);
            out.push((x, y, wa * wb * 0.25 * (x1 - x0) * (y1 - y0)));
        }
    }
    out
}

/// Points on a segment: `(t, weight)` for the tangential coordinate.
pub fn segment_rule(t0: f64, t1: f64) -> Vec<(f64, f64)> {
    GL5_NODES
        .iter()
        .zip(GL5_WEIGHTS)
        .map(|(g, w)| (t0 + 0.5 * (g + 1.0) * (t1 - t0), 0.5 * w * (t1 - t0)))
        .collect()
}

/// Global index of the `x`-normal edge at column `i`, row `j`.
pub fn x_edge(level: &MeshLevel<f64>, i: usize, j: usize) -> usize {
    j * level.nx + i
}

/// Global index of the `y`-normal edge at column `i`, row `j`.
pub fn y_edge(level: &MeshLevel<f64>, i: usize, j: usize) -> usize {
    level.nx * level.ny + j * level.nx + i
}

/// Value of the lowest order Raviart-Thomas basis function of edge `e` inside
/// cell `(i, j)` at `(x, y)`. Its normal component is one on `e`.
pub fn rt0(level: &MeshLevel<f64>, e: usize, i: usize, j: usize, x: f64, y: f64) -> (f64, f64) {
    let (nx, ny) = (level.nx, level.ny);
    let (x0, x1) = (level.x_edges[i], level.x_edges[i + 1]);
    let (y0, y1) = (level.y_edges[j], level.y_edges[j + 1]);
    let mut v = (0.0, 0.0);
    if e == x_edge(level, i, j) {
        v.0 += (x1 - x) / (x1 - x0);
    }
    if e == x_edge(level, (i + 1) % nx, j) {
        v.0 += (x - x0) / (x1 - x0);
    }
    if e == y_edge(level, i, j) {
        v.1 += (y1 - y) / (y1 - y0);
    }
    if e == y_edge(level, i, (j + 1) % ny) {
        v.1 += (y - y0) / (y1 - y0);
    }
    v
}

/// Divergence of [`rt0`] inside cell `(i, j)`.
pub fn rt0_div(level: &MeshLevel<f64>, e: usize, i: usize, j: usize) -> f64 {
    let (nx, ny) = (level.nx, level.ny);
    let dx = level.x_edges[i + 1] - level.x_edges[i];
    let dy = level.y_edges[j + 1] - level.y_edges[j];
    let mut d = 0.0;
    if e == x_edge(level, i, j) {
        d -= 1.0 / dx;
    }
    if e == x_edge(level, (i + 1) % nx, j) {
        d += 1.0 / dx;
    }
    if e == y_edge(level, i, j) {
        d -= 1.0 / dy;
    }
    if e == y_edge(level, i, (j + 1) % ny) {
        d += 1.0 / dy;
    }
    d
}

/// Bilinear hat function of vertex `v` inside cell `(i, j)` and its gradient.
pub fn hat(level: &MeshLevel<f64>, v: usize, i: usize, j: usize, x: f64, y: f64) -> (f64, (f64, f64)) {
    let (nx, ny) = (level.nx, level.ny);
    let (vi, vj) = (v % nx, v / nx);
    let (x0, x1) = (level.x_edges[i], level.x_edges[i + 1]);
    let (y0, y1) = (level.y_edges[j], level.y_edges[j + 1]);
    let (dx, dy) = (x1 - x0, y1 - y0);
    let (fx, gx) = if vi == i {
        ((x1 - x) / dx, -1.0 / dx)
    } else if vi == (i + 1) % nx {
        ((x - x0) / dx, 1.0 / dx)
    } else {
        return (0.0, (0.0, 0.0));
    };
    let (fy, gy) = if vj == j {
        ((y1 - y) / dy, -1.0 / dy)
    } else if vj == (j + 1) % ny {
        ((y - y0) / dy, 1.0 / dy)
    } else {
        return (0.0, (0.0, 0.0));
    };
    (fx * fy, (gx * fy, fx * gy))
}

/// A `W1L` field evaluated inside cell `(i, j)`.
pub fn rt0_field(level: &MeshLevel<f64>, u: &[f64], i: usize, j: usize, x: f64, y: f64) -> (f64, f64) {
    let mut out = (0.0, 0.0);
    for (e, ue) in u.iter().enumerate() {
        let v = rt0(level, e, i, j, x, y);
        out.0 += ue * v.0;
        out.1 += ue * v.1;
    }
    out
}

/// One facet seen from both sides: the cell on the negative side of the normal
/// (`lower`), the one on the positive side (`upper`), the points on the facet and
/// the normal as `(nx, ny)`.
pub struct FacetView {
    pub index: usize,
    pub lower: (usize, usize),
    pub upper: (usize, usize),
    pub points: Vec<(f64, f64, f64)>,
    pub normal: (f64, f64),
}

pub fn facets(level: &MeshLevel<f64>) -> Vec<FacetView> {
    let (nx, ny) = (level.nx, level.ny);
    let mut out = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let x = level.x_edges[i];
            out.push(FacetView {
                index: x_edge(level, i, j),
                lower: ((i + nx - 1) % nx, j),
                upper: (i, j),
                points: segment_rule(level.y_edges[j], level.y_edges[j + 1])
                    .into_iter()
                    .map(|(y, w)| (x, y, w))
                    .collect(),
                normal: (1.0, 0.0),
            });
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            let y = level.y_edges[j];
            out.push(FacetView {
                index: y_edge(level, i, j),
                lower: (i, (j + ny - 1) % ny),
                upper: (i, j),
                points: segment_rule(level.x_edges[i], level.x_edges[i + 1])
                    .into_iter()
                    .map(|(x, w)| (x, y, w))
                    .collect(),
                normal: (0.0, 1.0),
            });
        }
    }
    out
}

/// Evaluates a `W1L` function belonging to cell `(i, j)` at a point on its
/// boundary. On the periodic seam the point is shifted by one period so that it
/// lies on the closure of the cell.
pub fn rt0_on_boundary(level: &MeshLevel<f64>, u: &[f64], cell: (usize, usize), x: f64, y: f64) -> (f64, f64) {
    let (i, j) = cell;
    let lx = level.domain.lx;
    let ly = level.domain.ly;
    let mut px = x;
    let mut py = y;
    if px < level.x_edges[i] - 1e-12 {
        px += lx;
    } else if px > level.x_edges[i + 1] + 1e-12 {
        px -= lx;
    }
    if py < level.y_edges[j] - 1e-12 {
        py += ly;
    } else if py > level.y_edges[j + 1] + 1e-12 {
        py -= ly;
    }
    rt0_field(level, u, i, j, px, py)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
