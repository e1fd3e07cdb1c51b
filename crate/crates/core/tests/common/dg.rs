//! A DG facet-sum oracle with its own Lagrange basis on 4 Gauss-Legendre points,
//! and random divergence-free fluxes from a streamfunction.

use proptest::prelude::*;
use tsw::mesh::{Domain, MeshHierarchy};
use tsw::transport::DgTransport;

pub const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
pub const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_8,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_8,
];

pub fn lagrange(k: usize, x: f64) -> f64 {
    (0..4)
        .filter(|&m| m != k)
        .map(|m| (x - GL4_NODES[m]) / (GL4_NODES[k] - GL4_NODES[m]))
        .product()
}

/// `psi = sum_k a_k cos(2 pi (m_k x + n_k y) / L + phi_k)` on `[0, L]^2`.
#[derive(Clone, Debug)]
pub struct Stream {
    pub modes: Vec<(f64, i32, i32, f64)>,
    pub l: f64,
}

impl Stream {
    /// `F = (d psi / dy, -d psi / dx)`.
    pub fn flux(&self, x: f64, y: f64) -> (f64, f64) {
        let w = 2.0 * std::f64::consts::PI / self.l;
        let mut f = (0.0, 0.0);
        for &(a, m, n, phi) in &self.modes {
            let s = -a * (w * (m as f64 * x + n as f64 * y) + phi).sin();
            f.0 += s * w * n as f64;
            f.1 -= s * w * m as f64;
        }
        f
    }
}

pub fn stream() -> impl Strategy<Value = Stream> {
    prop::collection::vec((-1.0..1.0f64, -2i32..=2, -2i32..=2, 0.0..6.28f64), 1..4)
        .prop_map(|modes| Stream { modes, l: 2.0 })
}

pub fn setup(n_dg: usize) -> (MeshHierarchy<f64>, DgTransport<f64>) {
    let h = MeshHierarchy::build(Domain::new(0.0, 0.0, 2.0, 2.0), 4 * n_dg, 3, 3).unwrap();
    let t = DgTransport::new(&h).unwrap();
    (h, t)
}

/// `int |F.n| [s]^2` over the DG facets, from traces evaluated with the
/// Lagrange basis written out above.
pub fn facet_oracle(t: &DgTransport<f64>, s: &[f64], stream: &Stream) -> f64 {
    let level = &t.level;
    let (nx, ny) = (level.nx, level.ny);
    let node = |i: usize, j: usize, a: usize, b: usize| (j * nx + i) * 16 + b * 4 + a;
    let trace = |i: usize, j: usize, side: f64, along_x: bool, b: usize| -> f64 {
        (0..4)
            .map(|m| {
                let k = if along_x { node(i, j, m, b) } else { node(i, j, b, m) };
                lagrange(m, side) * s[k]
            })
            .sum()
    };
    let mut total = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            // facet on the west side of element (i, j)
            let x = level.x_edges[i];
            let dy = level.y_edges[j + 1] - level.y_edges[j];
            for b in 0..4 {
                let y = level.y_edges[j] + 0.5 * (GL4_NODES[b] + 1.0) * dy;
                let jump = trace((i + nx - 1) % nx, j, 1.0, true, b) - trace(i, j, -1.0, true, b);
                total += 0.5 * dy * GL4_WEIGHTS[b] * stream.flux(x, y).0.abs() * jump * jump;
            }
            // facet on the south side
            let y = level.y_edges[j];
            let dx = level.x_edges[i + 1] - level.x_edges[i];
            for b in 0..4 {
                let x = level.x_edges[i] + 0.5 * (GL4_NODES[b] + 1.0) * dx;
                let jump = trace(i, (j + ny - 1) % ny, 1.0, false, b) - trace(i, j, -1.0, false, b);
                total += 0.5 * dx * GL4_WEIGHTS[b] * stream.flux(x, y).1.abs() * jump * jump;
            }
        }
    }
    total
}


/// A streamfunction with up to three random modes, drawn from `rng`.
pub fn random_stream(rng: &mut proptest::test_runner::TestRng, l: f64) -> Stream {
    use rand::RngExt;
    let n = rng.random_range(1..4);
    let modes = (0..n)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(-2..=2),
                rng.random_range(-2..=2),
                rng.random_range(0.0..6.28),
            )
        })
        .collect();
    Stream { modes, l }
}
