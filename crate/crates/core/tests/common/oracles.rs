//! Dense direct-quadrature oracles for the assembled operators and a dense LU
//! reference for the multigrid. Every check returns its measured worst error.

use nalgebra::{DMatrix, DVector};
use tsw::mesh::{Domain, MeshHierarchy, MeshLevel};
use tsw::multigrid::{BlockCoefficients, BlockSystem, Multigrid, SolverParams};
use tsw::operators::{
    apply_vorticity_flux, apply_weighted_mass_w1, assemble_div, assemble_mass_w1, assemble_mass_w2,
    assemble_weak_curl, assemble_weighted_mass_w0, cell_integral_dot, jump_mean_sf, jump_mean_st,
    mean_jump_sf, upwind_sf, LowOrderElement, WeightedMassW0,
};
use tsw::sparse::CsrMatrix;

use super::*;

/// Named worst errors, maximised over [`small_meshes`].
pub type Errors = Vec<(&'static str, f64)>;

fn cells(level: &MeshLevel<f64>) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..level.ny).flat_map(move |j| (0..level.nx).map(move |i| (i, j)))
}

/// Largest entry difference; infinite on a shape mismatch.
fn matrix_error(got: &CsrMatrix<f64>, want: &[Vec<f64>]) -> f64 {
    if got.nrows() != want.len() || want.iter().any(|r| r.len() != got.ncols()) {
        return f64::INFINITY;
    }
    want.iter()
        .enumerate()
        .map(|(r, row)| row.iter().enumerate().map(|(c, v)| (got.get(r, c) - v).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

/// Folds per-mesh errors into the worst value per name.
fn worst(acc: &mut Errors, name: &'static str, e: f64) {
    match acc.iter_mut().find(|(n, _)| *n == name) {
        Some(entry) => entry.1 = entry.1.max(e),
        None => acc.push((name, e)),
    }
}

pub fn oracle_m1(level: &MeshLevel<f64>) -> Vec<Vec<f64>> {
    let n = level.n_edges();
    let mut m = vec![vec![0.0; n]; n];
    for (i, j) in cells(level) {
        for (x, y, w) in cell_rule(level, i, j) {
            let vals: Vec<(f64, f64)> = (0..n).map(|e| rt0(level, e, i, j, x, y)).collect();
            for a in 0..n {
                for b in 0..n {
                    m[a][b] += w * (vals[a].0 * vals[b].0 + vals[a].1 * vals[b].1);
                }
            }
        }
    }
    m
}

pub fn oracle_div(level: &MeshLevel<f64>) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; level.n_edges()]; level.n_cells()];
    for (i, j) in cells(level) {
        let c = level.cell_index(i, j);
        for (_, _, w) in cell_rule(level, i, j) {
            for (e, v) in d[c].iter_mut().enumerate() {
                *v += w * rt0_div(level, e, i, j);
            }
        }
    }
    d
}

fn oracle_m2(level: &MeshLevel<f64>) -> Vec<Vec<f64>> {
    let mut m2 = vec![vec![0.0; level.n_cells()]; level.n_cells()];
    for (i, j) in cells(level) {
        let c = level.cell_index(i, j);
        m2[c][c] = cell_rule(level, i, j).iter().map(|p| p.2).sum();
    }
    m2
}

fn oracle_m0(level: &MeshLevel<f64>, h: &[f64]) -> Vec<Vec<f64>> {
    let n = level.n_vertices();
    let mut m = vec![vec![0.0; n]; n];
    for (i, j) in cells(level) {
        let hc = h[level.cell_index(i, j)];
        for (x, y, w) in cell_rule(level, i, j) {
            let vals: Vec<f64> = (0..n).map(|v| hat(level, v, i, j, x, y).0).collect();
            for a in 0..n {
                for b in 0..n {
                    m[a][b] += w * hc * vals[a] * vals[b];
                }
            }
        }
    }
    m
}

fn oracle_curl(level: &MeshLevel<f64>) -> Vec<Vec<f64>> {
    let (nv, ne) = (level.n_vertices(), level.n_edges());
    let mut m = vec![vec![0.0; ne]; nv];
    for (i, j) in cells(level) {
        for (x, y, w) in cell_rule(level, i, j) {
            for (v, row) in m.iter_mut().enumerate() {
                let (_, g) = hat(level, v, i, j, x, y);
                for (e, entry) in row.iter_mut().enumerate() {
                    let u = rt0(level, e, i, j, x, y);
                    *entry += w * (g.1 * u.0 - g.0 * u.1);
                }
            }
        }
    }
    m
}

/// `M1`, `D` and `M2`.
pub fn mass_and_divergence() -> Errors {
    let mut out = Errors::new();
    for level in small_meshes() {
        worst(&mut out, "M1", matrix_error(&assemble_mass_w1(&level), &oracle_m1(&level)));
        worst(&mut out, "D", matrix_error(&assemble_div(&level), &oracle_div(&level)));
        worst(&mut out, "M2", matrix_error(&assemble_mass_w2(&level), &oracle_m2(&level)));
    }
    out
}

/// The depth weighted `W0L` mass, assembled directly and from the cached
/// pattern, and the weak curl.
pub fn weighted_w0_mass_and_curl() -> Errors {
    let mut r = rng(1);
    let mut out = Errors::new();
    for level in small_meshes() {
        let h = random_vec(&mut r, level.n_cells(), 0.5, 2.0);
        let want = oracle_m0(&level, &h);
        let direct = assemble_weighted_mass_w0(&level, &h).map_or(f64::INFINITY, |m| matrix_error(&m, &want));
        let cached = WeightedMassW0::new(&level)
            .assemble(&h)
            .map_or(f64::INFINITY, |m| matrix_error(&m, &want));
        worst(&mut out, "M0[h]", direct);
        worst(&mut out, "M0[h] cached", cached);
        worst(&mut out, "weak curl", matrix_error(&assemble_weak_curl(&level), &oracle_curl(&level)));
    }
    out
}

/// `M1[h] u`, the cellwise `int a.b` and the vorticity flux form.
pub fn matrix_free_volume_forms() -> Errors {
    let mut r = rng(2);
    let el = LowOrderElement::<f64>::new();
    let mut out = Errors::new();
    for level in small_meshes() {
        let ne = level.n_edges();
        let h = random_vec(&mut r, level.n_cells(), 0.5, 2.0);
        let a = random_vec(&mut r, ne, -1.0, 1.0);
        let b = random_vec(&mut r, ne, -1.0, 1.0);
        let q = random_vec(&mut r, level.n_vertices(), -1.0, 1.0);
        let mut hu = vec![0.0; ne];
        let mut dots = vec![0.0; level.n_cells()];
        let mut qf = vec![0.0; ne];
        for (i, j) in cells(&level) {
            let c = level.cell_index(i, j);
            for (x, y, w) in cell_rule(&level, i, j) {
                let av = rt0_field(&level, &a, i, j, x, y);
                let bv = rt0_field(&level, &b, i, j, x, y);
                let qv: f64 = (0..level.n_vertices()).map(|v| q[v] * hat(&level, v, i, j, x, y).0).sum();
                dots[c] += w * (av.0 * bv.0 + av.1 * bv.1);
                for e in 0..ne {
                    let v = rt0(&level, e, i, j, x, y);
                    hu[e] += w * h[c] * (v.0 * av.0 + v.1 * av.1);
                    // v . (q k x F) with F = b
                    qf[e] += w * qv * (-bv.1 * v.0 + bv.0 * v.1);
                }
            }
        }
        worst(&mut out, "M1[h] u", max_abs_diff(&apply_weighted_mass_w1(&el, &level, &h, &a), &hu));
        worst(&mut out, "int a.b", max_abs_diff(&cell_integral_dot(&el, &level, &a, &b), &dots));
        worst(&mut out, "q F perp", max_abs_diff(&apply_vorticity_flux(&el, &level, &q, &b), &qf));
    }
    out
}

/// The four facet couplings, plus the normal continuity of `W1L` across facets.
pub fn facet_couplings() -> Errors {
    let mut r = rng(3);
    let mut out = Errors::new();
    for level in small_meshes() {
        let (nc, ne) = (level.n_cells(), level.n_edges());
        let s = random_vec(&mut r, nc, -1.0, 1.0);
        let t = random_vec(&mut r, nc, -1.0, 1.0);
        let f = random_vec(&mut r, ne, -1.0, 1.0);
        let mut st = vec![0.0; ne];
        let mut sf = vec![0.0; nc];
        let mut mj = vec![0.0; nc];
        let mut up = vec![0.0; nc];
        let mut continuity: f64 = 0.0;
        for facet in facets(&level) {
            let lo = level.cell_index(facet.lower.0, facet.lower.1);
            let hi = level.cell_index(facet.upper.0, facet.upper.1);
            let mean_s = 0.5 * (s[lo] + s[hi]);
            let jump_s = s[lo] - s[hi];
            let jump_t = t[lo] - t[hi];
            let (n0, n1) = facet.normal;
            for &(x, y, w) in &facet.points {
                let fv = rt0_on_boundary(&level, &f, facet.lower, x, y);
                let fv_up = rt0_on_boundary(&level, &f, facet.upper, x, y);
                let fn_ = fv.0 * n0 + fv.1 * n1;
                continuity = continuity.max((fn_ - (fv_up.0 * n0 + fv_up.1 * n1)).abs());
                for e in 0..ne {
                    let mut ind = vec![0.0; ne];
                    ind[e] = 1.0;
                    let v = rt0_on_boundary(&level, &ind, facet.lower, x, y);
                    st[e] += w * (v.0 * n0 + v.1 * n1) * mean_s * jump_t;
                }
                // [sigma_c] is +1 on the lower cell and -1 on the upper one
                sf[lo] += w * mean_s * fn_;
                sf[hi] -= w * mean_s * fn_;
                mj[lo] += w * 0.5 * jump_s * fn_;
                mj[hi] += w * 0.5 * jump_s * fn_;
                up[lo] += w * fn_.abs() * jump_s;
                up[hi] -= w * fn_.abs() * jump_s;
            }
        }
        worst(&mut out, "W1L normal continuity", continuity);
        worst(&mut out, "[s]{T} F-test", max_abs_diff(&jump_mean_st(&level, &s, &t), &st));
        worst(&mut out, "{s} F.n [c]", max_abs_diff(&jump_mean_sf(&level, &s, &f), &sf));
        worst(&mut out, "[s] F.n {c}", max_abs_diff(&mean_jump_sf(&level, &s, &f), &mj));
        worst(&mut out, "|F.n| [s][c]", max_abs_diff(&upwind_sf(&level, &s, &f), &up));
    }
    out
}

pub fn oracle_block(level: &MeshLevel<f64>, k: &BlockCoefficients<f64>) -> DMatrix<f64> {
    let (nu, nc) = (level.n_edges(), level.n_cells());
    let m1 = oracle_m1(level);
    let d = oracle_div(level);
    let n = nu + 2 * nc;
    let mut a = DMatrix::zeros(n, n);
    for r in 0..nu {
        for c in 0..nu {
            a[(r, c)] = m1[r][c];
        }
        for c in 0..nc {
            a[(r, nu + c)] = -k.a() * d[c][r];
            a[(r, nu + nc + c)] = -k.b() * d[c][r];
        }
    }
    for c in 0..nc {
        for e in 0..nu {
            a[(nu + c, e)] = k.c() * d[c][e];
        }
        a[(nu + c, nu + c)] = level.cell_area(c);
        a[(nu + nc + c, nu + nc + c)] = level.cell_area(c);
    }
    a
}

/// The assembled linearised block operator.
pub fn block_operator() -> Errors {
    let k = BlockCoefficients { dt: 0.1, g: 0.9, depth: 1.1 };
    let mut out = Errors::new();
    for level in small_meshes() {
        let want = oracle_block(&level, &k);
        let got = BlockSystem::new(&level, k).to_dense();
        let mut e: f64 = 0.0;
        for (r, row) in got.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                e = e.max((v - want[(r, c)]).abs());
            }
        }
        worst(&mut out, "block operator", e);
    }
    out
}

/// Relative error of a multigrid solve against dense LU; infinite when the
/// multigrid fails or does not converge.
fn mg_vs_lu(hier: &MeshHierarchy<f64>, k: BlockCoefficients<f64>, seed: u8) -> f64 {
    let fine = hier.finest();
    let a = oracle_block(fine, &k);
    let mut r = rng(seed);
    let b = random_vec(&mut r, a.nrows(), -1.0, 1.0);
    let exact = a.clone().lu().solve(&DVector::from_vec(b.clone())).expect("non-singular");
    let params = SolverParams {
        rtol: 1e-12,
        max_cycles: 100,
        ..SolverParams::default()
    };
    let Ok(mg) = Multigrid::new(hier, k, params) else {
        return f64::INFINITY;
    };
    let mut x = vec![0.0; b.len()];
    match mg.solve(&b, &mut x) {
        Ok(rep) if rep.converged => {}
        _ => return f64::INFINITY,
    }
    let err: f64 = x.iter().zip(exact.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    err / exact.norm()
}

/// Two levels (4 fine cells over a 2x2 coarsest mesh) and three levels (8 fine cells).
pub fn multigrid_vs_lu() -> Errors {
    let two = MeshHierarchy::build(Domain::new(0.0, 0.0, 1.0, 1.0), 4, 2, 3).unwrap();
    assert_eq!(two.levels[0].nx, 2);
    let three = MeshHierarchy::build(Domain::new(0.0, 0.0, 2.0, 2.0), 8, 3, 3).unwrap();
    vec![
        ("MG vs LU, 2 levels", mg_vs_lu(&two, BlockCoefficients { dt: 0.05, g: 1.0, depth: 1.0 }, 4)),
        ("MG vs LU, 3 levels", mg_vs_lu(&three, BlockCoefficients { dt: 0.2, g: 0.8, depth: 1.3 }, 5)),
    ]
}
