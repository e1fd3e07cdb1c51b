//! Acceptance suite: one test per criterion, each printing a single
//! `ACCEPTANCE PASS|FAIL|REPORT` line with the measured values and the runtime.
//! The lines go straight to stdout so they appear without `--nocapture`.

mod common;

use std::io::Write;
use std::time::Instant;

use common::dg::{facet_oracle, random_stream, setup};
use common::oracles;
use tsw::dynamics::BuoyancyScheme;
use tsw::harness::{self, observed_order, DiagnosticsRecord, ExperimentPreset, Order, RunConfig, RunOutcome};
use tsw::mesh::{Domain, MeshHierarchy, MeshLevel};
use tsw::operators::{assemble_div, jump_mean_sf, jump_mean_st, mean_jump_sf};
use tsw::transport::{FluxSamples, TransportOperands};

fn report(status: &str, name: &str, detail: &str, start: Instant) {
    let line = format!(
        "ACCEPTANCE {status:<6} {name}: {detail} [{:.1} s]\n",
        start.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn verdict(name: &str, pass: bool, detail: &str, start: Instant) -> bool {
    report(if pass { "PASS" } else { "FAIL" }, name, detail, start);
    pass
}

fn slope(o: Order) -> f64 {
    match o {
        Order::Slope(p) => p,
        Order::Exact => f64::INFINITY,
    }
}

fn run(cfg: RunConfig) -> RunOutcome<f64> {
    let outcome = harness::run(cfg.resolve::<f64>().unwrap(), None).unwrap();
    if let Some(e) = &outcome.failure {
        panic!("run failed: {e}");
    }
    outcome
}

/// Largest `|x_k - x_0| / |x_0|` over the records.
fn max_drift(records: &[DiagnosticsRecord<f64>], f: fn(&DiagnosticsRecord<f64>) -> f64) -> f64 {
    let x0 = f(&records[0]);
    records.iter().map(|r| ((f(r) - x0) / x0).abs()).fold(0.0, f64::max)
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn advection_order_and_mass_conservation() {
    let start = Instant::now();
    let mut errors = Vec::new();
    let mut dxs = Vec::new();
    let mut mass_drift = 0.0;
    for n in ExperimentPreset::Advection.default_resolutions(Default::default()) {
        let cfg = RunConfig {
            resolution: Some(n),
            alpha: Some(1.0),
            ..RunConfig::preset(ExperimentPreset::Advection)
        };
        let outcome = run(cfg);
        errors.push(outcome.errors.values[0]);
        dxs.push(1.0 / n as f64);
        if n == 48 {
            mass_drift = max_drift(&outcome.records, |r| r.total_s);
        }
    }
    let orders: Vec<f64> = (1..errors.len())
        .map(|k| slope(observed_order(&errors[k - 1..=k], &dxs[k - 1..=k]).unwrap()))
        .collect();
    let order_ok = orders.iter().all(|p| *p >= 3.5);
    let detail = format!("errors {}, successive orders {orders:.3?} (need >= 3.5)", sci(&errors));
    let a = verdict("advection L2 order (alpha=1, 12/24/48)", order_ok, &detail, start);
    let mass_ok = mass_drift <= 1e-11;
    let detail = format!("max |d int h s| / int h s0 = {mass_drift:.3e} over one revolution at 48 (need <= 1e-11)");
    let b = verdict("advection mass conservation", mass_ok, &detail, start);
    assert!(a && b);
}

#[test]
fn advection_variance_time_order() {
    let start = Instant::now();
    let pi = std::f64::consts::PI;
    let dts = [pi / 1200.0, pi / 2400.0, pi / 4800.0];
    let mut changes = Vec::new();
    for dt in dts {
        let cfg = RunConfig {
            resolution: Some(48),
            alpha: Some(0.0),
            dt: Some(dt),
            ..RunConfig::preset(ExperimentPreset::Advection)
        };
        let r = run(cfg).records;
        changes.push((r.last().unwrap().tracer_variance - r[0].tracer_variance).abs());
    }
    let orders: Vec<f64> = (1..3)
        .map(|k| slope(observed_order(&changes[k - 1..=k], &dts[k - 1..=k]).unwrap()))
        .collect();
    let pass = orders.iter().all(|p| (2.5..=3.8).contains(p));
    let detail = format!(
        "|d variance| {} at dt = pi/1200, pi/2400, pi/4800; orders {orders:.3?} (need in [2.5, 3.8])",
        sci(&changes)
    );
    assert!(verdict("advection variance-in-time order (alpha=0, 48)", pass, &detail, start));
}

#[test]
fn semi_discrete_variance_identities() {
    let start = Instant::now();
    let mut rng = common::rng(41);
    let mut worst_centered: f64 = 0.0;
    let mut worst_upwind: f64 = 0.0;
    let mut ratio = (f64::INFINITY, f64::NEG_INFINITY);
    for trial in 0..24 {
        let (h, t) = setup(2 + trial % 3);
        let stream = random_stream(&mut rng, 2.0);
        let s = common::random_vec(&mut rng, t.n_dofs(), -1.0, 1.0);
        let flux = FluxSamples::analytic(&h, |x, y| stream.flux(x, y), |_, _| 0.0).unwrap();
        let hbar = vec![1.3; t.n_dofs()];
        let m = t.mass_diagonal(&hbar);
        // the variance production <s, M ds/dt>
        let production = |alpha: f64| {
            let l = t.rhs(&s, &TransportOperands { flux: &flux, hbar: &hbar, alpha });
            let terms: Vec<f64> = s.iter().zip(&l).zip(&m).map(|((a, b), w)| a * b * w).collect();
            (terms.iter().sum::<f64>(), terms.iter().map(|v| v.abs()).sum::<f64>())
        };
        let (p0, scale0) = production(0.0);
        worst_centered = worst_centered.max(p0.abs() / scale0);
        let (p1, _) = production(1.0);
        let target = -facet_oracle(&t, &s, &stream);
        worst_upwind = worst_upwind.max(((p1 - target) / target).abs());
        ratio = (ratio.0.min(p1 / target), ratio.1.max(p1 / target));
    }
    let a = verdict(
        "semi-discrete identity, alpha=0",
        worst_centered <= 1e-12,
        &format!("max |<s, R(s)>| / sum |terms| = {worst_centered:.3e} over 24 random cases (need <= 1e-12)"),
        start,
    );
    let b = verdict(
        "semi-discrete identity, alpha=1",
        worst_upwind <= 1e-12,
        &format!(
            "max relative error against -int |F.n| [s]^2 = {worst_upwind:.3e} (need <= 1e-12); production / oracle in [{:.15}, {:.15}]",
            ratio.0, ratio.1
        ),
        start,
    );
    assert!(a && b);
}

#[test]
fn balance_convergence_and_conservation() {
    let start = Instant::now();
    let resolutions = ExperimentPreset::Balance.default_resolutions(Default::default());
    let lx = ExperimentPreset::Balance.domain::<f64>().lx;
    let mut outcomes = Vec::new();
    for &n in &resolutions {
        let cfg = RunConfig {
            resolution: Some(n),
            scheme: BuoyancyScheme::HighOrderUpwind,
            ..RunConfig::preset(ExperimentPreset::Balance)
        };
        outcomes.push(run(cfg));
    }
    let names = outcomes[0].errors.names.clone();
    let dxs: Vec<f64> = resolutions.iter().map(|n| lx / *n as f64).collect();
    let mut orders = Vec::new();
    for k in 0..names.len() {
        let errs: Vec<f64> = outcomes.iter().map(|o| o.errors.values[k]).collect();
        orders.push(slope(observed_order(&errs, &dxs).unwrap()));
    }
    let pass = orders.iter().all(|p| (1.7..=2.3).contains(p));
    let listed: Vec<String> = names.iter().zip(&orders).map(|(n, p)| format!("{n} {p:.3}")).collect();
    let detail = format!("orders {} at dx = L/32, L/64 (need in [1.7, 2.3])", listed.join(", "));
    let a = verdict("balance convergence", pass, &detail, start);

    let mut drift: f64 = 0.0;
    let mut vort: f64 = 0.0;
    let mut monotone = false;
    let mut oscillation: f64 = 0.0;
    for o in &outcomes {
        let r = &o.records;
        drift = drift
            .max(max_drift(r, |x| x.mass))
            .max(max_drift(r, |x| x.total_s))
            .max(max_drift(r, |x| x.energy));
        let w: Vec<f64> = r.iter().map(|x| x.vorticity).collect();
        vort = vort.max(w.iter().fold(0.0, |m, v| m.max(v.abs())));
        let rising = w.windows(2).all(|p| p[1] >= p[0]);
        let falling = w.windows(2).all(|p| p[1] <= p[0]);
        monotone |= (rising || falling) && w.iter().any(|v| *v != w[0]);
        let v: Vec<f64> = r.iter().map(|x| x.tracer_variance).collect();
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(*x), h.max(*x)));
        oscillation = oscillation.max((hi - lo) / v[0]);
    }
    let b = verdict(
        "balance conservation",
        drift <= 1e-10,
        &format!("max relative drift of mass, total S, energy = {drift:.3e} (need <= 1e-10)"),
        start,
    );
    let c = verdict(
        "balance vorticity",
        vort <= 1e-4 && !monotone,
        &format!("max |total vorticity| = {vort:.3e} (need <= 1e-4), monotone drift: {monotone}"),
        start,
    );
    let d = verdict(
        "balance variance oscillation",
        oscillation <= 1e-6,
        &format!("(max - min) / initial tracer variance = {oscillation:.3e} (need <= 1e-6)"),
        start,
    );
    assert!(a && b && c && d);
}

#[test]
fn instability_scheme_behaviour() {
    let start = Instant::now();
    let schemes = [
        BuoyancyScheme::HighOrderUpwind,
        BuoyancyScheme::LowSkewUpwind,
        BuoyancyScheme::LowCentered,
        BuoyancyScheme::LowSkewCentered,
    ];
    let records: Vec<Vec<DiagnosticsRecord<f64>>> = schemes
        .iter()
        .map(|&scheme| {
            let cfg = RunConfig {
                scheme,
                ..RunConfig::preset(ExperimentPreset::Instability)
            };
            run(cfg).records
        })
        .collect();
    let variance = |k: usize| -> Vec<f64> { records[k].iter().map(|r| r.tracer_variance).collect() };

    let v = variance(0);
    let increases: Vec<f64> = v.windows(2).map(|p| (p[1] - p[0]) / p[0].abs()).collect();
    let violations = increases.iter().filter(|d| **d > 1e-12).count();
    let worst = increases.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a = verdict(
        "instability (a) high order upwind variance non-increasing",
        violations == 0,
        &format!(
            "{violations} of {} steps increase by more than 1e-12 relative, largest relative increase {worst:.3e}",
            increases.len()
        ),
        start,
    );

    let loss = |k: usize| {
        let v = variance(k);
        v[0] - v[v.len() - 1]
    };
    let (loss_skew, loss_high) = (loss(1), loss(0));
    let b = verdict(
        "instability (b) low skew upwind loses more variance",
        loss_skew > loss_high,
        &format!("variance loss low-skew-upwind {loss_skew:.6e} vs high-order-upwind {loss_high:.6e}"),
        start,
    );

    // vorticity is zero up to round-off, so it is compared absolutely
    let mut rel: f64 = 0.0;
    let mut vort: f64 = 0.0;
    for (p, q) in records[2].iter().zip(&records[3]) {
        for (x, y) in [(p.mass, q.mass), (p.total_s, q.total_s), (p.energy, q.energy), (p.tracer_variance, q.tracer_variance)] {
            rel = rel.max((x - y).abs() / x.abs().max(y.abs()));
        }
        vort = vort.max((p.vorticity - q.vorticity).abs());
    }
    let same_length = records[2].len() == records[3].len();
    let c = verdict(
        "instability (c) low centered equals low skew centered",
        same_length && rel <= 1e-12 && vort <= 1e-12,
        &format!("max relative difference {rel:.3e}, vorticity difference {vort:.3e} (need <= 1e-12)"),
        start,
    );

    let v = variance(2);
    let peak = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let growth = (peak - v[0]) / v[0];
    report(
        "REPORT",
        "instability (d) low centered variance growth",
        &format!(
            "max (variance - initial) / initial = {growth:.3e}; growth {} at this resolution",
            if growth > 0.0 { "observed" } else { "not observed" }
        ),
        start,
    );
    assert!(a && b && c);
}

#[test]
fn operator_oracle_suite() {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (group, tol) in [
        (oracles::mass_and_divergence(), 1e-13),
        (oracles::weighted_w0_mass_and_curl(), 1e-13),
        (oracles::matrix_free_volume_forms(), 1e-13),
        (oracles::facet_couplings(), 1e-13),
        (oracles::block_operator(), 1e-13),
        (oracles::multigrid_vs_lu(), 1e-10),
    ] {
        for (name, e) in group {
            pass &= e <= tol;
            parts.push(format!("{name} {e:.1e}"));
        }
    }
    let detail = format!("{} (operators <= 1e-13, multigrid <= 1e-10)", parts.join(", "));
    assert!(verdict("operator oracle suite", pass, &detail, start));
}

/// Contractions of the buoyancy facet terms of the velocity residual against `F`
/// and of the buoyancy residual against `T` for the centered and the skew forms.
fn facet_contractions(level: &MeshLevel<f64>, s: &[f64], t: &[f64], f: &[f64]) -> [(f64, f64); 2] {
    let centered = (
        -dot(f, &jump_mean_st(level, s, t)),
        dot(t, &jump_mean_sf(level, s, f)),
    );
    let d = assemble_div(level);
    let st: Vec<f64> = s.iter().zip(t).map(|(a, b)| a * b).collect();
    let mut ru: Vec<f64> = jump_mean_st(level, s, t)
        .iter()
        .zip(&jump_mean_st(level, t, s))
        .map(|(g, g_adj)| -0.5 * g + 0.5 * g_adj)
        .collect();
    d.transpose_matvec(&st).iter().zip(ru.iter_mut()).for_each(|(v, r)| *r -= 0.5 * v);
    let divf = d.matvec(f);
    let rs: Vec<f64> = (0..s.len())
        .map(|c| 0.5 * jump_mean_sf(level, s, f)[c] - 0.5 * mean_jump_sf(level, s, f)[c] + 0.5 * s[c] * divf[c])
        .collect();
    [centered, (dot(f, &ru), dot(t, &rs))]
}

#[test]
fn energy_antisymmetry() {
    let start = Instant::now();
    let mut rng = common::rng(77);
    let hier = MeshHierarchy::build(Domain::new(0.0, 0.0, 1.0, 1.0), 12, 3, 3).unwrap();
    let mut levels = common::small_meshes();
    levels.push(hier.finest().clone());
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for level in &levels {
        for _ in 0..8 {
            let s = common::random_vec(&mut rng, level.n_cells(), -2.0, 2.0);
            let t = common::random_vec(&mut rng, level.n_cells(), 0.1, 2.0);
            let f = common::random_vec(&mut rng, level.n_edges(), -1.0, 1.0);
            for (cu, cs) in facet_contractions(level, &s, &t, &f) {
                worst = worst.max((cu + cs).abs() / cu.abs().max(cs.abs()));
                cases += 1;
            }
        }
    }
    let detail = format!(
        "max |c_u + c_S| / max(|c_u|, |c_S|) = {worst:.3e} over {cases} centered and skew cases (need <= 1e-12)"
    );
    assert!(verdict("energy antisymmetry of the buoyancy facet terms", worst <= 1e-12, &detail, start));
}
