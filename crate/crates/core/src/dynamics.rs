//! Implicit midpoint step of the thermal shallow water equations.
//!
//! Prognostics live on the finest level: velocity in `W1L`, depth and depth weighted
//! buoyancy in `W2L`. Every Newton iteration forms the exactly time averaged
//! diagnostics, the buoyancy mean `s_bar` of the active scheme, the residuals, and
//! solves the linearised block system with the multigrid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TswError};
use crate::krylov::pcg;
use crate::mesh::MeshHierarchy;
use crate::multigrid::{BlockCoefficients, Multigrid, SolverParams};
use crate::operators::{
    apply_vorticity_flux, apply_weighted_mass_w1, cell_integral_dot, jump_mean_sf,
    jump_mean_st, mean_jump_sf, upwind_sf, LevelOperators, LowOrderElement, WeightedMassW0,
};
use crate::scalar::{norm2, Real};
use crate::spaces::Collocation;
use crate::transport::{DgTransport, FluxSamples, TransportOperands};

/// Prognostic fields on the finest level.
#[derive(Clone, Debug, PartialEq)]
pub struct State<T> {
    pub u: Vec<T>,
    pub h: Vec<T>,
    /// Depth weighted buoyancy `S = h s`.
    pub s: Vec<T>,
}

impl<T: Real> State<T> {
    /// Checks positivity of the depth and finiteness of every value.
    pub fn validate(&self, step: usize) -> Result<()> {
        if let Some(c) = self.h.iter().position(|v| !(*v > T::zero()) || !v.is_finite()) {
            return Err(TswError::BlowUp {
                step,
                reason: format!("depth {} in cell {c}", self.h[c]),
            });
        }
        if !self.u.iter().chain(&self.s).all(|v| v.is_finite()) {
            return Err(TswError::BlowUp {
                step,
                reason: "non-finite velocity or buoyancy".into(),
            });
        }
        Ok(())
    }

    /// Pointwise buoyancy `S / h` per cell.
    pub fn buoyancy(&self) -> Vec<T> {
        self.s.iter().zip(&self.h).map(|(a, b)| *a / *b).collect()
    }
}

/// Time averaged diagnostics of one Newton iteration.
#[derive(Clone, Debug)]
pub struct Diagnostics<T> {
    /// Mass flux in `W1L`.
    pub flux: Vec<T>,
    /// Bernoulli potential in `W2L`.
    pub phi: Vec<T>,
    /// `dH/dS = h / 2`, averaged.
    pub tbar: Vec<T>,
    /// Potential vorticity in `W0L`.
    pub q: Vec<T>,
}

/// How the buoyancy enters the momentum and buoyancy equations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuoyancyScheme {
    HighOrderUpwind,
    HighOrderCentered,
    LowCentered,
    LowSkewCentered,
    LowSkewUpwind,
}

impl BuoyancyScheme {
    pub const ALL: [BuoyancyScheme; 5] = [
        BuoyancyScheme::HighOrderUpwind,
        BuoyancyScheme::HighOrderCentered,
        BuoyancyScheme::LowCentered,
        BuoyancyScheme::LowSkewCentered,
        BuoyancyScheme::LowSkewUpwind,
    ];

    pub fn is_high_order(self) -> bool {
        matches!(self, Self::HighOrderUpwind | Self::HighOrderCentered)
    }

    /// Upwind switch of the DG transport.
    pub fn alpha<T: Real>(self) -> T {
        if self == Self::HighOrderUpwind {
            T::one()
        } else {
            T::zero()
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::HighOrderUpwind => "high-order-upwind",
            Self::HighOrderCentered => "high-order-centered",
            Self::LowCentered => "low-centered",
            Self::LowSkewCentered => "low-skew-centered",
            Self::LowSkewUpwind => "low-skew-upwind",
        }
    }
}

impl fmt::Display for BuoyancyScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuoyancyScheme {
    type Err = TswError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|v| v.name().replace('-', "") == key)
            .ok_or_else(|| {
                TswError::Config(format!(
                    "unknown buoyancy scheme '{s}' (expected one of {})",
                    Self::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }
}

/// Nonlinear iteration control.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NewtonMode<T> {
    /// Iterate until every relative update norm is below `tol`, at most `max_iterations`.
    Tolerance { tol: T, max_iterations: usize },
    /// Exactly `n` iterations.
    Fixed(usize),
}

impl<T: Real> Default for NewtonMode<T> {
    fn default() -> Self {
        NewtonMode::Tolerance {
            tol: T::lit(1e-12),
            max_iterations: 30,
        }
    }
}

/// Physical and numerical parameters of the stepper.
#[derive(Clone, Copy, Debug)]
pub struct StepperConfig<T> {
    pub dt: T,
    pub coriolis: T,
    pub scheme: BuoyancyScheme,
    pub newton: NewtonMode<T>,
    pub solver: SolverParams<T>,
}

/// Residuals of the three prognostic equations.
#[derive(Clone, Debug)]
pub struct Residuals<T> {
    pub u: Vec<T>,
    pub h: Vec<T>,
    pub s: Vec<T>,
}

impl<T: Real> Residuals<T> {
    pub fn norms(&self) -> [T; 3] {
        [norm2(&self.u), norm2(&self.h), norm2(&self.s)]
    }
}

/// Outcome of one time step.
#[derive(Clone, Debug)]
pub struct StepReport<T> {
    pub newton_iterations: usize,
    /// Update norms `(du, dh, dS)` of the last iteration, relative to the field norm
    /// when that exceeds one.
    pub last_update: [T; 3],
    pub multigrid_cycles: usize,
    /// Buoyancy at the end of the step on the DG nodes (high order schemes).
    pub dg_buoyancy: Option<Vec<T>>,
}

/// High order transport machinery attached to a stepper.
#[derive(Clone, Debug)]
struct HighOrder<T> {
    transport: DgTransport<T>,
    colloc: Collocation,
}

/// The coupled time stepper.
#[derive(Clone, Debug)]
pub struct Stepper<T> {
    pub hierarchy: MeshHierarchy<T>,
    pub config: StepperConfig<T>,
    element: LowOrderElement<T>,
    mass_w0: WeightedMassW0<T>,
    mg: Multigrid<T>,
    high: Option<HighOrder<T>>,
    /// `int psi` for every `W0L` basis function.
    vertex_areas: Vec<T>,
}

impl<T: Real> Stepper<T> {
    /// Builds the stepper; the Jacobian uses the domain means of `s` and `h` of `initial`.
    pub fn new(hierarchy: MeshHierarchy<T>, config: StepperConfig<T>, initial: &State<T>) -> Result<Self> {
        if !(config.dt > T::zero()) {
            return Err(TswError::Config(format!("time step must be positive, got {}", config.dt)));
        }
        let fine = hierarchy.finest();
        if initial.u.len() != fine.n_edges() || initial.h.len() != fine.n_cells() || initial.s.len() != fine.n_cells() {
            return Err(TswError::State("initial state does not match the finest level".into()));
        }
        initial.validate(0)?;
        let areas = fine.cell_areas();
        let total: T = areas.iter().copied().sum();
        let mean_h = areas.iter().zip(&initial.h).map(|(a, h)| *a * *h).sum::<T>() / total;
        let mean_s = areas
            .iter()
            .zip(initial.s.iter().zip(&initial.h))
            .map(|(a, (s, h))| *a * *s / *h)
            .sum::<T>()
            / total;
        let coeffs = BlockCoefficients {
            dt: config.dt,
            g: mean_s,
            depth: mean_h,
        };
        let mg = Multigrid::new(&hierarchy, coeffs, config.solver)?;
        let high = if config.scheme.is_high_order() {
            Some(HighOrder {
                transport: DgTransport::new(&hierarchy)?,
                colloc: Collocation::new(&hierarchy)?,
            })
        } else {
            None
        };
        let mass_w0 = WeightedMassW0::new(fine);
        let mut vertex_areas = vec![T::zero(); fine.n_vertices()];
        for j in 0..fine.ny {
            for i in 0..fine.nx {
                let a = fine.cell_area(fine.cell_index(i, j)) * T::lit(0.25);
                for v in fine.cell_vertices(i, j) {
                    vertex_areas[v] += a;
                }
            }
        }
        Ok(Self {
            hierarchy,
            config,
            element: LowOrderElement::new(),
            mass_w0,
            mg,
            high,
            vertex_areas,
        })
    }

    pub fn ops(&self) -> &LevelOperators<T> {
        &self.mg.finest().ops
    }

    pub fn coefficients(&self) -> BlockCoefficients<T> {
        self.mg.finest().coeffs
    }

    pub fn collocation(&self) -> Option<&Collocation> {
        self.high.as_ref().map(|h| &h.colloc)
    }

    /// `s` on the DG nodes from `int gamma h s = int gamma S`, which the collocated
    /// diagonal mass matrix reduces to `S / h` per fine cell.
    pub fn diagnose_s(&self, h: &[T], s: &[T]) -> Result<Vec<T>> {
        let hi = self
            .high
            .as_ref()
            .ok_or_else(|| TswError::Config("buoyancy diagnosis needs a high order scheme".into()))?;
        diagnose_s(&hi.colloc, h, s)
    }

    /// Time averaged diagnostics between `n` and `k`.
    pub fn compute_diagnostics(&self, n: &State<T>, k: &State<T>) -> Result<Diagnostics<T>> {
        self.diagnostics_from(n, k, None)
    }

    /// [`Self::compute_diagnostics`] with the mass solves started from `guess`.
    fn diagnostics_from(&self, n: &State<T>, k: &State<T>, guess: Option<&Diagnostics<T>>) -> Result<Diagnostics<T>> {
        let fine = self.hierarchy.finest();
        let ops = self.ops();
        let el = &self.element;
        let sixth = T::one() / T::lit(6.0);
        let two = T::lit(2.0);
        // F
        // (2 M[hn] un + M[hn] uk + M[hk] un + 2 M[hk] uk) / 6
        let wn: Vec<T> = n.u.iter().zip(&k.u).map(|(a, b)| two * *a + *b).collect();
        let wk: Vec<T> = n.u.iter().zip(&k.u).map(|(a, b)| *a + two * *b).collect();
        let a = apply_weighted_mass_w1(el, fine, &n.h, &wn);
        let b = apply_weighted_mass_w1(el, fine, &k.h, &wk);
        let rhs: Vec<T> = a.iter().zip(&b).map(|(x, y)| sixth * (*x + *y)).collect();
        let flux = solve_mass(&ops.m1, &rhs, guess.map(|g| g.flux.as_slice()))?;
        // Phi
        let nn = cell_integral_dot(el, fine, &n.u, &n.u);
        let nk = cell_integral_dot(el, fine, &n.u, &k.u);
        let kk = cell_integral_dot(el, fine, &k.u, &k.u);
        let quarter = T::lit(0.25);
        let phi: Vec<T> = (0..fine.n_cells())
            .map(|cell| sixth * (nn[cell] + nk[cell] + kk[cell]) / ops.areas[cell] + quarter * (n.s[cell] + k.s[cell]))
            .collect();
        let tbar: Vec<T> = n.h.iter().zip(&k.h).map(|(a, b)| quarter * (*a + *b)).collect();
        // q
        let hmid: Vec<T> = n.h.iter().zip(&k.h).map(|(a, b)| T::half() * (*a + *b)).collect();
        let m0 = self.mass_w0.assemble(&hmid)?;
        let umid: Vec<T> = n.u.iter().zip(&k.u).map(|(a, b)| T::half() * (*a + *b)).collect();
        let mut qr = ops.curl.matvec(&umid);
        for (v, r) in qr.iter_mut().enumerate() {
            *r += self.config.coriolis * self.vertex_areas[v];
        }
        let q = solve_mass(&m0, &qr, guess.map(|g| g.q.as_slice()))?;
        Ok(Diagnostics { flux, phi, tbar, q })
    }

    /// Time averaged buoyancy of the active scheme. High order schemes also return
    /// the transported DG buoyancy at the new time level.
    pub fn buoyancy_mean(
        &self,
        n: &State<T>,
        k: &State<T>,
        s_dg: Option<&[T]>,
        diag: &Diagnostics<T>,
    ) -> Result<(Vec<T>, Option<Vec<T>>)> {
        match &self.high {
            Some(hi) => {
                let s0 = match s_dg {
                    Some(v) => v.to_vec(),
                    None => diagnose_s(&hi.colloc, &n.h, &n.s)?,
                };
                let hmid: Vec<T> = n.h.iter().zip(&k.h).map(|(a, b)| T::half() * (*a + *b)).collect();
                let hbar = hi.colloc.to_dg(&hmid);
                let samples = FluxSamples::from_w1l(&self.hierarchy, &hi.colloc, &diag.flux)?;
                let ops = TransportOperands {
                    flux: &samples,
                    hbar: &hbar,
                    alpha: self.config.scheme.alpha(),
                };
                let s1 = hi.transport.ssp_rk3_step(&s0, &ops, self.config.dt)?;
                let p0 = hi.colloc.to_fine(&s0);
                let p1 = hi.colloc.to_fine(&s1);
                let sbar = p0.iter().zip(&p1).map(|(a, b)| T::half() * (*a + *b)).collect();
                Ok((sbar, Some(s1)))
            }
            None => {
                let sbar = (0..n.h.len())
                    .map(|c| T::half() * (n.s[c] / n.h[c] + k.s[c] / k.h[c]))
                    .collect();
                Ok((sbar, None))
            }
        }
    }

    /// Residuals of the discrete equations at iterate `k`.
    pub fn assemble_residuals(&self, n: &State<T>, k: &State<T>, diag: &Diagnostics<T>, sbar: &[T]) -> Residuals<T> {
        let fine = self.hierarchy.finest();
        let ops = self.ops();
        let dt = self.config.dt;
        let h = T::half();
        // velocity
        let du: Vec<T> = k.u.iter().zip(&n.u).map(|(a, b)| *a - *b).collect();
        let mut ru = ops.m1.matvec(&du);
        let qf = apply_vorticity_flux(&self.element, fine, &diag.q, &diag.flux);
        for (r, v) in ru.iter_mut().zip(&qf) {
            *r += dt * *v;
        }
        ops.div_t.matvec_add(-dt, &diag.phi, &mut ru);
        // depth
        let mut rh: Vec<T> = (0..fine.n_cells()).map(|c| ops.areas[c] * (k.h[c] - n.h[c])).collect();
        ops.div.matvec_add(dt, &diag.flux, &mut rh);
        // buoyancy
        let mut rs: Vec<T> = (0..fine.n_cells()).map(|c| ops.areas[c] * (k.s[c] - n.s[c])).collect();
        match self.config.scheme {
            BuoyancyScheme::HighOrderUpwind | BuoyancyScheme::HighOrderCentered | BuoyancyScheme::LowCentered => {
                let g = jump_mean_st(fine, sbar, &diag.tbar);
                for (r, v) in ru.iter_mut().zip(&g) {
                    *r -= dt * *v;
                }
                let f = jump_mean_sf(fine, sbar, &diag.flux);
                for (r, v) in rs.iter_mut().zip(&f) {
                    *r += dt * *v;
                }
            }
            BuoyancyScheme::LowSkewCentered | BuoyancyScheme::LowSkewUpwind => {
                let half_dt = h * dt;
                let g = jump_mean_st(fine, sbar, &diag.tbar);
                let g_adj = jump_mean_st(fine, &diag.tbar, sbar);
                let st: Vec<T> = sbar.iter().zip(&diag.tbar).map(|(a, b)| *a * *b).collect();
                for e in 0..ru.len() {
                    ru[e] += -half_dt * g[e] + half_dt * g_adj[e];
                }
                ops.div_t.matvec_add(-half_dt, &st, &mut ru);
                let a = jump_mean_sf(fine, sbar, &diag.flux);
                let b = mean_jump_sf(fine, sbar, &diag.flux);
                let divf = ops.div.matvec(&diag.flux);
                for c in 0..rs.len() {
                    rs[c] += half_dt * a[c] - half_dt * b[c] + half_dt * sbar[c] * divf[c];
                }
                if self.config.scheme == BuoyancyScheme::LowSkewUpwind {
                    let up = upwind_sf(fine, sbar, &diag.flux);
                    for (r, v) in rs.iter_mut().zip(&up) {
                        *r += dt * *v;
                    }
                }
            }
        }
        Residuals { u: ru, h: rh, s: rs }
    }

    /// One quasi-Newton iteration from iterate `k`. Returns the new iterate, the
    /// relative update norms, the multigrid cycles and the transported DG buoyancy.
    pub fn newton_step(
        &self,
        n: &State<T>,
        k: &State<T>,
        s_dg: Option<&[T]>,
    ) -> Result<(State<T>, [T; 3], usize, Option<Vec<T>>)> {
        let (next, upd, cycles, s_new, _) = self.iterate(n, k, s_dg, None)?;
        Ok((next, upd, cycles, s_new))
    }

    /// [`Self::newton_step`] that also returns the diagnostics of `k`, which seed
    /// the mass solves of the next iteration.
    #[allow(clippy::type_complexity)]
    fn iterate(
        &self,
        n: &State<T>,
        k: &State<T>,
        s_dg: Option<&[T]>,
        guess: Option<&Diagnostics<T>>,
    ) -> Result<(State<T>, [T; 3], usize, Option<Vec<T>>, Diagnostics<T>)> {
        let diag = self.diagnostics_from(n, k, guess)?;
        let (sbar, s_new) = self.buoyancy_mean(n, k, s_dg, &diag)?;
        let res = self.assemble_residuals(n, k, &diag, &sbar);
        let (du, dh, ds, cycles) = self.solve_update(&res)?;
        let next = State {
            u: k.u.iter().zip(&du).map(|(a, b)| *a + *b).collect(),
            h: k.h.iter().zip(&dh).map(|(a, b)| *a + *b).collect(),
            s: k.s.iter().zip(&ds).map(|(a, b)| *a + *b).collect(),
        };
        // relative, except for fields whose norm is below one (a fluid at rest has
        // round-off velocities whose relative update never settles)
        let rel = |d: &[T], x: &[T]| norm2(d) / norm2(x).max(T::one());
        let upd = [rel(&du, &next.u), rel(&dh, &next.h), rel(&ds, &next.s)];
        Ok((next, upd, cycles, s_new, diag))
    }

    /// Solves the linearised system for `(du, dh, dS)` given the residuals. The
    /// depth and buoyancy increments are recomputed from their block rows so that
    /// mass and total `S` are conserved to round-off regardless of the solver tolerance.
    pub fn solve_update(&self, res: &Residuals<T>) -> Result<(Vec<T>, Vec<T>, Vec<T>, usize)> {
        let ops = self.ops();
        let (nu, nc) = (res.u.len(), res.h.len());
        let mut b = Vec::with_capacity(nu + 2 * nc);
        b.extend(res.u.iter().map(|v| -*v));
        b.extend(res.h.iter().map(|v| -*v));
        b.extend(res.s.iter().map(|v| -*v));
        let mut x = vec![T::zero(); b.len()];
        let rep = self.mg.solve(&b, &mut x)?;
        let du = x[..nu].to_vec();
        let c = self.coefficients().c();
        let ddu = ops.div.matvec(&du);
        let dh = (0..nc).map(|k| (-res.h[k] - c * ddu[k]) / ops.areas[k]).collect();
        let ds = (0..nc).map(|k| -res.s[k] / ops.areas[k]).collect();
        Ok((du, dh, ds, rep.cycles))
    }

    /// Advances `state` by one time step.
    pub fn advance(&self, state: &State<T>, step: usize) -> Result<(State<T>, StepReport<T>)> {
        state.validate(step)?;
        let s_dg = match &self.high {
            Some(hi) => Some(diagnose_s(&hi.colloc, &state.h, &state.s)?),
            None => None,
        };
        let mut k = state.clone();
        let mut iterations = 0;
        let mut last = [T::zero(); 3];
        let mut cycles = 0;
        let mut dg = None;
        let mut prev: Option<Diagnostics<T>> = None;
        let (max_it, tol) = match self.config.newton {
            NewtonMode::Tolerance { tol, max_iterations } => (max_iterations, Some(tol)),
            NewtonMode::Fixed(n) => (n, None),
        };
        while iterations < max_it {
            let (next, upd, cyc, s_new, diag) = self.iterate(state, &k, s_dg.as_deref(), prev.as_ref())?;
            prev = Some(diag);
            iterations += 1;
            cycles += cyc;
            last = upd;
            dg = s_new;
            k = next;
            k.validate(step).map_err(|e| match e {
                TswError::BlowUp { reason, .. } => TswError::BlowUp {
                    step,
                    reason: format!("{reason} after Newton iteration {iterations}"),
                },
                other => other,
            })?;
            if let Some(t) = tol {
                if upd.iter().all(|v| *v < t) {
                    break;
                }
            }
        }
        Ok((
            k,
            StepReport {
                newton_iterations: iterations,
                last_update: last,
                multigrid_cycles: cycles,
                dg_buoyancy: dg,
            },
        ))
    }

    /// `dt int |F.n| [s_bar]^2`-type production of the low order upwind term,
    /// contracted with `T_bar`: the energy change it causes in one step.
    pub fn upwind_energy_production(&self, diag: &Diagnostics<T>, sbar: &[T]) -> T {
        let up = upwind_sf(self.hierarchy.finest(), sbar, &diag.flux);
        -self.config.dt * up.iter().zip(&diag.tbar).map(|(a, b)| *a * *b).sum::<T>()
    }
}

/// `S / h` reordered onto the DG nodes.
pub fn diagnose_s<T: Real>(colloc: &Collocation, h: &[T], s: &[T]) -> Result<Vec<T>> {
    if let Some(c) = h.iter().position(|v| !(*v > T::zero())) {
        return Err(TswError::State(format!("non-positive depth {} in cell {c}", h[c])));
    }
    let fine: Vec<T> = s.iter().zip(h).map(|(a, b)| *a / *b).collect();
    Ok(colloc.to_dg(&fine))
}

/// The projection from the DG nodes onto the fine cells.
pub fn project_low<T: Real>(colloc: &Collocation, s: &[T]) -> Vec<T> {
    colloc.to_fine(s)
}

/// Mass matrix solve starting from `guess`, or from the Jacobi estimate without one.
fn solve_mass<T: Real>(m: &crate::sparse::CsrMatrix<T>, rhs: &[T], guess: Option<&[T]>) -> Result<Vec<T>> {
    let mut x = match guess {
        Some(g) => g.to_vec(),
        None => rhs.iter().zip(m.diagonal()).map(|(r, d)| *r / d).collect(),
    };
    let rep = pcg(m, rhs, &mut x, T::lit(1e-14), 500);
    if !rep.final_residual().is_finite() {
        return Err(TswError::State("mass matrix solve produced non-finite values".into()));
    }
    Ok(x)
}
