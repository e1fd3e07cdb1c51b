//! Experiment presets, integral diagnostics, error norms, output writers and the
//! run and convergence drivers behind the command line.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{BuoyancyScheme, NewtonMode, State, Stepper, StepperConfig};
use crate::error::{Result, TswError};
use crate::mesh::{Domain, MeshHierarchy, MeshLevel};
use crate::multigrid::SolverParams;
use crate::operators::{apply_weighted_mass_w1, assemble_weak_curl, LowOrderElement};
use crate::scalar::Real;
use crate::spaces::{interpolate_w2h, project_w1l, project_w2l, tensor_rule, Collocation, SpaceKind};
use crate::transport::{DgTransport, FluxSamples, TransportOperands};

/// Header of the diagnostics CSV.
pub const CSV_HEADER: &str = "step,time,mass,total_S,energy,tracer_variance,vorticity,newton_iters";

/// First line of every snapshot file.
pub const SNAPSHOT_MAGIC: &str = "tsw-snapshot v1";

/// Quadrature points per dimension used to initialise `W1L` and `W2L` fields.
const INIT_QUADRATURE: usize = 3;

/// Constants of the solid body rotation test.
pub mod advection {
    /// Gaussian width parameter: `exp(-5 r^2)`.
    pub const WIDTH: f64 = 5.0;
    /// Centre as a multiple of pi: `(0.4 pi, -0.4 pi)`.
    pub const CENTRE: (f64, f64) = (0.4, -0.4);
    /// `dt = pi / (DT_DIVISOR * N)` for `N` DG elements per dimension.
    pub const DT_DIVISOR: f64 = 25.0;
    pub const RESOLUTIONS: [usize; 3] = [12, 24, 48];
}

/// Constants of the thermogeostrophic balance test.
pub mod balance {
    pub const EARTH_RADIUS: f64 = 6371220.0;
    pub const U0: f64 = 20.0;
    pub const H0: f64 = 5960.0;
    pub const GRAVITY: f64 = 9.80616;
    pub const CORIOLIS: f64 = 6.147e-5;
    /// Time step at 32 cells per dimension; it halves with the cell size.
    pub const DT_AT_32: f64 = 1800.0;
    pub const DURATION: f64 = 86400.0;
    pub const RESOLUTIONS_CI: [usize; 2] = [32, 64];
    pub const RESOLUTIONS_PAPER: [usize; 3] = [32, 64, 128];
}

/// Constants of the thermally unstable vortex.
pub mod instability {
    pub const H0: f64 = 1.0;
    pub const GRAVITY: f64 = 1.0;
    pub const BETA: f64 = 2.0;
    pub const R_C: f64 = 0.5;
    pub const U0: f64 = 0.1;
    pub const ROSSBY: f64 = 0.1;
    pub const BURGER: f64 = 1.0;
    /// From `Ro = U0 / (f L)` with `L = 1`.
    pub const CORIOLIS: f64 = 1.0;
    pub const PERTURBATION: f64 = 0.01;
    pub const DT: f64 = 0.02;
    pub const RESOLUTION_CI: usize = 144;
    pub const DURATION_CI: f64 = 50.0;
    pub const RESOLUTION_PAPER: usize = 288;
    pub const DURATION_PAPER: f64 = 100.0;
    /// Multigrid target inside the four fixed quasi-Newton iterations.
    pub const MG_RTOL: f64 = 1e-6;
}

/// The three experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentPreset {
    /// Pure DG transport of a Gaussian by solid body rotation.
    Advection,
    /// Steady zonal jet in thermogeostrophic balance.
    Balance,
    /// Thermally unstable single vortex.
    Instability,
}

impl ExperimentPreset {
    pub const ALL: [ExperimentPreset; 3] = [Self::Advection, Self::Balance, Self::Instability];

    pub fn name(self) -> &'static str {
        match self {
            Self::Advection => "advection",
            Self::Balance => "balance",
            Self::Instability => "instability",
        }
    }

    /// Whether the preset runs the coupled dynamics.
    pub fn is_dynamic(self) -> bool {
        self != Self::Advection
    }

    pub fn domain<T: Real>(self) -> Domain<T> {
        let pi = T::PI();
        match self {
            Self::Advection | Self::Instability => Domain::new(-pi, -pi, T::lit(2.0) * pi, T::lit(2.0) * pi),
            Self::Balance => {
                let l = T::lit(2.0) * pi * T::lit(balance::EARTH_RADIUS);
                Domain::new(T::zero(), T::zero(), l, l)
            }
        }
    }

    pub fn default_levels(self) -> usize {
        match self {
            Self::Advection => 3,
            Self::Balance | Self::Instability => 4,
        }
    }

    /// The fixed iteration instability runs only need the linear solve to stay
    /// below the quasi-Newton contraction; everything else solves to round-off.
    pub fn default_mg_rtol(self) -> f64 {
        match self {
            Self::Instability => instability::MG_RTOL,
            Self::Advection | Self::Balance => SolverParams::<f64>::default().rtol,
        }
    }

    pub fn default_resolution(self, scale: Scale) -> usize {
        match (self, scale) {
            (Self::Advection, _) => advection::RESOLUTIONS[0],
            (Self::Balance, _) => balance::RESOLUTIONS_CI[0],
            (Self::Instability, Scale::Ci) => instability::RESOLUTION_CI,
            (Self::Instability, Scale::Paper) => instability::RESOLUTION_PAPER,
        }
    }

    pub fn default_resolutions(self, scale: Scale) -> Vec<usize> {
        match (self, scale) {
            (Self::Advection, _) => advection::RESOLUTIONS.to_vec(),
            (Self::Balance, Scale::Ci) => balance::RESOLUTIONS_CI.to_vec(),
            (Self::Balance, Scale::Paper) => balance::RESOLUTIONS_PAPER.to_vec(),
            (Self::Instability, s) => vec![self.default_resolution(s)],
        }
    }

    /// Time step matched to `resolution`.
    pub fn default_dt(self, resolution: usize) -> f64 {
        let n = resolution as f64;
        match self {
            Self::Advection => std::f64::consts::PI / (advection::DT_DIVISOR * n),
            Self::Balance => balance::DT_AT_32 * 32.0 / n,
            Self::Instability => instability::DT,
        }
    }

    pub fn default_t_final(self, scale: Scale) -> f64 {
        match (self, scale) {
            (Self::Advection, _) => 2.0 * std::f64::consts::PI,
            (Self::Balance, _) => balance::DURATION,
            (Self::Instability, Scale::Ci) => instability::DURATION_CI,
            (Self::Instability, Scale::Paper) => instability::DURATION_PAPER,
        }
    }

    pub fn default_newton(self) -> NewtonSetting {
        match self {
            Self::Instability => NewtonSetting::Fixed(4),
            _ => NewtonSetting::Tolerance,
        }
    }

    pub fn coriolis(self) -> f64 {
        match self {
            Self::Advection => 0.0,
            Self::Balance => balance::CORIOLIS,
            Self::Instability => instability::CORIOLIS,
        }
    }

    /// Fine cells per dimension for a preset resolution: the advection test counts
    /// DG elements, the dynamics tests count low order cells.
    pub fn fine_cells(self, resolution: usize) -> usize {
        match self {
            Self::Advection => crate::mesh::GL_POINTS_PER_ELEMENT * resolution,
            _ => resolution,
        }
    }
}

impl fmt::Display for ExperimentPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentPreset {
    type Err = TswError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        match key.as_str() {
            "advection" | "solid-body-advection" | "solidbodyadvection" => Ok(Self::Advection),
            "balance" | "thermogeostrophic-balance" | "thermogeostrophicbalance" => Ok(Self::Balance),
            "instability" | "thermal-instability" | "thermalinstability" => Ok(Self::Instability),
            _ => Err(TswError::Config(format!(
                "unknown preset '{s}' (expected advection, balance or instability)"
            ))),
        }
    }
}

/// Reduced presets for routine testing or the full published sizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    #[default]
    Ci,
    Paper,
}

impl FromStr for Scale {
    type Err = TswError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ci" => Ok(Self::Ci),
            "paper" => Ok(Self::Paper),
            _ => Err(TswError::Config(format!("unknown scale '{s}' (expected ci or paper)"))),
        }
    }
}

/// Newton control as written in configs: `tol` or `fixed<N>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NewtonSetting {
    Tolerance,
    Fixed(usize),
}

impl fmt::Display for NewtonSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tolerance => f.write_str("tol"),
            Self::Fixed(n) => write!(f, "fixed{n}"),
        }
    }
}

impl FromStr for NewtonSetting {
    type Err = TswError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "tol" {
            return Ok(Self::Tolerance);
        }
        s.strip_prefix("fixed")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|n| *n > 0)
            .map(Self::Fixed)
            .ok_or_else(|| TswError::Config(format!("unknown Newton mode '{s}' (expected tol or fixed<N>, e.g. fixed4)")))
    }
}

impl Serialize for NewtonSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NewtonSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything a run needs. Unset values take the preset defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: ExperimentPreset,
    pub scale: Scale,
    /// DG elements per dimension (advection) or low order cells per dimension.
    pub resolution: Option<usize>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub scheme: BuoyancyScheme,
    /// DG upwinding switch; for the dynamics it must agree with the scheme.
    pub alpha: Option<f64>,
    pub newton: Option<NewtonSetting>,
    pub newton_tol: f64,
    pub newton_max_iterations: usize,
    pub levels: Option<usize>,
    pub pre_smooth: usize,
    pub post_smooth: usize,
    pub coarse_iterations: usize,
    pub max_cycles: usize,
    /// Relative residual target of the multigrid solve.
    pub mg_rtol: Option<f64>,
    pub out: Option<PathBuf>,
    /// Write snapshots every this many steps (and at the first and last step).
    pub snapshots: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mg = SolverParams::<f64>::default();
        Self {
            preset: ExperimentPreset::Advection,
            scale: Scale::Ci,
            resolution: None,
            dt: None,
            t_final: None,
            scheme: BuoyancyScheme::HighOrderUpwind,
            alpha: None,
            newton: None,
            newton_tol: 1e-12,
            newton_max_iterations: 30,
            levels: None,
            pre_smooth: mg.pre_smooth,
            post_smooth: mg.post_smooth,
            coarse_iterations: mg.coarse_iterations,
            max_cycles: mg.max_cycles,
            mg_rtol: None,
            out: None,
            snapshots: None,
        }
    }
}

impl RunConfig {
    pub fn preset(preset: ExperimentPreset) -> Self {
        Self {
            preset,
            ..Self::default()
        }
    }

    /// Reads a TOML file whose keys are the field names of this struct.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| TswError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| TswError::Config(format!("invalid config: {e}")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| TswError::Config(format!("cannot serialise config: {e}")))
    }

    /// Fills in preset defaults and checks consistency.
    pub fn resolve<T: Real>(&self) -> Result<ResolvedConfig<T>> {
        let preset = self.preset;
        let resolution = self.resolution.unwrap_or(preset.default_resolution(self.scale));
        let dt = self.dt.unwrap_or(preset.default_dt(resolution));
        let t_final = self.t_final.unwrap_or(preset.default_t_final(self.scale));
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TswError::Config(format!("time step must be positive, got {dt}")));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(TswError::Config(format!("final time must be positive, got {t_final}")));
        }
        let steps = (t_final / dt).round();
        if steps < 1.0 || ((steps * dt - t_final) / t_final).abs() > 1e-9 {
            return Err(TswError::Config(format!(
                "final time {t_final} is not an integer multiple of the time step {dt}"
            )));
        }
        let levels = self.levels.unwrap_or(preset.default_levels());
        if levels < 3 {
            return Err(TswError::Config(format!(
                "the DG buoyancy needs at least 3 mesh levels, got {levels}"
            )));
        }
        let alpha = match (preset, self.alpha) {
            (ExperimentPreset::Advection, a) => a.unwrap_or(1.0),
            (_, None) => self.scheme.alpha::<f64>(),
            (_, Some(a)) => {
                if !self.scheme.is_high_order() {
                    return Err(TswError::Config(format!(
                        "alpha applies to the high order schemes only, not to {}",
                        self.scheme
                    )));
                }
                if a != self.scheme.alpha::<f64>() {
                    return Err(TswError::Config(format!(
                        "alpha = {a} contradicts scheme {} (use high-order-upwind for 1, high-order-centered for 0)",
                        self.scheme
                    )));
                }
                a
            }
        };
        if alpha != 0.0 && alpha != 1.0 {
            return Err(TswError::Config(format!("alpha must be 0 or 1, got {alpha}")));
        }
        let newton = match self.newton.unwrap_or(preset.default_newton()) {
            NewtonSetting::Tolerance => NewtonMode::Tolerance {
                tol: T::lit(self.newton_tol),
                max_iterations: self.newton_max_iterations,
            },
            NewtonSetting::Fixed(n) => NewtonMode::Fixed(n),
        };
        if self.snapshots == Some(0) {
            return Err(TswError::Config("snapshot interval must be positive".into()));
        }
        let solver = SolverParams {
            pre_smooth: self.pre_smooth,
            post_smooth: self.post_smooth,
            coarse_iterations: self.coarse_iterations,
            max_cycles: self.max_cycles,
            rtol: T::lit(self.mg_rtol.unwrap_or(preset.default_mg_rtol())),
            ..SolverParams::default()
        };
        let fine_cells = preset.fine_cells(resolution);
        // surfaces divisibility errors before any work is done
        let hierarchy = MeshHierarchy::build(preset.domain(), fine_cells, levels, 3)?;
        Ok(ResolvedConfig {
            preset,
            resolution,
            hierarchy,
            dt: T::lit(dt),
            steps: steps as usize,
            scheme: self.scheme,
            alpha: T::lit(alpha),
            newton,
            solver,
            coriolis: T::lit(preset.coriolis()),
            snapshots: self.snapshots,
        })
    }
}

/// A validated run configuration.
#[derive(Clone, Debug)]
pub struct ResolvedConfig<T> {
    pub preset: ExperimentPreset,
    pub resolution: usize,
    pub hierarchy: MeshHierarchy<T>,
    pub dt: T,
    pub steps: usize,
    pub scheme: BuoyancyScheme,
    pub alpha: T,
    pub newton: NewtonMode<T>,
    pub solver: SolverParams<T>,
    pub coriolis: T,
    pub snapshots: Option<usize>,
}

/// Analytic initial fields `(u, v, h, s)` of the dynamics presets.
pub fn analytic_fields<T: Real>(preset: ExperimentPreset, x: T, y: T) -> (T, T, T, T) {
    match preset {
        ExperimentPreset::Advection => (y, -x, T::one(), advection_tracer(x, y)),
        ExperimentPreset::Balance => {
            let re = T::lit(balance::EARTH_RADIUS);
            let (u0, h0, g, f) = (
                T::lit(balance::U0),
                T::lit(balance::H0),
                T::lit(balance::GRAVITY),
                T::lit(balance::CORIOLIS),
            );
            let h = h0 - re * f * u0 / g * (y / re).sin();
            let s = g * (T::one() + T::lit(0.05) * h0 * h0 / (h * h));
            (u0 * (y / re).cos(), T::zero(), h, s)
        }
        ExperimentPreset::Instability => {
            use instability::*;
            let r = (x * x + y * y).sqrt();
            let theta = y.atan2(x);
            let rc = T::lit(R_C);
            let eps = T::lit(PERTURBATION)
                * (-T::lit(60.0) * (r - rc) * (r - rc)).exp()
                * (T::lit(6.0) * T::PI() * (r - rc)).sin()
                * (T::lit(4.0) * theta).cos();
            let beta = T::lit(BETA);
            let swirl = T::lit(U0) * ((T::one() - r.powf(beta)) / beta).exp();
            let (ro, bu) = (T::lit(ROSSBY), T::lit(BURGER));
            let e1 = ((T::one() - r * r) * T::half()).exp();
            let e2 = (T::one() - r * r).exp();
            let s = eps + T::lit(GRAVITY) - T::lit(2.0) * ro / bu * (e1 + ro * T::half() * e2);
            (eps - swirl * y, eps + swirl * x, T::lit(H0) - eps, s)
        }
    }
}

/// The advected Gaussian.
pub fn advection_tracer<T: Real>(x: T, y: T) -> T {
    let pi = T::PI();
    let (cx, cy) = (T::lit(advection::CENTRE.0) * pi, T::lit(advection::CENTRE.1) * pi);
    (-T::lit(advection::WIDTH) * ((x - cx) * (x - cx) + (y - cy) * (y - cy))).exp()
}

/// Initial prognostic state of a dynamics preset on the finest level.
pub fn init_state<T: Real>(preset: ExperimentPreset, fine: &MeshLevel<T>) -> State<T> {
    let u = project_w1l(
        fine,
        |x, y| {
            let (u, v, _, _) = analytic_fields(preset, x, y);
            (u, v)
        },
        INIT_QUADRATURE,
    );
    let h = project_w2l(fine, |x, y| analytic_fields(preset, x, y).2, INIT_QUADRATURE);
    let s = project_w2l(
        fine,
        |x, y| {
            let (_, _, h, s) = analytic_fields(preset, x, y);
            h * s
        },
        INIT_QUADRATURE,
    );
    State { u, h, s }
}

/// One row of the diagnostics CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsRecord<T> {
    pub step: usize,
    pub time: T,
    pub mass: T,
    pub total_s: T,
    pub energy: T,
    pub tracer_variance: T,
    pub vorticity: T,
    pub newton_iterations: usize,
}

impl<T: Real> DiagnosticsRecord<T> {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.step,
            self.time,
            self.mass,
            self.total_s,
            self.energy,
            self.tracer_variance,
            self.vorticity,
            self.newton_iterations
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.time, self.mass, self.total_s, self.energy, self.tracer_variance, self.vorticity]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Integral invariants of a low order state.
pub struct Integrals<T> {
    element: LowOrderElement<T>,
    areas: Vec<T>,
    curl: crate::sparse::CsrMatrix<T>,
}

impl<T: Real> Integrals<T> {
    pub fn new(level: &MeshLevel<T>) -> Self {
        Self {
            element: LowOrderElement::new(),
            areas: level.cell_areas(),
            curl: assemble_weak_curl(level),
        }
    }

    /// Mass, total `S`, energy, tracer variance and total vorticity of `state`.
    /// The vorticity is the weak curl `M0 w = C u`, so `int w = 1^T C u`.
    pub fn evaluate(&self, level: &MeshLevel<T>, state: &State<T>) -> [T; 5] {
        let a = &self.areas;
        let mass: T = a.iter().zip(&state.h).map(|(a, h)| *a * *h).sum();
        let total_s: T = a.iter().zip(&state.s).map(|(a, s)| *a * *s).sum();
        let hu = apply_weighted_mass_w1(&self.element, level, &state.h, &state.u);
        let kinetic: T = hu.iter().zip(&state.u).map(|(p, q)| *p * *q).sum();
        let potential: T = a
            .iter()
            .zip(state.h.iter().zip(&state.s))
            .map(|(a, (h, s))| *a * *h * *s)
            .sum();
        let energy = T::half() * (kinetic + potential);
        let variance = T::half()
            * a.iter()
                .zip(state.h.iter().zip(&state.s))
                .map(|(a, (h, s))| *a * *s * *s / *h)
                .sum::<T>();
        let vorticity: T = self.curl.matvec(&state.u).into_iter().sum();
        [mass, total_s, energy, variance, vorticity]
    }
}

/// A field dump with a self-describing header.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T> {
    pub nx: usize,
    pub ny: usize,
    pub level: usize,
    pub space: SpaceKind,
    pub field: String,
    pub time: T,
    /// Row-major: `values[j * nx + i]`.
    pub values: Vec<T>,
}

impl<T: Real> Snapshot<T> {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| TswError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| TswError::io(path, e);
        writeln!(w, "{SNAPSHOT_MAGIC}").map_err(io)?;
        writeln!(w, "nx {}", self.nx).map_err(io)?;
        writeln!(w, "ny {}", self.ny).map_err(io)?;
        writeln!(w, "level {}", self.level).map_err(io)?;
        writeln!(w, "space {}", self.space).map_err(io)?;
        writeln!(w, "field {}", self.field).map_err(io)?;
        writeln!(w, "time {:e}", self.time).map_err(io)?;
        for row in self.values.chunks(self.nx.max(1)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", line.join(" ")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| TswError::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let mut next = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| TswError::Parse(format!("snapshot ends before '{key}'")))?
                .map_err(|e| TswError::io(path, e))?;
            if key.is_empty() {
                return Ok(line);
            }
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| TswError::Parse(format!("expected '{key}' in snapshot header, found '{line}'")))
        };
        let magic = next("")?;
        if magic != SNAPSHOT_MAGIC {
            return Err(TswError::Parse(format!("not a snapshot file: '{magic}'")));
        }
        let num = |s: String| s.parse::<usize>().map_err(|e| TswError::Parse(format!("{s}: {e}")));
        let nx = num(next("nx")?)?;
        let ny = num(next("ny")?)?;
        let level = num(next("level")?)?;
        let space: SpaceKind = next("space")?.parse()?;
        let field = next("field")?;
        let time = parse_real::<T>(&next("time")?)?;
        let mut values = Vec::with_capacity(nx * ny);
        while let Ok(line) = next("") {
            for tok in line.split_whitespace() {
                values.push(parse_real::<T>(tok)?);
            }
        }
        if values.len() != nx * ny {
            return Err(TswError::Parse(format!(
                "snapshot holds {} values, header promises {nx} x {ny}",
                values.len()
            )));
        }
        Ok(Self {
            nx,
            ny,
            level,
            space,
            field,
            time,
            values,
        })
    }
}

fn parse_real<T: Real>(s: &str) -> Result<T> {
    s.parse::<f64>()
        .map(T::lit)
        .map_err(|e| TswError::Parse(format!("'{s}': {e}")))
}

/// `sqrt(int (field - reference)^2)` for a cellwise constant field, with an
/// `n`-point tensor Gauss-Legendre rule in every cell.
pub fn l2_error<T: Real>(level: &MeshLevel<T>, field: &[T], reference: impl Fn(T, T) -> T, n: usize) -> T {
    let rule = tensor_rule::<T>(n);
    let quarter = T::lit(0.25);
    let mut acc = T::zero();
    for (c, v) in field.iter().enumerate() {
        let (i, j) = level.cell_ij(c);
        let jac = level.cell_area(c) * quarter;
        for &(xi, eta, w) in &rule {
            let (x, y) = level.to_physical(i, j, xi, eta);
            let d = *v - reference(x, y);
            acc += w * jac * d * d;
        }
    }
    acc.sqrt()
}

/// `sqrt(sum area (a - b)^2)` between two cellwise constant fields.
pub fn l2_distance_cells<T: Real>(level: &MeshLevel<T>, a: &[T], b: &[T]) -> T {
    (0..level.n_cells())
        .map(|c| {
            let d = a[c] - b[c];
            level.cell_area(c) * d * d
        })
        .sum::<T>()
        .sqrt()
}

/// `sqrt((a - b)^T M1 (a - b))` between two `W1L` fields.
pub fn l2_distance_w1l<T: Real>(level: &MeshLevel<T>, a: &[T], b: &[T]) -> T {
    let d: Vec<T> = a.iter().zip(b).map(|(x, y)| *x - *y).collect();
    let ones = vec![T::one(); level.n_cells()];
    let md = apply_weighted_mass_w1(&LowOrderElement::new(), level, &ones, &d);
    md.iter().zip(&d).map(|(p, q)| *p * *q).sum::<T>().sqrt()
}

/// Observed order of convergence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Order {
    Slope(f64),
    /// Every error is exactly zero.
    Exact,
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Order::Slope(p) => write!(f, "{p:.3}"),
            Order::Exact => f.write_str("exact"),
        }
    }
}

/// Least squares slope of `log(error)` against `log(dx)`.
pub fn observed_order(errors: &[f64], dx: &[f64]) -> Result<Order> {
    if errors.len() != dx.len() || errors.len() < 2 {
        return Err(TswError::Config(format!(
            "observed order needs at least two (error, dx) pairs, got {} errors and {} spacings",
            errors.len(),
            dx.len()
        )));
    }
    if errors.iter().all(|e| *e == 0.0) {
        return Ok(Order::Exact);
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(TswError::Config(format!("errors must be positive and finite, got {e}")));
    }
    if let Some(h) = dx.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(TswError::Config(format!("spacings must be positive and finite, got {h}")));
    }
    let n = errors.len() as f64;
    let xs: Vec<f64> = dx.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(TswError::Config("spacings must not all be equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(Order::Slope(sxy / sxx))
}

/// Transport-only run state.
struct AdvectionRun<T> {
    transport: DgTransport<T>,
    colloc: Collocation,
    flux: FluxSamples<T>,
    hbar: Vec<T>,
    s0: Vec<T>,
    s: Vec<T>,
}

/// Coupled dynamics run state.
struct DynamicsRun<T> {
    stepper: Stepper<T>,
    integrals: Integrals<T>,
    initial: State<T>,
    state: State<T>,
    dg: Option<Vec<T>>,
    last_newton: usize,
}

enum Kind<T> {
    Advection(Box<AdvectionRun<T>>),
    Dynamics(Box<DynamicsRun<T>>),
}

/// Distances of the current solution from its initial value.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldErrors<T> {
    pub names: Vec<&'static str>,
    pub values: Vec<T>,
}

/// A time-stepped experiment.
pub struct Simulation<T> {
    pub config: ResolvedConfig<T>,
    kind: Kind<T>,
    step: usize,
}

impl<T: Real> Simulation<T> {
    pub fn new(config: ResolvedConfig<T>) -> Result<Self> {
        let hier = &config.hierarchy;
        let kind = match config.preset {
            ExperimentPreset::Advection => {
                let transport = DgTransport::new(hier)?;
                let colloc = Collocation::new(hier)?;
                let flux = FluxSamples::analytic(hier, |x, y| (y, -x), |_, _| T::zero())?;
                let s0 = interpolate_w2h(hier, advection_tracer::<T>)?.values;
                let hbar = vec![T::one(); transport.n_dofs()];
                Kind::Advection(Box::new(AdvectionRun {
                    transport,
                    colloc,
                    flux,
                    hbar,
                    s: s0.clone(),
                    s0,
                }))
            }
            preset => {
                let initial = init_state(preset, hier.finest());
                let stepper = Stepper::new(
                    hier.clone(),
                    StepperConfig {
                        dt: config.dt,
                        coriolis: config.coriolis,
                        scheme: config.scheme,
                        newton: config.newton,
                        solver: config.solver,
                    },
                    &initial,
                )?;
                let dg = match stepper.collocation() {
                    Some(_) => Some(stepper.diagnose_s(&initial.h, &initial.s)?),
                    None => None,
                };
                Kind::Dynamics(Box::new(DynamicsRun {
                    integrals: Integrals::new(hier.finest()),
                    stepper,
                    state: initial.clone(),
                    initial,
                    dg,
                    last_newton: 0,
                }))
            }
        };
        Ok(Self { config, kind, step: 0 })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> T {
        self.config.dt * T::from_usize_lossy(self.step)
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.steps
    }

    /// The current dynamics state, if any.
    pub fn state(&self) -> Option<&State<T>> {
        match &self.kind {
            Kind::Dynamics(d) => Some(&d.state),
            Kind::Advection(_) => None,
        }
    }

    /// The buoyancy on the DG nodes: the tracer of the advection test, or the
    /// transported buoyancy of a high order dynamics scheme.
    pub fn dg_buoyancy(&self) -> Option<&[T]> {
        match &self.kind {
            Kind::Advection(a) => Some(&a.s),
            Kind::Dynamics(d) => d.dg.as_deref(),
        }
    }

    pub fn stepper(&self) -> Option<&Stepper<T>> {
        match &self.kind {
            Kind::Dynamics(d) => Some(&d.stepper),
            Kind::Advection(_) => None,
        }
    }

    /// Advances one step.
    pub fn advance(&mut self) -> Result<()> {
        let step = self.step + 1;
        match &mut self.kind {
            Kind::Advection(a) => {
                let ops = TransportOperands {
                    flux: &a.flux,
                    hbar: &a.hbar,
                    alpha: self.config.alpha,
                };
                a.s = a.transport.ssp_rk3_step(&a.s, &ops, self.config.dt).map_err(|e| match e {
                    TswError::BlowUp { reason, .. } => TswError::BlowUp { step, reason },
                    other => other,
                })?;
            }
            Kind::Dynamics(d) => {
                let (next, report) = d.stepper.advance(&d.state, step)?;
                d.state = next;
                d.last_newton = report.newton_iterations;
                d.dg = report.dg_buoyancy;
            }
        }
        self.step = step;
        Ok(())
    }

    /// Diagnostics of the current state. The advection test has no momentum: its
    /// mass is `int h_bar`, energy and vorticity are written as zero.
    pub fn record(&self) -> DiagnosticsRecord<T> {
        let (mass, total_s, energy, tracer_variance, vorticity, newton) = match &self.kind {
            Kind::Advection(a) => (
                a.hbar.iter().zip(a.transport.node_weights()).map(|(h, w)| *h * w).sum(),
                a.transport.total(&a.s, &a.hbar),
                T::zero(),
                a.transport.variance(&a.s, &a.hbar),
                T::zero(),
                0,
            ),
            Kind::Dynamics(d) => {
                let [m, s, e, v, w] = d.integrals.evaluate(self.config.hierarchy.finest(), &d.state);
                (m, s, e, v, w, d.last_newton)
            }
        };
        DiagnosticsRecord {
            step: self.step,
            time: self.time(),
            mass,
            total_s,
            energy,
            tracer_variance,
            vorticity,
            newton_iterations: newton,
        }
    }

    /// Errors against the initial condition: the L2 error of the tracer for the
    /// advection test, or the distances of `u`, `h`, `S` and `s` from the
    /// initial discrete state for the dynamics.
    pub fn errors(&self) -> FieldErrors<T> {
        match &self.kind {
            Kind::Advection(a) => FieldErrors {
                names: vec!["s"],
                values: vec![a.transport.l2_error(&a.s, &a.s0)],
            },
            Kind::Dynamics(d) => {
                let fine = self.config.hierarchy.finest();
                let (st, init) = (&d.state, &d.initial);
                FieldErrors {
                    names: vec!["u", "h", "S", "s"],
                    values: vec![
                        l2_distance_w1l(fine, &st.u, &init.u),
                        l2_distance_cells(fine, &st.h, &init.h),
                        l2_distance_cells(fine, &st.s, &init.s),
                        l2_distance_cells(fine, &st.buoyancy(), &init.buoyancy()),
                    ],
                }
            }
        }
    }

    /// Field snapshots of the current state.
    pub fn snapshots(&self) -> Vec<Snapshot<T>> {
        let hier = &self.config.hierarchy;
        let fine = hier.finest();
        let time = self.time();
        let low = |field: &str, values: Vec<T>| Snapshot {
            nx: fine.nx,
            ny: fine.ny,
            level: hier.finest_index(),
            space: SpaceKind::W2L,
            field: field.to_owned(),
            time,
            values,
        };
        // collocated nodes form a tensor grid with the fine level's shape
        let high = |colloc: &Collocation, s: &[T]| Snapshot {
            nx: fine.nx,
            ny: fine.ny,
            level: hier.dg_level_index.expect("resolved configs have a DG level"),
            space: SpaceKind::W2H,
            field: "s".to_owned(),
            time,
            values: colloc.to_fine(s),
        };
        match &self.kind {
            Kind::Advection(a) => vec![high(&a.colloc, &a.s)],
            Kind::Dynamics(d) => {
                let mut out = vec![
                    low("h", d.state.h.clone()),
                    low("S", d.state.s.clone()),
                    low("s", d.state.buoyancy()),
                ];
                if let (Some(c), Some(s)) = (d.stepper.collocation(), &d.dg) {
                    out.push(high(c, s));
                }
                out
            }
        }
    }
}

/// Outcome of a run.
#[derive(Debug)]
pub struct RunOutcome<T> {
    pub records: Vec<DiagnosticsRecord<T>>,
    pub errors: FieldErrors<T>,
    /// The error that stopped the run early, if any.
    pub failure: Option<TswError>,
}

/// Relative drifts of the conserved quantities between the first and last record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub preset: String,
    pub scheme: String,
    pub resolution: usize,
    pub dt: f64,
    pub steps_completed: usize,
    pub final_time: f64,
    pub mass_drift: f64,
    pub total_s_drift: f64,
    pub energy_drift: f64,
    pub variance_change: f64,
    pub max_abs_vorticity: f64,
    pub error_names: Vec<String>,
    pub errors: Vec<f64>,
    pub failure: Option<String>,
}

/// `(x - x0) / |x0|`, or the plain difference when `x0` vanishes.
pub fn relative_change(x0: f64, x: f64) -> f64 {
    if x0 != 0.0 {
        (x - x0) / x0.abs()
    } else {
        x - x0
    }
}

impl<T: Real> RunOutcome<T> {
    pub fn summary(&self, config: &ResolvedConfig<T>) -> RunSummary {
        let first = self.records.first();
        let last = self.records.last();
        let drift = |f: fn(&DiagnosticsRecord<T>) -> T| match (first, last) {
            (Some(a), Some(b)) => relative_change(f(a).to_f64_lossy(), f(b).to_f64_lossy()),
            _ => f64::NAN,
        };
        RunSummary {
            preset: config.preset.to_string(),
            scheme: if config.preset.is_dynamic() {
                config.scheme.to_string()
            } else {
                format!("dg-alpha-{}", config.alpha)
            },
            resolution: config.resolution,
            dt: config.dt.to_f64_lossy(),
            steps_completed: last.map_or(0, |r| r.step),
            final_time: last.map_or(0.0, |r| r.time.to_f64_lossy()),
            mass_drift: drift(|r| r.mass),
            total_s_drift: drift(|r| r.total_s),
            energy_drift: drift(|r| r.energy),
            variance_change: drift(|r| r.tracer_variance),
            max_abs_vorticity: self
                .records
                .iter()
                .map(|r| r.vorticity.to_f64_lossy().abs())
                .fold(0.0, f64::max),
            error_names: self.errors.names.iter().map(|s| s.to_string()).collect(),
            errors: self.errors.values.iter().map(|v| v.to_f64_lossy()).collect(),
            failure: self.failure.as_ref().map(|e| e.to_string()),
        }
    }
}

/// Writes the CSV header and one flushed row per step.
pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| TswError::io(path, e))?;
        let mut w = Self {
            path: path.to_owned(),
            out: BufWriter::new(file),
        };
        w.line(CSV_HEADER)?;
        Ok(w)
    }

    pub fn write<T: Real>(&mut self, record: &DiagnosticsRecord<T>) -> Result<()> {
        self.line(&record.csv_row())
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| TswError::io(&self.path, e))
    }
}

fn write_snapshots<T: Real>(dir: &Path, sim: &Simulation<T>) -> Result<()> {
    for snap in sim.snapshots() {
        let name = format!("snap_{:06}_{}_{}.txt", sim.step_index(), snap.space, snap.field);
        snap.write(&dir.join(name))?;
    }
    Ok(())
}

/// Runs a configuration to completion, writing `diagnostics.csv`, snapshots and
/// `summary.toml` into `out` when given. A blow-up ends the run early with the
/// diagnostics up to the last good step kept; it is reported in `failure`.
pub fn run<T: Real>(config: ResolvedConfig<T>, out: Option<&Path>) -> Result<RunOutcome<T>> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| TswError::io(dir, e))?;
    }
    let mut csv = out.map(|d| CsvWriter::create(&d.join("diagnostics.csv"))).transpose()?;
    let mut sim = Simulation::new(config)?;
    let mut records = Vec::with_capacity(sim.config.steps + 1);
    let mut emit = |sim: &Simulation<T>, records: &mut Vec<DiagnosticsRecord<T>>| -> Result<()> {
        let rec = sim.record();
        if let Some(w) = csv.as_mut() {
            w.write(&rec)?;
        }
        records.push(rec);
        if let (Some(dir), Some(k)) = (out, sim.config.snapshots) {
            if sim.step_index() % k == 0 || sim.is_finished() {
                write_snapshots(dir, sim)?;
            }
        }
        Ok(())
    };
    emit(&sim, &mut records)?;
    let mut failure = None;
    while !sim.is_finished() {
        if let Err(e) = sim.advance() {
            failure = Some(e);
            break;
        }
        let rec = sim.record();
        if !rec.is_finite() {
            failure = Some(TswError::BlowUp {
                step: sim.step_index(),
                reason: "non-finite diagnostics".into(),
            });
            break;
        }
        emit(&sim, &mut records)?;
    }
    let outcome = RunOutcome {
        records,
        errors: sim.errors(),
        failure,
    };
    if let Some(dir) = out {
        let summary = outcome.summary(&sim.config);
        let text = toml::to_string(&summary).map_err(|e| TswError::Config(format!("cannot serialise summary: {e}")))?;
        let path = dir.join("summary.toml");
        fs::write(&path, text).map_err(|e| TswError::io(&path, e))?;
    }
    Ok(outcome)
}

/// One row of a convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub resolution: usize,
    /// Fine cell width.
    pub dx: f64,
    pub dt: f64,
    pub errors: Vec<f64>,
}

/// Errors at several resolutions and the fitted orders per field.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable {
    pub names: Vec<&'static str>,
    pub rows: Vec<ConvergenceRow>,
    pub orders: Vec<Order>,
}

impl ConvergenceTable {
    /// Orders between successive rows for field `k`.
    pub fn pairwise_orders(&self, k: usize) -> Vec<Result<Order>> {
        self.rows
            .windows(2)
            .map(|w| observed_order(&[w[0].errors[k], w[1].errors[k]], &[w[0].dx, w[1].dx]))
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:>10} {:>12} {:>12}", "resolution", "dx", "dt");
        for n in &self.names {
            s.push_str(&format!(" {:>14} {:>8}", format!("err_{n}"), "order"));
        }
        s.push('\n');
        for (r, row) in self.rows.iter().enumerate() {
            s.push_str(&format!("{:>10} {:>12.5e} {:>12.5e}", row.resolution, row.dx, row.dt));
            for (k, e) in row.errors.iter().enumerate() {
                let order = if r == 0 {
                    "-".to_owned()
                } else {
                    match &self.pairwise_orders(k)[r - 1] {
                        Ok(o) => o.to_string(),
                        Err(_) => "n/a".to_owned(),
                    }
                };
                s.push_str(&format!(" {e:>14.6e} {order:>8}"));
            }
            s.push('\n');
        }
        s.push_str("least squares order:");
        for (n, o) in self.names.iter().zip(&self.orders) {
            s.push_str(&format!(" {n}={o}"));
        }
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("resolution,dx,dt");
        for n in &self.names {
            s.push_str(&format!(",err_{n}"));
        }
        s.push('\n');
        for row in &self.rows {
            s.push_str(&format!("{},{:e},{:e}", row.resolution, row.dx, row.dt));
            for e in &row.errors {
                s.push_str(&format!(",{e:e}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Runs `base` at every resolution with the preset time step for that
/// resolution and fits the observed orders.
pub fn convergence<T: Real>(base: &RunConfig, resolutions: &[usize]) -> Result<ConvergenceTable> {
    if !base.preset.is_dynamic() || base.preset == ExperimentPreset::Balance {
        if resolutions.len() < 2 {
            return Err(TswError::Config("a convergence study needs at least two resolutions".into()));
        }
    } else {
        return Err(TswError::Config(format!(
            "the {} preset has no reference solution for a convergence study",
            base.preset
        )));
    }
    let mut rows = Vec::with_capacity(resolutions.len());
    let mut names = Vec::new();
    for &n in resolutions {
        let cfg = RunConfig {
            resolution: Some(n),
            dt: None,
            out: None,
            snapshots: None,
            ..base.clone()
        };
        let resolved = cfg.resolve::<T>()?;
        let dx = resolved.preset.domain::<f64>().lx / resolved.hierarchy.finest().nx as f64;
        let dt = resolved.dt.to_f64_lossy();
        let outcome = run(resolved, None)?;
        if let Some(e) = outcome.failure {
            return Err(e);
        }
        names = outcome.errors.names.clone();
        rows.push(ConvergenceRow {
            resolution: n,
            dx,
            dt,
            errors: outcome.errors.values.iter().map(|v| v.to_f64_lossy()).collect(),
        });
    }
    let dxs: Vec<f64> = rows.iter().map(|r| r.dx).collect();
    let orders = (0..names.len())
        .map(|k| {
            let errs: Vec<f64> = rows.iter().map(|r| r.errors[k]).collect();
            observed_order(&errs, &dxs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceTable { names, rows, orders })
}
