//! Experiment layer: exact solutions, run configurations, error metrics and
//! refinement studies.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, fit_order, mu, param_set_for, Conversion};
use crate::error::{Error, Result};
use crate::io;
use crate::mesh::{
    build_d2t4_equilateral_with, build_d2t4_periodic, build_d2t7_periodic, build_d2t7_triangle, Lattice, SchemeKind,
    Triangle, WallPlacement,
};
use crate::scheme::{BoundarySpec, FieldState, SchemeParams, Stepper};
use crate::spectral::{self, Irrep, PipeResult, SpectrumReport};

/// Side of the triangle on which the Dirichlet spectrum is m^2 + m n + n^2.
pub const MODE_SIDE: f64 = 4.0 * PI / 3.0;

/// Side of the harmonic test triangle: the one inscribed in the unit circle.
pub const HARMONIC_SIDE: f64 = 1.732_050_807_568_877_2;

/// Final time of the mode decay runs.
pub const DECAY_TIME: f64 = 4.0 / 3.0;

/// Boundary data of the harmonic test.
pub fn exact_harmonic(p: [f64; 2]) -> f64 {
    p[0] * p[0] - p[1] * p[1]
}

/// Symmetric Dirichlet eigenfunction (m, n) of the triangle `Triangle::pointing_right(h)`.
#[derive(Clone, Debug)]
pub struct TriangleMode {
    pub m: u32,
    pub n: u32,
    pub side: f64,
    domain: Triangle,
    /// Wave vectors of the six group images, with the sign of each term.
    waves: Vec<([f64; 2], f64)>,
    scale: f64,
}

impl TriangleMode {
    pub fn new(m: u32, n: u32, side: f64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter(format!("mode ({m}, {n}): indices must be >= 1")));
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::InvalidParameter(format!("side {side}")));
        }
        let b = 4.0 * PI / (3.0 * side);
        // reciprocal vectors of the reference triangle (edges at 0 and 60 degrees),
        // rotated by +30 degrees into the lattice frame
        let dir = |deg: f64| [b * deg.to_radians().cos(), b * deg.to_radians().sin()];
        let (b1, b2) = (dir(90.0), dir(150.0));
        let k = [m as f64 * b1[0] + n as f64 * b2[0], m as f64 * b1[1] + n as f64 * b2[1]];
        let mut waves = Vec::with_capacity(6);
        for refl in [false, true] {
            for r in 0..3 {
                let a = r as f64 * 2.0 * PI / 3.0;
                // reflection in the line through the origin at 30 degrees (a triangle edge)
                let v = if refl {
                    let (c, s) = ((PI / 3.0).cos(), (PI / 3.0).sin());
                    [c * k[0] + s * k[1], s * k[0] - c * k[1]]
                } else {
                    k
                };
                let w = [a.cos() * v[0] - a.sin() * v[1], a.sin() * v[0] + a.cos() * v[1]];
                waves.push((w, if refl { -1.0 } else { 1.0 }));
            }
        }
        let mut mode = TriangleMode { m, n, side, domain: Triangle::pointing_right(side), waves, scale: 1.0 };
        // normalize to max 1 by sampling, then a local golden refinement around the best sample
        let res = 240;
        let [a, bv, c] = mode.domain.vertices;
        let mut best = (0.0f64, [0.0; 2]);
        for i in 0..=res {
            for j in 0..=res - i {
                let (s, t) = (i as f64 / res as f64, j as f64 / res as f64);
                let p = [a[0] + s * (bv[0] - a[0]) + t * (c[0] - a[0]), a[1] + s * (bv[1] - a[1]) + t * (c[1] - a[1])];
                let v = mode.raw(p).abs();
                if v > best.0 {
                    best = (v, p);
                }
            }
        }
        let mut h = side / res as f64;
        let mut p = best.1;
        while h > 1e-12 * side {
            let mut moved = false;
            for d in [[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]] {
                let t = [p[0] + d[0], p[1] + d[1]];
                let v = mode.raw(t).abs();
                if mode.domain.contains(t, 0.0) && v > best.0 {
                    best = (v, t);
                    p = t;
                    moved = true;
                }
            }
            if !moved {
                h *= 0.5;
            }
        }
        if best.0 <= 0.0 {
            return Err(Error::InvalidParameter(format!("mode ({m}, {n}) vanishes identically")));
        }
        mode.scale = 1.0 / best.0;
        Ok(mode)
    }

    fn raw(&self, p: [f64; 2]) -> f64 {
        self.waves.iter().map(|(w, s)| s * (w[0] * p[0] + w[1] * p[1]).sin()).sum()
    }

    /// Continuum eigenvalue of -Laplacian.
    pub fn eigenvalue(&self) -> f64 {
        let (m, n) = (self.m as f64, self.n as f64);
        16.0 * PI * PI / (9.0 * self.side * self.side) * (m * m + m * n + n * n)
    }

    pub fn eval(&self, p: [f64; 2]) -> Result<f64> {
        if !self.domain.contains(p, 1e-12) {
            return Err(Error::Geometry(format!("point ({}, {}) outside the triangle", p[0], p[1])));
        }
        Ok(self.scale * self.raw(p))
    }

    /// Value without the domain check (zero on the walls, odd continuation outside).
    pub fn eval_unchecked(&self, p: [f64; 2]) -> f64 {
        self.scale * self.raw(p)
    }

    pub fn gradient(&self, p: [f64; 2]) -> [f64; 2] {
        self.waves.iter().fold([0.0; 2], |g, (w, s)| {
            let c = self.scale * s * (w[0] * p[0] + w[1] * p[1]).cos();
            [g[0] + c * w[0], g[1] + c * w[1]]
        })
    }
}

pub fn exact_triangle_mode(p: [f64; 2], m: u32, n: u32, side: f64) -> Result<f64> {
    TriangleMode::new(m, n, side)?.eval(p)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ErrorReport {
    pub linf: f64,
    /// Root mean square over nodes.
    pub l2: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub error_field: Vec<f64>,
    /// (h, error) rows sorted by h.
    pub convergence_table: Vec<(f64, f64)>,
    pub measured_order: Option<f64>,
}

impl ErrorReport {
    pub fn compare(numerical: &[f64], exact: &[f64]) -> Self {
        let error_field: Vec<f64> = numerical.iter().zip(exact).map(|(a, b)| a - b).collect();
        let linf = error_field.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let l2 = (error_field.iter().map(|e| e * e).sum::<f64>() / error_field.len().max(1) as f64).sqrt();
        ErrorReport { linf, l2, error_field, convergence_table: vec![], measured_order: None }
    }

    pub fn from_table(mut rows: Vec<(f64, f64)>, min_ratio: f64) -> Result<Self> {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let measured_order = Some(fit_order(&rows, min_ratio)?);
        let last = rows.first().map_or(0.0, |r| r.1);
        Ok(ErrorReport { linf: last, l2: f64::NAN, error_field: vec![], convergence_table: rows, measured_order })
    }
}

/// Scale `numerical` by the least-squares factor that best matches `exact`, then compare.
pub fn aligned_error(numerical: &[f64], exact: &[f64]) -> ErrorReport {
    let num: f64 = numerical.iter().zip(exact).map(|(a, b)| a * b).sum();
    let den: f64 = numerical.iter().map(|a| a * a).sum();
    let alpha = if den > 0.0 { num / den } else { 0.0 };
    let scaled: Vec<f64> = numerical.iter().map(|a| alpha * a).collect();
    ErrorReport::compare(&scaled, exact)
}

/// Initial distribution for runs that start from a nonzero field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Equilibrium,
    /// Equilibrium corrected by the first-order velocity moments.
    FirstOrder,
}

impl InitKind {
    /// First-order start for D2T7; D2T4 keeps the plain equilibrium.
    pub fn default_for(scheme: SchemeKind) -> Self {
        match scheme {
            SchemeKind::D2T7 => InitKind::FirstOrder,
            SchemeKind::D2T4 => InitKind::Equilibrium,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    Harmonic,
    Decay,
    Modes,
    Pipe,
    /// One-point analysis at the pipe wave number, for cross-checking `Pipe`.
    Dispersion,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// Nodes (D2T7) or triangles (D2T4) per triangle edge.
    #[serde(default = "default_n_edge")]
    pub n_edge: usize,
    /// Triangle side; defaults to HARMONIC_SIDE for the harmonic test and MODE_SIDE otherwise.
    #[serde(default)]
    pub side: Option<f64>,
    #[serde(default = "default_nx")]
    pub nx: usize,
    #[serde(default = "default_ny")]
    pub ny: usize,
    #[serde(default)]
    pub wall: WallPlacement,
}

fn default_n_edge() -> usize {
    61
}
fn default_nx() -> usize {
    96
}
fn default_ny() -> usize {
    4
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec { n_edge: 61, side: None, nx: 96, ny: 4, wall: WallPlacement::Edge }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSpec {
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default)]
    pub steps: Option<u64>,
    /// Relative steady-state threshold on max |rho(t + dt) - rho(t)|.
    #[serde(default = "default_steady_tol")]
    pub steady_tol: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    /// Adjust zeta so that t_final is a whole number of steps; otherwise reject.
    #[serde(default = "default_true")]
    pub adjust_zeta: bool,
}

fn default_steady_tol() -> f64 {
    1e-12
}
fn default_max_steps() -> u64 {
    2_000_000
}
fn default_true() -> bool {
    true
}

impl Default for StopSpec {
    fn default() -> Self {
        StopSpec { t_final: None, steps: None, steady_tol: 1e-12, max_steps: 2_000_000, adjust_zeta: true }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Write field snapshots every N steps (0 or absent: only the final field).
    #[serde(default)]
    pub dump_every: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: Scenario,
    pub scheme: SchemeKind,
    /// Built-in set name ("order4" or "d2t7-order4").
    #[serde(default)]
    pub param_set: Option<String>,
    /// Explicit parameters in lattice units; dx is replaced by the mesh spacing.
    #[serde(default)]
    pub params: Option<SchemeParams>,
    #[serde(default)]
    pub zeta: Option<f64>,
    #[serde(default)]
    pub domain: DomainSpec,
    #[serde(default)]
    pub stop: StopSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub conversion: Conversion,
    /// Defaults to [`InitKind::default_for`] the scheme.
    #[serde(default)]
    pub init: Option<InitKind>,
    /// Number of eigenpairs for the spectral scenarios.
    #[serde(default)]
    pub nev: Option<usize>,
    /// Mode numbers l, compared against the exact (l - 1, l - 1) mode.
    #[serde(default)]
    pub modes: Vec<u32>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, scheme: SchemeKind, set: &str) -> Self {
        ExperimentConfig {
            scenario,
            scheme,
            param_set: Some(set.to_string()),
            params: None,
            zeta: None,
            domain: DomainSpec::default(),
            stop: StopSpec::default(),
            output: OutputSpec::default(),
            conversion: Conversion::Log,
            init: None,
            nev: None,
            modes: vec![],
            tol: None,
            seed: 1,
        }
    }

    pub fn with_n_edge(mut self, n: usize) -> Self {
        self.domain.n_edge = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.param_set.is_some() == self.params.is_some() {
            return Err(Error::Config("give exactly one of param_set and params".into()));
        }
        if let Some(p) = &self.params {
            if p.scheme != self.scheme {
                return Err(Error::Config(format!("explicit {} parameters for scheme {}", p.scheme, self.scheme)));
            }
        }
        if self.stop.t_final.is_some() && self.stop.steps.is_some() {
            return Err(Error::Config("give at most one of t_final and steps".into()));
        }
        if let Some(t) = self.stop.t_final {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("t_final = {t}")));
            }
        }
        if !(self.stop.steady_tol > 0.0) || self.stop.max_steps == 0 {
            return Err(Error::Config("steady_tol and max_steps must be positive".into()));
        }
        if let Some(z) = self.zeta {
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::Config(format!("zeta = {z}")));
            }
        }
        if self.domain.n_edge < 2 || self.domain.nx == 0 || self.domain.ny == 0 {
            return Err(Error::Config("mesh sizes too small".into()));
        }
        if let Some(s) = self.domain.side {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("side = {s}")));
            }
        }
        if self.modes.contains(&0) || self.modes.contains(&1) {
            return Err(Error::Config("mode numbers start at 2 (the (1, 1) mode)".into()));
        }
        Ok(())
    }

    /// Parameters in lattice units (dx = 1) with the zeta override applied.
    pub fn base_params(&self) -> Result<SchemeParams> {
        let mut p = match (&self.param_set, &self.params) {
            (Some(name), None) => param_set_for(self.scheme, name)?.params,
            (None, Some(p)) => p.clone(),
            _ => return Err(Error::Config("give exactly one of param_set and params".into())),
        };
        if let Some(z) = self.zeta {
            p.zeta = z;
        }
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(p)
    }

    fn side(&self, default: f64) -> f64 {
        self.domain.side.unwrap_or(default)
    }
}

/// Mesh spacing for a triangle of side `side` with `n_edge` edge nodes or cells.
pub fn triangle_dx(scheme: SchemeKind, n_edge: usize, side: f64) -> f64 {
    match scheme {
        SchemeKind::D2T7 => side / (n_edge as f64 + 0.5),
        SchemeKind::D2T4 => side / (n_edge as f64 * 3f64.sqrt()),
    }
}

pub fn build_triangle(scheme: SchemeKind, n_edge: usize, side: f64, wall: WallPlacement) -> Result<Lattice> {
    let dx = triangle_dx(scheme, n_edge, side);
    match scheme {
        SchemeKind::D2T7 => build_d2t7_triangle(n_edge, dx),
        SchemeKind::D2T4 => build_d2t4_equilateral_with(n_edge, dx, wall),
    }
}

pub fn build_periodic(scheme: SchemeKind, nx: usize, ny: usize, dx: f64) -> Result<Lattice> {
    match scheme {
        SchemeKind::D2T7 => build_d2t7_periodic(nx, ny, dx),
        SchemeKind::D2T4 => build_d2t4_periodic(nx, ny, dx),
    }
}

/// Node at the triangle centroid, or the nearest one.
pub fn center_node(lattice: &Lattice) -> usize {
    let g = lattice.domain.map_or([0.0, 0.0], |d| d.centroid());
    lattice.nearest_node(g)
}

fn dump(st: &Stepper, state: &FieldState, dir: &Path, tag: &str) -> Result<()> {
    let m = st.moments(state);
    io::write(dir.join(format!("field_{tag}.csv")), &io::field_csv(st.lattice, &m))?;
    io::write(dir.join(format!("field_{tag}.vtk")), &io::field_vtk(st.lattice, &format!("field {tag}"), &m))
}

fn maybe_dump(cfg: &ExperimentConfig, st: &Stepper, state: &FieldState) -> Result<()> {
    if let (Some(dir), Some(every)) = (&cfg.output.dir, cfg.output.dump_every) {
        if every > 0 && state.step_count % every == 0 {
            dump(st, state, dir, &format!("{:08}", state.step_count))?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct HarmonicReport {
    pub config: ExperimentConfig,
    pub params: SchemeParams,
    pub nodes: usize,
    pub steps: u64,
    pub residual: f64,
    pub error: ErrorReport,
    #[serde(skip)]
    pub density: Vec<f64>,
    pub seconds: f64,
}

/// March from rho = 0 with x^2 - y^2 wall data until the field stops changing.
pub fn run_harmonic(cfg: &ExperimentConfig) -> Result<HarmonicReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let side = cfg.side(HARMONIC_SIDE);
    let lattice = build_triangle(cfg.scheme, cfg.domain.n_edge, side, cfg.domain.wall)?;
    let params = cfg.base_params()?.with_dx(lattice.dx);
    let st = Stepper::new(&lattice, &params, BoundarySpec::dirichlet(|p, _| exact_harmonic(p)))?;
    let mut state = st.equilibrium_state(|_| 0.0);
    let mut prev = st.density(&state);
    let mut residual = f64::INFINITY;
    let limit = cfg.stop.steps.unwrap_or(cfg.stop.max_steps);
    while state.step_count < limit {
        st.step(&mut state)?;
        maybe_dump(cfg, &st, &state)?;
        let rho = st.density(&state);
        let scale = rho.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        residual = rho.iter().zip(&prev).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prev = rho;
        if cfg.stop.steps.is_none() && residual <= cfg.stop.steady_tol * scale {
            break;
        }
    }
    if cfg.stop.steps.is_none() && state.step_count >= limit {
        return Err(Error::Timeout { steps: state.step_count, residual });
    }
    let exact: Vec<f64> = lattice.positions.iter().map(|&p| exact_harmonic(p)).collect();
    let error = ErrorReport::compare(&prev, &exact);
    if let Some(dir) = &cfg.output.dir {
        dump(&st, &state, dir, "final")?;
    }
    Ok(HarmonicReport {
        config: cfg.clone(),
        params,
        nodes: lattice.len(),
        steps: state.step_count,
        residual,
        error,
        density: prev,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub config: ExperimentConfig,
    pub params: SchemeParams,
    pub nodes: usize,
    pub steps: u64,
    pub dt: f64,
    pub t_final: f64,
    pub center_node: usize,
    /// (t, rho) at the center node.
    pub center_series: Vec<(f64, f64)>,
    pub fitted_rate: f64,
    /// mu * Lambda_11
    pub expected_rate: f64,
    pub rate_rel_error: f64,
    pub error: ErrorReport,
    pub seconds: f64,
}

/// Number of steps and adjusted zeta so that `t_final` is reached exactly.
pub fn steps_for(t_final: f64, dx: f64, zeta: f64, adjust: bool) -> Result<(u64, f64)> {
    let exact = t_final * zeta / (dx * dx);
    let n = exact.round().max(1.0);
    if adjust {
        return Ok((n as u64, n * dx * dx / t_final));
    }
    if (exact - n).abs() > 1e-12 * exact.max(1.0) {
        return Err(Error::Config(format!("t_final / dt = {exact} is not an integer")));
    }
    Ok((n as u64, zeta))
}

/// Free decay of the fundamental mode under homogeneous Dirichlet walls.
pub fn run_mode_decay(cfg: &ExperimentConfig) -> Result<DecayReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let side = cfg.side(MODE_SIDE);
    let lattice = build_triangle(cfg.scheme, cfg.domain.n_edge, side, cfg.domain.wall)?;
    let base = cfg.base_params()?;
    let t_final = cfg.stop.t_final.unwrap_or(DECAY_TIME);
    let (steps, zeta) = match cfg.stop.steps {
        Some(n) => (n, base.zeta),
        None => steps_for(t_final, lattice.dx, base.zeta, cfg.stop.adjust_zeta)?,
    };
    let params = base.with_zeta(zeta).with_dx(lattice.dx);
    let mode = TriangleMode::new(1, 1, side)?;
    let st = Stepper::new(&lattice, &params, BoundarySpec::homogeneous())?;
    let mut state = match cfg.init.unwrap_or(InitKind::default_for(cfg.scheme)) {
        InitKind::Equilibrium => st.equilibrium_state(|p| mode.eval_unchecked(p)),
        InitKind::FirstOrder => st.first_order_state(|p| mode.eval_unchecked(p), |p| mode.gradient(p)),
    };
    let c = center_node(&lattice);
    let mut series = vec![(0.0, st.density(&state)[c])];
    for _ in 0..steps {
        st.step(&mut state)?;
        maybe_dump(cfg, &st, &state)?;
        let rho_c: f64 = state.f[c * lattice.q..(c + 1) * lattice.q].iter().sum();
        series.push((state.t, rho_c));
    }
    let t_end = state.t;
    let expected_rate = mu(&params) * mode.eigenvalue();
    // log-linear fit over the second half, away from the initial layer
    let tail: Vec<(f64, f64)> = series.iter().filter(|(t, r)| *t >= 0.5 * t_end && *r > 0.0).copied().collect();
    let fitted_rate = if tail.len() >= 2 {
        let n = tail.len() as f64;
        let mt = tail.iter().map(|p| p.0).sum::<f64>() / n;
        let my = tail.iter().map(|p| p.1.ln()).sum::<f64>() / n;
        let sty: f64 = tail.iter().map(|p| (p.0 - mt) * (p.1.ln() - my)).sum();
        let stt: f64 = tail.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
        -sty / stt
    } else {
        f64::NAN
    };
    let decay = (-expected_rate * t_end).exp();
    let exact: Vec<f64> = lattice.positions.iter().map(|&p| decay * mode.eval_unchecked(p)).collect();
    let error = ErrorReport::compare(&st.density(&state), &exact);
    if let Some(dir) = &cfg.output.dir {
        dump(&st, &state, dir, "final")?;
    }
    Ok(DecayReport {
        config: cfg.clone(),
        params,
        nodes: lattice.len(),
        steps,
        dt: st.dt(),
        t_final: t_end,
        center_node: c,
        center_series: series,
        fitted_rate,
        expected_rate,
        rate_rel_error: (fitted_rate - expected_rate).abs() / expected_rate,
        error,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectedMode {
    pub ell: u32,
    /// Exact Lambda of the (l - 1, l - 1) mode in the run's units.
    pub exact: f64,
    pub lambda_num: f64,
    pub rel_error: f64,
    /// Position in the symmetric-class spectrum (1-based).
    pub index: usize,
    pub residual: f64,
    pub mode_error: ErrorReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModesReport {
    pub config: ExperimentConfig,
    pub params: SchemeParams,
    pub nodes: usize,
    pub spectrum: SpectrumReport,
    pub selected: Vec<SelectedMode>,
    #[serde(skip)]
    pub lattice: Lattice,
    pub seconds: f64,
}

/// Leading symmetric Dirichlet modes, matched against the exact (l-1, l-1) modes.
pub fn run_dirichlet_modes(cfg: &ExperimentConfig) -> Result<ModesReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let side = cfg.side(MODE_SIDE);
    let lattice = build_triangle(cfg.scheme, cfg.domain.n_edge, side, cfg.domain.wall)?;
    let params = cfg.base_params()?.with_dx(lattice.dx);
    let ells: Vec<u32> = if cfg.modes.is_empty() { vec![3, 5, 7] } else { cfg.modes.clone() };
    let top = *ells.iter().max().unwrap_or(&3);
    let nev = cfg.nev.unwrap_or_else(|| symmetric_modes_below(3.0 * ((top - 1) * (top - 1)) as f64) + 1);
    let mut spectrum =
        dirichlet_modes_with(&lattice, &params, nev, Some(Irrep::Symmetric), cfg.conversion, cfg.tol, cfg.seed)?;
    // Lambda in units where the (m, n) eigenvalue is m^2 + m n + n^2
    let unit = 16.0 * PI * PI / (9.0 * side * side);
    for d in spectrum.derived.iter_mut() {
        *d /= unit;
    }
    let mut selected = Vec::new();
    for &ell in &ells {
        let target = 3.0 * ((ell - 1) * (ell - 1)) as f64;
        let (index, &lambda_num) = spectrum
            .derived
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
            .ok_or_else(|| Error::NoConvergence { restarts: 0, best: vec![] })?;
        let mode = TriangleMode::new(ell - 1, ell - 1, side)?;
        let exact: Vec<f64> = lattice.positions.iter().map(|&p| mode.eval_unchecked(p)).collect();
        selected.push(SelectedMode {
            ell,
            exact: target,
            lambda_num,
            rel_error: (lambda_num - target).abs() / target,
            index: index + 1,
            residual: spectrum.residuals[index],
            mode_error: aligned_error(&spectrum.modes[index], &exact),
        });
    }
    if let Some(dir) = &cfg.output.dir {
        write_spectrum(dir, &lattice, &spectrum)?;
    }
    Ok(ModesReport {
        config: cfg.clone(),
        params,
        nodes: lattice.len(),
        spectrum,
        selected,
        lattice,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Number of symmetric-class continuum modes with m^2 + m n + n^2 < `bound`.
pub fn symmetric_modes_below(bound: f64) -> usize {
    // (m, m) modes, plus one symmetric mode for each m > n with m = n (mod 3)
    let mut count = 0;
    for n in 1u32.. {
        if (3 * n * n) as f64 >= bound {
            break;
        }
        for m in n.. {
            let l = (m * m + m * n + n * n) as f64;
            if l >= bound {
                break;
            }
            if (m - n) % 3 == 0 {
                count += 1;
            }
        }
    }
    count
}

fn dirichlet_modes_with(
    lattice: &Lattice,
    params: &SchemeParams,
    nev: usize,
    irrep: Option<Irrep>,
    conv: Conversion,
    tol: Option<f64>,
    seed: u64,
) -> Result<SpectrumReport> {
    let mut opts = spectral::ArnoldiOptions::new(nev);
    opts.seed = seed;
    if let Some(t) = tol {
        opts.tol = t;
    }
    spectral::dirichlet_modes_opts(lattice, params, irrep, conv, &opts)
}

pub fn write_spectrum(dir: &Path, lattice: &Lattice, s: &SpectrumReport) -> Result<()> {
    io::write(dir.join("eigenvalues.csv"), &io::eigenvalues_csv(&s.eigenvalues, &s.derived, &s.residuals))?;
    for (k, m) in s.modes.iter().enumerate() {
        let title = format!("mode {} lambda {}", k + 1, s.eigenvalues[k]);
        io::write(dir.join(format!("mode_{}.vtk", k + 1)), &io::vtk_polydata(lattice, &title, &[("rho", m)]))?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct PipeReport {
    pub config: ExperimentConfig,
    pub params: SchemeParams,
    pub nodes: usize,
    pub result: PipeResult,
    pub seconds: f64,
}

/// Periodic pipe or rectangle: diffusivity from the slowest decaying mode.
pub fn run_pipe(cfg: &ExperimentConfig) -> Result<PipeReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let params = cfg.base_params()?;
    let lattice = build_periodic(cfg.scheme, cfg.domain.nx, cfg.domain.ny, params.dx)?;
    let mut opts = spectral::ArnoldiOptions::new(cfg.nev.unwrap_or(6));
    opts.seed = cfg.seed;
    opts.tol = cfg.tol.unwrap_or(1e-13);
    let result = spectral::pipe_diffusivity_opts(&lattice, &params, cfg.conversion, &opts)?;
    if let Some(dir) = &cfg.output.dir {
        write_spectrum(dir, &lattice, &result.spectrum)?;
    }
    Ok(PipeReport { config: cfg.clone(), params, nodes: lattice.len(), result, seconds: clock.elapsed().as_secs_f64() })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub size: usize,
    pub h: f64,
    pub error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub scenario: Scenario,
    pub rows: Vec<SweepRow>,
    pub error: ErrorReport,
}

/// Error measure of one run of the configured scenario at `size`, with its h.
pub fn scenario_error(cfg: &ExperimentConfig, size: usize) -> Result<(f64, f64)> {
    let mut c = cfg.clone();
    c.output = OutputSpec::default();
    match cfg.scenario {
        Scenario::Harmonic => {
            c.domain.n_edge = size;
            let r = run_harmonic(&c)?;
            Ok((r.params.dx, r.error.linf))
        }
        Scenario::Decay => {
            c.domain.n_edge = size;
            let r = run_mode_decay(&c)?;
            Ok((r.params.dx, r.error.linf))
        }
        Scenario::Modes => {
            c.domain.n_edge = size;
            let r = run_dirichlet_modes(&c)?;
            Ok((r.params.dx, r.selected[0].rel_error))
        }
        Scenario::Pipe => {
            c.domain.nx = size;
            let r = run_pipe(&c)?;
            Ok((r.result.k, r.result.eps))
        }
        Scenario::Dispersion => {
            c.domain.nx = size;
            let p = c.base_params()?;
            let lattice = build_periodic(c.scheme, c.domain.nx, c.domain.ny, p.dx)?;
            let kv = spectral::smallest_wavevector(&lattice)?;
            let k = kv[0].hypot(kv[1]);
            let theta = kv[1].atan2(kv[0]).to_degrees();
            let pts = analysis::dispersion(&p, &[k], &[theta], c.conversion)?;
            Ok((k, pts[0].eps))
        }
    }
}

/// Run the scenario at each size and fit the error slope against h.
pub fn convergence_sweep(base: &ExperimentConfig, sizes: &[usize]) -> Result<SweepReport> {
    base.validate()?;
    if sizes.len() < 3 {
        return Err(Error::Config(format!("{} sizes; a sweep needs at least 3", sizes.len())));
    }
    let (lo, hi) = (sizes.iter().min().copied().unwrap_or(0), sizes.iter().max().copied().unwrap_or(0));
    if lo == 0 || (hi as f64) < 4.0 * (1.0 - 1e-12) * lo as f64 && base.scenario != Scenario::Modes {
        return Err(Error::Config(format!("sizes span {lo}..{hi}; need a factor of at least 4")));
    }
    let mut rows: Vec<SweepRow> = sizes
        .par_iter()
        .map(|&size| scenario_error(base, size).map(|(h, error)| SweepRow { size, h, error }))
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.size);
    let table: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.error)).collect();
    let error = ErrorReport::from_table(table, 1.0)?;
    Ok(SweepReport { scenario: base.scenario, rows, error })
}
