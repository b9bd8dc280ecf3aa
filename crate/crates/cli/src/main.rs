use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use tri_lbm::analysis::{self, Conversion};
use tri_lbm::basis::{transition_matrices, PolynomialFamily};
use tri_lbm::harness::{self, ExperimentConfig, InitKind, Scenario};
use tri_lbm::mesh::{self, WallPlacement};
use tri_lbm::scheme::collision_matrix;
use tri_lbm::{io, Error, Lattice, Result, SchemeKind};

#[derive(Parser)]
#[command(name = "tri-lbm", version, about = "Triangular lattice Boltzmann schemes for the heat equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a lattice and export it as VTK and JSON.
    Mesh(MeshArgs),
    /// Write the moment, inverse and collision matrices as CSV.
    Matrices(MatricesArgs),
    /// One-point plane-wave analysis over a (k, theta) grid.
    Dispersion(DispersionArgs),
    /// Diffusivity from the slowest mode of a periodic pipe (96 x 4 by default).
    PipeModes(RunArgs),
    /// Same analysis on a periodic rectangle (36 x 52 by default).
    RectModes(RunArgs),
    /// Steady state of the x^2 - y^2 problem on a triangle.
    Harmonic(RunArgs),
    /// Free decay of the fundamental Dirichlet mode.
    Decay(RunArgs),
    /// Leading symmetric Dirichlet eigenmodes of the triangle.
    Modes(RunArgs),
    /// Mesh refinement study of one scenario.
    Sweep(SweepArgs),
    /// Print the built-in parameter sets with their coefficients.
    Tune(TuneArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Triangle,
    Rect,
    Pipe,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Harmonic,
    Decay,
    Modes,
    Pipe,
    Dispersion,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Harmonic => Scenario::Harmonic,
            ScenarioArg::Decay => Scenario::Decay,
            ScenarioArg::Modes => Scenario::Modes,
            ScenarioArg::Pipe => Scenario::Pipe,
            ScenarioArg::Dispersion => Scenario::Dispersion,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Equilibrium,
    FirstOrder,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long)]
    scheme: SchemeKind,
    #[arg(long, value_enum, default_value = "triangle")]
    domain: DomainArg,
    /// Nodes (D2T7) or triangles (D2T4) per edge of the triangle.
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Triangle side.
    #[arg(long, default_value_t = 1.0)]
    side: f64,
    /// Spacing of the periodic domains.
    #[arg(long, default_value_t = 1.0)]
    dx: f64,
    #[arg(long)]
    wall: Option<WallPlacement>,
    /// Random vertex displacement (fraction of dx) applied to a D2T4 triangle.
    #[arg(long)]
    perturb: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatricesArgs {
    #[arg(long)]
    scheme: SchemeKind,
    #[arg(long, default_value = "order2")]
    set: String,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DispersionArgs {
    #[arg(long)]
    scheme: SchemeKind,
    #[arg(long, default_value = "order2")]
    set: String,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    k_min: f64,
    #[arg(long, default_value_t = 1e-1)]
    k_max: f64,
    #[arg(long, default_value_t = 9)]
    nk: usize,
    /// Wave directions in degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
    #[arg(long)]
    conversion: Option<Conversion>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flags shared by the experiment subcommands; each overrides the config file.
#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<SchemeKind>,
    /// Built-in parameter set, e.g. "order4".
    #[arg(long)]
    set: Option<String>,
    #[arg(long)]
    zeta: Option<f64>,
    /// Nodes (D2T7) or triangles (D2T4) per triangle edge.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    side: Option<f64>,
    #[arg(long)]
    wall: Option<WallPlacement>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    steady_tol: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a field snapshot every N steps.
    #[arg(long)]
    dump_every: Option<u64>,
    #[arg(long)]
    conversion: Option<Conversion>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    #[arg(long)]
    nev: Option<usize>,
    /// Mode numbers l >= 2, comma separated.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<u32>>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Mesh sizes (n_edge, or nx for the periodic scenarios), comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    scheme: Option<SchemeKind>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::Io(_)) {
        1
    } else {
        2
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("TRI_LBM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("TRI_LBM_THREADS = '{v}' is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Mesh(a) => mesh_cmd(&a),
        Command::Matrices(a) => matrices_cmd(&a),
        Command::Dispersion(a) => dispersion_cmd(&a),
        Command::PipeModes(a) => {
            let cfg = experiment(&a, Scenario::Pipe, None)?;
            finish(&cfg, &harness::run_pipe(&cfg)?)
        }
        Command::RectModes(a) => {
            let cfg = experiment(&a, Scenario::Pipe, Some((36, 52)))?;
            finish(&cfg, &harness::run_pipe(&cfg)?)
        }
        Command::Harmonic(a) => {
            let cfg = experiment(&a, Scenario::Harmonic, None)?;
            finish(&cfg, &harness::run_harmonic(&cfg)?)
        }
        Command::Decay(a) => {
            let cfg = experiment(&a, Scenario::Decay, None)?;
            finish(&cfg, &harness::run_mode_decay(&cfg)?)
        }
        Command::Modes(a) => {
            let cfg = experiment(&a, Scenario::Modes, None)?;
            finish(&cfg, &harness::run_dirichlet_modes(&cfg)?)
        }
        Command::Sweep(a) => {
            let mut cfg = experiment(&a.run, Scenario::Harmonic, None)?;
            if let Some(s) = a.scenario {
                cfg.scenario = s.into();
            }
            finish(&cfg, &harness::convergence_sweep(&cfg, &a.sizes)?)
        }
        Command::Tune(a) => tune_cmd(&a),
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Config file (if any) with the subcommand's scenario and every given flag applied on top.
fn experiment(a: &RunArgs, scenario: Scenario, periodic: Option<(usize, usize)>) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let mut c = read_config(path)?;
            c.scenario = scenario;
            c
        }
        None => {
            let scheme = a.scheme.ok_or_else(|| Error::Config("--scheme is required without --config".into()))?;
            let mut c = ExperimentConfig::new(scenario, scheme, "order2");
            if let Some((nx, ny)) = periodic {
                c.domain.nx = nx;
                c.domain.ny = ny;
            }
            c
        }
    };
    if let Some(s) = a.scheme {
        cfg.scheme = s;
    }
    if let Some(s) = &a.set {
        cfg.param_set = Some(s.clone());
        cfg.params = None;
    }
    if a.zeta.is_some() {
        cfg.zeta = a.zeta;
    }
    let d = &mut cfg.domain;
    d.n_edge = a.n.unwrap_or(d.n_edge);
    d.nx = a.nx.unwrap_or(d.nx);
    d.ny = a.ny.unwrap_or(d.ny);
    d.wall = a.wall.unwrap_or(d.wall);
    if a.side.is_some() {
        d.side = a.side;
    }
    let s = &mut cfg.stop;
    if a.t_final.is_some() {
        s.t_final = a.t_final;
        s.steps = None;
    }
    if a.steps.is_some() {
        s.steps = a.steps;
        s.t_final = None;
    }
    s.steady_tol = a.steady_tol.unwrap_or(s.steady_tol);
    s.max_steps = a.max_steps.unwrap_or(s.max_steps);
    if a.out.is_some() {
        cfg.output.dir = a.out.clone();
    }
    if a.dump_every.is_some() {
        cfg.output.dump_every = a.dump_every;
    }
    cfg.conversion = a.conversion.unwrap_or(cfg.conversion);
    if let Some(i) = a.init {
        cfg.init = Some(match i {
            InitArg::Equilibrium => InitKind::Equilibrium,
            InitArg::FirstOrder => InitKind::FirstOrder,
        });
    }
    if a.nev.is_some() {
        cfg.nev = a.nev;
    }
    if let Some(m) = &a.modes {
        cfg.modes = m.clone();
    }
    if a.tol.is_some() {
        cfg.tol = a.tol;
    }
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    Ok(cfg)
}

/// Print the report and keep a copy next to the other outputs.
fn finish<T: Serialize>(cfg: &ExperimentConfig, report: &T) -> Result<()> {
    if let Some(dir) = &cfg.output.dir {
        io::write_json(dir.join("summary.json"), report)?;
    }
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(())
}

fn mesh_cmd(a: &MeshArgs) -> Result<()> {
    let wall = a.wall.unwrap_or_default();
    let mut lattice = match a.domain {
        DomainArg::Triangle => harness::build_triangle(a.scheme, a.n, a.side, wall)?,
        DomainArg::Rect => harness::build_periodic(a.scheme, a.nx.unwrap_or(36), a.ny.unwrap_or(52), a.dx)?,
        DomainArg::Pipe => harness::build_periodic(a.scheme, a.nx.unwrap_or(96), a.ny.unwrap_or(4), a.dx)?,
    };
    if let Some(amp) = a.perturb {
        lattice = mesh::perturb(&lattice, amp, a.seed)?;
    }
    let report = mesh::validate(&lattice);
    io::write(a.out.join("mesh.vtk"), &io::vtk_polydata(&lattice, &format!("{} mesh", a.scheme), &[]))?;
    io::write(a.out.join("mesh.json"), &io::mesh_json(&lattice)?)?;
    let summary = json!({
        "scheme": a.scheme,
        "nodes": lattice.len(),
        "boundary_links": lattice.boundary_links().count(),
        "dx": lattice.dx,
        "classes": lattice.n_classes(),
        "valid": report.is_clean(),
    });
    io::write_json(a.out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if !report.is_clean() {
        return Err(Error::Geometry(format!("{} lattice violations", report.violations.len())));
    }
    Ok(())
}

/// Smallest lattice that contains every node class of the scheme.
fn class_lattice(scheme: SchemeKind) -> Result<Lattice> {
    match scheme {
        SchemeKind::D2T7 => mesh::build_d2t7_periodic(3, 3, 1.0),
        SchemeKind::D2T4 => mesh::build_d2t4_periodic(2, 2, 1.0),
    }
}

fn matrices_cmd(a: &MatricesArgs) -> Result<()> {
    let mut p = analysis::param_set_for(a.scheme, &a.set)?.params;
    if let Some(z) = a.zeta {
        p.zeta = z;
    }
    p.validate().map_err(|e| Error::Config(e.to_string()))?;
    let lattice = class_lattice(a.scheme)?;
    let mm = transition_matrices(&lattice, &PolynomialFamily::for_scheme(a.scheme))?;
    let mut files = Vec::new();
    for (c, cm) in mm.classes.iter().enumerate() {
        for (name, m) in [
            ("m", cm.m.clone()),
            ("m_tilde", cm.m_tilde.clone()),
            ("m_inv", cm.m_inv.clone()),
            ("p", cm.p.clone()),
            ("collision", collision_matrix(cm, &p)),
        ] {
            let file = format!("{name}_class{c}.csv");
            io::write(a.out.join(&file), &io::matrix_csv(&m))?;
            files.push(file);
        }
    }
    let summary = json!({ "scheme": a.scheme, "param_set": a.set, "classes": mm.classes.len(), "files": files });
    io::write_json(a.out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn dispersion_cmd(a: &DispersionArgs) -> Result<()> {
    if !(a.k_min > 0.0 && a.k_max > a.k_min) || a.nk < 2 {
        return Err(Error::Config("need 0 < k_min < k_max and nk >= 2".into()));
    }
    let set = analysis::param_set_for(a.scheme, &a.set)?;
    let mut p = set.params.clone();
    if let Some(z) = a.zeta {
        p.zeta = z;
    }
    p.validate().map_err(|e| Error::Config(e.to_string()))?;
    let conv = a.conversion.unwrap_or_default();
    let thetas = a.thetas.clone().unwrap_or_else(analysis::default_thetas);
    let ks = analysis::log_grid(a.k_min, a.k_max, a.nk);
    let points = analysis::dispersion(&p, &ks, &thetas, conv)?;
    let summary = json!({
        "scheme": a.scheme,
        "param_set": set.name,
        "mu": analysis::mu(&p),
        "measured_order": analysis::dispersion_order(&points)?,
        "anisotropy_at_k_max": analysis::anisotropy(&p, a.k_max, &thetas, conv)?,
        "points": points.len(),
    });
    if let Some(dir) = &a.out {
        io::write(dir.join("dispersion.csv"), &io::dispersion_csv(&points))?;
        io::write_json(dir.join("summary.json"), &summary)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn tune_cmd(a: &TuneArgs) -> Result<()> {
    let rows = analysis::builtin_param_sets()
        .iter()
        .filter(|s| a.scheme.is_none_or(|k| k == s.params.scheme))
        .map(|s| analysis::order_report(s).map(|r| (s.clone(), r)))
        .collect::<Result<Vec<_>>>()?;
    if a.json {
        let out: Vec<_> = rows.iter().map(|(s, r)| json!({ "set": s, "report": r })).collect();
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(());
    }
    println!("{:<14} {:>8} {:>22} {:>22} {:>6}", "set", "zeta", "mu", "theta", "order");
    for (s, r) in &rows {
        println!("{:<14} {:>8} {:>22.15e} {:>22.15e} {:>6}", s.name, s.params.zeta, r.mu, r.theta, r.formal_order);
        println!("    a3 = {}, s = {:?}", s.params.a3, s.params.s);
    }
    Ok(())
}
