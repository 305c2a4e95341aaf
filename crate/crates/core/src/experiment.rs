//! Experiment configuration and the batch commands behind the CLI.
//!
//! Every command writes UTF-8 CSV files with a header row and JSON metrics
//! into an output directory. CSV contents depend only on the configuration;
//! wall-clock timings appear in the JSON metrics only.

use crate::auxiliary::{build_aux_space, build_qh, write_eigen_csv, ModeCount, PressureConstraint};
use crate::basis::{compute_basis, compute_global_basis, decay_profile};
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::forcing::{Expr, Forcing};
use crate::mesh::{build_fine_grid, demo_perforations, PerforatedMesh, PerforationSpec, Shape};
use crate::solver::{error_report, free_load, solve_multiscale, solve_reference, ErrorReport};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

pub const SCHEMA_VERSION: u32 = 1;

/// Perforations: `"demo"`, `"none"` or an explicit shape list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Geometry {
    Named(String),
    Shapes(Vec<Shape>),
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry::Named("demo".into())
    }
}

impl Geometry {
    pub fn spec(&self) -> Result<PerforationSpec> {
        match self {
            Geometry::Named(n) if n == "demo" => Ok(demo_perforations()),
            Geometry::Named(n) if n == "none" => Ok(PerforationSpec::default()),
            Geometry::Named(n) => Err(Error::Config(format!("unknown geometry \"{n}\""))),
            Geometry::Shapes(s) => Ok(PerforationSpec::new(s.clone())),
        }
    }
}

/// Oversampling layers: a number, one number per coarse level, `"auto"`
/// (`⌈c·log₂ Nx⌉`) or `"global"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Layers {
    Fixed(usize),
    PerLevel(Vec<usize>),
    Named(String),
}

impl Default for Layers {
    fn default() -> Self {
        Layers::Named("auto".into())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ForcingConfig {
    #[default]
    Manufactured,
    Zero,
    Constant { value: [f64; 2] },
    Expression { fx: String, fy: String },
}

impl ForcingConfig {
    pub fn build(&self) -> Result<Forcing> {
        Ok(match self {
            ForcingConfig::Manufactured => Forcing::Manufactured,
            ForcingConfig::Zero => Forcing::Zero,
            ForcingConfig::Constant { value } => Forcing::Constant(*value),
            ForcingConfig::Expression { fx, fy } => Forcing::Expression { fx: Expr::parse(fx)?, fy: Expr::parse(fy)? },
        })
    }
}

/// Checks applied to every multiscale solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Largest accepted relative residual of the fine reference solve.
    pub reference_residual: f64,
    /// Largest accepted `max_q |b(ψ, q)| / ‖q‖` relative to `‖ψ‖_a`.
    pub basis_divergence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { reference_residual: 1e-10, basis_divergence: 1e-9 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    /// Coarse block positions `(bx, by)`; defaults to the block at `(Nx/2, Nx/2)`.
    pub blocks: Option<Vec<[usize; 2]>>,
    /// Zero-based mode indices; defaults to all `ℓ` modes.
    pub modes: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub nx: usize,
    #[serde(rename = "Nx")]
    pub n_coarse: Vec<usize>,
    #[serde(default)]
    pub shapes: Geometry,
    #[serde(default = "default_ell")]
    pub ell: usize,
    #[serde(default)]
    pub k: Layers,
    #[serde(default = "default_k_factor")]
    pub k_factor: f64,
    #[serde(default)]
    pub forcing: ForcingConfig,
    #[serde(default)]
    pub pressure: PressureConstraint,
    #[serde(default = "default_true")]
    pub allow_least_squares: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub decay: DecayConfig,
    /// Files the run must produce, relative to the output directory.
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

fn default_ell() -> usize {
    3
}

fn default_k_factor() -> f64 {
    1.5
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// The demo sweep: 64×64 fine grid, four circular holes, Nx ∈ {4, 8, 16}.
    pub fn demo() -> Self {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            nx: 64,
            n_coarse: vec![4, 8, 16],
            shapes: Geometry::default(),
            ell: 3,
            k: Layers::default(),
            k_factor: 1.5,
            forcing: ForcingConfig::Manufactured,
            pressure: PressureConstraint::Relaxed,
            allow_least_squares: true,
            tolerances: Tolerances::default(),
            decay: DecayConfig::default(),
            outputs: Vec::new(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        if self.n_coarse.is_empty() {
            return Err(Error::Config("Nx list is empty".into()));
        }
        for &n in &self.n_coarse {
            if n == 0 || self.nx % n != 0 {
                return Err(Error::IncompatibleRefinement { nx: self.nx, coarse: n });
            }
        }
        if self.ell == 0 {
            return Err(Error::Config("ell must be positive".into()));
        }
        match &self.k {
            Layers::PerLevel(v) if v.len() != self.n_coarse.len() => {
                return Err(Error::Config(format!("k has {} entries for {} coarse levels", v.len(), self.n_coarse.len())));
            }
            Layers::Named(n) if n != "auto" && n != "global" => {
                return Err(Error::Config(format!("unknown k setting \"{n}\"")));
            }
            _ => {}
        }
        if !(self.k_factor > 0.0) {
            return Err(Error::Config("k_factor must be positive".into()));
        }
        self.shapes.spec()?.validate()?;
        self.forcing.build()?;
        Ok(())
    }

    /// Oversampling layers at level `level`; `None` is the global basis.
    pub fn layers(&self, level: usize) -> Option<usize> {
        let n = self.n_coarse[level];
        match &self.k {
            Layers::Fixed(k) => Some(*k),
            Layers::PerLevel(v) => Some(v[level]),
            Layers::Named(s) if s == "global" => None,
            _ => Some(auto_layers(n, self.k_factor)),
        }
    }
}

/// `⌈c·log₂ Nx⌉`.
pub fn auto_layers(n_coarse: usize, c: f64) -> usize {
    (c * (n_coarse as f64).log2()).ceil().max(0.0) as usize
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub mesh: f64,
    pub auxiliary: f64,
    pub pressure_space: f64,
    pub basis: f64,
    pub reference: f64,
    pub coarse_solve: f64,
    pub total: f64,
}

/// One multiscale solve and its errors against the fine reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    #[serde(rename = "H")]
    pub h_coarse: f64,
    pub h: f64,
    pub nx: usize,
    #[serde(rename = "Nx")]
    pub n_coarse: usize,
    pub ell: usize,
    /// `null` for the global basis.
    pub k: Option<usize>,
    pub err_u_a: f64,
    pub err_u_rel: f64,
    pub err_u_s: f64,
    pub err_p: f64,
    pub err_p_rel: f64,
    pub norm_u_a: f64,
    pub norm_p: f64,
    pub galerkin_defect: f64,
    pub residual_dual_norm: f64,
    pub lambda_min_excluded: f64,
    pub gamma: f64,
    pub n_ms: usize,
    pub dropped_blocks: usize,
    pub reference_residual: f64,
    pub max_basis_divergence: f64,
    pub pressure_least_squares: bool,
    pub pressure_sigma_min: f64,
    pub pressure_sigma_max: f64,
    pub seed: u64,
    pub timings: Timings,
}

/// Solve output kept for field dumps.
pub struct LevelRun {
    pub metrics: LevelMetrics,
    pub disc: Discretization,
    pub aux: crate::auxiliary::AuxSpace,
    pub qh: crate::auxiliary::PressureAuxSpace,
    pub reference: crate::solver::ReferenceSolution,
    pub ms: crate::solver::MsSolution,
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

pub fn build_mesh(cfg: &ExperimentConfig) -> Result<PerforatedMesh> {
    build_fine_grid(cfg.nx, &cfg.shapes.spec()?)
}

/// Runs the full pipeline at coarse level `level`.
pub fn run_level(cfg: &ExperimentConfig, mesh: &PerforatedMesh, level: usize) -> Result<LevelRun> {
    let start = Instant::now();
    let mut timings = Timings::default();
    let n_coarse = cfg.n_coarse[level];
    let k = cfg.layers(level);
    let forcing = cfg.forcing.build()?;

    let t = Instant::now();
    let d = Discretization::new(mesh, n_coarse)?;
    timings.mesh = secs(t);
    let t = Instant::now();
    let aux = build_aux_space(&d, &ModeCount::Uniform(cfg.ell))?;
    timings.auxiliary = secs(t);
    let t = Instant::now();
    let qh = build_qh(&d, &aux, cfg.pressure)?;
    timings.pressure_space = secs(t);
    let t = Instant::now();
    let basis = compute_basis(&d, &aux, k)?;
    timings.basis = secs(t);
    let max_basis_divergence = basis
        .functions
        .iter()
        .map(|f| f.max_divergence(&d) / f.a_norm(&d).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    if max_basis_divergence > cfg.tolerances.basis_divergence {
        return Err(Error::InvalidInput(format!(
            "basis divergence {max_basis_divergence:e} exceeds tolerance {:e}",
            cfg.tolerances.basis_divergence
        )));
    }

    let load = free_load(&d, &forcing);
    let t = Instant::now();
    let reference = solve_reference(&d, &load)?;
    timings.reference = secs(t);
    if reference.residual > cfg.tolerances.reference_residual {
        return Err(Error::SingularSystem { rank_deficiency: 0, residual: reference.residual });
    }
    let t = Instant::now();
    let ms = solve_multiscale(&d, &aux, &qh, &basis, &load, cfg.allow_least_squares)?;
    timings.coarse_solve = secs(t);
    let rep: ErrorReport = error_report(&d, &qh, &basis, &reference, &ms, &load)?;
    timings.total = secs(start);

    let metrics = LevelMetrics {
        h_coarse: d.grid.h_coarse,
        h: mesh.h,
        nx: cfg.nx,
        n_coarse,
        ell: cfg.ell,
        k,
        err_u_a: rep.err_u_a,
        err_u_rel: rep.err_u_rel,
        err_u_s: rep.err_u_s,
        err_p: rep.err_p,
        err_p_rel: rep.err_p_rel,
        norm_u_a: rep.norm_u_a,
        norm_p: rep.norm_p,
        galerkin_defect: rep.galerkin_defect,
        residual_dual_norm: rep.residual_dual_norm,
        lambda_min_excluded: aux.lambda_min_excluded,
        gamma: aux.gamma,
        n_ms: basis.len(),
        dropped_blocks: d.grid.dropped.len(),
        reference_residual: reference.residual,
        max_basis_divergence,
        pressure_least_squares: ms.pressure.least_squares,
        pressure_sigma_min: ms.pressure.smallest_singular_value,
        pressure_sigma_max: ms.pressure.largest_singular_value,
        seed: cfg.seed,
        timings,
    };
    Ok(LevelRun { metrics, disc: d, aux, qh, reference, ms })
}

/// The four batch commands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Convergence,
    Decay,
    EigReport,
}

/// Runs `cmd` inside a pool of `threads` workers (all cores when `None`)
/// and checks that every declared output exists.
pub fn run_command(cmd: Command, cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<Vec<String>> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidInput(e.to_string()))?;
    let written = pool.install(|| match cmd {
        Command::Solve => cmd_solve(cfg, out),
        Command::Convergence => cmd_convergence(cfg, out),
        Command::Decay => cmd_decay(cfg, out),
        Command::EigReport => cmd_eigreport(cfg, out),
    })?;
    for f in &cfg.outputs {
        if !out.join(f).is_file() {
            return Err(Error::Io(format!("declared output {f} was not produced")));
        }
    }
    Ok(written)
}

fn write_file(out: &Path, name: &str, contents: &[u8], written: &mut Vec<String>) -> Result<()> {
    fs::write(out.join(name), contents)?;
    written.push(name.to_string());
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

/// Single solve at the first coarse level: `metrics.json`, `velocity.csv`,
/// `pressure.csv` and `eigen.csv`.
pub fn cmd_solve(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let mesh = build_mesh(cfg)?;
    let run = run_level(cfg, &mesh, 0)?;
    let mut written = Vec::new();
    write_file(out, "metrics.json", &to_json(&run.metrics)?, &mut written)?;

    let space = &run.disc.space;
    let (uh, ums) = (space.expand(&run.reference.u), space.expand(&run.ms.u));
    let nv = space.n_vnodes();
    let mut s = String::from("x,y,ux_h,uy_h,ux_ms,uy_ms\n");
    for v in 0..nv {
        let [x, y] = mesh.vnode_coords(v);
        writeln!(s, "{x},{y},{:.12e},{:.12e},{:.12e},{:.12e}", uh[v], uh[nv + v], ums[v], ums[nv + v]).unwrap();
    }
    write_file(out, "velocity.csv", s.as_bytes(), &mut written)?;

    let mut s = String::from("block,x,y,p_h,p_ms\n");
    for (b, p) in run.qh.blocks.iter().zip(&run.ms.pressure.blocks) {
        for (&q, v) in b.pnodes.iter().zip(p) {
            let [x, y] = mesh.pnode_coords(q);
            writeln!(s, "{},{x},{y},{:.12e},{:.12e}", b.element, run.reference.p[q], v).unwrap();
        }
    }
    write_file(out, "pressure.csv", s.as_bytes(), &mut written)?;

    let mut buf = Vec::new();
    write_eigen_csv(&run.disc, &run.aux, Some(&run.qh), &mut buf)?;
    write_file(out, "eigen.csv", &buf, &mut written)?;
    Ok(written)
}

/// `log₂(e₀/e₁) / log₂(H₀/H₁)`; `None` when either ratio is degenerate.
pub fn observed_rate(h0: f64, e0: f64, h1: f64, e1: f64) -> Option<f64> {
    if h0 == h1 || !(e0 > 0.0) || !(e1 > 0.0) || !e0.is_finite() || !e1.is_finite() {
        return None;
    }
    Some((e0 / e1).log2() / (h0 / h1).log2())
}

/// Rate column: two decimals, empty when undefined (first row, repeated
/// `H`, or a zero error).
pub fn format_rate(rate: Option<f64>) -> String {
    rate.map(|r| format!("{r:.2}")).unwrap_or_default()
}

/// Convergence table over the coarse levels.
pub fn convergence_csv(rows: &[LevelMetrics]) -> String {
    let mut s = String::from("H,Nx,k,n_ms,err_u_a,rate,err_u_rel,err_p,err_p_rel\n");
    for (n, r) in rows.iter().enumerate() {
        let rate = if n == 0 {
            None
        } else {
            observed_rate(rows[n - 1].h_coarse, rows[n - 1].err_u_a, r.h_coarse, r.err_u_a)
        };
        let k = r.k.map(|k| k.to_string()).unwrap_or_else(|| "global".into());
        writeln!(
            s,
            "{},{},{},{},{:.12e},{},{:.12e},{:.12e},{:.12e}",
            r.h_coarse,
            r.n_coarse,
            k,
            r.n_ms,
            r.err_u_a,
            format_rate(rate),
            r.err_u_rel,
            r.err_p,
            r.err_p_rel
        )
        .unwrap();
    }
    s
}

/// Sweep over every coarse level: `convergence.csv` and `metrics.json`.
pub fn cmd_convergence(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let mesh = build_mesh(cfg)?;
    let rows: Vec<LevelMetrics> = (0..cfg.n_coarse.len()).map(|l| run_level(cfg, &mesh, l).map(|r| r.metrics)).collect::<Result<_>>()?;
    let mut written = Vec::new();
    write_file(out, "convergence.csv", convergence_csv(&rows).as_bytes(), &mut written)?;
    write_file(out, "metrics.json", &to_json(&rows)?, &mut written)?;
    Ok(written)
}

/// Exterior energy of global basis functions against the layer count:
/// `decay.csv`.
pub fn cmd_decay(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let mesh = build_mesh(cfg)?;
    let mut s = String::from("Nx,block,bx,by,mode,m,exterior_energy,ratio\n");
    for &n in &cfg.n_coarse {
        let d = Discretization::new(&mesh, n)?;
        let aux = build_aux_space(&d, &ModeCount::Uniform(cfg.ell))?;
        let positions = cfg.decay.blocks.clone().unwrap_or_else(|| vec![[n / 2, n / 2]]);
        let modes = cfg.decay.modes.clone().unwrap_or_else(|| (0..cfg.ell).collect());
        for [bx, by] in positions {
            let i = d
                .grid
                .element_at(bx, by)
                .ok_or_else(|| Error::Config(format!("no retained coarse block at ({bx}, {by}) for Nx = {n}")))?;
            for &j in &modes {
                if j >= aux.blocks[i].ell {
                    return Err(Error::Config(format!("mode {j} out of range for ell = {}", aux.blocks[i].ell)));
                }
                let psi = compute_global_basis(&d, &aux, i, j)?;
                let profile = decay_profile(&d, &aux, &psi, i);
                for (t, &(m, e)) in profile.iter().enumerate() {
                    let ratio = if t == 0 || e <= 0.0 { String::new() } else { format!("{:.6e}", profile[t - 1].1 / e) };
                    writeln!(s, "{n},{i},{bx},{by},{j},{m},{e:.12e},{ratio}").unwrap();
                }
            }
        }
    }
    let mut written = Vec::new();
    write_file(out, "decay.csv", s.as_bytes(), &mut written)?;
    Ok(written)
}

/// Per-block λ and ζ spectra with `Λ` and `Γ`: `eigen_N{Nx}.csv` per level.
pub fn cmd_eigreport(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let mesh = build_mesh(cfg)?;
    let mut written = Vec::new();
    for &n in &cfg.n_coarse {
        let d = Discretization::new(&mesh, n)?;
        let aux = build_aux_space(&d, &ModeCount::Uniform(cfg.ell))?;
        let qh = build_qh(&d, &aux, cfg.pressure)?;
        let mut buf = Vec::new();
        write_eigen_csv(&d, &aux, Some(&qh), &mut buf)?;
        write_file(out, &format!("eigen_N{n}.csv"), &buf, &mut written)?;
    }
    Ok(written)
}

/// Machine-readable error record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub error: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        ErrorRecord { error: e.kind().to_string(), message: e.to_string() }
    }
}

/// Writes `error.json` into `out` when possible.
pub fn write_error(out: &Path, e: &Error) -> std::io::Result<()> {
    fs::create_dir_all(out)?;
    let mut f = fs::File::create(out.join("error.json"))?;
    f.write_all(&serde_json::to_vec_pretty(&ErrorRecord::from(e)).expect("serializable"))?;
    f.write_all(b"\n")
}
