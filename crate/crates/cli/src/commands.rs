use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sfpe_core::audit::{audit_coefficients, audit_lattice, audit_support, AuditConfig, ConditionEntry, Verdict};
use sfpe_core::density::{auto_ecf, invert, kde, silverman_bandwidth, Axis, Bandwidth, DensityGrid, GridOptions, Window};
use sfpe_core::models::{build, ModelConfig};
use sfpe_core::process::{scale, simulate_batch, Centering, ProcessModel};
use sfpe_core::solver::{ks_rate_bound, solve, wasserstein_1d_general, Init, SamplePool, SeedLineage, SolverConfig};
use sfpe_core::{stats, SeedTree};

use crate::{poolfile, Command, Exit, EXIT_AUDIT, EXIT_CONFIG, EXIT_NUMERICAL};

/// Files touched by a command and its exit status.
pub struct Outcome {
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    /// Absolute paths; the first one names the manifest.
    pub outputs: Vec<PathBuf>,
    pub status: Option<Exit>,
}

fn config_error(message: impl Into<String>) -> anyhow::Error {
    Exit { code: EXIT_CONFIG, message: message.into() }.into()
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ModelSource {
    /// Zoo model with default parameters (see `sfpe models`).
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    pub model: Option<String>,
    /// JSON configuration file `{"model": "...", params...}`.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ModelSource {
    fn text(&self) -> Result<Option<String>> {
        match &self.config {
            Some(p) => Ok(Some(
                std::fs::read_to_string(p).map_err(|e| config_error(format!("cannot read {}: {e}", p.display())))?,
            )),
            None => Ok(None),
        }
    }

    fn model_config(&self) -> Result<ModelConfig> {
        let config = match (self.text()?, &self.model) {
            (Some(t), _) => ModelConfig::from_json(&t),
            (None, Some(name)) => ModelConfig::default_for(name),
            (None, None) => return Err(config_error("either --model or --config is required")),
        };
        config.with_context(|| self.origin())
    }

    fn process_model(&self) -> Result<ProcessModel> {
        let model = match (self.text()?, &self.model) {
            (Some(t), _) => ProcessModel::from_json(&t),
            (None, Some(name)) => ProcessModel::default_for(name),
            (None, None) => return Err(config_error("either --model or --config is required")),
        };
        model.with_context(|| self.origin())
    }

    fn origin(&self) -> String {
        match (&self.config, &self.model) {
            (Some(p), _) => format!("in {}", p.display()),
            (None, Some(m)) => format!("model {m}"),
            _ => String::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Constant,
    Gaussian,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SolveArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Pool size per equation.
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    /// Maximum number of iterations.
    #[arg(long, default_value_t = 60)]
    pub iters: usize,
    /// Stopping tolerance on the distance between consecutive pools.
    #[arg(long, default_value_t = 2e-2)]
    pub tol: f64,
    /// Wasserstein order of the stopping rule.
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, value_enum, default_value = "constant")]
    pub init: InitKind,
    /// Standard deviation of the Gaussian warm start.
    #[arg(long, default_value_t = 1.0)]
    pub init_scale: f64,
    /// Pools file; relative paths resolve under the output directory.
    #[arg(long, default_value = "pools.bin")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct AuditArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Solved pools; enables the support and lattice audits.
    #[arg(long)]
    pub pools: Option<PathBuf>,
    /// Coefficient draws per equation.
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    /// Random directions scanned by the lattice audit when `d >= 2`.
    #[arg(long, default_value_t = 64)]
    pub directions: usize,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Fourier,
    Kde,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
    None,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DensityArgs {
    #[arg(long)]
    pub pools: PathBuf,
    /// Equation whose pool is used.
    #[arg(long, default_value_t = 0)]
    pub equation: usize,
    #[arg(long, value_enum, default_value = "fourier")]
    pub method: MethodKind,
    /// Taper applied before Fourier inversion.
    #[arg(long, value_enum, default_value = "hann")]
    pub window: WindowKind,
    /// Largest number of frequencies per axis for Fourier inversion.
    #[arg(long)]
    pub cap: Option<usize>,
    /// Grid points per axis for kernel estimates (default 512 in 1D, 128 in 2D).
    #[arg(long)]
    pub points: Option<usize>,
    /// Kernel bandwidths, one per axis (default: Silverman's rule).
    #[arg(long, value_delimiter = ',')]
    pub bandwidth: Option<Vec<f64>>,
    /// CSV grid; a JSON sidecar with the same stem is written next to it.
    #[arg(long, default_value = "grid.csv")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringKind {
    Auto,
    BatchMean,
    Exact,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Size of each process instance.
    #[arg(long)]
    pub n: usize,
    /// Independent runs (at least 1000).
    #[arg(long, default_value_t = 10_000)]
    pub runs: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pub centering: CenteringKind,
    #[arg(long, default_value = "samples.csv")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub pools: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub equation: usize,
    /// Samples to compare: a CSV written by `simulate` or another pools file.
    #[arg(long)]
    pub samples: PathBuf,
    /// Order of the transport distance entering the Kolmogorov bound.
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long, default_value = "compare.json")]
    pub out: PathBuf,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    p.canonicalize().map_err(|e| config_error(format!("cannot open {}: {e}", p.display())))
}

/// Replaces input paths by absolute ones so that manifests can be replayed
/// from any working directory.
pub fn resolve_inputs(mut command: Command) -> Result<Command> {
    let fix = |s: &mut ModelSource| -> Result<()> {
        if let Some(p) = &s.config {
            s.config = Some(absolute(p)?);
        }
        Ok(())
    };
    match &mut command {
        Command::Solve(a) => fix(&mut a.source)?,
        Command::Simulate(a) => fix(&mut a.source)?,
        Command::Audit(a) => {
            fix(&mut a.source)?;
            if let Some(p) = &a.pools {
                a.pools = Some(absolute(p)?);
            }
        }
        Command::Density(a) => a.pools = absolute(&a.pools)?,
        Command::Compare(a) => {
            a.pools = absolute(&a.pools)?;
            a.samples = absolute(&a.samples)?;
        }
        Command::Models | Command::Replay { .. } => {}
    }
    Ok(command)
}

pub fn dispatch(command: &Command, seed: u64, out_dir: &Path) -> Result<Outcome> {
    match command {
        Command::Solve(a) => cmd_solve(a, seed, out_dir),
        Command::Audit(a) => cmd_audit(a, seed, out_dir),
        Command::Density(a) => cmd_density(a, out_dir),
        Command::Simulate(a) => cmd_simulate(a, seed, out_dir),
        Command::Compare(a) => cmd_compare(a, out_dir),
        Command::Models | Command::Replay { .. } => unreachable!("handled by main"),
    }
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn source_inputs(s: &ModelSource) -> Vec<PathBuf> {
    s.config.iter().cloned().collect()
}

fn cmd_solve(a: &SolveArgs, seed: u64, out_dir: &Path) -> Result<Outcome> {
    let config = a.source.model_config()?;
    let system = build(&config).with_context(|| a.source.origin())?;
    let init = match a.init {
        InitKind::Constant => Init::Constant,
        InitKind::Gaussian => Init::Gaussian { scale: a.init_scale },
    };
    let solver = SolverConfig { pool_size: a.n, max_iters: a.iters, tol: a.tol, p: a.p, init, ..Default::default() };
    let (pools, diag) = solve(&system, &solver, seed)?;
    let out = out_dir.join(&a.out);
    poolfile::write(&out, &poolfile::encode(system.name(), seed, &pools)?)?;
    let summary: Vec<Value> = pools
        .iter()
        .enumerate()
        .map(|(r, p)| {
            let cov = p.covariance();
            let d = p.d();
            let scales: Vec<f64> = (0..d).map(|k| cov[k * d + k].sqrt()).collect();
            json!({ "equation": r, "mean": p.mean(), "scales": scales, "covariance": cov })
        })
        .collect();
    let diag_path = sidecar(&out, ".diagnostics.json");
    write_json(&diag_path, &json!({ "system": system.name(), "solver": solver, "pools": summary, "diagnostics": diag }))?;
    let status = (!diag.converged).then(|| Exit {
        code: EXIT_NUMERICAL,
        message: format!("no convergence within {} iterations (tolerance {})", a.iters, a.tol),
    });
    Ok(Outcome {
        config: serde_json::to_value(&config)?,
        inputs: source_inputs(&a.source),
        outputs: vec![out, diag_path],
        status,
    })
}

fn read_pools(path: &Path) -> Result<(poolfile::PoolHeader, Vec<SamplePool>)> {
    poolfile::read(path).map_err(|e| config_error(format!("{e:#}")))
}

fn pick(pools: &[SamplePool], r: usize) -> Result<&SamplePool> {
    pools.get(r).ok_or_else(|| config_error(format!("equation {r} out of range (the file holds {})", pools.len())))
}

fn cmd_audit(a: &AuditArgs, seed: u64, out_dir: &Path) -> Result<Outcome> {
    let config = a.source.model_config()?;
    let system = build(&config).with_context(|| a.source.origin())?;
    let pools = match &a.pools {
        Some(p) => {
            let (h, pools) = read_pools(p)?;
            if h.m != system.m() || h.d != system.d() {
                return Err(config_error(format!(
                    "dimension mismatch: pools have m = {}, d = {}; the system has m = {}, d = {}",
                    h.m,
                    h.d,
                    system.m(),
                    system.d()
                )));
            }
            Some(pools)
        }
        None => None,
    };
    let seeds = SeedTree::new(seed);
    let audit = AuditConfig { n_draws: a.draws, ..Default::default() };
    let mut equations = Vec::new();
    let mut failed = Vec::new();
    for r in 0..system.m() {
        let mut report = audit_coefficients(&system, r, &audit, &seeds)?;
        let (support, lattice) = match &pools {
            Some(pools) => {
                let s = audit_support(&pools[r]);
                let entry = ConditionEntry {
                    verdict: s.verdict,
                    estimate: Some(s.normalized_min_eigenvalue),
                    std_error: None,
                    n: s.n,
                    note: Some("normalized minimum covariance eigenvalue of the solved pool".into()),
                };
                report.entries.insert("A4".into(), entry);
                (Some(s), Some(audit_lattice(&pools[r], a.directions, &seeds)))
            }
            None => {
                let entry = ConditionEntry {
                    verdict: Verdict::Inconclusive,
                    estimate: None,
                    std_error: None,
                    n: 0,
                    note: Some("needs solved pools (--pools)".into()),
                };
                report.entries.insert("A4".into(), entry);
                (None, None)
            }
        };
        for (k, e) in &report.entries {
            if e.verdict == Verdict::Fail {
                failed.push(format!("{k} (equation {r})"));
            }
        }
        if lattice.as_ref().is_some_and(|l| l.verdict == Verdict::Fail) {
            failed.push(format!("non-lattice (equation {r})"));
        }
        equations.push(json!({ "report": report, "support": support, "lattice": lattice }));
    }
    let out = out_dir.join(&a.out);
    write_json(&out, &json!({ "system": system.name(), "passed": failed.is_empty(), "failed": failed, "equations": equations }))?;
    let status =
        (!failed.is_empty()).then(|| Exit { code: EXIT_AUDIT, message: format!("audit failed: {}", failed.join(", ")) });
    let mut inputs = source_inputs(&a.source);
    inputs.extend(a.pools.iter().cloned());
    Ok(Outcome { config: serde_json::to_value(&config)?, inputs, outputs: vec![out], status })
}

fn kde_axes(pool: &SamplePool, h: &[f64], points: usize) -> Result<Vec<Axis>> {
    (0..pool.d())
        .map(|k| {
            let c = pool.component(k);
            let lo = c.iter().cloned().fold(f64::INFINITY, f64::min) - 4.0 * h[k];
            let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 4.0 * h[k];
            Ok(Axis::new(lo, (hi - lo) / (points - 1) as f64, points)?)
        })
        .collect()
}

fn density_grid(pool: &SamplePool, a: &DensityArgs) -> Result<(DensityGrid, Value)> {
    match a.method {
        MethodKind::Fourier => {
            let mut opts = GridOptions::for_dim(pool.d());
            if let Some(cap) = a.cap {
                opts.cap = cap.max(4);
                opts.start = opts.start.min(opts.cap);
            }
            let cf = auto_ecf(pool, opts)?;
            let window = match a.window {
                WindowKind::Hann => Window::Hann,
                WindowKind::None => Window::None,
            };
            let boundary = cf.boundary_magnitude();
            let grid = invert(&cf, window)?;
            Ok((grid, json!({ "boundary_cf_magnitude": boundary, "frequencies_per_axis": cf.axes[0].len })))
        }
        MethodKind::Kde => {
            let points = a.points.unwrap_or(if pool.d() == 1 { 512 } else { 128 });
            if points < 2 {
                return Err(config_error("--points must be at least 2"));
            }
            let (bw, h) = match &a.bandwidth {
                Some(h) => (Bandwidth::Fixed(h.clone()), h.clone()),
                None => (Bandwidth::Auto, silverman_bandwidth(pool)),
            };
            if h.len() != pool.d() || !h.iter().all(|x| *x > 0.0 && x.is_finite()) {
                return Err(config_error(format!("need {} positive bandwidths, got {h:?}", pool.d())));
            }
            let grid = kde(pool, &bw, &kde_axes(pool, &h, points)?)?;
            Ok((grid, json!({})))
        }
    }
}

fn cmd_density(a: &DensityArgs, out_dir: &Path) -> Result<Outcome> {
    let (header, pools) = read_pools(&a.pools)?;
    let pool = pick(&pools, a.equation)?;
    let (grid, extra) = density_grid(pool, a)?;
    let d = grid.axes.len();
    let mut csv = String::with_capacity(grid.values.len() * 48);
    csv.push_str(if d == 1 { "x,density\n" } else { "x1,x2,density\n" });
    for (i, v) in grid.values.iter().enumerate() {
        for c in grid.point(i) {
            write!(csv, "{c},")?;
        }
        writeln!(csv, "{v}")?;
    }
    let out = out_dir.join(&a.out);
    std::fs::write(&out, csv).with_context(|| format!("cannot write {}", out.display()))?;
    let cell = grid.cell_volume();
    let negative_mass: f64 = grid.values.iter().filter(|v| **v < 0.0).sum::<f64>() * cell;
    let side = sidecar(&out, ".json");
    write_json(
        &side,
        &json!({
            "system": header.system,
            "equation": a.equation,
            "n_samples": pool.len(),
            "method": grid.method,
            "window": if a.method == MethodKind::Fourier { Some(a.window) } else { None },
            "axes": grid.axes,
            "diagnostics": {
                "integral": grid.integral(),
                "max": grid.max(),
                "min": grid.min(),
                "negative_mass": negative_mass,
                "integral_clipped": grid.integral() - negative_mass,
                "imag_ratio": grid.imag_ratio,
                "grid": extra,
            },
        }),
    )?;
    Ok(Outcome {
        config: json!({ "pools_header": header }),
        inputs: vec![a.pools.clone()],
        outputs: vec![out, side],
        status: None,
    })
}

fn cmd_simulate(a: &SimulateArgs, seed: u64, out_dir: &Path) -> Result<Outcome> {
    let model = a.source.process_model()?;
    if a.runs < 1000 {
        return Err(config_error(format!("scaled samples need at least 1000 runs, got {}", a.runs)));
    }
    let seeds = SeedTree::new(seed);
    let raw = simulate_batch(&model, a.n, a.runs, &seeds)?;
    let centering = match a.centering {
        CenteringKind::Auto => Centering::Auto,
        CenteringKind::BatchMean => Centering::BatchMean,
        CenteringKind::Exact => Centering::Exact,
    };
    let lineage = SeedLineage { master: seed, path: format!("simulate/{}/n={}", model.name(), a.n) };
    let scaled = scale(&model, a.n, &raw, centering, lineage)?;
    let d = scaled.d();
    let width = raw.first().map_or(0, |r| r.len());
    let name = |base: &str, k: usize, n: usize| if n == 1 { base.to_string() } else { format!("{base}_{}", k + 1) };
    let mut csv = String::from("run");
    for k in 0..width {
        write!(csv, ",{}", name("raw", k, width))?;
    }
    for k in 0..d {
        write!(csv, ",{}", name("scaled", k, d))?;
    }
    csv.push('\n');
    for (i, r) in raw.iter().enumerate() {
        write!(csv, "{i}")?;
        for x in r {
            write!(csv, ",{x}")?;
        }
        for x in scaled.point(i) {
            write!(csv, ",{x}")?;
        }
        csv.push('\n');
    }
    let out = out_dir.join(&a.out);
    std::fs::write(&out, csv).with_context(|| format!("cannot write {}", out.display()))?;
    Ok(Outcome {
        config: json!({ "process": model, "exponents": model.exponents()? }),
        inputs: source_inputs(&a.source),
        outputs: vec![out],
        status: None,
    })
}

/// Scaled columns of a `simulate` CSV as a pool.
fn read_samples_csv(path: &Path) -> Result<SamplePool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().context("empty samples file")?.split(',').collect();
    let cols: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.starts_with("scaled")).map(|(i, _)| i).collect();
    if cols.is_empty() {
        return Err(config_error(format!("{} has no scaled columns", path.display())));
    }
    let mut values = Vec::new();
    for (ln, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        for &c in &cols {
            let v: f64 = fields
                .get(c)
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| config_error(format!("{}: bad value on line {}", path.display(), ln + 2)))?;
            values.push(v);
        }
    }
    Ok(SamplePool::new(cols.len(), values, 0, SeedLineage::default())?)
}

/// Sup of the marginal density: Fourier inversion, or a kernel estimate
/// when the frequency grid cannot be made large enough.
fn density_sup(xs: Vec<f64>) -> Result<(f64, &'static str)> {
    let pool = SamplePool::from_values(xs)?;
    let fourier = auto_ecf(&pool, GridOptions::for_dim(1)).and_then(|cf| invert(&cf, Window::Hann));
    match fourier {
        Ok(g) => Ok((g.max(), "fourier")),
        Err(_) => {
            let h = silverman_bandwidth(&pool);
            Ok((kde(&pool, &Bandwidth::Auto, &kde_axes(&pool, &h, 1024)?)?.max(), "kde"))
        }
    }
}

fn cmd_compare(a: &CompareArgs, out_dir: &Path) -> Result<Outcome> {
    let (_, pools) = read_pools(&a.pools)?;
    let pool = pick(&pools, a.equation)?;
    let samples = if poolfile::is_pool_file(&a.samples) {
        let (_, other) = read_pools(&a.samples)?;
        pick(&other, a.equation)?.clone()
    } else {
        read_samples_csv(&a.samples)?
    };
    if samples.d() != pool.d() {
        return Err(config_error(format!("dimension mismatch: pool d = {}, samples d = {}", pool.d(), samples.d())));
    }
    let mut components = Vec::new();
    let mut ks_max: f64 = 0.0;
    for k in 0..pool.d() {
        let xs = stats::sorted_copy(&pool.component(k));
        let ys = stats::sorted_copy(&samples.component(k));
        let ks = stats::ks_statistic(&xs, &ys);
        let lp = wasserstein_1d_general(&xs, &ys, a.p)?;
        let (f_sup, method) = density_sup(xs)?;
        let bound = if lp > 0.0 { ks_rate_bound(lp, f_sup, a.p)? } else { 0.0 };
        ks_max = ks_max.max(ks);
        components.push(json!({
            "component": k,
            "ks": ks,
            "lp_distance": lp,
            "density_sup": f_sup,
            "density_sup_method": method,
            "ks_bound": bound,
            "bound_holds": ks <= bound,
        }));
    }
    let out = out_dir.join(&a.out);
    write_json(
        &out,
        &json!({ "ks": ks_max, "p": a.p, "n_pool": pool.len(), "n_samples": samples.len(), "components": components }),
    )?;
    Ok(Outcome {
        config: json!({ "equation": a.equation, "p": a.p }),
        inputs: vec![a.pools.clone(), a.samples.clone()],
        outputs: vec![out],
        status: None,
    })
}
