//! Command-line front end of the `emd` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{EmdError, Result};
use crate::flowsolve::CERT_TOL;
use crate::geometry::Metric;
use crate::l1exact::{build_l1_program, plan_mass_violation, solve_l1_program, LengthMode, DEFAULT_TOL};
use crate::lift::{validate_plan, TransportPlan};
use crate::oracle::oracle_emd_seeded;
use crate::pipeline::{run, Guarantee, PipelineConfig};
use crate::scene::{load_scene, load_sides, MassScene, MassSide};
use crate::svg::render_svg;

/// Violations above this fail `validate` and the certified commands.
pub const VALIDATION_TOL: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "emd", version, about = "Earth mover's distance between points, segments, triangles and simplices")]
pub struct Cli {
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// (1+ε)-approximate transport plan.
    Approx(ApproxArgs),
    /// Exact plan for points to segments under L1.
    #[command(name = "exact-l1")]
    ExactL1(ExactArgs),
    /// Brute-force reference cost with an error bound.
    Oracle(OracleArgs),
    /// Checks a plan file against a scene.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    L1,
    L2,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Metric {
        match m {
            MetricArg::L1 => Metric::L1,
            MetricArg::L2 => Metric::L2,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SceneArgs {
    /// Scene JSON file.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Overrides the scene's metric.
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Rescales a point side to match the other side's mass.
    #[arg(long)]
    pub rebalance: bool,
}

#[derive(Args, Debug)]
pub struct ApproxArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub epsilon: f64,
    /// Plan JSON output.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Run manifest output (default: next to the plan).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Seed for Monte Carlo clipping.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ExactArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Relative duality gap at which the solver stops.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Segment mass is its L1 length.
    #[arg(long)]
    pub l1_length: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Pieces per unit length.
    #[arg(long, default_value_t = 200)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Result JSON output.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Plan JSON file.
    #[arg(short, long)]
    pub plan: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTriple {
    pub lower: f64,
    pub estimate: f64,
    pub upper: f64,
}

/// Record of one invocation, written next to its output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub input: String,
    pub command: String,
    pub epsilon: Option<f64>,
    pub tol: Option<f64>,
    pub metric: Metric,
    pub seed: u64,
    pub version: String,
    pub seconds: f64,
    /// In input units.
    pub cost: CostTriple,
    /// In normalized units.
    pub guarantee: Option<Guarantee>,
    pub gap: Option<f64>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<RunManifest> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Failures that reach the exit code.
enum Failure {
    Input(EmdError),
    Certification(String),
}

impl From<EmdError> for Failure {
    fn from(e: EmdError) -> Self {
        match e {
            EmdError::Certificate(_) | EmdError::MassDrift { .. } | EmdError::PlanMismatch(_) => {
                Failure::Certification(e.to_string())
            }
            other => Failure::Input(other),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| EmdError::Parse(format!("{}: {e}", path.display())))
}

fn load(args: &SceneArgs) -> Result<MassScene> {
    let mut scene = load_scene(&read(&args.input)?, args.rebalance)?;
    if let Some(m) = args.metric {
        scene.metric = m.into();
    }
    Ok(scene)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn manifest_path(explicit: &Option<PathBuf>, output: &Option<PathBuf>) -> Option<PathBuf> {
    explicit.clone().or_else(|| {
        output.as_ref().map(|o| {
            let mut s = o.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    })
}

fn print_costs(c: &CostTriple) {
    println!("cost_lower    {:.12e}", c.lower);
    println!("cost_estimate {:.12e}", c.estimate);
    println!("cost_upper    {:.12e}", c.upper);
}

fn cmd_approx(a: &ApproxArgs) -> std::result::Result<(), Failure> {
    let start = Instant::now();
    let scene = load(&a.scene)?;
    let mut cfg = PipelineConfig::new(a.epsilon);
    cfg.seed = a.seed;
    let out = run(&scene, &cfg)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let plan = out.plan.to_input_units();
    let cost = CostTriple { lower: plan.cost_lower, estimate: plan.cost_estimate, upper: plan.cost_upper };
    print_costs(&cost);
    println!("pieces        {} + {}", out.stats.pieces.0, out.stats.pieces.1);
    println!("guarantee     cost_upper <= {} * OPT + {:e}", out.guarantee.factor, out.guarantee.additive * out.scene.scale_factor * out.scene.mass_scale);
    if let Some(o) = &a.output {
        write(o, &plan.to_json())?;
    }
    if let Some(p) = &a.svg {
        write(p, &render_svg(&scene, &out.plan)?)?;
    }
    if let Some(mp) = manifest_path(&a.manifest, &a.output) {
        let m = RunManifest {
            input: a.scene.input.display().to_string(),
            command: "approx".into(),
            epsilon: Some(a.epsilon),
            tol: None,
            metric: scene.metric,
            seed: a.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            seconds: start.elapsed().as_secs_f64(),
            cost,
            guarantee: Some(out.guarantee.clone()),
            gap: None,
            warnings: out.warnings.clone(),
        };
        write(&mp, &m.to_json())?;
    }
    let s = &out.stats;
    if s.certificate_violation > CERT_TOL {
        return Err(Failure::Certification(format!("flow certificate violated by {:e}", s.certificate_violation)));
    }
    if !s.validation.passes(VALIDATION_TOL) {
        return Err(Failure::Certification(format!("plan violates mass conservation by {:e}", s.validation.max_violation)));
    }
    if !s.sandwich_ok {
        return Err(Failure::Certification("cost bracket outside the guaranteed sandwich".into()));
    }
    Ok(())
}

fn cmd_exact(a: &ExactArgs) -> std::result::Result<(), Failure> {
    let start = Instant::now();
    let (metric, dim, p, s) = load_sides(&read(&a.scene.input)?)?;
    let metric: Metric = a.scene.metric.map(Into::into).unwrap_or(metric);
    if dim != 2 {
        return Err(EmdError::UnsupportedDimension(dim).into());
    }
    let (MassSide::Points(points), MassSide::Segments(segs)) = (&p, &s) else {
        return Err(EmdError::UnsupportedPair(format!("{} × {} (need points × segments)", p.kind(), s.kind())).into());
    };
    let mode = if a.l1_length { LengthMode::L1 } else { LengthMode::Euclidean };
    let prog = build_l1_program(metric, points, segs, mode, a.scene.rebalance)?;
    let sol = solve_l1_program(&prog, a.tol)?;
    let plan = &sol.plan;
    let cost = CostTriple { lower: plan.cost_lower, estimate: sol.objective, upper: sol.objective };
    println!("cost          {:.12e}", sol.objective);
    println!("gap           {:.3e}", sol.gap);
    println!("iterations    {}", sol.iterations);
    if let Some(o) = &a.output {
        write(o, &plan.to_json())?;
    }
    if let Some(path) = &a.svg {
        let scene = MassScene::new(metric, 2, p.clone(), s.clone(), true)?;
        write(path, &render_svg(&scene, plan)?)?;
    }
    if let Some(mp) = manifest_path(&a.manifest, &a.output) {
        let m = RunManifest {
            input: a.scene.input.display().to_string(),
            command: "exact-l1".into(),
            epsilon: None,
            tol: Some(a.tol),
            metric,
            seed: 0,
            version: env!("CARGO_PKG_VERSION").into(),
            seconds: start.elapsed().as_secs_f64(),
            cost,
            guarantee: None,
            gap: Some(sol.gap),
            warnings: Vec::new(),
        };
        write(&mp, &m.to_json())?;
    }
    if !sol.converged {
        return Err(Failure::Certification(format!("duality gap {:e} above tolerance", sol.gap)));
    }
    if sol.certificate_violation > CERT_TOL {
        return Err(Failure::Certification(format!("flow certificate violated by {:e}", sol.certificate_violation)));
    }
    let v = plan_mass_violation(&prog, plan);
    if v > VALIDATION_TOL {
        return Err(Failure::Certification(format!("plan violates mass conservation by {v:e}")));
    }
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> std::result::Result<(), Failure> {
    let scene = load(&a.scene)?;
    let r = oracle_emd_seeded(&scene, a.resolution, a.seed)?;
    println!("cost          {:.12e} ± {:.3e}", r.cost, r.error_bound);
    println!("nodes         {} + {}", r.nodes.0, r.nodes.1);
    if let Some(o) = &a.output {
        write(o, &serde_json::to_string_pretty(&r).map_err(EmdError::from)?)?;
    }
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> std::result::Result<(), Failure> {
    let scene = load(&a.scene)?;
    let plan = TransportPlan::from_json(&read(&a.plan)?).map_err(|e| EmdError::Parse(format!("plan: {e}")))?;
    let report = validate_plan(&plan, &scene);
    println!("max_violation {:.3e}", report.max_violation);
    println!("assignments   {}", report.assignments);
    if let Some((side, obj)) = report.worst {
        println!("worst         {side}[{obj}]");
    }
    if !report.passes(VALIDATION_TOL) {
        return Err(Failure::Certification(format!("violation {:e} above {VALIDATION_TOL:e}", report.max_violation)));
    }
    Ok(())
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("EMD_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 for unreadable or invalid input, 2 when a result fails certification.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    let res = match &cli.command {
        Command::Approx(a) => cmd_approx(a),
        Command::ExactL1(a) => cmd_exact(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match res {
        Ok(()) => 0,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            1
        }
        Err(Failure::Certification(msg)) => {
            eprintln!("certification failed: {msg}");
            2
        }
    }
}
