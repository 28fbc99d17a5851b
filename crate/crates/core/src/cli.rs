//! Command-line front end.
//!
//! Every subcommand reads and validates all of its inputs before computing
//! anything, and writes outputs through a temporary file plus rename, so a
//! failure never leaves a partial file behind. Numeric outputs carry a
//! header with the tool version, the seed and a hash of the arguments.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{gen_er, gen_sbm, gen_sensor_knn, gen_smallworld, spectral_basis_ordered, Graph, ShiftKind, SpectralBasis};
use crate::harness::{run_experiment_with, run_stream, ExperimentConfig, RunOptions, StreamTarget};
use crate::io::{edge_list_from_csv, matrix_from_csv, read_matrix, write_atomic, write_matrix};
use crate::linalg::{DenseMatrix, EigOrder};
use crate::lmi::{build_lmi, write_sdpa, LmiVariant};
use crate::samplers::{design, MethodLabel, RelaxParams, SamplerSpec};
use crate::signal::{add_noise, noise_power, sample_signals, BandlimitedModel, NoiseModel, SignalBatch};
use crate::sketch::{
    relaxed_objective, sketch_direct_noiseless, sketch_inverse_noiseless, with_ridge, DesignOutcome, Direction,
    Selection, SketchProblem,
};

#[derive(Debug, Parser)]
#[command(name = "sketchsel", version, about = "Joint sample selection and operator sketching for bandlimited graph signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random graph and write its weight matrix.
    GenGraph(GenGraphArgs),
    /// Draw bandlimited signals on a graph.
    GenSignals(GenSignalsArgs),
    /// Choose samples and build the matching sketch.
    Design(DesignArgs),
    /// Score a designed sketch on a batch of signals.
    Evaluate(EvaluateArgs),
    /// Run a configured method × budget × noise sweep.
    Sweep(SweepArgs),
    /// Write the semidefinite selection problem in SDPA sparse format.
    ExportSdp(ExportSdpArgs),
    /// Check the exactness identities on built-in instances.
    Selftest,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GraphModel {
    Sbm,
    Er,
    Sw,
    Sensor,
}

#[derive(Debug, Args, Serialize)]
struct GenGraphArgs {
    #[arg(long, value_enum)]
    model: GraphModel,
    #[arg(long)]
    n: usize,
    /// Community sizes for `sbm` (default: four equal communities).
    #[arg(long, value_delimiter = ',')]
    communities: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.8)]
    p_in: f64,
    #[arg(long, default_value_t = 0.2)]
    p_out: f64,
    #[arg(long, default_value_t = 0.1)]
    p_edge: f64,
    #[arg(long, default_value_t = 0.2)]
    p_e: f64,
    #[arg(long, default_value_t = 0.7)]
    p_r: f64,
    #[arg(long, default_value_t = 4)]
    knn: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

/// How a graph file is turned into a spectral basis.
#[derive(Debug, Args, Serialize)]
struct GraphInput {
    /// Weight-matrix CSV (or edge list with `--edges`).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Read `--graph` as `i,j,w` lines.
    #[arg(long)]
    edges: bool,
    /// Bandwidth.
    #[arg(long)]
    k: Option<usize>,
    /// Eigenvalue ordering: desc, asc or abs-desc.
    #[arg(long, default_value = "desc")]
    order: String,
    /// Shift operator: adjacency or laplacian.
    #[arg(long, default_value = "adjacency")]
    shift: String,
}

#[derive(Debug, Args, Serialize)]
struct GenSignalsArgs {
    #[command(flatten)]
    graph: GraphInput,
    /// `white`, or `file` together with `--template-path`.
    #[arg(long, default_value = "white")]
    template: String,
    #[arg(long)]
    template_path: Option<PathBuf>,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ProblemArgs {
    #[arg(long, value_enum, default_value = "direct")]
    direction: DirectionArg,
    /// Column-sampling variant (the sketch is a column subset of H).
    #[arg(long)]
    constrained: bool,
    /// Operator CSV; defaults to the graph Fourier transform `V_kᵀ` of `--graph`.
    #[arg(long = "H")]
    h: Option<PathBuf>,
    /// Signal covariance CSV; defaults to the white bandlimited model of `--graph`.
    #[arg(long = "Rx")]
    rx: Option<PathBuf>,
    /// Noise covariance CSV.
    #[arg(long = "Rw")]
    rw: Option<PathBuf>,
    /// White noise variance, used when `--Rw` is absent.
    #[arg(long)]
    noise_var: Option<f64>,
    /// Adds `εI` to the noise covariance.
    #[arg(long)]
    ridge: Option<f64>,
    #[command(flatten)]
    graph: GraphInput,
    #[arg(long)]
    large: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum DirectionArg {
    Direct,
    Inverse,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Direct => Direction::Direct,
            DirectionArg::Inverse => Direction::Inverse,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct DesignArgs {
    /// Sampler name, optionally with a `col-` prefix.
    #[arg(long)]
    method: String,
    #[arg(long)]
    p: usize,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    /// Outcome JSON written by `design`.
    #[arg(long)]
    outcome: PathBuf,
    /// The operator the outcome was designed for.
    #[arg(long = "H")]
    h: PathBuf,
    /// Clean signals, one per row.
    #[arg(long)]
    signals: PathBuf,
    /// Noisy observations of the same signals; otherwise white noise is drawn.
    #[arg(long)]
    noisy: Option<PathBuf>,
    /// Noise power as a multiple of the mean signal energy.
    #[arg(long, default_value_t = 0.0)]
    sigma_coeff: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result JSON; printed to stdout when absent.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Results CSV; a JSON file with timings is written next to it.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Allow graphs above 2048 nodes.
    #[arg(long)]
    large: bool,
}

#[derive(Debug, Args, Serialize)]
struct ExportSdpArgs {
    /// direct, inverse, col-direct or col-inverse; overrides `--direction` and `--constrained`.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    p: usize,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code: 0 on success, 1 for usage or input errors,
/// 2 for numeric failures.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                2
            } else {
                1
            }
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenGraph(a) => gen_graph(&a),
        Command::GenSignals(a) => gen_signals(&a),
        Command::Design(a) => design_cmd(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Sweep(a) => sweep_cmd(&a),
        Command::ExportSdp(a) => export_sdp(&a),
        Command::Selftest => selftest(),
    }
}

fn args_hash<T: Serialize>(args: &T) -> String {
    let bytes = serde_json::to_vec(args).expect("arguments serialize");
    Sha256::digest(&bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn provenance<T: Serialize>(seed: u64, args: &T) -> Vec<String> {
    vec![format!("sketchsel {}", crate::VERSION), format!("seed={seed}"), format!("config_sha256={}", args_hash(args))]
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))
}

fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    read_matrix(path).map_err(|e| match e {
        Error::Io(io) => Error::Parse(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

fn gen_graph(a: &GenGraphArgs) -> Result<()> {
    let g = match a.model {
        GraphModel::Sbm => {
            let sizes = match &a.communities {
                Some(s) => s.clone(),
                None => {
                    if a.n % 4 != 0 {
                        return Err(Error::Model(format!("n = {} is not divisible into 4 communities; pass --communities", a.n)));
                    }
                    vec![a.n / 4; 4]
                }
            };
            gen_sbm(a.n, &sizes, a.p_in, a.p_out, a.seed)?
        }
        GraphModel::Er => gen_er(a.n, a.p_edge, a.seed)?,
        GraphModel::Sw => gen_smallworld(a.n, a.p_e, a.p_r, a.seed)?,
        GraphModel::Sensor => gen_sensor_knn(a.n, a.knn, a.seed)?,
    };
    write_matrix(&a.out, g.weights(), &provenance(a.seed, a))
}

impl GraphInput {
    fn load_graph(&self) -> Result<Option<Graph>> {
        let Some(path) = &self.graph else { return Ok(None) };
        let text = read_text(path)?;
        let w = if self.edges { edge_list_from_csv(&text, None)? } else { matrix_from_csv(&text)? };
        Ok(Some(Graph::new(w)?))
    }

    /// Parses the graph and its options up front; the eigendecomposition is
    /// the caller's next step.
    fn basis(&self, large: bool) -> Result<Option<SpectralBasis>> {
        let shift: ShiftKind = self.shift.parse()?;
        let order: EigOrder = self.order.parse()?;
        let Some(graph) = self.load_graph()? else { return Ok(None) };
        let k = self.k.ok_or_else(|| Error::Model("--k is required with --graph".into()))?;
        if graph.n() > crate::harness::LARGE_N && !large {
            return Err(Error::Precondition(format!(
                "graph has n = {} > {}; pass --large",
                graph.n(),
                crate::harness::LARGE_N
            )));
        }
        if k == 0 || k > graph.n() {
            return Err(Error::Model(format!("k = {k} must be in 1..={}", graph.n())));
        }
        Ok(Some(spectral_basis_ordered(&graph.shift(shift), k, order)?))
    }
}

fn gen_signals(a: &GenSignalsArgs) -> Result<()> {
    if a.graph.graph.is_none() {
        return Err(Error::Model("--graph is required".into()));
    }
    let template = match a.template.as_str() {
        "white" => None,
        "file" => {
            let path = a.template_path.as_ref().ok_or_else(|| Error::Model("--template file needs --template-path".into()))?;
            Some(load_matrix(path)?)
        }
        other => return Err(Error::Model(format!("unknown template '{other}' (expected white or file)"))),
    };
    let basis = a.graph.basis(true)?.expect("graph checked above");
    let model = match template {
        None => BandlimitedModel::white(basis),
        Some(t) => BandlimitedModel::new(basis, t)?,
    };
    let batch = sample_signals(&model, a.count, a.seed)?;
    write_matrix(&a.out, batch.as_rows(), &provenance(a.seed, a))
}

/// A fully loaded problem description, before the budget is fixed.
struct LoadedProblem {
    direction: Direction,
    constrained: bool,
    h: DenseMatrix,
    rx: DenseMatrix,
    rw: DenseMatrix,
    basis: Option<SpectralBasis>,
}

impl ProblemArgs {
    fn load(&self) -> Result<LoadedProblem> {
        let h_file = self.h.as_deref().map(load_matrix).transpose()?;
        let rx_file = self.rx.as_deref().map(load_matrix).transpose()?;
        let rw_file = self.rw.as_deref().map(load_matrix).transpose()?;
        if rw_file.is_none() && self.noise_var.is_none() {
            return Err(Error::Model("one of --Rw or --noise-var is required".into()));
        }
        let basis = self.graph.basis(self.large)?;
        let h = match (h_file, &basis) {
            (Some(h), _) => h,
            (None, Some(b)) => b.v_k().transpose(),
            (None, None) => return Err(Error::Model("--H or --graph with --k is required".into())),
        };
        let rx = match (rx_file, &basis) {
            (Some(rx), _) => rx,
            (None, Some(b)) => BandlimitedModel::white(b.clone()).covariance(),
            (None, None) => return Err(Error::Model("--Rx or --graph with --k is required".into())),
        };
        let n = rx.rows();
        let mut rw = match (rw_file, self.noise_var) {
            (Some(rw), _) => rw,
            (None, Some(v)) => NoiseModel::white(n, v)?.cov().clone(),
            (None, None) => unreachable!(),
        };
        if let Some(eps) = self.ridge {
            rw = with_ridge(&rw, eps)?;
        }
        Ok(LoadedProblem { direction: self.direction.into(), constrained: self.constrained, h, rx, rw, basis })
    }
}

impl LoadedProblem {
    fn problem(&self, direction: Direction, constrained: bool, p: usize) -> Result<SketchProblem> {
        SketchProblem::new(direction, constrained, self.h.clone(), self.rx.clone(), self.rw.clone(), p)
    }
}

fn design_cmd(a: &DesignArgs) -> Result<()> {
    let label: MethodLabel = a.method.parse()?;
    let loaded = a.problem.load()?;
    let constrained = label.constrained || loaded.constrained;
    let label = MethodLabel { constrained, ..label };
    if constrained && !label.method.supports_constrained() {
        return Err(Error::Model(format!("method '{}' has no column-sampling variant", label.method)));
    }
    let problem = loaded.problem(loaded.direction, constrained, a.p)?;
    let relax = RelaxParams { max_iters: a.max_iters, alpha: a.alpha, ..RelaxParams::default() };
    let spec = SamplerSpec { method: label.method, seed: Some(a.seed), relax };
    let mut outcome = design(&problem, &spec, loaded.basis.as_ref())?;
    outcome.provenance.insert("tool".into(), format!("sketchsel {}", crate::VERSION).into());
    outcome.provenance.insert("seed".into(), a.seed.into());
    outcome.provenance.insert("config_sha256".into(), args_hash(a).into());
    let json = serde_json::to_string_pretty(&outcome)?;
    write_atomic(&a.out, json.as_bytes())?;
    log::info!("{} selected {:?} (objective {:.6e})", outcome.method, outcome.indices, outcome.objective);
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let outcome: DesignOutcome = serde_json::from_str(&read_text(&a.outcome)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", a.outcome.display())))?;
    let h = load_matrix(&a.h)?;
    let clean = SignalBatch::from_rows(load_matrix(&a.signals)?);
    let noisy = match &a.noisy {
        Some(path) => SignalBatch::from_rows(load_matrix(path)?),
        None if a.sigma_coeff > 0.0 => {
            let noise = NoiseModel::white(clean.n(), noise_power(a.sigma_coeff, &clean)?)?;
            add_noise(&clean, &noise, a.seed)?
        }
        None if a.sigma_coeff == 0.0 => clean.clone(),
        None => return Err(Error::Model(format!("sigma_coeff must be >= 0, got {}", a.sigma_coeff))),
    };
    let target = StreamTarget::for_problem(outcome.direction, &h)?;
    let r = run_stream(&outcome, &target, &clean, &noisy)?;
    let doc = serde_json::json!({
        "tool": format!("sketchsel {}", crate::VERSION),
        "seed": a.seed,
        "config_sha256": args_hash(a),
        "method": outcome.method,
        "p": outcome.p,
        "rel_mse": r.rel_mse,
        "signals": r.signals,
        "sketch_time_s": r.sketch_time_s,
        "full_time_s": r.full_time_s,
    });
    let text = serde_json::to_string_pretty(&doc)?;
    match &a.out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let config = ExperimentConfig::from_json(&read_text(&a.config)?)?;
    let opts = RunOptions { allow_large: a.large, ..RunOptions::from_env() };
    config.validate(opts.allow_large)?;
    let table = run_experiment_with(&config, &opts)?;
    let csv = table.to_csv();
    let json = table.to_json(&config)?;
    write_atomic(&a.out, csv.as_bytes())?;
    write_atomic(&a.out.with_extension("json"), json.as_bytes())?;
    let failed = table.rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        log::warn!("{failed} of {} cells failed; see the status column", table.rows.len());
    }
    Ok(())
}

fn export_sdp(a: &ExportSdpArgs) -> Result<()> {
    let variant: Option<LmiVariant> = a.variant.as_deref().map(str::parse).transpose()?;
    let loaded = a.problem.load()?;
    let (direction, constrained) = match variant {
        Some(v) => (v.direction(), v.constrained()),
        None => (loaded.direction, loaded.constrained),
    };
    let problem = loaded.problem(direction, constrained, a.p)?;
    let lmi = build_lmi(&problem, a.alpha)?;
    let mut text = String::new();
    for line in provenance(a.seed, a) {
        let _ = writeln!(text, "\"{line}");
    }
    text.push_str(&write_sdpa(&lmi));
    write_atomic(&a.out, text.as_bytes())
}

/// Residuals of the three built-in identity checks, in print order.
pub fn selftest_residuals() -> Result<[(&'static str, f64); 3]> {
    let n = 32;
    let k = 4;
    let graph = gen_sbm(n, &[8; 4], 0.8, 0.2, 1)?;
    let basis = spectral_basis_ordered(graph.weights(), k, EigOrder::Desc)?;
    let vk = basis.v_k();
    let model = BandlimitedModel::white(basis.clone());
    let batch = sample_signals(&model, 100, 2)?;
    let sel = Selection::new(n, vec![0, 9, 17, 26])?;

    let rel_err = |h_s: &DenseMatrix, reference: &DenseMatrix| -> Result<f64> {
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for x in batch.iter() {
            let y = reference.matvec(x)?;
            let y_hat = crate::sketch::apply_sketch(h_s, &sel, x)?;
            num += y.iter().zip(&y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            den += y.iter().map(|v| v * v).sum::<f64>();
        }
        Ok((num / den).sqrt())
    };

    let h = vk.transpose();
    let direct = rel_err(&sketch_direct_noiseless(&h, vk, &sel)?, &h)?;

    let mut g = crate::rng::Gaussian::new(crate::rng::substream(3, "selftest", &[]));
    let mut data = vec![0.0; 3 * n];
    g.fill(&mut data);
    let h_inv = DenseMatrix::from_vec(3, n, data)?;
    let a_ls = crate::sketch::ls_operator(&h_inv)?;
    let inverse = rel_err(&sketch_inverse_noiseless(&h_inv, vk, &sel)?, &a_ls)?;

    let rx = model.covariance();
    let rw = DenseMatrix::identity(n).scale(0.05);
    let problem = SketchProblem::new(Direction::Direct, false, h, rx, rw, sel.p())?;
    let exact = problem.objective(&sel)?;
    let relaxed = relaxed_objective(&problem, &sel.indicator(), None)?;
    let woodbury = (relaxed - exact).abs() / exact.abs().max(1e-300);

    Ok([
        ("noiseless direct sketch, relative output error", direct),
        ("noiseless inverse sketch, relative error vs least squares", inverse),
        ("relaxed vs exact objective at a binary point, relative gap", woodbury),
    ])
}

const SELFTEST_TOL: f64 = 1e-8;

fn selftest() -> Result<()> {
    let residuals = selftest_residuals()?;
    let mut ok = true;
    for (name, r) in residuals {
        let pass = r <= SELFTEST_TOL;
        ok &= pass;
        println!("{name}: {r:.3e} [{}]", if pass { "ok" } else { "FAIL" });
    }
    if ok {
        Ok(())
    } else {
        Err(Error::Numeric(format!("an identity residual exceeds {SELFTEST_TOL:e}")))
    }
}
