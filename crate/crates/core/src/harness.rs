//! Streaming evaluation of designed sketches and full-factorial experiment
//! sweeps.
//!
//! A sweep crosses methods × budgets × noise levels. Every cell is averaged
//! over independent graph realizations, signal batches and (for randomized
//! methods) selection draws. All randomness comes from substreams keyed by
//! the master seed and the coordinates of what is being drawn, so the output
//! does not depend on thread scheduling or on the order of the lists in the
//! configuration.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::hint::black_box;
use std::path::PathBuf;

use rand::seq::index::sample as index_sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{gen_er, gen_sbm, gen_sensor_knn, gen_smallworld, spectral_basis_ordered, Graph, ShiftKind, SpectralBasis};
use crate::io::{edge_list_from_csv, fmt_f64, matrix_from_csv};
use crate::linalg::{dot, DenseMatrix, EigOrder};
use crate::rng::{substream, substream_key, Gaussian};
use crate::samplers::{design, MethodLabel, RelaxParams, SamplerSpec};
use crate::signal::{add_noise, empirical_covariance, sample_signals, BandlimitedModel, NoiseModel, SignalBatch};
use crate::sketch::{ls_operator, DesignOutcome, Direction, SketchProblem};
use crate::timing::Stopwatch;

pub const SCHEMA_VERSION: u32 = 1;
/// Graphs larger than this need an explicit opt-in (dense eigendecomposition is cubic).
pub const LARGE_N: usize = 2048;
pub const THREADS_ENV: &str = "SKETCHSEL_THREADS";

// ---------------------------------------------------------------------------
// Streaming evaluation

/// What a sketch is compared against.
///
/// `full` is the `m × n` operator whose full application the sketch replaces.
/// With a `readout`, estimates are mapped back to signal space and compared
/// to the clean signal itself; otherwise they are compared to `full · x`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamTarget {
    full: DenseMatrix,
    readout: Option<DenseMatrix>,
}

impl StreamTarget {
    /// Reference `y = op · x` on the clean signal.
    pub fn output(op: DenseMatrix) -> Self {
        StreamTarget { full: op, readout: None }
    }

    /// Reference `x` itself, estimate `Hᵀ ŷ`; the full operator is the
    /// least-squares map `(HHᵀ)⁻¹H`.
    pub fn reconstruction(h: &DenseMatrix) -> Result<Self> {
        Ok(StreamTarget { full: ls_operator(h)?, readout: Some(h.transpose()) })
    }

    /// Natural target of a problem: the operator output for direct problems,
    /// the signal reconstruction for inverse ones.
    pub fn for_problem(direction: Direction, h: &DenseMatrix) -> Result<Self> {
        match direction {
            Direction::Direct => Ok(StreamTarget::output(h.clone())),
            Direction::Inverse => StreamTarget::reconstruction(h),
        }
    }

    pub fn full(&self) -> &DenseMatrix {
        &self.full
    }

    pub fn readout(&self) -> Option<&DenseMatrix> {
        self.readout.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamResult {
    pub rel_mse: f64,
    /// `Σ‖ŷ − y‖²`.
    pub sq_error: f64,
    /// `Σ‖y‖²`.
    pub energy: f64,
    pub signals: usize,
    pub sketch_time_s: f64,
    pub full_time_s: f64,
}

fn apply_rows(op: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(op.row(r), x);
    }
}

/// Applies a designed sketch to every noisy signal and scores it against the
/// clean reference: `rel_mse = Σ‖ŷ − y‖² / Σ‖y‖²`.
pub fn run_stream(
    outcome: &DesignOutcome,
    target: &StreamTarget,
    clean: &SignalBatch,
    noisy: &SignalBatch,
) -> Result<StreamResult> {
    let h_s = outcome.sketch_matrix()?;
    let sel = outcome.selection()?;
    let n = sel.n();
    let m = target.full.rows();
    if clean.n() != n || noisy.n() != n || clean.count() != noisy.count() {
        return Err(Error::Dimension(format!(
            "clean batch is {}x{}, noisy batch is {}x{}, selection has n = {n}",
            clean.count(),
            clean.n(),
            noisy.count(),
            noisy.n()
        )));
    }
    if h_s.rows() != m || h_s.cols() != sel.p() || target.full.cols() != n {
        return Err(Error::Dimension(format!(
            "sketch is {}x{} for p = {}, reference operator is {}x{}",
            h_s.rows(),
            h_s.cols(),
            sel.p(),
            m,
            target.full.cols()
        )));
    }
    if let Some(r) = &target.readout {
        if r.shape() != (n, m) {
            return Err(Error::Dimension(format!("readout is {}x{}, expected {n}x{m}", r.rows(), r.cols())));
        }
    }
    let count = clean.count();
    let idx = sel.indices();

    let mut estimates = vec![0.0; count * m];
    let mut samples = vec![0.0; sel.p()];
    let clock = Stopwatch::start();
    for (t, est) in estimates.chunks_exact_mut(m).enumerate() {
        let x = noisy.signal(t);
        for (s, &i) in samples.iter_mut().zip(idx) {
            *s = x[i];
        }
        apply_rows(&h_s, &samples, est);
    }
    let sketch_time_s = clock.seconds();

    let mut full_out = vec![0.0; m];
    let mut sink = 0.0;
    let clock = Stopwatch::start();
    for t in 0..count {
        apply_rows(&target.full, noisy.signal(t), &mut full_out);
        sink += full_out[0];
    }
    let full_time_s = clock.seconds();
    black_box(sink);

    let mut sq_error = 0.0;
    let mut energy = 0.0;
    let mut y = vec![0.0; m];
    let mut x_hat = vec![0.0; n];
    for (t, est) in estimates.chunks_exact(m).enumerate() {
        let x = clean.signal(t);
        match &target.readout {
            None => {
                apply_rows(&target.full, x, &mut y);
                sq_error += est.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                energy += dot(&y, &y);
            }
            Some(r) => {
                apply_rows(r, est, &mut x_hat);
                sq_error += x_hat.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                energy += dot(x, x);
            }
        }
    }
    if !(energy > 0.0) {
        return Err(Error::UndefinedMetric("reference signals have zero energy".into()));
    }
    Ok(StreamResult { rel_mse: sq_error / energy, sq_error, energy, signals: count, sketch_time_s, full_time_s })
}

/// Ratio estimate `Σ num / Σ den` with its leave-one-unit-out jackknife
/// standard error. A single unit has no spread estimate and reports 0.
pub fn jackknife_ratio(num: &[f64], den: &[f64]) -> Result<(f64, f64)> {
    if num.len() != den.len() || num.is_empty() {
        return Err(Error::Dimension("jackknife needs equally many numerators and denominators".into()));
    }
    let total_n: f64 = num.iter().sum();
    let total_d: f64 = den.iter().sum();
    if !(total_d > 0.0) {
        return Err(Error::UndefinedMetric("pooled reference energy is zero".into()));
    }
    let mean = total_n / total_d;
    let u = num.len();
    if u == 1 {
        return Ok((mean, 0.0));
    }
    let mut loo = Vec::with_capacity(u);
    for (a, b) in num.iter().zip(den) {
        let d = total_d - b;
        if !(d > 0.0) {
            return Err(Error::UndefinedMetric("leave-one-out reference energy is zero".into()));
        }
        loo.push((total_n - a) / d);
    }
    let loo_mean = loo.iter().sum::<f64>() / u as f64;
    let var = (u as f64 - 1.0) / u as f64 * loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>();
    Ok((mean, var.sqrt()))
}

// ---------------------------------------------------------------------------
// Speedup measurement

const SPEEDUP_SEED: u64 = 0x5eed_5ba5_e000_0001;
/// Distinct signals held in memory during a speedup run; longer batches cycle through them.
const SPEEDUP_BUFFER_BYTES: usize = 64 << 20;
const MIN_TIMED_SECONDS: f64 = 0.05;
const MAX_REPEATS: usize = 1 << 16;

fn time_per_signal(batch: usize, mut kernel: impl FnMut(usize) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let mut repeats = 1;
        loop {
            let clock = Stopwatch::start();
            let mut sink = 0.0;
            for _ in 0..repeats {
                for t in 0..batch {
                    sink += kernel(t);
                }
            }
            black_box(sink);
            let elapsed = clock.seconds();
            if elapsed >= MIN_TIMED_SECONDS || repeats >= MAX_REPEATS {
                best = best.min(elapsed / (repeats * batch) as f64);
                break;
            }
            repeats *= 2;
        }
    }
    best
}

/// Wall-time ratio of applying a dense `m × n` operator to a batch of
/// signals versus gathering `p` samples and applying an `m × p` sketch.
/// Both paths use the same dot-product kernel. Timings shorter than
/// [`MIN_TIMED_SECONDS`] are repeated until they are not; the best of three
/// runs is kept for each path.
pub fn measure_speedup(n: usize, p: usize, m: usize, batch: usize) -> Result<f64> {
    if p == 0 || p > n || m == 0 || batch == 0 {
        return Err(Error::Model(format!("need 1 <= p <= n and m, batch >= 1 (n={n}, p={p}, m={m}, batch={batch})")));
    }
    if cfg!(target_arch = "wasm32") {
        return Err(Error::Precondition("wall-clock timing is unavailable on this target".into()));
    }
    let mut g = Gaussian::new(substream(SPEEDUP_SEED, "speedup", &[n as u64, p as u64, m as u64]));
    let mut h = vec![0.0; m * n];
    g.fill(&mut h);
    let h = DenseMatrix::from_vec(m, n, h)?;
    let mut hs = vec![0.0; m * p];
    g.fill(&mut hs);
    let hs = DenseMatrix::from_vec(m, p, hs)?;
    let idx = index_sample(g.rng_mut(), n, p).into_vec();
    let held = batch.min((SPEEDUP_BUFFER_BYTES / (8 * n)).max(1));
    let mut signals = vec![0.0; held * n];
    g.fill(&mut signals);

    let mut out = vec![0.0; m];
    let full = time_per_signal(batch, |t| {
        let x = &signals[(t % held) * n..][..n];
        apply_rows(&h, x, &mut out);
        out[0]
    });
    let mut samples = vec![0.0; p];
    let sketched = time_per_signal(batch, |t| {
        let x = &signals[(t % held) * n..][..n];
        for (s, &i) in samples.iter_mut().zip(&idx) {
            *s = x[i];
        }
        apply_rows(&hs, &samples, &mut out);
        out[0]
    });
    if !(sketched > 0.0) {
        return Err(Error::Numeric("sketched application time is below clock resolution".into()));
    }
    Ok(full / sketched)
}

// ---------------------------------------------------------------------------
// Configuration

/// Graph ensemble drawn once per graph realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase", deny_unknown_fields)]
pub enum GraphSpec {
    Sbm { n: usize, communities: Vec<usize>, p_in: f64, p_out: f64 },
    Er { n: usize, p_edge: f64 },
    Sw { n: usize, p_e: f64, p_r: f64 },
    Sensor { n: usize, #[serde(default = "default_knn")] knn: usize },
    /// Weight-matrix CSV, or an `i,j,w` edge list when `edges` is set.
    File { path: PathBuf, #[serde(default)] edges: bool, #[serde(default)] n: Option<usize> },
}

fn default_knn() -> usize {
    4
}

impl GraphSpec {
    /// Node count when known without reading files.
    pub fn declared_n(&self) -> Option<usize> {
        match self {
            GraphSpec::Sbm { n, .. } | GraphSpec::Er { n, .. } | GraphSpec::Sw { n, .. } | GraphSpec::Sensor { n, .. } => {
                Some(*n)
            }
            GraphSpec::File { n, .. } => *n,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Graph> {
        match self {
            GraphSpec::Sbm { n, communities, p_in, p_out } => gen_sbm(*n, communities, *p_in, *p_out, seed),
            GraphSpec::Er { n, p_edge } => gen_er(*n, *p_edge, seed),
            GraphSpec::Sw { n, p_e, p_r } => gen_smallworld(*n, *p_e, *p_r, seed),
            GraphSpec::Sensor { n, knn } => gen_sensor_knn(*n, *knn, seed),
            GraphSpec::File { path, edges, n } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Parse(format!("cannot read graph file {}: {e}", path.display())))?;
                let w = if *edges { edge_list_from_csv(&text, *n)? } else { matrix_from_csv(&text)? };
                Graph::new(w)
            }
        }
    }
}

/// Operator whose output (direct) or input estimate (inverse) is sketched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OperatorSpec {
    /// `H = V_kᵀ`: the first `k` graph Fourier coefficients.
    Gft,
    /// Random `m × n` operator whose transpose has independent
    /// `N(0, 1/√n)` entries.
    Sensor { m: usize },
    /// `m × n` matrix CSV.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trials {
    pub n_graphs: usize,
    pub n_signal_batches: usize,
    pub signals_per_batch: usize,
    pub n_selection_draws: usize,
}

fn default_training() -> usize {
    500
}

fn default_shift() -> String {
    "adjacency".into()
}

fn default_order() -> String {
    "desc".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub graph: GraphSpec,
    #[serde(default = "default_shift")]
    pub shift: String,
    #[serde(default = "default_order")]
    pub eig_order: String,
    pub k: usize,
    pub direction: Direction,
    pub operator: OperatorSpec,
    pub p_values: Vec<usize>,
    pub sigma_coeffs: Vec<f64>,
    /// Sampler names; a `col-` prefix selects the column-sampling variant.
    pub methods: Vec<String>,
    pub trials: Trials,
    /// Signals used to estimate `R_x`; never reused for evaluation.
    #[serde(default = "default_training")]
    pub training_signals: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub relax: RelaxParams,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without generating data.
    pub fn validate(&self, allow_large: bool) -> Result<()> {
        let bad = |msg: String| Err(Error::Model(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.p_values.is_empty() || self.sigma_coeffs.is_empty() || self.methods.is_empty() {
            return bad("p_values, sigma_coeffs and methods must be nonempty".into());
        }
        let t = &self.trials;
        if t.n_graphs == 0 || t.n_signal_batches == 0 || t.signals_per_batch == 0 || t.n_selection_draws == 0 {
            return bad("all trial counts must be at least 1".into());
        }
        if self.training_signals == 0 {
            return bad("training_signals must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.p_values.contains(&0) {
            return bad("p values must be at least 1".into());
        }
        if let Some(&s) = self.sigma_coeffs.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return bad(format!("sigma_coeff {s} must be positive and finite"));
        }
        self.shift_kind()?;
        self.order()?;
        self.labels()?;
        if let OperatorSpec::Sensor { m } = self.operator {
            if m == 0 {
                return bad("sensor operator needs m >= 1".into());
            }
        }
        if let Some(n) = self.graph.declared_n() {
            if n > LARGE_N && !allow_large {
                return Err(Error::Precondition(format!(
                    "n = {n} exceeds {LARGE_N}; pass --large to accept the cubic eigendecomposition cost"
                )));
            }
            if self.k > n {
                return bad(format!("k = {} exceeds n = {n}", self.k));
            }
            if let Some(p) = self.p_values.iter().find(|&&p| p > n) {
                return bad(format!("p = {p} exceeds n = {n}"));
            }
        }
        Ok(())
    }

    pub fn shift_kind(&self) -> Result<ShiftKind> {
        self.shift.parse()
    }

    pub fn order(&self) -> Result<EigOrder> {
        self.eig_order.parse()
    }

    pub fn labels(&self) -> Result<Vec<MethodLabel>> {
        self.methods.iter().map(|m| m.parse()).collect()
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

// ---------------------------------------------------------------------------
// Results

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub p: usize,
    pub sigma_coeff: f64,
    pub rel_mse_mean: f64,
    pub rel_mse_stderr: f64,
    /// Mean design wall time per (graph, draw).
    pub design_time_s: f64,
    pub apply_time_per_signal_s: f64,
    /// Total full-operator time over total sketched time.
    pub speedup_vs_full: f64,
    /// `ok`, or the first error met in this cell.
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub version: String,
    pub master_seed: u64,
    pub config_sha256: String,
    pub rows: Vec<ResultRow>,
}

fn csv_safe(s: &str) -> String {
    s.replace([',', ';'], " ").replace(['\n', '\r'], " ")
}

impl ResultTable {
    pub fn row(&self, method: &str, p: usize, sigma_coeff: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == method && r.p == p && r.sigma_coeff == sigma_coeff)
    }

    /// Deterministic CSV: timings are left out because they vary run to run.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# sketchsel {}", self.version);
        let _ = writeln!(out, "# master_seed={}", self.master_seed);
        let _ = writeln!(out, "# config_sha256={}", self.config_sha256);
        let _ = writeln!(out, "method,p,sigma_coeff,rel_mse_mean,rel_mse_stderr,status");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method,
                r.p,
                fmt_f64(r.sigma_coeff),
                fmt_f64(r.rel_mse_mean),
                fmt_f64(r.rel_mse_stderr),
                csv_safe(&r.status)
            );
        }
        out
    }

    /// Full table including timings, plus the configuration that produced it.
    pub fn to_json(&self, config: &ExperimentConfig) -> Result<String> {
        let doc = serde_json::json!({
            "version": self.version,
            "master_seed": self.master_seed,
            "config_sha256": self.config_sha256,
            "config": config,
            "rows": self.rows,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

// ---------------------------------------------------------------------------
// Sweep

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub allow_large: bool,
    /// Work-pool size; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl RunOptions {
    /// Reads the pool cap from `SKETCHSEL_THREADS`.
    pub fn from_env() -> Self {
        let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&t| t > 0);
        RunOptions { allow_large: false, threads }
    }
}

/// Everything a cell needs from one graph realization.
struct GraphCase {
    basis: SpectralBasis,
    model: BandlimitedModel,
    h: DenseMatrix,
    rx: DenseMatrix,
    /// Mean `‖x‖²` of the training signals; scales the noise power.
    train_energy: f64,
    target: StreamTarget,
}

/// Random `m × n` operator whose transpose has independent `N(0, 1/√n)` entries.
pub fn sensor_operator(m: usize, n: usize, seed: u64) -> Result<DenseMatrix> {
    let mut g = Gaussian::new(substream(seed, "operator", &[m as u64, n as u64]));
    let sd = (n as f64).powf(-0.25);
    let mut data = vec![0.0; m * n];
    g.fill(&mut data);
    data.iter_mut().for_each(|v| *v *= sd);
    DenseMatrix::from_vec(m, n, data)
}

fn prepare_graph(cfg: &ExperimentConfig, g: usize) -> Result<GraphCase> {
    let seed = cfg.master_seed;
    let gi = g as u64;
    let graph = cfg.graph.generate(substream_key(seed, "graph", &[gi]))?;
    let n = graph.n();
    if cfg.k > n {
        return Err(Error::Model(format!("k = {} exceeds n = {n}", cfg.k)));
    }
    let basis = spectral_basis_ordered(&graph.shift(cfg.shift_kind()?), cfg.k, cfg.order()?)?;
    let h = match &cfg.operator {
        OperatorSpec::Gft => basis.v_k().transpose(),
        OperatorSpec::Sensor { m } => sensor_operator(*m, n, substream_key(seed, "operator", &[gi]))?,
        OperatorSpec::File { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Parse(format!("cannot read operator file {}: {e}", path.display())))?;
            matrix_from_csv(&text)?
        }
    };
    if h.cols() != n {
        return Err(Error::Dimension(format!("operator has {} columns, graph has {n} nodes", h.cols())));
    }
    // GFT coefficients are compared directly; other inverse problems are
    // scored on the reconstructed signal.
    let target = match (&cfg.operator, cfg.direction) {
        (OperatorSpec::Gft, Direction::Inverse) => StreamTarget::output(ls_operator(&h)?),
        (_, d) => StreamTarget::for_problem(d, &h)?,
    };
    let model = BandlimitedModel::white(basis.clone());
    let train = sample_signals(&model, cfg.training_signals, substream_key(seed, "train", &[gi]))?;
    let rx = empirical_covariance(&train, false)?;
    Ok(GraphCase { basis, model, h, rx, train_energy: train.mean_energy(), target })
}

#[derive(Default)]
struct CellAccum {
    num: Vec<f64>,
    den: Vec<f64>,
    design_time: f64,
    designs: usize,
    sketch_time: f64,
    full_time: f64,
    signals: usize,
}

fn run_cell(
    cfg: &ExperimentConfig,
    cases: &[std::result::Result<GraphCase, String>],
    label: MethodLabel,
    p: usize,
    sigma_coeff: f64,
) -> Result<CellAccum> {
    let seed = cfg.master_seed;
    let draws = if label.method.is_randomized() { cfg.trials.n_selection_draws } else { 1 };
    let select_tag = format!("select/{label}");
    let mut acc = CellAccum::default();
    for (g, case) in cases.iter().enumerate() {
        let case = case.as_ref().map_err(|e| Error::Numeric(format!("graph {g}: {e}")))?;
        let n = case.basis.n();
        let sigma2 = sigma_coeff * case.train_energy;
        let rw = DenseMatrix::identity(n).scale(sigma2);
        let problem = SketchProblem::new(cfg.direction, label.constrained, case.h.clone(), case.rx.clone(), rw, p)?;
        let mut outcomes = Vec::with_capacity(draws);
        for d in 0..draws {
            let spec = SamplerSpec {
                method: label.method,
                seed: Some(substream_key(seed, &select_tag, &[g as u64, p as u64, sigma_coeff.to_bits(), d as u64])),
                relax: cfg.relax,
            };
            let outcome = design(&problem, &spec, Some(&case.basis))?;
            acc.design_time += outcome.wall_time_s;
            acc.designs += 1;
            outcomes.push(outcome);
        }
        let noise = NoiseModel::white(n, sigma2)?;
        for b in 0..cfg.trials.n_signal_batches {
            let coords = [g as u64, b as u64];
            let clean = sample_signals(&case.model, cfg.trials.signals_per_batch, substream_key(seed, "eval", &coords))?;
            // Same underlying draws at every noise level and for every method.
            let noisy = add_noise(&clean, &noise, substream_key(seed, "noise", &coords))?;
            let (mut num, mut den) = (0.0, 0.0);
            for outcome in &outcomes {
                let r = run_stream(outcome, &case.target, &clean, &noisy)?;
                num += r.sq_error;
                den += r.energy;
                acc.sketch_time += r.sketch_time_s;
                acc.full_time += r.full_time_s;
                acc.signals += r.signals;
            }
            acc.num.push(num);
            acc.den.push(den);
        }
    }
    Ok(acc)
}

fn finish_row(label: MethodLabel, p: usize, sigma_coeff: f64, acc: Result<CellAccum>) -> ResultRow {
    let failed = |status: String| ResultRow {
        method: label.to_string(),
        p,
        sigma_coeff,
        rel_mse_mean: f64::NAN,
        rel_mse_stderr: f64::NAN,
        design_time_s: f64::NAN,
        apply_time_per_signal_s: f64::NAN,
        speedup_vs_full: f64::NAN,
        status,
    };
    let acc = match acc {
        Ok(a) => a,
        Err(e) => return failed(format!("error: {e}")),
    };
    match jackknife_ratio(&acc.num, &acc.den) {
        Ok((mean, se)) => ResultRow {
            method: label.to_string(),
            p,
            sigma_coeff,
            rel_mse_mean: mean,
            rel_mse_stderr: se,
            design_time_s: acc.design_time / acc.designs.max(1) as f64,
            apply_time_per_signal_s: acc.sketch_time / acc.signals.max(1) as f64,
            speedup_vs_full: if acc.sketch_time > 0.0 { acc.full_time / acc.sketch_time } else { f64::NAN },
            status: "ok".into(),
        },
        Err(e) => failed(format!("error: {e}")),
    }
}

fn canonical_order(a: &ResultRow, b: &ResultRow) -> Ordering {
    a.method.cmp(&b.method).then(a.p.cmp(&b.p)).then(a.sigma_coeff.total_cmp(&b.sigma_coeff))
}

/// [`run_experiment_with`] using options from the environment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    run_experiment_with(config, &RunOptions::from_env())
}

/// Runs the full factorial sweep. A failing cell is reported in its row's
/// `status` and does not stop the others; only an invalid configuration
/// fails the whole run.
pub fn run_experiment_with(config: &ExperimentConfig, opts: &RunOptions) -> Result<ResultTable> {
    config.validate(opts.allow_large)?;
    let labels = config.labels()?;
    let run = || {
        let cases: Vec<std::result::Result<GraphCase, String>> = (0..config.trials.n_graphs)
            .into_par_iter()
            .map(|g| prepare_graph(config, g).map_err(|e| e.to_string()))
            .collect();
        if let Some(n) = cases.iter().flatten().map(|c| c.basis.n()).next() {
            if n > LARGE_N && !opts.allow_large {
                return Err(Error::Precondition(format!("graph has n = {n} > {LARGE_N}; pass --large")));
            }
        }
        let mut cells = Vec::new();
        for &label in &labels {
            for &p in &config.p_values {
                for &s in &config.sigma_coeffs {
                    cells.push((label, p, s));
                }
            }
        }
        let mut rows: Vec<ResultRow> = cells
            .into_par_iter()
            .map(|(label, p, s)| {
                let acc = run_cell(config, &cases, label, p, s);
                if let Err(e) = &acc {
                    log::warn!("cell {label} p={p} sigma_coeff={s} failed: {e}");
                }
                finish_row(label, p, s, acc)
            })
            .collect();
        rows.sort_by(canonical_order);
        rows.dedup_by(|a, b| canonical_order(a, b) == Ordering::Equal);
        Ok(rows)
    };
    let rows = match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Precondition(format!("cannot build a pool of {t} threads: {e}")))?
            .install(run)?,
        None => run()?,
    };
    Ok(ResultTable {
        version: crate::VERSION.to_string(),
        master_seed: config.master_seed,
        config_sha256: config.hash(),
        rows,
    })
}
