//! Browser bindings: design a sampling set on a generated graph, trace the
//! analytic relative MSE against noise for several samplers, and follow the
//! greedy objective as the budget grows.
//!
//! Every export takes plain numbers and strings and returns a JSON string.
//! The `*_json` functions hold the logic and are callable from Rust as well.

use serde::Serialize;
use sketchsel::graph::{gen_er, gen_sbm, gen_sensor_knn_with_points, gen_smallworld, spectral_basis, Graph, SpectralBasis};
use sketchsel::samplers::{design, greedy_path, MethodLabel, SamplerSpec};
use sketchsel::signal::BandlimitedModel;
use sketchsel::sketch::{Direction, SketchProblem};
use sketchsel::DenseMatrix;
use wasm_bindgen::prelude::*;

/// Largest graph the page will build; the eigendecomposition runs on the main thread.
pub const MAX_NODES: usize = 300;

#[derive(Debug, Serialize)]
pub struct Layout {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `[i, j, weight]` with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Serialize)]
struct DesignView {
    layout: Layout,
    method: String,
    selected: Vec<usize>,
    objective: f64,
    rel_mse: f64,
}

#[derive(Debug, Serialize)]
struct Curve {
    method: String,
    rel_mse: Vec<Option<f64>>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct NoiseSweep {
    sigma_coeffs: Vec<f64>,
    curves: Vec<Curve>,
}

#[derive(Debug, Serialize)]
struct GreedyView {
    order: Vec<usize>,
    rel_mse: Vec<f64>,
}

/// A generated graph with its bandwidth-`k` basis and coordinates for drawing.
struct Scene {
    basis: SpectralBasis,
    layout: Layout,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn ring(n: usize, cx: f64, cy: f64, r: f64, x: &mut Vec<f64>, y: &mut Vec<f64>) {
    for i in 0..n {
        let t = std::f64::consts::TAU * i as f64 / n.max(1) as f64;
        x.push(cx + r * t.cos());
        y.push(cy + r * t.sin());
    }
}

fn edges_of(g: &Graph) -> Vec<(usize, usize, f64)> {
    let w = g.weights();
    let n = g.n();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if w[(i, j)] > 0.0 {
                out.push((i, j, w[(i, j)]));
            }
        }
    }
    out
}

fn build_scene(model: &str, n: usize, k: usize, seed: u64) -> Result<Scene, String> {
    if n < 4 || n > MAX_NODES {
        return Err(format!("n must be between 4 and {MAX_NODES}"));
    }
    if k == 0 || k > n {
        return Err(format!("k must be between 1 and n = {n}"));
    }
    let (graph, x, y) = match model {
        "sbm" => {
            let c = 4;
            let mut sizes = vec![n / c; c];
            sizes[c - 1] += n % c;
            let g = gen_sbm(n, &sizes, 0.8, 0.2, seed).map_err(err)?;
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for (b, &size) in sizes.iter().enumerate() {
                let t = std::f64::consts::TAU * b as f64 / c as f64 + std::f64::consts::FRAC_PI_4;
                ring(size, 0.5 + 0.27 * t.cos(), 0.5 + 0.27 * t.sin(), 0.17, &mut x, &mut y);
            }
            (g, x, y)
        }
        "er" => {
            let g = gen_er(n, 0.1, seed).map_err(err)?;
            let (mut x, mut y) = (Vec::new(), Vec::new());
            ring(n, 0.5, 0.5, 0.45, &mut x, &mut y);
            (g, x, y)
        }
        "sw" => {
            let g = gen_smallworld(n, 0.2, 0.7, seed).map_err(err)?;
            let (mut x, mut y) = (Vec::new(), Vec::new());
            ring(n, 0.5, 0.5, 0.45, &mut x, &mut y);
            (g, x, y)
        }
        "sensor" => {
            let (g, pts) = gen_sensor_knn_with_points(n, 4, seed).map_err(err)?;
            let x = pts.iter().map(|p| 0.05 + 0.9 * p.0).collect();
            let y = pts.iter().map(|p| 0.05 + 0.9 * p.1).collect();
            (g, x, y)
        }
        other => return Err(format!("unknown graph model '{other}' (sbm, er, sw, sensor)")),
    };
    let basis = spectral_basis(graph.weights(), k).map_err(err)?;
    Ok(Scene { basis, layout: Layout { x, y, edges: edges_of(&graph) } })
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(err)
}

/// GFT problem on the scene: `H = V_kᵀ`, white bandlimited signals and white
/// noise at `sigma_coeff` times the mean signal energy `k`.
fn gft_problem(scene: &Scene, direction: Direction, constrained: bool, p: usize, sigma_coeff: f64) -> Result<SketchProblem, String> {
    let n = scene.basis.n();
    if p == 0 || p > n {
        return Err(format!("p must be between 1 and n = {n}"));
    }
    if !(sigma_coeff > 0.0) || !sigma_coeff.is_finite() {
        return Err("noise coefficient must be positive".into());
    }
    let h = scene.basis.v_k().transpose();
    let rx = BandlimitedModel::white(scene.basis.clone()).covariance();
    let rw = DenseMatrix::identity(n).scale(sigma_coeff * scene.basis.k() as f64);
    SketchProblem::new(direction, constrained, h, rx, rw, p).map_err(err)
}

fn run_design(scene: &Scene, label: MethodLabel, problem: &SketchProblem, seed: u64) -> Result<(Vec<usize>, f64), String> {
    let spec = SamplerSpec::new(label.method).with_seed(seed);
    let outcome = design(problem, &spec, Some(&scene.basis)).map_err(err)?;
    Ok((outcome.indices, outcome.objective))
}

#[allow(clippy::too_many_arguments)]
pub fn design_json(
    model: &str,
    n: usize,
    k: usize,
    p: usize,
    sigma_coeff: f64,
    method: &str,
    direction: &str,
    seed: u64,
) -> Result<String, String> {
    let label: MethodLabel = method.parse().map_err(err)?;
    let scene = build_scene(model, n, k, seed)?;
    let problem = gft_problem(&scene, parse_direction(direction)?, label.constrained, p, sigma_coeff)?;
    let (selected, objective) = run_design(&scene, label, &problem, seed)?;
    let view = DesignView {
        method: label.to_string(),
        selected,
        objective,
        rel_mse: objective / problem.base_trace(),
        layout: scene.layout,
    };
    serde_json::to_string(&view).map_err(err)
}

/// Analytic relative MSE of each method at `steps` log-spaced noise levels.
/// A method that fails reports its error and null values; the others still run.
#[allow(clippy::too_many_arguments)]
pub fn noise_sweep_json(
    model: &str,
    n: usize,
    k: usize,
    p: usize,
    direction: &str,
    methods: &str,
    log10_min: f64,
    log10_max: f64,
    steps: usize,
    seed: u64,
) -> Result<String, String> {
    if steps < 2 || steps > 60 {
        return Err("steps must be between 2 and 60".into());
    }
    if !(log10_min < log10_max) {
        return Err("the noise range is empty".into());
    }
    let direction = parse_direction(direction)?;
    let labels: Vec<MethodLabel> =
        methods.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| s.parse().map_err(err)).collect::<Result<_, _>>()?;
    if labels.is_empty() {
        return Err("no methods given".into());
    }
    let scene = build_scene(model, n, k, seed)?;
    let sigma_coeffs: Vec<f64> = (0..steps)
        .map(|i| 10f64.powf(log10_min + (log10_max - log10_min) * i as f64 / (steps - 1) as f64))
        .collect();
    let curves = labels
        .into_iter()
        .map(|label| {
            let mut rel_mse = Vec::with_capacity(steps);
            let mut error = None;
            for &s in &sigma_coeffs {
                let value = gft_problem(&scene, direction, label.constrained, p, s)
                    .and_then(|pr| run_design(&scene, label, &pr, seed).map(|(_, obj)| obj / pr.base_trace()));
                match value {
                    Ok(v) => rel_mse.push(Some(v)),
                    Err(e) => {
                        rel_mse.push(None);
                        error.get_or_insert(e);
                    }
                }
            }
            Curve { method: label.to_string(), rel_mse, error }
        })
        .collect();
    serde_json::to_string(&NoiseSweep { sigma_coeffs, curves }).map_err(err)
}

/// Order in which greedy adds nodes and the relative MSE after each addition.
pub fn greedy_path_json(
    model: &str,
    n: usize,
    k: usize,
    p_max: usize,
    sigma_coeff: f64,
    direction: &str,
    seed: u64,
) -> Result<String, String> {
    let scene = build_scene(model, n, k, seed)?;
    let problem = gft_problem(&scene, parse_direction(direction)?, false, p_max, sigma_coeff)?;
    let (sel, path) = greedy_path(&problem).map_err(err)?;
    let base = problem.base_trace();
    let view = GreedyView { order: sel.indices().to_vec(), rel_mse: path.iter().map(|v| v / base).collect() };
    serde_json::to_string(&view).map_err(err)
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Graph layout, selected nodes, objective and relative MSE for one design.
#[wasm_bindgen(js_name = designOnGraph)]
#[allow(clippy::too_many_arguments)]
pub fn design_on_graph(
    model: &str,
    n: usize,
    k: usize,
    p: usize,
    sigma_coeff: f64,
    method: &str,
    direction: &str,
    seed: u32,
) -> Result<String, JsValue> {
    js(design_json(model, n, k, p, sigma_coeff, method, direction, seed as u64))
}

/// Relative MSE against the noise coefficient for a comma-separated list of methods.
#[wasm_bindgen(js_name = noiseSweep)]
#[allow(clippy::too_many_arguments)]
pub fn noise_sweep(
    model: &str,
    n: usize,
    k: usize,
    p: usize,
    direction: &str,
    methods: &str,
    log10_min: f64,
    log10_max: f64,
    steps: usize,
    seed: u32,
) -> Result<String, JsValue> {
    js(noise_sweep_json(model, n, k, p, direction, methods, log10_min, log10_max, steps, seed as u64))
}

/// Greedy selection order and the relative MSE along it.
#[wasm_bindgen(js_name = greedyPath)]
pub fn greedy_path_view(
    model: &str,
    n: usize,
    k: usize,
    p_max: usize,
    sigma_coeff: f64,
    direction: &str,
    seed: u32,
) -> Result<String, JsValue> {
    js(greedy_path_json(model, n, k, p_max, sigma_coeff, direction, seed as u64))
}
