//! Sample-selection strategies: exhaustive search, greedy, the two
//! row-norm heuristics, the relaxation with two roundings, and the
//! random baselines.
//!
//! Ties break toward the lowest node index everywhere.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpectralBasis;
use crate::linalg::inv_sqrt_spd;
use crate::rng::{substream, StreamRng};
use crate::sketch::{DesignOutcome, Relaxation, Selection, SketchProblem};
use crate::timing::Stopwatch;

/// Largest number of subsets the exhaustive search will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

/// Row norm used to weight nodes in the spectral-leverage baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdsNorm {
    L1,
    L2,
    Inf,
}

impl EdsNorm {
    fn apply(self, row: &[f64]) -> f64 {
        match self {
            EdsNorm::L1 => row.iter().map(|v| v.abs()).sum(),
            EdsNorm::L2 => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
            EdsNorm::Inf => row.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Exhaustive,
    Greedy,
    Nbh,
    Nah,
    RelaxThreshold,
    RelaxRandom,
    Eds(EdsNorm),
    Uniform,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Greedy,
        Method::Nbh,
        Method::Nah,
        Method::RelaxThreshold,
        Method::RelaxRandom,
        Method::Eds(EdsNorm::L1),
        Method::Eds(EdsNorm::L2),
        Method::Eds(EdsNorm::Inf),
        Method::Uniform,
        Method::Exhaustive,
    ];

    pub fn is_randomized(self) -> bool {
        matches!(self, Method::RelaxRandom | Method::Eds(_) | Method::Uniform)
    }

    /// Methods whose selection depends on the problem's objective (and so on
    /// the column-sampling flag).
    pub fn supports_constrained(self) -> bool {
        !matches!(self, Method::Eds(_) | Method::Uniform)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Exhaustive => "exhaustive",
            Method::Greedy => "greedy",
            Method::Nbh => "nbh",
            Method::Nah => "nah",
            Method::RelaxThreshold => "relax-thresh",
            Method::RelaxRandom => "relax-random",
            Method::Eds(EdsNorm::L1) => "eds-1",
            Method::Eds(EdsNorm::L2) => "eds-2",
            Method::Eds(EdsNorm::Inf) => "eds-inf",
            Method::Uniform => "uniform",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| {
                let names: Vec<String> = Method::ALL.iter().map(Method::to_string).collect();
                Error::Parse(format!("unknown method '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

/// A method name optionally prefixed with `col-` for the column-sampling variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MethodLabel {
    pub method: Method,
    pub constrained: bool,
}

impl FromStr for MethodLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (constrained, name) = match s.strip_prefix("col-") {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let method: Method = name.parse()?;
        if constrained && !method.supports_constrained() {
            return Err(Error::Parse(format!("method '{name}' has no column-sampling variant")));
        }
        Ok(MethodLabel { method, constrained })
    }
}

impl fmt::Display for MethodLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.constrained {
            write!(f, "col-{}", self.method)
        } else {
            write!(f, "{}", self.method)
        }
    }
}

/// Projected-gradient settings for the relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxParams {
    pub max_iters: usize,
    /// First trial step, as a fraction of one unit of `c` per unit of the
    /// largest gradient entry.
    pub step_init: f64,
    pub tol: f64,
    /// `None` uses half the smallest eigenvalue of `R_x + R_w`.
    pub alpha: Option<f64>,
}

impl Default for RelaxParams {
    fn default() -> Self {
        RelaxParams { max_iters: 500, step_init: 1.0, tol: 1e-6, alpha: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSpec {
    pub method: Method,
    pub seed: Option<u64>,
    pub relax: RelaxParams,
}

impl SamplerSpec {
    pub fn new(method: Method) -> Self {
        SamplerSpec { method, seed: None, relax: RelaxParams::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Precondition(format!("method '{}' needs a seed", self.method)))
    }
}

/// Runs a sampler on `problem` with its budget `p`. Spectral-leverage
/// methods need `basis`.
pub fn select(problem: &SketchProblem, spec: &SamplerSpec, basis: Option<&SpectralBasis>) -> Result<Selection> {
    let p = problem.p();
    match spec.method {
        Method::Exhaustive => exhaustive_select(problem),
        Method::Greedy => greedy_select(problem),
        Method::Nbh => Ok(nbh_select(problem)),
        Method::Nah => nah_select(problem),
        Method::RelaxThreshold => relax_select(problem, &spec.relax, Rounding::Threshold),
        Method::RelaxRandom => relax_select(problem, &spec.relax, Rounding::Random(spec.seed()?)),
        Method::Eds(norm) => {
            let basis = basis.ok_or_else(|| {
                Error::Precondition(format!("method '{}' needs the spectral basis of the graph", spec.method))
            })?;
            if basis.n() != problem.n() {
                return Err(Error::Dimension(format!("basis has n = {}, problem has n = {}", basis.n(), problem.n())));
            }
            eds_select(basis, p, norm, spec.seed()?)
        }
        Method::Uniform => uniform_random_select(problem.n(), p, spec.seed()?),
    }
}

/// [`select`] followed by scoring and sketch construction, timed end to end.
pub fn design(problem: &SketchProblem, spec: &SamplerSpec, basis: Option<&SpectralBasis>) -> Result<DesignOutcome> {
    let clock = Stopwatch::start();
    let sel = select(problem, spec, basis)?;
    let sketch = problem.sketch(&sel)?;
    let wall = clock.seconds();
    let label = MethodLabel { method: spec.method, constrained: problem.constrained() };
    let mut out = DesignOutcome::evaluate(problem, &label.to_string(), &sel, wall)?;
    debug_assert_eq!(out.sketch_matrix().ok().as_ref(), Some(&sketch));
    out.wall_time_s = wall;
    Ok(out)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return acc;
        }
    }
    acc
}

/// Minimum over all `p`-subsets, enumerated lexicographically; the first
/// minimizer wins ties.
pub fn exhaustive_select(problem: &SketchProblem) -> Result<Selection> {
    let (n, p) = (problem.n(), problem.p());
    let count = binomial(n, p);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::GuardExceeded(format!(
            "exhaustive search over C({n}, {p}) = {count} subsets exceeds the limit of {EXHAUSTIVE_LIMIT}"
        )));
    }
    let mut combo: Vec<usize> = (0..p).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let v = problem.objective(&Selection::new(n, combo.clone())?)?;
        if best.as_ref().map_or(true, |(b, _)| v < *b) {
            best = Some((v, combo.clone()));
        }
        // Next combination in lexicographic order.
        let Some(i) = (0..p).rev().find(|&i| combo[i] < n - p + i) else {
            break;
        };
        combo[i] += 1;
        for j in i + 1..p {
            combo[j] = combo[j - 1] + 1;
        }
    }
    Selection::new(n, best.expect("at least one subset").1)
}

/// Greedy selection and the objective after each addition.
pub fn greedy_path(problem: &SketchProblem) -> Result<(Selection, Vec<f64>)> {
    let (n, p) = (problem.n(), problem.p());
    let mut chosen: Vec<usize> = Vec::with_capacity(p);
    let mut taken = vec![false; n];
    let mut path = Vec::with_capacity(p);
    for _ in 0..p {
        let mut best: Option<(f64, usize)> = None;
        for cand in (0..n).filter(|&i| !taken[i]) {
            chosen.push(cand);
            let v = problem.objective(&Selection::new(n, chosen.clone())?)?;
            chosen.pop();
            if best.map_or(true, |(b, _)| v < b) {
                best = Some((v, cand));
            }
        }
        let (v, i) = best.expect("p <= n leaves a candidate");
        chosen.push(i);
        taken[i] = true;
        path.push(v);
    }
    Ok((Selection::new(n, chosen)?, path))
}

/// Adds, one at a time, the node whose inclusion lowers the exact objective most.
pub fn greedy_select(problem: &SketchProblem) -> Result<Selection> {
    Ok(greedy_path(problem)?.0)
}

/// Indices of the `p` largest scores, ties to the lowest index, in rank order.
pub fn top_p(scores: &[f64], p: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(p);
    order
}

/// Largest row norms of `R_x Hᵀ` (direct) or `R_x Gᵀ` (inverse).
pub fn nbh_select(problem: &SketchProblem) -> Selection {
    let idx = top_p(&problem.cross().row_norms(), problem.p());
    Selection::new(problem.n(), idx).expect("top_p yields distinct in-range indices")
}

/// Largest row norms of `(R_x + R_w)^{-1/2} R_x Hᵀ` (or `R_x Gᵀ`).
pub fn nah_select(problem: &SketchProblem) -> Result<Selection> {
    let whitened = inv_sqrt_spd(problem.sigma())?.matmul(problem.cross())?;
    Selection::new(problem.n(), top_p(&whitened.row_norms(), problem.p()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    Threshold,
    Random(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxSolution {
    pub c: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Euclidean projection onto `{c ∈ [0,1]ⁿ : Σc = p}` by bisection on the shift `τ`.
pub fn project_capped_simplex(v: &[f64], p: f64) -> Vec<f64> {
    let n = v.len();
    assert!((0.0..=n as f64).contains(&p), "budget {p} outside [0, {n}]");
    let mass = |tau: f64| v.iter().map(|x| (x - tau).clamp(0.0, 1.0)).sum::<f64>();
    let mut lo = v.iter().fold(f64::INFINITY, |m, &x| m.min(x)) - 1.0;
    let mut hi = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    if n == 0 {
        return Vec::new();
    }
    // mass(lo) = n >= p, mass(hi) = 0 <= p, non-increasing in τ.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = mass(mid);
        if (m - p).abs() <= 1e-13 {
            lo = mid;
            hi = mid;
            break;
        }
        if m > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let tau = 0.5 * (lo + hi);
    let mut c: Vec<f64> = v.iter().map(|x| (x - tau).clamp(0.0, 1.0)).collect();
    // Spread the bisection residual over the free coordinates.
    let resid = p - c.iter().sum::<f64>();
    let free: Vec<usize> = (0..n).filter(|&i| c[i] > 0.0 && c[i] < 1.0).collect();
    if !free.is_empty() && resid != 0.0 {
        let share = resid / free.len() as f64;
        for i in free {
            c[i] = (c[i] + share).clamp(0.0, 1.0);
        }
    }
    c
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes the relaxed objective over the capped simplex by projected
/// gradient with Armijo backtracking.
pub fn relax_solve(problem: &SketchProblem, params: &RelaxParams) -> Result<RelaxSolution> {
    const ARMIJO: f64 = 1e-4;
    const MAX_HALVINGS: usize = 10;
    let relax = Relaxation::new(problem, params.alpha)?;
    let n = problem.n();
    let p = problem.p() as f64;
    let mut c = vec![p / n as f64; n];
    let (mut f, mut g) = relax.value_and_gradient(&c)?;
    let gmax = max_abs(&g);
    if gmax == 0.0 {
        return Ok(RelaxSolution { c, value: f, iterations: 0, converged: true });
    }
    let mut step = params.step_init / gmax;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iters {
        iterations += 1;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = c.iter().zip(&g).map(|(ci, gi)| ci - step * gi).collect();
            let next = project_capped_simplex(&trial, p);
            let decrease: f64 = g.iter().zip(next.iter().zip(&c)).map(|(gi, (a, b))| gi * (a - b)).sum();
            let f_next = relax.value(&next)?;
            if f_next <= f + ARMIJO * decrease {
                accepted = Some((next, f_next));
                break;
            }
            if max_abs(&next.iter().zip(&c).map(|(a, b)| a - b).collect::<Vec<_>>()) <= params.tol {
                // The step is already below tolerance; no further progress is resolvable.
                converged = true;
                break;
            }
            step *= 0.5;
        }
        let Some((next, f_next)) = accepted else {
            if !converged {
                log::warn!(
                    "relaxation stalled after {iterations} iterations: {MAX_HALVINGS} halvings without decrease; returning best iterate"
                );
            }
            break;
        };
        let delta = next.iter().zip(&c).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        c = next;
        f = f_next;
        g = relax.value_and_gradient(&c)?.1;
        if delta <= params.tol {
            converged = true;
            break;
        }
        step *= 2.0;
    }
    if !converged && iterations >= params.max_iters {
        log::warn!("relaxation reached {} iterations without meeting tolerance {:e}", params.max_iters, params.tol);
    }
    Ok(RelaxSolution { c, value: f, iterations, converged })
}

/// Rounds a relaxed solution to `p` nodes.
pub fn round_relaxed(c: &[f64], p: usize, rounding: Rounding) -> Result<Selection> {
    let idx = match rounding {
        Rounding::Threshold => top_p(c, p),
        Rounding::Random(seed) => {
            let mut rng = substream(seed, "relax-round", &[]);
            weighted_without_replacement(c, p, &mut rng)
        }
    };
    Selection::new(c.len(), idx)
}

/// Relaxation followed by rounding.
pub fn relax_select(problem: &SketchProblem, params: &RelaxParams, rounding: Rounding) -> Result<Selection> {
    let sol = relax_solve(problem, params)?;
    round_relaxed(&sol.c, problem.p(), rounding)
}

/// Draws `p` distinct indices one at a time with probability proportional to
/// the remaining weights; once the positive weight is exhausted the rest are
/// drawn uniformly.
pub fn weighted_without_replacement(weights: &[f64], p: usize, rng: &mut StreamRng) -> Vec<usize> {
    let n = weights.len();
    assert!(p <= n, "cannot draw {p} of {n}");
    let mut w: Vec<f64> = weights.iter().map(|&x| if x.is_finite() && x > 0.0 { x } else { 0.0 }).collect();
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(p);
    while out.len() < p {
        let total: f64 = w.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &wi) in w.iter().enumerate() {
                if wi > 0.0 {
                    acc += wi;
                    pick = Some(i);
                    if u < acc {
                        break;
                    }
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        taken[pick] = true;
        w[pick] = 0.0;
        out.push(pick);
    }
    out
}

/// Nodes drawn with probability proportional to the row norms of `V_k`.
pub fn eds_select(basis: &SpectralBasis, p: usize, norm: EdsNorm, seed: u64) -> Result<Selection> {
    let n = basis.n();
    if p == 0 || p > n {
        return Err(Error::Model(format!("budget p = {p} must satisfy 1 <= p <= n = {n}")));
    }
    let vk = basis.v_k();
    let kappa: Vec<f64> = (0..n).map(|i| norm.apply(vk.row(i))).collect();
    let mut rng = substream(seed, "eds", &[]);
    Selection::new(n, weighted_without_replacement(&kappa, p, &mut rng))
}

/// A uniformly random `p`-subset.
pub fn uniform_random_select(n: usize, p: usize, seed: u64) -> Result<Selection> {
    if p > n {
        return Err(Error::Model(format!("budget p = {p} exceeds n = {n}")));
    }
    let mut rng = substream(seed, "uniform", &[]);
    Selection::new(n, rand::seq::index::sample(&mut rng, n, p).into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_sbm, spectral_basis};
    use crate::linalg::DenseMatrix;
    use crate::rng::Gaussian;
    use crate::sketch::Direction;
    use proptest::prelude::*;

    fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut g = Gaussian::new(substream(seed, "sampler-test", &[]));
        let mut data = vec![0.0; rows * cols];
        g.fill(&mut data);
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    fn random_problem(n: usize, m: usize, p: usize, dir: Direction, constrained: bool, seed: u64) -> SketchProblem {
        let a = gaussian_matrix(n, n, seed);
        let rx = a.matmul_t(&a).unwrap().scale(1.0 / n as f64).symmetrized();
        let rw = DenseMatrix::identity(n).scale(0.1);
        let h = gaussian_matrix(m, n, seed + 1000);
        SketchProblem::new(dir, constrained, h, rx, rw, p).unwrap()
    }

    fn diag_problem(rx: &[f64], rw: &[f64], p: usize) -> SketchProblem {
        let n = rx.len();
        SketchProblem::new(
            Direction::Direct,
            false,
            DenseMatrix::identity(n),
            DenseMatrix::from_diag(rx),
            DenseMatrix::from_diag(rw),
            p,
        )
        .unwrap()
    }

    fn spec(method: Method) -> SamplerSpec {
        SamplerSpec::new(method).with_seed(7)
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        let l: MethodLabel = "col-greedy".parse().unwrap();
        assert!(l.constrained && l.method == Method::Greedy);
        assert_eq!(l.to_string(), "col-greedy");
        assert!("col-uniform".parse::<MethodLabel>().is_err());
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn exhaustive_cases() {
        let pr = random_problem(3, 2, 3, Direction::Direct, false, 1);
        assert_eq!(exhaustive_select(&pr).unwrap().indices(), &[0, 1, 2]);

        let mut rx = DenseMatrix::zeros(4, 4);
        rx[(2, 2)] = 1.0;
        let pr = SketchProblem::new(
            Direction::Direct,
            false,
            DenseMatrix::identity(4),
            rx,
            DenseMatrix::identity(4).scale(1e-6),
            1,
        )
        .unwrap();
        assert_eq!(exhaustive_select(&pr).unwrap().indices(), &[2]);

        let big = random_problem(40, 2, 20, Direction::Direct, false, 2);
        assert!(matches!(exhaustive_select(&big), Err(Error::GuardExceeded(_))));
        assert_eq!(binomial(8, 2), 28);
        assert_eq!(binomial(40, 20), 137_846_528_820);
    }

    #[test]
    fn greedy_matches_exhaustive_at_one() {
        for seed in 0..10 {
            let pr = random_problem(8, 3, 1, Direction::Direct, false, seed);
            assert_eq!(greedy_select(&pr).unwrap(), exhaustive_select(&pr).unwrap());
        }
    }

    #[test]
    fn greedy_on_diagonal_problem_follows_scalar_reduction() {
        let rx = [1.0, 4.0, 2.0, 3.0, 0.5];
        let rw = [0.1, 4.0, 0.5, 0.2, 0.1];
        let pr = diag_problem(&rx, &rw, 5);
        let gain: Vec<f64> = rx.iter().zip(&rw).map(|(x, w)| x * x / (x + w)).collect();
        let want = top_p(&gain, 5);
        assert_eq!(greedy_select(&pr).unwrap().indices(), want.as_slice());

        // Equal noise: the per-node reduction is monotone in R_x,ii for both
        // the exact and the relaxed objective.
        let pr3 = diag_problem(&rx, &[0.5; 5], 3);
        let relax = relax_select(&pr3, &RelaxParams::default(), Rounding::Threshold).unwrap();
        assert_eq!(relax.sorted(), greedy_select(&pr3).unwrap().sorted());
        assert_eq!(relax.sorted().indices(), &[1, 2, 3]);
    }

    #[test]
    fn greedy_versus_exhaustive_over_instances() {
        let mut worst: f64 = 1.0;
        for seed in 0..100 {
            let pr = random_problem(8, 3, 2, Direction::Direct, false, 100 + seed);
            let g = pr.objective(&greedy_select(&pr).unwrap()).unwrap();
            let e = pr.objective(&exhaustive_select(&pr).unwrap()).unwrap();
            assert!(g >= e - 1e-12);
            worst = worst.max(g / e);
        }
        eprintln!("worst greedy/exhaustive ratio over 100 instances: {worst:.4}");
    }

    #[test]
    fn greedy_path_is_nested_and_non_increasing() {
        let pr = random_problem(10, 3, 6, Direction::Inverse, false, 5);
        let (sel, path) = greedy_path(&pr).unwrap();
        for t in 1..path.len() {
            assert!(path[t] <= path[t - 1] + 1e-12);
        }
        let (short, _) = greedy_path(&pr.with_p(3).unwrap()).unwrap();
        assert_eq!(short.indices(), &sel.indices()[..3]);
    }

    #[test]
    fn nbh_cases() {
        let pr = diag_problem(&[3.0, 1.0, 2.0], &[1.0; 3], 2);
        assert_eq!(nbh_select(&pr).indices(), &[0, 2]);
        let zero = SketchProblem::new(
            Direction::Direct,
            false,
            DenseMatrix::zeros(2, 4),
            DenseMatrix::identity(4),
            DenseMatrix::identity(4),
            3,
        )
        .unwrap();
        assert_eq!(nbh_select(&zero).indices(), &[0, 1, 2]);

        let pr = random_problem(12, 3, 4, Direction::Direct, false, 9);
        let m = pr.rx().matmul_t(pr.h()).unwrap();
        let mut pairs: Vec<(f64, usize)> =
            (0..12).map(|i| (m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt(), i)).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let want: Vec<usize> = pairs[..4].iter().map(|x| x.1).collect();
        assert_eq!(nbh_select(&pr).indices(), want.as_slice());
    }

    #[test]
    fn nah_cases() {
        let pr = diag_problem(&[4.0, 4.0], &[12.0, 1.0], 1);
        assert_eq!(nah_select(&pr).unwrap().indices(), &[1]);
        assert_eq!(nbh_select(&pr).indices(), &[0]);

        // R_x + R_w = βI: whitening is a scalar, rankings agree.
        let a = gaussian_matrix(6, 6, 3);
        let rx = a.matmul_t(&a).unwrap().scale(1.0 / 6.0).symmetrized();
        let beta = crate::linalg::sym_eig(&rx).unwrap().max_value() + 1.0;
        let rw = DenseMatrix::identity(6).scale(beta).sub(&rx).unwrap().symmetrized();
        let pr = SketchProblem::new(Direction::Direct, false, gaussian_matrix(2, 6, 4), rx, rw, 3).unwrap();
        assert_eq!(nah_select(&pr).unwrap(), nbh_select(&pr));

        let pr = random_problem(10, 3, 4, Direction::Direct, false, 11);
        let w = inv_sqrt_spd(pr.sigma()).unwrap().matmul(&pr.rx().matmul_t(pr.h()).unwrap()).unwrap();
        assert_eq!(nah_select(&pr).unwrap().indices(), top_p(&w.row_norms(), 4).as_slice());
    }

    #[test]
    fn projection_cases() {
        let c = project_capped_simplex(&[0.9, 0.8, 0.1], 1.0);
        for (a, b) in c.iter().zip([0.55, 0.45, 0.0]) {
            assert!((a - b).abs() < 1e-10);
        }
        let feasible = [0.2, 0.5, 0.3, 1.0];
        let c = project_capped_simplex(&feasible, 2.0);
        for (a, b) in c.iter().zip(feasible) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn projection_is_feasible(v in prop::collection::vec(-3.0f64..3.0, 1..20), frac in 0.0f64..1.0) {
            let p = (frac * v.len() as f64).floor();
            let c = project_capped_simplex(&v, p);
            prop_assert!(c.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((c.iter().sum::<f64>() - p).abs() <= 1e-10);
        }

        #[test]
        fn samplers_return_valid_selections(seed in 0u64..1000, p in 1usize..6) {
            let pr = random_problem(8, 2, p, Direction::Direct, false, seed);
            let g = gen_sbm(8, &[4, 4], 0.8, 0.2, seed).unwrap();
            let basis = spectral_basis(g.weights(), 3).unwrap();
            for m in Method::ALL {
                let s = select(&pr, &SamplerSpec::new(m).with_seed(seed), Some(&basis)).unwrap();
                prop_assert_eq!(s.p(), p);
                prop_assert!(Selection::new(8, s.indices().to_vec()).is_ok());
            }
        }
    }

    #[test]
    fn exhaustive_lower_bounds_every_method() {
        let g = gen_sbm(8, &[4, 4], 0.8, 0.2, 3).unwrap();
        let basis = spectral_basis(g.weights(), 3).unwrap();
        for seed in 0..20 {
            for (dir, constrained) in [
                (Direction::Direct, false),
                (Direction::Inverse, false),
                (Direction::Direct, true),
                (Direction::Inverse, true),
            ] {
                let pr = random_problem(8, 3, 3, dir, constrained, 300 + seed);
                let best = pr.objective(&exhaustive_select(&pr).unwrap()).unwrap();
                for m in Method::ALL {
                    let s = select(&pr, &spec(m), Some(&basis)).unwrap();
                    assert!(pr.objective(&s).unwrap() >= best - 1e-9, "{m} beat exhaustive");
                }
            }
        }
    }

    #[test]
    fn relaxed_minimum_lower_bounds_exhaustive() {
        for seed in 0..10 {
            for dir in [Direction::Direct, Direction::Inverse] {
                let pr = random_problem(8, 3, 2, dir, false, 400 + seed);
                let sol = relax_solve(&pr, &RelaxParams::default()).unwrap();
                let best = pr.objective(&exhaustive_select(&pr).unwrap()).unwrap();
                assert!(sol.value <= best + 1e-9 * best.max(1.0), "relaxed {} > exhaustive {best}", sol.value);
                assert!((sol.c.iter().sum::<f64>() - 2.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn relax_full_budget_selects_everything() {
        let pr = random_problem(5, 2, 5, Direction::Direct, false, 1);
        let sol = relax_solve(&pr, &RelaxParams::default()).unwrap();
        assert!(sol.c.iter().all(|&c| (c - 1.0).abs() < 1e-12));
        let sel = relax_select(&pr, &RelaxParams::default(), Rounding::Random(3)).unwrap();
        assert_eq!(sel.sorted().indices(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn relax_random_rounding_is_seeded() {
        let c = [0.5, 0.2, 0.9, 0.0, 0.4];
        let a = round_relaxed(&c, 3, Rounding::Random(11)).unwrap();
        let b = round_relaxed(&c, 3, Rounding::Random(11)).unwrap();
        assert_eq!(a, b);
        assert!(!a.indices().contains(&3));
        assert_eq!(round_relaxed(&c, 2, Rounding::Threshold).unwrap().indices(), &[2, 0]);
        assert_eq!(round_relaxed(&[0.5, 0.5, 0.5], 2, Rounding::Threshold).unwrap().indices(), &[0, 1]);
    }

    /// Chi-square critical value, 7 degrees of freedom, upper tail 0.001.
    const CHI2_7_999: f64 = 24.322;

    #[test]
    fn eds_with_uniform_rows_is_uniform() {
        // Sylvester-Hadamard eigenvectors: every row of V_k has the same norms.
        let n = 8;
        let mut h = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                h[(i, j)] = if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 } / (n as f64).sqrt();
            }
        }
        let lam = DenseMatrix::from_diag(&(0..n).map(|i| (n - i) as f64).collect::<Vec<_>>());
        let shift = h.matmul(&lam).unwrap().matmul_t(&h).unwrap().symmetrized();
        let basis = spectral_basis(&shift, 3).unwrap();
        let draws = 100_000;
        let mut counts = [0usize; 8];
        for t in 0..draws {
            let s = eds_select(&basis, 1, EdsNorm::L2, t as u64).unwrap();
            counts[s.indices()[0]] += 1;
        }
        let expect = draws as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        assert!(chi2 < CHI2_7_999, "chi-square {chi2}");
    }

    #[test]
    fn eds_zero_row_and_norm_rankings() {
        // Basis vectors supported away from node 3.
        let vk = DenseMatrix::from_rows(&[&[0.6, 0.0], &[0.8, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        let shift = vk.matmul_t(&vk).unwrap();
        let basis = spectral_basis(&shift, 2).unwrap();
        for seed in 0..50 {
            let s = eds_select(&basis, 3, EdsNorm::L2, seed).unwrap();
            assert!(!s.indices().contains(&3));
            let s = eds_select(&basis, 4, EdsNorm::L1, seed).unwrap();
            assert_eq!(s.indices()[3], 3);
        }

        // Row a = (0.9, 0, 0) has the largest ℓ∞ norm; row b = (0.6, 0.6, 0.6)
        // the largest ℓ1 and ℓ2 norms.
        let kappa_rows = [[0.9, 0.0, 0.0], [0.6, 0.6, 0.6]];
        let inf: Vec<f64> = kappa_rows.iter().map(|r| EdsNorm::Inf.apply(r)).collect();
        let l2: Vec<f64> = kappa_rows.iter().map(|r| EdsNorm::L2.apply(r)).collect();
        assert_eq!(top_p(&inf, 1), vec![0]);
        assert_eq!(top_p(&l2, 1), vec![1]);
    }

    #[test]
    fn weighted_draw_fills_uniformly_when_weights_run_out() {
        let mut rng = substream(1, "t", &[]);
        let out = weighted_without_replacement(&[0.0, 2.0, 0.0, 0.0], 3, &mut rng);
        assert_eq!(out[0], 1);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn uniform_cases() {
        assert_eq!(uniform_random_select(5, 5, 1).unwrap().sorted().indices(), &[0, 1, 2, 3, 4]);
        assert_eq!(uniform_random_select(9, 4, 3).unwrap(), uniform_random_select(9, 4, 3).unwrap());
        let (n, p, trials) = (10, 3, 100_000);
        let mut counts = vec![0usize; n];
        for t in 0..trials {
            for &i in uniform_random_select(n, p, t as u64).unwrap().indices() {
                counts[i] += 1;
            }
        }
        let q = p as f64 / n as f64;
        let mean = trials as f64 * q;
        let sd = (trials as f64 * q * (1.0 - q)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 4.0 * sd, "count {c}");
        }
    }

    #[test]
    fn randomized_methods_need_a_seed() {
        let pr = random_problem(6, 2, 2, Direction::Direct, false, 1);
        assert!(matches!(select(&pr, &SamplerSpec::new(Method::Uniform), None), Err(Error::Precondition(_))));
        assert!(matches!(select(&pr, &spec(Method::Eds(EdsNorm::L2)), None), Err(Error::Precondition(_))));
    }

    #[test]
    fn deterministic_methods_are_permutation_equivariant() {
        let n = 7;
        let pr = random_problem(n, 3, 3, Direction::Direct, false, 77);
        let perm = [4, 0, 6, 2, 5, 1, 3];
        // Node i of the permuted problem is node perm[i] of the original.
        let pmat = {
            let mut m = DenseMatrix::zeros(n, n);
            for (i, &j) in perm.iter().enumerate() {
                m[(i, j)] = 1.0;
            }
            m
        };
        let conj = |a: &DenseMatrix| pmat.matmul(a).unwrap().matmul_t(&pmat).unwrap();
        let permuted = SketchProblem::new(
            Direction::Direct,
            false,
            pr.h().matmul_t(&pmat).unwrap(),
            conj(pr.rx()),
            conj(pr.rw()),
            3,
        )
        .unwrap();
        for m in [Method::Greedy, Method::Nbh, Method::Nah, Method::RelaxThreshold] {
            let a = select(&pr, &spec(m), None).unwrap();
            let b = select(&permuted, &spec(m), None).unwrap();
            let mapped: Vec<usize> = b.indices().iter().map(|&i| perm[i]).collect();
            let mut mapped_sorted = mapped.clone();
            mapped_sorted.sort_unstable();
            assert_eq!(a.sorted().indices(), mapped_sorted.as_slice(), "{m}");
        }
    }

    #[test]
    fn design_reports_exact_objective() {
        let pr = random_problem(8, 2, 3, Direction::Inverse, false, 12);
        let out = design(&pr, &spec(Method::RelaxThreshold), None).unwrap();
        let sel = out.selection().unwrap();
        assert_eq!(out.objective, pr.objective(&sel).unwrap());
        assert_eq!(out.method, "relax-thresh");
        let col = random_problem(8, 2, 3, Direction::Direct, true, 12);
        assert_eq!(design(&col, &spec(Method::Greedy), None).unwrap().method, "col-greedy");
    }
}
