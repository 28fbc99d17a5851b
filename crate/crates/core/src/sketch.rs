//! Closed-form sketches, their mean-squared-error objectives and the smooth
//! relaxation used by the first-order selector.
//!
//! Notation: `H` is the `m × n` operator, `R_x` the signal covariance, `R_w`
//! the noise covariance, `Σ = R_x + R_w`, and a selection `S` of `p` indices
//! gives the `p × n` sampling matrix `C`. The direct problem estimates
//! `y = H x`; the inverse problem estimates the least-squares solution
//! `A_LS x` and is scored by `‖Hᵀ ŷ − x‖²`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, ldl_factor, lu_solve, numerical_rank, pinv, sym_eig, DenseMatrix, EigResult};

/// Rank cutoff used by the noiseless sketches.
const RANK_TOL: f64 = 1e-10;

/// Objectives in `[-OBJECTIVE_FLOOR · max(1, scale), 0)` are round-off and read as zero.
pub const OBJECTIVE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Direct,
    Inverse,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Direction::Direct),
            "inverse" => Ok(Direction::Inverse),
            other => Err(Error::Parse(format!("unknown direction '{other}' (expected direct or inverse)"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Direct => "direct",
            Direction::Inverse => "inverse",
        })
    }
}

/// `p` distinct node indices out of `n`, in selection order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Selection {
    n: usize,
    indices: Vec<usize>,
}

impl Selection {
    pub fn new(n: usize, indices: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::Model(format!("selection index {i} out of range for n = {n}")));
            }
            if seen[i] {
                return Err(Error::Model(format!("selection index {i} appears twice")));
            }
            seen[i] = true;
        }
        Ok(Selection { n, indices })
    }

    /// Indicator vector `c ∈ {0,1}ⁿ` back to a selection in ascending order.
    pub fn from_indicator(c: &[f64]) -> Result<Self> {
        check_binary(c)?;
        Ok(Selection { n: c.len(), indices: (0..c.len()).filter(|&i| c[i] == 1.0).collect() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn indicator(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n];
        for &i in &self.indices {
            c[i] = 1.0;
        }
        c
    }

    /// Same indices in ascending order.
    pub fn sorted(&self) -> Selection {
        let mut indices = self.indices.clone();
        indices.sort_unstable();
        Selection { n: self.n, indices }
    }
}

/// The `p × n` sampling matrix; row `r` has its one at `indices[r]`.
pub fn selection_matrix(sel: &Selection) -> DenseMatrix {
    let mut c = DenseMatrix::zeros(sel.p(), sel.n());
    for (r, &i) in sel.indices.iter().enumerate() {
        c[(r, i)] = 1.0;
    }
    c
}

fn check_binary(c: &[f64]) -> Result<()> {
    match c.iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(i) => Err(Error::Model(format!("selection vector entry {i} is {} (expected 0 or 1)", c[i]))),
        None => Ok(()),
    }
}

fn check_dims(h: &DenseMatrix, rx: &DenseMatrix, rw: &DenseMatrix) -> Result<usize> {
    let n = h.cols();
    if rx.shape() != (n, n) || rw.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "H is {}x{n} but R_x is {}x{} and R_w is {}x{}",
            h.rows(),
            rx.rows(),
            rx.cols(),
            rw.rows(),
            rw.cols()
        )));
    }
    Ok(n)
}

fn check_selection(sel: &Selection, n: usize) -> Result<()> {
    if sel.n() != n {
        return Err(Error::Dimension(format!("selection is over {} nodes, problem has {n}", sel.n())));
    }
    Ok(())
}

/// Clamps round-off negatives to zero; anything more negative is an error.
pub fn clamp_objective(value: f64, scale: f64) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {value}")));
    }
    if value >= 0.0 {
        return Ok(value);
    }
    if value >= -OBJECTIVE_FLOOR * scale.abs().max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Numeric(format!("objective is negative ({value:e}); inputs are inconsistent")))
    }
}

/// `Σ_S⁻¹ B` for `B` = rows `S` of `bt`, plus `B` itself.
fn wiener_solve(bt: &DenseMatrix, sigma: &DenseMatrix, sel: &Selection) -> Result<(DenseMatrix, DenseMatrix)> {
    let b = bt.select_rows(sel.indices());
    let sigma_s = sigma.principal(sel.indices());
    let x = ldl_factor(&sigma_s)
        .map_err(|e| Error::Numeric(format!("sampled covariance C(R_x+R_w)Cᵀ is singular ({e})")))?
        .solve(&b)?;
    Ok((b, x))
}

/// `trace − tr(Bᵀ Σ_S⁻¹ B)` clamped at zero.
fn residual(trace: f64, bt: &DenseMatrix, sigma: &DenseMatrix, sel: &Selection) -> Result<f64> {
    if sel.p() == 0 {
        return clamp_objective(trace, trace);
    }
    let (b, x) = wiener_solve(bt, sigma, sel)?;
    clamp_objective(trace - b.frobenius_dot(&x)?, trace)
}

/// `H V_k (C V_k)⁻¹`, with a pseudoinverse when `p > k`. Exact on `span(V_k)`.
pub fn sketch_direct_noiseless(h: &DenseMatrix, vk: &DenseMatrix, sel: &Selection) -> Result<DenseMatrix> {
    if h.cols() != vk.rows() {
        return Err(Error::Dimension(format!("H has {} columns, V_k has {} rows", h.cols(), vk.rows())));
    }
    check_selection(sel, vk.rows())?;
    let k = vk.cols();
    let cv = vk.select_rows(sel.indices());
    let rank = numerical_rank(&cv, RANK_TOL);
    if rank < k {
        return Err(Error::RankDeficient { rank, required: k });
    }
    let hv = h.matmul(vk)?;
    if sel.p() == k {
        // H_s = H V_k (C V_k)⁻¹  ⇔  (C V_k)ᵀ H_sᵀ = (H V_k)ᵀ
        Ok(lu_solve(&cv.transpose(), &hv.transpose())?.transpose())
    } else {
        hv.matmul(&pinv(&cv, RANK_TOL))
    }
}

/// `H R_x Cᵀ (C (R_x + R_w) Cᵀ)⁻¹`.
pub fn sketch_direct(h: &DenseMatrix, rx: &DenseMatrix, rw: &DenseMatrix, sel: &Selection) -> Result<DenseMatrix> {
    let n = check_dims(h, rx, rw)?;
    check_selection(sel, n)?;
    let bt = rx.matmul_t(h)?;
    let (_, x) = wiener_solve(&bt, &rx.add(rw)?, sel)?;
    Ok(x.transpose())
}

/// `tr[R_y − H R_x Cᵀ (C(R_x+R_w)Cᵀ)⁻¹ C R_x Hᵀ]` with `R_y = H R_x Hᵀ`.
pub fn objective_direct(h: &DenseMatrix, rx: &DenseMatrix, rw: &DenseMatrix, sel: &Selection) -> Result<f64> {
    let n = check_dims(h, rx, rw)?;
    check_selection(sel, n)?;
    let bt = rx.matmul_t(h)?;
    let ry_trace = h.matmul(&bt)?.trace();
    residual(ry_trace, &bt, &rx.add(rw)?, sel)
}

/// Least-squares operator `(H Hᵀ)⁻¹ H`; `H` must have full row rank.
pub fn ls_operator(h: &DenseMatrix) -> Result<DenseMatrix> {
    let gram = h.matmul_t(h)?;
    let rank_error = || Error::RankDeficient { rank: numerical_rank(h, RANK_TOL), required: h.rows() };
    if h.rows() > h.cols() {
        return Err(rank_error());
    }
    let f = ldl_factor(&gram).map_err(|_| rank_error())?;
    if numerical_rank(h, RANK_TOL) < h.rows() {
        return Err(rank_error());
    }
    f.solve(h)
}

/// `A_LS V_k (C V_k)⁻¹`: reproduces the least-squares estimate on `span(V_k)`.
pub fn sketch_inverse_noiseless(h: &DenseMatrix, vk: &DenseMatrix, sel: &Selection) -> Result<DenseMatrix> {
    sketch_direct_noiseless(&ls_operator(h)?, vk, sel)
}

/// `A_LS R_x Cᵀ (C (R_x + R_w) Cᵀ)⁻¹`.
pub fn sketch_inverse(h: &DenseMatrix, rx: &DenseMatrix, rw: &DenseMatrix, sel: &Selection) -> Result<DenseMatrix> {
    check_dims(h, rx, rw)?;
    sketch_direct(&ls_operator(h)?, rx, rw, sel)
}

/// `G = Hᵀ A_LS`, the orthogonal projector onto the row space of `H`.
pub fn ls_projector(h: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(h.t_matmul(&ls_operator(h)?)?.symmetrized())
}

/// `tr[R_x − G R_x Cᵀ (C(R_x+R_w)Cᵀ)⁻¹ C R_x Gᵀ]`.
pub fn objective_inverse(h: &DenseMatrix, rx: &DenseMatrix, rw: &DenseMatrix, sel: &Selection) -> Result<f64> {
    let n = check_dims(h, rx, rw)?;
    check_selection(sel, n)?;
    let g = ls_projector(h)?;
    let bt = rx.matmul_t(&g)?;
    residual(rx.trace(), &bt, &rx.add(rw)?, sel)
}

/// `E‖T x − L diag(c) (x + w)‖² = const − 2 Σ cᵢ lᵢ + cᵀ Q c`.
#[derive(Debug, Clone)]
pub struct ColumnQuadratic {
    constant: f64,
    linear: Vec<f64>,
    quad: DenseMatrix,
}

impl ColumnQuadratic {
    /// `T = L = H`: the estimate is `H diag(c) (x + w)`.
    pub fn direct(h: &DenseMatrix, rx: &DenseMatrix, rw: &DenseMatrix) -> Result<Self> {
        check_dims(h, rx, rw)?;
        let hth = h.t_matmul(h)?;
        let constant = h.matmul(&rx.matmul_t(h)?)?.trace();
        Self::assemble(constant, rx.matmul(&hth)?, &hth, &rx.add(rw)?)
    }

    /// `T = I`, `L = HᵀH`: the estimate is `Hᵀ H diag(c) (x + w)`.
    pub fn inverse(h: &DenseMatrix, rx: &DenseMatrix, rw: &DenseMatrix) -> Result<Self> {
        check_dims(h, rx, rw)?;
        let gram = h.t_matmul(h)?.symmetrized();
        let ltl = gram.matmul(&gram)?;
        Self::assemble(rx.trace(), rx.matmul(&gram)?, &ltl, &rx.add(rw)?)
    }

    fn assemble(constant: f64, cross: DenseMatrix, ltl: &DenseMatrix, sigma: &DenseMatrix) -> Result<Self> {
        let n = sigma.rows();
        let mut quad = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                quad[(i, j)] = ltl[(i, j)] * sigma[(j, i)];
            }
        }
        Ok(ColumnQuadratic { constant, linear: cross.diag(), quad: quad.symmetrized() })
    }

    pub fn n(&self) -> usize {
        self.linear.len()
    }

    /// Value at any `c`; does not check that `c` is binary.
    pub fn value(&self, c: &[f64]) -> f64 {
        let qc = self.quad.matvec(c).expect("length checked by caller");
        self.constant - 2.0 * dot(&self.linear, c) + dot(c, &qc)
    }

    pub fn gradient(&self, c: &[f64]) -> Vec<f64> {
        let qc = self.quad.matvec(c).expect("length checked by caller");
        self.linear.iter().zip(&qc).map(|(l, q)| 2.0 * (q - l)).collect()
    }

    fn checked(&self, c: &[f64]) -> Result<f64> {
        if c.len() != self.n() {
            return Err(Error::Dimension(format!("selection vector has {} entries, expected {}", c.len(), self.n())));
        }
        check_binary(c)?;
        clamp_objective(self.value(c), self.constant)
    }
}

/// `tr[H R_x Hᵀ − 2 H C̄ R_x Hᵀ + H C̄ (R_x+R_w) C̄ Hᵀ]` for binary `c`.
pub fn objective_column_direct(h: &DenseMatrix, rx: &DenseMatrix, rw: &DenseMatrix, c: &[f64]) -> Result<f64> {
    ColumnQuadratic::direct(h, rx, rw)?.checked(c)
}

/// `tr[R_x − 2 H̄ C̄ R_x + H̄ C̄ (R_x+R_w) C̄ H̄]`, `H̄ = HᵀH`, for binary `c`.
pub fn objective_column_inverse(h: &DenseMatrix, rx: &DenseMatrix, rw: &DenseMatrix, c: &[f64]) -> Result<f64> {
    ColumnQuadratic::inverse(h, rx, rw)?.checked(c)
}

/// `ŷ = H_s · (x_observed restricted to the selection)`.
pub fn apply_sketch(h_s: &DenseMatrix, sel: &Selection, x_observed: &[f64]) -> Result<Vec<f64>> {
    if h_s.cols() != sel.p() || x_observed.len() != sel.n() {
        return Err(Error::Dimension(format!(
            "sketch is {}x{}, selection has p = {} of n = {}, signal has {} entries",
            h_s.rows(),
            h_s.cols(),
            sel.p(),
            sel.n(),
            x_observed.len()
        )));
    }
    let samples: Vec<f64> = sel.indices().iter().map(|&i| x_observed[i]).collect();
    Ok((0..h_s.rows()).map(|r| dot(h_s.row(r), &samples)).collect())
}

/// `R_w + εI`, for ingested noise models that are only numerically PSD.
pub fn with_ridge(rw: &DenseMatrix, eps: f64) -> Result<DenseMatrix> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Model(format!("ridge must be finite and >= 0, got {eps}")));
    }
    Ok(rw.add_diag(eps))
}

/// A validated design problem with the quantities every selector reuses.
#[derive(Debug, Clone)]
pub struct SketchProblem {
    direction: Direction,
    constrained: bool,
    h: DenseMatrix,
    rx: DenseMatrix,
    rw: DenseMatrix,
    p: usize,
    sigma: DenseMatrix,
    /// `R_x Hᵀ` (direct) or `R_x Gᵀ` (inverse), `n × m_out`.
    cross: DenseMatrix,
    /// `tr R_y` (direct) or `tr R_x` (inverse).
    base_trace: f64,
    /// `A_LS`, inverse problems only.
    a_ls: Option<DenseMatrix>,
    column: OnceLock<ColumnQuadratic>,
    sigma_eig: OnceLock<EigResult>,
}

impl SketchProblem {
    pub fn new(
        direction: Direction,
        constrained: bool,
        h: DenseMatrix,
        rx: DenseMatrix,
        rw: DenseMatrix,
        p: usize,
    ) -> Result<Self> {
        let n = check_dims(&h, &rx, &rw)?;
        if p == 0 || p > n {
            return Err(Error::Model(format!("budget p = {p} must satisfy 1 <= p <= n = {n}")));
        }
        if !h.all_finite() || !rx.all_finite() || !rw.all_finite() {
            return Err(Error::Model("problem matrices contain non-finite values".into()));
        }
        if !rx.is_symmetric(1e-10) {
            return Err(Error::Model("R_x must be symmetric".into()));
        }
        if !rw.is_symmetric(1e-10) {
            return Err(Error::Model("R_w must be symmetric".into()));
        }
        ldl_factor(&rw)
            .map_err(|e| Error::Model(format!("R_w must be positive definite ({e}); consider a ridge")))?;
        let sigma = rx.add(&rw)?.symmetrized();
        let (cross, base_trace, a_ls) = match direction {
            Direction::Direct => {
                let cross = rx.matmul_t(&h)?;
                let ry = h.matmul(&cross)?.trace();
                (cross, ry, None)
            }
            Direction::Inverse => {
                let a = ls_operator(&h)?;
                let g = h.t_matmul(&a)?.symmetrized();
                (rx.matmul_t(&g)?, rx.trace(), Some(a))
            }
        };
        Ok(SketchProblem {
            direction,
            constrained,
            h,
            rx,
            rw,
            p,
            sigma,
            cross,
            base_trace,
            a_ls,
            column: OnceLock::new(),
            sigma_eig: OnceLock::new(),
        })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn constrained(&self) -> bool {
        self.constrained
    }

    pub fn h(&self) -> &DenseMatrix {
        &self.h
    }

    pub fn rx(&self) -> &DenseMatrix {
        &self.rx
    }

    pub fn rw(&self) -> &DenseMatrix {
        &self.rw
    }

    pub fn sigma(&self) -> &DenseMatrix {
        &self.sigma
    }

    pub fn n(&self) -> usize {
        self.h.cols()
    }

    pub fn m(&self) -> usize {
        self.h.rows()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Same matrices with another budget.
    pub fn with_p(&self, p: usize) -> Result<SketchProblem> {
        if p == 0 || p > self.n() {
            return Err(Error::Model(format!("budget p = {p} must satisfy 1 <= p <= n = {}", self.n())));
        }
        let mut out = self.clone();
        out.p = p;
        Ok(out)
    }

    /// `R_x Hᵀ` (direct) or `R_x Gᵀ` (inverse).
    pub fn cross(&self) -> &DenseMatrix {
        &self.cross
    }

    /// Objective with no samples: `tr R_y` (direct) or `tr R_x` (inverse).
    pub fn base_trace(&self) -> f64 {
        self.base_trace
    }

    pub fn a_ls(&self) -> Option<&DenseMatrix> {
        self.a_ls.as_ref()
    }

    pub fn column_quadratic(&self) -> &ColumnQuadratic {
        self.column.get_or_init(|| {
            match self.direction {
                Direction::Direct => ColumnQuadratic::direct(&self.h, &self.rx, &self.rw),
                Direction::Inverse => ColumnQuadratic::inverse(&self.h, &self.rx, &self.rw),
            }
            .expect("dimensions validated on construction")
        })
    }

    pub fn sigma_eig(&self) -> Result<&EigResult> {
        if let Some(e) = self.sigma_eig.get() {
            return Ok(e);
        }
        let e = sym_eig(&self.sigma)?;
        Ok(self.sigma_eig.get_or_init(|| e))
    }

    /// Exact objective of a selection of any size (the budget is not enforced
    /// here so selectors can score partial selections).
    pub fn objective(&self, sel: &Selection) -> Result<f64> {
        check_selection(sel, self.n())?;
        if self.constrained {
            return self.column_quadratic().checked(&sel.indicator());
        }
        residual(self.base_trace, &self.cross, &self.sigma, sel)
    }

    /// Optimal (or, when constrained, column-sampling) sketch for a selection.
    pub fn sketch(&self, sel: &Selection) -> Result<DenseMatrix> {
        check_selection(sel, self.n())?;
        if self.constrained {
            return Ok(self.h.select_cols(sel.indices()));
        }
        match &self.a_ls {
            None => {
                let (_, x) = wiener_solve(&self.cross, &self.sigma, sel)?;
                Ok(x.transpose())
            }
            Some(a) => {
                let (_, x) = wiener_solve(&self.rx.matmul_t(a)?, &self.sigma, sel)?;
                Ok(x.transpose())
            }
        }
    }
}

/// The relaxed objective of a problem for a fixed `alpha`.
///
/// Unconstrained problems use the Woodbury form
/// `f(c) = tr R_y − Σ dᵢ ‖Mᵢ‖² + ⟨Z, K⁻¹ Z⟩` with `D = diag(c)/α`,
/// `K = (Σ − αI)⁻¹ + D`, `Z = D Mᵀ`. It equals the exact objective at binary
/// `c`. Constrained problems use the column quadratic, which is already
/// defined on the box.
#[derive(Debug, Clone)]
pub struct Relaxation {
    kind: RelaxationKind,
}

#[derive(Debug, Clone)]
enum RelaxationKind {
    Woodbury { alpha: f64, rbar_inv: DenseMatrix, cross: DenseMatrix, norms2: Vec<f64>, base: f64 },
    Column(ColumnQuadratic),
}

impl Relaxation {
    /// `alpha = None` picks `0.5 · λ_min(R_x + R_w)`.
    pub fn new(problem: &SketchProblem, alpha: Option<f64>) -> Result<Self> {
        if problem.constrained {
            return Ok(Relaxation { kind: RelaxationKind::Column(problem.column_quadratic().clone()) });
        }
        let eig = problem.sigma_eig()?;
        let lmin = eig.min_value();
        let lmax = eig.max_value();
        let alpha = alpha.unwrap_or(0.5 * lmin);
        if !(alpha > 0.0) || alpha >= lmin - 1e-12 || !alpha.is_finite() {
            return Err(Error::Precondition(format!(
                "alpha = {alpha:e} must satisfy 0 < alpha < lambda_min(R_x + R_w) = {lmin:e}"
            )));
        }
        log::debug!("relaxation alpha {alpha:e}, condition number of R_x + R_w - alpha I: {:e}", (lmax - alpha) / (lmin - alpha));
        let rbar_inv = eig.reconstruct_with(|l| 1.0 / (l - alpha)).symmetrized();
        let cross = problem.cross.clone();
        let norms2 = (0..cross.rows()).map(|i| dot(cross.row(i), cross.row(i))).collect();
        Ok(Relaxation {
            kind: RelaxationKind::Woodbury { alpha, rbar_inv, cross, norms2, base: problem.base_trace },
        })
    }

    pub fn n(&self) -> usize {
        match &self.kind {
            RelaxationKind::Woodbury { cross, .. } => cross.rows(),
            RelaxationKind::Column(q) => q.n(),
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match &self.kind {
            RelaxationKind::Woodbury { alpha, .. } => Some(*alpha),
            RelaxationKind::Column(_) => None,
        }
    }

    fn check(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.n() {
            return Err(Error::Dimension(format!("relaxed vector has {} entries, expected {}", c.len(), self.n())));
        }
        if let Some(i) = c.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Model(format!("relaxed vector entry {i} is {} (expected within [0,1])", c[i])));
        }
        Ok(())
    }

    pub fn value(&self, c: &[f64]) -> Result<f64> {
        Ok(self.evaluate(c, false)?.0)
    }

    pub fn value_and_gradient(&self, c: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.evaluate(c, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    fn evaluate(&self, c: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        self.check(c)?;
        match &self.kind {
            RelaxationKind::Column(q) => Ok((q.value(c), want_grad.then(|| q.gradient(c)))),
            RelaxationKind::Woodbury { alpha, rbar_inv, cross, norms2, base } => {
                let n = c.len();
                let d: Vec<f64> = c.iter().map(|ci| ci / alpha).collect();
                let mut k = rbar_inv.clone();
                for i in 0..n {
                    k[(i, i)] += d[i];
                }
                let mut z = cross.clone();
                for i in 0..n {
                    for v in z.row_mut(i) {
                        *v *= d[i];
                    }
                }
                let x = ldl_factor(&k)?.solve(&z)?;
                let value = base - dot(&d, norms2) + z.frobenius_dot(&x)?;
                let grad = want_grad.then(|| {
                    (0..n)
                        .map(|i| {
                            let w: f64 =
                                cross.row(i).iter().zip(x.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
                            -w / alpha
                        })
                        .collect()
                });
                Ok((value, grad))
            }
        }
    }
}

/// Relaxed objective at `c ∈ [0,1]ⁿ` for the given (or default) `alpha`.
pub fn relaxed_objective(problem: &SketchProblem, c: &[f64], alpha: Option<f64>) -> Result<f64> {
    Relaxation::new(problem, alpha)?.value(c)
}

/// Gradient of [`relaxed_objective`] with respect to `c`.
pub fn relaxed_gradient(problem: &SketchProblem, c: &[f64], alpha: Option<f64>) -> Result<Vec<f64>> {
    Ok(Relaxation::new(problem, alpha)?.value_and_gradient(c)?.1)
}

/// A designed selection and sketch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOutcome {
    pub method: String,
    pub n: usize,
    pub p: usize,
    pub direction: Direction,
    pub constrained: bool,
    pub indices: Vec<usize>,
    pub objective: f64,
    pub wall_time_s: f64,
    #[serde(rename = "H_s")]
    pub h_s: Vec<Vec<f64>>,
    #[serde(default)]
    pub provenance: BTreeMap<String, serde_json::Value>,
}

impl DesignOutcome {
    /// Scores `sel` on `problem` and attaches its sketch.
    pub fn evaluate(problem: &SketchProblem, method: &str, sel: &Selection, wall_time_s: f64) -> Result<Self> {
        let objective = problem.objective(sel)?;
        let h_s = problem.sketch(sel)?;
        Ok(DesignOutcome {
            method: method.to_string(),
            n: problem.n(),
            p: sel.p(),
            direction: problem.direction(),
            constrained: problem.constrained(),
            indices: sel.indices().to_vec(),
            objective,
            wall_time_s,
            h_s: (0..h_s.rows()).map(|r| h_s.row(r).to_vec()).collect(),
            provenance: BTreeMap::new(),
        })
    }

    pub fn selection(&self) -> Result<Selection> {
        Selection::new(self.n, self.indices.clone())
    }

    pub fn sketch_matrix(&self) -> Result<DenseMatrix> {
        let rows = self.h_s.len();
        let cols = self.h_s.first().map_or(self.p, Vec::len);
        if self.h_s.iter().any(|r| r.len() != cols) {
            return Err(Error::Parse("H_s rows have unequal lengths".into()));
        }
        DenseMatrix::from_vec(rows, cols, self.h_s.concat())
    }
}
