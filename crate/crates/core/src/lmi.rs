//! Semidefinite reformulations of the selection problems and SDPA export.
//!
//! Each variant is a single linear matrix inequality in the decision
//! variables `(c, Y)`:
//!
//! | variant      | block                                                         |
//! |--------------|---------------------------------------------------------------|
//! | direct       | `[[Y − R_y + M C̄α Mᵀ, M C̄α], [C̄α Mᵀ, R̄α⁻¹ + C̄α]]`, `M = H R_x` |
//! | inverse      | same with `M = G R_x` and `R_x` in place of `R_y`             |
//! | col-direct   | `[[Y − R_y + H C̄ R_x Hᵀ + H R_x C̄ Hᵀ, H C̄], [C̄ Hᵀ, Σ⁻¹]]`       |
//! | col-inverse  | `[[Y − R_x + H̄ C̄ R_x + R_x C̄ H̄, H̄ C̄], [C̄ H̄, Σ⁻¹]]`, `H̄ = HᵀH`  |
//!
//! with `C̄ = diag(c)`, `C̄α = C̄/α`, `R̄α = Σ − αI`, `Σ = R_x + R_w`. The
//! objective is `tr Y`, subject to `0 ≤ c ≤ 1` and `Σ c = p`. By the Schur
//! complement the smallest feasible `tr Y` at a binary `c` is the exact MSE.
//!
//! `Y` is vectorized by its upper triangle with off-diagonal entries scaled by
//! `√2`, so variable `y_jl` multiplies `(E_jl + E_lj)/√2`.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::{sym_eig, DenseMatrix};
use crate::sketch::{Direction, Selection, SketchProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LmiVariant {
    Direct,
    Inverse,
    ColDirect,
    ColInverse,
}

impl LmiVariant {
    pub fn of(problem: &SketchProblem) -> LmiVariant {
        match (problem.direction(), problem.constrained()) {
            (Direction::Direct, false) => LmiVariant::Direct,
            (Direction::Inverse, false) => LmiVariant::Inverse,
            (Direction::Direct, true) => LmiVariant::ColDirect,
            (Direction::Inverse, true) => LmiVariant::ColInverse,
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            LmiVariant::Direct | LmiVariant::ColDirect => Direction::Direct,
            LmiVariant::Inverse | LmiVariant::ColInverse => Direction::Inverse,
        }
    }

    pub fn constrained(self) -> bool {
        matches!(self, LmiVariant::ColDirect | LmiVariant::ColInverse)
    }
}

impl fmt::Display for LmiVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LmiVariant::Direct => "direct",
            LmiVariant::Inverse => "inverse",
            LmiVariant::ColDirect => "col-direct",
            LmiVariant::ColInverse => "col-inverse",
        })
    }
}

impl FromStr for LmiVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(LmiVariant::Direct),
            "inverse" => Ok(LmiVariant::Inverse),
            "col-direct" => Ok(LmiVariant::ColDirect),
            "col-inverse" => Ok(LmiVariant::ColInverse),
            other => Err(Error::Parse(format!(
                "unknown variant '{other}' (expected direct, inverse, col-direct or col-inverse)"
            ))),
        }
    }
}

/// One nonzero upper-triangle coefficient: `value` at `(i, j)`, `i <= j`, of
/// block `block`, multiplying variable `var` (`var = 0` is the constant term,
/// variables are numbered from 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmiEntry {
    pub var: usize,
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// `minimize objective·x  s.t.  F₀ + Σ xᵥ Fᵥ ⪰ 0` for each block, plus
/// `0 ≤ c ≤ 1`, `Σ c = p`. Variables are `c₁..c_n` then the scaled upper
/// triangle of `Y` (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub variant: Option<LmiVariant>,
    pub n: usize,
    pub y_dim: usize,
    pub p: usize,
    pub objective: Vec<f64>,
    pub block_dims: Vec<usize>,
    /// Sorted by `(var, block, i, j)`.
    pub entries: Vec<LmiEntry>,
}

impl LmiProblem {
    pub fn n_vars(&self) -> usize {
        self.n + self.y_dim * (self.y_dim + 1) / 2
    }

    /// Variable number (1-based) of `Y[j][l]`, `j <= l`.
    pub fn y_var(&self, j: usize, l: usize) -> usize {
        let (j, l) = if j <= l { (j, l) } else { (l, j) };
        // Row j of the upper triangle starts after Σ_{r<j} (d − r) entries.
        let row_start = j * self.y_dim - j * j.saturating_sub(1) / 2;
        self.n + row_start + (l - j) + 1
    }

    /// Assembles the full variable vector from `c` and a symmetric `Y`.
    pub fn variables(&self, c: &[f64], y: &DenseMatrix) -> Result<Vec<f64>> {
        if c.len() != self.n || y.shape() != (self.y_dim, self.y_dim) {
            return Err(Error::Dimension(format!(
                "expected c of length {} and Y of size {}x{}",
                self.n, self.y_dim, self.y_dim
            )));
        }
        let mut x = c.to_vec();
        for j in 0..self.y_dim {
            for l in j..self.y_dim {
                let v = if j == l { y[(j, j)] } else { std::f64::consts::SQRT_2 * 0.5 * (y[(j, l)] + y[(l, j)]) };
                x.push(v);
            }
        }
        Ok(x)
    }

    /// `F₀ + Σ xᵥ Fᵥ` for one block.
    pub fn evaluate_block(&self, block: usize, x: &[f64]) -> Result<DenseMatrix> {
        if x.len() != self.n_vars() {
            return Err(Error::Dimension(format!("expected {} variables, got {}", self.n_vars(), x.len())));
        }
        let dim = *self
            .block_dims
            .get(block)
            .ok_or_else(|| Error::Model(format!("no block {block} (have {})", self.block_dims.len())))?;
        let mut out = DenseMatrix::zeros(dim, dim);
        for e in self.entries.iter().filter(|e| e.block == block) {
            let w = if e.var == 0 { 1.0 } else { x[e.var - 1] };
            out[(e.i, e.j)] += w * e.value;
            if e.i != e.j {
                out[(e.j, e.i)] += w * e.value;
            }
        }
        Ok(out)
    }

    /// Smallest eigenvalue over all blocks at `x`.
    pub fn min_eigenvalue(&self, x: &[f64]) -> Result<f64> {
        let mut lo = f64::INFINITY;
        for b in 0..self.block_dims.len() {
            lo = lo.min(sym_eig(&self.evaluate_block(b, x)?)?.min_value());
        }
        Ok(lo)
    }
}

/// Dense symmetric accumulator for one block's coefficient matrices.
struct BlockBuilder {
    block: usize,
    entries: Vec<LmiEntry>,
}

impl BlockBuilder {
    fn push_sym(&mut self, var: usize, m: &DenseMatrix, offset_r: usize, offset_c: usize) {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let (i, j) = (r + offset_r, c + offset_c);
                if i <= j && m[(r, c)] != 0.0 {
                    self.entries.push(LmiEntry { var, block: self.block, i, j, value: m[(r, c)] });
                }
            }
        }
    }

    fn push(&mut self, var: usize, i: usize, j: usize, value: f64) {
        if value != 0.0 {
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            self.entries.push(LmiEntry { var, block: self.block, i, j, value });
        }
    }
}

/// Builds the LMI of `problem`'s variant. `alpha` (unconstrained variants
/// only) defaults to half the smallest eigenvalue of `R_x + R_w`.
pub fn build_lmi(problem: &SketchProblem, alpha: Option<f64>) -> Result<LmiProblem> {
    let variant = LmiVariant::of(problem);
    let n = problem.n();
    let eig = problem.sigma_eig()?;
    let (y_dim, base): (usize, DenseMatrix);
    let mut b = BlockBuilder { block: 0, entries: Vec::new() };
    let rx = problem.rx();
    match variant {
        LmiVariant::Direct | LmiVariant::Inverse => {
            let lmin = eig.min_value();
            let alpha = alpha.unwrap_or(0.5 * lmin);
            if !(alpha > 0.0) || alpha >= lmin - 1e-12 || !alpha.is_finite() {
                return Err(Error::Precondition(format!(
                    "alpha = {alpha:e} must satisfy 0 < alpha < lambda_min(R_x + R_w) = {lmin:e}"
                )));
            }
            // cross = Mᵀ: R_x Hᵀ or R_x Gᵀ.
            let m_t = problem.cross();
            y_dim = m_t.cols();
            base = if variant == LmiVariant::Direct {
                problem.h().matmul(m_t)?.symmetrized()
            } else {
                rx.clone()
            };
            let rbar_inv = eig.reconstruct_with(|l| 1.0 / (l - alpha)).symmetrized();
            b.push_sym(0, &base.scale(-1.0), 0, 0);
            b.push_sym(0, &rbar_inv, y_dim, y_dim);
            for i in 0..n {
                let var = i + 1;
                let mi = m_t.row(i);
                for r in 0..y_dim {
                    for s in r..y_dim {
                        b.push(var, r, s, mi[r] * mi[s] / alpha);
                    }
                    b.push(var, r, y_dim + i, mi[r] / alpha);
                }
                b.push(var, y_dim + i, y_dim + i, 1.0 / alpha);
            }
        }
        LmiVariant::ColDirect | LmiVariant::ColInverse => {
            if alpha.is_some() {
                log::debug!("alpha is not used by the {variant} formulation");
            }
            let h = problem.h();
            // Estimate L C̄ (x + w) of target T x: L = H, T = H (direct) or L = HᵀH, T = I (inverse).
            let l = if variant == LmiVariant::ColDirect { h.clone() } else { h.t_matmul(h)?.symmetrized() };
            // rows of R_x Tᵀ, i.e. columns of T R_x
            let t_rx = if variant == LmiVariant::ColDirect { h.matmul(rx)? } else { rx.clone() };
            y_dim = l.rows();
            base = if variant == LmiVariant::ColDirect { t_rx.matmul_t(h)?.symmetrized() } else { rx.clone() };
            let sigma_inv = eig.reconstruct_with(|v| 1.0 / v).symmetrized();
            b.push_sym(0, &base.scale(-1.0), 0, 0);
            b.push_sym(0, &sigma_inv, y_dim, y_dim);
            for i in 0..n {
                let var = i + 1;
                let li = l.column(i);
                let ri = t_rx.column(i);
                for r in 0..y_dim {
                    for s in r..y_dim {
                        b.push(var, r, s, li[r] * ri[s] + ri[r] * li[s]);
                    }
                    b.push(var, r, y_dim + i, li[r]);
                }
            }
        }
    }
    let mut lmi = LmiProblem {
        variant: Some(variant),
        n,
        y_dim,
        p: problem.p(),
        objective: Vec::new(),
        block_dims: vec![y_dim + n],
        entries: Vec::new(),
    };
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut var = n;
    for j in 0..y_dim {
        for l in j..y_dim {
            var += 1;
            b.push(var, j, l, if j == l { 1.0 } else { inv_sqrt2 });
        }
    }
    lmi.objective = vec![0.0; lmi.n_vars()];
    let mut var = n;
    for j in 0..y_dim {
        for l in j..y_dim {
            if j == l {
                lmi.objective[var] = 1.0;
            }
            var += 1;
        }
    }
    b.entries.sort_by_key(|e| (e.var, e.block, e.i, e.j));
    lmi.entries = b.entries;
    Ok(lmi)
}

/// The smallest feasible `Y` at a binary selection: the error covariance of
/// the corresponding estimator.
pub fn optimal_y(problem: &SketchProblem, sel: &Selection) -> Result<DenseMatrix> {
    let h = problem.h();
    let rx = problem.rx();
    let c = sel.indicator();
    let cbar = DenseMatrix::from_diag(&c);
    if problem.constrained() {
        let (t, l) = match problem.direction() {
            Direction::Direct => (h.clone(), h.clone()),
            Direction::Inverse => (DenseMatrix::identity(problem.n()), h.t_matmul(h)?.symmetrized()),
        };
        let lc = l.matmul(&cbar)?;
        let cross = lc.matmul(&rx.matmul_t(&t)?)?;
        let out = t.matmul(&rx.matmul_t(&t)?)?.sub(&cross)?.sub(&cross.transpose())?.add(
            &lc.matmul(problem.sigma())?.matmul_t(&lc)?,
        )?;
        return Ok(out.symmetrized());
    }
    let base = match problem.direction() {
        Direction::Direct => h.matmul(problem.cross())?,
        Direction::Inverse => rx.clone(),
    };
    let bt = problem.cross().select_rows(sel.indices());
    let x = crate::linalg::solve_spd(&problem.sigma().principal(sel.indices()), &bt)?;
    Ok(base.sub(&bt.t_matmul(&x)?)?.symmetrized())
}

/// Smallest scalar `Y` keeping the block PSD at a binary `c`, by bisection on
/// the block's minimum eigenvalue. Only for single-output problems.
pub fn min_trace_scalar(lmi: &LmiProblem, c: &[f64]) -> Result<f64> {
    if lmi.y_dim != 1 {
        return Err(Error::Model(format!("scalar search needs a 1x1 Y, have {}x{}", lmi.y_dim, lmi.y_dim)));
    }
    let psd_at = |y: f64| -> Result<bool> {
        let x = lmi.variables(c, &DenseMatrix::from_diag(&[y]))?;
        Ok(lmi.min_eigenvalue(&x)? >= 0.0)
    };
    let mut hi = 1.0;
    while !psd_at(hi)? {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numeric("no feasible Y found".into()));
        }
    }
    let mut lo = -1.0;
    while psd_at(lo)? {
        lo *= 2.0;
        if lo < -1e300 {
            return Err(Error::Numeric("block is PSD for every Y".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if psd_at(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Serializes to sparse SDPA. SDPA reads `F₁x₁ + … + F_m x_m − F₀ ⪰ 0`, so
/// constant terms are written negated. The box and budget constraints go in
/// a final diagonal block of size `2n + 2`:
/// `c_i ≥ 0`, `1 − c_i ≥ 0`, `Σc − p ≥ 0`, `p − Σc ≥ 0`.
pub fn write_sdpa(lmi: &LmiProblem) -> String {
    let mut out = String::new();
    let variant = lmi.variant.map_or_else(|| "none".to_string(), |v| v.to_string());
    let _ = writeln!(out, "\"sketchsel {} LMI: minimize tr(Y) over (c, Y)", crate::VERSION);
    let _ = writeln!(
        out,
        "\"variant={variant} n={} y_dim={} p={} variables: c_1..c_n, then upper triangle of Y row-major (off-diagonals scaled by sqrt 2)",
        lmi.n, lmi.y_dim, lmi.p
    );
    let _ = writeln!(out, "\"last block (diagonal): c_i >= 0, 1 - c_i >= 0, sum c - p >= 0, p - sum c >= 0");
    let m = lmi.n_vars();
    let _ = writeln!(out, "{m}");
    if m == 0 {
        let _ = writeln!(out, "0");
        return out;
    }
    let n = lmi.n;
    let mut sizes: Vec<String> = lmi.block_dims.iter().map(|d| d.to_string()).collect();
    sizes.push(format!("-{}", 2 * n + 2));
    let _ = writeln!(out, "{}", sizes.len());
    let _ = writeln!(out, "{}", sizes.join(" "));
    let obj: Vec<String> = lmi.objective.iter().map(|&v| fmt_f64(v)).collect();
    let _ = writeln!(out, "{}", obj.join(" "));

    let box_block = lmi.block_dims.len();
    let mut lines: Vec<(usize, usize, usize, usize, f64)> =
        lmi.entries.iter().map(|e| (e.var, e.block, e.i, e.j, if e.var == 0 { -e.value } else { e.value })).collect();
    let p = lmi.p as f64;
    for k in 0..n {
        lines.push((0, box_block, n + k, n + k, -1.0));
    }
    lines.push((0, box_block, 2 * n, 2 * n, p));
    lines.push((0, box_block, 2 * n + 1, 2 * n + 1, -p));
    for k in 0..n {
        let var = k + 1;
        lines.push((var, box_block, k, k, 1.0));
        lines.push((var, box_block, n + k, n + k, -1.0));
        lines.push((var, box_block, 2 * n, 2 * n, 1.0));
        lines.push((var, box_block, 2 * n + 1, 2 * n + 1, -1.0));
    }
    lines.sort_by_key(|l| (l.0, l.1, l.2, l.3));
    for (var, block, i, j, v) in lines {
        let _ = writeln!(out, "{var} {} {} {} {}", block + 1, i + 1, j + 1, fmt_f64(v));
    }
    out
}

/// Parses a file written by [`write_sdpa`] back into an [`LmiProblem`].
pub fn read_sdpa(text: &str) -> Result<LmiProblem> {
    let mut variant = None;
    let mut p_comment = None;
    let mut body = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(c) = t.strip_prefix('"').or_else(|| t.strip_prefix('*')) {
            for tok in c.split_whitespace() {
                if let Some(v) = tok.strip_prefix("variant=") {
                    variant = if v == "none" { None } else { Some(v.parse::<LmiVariant>()?) };
                }
                if let Some(v) = tok.strip_prefix("p=") {
                    p_comment = v.parse::<usize>().ok();
                }
            }
            continue;
        }
        body.push(t);
    }
    let bad = |what: &str| Error::Parse(format!("SDPA: {what}"));
    let mut it = body.into_iter();
    let m: usize = it.next().ok_or_else(|| bad("missing mDIM"))?.parse().map_err(|_| bad("bad mDIM"))?;
    let nblock: usize = it.next().ok_or_else(|| bad("missing nBLOCK"))?.parse().map_err(|_| bad("bad nBLOCK"))?;
    if m == 0 {
        return Ok(LmiProblem {
            variant,
            n: 0,
            y_dim: 0,
            p: p_comment.unwrap_or(0),
            objective: Vec::new(),
            block_dims: Vec::new(),
            entries: Vec::new(),
        });
    }
    let sizes: Vec<i64> = it
        .next()
        .ok_or_else(|| bad("missing block sizes"))?
        .split_whitespace()
        .map(|s| s.parse::<i64>().map_err(|_| bad("bad block size")))
        .collect::<Result<_>>()?;
    if sizes.len() != nblock || nblock == 0 {
        return Err(bad("block count does not match block sizes"));
    }
    let last = *sizes.last().expect("nonempty");
    if last >= 0 || (-last) % 2 != 0 || -last < 2 {
        return Err(bad("last block must be the diagonal constraint block of size 2n + 2"));
    }
    let n = ((-last - 2) / 2) as usize;
    let block_dims: Vec<usize> = sizes[..nblock - 1]
        .iter()
        .map(|&s| usize::try_from(s).map_err(|_| bad("only the last block may be diagonal")))
        .collect::<Result<_>>()?;
    let y_vars = m.checked_sub(n).ok_or_else(|| bad("fewer variables than selection entries"))?;
    let y_dim = ((((8 * y_vars + 1) as f64).sqrt() as usize).saturating_sub(1)) / 2;
    if y_dim * (y_dim + 1) / 2 != y_vars {
        return Err(bad("variable count does not match a symmetric Y"));
    }
    let objective: Vec<f64> = it
        .next()
        .ok_or_else(|| bad("missing objective"))?
        .split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|_| bad("bad objective value")))
        .collect::<Result<_>>()?;
    if objective.len() != m {
        return Err(bad("objective length does not match mDIM"));
    }
    let box_block = nblock - 1;
    let mut entries = Vec::new();
    let mut p_box = None;
    for line in it {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(bad(&format!("malformed entry '{line}'")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad index in '{line}'")));
        let (var, block, i, j) = (num(f[0])?, num(f[1])?, num(f[2])?, num(f[3])?);
        let value: f64 = f[4].parse().map_err(|_| bad(&format!("bad value in '{line}'")))?;
        if var > m || block == 0 || block > nblock || i == 0 || j == 0 || i > j {
            return Err(bad(&format!("entry out of range: '{line}'")));
        }
        let (block, i, j) = (block - 1, i - 1, j - 1);
        if block == box_block {
            if var == 0 && i == 2 * n {
                p_box = Some(value);
            }
            continue;
        }
        if j >= block_dims[block] {
            return Err(bad(&format!("entry outside its block: '{line}'")));
        }
        entries.push(LmiEntry { var, block, i, j, value: if var == 0 { -value } else { value } });
    }
    entries.sort_by_key(|e| (e.var, e.block, e.i, e.j));
    let p = match (p_box, p_comment) {
        (Some(v), _) if v >= 0.0 && v.fract() == 0.0 => v as usize,
        (None, Some(p)) => p,
        (None, None) if n == 0 => 0,
        _ => return Err(bad("cannot recover the budget p")),
    };
    Ok(LmiProblem { variant, n, y_dim, p, objective, block_dims, entries })
}
