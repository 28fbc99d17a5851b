use super::DenseMatrix;
use crate::error::{Error, Result};

/// Relative asymmetry tolerated on input before symmetrizing.
const SYMMETRY_TOL: f64 = 1e-12;
/// Convergence: off(A) <= OFF_TOL * ||A||_F.
const OFF_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Ordering applied to eigenpairs after the solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigOrder {
    #[default]
    Desc,
    Asc,
    AbsDesc,
}

impl std::str::FromStr for EigOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desc" => Ok(EigOrder::Desc),
            "asc" => Ok(EigOrder::Asc),
            "abs-desc" => Ok(EigOrder::AbsDesc),
            other => Err(Error::Parse(format!("unknown eigenvalue order '{other}'"))),
        }
    }
}

/// Eigenpairs of a real symmetric matrix.
///
/// `vectors` holds orthonormal eigenvectors as columns; `values[j]` pairs with column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigResult {
    pub vectors: DenseMatrix,
    pub values: Vec<f64>,
}

impl EigResult {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let n = self.vectors.rows();
        let k = self.values.len();
        let weights: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let vi = self.vectors.row(i);
            for j in i..n {
                let vj = self.vectors.row(j);
                let mut s = 0.0;
                for t in 0..k {
                    s += vi[t] * weights[t] * vj[t];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sym_eig(a: &DenseMatrix) -> Result<EigResult> {
    sym_eig_ordered(a, EigOrder::Desc)
}

/// Cyclic Jacobi eigendecomposition.
///
/// Each eigenvector's sign is fixed so that its first entry of largest
/// magnitude is positive. Ties in eigenvalue keep the order in which the
/// converged diagonal presents them, so results are deterministic.
pub fn sym_eig_ordered(a: &DenseMatrix, order: EigOrder) -> Result<EigResult> {
    if !a.is_square() {
        return Err(Error::Model(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::Model(format!(
            "matrix is not symmetric (max asymmetry {:e})",
            a.asymmetry().unwrap_or(f64::NAN)
        )));
    }
    let n = a.rows();
    let mut m = a.symmetrized().into_data();
    // Rows of `w` are the evolving eigenvectors (Vᵀ), so rotations touch contiguous memory.
    let mut w = DenseMatrix::identity(n).into_data();

    let norm_f = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let threshold = OFF_TOL * norm_f;

    let mut converged = false;
    let mut off = off_norm(&m, n);
    for sweep in 0..MAX_SWEEPS {
        if off <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                // Late sweeps: drop entries that can no longer move the diagonal.
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, &mut w, n, p, q, c, s);
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
            }
        }
        off = off_norm(&m, n);
    }
    if !converged && off > threshold {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS, off });
    }

    let diag: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    match order {
        EigOrder::Desc => idx.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j))),
        EigOrder::Asc => idx.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]).then(i.cmp(&j))),
        EigOrder::AbsDesc => {
            idx.sort_by(|&i, &j| diag[j].abs().total_cmp(&diag[i].abs()).then(i.cmp(&j)))
        }
    }

    let mut vectors = DenseMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (col, &src) in idx.iter().enumerate() {
        let v = &w[src * n..(src + 1) * n];
        let sign = sign_convention(v);
        for (row, &x) in v.iter().enumerate() {
            vectors[(row, col)] = sign * x;
        }
        values.push(diag[src]);
    }
    Ok(EigResult { vectors, values })
}

fn off_norm(m: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[i * n + j] * m[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Applies the (p, q) plane rotation to the off-diagonal part of `m` and to rows p, q of `w`.
fn rotate(m: &mut [f64], w: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = m[p * n + r];
        let arq = m[q * n + r];
        let new_p = c * arp - s * arq;
        let new_q = s * arp + c * arq;
        m[p * n + r] = new_p;
        m[q * n + r] = new_q;
        m[r * n + p] = new_p;
        m[r * n + q] = new_q;
    }
    let (head, tail) = w.split_at_mut(q * n);
    let wp = &mut head[p * n..(p + 1) * n];
    let wq = &mut tail[..n];
    for (a, b) in wp.iter_mut().zip(wq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// +1 or -1 so that the first entry of (numerically) largest magnitude becomes positive.
fn sign_convention(v: &[f64]) -> f64 {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return 1.0;
    }
    let cut = max * (1.0 - 1e-9);
    match v.iter().find(|x| x.abs() >= cut) {
        Some(&x) if x < 0.0 => -1.0,
        _ => 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        a
    }

    fn check_invariants(a: &DenseMatrix, e: &EigResult) {
        let n = a.rows();
        let v = &e.vectors;
        let gram = v.t_matmul(v).unwrap();
        assert!(gram.max_abs_diff(&DenseMatrix::identity(n)) <= 1e-10 * n as f64);
        let av = a.matmul(v).unwrap();
        let mut vl = v.clone();
        for i in 0..n {
            for j in 0..n {
                vl[(i, j)] *= e.values[j];
            }
        }
        assert!(av.max_abs_diff(&vl) <= 1e-8 * a.max_abs().max(1.0));
        for w in e.values.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn diagonal_case() {
        let e = sym_eig(&DenseMatrix::from_diag(&[2.0, 3.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0]);
        assert_eq!(e.vectors, DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]));
    }

    #[test]
    fn two_node_path() {
        let e = sym_eig(&DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] + 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = DenseMatrix::from_rows(&[&[h, h], &[h, -h]]);
        assert!(e.vectors.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn random_reconstruction_seed_7() {
        let a = random_symmetric(8, 7);
        let e = sym_eig(&a).unwrap();
        check_invariants(&a, &e);
        let rec = e.reconstruct_with(|l| l);
        assert!(rec.max_abs_diff(&a) <= 1e-9);
    }

    #[test]
    fn large_instance_meets_invariants() {
        let a = random_symmetric(128, 11);
        let e = sym_eig(&a).unwrap();
        check_invariants(&a, &e);
    }

    #[test]
    fn rejects_nonsymmetric_and_nonsquare() {
        assert!(matches!(
            sym_eig(&DenseMatrix::from_rows(&[&[0.0, 1.0], &[0.5, 0.0]])),
            Err(Error::Model(_))
        ));
        assert!(matches!(sym_eig(&DenseMatrix::zeros(2, 3)), Err(Error::Model(_))));
    }

    #[test]
    fn deterministic_and_zero_matrix() {
        let a = random_symmetric(10, 1);
        assert_eq!(sym_eig(&a).unwrap(), sym_eig(&a).unwrap());
        let z = sym_eig(&DenseMatrix::zeros(3, 3)).unwrap();
        assert_eq!(z.values, vec![0.0; 3]);
    }

    #[test]
    fn orderings() {
        let a = DenseMatrix::from_diag(&[1.0, -3.0, 2.0]);
        assert_eq!(sym_eig_ordered(&a, EigOrder::Asc).unwrap().values, vec![-3.0, 1.0, 2.0]);
        assert_eq!(sym_eig_ordered(&a, EigOrder::AbsDesc).unwrap().values, vec![-3.0, 2.0, 1.0]);
    }
}
