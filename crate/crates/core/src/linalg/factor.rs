use super::{dot, sym_eig, DenseMatrix};
use crate::error::{Error, Result};

/// Default relative cutoff on singular values for [`pinv`].
pub const DEFAULT_PINV_TOL: f64 = 1e-12;

/// Pivots below this fraction of `max|A|` are treated as singular.
const PIVOT_TOL: f64 = 1e-13;

/// Squared singular values are only accurate to about `eps · dim · λ_max`
/// when read off a Gram matrix; anything below this floor is noise.
const GRAM_FLOOR: f64 = 64.0 * f64::EPSILON;

/// `A = L D Lᵀ` with unit lower-triangular `L`.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    l: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn pivots(&self) -> &[f64] {
        &self.d
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let s = dot(&self.l[i * n..i * n + i], &b[..i]);
            b[i] -= s;
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = 0.0;
            for k in (i + 1)..n {
                s += self.l[k * n + i] * b[k];
            }
            b[i] -= s;
        }
    }

    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.rows() != self.n {
            return Err(Error::Dimension(format!(
                "right-hand side has {} rows, system has {}",
                b.rows(),
                self.n
            )));
        }
        let mut out = DenseMatrix::zeros(b.rows(), b.cols());
        let mut col = vec![0.0; self.n];
        for j in 0..b.cols() {
            for i in 0..self.n {
                col[i] = b[(i, j)];
            }
            self.solve_in_place(&mut col);
            for i in 0..self.n {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }
}

/// LDLᵀ factorization of a symmetric positive definite matrix.
///
/// Fails with [`Error::NotPositiveDefinite`] naming the first pivot that is
/// non-positive or below `1e-13 · max|A|`. No regularization is applied.
pub fn ldl_factor(a: &DenseMatrix) -> Result<LdlFactor> {
    if !a.is_square() {
        return Err(Error::Model(format!("SPD solve needs a square matrix, got {}x{}", a.rows(), a.cols())));
    }
    if !a.is_symmetric(1e-12) {
        return Err(Error::Model("SPD solve needs a symmetric matrix".into()));
    }
    let n = a.rows();
    let floor = PIVOT_TOL * a.max_abs();
    let mut l = vec![0.0; n * n];
    let mut d = vec![0.0; n];
    // Scratch row holding L[j, k] * d[k].
    let mut ld = vec![0.0; n];
    for j in 0..n {
        for k in 0..j {
            ld[k] = l[j * n + k] * d[k];
        }
        let dj = a[(j, j)] - dot(&l[j * n..j * n + j], &ld[..j]);
        if !(dj > floor) {
            return Err(Error::NotPositiveDefinite { index: j, value: dj });
        }
        d[j] = dj;
        l[j * n + j] = 1.0;
        for i in (j + 1)..n {
            let s = a[(i, j)] - dot(&l[i * n..i * n + j], &ld[..j]);
            l[i * n + j] = s / dj;
        }
    }
    Ok(LdlFactor { n, l, d })
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn solve_spd(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    ldl_factor(a)?.solve(b)
}

/// Solves a general square system `A X = B` by LU with partial pivoting.
pub fn lu_solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() || a.rows() != b.rows() {
        return Err(Error::Dimension(format!(
            "cannot solve {}x{} system with {}x{} right-hand side",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = a.rows();
    let mut lu = a.clone();
    let mut x = b.clone();
    let floor = PIVOT_TOL * a.max_abs();
    for k in 0..n {
        let (piv, val) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(val > floor) {
            return Err(Error::Numeric(format!("singular matrix: pivot {val:e} in column {k}")));
        }
        if piv != k {
            for j in 0..n {
                let t = lu[(k, j)];
                lu[(k, j)] = lu[(piv, j)];
                lu[(piv, j)] = t;
            }
            for j in 0..x.cols() {
                let t = x[(k, j)];
                x[(k, j)] = x[(piv, j)];
                x[(piv, j)] = t;
            }
        }
        let pivot = lu[(k, k)];
        for i in (k + 1)..n {
            let f = lu[(i, k)] / pivot;
            if f == 0.0 {
                continue;
            }
            lu[(i, k)] = f;
            for j in (k + 1)..n {
                lu[(i, j)] -= f * lu[(k, j)];
            }
            for j in 0..x.cols() {
                x[(i, j)] -= f * x[(k, j)];
            }
        }
    }
    for j in 0..x.cols() {
        for i in (0..n).rev() {
            let mut s = x[(i, j)];
            for k in (i + 1)..n {
                s -= lu[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = s / lu[(i, i)];
        }
    }
    Ok(x)
}

/// Symmetric inverse square root `M` with `M A M = I`.
pub fn inv_sqrt_spd(a: &DenseMatrix) -> Result<DenseMatrix> {
    let e = sym_eig(a)?;
    if let Some((index, &value)) = e.values.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NotPositiveDefinite { index, value });
    }
    Ok(e.reconstruct_with(|l| 1.0 / l.sqrt()))
}

/// Symmetric square root of a PSD matrix; tiny negative eigenvalues from
/// round-off are clamped to zero, larger ones are an error.
pub fn sqrt_psd(a: &DenseMatrix) -> Result<DenseMatrix> {
    let e = sym_eig(a)?;
    let scale = e.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = -1e-10 * scale.max(f64::MIN_POSITIVE);
    if let Some((index, &value)) = e.values.iter().enumerate().find(|(_, &v)| v < floor) {
        return Err(Error::NotPositiveDefinite { index, value });
    }
    Ok(e.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// Moore–Penrose pseudoinverse via the eigendecomposition of the smaller Gram
/// matrix (`A Aᵀ` or `Aᵀ A`).
///
/// Singular values `σ <= tol · σ_max` are dropped, as are those whose square
/// falls under the Gram round-off floor.
pub fn pinv(a: &DenseMatrix, tol: f64) -> DenseMatrix {
    pinv_with_rank(a, tol).0
}

/// [`pinv`] together with the numerical rank it used.
pub fn pinv_with_rank(a: &DenseMatrix, tol: f64) -> (DenseMatrix, usize) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (DenseMatrix::zeros(n, m), 0);
    }
    let wide = m <= n;
    let gram = if wide { a.matmul_t(a) } else { a.t_matmul(a) }.expect("gram shapes agree");
    let e = sym_eig(&gram.symmetrized()).expect("gram matrix is symmetric");
    let lmax = e.max_value().max(0.0);
    let dim = gram.rows() as f64;
    let cut = (tol * tol * lmax).max(GRAM_FLOOR * dim * lmax);
    let mut rank = 0;
    let inv = e.reconstruct_with(|l| {
        if l > cut && l > 0.0 {
            1.0 / l
        } else {
            0.0
        }
    });
    for &l in &e.values {
        if l > cut && l > 0.0 {
            rank += 1;
        }
    }
    let out = if wide {
        // A⁺ = Aᵀ (A Aᵀ)⁺
        a.t_matmul(&inv).expect("shapes agree")
    } else {
        // A⁺ = (Aᵀ A)⁺ Aᵀ
        inv.matmul_t(a).expect("shapes agree")
    };
    (out, rank)
}

/// Numerical rank with the same cutoff as [`pinv`].
pub fn numerical_rank(a: &DenseMatrix, tol: f64) -> usize {
    pinv_with_rank(a, tol).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let a = random(n, n, seed);
        a.t_matmul(&a).unwrap().add_diag(1.0).symmetrized()
    }

    #[test]
    fn solve_spd_trivial_cases() {
        let two = DenseMatrix::identity(2).scale(2.0);
        let x = solve_spd(&two, &DenseMatrix::identity(2)).unwrap();
        assert_eq!(x, DenseMatrix::identity(2).scale(0.5));
        let b = random(3, 2, 9);
        assert_eq!(solve_spd(&DenseMatrix::identity(3), &b).unwrap(), b);
    }

    #[test]
    fn solve_spd_residual_seed_3() {
        let a = random_spd(6, 3);
        let b = random(6, 3, 4);
        let x = solve_spd(&a, &b).unwrap();
        let r = a.matmul(&x).unwrap().max_abs_diff(&b);
        assert!(r <= 1e-10 * b.max_abs());
    }

    #[test]
    fn solve_spd_names_bad_pivot() {
        let a = DenseMatrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0], &[0.0, 1.0, 1.0]]);
        match solve_spd(&a, &DenseMatrix::identity(3)) {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected pivot error, got {other:?}"),
        }
        let neg = DenseMatrix::from_diag(&[1.0, -1.0]);
        assert!(matches!(
            solve_spd(&neg, &DenseMatrix::identity(2)),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
    }

    #[test]
    fn solve_spd_matches_pinv() {
        let a = random_spd(5, 21);
        let b = random(5, 2, 22);
        let x = solve_spd(&a, &b).unwrap();
        let y = pinv(&a, DEFAULT_PINV_TOL).matmul(&b).unwrap();
        assert!(x.max_abs_diff(&y) <= 1e-8);
    }

    #[test]
    fn lu_matches_spd_route() {
        let a = random_spd(7, 5);
        let b = random(7, 2, 6);
        let x = lu_solve(&a, &b).unwrap();
        assert!(x.max_abs_diff(&solve_spd(&a, &b).unwrap()) < 1e-10);
        let nonsym = random(4, 4, 8);
        let y = lu_solve(&nonsym, &DenseMatrix::identity(4)).unwrap();
        assert!(nonsym.matmul(&y).unwrap().max_abs_diff(&DenseMatrix::identity(4)) < 1e-10);
    }

    #[test]
    fn inv_sqrt_cases() {
        let m = inv_sqrt_spd(&DenseMatrix::identity(2).scale(4.0)).unwrap();
        assert!(m.max_abs_diff(&DenseMatrix::identity(2).scale(0.5)) < 1e-15);
        let m = inv_sqrt_spd(&DenseMatrix::from_diag(&[1.0, 9.0])).unwrap();
        assert!(m.max_abs_diff(&DenseMatrix::from_diag(&[1.0, 1.0 / 3.0])) < 1e-15);

        let a = random_spd(5, 13);
        let m = inv_sqrt_spd(&a).unwrap();
        assert!(m.is_symmetric(0.0));
        let mam = m.matmul(&a).unwrap().matmul(&m).unwrap();
        assert!(mam.max_abs_diff(&DenseMatrix::identity(5)) <= 1e-8);
        // (M)^-2 = A
        let m_inv = lu_solve(&m, &DenseMatrix::identity(5)).unwrap();
        let sq = m_inv.matmul(&m_inv).unwrap();
        assert!(sq.max_abs_diff(&a) <= 1e-7 * a.max_abs());

        assert!(matches!(
            inv_sqrt_spd(&DenseMatrix::from_diag(&[1.0, 0.0])),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn pinv_trivial_cases() {
        let p = pinv(&DenseMatrix::from_diag(&[2.0, 0.0]), DEFAULT_PINV_TOL);
        assert_eq!(p, DenseMatrix::from_diag(&[0.5, 0.0]));
        let p = pinv(&DenseMatrix::column_vector(&[1.0, 1.0]), DEFAULT_PINV_TOL);
        assert_eq!(p.shape(), (1, 2));
        assert!(p.max_abs_diff(&DenseMatrix::from_rows(&[&[0.5, 0.5]])) < 1e-15);
    }

    #[test]
    fn pinv_penrose_identities_rank_3() {
        // 4x6 of rank 3: product of 4x3 and 3x6 factors.
        let a = random(4, 3, 31).matmul(&random(3, 6, 32)).unwrap();
        for mat in [a.clone(), a.transpose()] {
            let (p, rank) = pinv_with_rank(&mat, DEFAULT_PINV_TOL);
            assert_eq!(rank, 3);
            let apa = mat.matmul(&p).unwrap().matmul(&mat).unwrap();
            let pap = p.matmul(&mat).unwrap().matmul(&p).unwrap();
            let ap = mat.matmul(&p).unwrap();
            let pa = p.matmul(&mat).unwrap();
            assert!(apa.max_abs_diff(&mat) < 1e-8);
            assert!(pap.max_abs_diff(&p) < 1e-8);
            assert!(ap.max_abs_diff(&ap.transpose()) < 1e-8);
            assert!(pa.max_abs_diff(&pa.transpose()) < 1e-8);
        }
    }
}
