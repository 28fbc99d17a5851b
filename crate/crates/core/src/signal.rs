//! Bandlimited stochastic signals on a graph.
//!
//! A signal is `x = V_k z` with `z ~ N(0, T)`, so its covariance is
//! `R_x = V_k T V_kᵀ`. Additive noise is `w ~ N(0, R_w)`, independent of `x`.

use crate::error::{Error, Result};
use crate::graph::SpectralBasis;
use crate::linalg::{ldl_factor, sqrt_psd, DenseMatrix};
use crate::rng::{substream, Gaussian};

/// Spectral basis with bandwidth `k` plus a `k × k` frequency template `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandlimitedModel {
    basis: SpectralBasis,
    template: DenseMatrix,
}

impl BandlimitedModel {
    pub fn new(basis: SpectralBasis, template: DenseMatrix) -> Result<Self> {
        let k = basis.k();
        if template.shape() != (k, k) {
            return Err(Error::Dimension(format!(
                "template is {}x{}, bandwidth is {k}",
                template.rows(),
                template.cols()
            )));
        }
        if !template.is_symmetric(1e-12) {
            return Err(Error::Model("frequency template must be symmetric".into()));
        }
        // PSD check (clamps only round-off negatives).
        sqrt_psd(&template)?;
        Ok(BandlimitedModel { basis, template })
    }

    /// White template `T = I_k`.
    pub fn white(basis: SpectralBasis) -> Self {
        let k = basis.k();
        BandlimitedModel { basis, template: DenseMatrix::identity(k) }
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn template(&self) -> &DenseMatrix {
        &self.template
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn k(&self) -> usize {
        self.basis.k()
    }

    pub fn covariance(&self) -> DenseMatrix {
        covariance_from_model(self)
    }
}

/// `R_x = V_k T V_kᵀ`.
pub fn covariance_from_model(model: &BandlimitedModel) -> DenseMatrix {
    let vk = model.basis.v_k();
    let vt = vk.matmul(&model.template).expect("template matches bandwidth");
    vt.matmul_t(vk).expect("shapes agree").symmetrized()
}

/// Zero-mean Gaussian noise with a positive definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    cov: DenseMatrix,
}

impl NoiseModel {
    pub fn new(cov: DenseMatrix) -> Result<Self> {
        ldl_factor(&cov).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => {
                Error::Model(format!("noise covariance must be positive definite ({e})"))
            }
            other => other,
        })?;
        Ok(NoiseModel { cov })
    }

    /// `σ² I_n`; `σ²` must be positive.
    pub fn white(n: usize, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::Model(format!("noise variance must be positive, got {sigma2}")));
        }
        Ok(NoiseModel { cov: DenseMatrix::identity(n).scale(sigma2) })
    }

    pub fn cov(&self) -> &DenseMatrix {
        &self.cov
    }

    pub fn n(&self) -> usize {
        self.cov.rows()
    }

    fn factor(&self) -> Result<DenseMatrix> {
        let n = self.n();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || self.cov[(i, j)] == 0.0));
        if diagonal {
            Ok(DenseMatrix::from_diag(&self.cov.diag().iter().map(|v| v.sqrt()).collect::<Vec<_>>()))
        } else {
            sqrt_psd(&self.cov)
        }
    }
}

/// A batch of `count` signals of dimension `n`.
///
/// Stored one signal per contiguous row internally; the external (CSV)
/// layout is `n × count` with one signal per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBatch {
    signals: DenseMatrix,
}

impl SignalBatch {
    /// From an `n × count` matrix holding one signal per column.
    pub fn from_columns(m: &DenseMatrix) -> Self {
        SignalBatch { signals: m.transpose() }
    }

    /// From a `count × n` matrix holding one signal per row.
    pub fn from_rows(m: DenseMatrix) -> Self {
        SignalBatch { signals: m }
    }

    /// `n × count`, one signal per column.
    pub fn to_columns(&self) -> DenseMatrix {
        self.signals.transpose()
    }

    /// `count × n`, one signal per row.
    pub fn as_rows(&self) -> &DenseMatrix {
        &self.signals
    }

    pub fn n(&self) -> usize {
        self.signals.cols()
    }

    pub fn count(&self) -> usize {
        self.signals.rows()
    }

    pub fn signal(&self, t: usize) -> &[f64] {
        self.signals.row(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.count()).map(move |t| self.signals.row(t))
    }

    /// Mean of `‖x_t‖²` over the batch.
    pub fn mean_energy(&self) -> f64 {
        self.signals.data().iter().map(|v| v * v).sum::<f64>() / self.count().max(1) as f64
    }
}

/// Draws `count` signals `x = V_k T^{1/2} g`, `g ~ N(0, I_k)`; signal `t` uses
/// its own substream so the batch does not depend on generation order.
pub fn sample_signals(model: &BandlimitedModel, count: usize, seed: u64) -> Result<SignalBatch> {
    if count == 0 {
        return Err(Error::Model("signal count must be at least 1".into()));
    }
    let n = model.n();
    let k = model.k();
    let factor = model.basis.v_k().matmul(&sqrt_psd(&model.template)?)?;
    let mut out = DenseMatrix::zeros(count, n);
    let mut z = vec![0.0; k];
    for t in 0..count {
        let mut g = Gaussian::new(substream(seed, "signal", &[t as u64]));
        g.fill(&mut z);
        let x = factor.matvec(&z)?;
        out.row_mut(t).copy_from_slice(&x);
    }
    Ok(SignalBatch { signals: out })
}

/// Returns `x_t + w_t` with independent `w_t ~ N(0, R_w)` per signal.
pub fn add_noise(batch: &SignalBatch, noise: &NoiseModel, seed: u64) -> Result<SignalBatch> {
    let n = batch.n();
    if noise.n() != n {
        return Err(Error::Dimension(format!("noise has dimension {}, signals have {n}", noise.n())));
    }
    let factor = noise.factor()?;
    let mut out = batch.signals.clone();
    let mut g_buf = vec![0.0; n];
    for t in 0..batch.count() {
        let mut g = Gaussian::new(substream(seed, "noise", &[t as u64]));
        g.fill(&mut g_buf);
        let w = factor.matvec(&g_buf)?;
        for (x, wi) in out.row_mut(t).iter_mut().zip(w) {
            *x += wi;
        }
    }
    Ok(SignalBatch { signals: out })
}

/// `σ²_coeff · mean ‖x‖²` over the batch.
pub fn noise_power(sigma_coeff: f64, batch: &SignalBatch) -> Result<f64> {
    if batch.count() == 0 {
        return Err(Error::Model("noise power of an empty batch".into()));
    }
    Ok(sigma_coeff * batch.mean_energy())
}

/// Second-moment matrix `(1/count) Σ x xᵀ`, optionally about the batch mean.
pub fn empirical_covariance(batch: &SignalBatch, center: bool) -> Result<DenseMatrix> {
    let count = batch.count();
    if count == 0 {
        return Err(Error::Model("covariance of an empty batch".into()));
    }
    let mut x = batch.signals.clone();
    if center {
        let n = batch.n();
        let mut mean = vec![0.0; n];
        for row in batch.iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        for t in 0..count {
            for (v, m) in x.row_mut(t).iter_mut().zip(&mean) {
                *v -= m;
            }
        }
    }
    Ok(x.t_matmul(&x)?.scale(1.0 / count as f64).symmetrized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_sbm, spectral_basis};
    use crate::linalg::{numerical_rank, sym_eig};

    fn sbm_basis(n: usize, k: usize, seed: u64) -> SpectralBasis {
        let sizes = vec![n / 4; 4];
        let g = gen_sbm(n, &sizes, 0.8, 0.2, seed).unwrap();
        spectral_basis(g.weights(), k).unwrap()
    }

    fn projector_residual(vk: &DenseMatrix, x: &[f64]) -> f64 {
        let coeffs = vk.transpose().matvec(x).unwrap();
        let proj = vk.matvec(&coeffs).unwrap();
        proj.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    #[test]
    fn covariance_trivial_cases() {
        let basis = spectral_basis(&DenseMatrix::from_diag(&[2.0, 1.0]), 1).unwrap();
        let m = BandlimitedModel::new(basis, DenseMatrix::identity(1)).unwrap();
        assert_eq!(m.covariance(), DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]));

        let b = sbm_basis(16, 3, 1);
        let white = BandlimitedModel::white(b.clone());
        let proj = b.v_k().matmul_t(b.v_k()).unwrap();
        assert!(white.covariance().max_abs_diff(&proj) < 1e-14);
    }

    #[test]
    fn covariance_rank_equals_k() {
        let b = sbm_basis(32, 5, 2);
        let a = DenseMatrix::from_vec(5, 5, (0..25).map(|i| ((i * 7) % 11) as f64 / 11.0).collect()).unwrap();
        let t = a.t_matmul(&a).unwrap().add_diag(0.1).symmetrized();
        let rx = BandlimitedModel::new(b, t).unwrap().covariance();
        let e = sym_eig(&rx).unwrap();
        assert_eq!(e.values.iter().filter(|&&l| l > 1e-10).count(), 5);
        assert_eq!(numerical_rank(&rx, 1e-10), 5);
    }

    #[test]
    fn template_validation() {
        let b = sbm_basis(16, 2, 0);
        assert!(BandlimitedModel::new(b.clone(), DenseMatrix::identity(3)).is_err());
        assert!(BandlimitedModel::new(b, DenseMatrix::from_diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn zero_template_gives_zero_batch() {
        let b = sbm_basis(16, 3, 3);
        let m = BandlimitedModel::new(b, DenseMatrix::zeros(3, 3)).unwrap();
        let batch = sample_signals(&m, 5, 1).unwrap();
        assert!(batch.as_rows().data().iter().all(|&v| v == 0.0));
        assert!(sample_signals(&m, 0, 1).is_err());
    }

    #[test]
    fn samples_lie_in_band() {
        let b = sbm_basis(32, 4, 4);
        let m = BandlimitedModel::white(b.clone());
        let batch = sample_signals(&m, 50, 2).unwrap();
        for x in batch.iter() {
            assert!(projector_residual(b.v_k(), x) <= 1e-10);
        }
    }

    #[test]
    fn monte_carlo_covariance_matches_model() {
        let b = sbm_basis(16, 3, 5);
        let t = DenseMatrix::from_rows(&[&[2.0, 0.5, 0.0], &[0.5, 1.0, 0.2], &[0.0, 0.2, 0.5]]);
        let m = BandlimitedModel::new(b, t).unwrap();
        let batch = sample_signals(&m, 20_000, 6).unwrap();
        let emp = empirical_covariance(&batch, false).unwrap();
        let rx = m.covariance();
        let rel = emp.sub(&rx).unwrap().frobenius() / rx.frobenius();
        assert!(rel < 0.05, "relative error {rel}");
    }

    #[test]
    fn vanishing_and_unit_noise() {
        let b = sbm_basis(16, 3, 7);
        let batch = sample_signals(&BandlimitedModel::white(b), 10, 1).unwrap();
        let tiny = add_noise(&batch, &NoiseModel::white(16, 1e-30).unwrap(), 3).unwrap();
        assert!(tiny.as_rows().max_abs_diff(batch.as_rows()) <= 1e-14);

        let zeros = SignalBatch::from_rows(DenseMatrix::zeros(50_000, 4));
        let noisy = add_noise(&zeros, &NoiseModel::white(4, 1.0).unwrap(), 9).unwrap();
        for j in 0..4 {
            let var = noisy.as_rows().column(j).iter().map(|v| v * v).sum::<f64>() / 50_000.0;
            assert!((0.97..=1.03).contains(&var), "variance {var}");
        }
        let again = add_noise(&zeros, &NoiseModel::white(4, 1.0).unwrap(), 9).unwrap();
        assert_eq!(noisy, again);
        assert!(NoiseModel::white(4, 0.0).is_err());
        assert!(add_noise(&zeros, &NoiseModel::white(3, 1.0).unwrap(), 1).is_err());
    }

    #[test]
    fn correlated_noise_covariance() {
        let rw = DenseMatrix::from_rows(&[&[1.0, 0.6], &[0.6, 2.0]]);
        let zeros = SignalBatch::from_rows(DenseMatrix::zeros(40_000, 2));
        let noisy = add_noise(&zeros, &NoiseModel::new(rw.clone()).unwrap(), 4).unwrap();
        let emp = empirical_covariance(&noisy, false).unwrap();
        assert!(emp.max_abs_diff(&rw) < 0.05);
        assert!(NoiseModel::new(DenseMatrix::from_diag(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn noise_power_cases() {
        let unit = SignalBatch::from_columns(&DenseMatrix::column_vector(&[1.0, 0.0, 0.0]));
        assert_eq!(noise_power(0.0, &unit).unwrap(), 0.0);
        assert_eq!(noise_power(1.0, &unit).unwrap(), 1.0);
        assert_eq!(noise_power(3.0, &unit).unwrap(), 3.0 * noise_power(1.0, &unit).unwrap());

        // E‖x‖² = tr(T) = k for a white template.
        let b = sbm_basis(96, 10, 8);
        let count = 4000;
        let batch = sample_signals(&BandlimitedModel::white(b), count, 2).unwrap();
        let est = noise_power(1e-4, &batch).unwrap();
        // ‖x‖² ~ χ²_k: variance 2k.
        let se = 1e-4 * (2.0 * 10.0 / count as f64).sqrt();
        assert!((est - 1e-3).abs() <= 4.0 * se, "estimate {est}");
    }

    #[test]
    fn empirical_covariance_small_cases() {
        let u = SignalBatch::from_columns(&DenseMatrix::column_vector(&[1.0, 2.0]));
        assert_eq!(empirical_covariance(&u, false).unwrap(), DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]));
        let pm = SignalBatch::from_columns(&DenseMatrix::from_rows(&[&[1.0, -1.0], &[0.0, 0.0], &[0.0, 0.0]]));
        assert_eq!(empirical_covariance(&pm, false).unwrap(), DenseMatrix::from_diag(&[1.0, 0.0, 0.0]));
        let shifted = SignalBatch::from_columns(&DenseMatrix::from_rows(&[&[3.0, 5.0]]));
        assert_eq!(empirical_covariance(&shifted, true).unwrap(), DenseMatrix::from_diag(&[1.0]));
    }

    #[test]
    fn empirical_subspace_aligns() {
        let b = sbm_basis(96, 10, 9);
        let batch = sample_signals(&BandlimitedModel::white(b.clone()), 500, 3).unwrap();
        let emp = empirical_covariance(&batch, false).unwrap();
        let e = sym_eig(&emp).unwrap();
        let u = e.vectors.leading_cols(10);
        let p_emp = u.matmul_t(&u).unwrap();
        let p_true = b.v_k().matmul_t(b.v_k()).unwrap();
        assert!(p_emp.max_abs_diff(&p_true) <= 0.2);
        assert!(emp.is_symmetric(0.0));
        assert!(e.min_value() >= -1e-12);
    }
}
