//! Random graph ensembles and graph spectral bases.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{sym_eig_ordered, DenseMatrix, EigOrder};
use crate::rng::{substream, StreamRng};

const SW_MAX_ATTEMPTS: u64 = 10;
const SENSOR_MAX_ATTEMPTS: u64 = 100;

/// Undirected weighted graph stored as a dense symmetric weight matrix with
/// zero diagonal and nonnegative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    weights: DenseMatrix,
}

/// Which matrix of the graph plays the role of the shift operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftKind {
    #[default]
    Adjacency,
    Laplacian,
}

impl std::str::FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacency" => Ok(ShiftKind::Adjacency),
            "laplacian" => Ok(ShiftKind::Laplacian),
            other => Err(Error::Parse(format!("unknown shift '{other}'"))),
        }
    }
}

impl Graph {
    pub fn new(weights: DenseMatrix) -> Result<Self> {
        if !weights.is_square() {
            return Err(Error::Model("weight matrix must be square".into()));
        }
        if weights.asymmetry().unwrap_or(0.0) != 0.0 {
            return Err(Error::Model("weight matrix must be symmetric".into()));
        }
        for i in 0..weights.rows() {
            if weights[(i, i)] != 0.0 {
                return Err(Error::Model(format!("self-loop at node {i}")));
            }
        }
        if weights.data().iter().any(|&w| w < 0.0) {
            return Err(Error::Model("negative edge weight".into()));
        }
        Ok(Graph { weights })
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn shift(&self, kind: ShiftKind) -> DenseMatrix {
        match kind {
            ShiftKind::Adjacency => self.weights.clone(),
            ShiftKind::Laplacian => self.laplacian(),
        }
    }

    /// `L = diag(W 1) - W`.
    pub fn laplacian(&self) -> DenseMatrix {
        let deg = self.degrees();
        let mut l = self.weights.scale(-1.0);
        for (i, d) in deg.into_iter().enumerate() {
            l[(i, i)] = d;
        }
        l
    }

    /// Weighted degrees.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.weights.row(i).iter().sum()).collect()
    }

    pub fn edge_count(&self) -> usize {
        let n = self.n();
        (0..n)
            .map(|i| ((i + 1)..n).filter(|&j| self.weights[(i, j)] != 0.0).count())
            .sum()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.weights[(i, j)] != 0.0
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && self.weights[(i, j)] != 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Model(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

/// Stochastic block model: nodes are assigned to consecutive communities of
/// the given sizes; each pair is linked independently with probability
/// `p_in` inside a community and `p_out` across communities.
pub fn gen_sbm(n: usize, community_sizes: &[usize], p_in: f64, p_out: f64, seed: u64) -> Result<Graph> {
    check_prob("p_in", p_in)?;
    check_prob("p_out", p_out)?;
    let total: usize = community_sizes.iter().sum();
    if total != n {
        return Err(Error::Model(format!("community sizes sum to {total}, expected n = {n}")));
    }
    let mut label = Vec::with_capacity(n);
    for (b, &size) in community_sizes.iter().enumerate() {
        label.extend(std::iter::repeat(b).take(size));
    }
    let mut rng = substream(seed, "sbm", &[n as u64]);
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if label[i] == label[j] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                w[(i, j)] = 1.0;
                w[(j, i)] = 1.0;
            }
        }
    }
    Graph::new(w)
}

/// Erdős–Rényi graph with independent edges of probability `p_edge`.
pub fn gen_er(n: usize, p_edge: f64, seed: u64) -> Result<Graph> {
    check_prob("p_edge", p_edge)?;
    let mut rng = substream(seed, "er", &[n as u64]);
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p_edge {
                w[(i, j)] = 1.0;
                w[(j, i)] = 1.0;
            }
        }
    }
    Graph::new(w)
}

/// Ring degree used by [`gen_smallworld`]: `round(p_e (n - 1))`, at least 2,
/// rounded to the nearest even number and kept below `n`.
pub fn ring_degree(n: usize, p_e: f64) -> usize {
    let raw = (p_e * (n as f64 - 1.0)).round().max(2.0);
    let mut k = ((raw / 2.0).round() * 2.0) as usize;
    k = k.max(2);
    while k >= n && k >= 2 {
        k -= 2;
    }
    k
}

/// Small-world graph: a ring lattice where each node links to its
/// `ring_degree(n, p_e)` nearest neighbours, after which every lattice edge
/// is rewired with probability `p_r` to a uniformly chosen non-neighbour.
/// The edge count is preserved. Disconnected outcomes are redrawn up to 10
/// times.
pub fn gen_smallworld(n: usize, p_e: f64, p_r: f64, seed: u64) -> Result<Graph> {
    check_prob("p_e", p_e)?;
    check_prob("p_r", p_r)?;
    if n < 3 {
        return Err(Error::Model(format!("small-world graph needs n >= 3, got {n}")));
    }
    let k = ring_degree(n, p_e);
    for attempt in 0..SW_MAX_ATTEMPTS {
        let mut rng = substream(seed, "smallworld", &[n as u64, attempt]);
        let g = smallworld_once(n, k, p_r, &mut rng)?;
        if g.is_connected() {
            return Ok(g);
        }
        log::debug!("small-world attempt {attempt} disconnected, redrawing");
    }
    Err(Error::Generation(format!(
        "no connected small-world graph after {SW_MAX_ATTEMPTS} attempts (n = {n}, ring degree {k}, p_r = {p_r})"
    )))
}

fn smallworld_once(n: usize, k: usize, p_r: f64, rng: &mut StreamRng) -> Result<Graph> {
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 1..=k / 2 {
            let t = (i + j) % n;
            w[(i, t)] = 1.0;
            w[(t, i)] = 1.0;
        }
    }
    let mut candidates = Vec::with_capacity(n);
    for j in 1..=k / 2 {
        for i in 0..n {
            let t = (i + j) % n;
            if w[(i, t)] == 0.0 || rng.gen::<f64>() >= p_r {
                continue;
            }
            candidates.clear();
            candidates.extend((0..n).filter(|&u| u != i && w[(i, u)] == 0.0));
            if let Some(&u) = candidates.choose(rng) {
                w[(i, t)] = 0.0;
                w[(t, i)] = 0.0;
                w[(i, u)] = 1.0;
                w[(u, i)] = 1.0;
            }
        }
    }
    Graph::new(w)
}

/// Gaussian-kernel weights `α exp(-β d²)` over all pairs, with `α, β` fixed so
/// the smallest and largest off-diagonal weights are 0.01 and 1.
///
/// Returns `None` when the point set is degenerate (all pairwise distances
/// equal, or two coincident points).
pub fn sensor_kernel(points: &[(f64, f64)]) -> Option<DenseMatrix> {
    let n = points.len();
    let d2 = |i: usize, j: usize| {
        let dx = points[i].0 - points[j].0;
        let dy = points[i].1 - points[j].1;
        dx * dx + dy * dy
    };
    let (mut dmin, mut dmax) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = d2(i, j);
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
    }
    if n < 3 || dmin < 1e-20 || dmax - dmin < 1e-12 {
        return None;
    }
    let beta = 100f64.ln() / (dmax - dmin);
    let alpha = (beta * dmin).exp();
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = alpha * (-beta * d2(i, j)).exp();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Some(w)
}

/// Uniform points on the unit square for the sensor graph with this seed.
pub fn sensor_points(n: usize, seed: u64, attempt: u64) -> Vec<(f64, f64)> {
    let mut rng = substream(seed, "sensor", &[n as u64, attempt]);
    (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect()
}

/// Random geometric sensor network: Gaussian-kernel weights sparsified to the
/// union of every node's `knn` nearest neighbours.
pub fn gen_sensor_knn(n: usize, knn: usize, seed: u64) -> Result<Graph> {
    Ok(gen_sensor_knn_with_points(n, knn, seed)?.0)
}

/// Same as [`gen_sensor_knn`], also returning the node coordinates.
pub fn gen_sensor_knn_with_points(n: usize, knn: usize, seed: u64) -> Result<(Graph, Vec<(f64, f64)>)> {
    if knn == 0 || knn >= n {
        return Err(Error::Model(format!("need 0 < knn < n, got knn = {knn}, n = {n}")));
    }
    for attempt in 0..SENSOR_MAX_ATTEMPTS {
        let points = sensor_points(n, seed, attempt);
        let Some(kernel) = sensor_kernel(&points) else {
            continue;
        };
        let mut keep = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            // Largest weight = nearest; ties broken by index.
            order.sort_by(|&a, &b| kernel[(i, b)].total_cmp(&kernel[(i, a)]).then(a.cmp(&b)));
            for &j in order.iter().take(knn) {
                keep[(i, j)] = kernel[(i, j)];
                keep[(j, i)] = kernel[(i, j)];
            }
        }
        return Ok((Graph::new(keep)?, points));
    }
    Err(Error::Generation(format!("degenerate sensor layout after {SENSOR_MAX_ATTEMPTS} attempts")))
}

/// Eigenvectors and eigenvalues of a shift operator together with the
/// bandwidth `k` and the leading `k` eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    v: DenseMatrix,
    lambda: Vec<f64>,
    k: usize,
    v_k: DenseMatrix,
}

impl SpectralBasis {
    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.v.rows()
    }

    /// The first `k` eigenvectors, `n × k`.
    pub fn v_k(&self) -> &DenseMatrix {
        &self.v_k
    }

    /// Same eigenvectors with a different bandwidth.
    pub fn with_k(&self, k: usize) -> Result<SpectralBasis> {
        check_k(k, self.n())?;
        Ok(SpectralBasis { v: self.v.clone(), lambda: self.lambda.clone(), k, v_k: self.v.leading_cols(k) })
    }

    /// Graph Fourier transform `Vᵀ x`.
    pub fn gft(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.v.transpose().matvec(x)
    }

    /// Inverse transform `V x̃`.
    pub fn igft(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.v.matvec(coeffs)
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Model(format!("bandwidth k = {k} must satisfy 1 <= k <= n = {n}")));
    }
    Ok(())
}

/// Spectral basis with eigenvalues in descending order.
pub fn spectral_basis(shift: &DenseMatrix, k: usize) -> Result<SpectralBasis> {
    spectral_basis_ordered(shift, k, EigOrder::Desc)
}

pub fn spectral_basis_ordered(shift: &DenseMatrix, k: usize, order: EigOrder) -> Result<SpectralBasis> {
    check_k(k, shift.rows())?;
    let e = sym_eig_ordered(shift, order)?;
    let v_k = e.vectors.leading_cols(k);
    Ok(SpectralBasis { v: e.vectors, lambda: e.values, k, v_k })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_valid(g: &Graph) {
        let w = g.weights();
        assert!(w.is_symmetric(0.0));
        for i in 0..g.n() {
            assert_eq!(w[(i, i)], 0.0);
        }
        assert!(w.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sbm_paper_parameters() {
        let g = gen_sbm(96, &[24, 24, 24, 24], 0.8, 0.2, 1).unwrap();
        assert_eq!(g.n(), 96);
        assert_valid(&g);
        assert!(gen_sbm(96, &[24, 24], 0.8, 0.2, 1).is_err());
        assert!(gen_sbm(4, &[2, 2], 1.2, 0.2, 1).is_err());
    }

    #[test]
    fn sbm_extremes_give_disjoint_cliques() {
        let g = gen_sbm(6, &[3, 3], 1.0, 0.0, 9).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let same = i / 3 == j / 3;
                assert_eq!(g.has_edge(i, j), same && i != j);
            }
        }
    }

    #[test]
    fn sbm_intra_density_binomial() {
        // n = 48, two communities of 24: 2 * C(24, 2) = 552 intra pairs.
        let g = gen_sbm(48, &[24, 24], 0.8, 0.2, 5).unwrap();
        let mut intra = 0usize;
        for i in 0..48 {
            for j in (i + 1)..48 {
                if i / 24 == j / 24 && g.has_edge(i, j) {
                    intra += 1;
                }
            }
        }
        let pairs = 552.0;
        let mean = pairs * 0.8;
        let sd = (pairs * 0.8 * 0.2f64).sqrt();
        assert!((intra as f64 - mean).abs() <= 3.0 * sd, "intra edges {intra}");
    }

    #[test]
    fn er_extremes_and_count() {
        assert_eq!(gen_er(10, 0.0, 1).unwrap().edge_count(), 0);
        assert_eq!(gen_er(10, 1.0, 1).unwrap().edge_count(), 45);
        let g = gen_er(1000, 0.1, 3).unwrap();
        let pairs = 1000.0 * 999.0 / 2.0;
        let mean = pairs * 0.1;
        let sd = (pairs * 0.1 * 0.9f64).sqrt();
        assert!((g.edge_count() as f64 - mean).abs() <= 3.0 * sd);
    }

    #[test]
    fn ring_lattice_without_rewiring() {
        let g = gen_smallworld(20, 0.2, 0.0, 4).unwrap();
        let k = ring_degree(20, 0.2);
        assert_eq!(k, 4);
        assert!(g.degrees().iter().all(|&d| d == k as f64));
        assert_eq!(ring_degree(96, 0.2), 20);
        assert_eq!(ring_degree(10, 0.0), 2);
    }

    #[test]
    fn rewiring_preserves_edge_count() {
        let k = ring_degree(96, 0.2);
        for seed in 0..5 {
            let g = gen_smallworld(96, 0.2, 0.7, seed).unwrap();
            assert_valid(&g);
            assert!(g.is_connected());
            assert_eq!(g.edge_count(), 96 * k / 2);
        }
    }

    #[test]
    fn sensor_graph() {
        let g = gen_sensor_knn(96, 4, 2).unwrap();
        assert_valid(&g);
        // Every node keeps at least its own 4 nearest neighbours.
        for i in 0..96 {
            assert!((0..96).filter(|&j| g.has_edge(i, j)).count() >= 4);
        }
        let small = gen_sensor_knn(5, 4, 2).unwrap();
        assert_eq!(small.edge_count(), 10);
        assert!(gen_sensor_knn(5, 5, 2).is_err());
    }

    #[test]
    fn sensor_kernel_spans_target_range() {
        let pts = sensor_points(40, 8, 0);
        let k = sensor_kernel(&pts).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..40 {
            for j in (i + 1)..40 {
                lo = lo.min(k[(i, j)]);
                hi = hi.max(k[(i, j)]);
            }
        }
        assert!((lo - 0.01).abs() < 1e-12);
        assert!((hi - 1.0).abs() < 1e-12);
        assert!(sensor_kernel(&[(0.0, 0.0), (0.0, 0.0), (1.0, 1.0)]).is_none());
    }

    #[test]
    fn generators_are_seed_deterministic() {
        assert_eq!(gen_sbm(30, &[15, 15], 0.5, 0.1, 4).unwrap(), gen_sbm(30, &[15, 15], 0.5, 0.1, 4).unwrap());
        assert_ne!(gen_er(30, 0.5, 4).unwrap(), gen_er(30, 0.5, 5).unwrap());
        assert_eq!(gen_sensor_knn(20, 3, 1).unwrap(), gen_sensor_knn(20, 3, 1).unwrap());
    }

    #[test]
    fn hundred_seed_sweep_is_valid() {
        for seed in 0..100 {
            assert_valid(&gen_sbm(24, &[12, 12], 0.6, 0.1, seed).unwrap());
            assert_valid(&gen_er(24, 0.3, seed).unwrap());
            assert_valid(&gen_smallworld(24, 0.2, 0.5, seed).unwrap());
            assert_valid(&gen_sensor_knn(24, 4, seed).unwrap());
        }
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let g = gen_sensor_knn(12, 3, 0).unwrap();
        let l = g.laplacian();
        for i in 0..12 {
            assert!(l.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_basis_small_cases() {
        let path = DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let b = spectral_basis(&path, 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(b.v_k().max_abs_diff(&DenseMatrix::column_vector(&[h, h])) < 1e-15);
        let id = spectral_basis(&DenseMatrix::identity(4), 4).unwrap();
        assert_eq!(id.v(), &DenseMatrix::identity(4));
        assert!(spectral_basis(&path, 0).is_err());
        assert!(spectral_basis(&path, 3).is_err());
    }

    #[test]
    fn spectral_basis_sbm_invariants() {
        let g = gen_sbm(32, &[16, 16], 0.7, 0.1, 12).unwrap();
        let b = spectral_basis(g.weights(), 5).unwrap();
        let gram = b.v().t_matmul(b.v()).unwrap();
        assert!(gram.max_abs_diff(&DenseMatrix::identity(32)) <= 1e-10 * 32.0);
        assert!(b.lambda().windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(b.v_k(), &b.v().leading_cols(5));
        let x: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let back = b.igft(&b.gft(&x).unwrap()).unwrap();
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-10));
    }
}
