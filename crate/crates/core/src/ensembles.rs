//! Gaussian orthogonal/unitary ensembles, the rank-one channel coupling and
//! spectrum extraction.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigh::{self, Eigensystem, Tridiagonal};
use crate::error::{Error, Result};
use crate::linalg::{Scalar, SquareMatrix};
use crate::rng::{self, Purpose};

/// Dyson symmetry class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Symmetry {
    /// Real symmetric, beta = 1.
    Orthogonal,
    /// Complex Hermitian, beta = 2.
    Unitary,
}

impl Symmetry {
    pub fn beta(self) -> f64 {
        match self {
            Symmetry::Orthogonal => 1.0,
            Symmetry::Unitary => 2.0,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Symmetry::Orthogonal => 1,
            Symmetry::Unitary => 2,
        }
    }
}

impl TryFrom<u8> for Symmetry {
    type Error = String;
    fn try_from(b: u8) -> std::result::Result<Self, String> {
        match b {
            1 => Ok(Symmetry::Orthogonal),
            2 => Ok(Symmetry::Unitary),
            other => Err(format!("beta must be 1 or 2, got {other}")),
        }
    }
}

impl From<Symmetry> for u8 {
    fn from(s: Symmetry) -> u8 {
        s.index()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub n: usize,
    pub beta: Symmetry,
    pub sigma: f64,
    /// Channel coupling `Z` added to `M[0][0]`.
    pub coupling: f64,
    pub seed: u64,
}

impl EnsembleParams {
    pub fn new(n: usize, beta: Symmetry, sigma: f64, coupling: f64, seed: u64) -> Result<Self> {
        let p = Self {
            n,
            beta,
            sigma,
            coupling,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters with the coupling given through `kappa = Z / (sigma sqrt(N))`.
    pub fn with_kappa(n: usize, beta: Symmetry, sigma: f64, kappa: f64, seed: u64) -> Result<Self> {
        Self::new(n, beta, sigma, kappa * sigma * (n as f64).sqrt(), seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParams(format!("n must be >= 2, got {}", self.n)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !self.coupling.is_finite() {
            return Err(Error::InvalidParams("coupling must be finite".into()));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.coupling / (self.sigma * (self.n as f64).sqrt())
    }

    /// Semicircle radius `2 sigma sqrt(N)`.
    pub fn radius(&self) -> f64 {
        2.0 * self.sigma * (self.n as f64).sqrt()
    }
}

/// A Hermitian matrix from either symmetry class.
#[derive(Debug, Clone, PartialEq)]
pub enum GaussianMatrix {
    Real(SquareMatrix<f64>),
    Complex(SquareMatrix<Complex64>),
}

impl GaussianMatrix {
    pub fn dim(&self) -> usize {
        match self {
            GaussianMatrix::Real(m) => m.dim(),
            GaussianMatrix::Complex(m) => m.dim(),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            GaussianMatrix::Real(m) => m.trace(),
            GaussianMatrix::Complex(m) => m.trace(),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        match self {
            GaussianMatrix::Real(m) => Complex64::new(m[(i, j)], 0.0),
            GaussianMatrix::Complex(m) => m[(i, j)],
        }
    }

    pub fn hermitian_defect(&self) -> f64 {
        match self {
            GaussianMatrix::Real(m) => m.hermitian_defect(),
            GaussianMatrix::Complex(m) => m.hermitian_defect(),
        }
    }
}

fn fill_real(n: usize, sigma: f64, rng: &mut impl Rng) -> SquareMatrix<f64> {
    let mut m = SquareMatrix::zeros(n);
    let diag_sd = sigma * std::f64::consts::SQRT_2;
    for i in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        m[(i, i)] = diag_sd * x;
        for j in i + 1..n {
            let x: f64 = rng.sample(StandardNormal);
            m[(i, j)] = sigma * x;
            m[(j, i)] = sigma * x;
        }
    }
    m
}

fn fill_complex(n: usize, sigma: f64, rng: &mut impl Rng) -> SquareMatrix<Complex64> {
    let mut m = SquareMatrix::zeros(n);
    let part_sd = sigma * std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        m[(i, i)] = Complex64::new(sigma * x, 0.0);
        for j in i + 1..n {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = Complex64::new(part_sd * re, part_sd * im);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

/// Draws `G` with density proportional to `exp(-(beta / 4 sigma^2) Tr G G^H)`.
///
/// For beta = 1 the diagonal has variance `2 sigma^2` and the off-diagonal
/// `sigma^2`; for beta = 2 the diagonal is real with variance `sigma^2` and
/// each off-diagonal real/imaginary part has variance `sigma^2 / 2`. Both give
/// the semicircle radius `2 sigma sqrt(N)`.
pub fn sample_gaussian(params: &EnsembleParams) -> GaussianMatrix {
    sample_realization(params, 0)
}

/// The `index`-th realization of the ensemble under `params.seed`.
pub fn sample_realization(params: &EnsembleParams, index: u64) -> GaussianMatrix {
    let mut rng = rng::stream(params.seed, Purpose::Matrix, index);
    match params.beta {
        Symmetry::Orthogonal => GaussianMatrix::Real(fill_real(params.n, params.sigma, &mut rng)),
        Symmetry::Unitary => GaussianMatrix::Complex(fill_complex(params.n, params.sigma, &mut rng)),
    }
}

/// `M = G + Z e_1 e_1^T`.
pub fn apply_rank_one(g: &GaussianMatrix, coupling: f64) -> GaussianMatrix {
    let mut m = g.clone();
    match &mut m {
        GaussianMatrix::Real(a) => a[(0, 0)] += coupling,
        GaussianMatrix::Complex(a) => a[(0, 0)] += Complex64::new(coupling, 0.0),
    }
    m
}

/// Eigendecomposition in either symmetry class.
#[derive(Debug, Clone)]
pub enum DenseEigen {
    Real(Eigensystem<f64>),
    Complex(Eigensystem<Complex64>),
}

impl DenseEigen {
    pub fn values(&self) -> &[f64] {
        match self {
            DenseEigen::Real(e) => &e.values,
            DenseEigen::Complex(e) => &e.values,
        }
    }

    /// Component `i` of eigenvector `alpha`.
    pub fn component(&self, i: usize, alpha: usize) -> Complex64 {
        match self {
            DenseEigen::Real(e) => Complex64::new(e.vectors[(i, alpha)], 0.0),
            DenseEigen::Complex(e) => e.vectors[(i, alpha)],
        }
    }

    pub fn unitarity_defect(&self) -> f64 {
        match self {
            DenseEigen::Real(e) => e.vectors.unitarity_defect(),
            DenseEigen::Complex(e) => e.vectors.unitarity_defect(),
        }
    }
}

fn check_hermitian<T: Scalar>(m: &SquareMatrix<T>) -> Result<()> {
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let defect = m.hermitian_defect();
    if defect > 1e-12 * scale {
        return Err(Error::InvalidParams(format!(
            "matrix is not Hermitian (defect {defect:e})"
        )));
    }
    Ok(())
}

/// Dense Hermitian eigendecomposition. `seed` is only used for diagnostics.
pub fn dense_eigh(m: &GaussianMatrix, seed: Option<u64>) -> Result<DenseEigen> {
    let tag = |e: Error| match e {
        Error::NoConvergence { index, .. } => Error::NoConvergence { index, seed },
        other => other,
    };
    match m {
        GaussianMatrix::Real(a) => {
            check_hermitian(a)?;
            eigh::eigh(a).map(DenseEigen::Real).map_err(tag)
        }
        GaussianMatrix::Complex(a) => {
            check_hermitian(a)?;
            eigh::eigh(a).map(DenseEigen::Complex).map_err(tag)
        }
    }
}

/// Eigenvalues `e` and first-component weights `r = |Phi_1|^2` of `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnperturbedSpectrum {
    pub e: Vec<f64>,
    pub r: Vec<f64>,
}

/// Eigenvalues `E` and first-component weights `z = |Psi_1|^2` of `M`, with
/// the raw first components when the producing path has them.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedSpectrum {
    pub energies: Vec<f64>,
    pub z: Vec<f64>,
    pub first_components: Option<Vec<Complex64>>,
}

impl PerturbedSpectrum {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }
}

impl From<PerturbedSpectrum> for UnperturbedSpectrum {
    fn from(s: PerturbedSpectrum) -> Self {
        UnperturbedSpectrum { e: s.energies, r: s.z }
    }
}

/// Eigenvalues plus squared moduli of eigenvector first components.
pub fn extract_spectrum(eig: &DenseEigen) -> PerturbedSpectrum {
    let values = eig.values().to_vec();
    let first: Vec<Complex64> = (0..values.len()).map(|a| eig.component(0, a)).collect();
    PerturbedSpectrum {
        energies: values,
        z: first.iter().map(|c| c.norm_sqr()).collect(),
        first_components: Some(first),
    }
}

/// Draws `(e, r)` with the same law as the dense pipeline in `O(N^2)`:
/// eigenvalues of the beta-Hermite tridiagonal model and weights from a
/// symmetric Dirichlet(beta/2) law, independent of the eigenvalues.
pub fn fast_sample_spectrum(params: &EnsembleParams) -> Result<UnperturbedSpectrum> {
    fast_sample_realization(params, 0)
}

pub fn fast_sample_realization(params: &EnsembleParams, index: u64) -> Result<UnperturbedSpectrum> {
    params.validate()?;
    let n = params.n;
    let beta = params.beta.beta();
    let sigma = params.sigma;
    let mut rng = rng::stream(params.seed, Purpose::FastSpectrum, index);

    let diag_sd = sigma * (2.0 / beta).sqrt();
    let diag: Vec<f64> = (0..n).map(|_| diag_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let dof = beta * (n - k) as f64;
            let chi = ChiSquared::new(dof).expect("positive degrees of freedom");
            sigma * (chi.sample(&mut rng) / beta).sqrt()
        })
        .collect();
    let e = eigh::tridiagonal_eigenvalues(&Tridiagonal { diag, off })?;

    let gamma = Gamma::new(beta / 2.0, 1.0).expect("positive shape");
    let mut r: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
    let total: f64 = r.iter().sum();
    r.iter_mut().for_each(|x| *x /= total);
    Ok(UnperturbedSpectrum { e, r })
}

fn write_rows(out: &mut impl Write, header: &str, values: &[f64], weights: &[f64]) -> std::io::Result<()> {
    writeln!(out, "{header}")?;
    for (i, (v, w)) in values.iter().zip(weights).enumerate() {
        writeln!(out, "{},{:.16e},{:.16e}", i + 1, v, w)?;
    }
    Ok(())
}

impl UnperturbedSpectrum {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        write_rows(out, "alpha,e,r", &self.e, &self.r)
    }
}

impl PerturbedSpectrum {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        write_rows(out, "alpha,E,z", &self.energies, &self.z)
    }
}

/// Parses either spectrum CSV layout into `(values, weights)`.
pub fn read_spectrum_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "alpha,e,r")) | Some((_, "alpha,E,z")) => {}
        _ => {
            return Err(Error::Config {
                line: 1,
                column: 1,
                message: "expected header `alpha,e,r` or `alpha,E,z`".into(),
            })
        }
    }
    let mut values = Vec::new();
    let mut weights = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |c: usize| -> Result<f64> {
            cols.get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Config {
                    line: ln + 1,
                    column: c + 1,
                    message: format!("bad number in `{line}`"),
                })
        };
        values.push(parse(1)?);
        weights.push(parse(2)?);
    }
    Ok((values, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(beta: Symmetry, n: usize, seed: u64) -> EnsembleParams {
        EnsembleParams::new(n, beta, 1.0, 0.0, seed).unwrap()
    }

    #[test]
    fn rejects_bad_params() {
        assert!(EnsembleParams::new(1, Symmetry::Orthogonal, 1.0, 0.0, 0).is_err());
        assert!(EnsembleParams::new(4, Symmetry::Orthogonal, 0.0, 0.0, 0).is_err());
        assert!(EnsembleParams::new(4, Symmetry::Orthogonal, 1.0, f64::NAN, 0).is_err());
        assert!(serde_json::from_str::<Symmetry>("3").is_err());
        assert_eq!(serde_json::from_str::<Symmetry>("2").unwrap(), Symmetry::Unitary);
    }

    #[test]
    fn kappa_round_trips() {
        let p = EnsembleParams::with_kappa(1000, Symmetry::Orthogonal, 1.0, 0.6, 1).unwrap();
        assert!((p.kappa() - 0.6).abs() < 1e-15);
        assert!((p.coupling - 0.6 * 1000f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = params(Symmetry::Unitary, 6, 99);
        assert_eq!(sample_gaussian(&p), sample_gaussian(&p));
        let q = params(Symmetry::Unitary, 6, 100);
        assert_ne!(sample_gaussian(&p), sample_gaussian(&q));
    }

    #[test]
    fn samples_are_exactly_hermitian() {
        for beta in [Symmetry::Orthogonal, Symmetry::Unitary] {
            let g = sample_gaussian(&params(beta, 9, 3));
            assert_eq!(g.hermitian_defect(), 0.0);
            if beta == Symmetry::Unitary {
                for i in 0..9 {
                    assert_eq!(g.entry(i, i).im, 0.0);
                }
            }
        }
    }

    #[test]
    fn entry_variances_follow_trace_form() {
        // Pool entries over many small matrices.
        let reps = 4000;
        let n = 6;
        let mut diag = Vec::new();
        let mut off = Vec::new();
        let mut off_re = Vec::new();
        let mut off_im = Vec::new();
        for idx in 0..reps {
            let g1 = sample_realization(&params(Symmetry::Orthogonal, n, 11), idx);
            let g2 = sample_realization(&params(Symmetry::Unitary, n, 12), idx);
            for i in 0..n {
                diag.push(g1.entry(i, i).re);
                for j in i + 1..n {
                    off.push(g1.entry(i, j).re);
                    off_re.push(g2.entry(i, j).re);
                    off_im.push(g2.entry(i, j).im);
                }
            }
        }
        let var = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        // Standard error of a Gaussian variance estimate is var * sqrt(2/n).
        let check = |v: &[f64], target: f64| {
            let se = target * (2.0 / v.len() as f64).sqrt();
            assert!((var(v) - target).abs() < 3.0 * se, "var {} vs {}", var(v), target);
        };
        check(&diag, 2.0);
        check(&off, 1.0);
        check(&off_re, 0.5);
        check(&off_im, 0.5);
    }

    #[test]
    fn rank_one_touches_only_the_corner() {
        let g = sample_gaussian(&params(Symmetry::Unitary, 5, 1));
        let m = apply_rank_one(&g, 2.5);
        assert!((m.trace() - g.trace() - 2.5).abs() < 1e-14);
        for i in 0..5 {
            for j in 0..5 {
                if (i, j) != (0, 0) {
                    assert_eq!(m.entry(i, j), g.entry(i, j));
                }
            }
        }
        assert_eq!(apply_rank_one(&g, 0.0), g);
    }

    #[test]
    fn two_by_two_zero_matrix_plus_coupling() {
        let g = GaussianMatrix::Real(SquareMatrix::zeros(2));
        let m = apply_rank_one(&g, 1.0);
        let eig = dense_eigh(&m, None).unwrap();
        assert_eq!(eig.values(), &[0.0, 1.0]);
    }

    #[test]
    fn dense_eigh_diagonalizes_random_goe() {
        let g = sample_gaussian(&params(Symmetry::Orthogonal, 8, 5));
        let eig = dense_eigh(&g, Some(5)).unwrap();
        let DenseEigen::Real(es) = &eig else { unreachable!() };
        let GaussianMatrix::Real(a) = &g else { unreachable!() };
        let d = es.vectors.conj_transpose().matmul(a).matmul(&es.vectors);
        for i in 0..8 {
            for j in 0..8 {
                let target = if i == j { es.values[i] } else { 0.0 };
                assert!((d[(i, j)] - target).abs() < 1e-10);
            }
        }
        let sum: f64 = es.values.iter().sum();
        assert!((sum - g.trace()).abs() <= 1e-10 * g.trace().abs().max(1.0));
    }

    #[test]
    fn dense_eigh_rejects_non_hermitian() {
        let m = GaussianMatrix::Real(SquareMatrix::from_row_major(2, vec![0.0, 1.0, 0.0, 0.0]));
        assert!(dense_eigh(&m, None).is_err());
    }

    #[test]
    fn identity_eigenvectors_give_unit_first_weight() {
        let m = GaussianMatrix::Real(SquareMatrix::from_row_major(
            3,
            vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0],
        ));
        let s = extract_spectrum(&dense_eigh(&m, None).unwrap());
        assert_eq!(s.z, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn weights_ignore_eigenvector_phase() {
        let g = sample_gaussian(&params(Symmetry::Unitary, 7, 8));
        let eig = dense_eigh(&g, None).unwrap();
        let DenseEigen::Complex(mut es) = eig.clone() else {
            unreachable!()
        };
        for j in 0..7 {
            let ph = Complex64::from_polar(1.0, 0.3 * j as f64 + 0.1);
            for i in 0..7 {
                es.vectors[(i, j)] *= ph;
            }
        }
        let a = extract_spectrum(&eig);
        let b = extract_spectrum(&DenseEigen::Complex(es));
        for (x, y) in a.z.iter().zip(&b.z) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fast_sampler_weights_sum_to_one() {
        for beta in [Symmetry::Orthogonal, Symmetry::Unitary] {
            let s = fast_sample_spectrum(&params(beta, 50, 4)).unwrap();
            assert!((s.r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.e.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn csv_has_header_and_round_trips() {
        let s = UnperturbedSpectrum {
            e: vec![-1.0, 0.1 + 0.2],
            r: vec![0.25, 0.75],
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("alpha,e,r\n1,"));
        let (v, w) = read_spectrum_csv(&text).unwrap();
        assert_eq!(v, s.e);
        assert_eq!(w, s.r);
    }
}
