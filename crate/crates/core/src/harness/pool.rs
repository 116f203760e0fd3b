//! Cached Householder reductions of the unperturbed matrices.
//!
//! The coupling only touches the `(0,0)` entry, and the reduction leaves the
//! first basis vector fixed, so one reduction of `G` yields the exact spectrum
//! of `G + Z e1 e1^T` for every `Z` at quadratic cost.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::eigh::{tridiagonalize, Reduction};
use crate::ensembles::{sample_realization, EnsembleParams, GaussianMatrix, PerturbedSpectrum, Symmetry};
use crate::error::{Error, Result};

use super::ExperimentConfig;

/// Rows of the eigenvector matrix kept per realization: the coupled site and
/// one uncoupled site.
const TRACKED_ROWS: [usize; 2] = [0, 1];

enum Reduced {
    Real(Reduction<f64>),
    Complex(Reduction<Complex64>),
}

/// Spectrum of one coupled realization with two eigenvector rows.
#[derive(Debug, Clone)]
pub struct Solved {
    pub energies: Vec<f64>,
    pub first: Vec<Complex64>,
    pub second: Vec<Complex64>,
}

impl Solved {
    pub fn perturbed(&self) -> PerturbedSpectrum {
        PerturbedSpectrum {
            energies: self.energies.clone(),
            z: self.first.iter().map(|c| c.norm_sqr()).collect(),
            first_components: Some(self.first.clone()),
        }
    }

    /// `N |Psi_2(alpha)|^2` for every state.
    pub fn second_widths(&self) -> Vec<f64> {
        let n = self.energies.len() as f64;
        self.second.iter().map(|c| n * c.norm_sqr()).collect()
    }
}

/// Realizations `0..count` of one ensemble and master seed.
pub struct Pool {
    params: EnsembleParams,
    reduced: Vec<Reduced>,
}

impl Pool {
    pub fn build(n: usize, beta: Symmetry, sigma: f64, seed: u64, count: usize) -> Result<Self> {
        let params = EnsembleParams::new(n, beta, sigma, 0.0, seed)?;
        let reduced = (0..count as u64)
            .into_par_iter()
            .map(|i| match sample_realization(&params, i) {
                GaussianMatrix::Real(a) => Reduced::Real(tridiagonalize(&a, &TRACKED_ROWS)),
                GaussianMatrix::Complex(a) => Reduced::Complex(tridiagonalize(&a, &TRACKED_ROWS)),
            })
            .collect();
        Ok(Self { params, reduced })
    }

    pub fn len(&self) -> usize {
        self.reduced.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reduced.is_empty()
    }

    pub fn params(&self) -> &EnsembleParams {
        &self.params
    }

    /// Exact spectrum of realization `index` with coupling `coupling`.
    pub fn solve(&self, index: usize, coupling: f64) -> Result<Solved> {
        let tag = |e: Error| match e {
            Error::NoConvergence { index: i, .. } => Error::NoConvergence {
                index: i,
                seed: Some(self.params.seed),
            },
            other => other,
        };
        match &self.reduced[index] {
            Reduced::Real(r) => {
                let p = r.solve_shifted(coupling).map_err(tag)?;
                let lift = |row: &Vec<f64>| row.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                Ok(Solved {
                    first: lift(&p.rows[0]),
                    second: lift(&p.rows[1]),
                    energies: p.values,
                })
            }
            Reduced::Complex(r) => {
                let mut p = r.solve_shifted(coupling).map_err(tag)?;
                let second = p.rows.pop().expect("two tracked rows");
                let first = p.rows.pop().expect("two tracked rows");
                Ok(Solved {
                    energies: p.values,
                    first,
                    second,
                })
            }
        }
    }

    /// Spectra of the realizations in `range` at one coupling, in index order.
    pub fn solve_range(&self, range: std::ops::Range<usize>, coupling: f64) -> Result<Vec<Solved>> {
        range.into_par_iter().map(|i| self.solve(i, coupling)).collect()
    }

    pub fn solve_all(&self, coupling: f64) -> Result<Vec<Solved>> {
        self.solve_range(0..self.len(), coupling)
    }

    pub fn solve_kappa(&self, kappa: f64) -> Result<Vec<Solved>> {
        let unit = self.params.sigma * (self.params.n as f64).sqrt();
        self.solve_all(kappa * unit)
    }
}

/// Lazily built pools shared by the experiments of one suite.
pub struct Workspace {
    n: usize,
    sigma: f64,
    realizations: usize,
    pools: Mutex<HashMap<(u64, u8), Arc<Pool>>>,
}

impl Workspace {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            n: cfg.n,
            sigma: cfg.sigma,
            realizations: cfg.realizations,
            pools: Mutex::new(HashMap::new()),
        }
    }

    pub fn pool(&self, seed: u64, beta: Symmetry) -> Result<Arc<Pool>> {
        let key = (seed, beta.index());
        if let Some(p) = self.pools.lock().expect("pool cache").get(&key) {
            return Ok(p.clone());
        }
        let built = Arc::new(Pool::build(self.n, beta, self.sigma, seed, self.realizations)?);
        self.pools.lock().expect("pool cache").insert(key, built.clone());
        Ok(built)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{apply_rank_one, dense_eigh, extract_spectrum};

    #[test]
    fn pooled_spectrum_matches_dense_diagonalization() {
        for beta in [Symmetry::Orthogonal, Symmetry::Unitary] {
            let pool = Pool::build(40, beta, 1.0, 9, 3).unwrap();
            let z = 0.8 * 40f64.sqrt();
            let params = EnsembleParams::new(40, beta, 1.0, 0.0, 9).unwrap();
            for i in 0..3 {
                let s = pool.solve(i, z).unwrap();
                let m = apply_rank_one(&sample_realization(&params, i as u64), z);
                let eig = dense_eigh(&m, None).unwrap();
                let dense = extract_spectrum(&eig);
                let got = s.perturbed();
                for a in 0..40 {
                    assert!((got.energies[a] - dense.energies[a]).abs() < 1e-10);
                    assert!((got.z[a] - dense.z[a]).abs() < 1e-10);
                    let w2 = eig.component(1, a).norm_sqr();
                    assert!((s.second[a].norm_sqr() - w2).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn workspace_caches_pools() {
        let cfg = ExperimentConfig {
            n: 10,
            realizations: 2,
            ..Default::default()
        };
        let ws = Workspace::new(&cfg);
        let a = ws.pool(1, Symmetry::Orthogonal).unwrap();
        let b = ws.pool(1, Symmetry::Orthogonal).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let c = ws.pool(2, Symmetry::Orthogonal).unwrap();
        assert!(!Arc::ptr_eq(&a, &c));
        assert_eq!(a.len(), 2);
    }
}
