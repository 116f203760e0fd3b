//! Cross-checks against nalgebra's Hermitian eigensolver and exact invariants
//! of the rank-one update.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use proptest::prelude::*;
use rankone_rmt::ensembles::{
    apply_rank_one, dense_eigh, extract_spectrum, sample_realization, EnsembleParams, GaussianMatrix, Symmetry,
    UnperturbedSpectrum,
};
use rankone_rmt::rank_one::perturb;

/// Sorted eigenvalues and `|v_0|^2` of each eigenvector from nalgebra.
fn reference(m: &GaussianMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.dim();
    let mut pairs: Vec<(f64, f64)> = match m {
        GaussianMatrix::Real(a) => {
            let dm = DMatrix::from_fn(n, n, |i, j| a[(i, j)]);
            let eig = SymmetricEigen::new(dm);
            (0..n)
                .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
                .collect()
        }
        GaussianMatrix::Complex(a) => {
            let dm = DMatrix::from_fn(n, n, |i, j| a[(i, j)]);
            let eig = SymmetricEigen::new(dm);
            (0..n)
                .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].norm_sqr()))
                .collect()
        }
    };
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn symmetry(b: bool) -> Symmetry {
    if b {
        Symmetry::Unitary
    } else {
        Symmetry::Orthogonal
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn dense_eigh_matches_nalgebra_both_classes() {
    for beta in [Symmetry::Orthogonal, Symmetry::Unitary] {
        let p = EnsembleParams::with_kappa(120, beta, 1.0, 0.8, 7).unwrap();
        let m = apply_rank_one(&sample_realization(&p, 3), p.coupling);
        let ours = extract_spectrum(&dense_eigh(&m, Some(7)).unwrap());
        let (e, z) = reference(&m);
        assert!(max_diff(&ours.energies, &e) < 1e-10, "{beta:?}");
        assert!(max_diff(&ours.z, &z) < 1e-10, "{beta:?}");
    }
}

#[test]
fn dense_eigenvectors_reconstruct_the_matrix() {
    let p = EnsembleParams::new(40, Symmetry::Unitary, 1.3, 0.0, 11).unwrap();
    let g = sample_realization(&p, 0);
    let eig = dense_eigh(&g, None).unwrap();
    let vals = eig.values();
    for i in 0..40 {
        for j in 0..40 {
            let mut s = Complex64::new(0.0, 0.0);
            for (a, &v) in vals.iter().enumerate() {
                s += eig.component(i, a) * v * eig.component(j, a).conj();
            }
            assert!((s - g.entry(i, j)).norm() < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn secular_solution_matches_nalgebra(
        n in 2usize..=128,
        seed in any::<u64>(),
        kappa in -3.0f64..3.0,
        unitary in any::<bool>(),
    ) {
        let p = EnsembleParams::with_kappa(n, symmetry(unitary), 1.0, kappa, seed).unwrap();
        let g = sample_realization(&p, 0);
        let (e, r) = reference(&g);
        let out = perturb(&UnperturbedSpectrum { e: e.clone(), r }, p.coupling).unwrap();
        let (ee, zz) = reference(&apply_rank_one(&g, p.coupling));
        let unit = (n as f64).sqrt();
        prop_assert!(max_diff(&out.energies, &ee) / unit < 1e-9);
        prop_assert!(max_diff(&out.z, &zz) < 1e-9);

        let shift: f64 = out.energies.iter().zip(&e).map(|(a, b)| a - b).sum();
        prop_assert!((shift - p.coupling).abs() <= 1e-9 * (1.0 + p.coupling.abs()) * unit);
        prop_assert!((out.z.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for k in 0..n {
            if p.coupling >= 0.0 {
                prop_assert!(out.energies[k] >= e[k] - 1e-12);
                if k + 1 < n {
                    prop_assert!(out.energies[k] <= e[k + 1] + 1e-12);
                }
            } else {
                prop_assert!(out.energies[k] <= e[k] + 1e-12);
                if k > 0 {
                    prop_assert!(out.energies[k] >= e[k - 1] - 1e-12);
                }
            }
        }
    }

    #[test]
    fn reflection_maps_coupling_to_its_negative(
        n in 2usize..=64,
        seed in any::<u64>(),
        coupling in -20.0f64..20.0,
    ) {
        let p = EnsembleParams::new(n, Symmetry::Orthogonal, 1.0, 0.0, seed).unwrap();
        let (e, r) = reference(&sample_realization(&p, 0));
        let direct = perturb(&UnperturbedSpectrum { e: e.clone(), r: r.clone() }, coupling).unwrap();
        let mirrored = UnperturbedSpectrum {
            e: e.iter().rev().map(|x| -x).collect(),
            r: r.iter().rev().copied().collect(),
        };
        let back = perturb(&mirrored, -coupling).unwrap();
        let energies: Vec<f64> = back.energies.iter().rev().map(|x| -x).collect();
        let z: Vec<f64> = back.z.iter().rev().copied().collect();
        prop_assert!(max_diff(&energies, &direct.energies) < 1e-9 * (n as f64).sqrt());
        prop_assert!(max_diff(&z, &direct.z) < 1e-10);
    }
}
