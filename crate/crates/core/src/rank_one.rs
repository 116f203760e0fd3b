//! Rank-one eigen-update without re-diagonalization.
//!
//! Given the spectrum `(e, r)` of `G` and the coupling `Z`, the eigenvalues of
//! `M = G + Z e_1 e_1^T` are the roots of the secular equation
//! `Z sum_b r_b / (E - e_b) = 1`, one in each gap of `e` plus one beyond the
//! extreme eigenvalue on the side of `sign(Z)`. The first-component weights
//! and channel overlaps then follow from Cauchy-determinant products of the
//! two interlaced spectra.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{PerturbedSpectrum, UnperturbedSpectrum};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;

/// Weights below this fraction of the largest weight are deflated.
pub const DEFLATION_RELATIVE_WEIGHT: f64 = 1e-14;
/// Poles closer than this fraction of the spectral scale are merged.
pub const DEFLATION_RELATIVE_GAP: f64 = 1e-13;
const ROOT_RELATIVE_WIDTH: f64 = 1e-14;
const MAX_ROOT_ITERATIONS: usize = 200;
const NEGATIVE_WEIGHT_SLACK: f64 = 1e-12;

/// Squared channel overlaps. For `Z > 0`, `b_sq = Z r` and `a_sq = Z z`; for
/// `Z < 0` both carry the sign of `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapData {
    pub a_sq: Vec<f64>,
    pub b_sq: Vec<f64>,
}

/// `C[alpha][beta] = a_alpha b_beta / (E_alpha - e_beta)` in the gauge where
/// every `a` and `b` is real and nonnegative, so `C` is real orthogonal.
#[derive(Debug, Clone)]
pub struct OverlapMatrix {
    pub c: SquareMatrix<f64>,
}

impl OverlapMatrix {
    pub fn unitarity_defect(&self) -> f64 {
        self.c.unitarity_defect()
    }
}

/// Residuals of the two exact trace identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceResiduals {
    /// `sum(E - e) - Z`.
    pub shift_sum: f64,
    /// `sum e^2 - (sum E^2 - 2 Z sum E z + Z^2)`.
    pub second_moment: f64,
    /// `sum e^2`, the natural scale of `second_moment`.
    pub second_moment_scale: f64,
}

impl TraceResiduals {
    pub fn relative_shift_sum(&self, coupling: f64) -> f64 {
        if coupling == 0.0 {
            self.shift_sum.abs()
        } else {
            (self.shift_sum / coupling).abs()
        }
    }

    pub fn relative_second_moment(&self) -> f64 {
        (self.second_moment / self.second_moment_scale.max(f64::MIN_POSITIVE)).abs()
    }
}

/// Active (non-deflated) pole layout.
struct Poles {
    positions: Vec<f64>,
    weights: Vec<f64>,
}

/// Splits `(e, r)` into deflated eigenvalues (returned as fixed roots) and the
/// active poles of the secular function.
fn deflate(e: &[f64], r: &[f64]) -> (Poles, Vec<f64>) {
    let r_max = r.iter().cloned().fold(0.0f64, f64::max);
    let scale = e
        .first()
        .map(|a| a.abs())
        .unwrap_or(0.0)
        .max(e.last().map(|a| a.abs()).unwrap_or(0.0))
        .max(f64::MIN_POSITIVE);
    let gap_tol = DEFLATION_RELATIVE_GAP * scale;

    let mut fixed = Vec::new();
    let mut positions: Vec<f64> = Vec::with_capacity(e.len());
    let mut weights: Vec<f64> = Vec::with_capacity(e.len());
    for (&ei, &ri) in e.iter().zip(r) {
        if ri < DEFLATION_RELATIVE_WEIGHT * r_max {
            fixed.push(ei);
            continue;
        }
        if let Some(&last) = positions.last() {
            if ei - last < gap_tol {
                // Rotate the pair so the earlier pole carries no weight.
                let w = weights.pop().unwrap();
                positions.pop();
                fixed.push(last);
                positions.push(ei);
                weights.push(w + ri);
                continue;
            }
        }
        positions.push(ei);
        weights.push(ri);
    }
    (Poles { positions, weights }, fixed)
}

/// `f(tau) = 1 - Z sum w_i / (tau - delta_i)` and its derivative, with
/// `delta_i = d_i - origin`.
#[inline]
fn secular_value(tau: f64, deltas: &[f64], weights: &[f64], coupling: f64) -> (f64, f64) {
    let mut s = 0.0;
    let mut ds = 0.0;
    for (&d, &w) in deltas.iter().zip(weights) {
        let inv = 1.0 / (tau - d);
        let t = w * inv;
        s += t;
        ds += t * inv;
    }
    (1.0 - coupling * s, coupling * ds)
}

/// Root of the secular function in `(lo, hi)` (offsets from the pole at index
/// `origin`), where `f(lo+) < 0 < f(hi-)`.
fn solve_interval(
    interval: usize,
    deltas: &[f64],
    weights: &[f64],
    coupling: f64,
    mut lo: f64,
    mut hi: f64,
) -> Result<f64> {
    let mut tau = 0.5 * (lo + hi);
    for _ in 0..MAX_ROOT_ITERATIONS {
        let (f, df) = secular_value(tau, deltas, weights, coupling);
        if !f.is_finite() {
            return Err(Error::BracketFailure {
                interval,
                detail: format!("non-finite secular value at offset {tau:e}"),
            });
        }
        if f == 0.0 {
            return Ok(tau);
        }
        if f < 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        if hi - lo <= ROOT_RELATIVE_WIDTH * tau.abs().max(f64::MIN_POSITIVE) {
            return Ok(0.5 * (lo + hi));
        }
        // Newton on g = tau * f removes the origin pole.
        let g = tau * f;
        let dg = f + tau * df;
        let step = tau - g / dg;
        tau = if step.is_finite() && step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
        if tau == lo || tau == hi {
            return Ok(tau);
        }
    }
    if (hi - lo) <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
        return Ok(0.5 * (lo + hi));
    }
    Err(Error::BracketFailure {
        interval,
        detail: format!("no convergence, bracket [{lo:e}, {hi:e}]"),
    })
}

/// Roots for `Z > 0` over the active poles.
fn positive_roots(poles: &Poles, coupling: f64) -> Result<Vec<f64>> {
    let d = &poles.positions;
    let w = &poles.weights;
    let k = d.len();
    let total: f64 = w.iter().sum();
    (0..k)
        .into_par_iter()
        .map(|j| {
            if j + 1 == k {
                let deltas: Vec<f64> = d.iter().map(|&x| x - d[j]).collect();
                let hi = coupling * total;
                let (f_hi, _) = secular_value(hi, &deltas, w, coupling);
                if f_hi < 0.0 {
                    return Err(Error::BracketFailure {
                        interval: j,
                        detail: "outermost root exceeds e_N + Z sum(r)".into(),
                    });
                }
                let tau = solve_interval(j, &deltas, w, coupling, 0.0, hi)?;
                return Ok(d[j] + tau);
            }
            let gap = d[j + 1] - d[j];
            if !(gap > 0.0) {
                return Err(Error::BracketFailure {
                    interval: j,
                    detail: format!("poles not ascending ({} then {})", d[j], d[j + 1]),
                });
            }
            let half = 0.5 * gap;
            let left: Vec<f64> = d.iter().map(|&x| x - d[j]).collect();
            let (f_mid, _) = secular_value(half, &left, w, coupling);
            if f_mid >= 0.0 {
                let tau = solve_interval(j, &left, w, coupling, 0.0, half)?;
                Ok(d[j] + tau)
            } else {
                let right: Vec<f64> = d.iter().map(|&x| x - d[j + 1]).collect();
                let tau = solve_interval(j, &right, w, coupling, -(gap - half), 0.0)?;
                Ok(d[j + 1] + tau)
            }
        })
        .collect()
}

fn check_inputs(e: &[f64], r: &[f64]) -> Result<()> {
    if e.len() != r.len() {
        return Err(Error::InvalidParams(format!(
            "eigenvalue/weight length mismatch ({} vs {})",
            e.len(),
            r.len()
        )));
    }
    if let Some(i) = r.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParams(format!("weight {i} is negative or not finite")));
    }
    if let Some(i) = e.windows(2).position(|p| !(p[0] <= p[1])) {
        return Err(Error::BracketFailure {
            interval: i,
            detail: "eigenvalues not ascending".into(),
        });
    }
    Ok(())
}

/// Perturbed eigenvalues, ascending, for `Z != 0`.
///
/// Each root satisfies the secular equation to near machine precision in the
/// pole-shifted variable; deflated states keep `E = e` exactly.
pub fn secular_solve(e: &[f64], r: &[f64], coupling: f64) -> Result<Vec<f64>> {
    check_inputs(e, r)?;
    if coupling == 0.0 || !coupling.is_finite() {
        return Err(Error::InvalidParams(format!(
            "secular_solve needs a finite nonzero coupling, got {coupling}"
        )));
    }
    if coupling < 0.0 {
        // E(e, r, Z) = -reverse(E(-reverse(e), reverse(r), -Z))
        let e_m: Vec<f64> = e.iter().rev().map(|x| -x).collect();
        let r_m: Vec<f64> = r.iter().rev().cloned().collect();
        let roots = secular_solve(&e_m, &r_m, -coupling)?;
        return Ok(roots.iter().rev().map(|x| -x).collect());
    }
    let (poles, mut out) = deflate(e, r);
    if !poles.positions.is_empty() {
        out.extend(positive_roots(&poles, coupling)?);
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// `prod(num) / prod(den)` evaluated as a sum of logarithms with separate sign
/// parity. Exact zeros cancel pairwise between numerator and denominator.
fn product_ratio(num: impl Iterator<Item = f64>, den: impl Iterator<Item = f64>) -> f64 {
    let mut log = 0.0;
    let mut negative = false;
    let mut zeros: i64 = 0;
    for x in num {
        if x == 0.0 {
            zeros += 1;
            continue;
        }
        log += x.abs().ln();
        negative ^= x < 0.0;
    }
    for x in den {
        if x == 0.0 {
            zeros -= 1;
            continue;
        }
        log -= x.abs().ln();
        negative ^= x < 0.0;
    }
    if zeros > 0 {
        return 0.0;
    }
    if zeros < 0 {
        return if negative { f64::NEG_INFINITY } else { f64::INFINITY };
    }
    let v = log.exp();
    if negative {
        -v
    } else {
        v
    }
}

fn nonnegative(index: usize, v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -NEGATIVE_WEIGHT_SLACK {
        Ok(0.0)
    } else {
        Err(Error::SignInconsistency { index, value: v })
    }
}

/// `z_a = prod_g (E_a - e_g) / (Z prod_{g != a} (E_a - E_g))`.
pub fn perturbed_weights(e: &[f64], energies: &[f64], coupling: f64) -> Result<Vec<f64>> {
    if e.len() != energies.len() {
        return Err(Error::InvalidParams("spectra of different length".into()));
    }
    if coupling == 0.0 {
        return Err(Error::InvalidParams("perturbed_weights needs Z != 0".into()));
    }
    (0..energies.len())
        .into_par_iter()
        .map(|a| {
            let ea = energies[a];
            let v = product_ratio(
                e.iter().map(|&x| ea - x),
                energies
                    .iter()
                    .enumerate()
                    .filter(|&(g, _)| g != a)
                    .map(|(_, &x)| ea - x),
            ) / coupling;
            nonnegative(a, v)
        })
        .collect()
}

/// Squared overlaps `|a|^2` and `|b|^2` from the two spectra alone.
pub fn overlap_coefficients(e: &[f64], energies: &[f64]) -> Result<OverlapData> {
    if e.len() != energies.len() {
        return Err(Error::InvalidParams("spectra of different length".into()));
    }
    let n = e.len();
    let b_sq: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|a| {
            let ea = e[a];
            product_ratio(
                energies.iter().map(|&x| x - ea),
                e.iter().enumerate().filter(|&(g, _)| g != a).map(|(_, &x)| x - ea),
            )
        })
        .collect();
    let a_sq: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|a| {
            let ea = energies[a];
            -product_ratio(
                e.iter().map(|&x| x - ea),
                energies
                    .iter()
                    .enumerate()
                    .filter(|&(g, _)| g != a)
                    .map(|(_, &x)| x - ea),
            )
        })
        .collect();
    // Both families share the sign of Z = sum(E - e).
    let sign = (energies.iter().sum::<f64>() - e.iter().sum::<f64>()).signum();
    for (i, &v) in b_sq.iter().chain(a_sq.iter()).enumerate() {
        if v * sign < -NEGATIVE_WEIGHT_SLACK {
            return Err(Error::SignInconsistency { index: i % n, value: v });
        }
    }
    Ok(OverlapData { a_sq, b_sq })
}

/// Basis change from the eigenvectors of `G` to those of `M`.
pub fn overlap_matrix(e: &[f64], energies: &[f64], overlaps: &OverlapData) -> OverlapMatrix {
    let n = e.len();
    let a: Vec<f64> = overlaps.a_sq.iter().map(|x| x.abs().sqrt()).collect();
    let b: Vec<f64> = overlaps.b_sq.iter().map(|x| x.abs().sqrt()).collect();
    let c = SquareMatrix::from_fn(n, |i, j| {
        let gap = energies[i] - e[j];
        if gap == 0.0 {
            // Deflated state: unchanged eigenvector.
            if a[i] == 0.0 && b[j] == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            a[i] * b[j] / gap
        }
    });
    OverlapMatrix { c }
}

pub fn trace_identities(e: &[f64], energies: &[f64], z: &[f64], coupling: f64) -> TraceResiduals {
    let shift_sum = energies.iter().sum::<f64>() - e.iter().sum::<f64>() - coupling;
    let e2: f64 = e.iter().map(|x| x * x).sum();
    let big_e2: f64 = energies.iter().map(|x| x * x).sum();
    let ez: f64 = energies.iter().zip(z).map(|(x, w)| x * w).sum();
    let rhs = big_e2 - 2.0 * coupling * ez + coupling * coupling;
    TraceResiduals {
        shift_sum,
        second_moment: e2 - rhs,
        second_moment_scale: e2,
    }
}

/// Full secular-path update of an unperturbed spectrum. `Z = 0` is the identity.
pub fn perturb(spectrum: &UnperturbedSpectrum, coupling: f64) -> Result<PerturbedSpectrum> {
    if coupling == 0.0 {
        check_inputs(&spectrum.e, &spectrum.r)?;
        return Ok(PerturbedSpectrum {
            energies: spectrum.e.clone(),
            z: spectrum.r.clone(),
            first_components: None,
        });
    }
    let energies = secular_solve(&spectrum.e, &spectrum.r, coupling)?;
    let z = perturbed_weights(&spectrum.e, &energies, coupling)?;
    Ok(PerturbedSpectrum {
        energies,
        z,
        first_components: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: f64 = 1.618_033_988_749_895;

    #[test]
    fn two_level_roots_are_golden_ratio() {
        let roots = secular_solve(&[-1.0, 1.0], &[0.5, 0.5], 1.0).unwrap();
        assert!((roots[0] - (1.0 - GOLDEN)).abs() < 1e-15);
        assert!((roots[1] - GOLDEN).abs() < 1e-15);
    }

    #[test]
    fn two_level_weights_and_overlaps() {
        let e = [-1.0, 1.0];
        let roots = secular_solve(&e, &[0.5, 0.5], 1.0).unwrap();
        let z = perturbed_weights(&e, &roots, 1.0).unwrap();
        // z_1 = (5 - sqrt 5)/10, z_2 = (5 + sqrt 5)/10
        assert!((z[0] - (5.0 - 5f64.sqrt()) / 10.0).abs() < 1e-15);
        assert!((z[1] - (5.0 + 5f64.sqrt()) / 10.0).abs() < 1e-15);
        let ov = overlap_coefficients(&e, &roots).unwrap();
        assert!((ov.b_sq[0] - 0.5).abs() < 1e-15 && (ov.b_sq[1] - 0.5).abs() < 1e-15);
        for (a, w) in ov.a_sq.iter().zip(&z) {
            assert!((a - w).abs() < 1e-15);
        }
        let c = overlap_matrix(&e, &roots, &ov);
        assert!(c.unitarity_defect() < 1e-12);
        let tr = trace_identities(&e, &roots, &z, 1.0);
        assert!(tr.shift_sum.abs() < 1e-15);
        assert!(tr.second_moment.abs() < 1e-14);
    }

    #[test]
    fn zero_weight_pins_the_root() {
        let e = [-2.0, -0.5, 0.3, 1.7];
        let r = [0.4, 0.0, 0.35, 0.25];
        let roots = secular_solve(&e, &r, 0.8).unwrap();
        assert!(roots.contains(&-0.5));
        let z = perturbed_weights(&e, &roots, 0.8).unwrap();
        let pinned = roots.iter().position(|&x| x == -0.5).unwrap();
        assert_eq!(z[pinned], 0.0);
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_poles_are_merged() {
        let e = [-1.0, 0.25, 0.25, 1.0];
        let r = [0.25; 4];
        let roots = secular_solve(&e, &r, 0.5).unwrap();
        assert_eq!(roots.iter().filter(|&&x| x == 0.25).count(), 1);
        let z = perturbed_weights(&e, &roots, 0.5).unwrap();
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_coupling_barely_moves_roots() {
        let e = [-1.0, -0.2, 0.4, 1.1];
        let r = [0.1, 0.2, 0.3, 0.4];
        let roots = secular_solve(&e, &r, 1e-8).unwrap();
        for (a, b) in roots.iter().zip(&e) {
            assert!((a - b).abs() <= 2e-8);
        }
    }

    #[test]
    fn negative_coupling_mirrors() {
        let e = [-1.0, 1.0];
        let roots = secular_solve(&e, &[0.5, 0.5], -1.0).unwrap();
        assert!((roots[0] + GOLDEN).abs() < 1e-15);
        assert!((roots[1] - (GOLDEN - 1.0)).abs() < 1e-15);
        let z = perturbed_weights(&e, &roots, -1.0).unwrap();
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let ov = overlap_coefficients(&e, &roots).unwrap();
        assert!(ov.b_sq.iter().all(|&b| b <= 0.0));
        assert!(overlap_matrix(&e, &roots, &ov).unitarity_defect() < 1e-12);
    }

    #[test]
    fn rejects_corrupted_input() {
        assert!(matches!(
            secular_solve(&[1.0, 0.0], &[0.5, 0.5], 1.0),
            Err(Error::BracketFailure { interval: 0, .. })
        ));
        assert!(secular_solve(&[0.0, 1.0], &[-0.5, 1.5], 1.0).is_err());
        assert!(secular_solve(&[0.0, 1.0], &[0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn broken_interlacing_is_a_sign_error() {
        // Both roots above e_2: not an interlaced pair.
        let e = [-1.0, 1.0];
        let bad = [1.5, 2.0];
        assert!(matches!(
            perturbed_weights(&e, &bad, 2.5),
            Err(Error::SignInconsistency { .. })
        ));
    }

    #[test]
    fn product_ratio_cancels_exact_zeros() {
        assert_eq!(product_ratio([0.0, 2.0].into_iter(), [0.0, 4.0].into_iter()), 0.5);
        assert_eq!(product_ratio([0.0, 2.0].into_iter(), [4.0].into_iter()), 0.0);
        assert_eq!(product_ratio([-2.0, 3.0].into_iter(), [-1.0].into_iter()), 6.0);
    }

    #[test]
    fn zero_coupling_is_identity() {
        let s = UnperturbedSpectrum {
            e: vec![-1.0, 0.0, 2.0],
            r: vec![0.2, 0.3, 0.5],
        };
        let p = perturb(&s, 0.0).unwrap();
        assert_eq!(p.energies, s.e);
        assert_eq!(p.z, s.r);
        let tr = trace_identities(&s.e, &p.energies, &p.z, 0.0);
        assert_eq!(tr.shift_sum, 0.0);
        assert_eq!(tr.second_moment, 0.0);
    }
}
