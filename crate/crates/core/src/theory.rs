//! Large-N predictions for the rank-one coupled Gaussian ensembles.
//!
//! Energies enter through the angle `phi` with `E = 2 sigma sqrt(N) cos(phi)`,
//! which maps the semicircle support onto `[0, pi]`, turns the Wigner measure
//! into `(2N/pi) sin^2(phi) dphi`, and keeps every window integrand smooth up
//! to the spectral edge.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensembles::Symmetry;
use crate::error::{Error, Result};
use crate::quad::{self, GaussLegendre, Tolerance};
use crate::special;

const WINDOW_TOLERANCE: Tolerance = Tolerance { abs: 1e-13, rel: 1e-12 };

/// Matrix size, scale and dimensionless coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub n: usize,
    pub sigma: f64,
    pub kappa: f64,
}

impl Model {
    pub fn new(n: usize, sigma: f64, kappa: f64) -> Self {
        Self { n, sigma, kappa }
    }

    /// `sigma sqrt(N)`.
    pub fn unit(&self) -> f64 {
        self.sigma * (self.n as f64).sqrt()
    }

    /// Semicircle radius `2 sigma sqrt(N)`.
    pub fn radius(&self) -> f64 {
        2.0 * self.unit()
    }

    pub fn coupling(&self) -> f64 {
        self.kappa * self.unit()
    }

    pub fn angle(&self, energy: f64) -> f64 {
        (energy / self.radius()).clamp(-1.0, 1.0).acos()
    }

    fn nf(&self) -> f64 {
        self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectiveState {
    pub e_c: f64,
    pub z_c: f64,
    pub half_width_a: f64,
}

/// Semicircle `sqrt(4 N sigma^2 - E^2) / (2 pi sigma^2)`, normalized to `N`.
pub fn wigner_density(energy: f64, m: &Model) -> f64 {
    let s2 = m.sigma * m.sigma;
    let d = 4.0 * m.nf() * s2 - energy * energy;
    if d <= 0.0 {
        0.0
    } else {
        d.sqrt() / (2.0 * PI * s2)
    }
}

/// Number of semicircle states below `energy`.
pub fn wigner_staircase(energy: f64, m: &Model) -> f64 {
    let phi = m.angle(energy);
    (2.0 * m.nf() / PI) * (0.5 * (PI - phi) + 0.25 * (2.0 * phi).sin())
}

/// Boundary value `G0(E + i0)` of the mean resolvent
/// `(E - sqrt(E^2 - 4 sigma^2 N)) / (2 sigma^2 N)`.
///
/// Inside the support the imaginary part is negative, so
/// `rho_W(E) = -(N / pi) Im G0`; outside, the root with `G0 ~ 1/E` is taken.
pub fn green0(energy: f64, m: &Model) -> Complex64 {
    let s2n = m.sigma * m.sigma * m.nf();
    let disc = energy * energy - 4.0 * s2n;
    if disc >= 0.0 {
        let root = disc.sqrt().copysign(energy);
        // Rationalized form avoids cancellation for large |E|.
        let g = if energy == 0.0 { 0.0 } else { 2.0 / (energy + root) };
        Complex64::new(g, 0.0)
    } else {
        Complex64::new(energy, -(-disc).sqrt()) / (2.0 * s2n)
    }
}

/// Mean level density in the angle variable, including the O(1) coupling
/// correction: `(2N/pi + 2k(2cos(phi) - k) / (pi (k^2 - 2k cos(phi) + 1))) sin^2(phi)`.
pub fn bulk_density_correction(phi: f64, m: &Model) -> f64 {
    let k = m.kappa;
    let c = phi.cos();
    let s2 = phi.sin().powi(2);
    let lead = 2.0 * m.nf() / PI;
    let corr = 2.0 * k * (2.0 * c - k) / (PI * (k * k - 2.0 * k * c + 1.0));
    (lead + corr) * s2
}

/// The correction term alone, per unit angle.
pub fn density_shift_angle(phi: f64, m: &Model) -> f64 {
    bulk_density_correction(phi, m) - 2.0 * m.nf() / PI * phi.sin().powi(2)
}

/// Coupling-induced density shift per unit angle from the exact first-order
/// resolvent identity `-(1/pi) Im d/dE ln(1 - Z G0)`:
/// `k (cos(phi) - k) / (pi (1 - 2k cos(phi) + k^2))`.
///
/// Integrates to zero for `k^2 < 1` and to `-1` for `k^2 > 1`.
pub fn resolvent_density_shift(phi: f64, m: &Model) -> f64 {
    let k = m.kappa;
    let c = phi.cos();
    k * (c - k) / (PI * (1.0 - 2.0 * k * c + k * k))
}

/// Converts a per-angle density to a per-energy density at `energy`.
pub fn angle_to_energy_density(per_angle: f64, energy: f64, m: &Model) -> f64 {
    let phi = m.angle(energy);
    let jac = m.radius() * phi.sin();
    if jac <= 0.0 {
        0.0
    } else {
        per_angle / jac
    }
}

/// Corrected bulk density per unit energy.
pub fn corrected_density(energy: f64, m: &Model) -> f64 {
    if energy.abs() >= m.radius() {
        return 0.0;
    }
    let phi = m.angle(energy);
    angle_to_energy_density(bulk_density_correction(phi, m), energy, m)
}

pub fn collective_state(m: &Model) -> Result<CollectiveState> {
    let k = m.kappa;
    if k * k <= 1.0 {
        return Err(Error::NoCollectiveState(k));
    }
    let z_c = 1.0 - 1.0 / (k * k);
    Ok(CollectiveState {
        e_c: m.unit() * (k + 1.0 / k),
        z_c,
        half_width_a: 2.0 * m.sigma * z_c,
    })
}

/// Density of the split-off state: a semicircle of mass `1 - k^-2` around `E_c`.
pub fn collective_density(energy: f64, m: &Model) -> Result<f64> {
    let c = collective_state(m)?;
    let a = c.half_width_a;
    let d = a * a - (energy - c.e_c).powi(2);
    Ok(if d <= 0.0 { 0.0 } else { d.sqrt() / (PI * m.sigma * a) })
}

fn l_denominator(energy: f64, m: &Model) -> f64 {
    m.kappa * m.kappa + 1.0 - m.kappa * energy / m.unit()
}

/// Mean of `x = N |Psi_1(E)|^2`: `(k^2 + 1 - k E / (sigma sqrt N))^-1`.
pub fn l_of_e(energy: f64, m: &Model) -> Result<f64> {
    let d = l_denominator(energy, m);
    if d > 0.0 && d.is_finite() {
        Ok(1.0 / d)
    } else {
        Err(Error::Domain {
            what: "l(E) denominator is not positive",
            point: energy,
        })
    }
}

fn l_of_angle(phi: f64, k: f64) -> f64 {
    1.0 / (k * k + 1.0 - 2.0 * k * phi.cos())
}

/// Porter-Thomas density with mean `l`:
/// `(2 pi x)^(beta/2 - 1) l^(-beta/2) exp(-beta x / (2 l))`.
pub fn modified_pt_pdf(x: f64, l: f64, beta: Symmetry) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    match beta {
        Symmetry::Orthogonal => (-(x / (2.0 * l))).exp() / (2.0 * PI * x * l).sqrt(),
        Symmetry::Unitary => (-(x / l)).exp() / l,
    }
}

pub fn modified_pt_cdf(x: f64, l: f64, beta: Symmetry) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    match beta {
        // Regularized lower incomplete gamma of order 1/2 at x/(2l).
        Symmetry::Orthogonal => special::erf((x / (2.0 * l)).sqrt()),
        Symmetry::Unitary => -(-x / l).exp_m1(),
    }
}

/// Lagrange multiplier enforcing `sum z = 1`.
///
/// Without `z_c`: `beta N (k^2 + 1) / 2`. With a collective weight `z_c`:
/// `(beta N / 2)(k^2 (1 - z_c) + 1 / (1 - z_c))`, valid while `|k|(1 - z_c) < 1`.
/// At `z_c = 1 - k^-2` the two coincide.
pub fn lagrange_mu(kappa: f64, beta: Symmetry, n: usize, z_c: Option<f64>) -> Result<f64> {
    let half = beta.beta() * n as f64 / 2.0;
    match z_c {
        None => Ok(half * (kappa * kappa + 1.0)),
        Some(zc) => {
            let rest = 1.0 - zc;
            if !(rest > 0.0 && kappa.abs() * rest < 1.0) {
                return Err(Error::Domain {
                    what: "lagrange_mu needs |kappa|(1 - z_c) < 1",
                    point: zc,
                });
            }
            Ok(half * (kappa * kappa * rest + 1.0 / rest))
        }
    }
}

/// Gaussian moment factor: `c_1(q) = 2^q Gamma(q + 1/2) / sqrt(pi)`,
/// `c_2(q) = Gamma(q + 1)`.
pub fn gaussian_moment_factor(q: f64, beta: Symmetry) -> f64 {
    match beta {
        Symmetry::Orthogonal => (q * 2f64.ln() + special::ln_gamma(q + 0.5) - 0.5 * PI.ln()).exp(),
        Symmetry::Unitary => special::ln_gamma(q + 1.0).exp(),
    }
}

/// Angle interval for an energy window, with validity checks.
fn window_angles(e1: f64, e2: f64, m: &Model) -> Result<(f64, f64)> {
    if !(e1 < e2) {
        return Err(Error::Domain {
            what: "empty energy window",
            point: e1,
        });
    }
    let r = m.radius();
    let slack = 1e-12 * r;
    if e1 < -r - slack || e2 > r + slack {
        return Err(Error::Domain {
            what: "window leaves the bulk support",
            point: if e1 < -r { e1 } else { e2 },
        });
    }
    // l(E) must stay finite on the closed window.
    for e in [e1.max(-r), e2.min(r)] {
        l_of_e(e, m)?;
    }
    Ok((m.angle(e2), m.angle(e1)))
}

/// Semicircle mass of `[phi_lo, phi_hi]` divided by `2N/pi`.
fn angle_mass(lo: f64, hi: f64) -> f64 {
    let prim = |p: f64| 0.5 * p - 0.25 * (2.0 * p).sin();
    prim(hi) - prim(lo)
}

/// `<x^q>` over states with energies in `[e1, e2]`:
/// `c_beta(q) / dN * int rho_W(E) l(E)^q dE`.
pub fn window_moment(q: f64, e1: f64, e2: f64, m: &Model, beta: Symmetry) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(Error::Domain {
            what: "moment order must be nonnegative",
            point: q,
        });
    }
    let (lo, hi) = window_angles(e1, e2, m)?;
    let k = m.kappa;
    let num = quad::integrate(|p| p.sin().powi(2) * l_of_angle(p, k).powf(q), lo, hi, WINDOW_TOLERANCE)?;
    Ok(gaussian_moment_factor(q, beta) * num.value / angle_mass(lo, hi))
}

/// Density of `x = N |Psi_1|^2` pooled over the window: the semicircle-weighted
/// average of [`modified_pt_pdf`] with `l = l(E)`.
pub fn window_pdf(x: f64, e1: f64, e2: f64, m: &Model, beta: Symmetry) -> Result<f64> {
    let (lo, hi) = window_angles(e1, e2, m)?;
    if x <= 0.0 {
        return Ok(0.0);
    }
    let k = m.kappa;
    let num = quad::integrate(
        |p| p.sin().powi(2) * modified_pt_pdf(x, l_of_angle(p, k), beta),
        lo,
        hi,
        WINDOW_TOLERANCE,
    )?;
    Ok(num.value / angle_mass(lo, hi))
}

thread_local! {
    static GL64: GaussLegendre = GaussLegendre::new(64);
}

/// Ratio of the full-bulk window density to the plain Porter-Thomas density.
pub fn fullwindow_factor(x: f64, kappa: f64, beta: Symmetry) -> f64 {
    let k = kappa;
    match beta {
        Symmetry::Orthogonal => GL64.with(|gl| {
            (2.0 / PI)
                * gl.integrate(
                    |p| {
                        let c = p.cos();
                        p.sin().powi(2) * (k * k + 1.0 - 2.0 * k * c).sqrt() * (-0.5 * (k * k - 2.0 * k * c) * x).exp()
                    },
                    0.0,
                    PI,
                )
        }),
        Symmetry::Unitary => {
            let y = 2.0 * k.abs() * x;
            if y == 0.0 {
                return 1.0 + k * k;
            }
            // e^{-k^2 x} [(k^2 + 1) I1(y) / (|k| x) - 2 I2(y) / x], with I_n(y) e^{-y} scaled.
            let i1 = special::bessel_i1_scaled(y).expect("nonnegative argument");
            let i2 = special::bessel_i2_scaled(y).expect("nonnegative argument");
            (y - k * k * x).exp() * ((k * k + 1.0) * 2.0 * i1 / y - 2.0 * i2 / x)
        }
    }
}

/// Small-coupling expansion of [`fullwindow_factor`] through `kappa^4`.
pub fn fullwindow_factor_series(x: f64, kappa: f64, beta: Symmetry) -> f64 {
    let k2 = kappa * kappa;
    let k4 = k2 * k2;
    let (x2, x3, x4) = (x * x, x * x * x, x * x * x * x);
    match beta {
        Symmetry::Orthogonal => {
            1.0 + k2 / 8.0 * (x2 - 6.0 * x + 3.0) + k4 / 192.0 * (x4 - 16.0 * x3 + 54.0 * x2 - 24.0 * x - 3.0)
        }
        Symmetry::Unitary => {
            1.0 + k2 / 2.0 * (x2 - 4.0 * x + 2.0) + k4 / 12.0 * (x4 - 10.0 * x3 + 24.0 * x2 - 12.0 * x)
        }
    }
}

/// Tabulated prediction on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub meta: CurveMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub formula: String,
    pub params: serde_json::Value,
    /// Extra scalar diagnostics (e.g. the integral of a pdf curve).
    #[serde(default)]
    pub diagnostics: serde_json::Map<String, serde_json::Value>,
}

impl TheoryCurve {
    pub fn tabulate(grid: &[f64], meta: CurveMeta, mut f: impl FnMut(f64) -> Result<f64>) -> Result<Self> {
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParams("curve grid must be strictly increasing".into()));
        }
        let values = grid.iter().map(|&g| f(g)).collect::<Result<Vec<_>>>()?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain {
                what: "curve value is not finite",
                point: grid[i],
            });
        }
        Ok(Self {
            grid: grid.to_vec(),
            values,
            meta,
        })
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "grid,value")?;
        for (g, v) in self.grid.iter().zip(&self.values) {
            writeln!(out, "{g:.16e},{v:.16e}")?;
        }
        Ok(())
    }

    pub fn sidecar_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(&self.meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::Tolerance;

    fn model(kappa: f64) -> Model {
        Model::new(1000, 1.0, kappa)
    }

    #[test]
    fn wigner_at_center_and_edges() {
        let m = model(0.0);
        assert!((wigner_density(0.0, &m) - 4000f64.sqrt() / (2.0 * PI)).abs() < 1e-12);
        assert!((wigner_density(0.0, &m) - 10.0658).abs() < 1e-4);
        assert_eq!(wigner_density(m.radius(), &m), 0.0);
        assert_eq!(wigner_density(-m.radius(), &m), 0.0);
    }

    #[test]
    fn wigner_normalizes_to_n() {
        let m = model(0.0);
        let r = m.radius();
        let v = quad::integrate(|e| wigner_density(e, &m), -r, r, Tolerance::absolute(1e-10))
            .unwrap()
            .value;
        assert!((v / 1000.0 - 1.0).abs() < 1e-6);
        assert!((wigner_staircase(r, &m) - 1000.0).abs() < 1e-9);
        assert!(wigner_staircase(-r, &m).abs() < 1e-9);
        assert!((wigner_staircase(0.0, &m) - 500.0).abs() < 1e-9);
    }

    #[test]
    fn green0_center_and_asymptotics() {
        let m = model(0.0);
        let g = green0(0.0, &m);
        assert!(g.re.abs() < 1e-15);
        assert!((g.norm() - 1.0 / m.unit()).abs() < 1e-15);
        let e = 100.0 * m.unit();
        // E G0 = 1 + s^2 N / E^2 + ...
        assert!((e * green0(e, &m).re - 1.0 - 1e-4).abs() < 1e-7);
        assert!((e * green0(-e, &m).re + 1.0 + 1e-4).abs() < 1e-7);
    }

    #[test]
    fn green0_solves_its_defining_equation() {
        let m = model(0.0);
        let s2n = 1000.0;
        for &e in &[-70.0, -30.0, -5.0, 0.0, 12.0, 63.0, 64.0, 200.0] {
            let g = green0(e, &m);
            let rhs = 1.0 / (Complex64::new(e, 0.0) - g * s2n);
            assert!((g - rhs).norm() <= 1e-12 * g.norm().max(1e-3), "E = {e}");
        }
    }

    #[test]
    fn green0_imaginary_part_is_wigner() {
        let m = model(0.0);
        let r = m.radius();
        for i in 0..1000 {
            let e = -r + 2.0 * r * (i as f64 + 0.5) / 1000.0;
            let from_g = -(1000.0 / PI) * green0(e, &m).im;
            assert!((from_g - wigner_density(e, &m)).abs() < 1e-10);
        }
    }

    #[test]
    fn density_correction_vanishes_at_zero_coupling() {
        let m = model(0.0);
        for &phi in &[0.1f64, 0.7, 1.5, 2.9] {
            let want = 2000.0 / PI * phi.sin().powi(2);
            assert!((bulk_density_correction(phi, &m) - want).abs() < 1e-12);
        }
    }

    fn angle_integral(k: f64) -> f64 {
        let m = model(k);
        quad::integrate(|p| bulk_density_correction(p, &m), 0.0, PI, Tolerance::absolute(1e-10))
            .unwrap()
            .value
    }

    #[test]
    fn density_integral_below_threshold_is_n() {
        assert!((angle_integral(0.6) / 1000.0 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn density_integral_above_threshold_loses_collective_mass() {
        let k: f64 = 1.5;
        let want = 1000.0 - 1.0 + 1.0 / (k * k);
        assert!((angle_integral(k) / want - 1.0).abs() < 1e-8);
    }

    #[test]
    fn resolvent_shift_matches_log_derivative() {
        let m = model(0.6);
        let z = m.coupling();
        let log_term = |e: f64| (Complex64::new(1.0, 0.0) - green0(e, &m) * z).ln();
        for &e in &[-50.0, -20.0, 0.0, 17.0, 44.0, 60.0] {
            let h = 1e-5;
            let d = (log_term(e + h) - log_term(e - h)) / (2.0 * h);
            let oracle = -d.im / PI;
            let phi = m.angle(e);
            let v = angle_to_energy_density(resolvent_density_shift(phi, &m), e, &m);
            assert!((v - oracle).abs() < 1e-7, "E = {e}: {v} vs {oracle}");
        }
    }

    #[test]
    fn resolvent_shift_integrals() {
        for (k, want) in [(0.6, 0.0), (1.5, -1.0), (-0.4, 0.0)] {
            let m = model(k);
            let v = quad::integrate(|p| resolvent_density_shift(p, &m), 0.0, PI, Tolerance::absolute(1e-12))
                .unwrap()
                .value;
            assert!((v - want).abs() < 1e-9, "kappa {k}: {v}");
        }
    }

    #[test]
    fn collective_state_values() {
        let c = collective_state(&model(1.5)).unwrap();
        assert!((c.e_c - 1000f64.sqrt() * 13.0 / 6.0).abs() < 1e-12);
        assert!((c.e_c - 68.52).abs() < 0.01);
        assert!((c.z_c - 5.0 / 9.0).abs() < 1e-15);
        assert!((c.half_width_a - 10.0 / 9.0).abs() < 1e-15);
        assert!((collective_state(&model(2.0)).unwrap().z_c - 0.75).abs() < 1e-15);
        let near = collective_state(&model(1.0 + 1e-9)).unwrap();
        assert!(near.z_c < 1e-8 && near.half_width_a < 1e-8);
        assert!(matches!(
            collective_state(&model(0.5)),
            Err(Error::NoCollectiveState(_))
        ));
    }

    #[test]
    fn collective_density_shape_and_mass() {
        let m = model(1.5);
        let c = collective_state(&m).unwrap();
        assert_eq!(collective_density(c.e_c + c.half_width_a, &m).unwrap(), 0.0);
        assert_eq!(collective_density(c.e_c - c.half_width_a, &m).unwrap(), 0.0);
        assert!((collective_density(c.e_c, &m).unwrap() - 1.0 / PI).abs() < 1e-15);
        let mass = quad::integrate(
            |e| collective_density(e, &m).unwrap(),
            c.e_c - c.half_width_a,
            c.e_c + c.half_width_a,
            Tolerance::absolute(1e-12),
        )
        .unwrap()
        .value;
        assert!((mass - c.z_c).abs() < 1e-8);
    }

    #[test]
    fn l_of_e_values() {
        assert_eq!(l_of_e(12.0, &model(0.0)).unwrap(), 1.0);
        assert!((l_of_e(0.0, &model(0.6)).unwrap() - 1.0 / 1.36).abs() < 1e-15);
        assert!((l_of_e(1000f64.sqrt(), &model(0.6)).unwrap() - 1.0 / 0.76).abs() < 1e-12);
        // kappa = 1 at the upper edge: 2 - 2 = 0
        let m = model(1.0);
        assert!(matches!(l_of_e(m.radius(), &m), Err(Error::Domain { .. })));
    }

    #[test]
    fn pt_densities() {
        for &x in &[0.1, 0.5, 1.0, 3.0] {
            assert!((modified_pt_pdf(x, 1.0, Symmetry::Unitary) - (-x).exp()).abs() < 1e-15);
            let pt1 = (-x / 2.0).exp() / (2.0 * PI * x).sqrt();
            assert!((modified_pt_pdf(x, 1.0, Symmetry::Orthogonal) - pt1).abs() < 1e-15);
        }
        assert!((modified_pt_cdf(2f64.ln(), 1.0, Symmetry::Unitary) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pt_normalization_and_moments() {
        for beta in [Symmetry::Orthogonal, Symmetry::Unitary] {
            for &l in &[0.5, 1.0, 1.7] {
                let tol = Tolerance { abs: 1e-12, rel: 1e-12 };
                let mass = quad::integrate_to_infinity(|x| modified_pt_pdf(x, l, beta), 0.0, tol).unwrap();
                assert!((mass.value - 1.0).abs() < 1e-6, "{beta:?} l={l}");
                assert!((modified_pt_cdf(50.0 * l, l, beta) - 1.0).abs() < 1e-9);
            }
        }
        let tol = Tolerance { abs: 1e-12, rel: 1e-12 };
        let m1 = quad::integrate_to_infinity(|x| x * modified_pt_pdf(x, 1.0, Symmetry::Orthogonal), 0.0, tol)
            .unwrap()
            .value;
        let m2 = quad::integrate_to_infinity(|x| x * x * modified_pt_pdf(x, 1.0, Symmetry::Orthogonal), 0.0, tol)
            .unwrap()
            .value;
        assert!((m1 - 1.0).abs() < 1e-6 && (m2 - 3.0).abs() < 1e-6);
        assert!((gaussian_moment_factor(1.0, Symmetry::Orthogonal) - 1.0).abs() < 1e-14);
        assert!((gaussian_moment_factor(2.0, Symmetry::Orthogonal) - 3.0).abs() < 1e-13);
        assert!((gaussian_moment_factor(2.0, Symmetry::Unitary) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn lagrange_multiplier_branches() {
        assert_eq!(lagrange_mu(0.0, Symmetry::Orthogonal, 1000, None).unwrap(), 500.0);
        let saddle = lagrange_mu(1.5, Symmetry::Orthogonal, 1000, Some(5.0 / 9.0)).unwrap();
        assert!((saddle - 1625.0).abs() < 1e-9);
        assert!((saddle - lagrange_mu(1.5, Symmetry::Orthogonal, 1000, None).unwrap()).abs() < 1e-9);
        let b2 = lagrange_mu(0.6, Symmetry::Unitary, 100, None).unwrap();
        assert_eq!(b2, 2.0 * lagrange_mu(0.6, Symmetry::Orthogonal, 100, None).unwrap());
        assert!(lagrange_mu(1.5, Symmetry::Orthogonal, 1000, Some(0.1)).is_err());
    }

    #[test]
    fn full_window_first_moment() {
        let r = model(0.0).radius();
        let m = model(0.6);
        assert!((window_moment(1.0, -r, r, &m, Symmetry::Orthogonal).unwrap() - 1.0).abs() < 1e-6);
        let m = model(1.5);
        let v = window_moment(1.0, -r, r, &m, Symmetry::Orthogonal).unwrap();
        assert!((v - 1.0 / 2.25).abs() < 1e-6);
        let m = model(0.0);
        assert!((window_moment(1.0, 3.0, 17.0, &m, Symmetry::Unitary).unwrap() - 1.0).abs() < 1e-12);
        assert!(window_moment(1.0, 5.0, 5.0, &m, Symmetry::Unitary).is_err());
        assert!(window_moment(1.0, -r, r, &model(1.0), Symmetry::Unitary).is_err());
    }

    #[test]
    fn window_moment_matches_direct_energy_quadrature() {
        // Independent route: integrate in E with the Wigner weight.
        let m = model(0.6);
        let s = 1000f64.sqrt();
        let (e1, e2) = (0.5 * s, 1.5 * s);
        let tol = Tolerance { abs: 1e-12, rel: 1e-12 };
        let num = quad::integrate(|e| wigner_density(e, &m) * l_of_e(e, &m).unwrap(), e1, e2, tol).unwrap();
        let den = quad::integrate(|e| wigner_density(e, &m), e1, e2, tol).unwrap();
        let direct = num.value / den.value;
        let v = window_moment(1.0, e1, e2, &m, Symmetry::Orthogonal).unwrap();
        assert!((v - direct).abs() < 1e-10);
        assert!((v - 1.356_35).abs() < 1e-4);
    }

    #[test]
    fn window_pdf_normalization_and_mean() {
        let s = 1000f64.sqrt();
        for beta in [Symmetry::Orthogonal, Symmetry::Unitary] {
            let m = model(0.6);
            let (e1, e2) = (0.5 * s, 1.5 * s);
            let tol = Tolerance { abs: 1e-11, rel: 1e-11 };
            let mass = quad::integrate_to_infinity(|x| window_pdf(x, e1, e2, &m, beta).unwrap(), 0.0, tol)
                .unwrap()
                .value;
            assert!((mass - 1.0).abs() < 1e-6, "{beta:?} mass {mass}");
            let mean = quad::integrate_to_infinity(|x| x * window_pdf(x, e1, e2, &m, beta).unwrap(), 0.0, tol)
                .unwrap()
                .value;
            let want = window_moment(1.0, e1, e2, &m, beta).unwrap();
            assert!((mean - want).abs() < 1e-6, "{beta:?} mean {mean} vs {want}");
        }
        let m0 = model(0.0);
        for &x in &[0.2, 1.0, 4.0] {
            let v = window_pdf(x, -s, s, &m0, Symmetry::Orthogonal).unwrap();
            assert!((v - modified_pt_pdf(x, 1.0, Symmetry::Orthogonal)).abs() < 1e-12);
        }
    }

    #[test]
    fn full_window_factors() {
        for &x in &[0.0, 0.5, 3.0, 9.0] {
            assert!((fullwindow_factor(x, 0.0, Symmetry::Orthogonal) - 1.0).abs() < 1e-13);
            assert_eq!(fullwindow_factor(x, 0.0, Symmetry::Unitary), 1.0);
        }
        // Small widths are enhanced by the bulk mean of 1/l.
        assert!((fullwindow_factor(1e-12, 0.7, Symmetry::Unitary) - 1.49).abs() < 1e-9);
        assert!((fullwindow_factor(1.0, 0.3, Symmetry::Unitary) - 0.956_941_458_677).abs() < 1e-11);
        assert_eq!(
            fullwindow_factor(2.0, -0.4, Symmetry::Unitary),
            fullwindow_factor(2.0, 0.4, Symmetry::Unitary)
        );
    }

    #[test]
    fn f2_closed_form_matches_quadrature_and_normalizes() {
        for &k in &[0.3, 0.6, 0.9] {
            for &x in &[0.01, 0.5, 2.0, 6.0, 10.0, 40.0] {
                let direct = quad::integrate(
                    |p: f64| {
                        let inv_l = k * k + 1.0 - 2.0 * k * p.cos();
                        p.sin().powi(2) * inv_l * (-(inv_l - 1.0) * x).exp()
                    },
                    0.0,
                    PI,
                    Tolerance { abs: 1e-14, rel: 1e-14 },
                )
                .unwrap()
                .value
                    * 2.0
                    / PI;
                let f = fullwindow_factor(x, k, Symmetry::Unitary);
                assert!((f - direct).abs() < 1e-11 * direct.max(1.0), "k={k} x={x}");
            }
        }
        for &k in &[0.3f64, 0.6] {
            let tol = Tolerance { abs: 1e-13, rel: 1e-12 };
            let top = 40.0 / (1.0 - k).powi(2);
            let mass = quad::integrate(
                |x| (-x).exp() * fullwindow_factor(x, k, Symmetry::Unitary),
                0.0,
                top,
                tol,
            );
            let mean = quad::integrate(
                |x| x * (-x).exp() * fullwindow_factor(x, k, Symmetry::Unitary),
                0.0,
                top,
                tol,
            );
            assert!((mass.unwrap().value - 1.0).abs() < 1e-9);
            assert!((mean.unwrap().value - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn f1_fixed_rule_matches_adaptive() {
        for &k in &[0.3, 0.6, 0.9] {
            for &x in &[0.0, 0.5, 2.0, 6.0, 10.0] {
                let adaptive = quad::integrate(
                    |p: f64| {
                        let c = p.cos();
                        p.sin().powi(2) * (k * k + 1.0 - 2.0 * k * c).sqrt() * (-0.5 * (k * k - 2.0 * k * c) * x).exp()
                    },
                    0.0,
                    PI,
                    Tolerance { abs: 1e-14, rel: 1e-14 },
                )
                .unwrap()
                .value
                    * 2.0
                    / PI;
                assert!((fullwindow_factor(x, k, Symmetry::Orthogonal) - adaptive).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn series_values() {
        assert_eq!(fullwindow_factor_series(4.0, 0.0, Symmetry::Orthogonal), 1.0);
        let v = fullwindow_factor_series(1.0, 0.3, Symmetry::Unitary);
        assert!((v - (1.0 - 0.045 + 0.0081 * 3.0 / 12.0)).abs() < 1e-15);
        assert!((v - fullwindow_factor(1.0, 0.3, Symmetry::Unitary)).abs() < 1e-4);
    }

    #[test]
    fn curve_rejects_unsorted_grid_and_reports_bad_point() {
        let meta = CurveMeta {
            formula: "l_of_E".into(),
            params: serde_json::json!({}),
            diagnostics: Default::default(),
        };
        assert!(TheoryCurve::tabulate(&[1.0, 0.5], meta.clone(), |_| Ok(1.0)).is_err());
        let m = model(1.0);
        let err = TheoryCurve::tabulate(&[0.0, m.radius()], meta, |e| l_of_e(e, &m)).unwrap_err();
        assert!(err.to_string().contains(&format!("{}", m.radius())));
    }
}
