//! Empirical statistics over sampled spectra.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensembles::{PerturbedSpectrum, Symmetry};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::theory::{CurveMeta, TheoryCurve};

const KOLMOGOROV_TERMS: usize = 100;
const MAX_AUTO_BINS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWindow {
    pub lo: f64,
    pub hi: f64,
}

impl EnergyWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(Error::InvalidParams(format!("window [{lo}, {hi}] is empty")))
        }
    }

    /// Open interval test.
    pub fn contains(&self, e: f64) -> bool {
        e > self.lo && e < self.hi
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Which quantity is collected per state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// `N z`.
    Width,
    /// Real part of `sqrt(beta N) Psi_1`.
    AmplitudeRe,
    /// Imaginary part of `sqrt(beta N) Psi_1`; identically zero for real spectra.
    AmplitudeIm,
}

/// How the overall phase of each eigenvector is fixed before taking amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    /// Use the stored first component as returned by the eigensolver.
    Raw,
    /// Replace the phase by a random sign (real) or uniform phase (complex),
    /// drawn per state from the given seed.
    Random { seed: u64 },
}

/// Which edge state is dropped from every realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclude {
    None,
    Highest,
    Lowest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub window: EnergyWindow,
    pub scale: Scale,
    pub symmetry: Symmetry,
    pub gauge: Gauge,
    pub exclude: Exclude,
}

impl Selection {
    pub fn widths(window: EnergyWindow, symmetry: Symmetry) -> Self {
        Self {
            window,
            scale: Scale::Width,
            symmetry,
            gauge: Gauge::Raw,
            exclude: Exclude::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub n: usize,
    pub realizations: usize,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub values: Vec<f64>,
    pub count: usize,
    pub provenance: Option<Provenance>,
}

impl SampleSet {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            count: values.len(),
            values,
            provenance: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn require(&self, min: usize, op: &str) -> Result<()> {
        if self.count == 0 {
            Err(Error::EmptySelection(format!("{op} on an empty sample")))
        } else if self.count < min {
            Err(Error::InvalidParams(format!(
                "{op} needs at least {min} samples, got {}",
                self.count
            )))
        } else {
            Ok(())
        }
    }
}

fn excluded_index(energies: &[f64], exclude: Exclude) -> Option<usize> {
    let cmp = |a: &(usize, &f64), b: &(usize, &f64)| a.1.total_cmp(b.1);
    match exclude {
        Exclude::None => None,
        Exclude::Highest => energies.iter().enumerate().max_by(cmp).map(|p| p.0),
        Exclude::Lowest => energies.iter().enumerate().min_by(cmp).map(|p| p.0),
    }
}

/// Collects the per-state quantity for every state with energy inside the
/// window. An empty result is returned as a set with `count == 0`.
///
/// Spectra are matched to realization indices by position, which fixes the
/// random gauge stream of each one.
pub fn window_select(spectra: &[PerturbedSpectrum], sel: &Selection) -> Result<SampleSet> {
    if spectra.is_empty() {
        return Err(Error::InvalidParams("window_select needs at least one spectrum".into()));
    }
    let n = spectra[0].len();
    let root_beta_n = (sel.symmetry.beta() * n as f64).sqrt();
    let mut values = Vec::new();
    for (idx, s) in spectra.iter().enumerate() {
        if s.len() != n {
            return Err(Error::InvalidParams("spectra of different sizes".into()));
        }
        let skip = excluded_index(&s.energies, sel.exclude);
        let mut phases = match sel.gauge {
            Gauge::Random { seed } => Some(rng::stream(seed, Purpose::AmplitudeSign, idx as u64)),
            Gauge::Raw => None,
        };
        for (alpha, (&e, &z)) in s.energies.iter().zip(&s.z).enumerate() {
            // Draw for every state so the gauge does not depend on the window.
            let phase = phases.as_mut().map(|r| match sel.symmetry {
                Symmetry::Orthogonal => {
                    if r.random::<bool>() {
                        0.0
                    } else {
                        PI
                    }
                }
                Symmetry::Unitary => r.random_range(0.0..2.0 * PI),
            });
            if Some(alpha) == skip || !sel.window.contains(e) {
                continue;
            }
            let v = match sel.scale {
                Scale::Width => n as f64 * z,
                Scale::AmplitudeRe | Scale::AmplitudeIm => {
                    let c = match phase {
                        Some(p) => num_complex::Complex64::from_polar(z.max(0.0).sqrt(), p),
                        None => match &s.first_components {
                            Some(fc) => fc[alpha],
                            None => num_complex::Complex64::new(z.max(0.0).sqrt(), 0.0),
                        },
                    };
                    let part = if sel.scale == Scale::AmplitudeRe { c.re } else { c.im };
                    root_beta_n * part
                }
            };
            if !v.is_finite() {
                return Err(Error::Domain {
                    what: "non-finite sample value",
                    point: e,
                });
            }
            values.push(v);
        }
    }
    Ok(SampleSet {
        count: values.len(),
        values,
        provenance: Some(Provenance {
            n,
            realizations: spectra.len(),
            selection: *sel,
        }),
    })
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

fn power(v: f64, q: f64) -> f64 {
    if q == q.trunc() && q.abs() < i32::MAX as f64 {
        v.powi(q as i32)
    } else {
        v.powf(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub q: f64,
    pub value: f64,
    pub stderr: f64,
}

/// Sample mean of `values^q` with its standard error.
pub fn empirical_moment(s: &SampleSet, q: f64) -> Result<Moment> {
    s.require(2, "empirical_moment")?;
    let n = s.count as f64;
    let p: Vec<f64> = s.values.iter().map(|&v| power(v, q)).collect();
    let mean = pairwise_sum(&p) / n;
    let dev: Vec<f64> = p.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    Ok(Moment {
        q,
        value: mean,
        stderr: (var / n).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: f64,
    pub variance: f64,
    /// Asymptotic standard error of the variance, `variance sqrt(2 / n)`.
    pub variance_stderr: f64,
    pub mean_stderr: f64,
}

/// Maximum-likelihood normal fit.
pub fn gaussian_fit(s: &SampleSet) -> Result<GaussianFit> {
    s.require(10, "gaussian_fit")?;
    let n = s.count as f64;
    let mean = pairwise_sum(&s.values) / n;
    let dev: Vec<f64> = s.values.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let variance = pairwise_sum(&dev) / n;
    if !(variance > 0.0) {
        return Err(Error::Degenerate("sample variance is zero".into()));
    }
    Ok(GaussianFit {
        mean,
        variance,
        variance_stderr: variance * (2.0 / n).sqrt(),
        mean_stderr: (variance / n).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
    pub n_effective: f64,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=KOLMOGOROV_TERMS {
        let kf = k as f64;
        sum += sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, n_eff: f64) -> f64 {
    let root = n_eff.sqrt();
    kolmogorov_q((root + 0.12 + 0.11 / root) * d)
}

/// One-sample two-sided Kolmogorov-Smirnov test against a continuous cdf.
pub fn ks_statistic(s: &SampleSet, cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    s.require(10, "ks_statistic")?;
    let mut v = s.values.clone();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let d = d.clamp(0.0, 1.0);
    Ok(KsResult {
        d,
        p_value: ks_p(d, n),
        n_effective: n,
    })
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &SampleSet, b: &SampleSet) -> Result<KsResult> {
    a.require(10, "ks_two_sample")?;
    b.require(10, "ks_two_sample")?;
    let mut x = a.values.clone();
    let mut y = b.values.clone();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let n_eff = n * m / (n + m);
    Ok(KsResult {
        d,
        p_value: ks_p(d, n_eff),
        n_effective: n_eff,
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Freedman-Diaconis bin count for a range.
pub fn freedman_diaconis_bins(values: &[f64], lo: f64, hi: f64) -> usize {
    if values.len() < 2 {
        return 1;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let iqr = quantile(&v, 0.75) - quantile(&v, 0.25);
    let h = 2.0 * iqr / (v.len() as f64).cbrt();
    if !(h > 0.0) {
        return 1;
    }
    (((hi - lo) / h).ceil() as usize).clamp(1, MAX_AUTO_BINS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Samples inside the range.
    pub counted: usize,
    pub outside: usize,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.density.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn area(&self) -> f64 {
        let parts: Vec<f64> = (0..self.bins()).map(|i| self.density[i] * self.width(i)).collect();
        pairwise_sum(&parts)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "bin_lo,bin_hi,density")?;
        for i in 0..self.bins() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e}",
                self.edges[i],
                self.edges[i + 1],
                self.density[i]
            )?;
        }
        Ok(())
    }

    /// Bin centers and densities as a tabulated curve.
    pub fn to_curve(&self, formula: &str) -> TheoryCurve {
        TheoryCurve {
            grid: self.centers(),
            values: self.density.clone(),
            meta: CurveMeta {
                formula: formula.to_string(),
                params: serde_json::json!({ "bins": self.bins(), "counted": self.counted }),
                diagnostics: Default::default(),
            },
        }
    }
}

/// Density-normalized histogram of the samples inside `range`
/// (default: the sample range). `bins = None` selects Freedman-Diaconis.
pub fn histogram(s: &SampleSet, bins: Option<usize>, range: Option<(f64, f64)>) -> Result<Histogram> {
    if bins == Some(0) {
        return Err(Error::InvalidParams("histogram needs at least one bin".into()));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) if lo < hi => (lo, hi),
        Some((lo, hi)) => return Err(Error::InvalidParams(format!("histogram range [{lo}, {hi}] is empty"))),
        None => {
            s.require(1, "histogram")?;
            let lo = s.values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo < hi {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        }
    };
    let k = bins.unwrap_or_else(|| freedman_diaconis_bins(&s.values, lo, hi));
    let width = (hi - lo) / k as f64;
    let mut edges: Vec<f64> = (0..=k).map(|i| lo + width * i as f64).collect();
    edges[k] = hi;
    let mut counts = vec![0usize; k];
    let mut outside = 0;
    for &v in &s.values {
        if !(v >= lo && v <= hi) {
            outside += 1;
            continue;
        }
        let i = (((v - lo) / width) as usize).min(k - 1);
        counts[i] += 1;
    }
    let counted = s.count - outside;
    let density = (0..k)
        .map(|i| {
            if counted == 0 {
                0.0
            } else {
                counts[i] as f64 / (counted as f64 * (edges[i + 1] - edges[i]))
            }
        })
        .collect();
    Ok(Histogram {
        edges,
        density,
        counted,
        outside,
    })
}

pub fn write_moments_csv(moments: &[Moment], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "q,value,stderr")?;
    for m in moments {
        writeln!(out, "{:.16e},{:.16e},{:.16e}", m.q, m.value, m.stderr)?;
    }
    Ok(())
}

/// Normal cdf with mean zero and the given variance.
pub fn normal_cdf(x: f64, variance: f64) -> f64 {
    0.5 * (1.0 + crate::special::erf(x / (2.0 * variance).sqrt()))
}
