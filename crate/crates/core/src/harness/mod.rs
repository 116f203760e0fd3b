//! End-to-end experiments with machine-readable pass/fail reports.

mod experiments;
mod pool;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ensembles::Symmetry;
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::EnergyWindow;

pub use experiments::*;
pub use pool::{Pool, Solved, Workspace};

pub const DEFAULT_SEED: u64 = 20_100_401;

/// Named thresholds used by the checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Allowed deviation of a sample mean, in standard errors.
    pub mean_stderrs: f64,
    /// Relative gap between window averages and `l` at the window center.
    pub center_relative: f64,
    /// Relative gap between fitted amplitude variances and `l`.
    pub fit_relative: f64,
    /// KS p-value a single run must exceed.
    pub ks_p_value: f64,
    pub ks_success_rate: f64,
    pub ks_control_success_rate: f64,
    pub collective_weight_relative: f64,
    /// Allowed deviation of mean state counts.
    pub count_states: f64,
    /// Required relative reduction of the integrated density deviation.
    pub density_reduction: f64,
    /// Sup-norm of the unperturbed density error relative to the peak density.
    pub wigner_sup_relative: f64,
    /// Eigenvalue agreement, in units of `sigma sqrt(N)`.
    pub secular_energy: f64,
    pub secular_weight: f64,
    pub identity_relative: f64,
    pub unitarity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            mean_stderrs: 3.0,
            center_relative: 0.05,
            fit_relative: 0.05,
            ks_p_value: 0.01,
            ks_success_rate: 0.9,
            ks_control_success_rate: 0.95,
            collective_weight_relative: 0.02,
            count_states: 1.0,
            density_reduction: 0.30,
            wigner_sup_relative: 0.03,
            secular_energy: 1e-8,
            secular_weight: 1e-8,
            identity_relative: 1e-8,
            unitarity: 1e-8,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("mean_stderrs", self.mean_stderrs),
            ("center_relative", self.center_relative),
            ("fit_relative", self.fit_relative),
            ("ks_p_value", self.ks_p_value),
            ("ks_success_rate", self.ks_success_rate),
            ("ks_control_success_rate", self.ks_control_success_rate),
            ("collective_weight_relative", self.collective_weight_relative),
            ("count_states", self.count_states),
            ("density_reduction", self.density_reduction),
            ("wigner_sup_relative", self.wigner_sup_relative),
            ("secular_energy", self.secular_energy),
            ("secular_weight", self.secular_weight),
            ("identity_relative", self.identity_relative),
            ("unitarity", self.unitarity),
        ]
    }
}

/// Small-matrix comparison of the secular solver with dense diagonalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecularConfig {
    pub n: usize,
    pub seeds: usize,
    pub kappa: f64,
}

impl Default for SecularConfig {
    fn default() -> Self {
        Self {
            n: 64,
            seeds: 100,
            kappa: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub sigma: f64,
    pub beta: Symmetry,
    pub seed: u64,
    pub realizations: usize,
    /// Coupling for single-coupling experiments, dimensionless. Exclusive with `coupling`.
    pub kappa: Option<f64>,
    /// Coupling for single-coupling experiments, in energy units. Exclusive with `kappa`.
    pub coupling: Option<f64>,
    /// Energy windows in units of `sigma sqrt(N)`.
    pub windows: Vec<EnergyWindow>,
    pub kappa_grid: Vec<f64>,
    /// Histogram bin count; Freedman-Diaconis when absent.
    pub bins: Option<usize>,
    /// Independent suite repetitions used for KS success rates.
    pub seeded_runs: usize,
    /// Gaussian kernel width for density estimates, in units of `sigma sqrt(N)`.
    pub density_bandwidth: f64,
    pub secular: SecularConfig,
    pub tolerances: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            sigma: 1.0,
            beta: Symmetry::Orthogonal,
            seed: DEFAULT_SEED,
            realizations: 50,
            kappa: None,
            coupling: None,
            windows: vec![EnergyWindow { lo: -0.5, hi: 0.5 }, EnergyWindow { lo: 0.5, hi: 1.5 }],
            kappa_grid: vec![0.0, 0.25, 0.6, 1.0, 1.5],
            bins: None,
            seeded_runs: 10,
            density_bandwidth: 0.25,
            secular: SecularConfig::default(),
            tolerances: Tolerances::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.realizations < 2 {
            return bad(format!("realizations must be at least 2, got {}", self.realizations));
        }
        if self.seeded_runs == 0 {
            return bad("seeded_runs must be positive".into());
        }
        if self.kappa.is_some() && self.coupling.is_some() {
            return bad("give either kappa or coupling, not both".into());
        }
        if let Some(k) = self.kappa.or(self.coupling) {
            if !k.is_finite() {
                return bad(format!("coupling must be finite, got {k}"));
            }
        }
        if self.windows.is_empty() {
            return bad("at least one window is required".into());
        }
        for w in &self.windows {
            if !(w.lo < w.hi) || w.lo < -2.0 || w.hi > 2.0 {
                return bad(format!(
                    "window [{}, {}] must be nonempty and inside [-2, 2]",
                    w.lo, w.hi
                ));
            }
        }
        if self.kappa_grid.iter().any(|k| !k.is_finite()) {
            return bad("kappa_grid entries must be finite".into());
        }
        if self.bins == Some(0) {
            return bad("bins must be positive".into());
        }
        if !(self.density_bandwidth > 0.0) {
            return bad("density_bandwidth must be positive".into());
        }
        if self.secular.n < 2 || self.secular.seeds == 0 {
            return bad("secular.n must be at least 2 and secular.seeds positive".into());
        }
        for (name, v) in self.tolerances.entries() {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("tolerance {name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// `sigma sqrt(N)`.
    pub fn unit(&self) -> f64 {
        self.sigma * (self.n as f64).sqrt()
    }

    /// Dimensionless coupling requested for single-coupling experiments.
    pub fn single_kappa(&self, default: f64) -> f64 {
        match (self.kappa, self.coupling) {
            (Some(k), _) => k,
            (None, Some(z)) => z / self.unit(),
            (None, None) => default,
        }
    }

    /// Windows converted to energy units.
    pub fn energy_windows(&self) -> Vec<EnergyWindow> {
        let u = self.unit();
        self.windows
            .iter()
            .map(|w| EnergyWindow {
                lo: w.lo * u,
                hi: w.hi * u,
            })
            .collect()
    }

    /// Master seed of suite repetition `run`; run zero uses the configured seed.
    pub fn run_seed(&self, run: usize) -> u64 {
        if run == 0 {
            self.seed
        } else {
            rng::derive_seed(self.seed, run as u64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// `|measured - predicted| <= tolerance`
    AbsDiff,
    /// `|measured - predicted| <= tolerance |predicted|`
    RelDiff,
    /// `measured >= predicted`
    AtLeast,
    /// `measured <= predicted`
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub predicted: f64,
    pub tolerance: f64,
    pub rule: Rule,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, predicted: f64, tolerance: f64, rule: Rule) -> Self {
        let pass = measured.is_finite()
            && match rule {
                Rule::AbsDiff => (measured - predicted).abs() <= tolerance,
                Rule::RelDiff => (measured - predicted).abs() <= tolerance * predicted.abs(),
                Rule::AtLeast => measured >= predicted,
                Rule::AtMost => measured <= predicted,
            };
        Self {
            name: name.into(),
            measured,
            predicted,
            tolerance,
            rule,
            pass,
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self::new(name, measured, threshold, 0.0, Rule::AtLeast)
    }

    pub fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self::new(name, measured, threshold, 0.0, Rule::AtMost)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<Check>,
    /// Supplementary measured quantities that do not gate the result.
    pub diagnostics: BTreeMap<String, f64>,
    /// Data files emitted next to the report.
    pub files: Vec<String>,
    pub config: ExperimentConfig,
    /// Wall time; kept out of the serialized report so reruns compare equal.
    #[serde(skip)]
    pub runtime_seconds: f64,
    /// Named wall-time measurements, also kept out of the serialized report.
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

impl Report {
    fn new(experiment: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            experiment: experiment.to_string(),
            seed: cfg.seed,
            pass: true,
            checks: Vec::new(),
            diagnostics: BTreeMap::new(),
            files: Vec::new(),
            config: cfg.clone(),
            runtime_seconds: 0.0,
            timings: BTreeMap::new(),
        }
    }

    fn push(&mut self, c: Check) {
        self.pass &= c.pass;
        self.checks.push(c);
    }

    fn note(&mut self, key: impl Into<String>, value: f64) {
        self.diagnostics.insert(key.into(), value);
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A CSV table produced by an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub contents: String,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub tables: Vec<Table>,
}

pub const EXPERIMENTS: [&str; 7] = [
    "exp_fig1",
    "exp_histograms",
    "exp_collective",
    "exp_density",
    "exp_secular_vs_dense",
    "exp_spacing",
    "exp_other_components",
];

/// Runs one experiment by name, reusing cached realizations from `ws`.
pub fn run_experiment(name: &str, cfg: &ExperimentConfig, ws: &Workspace) -> Result<Outcome> {
    let start = Instant::now();
    let mut out = match name {
        "exp_fig1" => exp_fig1(cfg, ws),
        "exp_histograms" => exp_histograms(cfg, ws),
        "exp_collective" => exp_collective(cfg, ws),
        "exp_density" => exp_density(cfg, ws),
        "exp_secular_vs_dense" => exp_secular_vs_dense(cfg, ws),
        "exp_spacing" => exp_spacing(cfg, ws),
        "exp_other_components" => exp_other_components(cfg, ws),
        other => Err(Error::InvalidParams(format!(
            "unknown experiment {other}; expected one of {}",
            EXPERIMENTS.join(", ")
        ))),
    }?;
    out.report.runtime_seconds = start.elapsed().as_secs_f64();
    out.report.files = out.tables.iter().map(|t| t.file.clone()).collect();
    Ok(out)
}

/// Runs the selected experiments (all when `only` is empty) in suite order.
pub fn run_suite(cfg: &ExperimentConfig, only: &[String]) -> Result<Vec<Outcome>> {
    cfg.validate()?;
    for name in only {
        if !EXPERIMENTS.contains(&name.as_str()) {
            return Err(Error::InvalidParams(format!("unknown experiment {name}")));
        }
    }
    let ws = Workspace::new(cfg);
    EXPERIMENTS
        .iter()
        .filter(|e| only.is_empty() || only.iter().any(|o| o == *e))
        .map(|e| run_experiment(e, cfg, &ws))
        .collect()
}
