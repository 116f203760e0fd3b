//! Command-line front end: sampling, theory curves and the verification suite.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::ensembles::Symmetry;
use crate::error::{Error, Result};
use crate::harness::{self, ExperimentConfig, Report, Workspace};
use crate::quad::{self, Tolerance};
use crate::theory::{self, CurveMeta, Model, TheoryCurve};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "rankone",
    version,
    about = "Rank-one coupled Gaussian ensembles: sampling, theory and verification"
)]
pub struct Cli {
    /// JSON configuration file; missing fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true, value_name = "K")]
    pub threads: Option<usize>,
    /// Configuration override `key=value`; nested keys use dots (`secular.n=32`).
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
#[group(multiple = false)]
pub struct CouplingArgs {
    /// Dimensionless coupling `Z / (sigma sqrt N)`.
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: Option<f64>,
    /// Coupling `Z` in energy units.
    #[arg(long, allow_hyphen_values = true)]
    pub coupling: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample coupled spectra and write one CSV per realization plus a manifest.
    Sample {
        #[command(flatten)]
        coupling: CouplingArgs,
    },
    /// Tabulate a theoretical curve on a grid.
    Theory {
        /// One of: wigner, density_correction, l_of_E, window_pdf, F1, F2, series.
        #[arg(long)]
        formula: String,
        /// Uniform grid `lo,hi,count`.
        #[arg(long, allow_hyphen_values = true, conflicts_with = "points")]
        grid: Option<String>,
        /// Explicit grid points `a,b,c,...`.
        #[arg(long, allow_hyphen_values = true)]
        points: Option<String>,
        /// Energy window `lo,hi` in units of `sigma sqrt N` for window_pdf.
        #[arg(long, allow_hyphen_values = true)]
        window: Option<String>,
        #[command(flatten)]
        coupling: CouplingArgs,
    },
    /// Run the verification experiments and write their reports.
    Verify {
        /// Comma-separated experiment names.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        #[command(flatten)]
        coupling: CouplingArgs,
    },
    /// Summarize the reports found in the output directory.
    Report,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidParams(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `value` as JSON, falling back to a plain string.
fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn apply_override(doc: &mut Value, entry: &str) -> CliResult<()> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{entry}` is not of the form key=value")))?;
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("override key `{key}` does not name an object field")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), override_value(raw));
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Parses a configuration document, reporting the line and column of
/// syntax and type errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Loads the configuration, then applies overrides in order.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    coupling: &CouplingArgs,
) -> CliResult<ExperimentConfig> {
    let base = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            parse_config(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    let mut doc = serde_json::to_value(&base).expect("config serializes");
    let mut all: Vec<String> = overrides.to_vec();
    if let Some(s) = seed {
        all.push(format!("seed={s}"));
    }
    if let Some(k) = coupling.kappa {
        all.push(format!("kappa={k}"));
        all.push("coupling=null".into());
    }
    if let Some(z) = coupling.coupling {
        all.push(format!("coupling={z}"));
        all.push("kappa=null".into());
    }
    for o in &all {
        apply_override(&mut doc, o)?;
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("invalid override: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> CliResult<()> {
    fs::write(dir.join(name), contents).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.join(name).display())))
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Echo of the effective configuration with both coupling forms resolved.
#[derive(Serialize)]
struct ConfigEcho<'a> {
    #[serde(flatten)]
    config: &'a ExperimentConfig,
    resolved_kappa: Option<f64>,
    resolved_coupling: Option<f64>,
}

fn echo(cfg: &ExperimentConfig) -> String {
    let given = cfg.kappa.is_some() || cfg.coupling.is_some();
    let k = cfg.single_kappa(0.0);
    pretty(&ConfigEcho {
        config: cfg,
        resolved_kappa: given.then_some(k),
        resolved_coupling: given.then_some(k * cfg.unit()),
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub n: usize,
    pub beta: Symmetry,
    pub sigma: f64,
    pub kappa: f64,
    pub coupling: f64,
    pub realizations: usize,
    pub files: Vec<ManifestEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn cmd_sample(cfg: &ExperimentConfig, out: &Path) -> CliResult<i32> {
    let kappa = cfg.single_kappa(0.0);
    let pool = Workspace::new(cfg).pool(cfg.seed, cfg.beta)?;
    let solved = pool.solve_kappa(kappa)?;
    let width = solved.len().to_string().len().max(4);
    let mut files = Vec::new();
    for (i, s) in solved.iter().enumerate() {
        let name = format!("realization_{:0width$}.csv", i + 1);
        let mut buf = Vec::new();
        s.perturbed().write_csv(&mut buf)?;
        write_file(out, &name, &buf)?;
        files.push(ManifestEntry {
            sha256: sha256_hex(&buf),
            file: name,
        });
    }
    let manifest = Manifest {
        seed: cfg.seed,
        n: cfg.n,
        beta: cfg.beta,
        sigma: cfg.sigma,
        kappa,
        coupling: kappa * cfg.unit(),
        realizations: cfg.realizations,
        files,
    };
    write_file(out, "manifest.json", pretty(&manifest).as_bytes())?;
    println!("wrote {} spectra to {}", manifest.files.len(), out.display());
    Ok(EXIT_PASS)
}

fn parse_list(raw: &str, what: &str) -> CliResult<Vec<f64>> {
    raw.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{what}: `{t}` is not a number")))
        })
        .collect()
}

fn parse_grid(grid: Option<&str>, points: Option<&str>) -> CliResult<Vec<f64>> {
    match (grid, points) {
        (_, Some(p)) => parse_list(p, "points"),
        (Some(g), None) => {
            let parts: Vec<&str> = g.split(',').collect();
            if parts.len() != 3 {
                return Err(CliError::Usage("grid must be `lo,hi,count`".into()));
            }
            let v = parse_list(&format!("{},{}", parts[0], parts[1]), "grid")?;
            let count: usize = parts[2]
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("grid count `{}` is not an integer", parts[2])))?;
            if count < 2 || !(v[0] < v[1]) {
                return Err(CliError::Usage("grid needs lo < hi and at least 2 points".into()));
            }
            Ok((0..count)
                .map(|i| v[0] + (v[1] - v[0]) * i as f64 / (count - 1) as f64)
                .collect())
        }
        (None, None) => Err(CliError::Usage("give --grid or --points".into())),
    }
}

pub const FORMULAS: [&str; 7] = [
    "wigner",
    "density_correction",
    "l_of_E",
    "window_pdf",
    "F1",
    "F2",
    "series",
];

fn cmd_theory(cfg: &ExperimentConfig, out: &Path, formula: &str, grid: &[f64], window: Option<&str>) -> CliResult<i32> {
    let kappa = cfg.single_kappa(0.0);
    let model = Model::new(cfg.n, cfg.sigma, kappa);
    let beta = cfg.beta;
    let (lo, hi) = match window {
        Some(w) => match parse_list(w, "window")?[..] {
            [a, b] => (a * cfg.unit(), b * cfg.unit()),
            _ => return Err(CliError::Usage("window must be `lo,hi`".into())),
        },
        None => {
            let w = cfg.energy_windows()[0];
            (w.lo, w.hi)
        }
    };
    let mut params = serde_json::json!({
        "n": cfg.n, "sigma": cfg.sigma, "beta": beta.index(), "kappa": kappa,
    });
    if formula == "window_pdf" {
        params["window"] = serde_json::json!([lo, hi]);
    }
    let meta = CurveMeta {
        formula: formula.to_string(),
        params,
        diagnostics: Default::default(),
    };
    let mut curve = match formula {
        "wigner" => TheoryCurve::tabulate(grid, meta, |e| Ok(theory::wigner_density(e, &model))),
        "density_correction" => TheoryCurve::tabulate(grid, meta, |e| Ok(theory::corrected_density(e, &model))),
        "l_of_E" => TheoryCurve::tabulate(grid, meta, |e| theory::l_of_e(e, &model)),
        "window_pdf" => TheoryCurve::tabulate(grid, meta, |x| theory::window_pdf(x, lo, hi, &model, beta)),
        "F1" => TheoryCurve::tabulate(grid, meta, |x| {
            Ok(theory::fullwindow_factor(x, kappa, Symmetry::Orthogonal))
        }),
        "F2" => TheoryCurve::tabulate(grid, meta, |x| {
            Ok(theory::fullwindow_factor(x, kappa, Symmetry::Unitary))
        }),
        "series" => TheoryCurve::tabulate(grid, meta, |x| Ok(theory::fullwindow_factor_series(x, kappa, beta))),
        other => {
            return Err(CliError::Usage(format!(
                "unknown formula `{other}`; expected one of {}",
                FORMULAS.join(", ")
            )))
        }
    }?;
    if formula == "window_pdf" {
        let mass = quad::integrate_to_infinity(
            |x| theory::window_pdf(x, lo, hi, &model, beta).unwrap_or(f64::NAN),
            0.0,
            Tolerance { abs: 1e-11, rel: 1e-11 },
        )?;
        curve.meta.diagnostics.insert("integral".into(), mass.value.into());
    }
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    write_file(out, &format!("theory_{formula}.csv"), &buf)?;
    let side = curve.sidecar_json().expect("meta serializes") + "\n";
    write_file(out, &format!("theory_{formula}.json"), side.as_bytes())?;
    println!("wrote {} points of {formula} to {}", grid.len(), out.display());
    Ok(EXIT_PASS)
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryEntry {
    experiment: String,
    pass: bool,
    failed_checks: Vec<String>,
}

fn summarize(reports: &[Report]) -> (bool, Vec<SummaryEntry>) {
    let entries: Vec<SummaryEntry> = reports
        .iter()
        .map(|r| SummaryEntry {
            experiment: r.experiment.clone(),
            pass: r.pass,
            failed_checks: r.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect(),
        })
        .collect();
    (entries.iter().all(|e| e.pass), entries)
}

fn print_summary(entries: &[SummaryEntry]) {
    for e in entries {
        println!("{} {}", if e.pass { "PASS" } else { "FAIL" }, e.experiment);
        for c in &e.failed_checks {
            println!("    failed: {c}");
        }
    }
}

fn cmd_verify(cfg: &ExperimentConfig, out: &Path, only: &[String]) -> CliResult<i32> {
    let entries = write_verification(cfg, out, only)?;
    print_summary(&entries);
    Ok(if entries.iter().all(|e| e.pass) {
        EXIT_PASS
    } else {
        EXIT_CHECK_FAILED
    })
}

/// Runs the selected experiments and writes reports, tables, `summary.json`
/// and `runtime.json` under `out`. Returns whether every check passed.
pub fn verify_into(cfg: &ExperimentConfig, out: &Path, only: &[String]) -> CliResult<bool> {
    fs::create_dir_all(out)?;
    write_file(out, "config.json", echo(cfg).as_bytes())?;
    Ok(write_verification(cfg, out, only)?.iter().all(|e| e.pass))
}

fn write_verification(cfg: &ExperimentConfig, out: &Path, only: &[String]) -> CliResult<Vec<SummaryEntry>> {
    let outcomes = harness::run_suite(cfg, only)?;
    let mut runtimes = BTreeMap::new();
    for o in &outcomes {
        let dir = out.join(&o.report.experiment);
        fs::create_dir_all(&dir)?;
        write_file(&dir, "report.json", (o.report.to_json() + "\n").as_bytes())?;
        for t in &o.tables {
            write_file(&dir, &t.file, t.contents.as_bytes())?;
        }
        let mut timing = o.report.timings.clone();
        timing.insert("total".into(), o.report.runtime_seconds);
        runtimes.insert(o.report.experiment.clone(), timing);
    }
    let reports: Vec<Report> = outcomes.into_iter().map(|o| o.report).collect();
    let (_, entries) = summarize(&reports);
    write_file(out, "summary.json", pretty(&entries).as_bytes())?;
    write_file(out, "runtime.json", pretty(&runtimes).as_bytes())?;
    Ok(entries)
}

fn cmd_report(out: &Path) -> CliResult<i32> {
    let mut reports = Vec::new();
    for name in harness::EXPERIMENTS {
        let path = out.join(name).join("report.json");
        if let Ok(text) = fs::read_to_string(&path) {
            let r: Report =
                serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            reports.push(r);
        }
    }
    if reports.is_empty() {
        return Err(CliError::Usage(format!("no reports found under {}", out.display())));
    }
    let (pass, entries) = summarize(&reports);
    print_summary(&entries);
    Ok(if pass { EXIT_PASS } else { EXIT_CHECK_FAILED })
}

fn execute(cli: Cli) -> CliResult<i32> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    if let Command::Report = cli.command {
        return cmd_report(&cli.out);
    }
    let none = CouplingArgs::default();
    let coupling = match &cli.command {
        Command::Sample { coupling } | Command::Theory { coupling, .. } | Command::Verify { coupling, .. } => coupling,
        Command::Report => &none,
    };
    let cfg = load_config(cli.config.as_deref(), &cli.overrides, cli.seed, coupling)?;
    fs::create_dir_all(&cli.out)?;
    write_file(&cli.out, "config.json", echo(&cfg).as_bytes())?;
    match &cli.command {
        Command::Sample { .. } => cmd_sample(&cfg, &cli.out),
        Command::Theory {
            formula,
            grid,
            points,
            window,
            ..
        } => {
            let g = parse_grid(grid.as_deref(), points.as_deref())?;
            cmd_theory(&cfg, &cli.out, formula, &g, window.as_deref())
        }
        Command::Verify { only, .. } => cmd_verify(&cfg, &cli.out, only),
        Command::Report => unreachable!("handled above"),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_carry_position() {
        let text = "{\n  \"n\": 100,\n  \"sigma\": \"wide\"\n}";
        match parse_config(text) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "{\n  \"n\": 100,\n  \"realisations\": 5\n}";
        match parse_config(text) {
            Err(Error::Config { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("realisations"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = load_config(
            None,
            &["secular.n=32".into(), "realizations=7".into(), "beta=2".into()],
            Some(5),
            &CouplingArgs::default(),
        )
        .unwrap();
        assert_eq!(cfg.secular.n, 32);
        assert_eq!(cfg.realizations, 7);
        assert_eq!(cfg.beta, Symmetry::Unitary);
        assert_eq!(cfg.seed, 5);
        assert!(load_config(None, &["nonsense".into()], None, &CouplingArgs::default()).is_err());
        assert!(load_config(None, &["beta=3".into()], None, &CouplingArgs::default()).is_err());
    }

    #[test]
    fn coupling_flag_replaces_configured_form() {
        let c = CouplingArgs {
            kappa: None,
            coupling: Some(10.0),
        };
        let cfg = load_config(None, &["kappa=0.3".into()], None, &c).unwrap();
        assert_eq!(cfg.kappa, None);
        assert_eq!(cfg.coupling, Some(10.0));
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid(Some("0,1,3"), None).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid(None, Some("-1,2")).unwrap(), vec![-1.0, 2.0]);
        assert!(parse_grid(Some("1,0,3"), None).is_err());
        assert!(parse_grid(None, None).is_err());
    }

    #[test]
    fn exclusive_coupling_flags_are_a_usage_error() {
        assert_eq!(
            run(["rankone", "verify", "--kappa", "1", "--coupling", "2"]),
            EXIT_USAGE
        );
        assert_eq!(run(["rankone", "frobnicate"]), EXIT_USAGE);
    }
}
