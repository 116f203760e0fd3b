use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::ensembles::{
    apply_rank_one, dense_eigh, extract_spectrum, fast_sample_realization, sample_realization, EnsembleParams,
    PerturbedSpectrum, Symmetry, UnperturbedSpectrum,
};
use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};
use crate::rank_one::{overlap_coefficients, overlap_matrix, perturb, trace_identities};
use crate::stats::{
    empirical_moment, gaussian_fit, histogram, ks_statistic, ks_two_sample, normal_cdf, window_select, Exclude, Gauge,
    Histogram, SampleSet, Scale, Selection,
};
use crate::theory::{self, Model};

use super::pool::Solved;
use super::{Check, ExperimentConfig, Outcome, Report, Rule, Table, Workspace};

const WIGNER_BINS: usize = 20;
const DENSITY_GRID: usize = 401;
/// Unfolded positions kept for spacing statistics, as fractions of `N`.
const UNFOLD_KEEP: (f64, f64) = (0.1, 0.9);
const DENSITY_TOLERANCE: Tolerance = Tolerance { abs: 1e-12, rel: 1e-10 };

fn window_label(i: usize) -> String {
    format!("I{}", i + 1)
}

fn collective_side(kappa: f64) -> Exclude {
    if kappa * kappa <= 1.0 {
        Exclude::None
    } else if kappa > 0.0 {
        Exclude::Highest
    } else {
        Exclude::Lowest
    }
}

fn perturbed(solved: &[Solved]) -> Vec<PerturbedSpectrum> {
    solved.iter().map(Solved::perturbed).collect()
}

fn histogram_table(file: String, h: &Histogram) -> Table {
    let mut buf = Vec::new();
    h.write_csv(&mut buf).expect("write to memory");
    Table {
        file,
        contents: String::from_utf8(buf).expect("ascii csv"),
    }
}

fn mean(xs: &[f64]) -> f64 {
    crate::stats::pairwise_sum(xs) / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let d: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (crate::stats::pairwise_sum(&d) / (xs.len() as f64 - 1.0)).sqrt()
}

/// Success counter for a KS check repeated over seeded runs.
#[derive(Default)]
struct KsTally {
    passed: usize,
    runs: usize,
    min_p: f64,
}

impl KsTally {
    fn add(&mut self, p: f64, threshold: f64) {
        if self.runs == 0 || p < self.min_p {
            self.min_p = p;
        }
        self.runs += 1;
        if p > threshold {
            self.passed += 1;
        }
    }

    fn rate(&self) -> f64 {
        self.passed as f64 / self.runs as f64
    }
}

fn push_tallies(rep: &mut Report, tallies: BTreeMap<String, (KsTally, bool)>, cfg: &ExperimentConfig) {
    for (name, (t, control)) in tallies {
        let need = if control {
            cfg.tolerances.ks_control_success_rate
        } else {
            cfg.tolerances.ks_success_rate
        };
        rep.note(format!("{name} min p"), t.min_p);
        rep.push(Check::at_least(format!("{name} KS success rate"), t.rate(), need));
    }
}

/// Window averages of `N |Psi_1|^2` against the window prediction and `l`
/// at the window center.
pub fn exp_fig1(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Outcome> {
    let mut rep = Report::new("exp_fig1", cfg);
    let tol = &cfg.tolerances;
    let pool = ws.pool(cfg.seed, cfg.beta)?;
    let windows = cfg.energy_windows();
    let mut csv = String::from("kappa,window_lo,window_hi,count,mean,stderr,predicted_window,predicted_center\n");
    for &k in &cfg.kappa_grid {
        let spectra = perturbed(&pool.solve_kappa(k)?);
        let model = Model::new(cfg.n, cfg.sigma, k);
        for (wi, w) in windows.iter().enumerate() {
            let label = format!("kappa={k} {}", window_label(wi));
            let sel = Selection {
                exclude: collective_side(k),
                ..Selection::widths(*w, cfg.beta)
            };
            let s = window_select(&spectra, &sel)?;
            let m = empirical_moment(&s, 1.0)?;
            let pw = theory::window_moment(1.0, w.lo, w.hi, &model, cfg.beta)?;
            let pc = theory::l_of_e(w.center(), &model)?;
            writeln!(
                csv,
                "{k},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                w.lo, w.hi, s.count, m.value, m.stderr, pw, pc
            )
            .expect("string write");
            rep.push(Check::new(
                format!("{label} mean vs window average"),
                m.value,
                pw,
                tol.mean_stderrs * m.stderr,
                Rule::AbsDiff,
            ));
            let center = Check::new(
                format!("{label} mean vs center value"),
                m.value,
                pc,
                tol.center_relative,
                Rule::RelDiff,
            );
            if wi == 0 {
                rep.push(center);
            } else {
                rep.note(
                    format!("{label} relative gap to center value"),
                    (m.value - pc).abs() / pc,
                );
            }
            rep.note(format!("{label} window vs center prediction gap"), (pw - pc).abs() / pc);
        }
    }
    Ok(Outcome {
        report: rep,
        tables: vec![Table {
            file: "fig1.csv".into(),
            contents: csv,
        }],
    })
}

struct HistogramCase {
    beta: Symmetry,
    kappa: f64,
    parts: &'static [Scale],
    control: bool,
}

const HISTOGRAM_CASES: [HistogramCase; 5] = [
    HistogramCase {
        beta: Symmetry::Orthogonal,
        kappa: 0.6,
        parts: &[Scale::AmplitudeRe],
        control: false,
    },
    HistogramCase {
        beta: Symmetry::Orthogonal,
        kappa: 1.5,
        parts: &[Scale::AmplitudeRe],
        control: false,
    },
    HistogramCase {
        beta: Symmetry::Unitary,
        kappa: 0.6,
        parts: &[Scale::AmplitudeRe, Scale::AmplitudeIm],
        control: false,
    },
    HistogramCase {
        beta: Symmetry::Orthogonal,
        kappa: 0.0,
        parts: &[Scale::AmplitudeRe],
        control: true,
    },
    HistogramCase {
        beta: Symmetry::Unitary,
        kappa: 0.0,
        parts: &[Scale::AmplitudeRe, Scale::AmplitudeIm],
        control: true,
    },
];

fn part_label(s: Scale) -> &'static str {
    match s {
        Scale::AmplitudeIm => "im",
        _ => "re",
    }
}

/// Amplitude distributions in each window against zero-mean Gaussians of
/// variance `l` at the window center.
pub fn exp_histograms(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Outcome> {
    let mut rep = Report::new("exp_histograms", cfg);
    let tol = &cfg.tolerances;
    let windows = cfg.energy_windows();
    let mut tables = Vec::new();
    let mut tallies: BTreeMap<String, (KsTally, bool)> = BTreeMap::new();
    for run in 0..cfg.seeded_runs {
        let seed = cfg.run_seed(run);
        for case in &HISTOGRAM_CASES {
            let pool = ws.pool(seed, case.beta)?;
            let spectra = perturbed(&pool.solve_kappa(case.kappa)?);
            let model = Model::new(cfg.n, cfg.sigma, case.kappa);
            let b = case.beta.index();
            for (wi, w) in windows.iter().enumerate() {
                let l = theory::l_of_e(w.center(), &model)?;
                let mut fits = Vec::new();
                for &part in case.parts {
                    let label = format!(
                        "beta={b} kappa={} {} {}",
                        case.kappa,
                        window_label(wi),
                        part_label(part)
                    );
                    let sel = Selection {
                        window: *w,
                        scale: part,
                        symmetry: case.beta,
                        gauge: Gauge::Random { seed },
                        exclude: collective_side(case.kappa),
                    };
                    let s = window_select(&spectra, &sel)?;
                    let ks = ks_statistic(&s, |x| normal_cdf(x, l))?;
                    tallies
                        .entry(label.clone())
                        .or_insert_with(|| (KsTally::default(), case.control))
                        .0
                        .add(ks.p_value, tol.ks_p_value);
                    if run > 0 {
                        continue;
                    }
                    let fit = gaussian_fit(&s)?;
                    rep.note(format!("{label} count"), s.count as f64);
                    rep.note(format!("{label} fitted mean"), fit.mean);
                    if case.control {
                        rep.push(Check::new(
                            format!("{label} fitted variance"),
                            fit.variance,
                            l,
                            tol.mean_stderrs * fit.variance_stderr,
                            Rule::AbsDiff,
                        ));
                    } else {
                        rep.push(Check::new(
                            format!("{label} fitted variance"),
                            fit.variance,
                            l,
                            tol.fit_relative,
                            Rule::RelDiff,
                        ));
                    }
                    let h = histogram(&s, cfg.bins, None)?;
                    rep.note(format!("{label} bins"), h.bins() as f64);
                    tables.push(histogram_table(
                        format!(
                            "hist_beta{b}_kappa{}_{}_{}.csv",
                            case.kappa,
                            window_label(wi),
                            part_label(part)
                        ),
                        &h,
                    ));
                    fits.push(fit);
                }
                if let [re, im] = fits[..] {
                    let joint = (re.variance_stderr.powi(2) + im.variance_stderr.powi(2)).sqrt();
                    rep.push(Check::new(
                        format!(
                            "beta={b} kappa={} {} re/im variance agreement",
                            case.kappa,
                            window_label(wi)
                        ),
                        re.variance,
                        im.variance,
                        tol.mean_stderrs * joint,
                        Rule::AbsDiff,
                    ));
                }
            }
        }
    }
    push_tallies(&mut rep, tallies, cfg);
    Ok(Outcome { report: rep, tables })
}

/// Boundary between the bulk and a split-off state.
fn bulk_boundary(model: &Model) -> f64 {
    let r = model.radius();
    match theory::collective_state(model) {
        Ok(c) => {
            let inner = c.e_c.abs() - c.half_width_a;
            if inner > r {
                0.5 * (r + inner)
            } else {
                r
            }
        }
        Err(_) => r,
    }
}

fn extreme_state(s: &Solved, kappa: f64) -> (f64, f64) {
    let i = if kappa >= 0.0 { s.energies.len() - 1 } else { 0 };
    (s.energies[i], s.first[i].norm_sqr())
}

/// Energy and weight of the state split off from the bulk.
pub fn exp_collective(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Outcome> {
    let mut rep = Report::new("exp_collective", cfg);
    let tol = &cfg.tolerances;
    let kappa = cfg.single_kappa(1.5);
    let model = Model::new(cfg.n, cfg.sigma, kappa);
    let c = theory::collective_state(&model)?;
    let pool = ws.pool(cfg.seed, cfg.beta)?;
    let solved = pool.solve_kappa(kappa)?;
    let n = cfg.n as f64;
    let mut csv = String::from("realization,E_top,z_top\n");
    let mut e_top = Vec::new();
    let mut z_top = Vec::new();
    let boundary = bulk_boundary(&model);
    let mut bulk = Vec::new();
    for (i, s) in solved.iter().enumerate() {
        let (e, z) = extreme_state(s, kappa);
        writeln!(csv, "{},{:.16e},{:.16e}", i + 1, e, z).expect("string write");
        e_top.push(e);
        z_top.push(z);
        bulk.push(s.energies.iter().filter(|x| x.abs() <= boundary).count() as f64);
    }
    rep.push(Check::new(
        format!("kappa={kappa} mean top-state weight"),
        mean(&z_top),
        c.z_c,
        tol.collective_weight_relative,
        Rule::RelDiff,
    ));
    rep.push(Check::new(
        format!("kappa={kappa} mean top-state energy"),
        mean(&e_top),
        c.e_c,
        c.half_width_a,
        Rule::AbsDiff,
    ));
    rep.push(Check::new(
        format!("kappa={kappa} mean bulk state count"),
        mean(&bulk),
        n - 1.0 + 1.0 / (kappa * kappa),
        tol.count_states,
        Rule::AbsDiff,
    ));
    rep.note("top-state weight stderr", std_dev(&z_top) / (z_top.len() as f64).sqrt());
    rep.note("top-state energy spread", std_dev(&e_top));
    rep.note("predicted density half width", c.half_width_a);

    // Below threshold the largest state carries only O(1/N) weight.
    let below = pool.solve_kappa(0.5)?;
    let small = below.iter().filter(|s| extreme_state(s, 0.5).1 < 20.0 / n).count() as f64;
    rep.note(
        "kappa=0.5 fraction of top weights below 20/N",
        small / below.len() as f64,
    );

    Ok(Outcome {
        report: rep,
        tables: vec![Table {
            file: "collective.csv".into(),
            contents: csv,
        }],
    })
}

fn gaussian_kernel(u: f64, h: f64) -> f64 {
    (-0.5 * (u / h).powi(2)).exp() / (h * (2.0 * PI).sqrt())
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    let parts: Vec<f64> = x
        .windows(2)
        .zip(y.windows(2))
        .map(|(a, b)| 0.5 * (a[1] - a[0]) * (b[0] + b[1]))
        .collect();
    crate::stats::pairwise_sum(&parts)
}

/// Kernel-smoothed per-energy density of a per-angle density.
fn smoothed_prediction(g: f64, h: f64, model: &Model, per_angle: impl Fn(f64) -> f64) -> Result<f64> {
    let r = model.radius();
    Ok(quad::integrate(
        |p| gaussian_kernel(g - r * p.cos(), h) * per_angle(p),
        0.0,
        PI,
        DENSITY_TOLERANCE,
    )?
    .value)
}

/// Mean level density: the unperturbed semicircle, the coupling correction
/// measured as the paired shift between `M` and `G` of each realization, and
/// state counts with a collective state.
pub fn exp_density(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Outcome> {
    let mut rep = Report::new("exp_density", cfg);
    let tol = &cfg.tolerances;
    let pool = ws.pool(cfg.seed, cfg.beta)?;
    let base = pool.solve_all(0.0)?;
    let m0 = Model::new(cfg.n, cfg.sigma, 0.0);
    let r = m0.radius();
    let reps = base.len() as f64;
    let mut tables = Vec::new();

    // Unperturbed histogram against bin averages of the semicircle.
    let all: Vec<f64> = base.iter().flat_map(|s| s.energies.iter().copied()).collect();
    let h = histogram(&SampleSet::from_values(all), Some(WIGNER_BINS), Some((-r, r)))?;
    let scale = h.counted as f64 / reps;
    let mut sup: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for i in 0..h.bins() {
        let pred =
            (theory::wigner_staircase(h.edges[i + 1], &m0) - theory::wigner_staircase(h.edges[i], &m0)) / h.width(i);
        sup = sup.max((h.density[i] * scale - pred).abs());
        peak = peak.max(pred);
    }
    rep.push(Check::at_most(
        "kappa=0 semicircle sup deviation",
        sup / peak,
        tol.wigner_sup_relative,
    ));
    tables.push(histogram_table("density_kappa0.csv".into(), &h));

    // Paired kernel estimate of the coupling correction.
    let kappa = cfg.single_kappa(0.6);
    let model = Model::new(cfg.n, cfg.sigma, kappa);
    let coupled = pool.solve_kappa(kappa)?;
    let bw = cfg.density_bandwidth * cfg.unit();
    let grid: Vec<f64> = (0..DENSITY_GRID)
        .map(|i| -r + 2.0 * r * i as f64 / (DENSITY_GRID - 1) as f64)
        .collect();
    let skip = collective_side(kappa);
    let paired: Vec<f64> = grid
        .par_iter()
        .map(|&g| {
            let mut acc = 0.0;
            for (m, g0) in coupled.iter().zip(&base) {
                let top = match skip {
                    Exclude::Highest => Some(m.energies.len() - 1),
                    Exclude::Lowest => Some(0),
                    Exclude::None => None,
                };
                for (a, &e) in m.energies.iter().enumerate() {
                    if Some(a) != top {
                        acc += gaussian_kernel(g - e, bw);
                    }
                }
                for &e in &g0.energies {
                    acc -= gaussian_kernel(g - e, bw);
                }
            }
            acc / reps
        })
        .collect();
    let first_order = grid
        .par_iter()
        .map(|&g| smoothed_prediction(g, bw, &model, |p| theory::density_shift_angle(p, &model)))
        .collect::<Result<Vec<_>>>()?;
    let resolvent = grid
        .par_iter()
        .map(|&g| smoothed_prediction(g, bw, &model, |p| theory::resolvent_density_shift(p, &model)))
        .collect::<Result<Vec<_>>>()?;
    let abs_dev = |pred: &[f64]| {
        let d: Vec<f64> = paired.iter().zip(pred).map(|(a, b)| (a - b).abs()).collect();
        trapezoid(&grid, &d)
    };
    let dev_wigner = abs_dev(&vec![0.0; grid.len()]);
    let dev_first_order = abs_dev(&first_order);
    let dev_resolvent = abs_dev(&resolvent);
    rep.push(Check::at_least(
        format!("kappa={kappa} density deviation reduction by coupling correction"),
        1.0 - dev_first_order / dev_wigner,
        tol.density_reduction,
    ));
    rep.note(
        format!("kappa={kappa} integrated deviation, semicircle only"),
        dev_wigner,
    );
    rep.note(
        format!("kappa={kappa} integrated deviation, coupling correction"),
        dev_first_order,
    );
    rep.note(
        format!("kappa={kappa} integrated deviation, resolvent shift"),
        dev_resolvent,
    );
    rep.note(
        format!("kappa={kappa} density deviation reduction by resolvent shift"),
        1.0 - dev_resolvent / dev_wigner,
    );
    rep.note("kernel bandwidth", bw);
    let mut csv = String::from("energy,paired_shift,first_order_shift,resolvent_shift\n");
    for i in 0..grid.len() {
        writeln!(
            csv,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            grid[i], paired[i], first_order[i], resolvent[i]
        )
        .expect("string write");
    }
    tables.push(Table {
        file: format!("density_shift_kappa{kappa}.csv"),
        contents: csv,
    });

    // State counts with a collective state present.
    let kc = 1.5;
    let mc = Model::new(cfg.n, cfg.sigma, kc);
    let boundary = bulk_boundary(&mc);
    let split = pool.solve_kappa(kc)?;
    let inside: Vec<f64> = split
        .iter()
        .map(|s| s.energies.iter().filter(|e| e.abs() <= boundary).count() as f64)
        .collect();
    let outside: Vec<f64> = inside.iter().map(|c| cfg.n as f64 - c).collect();
    let inv = 1.0 / (kc * kc);
    rep.push(Check::new(
        format!("kappa={kc} bulk state count"),
        mean(&inside),
        cfg.n as f64 - 1.0 + inv,
        tol.count_states,
        Rule::AbsDiff,
    ));
    rep.push(Check::new(
        format!("kappa={kc} collective state count"),
        mean(&outside),
        1.0 - inv,
        tol.count_states,
        Rule::AbsDiff,
    ));
    Ok(Outcome { report: rep, tables })
}

struct SecularRow {
    energy: f64,
    weight: f64,
    unitarity: f64,
    identity: f64,
    fast_e: Vec<f64>,
    dense_e: Vec<f64>,
    fast_w: Vec<f64>,
}

/// Secular-equation solution against dense diagonalization of the coupled
/// matrix, plus the exact trace identities at full size.
pub fn exp_secular_vs_dense(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Outcome> {
    let mut rep = Report::new("exp_secular_vs_dense", cfg);
    let tol = &cfg.tolerances;
    let sc = &cfg.secular;
    let params = EnsembleParams::with_kappa(sc.n, cfg.beta, cfg.sigma, sc.kappa, cfg.seed)?;
    let z = params.coupling;
    let unit = cfg.sigma * (sc.n as f64).sqrt();
    let nf = sc.n as f64;

    let t_dense = Instant::now();
    let rows = (0..sc.seeds as u64)
        .into_par_iter()
        .map(|i| -> Result<SecularRow> {
            let g = sample_realization(&params, i);
            let ge = dense_eigh(&g, Some(cfg.seed))?;
            let unperturbed: UnperturbedSpectrum = extract_spectrum(&ge).into();
            let m = dense_eigh(&apply_rank_one(&g, z), Some(cfg.seed))?;
            let dense = extract_spectrum(&m);
            let sec = perturb(&unperturbed, z)?;
            let energy = sec
                .energies
                .iter()
                .zip(&dense.energies)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let weight = sec
                .z
                .iter()
                .zip(&dense.z)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let ov = overlap_coefficients(&unperturbed.e, &sec.energies)?;
            let unitarity = overlap_matrix(&unperturbed.e, &sec.energies, &ov).unitarity_defect();
            let same = perturb(&unperturbed, 0.0)?;
            let identity = same
                .energies
                .iter()
                .zip(&unperturbed.e)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let fast = fast_sample_realization(&params, i)?;
            Ok(SecularRow {
                energy,
                weight,
                unitarity,
                identity,
                fast_w: fast.r.iter().map(|r| nf * r).collect(),
                fast_e: fast.e,
                dense_e: unperturbed.e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let elapsed = t_dense.elapsed().as_secs_f64();
    let worst = |f: fn(&SecularRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let n = sc.n;
    rep.push(Check::at_most(
        format!("N={n} max eigenvalue difference / (sigma sqrt N)"),
        worst(|r| r.energy) / unit,
        tol.secular_energy,
    ));
    rep.push(Check::at_most(
        format!("N={n} max weight difference"),
        worst(|r| r.weight),
        tol.secular_weight,
    ));
    rep.push(Check::at_most(
        format!("N={n} max overlap unitarity defect"),
        worst(|r| r.unitarity),
        tol.unitarity,
    ));
    rep.push(Check::at_most(
        "zero coupling leaves the spectrum unchanged",
        worst(|r| r.identity),
        0.0,
    ));

    let fast_e: Vec<f64> = rows.iter().flat_map(|r| r.fast_e.iter().copied()).collect();
    let dense_e: Vec<f64> = rows.iter().flat_map(|r| r.dense_e.iter().copied()).collect();
    let fast_w: Vec<f64> = rows.iter().flat_map(|r| r.fast_w.iter().copied()).collect();
    let ke = ks_two_sample(&SampleSet::from_values(fast_e), &SampleSet::from_values(dense_e))?;
    let kw = ks_statistic(&SampleSet::from_values(fast_w), |x| {
        theory::modified_pt_cdf(x, 1.0, cfg.beta)
    })?;
    rep.note("tridiagonal sampler vs dense eigenvalues KS p", ke.p_value);
    rep.note("tridiagonal sampler weights vs Porter-Thomas KS p", kw.p_value);

    // Exact identities on the full-size realizations.
    let pool = ws.pool(cfg.seed, cfg.beta)?;
    let zf = sc.kappa * cfg.unit();
    let t_big = Instant::now();
    let resid = (0..pool.len())
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let g = pool.solve(i, 0.0)?;
            let m = pool.solve(i, zf)?;
            let zs: Vec<f64> = m.first.iter().map(|c| c.norm_sqr()).collect();
            let t = trace_identities(&g.energies, &m.energies, &zs, zf);
            Ok((t.relative_shift_sum(zf), t.relative_second_moment()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_big = cfg.n;
    rep.push(Check::at_most(
        format!("N={n_big} max relative shift-sum residual"),
        resid.iter().map(|r| r.0).fold(0.0, f64::max),
        tol.identity_relative,
    ));
    rep.push(Check::at_most(
        format!("N={n_big} max relative second-moment residual"),
        resid.iter().map(|r| r.1).fold(0.0, f64::max),
        tol.identity_relative,
    ));
    rep.timings.insert(format!("N={n} secular and dense seconds"), elapsed);
    rep.timings.insert(
        format!("N={n_big} coupled solves seconds"),
        t_big.elapsed().as_secs_f64(),
    );
    Ok(Outcome {
        report: rep,
        tables: Vec::new(),
    })
}

/// Nearest-neighbour spacings of unfolded bulk levels, collective state removed.
fn unfolded_spacings(spectra: &[Solved], kappa: f64, model: &Model) -> Vec<f64> {
    let n = model.n as f64;
    let (lo, hi) = (UNFOLD_KEEP.0 * n, UNFOLD_KEEP.1 * n);
    let mut out = Vec::new();
    for s in spectra {
        let mut e: &[f64] = &s.energies;
        match collective_side(kappa) {
            Exclude::Highest => e = &e[..e.len() - 1],
            Exclude::Lowest => e = &e[1..],
            Exclude::None => {}
        }
        let x: Vec<f64> = e
            .iter()
            .map(|&v| theory::wigner_staircase(v, model))
            .filter(|&u| u >= lo && u <= hi)
            .collect();
        out.extend(x.windows(2).map(|w| w[1] - w[0]));
    }
    out
}

fn spacing_kappas(cfg: &ExperimentConfig) -> Vec<f64> {
    if cfg.kappa.is_some() || cfg.coupling.is_some() {
        vec![cfg.single_kappa(0.0)]
    } else {
        vec![0.6, 1.5]
    }
}

/// Spacing statistics of coupled spectra against an independent uncoupled
/// reference from the other half of the realizations.
pub fn exp_spacing(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Outcome> {
    let mut rep = Report::new("exp_spacing", cfg);
    let tol = &cfg.tolerances;
    let m0 = Model::new(cfg.n, cfg.sigma, 0.0);
    let kappas = spacing_kappas(cfg);
    let mut tallies: BTreeMap<String, (KsTally, bool)> = BTreeMap::new();
    let mut tables = Vec::new();
    for run in 0..cfg.seeded_runs {
        let pool = ws.pool(cfg.run_seed(run), cfg.beta)?;
        let half = pool.len() / 2;
        let quarter = half / 2;
        if quarter == 0 {
            return Err(Error::InvalidParams("exp_spacing needs at least 4 realizations".into()));
        }
        let reference = pool.solve_range(0..half, 0.0)?;
        let ref_s = SampleSet::from_values(unfolded_spacings(&reference, 0.0, &m0));
        let a = SampleSet::from_values(unfolded_spacings(&reference[..quarter], 0.0, &m0));
        let b = SampleSet::from_values(unfolded_spacings(&reference[quarter..], 0.0, &m0));
        tallies
            .entry("kappa=0 split halves".into())
            .or_insert_with(|| (KsTally::default(), true))
            .0
            .add(ks_two_sample(&a, &b)?.p_value, tol.ks_p_value);
        for &k in &kappas {
            let coupled = pool.solve_range(half..pool.len(), k * cfg.unit())?;
            let s = SampleSet::from_values(unfolded_spacings(&coupled, k, &m0));
            let ks = ks_two_sample(&s, &ref_s)?;
            tallies
                .entry(format!("kappa={k} vs kappa=0"))
                .or_insert_with(|| (KsTally::default(), false))
                .0
                .add(ks.p_value, tol.ks_p_value);
            if run == 0 {
                let m = empirical_moment(&s, 1.0)?;
                rep.note(format!("kappa={k} mean unfolded spacing"), m.value);
                let h = histogram(&s, cfg.bins, Some((0.0, 4.0)))?;
                tables.push(histogram_table(format!("spacing_kappa{k}.csv"), &h));
            }
        }
        if run == 0 {
            let h = histogram(&ref_s, cfg.bins, Some((0.0, 4.0)))?;
            tables.push(histogram_table("spacing_reference.csv".into(), &h));
        }
    }
    push_tallies(&mut rep, tallies, cfg);
    Ok(Outcome { report: rep, tables })
}

/// Distribution of `N |Psi_2|^2` in coupled spectra against plain Porter-Thomas.
pub fn exp_other_components(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Outcome> {
    let mut rep = Report::new("exp_other_components", cfg);
    let tol = &cfg.tolerances;
    let kappas = spacing_kappas(cfg);
    let mut tallies: BTreeMap<String, (KsTally, bool)> = BTreeMap::new();
    let mut tables = Vec::new();
    let pt = |x: f64| theory::modified_pt_cdf(x, 1.0, cfg.beta);
    for run in 0..cfg.seeded_runs {
        let pool = ws.pool(cfg.run_seed(run), cfg.beta)?;
        let mut cases: Vec<(String, SampleSet, bool)> = Vec::new();
        for &k in &kappas {
            let solved = pool.solve_kappa(k)?;
            let mut v = Vec::new();
            for s in &solved {
                let mut w = s.second_widths();
                match collective_side(k) {
                    Exclude::Highest => {
                        w.pop();
                    }
                    Exclude::Lowest => {
                        w.remove(0);
                    }
                    Exclude::None => {}
                }
                v.extend(w);
            }
            cases.push((format!("kappa={k} component 2"), SampleSet::from_values(v), false));
        }
        let base = pool.solve_all(0.0)?;
        let v: Vec<f64> = perturbed(&base)
            .iter()
            .flat_map(|s| s.z.iter().map(|z| z * cfg.n as f64).collect::<Vec<_>>())
            .collect();
        cases.push(("kappa=0 component 1".into(), SampleSet::from_values(v), true));
        for (label, s, control) in cases {
            let ks = ks_statistic(&s, pt)?;
            tallies
                .entry(label.clone())
                .or_insert_with(|| (KsTally::default(), control))
                .0
                .add(ks.p_value, tol.ks_p_value);
            if run == 0 {
                let m = empirical_moment(&s, 1.0)?;
                rep.note(format!("{label} mean"), m.value);
                let h = histogram(&s, cfg.bins, None)?;
                let file = label.replace('=', "").replace(' ', "_");
                tables.push(histogram_table(format!("{file}.csv"), &h));
            }
        }
    }
    push_tallies(&mut rep, tallies, cfg);
    Ok(Outcome { report: rep, tables })
}
