//! Experiment drivers: ε-sweeps comparing approximations with reference
//! solutions, slope fits, and single runs of each solver.
//!
//! Drivers work in `f64`. Per-ε runs execute concurrently; results are
//! collected in configuration order so reports are byte-for-byte
//! reproducible.

pub mod config;
pub mod report;

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grenier::{
    assemble_supercritical, euler_residual, solve_corrector, solve_phase_amplitude_with, GrenierOptions, GrenierTrajectory, Variant,
};
use crate::nls::{solve_nls, NlsSolution};
use crate::problem::{AmplitudeFamily, Criticality, SemiclassicalProblem};
use crate::rays::{caustic_time, hamilton_jacobi_residual, integrate_flow, GradientRoute, Markers, DEFAULT_CAUSTIC_THRESHOLD};
use crate::spectral::{l2_linf_norm, lp_norm, sobolev_norm, ComplexField, Lp, RealField};
use crate::wkb::{assemble_regime, assemble_uk, critical_profiles, separation_profile, taylor_phase_coefficients};

pub use config::{ExperimentConfig, ExperimentKind, ProfileSpec, Scenario};
pub use report::{write_outputs, Check, ErrorRow, FieldDump, Report, RunPlan, SlopeFit, Table};

/// Least `C` in `N ≥ C·L/ε` accepted for runs whose solution oscillates at scale `ε`.
pub const MIN_OSCILLATION_DENSITY: f64 = 0.1;

/// Tolerance of the time-slope fit in the skew-free comparison.
pub const TIME_SLOPE_TOLERANCE: f64 = 0.3;

/// What a subcommand runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Job {
    Converge,
    Instability,
    NormGrowth,
    OdeWindow,
    Rays,
    Wkb,
    Grenier,
    Nls,
}

impl Job {
    pub fn name(self) -> &'static str {
        match self {
            Self::Converge => "converge",
            Self::Instability => "instability",
            Self::NormGrowth => "normgrowth",
            Self::OdeWindow => "odewindow",
            Self::Rays => "rays",
            Self::Wkb => "wkb",
            Self::Grenier => "grenier",
            Self::Nls => "nls",
        }
    }

    fn kind(self) -> ExperimentKind {
        match self {
            Self::Converge => ExperimentKind::Converge,
            Self::Instability => ExperimentKind::Instability,
            Self::NormGrowth => ExperimentKind::Normgrowth,
            Self::OdeWindow => ExperimentKind::Odewindow,
            _ => ExperimentKind::Single,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn hs(f: &ComplexField<f64>, s: f64) -> Result<f64> {
    sobolev_norm(f, s, false)
}

fn hs_real(f: &RealField<f64>, s: f64) -> Result<f64> {
    sobolev_norm(&f.to_complex(), s, false)
}

fn tagged(name: &str, key: &str, value: f64) -> String {
    format!("{name}@{key}={value}")
}

fn is_multiple(t: f64, dt: f64) -> bool {
    let n = (t / dt).round();
    n >= 1.0 && (n * dt - t).abs() <= 1e-9 * t
}

fn require_free_supercritical(cfg: &ExperimentConfig, what: &str) -> Result<()> {
    if cfg.regime()? != Criticality::Supercritical {
        return Err(cfg_err(format!("{what} runs at kappa = 0")));
    }
    if !cfg.potential.is_zero() || cfg.phase != config::PhaseConfig::Zero {
        return Err(cfg_err(format!("{what} needs V = 0 and a zero initial phase")));
    }
    if cfg.grid.oscillation_density < MIN_OSCILLATION_DENSITY {
        return Err(cfg_err(format!(
            "{what} resolves eps-oscillations: grid.oscillation_density must be at least {MIN_OSCILLATION_DENSITY}"
        )));
    }
    Ok(())
}

fn require_periodic(cfg: &ExperimentConfig) -> Result<()> {
    if !cfg.potential.is_bounded() {
        return Err(cfg_err("periodic solvers need a bounded periodic potential"));
    }
    if matches!(cfg.phase, config::PhaseConfig::Quadratic { .. }) {
        return Err(cfg_err("periodic solvers need a periodic initial phase"));
    }
    Ok(())
}

/// Full validation for `job`, run before anything is solved or written.
pub fn validate_for(cfg: &ExperimentConfig, job: Job) -> Result<()> {
    cfg.validate()?;
    if let Some(kind) = cfg.experiment {
        if kind != job.kind() {
            return Err(cfg_err(format!("config.experiment is {kind:?}, which the `{}` subcommand does not run", job.name())));
        }
    }
    match job {
        Job::Converge => {
            let scenario = cfg.scenario.ok_or_else(|| cfg_err("converge needs a scenario"))?;
            require_periodic(cfg)?;
            match scenario {
                Scenario::Supercritical | Scenario::Corrector | Scenario::SkewFree => {
                    let dt = cfg.time_step.transport;
                    if let Some(t) = cfg.times.iter().find(|t| !is_multiple(**t, dt)) {
                        return Err(cfg_err(format!("time {t} is not a multiple of the transport step {dt}")));
                    }
                    if scenario == Scenario::SkewFree && cfg.times.len() < 3 {
                        return Err(cfg_err("the skew-free comparison needs at least three times for its t-slope"));
                    }
                }
                Scenario::Critical | Scenario::Subcritical => {}
            }
        }
        Job::Instability => {
            require_free_supercritical(cfg, "instability")?;
            if cfg.b0.is_none() {
                return Err(cfg_err("instability needs a perturbation profile b0"));
            }
        }
        Job::NormGrowth => {
            require_free_supercritical(cfg, "normgrowth")?;
            let ng = &cfg.norm_growth;
            if !(ng.t > 0.0) || ng.orders.is_empty() || !(ng.max_spread >= 1.0) {
                return Err(cfg_err("normgrowth needs t > 0, at least one order and a spread bound >= 1"));
            }
            for q in &ng.exponents {
                flow_exponents(q.n, q.s, q.k).map_err(|e| cfg_err(e.to_string()))?;
            }
        }
        Job::OdeWindow => require_free_supercritical(cfg, "odewindow")?,
        Job::Rays => {}
        Job::Wkb => {
            if cfg.regime()? == Criticality::Supercritical {
                if !cfg.potential.is_zero() || cfg.phase != config::PhaseConfig::Zero {
                    return Err(cfg_err("the kappa = 0 WKB approximant needs V = 0 and a zero initial phase"));
                }
                if cfg.single.taylor_order == 0 || cfg.single.taylor_order > crate::wkb::MAX_TAYLOR_ORDER {
                    return Err(cfg_err("Taylor order out of range"));
                }
            }
        }
        Job::Grenier => {
            if cfg.regime()? != Criticality::Supercritical {
                return Err(cfg_err("the phase-amplitude systems run at kappa = 0"));
            }
            require_periodic(cfg)?;
            if !is_multiple(cfg.single.t_final, cfg.time_step.transport) {
                return Err(cfg_err("single.t_final must be a multiple of the transport step"));
            }
        }
        Job::Nls => require_periodic(cfg)?,
    }
    Ok(())
}

fn instability_time(cfg: &ExperimentConfig, eps: f64) -> (f64, f64) {
    let delta = eps.powf(cfg.instability.alpha);
    (delta, cfg.instability.c * eps / delta)
}

fn ode_times(cfg: &ExperimentConfig, eps: f64) -> Vec<f64> {
    cfg.ode_window.powers.iter().map(|p| eps.powf(*p)).collect()
}

/// Resolution and schedule of every per-ε run of `job`.
pub fn resolve_plan(cfg: &ExperimentConfig, job: Job) -> Result<Vec<RunPlan>> {
    validate_for(cfg, job)?;
    let single = matches!(job, Job::Rays | Job::Wkb | Job::Grenier | Job::Nls);
    let epsilons: Vec<f64> = if single { vec![cfg.epsilons[0]] } else { cfg.epsilons.clone() };
    Ok(epsilons
        .into_iter()
        .map(|eps| {
            let times = match job {
                Job::Converge | Job::Wkb => cfg.times.clone(),
                Job::Instability => vec![instability_time(cfg, eps).1],
                Job::NormGrowth => vec![cfg.norm_growth.t],
                Job::OdeWindow => ode_times(cfg, eps),
                Job::Rays | Job::Grenier | Job::Nls => vec![cfg.single.t_final],
            };
            RunPlan {
                epsilon: eps,
                grid: cfg.grid.spec_for(eps),
                nls_step: cfg.time_step.nls_step(eps),
                transport_step: cfg.time_step.transport,
                times,
            }
        })
        .collect())
}

/// Runs `job` and returns its report; artifacts are written separately.
pub fn run(cfg: &ExperimentConfig, job: Job) -> Result<Report> {
    match job {
        Job::Converge => run_convergence(cfg),
        Job::Instability => run_instability(cfg),
        Job::NormGrowth => run_norm_growth(cfg),
        Job::OdeWindow => run_ode_window(cfg),
        Job::Rays => run_rays(cfg),
        Job::Wkb => run_wkb(cfg),
        Job::Grenier => run_grenier(cfg),
        Job::Nls => run_nls(cfg),
    }
}

type Rows = Vec<(Option<f64>, String, f64)>;

enum Point {
    Rows(Rows),
}

fn collect_points(report: &mut Report, epsilons: &[f64], points: Vec<Result<Point>>) -> Result<Vec<f64>> {
    let mut resolved = Vec::new();
    for (&eps, p) in epsilons.iter().zip(points) {
        match p {
            Ok(Point::Rows(rows)) => {
                resolved.push(eps);
                for (s, metric, value) in rows {
                    report.row(eps, s, metric, value);
                }
            }
            Err(Error::UnderResolved { time, tail, tolerance }) => report.flags.push(format!(
                "eps = {eps}: under-resolved at t = {time} (tail {tail:e} > {tolerance:e}); excluded"
            )),
            Err(e) => return Err(e),
        }
    }
    Ok(resolved)
}

fn grenier_options() -> GrenierOptions<f64> {
    GrenierOptions::default()
}

fn state_at(traj: &GrenierTrajectory<f64>, t: f64) -> Result<&crate::grenier::GrenierState<f64>> {
    traj.at(t).ok_or_else(|| Error::TimeGridMismatch(format!("no stored state at t = {t}")))
}

fn grenier_point(cfg: &ExperimentConfig, scenario: Scenario, eps: f64) -> Result<Point> {
    let problem = cfg.problem(eps)?;
    let dt = cfg.time_step.transport;
    let t_final = *cfg.times.last().expect("validated");
    let full = solve_phase_amplitude_with(&problem, t_final, dt, Variant::Full, grenier_options())?;
    let mut rows = Rows::new();
    match scenario {
        Scenario::Supercritical => {
            let limit = solve_phase_amplitude_with(&problem, t_final, dt, Variant::Limit, grenier_options())?;
            for &t in &cfg.times {
                let (f, l) = (state_at(&full, t)?, state_at(&limit, t)?);
                let da = f.amplitude.sub(&l.amplitude)?;
                let dp = f.phase.sub(&l.phase)?;
                for &s in &cfg.sobolev {
                    rows.push((Some(s), tagged("amplitude", "t", t), hs(&da, s)?));
                    rows.push((Some(s), tagged("phase_over_t", "t", t), hs_real(&dp, s)? / t));
                }
            }
        }
        Scenario::Corrector => {
            let limit = solve_phase_amplitude_with(&problem, t_final, dt / 2.0, Variant::Limit, grenier_options())?;
            let a1 = match &problem.amplitude.a1 {
                Some(a1) => a1.clone(),
                None => ComplexField::zeros(problem.grid(), "a1"),
            };
            let corr = solve_corrector(&limit, &a1, dt)?;
            for &t in &cfg.times {
                let (f, l) = (state_at(&full, t)?, state_at(&limit, t)?);
                let c = corr.at(t).ok_or_else(|| Error::TimeGridMismatch(format!("no corrector at t = {t}")))?;
                let da = f.amplitude.sub(&l.amplitude)?;
                let dp = f.phase.sub(&l.phase)?;
                let ra = da.sub(&c.amplitude.scale(Complex::new(eps, 0.0)))?;
                let rp = dp.zip_with(&c.phase, "r", |x, y| x - eps * y)?;
                for &s in &cfg.sobolev {
                    rows.push((Some(s), tagged("corrected", "t", t), hs(&ra, s)? + hs_real(&rp, s)?));
                    rows.push((Some(s), tagged("leading", "t", t), hs(&da, s)? + hs_real(&dp, s)?));
                }
            }
        }
        Scenario::SkewFree => {
            let sf = solve_phase_amplitude_with(&problem, t_final, dt, Variant::SkewFree, grenier_options())?;
            for &t in &cfg.times {
                let gap = state_at(&full, t)?.phase.sub(&state_at(&sf, t)?.phase)?;
                for &s in &cfg.sobolev {
                    rows.push((Some(s), tagged("phase_gap", "t", t), hs_real(&gap, s)?));
                }
            }
        }
        Scenario::Critical | Scenario::Subcritical => unreachable!("handled by the NLS path"),
    }
    Ok(Point::Rows(rows))
}

/// Largest `‖φ¹‖_∞` over the corrector trajectory with `a₁ = 0`.
pub fn phase_shift_without_corrector(cfg: &ExperimentConfig, eps: f64) -> Result<f64> {
    let problem = cfg.problem(eps)?;
    let dt = cfg.time_step.transport;
    let t_final = *cfg.times.last().expect("validated");
    let limit = solve_phase_amplitude_with(&problem, t_final, dt / 2.0, Variant::Limit, grenier_options())?;
    let corr = solve_corrector(&limit, &ComplexField::zeros(problem.grid(), "a1"), dt)?;
    Ok(corr.states.iter().map(|s| s.phase.max_abs()).fold(0.0, f64::max))
}

fn nls_point(cfg: &ExperimentConfig, scenario: Scenario, eps: f64) -> Result<Point> {
    let problem = cfg.problem(eps)?;
    let regime = scenario.regime();
    let t_final = *cfg.times.last().expect("validated");
    let sol = solve_nls(&problem, t_final, cfg.time_step.nls_step(eps), &cfg.times)?;
    let bundle = integrate_flow(&problem, &Markers::from_grid(problem.grid()), t_final, cfg.time_step.transport)?;
    let a0 = &problem.amplitude.a0;
    let mut rows = Rows::new();
    for &t in &cfg.times {
        let u = sol.at(t).ok_or_else(|| Error::TimeGridMismatch(format!("no NLS state at t = {t}")))?;
        let (a, g, phi) = critical_profiles(&bundle, a0, t)?;
        let with_g = assemble_regime(&a, &g, &phi, eps, regime)?;
        let zero = RealField::zeros(a.grid(), "G");
        let free = assemble_regime(&a, &zero, &phi, eps, regime)?;
        let target = if regime == Criticality::Critical { &with_g } else { &free };
        let diff = u.sub(target)?;
        rows.push((None, tagged("error", "t", t), l2_linf_norm(&diff)));
        rows.push((None, tagged("error_l2", "t", t), lp_norm(&diff, Lp::L2)));
        rows.push((None, tagged("error_linf", "t", t), lp_norm(&diff, Lp::Inf)));
        if regime == Criticality::Subcritical {
            rows.push((None, tagged("modulation", "t", t), l2_linf_norm(&with_g.sub(&free)?)));
        }
    }
    rows.push((None, "mass_drift".into(), sol.mass_drift()));
    Ok(Point::Rows(rows))
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

fn strictly_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] > w[0])
}

fn mass_check(report: &mut Report, tol: f64) {
    let drifts: Vec<f64> = report.series("mass_drift", None).iter().map(|p| p.1).collect();
    let worst = drifts.iter().copied().fold(0.0, f64::max);
    report.check("mass_conservation", !drifts.is_empty() && worst <= tol, format!("worst relative drift {worst:e} (bound {tol:e})"));
}

/// ε-sweep of one approximation against its reference.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Report> {
    let plan = resolve_plan(cfg, Job::Converge)?;
    let scenario = cfg.scenario.expect("validated");
    let mut report = Report::new("converge", cfg, plan);
    let points: Vec<Result<Point>> = cfg
        .epsilons
        .par_iter()
        .map(|&eps| match scenario {
            Scenario::Critical | Scenario::Subcritical => nls_point(cfg, scenario, eps),
            _ => grenier_point(cfg, scenario, eps),
        })
        .collect();
    let resolved = collect_points(&mut report, &cfg.epsilons, points)?;
    let expected = cfg.expected_slope();
    let tol = cfg.verdict.slope_tolerance;
    let min = cfg.verdict.min_points;
    match scenario {
        Scenario::Supercritical | Scenario::Corrector | Scenario::SkewFree => {
            let names: &[&str] = match scenario {
                Scenario::Supercritical => &["amplitude", "phase_over_t"],
                Scenario::Corrector => &["corrected", "leading"],
                _ => &["phase_gap"],
            };
            for &t in &cfg.times {
                for &s in &cfg.sobolev {
                    for (i, name) in names.iter().enumerate() {
                        let exp = if scenario == Scenario::Corrector && i == 1 { None } else { expected };
                        report.fit_eps(&tagged(name, "t", t), Some(s), exp, tol, min);
                    }
                }
            }
            if scenario == Scenario::SkewFree {
                for &eps in &resolved {
                    for &s in &cfg.sobolev {
                        let pts: Vec<(f64, f64)> = cfg
                            .times
                            .iter()
                            .map(|&t| {
                                let v = report
                                    .series(&tagged("phase_gap", "t", t), Some(s))
                                    .into_iter()
                                    .find(|p| p.0 == eps)
                                    .map_or(f64::NAN, |p| p.1);
                                (t, v)
                            })
                            .collect();
                        let f = report::slope_fit(&tagged("phase_gap", "eps", eps), Some(s), "time", &pts, Some(2.0), TIME_SLOPE_TOLERANCE, 3);
                        report.fits.push(f);
                    }
                }
            }
            if scenario == Scenario::Corrector && cfg.a0.is_real() {
                let shift = phase_shift_without_corrector(cfg, cfg.epsilons[0])?;
                report.check("phase_shift_real_data", shift <= 1e-10, format!("max |phi1| with a1 = 0: {shift:e}"));
            }
        }
        Scenario::Critical | Scenario::Subcritical => {
            let a0norm = l2_linf_norm(&cfg.a0.sample(&cfg.grid.grid_for(cfg.epsilons[0])?, "a0")?);
            for &t in &cfg.times {
                let name = tagged("error", "t", t);
                report.fit_eps(&name, None, expected, tol, min);
                let errs: Vec<f64> = report.series(&name, None).iter().map(|p| p.1).collect();
                report.check(
                    format!("monotone_decrease@t={t}"),
                    errs.len() >= 2 && strictly_decreasing(&errs),
                    format!("errors {errs:?}"),
                );
                if scenario == Scenario::Subcritical {
                    let m: Vec<f64> = report.series(&tagged("modulation", "t", t), None).iter().map(|p| p.1).collect();
                    let ok = !m.is_empty() && m.iter().zip(&errs).all(|(a, b)| a <= b);
                    report.check(format!("modulation_below_error@t={t}"), ok, format!("modulation {m:?}"));
                }
            }
            let last = report.series(&tagged("error", "t", *cfg.times.last().expect("validated")), None);
            let bound = cfg.verdict.threshold_fraction * a0norm;
            let ok = resolved.last() == cfg.epsilons.last() && last.last().is_some_and(|p| p.1 < bound);
            report.check(
                "final_error_threshold",
                ok,
                format!("error {:?} at smallest eps, bound {bound:e}", last.last().map(|p| p.1)),
            );
            mass_check(&mut report, 1e-10);
        }
    }
    if resolved.len() < cfg.verdict.min_points && expected.is_some() {
        report.flags.push(format!("only {} resolved eps values; slopes need {}", resolved.len(), cfg.verdict.min_points));
    }
    Ok(report.finish())
}

/// One instability measurement.
#[derive(Clone, Debug, Serialize)]
pub struct InstabilityPoint {
    pub epsilon: f64,
    pub delta: f64,
    pub time: f64,
    /// `‖u - v‖_{L²}` at `time`.
    pub separation: f64,
    /// Largest separation over the sampled times in `(0, time]`.
    pub sup_separation: f64,
    /// `‖u₁ - v₁‖_{L²}` from the first-order profiles.
    pub prediction: f64,
    /// `(s, ‖a₀ - ã₀‖_{H^s})`.
    pub distances: Vec<(f64, f64)>,
    pub mass_drift: f64,
}

/// Solves the NLS for `a₀` and `a₀ + δ b₀` up to `t` and measures their separation.
pub fn instability_point(
    problem: &SemiclassicalProblem<f64>,
    b0: &ComplexField<f64>,
    delta: f64,
    t: f64,
    samples: usize,
    dt: f64,
    indices: &[f64],
) -> Result<InstabilityPoint> {
    let a0 = problem.initial_amplitude()?;
    let tilde = a0.zip_with(b0, "a0_tilde", |a, b| a + b * delta)?;
    let perturbed = SemiclassicalProblem::new(
        problem.eps,
        problem.regime,
        problem.potential.clone(),
        problem.phase.clone(),
        AmplitudeFamily::fixed(tilde.clone()),
    )?;
    let times: Vec<f64> = (1..=samples).map(|j| t * j as f64 / samples as f64).collect();
    let (u, v) = rayon::join(|| solve_nls(problem, t, dt, &times), || solve_nls(&perturbed, t, dt, &times));
    let (u, v) = (u?, v?);
    let seps: Vec<f64> = u
        .fields
        .iter()
        .zip(&v.fields)
        .map(|(a, b)| a.sub(b).map(|d| lp_norm(&d, Lp::L2)))
        .collect::<Result<_>>()?;
    let separation = *seps.last().expect("at least one stored time");
    let sup_separation = seps.iter().copied().fold(0.0, f64::max);
    let prediction = lp_norm(&separation_profile(&a0, &tilde, delta, problem.eps, t)?.to_complex(), Lp::L2);
    let diff = a0.sub(&tilde)?;
    let distances = indices.iter().map(|&s| hs(&diff, s).map(|d| (s, d))).collect::<Result<_>>()?;
    Ok(InstabilityPoint {
        epsilon: problem.eps,
        delta,
        time: t,
        separation,
        sup_separation,
        prediction,
        distances,
        mass_drift: u.mass_drift().max(v.mass_drift()),
    })
}

/// Separation of nearby data at `t = cε/δ`, `δ = ε^α`.
pub fn run_instability(cfg: &ExperimentConfig) -> Result<Report> {
    let plan = resolve_plan(cfg, Job::Instability)?;
    let inst = &cfg.instability;
    let mut report = Report::new("instability", cfg, plan);
    let mut indices = vec![0.0, 1.0, 2.0];
    if !indices.contains(&inst.ratio_index) {
        indices.push(inst.ratio_index);
    }
    let points: Vec<Result<InstabilityPoint>> = cfg
        .epsilons
        .par_iter()
        .map(|&eps| {
            let problem = cfg.problem(eps)?;
            let b0 = cfg.b0.as_ref().expect("validated").sample(problem.grid(), "b0")?;
            let (delta, t) = instability_time(cfg, eps);
            instability_point(&problem, &b0, delta, t, inst.samples, cfg.time_step.nls_step(eps), &indices)
        })
        .collect();
    let mut kept = Vec::new();
    for (&eps, p) in cfg.epsilons.iter().zip(points) {
        match p {
            Ok(p) => kept.push(p),
            Err(Error::UnderResolved { time, tail, .. }) => {
                report.flags.push(format!("eps = {eps}: under-resolved at t = {time} (tail {tail:e}); excluded"))
            }
            Err(e) => return Err(e),
        }
    }
    let window_exp = 1.0 / (2 * inst.taylor_order + 1) as f64;
    let mut agreement_ok = true;
    let mut agreement_detail = Vec::new();
    for p in &kept {
        let eps = p.epsilon;
        report.row(eps, None, "delta", p.delta);
        report.row(eps, None, "time", p.time);
        report.row(eps, None, "separation_l2", p.separation);
        report.row(eps, None, "separation_sup", p.sup_separation);
        report.row(eps, None, "prediction_l2", p.prediction);
        for &(s, d) in &p.distances {
            report.row(eps, Some(s), "initial_distance", d);
        }
        let ratio_den = p.distances.iter().find(|(s, _)| *s == inst.ratio_index).map_or(f64::NAN, |d| d.1);
        report.row(eps, Some(inst.ratio_index), "blowup_ratio", p.sup_separation / ratio_den);
        report.row(eps, None, "mass_drift", p.mass_drift);
        let gap = (p.separation - p.prediction).abs() / p.prediction;
        report.row(eps, None, "prediction_gap", gap);
        let outside = p.time >= eps.powf(window_exp);
        if outside {
            report.flags.push(format!(
                "eps = {eps}: t = {} is outside the validated window t < eps^{window_exp:.4}",
                p.time
            ));
        } else {
            agreement_ok &= gap <= inst.agreement;
            agreement_detail.push(format!("{eps}: {gap:.3}"));
        }
    }
    let seps: Vec<f64> = kept.iter().map(|p| p.separation).collect();
    let base = kept.first().filter(|p| p.epsilon == cfg.epsilons[0]).map(|p| p.separation);
    let floor = base.map_or(f64::INFINITY, |b| inst.lower_bound_fraction * b);
    report.check(
        "separation_lower_bound",
        base.is_some() && kept.len() == cfg.epsilons.len() && seps.iter().all(|s| *s >= floor),
        format!("separations {seps:?}, floor {floor:e} from the largest eps"),
    );
    let ratios: Vec<f64> = report.series("blowup_ratio", Some(inst.ratio_index)).iter().map(|p| p.1).collect();
    report.check("ratio_increasing", ratios.len() >= 2 && strictly_increasing(&ratios), format!("ratios {ratios:?}"));
    report.check(
        "prediction_agreement",
        agreement_ok && !agreement_detail.is_empty(),
        format!("relative gaps inside the window: {}", agreement_detail.join(", ")),
    );
    report.fit_eps("initial_distance", Some(1.0), Some(inst.alpha), inst.distance_slope_tolerance, 2);
    mass_check(&mut report, 1e-10);
    Ok(report.finish())
}

/// Exponent of `λ` in the Sobolev norm of the rescaled solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowExponents {
    pub exponent: f64,
    pub diverges: bool,
    pub k_lower: f64,
}

/// `e = s - k - k(n/2 - 1 - s)`, `k_lower = s/(n/2 - s)`; divergence when
/// `e < 0` and `k_lower < k ≤ s`.
pub fn flow_exponents(n: u32, s: f64, k: f64) -> Result<FlowExponents> {
    let half = n as f64 / 2.0;
    if n < 3 {
        return Err(Error::invalid(format!("dimension must be at least 3, got {n}")));
    }
    if !(s > 0.0 && s < half - 1.0) {
        return Err(Error::invalid(format!("s must lie in (0, {}), got {s}", half - 1.0)));
    }
    if !k.is_finite() {
        return Err(Error::invalid("k must be finite"));
    }
    // s - k - k(n/2 - 1 - s) = s - k(n/2 - s); the boundary k = k_lower is
    // the root, returned exactly.
    let k_lower = s / (half - s);
    let exponent = if k == k_lower { 0.0 } else { s - k * (half - s) };
    Ok(FlowExponents { exponent, diverges: exponent < 0.0 && k <= s && k > k_lower, k_lower })
}

/// Compensated `Ḣ^m` norms `ε^m ‖ψ^ε(t)‖_{Ḣ^m}` across the ε grid.
pub fn run_norm_growth(cfg: &ExperimentConfig) -> Result<Report> {
    let plan = resolve_plan(cfg, Job::NormGrowth)?;
    let ng = &cfg.norm_growth;
    let mut report = Report::new("normgrowth", cfg, plan);
    let points: Vec<Result<Point>> = cfg
        .epsilons
        .par_iter()
        .map(|&eps| {
            let problem = cfg.problem(eps)?;
            let sol = solve_nls(&problem, ng.t, cfg.time_step.nls_step(eps), &[0.0])?;
            let (u0, ut) = (&sol.fields[0], sol.last());
            let mut rows = Rows::new();
            for &m in &ng.orders {
                let m = m as f64;
                rows.push((Some(m), "initial_norm".into(), sobolev_norm(u0, m, true)?));
                rows.push((Some(m), "compensated_ratio".into(), eps.powf(m) * sobolev_norm(ut, m, true)?));
            }
            rows.push((Some(0.0), "l2_norm".into(), lp_norm(ut, Lp::L2)));
            rows.push((None, "mass_drift".into(), sol.mass_drift()));
            Ok(Point::Rows(rows))
        })
        .collect();
    let resolved = collect_points(&mut report, &cfg.epsilons, points)?;
    for &m in &ng.orders {
        let m = m as f64;
        let r: Vec<f64> = report.series("compensated_ratio", Some(m)).iter().map(|p| p.1).collect();
        let (lo, hi) = r.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        let spread = hi / lo;
        report.check(
            format!("ratio_spread@m={m}"),
            resolved.len() == cfg.epsilons.len() && lo > 0.0 && spread <= ng.max_spread,
            format!("max/min = {spread:.4} over {} eps values (bound {})", r.len(), ng.max_spread),
        );
        let init: Vec<f64> = report.series("initial_norm", Some(m)).iter().map(|p| p.1).collect();
        let (ilo, ihi) = init.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        report.check(
            format!("initial_norm_eps_independent@m={m}"),
            ihi - ilo <= 1e-10 * ihi.max(1.0),
            format!("range [{ilo:e}, {ihi:e}]"),
        );
    }
    mass_check(&mut report, 1e-10);
    let exps: Vec<serde_json::Value> = ng
        .exponents
        .iter()
        .map(|q| {
            let e = flow_exponents(q.n, q.s, q.k).expect("validated");
            serde_json::json!({"n": q.n, "s": q.s, "k": q.k, "exponent": e.exponent, "diverges": e.diverges, "k_lower": e.k_lower})
        })
        .collect();
    if !exps.is_empty() {
        report.extra = Some(serde_json::json!({ "flow_exponents": exps }));
    }
    Ok(report.finish())
}

/// Error of the ODE profile `u₁` along `t = ε^p`.
pub fn run_ode_window(cfg: &ExperimentConfig) -> Result<Report> {
    let plan = resolve_plan(cfg, Job::OdeWindow)?;
    let powers = cfg.ode_window.powers.clone();
    let mut report = Report::new("odewindow", cfg, plan);
    let points: Vec<Result<Point>> = cfg
        .epsilons
        .par_iter()
        .map(|&eps| {
            let problem = cfg.problem(eps)?;
            let times = ode_times(cfg, eps);
            let t_final = *times.last().expect("validated");
            let sol = solve_nls(&problem, t_final, cfg.time_step.nls_step(eps), &times)?;
            let a = problem.initial_amplitude()?;
            let coeffs = taylor_phase_coefficients(&a, 1)?;
            let mut rows = Rows::new();
            for (p, &t) in powers.iter().zip(&times) {
                let u = sol.at(t).ok_or_else(|| Error::TimeGridMismatch(format!("no NLS state at t = {t}")))?;
                let diff = u.sub(&assemble_uk(&a, &coeffs, eps, t)?)?;
                rows.push((None, tagged("error_l2", "p", *p), lp_norm(&diff, Lp::L2)));
                rows.push((None, tagged("error_linf", "p", *p), lp_norm(&diff, Lp::Inf)));
            }
            rows.push((None, "mass_drift".into(), sol.mass_drift()));
            Ok(Point::Rows(rows))
        })
        .collect();
    let resolved = collect_points(&mut report, &cfg.epsilons, points)?;
    for &eps in &resolved {
        let errs: Vec<f64> = powers
            .iter()
            .map(|p| {
                report
                    .series(&tagged("error_l2", "p", *p), None)
                    .into_iter()
                    .find(|q| q.0 == eps)
                    .map_or(f64::NAN, |q| q.1)
            })
            .collect();
        report.check(format!("error_grows@eps={eps}"), strictly_increasing(&errs), format!("L2 errors {errs:?}"));
    }
    if resolved.len() < cfg.epsilons.len() {
        report.check("all_resolved", false, "some eps values were under-resolved");
    }
    mass_check(&mut report, 1e-10);
    Ok(report.finish())
}

fn single_problem(cfg: &ExperimentConfig) -> Result<(f64, SemiclassicalProblem<f64>)> {
    let eps = cfg.epsilons[0];
    Ok((eps, cfg.problem(eps)?))
}

/// Ray bundle, caustic time and eikonal residual.
pub fn run_rays(cfg: &ExperimentConfig) -> Result<Report> {
    let plan = resolve_plan(cfg, Job::Rays)?;
    let (eps, problem) = single_problem(cfg)?;
    let mut report = Report::new("rays", cfg, plan);
    let t_final = cfg.single.t_final;
    let dt = cfg.time_step.transport;
    let bundle = integrate_flow(&problem, &Markers::from_grid(problem.grid()), t_final, dt)?;
    let caustic = caustic_time(&bundle, DEFAULT_CAUSTIC_THRESHOLD)?;
    report.row(eps, None, "caustic_time", caustic.unwrap_or(f64::INFINITY));
    let horizon = caustic.unwrap_or(t_final).min(t_final);
    let probe = ((horizon / 2.0) / dt).round() * dt;
    if probe >= 2.0 * dt * 4.0 {
        let r = hamilton_jacobi_residual(&bundle, probe, problem.grid(), 2.0 * dt, GradientRoute::RayMomentum)?;
        report.row(eps, None, tagged("eikonal_residual", "t", probe), r);
        report.check("eikonal_residual", r <= 1e-6, format!("sup residual {r:e} at t = {probe}"));
    } else {
        report.flags.push("horizon too short for an eikonal residual probe".into());
    }
    let mut buf = Vec::new();
    bundle.write_csv(&mut buf, cfg.single.csv_stride)?;
    let text = String::from_utf8(buf).map_err(|e| Error::invalid(e.to_string()))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap_or_default().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap_or(f64::NAN)).collect())
        .collect();
    report.tables.push(Table { name: "rays".into(), header, rows });
    Ok(report.finish())
}

/// WKB approximant at the configured times.
pub fn run_wkb(cfg: &ExperimentConfig) -> Result<Report> {
    let plan = resolve_plan(cfg, Job::Wkb)?;
    let (eps, problem) = single_problem(cfg)?;
    let mut report = Report::new("wkb", cfg, plan);
    let regime = problem.regime;
    let t_final = *cfg.times.last().expect("validated");
    if regime == Criticality::Supercritical {
        let a = problem.initial_amplitude()?;
        let coeffs = taylor_phase_coefficients(&a, cfg.single.taylor_order)?;
        for (i, &t) in cfg.times.iter().enumerate() {
            let u = assemble_uk(&a, &coeffs, eps, t)?;
            report.row(eps, None, tagged("l2_linf", "t", t), l2_linf_norm(&u));
            if cfg.output.dump_fields {
                report.dumps.push(FieldDump::complex(format!("u_approx_t{i}"), &u, eps, t));
            }
        }
        for j in 1..=coeffs.order() {
            report.row(eps, Some(j as f64), "taylor_phase_sup", coeffs.phase(j).max_abs());
        }
    } else {
        let bundle = integrate_flow(&problem, &Markers::from_grid(problem.grid()), t_final, cfg.time_step.transport)?;
        if let Some(h) = bundle.caustic_horizon() {
            report.row(eps, None, "caustic_time", h);
        }
        for (i, &t) in cfg.times.iter().enumerate() {
            let w = crate::wkb::build_approximant(&bundle, &problem.amplitude.a0, eps, regime, t)?;
            let u = w.assemble()?;
            report.row(eps, None, tagged("l2_linf", "t", t), l2_linf_norm(&u));
            if let Some(g) = &w.modulation {
                report.row(eps, None, tagged("modulation_sup", "t", t), g.max_abs());
            }
            if cfg.output.dump_fields {
                report.dumps.push(FieldDump::complex(format!("u_approx_t{i}"), &u, eps, t));
                report.dumps.push(FieldDump::complex(format!("amplitude_t{i}"), &w.amplitude, eps, t));
                report.dumps.push(FieldDump::real(format!("phase_t{i}"), &w.fast_phase, eps, t));
            }
        }
    }
    Ok(report.finish())
}

/// One phase–amplitude trajectory with per-node diagnostics.
pub fn run_grenier(cfg: &ExperimentConfig) -> Result<Report> {
    let plan = resolve_plan(cfg, Job::Grenier)?;
    let (eps, problem) = single_problem(cfg)?;
    let mut report = Report::new("grenier", cfg, plan);
    let variant = cfg.single.variant;
    let opts = GrenierOptions { output_stride: cfg.single.csv_stride, ..GrenierOptions::default() };
    let traj = solve_phase_amplitude_with(&problem, cfg.single.t_final, cfg.time_step.transport, variant, opts)?;
    let dv = problem.grid().cell_volume();
    let mass = |s: &crate::grenier::GrenierState<f64>| s.amplitude.values().iter().map(|z| z.norm_sqr()).sum::<f64>() * dv;
    let m0 = mass(&traj.states[0]);
    let rows: Vec<Vec<f64>> = traj
        .states
        .iter()
        .map(|s| vec![s.t, mass(s), lp_norm(&s.amplitude, Lp::Inf), s.phase.max_abs(), s.velocity[0].max_abs()])
        .collect();
    let drift = rows.iter().map(|r| (r[1] - m0).abs() / m0.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
    report.tables.push(Table {
        name: "trajectory".into(),
        header: ["t", "mass", "amplitude_sup", "phase_sup", "velocity_sup"].map(String::from).to_vec(),
        rows,
    });
    report.row(eps, None, "mass_drift", drift);
    report.check("mass_conservation", drift <= 1e-8, format!("relative drift {drift:e}"));
    if variant != Variant::Full && traj.states.len() >= 3 {
        report.row(eps, None, "euler_residual", euler_residual(&traj)?);
    }
    let last = traj.last();
    let u = assemble_supercritical(last, eps, None)?;
    report.row(eps, None, "wkb_l2_linf", l2_linf_norm(&u));
    if cfg.output.dump_fields {
        report.dumps.push(FieldDump::complex("amplitude", &last.amplitude, eps, last.t));
        report.dumps.push(FieldDump::real("phase", &last.phase, eps, last.t));
    }
    Ok(report.finish())
}

/// One reference NLS run with conservation diagnostics.
pub fn run_nls(cfg: &ExperimentConfig) -> Result<Report> {
    let plan = resolve_plan(cfg, Job::Nls)?;
    let (eps, problem) = single_problem(cfg)?;
    let mut report = Report::new("nls", cfg, plan);
    let t_final = cfg.single.t_final;
    let outputs: Vec<f64> = cfg.times.iter().copied().filter(|t| *t <= t_final).collect();
    let sol: NlsSolution<f64> = solve_nls(&problem, t_final, cfg.time_step.nls_step(eps), &outputs)?;
    let rows = sol.times.iter().zip(&sol.diagnostics).map(|(t, d)| vec![*t, d.mass, d.energy]).collect();
    report.tables.push(Table { name: "diagnostics".into(), header: ["t", "mass", "energy"].map(String::from).to_vec(), rows });
    report.row(eps, None, "mass_drift", sol.mass_drift());
    report.row(eps, None, "energy_drift", sol.energy_drift());
    report.check("mass_conservation", sol.mass_drift() <= 1e-10, format!("{:e}", sol.mass_drift()));
    if t_final <= 1.0 {
        report.check("energy_drift", sol.energy_drift() <= 1e-6, format!("{:e}", sol.energy_drift()));
    }
    if cfg.output.dump_fields {
        for (i, (t, u)) in sol.times.iter().zip(&sol.fields).enumerate() {
            report.dumps.push(FieldDump::complex(format!("u_t{i}"), u, eps, *t));
        }
    }
    Ok(report.finish())
}
