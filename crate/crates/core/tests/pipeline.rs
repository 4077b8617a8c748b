use num_complex::Complex;

use wkb_nls::experiments::report::read_dump;
use wkb_nls::experiments::{resolve_plan, run, write_outputs, ExperimentConfig, Job};
use wkb_nls::nls::solve_nls;
use wkb_nls::rays::{integrate_flow, Markers};
use wkb_nls::spectral::{l2_linf_norm, lp_norm};
use wkb_nls::wkb::build_approximant;
use wkb_nls::{
    AmplitudeFamily, CosineMode, Criticality, Field, Field32, Grid, Grid32, InitialPhaseSpec, Lp, PotentialSpec, Problem, SemiclassicalProblem,
};

fn lattice() -> PotentialSpec<f64> {
    PotentialSpec::Periodic { modes: vec![CosineMode { amplitude: 0.5, wavevector: [std::f64::consts::PI / 4.0, 0.0], phase: 0.0 }] }
}

#[test]
fn single_precision_tracks_double() {
    let g64 = Grid::new_1d(32.0, 256).unwrap();
    let g32 = Grid32::new_1d(32.0, 256).unwrap();
    let a64 = Field::from_fn(&g64, "a0", |x| Complex::new((-x[0] * x[0]).exp(), 0.0)).unwrap();
    let a32 = Field32::from_fn(&g32, "a0", |x| Complex::new((-x[0] * x[0]).exp(), 0.0)).unwrap();
    let p64 = Problem::free(0.2, Criticality::Critical, a64).unwrap();
    let p32 = SemiclassicalProblem::free(0.2f32, Criticality::Critical, a32).unwrap();
    let u64 = solve_nls(&p64, 0.2, 2e-3, &[]).unwrap();
    let u32 = solve_nls(&p32, 0.2f32, 2e-3, &[]).unwrap();
    let worst = u64
        .last()
        .values()
        .iter()
        .zip(u32.last().values())
        .map(|(a, b)| (a - Complex::new(b.re as f64, b.im as f64)).norm())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "f32 vs f64: {worst:e}");
    assert!(u32.mass_drift() < 1e-4);

    let m = Markers::<f32>::uniform_1d(-2.0, 2.0, 9).unwrap();
    let b = integrate_flow(&p32, &m, 1.0, 1e-2).unwrap();
    assert_eq!(b.caustic_horizon(), None);
}

#[test]
fn critical_wkb_with_lattice_potential_converges() {
    let t = 0.5;
    let mut errors = Vec::new();
    for eps in [0.1, 0.05, 0.025] {
        let g = Grid::new_1d(32.0, 1024).unwrap();
        let a0 = Field::from_fn(&g, "a0", |x| Complex::new((-x[0] * x[0]).exp(), 0.0)).unwrap();
        let p = Problem::new(eps, Criticality::Critical, lattice(), InitialPhaseSpec::Zero, AmplitudeFamily::fixed(a0.clone())).unwrap();
        let u = solve_nls(&p, t, eps / 50.0, &[]).unwrap();
        let b = integrate_flow(&p, &Markers::from_grid(&g), t, 1e-3).unwrap();
        let w = build_approximant(&b, &a0, eps, Criticality::Critical, t).unwrap();
        errors.push(l2_linf_norm(&u.last().sub(&w.assemble().unwrap()).unwrap()));
    }
    assert!(errors.windows(2).all(|w| w[1] < 0.7 * w[0]), "{errors:?}");
    assert!(errors[2] < 0.05, "{errors:?}");
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
            "experiment": "single",
            "kappa": 0,
            "epsilons": [0.1],
            "grid": {"lengths": [32], "points": [256]},
            "a0": {"kind": "gaussian"},
            "times": [0.05, 0.1],
            "single": {"t_final": 0.1},
            "output": {"dump_fields": true}
        }"#,
    )
    .unwrap()
}

#[test]
fn outputs_round_trip_and_are_deterministic() {
    let cfg = small_config();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let report = run(&cfg, Job::Nls).unwrap();
    assert!(report.passed);
    write_outputs(&report, dir_a.path()).unwrap();
    write_outputs(&run(&cfg, Job::Nls).unwrap(), dir_b.path()).unwrap();
    for name in ["report.json", "errors.csv", "diagnostics.csv", "u_t1.f64", "u_t1.json"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let csv = std::fs::read_to_string(dir_a.path().join("errors.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epsilon,s,metric,value"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir_a.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["epsilons"][0], 0.1);
    assert_eq!(json["passed"], true);

    let dumped = read_dump(&dir_a.path().join("u_t1.f64")).unwrap();
    let p = cfg.problem(0.1).unwrap();
    let u = solve_nls(&p, 0.1, cfg.time_step.nls_step(0.1), &[0.05]).unwrap();
    let direct = Field::new(p.grid(), dumped, "u").unwrap();
    assert!(lp_norm(&direct.sub(u.last()).unwrap(), Lp::Inf) == 0.0);
    let sidecar: serde_json::Value = serde_json::from_slice(&std::fs::read(dir_a.path().join("u_t1.json")).unwrap()).unwrap();
    assert_eq!(sidecar["time"], 0.1);
}

#[test]
fn plans_reject_mismatched_jobs() {
    let cfg = small_config();
    assert!(resolve_plan(&cfg, Job::Nls).is_ok());
    assert!(resolve_plan(&cfg, Job::Converge).is_err());
    let mut c = cfg.clone();
    c.experiment = None;
    // V = 0 and a zero phase, but no b0 and no resolution rule
    assert!(resolve_plan(&c, Job::Instability).is_err());
    c.b0 = c.a0.clone().into();
    c.grid.oscillation_density = 0.25;
    assert!(resolve_plan(&c, Job::Instability).is_ok());
    c.kappa = 1.0;
    assert!(resolve_plan(&c, Job::Grenier).is_err());
}
