use std::sync::Arc;

use multishape::config::{self, ExperimentConfig};
use multishape::experiment::{self, RunPlan};
use multishape::fem::VectorField;
use multishape::optimizer::{self, ArmijoConfig, CoefficientModel, OptState, Problem, StepSchedule};
use multishape::physics::CoefficientField;

const SMALL: &str = "\
[experiment]
kind = deterministic
method = armijo
iterations = 6
seed = 5
snapshots = 0

[mesh]
resolution = 17
target_resolution = 21
curve_samples = 256
smoothing_sweeps = 2

[physics]
g = 1000.0
nu = 1e-3
kappa = 1000.0, 7.5

[deformation]
lambda = 0.0
mu_min = 10.0
mu_max = 25.0
rtol = 1e-10
gradient_scale = 300.0

[armijo]
alpha_hat = 0.0175
sigma = 1e-4
rho = 0.9
max_backtracks = 50
alpha_scaling = true

[schedule]
kind = constant
c = 0.01
warm_iters = 0
batch = 3

[random_field]
correlation_length = 0.5
terms = 6
mean = 1000.0, 7.5
half_width = 50.0, 2.5

[target.1]
type = ellipse
center = 0.5, 0.5
semi_axes = 0.2, 0.12
angle_deg = 30.0

[initial.1]
type = circle
center = 0.45, 0.47
radius = 0.13
";

fn setup() -> (ExperimentConfig, Problem) {
    let cfg = config::parse_config(SMALL).unwrap();
    let problem = Problem {
        target: Arc::new(experiment::build_target(&cfg).unwrap()),
        g: cfg.g,
        nu: cfg.nu.clone(),
        deformation: cfg.deformation,
    };
    (cfg, problem)
}

fn kappa(cfg: &ExperimentConfig) -> CoefficientField {
    CoefficientField::PiecewiseConstant(cfg.kappa.clone().unwrap())
}

#[test]
fn armijo_run_decreases_the_objective() {
    let (cfg, problem) = setup();
    let mesh = experiment::build_initial_mesh(&cfg).unwrap();
    let state = experiment::run_plan(&cfg, &problem, &RunPlan::Armijo(kappa(&cfg)), mesh, None).unwrap();
    assert_eq!(state.log.len(), 7);
    for w in state.log.windows(2) {
        assert!(w[1].objective <= w[0].objective, "{} -> {}", w[0].objective, w[1].objective);
        assert!(w[0].step > 0.0);
    }
    assert!(state.log[6].objective < state.log[0].objective);
    assert_eq!(state.log[6].step, 0.0);
    assert!(state.log.iter().all(|r| r.min_quality > 0.0 && r.seed == 5));
    let row = state.log[0];
    let parts = row.tracking + row.perimeter;
    assert!((row.objective - parts).abs() <= 1e-12 * row.objective);
}

#[test]
fn armijo_steps_satisfy_sufficient_decrease() {
    let (cfg, problem) = setup();
    let armijo: ArmijoConfig = cfg.armijo.unwrap();
    let mut state = OptState::new(experiment::build_initial_mesh(&cfg).unwrap(), 0);
    for _ in 0..3 {
        optimizer::armijo_descent_step(&mut state, &problem, &kappa(&cfg), &armijo).unwrap();
    }
    optimizer::evaluate_iterate(&mut state, &problem, &kappa(&cfg)).unwrap();
    for w in state.log.windows(2) {
        let bound = w[0].objective - armijo.sigma * w[0].step * w[0].grad_norm * w[0].grad_norm;
        assert!(w[1].objective <= bound + 1e-12 * w[0].objective);
        assert!(w[0].step > 0.0);
    }
}

#[test]
fn zero_deformation_leaves_the_mesh_unchanged() {
    let (cfg, _) = setup();
    let mesh = experiment::build_initial_mesh(&cfg).unwrap();
    let zero = VectorField::zeros(mesh.n_nodes());
    for t in [0.0, 0.5, 10.0] {
        assert_eq!(mesh.deform(&zero, t), mesh);
    }
}

#[test]
fn stochastic_runs_are_reproducible_per_seed() {
    let (mut cfg, problem) = setup();
    cfg.iterations = 3;
    let spec = Arc::new(cfg.random_field.as_ref().unwrap().kl_spec().unwrap());
    let plan = RunPlan::Sampled(CoefficientModel::Random(spec));
    let mesh = experiment::build_initial_mesh(&cfg).unwrap();
    let a = experiment::run_plan(&cfg, &problem, &plan, mesh.clone(), None).unwrap();
    let b = experiment::run_plan(&cfg, &problem, &plan, mesh.clone(), None).unwrap();
    assert_eq!(a.csv(), b.csv());
    assert_eq!(a.mesh, b.mesh);
    cfg.seed += 1;
    let c = experiment::run_plan(&cfg, &problem, &plan, mesh, None).unwrap();
    assert_ne!(a.csv(), c.csv());
}

#[test]
fn fixed_step_uses_the_schedule() {
    let (mut cfg, problem) = setup();
    cfg.iterations = 4;
    cfg.schedule.as_mut().unwrap().schedule = StepSchedule::robbins_monro(0.01);
    let plan = RunPlan::Sampled(CoefficientModel::Deterministic(kappa(&cfg)));
    let state = experiment::run_plan(&cfg, &problem, &plan, experiment::build_initial_mesh(&cfg).unwrap(), None).unwrap();
    for (k, row) in state.log[..4].iter().enumerate() {
        assert_eq!(row.step, 0.01 / (k + 1) as f64);
    }
    assert!(state.log[4].objective < state.log[0].objective);
}
