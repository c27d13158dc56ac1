//! Descent drivers on the product shape space: steepest descent with Armijo
//! backtracking and stochastic gradient steps, both over the retraction
//! `x <- x - t V(x)` that moves every mesh node.

use std::sync::Arc;

use crate::deformation::{self, DeformationConfig};
use crate::error::{Error, Result};
use crate::fem::{ScalarField, VectorField};
use crate::mesh::TriMesh;
use crate::par;
use crate::physics::{self, CoefficientField, ForwardSolve, TargetData};
use crate::randomfield::{self, KlSpec};
use crate::shape_calculus::{self, ShapeDerivativeFunctional};

/// Largest cell diameter of the structured 47 x 47 reference grid.
pub const REFERENCE_DIAMETER: f64 = std::f64::consts::SQRT_2 / 46.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoConfig {
    pub alpha_hat: f64,
    pub sigma: f64,
    pub rho: f64,
    pub max_backtracks: usize,
    /// Scale `alpha_hat` by `max cell diameter / REFERENCE_DIAMETER`.
    pub alpha_scaling: bool,
}

impl Default for ArmijoConfig {
    fn default() -> Self {
        ArmijoConfig {
            alpha_hat: 0.0175,
            sigma: 1e-4,
            rho: 0.9,
            max_backtracks: 50,
            alpha_scaling: true,
        }
    }
}

impl ArmijoConfig {
    pub fn initial_step(&self, mesh: &TriMesh) -> f64 {
        if self.alpha_scaling {
            self.alpha_hat * mesh.max_cell_diameter() / REFERENCE_DIAMETER
        } else {
            self.alpha_hat
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    RobbinsMonro,
    WarmStart,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::RobbinsMonro => "robbins-monro",
            ScheduleKind::WarmStart => "warm-start",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(ScheduleKind::Constant),
            "robbins-monro" => Some(ScheduleKind::RobbinsMonro),
            "warm-start" => Some(ScheduleKind::WarmStart),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub c: f64,
    pub warm_iters: usize,
}

impl StepSchedule {
    pub fn constant(c: f64) -> Self {
        StepSchedule {
            kind: ScheduleKind::Constant,
            c,
            warm_iters: 0,
        }
    }

    pub fn robbins_monro(c: f64) -> Self {
        StepSchedule {
            kind: ScheduleKind::RobbinsMonro,
            c,
            warm_iters: 0,
        }
    }

    pub fn warm_start(c: f64, warm_iters: usize) -> Self {
        StepSchedule {
            kind: ScheduleKind::WarmStart,
            c,
            warm_iters,
        }
    }

    /// `t^k`.
    pub fn step(&self, k: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.c,
            ScheduleKind::RobbinsMonro => self.c / (k + 1) as f64,
            ScheduleKind::WarmStart if k < self.warm_iters => self.c,
            ScheduleKind::WarmStart => self.c / (k - self.warm_iters + 1) as f64,
        }
    }
}

/// Source of coefficient realizations for the gradient steps.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientModel {
    Deterministic(CoefficientField),
    Random(Arc<KlSpec>),
}

impl CoefficientModel {
    pub fn sample(&self, seed: u64, index: u64) -> CoefficientField {
        match self {
            CoefficientModel::Deterministic(field) => field.clone(),
            CoefficientModel::Random(spec) => CoefficientField::Random {
                spec: Arc::clone(spec),
                draw: randomfield::draw_sample(spec, seed, index),
            },
        }
    }
}

/// Data shared by every iteration of one run.
#[derive(Debug, Clone)]
pub struct Problem {
    pub target: Arc<TargetData>,
    pub g: f64,
    pub nu: Vec<f64>,
    pub deformation: DeformationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub objective: f64,
    pub tracking: f64,
    /// `sum_i nu_i |u_i|`.
    pub perimeter: f64,
    /// `a(V, V)^(1/2)`.
    pub grad_norm: f64,
    pub step: f64,
    pub min_quality: f64,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "iter,objective,tracking,perimeter,grad_norm,step,min_quality,seed";

impl LogRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.iter,
            self.objective,
            self.tracking,
            self.perimeter,
            self.grad_norm,
            self.step,
            self.min_quality,
            self.seed
        )
    }
}

/// Fields evaluated at the most recent iterate, kept for snapshots.
#[derive(Debug, Clone)]
pub struct IterateFields {
    pub mesh: TriMesh,
    pub y: ScalarField,
    pub ybar: ScalarField,
    pub rhs: VectorField,
    pub v: VectorField,
    pub kappa: ScalarField,
}

#[derive(Debug, Clone)]
pub struct OptState {
    pub mesh: TriMesh,
    pub iter: usize,
    pub log: Vec<LogRow>,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub last: Option<IterateFields>,
    /// State solve at the current mesh left over from the line search.
    cached: Option<ForwardSolve>,
}

impl OptState {
    pub fn new(mesh: TriMesh, seed: u64) -> Self {
        OptState {
            mesh,
            iter: 0,
            log: Vec::new(),
            seed,
            warnings: Vec::new(),
            last: None,
            cached: None,
        }
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.log {
            out.push_str(&row.csv_line());
            out.push('\n');
        }
        out
    }
}

/// Nodal average of the cell values of `kappa`, weighted by cell area.
pub fn nodal_kappa(mesh: &TriMesh, cell_kappa: &[(f64, [f64; 2])]) -> ScalarField {
    let mut sum = vec![0.0; mesh.n_nodes()];
    let mut weight = vec![0.0; mesh.n_nodes()];
    for (c, nodes) in mesh.cells().iter().enumerate() {
        let a = mesh.cell_area(c);
        for &n in nodes {
            sum[n] += a * cell_kappa[c].0;
            weight[n] += a;
        }
    }
    ScalarField::new(sum.iter().zip(&weight).map(|(s, w)| s / w).collect())
}

struct Direction {
    functional: ShapeDerivativeFunctional,
    v: VectorField,
    norm2: f64,
}

fn descent_direction(mesh: &TriMesh, rhs: VectorField, cfg: &DeformationConfig) -> Result<Direction> {
    let functional = shape_calculus::apply_locality_mask(rhs, mesh);
    let mu = deformation::solve_mu_field(mesh, cfg)?;
    let v = deformation::solve_deformation(mesh, &functional, &mu, cfg)?;
    let norm2 = deformation::deformation_norm(mesh, &v, &mu, cfg)?;
    Ok(Direction { functional, v, norm2 })
}

fn record(state: &mut OptState, fwd: &ForwardSolve, dir: &Direction, step: f64) {
    let mesh = &state.mesh;
    state.log.push(LogRow {
        iter: state.iter,
        objective: fwd.objective.total,
        tracking: fwd.objective.tracking,
        perimeter: fwd.objective.perimeter(),
        grad_norm: dir.norm2.max(0.0).sqrt(),
        step,
        min_quality: mesh.quality_report().min_aspect_ratio,
        seed: state.seed,
    });
    state.last = Some(IterateFields {
        mesh: mesh.clone(),
        y: fwd.state.y.clone(),
        ybar: ScalarField::new(fwd.ybar_nodal.clone()),
        rhs: dir.functional.rhs.clone(),
        v: dir.v.clone(),
        kappa: nodal_kappa(mesh, &fwd.disc.cell_kappa),
    });
}

/// One iteration of steepest descent with Armijo backtracking.
///
/// The step starts at the (optionally diameter-scaled) `alpha_hat` and is
/// reduced by `rho` until the trial mesh is valid and
/// `j(trial) <= j - sigma alpha a(V, V)`.
pub fn armijo_descent_step(
    state: &mut OptState,
    problem: &Problem,
    kappa: &CoefficientField,
    armijo: &ArmijoConfig,
) -> Result<()> {
    let mesh = state.mesh.clone();
    let fwd = match state.cached.take() {
        Some(mut f) => {
            f.adjoint = Some(f.disc.solve_adjoint(&f.state.y, &f.ybar_nodal)?);
            f
        }
        None => physics::forward_solve(&mesh, kappa, problem.g, &problem.target, &problem.nu, true)?,
    };
    let rhs = shape_calculus::assemble_shape_derivative(&mesh, &fwd, &problem.nu);
    let dir = descent_direction(&mesh, rhs, &problem.deformation)?;
    let j = fwd.objective.total;
    let (alpha, trial, trial_fwd) = backtrack(armijo, armijo.initial_step(&mesh), j, dir.norm2, |alpha| {
        let trial = mesh.deform(&dir.v, alpha);
        if !trial.quality_report().is_valid() {
            return Ok(None);
        }
        let f = physics::forward_solve(&trial, kappa, problem.g, &problem.target, &problem.nu, false)?;
        Ok(Some((f.objective.total, (trial, f))))
    })
    .map(|(a, (m, f))| (a, m, f))?;
    record(state, &fwd, &dir, alpha);
    state.mesh = trial;
    state.cached = Some(trial_fwd);
    state.iter += 1;
    Ok(())
}

/// Armijo backtracking: starting from `alpha0`, multiply by `rho` until
/// `trial(alpha)` is admissible (`Some`) and its value satisfies
/// `value <= j - sigma alpha norm2`. Returns the accepted step and payload.
pub fn backtrack<T>(
    armijo: &ArmijoConfig,
    alpha0: f64,
    j: f64,
    norm2: f64,
    mut trial: impl FnMut(f64) -> Result<Option<(f64, T)>>,
) -> Result<(f64, T)> {
    let mut alpha = alpha0;
    for _ in 0..=armijo.max_backtracks {
        if let Some((value, payload)) = trial(alpha)? {
            if value <= j - armijo.sigma * alpha * norm2 {
                return Ok((alpha, payload));
            }
        }
        alpha *= armijo.rho;
    }
    Err(Error::BacktrackExhausted(armijo.max_backtracks))
}

/// One stochastic gradient iteration with a batch of `batch` realizations.
///
/// Realization `i` of iteration `k` is drawn with index `k * batch + i`. The
/// per-sample derivative functionals are averaged before the single
/// deformation solve. A trial mesh with an inverted cell triggers one halving
/// of the step.
pub fn stochastic_gradient_step(
    state: &mut OptState,
    problem: &Problem,
    model: &CoefficientModel,
    schedule: &StepSchedule,
    batch: usize,
) -> Result<()> {
    assert!(batch >= 1, "batch size must be positive");
    let mesh = state.mesh.clone();
    let k = state.iter;
    let seed = state.seed;
    let ybar = problem.target.sample_nodes(&mesh);
    let samples = par::map_range(batch, |i| -> Result<(ForwardSolve, VectorField)> {
        let kappa = model.sample(seed, (k * batch + i) as u64);
        let fwd = physics::forward_solve_sampled(&mesh, &kappa, problem.g, &ybar, &problem.nu, true)?;
        let rhs = shape_calculus::assemble_stochastic_derivative(&mesh, &fwd, &problem.nu);
        Ok((fwd, rhs))
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / batch as f64;
    let mut rhs = VectorField::zeros(mesh.n_nodes());
    for (_, r) in &samples {
        for (acc, v) in rhs.values_mut().iter_mut().zip(r.values()) {
            acc[0] += v[0];
            acc[1] += v[1];
        }
    }
    for acc in rhs.values_mut() {
        acc[0] *= scale;
        acc[1] *= scale;
    }
    let dir = descent_direction(&mesh, rhs, &problem.deformation)?;

    let mut t = schedule.step(k);
    let mut trial = mesh.deform(&dir.v, t);
    if !trial.quality_report().is_valid() {
        state
            .warnings
            .push(format!("iteration {k}: trial mesh invalid at step {t:e}, halving"));
        t *= 0.5;
        trial = mesh.deform(&dir.v, t);
        if !trial.quality_report().is_valid() {
            return Err(Error::InvalidMeshAfterRetry { iteration: k });
        }
    }

    // log the batch average of the sampled objectives; fields of the first
    // sample go to the snapshot
    let mut fwd = samples.into_iter().map(|(f, _)| f).collect::<Vec<_>>();
    let avg = |f: fn(&ForwardSolve) -> f64| fwd.iter().map(f).sum::<f64>() * scale;
    let objective = avg(|f| f.objective.total);
    let tracking = avg(|f| f.objective.tracking);
    let mut first = fwd.swap_remove(0);
    if batch > 1 {
        first.objective.total = objective;
        first.objective.tracking = tracking;
    }
    record(state, &first, &dir, t);
    state.mesh = trial;
    state.iter += 1;
    Ok(())
}

/// Objective, gradient norm and fields at the current iterate without moving
/// it; used to log the final iterate of a run.
pub fn evaluate_iterate(state: &mut OptState, problem: &Problem, kappa: &CoefficientField) -> Result<()> {
    let mesh = state.mesh.clone();
    let fwd = physics::forward_solve(&mesh, kappa, problem.g, &problem.target, &problem.nu, true)?;
    let rhs = shape_calculus::assemble_shape_derivative(&mesh, &fwd, &problem.nu);
    let dir = descent_direction(&mesh, rhs, &problem.deformation)?;
    record(state, &fwd, &dir, 0.0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let c = StepSchedule::constant(0.5);
        assert_eq!(c.step(0), 0.5);
        assert_eq!(c.step(99), 0.5);
        let rm = StepSchedule::robbins_monro(1.0);
        assert_eq!(rm.step(0), 1.0);
        assert_eq!(rm.step(3), 0.25);
        let ws = StepSchedule::warm_start(0.015, 250);
        assert_eq!(ws.step(249), 0.015);
        assert_eq!(ws.step(250), 0.015);
        assert_eq!(ws.step(251), 0.0075);
        assert_eq!(ws.step(399), 0.015 / 150.0);
    }

    #[test]
    fn robbins_monro_square_sum_bound() {
        let c = 0.3;
        let rm = StepSchedule::robbins_monro(c);
        let sq: f64 = (0..100_000).map(|k| rm.step(k).powi(2)).sum();
        assert!(sq <= c * c * std::f64::consts::PI.powi(2) / 6.0);
        // harmonic partial sums grow like c ln n
        let s: f64 = (0..100_000).map(|k| rm.step(k)).sum();
        assert!(s > c * (100_000f64).ln());
    }

    #[test]
    fn diameter_scaling() {
        let m = crate::mesh::build_unit_square_mesh(47);
        let a = ArmijoConfig::default();
        assert!((a.initial_step(&m) - a.alpha_hat).abs() < 1e-15);
        let m = crate::mesh::build_unit_square_mesh(24);
        assert!((a.initial_step(&m) - a.alpha_hat * 2.0).abs() < 1e-14);
    }

    #[test]
    fn quadratic_accepts_full_step() {
        // j(x) = x^2 / 2 at x = 1: gradient 1, unit step lands on the minimizer
        let a = ArmijoConfig {
            alpha_hat: 1.0,
            alpha_scaling: false,
            ..ArmijoConfig::default()
        };
        let (alpha, x) = backtrack(&a, 1.0, 0.5, 1.0, |t| {
            let x: f64 = 1.0 - t;
            Ok(Some((0.5 * x * x, x)))
        })
        .unwrap();
        assert_eq!(alpha, 1.0);
        assert_eq!(x, 0.0);
    }

    #[test]
    fn overshooting_step_is_reduced() {
        // j(x) = 2 x^2 at x = 1, gradient 4: alpha = 1 overshoots to x = -3
        let a = ArmijoConfig::default();
        let (alpha, _) = backtrack(&a, 1.0, 2.0, 16.0, |t| {
            let x = 1.0 - 4.0 * t;
            Ok(Some((2.0 * x * x, ())))
        })
        .unwrap();
        assert!(alpha < 0.5 && alpha > 0.0);
        let x = 1.0 - 4.0 * alpha;
        assert!(2.0 * x * x <= 2.0 - 1e-4 * alpha * 16.0);
    }

    #[test]
    fn inadmissible_trials_count_as_failures() {
        let a = ArmijoConfig {
            max_backtracks: 5,
            ..ArmijoConfig::default()
        };
        let r = backtrack(&a, 1.0, 1.0, 1.0, |_| Ok(None::<(f64, ())>));
        assert!(matches!(r, Err(Error::BacktrackExhausted(5))));
    }

    #[test]
    fn schedule_names_round_trip() {
        for k in [ScheduleKind::Constant, ScheduleKind::RobbinsMonro, ScheduleKind::WarmStart] {
            assert_eq!(ScheduleKind::parse(k.name()), Some(k));
        }
        assert_eq!(ScheduleKind::parse("adam"), None);
    }
}
