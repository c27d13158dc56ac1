//! End-to-end runs driven by an [`ExperimentConfig`]: target generation,
//! optimization, CSV log, VTK snapshots and the resolved configuration.
//!
//! Output directory layout (one run):
//!
//! * `log.csv`
//! * `state_<k>.vtk` for every requested snapshot iteration `k`
//! * `target.vtk` with the target mesh and `ybar`
//! * `resolved_config.cfg`
//! * `warnings.txt` when the stochastic step had to be halved
//!
//! A robustness experiment writes one such directory per run
//! (`stochastic`, `deterministic_min`, `deterministic_max`) plus
//! `robustness.csv` with the final symmetric-difference areas.

use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::{ConfigDiagnostic, ExperimentConfig, ExperimentKind, Method};
use crate::error::{Error, Result};
use crate::geometry::{self, ShapeSpec};
use crate::mesh::vtk::VtkDocument;
use crate::mesh::{self, EmbedOptions, TriMesh};
use crate::optimizer::{self, CoefficientModel, OptState, Problem};
use crate::physics::{self, CoefficientField, TargetData};

pub const LOCK_FILE: &str = ".multishape.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Result of one optimization run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub name: String,
    pub state: OptState,
    /// Symmetric-difference area between each final shape and its target,
    /// for convex targets.
    pub symmetric_difference: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub runs: Vec<RunSummary>,
}

pub fn embed_options(cfg: &ExperimentConfig) -> EmbedOptions {
    EmbedOptions {
        curve_samples: cfg.mesh.curve_samples,
        smoothing_sweeps: cfg.mesh.smoothing_sweeps,
    }
}

pub fn build_target(cfg: &ExperimentConfig) -> Result<TargetData> {
    physics::generate_target_with(
        &cfg.targets,
        &cfg.target_kappa(),
        cfg.g,
        cfg.mesh.target_resolution,
        &embed_options(cfg),
    )
}

pub fn build_initial_mesh(cfg: &ExperimentConfig) -> Result<TriMesh> {
    let base = mesh::build_unit_square_mesh(cfg.mesh.resolution);
    mesh::embed_shapes(&base, &cfg.initial, &embed_options(cfg))
}

pub fn target_document(target: &TargetData) -> VtkDocument {
    VtkDocument::new(target.mesh().clone()).with_point_scalar("ybar", target.ybar().values().to_vec())
}

fn snapshot_document(state: &OptState) -> Option<VtkDocument> {
    let f = state.last.as_ref()?;
    Some(
        VtkDocument::new(f.mesh.clone())
            .with_point_scalar("y", f.y.values().to_vec())
            .with_point_scalar("ybar", f.ybar.values().to_vec())
            .with_point_scalar("kappa", f.kappa.values().to_vec())
            .with_point_vector("deformation_V", f.v.values().to_vec())
            .with_point_vector("shape_gradient_rhs", f.rhs.values().to_vec()),
    )
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config(vec![ConfigDiagnostic {
        line: None,
        key: key.into(),
        message: message.into(),
    }])
}

/// How one run moves the mesh.
#[derive(Debug, Clone)]
pub enum RunPlan {
    Armijo(CoefficientField),
    Sampled(CoefficientModel),
}

/// Run `iterations` steps from `mesh`, writing snapshots into `dir` (when
/// given) as they become available, then log the final iterate.
pub fn run_plan(
    cfg: &ExperimentConfig,
    problem: &Problem,
    plan: &RunPlan,
    mesh: TriMesh,
    dir: Option<&Path>,
) -> Result<OptState> {
    let mut state = OptState::new(mesh, cfg.seed);
    let snapshot = |state: &OptState, k: usize| -> Result<()> {
        if let (Some(dir), true) = (dir, cfg.snapshots.contains(&k)) {
            if let Some(doc) = snapshot_document(state) {
                doc.write(&dir.join(format!("state_{k}.vtk")))?;
            }
        }
        Ok(())
    };
    for k in 0..cfg.iterations {
        match plan {
            RunPlan::Armijo(kappa) => {
                let armijo = cfg.armijo.as_ref().ok_or_else(|| config_error("armijo", "missing section"))?;
                optimizer::armijo_descent_step(&mut state, problem, kappa, armijo)?;
            }
            RunPlan::Sampled(model) => {
                let sch = cfg
                    .schedule
                    .as_ref()
                    .ok_or_else(|| config_error("schedule", "missing section"))?;
                optimizer::stochastic_gradient_step(&mut state, problem, model, &sch.schedule, sch.batch)?;
            }
        }
        snapshot(&state, k)?;
    }
    let n = cfg.iterations;
    let final_kappa = match plan {
        RunPlan::Armijo(kappa) => kappa.clone(),
        RunPlan::Sampled(model) => {
            let batch = cfg.schedule.as_ref().map_or(1, |s| s.batch);
            model.sample(cfg.seed, (n * batch) as u64)
        }
    };
    optimizer::evaluate_iterate(&mut state, problem, &final_kappa)?;
    snapshot(&state, n)?;
    Ok(state)
}

fn symmetric_differences(mesh: &TriMesh, targets: &[ShapeSpec], samples: usize) -> Vec<Option<f64>> {
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.is_convex().then(|| {
                let poly = mesh.interface_polygon(i + 1);
                geometry::symmetric_difference_area(&poly, &t.polygon(samples))
            })
        })
        .collect()
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, target: &TargetData, state: &OptState) -> Result<()> {
    fs::write(dir.join("log.csv"), state.csv())?;
    target_document(target).write(&dir.join("target.vtk"))?;
    fs::write(dir.join("resolved_config.cfg"), cfg.to_text())?;
    if !state.warnings.is_empty() {
        let mut f = File::create(dir.join("warnings.txt"))?;
        for w in &state.warnings {
            writeln!(f, "{w}")?;
        }
    }
    Ok(())
}

/// Run the configured experiment and write its artifacts under
/// `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let root = cfg.output.clone();
    let _lock = OutputLock::acquire(&root)?;
    let target = Arc::new(build_target(cfg)?);
    let mesh0 = build_initial_mesh(cfg)?;
    let problem = Problem {
        target: Arc::clone(&target),
        g: cfg.g,
        nu: cfg.nu.clone(),
        deformation: cfg.deformation,
    };
    let constant = |k: &[f64]| CoefficientField::PiecewiseConstant(k.to_vec());
    let random = || -> Result<CoefficientModel> {
        let rf = cfg
            .random_field
            .as_ref()
            .ok_or_else(|| config_error("random_field", "missing section"))?;
        Ok(CoefficientModel::Random(Arc::new(rf.kl_spec()?)))
    };
    let plans: Vec<(String, RunPlan)> = match cfg.kind {
        ExperimentKind::Deterministic => {
            let kappa = constant(cfg.kappa.as_deref().ok_or_else(|| config_error("physics.kappa", "missing"))?);
            let plan = match cfg.method {
                Method::Armijo => RunPlan::Armijo(kappa),
                Method::FixedStep => RunPlan::Sampled(CoefficientModel::Deterministic(kappa)),
            };
            vec![(String::new(), plan)]
        }
        ExperimentKind::Stochastic => vec![(String::new(), RunPlan::Sampled(random()?))],
        ExperimentKind::Robustness => {
            let rb = cfg
                .robustness
                .as_ref()
                .ok_or_else(|| config_error("robustness", "missing section"))?;
            vec![
                ("stochastic".into(), RunPlan::Sampled(random()?)),
                ("deterministic_min".into(), RunPlan::Armijo(constant(&rb.kappa_min))),
                ("deterministic_max".into(), RunPlan::Armijo(constant(&rb.kappa_max))),
            ]
        }
    };

    let mut runs = Vec::new();
    for (name, plan) in plans {
        let dir = if name.is_empty() { root.clone() } else { root.join(&name) };
        fs::create_dir_all(&dir)?;
        let state = run_plan(cfg, &problem, &plan, mesh0.clone(), Some(&dir))?;
        write_run(&dir, cfg, &target, &state)?;
        let symmetric_difference = symmetric_differences(&state.mesh, &cfg.targets, cfg.mesh.curve_samples);
        runs.push(RunSummary {
            name,
            state,
            symmetric_difference,
        });
    }
    if cfg.kind == ExperimentKind::Robustness {
        let mut s = String::from("run,symmetric_difference\n");
        for r in &runs {
            let d = r.symmetric_difference.first().copied().flatten().unwrap_or(f64::NAN);
            s.push_str(&format!("{},{d:e}\n", r.name));
        }
        fs::write(root.join("robustness.csv"), s)?;
        fs::write(root.join("resolved_config.cfg"), cfg.to_text())?;
    }
    Ok(ExperimentSummary { runs })
}

/// Target mesh and `ybar` written to `dir/target.vtk`.
pub fn generate_target_files(cfg: &ExperimentConfig, dir: &Path) -> Result<TargetData> {
    let _lock = OutputLock::acquire(dir)?;
    let target = build_target(cfg)?;
    target_document(&target).write(&dir.join("target.vtk"))?;
    Ok(target)
}

/// `draws` coefficient realizations on the initial mesh, written as
/// `kappa_<i>.vtk` with nodal values and the cell (centroid) values.
pub fn sample_field_files(cfg: &ExperimentConfig, dir: &Path, draws: usize) -> Result<Vec<PathBuf>> {
    let rf = cfg
        .random_field
        .as_ref()
        .ok_or_else(|| config_error("random_field", "sample-field needs a [random_field] section"))?;
    let model = CoefficientModel::Random(Arc::new(rf.kl_spec()?));
    let _lock = OutputLock::acquire(dir)?;
    let mesh = build_initial_mesh(cfg)?;
    let mut paths = Vec::new();
    for i in 0..draws {
        let kappa = model.sample(cfg.seed, i as u64);
        let cells = kappa.cell_values(&mesh)?;
        let nodal = optimizer::nodal_kappa(&mesh, &cells);
        let doc = VtkDocument::new(mesh.clone())
            .with_point_scalar("kappa", nodal.into_values())
            .with_cell_scalar("kappa_cell", cells.iter().map(|c| c.0).collect());
        let path = dir.join(format!("kappa_{i}.vtk"));
        doc.write(&path)?;
        paths.push(path);
    }
    Ok(paths)
}
