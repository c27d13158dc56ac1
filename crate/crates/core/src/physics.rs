//! State and adjoint transmission problems and the tracking-plus-perimeter
//! objective.
//!
//! Discretely the state solves `K y + l m = b`, `m^T y = 0`, with `K` the
//! diffusion stiffness, `m_i = integral of phi_i` and `b` the Neumann load.
//! The adjoint solves `K p + e m = M (ybar - y)`, `m^T p = 0`, with `M` the
//! consistent mass matrix.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{self, BoundaryLoad, CsrMatrix, ScalarField, SparseSystem};
use crate::geometry::{self, Point, ShapeSpec};
use crate::mesh::{self, EmbedOptions, TriMesh};
use crate::par;
use crate::randomfield::{self, KlSpec, SampleDraw};

/// Diffusion coefficient, either one constant per subdomain label or a KL
/// realization per subdomain.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientField {
    PiecewiseConstant(Vec<f64>),
    Random { spec: Arc<KlSpec>, draw: SampleDraw },
}

impl CoefficientField {
    pub fn n_subdomains(&self) -> usize {
        match self {
            CoefficientField::PiecewiseConstant(v) => v.len(),
            CoefficientField::Random { spec, .. } => spec.subdomains().len(),
        }
    }

    /// Value and gradient at `x` using the expansion of `subdomain`.
    pub fn evaluate(&self, x: Point, subdomain: usize) -> Result<(f64, [f64; 2])> {
        match self {
            CoefficientField::PiecewiseConstant(v) => Ok((v[subdomain], [0.0, 0.0])),
            CoefficientField::Random { spec, draw } => randomfield::evaluate_kappa(spec, draw, x, subdomain),
        }
    }

    /// Midpoint-rule samples: value and gradient at every cell centroid.
    pub fn cell_values(&self, mesh: &TriMesh) -> Result<Vec<(f64, [f64; 2])>> {
        let n = self.n_subdomains();
        if mesh.n_shapes() + 1 > n {
            return Err(Error::MeshGeneration(format!(
                "coefficient defines {n} subdomains but the mesh has {}",
                mesh.n_shapes() + 1
            )));
        }
        let labels = mesh.cell_subdomain();
        let values = par::map_range(mesh.n_cells(), |c| self.evaluate(mesh.centroid(c), labels[c] as usize));
        let values = values.into_iter().collect::<Result<Vec<_>>>()?;
        if let Some((cell, &(value, _))) = values.iter().enumerate().find(|(_, v)| !(v.0 > 0.0)) {
            return Err(Error::NonpositiveCoefficient { cell, value });
        }
        Ok(values)
    }
}

/// Uniform bucket grid over the unit square for point location.
#[derive(Debug, Clone)]
struct CellLocator {
    n: usize,
    buckets: Vec<Vec<usize>>,
}

impl CellLocator {
    fn new(mesh: &TriMesh) -> Self {
        let n = ((mesh.n_cells() as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); n * n];
        let idx = |v: f64| ((v * n as f64).floor().max(0.0) as usize).min(n - 1);
        for c in 0..mesh.n_cells() {
            let pts = mesh.cell_points(c);
            let lo = [0, 1].map(|a| pts.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min));
            let hi = [0, 1].map(|a| pts.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max));
            for j in idx(lo[1])..=idx(hi[1]) {
                for i in idx(lo[0])..=idx(hi[0]) {
                    buckets[j * n + i].push(c);
                }
            }
        }
        CellLocator { n, buckets }
    }

    fn candidates(&self, x: Point) -> &[usize] {
        let idx = |v: f64| ((v * self.n as f64).floor().max(0.0) as usize).min(self.n - 1);
        &self.buckets[idx(x[1]) * self.n + idx(x[0])]
    }
}

fn barycentric(mesh: &TriMesh, cell: usize, x: Point) -> [f64; 3] {
    let [a, b, c] = mesh.cell_points(cell);
    let det = geometry::orient(a, b, c);
    let l1 = geometry::orient(x, b, c) / det;
    let l2 = geometry::orient(a, x, c) / det;
    [l1, l2, 1.0 - l1 - l2]
}

/// Target state on its own fixed mesh, evaluated elsewhere by point location
/// and P1 interpolation.
#[derive(Debug, Clone)]
pub struct TargetData {
    mesh: TriMesh,
    ybar: ScalarField,
    locator: CellLocator,
}

impl TargetData {
    pub fn new(mesh: TriMesh, ybar: ScalarField) -> Self {
        assert_eq!(ybar.len(), mesh.n_nodes());
        let locator = CellLocator::new(&mesh);
        TargetData { mesh, ybar, locator }
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn ybar(&self) -> &ScalarField {
        &self.ybar
    }

    /// Containing cell; on shared edges or vertices the lowest index wins.
    /// Points marginally outside every cell fall back to the least-violating
    /// candidate.
    pub fn locate(&self, x: Point) -> usize {
        let cands = self.locator.candidates(x);
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for &c in cands {
            let l = barycentric(&self.mesh, c, x);
            let worst = l[0].min(l[1]).min(l[2]);
            if worst >= 0.0 {
                return c;
            }
            if worst > best.0 {
                best = (worst, c);
            }
        }
        if best.1 != usize::MAX {
            return best.1;
        }
        // outside the bucket grid coverage: brute force
        (0..self.mesh.n_cells())
            .map(|c| {
                let l = barycentric(&self.mesh, c, x);
                (l[0].min(l[1]).min(l[2]), c)
            })
            .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
            .1
    }

    /// `ybar(x)` and the element gradient of the containing cell.
    pub fn evaluate(&self, x: Point) -> (f64, [f64; 2]) {
        let c = self.locate(x);
        let cell = self.mesh.cells()[c];
        let l = barycentric(&self.mesh, c, x);
        let v = self.ybar.values();
        let value = l[0] * v[cell[0]] + l[1] * v[cell[1]] + l[2] * v[cell[2]];
        let (g, _) = self.mesh.basis_gradients(c);
        let mut grad = [0.0, 0.0];
        for k in 0..3 {
            grad[0] += v[cell[k]] * g[k][0];
            grad[1] += v[cell[k]] * g[k][1];
        }
        (value, grad)
    }

    /// Values and gradients at every node of `mesh`.
    pub fn sample_nodes(&self, mesh: &TriMesh) -> (Vec<f64>, Vec<[f64; 2]>) {
        par::map_slice(mesh.coords(), |&x| self.evaluate(x)).into_iter().unzip()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub tracking: f64,
    pub perimeter_terms: Vec<f64>,
}

impl ObjectiveValue {
    pub fn perimeter(&self) -> f64 {
        self.perimeter_terms.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct StateSolution {
    pub y: ScalarField,
    /// Multiplier `l` of the mean-value constraint.
    pub multiplier: f64,
}

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub p: ScalarField,
    pub multiplier: f64,
}

/// Operators shared by the state and adjoint solves on one mesh.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub cell_kappa: Vec<(f64, [f64; 2])>,
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub lumped: Vec<f64>,
}

impl Discretization {
    pub fn new(mesh: &TriMesh, kappa: &CoefficientField) -> Result<Self> {
        let cell_kappa = kappa.cell_values(mesh)?;
        let k: Vec<f64> = cell_kappa.iter().map(|v| v.0).collect();
        Ok(Discretization {
            stiffness: fem::assemble_diffusion(mesh, &k)?,
            mass: fem::assemble_mass(mesh),
            lumped: fem::lumped_mass(mesh),
            cell_kappa,
        })
    }

    pub fn solve_state(&self, mesh: &TriMesh, g: &BoundaryLoad) -> Result<StateSolution> {
        let system = SparseSystem {
            matrix: self.stiffness.clone(),
            rhs: fem::assemble_neumann_load(mesh, g),
            mean_weights: Some(self.lumped.clone()),
        };
        let sol = fem::solve_mean_constrained(&system, fem::DEFAULT_RTOL)?;
        Ok(StateSolution {
            y: sol.field,
            multiplier: sol.multiplier,
        })
    }

    /// Adjoint with the target given by its nodal interpolant.
    pub fn solve_adjoint(&self, y: &ScalarField, ybar_nodal: &[f64]) -> Result<AdjointSolution> {
        let diff: Vec<f64> = ybar_nodal.iter().zip(y.values()).map(|(t, v)| t - v).collect();
        let system = SparseSystem {
            matrix: self.stiffness.clone(),
            rhs: self.mass.mul(&diff),
            mean_weights: Some(self.lumped.clone()),
        };
        let sol = fem::solve_mean_constrained(&system, fem::DEFAULT_RTOL)?;
        Ok(AdjointSolution {
            p: sol.field,
            multiplier: sol.multiplier,
        })
    }
}

pub fn solve_state(mesh: &TriMesh, kappa: &CoefficientField, g: f64) -> Result<ScalarField> {
    Ok(Discretization::new(mesh, kappa)?
        .solve_state(mesh, &BoundaryLoad::Constant(g))?
        .y)
}

pub fn solve_adjoint(mesh: &TriMesh, kappa: &CoefficientField, y: &ScalarField, target: &TargetData) -> Result<ScalarField> {
    let (ybar, _) = target.sample_nodes(mesh);
    Ok(Discretization::new(mesh, kappa)?.solve_adjoint(y, &ybar)?.p)
}

/// `1/2 (y - ybar)^T M (y - ybar)` with `ybar` interpolated at the nodes.
pub fn tracking_term(mass: &CsrMatrix, y: &[f64], ybar_nodal: &[f64]) -> f64 {
    let e: Vec<f64> = y.iter().zip(ybar_nodal).map(|(a, b)| a - b).collect();
    0.5 * mass.bilinear(&e, &e)
}

pub fn objective_from_parts(mesh: &TriMesh, tracking: f64, nu: &[f64]) -> ObjectiveValue {
    assert_eq!(nu.len(), mesh.n_shapes(), "one regularization weight per shape");
    let perimeter_terms: Vec<f64> = nu
        .iter()
        .enumerate()
        .map(|(s, &w)| w * mesh.interface_length(s + 1))
        .collect();
    let total = tracking + perimeter_terms.iter().sum::<f64>();
    ObjectiveValue {
        total,
        tracking,
        perimeter_terms,
    }
}

pub fn evaluate_objective(mesh: &TriMesh, y: &ScalarField, target: &TargetData, nu: &[f64]) -> ObjectiveValue {
    let (ybar, _) = target.sample_nodes(mesh);
    let tracking = tracking_term(&fem::assemble_mass(mesh), y.values(), &ybar);
    objective_from_parts(mesh, tracking, nu)
}

/// Everything the shape derivative needs at one iterate and one coefficient
/// realization.
#[derive(Debug, Clone)]
pub struct ForwardSolve {
    pub disc: Discretization,
    pub state: StateSolution,
    pub adjoint: Option<AdjointSolution>,
    pub ybar_nodal: Vec<f64>,
    pub ybar_grad: Vec<[f64; 2]>,
    pub objective: ObjectiveValue,
}

/// State solve, objective and (optionally) the adjoint.
pub fn forward_solve(
    mesh: &TriMesh,
    kappa: &CoefficientField,
    g: f64,
    target: &TargetData,
    nu: &[f64],
    with_adjoint: bool,
) -> Result<ForwardSolve> {
    forward_solve_sampled(mesh, kappa, g, &target.sample_nodes(mesh), nu, with_adjoint)
}

/// As [`forward_solve`] with target samples already computed for `mesh`.
pub fn forward_solve_sampled(
    mesh: &TriMesh,
    kappa: &CoefficientField,
    g: f64,
    ybar: &(Vec<f64>, Vec<[f64; 2]>),
    nu: &[f64],
    with_adjoint: bool,
) -> Result<ForwardSolve> {
    let disc = Discretization::new(mesh, kappa)?;
    let state = disc.solve_state(mesh, &BoundaryLoad::Constant(g))?;
    let tracking = tracking_term(&disc.mass, state.y.values(), &ybar.0);
    let objective = objective_from_parts(mesh, tracking, nu);
    let adjoint = if with_adjoint {
        Some(disc.solve_adjoint(&state.y, &ybar.0)?)
    } else {
        None
    };
    Ok(ForwardSolve {
        disc,
        state,
        adjoint,
        ybar_nodal: ybar.0.clone(),
        ybar_grad: ybar.1.clone(),
        objective,
    })
}

/// Solve the state on a mesh fitted to `shapes` and wrap it as target data.
pub fn generate_target(
    shapes: &[ShapeSpec],
    kappa_bar: &[f64],
    g: f64,
    resolution: usize,
) -> Result<TargetData> {
    generate_target_with(shapes, kappa_bar, g, resolution, &EmbedOptions::default())
}

/// As [`generate_target`] with explicit embedding options.
pub fn generate_target_with(
    shapes: &[ShapeSpec],
    kappa_bar: &[f64],
    g: f64,
    resolution: usize,
    opts: &EmbedOptions,
) -> Result<TargetData> {
    let base = mesh::build_unit_square_mesh(resolution);
    let m = mesh::embed_shapes(&base, shapes, opts)?;
    let y = solve_state(&m, &CoefficientField::PiecewiseConstant(kappa_bar.to_vec()), g)?;
    Ok(TargetData::new(m, y))
}
