//! Built-in numerical checks behind the `verify` subcommand: finite
//! differences of the shape derivative, the coefficient derivative through
//! the adjoint, equivalence of partitioned and monolithic deformation solves,
//! and finite-element convergence on a manufactured solution.

use std::f64::consts::PI;

use crate::deformation::{self, DeformationConfig};
use crate::error::Result;
use crate::fem::{self, BoundaryLoad, SparseSystem, VectorField};
use crate::geometry::{Point, ShapeSpec};
use crate::mesh::{self, EmbedOptions, TriMesh};
use crate::physics::{self, CoefficientField, TargetData};
use crate::shape_calculus;

/// Two-shape verification setup: target data, an optimization mesh with two
/// circles and the piecewise-constant coefficient.
#[derive(Debug, Clone)]
pub struct TwoShapeCase {
    pub target: TargetData,
    pub mesh: TriMesh,
    pub kappa: CoefficientField,
    pub g: f64,
    pub nu: Vec<f64>,
}

pub fn two_shape_targets() -> Vec<ShapeSpec> {
    vec![
        ShapeSpec::Ellipse {
            center: [0.3, 0.67],
            semi_axes: [0.16, 0.1],
            angle_deg: 15.0,
        },
        ShapeSpec::Tube {
            center: [0.62, 0.25],
            radius: 0.2,
            start_deg: 20.0,
            end_deg: 160.0,
            half_width: 0.05,
        },
    ]
}

pub fn two_shape_initial() -> Vec<ShapeSpec> {
    vec![
        ShapeSpec::Circle {
            center: [0.35, 0.6],
            radius: 0.1,
        },
        ShapeSpec::Circle {
            center: [0.62, 0.35],
            radius: 0.1,
        },
    ]
}

impl TwoShapeCase {
    /// `resolution` nodes per side of the optimization grid.
    pub fn new(resolution: usize) -> Result<Self> {
        let kappa_bar = [1000.0, 7.5, 5.0];
        let g = 1000.0;
        let target = physics::generate_target(&two_shape_targets(), &kappa_bar, g, 61)?;
        let base = mesh::build_unit_square_mesh(resolution);
        let mesh = mesh::embed_shapes(&base, &two_shape_initial(), &EmbedOptions::default())?;
        Ok(TwoShapeCase {
            target,
            mesh,
            kappa: CoefficientField::PiecewiseConstant(kappa_bar.to_vec()),
            g,
            nu: vec![2e-5, 2e-5],
        })
    }

    pub fn objective(&self, mesh: &TriMesh) -> Result<f64> {
        Ok(physics::forward_solve(mesh, &self.kappa, self.g, &self.target, &self.nu, false)?
            .objective
            .total)
    }
}

/// Smooth test fields with compact support inside the unit square.
pub fn test_fields() -> Vec<fn(Point) -> Point> {
    fn bump_all(x: Point) -> Point {
        let b = (PI * x[0]).sin().powi(2) * (PI * x[1]).sin().powi(2);
        [b, 0.5 * b]
    }
    fn bump_first(x: Point) -> Point {
        let r2 = ((x[0] - 0.35).powi(2) + (x[1] - 0.6).powi(2)) / 0.04;
        let b = if r2 < 1.0 { (1.0 - r2).powi(2) } else { 0.0 };
        [-b, b * x[0]]
    }
    fn swirl_second(x: Point) -> Point {
        let r2 = ((x[0] - 0.62).powi(2) + (x[1] - 0.35).powi(2)) / 0.0625;
        let b = if r2 < 1.0 { (1.0 - r2).powi(3) } else { 0.0 };
        [b * (x[1] - 0.35), -b * (x[0] - 0.62) + 0.3 * b]
    }
    vec![bump_all, bump_first, swirl_second]
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdRow {
    pub derivative: f64,
    /// `(t, relative error of the forward difference quotient)`.
    pub errors: Vec<(f64, f64)>,
}

impl FdRow {
    pub fn error_at(&self, t: f64) -> Option<f64> {
        self.errors.iter().find(|(s, _)| *s == t).map(|e| e.1)
    }

    /// Least-squares slope of `log err` against `log t`.
    pub fn observed_order(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self.errors.iter().map(|&(t, e)| (t.ln(), e.ln())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }
}

/// Compare `dj[W]` with `(j(x + tW) - j(x)) / t`, moving the mesh with the
/// same retraction the optimizer uses.
pub fn finite_difference_check(case: &TwoShapeCase, steps: &[f64]) -> Result<Vec<FdRow>> {
    let mesh = &case.mesh;
    let fwd = physics::forward_solve(mesh, &case.kappa, case.g, &case.target, &case.nu, true)?;
    let rhs = shape_calculus::assemble_shape_derivative(mesh, &fwd, &case.nu);
    let j0 = fwd.objective.total;
    let mut rows = Vec::new();
    for w in test_fields() {
        let wf = VectorField::new(mesh.coords().iter().map(|&x| w(x)).collect());
        let derivative = rhs.dot(&wf);
        let mut errors = Vec::new();
        for &t in steps {
            let moved = mesh.deform(&wf, -t);
            let q = (case.objective(&moved)? - j0) / t;
            errors.push((t, (q - derivative).abs() / derivative.abs()));
        }
        rows.push(FdRow { derivative, errors });
    }
    Ok(rows)
}

/// Relative error between the adjoint formula
/// `dj/dkappa_s = sum over cells of subdomain s of |T| grad y . grad p` and a
/// central difference in the constant `kappa_s`.
pub fn adjoint_coefficient_check(case: &TwoShapeCase, subdomain: usize) -> Result<f64> {
    let CoefficientField::PiecewiseConstant(base) = &case.kappa else {
        unreachable!("verification case uses constant coefficients")
    };
    let mesh = &case.mesh;
    let fwd = physics::forward_solve(mesh, &case.kappa, case.g, &case.target, &case.nu, true)?;
    let y = fwd.state.y.values();
    let p = fwd.adjoint.as_ref().expect("adjoint requested").p.values();
    let mut analytic = 0.0;
    for (c, nodes) in mesh.cells().iter().enumerate() {
        if mesh.cell_subdomain()[c] as usize != subdomain {
            continue;
        }
        let (g, area) = mesh.basis_gradients(c);
        let mut gy = [0.0; 2];
        let mut gp = [0.0; 2];
        for k in 0..3 {
            for a in 0..2 {
                gy[a] += y[nodes[k]] * g[k][a];
                gp[a] += p[nodes[k]] * g[k][a];
            }
        }
        analytic += area * (gy[0] * gp[0] + gy[1] * gp[1]);
    }
    let h = 1e-4 * base[subdomain];
    let eval = |delta: f64| -> Result<f64> {
        let mut k = base.clone();
        k[subdomain] += delta;
        let kappa = CoefficientField::PiecewiseConstant(k);
        Ok(physics::forward_solve(mesh, &kappa, case.g, &case.target, &case.nu, false)?
            .objective
            .tracking)
    };
    let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
    Ok((fd - analytic).abs() / analytic.abs())
}

/// Two admissible partitions of the two-shape mesh: the perpendicular
/// bisector of the shape centres, and a disk around the first shape.
pub fn sample_partitions(mesh: &TriMesh) -> Vec<Vec<usize>> {
    let c1 = [0.35, 0.6];
    let c2 = [0.62, 0.35];
    let mid = [(c1[0] + c2[0]) / 2.0, (c1[1] + c2[1]) / 2.0];
    let dir = [c2[0] - c1[0], c2[1] - c1[1]];
    let bisector = (0..mesh.n_cells())
        .map(|c| {
            let x = mesh.centroid(c);
            usize::from((x[0] - mid[0]) * dir[0] + (x[1] - mid[1]) * dir[1] > 0.0)
        })
        .collect();
    let disk = (0..mesh.n_cells())
        .map(|c| {
            let x = mesh.centroid(c);
            usize::from((x[0] - c1[0]).hypot(x[1] - c1[1]) > 0.2)
        })
        .collect();
    vec![bisector, disk]
}

/// Relative H^1 differences between partitioned and monolithic solves, one
/// per partition.
pub fn partition_equivalence_check(case: &TwoShapeCase, partitions: &[Vec<usize>]) -> Result<Vec<f64>> {
    let mesh = &case.mesh;
    let fwd = physics::forward_solve(mesh, &case.kappa, case.g, &case.target, &case.nu, true)?;
    let rhs = shape_calculus::assemble_shape_derivative(mesh, &fwd, &case.nu);
    let functional = shape_calculus::apply_locality_mask(rhs, mesh);
    let cfg = DeformationConfig {
        rtol: 1e-13,
        ..DeformationConfig::default()
    };
    let mu = deformation::solve_mu_field(mesh, &cfg)?;
    let mono = deformation::solve_deformation(mesh, &functional, &mu, &cfg)?;
    let norm = deformation::h1_norm(mesh, &mono)?;
    partitions
        .iter()
        .map(|part| {
            let v = deformation::solve_deformation_partitioned(mesh, &functional, &mu, &cfg, part)?;
            let diff = VectorField::new(
                v.values()
                    .iter()
                    .zip(mono.values())
                    .map(|(a, b)| [a[0] - b[0], a[1] - b[1]])
                    .collect(),
            );
            Ok(deformation::h1_norm(mesh, &diff)? / norm)
        })
        .collect()
}

fn manufactured(x: Point) -> f64 {
    (PI * x[0]).cos() * (PI * x[1]).cos()
}

/// L^2 error of the P1 solution of `-div grad u = 2 pi^2 u` with homogeneous
/// Neumann data and zero mean, exact solution `cos(pi x) cos(pi y)`.
pub fn manufactured_error(resolution: usize) -> Result<f64> {
    let m = mesh::build_unit_square_mesh(resolution);
    let k = fem::assemble_diffusion(&m, &vec![1.0; m.n_cells()])?;
    let mass = fem::assemble_mass(&m);
    let f: Vec<f64> = m.coords().iter().map(|&x| 2.0 * PI * PI * manufactured(x)).collect();
    let mut rhs = mass.mul(&f);
    let zero = fem::assemble_neumann_load(&m, &BoundaryLoad::Constant(0.0));
    for (r, z) in rhs.iter_mut().zip(zero) {
        *r += z;
    }
    let sys = SparseSystem {
        matrix: k,
        rhs,
        mean_weights: Some(fem::lumped_mass(&m)),
    };
    let u = fem::solve_mean_constrained(&sys, 1e-12)?.field;
    // edge-midpoint rule, exact for quadratics
    let mut err2 = 0.0;
    for (c, nodes) in m.cells().iter().enumerate() {
        let pts = m.cell_points(c);
        let area = m.cell_area(c);
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            let x = [(pts[a][0] + pts[b][0]) / 2.0, (pts[a][1] + pts[b][1]) / 2.0];
            let uh = 0.5 * (u.values()[nodes[a]] + u.values()[nodes[b]]);
            err2 += area / 3.0 * (uh - manufactured(x)).powi(2);
        }
    }
    Ok(err2.sqrt())
}

/// Observed orders between successive refinements (resolution `r` has mesh
/// size `1 / (r - 1)`).
pub fn convergence_orders(resolutions: &[usize]) -> Result<Vec<f64>> {
    let errs = resolutions
        .iter()
        .map(|&r| manufactured_error(r))
        .collect::<Result<Vec<_>>>()?;
    Ok(resolutions
        .windows(2)
        .zip(errs.windows(2))
        .map(|(r, e)| (e[0] / e[1]).ln() / (((r[1] - 1) as f64) / ((r[0] - 1) as f64)).ln())
        .collect())
}

/// Largest deviation of the unit-coefficient stiffness matrix on the
/// reference triangle from the analytic local matrix.
pub fn reference_stiffness_deviation() -> Result<f64> {
    let m = TriMesh::from_parts(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], vec![0])?;
    let k = fem::assemble_diffusion(&m, &[1.0])?;
    let exact = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
    let mut worst: f64 = 0.0;
    for (i, row) in exact.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            worst = worst.max((k.get(i, j) - v).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Run every check on a two-shape mesh with `resolution` nodes per side.
pub fn run_all(resolution: usize) -> Result<Vec<CheckOutcome>> {
    let case = TwoShapeCase::new(resolution)?;
    let mut out = Vec::new();

    let rows = finite_difference_check(&case, &[1e-3, 1e-4, 1e-5])?;
    let worst = rows.iter().filter_map(|r| r.error_at(1e-5)).fold(0.0, f64::max);
    let orders: Vec<f64> = rows.iter().map(FdRow::observed_order).collect();
    out.push(CheckOutcome {
        name: "shape derivative vs finite differences",
        passed: worst <= 1e-2 && orders.iter().all(|o| (0.7..=1.3).contains(o)),
        detail: format!("max rel err at t=1e-5 {worst:.3e}, orders {orders:.2?}"),
    });

    let adj = (1..=2)
        .map(|s| adjoint_coefficient_check(&case, s))
        .collect::<Result<Vec<_>>>()?;
    let worst = adj.iter().copied().fold(0.0, f64::max);
    out.push(CheckOutcome {
        name: "coefficient derivative via adjoint",
        passed: worst <= 1e-4,
        detail: format!("max rel err {worst:.3e}"),
    });

    let diffs = partition_equivalence_check(&case, &sample_partitions(&case.mesh))?;
    let worst = diffs.iter().copied().fold(0.0, f64::max);
    out.push(CheckOutcome {
        name: "partitioned vs monolithic deformation",
        passed: worst <= 1e-8,
        detail: format!("relative H1 differences {:?}", diffs.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>()),
    });

    let orders = convergence_orders(&[9, 17, 33, 65])?;
    out.push(CheckOutcome {
        name: "manufactured solution L2 order",
        passed: orders.iter().all(|o| (1.8..=2.2).contains(o)),
        detail: format!("orders {orders:.3?}"),
    });

    let dev = reference_stiffness_deviation()?;
    out.push(CheckOutcome {
        name: "reference triangle stiffness",
        passed: dev == 0.0,
        detail: format!("max deviation {dev:e}"),
    });
    Ok(out)
}
