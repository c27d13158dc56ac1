//! Volume form of the multi-shape derivative as a linear functional on P1
//! vector fields.
//!
//! The functional is the exact derivative of the discrete reduced objective
//! with respect to node positions: for `W_h = sum_i W_i phi_i`,
//! `dj[W_h] = sum_i rhs_i . W_i`. Per cell it collects
//!
//! * `-kappa grad y . (grad W + grad W^T) grad p`
//! * `div W (kappa grad y . grad p + (y - ybar)^2 / 2 + l p + e y)`
//! * `(grad kappa . W) grad y . grad p`
//! * `-(y - ybar) grad ybar . W`
//!
//! where `l`, `e` are the multipliers of the state and adjoint mean-value
//! constraints. The perimeter term is assembled edge-wise in
//! tangential-divergence form.

use crate::fem::VectorField;
use crate::geometry::{self, dot, Point};
use crate::mesh::TriMesh;
use crate::par;
use crate::physics::ForwardSolve;

/// Coefficients of the shape derivative with respect to every nodal vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDerivativeFunctional {
    pub rhs: VectorField,
    /// Nodes whose entries were forced to zero by the locality rule.
    pub zeroed_mask: Vec<bool>,
}

impl ShapeDerivativeFunctional {
    pub fn unmasked(rhs: VectorField) -> Self {
        let n = rhs.len();
        ShapeDerivativeFunctional {
            rhs,
            zeroed_mask: vec![false; n],
        }
    }

    /// `dj[W]`.
    pub fn apply(&self, w: &VectorField) -> f64 {
        self.rhs.dot(w)
    }
}

fn add(a: &mut Point, s: f64, v: Point) {
    a[0] += s * v[0];
    a[1] += s * v[1];
}

/// Contributions of one cell to its three nodes.
fn cell_kernel(mesh: &TriMesh, fwd: &ForwardSolve, cell: usize) -> [Point; 3] {
    let adjoint = fwd.adjoint.as_ref().expect("shape derivative needs the adjoint");
    let nodes = mesh.cells()[cell];
    let (g, area) = mesh.basis_gradients(cell);
    let (kappa, grad_kappa) = fwd.disc.cell_kappa[cell];
    let y = nodes.map(|i| fwd.state.y.values()[i]);
    let p = nodes.map(|i| adjoint.p.values()[i]);
    let e = [0, 1, 2].map(|k| y[k] - fwd.ybar_nodal[nodes[k]]);
    let mut gy = [0.0; 2];
    let mut gp = [0.0; 2];
    for k in 0..3 {
        add(&mut gy, y[k], g[k]);
        add(&mut gp, p[k], g[k]);
    }
    let yp = dot(gy, gp);
    let e_sum = e[0] + e[1] + e[2];
    let int_e2 = area / 6.0 * (e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + e[0] * e[1] + e[1] * e[2] + e[0] * e[2]);
    let p_mean = (p[0] + p[1] + p[2]) / 3.0;
    let y_mean = (y[0] + y[1] + y[2]) / 3.0;
    let div_coef = kappa * area * yp
        + 0.5 * int_e2
        + area * (fwd.state.multiplier * p_mean + adjoint.multiplier * y_mean);
    let mut out = [[0.0; 2]; 3];
    for k in 0..3 {
        let o = &mut out[k];
        add(o, -kappa * area * dot(g[k], gp), gy);
        add(o, -kappa * area * dot(g[k], gy), gp);
        add(o, div_coef, g[k]);
        add(o, area * yp / 3.0, grad_kappa);
        let me_k = area / 12.0 * (e[k] + e_sum);
        add(o, -me_k, fwd.ybar_grad[nodes[k]]);
    }
    out
}

/// Volume terms over the cells selected by `cells` (all cells if `None`).
pub fn assemble_volume_derivative_on(mesh: &TriMesh, fwd: &ForwardSolve, cells: Option<&[bool]>) -> VectorField {
    let locals = par::map_range(mesh.n_cells(), |c| match cells {
        Some(sel) if !sel[c] => None,
        _ => Some(cell_kernel(mesh, fwd, c)),
    });
    let mut rhs = vec![[0.0; 2]; mesh.n_nodes()];
    for (c, local) in locals.iter().enumerate() {
        if let Some(local) = local {
            for (k, &n) in mesh.cells()[c].iter().enumerate() {
                add(&mut rhs[n], 1.0, local[k]);
            }
        }
    }
    VectorField::new(rhs)
}

pub fn assemble_volume_derivative(mesh: &TriMesh, fwd: &ForwardSolve) -> VectorField {
    assemble_volume_derivative_on(mesh, fwd, None)
}

/// `nu_s d per(u_s)[W]` for one shape: each edge contributes
/// `nu_s tau . (W_b - W_a)`.
pub fn assemble_perimeter_derivative_of(mesh: &TriMesh, shape: usize, nu: f64, rhs: &mut [Point]) {
    let x = mesh.coords();
    for &[a, b] in mesh.interface_edges(shape) {
        let d = geometry::sub(x[b], x[a]);
        let len = geometry::norm(d);
        let tau = [d[0] / len, d[1] / len];
        add(&mut rhs[b], nu, tau);
        add(&mut rhs[a], -nu, tau);
    }
}

pub fn assemble_perimeter_derivative(mesh: &TriMesh, nu: &[f64]) -> VectorField {
    let mut rhs = vec![[0.0; 2]; mesh.n_nodes()];
    for (s, &w) in nu.iter().enumerate() {
        assemble_perimeter_derivative_of(mesh, s + 1, w, &mut rhs);
    }
    VectorField::new(rhs)
}

fn zero_boundary(mesh: &TriMesh, rhs: &mut VectorField) {
    for (i, v) in rhs.values_mut().iter_mut().enumerate() {
        if mesh.is_boundary_node(i) {
            *v = [0.0, 0.0];
        }
    }
}

/// Volume plus perimeter terms, with zero rows at boundary nodes.
pub fn assemble_shape_derivative(mesh: &TriMesh, fwd: &ForwardSolve, nu: &[f64]) -> VectorField {
    let mut rhs = assemble_volume_derivative(mesh, fwd);
    let per = assemble_perimeter_derivative(mesh, nu);
    for (r, q) in rhs.values_mut().iter_mut().zip(per.values()) {
        add(r, 1.0, *q);
    }
    zero_boundary(mesh, &mut rhs);
    rhs
}

/// Derivative of `J(., omega)` for the realization used in `fwd`; identical
/// assembly, the coefficient gradient comes from the KL expansion.
pub fn assemble_stochastic_derivative(mesh: &TriMesh, fwd: &ForwardSolve, nu: &[f64]) -> VectorField {
    assemble_shape_derivative(mesh, fwd, nu)
}

/// Partial derivative with respect to one shape: volume terms on the cells of
/// its partition cell and the perimeter term of that shape only.
pub fn assemble_partial_derivative(
    mesh: &TriMesh,
    fwd: &ForwardSolve,
    shape: usize,
    nu: f64,
    region: &[bool],
) -> VectorField {
    let mut rhs = assemble_volume_derivative_on(mesh, fwd, Some(region));
    assemble_perimeter_derivative_of(mesh, shape, nu, rhs.values_mut());
    zero_boundary(mesh, &mut rhs);
    rhs
}

/// Nodes none of whose adjacent cells touches an interface node.
pub fn locality_mask(mesh: &TriMesh) -> Vec<bool> {
    let topo = mesh.topology();
    let cell_touches: Vec<bool> = topo
        .cells
        .iter()
        .map(|c| c.iter().any(|&n| topo.interface_label[n] != 0))
        .collect();
    (0..mesh.n_nodes())
        .map(|i| !topo.node_cells[i].iter().any(|&c| cell_touches[c]))
        .collect()
}

/// Zero the derivative away from the shapes.
pub fn apply_locality_mask(rhs: VectorField, mesh: &TriMesh) -> ShapeDerivativeFunctional {
    let mask = locality_mask(mesh);
    let mut rhs = rhs;
    for (v, &m) in rhs.values_mut().iter_mut().zip(&mask) {
        if m {
            *v = [0.0, 0.0];
        }
    }
    ShapeDerivativeFunctional { rhs, zeroed_mask: mask }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ShapeSpec;
    use crate::mesh::{build_unit_square_mesh, embed_shapes, EmbedOptions};

    fn circle_mesh(r: f64) -> TriMesh {
        embed_shapes(
            &build_unit_square_mesh(41),
            &[ShapeSpec::Circle { center: [0.5, 0.5], radius: r }],
            &EmbedOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn perimeter_derivative_of_radial_field() {
        let m = circle_mesh(0.25);
        let rhs = assemble_perimeter_derivative(&m, &[1.0]);
        // W = (x - c)/|x - c| on interface nodes: d per = 2 pi for a circle
        let w: Vec<Point> = m
            .coords()
            .iter()
            .map(|x| {
                let d = [x[0] - 0.5, x[1] - 0.5];
                let n = geometry::norm(d);
                if n > 0.0 { [d[0] / n, d[1] / n] } else { [0.0, 0.0] }
            })
            .collect();
        let val = rhs.dot(&VectorField::new(w));
        assert!((val - 2.0 * std::f64::consts::PI).abs() < 2e-2 * 2.0 * std::f64::consts::PI, "{val}");
        // exact for the polygon: W = x - c scales the polygon, d per = per
        let w: Vec<Point> = m.coords().iter().map(|x| [x[0] - 0.5, x[1] - 0.5]).collect();
        assert!((rhs.dot(&VectorField::new(w)) - m.interface_length(1)).abs() < 1e-12);
    }

    #[test]
    fn perimeter_derivative_is_translation_invariant() {
        let m = circle_mesh(0.2);
        let rhs = assemble_perimeter_derivative(&m, &[0.3]);
        let w = VectorField::new(vec![[1.0, -2.0]; m.n_nodes()]);
        assert!(rhs.dot(&w).abs() < 1e-12);
        let shifted = m.with_coords(m.coords().iter().map(|x| [x[0] + 0.01, x[1] - 0.02]).collect());
        let rhs2 = assemble_perimeter_derivative(&shifted, &[0.3]);
        for (a, b) in rhs.values().iter().zip(rhs2.values()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_zeroes_far_nodes_only() {
        let m = circle_mesh(0.2);
        let rhs = VectorField::new(vec![[1.0, 1.0]; m.n_nodes()]);
        let f = apply_locality_mask(rhs, &m);
        let topo = m.topology();
        for i in 0..m.n_nodes() {
            let near = topo.node_cells[i]
                .iter()
                .any(|&c| topo.cells[c].iter().any(|&n| topo.interface_label[n] != 0));
            assert_eq!(f.zeroed_mask[i], !near);
            assert_eq!(f.rhs.values()[i], if near { [1.0, 1.0] } else { [0.0, 0.0] });
        }
        assert!(f.zeroed_mask[0]);
    }
}
