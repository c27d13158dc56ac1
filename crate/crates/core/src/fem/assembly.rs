//! P1 assembly kernels. Per-cell work runs through `par`; scattering into the
//! global matrix is sequential so results do not depend on thread count.

use super::{CsrMatrix, ScalarField};
use crate::error::{Error, Result};
use crate::geometry::{self, dot};
use crate::mesh::TriMesh;
use crate::par;

/// Stiffness matrix of `-div(kappa grad y)` with one coefficient per cell.
pub fn assemble_diffusion(mesh: &TriMesh, cell_kappa: &[f64]) -> Result<CsrMatrix> {
    assert_eq!(cell_kappa.len(), mesh.n_cells());
    if let Some((cell, &value)) = cell_kappa
        .iter()
        .enumerate()
        .find(|(_, &k)| !(k > 0.0 && k.is_finite()))
    {
        return Err(Error::NonpositiveCoefficient { cell, value });
    }
    let locals = par::map_range(mesh.n_cells(), |c| {
        let (g, area) = mesh.basis_gradients(c);
        let w = cell_kappa[c] * area;
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] = w * dot(g[i], g[j]);
            }
        }
        k
    });
    let mut a = CsrMatrix::from_node_pattern(&mesh.topology().node_neighbors, 1);
    for (c, k) in locals.iter().enumerate() {
        let cell = mesh.cells()[c];
        for i in 0..3 {
            for j in 0..3 {
                a.add(cell[i], cell[j], k[i][j]);
            }
        }
    }
    Ok(a)
}

/// Consistent P1 mass matrix.
pub fn assemble_mass(mesh: &TriMesh) -> CsrMatrix {
    let mut m = CsrMatrix::from_node_pattern(&mesh.topology().node_neighbors, 1);
    for c in 0..mesh.n_cells() {
        let cell = mesh.cells()[c];
        let area = mesh.cell_area(c);
        for i in 0..3 {
            for j in 0..3 {
                let f = if i == j { 2.0 } else { 1.0 };
                m.add(cell[i], cell[j], f * area / 12.0);
            }
        }
    }
    m
}

/// `m_i = integral of phi_i`, equal to the row sums of the mass matrix.
pub fn lumped_mass(mesh: &TriMesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.n_nodes()];
    for c in 0..mesh.n_cells() {
        let a3 = mesh.cell_area(c) / 3.0;
        for &n in &mesh.cells()[c] {
            m[n] += a3;
        }
    }
    m
}

/// Neumann flux on the outer boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryLoad {
    Constant(f64),
    /// One value per entry of `TriMesh::boundary_edges`.
    PerEdge(Vec<f64>),
}

/// Load vector of `integral over dD of g phi_i`, with `g` constant per edge.
pub fn assemble_neumann_load(mesh: &TriMesh, load: &BoundaryLoad) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_nodes()];
    let coords = mesh.coords();
    for (e, &[p, q]) in mesh.boundary_edges().iter().enumerate() {
        let g = match load {
            BoundaryLoad::Constant(g) => *g,
            BoundaryLoad::PerEdge(v) => v[e],
        };
        let half = 0.5 * g * geometry::norm(geometry::sub(coords[q], coords[p]));
        b[p] += half;
        b[q] += half;
    }
    b
}

/// Linear elasticity `a(V, W) = integral of lambda divV divW + 2 mu eps(V):eps(W)`
/// on interleaved dofs `(2 n, 2 n + 1)`. `mu` is nodal and averaged per cell.
pub fn assemble_elasticity(mesh: &TriMesh, lambda: f64, mu: &ScalarField) -> Result<CsrMatrix> {
    assemble_elasticity_on(mesh, lambda, mu, None)
}

/// Elasticity restricted to the cells selected by `cells`; the pattern is
/// still that of the whole mesh.
pub fn assemble_elasticity_on(mesh: &TriMesh, lambda: f64, mu: &ScalarField, cells: Option<&[bool]>) -> Result<CsrMatrix> {
    assert_eq!(mu.len(), mesh.n_nodes());
    if let Some((node, &value)) = mu
        .values()
        .iter()
        .enumerate()
        .find(|(_, &m)| !(m > 0.0 && m.is_finite()))
    {
        return Err(Error::NonpositiveMu { node, value });
    }
    let mu = mu.values();
    let locals = par::map_range(mesh.n_cells(), |c| {
        let cell = mesh.cells()[c];
        let (g, area) = mesh.basis_gradients(c);
        let mu_c = (mu[cell[0]] + mu[cell[1]] + mu[cell[2]]) / 3.0;
        let mut k = [[0.0; 6]; 6];
        for i in 0..3 {
            for a in 0..2 {
                for j in 0..3 {
                    for b in 0..2 {
                        let delta = if a == b { dot(g[i], g[j]) } else { 0.0 };
                        k[2 * i + a][2 * j + b] = area
                            * (lambda * g[i][a] * g[j][b] + mu_c * (delta + g[i][b] * g[j][a]));
                    }
                }
            }
        }
        k
    });
    let mut m = CsrMatrix::from_node_pattern(&mesh.topology().node_neighbors, 2);
    for (c, k) in locals.iter().enumerate() {
        if cells.is_some_and(|sel| !sel[c]) {
            continue;
        }
        let cell = mesh.cells()[c];
        for i in 0..3 {
            for a in 0..2 {
                for j in 0..3 {
                    for b in 0..2 {
                        m.add(2 * cell[i] + a, 2 * cell[j] + b, k[2 * i + a][2 * j + b]);
                    }
                }
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;

    fn reference_triangle() -> TriMesh {
        TriMesh::from_parts(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn reference_stiffness() {
        let k = assemble_diffusion(&reference_triangle(), &[1.0]).unwrap();
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k.get(i, j) - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_symmetric_with_zero_row_sums() {
        let m = build_unit_square_mesh(7);
        let kappa: Vec<f64> = (0..m.n_cells()).map(|c| 1.0 + c as f64 * 0.1).collect();
        let k = assemble_diffusion(&m, &kappa).unwrap();
        assert!(k.max_asymmetry() < 1e-12);
        assert!(k.row_sums().iter().all(|s| s.abs() < 1e-10));
    }

    #[test]
    fn nonpositive_kappa_rejected() {
        let m = build_unit_square_mesh(3);
        let mut kappa = vec![1.0; m.n_cells()];
        kappa[3] = 0.0;
        assert!(matches!(
            assemble_diffusion(&m, &kappa),
            Err(Error::NonpositiveCoefficient { cell: 3, .. })
        ));
    }

    #[test]
    fn mass_sums_to_area() {
        let m = build_unit_square_mesh(5);
        let mm = assemble_mass(&m);
        let ones = vec![1.0; m.n_nodes()];
        assert!((mm.bilinear(&ones, &ones) - 1.0).abs() < 1e-14);
        let lumped = lumped_mass(&m);
        for (a, b) in lumped.iter().zip(mm.row_sums()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn neumann_load_totals() {
        let r = 11;
        let m = build_unit_square_mesh(r);
        let b = assemble_neumann_load(&m, &BoundaryLoad::Constant(1000.0));
        assert!((b.iter().sum::<f64>() - 4000.0).abs() < 1e-9);
        // interior edge node receives g h, a corner receives g h
        let h = 1.0 / (r - 1) as f64;
        assert!((b[1] - 1000.0 * h).abs() < 1e-10);
        assert!((b[0] - 1000.0 * h).abs() < 1e-10);
        assert_eq!(b[r + 1], 0.0);
    }

    #[test]
    fn per_edge_load_on_single_edge() {
        let m = build_unit_square_mesh(3);
        let mut g = vec![0.0; m.boundary_edges().len()];
        g[0] = 2.0;
        let b = assemble_neumann_load(&m, &BoundaryLoad::PerEdge(g));
        let [p, q] = m.boundary_edges()[0];
        assert!((b[p] - 0.5).abs() < 1e-15 && (b[q] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn elasticity_rigid_motions_have_zero_energy() {
        let m = build_unit_square_mesh(6);
        let mu = ScalarField::new(vec![1.0; m.n_nodes()]);
        let k = assemble_elasticity(&m, 0.0, &mu).unwrap();
        assert!(k.max_asymmetry() < 1e-12);
        let trans: Vec<f64> = (0..m.n_nodes()).flat_map(|_| [0.3, -1.2]).collect();
        let rot: Vec<f64> = m.coords().iter().flat_map(|x| [-x[1], x[0]]).collect();
        assert!(k.bilinear(&trans, &trans).abs() < 1e-12);
        assert!(k.bilinear(&rot, &rot).abs() < 1e-12);
    }

    #[test]
    fn elasticity_energy_of_shear() {
        // V = (y, 0): eps = [[0, 1/2], [1/2, 0]], 2 mu |eps|^2 = mu on the unit square
        let m = build_unit_square_mesh(4);
        let mu = ScalarField::new(vec![1.0; m.n_nodes()]);
        let k = assemble_elasticity(&m, 0.0, &mu).unwrap();
        let v: Vec<f64> = m.coords().iter().flat_map(|x| [x[1], 0.0]).collect();
        assert!((k.bilinear(&v, &v) - 1.0).abs() < 1e-12);
        // V = (x, 0) with lambda = 2: lambda + 2 mu = 4
        let k2 = assemble_elasticity(&m, 2.0, &mu).unwrap();
        let u: Vec<f64> = m.coords().iter().flat_map(|x| [x[0], 0.0]).collect();
        assert!((k2.bilinear(&u, &u) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_mu_rejected() {
        let m = build_unit_square_mesh(3);
        let mut mu = vec![1.0; m.n_nodes()];
        mu[2] = -1.0;
        assert!(matches!(
            assemble_elasticity(&m, 0.0, &ScalarField::new(mu)),
            Err(Error::NonpositiveMu { node: 2, .. })
        ));
    }
}
