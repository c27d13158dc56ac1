//! Descent fields from the shape derivative: the elasticity deformation
//! equation `a(V, W) = dj[W]` with a spatially varying Lame parameter `mu`,
//! plus a substructured solve used to check the equivalence with one
//! variational problem per partition cell.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{self, CsrMatrix, ScalarField, SparseSystem, VectorField};
use crate::mesh::TriMesh;
use crate::shape_calculus::ShapeDerivativeFunctional;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformationConfig {
    pub lambda: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub rtol: f64,
    /// Positive factor `s` in `a(V, W) = s dj[W]`; the induced metric is
    /// `a / s`, so `s` rescales descent fields without changing directions.
    pub gradient_scale: f64,
}

impl Default for DeformationConfig {
    fn default() -> Self {
        DeformationConfig {
            lambda: 0.0,
            mu_min: 10.0,
            mu_max: 25.0,
            rtol: fem::DEFAULT_RTOL,
            gradient_scale: 1.0,
        }
    }
}

/// Harmonic `mu` with `mu_max` on every interface node and `mu_min` on the
/// outer boundary, clamped to `[mu_min, mu_max]`.
pub fn solve_mu_field(mesh: &TriMesh, cfg: &DeformationConfig) -> Result<ScalarField> {
    assert!(cfg.mu_min > 0.0 && cfg.mu_min <= cfg.mu_max, "0 < mu_min <= mu_max");
    let n = mesh.n_nodes();
    if cfg.mu_min == cfg.mu_max {
        return Ok(ScalarField::new(vec![cfg.mu_min; n]));
    }
    let mut k = fem::assemble_diffusion(mesh, &vec![1.0; mesh.n_cells()])?;
    let mut rhs = vec![0.0; n];
    let topo = mesh.topology();
    let prescribed: Vec<(usize, f64)> = (0..n)
        .filter_map(|i| {
            if topo.interface_label[i] != 0 {
                Some((i, cfg.mu_max))
            } else if topo.is_boundary_node[i] {
                Some((i, cfg.mu_min))
            } else {
                None
            }
        })
        .collect();
    k.apply_dirichlet(&mut rhs, &prescribed);
    let (mut mu, _) = fem::solve_spd(
        &SparseSystem {
            matrix: k,
            rhs,
            mean_weights: None,
        },
        cfg.rtol,
    )?;
    for &(i, value) in &prescribed {
        mu[i] = value;
    }
    Ok(ScalarField::new(
        mu.into_iter().map(|v| v.clamp(cfg.mu_min, cfg.mu_max)).collect(),
    ))
}

fn boundary_dofs(mesh: &TriMesh) -> Vec<(usize, f64)> {
    (0..mesh.n_nodes())
        .filter(|&i| mesh.is_boundary_node(i))
        .flat_map(|i| [(2 * i, 0.0), (2 * i + 1, 0.0)])
        .collect()
}

/// `V` in the discrete `H^1_0` with `a(V, W) = s functional(W)` for all `W`.
pub fn solve_deformation(
    mesh: &TriMesh,
    functional: &ShapeDerivativeFunctional,
    mu: &ScalarField,
    cfg: &DeformationConfig,
) -> Result<VectorField> {
    let mut k = fem::assemble_elasticity(mesh, cfg.lambda, mu)?;
    let mut rhs: Vec<f64> = functional
        .rhs
        .to_interleaved()
        .into_iter()
        .map(|v| cfg.gradient_scale * v)
        .collect();
    let fixed = boundary_dofs(mesh);
    k.apply_dirichlet(&mut rhs, &fixed);
    let (mut v, _) = fem::solve_spd(
        &SparseSystem {
            matrix: k,
            rhs,
            mean_weights: None,
        },
        cfg.rtol,
    )?;
    for &(d, _) in &fixed {
        v[d] = 0.0;
    }
    Ok(VectorField::from_interleaved(&v))
}

/// Squared metric norm `a(V, V) / s`.
pub fn deformation_norm(mesh: &TriMesh, v: &VectorField, mu: &ScalarField, cfg: &DeformationConfig) -> Result<f64> {
    let k = fem::assemble_elasticity(mesh, cfg.lambda, mu)?;
    let x = v.to_interleaved();
    Ok(k.bilinear(&x, &x) / cfg.gradient_scale)
}

/// Full `H^1` norm `(|V|_1^2 + |V|_0^2)^(1/2)`, used to compare solutions.
pub fn h1_norm(mesh: &TriMesh, v: &VectorField) -> Result<f64> {
    let k = fem::assemble_diffusion(mesh, &vec![1.0; mesh.n_cells()])?;
    let m = fem::assemble_mass(mesh);
    let mut total = 0.0;
    for a in 0..2 {
        let comp: Vec<f64> = v.values().iter().map(|x| x[a]).collect();
        total += k.bilinear(&comp, &comp) + m.bilinear(&comp, &comp);
    }
    Ok(total.sqrt())
}

/// Validate that `cell_part` (one partition index per cell) is admissible:
/// as many parts as shapes, and every shape together with the cells touching
/// its interface lies in exactly one part, one shape per part.
pub fn check_partition(mesh: &TriMesh, cell_part: &[usize]) -> Result<usize> {
    if cell_part.len() != mesh.n_cells() {
        return Err(Error::InvalidPartition("one part index per cell required".into()));
    }
    let n_parts = cell_part.iter().max().map_or(0, |m| m + 1);
    if n_parts != mesh.n_shapes() {
        return Err(Error::InvalidPartition(format!(
            "{n_parts} parts for {} shapes",
            mesh.n_shapes()
        )));
    }
    let topo = mesh.topology();
    let mut owner = vec![usize::MAX; n_parts];
    for s in 1..=mesh.n_shapes() {
        let mut part = None;
        let shape_cells = (0..mesh.n_cells()).filter(|&c| {
            mesh.cell_subdomain()[c] as usize == s
                || topo.cells[c].iter().any(|&n| topo.interface_label[n] as usize == s)
        });
        for c in shape_cells {
            match part {
                None => part = Some(cell_part[c]),
                Some(p) if p != cell_part[c] => {
                    return Err(Error::InvalidPartition(format!("shape {s} straddles parts {p} and {}", cell_part[c])))
                }
                _ => {}
            }
        }
        let p = part.expect("shape has cells");
        if owner[p] != usize::MAX {
            return Err(Error::InvalidPartition(format!("part {p} contains shapes {} and {s}", owner[p])));
        }
        owner[p] = s;
    }
    Ok(n_parts)
}

fn pcg_solve(a: &CsrMatrix, b: &[f64], rtol: f64) -> Result<Vec<f64>> {
    Ok(fem::pcg(a, b, None, rtol, (20 * a.dim()).max(1000))?.0)
}

/// Substructured solve: one elasticity problem per partition cell, coupled
/// through shared interface unknowns by a dense Schur complement.
pub fn solve_deformation_partitioned(
    mesh: &TriMesh,
    functional: &ShapeDerivativeFunctional,
    mu: &ScalarField,
    cfg: &DeformationConfig,
    cell_part: &[usize],
) -> Result<VectorField> {
    let n_parts = check_partition(mesh, cell_part)?;
    let n = mesh.n_nodes();
    let topo = mesh.topology();
    // parts touching each node
    let mut node_parts: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (c, cell) in topo.cells.iter().enumerate() {
        for &v in cell {
            if !node_parts[v].contains(&cell_part[c]) {
                node_parts[v].push(cell_part[c]);
            }
        }
    }
    let free = |v: usize| !topo.is_boundary_node[v];
    let gamma: Vec<usize> = (0..n)
        .filter(|&v| free(v) && node_parts[v].len() > 1)
        .flat_map(|v| [2 * v, 2 * v + 1])
        .collect();
    let interior: Vec<Vec<usize>> = (0..n_parts)
        .map(|p| {
            (0..n)
                .filter(|&v| free(v) && node_parts[v] == [p])
                .flat_map(|v| [2 * v, 2 * v + 1])
                .collect()
        })
        .collect();
    let f: Vec<f64> = functional
        .rhs
        .to_interleaved()
        .into_iter()
        .map(|v| cfg.gradient_scale * v)
        .collect();
    let ng = gamma.len();
    let mut schur = DMatrix::<f64>::zeros(ng, ng);
    let mut g = DVector::from_iterator(ng, gamma.iter().map(|&d| f[d]));
    let solve_rtol = cfg.rtol.min(1e-12);
    let mut parts = Vec::with_capacity(n_parts);
    for p in 0..n_parts {
        let sel: Vec<bool> = cell_part.iter().map(|&q| q == p).collect();
        let kp = fem::assemble_elasticity_on(mesh, cfg.lambda, mu, Some(&sel))?;
        let ip = &interior[p];
        let kii = kp.submatrix(ip);
        let mut unit = vec![0.0; 2 * n];
        let mut lifted = vec![0.0; 2 * n];
        for (col, &dj) in gamma.iter().enumerate() {
            unit[dj] = 1.0;
            let kcol = kp.mul(&unit);
            unit[dj] = 0.0;
            if kcol.iter().all(|&v| v == 0.0) {
                continue;
            }
            let rhs: Vec<f64> = ip.iter().map(|&d| kcol[d]).collect();
            let z = if rhs.iter().all(|&v| v == 0.0) {
                vec![0.0; ip.len()]
            } else {
                pcg_solve(&kii, &rhs, solve_rtol)?
            };
            for (k, &d) in ip.iter().enumerate() {
                lifted[d] = z[k];
            }
            let kz = kp.mul(&lifted);
            for (row, &di) in gamma.iter().enumerate() {
                schur[(row, col)] += kcol[di] - kz[di];
            }
            for &d in ip {
                lifted[d] = 0.0;
            }
        }
        let fi: Vec<f64> = ip.iter().map(|&d| f[d]).collect();
        let zf = if fi.iter().all(|&v| v == 0.0) {
            vec![0.0; ip.len()]
        } else {
            pcg_solve(&kii, &fi, solve_rtol)?
        };
        let mut lifted = vec![0.0; 2 * n];
        for (k, &d) in ip.iter().enumerate() {
            lifted[d] = zf[k];
        }
        let kz = kp.mul(&lifted);
        for (row, &di) in gamma.iter().enumerate() {
            g[row] -= kz[di];
        }
        parts.push((kp, kii));
    }
    let v_gamma = if ng == 0 {
        DVector::zeros(0)
    } else {
        let chol = schur
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidPartition("interface Schur complement is not positive definite".into()))?;
        chol.solve(&g)
    };
    let mut v = vec![0.0; 2 * n];
    for (k, &d) in gamma.iter().enumerate() {
        v[d] = v_gamma[k];
    }
    let mut gamma_only = vec![0.0; 2 * n];
    for &d in &gamma {
        gamma_only[d] = v[d];
    }
    for (p, (kp, kii)) in parts.iter().enumerate() {
        let ip = &interior[p];
        let kg = kp.mul(&gamma_only);
        let rhs: Vec<f64> = ip.iter().map(|&d| f[d] - kg[d]).collect();
        let z = if rhs.iter().all(|&x| x == 0.0) {
            vec![0.0; ip.len()]
        } else {
            pcg_solve(kii, &rhs, solve_rtol)?
        };
        for (k, &d) in ip.iter().enumerate() {
            v[d] = z[k];
        }
    }
    Ok(VectorField::from_interleaved(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ShapeSpec;
    use crate::mesh::{build_unit_square_mesh, embed_shapes, EmbedOptions};

    fn one_circle() -> TriMesh {
        embed_shapes(
            &build_unit_square_mesh(21),
            &[ShapeSpec::Circle { center: [0.5, 0.5], radius: 0.2 }],
            &EmbedOptions::default(),
        )
        .unwrap()
    }

    fn smooth_functional(mesh: &TriMesh) -> ShapeDerivativeFunctional {
        let rhs = mesh
            .coords()
            .iter()
            .enumerate()
            .map(|(i, x)| {
                if mesh.is_boundary_node(i) {
                    [0.0, 0.0]
                } else {
                    [(3.0 * x[0]).sin(), x[0] * x[1] - 0.2]
                }
            })
            .collect();
        ShapeDerivativeFunctional::unmasked(VectorField::new(rhs))
    }

    #[test]
    fn mu_field_respects_dirichlet_data_and_bounds() {
        let m = one_circle();
        let cfg = DeformationConfig::default();
        let mu = solve_mu_field(&m, &cfg).unwrap();
        for i in 0..m.n_nodes() {
            let v = mu.values()[i];
            assert!((cfg.mu_min..=cfg.mu_max).contains(&v));
            if m.topology().interface_label[i] != 0 {
                assert_eq!(v, cfg.mu_max);
            } else if m.is_boundary_node(i) {
                assert_eq!(v, cfg.mu_min);
            }
        }
        let flat = DeformationConfig { mu_min: 4.0, mu_max: 4.0, ..cfg };
        assert!(solve_mu_field(&m, &flat).unwrap().values().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn deformation_is_descent_and_galerkin_consistent() {
        let m = one_circle();
        let cfg = DeformationConfig::default();
        let mu = solve_mu_field(&m, &cfg).unwrap();
        let f = smooth_functional(&m);
        let v = solve_deformation(&m, &f, &mu, &cfg).unwrap();
        let a = deformation_norm(&m, &v, &mu, &cfg).unwrap();
        assert!(a > 0.0);
        assert!((f.apply(&v) - a).abs() <= 1e-8 * a);
        assert!(f.apply(&v.scaled(-1.0)) < 0.0);
        for i in 0..m.n_nodes() {
            if m.is_boundary_node(i) {
                assert_eq!(v.values()[i], [0.0, 0.0]);
            }
        }
        let zero = ShapeDerivativeFunctional::unmasked(VectorField::zeros(m.n_nodes()));
        assert!(solve_deformation(&m, &zero, &mu, &cfg).unwrap().values().iter().all(|x| *x == [0.0, 0.0]));
    }

    #[test]
    fn larger_mu_gives_smaller_norm() {
        let m = one_circle();
        let cfg = DeformationConfig::default();
        let f = smooth_functional(&m);
        let mu1 = solve_mu_field(&m, &cfg).unwrap();
        let mu2 = ScalarField::new(mu1.values().iter().map(|v| v * 1.5).collect());
        let v1 = solve_deformation(&m, &f, &mu1, &cfg).unwrap();
        let v2 = solve_deformation(&m, &f, &mu2, &cfg).unwrap();
        assert!(deformation_norm(&m, &v2, &mu2, &cfg).unwrap() < deformation_norm(&m, &v1, &mu1, &cfg).unwrap());
    }

    #[test]
    fn single_part_matches_monolithic() {
        let m = one_circle();
        let cfg = DeformationConfig { rtol: 1e-12, ..Default::default() };
        let mu = solve_mu_field(&m, &cfg).unwrap();
        let f = smooth_functional(&m);
        let mono = solve_deformation(&m, &f, &mu, &cfg).unwrap();
        let part = solve_deformation_partitioned(&m, &f, &mu, &cfg, &vec![0; m.n_cells()]).unwrap();
        let diff = VectorField::new(mono.values().iter().zip(part.values()).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect());
        assert!(h1_norm(&m, &diff).unwrap() <= 1e-8 * h1_norm(&m, &mono).unwrap());
    }

    #[test]
    fn wrong_part_count_is_rejected() {
        let m = one_circle();
        let cfg = DeformationConfig::default();
        let mu = solve_mu_field(&m, &cfg).unwrap();
        let parts: Vec<usize> = (0..m.n_cells()).map(|c| usize::from(m.centroid(c)[0] > 0.5)).collect();
        assert!(matches!(
            solve_deformation_partitioned(&m, &smooth_functional(&m), &mu, &cfg, &parts),
            Err(Error::InvalidPartition(_))
        ));
    }
}
