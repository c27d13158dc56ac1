//! Triangular hold-all mesh with subdomain labels and mesh-conforming
//! interfaces.
//!
//! Label 0 is the outer domain; label `i >= 1` is the region enclosed by
//! shape `i`. Interfaces are stored as closed node loops oriented
//! counterclockwise around their shape. Topology is shared between a mesh
//! and every mesh deformed from it.

mod embed;
pub mod vtk;

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::VectorField;
use crate::geometry::{self, Point};
use crate::par;

pub use embed::{embed_shapes, EmbedOptions};

/// Connectivity and labels. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub cells: Vec<[usize; 3]>,
    pub cell_subdomain: Vec<u32>,
    pub boundary_edges: Vec<[usize; 2]>,
    /// `interface_edges[s]` belongs to shape `s + 1`, oriented with the shape
    /// on the left.
    pub interface_edges: Vec<Vec<[usize; 2]>>,
    /// Ordered node loops, one per shape, counterclockwise.
    pub interface_loops: Vec<Vec<usize>>,
    /// Unique undirected edges, each stored as `[min, max]`, sorted.
    pub edges: Vec<[usize; 2]>,
    pub node_neighbors: Vec<Vec<usize>>,
    pub node_cells: Vec<Vec<usize>>,
    pub is_boundary_node: Vec<bool>,
    /// 0 for nodes on no interface, otherwise the shape label.
    pub interface_label: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    coords: Vec<Point>,
    topo: Arc<Topology>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshQualityReport {
    pub min_signed_area: f64,
    /// 2 * inradius / circumradius, 1 for an equilateral triangle; negative
    /// for inverted cells.
    pub min_aspect_ratio: f64,
    pub worst_cell: usize,
}

impl MeshQualityReport {
    pub fn is_valid(&self) -> bool {
        self.min_signed_area > 0.0
    }
}

impl TriMesh {
    /// Build a mesh from raw parts. Interfaces are derived from the labels.
    pub fn from_parts(coords: Vec<Point>, cells: Vec<[usize; 3]>, labels: Vec<u32>) -> Result<Self> {
        let topo = Topology::build(coords.len(), cells, labels)?;
        Ok(TriMesh {
            coords,
            topo: Arc::new(topo),
        })
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_cells(&self) -> usize {
        self.topo.cells.len()
    }

    pub fn n_shapes(&self) -> usize {
        self.topo.interface_loops.len()
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.topo.cells
    }

    pub fn cell_subdomain(&self) -> &[u32] {
        &self.topo.cell_subdomain
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.topo.boundary_edges
    }

    pub fn interface_edges(&self, shape: usize) -> &[[usize; 2]] {
        &self.topo.interface_edges[shape - 1]
    }

    pub fn interface_loop(&self, shape: usize) -> &[usize] {
        &self.topo.interface_loops[shape - 1]
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        self.topo.is_boundary_node[node]
    }

    pub fn cell_points(&self, cell: usize) -> [Point; 3] {
        let [a, b, c] = self.topo.cells[cell];
        [self.coords[a], self.coords[b], self.coords[c]]
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cell_points(cell);
        0.5 * geometry::orient(a, b, c)
    }

    pub fn centroid(&self, cell: usize) -> Point {
        let [a, b, c] = self.cell_points(cell);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Gradients of the three P1 basis functions on `cell` and its signed area.
    pub fn basis_gradients(&self, cell: usize) -> ([Point; 3], f64) {
        let [a, b, c] = self.cell_points(cell);
        let det = geometry::orient(a, b, c);
        let inv = 1.0 / det;
        let g = [
            [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
            [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
            [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
        ];
        (g, 0.5 * det)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_area(c)).sum()
    }

    pub fn max_cell_diameter(&self) -> f64 {
        (0..self.n_cells())
            .map(|c| {
                let [a, b, d] = self.cell_points(c);
                geometry::norm(geometry::sub(a, b))
                    .max(geometry::norm(geometry::sub(b, d)))
                    .max(geometry::norm(geometry::sub(d, a)))
            })
            .fold(0.0, f64::max)
    }

    /// Counterclockwise polygon traced by shape `shape`'s interface.
    pub fn interface_polygon(&self, shape: usize) -> Vec<Point> {
        self.interface_loop(shape)
            .iter()
            .map(|&n| self.coords[n])
            .collect()
    }

    pub fn interface_length(&self, shape: usize) -> f64 {
        self.interface_edges(shape)
            .iter()
            .map(|&[a, b]| geometry::norm(geometry::sub(self.coords[b], self.coords[a])))
            .sum()
    }

    /// Same topology and labels with new node positions.
    pub fn with_coords(&self, coords: Vec<Point>) -> TriMesh {
        assert_eq!(coords.len(), self.coords.len());
        TriMesh {
            coords,
            topo: Arc::clone(&self.topo),
        }
    }

    /// Lagrangian update `x <- x - t V(x)`. Connectivity and labels are kept.
    pub fn deform(&self, v: &VectorField, t: f64) -> TriMesh {
        assert_eq!(v.len(), self.n_nodes());
        let coords = self
            .coords
            .iter()
            .zip(v.values())
            .map(|(x, d)| [x[0] - t * d[0], x[1] - t * d[1]])
            .collect();
        self.with_coords(coords)
    }

    pub fn quality_report(&self) -> MeshQualityReport {
        let per_cell = par::map_range(self.n_cells(), |c| {
            let [a, b, d] = self.cell_points(c);
            let area = 0.5 * geometry::orient(a, b, d);
            let la = geometry::norm(geometry::sub(b, d));
            let lb = geometry::norm(geometry::sub(d, a));
            let lc = geometry::norm(geometry::sub(a, b));
            let denom = (la + lb + lc) * la * lb * lc;
            let aspect = if denom > 0.0 {
                16.0 * area * area.abs() / denom
            } else {
                0.0
            };
            (area, aspect)
        });
        let mut report = MeshQualityReport {
            min_signed_area: f64::INFINITY,
            min_aspect_ratio: f64::INFINITY,
            worst_cell: 0,
        };
        for (c, (area, aspect)) in per_cell.into_iter().enumerate() {
            report.min_signed_area = report.min_signed_area.min(area);
            if aspect < report.min_aspect_ratio {
                report.min_aspect_ratio = aspect;
                report.worst_cell = c;
            }
        }
        report
    }

    /// Relabel cells from mesh-conforming closed curves (node loops).
    pub fn label_subdomains(&self, curves: &[Vec<usize>]) -> Result<TriMesh> {
        let topo = &self.topo;
        let edge_set: std::collections::HashSet<[usize; 2]> = topo.edges.iter().copied().collect();
        let mut owner = vec![0usize; self.n_nodes()];
        for (ci, curve) in curves.iter().enumerate() {
            if curve.len() < 3 {
                return Err(Error::InvalidCurve {
                    curve: ci + 1,
                    reason: "fewer than three nodes".into(),
                });
            }
            for (k, &a) in curve.iter().enumerate() {
                let b = curve[(k + 1) % curve.len()];
                if !edge_set.contains(&[a.min(b), a.max(b)]) {
                    return Err(Error::NonConformingCurve { curve: ci + 1, a, b });
                }
                if owner[a] != 0 && owner[a] != ci + 1 {
                    return Err(Error::IntersectingShapes {
                        first: owner[a],
                        second: ci + 1,
                    });
                }
                if owner[a] == ci + 1 {
                    return Err(Error::InvalidCurve {
                        curve: ci + 1,
                        reason: format!("node {a} visited twice"),
                    });
                }
                owner[a] = ci + 1;
            }
        }
        let polys: Vec<Vec<Point>> = curves
            .iter()
            .map(|c| c.iter().map(|&n| self.coords[n]).collect())
            .collect();
        let per_cell = par::map_range(self.n_cells(), |cell| {
            let p = self.centroid(cell);
            let mut label = 0u32;
            for (ci, poly) in polys.iter().enumerate() {
                match geometry::winding_number(p, poly) {
                    None => return Err(Error::NonConformingCurve { curve: ci + 1, a: 0, b: 0 }),
                    Some(0) => {}
                    Some(_) => {
                        if label != 0 {
                            return Err(Error::IntersectingShapes {
                                first: label as usize,
                                second: ci + 1,
                            });
                        }
                        label = ci as u32 + 1;
                    }
                }
            }
            Ok(label)
        });
        let labels = per_cell.into_iter().collect::<Result<Vec<u32>>>()?;
        let mesh = TriMesh::from_parts(self.coords.clone(), topo.cells.clone(), labels)?;
        if mesh.n_shapes() != curves.len() {
            return Err(Error::InvalidCurve {
                curve: mesh.n_shapes().min(curves.len()) + 1,
                reason: "curve encloses no cells".into(),
            });
        }
        // every curve edge must be an interface edge of its own shape
        for (ci, curve) in curves.iter().enumerate() {
            let iface: std::collections::HashSet<[usize; 2]> = mesh
                .interface_edges(ci + 1)
                .iter()
                .map(|&[a, b]| [a.min(b), a.max(b)])
                .collect();
            if iface.len() != curve.len() {
                return Err(Error::InvalidCurve {
                    curve: ci + 1,
                    reason: "curve does not bound its labeled region".into(),
                });
            }
            for (k, &a) in curve.iter().enumerate() {
                let b = curve[(k + 1) % curve.len()];
                if !iface.contains(&[a.min(b), a.max(b)]) {
                    return Err(Error::InvalidCurve {
                        curve: ci + 1,
                        reason: format!("edge ({a}, {b}) does not separate shape from outer domain"),
                    });
                }
            }
        }
        Ok(mesh)
    }
}

impl Topology {
    fn build(n_nodes: usize, cells: Vec<[usize; 3]>, labels: Vec<u32>) -> Result<Self> {
        assert_eq!(cells.len(), labels.len(), "one label per cell");
        let mut edge_cells: HashMap<[usize; 2], Vec<(usize, usize, usize)>> = HashMap::new();
        for (ci, cell) in cells.iter().enumerate() {
            for k in 0..3 {
                let a = cell[k];
                let b = cell[(k + 1) % 3];
                edge_cells
                    .entry([a.min(b), a.max(b)])
                    .or_default()
                    .push((ci, a, b));
            }
        }
        let mut edges: Vec<[usize; 2]> = edge_cells.keys().copied().collect();
        edges.sort_unstable();

        let mut boundary_edges = Vec::new();
        let mut is_boundary_node = vec![false; n_nodes];
        let n_shapes = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut interface_edges = vec![Vec::new(); n_shapes];
        let mut interface_label = vec![0u32; n_nodes];
        for e in &edges {
            let adj = &edge_cells[e];
            match adj.as_slice() {
                [(_, a, b)] => {
                    boundary_edges.push([*a, *b]);
                    is_boundary_node[*a] = true;
                    is_boundary_node[*b] = true;
                }
                [(c0, a0, b0), (c1, a1, b1)] => {
                    let (l0, l1) = (labels[*c0], labels[*c1]);
                    if l0 == l1 {
                        continue;
                    }
                    if l0 != 0 && l1 != 0 {
                        return Err(Error::IntersectingShapes {
                            first: l0.min(l1) as usize,
                            second: l0.max(l1) as usize,
                        });
                    }
                    let (label, a, b) = if l0 != 0 { (l0, *a0, *b0) } else { (l1, *a1, *b1) };
                    interface_edges[label as usize - 1].push([a, b]);
                    for n in [a, b] {
                        if interface_label[n] != 0 && interface_label[n] != label {
                            return Err(Error::IntersectingShapes {
                                first: interface_label[n] as usize,
                                second: label as usize,
                            });
                        }
                        interface_label[n] = label;
                    }
                }
                _ => {
                    return Err(Error::MeshGeneration(format!(
                        "edge ({}, {}) shared by more than two cells",
                        e[0], e[1]
                    )))
                }
            }
        }
        let mut interface_loops = Vec::with_capacity(n_shapes);
        for (s, iface) in interface_edges.iter().enumerate() {
            interface_loops.push(chain_loop(s + 1, iface)?);
        }

        let mut node_neighbors = vec![Vec::new(); n_nodes];
        for &[a, b] in &edges {
            node_neighbors[a].push(b);
            node_neighbors[b].push(a);
        }
        for nb in &mut node_neighbors {
            nb.sort_unstable();
        }
        let mut node_cells = vec![Vec::new(); n_nodes];
        for (ci, cell) in cells.iter().enumerate() {
            for &n in cell {
                node_cells[n].push(ci);
            }
        }
        Ok(Topology {
            cells,
            cell_subdomain: labels,
            boundary_edges,
            interface_edges,
            interface_loops,
            edges,
            node_neighbors,
            node_cells,
            is_boundary_node,
            interface_label,
        })
    }
}

fn chain_loop(shape: usize, edges: &[[usize; 2]]) -> Result<Vec<usize>> {
    if edges.is_empty() {
        return Err(Error::InvalidCurve {
            curve: shape,
            reason: "no interface edges".into(),
        });
    }
    let mut next: HashMap<usize, usize> = HashMap::with_capacity(edges.len());
    for &[a, b] in edges {
        if next.insert(a, b).is_some() {
            return Err(Error::InvalidCurve {
                curve: shape,
                reason: format!("interface touches itself at node {a}"),
            });
        }
    }
    let start = edges.iter().map(|e| e[0]).min().unwrap();
    let mut lp = vec![start];
    let mut cur = next[&start];
    while cur != start {
        lp.push(cur);
        cur = *next.get(&cur).ok_or_else(|| Error::InvalidCurve {
            curve: shape,
            reason: "interface is not closed".into(),
        })?;
        if lp.len() > edges.len() {
            break;
        }
    }
    if lp.len() != edges.len() {
        return Err(Error::InvalidCurve {
            curve: shape,
            reason: "interface consists of several loops".into(),
        });
    }
    Ok(lp)
}

/// Structured triangulation of the unit square with `resolution` nodes per
/// side. Squares are split along alternating diagonals.
pub fn build_unit_square_mesh(resolution: usize) -> TriMesh {
    assert!(resolution >= 2, "resolution must be at least 2");
    let r = resolution;
    let h = 1.0 / (r - 1) as f64;
    let mut coords = Vec::with_capacity(r * r);
    for j in 0..r {
        for i in 0..r {
            let x = if i == r - 1 { 1.0 } else { i as f64 * h };
            let y = if j == r - 1 { 1.0 } else { j as f64 * h };
            coords.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * r + i;
    let mut cells = Vec::with_capacity(2 * (r - 1) * (r - 1));
    for j in 0..r - 1 {
        for i in 0..r - 1 {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                cells.push([a, b, c]);
                cells.push([a, c, d]);
            } else {
                cells.push([a, b, d]);
                cells.push([b, c, d]);
            }
        }
    }
    let n = cells.len();
    TriMesh::from_parts(coords, cells, vec![0; n]).expect("structured mesh is valid")
}

/// Resolution whose node count is closest to `target_nodes`.
pub fn resolution_for_nodes(target_nodes: usize) -> usize {
    let r = (target_nodes as f64).sqrt().round() as usize;
    r.max(2)
}
