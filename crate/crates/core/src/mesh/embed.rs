//! Fit a background triangulation to analytic shapes so that every shape
//! boundary becomes a closed polyline of mesh edges.
//!
//! Nodes close to a curve are snapped onto it, cells are labeled by the sign
//! of the signed distance at their nodes, notches are removed, and a
//! quality-guarded smoothing pass relaxes the result.

use std::collections::HashMap;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::geometry::{self, Point, ShapeSpec};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOptions {
    /// Vertices of the polygon approximating each analytic curve.
    pub curve_samples: usize,
    pub smoothing_sweeps: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        EmbedOptions {
            curve_samples: 2048,
            smoothing_sweeps: 8,
        }
    }
}

/// Working connectivity that changes when edges are flipped.
struct Adjacency {
    edges: Vec<[usize; 2]>,
    edge_cells: HashMap<[usize; 2], Vec<usize>>,
    node_cells: Vec<Vec<usize>>,
}

impl Adjacency {
    fn new(n_nodes: usize, cells: &[[usize; 3]]) -> Self {
        let mut edge_cells: HashMap<[usize; 2], Vec<usize>> = HashMap::new();
        let mut node_cells = vec![Vec::new(); n_nodes];
        for (c, cell) in cells.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (cell[k], cell[(k + 1) % 3]);
                edge_cells.entry([a.min(b), a.max(b)]).or_default().push(c);
                node_cells[cell[k]].push(c);
            }
        }
        let mut edges: Vec<[usize; 2]> = edge_cells.keys().copied().collect();
        edges.sort_unstable();
        Adjacency {
            edges,
            edge_cells,
            node_cells,
        }
    }
}

/// Snap `base` to the given shapes and label the enclosed cells `1..=N`.
pub fn embed_shapes(base: &TriMesh, shapes: &[ShapeSpec], opts: &EmbedOptions) -> Result<TriMesh> {
    let polys: Vec<Vec<Point>> = shapes.iter().map(|s| s.polygon(opts.curve_samples)).collect();
    check_shapes(&polys)?;
    let n = base.n_nodes();
    let is_boundary: Vec<bool> = (0..n).map(|i| base.is_boundary_node(i)).collect();
    let mut coords = base.coords().to_vec();
    let mut cells = base.cells().to_vec();
    let mut phi: Vec<Vec<f64>> = polys
        .iter()
        .map(|poly| par::map_slice(&coords, |&x| geometry::signed_distance(x, poly)))
        .collect();
    // 0 = free, s + 1 = lies on curve s
    let mut on_curve = vec![0usize; n];
    for (s, ph) in phi.iter().enumerate() {
        for i in 0..n {
            if ph[i] == 0.0 {
                on_curve[i] = s + 1;
            }
        }
    }
    for i in 0..n {
        if phi.iter().filter(|ph| ph[i] < 0.0).count() > 1 {
            return Err(Error::IntersectingShapes { first: 1, second: 2 });
        }
    }

    for s in 0..polys.len() {
        let mut passes = 0;
        loop {
            passes += 1;
            if passes > 10 * n {
                return Err(Error::MeshGeneration(format!("fitting shape {} did not terminate", s + 1)));
            }
            let adj = Adjacency::new(n, &cells);
            let mut crossing: Vec<(f64, usize, usize)> = adj
                .edges
                .iter()
                .filter(|&&[a, b]| phi[s][a] * phi[s][b] < 0.0)
                .map(|&[a, b]| {
                    let (near, far) = if phi[s][a].abs() <= phi[s][b].abs() { (a, b) } else { (b, a) };
                    (phi[s][near].abs(), near, far)
                })
                .collect();
            if crossing.is_empty() {
                break;
            }
            crossing.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            let mut progressed = false;
            let mut flipped = false;
            for &(_, near, far) in &crossing {
                if phi[s][near] * phi[s][far] >= 0.0 {
                    continue;
                }
                // both opposite corners already on the curve: flipping the edge
                // lets the interface run between them
                if try_flip(&adj, &mut cells, &coords, &on_curve, s + 1, [near, far], 0.2) {
                    flipped = true;
                    break;
                }
                let crossing_point = edge_crossing(coords[near], coords[far], &polys[s]);
                let options = [
                    (near, geometry::closest_point_on_polygon(coords[near], &polys[s]).0),
                    (far, geometry::closest_point_on_polygon(coords[far], &polys[s]).0),
                    (near, crossing_point),
                    (far, crossing_point),
                ];
                let mut moved = None;
                for (cand, target) in options {
                    if is_boundary[cand] || on_curve[cand] != 0 {
                        continue;
                    }
                    if moves_keep_orientation(&adj, &cells, &coords, cand, target) {
                        coords[cand] = target;
                        moved = Some(cand);
                        break;
                    }
                }
                if moved.is_none() && try_flip(&adj, &mut cells, &coords, &on_curve, s + 1, [near, far], 0.0) {
                    flipped = true;
                    break;
                }
                if let Some(cand) = moved {
                    on_curve[cand] = s + 1;
                    for (t, ph) in phi.iter_mut().enumerate() {
                        ph[cand] = if t == s {
                            0.0
                        } else {
                            geometry::signed_distance(coords[cand], &polys[t])
                        };
                    }
                    progressed = true;
                } else if [near, far].iter().all(|&c| on_curve[c] != 0 && on_curve[c] != s + 1) {
                    return Err(Error::IntersectingShapes {
                        first: on_curve[near].min(s + 1),
                        second: on_curve[near].max(s + 1),
                    });
                }
            }
            if !progressed && !flipped {
                return Err(Error::MeshGeneration(format!(
                    "cannot fit shape {} to the mesh: curve too close to the boundary, another shape, or itself",
                    s + 1
                )));
            }
        }
    }

    let adj = Adjacency::new(n, &cells);
    let mut labels = label_by_sign(&cells, &coords, &phi, &polys);
    remove_notches(&adj, &cells, &on_curve, &mut labels);

    let mesh = TriMesh::from_parts(coords, cells, labels)?;
    if mesh.n_shapes() != shapes.len() {
        return Err(Error::MeshGeneration(format!(
            "expected {} shapes after embedding, found {}",
            shapes.len(),
            mesh.n_shapes()
        )));
    }
    let mesh = smooth(&mesh, &polys, opts.smoothing_sweeps);
    if !mesh.quality_report().is_valid() {
        return Err(Error::MeshGeneration("embedding produced inverted cells".into()));
    }
    let loops: Vec<Vec<usize>> = (1..=mesh.n_shapes()).map(|s| mesh.interface_loop(s).to_vec()).collect();
    mesh.label_subdomains(&loops)
}

/// Replace the two cells sharing `edge` by the two cells sharing the
/// opposite diagonal, provided both opposite corners lie on curve `shape`
/// and the new cells have aspect ratio above `min_aspect`.
fn try_flip(
    adj: &Adjacency,
    cells: &mut [[usize; 3]],
    coords: &[Point],
    on_curve: &[usize],
    shape: usize,
    edge: [usize; 2],
    min_aspect: f64,
) -> bool {
    let key = [edge[0].min(edge[1]), edge[0].max(edge[1])];
    let pair = match adj.edge_cells.get(&key).map(Vec::as_slice) {
        Some(&[c0, c1]) => [c0, c1],
        _ => return false,
    };
    let opposite = |c: usize| cells[c].iter().copied().find(|&v| v != key[0] && v != key[1]).unwrap();
    let (d0, d1) = (opposite(pair[0]), opposite(pair[1]));
    if on_curve[d0] != shape || on_curve[d1] != shape {
        return false;
    }
    if adj.edge_cells.contains_key(&[d0.min(d1), d0.max(d1)]) {
        return false;
    }
    // orient: cell 0 is (a, b, d0) counterclockwise
    let c0 = cells[pair[0]];
    let k = c0.iter().position(|&v| v == d0).unwrap();
    let (a, b) = (c0[(k + 1) % 3], c0[(k + 2) % 3]);
    let new0 = [a, d1, d0];
    let new1 = [d1, b, d0];
    if aspect(coords, new0) <= min_aspect || aspect(coords, new1) <= min_aspect {
        return false;
    }
    cells[pair[0]] = new0;
    cells[pair[1]] = new1;
    true
}

fn check_shapes(polys: &[Vec<Point>]) -> Result<()> {
    for (s, poly) in polys.iter().enumerate() {
        if poly.iter().any(|p| !(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0)) {
            return Err(Error::InvalidCurve {
                curve: s + 1,
                reason: "curve leaves the open unit square".into(),
            });
        }
        for (t, other) in polys.iter().enumerate().skip(s + 1) {
            let overlap = poly
                .iter()
                .any(|&p| geometry::winding_number(p, other) != Some(0))
                || other
                    .iter()
                    .any(|&p| geometry::winding_number(p, poly) != Some(0));
            if overlap {
                return Err(Error::IntersectingShapes {
                    first: s + 1,
                    second: t + 1,
                });
            }
        }
    }
    Ok(())
}

/// Point where the segment `a -> b` crosses the curve, projected onto it.
fn edge_crossing(a: Point, b: Point, poly: &[Point]) -> Point {
    let at = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    let sa = geometry::signed_distance(a, poly).signum();
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if geometry::signed_distance(at(mid), poly).signum() == sa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    geometry::closest_point_on_polygon(at(0.5 * (lo + hi)), poly).0
}

fn cell_area_at(coords: &[Point], cell: [usize; 3]) -> f64 {
    0.5 * geometry::orient(coords[cell[0]], coords[cell[1]], coords[cell[2]])
}

fn aspect(coords: &[Point], cell: [usize; 3]) -> f64 {
    let [a, b, c] = cell.map(|i| coords[i]);
    let area = 0.5 * geometry::orient(a, b, c);
    let la = geometry::norm(geometry::sub(b, c));
    let lb = geometry::norm(geometry::sub(c, a));
    let lc = geometry::norm(geometry::sub(a, b));
    let denom = (la + lb + lc) * la * lb * lc;
    if denom > 0.0 {
        16.0 * area * area.abs() / denom
    } else {
        0.0
    }
}

fn moves_keep_orientation(adj: &Adjacency, cells: &[[usize; 3]], coords: &[Point], node: usize, target: Point) -> bool {
    let mut trial = [[0.0; 2]; 3];
    adj.node_cells[node].iter().all(|&c| {
        let cell = cells[c];
        for k in 0..3 {
            trial[k] = if cell[k] == node { target } else { coords[cell[k]] };
        }
        geometry::orient(trial[0], trial[1], trial[2]) > 0.0
    })
}

fn label_by_sign(cells: &[[usize; 3]], coords: &[Point], phi: &[Vec<f64>], polys: &[Vec<Point>]) -> Vec<u32> {
    par::map_slice(cells, |&cell| {
        for (s, ph) in phi.iter().enumerate() {
            if cell.iter().any(|&i| ph[i] < 0.0) {
                return s as u32 + 1;
            }
        }
        let on_all: Vec<usize> = (0..phi.len())
            .filter(|&s| cell.iter().all(|&i| phi[s][i] == 0.0))
            .collect();
        if let [s] = on_all.as_slice() {
            let [a, b, d] = cell.map(|i| coords[i]);
            let centroid = [(a[0] + b[0] + d[0]) / 3.0, (a[1] + b[1] + d[1]) / 3.0];
            if geometry::winding_number(centroid, &polys[*s]).is_some_and(|w| w != 0) {
                return *s as u32 + 1;
            }
        }
        0
    })
}

/// Flip cells whose three nodes lie on one curve and that expose two or more
/// interface edges; such cells form notches or pinch points of the polyline.
fn remove_notches(adj: &Adjacency, cells: &[[usize; 3]], on_curve: &[usize], labels: &mut [u32]) {
    for _ in 0..100 {
        let mut changed = false;
        for (c, &cell) in cells.iter().enumerate() {
            let s = on_curve[cell[0]];
            if s == 0 || cell.iter().any(|&i| on_curve[i] != s) {
                continue;
            }
            let mut iface = 0;
            for k in 0..3 {
                let (a, b) = (cell[k], cell[(k + 1) % 3]);
                let nb = &adj.edge_cells[&[a.min(b), a.max(b)]];
                if nb.len() == 2 {
                    let other = if nb[0] == c { nb[1] } else { nb[0] };
                    if labels[other] != labels[c] {
                        iface += 1;
                    }
                }
            }
            if iface >= 2 {
                labels[c] = if labels[c] == 0 { s as u32 } else { 0 };
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Quality-guarded relaxation: free interior nodes move toward the mean of
/// their neighbours, interface nodes slide along their curve. A move is kept
/// only if the worst adjacent cell improves.
fn smooth(mesh: &TriMesh, polys: &[Vec<Point>], sweeps: usize) -> TriMesh {
    let topo = mesh.topology();
    let mut coords = mesh.coords().to_vec();
    let mut loop_nbrs: Vec<Option<(usize, usize, usize)>> = vec![None; mesh.n_nodes()];
    for s in 1..=mesh.n_shapes() {
        let lp = mesh.interface_loop(s);
        let m = lp.len();
        for k in 0..m {
            loop_nbrs[lp[k]] = Some((s - 1, lp[(k + m - 1) % m], lp[(k + 1) % m]));
        }
    }
    let worst = |coords: &[Point], node: usize| {
        topo.node_cells[node]
            .iter()
            .map(|&c| aspect(coords, topo.cells[c]))
            .fold(f64::INFINITY, f64::min)
    };
    for _ in 0..sweeps {
        for i in 0..mesh.n_nodes() {
            if topo.is_boundary_node[i] {
                continue;
            }
            let target = match loop_nbrs[i] {
                Some((s, prev, next)) => {
                    let mid = [
                        0.5 * (coords[prev][0] + coords[next][0]),
                        0.5 * (coords[prev][1] + coords[next][1]),
                    ];
                    geometry::closest_point_on_polygon(mid, &polys[s]).0
                }
                None => {
                    let nb = &topo.node_neighbors[i];
                    let k = nb.len() as f64;
                    let sx: f64 = nb.iter().map(|&j| coords[j][0]).sum();
                    let sy: f64 = nb.iter().map(|&j| coords[j][1]).sum();
                    [sx / k, sy / k]
                }
            };
            let before = worst(&coords, i);
            let old = coords[i];
            coords[i] = target;
            let valid = topo.node_cells[i]
                .iter()
                .all(|&c| cell_area_at(&coords, topo.cells[c]) > 0.0);
            if !valid || worst(&coords, i) <= before {
                coords[i] = old;
            }
        }
    }
    mesh.with_coords(coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;

    fn circle(c: Point, r: f64) -> ShapeSpec {
        ShapeSpec::Circle { center: c, radius: r }
    }

    #[test]
    fn single_circle_area_and_perimeter() {
        let base = build_unit_square_mesh(41);
        let m = embed_shapes(&base, &[circle([0.5, 0.5], 0.2)], &EmbedOptions::default()).unwrap();
        assert_eq!(m.n_shapes(), 1);
        let area: f64 = (0..m.n_cells())
            .filter(|&c| m.cell_subdomain()[c] == 1)
            .map(|c| m.cell_area(c))
            .sum();
        let exact = std::f64::consts::PI * 0.04;
        assert!((area - exact).abs() / exact < 0.02, "area {area}");
        let per = m.interface_length(1);
        assert!((per - 0.4 * std::f64::consts::PI).abs() < 0.06, "perimeter {per}");
        assert!(m.quality_report().min_aspect_ratio > 0.2);
    }

    #[test]
    fn interface_nodes_lie_on_curve() {
        let base = build_unit_square_mesh(33);
        let shape = ShapeSpec::Ellipse {
            center: [0.4, 0.55],
            semi_axes: [0.2, 0.1],
            angle_deg: 25.0,
        };
        let poly = shape.polygon(2048);
        let m = embed_shapes(&base, &[shape], &EmbedOptions::default()).unwrap();
        for &n in m.interface_loop(1) {
            assert!(geometry::signed_distance(m.coords()[n], &poly).abs() < 1e-12);
        }
    }

    #[test]
    fn two_shapes_with_tube() {
        let base = build_unit_square_mesh(81);
        let shapes = [
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
        ];
        let m = embed_shapes(&base, &shapes, &EmbedOptions::default()).unwrap();
        assert_eq!(m.n_shapes(), 2);
        assert!(m.quality_report().is_valid());
    }

    #[test]
    fn overlapping_shapes_rejected() {
        let base = build_unit_square_mesh(21);
        let r = embed_shapes(
            &base,
            &[circle([0.4, 0.5], 0.15), circle([0.55, 0.5], 0.15)],
            &EmbedOptions::default(),
        );
        assert!(matches!(r, Err(Error::IntersectingShapes { .. })));
    }

    #[test]
    fn shape_outside_domain_rejected() {
        let base = build_unit_square_mesh(21);
        let r = embed_shapes(&base, &[circle([0.05, 0.5], 0.1)], &EmbedOptions::default());
        assert!(matches!(r, Err(Error::InvalidCurve { .. })));
    }
}
