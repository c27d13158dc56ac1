//! Planar polygon utilities and the analytic shape descriptions used to build
//! initial and target configurations.

use std::f64::consts::PI;

pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

/// Twice the signed area of the triangle (a, b, c); positive when counterclockwise.
#[inline]
pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    cross(sub(b, a), sub(c, a))
}

/// Shoelace area, positive for counterclockwise polygons.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

pub fn perimeter(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| norm(sub(poly[(i + 1) % n], poly[i]))).sum()
}

/// Winding number of `poly` around `p`. Points exactly on an edge report
/// `None`.
pub fn winding_number(p: Point, poly: &[Point]) -> Option<i32> {
    let n = poly.len();
    let mut wn = 0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let side = orient(a, b, p);
        if side == 0.0 {
            let t = dot(sub(p, a), sub(b, a));
            if t >= 0.0 && t <= dot(sub(b, a), sub(b, a)) {
                return None;
            }
        }
        if a[1] <= p[1] {
            if b[1] > p[1] && side > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && side < 0.0 {
            wn -= 1;
        }
    }
    Some(wn)
}

pub fn closest_point_on_segment(p: Point, a: Point, b: Point) -> Point {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return a;
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

/// Closest point on the closed polyline and the distance to it.
pub fn closest_point_on_polygon(p: Point, poly: &[Point]) -> (Point, f64) {
    let n = poly.len();
    let mut best = (poly[0], f64::INFINITY);
    for i in 0..n {
        let q = closest_point_on_segment(p, poly[i], poly[(i + 1) % n]);
        let d = norm(sub(p, q));
        if d < best.1 {
            best = (q, d);
        }
    }
    best
}

/// Signed distance: negative inside a counterclockwise polygon.
pub fn signed_distance(p: Point, poly: &[Point]) -> f64 {
    let (_, d) = closest_point_on_polygon(p, poly);
    match winding_number(p, poly) {
        Some(0) => d,
        Some(_) => -d,
        None => 0.0,
    }
}

/// Sutherland-Hodgman clipping of an arbitrary polygon against a convex
/// counterclockwise polygon.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % m];
        let input = std::mem::take(&mut output);
        let k = input.len();
        for j in 0..k {
            let cur = input[j];
            let prev = input[(j + k - 1) % k];
            let cur_in = orient(a, b, cur) >= 0.0;
            let prev_in = orient(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(intersect_lines(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect_lines(prev, cur, a, b));
            }
        }
    }
    output
}

fn intersect_lines(p: Point, q: Point, a: Point, b: Point) -> Point {
    let d1 = orient(a, b, p);
    let d2 = orient(a, b, q);
    let t = d1 / (d1 - d2);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of the symmetric difference between a simple polygon and a convex
/// polygon (both counterclockwise).
pub fn symmetric_difference_area(poly: &[Point], convex: &[Point]) -> f64 {
    let inter = clip_convex(poly, convex);
    let ia = if inter.len() < 3 { 0.0 } else { signed_area(&inter) };
    signed_area(poly) + signed_area(convex) - 2.0 * ia
}

/// Analytic description of a closed curve, used for target and initial
/// configurations.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeSpec {
    Circle {
        center: Point,
        radius: f64,
    },
    /// Rotated ellipse; `angle_deg` rotates the first semi-axis counterclockwise.
    Ellipse {
        center: Point,
        semi_axes: [f64; 2],
        angle_deg: f64,
    },
    /// Band of constant half-width around a circular arc, closed by
    /// semicircular caps.
    Tube {
        center: Point,
        radius: f64,
        start_deg: f64,
        end_deg: f64,
        half_width: f64,
    },
}

impl ShapeSpec {
    /// Counterclockwise polygonal approximation with roughly `n` vertices.
    pub fn polygon(&self, n: usize) -> Vec<Point> {
        let n = n.max(8);
        match *self {
            ShapeSpec::Circle { center, radius } => (0..n)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / n as f64;
                    [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
                })
                .collect(),
            ShapeSpec::Ellipse {
                center,
                semi_axes,
                angle_deg,
            } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                (0..n)
                    .map(|i| {
                        let t = 2.0 * PI * i as f64 / n as f64;
                        let u = semi_axes[0] * t.cos();
                        let v = semi_axes[1] * t.sin();
                        [center[0] + c * u - s * v, center[1] + s * u + c * v]
                    })
                    .collect()
            }
            ShapeSpec::Tube {
                center,
                radius,
                start_deg,
                end_deg,
                half_width,
            } => {
                let t0 = start_deg.to_radians();
                let t1 = end_deg.to_radians();
                let arc_len = (t1 - t0).abs() * radius;
                let total = 2.0 * arc_len + 2.0 * PI * half_width;
                let n_arc = ((n as f64 * arc_len / total).ceil() as usize).max(4);
                let n_cap = ((n as f64 * PI * half_width / total).ceil() as usize).max(4);
                let at = |r: f64, t: f64| [center[0] + r * t.cos(), center[1] + r * t.sin()];
                let mut pts = Vec::with_capacity(2 * (n_arc + n_cap));
                // outer arc, start -> end
                for i in 0..n_arc {
                    let t = t0 + (t1 - t0) * i as f64 / n_arc as f64;
                    pts.push(at(radius + half_width, t));
                }
                // cap at end, outer -> inner, bulging forward
                let end_c = at(radius, t1);
                for i in 0..n_cap {
                    let a = t1 + PI * i as f64 / n_cap as f64;
                    pts.push([end_c[0] + half_width * a.cos(), end_c[1] + half_width * a.sin()]);
                }
                for i in 0..n_arc {
                    let t = t1 + (t0 - t1) * i as f64 / n_arc as f64;
                    pts.push(at(radius - half_width, t));
                }
                let start_c = at(radius, t0);
                for i in 0..n_cap {
                    let a = t0 + PI + PI * i as f64 / n_cap as f64;
                    pts.push([
                        start_c[0] + half_width * a.cos(),
                        start_c[1] + half_width * a.sin(),
                    ]);
                }
                if signed_area(&pts) < 0.0 {
                    pts.reverse();
                }
                pts
            }
        }
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, ShapeSpec::Tube { .. })
    }
}
