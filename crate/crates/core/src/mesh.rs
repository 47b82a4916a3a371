//! Conforming P1 triangulations of the reference domain and of graph domains.
//!
//! Meshes are built by a constrained Delaunay triangulation of a sampled
//! boundary polygon plus interior constraint segments, followed by angle
//! refinement and a size-driven centroid insertion loop. Interior constraints
//! carry the interfaces across which the pulled-back coefficients are not
//! smooth, so that every kink lies on element edges.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use spade::handles::FixedVertexHandle;
use spade::{AngleLimit, ConstrainedDelaunayTriangulation, RefinementParameters, Triangulation};

use crate::geometry::{cap_profile, CuspGeometry, GraphDomain, DEFAULT_PROFILE_TOL};
use crate::{CuspError, Point, Result};

type Cdt = ConstrainedDelaunayTriangulation<spade::Point2<f64>>;

/// Triangles touching this band are tagged `1`; everything else `0`.
pub const TAG_BAND: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub nodes: Vec<Point>,
    /// Counterclockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<bool>,
    pub tags: Vec<u8>,
}

impl TriangleMesh {
    pub fn vertices(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|i| self.nodes[i])
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices(t);
        0.5 * ((b - a).perp(&(c - a)))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices(t);
        (b - a).norm().max((c - b).norm()).max((a - c).norm())
    }

    /// Largest element diameter.
    pub fn h_max(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.diameter(t)).fold(0.0, f64::max)
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.vertices(t);
        Point::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.boundary[i]).collect()
    }

    /// Checks positive orientation and that every interior edge is shared
    /// by exactly two triangles with opposite orientation.
    pub fn check_conforming(&self) -> Result<()> {
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if !(self.signed_area(t) > 0.0) {
                return Err(CuspError::Meshing(format!("triangle {t} has non-positive area")));
            }
            for k in 0..3 {
                let e = (tri[k], tri[(k + 1) % 3]);
                if edges.insert(e, t).is_some() {
                    return Err(CuspError::Meshing(format!("edge {e:?} used twice in one direction")));
                }
            }
        }
        let mut on_boundary = vec![false; self.nodes.len()];
        for &(a, b) in edges.keys() {
            if !edges.contains_key(&(b, a)) {
                on_boundary[a] = true;
                on_boundary[b] = true;
            }
        }
        if on_boundary != self.boundary {
            return Err(CuspError::Meshing("boundary flags disagree with the edge structure".into()));
        }
        Ok(())
    }

    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "nodes {}", self.nodes.len())?;
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(w, "{i} {:.16e} {:.16e} {}", p.x, p.y, u8::from(self.boundary[i]))?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for (i, t) in self.triangles.iter().enumerate() {
            writeln!(w, "{i} {} {} {} {}", t[0], t[1], t[2], self.tags[i])?;
        }
        Ok(())
    }

    pub fn read_text(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| CuspError::Parse("unexpected end of mesh file".into()))?
                .map_err(CuspError::from)
        };
        let count = |line: String, key: &str| -> Result<usize> {
            let mut it = line.split_whitespace();
            match (it.next(), it.next().and_then(|s| s.parse().ok())) {
                (Some(k), Some(n)) if k == key => Ok(n),
                _ => Err(CuspError::Parse(format!("expected `{key} <count>`, got `{line}`"))),
            }
        };
        let fields = |line: &str, n: usize| -> Result<Vec<String>> {
            let f: Vec<String> = line.split_whitespace().map(String::from).collect();
            if f.len() != n {
                return Err(CuspError::Parse(format!("expected {n} fields in `{line}`")));
            }
            Ok(f)
        };
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.parse().map_err(|_| CuspError::Parse(format!("bad number `{s}`")))
        }
        let n_nodes = count(next()?, "nodes")?;
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut boundary = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let f = fields(&next()?, 4)?;
            if num::<usize>(&f[0])? != i {
                return Err(CuspError::Parse(format!("node ids out of order at {i}")));
            }
            nodes.push(Point::new(num(&f[1])?, num(&f[2])?));
            boundary.push(num::<u8>(&f[3])? != 0);
        }
        let n_tri = count(next()?, "triangles")?;
        let mut triangles = Vec::with_capacity(n_tri);
        let mut tags = Vec::with_capacity(n_tri);
        for i in 0..n_tri {
            let f = fields(&next()?, 5)?;
            if num::<usize>(&f[0])? != i {
                return Err(CuspError::Parse(format!("triangle ids out of order at {i}")));
            }
            let t = [num(&f[1])?, num(&f[2])?, num(&f[3])?];
            if t.iter().any(|&k: &usize| k >= n_nodes) {
                return Err(CuspError::Parse(format!("triangle {i} references a missing node")));
            }
            triangles.push(t);
            tags.push(num(&f[4])?);
        }
        Ok(TriangleMesh {
            nodes,
            triangles,
            boundary,
            tags,
        })
    }
}

/// Boundary loop plus interior constraint segments. Segments must meet
/// each other and the loop only at shared endpoints (bitwise equal).
#[derive(Clone, Debug, Default)]
pub struct PlanarGraph {
    /// Closed counterclockwise boundary; the last point connects to the first.
    pub boundary: Vec<Point>,
    pub segments: Vec<[Point; 2]>,
}

fn key(p: &Point) -> (u64, u64) {
    (p.x.to_bits(), p.y.to_bits())
}

fn insert_vertex(cdt: &mut Cdt, seen: &mut HashMap<(u64, u64), FixedVertexHandle>, p: &Point) -> Result<FixedVertexHandle> {
    if let Some(&v) = seen.get(&key(p)) {
        return Ok(v);
    }
    let v = cdt
        .insert(spade::Point2::new(p.x, p.y))
        .map_err(|e| CuspError::Meshing(format!("cannot insert ({}, {}): {e:?}", p.x, p.y)))?;
    seen.insert(key(p), v);
    Ok(v)
}

fn constrain(cdt: &mut Cdt, a: FixedVertexHandle, b: FixedVertexHandle) -> Result<()> {
    if a == b {
        return Ok(());
    }
    if !cdt.can_add_constraint(a, b) {
        let pa = cdt.vertex(a).position();
        let pb = cdt.vertex(b).position();
        return Err(CuspError::Meshing(format!(
            "constraint ({}, {}) -> ({}, {}) crosses another constraint",
            pa.x, pa.y, pb.x, pb.y
        )));
    }
    cdt.add_constraint(a, b);
    Ok(())
}

/// Even-odd crossing test against a closed polygon, with edges bucketed by
/// height.
struct PolygonTest {
    edges: Vec<(Point, Point)>,
    y0: f64,
    band: f64,
    buckets: Vec<Vec<usize>>,
}

impl PolygonTest {
    fn new(poly: &[Point]) -> Self {
        let edges: Vec<(Point, Point)> = (0..poly.len()).map(|i| (poly[i], poly[(i + 1) % poly.len()])).collect();
        let y0 = poly.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let y1 = poly.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let nb = (edges.len() as f64).sqrt().ceil().max(1.0) as usize;
        let band = ((y1 - y0) / nb as f64).max(1e-300);
        let mut buckets = vec![Vec::new(); nb];
        let slot = |y: f64| (((y - y0) / band) as usize).min(nb - 1);
        for (k, (a, b)) in edges.iter().enumerate() {
            for bucket in &mut buckets[slot(a.y.min(b.y))..=slot(a.y.max(b.y))] {
                bucket.push(k);
            }
        }
        PolygonTest { edges, y0, band, buckets }
    }

    fn contains(&self, p: &Point) -> bool {
        let f = (p.y - self.y0) / self.band;
        if !(f >= 0.0) || f as usize > self.buckets.len() {
            return false;
        }
        let bucket = &self.buckets[(f as usize).min(self.buckets.len() - 1)];
        let mut inside = false;
        for &k in bucket {
            let (a, b) = self.edges[k];
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if x > p.x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

/// Triangulates the region bounded by `graph.boundary` so that every
/// element diameter is at most `size` evaluated at its centroid.
pub fn mesh_planar(graph: &PlanarGraph, size: &dyn Fn(&Point) -> f64) -> Result<TriangleMesh> {
    if graph.boundary.len() < 3 {
        return Err(CuspError::Meshing("boundary needs at least three points".into()));
    }
    let signed: f64 = graph
        .boundary
        .iter()
        .zip(graph.boundary.iter().cycle().skip(1))
        .map(|(a, b)| a.x * b.y - b.x * a.y)
        .sum();
    if !(signed > 0.0) {
        return Err(CuspError::Meshing("boundary loop must be counterclockwise".into()));
    }
    let mut cdt = Cdt::new();
    let mut seen = HashMap::new();
    let loop_handles: Vec<_> = graph
        .boundary
        .iter()
        .map(|p| insert_vertex(&mut cdt, &mut seen, p))
        .collect::<Result<_>>()?;
    if seen.len() != graph.boundary.len() {
        return Err(CuspError::Meshing("boundary loop repeats a point".into()));
    }
    for (i, &a) in loop_handles.iter().enumerate() {
        constrain(&mut cdt, a, loop_handles[(i + 1) % loop_handles.len()])?;
    }
    for [p, q] in &graph.segments {
        let a = insert_vertex(&mut cdt, &mut seen, p)?;
        let b = insert_vertex(&mut cdt, &mut seen, q)?;
        constrain(&mut cdt, a, b)?;
    }

    let min_size = graph
        .boundary
        .iter()
        .chain(graph.segments.iter().flatten())
        .map(size)
        .fold(f64::INFINITY, f64::min);
    if !(min_size > 0.0) {
        return Err(CuspError::Meshing("size function must be positive".into()));
    }
    let params = || {
        RefinementParameters::<f64>::new()
            .with_angle_limit(AngleLimit::from_deg(20.0))
            .with_min_required_area(1e-4 * min_size * min_size)
            .with_max_additional_vertices(5_000_000)
    };
    // spade's own outer-face exclusion flips at every constraint, interior
    // interfaces included, so inside faces are found by a crossing test
    let region = PolygonTest::new(&graph.boundary);
    let inside_faces = |cdt: &Cdt| -> Vec<bool> {
        let mut inside = vec![false; cdt.num_all_faces()];
        for face in cdt.inner_faces() {
            let [a, b, c] = face.positions();
            let g = Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
            inside[face.fix().index()] = region.contains(&g);
        }
        inside
    };
    let mut inside;
    let mut rounds = 0;
    loop {
        cdt.refine(params());
        inside = inside_faces(&cdt);
        let mut centroids = Vec::new();
        for face in cdt.inner_faces() {
            if !inside[face.fix().index()] {
                continue;
            }
            let [a, b, c] = face.positions();
            let longest = [(a, b), (b, c), (c, a)]
                .iter()
                .map(|(p, q)| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt())
                .fold(0.0, f64::max);
            let g = Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
            if longest > size(&g) {
                centroids.push(g);
            }
        }
        if centroids.is_empty() {
            break;
        }
        rounds += 1;
        if rounds > 200 {
            return Err(CuspError::Meshing("size refinement did not terminate".into()));
        }
        for g in centroids {
            cdt.insert(spade::Point2::new(g.x, g.y))
                .map_err(|e| CuspError::Meshing(format!("steiner insertion failed: {e:?}")))?;
        }
    }

    let mut index = vec![usize::MAX; cdt.num_vertices()];
    let mut nodes = Vec::new();
    let mut triangles = Vec::new();
    for face in cdt.inner_faces() {
        if !inside[face.fix().index()] {
            continue;
        }
        let tri = face.vertices().map(|v| {
            let k = v.fix().index();
            if index[k] == usize::MAX {
                index[k] = nodes.len();
                let p = v.position();
                nodes.push(Point::new(p.x, p.y));
            }
            index[k]
        });
        triangles.push(tri);
    }
    let kept = |f: spade::handles::FaceHandle<'_, spade::handles::PossiblyOuterTag, _, _, _, _>| {
        f.as_inner().is_some_and(|inner| inside[inner.fix().index()])
    };
    let mut boundary = vec![false; nodes.len()];
    for edge in cdt.undirected_edges() {
        let d = edge.as_directed();
        if kept(d.face()) != kept(d.rev().face()) {
            for v in edge.vertices() {
                boundary[index[v.fix().index()]] = true;
            }
        }
    }
    let tags = vec![0; triangles.len()];
    let mesh = TriangleMesh {
        nodes,
        triangles,
        boundary,
        tags,
    };
    mesh.check_conforming()?;
    Ok(mesh)
}

/// Points on `[a, b]` with spacing at most `step(x)`, always including the
/// endpoints and every listed break inside the interval.
fn sample_interval(a: f64, b: f64, breaks: &[f64], step: &dyn Fn(f64) -> f64) -> Vec<f64> {
    let mut cuts: Vec<f64> = vec![a, b];
    cuts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out = vec![a];
    for span in cuts.windows(2) {
        let (lo, hi) = (span[0], span[1]);
        let mut x = lo;
        let mut interior = Vec::new();
        while hi - x > step(x) {
            x += step(x);
            interior.push(x);
        }
        // spread the points evenly over the span
        let k = interior.len() + 1;
        out.extend((1..k).map(|i| lo + (hi - lo) * i as f64 / k as f64));
        out.push(hi);
    }
    out
}

/// `n × n` cells of side `side / n`, each split along its rising diagonal.
pub fn structured_square(n: usize, side: f64) -> TriangleMesh {
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let step = side / n as f64;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    let mut boundary = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push(Point::new(i as f64 * step, j as f64 * step));
            boundary.push(i == 0 || j == 0 || i == n || j == n);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let tags = vec![0; triangles.len()];
    TriangleMesh {
        nodes,
        triangles,
        boundary,
        tags,
    }
}

/// Unstructured mesh of the square `[0, side]²`.
pub fn mesh_square(side: f64, h: f64) -> Result<TriangleMesh> {
    let corners = [Point::new(0.0, 0.0), Point::new(side, 0.0), Point::new(side, side), Point::new(0.0, side)];
    let mut boundary = Vec::new();
    for k in 0..4 {
        let (a, b) = (corners[k], corners[(k + 1) % 4]);
        let ts = sample_interval(0.0, 1.0, &[], &|_| h / side);
        boundary.extend(ts[..ts.len() - 1].iter().map(|&t| a + (b - a) * t));
    }
    mesh_planar(
        &PlanarGraph {
            boundary,
            segments: vec![],
        },
        &|_| h,
    )
}

/// Mesh of a graph domain. A horizontal interface at `blend` (typically
/// `floor + ρ/2`) and vertical interfaces at the abscissas in `verticals`
/// (from `blend` to the top) are embedded as constraints.
pub fn mesh_graph_domain(d: &GraphDomain, h: f64, blend: Option<f64>, verticals: &[f64]) -> Result<TriangleMesh> {
    if !(h > 0.0) {
        return Err(CuspError::Meshing(format!("mesh size {h} must be positive")));
    }
    let (w0, w1) = d.w;
    let top = |x: f64| d.profile.value(x);
    let blend = blend.filter(|&c| c > d.floor && (0..=200).all(|i| top(w0 + (w1 - w0) * i as f64 / 200.0) > c));
    let mut vert: Vec<f64> = verticals.iter().copied().filter(|&x| x > w0 && x < w1).collect();
    vert.sort_by(f64::total_cmp);
    vert.dedup();

    let mut breaks = d.profile.breakpoints();
    breaks.extend(&vert);
    let top_step = |x: f64| {
        let eps = 1e-4;
        let curv = ((d.profile.slope(x + eps) - d.profile.slope(x - eps)) / (2.0 * eps)).abs();
        if curv > 0.0 { h.min(h / curv.sqrt()) } else { h }
    };
    let xs_bottom = sample_interval(w0, w1, &vert, &|_| h);
    let xs_top = sample_interval(w0, w1, &breaks, &top_step);
    let side_breaks: Vec<f64> = blend.into_iter().collect();

    let mut boundary: Vec<Point> = xs_bottom.iter().map(|&x| Point::new(x, d.floor)).collect();
    boundary.pop();
    let right = sample_interval(d.floor, top(w1), &side_breaks, &|_| h);
    boundary.extend(right[..right.len() - 1].iter().map(|&y| Point::new(w1, y)));
    boundary.extend(xs_top.iter().rev().map(|&x| Point::new(x, top(x))));
    boundary.pop();
    let left = sample_interval(d.floor, top(w0), &side_breaks, &|_| h);
    boundary.extend(left[1..].iter().rev().map(|&y| Point::new(w0, y)));

    let mut segments = Vec::new();
    if let Some(c) = blend {
        let xs = sample_interval(w0, w1, &vert, &|_| h);
        segments.extend(xs.windows(2).map(|s| [Point::new(s[0], c), Point::new(s[1], c)]));
        for &x in &vert {
            let ys = sample_interval(c, top(x), &[], &|_| h);
            segments.extend(ys.windows(2).map(|s| [Point::new(x, s[0]), Point::new(x, s[1])]));
        }
    }
    mesh_planar(&PlanarGraph { boundary, segments }, &|_| h)
}

/// Ratio of element size to distance from the tip axis in [`mesh_reference`].
pub const AXIS_GRADING: f64 = 0.25;

/// Local element size for the cusp reference mesh: `h / grading` within
/// distance `2 ε₀^{1/α}` of the cap, growing linearly to `h` away from it.
pub fn cap_size(geo: &CuspGeometry, h: f64, grading: f64) -> impl Fn(&Point) -> f64 {
    let r = geo.cap_radius();
    let top = 1.0 - geo.eps0;
    let fine = h / grading;
    move |p: &Point| {
        let dx = (p.x.abs() - r).max(0.0);
        let dist = (dx * dx + (p.y - top).powi(2)).sqrt();
        if dist <= 2.0 * r {
            fine
        } else {
            (fine + 0.5 * (dist - 2.0 * r)).min(h)
        }
    }
}

/// Graded mesh of the reference domain `Ω_{ε₀}` with the interfaces of
/// `φ_ε` embedded for every level in `levels`: the common profile curve
/// `x_N = h_0(|x̄|)`, the plateaus `x_N = H_ε` over `|x̄| < ε^{1/α}`, and the
/// vertical lines `|x̄| = ε^{1/α}` above them.
pub fn mesh_reference(geo: &CuspGeometry, h: f64, grading: f64, levels: &[f64]) -> Result<TriangleMesh> {
    if geo.dim != 2 {
        return Err(CuspError::UnsupportedDimension(geo.dim));
    }
    if !(h > 0.0) || !(grading >= 1.0) {
        return Err(CuspError::Meshing(format!("need h > 0 and grading ≥ 1, got {h}, {grading}")));
    }
    let alpha = geo.alpha;
    let eps0 = geo.eps0;
    let r = geo.cap_radius();
    let plateau = 1.0 - eps0;
    let cap = cap_size(geo, h, grading);

    let mut levels: Vec<f64> = levels.iter().copied().filter(|&e| e > 0.0 && e < eps0).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    // (x_i, H_i) for each level, in decreasing x
    let mut knots = Vec::with_capacity(levels.len());
    for &eps in &levels {
        let lvl = geo.level(eps)?;
        let x = eps.powf(1.0 / alpha);
        knots.push((x, cap_profile(0.0, lvl, geo, DEFAULT_PROFILE_TOL)?.h, lvl));
    }
    let xs_knots: Vec<f64> = knots.iter().map(|k| k.0).collect();
    // Extra grading toward the tip axis, where the maps of different levels
    // disagree: element size proportional to the distance from the segment
    // `x = 0`, `H_min - 0.05 ≤ y ≤ 1 - ε₀`, bottoming out at a fraction of
    // the finest plateau half-width.
    let axis = knots.last().map(|&(x_min, h_min, _)| (x_min, h_min - 0.05));
    let size = move |p: &Point| {
        let s = cap(p);
        match axis {
            Some((x_min, y_lo)) => {
                let dy = (y_lo - p.y).max(p.y - plateau).max(0.0);
                let d = (p.x * p.x + dy * dy).sqrt();
                s.min((AXIS_GRADING * d).max(AXIS_GRADING * x_min))
            }
            None => s,
        }
    };

    // Top boundary: the curve 1 - |x|^α outside the cap, the plateau inside.
    let curve_step = |x: f64| {
        let kappa = alpha * (1.0 - alpha) * x.powf(alpha - 2.0);
        let s = size(&Point::new(x, 1.0 - x.powf(alpha)));
        if kappa > 0.0 { s.min(h / kappa.sqrt()) } else { s }
    };
    let outside = sample_interval(r, 1.0, &[], &curve_step);
    let inside = sample_interval(0.0, r, &xs_knots, &|x| size(&Point::new(x, plateau)));
    let mut top_xs: Vec<f64> = outside.iter().rev().map(|&x| -x).collect();
    top_xs.extend(inside.iter().rev().skip(1).map(|&x| -x));
    top_xs.extend(inside.iter().skip(1));
    top_xs.extend(outside.iter().skip(1));
    let top_y = |x: f64| if x.abs() <= r { plateau } else { 1.0 - x.abs().powf(alpha) };

    // The closure runs from (1, 0) to (-1, 0); the top curve goes back.
    let mut boundary = Vec::new();
    for seg in geo.outer.windows(2) {
        let (a, b) = (Point::new(seg[0][0], seg[0][1]), Point::new(seg[1][0], seg[1][1]));
        let len = (b - a).norm();
        let ts = sample_interval(0.0, 1.0, &[], &|t| size(&(a + (b - a) * t)) / len);
        boundary.extend(ts[..ts.len() - 1].iter().map(|&t| a + (b - a) * t));
    }
    boundary.extend(top_xs.iter().map(|&x| Point::new(x, top_y(x))));
    boundary.pop();
    // The reference loop is clockwise in this order; flip it.
    boundary.reverse();

    let mut segments = Vec::new();
    if let Some(&(x_min, _, lvl_min)) = knots.last() {
        let h0 = |x: f64| -> Result<f64> {
            if x >= r {
                Ok(plateau)
            } else {
                Ok(cap_profile(x, lvl_min, geo, DEFAULT_PROFILE_TOL)?.h)
            }
        };
        let xs = sample_interval(x_min, r, &xs_knots, &|x| size(&Point::new(x, plateau)));
        for sign in [-1.0, 1.0] {
            let pts: Vec<Point> = xs
                .iter()
                .map(|&x| Ok(Point::new(sign * x, if x == r { plateau } else { h0(x)? })))
                .collect::<Result<_>>()?;
            segments.extend(pts.windows(2).map(|w| [w[0], w[1]]));
        }
        for (i, &(x, hi, _)) in knots.iter().enumerate() {
            // knot heights must be bitwise identical to the curve samples
            let hi_curve = h0(x)?;
            debug_assert!((hi_curve - hi).abs() < 1e-12);
            let smaller: Vec<f64> = knots[i + 1..].iter().map(|k| k.0).collect();
            let mut breaks: Vec<f64> = smaller.iter().flat_map(|&s| [s, -s]).collect();
            breaks.push(0.0);
            let hx = sample_interval(-x, x, &breaks, &|t| size(&Point::new(t, hi_curve)));
            segments.extend(hx.windows(2).map(|w| [Point::new(w[0], hi_curve), Point::new(w[1], hi_curve)]));
            let larger: Vec<f64> = knots[..i].iter().map(|k| h0(k.0)).collect::<Result<_>>()?;
            let ys = sample_interval(hi_curve, plateau, &larger, &|y| size(&Point::new(x, y)));
            for sign in [-1.0, 1.0] {
                segments.extend(ys.windows(2).map(|w| [Point::new(sign * x, w[0]), Point::new(sign * x, w[1])]));
            }
        }
    }

    let mut mesh = mesh_planar(&PlanarGraph { boundary, segments }, &size)?;
    let band_level = match knots.last() {
        Some(k) => k.2,
        None => geo.level(0.0)?,
    };
    for t in 0..mesh.triangles.len() {
        let c = mesh.centroid(t);
        if c.x.abs() < r && c.y.abs() < 1.0 && c.y > cap_profile(c.x.abs(), band_level, geo, DEFAULT_PROFILE_TOL)?.h {
            mesh.tags[t] = TAG_BAND;
        }
    }
    Ok(mesh)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshQuality {
    /// Smallest interior angle in degrees.
    pub min_angle: f64,
    /// Largest `longest edge × perimeter / (4√3 · area)`; 1 for equilateral.
    pub max_aspect: f64,
    pub elements: usize,
}

impl MeshQuality {
    pub const MIN_ANGLE_DEG: f64 = 15.0;

    pub fn check(&self) -> Result<()> {
        if self.min_angle >= Self::MIN_ANGLE_DEG {
            Ok(())
        } else {
            Err(CuspError::Meshing(format!(
                "minimum angle {:.3}° below {}°",
                self.min_angle,
                Self::MIN_ANGLE_DEG
            )))
        }
    }
}

pub fn mesh_quality(m: &TriangleMesh) -> MeshQuality {
    let mut min_angle = f64::INFINITY;
    let mut max_aspect: f64 = 0.0;
    for t in 0..m.triangles.len() {
        let p = m.vertices(t);
        let e = [p[1] - p[0], p[2] - p[1], p[0] - p[2]];
        let len = e.map(|v| v.norm());
        for k in 0..3 {
            let (a, b) = (-e[(k + 2) % 3], e[k]);
            let cos = (a.dot(&b) / (len[k] * len[(k + 2) % 3])).clamp(-1.0, 1.0);
            let angle = cos.acos().to_degrees();
            min_angle = min_angle.min(if angle.is_nan() { 0.0 } else { angle });
        }
        let area = m.signed_area(t).abs();
        let longest = len.iter().copied().fold(0.0, f64::max);
        let perimeter: f64 = len.iter().sum();
        let aspect = longest * perimeter / (4.0 * 3f64.sqrt() * area);
        max_aspect = max_aspect.max(if aspect.is_finite() { aspect } else { f64::INFINITY });
    }
    MeshQuality {
        min_angle,
        max_aspect,
        elements: m.triangles.len(),
    }
}

/// Bucket grid over the mesh bounding box for point location.
#[derive(Clone, Debug)]
pub struct Locator {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    pub fn new(m: &TriangleMesh) -> Self {
        let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in &m.nodes {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let span = (hi - lo).max().max(1e-300);
        let per_side = (m.triangles.len() as f64).sqrt().ceil().max(1.0);
        let cell = span / per_side * 1.000_001;
        let nx = ((hi.x - lo.x) / cell).floor() as usize + 1;
        let ny = ((hi.y - lo.y) / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for t in 0..m.triangles.len() {
            let v = m.vertices(t);
            let bx0 = v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
            let bx1 = v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
            let by0 = v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            let by1 = v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
            let (i0, i1) = (((bx0 - lo.x) / cell) as usize, (((bx1 - lo.x) / cell) as usize).min(nx - 1));
            let (j0, j1) = (((by0 - lo.y) / cell) as usize, (((by1 - lo.y) / cell) as usize).min(ny - 1));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        Locator {
            origin: lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    /// Element containing `p` and its barycentric coordinates.
    pub fn locate(&self, m: &TriangleMesh, p: &Point) -> Option<(usize, [f64; 3])> {
        let fx = (p.x - self.origin.x) / self.cell;
        let fy = (p.y - self.origin.y) / self.cell;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (i, j) = (fx as usize, fy as usize);
        if i >= self.nx || j >= self.ny {
            return None;
        }
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in &self.buckets[j * self.nx + i] {
            let b = barycentric(&m.vertices(t), p);
            let worst = b.iter().copied().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                return Some((t, b));
            }
            if best.is_none_or(|(_, _, w)| worst > w) {
                best = Some((t, b, worst));
            }
        }
        // tolerate round-off on shared edges
        best.filter(|&(_, _, w)| w > -1e-12).map(|(t, b, _)| (t, b))
    }
}

pub fn barycentric(v: &[Point; 3], p: &Point) -> [f64; 3] {
    let d = (v[1] - v[0]).perp(&(v[2] - v[0]));
    let l1 = (v[2] - v[1]).perp(&(p - v[1])) / d;
    let l2 = (v[0] - v[2]).perp(&(p - v[2])) / d;
    [l1, l2, 1.0 - l1 - l2]
}
