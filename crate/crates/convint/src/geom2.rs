//! Planar mesh kernel: triangles with affine maps, ear-clipping triangulation,
//! shared-segment adjacency with hanging nodes, and continuity/boundary checks.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::Deserialize;
use smallvec::SmallVec;

use crate::engine::SkewLedger;
use crate::error::{Error, Result};
use crate::inapprox::{Phase, Problem, Stage};
use crate::mat2::{Matrix2, Vec2};
use crate::scalar::{Scalar, TOL_CONT_REL, TOL_GEOM};
use crate::{Mat2, Point2};

/// `x ↦ grad·x + offset`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AffineMap2<T> {
    pub grad: Matrix2<T>,
    pub offset: Vec2<T>,
}

impl<T: Scalar> AffineMap2<T> {
    pub fn linear(grad: Matrix2<T>) -> Self {
        Self { grad, offset: Vec2::zero() }
    }

    #[inline]
    pub fn apply(&self, x: Vec2<T>) -> Vec2<T> {
        self.grad.mul_vec(x) + self.offset
    }
}

/// Signed area, positive for counterclockwise vertices.
pub fn signed_area<T: Scalar>(t: &[Vec2<T>; 3]) -> T {
    (t[1] - t[0]).cross(t[2] - t[0]) * T::lit(0.5)
}

pub fn triangle_area<T: Scalar>(t: &[Vec2<T>; 3]) -> T {
    signed_area(t).abs()
}

pub fn triangle_perimeter<T: Scalar>(t: &[Vec2<T>; 3]) -> T {
    (t[1] - t[0]).norm() + (t[2] - t[1]).norm() + (t[0] - t[2]).norm()
}

/// Reorders vertices counterclockwise.
pub fn ccw<T: Scalar>(t: [Vec2<T>; 3]) -> [Vec2<T>; 3] {
    if signed_area(&t) < T::zero() {
        [t[0], t[2], t[1]]
    } else {
        t
    }
}

/// Barycentric containment with slack `tol` (absolute, in length units).
pub fn point_in_triangle<T: Scalar>(t: &[Vec2<T>; 3], p: Vec2<T>, tol: T) -> bool {
    let t = ccw(*t);
    (0..3).all(|i| {
        let a = t[i];
        let b = t[(i + 1) % 3];
        let e = b - a;
        let len = e.norm();
        len == T::zero() || e.cross(p - a) / len >= -tol
    })
}

pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    0.5 * (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>()
}

pub fn polygon_perimeter(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| (poly[(i + 1) % n] - poly[i]).norm()).sum()
}

pub fn diameter(points: &[Point2]) -> f64 {
    let mut d = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            d = d.max((*p - *q).norm());
        }
    }
    d
}

fn segments_cross(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let o = |p: Point2, q: Point2, r: Point2| (q - p).cross(r - p);
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Point2, q: Point2, r: Point2| {
        o(p, q, r) == 0.0 && r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    on(c, d, a) || on(c, d, b) || on(a, b, c) || on(a, b, d)
}

/// Ear-clipping triangulation of a simple polygon; output triangles are counterclockwise.
pub fn triangulate(poly: &[Point2]) -> Result<Vec<[Point2; 3]>> {
    let n = poly.len();
    if n < 3 {
        return Err(Error::BadParameter(format!("polygon needs at least 3 vertices, got {n}")));
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return Err(Error::SelfIntersecting(i, j));
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if polygon_area(poly) < 0.0 {
        idx.reverse();
    }
    let mut out = Vec::with_capacity(n - 2);
    while idx.len() > 3 {
        let m = idx.len();
        let ear = (0..m).find(|&i| {
            let (a, b, c) = (poly[idx[(i + m - 1) % m]], poly[idx[i]], poly[idx[(i + 1) % m]]);
            if (b - a).cross(c - b) <= 0.0 {
                return false;
            }
            let tri = [a, b, c];
            idx.iter().all(|&v| {
                let p = poly[v];
                p == a || p == b || p == c || !point_in_triangle(&tri, p, 0.0)
            })
        });
        let Some(i) = ear else {
            return Err(Error::BadParameter("polygon has no ear (degenerate)".into()));
        };
        out.push([poly[idx[(i + m - 1) % m]], poly[idx[i]], poly[idx[(i + 1) % m]]]);
        idx.remove(i);
    }
    out.push([poly[idx[0]], poly[idx[1]], poly[idx[2]]]);
    Ok(out)
}

/// Stable identifier: root triangle index followed by local indices.
pub type CellId = SmallVec<[u32; 10]>;

pub fn format_id(id: &CellId) -> String {
    let parts: Vec<String> = id.iter().map(u32::to_string).collect();
    parts.join(".")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Case {
    C1,
    C2,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::C1 => "C1",
            Case::C2 => "C2",
        })
    }
}

/// Covering class: a generic triangle, or an isosceles triangle aligned with a
/// diamond frame of orientation `angle` and aspect `delta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClassTag {
    Generic,
    SelfSimilar { angle: f64, delta: f64 },
}

/// Which part of a covering produced a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CaseTag {
    A3,
    A3tI,
    A3tII,
    A3tIII1,
    A3tIII2,
}

impl CaseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseTag::A3 => "A3",
            CaseTag::A3tI => "A3t_i",
            CaseTag::A3tII => "A3t_ii",
            CaseTag::A3tIII1 => "A3t_iii_1",
            CaseTag::A3tIII2 => "A3t_iii_2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [CaseTag::A3, CaseTag::A3tI, CaseTag::A3tII, CaseTag::A3tIII1, CaseTag::A3tIII2]
            .into_iter()
            .find(|c| c.as_str() == s)
    }
}

/// Per-cell bookkeeping `(l, j, q)`, the case and the in-approximation stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellState {
    pub l: i32,
    pub q: u16,
    pub case: Case,
    pub stage: Stage,
}

impl CellState {
    pub fn j(&self) -> u32 {
        self.stage.j
    }
}

pub const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub id: CellId,
    /// Index of the containing cell in the previous generation.
    pub parent: u32,
    pub verts: [Point2; 3],
    pub map: AffineMap2<f64>,
    pub state: CellState,
    pub class: ClassTag,
    pub case_tag: CaseTag,
    pub ledger: Option<Arc<SkewLedger>>,
}

impl Cell {
    pub fn area(&self) -> f64 {
        triangle_area(&self.verts)
    }

    pub fn perimeter(&self) -> f64 {
        triangle_perimeter(&self.verts)
    }

    pub fn grad(&self) -> Mat2 {
        self.map.grad
    }
}

pub fn area(cell: &Cell) -> f64 {
    cell.area()
}

pub fn perimeter(cell: &Cell) -> f64 {
    cell.perimeter()
}

/// One generation of the construction. Only the previous generation is kept
/// alive through `parent`.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub generation: u32,
    pub cells: Vec<Cell>,
    pub domain: Vec<Point2>,
    pub parent: Option<Arc<Mesh>>,
}

impl Mesh {
    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(Cell::area).sum()
    }

    pub fn domain_diameter(&self) -> f64 {
        diameter(&self.domain)
    }

    pub fn triangles(&self) -> Vec<[Point2; 3]> {
        self.cells.iter().map(|c| c.verts).collect()
    }
}

/// Shared-segment structure of a triangle soup with hanging nodes.
#[derive(Clone, Debug)]
pub struct Adjacency {
    pub verts: Vec<Point2>,
    pub segments: Vec<Segment>,
}

/// Atomic edge piece between two welded vertices and the cells bordering it.
#[derive(Clone, Debug)]
pub struct Segment {
    pub a: u32,
    pub b: u32,
    pub cells: SmallVec<[u32; 2]>,
}

impl Adjacency {
    pub fn length(&self, s: &Segment) -> f64 {
        (self.verts[s.a as usize] - self.verts[s.b as usize]).norm()
    }
}

struct Grid {
    h: f64,
    buckets: HashMap<(i64, i64), Vec<u32>>,
}

impl Grid {
    fn new(h: f64) -> Self {
        Self { h, buckets: HashMap::new() }
    }

    fn key(&self, p: Point2) -> (i64, i64) {
        ((p.x / self.h).floor() as i64, (p.y / self.h).floor() as i64)
    }

    fn insert(&mut self, p: Point2, id: u32) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push(id);
    }

    fn near(&self, p: Point2, out: &mut Vec<u32>) {
        let (kx, ky) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(v) = self.buckets.get(&(kx + dx, ky + dy)) {
                    out.extend_from_slice(v);
                }
            }
        }
    }
}

/// Vertex weld tolerance relative to the soup's diameter.
pub const WELD_REL: f64 = 1e-12;

/// Welds vertices and splits every triangle edge at the vertices lying on it.
pub fn adjacency(tris: &[[Point2; 3]]) -> Adjacency {
    if tris.is_empty() {
        return Adjacency { verts: Vec::new(), segments: Vec::new() };
    }
    let (mut lo, mut hi) = (tris[0][0], tris[0][0]);
    for t in tris {
        for p in t {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
    }
    let diam = (hi - lo).norm().max(f64::MIN_POSITIVE);
    let tol = WELD_REL * diam;

    let mut weld = Grid::new(tol * 4.0);
    let mut verts: Vec<Point2> = Vec::new();
    let mut tri_v: Vec<[u32; 3]> = Vec::with_capacity(tris.len());
    let mut cand = Vec::new();
    for t in tris {
        let mut ids = [0u32; 3];
        for (k, p) in t.iter().enumerate() {
            cand.clear();
            weld.near(*p, &mut cand);
            ids[k] = match cand.iter().find(|&&c| (verts[c as usize] - *p).norm() <= tol) {
                Some(&c) => c,
                None => {
                    let id = verts.len() as u32;
                    verts.push(*p);
                    weld.insert(*p, id);
                    id
                }
            };
        }
        tri_v.push(ids);
    }

    // Coarse grid sized to the typical edge length for on-edge queries.
    let total_len: f64 = tris.iter().map(triangle_perimeter).sum();
    let h = (total_len / (3.0 * tris.len() as f64)).max(diam * 1e-9);
    let mut coarse = Grid::new(h);
    for (i, p) in verts.iter().enumerate() {
        coarse.insert(*p, i as u32);
    }

    let mut segs: HashMap<(u32, u32), SmallVec<[u32; 2]>> = HashMap::with_capacity(tris.len() * 2);
    let mut on_edge: Vec<(f64, u32)> = Vec::new();
    for (ci, ids) in tri_v.iter().enumerate() {
        for e in 0..3 {
            let (ia, ib) = (ids[e], ids[(e + 1) % 3]);
            let (pa, pb) = (verts[ia as usize], verts[ib as usize]);
            let d = pb - pa;
            let len = d.norm();
            if len == 0.0 {
                continue;
            }
            let steps = (len / h).ceil() as usize + 1;
            cand.clear();
            for s in 0..=steps {
                coarse.near(pa + d.scale(s as f64 / steps as f64), &mut cand);
            }
            cand.sort_unstable();
            cand.dedup();
            on_edge.clear();
            on_edge.push((0.0, ia));
            on_edge.push((1.0, ib));
            for &v in &cand {
                if v == ia || v == ib {
                    continue;
                }
                let p = verts[v as usize] - pa;
                let t = p.dot(d) / (len * len);
                if t <= 0.0 || t >= 1.0 {
                    continue;
                }
                if (d.cross(p) / len).abs() <= tol * 8.0 {
                    on_edge.push((t, v));
                }
            }
            on_edge.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in on_edge.windows(2) {
                let key = (w[0].1.min(w[1].1), w[0].1.max(w[1].1));
                let entry = segs.entry(key).or_default();
                if !entry.contains(&(ci as u32)) {
                    entry.push(ci as u32);
                }
            }
        }
    }
    let mut segments: Vec<Segment> = segs.into_iter().map(|((a, b), cells)| Segment { a, b, cells }).collect();
    segments.sort_unstable_by_key(|s| (s.a, s.b));
    Adjacency { verts, segments }
}

/// A shared segment on which two adjacent affine maps disagree.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub cells: (usize, usize),
    pub endpoints: (Point2, Point2),
    pub deviation: f64,
}

/// Shared segments whose two maps differ by more than `TOL_CONT_REL·diam(Ω)` at an endpoint.
pub fn continuity_check(mesh: &Mesh) -> Vec<Violation> {
    let adj = adjacency(&mesh.triangles());
    continuity_with(mesh, &adj)
}

pub fn continuity_with(mesh: &Mesh, adj: &Adjacency) -> Vec<Violation> {
    let tol = TOL_CONT_REL * mesh.domain_diameter().max(f64::MIN_POSITIVE);
    let mut out = Vec::new();
    for s in &adj.segments {
        let (pa, pb) = (adj.verts[s.a as usize], adj.verts[s.b as usize]);
        for (i, &c0) in s.cells.iter().enumerate() {
            for &c1 in &s.cells[i + 1..] {
                let (m0, m1) = (&mesh.cells[c0 as usize].map, &mesh.cells[c1 as usize].map);
                let dev = (m0.apply(pa) - m1.apply(pa)).norm().max((m0.apply(pb) - m1.apply(pb)).norm());
                if dev > tol {
                    out.push(Violation { cells: (c0 as usize, c1 as usize), endpoints: (pa, pb), deviation: dev });
                }
            }
        }
    }
    out
}

fn on_polygon_boundary(poly: &[Point2], p: Point2, tol: f64) -> bool {
    let n = poly.len();
    (0..n).any(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let d = b - a;
        let len = d.norm();
        let t = (p - a).dot(d) / (len * len);
        (-1e-12..=1.0 + 1e-12).contains(&t) && ((d.cross(p - a)) / len).abs() <= tol
    })
}

/// Counts of segments that break the partition property: interior segments
/// seen by only one cell, and segments claimed by more than two cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PartitionDefects {
    pub unmatched: usize,
    pub overcovered: usize,
}

pub fn partition_defects(domain: &[Point2], adj: &Adjacency) -> PartitionDefects {
    let tol = 1e-10 * diameter(domain);
    let mut d = PartitionDefects::default();
    for s in &adj.segments {
        match s.cells.len() {
            1 => {
                let (pa, pb) = (adj.verts[s.a as usize], adj.verts[s.b as usize]);
                let mid = pa.lerp(pb, 0.5);
                if !(on_polygon_boundary(domain, pa, tol)
                    && on_polygon_boundary(domain, pb, tol)
                    && on_polygon_boundary(domain, mid, tol))
                {
                    d.unmatched += 1;
                }
            }
            2 => {}
            _ => d.overcovered += 1,
        }
    }
    d
}

/// Uniform-grid point locator over the cells of a mesh.
pub struct Locator<'a> {
    tris: &'a [Cell],
    lo: Point2,
    h: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl<'a> Locator<'a> {
    pub fn new(cells: &'a [Cell]) -> Self {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for c in cells {
            for p in &c.verts {
                lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        let ext = hi - lo;
        let area = (ext.x * ext.y).max(f64::MIN_POSITIVE);
        let h = (area / cells.len().max(1) as f64).sqrt().max(ext.x.max(ext.y) / 4096.0).max(f64::MIN_POSITIVE);
        let nx = ((ext.x / h).ceil() as usize).max(1);
        let ny = ((ext.y / h).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for (i, c) in cells.iter().enumerate() {
            let (mut bl, mut bh) = (c.verts[0], c.verts[0]);
            for p in &c.verts[1..] {
                bl = Point2::new(bl.x.min(p.x), bl.y.min(p.y));
                bh = Point2::new(bh.x.max(p.x), bh.y.max(p.y));
            }
            let (x0, y0) = Self::cell_of(lo, h, nx, ny, bl);
            let (x1, y1) = Self::cell_of(lo, h, nx, ny, bh);
            for x in x0..=x1 {
                for y in y0..=y1 {
                    buckets[y * nx + x].push(i as u32);
                }
            }
        }
        Self { tris: cells, lo, h, nx, ny, buckets }
    }

    fn cell_of(lo: Point2, h: f64, nx: usize, ny: usize, p: Point2) -> (usize, usize) {
        let x = (((p.x - lo.x) / h).floor().max(0.0) as usize).min(nx - 1);
        let y = (((p.y - lo.y) / h).floor().max(0.0) as usize).min(ny - 1);
        (x, y)
    }

    /// Index of a cell containing `p`, if any.
    pub fn locate(&self, p: Point2) -> Option<usize> {
        let (x, y) = Self::cell_of(self.lo, self.h, self.nx, self.ny, p);
        let b = &self.buckets[y * self.nx + x];
        let tol = 1e-12 * self.h;
        b.iter()
            .find(|&&i| point_in_triangle(&self.tris[i as usize].verts, p, 0.0))
            .or_else(|| b.iter().find(|&&i| point_in_triangle(&self.tris[i as usize].verts, p, tol)))
            .map(|&i| i as usize)
    }
}

/// Number of samples per domain edge in `boundary_check`.
pub const BOUNDARY_SAMPLES: usize = 64;

/// Largest `|u(x) − M0·x|` over sampled boundary points and all boundary
/// segment endpoints.
pub fn boundary_check(mesh: &Mesh, m0: &Mat2, domain: &[Point2]) -> f64 {
    let loc = Locator::new(&mesh.cells);
    let n = domain.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        let (a, b) = (domain[i], domain[(i + 1) % n]);
        for s in 0..=BOUNDARY_SAMPLES {
            let p = a.lerp(b, s as f64 / BOUNDARY_SAMPLES as f64);
            match loc.locate(p) {
                Some(c) => worst = worst.max((mesh.cells[c].map.apply(p) - m0.mul_vec(p)).norm()),
                None => worst = f64::INFINITY,
            }
        }
    }
    let tol = 1e-10 * diameter(domain);
    for c in &mesh.cells {
        for p in &c.verts {
            if on_polygon_boundary(domain, *p, tol) {
                worst = worst.max((c.map.apply(*p) - m0.mul_vec(*p)).norm());
            }
        }
    }
    worst
}

/// Checks that every cell lies inside its recorded parent and that children
/// conserve their parent's area.
pub fn refinement_check(fine: &Mesh, coarse: &Mesh) -> Result<()> {
    let mut child_area = vec![0.0f64; coarse.cells.len()];
    for c in &fine.cells {
        let p = c.parent as usize;
        let Some(par) = coarse.cells.get(p) else {
            return Err(Error::NotARefinement(format!("cell {} has no parent", format_id(&c.id))));
        };
        let tol = TOL_GEOM * triangle_perimeter(&par.verts).max(f64::MIN_POSITIVE);
        if !c.verts.iter().all(|v| point_in_triangle(&par.verts, *v, tol)) {
            return Err(Error::NotARefinement(format!(
                "cell {} leaves parent {}",
                format_id(&c.id),
                format_id(&par.id)
            )));
        }
        child_area[p] += c.area();
    }
    for (p, a) in coarse.cells.iter().zip(&child_area) {
        if (p.area() - a).abs() > 1e-9 * p.area() {
            return Err(Error::NotARefinement(format!(
                "children of {} cover area {a} of {}",
                format_id(&p.id),
                p.area()
            )));
        }
    }
    Ok(())
}

fn write_f(w: &mut impl Write, x: f64) -> std::io::Result<()> {
    write!(w, "{x:.16e}")
}

/// Streams a mesh as JSON with 17 significant digits per coordinate.
pub fn write_mesh_json(mesh: &Mesh, problem: Problem, w: &mut impl Write) -> std::io::Result<()> {
    let pname = match problem {
        Problem::O2 => "O2",
        Problem::KH => "KH",
    };
    write!(w, "{{\"generation\":{},\"problem\":\"{pname}\",\"cells\":[", mesh.generation)?;
    for (i, c) in mesh.cells.iter().enumerate() {
        if i > 0 {
            w.write_all(b",")?;
        }
        write!(w, "\n{{\"id\":\"{}\",\"verts\":[", format_id(&c.id))?;
        for (k, p) in c.verts.iter().enumerate() {
            if k > 0 {
                w.write_all(b",")?;
            }
            w.write_all(b"[")?;
            write_f(w, p.x)?;
            w.write_all(b",")?;
            write_f(w, p.y)?;
            w.write_all(b"]")?;
        }
        let g = c.map.grad;
        w.write_all(b"],\"grad\":[[")?;
        write_f(w, g.a11)?;
        w.write_all(b",")?;
        write_f(w, g.a12)?;
        w.write_all(b"],[")?;
        write_f(w, g.a21)?;
        w.write_all(b",")?;
        write_f(w, g.a22)?;
        w.write_all(b"]],\"offset\":[")?;
        write_f(w, c.map.offset.x)?;
        w.write_all(b",")?;
        write_f(w, c.map.offset.y)?;
        let s = &c.state;
        write!(
            w,
            "],\"state\":{{\"l\":{},\"j\":{},\"q\":{},\"case\":\"{}\",\"k\":{},\"jj\":{}}}",
            s.l,
            s.stage.j,
            s.q,
            s.case,
            s.stage.k,
            s.stage.anchor.unwrap_or(0)
        )?;
        match c.class {
            ClassTag::Generic => w.write_all(b",\"classTag\":{\"kind\":\"GENERIC_C\"}")?,
            ClassTag::SelfSimilar { angle, delta } => {
                w.write_all(b",\"classTag\":{\"kind\":\"SELF_SIMILAR_C1\",\"angle\":")?;
                write_f(w, angle)?;
                w.write_all(b",\"delta\":")?;
                write_f(w, delta)?;
                w.write_all(b"}")?;
            }
        }
        write!(w, ",\"caseTag\":\"{}\"}}", c.case_tag.as_str())?;
    }
    w.write_all(b"\n]}\n")
}

#[derive(Deserialize)]
struct StateDoc {
    l: i32,
    j: u32,
    q: u16,
    case: String,
    k: u32,
    jj: u8,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct ClassDoc {
    kind: String,
    angle: Option<f64>,
    delta: Option<f64>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct CellDoc {
    id: String,
    verts: [[f64; 2]; 3],
    grad: [[f64; 2]; 2],
    offset: [f64; 2],
    state: StateDoc,
    class_tag: ClassDoc,
    case_tag: Option<String>,
}

#[derive(Deserialize)]
struct MeshDoc {
    generation: u32,
    problem: Option<Problem>,
    cells: Vec<CellDoc>,
}

/// Parses a mesh written by [`write_mesh_json`]. The domain is not stored and
/// is left empty.
pub fn read_mesh_json(text: &str) -> Result<(Mesh, Option<Problem>)> {
    let doc: MeshDoc = serde_json::from_str(text)?;
    let mut cells = Vec::with_capacity(doc.cells.len());
    for c in doc.cells {
        let id: CellId = c
            .id
            .split('.')
            .map(|s| s.parse::<u32>().map_err(|_| Error::Config(format!("bad cell id {:?}", c.id))))
            .collect::<Result<_>>()?;
        let case = match c.state.case.as_str() {
            "C1" => Case::C1,
            "C2" => Case::C2,
            other => return Err(Error::Config(format!("bad case {other:?}"))),
        };
        let class = match c.class_tag.kind.as_str() {
            "GENERIC_C" => ClassTag::Generic,
            "SELF_SIMILAR_C1" => ClassTag::SelfSimilar {
                angle: c.class_tag.angle.unwrap_or(0.0),
                delta: c.class_tag.delta.unwrap_or(0.0),
            },
            other => return Err(Error::Config(format!("bad classTag {other:?}"))),
        };
        let phase = if case == Case::C2 { Phase::U } else { Phase::UTilde };
        let stage = Stage {
            k: c.state.k,
            j: c.state.j,
            phase,
            anchor: (c.state.jj > 0).then_some(c.state.jj),
        };
        let p = |a: [f64; 2]| Point2::new(a[0], a[1]);
        cells.push(Cell {
            id,
            parent: NO_PARENT,
            verts: [p(c.verts[0]), p(c.verts[1]), p(c.verts[2])],
            map: AffineMap2 { grad: Mat2::from_rows(c.grad), offset: p(c.offset) },
            state: CellState { l: c.state.l, q: c.state.q, case, stage },
            class,
            case_tag: c.case_tag.as_deref().and_then(CaseTag::parse).unwrap_or(CaseTag::A3),
            ledger: None,
        });
    }
    Ok((Mesh { generation: doc.generation, cells, domain: Vec::new(), parent: None }, doc.problem))
}
