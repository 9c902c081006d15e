//! Coverings of triangles by aligned diamonds plus a triangular remainder.
//!
//! Three recipes: an aligned isosceles triangle holds one diamond and two
//! half-size copies of itself; a box of aspect `1 : δ⌊1/δ⌋` holds a vertical
//! stack of diamonds; an arbitrary triangle is reduced to boxes inscribed in
//! squares packed into right-angle corner rectangles.

use crate::blocks::Frame;
use crate::error::{Error, Result};
use crate::geom2::{ccw, signed_area, triangle_area, triangle_perimeter, CaseTag, ClassTag};
use crate::scalar::{TOL_ANGLE, TOL_GEOM};
use crate::{Mat2, Point2};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemainderPiece {
    pub tri: [Point2; 3],
    pub class: ClassTag,
    pub case_tag: CaseTag,
}

/// Measured covering constants.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Measured {
    /// Diamond area over input area.
    pub v1: f64,
    pub perim_good: f64,
    pub perim_c1: f64,
    pub perim_rest: f64,
    pub area_in: f64,
    pub perim_in: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverPlan {
    pub delta: f64,
    pub diamonds: Vec<Frame>,
    pub remainder: Vec<RemainderPiece>,
    pub measured: Measured,
}

pub fn diamond_area(f: &Frame, delta: f64) -> f64 {
    2.0 * delta * f.scale * f.scale
}

pub fn diamond_perimeter(f: &Frame, delta: f64) -> f64 {
    4.0 * f.scale * (1.0 + delta * delta).sqrt()
}

impl CoverPlan {
    fn new(delta: f64) -> Self {
        Self { delta, diamonds: Vec::new(), remainder: Vec::new(), measured: Measured::default() }
    }

    fn push(&mut self, tri: [Point2; 3], class: ClassTag, case_tag: CaseTag) {
        self.remainder.push(RemainderPiece { tri: ccw(tri), class, case_tag });
    }

    fn extend(&mut self, other: CoverPlan) {
        self.diamonds.extend(other.diamonds);
        self.remainder.extend(other.remainder);
    }

    /// Recomputes the measured constants against an input of the given area and perimeter.
    fn seal(mut self, area_in: f64, perim_in: f64) -> Self {
        let d = self.delta;
        let good: f64 = self.diamonds.iter().map(|f| diamond_area(f, d)).sum();
        let mut m = Measured { area_in, perim_in, v1: good / area_in, ..Measured::default() };
        m.perim_good = self.diamonds.iter().map(|f| diamond_perimeter(f, d)).sum();
        for r in &self.remainder {
            let p = triangle_perimeter(&r.tri);
            match r.class {
                ClassTag::SelfSimilar { .. } => m.perim_c1 += p,
                ClassTag::Generic => m.perim_rest += p,
            }
        }
        self.measured = m;
        self
    }

    pub fn covered_area(&self) -> f64 {
        let d = self.delta;
        self.diamonds.iter().map(|f| diamond_area(f, d)).sum::<f64>()
            + self.remainder.iter().map(|r| triangle_area(&r.tri)).sum::<f64>()
    }

    pub fn total_perimeter(&self) -> f64 {
        self.measured.perim_good + self.measured.perim_c1 + self.measured.perim_rest
    }

    /// Number of mesh cells the plan produces with `per_diamond` triangles per block.
    pub fn cell_count(&self, per_diamond: usize) -> usize {
        self.diamonds.len() * per_diamond + self.remainder.len()
    }
}

fn angle_diff_mod_pi(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

/// Apex index of an isosceles triangle aligned with a frame of angle
/// `angle` and aspect `delta`, if it is one.
pub fn aligned_apex(tri: &[Point2; 3], angle: f64, delta: f64) -> Option<usize> {
    let apex = (0..3).min_by(|&i, &j| {
        let li = (tri[(i + 1) % 3] - tri[(i + 2) % 3]).norm();
        let lj = (tri[(j + 1) % 3] - tri[(j + 2) % 3]).norm();
        li.total_cmp(&lj)
    })?;
    let (p, b1, b2) = (tri[apex], tri[(apex + 1) % 3], tri[(apex + 2) % 3]);
    let mb = b1.lerp(b2, 0.5);
    let axis = p - mb;
    let h = axis.norm();
    let half_base = (b1 - b2).norm() / 2.0;
    if h == 0.0 {
        return None;
    }
    let axis_angle = axis.y.atan2(axis.x);
    let aspect_ok = (half_base / h - delta).abs() <= TOL_GEOM.max(1e-7 * delta);
    let legs_ok = ((p - b1).norm() - (p - b2).norm()).abs() <= 1e-7 * h;
    (aspect_ok && legs_ok && angle_diff_mod_pi(axis_angle, angle) <= TOL_ANGLE).then_some(apex)
}

/// Case (i): one inscribed diamond and two half-scale copies.
pub fn cover_isosceles(tri: &[Point2; 3], delta: f64, angle: f64) -> Result<CoverPlan> {
    let apex = aligned_apex(tri, angle, delta)
        .ok_or_else(|| Error::NotAligned(format!("triangle {tri:?} is not aligned with angle {angle}, delta {delta}")))?;
    let (p, b1, b2) = (tri[apex], tri[(apex + 1) % 3], tri[(apex + 2) % 3]);
    let mb = b1.lerp(b2, 0.5);
    let h = (p - mb).norm();
    let mut plan = CoverPlan::new(delta);
    plan.diamonds.push(Frame { angle, scale: h / 2.0, center: p.lerp(mb, 0.5) });
    let tag = ClassTag::SelfSimilar { angle, delta };
    plan.push([b1, mb, p.lerp(b1, 0.5)], tag, CaseTag::A3tII);
    plan.push([mb, b2, p.lerp(b2, 0.5)], tag, CaseTag::A3tII);
    Ok(plan.seal(triangle_area(tri), triangle_perimeter(tri)))
}

/// Box `center + R(angle)·([−hw, hw] × [−hh, hh])`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub center: Point2,
    pub angle: f64,
    pub half_w: f64,
    pub half_h: f64,
}

impl Rect {
    pub fn corners(&self) -> [Point2; 4] {
        let r = Mat2::rotation(self.angle);
        [(1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0)]
            .map(|(x, y)| self.center + r.mul_vec(Point2::new(x * self.half_w, y * self.half_h)))
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_w * self.half_h
    }

    pub fn perimeter(&self) -> f64 {
        4.0 * (self.half_w + self.half_h)
    }
}

/// `⌊1/δ⌋`, the number of diamonds per box.
pub fn stack_count(delta: f64) -> usize {
    (1.0 / delta + 1e-12).floor() as usize
}

/// Case (ii): `⌊1/δ⌋` stacked diamonds, `2(⌊1/δ⌋−1)` aligned gap triangles and four corners.
pub fn cover_box(rect: &Rect, delta: f64) -> Result<CoverPlan> {
    let n = stack_count(delta);
    let expected = delta * n as f64;
    let ratio = rect.half_h / rect.half_w;
    if (ratio - expected).abs() > TOL_GEOM.max(1e-9 * expected) {
        return Err(Error::BadAspect { ratio, expected });
    }
    let t = rect.half_w;
    let r = Mat2::rotation(rect.angle);
    let at = |x: f64, y: f64| rect.center + r.mul_vec(Point2::new(x, y)).scale(t);
    let mut plan = CoverPlan::new(delta);
    let ys: Vec<f64> = (0..n).map(|i| delta * (2.0 * i as f64 + 1.0 - n as f64)).collect();
    for &y in &ys {
        plan.diamonds.push(Frame { angle: rect.angle, scale: t, center: at(0.0, y) });
    }
    let tag = ClassTag::SelfSimilar { angle: rect.angle, delta };
    for w in ys.windows(2) {
        let (y0, y1) = (w[0], w[1]);
        let ym = (y0 + y1) / 2.0;
        plan.push([at(-1.0, y0), at(0.0, ym), at(-1.0, y1)], tag, CaseTag::A3tIII1);
        plan.push([at(1.0, y0), at(1.0, y1), at(0.0, ym)], tag, CaseTag::A3tIII1);
    }
    let top = expected;
    let (yb, yt) = (ys[0], ys[n - 1]);
    let g = ClassTag::Generic;
    plan.push([at(-1.0, -top), at(0.0, -top), at(-1.0, yb)], g, CaseTag::A3tIII2);
    plan.push([at(0.0, -top), at(1.0, -top), at(1.0, yb)], g, CaseTag::A3tIII2);
    plan.push([at(1.0, yt), at(1.0, top), at(0.0, top)], g, CaseTag::A3tIII2);
    plan.push([at(-1.0, yt), at(0.0, top), at(-1.0, top)], g, CaseTag::A3tIII2);
    Ok(plan.seal(rect.area(), rect.perimeter()))
}

/// Relative area below which a remainder sliver is dropped.
const SLIVER: f64 = 1e-14;

/// Splits at the foot of the altitude from the vertex opposite the longest
/// side; returns right triangles as (right-angle vertex, leg end, leg end).
fn right_triangles(tri: &[Point2; 3]) -> Vec<[Point2; 3]> {
    let longest = (0..3)
        .max_by(|&i, &j| {
            let li = (tri[(i + 1) % 3] - tri[i]).norm();
            let lj = (tri[(j + 1) % 3] - tri[j]).norm();
            li.total_cmp(&lj)
        })
        .unwrap_or(0);
    let (a, b, c) = (tri[longest], tri[(longest + 1) % 3], tri[(longest + 2) % 3]);
    let ab = b - a;
    let (ca, cb) = (a - c, b - c);
    let cos_c = ca.dot(cb) / (ca.norm() * cb.norm());
    if cos_c.abs() <= 1e-12 {
        return vec![[c, a, b]];
    }
    let foot = a + ab.scale((c - a).dot(ab) / ab.dot(ab));
    vec![[foot, a, c], [foot, c, b]]
}

/// Places a box of orientation `angle` inside the square `o + [0,a]·u + [0,a]·w`
/// with its bounding box anchored at `o`, and covers the rest of the square.
fn fill_square(plan: &mut CoverPlan, o: Point2, u: Point2, w: Point2, a: f64, delta: f64, angle: f64) -> Result<()> {
    let n = stack_count(delta);
    let dn = delta * n as f64;
    let phi = angle - u.y.atan2(u.x);
    let (c, s) = (phi.cos().abs(), phi.sin().abs());
    let t = (a / 2.0) / (c + dn * s).max(s + dn * c);
    let (hx, hy) = (t * (c + dn * s), t * (s + dn * c));
    let at = |x: f64, y: f64| o + u.scale(x) + w.scale(y);
    let center = at(hx, hy);
    let rect = Rect { center, angle, half_w: t, half_h: t * dn };
    let boxed = cover_box(&rect, delta)?;
    plan.extend(boxed);

    let tiny = SLIVER * a * a;
    let g = ClassTag::Generic;
    let tag = CaseTag::A3tIII2;
    // Bounding box minus the box: one right triangle per box edge.
    let to_local = |p: Point2| {
        let d = p - o;
        (d.dot(u), d.dot(w))
    };
    let corners = ccw_quad(rect.corners());
    for i in 0..4 {
        let (p1, p2) = (corners[i], corners[(i + 1) % 4]);
        let ((x1, y1), (x2, y2)) = (to_local(p1), to_local(p2));
        let cand = [at(x1, y2), at(x2, y1)];
        let q = cand
            .into_iter()
            .max_by(|a, b| (p2 - p1).cross(p1 - *a).total_cmp(&(p2 - p1).cross(p1 - *b)))
            .unwrap_or(cand[0]);
        let tri = [p1, q, p2];
        if triangle_area(&tri) > tiny {
            plan.push(tri, g, tag);
        }
    }
    // Square minus bounding box: an L of two rectangles.
    let (bx, by) = (2.0 * hx, 2.0 * hy);
    for (x0, y0, x1, y1) in [(bx, 0.0, a, a), (0.0, by, bx, a)] {
        if (x1 - x0) * (y1 - y0) > tiny {
            plan.push([at(x0, y0), at(x1, y0), at(x1, y1)], g, tag);
            plan.push([at(x0, y0), at(x1, y1), at(x0, y1)], g, tag);
        }
    }
    Ok(())
}

fn ccw_quad(q: [Point2; 4]) -> [Point2; 4] {
    let area: f64 = (0..4).map(|i| q[i].cross(q[(i + 1) % 4])).sum();
    if area < 0.0 {
        [q[3], q[2], q[1], q[0]]
    } else {
        q
    }
}

/// Case (iii): arbitrary triangle, boxes of orientation `angle`.
pub fn cover_triangle(tri: &[Point2; 3], delta: f64, angle: f64) -> Result<CoverPlan> {
    let area = triangle_area(tri);
    if !(area > 0.0) {
        return Err(Error::BadParameter("degenerate triangle".into()));
    }
    let g = ClassTag::Generic;
    let tag = CaseTag::A3tIII2;
    let mut plan = CoverPlan::new(delta);
    for [c, p, q] in right_triangles(tri) {
        let rt = [c, p, q];
        if triangle_area(&rt) <= SLIVER * area {
            if triangle_area(&rt) > 0.0 {
                plan.push(rt, g, tag);
            }
            continue;
        }
        let (mp, mq) = (c.lerp(p, 0.5), c.lerp(q, 0.5));
        let mpq = p.lerp(q, 0.5);
        plan.push([mp, p, mpq], g, tag);
        plan.push([mq, mpq, q], g, tag);
        // Corner rectangle c, mp, mpq, mq with short side along u.
        let (lp, lq) = ((mp - c).norm(), (mq - c).norm());
        let (short, long, u, w) =
            if lp <= lq { (lp, lq, (mp - c).scale(1.0 / lp), (mq - c).scale(1.0 / lq)) } else { (lq, lp, (mq - c).scale(1.0 / lq), (mp - c).scale(1.0 / lp)) };
        let m = long / short;
        let n_sq = if m < 2.0 { 1 } else { (m / 2.0).floor() as usize };
        for k in 0..n_sq {
            fill_square(&mut plan, c + w.scale(k as f64 * short), u, w, short, delta, angle)?;
        }
        let y0 = n_sq as f64 * short;
        if (long - y0) * short > SLIVER * area {
            let at = |x: f64, y: f64| c + u.scale(x) + w.scale(y);
            plan.push([at(0.0, y0), at(short, y0), at(short, long)], g, tag);
            plan.push([at(0.0, y0), at(short, long), at(0.0, long)], g, tag);
        }
    }
    Ok(plan.seal(area, triangle_perimeter(tri)))
}

/// Chooses the recipe for a cell: the self-similar one when the stored
/// orientation tag matches the current frame, the generic one otherwise.
pub fn cover(tri: &[Point2; 3], class: ClassTag, delta: f64, angle: f64) -> Result<CoverPlan> {
    if let ClassTag::SelfSimilar { angle: a, delta: d } = class {
        if angle_diff_mod_pi(a, angle) <= TOL_ANGLE && (d - delta).abs() <= 1e-12 * delta {
            if let Ok(plan) = cover_isosceles(tri, delta, angle) {
                return Ok(plan);
            }
        }
    }
    cover_triangle(tri, delta, angle)
}

/// Triangulated diamond (two triangles along the long diagonal).
pub fn diamond_triangles(f: &Frame, delta: f64) -> [[Point2; 3]; 2] {
    let d = f.diamond(delta);
    [[d[0], d[1], d[2]], [d[2], d[3], d[0]]]
}

/// Pieces of a plan as a triangle soup, diamonds first.
pub fn plan_triangles(plan: &CoverPlan) -> Vec<[Point2; 3]> {
    let mut out: Vec<[Point2; 3]> = plan.diamonds.iter().flat_map(|f| diamond_triangles(f, plan.delta)).collect();
    out.extend(plan.remainder.iter().map(|r| r.tri));
    debug_assert!(out.iter().all(|t| signed_area(t) >= 0.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom2::{adjacency, partition_defects, PartitionDefects};
    use proptest::prelude::*;

    fn pt(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn assert_partition(plan: &CoverPlan, domain: &[Point2]) {
        let area = crate::geom2::polygon_area(domain).abs();
        assert!((plan.covered_area() - area).abs() <= 1e-9 * area, "{} vs {area}", plan.covered_area());
        let adj = adjacency(&plan_triangles(plan));
        assert_eq!(partition_defects(domain, &adj), PartitionDefects::default());
    }

    #[test]
    fn isosceles_example() {
        let d = 0.125;
        let tri = [pt(0.0, d), pt(-1.0, 0.0), pt(0.0, -d)];
        let plan = cover_isosceles(&tri, d, 0.0).unwrap();
        assert_eq!(plan.diamonds.len(), 1);
        assert_eq!(plan.diamonds[0], Frame { angle: 0.0, scale: 0.5, center: pt(-0.5, 0.0) });
        assert!((plan.measured.v1 - 0.5).abs() < 1e-15);
        assert_eq!(plan.remainder.len(), 2);
        for r in &plan.remainder {
            assert!((triangle_area(&r.tri) - 0.25 * triangle_area(&tri)).abs() < 1e-15);
            assert!(aligned_apex(&r.tri, 0.0, d).is_some());
        }
        assert!(plan.measured.perim_c1 <= 2.0 * triangle_perimeter(&tri));
        assert_partition(&plan, &tri);
        // Misaligned and wrong-aspect inputs.
        assert!(matches!(cover_isosceles(&tri, d, 0.3), Err(Error::NotAligned(_))));
        assert!(matches!(cover_isosceles(&tri, 0.2, 0.0), Err(Error::NotAligned(_))));
    }

    #[test]
    fn isosceles_rotation_equivariance() {
        let d = 0.125;
        let th = 0.7;
        let r = Mat2::rotation(th);
        let base = [pt(0.0, d), pt(-1.0, 0.0), pt(0.0, -d)];
        let rot = base.map(|p| r.mul_vec(p) + pt(3.0, -1.0));
        let p0 = cover_isosceles(&base, d, 0.0).unwrap();
        let p1 = cover_isosceles(&rot, d, th).unwrap();
        let c = r.mul_vec(p0.diamonds[0].center) + pt(3.0, -1.0);
        assert!((p1.diamonds[0].center - c).norm() < 1e-14);
        assert!((p1.measured.v1 - 0.5).abs() < 1e-12);
        assert_partition(&p1, &rot);
    }

    #[test]
    fn box_counts() {
        for (d, n) in [(0.25, 4usize), (0.5 - 1e-9, 2), (0.125, 8), (0.3, 3)] {
            let nn = stack_count(d);
            assert_eq!(nn, n);
            let rect = Rect { center: pt(0.3, 0.1), angle: 0.4, half_w: 1.5, half_h: 1.5 * d * n as f64 };
            let plan = cover_box(&rect, d).unwrap();
            assert_eq!(plan.diamonds.len(), n);
            let c1 = plan.remainder.iter().filter(|r| matches!(r.class, ClassTag::SelfSimilar { .. })).count();
            assert_eq!(c1, 2 * (n - 1));
            assert_eq!(plan.remainder.len() - c1, 4);
            assert!((plan.measured.v1 - 0.5).abs() < 1e-12);
            assert!(plan.measured.perim_good <= 2.0 * n as f64 * rect.perimeter());
            assert!(plan.measured.perim_rest <= 8.0 * rect.perimeter());
            for r in &plan.remainder {
                if let ClassTag::SelfSimilar { angle, delta } = r.class {
                    assert!(aligned_apex(&r.tri, angle, delta).is_some());
                }
            }
            assert_partition(&plan, &rect.corners());
        }
        let bad = Rect { center: pt(0.0, 0.0), angle: 0.0, half_w: 1.0, half_h: 0.3 };
        assert!(matches!(cover_box(&bad, 0.25), Err(Error::BadAspect { .. })));
    }

    #[test]
    fn box_at_half_is_two_diamonds() {
        let d = 0.5;
        let rect = Rect { center: pt(0.0, 0.0), angle: 0.0, half_w: 1.0, half_h: 1.0 };
        let plan = cover_box(&rect, d).unwrap();
        assert_eq!(plan.diamonds.len(), 2);
        assert_eq!(plan.remainder.len(), 2 + 4);
    }

    #[test]
    fn right_triangle_packing_example() {
        // Legs 2 and 8: the corner rectangle is 1 × 4 and holds two unit squares.
        let tri = [pt(0.0, 0.0), pt(2.0, 0.0), pt(0.0, 8.0)];
        let d = 0.125;
        let plan = cover_triangle(&tri, d, 0.3).unwrap();
        assert_eq!(plan.diamonds.len(), 2 * stack_count(d));
        let per_box = stack_count(d) as f64 * 2.0 * d;
        for chunk in plan.diamonds.chunks(stack_count(d)) {
            let s = chunk[0].scale;
            // box area = 2·(diamond area) ≥ ¼ of the unit square
            assert!(2.0 * per_box * s * s >= 0.25);
        }
        assert_partition(&plan, &tri);
    }

    #[test]
    fn equilateral_constants() {
        let tri = [pt(0.0, 0.0), pt(1.0, 0.0), pt(0.5, 3f64.sqrt() / 2.0)];
        for &(d, th) in &[(0.125, 0.0), (0.125, 0.9), (0.01, 2.0), (0.45, 0.2)] {
            let plan = cover_triangle(&tri, d, th).unwrap();
            assert!(plan.measured.v1 >= 0.01, "v1 = {}", plan.measured.v1);
            assert!(plan.total_perimeter() <= 100.0 / d * triangle_perimeter(&tri));
            assert_partition(&plan, &tri);
        }
    }

    #[test]
    fn dispatch() {
        let d = 0.125;
        let tri = [pt(0.0, d), pt(-1.0, 0.0), pt(0.0, -d)];
        let tag = ClassTag::SelfSimilar { angle: 0.0, delta: d };
        assert_eq!(cover(&tri, tag, d, std::f64::consts::PI).unwrap().diamonds.len(), 1);
        assert!(cover(&tri, tag, d, 0.5).unwrap().diamonds.len() > 1);
        assert!(cover(&tri, ClassTag::Generic, d, 0.0).unwrap().diamonds.len() > 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn random_triangles_partition(
            v in prop::array::uniform6(-1.0f64..1.0),
            th in -3.2f64..3.2,
            d in prop::sample::select(vec![0.125, 0.25, 0.3, 0.05]),
        ) {
            let tri = ccw([pt(v[0], v[1]), pt(v[2], v[3]), pt(v[4], v[5])]);
            let a = triangle_area(&tri);
            let per = triangle_perimeter(&tri);
            prop_assume!(a > 1e-3 * per * per);
            let plan = cover_triangle(&tri, d, th).unwrap();
            prop_assert!((plan.covered_area() - a).abs() <= 1e-9 * a);
            prop_assert!(plan.measured.v1 >= 0.01);
            prop_assert!(plan.total_perimeter() <= 100.0 / d * per);
            let adj = adjacency(&plan_triangles(&plan));
            prop_assert_eq!(partition_defects(&tri, &adj), PartitionDefects::default());
        }
    }
}
