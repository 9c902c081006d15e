//! Diamond replacement blocks.
//!
//! The canonical block lives on `conv{±e1, ±δe2}` and carries a map `φ` that
//! vanishes on the boundary, with `∇φ ≈ [[0,1−λ],[0,0]]` on a thin horizontal
//! band of volume fraction ≈ λ and `∇φ ≈ [[0,−λ],[0,0]]` on the rest.

use crate::error::{Error, Result};
use crate::geom2::{signed_area, triangle_area, AffineMap2};
use crate::inapprox::SplitResult;
use crate::mat2::RankOnePair;
use crate::{Mat2, Point2};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Rank-one laminate with an interpolation layer; second rows vanish.
    Generic,
    /// Trace-free block: every gradient has zero trace.
    DivFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    /// The band carrying the minority gradient.
    Thin,
    /// Everything else (the marked sub-domain).
    Thick,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockCell {
    pub tri: [Point2; 3],
    pub grad: Mat2,
    pub offset: Point2,
    pub side: Side,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalBlock {
    pub cells: Vec<BlockCell>,
    pub delta: f64,
    pub lambda: f64,
    pub variant: Variant,
}

impl CanonicalBlock {
    /// Interpolation coefficient `λ(1−λ)/(1−λ−μ)` with `μ = (1−λ)δ`.
    pub fn interp_coeff(&self) -> f64 {
        let mu = (1.0 - self.lambda) * self.delta;
        self.lambda * (1.0 - self.lambda) / (1.0 - self.lambda - mu)
    }

    /// `λ(1−λ)δ² / (μ(1−μ))`, zero for the generic variant.
    pub fn q(&self) -> f64 {
        match self.variant {
            Variant::Generic => 0.0,
            Variant::DivFree => block_q(self.lambda, self.delta),
        }
    }

    pub fn area(&self) -> f64 {
        2.0 * self.delta
    }

    pub fn side_area(&self, side: Side) -> f64 {
        self.cells.iter().filter(|c| c.side == side).map(|c| triangle_area(&c.tri)).sum()
    }

    /// Gradients of the two laminate phases in the normalized frame.
    pub fn laminate(&self) -> (Mat2, Mat2) {
        let l = self.lambda;
        (Mat2::new(0.0, 1.0 - l, 0.0, 0.0), Mat2::new(0.0, -l, 0.0, 0.0))
    }

    /// Value of `φ` at a point of the block (zero outside).
    pub fn eval(&self, p: Point2) -> Point2 {
        self.cells
            .iter()
            .find(|c| crate::geom2::point_in_triangle(&c.tri, p, 1e-15))
            .map_or(Point2::zero(), |c| c.grad.mul_vec(p) + c.offset)
    }
}

pub fn block_q(lambda: f64, delta: f64) -> f64 {
    let mu = (1.0 - lambda) * delta;
    lambda * (1.0 - lambda) * delta * delta / (mu * (1.0 - mu))
}

/// Canonical diamond block for weight `λ` and aspect `δ`.
pub fn conti_block(lambda: f64, delta: f64, variant: Variant) -> Result<CanonicalBlock> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::BadParameter(format!("lambda = {lambda} not in (0,1)")));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::BadParameter(format!("delta = {delta} not in (0,1/2)")));
    }
    let l = lambda;
    let mu = (1.0 - l) * delta;
    let h = mu * l;
    let div = variant == Variant::DivFree;
    let q = if div { block_q(l, delta) } else { 0.0 };
    let g = if div { l * (1.0 - l) * delta * delta } else { 0.0 };
    let c = l * (1.0 - l) / (1.0 - l - mu);
    let dl = delta * l;
    let p = Point2::new;
    let v = [
        p(1.0, 0.0),
        p(0.0, delta),
        p(-1.0, 0.0),
        p(0.0, -delta),
        p(mu, dl),
        p(-mu, dl),
        p(-mu, -dl),
        p(mu, -dl),
    ];
    let phi = [Point2::zero(), Point2::zero(), Point2::zero(), Point2::zero(), p(h, -g), p(h, g), p(-h, g), p(-h, -g)];
    let s2 = if div { delta * delta } else { 0.0 };
    let sd = if div { delta } else { 0.0 };
    let thin_mid = Mat2::new(0.0, 1.0 - l, -q * (1.0 - mu), 0.0);
    let thick_mid = Mat2::new(0.0, -l, -q * (1.0 - mu), 0.0);
    let thin_end = Mat2::new(0.0, 1.0 - l, q * mu, 0.0);
    let d = Mat2::new(-delta, -1.0, s2, sd).scale(c);
    let d2 = Mat2::new(delta, -1.0, s2, -sd).scale(c);
    let recipe: [([usize; 3], Mat2, Side); 10] = [
        ([6, 7, 4], thin_mid, Side::Thin),
        ([6, 4, 5], thin_mid, Side::Thin),
        ([5, 4, 1], thick_mid, Side::Thick),
        ([7, 6, 3], thick_mid, Side::Thick),
        ([7, 0, 4], thin_end, Side::Thin),
        ([5, 2, 6], thin_end, Side::Thin),
        ([4, 0, 1], d, Side::Thick),
        ([6, 2, 3], d, Side::Thick),
        ([5, 1, 2], d2, Side::Thick),
        ([7, 3, 0], d2, Side::Thick),
    ];
    let mut cells = Vec::with_capacity(recipe.len());
    for (idx, grad, side) in recipe {
        let tri = idx.map(|i| v[i]);
        if triangle_area(&tri) < 1e-300 {
            return Err(Error::BadParameter(format!("block triangle area underflow (lambda {l}, delta {delta})")));
        }
        debug_assert!(signed_area(&tri) > 0.0);
        let offset = phi[idx[0]] - grad.mul_vec(v[idx[0]]);
        cells.push(BlockCell { tri, grad, offset, side });
    }
    Ok(CanonicalBlock { cells, delta, lambda, variant })
}

/// Placement of a canonical block: `x = center + scale·R(angle)·ξ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub angle: f64,
    pub scale: f64,
    pub center: Point2,
}

impl Frame {
    pub fn rotation(&self) -> Mat2 {
        Mat2::rotation(self.angle)
    }

    pub fn to_world(&self, xi: Point2) -> Point2 {
        self.center + self.rotation().mul_vec(xi).scale(self.scale)
    }

    pub fn to_local(&self, x: Point2) -> Point2 {
        self.rotation().transpose().mul_vec(x - self.center).scale(1.0 / self.scale)
    }

    /// World vertices of the diamond `conv{±e1, ±δe2}`.
    pub fn diamond(&self, delta: f64) -> [Point2; 4] {
        [(1.0, 0.0), (0.0, delta), (-1.0, 0.0), (0.0, -delta)].map(|(x, y)| self.to_world(Point2::new(x, y)))
    }
}

/// Angle whose rotation maps `e2` onto the direction of `n`.
pub fn normal_angle(n: Point2) -> f64 {
    (-n.x).atan2(n.y)
}

/// An instantiated block triangle. `split_side` indexes the split (0 = `a`, 1 = `b`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub verts: [Point2; 3],
    pub map: AffineMap2<f64>,
    pub side: Side,
    pub split_side: usize,
}

/// Thin-minus-thick rank-one pair of a split, and the thin side index.
pub fn thin_data(split: &SplitResult) -> (RankOnePair<f64>, usize, f64) {
    let thick = split.persistent();
    let thin = 1 - thick;
    let (wa, wb) = split.weights();
    let w = if thin == 0 { wa } else { wb };
    let a = if thin == 0 { split.dir.a } else { -split.dir.a };
    (RankOnePair { a, n: split.dir.n }, thin, w)
}

/// Places `block` in `frame` on top of the affine map `x ↦ Mx + b`, realizing
/// the two sides of `split`. The block's `λ` must be the thin side's weight and
/// the frame's short axis must follow the split normal.
pub fn instantiate(block: &CanonicalBlock, frame: &Frame, m: &Mat2, b: Point2, split: &SplitResult) -> Vec<Piece> {
    let (pair, thin, w) = thin_data(split);
    debug_assert!((w - block.lambda).abs() <= 1e-9, "block lambda {} vs split weight {w}", block.lambda);
    let r = frame.rotation();
    let re1 = r.col(0);
    let re2 = r.col(1);
    let nn = pair.n.norm();
    // a ⊗ n = (a|n|) ⊗ n̂, and n̂ = ±R e2.
    let mut aw = pair.a.scale(nn);
    if nn > 0.0 && re2.dot(pair.n) < 0.0 {
        aw = -aw;
    }
    let l = match block.variant {
        Variant::Generic => Mat2::outer(aw, Point2::new(1.0, 0.0)),
        Variant::DivFree => {
            let sigma = if aw.dot(re1) < 0.0 { -1.0 } else { 1.0 };
            r.scale(sigma * aw.norm())
        }
    };
    let rt = r.transpose();
    block
        .cells
        .iter()
        .map(|c| {
            let lg = l * c.grad * rt;
            let grad = *m + lg;
            let offset = b - lg.mul_vec(frame.center) + l.mul_vec(c.offset).scale(frame.scale);
            let verts = c.tri.map(|p| frame.to_world(p));
            let split_side = if c.side == Side::Thin { thin } else { 1 - thin };
            Piece { verts, map: AffineMap2 { grad, offset }, side: c.side, split_side }
        })
        .collect()
}

/// Distance of every gradient of `block` to the laminate pair, maximized.
pub fn block_eps(block: &CanonicalBlock) -> f64 {
    let (a, b) = block.laminate();
    block.cells.iter().map(|c| (c.grad - a).norm().min((c.grad - b).norm())).fold(0.0, f64::max)
}

/// Theoretical bound `4√2·δλ(1−λ)` on [`block_eps`] for the generic variant.
pub fn eps_generic(lambda: f64, delta: f64) -> f64 {
    4.0 * 2f64.sqrt() * delta * lambda * (1.0 - lambda)
}
