//! 2×2 matrix kernel: closed-form SVD, symmetric/skew split, distances to
//! the O(2) and hexagonal-to-rhombic wells, and (symmetrized) rank-one algebra.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::{Scalar, TOL_GEOM};

/// Column vector in the plane. Also used as a point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Vec2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }

    /// Counterclockwise quarter turn.
    #[inline]
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    #[inline]
    pub fn lerp(self, o: Self, t: T) -> Self {
        self + (o - self).scale(t)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl<T: Scalar> Add for Vec2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> Sub for Vec2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> Neg for Vec2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Row-major 2×2 matrix `[[a11, a12], [a21, a22]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Matrix2<T> {
    pub a11: T,
    pub a12: T,
    pub a21: T,
    pub a22: T,
}

impl<T: Scalar> Matrix2<T> {
    #[inline]
    pub fn new(a11: T, a12: T, a21: T, a22: T) -> Self {
        Self { a11, a12, a21, a22 }
    }

    pub fn from_rows(r: [[T; 2]; 2]) -> Self {
        Self::new(r[0][0], r[0][1], r[1][0], r[1][1])
    }

    pub fn rows(&self) -> [[T; 2]; 2] {
        [[self.a11, self.a12], [self.a21, self.a22]]
    }

    #[inline]
    pub fn zero() -> Self {
        Self::diag(T::zero(), T::zero())
    }

    #[inline]
    pub fn identity() -> Self {
        Self::diag(T::one(), T::one())
    }

    #[inline]
    pub fn diag(d1: T, d2: T) -> Self {
        Self::new(d1, T::zero(), T::zero(), d2)
    }

    /// The generator `[[0, 1], [-1, 0]]` of Skew(2).
    #[inline]
    pub fn j() -> Self {
        Self::new(T::zero(), T::one(), -T::one(), T::zero())
    }

    /// Counterclockwise rotation by `theta`.
    pub fn rotation(theta: T) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c, -s, s, c)
    }

    /// `a ⊗ n = a nᵀ`.
    pub fn outer(a: Vec2<T>, n: Vec2<T>) -> Self {
        Self::new(a.x * n.x, a.x * n.y, a.y * n.x, a.y * n.y)
    }

    /// `a ⊙ n = (a ⊗ n + n ⊗ a) / 2`.
    pub fn sym_outer(a: Vec2<T>, n: Vec2<T>) -> Self {
        Self::outer(a, n).sym()
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        Self::new(self.a11, self.a21, self.a12, self.a22)
    }

    #[inline]
    pub fn det(&self) -> T {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    #[inline]
    pub fn trace(&self) -> T {
        self.a11 + self.a22
    }

    #[inline]
    pub fn norm(&self) -> T {
        (self.a11 * self.a11 + self.a12 * self.a12 + self.a21 * self.a21 + self.a22 * self.a22)
            .sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.a11.abs().max(self.a12.abs()).max(self.a21.abs().max(self.a22.abs()))
    }

    #[inline]
    pub fn scale(&self, s: T) -> Self {
        Self::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec2<T>) -> Vec2<T> {
        Vec2::new(self.a11 * v.x + self.a12 * v.y, self.a21 * v.x + self.a22 * v.y)
    }

    pub fn row(&self, i: usize) -> Vec2<T> {
        match i {
            0 => Vec2::new(self.a11, self.a12),
            _ => Vec2::new(self.a21, self.a22),
        }
    }

    pub fn col(&self, i: usize) -> Vec2<T> {
        match i {
            0 => Vec2::new(self.a11, self.a21),
            _ => Vec2::new(self.a12, self.a22),
        }
    }

    /// Symmetric part `(M + Mᵀ)/2`.
    pub fn sym(&self) -> Self {
        let h = T::lit(0.5);
        let off = (self.a12 + self.a21) * h;
        Self::new(self.a11, off, off, self.a22)
    }

    /// Skew part `(M − Mᵀ)/2`.
    pub fn skew(&self) -> Self {
        let w = self.skew_coeff();
        Self::new(T::zero(), w, -w, T::zero())
    }

    /// Coefficient `w` with `skew() = w·J`.
    #[inline]
    pub fn skew_coeff(&self) -> T {
        (self.a12 - self.a21) * T::lit(0.5)
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == T::zero() || !d.is_finite() {
            return None;
        }
        Some(Self::new(self.a22, -self.a12, -self.a21, self.a11).scale(T::one() / d))
    }

    pub fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a21.is_finite() && self.a22.is_finite()
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> T {
        svd2(self).sigma.1
    }
}

impl<T: Scalar> Add for Matrix2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.a11 + o.a11, self.a12 + o.a12, self.a21 + o.a21, self.a22 + o.a22)
    }
}

impl<T: Scalar> AddAssign for Matrix2<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Scalar> Sub for Matrix2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.a11 - o.a11, self.a12 - o.a12, self.a21 - o.a21, self.a22 - o.a22)
    }
}

impl<T: Scalar> Neg for Matrix2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

impl<T: Scalar> Mul for Matrix2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.a11 * o.a11 + self.a12 * o.a21,
            self.a11 * o.a12 + self.a12 * o.a22,
            self.a21 * o.a11 + self.a22 * o.a21,
            self.a21 * o.a12 + self.a22 * o.a22,
        )
    }
}

impl<T: Scalar> Mul<Vec2<T>> for Matrix2<T> {
    type Output = Vec2<T>;
    #[inline]
    fn mul(self, v: Vec2<T>) -> Vec2<T> {
        self.mul_vec(v)
    }
}

/// Symmetric/skew split of a matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymDecomp<T> {
    pub e: Matrix2<T>,
    pub w: Matrix2<T>,
}

/// `M = v1 · diag(σ.0, σ.1) · v2` with `σ.0 ≤ σ.1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Svd2<T> {
    pub v1: Matrix2<T>,
    pub sigma: (T, T),
    pub v2: Matrix2<T>,
}

impl<T: Scalar> Svd2<T> {
    pub fn reconstruct(&self) -> Matrix2<T> {
        self.v1 * Matrix2::diag(self.sigma.0, self.sigma.1) * self.v2
    }
}

/// Direction pair of a rank-one (`a ⊗ n`) or symmetrized (`a ⊙ n`) connection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankOnePair<T> {
    pub a: Vec2<T>,
    pub n: Vec2<T>,
}

impl<T: Scalar> RankOnePair<T> {
    pub fn outer(&self) -> Matrix2<T> {
        Matrix2::outer(self.a, self.n)
    }

    pub fn sym_outer(&self) -> Matrix2<T> {
        Matrix2::sym_outer(self.a, self.n)
    }

    /// Coefficient `w` with `ω(a ⊗ n) = w·J`.
    pub fn skew_coeff(&self) -> T {
        self.a.cross(self.n) * T::lit(0.5)
    }
}

/// Closed-form SVD. Ascending singular values, deterministic factors.
pub fn svd2<T: Scalar>(m: &Matrix2<T>) -> Svd2<T> {
    let h = T::lit(0.5);
    let (a, b, c, d) = (m.a11, m.a12, m.a21, m.a22);
    if a == T::zero() && b == T::zero() && c == T::zero() && d == T::zero() {
        return Svd2 { v1: Matrix2::identity(), sigma: (T::zero(), T::zero()), v2: Matrix2::identity() };
    }
    let e = (a + d) * h;
    let f = (a - d) * h;
    let g = (c + b) * h;
    let hh = (c - b) * h;
    let q = e.hypot(hh);
    let r = f.hypot(g);
    let sx = q + r;
    let sy = q - r;
    let a1 = g.atan2(f);
    let a2 = hh.atan2(e);
    let phi = (a2 + a1) * h;
    let theta = (a2 - a1) * h;

    // m = Rot(φ)·diag(sx, sy)·Rot(θ); move the sign of sy into v2, then sort.
    let mut v1 = Matrix2::rotation(phi);
    let mut v2 = Matrix2::rotation(theta);
    if sy < T::zero() {
        v2 = Matrix2::diag(T::one(), -T::one()) * v2;
    }
    let s_small = sy.abs();
    // Equal singular values need no reordering; this keeps diag(σ, σ) factored as Id·σ·Id.
    if s_small != sx {
        let perm = Matrix2::new(T::zero(), T::one(), T::one(), T::zero());
        v1 = v1 * perm;
        v2 = perm * v2;
    }

    let flip_first = v2.a11 < T::zero() || (v2.a11 == T::zero() && v2.a12 < T::zero());
    if flip_first {
        let dflip = Matrix2::diag(-T::one(), T::one());
        v1 = v1 * dflip;
        v2 = dflip * v2;
    }
    if v2.det() < T::zero() {
        let dflip = Matrix2::diag(T::one(), -T::one());
        v1 = v1 * dflip;
        v2 = dflip * v2;
    }
    Svd2 { v1, sigma: (s_small, sx), v2 }
}

pub fn sym_skew<T: Scalar>(m: &Matrix2<T>) -> SymDecomp<T> {
    SymDecomp { e: m.sym(), w: m.skew() }
}

/// Frobenius distances `(to SO(2), to O(2)∖SO(2))`.
pub fn dist_o2<T: Scalar>(m: &Matrix2<T>) -> (T, T) {
    let (s1, s2) = svd2(m).sigma;
    let one = T::one();
    let same = ((s1 - one).powi(2) + (s2 - one).powi(2)).sqrt();
    let cross = ((s1 + one).powi(2) + (s2 - one).powi(2)).sqrt();
    let det = m.det();
    if det > T::zero() {
        (same, cross)
    } else if det < T::zero() {
        (cross, same)
    } else {
        (same, same)
    }
}

/// The three linearized hexagonal-to-rhombic wells.
pub fn kh_wells<T: Scalar>() -> [Matrix2<T>; 3] {
    let h = T::lit(0.5);
    let r3h = T::lit(3.0).sqrt() * h;
    [
        Matrix2::diag(T::one(), -T::one()),
        Matrix2::new(-h, r3h, r3h, h),
        Matrix2::new(-h, -r3h, -r3h, h),
    ]
}

/// Distances `|e(M) − e⁽ʲ⁾|` to the wells `e⁽ʲ⁾ + Skew(2)`.
pub fn dist_kh<T: Scalar>(m: &Matrix2<T>) -> [T; 3] {
    let e = m.sym();
    kh_wells::<T>().map(|w| (e - w).norm())
}

/// Write a trace-free symmetric `E` with `det E < 0` as `a ⊙ n`.
pub fn sym_rank_one_decompose<T: Scalar>(e: &Matrix2<T>) -> Result<RankOnePair<T>> {
    let tol = T::lit(TOL_GEOM);
    if e.trace().abs() > tol * (T::one() + e.norm()) {
        return Err(Error::NotTraceFree(e.trace().to_f64().unwrap_or(f64::NAN)));
    }
    let h = T::lit(0.5);
    let p = (e.a11 - e.a22) * h;
    let r = (e.a12 + e.a21) * h;
    if -(p * p + r * r) >= -tol {
        return Err(Error::DegenerateDirection);
    }
    let lam = p.hypot(r);
    let half = r.atan2(p) * h;
    let (s, c) = half.sin_cos();
    let f1 = Vec2::new(c, s);
    let f2 = Vec2::new(-s, c);
    let rt2 = T::SQRT_2();
    Ok(RankOnePair { a: (f1 - f2).scale(rt2 * lam), n: (f1 + f2).scale(T::FRAC_1_SQRT_2()) })
}

/// Lift a symmetric split `e1, e2` to a rank-one connected pair with skew part `wM`:
/// `M1 = e1 + wM + (1−λ)S`, `M2 = e2 + wM − λS`, `S = sign·ω(a ⊗ n)`.
pub fn pull_up_skew<T: Scalar>(
    e1: &Matrix2<T>,
    e2: &Matrix2<T>,
    w_m: &Matrix2<T>,
    lambda: T,
    sign: T,
) -> Result<(Matrix2<T>, Matrix2<T>)> {
    let pair = sym_rank_one_decompose(&(*e1 - *e2))?;
    let s = Matrix2::j().scale(sign * pair.skew_coeff());
    let m1 = *e1 + *w_m + s.scale(T::one() - lambda);
    let m2 = *e2 + *w_m - s.scale(lambda);
    Ok((m1, m2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type M = Matrix2<f64>;

    fn close(a: &M, b: &M, tol: f64) -> bool {
        (*a - *b).max_abs() <= tol
    }

    // Eigenvalues of MᵀM by the characteristic polynomial; independent of svd2.
    fn sigma_oracle(m: &M) -> (f64, f64) {
        let g = m.transpose() * *m;
        let tr = g.trace();
        let det = g.det();
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let hi = tr / 2.0 + disc;
        let lo = (tr / 2.0 - disc).max(0.0);
        (lo.sqrt(), hi.sqrt())
    }

    // Minimum over sampled rotations and reflections.
    fn dist_o2_brute(m: &M, samples: usize) -> (f64, f64) {
        let mut best = (f64::INFINITY, f64::INFINITY);
        for i in 0..samples {
            let t = 2.0 * std::f64::consts::PI * i as f64 / samples as f64;
            let r = M::rotation(t);
            best.0 = best.0.min((*m - r).norm());
            best.1 = best.1.min((*m - r * M::diag(1.0, -1.0)).norm());
        }
        best
    }

    #[test]
    fn svd_examples() {
        let s = svd2(&M::identity());
        assert_eq!(s.sigma, (1.0, 1.0));
        let s = svd2(&M::diag(0.5, 0.3));
        assert!((s.sigma.0 - 0.3).abs() < 1e-15 && (s.sigma.1 - 0.5).abs() < 1e-15);
        let m = M::new(0.0, 2.0, 1.0, 0.0);
        let s = svd2(&m);
        assert!((s.sigma.0 - 1.0).abs() < 1e-14 && (s.sigma.1 - 2.0).abs() < 1e-14);
        assert!(close(&s.reconstruct(), &m, 1e-14));
        let z = svd2(&M::zero());
        assert_eq!(z.v1, M::identity());
        assert_eq!(z.v2, M::identity());
        assert_eq!(z.sigma, (0.0, 0.0));
    }

    #[test]
    fn svd_generic_f32() {
        let m = Matrix2::<f32>::new(0.3, -1.2, 0.7, 0.1);
        let s = svd2(&m);
        assert!((s.reconstruct() - m).max_abs() < 1e-5);
    }

    #[test]
    fn sym_skew_examples() {
        let d = sym_skew(&M::new(0.0, 1.0, 0.0, 0.0));
        assert_eq!(d.e, M::new(0.0, 0.5, 0.5, 0.0));
        assert_eq!(d.w, M::new(0.0, 0.5, -0.5, 0.0));
        let e1 = kh_wells::<f64>()[0];
        let d = sym_skew(&(e1 + M::j().scale(2.5)));
        assert_eq!(d.e, e1);
        assert_eq!(d.w, M::j().scale(2.5));
    }

    #[test]
    fn dist_o2_examples_against_brute_force() {
        let (r, f) = dist_o2(&M::identity());
        let (br, bf) = dist_o2_brute(&M::identity(), 10_000);
        assert!(r.abs() < 1e-15 && (f - 2.0).abs() < 1e-15);
        assert!(br < 1e-3 && (bf - 2.0).abs() < 1e-3);
        let (r, f) = dist_o2(&M::rotation(0.77));
        assert!(r < 1e-14 && (f - 2.0).abs() < 1e-14);
        let (r, f) = dist_o2(&M::diag(1.0, -1.0));
        let (br, bf) = dist_o2_brute(&M::diag(1.0, -1.0), 10_000);
        assert!((r - 2.0).abs() < 1e-14 && f < 1e-14);
        assert!((br - 2.0).abs() < 1e-3 && bf < 1e-3);
    }

    #[test]
    fn dist_o2_random_vs_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m = M::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let (r, f) = dist_o2(&m);
            let (br, bf) = dist_o2_brute(&m, 10_000);
            assert!((r - br).abs() <= 1e-3 * br.max(1e-3), "{m:?} {r} {br}");
            assert!((f - bf).abs() <= 1e-3 * bf.max(1e-3), "{m:?} {f} {bf}");
        }
    }

    #[test]
    fn dist_kh_examples() {
        let w = kh_wells::<f64>();
        let d = dist_kh(&(w[0] + M::j().scale(5.0)));
        let d12 = (w[0] - w[1]).norm();
        assert!(d[0].abs() < 1e-15);
        assert!((d[1] - d12).abs() < 1e-14 && (d[2] - d12).abs() < 1e-14);
        let d = dist_kh(&M::zero());
        for x in d {
            assert!((x - 2f64.sqrt()).abs() < 1e-15);
        }
        let d = dist_kh(&(w[0] + w[1]).scale(0.5));
        assert!((d[0] - d[1]).abs() < 1e-15);
    }

    #[test]
    fn wells_sum_to_zero() {
        let w = kh_wells::<f64>();
        assert!((w[0] + w[1] + w[2]).max_abs() < 1e-15);
        for e in w {
            assert!(e.trace().abs() < 1e-15);
            assert!((e.norm() - 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn decompose_examples() {
        let p = sym_rank_one_decompose(&M::diag(1.0, -1.0)).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.n.x - r).abs() < 1e-15 && (p.n.y - r).abs() < 1e-15);
        assert!((p.a.x - 2f64.sqrt()).abs() < 1e-15 && (p.a.y + 2f64.sqrt()).abs() < 1e-15);
        let w = kh_wells::<f64>();
        let e = w[0] - w[1];
        assert!((e.det() + 3.0).abs() < 1e-14);
        let p = sym_rank_one_decompose(&e).unwrap();
        assert!(close(&p.sym_outer(), &e, 1e-12));
        // |a| = √2·λ̃·|f1 − f2| = 2λ̃ with λ̃ = √3.
        assert!((p.a.norm() / 2.0 - 3f64.sqrt()).abs() < 1e-12);
        let q = sym_rank_one_decompose(&M::diag(3.0, -3.0)).unwrap();
        let base = sym_rank_one_decompose(&M::diag(1.0, -1.0)).unwrap();
        assert!((q.a - base.a.scale(3.0)).norm() < 1e-14);
        assert!((q.n - base.n).norm() < 1e-15);
        assert!(matches!(sym_rank_one_decompose(&M::zero()), Err(Error::DegenerateDirection)));
        assert!(matches!(sym_rank_one_decompose(&M::diag(1.0, 1.0)), Err(Error::NotTraceFree(_))));
    }

    #[test]
    fn pull_up_examples() {
        let e = M::diag(1.0, -1.0);
        assert!(matches!(
            pull_up_skew(&e, &e, &M::zero(), 0.5, 1.0),
            Err(Error::DegenerateDirection)
        ));
        let (m1, m2) = pull_up_skew(&e, &M::zero(), &M::zero(), 0.5, 1.0).unwrap();
        assert!((m1 - m2).det().abs() <= 1e-12);
        let (p1, p2) = pull_up_skew(&e, &M::zero(), &M::zero(), 0.5, -1.0).unwrap();
        let pair = sym_rank_one_decompose(&e).unwrap();
        let diff = (m1 - m2) - (p1 - p2);
        assert!(close(&diff, &pair.outer().skew().scale(2.0), 1e-14));
        assert!((p1 - p2).det().abs() <= 1e-12);
    }

    fn mat() -> impl Strategy<Value = M> {
        prop::array::uniform4(-3.0f64..3.0).prop_map(|a| M::new(a[0], a[1], a[2], a[3]))
    }

    fn trace_free_sym() -> impl Strategy<Value = M> {
        (-2.0f64..2.0, -2.0f64..2.0)
            .prop_filter("nondegenerate", |(p, r)| p * p + r * r > 1e-6)
            .prop_map(|(p, r)| M::new(p, r, r, -p))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn svd_round_trip(m in mat()) {
            let s = svd2(&m);
            prop_assert!((s.reconstruct() - m).norm() <= 1e-9 * (1.0 + m.norm()));
            prop_assert!((s.v1.transpose() * s.v1 - M::identity()).max_abs() <= 1e-9);
            prop_assert!((s.v2.transpose() * s.v2 - M::identity()).max_abs() <= 1e-9);
            prop_assert!(0.0 <= s.sigma.0 && s.sigma.0 <= s.sigma.1);
            let (lo, hi) = sigma_oracle(&m);
            prop_assert!((s.sigma.0 - lo).abs() <= 1e-7 && (s.sigma.1 - hi).abs() <= 1e-9);
            prop_assert!(s.v2.a11 >= 0.0);
            prop_assert!(s.v2.det() > 0.0);
        }

        #[test]
        fn singular_value_stability(a in mat(), e in mat()) {
            let sa = svd2(&a).sigma;
            let sb = svd2(&(a + e)).sigma;
            let bound = svd2(&e).sigma.1 + 1e-9;
            prop_assert!((sa.0 - sb.0).abs() <= bound);
            prop_assert!((sa.1 - sb.1).abs() <= bound);
        }

        #[test]
        fn dist_o2_rotation_invariant(m in mat(), t in -3.0f64..3.0) {
            let (r, f) = dist_o2(&m);
            let (r2, f2) = dist_o2(&(M::rotation(t) * m));
            prop_assert!((r - r2).abs() < 1e-9 && (f - f2).abs() < 1e-9);
        }

        #[test]
        fn dist_kh_skew_invariant(m in mat(), s in -50.0f64..50.0) {
            let d = dist_kh(&m);
            let d2 = dist_kh(&(m + M::j().scale(s)));
            for i in 0..3 {
                prop_assert!((d[i] - d2[i]).abs() <= 1e-12 * (1.0 + s.abs()));
            }
        }

        #[test]
        fn decompose_round_trip(e in trace_free_sym()) {
            let p = sym_rank_one_decompose(&e).unwrap();
            prop_assert!((p.sym_outer() - e).max_abs() <= 1e-9);
            prop_assert!((p.n.norm() - 1.0).abs() <= 1e-12);
            // Re-decomposing the reconstruction returns the same pair up to (a, n) ↦ (−a, −n).
            let q = sym_rank_one_decompose(&p.sym_outer()).unwrap();
            let same = (q.a - p.a).norm() + (q.n - p.n).norm();
            let flipped = (q.a + p.a).norm() + (q.n + p.n).norm();
            prop_assert!(same.min(flipped) <= 1e-8);
        }

        #[test]
        fn pull_up_contract(e1 in trace_free_sym(), w in -3.0f64..3.0, lam in 0.01f64..0.99, plus in any::<bool>()) {
            let e2 = M::zero();
            let wm = M::j().scale(w);
            let sign = if plus { 1.0 } else { -1.0 };
            let (m1, m2) = pull_up_skew(&e1, &e2, &wm, lam, sign).unwrap();
            prop_assert!((m1.sym() - e1).max_abs() <= 1e-12);
            prop_assert!((m2.sym() - e2).max_abs() <= 1e-12);
            let avg = m1.scale(lam) + m2.scale(1.0 - lam);
            prop_assert!((avg - (e1.scale(lam) + wm)).max_abs() <= 1e-12);
            prop_assert!((m1 - m2).det().abs() <= 1e-9);
        }
    }
}
