//! In-approximation families for O(2) and the hexagonal-to-rhombic wells:
//! interval tests, stage classification and the convex splittings.

use serde::{Deserialize, Serialize};

use crate::engine::{skew_sign, Branch, SignPolicy, SkewLedger};
use crate::error::{Error, Result};
use crate::mat2::{kh_wells, pull_up_skew, svd2, sym_rank_one_decompose, RankOnePair};
use crate::scalar::TOL_GEOM;
use crate::{Mat2, Point2};

pub const KAPPA0: f64 = 0.25;

/// Number of splits per stage cycle. `U_k^2 = U_{k+1}^0` for both problems.
pub const CYCLE: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Problem {
    O2,
    KH,
}

impl Problem {
    /// Number of wells `m`.
    pub fn wells(self) -> usize {
        match self {
            Problem::O2 => 2,
            Problem::KH => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    UTilde,
    U,
}

/// Index `(k, j)` of `U_k^j` or `Ũ_k^j`; `anchor` is the 1-based large
/// coordinate `l` of `U_{k,l}^j` (three-well problem only).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Stage {
    pub k: u32,
    pub j: u32,
    pub phase: Phase,
    pub anchor: Option<u8>,
}

impl Stage {
    pub fn utilde(k: u32, j: u32) -> Self {
        Self { k, j, phase: Phase::UTilde, anchor: None }
    }

    pub fn u(k: u32, j: u32) -> Self {
        Self { k, j, phase: Phase::U, anchor: None }
    }

    pub fn with_anchor(mut self, l: u8) -> Self {
        self.anchor = Some(l);
        self
    }

    /// Stage reached after one split, wrapping `(k, 2) → (k+1, 0)` into phase U.
    pub fn next(self) -> Self {
        if self.j + 1 >= CYCLE {
            Stage::u(self.k + 1, 0)
        } else {
            Self { j: self.j + 1, anchor: None, ..self }
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Membership with the bounds relaxed by `TOL_GEOM`.
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo - TOL_GEOM && x <= self.hi + TOL_GEOM
    }

    pub fn contains_interval(&self, o: &Interval) -> bool {
        self.lo <= o.lo && o.hi <= self.hi
    }
}

pub fn c_k(k: u32) -> f64 {
    1.0 - 3.0 * d_k(k)
}

pub fn d_k(k: u32) -> f64 {
    (-(k as f64 + 2.0)).exp2()
}

/// `I_{k,κ} = [c_k − κ d_k, c_k + κ d_k]`.
pub fn interval_i(k: u32, kappa: f64) -> Interval {
    let (c, d) = (c_k(k), d_k(k));
    Interval { lo: c - kappa * d, hi: c + kappa * d }
}

/// `J_{k,κ} = 2^{−(k+2m+2)}·[3 − κ, 3 + κ]`.
pub fn interval_j(k: u32, kappa: f64, m: u32) -> Interval {
    let s = (-(k as f64 + 2.0 * m as f64 + 2.0)).exp2();
    Interval { lo: s * (3.0 - kappa), hi: s * (3.0 + kappa) }
}

fn j_frac(j: u32, n: u32) -> f64 {
    KAPPA0 * j as f64 / n as f64
}

/// Checks whether values `v` satisfy the O(2) stage conditions with `placed` as
/// the bitmask of coordinates already at `c_k`.
fn o2_fits(v: [f64; 2], placed: u8, s: &Stage) -> bool {
    let placed_iv = interval_i(s.k, j_frac(s.j, 2));
    (0..2).all(|i| {
        if placed & (1 << i) != 0 {
            placed_iv.contains(v[i])
        } else {
            match s.phase {
                Phase::U => s.k >= 1 && interval_i(s.k - 1, KAPPA0 * (1.0 + s.j as f64 / 2.0)).contains(v[i]),
                Phase::UTilde => {
                    v[i].abs() <= 1.0 - 2.0 * d_k(s.k) + d_k(s.k) * j_frac(s.j, 2) + TOL_GEOM
                }
            }
        }
    })
}

fn masks_with(count: u32, n: usize) -> impl Iterator<Item = u8> {
    (0u8..(1 << n)).filter(move |m| m.count_ones() == count)
}

/// Bitmask of coordinates that can be taken as placed for `s`, preferring the
/// assignment whose smallest unplaced value is minimal.
fn o2_placement(v: [f64; 2], s: &Stage) -> Option<u8> {
    let unplaced_min = |mask: u8| {
        (0..2).filter(|i| mask & (1 << i) == 0).map(|i| v[i]).fold(f64::INFINITY, f64::min)
    };
    masks_with(s.j, 2)
        .filter(|&mask| o2_fits(v, mask, s))
        .min_by(|a, b| unplaced_min(*a).total_cmp(&unplaced_min(*b)))
}

/// Membership in `U_k^j` / `Ũ_k^j` for O(2), via the ascending singular values.
pub fn member_o2(m: &Mat2, s: &Stage) -> bool {
    if s.j >= CYCLE {
        return member_o2(m, &s.next());
    }
    let sv = svd2(m).sigma;
    o2_placement([sv.0, sv.1], s).is_some()
}

/// Affine coordinates over the three wells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Barycentric {
    pub mu: [f64; 3],
}

/// Coordinates `μ` with `e = Σ μ_i e⁽ⁱ⁾`, `Σ μ_i = 1`.
pub fn barycentric_kh(e: &Mat2) -> Result<Barycentric> {
    if e.trace().abs() > TOL_GEOM {
        return Err(Error::NotTraceFree(e.trace()));
    }
    let w = kh_wells::<f64>();
    let e = e.sym();
    // e − e³ = μ1 (e¹ − e³) + μ2 (e² − e³), in (a11, a12) coordinates.
    let col = |m: Mat2| Point2::new(m.a11 - w[2].a11, m.a12 - w[2].a12);
    let sys = Mat2::new(col(w[0]).x, col(w[1]).x, col(w[0]).y, col(w[1]).y);
    let sol = sys.inverse().expect("wells are affinely independent").mul_vec(col(e));
    Ok(Barycentric { mu: [sol.x, sol.y, 1.0 - sol.x - sol.y] })
}

/// The trace-free symmetric matrix `Σ μ_i e⁽ⁱ⁾`.
pub fn from_barycentric(mu: &[f64; 3]) -> Mat2 {
    let w = kh_wells::<f64>();
    w[0].scale(mu[0]) + w[1].scale(mu[1]) + w[2].scale(mu[2])
}

fn kh_fits(mu: &[f64; 3], anchor: Option<usize>, placed: u8, s: &Stage) -> bool {
    let placed_iv = interval_j(s.k, j_frac(s.j, 2), 3);
    (0..3).filter(|&i| Some(i) != anchor).all(|i| {
        if placed & (1 << i) != 0 {
            placed_iv.contains(mu[i])
        } else {
            match s.phase {
                Phase::U => s.k >= 1 && interval_j(s.k - 1, KAPPA0 * (1.0 + s.j as f64 / 2.0), 3).contains(mu[i]),
                Phase::UTilde => {
                    mu[i] >= (-(s.k as f64 + 6.0)).exp2() * (1.0 + j_frac(s.j, 2)) - TOL_GEOM
                }
            }
        }
    })
}

/// Candidate `(anchor, placed mask)` assignments for `s`, in search order.
fn kh_assignments(mu: &[f64; 3], s: &Stage) -> Vec<(Option<usize>, u8)> {
    let mut out = Vec::new();
    match s.phase {
        Phase::U => {
            let anchors: Vec<usize> = match s.anchor {
                Some(l) => vec![l as usize - 1],
                None => (0..3).collect(),
            };
            for l in anchors {
                for mask in masks_with(s.j, 3).filter(|m| m & (1 << l) == 0) {
                    if kh_fits(mu, Some(l), mask, s) {
                        out.push((Some(l), mask));
                    }
                }
            }
        }
        Phase::UTilde => {
            for mask in masks_with(s.j, 3) {
                if kh_fits(mu, None, mask, s) {
                    out.push((None, mask));
                }
            }
        }
    }
    out
}

/// Membership of `e(M)` in `U_{k,l}^j` or `Û_k^j`; the skew part is free.
pub fn member_kh(m: &Mat2, s: &Stage) -> Result<bool> {
    if s.j >= CYCLE {
        return member_kh(m, &s.next());
    }
    let b = barycentric_kh(m)?;
    Ok(!kh_assignments(&b.mu, s).is_empty())
}

pub fn member(problem: Problem, m: &Mat2, s: &Stage) -> bool {
    match problem {
        Problem::O2 => member_o2(m, s),
        Problem::KH => member_kh(m, s).unwrap_or(false),
    }
}

/// Smallest `m` with `M ∈ Ũ_m^0`.
pub fn classify_m0(m: &Mat2, problem: Problem) -> Result<u32> {
    match problem {
        Problem::O2 => {
            let s2 = svd2(m).sigma.1;
            if !(s2 < 1.0) {
                return Err(Error::NotInInterior(format!("largest singular value {s2} is not below 1")));
            }
            (1..=60)
                .find(|&k| s2 <= 1.0 - 2.0 * d_k(k) + TOL_GEOM)
                .ok_or_else(|| Error::NotInInterior(format!("largest singular value {s2} too close to 1")))
        }
        Problem::KH => {
            let b = barycentric_kh(m)?;
            let min = b.mu.iter().copied().fold(f64::INFINITY, f64::min);
            if !(min > 0.0) {
                return Err(Error::NotInInterior(format!("barycentric coordinate {min} is not positive")));
            }
            (1..=60)
                .find(|&k| min >= (-(k as f64 + 6.0)).exp2() - TOL_GEOM)
                .ok_or_else(|| Error::NotInInterior(format!("barycentric coordinate {min} too close to 0")))
        }
    }
}

/// Which weight convention `lambda` follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convention {
    /// `M = (1−λ)A + λB`.
    O2,
    /// `M = λA + (1−λ)B`.
    KH,
}

/// A rank-one splitting of a matrix into two next-stage matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub a: Mat2,
    pub b: Mat2,
    pub lambda: f64,
    pub convention: Convention,
    /// `a − b = dir.a ⊗ dir.n`.
    pub dir: RankOnePair<f64>,
    /// Stage reached by `a` and by `b`.
    pub target: [Stage; 2],
    /// Ordered well pair `(p1, p2)` of a three-well split, index into the ledger.
    pub pair: Option<usize>,
    /// Ledgers inherited by the `a` side and the `b` side.
    pub ledgers: Option<[SkewLedger; 2]>,
}

impl SplitResult {
    /// Volume weights of `a` and `b`.
    pub fn weights(&self) -> (f64, f64) {
        match self.convention {
            Convention::O2 => (1.0 - self.lambda, self.lambda),
            Convention::KH => (self.lambda, 1.0 - self.lambda),
        }
    }

    /// Index (0 = `a`, 1 = `b`) of the side carrying most of the volume.
    pub fn persistent(&self) -> usize {
        let (wa, wb) = self.weights();
        match self.convention {
            Convention::O2 => usize::from(wb > wa),
            Convention::KH => usize::from(wb >= wa),
        }
    }

    pub fn side(&self, i: usize) -> Mat2 {
        if i == 0 {
            self.a
        } else {
            self.b
        }
    }

    /// Convex combination of the two sides with their weights.
    pub fn recombine(&self) -> Mat2 {
        let (wa, wb) = self.weights();
        self.a.scale(wa) + self.b.scale(wb)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::DegenerateSplit(lambda))
    }
}

/// Splits `M ∈ U_k^j` (or `Ũ_k^j`) by moving its smallest unplaced singular
/// value to `±c_k`: `M = (1−λ)A + λB`, `λ = (c_k − σ)/(2c_k)`.
pub fn split_o2(m: &Mat2, s: &Stage) -> Result<SplitResult> {
    if s.j >= CYCLE {
        return Err(Error::StageExhausted(s.j as usize));
    }
    let svd = svd2(m);
    let v = [svd.sigma.0, svd.sigma.1];
    let c = c_k(s.k);
    let placed = o2_placement(v, s).unwrap_or_else(|| {
        // Outside the stage set: treat the values nearest c_k as placed.
        let mut idx = [0usize, 1];
        idx.sort_by(|&a, &b| (v[a] - c).abs().total_cmp(&(v[b] - c).abs()));
        idx.iter().take(s.j as usize).fold(0u8, |acc, &i| acc | (1 << i))
    });
    let i = (0..2)
        .filter(|i| placed & (1 << i) == 0)
        .min_by(|&a, &b| v[a].total_cmp(&v[b]))
        .expect("j < 2 leaves an unplaced value");
    let lambda = (c - v[i]) / (2.0 * c);
    check_lambda(lambda)?;
    let mut da = v;
    da[i] = c;
    let mut db = v;
    db[i] = -c;
    let a = svd.v1 * Mat2::diag(da[0], da[1]) * svd.v2;
    let b = svd.v1 * Mat2::diag(db[0], db[1]) * svd.v2;
    let dir = RankOnePair { a: svd.v1.col(i).scale(2.0 * c), n: svd.v2.row(i) };
    let t = s.next();
    Ok(SplitResult { a, b, lambda, convention: Convention::O2, dir, target: [t, t], pair: None, ledgers: None })
}

/// Index of the ordered pair `(p1, p2)`, `p1 ≠ p2`, among the six pairs.
pub fn pair_index(p1: usize, p2: usize) -> usize {
    debug_assert!(p1 != p2 && p1 < 3 && p2 < 3);
    2 * p1 + p2 - usize::from(p2 > p1)
}

/// Skew coefficient `w_p` with `ω(a_p ⊗ n_p) = w_p·J` for `e⁽ᵖ¹⁾ − e⁽ᵖ²⁾ = a_p ⊙ n_p`.
pub fn pair_skew(p: usize) -> f64 {
    let (p1, r) = (p / 2, p % 2);
    let p2 = if r == 0 { (0..3).find(|&q| q != p1).unwrap() } else { (0..3).rev().find(|&q| q != p1).unwrap() };
    let w = kh_wells::<f64>();
    sym_rank_one_decompose(&(w[p1] - w[p2])).expect("distinct wells").skew_coeff()
}

fn argmax(mu: &[f64; 3]) -> usize {
    (0..3).fold(0, |b, i| if mu[i] > mu[b] { i } else { b })
}

/// Splits `e(M) = λẽ + (1−λ)ê` by exchanging two barycentric coordinates and
/// lifts the pair to rank-one connected `M1, M2` with the skew sign chosen
/// from `ledger` under `policy`.
pub fn split_kh(m: &Mat2, s: &Stage, ledger: &SkewLedger, policy: SignPolicy) -> Result<SplitResult> {
    if s.j >= CYCLE {
        return Err(Error::StageExhausted(s.j as usize));
    }
    let mu = barycentric_kh(m)?.mu;
    let sc = 3.0 * (-(s.k as f64 + 8.0)).exp2();
    let center = interval_j(s.k, 0.0, 3).lo;
    let (anchor, placed) = kh_assignments(&mu, s).into_iter().next().unwrap_or_else(|| {
        let anchor = match s.phase {
            Phase::U => Some(s.anchor.map_or_else(|| argmax(&mu), |l| l as usize - 1)),
            Phase::UTilde => None,
        };
        let mut idx: Vec<usize> = (0..3).filter(|&i| Some(i) != anchor).collect();
        idx.sort_by(|&a, &b| (mu[a] - center).abs().total_cmp(&(mu[b] - center).abs()));
        (anchor, idx.iter().take(s.j as usize).fold(0u8, |acc, &i| acc | (1 << i)))
    });
    let mut free: Vec<usize> = (0..3).filter(|&i| placed & (1 << i) == 0 && Some(i) != anchor).collect();
    free.sort_by(|&a, &b| mu[a].total_cmp(&mu[b]));
    let (p1, p2) = match anchor {
        Some(l) => (l, free[0]),
        None => {
            let (x, y) = (free[0], free[1]);
            // p1 carries the larger value so that λ ≤ ½; ties go to the lower index.
            if mu[y] > mu[x] || (mu[y] == mu[x] && y < x) {
                (y, x)
            } else {
                (x, y)
            }
        }
    };
    let total = mu[p1] + mu[p2];
    let lambda = (mu[p2] - sc) / (total - 2.0 * sc);
    check_lambda(lambda)?;
    let mut et = mu;
    et[p1] = sc;
    et[p2] = total - sc;
    let mut eh = mu;
    eh[p1] = total - sc;
    eh[p2] = sc;
    let (e_t, e_h) = (from_barycentric(&et), from_barycentric(&eh));

    let pair = pair_index(p1, p2);
    let w_p = pair_skew(pair);
    let d = sym_rank_one_decompose(&(e_t - e_h))?;
    let r = d.skew_coeff() / w_p;
    // The thin side receives the large skew jump and is steered by the ledger;
    // the thick side's jump is proportional to the thin weight.
    let thin_is_a = lambda <= 0.5;
    let (thin_w, thick_w) = if thin_is_a { (lambda, 1.0 - lambda) } else { (1.0 - lambda, lambda) };
    let orient = if thin_is_a { 1.0 } else { -1.0 };
    let jump = thick_w * r.abs();
    let (sign, thin_ledger) = match policy {
        SignPolicy::Ledger => {
            let (sp, l) = skew_sign(ledger, pair, jump, Branch::Bad);
            (orient * sp * r.signum(), l)
        }
        SignPolicy::AlwaysPlus => {
            let mut l = *ledger;
            l.mu[pair] += orient * r.signum() * jump;
            (1.0, l)
        }
    };
    let mut thick_ledger = *ledger;
    thick_ledger.accum_good += thin_w * r.abs() * w_p.abs();

    let (m1, m2) = pull_up_skew(&e_t, &e_h, &m.skew(), lambda, sign)?;
    let dir = if sign > 0.0 {
        d
    } else {
        let an = d.a.norm();
        RankOnePair { a: d.n.scale(an), n: d.a.scale(1.0 / an) }
    };
    let target_for = |e: &[f64; 3], anchor_after: usize| -> Stage {
        let t = s.next();
        match (t.phase, t.j) {
            (Phase::U, 0) => t.with_anchor(argmax(e) as u8 + 1),
            (Phase::U, _) => t.with_anchor(anchor_after as u8 + 1),
            _ => t,
        }
    };
    let target = [target_for(&et, p2), target_for(&eh, p1)];
    let ledgers = if thin_is_a { [thin_ledger, thick_ledger] } else { [thick_ledger, thin_ledger] };
    Ok(SplitResult {
        a: m1,
        b: m2,
        lambda,
        convention: Convention::KH,
        dir,
        target,
        pair: Some(pair),
        ledgers: Some(ledgers),
    })
}

/// Dispatches to the problem's splitting.
pub fn split(problem: Problem, m: &Mat2, s: &Stage, ledger: &SkewLedger, policy: SignPolicy) -> Result<SplitResult> {
    match problem {
        Problem::O2 => split_o2(m, s),
        Problem::KH => split_kh(m, s, ledger, policy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn interval_examples() {
        let i = interval_i(1, 1.0);
        assert_eq!((i.lo, i.hi), (0.5, 0.75));
        let i = interval_i(2, 0.25);
        assert_eq!((i.lo, i.hi), (51.0 / 64.0, 53.0 / 64.0));
        let i = interval_i(50, 1.0);
        assert!(close(i.lo, 1.0, 1e-14) && close(i.hi, 1.0, 1e-14));
        let j = interval_j(0, 0.25, 3);
        assert_eq!((j.lo, j.hi), (2.75 / 256.0, 3.25 / 256.0));
        let j1 = interval_j(1, 0.25, 3);
        assert_eq!((j1.lo, j1.hi), (j.lo / 2.0, j.hi / 2.0));
        assert!(interval_j(3, 1.0, 3).contains_interval(&interval_j(3, 0.25, 3)));
        for k in 0..20 {
            let i = interval_i(k, 1.0);
            assert!(i.lo > -1.0 && i.hi < 1.0 && i.lo <= i.hi);
            let j = interval_j(k, 1.0, 3);
            assert!(j.lo > 0.0 && j.hi < 1.0);
        }
    }

    #[test]
    fn member_o2_examples() {
        assert!(member_o2(&Mat2::diag(0.625, 0.625), &Stage::u(2, 0)));
        assert!(!member_o2(&Mat2::diag(0.9, 0.2), &Stage::utilde(2, 0)));
        assert!(member_o2(&Mat2::diag(0.9, 0.2), &Stage::utilde(3, 0)));
        let r = Mat2::rotation(1.1);
        assert!(member_o2(&(r * Mat2::diag(0.625, 0.625)), &Stage::u(2, 0)));
        assert!(!member_o2(&(r * Mat2::diag(0.9, 0.2)), &Stage::utilde(2, 0)));
    }

    // Affine coordinates via inner products with the unit wells in (a11, a12).
    fn bary_oracle(e: &Mat2) -> [f64; 3] {
        let h = 3f64.sqrt() / 2.0;
        let w = [(1.0, 0.0), (-0.5, h), (-0.5, -h)];
        w.map(|(p, r)| 1.0 / 3.0 + 2.0 / 3.0 * (e.a11 * p + e.a12 * r))
    }

    #[test]
    fn barycentric_examples() {
        let w = kh_wells::<f64>();
        let b = barycentric_kh(&w[0]).unwrap().mu;
        assert!(close(b[0], 1.0, 1e-15) && close(b[1], 0.0, 1e-15) && close(b[2], 0.0, 1e-15));
        let b = barycentric_kh(&Mat2::zero()).unwrap().mu;
        for x in b {
            assert!(close(x, 1.0 / 3.0, 1e-15));
        }
        let b = barycentric_kh(&(w[0] + w[1]).scale(0.5)).unwrap().mu;
        assert!(close(b[0], 0.5, 1e-15) && close(b[1], 0.5, 1e-15) && close(b[2], 0.0, 1e-15));
        assert!(matches!(barycentric_kh(&Mat2::identity()), Err(Error::NotTraceFree(_))));
    }

    #[test]
    fn member_kh_examples() {
        let mu = [250.0 / 256.0, 3.0 / 256.0, 3.0 / 256.0];
        let m = from_barycentric(&mu);
        assert!(member_kh(&m, &Stage::u(1, 0).with_anchor(1)).unwrap());
        assert!(!member_kh(&m, &Stage::u(1, 0).with_anchor(2)).unwrap());
        assert!(member_kh(&(m + Mat2::j().scale(7.0)), &Stage::u(1, 0).with_anchor(1)).unwrap());
        assert!(member_kh(&Mat2::zero(), &Stage::utilde(1, 0)).unwrap());
        assert!(matches!(member_kh(&Mat2::identity(), &Stage::u(1, 0)), Err(Error::NotTraceFree(_))));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_m0(&Mat2::zero(), Problem::O2).unwrap(), 1);
        assert_eq!(classify_m0(&Mat2::diag(0.9, 0.2), Problem::O2).unwrap(), 3);
        assert_eq!(classify_m0(&Mat2::zero(), Problem::KH).unwrap(), 1);
        assert!(matches!(classify_m0(&Mat2::diag(1.0, 0.5), Problem::O2), Err(Error::NotInInterior(_))));
        let w = kh_wells::<f64>();
        assert!(matches!(classify_m0(&w[0], Problem::KH), Err(Error::NotInInterior(_))));
    }

    #[test]
    fn split_o2_example() {
        let m = Mat2::diag(0.625, 0.625);
        let s = split_o2(&m, &Stage::u(2, 0)).unwrap();
        assert!(close(s.lambda, 3.0 / 26.0, 1e-15));
        assert!((s.a - Mat2::diag(13.0 / 16.0, 0.625)).max_abs() < 1e-15);
        assert!((s.b - Mat2::diag(-13.0 / 16.0, 0.625)).max_abs() < 1e-15);
        assert!(close((1.0 - 2.0 * s.lambda) * 13.0 / 16.0, 0.625, 1e-15));
        assert!((s.recombine() - m).max_abs() < 1e-15);
        assert!((s.a - s.b - s.dir.outer()).max_abs() < 1e-15);
        assert_eq!(s.target, [Stage::u(2, 1); 2]);
        assert_eq!(s.persistent(), 0);

        let r = Mat2::rotation(std::f64::consts::FRAC_PI_4);
        let sr = split_o2(&(r * m), &Stage::u(2, 0)).unwrap();
        assert!(close(sr.lambda, s.lambda, 1e-15));
        assert!((sr.a - sr.b).det().abs() < 1e-14);
        assert!((sr.recombine() - r * m).max_abs() < 1e-14);
        assert!(member_o2(&sr.a, &Stage::u(2, 1)) && member_o2(&sr.b, &Stage::u(2, 1)));

        let z = split_o2(&Mat2::diag(0.0, 0.5), &Stage::utilde(1, 0)).unwrap();
        assert!(close(z.lambda, 0.5, 1e-15));
        assert!(matches!(split_o2(&m, &Stage::u(2, 2)), Err(Error::StageExhausted(2))));
    }

    #[test]
    fn split_kh_example() {
        let mu = [250.0 / 256.0, 3.0 / 256.0, 3.0 / 256.0];
        let m = from_barycentric(&mu);
        let s = split_kh(&m, &Stage::u(1, 0).with_anchor(1), &SkewLedger::default(), SignPolicy::Ledger).unwrap();
        assert!(close(s.lambda, 3.0 / 500.0, 1e-15));
        let et = barycentric_kh(&s.a.sym()).unwrap().mu;
        let eh = barycentric_kh(&s.b.sym()).unwrap().mu;
        let want_t = [3.0 / 512.0, 503.0 / 512.0, 6.0 / 512.0];
        let want_h = [503.0 / 512.0, 3.0 / 512.0, 6.0 / 512.0];
        for i in 0..3 {
            assert!(close(et[i], want_t[i], 1e-14) && close(eh[i], want_h[i], 1e-14));
            assert!(close(s.lambda * want_t[i] + (1.0 - s.lambda) * want_h[i], mu[i], 1e-15));
        }
        assert!((s.recombine() - m).max_abs() < 1e-14);
        assert!((s.a - s.b).det().abs() < 1e-12);
        assert!((s.a - s.b - s.dir.outer()).max_abs() < 1e-13);
        assert_eq!(s.target[0], Stage::u(1, 1).with_anchor(2));
        assert_eq!(s.target[1], Stage::u(1, 1).with_anchor(1));
        assert!(member_kh(&s.a, &s.target[0]).unwrap() && member_kh(&s.b, &s.target[1]).unwrap());
        assert_eq!(s.persistent(), 1);

        // Swapping the two small coordinates permutes the roles.
        let mu2 = [250.0 / 256.0, 3.0 / 256.0, 3.0 / 256.0 + 1e-6];
        let mu3 = [250.0 / 256.0, 3.0 / 256.0 + 1e-6, 3.0 / 256.0];
        let s2 = split_kh(&from_barycentric(&mu2), &Stage::u(1, 0), &SkewLedger::default(), SignPolicy::Ledger).unwrap();
        let s3 = split_kh(&from_barycentric(&mu3), &Stage::u(1, 0), &SkewLedger::default(), SignPolicy::Ledger).unwrap();
        let a2 = barycentric_kh(&s2.a.sym()).unwrap().mu;
        let a3 = barycentric_kh(&s3.a.sym()).unwrap().mu;
        assert!(close(a2[1], a3[2], 1e-14) && close(a2[2], a3[1], 1e-14) && close(a2[0], a3[0], 1e-14));

        for policy in [SignPolicy::Ledger, SignPolicy::AlwaysPlus] {
            let mut l = SkewLedger::default();
            l.mu[pair_index(0, 1)] = 0.99;
            let s = split_kh(&m, &Stage::u(1, 0).with_anchor(1), &l, policy).unwrap();
            assert!((s.a - s.b).det().abs() <= 1e-12);
        }
    }

    #[test]
    fn pair_skews_are_equal_magnitude() {
        let base = pair_skew(0).abs();
        assert!(base > 0.0);
        for p in 0..6 {
            assert!(close(pair_skew(p).abs(), base, 1e-12));
        }
    }

    #[test]
    fn skew_sign_examples() {
        let (s, l) = skew_sign(&SkewLedger::default(), 3, 0.3, Branch::Bad);
        assert_eq!(s, 1.0);
        assert!(close(l.mu[3], 0.3, 1e-15));
        let mut l = SkewLedger::default();
        l.mu[2] = 0.9;
        let (s, l) = skew_sign(&l, 2, 0.3, Branch::Bad);
        assert_eq!(s, -1.0);
        assert!(close(l.mu[2], 0.6, 1e-15));
    }

    fn rot() -> impl Strategy<Value = Mat2> {
        (-3.2f64..3.2).prop_map(Mat2::rotation)
    }

    /// Random member of U_k^j (O(2)) with rotations on both sides.
    fn o2_member() -> impl Strategy<Value = (Mat2, Stage)> {
        (1u32..8, 0u32..2, prop::array::uniform3(0.0f64..1.0), any::<bool>(), rot(), rot(), any::<bool>()).prop_map(
            |(k, j, t, tilde, r1, r2, refl)| {
                let iv = interval_i(k, j_frac(j, 2));
                let placed = iv.lo + (iv.hi - iv.lo) * t[0];
                // Unplaced values stay below c_k in Ũ so that the split is nondegenerate.
                let rest = |x: f64| {
                    if tilde {
                        c_k(k) * 0.999 * x
                    } else {
                        let ir = interval_i(k - 1, KAPPA0 * (1.0 + j as f64 / 2.0));
                        ir.lo + (ir.hi - ir.lo) * x
                    }
                };
                let d = if j == 0 { Mat2::diag(rest(t[1]), rest(t[2])) } else { Mat2::diag(placed, rest(t[1])) };
                let f = if refl { Mat2::diag(1.0, -1.0) } else { Mat2::identity() };
                let stage = if tilde { Stage::utilde(k, j) } else { Stage::u(k, j) };
                (r1 * d * f * r2, stage)
            },
        )
    }

    /// Random member of U_{k,l}^j or Û_k^j for the three wells.
    fn kh_member() -> impl Strategy<Value = (Mat2, Stage)> {
        (1u32..8, 0u32..2, 0usize..3, 0.0f64..1.0, 0.0f64..1.0, any::<bool>(), -5.0f64..5.0).prop_map(
            |(k, j, l, t0, t1, tilde, w)| {
                let mut mu = [0.0; 3];
                let others: Vec<usize> = (0..3).filter(|&i| i != l).collect();
                if tilde {
                    let thr = (-(k as f64 + 6.0)).exp2() * (1.0 + j_frac(j, 2));
                    let iv = interval_j(k, j_frac(j, 2), 3);
                    if j == 1 {
                        mu[others[0]] = iv.lo + (iv.hi - iv.lo) * t0;
                        mu[others[1]] = thr + (0.5 - thr) * t1;
                    } else {
                        mu[others[0]] = thr + (0.3 - thr) * t0;
                        mu[others[1]] = thr + (0.3 - thr) * t1;
                    }
                } else {
                    let iv = interval_j(k, j_frac(j, 2), 3);
                    let ir = interval_j(k - 1, KAPPA0 * (1.0 + j as f64 / 2.0), 3);
                    mu[others[0]] = if j == 1 { iv.lo + (iv.hi - iv.lo) * t0 } else { ir.lo + (ir.hi - ir.lo) * t0 };
                    mu[others[1]] = ir.lo + (ir.hi - ir.lo) * t1;
                }
                mu[l] = 1.0 - mu[others[0]] - mu[others[1]];
                let stage = if tilde { Stage::utilde(k, j) } else { Stage::u(k, j).with_anchor(l as u8 + 1) };
                (from_barycentric(&mu) + Mat2::j().scale(w), stage)
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn o2_chain((m, s) in o2_member()) {
            prop_assert!(member_o2(&m, &s));
            let sp = split_o2(&m, &s).unwrap();
            prop_assert!((sp.recombine() - m).max_abs() <= 1e-9);
            prop_assert!((sp.a - sp.b).det().abs() <= 1e-9);
            prop_assert!((sp.a - sp.b - sp.dir.outer()).max_abs() <= 1e-9);
            prop_assert!(member_o2(&sp.a, &sp.target[0]), "{:?} {:?}", sp.a, sp.target[0]);
            prop_assert!(member_o2(&sp.b, &sp.target[1]));
            if s.phase == Phase::U {
                prop_assert!(sp.lambda <= 3.0 * (-(s.k as f64 + 1.0)).exp2() / (2.0 * c_k(s.k)) + 1e-12);
            }
        }

        #[test]
        fn kh_chain((m, s) in kh_member(), plus in any::<bool>()) {
            prop_assert!(member_kh(&m, &s).unwrap());
            let policy = if plus { SignPolicy::AlwaysPlus } else { SignPolicy::Ledger };
            let sp = split_kh(&m, &s, &SkewLedger::default(), policy).unwrap();
            prop_assert!((sp.recombine() - m).max_abs() <= 1e-9);
            prop_assert!((sp.a - sp.b).det().abs() <= 1e-12);
            prop_assert!(member_kh(&sp.a, &sp.target[0]).unwrap(), "{:?}", sp.target[0]);
            prop_assert!(member_kh(&sp.b, &sp.target[1]).unwrap(), "{:?}", sp.target[1]);
            if s.phase == Phase::U {
                prop_assert!(sp.lambda <= (6.0 - s.k as f64).exp2());
            } else {
                prop_assert!(sp.lambda <= 0.5 + 1e-12);
            }
            for l in sp.ledgers.unwrap() {
                prop_assert!(l.max_abs() <= 1.0);
            }
        }

        #[test]
        fn o2_rotation_equivariance((m, s) in o2_member(), t in -3.0f64..3.0) {
            let r = Mat2::rotation(t);
            let a = split_o2(&m, &s).unwrap();
            let b = split_o2(&(r * m), &s).unwrap();
            prop_assert!(member_o2(&(r * m), &s));
            prop_assert!((a.lambda - b.lambda).abs() <= 1e-9);
            prop_assert!(((r * a.a) - b.a).max_abs() <= 1e-8 || ((r * a.a) - b.b).max_abs() <= 1e-8);
        }

        #[test]
        fn kh_skew_equivariance((m, s) in kh_member(), w in -10.0f64..10.0) {
            let sh = Mat2::j().scale(w);
            let a = split_kh(&m, &s, &SkewLedger::default(), SignPolicy::Ledger).unwrap();
            let b = split_kh(&(m + sh), &s, &SkewLedger::default(), SignPolicy::Ledger).unwrap();
            prop_assert!((a.a + sh - b.a).max_abs() <= 1e-9);
            prop_assert!((a.b + sh - b.b).max_abs() <= 1e-9);
        }

        #[test]
        fn barycentric_matches_oracle(p in -3.0f64..3.0, r in -3.0f64..3.0, w in -3.0f64..3.0) {
            let m = Mat2::new(p, r + w, r - w, -p);
            let b = barycentric_kh(&m).unwrap().mu;
            let o = bary_oracle(&m.sym());
            for i in 0..3 {
                prop_assert!((b[i] - o[i]).abs() <= 1e-12);
            }
            prop_assert!((from_barycentric(&b) - m.sym()).max_abs() <= 1e-12);
        }

        #[test]
        fn ledger_stays_bounded(seq in prop::collection::vec((0usize..6, 0.0001f64..0.9999), 1..200)) {
            let mut l = SkewLedger::default();
            for (p, lam) in seq {
                let (_, n) = skew_sign(&l, p, lam, Branch::Bad);
                l = n;
                prop_assert!(l.max_abs() <= 1.0);
            }
        }
    }
}
