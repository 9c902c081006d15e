//! Measurements on sealed meshes: phase indicators, L¹ and BV increments,
//! perimeter sums, `E_k`, distances to the wells, θ₀ and a Monte-Carlo
//! Gagliardo seminorm.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::{RunConfig, StepStats};
use crate::error::{Error, Result};
use crate::geom2::{adjacency, Adjacency, Locator, Mesh};
use crate::inapprox::Problem;
use crate::mat2::{dist_kh, dist_o2};
use crate::{Mat2, Point2};

/// Per-cell distances to the wells, in well order.
pub fn well_distances(g: &Mat2, problem: Problem) -> [f64; 3] {
    match problem {
        Problem::O2 => {
            let (r, f) = dist_o2(g);
            [r, f, f64::INFINITY]
        }
        Problem::KH => dist_kh(g),
    }
}

/// Strictly nearest well (1-based); ties go to the last well.
pub fn nearest_well(g: &Mat2, problem: Problem) -> u8 {
    let m = problem.wells();
    let d = well_distances(g, problem);
    for i in 0..m - 1 {
        if (0..m).all(|j| j == i || d[i] < d[j]) {
            return i as u8 + 1;
        }
    }
    m as u8
}

pub fn dist_to_k(g: &Mat2, problem: Problem) -> f64 {
    well_distances(g, problem).into_iter().fold(f64::INFINITY, f64::min)
}

/// Phase field: the nearest well of every cell.
pub fn chi(mesh: &Mesh, problem: Problem) -> Vec<u8> {
    mesh.cells.par_iter().map(|c| nearest_well(&c.map.grad, problem)).collect()
}

/// `‖χ^{(i)}_{k+1} − χ^{(i)}_k‖_{L¹}` per well, comparing each fine cell with its parent.
pub fn l1_diff(fine: &Mesh, fine_chi: &[u8], coarse: &Mesh, coarse_chi: &[u8]) -> Result<[f64; 3]> {
    if coarse_chi.len() != coarse.cells.len() {
        return Err(Error::NotARefinement("coarse field does not match its mesh".into()));
    }
    let mut out = [0.0; 3];
    for (c, &w) in fine.cells.iter().zip(fine_chi) {
        let p = coarse_chi
            .get(c.parent as usize)
            .copied()
            .ok_or_else(|| Error::NotARefinement(format!("cell parent index {} out of range", c.parent)))?;
        if p != w {
            let a = c.area();
            out[(w - 1) as usize] += a;
            out[(p - 1) as usize] += a;
        }
    }
    Ok(out)
}

/// Total variation of a piecewise-constant field: Σ length·|jump| over shared segments.
pub fn bv_norm(adj: &Adjacency, values: &[f64]) -> f64 {
    adj.segments
        .iter()
        .filter(|s| s.cells.len() == 2)
        .map(|s| adj.length(s) * (values[s.cells[0] as usize] - values[s.cells[1] as usize]).abs())
        .sum()
}

/// `Σ c2^{q/m}·area`.
pub fn expected_value(mesh: &Mesh, c2: f64, m: usize) -> f64 {
    mesh.cells.iter().map(|c| c2.powf(c.state.q as f64 / m as f64) * c.area()).sum()
}

/// One-step contraction factor `v1·c2^{1/m} + (1 − v1)`.
pub fn c_hat(v1: f64, c2: f64, m: usize) -> f64 {
    v1 * c2.powf(1.0 / m as f64) + (1.0 - v1)
}

/// Solves `ĉ^{1−θ}·3^θ·maxC^θ = 1`.
pub fn theta0(c_hat: f64, max_c: f64) -> Result<f64> {
    if !(c_hat > 0.0 && c_hat < 1.0) {
        return Err(Error::BadParameter(format!("c_hat = {c_hat} not in (0,1)")));
    }
    if !(max_c >= 1.0) {
        return Err(Error::BadParameter(format!("maxC = {max_c} below 1")));
    }
    let a = (1.0 / c_hat).ln();
    Ok(a / (a + 3f64.ln() + max_c.ln()))
}

/// `L∞^{1−s/θ0}·(L¹^{1−θ0}·BV^{θ0})^{s/θ0}`, valid for `s·p < θ0`.
pub fn interpolation_bound(linf: f64, l1: f64, bv: f64, theta0: f64, s: f64, p: f64) -> Result<f64> {
    if s * p >= theta0 {
        return Err(Error::ExponentOutOfRange { sp: s * p, theta0 });
    }
    let r = s / theta0;
    Ok(linf.powf(1.0 - r) * (l1.powf(1.0 - theta0) * bv.powf(theta0)).powf(r))
}

/// Area-weighted median.
pub fn weighted_median(mut v: Vec<(f64, f64)>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = v.iter().map(|x| x.1).sum();
    let mut acc = 0.0;
    for (x, w) in &v {
        acc += w;
        if acc >= total / 2.0 {
            return *x;
        }
    }
    v[v.len() - 1].0
}

/// One metrics row plus diagnostics that stay out of the CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub k: u32,
    pub cell_count: usize,
    pub l1: [f64; 3],
    pub bv: [f64; 3],
    pub perim_sum: f64,
    pub ek: f64,
    pub sup_dist_k: f64,
    pub median_dist_k: f64,
    pub skew_radius: f64,
    pub good_frac_min: f64,
    pub warn_stage: usize,
    pub warn_budget: usize,
    pub total_area: f64,
    pub perim_ratio_max: f64,
    pub good_perim_ratio_max: f64,
    pub ledger_max_abs: f64,
    pub max_grad_norm: f64,
    /// Entry `ℓ`: sup of the distance to the wells over cells with `q ≥ m·ℓ`.
    pub sup_dist_by_level: Vec<f64>,
    pub trivial: usize,
}

pub const CSV_HEADER: &str =
    "k,cellCount,l1_1,l1_2,l1_3,bv_1,bv_2,bv_3,perimSum,Ek,supDistK,medianDistK,skewRadius,goodFracMin,warnStage,warnBudget";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{}", self.k, self.cell_count);
        for x in self.l1.iter().chain(&self.bv) {
            let _ = write!(s, ",{x}");
        }
        let _ = write!(
            s,
            ",{},{},{},{},{},{},{},{}",
            self.perim_sum,
            self.ek,
            self.sup_dist_k,
            self.median_dist_k,
            self.skew_radius,
            self.good_frac_min,
            self.warn_stage,
            self.warn_budget
        );
        s
    }
}

pub fn metrics_csv(rows: &[StepMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Metrics of a sealed generation; increments are taken against `mesh.parent`.
pub fn measure(mesh: &Mesh, cfg: &RunConfig, stats: Option<&StepStats>) -> StepMetrics {
    let problem = cfg.problem;
    let m = problem.wells();
    let chi_k = chi(mesh, problem);
    let mut row = StepMetrics { k: mesh.generation, cell_count: mesh.cells.len(), ..Default::default() };
    if let Some(parent) = mesh.parent.as_deref() {
        let chi_p = chi(parent, problem);
        row.l1 = l1_diff(mesh, &chi_k, parent, &chi_p).unwrap_or([f64::NAN; 3]);
        let adj = adjacency(&mesh.triangles());
        for i in 0..m {
            let w = i as u8 + 1;
            let field: Vec<f64> = mesh
                .cells
                .iter()
                .zip(&chi_k)
                .map(|(c, &x)| f64::from(u8::from(x == w)) - f64::from(u8::from(chi_p[c.parent as usize] == w)))
                .collect();
            row.bv[i] = bv_norm(&adj, &field);
        }
    }
    row.perim_sum = mesh.cells.iter().map(|c| c.perimeter()).sum();
    row.total_area = mesh.total_area();
    row.ek = expected_value(mesh, cfg.c2, m);
    let dists: Vec<(f64, f64)> = mesh.cells.par_iter().map(|c| (dist_to_k(&c.map.grad, problem), c.area())).collect();
    row.sup_dist_k = dists.iter().map(|d| d.0).fold(0.0, f64::max);
    let w0 = cfg.m0.skew_coeff();
    row.skew_radius =
        mesh.cells.iter().map(|c| 2f64.sqrt() * (c.map.grad.skew_coeff() - w0).abs()).fold(0.0, f64::max);
    row.max_grad_norm = mesh.cells.iter().map(|c| c.map.grad.norm()).fold(0.0, f64::max);
    row.ledger_max_abs = mesh.cells.iter().filter_map(|c| c.ledger.as_deref()).map(|l| l.max_abs()).fold(0.0, f64::max);
    let max_level = mesh.cells.iter().map(|c| c.state.q as usize / m).max().unwrap_or(0);
    row.sup_dist_by_level = vec![0.0; max_level + 1];
    for (c, d) in mesh.cells.iter().zip(&dists) {
        for lvl in 0..=(c.state.q as usize / m) {
            row.sup_dist_by_level[lvl] = row.sup_dist_by_level[lvl].max(d.0);
        }
    }
    row.median_dist_k = weighted_median(dists);
    match stats {
        Some(s) => {
            row.good_frac_min = if s.covered > 0 { s.good_frac_min } else { 0.0 };
            row.warn_stage = s.warn_stage;
            row.perim_ratio_max = s.perim_ratio_max;
            row.good_perim_ratio_max = s.good_perim_ratio_max;
            row.trivial = s.trivial;
        }
        None => row.good_frac_min = 1.0,
    }
    row
}

/// Constants measured over a run history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConstants {
    pub v1_min: f64,
    pub c_hat: f64,
    /// Largest per-piece-type perimeter ratio, at least 1.
    pub max_c: f64,
    /// Smallest `C0 ≥ 1` with `perimSum(k) ≤ C0^{m+1}(3·maxC)^k·Per(Ω)` for `k ≤ 2`.
    pub c0: f64,
    pub theta0: f64,
}

pub fn run_constants(history: &[StepMetrics], problem: Problem, c2: f64, domain_perimeter: f64) -> RunConstants {
    let m = problem.wells();
    let steps = history.iter().filter(|h| h.k > 0);
    let v1_min = steps.clone().map(|h| h.good_frac_min).fold(1.0f64, f64::min);
    let max_c = steps.map(|h| h.perim_ratio_max).fold(1.0f64, f64::max);
    let c_hat = c_hat(v1_min, c2, m);
    let growth = 3.0 * max_c;
    let c0 = history
        .iter()
        .filter(|h| h.k <= 2)
        .map(|h| (h.perim_sum / (growth.powi(h.k as i32) * domain_perimeter)).powf(1.0 / (m as f64 + 1.0)))
        .fold(1.0f64, f64::max);
    let theta0 = theta0(c_hat, max_c).unwrap_or(0.0);
    RunConstants { v1_min, c_hat, max_c, c0, theta0 }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn integrate(gl: &[(f64, f64)], a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (h, c) = ((b - a) / 2.0, (b + a) / 2.0);
    gl.iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

/// Deterministic value of the Gagliardo integral of the indicator of
/// `[0,½]×[0,1]` in the unit square, by singularity-split quadrature.
pub fn gagliardo_half_square(s: f64, p: f64) -> f64 {
    let sp = s * p;
    let gl = gauss_legendre(16);
    let expo = -1.0 - sp / 2.0;
    // ∫_{-1}^{1} (1−|b|)(a²+b²)^expo db on geometric panels a·2^i.
    let inner = |a: f64| {
        let f = |b: f64| (1.0 - b) * (a * a + b * b).powf(expo);
        let mut total = integrate(&gl, 0.0, a.min(1.0), f);
        let mut lo = a;
        while lo < 1.0 {
            let hi = (2.0 * lo).min(1.0);
            total += integrate(&gl, lo, hi, f);
            lo = hi;
        }
        2.0 * total
    };
    // a = t^{1/(1−sp)} cancels the a^{−sp} singularity; split at the kink a = ½.
    let e = 1.0 / (1.0 - sp);
    let outer = |t: f64| {
        let a = t.powf(e);
        let w1 = a.min(1.0 - a);
        w1 * inner(a) * e * t.powf(e - 1.0)
    };
    let tk = 0.5f64.powf(1.0 - sp);
    let panels = 16;
    let mut total = 0.0;
    for (lo, hi) in [(0.0, tk), (tk, 1.0)] {
        for i in 0..panels {
            let (a, b) = (lo + (hi - lo) * i as f64 / panels as f64, lo + (hi - lo) * (i + 1) as f64 / panels as f64);
            total += integrate(&gl, a, b, outer);
        }
    }
    2.0 * total
}

/// Monte-Carlo estimate and standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Smallest radius sampled by [`gagliardo_mc`].
pub const MC_R_MIN: f64 = 1e-8;
const MC_STRATA: usize = 64;

/// Monte-Carlo estimate of `∬ J(x,y)/|x−y|^{2+sp}` over `Ω×Ω`, where
/// `J(x,y) = jump(cell(x), cell(y))` is the `p`-th power jump.
/// `x` is uniform in `Ω`, the direction uniform, and `|x−y|` log-uniform
/// on `[MC_R_MIN, diam]` in equal strata.
pub fn gagliardo_mc_with(
    mesh: &Mesh,
    jump: impl Fn(usize, usize) -> f64 + Sync,
    s: f64,
    p: f64,
    samples: usize,
    seed: u64,
) -> Estimate {
    let sp = s * p;
    let cells = &mesh.cells;
    let loc = Locator::new(cells);
    let area: f64 = cells.iter().map(|c| c.area()).sum();
    let mut cum = Vec::with_capacity(cells.len());
    let mut acc = 0.0;
    for c in cells {
        acc += c.area();
        cum.push(acc);
    }
    let diam = crate::geom2::diameter(&mesh.triangles().iter().flatten().copied().collect::<Vec<Point2>>());
    let log_span = (diam / MC_R_MIN).ln();
    let per = samples.div_ceil(MC_STRATA).max(2);
    let strata: Vec<(f64, f64)> = (0..MC_STRATA)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let (mut sum, mut sum2) = (0.0, 0.0);
            for _ in 0..per {
                let target = rng.random::<f64>() * acc;
                let ci = cum.partition_point(|&c| c < target).min(cells.len() - 1);
                let t = &cells[ci].verts;
                let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                let x = t[0] + (t[1] - t[0]).scale(u) + (t[2] - t[0]).scale(v);
                let z = (k as f64 + rng.random::<f64>()) / MC_STRATA as f64;
                let r = MC_R_MIN * (z * log_span).exp();
                let th = rng.random::<f64>() * std::f64::consts::TAU;
                let y = x + Point2::new(th.cos(), th.sin()).scale(r);
                let w = match loc.locate(y) {
                    Some(cj) => {
                        let j = jump(ci, cj);
                        if j == 0.0 {
                            0.0
                        } else {
                            area * std::f64::consts::TAU * log_span * j * r.powf(-sp)
                        }
                    }
                    None => 0.0,
                };
                sum += w;
                sum2 += w * w;
            }
            let n = per as f64;
            let mean = sum / n;
            let var = (sum2 / n - mean * mean).max(0.0) * n / (n - 1.0);
            (mean, var / n)
        })
        .collect();
    let value = strata.iter().map(|x| x.0).sum::<f64>() / MC_STRATA as f64;
    let var = strata.iter().map(|x| x.1).sum::<f64>() / (MC_STRATA * MC_STRATA) as f64;
    Estimate { value, stderr: var.sqrt() }
}

/// Gagliardo estimate of a scalar piecewise-constant field.
pub fn gagliardo_mc(mesh: &Mesh, values: &[f64], s: f64, p: f64, samples: usize, seed: u64) -> Estimate {
    gagliardo_mc_with(mesh, |i, j| (values[i] - values[j]).abs().powf(p), s, p, samples, seed)
}

/// Gagliardo estimate summed over the phase indicators of `chi`.
pub fn gagliardo_mc_chi(mesh: &Mesh, chi: &[u8], s: f64, p: f64, samples: usize, seed: u64) -> Estimate {
    gagliardo_mc_with(mesh, |i, j| if chi[i] == chi[j] { 0.0 } else { 2.0 }, s, p, samples, seed)
}
