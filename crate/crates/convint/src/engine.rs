//! Iteration driver: per-cell splitting, covering dispatch, block
//! instantiation and stage bookkeeping across generations.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::smallvec;

use crate::analysis::{self, StepMetrics};
use crate::blocks::{conti_block, instantiate, normal_angle, Variant};
use crate::cover::{cover, CoverPlan};
use crate::error::{Error, Result};
use crate::geom2::{
    format_id, triangle_perimeter, triangulate, AffineMap2, Case, CaseTag, Cell, CellState, ClassTag, Mesh, NO_PARENT,
};
use crate::inapprox::{classify_m0, member, split, Phase, Problem, SplitResult, Stage, KAPPA0};
use crate::{Mat2, Point2};

/// Number of ordered well pairs for three wells.
pub const N_PAIRS: usize = 6;

/// How the free sign of a skew lift is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SignPolicy {
    Ledger,
    AlwaysPlus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Good,
    Bad,
}

/// Per-branch coefficients `μ_p` of the accumulated skew jumps `Σ μ_p v_p`,
/// one per ordered well pair, plus the absolutely summable part.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkewLedger {
    pub mu: [f64; N_PAIRS],
    pub accum_good: f64,
}

impl SkewLedger {
    pub fn max_abs(&self) -> f64 {
        self.mu.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Chooses the sign of a jump with coefficient `lambda` on pair `pair`.
/// On the BAD branch the sign is `+` unless that would push `|μ|` past 1.
/// On the GOOD branch the sign is `+` and `(1 − λ)` is added to `accum_good`.
pub fn skew_sign(ledger: &SkewLedger, pair: usize, lambda: f64, branch: Branch) -> (f64, SkewLedger) {
    let mut out = *ledger;
    match branch {
        Branch::Bad => {
            let mu = ledger.mu[pair];
            let sign = if (mu + lambda).abs() > 1.0 { -mu.signum() } else { 1.0 };
            out.mu[pair] = (mu + lambda * sign).clamp(-1.0, 1.0);
            (sign, out)
        }
        Branch::Good => {
            out.accum_good += 1.0 - lambda;
            (1.0, out)
        }
    }
}

/// Choice of the block aspect `δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeltaMode {
    /// Stage-dependent constants for which containment is guaranteed.
    Faithful,
    /// A fixed user `δ ∈ (0, ½)`; containment failures are counted, not fatal.
    Demo { delta: f64 },
}

/// Faithful block aspect for a split at stage `s`.
pub fn faithful_delta(problem: Problem, s: &Stage) -> f64 {
    let (n, base) = match problem {
        Problem::O2 => (2.0, 10.0),
        Problem::KH => (3.0, 16.0),
    };
    let extra = if s.phase == Phase::UTilde { s.k as f64 } else { 0.0 };
    KAPPA0 * (-(base + extra)).exp2() / n
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    pub domain: Vec<Point2>,
    pub m0: Mat2,
    pub depth: u32,
    pub delta_mode: DeltaMode,
    pub cell_budget: usize,
    pub sign_policy: SignPolicy,
    /// Decay constant of the in-approximation distance.
    pub c2: f64,
    /// Early stop once the area-weighted median distance to the wells drops below this.
    pub stop_median_dist: f64,
    pub seed: u64,
    /// Worker cap; `None` reads `CONVINT_THREADS`, then machine parallelism.
    pub threads: Option<usize>,
}

pub const DEFAULT_BUDGET: usize = 5_000_000;

impl RunConfig {
    pub fn demo(problem: Problem, m0: Mat2, depth: u32, delta: f64) -> Self {
        Self {
            problem,
            domain: vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(0.0, 1.0)],
            m0,
            depth,
            delta_mode: DeltaMode::Demo { delta },
            cell_budget: DEFAULT_BUDGET,
            sign_policy: SignPolicy::Ledger,
            c2: 0.5,
            stop_median_dist: 1e-4,
            seed: 1,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DeltaMode::Demo { delta } = self.delta_mode {
            if !(delta > 0.0 && delta < 0.5) {
                return Err(Error::Config(format!("deltaMode.delta = {delta} must lie in (0, 1/2)")));
            }
        }
        if self.domain.len() < 3 {
            return Err(Error::Config("domain needs at least 3 vertices".into()));
        }
        if !(self.c2 > 0.0 && self.c2 <= 1.0) {
            return Err(Error::Config(format!("c2 = {} must lie in (0, 1]", self.c2)));
        }
        if !self.m0.is_finite() {
            return Err(Error::Config("M0 has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        match self.problem {
            Problem::O2 => Variant::Generic,
            Problem::KH => Variant::DivFree,
        }
    }

    pub fn delta_for(&self, s: &Stage) -> f64 {
        match self.delta_mode {
            DeltaMode::Faithful => faithful_delta(self.problem, s),
            DeltaMode::Demo { delta } => delta,
        }
    }

    pub fn faithful(&self) -> bool {
        self.delta_mode == DeltaMode::Faithful
    }

    fn thread_count(&self) -> usize {
        self.threads
            .or_else(|| std::env::var("CONVINT_THREADS").ok().and_then(|v| v.parse().ok()))
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

/// Per-step covering statistics used to measure the constants of the run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Smallest good-volume fraction over covered cells.
    pub good_frac_min: f64,
    /// Largest per-piece-type perimeter ratio over covered cells.
    pub perim_ratio_max: f64,
    /// Same ratio restricted to the block pieces.
    pub good_perim_ratio_max: f64,
    pub covered: usize,
    pub self_similar: usize,
    /// Cells advanced without geometric change after a degenerate split.
    pub trivial: usize,
    /// Block pieces whose gradient misses the target stage.
    pub warn_stage: usize,
}

impl Default for StepStats {
    fn default() -> Self {
        Self {
            good_frac_min: f64::INFINITY,
            perim_ratio_max: 0.0,
            good_perim_ratio_max: 0.0,
            covered: 0,
            self_similar: 0,
            trivial: 0,
            warn_stage: 0,
        }
    }
}

impl StepStats {
    fn merge(mut self, o: StepStats) -> Self {
        self.good_frac_min = self.good_frac_min.min(o.good_frac_min);
        self.perim_ratio_max = self.perim_ratio_max.max(o.perim_ratio_max);
        self.good_perim_ratio_max = self.good_perim_ratio_max.max(o.good_perim_ratio_max);
        self.covered += o.covered;
        self.self_similar += o.self_similar;
        self.trivial += o.trivial;
        self.warn_stage += o.warn_stage;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Depth,
    Budget { cells: usize },
    Converged,
}

#[derive(Clone, Debug)]
pub struct RunState {
    pub mesh: Arc<Mesh>,
    pub k: u32,
    pub m0_level: u32,
    pub history: Vec<StepMetrics>,
    pub stats: Vec<StepStats>,
    pub stop: StopReason,
}

/// State after a split: the next stage, `q+1`, and `l` promoted to the
/// U-level once a Ũ cycle completes.
pub fn advance(state: &CellState, target: Stage) -> CellState {
    let l = if target.phase == Phase::U { target.k as i32 } else { -1 };
    let l = l.max(state.l);
    CellState { l, q: state.q.saturating_add(1), case: if l != -1 { Case::C2 } else { Case::C1 }, stage: target }
}

/// Triangulated domain carrying `x ↦ M0·x`.
pub fn init(cfg: &RunConfig) -> Result<RunState> {
    cfg.validate()?;
    let m0_level = classify_m0(&cfg.m0, cfg.problem)?;
    let tris = triangulate(&cfg.domain)?;
    let ledger = (cfg.problem == Problem::KH).then(|| Arc::new(SkewLedger::default()));
    let cells = tris
        .into_iter()
        .enumerate()
        .map(|(i, verts)| Cell {
            id: smallvec![i as u32],
            parent: NO_PARENT,
            verts,
            map: AffineMap2::linear(cfg.m0),
            state: CellState { l: -1, q: 0, case: Case::C1, stage: Stage::utilde(m0_level, 0) },
            class: ClassTag::Generic,
            case_tag: CaseTag::A3,
            ledger: ledger.clone(),
        })
        .collect();
    let mesh = Mesh { generation: 0, cells, domain: cfg.domain.clone(), parent: None };
    Ok(RunState { mesh: Arc::new(mesh), k: 0, m0_level, history: Vec::new(), stats: Vec::new(), stop: StopReason::Depth })
}

enum Plan {
    Trivial,
    Covered { split: SplitResult, plan: CoverPlan, delta: f64 },
}

fn plan_cell(cell: &Cell, cfg: &RunConfig) -> Result<Plan> {
    let ledger = cell.ledger.as_deref().copied().unwrap_or_default();
    let s = match split(cfg.problem, &cell.map.grad, &cell.state.stage, &ledger, cfg.sign_policy) {
        Ok(s) => s,
        Err(e @ (Error::DegenerateSplit(_) | Error::StageExhausted(_) | Error::DegenerateDirection)) => {
            if cfg.faithful() {
                return Err(Error::StageViolation { cell: format_id(&cell.id), detail: e.to_string() });
            }
            return Ok(Plan::Trivial);
        }
        Err(e) => return Err(e),
    };
    let delta = cfg.delta_for(&cell.state.stage);
    let angle = normal_angle(s.dir.n);
    let plan = cover(&cell.verts, cell.class, delta, angle)?;
    Ok(Plan::Covered { split: s, plan, delta })
}

const BLOCK_CELLS: usize = 10;

fn count_cell(cell: &Cell, cfg: &RunConfig) -> Result<usize> {
    Ok(match plan_cell(cell, cfg)? {
        Plan::Trivial => 1,
        Plan::Covered { plan, .. } => plan.cell_count(BLOCK_CELLS),
    })
}

fn child_id(parent: &Cell, local: usize) -> crate::geom2::CellId {
    let mut id = parent.id.clone();
    id.push(local as u32);
    id
}

fn expand_cell(cell: &Cell, index: usize, cfg: &RunConfig) -> Result<(Vec<Cell>, StepStats)> {
    let mut stats = StepStats::default();
    let plan = plan_cell(cell, cfg)?;
    let (split, plan, delta) = match plan {
        Plan::Trivial => {
            stats.trivial = 1;
            let mut c = cell.clone();
            c.id = child_id(cell, 0);
            c.parent = index as u32;
            c.state = advance(&cell.state, cell.state.stage.next());
            return Ok((vec![c], stats));
        }
        Plan::Covered { split, plan, delta } => (split, plan, delta),
    };
    let (wa, wb) = split.weights();
    let lambda = if split.persistent() == 0 { wb } else { wa };
    let block = conti_block(lambda, delta, cfg.variant())?;
    let ledgers = split.ledgers.map(|[a, b]| [Arc::new(a), Arc::new(b)]);
    let mut out = Vec::with_capacity(plan.cell_count(BLOCK_CELLS));
    let mut good_perim = 0.0;
    for (i, frame) in plan.diamonds.iter().enumerate() {
        for (c, piece) in instantiate(&block, frame, &cell.map.grad, cell.map.offset, &split).into_iter().enumerate() {
            let target = split.target[piece.split_side];
            if !member(cfg.problem, &piece.map.grad, &target) {
                if cfg.faithful() {
                    return Err(Error::StageViolation {
                        cell: format_id(&cell.id),
                        detail: format!("gradient {:?} misses target stage {:?}", piece.map.grad, target),
                    });
                }
                stats.warn_stage += 1;
            }
            good_perim += triangle_perimeter(&piece.verts);
            out.push(Cell {
                id: child_id(cell, i * BLOCK_CELLS + c),
                parent: index as u32,
                verts: piece.verts,
                map: piece.map,
                state: advance(&cell.state, target),
                class: ClassTag::Generic,
                case_tag: CaseTag::A3,
                ledger: ledgers.as_ref().map(|l| l[piece.split_side].clone()).or_else(|| cell.ledger.clone()),
            });
        }
    }
    let base = plan.diamonds.len() * BLOCK_CELLS;
    for (r, piece) in plan.remainder.iter().enumerate() {
        out.push(Cell {
            id: child_id(cell, base + r),
            parent: index as u32,
            verts: piece.tri,
            map: cell.map,
            state: cell.state,
            class: piece.class,
            case_tag: piece.case_tag,
            ledger: cell.ledger.clone(),
        });
    }
    let per = triangle_perimeter(&cell.verts);
    let m = plan.measured;
    stats.covered = 1;
    stats.self_similar = usize::from(matches!(cell.class, ClassTag::SelfSimilar { .. }) && plan.diamonds.len() == 1);
    stats.good_frac_min = m.v1;
    stats.good_perim_ratio_max = good_perim / per;
    stats.perim_ratio_max = good_perim.max(m.perim_c1).max(m.perim_rest) / per;
    Ok((out, stats))
}

/// Processes every cell of the current generation. Fails with
/// `BudgetExceeded` before building anything if the projected count is too large.
pub fn step(state: &RunState, cfg: &RunConfig) -> Result<(Mesh, StepStats)> {
    let parent = &state.mesh;
    let projected: usize = parent
        .cells
        .par_iter()
        .map(|c| count_cell(c, cfg))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    if projected > cfg.cell_budget {
        return Err(Error::BudgetExceeded { cells: projected, budget: cfg.cell_budget });
    }
    let parts: Vec<(Vec<Cell>, StepStats)> = parent
        .cells
        .par_iter()
        .enumerate()
        .map(|(i, c)| expand_cell(c, i, cfg))
        .collect::<Result<_>>()?;
    let mut cells = Vec::with_capacity(projected);
    let mut stats = StepStats::default();
    for (children, s) in parts {
        cells.extend(children);
        stats = stats.merge(s);
    }
    let mesh = Mesh { generation: parent.generation + 1, cells, domain: parent.domain.clone(), parent: Some(parent.clone()) };
    Ok((mesh, stats))
}

/// Runs up to `cfg.depth` steps, calling `hook` on every sealed generation
/// (including the initial one). Stops early on budget or convergence.
pub fn run_with<F>(cfg: &RunConfig, mut hook: F) -> Result<RunState>
where
    F: FnMut(&RunState) -> Result<()> + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.thread_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut state = init(cfg)?;
        let first = analysis::measure(&state.mesh, cfg, None);
        state.history.push(first);
        hook(&state)?;
        while state.k < cfg.depth {
            if state.history.last().is_some_and(|m| m.median_dist_k < cfg.stop_median_dist) {
                state.stop = StopReason::Converged;
                break;
            }
            // Only one generation back is ever needed.
            if let Some(m) = Arc::get_mut(&mut state.mesh) {
                m.parent = None;
            }
            let (mesh, stats) = match step(&state, cfg) {
                Ok(x) => x,
                Err(Error::BudgetExceeded { cells, .. }) => {
                    state.stop = StopReason::Budget { cells };
                    if let Some(m) = state.history.last_mut() {
                        m.warn_budget = 1;
                    }
                    break;
                }
                Err(e) => return Err(e),
            };
            let mesh = Arc::new(mesh);
            let metrics = analysis::measure(&mesh, cfg, Some(&stats));
            state.mesh = mesh;
            state.k += 1;
            state.history.push(metrics);
            state.stats.push(stats);
            hook(&state)?;
        }
        Ok(state)
    })
}

pub fn run(cfg: &RunConfig) -> Result<RunState> {
    run_with(cfg, |_| Ok(()))
}
