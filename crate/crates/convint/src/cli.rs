//! Command-line front end: `run`, `render` and `check`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::{metrics_csv, run_constants, MC_R_MIN};
use crate::blocks::{conti_block, instantiate, normal_angle, Frame, Side};
use crate::cover::{cover_box, cover_isosceles, cover_triangle, stack_count, Rect};
use crate::engine::{self, DeltaMode, RunConfig, SignPolicy, StopReason, DEFAULT_BUDGET};
use crate::error::{Error, Result};
use crate::geom2::{
    polygon_perimeter, read_mesh_json, triangle_area, triangle_perimeter, write_mesh_json, Mesh,
    BOUNDARY_SAMPLES, WELD_REL,
};
use crate::inapprox::{from_barycentric, member, split, Problem, Stage, KAPPA0};
use crate::scalar::{TOL_ANGLE, TOL_CONT_REL, TOL_GEOM};
use crate::{Mat2, Point2};

#[derive(Parser, Debug)]
#[command(name = "convint", version, about = "Piecewise-affine convex integration runs and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the iteration from a JSON config and write metrics, the final mesh and a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `out` field.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a mesh JSON file as SVG.
    Render {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        svg: PathBuf,
        #[arg(long, value_enum, default_value_t = ColorBy::Well)]
        color_by: ColorBy,
    },
    /// Run a single-block or covering check and print a pass/fail table.
    Check {
        #[command(subcommand)]
        what: CheckCmd,
    },
}

#[derive(Subcommand, Debug)]
pub enum CheckCmd {
    Block {
        #[arg(long, value_enum, default_value_t = ProblemArg::Kh)]
        problem: ProblemArg,
        #[arg(long, default_value_t = 1)]
        k: u32,
        /// Use the stage-dependent block aspect.
        #[arg(long)]
        faithful: bool,
        #[arg(long, default_value_t = 0.125)]
        delta: f64,
    },
    Cover {
        #[arg(long = "case", value_enum)]
        case: CoverCase,
        #[arg(long, default_value_t = 0.125)]
        delta: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProblemArg {
    #[value(name = "KH", alias = "kh")]
    Kh,
    #[value(name = "O2", alias = "o2")]
    O2,
}

impl From<ProblemArg> for Problem {
    fn from(p: ProblemArg) -> Self {
        match p {
            ProblemArg::Kh => Problem::KH,
            ProblemArg::O2 => Problem::O2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CoverCase {
    Isosceles,
    Box,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ColorBy {
    Well,
    Q,
    L,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_STAGE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                eprintln!("{}", Cli::command().render_usage());
                return EXIT_ERROR;
            }
            return EXIT_OK;
        }
    };
    let res = match cli.command {
        Command::Run { config, out } => cmd_run(&config, out.as_deref()),
        Command::Render { mesh, svg, color_by } => cmd_render(&mesh, &svg, color_by),
        Command::Check { what } => cmd_check(&what),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::StageViolation { .. } => EXIT_STAGE,
                Error::BudgetExceeded { .. } => EXIT_BUDGET,
                _ => EXIT_ERROR,
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: Problem,
    pub domain: Vec<[f64; 2]>,
    #[serde(rename = "M0")]
    pub m0: [[f64; 2]; 2],
    pub depth: u32,
    pub delta_mode: DeltaMode,
    #[serde(default = "default_budget")]
    pub cell_budget: usize,
    #[serde(default = "default_policy")]
    pub sign_policy: SignPolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_c2")]
    pub c2: f64,
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

fn default_policy() -> SignPolicy {
    SignPolicy::Ledger
}

fn default_c2() -> f64 {
    0.5
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn to_run_config(&self) -> Result<RunConfig> {
        if self.depth < 1 {
            return Err(Error::Config("field `depth` must be at least 1".into()));
        }
        if self.cell_budget == 0 {
            return Err(Error::Config("field `cellBudget` must be positive".into()));
        }
        let cfg = RunConfig {
            problem: self.problem,
            domain: self.domain.iter().map(|p| Point2::new(p[0], p[1])).collect(),
            m0: Mat2::from_rows(self.m0),
            depth: self.depth,
            delta_mode: self.delta_mode,
            cell_budget: self.cell_budget,
            sign_policy: self.sign_policy,
            c2: self.c2,
            stop_median_dist: 1e-4,
            seed: self.seed,
            threads: None,
        };
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("field {msg}")),
            other => other,
        })?;
        Ok(cfg)
    }
}

/// Git-style content hash: SHA-256 over `"blob <len>\0" ++ bytes`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn cmd_run(config: &Path, out: Option<&Path>) -> Result<i32> {
    let text = fs::read_to_string(config)?;
    let file = ConfigFile::parse(&text)?;
    let cfg = file.to_run_config()?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| file.out.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set field `out`".into()))?;
    fs::create_dir_all(&out_dir)?;
    let state = engine::run(&cfg)?;

    let csv = metrics_csv(&state.history);
    fs::write(out_dir.join("metrics.csv"), &csv)?;
    let mesh_path = out_dir.join("mesh_final.json");
    {
        let mut w = BufWriter::new(fs::File::create(&mesh_path)?);
        write_mesh_json(&state.mesh, cfg.problem, &mut w)?;
        w.flush()?;
    }
    let mesh_bytes = fs::read(&mesh_path)?;
    let consts = run_constants(&state.history, cfg.problem, cfg.c2, polygon_perimeter(&cfg.domain));
    let (stop, budget_hit) = match state.stop {
        StopReason::Depth => ("depth".to_string(), false),
        StopReason::Converged => ("converged".to_string(), false),
        StopReason::Budget { cells } => (format!("budget ({cells} cells projected)"), true),
    };
    let manifest = json!({
        "tool": "convint",
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::from_str::<serde_json::Value>(&text)?,
        "configHash": blob_hash(text.as_bytes()),
        "reachedDepth": state.k,
        "stop": stop,
        "m0Level": state.m0_level,
        "tolerances": {
            "tolGeom": TOL_GEOM,
            "tolContRel": TOL_CONT_REL,
            "tolAngle": TOL_ANGLE,
            "weldRel": WELD_REL,
            "boundarySamplesPerEdge": BOUNDARY_SAMPLES,
            "stopMedianDist": cfg.stop_median_dist,
            "mcRMin": MC_R_MIN,
        },
        "constants": {
            "kappa0": KAPPA0,
            "c2": cfg.c2,
            "wells": cfg.problem.wells(),
            "v1Min": consts.v1_min,
            "cHat": consts.c_hat,
            "maxC": consts.max_c,
            "C0": consts.c0,
            "theta0": consts.theta0,
        },
        "outputs": {
            "metrics.csv": blob_hash(csv.as_bytes()),
            "mesh_final.json": blob_hash(&mesh_bytes),
        },
    });
    fs::write(out_dir.join("run_manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    if budget_hit {
        eprintln!("BudgetExceeded: stopped at depth {} of {}", state.k, cfg.depth);
        return Ok(EXIT_BUDGET);
    }
    Ok(EXIT_OK)
}

fn well_color(problem: Option<Problem>, w: u8) -> &'static str {
    match (problem, w) {
        (Some(Problem::O2), 1) => "#1f77b4",
        (Some(Problem::O2), _) => "#ff7f0e",
        (_, 1) => "#d62728",
        (_, 2) => "#2ca02c",
        _ => "#1f77b4",
    }
}

fn gray(t: f64) -> String {
    let v = (255.0 * (1.0 - t.clamp(0.0, 1.0))).round() as u8;
    format!("#{v:02x}{v:02x}{v:02x}")
}

/// SVG with one polygon per cell; y points up.
pub fn render_svg(mesh: &Mesh, problem: Option<Problem>, color_by: ColorBy) -> String {
    let pts = mesh.cells.iter().flat_map(|c| c.verts.iter());
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    if !x0.is_finite() {
        (x0, y0, x1, y1) = (0.0, 0.0, 1.0, 1.0);
    }
    let m = problem.map_or(3, Problem::wells);
    let q_max = (m as f64 * f64::from(mesh.generation.max(1))).max(1.0);
    let l_max = mesh.cells.iter().map(|c| c.state.l).max().unwrap_or(0).max(0) as f64 + 1.0;
    let stroke = if mesh.generation >= 6 { 0.0 } else { 1e-3 * (x1 - x0).max(y1 - y0) };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.6} {:.6} {:.6} {:.6}\">",
        x0,
        -y1,
        x1 - x0,
        y1 - y0
    );
    let _ = writeln!(s, "<g stroke=\"#000000\" stroke-width=\"{stroke:.6}\">");
    for c in &mesh.cells {
        let fill = match color_by {
            ColorBy::Well => well_color(problem, crate::analysis::nearest_well(&c.map.grad, problem.unwrap_or(Problem::KH)))
                .to_string(),
            ColorBy::Q => gray(f64::from(c.state.q) / q_max),
            ColorBy::L => gray((f64::from(c.state.l) + 1.0) / l_max),
        };
        let _ = write!(s, "<polygon fill=\"{fill}\" points=\"");
        for (i, p) in c.verts.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{:.6},{:.6}", p.x, -p.y);
        }
        s.push_str("\"/>\n");
    }
    s.push_str("</g>\n</svg>\n");
    s
}

pub fn cmd_render(mesh_path: &Path, svg_path: &Path, color_by: ColorBy) -> Result<i32> {
    let text = fs::read_to_string(mesh_path)?;
    let (mesh, problem) = read_mesh_json(&text)?;
    fs::write(svg_path, render_svg(&mesh, problem, color_by))?;
    Ok(EXIT_OK)
}

/// One row of a check table.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub pass: bool,
}

impl CheckRow {
    fn new(name: &str, value: f64, bound: impl Into<String>, pass: bool) -> Self {
        Self { name: name.into(), value, bound: bound.into(), pass }
    }
}

pub fn print_table(rows: &[CheckRow]) -> bool {
    let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in rows {
        println!("{:<w$}  {:>14.6e}  {:<28}  {}", r.name, r.value, r.bound, if r.pass { "PASS" } else { "FAIL" });
    }
    rows.iter().all(|r| r.pass)
}

/// Instantiates one block on the reference matrix of `problem` at stage `(k, 0)`.
pub fn block_checks(problem: Problem, k: u32, delta: Option<f64>) -> Result<Vec<CheckRow>> {
    let (m, stage) = match problem {
        Problem::KH => (from_barycentric(&[250.0 / 256.0, 3.0 / 256.0, 3.0 / 256.0]), Stage::u(k, 0).with_anchor(1)),
        Problem::O2 => (Mat2::diag(0.625, 0.625), Stage::u(k, 0)),
    };
    let s = split(problem, &m, &stage, &Default::default(), SignPolicy::Ledger)?;
    let delta = delta.unwrap_or_else(|| engine::faithful_delta(problem, &stage));
    let (thin_pair, _, w) = crate::blocks::thin_data(&s);
    let variant = match problem {
        Problem::O2 => crate::blocks::Variant::Generic,
        Problem::KH => crate::blocks::Variant::DivFree,
    };
    let block = conti_block(w, delta, variant)?;
    let frame = Frame { angle: normal_angle(s.dir.n), scale: 1.0, center: Point2::zero() };
    let b = Point2::new(0.0, 0.0);
    let pieces = instantiate(&block, &frame, &m, b, &s);
    let mut rows = vec![CheckRow::new("lambda", s.lambda, "split weight", s.lambda > 0.0 && s.lambda < 1.0)];
    let members = pieces.iter().filter(|p| member(problem, &p.map.grad, &s.target[p.split_side])).count();
    rows.push(CheckRow::new(
        "stage membership",
        members as f64,
        format!("= {}", pieces.len()),
        members == pieces.len(),
    ));
    let amag = thin_pair.a.norm() * thin_pair.n.norm();
    let (factor, label) = if problem == Problem::KH { (20.0, "20") } else { (4.0 * 2f64.sqrt(), "4*sqrt(2)") };
    let eps = factor * delta * w * (1.0 - w) * amag;
    let dist = pieces
        .iter()
        .map(|p| (p.map.grad - s.a).norm().min((p.map.grad - s.b).norm()))
        .fold(0.0, f64::max);
    rows.push(CheckRow::new("dist to {A,B}", dist, format!("<= {label}*d*l(1-l)|a| = {eps:.3e}"), dist <= eps));
    if problem == Problem::KH {
        let tr = pieces.iter().map(|p| p.map.grad.trace().abs()).fold(0.0, f64::max);
        rows.push(CheckRow::new("max |trace|", tr, "<= 1e-12", tr <= 1e-12));
    }
    let dia = frame.diamond(delta);
    let mut dev = 0.0f64;
    for e in 0..4 {
        for t in 0..64 {
            let x = dia[e].lerp(dia[(e + 1) % 4], t as f64 / 64.0);
            if let Some(p) = pieces.iter().find(|p| crate::geom2::point_in_triangle(&p.verts, x, 1e-15)) {
                dev = dev.max((p.map.apply(x) - m.mul_vec(x) - b).norm());
            } else {
                dev = f64::INFINITY;
            }
        }
    }
    rows.push(CheckRow::new("boundary deviation", dev, "<= 1e-9", dev <= 1e-9));
    let per: f64 = pieces.iter().map(|p| triangle_perimeter(&p.verts)).sum();
    let dper = 4.0 * (dia[1] - dia[0]).norm();
    rows.push(CheckRow::new("perimeter ratio", per / dper, "<= 16", per <= 16.0 * dper));
    let thick: f64 = pieces.iter().filter(|p| p.side == Side::Thick).map(|p| triangle_area(&p.verts)).sum();
    let frac = thick / (2.0 * delta);
    let want = (1.0 - w) * (1.0 - w * delta);
    rows.push(CheckRow::new("persistent area fraction", frac, format!("= {want:.9}"), (frac - want).abs() <= 1e-9));
    Ok(rows)
}

/// Covers a reference input of the given case.
pub fn cover_checks(case: CoverCase, delta: f64) -> Result<Vec<CheckRow>> {
    let n = stack_count(delta);
    let mut rows = Vec::new();
    match case {
        CoverCase::Isosceles => {
            let tri = [Point2::new(0.0, delta), Point2::new(-1.0, 0.0), Point2::new(0.0, -delta)];
            let plan = cover_isosceles(&tri, delta, 0.0)?;
            let per = triangle_perimeter(&tri);
            rows.push(CheckRow::new("diamonds", plan.diamonds.len() as f64, "= 1", plan.diamonds.len() == 1));
            rows.push(CheckRow::new("v1", plan.measured.v1, "= 1/2", (plan.measured.v1 - 0.5).abs() <= 1e-9));
            rows.push(CheckRow::new(
                "remainder perimeter ratio",
                plan.measured.perim_c1 / per,
                "<= 2",
                plan.measured.perim_c1 <= 2.0 * per,
            ));
        }
        CoverCase::Box => {
            let rect = Rect { center: Point2::zero(), angle: 0.0, half_w: 1.0, half_h: delta * n as f64 };
            let plan = cover_box(&rect, delta)?;
            let c1 = plan.remainder.iter().filter(|r| matches!(r.class, crate::geom2::ClassTag::SelfSimilar { .. })).count();
            let corners = plan.remainder.len() - c1;
            rows.push(CheckRow::new("diamonds", plan.diamonds.len() as f64, format!("= {n}"), plan.diamonds.len() == n));
            rows.push(CheckRow::new("C1 triangles", c1 as f64, format!("= {}", 2 * (n - 1)), c1 == 2 * (n - 1)));
            rows.push(CheckRow::new("corner triangles", corners as f64, "= 4", corners == 4));
            rows.push(CheckRow::new("v1", plan.measured.v1, "= 1/2", (plan.measured.v1 - 0.5).abs() <= 1e-9));
            rows.push(CheckRow::new(
                "corner perimeter ratio",
                plan.measured.perim_rest / rect.perimeter(),
                "<= 8",
                plan.measured.perim_rest <= 8.0 * rect.perimeter(),
            ));
        }
        CoverCase::Triangle => {
            let tri = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.5, 3f64.sqrt() / 2.0)];
            let plan = cover_triangle(&tri, delta, 0.3)?;
            let per = triangle_perimeter(&tri);
            let area = triangle_area(&tri);
            rows.push(CheckRow::new("v1", plan.measured.v1, ">= 1/100", plan.measured.v1 >= 0.01));
            rows.push(CheckRow::new(
                "perimeter ratio",
                plan.total_perimeter() / per,
                format!("<= 100/delta = {}", 100.0 / delta),
                plan.total_perimeter() <= 100.0 / delta * per,
            ));
            let err = (plan.covered_area() - area).abs() / area;
            rows.push(CheckRow::new("area error", err, "<= 1e-9", err <= 1e-9));
        }
    }
    Ok(rows)
}

pub fn cmd_check(what: &CheckCmd) -> Result<i32> {
    let rows = match *what {
        CheckCmd::Block { problem, k, faithful, delta } => {
            block_checks(problem.into(), k, (!faithful).then_some(delta))?
        }
        CheckCmd::Cover { case, delta } => cover_checks(case, delta)?,
    };
    Ok(if print_table(&rows) { EXIT_OK } else { EXIT_ERROR })
}
