//! Subcommand definitions and their implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use opcov::covest::{apg_fit, build_design, correlation_grid, fit_with_cv, default_cv_grid, CvResult, FitOptions};
use opcov::eigen::{fpc_scores, l2_eigen, matrix_rank, DEFAULT_NUMERICAL_RANK_TOL};
use opcov::meanfit::{default_lambda_grid, fit_mean, log_grid, MeanEstimate};
use opcov::quadrature::{QuadratureRule, DEFAULT_QUAD_NODES};
use opcov::simulate::{run_experiment, ExperimentReport, SimConfig};
use opcov::spectral::{sym_eig, DEFAULT_RANK_TOL};
use opcov::{KernelSpec, Penalty};
use serde::Serialize;

use crate::io::{fmt_f64, read_long_csv, read_points, write_csv, write_json, TimeRescale};
use crate::model::{Diagnostics, ModelFile};

#[derive(Debug, Parser)]
#[command(name = "opcov", version, about = "Covariance function estimation for sparse functional data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a covariance model to long-format data (`curve_id,t,y`).
    Fit(FitArgs),
    /// Evaluate a fitted covariance (and optionally correlation) on a grid.
    EvalGrid(EvalGridArgs),
    /// L² eigenvalues and eigenfunctions of a fitted covariance.
    Eigen(EigenArgs),
    /// Functional principal component scores of curves.
    Scores(ScoresArgs),
    /// Run a simulation experiment.
    Simulate(SimulateArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::EvalGrid(a) => cmd_eval_grid(&a),
        Command::Eigen(a) => cmd_eigen(&a),
        Command::Scores(a) => cmd_scores(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyKind {
    Trace,
    Hs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeanKind {
    /// Smoothing spline with GCV.
    Gcv,
    /// Treat the data as centred.
    Zero,
}

/// `lo:hi:k`, log-spaced.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGrid {
    pub lo: f64,
    pub hi: f64,
    pub k: usize,
}

impl std::str::FromStr for LogGrid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected lo:hi:k, got {s:?}"));
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
        let lo = num(parts[0])?;
        let hi = num(parts[1])?;
        let k = parts[2].trim().parse::<usize>().map_err(|e| format!("{:?}: {e}", parts[2]))?;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || k == 0 {
            return Err(format!("need 0 < lo <= hi and k >= 1, got {s:?}"));
        }
        Ok(Self { lo, hi, k })
    }
}

impl LogGrid {
    pub fn values(&self) -> Vec<f64> {
        log_grid(self.lo, self.hi, self.k)
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Long-format CSV with header `curve_id,t,y`.
    pub input: PathBuf,
    /// Output model file.
    #[arg(short, long, default_value = "model.json")]
    pub out: PathBuf,
    /// Spectral penalty: trace norm or squared Hilbert-Schmidt norm.
    #[arg(long, value_enum, default_value_t = PenaltyKind::Trace)]
    pub penalty: PenaltyKind,
    /// Constrain the estimate to be positive semidefinite (default).
    #[arg(long, overrides_with = "no_psd")]
    pub psd: bool,
    /// Drop the positive semidefinite constraint.
    #[arg(long, overrides_with = "psd")]
    pub no_psd: bool,
    /// Fixed penalty level; skips cross-validation.
    #[arg(long, conflicts_with = "cv_grid")]
    pub lambda: Option<f64>,
    /// Cross-validation grid `lo:hi:k` (log-spaced); default 1e-9:1e-1:30.
    #[arg(long)]
    pub cv_grid: Option<LogGrid>,
    /// Cross-validation folds over curves.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Map the observed time range onto [0, 1] (recorded in the model).
    #[arg(long)]
    pub rescale_time: bool,
    /// Mean function removed before forming products.
    #[arg(long, value_enum, default_value_t = MeanKind::Gcv)]
    pub mean: MeanKind,
    /// Quadrature nodes used by later eigen and score computations.
    #[arg(long, default_value_t = DEFAULT_QUAD_NODES)]
    pub quad_nodes: usize,
    /// Relative eigenvalue cutoff of the Gram factorization.
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    pub gram_tol: f64,
    /// Iteration cap of the solver.
    #[arg(long, default_value_t = FitOptions::default().max_iter)]
    pub max_iter: usize,
}

impl FitArgs {
    pub fn penalty(&self) -> Penalty {
        match (self.penalty, !self.no_psd) {
            (PenaltyKind::Trace, true) => Penalty::TracePsd,
            (PenaltyKind::Trace, false) => Penalty::TraceSym,
            (PenaltyKind::Hs, true) => Penalty::HsPsd,
            (PenaltyKind::Hs, false) => Penalty::HsSym,
        }
    }
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    ensure!(a.quad_nodes >= 2, "--quad-nodes must be at least 2");
    let long = read_long_csv(&a.input)?;
    let rescale = if a.rescale_time {
        let (min, max) = long.time_range().context("no observations")?;
        ensure!(max > min, "cannot rescale: all times equal {min}");
        Some(TimeRescale { min, max })
    } else {
        None
    };
    let data = long.into_dataset(rescale.as_ref())?;
    let spec = KernelSpec::default();

    let mean = match a.mean {
        MeanKind::Gcv => fit_mean(&data, &spec, &default_lambda_grid())?,
        MeanKind::Zero => MeanEstimate::zero(),
    };
    let design = build_design(&data, &mean, &spec, a.gram_tol)?;
    let template = FitOptions { max_iter: a.max_iter, ..FitOptions::new(a.penalty(), 0.0) };
    let (est, cv): (_, Option<CvResult>) = match a.lambda {
        Some(lambda) => (apg_fit(&design, &FitOptions { lambda, ..template })?, None),
        None => {
            let grid = a.cv_grid.as_ref().map_or_else(default_cv_grid, LogGrid::values);
            let (est, cv) = fit_with_cv(&design, &template, &grid, a.folds, a.seed)?;
            log::info!("cross-validation selected lambda = {:e}", cv.best_lambda);
            (est, Some(cv))
        }
    };
    if !est.converged {
        log::warn!("solver stopped after {} iterations without meeting the tolerance", est.iterations);
    }
    let diagnostics = Diagnostics {
        iterations: est.iterations,
        converged: est.converged,
        objective: est.objective,
        rank: matrix_rank(&est.b, 1e-10)?,
        numerical_rank: matrix_rank(&est.b, DEFAULT_NUMERICAL_RANK_TOL)?,
        gram_rank: design.rank(),
        n_curves: design.n_curves(),
        n_observations: est.anchor_points.len(),
        dropped_curves: design.dropped_curves,
    };
    eprintln!(
        "{}: lambda = {:e}, rank = {}, {} iterations{}",
        est.penalty.name(),
        est.lambda_used,
        diagnostics.numerical_rank,
        est.iterations,
        if est.converged { "" } else { " (not converged)" }
    );
    ModelFile::new(&est, mean, rescale, a.quad_nodes, cv, diagnostics).save(&a.out)
}

#[derive(Debug, Clone, Args)]
pub struct EvalGridArgs {
    pub model: PathBuf,
    /// Equally spaced grid of k points over the domain.
    #[arg(long, conflicts_with = "points", required_unless_present = "points")]
    pub grid: Option<usize>,
    /// File with one evaluation point per line, in the data's time units.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Add the correlation column.
    #[arg(long)]
    pub corr: bool,
    #[arg(short, long, default_value = "grid.csv")]
    pub out: PathBuf,
}

/// Evaluation points on the model's `[0, 1]` scale.
fn eval_points(model: &ModelFile, grid: Option<usize>, points: Option<&Path>) -> Result<Vec<f64>> {
    match (grid, points) {
        (Some(k), _) => {
            ensure!(k >= 2, "--grid needs at least 2 points");
            Ok((0..k).map(|i| i as f64 / (k - 1) as f64).collect())
        }
        (None, Some(p)) => {
            let pts: Vec<f64> = read_points(p)?.into_iter().map(|t| model.model_time(t)).collect();
            if let Some(bad) = pts.iter().find(|u| !(0.0..=1.0).contains(*u)) {
                bail!("point {} lies outside the fitted domain", model.display_time(*bad));
            }
            Ok(pts)
        }
        (None, None) => bail!("pass --grid or --points"),
    }
}

pub fn cmd_eval_grid(a: &EvalGridArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let est = model.estimate()?;
    let pts = eval_points(&model, a.grid, a.points.as_deref())?;
    let cov = est.grid(&pts)?;
    let corr = if a.corr { Some(correlation_grid(&cov)?) } else { None };

    let eig = sym_eig(&cov)?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    let bottom = eig.values.last().copied().unwrap_or(0.0);
    let psd = bottom >= -1e-8 * top.abs().max(f64::MIN_POSITIVE);
    eprintln!(
        "grid {n}x{n}: eigenvalues in [{bottom:e}, {top:e}], {}",
        if psd { "positive semidefinite" } else { "NOT positive semidefinite" },
        n = pts.len()
    );

    let mut header = vec!["s", "t", "cov"];
    if a.corr {
        header.push("corr");
    }
    let n = pts.len();
    let rows = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| {
        let mut r = vec![fmt_f64(model.display_time(pts[i])), fmt_f64(model.display_time(pts[j])), fmt_f64(cov[[i, j]])];
        if let Some(c) = &corr {
            r.push(c[[i, j]].map(fmt_f64).unwrap_or_default());
        }
        r
    });
    write_csv(&a.out, &header, rows)
}

#[derive(Debug, Clone, Args)]
pub struct EigenArgs {
    pub model: PathBuf,
    /// Number of leading components to write; default all.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of equally spaced points at which eigenfunctions are tabulated.
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    /// Eigenfunction table (`component,eigenvalue,t,phi`).
    #[arg(short, long, default_value = "eigen.csv")]
    pub out: PathBuf,
    /// Eigenvalue and variance-explained summary.
    #[arg(long, default_value = "fve.json")]
    pub fve_out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenReport {
    pub n_components: usize,
    pub model_rank: usize,
    pub eigenvalues: Vec<f64>,
    /// Cumulative fraction of variance explained.
    pub fve: Vec<f64>,
}

pub fn cmd_eigen(a: &EigenArgs) -> Result<()> {
    ensure!(a.grid >= 2, "--grid needs at least 2 points");
    let model = ModelFile::load(&a.model)?;
    let est = model.estimate()?;
    let sys = l2_eigen(&est)?;
    let k = a.k.unwrap_or(sys.n_components());
    ensure!(k <= sys.n_components(), "asked for {k} components but the estimate has {}", sys.n_components());
    if sys.n_components() != model.diagnostics.rank {
        log::warn!("{} eigenpairs but the model records rank {}", sys.n_components(), model.diagnostics.rank);
    }
    let ts: Vec<f64> = (0..a.grid).map(|i| i as f64 / (a.grid - 1) as f64).collect();
    let phi = sys.eval_functions(&ts)?;
    let rows = (0..k).flat_map(|c| {
        let (phi, sys, model, ts) = (&phi, &sys, &model, &ts);
        ts.iter().enumerate().map(move |(i, &t)| {
            vec![(c + 1).to_string(), fmt_f64(sys.values[c]), fmt_f64(model.display_time(t)), fmt_f64(phi[[i, c]])]
        })
    });
    write_csv(&a.out, &["component", "eigenvalue", "t", "phi"], rows)?;
    write_json(
        &a.fve_out,
        &EigenReport {
            n_components: sys.n_components(),
            model_rank: model.diagnostics.rank,
            eigenvalues: sys.values.clone(),
            fve: sys.fve.clone(),
        },
    )
}

#[derive(Debug, Clone, Args)]
pub struct ScoresArgs {
    pub model: PathBuf,
    /// Long-format CSV of the curves to score.
    pub input: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(short, long, default_value = "scores.csv")]
    pub out: PathBuf,
}

pub fn cmd_scores(a: &ScoresArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let est = model.estimate()?;
    let data = read_long_csv(&a.input)?.into_dataset(model.time_rescale.as_ref())?;
    let rule = QuadratureRule::gauss_legendre(model.quad_nodes)?;
    let sys = l2_eigen(&est)?;
    let scores = fpc_scores(&data, &model.mean, &sys, a.k, &rule, &default_lambda_grid())?;
    let missing = scores.iter().filter(|s| s.is_none()).count();
    if missing > 0 {
        log::warn!("{missing} curve(s) could not be scored");
    }
    let mut header = vec!["curve_id".to_string()];
    header.extend((1..=a.k).map(|j| format!("score_{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = data.curves.iter().zip(&scores).map(|(c, s)| {
        let mut r = vec![c.id.clone()];
        match s {
            Some(v) => r.extend(v.iter().map(|&x| fmt_f64(x))),
            None => r.extend(std::iter::repeat_n(String::new(), a.k)),
        }
        r
    });
    write_csv(&a.out, &header, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodName {
    TracePsd,
    TraceSym,
    HsPsd,
    HsSym,
}

impl From<MethodName> for Penalty {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::TracePsd => Penalty::TracePsd,
            MethodName::TraceSym => Penalty::TraceSym,
            MethodName::HsPsd => Penalty::HsPsd,
            MethodName::HsSym => Penalty::HsSym,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// JSON configuration; flags given alongside override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of covariance components (2 or 4 in the benchmark).
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub noise_var: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<MethodName>>,
    /// Simulate centred curves and skip mean estimation.
    #[arg(long)]
    pub true_mean_zero: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Output directory for report.csv and report.json.
    #[arg(short, long, default_value = ".")]
    pub out_dir: PathBuf,
}

impl SimulateArgs {
    pub fn config(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("{} is not a simulation config", p.display()))?
            }
            None => SimConfig::default(),
        };
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.m {
            cfg.m = v;
        }
        if let Some(v) = self.components {
            cfg.components = v;
        }
        if let Some(v) = self.noise_var {
            cfg.noise_var = v;
        }
        if let Some(v) = self.reps {
            cfg.n_reps = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.methods {
            cfg.methods = v.iter().map(|&m| m.into()).collect();
        }
        if self.true_mean_zero {
            cfg.use_true_mean_zero = true;
        }
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = a.config()?;
    let report = run_experiment(&cfg)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    write_report(&report, &a.out_dir)?;
    for s in &report.summaries {
        eprintln!(
            "{:<10} AISE = {:.4e} (se {:.3e})  rank = {:.2}  success = {}/{}",
            s.method.name(),
            s.mean_ise,
            s.se_ise,
            s.mean_rank,
            s.successes,
            cfg.n_reps
        );
    }
    Ok(())
}

pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let rows = report.records.iter().map(|r| {
        vec![
            r.rep.to_string(),
            r.method.name().to_string(),
            opt(r.ise.map(fmt_f64)),
            opt(r.rank.map(|v| v.to_string())),
            opt(r.lambda.map(fmt_f64)),
            opt(r.iterations.map(|v| v.to_string())),
            opt(r.error.clone()),
        ]
    });
    write_csv(
        &dir.join("report.csv"),
        &["rep", "method", "ise", "rank", "lambda", "iterations", "error"],
        rows,
    )?;
    write_json(&dir.join("report.json"), report)
}
