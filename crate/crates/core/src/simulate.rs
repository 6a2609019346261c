//! Synthetic benchmark: data generator, integrated squared error, and the
//! replicate runner.
//!
//! Curves follow `X(t) = μ₀(t) + Σ_{k≤L} (k+1)⁻¹ ξ_k φ_k(t)` with standard
//! normal `ξ_k`, `μ₀(t) = 3 sin(3π(t + ½)) + 2t³` and the Fourier basis
//! `√2 cos 2πt, √2 sin 2πt, √2 cos 4πt, √2 sin 4πt`. Each curve is observed at
//! `m` uniform times with `N(0, σ²)` noise.

use std::f64::consts::{PI, SQRT_2};

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covest::{build_design_with_eig, default_cv_grid, fit_with_cv, FitOptions};
use crate::data::{Curve, FunctionalDataset};
use crate::eigen::{numerical_rank, DEFAULT_NUMERICAL_RANK_TOL};
use crate::error::{input, Result};
use crate::kernel::{gram, KernelSpec};
use crate::meanfit::{default_lambda_grid, fit_smoother_with_eig, MeanEstimate};
use crate::quadrature::{QuadratureRule, DEFAULT_QUAD_NODES};
use crate::spectral::{sym_eig, Penalty};

/// Gram factor cutoff used by the experiment runner. Kernel directions below
/// it carry functions too small at every design point to affect the fit, and
/// dropping them shrinks the problem several-fold.
pub const SIM_GRAM_RANK_TOL: f64 = 1e-7;

/// The true mean function.
pub fn true_mean(t: f64) -> f64 {
    3.0 * (3.0 * PI * (t + 0.5)).sin() + 2.0 * t.powi(3)
}

/// The `k`-th basis function, `k = 1..=4`.
pub fn basis_function(k: usize, t: f64) -> f64 {
    match k {
        1 => SQRT_2 * (2.0 * PI * t).cos(),
        2 => SQRT_2 * (2.0 * PI * t).sin(),
        3 => SQRT_2 * (4.0 * PI * t).cos(),
        4 => SQRT_2 * (4.0 * PI * t).sin(),
        _ => panic!("basis index {k} outside 1..=4"),
    }
}

/// `C₀(s,t) = Σ_{k≤L} (k+1)⁻² φ_k(s) φ_k(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueCovariance {
    pub n_components: usize,
}

impl TrueCovariance {
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        (1..=self.n_components)
            .map(|k| basis_function(k, s) * basis_function(k, t) / ((k + 1) * (k + 1)) as f64)
            .sum()
    }

    pub fn grid(&self, points: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((points.len(), points.len()), |(i, j)| self.eval(points[i], points[j]))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Curves per dataset.
    pub n: usize,
    /// Observations per curve.
    pub m: usize,
    /// Number of covariance components, 2 or 4.
    pub components: usize,
    pub noise_var: f64,
    pub n_reps: usize,
    pub seed: u64,
    pub methods: Vec<Penalty>,
    /// Generate zero-mean curves and skip mean estimation.
    pub use_true_mean_zero: bool,
    pub folds: usize,
    pub cv_grid: Vec<f64>,
    pub mean_grid: Vec<f64>,
    pub quad_nodes: usize,
    /// Relative cutoff of the Gram factorization.
    pub gram_rank_tol: f64,
    /// Relative cutoff used when reporting the rank of an estimate.
    pub rank_tol: f64,
    pub max_iter: usize,
    pub fit_rel_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 200,
            m: 5,
            components: 2,
            noise_var: 0.01,
            n_reps: 30,
            seed: 1,
            methods: Penalty::ALL.to_vec(),
            use_true_mean_zero: false,
            folds: 5,
            cv_grid: default_cv_grid(),
            mean_grid: default_lambda_grid(),
            quad_nodes: DEFAULT_QUAD_NODES,
            gram_rank_tol: SIM_GRAM_RANK_TOL,
            rank_tol: DEFAULT_NUMERICAL_RANK_TOL,
            max_iter: FitOptions::default().max_iter,
            fit_rel_tol: FitOptions::default().rel_tol,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.n_reps == 0 {
            return input("n, m and n_reps must all be at least 1");
        }
        if !(1..=4).contains(&self.components) {
            return input(format!("components must be between 1 and 4, got {}", self.components));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return input(format!("noise variance must be non-negative, got {}", self.noise_var));
        }
        if self.methods.is_empty() {
            return input("no estimation methods selected");
        }
        if self.quad_nodes < 2 {
            return input("quadrature needs at least 2 nodes");
        }
        Ok(())
    }

    fn rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64);
        rng
    }
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub data: FunctionalDataset,
    pub truth: TrueCovariance,
    /// Seed for the replicate's cross-validation folds.
    pub cv_seed: u64,
}

/// Draw replicate `rep`. The stream depends only on `(seed, rep)`.
pub fn generate_dataset(cfg: &SimConfig, rep: usize) -> Result<SimDataset> {
    cfg.validate()?;
    let mut rng = cfg.rng(rep);
    let noise = Normal::new(0.0, cfg.noise_var.sqrt()).expect("validated noise variance");
    let curves = (0..cfg.n)
        .map(|i| {
            let xi: Vec<f64> = (1..=cfg.components)
                .map(|k| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z / (k + 1) as f64
                })
                .collect();
            let times: Vec<f64> = (0..cfg.m).map(|_| rng.random::<f64>()).collect();
            let values = times
                .iter()
                .map(|&t| {
                    let mu = if cfg.use_true_mean_zero { 0.0 } else { true_mean(t) };
                    let x: f64 = xi.iter().enumerate().map(|(k, a)| a * basis_function(k + 1, t)).sum();
                    mu + x + noise.sample(&mut rng)
                })
                .collect();
            Curve::new(format!("{i}"), times, values)
        })
        .collect::<Result<Vec<_>>>()?;
    let cv_seed = rng.next_u64();
    Ok(SimDataset {
        data: FunctionalDataset::new(curves),
        truth: TrueCovariance { n_components: cfg.components },
        cv_seed,
    })
}

/// `∫∫ (Ĉ − C₀)²` over `[0,1]²` with the tensor-product rule.
pub fn aise(est: impl Fn(f64, f64) -> f64, truth: impl Fn(f64, f64) -> f64, rule: &QuadratureRule) -> f64 {
    let (x, w) = (rule.nodes(), rule.weights());
    let mut total = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            let d = est(x[i], x[j]) - truth(x[i], x[j]);
            total += w[i] * w[j] * d * d;
        }
    }
    total
}

/// Same integral from covariance matrices already evaluated on the rule's
/// nodes.
pub fn ise_on_grid(est: &Array2<f64>, truth: &Array2<f64>, rule: &QuadratureRule) -> Result<f64> {
    let n = rule.len();
    if est.dim() != (n, n) || truth.dim() != (n, n) {
        return input("grid matrices must match the quadrature rule");
    }
    let w = rule.weights();
    Ok(ndarray::Zip::indexed(est)
        .and(truth)
        .fold(0.0, |acc, (i, j), a, b| acc + w[i] * w[j] * (a - b).powi(2)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub method: Penalty,
    pub ise: Option<f64>,
    pub rank: Option<usize>,
    pub lambda: Option<f64>,
    pub iterations: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Penalty,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_ise: f64,
    /// Sample standard deviation of the ISEs over `√successes`.
    pub se_ise: f64,
    pub mean_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: SimConfigSummary,
    pub summaries: Vec<MethodSummary>,
    pub records: Vec<ReplicateRecord>,
}

/// The settings that identify an experiment, echoed into its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfigSummary {
    pub n: usize,
    pub m: usize,
    pub components: usize,
    pub noise_var: f64,
    pub n_reps: usize,
    pub seed: u64,
    pub use_true_mean_zero: bool,
}

impl ExperimentReport {
    pub fn summary(&self, method: Penalty) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Records of one method indexed by replicate.
    pub fn records_for(&self, method: Penalty) -> Vec<&ReplicateRecord> {
        let mut v: Vec<_> = self.records.iter().filter(|r| r.method == method).collect();
        v.sort_by_key(|r| r.rep);
        v
    }
}

/// Run every replicate, in parallel, and aggregate.
pub fn run_experiment(cfg: &SimConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let rule = QuadratureRule::gauss_legendre(cfg.quad_nodes)?;
    let mut records: Vec<ReplicateRecord> = (0..cfg.n_reps)
        .into_par_iter()
        .flat_map_iter(|rep| run_replicate(cfg, rep, &rule))
        .collect();
    records.sort_by_key(|r| (r.rep, cfg.methods.iter().position(|m| *m == r.method)));
    let summaries = cfg.methods.iter().map(|&m| summarize(m, &records, cfg.n_reps)).collect();
    Ok(ExperimentReport {
        config: SimConfigSummary {
            n: cfg.n,
            m: cfg.m,
            components: cfg.components,
            noise_var: cfg.noise_var,
            n_reps: cfg.n_reps,
            seed: cfg.seed,
            use_true_mean_zero: cfg.use_true_mean_zero,
        },
        summaries,
        records,
    })
}

fn summarize(method: Penalty, records: &[ReplicateRecord], n_reps: usize) -> MethodSummary {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.method == method && r.ise.is_some()).collect();
    let k = ok.len();
    let ises: Vec<f64> = ok.iter().map(|r| r.ise.unwrap()).collect();
    let mean = if k > 0 { ises.iter().sum::<f64>() / k as f64 } else { f64::NAN };
    let se = if k > 1 {
        (ises.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt() / (k as f64).sqrt()
    } else {
        f64::NAN
    };
    let mean_rank = if k > 0 {
        ok.iter().map(|r| r.rank.unwrap_or(0) as f64).sum::<f64>() / k as f64
    } else {
        f64::NAN
    };
    MethodSummary {
        method,
        successes: k,
        success_rate: k as f64 / n_reps as f64,
        mean_ise: mean,
        se_ise: se,
        mean_rank,
    }
}

fn failed(rep: usize, methods: &[Penalty], err: &dyn std::fmt::Display) -> Vec<ReplicateRecord> {
    methods
        .iter()
        .map(|&method| ReplicateRecord {
            rep,
            method,
            ise: None,
            rank: None,
            lambda: None,
            iterations: None,
            error: Some(err.to_string()),
        })
        .collect()
}

/// Generate, fit the mean, then cross-validate and fit each method.
pub fn run_replicate(cfg: &SimConfig, rep: usize, rule: &QuadratureRule) -> Vec<ReplicateRecord> {
    let prepared = (|| {
        let sim = generate_dataset(cfg, rep)?;
        let spec = KernelSpec::default();
        let times = sim.data.pooled_times();
        // One eigendecomposition serves the mean smoother and the factor; it
        // is valid for the design only when no curve is dropped.
        let eig = sym_eig(&gram(&spec, &times)?)?;
        let mean = if cfg.use_true_mean_zero {
            MeanEstimate::zero()
        } else {
            fit_smoother_with_eig(&times, &sim.data.pooled_values(), &eig, &cfg.mean_grid)?
        };
        let shared = sim.data.curves.iter().all(|c| c.len() >= 2).then_some(&eig);
        let design = build_design_with_eig(&sim.data, &mean, &spec, cfg.gram_rank_tol, shared)?;
        Ok::<_, crate::Error>((sim, design))
    })();
    let (sim, design) = match prepared {
        Ok(p) => p,
        Err(e) => {
            log::warn!("replicate {rep} failed before fitting: {e}");
            return failed(rep, &cfg.methods, &e);
        }
    };
    let truth_grid = sim.truth.grid(rule.nodes());
    cfg.methods
        .iter()
        .map(|&method| {
            let template = FitOptions {
                max_iter: cfg.max_iter,
                rel_tol: cfg.fit_rel_tol,
                ..FitOptions::new(method, cfg.cv_grid.first().copied().unwrap_or(1.0))
            };
            let outcome = (|| {
                let (fit, cv) = fit_with_cv(&design, &template, &cfg.cv_grid, cfg.folds, sim.cv_seed)?;
                let ise = ise_on_grid(&fit.grid(rule.nodes())?, &truth_grid, rule)?;
                let rank = numerical_rank(&fit, cfg.rank_tol)?;
                Ok::<_, crate::Error>((ise, rank, cv.best_lambda, fit.iterations))
            })();
            match outcome {
                Ok((ise, rank, lambda, iterations)) => ReplicateRecord {
                    rep,
                    method,
                    ise: Some(ise),
                    rank: Some(rank),
                    lambda: Some(lambda),
                    iterations: Some(iterations),
                    error: None,
                },
                Err(e) => {
                    log::warn!("replicate {rep}, {method}: {e}");
                    failed(rep, &[method], &e).remove(0)
                }
            }
        })
        .collect()
}
