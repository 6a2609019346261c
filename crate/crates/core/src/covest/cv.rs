use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::apg::{apg_fit, FitOptions};
use super::design::{build_design, DesignCache};
use super::estimate::CovarianceEstimate;
use crate::data::FunctionalDataset;
use crate::error::{input, Result};
use crate::kernel::KernelSpec;
use crate::meanfit::{log_grid, MeanEstimate};

/// 30 values log-spaced over `[1e-9, 1e-1]`.
pub fn default_cv_grid() -> Vec<f64> {
    log_grid(1e-9, 1e-1, 30)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvRow {
    pub fold: usize,
    pub lambda: f64,
    pub validation_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub best_lambda: f64,
    /// Grid in the order it was supplied.
    pub lambdas: Vec<f64>,
    /// Mean validation loss per grid value, aligned with `lambdas`.
    pub mean_losses: Vec<f64>,
    pub table: Vec<CvRow>,
    pub skipped_folds: Vec<usize>,
}

/// Assign curves to folds by a seeded shuffle.
fn assign_folds(n_curves: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_curves).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (pos, idx) in order.into_iter().enumerate() {
        out[pos % folds].push(idx);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

/// K-fold cross-validation over curves.
///
/// Each training fit uses the full design's factor, so the fitted covariance
/// at the held-out curves' times is `M_v B M_vᵀ` and the validation score is
/// the training loss functional on the held-out curves. Every fit starts from
/// the template's `b0`.
pub fn cross_validate(
    cache: &DesignCache,
    template: &FitOptions,
    lambda_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    template.validate()?;
    if lambda_grid.is_empty() {
        return input("empty lambda grid");
    }
    if let Some(l) = lambda_grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return input(format!("lambda grid values must be positive and finite, got {l}"));
    }
    if folds < 2 {
        return input(format!("need at least 2 folds, got {folds}"));
    }
    let n = cache.n_curves();
    if n < folds {
        return input(format!("{n} curves cannot be split into {folds} folds"));
    }

    let mut sweep: Vec<usize> = (0..lambda_grid.len()).collect();
    sweep.sort_by(|&a, &b| lambda_grid[b].total_cmp(&lambda_grid[a]));

    let assignment = assign_folds(n, folds, seed);
    let per_fold: Vec<Result<Option<Vec<CvRow>>>> = assignment
        .par_iter()
        .enumerate()
        .map(|(f, held_out)| {
            let train_idx: Vec<usize> = (0..n).filter(|i| held_out.binary_search(i).is_err()).collect();
            let train = cache.subset(&train_idx);
            let valid = cache.subset_for_scoring(held_out);
            if valid.n_pairs() == 0 || train.n_pairs() == 0 {
                log::warn!("fold {f} has no usable pairs and is skipped");
                return Ok(None);
            }
            let mut rows = Vec::with_capacity(sweep.len());
            for &g in &sweep {
                let opts = FitOptions { lambda: lambda_grid[g], ..template.clone() };
                let fit = apg_fit(&train, &opts)?;
                let (loss, _) = valid.eval(&fit.b);
                rows.push(CvRow {
                    fold: f,
                    lambda: lambda_grid[g],
                    validation_loss: loss,
                    iterations: fit.iterations,
                    converged: fit.converged,
                });
            }
            Ok(Some(rows))
        })
        .collect();

    let mut table = Vec::new();
    let mut skipped = Vec::new();
    for (f, r) in per_fold.into_iter().enumerate() {
        match r? {
            Some(rows) => table.extend(rows),
            None => skipped.push(f),
        }
    }
    let used = folds - skipped.len();
    if used == 0 {
        return input("every cross-validation fold was skipped");
    }

    let mean_losses: Vec<f64> = lambda_grid
        .iter()
        .map(|&l| table.iter().filter(|r| r.lambda == l).map(|r| r.validation_loss).sum::<f64>() / used as f64)
        .collect();
    // Descending order, so a strict comparison keeps the larger λ on ties.
    let mut best = sweep[0];
    for &g in &sweep[1..] {
        if mean_losses[g] < mean_losses[best] {
            best = g;
        }
    }
    table.sort_by(|a, b| a.fold.cmp(&b.fold).then(b.lambda.total_cmp(&a.lambda)));
    Ok(CvResult {
        best_lambda: lambda_grid[best],
        lambdas: lambda_grid.to_vec(),
        mean_losses,
        table,
        skipped_folds: skipped,
    })
}

/// Build the design from data and cross-validate.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_data(
    data: &FunctionalDataset,
    mean: &MeanEstimate,
    spec: &KernelSpec,
    template: &FitOptions,
    lambda_grid: &[f64],
    folds: usize,
    seed: u64,
    rank_tol: f64,
) -> Result<CvResult> {
    let cache = build_design(data, mean, spec, rank_tol)?;
    cross_validate(&cache, template, lambda_grid, folds, seed)
}

/// Cross-validate, then refit on every curve at the selected value.
pub fn fit_with_cv(
    cache: &DesignCache,
    template: &FitOptions,
    lambda_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(CovarianceEstimate, CvResult)> {
    let cv = cross_validate(cache, template, lambda_grid, folds, seed)?;
    let fit = apg_fit(cache, &FitOptions { lambda: cv.best_lambda, ..template.clone() })?;
    Ok((fit, cv))
}
