//! Thread-pool versions of the embarrassingly parallel loops. Work items carry their own RNG
//! stream and results are collected in index order, so outputs do not depend on the pool size.

use csc_ipca_core::csc::estimate;
use csc_ipca_core::inference::{grid_values, ConfidenceBand, ConformalContext, Grid};
use csc_ipca_core::ipca::FitConfig;
use csc_ipca_core::panel::{classify_treatment, PanelData};
use csc_ipca_core::simulation::{aggregate, run_replication, McConfig, McReport};
use csc_ipca_core::tuning::{
    bootstrap_rep, check_k_max, loo_fold, loo_pattern, loo_periods, summarize_bootstrap, summarize_loo, TuneResult,
};
use csc_ipca_core::{Error, Result};
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{CliError, CliResult};

/// Pool with `threads` workers; all available cores when `None`.
pub fn thread_pool(threads: Option<usize>) -> CliResult<ThreadPool> {
    if threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))
}

pub fn monte_carlo(config: &McConfig, pool: &ThreadPool) -> Result<McReport> {
    config.validate()?;
    let reps = pool.install(|| {
        (0..config.n_reps).into_par_iter().map(|r| run_replication(config, r)).collect::<Result<Vec<_>>>()
    })?;
    Ok(aggregate(config, &reps))
}

pub fn tune_bootstrap(
    panel: &PanelData,
    k_max: usize,
    n_reps: usize,
    config: &FitConfig,
    seed: u64,
    pool: &ThreadPool,
) -> Result<TuneResult> {
    let pattern = classify_treatment(panel)?;
    check_k_max(panel, &pattern, k_max)?;
    if n_reps == 0 {
        return Err(Error::InvalidConfig { field: "n_reps", reason: "must be at least 1".into() });
    }
    let reps = pool.install(|| {
        (0..n_reps as u64)
            .into_par_iter()
            .map(|r| bootstrap_rep(panel, &pattern, k_max, config, seed, r))
            .collect::<Result<Vec<_>>>()
    })?;
    summarize_bootstrap(&reps, seed)
}

pub fn tune_loo(panel: &PanelData, k_max: usize, config: &FitConfig, pool: &ThreadPool) -> Result<TuneResult> {
    let pattern = loo_pattern(panel, k_max)?;
    let folds = pool.install(|| {
        loo_periods(&pattern)
            .into_par_iter()
            .map(|t| loo_fold(panel, &pattern, t, k_max, config))
            .collect::<Result<Vec<_>>>()
    })?;
    summarize_loo(&folds)
}

/// Per-period conformal intervals, one period per task.
pub fn confidence_band(
    panel: &PanelData,
    grid: &Grid,
    level: f64,
    config: &FitConfig,
    q: f64,
    pool: &ThreadPool,
) -> Result<ConfidenceBand> {
    let ctx = ConformalContext::new(panel, config)?;
    let fit = estimate(panel, config)?;
    let periods = pool.install(|| {
        (0..ctx.t_post())
            .into_par_iter()
            .map(|s| {
                let values = grid_values(grid, fit.att[s], fit.pre_fit_rmse)?;
                ctx.period_interval(&fit.att, s, &values, level, q)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(ConfidenceBand::from_periods(level, q, fit.att, ctx.t_pre() + 1, periods))
}

#[cfg(test)]
mod tests {
    use super::*;
    use csc_ipca_core::inference::confidence_interval;
    use csc_ipca_core::simulation::{monte_carlo as sequential_mc, simulate_panel, DgpConfig, EstimatorKind};
    use csc_ipca_core::tuning;

    fn small_dgp() -> DgpConfig {
        DgpConfig { n_treat: 4, n_ctrl: 12, t_pre: 8, t_post: 3, l: 4, k: 2, seed: 5, ..DgpConfig::default() }
    }

    #[test]
    fn parallel_matches_sequential() {
        let pool = thread_pool(Some(3)).unwrap();
        let mc = McConfig {
            dgp: small_dgp(),
            estimators: vec![EstimatorKind::Ipca, EstimatorKind::Scm],
            n_reps: 6,
            ..McConfig::default()
        };
        let report = monte_carlo(&mc, &pool).unwrap();
        assert!(report.estimators.iter().all(|r| r.n_failed == 0));
        assert_eq!(report, sequential_mc(&mc).unwrap());

        let panel = simulate_panel(&small_dgp()).unwrap().panel;
        let fit = FitConfig::with_k(2);
        assert_eq!(
            tune_bootstrap(&panel, 3, 4, &fit, 9, &pool).unwrap(),
            tuning::tune_bootstrap(&panel, 3, 4, &fit, 9).unwrap()
        );
        assert_eq!(tune_loo(&panel, 3, &fit, &pool).unwrap(), tuning::tune_loo(&panel, 3, &fit).unwrap());
        let grid = Grid::Centered { half_width_sd: 3.0, n: 7 };
        assert_eq!(
            confidence_band(&panel, &grid, 0.9, &fit, 1.0, &pool).unwrap(),
            confidence_interval(&panel, &grid, 0.9, &fit, 1.0).unwrap()
        );
    }

    #[test]
    fn zero_threads_rejected() {
        assert!(matches!(thread_pool(Some(0)), Err(CliError::Usage(_))));
    }
}
