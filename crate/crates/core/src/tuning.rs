//! Selection of the number of factors by bootstrap validation or leave-one-period-out
//! cross-validation. Neither procedure reads a post-treatment cell of a treated unit.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipca::{fit_als, fit_gamma_given_factors, objective, update_factors, FitConfig, IpcaParams};
use crate::panel::{classify_treatment, PanelData, PanelView, TreatmentPattern, ViewRow};
use crate::simulation::replication_rng;

/// Bootstrap replications that fail to fit are redrawn at most this many times.
pub const MAX_REDRAWS: usize = 10;

/// Relative tie tolerance: `k` ties with the minimum when its MSE is within this fraction of the
/// mean validation sum of squares.
pub const TIE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneMethod {
    Bootstrap,
    LeaveOneOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub method: TuneMethod,
    pub k_best: usize,
    /// Mean validation SSE for `k = 1..=k_max`.
    pub mse_by_k: Vec<f64>,
    pub n_reps: Option<usize>,
    pub seed: Option<u64>,
    /// Bootstrap samples discarded because a fit failed.
    pub redraws: usize,
    /// Absolute tolerance used to break near-ties toward smaller `k`.
    pub tie_tolerance: f64,
}

/// Smallest `k` (1-based) whose MSE is within `tolerance` of the minimum.
pub fn select_k(mse_by_k: &[f64], tolerance: f64) -> usize {
    let min = mse_by_k.iter().copied().fold(f64::INFINITY, f64::min);
    mse_by_k.iter().position(|&m| m <= min + tolerance).map_or(1, |i| i + 1)
}

/// Checks `1 <= k_max <= min(L, T_pre, N_ctrl)`, with `T_pre` the shortest pre-treatment window.
pub fn check_k_max(panel: &PanelData, pattern: &TreatmentPattern, k_max: usize) -> Result<()> {
    let t_pre = pattern.t_pre.iter().copied().min().unwrap_or(0);
    let cap = panel.n_covariates().min(t_pre).min(pattern.n_control());
    if k_max == 0 || k_max > cap {
        return Err(Error::InvalidConfig {
            field: "k_max",
            reason: format!(
                "must lie in 1..={cap} = min(L={}, T_pre={t_pre}, N_ctrl={})",
                panel.n_covariates(),
                pattern.n_control()
            ),
        });
    }
    Ok(())
}

fn pre_rows(pattern: &TreatmentPattern, units: &[usize], skip: Option<usize>) -> Vec<ViewRow> {
    units
        .iter()
        .map(|&unit| {
            let pos = pattern.treated_units.iter().position(|&u| u == unit).expect("treated unit");
            ViewRow { unit, periods: (0..pattern.t_pre[pos]).filter(|&t| Some(t) != skip).collect() }
        })
        .filter(|r| !r.periods.is_empty())
        .collect()
}

fn validation_ss(view: &PanelView<'_>) -> f64 {
    view.cells()
        .map(|(i, t)| {
            let y = view.panel().outcome(i, t);
            y * y
        })
        .sum()
}

/// Validation SSE of one bootstrap replication for every `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRep {
    pub sse_by_k: Vec<f64>,
    pub validation_ss: f64,
    pub redraws: usize,
}

/// Replication `rep` of the bootstrap: resample whole control units as training and whole
/// treated units as validation, fit every `k` on the same resample, score the refit on the
/// validation units' pre-treatment cells.
pub fn bootstrap_rep(
    panel: &PanelData,
    pattern: &TreatmentPattern,
    k_max: usize,
    config: &FitConfig,
    seed: u64,
    rep: u64,
) -> Result<BootstrapRep> {
    let mut rng = replication_rng(seed, rep);
    let all: Vec<usize> = (0..panel.n_periods()).collect();
    let mut redraws = 0;
    loop {
        let ctrl: Vec<usize> =
            (0..pattern.n_control()).map(|_| pattern.control_units[rng.random_range(0..pattern.n_control())]).collect();
        let treat: Vec<usize> =
            (0..pattern.n_treated()).map(|_| pattern.treated_units[rng.random_range(0..pattern.n_treated())]).collect();
        let train = PanelView::balanced(panel, &ctrl, &all);
        let valid = PanelView::new(panel, pre_rows(pattern, &treat, None));
        let scored: Result<Vec<f64>> = (1..=k_max)
            .map(|k| {
                let (params, _) = fit_als(&train, &FitConfig { k, ..config.clone() })?;
                let gamma = fit_gamma_given_factors(&valid, &params.factors, config.rank_tol)?.gamma;
                objective(&IpcaParams::new(gamma, params.factors)?, &valid)
            })
            .collect();
        match scored {
            Ok(sse_by_k) => return Ok(BootstrapRep { sse_by_k, validation_ss: validation_ss(&valid), redraws }),
            Err(e) if redraws >= MAX_REDRAWS => return Err(e),
            Err(_) => redraws += 1,
        }
    }
}

/// Averages bootstrap replications into a [`TuneResult`].
pub fn summarize_bootstrap(reps: &[BootstrapRep], seed: u64) -> Result<TuneResult> {
    let first = reps.first().ok_or(Error::Empty("bootstrap replications"))?;
    let n = reps.len() as f64;
    let mse_by_k: Vec<f64> =
        (0..first.sse_by_k.len()).map(|k| reps.iter().map(|r| r.sse_by_k[k]).sum::<f64>() / n).collect();
    let tie_tolerance = TIE_TOLERANCE * reps.iter().map(|r| r.validation_ss).sum::<f64>() / n;
    Ok(TuneResult {
        method: TuneMethod::Bootstrap,
        k_best: select_k(&mse_by_k, tie_tolerance),
        mse_by_k,
        n_reps: Some(reps.len()),
        seed: Some(seed),
        redraws: reps.iter().map(|r| r.redraws).sum(),
        tie_tolerance,
    })
}

pub fn tune_bootstrap(
    panel: &PanelData,
    k_max: usize,
    n_reps: usize,
    config: &FitConfig,
    seed: u64,
) -> Result<TuneResult> {
    let pattern = classify_treatment(panel)?;
    check_k_max(panel, &pattern, k_max)?;
    if n_reps == 0 {
        return Err(Error::InvalidConfig { field: "n_reps", reason: "must be at least 1".into() });
    }
    let reps = (0..n_reps as u64)
        .map(|r| bootstrap_rep(panel, &pattern, k_max, config, seed, r))
        .collect::<Result<Vec<_>>>()?;
    summarize_bootstrap(&reps, seed)
}

/// Held-out SSE of one leave-one-period-out fold for every `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooFold {
    pub period: usize,
    pub sse_by_k: Vec<f64>,
    pub validation_ss: f64,
}

/// Periods that are pre-treatment for at least one treated unit.
pub fn loo_periods(pattern: &TreatmentPattern) -> Vec<usize> {
    (0..pattern.t_pre.iter().copied().max().unwrap_or(0)).collect()
}

/// Drops `period` from the controls and from the treated pre-treatment cells, fits on the rest
/// and predicts the held-out treated cells with the period's factor estimated from the
/// held-out control cross-section.
pub fn loo_fold(
    panel: &PanelData,
    pattern: &TreatmentPattern,
    period: usize,
    k_max: usize,
    config: &FitConfig,
) -> Result<LooFold> {
    let train_periods: Vec<usize> = (0..panel.n_periods()).filter(|&t| t != period).collect();
    let train = PanelView::balanced(panel, &pattern.control_units, &train_periods);
    let refit = PanelView::new(panel, pre_rows(pattern, &pattern.treated_units, Some(period)));
    let held_out: Vec<usize> =
        pattern.treated_units.iter().zip(&pattern.t_pre).filter(|(_, &pre)| period < pre).map(|(&u, _)| u).collect();
    let (x_ctrl, y_ctrl) = PanelView::balanced(panel, &pattern.control_units, &[period]).cross_section(period);
    let mut sse_by_k = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let (params, _) = fit_als(&train, &FitConfig { k, ..config.clone() })?;
        let gamma = fit_gamma_given_factors(&refit, &params.factors, config.rank_tol)?.gamma;
        let f_t = update_factors(&params.gamma, &x_ctrl, &y_ctrl, config.rank_tol)?.factor;
        let loading = &gamma * f_t;
        let sse: f64 = held_out
            .iter()
            .map(|&i| {
                let fit: f64 = panel.covariates(i, period).iter().zip(loading.iter()).map(|(a, b)| a * b).sum();
                let r = panel.outcome(i, period) - fit;
                r * r
            })
            .sum();
        sse_by_k.push(sse);
    }
    let validation_ss = held_out.iter().map(|&i| panel.outcome(i, period) * panel.outcome(i, period)).sum();
    Ok(LooFold { period, sse_by_k, validation_ss })
}

pub fn summarize_loo(folds: &[LooFold]) -> Result<TuneResult> {
    let first = folds.first().ok_or(Error::Empty("leave-one-out folds"))?;
    let n = folds.len() as f64;
    let mse_by_k: Vec<f64> =
        (0..first.sse_by_k.len()).map(|k| folds.iter().map(|f| f.sse_by_k[k]).sum::<f64>() / n).collect();
    let tie_tolerance = TIE_TOLERANCE * folds.iter().map(|f| f.validation_ss).sum::<f64>() / n;
    Ok(TuneResult {
        method: TuneMethod::LeaveOneOut,
        k_best: select_k(&mse_by_k, tie_tolerance),
        mse_by_k,
        n_reps: None,
        seed: None,
        redraws: 0,
        tie_tolerance,
    })
}

/// Checks the leave-one-out preconditions and returns the treatment pattern.
pub fn loo_pattern(panel: &PanelData, k_max: usize) -> Result<TreatmentPattern> {
    let pattern = classify_treatment(panel)?;
    if pattern.t_pre.iter().any(|&p| p < 2) {
        return Err(Error::InvalidConfig {
            field: "t_pre",
            reason: "leave-one-out needs at least two pre-treatment periods per treated unit".into(),
        });
    }
    check_k_max(panel, &pattern, k_max)?;
    Ok(pattern)
}

pub fn tune_loo(panel: &PanelData, k_max: usize, config: &FitConfig) -> Result<TuneResult> {
    let pattern = loo_pattern(panel, k_max)?;
    let folds = loo_periods(&pattern)
        .into_iter()
        .map(|t| loo_fold(panel, &pattern, t, k_max, config))
        .collect::<Result<Vec<_>>>()?;
    summarize_loo(&folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{simulate_panel, DgpConfig};

    fn noiseless(seed: u64) -> PanelData {
        let cfg = DgpConfig {
            n_treat: 5,
            n_ctrl: 30,
            t_pre: 20,
            t_post: 5,
            l: 4,
            k: 2,
            noise_sd: 0.0,
            fe_range: (0.0, 0.0),
            beta_range: (0.0, 0.0),
            gamma_range: (-1.0, 1.0),
            seed,
            ..DgpConfig::default()
        };
        simulate_panel(&cfg).unwrap().panel
    }

    #[test]
    fn ties_go_to_smaller_k() {
        assert_eq!(select_k(&[3.0, 1e-12, 0.0, 1e-13], 1e-9), 2);
        assert_eq!(select_k(&[3.0, 1.0, 0.5], 0.0), 3);
        assert_eq!(select_k(&[2.0, 2.0], 0.0), 1);
    }

    #[test]
    fn bootstrap_finds_true_k_without_noise() {
        let r = tune_bootstrap(&noiseless(1), 4, 5, &FitConfig::default(), 7).unwrap();
        assert_eq!(r.k_best, 2, "{:?}", r.mse_by_k);
        assert_eq!(r.mse_by_k.len(), 4);
        assert!(r.mse_by_k.iter().all(|m| m.is_finite() && *m >= 0.0));
    }

    #[test]
    fn loo_finds_true_k_without_noise() {
        let r = tune_loo(&noiseless(2), 4, &FitConfig::default()).unwrap();
        assert_eq!(r.k_best, 2, "{:?}", r.mse_by_k);
        assert_eq!(r.mse_by_k.len(), 4);
    }

    #[test]
    fn bootstrap_is_reproducible() {
        let p = noiseless(3);
        let a = tune_bootstrap(&p, 3, 1, &FitConfig::default(), 11).unwrap();
        let b = tune_bootstrap(&p, 3, 1, &FitConfig::default(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k_max_bounds_are_enforced() {
        let p = noiseless(4);
        let err = tune_bootstrap(&p, 5, 2, &FitConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { field: "k_max", .. }));
        let cfg = DgpConfig { n_ctrl: 2, l: 4, k: 1, ..DgpConfig::default() };
        let small = simulate_panel(&cfg).unwrap().panel;
        assert!(matches!(tune_loo(&small, 3, &FitConfig::default()), Err(Error::InvalidConfig { field: "k_max", .. })));
    }

    #[test]
    fn loo_needs_two_pre_periods() {
        let cfg = DgpConfig { t_pre: 1, l: 2, k: 1, ..DgpConfig::default() };
        let p = simulate_panel(&cfg).unwrap().panel;
        assert!(matches!(tune_loo(&p, 1, &FitConfig::default()), Err(Error::InvalidConfig { field: "t_pre", .. })));
    }

    #[test]
    fn treated_post_cells_are_never_read() {
        let clean = noiseless(5);
        let mut poisoned = clean.clone();
        for i in 30..35 {
            for t in 20..25 {
                poisoned.poison_cell(i, t, f64::NAN);
            }
        }
        let cfg = FitConfig::default();
        assert_eq!(tune_loo(&clean, 3, &cfg).unwrap(), tune_loo(&poisoned, 3, &cfg).unwrap());
        let a = tune_bootstrap(&clean, 3, 3, &cfg, 1).unwrap();
        let b = tune_bootstrap(&poisoned, 3, 3, &cfg, 1).unwrap();
        assert_eq!(a, b);
        assert!(b.mse_by_k.iter().all(|m| m.is_finite()));
    }
}
