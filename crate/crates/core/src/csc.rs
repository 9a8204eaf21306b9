//! The counterfactual pipeline: fit controls over all periods, refit the mapping on the treated
//! pre-treatment cells, normalize, impute untreated outcomes and average the effects.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ipca::{fit_als, fit_gamma_given_factors, FactorPath, FitConfig, FitDiagnostics, IpcaParams};
use crate::linalg::std_dev;
use crate::normalization::normalize;
use crate::panel::{classify_treatment, split, PanelData, PanelView, TreatmentPattern};

/// Everything produced by [`estimate`].
///
/// Per-unit series (`y0_hat`, `effects`) are indexed by treated unit (in `pattern.treated_units`
/// order) and then by event time, i.e. periods since that unit's adoption. Under block
/// assignment every row has length `T_post`.
#[derive(Debug, Clone, PartialEq)]
pub struct CscFit {
    pub pattern: TreatmentPattern,
    /// Control-group fit: mapping and factors over every period.
    pub params_ctrl: IpcaParams,
    /// Treated mapping refit on the pre-treatment cells, before normalization.
    pub gamma_treat: DMatrix<f64>,
    pub gamma_treat_norm: DMatrix<f64>,
    pub factors_norm: FactorPath,
    /// `X_it Gamma_norm F_norm,t'` for every treated unit and period (N_treat x T).
    pub fitted: DMatrix<f64>,
    pub y0_hat: Vec<Vec<f64>>,
    pub effects: Vec<Vec<f64>>,
    /// Average effect per event time.
    pub att: Vec<f64>,
    /// Number of treated units contributing to each `att` entry.
    pub att_counts: Vec<usize>,
    pub pre_fit_rmse: f64,
    /// Set when `pre_fit_rmse` exceeds `pre_fit_warn_sd` control-outcome standard deviations.
    pub pre_fit_warning: bool,
    pub diagnostics: FitDiagnostics,
}

/// Runs the four estimation steps on a panel with block or staggered adoption.
pub fn estimate(panel: &PanelData, config: &FitConfig) -> Result<CscFit> {
    let pattern = classify_treatment(panel)?;
    estimate_with_pattern(panel, &pattern, config)
}

pub(crate) fn estimate_with_pattern(
    panel: &PanelData,
    pattern: &TreatmentPattern,
    config: &FitConfig,
) -> Result<CscFit> {
    let views = split(panel, pattern)?;

    // Step 1: controls over the whole period.
    let (params_ctrl, diagnostics) = fit_als(&views.ctrl_all, config)?;

    // Step 2: treated mapping from pre-treatment cells with the factors held fixed.
    let gamma_treat = fit_gamma_given_factors(&views.treat_pre, &params_ctrl.factors, config.rank_tol)?.gamma;

    // Step 3: rotate the treated pair to its normalized representative.
    let norm = normalize(&IpcaParams::new(gamma_treat.clone(), params_ctrl.factors.clone())?)?;

    // Step 4: impute and average.
    let all_periods: Vec<usize> = (0..panel.n_periods()).collect();
    let every = PanelView::balanced(panel, &pattern.treated_units, &all_periods);
    let fitted_rows = impute(&norm.gamma, &norm.factors, &every)?;
    let fitted = DMatrix::from_fn(pattern.n_treated(), panel.n_periods(), |i, t| fitted_rows[i][t]);
    let y0_hat = impute(&norm.gamma, &norm.factors, &views.treat_post)?;
    let series = att_series(&views.treat_post, &y0_hat)?;

    let mut sq = 0.0;
    let mut cells = 0usize;
    for (row, (&unit, &pre)) in pattern.treated_units.iter().zip(&pattern.t_pre).enumerate() {
        for t in 0..pre {
            let r = panel.outcome(unit, t) - fitted[(row, t)];
            sq += r * r;
            cells += 1;
        }
    }
    let pre_fit_rmse = libm::sqrt(sq / cells as f64);
    let ctrl_outcomes: Vec<f64> = views.ctrl_all.cells().map(|(i, t)| panel.outcome(i, t)).collect();
    let pre_fit_warning = pre_fit_rmse > config.pre_fit_warn_sd * std_dev(&ctrl_outcomes);

    Ok(CscFit {
        pattern: pattern.clone(),
        params_ctrl,
        gamma_treat,
        gamma_treat_norm: norm.gamma,
        factors_norm: norm.factors,
        fitted,
        y0_hat,
        effects: series.effects,
        att: series.att,
        att_counts: series.counts,
        pre_fit_rmse,
        pre_fit_warning,
        diagnostics,
    })
}

/// `X_it Gamma F_t'` for every cell of `view`, one vector per view row.
pub fn impute(gamma: &DMatrix<f64>, factors: &FactorPath, view: &PanelView<'_>) -> Result<Vec<Vec<f64>>> {
    let panel = view.panel();
    if gamma.nrows() != panel.n_covariates() {
        return Err(Error::DimensionMismatch {
            what: "mapping matrix rows",
            expected: panel.n_covariates(),
            actual: gamma.nrows(),
        });
    }
    if gamma.ncols() != factors.k() {
        return Err(Error::DimensionMismatch {
            what: "mapping matrix columns",
            expected: factors.k(),
            actual: gamma.ncols(),
        });
    }
    let mut loadings: Vec<Option<Vec<f64>>> = vec![None; panel.n_periods()];
    view.rows()
        .iter()
        .map(|row| {
            row.periods
                .iter()
                .map(|&t| {
                    if loadings[t].is_none() {
                        let f = factors.factor(t).ok_or(Error::MissingPeriod { what: "imputation", period: t })?;
                        loadings[t] = Some((gamma * f).iter().copied().collect());
                    }
                    let g = loadings[t].as_ref().expect("filled above");
                    Ok(panel.covariates(row.unit, t).iter().zip(g).map(|(a, b)| a * b).sum())
                })
                .collect()
        })
        .collect()
}

/// Per-unit effects and their event-time average.
#[derive(Debug, Clone, PartialEq)]
pub struct AttSeries {
    pub att: Vec<f64>,
    pub effects: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

/// `effects = Y - Y0_hat` on the cells of `treated_post`; `att[e]` averages the effects of the
/// units observed `e` periods after their adoption.
pub fn att_series(treated_post: &PanelView<'_>, y0_hat: &[Vec<f64>]) -> Result<AttSeries> {
    if y0_hat.len() != treated_post.n_rows() {
        return Err(Error::DimensionMismatch {
            what: "imputed rows",
            expected: treated_post.n_rows(),
            actual: y0_hat.len(),
        });
    }
    let panel = treated_post.panel();
    let horizon = treated_post.rows().iter().map(|r| r.periods.len()).max().unwrap_or(0);
    let mut sums = vec![0.0; horizon];
    let mut counts = vec![0usize; horizon];
    let mut effects = Vec::with_capacity(y0_hat.len());
    for (row, imputed) in treated_post.rows().iter().zip(y0_hat) {
        if imputed.len() != row.periods.len() {
            return Err(Error::DimensionMismatch {
                what: "imputed periods",
                expected: row.periods.len(),
                actual: imputed.len(),
            });
        }
        let e: Vec<f64> = row.periods.iter().zip(imputed).map(|(&t, y0)| panel.outcome(row.unit, t) - y0).collect();
        for (j, v) in e.iter().enumerate() {
            sums[j] += v;
            counts[j] += 1;
        }
        effects.push(e);
    }
    let att = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    Ok(AttSeries { att, effects, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipca::objective;
    use crate::ipca::tests::{factor_panel, rng};
    use crate::normalization::rotation_matrix;
    use crate::panel::ViewRow;
    use rand_distr::{Distribution, StandardNormal};

    /// Marks the last `n_treat` units as treated from `t_pre` on and adds `effect` to them.
    fn treat(panel: &PanelData, n_treat: usize, t_pre: usize, effect: f64) -> PanelData {
        let (n, t) = (panel.n_units(), panel.n_periods());
        let mut d = vec![0.0; n * t];
        let mut y = panel.outcomes().clone();
        for i in n - n_treat..n {
            for s in t_pre..t {
                d[i * t + s] = 1.0;
                y[(i, s)] += effect;
            }
        }
        PanelData::new(
            panel.unit_ids().to_vec(),
            panel.time_ids().to_vec(),
            y,
            panel.covariate_tensor().to_vec(),
            panel.n_covariates(),
            &d,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_zero_effect_gives_zero_att() {
        let (base, _, _) = factor_panel(40, 25, 6, 2, 0.0, 31);
        let panel = treat(&base, 5, 18, 0.0);
        let fit = estimate(&panel, &FitConfig::with_k(2)).unwrap();
        assert_eq!(fit.att.len(), 7);
        assert!(fit.att.iter().all(|a| a.abs() < 1e-6), "{:?}", fit.att);
        assert!(fit.pre_fit_rmse < 1e-6);
        assert!(!fit.pre_fit_warning);
    }

    #[test]
    fn noiseless_constant_effect_is_recovered() {
        let (base, _, _) = factor_panel(40, 25, 6, 2, 0.0, 32);
        let fit = estimate(&treat(&base, 4, 20, 3.0), &FitConfig::with_k(2)).unwrap();
        assert!(fit.att.iter().all(|a| (a - 3.0).abs() < 1e-6));
    }

    #[test]
    fn att_is_mean_of_effects() {
        let (base, _, _) = factor_panel(30, 15, 4, 2, 1.0, 33);
        let fit = estimate(&treat(&base, 5, 10, 1.0), &FitConfig::with_k(2)).unwrap();
        for (t, a) in fit.att.iter().enumerate() {
            let m = fit.effects.iter().map(|e| e[t]).sum::<f64>() / 5.0;
            assert_eq!(*a, m);
        }
    }

    #[test]
    fn imputation_with_zero_mapping_is_zero() {
        let (panel, _, f) = factor_panel(3, 4, 2, 1, 1.0, 34);
        let path = FactorPath::new(f, (0..4).collect()).unwrap();
        let view = PanelView::balanced(&panel, &[0, 2], &[2, 3]);
        let y0 = impute(&DMatrix::zeros(2, 1), &path, &view).unwrap();
        assert_eq!(y0, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn imputation_scalar_hand_case() {
        let (panel, _, _) = factor_panel(2, 3, 2, 1, 1.0, 35);
        let g = DMatrix::from_column_slice(2, 1, &[0.5, -2.0]);
        let path = FactorPath::new(DMatrix::from_row_slice(1, 3, &[1.0, 3.0, -1.0]), vec![0, 1, 2]).unwrap();
        let view = PanelView::balanced(&panel, &[1], &[1]);
        let y0 = impute(&g, &path, &view).unwrap();
        let x = panel.covariates(1, 1);
        assert!((y0[0][0] - (0.5 * x[0] - 2.0 * x[1]) * 3.0).abs() < 1e-14);
    }

    #[test]
    fn imputation_agrees_with_objective_structural_component() {
        let (panel, _, _) = factor_panel(5, 6, 3, 2, 1.0, 36);
        let mut r = rng(360);
        let g = DMatrix::from_fn(3, 2, |_, _| StandardNormal.sample(&mut r));
        let path =
            FactorPath::new(DMatrix::from_fn(2, 6, |_, _| StandardNormal.sample(&mut r)), (0..6).collect()).unwrap();
        let view = PanelView::balanced(&panel, &[1, 3, 4], &[2, 4, 5]);
        let y0 = impute(&g, &path, &view).unwrap();
        // With outcomes replaced by the imputation, the objective must vanish.
        let mut y = panel.outcomes().clone();
        for (row, vals) in view.rows().iter().zip(&y0) {
            for (&t, v) in row.periods.iter().zip(vals) {
                y[(row.unit, t)] = *v;
            }
        }
        let replaced = panel.with_outcomes(y).unwrap();
        let v2 = PanelView::balanced(&replaced, &[1, 3, 4], &[2, 4, 5]);
        let params = IpcaParams::new(g, path).unwrap();
        assert!(objective(&params, &v2).unwrap() < 1e-24);
    }

    #[test]
    fn att_arithmetic() {
        let (panel, _, _) = factor_panel(2, 2, 1, 1, 1.0, 37);
        let view = PanelView::balanced(&panel, &[0, 1], &[0, 1]);
        let y = panel.outcomes();
        let y0 = vec![vec![y[(0, 0)] - 1.0, y[(0, 1)] - 3.0], vec![y[(1, 0)] - 3.0, y[(1, 1)] - 5.0]];
        let s = att_series(&view, &y0).unwrap();
        assert!((s.att[0] - 2.0).abs() < 1e-12 && (s.att[1] - 4.0).abs() < 1e-12);
        let same = att_series(&view, &[vec![y[(0, 0)], y[(0, 1)]], vec![y[(1, 0)], y[(1, 1)]]]).unwrap();
        assert_eq!(same.att, vec![0.0, 0.0]);
    }

    #[test]
    fn staggered_event_time_alignment() {
        // Units adopting at periods 5 and 7 (1-based) of T = 10.
        let (panel, _, _) = factor_panel(2, 10, 1, 1, 1.0, 38);
        let rows =
            vec![ViewRow { unit: 0, periods: (4..10).collect() }, ViewRow { unit: 1, periods: (6..10).collect() }];
        let view = PanelView::new(&panel, rows);
        let y0: Vec<Vec<f64>> = view.rows().iter().map(|r| r.periods.iter().map(|_| 0.0).collect()).collect();
        let s = att_series(&view, &y0).unwrap();
        assert_eq!(s.effects[0].len(), 6);
        assert_eq!(s.effects[1].len(), 4);
        assert_eq!(s.counts, vec![2, 2, 2, 2, 1, 1]);
        // Hand enumeration of the aligned average.
        for e in 0..6 {
            let a = panel.outcome(0, 4 + e);
            let want = if e < 4 { (a + panel.outcome(1, 6 + e)) / 2.0 } else { a };
            assert!((s.att[e] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn staggered_panel_is_estimated_per_unit() {
        let (base, _, _) = factor_panel(30, 20, 5, 2, 0.0, 39);
        let (n, t) = (30, 20);
        let mut d = vec![0.0; n * t];
        let mut y = base.outcomes().clone();
        for (i, start) in [(27usize, 12usize), (28, 14), (29, 16)] {
            for s in start..t {
                d[i * t + s] = 1.0;
                y[(i, s)] += 2.0;
            }
        }
        let panel = PanelData::new(
            base.unit_ids().to_vec(),
            base.time_ids().to_vec(),
            y,
            base.covariate_tensor().to_vec(),
            5,
            &d,
        )
        .unwrap();
        let fit = estimate(&panel, &FitConfig::with_k(2)).unwrap();
        assert_eq!(fit.pattern.kind, crate::panel::PatternKind::Staggered);
        assert_eq!(fit.att_counts, vec![3, 3, 3, 3, 2, 2, 1, 1]);
        assert!(fit.att.iter().all(|a| (a - 2.0).abs() < 1e-6));
    }

    #[test]
    fn counterfactuals_are_rotation_invariant() {
        let (base, _, _) = factor_panel(30, 15, 4, 2, 1.0, 40);
        let panel = treat(&base, 5, 10, 1.0);
        let fit = estimate(&panel, &FitConfig::with_k(2)).unwrap();
        let pattern = &fit.pattern;
        let v = split(&panel, pattern).unwrap();
        let raw = impute(&fit.gamma_treat, &fit.params_ctrl.factors, &v.treat_post).unwrap();
        for (a, b) in raw.iter().flatten().zip(fit.y0_hat.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
        let r = rotation_matrix(&fit.gamma_treat, fit.params_ctrl.factors.values()).unwrap();
        assert!((&fit.gamma_treat * r.matrix() - &fit.gamma_treat_norm).amax() < 1e-12);
    }

    #[test]
    fn treated_mapping_is_pre_period_least_squares_optimum() {
        let (base, _, _) = factor_panel(30, 15, 4, 2, 1.0, 41);
        let panel = treat(&base, 5, 10, 1.0);
        let fit = estimate(&panel, &FitConfig::with_k(2)).unwrap();
        let v = split(&panel, &fit.pattern).unwrap();
        let sse = |g: &DMatrix<f64>| {
            objective(&IpcaParams::new(g.clone(), fit.params_ctrl.factors.clone()).unwrap(), &v.treat_pre).unwrap()
        };
        let best = sse(&fit.gamma_treat);
        let mut r = rng(410);
        for _ in 0..1000 {
            let mut d = DMatrix::from_fn(4, 2, |_, _| StandardNormal.sample(&mut r));
            d *= 0.01 / crate::linalg::frobenius(&d);
            assert!(sse(&(&fit.gamma_treat + d)) >= best);
        }
    }

    #[test]
    fn estimate_is_deterministic() {
        let (base, _, _) = factor_panel(20, 12, 4, 2, 1.0, 42);
        let panel = treat(&base, 3, 8, 1.0);
        let a = estimate(&panel, &FitConfig::with_k(2)).unwrap();
        let b = estimate(&panel, &FitConfig::with_k(2)).unwrap();
        assert_eq!(a, b);
    }
}
