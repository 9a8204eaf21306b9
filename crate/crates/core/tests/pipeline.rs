//! Public-API runs through simulation, estimation, inference and tuning.

use csc_ipca_core::baselines::{fit_ife, fit_scm};
use csc_ipca_core::csc::estimate;
use csc_ipca_core::inference::{confidence_interval, conformal_pvalue, Grid, NullSpec};
use csc_ipca_core::ipca::FitConfig;
use csc_ipca_core::panel::PanelData;
use csc_ipca_core::simulation::{simulate_panel, DgpConfig, EffectPath};
use csc_ipca_core::tuning::{tune_bootstrap, tune_loo};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn small() -> DgpConfig {
    DgpConfig { n_treat: 3, n_ctrl: 20, t_pre: 12, t_post: 4, l: 5, k: 2, seed: 3, ..DgpConfig::default() }
}

#[test]
fn estimators_agree_on_shapes() {
    let sim = simulate_panel(&small()).unwrap();
    let fit = FitConfig::with_k(2);
    let ipca = estimate(&sim.panel, &fit).unwrap();
    let ife = fit_ife(&sim.panel, &fit).unwrap();
    let scm = fit_scm(&sim.panel).unwrap();
    assert_eq!(ipca.att.len(), 4);
    for fitted in [&ipca.fitted, &ife.fitted, &scm.fitted] {
        assert_eq!(fitted.shape(), (3, 16));
    }
    assert!(ipca.pre_fit_rmse.is_finite() && ipca.pre_fit_rmse > 0.0);
}

#[test]
fn band_covers_the_point_estimate() {
    let sim = simulate_panel(&small()).unwrap();
    let fit = FitConfig::with_k(2);
    let band = confidence_interval(&sim.panel, &Grid::Centered { half_width_sd: 4.0, n: 21 }, 0.9, &fit, 1.0).unwrap();
    for s in 0..4 {
        assert!(band.lower[s] <= band.upper[s]);
        if !band.degenerate[s] {
            assert!(band.lower[s] <= band.att[s] && band.att[s] <= band.upper[s], "period {s}");
        }
    }
    let p = conformal_pvalue(&sim.panel, &NullSpec { theta0: band.att.clone() }, &fit, 1.0).unwrap().p_value;
    assert!(p > 0.1, "the point estimate itself should not be rejected, p = {p}");
}

#[test]
fn tuning_stays_within_range() {
    let panel = simulate_panel(&small()).unwrap().panel;
    let fit = FitConfig::default();
    for result in [tune_bootstrap(&panel, 3, 5, &fit, 1).unwrap(), tune_loo(&panel, 3, &fit).unwrap()] {
        assert!((1..=3).contains(&result.k_best));
        assert_eq!(result.mse_by_k.len(), 3);
    }
}

/// Rebuilds the panel with the treated units listed first.
fn reorder_units(panel: &PanelData) -> PanelData {
    let n = panel.n_units();
    let order: Vec<usize> = (0..n).rev().collect();
    let (t_len, l) = (panel.n_periods(), panel.n_covariates());
    let units = order.iter().map(|&i| panel.unit_ids()[i].clone()).collect();
    let y = DMatrix::from_fn(n, t_len, |r, t| panel.outcome(order[r], t));
    let d: Vec<f64> =
        order.iter().flat_map(|&i| (0..t_len).map(move |t| f64::from(u8::from(panel.treated(i, t))))).collect();
    let mut x = Vec::with_capacity(n * t_len * l);
    for &i in &order {
        for t in 0..t_len {
            x.extend_from_slice(panel.covariates(i, t));
        }
    }
    PanelData::new(units, panel.time_ids().to_vec(), y, x, l, &d).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn att_ignores_unit_order(seed in 0u64..1000) {
        let dgp = DgpConfig { seed, effect: EffectPath::Constant { value: 1.5 }, ..small() };
        let panel = simulate_panel(&dgp).unwrap().panel;
        let fit = FitConfig::with_k(2);
        let a = estimate(&panel, &fit).unwrap().att;
        let b = estimate(&reorder_units(&panel), &fit).unwrap().att;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
}
