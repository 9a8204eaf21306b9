//! Comparison estimators: interactive fixed effects with covariates and synthetic control.
//!
//! Both impute untreated outcomes of each treated unit over its own post-treatment periods and
//! report the event-time average effect, so their output lines up with [`crate::csc::CscFit`].

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::csc::att_series;
use crate::error::{Error, Result};
use crate::ipca::FitConfig;
use crate::linalg::{relative_change, solve_symmetric};
use crate::panel::{classify_treatment, split, PanelData};

/// Interactive fixed-effects fit `Y_it = X_it beta + lambda_i' f_t + e_it` on the controls, with
/// treated loadings projected on the pre-treatment factors.
#[derive(Debug, Clone, PartialEq)]
pub struct IfeFit {
    pub beta: DVector<f64>,
    /// T x K factor path, normalized to `F'F / T = I`.
    pub factors: DMatrix<f64>,
    /// K loadings per treated unit.
    pub treated_loadings: Vec<DVector<f64>>,
    /// `X beta + F lambda_i` for every treated unit and period (N_treat x T).
    pub fitted: DMatrix<f64>,
    pub y0_hat: Vec<Vec<f64>>,
    pub effects: Vec<Vec<f64>>,
    pub att: Vec<f64>,
    pub att_counts: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// Rank-`k` principal components of `w` (rows = units, columns = periods).
///
/// Returns `(F, Lambda)` with `F` of size T x K and `F'F / T = I`.
fn principal_components(w: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = w.ncols();
    let svd = w.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let scale = libm::sqrt(t as f64);
    let f = DMatrix::from_fn(t, k, |s, j| scale * v_t[(order[j], s)]);
    let lambda = w * &f / t as f64;
    (f, lambda)
}

pub fn fit_ife(panel: &PanelData, config: &FitConfig) -> Result<IfeFit> {
    let pattern = classify_treatment(panel)?;
    let views = split(panel, &pattern)?;
    let (n_c, t, l, k) = (pattern.n_control(), panel.n_periods(), panel.n_covariates(), config.k);
    if k == 0 || k > n_c.min(t) {
        return Err(Error::InvalidConfig { field: "k", reason: alloc::format!("must lie in 1..={}", n_c.min(t)) });
    }
    let min_pre = pattern.t_pre.iter().copied().min().unwrap_or(0);
    if min_pre < k {
        return Err(Error::Underdetermined { cells: min_pre, parameters: k });
    }
    let y = views.ctrl_all.outcome_matrix().expect("control view is balanced");
    let units = &pattern.control_units;

    let mut xtx = DMatrix::zeros(l, l);
    for &i in units {
        for s in 0..t {
            let x = DVector::from_column_slice(panel.covariates(i, s));
            xtx += &x * x.transpose();
        }
    }
    let pooled = |target: &DMatrix<f64>| {
        let mut xty = DVector::zeros(l);
        for (r, &i) in units.iter().enumerate() {
            for s in 0..t {
                xty.axpy(target[(r, s)], &DVector::from_column_slice(panel.covariates(i, s)), 1.0);
            }
        }
        solve_symmetric(&xtx, &xty, config.rank_tol).x
    };
    let x_beta = |beta: &DVector<f64>| {
        DMatrix::from_fn(n_c, t, |r, s| panel.covariates(units[r], s).iter().zip(beta.iter()).map(|(a, b)| a * b).sum())
    };

    let mut beta = pooled(&y);
    let mut factors = DMatrix::zeros(t, k);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        iterations += 1;
        let (f, lambda) = principal_components(&(&y - x_beta(&beta)), k);
        let next = pooled(&(&y - &lambda * f.transpose()));
        let change = relative_change(
            &DMatrix::from_column_slice(l, 1, beta.as_slice()),
            &DMatrix::from_column_slice(l, 1, next.as_slice()),
        );
        beta = next;
        factors = f;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    let (f, _) = principal_components(&(&y - x_beta(&beta)), k);
    factors = if iterations > 0 { f } else { factors };

    let mut treated_loadings = Vec::with_capacity(pattern.n_treated());
    for (&unit, &pre) in pattern.treated_units.iter().zip(&pattern.t_pre) {
        let f_pre = factors.rows(0, pre);
        let resid = DVector::from_fn(pre, |s, _| {
            panel.outcome(unit, s) - panel.covariates(unit, s).iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>()
        });
        let gram = f_pre.transpose() * f_pre;
        let rhs = f_pre.transpose() * resid;
        treated_loadings.push(solve_symmetric(&gram, &rhs, config.rank_tol).x);
    }

    let fitted = DMatrix::from_fn(pattern.n_treated(), t, |r, s| {
        let unit = pattern.treated_units[r];
        let xb: f64 = panel.covariates(unit, s).iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        xb + factors.row(s).dot(&treated_loadings[r].transpose())
    });
    let y0_hat: Vec<Vec<f64>> = views
        .treat_post
        .rows()
        .iter()
        .enumerate()
        .map(|(r, row)| row.periods.iter().map(|&s| fitted[(r, s)]).collect())
        .collect();
    let series = att_series(&views.treat_post, &y0_hat)?;
    Ok(IfeFit {
        beta,
        factors,
        treated_loadings,
        fitted,
        y0_hat,
        effects: series.effects,
        att: series.att,
        att_counts: series.counts,
        iterations,
        converged,
    })
}

/// Synthetic control: convex weights on control units matching each treated unit's
/// pre-treatment outcome path.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmFit {
    /// One weight vector per treated unit, indexed like `pattern.control_units`.
    pub weights: Vec<Vec<f64>>,
    /// Synthetic outcome for every treated unit and period (N_treat x T).
    pub fitted: DMatrix<f64>,
    pub y0_hat: Vec<Vec<f64>>,
    pub effects: Vec<Vec<f64>>,
    pub att: Vec<f64>,
    pub att_counts: Vec<usize>,
    /// Root mean squared pre-treatment error over all treated units.
    pub pre_fit_rmse: f64,
}

/// Result of [`simplex_least_squares`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Frank-Wolfe duality gap at termination.
    pub gap: f64,
}

/// Minimizes `||a - B w||^2` over the probability simplex with pairwise Frank-Wolfe steps and
/// exact line search. Columns of `b` are the candidate donors.
pub fn simplex_least_squares(b: &DMatrix<f64>, a: &DVector<f64>, tol: f64, max_iter: usize) -> SimplexSolution {
    let n = b.ncols();
    assert!(n > 0, "at least one donor required");
    let gram = b.transpose() * b;
    let bta = b.transpose() * a;
    let scale = a.norm_squared().max(1.0);
    // Start from the best single donor.
    let start = (0..n)
        .map(|j| (j, gram[(j, j)] - 2.0 * bta[j]))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(j, _)| j)
        .unwrap_or(0);
    let mut w = DVector::zeros(n);
    w[start] = 1.0;
    let mut gw = gram.column(start).into_owned();
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        // Gradient of the objective is 2 (G w - B'a).
        let grad = &gw - &bta;
        let s = grad.imin();
        let v = (0..n).filter(|&j| w[j] > 0.0).max_by(|&x, &y| grad[x].total_cmp(&grad[y])).expect("nonempty support");
        gap = 2.0 * (grad.dot(&w) - grad[s]);
        if gap <= tol * scale || s == v {
            break;
        }
        iterations += 1;
        // Direction e_s - e_v; curvature ||B d||^2 and slope along it.
        let curvature = gram[(s, s)] - 2.0 * gram[(s, v)] + gram[(v, v)];
        let slope = grad[s] - grad[v];
        let mut step = if curvature > 0.0 { -slope / curvature } else { w[v] };
        step = step.clamp(0.0, w[v]);
        if step == 0.0 {
            break;
        }
        let drop_away = step >= w[v];
        w[s] += step;
        w[v] = if drop_away { 0.0 } else { w[v] - step };
        gw += (gram.column(s) - gram.column(v)) * step;
    }
    let total: f64 = w.iter().sum();
    SimplexSolution { weights: w.iter().map(|v| v.max(0.0) / total).collect(), iterations, gap }
}

pub fn fit_scm(panel: &PanelData) -> Result<ScmFit> {
    let pattern = classify_treatment(panel)?;
    let views = split(panel, &pattern)?;
    let donors = &pattern.control_units;
    let mut weights = Vec::with_capacity(pattern.n_treated());
    let mut sq = 0.0;
    let mut cells = 0;
    for (&unit, &pre) in pattern.treated_units.iter().zip(&pattern.t_pre) {
        let b = DMatrix::from_fn(pre, donors.len(), |s, j| panel.outcome(donors[j], s));
        let a = DVector::from_fn(pre, |s, _| panel.outcome(unit, s));
        let sol = simplex_least_squares(&b, &a, 1e-8, 10_000);
        let resid = &a - &b * DVector::from_column_slice(&sol.weights);
        sq += resid.norm_squared();
        cells += pre;
        weights.push(sol.weights);
    }
    let fitted = DMatrix::from_fn(pattern.n_treated(), panel.n_periods(), |r, s| {
        donors.iter().zip(&weights[r]).map(|(&j, w)| w * panel.outcome(j, s)).sum()
    });
    let y0_hat: Vec<Vec<f64>> = views
        .treat_post
        .rows()
        .iter()
        .enumerate()
        .map(|(r, row)| row.periods.iter().map(|&s| fitted[(r, s)]).collect())
        .collect();
    let series = att_series(&views.treat_post, &y0_hat)?;
    Ok(ScmFit {
        weights,
        fitted,
        y0_hat,
        effects: series.effects,
        att: series.att,
        att_counts: series.counts,
        pre_fit_rmse: libm::sqrt(sq / cells as f64),
    })
}
