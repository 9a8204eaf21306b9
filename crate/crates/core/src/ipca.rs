//! Alternating-least-squares estimation of the mapping matrix and the latent factor path.
//!
//! The model is `Y_it = X_it Gamma F_t' + e_it` with `Gamma` of shape L x K and one K-vector
//! `F_t` per period. With `Gamma` fixed the factors are per-period cross-sectional OLS fits;
//! with the factors fixed `vec(Gamma)` is a pooled OLS fit on the L*K regressors `F_t (x) X_it`.
//!
//! `vec(Gamma)` stacks the columns of `Gamma`, so entry `(l, k)` sits at index `k * L + l` and
//! the regressor of a cell is the Kronecker product `f_t (x) x_it`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fix_column_signs, relative_change, solve_symmetric, CompensatedSum};
use crate::panel::PanelView;

/// Estimation settings shared by every factor fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Number of latent factors.
    pub k: usize,
    /// Convergence threshold on the relative parameter change.
    pub tol: f64,
    pub max_iter: usize,
    /// Seed for randomized restarts.
    pub seed: u64,
    /// Eigenvalues below `rank_tol * largest` are dropped when solving normal equations.
    pub rank_tol: f64,
    /// Additional fits from random orthonormal mappings; the lowest objective wins.
    pub n_restarts: usize,
    /// Pre-treatment RMSE above this many control-outcome standard deviations raises a warning.
    pub pre_fit_warn_sd: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { k: 1, tol: 1e-6, max_iter: 1000, seed: 0, rank_tol: 1e-10, n_restarts: 0, pre_fit_warn_sd: 1.0 }
    }
}

impl FitConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    /// Checks the settings against the dimensions of the data they will be applied to.
    pub fn validate(&self, n_covariates: usize, n_periods: usize, n_units: usize) -> Result<()> {
        let bad = |field, reason: alloc::string::String| Err(Error::InvalidConfig { field, reason });
        if self.k == 0 {
            return bad("k", "number of factors must be at least 1".into());
        }
        let cap = n_covariates.min(n_periods).min(n_units);
        if self.k > cap {
            return bad(
                "k",
                alloc::format!("{} factors exceed min(L={n_covariates}, T={n_periods}, N={n_units})", self.k),
            );
        }
        if !(self.tol > 0.0) {
            return bad("tol", "must be positive".into());
        }
        if self.max_iter == 0 {
            return bad("max_iter", "must be at least 1".into());
        }
        if !(self.rank_tol >= 0.0 && self.rank_tol < 1.0) {
            return bad("rank_tol", "must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Factor values for a set of periods: column `j` is `F_t` for `periods[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPath {
    values: DMatrix<f64>,
    periods: Vec<usize>,
}

impl FactorPath {
    /// `periods` must be strictly increasing and match the number of columns.
    pub fn new(values: DMatrix<f64>, periods: Vec<usize>) -> Result<Self> {
        if values.ncols() != periods.len() {
            return Err(Error::DimensionMismatch {
                what: "factor path columns",
                expected: periods.len(),
                actual: values.ncols(),
            });
        }
        if periods.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig {
                field: "periods",
                reason: "factor periods must be strictly increasing".into(),
            });
        }
        Ok(Self { values, periods })
    }

    /// K x P matrix of factor values.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn periods(&self) -> &[usize] {
        &self.periods
    }

    pub fn k(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    pub fn column_index(&self, period: usize) -> Option<usize> {
        self.periods.binary_search(&period).ok()
    }

    pub fn factor(&self, period: usize) -> Option<DVector<f64>> {
        self.column_index(period).map(|j| self.values.column(j).into_owned())
    }

    /// Same periods, values replaced.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, self.periods.clone())
    }
}

/// Mapping matrix together with the factor path it was fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct IpcaParams {
    /// L x K mapping from covariates to factor loadings.
    pub gamma: DMatrix<f64>,
    pub factors: FactorPath,
}

impl IpcaParams {
    pub fn new(gamma: DMatrix<f64>, factors: FactorPath) -> Result<Self> {
        if gamma.ncols() != factors.k() {
            return Err(Error::DimensionMismatch {
                what: "mapping matrix columns",
                expected: factors.k(),
                actual: gamma.ncols(),
            });
        }
        Ok(Self { gamma, factors })
    }

    pub fn k(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.gamma.nrows()
    }

    /// Structural component `x' Gamma F_t'` for one cell.
    pub fn predict(&self, x: &[f64], period: usize) -> Option<f64> {
        let f = self.factors.factor(period)?;
        let loading = &self.gamma * f;
        Some(x.iter().zip(loading.iter()).map(|(a, b)| a * b).sum())
    }
}

/// Convergence record of one ALS run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    /// Objective after each full (mapping, factors) sweep.
    pub objective_path: Vec<f64>,
    pub converged: bool,
    pub final_rel_change: f64,
    /// Number of normal-equation solves that fell back to the pseudo-inverse.
    pub pseudo_inverse_steps: usize,
    /// Restart whose fit was kept; 0 is the PCA-seeded run.
    pub selected_restart: usize,
}

/// Per-period sufficient statistics `X_t'X_t`, `X_t'Y_t` of a view.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub periods: Vec<usize>,
    pub xtx: Vec<DMatrix<f64>>,
    pub xty: Vec<DVector<f64>>,
}

impl Moments {
    pub fn of(view: &PanelView<'_>) -> Self {
        let panel = view.panel();
        let l = panel.n_covariates();
        let periods = view.periods();
        let mut slot = vec![usize::MAX; panel.n_periods()];
        for (j, &p) in periods.iter().enumerate() {
            slot[p] = j;
        }
        let mut xtx = vec![DMatrix::zeros(l, l); periods.len()];
        let mut xty = vec![DVector::zeros(l); periods.len()];
        for (unit, p) in view.cells() {
            let j = slot[p];
            let x = panel.covariates(unit, p);
            let y = panel.outcome(unit, p);
            for a in 0..l {
                xty[j][a] += x[a] * y;
                for b in 0..=a {
                    xtx[j][(a, b)] += x[a] * x[b];
                }
            }
        }
        for m in xtx.iter_mut() {
            m.fill_upper_triangle_with_lower_triangle();
        }
        Self { periods, xtx, xty }
    }
}

/// Result of a factor update for one period.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorUpdate {
    pub factor: DVector<f64>,
    pub pseudo_inverse: bool,
}

/// Result of a mapping-matrix update.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaUpdate {
    pub gamma: DMatrix<f64>,
    pub pseudo_inverse: bool,
    pub rank: usize,
}

/// Sum of squared residuals `sum (Y_it - X_it Gamma F_t')^2` over the cells of `view`.
pub fn objective(params: &IpcaParams, view: &PanelView<'_>) -> Result<f64> {
    let panel = view.panel();
    if params.n_covariates() != panel.n_covariates() {
        return Err(Error::DimensionMismatch {
            what: "mapping matrix rows",
            expected: panel.n_covariates(),
            actual: params.n_covariates(),
        });
    }
    let loadings = loading_cache(params, panel.n_periods());
    let mut acc = CompensatedSum::default();
    for (unit, p) in view.cells() {
        let g = loadings[p].as_ref().ok_or(Error::MissingPeriod { what: "objective", period: p })?;
        let fit: f64 = panel.covariates(unit, p).iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let r = panel.outcome(unit, p) - fit;
        acc.add(r * r);
    }
    Ok(acc.value())
}

/// `Gamma F_t` for every period covered by the factor path.
fn loading_cache(params: &IpcaParams, n_periods: usize) -> Vec<Option<DVector<f64>>> {
    let mut out = vec![None; n_periods];
    for (j, &p) in params.factors.periods().iter().enumerate() {
        if p < n_periods {
            out[p] = Some(&params.gamma * params.factors.values().column(j));
        }
    }
    out
}

/// Initial factor path from the first `k` principal components of the outcome matrix.
///
/// Row `j` of the result is `sigma_j v_j'` where `v_j` is the j-th right singular vector; each
/// row is signed so that its largest-magnitude entry is positive.
pub fn init_factors_pca(y: &DMatrix<f64>, k: usize, rank_tol: f64) -> Result<DMatrix<f64>> {
    if y.is_empty() {
        return Err(Error::Empty("outcome matrix for PCA initialization"));
    }
    if k == 0 || k > y.nrows().min(y.ncols()) {
        return Err(Error::RankDeficient { what: "outcome matrix", rank: y.nrows().min(y.ncols()), required: k });
    }
    let svd = y.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_max = svd.singular_values[order[0]];
    let rank = order.iter().filter(|&&j| s_max > 0.0 && svd.singular_values[j] > rank_tol * s_max).count();
    if rank < k {
        return Err(Error::RankDeficient { what: "outcome matrix", rank, required: k });
    }
    // Build as P x K so the sign convention is a column operation.
    let mut f_t = DMatrix::from_fn(y.ncols(), k, |t, j| svd.singular_values[order[j]] * v_t[(order[j], t)]);
    fix_column_signs(&mut f_t);
    Ok(f_t.transpose())
}

/// Cross-sectional OLS for one period: `F_t = (Gamma'X_t'X_t Gamma)^+ Gamma'X_t'Y_t`.
pub fn update_factors(
    gamma: &DMatrix<f64>,
    x_t: &DMatrix<f64>,
    y_t: &DVector<f64>,
    rank_tol: f64,
) -> Result<FactorUpdate> {
    if x_t.ncols() != gamma.nrows() {
        return Err(Error::DimensionMismatch { what: "covariate slice", expected: gamma.nrows(), actual: x_t.ncols() });
    }
    if x_t.nrows() != y_t.len() {
        return Err(Error::DimensionMismatch { what: "outcome slice", expected: x_t.nrows(), actual: y_t.len() });
    }
    let xtx = x_t.transpose() * x_t;
    let xty = x_t.transpose() * y_t;
    factor_from_moments(gamma, &xtx, &xty, rank_tol, 0)
}

pub(crate) fn factor_from_moments(
    gamma: &DMatrix<f64>,
    xtx: &DMatrix<f64>,
    xty: &DVector<f64>,
    rank_tol: f64,
    period: usize,
) -> Result<FactorUpdate> {
    let a = gamma.transpose() * xtx * gamma;
    let b = gamma.transpose() * xty;
    if a.iter().all(|v| *v == 0.0) {
        return Err(Error::DegeneratePeriod { period });
    }
    let s = solve_symmetric(&a, &b, rank_tol);
    Ok(FactorUpdate { factor: s.x, pseudo_inverse: s.pseudo_inverse })
}

/// Pooled OLS of the view's outcomes on the `L*K` regressors `F_t (x) X_it`.
///
/// Every period of the view must be covered by `factors`.
pub fn update_gamma(factors: &FactorPath, view: &PanelView<'_>, rank_tol: f64) -> Result<GammaUpdate> {
    let moments = Moments::of(view);
    gamma_from_moments(&moments, factors, rank_tol)
}

pub(crate) fn gamma_from_moments(moments: &Moments, factors: &FactorPath, rank_tol: f64) -> Result<GammaUpdate> {
    let k = factors.k();
    let l = moments.xty.first().map(|v| v.len()).ok_or(Error::Empty("view for mapping update"))?;
    let lk = l * k;
    let mut a = DMatrix::<f64>::zeros(lk, lk);
    let mut b = DVector::<f64>::zeros(lk);
    for (j, &p) in moments.periods.iter().enumerate() {
        let c = factors.column_index(p).ok_or(Error::MissingPeriod { what: "mapping update", period: p })?;
        let f = factors.values().column(c);
        let xtx = &moments.xtx[j];
        let xty = &moments.xty[j];
        for r in 0..k {
            for q in 0..k {
                let w = f[r] * f[q];
                if w == 0.0 {
                    continue;
                }
                for c in 0..l {
                    for rr in 0..l {
                        a[(r * l + rr, q * l + c)] += w * xtx[(rr, c)];
                    }
                }
            }
            let mut seg = b.rows_mut(r * l, l);
            seg.axpy(f[r], xty, 1.0);
        }
    }
    let s = solve_symmetric(&a, &b, rank_tol);
    Ok(GammaUpdate {
        gamma: DMatrix::from_column_slice(l, k, s.x.as_slice()),
        pseudo_inverse: s.pseudo_inverse,
        rank: s.rank,
    })
}

fn factors_given_gamma(
    moments: &Moments,
    gamma: &DMatrix<f64>,
    rank_tol: f64,
    pinv_steps: &mut usize,
) -> Result<DMatrix<f64>> {
    let mut f = DMatrix::zeros(gamma.ncols(), moments.periods.len());
    for (j, &p) in moments.periods.iter().enumerate() {
        let u = factor_from_moments(gamma, &moments.xtx[j], &moments.xty[j], rank_tol, p)?;
        *pinv_steps += usize::from(u.pseudo_inverse);
        f.set_column(j, &u.factor);
    }
    Ok(f)
}

/// Fits `(Gamma, F)` on a balanced view by alternating least squares.
///
/// Starts from the PCA factors of the view's outcome matrix and alternates mapping and factor
/// updates until the larger of the two relative Frobenius changes drops below `config.tol`.
/// Hitting `max_iter` is not an error: the last iterate is returned with `converged = false`.
pub fn fit_als(view: &PanelView<'_>, config: &FitConfig) -> Result<(IpcaParams, FitDiagnostics)> {
    let periods = view
        .balanced_periods()
        .ok_or(Error::UnsupportedPattern("alternating least squares needs a balanced view"))?
        .to_vec();
    let panel = view.panel();
    config.validate(panel.n_covariates(), periods.len(), view.n_rows())?;
    let moments = Moments::of(view);
    let y = view.outcome_matrix().expect("balanced view");

    let f0 = init_factors_pca(&y, config.k, config.rank_tol)?;
    let mut best = run_als(view, &moments, &periods, f0, config)?;

    if config.n_restarts > 0 {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        for restart in 1..=config.n_restarts {
            let gamma0 = random_orthonormal(panel.n_covariates(), config.k, &mut rng);
            let mut pinv = 0;
            let f0 = factors_given_gamma(&moments, &gamma0, config.rank_tol, &mut pinv)?;
            let (params, mut diag) = run_als(view, &moments, &periods, f0, config)?;
            diag.selected_restart = restart;
            if diag.objective_path.last() < best.1.objective_path.last() {
                best = (params, diag);
            }
        }
    }
    Ok(best)
}

fn run_als(
    view: &PanelView<'_>,
    moments: &Moments,
    periods: &[usize],
    f0: DMatrix<f64>,
    config: &FitConfig,
) -> Result<(IpcaParams, FitDiagnostics)> {
    let mut path = FactorPath::new(f0, periods.to_vec())?;
    let mut gamma_prev: Option<DMatrix<f64>> = None;
    let mut objective_path = Vec::new();
    let mut pinv_steps = 0;
    let mut rel = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut gamma = DMatrix::zeros(view.panel().n_covariates(), config.k);

    while iterations < config.max_iter {
        iterations += 1;
        let g = gamma_from_moments(moments, &path, config.rank_tol)?;
        pinv_steps += usize::from(g.pseudo_inverse);
        gamma = g.gamma;
        let f_new = factors_given_gamma(moments, &gamma, config.rank_tol, &mut pinv_steps)?;

        let rel_f = relative_change(path.values(), &f_new);
        let rel_g = gamma_prev.as_ref().map_or(f64::INFINITY, |old| relative_change(old, &gamma));
        rel = rel_f.max(rel_g);

        path = path.with_values(f_new)?;
        let params = IpcaParams { gamma: gamma.clone(), factors: path.clone() };
        objective_path.push(objective(&params, view)?);
        gamma_prev = Some(gamma.clone());
        if rel < config.tol {
            converged = true;
            break;
        }
    }

    let diagnostics = FitDiagnostics {
        iterations,
        objective_path,
        converged,
        final_rel_change: rel,
        pseudo_inverse_steps: pinv_steps,
        selected_restart: 0,
    };
    Ok((IpcaParams { gamma, factors: path }, diagnostics))
}

fn random_orthonormal(l: usize, k: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(l, k, |_, _| StandardNormal.sample(rng));
    m.qr().q()
}

/// Refits the mapping matrix on `view` with the factor path held fixed.
///
/// Used on the treated units' pre-treatment cells; fails when there are fewer cells than the
/// `L*K` parameters being estimated.
pub fn fit_gamma_given_factors(view: &PanelView<'_>, factors: &FactorPath, rank_tol: f64) -> Result<GammaUpdate> {
    let parameters = view.panel().n_covariates() * factors.k();
    let cells = view.n_cells();
    if cells < parameters {
        return Err(Error::Underdetermined { cells, parameters });
    }
    for p in view.periods() {
        if factors.column_index(p).is_none() {
            return Err(Error::MissingPeriod { what: "mapping refit", period: p });
        }
    }
    update_gamma(factors, view, rank_tol)
}
