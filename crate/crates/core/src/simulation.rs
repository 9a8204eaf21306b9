//! Simulated panels with VAR(1) covariates and factors, and the Monte Carlo harness that
//! compares estimators on them.
//!
//! The outcome is
//! `Y_it = D_it delta_it + X_it beta + X_it Gamma F_t' + alpha_i + xi_t + eps_it`
//! where covariates follow a unit-specific stationary VAR(1) with a group drift (treated units
//! drift, controls do not), factors follow their own VAR(1), and the treatment effect ramps
//! `1, 2, ..., T_post` plus unit-level standard-normal noise.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_ife, fit_scm};
use crate::csc::estimate;
use crate::error::{Error, Result};
use crate::ipca::FitConfig;
use crate::panel::PanelData;

/// Shape of the average treatment-effect path over post-treatment periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EffectPath {
    /// `1, 2, ..., T_post`.
    Ramp,
    Constant {
        value: f64,
    },
    /// No effect: treated units are flagged but their outcomes are untouched.
    None,
}

impl EffectPath {
    pub fn value(&self, post_index: usize) -> f64 {
        match self {
            EffectPath::Ramp => (post_index + 1) as f64,
            EffectPath::Constant { value } => *value,
            EffectPath::None => 0.0,
        }
    }
}

/// Every knob of the simulated design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub n_treat: usize,
    pub n_ctrl: usize,
    pub t_pre: usize,
    pub t_post: usize,
    /// Total number of covariates driving the outcome.
    pub l: usize,
    /// Number of latent factors.
    pub k: usize,
    /// Fraction of the covariates exposed to the estimators.
    pub alpha_observed: f64,
    pub drift_treated: f64,
    pub drift_ctrl: f64,
    pub gamma_range: (f64, f64),
    pub beta_range: (f64, f64),
    /// Range of the unit and time fixed effects.
    pub fe_range: (f64, f64),
    /// Spectral radius every VAR coefficient matrix is rescaled to.
    pub var_spectral_radius: f64,
    pub burn_in: usize,
    /// Standard deviation of the idiosyncratic outcome error.
    pub noise_sd: f64,
    pub effect: EffectPath,
    /// Standard deviation of the unit-level deviation from the average effect.
    pub effect_sd: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_treat: 5,
            n_ctrl: 45,
            t_pre: 20,
            t_post: 10,
            l: 10,
            k: 3,
            alpha_observed: 1.0,
            drift_treated: 2.0,
            drift_ctrl: 0.0,
            gamma_range: (-0.1, 0.1),
            beta_range: (0.0, 1.0),
            fe_range: (0.0, 1.0),
            var_spectral_radius: 0.6,
            burn_in: 50,
            noise_sd: 1.0,
            effect: EffectPath::Ramp,
            effect_sd: 1.0,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| Err(Error::InvalidConfig { field, reason: reason.to_string() });
        if !(self.alpha_observed > 0.0 && self.alpha_observed <= 1.0) {
            return bad("alpha_observed", "must lie in (0, 1]");
        }
        if !(self.var_spectral_radius >= 0.0 && self.var_spectral_radius < 1.0) {
            return bad("var_spectral_radius", "must lie in [0, 1)");
        }
        if self.k == 0 || self.k > self.l {
            return bad("k", "must satisfy 1 <= k <= l");
        }
        if self.n_treat == 0 {
            return bad("n_treat", "must be at least 1");
        }
        if self.n_ctrl == 0 {
            return bad("n_ctrl", "must be at least 1");
        }
        if self.t_pre == 0 {
            return bad("t_pre", "must be at least 1");
        }
        if self.t_post == 0 {
            return bad("t_post", "must be at least 1");
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd", "must be nonnegative");
        }
        if !(self.effect_sd >= 0.0) {
            return bad("effect_sd", "must be nonnegative");
        }
        for (field, (lo, hi)) in
            [("gamma_range", self.gamma_range), ("beta_range", self.beta_range), ("fe_range", self.fe_range)]
        {
            if !(lo <= hi) {
                return bad(field, "lower bound exceeds upper bound");
            }
        }
        Ok(())
    }

    /// Number of covariates exposed to the estimators, `ceil(alpha * L)`.
    pub fn observed_covariates(&self) -> usize {
        let raw = self.alpha_observed * self.l as f64;
        (libm::ceil(raw - 1e-9) as usize).clamp(1, self.l)
    }

    pub fn n_units(&self) -> usize {
        self.n_treat + self.n_ctrl
    }

    pub fn n_periods(&self) -> usize {
        self.t_pre + self.t_post
    }
}

/// One simulated VAR(1) path and the coefficient matrix that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct VarDraw {
    pub coef: DMatrix<f64>,
    /// `len x dim`, one row per period.
    pub series: DMatrix<f64>,
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| libm::hypot(z.re, z.im)).fold(0.0, f64::max)
}

/// Draws `x_t = drift + A x_{t-1} + nu_t` with `nu_t` standard normal.
///
/// `A` has i.i.d. standard-normal entries rescaled to spectral radius `radius`; the path starts
/// at zero and the first `burn_in` periods are discarded.
pub fn draw_var1<R: Rng + ?Sized>(
    dim: usize,
    drift: f64,
    radius: f64,
    len: usize,
    burn_in: usize,
    rng: &mut R,
) -> VarDraw {
    assert!((0.0..1.0).contains(&radius), "VAR spectral radius must lie in [0, 1)");
    let mut coef = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let rho = spectral_radius(&coef);
    if radius == 0.0 || rho == 0.0 {
        coef.fill(0.0);
    } else {
        coef *= radius / rho;
    }
    let series = simulate_var1(&coef, drift, len, burn_in, rng);
    VarDraw { coef, series }
}

/// Simulates `x_t = drift + A x_{t-1} + nu_t` for a given `A`, starting at zero and discarding
/// the first `burn_in` periods. Returns `len x dim`.
pub fn simulate_var1<R: Rng + ?Sized>(
    coef: &DMatrix<f64>,
    drift: f64,
    len: usize,
    burn_in: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let dim = coef.nrows();
    let mut state = DVector::<f64>::zeros(dim);
    let mut series = DMatrix::zeros(len, dim);
    for step in 0..burn_in + len {
        let shock = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        state = DVector::from_element(dim, drift) + coef * &state + shock;
        if step >= burn_in {
            series.set_row(step - burn_in, &state.transpose());
        }
    }
    series
}

/// Latent pieces of a simulated panel, kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraw {
    /// Full covariate tensor `(unit, period, covariate)` with all `L` covariates.
    pub covariates: Vec<f64>,
    /// K x T factor path.
    pub factors: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub unit_effects: Vec<f64>,
    pub time_effects: Vec<f64>,
    /// Per-unit covariate VAR coefficient matrices.
    pub covariate_coefs: Vec<DMatrix<f64>>,
    pub factor_coef: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    /// Observed data: controls first, then treated units; only the exposed covariates.
    pub panel: PanelData,
    /// Average treatment effect over treated units per post-treatment period.
    pub true_att: Vec<f64>,
    /// `delta_it` for every treated unit (rows) and post-treatment period (columns).
    pub true_effects: DMatrix<f64>,
    pub latent: LatentDraw,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Simulates a panel with the configured seed.
pub fn simulate_panel(config: &DgpConfig) -> Result<SimulatedPanel> {
    simulate_panel_with_rng(config, &mut ChaCha20Rng::seed_from_u64(config.seed))
}

pub fn simulate_panel_with_rng<R: Rng + ?Sized>(config: &DgpConfig, rng: &mut R) -> Result<SimulatedPanel> {
    config.validate()?;
    let (n, t, l, k) = (config.n_units(), config.n_periods(), config.l, config.k);
    let radius = config.var_spectral_radius;

    let beta = DVector::from_fn(l, |_, _| uniform(rng, config.beta_range));
    let gamma = DMatrix::from_fn(l, k, |_, _| uniform(rng, config.gamma_range));
    let unit_effects: Vec<f64> = (0..n).map(|_| uniform(rng, config.fe_range)).collect();
    let time_effects: Vec<f64> = (0..t).map(|_| uniform(rng, config.fe_range)).collect();
    let factor_draw = draw_var1(k, 0.0, radius, t, config.burn_in, rng);
    let factors = factor_draw.series.transpose();

    let mut covariates = vec![0.0; n * t * l];
    let mut covariate_coefs = Vec::with_capacity(n);
    for i in 0..n {
        let drift = if i < config.n_ctrl { config.drift_ctrl } else { config.drift_treated };
        let draw = draw_var1(l, drift, radius, t, config.burn_in, rng);
        for s in 0..t {
            for j in 0..l {
                covariates[(i * t + s) * l + j] = draw.series[(s, j)];
            }
        }
        covariate_coefs.push(draw.coef);
    }

    let mut true_effects = DMatrix::zeros(config.n_treat, config.t_post);
    for r in 0..config.n_treat {
        for s in 0..config.t_post {
            true_effects[(r, s)] = match config.effect {
                EffectPath::None => 0.0,
                path => {
                    let e: f64 = StandardNormal.sample(rng);
                    path.value(s) + config.effect_sd * e
                }
            };
        }
    }
    let true_att = (0..config.t_post).map(|s| true_effects.column(s).sum() / config.n_treat as f64).collect();

    let loadings: Vec<DVector<f64>> = (0..t).map(|s| &gamma * factors.column(s)).collect();
    let mut y = DMatrix::zeros(n, t);
    let mut d = vec![0.0; n * t];
    for i in 0..n {
        for s in 0..t {
            let x = &covariates[(i * t + s) * l..(i * t + s + 1) * l];
            let linear: f64 = x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let structural: f64 = x.iter().zip(loadings[s].iter()).map(|(a, b)| a * b).sum();
            let eps: f64 = StandardNormal.sample(rng);
            let mut v = linear + structural + unit_effects[i] + time_effects[s] + config.noise_sd * eps;
            if i >= config.n_ctrl && s >= config.t_pre {
                d[i * t + s] = 1.0;
                v += true_effects[(i - config.n_ctrl, s - config.t_pre)];
            }
            y[(i, s)] = v;
        }
    }

    let unit_ids = (0..n)
        .map(|i| if i < config.n_ctrl { format!("c{:03}", i + 1) } else { format!("t{:03}", i - config.n_ctrl + 1) })
        .collect();
    let time_ids = (1..=t).map(|s| s.to_string()).collect();
    let full = PanelData::new(unit_ids, time_ids, y, covariates.clone(), l, &d)?;
    let observed = config.observed_covariates();
    let panel = if observed == l { full } else { full.with_leading_covariates(observed)? };

    Ok(SimulatedPanel {
        panel,
        true_att,
        true_effects,
        latent: LatentDraw {
            covariates,
            factors,
            gamma,
            beta,
            unit_effects,
            time_effects,
            covariate_coefs,
            factor_coef: factor_draw.coef,
        },
    })
}

/// Estimators the harness can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ipca,
    Ife,
    Scm,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Ipca => "CSC-IPCA",
            EstimatorKind::Ife => "CSC-IFE",
            EstimatorKind::Scm => "SCM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ipca" | "csc-ipca" => Some(Self::Ipca),
            "ife" | "csc-ife" => Some(Self::Ife),
            "scm" => Some(Self::Scm),
            _ => None,
        }
    }
}

/// A Monte Carlo study of one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub dgp: DgpConfig,
    pub estimators: Vec<EstimatorKind>,
    pub n_reps: usize,
    /// Number of factors used by the factor estimators; the DGP's `k` when absent.
    pub k: Option<usize>,
    pub fit: FitConfig,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            estimators: vec![EstimatorKind::Ipca],
            n_reps: 100,
            k: None,
            fit: FitConfig::default(),
        }
    }
}

impl McConfig {
    pub fn fit_config(&self) -> FitConfig {
        FitConfig { k: self.k.unwrap_or(self.dgp.k), ..self.fit.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.n_reps == 0 {
            return Err(Error::InvalidConfig { field: "n_reps", reason: "must be at least 1".into() });
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig { field: "estimators", reason: "at least one estimator required".into() });
        }
        Ok(())
    }
}

/// Independent RNG stream for replication `rep` of a study seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Outcome of one replication: the realized effect path and every estimator's ATT path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: usize,
    pub true_att: Vec<f64>,
    pub estimates: Vec<(EstimatorKind, core::result::Result<Vec<f64>, String>)>,
}

/// Simulates replication `rep` and runs every configured estimator on it.
pub fn run_replication(config: &McConfig, rep: usize) -> Result<Replication> {
    let mut rng = replication_rng(config.dgp.seed, rep as u64);
    let sim = simulate_panel_with_rng(&config.dgp, &mut rng)?;
    let fit = config.fit_config();
    let estimates = config
        .estimators
        .iter()
        .map(|&kind| {
            let att = match kind {
                EstimatorKind::Ipca => estimate(&sim.panel, &fit).map(|f| f.att),
                EstimatorKind::Ife => fit_ife(&sim.panel, &fit).map(|f| f.att),
                EstimatorKind::Scm => fit_scm(&sim.panel).map(|f| f.att),
            };
            (kind, att.map_err(|e| e.to_string()))
        })
        .collect();
    Ok(Replication { rep, true_att: sim.true_att, estimates })
}

/// Error metrics of one estimator, pooled over replications and post-treatment periods.
///
/// `bias` is the mean of `ATT_hat - ATT`. `rmse` is computed per replication as the root mean
/// square error over post-treatment periods and then averaged over replications. `std` is the
/// across-replication standard deviation of `ATT_hat`, pooled over periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: EstimatorKind,
    pub bias: f64,
    pub rmse: f64,
    pub std: f64,
    pub bias_by_period: Vec<f64>,
    pub rmse_by_period: Vec<f64>,
    pub std_by_period: Vec<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    /// First failure message, if any replication failed.
    pub first_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: McConfig,
    pub n_reps: usize,
    pub estimators: Vec<EstimatorReport>,
}

impl McReport {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorReport> {
        self.estimators.iter().find(|r| r.estimator == kind)
    }
}

/// Reduces replications to a report. The result does not depend on the order of `reps`.
pub fn aggregate(config: &McConfig, reps: &[Replication]) -> McReport {
    let mut sorted: Vec<&Replication> = reps.iter().collect();
    sorted.sort_by_key(|r| r.rep);
    let t_post = config.dgp.t_post;
    let estimators = config
        .estimators
        .iter()
        .map(|&kind| {
            let mut errors: Vec<Vec<f64>> = Vec::new();
            let mut estimates: Vec<Vec<f64>> = Vec::new();
            let mut n_failed = 0;
            let mut first_error = None;
            for rep in &sorted {
                match rep.estimates.iter().find(|(k, _)| *k == kind).map(|(_, r)| r) {
                    Some(Ok(att)) if att.len() == t_post => {
                        errors.push(att.iter().zip(&rep.true_att).map(|(a, b)| a - b).collect());
                        estimates.push(att.clone());
                    }
                    Some(Err(e)) => {
                        n_failed += 1;
                        first_error.get_or_insert_with(|| e.clone());
                    }
                    _ => n_failed += 1,
                }
            }
            summarize(kind, &errors, &estimates, n_failed, first_error, t_post)
        })
        .collect();
    McReport { config: config.clone(), n_reps: reps.len(), estimators }
}

fn summarize(
    kind: EstimatorKind,
    errors: &[Vec<f64>],
    estimates: &[Vec<f64>],
    n_failed: usize,
    first_error: Option<String>,
    t_post: usize,
) -> EstimatorReport {
    let n = errors.len() as f64;
    let col = |m: &[Vec<f64>], t: usize| m.iter().map(|r| r[t]).collect::<Vec<_>>();
    let mut bias_by_period = Vec::with_capacity(t_post);
    let mut rmse_by_period = Vec::with_capacity(t_post);
    let mut std_by_period = Vec::with_capacity(t_post);
    let mut var_pool = 0.0;
    for t in 0..t_post {
        let e = col(errors, t);
        let a = col(estimates, t);
        bias_by_period.push(e.iter().sum::<f64>() / n);
        rmse_by_period.push(libm::sqrt(e.iter().map(|v| v * v).sum::<f64>() / n));
        let sd = crate::linalg::std_dev(&a);
        var_pool += sd * sd;
        std_by_period.push(sd);
    }
    let cells = n * t_post as f64;
    let bias = errors.iter().flatten().sum::<f64>() / cells;
    let rmse = errors.iter().map(|e| libm::sqrt(e.iter().map(|v| v * v).sum::<f64>() / t_post as f64)).sum::<f64>() / n;
    EstimatorReport {
        estimator: kind,
        bias,
        rmse,
        std: libm::sqrt(var_pool / t_post as f64),
        bias_by_period,
        rmse_by_period,
        std_by_period,
        n_ok: errors.len(),
        n_failed,
        first_error,
    }
}

/// Sequential Monte Carlo study.
pub fn monte_carlo(config: &McConfig) -> Result<McReport> {
    config.validate()?;
    let reps = (0..config.n_reps).map(|r| run_replication(config, r)).collect::<Result<Vec<_>>>()?;
    Ok(aggregate(config, &reps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipca::{fit_als, FitConfig};
    use crate::panel::PanelView;

    #[test]
    fn zero_radius_gives_white_noise_around_drift() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let d = draw_var1(3, 2.0, 0.0, 4000, 50, &mut rng);
        assert!(d.coef.iter().all(|v| *v == 0.0));
        for j in 0..3 {
            let m = d.series.column(j).mean();
            assert!((m - 2.0).abs() < 0.1, "{m}");
        }
    }

    #[test]
    fn long_run_mean_matches_stationary_mean() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let d = draw_var1(3, 2.0, 0.6, 200_000, 50, &mut rng);
        // Analytic stationary mean (I - A)^{-1} mu.
        let mu = DVector::from_element(3, 2.0);
        let target = (DMatrix::identity(3, 3) - &d.coef).try_inverse().unwrap() * mu;
        for j in 0..3 {
            let m = d.series.column(j).mean();
            assert!((m - target[j]).abs() < 0.05 * target[j].abs().max(1.0), "{m} vs {}", target[j]);
        }
        assert!((spectral_radius(&d.coef) - 0.6).abs() < 1e-9);
    }

    #[test]
    fn var_draws_are_seeded() {
        let draw = |s| draw_var1(2, 0.0, 0.6, 10, 5, &mut ChaCha20Rng::seed_from_u64(s));
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn every_drawn_coefficient_is_stationary() {
        let sim = simulate_panel(&DgpConfig { seed: 5, ..DgpConfig::default() }).unwrap();
        for a in sim.latent.covariate_coefs.iter().chain([&sim.latent.factor_coef]) {
            assert!(spectral_radius(a) < 1.0);
        }
    }

    #[test]
    fn structural_only_design_is_fit_exactly() {
        let cfg = DgpConfig {
            noise_sd: 0.0,
            fe_range: (0.0, 0.0),
            beta_range: (0.0, 0.0),
            effect: EffectPath::None,
            seed: 6,
            ..DgpConfig::default()
        };
        let sim = simulate_panel(&cfg).unwrap();
        let units: Vec<usize> = (0..cfg.n_ctrl).collect();
        let periods: Vec<usize> = (0..cfg.n_periods()).collect();
        let view = PanelView::balanced(&sim.panel, &units, &periods);
        let (_, diag) = fit_als(&view, &FitConfig::with_k(3)).unwrap();
        let tss: f64 = view.cells().map(|(i, t)| sim.panel.outcome(i, t).powi(2)).sum();
        assert!(*diag.objective_path.last().unwrap() < 1e-8 * tss);
    }

    #[test]
    fn default_design_matches_figure_shape() {
        let cfg = DgpConfig { seed: 7, ..DgpConfig::default() };
        let sim = simulate_panel(&cfg).unwrap();
        assert_eq!(sim.panel.n_units(), 50);
        assert_eq!(sim.panel.n_periods(), 30);
        assert_eq!(sim.panel.n_covariates(), 10);
        let y = sim.panel.outcomes();
        let mean = |rows: core::ops::Range<usize>| {
            let n = rows.len() as f64 * 20.0;
            rows.flat_map(|i| (0..20).map(move |t| (i, t))).map(|(i, t)| y[(i, t)]).sum::<f64>() / n
        };
        assert!(mean(45..50) > mean(0..45));
    }

    #[test]
    fn ramp_effect_expectation() {
        // Averaged over many treated units the realized path approaches 1..T_post.
        let cfg =
            DgpConfig { n_treat: 4000, n_ctrl: 2, t_pre: 2, t_post: 4, l: 2, k: 1, seed: 8, ..DgpConfig::default() };
        let sim = simulate_panel(&cfg).unwrap();
        for (s, a) in sim.true_att.iter().enumerate() {
            assert!((a - (s + 1) as f64).abs() < 0.06, "{a}");
        }
        for s in 0..4 {
            let m = sim.true_effects.column(s).mean();
            assert!((sim.true_att[s] - m).abs() < 1e-12);
        }
    }

    #[test]
    fn exposed_covariate_count() {
        let cfg = |alpha| DgpConfig { l: 9, alpha_observed: alpha, ..DgpConfig::default() };
        assert_eq!(cfg(1.0 / 3.0).observed_covariates(), 3);
        assert_eq!(cfg(2.0 / 3.0).observed_covariates(), 6);
        assert_eq!(cfg(1.0).observed_covariates(), 9);
        let sim = simulate_panel(&DgpConfig { alpha_observed: 2.0 / 3.0, l: 9, ..DgpConfig::default() }).unwrap();
        assert_eq!(sim.panel.n_covariates(), 6);
        assert_eq!(sim.latent.covariates.len(), 50 * 30 * 9);
    }

    #[test]
    fn invalid_alpha_names_the_field() {
        let err = DgpConfig { alpha_observed: 0.0, ..DgpConfig::default() }.validate().unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { field: "alpha_observed", .. }));
    }

    #[test]
    fn exact_design_has_no_bias() {
        let cfg = McConfig {
            dgp: DgpConfig {
                noise_sd: 0.0,
                fe_range: (0.0, 0.0),
                beta_range: (0.0, 0.0),
                t_pre: 10,
                n_ctrl: 40,
                t_post: 5,
                l: 9,
                seed: 9,
                ..DgpConfig::default()
            },
            n_reps: 5,
            ..McConfig::default()
        };
        let report = monte_carlo(&cfg).unwrap();
        let ipca = report.get(EstimatorKind::Ipca).unwrap();
        assert_eq!(ipca.n_ok, 5);
        assert!(ipca.bias.abs() < 1e-6, "{}", ipca.bias);
    }

    #[test]
    fn aggregation_ignores_replication_order() {
        let cfg = McConfig {
            dgp: DgpConfig { n_ctrl: 15, t_pre: 8, t_post: 3, l: 4, k: 2, seed: 10, ..DgpConfig::default() },
            estimators: vec![EstimatorKind::Ipca, EstimatorKind::Scm],
            n_reps: 4,
            ..McConfig::default()
        };
        let mut reps: Vec<Replication> = (0..4).map(|r| run_replication(&cfg, r).unwrap()).collect();
        let a = aggregate(&cfg, &reps);
        reps.reverse();
        assert_eq!(a, aggregate(&cfg, &reps));
        let ipca = a.get(EstimatorKind::Ipca).unwrap();
        assert!(ipca.rmse * ipca.rmse >= ipca.bias * ipca.bias);
    }

    #[test]
    fn aggregate_metrics_by_hand() {
        let cfg = McConfig {
            dgp: DgpConfig { t_post: 2, ..DgpConfig::default() },
            estimators: vec![EstimatorKind::Ipca],
            n_reps: 3,
            ..McConfig::default()
        };
        let rep = |r, truth: [f64; 2], est: core::result::Result<Vec<f64>, String>| Replication {
            rep: r,
            true_att: truth.to_vec(),
            estimates: vec![(EstimatorKind::Ipca, est)],
        };
        let reps = [
            rep(0, [1.0, 2.0], Ok(vec![2.0, 2.0])),
            rep(1, [1.0, 2.0], Ok(vec![1.0, 6.0])),
            rep(2, [0.0, 0.0], Err("boom".into())),
        ];
        let r = aggregate(&cfg, &reps);
        let e = r.get(EstimatorKind::Ipca).unwrap();
        // Errors (1, 0) and (0, 4).
        assert_eq!((e.n_ok, e.n_failed, e.first_error.as_deref()), (2, 1, Some("boom")));
        assert!((e.bias - 1.25).abs() < 1e-15);
        let rmse = (libm::sqrt(0.5) + libm::sqrt(8.0)) / 2.0;
        assert!((e.rmse - rmse).abs() < 1e-15);
        // Per-period population SD of estimates: 0.5 and 2.
        assert!((e.std_by_period[0] - 0.5).abs() < 1e-15 && (e.std_by_period[1] - 2.0).abs() < 1e-15);
        assert!((e.std - libm::sqrt((0.25 + 4.0) / 2.0)).abs() < 1e-15);
        assert_eq!(e.bias_by_period, vec![0.5, 2.0]);
    }
}
