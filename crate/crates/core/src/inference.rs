//! Conformal inference on the ATT path by cyclic block permutation of treated residuals.
//!
//! Under a sharp null `theta0` the post-treatment outcomes of the treated units are adjusted by
//! `theta0`, the treated mapping is refit on every period of the adjusted data and the treated
//! residuals, averaged over units, form a series of length `T`. Its post-treatment window is
//! compared against the same window of every cyclic shift of the series.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::csc::estimate_with_pattern;
use crate::error::{Error, Result};
use crate::ipca::{fit_als, fit_gamma_given_factors, FitConfig, IpcaParams};
use crate::panel::{classify_treatment, PanelData, PanelView, PatternKind, TreatmentPattern};

/// `(1/sqrt(n)) * sum |r_t|^q` over the given residuals.
pub fn test_statistic(residuals: &[f64], q: f64) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::Empty("residuals for the test statistic"));
    }
    if !(q >= 1.0 && q.is_finite()) {
        return Err(Error::InvalidConfig { field: "q", reason: "exponent must be finite and at least 1".into() });
    }
    if let Some(t) = residuals.iter().position(|r| !r.is_finite()) {
        return Err(Error::InvalidConfig { field: "residuals", reason: alloc::format!("entry {t} is not finite") });
    }
    let sum: f64 = residuals.iter().map(|r| if q == 1.0 { r.abs() } else { libm::pow(r.abs(), q) }).sum();
    Ok(sum / libm::sqrt(residuals.len() as f64))
}

/// Statistic of every cyclic shift of `path`, evaluated on its last `window` entries.
///
/// Entry `s` uses the series `u_(t + s) mod T`; entry 0 is the observed statistic.
pub fn cyclic_shift_statistics(path: &[f64], window: usize, q: f64) -> Result<Vec<f64>> {
    let t = path.len();
    if window == 0 || window >= t {
        return Err(Error::InvalidConfig {
            field: "t_post",
            reason: alloc::format!("post window {window} must lie in 1..{t} to leave periods to permute"),
        });
    }
    let mut buf = vec![0.0; window];
    (0..t)
        .map(|s| {
            for (j, slot) in (t - window..t).enumerate() {
                buf[j] = path[(slot + s) % t];
            }
            test_statistic(&buf, q)
        })
        .collect()
}

/// Outcome of a permutation test on one residual series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub statistic: f64,
    /// One statistic per cyclic shift; the first is the identity.
    pub permutation_statistics: Vec<f64>,
    /// Fraction of shifts whose statistic is at least the observed one.
    pub p_value: f64,
}

pub fn block_permutation_test(path: &[f64], window: usize, q: f64) -> Result<PermutationTest> {
    let stats = cyclic_shift_statistics(path, window, q)?;
    let observed = stats[0];
    let hits = stats.iter().filter(|&&s| s >= observed).count();
    Ok(PermutationTest {
        statistic: observed,
        p_value: hits as f64 / stats.len() as f64,
        permutation_statistics: stats,
    })
}

/// Sharp null: the effect on every treated unit in post-treatment period `s` equals `theta0[s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSpec {
    pub theta0: Vec<f64>,
}

impl NullSpec {
    pub fn constant(value: f64, t_post: usize) -> Self {
        Self { theta0: vec![value; t_post] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalResult {
    pub theta0: Vec<f64>,
    pub q: f64,
    pub p_value: f64,
    pub statistic: f64,
    pub permutation_statistics: Vec<f64>,
    /// Treated residuals averaged over units, one per period.
    pub residual_path: Vec<f64>,
}

/// The control-group fit shared by every null tested on one panel.
#[derive(Debug, Clone)]
pub struct ConformalContext<'a> {
    panel: &'a PanelData,
    pattern: TreatmentPattern,
    t_pre: usize,
    params_ctrl: IpcaParams,
    config: FitConfig,
}

impl<'a> ConformalContext<'a> {
    pub fn new(panel: &'a PanelData, config: &FitConfig) -> Result<Self> {
        let pattern = classify_treatment(panel)?;
        if pattern.kind != PatternKind::Block {
            return Err(Error::UnsupportedPattern("conformal inference requires block assignment"));
        }
        let t_pre =
            pattern.block_t_pre().ok_or(Error::UnsupportedPattern("conformal inference requires block assignment"))?;
        if t_pre == 0 || t_pre >= panel.n_periods() {
            return Err(Error::InvalidConfig {
                field: "t_post",
                reason: "need at least one pre-treatment and one post-treatment period".into(),
            });
        }
        let all: Vec<usize> = (0..panel.n_periods()).collect();
        let ctrl = PanelView::balanced(panel, &pattern.control_units, &all);
        let (params_ctrl, _) = fit_als(&ctrl, config)?;
        Ok(Self { panel, pattern, t_pre, params_ctrl, config: config.clone() })
    }

    pub fn t_pre(&self) -> usize {
        self.t_pre
    }

    pub fn t_post(&self) -> usize {
        self.panel.n_periods() - self.t_pre
    }

    pub fn pattern(&self) -> &TreatmentPattern {
        &self.pattern
    }

    fn check_null(&self, theta0: &[f64]) -> Result<()> {
        if theta0.len() != self.t_post() {
            return Err(Error::DimensionMismatch {
                what: "null effect path",
                expected: self.t_post(),
                actual: theta0.len(),
            });
        }
        if let Some(s) = theta0.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig { field: "theta0", reason: alloc::format!("entry {s} is not finite") });
        }
        Ok(())
    }

    /// Average treated residual per period after adjusting by `theta0` and refitting the
    /// treated mapping on all periods.
    pub fn residual_path(&self, theta0: &[f64]) -> Result<Vec<f64>> {
        self.check_null(theta0)?;
        let (panel, t_pre) = (self.panel, self.t_pre);
        let mut y = panel.outcomes().clone();
        for &i in &self.pattern.treated_units {
            for (s, th) in theta0.iter().enumerate() {
                y[(i, t_pre + s)] -= th;
            }
        }
        let adjusted = panel.with_outcomes(y)?;
        let all: Vec<usize> = (0..panel.n_periods()).collect();
        let treated = PanelView::balanced(&adjusted, &self.pattern.treated_units, &all);
        let factors = &self.params_ctrl.factors;
        let gamma = fit_gamma_given_factors(&treated, factors, self.config.rank_tol)?.gamma;
        let n = self.pattern.n_treated() as f64;
        Ok(all
            .iter()
            .map(|&t| {
                let loading = &gamma * factors.factor(t).expect("control fit covers every period");
                self.pattern
                    .treated_units
                    .iter()
                    .map(|&i| {
                        let fit: f64 = adjusted.covariates(i, t).iter().zip(loading.iter()).map(|(a, b)| a * b).sum();
                        adjusted.outcome(i, t) - fit
                    })
                    .sum::<f64>()
                    / n
            })
            .collect())
    }

    /// p-value of the joint null over the whole post-treatment window.
    pub fn pvalue(&self, null: &NullSpec, q: f64) -> Result<ConformalResult> {
        let path = self.residual_path(&null.theta0)?;
        let test = block_permutation_test(&path, self.t_post(), q)?;
        Ok(ConformalResult {
            theta0: null.theta0.clone(),
            q,
            p_value: test.p_value,
            statistic: test.statistic,
            permutation_statistics: test.permutation_statistics,
            residual_path: path,
        })
    }

    /// p-value for post-treatment period `s` alone: the null sets that period's effect to
    /// `theta0[s]` and the test permutes the pre-treatment residuals together with that single
    /// post-treatment residual.
    pub fn period_pvalue(&self, theta0: &[f64], s: usize, q: f64) -> Result<f64> {
        if s >= self.t_post() {
            return Err(Error::MissingPeriod { what: "post-treatment period", period: self.t_pre + s });
        }
        let path = self.residual_path(theta0)?;
        let mut series: Vec<f64> = path[..self.t_pre].to_vec();
        series.push(path[self.t_pre + s]);
        Ok(block_permutation_test(&series, 1, q)?.p_value)
    }
}

pub fn conformal_pvalue(panel: &PanelData, null: &NullSpec, config: &FitConfig, q: f64) -> Result<ConformalResult> {
    ConformalContext::new(panel, config)?.pvalue(null, q)
}

/// Candidate constant effects for interval inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grid {
    /// The same ascending values for every period.
    Explicit { values: Vec<f64> },
    /// `n` evenly spaced values spanning `att_hat[s] +/- half_width_sd * pre_fit_rmse`.
    Centered { half_width_sd: f64, n: usize },
}

impl Default for Grid {
    fn default() -> Self {
        Grid::Centered { half_width_sd: 5.0, n: 41 }
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect(),
    }
}

/// Grid of candidate effects for one period, centered on `center` when the grid is relative.
pub fn grid_values(grid: &Grid, center: f64, scale: f64) -> Result<Vec<f64>> {
    match grid {
        Grid::Explicit { values } => {
            if values.is_empty() || values.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidConfig {
                    field: "grid",
                    reason: "values must be nonempty and ascending".into(),
                });
            }
            Ok(values.clone())
        }
        Grid::Centered { half_width_sd, n } => {
            if *n == 0 || !(*half_width_sd > 0.0) {
                return Err(Error::InvalidConfig {
                    field: "grid",
                    reason: "need n >= 1 and a positive half width".into(),
                });
            }
            let half = half_width_sd * scale.max(f64::EPSILON);
            Ok(linspace(center - half, center + half, *n))
        }
    }
}

/// Inversion result for one post-treatment period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodInterval {
    pub lower: f64,
    pub upper: f64,
    pub degenerate: bool,
    pub grid: Vec<f64>,
    pub p_values: Vec<f64>,
}

impl ConformalContext<'_> {
    /// Keeps the grid values whose per-period p-value exceeds `1 - level`, holding every other
    /// post-treatment period at `att`.
    pub fn period_interval(&self, att: &[f64], s: usize, values: &[f64], level: f64, q: f64) -> Result<PeriodInterval> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidConfig { field: "level", reason: "must lie in (0, 1)".into() });
        }
        let alpha = 1.0 - level;
        let mut theta = att.to_vec();
        let mut p_values = Vec::with_capacity(values.len());
        for &v in values {
            theta[s] = v;
            p_values.push(self.period_pvalue(&theta, s, q)?);
        }
        let mut kept = values.iter().zip(&p_values).filter(|(_, &p)| p > alpha).map(|(&v, _)| v);
        let first = kept.next();
        let last = kept.next_back().or(first);
        let (lower, upper, degenerate) = match (first, last) {
            (Some(lo), Some(hi)) => (lo, hi, false),
            _ => {
                let best = p_values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(j, _)| j);
                (values[best], values[best], true)
            }
        };
        Ok(PeriodInterval { lower, upper, degenerate, grid: values.to_vec(), p_values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub level: f64,
    pub q: f64,
    pub att: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Set when no grid value survived at that period; the bounds then both equal the grid
    /// value with the largest p-value.
    pub degenerate: Vec<bool>,
    /// Grid and p-value per period.
    pub grids: Vec<Vec<f64>>,
    pub p_values: Vec<Vec<f64>>,
    /// Number of permutations behind each per-period p-value.
    pub n_permutations: usize,
}

impl ConfidenceBand {
    pub fn from_periods(
        level: f64,
        q: f64,
        att: Vec<f64>,
        n_permutations: usize,
        periods: Vec<PeriodInterval>,
    ) -> Self {
        let mut band = ConfidenceBand {
            level,
            q,
            att,
            lower: Vec::new(),
            upper: Vec::new(),
            degenerate: Vec::new(),
            grids: Vec::new(),
            p_values: Vec::new(),
            n_permutations,
        };
        for p in periods {
            band.lower.push(p.lower);
            band.upper.push(p.upper);
            band.degenerate.push(p.degenerate);
            band.grids.push(p.grid);
            band.p_values.push(p.p_values);
        }
        band
    }
}

/// Per-period intervals for the ATT by inverting the single-period permutation test over a grid
/// of constant effects.
pub fn confidence_interval(
    panel: &PanelData,
    grid: &Grid,
    level: f64,
    config: &FitConfig,
    q: f64,
) -> Result<ConfidenceBand> {
    let ctx = ConformalContext::new(panel, config)?;
    let fit = estimate_with_pattern(panel, &ctx.pattern, config)?;
    let periods = (0..ctx.t_post())
        .map(|s| {
            let values = grid_values(grid, fit.att[s], fit.pre_fit_rmse)?;
            ctx.period_interval(&fit.att, s, &values, level, q)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConfidenceBand::from_periods(level, q, fit.att, ctx.t_pre + 1, periods))
}
