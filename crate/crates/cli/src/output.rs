//! Serializable views of the estimator outputs. Matrices are written row-major with named
//! dimensions so that readers do not have to guess the layout.

use csc_ipca_core::baselines::{IfeFit, ScmFit};
use csc_ipca_core::csc::CscFit;
use csc_ipca_core::inference::ConfidenceBand;
use csc_ipca_core::ipca::{FactorPath, FitDiagnostics, IpcaParams};
use csc_ipca_core::panel::{PanelData, PatternKind, TreatmentPattern};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMatrix {
    pub dims: [String; 2],
    pub shape: [usize; 2],
    pub data: Vec<Vec<f64>>,
}

impl NamedMatrix {
    pub fn new(rows: &str, cols: &str, m: &DMatrix<f64>) -> Self {
        Self {
            dims: [rows.to_string(), cols.to_string()],
            shape: [m.nrows(), m.ncols()],
            data: (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.shape[0], self.shape[1], |i, j| self.data[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternOutput {
    pub kind: PatternKind,
    pub treated_units: Vec<String>,
    pub control_units: Vec<String>,
    /// Pre-treatment periods per treated unit.
    pub t_pre: Vec<usize>,
}

impl PatternOutput {
    pub fn new(panel: &PanelData, p: &TreatmentPattern) -> Self {
        let ids = |units: &[usize]| units.iter().map(|&i| panel.unit_ids()[i].clone()).collect();
        Self {
            kind: p.kind,
            treated_units: ids(&p.treated_units),
            control_units: ids(&p.control_units),
            t_pre: p.t_pre.clone(),
        }
    }
}

/// IPCA parameters as written by `estimate --dump-params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsOutput {
    pub covariates: Vec<String>,
    pub periods: Vec<String>,
    /// L x K.
    pub gamma: NamedMatrix,
    /// K x T.
    pub factors: NamedMatrix,
}

impl ParamsOutput {
    pub fn new(panel: &PanelData, covariates: &[String], gamma: &DMatrix<f64>, factors: &FactorPath) -> Self {
        Self {
            covariates: covariates.to_vec(),
            periods: factors.periods().iter().map(|&t| panel.time_ids()[t].clone()).collect(),
            gamma: NamedMatrix::new("covariate", "factor", gamma),
            factors: NamedMatrix::new("factor", "period", factors.values()),
        }
    }

    pub fn from_params(panel: &PanelData, covariates: &[String], p: &IpcaParams) -> Self {
        Self::new(panel, covariates, &p.gamma, &p.factors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IpcaOutput {
    pub k: usize,
    pub pattern: PatternOutput,
    pub control_params: ParamsOutput,
    pub gamma_treat: NamedMatrix,
    pub normalized_params: ParamsOutput,
    /// Counterfactual fit for every treated unit and period.
    pub fitted: NamedMatrix,
    /// Per treated unit, by periods since adoption.
    pub effects: Vec<Vec<f64>>,
    pub att: Vec<f64>,
    pub att_counts: Vec<usize>,
    pub pre_fit_rmse: f64,
    pub pre_fit_warning: bool,
    pub diagnostics: FitDiagnostics,
}

impl IpcaOutput {
    pub fn new(panel: &PanelData, covariates: &[String], fit: &CscFit) -> Self {
        Self {
            k: fit.params_ctrl.k(),
            pattern: PatternOutput::new(panel, &fit.pattern),
            control_params: ParamsOutput::from_params(panel, covariates, &fit.params_ctrl),
            gamma_treat: NamedMatrix::new("covariate", "factor", &fit.gamma_treat),
            normalized_params: ParamsOutput::new(panel, covariates, &fit.gamma_treat_norm, &fit.factors_norm),
            fitted: NamedMatrix::new("treated_unit", "period", &fit.fitted),
            effects: fit.effects.clone(),
            att: fit.att.clone(),
            att_counts: fit.att_counts.clone(),
            pre_fit_rmse: fit.pre_fit_rmse,
            pre_fit_warning: fit.pre_fit_warning,
            diagnostics: fit.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IfeOutput {
    pub k: usize,
    pub pattern: PatternOutput,
    pub covariates: Vec<String>,
    pub beta: Vec<f64>,
    pub factors: NamedMatrix,
    pub treated_loadings: NamedMatrix,
    pub fitted: NamedMatrix,
    pub effects: Vec<Vec<f64>>,
    pub att: Vec<f64>,
    pub att_counts: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl IfeOutput {
    pub fn new(panel: &PanelData, covariates: &[String], pattern: &TreatmentPattern, fit: &IfeFit) -> Self {
        let k = fit.factors.ncols();
        let loadings = DMatrix::from_fn(fit.treated_loadings.len(), k, |i, j| fit.treated_loadings[i][j]);
        Self {
            k,
            pattern: PatternOutput::new(panel, pattern),
            covariates: covariates.to_vec(),
            beta: fit.beta.iter().copied().collect(),
            factors: NamedMatrix::new("period", "factor", &fit.factors),
            treated_loadings: NamedMatrix::new("treated_unit", "factor", &loadings),
            fitted: NamedMatrix::new("treated_unit", "period", &fit.fitted),
            effects: fit.effects.clone(),
            att: fit.att.clone(),
            att_counts: fit.att_counts.clone(),
            iterations: fit.iterations,
            converged: fit.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScmOutput {
    pub pattern: PatternOutput,
    /// One row per treated unit, one column per control unit.
    pub weights: NamedMatrix,
    pub fitted: NamedMatrix,
    pub effects: Vec<Vec<f64>>,
    pub att: Vec<f64>,
    pub att_counts: Vec<usize>,
    pub pre_fit_rmse: f64,
}

impl ScmOutput {
    pub fn new(panel: &PanelData, pattern: &TreatmentPattern, fit: &ScmFit) -> Self {
        let w = DMatrix::from_fn(fit.weights.len(), pattern.n_control(), |i, j| fit.weights[i][j]);
        Self {
            pattern: PatternOutput::new(panel, pattern),
            weights: NamedMatrix::new("treated_unit", "control_unit", &w),
            fitted: NamedMatrix::new("treated_unit", "period", &fit.fitted),
            effects: fit.effects.clone(),
            att: fit.att.clone(),
            att_counts: fit.att_counts.clone(),
            pre_fit_rmse: fit.pre_fit_rmse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum FitOutput {
    Ipca(Box<IpcaOutput>),
    Ife(IfeOutput),
    Scm(ScmOutput),
}

/// One row of the gap-plot CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    /// Time label under block adoption, periods since adoption otherwise.
    pub period: String,
    pub actual_mean: f64,
    pub counterfactual_mean: f64,
    pub att: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

/// Treated averages of actual and counterfactual outcomes, aligned on adoption time.
pub fn gap_rows(
    panel: &PanelData,
    pattern: &TreatmentPattern,
    fitted: &DMatrix<f64>,
    band: Option<&ConfidenceBand>,
) -> Vec<GapRow> {
    let max_pre = pattern.t_pre.iter().copied().max().unwrap_or(0) as i64;
    let max_post = pattern.t_pre.iter().map(|&p| panel.n_periods() - p).max().unwrap_or(0) as i64;
    let block = pattern.kind == PatternKind::Block;
    (-max_pre..max_post)
        .filter_map(|e| {
            let (mut actual, mut cf, mut n) = (0.0, 0.0, 0usize);
            for (row, (&unit, &pre)) in pattern.treated_units.iter().zip(&pattern.t_pre).enumerate() {
                let t = pre as i64 + e;
                if (0..panel.n_periods() as i64).contains(&t) {
                    actual += panel.outcome(unit, t as usize);
                    cf += fitted[(row, t as usize)];
                    n += 1;
                }
            }
            if n == 0 {
                return None;
            }
            let (actual, cf) = (actual / n as f64, cf / n as f64);
            let period = if block { panel.time_ids()[(max_pre + e) as usize].clone() } else { e.to_string() };
            let post = usize::try_from(e).ok();
            let bound = |v: Option<&Vec<f64>>| post.and_then(|s| v.and_then(|v| v.get(s).copied()));
            Some(GapRow {
                period,
                actual_mean: actual,
                counterfactual_mean: cf,
                att: actual - cf,
                ci_lo: bound(band.map(|b| &b.lower)),
                ci_hi: bound(band.map(|b| &b.upper)),
            })
        })
        .collect()
}

pub fn gap_csv(rows: &[GapRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV");
    }
    w.into_inner().expect("in-memory CSV")
}

/// Per-period band export: `period, att, lower, upper, degenerate`.
pub fn band_csv(periods: &[String], band: &ConfidenceBand) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["period", "att", "lower", "upper", "degenerate"]).expect("in-memory CSV");
    for (s, label) in periods.iter().enumerate() {
        w.write_record([
            label.clone(),
            band.att[s].to_string(),
            band.lower[s].to_string(),
            band.upper[s].to_string(),
            band.degenerate[s].to_string(),
        ])
        .expect("in-memory CSV");
    }
    w.into_inner().expect("in-memory CSV")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_matrix_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let n = NamedMatrix::new("a", "b", &m);
        assert_eq!(n.data, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(n.shape, [2, 3]);
        assert_eq!(n.to_matrix(), m);
        let json = serde_json::to_string(&n).unwrap();
        assert_eq!(json, r#"{"dims":["a","b"],"shape":[2,3],"data":[[1.0,2.0,3.0],[4.0,5.0,6.0]]}"#);
    }
}
