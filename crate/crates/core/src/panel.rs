//! Balanced panel data model, treatment-pattern classification and sub-panel views.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A balanced N x T panel with L covariates per unit-period and an absorbing treatment indicator.
///
/// Immutable after construction. Covariates are stored unit-major, then period, then covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
    y: DMatrix<f64>,
    x: Vec<f64>,
    n_covariates: usize,
    d: Vec<bool>,
}

impl PanelData {
    /// Builds a panel from dense parts.
    ///
    /// `x` holds `N*T*L` values ordered `(unit, period, covariate)` and `d` holds `N*T` values
    /// ordered `(unit, period)`; every `d` entry must be exactly 0 or 1. The absorbing-treatment
    /// and nonempty-group requirements are checked by [`classify_treatment`].
    pub fn new(
        unit_ids: Vec<String>,
        time_ids: Vec<String>,
        y: DMatrix<f64>,
        x: Vec<f64>,
        n_covariates: usize,
        d: &[f64],
    ) -> Result<Self> {
        let n = unit_ids.len();
        let t = time_ids.len();
        if n == 0 {
            return Err(Error::Empty("panel has no units"));
        }
        if t == 0 {
            return Err(Error::Empty("panel has no periods"));
        }
        if n_covariates == 0 {
            return Err(Error::Empty("panel has no covariates"));
        }
        if y.nrows() != n {
            return Err(Error::DimensionMismatch { what: "outcome rows", expected: n, actual: y.nrows() });
        }
        if y.ncols() != t {
            return Err(Error::DimensionMismatch { what: "outcome columns", expected: t, actual: y.ncols() });
        }
        if x.len() != n * t * n_covariates {
            return Err(Error::DimensionMismatch {
                what: "covariate tensor",
                expected: n * t * n_covariates,
                actual: x.len(),
            });
        }
        if d.len() != n * t {
            return Err(Error::DimensionMismatch { what: "treatment matrix", expected: n * t, actual: d.len() });
        }
        for i in 0..n {
            for s in 0..t {
                let cell = |what| Error::NonFinite { what, unit: unit_ids[i].clone(), period: time_ids[s].clone() };
                if !y[(i, s)].is_finite() {
                    return Err(cell("outcome"));
                }
                let base = (i * t + s) * n_covariates;
                if x[base..base + n_covariates].iter().any(|v| !v.is_finite()) {
                    return Err(cell("covariate"));
                }
                let v = d[i * t + s];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::NonBinaryTreatment {
                        unit: unit_ids[i].clone(),
                        period: time_ids[s].clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(Self { unit_ids, time_ids, y, x, n_covariates, d: d.iter().map(|&v| v == 1.0).collect() })
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.time_ids.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    /// Outcome matrix, N x T.
    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn outcome(&self, unit: usize, period: usize) -> f64 {
        self.y[(unit, period)]
    }

    /// Covariate vector `X_it` of length L.
    pub fn covariates(&self, unit: usize, period: usize) -> &[f64] {
        let base = (unit * self.n_periods() + period) * self.n_covariates;
        &self.x[base..base + self.n_covariates]
    }

    /// Raw covariate tensor ordered `(unit, period, covariate)`.
    pub fn covariate_tensor(&self) -> &[f64] {
        &self.x
    }

    pub fn treated(&self, unit: usize, period: usize) -> bool {
        self.d[unit * self.n_periods() + period]
    }

    /// Overwrites one cell without validation, so tests can plant values that must never be read.
    #[cfg(test)]
    pub(crate) fn poison_cell(&mut self, unit: usize, period: usize, value: f64) {
        let t = self.n_periods();
        let l = self.n_covariates;
        self.y[(unit, period)] = value;
        self.x[(unit * t + period) * l..(unit * t + period + 1) * l].fill(value);
    }

    /// A copy of this panel with the outcome matrix replaced.
    pub fn with_outcomes(&self, y: DMatrix<f64>) -> Result<Self> {
        if y.shape() != self.y.shape() {
            return Err(Error::DimensionMismatch {
                what: "replacement outcomes",
                expected: self.y.len(),
                actual: y.len(),
            });
        }
        Ok(Self { y, ..self.clone() })
    }

    /// A copy exposing only the first `keep` covariates.
    pub fn with_leading_covariates(&self, keep: usize) -> Result<Self> {
        if keep == 0 || keep > self.n_covariates {
            return Err(Error::InvalidConfig {
                field: "covariates",
                reason: alloc::format!("cannot keep {keep} of {} covariates", self.n_covariates),
            });
        }
        let l = self.n_covariates;
        let x = self.x.chunks(l).flat_map(|c| c[..keep].iter().copied()).collect();
        Ok(Self { x, n_covariates: keep, ..self.clone() })
    }

    /// A copy with a constant covariate appended as the last column.
    pub fn with_intercept(&self) -> Self {
        let l = self.n_covariates;
        let mut x = Vec::with_capacity(self.x.len() + self.x.len() / l);
        for c in self.x.chunks(l) {
            x.extend_from_slice(c);
            x.push(1.0);
        }
        Self { x, n_covariates: l + 1, ..self.clone() }
    }

    /// Z-scores every covariate with means and standard deviations computed over
    /// `reference_units` (all periods), applying the same transform to every unit.
    ///
    /// Constant covariates are centered but not scaled.
    pub fn standardized(&self, reference_units: &[usize]) -> Result<(Self, Standardization)> {
        if reference_units.is_empty() {
            return Err(Error::Empty("standardization reference set"));
        }
        let l = self.n_covariates;
        let t = self.n_periods();
        let count = (reference_units.len() * t) as f64;
        let mut mean = alloc::vec![0.0; l];
        for &i in reference_units {
            for s in 0..t {
                for (m, v) in mean.iter_mut().zip(self.covariates(i, s)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut sd = alloc::vec![0.0; l];
        for &i in reference_units {
            for s in 0..t {
                for (j, v) in self.covariates(i, s).iter().enumerate() {
                    sd[j] += (v - mean[j]) * (v - mean[j]);
                }
            }
        }
        for v in sd.iter_mut() {
            *v = libm::sqrt(*v / count);
            if *v == 0.0 {
                *v = 1.0;
            }
        }
        let x = self
            .x
            .chunks(l)
            .flat_map(|c| c.iter().enumerate().map(|(j, v)| (v - mean[j]) / sd[j]).collect::<Vec<_>>())
            .collect();
        Ok((Self { x, ..self.clone() }, Standardization { mean, sd }))
    }
}

/// Per-covariate affine transform used by [`PanelData::standardized`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    /// All treated units switch on in the same period.
    Block,
    /// Treated units switch on at different periods.
    Staggered,
}

/// Partition of units into treated and control groups with per-unit adoption times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentPattern {
    pub kind: PatternKind,
    pub treated_units: Vec<usize>,
    pub control_units: Vec<usize>,
    /// Number of pre-treatment periods for each treated unit, which is also the zero-based
    /// index of its first treated period.
    pub t_pre: Vec<usize>,
}

impl TreatmentPattern {
    /// Common number of pre-treatment periods under block assignment.
    pub fn block_t_pre(&self) -> Option<usize> {
        match self.kind {
            PatternKind::Block => self.t_pre.first().copied(),
            PatternKind::Staggered => None,
        }
    }

    pub fn n_treated(&self) -> usize {
        self.treated_units.len()
    }

    pub fn n_control(&self) -> usize {
        self.control_units.len()
    }
}

/// Classifies the treatment assignment as block or staggered adoption.
pub fn classify_treatment(panel: &PanelData) -> Result<TreatmentPattern> {
    let t = panel.n_periods();
    let mut treated = Vec::new();
    let mut control = Vec::new();
    let mut t_pre = Vec::new();
    for i in 0..panel.n_units() {
        let first = (0..t).find(|&s| panel.treated(i, s));
        match first {
            None => control.push(i),
            Some(f) => {
                if let Some(s) = (f..t).find(|&s| !panel.treated(i, s)) {
                    return Err(Error::NonAbsorbingTreatment {
                        unit: panel.unit_ids()[i].clone(),
                        period: panel.time_ids()[s].clone(),
                    });
                }
                treated.push(i);
                t_pre.push(f);
            }
        }
    }
    if treated.is_empty() {
        return Err(Error::NoTreatedUnits);
    }
    if control.is_empty() {
        return Err(Error::NoControlUnits);
    }
    let kind = if t_pre.iter().all(|&v| v == t_pre[0]) { PatternKind::Block } else { PatternKind::Staggered };
    Ok(TreatmentPattern { kind, treated_units: treated, control_units: control, t_pre })
}

/// One unit of a view together with the periods it contributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewRow {
    pub unit: usize,
    pub periods: Vec<usize>,
}

/// Read-only selection of cells of a panel.
///
/// Rows may repeat a unit (bootstrap resamples) and may cover different periods (staggered
/// adoption, held-out periods).
#[derive(Debug, Clone)]
pub struct PanelView<'a> {
    panel: &'a PanelData,
    rows: Vec<ViewRow>,
}

impl<'a> PanelView<'a> {
    pub fn new(panel: &'a PanelData, rows: Vec<ViewRow>) -> Self {
        debug_assert!(rows
            .iter()
            .all(|r| r.unit < panel.n_units() && r.periods.iter().all(|&p| p < panel.n_periods())));
        Self { panel, rows }
    }

    /// Every listed unit over the same list of periods.
    pub fn balanced(panel: &'a PanelData, units: &[usize], periods: &[usize]) -> Self {
        let rows = units.iter().map(|&unit| ViewRow { unit, periods: periods.to_vec() }).collect();
        Self::new(panel, rows)
    }

    pub fn panel(&self) -> &'a PanelData {
        self.panel
    }

    pub fn rows(&self) -> &[ViewRow] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cells(&self) -> usize {
        self.rows.iter().map(|r| r.periods.len()).sum()
    }

    /// Iterates `(unit, period)` over every cell of the view.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().flat_map(|r| r.periods.iter().map(move |&p| (r.unit, p)))
    }

    /// Sorted union of the periods covered by any row.
    pub fn periods(&self) -> Vec<usize> {
        let mut seen = alloc::vec![false; self.panel.n_periods()];
        for r in &self.rows {
            for &p in &r.periods {
                seen[p] = true;
            }
        }
        seen.iter().enumerate().filter(|(_, &s)| s).map(|(p, _)| p).collect()
    }

    /// Common period list when every row covers the same periods.
    pub fn balanced_periods(&self) -> Option<&[usize]> {
        let first = &self.rows.first()?.periods;
        self.rows.iter().all(|r| &r.periods == first).then_some(first.as_slice())
    }

    /// Outcomes of a balanced view as a rows x periods matrix.
    pub fn outcome_matrix(&self) -> Option<DMatrix<f64>> {
        let periods = self.balanced_periods()?;
        Some(DMatrix::from_fn(self.rows.len(), periods.len(), |r, c| self.panel.outcome(self.rows[r].unit, periods[c])))
    }

    /// Per-period cross-sectional slice `(X_t, Y_t)` over the rows that cover `period`.
    pub fn cross_section(&self, period: usize) -> (DMatrix<f64>, DVector<f64>) {
        let units: Vec<usize> = self.rows.iter().filter(|r| r.periods.contains(&period)).map(|r| r.unit).collect();
        let l = self.panel.n_covariates();
        let x = DMatrix::from_fn(units.len(), l, |r, c| self.panel.covariates(units[r], period)[c]);
        let y = DVector::from_fn(units.len(), |r, _| self.panel.outcome(units[r], period));
        (x, y)
    }
}

/// The three disjoint sub-panels consumed by the estimation pipeline.
#[derive(Debug, Clone)]
pub struct Split<'a> {
    /// Control units over all periods.
    pub ctrl_all: PanelView<'a>,
    /// Treated units over their own pre-treatment periods.
    pub treat_pre: PanelView<'a>,
    /// Treated units over their own post-treatment periods.
    pub treat_post: PanelView<'a>,
}

pub fn split<'a>(panel: &'a PanelData, pattern: &TreatmentPattern) -> Result<Split<'a>> {
    if pattern.control_units.is_empty() {
        return Err(Error::NoControlUnits);
    }
    if pattern.treated_units.is_empty() {
        return Err(Error::NoTreatedUnits);
    }
    let t = panel.n_periods();
    for (&unit, &pre) in pattern.treated_units.iter().zip(&pattern.t_pre) {
        if pre == 0 {
            return Err(Error::NoPreTreatmentPeriods { unit: panel.unit_ids()[unit].to_string() });
        }
    }
    let all: Vec<usize> = (0..t).collect();
    let ctrl_all = PanelView::balanced(panel, &pattern.control_units, &all);
    let rows = |pre: bool| {
        pattern
            .treated_units
            .iter()
            .zip(&pattern.t_pre)
            .map(|(&unit, &tp)| ViewRow { unit, periods: if pre { (0..tp).collect() } else { (tp..t).collect() } })
            .collect()
    };
    Ok(Split { ctrl_all, treat_pre: PanelView::new(panel, rows(true)), treat_post: PanelView::new(panel, rows(false)) })
}
