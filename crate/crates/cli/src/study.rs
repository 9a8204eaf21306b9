//! Monte Carlo studies over a grid of designs and their bias/RMSE/STD table.

use std::fmt::Write as _;

use csc_ipca_core::simulation::{EstimatorKind, McConfig, McReport};
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::parallel;

/// Design values crossed by a study. Missing axes keep the base configuration's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StudyGrid {
    pub t_pre: Vec<usize>,
    pub n_ctrl: Vec<usize>,
    pub alpha: Vec<f64>,
}

/// An `mc` configuration file: an `McConfig` plus an optional `grid` key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub base: McConfig,
    pub grid: Option<StudyGrid>,
}

impl StudyConfig {
    pub fn from_json(value: Value, source: &str) -> CliResult<Self> {
        let bad = |e: serde_json::Error| CliError::Config { source_name: source.to_string(), message: e.to_string() };
        let mut value = value;
        let grid = match value.as_object_mut() {
            Some(obj) => obj.remove("grid").map(serde_json::from_value::<StudyGrid>).transpose().map_err(bad)?,
            None => None,
        };
        let base = serde_json::from_value::<McConfig>(value).map_err(bad)?;
        Ok(Self { base, grid })
    }

    /// Every design in row-major order: `t_pre`, then `n_ctrl`, then `alpha`.
    pub fn cells(&self) -> Vec<McConfig> {
        let d = &self.base.dgp;
        let g = self.grid.clone().unwrap_or_default();
        let or = |v: Vec<usize>, x: usize| if v.is_empty() { vec![x] } else { v };
        let alphas = if g.alpha.is_empty() { vec![d.alpha_observed] } else { g.alpha };
        let mut out = Vec::new();
        for &t_pre in &or(g.t_pre, d.t_pre) {
            for &n_ctrl in &or(g.n_ctrl.clone(), d.n_ctrl) {
                for &alpha in &alphas {
                    let mut c = self.base.clone();
                    c.dgp.t_pre = t_pre;
                    c.dgp.n_ctrl = n_ctrl;
                    c.dgp.alpha_observed = alpha;
                    out.push(c);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub t_pre: usize,
    pub n_ctrl: usize,
    pub alpha: f64,
    pub report: McReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub cells: Vec<StudyCell>,
}

impl StudyReport {
    pub fn estimators(&self) -> Vec<EstimatorKind> {
        self.config.base.estimators.clone()
    }
}

pub fn run_study(config: &StudyConfig, pool: &ThreadPool) -> CliResult<StudyReport> {
    let cells = config
        .cells()
        .into_iter()
        .map(|c| {
            let report = parallel::monte_carlo(&c, pool)?;
            Ok(StudyCell { t_pre: c.dgp.t_pre, n_ctrl: c.dgp.n_ctrl, alpha: c.dgp.alpha_observed, report })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(StudyReport { config: config.clone(), cells })
}

/// `1/3`, `2/3` and `1` print as fractions, anything else with three decimals.
pub fn alpha_label(alpha: f64) -> String {
    for (num, den) in [(1, 3), (2, 3), (1, 1), (1, 2), (1, 4), (3, 4)] {
        if (alpha - num as f64 / den as f64).abs() < 1e-3 {
            return if den == 1 { num.to_string() } else { format!("{num}/{den}") };
        }
    }
    format!("{alpha:.3}")
}

fn unique<T: PartialEq + Copy>(xs: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for x in xs {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Text table per estimator: rows are `(T_pre, N_ctrl)` pairs and columns are alpha within
/// each of bias, RMSE and STD.
pub fn render_table(report: &StudyReport) -> String {
    let rows = unique(report.cells.iter().map(|c| (c.t_pre, c.n_ctrl)));
    let alphas = unique(report.cells.iter().map(|c| c.alpha));
    let width = 8;
    let block = alphas.len() * width;
    let mut out = String::new();
    for kind in report.estimators() {
        let reps = report.cells.first().map_or(0, |c| c.report.n_reps);
        let _ = writeln!(out, "{} ({} replications)", kind.name(), reps);
        let _ = writeln!(out, "{:>4} {:>6} | {:^block$} | {:^block$} | {:^block$}", "", "", "Bias", "RMSE", "STD");
        let mut head = format!("{:>4} {:>6} |", "T0", "N_ctrl");
        for _ in 0..3 {
            for &a in &alphas {
                let _ = write!(head, "{:>width$}", alpha_label(a));
            }
            head.push_str(" |");
        }
        head.pop();
        head.pop();
        let _ = writeln!(out, "{head}");
        let mut failures = 0;
        for &(t_pre, n_ctrl) in &rows {
            let mut line = format!("{t_pre:>4} {n_ctrl:>6} |");
            let metric = |m: usize| {
                let mut s = String::new();
                for &a in &alphas {
                    let r = report
                        .cells
                        .iter()
                        .find(|c| c.t_pre == t_pre && c.n_ctrl == n_ctrl && c.alpha == a)
                        .and_then(|c| c.report.get(kind));
                    let v = r.map(|r| [r.bias, r.rmse, r.std][m]);
                    match v {
                        Some(v) if v.is_finite() => {
                            let _ = write!(s, "{v:>width$.3}");
                        }
                        _ => {
                            let _ = write!(s, "{:>width$}", "-");
                        }
                    }
                }
                s
            };
            for m in 0..3 {
                line.push_str(&metric(m));
                line.push_str(" |");
            }
            line.pop();
            line.pop();
            let _ = writeln!(out, "{line}");
            for &a in &alphas {
                if let Some(r) = report
                    .cells
                    .iter()
                    .find(|c| c.t_pre == t_pre && c.n_ctrl == n_ctrl && c.alpha == a)
                    .and_then(|c| c.report.get(kind))
                {
                    failures += r.n_failed;
                }
            }
        }
        if failures > 0 {
            let _ = writeln!(out, "  ({failures} failed fits excluded)");
        }
        out.push('\n');
    }
    out
}

/// Long-format CSV of the same numbers.
pub fn render_csv(report: &StudyReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["estimator", "t_pre", "n_ctrl", "alpha", "bias", "rmse", "std", "n_ok", "n_failed"])
        .expect("in-memory CSV");
    for kind in report.estimators() {
        for c in &report.cells {
            if let Some(r) = c.report.get(kind) {
                w.write_record([
                    kind.name().to_string(),
                    c.t_pre.to_string(),
                    c.n_ctrl.to_string(),
                    c.alpha.to_string(),
                    r.bias.to_string(),
                    r.rmse.to_string(),
                    r.std.to_string(),
                    r.n_ok.to_string(),
                    r.n_failed.to_string(),
                ])
                .expect("in-memory CSV");
            }
        }
    }
    w.into_inner().expect("in-memory CSV")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn grid_key_is_split_off() {
        let cfg = StudyConfig::from_json(
            json!({"n_reps": 3, "grid": {"t_pre": [10, 20], "alpha": [0.5, 1.0]}, "dgp": {"n_ctrl": 7}}),
            "cfg",
        )
        .unwrap();
        assert_eq!(cfg.base.n_reps, 3);
        let cells = cfg.cells();
        assert_eq!(cells.len(), 4);
        assert_eq!((cells[1].dgp.t_pre, cells[1].dgp.n_ctrl, cells[1].dgp.alpha_observed), (10, 7, 1.0));
        assert_eq!(cells[2].dgp.t_pre, 20);
        let e = StudyConfig::from_json(json!({"grid": {"tpre": [1]}}), "cfg").unwrap_err();
        assert!(e.to_string().contains("tpre"), "{e}");
    }

    #[test]
    fn alpha_labels() {
        assert_eq!(alpha_label(1.0 / 3.0), "1/3");
        assert_eq!(alpha_label(0.667), "2/3");
        assert_eq!(alpha_label(1.0), "1");
        assert_eq!(alpha_label(0.9), "0.900");
    }

    #[test]
    fn table_has_one_block_per_estimator() {
        let cfg = StudyConfig::from_json(
            json!({"n_reps": 2, "estimators": ["ipca", "ife", "scm"],
                   "dgp": {"n_ctrl": 10, "t_pre": 8, "t_post": 2, "n_treat": 2},
                   "grid": {"alpha": [0.5, 1.0]}}),
            "cfg",
        )
        .unwrap();
        let pool = parallel::thread_pool(Some(2)).unwrap();
        let report = run_study(&cfg, &pool).unwrap();
        let table = render_table(&report);
        for name in ["CSC-IPCA", "CSC-IFE", "SCM"] {
            assert_eq!(table.matches(name).count(), 1, "{table}");
        }
        assert!(table.contains("   8     10 |"), "{table}");
        let csv = String::from_utf8(render_csv(&report)).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * 2);
    }
}
