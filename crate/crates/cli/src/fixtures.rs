//! Golden fixtures: inputs and expected outputs written by `fixtures/oracle.py`, re-checked
//! against the library. A fixture whose recorded numbers no longer match is reported as stale.

use std::fmt::Write as _;
use std::path::Path;

use csc_ipca_core::csc::{estimate, impute};
use csc_ipca_core::inference::{block_permutation_test, test_statistic, ConformalContext, NullSpec};
use csc_ipca_core::ipca::{
    init_factors_pca, objective, update_factors, update_gamma, FactorPath, FitConfig, IpcaParams,
};
use csc_ipca_core::normalization::normalize;
use csc_ipca_core::panel::{PanelData, PanelView};
use csc_ipca_core::simulation::{monte_carlo, replication_rng, simulate_panel, simulate_var1, DgpConfig, McConfig};
use csc_ipca_core::tuning::{tune_bootstrap, tune_loo};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const DEFAULT_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub name: String,
    pub kind: String,
    pub file: String,
    pub tolerance: f64,
    pub oracle: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fixtures: Vec<FixtureEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureReport {
    pub results: Vec<FixtureResult>,
}

impl FixtureReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failed(&self) -> usize {
        self.results.iter().filter(|r| !r.passed).count()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            let _ = writeln!(s, "{} {:<34} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        }
        let _ = writeln!(s, "{} of {} fixtures passed", self.results.len() - self.failed(), self.results.len());
        s
    }
}

pub fn verify_fixtures(dir: &Path) -> CliResult<FixtureReport> {
    let manifest: Manifest = crate::io::read_json(&dir.join("manifest.json"))?;
    let results = manifest
        .fixtures
        .iter()
        .map(|entry| {
            let outcome = crate::io::read_json::<Value>(&dir.join(&entry.file))
                .map_err(|e| e.to_string())
                .and_then(|doc| check(entry, &doc["inputs"], &doc["expected"]));
            match outcome {
                Ok(detail) => FixtureResult { name: entry.name.clone(), passed: true, detail },
                Err(detail) => FixtureResult { name: entry.name.clone(), passed: false, detail },
            }
        })
        .collect();
    Ok(FixtureReport { results })
}

type Check = Result<String, String>;

fn check(entry: &FixtureEntry, inputs: &Value, expected: &Value) -> Check {
    let tol = entry.tolerance;
    match entry.kind.as_str() {
        "objective_double_loop" => objective_double_loop(inputs, expected, tol),
        "pca_discarded_spectrum" => pca_discarded_spectrum(inputs, expected, tol),
        "factor_update" => factor_update(inputs, expected, tol),
        "gamma_update" => gamma_update(inputs, expected, tol),
        "normalization_rotation" => normalization_rotation(inputs, expected, tol),
        "normalization_equal_eigenvalues" => normalization_equal_eigenvalues(inputs, expected, tol),
        "structural_consistency" => structural_consistency(inputs, expected, tol),
        "staggered_alignment" => staggered_alignment(inputs, expected, tol),
        "permutation_hand_case" => permutation_hand_case(inputs, expected),
        "q2_statistic" => q2_statistic(inputs, expected, tol),
        "var_stationary_mean" => var_stationary_mean(inputs, expected, tol),
        "als_monotonicity" => als_monotonicity(inputs, tol),
        "placebo" => placebo(inputs, expected),
        "tuning_bootstrap" | "tuning_loo" => tuning(&entry.kind, inputs, expected),
        "conformal_size" | "conformal_power" => conformal_rate(inputs, expected),
        "mc_desk" => mc_desk(inputs, expected, tol),
        other => Err(format!("unknown fixture kind {other:?}")),
    }
}

fn parse<T: serde::de::DeserializeOwned>(v: &Value, what: &str) -> Result<T, String> {
    serde_json::from_value(v.clone()).map_err(|e| format!("bad {what}: {e}"))
}

fn matrix(v: &Value, what: &str) -> Result<DMatrix<f64>, String> {
    let rows: Vec<Vec<f64>> = parse(v, what)?;
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(format!("{what} is ragged"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn vector(v: &Value, what: &str) -> Result<DVector<f64>, String> {
    Ok(DVector::from_vec(parse::<Vec<f64>>(v, what)?))
}

/// Panel from `y` (N x T), `x` (N x T x L) and an optional treatment matrix `d`.
fn panel_from(inputs: &Value) -> Result<PanelData, String> {
    let y = matrix(&inputs["y"], "y")?;
    let x: Vec<Vec<Vec<f64>>> = parse(&inputs["x"], "x")?;
    let (n, t) = y.shape();
    let l = x.first().and_then(|r| r.first()).map_or(0, Vec::len);
    let flat: Vec<f64> = x.iter().flatten().flatten().copied().collect();
    let d: Vec<f64> = if inputs["d"].is_null() {
        vec![0.0; n * t]
    } else {
        let d = matrix(&inputs["d"], "d")?;
        (0..n).flat_map(|i| (0..t).map(move |s| (i, s))).map(|(i, s)| d[(i, s)]).collect()
    };
    let units = (0..n).map(|i| format!("u{i}")).collect();
    let times = (0..t).map(|s| s.to_string()).collect();
    PanelData::new(units, times, y, flat, l, &d).map_err(|e| e.to_string())
}

fn full_view(panel: &PanelData) -> PanelView<'_> {
    let units: Vec<usize> = (0..panel.n_units()).collect();
    let periods: Vec<usize> = (0..panel.n_periods()).collect();
    PanelView::balanced(panel, &units, &periods)
}

fn params(inputs: &Value) -> Result<IpcaParams, String> {
    let gamma = matrix(&inputs["gamma"], "gamma")?;
    let factors = matrix(&inputs["factors"], "factors")?;
    let periods = (0..factors.ncols()).collect();
    IpcaParams::new(gamma, FactorPath::new(factors, periods).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
}

fn close(actual: f64, expected: f64, tol: f64, what: &str) -> Result<(), String> {
    if (actual - expected).abs() <= tol * expected.abs().max(1.0) {
        Ok(())
    } else {
        Err(format!("{what}: got {actual:.12e}, expected {expected:.12e} (tolerance {tol:e})"))
    }
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn objective_double_loop(inputs: &Value, expected: &Value, tol: f64) -> Check {
    let panel = panel_from(inputs)?;
    let value = objective(&params(inputs)?, &full_view(&panel)).map_err(|e| e.to_string())?;
    close(value, parse(&expected["objective"], "objective")?, tol, "objective")?;
    Ok(format!("objective {value:.10}"))
}

fn pca_discarded_spectrum(inputs: &Value, expected: &Value, tol: f64) -> Check {
    let y = matrix(&inputs["y"], "y")?;
    let k: usize = parse(&inputs["k"], "k")?;
    let f = init_factors_pca(&y, k, 1e-10).map_err(|e| e.to_string())?;
    let ff_inv = (&f * f.transpose()).try_inverse().ok_or("F F' is singular")?;
    let recon = &y * f.transpose() * ff_inv * &f;
    let err: f64 = (&y - recon).iter().map(|v| v * v).sum();
    close(err, parse(&expected["reconstruction_error"], "reconstruction_error")?, tol, "reconstruction error")?;
    Ok(format!("discarded energy {err:.10}"))
}

fn factor_update(inputs: &Value, expected: &Value, tol: f64) -> Check {
    let x = matrix(&inputs["x_t"], "x_t")?;
    let y = vector(&inputs["y_t"], "y_t")?;
    let gamma = matrix(&inputs["gamma"], "gamma")?;
    let f = update_factors(&gamma, &x, &y, 1e-10).map_err(|e| e.to_string())?.factor;
    let want = vector(&expected["factor"], "factor")?;
    let diff = (&f - &want).amax();
    if diff > tol {
        return Err(format!("factor differs by {diff:e}"));
    }
    Ok(format!("max abs diff {diff:.1e}"))
}

fn gamma_update(inputs: &Value, expected: &Value, tol: f64) -> Check {
    let panel = panel_from(inputs)?;
    let view = full_view(&panel);
    let factors = matrix(&inputs["factors"], "factors")?;
    let path = FactorPath::new(factors, (0..panel.n_periods()).collect()).map_err(|e| e.to_string())?;
    let gamma = update_gamma(&path, &view, 1e-10).map_err(|e| e.to_string())?.gamma;
    let diff = max_abs_diff(&gamma, &matrix(&expected["gamma"], "gamma")?);
    if diff > tol {
        return Err(format!("gamma differs from least squares by {diff:e}"));
    }
    let at = |g: &DMatrix<f64>| {
        objective(&IpcaParams::new(g.clone(), path.clone()).expect("shapes agree"), &view)
            .expect("objective on a balanced view")
    };
    let best = at(&gamma);
    let n: usize = parse(&inputs["perturbations"], "perturbations")?;
    let radius: f64 = parse(&inputs["radius"], "radius")?;
    let mut rng = replication_rng(parse(&inputs["seed"], "seed")?, 0);
    for draw in 0..n {
        let dir = DMatrix::from_fn(gamma.nrows(), gamma.ncols(), |_, _| rng.random::<f64>() - 0.5);
        let step = &dir * (radius / dir.norm());
        let other = at(&(&gamma + step));
        if other < best - 1e-12 * best.max(1.0) {
            return Err(format!("perturbation {draw} lowers the objective: {other} < {best}"));
        }
    }
    Ok(format!("lstsq diff {diff:.1e}; {n} perturbations all worse"))
}

/// Identification constraints and preservation of `Gamma F`.
fn check_normalized(before: &IpcaParams, after: &IpcaParams, tol: f64) -> Result<(f64, f64), String> {
    let k = after.k();
    let t = after.factors.len() as f64;
    let orth = max_abs_diff(&(after.gamma.transpose() * &after.gamma), &DMatrix::identity(k, k));
    let ff = after.factors.values() * after.factors.values().transpose() / t;
    let max_diag = (0..k).map(|j| ff[(j, j)]).fold(0.0, f64::max);
    let off = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|p| ff[p].abs())
        .fold(0.0, f64::max);
    let gf0 = &before.gamma * before.factors.values();
    let gf1 = &after.gamma * after.factors.values();
    let structural = max_abs_diff(&gf0, &gf1) / gf0.amax().max(1e-300);
    if orth > tol {
        return Err(format!("Gamma'Gamma - I = {orth:e}"));
    }
    if off > tol * max_diag {
        return Err(format!("off-diagonal factor covariance {off:e}"));
    }
    if structural > tol {
        return Err(format!("Gamma F changed by {structural:e}"));
    }
    Ok((orth, off / max_diag))
}

fn normalization_rotation(inputs: &Value, expected: &Value, tol: f64) -> Check {
    let p = params(inputs)?;
    let norm = normalize(&p).map_err(|e| e.to_string())?;
    let (orth, off) = check_normalized(&p, &norm, tol)?;
    let dg = max_abs_diff(&norm.gamma, &matrix(&expected["gamma"], "gamma")?);
    let df = max_abs_diff(norm.factors.values(), &matrix(&expected["factors"], "factors")?);
    if dg > tol || df > tol {
        return Err(format!("normalized pair differs from the oracle: gamma {dg:e}, factors {df:e}"));
    }
    Ok(format!("orthonormality {orth:.1e}, off-diagonal {off:.1e}, oracle diff {:.1e}", dg.max(df)))
}

fn normalization_equal_eigenvalues(inputs: &Value, expected: &Value, tol: f64) -> Check {
    let p = params(inputs)?;
    let norm = normalize(&p).map_err(|e| e.to_string())?;
    check_normalized(&p, &norm, tol)?;
    let want: Vec<f64> = parse(&expected["factor_variance"], "factor_variance")?;
    let t = norm.factors.len() as f64;
    let ff = norm.factors.values() * norm.factors.values().transpose() / t;
    for (j, w) in want.iter().enumerate() {
        close(ff[(j, j)], *w, tol, "factor variance")?;
    }
    Ok("constraints hold with tied factor variances".into())
}

fn structural_consistency(inputs: &Value, expected: &Value, tol: f64) -> Check {
    let panel = panel_from(inputs)?;
    let view = full_view(&panel);
    let p = params(inputs)?;
    let rows = impute(&p.gamma, &p.factors, &view).map_err(|e| e.to_string())?;
    let fit = DMatrix::from_fn(panel.n_units(), panel.n_periods(), |i, t| rows[i][t]);
    let diff = max_abs_diff(&fit, &matrix(&expected["fitted"], "fitted")?);
    if diff > tol {
        return Err(format!("imputed values differ from x_it gamma f_t by {diff:e}"));
    }
    let sse: f64 = (panel.outcomes() - &fit).iter().map(|v| v * v).sum();
    let obj = objective(&p, &view).map_err(|e| e.to_string())?;
    close(obj, sse, tol, "objective vs imputation residuals")?;
    close(obj, parse(&expected["objective"], "objective")?, tol, "objective")?;
    Ok(format!("imputation diff {diff:.1e}"))
}

fn staggered_alignment(inputs: &Value, expected: &Value, tol: f64) -> Check {
    let panel = panel_from(inputs)?;
    let k: usize = parse(&inputs["k"], "k")?;
    let fit = estimate(&panel, &FitConfig::with_k(k)).map_err(|e| e.to_string())?;
    let lengths: Vec<usize> = fit.effects.iter().map(Vec::len).collect();
    let want_lengths: Vec<usize> = parse(&expected["effect_lengths"], "effect_lengths")?;
    let want_counts: Vec<usize> = parse(&expected["att_counts"], "att_counts")?;
    if lengths != want_lengths || fit.att_counts != want_counts {
        return Err(format!("lengths {lengths:?} counts {:?}", fit.att_counts));
    }
    let want: Vec<f64> = parse(&expected["att"], "att")?;
    if want.len() != fit.att.len() {
        return Err(format!("att has {} entries, expected {}", fit.att.len(), want.len()));
    }
    for (a, w) in fit.att.iter().zip(&want) {
        close(*a, *w, tol, "att")?;
    }
    Ok(format!("effect lengths {lengths:?}"))
}

fn permutation_hand_case(inputs: &Value, expected: &Value) -> Check {
    let path: Vec<f64> = parse(&inputs["path"], "path")?;
    let test = block_permutation_test(&path, parse(&inputs["window"], "window")?, parse(&inputs["q"], "q")?)
        .map_err(|e| e.to_string())?;
    let p: f64 = parse(&expected["p_value"], "p_value")?;
    let n: usize = parse(&expected["n_permutations"], "n_permutations")?;
    if test.p_value != p || test.permutation_statistics.len() != n {
        return Err(format!("p = {}, |Pi| = {}", test.p_value, test.permutation_statistics.len()));
    }
    Ok(format!("p = {p} over {n} shifts"))
}

fn q2_statistic(inputs: &Value, expected: &Value, tol: f64) -> Check {
    let u: Vec<f64> = parse(&inputs["residuals"], "residuals")?;
    let s = test_statistic(&u, parse(&inputs["q"], "q")?).map_err(|e| e.to_string())?;
    close(s, parse(&expected["statistic"], "statistic")?, tol, "statistic")?;
    Ok(format!("statistic {s:.12}"))
}

fn var_stationary_mean(inputs: &Value, expected: &Value, tol: f64) -> Check {
    let coef = matrix(&inputs["coef"], "coef")?;
    let mut rng = replication_rng(parse(&inputs["seed"], "seed")?, 0);
    let series = simulate_var1(
        &coef,
        parse(&inputs["drift"], "drift")?,
        parse(&inputs["len"], "len")?,
        parse(&inputs["burn_in"], "burn_in")?,
        &mut rng,
    );
    let want: Vec<f64> = parse(&expected["mean"], "mean")?;
    let mut worst = 0.0_f64;
    for (j, w) in want.iter().enumerate() {
        let m = series.column(j).mean();
        worst = worst.max((m - w).abs());
    }
    if worst > tol {
        return Err(format!("sample mean off by {worst:.4}"));
    }
    Ok(format!("max deviation {worst:.4}"))
}

#[derive(Deserialize)]
struct SimInputs {
    dgp: Value,
    seeds: u64,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    k_max: Option<usize>,
    #[serde(default)]
    n_reps: Option<usize>,
    #[serde(default)]
    null: Option<String>,
    #[serde(default)]
    level: Option<f64>,
}

fn draw(base: &DgpConfig, seed: u64) -> Result<csc_ipca_core::simulation::SimulatedPanel, String> {
    simulate_panel(&DgpConfig { seed, ..base.clone() }).map_err(|e| e.to_string())
}

fn als_monotonicity(inputs: &Value, slack: f64) -> Check {
    let s: SimInputs = parse(inputs, "inputs")?;
    let dgp: DgpConfig = parse(&s.dgp, "dgp")?;
    let fit = FitConfig::with_k(s.k.unwrap_or(dgp.k));
    let mut steps = 0;
    for seed in 0..s.seeds {
        let path = estimate(&draw(&dgp, seed)?.panel, &fit).map_err(|e| e.to_string())?.diagnostics.objective_path;
        for (i, w) in path.windows(2).enumerate() {
            if w[1] > w[0] * (1.0 + slack) {
                return Err(format!("seed {seed}: objective rose at iteration {} ({} -> {})", i + 1, w[0], w[1]));
            }
        }
        steps += path.len();
    }
    Ok(format!("{steps} sweeps over {} draws, none increasing", s.seeds))
}

fn placebo(inputs: &Value, expected: &Value) -> Check {
    let s: SimInputs = parse(inputs, "inputs")?;
    let dgp: DgpConfig = parse(&s.dgp, "dgp")?;
    let fit = FitConfig::with_k(s.k.unwrap_or(dgp.k));
    let means = (0..s.seeds)
        .map(|seed| {
            let att = estimate(&draw(&dgp, seed)?.panel, &fit).map_err(|e| e.to_string())?.att;
            Ok(att.iter().sum::<f64>() / att.len() as f64)
        })
        .collect::<Result<Vec<f64>, String>>()?;
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let sd = (means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    let limit: f64 = parse(&expected["max_standard_errors"], "max_standard_errors")?;
    if mean.abs() >= limit * se {
        return Err(format!("mean ATT {mean:.4} is {:.2} standard errors from zero", mean.abs() / se));
    }
    Ok(format!("mean ATT {mean:.4}, SE {se:.4}"))
}

fn tuning(kind: &str, inputs: &Value, expected: &Value) -> Check {
    let s: SimInputs = parse(inputs, "inputs")?;
    let dgp: DgpConfig = parse(&s.dgp, "dgp")?;
    let want: usize = parse(&expected["k_best"], "k_best")?;
    let k_max = s.k_max.ok_or("k_max missing")?;
    let fit = FitConfig::default();
    let mut picks = Vec::new();
    for seed in 0..s.seeds {
        let panel = draw(&dgp, seed)?.panel;
        let result = if kind == "tuning_loo" {
            tune_loo(&panel, k_max, &fit)
        } else {
            tune_bootstrap(&panel, k_max, s.n_reps.ok_or("n_reps missing")?, &fit, seed)
        }
        .map_err(|e| e.to_string())?;
        picks.push(result.k_best);
    }
    if picks.iter().any(|&k| k != want) {
        return Err(format!("selected {picks:?}, expected {want} throughout"));
    }
    Ok(format!("k_best = {want} on all {} draws", s.seeds))
}

fn conformal_rate(inputs: &Value, expected: &Value) -> Check {
    let s: SimInputs = parse(inputs, "inputs")?;
    let dgp: DgpConfig = parse(&s.dgp, "dgp")?;
    let fit = FitConfig::with_k(s.k.unwrap_or(dgp.k));
    let level = s.level.ok_or("level missing")?;
    let mut rejections = 0;
    for seed in 0..s.seeds {
        let sim = draw(&dgp, seed)?;
        let theta0 = match s.null.as_deref() {
            Some("truth") => sim.true_att.clone(),
            Some("zero") => vec![0.0; dgp.t_post],
            other => return Err(format!("unknown null {other:?}")),
        };
        let ctx = ConformalContext::new(&sim.panel, &fit).map_err(|e| e.to_string())?;
        let p = ctx.pvalue(&NullSpec { theta0 }, 1.0).map_err(|e| e.to_string())?.p_value;
        if p <= level {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / s.seeds as f64;
    let min: f64 = expected["min_rate"].as_f64().unwrap_or(0.0);
    let max: f64 = expected["max_rate"].as_f64().unwrap_or(1.0);
    if !(min..=max).contains(&rate) {
        return Err(format!("rejection rate {rate:.3} outside [{min}, {max}]"));
    }
    Ok(format!("rejection rate {rate:.3}"))
}

fn mc_desk(inputs: &Value, expected: &Value, tol: f64) -> Check {
    let config: McConfig = parse(&inputs["config"], "config")?;
    let report = monte_carlo(&config).map_err(|e| e.to_string())?;
    let r = report.estimators.first().ok_or("no estimator in the report")?;
    for (name, got) in [("bias", r.bias), ("rmse", r.rmse), ("std", r.std)] {
        let want: f64 = parse(&expected[name], name)?;
        close(got, want, tol, name).map_err(|e| format!("stale fixture, re-record with oracle.py --record: {e}"))?;
    }
    Ok(format!("bias {:.4}, rmse {:.4}, std {:.4} over {} reps", r.bias, r.rmse, r.std, report.n_reps))
}

/// Surfaces a failing report as an error (used by the binary).
pub fn require_pass(report: &FixtureReport) -> CliResult<()> {
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::Fixture(format!("{} of {} fixtures failed", report.failed(), report.results.len())))
    }
}
