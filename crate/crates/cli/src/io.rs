//! Long-format panel CSV: one row per unit-period with columns `unit`, `time`, `y`, `d` and any
//! number of covariate columns, in header order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csc_ipca_core::panel::PanelData;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const REQUIRED_COLUMNS: [&str; 4] = ["unit", "time", "y", "d"];

/// Header names of the identifier, outcome and treatment columns. Covariates are the listed
/// columns, or every remaining column when `x` is `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnMap {
    pub unit: String,
    pub time: String,
    pub y: String,
    pub d: String,
    pub x: Option<Vec<String>>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self { unit: "unit".into(), time: "time".into(), y: "y".into(), d: "d".into(), x: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPanel {
    pub panel: PanelData,
    pub covariate_names: Vec<String>,
}

struct Row {
    line: u64,
    unit: String,
    time: String,
    y: f64,
    d: f64,
    x: Vec<f64>,
}

pub fn load_panel(path: &Path, columns: &ColumnMap) -> CliResult<LoadedPanel> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_panel_csv(file, &path.display().to_string(), columns)
}

pub fn read_panel_csv<R: Read>(reader: R, source: &str, columns: &ColumnMap) -> CliResult<LoadedPanel> {
    let err = |row: Option<u64>, column: Option<&str>, message: String| CliError::Csv {
        path: source.to_string(),
        row,
        column: column.map(str::to_string),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| err(Some(1), None, e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let missing_column = |name: &str| err(Some(1), Some(name), "column is missing from the header".into());
    let mut idx = [0usize; 4];
    let required = [&columns.unit, &columns.time, &columns.y, &columns.d];
    for (slot, name) in idx.iter_mut().zip(required) {
        *slot = find(name).ok_or_else(|| missing_column(name))?;
    }
    let cov_idx: Vec<usize> = match &columns.x {
        Some(names) => names.iter().map(|n| find(n).ok_or_else(|| missing_column(n))).collect::<CliResult<_>>()?,
        None => (0..headers.len()).filter(|i| !idx.contains(i)).collect(),
    };
    if cov_idx.is_empty() {
        return Err(err(Some(1), None, "no covariate columns".into()));
    }
    let covariate_names: Vec<String> = cov_idx.iter().map(|&i| headers[i].to_string()).collect();

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| err(e.position().map(|p| p.line()), None, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let number = |i: usize| -> CliResult<f64> {
            let raw = &record[i];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(Some(line), Some(&headers[i]), format!("cannot parse {raw:?} as a finite number")))
        };
        let d = number(idx[3])?;
        if d != 0.0 && d != 1.0 {
            return Err(err(
                Some(line),
                Some(&headers[idx[3]]),
                format!("treatment must be 0 or 1, got {}", &record[idx[3]]),
            ));
        }
        rows.push(Row {
            line,
            unit: record[idx[0]].to_string(),
            time: record[idx[1]].to_string(),
            y: number(idx[2])?,
            d,
            x: cov_idx.iter().map(|&i| number(i)).collect::<CliResult<_>>()?,
        });
    }
    if rows.is_empty() {
        return Err(err(None, None, "no data rows".into()));
    }

    let mut unit_ids: Vec<String> = Vec::new();
    let mut unit_pos: HashMap<&str, usize> = HashMap::new();
    let mut time_ids: Vec<String> = Vec::new();
    let mut time_seen: HashMap<&str, ()> = HashMap::new();
    for r in &rows {
        if !unit_pos.contains_key(r.unit.as_str()) {
            unit_pos.insert(&r.unit, unit_ids.len());
            unit_ids.push(r.unit.clone());
        }
        if time_seen.insert(&r.time, ()).is_none() {
            time_ids.push(r.time.clone());
        }
    }
    // Numeric time labels are ordered by value; anything else keeps first-appearance order.
    let numeric: Option<Vec<f64>> = time_ids.iter().map(|t| t.parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut order: Vec<usize> = (0..time_ids.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        time_ids = order.into_iter().map(|i| time_ids[i].clone()).collect();
    }
    let time_pos: HashMap<&str, usize> = time_ids.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();

    let (n, t, l) = (unit_ids.len(), time_ids.len(), cov_idx.len());
    let mut cell: Vec<Option<usize>> = vec![None; n * t];
    for (k, r) in rows.iter().enumerate() {
        let c = unit_pos[r.unit.as_str()] * t + time_pos[r.time.as_str()];
        if let Some(prev) = cell[c] {
            return Err(err(
                Some(r.line),
                None,
                format!("duplicate cell ({}, {}); first given at row {}", r.unit, r.time, rows[prev].line),
            ));
        }
        cell[c] = Some(k);
    }
    let missing: Vec<usize> = (0..n * t).filter(|&c| cell[c].is_none()).collect();
    if let Some(&first) = missing.first() {
        return Err(err(
            None,
            None,
            format!(
                "panel is unbalanced: missing cell ({}, {}) and {} more",
                unit_ids[first / t],
                time_ids[first % t],
                missing.len() - 1
            ),
        ));
    }

    let mut y = DMatrix::zeros(n, t);
    let mut x = Vec::with_capacity(n * t * l);
    let mut d = Vec::with_capacity(n * t);
    for (c, k) in cell.iter().enumerate() {
        let r = &rows[k.expect("balanced")];
        y[(c / t, c % t)] = r.y;
        x.extend_from_slice(&r.x);
        d.push(r.d);
    }
    let panel = PanelData::new(unit_ids, time_ids, y, x, l, &d)?;
    Ok(LoadedPanel { panel, covariate_names })
}

/// Default covariate names `x1..xL`.
pub fn default_names(l: usize) -> Vec<String> {
    (1..=l).map(|j| format!("x{j}")).collect()
}

pub fn write_panel_csv<W: Write>(panel: &PanelData, names: &[String], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.extend(names.iter().map(String::as_str));
    w.write_record(&header)?;
    for i in 0..panel.n_units() {
        for t in 0..panel.n_periods() {
            let mut rec = vec![
                panel.unit_ids()[i].clone(),
                panel.time_ids()[t].clone(),
                panel.outcome(i, t).to_string(),
                if panel.treated(i, t) { "1".into() } else { "0".into() },
            ];
            rec.extend(panel.covariates(i, t).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config { source_name: path.display().to_string(), message: e.to_string() })
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
    s.push('\n');
    s
}

/// Writes `contents` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, contents: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, contents).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents).and_then(|_| out.flush()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> CliResult<LoadedPanel> {
        read_panel_csv(text.as_bytes(), "mem.csv", &ColumnMap::default())
    }

    #[test]
    fn round_trip() {
        let text = "unit,time,y,d,a,b\nu1,1,0.5,0,1,2\nu1,2,1.5,1,3,4\nu2,1,-1,0,5,6\nu2,2,2e-3,0,7,8\n";
        let p = load(text).unwrap();
        assert_eq!(p.covariate_names, vec!["a", "b"]);
        assert_eq!(p.panel.covariates(1, 1), &[7.0, 8.0]);
        let mut buf = Vec::new();
        write_panel_csv(&p.panel, &p.covariate_names, &mut buf).unwrap();
        assert_eq!(load(std::str::from_utf8(&buf).unwrap()).unwrap(), p);
    }

    #[test]
    fn numeric_times_are_sorted() {
        let text = "unit,time,y,d,x\nu1,10,1,0,0\nu1,9,2,0,0\nu1,2,3,0,0\n";
        let p = load(text).unwrap();
        assert_eq!(p.panel.time_ids(), &["2", "9", "10"]);
        assert_eq!(p.panel.outcome(0, 0), 3.0);
    }

    #[test]
    fn unbalanced_panel_names_the_missing_cell() {
        let text = "unit,time,y,d,x\nu1,t1,1,0,0\nu1,t2,1,0,0\nu1,t3,1,0,0\nu2,t1,1,0,0\nu2,t2,1,0,0\n";
        let msg = load(text).unwrap_err().to_string();
        assert!(msg.contains("(u2, t3)"), "{msg}");
    }

    #[test]
    fn bad_values_report_row_and_column() {
        let e = load("unit,time,y,d,x\nu1,1,abc,0,1\n").unwrap_err();
        assert!(matches!(&e, CliError::Csv { row: Some(2), column: Some(c), .. } if c == "y"), "{e}");
        let e = load("unit,time,y,d,x\nu1,1,1,0,1\nu1,2,1,0.5,1\n").unwrap_err();
        assert!(matches!(&e, CliError::Csv { row: Some(3), column: Some(c), .. } if c == "d"), "{e}");
        let e = load("unit,time,y,x\nu1,1,1,1\n").unwrap_err();
        assert!(e.to_string().contains("column d"), "{e}");
        let e = load("unit,time,y,d,x\nu1,1,1,0,1\nu1,1,2,0,1\n").unwrap_err();
        assert!(e.to_string().contains("duplicate cell (u1, 1)"), "{e}");
    }

    #[test]
    fn custom_column_names() {
        let text =
            "country,year,gdp,brexit,fdi,junk\nuk,2015,1,0,2,9\nuk,2016,2,1,3,9\nfr,2015,3,0,4,9\nfr,2016,4,0,5,9\n";
        let columns = ColumnMap {
            unit: "country".into(),
            time: "year".into(),
            y: "gdp".into(),
            d: "brexit".into(),
            x: Some(vec!["fdi".into()]),
        };
        let p = read_panel_csv(text.as_bytes(), "mem.csv", &columns).unwrap();
        assert_eq!(p.covariate_names, vec!["fdi"]);
        assert!(p.panel.treated(0, 1));
        assert_eq!(p.panel.covariates(1, 0), &[4.0]);
    }
}
