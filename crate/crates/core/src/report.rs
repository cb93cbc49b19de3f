//! Audit report plumbing and on-disk formats.
//!
//! Reports are emitted as JSON and CSV. Identical report contents must
//! produce byte-identical files, so emission walks `BTreeMap`s, formats
//! floats with Rust's shortest round-trip notation, and leaves wall-clock
//! runtime out of the serialized forms entirely (it is kept on the struct
//! for terminal display only).

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Stamped into every emitted file; bump when columns or fields change.
pub const SCHEMA_VERSION: &str = "1";

/// One audited quantity: what was measured, what the bound evaluated to,
/// and the constant that makes the comparison true.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AuditReport {
    pub name: String,
    pub parameters: BTreeMap<String, f64>,
    pub measured: f64,
    pub bound: f64,
    pub fitted_constant: f64,
    /// Slope of log(fitted) against the log of the swept size, when the
    /// audit spans several sizes.
    pub growth_exponent: Option<f64>,
    pub pass: bool,
    /// Wall-clock seconds; never serialized, so repeated runs emit
    /// identical bytes.
    #[serde(skip, default)]
    pub runtime_seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportFile {
    schema: String,
    reports: Vec<AuditReport>,
}

pub fn emit_json(reports: &[AuditReport]) -> String {
    let file = ReportFile { schema: SCHEMA_VERSION.into(), reports: reports.to_vec() };
    let mut s = serde_json::to_string_pretty(&file).expect("report serialization");
    s.push('\n');
    s
}

pub fn parse_json(text: &str) -> Result<Vec<AuditReport>> {
    let file: ReportFile = serde_json::from_str(text)?;
    if file.schema != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "report schema {} not supported (want {})",
            file.schema, SCHEMA_VERSION
        )));
    }
    Ok(file.reports)
}

const CSV_HEADER: &str = "name,measured,bound,fitted_constant,growth_exponent,pass,parameters";

/// CSV cells are split on commas and the parameter pack on `;` and `=`,
/// so those characters may not appear in names.
fn check_token(token: &str) -> Result<()> {
    if token.contains([',', ';', '=', '\n']) {
        return Err(Error::Config(format!("name {token:?} contains a reserved character")));
    }
    Ok(())
}

pub fn emit_csv(reports: &[AuditReport]) -> Result<String> {
    let mut out = format!("# schema={SCHEMA_VERSION}\n{CSV_HEADER}\n");
    for r in reports {
        check_token(&r.name)?;
        let mut params = String::new();
        for (i, (k, v)) in r.parameters.iter().enumerate() {
            check_token(k)?;
            if i > 0 {
                params.push(';');
            }
            let _ = write!(params, "{k}={v}");
        }
        let growth = r.growth_exponent.map(|g| g.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.name, r.measured, r.bound, r.fitted_constant, growth, r.pass, params
        );
    }
    Ok(out)
}

pub fn parse_csv(text: &str) -> Result<Vec<AuditReport>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l == format!("# schema={SCHEMA_VERSION}") => {}
        other => {
            return Err(Error::Config(format!("missing schema line, got {other:?}")));
        }
    }
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Config("missing csv header".into()));
    }
    let bad = |line: &str| Error::Config(format!("malformed csv row {line:?}"));
    let mut reports = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 7 {
            return Err(bad(line));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
        let mut parameters = BTreeMap::new();
        if !cells[6].is_empty() {
            for pair in cells[6].split(';') {
                let (k, v) = pair.split_once('=').ok_or_else(|| bad(line))?;
                parameters.insert(k.to_string(), num(v)?);
            }
        }
        reports.push(AuditReport {
            name: cells[0].to_string(),
            measured: num(cells[1])?,
            bound: num(cells[2])?,
            fitted_constant: num(cells[3])?,
            growth_exponent: if cells[4].is_empty() { None } else { Some(num(cells[4])?) },
            pass: cells[5].parse::<bool>().map_err(|_| bad(line))?,
            parameters,
            runtime_seconds: 0.0,
        });
    }
    Ok(reports)
}

/// Writes `<stem>.json` and `<stem>.csv` under `dir`, creating it if
/// needed; returns both paths.
pub fn write_reports(dir: &Path, stem: &str, reports: &[AuditReport]) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let json_path = dir.join(format!("{stem}.json"));
    let csv_path = dir.join(format!("{stem}.csv"));
    std::fs::write(&json_path, emit_json(reports))?;
    std::fs::write(&csv_path, emit_csv(reports)?)?;
    Ok((json_path, csv_path))
}

/// Least-squares slope of `log y` against `log x`; the growth exponent
/// shared by the sweep audits.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}
