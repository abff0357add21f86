//! CSV serialization of error records and the grouped statistics command.
//!
//! Record files carry the header `query_time,engine,error,seed`, one row per
//! record, sorted by (seed, query_time, engine) with numbers rendered at 12
//! significant digits. The sync period of a file is carried by its name,
//! `errors_<period>s.csv`, so a sweep writes one file per period.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use skewsim::sim::{Engine, SyncErrorRecord};

use crate::error::{CliError, Result};

/// 12 significant digits: enough that desk-scale values survive a
/// write/read round trip without visible loss.
fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

/// File name for one period's records.
pub fn records_file_name(period: f64) -> String {
    if period.fract() == 0.0 {
        format!("errors_{}s.csv", period as u64)
    } else {
        format!("errors_{period}s.csv")
    }
}

/// Period encoded in a records file name, if it follows the convention.
pub fn period_from_file_name(path: &Path) -> Option<f64> {
    let name = path.file_name()?.to_str()?;
    let body = name.strip_prefix("errors_")?.strip_suffix("s.csv")?;
    body.parse::<f64>().ok().filter(|p| p.is_finite() && *p > 0.0)
}

fn engine_from_name(name: &str) -> Option<Engine> {
    match name {
        "lw_kalman" => Some(Engine::LwKalman),
        "ftsp" => Some(Engine::Ftsp),
        _ => None,
    }
}

/// Renders records to CSV, deterministically ordered. Returns rows written.
pub fn render_records(records: &[SyncErrorRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(CliError::validation(vec!["records: no records to write".into()]));
    }
    let mut sorted: Vec<&SyncErrorRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.run_seed
            .cmp(&b.run_seed)
            .then(a.query_time.total_cmp(&b.query_time))
            .then(a.engine.name().cmp(b.engine.name()))
    });
    let mut out = String::with_capacity(sorted.len() * 48 + 32);
    out.push_str("query_time,engine,error,seed\n");
    for r in sorted {
        writeln!(out, "{},{},{},{}", sig12(r.query_time), r.engine.name(), sig12(r.error), r.run_seed)
            .expect("string write");
    }
    Ok(out)
}

/// Writes records to `path`; returns the number of rows written.
pub fn write_records(records: &[SyncErrorRecord], path: &Path) -> Result<usize> {
    let text = render_records(records)?;
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    Ok(records.len())
}

/// Reads a records CSV, reporting malformed lines with their line number.
pub fn read_records(path: &Path) -> Result<Vec<SyncErrorRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, msg: String| CliError::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        msg,
    };
    match lines.next() {
        Some((i, header)) => {
            if header != "query_time,engine,error,seed" {
                return Err(parse_err(i, format!("bad header `{header}`")));
            }
        }
        None => return Err(parse_err(0, "empty file".into())),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(i, format!("expected 4 fields, got {}", fields.len())));
        }
        let query_time = fields[0]
            .parse::<f64>()
            .map_err(|_| parse_err(i, format!("bad query_time `{}`", fields[0])))?;
        let engine = engine_from_name(fields[1])
            .ok_or_else(|| parse_err(i, format!("bad engine `{}`", fields[1])))?;
        let error = fields[2]
            .parse::<f64>()
            .map_err(|_| parse_err(i, format!("bad error `{}`", fields[2])))?;
        let run_seed = fields[3]
            .parse::<u64>()
            .map_err(|_| parse_err(i, format!("bad seed `{}`", fields[3])))?;
        records.push(SyncErrorRecord { query_time, engine, error, run_seed });
    }
    Ok(records)
}

/// One row of the stats table.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    /// Sync period from the file name; `None` when the file is unnamed.
    pub period: Option<f64>,
    pub engine: &'static str,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn group_stats(period: Option<f64>, records: &[SyncErrorRecord]) -> Vec<StatsRow> {
    let mut rows = Vec::new();
    for engine in [Engine::Ftsp, Engine::LwKalman] {
        let errors: Vec<f64> =
            records.iter().filter(|r| r.engine == engine).map(|r| r.error).collect();
        if errors.is_empty() {
            continue;
        }
        let n = errors.len();
        let mean = errors.iter().sum::<f64>() / n as f64;
        let std = if n >= 2 {
            (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        rows.push(StatsRow { period, engine: engine.name(), mean, std, n });
    }
    rows
}

/// Per-(period, engine) mean and standard deviation of sync error.
///
/// Accepts a single records CSV or a directory of `errors_*.csv` files.
pub fn stats_command(path: &Path) -> Result<Vec<StatsRow>> {
    let mut files: Vec<PathBuf> = Vec::new();
    if path.is_dir() {
        let entries =
            std::fs::read_dir(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        for entry in entries {
            let entry = entry.map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
            let p = entry.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("errors_") && name.ends_with(".csv") {
                files.push(p);
            }
        }
        if files.is_empty() {
            return Err(CliError::validation(vec![format!(
                "stats: no errors_*.csv files under {}",
                path.display()
            )]));
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }

    let mut rows = Vec::new();
    for file in &files {
        let records = read_records(file)?;
        rows.extend(group_stats(period_from_file_name(file), &records));
    }
    rows.sort_by(|a, b| {
        let pa = a.period.unwrap_or(-1.0);
        let pb = b.period.unwrap_or(-1.0);
        pa.total_cmp(&pb).then(a.engine.cmp(b.engine))
    });
    Ok(rows)
}

/// Formats the stats table for stdout.
pub fn format_stats(rows: &[StatsRow]) -> String {
    let mut out = String::new();
    out.push_str("period_s    engine      mean_s          std_s           n\n");
    for row in rows {
        let period = match row.period {
            Some(p) => format!("{p}"),
            None => "-".into(),
        };
        writeln!(
            out,
            "{:<11} {:<11} {:<15} {:<15} {}",
            period,
            row.engine,
            sig12(row.mean),
            sig12(row.std),
            row.n
        )
        .expect("string write");
    }
    out
}
