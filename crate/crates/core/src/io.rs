//! Plain-text file formats.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! values always produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::cluster::RobustnessRow;
use crate::counts::CountMatrix;
use crate::error::{BmcError, Result};
use crate::ingest::GpsRecord;
use crate::modelsel::{OrderErrorRow, OrderSelection, RiskRow};
use crate::simulate::SamplePath;
use crate::spectra::SpectralDensity;

fn parse_err(line: usize, msg: impl std::fmt::Display) -> BmcError {
    BmcError::Parse(format!("line {line}: {msg}"))
}

/// Reads `key=value` pairs from a `# ...` header line.
fn header_value(line: &str, key: &str) -> Option<usize> {
    line.trim_start_matches('#')
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.parse().ok())
}

/// `# n=<n> l=<l>` followed by one state id per line.
pub fn path_to_csv(path: &SamplePath) -> String {
    let mut out = format!("# n={} l={}\n", path.n(), path.len());
    for s in path.symbols() {
        writeln!(out, "{s}").expect("writing to a String");
    }
    out
}

/// Parses the path format. Without a header `n` is one more than the
/// largest id; with one, the declared length must match.
pub fn path_from_reader(reader: impl Read) -> Result<SamplePath> {
    let mut n = None;
    let mut declared_len = None;
    let mut symbols = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            n = n.or(header_value(line, "n"));
            declared_len = declared_len.or(header_value(line, "l"));
            continue;
        }
        symbols.push(line.parse::<usize>().map_err(|e| parse_err(k + 1, e))?);
    }
    if let Some(l) = declared_len {
        if l != symbols.len() {
            return Err(BmcError::Parse(format!("header declares l={l}, found {} ids", symbols.len())));
        }
    }
    let n = match n {
        Some(n) => n,
        None => symbols.iter().max().map_or(0, |&m| m + 1),
    };
    SamplePath::new(n, symbols)
}

/// `# n=<n>` followed by `i,j,count` triplets in sorted order.
pub fn counts_to_csv(counts: &CountMatrix) -> String {
    let mut out = format!("# n={}\n", counts.n());
    for &(i, j, c) in counts.entries() {
        writeln!(out, "{i},{j},{c}").expect("writing to a String");
    }
    out
}

/// Parses the count format; an `i,j,count` column header is accepted.
/// Without `# n=` the size is one more than the largest index.
pub fn counts_from_reader(reader: impl Read) -> Result<CountMatrix> {
    let mut n = None;
    let mut triplets = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            n = n.or(header_value(line, "n"));
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(k + 1, "expected i,j,count"));
        }
        if triplets.is_empty() && fields[0].parse::<usize>().is_err() {
            continue;
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| parse_err(k + 1, e));
        triplets.push((num(fields[0])? as usize, num(fields[1])? as usize, num(fields[2])?));
    }
    let n = match n {
        Some(n) => n,
        None => triplets.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0),
    };
    CountMatrix::from_triplets(n, triplets)
}

/// Dense matrix rows as comma-separated values.
pub fn dense_to_csv(matrix: &nalgebra::DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in matrix.row_iter() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", cells.join(",")).expect("writing to a String");
    }
    out
}

/// Two-column `x,f` table.
pub fn density_to_csv(density: &SpectralDensity) -> String {
    let mut out = String::from("x,f\n");
    for (x, f) in density.grid.iter().zip(&density.density) {
        writeln!(out, "{x},{f}").expect("writing to a String");
    }
    out
}

pub fn robustness_to_csv(rows: &[RobustnessRow]) -> String {
    let mut out = String::from("epsilon,mean_E,stderr,seeds\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.epsilon, r.mean_e, r.stderr, r.seeds).expect("writing to a String");
    }
    out
}

pub fn risk_to_csv(rows: &[RiskRow]) -> String {
    let mut out = String::from("length,seed,R_emp,R_bmc,R_unif\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.length, r.seed_index, r.r_emp, r.r_bmc, r.r_unif).expect("writing to a String");
    }
    out
}

pub fn order_error_to_csv(rows: &[OrderErrorRow]) -> String {
    let mut out = String::from("epsilon,e_over,e_under,repetitions\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.epsilon, r.e_over, r.e_under, r.repetitions).expect("writing to a String");
    }
    out
}

/// `r,CAIC` table, one line per candidate order.
pub fn caic_to_csv(selection: &OrderSelection) -> String {
    let mut out = String::from("r,CAIC\n");
    for (r, c) in &selection.table {
        writeln!(out, "{r},{c}").expect("writing to a String");
    }
    out
}

/// GPS records from a CSV with a `lat,lon,timestamp` header.
pub fn gps_from_reader(reader: impl Read) -> Result<Vec<GpsRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize()
        .enumerate()
        .map(|(k, r)| r.map_err(|e| parse_err(k + 2, e)))
        .collect()
}

/// One token per line; blank lines are skipped.
pub fn tokens_from_reader(reader: impl Read) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        let token = line.trim();
        if !token.is_empty() {
            out.push(token.to_owned());
        }
    }
    Ok(out)
}

/// A JSON array of token arrays.
pub fn corpus_from_reader(reader: impl Read) -> Result<Vec<Vec<String>>> {
    Ok(serde_json::from_reader(BufReader::new(reader))?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(fs::File::open(path)?))?)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    Ok(fs::write(path, to_json(value)?)?)
}

pub fn read_path(path: &Path) -> Result<SamplePath> {
    path_from_reader(fs::File::open(path)?)
}

pub fn read_counts(path: &Path) -> Result<CountMatrix> {
    counts_from_reader(fs::File::open(path)?)
}
