//! Turning raw observation streams into sample paths.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{BmcError, Result};
use crate::simulate::{SamplePath, Vocabulary};

/// Kilometres per degree of latitude.
pub const KM_PER_DEG_LAT: f64 = 110.574;
/// Kilometres per degree of longitude at the equator.
pub const KM_PER_DEG_LON: f64 = 111.320;

/// Encodes a token stream. The `drop_top` most frequent tokens are removed
/// first, then every token seen fewer than `min_count` times. Ids follow
/// decreasing frequency, ties in lexicographic order; removed tokens are
/// skipped in the output.
pub fn tokenize<S: AsRef<str>>(symbols: &[S], min_count: usize, drop_top: usize) -> Result<SamplePath> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in symbols {
        *freq.entry(s.as_ref()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let kept: Vec<String> = ranked
        .into_iter()
        .skip(drop_top)
        .filter(|&(_, c)| c >= min_count)
        .map(|(s, _)| s.to_owned())
        .collect();
    if kept.is_empty() {
        return Err(BmcError::EmptyAfterFilter);
    }
    let vocabulary = Vocabulary::new(kept)?;
    let ids: Vec<usize> = symbols.iter().filter_map(|s| vocabulary.id_of(s.as_ref())).collect();
    if ids.is_empty() {
        return Err(BmcError::EmptyAfterFilter);
    }
    SamplePath::with_vocabulary(ids, vocabulary)
}

/// Decodes a path back into its symbol strings.
pub fn decode(path: &SamplePath) -> Option<Vec<String>> {
    let vocab = path.vocabulary()?;
    Some(path.symbols().iter().map(|&id| vocab.symbol(id).to_owned()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsRecord {
    pub lat: f64,
    pub lon: f64,
    pub timestamp: String,
}

impl GpsRecord {
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(BmcError::InvalidParameter(format!(
                "coordinate ({}, {}) out of range",
                self.lat, self.lon
            )));
        }
        Ok(())
    }
}

/// Open latitude/longitude box; records on or outside the boundary are
/// dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn contains(&self, r: &GpsRecord) -> bool {
        r.lat > self.lat_min && r.lat < self.lat_max && r.lon > self.lon_min && r.lon < self.lon_max
    }
}

/// Latitude (in degrees) fed to the cosine of the longitude scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CosineArgument {
    /// `j_lat * 110.574 / x`, as written in the grid algorithm's listing.
    #[default]
    Listing,
    /// `j_lat * x / 110.574`, the southern edge of the record's cell.
    CellLatitude,
    /// The record's own latitude.
    RecordLatitude,
}

/// Grid cells in order of discovery.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRegistry {
    cell_km: f64,
    cells: Vec<(i64, i64)>,
    index: HashMap<(i64, i64), usize>,
}

#[derive(Serialize)]
struct RegistryJson {
    cell_km: f64,
    cells: BTreeMap<String, usize>,
}

impl GridRegistry {
    pub fn new(cell_km: f64) -> Self {
        Self { cell_km, cells: Vec::new(), index: HashMap::new() }
    }

    pub fn cell_km(&self) -> f64 {
        self.cell_km
    }

    /// `(j_lat, j_long)` of every state id.
    pub fn cells(&self) -> &[(i64, i64)] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn id_of(&self, cell: (i64, i64)) -> Option<usize> {
        self.index.get(&cell).copied()
    }

    fn insert(&mut self, cell: (i64, i64)) -> usize {
        *self.index.entry(cell).or_insert_with(|| {
            self.cells.push(cell);
            self.cells.len() - 1
        })
    }

    /// `{"cell_km": x, "cells": {"j_lat,j_long": id, ...}}` with sorted keys.
    pub fn to_json(&self) -> Result<String> {
        let cells = self.cells.iter().enumerate().map(|(id, c)| (cell_key(*c), id)).collect();
        Ok(serde_json::to_string_pretty(&RegistryJson { cell_km: self.cell_km, cells })?)
    }
}

fn cell_key((a, b): (i64, i64)) -> String {
    format!("{a},{b}")
}

/// Grid indices of one record.
pub fn grid_cell(record: &GpsRecord, cell_km: f64, cosine: CosineArgument) -> Result<(i64, i64)> {
    let j_lat = (record.lat * KM_PER_DEG_LAT / cell_km).floor() as i64;
    let arg = match cosine {
        CosineArgument::Listing => j_lat as f64 * KM_PER_DEG_LAT / cell_km,
        CosineArgument::CellLatitude => j_lat as f64 * cell_km / KM_PER_DEG_LAT,
        CosineArgument::RecordLatitude => record.lat,
    };
    let cos = arg.to_radians().cos().abs();
    if cos < 1e-9 {
        return Err(BmcError::DegenerateCell { j_lat });
    }
    let j_long = (record.lon * KM_PER_DEG_LON * cos / cell_km).floor() as i64;
    Ok((j_lat, j_long))
}

/// Maps time-ordered GPS records to grid-cell states. Records outside
/// `bbox` are dropped before any cell is created; cells get ids in order of
/// first visit and the path's vocabulary holds their `"j_lat,j_long"` keys.
pub fn gps_to_states(
    records: &[GpsRecord],
    cell_km: f64,
    bbox: Option<&BoundingBox>,
    cosine: CosineArgument,
) -> Result<(SamplePath, GridRegistry)> {
    if !(cell_km > 0.0) {
        return Err(BmcError::InvalidParameter(format!("cell size {cell_km} km must be positive")));
    }
    let mut registry = GridRegistry::new(cell_km);
    let mut symbols = Vec::with_capacity(records.len());
    for r in records {
        r.validate()?;
        if bbox.is_some_and(|b| !b.contains(r)) {
            continue;
        }
        symbols.push(registry.insert(grid_cell(r, cell_km, cosine)?));
    }
    if symbols.is_empty() {
        return Err(BmcError::EmptyAfterFilter);
    }
    let vocabulary = Vocabulary::new(registry.cells.iter().map(|&c| cell_key(c)).collect())?;
    Ok((SamplePath::with_vocabulary(symbols, vocabulary)?, registry))
}

/// Stable lexicographic sort by timestamp string.
pub fn sort_by_timestamp(records: &mut [GpsRecord]) {
    records.sort_by(|a, b| a.timestamp.cmp(&b.timestamp));
}

/// Joins paths over the same alphabet and vocabulary.
pub fn concat_paths(paths: &[SamplePath]) -> Result<SamplePath> {
    let first = paths.first().ok_or_else(|| BmcError::InvalidParameter("no paths to concatenate".into()))?;
    if paths.iter().any(|p| p.n() != first.n() || p.vocabulary() != first.vocabulary()) {
        return Err(BmcError::VocabularyMismatch);
    }
    let symbols = paths.iter().flat_map(|p| p.symbols().iter().copied()).collect();
    Ok(SamplePath::from_parts(first.n(), symbols, first.vocabulary().cloned()))
}

/// Cluster frequency-inverse document frequency vectors.
///
/// With `C(k, d)` the number of tokens of document `d` in cluster `k` and
/// `C_k` its total over the corpus, `cf(k, d) = ln(1 + C(k, d))` and
/// `idf(k) = ln(sum_j (1 + C_j) / (1 + C_k))`. Tokens outside the
/// vocabulary are ignored.
pub fn cfidf_vectors<S: AsRef<str>>(
    documents: &[Vec<S>],
    assignment: &ClusterAssignment,
    vocabulary: &Vocabulary,
) -> Result<Vec<Vec<f64>>> {
    if assignment.n() != vocabulary.len() {
        return Err(BmcError::DimensionMismatch { expected: vocabulary.len(), found: assignment.n() });
    }
    let m = assignment.m();
    let per_doc: Vec<Vec<f64>> = documents
        .iter()
        .map(|doc| {
            let mut c = vec![0.0; m];
            for tok in doc {
                if let Some(id) = vocabulary.id_of(tok.as_ref()) {
                    c[assignment.labels()[id]] += 1.0;
                }
            }
            c
        })
        .collect();
    let totals: Vec<f64> = (0..m).map(|k| per_doc.iter().map(|c| c[k]).sum()).collect();
    let numerator: f64 = totals.iter().map(|t| 1.0 + t).sum();
    let idf: Vec<f64> = totals.iter().map(|t| (numerator / (1.0 + t)).ln()).collect();
    Ok(per_doc.iter().map(|c| c.iter().zip(&idf).map(|(x, w)| (1.0 + x).ln() * w).collect()).collect())
}
