use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;
use std::io::Read;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};

/// A normalized discrete distribution over labels.
#[derive(Debug, Clone)]
pub struct FrequencyTable<L> {
    labels: Vec<L>,
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl<L: Clone + Eq + Hash> FrequencyTable<L> {
    /// Builds a table from raw nonnegative weights. Zero-weight rows are
    /// dropped; duplicate labels are rejected.
    pub fn from_weights(entries: impl IntoIterator<Item = (L, f64)>) -> Result<Self> {
        let mut labels = Vec::new();
        let mut weights = Vec::new();
        let mut seen = HashSet::new();
        for (label, w) in entries {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("weight {w} is not a finite nonnegative number")));
            }
            if w == 0.0 {
                continue;
            }
            if !seen.insert(label.clone()) {
                return Err(Error::invalid("duplicate label in frequency table"));
            }
            labels.push(label);
            weights.push(w);
        }
        let total: f64 = weights.iter().sum();
        if labels.is_empty() || total <= 0.0 {
            return Err(Error::EmptyTable);
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let sampler = WeightedIndex::new(&probs).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self { labels, probs, sampler })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[L] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&L, f64)> {
        self.labels.iter().zip(self.probs.iter().copied())
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &L {
        &self.labels[self.sample_index(rng)]
    }

    /// Label with the largest probability (first one on ties).
    pub fn mode(&self) -> &L {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        &self.labels[best]
    }
}

impl FrequencyTable<i32> {
    /// Merges birth years into bins of `width` consecutive years, labeled by
    /// the earliest year of each bin.
    pub fn grouped_years(&self, width: u32) -> Result<Self> {
        if width == 0 {
            return Err(Error::invalid("year group width must be positive"));
        }
        if width == 1 {
            return Ok(self.clone());
        }
        let min = *self.labels.iter().min().ok_or(Error::EmptyTable)?;
        let w = width as i32;
        let mut bins: BTreeMap<i32, f64> = BTreeMap::new();
        for (&y, p) in self.iter() {
            *bins.entry(y - (y - min).rem_euclid(w)).or_default() += p;
        }
        Self::from_weights(bins)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Surname,
    Age,
}

/// Column names used when reading a census table.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub label: String,
    pub count: String,
}

impl ColumnMap {
    pub fn census_surnames() -> Self {
        Self { label: "name".into(), count: "count".into() }
    }

    pub fn census_ages() -> Self {
        Self { label: "AGE".into(), count: "POPESTIMATE2010".into() }
    }
}

/// Census totals row in the age estimate files.
const AGE_TOTAL_SENTINEL: u32 = 999;

pub const DEFAULT_REFERENCE_YEAR: i32 = 2010;

#[derive(Debug, Clone)]
pub enum LoadedTable {
    Surnames(FrequencyTable<String>),
    Years(FrequencyTable<i32>),
}

fn parse_count(raw: &str, row: usize) -> Result<f64> {
    let cleaned: String = raw.trim().chars().filter(|c| *c != ',').collect();
    cleaned
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v >= 0.0)
        .ok_or_else(|| Error::Parse { row, msg: format!("unparsable count `{raw}`") })
}

fn open_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

/// Reads a surname count table. The "ALL OTHER NAMES" row is excluded before
/// normalization.
pub fn load_surname_table<R: Read>(source: R, columns: &ColumnMap) -> Result<FrequencyTable<String>> {
    let mut rdr = open_reader(source);
    let headers = rdr.headers()?.clone();
    let (li, ci) = (column(&headers, &columns.label)?, column(&headers, &columns.count)?);
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        let name = rec.get(li).ok_or_else(|| Error::Parse { row, msg: "missing label".into() })?;
        let count = parse_count(rec.get(ci).unwrap_or(""), row)?;
        if name.eq_ignore_ascii_case("ALL OTHER NAMES") {
            continue;
        }
        if name.is_empty() {
            return Err(Error::Parse { row, msg: "empty surname".into() });
        }
        entries.push((name.to_ascii_uppercase(), count));
    }
    FrequencyTable::from_weights(entries)
}

/// Reads an age count table, summing counts per age over every row (sexes,
/// races, ...) and converting ages to birth years as `reference_year - age`.
pub fn load_age_table<R: Read>(
    source: R,
    columns: &ColumnMap,
    reference_year: i32,
) -> Result<FrequencyTable<i32>> {
    let mut rdr = open_reader(source);
    let headers = rdr.headers()?.clone();
    let (li, ci) = (column(&headers, &columns.label)?, column(&headers, &columns.count)?);
    let mut by_age: BTreeMap<u32, f64> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        let raw = rec.get(li).unwrap_or("");
        let age: u32 = raw
            .trim()
            .trim_end_matches('+')
            .parse()
            .map_err(|_| Error::Parse { row, msg: format!("unparsable age `{raw}`") })?;
        if age == AGE_TOTAL_SENTINEL {
            continue;
        }
        *by_age.entry(age).or_default() += parse_count(rec.get(ci).unwrap_or(""), row)?;
    }
    FrequencyTable::from_weights(by_age.into_iter().map(|(age, c)| (reference_year - age as i32, c)))
}

pub fn load_frequency_table<R: Read>(source: R, kind: TableKind, columns: &ColumnMap) -> Result<LoadedTable> {
    Ok(match kind {
        TableKind::Surname => LoadedTable::Surnames(load_surname_table(source, columns)?),
        TableKind::Age => LoadedTable::Years(load_age_table(source, columns, DEFAULT_REFERENCE_YEAR)?),
    })
}
