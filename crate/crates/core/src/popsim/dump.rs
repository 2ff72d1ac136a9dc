use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Population, Record, SampleFlags, Unit};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    unit_id: u32,
    surname_a: String,
    day_a: u8,
    month_a: u8,
    year_a: i32,
    surname_b: String,
    day_b: u8,
    month_b: u8,
    year_b: i32,
    in_a: u8,
    in_b: u8,
}

pub fn write_population<W: Write>(out: W, pop: &Population, flags: &SampleFlags) -> Result<()> {
    if flags.in_a.len() != pop.len() || flags.in_b.len() != pop.len() {
        return Err(Error::invalid("sample flags do not match the population size"));
    }
    let mut w = csv::Writer::from_writer(out);
    for (i, u) in pop.units.iter().enumerate() {
        w.serialize(Row {
            unit_id: u.id,
            surname_a: u.record_a.surname.clone(),
            day_a: u.record_a.day,
            month_a: u.record_a.month,
            year_a: u.record_a.year,
            surname_b: u.record_b.surname.clone(),
            day_b: u.record_b.day,
            month_b: u.record_b.month,
            year_b: u.record_b.year,
            in_a: flags.in_a[i] as u8,
            in_b: flags.in_b[i] as u8,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dump written by [`write_population`]. The inclusion
/// probabilities are not stored, so the returned flags carry the observed
/// inclusion fractions instead.
pub fn read_population<R: Read>(source: R) -> Result<(Population, SampleFlags)> {
    let mut r = csv::Reader::from_reader(source);
    let mut units = Vec::new();
    let (mut in_a, mut in_b) = (Vec::new(), Vec::new());
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Parse { row: i + 2, msg: e.to_string() })?;
        if row.unit_id as usize != i + 1 {
            return Err(Error::Parse { row: i + 2, msg: format!("expected unit_id {}, found {}", i + 1, row.unit_id) });
        }
        let record_a = Record { surname: row.surname_a, day: row.day_a, month: row.month_a, year: row.year_a };
        let record_b = Record { surname: row.surname_b, day: row.day_b, month: row.month_b, year: row.year_b };
        if !record_a.is_valid() || !record_b.is_valid() {
            return Err(Error::Parse { row: i + 2, msg: "day or month out of range".into() });
        }
        units.push(Unit { id: row.unit_id, record_a, record_b });
        in_a.push(row.in_a != 0);
        in_b.push(row.in_b != 0);
    }
    if units.is_empty() {
        return Err(Error::invalid("population dump has no rows"));
    }
    let frac = |v: &[bool]| v.iter().filter(|&&x| x).count() as f64 / v.len() as f64;
    let flags = SampleFlags { pi_a: frac(&in_a), pi_b: frac(&in_b), in_a, in_b };
    Ok((Population { units, forced_same_surname: 0 }, flags))
}
