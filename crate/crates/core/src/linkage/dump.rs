use std::io::{Read, Write};

use super::{CountVector, Link, LinkSet};
use crate::error::{Error, Result};
use crate::popsim::Pattern;

const LINK_HEADER: [&str; 5] = ["b_unit_id", "a_unit_id", "gamma1", "gamma2", "gamma3"];
const COUNT_HEADER: [&str; 9] = ["b_unit_id", "n_total", "n_001", "n_010", "n_011", "n_100", "n_101", "n_110", "n_111"];

fn parse<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, row: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse { row, msg: format!("bad value in column {}", i + 1) })
}

fn check_header(r: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<()> {
    let h = r.headers()?;
    for name in want {
        if !h.iter().any(|c| c == *name) {
            return Err(Error::MissingColumn(name.to_string()));
        }
    }
    Ok(())
}

pub fn write_links<W: Write>(out: W, links: &LinkSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LINK_HEADER)?;
    for l in links.iter() {
        let [g1, g2, g3] = l.gamma.bits().map(|b| (b as u8).to_string());
        w.write_record([l.b.to_string(), l.a.to_string(), g1, g2, g3])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_links<R: Read>(source: R) -> Result<LinkSet> {
    let mut r = csv::Reader::from_reader(source);
    check_header(&mut r, &LINK_HEADER)?;
    let mut links = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let g: Vec<u8> = (2..5).map(|k| parse(&rec, k, row)).collect::<Result<_>>()?;
        if g.iter().any(|&x| x > 1) {
            return Err(Error::Parse { row, msg: "agreement indicators must be 0 or 1".into() });
        }
        links.push(Link { b: parse(&rec, 0, row)?, a: parse(&rec, 1, row)?, gamma: Pattern::new(g[0] == 1, g[1] == 1, g[2] == 1) });
    }
    Ok(LinkSet::from_links(links))
}

pub fn write_counts<W: Write>(out: W, counts: &[CountVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COUNT_HEADER)?;
    for c in counts {
        let mut row = vec![c.b.to_string(), c.n_total.to_string()];
        row.extend(c.nonzero_patterns().iter().map(u32::to_string));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a count dump. The `000` pattern count is restored as the part of
/// `n_total` not covered by the seven stored patterns.
pub fn read_counts<R: Read>(source: R) -> Result<Vec<CountVector>> {
    let mut r = csv::Reader::from_reader(source);
    check_header(&mut r, &COUNT_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let mut c = CountVector { b: parse(&rec, 0, row)?, n_total: parse(&rec, 1, row)?, by_pattern: [0; 8] };
        for k in 1..8 {
            c.by_pattern[k] = parse(&rec, k + 1, row)?;
        }
        let listed: u32 = c.by_pattern.iter().sum();
        c.by_pattern[0] = c.n_total.saturating_sub(listed);
        out.push(c);
    }
    Ok(out)
}
