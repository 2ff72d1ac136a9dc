//! Deterministic rule-based linkage between the two lists, and its scoring
//! against the truth deck.

mod dump;
pub mod soundex;

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::popsim::{Pattern, Population, Record, SampleFlags};
use soundex::Soundex;

pub use dump::{read_counts, read_links, write_counts, write_links};
pub use soundex::soundex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkRule {
    BaselineOnly,
    BaselineAndAnyExact,
}

impl LinkRule {
    pub fn for_scenario(id: u8) -> Self {
        if id >= 4 {
            LinkRule::BaselineAndAnyExact
        } else {
            LinkRule::BaselineOnly
        }
    }

    pub fn links(self, pair: &PairInfo) -> bool {
        match self {
            LinkRule::BaselineOnly => pair.baseline,
            LinkRule::BaselineAndAnyExact => pair.baseline && pair.gamma != Pattern::NONE,
        }
    }
}

/// A list entry: unit id plus the record as it appears on that list.
#[derive(Debug, Clone, Copy)]
pub struct Entry<'a> {
    pub id: u32,
    pub record: &'a Record,
}

/// The records of `S_B` (second register) and `S_A` (first register).
#[derive(Debug, Clone)]
pub struct Rosters<'a> {
    pub b: Vec<Entry<'a>>,
    pub a: Vec<Entry<'a>>,
}

impl<'a> Rosters<'a> {
    pub fn new(pop: &'a Population, flags: &SampleFlags) -> Self {
        let pick = |mask: &[bool], second: bool| {
            pop.units
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(u, _)| Entry { id: u.id, record: if second { &u.record_b } else { &u.record_a } })
                .collect()
        };
        Self { b: pick(&flags.in_b, true), a: pick(&flags.in_a, false) }
    }

    /// Number of matched pairs, i.e. units present on both lists.
    pub fn matched(&self) -> usize {
        let ids: std::collections::HashSet<u32> = self.a.iter().map(|e| e.id).collect();
        self.b.iter().filter(|e| ids.contains(&e.id)).count()
    }

    pub fn universe(&self) -> u64 {
        self.b.len() as u64 * self.a.len() as u64
    }
}

pub fn baseline(b: &Record, a: &Record) -> bool {
    b.year == a.year
        && b.day.abs_diff(a.day) <= 1
        && b.month.abs_diff(a.month) <= 1
        && matches!((soundex(&b.surname), soundex(&a.surname)), (Ok(x), Ok(y)) if x == y)
}

pub fn agreement(b: &Record, a: &Record) -> Pattern {
    Pattern::new(b.surname == a.surname, b.day == a.day, b.month == a.month)
}

/// Records sharing a Soundex code and birth year.
#[derive(Debug, Clone)]
pub struct Block {
    pub code: Soundex,
    pub year: i32,
    /// Positions in the `S_B` roster.
    pub b: Vec<usize>,
    /// Positions in the `S_A` roster.
    pub a: Vec<usize>,
}

impl Block {
    pub fn pair_count(&self) -> usize {
        self.b.len() * self.a.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.b.iter().flat_map(move |&i| self.a.iter().map(move |&j| (i, j)))
    }
}

/// Groups both rosters by `(soundex, year)` and returns the blocks that have
/// members on both sides, in a deterministic order.
pub fn block_pairs(b: &[Entry], a: &[Entry]) -> Result<Vec<Block>> {
    let mut map: HashMap<(Soundex, i32), (Vec<usize>, Vec<usize>)> = HashMap::new();
    for (i, e) in b.iter().enumerate() {
        map.entry((soundex(&e.record.surname)?, e.record.year)).or_default().0.push(i);
    }
    for (j, e) in a.iter().enumerate() {
        if let Some(slot) = map.get_mut(&(soundex(&e.record.surname)?, e.record.year)) {
            slot.1.push(j);
        }
    }
    let mut blocks: Vec<Block> = map
        .into_iter()
        .filter(|(_, (bs, as_))| !bs.is_empty() && !as_.is_empty())
        .map(|((code, year), (b, a))| Block { code, year, b, a })
        .collect();
    blocks.sort_by(|x, y| (x.code, x.year).cmp(&(y.code, y.year)));
    Ok(blocks)
}

/// A candidate pair with its baseline decision and agreement pattern, in
/// unit ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairInfo {
    pub b: u32,
    pub a: u32,
    pub baseline: bool,
    pub gamma: Pattern,
}

impl PairInfo {
    pub fn matched(&self) -> bool {
        self.a == self.b
    }
}

/// Evaluates every candidate pair in parallel and keeps those meeting the
/// baseline criterion, sorted by `(b, a)`.
pub fn baseline_pairs(rosters: &Rosters, blocks: &[Block]) -> Vec<PairInfo> {
    let mut out: Vec<PairInfo> = blocks
        .par_iter()
        .flat_map_iter(|blk| {
            blk.pairs().filter_map(|(i, j)| {
                let (eb, ea) = (rosters.b[i], rosters.a[j]);
                let (rb, ra) = (eb.record, ea.record);
                // Soundex and year already agree inside a block.
                let ok = rb.day.abs_diff(ra.day) <= 1 && rb.month.abs_diff(ra.month) <= 1;
                ok.then(|| PairInfo { b: eb.id, a: ea.id, baseline: true, gamma: agreement(rb, ra) })
            })
        })
        .collect();
    out.par_sort_unstable_by_key(|p| (p.b, p.a));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub b: u32,
    pub a: u32,
    pub gamma: Pattern,
}

impl Link {
    pub fn matched(&self) -> bool {
        self.a == self.b
    }
}

/// Links sorted by `(b, a)` without duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkSet {
    links: Vec<Link>,
}

impl LinkSet {
    pub fn from_links(mut links: Vec<Link>) -> Self {
        links.sort_by_key(|l| (l.b, l.a));
        links.dedup_by_key(|l| (l.b, l.a));
        Self { links }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Link> {
        self.links.iter()
    }

    pub fn contains(&self, b: u32, a: u32) -> bool {
        self.links.binary_search_by_key(&(b, a), |l| (l.b, l.a)).is_ok()
    }

    fn degrees(&self) -> (HashMap<u32, u32>, HashMap<u32, u32>) {
        let (mut db, mut da) = (HashMap::new(), HashMap::new());
        for l in &self.links {
            *db.entry(l.b).or_insert(0) += 1;
            *da.entry(l.a).or_insert(0) += 1;
        }
        (db, da)
    }

    pub fn max_degree(&self) -> u32 {
        let (db, da) = self.degrees();
        db.values().chain(da.values()).copied().max().unwrap_or(0)
    }
}

pub fn link_rule1(pairs: &[PairInfo], rule: LinkRule) -> LinkSet {
    LinkSet::from_links(
        pairs.iter().filter(|p| rule.links(p)).map(|p| Link { b: p.b, a: p.a, gamma: p.gamma }).collect(),
    )
}

/// Keeps a link only when both of its records have exactly one link in the
/// input.
pub fn dedupe_rule2(links: &LinkSet) -> LinkSet {
    let (db, da) = links.degrees();
    LinkSet {
        links: links.links.iter().filter(|l| db[&l.b] == 1 && da[&l.a] == 1).copied().collect(),
    }
}

/// Link counts of one `S_B` record: the total number of links and the number
/// of baseline pairs per agreement pattern (including `000`, which is kept so
/// that the totals add up under the baseline-only rule).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CountVector {
    pub b: u32,
    pub n_total: u32,
    pub by_pattern: [u32; 8],
}

impl CountVector {
    /// The seven pattern counts with at least one agreement, in index order.
    pub fn nonzero_patterns(&self) -> [u32; 7] {
        let mut out = [0; 7];
        out.copy_from_slice(&self.by_pattern[1..]);
        out
    }
}

pub fn counts(links: &LinkSet, pairs: &[PairInfo], roster_b: &[Entry]) -> Vec<CountVector> {
    let pos: HashMap<u32, usize> = roster_b.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
    let mut out: Vec<CountVector> = roster_b.iter().map(|e| CountVector { b: e.id, ..Default::default() }).collect();
    for l in links.iter() {
        if let Some(&i) = pos.get(&l.b) {
            out[i].n_total += 1;
        }
    }
    for p in pairs.iter().filter(|p| p.baseline) {
        if let Some(&i) = pos.get(&p.b) {
            out[i].by_pattern[p.gamma.index()] += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    /// Scores `links` given the number of matched pairs and the size of the
    /// pair universe. Matched pairs outside the candidate blocks are counted
    /// as false negatives.
    pub fn score(links: &LinkSet, matched_pairs: u64, universe: u64) -> Result<Self> {
        let tp = links.iter().filter(|l| l.matched()).count() as u64;
        let fp = links.len() as u64 - tp;
        if tp > matched_pairs || matched_pairs + fp > universe {
            return Err(Error::invalid("link set is inconsistent with the pair universe"));
        }
        let fn_ = matched_pairs - tp;
        Ok(Self { tp, fp, fn_, tn: universe - tp - fp - fn_ })
    }

    fn ratio(num: u64, den: u64, what: &str) -> Result<f64> {
        if den == 0 {
            Err(Error::Undefined(what.into()))
        } else {
            Ok(num as f64 / den as f64)
        }
    }

    pub fn recall(&self) -> Result<f64> {
        Self::ratio(self.tp, self.tp + self.fn_, "recall with no matched pairs")
    }

    pub fn precision(&self) -> Result<f64> {
        Self::ratio(self.tp, self.tp + self.fp, "precision with no links")
    }

    pub fn fpr(&self) -> Result<f64> {
        Self::ratio(self.fp, self.fp + self.tn, "false positive rate with no unmatched pairs")
    }
}

pub fn confusion(links: &LinkSet, rosters: &Rosters) -> Result<ConfusionMatrix> {
    ConfusionMatrix::score(links, rosters.matched() as u64, rosters.universe())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClericalEstimates {
    pub recall_hat: Option<f64>,
    pub precision_hat: Option<f64>,
    pub sample_size: usize,
}

/// Emulates clerical review of a simple random sample of `m` baseline pairs.
pub fn clerical_sample<R: Rng + ?Sized>(
    pairs: &[PairInfo],
    links2: &LinkSet,
    m: usize,
    rng: &mut R,
) -> Result<ClericalEstimates> {
    let base: Vec<&PairInfo> = pairs.iter().filter(|p| p.baseline).collect();
    if m == 0 {
        return Err(Error::invalid("clerical sample size must be positive"));
    }
    if m > base.len() {
        return Err(Error::invalid(format!("clerical sample of {m} exceeds {} baseline pairs", base.len())));
    }
    let (mut matched, mut matched_linked, mut linked) = (0usize, 0usize, 0usize);
    for i in index::sample(rng, base.len(), m) {
        let p = base[i];
        let is_linked = links2.contains(p.b, p.a);
        matched += p.matched() as usize;
        linked += is_linked as usize;
        matched_linked += (p.matched() && is_linked) as usize;
    }
    let frac = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    Ok(ClericalEstimates {
        recall_hat: frac(matched_linked, matched),
        precision_hat: frac(matched_linked, linked),
        sample_size: m,
    })
}
