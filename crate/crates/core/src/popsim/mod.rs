//! Synthetic populations of person records and the two-register perturbation
//! model used by the simulation study.

mod dump;
mod synthetic;
mod table;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkage::soundex::{soundex, Soundex};
use crate::rng::{stream, Stream};

pub use dump::{read_population, write_population};
pub use synthetic::{synthetic_ages, synthetic_surnames};
pub use table::{
    load_age_table, load_frequency_table, load_surname_table, ColumnMap, FrequencyTable, LoadedTable,
    TableKind, DEFAULT_REFERENCE_YEAR,
};

pub const DAYS: u8 = 30;
pub const MONTHS: u8 = 12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub surname: String,
    pub day: u8,
    pub month: u8,
    pub year: i32,
}

impl Record {
    pub fn is_valid(&self) -> bool {
        (1..=DAYS).contains(&self.day) && (1..=MONTHS).contains(&self.month) && !self.surname.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub id: u32,
    pub record_a: Record,
    pub record_b: Record,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub units: Vec<Unit>,
    /// Units whose surname had to be kept because its Soundex class has no
    /// other member.
    pub forced_same_surname: usize,
}

impl Population {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// Log-linear coefficients of the perturbation pattern distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationParams {
    pub u_main: [f64; 3],
    /// Pair terms in the order (1,2), (1,3), (2,3).
    pub u_pair: [f64; 3],
    pub u_triple: f64,
}

impl PerturbationParams {
    pub fn symmetric(main: f64, pair: f64, triple: f64) -> Self {
        Self { u_main: [main; 3], u_pair: [pair; 3], u_triple: triple }
    }

    /// Coefficients of the five simulation scenarios.
    pub fn scenario(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Self::symmetric(1.0, 0.0, 0.0)),
            2 | 4 => Ok(Self::symmetric(1.0, 1.0, 0.0)),
            3 | 5 => Ok(Self::symmetric(1.0, 1.0, 0.25)),
            _ => Err(Error::invalid(format!("unknown scenario {id}"))),
        }
    }

    fn log_weight(&self, p: Pattern) -> f64 {
        let g = p.bits();
        let mut s = 0.0;
        for k in 0..3 {
            if g[k] {
                s += self.u_main[k];
            }
        }
        for (i, (a, b)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
            if g[a] && g[b] {
                s += self.u_pair[i];
            }
        }
        if g[0] && g[1] && g[2] {
            s += self.u_triple;
        }
        s
    }
}

/// Agreement / perturbation pattern `(γ1, γ2, γ3)` over surname, day and
/// month. Stored as `4·γ1 + 2·γ2 + γ3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pattern(pub u8);

impl Pattern {
    pub const NONE: Pattern = Pattern(0);
    pub const ALL: Pattern = Pattern(7);

    pub fn new(surname: bool, day: bool, month: bool) -> Self {
        Pattern((surname as u8) << 2 | (day as u8) << 1 | month as u8)
    }

    pub fn bits(self) -> [bool; 3] {
        [self.0 & 4 != 0, self.0 & 2 != 0, self.0 & 1 != 0]
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Label such as `101`.
    pub fn label(self) -> String {
        self.bits().iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn all() -> impl Iterator<Item = Pattern> {
        (0..8).map(Pattern)
    }

    /// The seven patterns with at least one agreement, in index order.
    pub fn nonzero() -> impl Iterator<Item = Pattern> {
        (1..8).map(Pattern)
    }
}

/// `P(γ)` for all eight patterns, indexed by [`Pattern::index`].
pub fn pattern_distribution(params: &PerturbationParams) -> [f64; 8] {
    let logw: Vec<f64> = Pattern::all().map(|p| params.log_weight(p)).collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; 8];
    let mut total = 0.0;
    for (o, lw) in out.iter_mut().zip(&logw) {
        *o = (lw - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
    out
}

pub fn draw_pattern<R: Rng + ?Sized>(dist: &[f64; 8], rng: &mut R) -> Pattern {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return Pattern(i as u8);
        }
    }
    // Rounding left `acc` just below 1; return the last pattern with mass.
    Pattern(dist.iter().rposition(|&p| p > 0.0).unwrap_or(7) as u8)
}

/// Census surnames grouped by Soundex code.
#[derive(Debug, Clone)]
pub struct SoundexIndex {
    classes: HashMap<Soundex, FrequencyTable<String>>,
}

impl SoundexIndex {
    pub fn build(surnames: &FrequencyTable<String>) -> Result<Self> {
        let mut groups: HashMap<Soundex, Vec<(String, f64)>> = HashMap::new();
        for (name, p) in surnames.iter() {
            groups.entry(soundex(name)?).or_default().push((name.clone(), p));
        }
        let classes = groups
            .into_iter()
            .map(|(code, members)| Ok((code, FrequencyTable::from_weights(members)?)))
            .collect::<Result<_>>()?;
        Ok(Self { classes })
    }

    pub fn class(&self, code: &Soundex) -> Option<&FrequencyTable<String>> {
        self.classes.get(code)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

fn shift_within<R: Rng + ?Sized>(value: u8, max: u8, rng: &mut R) -> u8 {
    if value <= 1 {
        2
    } else if value >= max {
        max - 1
    } else if rng.random_bool(0.5) {
        value + 1
    } else {
        value - 1
    }
}

/// Applies the perturbations selected by `gamma` (a zero bit means "perturb").
/// Returns the new record and whether the surname perturbation had to be
/// skipped because the Soundex class is a singleton.
pub fn perturb_record<R: Rng + ?Sized>(
    rec: &Record,
    gamma: Pattern,
    index: &SoundexIndex,
    rng: &mut R,
) -> Result<(Record, bool)> {
    let [same_surname, same_day, same_month] = gamma.bits();
    let mut out = rec.clone();
    let mut forced = false;
    if !same_surname {
        let code = soundex(&rec.surname)?;
        let class = index
            .class(&code)
            .ok_or_else(|| Error::invalid(format!("surname {} not in the Soundex index", rec.surname)))?;
        if class.labels().iter().all(|n| *n == rec.surname) {
            forced = true;
        } else {
            loop {
                let candidate = class.sample(rng);
                if *candidate != rec.surname {
                    out.surname = candidate.clone();
                    break;
                }
            }
        }
    }
    if !same_day {
        out.day = shift_within(rec.day, DAYS, rng);
    }
    if !same_month {
        out.month = shift_within(rec.month, MONTHS, rng);
    }
    Ok((out, forced))
}

/// Inputs shared by every unit of a generated population.
#[derive(Debug, Clone)]
pub struct PopulationModel {
    pub surnames: FrequencyTable<String>,
    pub years: FrequencyTable<i32>,
    pub params: PerturbationParams,
    pub index: SoundexIndex,
}

impl PopulationModel {
    pub fn new(surnames: FrequencyTable<String>, years: FrequencyTable<i32>, params: PerturbationParams) -> Result<Self> {
        let index = SoundexIndex::build(&surnames)?;
        Ok(Self { surnames, years, params, index })
    }

    /// Bundled synthetic census-like tables.
    pub fn synthetic(params: PerturbationParams, year_group: u32) -> Result<Self> {
        let years = synthetic_ages(DEFAULT_REFERENCE_YEAR).grouped_years(year_group)?;
        Self::new(synthetic_surnames().clone(), years, params)
    }
}

/// Generates `n` units. Unit `i` draws from its own stream keyed by
/// `(seed, rep, i)`, so smaller populations are prefixes of larger ones.
pub fn generate_population(n: usize, model: &PopulationModel, seed: u64, rep: u64) -> Result<Population> {
    if n == 0 {
        return Err(Error::invalid("population size must be at least 1"));
    }
    let dist = pattern_distribution(&model.params);
    let forced = AtomicUsize::new(0);
    let units = (0..n)
        .into_par_iter()
        .map(|i| {
            let id = i as u32 + 1;
            let mut rng = stream(seed, Stream::Population, rep, id as u64);
            let record_a = Record {
                surname: model.surnames.sample(&mut rng).clone(),
                year: *model.years.sample(&mut rng),
                month: rng.random_range(1..=MONTHS),
                day: rng.random_range(1..=DAYS),
            };
            let gamma = draw_pattern(&dist, &mut rng);
            let (record_b, f) = perturb_record(&record_a, gamma, &model.index, &mut rng)?;
            if f {
                forced.fetch_add(1, Ordering::Relaxed);
            }
            Ok(Unit { id, record_a, record_b })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Population { units, forced_same_surname: forced.into_inner() })
}

/// Bernoulli inclusion flags for the two lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFlags {
    pub in_a: Vec<bool>,
    pub in_b: Vec<bool>,
    pub pi_a: f64,
    pub pi_b: f64,
}

impl SampleFlags {
    pub fn size_a(&self) -> usize {
        self.in_a.iter().filter(|&&x| x).count()
    }

    pub fn size_b(&self) -> usize {
        self.in_b.iter().filter(|&&x| x).count()
    }

    pub fn overlap(&self) -> usize {
        self.in_a.iter().zip(&self.in_b).filter(|(a, b)| **a && **b).count()
    }
}

pub fn draw_samples(n: usize, pi_a: f64, pi_b: f64, seed: u64, rep: u64) -> Result<SampleFlags> {
    for (name, p) in [("pi_a", pi_a), ("pi_b", pi_b)] {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(format!("{name} must lie in (0, 1], got {p}")));
        }
    }
    let draw = |tag: Stream, p: f64| -> Vec<bool> {
        (0..n)
            .into_par_iter()
            .map(|i| stream(seed, tag, rep, i as u64 + 1).random_bool(p))
            .collect()
    };
    Ok(SampleFlags { in_a: draw(Stream::SampleA, pi_a), in_b: draw(Stream::SampleB, pi_b), pi_a, pi_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(params: PerturbationParams) -> PopulationModel {
        let surnames = FrequencyTable::from_weights(vec![
            ("SMITH".to_string(), 5.0),
            ("SMYTH".to_string(), 1.0),
            ("SCHMIDT".to_string(), 2.0),
            ("JARO".to_string(), 1.0),
        ])
        .unwrap();
        let years = FrequencyTable::from_weights(vec![(1980, 1.0), (1990, 1.0)]).unwrap();
        PopulationModel::new(surnames, years, params).unwrap()
    }

    #[test]
    fn scenario_one_pattern_probabilities() {
        let d = pattern_distribution(&PerturbationParams::scenario(1).unwrap());
        let e = std::f64::consts::E;
        assert!((d[7] - e.powi(3) / (1.0 + e).powi(3)).abs() < 1e-15);
        assert!((d[7] - 0.3907).abs() < 1e-4);
        assert!((d[0] - 0.01945).abs() < 1e-5);
    }

    #[test]
    fn zero_params_are_uniform_and_sums_are_one() {
        let d = pattern_distribution(&PerturbationParams::symmetric(0.0, 0.0, 0.0));
        assert!(d.iter().all(|p| (p - 0.125).abs() < 1e-15));
        let d2 = pattern_distribution(&PerturbationParams::scenario(2).unwrap());
        assert!((d2.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn huge_main_terms_always_agree() {
        let d = pattern_distribution(&PerturbationParams::symmetric(1e6, 0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| draw_pattern(&d, &mut rng) == Pattern::ALL));
    }

    #[test]
    fn identity_pattern_keeps_record() {
        let m = small_model(PerturbationParams::scenario(1).unwrap());
        let rec = Record { surname: "SMITH".into(), day: 14, month: 6, year: 1980 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (out, forced) = perturb_record(&rec, Pattern::ALL, &m.index, &mut rng).unwrap();
        assert_eq!(out, rec);
        assert!(!forced);
    }

    #[test]
    fn boundary_days_and_months_move_inward() {
        let m = small_model(PerturbationParams::scenario(1).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Pattern::new(true, false, false);
        for _ in 0..50 {
            let hi = Record { surname: "JARO".into(), day: 30, month: 12, year: 1990 };
            let (o, _) = perturb_record(&hi, g, &m.index, &mut rng).unwrap();
            assert_eq!((o.day, o.month), (29, 11));
            let lo = Record { day: 1, month: 1, ..hi };
            let (o, _) = perturb_record(&lo, g, &m.index, &mut rng).unwrap();
            assert_eq!((o.day, o.month), (2, 2));
        }
    }

    #[test]
    fn surname_perturbation_stays_in_class() {
        let m = small_model(PerturbationParams::scenario(1).unwrap());
        let g = Pattern::new(false, true, true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rec = Record { surname: "SMITH".into(), day: 3, month: 3, year: 1980 };
        for _ in 0..1000 {
            let (o, forced) = perturb_record(&rec, g, &m.index, &mut rng).unwrap();
            assert!(!forced);
            assert_ne!(o.surname, rec.surname);
            assert_eq!(soundex(&o.surname).unwrap(), soundex(&rec.surname).unwrap());
            assert_eq!(o.year, rec.year);
        }
        // JARO is alone in J600.
        let lone = Record { surname: "JARO".into(), ..rec };
        let (o, forced) = perturb_record(&lone, g, &m.index, &mut rng).unwrap();
        assert!(forced);
        assert_eq!(o.surname, "JARO");
    }

    #[test]
    fn generation_is_deterministic_and_prefix_stable() {
        let m = small_model(PerturbationParams::scenario(2).unwrap());
        let a = generate_population(300, &m, 11, 0).unwrap();
        let b = generate_population(300, &m, 11, 0).unwrap();
        let c = generate_population(100, &m, 11, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a.units[..100], &c.units[..]);
        assert!(a.units.iter().enumerate().all(|(i, u)| u.id as usize == i + 1));
        assert!(a.units.iter().all(|u| u.record_a.is_valid() && u.record_b.is_valid()));
    }

    #[test]
    fn single_surname_population() {
        let surnames = FrequencyTable::from_weights(vec![("SMITH".to_string(), 1.0)]).unwrap();
        let years = FrequencyTable::from_weights(vec![(1970, 1.0)]).unwrap();
        let m = PopulationModel::new(surnames, years, PerturbationParams::scenario(1).unwrap()).unwrap();
        let p = generate_population(1, &m, 1, 0).unwrap();
        assert_eq!(p.units[0].record_a.surname, "SMITH");
        assert_eq!(p.units[0].record_a.year, 1970);
        assert_eq!(p.units[0].record_b.surname, "SMITH");
    }

    #[test]
    fn full_inclusion_and_bad_probabilities() {
        let s = draw_samples(100, 1.0, 1.0, 3, 0).unwrap();
        assert_eq!((s.size_a(), s.size_b(), s.overlap()), (100, 100, 100));
        assert!(draw_samples(10, 0.0, 0.5, 3, 0).is_err());
        assert!(draw_samples(10, 0.5, 1.5, 3, 0).is_err());
    }
}
