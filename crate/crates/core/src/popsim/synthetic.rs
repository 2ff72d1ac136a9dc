//! Bundled census-like tables so that simulations run without external files.
//!
//! The surname table is generated deterministically: 4000 Soundex codes with
//! Zipf–Mandelbrot code weights, each code holding a handful of invented
//! surnames with a skewed within-code distribution. Its Soundex collision
//! rate and within-code concentration are of the same order as the 1990 US
//! census surname list.

use std::collections::HashSet;
use std::sync::OnceLock;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::table::FrequencyTable;
#[cfg(test)]
use crate::linkage::soundex::soundex;

const CODES: usize = 4000;
const CODE_OFFSET: f64 = 2.0;
const CODE_EXPONENT: f64 = 0.7;
const NAME_EXPONENT: f64 = 1.1;
const TABLE_SEED: u64 = 0x5eed_0f_5a_4e_a3e5;

const VOWELS: &[u8] = b"AEIOUY";
const GROUPS: [&[u8]; 6] = [b"BFPV", b"CGJKQSXZ", b"DT", b"L", b"MN", b"R"];

// Rough first-letter frequencies of US surnames (per mille).
const LETTER_WEIGHTS: [(u8, f64); 26] = [
    (b'A', 35.0), (b'B', 90.0), (b'C', 75.0), (b'D', 50.0), (b'E', 18.0), (b'F', 35.0),
    (b'G', 50.0), (b'H', 75.0), (b'I', 5.0), (b'J', 25.0), (b'K', 35.0), (b'L', 45.0),
    (b'M', 95.0), (b'N', 18.0), (b'O', 12.0), (b'P', 45.0), (b'Q', 2.0), (b'R', 55.0),
    (b'S', 95.0), (b'T', 35.0), (b'U', 3.0), (b'V', 15.0), (b'W', 45.0), (b'X', 0.5),
    (b'Y', 6.0), (b'Z', 6.0),
];

// Weights of digits 1..6 inside a code, and of ending the code early.
const DIGIT_WEIGHTS: [f64; 6] = [1.0, 1.6, 1.0, 1.1, 1.4, 1.5];
const STOP_WEIGHT: f64 = 0.45;

#[derive(Debug, Clone)]
struct Code {
    letter: u8,
    digits: Vec<u8>,
}

fn all_codes() -> Vec<Code> {
    let mut out = Vec::new();
    for &(letter, _) in &LETTER_WEIGHTS {
        out.push(Code { letter, digits: vec![] });
        for a in 1..=6 {
            out.push(Code { letter, digits: vec![a] });
            for b in 1..=6 {
                out.push(Code { letter, digits: vec![a, b] });
                for c in 1..=6 {
                    out.push(Code { letter, digits: vec![a, b, c] });
                }
            }
        }
    }
    out
}

fn plausibility(code: &Code) -> f64 {
    let letter = LETTER_WEIGHTS.iter().find(|(l, _)| *l == code.letter).map_or(1.0, |(_, w)| *w);
    let digits: f64 = code.digits.iter().map(|&d| DIGIT_WEIGHTS[d as usize - 1]).product();
    let stops = STOP_WEIGHT.powi(3 - code.digits.len() as i32);
    letter * digits * stops
}

fn spell<R: Rng>(code: &Code, rng: &mut R) -> String {
    let mut s = vec![code.letter];
    if rng.random_bool(0.5) && code.digits.is_empty() {
        s.push(*VOWELS.choose(rng).unwrap());
    }
    for &d in &code.digits {
        s.push(*VOWELS.choose(rng).unwrap());
        let c = *GROUPS[d as usize - 1].choose(rng).unwrap();
        s.push(c);
        if rng.random_bool(0.15) {
            s.push(c);
        }
    }
    if rng.random_bool(0.4) {
        s.push(*VOWELS[..5].choose(rng).unwrap());
    }
    String::from_utf8(s).expect("ASCII")
}

fn build_surnames() -> FrequencyTable<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(TABLE_SEED);
    let mut scored: Vec<(f64, Code)> = all_codes()
        .into_iter()
        .map(|c| (plausibility(&c) * rng.random_range(0.5..1.5), c))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut entries = Vec::new();
    for (rank, (_, code)) in scored.into_iter().take(CODES).enumerate() {
        let code_weight = (rank as f64 + CODE_OFFSET).powf(-CODE_EXPONENT);
        let members = 2 + (24.0 / (1.0 + rank as f64).powf(0.35)) as usize;
        let mut names = Vec::with_capacity(members);
        let mut seen = HashSet::new();
        let mut attempts = 0;
        while names.len() < members && attempts < 200 * members {
            attempts += 1;
            let name = spell(&code, &mut rng);
            if seen.insert(name.clone()) {
                names.push(name);
            }
        }
        let within: Vec<f64> = (0..names.len()).map(|j| (j as f64 + 1.0).powf(-NAME_EXPONENT)).collect();
        let total: f64 = within.iter().sum();
        for (name, w) in names.into_iter().zip(within) {
            entries.push((name, code_weight * w / total));
        }
    }
    FrequencyTable::from_weights(entries).expect("synthetic surname table is valid")
}

/// The bundled surname table (built once per process).
pub fn synthetic_surnames() -> &'static FrequencyTable<String> {
    static TABLE: OnceLock<FrequencyTable<String>> = OnceLock::new();
    TABLE.get_or_init(build_surnames)
}

/// Bundled age pyramid for ages 0–84, converted to birth years.
pub fn synthetic_ages(reference_year: i32) -> FrequencyTable<i32> {
    let bands: [(usize, f64); 7] = [(20, 4.0), (10, 4.2), (15, 4.0), (15, 4.4), (10, 3.6), (10, 2.2), (5, 1.2)];
    let weights = bands.iter().flat_map(|&(n, w)| std::iter::repeat_n(w, n));
    FrequencyTable::from_weights(weights.enumerate().map(|(age, w)| (reference_year - age as i32, w)))
        .expect("synthetic age table is valid")
}

#[cfg(test)]
fn soundex_collision_rate(table: &FrequencyTable<String>) -> f64 {
    let mut mass = std::collections::HashMap::new();
    for (name, p) in table.iter() {
        *mass.entry(soundex(name).unwrap()).or_insert(0.0) += p;
    }
    mass.values().map(|m| m * m).sum()
}
