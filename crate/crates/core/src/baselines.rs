//! Comparison coverage estimators: naive Lincoln–Petersen, the clerically
//! corrected variants, and a two-class conditional-independence mixture over
//! agreement patterns.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkage::ClericalEstimates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorId {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "r")]
    R,
    #[serde(rename = "df")]
    DF,
    #[serde(rename = "dt")]
    DT,
    #[serde(rename = "un")]
    UN,
    #[serde(rename = "mn_main")]
    MnMain,
    #[serde(rename = "mn_interactions")]
    MnInteractions,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 7] = [
        EstimatorId::Naive,
        EstimatorId::R,
        EstimatorId::DF,
        EstimatorId::DT,
        EstimatorId::UN,
        EstimatorId::MnMain,
        EstimatorId::MnInteractions,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EstimatorId::Naive => "Naive",
            EstimatorId::R => "R",
            EstimatorId::DF => "DF",
            EstimatorId::DT => "DT",
            EstimatorId::UN => "UN",
            EstimatorId::MnMain => "MN (no interactions)",
            EstimatorId::MnInteractions => "MN (2nd order interactions)",
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEstimate {
    pub estimator: EstimatorId,
    pub coverage_hat: f64,
    pub n_hat: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl CoverageEstimate {
    fn new(estimator: EstimatorId, coverage_hat: f64, n_hat: Option<f64>) -> Result<Self> {
        if !(coverage_hat > 0.0 && coverage_hat.is_finite()) {
            return Err(Error::Undefined(format!("{estimator} coverage {coverage_hat}")));
        }
        Ok(Self { estimator, coverage_hat, n_hat, diagnostics: BTreeMap::new() })
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }
}

fn lp(estimator: EstimatorId, size_a: usize, size_b: usize, m: f64) -> Result<CoverageEstimate> {
    if !(m > 0.0) {
        return Err(Error::invalid(format!("matched-pair count must be positive, got {m}")));
    }
    if size_b == 0 {
        return Err(Error::invalid("empty second list"));
    }
    CoverageEstimate::new(estimator, m / size_b as f64, Some(size_a as f64 * size_b as f64 / m))
}

pub fn lincoln_petersen(size_a: usize, size_b: usize, m: f64) -> Result<CoverageEstimate> {
    lp(EstimatorId::Naive, size_a, size_b, m)
}

/// Returns the precision-and-recall corrected (DF) and recall-only corrected
/// (DT) estimates.
pub fn df_dt_estimators(
    links2: usize,
    clerical: &ClericalEstimates,
    size_a: usize,
    size_b: usize,
) -> Result<(CoverageEstimate, CoverageEstimate)> {
    let recall = clerical.recall_hat.ok_or_else(|| Error::Undefined("clerical recall".into()))?;
    let precision = clerical.precision_hat.ok_or_else(|| Error::Undefined("clerical precision".into()))?;
    if recall <= 0.0 {
        return Err(Error::invalid("clerical recall is zero"));
    }
    let l = links2 as f64;
    let df = lp(EstimatorId::DF, size_a, size_b, l * precision / recall)?;
    let dt = lp(EstimatorId::DT, size_a, size_b, l / recall)?;
    Ok((df.with("recall_hat", recall).with("precision_hat", precision), dt.with("recall_hat", recall)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentClassFit {
    pub w: f64,
    pub theta: [f64; 3],
    pub eta: [f64; 3],
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct EmOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { max_iter: 20_000, tol: 1e-10, restarts: 3, seed: 0x3c6e_f372_fe94_f82b }
    }
}

fn bits(i: usize) -> [f64; 3] {
    [((i >> 2) & 1) as f64, ((i >> 1) & 1) as f64, (i & 1) as f64]
}

fn class_prob(probs: &[f64; 3], g: &[f64; 3]) -> f64 {
    (0..3).map(|k| if g[k] == 1.0 { probs[k] } else { 1.0 - probs[k] }).product()
}

/// Log-likelihood of a pattern histogram (indexed `4γ1 + 2γ2 + γ3`).
pub fn latent_class_loglik(hist: &[u64; 8], w: f64, theta: &[f64; 3], eta: &[f64; 3]) -> f64 {
    (0..8)
        .filter(|&i| hist[i] > 0)
        .map(|i| {
            let g = bits(i);
            hist[i] as f64 * (w * class_prob(theta, &g) + (1.0 - w) * class_prob(eta, &g)).ln()
        })
        .sum()
}

const CLAMP: f64 = 1e-12;

fn em_from(hist: &[u64; 8], mut w: f64, mut theta: [f64; 3], mut eta: [f64; 3], opts: &EmOptions) -> Result<LatentClassFit> {
    let n: f64 = hist.iter().sum::<u64>() as f64;
    let mut ll = latent_class_loglik(hist, w, &theta, &eta);
    for it in 1..=opts.max_iter {
        let mut sw = 0.0;
        let mut st = [0.0; 3];
        let mut se = [0.0; 3];
        for (i, &m) in hist.iter().enumerate() {
            if m == 0 {
                continue;
            }
            let g = bits(i);
            let a = w * class_prob(&theta, &g);
            let b = (1.0 - w) * class_prob(&eta, &g);
            let r = a / (a + b);
            let m = m as f64;
            sw += m * r;
            for k in 0..3 {
                st[k] += m * r * g[k];
                se[k] += m * (1.0 - r) * g[k];
            }
        }
        w = (sw / n).clamp(CLAMP, 1.0 - CLAMP);
        for k in 0..3 {
            theta[k] = if sw > 0.0 { (st[k] / sw).clamp(CLAMP, 1.0 - CLAMP) } else { 0.5 };
            eta[k] = if n - sw > 0.0 { (se[k] / (n - sw)).clamp(CLAMP, 1.0 - CLAMP) } else { 0.5 };
        }
        let next = latent_class_loglik(hist, w, &theta, &eta);
        if next < ll - 1e-9 * ll.abs().max(1.0) {
            return Err(Error::invalid("latent-class EM decreased the log-likelihood"));
        }
        let done = (next - ll).abs() <= opts.tol * ll.abs().max(1.0);
        ll = next;
        if done {
            return Ok(LatentClassFit { w, theta, eta, loglik: ll, iterations: it, converged: true });
        }
    }
    Ok(LatentClassFit { w, theta, eta, loglik: ll, iterations: opts.max_iter, converged: false })
}

/// EM for the two-class conditional-independence model. The matching class
/// is the one with the larger `Σθ_k`; the returned fit is relabelled so that
/// `theta` belongs to it.
pub fn latent_class_em(hist: &[u64; 8], opts: &EmOptions) -> Result<LatentClassFit> {
    if hist.iter().all(|&m| m == 0) {
        return Err(Error::invalid("empty pattern histogram"));
    }
    let populated: Vec<usize> = (0..8).filter(|&i| hist[i] > 0).collect();
    if let [only] = populated[..] {
        // A single pattern is reproduced exactly by any w; take the boundary.
        let theta = bits(only).map(|g| g.clamp(CLAMP, 1.0 - CLAMP));
        return Ok(LatentClassFit {
            w: 1.0,
            theta,
            eta: [0.5; 3],
            loglik: latent_class_loglik(hist, 1.0, &theta, &[0.5; 3]),
            iterations: 0,
            converged: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![(0.5, [0.9; 3], [0.3; 3])];
    for _ in 0..opts.restarts {
        let mut draw = || [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
        let (t, e) = (draw(), draw());
        starts.push((rng.random_range(0.1..0.9), t, e));
    }
    let mut best: Option<LatentClassFit> = None;
    for (w, t, e) in starts {
        let f = em_from(hist, w, t, e, opts)?;
        if best.as_ref().is_none_or(|b| f.loglik > b.loglik) {
            best = Some(f);
        }
    }
    let mut f = best.expect("at least one start");
    if f.eta.iter().sum::<f64>() > f.theta.iter().sum::<f64>() {
        std::mem::swap(&mut f.theta, &mut f.eta);
        f.w = 1.0 - f.w;
    }
    if !f.converged {
        log::warn!("latent-class EM stopped after {} iterations", f.iterations);
    }
    Ok(f)
}

/// Conditional-independence mixture estimate: `m̂ = w·(number of pairs)`.
pub fn racinskij_fit(hist: &[u64; 8], size_b: usize, opts: &EmOptions) -> Result<(CoverageEstimate, LatentClassFit)> {
    let fit = latent_class_em(hist, opts)?;
    let total: u64 = hist.iter().sum();
    if size_b == 0 {
        return Err(Error::invalid("empty second list"));
    }
    let m_hat = fit.w * total as f64;
    let est = CoverageEstimate::new(EstimatorId::R, m_hat / size_b as f64, None)?
        .with("w", fit.w)
        .with("pairs", total as f64)
        .with("converged", fit.converged as u8 as f64);
    Ok((est, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lincoln_petersen_arithmetic() {
        let e = lincoln_petersen(90, 90, 81.0).unwrap();
        assert_relative_eq!(e.n_hat.unwrap(), 100.0, epsilon = 1e-12);
        assert_relative_eq!(e.coverage_hat, 0.9, epsilon = 1e-15);
        assert_eq!(lincoln_petersen(50, 40, 40.0).unwrap().coverage_hat, 1.0);
        assert!(lincoln_petersen(5, 5, 0.0).is_err());
    }

    #[test]
    fn df_dt_examples() {
        let c = ClericalEstimates { recall_hat: Some(0.95), precision_hat: Some(1.0), sample_size: 1000 };
        let (df, dt) = df_dt_estimators(7695, &c, 9000, 9000).unwrap();
        assert_relative_eq!(dt.coverage_hat, 0.9, epsilon = 1e-12);
        assert_relative_eq!(df.coverage_hat, dt.coverage_hat, epsilon = 1e-15);
        let c = ClericalEstimates { recall_hat: Some(0.9), precision_hat: Some(0.97), sample_size: 1000 };
        let (df, dt) = df_dt_estimators(7000, &c, 9000, 9000).unwrap();
        assert!(dt.coverage_hat >= df.coverage_hat);
        let z = ClericalEstimates { recall_hat: Some(0.0), precision_hat: Some(1.0), sample_size: 10 };
        assert!(df_dt_estimators(10, &z, 10, 10).is_err());
    }

    #[test]
    fn all_agreeing_pairs_fill_the_match_class() {
        let mut h = [0u64; 8];
        h[7] = 500;
        let (e, f) = racinskij_fit(&h, 400, &EmOptions::default()).unwrap();
        assert_eq!(f.w, 1.0);
        assert_relative_eq!(e.coverage_hat, 500.0 / 400.0, epsilon = 1e-12);
    }

    #[test]
    fn coverage_is_match_share_over_list_size() {
        let h = expected_hist(0.2, [0.95, 0.9, 0.9], [0.1, 0.2, 0.15], 50_000.0);
        let (e, f) = racinskij_fit(&h, 9000, &EmOptions::default()).unwrap();
        let total: u64 = h.iter().sum();
        assert_relative_eq!(e.coverage_hat, f.w * total as f64 / 9000.0, epsilon = 1e-12);
        assert!((f.w - 0.2).abs() < 2e-3, "{f:?}");
    }

    fn expected_hist(w: f64, theta: [f64; 3], eta: [f64; 3], n: f64) -> [u64; 8] {
        let mut h = [0u64; 8];
        for (i, slot) in h.iter_mut().enumerate() {
            let g = bits(i);
            *slot = (n * (w * class_prob(&theta, &g) + (1.0 - w) * class_prob(&eta, &g))).round() as u64;
        }
        h
    }

    #[test]
    fn em_matches_grid_search() {
        let h = expected_hist(0.35, [0.9, 0.85, 0.8], [0.2, 0.1, 0.3], 1e8);
        let f = latent_class_em(&h, &EmOptions::default()).unwrap();
        assert!((f.w - 0.35).abs() < 1e-3, "{f:?}");
        // Profile the likelihood over a dense grid of w with the class
        // profiles held at the EM solution.
        let best_w = (1..10_000)
            .map(|i| i as f64 / 10_000.0)
            .max_by(|a, b| latent_class_loglik(&h, *a, &f.theta, &f.eta).total_cmp(&latent_class_loglik(&h, *b, &f.theta, &f.eta)))
            .unwrap();
        assert!((best_w - f.w).abs() < 1e-3);
    }

    #[test]
    fn em_is_monotone() {
        let h = [4000, 300, 250, 90, 120, 80, 60, 900];
        let opts = EmOptions::default();
        let mut prev = f64::NEG_INFINITY;
        for iters in [1, 2, 5, 10, 50] {
            let f = em_from(&h, 0.5, [0.9; 3], [0.3; 3], &EmOptions { max_iter: iters, tol: 0.0, ..opts.clone() }).unwrap();
            assert!(f.loglik >= prev - 1e-9);
            prev = f.loglik;
        }
    }
}
