//! Univariate neighbor model: the number of links from a record follows a
//! finite mixture of Bernoulli(p) + Poisson(λ) convolutions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{self, Component, Constraint, CountTable, FitOptions, MixtureParams};
use crate::poisson;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniComponent {
    pub alpha: f64,
    pub p: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniMixtureParams {
    pub components: Vec<UniComponent>,
    pub shared_p: bool,
}

impl UniMixtureParams {
    pub fn single(p: f64, lambda: f64) -> Self {
        Self { components: vec![UniComponent { alpha: 1.0, p, lambda }], shared_p: false }
    }

    pub fn validate(&self) -> Result<()> {
        self.to_mixture().validate()?;
        if self.shared_p && self.components.windows(2).any(|w| w[0].p != w[1].p) {
            return Err(Error::invalid("shared_p set but class probabilities differ"));
        }
        Ok(())
    }

    pub fn to_mixture(&self) -> MixtureParams {
        MixtureParams {
            components: self
                .components
                .iter()
                .map(|c| Component { alpha: c.alpha, p: vec![c.p], lambda: vec![c.lambda] })
                .collect(),
            loglinear: None,
        }
    }

    fn from_mixture(m: &MixtureParams, shared_p: bool) -> Self {
        Self {
            components: m
                .components
                .iter()
                .map(|c| UniComponent { alpha: c.alpha, p: c.p[0], lambda: c.lambda[0] })
                .collect(),
            shared_p,
        }
    }

    pub fn canonicalize(&mut self) {
        self.components
            .sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.alpha.total_cmp(&b.alpha)).then(a.p.total_cmp(&b.p)));
    }

    pub fn p_bar(&self) -> f64 {
        self.components.iter().map(|c| c.alpha * c.p).sum()
    }

    pub fn lambda_bar(&self) -> f64 {
        self.components.iter().map(|c| c.alpha * c.lambda).sum()
    }
}

/// Multiplicities of the per-record link counts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountHistogram {
    pub counts: BTreeMap<u32, u64>,
    pub total: u64,
}

impl CountHistogram {
    pub fn from_counts(counts: impl IntoIterator<Item = u32>) -> Self {
        let mut h = Self::default();
        for n in counts {
            *h.counts.entry(n).or_default() += 1;
            h.total += 1;
        }
        h
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, u64)>) -> Self {
        let mut h = Self::default();
        for (n, m) in pairs.into_iter().filter(|(_, m)| *m > 0) {
            *h.counts.entry(n).or_default() += m;
            h.total += m;
        }
        h
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn mean(&self) -> f64 {
        self.counts.iter().map(|(&n, &m)| n as f64 * m as f64).sum::<f64>() / self.total as f64
    }

    pub fn to_table(&self, tau: u32) -> Result<CountTable> {
        CountTable::from_multiplicities(1, tau, self.counts.iter().map(|(&n, &m)| (vec![n], m)))
    }
}

pub fn comp_pmf(n: u32, p: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("p must lie in [0, 1], got {p}")));
    }
    let n = n as i64;
    Ok((1.0 - p) * poisson::pmf(n, lambda) + p * poisson::pmf(n - 1, lambda))
}

pub fn mix_pmf(n: u32, theta: &UniMixtureParams) -> Result<f64> {
    theta.validate()?;
    theta.components.iter().map(|c| Ok(c.alpha * comp_pmf(n, c.p, c.lambda)?)).sum()
}

/// Capped log-likelihood with the tail mass taken as one minus the capped
/// support.
pub fn capped_loglik(hist: &CountHistogram, theta: &UniMixtureParams, tau: u32) -> Result<f64> {
    if tau == 0 {
        return Err(Error::invalid("tau must be at least 1"));
    }
    let mut ll = 0.0;
    let mut inside = 0.0;
    for n in 0..=tau {
        let f = mix_pmf(n, theta)?;
        inside += f;
        if let Some(&m) = hist.counts.get(&n) {
            ll += m as f64 * f.ln();
        }
    }
    let over: u64 = hist.counts.range(tau + 1..).map(|(_, m)| m).sum();
    if over > 0 {
        let tail = 1.0 - inside;
        if tail <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        ll += over as f64 * tail.ln();
    }
    Ok(ll)
}

/// Moment-based start: equal weights, `p₀` the share of records with a link,
/// and intensities spread around the excess mean.
pub fn initial_params(hist: &CountHistogram, g: usize, shared_p: bool, nu: f64) -> UniMixtureParams {
    let linked = hist.counts.iter().filter(|(&n, _)| n > 0).map(|(_, &m)| m).sum::<u64>() as f64 / hist.total as f64;
    let p0 = linked.clamp(nu, 1.0 - nu);
    let base = (hist.mean() - p0).max(0.05);
    let components = (1..=g)
        .map(|k| UniComponent { alpha: 1.0 / g as f64, p: p0, lambda: base * 2.0 * k as f64 / (g as f64 + 1.0) })
        .collect();
    UniMixtureParams { components, shared_p }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniFit {
    pub params: UniMixtureParams,
    pub loglik: f64,
    pub init_loglik: f64,
    pub parameters: usize,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn constraint(shared_p: bool) -> Constraint {
    if shared_p {
        Constraint::SharedP
    } else {
        Constraint::Free
    }
}

pub fn fit_from(hist: &CountHistogram, start: &UniMixtureParams, tau: u32, opts: &FitOptions) -> Result<UniFit> {
    if hist.is_empty() {
        return Err(Error::invalid("empty count histogram"));
    }
    let f = mixture::fit(&hist.to_table(tau)?, &constraint(start.shared_p), &start.to_mixture(), opts)?;
    Ok(UniFit {
        params: UniMixtureParams::from_mixture(&f.params, start.shared_p),
        loglik: f.loglik,
        init_loglik: f.init_loglik,
        parameters: f.parameters,
        aic: f.aic,
        iterations: f.iterations,
        converged: f.converged,
    })
}

pub fn fit_uni(hist: &CountHistogram, g: usize, shared_p: bool, tau: u32, opts: &FitOptions) -> Result<UniFit> {
    if g == 0 {
        return Err(Error::invalid("G must be at least 1"));
    }
    if hist.is_empty() {
        return Err(Error::invalid("empty count histogram"));
    }
    fit_from(hist, &initial_params(hist, g, shared_p, opts.nu), tau, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniSelection {
    pub g_hat: usize,
    pub fit: UniFit,
    pub aic_trace: Vec<(usize, f64)>,
}

pub fn param_count(g: usize, shared_p: bool) -> usize {
    if shared_p {
        2 * g
    } else {
        3 * g - 1
    }
}

pub fn select_g(hist: &CountHistogram, g_max: usize, shared_p: bool, tau: u32, opts: &FitOptions) -> Result<UniSelection> {
    if g_max == 0 {
        return Err(Error::invalid("G_max must be at least 1"));
    }
    let mut best: Option<UniFit> = None;
    let mut trace = Vec::with_capacity(g_max);
    for g in 1..=g_max {
        let f = fit_uni(hist, g, shared_p, tau, opts)?;
        trace.push((g, f.aic));
        if best.as_ref().is_none_or(|b| f.aic < b.aic) {
            best = Some(f);
        }
    }
    let fit = best.expect("g_max >= 1");
    Ok(UniSelection { g_hat: fit.params.components.len(), fit, aic_trace: trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub p_bar: f64,
    pub lambda_bar: f64,
    pub precision_hat: Option<f64>,
    pub coverage_lower_bound: f64,
    pub coverage_hat: Option<f64>,
    pub recall_hat: Option<f64>,
}

pub fn accuracy_from_fit(
    theta: &UniMixtureParams,
    known_recall: Option<f64>,
    known_coverage: Option<f64>,
) -> Result<AccuracySummary> {
    for (name, v) in [("known recall", known_recall), ("known coverage", known_coverage)] {
        if let Some(x) = v {
            if !(x > 0.0 && x <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1], got {x}")));
            }
        }
    }
    let p_bar = theta.p_bar();
    let lambda_bar = theta.lambda_bar();
    let denom = p_bar + lambda_bar;
    Ok(AccuracySummary {
        p_bar,
        lambda_bar,
        precision_hat: (denom > 0.0).then(|| p_bar / denom),
        coverage_lower_bound: p_bar,
        coverage_hat: known_recall.map(|r| p_bar / r),
        recall_hat: known_coverage.map(|c| p_bar / c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::mixture_pmf;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_class() -> UniMixtureParams {
        UniMixtureParams {
            components: vec![
                UniComponent { alpha: 0.5, p: 0.8, lambda: 0.1 },
                UniComponent { alpha: 0.5, p: 0.6, lambda: 0.3 },
            ],
            shared_p: false,
        }
    }

    #[test]
    fn comp_pmf_values() {
        assert_relative_eq!(comp_pmf(0, 0.9, 0.5).unwrap(), 0.1 * (-0.5f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(comp_pmf(1, 0.9, 0.5).unwrap(), 0.576204, epsilon = 1e-6);
        assert!(comp_pmf(1, 0.5, 0.0).is_err());
    }

    #[test]
    fn mixture_degeneracy() {
        let one = UniMixtureParams::single(0.7, 1.3);
        let twin = UniMixtureParams {
            components: vec![UniComponent { alpha: 0.5, p: 0.7, lambda: 1.3 }; 2],
            shared_p: true,
        };
        for n in 0..10 {
            let c = comp_pmf(n, 0.7, 1.3).unwrap();
            assert_relative_eq!(mix_pmf(n, &one).unwrap(), c, max_relative = 1e-14);
            assert_relative_eq!(mix_pmf(n, &twin).unwrap(), c, max_relative = 1e-14);
        }
    }

    #[test]
    fn hand_histogram_loglik() {
        let h = CountHistogram::from_pairs([(0, 2), (1, 1)]);
        let theta = UniMixtureParams::single(0.5, 1.0);
        let want = 2.0 * (0.5 * (-1f64).exp()).ln() + (-1f64).exp().ln();
        assert_relative_eq!(capped_loglik(&h, &theta, 10).unwrap(), want, max_relative = 1e-14);
        assert_relative_eq!(2.0 * 0.183940f64.ln() + 0.367879f64.ln(), want, epsilon = 1e-5);
    }

    #[test]
    fn capped_matches_engine_with_tail() {
        let h = CountHistogram::from_pairs([(0, 50), (1, 120), (2, 30), (5, 4), (12, 3), (40, 1)]);
        let mut theta = two_class();
        theta.components[0].lambda = 2.0;
        theta.components[1].lambda = 3.5;
        let direct = capped_loglik(&h, &theta, 10).unwrap();
        let engine = mixture::log_likelihood(&h.to_table(10).unwrap(), &theta.to_mixture());
        assert_relative_eq!(direct, engine, max_relative = 1e-11);
        assert_relative_eq!(mix_pmf(3, &theta).unwrap(), mixture_pmf(&[3], &theta.to_mixture()), max_relative = 1e-14);
    }

    #[test]
    fn accuracy_means() {
        let s = accuracy_from_fit(&two_class(), Some(1.0), None).unwrap();
        assert_relative_eq!(s.p_bar, 0.7, epsilon = 1e-15);
        assert_relative_eq!(s.lambda_bar, 0.2, epsilon = 1e-15);
        assert_relative_eq!(s.precision_hat.unwrap(), 7.0 / 9.0, epsilon = 1e-15);
        assert_eq!(s.coverage_hat, Some(s.p_bar));
    }

    #[test]
    fn parameter_count_formula() {
        assert_eq!(param_count(2, false), 5);
        assert_eq!(param_count(2, true), 4);
        for g in 1..5 {
            for shared in [false, true] {
                assert_eq!(param_count(g, shared), mixture::parameter_count(g, 1, &constraint(shared)));
            }
        }
    }

    #[test]
    fn all_zero_counts_push_to_boundary() {
        let h = CountHistogram::from_pairs([(0, 1000)]);
        let f = fit_uni(&h, 1, false, 10, &FitOptions::default()).unwrap();
        assert!(f.params.components[0].p < 1e-3);
        assert!(f.params.components[0].lambda < 1e-3);
        assert!(f.loglik >= f.init_loglik);
    }

    #[test]
    fn canonical_order_is_ascending() {
        let mut a = two_class();
        a.components.reverse();
        a.canonicalize();
        assert_eq!(a, two_class());
    }

    proptest! {
        #[test]
        fn pmf_normalizes(p in 0.0f64..1.0, l in 0.01f64..10.0, a in 0.05f64..0.95, p2 in 0.0f64..1.0, l2 in 0.01f64..10.0) {
            let theta = UniMixtureParams {
                components: vec![UniComponent { alpha: a, p, lambda: l }, UniComponent { alpha: 1.0 - a, p: p2, lambda: l2 }],
                shared_p: false,
            };
            let s: f64 = (0..=250).map(|n| mix_pmf(n, &theta).unwrap()).sum();
            prop_assert!((s - 1.0).abs() < 1e-10);
        }
    }
}
