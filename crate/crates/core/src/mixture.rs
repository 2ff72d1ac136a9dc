//! Finite mixtures of "incomplete multinomial + independent Poissons" over
//! count vectors, fitted by capped composite maximum likelihood.
//!
//! A class `g` has weight `α_g`, true-positive probabilities `p_g` (one per
//! coordinate, summing to less than one) and false-positive intensities
//! `λ_g`. The univariate neighbor model is the one-coordinate case.
//!
//! Fitting works on an unconstrained vector: class weights and `p` go
//! through softmax maps with a reference category, `λ` through a scaled
//! logistic onto `[ν, Λ]`, so that every box constraint holds by
//! construction.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::optim::{minimize, LbfgsOptions};
use crate::poisson;

pub const DEFAULT_NU: f64 = 1e-4;
pub const DEFAULT_LAMBDA_MAX: f64 = 100.0;

/// Histogram of count vectors with every vector of ℓ1 norm above `tau`
/// pooled into a single tail cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    dim: usize,
    tau: u32,
    cells: Vec<Cell>,
    tail: u64,
    total: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Cell {
    counts: Vec<u32>,
    mult: u64,
    ln_fact: f64,
}

impl CountTable {
    pub fn new<'a, I>(dim: usize, tau: u32, vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let mut m: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
        for v in vectors {
            *m.entry(v.to_vec()).or_default() += 1;
        }
        Self::from_multiplicities(dim, tau, m)
    }

    pub fn from_multiplicities(dim: usize, tau: u32, entries: impl IntoIterator<Item = (Vec<u32>, u64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("count vectors need at least one coordinate"));
        }
        if tau == 0 {
            return Err(Error::invalid("cap tau must be at least 1"));
        }
        let mut cells: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
        let mut tail = 0;
        for (v, mult) in entries {
            if v.len() != dim {
                return Err(Error::invalid(format!("count vector of length {} where {dim} expected", v.len())));
            }
            if mult == 0 {
                continue;
            }
            if v.iter().map(|&x| x as u64).sum::<u64>() > tau as u64 {
                tail += mult;
            } else {
                *cells.entry(v).or_default() += mult;
            }
        }
        let total = tail + cells.values().sum::<u64>();
        if total == 0 {
            return Err(Error::invalid("empty count histogram"));
        }
        let cells = cells
            .into_iter()
            .map(|(counts, mult)| {
                let ln_fact = counts.iter().map(|&c| ln_factorial(c as u64)).sum();
                Cell { counts, mult, ln_fact }
            })
            .collect();
        Ok(Self { dim, tau, cells, tail, total })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn tail(&self) -> u64 {
        self.tail
    }

    /// Uncapped cells and their multiplicities.
    pub fn cells(&self) -> impl Iterator<Item = (&[u32], u64)> {
        self.cells.iter().map(|c| (c.counts.as_slice(), c.mult))
    }

    /// Mean count per coordinate over the uncapped records, and the share of
    /// records with at least one count.
    pub fn moments(&self) -> (Vec<f64>, f64) {
        let mut mean = vec![0.0; self.dim];
        let mut nonzero = self.tail as f64;
        for c in &self.cells {
            for (m, &x) in mean.iter_mut().zip(&c.counts) {
                *m += c.mult as f64 * x as f64;
            }
            if c.counts.iter().any(|&x| x > 0) {
                nonzero += c.mult as f64;
            }
        }
        let n = self.total as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        (mean, nonzero / n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub alpha: f64,
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Log-linear coefficients: `p_γ = φ·exp(z_γ·u)/(1 + Σ exp(z_γ'·u))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearCoef {
    pub phi: f64,
    pub u: Vec<f64>,
}

/// Rows `z_γ` of a 0/1 design over the coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub rows: Vec<Vec<f64>>,
}

impl Design {
    pub fn cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Cell shares `r_γ` (the reference cell, all-zero covariates, is left
    /// out).
    pub fn shares(&self, u: &[f64]) -> Vec<f64> {
        let eta: Vec<f64> = self.rows.iter().map(|z| z.iter().zip(u).map(|(a, b)| a * b).sum()).collect();
        let max = eta.iter().cloned().fold(0.0, f64::max);
        let e: Vec<f64> = eta.iter().map(|x| (x - max).exp()).collect();
        let denom = (-max).exp() + e.iter().sum::<f64>();
        e.iter().map(|x| x / denom).collect()
    }

    pub fn probs(&self, coef: &LogLinearCoef) -> Vec<f64> {
        self.shares(&coef.u).into_iter().map(|r| coef.phi * r).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Constraint {
    Free,
    SharedP,
    LogLinear { design: Design },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub components: Vec<Component>,
    pub loglinear: Option<LogLinearCoef>,
}

impl MixtureParams {
    pub fn classes(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.p.len())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.components.is_empty() || d == 0 {
            return Err(Error::invalid("mixture needs at least one class and one coordinate"));
        }
        let mut total = 0.0;
        for c in &self.components {
            if c.p.len() != d || c.lambda.len() != d {
                return Err(Error::invalid("component vectors have inconsistent lengths"));
            }
            if !(c.alpha > 0.0 && c.alpha <= 1.0) {
                return Err(Error::invalid(format!("class weight {} outside (0, 1]", c.alpha)));
            }
            if c.p.iter().any(|&p| !(0.0..=1.0).contains(&p)) || c.p.iter().sum::<f64>() > 1.0 + 1e-12 {
                return Err(Error::invalid("true-positive probabilities must be nonnegative with sum at most 1"));
            }
            if c.lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
                return Err(Error::invalid("false-positive intensities must be positive"));
            }
            total += c.alpha;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("class weights sum to {total}")));
        }
        Ok(())
    }

    /// Sorts the classes by lexicographic order of their `λ` vectors.
    pub fn canonicalize(&mut self) {
        self.components.sort_by(|a, b| {
            lex(&a.lambda, &b.lambda)
                .then_with(|| a.alpha.total_cmp(&b.alpha))
                .then_with(|| lex(&a.p, &b.p))
        });
    }

    /// `Σ_g α_g p_g` and `Σ_g α_g λ_g` per coordinate.
    pub fn means(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let (mut p, mut l) = (vec![0.0; d], vec![0.0; d]);
        for c in &self.components {
            for k in 0..d {
                p[k] += c.alpha * c.p[k];
                l[k] += c.alpha * c.lambda[k];
            }
        }
        (p, l)
    }
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Probability of count vector `t` under one class.
pub fn component_pmf(t: &[u32], p: &[f64], lambda: &[f64]) -> f64 {
    let ln_fact: f64 = t.iter().map(|&c| ln_factorial(c as u64)).sum();
    component_ln_pmf(t, ln_fact, p, lambda).0.exp()
}

/// Returns `(log c(t), A(t))` where `c(t) = Π Pois(t_γ; λ_γ) · A(t)` and
/// `A(t) = 1 − Σp + Σ p_γ t_γ / λ_γ`.
#[inline]
fn component_ln_pmf(t: &[u32], ln_fact: f64, p: &[f64], lambda: &[f64]) -> (f64, f64) {
    let mut a = 1.0 - p.iter().sum::<f64>();
    let mut lp = -ln_fact;
    for k in 0..t.len() {
        let tk = t[k] as f64;
        lp -= lambda[k];
        if t[k] > 0 {
            lp += tk * lambda[k].ln();
            a += p[k] * tk / lambda[k];
        }
    }
    (lp + a.max(0.0).ln(), a)
}

pub fn mixture_pmf(t: &[u32], params: &MixtureParams) -> f64 {
    params.components.iter().map(|c| c.alpha * component_pmf(t, &c.p, &c.lambda)).sum()
}

/// `P(|n| > tau)` for one class; `|n|` is Bernoulli(Σp) plus Poisson(Σλ).
fn component_tail(p_sum: f64, l_sum: f64, tau: u32) -> f64 {
    (1.0 - p_sum) * poisson::upper_tail(tau as u64 + 1, l_sum) + p_sum * poisson::upper_tail(tau as u64, l_sum)
}

pub fn tail_mass(params: &MixtureParams, tau: u32) -> f64 {
    params
        .components
        .iter()
        .map(|c| c.alpha * component_tail(c.p.iter().sum(), c.lambda.iter().sum(), tau))
        .sum()
}

/// Capped log-likelihood, with `-inf` when the model gives no mass to an
/// observed cell.
pub fn log_likelihood(table: &CountTable, params: &MixtureParams) -> f64 {
    let mut grad = Gradient::zeros(params.classes(), table.dim);
    evaluate(table, &params.components, &mut grad, false)
}

/// Derivatives of the log-likelihood with respect to the natural parameters.
struct Gradient {
    alpha: Vec<f64>,
    p: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
}

impl Gradient {
    fn zeros(g: usize, d: usize) -> Self {
        Self { alpha: vec![0.0; g], p: vec![vec![0.0; d]; g], lambda: vec![vec![0.0; d]; g] }
    }
}

fn evaluate(table: &CountTable, comps: &[Component], grad: &mut Gradient, want_grad: bool) -> f64 {
    let g = comps.len();
    let ln_alpha: Vec<f64> = comps.iter().map(|c| c.alpha.ln()).collect();
    let mut ll = 0.0;
    let mut terms = vec![(0.0, 0.0); g];
    for cell in &table.cells {
        let t = &cell.counts;
        let mut max = f64::NEG_INFINITY;
        for (k, c) in comps.iter().enumerate() {
            let (lc, a) = component_ln_pmf(t, cell.ln_fact, &c.p, &c.lambda);
            terms[k] = (ln_alpha[k] + lc, a);
            max = max.max(terms[k].0);
        }
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let lf = max + terms.iter().map(|(x, _)| (x - max).exp()).sum::<f64>().ln();
        let m = cell.mult as f64;
        ll += m * lf;
        if want_grad {
            for (k, c) in comps.iter().enumerate() {
                let w = m * (terms[k].0 - lf).exp();
                if w == 0.0 {
                    continue;
                }
                let a = terms[k].1;
                grad.alpha[k] += w / c.alpha;
                for j in 0..t.len() {
                    let r = t[j] as f64 / c.lambda[j];
                    grad.p[k][j] += w * (r - 1.0) / a;
                    grad.lambda[k][j] += w * ((r - 1.0) - c.p[j] * r / (c.lambda[j] * a));
                }
            }
        }
    }
    if table.tail > 0 {
        let tau = table.tau as u64;
        let mut tails = Vec::with_capacity(g);
        let mut total = 0.0;
        for c in comps {
            let (ps, ls) = (c.p.iter().sum::<f64>(), c.lambda.iter().sum::<f64>());
            let tg = component_tail(ps, ls, table.tau);
            total += c.alpha * tg;
            tails.push((tg, ps, ls));
        }
        if !(total > 0.0) {
            return f64::NEG_INFINITY;
        }
        let m = table.tail as f64;
        ll += m * total.ln();
        if want_grad {
            for (k, c) in comps.iter().enumerate() {
                let (tg, ps, ls) = tails[k];
                let at = poisson::pmf(tau as i64, ls);
                let below = poisson::pmf(tau as i64 - 1, ls);
                grad.alpha[k] += m * tg / total;
                let dp = m * c.alpha * at / total;
                let dl = m * c.alpha * ((1.0 - ps) * at + ps * below) / total;
                for j in 0..table.dim {
                    grad.p[k][j] += dp;
                    grad.lambda[k][j] += dl;
                }
            }
        }
    }
    ll
}

/// Draws one count vector from the generative model: a class, at most one
/// true-positive cell, then independent Poisson false positives.
pub fn sample_vector<R: Rng + ?Sized>(params: &MixtureParams, rng: &mut R) -> Vec<u32> {
    let mut u: f64 = rng.random();
    let last = params.components.len() - 1;
    let mut class = &params.components[last];
    for c in &params.components[..last] {
        if u < c.alpha {
            class = c;
            break;
        }
        u -= c.alpha;
    }
    let mut t: Vec<u32> = class
        .lambda
        .iter()
        .map(|&l| Poisson::new(l).map_or(0, |d| d.sample(rng) as u32))
        .collect();
    let mut v: f64 = rng.random();
    for (k, &p) in class.p.iter().enumerate() {
        if v < p {
            t[k] += 1;
            break;
        }
        v -= p;
    }
    t
}

/// Number of free parameters for `g` classes over `dim` coordinates.
pub fn parameter_count(g: usize, dim: usize, constraint: &Constraint) -> usize {
    let p = match constraint {
        Constraint::Free => g * dim,
        Constraint::SharedP => dim,
        Constraint::LogLinear { design } => 1 + design.cols(),
    };
    (g - 1) + p + g * dim
}

pub fn aic(k: usize, loglik: f64) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub lbfgs: LbfgsOptions,
    /// Total number of starts: the supplied one plus jittered copies.
    pub starts: usize,
    pub jitter_seed: u64,
    pub nu: f64,
    pub lambda_max: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsOptions::default(),
            starts: 5,
            jitter_seed: 0x6a09_e667_f3bc_c908,
            nu: DEFAULT_NU,
            lambda_max: DEFAULT_LAMBDA_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub params: MixtureParams,
    pub loglik: f64,
    pub init_loglik: f64,
    pub parameters: usize,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Maps between natural parameters and the unconstrained vector.
struct Codec<'a> {
    g: usize,
    d: usize,
    constraint: &'a Constraint,
    nu: f64,
    lmax: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Softmax over `z` plus an implicit reference logit of zero.
fn ref_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(0.0, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let denom = (-max).exp() + e.iter().sum::<f64>();
    e.iter().map(|x| x / denom).collect()
}

/// Inverse of [`ref_softmax`] for shares `s` with `Σs < 1`.
fn ref_logits(s: &[f64], floor: f64) -> Vec<f64> {
    let s: Vec<f64> = s.iter().map(|&x| x.max(floor)).collect();
    let rest = (1.0 - s.iter().sum::<f64>()).max(floor);
    s.iter().map(|x| (x / rest).ln()).collect()
}

impl<'a> Codec<'a> {
    fn p_len(&self) -> usize {
        match self.constraint {
            Constraint::Free => self.g * self.d,
            Constraint::SharedP => self.d,
            Constraint::LogLinear { design } => 1 + design.cols(),
        }
    }

    fn len(&self) -> usize {
        (self.g - 1) + self.p_len() + self.g * self.d
    }

    fn alpha_scale(&self) -> f64 {
        1.0 - self.g as f64 * self.nu
    }

    fn encode(&self, params: &MixtureParams) -> Vec<f64> {
        let (g, nu) = (self.g, self.nu);
        let mut x = Vec::with_capacity(self.len());
        let shares: Vec<f64> = params.components.iter().map(|c| ((c.alpha - nu) / self.alpha_scale()).max(1e-12)).collect();
        let last = shares[g - 1];
        x.extend(shares[..g - 1].iter().map(|s| (s / last).ln()));
        let cp = 1.0 - nu;
        match self.constraint {
            Constraint::Free => {
                for c in &params.components {
                    let s: Vec<f64> = c.p.iter().map(|p| p / cp).collect();
                    x.extend(ref_logits(&s, 1e-10));
                }
            }
            Constraint::SharedP => {
                let s: Vec<f64> = params.components[0].p.iter().map(|p| p / cp).collect();
                x.extend(ref_logits(&s, 1e-10));
            }
            Constraint::LogLinear { .. } => {
                let coef = params.loglinear.clone().unwrap_or(LogLinearCoef { phi: 0.5, u: vec![0.0; self.p_len() - 1] });
                x.push(logit((coef.phi / cp).clamp(1e-10, 1.0 - 1e-10)));
                x.extend(coef.u.iter());
            }
        }
        for c in &params.components {
            for &l in &c.lambda {
                x.push(logit(((l - nu) / (self.lmax - nu)).clamp(1e-10, 1.0 - 1e-10)));
            }
        }
        debug_assert_eq!(x.len(), self.len());
        x
    }

    fn decode(&self, x: &[f64]) -> MixtureParams {
        let (g, d, nu) = (self.g, self.d, self.nu);
        let s = ref_softmax(&x[..g - 1]);
        let rest = 1.0 - s.iter().sum::<f64>();
        let alpha: Vec<f64> = s.iter().chain(std::iter::once(&rest)).map(|s| nu + self.alpha_scale() * s).collect();
        let mut off = g - 1;
        let cp = 1.0 - nu;
        let mut loglinear = None;
        let ps: Vec<Vec<f64>> = match self.constraint {
            Constraint::Free => (0..g)
                .map(|k| ref_softmax(&x[off + k * d..off + (k + 1) * d]).into_iter().map(|s| cp * s).collect())
                .collect(),
            Constraint::SharedP => {
                let p: Vec<f64> = ref_softmax(&x[off..off + d]).into_iter().map(|s| cp * s).collect();
                vec![p; g]
            }
            Constraint::LogLinear { design } => {
                let coef = LogLinearCoef { phi: cp * sigmoid(x[off]), u: x[off + 1..off + 1 + design.cols()].to_vec() };
                let p = design.probs(&coef);
                loglinear = Some(coef);
                vec![p; g]
            }
        };
        off += self.p_len();
        let components = (0..g)
            .map(|k| Component {
                alpha: alpha[k],
                p: ps[k].clone(),
                lambda: (0..d).map(|j| nu + (self.lmax - nu) * sigmoid(x[off + k * d + j])).collect(),
            })
            .collect();
        MixtureParams { components, loglinear }
    }

    /// Chain rule from natural-parameter derivatives to `x`.
    fn pullback(&self, x: &[f64], params: &MixtureParams, grad: &Gradient, out: &mut [f64]) {
        let (g, d, nu) = (self.g, self.d, self.nu);
        out.iter_mut().for_each(|v| *v = 0.0);
        let s = ref_softmax(&x[..g - 1]);
        let mut sh = s.clone();
        sh.push(1.0 - s.iter().sum::<f64>());
        for j in 0..g - 1 {
            // dα_i/da_j = scale · s_i (δ_ij − s_j)
            let mut v = 0.0;
            for i in 0..g {
                let delta = if i == j { 1.0 } else { 0.0 };
                v += grad.alpha[i] * sh[i] * (delta - sh[j]);
            }
            out[j] = self.alpha_scale() * v;
        }
        let mut off = g - 1;
        let cp = 1.0 - nu;
        let softmax_pull = |gp: &[f64], p: &[f64], out: &mut [f64]| {
            // p_γ = cp·s_γ, dp_γ/dz_j = p_γ(δ − s_j)
            let inner: f64 = gp.iter().zip(p).map(|(a, b)| a * b).sum();
            for j in 0..p.len() {
                out[j] += p[j] * gp[j] - p[j] / cp * inner;
            }
        };
        match self.constraint {
            Constraint::Free => {
                for k in 0..g {
                    softmax_pull(&grad.p[k], &params.components[k].p, &mut out[off + k * d..off + (k + 1) * d]);
                }
            }
            Constraint::SharedP => {
                let total: Vec<f64> = (0..d).map(|j| (0..g).map(|k| grad.p[k][j]).sum()).collect();
                softmax_pull(&total, &params.components[0].p, &mut out[off..off + d]);
            }
            Constraint::LogLinear { design } => {
                let coef = params.loglinear.as_ref().expect("log-linear coefficients");
                let gp: Vec<f64> = (0..d).map(|j| (0..g).map(|k| grad.p[k][j]).sum()).collect();
                let r = design.shares(&coef.u);
                let sig = sigmoid(x[off]);
                let dphi: f64 = gp.iter().zip(&r).map(|(a, b)| a * b).sum();
                out[off] = dphi * cp * sig * (1.0 - sig);
                let m = design.cols();
                let zbar: Vec<f64> = (0..m).map(|c| (0..d).map(|j| r[j] * design.rows[j][c]).sum()).collect();
                for c in 0..m {
                    out[off + 1 + c] = (0..d).map(|j| gp[j] * coef.phi * r[j] * (design.rows[j][c] - zbar[c])).sum();
                }
            }
        }
        off += self.p_len();
        for k in 0..g {
            for j in 0..d {
                let sig = sigmoid(x[off + k * d + j]);
                out[off + k * d + j] = grad.lambda[k][j] * (self.lmax - nu) * sig * (1.0 - sig);
            }
        }
    }
}

/// Maximizes the capped log-likelihood from `start` and from jittered copies
/// of it, keeping the best result.
pub fn fit(table: &CountTable, constraint: &Constraint, start: &MixtureParams, opts: &FitOptions) -> Result<Fit> {
    start.validate()?;
    let (g, d) = (start.classes(), start.dim());
    if d != table.dim {
        return Err(Error::invalid(format!("start has {d} coordinates but the data have {}", table.dim)));
    }
    if let Constraint::LogLinear { design } = constraint {
        if design.rows.len() != d || design.rows.iter().any(|r| r.len() != design.cols()) {
            return Err(Error::invalid("design matrix does not match the count dimension"));
        }
    }
    if opts.nu * g as f64 >= 1.0 {
        return Err(Error::invalid("too many classes for the weight floor"));
    }
    let codec = Codec { g, d, constraint, nu: opts.nu, lmax: opts.lambda_max };
    let n = table.total as f64;
    let objective = |x: &[f64], out: &mut [f64]| -> f64 {
        let params = codec.decode(x);
        let mut grad = Gradient::zeros(g, d);
        let ll = evaluate(table, &params.components, &mut grad, true);
        if !ll.is_finite() {
            return f64::INFINITY;
        }
        codec.pullback(x, &params, &grad, out);
        out.iter_mut().for_each(|v| *v = -*v / n);
        -ll / n
    };

    let x0 = codec.encode(start);
    let init_loglik = log_likelihood(table, &codec.decode(&x0));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.jitter_seed);
    let mut best: Option<(f64, Vec<f64>, usize, bool)> = None;
    let lambda_off = (g - 1) + codec.p_len();
    for s in 0..opts.starts.max(1) {
        let mut x = x0.clone();
        if s > 0 {
            for (i, v) in x.iter_mut().enumerate() {
                *v += rng.random_range(-0.5..0.5);
                if i >= lambda_off && g > 1 {
                    let class = (i - lambda_off) / d;
                    *v += (class as f64 - (g - 1) as f64 / 2.0) * 0.6 * s as f64;
                }
            }
        }
        let res = minimize(objective, &x, &opts.lbfgs);
        if !res.value.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| res.value < b.0) {
            best = Some((res.value, res.x, res.iterations, res.converged));
        }
    }
    let (_, x, iterations, converged) =
        best.ok_or_else(|| Error::invalid("no start gave a finite likelihood"))?;
    if !converged {
        log::info!("mixture fit with {g} classes stopped after {iterations} iterations without converging");
    }
    let mut params = codec.decode(&x);
    params.canonicalize();
    let loglik = log_likelihood(table, &params);
    let parameters = parameter_count(g, d, constraint);
    Ok(Fit { params, loglik, init_loglik, parameters, aic: aic(parameters, loglik), iterations, converged })
}

/// Result of choosing the number of classes by AIC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: Fit,
    /// `(G, AIC)` for every fitted class count.
    pub trace: Vec<(usize, f64)>,
}

/// Fits `1..=g_max` classes and keeps the smallest AIC; ties go to fewer
/// classes.
pub fn select_classes<F>(table: &CountTable, g_max: usize, constraint: &Constraint, opts: &FitOptions, start: F) -> Result<Selection>
where
    F: Fn(usize) -> Result<MixtureParams>,
{
    if g_max == 0 {
        return Err(Error::invalid("g_max must be at least 1"));
    }
    let mut best: Option<Fit> = None;
    let mut trace = Vec::with_capacity(g_max);
    for g in 1..=g_max {
        let f = fit(table, constraint, &start(g)?, opts)?;
        trace.push((g, f.aic));
        if best.as_ref().is_none_or(|b| f.aic < b.aic) {
            best = Some(f);
        }
    }
    Ok(Selection { best: best.expect("at least one fit"), trace })
}
