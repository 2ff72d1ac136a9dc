//! Multivariate neighbor model over a family of mutually exclusive rules,
//! with an optional log-linear form for the true-positive probabilities
//! whose normalizing cell carries the unobserved matched pairs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{self, Component, Constraint, CountTable, Design, Fit, FitOptions, LogLinearCoef, MixtureParams, Selection};
use crate::neighbor_uni::{self, CountHistogram};
use crate::poisson;

pub type MultiMixtureParams = MixtureParams;
pub type MultiCountHistogram = CountTable;

/// `Γ = {0..H_1} × … × {0..H_K}` without the all-zero tuple, in
/// lexicographic order with the first coordinate most significant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleIndexSet {
    pub levels: Vec<u32>,
    pub gamma: Vec<Vec<u32>>,
}

impl RuleIndexSet {
    pub fn new(levels: Vec<u32>) -> Result<Self> {
        if levels.is_empty() || levels.contains(&0) {
            return Err(Error::invalid("every variable needs at least one nonzero level"));
        }
        let mut gamma: Vec<Vec<u32>> = vec![Vec::new()];
        for &h in &levels {
            gamma = gamma
                .into_iter()
                .flat_map(|prefix| {
                    (0..=h).map(move |l| {
                        let mut v = prefix.clone();
                        v.push(l);
                        v
                    })
                })
                .collect();
        }
        gamma.retain(|v| v.iter().any(|&x| x > 0));
        Ok(Self { levels, gamma })
    }

    /// Three binary agreement indicators.
    pub fn binary3() -> Self {
        Self::new(vec![1, 1, 1]).expect("valid levels")
    }

    pub fn k(&self) -> usize {
        self.levels.len()
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn position(&self, g: &[u32]) -> Option<usize> {
        self.gamma.iter().position(|x| x == g)
    }
}

/// One coefficient `u_{k_1…k_t(l_1…l_t)}`: variables (0-based) and levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub vars: Vec<usize>,
    pub levels: Vec<u32>,
}

impl Term {
    pub fn label(&self) -> String {
        let wide = self.vars.iter().any(|&v| v >= 9) || self.levels.iter().any(|&l| l > 9);
        let sep = if wide { "," } else { "" };
        let vars: Vec<String> = self.vars.iter().map(|v| (v + 1).to_string()).collect();
        let levels: Vec<String> = self.levels.iter().map(u32::to_string).collect();
        format!("u_{}({})", vars.join(sep), levels.join(sep))
    }

    fn matches(&self, g: &[u32]) -> bool {
        self.vars.iter().zip(&self.levels).all(|(&v, &l)| g[v] == l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub order: usize,
    pub terms: Vec<Term>,
    pub design: Design,
}

impl DesignMatrix {
    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(Term::label).collect()
    }

    pub fn cols(&self) -> usize {
        self.terms.len()
    }
}

fn subsets(k: usize, t: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, t: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == t {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(i + 1, k, t, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, t, &mut Vec::new(), &mut out);
    out
}

/// Level tuples `1..=H` for the given variables, first variable fastest.
fn level_tuples(levels: &[u32], vars: &[usize]) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = vec![Vec::new()];
    for &v in vars {
        out = (1..=levels[v])
            .flat_map(|l| {
                out.iter().map(move |head| {
                    let mut t = head.clone();
                    t.push(l);
                    t
                })
            })
            .collect();
    }
    out
}

pub fn build_design(rules: &RuleIndexSet, d: usize) -> Result<DesignMatrix> {
    let k = rules.k();
    if d == 0 || d >= k {
        return Err(Error::invalid(format!("interaction order must satisfy 1 <= d <= K-1 = {}, got {d}", k.saturating_sub(1))));
    }
    let mut terms = Vec::new();
    for t in 1..=d {
        for vars in subsets(k, t) {
            for levels in level_tuples(&rules.levels, &vars) {
                terms.push(Term { vars: vars.clone(), levels });
            }
        }
    }
    let rows = rules
        .gamma
        .iter()
        .map(|g| terms.iter().map(|term| if term.matches(g) { 1.0 } else { 0.0 }).collect())
        .collect();
    Ok(DesignMatrix { order: d, terms, design: Design { rows } })
}

pub fn loglinear_probs(phi: f64, u: &[f64], design: &DesignMatrix) -> Result<Vec<f64>> {
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(Error::invalid(format!("coverage must lie in (0, 1], got {phi}")));
    }
    if u.len() != design.cols() || u.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("coefficient vector does not match the design"));
    }
    Ok(design.design.probs(&LogLinearCoef { phi, u: u.to_vec() }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub phi: f64,
    pub u: Vec<f64>,
    /// Euclidean norm of the least-squares residual on the log scale.
    pub residual: f64,
}

/// Recovers `(φ, u)` from cell probabilities by least squares on
/// `log p_γ = c + z_γ·u`; exact when `p` has a log-linear form of the
/// design's order.
pub fn loglinear_invert(p: &[f64], design: &DesignMatrix) -> Result<Inversion> {
    let rows = &design.design.rows;
    if p.len() != rows.len() {
        return Err(Error::invalid("probability vector does not match the design"));
    }
    if p.iter().any(|&x| !(x > 0.0)) || p.iter().sum::<f64>() >= 1.0 {
        return Err(Error::invalid("probabilities must be positive with sum below 1"));
    }
    let m = design.cols();
    let a = DMatrix::from_fn(rows.len(), m + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let y = DVector::from_iterator(p.len(), p.iter().map(|x| x.ln()));
    let svd = a.clone().svd(true, true);
    let beta = svd.solve(&y, 1e-12).map_err(|e| Error::invalid(e.to_string()))?;
    let residual = (&a * &beta - &y).norm();
    let u: Vec<f64> = beta.iter().skip(1).copied().collect();
    let c = beta[0];
    let norm = 1.0 + rows.iter().map(|z| z.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>().exp()).sum::<f64>();
    Ok(Inversion { phi: c.exp() * norm, u, residual })
}

/// Maximizes the one-class likelihood over `p` with `λ` held fixed, by EM
/// over the "no true positive" cell and the cells of Γ.
pub fn single_class_p_hat(table: &CountTable, lambda: &[f64], nu: f64) -> Result<Vec<f64>> {
    let d = table.dim();
    if lambda.len() != d || lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::invalid("fixed intensities must be positive, one per rule"));
    }
    // Likelihood ratios of each true-positive cell against the "none" cell.
    let cells: Vec<(Vec<f64>, f64)> = table
        .cells()
        .map(|(t, m)| (t.iter().zip(lambda).map(|(&x, &l)| x as f64 / l).collect(), m as f64))
        .collect();
    let ls: f64 = lambda.iter().sum();
    let tau = table.tau() as u64;
    let tail_ratio = poisson::upper_tail(tau, ls) / poisson::upper_tail(tau + 1, ls);
    let tail = table.tail() as f64;
    let n = table.total() as f64;

    let mut w = vec![0.5 / d as f64; d];
    for _ in 0..100_000 {
        let mut acc = vec![0.0; d];
        let mut acc0 = 0.0;
        let w0 = 1.0 - w.iter().sum::<f64>();
        for (ratios, m) in &cells {
            let f = w0 + w.iter().zip(ratios).map(|(a, b)| a * b).sum::<f64>();
            acc0 += m / f;
            for k in 0..d {
                acc[k] += m * ratios[k] / f;
            }
        }
        if tail > 0.0 {
            let f = w0 + w.iter().sum::<f64>() * tail_ratio;
            acc0 += tail / f;
            acc.iter_mut().for_each(|a| *a += tail * tail_ratio / f);
        }
        let kkt = w.iter().zip(&acc).map(|(wk, a)| (wk * (a / n - 1.0)).abs()).fold((w0 * (acc0 / n - 1.0)).abs(), f64::max);
        if kkt < 1e-8 {
            break;
        }
        for k in 0..d {
            w[k] *= acc[k] / n;
        }
        let s: f64 = w.iter().sum();
        if s > 1.0 - nu {
            w.iter_mut().for_each(|x| *x *= (1.0 - nu) / s);
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    NoInteractions,
    WithInteractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitStart {
    pub params: MultiMixtureParams,
    pub p_hat: Vec<f64>,
    /// Set when some `p̂` had to be floored before taking logs.
    pub floored: bool,
}

const P_FLOOR: f64 = 1e-8;

fn logit(x: f64) -> f64 {
    let x = x.clamp(P_FLOOR, 1.0 - P_FLOOR);
    (x / (1.0 - x)).ln()
}

/// Moment-based starting coefficients for three binary rules, ordered as
/// `u_1, u_2, u_3, u_12, u_13, u_23`.
fn binary3_start(p: &[f64], mode: InitMode) -> (Vec<f64>, bool) {
    // Patterns in index order: 001, 010, 011, 100, 101, 110, 111.
    let at = |g1: usize, g2: usize, g3: usize| p[4 * g1 + 2 * g2 + g3 - 1];
    match mode {
        InitMode::NoInteractions => {
            let q = |k: usize| (1..8).filter(|i| i >> (2 - k) & 1 == 1).map(|i| p[i - 1]).sum::<f64>();
            let q2 = |a: usize, b: usize| (1..8).filter(|i| i >> (2 - a) & 1 == 1 && i >> (2 - b) & 1 == 1).map(|i| p[i - 1]).sum::<f64>();
            let (q1, q2_, q3) = (q(0), q(1), q(2));
            let (q12, q13, q23) = (q2(0, 1), q2(0, 2), q2(1, 2));
            let u = vec![
                logit(0.5 * (q12 / q2_ + q13 / q3)),
                logit(0.5 * (q12 / q1 + q23 / q3)),
                logit(0.5 * (q13 / q1 + q23 / q2_)),
                0.0,
                0.0,
                0.0,
            ];
            (u, false)
        }
        InitMode::WithInteractions => {
            let floored = p.iter().any(|&x| x < P_FLOOR);
            let lr = |x: f64| (x.max(P_FLOOR) / at(1, 1, 1).max(P_FLOOR)).ln();
            let pairs = lr(at(1, 1, 0)) + lr(at(1, 0, 1)) + lr(at(0, 1, 1));
            let (s1, s2, s3) = (lr(at(1, 0, 0)), lr(at(0, 1, 0)), lr(at(0, 0, 1)));
            let u = vec![pairs - (s1 + s2), pairs - (s1 + s3), pairs - (s2 + s3), -pairs + s1, -pairs + s2, -pairs + s3];
            (u, floored)
        }
    }
}

/// Starting values for a log-linear fit: equal class weights, every class
/// at the per-rule intensities `lambda_hat`, coefficients from the moment
/// formulas (three binary rules) or from the least-squares inversion of `p̂`
/// (other designs), and `φ = Σp̂ / Σr̂`.
pub fn init_appendix_c(
    table: &CountTable,
    lambda_hat: &[f64],
    design: &DesignMatrix,
    g: usize,
    nu: f64,
) -> Result<InitStart> {
    if g == 0 {
        return Err(Error::invalid("G must be at least 1"));
    }
    let p_hat = single_class_p_hat(table, lambda_hat, nu)?;
    let binary3 = design.design.rows.len() == 7 && design.terms.iter().all(|t| t.levels.iter().all(|&l| l == 1)) && design.terms.first().is_some_and(|t| t.vars.len() == 1);
    let (u, floored) = if binary3 && (design.cols() == 3 || design.cols() == 6) {
        let mode = if design.cols() == 3 { InitMode::NoInteractions } else { InitMode::WithInteractions };
        let (u, floored) = binary3_start(&p_hat, mode);
        (u[..design.cols()].to_vec(), floored)
    } else {
        let floored = p_hat.iter().any(|&x| x < P_FLOOR);
        let p: Vec<f64> = p_hat.iter().map(|x| x.max(P_FLOOR)).collect();
        (loglinear_invert(&p, design)?.u, floored)
    };
    if floored {
        log::warn!("true-positive estimate floored at {P_FLOOR} for the starting coefficients");
    }
    let r = design.design.shares(&u);
    let phi = (p_hat.iter().sum::<f64>() / r.iter().sum::<f64>()).clamp(nu, 1.0 - nu);
    let coef = LogLinearCoef { phi, u };
    let p = design.design.probs(&coef);
    let components = (0..g)
        .map(|_| Component { alpha: 1.0 / g as f64, p: p.clone(), lambda: lambda_hat.to_vec() })
        .collect();
    Ok(InitStart { params: MixtureParams { components, loglinear: Some(coef) }, p_hat, floored })
}

/// Per-rule false-positive intensities from univariate fits, one rule at a
/// time (`λ̄` of the AIC-selected shared-`p` model).
pub fn per_rule_lambda(
    vectors: &[Vec<u32>],
    dim: usize,
    g_max: usize,
    tau: u32,
    opts: &FitOptions,
) -> Result<Vec<f64>> {
    (0..dim)
        .map(|k| {
            let hist = CountHistogram::from_counts(vectors.iter().map(|v| v[k]));
            let sel = neighbor_uni::select_g(&hist, g_max, true, tau, opts)?;
            Ok(sel.fit.params.lambda_bar().max(opts.nu))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum MultiConstraint {
    Free,
    SharedP,
    LogLinear { order: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFit {
    pub constraint: MultiConstraint,
    pub coefficient_labels: Vec<String>,
    pub fit: Fit,
}

impl MultiFit {
    pub fn coverage(&self) -> Result<f64> {
        coverage_from_fit(&self.fit.params)
    }
}

pub fn fit_multi(table: &CountTable, constraint: &Constraint, start: &MultiMixtureParams, opts: &FitOptions) -> Result<Fit> {
    mixture::fit(table, constraint, start, opts)
}

pub fn select_g_multi<F>(table: &CountTable, g_max: usize, constraint: &Constraint, opts: &FitOptions, start: F) -> Result<Selection>
where
    F: Fn(usize) -> Result<MultiMixtureParams>,
{
    mixture::select_classes(table, g_max, constraint, opts, start)
}

pub fn coverage_from_fit(params: &MultiMixtureParams) -> Result<f64> {
    params
        .loglinear
        .as_ref()
        .map(|c| c.phi)
        .ok_or_else(|| Error::invalid("coverage is only defined for log-linear fits"))
}

/// End-to-end log-linear fit over three binary agreement rules: per-rule
/// intensities, the moment start, then AIC selection of the class count.
pub fn fit_loglinear_coverage(
    vectors: &[Vec<u32>],
    rules: &RuleIndexSet,
    order: usize,
    g_max: usize,
    tau: u32,
    opts: &FitOptions,
) -> Result<MultiFit> {
    let dim = rules.len();
    let table = CountTable::new(dim, tau, vectors.iter().map(Vec::as_slice))?;
    let lambda_hat = per_rule_lambda(vectors, dim, g_max, tau, opts)?;
    fit_loglinear_with_lambda(&table, &lambda_hat, rules, order, g_max, opts)
}

/// As [`fit_loglinear_coverage`] with the per-rule intensities supplied.
pub fn fit_loglinear_with_lambda(
    table: &CountTable,
    lambda_hat: &[f64],
    rules: &RuleIndexSet,
    order: usize,
    g_max: usize,
    opts: &FitOptions,
) -> Result<MultiFit> {
    let design = build_design(rules, order)?;
    let constraint = Constraint::LogLinear { design: design.design.clone() };
    let sel = select_g_multi(table, g_max, &constraint, opts, |g| {
        Ok(init_appendix_c(table, lambda_hat, &design, g, opts.nu)?.params)
    })?;
    Ok(MultiFit { constraint: MultiConstraint::LogLinear { order }, coefficient_labels: design.labels(), fit: sel.best })
}
