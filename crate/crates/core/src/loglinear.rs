//! Poisson log-linear capture-recapture on the observed `2^J - 1` cells.
//!
//! Models contain the intercept, every main effect and a subset of two-list
//! interactions. The unobserved all-zero cell is estimated by
//! `prod(lambda_odd) / prod(lambda_even)`, where odd and even refer to the
//! number of lists capturing a cell. Without a `J`-way term this equals
//! `exp(b0)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rasch::pairs;
use crate::tables::{CapturePattern, Completeness, ContingencyTable, TablePair};

pub const IRLS_TOLERANCE: f64 = 1e-10;
pub const IRLS_MAX_ITER: usize = 100;
/// Coefficients beyond this magnitude are treated as divergent.
const DIVERGENCE_BOUND: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    Main(usize),
    Pair(usize, usize),
}

impl Term {
    fn value(self, pattern: CapturePattern) -> f64 {
        let on = match self {
            Term::Intercept => true,
            Term::Main(k) => pattern.captured(k),
            Term::Pair(j, k) => pattern.captured(j) && pattern.captured(k),
        };
        f64::from(u8::from(on))
    }

    /// Label using list names, e.g. `DC:LE`.
    pub fn label(self, names: &[String]) -> String {
        match self {
            Term::Intercept => "(intercept)".into(),
            Term::Main(k) => names[k].clone(),
            Term::Pair(j, k) => format!("{}:{}", names[j], names[k]),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "b0"),
            Term::Main(k) => write!(f, "b{}", k + 1),
            Term::Pair(j, k) => write!(f, "b{}:{}", j + 1, k + 1),
        }
    }
}

/// Intercept, all main effects and the given pairs.
pub fn hierarchical_terms(n_lists: usize, pairs: &[(usize, usize)]) -> Vec<Term> {
    let mut terms = vec![Term::Intercept];
    terms.extend((0..n_lists).map(Term::Main));
    terms.extend(pairs.iter().map(|&(j, k)| Term::Pair(j.min(k), j.max(k))));
    terms
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoglinearModel {
    pub n_lists: usize,
    pub terms: Vec<Term>,
    pub coefficients: Vec<f64>,
    /// Fitted means in pattern-index order; entry 0 is `exp(b0)`.
    pub fitted: Vec<f64>,
    pub observed: Vec<f64>,
    pub deviance: f64,
    pub loglik: f64,
    pub pearson_chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    pub aic: f64,
    pub bic: f64,
    pub iterations: usize,
    /// IRLS did not settle or coefficients ran off, typically from zero cells.
    pub diverged: bool,
}

impl LoglinearModel {
    pub fn is_saturated(&self) -> bool {
        self.dof == 0
    }
}

fn validate_terms(n_lists: usize, terms: &[Term]) -> Result<()> {
    if terms.first() != Some(&Term::Intercept) {
        return Err(Error::Invalid("the intercept must be the first term".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &t in terms {
        let ok = match t {
            Term::Intercept => true,
            Term::Main(k) => k < n_lists,
            Term::Pair(j, k) => j < k && k < n_lists,
        };
        if !ok {
            return Err(Error::Invalid(format!("term {t} does not fit {n_lists} lists")));
        }
        if !seen.insert(t) {
            return Err(Error::Invalid(format!("term {t} listed twice")));
        }
    }
    Ok(())
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let tol = max * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * 100.0;
    sv.iter().filter(|&&s| s > tol).count()
}

fn check_rank(design: &DMatrix<f64>, terms: &[Term]) -> Result<()> {
    if rank(design) == terms.len() {
        return Ok(());
    }
    let mut kept: Vec<usize> = Vec::new();
    let mut collinear = Vec::new();
    for c in 0..terms.len() {
        kept.push(c);
        if rank(&design.select_columns(&kept)) < kept.len() {
            kept.pop();
            collinear.push(terms[c].to_string());
        }
    }
    Err(Error::RankDeficient(format!(
        "{} observed cells cannot identify {} terms; collinear with earlier terms: {}",
        design.nrows(),
        terms.len(),
        collinear.join(", ")
    )))
}

fn solve_weighted(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> Option<DVector<f64>> {
    let xtw = x.transpose() * DMatrix::from_diagonal(w);
    let lhs = &xtw * x;
    let rhs = &xtw * z;
    match lhs.clone().cholesky() {
        Some(c) => Some(c.solve(&rhs)),
        None => lhs.svd(true, true).solve(&rhs, 1e-14).ok(),
    }
}

fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m })
        .sum::<f64>()
}

/// Poisson MLE on the observed cells of `table` by iteratively reweighted least squares.
pub fn fit_loglinear(table: &ContingencyTable, terms: &[Term]) -> Result<LoglinearModel> {
    let j = table.n_lists();
    validate_terms(j, terms)?;
    let cells: Vec<CapturePattern> = CapturePattern::all(j).filter(|p| !p.is_all_zero()).collect();
    let dense = table.dense_f64();
    let y: Vec<f64> = cells.iter().map(|p| dense[p.index()]).collect();
    let design = DMatrix::from_fn(cells.len(), terms.len(), |r, c| terms[c].value(cells[r]));
    check_rank(&design, terms)?;

    let mean = (y.iter().sum::<f64>() / y.len() as f64).max(0.5);
    let mut mu: Vec<f64> = y.iter().map(|&v| v + 0.1 * mean).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let mut beta = DVector::<f64>::zeros(terms.len());
    let mut deviance = poisson_deviance(&y, &mu);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let w = DVector::from_vec(mu.clone());
        let z = DVector::from_iterator(y.len(), (0..y.len()).map(|i| eta[i] + (y[i] - mu[i]) / mu[i]));
        let Some(next) = solve_weighted(&design, &w, &z) else {
            break;
        };
        beta = next;
        let e = &design * &beta;
        eta = e.iter().copied().collect();
        mu = eta.iter().map(|v| v.exp().max(f64::MIN_POSITIVE)).collect();
        let dev = poisson_deviance(&y, &mu);
        let change = (dev - deviance).abs() / (dev.abs() + 0.1);
        deviance = dev;
        if change < IRLS_TOLERANCE {
            converged = true;
            break;
        }
    }
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let diverged = !converged
        || coefficients.iter().any(|b| !b.is_finite() || b.abs() > DIVERGENCE_BOUND)
        || mu.iter().any(|m| !(*m > 1e-10));

    let mut fitted = vec![0.0; 1 << j];
    fitted[0] = coefficients[0].exp();
    for (p, &m) in cells.iter().zip(&mu) {
        fitted[p.index()] = m;
    }
    let mut observed = dense;
    observed[0] = 0.0;
    let loglik: f64 = y
        .iter()
        .zip(&mu)
        .map(|(&y, &m)| y * m.ln() - m - ln_gamma(y + 1.0))
        .sum();
    let pearson_chi2: f64 = y.iter().zip(&mu).map(|(&y, &m)| (y - m).powi(2) / m).sum();
    let dof = cells.len() - terms.len();
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).expect("positive dof").sf(pearson_chi2)
    };
    let k = terms.len() as f64;
    Ok(LoglinearModel {
        n_lists: j,
        terms: terms.to_vec(),
        coefficients,
        fitted,
        observed,
        deviance,
        loglik,
        pearson_chi2,
        dof,
        p_value,
        aic: -2.0 * loglik + 2.0 * k,
        bic: -2.0 * loglik + k * (cells.len() as f64).ln(),
        iterations,
        diverged,
    })
}

/// `prod(lambda_odd) / prod(lambda_even)` over the observed cells.
pub fn missing_cell(model: &LoglinearModel) -> Result<f64> {
    missing_cell_from_fitted(model.n_lists, &model.fitted)
}

/// The odd/even product estimate from fitted means in pattern-index order
/// (entry 0 ignored).
pub fn missing_cell_from_fitted(n_lists: usize, fitted: &[f64]) -> Result<f64> {
    let mut log = 0.0;
    for p in CapturePattern::all(n_lists).filter(|p| !p.is_all_zero()) {
        let lambda = fitted[p.index()];
        if p.weight() % 2 == 1 {
            log += lambda.ln();
        } else if lambda > 0.0 {
            log -= lambda.ln();
        } else {
            return Err(Error::MissingCell(format!("fitted mean of even cell {p} is zero")));
        }
    }
    Ok(log.exp())
}

/// Two-list estimate `(M11 + M10)(M11 + M01) / M11`.
pub fn lincoln_petersen(m11: f64, m10: f64, m01: f64) -> Result<f64> {
    if !(m11 > 0.0) {
        return Err(Error::Domain("Lincoln-Petersen estimator needs M11 > 0".into()));
    }
    Ok((m11 + m10) * (m11 + m01) / m11)
}

/// Every candidate: intercept, all main effects and each subset of pairs.
pub fn candidate_models(n_lists: usize) -> Vec<Vec<Term>> {
    let all: Vec<(usize, usize)> = pairs(n_lists).collect();
    let mut out: Vec<Vec<Term>> = (0..1u64 << all.len())
        .map(|mask| {
            let chosen: Vec<(usize, usize)> = all
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &p)| p)
                .collect();
            hierarchical_terms(n_lists, &chosen)
        })
        .collect();
    out.sort_by_key(|t| std::cmp::Reverse(t.len()));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub label: String,
    pub pearson_chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub diverged: bool,
    pub missing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub terms: Vec<Term>,
    /// One entry per table, empty when the design is rank deficient.
    pub groups: Vec<GroupFit>,
    pub admissible: bool,
    pub note: Option<String>,
}

impl Candidate {
    fn min_p(&self) -> f64 {
        self.groups.iter().map(|g| g.p_value).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub lower_p: f64,
    pub exclude_saturated: bool,
    pub candidates: Vec<Candidate>,
    pub selected: usize,
    /// Missing-cell estimates of the selected model, one per table.
    pub missing: Vec<f64>,
}

impl SelectionReport {
    pub fn selected_candidate(&self) -> &Candidate {
        &self.candidates[self.selected]
    }
}

/// Chooses one term set admissible for every table: not saturated (when
/// excluded), Pearson p-value at least `lower_p`, and a finite fit. Among
/// admissible models the largest wins, ties going to the larger smallest p-value.
pub fn select_model(tables: &[&ContingencyTable], lower_p: f64, exclude_saturated: bool) -> Result<SelectionReport> {
    let Some(first) = tables.first() else {
        return Err(Error::Invalid("model selection needs at least one table".into()));
    };
    let j = first.n_lists();
    if tables.iter().any(|t| t.n_lists() != j) {
        return Err(Error::Invalid("tables differ in the number of lists".into()));
    }
    if !(0.0..=1.0).contains(&lower_p) {
        return Err(Error::Invalid(format!("lower p-value bound must lie in [0, 1], got {lower_p}")));
    }
    let mut candidates = Vec::new();
    for terms in candidate_models(j) {
        let mut groups = Vec::new();
        let mut note = None;
        for t in tables {
            match fit_loglinear(t, &terms) {
                Ok(m) => groups.push(GroupFit {
                    label: t.label().to_string(),
                    pearson_chi2: m.pearson_chi2,
                    dof: m.dof,
                    p_value: m.p_value,
                    loglik: m.loglik,
                    aic: m.aic,
                    bic: m.bic,
                    diverged: m.diverged,
                    missing: missing_cell(&m).ok(),
                }),
                Err(e) => {
                    note = Some(e.to_string());
                    groups.clear();
                    break;
                }
            }
        }
        let admissible = !groups.is_empty()
            && groups.iter().all(|g| {
                !g.diverged && g.missing.is_some() && g.p_value >= lower_p && !(exclude_saturated && g.dof == 0)
            });
        if note.is_none() && !admissible {
            if groups.iter().any(|g| g.diverged) {
                note = Some("fit diverged".into());
            } else if exclude_saturated && groups.iter().any(|g| g.dof == 0) {
                note = Some("saturated".into());
            }
        }
        candidates.push(Candidate { terms, groups, admissible, note });
    }
    let mut selected: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if !c.admissible {
            continue;
        }
        selected = match selected {
            None => Some(i),
            Some(b) => {
                let best = &candidates[b];
                let better = c.terms.len() > best.terms.len()
                    || (c.terms.len() == best.terms.len() && c.min_p() > best.min_p());
                Some(if better { i } else { b })
            }
        };
    }
    let Some(selected) = selected else {
        let listing: Vec<String> = candidates
            .iter()
            .map(|c| {
                let terms: Vec<String> = c.terms.iter().map(Term::to_string).collect();
                let ps: Vec<String> = c.groups.iter().map(|g| format!("{:.4}", g.p_value)).collect();
                format!("[{}] p=({}){}", terms.join(" "), ps.join(", "), c.note.as_deref().map(|n| format!(" {n}")).unwrap_or_default())
            })
            .collect();
        return Err(Error::NoAdmissibleModel(format!(
            "no candidate reaches p >= {lower_p}: {}",
            listing.join("; ")
        )));
    };
    let missing = candidates[selected]
        .groups
        .iter()
        .map(|g| g.missing.expect("admissible models have a missing-cell estimate"))
        .collect();
    Ok(SelectionReport {
        lower_p,
        exclude_saturated,
        candidates,
        selected,
        missing,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub tables: TablePair,
    pub raw_missing: [f64; 2],
    /// Integer counts placed in the all-zero cells (the estimates truncated).
    pub filled: [u64; 2],
    pub totals: [u64; 2],
    /// `N_E / N_U` of the completed tables.
    pub ratio: f64,
}

/// Fills the all-zero cells with the integer part of the missing-cell estimates.
pub fn complete_tables(tables: &TablePair, missing: [f64; 2]) -> Result<Completion> {
    if tables.is_complete() {
        return Err(Error::Invalid("tables are already complete".into()));
    }
    if missing.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::Domain(format!("missing-cell estimates must be finite and non-negative, got {missing:?}")));
    }
    let filled = missing.map(|m| m.floor() as u64);
    let exposed = tables.exposed.with_missing_cell(filled[0]);
    let unexposed = tables.unexposed.with_missing_cell(filled[1]);
    let totals = [exposed.total(), unexposed.total()];
    let ratio = totals[0] as f64 / totals[1] as f64;
    debug_assert_eq!(exposed.completeness(), Completeness::Complete);
    Ok(Completion {
        tables: TablePair::with_list_names(exposed, unexposed, tables.list_names.clone())?,
        raw_missing: missing,
        filled,
        totals,
        ratio,
    })
}
