//! Log-likelihoods for complete and observed tables.
//!
//! The observed-table likelihood marginalizes the unobserved all-zero cell over
//! a Poisson total. Because a Poisson total split multinomially yields
//! independent Poisson cells, the infinite sum collapses to
//! `sum_{c != 0} [M_c log(gamma p_c) - gamma p_c - log M_c!]`, which is what is
//! evaluated here.
//!
//! The `*_counts` variants take dense `f64` counts (pattern-index order) so that
//! fractional pseudo-counts can be used; index 0 is ignored by the observed-table
//! functions.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature;
use crate::rasch::{self, RaschParams};
use crate::tables::{CapturePattern, ContingencyTable, TablePair};
use crate::rasch::PoissonRates;

/// Smallest dispersion used when evaluating random-effects integrals.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Normal random effects: `theta_i ~ N(mu, sigma^2)` for exposed and
/// `N(0, sigma^2)` for unexposed individuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectsParams {
    pub mu: f64,
    pub sigma: f64,
}

impl RandomEffectsParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Domain(format!("invalid random effects (mu={mu}, sigma={sigma})")));
        }
        Ok(Self { mu, sigma })
    }

    pub fn effective_sigma(&self) -> f64 {
        self.sigma.max(SIGMA_FLOOR)
    }
}

fn ln_factorial(x: f64) -> f64 {
    if x == 0.0 || x == 1.0 {
        0.0
    } else {
        ln_gamma(x + 1.0)
    }
}

fn check_counts(counts: &[f64], params: &RaschParams) {
    assert_eq!(
        counts.len(),
        1 << params.n_lists(),
        "count vector must have 2^J entries"
    );
}

/// Multinomial log-density of a complete table.
pub fn complete_loglik_counts(counts: &[f64], params: &RaschParams, shift: f64) -> f64 {
    check_counts(counts, params);
    let n = params.n_lists();
    let total: f64 = counts.iter().sum();
    let mut ll = ln_factorial(total);
    for (i, &m) in counts.iter().enumerate() {
        if m > 0.0 {
            ll += m * rasch::log_cell_probability(params, shift, CapturePattern::from_index(i, n)) - ln_factorial(m);
        }
    }
    ll
}

/// [`complete_loglik_counts`] plus its gradient in the `[alpha.., alpha2.., shift]`
/// layout, accumulated into `grad`.
pub fn complete_loglik_gradient(counts: &[f64], params: &RaschParams, shift: f64, grad: &mut [f64]) -> f64 {
    check_counts(counts, params);
    let n = params.n_lists();
    let total: f64 = counts.iter().sum();
    let mut ll = ln_factorial(total);
    for (i, &m) in counts.iter().enumerate() {
        if m > 0.0 {
            let pattern = CapturePattern::from_index(i, n);
            ll += m * rasch::accumulate_log_cell_gradient(params, shift, pattern, m, grad) - ln_factorial(m);
        }
    }
    ll
}

pub fn complete_loglik(table: &ContingencyTable, params: &RaschParams, shift: f64) -> Result<f64> {
    if !table.is_complete() {
        return Err(Error::CompleteTableRequired);
    }
    check_table(table, params)?;
    Ok(complete_loglik_counts(&table.dense_f64(), params, shift))
}

fn check_table(table: &ContingencyTable, params: &RaschParams) -> Result<()> {
    if table.n_lists() != params.n_lists() {
        return Err(Error::Invalid(format!(
            "table has {} lists, parameters have {}",
            table.n_lists(),
            params.n_lists()
        )));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

/// `P(captured by at least one list)`, computed without cancellation.
pub fn capture_probability(params: &RaschParams, shift: f64) -> f64 {
    -rasch::log_miss_probability(params, shift).exp_m1()
}

/// Poissonized observed-table log-likelihood.
pub fn observed_loglik_counts(counts: &[f64], gamma: f64, params: &RaschParams, shift: f64) -> f64 {
    check_counts(counts, params);
    let n = params.n_lists();
    let mut ll = -gamma * capture_probability(params, shift);
    let mut n_obs = 0.0;
    for (i, &m) in counts.iter().enumerate().skip(1) {
        if m > 0.0 {
            n_obs += m;
            ll += m * rasch::log_cell_probability(params, shift, CapturePattern::from_index(i, n)) - ln_factorial(m);
        }
    }
    if n_obs > 0.0 {
        ll += n_obs * gamma.ln();
    }
    ll
}

/// Observed-table log-likelihood and its gradient. The structural gradient is
/// accumulated into `grad` (`[alpha.., alpha2.., shift]`); the derivative with
/// respect to `log gamma` is returned alongside the value.
pub fn observed_loglik_gradient(
    counts: &[f64],
    gamma: f64,
    params: &RaschParams,
    shift: f64,
    grad: &mut [f64],
) -> (f64, f64) {
    check_counts(counts, params);
    let n = params.n_lists();
    let mut ll = 0.0;
    let mut n_obs = 0.0;
    for (i, &m) in counts.iter().enumerate().skip(1) {
        if m > 0.0 {
            n_obs += m;
            let pattern = CapturePattern::from_index(i, n);
            ll += m * rasch::accumulate_log_cell_gradient(params, shift, pattern, m, grad) - ln_factorial(m);
        }
    }
    // -gamma (1 - p0) contributes gamma * p0 * d log p0
    let log_p0 = rasch::log_miss_probability(params, shift);
    let p0 = log_p0.exp();
    let mut scratch = vec![0.0; grad.len()];
    rasch::accumulate_log_cell_gradient(params, shift, CapturePattern::all_zero(n), gamma * p0, &mut scratch);
    for (g, s) in grad.iter_mut().zip(&scratch) {
        *g += s;
    }
    let captured = -log_p0.exp_m1();
    ll -= gamma * captured;
    if n_obs > 0.0 {
        ll += n_obs * gamma.ln();
    }
    (ll, n_obs - gamma * captured)
}

pub fn observed_loglik(table: &ContingencyTable, gamma: f64, params: &RaschParams, shift: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_table(table, params)?;
    let mut counts = table.dense_f64();
    counts[0] = 0.0;
    Ok(observed_loglik_counts(&counts, gamma, params, shift))
}

/// Sum of the exposed (shift `theta`) and unexposed (shift 0) observed-table
/// log-likelihoods.
pub fn joint_loglik(tables: &TablePair, rates: &PoissonRates, params: &RaschParams) -> Result<f64> {
    Ok(observed_loglik(&tables.exposed, rates.gamma_exposed, params, params.theta())?
        + observed_loglik(&tables.unexposed, rates.gamma_unexposed, params, 0.0)?)
}

/// Complete-table log-likelihood as a function of the shift, with its first
/// two derivatives.
pub(crate) fn complete_shift_density<'a>(
    counts: &'a [f64],
    params: &'a RaschParams,
) -> impl Fn(f64) -> (f64, f64, f64) + 'a {
    let n = params.n_lists();
    let total: f64 = counts.iter().sum();
    let constant = ln_factorial(total) - counts.iter().map(|&m| ln_factorial(m)).sum::<f64>();
    move |t| {
        let mut v = constant;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (i, &m) in counts.iter().enumerate() {
            if m > 0.0 {
                let (l, a, b) = rasch::log_cell_shift_derivatives(params, t, CapturePattern::from_index(i, n));
                v += m * l;
                d1 += m * a;
                d2 += m * b;
            }
        }
        (v, d1, d2)
    }
}

/// Observed-table log-likelihood as a function of the shift.
pub(crate) fn observed_shift_density<'a>(
    counts: &'a [f64],
    gamma: f64,
    params: &'a RaschParams,
) -> impl Fn(f64) -> (f64, f64, f64) + 'a {
    let n = params.n_lists();
    let n_obs: f64 = counts[1..].iter().sum();
    let mut constant = -counts[1..].iter().map(|&m| ln_factorial(m)).sum::<f64>();
    if n_obs > 0.0 {
        constant += n_obs * gamma.ln();
    }
    move |t| {
        let mut v = constant;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (i, &m) in counts.iter().enumerate().skip(1) {
            if m > 0.0 {
                let (l, a, b) = rasch::log_cell_shift_derivatives(params, t, CapturePattern::from_index(i, n));
                v += m * l;
                d1 += m * a;
                d2 += m * b;
            }
        }
        let (l0, a0, b0) = rasch::log_cell_shift_derivatives(params, t, CapturePattern::all_zero(n));
        let p0 = l0.exp();
        v -= gamma * (-l0.exp_m1());
        d1 += gamma * p0 * a0;
        d2 += gamma * p0 * (a0 * a0 + b0);
        (v, d1, d2)
    }
}

fn center(re: &RandomEffectsParams, exposed: bool) -> f64 {
    if exposed {
        re.mu
    } else {
        0.0
    }
}

pub fn re_complete_loglik_counts(
    counts: &[f64],
    params: &RaschParams,
    re: &RandomEffectsParams,
    exposed: bool,
) -> Result<f64> {
    check_counts(counts, params);
    let density = complete_shift_density(counts, params);
    quadrature::log_gaussian_expectation(&density, center(re, exposed), re.effective_sigma())
}

/// Complete-table likelihood integrated over one normal shift shared by the
/// whole table.
pub fn re_complete_loglik(
    table: &ContingencyTable,
    params: &RaschParams,
    re: &RandomEffectsParams,
    exposed: bool,
) -> Result<f64> {
    if !table.is_complete() {
        return Err(Error::CompleteTableRequired);
    }
    check_table(table, params)?;
    re_complete_loglik_counts(&table.dense_f64(), params, re, exposed)
}

pub fn re_observed_loglik_counts(
    counts: &[f64],
    gamma: f64,
    params: &RaschParams,
    re: &RandomEffectsParams,
    exposed: bool,
) -> Result<f64> {
    check_counts(counts, params);
    check_gamma(gamma)?;
    let density = observed_shift_density(counts, gamma, params);
    quadrature::log_gaussian_expectation(&density, center(re, exposed), re.effective_sigma())
}

/// Observed-table likelihood with the Poisson sum inside and the normal
/// shift integral outside.
pub fn re_observed_loglik(
    table: &ContingencyTable,
    gamma: f64,
    params: &RaschParams,
    re: &RandomEffectsParams,
    exposed: bool,
) -> Result<f64> {
    check_table(table, params)?;
    let mut counts = table.dense_f64();
    counts[0] = 0.0;
    re_observed_loglik_counts(&counts, gamma, params, re, exposed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::Completeness;
    use approx::assert_abs_diff_eq;

    fn zeros3() -> RaschParams {
        RaschParams::dynamic(vec![0.0; 3], vec![0.0; 3], 0.0).unwrap()
    }

    #[test]
    fn complete_empty_table_is_zero() {
        let t = ContingencyTable::from_counts("E", 3, Completeness::Complete, []).unwrap();
        assert_eq!(complete_loglik(&t, &zeros3(), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn complete_single_individual() {
        let t = ContingencyTable::from_counts("E", 3, Completeness::Complete, [("111".parse().unwrap(), 1)])
            .unwrap();
        assert_abs_diff_eq!(complete_loglik(&t, &zeros3(), 0.0).unwrap(), (0.125f64).ln(), epsilon = 1e-14);
    }

    #[test]
    fn complete_requires_complete_table() {
        let t = ContingencyTable::from_counts("E", 3, Completeness::MissingAllZero, []).unwrap();
        assert!(matches!(complete_loglik(&t, &zeros3(), 0.0), Err(Error::CompleteTableRequired)));
    }

    #[test]
    fn observed_empty_table() {
        let t = ContingencyTable::from_counts("E", 3, Completeness::MissingAllZero, []).unwrap();
        let p = RaschParams::independent(vec![0.3, -0.2, 0.1], 0.0).unwrap();
        let gamma = 7.5;
        let p0 = rasch::miss_probability(&p, 0.0);
        assert_abs_diff_eq!(observed_loglik(&t, gamma, &p, 0.0).unwrap(), -gamma * (1.0 - p0), epsilon = 1e-13);
        assert!(matches!(observed_loglik(&t, 0.0, &p, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn joint_of_identical_tables_doubles() {
        let t = ContingencyTable::from_counts(
            "E",
            3,
            Completeness::MissingAllZero,
            [("111".parse().unwrap(), 4), ("010".parse().unwrap(), 3)],
        )
        .unwrap();
        let pair = TablePair::new(t.clone(), t.clone()).unwrap();
        let p = RaschParams::dynamic(vec![0.1, 0.2, 0.3], vec![0.4, 0.5, 0.6], 0.0).unwrap();
        let single = observed_loglik(&t, 12.0, &p, 0.0).unwrap();
        let joint = joint_loglik(&pair, &PoissonRates::new(12.0, 12.0).unwrap(), &p).unwrap();
        assert_eq!(joint, 2.0 * single);
    }

    #[test]
    fn re_at_sigma_floor_equals_fixed_effect() {
        let t = ContingencyTable::from_counts(
            "E",
            3,
            Completeness::Complete,
            [("000".parse().unwrap(), 20), ("111".parse().unwrap(), 40), ("101".parse().unwrap(), 9)],
        )
        .unwrap();
        let p = RaschParams::dynamic(vec![0.1, -0.2, 0.3], vec![0.4, 0.5, 0.6], 0.0).unwrap();
        let re = RandomEffectsParams::new(-0.3, 0.0).unwrap();
        let got = re_complete_loglik(&t, &p, &re, true).unwrap();
        let want = complete_loglik(&t, &p, -0.3).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-6);
        let obs = t.without_missing_cell();
        let got = re_observed_loglik(&obs, 80.0, &p, &re, false).unwrap();
        let want = observed_loglik(&obs, 80.0, &p, 0.0).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-6);
    }
}
