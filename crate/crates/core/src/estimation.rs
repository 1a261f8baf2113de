//! Maximum-likelihood fitting of the capture models.
//!
//! All variants share one contract: the parameters are mapped to an
//! unconstrained working vector (list strengths, interactions and shifts as-is,
//! Poisson rates and the random-effects dispersion on a log scale) and
//! maximized by quasi-Newton ascent from several jittered starts. For the
//! fixed-effect observed-table variants the Poisson rates are profiled out in
//! closed form, `gamma = N_obs / (1 - p_0)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{self, RandomEffectsParams, SIGMA_FLOOR};
use crate::optim::{self, Controls, Outcome};
use crate::rasch::{self, n_pairs, pairs, CaptureModel, PoissonRates, RaschParams};
use crate::rng::substream;
use crate::tables::{CapturePattern, TablePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    IncompleteFreeTheta,
    IncompleteNullTheta,
    CompleteFreeTheta,
    CompleteNullTheta,
    ReComplete,
    ReIncomplete,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::IncompleteFreeTheta,
        Variant::IncompleteNullTheta,
        Variant::CompleteFreeTheta,
        Variant::CompleteNullTheta,
        Variant::ReComplete,
        Variant::ReIncomplete,
    ];

    pub fn needs_complete_tables(self) -> bool {
        matches!(self, Variant::CompleteFreeTheta | Variant::CompleteNullTheta | Variant::ReComplete)
    }

    pub fn has_shift(self) -> bool {
        !matches!(self, Variant::IncompleteNullTheta | Variant::CompleteNullTheta)
    }

    pub fn is_random_effects(self) -> bool {
        matches!(self, Variant::ReComplete | Variant::ReIncomplete)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::IncompleteFreeTheta => "incomplete-free-theta",
            Variant::IncompleteNullTheta => "incomplete-null-theta",
            Variant::CompleteFreeTheta => "complete-free-theta",
            Variant::CompleteNullTheta => "complete-null-theta",
            Variant::ReComplete => "re-complete",
            Variant::ReIncomplete => "re-incomplete",
        }
    }

    /// Fixed-effect variant used to seed the random-effects fits.
    fn fixed_counterpart(self) -> Variant {
        match self {
            Variant::ReComplete => Variant::CompleteFreeTheta,
            Variant::ReIncomplete => Variant::IncompleteFreeTheta,
            v => v,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub variant: Variant,
    pub model: CaptureModel,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub multistart: usize,
    pub seed: u64,
    pub jitter_sd: f64,
}

impl FitSpec {
    pub fn new(variant: Variant, model: CaptureModel) -> Self {
        Self {
            variant,
            model,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            max_iter: 500,
            multistart: 5,
            seed: 0,
            jitter_sd: 0.25,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_multistart(mut self, multistart: usize) -> Self {
        self.multistart = multistart;
        self
    }

    fn controls(&self) -> Controls {
        Controls {
            grad_tol: self.grad_tol,
            rel_tol: self.rel_tol,
            max_iter: self.max_iter,
        }
    }
}

/// Dense per-group counts used by the fitter. Counts may be fractional.
#[derive(Debug, Clone, PartialEq)]
pub struct FitData {
    n_lists: usize,
    complete: bool,
    exposed: Vec<f64>,
    unexposed: Vec<f64>,
}

impl FitData {
    pub fn from_tables(tables: &TablePair) -> Self {
        Self {
            n_lists: tables.n_lists(),
            complete: tables.is_complete(),
            exposed: tables.exposed.dense_f64(),
            unexposed: tables.unexposed.dense_f64(),
        }
    }

    /// Pseudo-counts in pattern-index order. For observed data entry 0 is ignored.
    pub fn from_pseudo_counts(n_lists: usize, complete: bool, exposed: Vec<f64>, unexposed: Vec<f64>) -> Result<Self> {
        let cells = 1usize << n_lists;
        if exposed.len() != cells || unexposed.len() != cells {
            return Err(Error::Invalid(format!("expected {cells} pseudo-counts per group")));
        }
        if exposed.iter().chain(&unexposed).any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Invalid("pseudo-counts must be finite and non-negative".into()));
        }
        let (mut exposed, mut unexposed) = (exposed, unexposed);
        if !complete {
            exposed[0] = 0.0;
            unexposed[0] = 0.0;
        }
        Ok(Self { n_lists, complete, exposed, unexposed })
    }

    pub fn n_lists(&self) -> usize {
        self.n_lists
    }

    fn groups(&self) -> [&[f64]; 2] {
        [&self.exposed, &self.unexposed]
    }

    fn total(counts: &[f64], complete: bool) -> f64 {
        if complete {
            counts.iter().sum()
        } else {
            counts[1..].iter().sum()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub miss_probability_exposed: f64,
    pub miss_probability_unexposed: f64,
    pub expected_missing_exposed: f64,
    pub expected_missing_unexposed: f64,
    /// `gamma_E / gamma_U` for observed-table fits, `N_E / N_U` for complete tables.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub variant: Variant,
    pub params: RaschParams,
    pub random_effects: Option<RandomEffectsParams>,
    pub rates: Option<PoissonRates>,
    pub loglik: f64,
    pub converged: bool,
    /// Sup-norm of the gradient in the working parameterization.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub n_restarts_used: usize,
    /// Index of the start that produced this result.
    pub best_start: usize,
    pub derived: Derived,
    pub not_estimable: Vec<String>,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// Shift applied to the exposed group: theta, mu, or 0 under the null.
    pub fn exposed_shift(&self) -> f64 {
        match self.random_effects {
            Some(re) => re.mu,
            None => self.params.theta(),
        }
    }
}

/// `N_obs / (1 - p_0)`: the rate maximizing the observed-table likelihood for
/// fixed capture probabilities.
pub fn profile_gamma(n_obs: f64, miss_probability: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&miss_probability) {
        return Err(Error::Domain(format!(
            "miss probability must lie in [0, 1), got {miss_probability}"
        )));
    }
    if n_obs < 0.0 {
        return Err(Error::Domain(format!("observed count must be non-negative, got {n_obs}")));
    }
    Ok(n_obs / (1.0 - miss_probability))
}

/// Odds ratio of exposure among cases versus controls. With `rare`, uses the
/// approximation `(N_E / N_U) (T_U / T_E)`.
pub fn odds_ratio(n_e: f64, n_u: f64, t_e: f64, t_u: f64, rare: bool) -> Result<f64> {
    if rare {
        if n_u <= 0.0 || t_e <= 0.0 {
            return Err(Error::Domain("odds ratio needs N_U > 0 and T_E > 0".into()));
        }
        return Ok(n_e / n_u * (t_u / t_e));
    }
    if n_u <= 0.0 || n_e >= t_e || n_u >= t_u {
        return Err(Error::Domain(format!(
            "exact odds ratio needs N_U > 0, N_E < T_E and N_U < T_U (got N_E={n_e}, N_U={n_u}, T_E={t_e}, T_U={t_u})"
        )));
    }
    Ok(n_e * (t_u - n_u) / (n_u * (t_e - n_e)))
}

/// The data restricted to the lists that captured someone.
struct Reduced {
    kept: Vec<usize>,
    n_lists: usize,
    complete: bool,
    groups: [Vec<f64>; 2],
}

impl Reduced {
    fn new(data: &FitData) -> Self {
        let j = data.n_lists;
        let kept: Vec<usize> = (0..j)
            .filter(|&k| {
                data.groups().iter().any(|counts| {
                    counts.iter().enumerate().any(|(i, &m)| m > 0.0 && CapturePattern::from_index(i, j).captured(k))
                })
            })
            .collect();
        let n = kept.len().max(1);
        let groups = data.groups().map(|counts| {
            let mut out = vec![0.0; 1 << n];
            for (i, &m) in counts.iter().enumerate() {
                let p = CapturePattern::from_index(i, j);
                if (0..j).any(|k| p.captured(k) && !kept.contains(&k)) {
                    continue;
                }
                let mut idx = 0usize;
                for &k in &kept {
                    idx = (idx << 1) | usize::from(p.captured(k));
                }
                out[idx] += m;
            }
            out
        });
        Self {
            kept,
            n_lists: n,
            complete: data.complete,
            groups,
        }
    }
}

/// Layout of the working vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    variant: Variant,
    model: CaptureModel,
    n_lists: usize,
}

impl Layout {
    fn n_pairs(&self) -> usize {
        match self.model {
            CaptureModel::Dynamic => n_pairs(self.n_lists),
            CaptureModel::Independent => 0,
        }
    }

    fn shift_slot(&self) -> Option<usize> {
        self.variant.has_shift().then(|| self.n_lists + self.n_pairs())
    }

    fn structural_len(&self) -> usize {
        self.n_lists + self.n_pairs() + usize::from(self.variant.has_shift())
    }

    fn dim(&self) -> usize {
        self.structural_len()
            + match self.variant {
                Variant::ReComplete => 1,
                Variant::ReIncomplete => 3,
                _ => 0,
            }
    }

    fn log_gamma_slots(&self) -> Option<(usize, usize)> {
        (self.variant == Variant::ReIncomplete).then(|| (self.structural_len(), self.structural_len() + 1))
    }

    fn log_sigma_slot(&self) -> Option<usize> {
        self.variant.is_random_effects().then(|| self.dim() - 1)
    }

    fn params(&self, x: &[f64]) -> RaschParams {
        let j = self.n_lists;
        let alpha = x[..j].to_vec();
        let alpha2 = match self.model {
            CaptureModel::Dynamic => x[j..j + self.n_pairs()].to_vec(),
            CaptureModel::Independent => vec![0.0; n_pairs(j)],
        };
        let theta = self.shift_slot().map_or(0.0, |s| x[s]);
        RaschParams::with_unobserved_lists(alpha, alpha2, theta, self.model)
    }

    fn sigma(&self, x: &[f64]) -> Option<f64> {
        self.log_sigma_slot().map(|s| SIGMA_FLOOR + x[s].exp())
    }

    /// Adds a `[alpha.., alpha2.., shift]` gradient into the working gradient.
    fn scatter(&self, full: &[f64], with_shift: bool, out: &mut [f64]) {
        let j = self.n_lists;
        for k in 0..j {
            out[k] += full[k];
        }
        if self.model == CaptureModel::Dynamic {
            for p in 0..n_pairs(j) {
                out[j + p] += full[j + p];
            }
        }
        if with_shift {
            if let Some(s) = self.shift_slot() {
                out[s] += full[j + n_pairs(j)];
            }
        }
    }
}

struct Problem<'a> {
    layout: Layout,
    data: &'a Reduced,
}

impl Problem<'_> {
    fn fixed_value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let params = self.layout.params(x);
        let mut value = 0.0;
        for (g, counts) in self.data.groups.iter().enumerate() {
            let exposed = g == 0;
            let shift = if exposed { params.theta() } else { 0.0 };
            let mut full = vec![0.0; rasch::gradient_len(self.layout.n_lists)];
            if self.data.complete {
                value += likelihood::complete_loglik_gradient(counts, &params, shift, &mut full);
            } else {
                let n_obs = FitData::total(counts, false);
                let gamma = n_obs / likelihood::capture_probability(&params, shift);
                let (v, _) = likelihood::observed_loglik_gradient(counts, gamma, &params, shift, &mut full);
                value += v;
            }
            self.layout.scatter(&full, exposed, grad);
        }
        value
    }

    fn re_value(&self, x: &[f64]) -> f64 {
        let params = self.layout.params(x);
        let Some(sigma) = self.layout.sigma(x) else {
            return f64::NAN;
        };
        let mu = params.theta();
        let re = RandomEffectsParams { mu, sigma };
        let mut value = 0.0;
        for (g, counts) in self.data.groups.iter().enumerate() {
            let exposed = g == 0;
            let v = match self.layout.log_gamma_slots() {
                Some((e, u)) => {
                    let gamma = x[if exposed { e } else { u }].exp();
                    likelihood::re_observed_loglik_counts(counts, gamma, &params, &re, exposed)
                }
                None => likelihood::re_complete_loglik_counts(counts, &params, &re, exposed),
            };
            match v {
                Ok(v) => value += v,
                Err(_) => return f64::NAN,
            }
        }
        value
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        if self.layout.variant.is_random_effects() {
            let v = self.re_value(x);
            if v.is_finite() {
                optim::fd_gradient(|y| self.re_value(y), x, 1e-5, grad);
            }
            v
        } else {
            self.fixed_value_grad(x, grad)
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn moment_start(layout: &Layout, data: &Reduced) -> Vec<f64> {
    let j = layout.n_lists;
    let mut x = vec![0.0; layout.dim()];
    let total: f64 = data.groups.iter().map(|c| FitData::total(c, data.complete)).sum();
    for k in 0..j {
        let captured: f64 = data
            .groups
            .iter()
            .flat_map(|c| c.iter().enumerate())
            .filter(|(i, _)| CapturePattern::from_index(*i, j).captured(k))
            .map(|(_, m)| m)
            .sum();
        let frac = if total > 0.0 { captured / total } else { 0.5 };
        x[k] = logit(frac.clamp(0.02, 0.98));
    }
    x
}

fn validate(data: &FitData, spec: &FitSpec) -> Result<()> {
    if spec.variant.needs_complete_tables() != data.complete {
        return Err(Error::Invalid(format!(
            "variant {} requires {} tables",
            spec.variant,
            if spec.variant.needs_complete_tables() { "complete" } else { "observed (all-zero cell missing)" }
        )));
    }
    if spec.multistart == 0 {
        return Err(Error::Invalid("multistart must be at least 1".into()));
    }
    for (label, counts) in ["exposed", "unexposed"].iter().zip(data.groups()) {
        if FitData::total(counts, data.complete) <= 0.0 {
            return Err(Error::Invalid(format!("the {label} table has no positive counts")));
        }
    }
    Ok(())
}

fn check_identified(layout: &Layout) -> Result<()> {
    let cells = 2 * ((1usize << layout.n_lists) - 1);
    let params = layout.dim()
        + if layout.variant.needs_complete_tables() || layout.variant.is_random_effects() {
            0
        } else {
            2 // profiled rates
        };
    if params > cells {
        return Err(Error::Unidentified { cells, params });
    }
    Ok(())
}

fn run_starts(problem: &Problem<'_>, base: &[f64], spec: &FitSpec, jitter_len: usize) -> Vec<Outcome> {
    let controls = spec.controls();
    (0..spec.multistart)
        .into_par_iter()
        .map(|r| {
            let mut x0 = base.to_vec();
            if r > 0 {
                let mut rng = substream(spec.seed, &[r as u64]);
                for v in x0.iter_mut().take(jitter_len) {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += spec.jitter_sd * z;
                }
            }
            optim::maximize(&|x: &[f64], g: &mut [f64]| problem.value_grad(x, g), &x0, &controls)
        })
        .collect()
}

/// Picks the best converged outcome, lowest start index on ties.
fn pick(outcomes: &[Outcome]) -> (usize, bool) {
    let mut best: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if o.converged && o.value.is_finite() && best.is_none_or(|b| o.value > outcomes[b].value) {
            best = Some(i);
        }
    }
    if let Some(b) = best {
        return (b, true);
    }
    let mut b = 0;
    for (i, o) in outcomes.iter().enumerate() {
        if o.value > outcomes[b].value || !outcomes[b].value.is_finite() {
            b = i;
        }
    }
    (b, false)
}

/// Fits the variant in `spec` to a pair of tables.
pub fn fit(tables: &TablePair, spec: &FitSpec) -> Result<FitResult> {
    fit_data(&FitData::from_tables(tables), spec)
}

pub fn fit_data(data: &FitData, spec: &FitSpec) -> Result<FitResult> {
    validate(data, spec)?;
    let reduced = Reduced::new(data);
    let mut warnings = Vec::new();
    let mut not_estimable = Vec::new();
    for k in 0..data.n_lists {
        if !reduced.kept.contains(&k) {
            warnings.push(format!("list {} never captured anyone; its parameters are not estimable", k + 1));
            not_estimable.push(format!("alpha_{}", k + 1));
            if spec.model == CaptureModel::Dynamic {
                for (a, b) in pairs(data.n_lists).filter(|&(a, b)| a == k || b == k) {
                    not_estimable.push(format!("alpha_{}{}", a + 1, b + 1));
                }
            }
        }
    }
    if reduced.kept.is_empty() {
        return Err(Error::Invalid("no list captured anyone".into()));
    }
    let layout = Layout {
        variant: spec.variant,
        model: spec.model,
        n_lists: reduced.n_lists,
    };
    check_identified(&layout)?;

    let problem = Problem { layout, data: &reduced };
    let (base, jitter_len) = if spec.variant.is_random_effects() {
        let fixed_layout = Layout {
            variant: spec.variant.fixed_counterpart(),
            ..layout
        };
        let fixed_problem = Problem { layout: fixed_layout, data: &reduced };
        let fixed_start = moment_start(&fixed_layout, &reduced);
        let fixed_outcomes = run_starts(&fixed_problem, &fixed_start, spec, fixed_layout.structural_len());
        let (b, _) = pick(&fixed_outcomes);
        let fixed_x = &fixed_outcomes[b].x;
        let mut x = vec![0.0; layout.dim()];
        x[..fixed_layout.structural_len()].copy_from_slice(&fixed_x[..fixed_layout.structural_len()]);
        if let Some((e, u)) = layout.log_gamma_slots() {
            let params = fixed_layout.params(fixed_x);
            for (slot, (g, counts)) in [e, u].into_iter().zip(reduced.groups.iter().enumerate()) {
                let shift = if g == 0 { params.theta() } else { 0.0 };
                let n_obs = FitData::total(counts, false);
                x[slot] = (n_obs / likelihood::capture_probability(&params, shift)).ln();
            }
        }
        let ls = layout.log_sigma_slot().expect("random effects layout");
        x[ls] = (0.05f64 - SIGMA_FLOOR).ln();
        (x, layout.structural_len())
    } else {
        (moment_start(&layout, &reduced), layout.structural_len())
    };

    let outcomes = run_starts(&problem, &base, spec, jitter_len);
    let (best_index, converged) = pick(&outcomes);
    let best = &outcomes[best_index];
    let result = assemble(data, &reduced, &layout, best, best_index, spec, converged, warnings, not_estimable)?;
    if !converged {
        return Err(Error::NotConverged {
            restarts: spec.multistart,
            gradient: best.gradient_norm(),
            best: Box::new(result),
        });
    }
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    data: &FitData,
    reduced: &Reduced,
    layout: &Layout,
    best: &Outcome,
    best_index: usize,
    spec: &FitSpec,
    converged: bool,
    warnings: Vec<String>,
    not_estimable: Vec<String>,
) -> Result<FitResult> {
    let j = data.n_lists;
    let reduced_params = layout.params(&best.x);
    let mut alpha = vec![f64::NEG_INFINITY; j];
    let mut alpha2 = vec![0.0; n_pairs(j)];
    for (rk, &k) in reduced.kept.iter().enumerate() {
        alpha[k] = reduced_params.alpha()[rk];
        for (rj, &jj) in reduced.kept.iter().enumerate().take(rk) {
            alpha2[rasch::pair_index(jj, k, j)] = reduced_params.interaction(rj, rk);
        }
    }
    let params = RaschParams::with_unobserved_lists(alpha, alpha2, reduced_params.theta(), spec.model);
    let shift = params.theta();
    let random_effects = layout.sigma(&best.x).map(|sigma| RandomEffectsParams { mu: shift, sigma });

    let p0_e = rasch::miss_probability(&params, shift);
    let p0_u = rasch::miss_probability(&params, 0.0);
    let [e_counts, u_counts] = data.groups();
    let (rates, loglik, n_e, n_u) = if data.complete {
        let ll = match &random_effects {
            Some(re) => {
                likelihood::re_complete_loglik_counts(e_counts, &params, re, true)?
                    + likelihood::re_complete_loglik_counts(u_counts, &params, re, false)?
            }
            None => {
                likelihood::complete_loglik_counts(e_counts, &params, shift)
                    + likelihood::complete_loglik_counts(u_counts, &params, 0.0)
            }
        };
        (None, ll, FitData::total(e_counts, true), FitData::total(u_counts, true))
    } else {
        let (g_e, g_u) = match layout.log_gamma_slots() {
            Some((e, u)) => (best.x[e].exp(), best.x[u].exp()),
            None => (
                profile_gamma(FitData::total(e_counts, false), p0_e)?,
                profile_gamma(FitData::total(u_counts, false), p0_u)?,
            ),
        };
        let rates = PoissonRates::new(g_e, g_u)?;
        let ll = match &random_effects {
            Some(re) => {
                likelihood::re_observed_loglik_counts(e_counts, g_e, &params, re, true)?
                    + likelihood::re_observed_loglik_counts(u_counts, g_u, &params, re, false)?
            }
            None => {
                likelihood::observed_loglik_counts(e_counts, g_e, &params, shift)
                    + likelihood::observed_loglik_counts(u_counts, g_u, &params, 0.0)
            }
        };
        (Some(rates), ll, g_e, g_u)
    };

    Ok(FitResult {
        variant: spec.variant,
        params,
        random_effects,
        rates,
        loglik,
        converged,
        gradient_norm: best.gradient_norm(),
        iterations: best.iterations,
        n_restarts_used: spec.multistart,
        best_start: best_index,
        derived: Derived {
            miss_probability_exposed: p0_e,
            miss_probability_unexposed: p0_u,
            expected_missing_exposed: n_e * p0_e,
            expected_missing_unexposed: n_u * p0_u,
            ratio: n_e / n_u,
        },
        not_estimable,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn profile_gamma_examples() {
        assert_abs_diff_eq!(profile_gamma(508.0, 0.1885).unwrap(), 626.0, epsilon = 0.5);
        assert_abs_diff_eq!(profile_gamma(413.0, 0.184).unwrap(), 506.0, epsilon = 0.5);
        assert_eq!(profile_gamma(0.0, 0.3).unwrap(), 0.0);
        assert!(profile_gamma(10.0, 1.0).is_err());
    }

    #[test]
    fn odds_ratio_examples() {
        assert_abs_diff_eq!(odds_ratio(40.0, 40.0, 1e4, 1e4, false).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(odds_ratio(40.0, 40.0, 1e4, 1e4, true).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(odds_ratio(50.0, 100.0, 1e6, 2e6, true).unwrap(), 1.0, epsilon = 1e-15);
        assert!(odds_ratio(1.0, 0.0, 10.0, 10.0, true).is_err());
        assert!(odds_ratio(10.0, 1.0, 10.0, 10.0, false).is_err());
    }

    #[test]
    fn odds_ratio_rare_approximation_is_close() {
        for &frac in &[1e-4, 5e-4, 9.9e-4] {
            for &(t_e, t_u) in &[(1e5, 2e5), (3e6, 1e6), (5e4, 5e4)] {
                let (n_e, n_u) = (frac * t_e, frac * 0.7 * t_u);
                let exact = odds_ratio(n_e, n_u, t_e, t_u, false).unwrap();
                let rare = odds_ratio(n_e, n_u, t_e, t_u, true).unwrap();
                assert!(((rare - exact) / exact).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }
}
