//! Parametric-bootstrap null distribution of the shift estimate and the
//! three-sided decision rule.
//!
//! Hypotheses, for a margin `delta >= 0`:
//! `H0: |theta| <= delta`, `H+: theta > delta`, `H-: theta < -delta`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit, fit_data, FitData, FitResult, FitSpec, Variant};
use crate::rasch::{self, CaptureModel};
use crate::rng::{multinomial, poisson, substream};
use crate::tables::TablePair;

pub const DEFAULT_REPLICATES: usize = 1500;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Observed tables; totals redrawn from the fitted Poisson rates.
    Incomplete,
    /// Complete tables; totals held at their observed values.
    Complete,
}

impl Regime {
    pub fn of(tables: &TablePair) -> Regime {
        if tables.is_complete() {
            Regime::Complete
        } else {
            Regime::Incomplete
        }
    }

    fn variants(self) -> (Variant, Variant) {
        match self {
            Regime::Incomplete => (Variant::IncompleteNullTheta, Variant::IncompleteFreeTheta),
            Regime::Complete => (Variant::CompleteNullTheta, Variant::CompleteFreeTheta),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Incomplete => "incomplete",
            Regime::Complete => "complete",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "incomplete" => Ok(Regime::Incomplete),
            "complete" => Ok(Regime::Complete),
            _ => Err(Error::Invalid(format!("unknown regime {s:?} (expected incomplete or complete)"))),
        }
    }
}

/// Empirical quantile by linear interpolation between order statistics at
/// position `(n - 1) p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub replicates: usize,
    pub seed: u64,
    pub model: CaptureModel,
    /// Starts per replicate fit.
    pub multistart: usize,
}

impl BootstrapSpec {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            model: CaptureModel::Dynamic,
            multistart: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    /// Shift estimates in replicate order, excluded replicates omitted.
    pub draws: Vec<f64>,
    pub seed: u64,
    pub regime: Regime,
    pub requested: usize,
    /// Replicates that needed a second substream.
    pub retried: usize,
    pub excluded: usize,
    /// The null fit the replicates were drawn from.
    pub generating: FitResult,
    sorted: Vec<f64>,
}

impl NullDistribution {
    pub fn from_draws(draws: Vec<f64>, regime: Regime, generating: FitResult) -> Result<Self> {
        if draws.is_empty() || draws.iter().any(|d| !d.is_finite()) {
            return Err(Error::Invalid("null draws must be non-empty and finite".into()));
        }
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            requested: draws.len(),
            draws,
            seed: 0,
            regime,
            retried: 0,
            excluded: 0,
            generating,
            sorted,
        })
    }

    pub fn quantile(&self, p: f64) -> f64 {
        quantile(&self.sorted, p)
    }

    pub fn quantiles(&self, alpha: f64) -> Quantiles {
        Quantiles {
            lower_half: self.quantile(alpha / 2.0),
            lower: self.quantile(alpha),
            upper: self.quantile(1.0 - alpha),
            upper_half: self.quantile(1.0 - alpha / 2.0),
        }
    }
}

fn replicate_counts<R: Rng>(rng: &mut R, regime: Regime, total: f64, probs: &[f64]) -> Vec<f64> {
    let n = match regime {
        Regime::Incomplete => poisson(rng, total),
        Regime::Complete => total.round() as u64,
    };
    let mut counts: Vec<f64> = multinomial(rng, n, probs).into_iter().map(|c| c as f64).collect();
    if regime == Regime::Incomplete {
        counts[0] = 0.0;
    }
    counts
}

fn replicate(null: &FitResult, regime: Regime, totals: [f64; 2], spec: &BootstrapSpec, b: usize, attempt: u64) -> Option<f64> {
    let mut rng = substream(spec.seed, &[b as u64, attempt]);
    let probs = rasch::cell_probabilities(&null.params, 0.0);
    let exposed = replicate_counts(&mut rng, regime, totals[0], &probs);
    let unexposed = replicate_counts(&mut rng, regime, totals[1], &probs);
    let data = FitData::from_pseudo_counts(null.params.n_lists(), regime == Regime::Complete, exposed, unexposed).ok()?;
    let (_, free) = regime.variants();
    let fit_spec = FitSpec::new(free, spec.model)
        .with_multistart(spec.multistart)
        .with_seed(rng.random());
    let theta = fit_data(&data, &fit_spec).ok()?.params.theta();
    theta.is_finite().then_some(theta)
}

/// Fits the null model, simulates `replicates` tables from it and records the
/// free-shift estimate of each. Failed replicates get one retry on a fresh
/// substream; at most 1% of replicates may be excluded.
pub fn bootstrap_null(tables: &TablePair, regime: Regime, spec: &BootstrapSpec) -> Result<NullDistribution> {
    if spec.replicates == 0 {
        return Err(Error::Invalid("bootstrap needs at least one replicate".into()));
    }
    if Regime::of(tables) != regime {
        return Err(Error::Invalid(format!("{regime} regime does not match the supplied tables")));
    }
    let (null_variant, _) = regime.variants();
    let null = fit(tables, &FitSpec::new(null_variant, spec.model).with_seed(spec.seed))?;
    let totals = match (regime, &null.rates) {
        (Regime::Incomplete, Some(r)) => [r.gamma_exposed, r.gamma_unexposed],
        _ => [tables.exposed.total() as f64, tables.unexposed.total() as f64],
    };
    let results: Vec<(Option<f64>, bool)> = (0..spec.replicates)
        .into_par_iter()
        .map(|b| match replicate(&null, regime, totals, spec, b, 0) {
            Some(t) => (Some(t), false),
            None => (replicate(&null, regime, totals, spec, b, 1), true),
        })
        .collect();
    let retried = results.iter().filter(|r| r.1).count();
    let draws: Vec<f64> = results.iter().filter_map(|r| r.0).collect();
    let excluded = spec.replicates - draws.len();
    if draws.is_empty() || (excluded > 0 && excluded * 100 >= spec.replicates) {
        return Err(Error::TooManyFailedReplicates {
            failed: excluded,
            total: spec.replicates,
        });
    }
    let mut dist = NullDistribution::from_draws(draws, regime, null)?;
    dist.seed = spec.seed;
    dist.requested = spec.replicates;
    dist.retried = retried;
    dist.excluded = excluded;
    Ok(dist)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    /// `q_{alpha/2}`
    pub lower_half: f64,
    /// `q_alpha`
    pub lower: f64,
    /// `q_{1-alpha}`
    pub upper: f64,
    /// `q_{1-alpha/2}`
    pub upper_half: f64,
}

impl Quantiles {
    fn is_ordered(&self) -> bool {
        self.lower_half <= self.lower && self.lower <= self.upper && self.upper <= self.upper_half
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decisions {
    pub reject_h0: bool,
    pub reject_plus: bool,
    pub reject_minus: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeSidedOutcome {
    pub theta_hat: f64,
    pub alpha: f64,
    pub delta: f64,
    pub quantiles: Quantiles,
    /// `theta_hat - q_alpha`
    pub delta1: f64,
    /// `q_{1-alpha} - theta_hat`
    pub delta2: f64,
    pub decisions: Decisions,
    pub regime: Option<Regime>,
}

pub fn delta_thresholds_from(theta_hat: f64, q: &Quantiles) -> (f64, f64) {
    (theta_hat - q.lower, q.upper - theta_hat)
}

pub fn delta_thresholds(theta_hat: f64, dist: &NullDistribution, alpha: f64) -> (f64, f64) {
    delta_thresholds_from(theta_hat, &dist.quantiles(alpha))
}

/// Applies the rule:
/// reject `H+` if `theta_hat - delta < q_alpha`;
/// reject `H-` if `theta_hat + delta > q_{1-alpha}`;
/// reject `H0` if `theta_hat - delta > q_{1-alpha/2}` or `theta_hat + delta < q_{alpha/2}`.
pub fn decide_with_quantiles(theta_hat: f64, q: Quantiles, alpha: f64, delta: f64) -> Result<ThreeSidedOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::Invalid(format!("delta must be finite and non-negative, got {delta}")));
    }
    if !theta_hat.is_finite() || !q.is_ordered() {
        return Err(Error::Invalid("quantiles must be finite and ordered".into()));
    }
    let decisions = Decisions {
        reject_plus: theta_hat - delta < q.lower,
        reject_minus: theta_hat + delta > q.upper,
        reject_h0: theta_hat - delta > q.upper_half || theta_hat + delta < q.lower_half,
    };
    let (delta1, delta2) = delta_thresholds_from(theta_hat, &q);
    Ok(ThreeSidedOutcome {
        theta_hat,
        alpha,
        delta,
        quantiles: q,
        delta1,
        delta2,
        decisions,
        regime: None,
    })
}

pub fn decide(theta_hat: f64, dist: &NullDistribution, alpha: f64, delta: f64) -> Result<ThreeSidedOutcome> {
    let mut out = decide_with_quantiles(theta_hat, dist.quantiles(alpha), alpha, delta)?;
    out.regime = Some(dist.regime);
    Ok(out)
}

impl ThreeSidedOutcome {
    /// How the decisions change with the margin, one line per range of `delta`.
    pub fn narrative(&self) -> Vec<String> {
        let (d1, d2) = (self.delta1.max(0.0), self.delta2.max(0.0));
        let (first, second, lo, hi) = if d1 <= d2 { ("H+", "H-", d1, d2) } else { ("H-", "H+", d2, d1) };
        let mut lines = vec![
            format!("delta <= {lo:.4}: neither H+ nor H- is rejected"),
            format!("{lo:.4} < delta <= {hi:.4}: {first} is rejected but not {second}"),
            format!("delta > {hi:.4}: both H+ and H- are rejected, so |theta| <= delta"),
        ];
        let h0_bound = (self.theta_hat - self.quantiles.upper_half).max(self.quantiles.lower_half - self.theta_hat);
        if h0_bound > 0.0 {
            lines.push(format!("delta < {h0_bound:.4}: H0 is rejected"));
        } else {
            lines.push("H0 is not rejected for any delta >= 0".into());
        }
        lines
    }

    pub fn summary(&self) -> String {
        let d = &self.decisions;
        let verdict = |r: bool| if r { "rejected" } else { "not rejected" };
        format!(
            "delta={}: H0 {}, H+ {}, H- {}",
            self.delta,
            verdict(d.reject_h0),
            verdict(d.reject_plus),
            verdict(d.reject_minus)
        )
    }
}
