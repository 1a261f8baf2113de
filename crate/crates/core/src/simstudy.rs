//! Simulated populations and the three studies built on them: bias of the
//! observed group ratio, recovery of the fitted parameters, and naive versus
//! corrected odds ratios.
//!
//! Cell counts are drawn as independent Poissons with means `gamma * p_c`,
//! which has the same law as drawing `N ~ Poisson(gamma)` individuals and
//! classifying each one.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_data, odds_ratio, FitData, FitSpec, Variant};
use crate::rasch::{self, n_pairs, pairs, CaptureModel, RaschParams};
use crate::rng::{poisson, substream};
use crate::tables::{Completeness, ContingencyTable, MAX_LISTS};
use crate::threesided::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftTarget {
    /// `theta` shifts the exposed group; the unexposed group has shift 0.
    #[default]
    Exposed,
    /// `theta` shifts the unexposed group instead.
    Unexposed,
}

impl fmt::Display for ShiftTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShiftTarget::Exposed => "exposed",
            ShiftTarget::Unexposed => "unexposed",
        })
    }
}

impl FromStr for ShiftTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exposed" => Ok(ShiftTarget::Exposed),
            "unexposed" => Ok(ShiftTarget::Unexposed),
            _ => Err(Error::Invalid(format!("unknown shift target {s:?} (expected exposed or unexposed)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Bias,
    Estimators,
    Or,
}

impl FromStr for Study {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bias" => Ok(Study::Bias),
            "estimators" => Ok(Study::Estimators),
            "or" => Ok(Study::Or),
            _ => Err(Error::Invalid(format!("unknown study {s:?} (expected bias, estimators or or)"))),
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Study::Bias => "bias",
            Study::Estimators => "estimators",
            Study::Or => "or",
        })
    }
}

fn default_multistart() -> usize {
    1
}

/// Study configuration. Every list gets strength `alpha` and every pair of
/// lists interaction `alpha2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub study: Option<Study>,
    pub gamma_exposed: f64,
    pub gamma_unexposed: f64,
    pub alpha: f64,
    #[serde(default)]
    pub alpha2: f64,
    #[serde(default = "default_model")]
    pub model: CaptureModel,
    pub lists: Vec<usize>,
    pub thetas: Vec<f64>,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub theta_applies_to: ShiftTarget,
    /// Starts per fit in the estimator and odds-ratio studies.
    #[serde(default = "default_multistart")]
    pub multistart: usize,
    /// Population totals for the odds-ratio study.
    #[serde(default)]
    pub t_exposed: Option<f64>,
    #[serde(default)]
    pub t_unexposed: Option<f64>,
}

fn default_model() -> CaptureModel {
    CaptureModel::Dynamic
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Invalid(format!("invalid study config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Invalid("replicates must be at least 1".into()));
        }
        if !(self.gamma_exposed > 0.0 && self.gamma_unexposed > 0.0) || !self.gamma_exposed.is_finite() || !self.gamma_unexposed.is_finite() {
            return Err(Error::Invalid("Poisson rates must be positive and finite".into()));
        }
        if self.lists.is_empty() || self.lists.iter().any(|&j| j == 0 || j > MAX_LISTS) {
            return Err(Error::Invalid(format!("list counts must be between 1 and {MAX_LISTS}")));
        }
        if self.thetas.is_empty() || self.thetas.iter().any(|t| !t.is_finite()) {
            return Err(Error::Invalid("theta grid must be non-empty and finite".into()));
        }
        if !self.alpha.is_finite() || !self.alpha2.is_finite() {
            return Err(Error::Invalid("alpha and alpha2 must be finite".into()));
        }
        if self.model == CaptureModel::Independent && self.alpha2 != 0.0 {
            return Err(Error::Invalid("the independent model has no interactions; set alpha2 = 0".into()));
        }
        if self.multistart == 0 {
            return Err(Error::Invalid("multistart must be at least 1".into()));
        }
        Ok(())
    }

    pub fn params(&self, n_lists: usize) -> Result<RaschParams> {
        let alpha2 = match self.model {
            CaptureModel::Dynamic => self.alpha2,
            CaptureModel::Independent => 0.0,
        };
        RaschParams::new(vec![self.alpha; n_lists], vec![alpha2; n_pairs(n_lists)], 0.0, self.model)
    }

    /// Shifts `(exposed, unexposed)` for a grid value.
    pub fn shifts(&self, theta: f64) -> (f64, f64) {
        match self.theta_applies_to {
            ShiftTarget::Exposed => (theta, 0.0),
            ShiftTarget::Unexposed => (0.0, theta),
        }
    }

    fn fit_spec(&self, seed: u64) -> FitSpec {
        FitSpec::new(Variant::IncompleteFreeTheta, self.model)
            .with_multistart(self.multistart)
            .with_seed(seed)
    }

    fn require_fittable(&self) -> Result<()> {
        if let Some(&j) = self.lists.iter().find(|&&j| j < 2) {
            return Err(Error::Invalid(format!(
                "the free-shift model cannot be fitted with {j} list; use at least 2"
            )));
        }
        Ok(())
    }
}

fn draw_cells<R: Rng>(rng: &mut R, gamma: f64, probs: &[f64]) -> Vec<u64> {
    probs.iter().map(|&p| poisson(rng, gamma * p)).collect()
}

/// One complete population table for a group.
pub fn generate_population(gamma: f64, params: &RaschParams, shift: f64, seed: u64) -> Result<ContingencyTable> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    let mut rng = substream(seed, &[]);
    let probs = rasch::cell_probabilities(params, shift);
    let counts = draw_cells(&mut rng, gamma, &probs);
    ContingencyTable::from_dense("population", params.n_lists(), Completeness::Complete, counts)
}

struct Population {
    exposed: Vec<u64>,
    unexposed: Vec<u64>,
}

impl Population {
    fn observed(counts: &[u64]) -> u64 {
        counts[1..].iter().sum()
    }

    fn fit_data(&self, n_lists: usize) -> Result<FitData> {
        let drop_zero = |c: &[u64]| {
            let mut v: Vec<f64> = c.iter().map(|&x| x as f64).collect();
            v[0] = 0.0;
            v
        };
        FitData::from_pseudo_counts(n_lists, false, drop_zero(&self.exposed), drop_zero(&self.unexposed))
    }
}

fn simulate(cfg: &SimConfig, params: &RaschParams, theta: f64, keys: [u64; 3]) -> (Population, u64) {
    let mut rng = substream(cfg.seed, &keys);
    let (se, su) = cfg.shifts(theta);
    let exposed = draw_cells(&mut rng, cfg.gamma_exposed, &rasch::cell_probabilities(params, se));
    let unexposed = draw_cells(&mut rng, cfg.gamma_unexposed, &rasch::cell_probabilities(params, su));
    (Population { exposed, unexposed }, rng.random())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Summary {
    /// Mean with 2.5% and 97.5% empirical percentiles; NaN when empty.
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary { mean: f64::NAN, lower: f64::NAN, upper: f64::NAN };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Summary {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            lower: quantile(&sorted, 0.025),
            upper: quantile(&sorted, 0.975),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub lists: usize,
    pub theta: f64,
    pub ratio: Summary,
    pub used: usize,
    /// Replicates with no observed unexposed case.
    pub excluded: usize,
}

fn grid(cfg: &SimConfig) -> Vec<(usize, usize, f64)> {
    cfg.lists
        .iter()
        .flat_map(|&j| cfg.thetas.iter().enumerate().map(move |(ti, &t)| (j, ti, t)))
        .collect()
}

/// Observed exposed over observed unexposed counts, per grid point.
pub fn bias_study(cfg: &SimConfig) -> Result<Vec<BiasRow>> {
    cfg.validate()?;
    grid(cfg)
        .into_iter()
        .map(|(j, ti, theta)| {
            let params = cfg.params(j)?;
            let ratios: Vec<Option<f64>> = (0..cfg.replicates)
                .into_par_iter()
                .map(|b| {
                    let (pop, _) = simulate(cfg, &params, theta, [j as u64, ti as u64, b as u64]);
                    let (e, u) = (Population::observed(&pop.exposed), Population::observed(&pop.unexposed));
                    (u > 0).then(|| e as f64 / u as f64)
                })
                .collect();
            let used: Vec<f64> = ratios.iter().flatten().copied().collect();
            Ok(BiasRow {
                lists: j,
                theta,
                ratio: Summary::of(&used),
                used: used.len(),
                excluded: cfg.replicates - used.len(),
            })
        })
        .collect()
}

/// Expected observed ratio `gamma_E (1 - p0_E) / (gamma_U (1 - p0_U))`.
pub fn expected_observed_ratio(cfg: &SimConfig, n_lists: usize, theta: f64) -> Result<f64> {
    let params = cfg.params(n_lists)?;
    let (se, su) = cfg.shifts(theta);
    Ok(cfg.gamma_exposed * (1.0 - rasch::miss_probability(&params, se))
        / (cfg.gamma_unexposed * (1.0 - rasch::miss_probability(&params, su))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub lists: usize,
    pub theta: f64,
    pub parameter: String,
    /// Value in the fitted parameterization (exposed-group shift).
    pub truth: f64,
    pub estimate: Summary,
    pub used: usize,
    pub excluded: usize,
}

fn parameter_names(n_lists: usize, model: CaptureModel) -> Vec<String> {
    let mut names: Vec<String> = (1..=n_lists).map(|k| format!("alpha_{k}")).collect();
    if model == CaptureModel::Dynamic {
        names.extend(pairs(n_lists).map(|(a, b)| format!("alpha_{}{}", a + 1, b + 1)));
    }
    names.extend(["gamma_exposed", "gamma_unexposed", "theta"].map(String::from));
    names
}

fn truth(cfg: &SimConfig, n_lists: usize, theta: f64) -> Result<Vec<f64>> {
    let params = cfg.params(n_lists)?;
    // a shift on the unexposed group is the same model as the opposite shift
    // on the exposed group with every list strength moved by theta
    let (alpha_shift, model_theta) = match cfg.theta_applies_to {
        ShiftTarget::Exposed => (0.0, theta),
        ShiftTarget::Unexposed => (theta, -theta),
    };
    let mut v: Vec<f64> = params.alpha().iter().map(|a| a + alpha_shift).collect();
    if cfg.model == CaptureModel::Dynamic {
        v.extend_from_slice(params.alpha2());
    }
    v.extend([cfg.gamma_exposed, cfg.gamma_unexposed, model_theta]);
    Ok(v)
}

/// Fits the free-shift model to each simulated observed table pair.
pub fn estimator_study(cfg: &SimConfig) -> Result<Vec<EstimatorRow>> {
    cfg.validate()?;
    cfg.require_fittable()?;
    let mut rows = Vec::new();
    for (j, ti, theta) in grid(cfg) {
        let params = cfg.params(j)?;
        let estimates: Vec<Option<Vec<f64>>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|b| {
                let (pop, fit_seed) = simulate(cfg, &params, theta, [j as u64, ti as u64, b as u64]);
                let data = pop.fit_data(j).ok()?;
                let fit = fit_data(&data, &cfg.fit_spec(fit_seed)).ok()?;
                let rates = fit.rates?;
                let mut v = fit.params.alpha().to_vec();
                if cfg.model == CaptureModel::Dynamic {
                    v.extend_from_slice(fit.params.alpha2());
                }
                v.extend([rates.gamma_exposed, rates.gamma_unexposed, fit.params.theta()]);
                v.iter().all(|x| x.is_finite()).then_some(v)
            })
            .collect();
        let used: Vec<&Vec<f64>> = estimates.iter().flatten().collect();
        let truth = truth(cfg, j, theta)?;
        for (i, name) in parameter_names(j, cfg.model).into_iter().enumerate() {
            let values: Vec<f64> = used.iter().map(|v| v[i]).collect();
            rows.push(EstimatorRow {
                lists: j,
                theta,
                parameter: name,
                truth: truth[i],
                estimate: Summary::of(&values),
                used: used.len(),
                excluded: cfg.replicates - used.len(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrRow {
    pub lists: usize,
    pub theta: f64,
    pub true_or: f64,
    pub naive: Summary,
    pub corrected: Summary,
    /// Mean of `|OR - true OR|` over replicates.
    pub naive_abs_bias: f64,
    pub corrected_abs_bias: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Odds ratios from observed counts and from fitted rates, against the truth
/// implied by the generating rates. Needs `t_exposed` and `t_unexposed`.
pub fn or_bias(cfg: &SimConfig) -> Result<Vec<OrRow>> {
    cfg.validate()?;
    cfg.require_fittable()?;
    let (Some(t_e), Some(t_u)) = (cfg.t_exposed, cfg.t_unexposed) else {
        return Err(Error::Invalid("the odds-ratio study needs t_exposed and t_unexposed".into()));
    };
    if t_e <= cfg.gamma_exposed || t_u <= cfg.gamma_unexposed {
        return Err(Error::Invalid("population totals must exceed the case rates".into()));
    }
    let true_or = odds_ratio(cfg.gamma_exposed, cfg.gamma_unexposed, t_e, t_u, false)?;
    let mut rows = Vec::new();
    for (j, ti, theta) in grid(cfg) {
        let params = cfg.params(j)?;
        let pairs: Vec<Option<(f64, f64)>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|b| {
                let (pop, fit_seed) = simulate(cfg, &params, theta, [j as u64, ti as u64, b as u64]);
                let (e, u) = (Population::observed(&pop.exposed) as f64, Population::observed(&pop.unexposed) as f64);
                let naive = odds_ratio(e, u, t_e, t_u, false).ok()?;
                let fit = fit_data(&pop.fit_data(j).ok()?, &cfg.fit_spec(fit_seed)).ok()?;
                let rates = fit.rates?;
                let corrected = odds_ratio(rates.gamma_exposed, rates.gamma_unexposed, t_e, t_u, false).ok()?;
                Some((naive, corrected))
            })
            .collect();
        let used: Vec<(f64, f64)> = pairs.iter().flatten().copied().collect();
        let naive: Vec<f64> = used.iter().map(|p| p.0).collect();
        let corrected: Vec<f64> = used.iter().map(|p| p.1).collect();
        let mean_abs = |v: &[f64]| v.iter().map(|x| (x - true_or).abs()).sum::<f64>() / v.len().max(1) as f64;
        rows.push(OrRow {
            lists: j,
            theta,
            true_or,
            naive_abs_bias: mean_abs(&naive),
            corrected_abs_bias: mean_abs(&corrected),
            naive: Summary::of(&naive),
            corrected: Summary::of(&corrected),
            used: used.len(),
            excluded: cfg.replicates - used.len(),
        });
    }
    Ok(rows)
}

pub fn bias_csv(rows: &[BiasRow]) -> String {
    let mut out = String::from("lists,theta,mean,lower,upper,used,excluded\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.lists, r.theta, r.ratio.mean, r.ratio.lower, r.ratio.upper, r.used, r.excluded
        ));
    }
    out
}

pub fn estimator_csv(rows: &[EstimatorRow]) -> String {
    let mut out = String::from("lists,theta,parameter,truth,mean,lower,upper,used,excluded\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.lists, r.theta, r.parameter, r.truth, r.estimate.mean, r.estimate.lower, r.estimate.upper, r.used, r.excluded
        ));
    }
    out
}

pub fn or_csv(rows: &[OrRow]) -> String {
    let mut out = String::from(
        "lists,theta,true_or,naive_mean,naive_lower,naive_upper,corrected_mean,corrected_lower,corrected_upper,naive_abs_bias,corrected_abs_bias,used,excluded\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.lists,
            r.theta,
            r.true_or,
            r.naive.mean,
            r.naive.lower,
            r.naive.upper,
            r.corrected.mean,
            r.corrected.lower,
            r.corrected.upper,
            r.naive_abs_bias,
            r.corrected_abs_bias,
            r.used,
            r.excluded
        ));
    }
    out
}
