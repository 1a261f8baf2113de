//! Cell probabilities for the independent and dynamic Rasch capture models.
//!
//! List `k` captures an individual with probability
//! `logistic(shift + alpha[k] + sum_{j<k} alpha2[j,k] * x_j)`, where `x_j` are the
//! individual's memberships on earlier lists. The independent model drops the
//! history term. `shift` is 0 for the unexposed group and theta for the exposed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tables::CapturePattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaptureModel {
    Independent,
    Dynamic,
}

impl std::str::FromStr for CaptureModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(CaptureModel::Independent),
            "dynamic" => Ok(CaptureModel::Dynamic),
            other => Err(Error::Invalid(format!(
                "unknown model {other:?} (expected independent or dynamic)"
            ))),
        }
    }
}

impl std::fmt::Display for CaptureModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CaptureModel::Independent => "independent",
            CaptureModel::Dynamic => "dynamic",
        })
    }
}

/// Number of two-list interactions for `n_lists` lists.
pub fn n_pairs(n_lists: usize) -> usize {
    n_lists * n_lists.saturating_sub(1) / 2
}

/// Position of the `(j, k)` interaction, `j < k`, in the lexicographic pair order
/// `(0,1), (0,2), ..., (1,2), ...`.
pub fn pair_index(j: usize, k: usize, n_lists: usize) -> usize {
    debug_assert!(j < k && k < n_lists);
    j * (2 * n_lists - j - 1) / 2 + (k - j - 1)
}

/// All `(j, k)` pairs in storage order.
pub fn pairs(n_lists: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n_lists).flat_map(move |j| (j + 1..n_lists).map(move |k| (j, k)))
}

/// List strengths, two-list interactions and the differential shift, all in
/// log-odds units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaschParams {
    alpha: Vec<f64>,
    alpha2: Vec<f64>,
    theta: f64,
    model: CaptureModel,
}

impl RaschParams {
    pub fn independent(alpha: Vec<f64>, theta: f64) -> Result<Self> {
        let n = alpha.len();
        Self::new(alpha, vec![0.0; n_pairs(n)], theta, CaptureModel::Independent)
    }

    pub fn dynamic(alpha: Vec<f64>, alpha2: Vec<f64>, theta: f64) -> Result<Self> {
        Self::new(alpha, alpha2, theta, CaptureModel::Dynamic)
    }

    pub fn new(alpha: Vec<f64>, alpha2: Vec<f64>, theta: f64, model: CaptureModel) -> Result<Self> {
        let n = alpha.len();
        if n == 0 || n > crate::tables::MAX_LISTS {
            return Err(Error::Invalid(format!("alpha must have 1..={} entries", crate::tables::MAX_LISTS)));
        }
        if alpha2.len() != n_pairs(n) {
            return Err(Error::Invalid(format!(
                "expected {} two-list interactions for {n} lists, got {}; only two-list interactions are supported",
                n_pairs(n),
                alpha2.len()
            )));
        }
        if alpha.iter().chain(&alpha2).chain(std::iter::once(&theta)).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("Rasch parameters must be finite".into()));
        }
        if model == CaptureModel::Independent && alpha2.iter().any(|&v| v != 0.0) {
            return Err(Error::Invalid(
                "the independent model has no interactions; alpha2 must be zero".into(),
            ));
        }
        Ok(Self { alpha, alpha2, theta, model })
    }

    /// Like [`RaschParams::new`] but admits `-inf` list strengths, used for lists
    /// that never captured anyone.
    pub(crate) fn with_unobserved_lists(
        alpha: Vec<f64>,
        alpha2: Vec<f64>,
        theta: f64,
        model: CaptureModel,
    ) -> Self {
        debug_assert_eq!(alpha2.len(), n_pairs(alpha.len()));
        Self { alpha, alpha2, theta, model }
    }

    pub fn n_lists(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha2(&self) -> &[f64] {
        &self.alpha2
    }

    pub fn interaction(&self, j: usize, k: usize) -> f64 {
        let (j, k) = if j < k { (j, k) } else { (k, j) };
        self.alpha2[pair_index(j, k, self.n_lists())]
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn model(&self) -> CaptureModel {
        self.model
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        Self { theta, ..self.clone() }
    }

    /// Log-odds of capture on list `k` given the memberships on earlier lists.
    pub fn linear_predictor(&self, shift: f64, k: usize, history: &[u8]) -> f64 {
        let mut eta = shift + self.alpha[k];
        if self.model == CaptureModel::Dynamic {
            for (j, &x) in history.iter().enumerate().take(k) {
                if x == 1 {
                    eta += self.alpha2[pair_index(j, k, self.n_lists())];
                }
            }
        }
        eta
    }

    fn eta_for_pattern(&self, shift: f64, pattern: CapturePattern, k: usize) -> f64 {
        let mut eta = shift + self.alpha[k];
        if self.model == CaptureModel::Dynamic {
            let n = self.n_lists();
            for j in 0..k {
                if pattern.captured(j) {
                    eta += self.alpha2[pair_index(j, k, n)];
                }
            }
        }
        eta
    }
}

/// Expected true case counts per group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonRates {
    pub gamma_exposed: f64,
    pub gamma_unexposed: f64,
}

impl PoissonRates {
    pub fn new(gamma_exposed: f64, gamma_unexposed: f64) -> Result<Self> {
        if !(gamma_exposed > 0.0 && gamma_unexposed > 0.0)
            || !gamma_exposed.is_finite()
            || !gamma_unexposed.is_finite()
        {
            return Err(Error::Domain(format!(
                "Poisson rates must be positive and finite, got ({gamma_exposed}, {gamma_unexposed})"
            )));
        }
        Ok(Self { gamma_exposed, gamma_unexposed })
    }

    pub fn ratio(&self) -> f64 {
        self.gamma_exposed / self.gamma_unexposed
    }
}

/// Logistic function, branch-stable for large `|x|`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Probability that list `k` (0-based) captures an individual with the given
/// memberships on lists `0..k`.
pub fn capture_prob(params: &RaschParams, shift: f64, k: usize, history: &[u8]) -> f64 {
    assert!(k < params.n_lists(), "list index {k} out of range");
    assert_eq!(history.len(), k, "history must cover lists before {k}");
    logistic(params.linear_predictor(shift, k, history))
}

/// Log-probability of a pattern under sequential capture.
pub fn log_cell_probability(params: &RaschParams, shift: f64, pattern: CapturePattern) -> f64 {
    (0..params.n_lists())
        .map(|k| {
            let eta = params.eta_for_pattern(shift, pattern, k);
            if pattern.captured(k) {
                eta - softplus(eta)
            } else {
                -softplus(eta)
            }
        })
        .sum()
}

pub fn cell_probability(params: &RaschParams, shift: f64, pattern: CapturePattern) -> f64 {
    assert_eq!(pattern.n_lists(), params.n_lists(), "pattern length must match the number of lists");
    log_cell_probability(params, shift, pattern).exp()
}

/// All `2^J` cell probabilities in pattern-index order.
pub fn cell_probabilities(params: &RaschParams, shift: f64) -> Vec<f64> {
    CapturePattern::all(params.n_lists())
        .map(|p| log_cell_probability(params, shift, p).exp())
        .collect()
}

/// Probability of being missed by every list, `1 / prod_j (1 + e^{shift + alpha_j})`.
/// Interactions never enter because the history is all zeros.
pub fn miss_probability(params: &RaschParams, shift: f64) -> f64 {
    log_miss_probability(params, shift).exp()
}

pub fn log_miss_probability(params: &RaschParams, shift: f64) -> f64 {
    -params.alpha.iter().map(|&a| softplus(shift + a)).sum::<f64>()
}

/// Expected count in the all-zero cell for a group of size `n`.
pub fn expected_missing(n: f64, params: &RaschParams, shift: f64) -> f64 {
    n * miss_probability(params, shift)
}

/// Number of coordinates in the gradient layout `[alpha.., alpha2.., shift]`.
pub fn gradient_len(n_lists: usize) -> usize {
    n_lists + n_pairs(n_lists) + 1
}

/// Log cell probability and its gradient, accumulated as `scale * d log p` into
/// `grad` laid out as `[alpha.., alpha2.., shift]`.
pub fn accumulate_log_cell_gradient(
    params: &RaschParams,
    shift: f64,
    pattern: CapturePattern,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let n = params.n_lists();
    debug_assert_eq!(grad.len(), gradient_len(n));
    let shift_slot = n + n_pairs(n);
    let mut logp = 0.0;
    for k in 0..n {
        let eta = params.eta_for_pattern(shift, pattern, k);
        let x = pattern.captured(k);
        logp += if x { eta - softplus(eta) } else { -softplus(eta) };
        let resid = f64::from(u8::from(x)) - logistic(eta);
        if resid == 0.0 {
            continue;
        }
        let r = scale * resid;
        grad[k] += r;
        grad[shift_slot] += r;
        if params.model == CaptureModel::Dynamic {
            for j in 0..k {
                if pattern.captured(j) {
                    grad[n + pair_index(j, k, n)] += r;
                }
            }
        }
    }
    logp
}

/// Log cell probability with its first and second derivatives in the shift.
pub fn log_cell_shift_derivatives(params: &RaschParams, shift: f64, pattern: CapturePattern) -> (f64, f64, f64) {
    let mut logp = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for k in 0..params.n_lists() {
        let eta = params.eta_for_pattern(shift, pattern, k);
        let p = logistic(eta);
        if pattern.captured(k) {
            logp += eta - softplus(eta);
            d1 += 1.0 - p;
        } else {
            logp -= softplus(eta);
            d1 -= p;
        }
        d2 -= p * (1.0 - p);
    }
    (logp, d1, d2)
}
