//! Gauss-Hermite quadrature for Gaussian random-effects integrals.
//!
//! Integrals `log ∫ exp(l(t)) N(t; center, sigma^2) dt` are computed by
//! re-centering the rule at the mode of the integrand and scaling it by the
//! local curvature, so sharply peaked integrands (large tables, tiny sigma) are
//! resolved with a fixed node count.

use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const PRIMARY_NODES: usize = 40;
pub const CHECK_NODES: usize = 80;
/// Largest accepted difference between the 40- and 80-node results.
pub const DOUBLING_TOLERANCE: f64 = 1e-8;

/// Nodes and log-weights for `∫ e^{-x^2} f(x) dx`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
        let mut nodes = vec![0.0; n];
        let mut log_weights = vec![0.0; n];
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..(n + 1) / 2 {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            let lw = std::f64::consts::LN_2 - 2.0 * pp.abs().ln();
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            log_weights[i] = lw;
            log_weights[n - 1 - i] = lw;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, log_weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn rule(n: usize) -> &'static GaussHermite {
    static R40: OnceLock<GaussHermite> = OnceLock::new();
    static R80: OnceLock<GaussHermite> = OnceLock::new();
    match n {
        PRIMARY_NODES => R40.get_or_init(|| GaussHermite::new(PRIMARY_NODES)),
        CHECK_NODES => R80.get_or_init(|| GaussHermite::new(CHECK_NODES)),
        _ => panic!("only {PRIMARY_NODES}- and {CHECK_NODES}-node rules are cached"),
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A log-integrand `l(t)` returning `(l, l', l'')`.
pub trait LogDensity {
    fn eval(&self, t: f64) -> (f64, f64, f64);
}

impl<F: Fn(f64) -> (f64, f64, f64)> LogDensity for F {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        self(t)
    }
}

struct WithPrior<'a, L: ?Sized> {
    inner: &'a L,
    center: f64,
    sigma: f64,
}

impl<L: LogDensity + ?Sized> WithPrior<'_, L> {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let (v, d1, d2) = self.inner.eval(t);
        let z = (t - self.center) / self.sigma;
        let log_norm = -0.5 * (2.0 * std::f64::consts::PI).ln() - self.sigma.ln();
        (
            v + log_norm - 0.5 * z * z,
            d1 - z / self.sigma,
            d2 - 1.0 / (self.sigma * self.sigma),
        )
    }
}

/// Mode and curvature scale of `h`, found by safeguarded Newton ascent from
/// `start`.
fn mode<L: LogDensity + ?Sized>(h: &WithPrior<'_, L>, start: f64, prior_scale: f64) -> (f64, f64) {
    let mut t = start;
    let (mut value, mut d1, mut d2) = h.eval(t);
    for _ in 0..200 {
        let step = if d2 < 0.0 { -d1 / d2 } else { d1 * prior_scale * prior_scale };
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-12 {
            let cand = t + lambda * step;
            let (cv, c1, c2) = h.eval(cand);
            if cv.is_finite() && cv >= value - 1e-12 * value.abs() {
                t = cand;
                value = cv;
                d1 = c1;
                d2 = c2;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        let scale = if d2 < 0.0 { 1.0 / (-d2).sqrt() } else { prior_scale };
        if !accepted || (lambda * step).abs() <= 1e-12 * scale {
            break;
        }
    }
    let scale = if d2 < 0.0 { 1.0 / (-d2).sqrt() } else { prior_scale };
    (t, scale)
}

fn adaptive_sum<L: LogDensity + ?Sized>(h: &WithPrior<'_, L>, mode: f64, scale: f64, rule: &GaussHermite) -> f64 {
    let root2s = std::f64::consts::SQRT_2 * scale;
    let terms = rule
        .nodes
        .iter()
        .zip(&rule.log_weights)
        .map(|(&x, &lw)| lw + x * x + h.eval(mode + root2s * x).0);
    root2s.ln() + log_sum_exp(terms)
}

/// `log ∫ exp(l(t)) N(t; center, sigma^2) dt` with the 40-node rule, validated
/// against the 80-node rule.
pub fn log_gaussian_expectation<L: LogDensity + ?Sized>(loglik: &L, center: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let h = WithPrior { inner: loglik, center, sigma };
    let (t, s) = mode(&h, center, sigma);
    let coarse = adaptive_sum(&h, t, s, rule(PRIMARY_NODES));
    let fine = adaptive_sum(&h, t, s, rule(CHECK_NODES));
    let delta = (coarse - fine).abs();
    if !(delta < DOUBLING_TOLERANCE) {
        return Err(Error::Quadrature { delta });
    }
    Ok(coarse)
}
