//! Library results checked against slow, independent re-derivations.

use approx::assert_abs_diff_eq;
use ascertain_core::estimation::{fit_data, FitData, FitSpec, Variant};
use ascertain_core::fixtures::{nvdrs, nvdrs_completed};
use ascertain_core::likelihood::{
    complete_loglik_counts, complete_loglik_gradient, joint_loglik, observed_loglik_counts, observed_loglik_gradient,
    re_complete_loglik_counts, re_observed_loglik_counts, RandomEffectsParams,
};
use ascertain_core::loglinear::{fit_loglinear, hierarchical_terms, lincoln_petersen, missing_cell};
use ascertain_core::rasch::{self, CaptureModel, PoissonRates, RaschParams};
use ascertain_core::rng::substream;
use ascertain_core::simstudy::{estimator_study, generate_population, SimConfig};
use ascertain_core::{profile_gamma, CapturePattern, Completeness, ContingencyTable};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

fn ln_fact(n: f64) -> f64 {
    ln_gamma(n + 1.0)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cell probability from the capture rule, written out list by list.
/// `pair` holds interactions for (0,1), (0,2), (1,2).
fn oracle_cell(alpha: [f64; 3], pair: [f64; 3], shift: f64, bits: [u8; 3]) -> f64 {
    let x = bits.map(f64::from);
    let eta = [
        shift + alpha[0],
        shift + alpha[1] + pair[0] * x[0],
        shift + alpha[2] + pair[1] * x[0] + pair[2] * x[1],
    ];
    (0..3)
        .map(|k| {
            let p = sigmoid(eta[k]);
            if bits[k] == 1 {
                p
            } else {
                1.0 - p
            }
        })
        .product()
}

fn random_params<R: Rng>(rng: &mut R, model: CaptureModel) -> RaschParams {
    let alpha: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut alpha2: Vec<f64> = (0..3).map(|_| rng.random_range(-0.8..0.8)).collect();
    if model == CaptureModel::Independent {
        alpha2 = vec![0.0; 3];
    }
    RaschParams::new(alpha, alpha2, rng.random_range(-0.5..0.5), model).unwrap()
}

fn random_counts<R: Rng>(rng: &mut R, lo: u32, hi: u32) -> Vec<f64> {
    (0..8).map(|_| f64::from(rng.random_range(lo..hi))).collect()
}

#[test]
fn cell_probabilities_follow_the_capture_rule() {
    let mut rng = substream(11, &[]);
    for _ in 0..50 {
        let alpha = [0; 3].map(|_| rng.random_range(-2.0..2.0));
        let pair = [0; 3].map(|_| rng.random_range(-2.0..2.0));
        let shift = rng.random_range(-1.0..1.0);
        let params = RaschParams::dynamic(alpha.to_vec(), pair.to_vec(), 0.0).unwrap();
        for p in CapturePattern::all(3) {
            let b = p.bits();
            let want = oracle_cell(alpha, pair, shift, [b[0], b[1], b[2]]);
            assert_abs_diff_eq!(rasch::cell_probability(&params, shift, p), want, epsilon = 1e-14);
        }
    }
}

#[test]
fn reference_capture_probabilities() {
    let p = RaschParams::dynamic(vec![0.5; 3], vec![0.0; 3], 0.0).unwrap();
    assert_abs_diff_eq!(rasch::miss_probability(&p, 0.0), (1.0 - sigmoid(0.5)).powi(3), epsilon = 1e-15);
    assert_abs_diff_eq!(rasch::miss_probability(&p, 0.0), 0.0538, epsilon = 1e-4);
    let t6 = RaschParams::dynamic(vec![-0.099, 0.059, -0.961], vec![0.830, 1.062, 2.224], 0.0).unwrap();
    let p3 = rasch::capture_prob(&t6, 0.0, 2, &[1, 1]);
    assert_abs_diff_eq!(p3, sigmoid(2.325), epsilon = 1e-15);
    assert_abs_diff_eq!(p3, 0.911, epsilon = 5e-4);
}

/// Every way of assigning `n` individuals to the eight cells.
fn compositions(n: u32, cells: usize) -> Vec<Vec<u32>> {
    if cells == 1 {
        return vec![vec![n]];
    }
    (0..=n)
        .flat_map(|first| {
            compositions(n - first, cells - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

#[test]
fn complete_likelihood_matches_enumeration() {
    let mut rng = substream(12, &[]);
    for n in 1..=6u32 {
        let params = random_params(&mut rng, CaptureModel::Dynamic);
        let shift = rng.random_range(-0.5..0.5);
        let probs = rasch::cell_probabilities(&params, shift);
        let mut total = 0.0;
        for c in compositions(n, 8) {
            // multinomial pmf from first principles: count orderings, multiply probabilities
            let orderings = ln_fact(f64::from(n)) - c.iter().map(|&m| ln_fact(f64::from(m))).sum::<f64>();
            let log_pmf = orderings + c.iter().zip(&probs).map(|(&m, p)| f64::from(m) * p.ln()).sum::<f64>();
            let counts: Vec<f64> = c.iter().map(|&m| f64::from(m)).collect();
            assert_abs_diff_eq!(complete_loglik_counts(&counts, &params, shift), log_pmf, epsilon = 1e-11);
            total += log_pmf.exp();
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn poissonization_matches_truncated_series() {
    let mut rng = substream(13, &[]);
    for _ in 0..20 {
        let params = random_params(&mut rng, CaptureModel::Dynamic);
        let shift = rng.random_range(-0.5..0.5);
        let mut counts = random_counts(&mut rng, 0, 30);
        counts[0] = 0.0;
        let n_obs: f64 = counts.iter().sum();
        let gamma = rng.random_range(n_obs.max(1.0)..3.0 * n_obs.max(1.0));
        let mut terms = Vec::new();
        let mut m = 0.0;
        loop {
            let n = n_obs + m;
            let mut full = counts.clone();
            full[0] = m;
            let log_poisson = n * gamma.ln() - gamma - ln_fact(n);
            terms.push(log_poisson + complete_loglik_counts(&full, &params, shift));
            // stop once the Poisson mass beyond n is negligible
            if n > gamma && log_poisson < (1e-14f64).ln() - 5.0 {
                break;
            }
            m += 1.0;
        }
        let series = log_sum_exp(&terms);
        let closed = observed_loglik_counts(&counts, gamma, &params, shift);
        assert!((series - closed).abs() <= 1e-10 * closed.abs().max(1.0), "{series} vs {closed}");
    }
}

fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h)).sum();
    h * (0.5 * f(lo) + inner + 0.5 * f(hi))
}

fn log_normal_pdf(t: f64, mu: f64, sigma: f64) -> f64 {
    let z = (t - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// `log ∫ exp(l(t)) N(t; mu, sigma²) dt` on a fixed grid over ±10σ, scaled by
/// the integrand's maximum on the grid.
fn grid_log_expectation(l: impl Fn(f64) -> f64, mu: f64, sigma: f64) -> f64 {
    let (lo, hi) = (mu - 10.0 * sigma, mu + 10.0 * sigma);
    let n = 20_000;
    let peak = (0..=n)
        .map(|i| {
            let t = lo + (hi - lo) * i as f64 / n as f64;
            l(t) + log_normal_pdf(t, mu, sigma)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let integral = trapezoid(|t| (l(t) + log_normal_pdf(t, mu, sigma) - peak).exp(), lo, hi, n);
    peak + integral.ln()
}

#[test]
fn complete_random_effects_match_grid_integration() {
    let mut rng = substream(14, &[]);
    for case in 0..8 {
        let params = random_params(&mut rng, CaptureModel::Dynamic);
        let counts = random_counts(&mut rng, 0, 12);
        let mu = rng.random_range(-0.5..0.5);
        let sigma = [0.5, 0.5, 0.5, 0.5, 0.05, 0.2, 1.0, 2.0][case];
        let re = RandomEffectsParams::new(mu, sigma).unwrap();
        let got = re_complete_loglik_counts(&counts, &params, &re, true).unwrap();
        let want = grid_log_expectation(|t| complete_loglik_counts(&counts, &params, t), mu, sigma);
        assert_abs_diff_eq!(got, want, epsilon = 1e-8);
        let unexposed = re_complete_loglik_counts(&counts, &params, &re, false).unwrap();
        let want0 = grid_log_expectation(|t| complete_loglik_counts(&counts, &params, t), 0.0, sigma);
        assert_abs_diff_eq!(unexposed, want0, epsilon = 1e-8);
    }
}

#[test]
fn observed_random_effects_match_double_loop() {
    let mut rng = substream(15, &[]);
    for _ in 0..4 {
        let params = random_params(&mut rng, CaptureModel::Dynamic);
        let mut counts = random_counts(&mut rng, 0, 8);
        counts[0] = 0.0;
        let n_obs: f64 = counts.iter().sum();
        let gamma = 1.5 * n_obs.max(1.0);
        let mu = rng.random_range(-0.5..0.5);
        let sigma = 0.5;
        let re = RandomEffectsParams::new(mu, sigma).unwrap();
        let got = re_observed_loglik_counts(&counts, gamma, &params, &re, true).unwrap();
        // outer loop over the missing count, inner grid over the shift
        let mut terms = Vec::new();
        let mut m = 0.0;
        loop {
            let n = n_obs + m;
            let mut full = counts.clone();
            full[0] = m;
            let log_poisson = n * gamma.ln() - gamma - ln_fact(n);
            let inner = grid_log_expectation(|t| complete_loglik_counts(&full, &params, t), mu, sigma);
            terms.push(log_poisson + inner);
            if n > gamma && log_poisson < (1e-14f64).ln() - 5.0 {
                break;
            }
            m += 1.0;
        }
        assert_abs_diff_eq!(got, log_sum_exp(&terms), epsilon = 1e-8);
    }
}

#[test]
fn narrow_random_effect_is_the_fixed_shift_plus_its_curvature_term() {
    let tables = nvdrs_completed();
    let params = RaschParams::dynamic(vec![0.023, 0.315, -0.667], vec![0.585, 0.874, 2.012], 0.0).unwrap();
    let counts = tables.exposed.dense_f64();
    let (mu, sigma) = (-0.038, 0.0010);
    let re = RandomEffectsParams::new(mu, sigma).unwrap();
    let mixed = re_complete_loglik_counts(&counts, &params, &re, true).unwrap();
    let l = |t: f64| complete_loglik_counts(&counts, &params, t);
    let h = 1e-3;
    let d1 = (l(mu + h) - l(mu - h)) / (2.0 * h);
    let d2 = (l(mu + h) - 2.0 * l(mu) + l(mu - h)) / (h * h);
    // exact for quadratic l: log E[exp l(mu + sigma Z)] with l expanded to second order
    let s2 = sigma * sigma;
    let expansion = l(mu) + 0.5 * s2 * d1 * d1 / (1.0 - s2 * d2) - 0.5 * (1.0 - s2 * d2).ln();
    assert_abs_diff_eq!(mixed, expansion, epsilon = 1e-9);
    assert_abs_diff_eq!(mixed, l(mu), epsilon = 2.5e-4);
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = substream(16, &[]);
    for model in [CaptureModel::Dynamic, CaptureModel::Independent] {
        for _ in 0..10 {
            let params = random_params(&mut rng, model);
            let shift = rng.random_range(-0.5..0.5);
            let mut counts = random_counts(&mut rng, 1, 50);
            let dim = rasch::gradient_len(3);
            // coordinates: alpha, alpha2, shift (and log gamma for observed tables)
            let eval = |x: &[f64], observed: bool, counts: &[f64]| {
                let p = RaschParams::new(x[..3].to_vec(), x[3..6].to_vec(), 0.0, model).unwrap();
                if observed {
                    observed_loglik_counts(counts, x[7].exp(), &p, x[6])
                } else {
                    complete_loglik_counts(counts, &p, x[6])
                }
            };
            let mut x: Vec<f64> = params.alpha().iter().chain(params.alpha2()).copied().collect();
            x.push(shift);
            let gamma = counts[1..].iter().sum::<f64>() * 1.3;
            x.push(gamma.ln());

            let full = counts.clone();
            let mut g = vec![0.0; dim];
            complete_loglik_gradient(&full, &params, shift, &mut g);
            counts[0] = 0.0;
            let mut go = vec![0.0; dim];
            let (_, dlog_gamma) = observed_loglik_gradient(&counts, gamma, &params, shift, &mut go);
            go.push(dlog_gamma);

            for (observed, analytic, data) in [(false, &g, &full), (true, &go, &counts)] {
                for i in 0..analytic.len() {
                    if model == CaptureModel::Independent && (3..6).contains(&i) {
                        continue;
                    }
                    let h = 1e-5;
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (eval(&xp, observed, data) - eval(&xm, observed, data)) / (2.0 * h);
                    let scale = analytic.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                    assert!(
                        (analytic[i] - fd).abs() <= 1e-5 * scale,
                        "coordinate {i} observed={observed}: {} vs {fd}",
                        analytic[i]
                    );
                }
            }
        }
    }
}

#[test]
fn profile_gamma_maximizes_the_observed_likelihood() {
    let mut rng = substream(17, &[]);
    for _ in 0..20 {
        let params = random_params(&mut rng, CaptureModel::Dynamic);
        let shift = rng.random_range(-0.5..0.5);
        let mut counts = random_counts(&mut rng, 0, 100);
        counts[0] = 0.0;
        let n_obs: f64 = counts.iter().sum();
        let p0 = rasch::miss_probability(&params, shift);
        let closed = profile_gamma(n_obs, p0).unwrap();
        let f = |g: f64| observed_loglik_counts(&counts, g, &params, shift);
        let (mut lo, mut hi) = (n_obs * 0.5, n_obs * 50.0);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if f(a) > f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        assert!(relative_gap(closed, 0.5 * (lo + hi)) < 1e-8 * closed.max(1.0));
    }
}

#[test]
fn two_lists_reduce_to_lincoln_petersen() {
    let mut rng = substream(18, &[]);
    for _ in 0..50 {
        let (m11, m10, m01) = (rng.random_range(1..400u64), rng.random_range(0..400u64), rng.random_range(0..400u64));
        let table = ContingencyTable::from_counts(
            "T",
            2,
            Completeness::MissingAllZero,
            [("11", m11), ("10", m10), ("01", m01)].map(|(p, n)| (p.parse().unwrap(), n)),
        )
        .unwrap();
        let model = fit_loglinear(&table, &hierarchical_terms(2, &[])).unwrap();
        let estimate = table.total() as f64 + missing_cell(&model).unwrap();
        let lp = lincoln_petersen(m11 as f64, m10 as f64, m01 as f64).unwrap();
        assert!((estimate - lp).abs() <= 1e-6 * lp.max(1.0), "{estimate} vs {lp}");
    }
}

#[test]
fn missing_cell_equals_the_intercept_prediction() {
    let mut rng = substream(19, &[]);
    let pair_sets: [&[(usize, usize)]; 4] = [&[], &[(0, 1)], &[(0, 2), (1, 2)], &[(0, 1), (0, 2), (1, 2)]];
    for _ in 0..20 {
        let cells: Vec<(CapturePattern, u64)> =
            CapturePattern::all(3).skip(1).map(|p| (p, rng.random_range(5..200u64))).collect();
        let table = ContingencyTable::from_counts("T", 3, Completeness::MissingAllZero, cells).unwrap();
        for pairs in pair_sets {
            let model = fit_loglinear(&table, &hierarchical_terms(3, pairs)).unwrap();
            let ratio = missing_cell(&model).unwrap();
            let intercept = model.coefficients[0].exp();
            assert!(relative_gap(ratio, intercept) < 1e-9, "{ratio} vs {intercept}");
        }
    }
}

#[test]
fn refit_on_expected_counts_recovers_parameters() {
    let truth = RaschParams::dynamic(vec![0.4, -0.3, 0.7], vec![-0.2, 0.5, 0.3], 0.35).unwrap();
    let (ge, gu) = (800.0, 650.0);
    for (variant, complete) in [(Variant::IncompleteFreeTheta, false), (Variant::CompleteFreeTheta, true)] {
        let expected = |gamma: f64, shift: f64| {
            let mut v: Vec<f64> = rasch::cell_probabilities(&truth, shift).iter().map(|p| gamma * p).collect();
            if !complete {
                v[0] = 0.0;
            }
            v
        };
        let data = FitData::from_pseudo_counts(3, complete, expected(ge, truth.theta()), expected(gu, 0.0)).unwrap();
        let fit = fit_data(&data, &FitSpec::new(variant, CaptureModel::Dynamic)).unwrap();
        for (a, b) in fit.params.alpha().iter().zip(truth.alpha()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-4);
        }
        for (a, b) in fit.params.alpha2().iter().zip(truth.alpha2()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-4);
        }
        assert_abs_diff_eq!(fit.params.theta(), truth.theta(), epsilon = 1e-4);
        if let Some(r) = fit.rates {
            assert!(relative_gap(r.gamma_exposed, ge) < 1e-4);
            assert!(relative_gap(r.gamma_unexposed, gu) < 1e-4);
        }
    }
}

#[test]
fn nested_models_never_fit_better() {
    let run = |tables: &ascertain_core::TablePair, variant, model| {
        ascertain_core::fit(tables, &FitSpec::new(variant, model)).unwrap().loglik
    };
    for (tables, free, null) in [
        (nvdrs(), Variant::IncompleteFreeTheta, Variant::IncompleteNullTheta),
        (nvdrs_completed(), Variant::CompleteFreeTheta, Variant::CompleteNullTheta),
    ] {
        let dynamic_free = run(&tables, free, CaptureModel::Dynamic);
        assert!(run(&tables, null, CaptureModel::Dynamic) <= dynamic_free + 1e-9);
        assert!(run(&tables, free, CaptureModel::Independent) <= dynamic_free + 1e-9);
        assert!(run(&tables, null, CaptureModel::Independent) <= run(&tables, free, CaptureModel::Independent) + 1e-9);
    }
}

#[test]
fn fitted_estimates_beat_random_perturbations() {
    let tables = nvdrs();
    let fit = ascertain_core::fit(&tables, &FitSpec::new(Variant::IncompleteFreeTheta, CaptureModel::Dynamic)).unwrap();
    let rates = fit.rates.unwrap();
    let mut x: Vec<f64> = fit.params.alpha().iter().chain(fit.params.alpha2()).copied().collect();
    x.extend([fit.params.theta(), rates.gamma_exposed.ln(), rates.gamma_unexposed.ln()]);
    let loglik = |x: &[f64]| {
        let p = RaschParams::dynamic(x[..3].to_vec(), x[3..6].to_vec(), x[6]).unwrap();
        joint_loglik(&tables, &PoissonRates::new(x[7].exp(), x[8].exp()).unwrap(), &p).unwrap()
    };
    let best = loglik(&x);
    assert_abs_diff_eq!(best, fit.loglik, epsilon = 1e-8);
    let mut rng = substream(20, &[]);
    for _ in 0..100 {
        let dir: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let moved: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + 0.05 * d / norm).collect();
        assert!(loglik(&moved) < best);
    }
}

#[test]
fn generated_populations_follow_cell_probabilities() {
    let params = RaschParams::dynamic(vec![0.5; 3], vec![-0.2; 3], 0.0).unwrap();
    let probs = rasch::cell_probabilities(&params, 0.0);
    let reps = 400;
    let mut sums = [0.0f64; 8];
    for seed in 0..reps {
        let t = generate_population(1000.0, &params, 0.0, seed).unwrap();
        for (s, c) in sums.iter_mut().zip(t.dense()) {
            *s += *c as f64;
        }
    }
    let total: f64 = sums.iter().sum();
    assert_abs_diff_eq!(sums[0] / reps as f64, 1000.0 * rasch::miss_probability(&params, 0.0), epsilon = 1.0);
    let chi2: f64 = sums.iter().zip(&probs).map(|(o, p)| (o - total * p).powi(2) / (total * p)).sum();
    let p_value = 1.0 - ChiSquared::new(7.0).unwrap().cdf(chi2);
    assert!(p_value > 0.001, "chi2 {chi2}, p {p_value}");
}

#[test]
fn estimator_is_centred_without_a_shift() {
    let cfg = SimConfig::from_toml(
        "gamma_exposed = 500.0\ngamma_unexposed = 1000.0\nalpha = 0.5\nalpha2 = -0.2\nlists = [3]\n\
         thetas = [0.0]\nreplicates = 50\nseed = 7\n",
    )
    .unwrap();
    let rows = estimator_study(&cfg).unwrap();
    let theta = rows.iter().find(|r| r.parameter == "theta").unwrap();
    assert!(theta.estimate.mean.abs() < 0.1, "{}", theta.estimate.mean);
}
