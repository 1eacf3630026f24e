//! Cox proportional-hazards fitting: Newton on the Breslow-tie partial
//! likelihood, cumulative baseline hazard via the Breslow estimator.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 50;
const COEF_BOUND: f64 = 30.0;

/// A nondecreasing step function stored as jump times and increments.
/// Evaluation is right-continuous.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFunction {
    /// Strictly increasing jump locations.
    pub times: Vec<f64>,
    /// Increment at each jump.
    pub increments: Vec<f64>,
}

impl StepFunction {
    pub fn empty() -> StepFunction {
        StepFunction {
            times: vec![],
            increments: vec![],
        }
    }

    /// Value at `t` (right-continuous: jumps at `t` are included).
    pub fn value(&self, t: f64) -> f64 {
        let upper = self.times.partition_point(|&s| s <= t);
        self.increments[..upper].iter().sum()
    }

    /// Left limit at `t` (jumps at `t` excluded).
    pub fn value_left(&self, t: f64) -> f64 {
        let upper = self.times.partition_point(|&s| s < t);
        self.increments[..upper].iter().sum()
    }

    /// Cumulative values aligned with `times` (value at each jump).
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.increments
            .iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect()
    }
}

/// A fitted Cox model for one `(z, d)` cell.
#[derive(Debug, Clone, Serialize)]
pub struct CoxFit {
    /// Log hazard-ratio coefficients (no intercept).
    pub coefficients: Vec<f64>,
    /// Breslow cumulative baseline hazard, on the original covariate scale.
    pub baseline: StepFunction,
    pub converged: bool,
    pub iterations: usize,
    /// Number of events used in the fit.
    pub n_events: usize,
}

impl CoxFit {
    /// A degenerate fit representing "no events can occur": survival identically 1.
    /// Used for censoring models on cells without any censored record.
    pub fn never(p: usize) -> CoxFit {
        CoxFit {
            coefficients: vec![0.0; p],
            baseline: StepFunction::empty(),
            converged: true,
            iterations: 0,
            n_events: 0,
        }
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    /// Cumulative hazard at `t` (right-continuous).
    pub fn cumulative_hazard(&self, t: f64, x: &[f64]) -> f64 {
        self.baseline.value(t) * self.linear_predictor(x).exp()
    }

    /// Conditional survival `exp(-Lambda0(t) exp(x'gamma))`; `S(0) = 1` and the
    /// function is a right-continuous step in `t`.
    pub fn survival(&self, t: f64, x: &[f64]) -> f64 {
        (-self.cumulative_hazard(t, x)).exp()
    }

    /// Left-limit survival at `t`.
    pub fn survival_left(&self, t: f64, x: &[f64]) -> f64 {
        (-self.baseline.value_left(t) * self.linear_predictor(x).exp()).exp()
    }

    /// Baseline export rows `(time, cumulative hazard)`.
    pub fn baseline_rows(&self) -> Vec<(f64, f64)> {
        self.baseline
            .times
            .iter()
            .copied()
            .zip(self.baseline.cumulative())
            .collect()
    }
}

struct TimeGroup {
    time: f64,
    /// Indices (into the sorted order) of subjects entering the risk set here.
    members: Vec<usize>,
    /// Indices of events at this time.
    events: Vec<usize>,
}

fn group_by_time(times: &[f64], events: &[u8]) -> Vec<TimeGroup> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut groups: Vec<TimeGroup> = Vec::new();
    for &i in &order {
        if groups.last().map(|g| g.time != times[i]).unwrap_or(true) {
            groups.push(TimeGroup {
                time: times[i],
                members: vec![],
                events: vec![],
            });
        }
        let g = groups.last_mut().unwrap();
        g.members.push(i);
        if events[i] == 1 {
            g.events.push(i);
        }
    }
    groups
}

/// Fit a Cox model by maximum partial likelihood (Breslow tie handling) and
/// estimate the cumulative baseline hazard by the Breslow estimator.
///
/// `x` rows carry the model covariates only (no intercept). A model with zero
/// covariates is allowed; its baseline is exactly the Nelson–Aalen estimator.
pub fn fit_cox(times: &[f64], events: &[u8], x: &[Vec<f64>]) -> Result<CoxFit> {
    let n = times.len();
    if events.len() != n || x.len() != n {
        return Err(Error::Invalid("times, events and covariates must have equal length".into()));
    }
    let n_events = events.iter().filter(|&&e| e == 1).count();
    if n_events == 0 {
        return Err(Error::Estimation("no events in cell; cannot fit a hazard model".into()));
    }
    let p = x.first().map(|r| r.len()).unwrap_or(0);
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::Invalid("covariate rows have inconsistent dimension".into()));
    }

    // center covariates for numerical stability; fold back into the baseline
    let mut means = vec![0.0; p];
    for r in x {
        for (m, v) in means.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let xc: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(&means).map(|(v, m)| v - m).collect())
        .collect();

    let groups = group_by_time(times, events);
    let mut beta = DVector::zeros(p);
    let mut converged = p == 0;
    let mut iterations = 0;
    let mut ll = partial_loglik(&beta, &groups, &xc);

    while !converged && iterations < MAX_ITER {
        iterations += 1;
        let (grad, info) = score_and_info(&beta, &groups, &xc);
        if grad.amax() <= GRAD_TOL {
            converged = true;
            break;
        }
        let chol = match info.clone().cholesky() {
            Some(c) => c,
            None => {
                return Err(Error::NonConvergence(
                    "singular information matrix in partial-likelihood Newton step".into(),
                ))
            }
        };
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        loop {
            let candidate = &beta + scale * &step;
            let cand_ll = partial_loglik(&candidate, &groups, &xc);
            if cand_ll >= ll - 1e-12 || scale < 1e-10 {
                beta = candidate;
                ll = cand_ll;
                break;
            }
            scale *= 0.5;
        }
        if beta.amax() > COEF_BOUND {
            return Err(Error::NonConvergence(
                "monotone partial likelihood (separation in risk sets)".into(),
            ));
        }
    }
    if !converged {
        // final score check after the last step
        let (grad, _) = score_and_info(&beta, &groups, &xc);
        converged = grad.amax() <= GRAD_TOL;
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "Cox fit: score max-norm > {GRAD_TOL} after {MAX_ITER} iterations"
        )));
    }

    // Breslow baseline at beta-hat, walking times descending and accumulating
    // the risk-set sum.
    let mut s0 = 0.0;
    let mut jumps: Vec<(f64, f64)> = Vec::new();
    for g in &groups {
        for &i in &g.members {
            let eta: f64 = xc[i].iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            s0 += eta.exp();
        }
        if !g.events.is_empty() {
            jumps.push((g.time, g.events.len() as f64 / s0));
        }
    }
    jumps.reverse();
    // uncentering: Lambda0_raw(t) = Lambda0_centered(t) * exp(-mean'beta)
    let offset = (-means
        .iter()
        .zip(beta.iter())
        .map(|(m, b)| m * b)
        .sum::<f64>())
    .exp();
    let baseline = StepFunction {
        times: jumps.iter().map(|(t, _)| *t).collect(),
        increments: jumps.iter().map(|(_, d)| d * offset).collect(),
    };

    Ok(CoxFit {
        coefficients: beta.iter().copied().collect(),
        baseline,
        converged,
        iterations,
        n_events,
    })
}

fn partial_loglik(beta: &DVector<f64>, groups: &[TimeGroup], xc: &[Vec<f64>]) -> f64 {
    let mut s0 = 0.0;
    let mut ll = 0.0;
    for g in groups {
        for &i in &g.members {
            let eta: f64 = xc[i].iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            s0 += eta.exp();
        }
        for &i in &g.events {
            let eta: f64 = xc[i].iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            ll += eta;
        }
        ll -= g.events.len() as f64 * s0.ln();
    }
    ll
}

fn score_and_info(
    beta: &DVector<f64>,
    groups: &[TimeGroup],
    xc: &[Vec<f64>],
) -> (DVector<f64>, DMatrix<f64>) {
    let p = beta.len();
    let mut grad = DVector::zeros(p);
    let mut info = DMatrix::<f64>::zeros(p, p);
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::<f64>::zeros(p, p);
    for g in groups {
        for &i in &g.members {
            let eta: f64 = xc[i].iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let w = eta.exp();
            s0 += w;
            for a in 0..p {
                s1[a] += w * xc[i][a];
                for b in 0..p {
                    s2[(a, b)] += w * xc[i][a] * xc[i][b];
                }
            }
        }
        if g.events.is_empty() {
            continue;
        }
        let d = g.events.len() as f64;
        let mean = &s1 / s0;
        for &i in &g.events {
            for a in 0..p {
                grad[a] += xc[i][a] - mean[a];
            }
        }
        for a in 0..p {
            for b in 0..p {
                info[(a, b)] += d * (s2[(a, b)] / s0 - mean[a] * mean[b]);
            }
        }
    }
    (grad, info)
}

/// Fit the censoring process by flipping the event indicator and calling
/// [`fit_cox`]: censored observations become "events".
pub fn fit_censoring(times: &[f64], events: &[u8], x: &[Vec<f64>]) -> Result<CoxFit> {
    let flipped: Vec<u8> = events.iter().map(|&e| 1 - e).collect();
    fit_cox(times, &flipped, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_model_baseline_is_nelson_aalen() {
        let times = vec![2.0, 5.0, 5.0, 8.0, 11.0];
        let events = vec![1u8, 1, 0, 1, 0];
        let x: Vec<Vec<f64>> = vec![vec![]; 5];
        let fit = fit_cox(&times, &events, &x).unwrap();
        // Nelson-Aalen: 1/5 at t=2, 1/4 at t=5 (one event, risk set {5,5,8,11}), 1/2 at t=8
        let expect = [(2.0, 0.2), (5.0, 0.25), (8.0, 0.5)];
        assert_eq!(fit.baseline.times.len(), 3);
        for ((t, d), (et, ed)) in fit
            .baseline
            .times
            .iter()
            .zip(&fit.baseline.increments)
            .zip(expect.iter())
        {
            assert_eq!(t, et);
            assert!((d - ed).abs() < 1e-12);
        }
    }

    #[test]
    fn survival_matches_hand_computed_nelson_aalen() {
        // 5 uncensored times, null model
        let times = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let events = vec![1u8; 5];
        let x: Vec<Vec<f64>> = vec![vec![]; 5];
        let fit = fit_cox(&times, &events, &x).unwrap();
        // Lambda(2.5) = 1/5 + 1/4 = 0.45
        assert!((fit.survival(2.5, &[]) - (-0.45_f64).exp()).abs() < 1e-12);
        assert_eq!(fit.survival(0.0, &[]), 1.0);
        // constant beyond the last event time
        assert_eq!(fit.survival(5.0, &[]), fit.survival(100.0, &[]));
    }

    #[test]
    fn hand_computed_partial_likelihood_with_duplicate_rows() {
        // three subjects, two sharing a covariate row, distinct event times
        let times = vec![1.0, 2.0, 3.0];
        let events = vec![1u8, 1, 1];
        let x = vec![vec![1.0], vec![1.0], vec![0.0]];
        let groups = group_by_time(&times, &events);
        let beta = DVector::from_vec(vec![0.7]);
        let got = partial_loglik(&beta, &groups, &x);
        // risk sets: {1,2,3} then {2,3} then {3}
        let b = 0.7_f64;
        let want = (b - (2.0 * b.exp() + 1.0_f64).ln()) + (b - (b.exp() + 1.0).ln()) + (0.0 - 1.0_f64.ln());
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn one_covariate_mle_matches_grid_search() {
        let mut rng = crate::testutil::rng(21);
        let n = 20;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![crate::testutil::std_normal(&mut rng)]).collect();
        let times: Vec<f64> = x
            .iter()
            .map(|r| {
                let u: f64 = crate::testutil::uniform(&mut rng);
                -u.ln() / (0.3 * (0.8 * r[0]).exp())
            })
            .collect();
        let events: Vec<u8> = (0..n).map(|i| u8::from(i % 5 != 0)).collect();
        let fit = fit_cox(&times, &events, &x).unwrap();

        // independent oracle: golden-section-free plain grid refinement
        let groups = group_by_time(&times, &events);
        let eval = |b: f64| partial_loglik(&DVector::from_vec(vec![b]), &groups, &x);
        let mut lo = -5.0;
        let mut hi = 5.0;
        let mut best = 0.0;
        for _ in 0..8 {
            let mut best_val = f64::NEG_INFINITY;
            for k in 0..=400 {
                let b = lo + (hi - lo) * k as f64 / 400.0;
                let v = eval(b);
                if v > best_val {
                    best_val = v;
                    best = b;
                }
            }
            let width = (hi - lo) / 400.0;
            lo = best - 2.0 * width;
            hi = best + 2.0 * width;
        }
        assert!(
            (fit.coefficients[0] - best).abs() < 1e-4,
            "newton {} vs grid {}",
            fit.coefficients[0],
            best
        );
    }

    #[test]
    fn proportional_hazards_structure_holds() {
        let mut rng = crate::testutil::rng(33);
        let n = 60;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![crate::testutil::std_normal(&mut rng), crate::testutil::uniform(&mut rng)])
            .collect();
        let times: Vec<f64> = (0..n).map(|_| 0.1 + 10.0 * crate::testutil::uniform(&mut rng)).collect();
        let events: Vec<u8> = (0..n).map(|i| u8::from(i % 4 != 0)).collect();
        let fit = fit_cox(&times, &events, &x).unwrap();
        let xa = [0.5, 0.2];
        let xb = [-1.0, 0.9];
        let ratio = ((xa[0] - xb[0]) * fit.coefficients[0] + (xa[1] - xb[1]) * fit.coefficients[1]).exp();
        for t in [0.5, 2.0, 5.0, 9.0] {
            let ha = fit.cumulative_hazard(t, &xa);
            let hb = fit.cumulative_hazard(t, &xb);
            if hb > 0.0 {
                assert!((ha / hb - ratio).abs() < 1e-10);
            }
        }
        // survival is nonincreasing in t and within [0,1]
        let mut last = 1.0;
        for t in [0.0, 0.3, 1.0, 2.5, 6.0, 12.0] {
            let s = fit.survival(t, &xa);
            assert!((0.0..=1.0).contains(&s));
            assert!(s <= last + 1e-15);
            last = s;
        }
    }

    #[test]
    fn zero_events_is_an_error_and_flip_is_involutive() {
        let times = vec![1.0, 2.0];
        let censored = vec![0u8, 0];
        let x: Vec<Vec<f64>> = vec![vec![]; 2];
        assert!(matches!(fit_cox(&times, &censored, &x), Err(Error::Estimation(_))));
        // a fully-uncensored dataset has no "events" for the censoring model
        let all_events = vec![1u8, 1];
        assert!(fit_censoring(&times, &all_events, &x).is_err());
        // flip . flip = identity
        let flipped: Vec<u8> = all_events.iter().map(|&e| 1 - e).collect();
        let back: Vec<u8> = flipped.iter().map(|&e| 1 - e).collect();
        assert_eq!(back, all_events);
    }
}
