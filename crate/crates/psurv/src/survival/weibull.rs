//! Weibull proportional-hazards model: hazard `t^(phi-1) exp(psi + x'gamma)`,
//! cumulative hazard `t^phi exp(psi + x'gamma) / phi`. All engines share this
//! parameterization.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;

/// Weibull proportional-hazards parameters for one `(z, u)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullPh {
    /// Shape `phi > 0`.
    pub shape: f64,
    /// Log-scale intercept `psi`.
    pub log_scale: f64,
    /// Covariate slopes `gamma`.
    pub slopes: Vec<f64>,
}

impl WeibullPh {
    pub fn new(shape: f64, log_scale: f64, slopes: Vec<f64>) -> Result<WeibullPh> {
        if !(shape > 0.0) || !shape.is_finite() {
            return Err(Error::Invalid("Weibull shape must be positive".into()));
        }
        Ok(WeibullPh {
            shape,
            log_scale,
            slopes,
        })
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.log_scale + x.iter().zip(&self.slopes).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn hazard(&self, t: f64, x: &[f64]) -> f64 {
        t.powf(self.shape - 1.0) * self.linear_predictor(x).exp()
    }

    pub fn cumulative_hazard(&self, t: f64, x: &[f64]) -> f64 {
        t.powf(self.shape) * self.linear_predictor(x).exp() / self.shape
    }

    /// `exp(-t^phi exp(psi + x'gamma) / phi)`; lies in (0, 1] and decreases in `t`.
    pub fn survival(&self, t: f64, x: &[f64]) -> f64 {
        (-self.cumulative_hazard(t, x)).exp()
    }

    /// Inverse-CDF sample: `T = [-phi ln(V) exp(-(psi + x'gamma))]^(1/phi)`.
    pub fn sample<R: Rng>(&self, rng: &mut R, x: &[f64]) -> f64 {
        let v: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        (-self.shape * v.ln() * (-self.linear_predictor(x)).exp()).powf(1.0 / self.shape)
    }
}

/// Exact right-censored log-likelihood and its analytic gradient in
/// `(phi, psi, gamma)`:
/// `sum_i w_i [ delta_i log h(t_i) - H(t_i) ]`.
pub fn weibull_loglik_and_grad(
    params: &WeibullPh,
    times: &[f64],
    events: &[u8],
    x: &[Vec<f64>],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = times.len();
    if events.len() != n || x.len() != n || weights.len() != n {
        return Err(Error::Invalid("times, events, covariates and weights must align".into()));
    }
    let p = params.slopes.len();
    let phi = params.shape;
    let mut ll = 0.0;
    let mut grad = vec![0.0; p + 2]; // (phi, psi, gamma...)
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let t = times[i];
        if t <= 0.0 {
            return Err(Error::Invalid(format!(
                "record {i} has time {t}; zero or negative times are rejected upstream"
            )));
        }
        let delta = events[i] as f64;
        let eta = params.linear_predictor(&x[i]);
        let lt = t.ln();
        let big_h = t.powf(phi) * eta.exp() / phi;
        ll += w * (delta * ((phi - 1.0) * lt + eta) - big_h);
        let g = lt - 1.0 / phi;
        grad[0] += w * (delta * lt - big_h * g);
        grad[1] += w * (delta - big_h);
        for j in 0..p {
            grad[2 + j] += w * x[i][j] * (delta - big_h);
        }
    }
    Ok((ll, grad))
}

/// Weighted Weibull MLE via damped Newton over `(log phi, psi, gamma)`.
pub fn fit_weibull(
    times: &[f64],
    events: &[u8],
    x: &[Vec<f64>],
    weights: &[f64],
) -> Result<WeibullPh> {
    let p = x.first().map(|r| r.len()).unwrap_or(0);
    let wev: f64 = events
        .iter()
        .zip(weights)
        .map(|(&e, &w)| e as f64 * w)
        .sum();
    if wev <= 0.0 {
        return Err(Error::Estimation("no (weighted) events; cannot fit a Weibull model".into()));
    }
    let wtime: f64 = times.iter().zip(weights).map(|(&t, &w)| t * w).sum();
    // exponential-model start: phi = 1, psi = log(events / exposure)
    let mut theta = DVector::zeros(p + 2);
    theta[1] = (wev / wtime.max(f64::MIN_POSITIVE)).ln();

    let model_of = |th: &DVector<f64>| WeibullPh {
        shape: th[0].exp(),
        log_scale: th[1],
        slopes: th.as_slice()[2..].to_vec(),
    };

    let mut model = model_of(&theta);
    let (mut ll, _) = weibull_loglik_and_grad(&model, times, events, x, weights)?;
    for _ in 0..MAX_ITER {
        let (grad_a, hess_a) = loglik_derivs_logshape(&model, times, events, x, weights)?;
        if grad_a.amax() <= GRAD_TOL {
            return Ok(model);
        }
        let neg_hess = -hess_a;
        let step = match neg_hess.clone().cholesky() {
            Some(c) => c.solve(&grad_a),
            // fall back to a damped gradient step when the Hessian is not PD
            None => &grad_a * (1.0 / (1.0 + grad_a.amax())),
        };
        let mut scale = 1.0;
        loop {
            let candidate = &theta + scale * &step;
            let cand_model = model_of(&candidate);
            let cand_ll = weibull_loglik_and_grad(&cand_model, times, events, x, weights)?.0;
            if cand_ll.is_finite() && (cand_ll >= ll - 1e-12 || scale < 1e-10) {
                theta = candidate;
                model = cand_model;
                ll = cand_ll;
                break;
            }
            scale *= 0.5;
        }
    }
    let (grad_a, _) = loglik_derivs_logshape(&model, times, events, x, weights)?;
    if grad_a.amax() <= 1e-6 {
        // close enough for downstream use, but flag the loose tolerance
        return Ok(model);
    }
    Err(Error::NonConvergence(format!(
        "Weibull fit: score max-norm {} after {MAX_ITER} iterations",
        grad_a.amax()
    )))
}

/// Gradient and Hessian of the log-likelihood in `(a = log phi, psi, gamma)`.
fn loglik_derivs_logshape(
    params: &WeibullPh,
    times: &[f64],
    events: &[u8],
    x: &[Vec<f64>],
    weights: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = params.slopes.len();
    let dim = p + 2;
    let phi = params.shape;
    let mut grad_phi = vec![0.0; dim]; // in (phi, psi, gamma)
    let mut hess = DMatrix::zeros(dim, dim); // in (phi, psi, gamma)
    for i in 0..times.len() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let t = times[i];
        let delta = events[i] as f64;
        let eta = params.linear_predictor(&x[i]);
        let lt = t.ln();
        let big_h = t.powf(phi) * eta.exp() / phi;
        let g = lt - 1.0 / phi;
        grad_phi[0] += w * (delta * lt - big_h * g);
        grad_phi[1] += w * (delta - big_h);
        for j in 0..p {
            grad_phi[2 + j] += w * x[i][j] * (delta - big_h);
        }
        hess[(0, 0)] += w * (-big_h * g * g - big_h / (phi * phi));
        hess[(0, 1)] += w * (-big_h * g);
        hess[(1, 1)] += w * (-big_h);
        for j in 0..p {
            hess[(0, 2 + j)] += w * (-big_h * g * x[i][j]);
            hess[(1, 2 + j)] += w * (-big_h * x[i][j]);
            for k in j..p {
                hess[(2 + j, 2 + k)] += w * (-big_h * x[i][j] * x[i][k]);
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            hess[(a, b)] = hess[(b, a)];
        }
    }
    // chain rule to a = log phi: L_a = phi L_phi; L_aa = phi^2 L_phiphi + phi L_phi
    let mut grad = DVector::from_vec(grad_phi.clone());
    let mut hess_a = hess.clone();
    grad[0] = phi * grad_phi[0];
    hess_a[(0, 0)] = phi * phi * hess[(0, 0)] + phi * grad_phi[0];
    for b in 1..dim {
        hess_a[(0, b)] = phi * hess[(0, b)];
        hess_a[(b, 0)] = hess_a[(0, b)];
    }
    Ok((grad, hess_a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_one_reduces_to_exponential() {
        let model = WeibullPh::new(1.0, -1.2, vec![0.5]).unwrap();
        let times = vec![0.5, 1.0, 2.0, 4.0];
        let events = vec![1u8, 0, 1, 1];
        let x = vec![vec![1.0], vec![0.0], vec![-1.0], vec![2.0]];
        let w = vec![1.0; 4];
        let (ll, _) = weibull_loglik_and_grad(&model, &times, &events, &x, &w).unwrap();
        // exponential likelihood: sum delta*(psi + x g) - t exp(psi + x g)
        let want: f64 = times
            .iter()
            .zip(&events)
            .zip(&x)
            .map(|((t, e), xi)| {
                let eta = -1.2 + 0.5 * xi[0];
                *e as f64 * eta - t * eta.exp()
            })
            .sum();
        assert!((ll - want).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut rng = crate::testutil::rng(5);
        let n = 40;
        for rep in 0..100 {
            let phi = 0.5 + 2.0 * crate::testutil::uniform(&mut rng);
            let psi = -2.0 + crate::testutil::std_normal(&mut rng);
            let g1 = crate::testutil::std_normal(&mut rng) * 0.5;
            let g2 = crate::testutil::std_normal(&mut rng) * 0.5;
            let model = WeibullPh::new(phi, psi, vec![g1, g2]).unwrap();
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![crate::testutil::std_normal(&mut rng), crate::testutil::uniform(&mut rng)])
                .collect();
            let times: Vec<f64> = (0..n).map(|_| 0.05 + 5.0 * crate::testutil::uniform(&mut rng)).collect();
            let events: Vec<u8> = (0..n).map(|i| u8::from(i % 3 != 0)).collect();
            let w = vec![1.0; n];
            let (_, grad) = weibull_loglik_and_grad(&model, &times, &events, &x, &w).unwrap();

            let eval = |m: &WeibullPh| weibull_loglik_and_grad(m, &times, &events, &x, &w).unwrap().0;
            let h = 1e-6;
            let fd = [
                (eval(&WeibullPh { shape: phi + h, ..model.clone() })
                    - eval(&WeibullPh { shape: phi - h, ..model.clone() }))
                    / (2.0 * h),
                (eval(&WeibullPh { log_scale: psi + h, ..model.clone() })
                    - eval(&WeibullPh { log_scale: psi - h, ..model.clone() }))
                    / (2.0 * h),
                (eval(&WeibullPh { slopes: vec![g1 + h, g2], ..model.clone() })
                    - eval(&WeibullPh { slopes: vec![g1 - h, g2], ..model.clone() }))
                    / (2.0 * h),
                (eval(&WeibullPh { slopes: vec![g1, g2 + h], ..model.clone() })
                    - eval(&WeibullPh { slopes: vec![g1, g2 - h], ..model.clone() }))
                    / (2.0 * h),
            ];
            for (a, b) in grad.iter().zip(&fd) {
                let rel = (a - b).abs() / (1.0 + b.abs());
                assert!(rel < 1e-5, "rep {rep}: analytic {a} vs fd {b}");
            }
        }
    }

    #[test]
    fn closed_form_survival_matches_hazard_quadrature() {
        let model = WeibullPh::new(1.7, -3.1, vec![0.4, -0.6]).unwrap();
        let x = [0.8, 1.0];
        for t in [0.5, 2.0, 5.0, 9.5, 14.0] {
            // adaptive Simpson on the hazard
            let f = |s: f64| model.hazard(s, &x);
            let integral = simpson_adaptive(&f, 0.0, t, 1e-12, 40);
            let closed = model.survival(t, &x);
            assert!(
                (closed - (-integral).exp()).abs() < 1e-8,
                "t={t}: {} vs {}",
                closed,
                (-integral).exp()
            );
        }
    }

    fn simpson_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let m = 0.5 * (a + b);
        let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            whole: f64,
            tol: f64,
            depth: usize,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let left = (m - a) / 6.0 * (f(a) + 4.0 * f(lm) + f(m));
            let right = (b - m) / 6.0 * (f(m) + 4.0 * f(rm) + f(b));
            if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, left, tol / 2.0, depth - 1) + rec(f, m, b, right, tol / 2.0, depth - 1)
            }
        }
        rec(f, a, b, whole, tol, depth)
    }

    #[test]
    fn mle_recovers_simulated_parameters() {
        let mut rng = crate::testutil::rng(99);
        let truth = WeibullPh::new(1.8, -2.5, vec![0.7]).unwrap();
        let n = 4000;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![crate::testutil::std_normal(&mut rng)]).collect();
        let times: Vec<f64> = x.iter().map(|xi| truth.sample(&mut rng, xi)).collect();
        let events = vec![1u8; n];
        let w = vec![1.0; n];
        let fit = fit_weibull(&times, &events, &x, &w).unwrap();
        assert!((fit.shape - 1.8).abs() < 0.1, "shape {}", fit.shape);
        assert!((fit.log_scale + 2.5).abs() < 0.1, "psi {}", fit.log_scale);
        assert!((fit.slopes[0] - 0.7).abs() < 0.1, "gamma {}", fit.slopes[0]);
    }

    #[test]
    fn survival_is_decreasing_and_bounded() {
        let model = WeibullPh::new(2.3, -4.0, vec![1.0]).unwrap();
        let mut last = 1.0;
        for k in 0..50 {
            let t = k as f64 * 0.5;
            let s = model.survival(t, &[0.5]);
            assert!(s <= last && (0.0..=1.0).contains(&s));
            last = s;
        }
    }
}
