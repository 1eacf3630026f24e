//! Maximum-likelihood logistic and multinomial logistic models.
//!
//! These back the propensity score, the arm-specific ICE probability models,
//! and the mixture engine's strata model. Fitting is damped Newton–Raphson on
//! the raw covariate scale with tolerance 1e-8 on the score max-norm. All
//! design matrices are `[1, x]`; callers pass covariate rows without the
//! intercept.

use crate::data::{design_row, StratumLabel};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
/// |coefficient| beyond this on a unit-scale covariate means the likelihood is
/// monotone in that direction (separation).
const SEPARATION_BOUND: f64 = 30.0;

/// Numerically stable logistic function.
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A fitted binary logistic regression.
#[derive(Debug, Clone, Serialize)]
pub struct LogisticFit {
    /// Intercept followed by slopes, length p+1.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Condition number of the information matrix at the optimum.
    pub condition_number: f64,
}

impl LogisticFit {
    /// Fitted probability for a covariate row (without intercept).
    pub fn prob(&self, x: &[f64]) -> Result<f64> {
        if x.len() + 1 != self.coefficients.len() {
            return Err(Error::Invalid(format!(
                "covariate dimension {} does not match fit dimension {}",
                x.len(),
                self.coefficients.len() - 1
            )));
        }
        let eta: f64 = self.coefficients[0]
            + x.iter()
                .zip(&self.coefficients[1..])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        Ok(expit(eta))
    }
}

/// Fitted probability; alias for [`LogisticFit::prob`].
pub fn predict_prob(fit: &LogisticFit, x: &[f64]) -> Result<f64> {
    fit.prob(x)
}

fn loglik_logistic(beta: &DVector<f64>, rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        // log p = eta - log(1+e^eta); log(1-p) = -log(1+e^eta)
        let log1pe = if eta > 0.0 {
            eta + (-eta).exp().ln_1p()
        } else {
            eta.exp().ln_1p()
        };
        ll += w[i] * (y[i] * eta - log1pe);
    }
    ll
}

fn rank_deficiency_pivot(info: &DMatrix<f64>) -> usize {
    let lu = info.clone().lu();
    let u = lu.u();
    let mut pivot = 0;
    let mut min = f64::INFINITY;
    for j in 0..u.nrows().min(u.ncols()) {
        let v = u[(j, j)].abs();
        if v < min {
            min = v;
            pivot = j;
        }
    }
    pivot
}

/// Weighted logistic MLE. `y` in {0,1} (fractional responses are accepted for
/// EM-style fits), `w` nonnegative case weights.
pub fn fit_logistic_weighted(y: &[f64], x: &[Vec<f64>], w: &[f64]) -> Result<LogisticFit> {
    let n = y.len();
    if x.len() != n || w.len() != n {
        return Err(Error::Invalid("responses, covariates and weights must have equal length".into()));
    }
    if n == 0 {
        return Err(Error::Invalid("cannot fit a logistic model on zero records".into()));
    }
    let rows: Vec<Vec<f64>> = x.iter().map(|r| design_row(r)).collect();
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Invalid("covariate rows have inconsistent dimension".into()));
    }
    let wsum: f64 = w.iter().sum();
    let ybar: f64 = y.iter().zip(w).map(|(yi, wi)| yi * wi).sum::<f64>() / wsum;
    if !(ybar > 0.0) || !(ybar < 1.0) {
        return Err(Error::Separation {
            direction: "intercept (all responses equal)".into(),
        });
    }

    let mut beta = DVector::zeros(dim);
    beta[0] = logit(ybar);
    let mut ll = loglik_logistic(&beta, &rows, y, w);
    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::zeros(dim, dim);

    for iter in 0..MAX_ITER {
        iterations = iter + 1;
        let mut grad = DVector::zeros(dim);
        info.fill(0.0);
        for (i, row) in rows.iter().enumerate() {
            let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let p = expit(eta);
            let r = w[i] * (y[i] - p);
            let wi = w[i] * p * (1.0 - p);
            for a in 0..dim {
                grad[a] += r * row[a];
                for b in a..dim {
                    info[(a, b)] += wi * row[a] * row[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        if grad.amax() <= GRAD_TOL {
            converged = true;
            break;
        }
        let chol = match info.clone().cholesky() {
            Some(c) => c,
            None => {
                return Err(Error::RankDeficient {
                    pivot: rank_deficiency_pivot(&info),
                })
            }
        };
        let step = chol.solve(&grad);
        // step-halving keeps the likelihood nondecreasing
        let mut scale = 1.0;
        loop {
            let candidate = &beta + scale * &step;
            let cand_ll = loglik_logistic(&candidate, &rows, y, w);
            if cand_ll >= ll - 1e-12 || scale < 1e-10 {
                beta = candidate;
                ll = cand_ll;
                break;
            }
            scale *= 0.5;
        }
        if beta.amax() > SEPARATION_BOUND {
            let j = beta.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|(j, _)| j).unwrap_or(0);
            let direction = if j == 0 { "intercept".to_string() } else { format!("covariate {}", j - 1) };
            return Err(Error::Separation { direction });
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "logistic fit: score max-norm > {GRAD_TOL} after {MAX_ITER} iterations"
        )));
    }
    // a numerically perfect fit means the likelihood is monotone along the
    // fitted direction (perfect separation)
    if ll > -1e-6 {
        let j = beta
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(j, _)| j)
            .unwrap_or(0);
        let direction = if j == 0 {
            "intercept".to_string()
        } else {
            format!("covariate {}", j - 1)
        };
        return Err(Error::Separation { direction });
    }
    Ok(LogisticFit {
        coefficients: beta.iter().copied().collect(),
        converged,
        log_likelihood: ll,
        iterations,
        condition_number: condition_number(&info),
    })
}

/// Unweighted logistic MLE on binary responses.
pub fn fit_logistic(y: &[u8], x: &[Vec<f64>]) -> Result<LogisticFit> {
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let w = vec![1.0; y.len()];
    fit_logistic_weighted(&yf, x, &w)
}

fn condition_number(info: &DMatrix<f64>) -> f64 {
    let eig = info.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for v in eig.eigenvalues.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// A fitted multinomial logistic regression with a reference stratum.
#[derive(Debug, Clone, Serialize)]
pub struct MultinomialFit {
    /// All modeled strata, reference first.
    pub strata: Vec<StratumLabel>,
    pub reference: StratumLabel,
    /// One `[intercept, slopes...]` vector per non-reference stratum, in
    /// `strata[1..]` order.
    pub coefficients: Vec<Vec<f64>>,
    pub converged: bool,
    pub log_likelihood: f64,
    pub iterations: usize,
}

impl MultinomialFit {
    /// Principal scores for one covariate row; sums to one by construction.
    pub fn scores(&self, x: &[f64]) -> Vec<(StratumLabel, f64)> {
        let row = design_row(x);
        let mut etas = vec![0.0_f64];
        for coef in &self.coefficients {
            etas.push(row.iter().zip(coef).map(|(a, b)| a * b).sum());
        }
        let m = etas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = etas.iter().map(|e| (e - m).exp()).collect();
        let denom: f64 = exps.iter().sum();
        self.strata
            .iter()
            .zip(&exps)
            .map(|(u, e)| (*u, e / denom))
            .collect()
    }

    pub fn score_for(&self, u: StratumLabel, x: &[f64]) -> f64 {
        self.scores(x)
            .into_iter()
            .find(|(s, _)| *s == u)
            .map(|(_, v)| v)
            .unwrap_or(0.0)
    }
}

fn multinomial_loglik(
    coefs: &DVector<f64>,
    rows: &[Vec<f64>],
    resp: &[Vec<f64>],
    k: usize,
    dim: usize,
) -> f64 {
    let mut ll = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let mut etas = vec![0.0_f64; k];
        for c in 1..k {
            let offset = (c - 1) * dim;
            etas[c] = row
                .iter()
                .enumerate()
                .map(|(a, v)| v * coefs[offset + a])
                .sum();
        }
        let m = etas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + etas.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
        for c in 0..k {
            if resp[i][c] > 0.0 {
                ll += resp[i][c] * (etas[c] - lse);
            }
        }
    }
    ll
}

/// Multinomial MLE from per-record responsibilities (`resp[i][c]` is the
/// weight of record `i` for `strata[c]`; hard labels use 0/1 rows). The
/// reference stratum must be `strata[0]`.
pub fn fit_multinomial_weighted(
    strata: &[StratumLabel],
    resp: &[Vec<f64>],
    x: &[Vec<f64>],
) -> Result<MultinomialFit> {
    let k = strata.len();
    let n = x.len();
    if k < 2 {
        return Err(Error::Invalid("multinomial fit needs at least two strata".into()));
    }
    if resp.len() != n {
        return Err(Error::Invalid("responsibilities and covariates must have equal length".into()));
    }
    for (c, u) in strata.iter().enumerate() {
        let mass: f64 = resp.iter().map(|r| r[c]).sum();
        if mass <= 0.0 {
            return Err(Error::Estimation(format!(
                "stratum {u} has no observations; drop it via the assumption configuration"
            )));
        }
    }
    let rows: Vec<Vec<f64>> = x.iter().map(|r| design_row(r)).collect();
    let dim = rows[0].len();
    let nparam = (k - 1) * dim;

    // start from intercepts matching the marginal responsibilities
    let total: f64 = resp.iter().map(|r| r.iter().sum::<f64>()).sum();
    let mut coefs = DVector::zeros(nparam);
    let ref_mass: f64 = resp.iter().map(|r| r[0]).sum::<f64>() / total;
    for c in 1..k {
        let mass: f64 = resp.iter().map(|r| r[c]).sum::<f64>() / total;
        coefs[(c - 1) * dim] = (mass / ref_mass).ln();
    }

    let mut ll = multinomial_loglik(&coefs, &rows, resp, k, dim);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..MAX_ITER {
        iterations = iter + 1;
        let mut grad = DVector::zeros(nparam);
        let mut hess = DMatrix::zeros(nparam, nparam);
        for (i, row) in rows.iter().enumerate() {
            let wi: f64 = resp[i].iter().sum();
            let mut etas = vec![0.0_f64; k];
            for c in 1..k {
                let offset = (c - 1) * dim;
                etas[c] = row.iter().enumerate().map(|(a, v)| v * coefs[offset + a]).sum();
            }
            let m = etas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = etas.iter().map(|e| (e - m).exp()).collect();
            let denom: f64 = exps.iter().sum();
            let probs: Vec<f64> = exps.iter().map(|e| e / denom).collect();
            for c in 1..k {
                let rc = resp[i][c] - wi * probs[c];
                let offset = (c - 1) * dim;
                for a in 0..dim {
                    grad[offset + a] += rc * row[a];
                }
                for l in c..k {
                    let block = if c == l {
                        wi * probs[c] * (1.0 - probs[c])
                    } else {
                        -wi * probs[c] * probs[l]
                    };
                    let off_l = (l - 1) * dim;
                    for a in 0..dim {
                        for b in 0..dim {
                            hess[(offset + a, off_l + b)] += block * row[a] * row[b];
                        }
                    }
                }
            }
        }
        // mirror the upper block triangle
        for c in 1..k {
            for l in (c + 1)..k {
                for a in 0..dim {
                    for b in 0..dim {
                        hess[((l - 1) * dim + b, (c - 1) * dim + a)] =
                            hess[((c - 1) * dim + a, (l - 1) * dim + b)];
                    }
                }
            }
        }
        if grad.amax() <= GRAD_TOL {
            converged = true;
            break;
        }
        let chol = match hess.clone().cholesky() {
            Some(c) => c,
            None => {
                return Err(Error::RankDeficient {
                    pivot: rank_deficiency_pivot(&hess),
                })
            }
        };
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        loop {
            let candidate = &coefs + scale * &step;
            let cand_ll = multinomial_loglik(&candidate, &rows, resp, k, dim);
            if cand_ll >= ll - 1e-12 || scale < 1e-10 {
                coefs = candidate;
                ll = cand_ll;
                break;
            }
            scale *= 0.5;
        }
        if coefs.amax() > SEPARATION_BOUND {
            let j = coefs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(j, _)| j)
                .unwrap_or(0);
            return Err(Error::Separation {
                direction: format!("multinomial parameter {j}"),
            });
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "multinomial fit: score max-norm > {GRAD_TOL} after {MAX_ITER} iterations"
        )));
    }
    let coefficients = (0..k - 1)
        .map(|c| coefs.as_slice()[c * dim..(c + 1) * dim].to_vec())
        .collect();
    Ok(MultinomialFit {
        strata: strata.to_vec(),
        reference: strata[0],
        coefficients,
        converged,
        log_likelihood: ll,
        iterations,
    })
}

/// Multinomial MLE from hard labels.
pub fn fit_multinomial(
    labels: &[StratumLabel],
    x: &[Vec<f64>],
    reference: StratumLabel,
    strata: &[StratumLabel],
) -> Result<MultinomialFit> {
    let mut order: Vec<StratumLabel> = vec![reference];
    order.extend(strata.iter().copied().filter(|u| *u != reference));
    let resp: Vec<Vec<f64>> = labels
        .iter()
        .map(|lab| order.iter().map(|u| if u == lab { 1.0 } else { 0.0 }).collect())
        .collect();
    fit_multinomial_weighted(&order, &resp, x)
}

/// Principal scores implied by the two arm-specific ICE models under
/// monotonicity `D(1) >= D(0)`:
/// `pi_11 = p0(x)`, `pi_00 = 1 - p1(x)`, `pi_01 = p1(x) - p0(x)`.
///
/// Values are reported raw; a negative `pi_01` is possible under model strain
/// and is counted by the caller as a diagnostic.
pub fn principal_scores_from_ice_models(
    fit0: &LogisticFit,
    fit1: &LogisticFit,
    x: &[f64],
) -> Result<(f64, f64, f64)> {
    let p0 = fit0.prob(x)?;
    let p1 = fit1.prob(x)?;
    Ok((p0, 1.0 - p1, p1 - p0))
}
