//! Trial simulator: covariates mimicking the motivating oncology trial's
//! baseline table, multinomial principal strata, Weibull stratum-arm outcome
//! models and exponential covariate-dependent censoring. Emits the latent
//! truth alongside the observable dataset so estimators can be validated
//! against it.

use crate::data::{format_f64, Dataset, StratumLabel, TimeGrid, TrialRecord};
use crate::error::{Error, Result};
use crate::exec;
use crate::glm::MultinomialFit;
use crate::survival::weibull::WeibullPh;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Baseline covariate generator. Order of the generated vector is fixed as
/// `(age standardized, male, nephrectomy, >=3 risk factors)`; every
/// coefficient vector in [`DgpSpec`] uses this order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub age_mean: f64,
    pub age_sd: f64,
    /// Center of the recode `(age - age_center) / age_scale`; 10 with a
    /// center near the population mean codes age in decades from the middle
    /// of the cohort.
    pub age_center: f64,
    pub age_scale: f64,
    pub age_min: f64,
    pub age_max: f64,
    pub p_male: f64,
    pub p_nephrectomy: f64,
    pub p_risk3plus: f64,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        CovariateSpec {
            age_mean: 62.0,
            age_sd: 22.0,
            age_center: 58.9,
            age_scale: 10.0,
            age_min: 18.0,
            age_max: 90.0,
            p_male: 0.65,
            p_nephrectomy: 0.15,
            p_risk3plus: 0.06,
        }
    }
}

impl CovariateSpec {
    pub fn names() -> Vec<String> {
        vec![
            "age_std".into(),
            "male".into(),
            "nephrectomy".into(),
            "risk3plus".into(),
        ]
    }

    /// Draw one covariate row; age is recoded as `(age - mean) / scale`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let age = loop {
            let a = self.age_mean + self.age_sd * sample_std_normal(rng);
            if a >= self.age_min && a <= self.age_max {
                break a;
            }
        };
        vec![
            (age - self.age_center) / self.age_scale,
            f64::from(rng.gen::<f64>() < self.p_male),
            f64::from(rng.gen::<f64>() < self.p_nephrectomy),
            f64::from(rng.gen::<f64>() < self.p_risk3plus),
        ]
    }
}

fn sample_std_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

/// Exponential censoring with rate `exp(intercept + x'slopes)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringSpec {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl CensoringSpec {
    pub fn rate(&self, x: &[f64]) -> f64 {
        (self.intercept + x.iter().zip(&self.slopes).map(|(a, b)| a * b).sum::<f64>()).exp()
    }

    pub fn survival(&self, t: f64, x: &[f64]) -> f64 {
        (-t * self.rate(x)).exp()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, x: &[f64]) -> f64 {
        let v: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        -v.ln() / self.rate(x)
    }
}

/// Full specification of the data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub n_treated: usize,
    pub covariates: CovariateSpec,
    /// Multinomial strata coefficients `[intercept, slopes...]` per
    /// non-reference stratum; reference is `00`.
    pub beta_s10: Vec<f64>,
    pub beta_s11: Vec<f64>,
    pub beta_s01: Vec<f64>,
    /// Weibull outcome parameters per stratum, indexed by arm `[z0, z1]`.
    pub outcome_s00: [WeibullPh; 2],
    pub outcome_s01: [WeibullPh; 2],
    pub outcome_s10: [WeibullPh; 2],
    pub outcome_s11: [WeibullPh; 2],
    pub censoring: CensoringSpec,
}

impl Default for DgpSpec {
    fn default() -> Self {
        let w = |shape: f64, log_scale: f64, slopes: [f64; 4]| WeibullPh {
            shape,
            log_scale,
            slopes: slopes.to_vec(),
        };
        DgpSpec {
            n: 732,
            n_treated: 363,
            covariates: CovariateSpec::default(),
            beta_s10: vec![-1.4, 0.0, 0.1, 0.2, 0.5],
            beta_s11: vec![0.0, -0.1, -0.1, -0.1, 0.0],
            beta_s01: vec![-2.3, -0.1, -0.1, -0.1, 0.5],
            outcome_s11: [
                w(2.0, -5.0, [-0.3, 0.3, 1.0, 1.0]),
                w(2.0, -5.2, [-0.3, 0.3, 1.0, 1.0]),
            ],
            outcome_s01: [
                w(2.0, -4.8, [-0.3, 0.3, 1.0, 1.0]),
                w(1.6, -5.5, [-0.5, 0.6, 1.5, 1.5]),
            ],
            outcome_s10: [
                w(2.5, -4.0, [-0.5, 0.6, 0.5, 1.0]),
                w(2.5, -4.5, [-0.5, 0.6, 0.5, 0.5]),
            ],
            outcome_s00: [
                w(2.2, -4.5, [-0.6, 0.5, 0.9, 0.5]),
                w(1.6, -5.5, [-0.5, 0.6, 1.4, 1.5]),
            ],
            censoring: CensoringSpec {
                intercept: -5.0,
                slopes: vec![-1.0, -1.0, -1.0, -1.0],
            },
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_treated > self.n {
            return Err(Error::Invalid("treated arm size exceeds n".into()));
        }
        for m in self.outcome_models() {
            if !(m.shape > 0.0) {
                return Err(Error::Invalid("all Weibull shapes must be positive".into()));
            }
        }
        Ok(())
    }

    fn outcome_models(&self) -> [&WeibullPh; 8] {
        [
            &self.outcome_s00[0],
            &self.outcome_s00[1],
            &self.outcome_s01[0],
            &self.outcome_s01[1],
            &self.outcome_s10[0],
            &self.outcome_s10[1],
            &self.outcome_s11[0],
            &self.outcome_s11[1],
        ]
    }

    pub fn outcome(&self, z: u8, u: StratumLabel) -> &WeibullPh {
        let pair = match u {
            StratumLabel::S00 => &self.outcome_s00,
            StratumLabel::S01 => &self.outcome_s01,
            StratumLabel::S10 => &self.outcome_s10,
            StratumLabel::S11 => &self.outcome_s11,
        };
        &pair[z as usize]
    }

    /// The strata model as a multinomial fit (truth object).
    pub fn strata_model(&self) -> MultinomialFit {
        MultinomialFit {
            strata: vec![
                StratumLabel::S00,
                StratumLabel::S10,
                StratumLabel::S11,
                StratumLabel::S01,
            ],
            reference: StratumLabel::S00,
            coefficients: vec![
                self.beta_s10.clone(),
                self.beta_s11.clone(),
                self.beta_s01.clone(),
            ],
            converged: true,
            log_likelihood: 0.0,
            iterations: 0,
        }
    }

    /// True principal score `Pr(U = u | x)`.
    pub fn principal_score(&self, u: StratumLabel, x: &[f64]) -> f64 {
        self.strata_model().score_for(u, x)
    }

    /// True ICE probability `p_z(x) = Pr(D = 1 | Z = z, x)`.
    pub fn ice_prob(&self, z: u8, x: &[f64]) -> f64 {
        self.strata_model()
            .scores(x)
            .into_iter()
            .filter(|(u, _)| u.ice_under(z) == 1)
            .map(|(_, s)| s)
            .sum()
    }

    /// True conditional cell survival
    /// `Pr(T(z) > t | D(z) = d, x)` (stratum mixture within the cell).
    pub fn cell_survival(&self, z: u8, d: u8, t: f64, x: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (u, score) in self.strata_model().scores(x) {
            if u.ice_under(z) == d {
                num += score * self.outcome(z, u).survival(t, x);
                den += score;
            }
        }
        num / den
    }
}

/// Latent truth for one simulated subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub stratum: StratumLabel,
    pub t0: f64,
    pub t1: f64,
    pub censoring_time: f64,
}

/// A simulated trial: the observable dataset plus per-subject latent truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrial {
    pub dataset: Dataset,
    pub latent: Vec<LatentRecord>,
    pub seed: u64,
}

impl SimulatedTrial {
    /// Consistency of the derivation of observed fields from latent ones.
    pub fn check_consistency(&self) -> Result<()> {
        for (r, l) in self.dataset.records.iter().zip(&self.latent) {
            let t = if r.arm == 1 { l.t1 } else { l.t0 };
            if r.ice != l.stratum.ice_under(r.arm) {
                return Err(Error::Internal("ICE indicator inconsistent with stratum".into()));
            }
            if (r.time - t.min(l.censoring_time)).abs() > 1e-12 {
                return Err(Error::Internal("observed time is not min(T(Z), C)".into()));
            }
            if r.event != u8::from(t <= l.censoring_time) {
                return Err(Error::Internal("event indicator inconsistent".into()));
            }
        }
        Ok(())
    }
}

/// Generate one trial. Deterministic given `(spec, seed)`.
pub fn simulate(spec: &DgpSpec, seed: u64) -> Result<SimulatedTrial> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let strata_model = spec.strata_model();

    // randomly assign exactly n_treated subjects to the active arm
    let mut arms = vec![0u8; spec.n];
    for a in arms.iter_mut().take(spec.n_treated) {
        *a = 1;
    }
    // Fisher-Yates
    for i in (1..spec.n).rev() {
        let j = rng.gen_range(0..=i);
        arms.swap(i, j);
    }

    let mut records = Vec::with_capacity(spec.n);
    let mut latent = Vec::with_capacity(spec.n);
    for &z in &arms {
        let x = spec.covariates.sample(&mut rng);
        let scores = strata_model.scores(&x);
        let u = sample_categorical(&mut rng, &scores);
        let t0 = spec.outcome(0, u).sample(&mut rng, &x);
        let t1 = spec.outcome(1, u).sample(&mut rng, &x);
        let c = spec.censoring.sample(&mut rng, &x);
        let t_obs = if z == 1 { t1 } else { t0 };
        records.push(TrialRecord {
            arm: z,
            ice: u.ice_under(z),
            time: t_obs.min(c),
            event: u8::from(t_obs <= c),
            covariates: x,
        });
        latent.push(LatentRecord {
            stratum: u,
            t0,
            t1,
            censoring_time: c,
        });
    }
    let dataset = Dataset::new(records, CovariateSpec::names())?;
    Ok(SimulatedTrial {
        dataset,
        latent,
        seed,
    })
}

fn sample_categorical<R: Rng>(rng: &mut R, scores: &[(StratumLabel, f64)]) -> StratumLabel {
    let v: f64 = rng.gen();
    let mut acc = 0.0;
    for (u, s) in scores {
        acc += s;
        if v < acc {
            return *u;
        }
    }
    scores.last().unwrap().0
}

/// Population-level true survival curves and SPCEs per stratum, computed by
/// Monte-Carlo averaging the closed-form Weibull survival over the stratum's
/// covariate distribution (principal scores as weights).
#[derive(Debug, Clone, Serialize)]
pub struct TrueSpce {
    pub grid: TimeGrid,
    pub strata: Vec<StratumLabel>,
    /// `survival[s][z]` is the curve for `strata[s]` under arm `z`.
    pub survival: Vec<[Vec<f64>; 2]>,
    /// `tau[s]` is the per-stratum SPCE curve.
    pub tau: Vec<Vec<f64>>,
    pub stratum_proportions: Vec<f64>,
    /// Largest Monte-Carlo standard error across curves.
    pub mc_standard_error: f64,
    pub mc_size: usize,
}

impl TrueSpce {
    pub fn stratum_index(&self, u: StratumLabel) -> Option<usize> {
        self.strata.iter().position(|s| *s == u)
    }
}

/// Compute the true `S_{z,u}(t)` and `tau_u(t)` under `spec` on `grid`.
pub fn true_spce(spec: &DgpSpec, grid: &TimeGrid, mc_size: usize, seed: u64) -> Result<TrueSpce> {
    spec.validate()?;
    let strata = StratumLabel::ALL.to_vec();
    let strata_model = spec.strata_model();
    let m = grid.len();

    // draw covariates once, in chunks, deterministically
    let chunk = 4096;
    let n_chunks = mc_size.div_ceil(chunk);
    let draws: Vec<Vec<Vec<f64>>> = exec::map_indexed(n_chunks, |c| {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(c as u64 + 1);
        let lo = c * chunk;
        let hi = (lo + chunk).min(mc_size);
        (lo..hi).map(|_| spec.covariates.sample(&mut rng)).collect()
    });

    // accumulate weighted survival sums per stratum/arm/time
    struct Acc {
        wsum: [f64; 4],
        s_sum: Vec<[Vec<f64>; 2]>,
        s_sq: Vec<[Vec<f64>; 2]>,
    }
    let accs: Vec<Acc> = exec::map_indexed(n_chunks, |c| {
        let mut acc = Acc {
            wsum: [0.0; 4],
            s_sum: vec![[vec![0.0; m], vec![0.0; m]]; 4],
            s_sq: vec![[vec![0.0; m], vec![0.0; m]]; 4],
        };
        for x in &draws[c] {
            let scores = strata_model.scores(x);
            for (s, u) in strata.iter().enumerate() {
                let w = scores.iter().find(|(l, _)| l == u).unwrap().1;
                acc.wsum[s] += w;
                for z in 0..2usize {
                    let model = spec.outcome(z as u8, *u);
                    for (k, &t) in grid.times().iter().enumerate() {
                        let sv = model.survival(t, x);
                        acc.s_sum[s][z][k] += w * sv;
                        acc.s_sq[s][z][k] += w * sv * sv;
                    }
                }
            }
        }
        acc
    });

    let mut wsum = [0.0; 4];
    let mut s_sum = vec![[vec![0.0; m], vec![0.0; m]]; 4];
    let mut s_sq = vec![[vec![0.0; m], vec![0.0; m]]; 4];
    for a in &accs {
        for s in 0..4 {
            wsum[s] += a.wsum[s];
            for z in 0..2 {
                for k in 0..m {
                    s_sum[s][z][k] += a.s_sum[s][z][k];
                    s_sq[s][z][k] += a.s_sq[s][z][k];
                }
            }
        }
    }

    let total_w: f64 = wsum.iter().sum();
    let mut survival = Vec::new();
    let mut tau = Vec::new();
    let mut max_se = 0.0_f64;
    for s in 0..4 {
        let mut curves = [vec![0.0; m], vec![0.0; m]];
        for z in 0..2 {
            for k in 0..m {
                let mean = s_sum[s][z][k] / wsum[s];
                curves[z][k] = mean;
                // weighted-mean MC error (conservative: treats weights as iid draws)
                let var = (s_sq[s][z][k] / wsum[s] - mean * mean).max(0.0);
                max_se = max_se.max((var / mc_size as f64).sqrt());
            }
        }
        tau.push(
            (0..m)
                .map(|k| curves[1][k] - curves[0][k])
                .collect::<Vec<f64>>(),
        );
        survival.push(curves);
    }

    Ok(TrueSpce {
        grid: grid.clone(),
        strata,
        survival,
        tau,
        stratum_proportions: wsum.iter().map(|w| w / total_w).collect(),
        mc_standard_error: max_se,
        mc_size,
    })
}

/// Write the simulated trial with latent columns
/// (`stratum`, `t0`, `t1`, `censoring_time`) appended to the observable ones.
/// Loaders ignore the latent columns unless asked for them.
pub fn write_truth(trial: &SimulatedTrial, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    let names = trial.dataset.covariate_names.join(",");
    writeln!(out, "arm,ice,time,event,{names},stratum,t0,t1,censoring_time")?;
    for (r, l) in trial.dataset.records.iter().zip(&trial.latent) {
        let covs = r
            .covariates
            .iter()
            .map(|v| format_f64(*v))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            out,
            "{},{},{},{},{covs},{},{},{},{}",
            r.arm,
            r.ice,
            format_f64(r.time),
            r.event,
            l.stratum,
            format_f64(l.t0),
            format_f64(l.t1),
            format_f64(l.censoring_time),
        )?;
    }
    out.flush()?;
    Ok(())
}
