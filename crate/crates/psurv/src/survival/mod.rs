//! Time-to-event models: Cox proportional hazards with a Breslow baseline
//! (used by the weighting engine's nuisance fits) and the Weibull
//! proportional-hazards likelihood (used by the mixture engine).

pub mod cox;
pub mod weibull;

pub use cox::{fit_censoring, fit_cox, CoxFit, StepFunction};
pub use weibull::{fit_weibull, weibull_loglik_and_grad, WeibullPh};
