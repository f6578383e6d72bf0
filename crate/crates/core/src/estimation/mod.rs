//! Two-tier maximum-likelihood estimation.
//!
//! Tier 1 is fitted on platform totals alone. Tier 2 is then fitted on the
//! opinion counts with tier 1 held at its estimate. Both tiers use a dense
//! BFGS minimiser on the negated, observation-normalised log-likelihood.

mod fit;
mod likelihood;
mod optimizer;

pub use fit::{
    empirical_shares, fit_feature_stats, fit_group, fit_tier1, fit_tier1_from, fit_tier2, fit_tier2_from,
    initial_split, initial_tier1, joint_fit, parameter_groups, FitOptions, FitResult, JointFit,
    ParameterTransform, Tier1Fit, Tier2Fit, TypeSummary,
};
pub use likelihood::{
    grad_tier1, grad_tier1_joint, grad_tier2, grad_tier2_joint, ln_factorial, loglik_tier1, loglik_tier1_joint,
    loglik_tier2, loglik_tier2_joint, loglik_tier2_window, Tier1Gradient, Tier2Gradient,
};
pub use optimizer::OptimDiagnostics;
