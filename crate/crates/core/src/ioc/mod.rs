//! Inverse optimal control: recovering `c(x) = -w^T h(x)` from observed
//! state/action pairs by maximum likelihood under the greedy softmax policy.

mod discrepancy;
mod features;
mod fit;
mod likelihood;

pub use discrepancy::cost_discrepancy;
pub use features::{Feature, FeatureBasis, FeatureTable, NamedFeature};
pub use fit::{fit, flat_features, reconstruct_cost, FitOptions, FitReport, WeightVector};
pub use likelihood::{modified_control, IocProblem, LikelihoodTable, ModifiedControlTable, Objective, Observation, WeightMode};
