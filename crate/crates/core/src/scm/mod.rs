//! Discrete structural-causal-model engine: Gumbel-max mechanisms, shared-noise
//! counterfactual distributions, Probability of Necessity and the
//! counterfactual-consistency verifier.

mod consistency;
mod counterfactual;
pub mod format;
mod gumbel;
mod model;

pub use consistency::{
    joint_counts, mc_bound, random_trial, verify_gumbel_consistency, verify_random_trials,
    verify_with_coupling, ConsistencyReport, NoiseCoupling, PairCheck, TheoremSuiteReport, TrialSpec,
};
pub use counterfactual::{
    counterfactual_distribution, probability_of_necessity, CounterfactualQuery, JointTable, WorldOutcome,
};
pub use gumbel::{gumbel_max_select, mode, one_hot, GumbelNoise};
pub use model::{
    CategoricalMechanism, Exogenous, Intervention, LogitTable, ModelBuilder, MutilatedModel, Node,
    StructuralCausalModel,
};
