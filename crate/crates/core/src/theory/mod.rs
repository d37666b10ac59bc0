//! Executable forms of the two central results: a reward model can verify
//! correctness with a margin while the policy it induces stays a poor
//! generator, and an implicit reward cannot move on tokens it never saw in
//! training while a linear head generalizes through representations.

mod unseen_tokens;
mod verifier;

pub use unseen_tokens::{
    run_unseen_token_experiment, EvalPrompts, UnseenTokenConfig, UnseenTokenRecord, UnseenTokenReport,
};
pub use verifier::{
    construct_verifier_policy, efficient_generator_check, estimate_valid_cycle_rate,
    generation_probability, marginal_next_token, verifier_report, verify_margin, EfficiencyRow,
    EfficiencyTable, PromptUniverse, SequenceDistribution, TabularImplicitReward, Task,
    ValidRateEstimate, VerifierPolicy, VerifierReport, DEFAULT_ENUMERATION_CAP,
};
