//! Losses, analytic gradients, and full-batch gradient descent with only the
//! linear head (EX) or the unembedding matrix (IM, EX-GRM) trainable.

mod embeddings;
mod objective;
mod separability;

pub use embeddings::{phi_ex, phi_im, smoothness_and_lr_bound, LrBound};
pub(crate) use objective::{Loss, Objective};
pub use separability::{
    separability_of,
    check_realizability, max_margin_from_features, max_margin_separator, phi_features,
    KktReport, MaxMarginSolution, Realizability, RealizabilityMode,
};

use serde::{Deserialize, Serialize};

use crate::dataset::PreferenceDataset;
use crate::error::{LabError, Result};
use crate::linalg::{neg_log_sigmoid, CompensatedSum};
use crate::rewards::{Params, RewardScorer, ScorerKind};

/// Mean Bradley–Terry loss `−ln σ(r(x,y⁺) − r(x,y⁻))` computed through the
/// scorer's own reward differences.
pub fn bt_loss(scorer: &RewardScorer, dataset: &PreferenceDataset) -> Result<f64> {
    dataset.require_non_empty()?;
    let mut s = CompensatedSum::new();
    for ex in &dataset.examples {
        let d = scorer.reward_difference(&ex.prompt, &ex.chosen, &ex.rejected)?;
        s.add(neg_log_sigmoid(d));
    }
    Ok(s.value() / dataset.len() as f64)
}

/// Gradient of [`bt_loss`] with respect to the head (EX variants) or the
/// unembedding matrix (IM variants).
pub fn bt_gradient(scorer: &RewardScorer, dataset: &PreferenceDataset) -> Result<Params> {
    let obj = Objective::new(scorer, dataset, Loss::BradleyTerry)?;
    grad_of(&obj, scorer)
}

/// Mean `−ln π(yes|I[x,y⁺]) − ln π(no|I[x,y⁻])` for an EX-GRM scorer.
pub fn grm_loss(scorer: &RewardScorer, dataset: &PreferenceDataset) -> Result<f64> {
    let RewardScorer::ExGrm { policy, template } = scorer else {
        return Err(LabError::Contract(format!(
            "verdict loss needs an ex_grm scorer, got {}",
            scorer.kind()
        )));
    };
    dataset.require_non_empty()?;
    let mut s = CompensatedSum::new();
    for ex in &dataset.examples {
        let hp = policy
            .reps()
            .representation(&template.build_input(&ex.prompt, &ex.chosen))?;
        let hm = policy
            .reps()
            .representation(&template.build_input(&ex.prompt, &ex.rejected))?;
        s.add(-policy.token_log_prob_for(&hp, template.yes())?);
        s.add(-policy.token_log_prob_for(&hm, template.no())?);
    }
    Ok(s.value() / dataset.len() as f64)
}

pub fn grm_gradient(scorer: &RewardScorer, dataset: &PreferenceDataset) -> Result<Params> {
    let obj = Objective::new(scorer, dataset, Loss::Verdict)?;
    grad_of(&obj, scorer)
}

fn grad_of(obj: &Objective, scorer: &RewardScorer) -> Result<Params> {
    Ok(obj
        .evaluate(&scorer.params(), true)?
        .grad
        .expect("gradient requested"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// β used for the learning-rate bound; IM scorers must carry the same value.
    pub beta: f64,
    pub record_every: usize,
    pub variant: ScorerKind,
    #[serde(default)]
    pub strict_lr: bool,
    #[serde(default = "default_true")]
    pub snapshot_params: bool,
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(variant: ScorerKind, learning_rate: f64, steps: usize) -> Self {
        TrainConfig {
            learning_rate,
            steps,
            beta: 1.0,
            record_every: 1,
            variant,
            strict_lr: false,
            snapshot_params: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LabError::config("learning_rate", "must be a positive finite number"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(LabError::config("beta", "must be a positive finite number"));
        }
        if self.record_every == 0 {
            return Err(LabError::config("record_every", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<Params>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrajectory {
    pub variant: ScorerKind,
    pub learning_rate: f64,
    pub lr_bound: Option<f64>,
    pub records: Vec<TrainRecord>,
    pub final_params: Params,
    pub warnings: Vec<String>,
}

impl TrainTrajectory {
    pub fn final_record(&self) -> &TrainRecord {
        self.records.last().expect("trajectory always holds the initial state")
    }
}

/// Output of [`gd_train`]: the recorded trajectory and the trained scorer.
#[derive(Debug, Clone)]
pub struct Trained {
    pub trajectory: TrainTrajectory,
    pub scorer: RewardScorer,
}

/// Full-batch gradient descent `θ ← θ − η ∇L(θ)`.
pub fn gd_train(
    config: &TrainConfig,
    dataset: &PreferenceDataset,
    initial: RewardScorer,
) -> Result<Trained> {
    gd_train_observed(config, dataset, initial, |_, _| Ok(()))
}

/// As [`gd_train`], calling `observer(step, scorer)` at every recorded step.
pub fn gd_train_observed(
    config: &TrainConfig,
    dataset: &PreferenceDataset,
    initial: RewardScorer,
    mut observer: impl FnMut(usize, &RewardScorer) -> Result<()>,
) -> Result<Trained> {
    config.validate()?;
    if initial.kind() != config.variant {
        return Err(LabError::config(
            "variant",
            format!("config asks for {} but the scorer is {}", config.variant, initial.kind()),
        ));
    }
    if let RewardScorer::Im { beta, .. } = &initial {
        if *beta != config.beta {
            return Err(LabError::config(
                "beta",
                format!("config beta {} differs from scorer beta {beta}", config.beta),
            ));
        }
    }
    dataset.require_non_empty()?;

    let mut warnings = Vec::new();
    let lr_bound = if matches!(
        config.variant,
        ScorerKind::Ex | ScorerKind::Im | ScorerKind::ExAllRepr | ScorerKind::ImNoRef
    ) {
        let b = smoothness_and_lr_bound(dataset, initial.reps(), config.beta)?;
        if config.learning_rate >= b.bound {
            if config.strict_lr {
                return Err(LabError::config(
                    "learning_rate",
                    format!(
                        "{} violates the bound 2B⁻²min(β⁻²,1) = {} (B = {})",
                        config.learning_rate, b.bound, b.max_norm
                    ),
                ));
            }
            warnings.push(format!(
                "learning rate {} exceeds the convergence bound {}",
                config.learning_rate, b.bound
            ));
        }
        Some(b.bound)
    } else {
        None
    };

    let objective = Objective::for_scorer(&initial, dataset)?;
    let mut scorer = initial;
    let mut params = scorer.params();
    let mut records = Vec::new();
    for step in 0..=config.steps {
        let last = step == config.steps;
        let eval = objective.evaluate(&params, !last)?;
        if step % config.record_every == 0 || last {
            scorer.set_params(params.clone())?;
            observer(step, &scorer)?;
            records.push(TrainRecord {
                step,
                loss: eval.loss,
                train_accuracy: eval.accuracy,
                params: config.snapshot_params.then(|| params.clone()),
            });
        }
        if last {
            break;
        }
        let grad = eval.grad.expect("gradient requested");
        params.axpy(-config.learning_rate, &grad);
        if !params.is_finite() {
            return Err(LabError::Numeric(format!(
                "parameters became non-finite at step {}",
                step + 1
            )));
        }
    }
    scorer.set_params(params.clone())?;
    Ok(Trained {
        trajectory: TrainTrajectory {
            variant: config.variant,
            learning_rate: config.learning_rate,
            lr_bound,
            records,
            final_params: params,
            warnings,
        },
        scorer,
    })
}
