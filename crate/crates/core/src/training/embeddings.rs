//! Logistic-regression embeddings of preference examples.
//!
//! With fixed representations and single-token responses, both the EX and
//! IM objectives reduce to logistic regression `ln(1 + exp(−⟨θ, φ⟩))` over
//! per-example features. For EX the features live in `R^D`; for IM they are
//! `|V|×D` matrices supported on two rows.

use serde::{Deserialize, Serialize};

use crate::dataset::{PreferenceDataset, PreferenceExample};
use crate::error::{LabError, Result};
use crate::linalg::{norm, sub, Matrix};
use crate::seqmodel::RepresentationProvider;

/// `h_{x,y⁺} − h_{x,y⁻}`
pub fn phi_ex(example: &PreferenceExample, reps: &RepresentationProvider) -> Result<Vec<f64>> {
    let hp = reps.representation(&example.prompt.concat(&example.chosen))?;
    let hm = reps.representation(&example.prompt.concat(&example.rejected))?;
    Ok(sub(&hp, &hm))
}

/// `β (e_{y⁺} − e_{y⁻}) h_xᵀ`; responses must be single tokens.
pub fn phi_im(
    example: &PreferenceExample,
    reps: &RepresentationProvider,
    beta: f64,
) -> Result<Matrix> {
    if !example.is_single_token() {
        return Err(LabError::Contract(
            "IM features are defined for single-token responses only".into(),
        ));
    }
    let h = reps.representation(&example.prompt)?;
    let mut m = Matrix::zeros(reps.vocab_size(), reps.dim());
    m.add_to_row(example.chosen.tokens()[0] as usize, beta, &h);
    m.add_to_row(example.rejected.tokens()[0] as usize, -beta, &h);
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrBound {
    /// largest representation norm over prompts and full prompt-response pairs
    pub max_norm: f64,
    /// `B² max(β², 1)`
    pub smoothness: f64,
    /// `2 B⁻² min(β⁻², 1)`
    pub bound: f64,
}

pub fn smoothness_and_lr_bound(
    dataset: &PreferenceDataset,
    reps: &RepresentationProvider,
    beta: f64,
) -> Result<LrBound> {
    dataset.require_non_empty()?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(LabError::config("beta", "must be a positive finite number"));
    }
    let mut b: f64 = 0.0;
    for ex in &dataset.examples {
        for seq in [
            ex.prompt.clone(),
            ex.prompt.concat(&ex.chosen),
            ex.prompt.concat(&ex.rejected),
        ] {
            b = b.max(norm(&reps.representation(&seq)?));
        }
    }
    let b2 = b * b;
    let (smoothness, bound) = if b2 > 0.0 {
        (b2 * (beta * beta).max(1.0), 2.0 / b2 * (1.0 / (beta * beta)).min(1.0))
    } else {
        (0.0, f64::INFINITY)
    };
    Ok(LrBound {
        max_norm: b,
        smoothness,
        bound,
    })
}
