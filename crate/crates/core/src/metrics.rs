//! Preference accuracy, normalized reward margin, and win-rate comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::PreferenceDataset;
use crate::error::{LabError, Result};
use crate::linalg::CompensatedSum;
use crate::rewards::RewardFn;

/// Wins plus half of the ties. With `tie_epsilon = None` a tie means the two
/// rewards are bit-identical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TieRule {
    pub tie_epsilon: Option<f64>,
}

impl TieRule {
    pub const EXACT: TieRule = TieRule { tie_epsilon: None };

    fn outcome(&self, diff: f64) -> Outcome {
        let tie = match self.tie_epsilon {
            None => diff == 0.0,
            Some(eps) => diff.abs() <= eps,
        };
        if tie {
            Outcome::Tie
        } else if diff > 0.0 {
            Outcome::Win
        } else {
            Outcome::Loss
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Win,
    Tie,
    Loss,
}

pub fn accuracy(reward: &(impl RewardFn + ?Sized), dataset: &PreferenceDataset) -> Result<f64> {
    Ok(evaluate(reward, dataset, TieRule::EXACT)?.accuracy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginResult {
    pub value: f64,
    /// population standard deviation of all chosen and rejected rewards
    pub stddev: f64,
    /// all rewards were equal, so the margin is reported as 0
    pub degenerate: bool,
}

/// Mean `|r⁺ − r⁻|` divided by the population standard deviation of the
/// pooled chosen and rejected rewards.
pub fn normalized_abs_margin(
    reward: &(impl RewardFn + ?Sized),
    dataset: &PreferenceDataset,
) -> Result<MarginResult> {
    let scored = score_all(reward, dataset)?;
    Ok(margin_of(&scored))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub normalized_margin_mean: f64,
    pub n_examples: usize,
    pub n_ties: usize,
    pub reward_stddev: f64,
    pub degenerate_margin: bool,
    /// always "population"; kept in the report so readers need not guess
    pub stddev_kind: String,
}

pub fn evaluate(
    reward: &(impl RewardFn + ?Sized),
    dataset: &PreferenceDataset,
    ties: TieRule,
) -> Result<EvalReport> {
    let scored = score_all(reward, dataset)?;
    let (mut wins, mut n_ties) = (0usize, 0usize);
    for s in &scored {
        match ties.outcome(s.diff) {
            Outcome::Win => wins += 1,
            Outcome::Tie => n_ties += 1,
            Outcome::Loss => {}
        }
    }
    let n = scored.len();
    let m = margin_of(&scored);
    Ok(EvalReport {
        accuracy: (wins as f64 + 0.5 * n_ties as f64) / n as f64,
        normalized_margin_mean: m.value,
        n_examples: n,
        n_ties,
        reward_stddev: m.stddev,
        degenerate_margin: m.degenerate,
        stddev_kind: "population".into(),
    })
}

struct Scored {
    chosen: f64,
    rejected: f64,
    diff: f64,
}

fn score_all(reward: &(impl RewardFn + ?Sized), dataset: &PreferenceDataset) -> Result<Vec<Scored>> {
    dataset.require_non_empty()?;
    dataset
        .examples
        .iter()
        .map(|ex| {
            let chosen = reward.reward(&ex.prompt, &ex.chosen)?;
            let rejected = reward.reward(&ex.prompt, &ex.rejected)?;
            let diff = reward.reward_difference(&ex.prompt, &ex.chosen, &ex.rejected)?;
            if !(chosen.is_finite() && rejected.is_finite() && diff.is_finite()) {
                return Err(LabError::Numeric("non-finite reward".into()));
            }
            Ok(Scored {
                chosen,
                rejected,
                diff,
            })
        })
        .collect()
}

fn margin_of(scored: &[Scored]) -> MarginResult {
    let n = scored.len() as f64;
    let mut mean = CompensatedSum::new();
    for s in scored {
        mean.add(s.chosen);
        mean.add(s.rejected);
    }
    let mean = mean.value() / (2.0 * n);
    let mut var = CompensatedSum::new();
    for s in scored {
        var.add((s.chosen - mean).powi(2));
        var.add((s.rejected - mean).powi(2));
    }
    let stddev = (var.value() / (2.0 * n)).sqrt();
    let first = scored[0].chosen;
    if stddev == 0.0 || scored.iter().all(|s| s.chosen == first && s.rejected == first) {
        return MarginResult {
            value: 0.0,
            stddev: 0.0,
            degenerate: true,
        };
    }
    let mut m = CompensatedSum::new();
    for s in scored {
        m.add((s.chosen - s.rejected).abs());
    }
    MarginResult {
        value: m.value() / n / stddev,
        stddev,
        degenerate: false,
    }
}

/// Key of one accuracy cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
}

impl CellKey {
    pub fn new(model: impl Into<String>, dataset: impl Into<String>, seed: u64) -> Self {
        CellKey {
            model: model.into(),
            dataset: dataset.into(),
            seed,
        }
    }
}

pub type AccuracyTable = BTreeMap<CellKey, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    /// percentages over aligned cells
    pub a_wins: f64,
    pub ties: f64,
    pub b_wins: f64,
    pub cells: usize,
}

pub const DEFAULT_TIE_THRESHOLD: f64 = 0.01;

/// A cell is a tie when the two accuracies are within `tie_threshold` of each
/// other; otherwise the higher accuracy wins.
pub fn win_rate_comparison(a: &AccuracyTable, b: &AccuracyTable, tie_threshold: f64) -> Result<WinRate> {
    let only_a: Vec<&CellKey> = a.keys().filter(|k| !b.contains_key(k)).collect();
    let only_b: Vec<&CellKey> = b.keys().filter(|k| !a.contains_key(k)).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(LabError::Input(format!(
            "accuracy tables are not aligned; only in first: {only_a:?}; only in second: {only_b:?}"
        )));
    }
    if a.is_empty() {
        return Err(LabError::Input("accuracy tables are empty".into()));
    }
    // absorbs representation error of decimal accuracies such as 0.51 − 0.50
    let slack = 1e-12;
    let (mut wa, mut t, mut wb) = (0usize, 0usize, 0usize);
    for (k, &x) in a {
        let y = b[k];
        if (x - y).abs() <= tie_threshold + slack {
            t += 1;
        } else if x > y {
            wa += 1;
        } else {
            wb += 1;
        }
    }
    let n = a.len() as f64;
    Ok(WinRate {
        a_wins: 100.0 * wa as f64 / n,
        ties: 100.0 * t as f64 / n,
        b_wins: 100.0 * wb as f64 / n,
        cells: a.len(),
    })
}
