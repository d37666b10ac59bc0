//! Strict linear separability of preference features and the hard-margin
//! separator over them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::PreferenceDataset;
use crate::error::{LabError, Result};
use crate::linalg::{axpy, dot, norm, sigmoid};
use crate::seqmodel::RepresentationProvider;

use super::embeddings::{phi_ex, phi_im};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealizabilityMode {
    Ex,
    /// flattened IM features; the scale β does not affect separability
    Im,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Realizability {
    /// `certificate` is a unit vector with `⟨certificate, φ⟩ > 0` for every feature.
    Separable { certificate: Vec<f64> },
    NotSeparable { reason: String },
    Undetermined { iterations: usize, min_margin: f64 },
}

impl Realizability {
    pub fn is_separable(&self) -> bool {
        matches!(self, Realizability::Separable { .. })
    }
}

/// Feature vectors for every example, flattened row-major in IM mode.
pub fn phi_features(
    dataset: &PreferenceDataset,
    reps: &RepresentationProvider,
    mode: RealizabilityMode,
) -> Result<Vec<Vec<f64>>> {
    dataset
        .examples
        .iter()
        .map(|ex| match mode {
            RealizabilityMode::Ex => phi_ex(ex, reps),
            RealizabilityMode::Im => Ok(phi_im(ex, reps, 1.0)?.as_slice().to_vec()),
        })
        .collect()
}

const DEFAULT_BUDGET: usize = 200_000;

pub fn check_realizability(
    dataset: &PreferenceDataset,
    reps: &RepresentationProvider,
    mode: RealizabilityMode,
) -> Result<Realizability> {
    dataset.require_non_empty()?;
    if mode == RealizabilityMode::Im && !dataset.is_single_token() {
        return Err(LabError::Contract(
            "IM realizability is defined for single-token responses only".into(),
        ));
    }
    let phis = phi_features(dataset, reps, mode)?;
    Ok(separability_of(&phis, DEFAULT_BUDGET))
}

/// Decides strict separability of `phis` through the origin. Zero features
/// and antiparallel pairs give an exact negative answer; otherwise logistic
/// gradient descent runs until every margin is positive or the budget ends.
pub fn separability_of(phis: &[Vec<f64>], budget: usize) -> Realizability {
    if let Some(reason) = obvious_obstruction(phis) {
        return Realizability::NotSeparable { reason };
    }
    let dim = phis[0].len();
    let max_sq = phis.iter().map(|p| dot(p, p)).fold(0.0, f64::max);
    let n = phis.len() as f64;
    // mean logistic loss is (max‖φ‖²/4)-smooth
    let lr = 4.0 / max_sq;
    let mut u = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut min_margin = 0.0;
    for it in 0..budget {
        grad.iter_mut().for_each(|g| *g = 0.0);
        min_margin = f64::INFINITY;
        for p in phis {
            let m = dot(&u, p);
            min_margin = f64::min(min_margin, m);
            axpy(&mut grad, -sigmoid(-m) / n, p);
        }
        if min_margin > 0.0 {
            let s = norm(&u);
            return Realizability::Separable {
                certificate: u.iter().map(|v| v / s).collect(),
            };
        }
        if it + 1 < budget {
            axpy(&mut u, -lr, &grad);
        }
    }
    Realizability::Undetermined {
        iterations: budget,
        min_margin,
    }
}

fn obvious_obstruction(phis: &[Vec<f64>]) -> Option<String> {
    if phis.is_empty() {
        return Some("no features".into());
    }
    for (i, p) in phis.iter().enumerate() {
        if p.iter().all(|v| *v == 0.0) {
            return Some(format!("example {i} has identical chosen and rejected features"));
        }
    }
    for i in 0..phis.len() {
        for j in i + 1..phis.len() {
            let (a, b) = (&phis[i], &phis[j]);
            let c = dot(a, b);
            if c < 0.0 && (c * c - dot(a, a) * dot(b, b)).abs() <= 1e-12 * dot(a, a) * dot(b, b) {
                return Some(format!("examples {i} and {j} have opposite features"));
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `min_i ⟨u, φ_i⟩`, at least `1 − 1e-8` when primal feasible
    pub min_margin: f64,
    /// `Σ_i α_i |⟨u, φ_i⟩ − 1|`
    pub complementary_slackness: f64,
    /// `‖u − Σ_i α_i φ_i‖ / max(1, ‖u‖)`
    pub stationarity: f64,
    pub min_multiplier: f64,
}

impl KktReport {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.min_margin >= 1.0 - tol
            && self.complementary_slackness < tol
            && self.stationarity < tol
            && self.min_multiplier >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMarginSolution {
    pub separator: Vec<f64>,
    /// multipliers of the deduplicated constraints
    pub multipliers: Vec<f64>,
    pub kkt: KktReport,
}

/// Minimum-norm `u` with `⟨u, h_{x,y⁺} − h_{x,y⁻}⟩ ≥ 1` for every example.
pub fn max_margin_separator(
    dataset: &PreferenceDataset,
    reps: &RepresentationProvider,
) -> Result<MaxMarginSolution> {
    dataset.require_non_empty()?;
    let phis = phi_features(dataset, reps, RealizabilityMode::Ex)?;
    max_margin_from_features(&phis)
}

const KKT_TOL: f64 = 1e-8;

pub fn max_margin_from_features(phis: &[Vec<f64>]) -> Result<MaxMarginSolution> {
    let infeasible = |why: String| {
        LabError::Infeasible(format!(
            "{why}; run check_realizability to confirm the examples are separable"
        ))
    };
    if let Some(reason) = obvious_obstruction(phis) {
        return Err(infeasible(reason));
    }
    let mut uniq: Vec<Vec<f64>> = Vec::new();
    for p in phis {
        if !uniq.iter().any(|q| q == p) {
            uniq.push(p.clone());
        }
    }
    let dim = uniq[0].len();
    if uniq.iter().any(|p| p.len() != dim) {
        return Err(LabError::Input("features have inconsistent dimensions".into()));
    }
    let sq: Vec<f64> = uniq.iter().map(|p| dot(p, p)).collect();
    let mut alpha = vec![0.0; uniq.len()];
    let mut u = vec![0.0; dim];

    const SWEEPS_PER_ROUND: usize = 50;
    const ROUNDS: usize = 4000;
    for _ in 0..ROUNDS {
        for _ in 0..SWEEPS_PER_ROUND {
            for i in 0..uniq.len() {
                let step = (1.0 - dot(&u, &uniq[i])) / sq[i];
                let next = (alpha[i] + step).max(0.0);
                let delta = next - alpha[i];
                if delta != 0.0 {
                    axpy(&mut u, delta, &uniq[i]);
                    alpha[i] = next;
                }
            }
        }
        if !norm(&u).is_finite() || norm(&u) > 1e12 {
            return Err(infeasible("separator norm diverged".into()));
        }
        if let Some(sol) = polish(&uniq, &alpha) {
            if sol.kkt.satisfied(KKT_TOL) {
                return Ok(sol);
            }
        }
        let kkt = kkt_report(&uniq, &u, &alpha);
        if kkt.satisfied(KKT_TOL) {
            return Ok(MaxMarginSolution {
                separator: u,
                multipliers: alpha,
                kkt,
            });
        }
    }
    Err(infeasible(format!(
        "dual ascent did not reach the KKT tolerance (current norm {})",
        norm(&u)
    )))
}

/// Solves the equality system on the current active set exactly.
fn polish(phis: &[Vec<f64>], alpha: &[f64]) -> Option<MaxMarginSolution> {
    let active: Vec<usize> = (0..phis.len()).filter(|&i| alpha[i] > 0.0).collect();
    if active.is_empty() {
        return None;
    }
    let dim = phis[0].len();
    let a = DMatrix::from_fn(active.len(), dim, |r, c| phis[active[r]][c]);
    let ones = DVector::from_element(active.len(), 1.0);
    // minimum-norm u satisfying the active constraints with equality
    let u = a.clone().svd(true, true).solve(&ones, 1e-13).ok()?;
    let gram = &a * a.transpose();
    let beta = gram.svd(true, true).solve(&ones, 1e-13).ok()?;
    let mut full = vec![0.0; phis.len()];
    for (k, &i) in active.iter().enumerate() {
        full[i] = beta[k];
    }
    let u: Vec<f64> = u.iter().copied().collect();
    let kkt = kkt_report(phis, &u, &full);
    Some(MaxMarginSolution {
        separator: u,
        multipliers: full,
        kkt,
    })
}

fn kkt_report(phis: &[Vec<f64>], u: &[f64], alpha: &[f64]) -> KktReport {
    let mut recon = vec![0.0; u.len()];
    let mut slack = 0.0;
    let mut min_margin = f64::INFINITY;
    for (p, &a) in phis.iter().zip(alpha) {
        let m = dot(u, p);
        min_margin = min_margin.min(m);
        slack += a * (m - 1.0).abs();
        axpy(&mut recon, a, p);
    }
    let stationarity = norm(&crate::linalg::sub(u, &recon)) / norm(u).max(1.0);
    KktReport {
        min_margin,
        complementary_slackness: slack,
        stationarity,
        min_multiplier: alpha.iter().copied().fold(f64::INFINITY, f64::min),
    }
}
