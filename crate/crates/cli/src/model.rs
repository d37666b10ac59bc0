//! On-disk form of representations and trained scorers.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use rewardlab::linalg::Matrix;
use rewardlab::seqmodel::RepresentationSource;
use rewardlab::{
    GrmTemplate, LinearHead, Params, PolicyState, RepresentationProvider, RewardScorer, ScorerKind, TokenSeq,
};

use crate::failure::{config, require_file};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RepSpec {
    Seeded { dim: usize, seed: u64 },
    Table { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepEntry {
    pub prefix: Vec<u32>,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepTable {
    pub vocab_size: usize,
    pub dim: usize,
    pub entries: Vec<RepEntry>,
}

impl RepTable {
    /// Entries sorted by prefix so the file bytes do not depend on hash order.
    pub fn from_provider(reps: &RepresentationProvider) -> Result<Self> {
        let RepresentationSource::ExplicitTable(table) = reps.source() else {
            anyhow::bail!("only table representations can be exported");
        };
        let sorted: BTreeMap<&[u32], &Vec<f64>> = table.iter().map(|(k, v)| (k.tokens(), v)).collect();
        Ok(RepTable {
            vocab_size: reps.vocab_size(),
            dim: reps.dim(),
            entries: sorted
                .into_iter()
                .map(|(p, v)| RepEntry {
                    prefix: p.to_vec(),
                    vector: v.clone(),
                })
                .collect(),
        })
    }
}

pub fn build_reps(spec: &RepSpec, vocab_size: usize) -> Result<Arc<RepresentationProvider>> {
    let reps = match spec {
        RepSpec::Seeded { dim, seed } => RepresentationProvider::seeded(vocab_size, *dim, *seed)?,
        RepSpec::Table { path } => {
            require_file(path)?;
            let text = fs::read_to_string(path)?;
            let table: RepTable =
                serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
            let map: HashMap<TokenSeq, Vec<f64>> =
                table.entries.into_iter().map(|e| (TokenSeq::new(e.prefix), e.vector)).collect();
            RepresentationProvider::table(vocab_size.max(table.vocab_size), table.dim, map)?
        }
    };
    Ok(Arc::new(reps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictTokens {
    pub separator: u32,
    pub yes: u32,
    pub no: u32,
}

impl VerdictTokens {
    pub fn template(&self) -> Result<GrmTemplate> {
        Ok(GrmTemplate::separated(self.separator, self.yes, self.no)?)
    }
}

/// A trained scorer with everything needed to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub variant: ScorerKind,
    pub vocab_size: usize,
    pub representations: RepSpec,
    pub beta: f64,
    pub params: Params,
    /// reference unembedding of an implicit reward
    pub reference: Option<Params>,
    pub verdict: Option<VerdictTokens>,
    pub seed: u64,
}

fn unembedding(p: &Params) -> Result<Matrix> {
    match p {
        Params::Unembedding(m) => Ok(m.clone()),
        Params::Head(_) => Err(config("model parameters do not match the variant")),
    }
}

impl ModelFile {
    pub fn read(path: &Path) -> Result<Self> {
        require_file(path)?;
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).with_context(|| format!("reading model {}", path.display()))
    }

    pub fn from_scorer(
        scorer: &RewardScorer,
        representations: RepSpec,
        verdict: Option<VerdictTokens>,
        seed: u64,
    ) -> Self {
        let reference = match scorer {
            RewardScorer::Im { reference, .. } => Some(Params::Unembedding(reference.unembedding().clone())),
            _ => None,
        };
        ModelFile {
            variant: scorer.kind(),
            vocab_size: scorer.vocab_size(),
            representations,
            beta: scorer.beta().unwrap_or(1.0),
            params: scorer.params(),
            reference,
            verdict,
            seed,
        }
    }

    pub fn scorer(&self) -> Result<RewardScorer> {
        let reps = build_reps(&self.representations, self.vocab_size)?;
        let policy = || -> Result<PolicyState> { Ok(PolicyState::new(unembedding(&self.params)?, reps.clone())?) };
        let head = || -> Result<LinearHead> {
            match &self.params {
                Params::Head(h) => Ok(LinearHead::new(h.clone())?),
                Params::Unembedding(_) => Err(config("model parameters do not match the variant")),
            }
        };
        Ok(match self.variant {
            ScorerKind::Ex => RewardScorer::ex(head()?, reps.clone())?,
            ScorerKind::ExAllRepr => RewardScorer::ex_all_repr(head()?, reps.clone())?,
            ScorerKind::Im => {
                let reference = self
                    .reference
                    .as_ref()
                    .ok_or_else(|| config("implicit reward model lacks its reference"))?;
                let reference = PolicyState::new(unembedding(reference)?, reps.clone())?;
                RewardScorer::im(policy()?, reference, self.beta)?
            }
            ScorerKind::ImNoRef => RewardScorer::im_no_ref(policy()?),
            ScorerKind::ExGrm => {
                let v = self.verdict.ok_or_else(|| config("verifier model lacks its verdict tokens"))?;
                RewardScorer::ex_grm(policy()?, v.template()?)?
            }
        })
    }
}
