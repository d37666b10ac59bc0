//! Preference triples and their JSONL form.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{LabError, Result};
use crate::seqmodel::TokenSeq;

/// One `(prompt, chosen, rejected)` triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceExample {
    pub prompt: TokenSeq,
    pub chosen: TokenSeq,
    pub rejected: TokenSeq,
    #[serde(default)]
    pub meta: Map<String, Value>,
}

impl PreferenceExample {
    pub fn new(prompt: TokenSeq, chosen: TokenSeq, rejected: TokenSeq) -> Result<Self> {
        let ex = PreferenceExample {
            prompt,
            chosen,
            rejected,
            meta: Map::new(),
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.chosen.is_empty() || self.rejected.is_empty() {
            return Err(LabError::Input("chosen and rejected must be non-empty".into()));
        }
        if self.chosen == self.rejected {
            return Err(LabError::Input("chosen and rejected must differ".into()));
        }
        Ok(())
    }

    pub fn is_single_token(&self) -> bool {
        self.chosen.len() == 1 && self.rejected.len() == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub name: String,
    pub seed: Option<u64>,
    pub examples: Vec<PreferenceExample>,
}

impl PreferenceDataset {
    pub fn new(name: impl Into<String>, examples: Vec<PreferenceExample>) -> Self {
        PreferenceDataset {
            name: name.into(),
            seed: None,
            examples,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn require_non_empty(&self) -> Result<()> {
        if self.examples.is_empty() {
            Err(LabError::Input(format!("dataset `{}` is empty", self.name)))
        } else {
            Ok(())
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        for ex in &self.examples {
            ex.validate()?;
            ex.prompt.validate(vocab_size)?;
            ex.chosen.validate(vocab_size)?;
            ex.rejected.validate(vocab_size)?;
        }
        Ok(())
    }

    pub fn is_single_token(&self) -> bool {
        self.examples.iter().all(PreferenceExample::is_single_token)
    }

    /// Every token appearing as (part of) a chosen or rejected response.
    pub fn response_tokens(&self) -> std::collections::BTreeSet<u32> {
        self.examples
            .iter()
            .flat_map(|e| e.chosen.tokens().iter().chain(e.rejected.tokens()))
            .copied()
            .collect()
    }

    /// One JSON object per line, LF-terminated, fields in the order
    /// `prompt, chosen, rejected, meta`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(ex).expect("example serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut examples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ex: PreferenceExample = serde_json::from_str(line)
                .map_err(|e| LabError::Input(format!("line {}: {e}", i + 1)))?;
            ex.validate()
                .map_err(|e| LabError::Input(format!("line {}: {e}", i + 1)))?;
            examples.push(ex);
        }
        Ok(PreferenceDataset::new(name, examples))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_jsonl(name, &text)
    }
}
