//! Token sequences, fixed hidden representations, and the softmax policy
//! `π(·|prefix) = softmax(U h_prefix)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg::{dot, log_sum_exp, CompensatedSum, Matrix};

pub type TokenId = u32;

/// Structural tokens used by the tasks and the generative verifier template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservedToken {
    Separator,
    EdgeSeparator,
    Yes,
    No,
    VerticesLabel,
    EdgesLabel,
    Newline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
    reserved: BTreeMap<ReservedToken, TokenId>,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        Self::with_reserved(size, BTreeMap::new())
    }

    pub fn with_reserved(size: usize, reserved: BTreeMap<ReservedToken, TokenId>) -> Result<Self> {
        if size < 2 {
            return Err(LabError::Input(format!("vocabulary size must be >= 2, got {size}")));
        }
        let mut seen = std::collections::HashSet::new();
        for (name, &id) in &reserved {
            if id as usize >= size {
                return Err(LabError::Input(format!(
                    "reserved token {name:?} = {id} outside vocabulary of size {size}"
                )));
            }
            if !seen.insert(id) {
                return Err(LabError::Input(format!("reserved token id {id} used twice")));
            }
        }
        Ok(Vocabulary { size, reserved })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn reserved(&self, which: ReservedToken) -> Option<TokenId> {
        self.reserved.get(&which).copied()
    }

    pub fn require(&self, which: ReservedToken) -> Result<TokenId> {
        self.reserved(which)
            .ok_or_else(|| LabError::Input(format!("vocabulary has no {which:?} token")))
    }

    pub fn reserved_tokens(&self) -> &BTreeMap<ReservedToken, TokenId> {
        &self.reserved
    }
}

/// A finite token sequence. Empty sequences are allowed (they act as prefixes).
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<TokenId>);

impl TokenSeq {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        TokenSeq(tokens)
    }

    pub fn empty() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn single(t: TokenId) -> Self {
        TokenSeq(vec![t])
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, t: TokenId) {
        self.0.push(t);
    }

    /// `self ∥ other[..k]`
    pub fn concat_prefix(&self, other: &TokenSeq, k: usize) -> TokenSeq {
        let mut v = Vec::with_capacity(self.0.len() + k);
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0[..k]);
        TokenSeq(v)
    }

    pub fn concat(&self, other: &TokenSeq) -> TokenSeq {
        self.concat_prefix(other, other.len())
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self.0.iter().find(|&&t| t as usize >= vocab_size) {
            Some(t) => Err(LabError::Input(format!(
                "token id {t} outside vocabulary of size {vocab_size}"
            ))),
            None => Ok(()),
        }
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(v: Vec<TokenId>) -> Self {
        TokenSeq(v)
    }
}

impl From<&[TokenId]> for TokenSeq {
    fn from(v: &[TokenId]) -> Self {
        TokenSeq(v.to_vec())
    }
}

pub type RepresentationHook = Arc<dyn Fn(&TokenSeq) -> Vec<f64> + Send + Sync>;

/// Where the fixed representations come from.
#[derive(Clone)]
pub enum RepresentationSource {
    /// Hand-built prefix → vector table; unknown prefixes are an input error.
    ExplicitTable(HashMap<TokenSeq, Vec<f64>>),
    /// Unit-norm Gaussian directions keyed by (seed, prefix).
    SeededRandom { seed: u64 },
    /// Arbitrary user function; must be deterministic.
    Composed(RepresentationHook),
}

impl fmt::Debug for RepresentationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepresentationSource::ExplicitTable(t) => {
                write!(f, "ExplicitTable({} prefixes)", t.len())
            }
            RepresentationSource::SeededRandom { seed } => write!(f, "SeededRandom({seed})"),
            RepresentationSource::Composed(_) => write!(f, "Composed(<fn>)"),
        }
    }
}

/// Deterministic map from a token prefix to a `dim`-dimensional vector.
#[derive(Debug, Clone)]
pub struct RepresentationProvider {
    dim: usize,
    vocab_size: usize,
    source: RepresentationSource,
}

impl RepresentationProvider {
    pub fn new(vocab_size: usize, dim: usize, source: RepresentationSource) -> Result<Self> {
        if dim == 0 {
            return Err(LabError::Input("representation dimension must be positive".into()));
        }
        if let RepresentationSource::ExplicitTable(table) = &source {
            for (prefix, v) in table {
                prefix.validate(vocab_size)?;
                check_vector(v, dim, prefix)?;
            }
        }
        Ok(RepresentationProvider {
            dim,
            vocab_size,
            source,
        })
    }

    pub fn seeded(vocab_size: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::new(vocab_size, dim, RepresentationSource::SeededRandom { seed })
    }

    pub fn table(
        vocab_size: usize,
        dim: usize,
        table: HashMap<TokenSeq, Vec<f64>>,
    ) -> Result<Self> {
        Self::new(vocab_size, dim, RepresentationSource::ExplicitTable(table))
    }

    pub fn composed(vocab_size: usize, dim: usize, hook: RepresentationHook) -> Result<Self> {
        Self::new(vocab_size, dim, RepresentationSource::Composed(hook))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn source(&self) -> &RepresentationSource {
        &self.source
    }

    /// `h_prefix`. Repeated calls return bit-identical vectors.
    pub fn representation(&self, prefix: &TokenSeq) -> Result<Vec<f64>> {
        prefix.validate(self.vocab_size)?;
        match &self.source {
            RepresentationSource::ExplicitTable(table) => table.get(prefix).cloned().ok_or_else(|| {
                LabError::Input(format!("no representation for prefix {:?}", prefix.tokens()))
            }),
            RepresentationSource::SeededRandom { seed } => {
                Ok(seeded_unit_vector(*seed, prefix.tokens(), self.dim))
            }
            RepresentationSource::Composed(hook) => {
                let v = hook(prefix);
                check_vector(&v, self.dim, prefix)?;
                Ok(v)
            }
        }
    }

    /// Whether two providers are guaranteed to return the same vectors.
    pub fn same_as(&self, other: &RepresentationProvider) -> bool {
        if self.dim != other.dim || self.vocab_size != other.vocab_size {
            return false;
        }
        match (&self.source, &other.source) {
            (RepresentationSource::ExplicitTable(a), RepresentationSource::ExplicitTable(b)) => {
                a == b
            }
            (
                RepresentationSource::SeededRandom { seed: a },
                RepresentationSource::SeededRandom { seed: b },
            ) => a == b,
            (RepresentationSource::Composed(a), RepresentationSource::Composed(b)) => {
                Arc::ptr_eq(a, b)
            }
            _ => false,
        }
    }
}

fn check_vector(v: &[f64], dim: usize, prefix: &TokenSeq) -> Result<()> {
    if v.len() != dim {
        return Err(LabError::Input(format!(
            "representation for {:?} has {} entries, expected {dim}",
            prefix.tokens(),
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(LabError::Numeric(format!(
            "non-finite representation for {:?}",
            prefix.tokens()
        )));
    }
    Ok(())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit key for `(seed, tokens)`; independent of platform and process.
pub(crate) fn prefix_key(seed: u64, tokens: &[TokenId]) -> u64 {
    let mut h = splitmix64(seed ^ 0x005E_ED0F_BEEF);
    h = splitmix64(h ^ tokens.len() as u64);
    for &t in tokens {
        h = splitmix64(h ^ (t as u64).wrapping_mul(0x100_0000_01B3));
    }
    h
}

/// Derives an independent stream seed from a base seed and a path of labels.
pub fn sub_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |h, &p| splitmix64(h ^ splitmix64(p)))
}

fn seeded_unit_vector(seed: u64, tokens: &[TokenId], dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(prefix_key(seed, tokens));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut n = CompensatedSum::new();
        for x in &v {
            n.add(x * x);
        }
        let n = n.value().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let mut s = CompensatedSum::new();
    for &e in &exps {
        s.add(e);
    }
    let s = s.value();
    exps.into_iter().map(|e| e / s).collect()
}

/// Softmax policy over a fixed representation provider.
#[derive(Debug, Clone)]
pub struct PolicyState {
    unembedding: Matrix,
    reps: Arc<RepresentationProvider>,
}

impl PolicyState {
    pub fn new(unembedding: Matrix, reps: Arc<RepresentationProvider>) -> Result<Self> {
        if unembedding.rows() != reps.vocab_size() {
            return Err(LabError::Input(format!(
                "unembedding has {} rows, vocabulary has {} tokens",
                unembedding.rows(),
                reps.vocab_size()
            )));
        }
        if unembedding.cols() != reps.dim() {
            return Err(LabError::Input(format!(
                "unembedding has {} columns, representations have dimension {}",
                unembedding.cols(),
                reps.dim()
            )));
        }
        if !unembedding.is_finite() {
            return Err(LabError::Numeric("unembedding has non-finite entries".into()));
        }
        Ok(PolicyState { unembedding, reps })
    }

    /// All-zero unembedding, i.e. the uniform next-token model.
    pub fn uniform(reps: Arc<RepresentationProvider>) -> Self {
        let u = Matrix::zeros(reps.vocab_size(), reps.dim());
        PolicyState { unembedding: u, reps }
    }

    /// Gaussian initialization with standard deviation `scale`.
    pub fn random<R: Rng + ?Sized>(
        reps: Arc<RepresentationProvider>,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let (v, d) = (reps.vocab_size(), reps.dim());
        let data = (0..v * d)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        PolicyState {
            unembedding: Matrix::from_vec(v, d, data),
            reps,
        }
    }

    pub fn unembedding(&self) -> &Matrix {
        &self.unembedding
    }

    /// Replaces the unembedding, keeping the representation provider.
    pub fn with_unembedding(&self, unembedding: Matrix) -> Result<Self> {
        PolicyState::new(unembedding, Arc::clone(&self.reps))
    }

    pub(crate) fn unembedding_mut(&mut self) -> &mut Matrix {
        &mut self.unembedding
    }

    pub fn reps(&self) -> &Arc<RepresentationProvider> {
        &self.reps
    }

    pub fn vocab_size(&self) -> usize {
        self.unembedding.rows()
    }

    pub fn dim(&self) -> usize {
        self.unembedding.cols()
    }

    pub fn logits_for(&self, h: &[f64]) -> Vec<f64> {
        self.unembedding.mul_vec(h)
    }

    /// Next-token distribution for a given hidden representation.
    pub fn distribution_for(&self, h: &[f64]) -> Result<Vec<f64>> {
        let logits = self.logits_for(h);
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(LabError::Numeric("non-finite logits".into()));
        }
        Ok(softmax(&logits))
    }

    pub fn next_token_distribution(&self, prefix: &TokenSeq) -> Result<Vec<f64>> {
        let h = self.reps.representation(prefix)?;
        self.distribution_for(&h)
    }

    /// `ln π(token | h)` via log-sum-exp.
    pub fn token_log_prob_for(&self, h: &[f64], token: TokenId) -> Result<f64> {
        let logits = self.logits_for(h);
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(LabError::Numeric("non-finite logits".into()));
        }
        Ok(logits[token as usize] - log_sum_exp(&logits))
    }

    /// `Σ_k ln π(y_k | x, y_<k)`.
    pub fn sequence_log_prob(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        prompt.validate(self.vocab_size())?;
        response.validate(self.vocab_size())?;
        let mut prefix = prompt.clone();
        let mut total = CompensatedSum::new();
        for &t in response.tokens() {
            let h = self.reps.representation(&prefix)?;
            total.add(self.token_log_prob_for(&h, t)?);
            prefix.push(t);
        }
        Ok(total.value())
    }

    /// Ancestral sampling at temperature 1.
    pub fn sample_response<R: Rng + ?Sized>(
        &self,
        prompt: &TokenSeq,
        max_len: usize,
        stop_token: Option<TokenId>,
        rng: &mut R,
    ) -> Result<TokenSeq> {
        if max_len == 0 {
            return Err(LabError::Input("max_len must be at least 1".into()));
        }
        let mut prefix = prompt.clone();
        let mut out = TokenSeq::empty();
        for _ in 0..max_len {
            let p = self.next_token_distribution(&prefix)?;
            let t = sample_index(&p, rng) as TokenId;
            out.push(t);
            if Some(t) == stop_token {
                break;
            }
            prefix.push(t);
        }
        Ok(out)
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative sum
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Inner product used for logits; exposed for callers that precompute.
pub fn logit(unembedding: &Matrix, token: TokenId, h: &[f64]) -> f64 {
    dot(unembedding.row(token as usize), h)
}
