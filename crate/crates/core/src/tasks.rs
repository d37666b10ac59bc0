//! Synthetic preference tasks.
//!
//! The Hamiltonian-cycle task asks for a vertex ordering that closes into a
//! cycle of a random graph with one planted cycle. Vertex ids are atomic
//! tokens. The token-shift task pairs every training response token with a
//! paraphrase token whose representation is a controlled rotation of the
//! original one.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{PreferenceDataset, PreferenceExample};
use crate::error::{LabError, Result};
use crate::linalg::{dot, norm};
use crate::seqmodel::{sub_seed, RepresentationProvider, ReservedToken, TokenId, TokenSeq, Vocabulary};
use crate::training::{check_realizability, RealizabilityMode};

/// Undirected simple graph on vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(LabError::Input(format!("self-loop at vertex {a}")));
            }
            if a >= n || b >= n {
                return Err(LabError::Input(format!("edge ({a}, {b}) outside 0..{n}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Graph { n, edges: set })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.n * (self.n.saturating_sub(1)) / 2
    }

    /// `n` on the first line, then one `a b` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for (a, b) in &self.edges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| LabError::Input("empty edge list".into()))?
            .trim()
            .parse()
            .map_err(|e| LabError::Input(format!("bad vertex count: {e}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| LabError::Input(format!("bad edge line {line:?}: {e}")))
            };
            if parts.len() != 2 {
                return Err(LabError::Input(format!("bad edge line {line:?}")));
            }
            edges.push((parse(parts[0])?, parse(parts[1])?));
        }
        Graph::new(n, edges)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedGraph {
    pub graph: Graph,
    pub planted_cycle: Vec<usize>,
}

/// Plants a uniformly random Hamiltonian cycle, then adds every remaining
/// vertex pair independently with probability `p`.
pub fn generate_ham_graph<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<PlantedGraph> {
    if n < 3 {
        return Err(LabError::config("n", format!("need at least 3 vertices, got {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(LabError::config("p", format!("edge probability must lie in [0, 1], got {p}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut edges: BTreeSet<(usize, usize)> = (0..n)
        .map(|i| {
            let (a, b) = (perm[i], perm[(i + 1) % n]);
            (a.min(b), a.max(b))
        })
        .collect();
    for a in 0..n {
        for b in a + 1..n {
            // one draw per pair keeps the stream aligned across p values
            let keep = rng.random::<f64>() < p;
            if keep {
                edges.insert((a, b));
            }
        }
    }
    Ok(PlantedGraph {
        graph: Graph { n, edges },
        planted_cycle: perm,
    })
}

pub fn is_hamiltonian_cycle(graph: &Graph, perm: &[usize]) -> bool {
    let n = graph.n();
    if perm.len() != n || n < 3 {
        return false;
    }
    let mut seen = vec![false; n];
    for &v in perm {
        if v >= n || seen[v] {
            return false;
        }
        seen[v] = true;
    }
    (0..n).all(|i| graph.has_edge(perm[i], perm[(i + 1) % n]))
}

/// Uniformly random ordering that is not a Hamiltonian cycle. After
/// `max_tries` rejections, takes the first missing edge `(a, b)` and moves `b`
/// directly after `a` in `fallback`, which cannot be a cycle.
pub fn negative_permutation<R: Rng + ?Sized>(
    graph: &Graph,
    fallback: &[usize],
    rng: &mut R,
    max_tries: usize,
) -> Result<Vec<usize>> {
    let n = graph.n();
    let missing = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .find(|&(a, b)| !graph.has_edge(a, b));
    let Some((a, b)) = missing else {
        return Err(LabError::Task(format!(
            "every ordering of the complete graph on {n} vertices is a Hamiltonian cycle"
        )));
    };
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..max_tries {
        perm.shuffle(rng);
        if !is_hamiltonian_cycle(graph, &perm) {
            return Ok(perm);
        }
    }
    let mut cand: Vec<usize> = fallback.iter().copied().filter(|&v| v != b).collect();
    let at = cand
        .iter()
        .position(|&v| v == a)
        .ok_or_else(|| LabError::Task("fallback ordering does not cover every vertex".into()))?;
    cand.insert(at + 1, b);
    Ok(cand)
}

/// Number of vertex orderings that form a Hamiltonian cycle, by brute force.
pub fn count_cycle_orderings(graph: &Graph) -> u64 {
    let n = graph.n();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut count = 0;
    for_each_permutation(&mut perm, 0, &mut |p| {
        if is_hamiltonian_cycle(graph, p) {
            count += 1;
        }
    });
    count
}

/// Visits every ordering of `items[start..]`, in lexicographic order when
/// that slice starts sorted.
pub fn for_each_permutation(items: &mut [usize], start: usize, f: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        f(items);
        return;
    }
    for i in start..items.len() {
        items[start..=i].rotate_right(1);
        for_each_permutation(items, start + 1, f);
        items[start..=i].rotate_left(1);
    }
}

/// Token layout of the Hamiltonian task: vertex `v` is token `v`, followed by
/// the structural tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HamVocab {
    pub max_vertices: usize,
    pub vocab: Vocabulary,
}

impl HamVocab {
    pub fn new(max_vertices: usize) -> Result<Self> {
        let base = max_vertices as TokenId;
        let order = [
            ReservedToken::Separator,
            ReservedToken::EdgeSeparator,
            ReservedToken::VerticesLabel,
            ReservedToken::EdgesLabel,
            ReservedToken::Newline,
            ReservedToken::Yes,
            ReservedToken::No,
        ];
        let reserved: BTreeMap<ReservedToken, TokenId> =
            order.iter().enumerate().map(|(i, r)| (*r, base + i as TokenId)).collect();
        Ok(HamVocab {
            max_vertices,
            vocab: Vocabulary::with_reserved(max_vertices + order.len(), reserved)?,
        })
    }

    pub fn size(&self) -> usize {
        self.vocab.size()
    }

    pub fn token(&self, which: ReservedToken) -> TokenId {
        self.vocab.reserved(which).expect("layout reserves every structural token")
    }
}

/// `[Vertices] ([sep] v)… [newline] [Edges] ([sep] a [edge_sep] b)…` with
/// edges in ascending order.
pub fn encode_ham_prompt(graph: &Graph, vocab: &HamVocab) -> Result<TokenSeq> {
    if graph.n() > vocab.max_vertices {
        return Err(LabError::config(
            "n",
            format!("{} vertices exceed the vocabulary budget of {}", graph.n(), vocab.max_vertices),
        ));
    }
    let sep = vocab.token(ReservedToken::Separator);
    let esep = vocab.token(ReservedToken::EdgeSeparator);
    let mut t = vec![vocab.token(ReservedToken::VerticesLabel)];
    for v in 0..graph.n() {
        t.extend([sep, v as TokenId]);
    }
    t.push(vocab.token(ReservedToken::Newline));
    t.push(vocab.token(ReservedToken::EdgesLabel));
    for (a, b) in graph.edges() {
        t.extend([sep, a as TokenId, esep, b as TokenId]);
    }
    Ok(TokenSeq::new(t))
}

/// `v₀ [sep] v₁ [sep] …` with a trailing separator.
pub fn encode_permutation(perm: &[usize], vocab: &HamVocab) -> Result<TokenSeq> {
    let sep = vocab.token(ReservedToken::Separator);
    let mut t = Vec::with_capacity(2 * perm.len());
    for &v in perm {
        if v >= vocab.max_vertices {
            return Err(LabError::config("n", format!("vertex {v} exceeds the vocabulary budget")));
        }
        t.extend([v as TokenId, sep]);
    }
    Ok(TokenSeq::new(t))
}

/// Inverse of [`encode_permutation`]; `None` when the tokens do not alternate
/// vertex and separator.
pub fn decode_permutation(seq: &TokenSeq, vocab: &HamVocab) -> Option<Vec<usize>> {
    let sep = vocab.token(ReservedToken::Separator);
    let t = seq.tokens();
    if !t.len().is_multiple_of(2) {
        return None;
    }
    t.chunks(2)
        .map(|c| ((c[0] as usize) < vocab.max_vertices && c[1] == sep).then_some(c[0] as usize))
        .collect()
}

pub fn decode_ham_prompt(prompt: &TokenSeq, vocab: &HamVocab) -> Result<Graph> {
    let bad = || LabError::Input("prompt does not follow the graph layout".into());
    let sep = vocab.token(ReservedToken::Separator);
    let esep = vocab.token(ReservedToken::EdgeSeparator);
    let t = prompt.tokens();
    if t.first() != Some(&vocab.token(ReservedToken::VerticesLabel)) {
        return Err(bad());
    }
    let mut i = 1;
    let mut n = 0;
    while i + 1 < t.len() && t[i] == sep {
        if t[i + 1] as usize != n {
            return Err(bad());
        }
        n += 1;
        i += 2;
    }
    if t.get(i) != Some(&vocab.token(ReservedToken::Newline))
        || t.get(i + 1) != Some(&vocab.token(ReservedToken::EdgesLabel))
    {
        return Err(bad());
    }
    let rest = &t[i + 2..];
    if !rest.len().is_multiple_of(4) {
        return Err(bad());
    }
    let mut edges = Vec::new();
    for c in rest.chunks(4) {
        if c[0] != sep || c[2] != esep {
            return Err(bad());
        }
        edges.push((c[1] as usize, c[3] as usize));
    }
    Graph::new(n, edges)
}

pub fn encode_ham_example(
    graph: &Graph,
    positive: &[usize],
    negative: &[usize],
    vocab: &HamVocab,
) -> Result<PreferenceExample> {
    PreferenceExample::new(
        encode_ham_prompt(graph, vocab)?,
        encode_permutation(positive, vocab)?,
        encode_permutation(negative, vocab)?,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HamTaskConfig {
    pub n: usize,
    pub p: f64,
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
    pub max_tries: usize,
}

impl Default for HamTaskConfig {
    fn default() -> Self {
        HamTaskConfig {
            n: 10,
            p: 0.2,
            train_count: 200,
            test_count: 50,
            seed: 0,
            max_tries: 100,
        }
    }
}

impl HamTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(LabError::config("n", "need at least 3 vertices"));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(LabError::config("p", format!("must lie in [0, 1], got {}", self.p)));
        }
        if self.max_tries == 0 {
            return Err(LabError::config("max_tries", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HamDataset {
    pub vocab: HamVocab,
    pub train: PreferenceDataset,
    pub test: PreferenceDataset,
    pub train_graphs: Vec<PlantedGraph>,
    pub test_graphs: Vec<PlantedGraph>,
}

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

/// Independent graphs per example, each from its own sub-seed of
/// `(seed, split, index)`.
pub fn make_ham_dataset(config: &HamTaskConfig) -> Result<HamDataset> {
    config.validate()?;
    let vocab = HamVocab::new(config.n)?;
    let split = |stream: u64, count: usize, name: &str| -> Result<(PreferenceDataset, Vec<PlantedGraph>)> {
        let mut examples = Vec::with_capacity(count);
        let mut graphs = Vec::with_capacity(count);
        for i in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, &[stream, i as u64]));
            let pg = generate_ham_graph(config.n, config.p, &mut rng)?;
            let neg = negative_permutation(&pg.graph, &pg.planted_cycle, &mut rng, config.max_tries)?;
            examples.push(
                encode_ham_example(&pg.graph, &pg.planted_cycle, &neg, &vocab)?
                    .with_meta("index", i as u64)
                    .with_meta("edges", pg.graph.edge_count() as u64),
            );
            graphs.push(pg);
        }
        Ok((PreferenceDataset::new(name, examples).with_seed(config.seed), graphs))
    };
    let (train, train_graphs) = split(TRAIN_STREAM, config.train_count, "ham_train")?;
    let (test, test_graphs) = split(TEST_STREAM, config.test_count, "ham_test")?;
    Ok(HamDataset {
        vocab,
        train,
        test,
        train_graphs,
        test_graphs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenShiftConfig {
    pub train_prompt_count: usize,
    pub test_prompt_count: usize,
    /// `(chosen, rejected)` token pairs seen in training
    pub original_token_pairs: Vec<(TokenId, TokenId)>,
    /// paraphrase of the original pair at the same index
    pub paraphrase_token_pairs: Vec<(TokenId, TokenId)>,
    pub representation_similarity: f64,
    /// prompts draw their tokens from `0..prompt_vocab`
    pub prompt_vocab: usize,
    pub prompt_len: usize,
    pub dim: usize,
    /// prompt-specific jitter added to each response token's anchor direction
    pub noise: f64,
    pub seed: u64,
    pub max_resamples: usize,
}

impl Default for TokenShiftConfig {
    fn default() -> Self {
        TokenShiftConfig {
            train_prompt_count: 40,
            test_prompt_count: 20,
            original_token_pairs: vec![(8, 9), (10, 11), (12, 13), (14, 15)],
            paraphrase_token_pairs: vec![(16, 17), (18, 19), (20, 21), (22, 23)],
            representation_similarity: 0.9,
            prompt_vocab: 8,
            prompt_len: 3,
            dim: 16,
            noise: 0.1,
            seed: 0,
            max_resamples: 20,
        }
    }
}

impl TokenShiftConfig {
    pub fn vocab_size(&self) -> usize {
        self.original_token_pairs
            .iter()
            .chain(&self.paraphrase_token_pairs)
            .flat_map(|&(a, b)| [a, b])
            .map(|t| t as usize + 1)
            .chain([self.prompt_vocab])
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.representation_similarity;
        if !(-1.0..=1.0).contains(&s) {
            return Err(LabError::config("representation_similarity", format!("must lie in [-1, 1], got {s}")));
        }
        if self.original_token_pairs.is_empty() {
            return Err(LabError::config("original_token_pairs", "need at least one pair"));
        }
        if self.original_token_pairs.len() != self.paraphrase_token_pairs.len() {
            return Err(LabError::config(
                "paraphrase_token_pairs",
                "need exactly one paraphrase pair per original pair",
            ));
        }
        let originals: HashSet<TokenId> =
            self.original_token_pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        let paraphrases: HashSet<TokenId> =
            self.paraphrase_token_pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        if originals.len() != 2 * self.original_token_pairs.len()
            || paraphrases.len() != 2 * self.paraphrase_token_pairs.len()
        {
            return Err(LabError::config("original_token_pairs", "response tokens must be distinct"));
        }
        if !originals.is_disjoint(&paraphrases) {
            return Err(LabError::config("paraphrase_token_pairs", "paraphrase tokens must not occur in training responses"));
        }
        if originals.iter().chain(&paraphrases).any(|&t| (t as usize) < self.prompt_vocab) {
            return Err(LabError::config("prompt_vocab", "prompt tokens overlap response tokens"));
        }
        if self.dim < 2 {
            return Err(LabError::config("dim", "need at least 2 dimensions"));
        }
        if self.prompt_len == 0 || self.prompt_vocab == 0 {
            return Err(LabError::config("prompt_len", "prompts must be non-empty"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(LabError::config("noise", "must be non-negative"));
        }
        let capacity = (self.prompt_vocab as f64).powi(self.prompt_len as i32);
        if capacity < (self.train_prompt_count + self.test_prompt_count) as f64 {
            return Err(LabError::config("prompt_len", "too few distinct prompts for the requested counts"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TokenShiftTask {
    pub train: PreferenceDataset,
    pub eval_original: PreferenceDataset,
    pub eval_paraphrased: PreferenceDataset,
    pub reps: Arc<RepresentationProvider>,
    /// sub-seed attempt that produced a realizable instance
    pub attempt: usize,
}

/// Response representations live in the first half of the coordinates
/// (anchor per token plus prompt jitter). A paraphrase gets
/// `s·h + √(1−s²)·q` with `q` a unit vector in the second half, so its inner
/// product with the original is exactly `s` and every linear head trained
/// from zero scores it as `s` times the original.
pub fn make_token_shift_task(config: &TokenShiftConfig) -> Result<TokenShiftTask> {
    config.validate()?;
    let mut last = String::new();
    for attempt in 0..=config.max_resamples {
        let task = build_token_shift(config, sub_seed(config.seed, &[attempt as u64]), attempt)?;
        let ex_ok = check_realizability(&task.train, &task.reps, RealizabilityMode::Ex)?;
        let im_ok = check_realizability(&task.train, &task.reps, RealizabilityMode::Im)?;
        if ex_ok.is_separable() && im_ok.is_separable() {
            return Ok(task);
        }
        last = format!("attempt {attempt}: ex {ex_ok:?}, im {im_ok:?}");
    }
    Err(LabError::Task(format!("no realizable instance within the resample budget ({last})")))
}

fn build_token_shift(config: &TokenShiftConfig, seed: u64, attempt: usize) -> Result<TokenShiftTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.dim;
    let half = d / 2;
    let gauss = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<f64> {
        let mut v = vec![0.0; d];
        for x in &mut v[lo..hi] {
            *x = rng.sample(StandardNormal);
        }
        let n = norm(&v);
        v.iter().map(|x| x / n).collect()
    };
    let mut anchors: HashMap<TokenId, Vec<f64>> = HashMap::new();
    for &(a, b) in &config.original_token_pairs {
        anchors.insert(a, gauss(&mut rng, 0, half));
        anchors.insert(b, gauss(&mut rng, 0, half));
    }
    let total = config.train_prompt_count + config.test_prompt_count;
    let mut seen = HashSet::new();
    let mut prompts = Vec::with_capacity(total);
    while prompts.len() < total {
        let p: Vec<TokenId> = (0..config.prompt_len)
            .map(|_| rng.random_range(0..config.prompt_vocab) as TokenId)
            .collect();
        if seen.insert(p.clone()) {
            prompts.push(TokenSeq::new(p));
        }
    }
    let s = config.representation_similarity;
    let c = (1.0 - s * s).max(0.0).sqrt();
    let mut table: HashMap<TokenSeq, Vec<f64>> = HashMap::new();
    let (mut train, mut eval_o, mut eval_p) = (Vec::new(), Vec::new(), Vec::new());
    for (i, prompt) in prompts.iter().enumerate() {
        table.insert(prompt.clone(), gauss(&mut rng, 0, d));
        let j = rng.random_range(0..config.original_token_pairs.len());
        let (oa, ob) = config.original_token_pairs[j];
        let (pa, pb) = config.paraphrase_token_pairs[j];
        for (orig, para) in [(oa, pa), (ob, pb)] {
            let jitter = gauss(&mut rng, 0, half);
            let raw: Vec<f64> = anchors[&orig]
                .iter()
                .zip(&jitter)
                .map(|(a, e)| a + config.noise * e)
                .collect();
            let n = norm(&raw);
            let h: Vec<f64> = raw.iter().map(|x| x / n).collect();
            let q = gauss(&mut rng, half, d);
            let hp: Vec<f64> = h.iter().zip(&q).map(|(x, y)| s * x + c * y).collect();
            table.insert(prompt.concat(&TokenSeq::single(orig)), h);
            table.insert(prompt.concat(&TokenSeq::single(para)), hp);
        }
        let orig = PreferenceExample::new(prompt.clone(), TokenSeq::single(oa), TokenSeq::single(ob))?
            .with_meta("pair", j as u64);
        let para = PreferenceExample::new(prompt.clone(), TokenSeq::single(pa), TokenSeq::single(pb))?
            .with_meta("pair", j as u64);
        if i < config.train_prompt_count {
            train.push(orig);
        } else {
            eval_o.push(orig);
            eval_p.push(para);
        }
    }
    let reps = Arc::new(RepresentationProvider::table(config.vocab_size(), d, table)?);
    debug_assert!(eval_p.iter().zip(&eval_o).all(|(p, o)| {
        let hp = reps.representation(&p.prompt.concat(&p.chosen)).unwrap();
        let ho = reps.representation(&o.prompt.concat(&o.chosen)).unwrap();
        (dot(&hp, &ho) - s).abs() < 1e-9
    }));
    Ok(TokenShiftTask {
        train: PreferenceDataset::new("token_shift_train", train).with_seed(config.seed),
        eval_original: PreferenceDataset::new("token_shift_eval_original", eval_o).with_seed(config.seed),
        eval_paraphrased: PreferenceDataset::new("token_shift_eval_paraphrased", eval_p)
            .with_seed(config.seed),
        reps,
        attempt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_cycles_and_paths() {
        let tri = Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert!(is_hamiltonian_cycle(&tri, &[0, 1, 2]));
        assert!(!is_hamiltonian_cycle(&tri, &[0, 1, 1]));
        let path = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
        assert!(!is_hamiltonian_cycle(&path, &[0, 1, 2]));
        assert!(Graph::new(3, [(1, 1)]).is_err());
    }

    #[test]
    fn triangle_prompt_length_and_round_trip() {
        let v = HamVocab::new(3).unwrap();
        let tri = Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let p = encode_ham_prompt(&tri, &v).unwrap();
        // label, 3 × (sep v), newline, label, 3 × (sep a esep b)
        assert_eq!(p.len(), 1 + 6 + 2 + 12);
        assert_eq!(decode_ham_prompt(&p, &v).unwrap(), tri);
        let r = encode_permutation(&[2, 0, 1], &v).unwrap();
        assert_eq!(decode_permutation(&r, &v), Some(vec![2, 0, 1]));
    }

    #[test]
    fn complete_graph_has_no_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = generate_ham_graph(3, 1.0, &mut rng).unwrap();
        assert!(g.graph.is_complete());
        assert!(matches!(
            negative_permutation(&g.graph, &g.planted_cycle, &mut rng, 10),
            Err(LabError::Task(_))
        ));
    }

    #[test]
    fn edge_list_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = generate_ham_graph(7, 0.3, &mut rng).unwrap().graph;
        assert_eq!(Graph::from_edge_list(&g.to_edge_list()).unwrap(), g);
    }
}
