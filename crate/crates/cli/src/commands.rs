use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rewardlab::dynamics::{dynamics_report, DynamicsQuery, DynamicsReport};
use rewardlab::metrics::{evaluate, win_rate_comparison, AccuracyTable, CellKey, EvalReport, TieRule, WinRate};
use rewardlab::seqmodel::sub_seed;
use rewardlab::tasks::{generate_ham_graph, make_ham_dataset, make_token_shift_task, HamTaskConfig, HamVocab, TokenShiftConfig};
use rewardlab::theory::{
    efficient_generator_check, generation_probability, run_unseen_token_experiment, verifier_report,
    EfficiencyTable, SequenceDistribution, Task, UnseenTokenConfig, UnseenTokenReport, VerifierReport,
    DEFAULT_ENUMERATION_CAP,
};
use rewardlab::training::{gd_train, smoothness_and_lr_bound, TrainConfig, TrainTrajectory};
use rewardlab::{
    LinearHead, PolicyState, PreferenceDataset, PreferenceExample, RepresentationProvider, RewardScorer, ScorerKind,
    TokenSeq,
};

use crate::config::{load, Loaded};
use crate::failure::{config, ensure_finite, require_file};
use crate::model::{build_reps, ModelFile, RepSpec, RepTable, VerdictTokens};
use crate::output::{Provenance, RunOutput};
use crate::{Common, Format};

fn open_run<T>(command: &str, common: &Common, loaded: &Loaded<T>) -> Result<RunOutput> {
    RunOutput::create(
        &common.out,
        Provenance {
            command: command.into(),
            config_sha256: loaded.sha256.clone(),
            seed: loaded.seed,
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )
}

fn read_dataset(path: &Path) -> Result<PreferenceDataset> {
    require_file(path)?;
    PreferenceDataset::read_jsonl(path).with_context(|| format!("reading dataset {}", path.display()))
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    manifest: &'a Provenance,
    #[serde(flatten)]
    body: T,
}

fn write_report<T: Serialize>(run: &mut RunOutput, name: &str, body: T) -> Result<()> {
    let report = Report {
        manifest: &run.provenance().clone(),
        body,
    };
    run.write_json(name, &report)
}

// ---------------------------------------------------------------- gen-task

#[derive(Debug, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
enum GenTaskConfig {
    Hamiltonian(HamTaskConfig),
    TokenShift(TokenShiftConfig),
}

pub fn gen_task(common: &Common) -> Result<RunOutput> {
    let loaded: Loaded<GenTaskConfig> = load(&common.config, common.seed, true)?;
    let mut run = open_run("gen-task", common, &loaded)?;
    match &loaded.config {
        GenTaskConfig::Hamiltonian(c) => {
            let data = make_ham_dataset(c)?;
            run.write("train.jsonl", data.train.to_jsonl().as_bytes())?;
            run.write("test.jsonl", data.test.to_jsonl().as_bytes())?;
            println!(
                "hamiltonian task: {} train, {} test, vocabulary {}",
                data.train.len(),
                data.test.len(),
                data.vocab.size()
            );
        }
        GenTaskConfig::TokenShift(c) => {
            let task = make_token_shift_task(c)?;
            run.write("train.jsonl", task.train.to_jsonl().as_bytes())?;
            run.write("eval_original.jsonl", task.eval_original.to_jsonl().as_bytes())?;
            run.write("eval_paraphrased.jsonl", task.eval_paraphrased.to_jsonl().as_bytes())?;
            run.write_json("representations.json", &RepTable::from_provider(&task.reps)?)?;
            println!("token-shift task: attempt {}, {} train examples", task.attempt, task.train.len());
        }
    }
    Ok(run)
}

// ---------------------------------------------------------------- train

fn default_lr_fraction() -> f64 {
    0.9
}
fn default_one() -> f64 {
    1.0
}
fn default_record_every() -> usize {
    1
}
fn default_init_scale() -> f64 {
    0.1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFileConfig {
    dataset: PathBuf,
    representations: RepSpec,
    variant: ScorerKind,
    steps: usize,
    #[serde(default)]
    vocab_size: Option<usize>,
    /// explicit step size; otherwise `lr_fraction` times the convergence bound
    #[serde(default)]
    learning_rate: Option<f64>,
    #[serde(default = "default_lr_fraction")]
    lr_fraction: f64,
    #[serde(default = "default_one")]
    beta: f64,
    #[serde(default = "default_record_every")]
    record_every: usize,
    #[serde(default = "default_init_scale")]
    init_scale: f64,
    #[serde(default)]
    verdict: Option<VerdictTokens>,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize)]
struct CurveRow {
    step: usize,
    loss: f64,
    train_accuracy: f64,
}

fn resolve_vocab(dataset: &PreferenceDataset, requested: Option<usize>, verdict: Option<VerdictTokens>) -> usize {
    let mut top = 0u32;
    for e in &dataset.examples {
        for t in e.prompt.tokens().iter().chain(e.chosen.tokens()).chain(e.rejected.tokens()) {
            top = top.max(*t);
        }
    }
    if let Some(v) = verdict {
        top = top.max(v.separator).max(v.yes).max(v.no);
    }
    (top as usize + 1).max(requested.unwrap_or(0))
}

fn initial_scorer(
    variant: ScorerKind,
    reps: std::sync::Arc<RepresentationProvider>,
    beta: f64,
    init_scale: f64,
    verdict: Option<VerdictTokens>,
    rng: &mut ChaCha8Rng,
) -> Result<RewardScorer> {
    let d = reps.dim();
    Ok(match variant {
        ScorerKind::Ex => RewardScorer::ex(LinearHead::zeros(d), reps)?,
        ScorerKind::ExAllRepr => RewardScorer::ex_all_repr(LinearHead::zeros(d), reps)?,
        ScorerKind::Im => RewardScorer::im_from_init(PolicyState::random(reps, init_scale, rng), beta)?,
        ScorerKind::ImNoRef => RewardScorer::im_no_ref(PolicyState::random(reps, init_scale, rng)),
        ScorerKind::ExGrm => {
            let v = verdict.ok_or_else(|| config("invalid config at `verdict`: required for ex_grm"))?;
            RewardScorer::ex_grm(PolicyState::random(reps, init_scale, rng), v.template()?)?
        }
    })
}

pub fn train(common: &Common) -> Result<RunOutput> {
    let loaded: Loaded<TrainFileConfig> = load(&common.config, common.seed, true)?;
    let c = &loaded.config;
    let dataset = read_dataset(&c.dataset)?;
    let vocab_size = resolve_vocab(&dataset, c.vocab_size, c.verdict);
    let reps = build_reps(&c.representations, vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let scorer = initial_scorer(c.variant, reps.clone(), c.beta, c.init_scale, c.verdict, &mut rng)?;

    let learning_rate = match (c.learning_rate, c.variant) {
        (Some(lr), _) => lr,
        (None, ScorerKind::ExGrm) => {
            return Err(config("invalid config at `learning_rate`: required for ex_grm, which has no bound"))
        }
        (None, _) => c.lr_fraction * smoothness_and_lr_bound(&dataset, &reps, c.beta)?.bound,
    };
    let train_config = TrainConfig {
        learning_rate,
        steps: c.steps,
        beta: c.beta,
        record_every: c.record_every,
        variant: c.variant,
        strict_lr: common.strict_lr,
        snapshot_params: false,
    };
    let trained = gd_train(&train_config, &dataset, scorer)?;
    let trajectory = &trained.trajectory;
    ensure_finite("training curve", trajectory.records.iter().map(|r| r.loss))?;
    for w in &trajectory.warnings {
        eprintln!("warning: {w}");
    }

    let mut run = open_run("train", common, &loaded)?;
    #[derive(Serialize)]
    struct TrainBody<'a> {
        trajectory: &'a TrainTrajectory,
    }
    write_report(&mut run, "trajectory.json", TrainBody { trajectory })?;
    let rows: Vec<CurveRow> = trajectory
        .records
        .iter()
        .map(|r| CurveRow {
            step: r.step,
            loss: r.loss,
            train_accuracy: r.train_accuracy,
        })
        .collect();
    run.write_csv("curves.csv", &rows)?;
    let model = ModelFile::from_scorer(&trained.scorer, c.representations.clone(), c.verdict, c.seed);
    run.write_json("model.json", &model)?;
    let last = trajectory.final_record();
    println!(
        "{} trained {} steps at lr {learning_rate}: loss {} accuracy {}",
        c.variant, c.steps, last.loss, last.train_accuracy
    );
    Ok(run)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    model: PathBuf,
    datasets: Vec<PathBuf>,
    /// cell label in the accuracy table. Two tables are compared cell by
    /// cell, so runs that should line up must share it.
    #[serde(default)]
    model_name: Option<String>,
    #[serde(default)]
    tie_epsilon: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EvalRow {
    model: String,
    dataset: String,
    seed: u64,
    accuracy: f64,
    n_examples: usize,
    n_ties: usize,
    normalized_margin_mean: f64,
    reward_stddev: f64,
    degenerate_margin: bool,
}

pub fn eval(common: &Common) -> Result<RunOutput> {
    let loaded: Loaded<EvalConfig> = load(&common.config, common.seed, false)?;
    let c = &loaded.config;
    if c.datasets.is_empty() {
        return Err(config("invalid config at `datasets`: need at least one dataset"));
    }
    let model = ModelFile::read(&c.model)?;
    let scorer = model.scorer()?;
    let name = c.model_name.clone().unwrap_or_else(|| "model".to_string());
    let rule = TieRule {
        tie_epsilon: c.tie_epsilon,
    };
    let mut rows = Vec::new();
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for path in &c.datasets {
        let ds = read_dataset(path)?;
        let r = evaluate(&scorer, &ds, rule)?;
        ensure_finite("evaluation", [r.accuracy, r.normalized_margin_mean, r.reward_stddev])?;
        rows.push(EvalRow {
            model: name.clone(),
            dataset: ds.name.clone(),
            seed: model.seed,
            accuracy: r.accuracy,
            n_examples: r.n_examples,
            n_ties: r.n_ties,
            normalized_margin_mean: r.normalized_margin_mean,
            reward_stddev: r.reward_stddev,
            degenerate_margin: r.degenerate_margin,
        });
        println!("{name} on {}: accuracy {}", ds.name, r.accuracy);
        reports.push((ds.name.clone(), r));
    }
    let mut run = open_run("eval", common, &loaded)?;
    match common.format {
        Format::Csv => run.write_csv("eval.csv", &rows)?,
        Format::Json => {
            #[derive(Serialize)]
            struct Entry<'a> {
                dataset: &'a str,
                report: &'a EvalReport,
            }
            #[derive(Serialize)]
            struct EvalBody<'a> {
                model: &'a str,
                results: Vec<Entry<'a>>,
            }
            let results = reports
                .iter()
                .map(|(d, r)| Entry { dataset: d, report: r })
                .collect();
            write_report(&mut run, "eval.json", EvalBody { model: &name, results })?;
        }
    }
    Ok(run)
}

// ---------------------------------------------------------------- dynamics-check

fn default_variants() -> Vec<ScorerKind> {
    vec![ScorerKind::Ex, ScorerKind::Im, ScorerKind::ExGrm]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DynamicsConfig {
    vocab_size: usize,
    dim: usize,
    beta: f64,
    init_scale: f64,
    instances: usize,
    etas: Vec<f64>,
    #[serde(default = "default_variants")]
    variants: Vec<ScorerKind>,
    prompt_len: usize,
    response_len: usize,
    seed: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            vocab_size: 8,
            dim: 4,
            beta: 1.0,
            init_scale: 1.0,
            instances: 20,
            etas: vec![1e-2, 5e-3],
            variants: default_variants(),
            prompt_len: 2,
            response_len: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize)]
struct DynamicsRow {
    instance: usize,
    variant: ScorerKind,
    eta: f64,
    predicted_delta: f64,
    actual_delta: f64,
    residual: f64,
}

/// Verdict tokens for generated instances; the rest of the vocabulary is free.
const DYNAMICS_VERDICT: VerdictTokens = VerdictTokens {
    separator: 0,
    yes: 1,
    no: 2,
};

fn random_seq(rng: &mut ChaCha8Rng, len: usize, v: usize) -> TokenSeq {
    TokenSeq::new((0..len).map(|_| rng.random_range(0..v as u32)).collect())
}

pub fn dynamics_check(common: &Common) -> Result<RunOutput> {
    let loaded: Loaded<DynamicsConfig> = load(&common.config, common.seed, true)?;
    let c = &loaded.config;
    if c.vocab_size < 3 {
        return Err(config("invalid config at `vocab_size`: need at least 3 tokens"));
    }
    if c.prompt_len == 0 || c.response_len == 0 {
        return Err(config("invalid config at `response_len`: lengths must be positive"));
    }
    let mut rows = Vec::new();
    let mut reports: Vec<(usize, DynamicsReport)> = Vec::new();
    for i in 0..c.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(loaded.seed, &[i as u64]));
        let reps = std::sync::Arc::new(RepresentationProvider::seeded(
            c.vocab_size,
            c.dim,
            sub_seed(loaded.seed, &[i as u64, 1]),
        )?);
        let chosen = random_seq(&mut rng, c.response_len, c.vocab_size);
        let mut rejected = random_seq(&mut rng, c.response_len, c.vocab_size);
        while rejected == chosen {
            rejected = random_seq(&mut rng, c.response_len, c.vocab_size);
        }
        let prompt = random_seq(&mut rng, c.prompt_len, c.vocab_size);
        let query = DynamicsQuery::new(
            PreferenceExample::new(prompt, chosen, rejected)?,
            random_seq(&mut rng, c.prompt_len, c.vocab_size),
            random_seq(&mut rng, c.response_len, c.vocab_size),
            0.0,
        )?;
        let head: Vec<f64> = (0..c.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let policy = PolicyState::random(reps.clone(), c.init_scale, &mut rng);
        let reference = PolicyState::random(reps.clone(), c.init_scale, &mut rng);
        for &variant in &c.variants {
            let scorer = match variant {
                ScorerKind::Ex => RewardScorer::ex(LinearHead::new(head.clone())?, reps.clone())?,
                ScorerKind::ExAllRepr => RewardScorer::ex_all_repr(LinearHead::new(head.clone())?, reps.clone())?,
                ScorerKind::Im => RewardScorer::im(policy.clone(), reference.clone(), c.beta)?,
                ScorerKind::ImNoRef => RewardScorer::im_no_ref(policy.clone()),
                ScorerKind::ExGrm => RewardScorer::ex_grm(policy.clone(), DYNAMICS_VERDICT.template()?)?,
            };
            for &eta in &c.etas {
                let r = dynamics_report(&scorer, &query.with_eta(eta))?;
                ensure_finite("dynamics report", [r.predicted_delta, r.actual_delta])?;
                rows.push(DynamicsRow {
                    instance: i,
                    variant,
                    eta,
                    predicted_delta: r.predicted_delta,
                    actual_delta: r.actual_delta,
                    residual: r.residual,
                });
                reports.push((i, r));
            }
        }
    }
    let worst = rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
    println!("{} dynamics reports, largest |residual| {worst:e}", rows.len());
    let mut run = open_run("dynamics-check", common, &loaded)?;
    match common.format {
        Format::Csv => run.write_csv("dynamics.csv", &rows)?,
        Format::Json => {
            #[derive(Serialize)]
            struct Entry<'a> {
                instance: usize,
                report: &'a DynamicsReport,
            }
            #[derive(Serialize)]
            struct DynamicsBody<'a> {
                reports: Vec<Entry<'a>>,
            }
            let reports = reports.iter().map(|(i, r)| Entry { instance: *i, report: r }).collect();
            write_report(&mut run, "dynamics.json", DynamicsBody { reports })?;
        }
    }
    Ok(run)
}

// ---------------------------------------------------------------- theorem1: verifier margin

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum VerifierTask {
    TwoResponseToy,
    /// graphs with a planted cycle; every ordering is enumerated
    Hamiltonian { n: usize, p: f64, graphs: usize },
}

fn default_k() -> f64 {
    2.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifierRunConfig {
    task: VerifierTask,
    #[serde(default = "default_one")]
    delta: f64,
    #[serde(default = "default_one")]
    beta: f64,
    /// polynomial degree and constant of the efficient-generation test
    #[serde(default = "default_k")]
    k: f64,
    #[serde(default = "default_one")]
    alpha: f64,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Serialize)]
struct VerifierRow {
    prompt_index: usize,
    prompt_len: usize,
    policy_probability: f64,
    reference_probability: f64,
    ratio: f64,
    normalizer: f64,
    bound: f64,
}

pub fn verifier(common: &Common) -> Result<RunOutput> {
    let loaded: Loaded<VerifierRunConfig> = load(&common.config, common.seed, true)?;
    let c = &loaded.config;
    let task = match c.task {
        VerifierTask::TwoResponseToy => Task::two_response_toy(),
        VerifierTask::Hamiltonian { n, p, graphs } => {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            let gs = (0..graphs)
                .map(|_| Ok(generate_ham_graph(n, p, &mut rng)?.graph))
                .collect::<Result<Vec<_>>>()?;
            Task::hamiltonian(&gs, &HamVocab::new(n)?, DEFAULT_ENUMERATION_CAP)?
        }
    };
    let reference = SequenceDistribution::uniform(&task);
    let (policy, report) = verifier_report(&reference, &task, c.delta, c.beta)?;
    let efficiency = efficient_generator_check(&policy.distribution, &task, c.k, c.alpha)?;
    ensure_finite("verifier report", [report.measured_min_margin, report.identity_residual.unwrap_or(0.0)])?;
    let bound = report.bound.unwrap_or(f64::NAN);
    let rows = (0..task.universes.len())
        .map(|i| {
            let p = generation_probability(&policy.distribution, &task, i)?;
            let q = generation_probability(&reference, &task, i)?;
            Ok(VerifierRow {
                prompt_index: i,
                prompt_len: task.universes[i].prompt.len(),
                policy_probability: p,
                reference_probability: q,
                ratio: p / q,
                normalizer: policy.normalizers[i],
                bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    println!(
        "margin {} (target {}), verifier {}, largest failing prompt length {:?}",
        report.measured_min_margin, c.delta, report.is_verifier, efficiency.largest_failing_len
    );
    let mut run = open_run("theorem1", common, &loaded)?;
    match common.format {
        Format::Csv => run.write_csv("verifier.csv", &rows)?,
        Format::Json => {
            #[derive(Serialize)]
            struct VerifierBody<'a> {
                report: &'a VerifierReport,
                efficiency: &'a EfficiencyTable,
            }
            write_report(
                &mut run,
                "verifier.json",
                VerifierBody {
                    report: &report,
                    efficiency: &efficiency,
                },
            )?;
        }
    }
    Ok(run)
}

// ---------------------------------------------------------------- theorem2: unseen tokens

pub fn unseen_tokens(common: &Common) -> Result<RunOutput> {
    let loaded: Loaded<UnseenTokenConfig> = load(&common.config, common.seed, true)?;
    let report = run_unseen_token_experiment(&loaded.config)?;
    ensure_finite(
        "training records",
        report.records.iter().flat_map(|r| [r.ex_train_loss, r.im_train_loss]),
    )?;
    let last = report.records.last().context("experiment produced no records")?;
    println!(
        "final step {}: ex eval {} im eval {} (train ex {} im {})",
        last.step, last.ex_eval_accuracy, last.im_eval_accuracy, last.ex_train_accuracy, last.im_train_accuracy
    );
    let mut run = open_run("theorem2", common, &loaded)?;
    match common.format {
        Format::Csv => run.write_csv("unseen_tokens.csv", &report.records)?,
        Format::Json => {
            #[derive(Serialize)]
            struct UnseenBody<'a> {
                report: &'a UnseenTokenReport,
            }
            write_report(&mut run, "unseen_tokens.json", UnseenBody { report: &report })?;
        }
    }
    Ok(run)
}

// ---------------------------------------------------------------- compare

fn default_tie_threshold() -> f64 {
    rewardlab::metrics::DEFAULT_TIE_THRESHOLD
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareConfig {
    a: PathBuf,
    b: PathBuf,
    #[serde(default = "default_tie_threshold")]
    tie_threshold: f64,
}

#[derive(Debug, Deserialize)]
struct AccuracyRow {
    model: String,
    dataset: String,
    seed: u64,
    accuracy: f64,
}

/// Reads `model,dataset,seed,accuracy` rows; other columns are ignored.
fn read_accuracy_table(path: &Path) -> Result<AccuracyTable> {
    require_file(path)?;
    let text = fs::read_to_string(path)?;
    let mut table = AccuracyTable::new();
    let mut seen = BTreeSet::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize() {
        let r: AccuracyRow = row.with_context(|| format!("reading {}", path.display()))?;
        let key = CellKey::new(r.model, r.dataset, r.seed);
        anyhow::ensure!(seen.insert(key.clone()), "{}: duplicate cell {key:?}", path.display());
        table.insert(key, r.accuracy);
    }
    Ok(table)
}

pub fn compare(common: &Common) -> Result<RunOutput> {
    let loaded: Loaded<CompareConfig> = load(&common.config, common.seed, false)?;
    let c = &loaded.config;
    if c.tie_threshold.is_nan() || c.tie_threshold < 0.0 {
        return Err(config("invalid config at `tie_threshold`: must be non-negative"));
    }
    let a = read_accuracy_table(&c.a)?;
    let b = read_accuracy_table(&c.b)?;
    let wr = win_rate_comparison(&a, &b, c.tie_threshold)?;
    println!("a wins {}%, ties {}%, b wins {}% over {} cells", wr.a_wins, wr.ties, wr.b_wins, wr.cells);
    let mut run = open_run("compare", common, &loaded)?;
    match common.format {
        Format::Csv => run.write_csv("compare.csv", std::slice::from_ref(&wr))?,
        Format::Json => {
            #[derive(Serialize)]
            struct CompareBody<'a> {
                tie_threshold: f64,
                win_rate: &'a WinRate,
            }
            write_report(
                &mut run,
                "compare.json",
                CompareBody {
                    tie_threshold: c.tie_threshold,
                    win_rate: &wr,
                },
            )?;
        }
    }
    Ok(run)
}
