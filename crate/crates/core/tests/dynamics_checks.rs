use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rewardlab::dynamics::{actual_delta, dynamics_report, predict_delta_exgrm, predict_delta_im, DynamicsQuery, Side};
use rewardlab::linalg::Matrix;
use rewardlab::training::bt_loss;
use rewardlab::{
    GrmTemplate, LinearHead, PolicyState, PreferenceDataset, PreferenceExample, RepresentationProvider,
    RewardScorer, ScorerKind, TokenSeq,
};

fn seq(t: &[u32]) -> TokenSeq {
    TokenSeq::new(t.to_vec())
}

fn random_query(rng: &mut ChaCha8Rng, v: u32, eta: f64) -> DynamicsQuery {
    let mut draw = |n: usize| TokenSeq::new((0..n).map(|_| rng.random_range(0..v)).collect());
    let prompt = draw(2);
    let chosen = draw(2);
    let mut rejected = draw(2);
    if rejected == chosen {
        rejected = TokenSeq::new(vec![(chosen.tokens()[0] + 1) % v, chosen.tokens()[1]]);
    }
    let (ep, er) = (draw(1), draw(3));
    DynamicsQuery::new(PreferenceExample::new(prompt, chosen, rejected).unwrap(), ep, er, eta).unwrap()
}

fn random_scorers(seed: u64) -> (RewardScorer, RewardScorer, RewardScorer, RewardScorer) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reps = Arc::new(RepresentationProvider::seeded(7, 4, seed).unwrap());
    let policy = PolicyState::random(reps.clone(), 1.0, &mut rng);
    let reference = PolicyState::random(reps.clone(), 1.0, &mut rng);
    let head: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    (
        RewardScorer::ex(LinearHead::new(head).unwrap(), reps).unwrap(),
        RewardScorer::im(policy.clone(), reference, 0.7).unwrap(),
        RewardScorer::im_no_ref(policy.clone()),
        RewardScorer::ex_grm(policy, GrmTemplate::separated(0, 1, 2).unwrap()).unwrap(),
    )
}

#[test]
fn zero_step_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (ex, im, noref, grm) = random_scorers(4);
    let q = random_query(&mut rng, 7, 0.0);
    for s in [&ex, &im, &noref, &grm] {
        let r = dynamics_report(s, &q).unwrap();
        assert_eq!(r.actual_delta, 0.0);
        assert_eq!(r.predicted_delta, 0.0);
    }
}

#[test]
fn negative_step_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = random_query(&mut rng, 7, 0.1);
    assert!(q.with_eta(-0.1).validate().is_err());
    assert!(q.with_eta(f64::NAN).validate().is_err());
}

fn table(entries: &[(&[u32], [f64; 3])]) -> Arc<RepresentationProvider> {
    let map: HashMap<TokenSeq, Vec<f64>> = entries.iter().map(|(k, v)| (seq(k), v.to_vec())).collect();
    Arc::new(RepresentationProvider::table(6, 3, map).unwrap())
}

#[test]
fn linear_head_hand_cases() {
    let reps = table(&[
        (&[0, 1], [1.0, 0.0, 0.0]),
        (&[0, 2], [0.0, 1.0, 0.0]),
        (&[3, 4], [0.0, 0.0, 1.0]),
        (&[3, 1], [1.0, 0.0, 0.0]),
    ]);
    let scorer = RewardScorer::ex(LinearHead::zeros(3), reps).unwrap();
    let ex = PreferenceExample::new(seq(&[0]), seq(&[1]), seq(&[2])).unwrap();
    let eta = 0.3;
    // evaluation representation orthogonal to both training representations
    let orth = DynamicsQuery::new(ex.clone(), seq(&[3]), seq(&[4]), eta).unwrap();
    let r = dynamics_report(&scorer, &orth).unwrap();
    assert_eq!(r.actual_delta, 0.0);
    assert_eq!(r.predicted_delta, 0.0);
    // evaluation equal to the chosen side: η · ½ · ‖h⁺‖²
    let same = DynamicsQuery::new(ex, seq(&[3]), seq(&[1]), eta).unwrap();
    let r = dynamics_report(&scorer, &same).unwrap();
    assert!((r.actual_delta - eta / 2.0).abs() < 1e-15);
    assert!(r.residual.abs() < 1e-15);
    assert_eq!(r.variant, ScorerKind::Ex);
}

/// Gradient of the single-example loss by central differences.
fn numeric_gradient(scorer: &RewardScorer, ex: &PreferenceExample) -> Matrix {
    let RewardScorer::Im { policy, reference, beta } = scorer else { unreachable!() };
    let ds = PreferenceDataset::new("one", vec![ex.clone()]);
    let u = policy.unembedding();
    let mut g = Matrix::zeros(u.rows(), u.cols());
    let h = 1e-5;
    for i in 0..u.rows() {
        for j in 0..u.cols() {
            let eval = |d: f64| {
                let mut m = u.clone();
                m.set(i, j, m.get(i, j) + d);
                let s = RewardScorer::im(policy.with_unembedding(m).unwrap(), reference.clone(), *beta).unwrap();
                bt_loss(&s, &ds).unwrap()
            };
            g.set(i, j, (eval(h) - eval(-h)) / (2.0 * h));
        }
    }
    g
}

#[test]
fn implicit_update_matches_an_independent_step() {
    for seed in 0..10 {
        let (_, im, _, _) = random_scorers(100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_query(&mut rng, 7, 0.05);
        let RewardScorer::Im { policy, reference, beta } = &im else { unreachable!() };
        let grad = numeric_gradient(&im, &q.train_example);
        let mut u = policy.unembedding().clone();
        u.axpy(-q.eta, &grad);
        let stepped = policy.with_unembedding(u).unwrap();
        let before = beta * (policy.sequence_log_prob(&q.eval_prompt, &q.eval_response).unwrap()
            - reference.sequence_log_prob(&q.eval_prompt, &q.eval_response).unwrap());
        let after = beta * (stepped.sequence_log_prob(&q.eval_prompt, &q.eval_response).unwrap()
            - reference.sequence_log_prob(&q.eval_prompt, &q.eval_response).unwrap());
        let act = actual_delta(&im, &q).unwrap();
        assert!((act - (after - before)).abs() < 1e-8, "{act} vs {}", after - before);
    }
}

#[test]
fn first_order_prediction_in_the_small_step_limit() {
    for seed in 0..30 {
        let (_, im, noref, grm) = random_scorers(200 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_query(&mut rng, 7, 1e-4);
        for s in [&im, &noref] {
            let pred = predict_delta_im(s, &q).unwrap();
            let act = actual_delta(s, &q).unwrap();
            assert!((act - pred).abs() / q.eta < 1e-3, "seed {seed}: {act} vs {pred}");
        }
        let RewardScorer::ExGrm { policy, template } = &grm else { unreachable!() };
        let pred = predict_delta_exgrm(&q, policy, template).unwrap();
        let act = actual_delta(&grm, &q).unwrap();
        assert!((act - pred).abs() / q.eta < 1e-3);
    }
}

#[test]
fn second_order_residual_is_stable_across_a_decade() {
    let mut checked = 0;
    for seed in 0..30 {
        let (_, im, _, grm) = random_scorers(300 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_query(&mut rng, 7, 1e-2);
        for s in [&im, &grm] {
            let big = dynamics_report(s, &q).unwrap().residual / 1e-4;
            let small = dynamics_report(s, &q.with_eta(1e-3)).unwrap().residual / 1e-6;
            if big.abs() < 1e-6 {
                continue;
            }
            let ratio = small / big;
            assert!((0.7..=1.4).contains(&ratio), "seed {seed} {:?}: {big} vs {small}", s.kind());
            checked += 1;
        }
    }
    assert!(checked > 40);
}

#[test]
fn unrelated_evaluation_prefix_is_untouched_by_the_implicit_update() {
    // single-token evaluation whose prefix representation is orthogonal to
    // every training prefix: the update moves none of its logits
    let reps = table(&[
        (&[0], [1.0, 0.0, 0.0]),
        (&[0, 1], [0.0, 1.0, 0.0]),
        (&[0, 2], [0.0, 1.0, 0.0]),
        (&[3], [0.0, 0.0, 1.0]),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let policy = PolicyState::random(reps.clone(), 1.0, &mut rng);
    let scorer = RewardScorer::im(policy.clone(), PolicyState::uniform(reps), 1.0).unwrap();
    let ex = PreferenceExample::new(seq(&[0]), seq(&[1]), seq(&[2])).unwrap();
    let q = DynamicsQuery::new(ex, seq(&[3]), seq(&[5]), 0.5).unwrap();
    let r = dynamics_report(&scorer, &q).unwrap();
    assert!(r.actual_delta.abs() < 1e-15);
    assert_eq!(r.predicted_delta, 0.0);
    assert!(r.coefficient_table.iter().all(|c| c.inner_product == 0.0));
}

#[test]
fn orthogonal_verifier_inputs_leave_the_verdict_unchanged() {
    // verdict inputs: prompt, sep 0, response, sep 0
    let reps = table(&[
        (&[3, 0, 4, 0], [1.0, 0.0, 0.0]),
        (&[3, 0, 5, 0], [0.0, 1.0, 0.0]),
        (&[3, 0, 3, 0], [0.0, 0.0, 1.0]),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let policy = PolicyState::random(reps, 1.0, &mut rng);
    let template = GrmTemplate::separated(0, 1, 2).unwrap();
    let scorer = RewardScorer::ex_grm(policy, template).unwrap();
    let ex = PreferenceExample::new(seq(&[3]), seq(&[4]), seq(&[5])).unwrap();
    let q = DynamicsQuery::new(ex, seq(&[3]), seq(&[3]), 0.4).unwrap();
    let r = dynamics_report(&scorer, &q).unwrap();
    assert_eq!(r.predicted_delta, 0.0);
    assert!(r.actual_delta.abs() < 1e-15);
    assert_eq!(r.coefficient_table.len(), 2);
}

#[test]
fn coefficient_table_covers_every_position_pair() {
    let (_, im, _, _) = random_scorers(9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = random_query(&mut rng, 7, 1e-3);
    let r = dynamics_report(&im, &q).unwrap();
    let (ybar, yp, ym) = (q.eval_response.len(), q.train_example.chosen.len(), q.train_example.rejected.len());
    assert_eq!(r.coefficient_table.len(), ybar * (yp + ym));
    assert_eq!(r.coefficient_table.iter().filter(|c| c.side == Side::Chosen).count(), ybar * yp);
    assert!(r.coefficient_table.iter().all(|c| (-2.0..=2.0).contains(&c.value)));
    let json = serde_json::to_string(&r).unwrap();
    let back: rewardlab::dynamics::DynamicsReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
}
