//! Randomized invariants over small instances.

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rewardlab::dynamics::{gamma_minus_from, gamma_plus_from, rho_from_distributions, rho_same_token};
use rewardlab::linalg::Matrix;
use rewardlab::metrics::{accuracy, evaluate, TieRule};
use rewardlab::rewards::{FnReward, MappedReward};
use rewardlab::seqmodel::softmax;
use rewardlab::training::{bt_loss, phi_ex, phi_im};
use rewardlab::{
    LinearHead, PolicyState, PreferenceDataset, PreferenceExample, RepresentationProvider,
    RewardScorer, TokenSeq,
};

fn tokens(vocab: u32, len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..vocab, len)
}

fn logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-40.0f64..40.0, n)
}

fn policy(v: usize, d: usize, seed: u64, scale: f64) -> PolicyState {
    let reps = Arc::new(RepresentationProvider::seeded(v, d, seed).unwrap());
    PolicyState::random(reps, scale, &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)))
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(z in logits(9)) {
        let p = softmax(&z);
        prop_assert!(p.iter().all(|x| *x > 0.0 || z.iter().any(|w| w - z.iter().cloned().fold(f64::MIN, f64::max) < -700.0)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_prob_chain_rule(
        seed in 0u64..1000,
        prompt in tokens(7, 0..=3),
        y in tokens(7, 1..=3),
        y2 in tokens(7, 1..=3),
    ) {
        let pol = policy(7, 4, seed, 1.5);
        let x = TokenSeq::new(prompt);
        let (y, y2) = (TokenSeq::new(y), TokenSeq::new(y2));
        let whole = pol.sequence_log_prob(&x, &y.concat(&y2)).unwrap();
        let split = pol.sequence_log_prob(&x, &y).unwrap() + pol.sequence_log_prob(&x.concat(&y), &y2).unwrap();
        prop_assert!((whole - split).abs() < 1e-10);
        prop_assert!(whole <= 0.0);
    }

    #[test]
    fn im_reward_ignores_row_shift(seed in 0u64..1000, shift in prop::collection::vec(-3.0f64..3.0, 4), y in tokens(6, 1..=3)) {
        let pol = policy(6, 4, seed, 1.0);
        let reference = policy(6, 4, seed, 0.5).with_unembedding(policy(6, 4, seed + 7, 1.0).unembedding().clone()).unwrap();
        let s = RewardScorer::im(pol.clone(), reference.clone(), 0.8).unwrap();
        let mut shifted = pol.unembedding().clone();
        for r in 0..shifted.rows() {
            shifted.add_to_row(r, 1.0, &shift);
        }
        let s2 = RewardScorer::im(pol.with_unembedding(shifted).unwrap(), reference, 0.8).unwrap();
        let x = TokenSeq::new(vec![1, 2]);
        let y = TokenSeq::new(y);
        prop_assert!((s.score(&x, &y).unwrap() - s2.score(&x, &y).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn rho_and_gamma_stay_in_bounds(a in logits(6), b in logits(6), c in logits(6), i in 0usize..6, j in 0usize..6) {
        let (p, q, r) = (softmax(&a), softmax(&b), softmax(&c));
        let rho = rho_from_distributions(&p, &q, i, j);
        prop_assert!((-2.0..=2.0).contains(&rho));
        if i == j {
            prop_assert!(rho > 0.0);
            prop_assert!((rho_same_token(&p, &q, i) - rho).abs() < 1e-12);
        }
        prop_assert!((0.0..=2.0).contains(&gamma_plus_from(&p, &q, 0)));
        prop_assert!((-2.0..=1.0).contains(&gamma_minus_from(&p, &r, 0, 1)));
    }

    #[test]
    fn accuracy_survives_increasing_maps(values in prop::collection::vec(-3i32..=3, 16), n in 1usize..8) {
        let ds = PreferenceDataset::new("p", (0..n).map(|i| PreferenceExample::new(
            TokenSeq::single(i as u32), TokenSeq::single(2 * i as u32 % 16), TokenSeq::single((2 * i + 1) as u32 % 16)).unwrap()).collect());
        let base = FnReward(move |_: &TokenSeq, y: &TokenSeq| values[y.tokens()[0] as usize] as f64);
        let a = accuracy(&base, &ds).unwrap();
        let warped = MappedReward { inner: &base, map: |r: f64| r.atan() * 5.0 + r };
        prop_assert_eq!(accuracy(&warped, &ds).unwrap(), a);
        let flipped = MappedReward { inner: &base, map: |r: f64| -r };
        if evaluate(&base, &ds, TieRule::EXACT).unwrap().n_ties == 0 {
            prop_assert_eq!(accuracy(&flipped, &ds).unwrap() + a, 1.0);
        }
    }
}

/// Loss written as logistic regression over the feature embeddings.
fn logistic_loss(margins: &[f64]) -> f64 {
    margins.iter().map(|m| (1.0 + (-m).exp()).ln()).sum::<f64>() / margins.len() as f64
}

#[test]
fn embedding_form_of_the_loss_matches_scoring() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d) = (8, 5);
        let reps = Arc::new(RepresentationProvider::seeded(v, d, seed).unwrap());
        let examples: Vec<PreferenceExample> = (0..6)
            .map(|_| {
                let a = rng.random_range(0..v as u32);
                let b = (a + rng.random_range(1..v as u32)) % v as u32;
                PreferenceExample::new(
                    TokenSeq::new(vec![rng.random_range(0..v as u32)]),
                    TokenSeq::single(a),
                    TokenSeq::single(b),
                )
                .unwrap()
            })
            .collect();
        let ds = PreferenceDataset::new("phi", examples);

        let head: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ex = RewardScorer::ex(LinearHead::new(head.clone()).unwrap(), reps.clone()).unwrap();
        let margins: Vec<f64> = ds
            .examples
            .iter()
            .map(|e| phi_ex(e, &reps).unwrap().iter().zip(&head).map(|(p, u)| p * u).sum())
            .collect();
        assert!((bt_loss(&ex, &ds).unwrap() - logistic_loss(&margins)).abs() < 1e-10);

        let beta = 0.7;
        let init = PolicyState::random(reps.clone(), 0.3, &mut rng);
        let trained = PolicyState::random(reps.clone(), 1.0, &mut rng);
        let im = RewardScorer::im(trained.clone(), init.clone(), beta).unwrap();
        let delta: Matrix = {
            let mut m = trained.unembedding().clone();
            m.axpy(-1.0, init.unembedding());
            m
        };
        let mut margins = Vec::new();
        for e in &ds.examples {
            let phi = phi_im(e, &reps, beta).unwrap();
            let m = trained.unembedding().frobenius_dot(&phi) - init.unembedding().frobenius_dot(&phi);
            let diff = im.reward_difference(&e.prompt, &e.chosen, &e.rejected).unwrap();
            assert!((m - diff).abs() < 1e-10, "{m} vs {diff}");
            assert!((delta.frobenius_dot(&phi) - diff).abs() < 1e-10);
            margins.push(m);
        }
        assert!((bt_loss(&im, &ds).unwrap() - logistic_loss(&margins)).abs() < 1e-10);
    }
}
