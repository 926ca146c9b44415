use std::sync::Arc;

use proptest::prelude::*;
use qrewrite::text::{bleu4, jaccard_unigram, rouge_l, tokenize, Vocab};
use qrewrite::{revise_step, step_size, AeConfig, Autoencoder, EmbeddingTables, Label, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]), 0..10)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #[test]
    fn jaccard_is_symmetric_and_bounded(a in words(), b in words()) {
        let j = jaccard_unigram(&a, &b);
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j, jaccard_unigram(&b, &a));
        prop_assert_eq!(jaccard_unigram(&a, &a), 1.0);
    }

    #[test]
    fn overlap_scores_are_bounded(a in words(), b in words()) {
        prop_assert!((0.0..=1.0).contains(&bleu4(&a, &b)));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&rouge_l(&a, &b)));
        if !a.is_empty() {
            prop_assert!((rouge_l(&a, &a) - 1.0).abs() < 1e-12);
        }
        if a.len() >= 4 {
            prop_assert!((bleu4(&a, &a) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tokenization_is_idempotent(text in "[a-zA-Z ,.?!']{0,40}") {
        let vocab = Vocab::build([text.as_str()]);
        let once = tokenize(&text, &vocab);
        let twice = tokenize(&once.detokenize(), &vocab);
        prop_assert_eq!(once.tokens, twice.tokens);
    }

    #[test]
    fn step_schedule_decays_geometrically(eta0 in 0.01f64..10.0, beta in 0.05f64..1.0, k in 0usize..30) {
        let a = step_size(eta0, beta, k);
        let b = step_size(eta0, beta, k + 1);
        prop_assert!(b <= a);
        prop_assert!((b - a * beta).abs() <= 1e-12 * a);
    }

    #[test]
    fn zero_gradient_leaves_embedding_alone(vals in prop::collection::vec(-3.0f64..3.0, 12), eta in 0.0f64..8.0) {
        let e = Tensor::matrix(3, 4, vals).unwrap();
        let g = Tensor::zeros(3, 4);
        prop_assert_eq!(revise_step(&e, &g, eta).unwrap(), e);
    }

    #[test]
    fn flipping_a_label_twice_is_identity(i in 0usize..2) {
        let l = Label::from_index(i);
        prop_assert_eq!(l.flipped().flipped(), l);
        prop_assert_ne!(l.flipped(), l);
    }
}

#[test]
fn pooling_is_sensitive_to_row_order() {
    let vocab = Vocab::from_words(["what", "is", "the", "color", "of", "ada", "?"]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let emb = Arc::new(EmbeddingTables::<f64>::new(&mut rng, vocab.len(), 16, 32));
    let mut cfg = AeConfig::desk();
    cfg.encoder.hidden = 16;
    cfg.decoder.hidden = 16;
    cfg.encoder.ffn = 32;
    cfg.decoder.ffn = 32;
    let ae = Autoencoder::new(cfg, emb, &vocab, 9).unwrap();

    let trials = 200;
    let mut changed = 0;
    for _ in 0..trials {
        let n = rng.random_range(3..9);
        let h = Tensor::matrix(n, 16, (0..n * 16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        while order.iter().enumerate().all(|(i, &j)| i == j) {
            order.shuffle(&mut rng);
        }
        let rows: Vec<&[f64]> = order.iter().map(|&i| h.row(i)).collect();
        let permuted = Tensor::from_rows(&rows).unwrap();
        if ae.pool(&h).unwrap() != ae.pool(&permuted).unwrap() {
            changed += 1;
        }
    }
    assert!(changed * 100 >= trials * 95, "only {changed}/{trials} permutations changed z");
}
