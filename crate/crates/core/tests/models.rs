mod common;

use case_diar::models::{Embedder, EmbedderConfig, EmbedderGraph};
use case_diar::ndiff::{finite_diff_check, Checkpoint};
use case_diar::pipeline::System;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn case_phone_and_character_gradients() {
    let system: System = "case-p+c".parse().unwrap();
    let cfg = common::tiny_embedder(&system.embedder_config(&EmbedderConfig::default()));
    let mut model = Embedder::new(cfg.clone(), 3, 1).unwrap();
    common::jitter_biases(model.params_mut(), 4);
    let mut graph = EmbedderGraph::new(model);
    let batch = common::random_batch(&cfg, 3, 2);
    let err = finite_diff_check(&mut graph, &batch, common::GRAD_EPSILON).unwrap();
    assert!(err < common::GRAD_TOLERANCE, "{err}");
}

#[test]
fn checkpoint_round_trip_preserves_embeddings() {
    let system: System = "case-w+p+c".parse().unwrap();
    let cfg = common::tiny_embedder(&system.embedder_config(&EmbedderConfig::default()));
    let model = Embedder::new(cfg.clone(), 4, 11).unwrap();
    let batch = common::random_batch(&cfg, 4, 12);
    let items: Vec<_> = batch.items.iter().map(|i| (&i.features, i.content.as_ref())).collect();
    let before = model.embed_windows(&items).unwrap();

    let text = model.to_checkpoint(None).to_text();
    let restored = Embedder::from_checkpoint(cfg, &Checkpoint::parse(&text).unwrap()).unwrap();
    assert_eq!(restored.embed_windows(&items).unwrap(), before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Attentive pooling sums exactly, so any frame order gives the same bits.
    #[test]
    fn pooling_is_order_invariant(seed in any::<u64>(), frames in 2usize..40) {
        let cfg = common::tiny_embedder(&EmbedderConfig::default());
        let model = Embedder::new(cfg.clone(), 2, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = common::gaussian(&mut rng, frames, cfg.dvector_dim);
        let mut order: Vec<usize> = (0..frames).collect();
        order.shuffle(&mut rng);
        let rows: Vec<Vec<f64>> = order.iter().map(|&r| h.row(r).to_vec()).collect();
        let shuffled = case_diar::ndiff::Tensor2::from_rows(&rows).unwrap();
        prop_assert_eq!(model.attentive_pool(&h).unwrap(), model.attentive_pool(&shuffled).unwrap());
    }
}

