use dppseq_core::data::{k_core_filter, make_instances, temporal_split, InteractionLog};
use dppseq_core::diverse::{generate_pairs, DiverseSetConfig};
use dppseq_core::dpp::{
    build_sequence_kernel, cdsl_log_likelihood, dsl_log_likelihood, DiversityKernelLowRank,
    GroundSet, QualityVector,
};
use dppseq_core::kernel::{
    init_factors, normalize_kernel, paired_set_objective, train_kernel, KernelTrainConfig, SetPair,
};
use dppseq_core::linalg::Matrix;
use dppseq_core::losses::LossKind;
use dppseq_core::metrics::{self, RandomScorer};
use dppseq_core::model::{self, ScorerParams, TrainConfig, Validation};
use dppseq_core::synth::{synthetic_interactions, SyntheticConfig};
use proptest::prelude::*;

#[test]
fn library_pipeline_trains_a_set_loss_scorer() {
    let raw = synthetic_interactions(&SyntheticConfig {
        users: 120,
        items: 60,
        categories: 6,
        min_len: 15,
        max_len: 22,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let log = k_core_filter(&InteractionLog::from_raw(&raw).unwrap(), 5).unwrap();
    assert!(log.is_k_core(5));
    let split = temporal_split(&log, 2).unwrap();
    let catalog = log.catalog();

    let cfg = DiverseSetConfig::default();
    let mut pairs = Vec::new();
    for u in &split.users {
        let history = u.history();
        let p = generate_pairs(u.user, &u.train, &history, &catalog, &cfg, 0).unwrap();
        for (pos, neg) in p.positive.iter().zip(&p.negative) {
            assert_eq!(pos.len(), neg.len());
            assert!(pos.iter().all(|i| u.train.contains(i)));
            assert!(neg.iter().all(|i| !history.contains(i)));
        }
        pairs.extend(SetPair::from_paired(&[p]));
    }

    let kcfg = KernelTrainConfig {
        latent_dim: 8,
        epochs: 40,
        ..Default::default()
    };
    let (v, log_k) = train_kernel(log.num_items(), &pairs, &kcfg).unwrap();
    let start = paired_set_objective(
        &init_factors(log.num_items(), &kcfg).unwrap(),
        &pairs,
        kcfg.l2_reg,
        kcfg.jitter,
    )
    .unwrap();
    assert!(log_k.last().unwrap().objective > start);
    let kernel = normalize_kernel(&v);

    let instances = make_instances(&split, 4, 2, 2, 0).unwrap();
    let cases = split.validation_cases(4);
    let validation = Validation {
        cases: &cases,
        num_items: log.num_items(),
        catalog: &catalog,
    };
    let tc = TrainConfig {
        dim: 16,
        max_epochs: 30,
        ..Default::default()
    };
    let params = ScorerParams::init(log.num_users(), log.num_items(), tc.dim, 0).unwrap();
    let out = model::train(
        params,
        &instances,
        LossKind::Cdsl,
        Some(&kernel),
        validation,
        &tc,
        |_| {},
    )
    .unwrap();
    let random = metrics::mean_ndcg(
        &RandomScorer { seed: 0 },
        &cases,
        log.num_items(),
        &catalog,
        5,
    )
    .unwrap();
    assert!(
        out.best_val_ndcg > 2.0 * random,
        "{} vs random {random}",
        out.best_val_ndcg
    );

    let test = split.test_cases(4);
    let users = metrics::evaluate(&out.params, &test, log.num_items(), &catalog, &[5, 10]).unwrap();
    assert_eq!(users.len(), test.len());
    let rows = metrics::summarize("cdsl", 2, &[5, 10], &users).unwrap();
    assert!(rows[1].recall >= rows[0].recall);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn set_probabilities_sum_to_one(
        n in 2usize..7,
        rank in 1usize..8,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * rank).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = DiversityKernelLowRank::new(Matrix::from_vec(n, rank, data).unwrap()).unwrap();
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let negatives: Vec<usize> = (1..n).collect();
        let ground = GroundSet::new(0, 0, &[], &[0], &negatives).unwrap();
        let l = build_sequence_kernel(&QualityVector::from_raw_scores(&raw).unwrap(), &v, &ground).unwrap();
        let mut total = cdsl_log_likelihood(&l, &[], &[]).unwrap().exp();
        for mask in 1u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            total += dsl_log_likelihood(&l, &idx).unwrap().exp();
        }
        prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
    }
}
