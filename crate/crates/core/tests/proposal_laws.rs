use std::sync::OnceLock;

use ctxprop_core::{
    compute_pairwise, fit_kde, iou_2d, pose_to_viewpoint, project_box, BandwidthRule, Box3D,
    CameraModel, Detection2D, Frame, GridSpec, KdeModel, LdaModel, Object3D, ObjectSize,
    PairwiseRelation, PoseMode, ProposalEngine, ProposalRequest, ProposalSet, Provenance,
    RelationModel, SeedMode, Strategy, StrategyKind, Vocabulary,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn size() -> ObjectSize {
    ObjectSize {
        l: 3.9,
        w: 1.6,
        h: 1.5,
    }
}

fn engine() -> &'static ProposalEngine {
    static ENGINE: OnceLock<ProposalEngine> = OnceLock::new();
    ENGINE.get_or_init(|| {
        let cam = CameraModel::from_intrinsics(721.5, 609.6, 172.9, 1242.0, 375.0).unwrap();
        let grid = GridSpec {
            x_range: (-10.0, 10.0),
            z_range: (5.0, 45.0),
            x_step: 0.5,
            z_step: 0.5,
            num_orientations: 8,
            default_size: size(),
        };
        ProposalEngine::new(&cam, &grid).unwrap()
    })
}

fn seed(x: f64, z: f64, theta: f64, score: f64) -> Detection2D {
    let b = Box3D::new(x, z, size(), theta);
    Detection2D {
        bbox: project_box(&b, engine().camera()).unwrap(),
        viewpoint_alpha: pose_to_viewpoint(theta, x, z),
        score,
    }
}

fn kde() -> KdeModel {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rels: Vec<PairwiseRelation> = (0..40)
        .map(|_| PairwiseRelation {
            r_x: rng.gen_range(-5.0..5.0),
            r_z: rng.gen_range(-12.0..12.0),
            r_theta: rng.gen_range(-3.0..3.0),
        })
        .collect();
    fit_kde(&rels, BandwidthRule::Silverman, PoseMode::FullPose).unwrap()
}

fn lda(num_topics: usize, pose_mode: PoseMode, phi_seed: u64) -> LdaModel {
    let vocab = Vocabulary::new(2.0, 2.0, 8, (-10.0, 10.0), (-20.0, 20.0), pose_mode).unwrap();
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(phi_seed);
    let mut phi = Vec::with_capacity(num_topics * v);
    for _ in 0..num_topics {
        let row: Vec<f64> = (0..v)
            .map(|_| rng.gen_range(0.01..1.0f64).powi(4))
            .collect();
        let sum: f64 = row.iter().sum();
        phi.extend(row.into_iter().map(|p| p / sum));
    }
    LdaModel::new(num_topics, phi, 0.5, 0.01, vocab).unwrap()
}

type RawSeed = (f64, f64, f64, f64);

fn raw_seeds(
    count: std::ops::Range<usize>,
) -> impl proptest::strategy::Strategy<Value = Vec<RawSeed>> {
    prop::collection::vec(
        (-6.0..6.0f64, 8.0..35.0f64, -3.1..3.1f64, 0.0..1.0f64),
        count,
    )
}

fn to_seeds(raw: &[RawSeed]) -> Vec<Detection2D> {
    raw.iter().map(|&(x, z, t, s)| seed(x, z, t, s)).collect()
}

fn check_contract(set: &ProposalSet, req: &ProposalRequest) {
    assert!(set.len() <= req.budget);
    if !set.exhausted {
        assert_eq!(set.len(), req.budget);
    }
    for (i, a) in set.proposals.iter().enumerate() {
        for b in &set.proposals[i + 1..] {
            assert!(iou_2d(&a.bbox, &b.bbox) <= req.dedup_iou);
        }
    }
}

fn run(
    kind: StrategyKind,
    frame: Frame,
    req: &ProposalRequest,
    model: RelationModel<'_>,
) -> ProposalSet {
    engine()
        .generate(&Strategy::new(kind, frame), req, model)
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_is_deterministic_and_budgeted(
        raw in raw_seeds(0..4),
        budget in 1usize..150,
        rng_seed in any::<u64>(),
        oc in any::<bool>(),
    ) {
        let frame = if oc { Frame::ObjectCentered } else { Frame::CameraCentered };
        let k = kde();
        let l = lda(3, PoseMode::FullPose, 5);
        let mut req = ProposalRequest::new(to_seeds(&raw), budget);
        req.rng_seed = rng_seed;
        req.max_stale_draws = 500;
        for (kind, model) in [
            (StrategyKind::SlidingWindow3D, RelationModel::None),
            (StrategyKind::PairwiseKde, RelationModel::Kde(&k)),
            (StrategyKind::HigherOrderTopics, RelationModel::Lda(&l)),
        ] {
            let a = run(kind, frame, &req, model);
            let b = run(kind, frame, &req, model);
            prop_assert_eq!(&a, &b);
            check_contract(&a, &req);
        }
    }

    #[test]
    fn pairwise_targets_have_positive_density(
        raw in raw_seeds(1..3),
        rng_seed in any::<u64>(),
        oc in any::<bool>(),
    ) {
        let frame = if oc { Frame::ObjectCentered } else { Frame::CameraCentered };
        let k = kde();
        let seeds = to_seeds(&raw);
        let mut req = ProposalRequest::new(seeds.clone(), 60);
        req.rng_seed = rng_seed;
        let strategy = Strategy::new(StrategyKind::PairwiseKde, frame);
        let set = engine().generate(&strategy, &req, RelationModel::Kde(&k)).unwrap();
        let lifted = engine().lift_seeds(&seeds);
        for p in &set.proposals {
            if let Provenance::PairwiseSample { .. } = p.provenance {
                let loc = Object3D { bbox: p.location.unwrap(), score: 1.0 };
                let ok = lifted.iter().any(|(_, s)| {
                    let rel = compute_pairwise(s, &loc, strategy.relation_config());
                    k.density(&rel).unwrap() > 0.0
                });
                prop_assert!(ok);
            }
        }
    }

    #[test]
    fn topic_words_follow_probability_order(
        raw in raw_seeds(1..4),
        phi_seed in any::<u64>(),
        elongation in any::<bool>(),
        oc in any::<bool>(),
    ) {
        let frame = if oc { Frame::ObjectCentered } else { Frame::CameraCentered };
        let (kind, mode) = if elongation {
            (StrategyKind::HigherOrderElongation, PoseMode::Elongation)
        } else {
            (StrategyKind::HigherOrderTopics, PoseMode::FullPose)
        };
        let l = lda(4, mode, phi_seed);
        let req = ProposalRequest::new(to_seeds(&raw), 200);
        let set = run(kind, frame, &req, RelationModel::Lda(&l));
        check_contract(&set, &req);
        let mut last: std::collections::HashMap<(usize, usize), f64> = Default::default();
        for p in &set.proposals {
            if let Provenance::TopicSample { seed, topic, word } = p.provenance {
                let prob = l.topic(topic).unwrap()[word as usize];
                if let Some(&prev) = last.get(&(seed, topic)) {
                    prop_assert!(prob <= prev);
                }
                last.insert((seed, topic), prob);
            }
        }
    }

    #[test]
    fn top_scoring_ignores_weaker_seeds(
        raw in raw_seeds(1..5),
        rng_seed in any::<u64>(),
    ) {
        let k = kde();
        let l = lda(2, PoseMode::FullPose, 3);
        let seeds = to_seeds(&raw);
        let best = seeds.iter().map(|d| d.score).fold(f64::NEG_INFINITY, f64::max);
        let strongest: Vec<Detection2D> = seeds.iter().filter(|d| d.score == best).copied().collect();
        let mut full = ProposalRequest::new(seeds, 80);
        full.seed_mode = SeedMode::TopScoring;
        full.rng_seed = rng_seed;
        let mut reduced = full.clone();
        reduced.seeds = strongest;
        for (kind, model) in [
            (StrategyKind::PairwiseKde, RelationModel::Kde(&k)),
            (StrategyKind::HigherOrderTopics, RelationModel::Lda(&l)),
        ] {
            let a = run(kind, Frame::CameraCentered, &full, model);
            let b = run(kind, Frame::CameraCentered, &reduced, model);
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn fallback_budget_is_capped_by_grid_size() {
    let req = ProposalRequest::new(Vec::new(), 1_000_000);
    let set = run(
        StrategyKind::SlidingWindow3D,
        Frame::CameraCentered,
        &req,
        RelationModel::None,
    );
    let projectable = (0..engine().grid().len())
        .filter(|&i| engine().grid().projection(i).is_some())
        .count();
    assert!(set.exhausted);
    assert!(set.len() <= projectable);
    assert!(set.len() > 0);
}
