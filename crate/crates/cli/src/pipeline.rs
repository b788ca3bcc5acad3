//! In-memory pipeline stages shared by the subcommands.

use ctxprop_core::dataset::{split_dataset, SceneRecord};
use ctxprop_core::evaluation::write_curves_csv;
use ctxprop_core::topics::LdaParams;
use ctxprop_core::{
    build_corpus, fit_kde, fit_lda, merge_streams, nms, recall_curve, scene_relations,
    BandwidthRule, CameraModel, Detection2D, EvalScene, GridSpec, KdeModel, LdaModel, Object3D,
    ObjectSize, PoseMode, ProposalEngine, ProposalRequest, ProposalSet, Provenance, RecallCurve,
    RelationModel, Strategy, StrategyKind, Vocabulary,
};
use rayon::prelude::*;

use crate::config::{RunConfig, SamplingConfig, SplitPart};
use crate::error::CliError;
use crate::proposals_file::{ProposalFile, RankedProposal};

/// Scenes of the requested split part; `All` skips the split filter entirely.
pub fn select_part(scenes: &[SceneRecord], cfg: &RunConfig, part: SplitPart) -> Vec<SceneRecord> {
    match part {
        SplitPart::All => scenes.to_vec(),
        SplitPart::Train => split_dataset(scenes, &cfg.split_spec()).0,
        SplitPart::Test => split_dataset(scenes, &cfg.split_spec()).1,
    }
}

/// Grounded annotations of `class`, one list per scene.
pub fn class_objects(scenes: &[SceneRecord], class: &str) -> Vec<Vec<Object3D>> {
    scenes
        .iter()
        .map(|s| {
            s.annotations
                .iter()
                .filter(|a| a.class == class)
                .map(|a| Object3D {
                    bbox: a.box3d,
                    score: 1.0,
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Kde(KdeModel),
    Lda(LdaModel),
}

impl FittedModel {
    pub fn as_relation_model(&self) -> RelationModel<'_> {
        match self {
            FittedModel::Kde(m) => RelationModel::Kde(m),
            FittedModel::Lda(m) => RelationModel::Lda(m),
        }
    }

    pub fn file_name(strategy: &Strategy) -> String {
        match strategy.kind {
            StrategyKind::PairwiseKde => format!("{}.kde", strategy.label()),
            _ => format!("{}.lda", strategy.label()),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            FittedModel::Kde(m) => m.to_text(),
            FittedModel::Lda(m) => m.to_text(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FitStats {
    pub relations: usize,
    pub documents: usize,
    pub tokens: usize,
    pub vocabulary_size: usize,
}

#[derive(Debug, Clone)]
pub struct FittedModels {
    pub mean_size: ObjectSize,
    pub scenes: usize,
    pub objects: usize,
    pub models: Vec<(Strategy, FittedModel, FitStats)>,
}

impl FittedModels {
    pub fn get(&self, strategy: &Strategy) -> Option<&FittedModel> {
        self.models
            .iter()
            .find(|(s, _, _)| s == strategy)
            .map(|(_, m, _)| m)
    }
}

pub fn vocabulary_for(
    cfg: &RunConfig,
    mean_size: ObjectSize,
    pose_mode: PoseMode,
) -> Result<Vocabulary, CliError> {
    let v = &cfg.vocabulary;
    let vocab = match v.cell {
        Some(cell) => Vocabulary::covering(cell, v.theta_bins, v.x_extent, v.z_extent, pose_mode),
        None => {
            Vocabulary::for_mean_width(mean_size.w, v.theta_bins, v.x_extent, v.z_extent, pose_mode)
        }
    };
    Ok(vocab?)
}

pub fn lda_params(cfg: &RunConfig) -> LdaParams {
    LdaParams {
        num_topics: cfg.lda.topics,
        alpha: cfg.lda.resolved_alpha(),
        beta: cfg.lda.beta,
        iterations: cfg.lda.iterations,
        rng_seed: cfg.rng_seed,
    }
}

fn fit_one(
    strategy: Strategy,
    objects: &[Vec<Object3D>],
    mean_size: ObjectSize,
    cfg: &RunConfig,
) -> Result<(FittedModel, FitStats), CliError> {
    let rc = strategy.relation_config();
    match strategy.kind {
        StrategyKind::PairwiseKde => {
            let relations: Vec<_> = objects
                .iter()
                .filter_map(|o| scene_relations(o, rc).ok())
                .flatten()
                .map(|(_, r)| r)
                .collect();
            let model = fit_kde(&relations, BandwidthRule::Silverman, rc.pose_mode)?;
            let stats = FitStats {
                relations: relations.len(),
                ..FitStats::default()
            };
            Ok((FittedModel::Kde(model), stats))
        }
        _ => {
            let vocab = vocabulary_for(cfg, mean_size, rc.pose_mode)?;
            let corpus = build_corpus(objects, rc, &vocab)?;
            let model = fit_lda(&corpus, &vocab, &lda_params(cfg))?;
            let stats = FitStats {
                relations: objects
                    .iter()
                    .map(|o| o.len() * o.len().saturating_sub(1))
                    .sum(),
                documents: corpus.len(),
                tokens: corpus.iter().map(|d| d.words.len()).sum(),
                vocabulary_size: vocab.len(),
            };
            Ok((FittedModel::Lda(model), stats))
        }
    }
}

/// Fits every (strategy, frame) pair listed in `cfg.fit` on the given scenes.
pub fn fit_models(train: &[SceneRecord], cfg: &RunConfig) -> Result<FittedModels, CliError> {
    let objects = class_objects(train, &cfg.class);
    let sizes: Vec<ObjectSize> = objects.iter().flatten().map(|o| o.bbox.size()).collect();
    let mean_size = ObjectSize::mean(&sizes).ok_or_else(|| {
        CliError::new(
            "empty-training-set",
            format!("no `{}` annotations in the training scenes", cfg.class),
        )
    })?;
    let mut jobs = Vec::new();
    for &kind in &cfg.fit.strategies {
        if kind == StrategyKind::SlidingWindow3D {
            continue;
        }
        for &frame in &cfg.fit.frames {
            let s = Strategy::new(kind, frame);
            if !jobs.contains(&s) {
                jobs.push(s);
            }
        }
    }
    let fitted: Vec<_> = jobs
        .par_iter()
        .map(|&s| {
            fit_one(s, &objects, mean_size, cfg)
                .map(|(m, st)| (s, m, st))
                .map_err(|e| e.context(format!("fitting {}", s.label())))
        })
        .collect::<Result<_, _>>()?;
    Ok(FittedModels {
        mean_size,
        scenes: train.len(),
        objects: objects.iter().map(Vec::len).sum(),
        models: fitted,
    })
}

/// Seeds after the score threshold and non-maximum suppression.
pub fn seeds_for(detections: &[Detection2D], sampling: &SamplingConfig) -> Vec<Detection2D> {
    let kept: Vec<Detection2D> = detections
        .iter()
        .filter(|d| d.score >= sampling.score_threshold)
        .copied()
        .collect();
    nms(&kept, sampling.nms_threshold)
}

/// Per-image RNG seed: the run seed mixed with an FNV-1a hash of the image id.
pub fn image_seed(run_seed: u64, image_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in image_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ run_seed.rotate_left(32)
}

#[derive(Debug, Clone)]
pub struct ImageProposals {
    pub image_id: String,
    pub set: ProposalSet,
    pub seeds: usize,
    pub fallback: bool,
}

/// Engines for the distinct cameras among `scenes`, plus each scene's engine index.
fn engines_for(
    scenes: &[SceneRecord],
    grid: &GridSpec,
) -> Result<(Vec<ProposalEngine>, Vec<usize>), CliError> {
    let mut cameras: Vec<&CameraModel> = Vec::new();
    let mut index = Vec::with_capacity(scenes.len());
    for s in scenes {
        let i = match cameras.iter().position(|c| **c == s.camera) {
            Some(i) => i,
            None => {
                cameras.push(&s.camera);
                cameras.len() - 1
            }
        };
        index.push(i);
    }
    let engines = cameras
        .par_iter()
        .map(|c| ProposalEngine::new(c, grid))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((engines, index))
}

/// Generates ranked proposals for every scene. Output order follows `scenes`.
pub fn sample_scenes(
    scenes: &[SceneRecord],
    strategy: &Strategy,
    model: RelationModel<'_>,
    grid: &GridSpec,
    cfg: &RunConfig,
) -> Result<Vec<ImageProposals>, CliError> {
    let (engines, index) = engines_for(scenes, grid)?;
    let sw = Strategy::new(StrategyKind::SlidingWindow3D, strategy.frame);
    let sampling = &cfg.sampling;
    scenes
        .par_iter()
        .zip(index.par_iter())
        .map(|(scene, &ei)| {
            let engine = &engines[ei];
            let seeds = seeds_for(&scene.detections, sampling);
            let req = ProposalRequest {
                budget: sampling.budget,
                dedup_iou: sampling.dedup_iou,
                rng_seed: image_seed(cfg.rng_seed, &scene.image_id),
                seed_mode: sampling.seed_mode,
                include_seeds: sampling.include_seeds,
                max_stale_draws: sampling.max_stale_draws,
                ..ProposalRequest::new(seeds, sampling.budget)
            };
            let mut set = engine.generate(strategy, &req, model)?;
            let fallback = strategy.kind != StrategyKind::SlidingWindow3D
                && set
                    .proposals
                    .first()
                    .map_or(true, |p| p.provenance == Provenance::Fallback);
            if set.exhausted && sampling.top_up && strategy.kind != StrategyKind::SlidingWindow3D {
                let grid_set = engine.generate(&sw, &req, RelationModel::None)?;
                set = merge_streams(&set, &grid_set, req.budget, req.dedup_iou);
            }
            Ok(ImageProposals {
                image_id: scene.image_id.clone(),
                set,
                seeds: req.active_seeds().len(),
                fallback,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()
        .map_err(|e| e.context(format!("sampling {}", strategy.label())))
}

pub fn to_proposal_file(label: &str, images: &[ImageProposals]) -> ProposalFile {
    let mut f = ProposalFile {
        strategy: label.to_string(),
        ..ProposalFile::default()
    };
    for img in images {
        f.images.insert(
            img.image_id.clone(),
            img.set
                .proposals
                .iter()
                .map(|p| RankedProposal {
                    bbox: p.bbox,
                    provenance: p.provenance,
                })
                .collect(),
        );
    }
    f
}

/// Recall curves per proposal file and IoU threshold, in that nesting order.
pub fn evaluate(
    scenes: &[SceneRecord],
    files: &[ProposalFile],
    cfg: &RunConfig,
) -> Result<Vec<(String, RecallCurve)>, CliError> {
    let annotations: Vec<_> = scenes.iter().map(|s| s.boxes_of(&cfg.class)).collect();
    let mut out = Vec::new();
    for f in files {
        let proposals: Vec<_> = scenes.iter().map(|s| f.boxes(&s.image_id)).collect();
        let views: Vec<EvalScene<'_>> = annotations
            .iter()
            .zip(&proposals)
            .map(|(a, p)| EvalScene {
                annotations: a,
                proposals: p,
            })
            .collect();
        for &t in &cfg.eval.iou_thresholds {
            let curve = recall_curve(&views, &cfg.eval.budgets, t)
                .map_err(|e| CliError::from(e).context(format!("evaluating {}", f.strategy)))?;
            out.push((f.strategy.clone(), curve));
        }
    }
    Ok(out)
}

pub fn curves_csv(curves: &[(String, RecallCurve)]) -> Result<String, CliError> {
    Ok(write_curves_csv(
        curves.iter().map(|(l, c)| (l.as_str(), c)),
    )?)
}
