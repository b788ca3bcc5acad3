//! Context-based class-specific object proposals.
//!
//! Seed detections are grounded in 3D through a calibrated camera, and new proposals
//! are sampled around them from spatial relations learned on annotated scenes: a
//! kernel density over pairwise relations, or topics of an LDA model over quantized
//! relation words. The crate also covers the dense 3D sliding-window baseline, KITTI
//! style file I/O, synthetic scene generation and recall-vs-budget evaluation.

pub mod angle;
pub mod dataset;
pub mod density;
pub mod evaluation;
pub mod geometry;
pub mod proposals;
pub mod relations;
pub mod topics;

pub use dataset::{DatasetError, SceneRecord};
pub use density::{fit_kde, Bandwidth, BandwidthRule, KdeError, KdeModel};
pub use evaluation::{
    match_proposals, recall_curve, EvalError, EvalScene, MatchResult, RecallCurve,
};
pub use geometry::{
    generate_grid, iou_2d, lift_detection, nms, pose_to_viewpoint, project_box, viewpoint_to_pose,
    Box2D, Box3D, CameraModel, Detection2D, GeometryError, GridSpec, Object3D, ObjectSize,
    ProjectedGrid,
};
pub use proposals::{
    generate, merge_streams, Proposal, ProposalEngine, ProposalError, ProposalRequest, ProposalSet,
    Provenance, RelationModel, SeedMode, Strategy, StrategyKind,
};
pub use relations::{
    apply_relation, compute_pairwise, elongation_fold, scene_relations, Frame, PairwiseRelation,
    PoseMode, RelationConfig,
};
pub use topics::{
    build_corpus, fit_lda, Document, GibbsSampler, LdaModel, LdaParams, TopicError, Vocabulary,
    WordId,
};
