//! Proposal generation from seed detections.
//!
//! Seeds are lifted onto the 3D proposal grid, then a strategy produces an ordered
//! stream of 2D boxes:
//!
//! * `SlidingWindow3D` walks the projected grid in lattice order.
//! * `PairwiseKde` draws relations from a [`KdeModel`], cycling over the seeds.
//! * `HigherOrderTopics` / `HigherOrderElongation` cycle over (seed, topic) pairs and
//!   emit each topic's words in descending probability.
//!
//! Sampled targets snap to the nearest grid box before projection. Candidates that fail
//! to project, fall outside the grid or overlap a kept proposal by more than the dedup
//! threshold are skipped without consuming budget. Without usable seeds the budget is
//! served from the grid and tagged as fallback.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::KdeModel;
use crate::geometry::{
    iou_2d, Box2D, Box3D, CameraModel, Detection2D, GeometryError, GridSpec, Object3D,
    ProjectedGrid,
};
use crate::relations::{apply_relation, Frame, PairwiseRelation, PoseMode, RelationConfig};
use crate::topics::{LdaModel, WordId};

/// Near-identical boxes only.
pub const DEFAULT_DEDUP_IOU: f64 = 0.95;
/// Consecutive KDE draws without a new proposal before the stream counts as exhausted.
pub const DEFAULT_MAX_STALE_DRAWS: usize = 5000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProposalError {
    #[error("strategy {0} requires a {1} model")]
    ModelMissing(StrategyKind, &'static str),
    #[error("model pose mode {found} does not match strategy {strategy}")]
    ModelMismatch {
        strategy: StrategyKind,
        found: &'static str,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "sliding-window")]
    SlidingWindow3D,
    #[serde(rename = "pairwise")]
    PairwiseKde,
    #[serde(rename = "hor")]
    HigherOrderTopics,
    #[serde(rename = "hor-elongation")]
    HigherOrderElongation,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::SlidingWindow3D,
        StrategyKind::PairwiseKde,
        StrategyKind::HigherOrderTopics,
        StrategyKind::HigherOrderElongation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::SlidingWindow3D => "sliding-window",
            StrategyKind::PairwiseKde => "pairwise",
            StrategyKind::HigherOrderTopics => "hor",
            StrategyKind::HigherOrderElongation => "hor-elongation",
        }
    }

    /// Pose mode of the relations this strategy consumes.
    pub fn pose_mode(self) -> PoseMode {
        match self {
            StrategyKind::HigherOrderElongation => PoseMode::Elongation,
            _ => PoseMode::FullPose,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// A strategy and, for relation strategies, the frame its relations live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub frame: Frame,
}

impl Strategy {
    pub fn new(kind: StrategyKind, frame: Frame) -> Self {
        Self { kind, frame }
    }

    pub fn relation_config(&self) -> RelationConfig {
        RelationConfig {
            frame: self.frame,
            pose_mode: self.kind.pose_mode(),
        }
    }

    /// Short label such as `hor-cc` or `sliding-window`.
    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::SlidingWindow3D => self.kind.as_str().to_string(),
            k => format!("{}-{}", k.as_str(), self.frame.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedMode {
    #[default]
    All,
    /// Only the highest-scoring seed, ties resolved by input order.
    TopScoring,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalRequest {
    pub seeds: Vec<Detection2D>,
    pub budget: usize,
    pub dedup_iou: f64,
    pub rng_seed: u64,
    pub seed_mode: SeedMode,
    /// Emit the seed boxes themselves ahead of the sampled proposals.
    pub include_seeds: bool,
    pub max_stale_draws: usize,
}

impl ProposalRequest {
    pub fn new(seeds: Vec<Detection2D>, budget: usize) -> Self {
        Self {
            seeds,
            budget,
            dedup_iou: DEFAULT_DEDUP_IOU,
            rng_seed: 0,
            seed_mode: SeedMode::All,
            include_seeds: true,
            max_stale_draws: DEFAULT_MAX_STALE_DRAWS,
        }
    }

    fn validate(&self) -> Result<(), ProposalError> {
        if self.budget == 0 {
            return Err(ProposalError::InvalidRequest(
                "budget must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.dedup_iou) {
            return Err(ProposalError::InvalidRequest(format!(
                "dedup_iou {} outside [0, 1]",
                self.dedup_iou
            )));
        }
        Ok(())
    }

    /// Seeds after applying the seed mode.
    pub fn active_seeds(&self) -> Vec<Detection2D> {
        match self.seed_mode {
            SeedMode::All => self.seeds.clone(),
            SeedMode::TopScoring => self
                .seeds
                .iter()
                .fold(None::<&Detection2D>, |best, d| match best {
                    Some(b) if b.score >= d.score => Some(b),
                    _ => Some(d),
                })
                .into_iter()
                .copied()
                .collect(),
        }
    }
}

/// Relation model backing a strategy.
#[derive(Debug, Clone, Copy)]
pub enum RelationModel<'a> {
    None,
    Kde(&'a KdeModel),
    Lda(&'a LdaModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Seed {
        seed: usize,
    },
    Grid,
    Fallback,
    PairwiseSample {
        seed: usize,
    },
    TopicSample {
        seed: usize,
        topic: usize,
        word: u32,
    },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Seed { seed } => write!(f, "seed:{seed}"),
            Provenance::Grid => f.write_str("grid"),
            Provenance::Fallback => f.write_str("fallback"),
            Provenance::PairwiseSample { seed } => write!(f, "pairwise:{seed}"),
            Provenance::TopicSample { seed, topic, word } => {
                write!(f, "topic:{topic}:{seed}:{word}")
            }
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad provenance `{s}`");
        let mut parts = s.split(':');
        let tag = parts.next().ok_or_else(bad)?;
        let mut num = || -> Result<usize, String> {
            parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)
        };
        let p = match tag {
            "seed" => Provenance::Seed { seed: num()? },
            "grid" => Provenance::Grid,
            "fallback" => Provenance::Fallback,
            "pairwise" => Provenance::PairwiseSample { seed: num()? },
            "topic" => {
                let topic = num()?;
                let seed = num()?;
                let word = num()? as u32;
                Provenance::TopicSample { seed, topic, word }
            }
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: Box2D,
    /// Grid box the proposal was projected from; `None` for seed boxes.
    pub location: Option<Box3D>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProposalSet {
    pub proposals: Vec<Proposal>,
    /// The strategy ran out of candidates before filling the budget.
    pub exhausted: bool,
}

impl ProposalSet {
    pub fn boxes(&self) -> Vec<Box2D> {
        self.proposals.iter().map(|p| p.bbox).collect()
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }
}

/// Budgeted, deduplicated accumulation of proposals.
struct Collector {
    budget: usize,
    dedup_iou: f64,
    tried_cells: Vec<bool>,
    out: Vec<Proposal>,
}

impl Collector {
    fn new(budget: usize, dedup_iou: f64, cells: usize) -> Self {
        Self {
            budget,
            dedup_iou,
            tried_cells: vec![false; cells],
            out: Vec::with_capacity(budget.min(4096)),
        }
    }

    fn full(&self) -> bool {
        self.out.len() >= self.budget
    }

    fn offer(&mut self, bbox: Box2D, location: Option<Box3D>, provenance: Provenance) -> bool {
        if self.full()
            || self
                .out
                .iter()
                .any(|p| iou_2d(&p.bbox, &bbox) > self.dedup_iou)
        {
            return false;
        }
        self.out.push(Proposal {
            bbox,
            location,
            provenance,
        });
        true
    }

    /// Offers a grid box; each cell is considered at most once.
    fn offer_cell(&mut self, grid: &ProjectedGrid, cell: usize, provenance: Provenance) -> bool {
        if std::mem::replace(&mut self.tried_cells[cell], true) {
            return false;
        }
        match grid.projection(cell) {
            Some(&b) => self.offer(b, Some(grid.boxes()[cell]), provenance),
            None => false,
        }
    }

    fn finish(self, exhausted: bool) -> ProposalSet {
        ProposalSet {
            exhausted: exhausted && !self.full(),
            proposals: self.out,
        }
    }
}

/// A camera and proposal grid with projections cached, reusable across images that
/// share the calibration.
#[derive(Debug, Clone)]
pub struct ProposalEngine {
    camera: CameraModel,
    grid_spec: GridSpec,
    grid: ProjectedGrid,
}

impl ProposalEngine {
    pub fn new(camera: &CameraModel, grid_spec: &GridSpec) -> Result<Self, ProposalError> {
        Ok(Self {
            camera: camera.clone(),
            grid_spec: grid_spec.clone(),
            grid: ProjectedGrid::new(grid_spec, camera)?,
        })
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn grid(&self) -> &ProjectedGrid {
        &self.grid
    }

    /// Lifts seeds onto the grid, dropping those that overlap no projectable box.
    pub fn lift_seeds(&self, seeds: &[Detection2D]) -> Vec<(usize, Object3D)> {
        seeds
            .iter()
            .enumerate()
            .filter_map(|(i, d)| self.grid.lift(d).ok().map(|o| (i, o)))
            .collect()
    }

    fn sliding_window(&self, c: &mut Collector, provenance: Provenance) -> bool {
        for cell in 0..self.grid.len() {
            if c.full() {
                return false;
            }
            c.offer_cell(&self.grid, cell, provenance);
        }
        true
    }

    fn target_cell(
        &self,
        seed: &Object3D,
        rel: &PairwiseRelation,
        cfg: RelationConfig,
    ) -> Option<usize> {
        let (x, z, theta) = apply_relation(seed.bbox.x, seed.bbox.z, seed.bbox.theta, rel, cfg);
        self.grid_spec.snap(x, z, theta)
    }

    fn pairwise(
        &self,
        c: &mut Collector,
        seeds: &[(usize, Object3D)],
        model: &KdeModel,
        cfg: RelationConfig,
        req: &ProposalRequest,
    ) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(req.rng_seed);
        let mut stale = 0usize;
        loop {
            for (si, seed) in seeds {
                if c.full() {
                    return false;
                }
                let rel = model.draw(&mut rng);
                let accepted = self.target_cell(seed, &rel, cfg).is_some_and(|cell| {
                    c.offer_cell(&self.grid, cell, Provenance::PairwiseSample { seed: *si })
                });
                if accepted {
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= req.max_stale_draws {
                        return true;
                    }
                }
            }
        }
    }

    fn topics(
        &self,
        c: &mut Collector,
        seeds: &[(usize, Object3D)],
        model: &LdaModel,
        cfg: RelationConfig,
    ) -> bool {
        let vocab = model.vocab();
        let num_topics = model.num_topics();
        let mut cursors = vec![0usize; seeds.len() * num_topics];
        loop {
            let mut live = false;
            for (s, (si, seed)) in seeds.iter().enumerate() {
                for t in 0..num_topics {
                    if c.full() {
                        return false;
                    }
                    let ranked = &model.ranked_words(t).expect("topic index in range");
                    let cursor = &mut cursors[s * num_topics + t];
                    while *cursor < ranked.len() {
                        let word = ranked[*cursor];
                        *cursor += 1;
                        let rel = vocab.dequantize(WordId(word));
                        let provenance = Provenance::TopicSample {
                            seed: *si,
                            topic: t,
                            word,
                        };
                        let accepted = self
                            .target_cell(seed, &rel, cfg)
                            .is_some_and(|cell| c.offer_cell(&self.grid, cell, provenance));
                        if accepted {
                            break;
                        }
                    }
                    live |= *cursor < ranked.len();
                }
            }
            if !live {
                return true;
            }
        }
    }

    /// Produces the ranked proposal stream for one image.
    pub fn generate(
        &self,
        strategy: &Strategy,
        req: &ProposalRequest,
        model: RelationModel<'_>,
    ) -> Result<ProposalSet, ProposalError> {
        req.validate()?;
        let kind = strategy.kind;
        let cfg = strategy.relation_config();
        match (kind, model) {
            (StrategyKind::SlidingWindow3D, _) => {}
            (StrategyKind::PairwiseKde, RelationModel::Kde(m)) => {
                if m.pose_mode() != cfg.pose_mode {
                    return Err(ProposalError::ModelMismatch {
                        strategy: kind,
                        found: m.pose_mode().as_str(),
                    });
                }
            }
            (StrategyKind::PairwiseKde, _) => return Err(ProposalError::ModelMissing(kind, "kde")),
            (_, RelationModel::Lda(m)) => {
                if m.vocab().pose_mode != cfg.pose_mode {
                    return Err(ProposalError::ModelMismatch {
                        strategy: kind,
                        found: m.vocab().pose_mode.as_str(),
                    });
                }
            }
            (_, _) => return Err(ProposalError::ModelMissing(kind, "lda")),
        }

        let mut c = Collector::new(req.budget, req.dedup_iou, self.grid.len());
        if kind == StrategyKind::SlidingWindow3D {
            let exhausted = self.sliding_window(&mut c, Provenance::Grid);
            return Ok(c.finish(exhausted));
        }

        let active = req.active_seeds();
        let seeds = self.lift_seeds(&active);
        if seeds.is_empty() {
            let exhausted = self.sliding_window(&mut c, Provenance::Fallback);
            return Ok(c.finish(exhausted));
        }
        if req.include_seeds {
            for &(si, _) in &seeds {
                c.offer(active[si].bbox, None, Provenance::Seed { seed: si });
            }
        }
        let exhausted = match model {
            RelationModel::Kde(m) => self.pairwise(&mut c, &seeds, m, cfg, req),
            RelationModel::Lda(m) => self.topics(&mut c, &seeds, m, cfg),
            RelationModel::None => unreachable!("checked above"),
        };
        Ok(c.finish(exhausted))
    }
}

/// One-shot generation; builds the projected grid for this call.
pub fn generate(
    camera: &CameraModel,
    grid: &GridSpec,
    strategy: &Strategy,
    req: &ProposalRequest,
    model: RelationModel<'_>,
) -> Result<ProposalSet, ProposalError> {
    ProposalEngine::new(camera, grid)?.generate(strategy, req, model)
}

/// Keeps `primary` in order and tops it up from `fallback`, skipping fallback boxes that
/// overlap anything kept by more than `dedup_iou`.
pub fn merge_streams(
    primary: &ProposalSet,
    fallback: &ProposalSet,
    budget: usize,
    dedup_iou: f64,
) -> ProposalSet {
    let mut out: Vec<Proposal> = primary.proposals.iter().take(budget).copied().collect();
    for p in &fallback.proposals {
        if out.len() >= budget {
            break;
        }
        if out.iter().all(|k| iou_2d(&k.bbox, &p.bbox) <= dedup_iou) {
            out.push(*p);
        }
    }
    ProposalSet {
        exhausted: out.len() < budget && primary.exhausted && fallback.exhausted,
        proposals: out,
    }
}
