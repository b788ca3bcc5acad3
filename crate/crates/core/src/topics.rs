//! Higher-order relations as topics over quantized relation words.
//!
//! Relations are binned into a word vocabulary of cells `(cell_x, cell_z, theta_bin)`.
//! Each object in a training scene becomes a document holding the words of the
//! relations it sources. An LDA model fitted by collapsed Gibbs sampling then yields
//! topics `p(w|t)`, each a recurring multi-object arrangement.
//!
//! Word ids are row-major with the angle bin fastest:
//! `id = (iz * nx + ix) * theta_bins + it`.

use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::geometry::Object3D;
use crate::relations::{scene_relations, PairwiseRelation, PoseMode, RelationConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopicError {
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("relation ({0}, {1}) outside the vocabulary extents")]
    OutOfExtent(f64, f64),
    #[error("corpus has no documents")]
    EmptyCorpus,
    #[error("invalid lda parameters: {0}")]
    InvalidParams(String),
    #[error("topic {topic} out of range for {num_topics} topics")]
    TopicOutOfRange { topic: usize, num_topics: usize },
    #[error("lda model file, line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Default number of angular bins per relation cell.
pub const DEFAULT_THETA_BINS: usize = 8;
/// Default number of topics.
pub const DEFAULT_NUM_TOPICS: usize = 16;
/// Default relation extents, meters.
pub const DEFAULT_X_EXTENT: (f64, f64) = (-30.0, 30.0);
pub const DEFAULT_Z_EXTENT: (f64, f64) = (-60.0, 60.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WordId(pub u32);

impl WordId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub cell_x: f64,
    pub cell_z: f64,
    pub theta_bins: usize,
    pub x_extent: (f64, f64),
    pub z_extent: (f64, f64),
    pub pose_mode: PoseMode,
    nx: usize,
    nz: usize,
}

fn cell_count(extent: (f64, f64), cell: f64) -> Option<usize> {
    let span = (extent.1 - extent.0) / cell;
    let n = span.round();
    ((span - n).abs() < 1e-6 && n >= 1.0).then_some(n as usize)
}

impl Vocabulary {
    /// Builds a vocabulary whose extents are exact multiples of the cell sizes.
    pub fn new(
        cell_x: f64,
        cell_z: f64,
        theta_bins: usize,
        x_extent: (f64, f64),
        z_extent: (f64, f64),
        pose_mode: PoseMode,
    ) -> Result<Self, TopicError> {
        let bad = |m: String| Err(TopicError::InvalidVocabulary(m));
        if !(cell_x > 0.0 && cell_z > 0.0) {
            return bad(format!(
                "cell sizes must be positive, got {cell_x} x {cell_z}"
            ));
        }
        if theta_bins == 0 {
            return bad("theta_bins must be at least 1".into());
        }
        let Some(nx) = cell_count(x_extent, cell_x) else {
            return bad(format!(
                "x extent {x_extent:?} is not a multiple of {cell_x}"
            ));
        };
        let Some(nz) = cell_count(z_extent, cell_z) else {
            return bad(format!(
                "z extent {z_extent:?} is not a multiple of {cell_z}"
            ));
        };
        if nx
            .checked_mul(nz)
            .and_then(|v| v.checked_mul(theta_bins))
            .map_or(true, |v| v > u32::MAX as usize)
        {
            return bad("vocabulary too large".into());
        }
        Ok(Self {
            cell_x,
            cell_z,
            theta_bins,
            x_extent,
            z_extent,
            pose_mode,
            nx,
            nz,
        })
    }

    /// Vocabulary with square cells of `cell` meters whose extents are the smallest
    /// cell multiples, anchored at zero, that cover the requested ranges.
    pub fn covering(
        cell: f64,
        theta_bins: usize,
        x_range: (f64, f64),
        z_range: (f64, f64),
        pose_mode: PoseMode,
    ) -> Result<Self, TopicError> {
        if !(cell > 0.0) {
            return Err(TopicError::InvalidVocabulary(format!(
                "cell size must be positive, got {cell}"
            )));
        }
        // Cells are centered on multiples of `cell`, so a zero offset sits mid-cell.
        let snap = |r: (f64, f64)| {
            (
                ((r.0 / cell - 0.5 + 1e-9).floor() + 0.5) * cell,
                ((r.1 / cell + 0.5 - 1e-9).ceil() - 0.5) * cell,
            )
        };
        Self::new(
            cell,
            cell,
            theta_bins,
            snap(x_range),
            snap(z_range),
            pose_mode,
        )
    }

    /// Vocabulary with `W/2` cells for mean object width `W`.
    pub fn for_mean_width(
        mean_width: f64,
        theta_bins: usize,
        x_range: (f64, f64),
        z_range: (f64, f64),
        pose_mode: PoseMode,
    ) -> Result<Self, TopicError> {
        Self::covering(mean_width / 2.0, theta_bins, x_range, z_range, pose_mode)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz * self.theta_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn theta_width(&self) -> f64 {
        self.pose_mode.period() / self.theta_bins as f64
    }

    /// Angular bin `k` is centered on `k · width`, so relative pose 0 sits mid-bin.
    fn theta_bin(&self, theta: f64) -> usize {
        let w = self.theta_width();
        let k = ((theta + 0.5 * w) / w).floor() as i64;
        k.rem_euclid(self.theta_bins as i64) as usize
    }

    pub fn quantize(&self, r: &PairwiseRelation) -> Result<WordId, TopicError> {
        let fx = ((r.r_x - self.x_extent.0) / self.cell_x).floor();
        let fz = ((r.r_z - self.z_extent.0) / self.cell_z).floor();
        if !(fx >= 0.0 && fz >= 0.0 && fx < self.nx as f64 && fz < self.nz as f64) {
            return Err(TopicError::OutOfExtent(r.r_x, r.r_z));
        }
        let (ix, iz) = (fx as usize, fz as usize);
        let it = self.theta_bin(r.r_theta);
        Ok(WordId(((iz * self.nx + ix) * self.theta_bins + it) as u32))
    }

    /// Center of the word's cell.
    pub fn dequantize(&self, w: WordId) -> PairwiseRelation {
        let i = w.index();
        let it = i % self.theta_bins;
        let ix = (i / self.theta_bins) % self.nx;
        let iz = i / (self.theta_bins * self.nx);
        PairwiseRelation {
            r_x: self.x_extent.0 + (ix as f64 + 0.5) * self.cell_x,
            r_z: self.z_extent.0 + (iz as f64 + 0.5) * self.cell_z,
            r_theta: self.pose_mode.wrap(it as f64 * self.theta_width()),
        }
    }

    fn describe(&self) -> String {
        format!(
            "vocabulary {} {} {} {} {} {} {} {}",
            self.cell_x,
            self.cell_z,
            self.theta_bins,
            self.x_extent.0,
            self.x_extent.1,
            self.z_extent.0,
            self.z_extent.1,
            self.pose_mode.as_str()
        )
    }
}

/// Words sourced at one object of one scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub scene: usize,
    pub object: usize,
    pub words: Vec<WordId>,
}

/// One document per object in every scene with at least two objects. Relations outside
/// the vocabulary extents are dropped, and so are documents left without words.
pub fn build_corpus(
    scenes: &[Vec<Object3D>],
    cfg: RelationConfig,
    vocab: &Vocabulary,
) -> Result<Vec<Document>, TopicError> {
    let mut docs = Vec::new();
    for (si, objects) in scenes.iter().enumerate() {
        let Ok(relations) = scene_relations(objects, cfg) else {
            continue;
        };
        let mut words: Vec<Vec<WordId>> = vec![Vec::new(); objects.len()];
        for (src, r) in &relations {
            if let Ok(w) = vocab.quantize(r) {
                words[*src].push(w);
            }
        }
        for (oi, ws) in words.into_iter().enumerate() {
            if !ws.is_empty() {
                docs.push(Document {
                    scene: si,
                    object: oi,
                    words: ws,
                });
            }
        }
    }
    if docs.is_empty() {
        return Err(TopicError::EmptyCorpus);
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdaParams {
    pub num_topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub rng_seed: u64,
}

impl LdaParams {
    /// Griffiths–Steyvers priors `α = 50/T`, `β = 0.01` with 1000 sweeps.
    pub fn with_topics(num_topics: usize, rng_seed: u64) -> Self {
        Self {
            num_topics,
            alpha: 50.0 / num_topics.max(1) as f64,
            beta: 0.01,
            iterations: 1000,
            rng_seed,
        }
    }

    fn validate(&self) -> Result<(), TopicError> {
        let bad = |m: &str| Err(TopicError::InvalidParams(m.into()));
        if self.num_topics == 0 {
            return bad("num_topics must be at least 1");
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return bad("alpha and beta must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        Ok(())
    }
}

impl Default for LdaParams {
    fn default() -> Self {
        Self::with_topics(DEFAULT_NUM_TOPICS, 0)
    }
}

/// State of a collapsed Gibbs chain over token-topic assignments.
pub struct GibbsSampler<'a> {
    docs: &'a [Document],
    vocab_size: usize,
    num_topics: usize,
    alpha: f64,
    beta: f64,
    assignments: Vec<Vec<u32>>,
    doc_topic: Vec<u32>,
    topic_word: Vec<u32>,
    topic_total: Vec<u32>,
    rng: ChaCha8Rng,
    weights: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    /// Initializes every token with a uniformly random topic.
    pub fn new(
        docs: &'a [Document],
        vocab_size: usize,
        params: &LdaParams,
    ) -> Result<Self, TopicError> {
        params.validate()?;
        if docs.is_empty() || docs.iter().all(|d| d.words.is_empty()) {
            return Err(TopicError::EmptyCorpus);
        }
        if let Some(w) = docs
            .iter()
            .flat_map(|d| &d.words)
            .find(|w| w.index() >= vocab_size)
        {
            return Err(TopicError::InvalidParams(format!(
                "word {} outside vocabulary of {vocab_size}",
                w.0
            )));
        }
        let t = params.num_topics;
        let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
        let mut doc_topic = vec![0u32; docs.len() * t];
        let mut topic_word = vec![0u32; t * vocab_size];
        let mut topic_total = vec![0u32; t];
        let assignments = docs
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                doc.words
                    .iter()
                    .map(|w| {
                        let z = rng.gen_range(0..t);
                        doc_topic[d * t + z] += 1;
                        topic_word[z * vocab_size + w.index()] += 1;
                        topic_total[z] += 1;
                        z as u32
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            docs,
            vocab_size,
            num_topics: t,
            alpha: params.alpha,
            beta: params.beta,
            assignments,
            doc_topic,
            topic_word,
            topic_total,
            rng,
            weights: vec![0.0; t],
        })
    }

    /// Resamples every token once, in document order.
    pub fn sweep(&mut self) {
        let (t_count, v) = (self.num_topics, self.vocab_size);
        let vbeta = v as f64 * self.beta;
        for (d, doc) in self.docs.iter().enumerate() {
            for (i, w) in doc.words.iter().enumerate() {
                let w = w.index();
                let old = self.assignments[d][i] as usize;
                self.doc_topic[d * t_count + old] -= 1;
                self.topic_word[old * v + w] -= 1;
                self.topic_total[old] -= 1;

                let mut total = 0.0;
                for t in 0..t_count {
                    let p = (self.doc_topic[d * t_count + t] as f64 + self.alpha)
                        * (self.topic_word[t * v + w] as f64 + self.beta)
                        / (self.topic_total[t] as f64 + vbeta);
                    total += p;
                    self.weights[t] = total;
                }
                let u = self.rng.gen::<f64>() * total;
                let new = self
                    .weights
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(t_count - 1);

                self.assignments[d][i] = new as u32;
                self.doc_topic[d * t_count + new] += 1;
                self.topic_word[new * v + w] += 1;
                self.topic_total[new] += 1;
            }
        }
    }

    pub fn token_count(&self) -> usize {
        self.docs.iter().map(|d| d.words.len()).sum()
    }

    pub fn doc_topic_total(&self) -> usize {
        self.doc_topic.iter().map(|&c| c as usize).sum()
    }

    pub fn topic_word_total(&self) -> usize {
        self.topic_word.iter().map(|&c| c as usize).sum()
    }

    /// `log p(w, z)` of the collapsed model at the current assignments.
    pub fn log_likelihood(&self) -> f64 {
        let (t_count, v) = (self.num_topics, self.vocab_size);
        let (a, b) = (self.alpha, self.beta);
        let mut ll = 0.0;
        for t in 0..t_count {
            ll += ln_gamma(v as f64 * b) - ln_gamma(self.topic_total[t] as f64 + v as f64 * b);
            for w in 0..v {
                let c = self.topic_word[t * v + w];
                if c > 0 {
                    ll += ln_gamma(c as f64 + b) - ln_gamma(b);
                }
            }
        }
        for (d, doc) in self.docs.iter().enumerate() {
            ll += ln_gamma(t_count as f64 * a)
                - ln_gamma(doc.words.len() as f64 + t_count as f64 * a);
            for t in 0..t_count {
                ll += ln_gamma(self.doc_topic[d * t_count + t] as f64 + a) - ln_gamma(a);
            }
        }
        ll
    }

    /// `p(w|t) = (n_tw + β) / (n_t + Vβ)` at the current state.
    pub fn phi(&self) -> Vec<f64> {
        let v = self.vocab_size;
        let vbeta = v as f64 * self.beta;
        let mut phi = Vec::with_capacity(self.num_topics * v);
        for t in 0..self.num_topics {
            let denom = self.topic_total[t] as f64 + vbeta;
            phi.extend(
                self.topic_word[t * v..(t + 1) * v]
                    .iter()
                    .map(|&c| (c as f64 + self.beta) / denom),
            );
        }
        phi
    }
}

/// Fitted topics: a `T × V` row-stochastic matrix with the vocabulary it indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    num_topics: usize,
    phi: Vec<f64>,
    alpha: f64,
    beta: f64,
    vocab: Vocabulary,
    ranked: Vec<Vec<u32>>,
}

const FORMAT_HEADER: &str = "ctxprop-lda v1";
const ROW_TOLERANCE: f64 = 1e-9;

/// Runs `params.iterations` Gibbs sweeps and reads `phi` from the final state.
pub fn fit_lda(
    corpus: &[Document],
    vocab: &Vocabulary,
    params: &LdaParams,
) -> Result<LdaModel, TopicError> {
    let mut chain = GibbsSampler::new(corpus, vocab.len(), params)?;
    for _ in 0..params.iterations {
        chain.sweep();
    }
    LdaModel::new(
        params.num_topics,
        chain.phi(),
        params.alpha,
        params.beta,
        vocab.clone(),
    )
}

impl LdaModel {
    /// Validates shape, positivity and row sums.
    pub fn new(
        num_topics: usize,
        phi: Vec<f64>,
        alpha: f64,
        beta: f64,
        vocab: Vocabulary,
    ) -> Result<Self, TopicError> {
        let v = vocab.len();
        let shape_err = |m: String| TopicError::InvalidParams(m);
        if num_topics == 0 || v == 0 || phi.len() != num_topics * v {
            return Err(shape_err(format!(
                "phi has {} entries, expected {num_topics} x {v}",
                phi.len()
            )));
        }
        for (t, row) in phi.chunks(v).enumerate() {
            if row.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
                return Err(shape_err(format!(
                    "topic {t} has a non-positive probability"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(shape_err(format!("topic {t} sums to {sum}")));
            }
        }
        let ranked = phi
            .chunks(v)
            .map(|row| {
                let mut idx: Vec<u32> = (0..v as u32).collect();
                idx.sort_by(|&a, &b| row[b as usize].total_cmp(&row[a as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Ok(Self {
            num_topics,
            phi,
            alpha,
            beta,
            vocab,
            ranked,
        })
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn topic(&self, topic: usize) -> Result<&[f64], TopicError> {
        let v = self.vocab.len();
        if topic >= self.num_topics {
            return Err(TopicError::TopicOutOfRange {
                topic,
                num_topics: self.num_topics,
            });
        }
        Ok(&self.phi[topic * v..(topic + 1) * v])
    }

    /// Word ids of a topic in descending probability, ties by smaller id.
    pub fn ranked_words(&self, topic: usize) -> Result<&[u32], TopicError> {
        self.topic(topic)?;
        Ok(&self.ranked[topic])
    }

    /// Categorical draw from `p(w|topic)`.
    pub fn sample_word(&self, topic: usize, rng_seed: u64) -> Result<WordId, TopicError> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        self.draw_word(topic, &mut rng)
    }

    pub fn draw_word<R: Rng + ?Sized>(
        &self,
        topic: usize,
        rng: &mut R,
    ) -> Result<WordId, TopicError> {
        let row = self.topic(topic)?;
        let dist = WeightedIndex::new(row).map_err(|e| TopicError::InvalidParams(e.to_string()))?;
        Ok(WordId(dist.sample(rng) as u32))
    }

    /// The `k` most probable words of a topic.
    pub fn topic_top_words(
        &self,
        topic: usize,
        k: usize,
    ) -> Result<Vec<(WordId, f64)>, TopicError> {
        let row = self.topic(topic)?;
        Ok(self.ranked[topic]
            .iter()
            .take(k)
            .map(|&w| (WordId(w), row[w as usize]))
            .collect())
    }

    /// Header, vocabulary line, topic shape line, then one line per topic: the row
    /// minimum followed by `word:probability` for every entry above it. Fitted rows are
    /// flat outside the observed words, so files stay small for large vocabularies.
    pub fn to_text(&self) -> String {
        let v = self.vocab.len();
        let mut out = String::with_capacity(4096);
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "{}", self.vocab.describe());
        let _ = writeln!(
            out,
            "topics {} {} {} {}",
            self.num_topics, v, self.alpha, self.beta
        );
        for row in self.phi.chunks(v) {
            let floor = row.iter().copied().fold(f64::INFINITY, f64::min);
            let _ = write!(out, "{floor}");
            for (w, p) in row.iter().enumerate() {
                if *p != floor {
                    let _ = write!(out, " {w}:{p}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TopicError> {
        let err = |line: usize, msg: String| TopicError::Format { line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("missing {what}")))
        };

        let (ln, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(err(ln, "unsupported header".into()));
        }
        let (ln, vline) = next("vocabulary")?;
        let fields: Vec<&str> = vline.split_whitespace().collect();
        if fields.len() != 9 || fields[0] != "vocabulary" {
            return Err(err(ln, "expected `vocabulary` with 8 fields".into()));
        }
        let f = |i: usize| -> Result<f64, TopicError> {
            fields[i]
                .parse()
                .map_err(|_| err(ln, format!("bad number `{}`", fields[i])))
        };
        let theta_bins: usize = fields[3]
            .parse()
            .map_err(|_| err(ln, format!("bad bin count `{}`", fields[3])))?;
        let pose_mode = PoseMode::parse(fields[8])
            .ok_or_else(|| err(ln, format!("bad pose mode `{}`", fields[8])))?;
        let vocab = Vocabulary::new(
            f(1)?,
            f(2)?,
            theta_bins,
            (f(4)?, f(5)?),
            (f(6)?, f(7)?),
            pose_mode,
        )
        .map_err(|e| err(ln, e.to_string()))?;

        let (ln, tline) = next("topics")?;
        let tf: Vec<&str> = tline.split_whitespace().collect();
        if tf.len() != 5 || tf[0] != "topics" {
            return Err(err(ln, "expected `topics T V alpha beta`".into()));
        }
        let parse_err = |s: &str| err(ln, format!("bad value `{s}`"));
        let num_topics: usize = tf[1].parse().map_err(|_| parse_err(tf[1]))?;
        let v: usize = tf[2].parse().map_err(|_| parse_err(tf[2]))?;
        let alpha: f64 = tf[3].parse().map_err(|_| parse_err(tf[3]))?;
        let beta: f64 = tf[4].parse().map_err(|_| parse_err(tf[4]))?;
        if v != vocab.len() {
            return Err(err(
                ln,
                format!("V = {v} but vocabulary has {} words", vocab.len()),
            ));
        }
        let mut phi = Vec::with_capacity(num_topics * v);
        for t in 0..num_topics {
            let (ln, row) = next("topic row")?;
            let mut toks = row.split_whitespace();
            let floor = toks
                .next()
                .ok_or_else(|| err(ln, format!("topic {t} is empty")))?;
            let floor: f64 = floor
                .parse()
                .map_err(|_| err(ln, format!("bad probability `{floor}`")))?;
            let start = phi.len();
            phi.resize(start + v, floor);
            for tok in toks {
                let entry = tok.split_once(':').and_then(|(w, p)| {
                    Some((
                        w.parse::<usize>().ok().filter(|&w| w < v)?,
                        p.parse::<f64>().ok()?,
                    ))
                });
                let (w, p) = entry.ok_or_else(|| err(ln, format!("bad entry `{tok}`")))?;
                phi[start + w] = p;
            }
        }
        Self::new(num_topics, phi, alpha, beta, vocab).map_err(|e| err(0, e.to_string()))
    }
}
