//! Kernel density estimate over pairwise relations.
//!
//! Product kernel: Gaussian in `r_x` and `r_z`, wrapped Gaussian in `r_theta`. The
//! wrapped kernel is truncated to three replicas (shifts of -1, 0 and +1 periods), which
//! is accurate while the angular bandwidth stays below about one radian.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::relations::{PairwiseRelation, PoseMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KdeError {
    #[error("cannot fit a density to an empty training set")]
    EmptyTrainingSet,
    #[error("density undefined with a zero bandwidth")]
    ZeroBandwidth,
    #[error("invalid bandwidth: {0}")]
    InvalidBandwidth(String),
    #[error("relation angle {0} outside the {1} range")]
    AngleOutOfRange(f64, &'static str),
    #[error("kde model file, line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// `h = 1.06 σ n^(-1/5)` per dimension; circular standard deviation for the angle.
    Silverman,
    Fixed(Bandwidth),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    samples: Vec<PairwiseRelation>,
    bandwidth: Bandwidth,
    pose_mode: PoseMode,
}

const SILVERMAN_FACTOR: f64 = 1.06;
const FORMAT_HEADER: &str = "ctxprop-kde v1";

fn sample_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Circular standard deviation `sqrt(-2 ln R)` of angles with the given period.
fn circular_std(values: impl Iterator<Item = f64>, period: f64) -> f64 {
    let scale = 2.0 * PI / period;
    let (mut c, mut s, mut n) = (0.0, 0.0, 0usize);
    for v in values {
        let (sin, cos) = (v * scale).sin_cos();
        c += cos;
        s += sin;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    let r = ((c * c + s * s).sqrt() / n as f64).min(1.0);
    if r >= 1.0 - 1e-15 {
        return 0.0;
    }
    (-2.0 * r.ln()).sqrt() / scale
}

pub fn silverman_bandwidth(samples: &[PairwiseRelation], pose_mode: PoseMode) -> Bandwidth {
    let n = samples.len().max(1) as f64;
    let factor = SILVERMAN_FACTOR * n.powf(-0.2);
    Bandwidth {
        x: factor * sample_std(samples.iter().map(|r| r.r_x)),
        z: factor * sample_std(samples.iter().map(|r| r.r_z)),
        theta: factor * circular_std(samples.iter().map(|r| r.r_theta), pose_mode.period()),
    }
}

fn gaussian(d: f64, h: f64) -> f64 {
    let u = d / h;
    (-0.5 * u * u).exp() / (h * (2.0 * PI).sqrt())
}

/// Fits a density to a relation sample.
pub fn fit_kde(
    relations: &[PairwiseRelation],
    rule: BandwidthRule,
    pose_mode: PoseMode,
) -> Result<KdeModel, KdeError> {
    if relations.is_empty() {
        return Err(KdeError::EmptyTrainingSet);
    }
    let bandwidth = match rule {
        BandwidthRule::Silverman => silverman_bandwidth(relations, pose_mode),
        BandwidthRule::Fixed(b) => b,
    };
    KdeModel::new(relations.to_vec(), bandwidth, pose_mode)
}

impl KdeModel {
    pub fn new(
        samples: Vec<PairwiseRelation>,
        bandwidth: Bandwidth,
        pose_mode: PoseMode,
    ) -> Result<Self, KdeError> {
        if samples.is_empty() {
            return Err(KdeError::EmptyTrainingSet);
        }
        for h in [bandwidth.x, bandwidth.z, bandwidth.theta] {
            if !(h >= 0.0 && h.is_finite()) {
                return Err(KdeError::InvalidBandwidth(format!("{h}")));
            }
        }
        for r in &samples {
            if !pose_mode.contains(r.r_theta) {
                return Err(KdeError::AngleOutOfRange(r.r_theta, pose_mode.as_str()));
            }
        }
        Ok(Self {
            samples,
            bandwidth,
            pose_mode,
        })
    }

    pub fn samples(&self) -> &[PairwiseRelation] {
        &self.samples
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.bandwidth
    }

    pub fn pose_mode(&self) -> PoseMode {
        self.pose_mode
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Density at `r`; the angle is first wrapped into the model's range.
    pub fn density(&self, r: &PairwiseRelation) -> Result<f64, KdeError> {
        let h = self.bandwidth;
        if h.x == 0.0 || h.z == 0.0 || h.theta == 0.0 {
            return Err(KdeError::ZeroBandwidth);
        }
        let period = self.pose_mode.period();
        let theta = self.pose_mode.wrap(r.r_theta);
        let total: f64 = self
            .samples
            .iter()
            .map(|s| {
                let dtheta = theta - s.r_theta;
                let angular: f64 = [-period, 0.0, period]
                    .iter()
                    .map(|k| gaussian(dtheta + k, h.theta))
                    .sum();
                gaussian(r.r_x - s.r_x, h.x) * gaussian(r.r_z - s.r_z, h.z) * angular
            })
            .sum();
        Ok(total / self.samples.len() as f64)
    }

    /// One draw: a stored sample chosen uniformly, perturbed by kernel noise.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> PairwiseRelation {
        let s = &self.samples[rng.gen_range(0..self.samples.len())];
        let nx: f64 = rng.sample(StandardNormal);
        let nz: f64 = rng.sample(StandardNormal);
        let nt: f64 = rng.sample(StandardNormal);
        let h = self.bandwidth;
        PairwiseRelation {
            r_x: s.r_x + h.x * nx,
            r_z: s.r_z + h.z * nz,
            r_theta: self.pose_mode.wrap(s.r_theta + h.theta * nt),
        }
    }

    /// `n` draws from a generator seeded with `rng_seed`.
    pub fn sample(&self, rng_seed: u64, n: usize) -> Vec<PairwiseRelation> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }

    /// Line-oriented text form: header, pose mode, bandwidth, sample count, then one
    /// `r_x r_z r_theta` row per sample. Floats use the shortest exact representation.
    pub fn to_text(&self) -> String {
        let h = self.bandwidth;
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "pose_mode {}", self.pose_mode.as_str());
        let _ = writeln!(out, "bandwidth {} {} {}", h.x, h.z, h.theta);
        let _ = writeln!(out, "samples {}", self.samples.len());
        for s in &self.samples {
            let _ = writeln!(out, "{} {} {}", s.r_x, s.r_z, s.r_theta);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, KdeError> {
        let err = |line: usize, msg: &str| KdeError::Format {
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, &format!("missing {what}")))
        };

        let (ln, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(err(ln, "unsupported header"));
        }
        let (ln, mode) = next("pose_mode")?;
        let pose_mode = mode
            .strip_prefix("pose_mode ")
            .and_then(PoseMode::parse)
            .ok_or_else(|| err(ln, "expected `pose_mode full|elongation`"))?;
        let (ln, bw) = next("bandwidth")?;
        let h = bw
            .strip_prefix("bandwidth ")
            .and_then(|r| parse_floats::<3>(r))
            .ok_or_else(|| err(ln, "expected `bandwidth hx hz htheta`"))?;
        let (ln, count) = next("samples")?;
        let n: usize = count
            .strip_prefix("samples ")
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| err(ln, "expected `samples <count>`"))?;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, row) = next("sample row")?;
            let [r_x, r_z, r_theta] =
                parse_floats::<3>(row).ok_or_else(|| err(ln, "expected three floats"))?;
            samples.push(PairwiseRelation { r_x, r_z, r_theta });
        }
        Self::new(
            samples,
            Bandwidth {
                x: h[0],
                z: h[1],
                theta: h[2],
            },
            pose_mode,
        )
    }
}

fn parse_floats<const N: usize>(s: &str) -> Option<[f64; N]> {
    let mut out = [0.0; N];
    let mut it = s.split_whitespace();
    for slot in out.iter_mut() {
        *slot = it.next()?.parse().ok()?;
    }
    it.next().is_none().then_some(out)
}
