//! Ranked proposals on disk.
//!
//! ```text
//! # ctxprop proposals v1 strategy=hor-cc
//! 000123 0 512.25 170.5 640 250.75 seed:0
//! 000123 1 300 160.125 380.5 210 topic:3:0:4711
//! ```
//!
//! One row per proposal: image id, rank within the image, `x1 y1 x2 y2`, provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ctxprop_core::{Box2D, Provenance};

use crate::error::CliError;

const HEADER_PREFIX: &str = "# ctxprop proposals v1 strategy=";

#[derive(Debug, Clone, PartialEq)]
pub struct RankedProposal {
    pub bbox: Box2D,
    pub provenance: Provenance,
}

/// Proposals of one strategy, keyed by image id, each list in rank order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProposalFile {
    pub strategy: String,
    pub images: BTreeMap<String, Vec<RankedProposal>>,
}

impl ProposalFile {
    pub fn boxes(&self, image_id: &str) -> Vec<Box2D> {
        self.images
            .get(image_id)
            .map(|v| v.iter().map(|p| p.bbox).collect())
            .unwrap_or_default()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER_PREFIX}{}", self.strategy);
        for (id, props) in &self.images {
            for (rank, p) in props.iter().enumerate() {
                let b = &p.bbox;
                let _ = writeln!(
                    out,
                    "{id} {rank} {} {} {} {} {}",
                    b.x1, b.y1, b.x2, b.y2, p.provenance
                );
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad =
            |line: usize, msg: String| CliError::new("proposals", format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let strategy = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix(HEADER_PREFIX))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad(1, format!("expected header `{HEADER_PREFIX}<label>`")))?
            .to_string();
        let mut images: BTreeMap<String, Vec<RankedProposal>> = BTreeMap::new();
        for (ln, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            if f.len() != 7 {
                return Err(bad(ln, format!("expected 7 fields, found {}", f.len())));
            }
            let rank: usize = f[1]
                .parse()
                .map_err(|_| bad(ln, format!("bad rank `{}`", f[1])))?;
            let mut c = [0.0; 4];
            for (k, v) in c.iter_mut().enumerate() {
                *v = f[2 + k]
                    .parse()
                    .map_err(|_| bad(ln, format!("bad coordinate `{}`", f[2 + k])))?;
            }
            let bbox = Box2D::new(c[0], c[1], c[2], c[3])
                .ok_or_else(|| bad(ln, "degenerate box".into()))?;
            let provenance: Provenance = f[6].parse().map_err(|e: String| bad(ln, e))?;
            let list = images.entry(f[0].to_string()).or_default();
            if rank != list.len() {
                return Err(bad(
                    ln,
                    format!("rank {rank} out of sequence, expected {}", list.len()),
                ));
            }
            list.push(RankedProposal { bbox, provenance });
        }
        Ok(Self { strategy, images })
    }
}
