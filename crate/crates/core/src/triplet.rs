//! Patch-based triplet loss over depth features.
//!
//! Every pixel is a potential anchor. Inside its local patch, pixels sharing
//! the anchor's semantic label are positives and all others negatives. Only
//! anchors with more than `k` positives and more than `k` negatives take part
//! (the boundary set). Two families of per-anchor terms are supported:
//!
//! * `Baseline`: `[D⁺ − D⁻ + m]₊`
//! * `Isolated`: `D⁺ + [m′ − D⁻]₊`
//!
//! where `D⁺` is the mean squared feature distance from the anchor to its
//! positives and `D⁻` is either the mean or the minimum (hardest negative)
//! squared distance to its negatives. The loss is the mean of the per-anchor
//! terms over the boundary set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::grid::{check_shape, l2_normalize, l2_normalize_backward, patch_indices, LabelGrid, Pixel, VectorGrid};

/// Negatives whose distance is within this of the minimum count as tied.
pub const MIN_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Mean over all negatives.
    Mean,
    /// Hardest negative: the smallest distance.
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Baseline,
    Isolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripletConfig {
    pub patch_size: usize,
    /// Anchors need strictly more than `k` positives and `k` negatives.
    pub k: usize,
    /// Margin of the baseline form.
    pub margin_m: f64,
    /// Margin on the negative hinge of the isolated form.
    pub margin_m_prime: f64,
    pub negative_mode: NegativeMode,
    pub loss_mode: LossMode,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            patch_size: 5,
            k: 4,
            margin_m: 0.3,
            margin_m_prime: 0.65,
            negative_mode: NegativeMode::Min,
            loss_mode: LossMode::Isolated,
        }
    }
}

impl TripletConfig {
    /// The original formulation: mean negatives, baseline hinge.
    pub fn baseline() -> Self {
        Self { negative_mode: NegativeMode::Mean, loss_mode: LossMode::Baseline, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 3 || self.patch_size.is_multiple_of(2) {
            return contract(format!("patch_size must be odd and >= 3, got {}", self.patch_size));
        }
        if !(self.margin_m > 0.0 && self.margin_m_prime > 0.0) {
            return contract("triplet margins must be positive");
        }
        Ok(())
    }

    /// Per-anchor loss term from already computed distances.
    pub fn anchor_term(&self, d_pos: f64, d_neg: f64) -> f64 {
        match self.loss_mode {
            LossMode::Baseline => (d_pos - d_neg + self.margin_m).max(0.0),
            LossMode::Isolated => d_pos + (self.margin_m_prime - d_neg).max(0.0),
        }
    }
}

/// An anchor with its positive and negative patch members, both kept in
/// ascending flat-index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorPartition {
    anchor: usize,
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

impl AnchorPartition {
    /// Fails if the sets overlap or contain the anchor.
    pub fn new(anchor: usize, mut positives: Vec<usize>, mut negatives: Vec<usize>) -> Result<Self> {
        positives.sort_unstable();
        negatives.sort_unstable();
        if positives.windows(2).any(|w| w[0] == w[1]) || negatives.windows(2).any(|w| w[0] == w[1]) {
            return contract("duplicate pixel in partition");
        }
        if positives.contains(&anchor) || negatives.contains(&anchor) {
            return contract("anchor cannot be its own positive or negative");
        }
        if positives.iter().any(|p| negatives.binary_search(p).is_ok()) {
            return contract("positives and negatives overlap");
        }
        Ok(Self { anchor, positives, negatives })
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn positives(&self) -> &[usize] {
        &self.positives
    }

    pub fn negatives(&self) -> &[usize] {
        &self.negatives
    }
}

/// Anchors passing the `|P⁺| > k ∧ |P⁻| > k` filter.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BoundarySet {
    pub anchors: Vec<AnchorPartition>,
}

impl BoundarySet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

pub fn partition_patch(labels: &LabelGrid, anchor: Pixel, patch_size: usize) -> Result<AnchorPartition> {
    let (h, w) = (labels.height(), labels.width());
    let members = patch_indices(anchor, patch_size, h, w)?;
    let own = labels.get(anchor.x, anchor.y);
    let (positives, negatives) = members.into_iter().partition(|&j| labels.labels()[j] == own);
    Ok(AnchorPartition { anchor: anchor.y * w + anchor.x, positives, negatives })
}

pub fn boundary_anchors(labels: &LabelGrid, cfg: &TripletConfig) -> Result<BoundarySet> {
    cfg.validate()?;
    let (h, w) = (labels.height(), labels.width());
    let mut anchors = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let part = partition_patch(labels, Pixel::new(x, y), cfg.patch_size)?;
            if part.positives.len() > cfg.k && part.negatives.len() > cfg.k {
                anchors.push(part);
            }
        }
    }
    Ok(BoundarySet { anchors })
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean squared distance from the anchor to its positives. Expects
/// normalized features.
pub fn anchor_pos_distance(features: &VectorGrid, part: &AnchorPartition) -> Result<f64> {
    if part.positives.is_empty() {
        return contract("anchor has no positives");
    }
    Ok(mean_distance(features, part.anchor, &part.positives))
}

/// Anchor-to-negative distance: mean over all negatives or the hardest one.
pub fn anchor_neg_distance(features: &VectorGrid, part: &AnchorPartition, mode: NegativeMode) -> Result<f64> {
    if part.negatives.is_empty() {
        return contract("anchor has no negatives");
    }
    Ok(match mode {
        NegativeMode::Mean => mean_distance(features, part.anchor, &part.negatives),
        NegativeMode::Min => hardest_negative(features, part.anchor, &part.negatives).1,
    })
}

fn mean_distance(features: &VectorGrid, anchor: usize, members: &[usize]) -> f64 {
    let fa = features.vector(anchor);
    members.iter().map(|&j| sq_dist(fa, features.vector(j))).sum::<f64>() / members.len() as f64
}

/// Lowest-index negative among those tied (within [`MIN_TIE_EPS`]) for the
/// smallest distance, and that distance.
fn hardest_negative(features: &VectorGrid, anchor: usize, negatives: &[usize]) -> (usize, f64) {
    let fa = features.vector(anchor);
    let dists: Vec<f64> = negatives.iter().map(|&j| sq_dist(fa, features.vector(j))).collect();
    let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let pick = dists.iter().position(|&d| d <= min + MIN_TIE_EPS).unwrap_or(0);
    (negatives[pick], min)
}

/// Sparse gradient of one anchor term: `(pixel, channel-vector)` pairs.
struct AnchorGrad {
    term: f64,
    entries: Vec<(usize, Vec<f64>)>,
}

/// Adds `scale · ∂D/∂f` for a mean distance over `members` into `out`.
fn push_mean_grad(features: &VectorGrid, anchor: usize, members: &[usize], scale: f64, out: &mut Vec<(usize, Vec<f64>)>) {
    let fa = features.vector(anchor);
    let c = fa.len();
    let coef = 2.0 * scale / members.len() as f64;
    let mut ga = vec![0.0; c];
    for &j in members {
        let fj = features.vector(j);
        let gj: Vec<f64> = (0..c).map(|ch| -coef * (fa[ch] - fj[ch])).collect();
        for ch in 0..c {
            ga[ch] -= gj[ch];
        }
        out.push((j, gj));
    }
    out.push((anchor, ga));
}

fn push_single_grad(features: &VectorGrid, anchor: usize, other: usize, scale: f64, out: &mut Vec<(usize, Vec<f64>)>) {
    let (fa, fj) = (features.vector(anchor), features.vector(other));
    let ga: Vec<f64> = fa.iter().zip(fj).map(|(a, b)| 2.0 * scale * (a - b)).collect();
    out.push((other, ga.iter().map(|v| -v).collect()));
    out.push((anchor, ga));
}

fn anchor_grad(features: &VectorGrid, part: &AnchorPartition, cfg: &TripletConfig) -> AnchorGrad {
    let d_pos = mean_distance(features, part.anchor, &part.positives);
    let (d_neg, hardest) = match cfg.negative_mode {
        NegativeMode::Mean => (mean_distance(features, part.anchor, &part.negatives), None),
        NegativeMode::Min => {
            let (j, d) = hardest_negative(features, part.anchor, &part.negatives);
            (d, Some(j))
        }
    };
    let term = cfg.anchor_term(d_pos, d_neg);
    let (pos_scale, neg_scale) = match cfg.loss_mode {
        LossMode::Baseline if d_pos - d_neg + cfg.margin_m > 0.0 => (1.0, -1.0),
        LossMode::Baseline => (0.0, 0.0),
        LossMode::Isolated if cfg.margin_m_prime - d_neg > 0.0 => (1.0, -1.0),
        LossMode::Isolated => (1.0, 0.0),
    };
    let mut entries = Vec::new();
    if pos_scale != 0.0 {
        push_mean_grad(features, part.anchor, &part.positives, pos_scale, &mut entries);
    }
    if neg_scale != 0.0 {
        match hardest {
            None => push_mean_grad(features, part.anchor, &part.negatives, neg_scale, &mut entries),
            Some(j) => push_single_grad(features, part.anchor, j, neg_scale, &mut entries),
        }
    }
    AnchorGrad { term, entries }
}

/// Triplet loss over precomputed boundary anchors. `features` are raw
/// (unnormalized); the returned gradient is with respect to them.
pub fn triplet_loss_for_anchors(
    features: &VectorGrid,
    anchors: &BoundarySet,
    cfg: &TripletConfig,
) -> Result<(f64, VectorGrid)> {
    cfg.validate()?;
    let (h, w, c) = (features.height(), features.width(), features.channels());
    if anchors.is_empty() {
        return Ok((0.0, VectorGrid::zeros(h, w, c)));
    }
    let normalized = l2_normalize(features);
    let parts: Vec<AnchorGrad> = anchors.anchors.par_iter().map(|p| anchor_grad(&normalized, p, cfg)).collect();

    // sequential reduction in anchor order keeps results independent of thread count
    let inv = 1.0 / anchors.len() as f64;
    let mut loss = 0.0;
    let mut grad_n = VectorGrid::zeros(h, w, c);
    for part in &parts {
        loss += part.term;
        for (idx, g) in &part.entries {
            for (o, v) in grad_n.vector_mut(*idx).iter_mut().zip(g) {
                *o += v * inv;
            }
        }
    }
    Ok((loss * inv, l2_normalize_backward(features, &grad_n)))
}

/// Triplet loss and its gradient with respect to the raw features.
pub fn triplet_loss(features: &VectorGrid, labels: &LabelGrid, cfg: &TripletConfig) -> Result<(f64, VectorGrid)> {
    check_shape(features, labels, "triplet_loss")?;
    let anchors = boundary_anchors(labels, cfg)?;
    triplet_loss_for_anchors(features, &anchors, cfg)
}
