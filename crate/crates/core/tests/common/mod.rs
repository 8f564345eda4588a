//! Finite-difference gradient probes shared by the integration tests.
#![allow(dead_code)]

use depthtriplet::grid::{l2_normalize, sample_with_grad};
use depthtriplet::optimizer::{total_loss_and_grad, FeatureLift, OptConfig, OptState};
use depthtriplet::synth::StereoPair;
use depthtriplet::triplet::{
    anchor_neg_distance, anchor_pos_distance, boundary_anchors, triplet_loss, AnchorPartition, LossMode,
    NegativeMode, TripletConfig,
};
use depthtriplet::{LabelGrid, VectorGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Probes within this of a hinge, a min switch or an |.| kink are skipped.
pub const KINK_GAP: f64 = 1e-4;
/// Relative errors are taken against at least this multiple of the
/// round-off noise of a central difference, `ε·|L| / h`.
pub const NOISE_MULTIPLE: f64 = 1e4;

#[derive(Debug, Default, Clone, Copy)]
pub struct ProbeStats {
    pub checked: usize,
    pub excluded: usize,
    pub max_rel: f64,
}

impl ProbeStats {
    fn record(&mut self, analytic: f64, numeric: f64, floor: f64) {
        self.checked += 1;
        self.max_rel = self.max_rel.max(rel_error(analytic, numeric, floor));
    }
}

pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Denominator floor for a central difference of step `h` on a loss of
/// magnitude `loss`.
pub fn noise_floor(loss: f64, h: f64) -> f64 {
    NOISE_MULTIPLE * f64::EPSILON * loss.abs().max(1.0) / h
}

/// Anchors whose term depends on `pixel` (the anchor itself or a patch member).
fn touching(anchors: &[AnchorPartition], idx: usize) -> impl Iterator<Item = &AnchorPartition> {
    anchors
        .iter()
        .filter(move |a| a.anchor() == idx || a.positives().binary_search(&idx).is_ok() || a.negatives().binary_search(&idx).is_ok())
}

/// True if any anchor touching `idx` sits near a non-differentiable point
/// of its term on the normalized features.
fn triplet_kink(normalized: &VectorGrid, anchors: &[AnchorPartition], idx: usize, cfg: &TripletConfig) -> bool {
    touching(anchors, idx).any(|a| {
        let d_pos = anchor_pos_distance(normalized, a).unwrap();
        let d_neg = anchor_neg_distance(normalized, a, cfg.negative_mode).unwrap();
        let hinge = match cfg.loss_mode {
            LossMode::Baseline => d_pos - d_neg + cfg.margin_m,
            LossMode::Isolated => cfg.margin_m_prime - d_neg,
        };
        if hinge.abs() < KINK_GAP {
            return true;
        }
        if cfg.negative_mode == NegativeMode::Min {
            let fa = normalized.vector(a.anchor());
            let mut d: Vec<f64> = a
                .negatives()
                .iter()
                .map(|&j| fa.iter().zip(normalized.vector(j)).map(|(x, y)| (x - y) * (x - y)).sum())
                .collect();
            d.sort_by(f64::total_cmp);
            if d.len() > 1 && d[1] - d[0] < KINK_GAP {
                return true;
            }
        }
        false
    })
}

fn random_index_in_support(rng: &mut ChaCha8Rng, support: &[usize]) -> usize {
    support[rng.gen_range(0..support.len())]
}

/// Compares `total_loss_and_grad` against central differences at
/// `wanted` random pixels of one disparity state.
pub fn probe_total_loss(pair: &StereoPair, cfg: &OptConfig, state: &OptState, wanted: usize, rng: &mut ChaCha8Rng) -> ProbeStats {
    // the objective is a mean over every pixel, so single-pixel gradients are
    // tiny and a smaller step drowns in cancellation error
    let h_step = 1e-4;
    let (h, w) = (pair.left.height(), pair.left.width());
    let (terms, grad) = total_loss_and_grad(state, pair, cfg).unwrap();
    let floor = noise_floor(terms.total, h_step);
    let normalized = l2_normalize(&FeatureLift { d_hi: cfg.d_bounds.1 }.lift(&state.disparity));
    let anchors = if cfg.lambda_triplet > 0.0 { boundary_anchors(&pair.labels, &cfg.triplet).unwrap().anchors } else { Vec::new() };
    let d = &state.disparity;
    let mut stats = ProbeStats::default();
    let mut attempts = 0;
    while stats.checked < wanted {
        attempts += 1;
        assert!(attempts < 50 * wanted, "too many kink-adjacent probes");
        let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let idx = y * w + x;
        let dp = d.get(x, y);
        let sx = x as f64 - dp;
        let frac = sx - sx.floor();
        let (recon, slope, _) = sample_with_grad(&pair.right, sx, y as f64);
        let lattice = frac < 2.0 * h_step || frac > 1.0 - 2.0 * h_step;
        let l1 = (pair.left.get(x, y) - recon).abs() < 4.0 * h_step * (1.0 + slope.abs());
        let neighbours = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)];
        let smooth = neighbours.iter().any(|&(ox, oy)| {
            let (nx, ny) = (x as i64 + ox, y as i64 + oy);
            nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && (d.get(nx as usize, ny as usize) - dp).abs() < 4.0 * h_step
        });
        if lattice || l1 || smooth || triplet_kink(&normalized, &anchors, idx, &cfg.triplet) {
            stats.excluded += 1;
            continue;
        }
        let eval = |v: f64| {
            let mut s = OptState::new(d.clone());
            s.disparity.set(x, y, v);
            total_loss_and_grad(&s, pair, cfg).unwrap().0.total
        };
        let numeric = (eval(dp + h_step) - eval(dp - h_step)) / (2.0 * h_step);
        stats.record(grad.get(x, y), numeric, floor);
    }
    stats
}

/// Random two-region labels (a random line through the grid) with a few
/// isolated flips.
pub fn random_labels(h: usize, w: usize, rng: &mut ChaCha8Rng) -> LabelGrid {
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (cx, cy) = (rng.gen_range(0.3..0.7) * w as f64, rng.gen_range(0.3..0.7) * h as f64);
    let mut labels = LabelGrid::from_fn(h, w, |x, y| {
        let s = (x as f64 - cx) * angle.cos() + (y as f64 - cy) * angle.sin();
        u32::from(s > 0.0)
    });
    for _ in 0..(h * w / 40) {
        let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
        labels.set(x, y, 1 - labels.get(x, y));
    }
    labels
}

pub fn random_features(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> VectorGrid {
    let data = (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    VectorGrid::new(h, w, c, data).unwrap()
}

/// Compares `triplet_loss` against central differences at `wanted`
/// random feature coordinates that some boundary anchor depends on.
pub fn probe_triplet(
    features: &VectorGrid,
    labels: &LabelGrid,
    cfg: &TripletConfig,
    wanted: usize,
    rng: &mut ChaCha8Rng,
) -> ProbeStats {
    let h_step = 1e-6;
    let (loss, grad) = triplet_loss(features, labels, cfg).unwrap();
    let floor = noise_floor(loss, h_step);
    let anchors = boundary_anchors(labels, cfg).unwrap().anchors;
    assert!(!anchors.is_empty(), "state has no boundary anchors");
    let normalized = l2_normalize(features);
    let mut support: Vec<usize> = anchors
        .iter()
        .flat_map(|a| std::iter::once(a.anchor()).chain(a.positives().iter().copied()).chain(a.negatives().iter().copied()))
        .collect();
    support.sort_unstable();
    support.dedup();
    let c = features.channels();
    let mut stats = ProbeStats::default();
    let mut attempts = 0;
    while stats.checked < wanted {
        attempts += 1;
        assert!(attempts < 50 * wanted, "too many kink-adjacent probes");
        let idx = random_index_in_support(rng, &support);
        let ch = rng.gen_range(0..c);
        if triplet_kink(&normalized, &anchors, idx, cfg) {
            stats.excluded += 1;
            continue;
        }
        let eval = |delta: f64| {
            let mut f = features.clone();
            f.vector_mut(idx)[ch] += delta;
            triplet_loss(&f, labels, cfg).unwrap().0
        };
        let numeric = (eval(h_step) - eval(-h_step)) / (2.0 * h_step);
        stats.record(grad.vector(idx)[ch], numeric, floor);
    }
    stats
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The four negative/loss-mode combinations.
pub fn all_modes(base: &TripletConfig) -> [TripletConfig; 4] {
    [
        TripletConfig { loss_mode: LossMode::Baseline, negative_mode: NegativeMode::Mean, ..*base },
        TripletConfig { loss_mode: LossMode::Baseline, negative_mode: NegativeMode::Min, ..*base },
        TripletConfig { loss_mode: LossMode::Isolated, negative_mode: NegativeMode::Mean, ..*base },
        TripletConfig { loss_mode: LossMode::Isolated, negative_mode: NegativeMode::Min, ..*base },
    ]
}
