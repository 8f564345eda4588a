//! Direct gradient descent on a per-pixel disparity map.
//!
//! Stands in for a depth network: the disparity of every left pixel is a
//! free parameter, the right image is warped into the left view with
//! `x_src = x − d`, and the objective is
//! `mean(L_pe) + λ_s·smoothness + λ_t·triplet(lift(d), labels)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::grid::{sample_with_grad, ScalarGrid, VectorGrid};
use crate::photometric::{photometric_mean_and_grad, smoothness_loss_and_grad, PhotometricConfig};
use crate::synth::StereoPair;
use crate::triplet::{boundary_anchors, triplet_loss_for_anchors, BoundarySet, TripletConfig};

/// Stream id of the initialization substream.
pub const STREAM_INIT: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitMode {
    Constant { value: f64 },
    GroundTruth,
    UniformRandom { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda_smooth: f64,
    /// 0 disables the triplet term.
    pub lambda_triplet: f64,
    pub triplet: TripletConfig,
    pub photometric: PhotometricConfig,
    pub init: InitMode,
    /// Seed of the initialization substream.
    pub seed: u64,
    /// Disparity is clamped to `[lo, hi]` after every step.
    pub d_bounds: (f64, f64),
}

impl OptConfig {
    /// Defaults for a scene whose foreground disparity is `d_fg`.
    pub fn for_foreground(d_fg: f64) -> Self {
        Self {
            steps: 500,
            learning_rate: 1e-2,
            lambda_smooth: 1e-3,
            lambda_triplet: 0.1,
            triplet: TripletConfig::default(),
            photometric: PhotometricConfig::default(),
            init: InitMode::GroundTruth,
            seed: 0,
            d_bounds: (0.5, 2.0 * d_fg),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return contract(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        let (lo, hi) = self.d_bounds;
        if !(lo > 0.0 && hi > lo) {
            return contract(format!("invalid disparity bounds [{lo}, {hi}]"));
        }
        if !(self.lambda_smooth >= 0.0 && self.lambda_triplet >= 0.0) {
            return contract("loss weights must be non-negative");
        }
        if let InitMode::UniformRandom { lo, hi } = self.init {
            if !(hi > lo) {
                return contract("uniform init needs hi > lo");
            }
        }
        self.triplet.validate()?;
        self.photometric.validate()
    }
}

/// Maps disparity to the two-channel feature `[d / d_hi, 1]`; the triplet
/// loss normalizes it. Squared feature distance grows strictly with the
/// disparity gap on `[0, d_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureLift {
    pub d_hi: f64,
}

impl FeatureLift {
    pub fn lift(&self, disparity: &ScalarGrid) -> VectorGrid {
        let data = disparity.data().iter().flat_map(|&d| [d / self.d_hi, 1.0]).collect();
        VectorGrid::new(disparity.height(), disparity.width(), 2, data).expect("two channels per pixel")
    }

    pub fn backward(&self, grad: &VectorGrid) -> ScalarGrid {
        let data = grad.data().chunks(2).map(|g| g[0] / self.d_hi).collect();
        ScalarGrid::new(grad.height(), grad.width(), data).expect("shape preserved")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub pe: f64,
    pub smooth: f64,
    pub triplet: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub terms: LossTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub disparity: ScalarGrid,
    pub step_index: usize,
    loss_history: Vec<LossRecord>,
}

impl OptState {
    pub fn new(disparity: ScalarGrid) -> Self {
        Self { disparity, step_index: 0, loss_history: Vec::new() }
    }

    pub fn initial(pair: &StereoPair, cfg: &OptConfig) -> Self {
        let (h, w) = (pair.left.height(), pair.left.width());
        let (lo, hi) = cfg.d_bounds;
        let disparity = match cfg.init {
            InitMode::Constant { value } => ScalarGrid::filled(h, w, value),
            InitMode::GroundTruth => pair.gt_disparity.clone(),
            InitMode::UniformRandom { lo: a, hi: b } => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(STREAM_INIT);
                ScalarGrid::from_fn(h, w, |_, _| rng.gen_range(a..b))
            }
        };
        Self::new(disparity.map(|d| d.clamp(lo, hi)))
    }

    pub fn loss_history(&self) -> &[LossRecord] {
        &self.loss_history
    }
}

/// Loss evaluation with the boundary set computed once.
pub struct Objective<'a> {
    pair: &'a StereoPair,
    cfg: &'a OptConfig,
    anchors: BoundarySet,
    lift: FeatureLift,
}

impl<'a> Objective<'a> {
    pub fn new(pair: &'a StereoPair, cfg: &'a OptConfig) -> Result<Self> {
        cfg.validate()?;
        let anchors = if cfg.lambda_triplet > 0.0 {
            boundary_anchors(&pair.labels, &cfg.triplet)?
        } else {
            BoundarySet::default()
        };
        Ok(Self { pair, cfg, anchors, lift: FeatureLift { d_hi: cfg.d_bounds.1 } })
    }

    pub fn anchors(&self) -> &BoundarySet {
        &self.anchors
    }

    pub fn lift(&self) -> FeatureLift {
        self.lift
    }

    /// Loss terms and the gradient of `total` with respect to every disparity.
    pub fn evaluate(&self, disparity: &ScalarGrid) -> Result<(LossTerms, ScalarGrid)> {
        let pair = self.pair;
        let (h, w) = (pair.left.height(), pair.left.width());
        if disparity.height() != h || disparity.width() != w {
            return contract("disparity does not match the stereo pair");
        }

        let mut recon = ScalarGrid::zeros(h, w);
        let mut slope = ScalarGrid::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let (v, gx, _) = sample_with_grad(&pair.right, x as f64 - disparity.get(x, y), y as f64);
                recon.set(x, y, v);
                slope.set(x, y, gx);
            }
        }
        let (pe, _, g_recon) = photometric_mean_and_grad(&pair.left, &recon, &self.cfg.photometric)?;
        // d recon / d disparity = -d sample / d x
        let mut grad = ScalarGrid::from_fn(h, w, |x, y| -g_recon.get(x, y) * slope.get(x, y));

        let mut smooth = 0.0;
        if self.cfg.lambda_smooth > 0.0 {
            let (s, g) = smoothness_loss_and_grad(disparity, &pair.left)?;
            smooth = s;
            for (o, v) in grad.data_mut().iter_mut().zip(g.data()) {
                *o += self.cfg.lambda_smooth * v;
            }
        }

        let mut triplet = 0.0;
        if self.cfg.lambda_triplet > 0.0 && !self.anchors.is_empty() {
            let (t, g) = triplet_loss_for_anchors(&self.lift.lift(disparity), &self.anchors, &self.cfg.triplet)?;
            triplet = t;
            for (o, v) in grad.data_mut().iter_mut().zip(self.lift.backward(&g).data()) {
                *o += self.cfg.lambda_triplet * v;
            }
        }

        let total = pe + self.cfg.lambda_smooth * smooth + self.cfg.lambda_triplet * triplet;
        Ok((LossTerms { total, pe, smooth, triplet }, grad))
    }
}

/// One-shot loss and gradient for `state` (recomputes the boundary set).
pub fn total_loss_and_grad(state: &OptState, pair: &StereoPair, cfg: &OptConfig) -> Result<(LossTerms, ScalarGrid)> {
    Objective::new(pair, cfg)?.evaluate(&state.disparity)
}

/// Occlusion-band statistics of a disparity estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FatteningReport {
    pub band_pixels: usize,
    pub mean_band_disparity: f64,
    /// Share of band pixels closer to the occluder's disparity than to their own.
    pub fattened_fraction: f64,
    /// Per image row with band pixels: `(row, leak width in px)`.
    pub leak_widths: Vec<(usize, usize)>,
}

impl FatteningReport {
    pub fn mean_leak_width(&self) -> f64 {
        if self.leak_widths.is_empty() {
            return 0.0;
        }
        self.leak_widths.iter().map(|&(_, w)| w as f64).sum::<f64>() / self.leak_widths.len() as f64
    }
}

/// A band pixel is fattened when its disparity is strictly closer to the
/// occluder's disparity than to its ground truth. The leak width of a row
/// counts the fattened pixels reached by walking left from the occluding
/// edge through each band segment.
pub fn fattening_report(state: &OptState, pair: &StereoPair) -> FatteningReport {
    let (h, w) = (pair.left.height(), pair.left.width());
    let d = &state.disparity;
    let fattened = |x: usize, y: usize| {
        let p = d.get(x, y);
        (p - pair.occluder_disparity.get(x, y)).abs() < (p - pair.gt_disparity.get(x, y)).abs()
    };
    let (mut count, mut n_fat, mut sum) = (0usize, 0usize, 0.0);
    let mut leak_widths = Vec::new();
    for y in 0..h {
        let mut row_has_band = false;
        let mut leak = 0;
        let mut x = w;
        while x > 0 {
            x -= 1;
            if !pair.is_occluded(x, y) {
                continue;
            }
            row_has_band = true;
            // x is the right end of a segment; walk it leftwards
            let mut run_open = true;
            let mut xx = x as isize;
            while xx >= 0 && pair.is_occluded(xx as usize, y) {
                let ux = xx as usize;
                count += 1;
                sum += d.get(ux, y);
                if fattened(ux, y) {
                    n_fat += 1;
                    if run_open {
                        leak += 1;
                    }
                } else {
                    run_open = false;
                }
                xx -= 1;
            }
            x = (xx + 1) as usize;
        }
        if row_has_band {
            leak_widths.push((y, leak));
        }
    }
    FatteningReport {
        band_pixels: count,
        mean_band_disparity: if count > 0 { sum / count as f64 } else { 0.0 },
        fattened_fraction: if count > 0 { n_fat as f64 / count as f64 } else { 0.0 },
        leak_widths,
    }
}

/// Plain gradient descent with clamping, calling `observe` after the
/// initial evaluation and after every step.
pub fn run_with(
    pair: &StereoPair,
    cfg: &OptConfig,
    mut observe: impl FnMut(&OptState) -> Result<()>,
) -> Result<(OptState, FatteningReport)> {
    let objective = Objective::new(pair, cfg)?;
    let mut state = OptState::initial(pair, cfg);
    let (lo, hi) = cfg.d_bounds;
    let n = state.disparity.len() as f64;
    for step in 0..=cfg.steps {
        let (terms, grad) = objective.evaluate(&state.disparity)?;
        if !terms.total.is_finite() || !grad.all_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("loss {} is not finite; lower the learning rate", terms.total),
            });
        }
        state.loss_history.push(LossRecord { step, terms });
        state.step_index = step;
        observe(&state)?;
        if step == cfg.steps {
            break;
        }
        // per-pixel step: the mean objective's gradient is rescaled by the pixel count
        for (d, g) in state.disparity.data_mut().iter_mut().zip(grad.data()) {
            *d = (*d - cfg.learning_rate * n * g).clamp(lo, hi);
        }
    }
    let report = fattening_report(&state, pair);
    Ok((state, report))
}

pub fn run(pair: &StereoPair, cfg: &OptConfig) -> Result<(OptState, FatteningReport)> {
    run_with(pair, cfg, |_| Ok(()))
}

/// Share of visible background pixels whose disparity is within 0.5 px of
/// the ground truth.
pub fn background_accuracy(state: &OptState, pair: &StereoPair) -> f64 {
    let (h, w) = (pair.left.height(), pair.left.width());
    let (mut n, mut ok) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if pair.visible_background(x, y) {
                n += 1;
                if (state.disparity.get(x, y) - pair.gt_disparity.get(x, y)).abs() <= 0.5 {
                    ok += 1;
                }
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        ok as f64 / n as f64
    }
}
