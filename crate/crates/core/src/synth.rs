//! Procedural stereo scenes with exact ground truth.
//!
//! A textured fronto-parallel background plane sits behind one rectangular
//! foreground object (optionally more, composited back to front). Both views
//! are rendered from the same texture fields, so every visible
//! correspondence is bit-exact. Background pixels just left of the object
//! are hidden in the right view; that band is exactly `d_fg − d_bg` pixels
//! wide.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::grid::{sample, LabelGrid, Pixel, ScalarGrid};
use crate::photometric::{photometric_error, photometric_error_at, PhotometricConfig};

pub const LABEL_BACKGROUND: u32 = 0;
pub const LABEL_FOREGROUND: u32 = 1;

/// Texture values are drawn uniformly from this range.
pub const TEXTURE_RANGE: (f64, f64) = (0.1, 0.9);

/// Stream ids for the texture substreams of one scene seed.
const STREAM_BACKGROUND: u64 = 0;
const STREAM_FOREGROUND: u64 = 1;
const STREAM_WINDOW: u64 = 2;
/// Extra object `i` uses stream `STREAM_EXTRA + i`.
const STREAM_EXTRA: u64 = 100;

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 as i64 && x < self.x1 as i64 && y >= self.y0 as i64 && y < self.y1 as i64
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }
}

/// Additional fronto-parallel rectangle in front of the background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub rect: Rect,
    pub disparity: u32,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Background disparity, px.
    pub d_bg: u32,
    /// Foreground disparity, px.
    pub d_fg: u32,
    /// Foreground object in the left view.
    pub fg_rect: Rect,
    /// Optional sub-rectangle of the object with its own texture but the
    /// foreground label and disparity.
    #[serde(default)]
    pub window_rect: Option<Rect>,
    #[serde(default)]
    pub texture_seed: u64,
    /// Lattice spacing of the value noise, px. Larger is smoother.
    pub texture_scale: f64,
    /// Further objects, each with its own texture. Nearer objects (larger
    /// disparity) hide farther ones; equal disparities keep list order.
    #[serde(default)]
    pub extra_objects: Vec<SceneObject>,
}

impl SceneSpec {
    /// 128×96 scene with background disparity 5 and foreground disparity 10.
    pub fn reference() -> Self {
        Self {
            width: 128,
            height: 96,
            d_bg: 5,
            d_fg: 10,
            fg_rect: Rect::new(48, 24, 88, 72),
            window_rect: None,
            texture_seed: 42,
            texture_scale: 8.0,
            extra_objects: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return contract("scene must have a positive size");
        }
        if !(self.d_bg > 0 && self.d_bg < self.d_fg) {
            return contract(format!("need 0 < d_bg < d_fg, got d_bg={} d_fg={}", self.d_bg, self.d_fg));
        }
        let r = &self.fg_rect;
        if r.x0 >= r.x1 || r.y0 >= r.y1 || r.x1 > self.width || r.y1 > self.height {
            return contract(format!("foreground rectangle {r:?} is empty or outside the image"));
        }
        if (self.d_fg - self.d_bg) as usize >= r.width() {
            return contract("disparity gap must be smaller than the foreground width");
        }
        if let Some(win) = &self.window_rect {
            if win.x0 < r.x0 || win.y0 < r.y0 || win.x1 > r.x1 || win.y1 > r.y1 || win.x0 >= win.x1 || win.y0 >= win.y1 {
                return contract(format!("window rectangle {win:?} must lie inside the foreground"));
            }
        }
        for (i, o) in self.extra_objects.iter().enumerate() {
            let r = &o.rect;
            if r.x0 >= r.x1 || r.y0 >= r.y1 || r.x1 > self.width || r.y1 > self.height {
                return contract(format!("extra object {i}: rectangle {r:?} is empty or outside the image"));
            }
            if o.disparity <= self.d_bg {
                return contract(format!("extra object {i}: disparity {} must exceed d_bg={}", o.disparity, self.d_bg));
            }
            if o.label == LABEL_BACKGROUND {
                return contract(format!("extra object {i}: label {LABEL_BACKGROUND} is reserved for the background"));
            }
        }
        if !(self.texture_scale >= 1.0 && self.texture_scale.is_finite()) {
            return contract(format!("texture_scale must be >= 1, got {}", self.texture_scale));
        }
        Ok(())
    }

    /// Width of the band hidden in the right view.
    pub fn band_width(&self) -> u32 {
        self.d_fg - self.d_bg
    }
}

/// Rendered pair with ground truth in the left view.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoPair {
    pub spec: SceneSpec,
    pub left: ScalarGrid,
    pub right: ScalarGrid,
    pub gt_disparity: ScalarGrid,
    pub labels: LabelGrid,
    /// 1 where the left pixel is hidden in the right view.
    pub occlusion_mask: LabelGrid,
    /// Disparity of the surface hiding each occluded pixel, 0 elsewhere.
    pub occluder_disparity: ScalarGrid,
}

impl StereoPair {
    /// True if the pixel's ground-truth match falls left of the right image.
    pub fn out_of_view(&self, x: usize, y: usize) -> bool {
        (x as f64) < self.gt_disparity.get(x, y)
    }

    pub fn is_occluded(&self, x: usize, y: usize) -> bool {
        self.occlusion_mask.get(x, y) == 1
    }

    /// Background pixels that are visible in the right view and inside it.
    pub fn visible_background(&self, x: usize, y: usize) -> bool {
        self.labels.get(x, y) == LABEL_BACKGROUND && !self.is_occluded(x, y) && !self.out_of_view(x, y)
    }
}

/// Bilinearly interpolated value noise on an integer lattice.
#[derive(Debug, Clone)]
pub struct ValueNoise {
    scale: f64,
    origin_x: i64,
    origin_y: i64,
    cols: usize,
    rows: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    /// Lattice covering pixels `[x_min, x_max] × [y_min, y_max]`.
    pub fn new(seed: u64, stream: u64, scale: f64, x_min: i64, x_max: i64, y_min: i64, y_max: i64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let cols = ((x_max - x_min) as f64 / scale).ceil() as usize + 2;
        let rows = ((y_max - y_min) as f64 / scale).ceil() as usize + 2;
        let (lo, hi) = TEXTURE_RANGE;
        let lattice = (0..cols * rows).map(|_| rng.gen_range(lo..=hi)).collect();
        Self { scale, origin_x: x_min, origin_y: y_min, cols, rows, lattice }
    }

    pub fn eval(&self, x: i64, y: i64) -> f64 {
        let u = (x - self.origin_x) as f64 / self.scale;
        let v = (y - self.origin_y) as f64 / self.scale;
        let (i, j) = (u.floor() as usize, v.floor() as usize);
        let (fu, fv) = (u - u.floor(), v - v.floor());
        let i1 = (i + 1).min(self.cols - 1);
        let j1 = (j + 1).min(self.rows - 1);
        let at = |c: usize, r: usize| self.lattice[r * self.cols + c];
        let top = (1.0 - fu) * at(i, j) + fu * at(i1, j);
        let bottom = (1.0 - fu) * at(i, j1) + fu * at(i1, j1);
        (1.0 - fv) * top + fv * bottom
    }
}

struct Textures {
    background: ValueNoise,
    foreground: ValueNoise,
    window: ValueNoise,
    extra: Vec<ValueNoise>,
}

impl Textures {
    fn new(spec: &SceneSpec) -> Self {
        let max_d = spec.extra_objects.iter().map(|o| o.disparity).fold(spec.d_fg, u32::max);
        let pad = (max_d + 2) as i64;
        let (xa, xb) = (-pad, spec.width as i64 + pad);
        let (ya, yb) = (0, spec.height as i64);
        let make = |stream| ValueNoise::new(spec.texture_seed, stream, spec.texture_scale, xa, xb, ya, yb);
        Self {
            background: make(STREAM_BACKGROUND),
            foreground: make(STREAM_FOREGROUND),
            window: make(STREAM_WINDOW),
            extra: (0..spec.extra_objects.len() as u64).map(|i| make(STREAM_EXTRA + i)).collect(),
        }
    }
}

/// One object surface: `None` is the primary object, `Some(i)` extra object `i`.
#[derive(Clone, Copy)]
struct Layer {
    rect: Rect,
    disparity: u32,
    label: u32,
    extra: Option<usize>,
}

impl Layer {
    fn texture(&self, spec: &SceneSpec, tex: &Textures, x: i64, y: i64) -> f64 {
        match (self.extra, &spec.window_rect) {
            (Some(i), _) => tex.extra[i].eval(x, y),
            (None, Some(win)) if win.contains(x, y) => tex.window.eval(x, y),
            (None, _) => tex.foreground.eval(x, y),
        }
    }
}

/// Object layers ordered back to front.
fn layers(spec: &SceneSpec) -> Vec<Layer> {
    let mut layers = vec![Layer { rect: spec.fg_rect, disparity: spec.d_fg, label: LABEL_FOREGROUND, extra: None }];
    layers.extend(
        spec.extra_objects
            .iter()
            .enumerate()
            .map(|(i, o)| Layer { rect: o.rect, disparity: o.disparity, label: o.label, extra: Some(i) }),
    );
    layers.sort_by_key(|l| l.disparity);
    layers
}

pub fn render_scene(spec: &SceneSpec) -> Result<StereoPair> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let tex = Textures::new(spec);
    let layers = layers(spec);
    let front = |x: usize, y: usize| layers.iter().rev().find(|l| l.rect.contains(x as i64, y as i64));

    let left = ScalarGrid::from_fn(h, w, |x, y| match front(x, y) {
        Some(l) => l.texture(spec, &tex, x as i64, y as i64),
        None => tex.background.eval(x as i64, y as i64),
    });

    // background plane shifted by d_bg, then each object shifted by its own
    // disparity, painted back to front
    let d_bg = spec.d_bg as i64;
    let mut right = ScalarGrid::from_fn(h, w, |x, y| tex.background.eval(x as i64 + d_bg, y as i64));
    for l in &layers {
        for y in l.rect.y0..l.rect.y1 {
            for x in l.rect.x0..l.rect.x1 {
                let xr = x as i64 - l.disparity as i64;
                if xr >= 0 {
                    right.set(xr as usize, y, l.texture(spec, &tex, x as i64, y as i64));
                }
            }
        }
    }

    let labels = LabelGrid::from_fn(h, w, |x, y| front(x, y).map_or(LABEL_BACKGROUND, |l| l.label));
    let gt_disparity = ScalarGrid::from_fn(h, w, |x, y| front(x, y).map_or(spec.d_bg, |l| l.disparity) as f64);
    let (occlusion_mask, occluder_disparity) = visibility(&gt_disparity);
    Ok(StereoPair { spec: spec.clone(), left, right, gt_disparity, labels, occlusion_mask, occluder_disparity })
}

/// Z-buffer visibility: a left pixel is occluded when a pixel of larger
/// disparity in the same row lands on the same right-view column.
fn visibility(disparity: &ScalarGrid) -> (LabelGrid, ScalarGrid) {
    let (h, w) = (disparity.height(), disparity.width());
    let mut mask = LabelGrid::filled(h, w, 0);
    let mut occluder = ScalarGrid::zeros(h, w);
    let mut nearest = vec![f64::NEG_INFINITY; w];
    for y in 0..h {
        nearest.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        for x in 0..w {
            let d = disparity.get(x, y);
            let xr = x as f64 - d;
            if xr >= 0.0 {
                let c = xr as usize;
                nearest[c] = nearest[c].max(d);
            }
        }
        for x in 0..w {
            let d = disparity.get(x, y);
            let xr = x as f64 - d;
            if xr >= 0.0 && nearest[xr as usize] > d {
                mask.set(x, y, 1);
                occluder.set(x, y, nearest[xr as usize]);
            }
        }
    }
    (mask, occluder)
}

/// Candidate disparities `d_lo, d_lo + step, ...` up to `d_hi` inclusive
/// (within a 1e-9 tolerance).
pub fn candidate_disparities(d_lo: f64, d_hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(d_lo > 0.0 && d_hi >= d_lo && step > 0.0) {
        return contract(format!("invalid disparity range [{d_lo}, {d_hi}] step {step}"));
    }
    let n = ((d_hi - d_lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| d_lo + i as f64 * step).collect())
}

/// Photometric error of one left pixel against the right view for each
/// candidate disparity, assuming that disparity over the whole SSIM window.
pub fn photometric_profile(
    pair: &StereoPair,
    pixel: Pixel,
    d_lo: f64,
    d_hi: f64,
    step: f64,
    cfg: &PhotometricConfig,
) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if pixel.x >= pair.left.width() || pixel.y >= pair.left.height() {
        return contract(format!("pixel {pixel:?} is outside the image"));
    }
    Ok(candidate_disparities(d_lo, d_hi, step)?
        .into_iter()
        .map(|d| {
            let e = photometric_error_at(&pair.left, pixel.x, pixel.y, cfg, |x, y| {
                sample(&pair.right, x as f64 - d, y as f64)
            });
            (d, e)
        })
        .collect())
}

/// Profiles for every pixel at once: one error map per candidate.
pub fn photometric_cost_volume(
    pair: &StereoPair,
    d_lo: f64,
    d_hi: f64,
    step: f64,
    cfg: &PhotometricConfig,
) -> Result<Vec<(f64, ScalarGrid)>> {
    candidate_disparities(d_lo, d_hi, step)?
        .into_iter()
        .map(|d| {
            let recon = ScalarGrid::from_fn(pair.left.height(), pair.left.width(), |x, y| {
                sample(&pair.right, x as f64 - d, y as f64)
            });
            Ok((d, photometric_error(&pair.left, &recon, cfg)?))
        })
        .collect()
}

/// Lowest candidate reaching the minimum error.
pub fn profile_argmin(profile: &[(f64, f64)]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(d, e) in profile {
        if best.is_none_or(|(_, be)| e < be) {
            best = Some((d, e));
        }
    }
    best.map(|(d, _)| d)
}
