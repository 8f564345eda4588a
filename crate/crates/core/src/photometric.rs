//! Photometric reprojection error (SSIM + L1) and edge-aware disparity
//! smoothness, with analytic gradients for the direct optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::grid::{check_shape, ScalarGrid};

/// SSIM window side; fixed.
pub const SSIM_WINDOW: usize = 3;

/// Smallest admissible mean disparity in the smoothness term.
const MIN_MEAN_DISPARITY: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhotometricConfig {
    /// Weight of the SSIM term; `1 - alpha` weighs the L1 term.
    pub alpha: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self { alpha: 0.85, ssim_c1: 0.01 * 0.01, ssim_c2: 0.03 * 0.03 }
    }
}

impl PhotometricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return contract(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return contract("SSIM constants must be positive");
        }
        Ok(())
    }
}

/// Reflect-pads index `i` (which may be -1 or `n`) into `0..n`, mirroring
/// about the edge pixel.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Flat indices of the reflected 3×3 window around `(x, y)`. Indices repeat
/// at the border, each occurrence carries weight 1/9.
#[inline]
fn window(x: usize, y: usize, h: usize, w: usize) -> [usize; 9] {
    let mut out = [0usize; 9];
    let mut k = 0;
    for dy in -1isize..=1 {
        let yy = reflect(y as isize + dy, h);
        for dx in -1isize..=1 {
            out[k] = yy * w + reflect(x as isize + dx, w);
            k += 1;
        }
    }
    out
}

/// Window moments and the SSIM value, with the partials needed for the
/// backward pass.
struct SsimTerms {
    value: f64,
    /// dSSIM / d mean(b)
    d_mu_b: f64,
    /// dSSIM / d E[b²]
    d_sq_b: f64,
    /// dSSIM / d E[ab]
    d_ab: f64,
}

fn ssim_terms(a: &[f64], b: &[f64], idx: &[usize; 9], c1: f64, c2: f64) -> SsimTerms {
    let n = 9.0;
    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &i in idx {
        let (va, vb) = (a[i], b[i]);
        ma += va;
        mb += vb;
        saa += va * va;
        sbb += vb * vb;
        sab += va * vb;
    }
    ma /= n;
    mb /= n;
    saa /= n;
    sbb /= n;
    sab /= n;
    let var_a = saa - ma * ma;
    let var_b = sbb - mb * mb;
    let cov = sab - ma * mb;
    let n1 = 2.0 * ma * mb + c1;
    let n2 = 2.0 * cov + c2;
    let d1 = ma * ma + mb * mb + c1;
    let d2 = var_a + var_b + c2;
    let den = d1 * d2;
    let value = n1 * n2 / den;
    // product rule on N1·N2 / (D1·D2)
    let d_mu_b = (2.0 * ma * n2 + n1 * (-2.0 * ma)) / den - value * (2.0 * mb * d2 + d1 * (-2.0 * mb)) / den;
    let d_sq_b = -value * d1 / den;
    let d_ab = 2.0 * n1 / den;
    SsimTerms { value, d_mu_b, d_sq_b, d_ab }
}

/// Per-pixel SSIM over 3×3 uniform windows with reflection padding.
pub fn ssim_map(a: &ScalarGrid, b: &ScalarGrid, cfg: &PhotometricConfig) -> Result<ScalarGrid> {
    check_shape(a, b, "ssim_map")?;
    let (h, w) = (a.height(), a.width());
    Ok(ScalarGrid::from_fn(h, w, |x, y| {
        ssim_terms(a.data(), b.data(), &window(x, y, h, w), cfg.ssim_c1, cfg.ssim_c2).value
    }))
}

/// Per-pixel `(α/2)(1 − SSIM) + (1 − α)|target − recon|`.
pub fn photometric_error(target: &ScalarGrid, recon: &ScalarGrid, cfg: &PhotometricConfig) -> Result<ScalarGrid> {
    photometric_error_channels(std::slice::from_ref(target), std::slice::from_ref(recon), cfg)
}

/// Multi-channel photometric error; SSIM and L1 are averaged over channels.
pub fn photometric_error_channels(
    targets: &[ScalarGrid],
    recons: &[ScalarGrid],
    cfg: &PhotometricConfig,
) -> Result<ScalarGrid> {
    cfg.validate()?;
    if targets.is_empty() || targets.len() != recons.len() {
        return contract("photometric error needs matching, non-empty channel lists");
    }
    let (h, w) = (targets[0].height(), targets[0].width());
    let mut out = ScalarGrid::zeros(h, w);
    let nc = targets.len() as f64;
    for (t, r) in targets.iter().zip(recons) {
        check_shape(&targets[0], t, "photometric_error")?;
        check_shape(t, r, "photometric_error")?;
        let ssim = ssim_map(t, r, cfg)?;
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            let l1 = (t.data()[i] - r.data()[i]).abs();
            *o += (cfg.alpha / 2.0 * (1.0 - ssim.data()[i]) + (1.0 - cfg.alpha) * l1) / nc;
        }
    }
    Ok(out)
}

/// Photometric error of a single pixel, reading the reconstruction lazily
/// through `recon_at(x, y)`. Matches [`photometric_error`] at that pixel.
pub fn photometric_error_at(
    target: &ScalarGrid,
    x: usize,
    y: usize,
    cfg: &PhotometricConfig,
    recon_at: impl Fn(usize, usize) -> f64,
) -> f64 {
    let (h, w) = (target.height(), target.width());
    let idx = window(x, y, h, w);
    let mut local_a = [0.0; 9];
    let mut local_b = [0.0; 9];
    for (k, &i) in idx.iter().enumerate() {
        local_a[k] = target.data()[i];
        local_b[k] = recon_at(i % w, i / w);
    }
    let t = ssim_terms(&local_a, &local_b, &[0, 1, 2, 3, 4, 5, 6, 7, 8], cfg.ssim_c1, cfg.ssim_c2);
    cfg.alpha / 2.0 * (1.0 - t.value) + (1.0 - cfg.alpha) * (local_a[4] - local_b[4]).abs()
}

/// Mean photometric error with its gradient with respect to every pixel of
/// `recon`. Also returns the per-pixel error map.
pub fn photometric_mean_and_grad(
    target: &ScalarGrid,
    recon: &ScalarGrid,
    cfg: &PhotometricConfig,
) -> Result<(f64, ScalarGrid, ScalarGrid)> {
    cfg.validate()?;
    check_shape(target, recon, "photometric_mean_and_grad")?;
    let (h, w) = (target.height(), target.width());
    let n = (h * w) as f64;
    let (a, b) = (target.data(), recon.data());
    let mut per_pixel = ScalarGrid::zeros(h, w);
    let mut grad = ScalarGrid::zeros(h, w);
    let ssim_weight = -cfg.alpha / 2.0 / n;
    let l1_weight = (1.0 - cfg.alpha) / n;
    {
        let g = grad.data_mut();
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let idx = window(x, y, h, w);
                let t = ssim_terms(a, b, &idx, cfg.ssim_c1, cfg.ssim_c2);
                let diff = b[p] - a[p];
                per_pixel.data_mut()[p] = cfg.alpha / 2.0 * (1.0 - t.value) + (1.0 - cfg.alpha) * diff.abs();
                for &r in &idx {
                    g[r] += ssim_weight * (t.d_mu_b + t.d_sq_b * 2.0 * b[r] + t.d_ab * a[r]) / 9.0;
                }
                // subgradient 0 at an exact match
                if diff != 0.0 {
                    g[p] += l1_weight * diff.signum();
                }
            }
        }
    }
    Ok((per_pixel.mean(), per_pixel, grad))
}

/// Edge-weight-paired disparity differences along x and y.
struct SmoothnessEdges {
    /// (flat index a, flat index b, edge weight exp(-|∂I|), 1/count of the axis)
    edges: Vec<(usize, usize, f64, f64)>,
}

fn smoothness_edges(h: usize, w: usize, image: &ScalarGrid) -> SmoothnessEdges {
    let mut edges = Vec::with_capacity(2 * h * w);
    let img = image.data();
    if w > 1 {
        let inv = 1.0 / (h * (w - 1)) as f64;
        for y in 0..h {
            for x in 0..w - 1 {
                let (i, j) = (y * w + x, y * w + x + 1);
                edges.push((i, j, (-(img[j] - img[i]).abs()).exp(), inv));
            }
        }
    }
    if h > 1 {
        let inv = 1.0 / ((h - 1) * w) as f64;
        for y in 0..h - 1 {
            for x in 0..w {
                let (i, j) = (y * w + x, (y + 1) * w + x);
                edges.push((i, j, (-(img[j] - img[i]).abs()).exp(), inv));
            }
        }
    }
    SmoothnessEdges { edges }
}

/// Edge-aware smoothness of the mean-normalized disparity: the mean of
/// `|∂x d*|·exp(−|∂x I|)` over horizontal neighbours plus the mean of
/// `|∂y d*|·exp(−|∂y I|)` over vertical neighbours, with `d* = d / mean(d)`.
pub fn smoothness_loss(disp: &ScalarGrid, image: &ScalarGrid) -> Result<f64> {
    Ok(smoothness_loss_and_grad(disp, image)?.0)
}

pub fn smoothness_loss_and_grad(disp: &ScalarGrid, image: &ScalarGrid) -> Result<(f64, ScalarGrid)> {
    check_shape(disp, image, "smoothness_loss")?;
    let (h, w) = (disp.height(), disp.width());
    let mean = disp.mean();
    if !(mean > MIN_MEAN_DISPARITY) {
        return contract(format!("mean disparity must exceed {MIN_MEAN_DISPARITY}, got {mean}"));
    }
    let d = disp.data();
    let mut loss = 0.0;
    let mut grad = ScalarGrid::zeros(h, w);
    let g = grad.data_mut();
    for &(i, j, weight, inv) in &smoothness_edges(h, w, image).edges {
        let diff = d[j] - d[i];
        loss += weight * diff.abs() / mean * inv;
        if diff != 0.0 {
            let s = weight * diff.signum() / mean * inv;
            g[j] += s;
            g[i] -= s;
        }
    }
    // mean(d) depends on every pixel
    let shared = loss / (mean * (h * w) as f64);
    g.iter_mut().for_each(|v| *v -= shared);
    Ok((loss, grad))
}
