//! Dense 2-D containers, bilinear sampling and patch helpers.
//!
//! Coordinates follow the image convention: pixel centers sit on integer
//! coordinates, `x` grows to the right, `y` grows downwards and the origin is
//! the top-left pixel. All grids are stored row-major.

use crate::error::{contract, Result};

/// Feature vectors with a norm below this are divided by it instead.
pub const NORM_EPS: f64 = 1e-8;

/// Integer pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pixel {
    pub x: usize,
    pub y: usize,
}

impl Pixel {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// H×W map of real values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return contract(format!(
                "scalar grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { height, width, data }
    }

    /// Builds a grid from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return contract("ragged rows");
        }
        Ok(Self { height, width, data: rows.iter().flat_map(|r| r.iter().copied()).collect() })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape<T: Shaped>(&self, other: &T) -> bool {
        self.height == other.shape().0 && self.width == other.shape().1
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// H×W×C map of feature vectors, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl VectorGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels < 2 {
            return contract(format!("vector grid needs at least 2 channels, got {channels}"));
        }
        if data.len() != height * width * channels {
            return contract(format!(
                "vector grid {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            ));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Feature vector of the pixel with flat index `idx`.
    #[inline]
    pub fn vector(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    #[inline]
    pub fn vector_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// H×W map of non-negative integer labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return contract(format!(
                "label grid {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            ));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: u32) -> Self {
        Self { height, width, labels: vec![label; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u32) -> Self {
        let mut labels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y));
            }
        }
        Self { height, width, labels }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u32) {
        self.labels[y * self.width + x] = v;
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Per-pixel `(x, y)` sampling positions into a source grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    height: usize,
    width: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl CoordGrid {
    pub fn identity(height: usize, width: usize) -> Self {
        let mut xs = Vec::with_capacity(height * width);
        let mut ys = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                xs.push(x as f64);
                ys.push(y as f64);
            }
        }
        Self { height, width, xs, ys }
    }

    pub fn new(height: usize, width: usize, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != height * width || ys.len() != height * width {
            return contract("coordinate arrays do not match the grid size");
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return contract("sampling coordinates must be finite");
        }
        Ok(Self { height, width, xs, ys })
    }

    /// Horizontal-only displacement: `x_src = x - disparity(x, y)`.
    pub fn from_disparity(disparity: &ScalarGrid) -> Self {
        let (h, w) = (disparity.height(), disparity.width());
        let mut xs = Vec::with_capacity(h * w);
        let mut ys = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                xs.push(x as f64 - disparity.get(x, y));
                ys.push(y as f64);
            }
        }
        Self { height: h, width: w, xs, ys }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, idx: usize) -> (f64, f64) {
        (self.xs[idx], self.ys[idx])
    }

    #[inline]
    pub fn set(&mut self, idx: usize, x: f64, y: f64) {
        self.xs[idx] = x;
        self.ys[idx] = y;
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }
}

/// Anything with an H×W footprint.
pub trait Shaped {
    fn shape(&self) -> (usize, usize);
}

impl Shaped for ScalarGrid {
    fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl Shaped for VectorGrid {
    fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl Shaped for LabelGrid {
    fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl Shaped for CoordGrid {
    fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

pub(crate) fn check_shape<A: Shaped, B: Shaped>(a: &A, b: &B, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return contract(format!("{what}: shape {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// Interpolation cell along one axis: lower lattice index, fractional
/// offset, and whether the coordinate was clamped at a border.
///
/// Integer coordinates resolve to the cell on their left (fraction 1), so
/// the derivative there is the left sub-cell's slope.
#[inline]
fn axis_cell(c: f64, n: usize) -> (usize, f64, bool) {
    if n == 1 {
        return (0, 0.0, true);
    }
    let max = (n - 1) as f64;
    if c <= 0.0 {
        return (0, 0.0, c < 0.0);
    }
    if c >= max {
        return (n - 2, 1.0, c > max);
    }
    let fl = c.floor();
    if fl == c {
        (c as usize - 1, 1.0, false)
    } else {
        (fl as usize, c - fl, false)
    }
}

/// Bilinear sample with its partial derivatives in x and y.
///
/// Outside the grid the coordinate is clamped to the edge and the derivative
/// along the clamped axis is zero.
#[inline]
pub fn sample_with_grad(src: &ScalarGrid, x: f64, y: f64) -> (f64, f64, f64) {
    let (x0, fx, cx) = axis_cell(x, src.width);
    let (y0, fy, cy) = axis_cell(y, src.height);
    let x1 = (x0 + 1).min(src.width - 1);
    let y1 = (y0 + 1).min(src.height - 1);
    let v00 = src.get(x0, y0);
    let v01 = src.get(x1, y0);
    let v10 = src.get(x0, y1);
    let v11 = src.get(x1, y1);
    let top = (1.0 - fx) * v00 + fx * v01;
    let bottom = (1.0 - fx) * v10 + fx * v11;
    let value = (1.0 - fy) * top + fy * bottom;
    let dx = if cx { 0.0 } else { (1.0 - fy) * (v01 - v00) + fy * (v11 - v10) };
    let dy = if cy { 0.0 } else { bottom - top };
    (value, dx, dy)
}

#[inline]
pub fn sample(src: &ScalarGrid, x: f64, y: f64) -> f64 {
    sample_with_grad(src, x, y).0
}

/// Samples `src` at every position of `coords`, clamping to the edge.
pub fn bilinear_sample(src: &ScalarGrid, coords: &CoordGrid) -> Result<ScalarGrid> {
    if src.is_empty() {
        return contract("cannot sample an empty grid");
    }
    let data = coords.xs.iter().zip(&coords.ys).map(|(&x, &y)| sample(src, x, y)).collect();
    ScalarGrid::new(coords.height, coords.width, data)
}

/// Sampled values together with their derivatives with respect to the
/// sampling coordinates.
pub fn bilinear_sample_grad(
    src: &ScalarGrid,
    coords: &CoordGrid,
) -> Result<(ScalarGrid, ScalarGrid, ScalarGrid)> {
    if src.is_empty() {
        return contract("cannot sample an empty grid");
    }
    let n = coords.xs.len();
    let (mut v, mut gx, mut gy) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (&x, &y) in coords.xs.iter().zip(&coords.ys) {
        let (a, b, c) = sample_with_grad(src, x, y);
        v.push(a);
        gx.push(b);
        gy.push(c);
    }
    let (h, w) = (coords.height, coords.width);
    Ok((ScalarGrid::new(h, w, v)?, ScalarGrid::new(h, w, gx)?, ScalarGrid::new(h, w, gy)?))
}

/// Divides every pixel's vector by `max(‖v‖, NORM_EPS)`.
pub fn l2_normalize(features: &VectorGrid) -> VectorGrid {
    let mut out = features.clone();
    let c = out.channels;
    for v in out.data.chunks_mut(c) {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(NORM_EPS);
        v.iter_mut().for_each(|a| *a /= norm);
    }
    out
}

/// Pulls a gradient with respect to normalized features back to the raw
/// features fed into [`l2_normalize`].
pub fn l2_normalize_backward(features: &VectorGrid, grad_normalized: &VectorGrid) -> VectorGrid {
    let c = features.channels;
    let mut out = VectorGrid::zeros(features.height, features.width, c);
    for ((f, g), o) in features
        .data
        .chunks(c)
        .zip(grad_normalized.data.chunks(c))
        .zip(out.data.chunks_mut(c))
    {
        let norm = f.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > NORM_EPS {
            let dot: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / norm;
            for i in 0..c {
                o[i] = (g[i] - f[i] / norm * dot) / norm;
            }
        } else {
            for i in 0..c {
                o[i] = g[i] / NORM_EPS;
            }
        }
    }
    out
}

/// Flat indices of the in-bounds pixels of the `patch_size`² window centered
/// on `center`, excluding the center itself. Row-major order.
pub fn patch_indices(center: Pixel, patch_size: usize, height: usize, width: usize) -> Result<Vec<usize>> {
    if patch_size < 3 || patch_size.is_multiple_of(2) {
        return contract(format!("patch size must be odd and >= 3, got {patch_size}"));
    }
    if center.x >= width || center.y >= height {
        return contract(format!("patch center {center:?} outside {height}x{width}"));
    }
    let r = patch_size / 2;
    let mut out = Vec::with_capacity(patch_size * patch_size - 1);
    for y in center.y.saturating_sub(r)..=(center.y + r).min(height - 1) {
        for x in center.x.saturating_sub(r)..=(center.x + r).min(width - 1) {
            if x == center.x && y == center.y {
                continue;
            }
            out.push(y * width + x);
        }
    }
    Ok(out)
}
