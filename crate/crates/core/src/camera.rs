//! Pinhole cameras, rigid poses and the reprojection warp.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::grid::{bilinear_sample, CoordGrid, LabelGrid, ScalarGrid};

/// Transformed points closer than this to the source camera plane are invalid.
pub const MIN_PROJECTED_DEPTH: f64 = 1e-9;

/// Coordinate assigned to invalid reprojections; far enough outside any
/// image that clamped sampling lands on the border.
const INVALID_COORD: f64 = -1e7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return contract(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return contract("principal point must be finite");
        }
        Ok(())
    }

    /// Back-projects pixel `(x, y)` at depth `z` to a camera-frame point.
    pub fn unproject(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        [(x - self.cx) / self.fx * z, (y - self.cy) / self.fy * z, z]
    }

    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }
}

/// Rigid transform taking target-camera points into the source camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self { translation: t, ..Self::identity() }
    }

    /// Fails unless `rotation` is orthonormal with determinant +1 (within 1e-9).
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-9 {
                    return contract("rotation is not orthonormal");
                }
            }
        }
        let r = &rotation;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-9 {
            return contract(format!("rotation determinant {det} is not +1"));
        }
        if translation.iter().any(|t| !t.is_finite()) {
            return contract("translation must be finite");
        }
        Ok(Self { rotation, translation })
    }

    /// Rotation about the y axis by `angle` radians.
    pub fn yaw(angle: f64, translation: [f64; 3]) -> Self {
        let (s, c) = angle.sin_cos();
        Self { rotation: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], translation }
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation_vector(&self) -> [f64; 3] {
        self.translation
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }
}

/// Rectified stereo pair: the second camera sits `baseline` meters along +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub intrinsics: Intrinsics,
    pub baseline: f64,
}

impl StereoRig {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !(self.baseline > 0.0) {
            return contract(format!("baseline must be positive, got {}", self.baseline));
        }
        Ok(())
    }

    /// Pose mapping left-camera points into the right camera.
    pub fn left_to_right(&self) -> Pose {
        Pose::translation([-self.baseline, 0.0, 0.0])
    }

    fn fb(&self) -> f64 {
        self.intrinsics.fx * self.baseline
    }
}

/// Source-view coordinates for every target pixel, plus a mask that is 1
/// where the transformed point falls behind the source camera.
pub fn reproject_coords(depth: &ScalarGrid, pose: &Pose, k: &Intrinsics) -> Result<(CoordGrid, LabelGrid)> {
    k.validate()?;
    if let Some(bad) = depth.data().iter().find(|&&z| !(z > 0.0 && z.is_finite())) {
        return contract(format!("depth must be positive and finite, found {bad}"));
    }
    let (h, w) = (depth.height(), depth.width());
    let mut coords = CoordGrid::identity(h, w);
    let mut invalid = LabelGrid::filled(h, w, 0);
    if *pose == Pose::identity() {
        return Ok((coords, invalid));
    }
    for y in 0..h {
        for x in 0..w {
            let p = pose.apply(k.unproject(x as f64, y as f64, depth.get(x, y)));
            let idx = y * w + x;
            if p[2] <= MIN_PROJECTED_DEPTH {
                coords.set(idx, INVALID_COORD, INVALID_COORD);
                invalid.set(x, y, 1);
            } else {
                let (u, v) = k.project(p);
                coords.set(idx, u, v);
            }
        }
    }
    Ok((coords, invalid))
}

/// Reconstructs the target view by sampling `src` at `coords`.
pub fn warp_image(src: &ScalarGrid, coords: &CoordGrid) -> Result<ScalarGrid> {
    bilinear_sample(src, coords)
}

/// `Z = fx·b / d`, elementwise.
pub fn disparity_to_depth(disparity: &ScalarGrid, rig: &StereoRig) -> Result<ScalarGrid> {
    rig.validate()?;
    invert_positive(disparity, rig.fb(), "disparity")
}

/// `d = fx·b / Z`, elementwise.
pub fn depth_to_disparity(depth: &ScalarGrid, rig: &StereoRig) -> Result<ScalarGrid> {
    rig.validate()?;
    invert_positive(depth, rig.fb(), "depth")
}

fn invert_positive(g: &ScalarGrid, num: f64, what: &str) -> Result<ScalarGrid> {
    if let Some(bad) = g.data().iter().find(|&&v| !(v > 0.0)) {
        return contract(format!("{what} must be positive, found {bad}"));
    }
    Ok(g.map(|v| num / v))
}
