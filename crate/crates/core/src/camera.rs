//! Pinhole cameras. Camera space is right-handed and looks down `-z`;
//! image rows grow downward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Ray, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    /// Focal length in pixels (square pixels).
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Principal point at the image center.
    pub fn centered(focal: f64, width: u32, height: u32) -> Self {
        Self {
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    /// Camera-to-world rotation; columns are the camera axes in world space.
    pub rotation: Mat3,
    pub position: Vec3,
}

impl Camera {
    /// Camera at `position` looking at `target`.
    pub fn look_at(intrinsics: Intrinsics, position: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = (target - position)
            .try_normalize()
            .ok_or(Error::InvalidArgument("camera position equals target"))?;
        let right = forward
            .cross(up)
            .try_normalize()
            .ok_or(Error::InvalidArgument("view direction parallel to up vector"))?;
        let true_up = right.cross(forward);
        Ok(Self {
            intrinsics,
            rotation: Mat3::from_cols(right, true_up, -forward),
            position,
        })
    }

    /// Row-major 4×4 camera-to-world matrix.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation.rows;
        let p = self.position;
        [
            [r[0][0], r[0][1], r[0][2], p.x],
            [r[1][0], r[1][1], r[1][2], p.y],
            [r[2][0], r[2][1], r[2][2], p.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix(intrinsics: Intrinsics, m: [[f64; 4]; 4]) -> Result<Self> {
        let rotation = Mat3::from_rows([
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]);
        if rotation.orthonormality_error() > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("camera rotation is not a proper rotation"));
        }
        Ok(Self {
            intrinsics,
            rotation,
            position: Vec3::new(m[0][3], m[1][3], m[2][3]),
        })
    }

    /// Ray through the center of pixel `(px, py)`.
    pub fn pixel_ray(&self, px: u32, py: u32) -> Ray {
        let k = &self.intrinsics;
        let x = (px as f64 + 0.5 - k.cx) / k.focal;
        let y = -(py as f64 + 0.5 - k.cy) / k.focal;
        let local = Vec3::new(x, y, -1.0);
        Ray::new(self.position, self.rotation * local)
    }
}
