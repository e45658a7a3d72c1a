//! Pinhole camera geometry shared by the teacher renderer and the ray
//! encoder, so supervision pixels and network inputs come from one routine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// Camera-to-world transform. The camera looks down its local -z axis with
/// +y up; `rotation` is row-major and maps camera vectors to world vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: [[f64; 3]; 3],
    pub position: Vec3,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            position: [0.0; 3],
        }
    }

    /// Camera at `position` looking at the origin with world +y as up.
    pub fn look_at_origin(position: Vec3) -> Result<Self> {
        let dist = norm(position);
        if dist < 1e-9 {
            return Err(Error::Contract("camera position at the origin".into()));
        }
        let forward = scale(position, -1.0 / dist);
        let right = cross(forward, [0.0, 1.0, 0.0]);
        if norm(right) < 1e-9 {
            return Err(Error::Contract("view direction parallel to up vector".into()));
        }
        let right = normalize(right);
        let up = cross(right, forward);
        let back = scale(forward, -1.0);
        Ok(Self {
            rotation: [
                [right[0], up[0], back[0]],
                [right[1], up[1], back[1]],
                [right[2], up[2], back[2]],
            ],
            position,
        })
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        [dot(r[0], v), dot(r[1], v), dot(r[2], v)]
    }

    /// Row-major `[R | t]`.
    pub fn matrix_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = self.position;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2],
        ]
    }

    pub fn from_matrix_3x4(m: &[f64; 12]) -> Self {
        Self {
            rotation: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            position: [m[3], m[7], m[11]],
        }
    }

    /// Rounds every entry to f32 precision; datasets store poses as f32 and
    /// the stored pose must be the one that was rendered.
    pub fn quantized_f32(&self) -> Self {
        let m = self.matrix_3x4().map(|v| v as f32 as f64);
        Self::from_matrix_3x4(&m)
    }

    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let col = |j: usize| [r[0][j], r[1][j], r[2][j]];
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(col(i), col(j)) - want).abs());
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        if self.orthonormality_error() > 1e-6 {
            return Err(Error::Contract("camera rotation is not orthonormal".into()));
        }
        Ok(())
    }
}

/// Pinhole intrinsics for an image of `height x width` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub height: usize,
    pub width: usize,
}

impl Intrinsics {
    pub fn centered(height: usize, width: usize, focal: f64) -> Result<Self> {
        if !(focal > 0.0) || height == 0 || width == 0 {
            return Err(Error::Contract(format!(
                "invalid intrinsics: focal {focal}, {height}x{width}"
            )));
        }
        Ok(Self {
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            height,
            width,
        })
    }

    /// The same field of view sampled on a `height x width` grid.
    pub fn resampled(&self, height: usize, width: usize) -> Self {
        let s = width as f64 / self.width as f64;
        Self {
            focal: self.focal * s,
            cx: self.cx * s,
            cy: self.cy * height as f64 / self.height as f64,
            height,
            width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        add(self.origin, scale(self.dir, t))
    }
}

/// Ray through the centre of pixel `(row, col)`.
pub fn pixel_ray(pose: &CameraPose, k: &Intrinsics, row: usize, col: usize) -> Ray {
    let x = (col as f64 + 0.5 - k.cx) / k.focal;
    let y = -(row as f64 + 0.5 - k.cy) / k.focal;
    Ray {
        origin: pose.position,
        dir: normalize(pose.rotate([x, y, -1.0])),
    }
}

/// All rays of the image in row-major pixel order.
pub fn camera_rays(pose: &CameraPose, k: &Intrinsics) -> Vec<Ray> {
    (0..k.height)
        .flat_map(|r| (0..k.width).map(move |c| (r, c)))
        .map(|(r, c)| pixel_ray(pose, k, r, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_centre_ray_is_optical_axis() {
        let k = Intrinsics::centered(5, 5, 10.0).unwrap();
        let ray = pixel_ray(&CameraPose::identity(), &k, 2, 2);
        assert!(norm(sub(ray.dir, [0.0, 0.0, -1.0])) < 1e-6);
        assert!((norm(ray.dir) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn look_at_points_the_axis_at_origin() {
        let pose = CameraPose::look_at_origin([1.0, 2.0, 3.0]).unwrap();
        assert!(pose.orthonormality_error() < 1e-12);
        let axis = pose.rotate([0.0, 0.0, -1.0]);
        let want = normalize([-1.0, -2.0, -3.0]);
        assert!(norm(sub(axis, want)) < 1e-12);
        assert!(CameraPose::look_at_origin([0.0, 0.0, 0.0]).is_err());
        assert!(CameraPose::look_at_origin([0.0, 3.0, 0.0]).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let pose = CameraPose::look_at_origin([0.5, 1.0, -2.0]).unwrap();
        assert_eq!(CameraPose::from_matrix_3x4(&pose.matrix_3x4()), pose);
    }

    #[test]
    fn resampled_grid_covers_the_same_frustum() {
        let k = Intrinsics::centered(64, 64, 80.0).unwrap();
        let low = k.resampled(16, 16);
        let pose = CameraPose::look_at_origin([0.0, 1.0, 4.0]).unwrap();
        // Low-res pixel (0,0) is centred on the shared corner of hi-res 2x2 block (1..2).
        let a = pixel_ray(&pose, &low, 0, 0);
        let x = (2.0 - k.cx) / k.focal;
        let y = -(2.0 - k.cy) / k.focal;
        let b = normalize(pose.rotate([x, y, -1.0]));
        assert!(norm(sub(a.dir, b)) < 1e-12);
    }
}
