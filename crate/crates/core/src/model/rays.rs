use std::f64::consts::PI;

use crate::camera::{self, CameraPose, Intrinsics, Ray};
use crate::error::Result;
use crate::nn::{Scalar, Tensor};

use super::ModelConfig;

/// Positionally-encoded rays on the network's input grid.
///
/// Channel layout is point-major, coordinate-minor: channel
/// `(k * 3 + axis) * (2L + 1) + j` holds sample point `k`, coordinate `axis`,
/// and term `j` of `[p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(..)]`.
#[derive(Debug, Clone)]
pub struct RayGrid<T = f32> {
    pub features: Tensor<T>,
    pub pose: CameraPose,
    /// Intrinsics resampled onto the input grid.
    pub intrinsics: Intrinsics,
}

/// Encoding of one scalar coordinate, `2L + 1` values.
pub fn encode_coordinate(p: f64, frequencies: usize, out: &mut Vec<f64>) {
    out.push(p);
    for l in 0..frequencies {
        let arg = (1u64 << l) as f64 * PI * p;
        out.push(arg.sin());
        out.push(arg.cos());
    }
}

/// Rays through the centre of every input-grid cell, shared with the
/// teacher renderer.
pub fn grid_rays(pose: &CameraPose, intrinsics: &Intrinsics, cfg: &ModelConfig) -> (Intrinsics, Vec<Ray>) {
    let [h, w] = cfg.input_grid;
    let k = intrinsics.resampled(h, w);
    (k, camera::camera_rays(pose, &k))
}

pub fn encode_rays<T: Scalar>(pose: &CameraPose, intrinsics: &Intrinsics, cfg: &ModelConfig) -> Result<RayGrid<T>> {
    cfg.ray.validate()?;
    pose.validate()?;
    let ray_cfg = &cfg.ray;
    let (k, rays) = grid_rays(pose, intrinsics, cfg);
    let [h, w] = cfg.input_grid;
    let plane = h * w;
    let channels = ray_cfg.channels();
    let depths: Vec<f64> = if ray_cfg.points == 1 {
        vec![ray_cfg.t_near]
    } else {
        let step = (ray_cfg.t_far - ray_cfg.t_near) / (ray_cfg.points - 1) as f64;
        (0..ray_cfg.points).map(|i| ray_cfg.t_near + step * i as f64).collect()
    };
    let mut data = vec![T::zero(); channels * plane];
    let mut enc = Vec::with_capacity(channels);
    for (pix, ray) in rays.iter().enumerate() {
        enc.clear();
        for &t in &depths {
            let p = ray.at(t);
            for coord in p {
                encode_coordinate(coord, ray_cfg.frequencies, &mut enc);
            }
        }
        for (c, &v) in enc.iter().enumerate() {
            data[c * plane + pix] = T::from_f64_lossy(v);
        }
    }
    Ok(RayGrid {
        features: Tensor::from_vec([1, channels, h, w], data)?,
        pose: *pose,
        intrinsics: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::norm;

    #[test]
    fn zero_coordinate_encoding() {
        let mut out = Vec::new();
        encode_coordinate(0.0, 3, &mut out);
        assert_eq!(out, vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn grid_shape_and_sin_cos_range() {
        let cfg = ModelConfig::desk();
        let pose = CameraPose::look_at_origin([0.0, 2.0, 4.0]).unwrap();
        let k = Intrinsics::centered(64, 64, 80.0).unwrap();
        let grid = encode_rays::<f64>(&pose, &k, &cfg).unwrap();
        assert_eq!(grid.features.shape(), [1, 156, 16, 16]);
        let terms = 2 * cfg.ray.frequencies + 1;
        for c in 0..156 {
            if c % terms == 0 {
                continue;
            }
            assert!(grid.features.plane(0, c).iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn first_point_channels_hold_the_near_sample() {
        let cfg = ModelConfig::desk();
        let pose = CameraPose::look_at_origin([1.0, 2.0, 4.0]).unwrap();
        let k = Intrinsics::centered(64, 64, 80.0).unwrap();
        let grid = encode_rays::<f64>(&pose, &k, &cfg).unwrap();
        let (_, rays) = grid_rays(&pose, &k, &cfg);
        let terms = 2 * cfg.ray.frequencies + 1;
        let p = rays[17].at(cfg.ray.t_near);
        for axis in 0..3 {
            assert_eq!(grid.features.plane(0, axis * terms)[17], p[axis]);
        }
        // last point, y axis
        let q = rays[17].at(cfg.ray.t_far);
        let c = (3 * (cfg.ray.points - 1) + 1) * terms;
        assert!((grid.features.plane(0, c)[17] - q[1]).abs() < 1e-12);
        assert!((norm(rays[17].dir) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverted_depth_range_is_a_config_error() {
        let mut cfg = ModelConfig::desk();
        cfg.ray.t_far = 1.0;
        let k = Intrinsics::centered(64, 64, 80.0).unwrap();
        let err = encode_rays::<f32>(&CameraPose::identity(), &k, &cfg).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }
}
