use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{add, dot, norm, scale, sub, Vec3};
use crate::error::{Error, Result};

pub const SCENE_VERSION: u32 = 1;

const LEGO_LITE: &str = include_str!("../../scenes/lego-lite.json");

/// Offset along the normal before casting a shadow ray.
const SHADOW_BIAS: f64 = 1e-6;
const T_MIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    pub albedo: Vec3,
}

/// Checkered horizontal plane, clipped to `|x|, |z| <= extent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ground {
    pub y: f64,
    pub albedo_a: Vec3,
    pub albedo_b: Vec3,
    pub period: f64,
    pub extent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub zenith: Vec3,
    pub nadir: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub version: u32,
    pub spheres: Vec<Sphere>,
    #[serde(default)]
    pub ground: Option<Ground>,
    pub light: Vec3,
    pub ambient: f64,
    pub background: Background,
}

fn unit_rgb(c: Vec3) -> bool {
    c.iter().all(|v| (0.0..=1.0).contains(v))
}

fn hit_sphere(s: &Sphere, origin: Vec3, dir: Vec3) -> Option<f64> {
    let oc = sub(origin, s.center);
    let b = dot(oc, dir);
    let c = dot(oc, oc) - s.radius * s.radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let root = disc.sqrt();
    [-b - root, -b + root].into_iter().find(|&t| t > T_MIN)
}

fn hit_ground(g: &Ground, origin: Vec3, dir: Vec3) -> Option<f64> {
    if dir[1].abs() < 1e-12 {
        return None;
    }
    let t = (g.y - origin[1]) / dir[1];
    if t <= T_MIN {
        return None;
    }
    let p = add(origin, scale(dir, t));
    (p[0].abs() <= g.extent && p[2].abs() <= g.extent).then_some(t)
}

impl Ground {
    fn albedo(&self, p: Vec3) -> Vec3 {
        let cell = (p[0] / self.period).floor() as i64 + (p[2] / self.period).floor() as i64;
        if cell.rem_euclid(2) == 0 {
            self.albedo_a
        } else {
            self.albedo_b
        }
    }
}

enum Surface {
    Sphere(usize),
    Ground,
}

impl Scene {
    /// The bundled three-sphere scene.
    pub fn lego_lite() -> Self {
        Self::from_json(LEGO_LITE).expect("bundled scene is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Background only.
    pub fn empty(background: Background) -> Self {
        Self {
            id: "empty".into(),
            version: SCENE_VERSION,
            spheres: Vec::new(),
            ground: None,
            light: [0.0, 1.0, 0.0],
            ambient: 0.0,
            background,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCENE_VERSION {
            return Err(Error::Config(format!(
                "scene version {} (expected {SCENE_VERSION})",
                self.version
            )));
        }
        for (i, s) in self.spheres.iter().enumerate() {
            if !(s.radius > 0.0) {
                return Err(Error::Config(format!("sphere {i}: radius must be positive")));
            }
            if !unit_rgb(s.albedo) {
                return Err(Error::Config(format!("sphere {i}: albedo outside [0, 1]")));
            }
        }
        if let Some(g) = &self.ground {
            if !unit_rgb(g.albedo_a) || !unit_rgb(g.albedo_b) {
                return Err(Error::Config("ground albedo outside [0, 1]".into()));
            }
            if !(g.period > 0.0) || !(g.extent > 0.0) {
                return Err(Error::Config("ground period and extent must be positive".into()));
            }
        }
        if (norm(self.light) - 1.0).abs() > 1e-6 {
            return Err(Error::Config("light direction must be normalized".into()));
        }
        if !(0.0..1.0).contains(&self.ambient) {
            return Err(Error::Config(format!("ambient {} outside [0, 1)", self.ambient)));
        }
        if !unit_rgb(self.background.zenith) || !unit_rgb(self.background.nadir) {
            return Err(Error::Config("background colour outside [0, 1]".into()));
        }
        Ok(())
    }

    fn nearest(&self, origin: Vec3, dir: Vec3) -> Option<(f64, Surface)> {
        let mut best: Option<(f64, Surface)> = None;
        for (i, s) in self.spheres.iter().enumerate() {
            if let Some(t) = hit_sphere(s, origin, dir) {
                if best.as_ref().is_none_or(|(b, _)| t < *b) {
                    best = Some((t, Surface::Sphere(i)));
                }
            }
        }
        if let Some(t) = self.ground.as_ref().and_then(|g| hit_ground(g, origin, dir)) {
            if best.as_ref().is_none_or(|(b, _)| t < *b) {
                best = Some((t, Surface::Ground));
            }
        }
        best
    }

    fn occluded(&self, origin: Vec3, dir: Vec3) -> bool {
        self.spheres.iter().any(|s| hit_sphere(s, origin, dir).is_some())
            || self.ground.as_ref().is_some_and(|g| hit_ground(g, origin, dir).is_some())
    }

    /// Colour seen along a unit-length ray.
    pub fn render_ray(&self, origin: Vec3, dir: Vec3) -> Result<Vec3> {
        if (norm(dir) - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("ray direction has length {}", norm(dir))));
        }
        let Some((t, surface)) = self.nearest(origin, dir) else {
            let u = 0.5 * (dir[1] + 1.0);
            let bg = &self.background;
            return Ok(std::array::from_fn(|i| (1.0 - u) * bg.nadir[i] + u * bg.zenith[i]));
        };
        let p = add(origin, scale(dir, t));
        let (mut n, albedo) = match surface {
            Surface::Sphere(i) => {
                let s = &self.spheres[i];
                (scale(sub(p, s.center), 1.0 / s.radius), s.albedo)
            }
            Surface::Ground => {
                let g = self.ground.as_ref().expect("ground hit implies ground");
                ([0.0, 1.0, 0.0], g.albedo(p))
            }
        };
        if dot(n, dir) > 0.0 {
            n = scale(n, -1.0);
        }
        let mut lambert = dot(n, self.light).max(0.0);
        if lambert > 0.0 && self.occluded(add(p, scale(n, SHADOW_BIAS)), self.light) {
            lambert = 0.0;
        }
        Ok(albedo.map(|a| (a * lambert + self.ambient).clamp(0.0, 1.0)))
    }
}
