//! Procedural toy portraits with known single-light renders.
//!
//! The scene is viewed orthographically along `-z`. Image-plane coordinates
//! run over `[-aspect, aspect] x [-1, 1]` with `y` pointing up. A head sphere
//! carries a smaller nose sphere and sits above a torso cylinder set back in
//! depth, so oblique lights cast hard shadows from the nose onto the face and
//! from the head onto the torso.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasynth::{OlatCapture, Parsing};
use crate::error::{Error, Result};
use crate::image::{MaskImage, RasterImage, ValueRange};
use crate::rng;

pub type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: Vec3) -> Vec3 {
    let n = libm::sqrt(dot(v, v));
    [v[0] / n, v[1] / n, v[2] / n]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    /// Nearest positive hit distance of the ray `o + t d` (`d` unit length).
    fn hit(&self, o: Vec3, d: Vec3) -> Option<f64> {
        let oc = [o[0] - self.center[0], o[1] - self.center[1], o[2] - self.center[2]];
        let b = dot(oc, d);
        let c = dot(oc, oc) - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let s = libm::sqrt(disc);
        [-b - s, -b + s].into_iter().find(|t| *t > 1e-9)
    }

    /// Front surface point seen at image position `(x, y)`.
    fn front(&self, x: f64, y: f64) -> Option<(Vec3, Vec3)> {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let r2 = self.radius * self.radius - dx * dx - dy * dy;
        if r2 < 0.0 {
            return None;
        }
        let dz = libm::sqrt(r2);
        let p = [x, y, self.center[2] + dz];
        Some((p, [dx / self.radius, dy / self.radius, dz / self.radius]))
    }
}

/// Vertical cylinder clipped to a rounded rectangle in the image plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Torso {
    /// Axis position `(x, z)`.
    pub axis: [f64; 2],
    pub radius: f64,
    /// Top and bottom of the silhouette in image `y`.
    pub top: f64,
    pub bottom: f64,
    pub corner: f64,
}

impl Torso {
    fn front(&self, x: f64, y: f64) -> Option<(Vec3, Vec3)> {
        let dx = x - self.axis[0];
        if dx.abs() > self.radius || y > self.top || y < self.bottom {
            return None;
        }
        let (cx, cy) = (self.radius - self.corner, self.top - self.corner);
        if dx.abs() > cx && y > cy {
            let (ex, ey) = (dx.abs() - cx, y - cy);
            if ex * ex + ey * ey > self.corner * self.corner {
                return None;
            }
        }
        let dz = libm::sqrt((self.radius * self.radius - dx * dx).max(0.0));
        Some(([x, y, self.axis[1] + dz], [dx / self.radius, 0.0, dz / self.radius]))
    }
}

/// Light arriving from `direction` (pointing from the surface to the light).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalLight {
    pub direction: Vec3,
    pub intensity: f64,
}

impl DirectionalLight {
    /// Light at `polar` radians from the view axis and `azimuth` radians
    /// counter-clockwise from image right.
    pub fn from_angles(polar: f64, azimuth: f64, intensity: f64) -> Self {
        DirectionalLight {
            direction: [
                libm::sin(polar) * libm::cos(azimuth),
                libm::sin(polar) * libm::sin(azimuth),
                libm::cos(polar),
            ],
            intensity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LightRig {
    /// `count` lights evenly spaced in azimuth on a cone around the view axis.
    Ring { count: usize, cone_deg: f64, intensity: f64 },
    Custom(Vec<DirectionalLight>),
}

impl LightRig {
    pub fn lights(&self) -> Vec<DirectionalLight> {
        match self {
            LightRig::Ring { count, cone_deg, intensity } => (0..*count)
                .map(|k| {
                    let az = 2.0 * PI * (k as f64 + 0.5) / *count as f64;
                    DirectionalLight::from_angles(cone_deg.to_radians(), az, *intensity)
                })
                .collect(),
            LightRig::Custom(l) => l.clone(),
        }
    }
}

/// Phong highlight added to the room-lights image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub direction: Vec3,
    pub strength: f64,
    pub shininess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureScene {
    pub height: usize,
    pub width: usize,
    pub head: Sphere,
    pub nose: Sphere,
    pub torso: Torso,
    pub rig: LightRig,
    /// Uniform room-light level.
    pub ambient: f64,
    pub highlight: Option<Highlight>,
    /// Freckles on the skin and stripes on the cloth; off gives flat albedo.
    pub textured: bool,
}

/// Albedo bounds of every surface.
pub const ALBEDO_RANGE: [f32; 2] = [0.05, 0.95];
/// Light count of the dense ring that stands in for uniform lighting.
pub const UNIFORM_RING_COUNT: usize = 256;

const SKIN: [f64; 3] = [0.78, 0.56, 0.46];
const CLOTH: [[f64; 3]; 2] = [[0.18, 0.26, 0.55], [0.82, 0.80, 0.72]];

impl FixtureScene {
    /// The default portrait: 18 lights on a 45 degree cone.
    pub fn portrait(height: usize, width: usize) -> Self {
        FixtureScene {
            height,
            width,
            head: Sphere {
                center: [0.0, 0.28, 0.0],
                radius: 0.5,
            },
            nose: Sphere {
                center: [0.0, 0.22, 0.46],
                radius: 0.11,
            },
            torso: Torso {
                axis: [0.0, -0.55],
                radius: 0.75,
                top: -0.3,
                bottom: -1.2,
                corner: 0.25,
            },
            rig: LightRig::Ring {
                count: crate::datasynth::FULL_FLASH_COUNT,
                cone_deg: 45.0,
                intensity: 1.0,
            },
            ambient: 0.05,
            highlight: None,
            textured: true,
        }
    }

    pub fn with_rig(mut self, rig: LightRig) -> Self {
        self.rig = rig;
        self
    }

    /// Adds a bright highlight to the room image, lit from the upper left.
    pub fn with_highlight(mut self) -> Self {
        self.highlight = Some(Highlight {
            direction: normalize([-0.3, 0.35, 0.89]),
            strength: 1.2,
            shininess: 60.0,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::contract("fixture resolution must be positive"));
        }
        let lights = self.rig.lights();
        if lights.len() < 2 {
            return Err(Error::contract("fixture needs at least two lights"));
        }
        if lights.iter().any(|l| !(l.intensity >= 0.0) || !(dot(l.direction, l.direction) > 0.0)) {
            return Err(Error::contract("light intensities must be non-negative with nonzero direction"));
        }
        if !(self.ambient >= 0.0) {
            return Err(Error::contract("ambient level must be non-negative"));
        }
        Ok(())
    }

    /// Resolves geometry and albedo at every pixel.
    pub fn rasterize(&self, seed: u64) -> Result<Rasterized> {
        self.validate()?;
        let (h, w) = (self.height, self.width);
        let texture = Texture::new(seed, self.textured);
        let mut hits = Vec::with_capacity(h * w);
        for py in 0..h {
            for px in 0..w {
                let (x, y) = image_point(py, px, h, w);
                hits.push(self.surface_at(x, y, &texture));
            }
        }
        if hits.iter().all(|s| s.is_none()) {
            return Err(Error::contract("fixture foreground is empty"));
        }
        Ok(Rasterized {
            scene: self.clone(),
            hits,
        })
    }

    fn surface_at(&self, x: f64, y: f64, tex: &Texture) -> Option<Surface> {
        let candidates = [
            self.nose.front(x, y).map(|h| (h, Part::Nose)),
            self.head.front(x, y).map(|h| (h, Part::Head)),
            self.torso.front(x, y).map(|h| (h, Part::Torso)),
        ];
        let ((point, normal), part) = candidates
            .into_iter()
            .flatten()
            .max_by(|a, b| a.0 .0[2].total_cmp(&b.0 .0[2]))?;
        let albedo = match part {
            Part::Torso => tex.cloth(y),
            Part::Head | Part::Nose => tex.skin(x, y),
        };
        Some(Surface {
            point,
            normal: normalize(normal),
            albedo,
            part,
        })
    }
}

fn image_point(py: usize, px: usize, h: usize, w: usize) -> (f64, f64) {
    let hf = h as f64;
    (
        ((px as f64 + 0.5) * 2.0 - w as f64) / hf,
        (hf - (py as f64 + 0.5) * 2.0) / hf,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Head,
    Nose,
    Torso,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surface {
    pub point: Vec3,
    pub normal: Vec3,
    pub albedo: [f32; 3],
    pub part: Part,
}

struct Texture {
    freckles: Vec<(f64, f64, f64, f64)>,
    stripe_phase: f64,
    textured: bool,
}

impl Texture {
    fn new(seed: u64, textured: bool) -> Self {
        let mut r = rng::stream(seed, "fixture-texture", 0);
        let freckles = (0..48)
            .map(|_| {
                let a = r.gen_range(0.0..2.0 * PI);
                let d = 0.45 * libm::sqrt(r.gen_range(0.0f64..1.0));
                (
                    d * libm::cos(a),
                    0.28 + d * libm::sin(a),
                    r.gen_range(0.008..0.025),
                    r.gen_range(0.55..0.8),
                )
            })
            .collect();
        Texture {
            freckles,
            stripe_phase: r.gen_range(0.0..1.0),
            textured,
        }
    }

    fn clamp(c: [f64; 3]) -> [f32; 3] {
        c.map(|v| (v as f32).clamp(ALBEDO_RANGE[0], ALBEDO_RANGE[1]))
    }

    fn skin(&self, x: f64, y: f64) -> [f32; 3] {
        let mut k = 1.0;
        if self.textured {
            for &(fx, fy, r, dark) in &self.freckles {
                if (x - fx) * (x - fx) + (y - fy) * (y - fy) < r * r {
                    k *= dark;
                }
            }
        }
        Self::clamp(SKIN.map(|v| v * k))
    }

    fn cloth(&self, y: f64) -> [f32; 3] {
        if !self.textured {
            return Self::clamp(CLOTH[0]);
        }
        let band = libm::floor(y / 0.12 + self.stripe_phase) as i64;
        Self::clamp(CLOTH[band.rem_euclid(2) as usize])
    }
}

/// A scene resolved to per-pixel surfaces, ready to shade under any light.
#[derive(Clone, Debug)]
pub struct Rasterized {
    pub scene: FixtureScene,
    hits: Vec<Option<Surface>>,
}

impl Rasterized {
    pub fn surface(&self, y: usize, x: usize) -> Option<&Surface> {
        self.hits[y * self.scene.width + x].as_ref()
    }

    fn image(&self, mut f: impl FnMut(&Surface) -> [f64; 3]) -> RasterImage {
        let mut data = Vec::with_capacity(self.hits.len() * 3);
        for s in &self.hits {
            match s {
                Some(s) => data.extend(f(s).map(|v| v as f32)),
                None => data.extend([0.0f32; 3]),
            }
        }
        RasterImage::new(self.scene.height, self.scene.width, 3, ValueRange::Unit, data).expect("finite render")
    }

    fn occluded(&self, p: Vec3, dir: Vec3) -> bool {
        let d = normalize(dir);
        let o = [p[0] + 1e-6 * d[0], p[1] + 1e-6 * d[1], p[2] + 1e-6 * d[2]];
        self.scene.head.hit(o, d).is_some() || self.scene.nose.hit(o, d).is_some()
    }

    /// Unclamped Lambertian radiance of one surface under one light.
    fn radiance(&self, s: &Surface, light: &DirectionalLight) -> [f64; 3] {
        let l = normalize(light.direction);
        let ndl = dot(s.normal, l);
        if light.intensity == 0.0 || ndl <= 0.0 || self.occluded(s.point, l) {
            return [0.0; 3];
        }
        s.albedo.map(|a| a as f64 * light.intensity * ndl)
    }

    /// Lambertian render with hard cast shadows, clamped to `[0, 1]`.
    pub fn shade(&self, light: &DirectionalLight) -> RasterImage {
        self.image(|s| self.radiance(s, light))
    }

    /// Mean of the renders under `lights`.
    pub fn mean_of(&self, lights: &[DirectionalLight]) -> RasterImage {
        let k = lights.len().max(1) as f64;
        self.image(|s| {
            let mut acc = [0.0; 3];
            for l in lights {
                let r = self.radiance(s, l).map(|v| v.min(1.0));
                for c in 0..3 {
                    acc[c] += r[c];
                }
            }
            acc.map(|v| v / k)
        })
    }

    /// Ambient room light plus the optional highlight.
    pub fn room(&self) -> RasterImage {
        let amb = self.scene.ambient;
        let hl = self.scene.highlight;
        self.image(|s| {
            let mut c = s.albedo.map(|a| a as f64 * amb);
            if let (Some(h), Part::Head | Part::Nose) = (hl, s.part) {
                let l = normalize(h.direction);
                let ndl = dot(s.normal, l);
                if ndl > 0.0 {
                    let rz = 2.0 * ndl * s.normal[2] - l[2];
                    let spec = h.strength * libm::pow(rz.max(0.0), h.shininess);
                    c = c.map(|v| v + spec);
                }
            }
            c
        })
    }

    pub fn albedo(&self) -> RasterImage {
        self.image(|s| s.albedo.map(|a| a as f64))
    }

    pub fn foreground(&self) -> MaskImage {
        let data = self.hits.iter().map(|s| if s.is_some() { 1.0 } else { 0.0 }).collect();
        MaskImage::new(self.scene.height, self.scene.width, data).expect("binary mask")
    }

    /// Nose and mouth as fixed ellipses on the face, clipped to the head.
    pub fn parsing(&self) -> Parsing {
        let (h, w) = (self.scene.height, self.scene.width);
        let head = self.scene.head.center;
        let ellipse = |cx: f64, cy: f64, rx: f64, ry: f64| {
            MaskImage::from_fn(h, w, |py, px| {
                let (x, y) = image_point(py, px, h, w);
                let inside = ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0;
                let on_face = matches!(self.surface(py, px), Some(s) if s.part != Part::Torso);
                if inside && on_face {
                    1.0
                } else {
                    0.0
                }
            })
            .expect("binary mask")
        };
        Parsing {
            nose: ellipse(head[0], head[1] - 0.04, 0.12, 0.13),
            mouth: ellipse(head[0], head[1] - 0.3, 0.17, 0.06),
        }
    }
}

/// Renders known to the generator, for checking the pipeline.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub lights: Vec<DirectionalLight>,
    /// Render under each light, without room light.
    pub single: Vec<RasterImage>,
    /// Mean render under a dense ring on the rig's cone.
    pub uniform: RasterImage,
    pub albedo: RasterImage,
}

/// Cone angle of the rig, used for the dense uniform ring.
fn rig_cone(rig: &LightRig) -> f64 {
    match rig {
        LightRig::Ring { cone_deg, .. } => *cone_deg,
        LightRig::Custom(l) => {
            let n = l.len().max(1) as f64;
            l.iter()
                .map(|d| libm::acos(normalize(d.direction)[2].clamp(-1.0, 1.0)).to_degrees())
                .sum::<f64>()
                / n
        }
    }
}

/// Flash images are `clamp(single + room)`; the room image is ambient
/// light plus the optional highlight.
pub fn render_olat_capture(scene: &FixtureScene, seed: u64) -> Result<(OlatCapture, GroundTruth)> {
    let r = scene.rasterize(seed)?;
    let lights = scene.rig.lights();
    let room = r.room();
    let single: Vec<RasterImage> = lights.iter().map(|l| r.shade(l)).collect();
    let flash_images = single
        .iter()
        .map(|s| s.zip_map(&room, ValueRange::Unit, |a, b| a + b))
        .collect::<Result<Vec<_>>>()?;
    let dense = LightRig::Ring {
        count: UNIFORM_RING_COUNT,
        cone_deg: rig_cone(&scene.rig),
        intensity: lights.iter().map(|l| l.intensity).sum::<f64>() / lights.len() as f64,
    };
    let uniform = r.mean_of(&dense.lights());
    let capture = OlatCapture {
        id: format!("fixture-{seed}"),
        flash_images,
        room_image: room,
        foreground: r.foreground(),
        parsing: r.parsing(),
    };
    capture.validate()?;
    let truth = GroundTruth {
        lights,
        single,
        uniform,
        albedo: r.albedo(),
    };
    Ok((capture, truth))
}

/// A small fixture rig for fast tests: `count` ring lights at `size` px.
pub fn small_capture(size: usize, count: usize, seed: u64) -> Result<(OlatCapture, GroundTruth)> {
    let scene = FixtureScene::portrait(size, size).with_rig(LightRig::Ring {
        count,
        cone_deg: 45.0,
        intensity: 1.0,
    });
    render_olat_capture(&scene, seed)
}

/// Pixelwise RMSE over all channels of two equally sized images.
#[cfg(test)]
pub(crate) fn rmse_all(a: &RasterImage, b: &RasterImage) -> f64 {
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum();
    libm::sqrt(s / a.data().len() as f64)
}
