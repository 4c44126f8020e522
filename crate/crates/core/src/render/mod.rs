//! Software camera: ground-plane ray casting from a car-mounted camera with
//! pinhole or spherical (equirectangular) geometry. Road textures and lighting
//! are procedural.

mod ppm;
mod texture;

pub use ppm::{load_ppm, read_ppm, save_mask_csv, save_ppm, write_mask_csv, write_ppm};
pub use texture::{procedural_texture, Surface};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::VehicleState;
use crate::tensor::Tensor;
use crate::track::Track;
use texture::{hash01, void_texture};

pub const CHANNELS: usize = 3;

/// Width of the white edge lines, measured inward from the road edge.
const EDGE_LINE: f64 = 0.04;
const CENTER_LINE: f64 = 0.03;
const DASH_PERIOD: f64 = 0.3;
const DASH_LEN: f64 = 0.15;

const BOT_WIDTH: f64 = 0.2;
const BOT_HEIGHT: f64 = 0.14;

const SKY: [f64; 3] = [0.62, 0.72, 0.86];
const WHITE: [f64; 3] = [0.93, 0.93, 0.93];
const YELLOW: [f64; 3] = [0.93, 0.80, 0.12];
const BOT_RED: [f64; 3] = [0.82, 0.12, 0.10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CameraGeometry {
    Pinhole,
    #[default]
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub geometry: CameraGeometry,
    /// Horizontal field of view, radians.
    pub fov: f64,
    pub width: usize,
    pub height: usize,
    pub mount_height: f64,
    /// Nose-up positive.
    pub pitch: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            geometry: CameraGeometry::Spherical,
            fov: 2.0,
            width: 64,
            height: 48,
            mount_height: 0.2,
            pitch: -0.35,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(Error::Config(format!("camera fov must lie in (0, π), got {}", self.fov)));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config(format!(
                "image must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.mount_height > 0.0 && self.mount_height.is_finite()) {
            return Err(Error::Config(format!("mount height must be positive, got {}", self.mount_height)));
        }
        if !(self.pitch.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config(format!("pitch must lie in (-π/2, π/2), got {}", self.pitch)));
        }
        Ok(())
    }

    /// Angular resolution at the image center. The optical axis maps to
    /// `(W/2, H/2)` and azimuth `fov/2` to column `W − 1`; both geometries
    /// share this focal scale so they agree near the axis.
    pub fn pixels_per_radian(&self) -> f64 {
        (self.width as f64 / 2.0 - 1.0) / (self.fov / 2.0)
    }

    fn center(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }
}

/// Camera position and orientation in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub pitch: f64,
}

impl CameraPose {
    /// Camera mounted above the vehicle reference point, looking along its heading.
    pub fn mounted(state: &VehicleState, config: &CameraConfig) -> Self {
        Self {
            x: state.x,
            y: state.y,
            z: config.mount_height,
            yaw: state.psi,
            pitch: config.pitch,
        }
    }

    /// World offset to camera frame `(forward, right, up)`.
    fn to_camera(&self, d: (f64, f64, f64)) -> (f64, f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let f0 = c * d.0 + s * d.1;
        let l0 = -s * d.0 + c * d.1;
        let (sp, cp) = self.pitch.sin_cos();
        (f0 * cp + d.2 * sp, -l0, -f0 * sp + d.2 * cp)
    }
}

/// Camera-frame `(forward, right, up)` to `(azimuth, elevation)`, azimuth
/// positive to the right.
fn angles(d: (f64, f64, f64)) -> (f64, f64) {
    (d.1.atan2(d.0), d.2.atan2(d.0.hypot(d.1)))
}

/// Projects a world point to continuous pixel coordinates `(u, v)`, `v`
/// growing downward. `None` when the point falls outside the field of view
/// (or behind a pinhole camera).
pub fn project(config: &CameraConfig, pose: &CameraPose, point: (f64, f64, f64)) -> Result<Option<(f64, f64)>> {
    let d = (point.0 - pose.x, point.1 - pose.y, point.2 - pose.z);
    let norm = (d.0 * d.0 + d.1 * d.1 + d.2 * d.2).sqrt();
    if !(norm > 0.0) {
        return Err(Error::Domain("cannot project the focal point itself".into()));
    }
    let (fwd, right, up) = pose.to_camera(d);
    let k = config.pixels_per_radian();
    let (cu, cv) = config.center();
    let (w, h) = (config.width as f64, config.height as f64);
    let (u, v) = match config.geometry {
        CameraGeometry::Spherical => {
            let n = (fwd / norm, right / norm, up / norm);
            let az = n.1.atan2(n.0);
            let el = n.2.clamp(-1.0, 1.0).asin();
            (cu + k * az, cv - k * el)
        }
        CameraGeometry::Pinhole => {
            if fwd <= 0.0 {
                return Ok(None);
            }
            (cu + k * right / fwd, cv - k * up / fwd)
        }
    };
    let inside = (1.0 - 1e-9..=w - 1.0 + 1e-9).contains(&u) && (1.0 - 1e-9..=h - 1.0 + 1e-9).contains(&v);
    Ok(inside.then_some((u, v)))
}

/// Unit ray through continuous pixel coordinates, camera frame.
fn pixel_ray(config: &CameraConfig, u: f64, v: f64) -> (f64, f64, f64) {
    let k = config.pixels_per_radian();
    let (cu, cv) = config.center();
    match config.geometry {
        CameraGeometry::Spherical => {
            let (az, el) = ((u - cu) / k, (cv - v) / k);
            (el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
        }
        CameraGeometry::Pinhole => {
            let d = (1.0, (u - cu) / k, (cv - v) / k);
            let n = (d.0 * d.0 + d.1 * d.1 + d.2 * d.2).sqrt();
            (d.0 / n, d.1 / n, d.2 / n)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineStyle {
    /// Dashed yellow center line plus white edges.
    #[default]
    CenterYellowDotted,
    /// White edges only.
    EdgeWhite,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Lighting {
    #[default]
    Uniform,
    /// Brightness ramps from 0.55 at the left image edge to 1.0 at the right.
    Gradient,
    /// Ambient 0.45 plus a Gaussian pool of light on the ground.
    Spotlight { x: f64, y: f64, radius: f64, gain: f64 },
}

const SPOT_AMBIENT: f64 = 0.45;

impl Lighting {
    fn field(&self, column: usize, width: usize, ground: Option<(f64, f64)>) -> f64 {
        match *self {
            Lighting::Uniform => 1.0,
            Lighting::Gradient => 0.55 + 0.45 * (column as f64 + 0.5) / width as f64,
            Lighting::Spotlight { x, y, radius, gain } => match ground {
                Some((gx, gy)) => {
                    let r2 = (gx - x).powi(2) + (gy - y).powi(2);
                    SPOT_AMBIENT + gain * (-r2 / (2.0 * radius * radius)).exp()
                }
                None => SPOT_AMBIENT,
            },
        }
    }
}

/// Texture and lighting of the rendered world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainAppearance {
    pub name: String,
    pub surface: Surface,
    #[serde(default)]
    pub line_style: LineStyle,
    #[serde(default)]
    pub lighting: Lighting,
    #[serde(default)]
    pub noise_seed: u64,
    /// Per-frame brightness factor is drawn from `1 ± jitter/2`.
    #[serde(default)]
    pub brightness_jitter: f64,
}

pub fn appearance_names() -> &'static [&'static str] {
    &["asphalt", "concrete", "carpet", "wood", "spotlight", "gradient"]
}

impl DomainAppearance {
    pub fn new(name: impl Into<String>, surface: Surface) -> Self {
        Self {
            name: name.into(),
            surface,
            line_style: LineStyle::CenterYellowDotted,
            lighting: Lighting::Uniform,
            noise_seed: 0,
            brightness_jitter: 0.0,
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        let a = match name {
            "asphalt" => Self::new(name, Surface::Asphalt),
            "concrete" => Self::new(name, Surface::Concrete),
            "carpet" => Self::new(name, Surface::Carpet),
            "wood" => Self::new(name, Surface::Wood),
            "spotlight" => Self {
                lighting: Lighting::Spotlight {
                    x: 2.6,
                    y: 0.8,
                    radius: 1.2,
                    gain: 0.75,
                },
                ..Self::new(name, Surface::Asphalt)
            },
            "gradient" => Self {
                lighting: Lighting::Gradient,
                ..Self::new(name, Surface::Asphalt)
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown appearance {other:?} (known: {})",
                    appearance_names().join(", ")
                )))
            }
        };
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.brightness_jitter) {
            return Err(Error::Config(format!(
                "brightness_jitter must lie in [0, 1], got {}",
                self.brightness_jitter
            )));
        }
        if let Lighting::Spotlight { radius, gain, .. } = self.lighting {
            if !(radius > 0.0 && (0.0..=1.0).contains(&gain)) {
                return Err(Error::Config("spotlight needs radius > 0 and gain in [0, 1]".into()));
            }
        }
        Ok(())
    }

    fn brightness(&self, frame: u64) -> f64 {
        if self.brightness_jitter == 0.0 {
            return 1.0;
        }
        1.0 + self.brightness_jitter * (hash01(self.noise_seed ^ 0x1f, frame as i64, 7) - 0.5)
    }
}

/// Semantic class of a rendered pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PixelClass {
    Sky = 0,
    Void = 1,
    Road = 2,
    EdgeLine = 3,
    CenterLine = 4,
    Bot = 5,
}

/// Rendered camera frame, `[3, H, W]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub pixels: Tensor,
    pub frame: u64,
}

impl Observation {
    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }
}

#[derive(Debug, Clone, Copy)]
struct Ray {
    /// Ground hit relative to the camera in its yaw frame, `(forward, left)`.
    ground: Option<(f64, f64)>,
    az: f64,
    el: f64,
}

/// Camera with its per-pixel rays precomputed.
#[derive(Debug, Clone)]
pub struct Renderer {
    config: CameraConfig,
    rays: Vec<Ray>,
}

impl Renderer {
    pub fn new(config: CameraConfig) -> Result<Self> {
        config.validate()?;
        let (sp, cp) = config.pitch.sin_cos();
        let mut rays = Vec::with_capacity(config.width * config.height);
        for j in 0..config.height {
            for i in 0..config.width {
                let d = pixel_ray(&config, i as f64 + 0.5, j as f64 + 0.5);
                let (az, el) = angles(d);
                // undo the pitch: level frame forward and up components
                let f0 = d.0 * cp - d.2 * sp;
                let up0 = d.0 * sp + d.2 * cp;
                let ground = (up0 < -1e-9).then(|| {
                    let t = config.mount_height / -up0;
                    (t * f0, -t * d.1)
                });
                rays.push(Ray { ground, az, el });
            }
        }
        Ok(Self { config, rays })
    }

    pub fn config(&self) -> &CameraConfig {
        &self.config
    }

    /// Per-pixel class mask, row-major `H×W`.
    pub fn classify(&self, track: &Track, ego: &VehicleState, bots: &[VehicleState], style: LineStyle) -> Vec<PixelClass> {
        let mut mask = Vec::with_capacity(self.rays.len());
        self.scan(track, ego, bots, style, |class, _, _| mask.push(class));
        mask
    }

    pub fn render(
        &self,
        track: &Track,
        ego: &VehicleState,
        bots: &[VehicleState],
        appearance: &DomainAppearance,
        frame: u64,
    ) -> Observation {
        self.render_with_mask(track, ego, bots, appearance, frame).0
    }

    pub fn render_with_mask(
        &self,
        track: &Track,
        ego: &VehicleState,
        bots: &[VehicleState],
        appearance: &DomainAppearance,
        frame: u64,
    ) -> (Observation, Vec<PixelClass>) {
        let (w, h) = (self.config.width, self.config.height);
        let plane = w * h;
        let mut data = vec![0.0; CHANNELS * plane];
        let mut mask = Vec::with_capacity(plane);
        let brightness = appearance.brightness(frame);
        let mut idx = 0;
        self.scan(track, ego, bots, appearance.line_style, |class, ground, bot| {
            let albedo = match class {
                PixelClass::Sky => SKY,
                PixelClass::Void => void_texture(ground.expect("void pixels hit the ground")),
                PixelClass::Road => procedural_texture(
                    appearance.surface,
                    ground.expect("road pixels hit the ground"),
                    appearance.noise_seed,
                ),
                PixelClass::EdgeLine => WHITE,
                PixelClass::CenterLine => YELLOW,
                PixelClass::Bot => BOT_RED,
            };
            let lit_at = if class == PixelClass::Bot { bot } else { ground };
            let light = appearance.lighting.field(idx % w, w, lit_at) * brightness;
            for (c, a) in albedo.iter().enumerate() {
                data[c * plane + idx] = (a * light).clamp(0.0, 1.0);
            }
            mask.push(class);
            idx += 1;
        });
        let pixels = Tensor::new(vec![CHANNELS, h, w], data).expect("frame shape matches buffer");
        (Observation { pixels, frame }, mask)
    }

    /// Visits pixels in row-major order with their class, world ground hit
    /// and (for bot pixels) the bot position.
    fn scan(
        &self,
        track: &Track,
        ego: &VehicleState,
        bots: &[VehicleState],
        style: LineStyle,
        mut visit: impl FnMut(PixelClass, Option<(f64, f64)>, Option<(f64, f64)>),
    ) {
        let pose = CameraPose::mounted(ego, &self.config);
        let boxes = bot_boxes(&pose, bots);
        let (s, c) = ego.psi.sin_cos();
        let half = track.width() / 2.0;
        for ray in &self.rays {
            let ground = ray.ground.map(|(f, l)| (ego.x + c * f - s * l, ego.y + s * f + c * l));
            // nearest bot whose billboard covers this ray
            let hit = boxes
                .iter()
                .filter(|b| (ray.az - b.az).abs() <= b.half_width && ray.el >= b.el_bottom && ray.el <= b.el_top)
                .min_by(|a, b| a.dist.total_cmp(&b.dist));
            if let Some(b) = hit {
                visit(PixelClass::Bot, ground, Some(b.position));
                continue;
            }
            let class = match ground {
                None => PixelClass::Sky,
                Some(p) => match track.nearby(p) {
                    Some((lat, prog)) if lat.abs() <= half => {
                        if lat.abs() >= half - EDGE_LINE {
                            PixelClass::EdgeLine
                        } else if style == LineStyle::CenterYellowDotted
                            && lat.abs() <= CENTER_LINE / 2.0
                            && prog.rem_euclid(DASH_PERIOD) < DASH_LEN
                        {
                            PixelClass::CenterLine
                        } else {
                            PixelClass::Road
                        }
                    }
                    _ => PixelClass::Void,
                },
            };
            visit(class, ground, None);
        }
    }
}

struct BotBox {
    az: f64,
    half_width: f64,
    el_bottom: f64,
    el_top: f64,
    dist: f64,
    position: (f64, f64),
}

/// Camera-facing billboards as angular boxes.
fn bot_boxes(pose: &CameraPose, bots: &[VehicleState]) -> Vec<BotBox> {
    bots.iter()
        .filter_map(|b| {
            let d = (b.x - pose.x, b.y - pose.y);
            let dist = d.0.hypot(d.1);
            let along = d.0 * pose.yaw.cos() + d.1 * pose.yaw.sin();
            if along < 0.05 {
                return None;
            }
            let bottom = pose.to_camera((d.0, d.1, -pose.z));
            let top = pose.to_camera((d.0, d.1, BOT_HEIGHT - pose.z));
            let (az, el_bottom) = angles(bottom);
            let (_, el_top) = angles(top);
            Some(BotBox {
                az,
                half_width: (BOT_WIDTH / 2.0).atan2(dist),
                el_bottom,
                el_top,
                dist,
                position: (b.x, b.y),
            })
        })
        .collect()
}

/// One-shot render that builds a [`Renderer`] for the call.
pub fn render(
    track: &Track,
    bots: &[VehicleState],
    ego: &VehicleState,
    config: &CameraConfig,
    appearance: &DomainAppearance,
    frame: u64,
) -> Result<Observation> {
    Ok(Renderer::new(*config)?.render(track, ego, bots, appearance, frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{loop_a, oval};
    use proptest::prelude::*;

    fn level(config: &CameraConfig) -> CameraPose {
        CameraPose {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            yaw: 0.0,
            pitch: config.pitch,
        }
    }

    #[test]
    fn optical_axis_maps_to_center() {
        for geometry in [CameraGeometry::Spherical, CameraGeometry::Pinhole] {
            let config = CameraConfig {
                geometry,
                ..CameraConfig::default()
            };
            let pose = level(&config);
            let p = (3.0 * config.pitch.cos(), 0.0, 3.0 * config.pitch.sin());
            let (u, v) = project(&config, &pose, p).unwrap().unwrap();
            assert!((u - 32.0).abs() < 1e-12 && (v - 24.0).abs() < 1e-12, "{u} {v}");
        }
    }

    #[test]
    fn half_fov_azimuth_hits_right_edge() {
        let config = CameraConfig {
            pitch: 0.0,
            ..CameraConfig::default()
        };
        let pose = level(&config);
        let az = config.fov / 2.0;
        // right of the axis is negative world y when yaw = 0
        let p = (2.0 * az.cos(), -2.0 * az.sin(), 0.0);
        let (u, v) = project(&config, &pose, p).unwrap().unwrap();
        assert!((u - 63.0).abs() < 1e-9, "{u}");
        assert!((v - 24.0).abs() < 1e-12);
        let beyond = (2.0 * (az + 0.01).cos(), -2.0 * (az + 0.01).sin(), 0.0);
        assert!(project(&config, &pose, beyond).unwrap().is_none());
        assert!(project(&config, &pose, (0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn pinhole_rejects_points_behind() {
        let config = CameraConfig {
            geometry: CameraGeometry::Pinhole,
            pitch: 0.0,
            ..CameraConfig::default()
        };
        assert!(project(&config, &level(&config), (-1.0, 0.0, 0.0)).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn geometries_agree_near_axis(az in -0.0872..0.0872f64, el in -0.0872..0.0872f64, r in 0.5..20.0f64) {
            let base = CameraConfig { width: 160, height: 120, pitch: 0.0, ..CameraConfig::default() };
            let pose = level(&base);
            let p = (r * el.cos() * az.cos(), -r * el.cos() * az.sin(), r * el.sin());
            prop_assume!((az * az + el * el).sqrt() < 5f64.to_radians());
            let s = project(&base, &pose, p).unwrap().unwrap();
            let pin = CameraConfig { geometry: CameraGeometry::Pinhole, ..base };
            let q = project(&pin, &pose, p).unwrap().unwrap();
            prop_assert!((s.0 - q.0).abs() < 2.0 && (s.1 - q.1).abs() < 2.0);
        }

        #[test]
        fn spherical_pixel_rays_roundtrip(i in 1usize..63, j in 1usize..47) {
            let config = CameraConfig::default();
            let pose = level(&config);
            let (u, v) = (i as f64 + 0.5, j as f64 + 0.5);
            let d = pixel_ray(&config, u, v);
            prop_assert!(((d.0 * d.0 + d.1 * d.1 + d.2 * d.2).sqrt() - 1.0).abs() < 1e-12);
            // camera frame back to world for the level pose
            let (sp, cp) = config.pitch.sin_cos();
            let w = (d.0 * cp - d.2 * sp, -d.1, d.0 * sp + d.2 * cp);
            let (pu, pv) = project(&config, &pose, (5.0 * w.0, 5.0 * w.1, 5.0 * w.2)).unwrap().unwrap();
            prop_assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
        }
    }

    fn centered_on_straight() -> (Track, VehicleState) {
        let t = oval(1.5, 3.0, 0.6);
        // the bottom straight starts at progress 0 and runs along +x
        let ego = t.state_at(0.3, 0.0, 0.0, 1.0);
        (t, ego)
    }

    #[test]
    fn straight_view_has_center_line_and_sky() {
        let (t, ego) = centered_on_straight();
        let r = Renderer::new(CameraConfig::default()).unwrap();
        let mask = r.classify(&t, &ego, &[], LineStyle::CenterYellowDotted);
        let (w, h) = (64, 48);
        let bottom_center = (h / 2..h).flat_map(|j| [31, 32].map(|i| mask[j * w + i]));
        assert!(bottom_center.into_iter().any(|c| c == PixelClass::CenterLine));
        assert!(mask[..w * 3].iter().all(|&c| c == PixelClass::Sky));
        assert!(mask.contains(&PixelClass::EdgeLine));
        assert!(mask.contains(&PixelClass::Void));
    }

    #[test]
    fn render_is_deterministic() {
        let (t, ego) = centered_on_straight();
        let r = Renderer::new(CameraConfig::default()).unwrap();
        let mut app = DomainAppearance::named("carpet").unwrap();
        app.brightness_jitter = 0.4;
        let a = r.render(&t, &ego, &[], &app, 17);
        let b = r.render(&t, &ego, &[], &app, 17);
        assert_eq!(a, b);
        let c = r.render(&t, &ego, &[], &app, 18);
        assert_ne!(a.pixels.data(), c.pixels.data());
    }

    #[test]
    fn gradient_lighting_ratio_is_the_field() {
        let (t, ego) = centered_on_straight();
        let r = Renderer::new(CameraConfig::default()).unwrap();
        let flat = DomainAppearance::new("flat", Surface::Flat);
        let grad = DomainAppearance {
            lighting: Lighting::Gradient,
            ..flat.clone()
        };
        let a = r.render(&t, &ego, &[], &flat, 0);
        let b = r.render(&t, &ego, &[], &grad, 0);
        let (w, plane) = (64, 64 * 48);
        for (k, (x, y)) in a.pixels.data().iter().zip(b.pixels.data()).enumerate() {
            let col = (k % plane) % w;
            let field = 0.55 + 0.45 * (col as f64 + 0.5) / w as f64;
            assert!((y / x - field).abs() < 1e-12);
        }
    }

    #[test]
    fn appearance_never_changes_the_mask() {
        let t = loop_a();
        let r = Renderer::new(CameraConfig::default()).unwrap();
        let ego = t.state_at(4.0, 0.1, 0.2, 1.0);
        let bots = [t.state_at(4.8, -0.1, 0.0, 1.0)];
        let (_, reference) = r.render_with_mask(&t, &ego, &bots, &DomainAppearance::named("asphalt").unwrap(), 0);
        assert!(reference.contains(&PixelClass::Bot));
        for name in appearance_names() {
            let mut app = DomainAppearance::named(name).unwrap();
            app.noise_seed = 99;
            app.brightness_jitter = 0.7;
            let (obs, mask) = r.render_with_mask(&t, &ego, &bots, &app, 5);
            assert_eq!(mask, reference, "{name}");
            assert!(obs.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn mirrored_world_mirrors_the_mask() {
        // car at the middle of the bottom straight, looking along +x
        let t = oval(1.5, 3.0, 0.6);
        let ego = VehicleState::new(0.0, -1.5 + 0.1, 0.05, 1.0);
        // reflect the track across the camera axis and restore its orientation
        let (s, c) = ego.psi.sin_cos();
        let mut pts: Vec<(f64, f64)> = t
            .centerline()
            .iter()
            .map(|&(x, y)| {
                let (dx, dy) = (x - ego.x, y - ego.y);
                let (f, l) = (c * dx + s * dy, -s * dx + c * dy);
                (ego.x + c * f + s * l, ego.y + s * f - c * l)
            })
            .collect();
        pts.reverse();
        let m = Track::new("mirror", pts, 0.6, 1).unwrap();
        let r = Renderer::new(CameraConfig::default()).unwrap();
        let a = r.classify(&t, &ego, &[], LineStyle::EdgeWhite);
        let b = r.classify(&m, &ego, &[], LineStyle::EdgeWhite);
        let w: usize = 64;
        for j in 0..48 {
            for i in 0..w {
                let mirrored = w - 1 - i;
                let ok = (mirrored.saturating_sub(1)..=(mirrored + 1).min(w - 1)).any(|k| b[j * w + k] == a[j * w + i]);
                assert!(ok, "row {j} col {i}");
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = CameraConfig {
            fov: 3.2,
            ..CameraConfig::default()
        };
        assert!(Renderer::new(bad).is_err());
        let small = CameraConfig {
            width: 8,
            ..CameraConfig::default()
        };
        assert!(small.validate().is_err());
        assert!(DomainAppearance::named("marble").is_err());
    }
}
