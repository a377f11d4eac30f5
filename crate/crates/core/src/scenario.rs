//! Deterministic synthetic multi-camera worlds.
//!
//! A [`WorldScenario`] is a flat 2D arena watched from above by cameras with
//! affine world-to-image maps. Identities follow constant-speed piecewise-linear
//! walks between random waypoints; a configurable fraction of time steps is
//! frozen, which yields byte-identical consecutive frames. Frames are rendered
//! as seeded value-noise backgrounds with one flat rectangle per visible
//! identity.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::BBox;
use crate::rng::{self, domain};
use crate::{Error, Result};

pub type Point = [f64; 2];

/// Affine world-to-image map: `u = a*x + b*y + tx`, `v = c*x + d*y + ty`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2::scale_offset(1.0, 0.0, 0.0);

    pub const fn scale_offset(scale: f64, tx: f64, ty: f64) -> Self {
        Self {
            a: scale,
            b: 0.0,
            c: 0.0,
            d: scale,
            tx,
            ty,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(&self, p: Point) -> Point {
        [
            self.a * p[0] + self.b * p[1] + self.tx,
            self.c * p[0] + self.d * p[1] + self.ty,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub id: u32,
    pub image_width: u32,
    pub image_height: u32,
    pub world_to_image: Affine2,
    /// Convex polygon in world coordinates, either winding.
    pub fov_polygon: Vec<Point>,
}

impl CameraModel {
    /// Axis-aligned camera that sees the world rectangle `[x0, x1] x [y0, y1]`
    /// at `pixels_per_unit`, with the rectangle filling the whole image.
    pub fn covering(id: u32, x0: f64, y0: f64, x1: f64, y1: f64, pixels_per_unit: f64) -> Self {
        Self {
            id,
            image_width: ((x1 - x0) * pixels_per_unit).round().max(1.0) as u32,
            image_height: ((y1 - y0) * pixels_per_unit).round().max(1.0) as u32,
            world_to_image: Affine2::scale_offset(
                pixels_per_unit,
                -x0 * pixels_per_unit,
                -y0 * pixels_per_unit,
            ),
            fov_polygon: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::Config(format!(
                "camera {} has an empty image",
                self.id
            )));
        }
        let det = self.world_to_image.determinant();
        if !det.is_finite() || det == 0.0 {
            return Err(Error::Config(format!(
                "camera {} world_to_image is not invertible",
                self.id
            )));
        }
        if !is_convex(&self.fov_polygon) {
            return Err(Error::Config(format!(
                "camera {} fov_polygon must be convex with at least 3 vertices",
                self.id
            )));
        }
        Ok(())
    }

    /// Inclusive point-in-polygon test against the convex field of view.
    pub fn sees(&self, p: Point) -> bool {
        point_in_convex(&self.fov_polygon, p)
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn is_convex(poly: &[Point]) -> bool {
    if poly.len() < 3 || poly.iter().flatten().any(|v| !v.is_finite()) {
        return false;
    }
    let n = poly.len();
    let (mut pos, mut neg) = (false, false);
    for i in 0..n {
        let c = cross(poly[i], poly[(i + 1) % n], poly[(i + 2) % n]);
        pos |= c > 0.0;
        neg |= c < 0.0;
    }
    pos != neg
}

fn point_in_convex(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let (mut pos, mut neg) = (false, false);
    for i in 0..n {
        let c = cross(poly[i], poly[(i + 1) % n], p);
        pos |= c > 0.0;
        neg |= c < 0.0;
        if pos && neg {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub id: u32,
    pub trajectory: Vec<Point>,
    /// Half-extent of the square body box, world units.
    pub body_size: f64,
    pub appearance_seed: u64,
}

impl Identity {
    /// Flat render intensity, always above the background value range.
    pub fn intensity(&self) -> u8 {
        (150 + self.appearance_seed % 106) as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub arena_width: f64,
    pub arena_height: f64,
    pub duration_steps: u32,
    pub identity_count: u32,
    /// World units moved per unfrozen step.
    pub speed: f64,
    pub body_size: f64,
    /// Fraction of steps `1..T` at which the whole world holds still.
    pub pause_fraction: f64,
    /// Optional fixed start positions for the first identities.
    pub start_positions: Vec<Point>,
    pub cameras: Vec<CameraModel>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            arena_width: 96.0,
            arena_height: 64.0,
            duration_steps: 100,
            identity_count: 3,
            speed: 1.5,
            body_size: 4.0,
            pause_fraction: 0.0,
            start_positions: Vec::new(),
            cameras: vec![
                CameraModel::covering(0, 0.0, 0.0, 64.0, 64.0, 2.5),
                CameraModel::covering(1, 32.0, 0.0, 96.0, 64.0, 2.5),
            ],
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.arena_width > 0.0 && self.arena_height > 0.0) {
            return Err(Error::Config("arena must have positive area".into()));
        }
        if self.duration_steps == 0 {
            return Err(Error::Config("duration_steps must be at least 1".into()));
        }
        if !(self.body_size > 0.0) {
            return Err(Error::Config("body_size must be positive".into()));
        }
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return Err(Error::Config(
                "speed must be finite and non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.pause_fraction) {
            return Err(Error::Config("pause_fraction must lie in [0, 1]".into()));
        }
        if self.cameras.is_empty() {
            return Err(Error::Config("at least one camera is required".into()));
        }
        if self.start_positions.len() > self.identity_count as usize {
            return Err(Error::Config("more start positions than identities".into()));
        }
        for p in &self.start_positions {
            if !self.in_arena(*p) {
                return Err(Error::Config(format!("start position {p:?} outside arena")));
            }
        }
        let mut ids = BTreeSet::new();
        for cam in &self.cameras {
            cam.validate()?;
            if !ids.insert(cam.id) {
                return Err(Error::Config(format!("duplicate camera id {}", cam.id)));
            }
        }
        Ok(())
    }

    fn in_arena(&self, p: Point) -> bool {
        (0.0..=self.arena_width).contains(&p[0]) && (0.0..=self.arena_height).contains(&p[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldScenario {
    pub arena_width: f64,
    pub arena_height: f64,
    pub duration_steps: u32,
    pub identities: Vec<Identity>,
    pub cameras: Vec<CameraModel>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub camera_id: u32,
    pub t: u32,
    pub width: u32,
    pub height: u32,
    /// Row-major 8-bit grayscale.
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(camera_id: u32, t: u32, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} frame",
                pixels.len()
            )));
        }
        Ok(Self {
            camera_id,
            t,
            width,
            height,
            pixels,
        })
    }

    pub fn filled(camera_id: u32, t: u32, width: u32, height: u32, value: u8) -> Self {
        Self {
            camera_id,
            t,
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn same_shape(&self, other: &Frame) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Identifies one camera frame and its raster size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameSlot {
    pub camera_id: u32,
    pub t: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub camera_id: u32,
    pub t: u32,
    pub identity_id: u32,
    pub bbox: BBox,
    /// False when the box was clipped by the image border.
    pub fully_visible: bool,
}

pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<WorldScenario> {
    config.validate()?;
    let steps = config.duration_steps as usize;

    let mut pause_candidates: Vec<usize> = (1..steps).collect();
    let pause_count = (config.pause_fraction * pause_candidates.len() as f64).round() as usize;
    pause_candidates.shuffle(&mut rng::keyed(&[seed, domain::PAUSES]));
    let mut paused = vec![false; steps];
    for &t in &pause_candidates[..pause_count] {
        paused[t] = true;
    }

    let identities = (0..config.identity_count)
        .map(|i| {
            let id = i + 1;
            let mut rng = rng::keyed(&[seed, domain::TRAJECTORY, id as u64]);
            let random_point = |rng: &mut rand_chacha::ChaCha8Rng| -> Point {
                [
                    rng.random::<f64>() * config.arena_width,
                    rng.random::<f64>() * config.arena_height,
                ]
            };
            let start = config
                .start_positions
                .get(i as usize)
                .copied()
                .unwrap_or_else(|| random_point(&mut rng));
            let mut waypoint = random_point(&mut rng);
            let mut pos = start;
            let mut trajectory = Vec::with_capacity(steps);
            trajectory.push(pos);
            for &frozen in &paused[1..] {
                if !frozen && config.speed > 0.0 {
                    let mut budget = config.speed;
                    loop {
                        let (dx, dy) = (waypoint[0] - pos[0], waypoint[1] - pos[1]);
                        let dist = dx.hypot(dy);
                        if dist > budget {
                            pos = [pos[0] + dx / dist * budget, pos[1] + dy / dist * budget];
                            break;
                        }
                        budget -= dist;
                        pos = waypoint;
                        waypoint = random_point(&mut rng);
                        if budget <= 0.0 {
                            break;
                        }
                    }
                    pos = [
                        pos[0].clamp(0.0, config.arena_width),
                        pos[1].clamp(0.0, config.arena_height),
                    ];
                }
                trajectory.push(pos);
            }
            Identity {
                id,
                trajectory,
                body_size: config.body_size,
                appearance_seed: rng::mix(&[seed, domain::APPEARANCE, id as u64]),
            }
        })
        .collect();

    Ok(WorldScenario {
        arena_width: config.arena_width,
        arena_height: config.arena_height,
        duration_steps: config.duration_steps,
        identities,
        cameras: config.cameras.clone(),
        seed,
    })
}

/// Pixel box of a square body at `position`, or `None` when the position is
/// outside the field of view or the box clips away entirely.
pub fn project_to_camera(camera: &CameraModel, position: Point, body_size: f64) -> Option<BBox> {
    project_unclipped(camera, position, body_size)
        .map(|b| b.clip(camera.image_width as f64, camera.image_height as f64))
        .filter(|b| !b.is_degenerate())
}

/// Affine image of the body box, rounded to whole pixels but not clipped.
fn project_unclipped(camera: &CameraModel, position: Point, body_size: f64) -> Option<BBox> {
    if !camera.sees(position) {
        return None;
    }
    let corners = [
        [position[0] - body_size, position[1] - body_size],
        [position[0] + body_size, position[1] - body_size],
        [position[0] + body_size, position[1] + body_size],
        [position[0] - body_size, position[1] + body_size],
    ]
    .map(|c| camera.world_to_image.apply(c));
    let fold = |f: fn(f64, f64) -> f64, axis: usize, init: f64| {
        corners.iter().map(|c| c[axis]).fold(init, f)
    };
    Some(BBox::new(
        fold(f64::min, 0, f64::INFINITY).round(),
        fold(f64::min, 1, f64::INFINITY).round(),
        fold(f64::max, 0, f64::NEG_INFINITY).round(),
        fold(f64::max, 1, f64::NEG_INFINITY).round(),
    ))
}

impl WorldScenario {
    pub fn validate(&self) -> Result<()> {
        if self.duration_steps == 0 {
            return Err(Error::Config("duration_steps must be at least 1".into()));
        }
        let mut ids = BTreeSet::new();
        for identity in &self.identities {
            if !ids.insert(identity.id) {
                return Err(Error::Config(format!(
                    "duplicate identity id {}",
                    identity.id
                )));
            }
            if identity.trajectory.len() != self.duration_steps as usize {
                return Err(Error::Config(format!(
                    "identity {} trajectory length {} != {}",
                    identity.id,
                    identity.trajectory.len(),
                    self.duration_steps
                )));
            }
            if !(identity.body_size > 0.0) {
                return Err(Error::Config(format!("identity {} body_size", identity.id)));
            }
        }
        let mut cams = BTreeSet::new();
        for cam in &self.cameras {
            cam.validate()?;
            if !cams.insert(cam.id) {
                return Err(Error::Config(format!("duplicate camera id {}", cam.id)));
            }
        }
        Ok(())
    }

    pub fn camera(&self, camera_id: u32) -> Result<&CameraModel> {
        self.cameras
            .iter()
            .find(|c| c.id == camera_id)
            .ok_or_else(|| Error::Lookup(format!("unknown camera {camera_id}")))
    }

    fn cameras_sorted(&self) -> Vec<&CameraModel> {
        let mut cams: Vec<_> = self.cameras.iter().collect();
        cams.sort_by_key(|c| c.id);
        cams
    }

    /// Every `(camera, t)` frame, ordered by camera then time.
    pub fn frame_slots(&self) -> Vec<FrameSlot> {
        self.cameras_sorted()
            .into_iter()
            .flat_map(|c| {
                (0..self.duration_steps).map(move |t| FrameSlot {
                    camera_id: c.id,
                    t,
                    width: c.image_width,
                    height: c.image_height,
                })
            })
            .collect()
    }

    fn records_at(&self, camera: &CameraModel, t: u32) -> Vec<GroundTruthRecord> {
        let mut ids: Vec<_> = self.identities.iter().collect();
        ids.sort_by_key(|i| i.id);
        ids.into_iter()
            .filter_map(|identity| {
                let pos = identity.trajectory[t as usize];
                let raw = project_unclipped(camera, pos, identity.body_size)?;
                let bbox = raw.clip(camera.image_width as f64, camera.image_height as f64);
                if bbox.is_degenerate() {
                    return None;
                }
                Some(GroundTruthRecord {
                    camera_id: camera.id,
                    t,
                    identity_id: identity.id,
                    bbox,
                    fully_visible: bbox == raw,
                })
            })
            .collect()
    }

    /// One record per visible `(camera, t, identity)`, sorted by that key.
    pub fn ground_truth(&self) -> Vec<GroundTruthRecord> {
        self.cameras_sorted()
            .into_iter()
            .flat_map(|cam| (0..self.duration_steps).flat_map(move |t| self.records_at(cam, t)))
            .collect()
    }

    /// Seeded background texture of a camera.
    pub fn background(&self, camera_id: u32) -> Result<Frame> {
        let cam = self.camera(camera_id)?;
        Ok(render_background(self.seed, cam))
    }

    pub fn render_frame(&self, camera_id: u32, t: u32) -> Result<Frame> {
        let cam = self.camera(camera_id)?;
        if t >= self.duration_steps {
            return Err(Error::Lookup(format!(
                "t={t} outside 0..{}",
                self.duration_steps
            )));
        }
        let mut frame = render_background(self.seed, cam);
        frame.t = t;
        self.paint_identities(cam, &mut frame);
        Ok(frame)
    }

    /// All frames of one camera in time order; the background is rendered once.
    pub fn render_camera(&self, camera_id: u32) -> Result<Vec<Frame>> {
        let cam = self.camera(camera_id)?;
        let background = render_background(self.seed, cam);
        Ok((0..self.duration_steps)
            .map(|t| {
                let mut frame = background.clone();
                frame.t = t;
                self.paint_identities(cam, &mut frame);
                frame
            })
            .collect())
    }

    fn paint_identities(&self, cam: &CameraModel, frame: &mut Frame) {
        let intensity = |id: u32| {
            self.identities
                .iter()
                .find(|i| i.id == id)
                .map(Identity::intensity)
                .unwrap_or(255)
        };
        for rec in self.records_at(cam, frame.t) {
            let Some(rect) = rec.bbox.to_pixel_rect(frame.width, frame.height) else {
                continue;
            };
            let value = intensity(rec.identity_id);
            for y in rect.y0..rect.y1 {
                let row = y as usize * frame.width as usize;
                frame.pixels[row + rect.x0 as usize..row + rect.x1 as usize].fill(value);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: WorldScenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// SHA-256 of the serialized scenario, hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

const NOISE_CELL: u32 = 16;

fn lattice(seed: u64, camera_id: u32, lx: u32, ly: u32) -> f64 {
    let h = rng::mix(&[
        seed,
        domain::BACKGROUND,
        camera_id as u64,
        lx as u64,
        ly as u64,
    ]);
    (h % 101) as f64
}

/// Bilinear value noise in `[20, 120]` plus per-pixel grain of up to ±8.
fn render_background(seed: u64, cam: &CameraModel) -> Frame {
    let (w, h) = (cam.image_width, cam.image_height);
    let mut pixels = Vec::with_capacity(w as usize * h as usize);
    for y in 0..h {
        let (ly, fy) = (y / NOISE_CELL, (y % NOISE_CELL) as f64 / NOISE_CELL as f64);
        for x in 0..w {
            let (lx, fx) = (x / NOISE_CELL, (x % NOISE_CELL) as f64 / NOISE_CELL as f64);
            let top =
                lattice(seed, cam.id, lx, ly) * (1.0 - fx) + lattice(seed, cam.id, lx + 1, ly) * fx;
            let bottom = lattice(seed, cam.id, lx, ly + 1) * (1.0 - fx)
                + lattice(seed, cam.id, lx + 1, ly + 1) * fx;
            let smooth = 20.0 + top * (1.0 - fy) + bottom * fy;
            let grain = (rng::mix(&[
                seed,
                domain::BACKGROUND,
                cam.id as u64,
                x as u64,
                y as u64,
                1,
            ]) % 17) as f64
                - 8.0;
            pixels.push((smooth + grain).round().clamp(0.0, 255.0) as u8);
        }
    }
    Frame {
        camera_id: cam.id,
        t: 0,
        width: w,
        height: h,
        pixels,
    }
}

#[cfg(test)]
#[allow(clippy::field_reassign_with_default)]
mod tests {
    use super::*;

    fn single_camera(identity_count: u32, steps: u32) -> ScenarioConfig {
        ScenarioConfig {
            arena_width: 40.0,
            arena_height: 40.0,
            duration_steps: steps,
            identity_count,
            cameras: vec![CameraModel::covering(0, 0.0, 0.0, 40.0, 40.0, 2.0)],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn config_errors() {
        let mut cfg = ScenarioConfig::default();
        cfg.duration_steps = 0;
        assert!(matches!(generate_scenario(&cfg, 1), Err(Error::Config(_))));
        let mut cfg = ScenarioConfig::default();
        cfg.arena_width = 0.0;
        assert!(matches!(generate_scenario(&cfg, 1), Err(Error::Config(_))));
        let mut cfg = ScenarioConfig::default();
        cfg.cameras[0].world_to_image = Affine2::scale_offset(0.0, 0.0, 0.0);
        assert!(matches!(generate_scenario(&cfg, 1), Err(Error::Config(_))));
        let mut cfg = ScenarioConfig::default();
        cfg.cameras[1].id = cfg.cameras[0].id;
        assert!(matches!(generate_scenario(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn no_identities_means_no_ground_truth() {
        let cfg = ScenarioConfig {
            identity_count: 0,
            duration_steps: 10,
            ..ScenarioConfig::default()
        };
        let s = generate_scenario(&cfg, 1).unwrap();
        assert_eq!(s.cameras.len(), 2);
        assert!(s.ground_truth().is_empty());
    }

    #[test]
    fn static_identity_repeats_its_box() {
        let cfg = ScenarioConfig {
            speed: 0.0,
            start_positions: vec![[20.0, 20.0]],
            ..single_camera(1, 5)
        };
        let s = generate_scenario(&cfg, 9).unwrap();
        let gt = s.ground_truth();
        assert_eq!(gt.len(), 5);
        assert!(gt.iter().all(|r| r.bbox == gt[0].bbox));
        assert_eq!(gt[0].bbox, BBox::new(32.0, 32.0, 48.0, 48.0));
        assert!(gt[0].fully_visible);
    }

    #[test]
    fn projection_examples() {
        let cam = CameraModel {
            id: 0,
            image_width: 100,
            image_height: 100,
            world_to_image: Affine2::scale_offset(2.0, 0.0, 0.0),
            fov_polygon: vec![[0.0, 0.0], [50.0, 0.0], [50.0, 50.0], [0.0, 50.0]],
        };
        assert_eq!(
            project_to_camera(&cam, [10.0, 10.0], 1.0),
            Some(BBox::new(18.0, 18.0, 22.0, 22.0))
        );
        assert_eq!(project_to_camera(&cam, [60.0, 10.0], 1.0), None);

        let ident = CameraModel {
            world_to_image: Affine2::IDENTITY,
            ..cam.clone()
        };
        let b = project_to_camera(&ident, [25.0, 25.0], 3.0).unwrap();
        assert_eq!(b.center(), (25.0, 25.0));

        // clipped at the border
        let edge = project_to_camera(&cam, [0.0, 10.0], 2.0).unwrap();
        assert_eq!(edge, BBox::new(0.0, 16.0, 4.0, 24.0));
    }

    #[test]
    fn render_errors_and_background() {
        let cfg = ScenarioConfig {
            identity_count: 0,
            ..single_camera(0, 3)
        };
        let s = generate_scenario(&cfg, 4).unwrap();
        assert!(matches!(s.render_frame(5, 0), Err(Error::Lookup(_))));
        assert!(matches!(s.render_frame(0, 3), Err(Error::Lookup(_))));
        let f = s.render_frame(0, 1).unwrap();
        assert_eq!(f.pixels, s.background(0).unwrap().pixels);
        assert!(f.pixels.iter().all(|&p| (12..=128).contains(&p)));
    }

    #[test]
    fn backgrounds_differ_between_cameras() {
        let s = generate_scenario(&ScenarioConfig::default(), 3).unwrap();
        assert_ne!(
            s.background(0).unwrap().pixels,
            s.background(1).unwrap().pixels
        );
    }

    #[test]
    fn pgm_header() {
        let f = Frame::filled(0, 0, 3, 2, 7);
        let pgm = f.to_pgm();
        assert_eq!(&pgm[..11], b"P5\n3 2\n255\n");
        assert_eq!(&pgm[11..], &[7; 6]);
    }

    #[test]
    fn pause_fraction_freezes_exact_step_count() {
        let cfg = ScenarioConfig {
            pause_fraction: 0.3,
            duration_steps: 101,
            ..ScenarioConfig::default()
        };
        let s = generate_scenario(&cfg, 5).unwrap();
        let frozen = (1..101)
            .filter(|&t| {
                s.identities
                    .iter()
                    .all(|i| i.trajectory[t] == i.trajectory[t - 1])
            })
            .count();
        assert_eq!(frozen, 30);
    }

    #[test]
    fn walkers_keep_constant_speed() {
        let s = generate_scenario(&ScenarioConfig::default(), 11).unwrap();
        for identity in &s.identities {
            for w in identity.trajectory.windows(2) {
                let step = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
                assert!(step <= 1.5 + 1e-9);
                assert!((0.0..=96.0).contains(&w[1][0]) && (0.0..=64.0).contains(&w[1][1]));
            }
        }
    }
}
