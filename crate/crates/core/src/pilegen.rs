//! Procedural 2.5-D pile simulator: objects are dropped one after another
//! onto a heightfield, and the pile is rendered as an orthographic top-view
//! depth map with a parametric sensor noise model.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{DepthMap, Grid, InstanceLabelMap, INVALID_DEPTH};

/// Attempts per drop before the object is skipped.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Disc,
    Box,
    LTile,
    Bar,
    RegularPolygon,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Disc => "disc",
            ShapeKind::Box => "box",
            ShapeKind::LTile => "l-tile",
            ShapeKind::Bar => "bar",
            ShapeKind::RegularPolygon => "regular-polygon",
        }
    }
}

/// Object model dropped into the bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeTemplate {
    pub kind: ShapeKind,
    /// Nominal footprint extents `[length, width]` in pixels.
    pub footprint_px: [f64; 2],
    pub thickness_mm: f64,
    /// Isotropic scale range; also scales thickness.
    pub iso_scale: [f64; 2],
    /// Independent per-axis scale range applied on top of `iso_scale`.
    pub aniso_scale: [f64; 2],
    /// Number of sides for [`ShapeKind::RegularPolygon`].
    #[serde(default = "default_sides")]
    pub sides: u8,
    /// Width in pixels of the sloped rim around the top face; 0 keeps the top flat.
    #[serde(default)]
    pub bevel_px: f64,
    /// Fraction of the thickness lost at the outer edge of the rim.
    #[serde(default)]
    pub bevel_drop: f64,
}

fn default_sides() -> u8 {
    6
}

impl ShapeTemplate {
    pub fn new(kind: ShapeKind, footprint_px: [f64; 2], thickness_mm: f64) -> Self {
        Self {
            kind,
            footprint_px,
            thickness_mm,
            iso_scale: [1.0, 1.0],
            aniso_scale: [1.0, 1.0],
            sides: default_sides(),
            bevel_px: 0.0,
            bevel_drop: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.thickness_mm > 0.0) {
            return Err(invalid(format!(
                "{} thickness must be positive, got {}",
                self.kind.name(),
                self.thickness_mm
            )));
        }
        for range in [self.iso_scale, self.aniso_scale] {
            if !(range[0] > 0.0 && range[0] <= range[1]) {
                return Err(invalid(format!("bad scale range {range:?}")));
            }
        }
        let min_scale = self.iso_scale[0] * self.aniso_scale[0];
        let min_extent = self.footprint_px[0].min(self.footprint_px[1]) * min_scale;
        if min_extent < 6.0 {
            return Err(invalid(format!(
                "{} footprint can shrink to {min_extent:.2} px; at least 6x6 px required",
                self.kind.name()
            )));
        }
        if self.kind == ShapeKind::RegularPolygon && self.sides < 3 {
            return Err(invalid("regular polygon needs at least 3 sides"));
        }
        if !(0.0..1.0).contains(&self.bevel_drop) || self.bevel_px < 0.0 {
            return Err(invalid("bevel drop must lie in [0, 1) and bevel width be >= 0"));
        }
        Ok(())
    }

    /// Signed distance (pixels, negative inside) in the object frame, for
    /// half extents `a` (along x) and `b` (along y).
    fn signed_distance(&self, x: f64, y: f64, a: f64, b: f64) -> f64 {
        match self.kind {
            ShapeKind::Disc => {
                let r = a.min(b);
                ((x / a).hypot(y / b) - 1.0) * r
            }
            ShapeKind::Box | ShapeKind::Bar => (x.abs() - a).max(y.abs() - b),
            ShapeKind::LTile => {
                // two arms, each 45% of the extent thick, sharing a corner
                let (ta, tb) = (0.45 * a, 0.45 * b);
                let top = (x.abs() - a).max((y - (b - tb)).abs() - tb);
                let left = (x - (-a + ta)).abs() - ta;
                let left = left.max(y.abs() - b);
                top.min(left)
            }
            ShapeKind::RegularPolygon => {
                let n = self.sides as usize;
                let r = a.min(b);
                let apothem = r * (PI / n as f64).cos();
                (0..n)
                    .map(|k| {
                        let t = 2.0 * PI * k as f64 / n as f64;
                        (x / a * t.cos() + y / b * t.sin()) * r - apothem
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// Height of the top face above the resting base at signed distance `sd`.
    fn profile_mm(&self, thickness: f64, sd: f64) -> u16 {
        let rim = if self.bevel_px > 0.0 {
            (1.0 + sd / self.bevel_px).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (thickness * (1.0 - self.bevel_drop * rim)).round().max(1.0) as u16
    }
}

/// Desk-scale object set used by default.
pub fn default_templates() -> Vec<ShapeTemplate> {
    let mk = |kind, fp: [f64; 2], t| ShapeTemplate {
        iso_scale: [0.8, 1.25],
        aniso_scale: [0.85, 1.15],
        bevel_px: 3.0,
        bevel_drop: 0.4,
        ..ShapeTemplate::new(kind, fp, t)
    };
    vec![
        mk(ShapeKind::Disc, [16.0, 16.0], 10.0),
        mk(ShapeKind::Box, [18.0, 12.0], 14.0),
        mk(ShapeKind::LTile, [18.0, 18.0], 8.0),
        mk(ShapeKind::Bar, [24.0, 9.0], 12.0),
        mk(ShapeKind::RegularPolygon, [17.0, 17.0], 10.0),
    ]
}

/// Pose and size of one dropped object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Object center `[row, col]` in pixel coordinates.
    pub center: [f64; 2],
    /// Rotation in radians.
    pub angle: f64,
    /// Total scale per axis `[length, width]` (isotropic times anisotropic).
    pub scale: [f64; 2],
    pub thickness_mm: f64,
}

impl Placement {
    pub fn random(template: &ShapeTemplate, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let iso = uniform(rng, template.iso_scale);
        let scale = [
            iso * uniform(rng, template.aniso_scale),
            iso * uniform(rng, template.aniso_scale),
        ];
        Self {
            center: [
                rng.random_range(0.0..height as f64),
                rng.random_range(0.0..width as f64),
            ],
            angle: rng.random_range(0.0..2.0 * PI),
            scale,
            thickness_mm: template.thickness_mm * iso,
        }
    }
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

/// Pixels covered by a placed object with their top-face height above base.
#[derive(Debug, Clone)]
struct Raster {
    pixels: Vec<(usize, u16)>,
}

/// Rasterizes at pixel centers; `None` when any covered pixel would fall
/// outside the bin.
fn rasterize(
    template: &ShapeTemplate,
    placement: &Placement,
    height: usize,
    width: usize,
) -> Option<Raster> {
    let a = 0.5 * template.footprint_px[0] * placement.scale[0];
    let b = 0.5 * template.footprint_px[1] * placement.scale[1];
    let reach = a.hypot(b).ceil() as isize + 1;
    let [cy, cx] = placement.center;
    let (sin, cos) = placement.angle.sin_cos();
    let mut pixels = Vec::new();
    for r in (cy.floor() as isize - reach)..=(cy.floor() as isize + reach) {
        for c in (cx.floor() as isize - reach)..=(cx.floor() as isize + reach) {
            let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
            let x = dx * cos + dy * sin;
            let y = -dx * sin + dy * cos;
            let sd = template.signed_distance(x, y, a, b);
            if sd >= 0.0 {
                continue;
            }
            if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
                return None;
            }
            let top = template.profile_mm(placement.thickness_mm, sd);
            pixels.push((r as usize * width + c as usize, top));
        }
    }
    (!pixels.is_empty()).then_some(Raster { pixels })
}

/// Per-instance record kept alongside the label map.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub id: u16,
    pub kind: ShapeKind,
    /// Index of the drop call that produced this instance (skips included).
    pub drop_order: usize,
    pub placement: Placement,
    /// Resting height of the object's base, millimeters.
    pub base_mm: u16,
    /// Full projected footprint before any later occlusion.
    pub footprint: Grid<bool>,
}

impl InstanceRecord {
    pub fn footprint_area(&self) -> usize {
        self.footprint.data().iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDrop {
    pub drop_order: usize,
    pub kind: ShapeKind,
    pub reason: String,
}

/// A bin with its pile.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Camera-to-floor distance; depth is `depth_range_mm - height`.
    pub depth_range_mm: u16,
    /// Top surface height above the floor, millimeters.
    pub heightfield: Grid<u16>,
    pub labels: InstanceLabelMap,
    pub instances: Vec<InstanceRecord>,
    pub skipped: Vec<SkippedDrop>,
    drops: usize,
}

/// Result of one [`drop_object`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropOutcome {
    Placed(u16),
    Skipped,
}

impl Scene {
    pub fn empty(height: usize, width: usize, depth_range_mm: u16) -> Self {
        Self {
            depth_range_mm,
            heightfield: Grid::filled(height, width, 0),
            labels: Grid::filled(height, width, 0),
            instances: Vec::new(),
            skipped: Vec::new(),
            drops: 0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }

    /// Places `template` at an explicit pose. Returns `None` (and records a
    /// skip) when the object leaves the bin or would rise to the camera.
    pub fn place_at(&mut self, template: &ShapeTemplate, placement: Placement) -> DropOutcome {
        let order = self.drops;
        self.drops += 1;
        match self.try_place(template, &placement) {
            Ok(raster) => {
                let id = self.commit(template, placement, raster, order);
                DropOutcome::Placed(id)
            }
            Err(reason) => {
                self.skipped.push(SkippedDrop {
                    drop_order: order,
                    kind: template.kind,
                    reason,
                });
                DropOutcome::Skipped
            }
        }
    }

    fn try_place(
        &self,
        template: &ShapeTemplate,
        placement: &Placement,
    ) -> std::result::Result<(Raster, u16), String> {
        let (h, w) = self.dims();
        let raster = rasterize(template, placement, h, w)
            .ok_or_else(|| "footprint does not fit inside the bin".to_string())?;
        if self.instances.len() >= u16::MAX as usize {
            return Err("instance id space exhausted".into());
        }
        let hf = self.heightfield.data();
        let base = raster.pixels.iter().map(|&(i, _)| hf[i]).max().unwrap_or(0);
        let peak = raster.pixels.iter().map(|&(_, t)| t).max().unwrap_or(0);
        if base as u32 + peak as u32 >= self.depth_range_mm as u32 {
            return Err("pile would reach the camera".into());
        }
        Ok((raster, base))
    }

    fn commit(
        &mut self,
        template: &ShapeTemplate,
        placement: Placement,
        (raster, base): (Raster, u16),
        order: usize,
    ) -> u16 {
        let (h, w) = self.dims();
        let id = self.instances.len() as u16 + 1;
        let mut footprint = Grid::filled(h, w, false);
        for &(i, top) in &raster.pixels {
            let new_top = base + top;
            footprint.data_mut()[i] = true;
            // base is the max under the footprint and top >= 1, so the new
            // surface always strictly exceeds the current one here.
            if new_top > self.heightfield.data()[i] {
                self.heightfield.data_mut()[i] = new_top;
                self.labels.data_mut()[i] = id;
            }
        }
        self.instances.push(InstanceRecord {
            id,
            kind: template.kind,
            drop_order: order,
            placement,
            base_mm: base,
            footprint,
        });
        id
    }

    /// Visible pixels of instance `id`.
    pub fn visible_mask(&self, id: u16) -> Grid<bool> {
        self.labels.map(|l| l == id)
    }
}

/// Drops `template` in a random pose, retrying up to
/// [`MAX_PLACEMENT_ATTEMPTS`] times before recording a skip.
pub fn drop_object(scene: &mut Scene, template: &ShapeTemplate, rng: &mut impl Rng) -> DropOutcome {
    let (h, w) = scene.dims();
    let order = scene.drops;
    let mut last_reason = String::new();
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let placement = Placement::random(template, h, w, rng);
        match scene.try_place(template, &placement) {
            Ok(raster) => {
                scene.drops += 1;
                return DropOutcome::Placed(scene.commit(template, placement, raster, order));
            }
            Err(reason) => last_reason = reason,
        }
    }
    scene.drops += 1;
    scene.skipped.push(SkippedDrop {
        drop_order: order,
        kind: template.kind,
        reason: format!("no valid placement after {MAX_PLACEMENT_ATTEMPTS} attempts: {last_reason}"),
    });
    DropOutcome::Skipped
}

/// Parametric depth-sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_mm: f64,
    pub step_mm: f64,
    /// Fraction of pixels replaced by the invalid sentinel.
    pub dropout: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn clean() -> Self {
        Self {
            sigma_mm: 0.0,
            step_mm: 0.0,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_mm >= 0.0) || !(self.step_mm >= 0.0) || !(0.0..1.0).contains(&self.dropout)
        {
            return Err(invalid(format!(
                "noise model needs sigma >= 0, step >= 0 and dropout in [0, 1), got {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_mm: 1.0,
            step_mm: 1.0,
            dropout: 0.002,
            seed: 0,
        }
    }
}

/// Orthographic depth rendering: `depth_range - height`, then gaussian
/// noise, quantization to `step_mm`, and dropout to [`INVALID_DEPTH`].
/// Valid depths are clamped to at least 1 mm so they never collide with the
/// sentinel.
pub fn render_depth(scene: &Scene, noise: &NoiseModel) -> Result<DepthMap> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let gauss = Normal::new(0.0, noise.sigma_mm.max(f64::MIN_POSITIVE))
        .map_err(|e| invalid(e.to_string()))?;
    let range = scene.depth_range_mm as f64;
    let data = scene
        .heightfield
        .data()
        .iter()
        .map(|&h| {
            let mut d = range - h as f64;
            if noise.sigma_mm > 0.0 {
                d += gauss.sample(&mut rng);
            }
            if noise.step_mm > 0.0 {
                d = (d / noise.step_mm).round() * noise.step_mm;
            }
            if noise.dropout > 0.0 && rng.random::<f64>() < noise.dropout {
                return INVALID_DEPTH;
            }
            d.round().clamp(1.0, u16::MAX as f64) as u16
        })
        .collect();
    let (h, w) = scene.dims();
    Grid::new(h, w, data)
}

/// Whether a pile holds many object kinds or repeats a single one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PileMode {
    #[default]
    Multi,
    Mono,
}

/// Bin geometry and object set of generated scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub depth_range_mm: u16,
    /// Inclusive range of drops per scene.
    pub drops: [usize; 2],
    pub templates: Vec<ShapeTemplate>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            depth_range_mm: 300,
            drops: [14, 22],
            templates: default_templates(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(invalid("bin must have positive extents"));
        }
        if self.drops[0] > self.drops[1] {
            return Err(invalid(format!("bad drop range {:?}", self.drops)));
        }
        if self.templates.is_empty() {
            return Err(invalid("no shape templates"));
        }
        self.templates.iter().try_for_each(ShapeTemplate::validate)
    }
}

/// Generates one scene; scene `index` uses its own PRNG stream of `seed`, so
/// scenes are independent of generation order.
pub fn generate_scene(config: &SceneConfig, mode: PileMode, seed: u64, index: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = scene_rng(seed, index);
    let mut scene = Scene::empty(config.height, config.width, config.depth_range_mm);
    let n = rng.random_range(config.drops[0]..=config.drops[1]);
    let mono = rng.random_range(0..config.templates.len());
    for _ in 0..n {
        let t = match mode {
            PileMode::Mono => mono,
            PileMode::Multi => rng.random_range(0..config.templates.len()),
        };
        drop_object(&mut scene, &config.templates[t], &mut rng);
    }
    Ok(scene)
}

pub(crate) fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
