//! On-disk scene datasets: generation into a directory of PGM maps with JSON
//! sidecars, and loading back.
//!
//! Layout of a dataset root:
//!
//! ```text
//! manifest.json
//! scene_0000_depth.pgm    16-bit depth, millimeters, 0 = invalid
//! scene_0000_labels.pgm   16-bit instance ids, 0 = floor
//! scene_0000_meta.json    per-instance records
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{BinaryMask, ContourMap, DepthMap, Grid, InstanceLabelMap};
use crate::groundtruth::{derive_contours, instance_masks, GraspCriteria};
use crate::pgm::{encode_pgm16, read_pgm};
use crate::pilegen::{
    generate_scene, render_depth, scene_rng, NoiseModel, PileMode, Placement, Scene, SceneConfig,
    ShapeKind, SkippedDrop,
};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;
const NOISE_SALT: u64 = 0x6e6f_6973_655f_7631;

/// A named group of scenes generated in one pile mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub name: String,
    pub count: usize,
    #[serde(default)]
    pub mode: PileMode,
}

impl SplitConfig {
    pub fn new(name: impl Into<String>, count: usize, mode: PileMode) -> Self {
        Self {
            name: name.into(),
            count,
            mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    /// Noise parameters; the seed field is replaced by a per-scene value.
    pub noise: NoiseModel,
    pub splits: Vec<SplitConfig>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneConfig::default(),
            noise: NoiseModel::default(),
            splits: vec![
                SplitConfig::new("train", 200, PileMode::Multi),
                SplitConfig::new("test", 50, PileMode::Multi),
                SplitConfig::new("test-mono", 50, PileMode::Mono),
            ],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.noise.validate()?;
        let mut names: Vec<&str> = self.splits.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("split names must be unique"));
        }
        Ok(())
    }

    pub fn total_scenes(&self) -> usize {
        self.splits.iter().map(|s| s.count).sum()
    }
}

/// Metadata sidecar entry for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub id: u16,
    pub kind: ShapeKind,
    pub drop_order: usize,
    pub base_mm: u16,
    pub placement: Placement,
    pub footprint_area: usize,
    pub visible_area: usize,
    /// Full footprint as `[start, length]` runs over row-major indices.
    pub footprint_runs: Vec<[u32; 2]>,
}

impl InstanceMeta {
    pub fn footprint(&self, height: usize, width: usize) -> Result<Grid<bool>> {
        let mut g = Grid::filled(height, width, false);
        for &[start, len] in &self.footprint_runs {
            let (s, e) = (start as usize, start as usize + len as usize);
            if e > height * width {
                return Err(Error::Format(format!(
                    "footprint run {start}+{len} of instance {} exceeds the image",
                    self.id
                )));
            }
            g.data_mut()[s..e].fill(true);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub id: String,
    pub split: String,
    pub mode: PileMode,
    pub index: u64,
    pub height: usize,
    pub width: usize,
    pub depth_range_mm: u16,
    pub noise_seed: u64,
    pub instances: Vec<InstanceMeta>,
    pub skipped: Vec<SkippedDrop>,
}

impl SceneMeta {
    pub fn kinds(&self) -> Vec<ShapeKind> {
        let mut k: Vec<ShapeKind> = self.instances.iter().map(|i| i.kind).collect();
        k.sort_by_key(|k| k.name());
        k.dedup();
        k
    }

    pub fn footprint_area(&self, id: u16) -> Option<usize> {
        self.instances
            .iter()
            .find(|i| i.id == id)
            .map(|i| i.footprint_area)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub split: String,
    pub depth: String,
    pub labels: String,
    pub meta: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileError {
    pub file: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// False when any file failed to write.
    pub complete: bool,
    pub config: DatasetConfig,
    pub scenes: Vec<SceneEntry>,
    #[serde(default)]
    pub errors: Vec<FileError>,
}

impl Manifest {
    pub fn split(&self, name: &str) -> impl Iterator<Item = &SceneEntry> + '_ {
        let name = name.to_owned();
        self.scenes.iter().filter(move |s| s.split == name)
    }

    pub fn split_names(&self) -> Vec<&str> {
        self.config.splits.iter().map(|s| s.name.as_str()).collect()
    }
}

fn runs(mask: &Grid<bool>) -> Vec<[u32; 2]> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in mask.data().iter().chain(std::iter::once(&false)).enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push([s as u32, (i - s) as u32]);
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn scene_meta(scene: &Scene, id: &str, split: &str, mode: PileMode, index: u64, noise_seed: u64) -> SceneMeta {
    let (height, width) = scene.dims();
    SceneMeta {
        id: id.to_owned(),
        split: split.to_owned(),
        mode,
        index,
        height,
        width,
        depth_range_mm: scene.depth_range_mm,
        noise_seed,
        instances: scene
            .instances
            .iter()
            .map(|r| InstanceMeta {
                id: r.id,
                kind: r.kind,
                drop_order: r.drop_order,
                base_mm: r.base_mm,
                placement: r.placement.clone(),
                footprint_area: r.footprint_area(),
                visible_area: scene.labels.data().iter().filter(|&&l| l == r.id).count(),
                footprint_runs: runs(&r.footprint),
            })
            .collect(),
        skipped: scene.skipped.clone(),
    }
}

/// Noise seed of scene `index`, independent of the scene layout stream.
pub fn noise_seed(seed: u64, index: u64) -> u64 {
    scene_rng(seed ^ NOISE_SALT, index).next_u64()
}

/// One fully built scene before it is written.
#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub depth: DepthMap,
    pub scene: Scene,
    pub meta: SceneMeta,
}

/// Builds scene `index` (global across splits) of a dataset in memory.
pub fn build_scene(config: &DatasetConfig, split: &SplitConfig, index: u64) -> Result<GeneratedScene> {
    let scene = generate_scene(&config.scene, split.mode, config.seed, index)?;
    let ns = noise_seed(config.seed, index);
    let depth = render_depth(
        &scene,
        &NoiseModel {
            seed: ns,
            ..config.noise.clone()
        },
    )?;
    let id = format!("scene_{index:04}");
    let meta = scene_meta(&scene, &id, &split.name, split.mode, index, ns);
    Ok(GeneratedScene { depth, scene, meta })
}

fn write_file(root: &Path, name: &str, bytes: &[u8], errors: &mut Vec<FileError>) {
    if let Err(e) = fs::write(root.join(name), bytes) {
        errors.push(FileError {
            file: name.to_owned(),
            message: e.to_string(),
        });
    }
}

/// Generates every split into `root` and writes the manifest last. Write
/// failures are collected per file; the manifest then says `complete: false`.
pub fn generate_dataset(config: &DatasetConfig, root: impl AsRef<Path>) -> Result<Manifest> {
    config.validate()?;
    let root = root.as_ref();
    fs::create_dir_all(root)?;
    let mut scenes = Vec::with_capacity(config.total_scenes());
    let mut errors = Vec::new();
    let mut index = 0u64;
    for split in &config.splits {
        for _ in 0..split.count {
            let g = build_scene(config, split, index)?;
            let id = g.meta.id.clone();
            let entry = SceneEntry {
                id: id.clone(),
                split: split.name.clone(),
                depth: format!("{id}_depth.pgm"),
                labels: format!("{id}_labels.pgm"),
                meta: format!("{id}_meta.json"),
            };
            write_file(root, &entry.depth, &encode_pgm16(&g.depth), &mut errors);
            write_file(root, &entry.labels, &encode_pgm16(&g.scene.labels), &mut errors);
            write_file(root, &entry.meta, &serde_json::to_vec_pretty(&g.meta)?, &mut errors);
            scenes.push(entry);
            index += 1;
        }
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        complete: errors.is_empty(),
        config: config.clone(),
        scenes,
        errors,
    };
    fs::write(root.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// A loaded scene with its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub depth: DepthMap,
    pub labels: InstanceLabelMap,
    pub meta: SceneMeta,
}

impl SceneSample {
    pub fn from_generated(g: GeneratedScene) -> Self {
        Self {
            depth: g.depth,
            labels: g.scene.labels,
            meta: g.meta,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }

    pub fn contours(&self) -> ContourMap {
        derive_contours(&self.labels)
    }

    /// Visible masks of the instances that qualify as mask ground truth.
    pub fn graspable_masks(&self, criteria: &GraspCriteria) -> Vec<BinaryMask> {
        graspable_from_labels(&self.labels, &self.meta, criteria)
    }
}

/// Graspable masks of a (possibly transformed) label map; footprint areas
/// come from the metadata and are invariant under dihedral transforms.
pub fn graspable_from_labels(
    labels: &InstanceLabelMap,
    meta: &SceneMeta,
    criteria: &GraspCriteria,
) -> Vec<BinaryMask> {
    crate::groundtruth::filter_graspable(instance_masks(labels), |id| meta.footprint_area(id), criteria)
}

/// Read access to a generated dataset directory.
#[derive(Debug, Clone)]
pub struct SceneStore {
    root: PathBuf,
    manifest: Manifest,
}

impl SceneStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn entry(&self, id: &str) -> Option<&SceneEntry> {
        self.manifest.scenes.iter().find(|s| s.id == id)
    }

    pub fn load(&self, entry: &SceneEntry) -> Result<SceneSample> {
        let depth = read_pgm(self.root.join(&entry.depth))?;
        let labels = read_pgm(self.root.join(&entry.labels))?;
        let meta: SceneMeta = serde_json::from_slice(&fs::read(self.root.join(&entry.meta))?)?;
        depth.expect_dims(meta.height, meta.width)?;
        labels.expect_dims(meta.height, meta.width)?;
        Ok(SceneSample { depth, labels, meta })
    }

    pub fn load_split(&self, split: &str) -> Result<Vec<SceneSample>> {
        self.manifest.split(split).map(|e| self.load(e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, mode: PileMode) -> DatasetConfig {
        DatasetConfig {
            seed: 11,
            splits: vec![SplitConfig::new("train", n, mode)],
            ..DatasetConfig::default()
        }
    }

    fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    }

    #[test]
    fn three_scenes_are_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(3, PileMode::Multi), a.path()).unwrap();
        assert_eq!(m.scenes.len(), 3);
        assert!(m.complete);
        generate_dataset(&small(3, PileMode::Multi), b.path()).unwrap();
        let (fa, fb) = (read_all(a.path()), read_all(b.path()));
        assert_eq!(fa.len(), 10);
        assert_eq!(fa, fb);
    }

    #[test]
    fn mono_scenes_use_one_kind() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&small(4, PileMode::Mono), dir.path()).unwrap();
        let store = SceneStore::open(dir.path()).unwrap();
        for s in store.load_split("train").unwrap() {
            assert_eq!(s.meta.kinds().len(), 1);
        }
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(0, PileMode::Multi), dir.path()).unwrap();
        assert!(m.scenes.is_empty() && m.complete);
        let store = SceneStore::open(dir.path()).unwrap();
        assert!(store.load_split("train").unwrap().is_empty());
    }

    #[test]
    fn round_trip_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(2, PileMode::Multi);
        generate_dataset(&cfg, dir.path()).unwrap();
        let store = SceneStore::open(dir.path()).unwrap();
        let loaded = store.load(store.entry("scene_0001").unwrap()).unwrap();
        let built = build_scene(&cfg, &cfg.splits[0], 1).unwrap();
        assert_eq!(loaded.depth, built.depth);
        assert_eq!(loaded.labels, built.scene.labels);
        for (m, r) in loaded.meta.instances.iter().zip(&built.scene.instances) {
            assert_eq!(m.footprint(64, 64).unwrap(), r.footprint);
        }
    }

    #[test]
    fn clean_render_recovers_heightfield() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(1, PileMode::Multi);
        cfg.noise = NoiseModel::clean();
        generate_dataset(&cfg, dir.path()).unwrap();
        let store = SceneStore::open(dir.path()).unwrap();
        let s = store.load_split("train").unwrap().remove(0);
        let built = build_scene(&cfg, &cfg.splits[0], 0).unwrap();
        let height = s.depth.map(|d| s.meta.depth_range_mm - d);
        assert_eq!(height, built.scene.heightfield);
    }

    #[test]
    fn write_failure_marks_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        // a directory where a file should go makes that single write fail
        fs::create_dir(dir.path().join("scene_0000_meta.json")).unwrap();
        let m = generate_dataset(&small(2, PileMode::Multi), dir.path()).unwrap();
        assert!(!m.complete);
        assert_eq!(m.errors.len(), 1);
        assert_eq!(m.errors[0].file, "scene_0000_meta.json");
        let on_disk: Manifest =
            serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(on_disk, m);
    }

    #[test]
    fn runs_encode_masks() {
        let g = Grid::new(2, 3, vec![true, true, false, false, true, true]).unwrap();
        assert_eq!(runs(&g), vec![[0, 2], [4, 2]]);
    }
}
