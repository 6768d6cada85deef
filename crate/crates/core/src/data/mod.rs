//! Unposed image collections: a procedural toy generator, the on-disk
//! manifest format and lazy loading of real patches.

pub mod toy;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::rendering::{extract_patch, sample_camera, sample_patch_spec, CameraConfig, Image, Patch, PatchConfig};

pub use toy::{render_object, silhouette, ObjectFamily, Shape, ToyObject};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyDatasetConfig {
    pub family: ObjectFamily,
    pub count: usize,
    pub seed: u64,
    /// Sub-pixel grid size per axis for anti-aliasing.
    pub supersample: usize,
    pub palette: Vec<[f64; 3]>,
}

impl Default for ToyDatasetConfig {
    fn default() -> Self {
        Self {
            family: ObjectFamily::Mixed,
            count: 1000,
            seed: 0,
            supersample: 3,
            palette: vec![
                [0.85, 0.25, 0.2],
                [0.2, 0.55, 0.85],
                [0.25, 0.7, 0.3],
                [0.9, 0.75, 0.2],
                [0.6, 0.35, 0.75],
                [0.45, 0.45, 0.45],
            ],
        }
    }
}

impl ToyDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.count > 0, "toy dataset needs at least one image");
        contract!(self.supersample >= 1, "supersample must be at least 1");
        contract!(!self.palette.is_empty(), "palette must not be empty");
        contract!(
            self.palette.iter().flatten().all(|c| (0.0..=1.0).contains(c)),
            "palette colors must lie in [0, 1]"
        );
        Ok(())
    }
}

/// Intrinsics shared by every image of a collection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    /// Camera-to-world pose, if known: camera center and row-major rotation
    /// with columns right, down, forward. Never read during training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<RecordedPose>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordedPose {
    pub position: [f64; 3],
    pub rotation: [f64; 9],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub intrinsics: Intrinsics,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Renders `config.count` random objects from random viewpoints into `dir`
/// as `NNNNN.png` plus a manifest. Deterministic in `config.seed`.
pub fn generate_toy_dataset(config: &ToyDatasetConfig, camera: &CameraConfig, dir: &Path) -> Result<Manifest> {
    config.validate()?;
    camera.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scenes = (0..config.count)
        .map(|_| {
            let object = ToyObject::sample(&mut rng, config.family, &config.palette);
            Ok((object, sample_camera(&mut rng, camera)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let entries = scenes
        .par_iter()
        .enumerate()
        .map(|(i, (object, pose))| {
            let file = format!("{i:05}.png");
            render_object(object, pose, config.supersample).save_png(&dir.join(&file))?;
            let r = pose.orientation;
            Ok(ManifestEntry {
                file,
                pose: Some(RecordedPose {
                    position: pose.position.into(),
                    rotation: std::array::from_fn(|k| r[(k / 3, k % 3)]),
                }),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        name: format!("toy-{:?}", config.family).to_lowercase(),
        intrinsics: Intrinsics {
            focal: camera.focal(),
            width: camera.image_size,
            height: camera.image_size,
        },
        entries,
    };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// A collection of same-sized RGB images.
pub trait ImageSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn image(&self, index: usize) -> Result<&Image>;
}

impl ImageSource for [Image] {
    fn len(&self) -> usize {
        <[Image]>::len(self)
    }

    fn image(&self, index: usize) -> Result<&Image> {
        self.get(index)
            .ok_or_else(|| Error::Contract(format!("image index {index} out of range")))
    }
}

impl ImageSource for Vec<Image> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn image(&self, index: usize) -> Result<&Image> {
        self.as_slice().image(index)
    }
}

/// A manifest-backed collection; images decode on first access.
#[derive(Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
    cache: Vec<OnceLock<Image>>,
}

impl Dataset {
    /// Opens `path` (a directory holding `manifest.txt`, or the manifest
    /// itself) and checks that every referenced file exists with the
    /// declared dimensions.
    pub fn open(path: &Path) -> Result<Self> {
        let (root, manifest_path) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
        };
        let manifest = Manifest::read(&manifest_path)?;
        contract!(!manifest.entries.is_empty(), "{} lists no images", manifest_path.display());
        let Intrinsics { width, height, .. } = manifest.intrinsics;
        for e in &manifest.entries {
            let f = root.join(&e.file);
            let (w, h) = image::image_dimensions(&f).map_err(|err| Error::Load(format!("{}: {err}", f.display())))?;
            if (w as usize, h as usize) != (width, height) {
                return Err(Error::Load(format!(
                    "{} is {w}x{h}, manifest declares {width}x{height}",
                    f.display()
                )));
            }
        }
        let cache = (0..manifest.entries.len()).map(|_| OnceLock::new()).collect();
        Ok(Self { root, manifest, cache })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl ImageSource for Dataset {
    fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    fn image(&self, index: usize) -> Result<&Image> {
        let cell = self
            .cache
            .get(index)
            .ok_or_else(|| Error::Contract(format!("image index {index} out of range")))?;
        if let Some(img) = cell.get() {
            return Ok(img);
        }
        let img = Image::load_png(&self.root.join(&self.manifest.entries[index].file))?;
        let _ = cell.set(img);
        Ok(cell.get().expect("cell was just set"))
    }
}

/// Draws a uniformly random image and a random patch from it.
pub fn sample_real_patch<S: ImageSource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    rng: &mut R,
    config: &PatchConfig,
) -> Result<Patch> {
    contract!(!source.is_empty(), "cannot sample from an empty collection");
    let image = source.image(rng.random_range(0..source.len()))?;
    let spec = sample_patch_spec(rng, config, image.width, image.height)?;
    extract_patch(image, &spec, config.size)
}
