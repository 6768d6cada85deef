//! The run configuration: every tunable of the pipeline in one TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::{DiscriminatorConfig, TrainConfig};
use crate::data::ToyDatasetConfig;
use crate::error::{contract, Error, Result};
use crate::field::FieldConfig;
use crate::meshing::MeshConfig;
use crate::rendering::{CameraConfig, PatchConfig, RenderConfig};
use crate::surface::SurfaceConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Image collection used for training; `gen-data` writes here.
    pub dataset: PathBuf,
    /// Root for checkpoints, logs and renders.
    pub output: PathBuf,
    pub data: ToyDatasetConfig,
    pub camera: CameraConfig,
    pub patch: PatchConfig,
    pub render: RenderConfig,
    pub surface: SurfaceConfig,
    pub field: FieldConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    pub mesh: MeshConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Writes the resolved configuration to `dir/config.toml`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.camera.validate()?;
        self.patch.validate()?;
        self.render.validate()?;
        self.surface.validate()?;
        self.field.validate()?;
        self.train.validate()?;
        self.mesh.validate()?;
        let k = self.patch.size;
        contract!(
            k.is_power_of_two() && self.discriminator.channels.len() == k.trailing_zeros() as usize,
            "patch size {k} needs a power of two and log2(K) discriminator stages, got {}",
            self.discriminator.channels.len()
        );
        contract!(
            k <= self.camera.image_size,
            "patch size {k} exceeds image size {}",
            self.camera.image_size
        );
        Ok(())
    }
}
