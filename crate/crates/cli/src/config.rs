use std::fmt;
use std::path::{Path, PathBuf};

use fusion3d::eval::EvalConfig;
use fusion3d::fcr::FcrDemoConfig;
use fusion3d::ogs::OgsConfig;
use fusion3d::sparse_voxel::VoxelGridConfig;
use fusion3d::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Bad flags, a malformed config, or input data that fails validation.
/// Maps to exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(InputError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// KITTI split directory holding `velodyne/`, `calib/`, `label_2/`, `image_2/`.
    pub dataset_root: Option<PathBuf>,
    /// Scenes to process; every scene under `dataset_root` when absent.
    pub scene_ids: Option<Vec<String>>,
    /// Sample database; `<dataset_root>/gt_database` when absent.
    pub database_root: Option<PathBuf>,
    pub ogs: OgsConfig,
    pub voxel: VoxelGridConfig,
    pub eval: EvalConfig,
    pub fcr: FcrDemoConfig,
    pub synth: SynthConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; all cores when absent.
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: None,
            scene_ids: None,
            database_root: None,
            ogs: OgsConfig::default(),
            voxel: VoxelGridConfig::default(),
            eval: EvalConfig::default(),
            fcr: FcrDemoConfig::default(),
            synth: SynthConfig::default(),
            seed: 7,
            output_dir: PathBuf::from("out"),
            jobs: None,
        }
    }
}

/// Values given on the command line take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| input_error(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| input_error(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.output_dir = o.clone();
        }
        if let Some(j) = overrides.jobs {
            cfg.jobs = Some(j);
        }
        if cfg.jobs == Some(0) {
            return Err(input_error("--jobs must be at least 1"));
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON of everything that can change results.
    /// The output directory and worker count are excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.jobs = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn dataset_root(&self) -> anyhow::Result<&Path> {
        let root = self
            .dataset_root
            .as_deref()
            .ok_or_else(|| input_error("dataset_root is not set in the config"))?;
        if !root.is_dir() {
            return Err(input_error(format!("dataset root {} does not exist", root.display())));
        }
        Ok(root)
    }

    pub fn database_root(&self) -> anyhow::Result<PathBuf> {
        match &self.database_root {
            Some(p) => Ok(p.clone()),
            None => Ok(self.dataset_root()?.join("gt_database")),
        }
    }

    pub fn scene_ids(&self) -> anyhow::Result<Vec<String>> {
        match &self.scene_ids {
            Some(ids) => Ok(ids.clone()),
            None => fusion3d::kitti_io::list_scene_ids(self.dataset_root()?).map_err(|e| input_error(e.to_string())),
        }
    }
}

/// Fields every manifest starts with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
}

impl ManifestHeader {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_output_dir_and_jobs() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_dir: "elsewhere".into(),
            jobs: Some(3),
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 8, ..RunConfig::default() };
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            seed: Some(99),
            out: Some("x".into()),
            jobs: Some(2),
        };
        let cfg = RunConfig::load(None, &o).unwrap();
        assert_eq!((cfg.seed, cfg.output_dir.as_path(), cfg.jobs), (99, Path::new("x"), Some(2)));
        assert!(RunConfig::load(None, &Overrides { jobs: Some(0), ..Default::default() }).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = std::env::temp_dir().join(format!("fusion3d-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("c.json");
        std::fs::write(&p, r#"{"sed": 3}"#).unwrap();
        let err = RunConfig::load(Some(&p), &Overrides::default()).unwrap_err();
        assert!(err.downcast_ref::<InputError>().is_some());
        std::fs::write(&p, r#"{"seed": 3, "ogs": {"tau_bev": 0.1, "tau_image": 0.4}}"#).unwrap();
        let cfg = RunConfig::load(Some(&p), &Overrides::default()).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.ogs.tau_image, 0.4);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
