//! On-disk project: content-addressed assets, job records, and a manifest
//! pinning the active checkpoint.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use styleweave::checkpoint::{self, sha256_hex};
use styleweave::inversion::PerceptualRegistry;
use styleweave::latent::{fit_sigma_gaussian, SigmaGaussian};
use styleweave::{Generator, GeneratorConfig, StyleStack};

use crate::assets::{AssetKind, AssetStore, AssetUri};
use crate::error::{Result, StudioError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const JOBS_DIR: &str = "jobs";
pub const MANIFEST_VERSION: u32 = 1;

/// Samples used when a checkpoint carries no fitted coefficient Gaussian.
pub const GAUSSIAN_SAMPLES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Asset URI of the active checkpoint.
    pub checkpoint: String,
    pub checkpoint_sha256: String,
    pub config_hash: String,
    pub config: GeneratorConfig,
}

pub fn config_hash(config: &GeneratorConfig) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))
}

#[derive(Debug)]
pub struct Project {
    root: PathBuf,
    assets: AssetStore,
    manifest: Manifest,
    generator: Arc<Generator>,
    stored_gaussian: Option<SigmaGaussian>,
    fitted_gaussian: OnceLock<SigmaGaussian>,
    perceptual: PerceptualRegistry,
}

impl Project {
    /// Creates the layout under `root` around the checkpoint `bytes`.
    pub fn init(root: impl Into<PathBuf>, checkpoint_bytes: &[u8]) -> Result<Project> {
        let root = root.into();
        if root.join(MANIFEST_FILE).exists() {
            return Err(StudioError::bad(format!(
                "{} already holds a project",
                root.display()
            )));
        }
        let ckpt = checkpoint::decode(checkpoint_bytes)?;
        for dir in AssetKind::ALL.iter().map(|k| k.dir()).chain([JOBS_DIR]) {
            let p = root.join(dir);
            fs::create_dir_all(&p).map_err(|e| StudioError::io(&p, e))?;
        }
        let assets = AssetStore::new(&root);
        let uri = assets.put(AssetKind::Checkpoints, checkpoint_bytes)?;
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            checkpoint: uri.to_string(),
            checkpoint_sha256: uri.hash.clone(),
            config_hash: config_hash(ckpt.generator.config()),
            config: ckpt.generator.config().clone(),
        };
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?)
            .map_err(|e| StudioError::io(&path, e))?;
        Project::open(root)
    }

    /// Opens an existing project, checking the manifest against the
    /// checkpoint it names.
    pub fn open(root: impl Into<PathBuf>) -> Result<Project> {
        let root = root.into();
        let path = root.join(MANIFEST_FILE);
        let raw = fs::read(&path).map_err(|e| StudioError::io(&path, e))?;
        let manifest: Manifest = serde_json::from_slice(&raw)?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(StudioError::bad(format!(
                "manifest version {} (expected {MANIFEST_VERSION})",
                manifest.format_version
            )));
        }
        let assets = AssetStore::new(&root);
        let uri = AssetUri::parse_as(&manifest.checkpoint, AssetKind::Checkpoints)?;
        let bytes = assets.get(&uri)?;
        let found = sha256_hex(&bytes);
        if found != manifest.checkpoint_sha256 {
            return Err(StudioError::HashMismatch {
                expected: manifest.checkpoint_sha256.clone(),
                found,
            });
        }
        let ckpt = checkpoint::decode(&bytes)?;
        let found = config_hash(ckpt.generator.config());
        if found != manifest.config_hash || ckpt.generator.config() != &manifest.config {
            return Err(StudioError::HashMismatch {
                expected: manifest.config_hash.clone(),
                found,
            });
        }
        Ok(Project {
            assets,
            manifest,
            stored_gaussian: SigmaGaussian::from_aux(&ckpt.aux)?,
            generator: Arc::new(ckpt.generator),
            fitted_gaussian: OnceLock::new(),
            perceptual: PerceptualRegistry::default(),
            root,
        })
    }

    /// Opens `root`, creating it when it has no manifest. With `checkpoint`
    /// set, a new project adopts that file and an existing one must already
    /// be pinned to it.
    pub fn open_or_init(root: impl Into<PathBuf>, checkpoint: Option<&Path>) -> Result<Project> {
        let root = root.into();
        let read = |p: &Path| fs::read(p).map_err(|e| StudioError::io(p, e));
        if root.join(MANIFEST_FILE).exists() {
            let project = Project::open(root)?;
            if let Some(p) = checkpoint {
                project.check_hash(Some(&sha256_hex(&read(p)?)))?;
            }
            return Ok(project);
        }
        let bytes = match checkpoint {
            Some(p) => read(p)?,
            None => checkpoint::encode(
                &Generator::new(GeneratorConfig::desk(0))?,
                &Default::default(),
            )?,
        };
        Project::init(root, &bytes)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn assets(&self) -> &AssetStore {
        &self.assets
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn checkpoint_hash(&self) -> &str {
        &self.manifest.checkpoint_sha256
    }

    pub fn generator(&self) -> &Arc<Generator> {
        &self.generator
    }

    pub fn perceptual(&self) -> &PerceptualRegistry {
        &self.perceptual
    }

    /// 409 when a request was prepared against another checkpoint.
    pub fn check_hash(&self, expected: Option<&str>) -> Result<()> {
        match expected {
            Some(h) if h != self.checkpoint_hash() => Err(StudioError::HashMismatch {
                expected: h.to_string(),
                found: self.checkpoint_hash().to_string(),
            }),
            _ => Ok(()),
        }
    }

    /// The checkpoint's stored Gaussian, or one fitted on first use.
    pub fn gaussian(&self) -> Result<&SigmaGaussian> {
        if let Some(g) = &self.stored_gaussian {
            return Ok(g);
        }
        if let Some(g) = self.fitted_gaussian.get() {
            return Ok(g);
        }
        let g = fit_sigma_gaussian(&self.generator, GAUSSIAN_SAMPLES, 0)?;
        Ok(self.fitted_gaussian.get_or_init(|| g))
    }

    pub fn put_style(&self, stack: &StyleStack) -> Result<String> {
        Ok(self
            .assets
            .put(AssetKind::Styles, &serde_json::to_vec(stack)?)?
            .hash)
    }

    /// Looks up a style by the id returned from sampling.
    pub fn style(&self, id: &str) -> Result<StyleStack> {
        let uri = AssetUri::parse_as(&format!("styles/{id}.json"), AssetKind::Styles)
            .map_err(|_| StudioError::bad(format!("malformed style id `{id}`")))?;
        let stack: StyleStack = serde_json::from_slice(&self.assets.get(&uri)?)?;
        let l = self.generator.num_layers();
        if stack.num_rows() != l || stack.row_width() != self.generator.config().latent_dim {
            return Err(StudioError::bad(format!(
                "style {id} does not fit this generator"
            )));
        }
        Ok(stack)
    }

    /// Loads a checkpoint asset other than the active one.
    pub fn load_generator(&self, uri: &str) -> Result<Generator> {
        let bytes = self.assets.get_str(uri, AssetKind::Checkpoints)?;
        Ok(checkpoint::decode(&bytes)?.generator)
    }

    pub fn job_path(&self, id: uuid::Uuid) -> PathBuf {
        self.root.join(JOBS_DIR).join(format!("{id}.json"))
    }

    pub fn write_job(&self, job: &crate::Job) -> Result<()> {
        let path = self.job_path(job.id);
        fs::write(&path, serde_json::to_vec_pretty(job)?).map_err(|e| StudioError::io(&path, e))
    }
}
