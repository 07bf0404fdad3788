//! Artifact bundle: a directory of JSON documents plus `manifest.json`
//! holding a sha256 for every file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::{self, RunArtifacts};

pub const FORMAT: &str = "innoscope-bundle";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub config_fingerprint: Option<String>,
    #[serde(default)]
    pub input_sha256: Option<String>,
    pub files: BTreeMap<String, String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest { format: FORMAT.into(), version: VERSION, config_fingerprint: None, input_sha256: None, files: BTreeMap::new() }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Handle on a bundle directory. Writes go through the manifest so every
/// document stays hashed.
#[derive(Clone, Debug)]
pub struct Bundle {
    dir: PathBuf,
    manifest: Manifest,
}

impl Bundle {
    /// Open an existing bundle, or start an empty one if the directory has no
    /// manifest yet.
    pub fn open_or_create(dir: &Path) -> Result<Bundle> {
        fs::create_dir_all(dir)?;
        let mpath = dir.join(MANIFEST);
        let manifest = if mpath.exists() { read_manifest(&mpath)? } else { Manifest::default() };
        Ok(Bundle { dir: dir.to_path_buf(), manifest })
    }

    pub fn open(dir: &Path) -> Result<Bundle> {
        let mpath = dir.join(MANIFEST);
        if !mpath.exists() {
            return Err(Error::Schema(format!("{} is not a bundle (no {MANIFEST})", dir.display())));
        }
        Ok(Bundle { dir: dir.to_path_buf(), manifest: read_manifest(&mpath)? })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.files.contains_key(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.manifest.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn read_bytes(&self, name: &str) -> Result<Vec<u8>> {
        let expected = self
            .manifest
            .files
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("bundle has no {name}")))?;
        let bytes = fs::read(self.dir.join(name))?;
        if &sha256_hex(&bytes) != expected {
            return Err(Error::Schema(format!("{name}: content hash does not match the manifest")));
        }
        Ok(bytes)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        Ok(serde_json::from_slice(&self.read_bytes(name)?)?)
    }

    pub fn set_fingerprints(&mut self, config: Option<String>, input: Option<String>) {
        self.manifest.config_fingerprint = config;
        self.manifest.input_sha256 = input;
    }

    pub fn save_manifest(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST), text)?;
        Ok(())
    }

    /// Re-hash every listed file.
    pub fn verify(&self) -> Result<()> {
        for name in self.manifest.files.keys() {
            self.read_bytes(name)?;
        }
        Ok(())
    }
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    let m: Manifest = serde_json::from_slice(&fs::read(path)?)?;
    if m.format != FORMAT {
        return Err(Error::Schema(format!("unknown bundle format {:?}", m.format)));
    }
    if m.version != VERSION {
        return Err(Error::Schema(format!("unsupported bundle version {}", m.version)));
    }
    Ok(m)
}

pub mod names {
    pub const CONFIG: &str = "config.json";
    pub const PANEL: &str = "panel.json";
    pub const CORRELATION: &str = "correlation.json";
    pub const PCA: &str = "pca.json";
    pub const JDRC: &str = "jdrc.json";
    pub const LABELS: &str = "labels.json";
    pub const CLASSIFIER: &str = "classifier.json";
    pub const EVALUATION: &str = "evaluation.json";
    pub const SHIFT: &str = "shift.json";
}

/// Contents of `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigDoc {
    pub config: pipeline::PipelineConfig,
    pub config_fingerprint: String,
    pub input_sha256: String,
}

/// Contents of `evaluation.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDoc {
    pub evaluation: crate::classifier::EvaluationReport,
    pub comparison: Vec<pipeline::NamedReport>,
}

fn write_into(b: &mut Bundle, art: &RunArtifacts) -> Result<()> {
    use names::*;
    b.write_json(
        CONFIG,
        &ConfigDoc {
            config: art.config.clone(),
            config_fingerprint: art.config_fingerprint.clone(),
            input_sha256: art.input_sha256.clone(),
        },
    )?;
    b.write_json(PANEL, &art.panel)?;
    b.write_json(CORRELATION, &art.correlation)?;
    b.write_json(PCA, &art.pca)?;
    b.write_json(JDRC, &art.jdrc)?;
    b.write_json(LABELS, &art.labels)?;
    b.write_json(CLASSIFIER, &art.train.classifier)?;
    b.write_json(EVALUATION, &EvaluationDoc { evaluation: art.train.evaluation.clone(), comparison: art.train.comparison.clone() })?;
    b.write_json(SHIFT, &art.shift)?;
    write_reports(b, art)?;
    b.set_fingerprints(Some(art.config_fingerprint.clone()), Some(art.input_sha256.clone()));
    b.save_manifest()
}

/// Human-readable companions of the JSON documents.
pub fn write_reports(b: &mut Bundle, art: &RunArtifacts) -> Result<()> {
    b.write_bytes("reports/correlation.csv", art.correlation.to_delimited(',').as_bytes())?;
    b.write_bytes("reports/variance.csv", crate::pca::variance_table_delimited(&art.pca.model, ',').as_bytes())?;
    b.write_bytes("reports/clusters.txt", pipeline::cluster_summary(art).as_bytes())?;
    let labels: Vec<usize> = art.labels.regions.iter().map(|r| r.cluster).collect();
    b.write_bytes(
        "reports/labeling.tsv",
        crate::labeling::labeling_report(&art.panel, &labels, &art.labels.labeling, &art.labels.pivots, '\t').as_bytes(),
    )?;
    let mut evals = vec![("fkm".to_string(), art.train.evaluation.clone())];
    evals.extend(art.train.comparison.iter().filter(|r| r.name != "fkm").map(|r| (r.name.clone(), r.report.clone())));
    b.write_bytes("reports/evaluation.csv", crate::classifier::evaluation_delimited(&evals, ',').as_bytes())?;
    b.write_bytes("reports/shift.csv", art.shift.to_delimited(',').as_bytes())?;
    Ok(())
}

/// Write a complete bundle. Output is staged in a sibling directory and
/// moved into place only when every file is written, so a failed write
/// leaves no partial bundle behind.
pub fn write_artifacts(dir: &Path, art: &RunArtifacts) -> Result<()> {
    let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "bundle".into());
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    let result = (|| {
        let mut b = Bundle::open_or_create(&staging)?;
        write_into(&mut b, art)
    })();
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&staging, dir)?;
    Ok(())
}

pub fn read_artifacts(dir: &Path) -> Result<RunArtifacts> {
    use names::*;
    let b = Bundle::open(dir)?;
    let cfg: ConfigDoc = b.read_json(CONFIG)?;
    let eval: EvaluationDoc = b.read_json(EVALUATION)?;
    Ok(RunArtifacts {
        config: cfg.config,
        config_fingerprint: cfg.config_fingerprint,
        input_sha256: cfg.input_sha256,
        panel: b.read_json(PANEL)?,
        correlation: b.read_json(CORRELATION)?,
        pca: b.read_json(PCA)?,
        jdrc: b.read_json(JDRC)?,
        labels: b.read_json(LABELS)?,
        train: pipeline::TrainStage {
            classifier: b.read_json(CLASSIFIER)?,
            evaluation: eval.evaluation,
            comparison: eval.comparison,
        },
        shift: b.read_json(SHIFT)?,
    })
}
