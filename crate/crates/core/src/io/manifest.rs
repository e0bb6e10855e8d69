//! The TOML run manifest: everything needed to repeat a training run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annealing::{linear_annealing, LinearAnnealing, Schedule};
use crate::error::{Error, Result};
use crate::io::spec::ModelSpec;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub rng: String,
    pub model: ModelSpec,
    pub data: DataInfo,
    pub training: TrainingInfo,
    pub annealing: AnnealingInfo,
    pub files: FileInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataInfo {
    pub path: String,
    pub sha256: String,
    pub n: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub iterations: usize,
    pub seed: u64,
    pub workers: usize,
    pub shards: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    pub init: String,
}

/// Anchors are `(budget fraction, value)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealingInfo {
    pub temperature: Schedule,
    pub w_noise: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Schedule>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FileInfo {
    pub free_energy: String,
    /// Parameter name to file name.
    pub init: BTreeMap<String, String>,
    pub checkpoint: BTreeMap<String, String>,
    #[serde(rename = "final")]
    pub final_params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub final_free_energy: f64,
}

impl AnnealingInfo {
    pub fn schedule(&self, iterations: usize) -> Result<LinearAnnealing> {
        let rebuild = |s: &Schedule| Schedule::new(s.anchors().to_vec());
        let sched = linear_annealing(iterations, Some(rebuild(&self.temperature)?), Some(rebuild(&self.w_noise)?))?;
        Ok(match &self.rho {
            Some(r) => sched.with_rho(rebuild(r)?),
            None => sched,
        })
    }
}

impl RunManifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::data(format!("cannot serialize manifest: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::data(format!("invalid manifest: {e}")))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml(&text)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::spec::ModelKind;

    fn sample() -> RunManifest {
        RunManifest {
            version: "0.1.0".into(),
            rng: "ChaCha20".into(),
            model: ModelSpec::new(ModelKind::Dsc, 6)
                .with_truncation(4, 2)
                .with_values(vec![-0.1, 0.0, 1.0 / 3.0], true),
            data: DataInfo {
                path: "bars.prsp".into(),
                sha256: sha256_hex(b"abc"),
                n: 100,
                dim: 25,
            },
            training: TrainingInfo {
                iterations: 50,
                seed: u64::MAX,
                workers: 4,
                shards: 64,
                tol: Some(1e-7),
                init: "W = mean + noise".into(),
            },
            annealing: AnnealingInfo {
                temperature: Schedule::new(vec![(0.0, 2.7), (0.5, 1.0)]).unwrap(),
                w_noise: Schedule::constant(0.0),
                rho: None,
            },
            files: FileInfo {
                free_energy: "free_energy.csv".into(),
                ..Default::default()
            },
            outcome: Some(Outcome {
                iterations_run: 50,
                stopped_early: false,
                final_free_energy: -1234.567890123456,
            }),
        }
    }

    #[test]
    fn toml_round_trip_is_exact() {
        let m = sample();
        let text = m.to_toml().unwrap();
        assert_eq!(RunManifest::from_toml(&text).unwrap(), m);
    }

    #[test]
    fn field_order_is_stable() {
        let text = sample().to_toml().unwrap();
        let pos = |k: &str| text.find(k).unwrap_or_else(|| panic!("{k} missing"));
        assert!(pos("version") < pos("[model]"));
        assert!(pos("[model]") < pos("[data]"));
        assert!(pos("[data]") < pos("[training]"));
        assert!(pos("[training]") < pos("[annealing"));
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
