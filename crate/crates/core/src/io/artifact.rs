//! Versioned JSON bundle of one analysis.
//!
//! Matrices are stored as `{"rows": r, "cols": c, "values": [...]}` with
//! values in row-major order. Floats are written with shortest round-trip
//! formatting, so `load(save(a)) == a` for finite values.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimation::{FitConfig, FitResult};
use crate::evaluation::BootstrapResult;
use crate::selection::CvResult;

pub const ARTIFACT_VERSION: &str = "1";
const UPGRADE_HINT: &str = "regenerate the artifact by re-running the command that produced it";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Hex SHA-256 of the JSON-serialized fit configuration.
    pub config_sha256: String,
    /// Seconds since the Unix epoch at creation.
    pub created_unix: u64,
    pub tool_version: String,
}

impl Provenance {
    pub fn for_config(config: &FitConfig) -> Result<Self> {
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(Self {
            seed: config.seed,
            config_sha256: config_hash(config)?,
            created_unix,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

pub fn config_hash(config: &FitConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub version: String,
    pub config: FitConfig,
    pub endogenous: Vec<String>,
    pub exogenous: Vec<String>,
    pub fit: Option<FitResult>,
    pub cv: Option<CvResult>,
    pub bootstrap: Option<BootstrapResult>,
    pub provenance: Provenance,
}

impl RunArtifact {
    pub fn new(config: FitConfig, endogenous: Vec<String>, exogenous: Vec<String>) -> Result<Self> {
        let provenance = Provenance::for_config(&config)?;
        Ok(Self {
            version: ARTIFACT_VERSION.to_string(),
            config,
            endogenous,
            exogenous,
            fit: None,
            cv: None,
            bootstrap: None,
            provenance,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedArtifact(e.to_string()))?;
        match value.get("version") {
            Some(serde_json::Value::String(v)) if v == ARTIFACT_VERSION => {}
            Some(serde_json::Value::String(v)) => {
                return Err(Error::SchemaVersion {
                    found: v.clone(),
                    expected: ARTIFACT_VERSION,
                    hint: UPGRADE_HINT,
                })
            }
            Some(other) => return Err(Error::MalformedArtifact(format!("version must be a string, got {other}"))),
            None => return Err(Error::MalformedArtifact("missing version field".into())),
        }
        serde_json::from_value(value).map_err(|e| Error::MalformedArtifact(e.to_string()))
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed write never leaves a partial file.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_artifact(artifact: &RunArtifact, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, artifact.to_json()?.as_bytes())
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<RunArtifact> {
    RunArtifact::from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::fit;
    use crate::simulation::{generate, SimCondition};

    fn artifact() -> RunArtifact {
        let (d, _) = generate(&SimCondition::new(0.0, 0.2, 40)).unwrap();
        let mut cfg = FitConfig::new(3);
        cfg.max_iter = 50;
        let r = fit(&d, &cfg).unwrap();
        let mut a = RunArtifact::new(cfg, (1..=9).map(|i| format!("y{i}")).collect(), vec!["a".into(), "b".into(), "c".into()]).unwrap();
        a.fit = Some(r);
        a
    }

    #[test]
    fn round_trip_is_exact() {
        let a = artifact();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        save_artifact(&a, &p).unwrap();
        let b = load_artifact(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn old_version_fails_with_hint() {
        let mut v: serde_json::Value = serde_json::from_str(&artifact().to_json().unwrap()).unwrap();
        v["version"] = "0".into();
        let e = RunArtifact::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(e, Error::SchemaVersion { .. }));
        assert!(e.to_string().contains("regenerate"));
        v.as_object_mut().unwrap().remove("version");
        assert!(matches!(RunArtifact::from_json(&v.to_string()), Err(Error::MalformedArtifact(_))));
    }

    #[test]
    fn empty_matrix_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&artifact().to_json().unwrap()).unwrap();
        v["fit"]["params"]["x"] = serde_json::json!({"rows": 0, "cols": 3, "values": []});
        assert!(matches!(RunArtifact::from_json(&v.to_string()), Err(Error::MalformedArtifact(_))));
        assert!(matches!(RunArtifact::from_json("{not json"), Err(Error::MalformedArtifact(_))));
    }

    #[test]
    fn hash_depends_on_config() {
        let a = FitConfig::new(2);
        let mut b = a.clone();
        b.penalties.lambda_1 = 0.5;
        assert_eq!(config_hash(&a).unwrap(), config_hash(&a).unwrap());
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
