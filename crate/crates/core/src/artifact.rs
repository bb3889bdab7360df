//! Trained-model artifacts: one pretty-printed JSON document with an explicit
//! schema version, written atomically and identified by a content hash.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::mst::SegmentationTree;
use crate::predictors::{CostTable, SegmentedCancellation};
use crate::pricer::{GridConfig, Guardrails, ObjectiveConfig};
use crate::second_level::{WindowCatalog, WindowGrid, WindowMnlParams};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondLevelModel {
    pub catalog: WindowCatalog,
    pub params: WindowMnlParams<f64>,
    /// Average cost of each window above the cheapest window of its day.
    pub surcharge: Vec<f64>,
    pub grid: WindowGrid,
    pub observed_rows: usize,
    pub imputed_rows: usize,
    pub dropped_rows: usize,
}

impl SecondLevelModel {
    pub fn window_costs(&self, costs: &[f64]) -> Vec<Vec<f64>> {
        costs
            .iter()
            .map(|&c| self.surcharge.iter().map(|&s| c + s).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema_version: u32,
    pub trained_at: DateTime<Utc>,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub subsample_fraction: f64,
    pub seed: u64,
    pub training_rows: usize,
    pub feature_schema: FeatureSchema,
    pub tree: SegmentationTree<f64>,
    pub cancellation: SegmentedCancellation,
    pub second_level: Option<SecondLevelModel>,
    pub guardrails: Guardrails<f64>,
    pub objective: ObjectiveConfig,
    pub grid: GridConfig,
    pub costs: CostTable,
}

/// First 16 hex digits of the SHA-256 of the artifact bytes.
pub fn content_version(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))[..16].to_string()
}

impl ModelArtifact {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != ARTIFACT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: ARTIFACT_SCHEMA_VERSION,
                found: self.schema_version,
            });
        }
        self.tree.validate()?;
        self.objective.validate()?;
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.guardrails.floor) || !finite(&self.guardrails.ceiling) {
            return Err(Error::NonFinite("guardrails"));
        }
        if let Some(s) = &self.second_level {
            s.params.check()?;
            if s.surcharge.len() != s.catalog.len() || s.params.num_windows() != s.catalog.len() {
                return Err(Error::invalid(
                    "second-level model disagrees with its window catalog",
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses an artifact, checking the schema version before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::invalid("artifact has no schema_version"))?;
        if found != u64::from(ARTIFACT_SCHEMA_VERSION) {
            return Err(Error::SchemaVersion {
                expected: ARTIFACT_SCHEMA_VERSION,
                found: u32::try_from(found).unwrap_or(u32::MAX),
            });
        }
        let artifact: Self = serde_json::from_value(value)?;
        artifact.validate()?;
        Ok(artifact)
    }

    /// Writes to a temporary sibling and renames it over `path`; returns the
    /// content version.
    pub fn save(&self, path: &Path) -> Result<String> {
        let text = self.to_json()?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let name = path
            .file_name()
            .ok_or_else(|| Error::invalid("artifact path has no file name"))?
            .to_string_lossy();
        let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(content_version(text.as_bytes()))
    }

    /// Loads an artifact and its content version.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = fs::read(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::invalid(format!("artifact is not UTF-8: {e}")))?;
        Ok((Self::from_json(text)?, content_version(&bytes)))
    }
}
