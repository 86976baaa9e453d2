//! Evaluation reports: JSON (full fidelity) and CSV accuracy matrices.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Accuracies below this floor count as the floor in suite averages.
pub const TRUNCATION_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// Redundant code bits (decoder output vs embedded code).
    Code,
    /// Source message bits after the channel decoder.
    Message,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEntry {
    /// `family:strength` key.
    pub distortion: String,
    pub code_accuracy: f64,
    pub message_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsnrStats {
    pub rgb: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub model_id: String,
    pub suite: String,
    pub seed: u64,
    pub image_count: usize,
    /// False when no channel codec was used; message and code level then
    /// coincide.
    pub channel: bool,
    /// How PSNR is aggregated over the eval set.
    pub psnr_aggregation: String,
    /// Dropout strength convention used by this report.
    pub dropout_semantics: String,
    pub psnr: PsnrStats,
    pub entries: Vec<AccuracyEntry>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        ensure(!self.entries.is_empty(), || "report has no suite entries".into())?;
        ensure(self.image_count > 0, || "report covers no images".into())?;
        for (i, e) in self.entries.iter().enumerate() {
            ensure((0.0..=1.0).contains(&e.code_accuracy) && (0.0..=1.0).contains(&e.message_accuracy), || {
                format!("accuracy out of range for {}", e.distortion)
            })?;
            ensure(self.entries[..i].iter().all(|o| o.distortion != e.distortion), || {
                format!("distortion {} listed twice", e.distortion)
            })?;
        }
        Ok(())
    }

    pub fn accuracy(&self, distortion: &str, level: Level) -> Option<f64> {
        self.entries.iter().find(|e| e.distortion == distortion).map(|e| match level {
            Level::Code => e.code_accuracy,
            Level::Message => e.message_accuracy,
        })
    }

    /// Mean accuracy over all entries with values below 50% raised to 50%.
    pub fn truncated_average(&self, level: Level) -> f64 {
        truncated_mean(self.entries.iter().map(|e| match level {
            Level::Code => e.code_accuracy,
            Level::Message => e.message_accuracy,
        }))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "report schema {} is not supported (expected {SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// Writes `<stem>.json` and `<stem>.csv` and returns both paths.
    pub fn render(&self, stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        self.validate()?;
        let stem = stem.as_ref();
        let json_path = stem.with_extension("json");
        let csv_path = stem.with_extension("csv");
        if let Some(dir) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&json_path, self.to_json()?).map_err(|e| Error::io(&json_path, e))?;
        fs::write(&csv_path, csv_matrix(std::slice::from_ref(self))?).map_err(|e| Error::io(&csv_path, e))?;
        Ok((json_path, csv_path))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn truncated_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v.max(TRUNCATION_FLOOR), n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// One row per (model, level), one column per distortion in suite order,
/// plus the truncated average. All reports must share the same suite.
pub fn csv_matrix(reports: &[EvalReport]) -> Result<String> {
    let first = reports.first().ok_or_else(|| Error::contract("no reports to tabulate"))?;
    let columns: Vec<&str> = first.entries.iter().map(|e| e.distortion.as_str()).collect();
    for r in reports {
        let cols: Vec<&str> = r.entries.iter().map(|e| e.distortion.as_str()).collect();
        ensure(cols == columns, || format!("report {} uses a different suite", r.model_id))?;
    }
    let mut out = format!("schema_version,model,level,{},truncated_average\n", columns.join(","));
    for r in reports {
        for (level, name) in [(Level::Code, "code"), (Level::Message, "message")] {
            let values: Vec<String> = r
                .entries
                .iter()
                .map(|e| format!("{:.6}", if level == Level::Code { e.code_accuracy } else { e.message_accuracy }))
                .collect();
            out.push_str(&format!(
                "{SCHEMA_VERSION},{},{name},{},{:.6}\n",
                r.model_id,
                values.join(","),
                r.truncated_average(level)
            ));
        }
    }
    Ok(out)
}
