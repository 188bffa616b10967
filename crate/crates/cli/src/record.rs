use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use csl_core::acceptance::Check;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const RECORD_FILE: &str = "record.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub id: String,
    /// Relative to the record's directory.
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub artifact: String,
    pub version: String,
    pub constants_version: String,
    pub config: ExperimentConfig,
    pub wall_clock_seconds: f64,
    pub threads: usize,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub outputs: Vec<OutputEntry>,
    pub summary: serde_json::Value,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn output(&self, id: &str) -> Result<&OutputEntry, CliError> {
        self.outputs.iter().find(|o| o.id == id).ok_or_else(|| {
            let known: Vec<&str> = self.outputs.iter().map(|o| o.id.as_str()).collect();
            CliError::Config(format!("unknown output id `{id}`; this record has {}", known.join(", ")))
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory plus the manifest of everything written to it.
pub struct OutputSet {
    dir: PathBuf,
    pub entries: Vec<OutputEntry>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn put(&mut self, id: &str, file: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(file);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.entries.push(OutputEntry {
            id: id.into(),
            file: file.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Renders with a core writer into memory, then stores it.
    pub fn put_with(
        &mut self,
        id: &str,
        file: &str,
        render: impl FnOnce(&mut Vec<u8>) -> csl_core::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        render(&mut buf)?;
        self.put(id, file, &buf)
    }

    pub fn put_json(&mut self, id: &str, file: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.put(id, file, text.as_bytes())
    }
}

pub fn write_record(dir: &Path, record: &RunRecord) -> Result<(), CliError> {
    let path = dir.join(RECORD_FILE);
    let mut f = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, record).expect("serializable");
    writeln!(f).map_err(|e| CliError::io(&path, e))?;
    Ok(())
}

/// Pass/fail bookkeeping with the run's tolerance scale applied.
pub struct Checks {
    scale: f64,
    pub list: Vec<Check>,
}

impl Checks {
    pub fn new(scale: f64) -> Self {
        Self { scale, list: Vec::new() }
    }

    pub fn at_most(&mut self, label: impl Into<String>, value: f64, limit: f64) {
        let limit = limit * self.scale;
        self.list.push(Check {
            label: label.into(),
            value,
            limit,
            passed: value <= limit,
        });
    }

    pub fn at_least(&mut self, label: impl Into<String>, value: f64, limit: f64) {
        let limit = limit / self.scale;
        self.list.push(Check {
            label: label.into(),
            value,
            limit,
            passed: value >= limit,
        });
    }
}

/// Reads a CSV output of a record after checking its digest.
pub fn read_verified(record_dir: &Path, entry: &OutputEntry) -> Result<String, CliError> {
    let path = record_dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    let digest = sha256_hex(&bytes);
    if digest != entry.sha256 {
        return Err(CliError::Check(format!(
            "{} changed since the run: digest {digest}, recorded {}",
            path.display(),
            entry.sha256
        )));
    }
    String::from_utf8(bytes).map_err(|_| CliError::Config(format!("{} is not text", path.display())))
}

/// Plot-ready table for one output. Histograms get their reference
/// column recomputed from the mixture parameters kept in the summary.
pub fn plot_table(record: &RunRecord, record_dir: &Path, id: &str) -> Result<String, CliError> {
    let entry = record.output(id)?;
    if !entry.file.ends_with(".csv") {
        return Err(CliError::Config(format!("output `{id}` is not tabular")));
    }
    let text = read_verified(record_dir, entry)?;
    if id != "histogram" {
        return Ok(text);
    }
    let reference: csl_core::dynamics::MixtureReference = serde_json::from_value(record.summary["reference"].clone())
        .map_err(|e| CliError::Config(format!("record has no mixture reference: {e}")))?;
    let mut lines = text.lines();
    let mut out = String::from("center,empirical,mixture\n");
    lines.next();
    for line in lines {
        let mut cols = line.split(',');
        let (Some(x), Some(y)) = (cols.next(), cols.next()) else {
            return Err(CliError::Config(format!("malformed histogram row `{line}`")));
        };
        let center: f64 = x
            .parse()
            .map_err(|_| CliError::Config(format!("malformed histogram row `{line}`")))?;
        out.push_str(&format!("{x},{y},{}\n", reference.pdf(center)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_with(dir: &Path, id: &str, file: &str, body: &str) -> RunRecord {
        fs::write(dir.join(file), body).unwrap();
        let config = ExperimentConfig::parse(
            "kind = \"fields\"\nmaster_seed = 1\ntolerance_scale = 1.0\noutput_dir = \"o\"\n\
             [fields]\nmass = 1.0\nlambda = 1.0\nn_times = 8\nn_freqs = 8\ntau = 1.0\n",
        )
        .unwrap();
        RunRecord {
            artifact: "csl-lab".into(),
            version: "0".into(),
            constants_version: "x".into(),
            config,
            wall_clock_seconds: 0.0,
            threads: 1,
            checks: vec![],
            passed: true,
            outputs: vec![OutputEntry {
                id: id.into(),
                file: file.into(),
                sha256: sha256_hex(body.as_bytes()),
                bytes: body.len() as u64,
            }],
            summary: serde_json::json!({ "reference": { "weights": [1.0], "means": [0.0], "sd": 1.0 } }),
        }
    }

    #[test]
    fn empty_run_gives_header_only() {
        let tmp = tempfile::tempdir().unwrap();
        let rec = record_with(tmp.path(), "histogram", "h.csv", "center,empirical,mixture\n");
        assert_eq!(plot_table(&rec, tmp.path(), "histogram").unwrap(), "center,empirical,mixture\n");
        let rec = record_with(tmp.path(), "pmf", "p.csv", "s,empirical,exact,gaussian\n");
        assert_eq!(plot_table(&rec, tmp.path(), "pmf").unwrap(), "s,empirical,exact,gaussian\n");
    }

    #[test]
    fn rejects_non_tabular_and_malformed() {
        let tmp = tempfile::tempdir().unwrap();
        let rec = record_with(tmp.path(), "state", "s.bin", "xx");
        assert!(matches!(plot_table(&rec, tmp.path(), "state"), Err(CliError::Config(_))));
        let rec = record_with(tmp.path(), "histogram", "h.csv", "center,empirical,mixture\nabc,1,2\n");
        assert!(matches!(plot_table(&rec, tmp.path(), "histogram"), Err(CliError::Config(_))));
    }

    #[test]
    fn checks_apply_scale() {
        let mut c = Checks::new(2.0);
        c.at_most("a", 1.5, 1.0);
        c.at_least("b", 0.6, 1.0);
        assert!(c.list.iter().all(|x| x.passed));
        assert_eq!(c.list[0].limit, 2.0);
    }
}
