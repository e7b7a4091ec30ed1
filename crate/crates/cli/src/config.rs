//! Config files, device selection and report plumbing shared by commands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use coexec_core::device::{SyntheticDevice, SyntheticDeviceSpec};

use crate::error::{CliError, CliResult};

/// Command config from an optional JSON file; missing keys take defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Overwrite `slot` when a flag was given.
pub fn apply<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Hex SHA-256 of the resolved config's JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceConfig {
    /// Preset name, used unless `spec` is set.
    pub preset: String,
    /// JSON file holding a full synthetic device spec.
    pub spec: Option<PathBuf>,
    /// Overrides the device's noise amplitude.
    pub noise_rel: Option<f64>,
    /// Overrides the device's noise seed.
    pub seed: Option<u64>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            preset: "oneplus11".into(),
            spec: None,
            noise_rel: None,
            seed: None,
        }
    }
}

impl DeviceConfig {
    pub fn build(&self) -> CliResult<SyntheticDevice> {
        let mut spec = match &self.spec {
            Some(path) => {
                if !path.exists() {
                    return Err(CliError::config(format!("device spec {} does not exist", path.display())));
                }
                SyntheticDeviceSpec::load(path)?
            }
            None => SyntheticDeviceSpec::preset(&self.preset)?,
        };
        if let Some(n) = self.noise_rel {
            spec.noise_rel = n;
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        Ok(SyntheticDevice::new(spec)?)
    }
}

#[derive(Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub command: &'a str,
    pub config_sha256: String,
    pub seed: u64,
    pub config: &'a C,
    pub result: R,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{what} {} not found", path.display())))
    }
}

/// Left-aligned first column, right-aligned rest.
pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for r in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |r: &[String]| {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = width[i])
                } else {
                    format!("{c:>w$}", w = width[i])
                }
            })
            .collect();
        cells.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum KindSel {
    Linear,
    Conv,
    Both,
}

impl KindSel {
    pub fn kinds(self) -> Vec<coexec_core::op::OpKind> {
        use coexec_core::op::OpKind;
        match self {
            KindSel::Linear => vec![OpKind::Linear],
            KindSel::Conv => vec![OpKind::Conv],
            KindSel::Both => vec![OpKind::Linear, OpKind::Conv],
        }
    }
}

pub fn check_threads(threads: &[u8]) -> CliResult<()> {
    if threads.is_empty() || threads.iter().any(|t| !(1..=3).contains(t)) {
        return Err(CliError::config("threads must be a non-empty subset of {1, 2, 3}"));
    }
    Ok(())
}
