//! Configuration-driven experiment runner.
//!
//! A run takes an [`ExperimentConfig`], writes CSV / JSON-lines / JSON
//! outputs into the configured directory and finishes with
//! `manifest.json`, which records the config hash and a SHA-256 per output.
//! Results depend only on the config and seed, never on the worker count.

pub mod config;
mod experiments;
pub mod presets;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, ExperimentKind, LatticeChoice, Params, SchemeChoice};
pub use presets::{catalog, Preset};

use crate::error::{Error, Result};

/// Column layout of one CSV output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schema {
    pub name: &'static str,
    pub version: u32,
    pub columns: &'static [&'static str],
}

/// Every CSV schema the runner emits.
pub const SCHEMAS: &[Schema] = &[
    experiments::WIGNER,
    experiments::SQUEEZING,
    experiments::FIDELITY,
    experiments::HOMODYNE,
    experiments::PHASE_EST,
    experiments::PREP,
    experiments::PREP_CYCLES,
    experiments::COMPILE,
    experiments::SHIFT_EC,
    experiments::THRESHOLD,
    experiments::CROSSINGS,
    experiments::HYBRID,
];

pub fn schema(name: &str) -> Option<Schema> {
    SCHEMAS.iter().copied().find(|s| s.name == name)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub threads: usize,
    pub wall_time_s: f64,
    /// `"ok"` or `"failed"`; a failed run lists the outputs written before the error.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub outputs: Vec<OutputRecord>,
}

/// Writes outputs and remembers their checksums.
pub struct OutputSink {
    dir: PathBuf,
    records: Vec<OutputRecord>,
}

impl OutputSink {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), records: Vec::new() })
    }

    pub fn records(&self) -> &[OutputRecord] {
        &self.records
    }

    fn put(&mut self, name: &str, bytes: &[u8], rows: Option<usize>, schema: Option<String>) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.records.push(OutputRecord { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len(), rows, schema });
        Ok(())
    }

    /// CSV with a header checked against `schema`.
    pub fn csv<T: Serialize>(&mut self, schema: &Schema, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if rows.is_empty() {
            w.write_record(schema.columns).map_err(csv_err)?;
        }
        for r in rows {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv buffer: {e}")))?;
        let header = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
        let expected = schema.columns.join(",");
        if header != expected.as_bytes() {
            return Err(Error::Numerical(format!(
                "{} rows have header `{}`, schema declares `{expected}`",
                schema.name,
                String::from_utf8_lossy(header)
            )));
        }
        self.put(&format!("{}.csv", schema.name), &bytes, Some(rows.len()), Some(format!("{}@v{}", schema.name, schema.version)))
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut out = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut out, r).map_err(json_err)?;
            out.push(b'\n');
        }
        self.put(name, &out, Some(rows.len()), None)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut out = serde_json::to_vec_pretty(value).map_err(json_err)?;
        out.push(b'\n');
        self.put(name, &out, None, None)
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<()> {
        self.put(name, text.as_bytes(), None, None)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Numerical(format!("csv encoding: {e}"))
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Numerical(format!("json encoding: {e}"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    config::hex(&Sha256::digest(bytes))
}

/// Outcome of [`run`]: the manifest plus the error, if any.
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub error: Option<Error>,
}

/// Run the experiment on a pool of `config.threads` workers (rayon's default
/// when unset) and write `manifest.json` even when the run fails.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::config("threads", e.to_string()))?;
    let mut sink = OutputSink::new(&config.output.dir)?;
    let start = Instant::now();
    let result = pool.install(|| experiments::dispatch(config, &mut sink));
    let manifest = RunManifest {
        experiment: config.experiment.as_str().to_string(),
        config_hash: config.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        threads: pool.current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        status: if result.is_ok() { "ok" } else { "failed" }.to_string(),
        error: result.as_ref().err().map(|e| e.to_string()),
        outputs: sink.records.clone(),
    };
    let text = serde_json::to_vec_pretty(&manifest).map_err(json_err)?;
    std::fs::write(config.output.dir.join("manifest.json"), text)?;
    Ok(RunOutcome { manifest, error: result.err() })
}

/// Process exit code for an error: 2 for configuration, 3 for numerical guards.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Parse { .. } | Error::InvalidArgument(_) => 2,
        e if e.is_numerical() => 3,
        _ => 1,
    }
}
