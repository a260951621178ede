use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sketchrows::SparseRowMatrix;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Dims {
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
}

impl From<&SparseRowMatrix> for Dims {
    fn from(m: &SparseRowMatrix) -> Self {
        Dims {
            rows: m.n_rows(),
            cols: m.n_cols(),
            nnz: m.nnz(),
        }
    }
}

/// JSON record of one command invocation.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub input: Option<Dims>,
    pub output_rows: Option<usize>,
    /// Seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub verification: Option<Value>,
    pub history: Vec<Value>,
    pub details: Value,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, config: Value, seed: Option<u64>) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config,
            seed,
            input: None,
            output_rows: None,
            timings: BTreeMap::new(),
            verification: None,
            history: Vec::new(),
            details: Value::Null,
            warnings: Vec::new(),
        }
    }

    /// Runs `f`, recording its wall time under `phase`.
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(phase.to_string()).or_default() += start.elapsed().as_secs_f64();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
