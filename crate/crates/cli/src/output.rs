//! In-memory results of one experiment, written out by the runner.

use crate::config::SCHEMA_VERSION;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

pub struct OutputFile {
    pub name: String,
    pub schema: String,
    pub bytes: Vec<u8>,
}

#[derive(Default)]
pub struct Outcome {
    pub files: Vec<OutputFile>,
    pub checks: Vec<Check>,
    /// Files read by the experiment, digested into the manifest.
    pub inputs: Vec<PathBuf>,
}

impl Outcome {
    pub fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), pass, detail: detail.into() });
    }

    pub fn file(&mut self, name: impl Into<String>, schema: &str, bytes: Vec<u8>) {
        self.files.push(OutputFile { name: name.into(), schema: schema.into(), bytes });
    }

    pub fn csv(&mut self, name: &str, schema: &str, table: Csv) {
        self.file(name, schema, table.0.into_bytes());
    }

    /// `summary.json`: schema version, checks and the experiment's result.
    pub fn summary(&mut self, experiment: &str, result: impl Serialize) {
        #[derive(Serialize)]
        struct Summary<'a, R> {
            schema_version: u32,
            experiment: &'a str,
            checks: &'a [Check],
            result: R,
        }
        let s = Summary { schema_version: SCHEMA_VERSION, experiment, checks: &self.checks, result };
        let mut bytes = serde_json::to_vec_pretty(&s).expect("summaries serialize");
        bytes.push(b'\n');
        self.file("summary.json", &format!("{experiment}-summary"), bytes);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Minimal CSV builder; fields here never contain separators or quotes.
pub struct Csv(String);

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv(header.join(",") + "\n")
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.0, "{}", fields.join(","));
    }
}

/// Shortest round-trip text for a float.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Default)]
pub struct Stages(pub Vec<Stage>);

impl Stages {
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.0.push(Stage { name: name.into(), seconds: t.elapsed().as_secs_f64() });
        out
    }
}
