//! JSONL run records, environment fingerprints and summary reports.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use driftcheck_core::measure_latency;
use driftcheck_core::verify::{FailureCategory, Status};
use serde::{Deserialize, Serialize};

use crate::error::{DriftError, Result};

pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvFingerprint {
    pub harness_version: String,
    pub os: String,
    pub cpu_model: String,
    pub logical_cores: usize,
    pub determinism_flags: BTreeMap<String, String>,
    pub seed: u64,
}

fn cpu_model() -> Option<String> {
    let text = fs::read_to_string("/proc/cpuinfo").ok()?;
    text.lines()
        .find(|l| l.starts_with("model name") || l.starts_with("Hardware") || l.starts_with("cpu model"))
        .and_then(|l| l.split_once(':'))
        .map(|(_, v)| v.trim().to_string())
        .filter(|v| !v.is_empty())
}

/// Host and harness description. Never fails; unknown fields read "unknown".
pub fn env_fingerprint(seed: u64) -> EnvFingerprint {
    let flags = [
        ("prng", "splitmix64"),
        ("stream_split", "fnv1a64(name) ^ seed"),
        ("cell_threads", "1"),
        ("nms_tie_policy", "simulated"),
        ("reference_reduction", "sequential"),
    ];
    EnvFingerprint {
        harness_version: HARNESS_VERSION.into(),
        os: format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH),
        cpu_model: cpu_model().unwrap_or_else(|| "unknown".into()),
        logical_cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
        determinism_flags: flags.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        seed,
    }
}

/// One line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub timestamp: String,
    pub config: String,
    pub model: String,
    pub backend_pair: String,
    pub atol: f64,
    pub rtol: f64,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_abs_diff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p95_abs_diff: Option<f64>,
    #[serde(default)]
    pub tier2_first_divergence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1_match: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk_agreement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_pass: Option<bool>,
    pub taxonomy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms_ref: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms_tgt: Option<f64>,
    pub seed: u64,
    pub env: EnvFingerprint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

impl RunRecord {
    /// A record with only the identifying fields filled in.
    pub fn skeleton(config: &str, model: &str, backend_pair: &str, atol: f64, rtol: f64, env: &EnvFingerprint) -> Self {
        Self {
            timestamp: String::new(),
            config: config.into(),
            model: model.into(),
            backend_pair: backend_pair.into(),
            atol,
            rtol,
            status: Status::Error.name().into(),
            max_abs_diff: None,
            mae: None,
            p95_abs_diff: None,
            tier2_first_divergence: None,
            task: None,
            top1_match: None,
            topk_agreement: None,
            miou: None,
            detection_f1: None,
            task_pass: None,
            taxonomy: FailureCategory::RuntimeError.name().into(),
            latency_ms_ref: None,
            latency_ms_tgt: None,
            seed: env.seed,
            env: env.clone(),
            error_message: None,
        }
    }

    pub fn status(&self) -> Option<Status> {
        Status::from_name(&self.status)
    }

    pub fn is_pass(&self) -> bool {
        self.status() == Some(Status::Pass)
    }

    /// Target half of `backend_pair`.
    pub fn target_backend(&self) -> &str {
        self.backend_pair.split_once("->").map_or(self.backend_pair.as_str(), |(_, t)| t)
    }

    pub fn reference_backend(&self) -> &str {
        self.backend_pair.split_once("->").map_or(self.backend_pair.as_str(), |(r, _)| r)
    }
}

pub fn utc_timestamp() -> String {
    chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Serialized JSONL appender. Each record is stamped, encoded and written
/// as one line under a lock.
pub struct JsonlWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl JsonlWriter {
    fn open(path: &Path, truncate: bool) -> Result<Self> {
        let err = |e| DriftError::LogWrite { path: path.to_path_buf(), source: e };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(err)?;
        }
        let mut opts = OpenOptions::new();
        opts.create(true);
        if truncate {
            opts.write(true).truncate(true);
        } else {
            opts.append(true);
        }
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(opts.open(path).map_err(err)?) })
    }

    /// Starts a fresh file, replacing any previous content.
    pub fn create(path: &Path) -> Result<Self> {
        Self::open(path, true)
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        Self::open(path, false)
    }

    pub fn append(&self, record: &RunRecord) -> Result<()> {
        let mut stamped = record.clone();
        stamped.timestamp = utc_timestamp();
        let mut line = serde_json::to_string(&stamped).expect("records always serialize");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| DriftError::LogWrite { path: self.path.clone(), source: e })
    }
}

pub fn append_record(record: &RunRecord, path: &Path) -> Result<()> {
    JsonlWriter::append_to(path)?.append(record)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

/// Parses every line; malformed lines are skipped and reported (1-based).
pub fn read_records(path: &Path) -> Result<(Vec<RunRecord>, Vec<SkippedLine>)> {
    let err = |e| DriftError::LogRead { path: path.to_path_buf(), source: e };
    let file = File::open(path).map_err(err)?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(err)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(&line) {
            Ok(r) => records.push(r),
            Err(e) => skipped.push(SkippedLine { line: i + 1, reason: e.to_string() }),
        }
    }
    Ok((records, skipped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overall {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub errored: usize,
    pub pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtolRow {
    pub atol: f64,
    pub total: usize,
    pub passed: usize,
    pub pass_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCell {
    pub model: String,
    pub backend: String,
    pub total: usize,
    pub passed: usize,
    pub pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRow {
    pub backend: String,
    pub median_ms: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTables {
    pub overall: Overall,
    pub by_atol: Vec<AtolRow>,
    pub by_model_backend: Vec<MatrixCell>,
    pub taxonomy_counts: BTreeMap<String, usize>,
    pub latency: Vec<LatencyRow>,
}

/// Percentage rounded to one decimal, as reported in tables.
pub fn pct1(passed: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    (1000.0 * passed as f64 / total as f64).round() / 10.0
}

pub fn summarize(records: &[RunRecord]) -> Result<SummaryTables> {
    if records.is_empty() {
        return Err(DriftError::EmptyReport);
    }
    let count = |s: Status| records.iter().filter(|r| r.status() == Some(s)).count();
    let total = records.len();
    let passed = count(Status::Pass);
    let overall = Overall {
        total,
        passed,
        failed: count(Status::Fail),
        errored: total - passed - count(Status::Fail),
        pass_rate: passed as f64 / total as f64,
    };

    // keyed by bit pattern: atols are exact grid values, never computed
    let mut atol: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    let mut matrix: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    let mut taxonomy: BTreeMap<String, usize> =
        FailureCategory::ALL.iter().map(|c| (c.name().to_string(), 0)).collect();
    let mut latency: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        let p = usize::from(r.is_pass());
        let e = atol.entry(r.atol.to_bits()).or_default();
        e.0 += 1;
        e.1 += p;
        let m = matrix.entry((r.model.clone(), r.target_backend().to_string())).or_default();
        m.0 += 1;
        m.1 += p;
        *taxonomy.entry(r.taxonomy.clone()).or_default() += 1;
        if let Some(v) = r.latency_ms_ref {
            latency.entry(r.reference_backend().into()).or_default().push(v);
        }
        if let Some(v) = r.latency_ms_tgt {
            latency.entry(r.target_backend().into()).or_default().push(v);
        }
    }
    let mut by_atol: Vec<AtolRow> = atol
        .into_iter()
        .map(|(bits, (t, p))| AtolRow { atol: f64::from_bits(bits), total: t, passed: p, pass_pct: pct1(p, t) })
        .collect();
    by_atol.sort_by(|a, b| a.atol.total_cmp(&b.atol));
    Ok(SummaryTables {
        overall,
        by_atol,
        by_model_backend: matrix
            .into_iter()
            .map(|((model, backend), (t, p))| MatrixCell {
                model,
                backend,
                total: t,
                passed: p,
                pass_rate: p as f64 / t as f64,
            })
            .collect(),
        taxonomy_counts: taxonomy,
        latency: latency
            .into_iter()
            .map(|(backend, v)| LatencyRow { backend, median_ms: measure_latency(&v).unwrap_or(0.0), samples: v.len() })
            .collect(),
    })
}

/// Python-style `repr` of a float: `1e-05`, `0.0001`, `100.0`.
pub fn py_float(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{v:e}");
    let (mantissa, exp) = sci.split_once('e').expect("`{:e}` always has an exponent");
    let exp: i32 = exp.parse().expect("numeric exponent");
    if (-4..16).contains(&exp) {
        let s = format!("{v}");
        if s.contains('.') {
            s
        } else {
            format!("{s}.0")
        }
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl ReportFormat {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "md" | "markdown" => Some(Self::Markdown),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

fn backends_of(t: &SummaryTables) -> Vec<String> {
    let mut b: Vec<String> = t.by_model_backend.iter().map(|c| c.backend.clone()).collect();
    b.sort();
    b.dedup();
    b
}

fn models_of(t: &SummaryTables) -> Vec<String> {
    let mut m: Vec<String> = t.by_model_backend.iter().map(|c| c.model.clone()).collect();
    m.sort();
    m.dedup();
    m
}

pub fn render_markdown(t: &SummaryTables) -> String {
    let mut s = String::new();
    let o = &t.overall;
    s.push_str("## Overall\n\n| Total | Passed | Failed | Errored | Pass % |\n|---|---|---|---|---|\n");
    s.push_str(&format!(
        "| {} | {} | {} | {} | {:.1} |\n\n",
        o.total,
        o.passed,
        o.failed,
        o.errored,
        pct1(o.passed, o.total)
    ));
    s.push_str("## Threshold sensitivity\n\n| atol | Total | Passed | Pass % |\n|---|---|---|---|\n");
    for r in &t.by_atol {
        s.push_str(&format!("| {} | {} | {} | {:.1} |\n", py_float(r.atol), r.total, r.passed, r.pass_pct));
    }
    let backends = backends_of(t);
    s.push_str("\n## Pass rate by model and target backend\n\n| Model |");
    for b in &backends {
        s.push_str(&format!(" {b} |"));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(backends.len()));
    s.push('\n');
    for m in models_of(t) {
        s.push_str(&format!("| {m} |"));
        for b in &backends {
            match t.by_model_backend.iter().find(|c| c.model == m && &c.backend == b) {
                Some(c) => s.push_str(&format!(" {}/{} ({:.1}%) |", c.passed, c.total, pct1(c.passed, c.total))),
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    s.push_str("\n## Failure taxonomy\n\n| Category | Count |\n|---|---|\n");
    for (k, v) in &t.taxonomy_counts {
        s.push_str(&format!("| {k} | {v} |\n"));
    }
    s.push_str("\n## Median latency\n\n| Backend | Median (ms) | Samples |\n|---|---|---|\n");
    for r in &t.latency {
        s.push_str(&format!("| {} | {:.3} | {} |\n", r.backend, r.median_ms, r.samples));
    }
    s
}

/// One `(file name, contents)` pair per table.
pub fn render_csv(t: &SummaryTables) -> Vec<(String, String)> {
    let o = &t.overall;
    let overall = format!(
        "total,passed,failed,errored,pass_rate\n{},{},{},{},{}\n",
        o.total, o.passed, o.failed, o.errored, o.pass_rate
    );
    let mut by_atol = String::from("atol,total,passed,pass_pct\n");
    for r in &t.by_atol {
        by_atol.push_str(&format!("{},{},{},{:.1}\n", py_float(r.atol), r.total, r.passed, r.pass_pct));
    }
    let mut matrix = String::from("model,backend,total,passed,pass_rate\n");
    for c in &t.by_model_backend {
        matrix.push_str(&format!("{},{},{},{},{}\n", c.model, c.backend, c.total, c.passed, c.pass_rate));
    }
    let mut taxonomy = String::from("category,count\n");
    for (k, v) in &t.taxonomy_counts {
        taxonomy.push_str(&format!("{k},{v}\n"));
    }
    let mut latency = String::from("backend,median_ms,samples\n");
    for r in &t.latency {
        latency.push_str(&format!("{},{},{}\n", r.backend, r.median_ms, r.samples));
    }
    vec![
        ("overall.csv".into(), overall),
        ("by_atol.csv".into(), by_atol),
        ("model_backend.csv".into(), matrix),
        ("taxonomy.csv".into(), taxonomy),
        ("latency.csv".into(), latency),
    ]
}

pub fn render_report(t: &SummaryTables, format: ReportFormat) -> Vec<(String, String)> {
    match format {
        ReportFormat::Markdown => vec![("report.md".into(), render_markdown(t))],
        ReportFormat::Csv => render_csv(t),
    }
}
