//! Configuration-driven compatibility runs.
//!
//! A plan is a list of configs, a set of backend pairs and an atol grid.
//! Each `(config, pair)` cell executes both backends once and is then
//! verified at every atol in the grid, so the verdicts across the grid are
//! computed from the same outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use driftcheck_core::backend::{ExecOptions, FallbackEvent};
use driftcheck_core::builders::{self, BuildOptions};
use driftcheck_core::preprocess::{adjust_to_multiple, normalize};
use driftcheck_core::verify::{
    classify_failure, detections_equal_unordered, detections_from_tensor, segmentation_classes, tier1_compare,
    tier2_localize, tier3_evaluate, FailureEvidence, Status, TaskMetrics, VerificationReport,
};
use driftcheck_core::{
    execute, BackendKind, BackendSpec, Clock, ExecutionTrace, GraphModel, TaskKind, Tensor, ToleranceSpec,
};

use crate::config::{load_config, InputSpec, ModelSource, RunConfig};
use crate::error::{DriftError, Result};
use crate::reportlog::{env_fingerprint, py_float, EnvFingerprint, JsonlWriter, RunRecord};
use crate::tensorfile::read_tensor_file;

/// Wall-clock time since construction, from [`Instant`].
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendPair {
    pub reference: BackendKind,
    pub target: BackendKind,
}

impl BackendPair {
    pub fn label(&self) -> String {
        format!("{}->{}", self.reference.name(), self.target.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub configs: Vec<PathBuf>,
    /// Overrides each config's `options.optimized` choice of target.
    pub target: Option<BackendKind>,
    /// Every ordered pair over {reference, optimized}, self-pairs included.
    pub all_pairs: bool,
    /// Overrides each config's single atol when set.
    pub atol_grid: Option<Vec<f64>>,
    pub rtol: Option<f64>,
    pub seed: Option<u64>,
    pub jobs: usize,
}

impl SweepPlan {
    pub fn new(configs: Vec<PathBuf>) -> Self {
        Self { configs, target: None, all_pairs: false, atol_grid: None, rtol: None, seed: None, jobs: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(grid) = &self.atol_grid {
            if grid.is_empty() {
                return Err(DriftError::InvalidConfig("atol grid is empty".into()));
            }
            if grid.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                return Err(DriftError::InvalidConfig("atol values must be finite and >= 0".into()));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(DriftError::InvalidConfig("atol grid must be strictly increasing".into()));
            }
        }
        if let Some(r) = self.rtol {
            ToleranceSpec::new(0.0, r)?;
        }
        Ok(())
    }

    fn pairs_for(&self, cfg: Option<&RunConfig>) -> Vec<BackendPair> {
        use BackendKind::{Optimized, Reference};
        if self.all_pairs {
            return [(Reference, Reference), (Reference, Optimized), (Optimized, Reference), (Optimized, Optimized)]
                .into_iter()
                .map(|(reference, target)| BackendPair { reference, target })
                .collect();
        }
        let target = self.target.unwrap_or(match cfg {
            Some(c) if !c.options.optimized => Reference,
            _ => Optimized,
        });
        vec![BackendPair { reference: Reference, target }]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SuiteSummary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub errored: usize,
}

impl SuiteSummary {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let mut s = Self::default();
        for r in records {
            s.total += 1;
            match r.status() {
                Some(Status::Pass) => s.passed += 1,
                Some(Status::Fail) => s.failed += 1,
                _ => s.errored += 1,
            }
        }
        s
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(self.failed + self.errored > 0)
    }
}

/// Backend settings for one side of a pair, from the config's options.
pub fn backend_spec(kind: BackendKind, cfg: &RunConfig) -> BackendSpec {
    let mut spec = match kind {
        BackendKind::Reference => BackendSpec::reference(),
        BackendKind::Optimized => {
            let mut s = BackendSpec::optimized();
            s.precision = cfg.options.precision;
            s.reduction_order = cfg.options.reduction_order;
            s.fuse_conv_relu = cfg.options.fuse_conv_relu;
            s.nms_order = cfg.options.nms_order;
            s
        }
    };
    spec.mitigations = cfg.mitigations.clone();
    spec
}

/// Model plus preprocessed input samples, ready to execute.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: GraphModel,
    pub samples: Vec<BTreeMap<String, Tensor>>,
}

fn load_input(cfg: &RunConfig, index: usize, spec: &InputSpec) -> Result<Tensor> {
    let raw = match spec {
        InputSpec::File(p) => read_tensor_file(p)?,
        InputSpec::Synthetic { shape, seed } => {
            builders::synthetic_input(seed.unwrap_or(cfg.seed), &format!("input/{index}"), shape.clone())?
        }
    };
    // empty means and stds: non-image input, fed as is
    let x = if cfg.means.is_empty() && cfg.stds.is_empty() { raw } else { normalize(&raw, &cfg.means, &cfg.stds)? };
    Ok(match cfg.options.resize_multiple {
        Some(m) => adjust_to_multiple(&x, m)?,
        None => x,
    })
}

/// Loads or builds the model and reads, normalizes and resizes every input.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let tensors: Vec<Tensor> =
        cfg.inputs.iter().enumerate().map(|(i, s)| load_input(cfg, i, s)).collect::<Result<_>>()?;
    let model = match &cfg.model {
        ModelSource::Builtin { name, tied_scores, iou_threshold } => {
            let [_, _, h, w] = *tensors[0].shape() else {
                return Err(DriftError::InvalidConfig(format!(
                    "builtin {name} needs (1, 3, H, W) inputs, got {:?}",
                    tensors[0].shape()
                )));
            };
            let mut opts = BuildOptions { height: h, width: w, tied_scores: *tied_scores, ..BuildOptions::default() };
            if let Some(t) = iou_threshold {
                opts.iou_threshold = *t;
            }
            builders::build_builtin(name, cfg.seed, &opts)?
        }
        ModelSource::File(p) => crate::model_json::load_model_file(p)?,
    };
    let names: Vec<String> = model.inputs.iter().map(|i| i.name.clone()).collect();
    if names.len() != 1 {
        return Err(DriftError::InvalidConfig(format!(
            "model {} declares {} inputs; configs feed exactly one",
            model.name,
            names.len()
        )));
    }
    let samples = tensors.into_iter().map(|t| BTreeMap::from([(names[0].clone(), t)])).collect();
    Ok(Prepared { model, samples })
}

#[derive(Debug, Clone)]
struct SideRun {
    traces: Vec<ExecutionTrace>,
}

impl SideRun {
    fn outputs(&self) -> Vec<&Tensor> {
        self.traces.iter().flat_map(|t| t.output_tensors()).collect()
    }

    fn fallbacks(&self) -> Vec<&FallbackEvent> {
        self.traces.iter().flat_map(|t| &t.fallback_events).collect()
    }

    fn median_latency(&self, warmup: bool) -> Option<f64> {
        let mut all = Vec::new();
        for t in &self.traces {
            let l = &t.latencies_ms;
            all.extend_from_slice(if warmup && l.len() > 1 { &l[1..] } else { l });
        }
        driftcheck_core::measure_latency(&all)
    }
}

fn run_side(p: &Prepared, spec: &BackendSpec, cfg: &RunConfig, repeats: usize, clock: &dyn Clock) -> Result<SideRun> {
    let opts = ExecOptions { capture_activations: cfg.verification.capture_activations, repeats };
    let traces = p
        .samples
        .iter()
        .map(|inputs| execute(&p.model, inputs, spec, opts, clock))
        .collect::<std::result::Result<_, _>>()?;
    Ok(SideRun { traces })
}

/// Per-sample task metrics folded into one: every flag must hold and every
/// fraction takes its worst value.
fn combine_metrics(all: &[TaskMetrics]) -> Option<TaskMetrics> {
    let mut it = all.iter().copied();
    let first = it.next()?;
    Some(it.fold(first, |a, b| TaskMetrics {
        task: a.task,
        top1_match: a.top1_match.zip(b.top1_match).map(|(x, y)| x && y),
        topk_agreement: a.topk_agreement.zip(b.topk_agreement).map(|(x, y)| x.min(y)),
        miou: a.miou.zip(b.miou).map(|(x, y)| x.min(y)),
        detection_f1: a.detection_f1.zip(b.detection_f1).map(|(x, y)| x.min(y)),
        pass: a.pass && b.pass,
    }))
}

fn tier3(p: &Prepared, cfg: &RunConfig, reference: &SideRun, target: &SideRun) -> Result<Option<TaskMetrics>> {
    let classes = match p.model.task {
        TaskKind::Segmentation => segmentation_classes(&p.model)?,
        _ => 0,
    };
    let metrics = reference
        .traces
        .iter()
        .zip(&target.traces)
        .map(|(r, t)| {
            tier3_evaluate(p.model.task, &r.outputs[0].1, &t.outputs[0].1, &cfg.verification.thresholds, classes)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(combine_metrics(&metrics))
}

/// Outputs of one executed `(config, pair)` cell, verifiable at any tolerance.
struct Cell<'a> {
    cfg: &'a RunConfig,
    prepared: Prepared,
    ref_spec: BackendSpec,
    tgt_spec: BackendSpec,
    reference: SideRun,
    target: SideRun,
    sorted_retry: Option<bool>,
}

impl Cell<'_> {
    /// Whether rerunning both sides with the deterministic pre-NMS sort
    /// restores task agreement. Computed once per cell.
    fn sorted_retry_passes(&mut self, clock: &dyn Clock) -> Result<bool> {
        if let Some(v) = self.sorted_retry {
            return Ok(v);
        }
        let mut r = self.ref_spec.clone();
        let mut t = self.tgt_spec.clone();
        r.mitigations.pre_nms_sort = true;
        t.mitigations.pre_nms_sort = true;
        let rr = run_side(&self.prepared, &r, self.cfg, 1, clock)?;
        let tr = run_side(&self.prepared, &t, self.cfg, 1, clock)?;
        let pass = tier3(&self.prepared, self.cfg, &rr, &tr)?.is_some_and(|m| m.pass);
        self.sorted_retry = Some(pass);
        Ok(pass)
    }

    fn verify(&mut self, tol: ToleranceSpec, clock: &dyn Clock) -> Result<VerificationReport> {
        let cfg = self.cfg;
        let mode = cfg.verification.mode;
        let t1 = tier1_compare(&self.reference.outputs(), &self.target.outputs(), tol, mode)?;
        let t2 = if cfg.verification.capture_activations {
            let mut found = None;
            for (r, t) in self.reference.traces.iter().zip(&self.target.traces) {
                let (ra, ta) = (r.activations.as_deref().unwrap_or(&[]), t.activations.as_deref().unwrap_or(&[]));
                if let Some(d) = tier2_localize(ra, ta, tol, mode)? {
                    found = Some(d);
                    break;
                }
            }
            found
        } else {
            None
        };
        let t3 = tier3(&self.prepared, cfg, &self.reference, &self.target)?;
        let tier3_fail = t3.is_some_and(|m| !m.pass);
        let divergence_at_fallback = t2.as_ref().is_some_and(|d| {
            self.target.fallbacks().iter().chain(self.reference.fallbacks().iter()).any(|f| f.node_id == d.node_id)
        });
        let mut unordered = false;
        let mut retry = false;
        if self.prepared.model.task == TaskKind::Detection && (!t1.pass || tier3_fail) {
            unordered = self
                .reference
                .traces
                .iter()
                .zip(&self.target.traces)
                .map(|(r, t)| -> Result<bool> {
                    Ok(detections_equal_unordered(
                        &detections_from_tensor(&r.outputs[0].1)?,
                        &detections_from_tensor(&t.outputs[0].1)?,
                        tol,
                    ))
                })
                .collect::<Result<Vec<bool>>>()?
                .into_iter()
                .all(|b| b);
            if tier3_fail {
                retry = self.sorted_retry_passes(clock)?;
            }
        }
        let taxonomy = classify_failure(&FailureEvidence {
            error: None,
            tier1_pass: t1.pass,
            tier3_pass: t3.map(|m| m.pass),
            divergence_at_fallback,
            detections_equal_unordered: unordered,
            sorted_retry_passes: retry,
        });
        Ok(VerificationReport::new(t1, t2, t3, taxonomy))
    }
}

fn execute_cell<'a>(cfg: &'a RunConfig, pair: BackendPair, clock: &dyn Clock) -> Result<Cell<'a>> {
    let prepared = prepare(cfg)?;
    let ref_spec = backend_spec(pair.reference, cfg);
    let tgt_spec = backend_spec(pair.target, cfg);
    let repeats = cfg.options.repeats;
    let reference = run_side(&prepared, &ref_spec, cfg, repeats, clock)?;
    let target = run_side(&prepared, &tgt_spec, cfg, repeats, clock)?;
    Ok(Cell { cfg, prepared, ref_spec, tgt_spec, reference, target, sorted_retry: None })
}

fn error_record(mut r: RunRecord, err: &DriftError) -> RunRecord {
    r.status = Status::Error.name().into();
    r.taxonomy = classify_failure(&FailureEvidence {
        error: Some(err.core().unwrap_or(&driftcheck_core::Error::InvalidConfig(String::new()))),
        ..Default::default()
    })
    .name()
    .into();
    r.error_message = Some(err.to_string());
    r
}

fn fill_record(mut r: RunRecord, report: &VerificationReport, cell: &Cell<'_>) -> RunRecord {
    r.status = report.status.name().into();
    r.taxonomy = report.taxonomy.name().into();
    if let Some(s) = report.tier1.stats {
        r.max_abs_diff = Some(s.max_abs_diff);
        r.mae = Some(s.mae);
        r.p95_abs_diff = Some(s.p95_abs_diff);
    }
    r.tier2_first_divergence = report.tier2.as_ref().map(|d| d.node_id.clone());
    r.task = Some(cell.prepared.model.task.name().into());
    if let Some(m) = report.tier3 {
        r.top1_match = m.top1_match;
        r.topk_agreement = m.topk_agreement;
        r.miou = m.miou;
        r.detection_f1 = m.detection_f1;
        r.task_pass = Some(m.pass);
    }
    let warmup = cell.cfg.options.warmup;
    r.latency_ms_ref = cell.reference.median_latency(warmup);
    r.latency_ms_tgt = cell.target.median_latency(warmup);
    r
}

/// Records for every `(pair, atol)` of one config, in plan order.
pub fn run_config(path: &Path, plan: &SweepPlan, clock: &dyn Clock) -> Vec<RunRecord> {
    let shown = path.display().to_string();
    let cfg = load_config(path).map(|mut c| {
        if let Some(s) = plan.seed {
            c.seed = s;
        }
        c
    });
    let seed = match &cfg {
        Ok(c) => c.seed,
        Err(_) => plan.seed.unwrap_or(crate::config::defaults::SEED),
    };
    let env = env_fingerprint(seed);
    let atols: Vec<f64> = match (&plan.atol_grid, &cfg) {
        (Some(g), _) => g.clone(),
        (None, Ok(c)) => vec![c.verification.tol.atol],
        (None, Err(_)) => vec![crate::config::defaults::ATOL],
    };
    let rtol = match (plan.rtol, &cfg) {
        (Some(r), _) => r,
        (None, Ok(c)) => c.verification.tol.rtol,
        (None, Err(_)) => crate::config::defaults::RTOL,
    };
    let mut out = Vec::new();
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            for pair in plan.pairs_for(None) {
                for &atol in &atols {
                    let r = RunRecord::skeleton(&shown, "unknown", &pair.label(), atol, rtol, &env);
                    out.push(error_record(r, &e));
                }
            }
            return out;
        }
    };
    for pair in plan.pairs_for(Some(&cfg)) {
        let label = pair.label();
        let skeleton = |atol: f64, model: &str| RunRecord::skeleton(&shown, model, &label, atol, rtol, &env);
        match execute_cell(&cfg, pair, clock) {
            Err(e) => {
                for &atol in &atols {
                    out.push(error_record(skeleton(atol, &cfg.model_label()), &e));
                }
            }
            Ok(mut cell) => {
                let model = cell.prepared.model.name.clone();
                for &atol in &atols {
                    let rec = skeleton(atol, &model);
                    let verdict = ToleranceSpec::new(atol, rtol)
                        .map_err(DriftError::from)
                        .and_then(|tol| cell.verify(tol, clock));
                    out.push(match verdict {
                        Ok(report) => fill_record(rec, &report, &cell),
                        Err(e) => error_record(rec, &e),
                    });
                }
            }
        }
    }
    out
}

/// Single check of one config and pair at one tolerance.
pub fn run_once(cfg: &RunConfig, pair: BackendPair, tol: ToleranceSpec, clock: &dyn Clock) -> RunRecord {
    let env = env_fingerprint(cfg.seed);
    let shown = cfg.path.display().to_string();
    let rec = RunRecord::skeleton(&shown, &cfg.model_label(), &pair.label(), tol.atol, tol.rtol, &env);
    match execute_cell(cfg, pair, clock) {
        Err(e) => error_record(rec, &e),
        Ok(mut cell) => {
            let mut rec = rec;
            rec.model = cell.prepared.model.name.clone();
            match cell.verify(tol, clock) {
                Ok(report) => fill_record(rec, &report, &cell),
                Err(e) => error_record(rec, &e),
            }
        }
    }
}

/// Executes every cell of `plan` on up to `plan.jobs` threads and returns
/// the records in plan order.
pub fn run_suite(plan: &SweepPlan, clock: &(dyn Clock + Sync)) -> Result<(SuiteSummary, Vec<RunRecord>)> {
    plan.validate()?;
    let slots: Vec<Mutex<Vec<RunRecord>>> = plan.configs.iter().map(|_| Mutex::new(Vec::new())).collect();
    let next = AtomicUsize::new(0);
    let workers = plan.jobs.clamp(1, plan.configs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(path) = plan.configs.get(i) else { break };
                let records = run_config(path, plan, clock);
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = records;
            });
        }
    });
    let records: Vec<RunRecord> =
        slots.into_iter().flat_map(|m| m.into_inner().unwrap_or_else(|p| p.into_inner())).collect();
    Ok((SuiteSummary::from_records(&records), records))
}

/// `[PASS] name (atol=1e-05, rtol=1e-05)`, or `[ERROR] name -> message`.
pub fn console_line(r: &RunRecord, show_pair: bool) -> String {
    let name = Path::new(&r.config).file_name().map_or(r.config.clone(), |n| n.to_string_lossy().into_owned());
    let pair = if show_pair { format!(" [{}]", r.backend_pair) } else { String::new() };
    match &r.error_message {
        Some(msg) => format!("[ERROR] {name}{pair} -> {msg}"),
        None => format!("[{}] {name}{pair} (atol={}, rtol={})", r.status, py_float(r.atol), py_float(r.rtol)),
    }
}

pub fn summary_lines(s: &SuiteSummary) -> String {
    format!("\n=== Summary ===\nTotal: {}  Passed: {}  Failed: {}  Errored: {}", s.total, s.passed, s.failed, s.errored)
}

/// Writes `records` in order through one serialized writer.
pub fn write_records(records: &[RunRecord], path: &Path) -> Result<()> {
    let w = JsonlWriter::create(path)?;
    records.iter().try_for_each(|r| w.append(r))
}

pub fn fingerprint_for(plan: &SweepPlan) -> EnvFingerprint {
    env_fingerprint(plan.seed.unwrap_or(crate::config::defaults::SEED))
}
