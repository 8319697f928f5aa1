//! YAML run configuration.
//!
//! ```yaml
//! source: builtin            # builtin | file  (alias key: from)
//! model: classifier          # builtin name, or model JSON path for source=file
//! params: { tied_scores: false, iou_threshold: 0.5 }   # detector only
//! inputs:
//!   - { shape: [1, 3, 32, 32], seed: 1 }   # synthetic
//!   - data/sample.drft                     # DRFT tensor file
//! means: [0.485, 0.456, 0.406]
//! stds:  [0.229, 0.224, 0.225]
//! options:
//!   optimized: true          # alias: compile
//!   resize_multiple: 32      # null disables
//!   precision: full          # full | reduced
//!   reduction_order: pairwise
//!   fuse_conv_relu: true
//!   nms_order: unstable
//!   repeats: 11
//!   warmup: false
//! verification:
//!   tol: { atol: 1e-5, rtol: 1e-5 }
//!   mode: eq1                # eq1 | elementwise
//!   capture_activations: false
//!   task_thresholds: { require_top1: true, topk: 5, topk_min: 0.8,
//!                      miou_min: 0.99, detection_f1_min: 1.0, match_iou: 0.5 }
//! mitigations: { pre_nms_sort: false, force_full_precision: false, eager_fallback_ops: [] }
//! seed: 5
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Component, Path, PathBuf};

use driftcheck_core::verify::TaskThresholds;
use driftcheck_core::{CloseMode, MitigationSet, NmsOrder, OpKind, Precision, ReductionOrder, ToleranceSpec};
use serde_yaml::{Mapping, Value};

use crate::error::{DriftError, Result};

/// Every configuration default lives here.
pub mod defaults {
    use driftcheck_core::compare::{DEFAULT_ATOL, DEFAULT_RTOL};
    use driftcheck_core::{CloseMode, NmsOrder, Precision, ReductionOrder};

    pub const MEANS: [f64; 3] = [0.485, 0.456, 0.406];
    pub const STDS: [f64; 3] = [0.229, 0.224, 0.225];
    pub const ATOL: f64 = DEFAULT_ATOL;
    pub const RTOL: f64 = DEFAULT_RTOL;
    pub const RESIZE_MULTIPLE: Option<usize> = Some(32);
    pub const SEED: u64 = 5;
    pub const REPEATS: usize = 11;
    pub const WARMUP: bool = false;
    pub const OPTIMIZED: bool = true;
    pub const PRECISION: Precision = Precision::Full;
    pub const REDUCTION_ORDER: ReductionOrder = ReductionOrder::Pairwise;
    pub const FUSE_CONV_RELU: bool = true;
    pub const NMS_ORDER: NmsOrder = NmsOrder::Unstable;
    pub const MODE: CloseMode = CloseMode::Eq1;
    pub const CAPTURE_ACTIVATIONS: bool = false;
    pub const TIED_SCORES: bool = false;
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Builtin { name: String, tied_scores: bool, iou_threshold: Option<f64> },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    File(PathBuf),
    Synthetic { shape: Vec<usize>, seed: Option<u64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Options {
    pub optimized: bool,
    pub resize_multiple: Option<usize>,
    pub precision: Precision,
    pub reduction_order: ReductionOrder,
    pub fuse_conv_relu: bool,
    pub nms_order: NmsOrder,
    pub repeats: usize,
    pub warmup: bool,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            optimized: defaults::OPTIMIZED,
            resize_multiple: defaults::RESIZE_MULTIPLE,
            precision: defaults::PRECISION,
            reduction_order: defaults::REDUCTION_ORDER,
            fuse_conv_relu: defaults::FUSE_CONV_RELU,
            nms_order: defaults::NMS_ORDER,
            repeats: defaults::REPEATS,
            warmup: defaults::WARMUP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub tol: ToleranceSpec,
    pub mode: CloseMode,
    pub capture_activations: bool,
    pub thresholds: TaskThresholds,
}

impl Default for Verification {
    fn default() -> Self {
        Self {
            tol: ToleranceSpec { atol: defaults::ATOL, rtol: defaults::RTOL },
            mode: defaults::MODE,
            capture_activations: defaults::CAPTURE_ACTIVATIONS,
            thresholds: TaskThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub path: PathBuf,
    pub model: ModelSource,
    pub inputs: Vec<InputSpec>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub options: Options,
    pub verification: Verification,
    pub mitigations: MitigationSet,
    pub seed: u64,
}

impl RunConfig {
    /// Model name for logs, available even when the model fails to load.
    pub fn model_label(&self) -> String {
        match &self.model {
            ModelSource::Builtin { name, .. } => name.clone(),
            ModelSource::File(p) => {
                p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "unknown".into())
            }
        }
    }
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> DriftError {
    DriftError::InvalidConfig(format!("{key}: {msg}"))
}

/// A YAML mapping whose keys must all be consumed.
struct Section<'a> {
    prefix: String,
    map: Option<&'a Mapping>,
    used: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(value: &'a Value, prefix: &str) -> Result<Self> {
        let map = match value {
            Value::Mapping(m) => Some(m),
            Value::Null => None,
            _ => {
                let name = if prefix.is_empty() { "document" } else { prefix };
                return Err(invalid(name, "expected a mapping"));
            }
        };
        Ok(Self { prefix: prefix.into(), map, used: BTreeSet::new() })
    }

    fn key(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.into()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Looks up `name`; a YAML null counts as absent.
    fn get(&mut self, name: &str) -> Option<&'a Value> {
        self.used.insert(name.into());
        self.map?.get(name).filter(|v| !v.is_null())
    }

    /// Like [`get`], but distinguishes an explicit null.
    fn get_raw(&mut self, name: &str) -> Option<&'a Value> {
        self.used.insert(name.into());
        self.map?.get(name)
    }

    /// `name` or its alias, but not both.
    fn get_aliased(&mut self, name: &str, alias: &str) -> Result<(Option<&'a Value>, String)> {
        match (self.get(name), self.get(alias)) {
            (Some(_), Some(_)) => Err(invalid(&self.key(name), format!("conflicts with alias {alias}"))),
            (Some(v), None) => Ok((Some(v), self.key(name))),
            (None, v) => Ok((v, self.key(alias))),
        }
    }

    fn finish(self) -> Result<()> {
        let Some(map) = self.map else { return Ok(()) };
        for k in map.keys() {
            let name = match k {
                Value::String(s) => s.clone(),
                other => serde_yaml::to_string(other).unwrap_or_default().trim().to_string(),
            };
            if !self.used.contains(&name) {
                return Err(DriftError::InvalidConfig(format!("unknown key: {}", self.key(&name))));
            }
        }
        Ok(())
    }
}

fn as_bool(v: &Value, key: &str) -> Result<bool> {
    v.as_bool().ok_or_else(|| invalid(key, "expected true or false"))
}

fn as_f64(v: &Value, key: &str) -> Result<f64> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| invalid(key, "expected a finite number"))
}

fn as_nonneg(v: &Value, key: &str) -> Result<f64> {
    let x = as_f64(v, key)?;
    if x < 0.0 {
        return Err(invalid(key, format!("must be >= 0, got {x}")));
    }
    Ok(x)
}

fn as_u64(v: &Value, key: &str) -> Result<u64> {
    v.as_u64().ok_or_else(|| invalid(key, "expected a non-negative integer"))
}

fn as_positive(v: &Value, key: &str) -> Result<usize> {
    match as_u64(v, key)? {
        0 => Err(invalid(key, "must be >= 1")),
        n => Ok(n as usize),
    }
}

fn as_str<'v>(v: &'v Value, key: &str) -> Result<&'v str> {
    v.as_str().ok_or_else(|| invalid(key, "expected a string"))
}

fn as_f64_list(v: &Value, key: &str) -> Result<Vec<f64>> {
    let seq = v.as_sequence().ok_or_else(|| invalid(key, "expected a list of numbers"))?;
    seq.iter().enumerate().map(|(i, x)| as_f64(x, &format!("{key}[{i}]"))).collect()
}

fn choice<T: Copy>(v: &Value, key: &str, options: &[(&str, T)]) -> Result<T> {
    let s = as_str(v, key)?;
    options.iter().find(|(name, _)| *name == s).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        invalid(key, format!("expected one of {}, got {s}", names.join(", ")))
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| DriftError::io(path, e))?;
    parse_config(&text, path)
}

pub fn parse_config(text: &str, path: &Path) -> Result<RunConfig> {
    let doc: Value = serde_yaml::from_str(text)
        .map_err(|e| DriftError::ConfigParse { path: path.to_path_buf(), msg: e.to_string() })?;
    let mut top = Section::new(&doc, "")?;

    let (source, source_key) = top.get_aliased("source", "from")?;
    let builtin = match source {
        None => true,
        Some(v) => choice(v, &source_key, &[("builtin", true), ("library", true), ("file", false), ("repo", false)])?,
    };
    let model_name = as_str(top.get("model").ok_or_else(|| invalid("model", "is required"))?, "model")?.to_string();

    let mut params = Section::new(top.get_raw("params").unwrap_or(&Value::Null), "params")?;
    let tied_scores = params.get("tied_scores").map(|v| as_bool(v, "params.tied_scores")).transpose()?;
    let iou_threshold = params.get("iou_threshold").map(|v| as_nonneg(v, "params.iou_threshold")).transpose()?;
    params.finish()?;
    if iou_threshold.is_some_and(|t| t > 1.0) {
        return Err(invalid("params.iou_threshold", "must lie in [0, 1]"));
    }

    let model = if builtin {
        if !driftcheck_core::builders::BUILTIN_MODELS.contains(&model_name.as_str()) {
            return Err(invalid(
                "model",
                format!("unknown builtin {model_name}; expected classifier, segmenter or detector"),
            ));
        }
        if model_name != "detector" && (tied_scores.is_some() || iou_threshold.is_some()) {
            return Err(invalid("params", "only the detector takes parameters"));
        }
        ModelSource::Builtin {
            name: model_name,
            tied_scores: tied_scores.unwrap_or(defaults::TIED_SCORES),
            iou_threshold,
        }
    } else {
        if tied_scores.is_some() || iou_threshold.is_some() {
            return Err(invalid("params", "file models take no parameters"));
        }
        ModelSource::File(resolve_path(path, &model_name))
    };

    let inputs_v = top.get("inputs").ok_or_else(|| invalid("inputs", "is required"))?;
    let seq = inputs_v.as_sequence().ok_or_else(|| invalid("inputs", "expected a list"))?;
    if seq.is_empty() {
        return Err(invalid("inputs", "must not be empty"));
    }
    let mut inputs = Vec::with_capacity(seq.len());
    for (i, item) in seq.iter().enumerate() {
        let key = format!("inputs[{i}]");
        inputs.push(match item {
            Value::String(p) => InputSpec::File(resolve_path(path, p)),
            Value::Mapping(_) => {
                let mut s = Section::new(item, &key)?;
                let shape_key = format!("{key}.shape");
                let shape_v = s.get("shape").ok_or_else(|| invalid(&shape_key, "is required"))?;
                let shape: Vec<usize> = shape_v
                    .as_sequence()
                    .ok_or_else(|| invalid(&shape_key, "expected a list of extents"))?
                    .iter()
                    .map(|d| as_u64(d, &shape_key).map(|d| d as usize))
                    .collect::<Result<_>>()?;
                if shape.len() > driftcheck_core::tensor::MAX_RANK {
                    return Err(invalid(&shape_key, "rank must be <= 4"));
                }
                let seed = s.get("seed").map(|v| as_u64(v, &format!("{key}.seed"))).transpose()?;
                s.finish()?;
                InputSpec::Synthetic { shape, seed }
            }
            _ => return Err(invalid(&key, "expected a path or {shape, seed}")),
        });
    }

    let means = match top.get("means") {
        Some(v) => as_f64_list(v, "means")?,
        None => defaults::MEANS.to_vec(),
    };
    let stds = match top.get("stds") {
        Some(v) => as_f64_list(v, "stds")?,
        None => defaults::STDS.to_vec(),
    };
    if let Some(i) = stds.iter().position(|&s| s == 0.0) {
        return Err(invalid(&format!("stds[{i}]"), "must be nonzero"));
    }
    if means.len() != stds.len() {
        return Err(invalid("stds", format!("{} stds for {} means", stds.len(), means.len())));
    }

    let options = parse_options(top.get_raw("options").unwrap_or(&Value::Null))?;
    let verification = parse_verification(top.get_raw("verification").unwrap_or(&Value::Null))?;
    let mitigations = parse_mitigations(top.get_raw("mitigations").unwrap_or(&Value::Null))?;
    let seed = top.get("seed").map(|v| as_u64(v, "seed")).transpose()?.unwrap_or(defaults::SEED);
    top.finish()?;

    Ok(RunConfig { path: path.to_path_buf(), model, inputs, means, stds, options, verification, mitigations, seed })
}

fn parse_options(v: &Value) -> Result<Options> {
    let mut s = Section::new(v, "options")?;
    let mut o = Options::default();
    let (optimized, key) = s.get_aliased("optimized", "compile")?;
    if let Some(v) = optimized {
        o.optimized = as_bool(v, &key)?;
    }
    if let Some(v) = s.get_raw("resize_multiple") {
        o.resize_multiple = match v {
            Value::Null => None,
            v => Some(as_positive(v, "options.resize_multiple")?),
        };
    }
    if let Some(v) = s.get("precision") {
        o.precision = choice(v, "options.precision", &[("full", Precision::Full), ("reduced", Precision::Reduced)])?;
    }
    if let Some(v) = s.get("reduction_order") {
        o.reduction_order = choice(
            v,
            "options.reduction_order",
            &[("sequential", ReductionOrder::Sequential), ("pairwise", ReductionOrder::Pairwise)],
        )?;
    }
    if let Some(v) = s.get("fuse_conv_relu") {
        o.fuse_conv_relu = as_bool(v, "options.fuse_conv_relu")?;
    }
    if let Some(v) = s.get("nms_order") {
        o.nms_order =
            choice(v, "options.nms_order", &[("stable", NmsOrder::Stable), ("unstable", NmsOrder::Unstable)])?;
    }
    if let Some(v) = s.get("repeats") {
        o.repeats = as_positive(v, "options.repeats")?;
    }
    if let Some(v) = s.get("warmup") {
        o.warmup = as_bool(v, "options.warmup")?;
    }
    s.finish()?;
    Ok(o)
}

fn parse_verification(v: &Value) -> Result<Verification> {
    let mut s = Section::new(v, "verification")?;
    let mut out = Verification::default();
    if let Some(tol) = s.get_raw("tol") {
        let mut t = Section::new(tol, "verification.tol")?;
        if let Some(v) = t.get("atol") {
            out.tol.atol = as_nonneg(v, "verification.tol.atol")?;
        }
        if let Some(v) = t.get("rtol") {
            out.tol.rtol = as_nonneg(v, "verification.tol.rtol")?;
        }
        t.finish()?;
    }
    if let Some(v) = s.get("mode") {
        out.mode = choice(v, "verification.mode", &[("eq1", CloseMode::Eq1), ("elementwise", CloseMode::Elementwise)])?;
    }
    if let Some(v) = s.get("capture_activations") {
        out.capture_activations = as_bool(v, "verification.capture_activations")?;
    }
    if let Some(th) = s.get_raw("task_thresholds") {
        let p = "verification.task_thresholds";
        let mut t = Section::new(th, p)?;
        let th = &mut out.thresholds;
        if let Some(v) = t.get("require_top1") {
            th.require_top1 = as_bool(v, &format!("{p}.require_top1"))?;
        }
        if let Some(v) = t.get("topk") {
            th.topk = as_positive(v, &format!("{p}.topk"))?;
        }
        for (name, slot) in [
            ("topk_min", &mut th.topk_min),
            ("miou_min", &mut th.miou_min),
            ("detection_f1_min", &mut th.detection_f1_min),
            ("match_iou", &mut th.match_iou),
        ] {
            if let Some(v) = t.get(name) {
                let key = format!("{p}.{name}");
                let x = as_nonneg(v, &key)?;
                if x > 1.0 {
                    return Err(invalid(&key, "must lie in [0, 1]"));
                }
                *slot = x;
            }
        }
        t.finish()?;
    }
    s.finish()?;
    Ok(out)
}

fn parse_mitigations(v: &Value) -> Result<MitigationSet> {
    let mut s = Section::new(v, "mitigations")?;
    let mut m = MitigationSet::default();
    if let Some(v) = s.get("pre_nms_sort") {
        m.pre_nms_sort = as_bool(v, "mitigations.pre_nms_sort")?;
    }
    if let Some(v) = s.get("force_full_precision") {
        m.force_full_precision = as_bool(v, "mitigations.force_full_precision")?;
    }
    if let Some(v) = s.get("eager_fallback_ops") {
        let key = "mitigations.eager_fallback_ops";
        for (i, op) in v.as_sequence().ok_or_else(|| invalid(key, "expected a list of op names"))?.iter().enumerate() {
            let name = as_str(op, &format!("{key}[{i}]"))?;
            let op =
                OpKind::from_name(name).ok_or_else(|| invalid(&format!("{key}[{i}]"), format!("unknown op {name}")))?;
            m.eager_fallback_ops.insert(op);
        }
    }
    s.finish()?;
    Ok(m)
}

/// Lexically normalized absolute form of `base_dir / rel`.
pub fn resolve_against(base_dir: &Path, rel: &str) -> PathBuf {
    let rel = Path::new(rel);
    let joined = if rel.is_absolute() {
        return rel.to_path_buf();
    } else {
        base_dir.join(rel)
    };
    let joined = std::path::absolute(&joined).unwrap_or(joined);
    let mut out = PathBuf::new();
    for c in joined.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push(c);
                }
            }
            other => out.push(other),
        }
    }
    out
}

/// Resolves `rel` against the directory holding `config_path`.
pub fn resolve_path(config_path: &Path, rel: &str) -> PathBuf {
    let base = config_path.parent().unwrap_or(Path::new(""));
    resolve_against(base, rel)
}

/// Sorted paths matching `pattern`.
pub fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths = glob::glob(pattern).map_err(|e| DriftError::InvalidConfig(format!("bad glob {pattern}: {e}")))?;
    let mut out: Vec<PathBuf> = paths.filter_map(|p| p.ok()).collect();
    out.sort();
    Ok(out)
}
