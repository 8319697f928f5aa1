//! Derivation of the frozen classifier drift bound.
//!
//! For each seed both f32 backends are compared against the f64 forward
//! pass. The triangle inequality then bounds the backend-to-backend gap by
//! the sum of the two oracle gaps; the frozen bound is the worst such sum
//! over the seed range, times a safety factor.

use std::path::Path;

use driftcheck::config::load_config;
use driftcheck::runner::{backend_spec, prepare};
use driftcheck_core::backend::{ExecOptions, NullClock};
use driftcheck_core::{execute, BackendKind, Tensor};
use serde::{Deserialize, Serialize};

use super::f64_oracle;

pub const SEEDS: std::ops::Range<u64> = 0..100;
pub const SAFETY_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
pub struct SeedDrift {
    pub seed: u64,
    /// `max |reference - optimized|`
    pub backend_gap: f64,
    /// `max |reference - f64| + max |optimized - f64|`
    pub oracle_gap_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenBound {
    pub config: String,
    pub seeds: [u64; 2],
    pub safety_factor: f64,
    pub worst_oracle_gap_sum: f64,
    pub bound: f64,
    pub derived_by: String,
}

fn max_gap(a: &Tensor, b: &[f64]) -> f64 {
    a.to_f64_vec().iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn measure(config: &Path, seed: u64) -> SeedDrift {
    let mut cfg = load_config(config).unwrap();
    cfg.seed = seed;
    let p = prepare(&cfg).unwrap();
    let run = |kind| {
        let spec = backend_spec(kind, &cfg);
        execute(&p.model, &p.samples[0], &spec, ExecOptions::default(), &NullClock).unwrap().outputs.remove(0).1
    };
    let (r, t) = (run(BackendKind::Reference), run(BackendKind::Optimized));
    let exact = f64_oracle::forward(&p.model, p.samples[0].values().next().unwrap());
    SeedDrift {
        seed,
        backend_gap: max_gap(&r, &t.to_f64_vec()),
        oracle_gap_sum: max_gap(&r, &exact.data) + max_gap(&t, &exact.data),
    }
}

pub fn derive(config: &Path, rel_name: &str) -> (FrozenBound, Vec<SeedDrift>) {
    let drifts: Vec<SeedDrift> = SEEDS.map(|s| measure(config, s)).collect();
    let worst = drifts.iter().map(|d| d.oracle_gap_sum).fold(0.0, f64::max);
    let frozen = FrozenBound {
        config: rel_name.into(),
        seeds: [SEEDS.start, SEEDS.end],
        safety_factor: SAFETY_FACTOR,
        worst_oracle_gap_sum: worst,
        bound: worst * SAFETY_FACTOR,
        derived_by: "cargo run -p driftcheck --example calibrate_drift_bound".into(),
    };
    (frozen, drifts)
}
