//! Regenerates `fixtures/calibration/classifier_pairwise_bound.json`.
//!
//! ```text
//! cargo run -p driftcheck --example calibrate_drift_bound
//! ```

#[path = "../tests/common/drift_bound.rs"]
mod drift_bound;
#[path = "../tests/common/f64_oracle.rs"]
mod f64_oracle;

use std::path::Path;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/calibration");
    let (frozen, drifts) = drift_bound::derive(&root.join("classifier.yaml"), "calibration/classifier.yaml");
    let nonzero = drifts.iter().filter(|d| d.backend_gap > 0.0).count();
    let widest = drifts.iter().map(|d| d.backend_gap).fold(0.0, f64::max);
    println!("seeds with nonzero drift: {nonzero}/{}", drifts.len());
    let zero: Vec<u64> = drifts.iter().filter(|d| d.backend_gap == 0.0).map(|d| d.seed).collect();
    println!("bit-identical seeds: {zero:?}");
    println!("largest backend gap: {widest:e}");
    println!("bound: {:e}", frozen.bound);
    let out = root.join("classifier_pairwise_bound.json");
    std::fs::write(&out, serde_json::to_string_pretty(&frozen).unwrap() + "\n").unwrap();
    println!("wrote {}", out.display());
}
