//! Allocation-only core of `driftcheck`.
//!
//! Everything in here is a pure function over immutable inputs: the dense
//! [`Tensor`] type and its numeric utilities, the operator-graph IR with
//! seeded synthetic model builders, the reference and optimized interpreter
//! backends, and the three verification tiers. File formats, configuration,
//! logging and the CLI live in the `driftcheck` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod backend;
pub mod boxes;
pub mod builders;
pub mod compare;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod precision;
pub mod preprocess;
pub mod reduce;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use backend::{
    execute, measure_latency, BackendKind, BackendSpec, Clock, ExecutionTrace, MitigationSet, NodeActivation, Precision,
};
pub use boxes::{iou, nms, pre_nms_sort, BoundingBox, NmsOrder};
pub use compare::{
    allclose, allclose_elementwise, allclose_eq1, compute_diff_stats, CloseMode, DiffStats, ToleranceSpec,
};
pub use error::{Error, Result};
pub use graph::{infer_shapes, AttrValue, GraphModel, Node, OpKind, TaskKind};
pub use reduce::ReductionOrder;
pub use rng::SplitMix64;
pub use tensor::{DType, Tensor};
