//! Metric-graph instance segmentation.
//!
//! This crate turns dense per-pixel embedding vectors into instance
//! segmentations by way of *metric graphs*: grid graphs whose edge weights
//! are L1 distances between embeddings, and whose exponentiated form
//! (a = e^{−d}) is an affinity graph with built-in triangle-inequality
//! consistency. It provides:
//!
//! - a discriminative embedding loss (intra-object pull, inter-object hinge
//!   push, mean-norm regularizer) with analytic gradients ([`loss`]);
//! - an Adam optimizer and a direct per-pixel embedding fit ([`optimize`]);
//! - metric/affinity graph construction from fields ([`graph`]);
//! - segmentation by thresholded connected components or by nearest mean
//!   vector, with small-segment removal and dilation ([`segment`]);
//! - projection of arbitrary (possibly metric-inconsistent) affinity graphs
//!   onto metric graphs by least-squares embedding fits ([`metricfit`]);
//! - Rand F-score and Variation of Information with merge/split
//!   decomposition and boundary exclusion ([`eval`]);
//! - PCA visualization of vector fields as RGB images ([`viz`]);
//! - synthetic Voronoi ground truth and drift injection ([`synth`]);
//! - NPY/JSON file I/O for all of the above ([`io`]).
//!
//! All computations are sequential and deterministic: a fixed seed yields
//! bit-identical fields, graphs, and segmentations on every platform.

pub mod error;
pub mod eval;
pub mod field;
pub mod graph;
pub mod io;
pub mod labels;
pub mod loss;
pub mod metricfit;
pub mod optimize;
pub mod rng;
pub mod segment;
pub mod synth;
mod union_find;
pub mod viz;

pub use error::{Error, Result};
pub use eval::{boundary_exclusion_mask, evaluate, ContingencyTable, EvalReport, PixelMask};
pub use field::VectorField;
pub use graph::{
    build_metric_graph, metric_to_affinity, nearest_neighbor_offsets, AffinityGraph, EdgeOffset,
    EdgePlanes, MetricGraph,
};
pub use io::{
    load_field, load_graph, load_labels, read_json, save_affinity_graph, save_field, save_labels,
    save_metric_graph, sidecar_path, write_json, GraphKind, LoadedGraph,
};
pub use labels::{relabel_connected, Connectivity, LabelMap, RelabelResult};
pub use loss::{
    build_ext_mask, compute_loss, compute_loss_gradient, compute_loss_with_gradient, ExtMask,
    LossParams, LossReport,
};
pub use metricfit::{
    make_inconsistent_fixture, project_to_metric, BoundaryPattern, ProjectionConfig,
    ProjectionLogEntry, ProjectionResult,
};
pub use optimize::{adam_step, fit_embeddings, AdamState, FitConfig, FitLogEntry, FitResult};
pub use rng::SplitMix64;
pub use segment::{
    connected_components, dilate_segments, postprocess, remove_small_segments, seed_segment,
    GraphRef, SegmentationConfig,
};
pub use synth::{inject_drift, voronoi_labels, voronoi_labels_from_sites};
pub use viz::{fit_pca, render_rgb, PcaModel};
