//! Evaluation battery: RDMs, rank correlations, probes, retrieval and
//! shared-sequence statistics.

mod correlation;
mod probe;
mod rdm;
mod retrieval;
mod shared;

pub use correlation::{
    average_ranks, bias_delta, kendall_taub, kendall_taub_partial, partial_spearman, pearson, spearman,
};
pub use probe::{delta_r2, ProbePositions, ProbeResult, PROBE_EPSILON};
pub use rdm::{condensed_index, text_rdm, vision_rdm, Rdm, RdmKind};
pub use retrieval::{retrieval_top1, RetrievalResult};
pub use shared::{
    category_breadth, diversity, global_radius, matched_size_bootstrap, positional_entropy, shared_sequences,
    visual_radius, BootstrapResult, SharedSequence,
};
