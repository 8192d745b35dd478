//! Segmentation quality metrics and paired significance testing.

mod seg;
mod wilcoxon;

pub use seg::{
    argmax_labels, confusion_counts, mean_metrics, segmentation_metrics, ClassMetrics, ClassSummary, ConfusionCounts,
};
pub use wilcoxon::{
    exact_p_value, normal_p_value, signed_ranks, wilcoxon_signed_rank, SignedRanks, WilcoxonMethod, WilcoxonResult,
    EXACT_LIMIT,
};
