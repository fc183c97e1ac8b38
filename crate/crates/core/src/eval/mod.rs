//! Retrieval metrics, evaluation protocols and the synthetic benchmark.

mod metrics;
mod protocol;
pub mod synth;

pub use metrics::{
    average_precision, cmc, items_for_fraction, mean_average_precision, pr_curve, CmcCurve,
    RankedItem, RankedList,
};
pub use protocol::{
    aligned_crops, channel_stats_report, mine_pairs, occlusion_binned_report, patch_retrieval_protocol, random_ranking_ap,
    rank_query, retrieval_run, ChannelStatsReport, OcclusionBin, OcclusionRow, PatchProtocol,
    PatchProtocolResult, PatchQuery, QueryOutcome, RetrievalRun,
};
