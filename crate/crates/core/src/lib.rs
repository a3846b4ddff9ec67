//! Corpus-scale natural-language moment retrieval by clip alignment.
//!
//! A query is embedded once; every clip of every video is embedded once and
//! can be indexed. A moment's cost is the mean squared distance between the
//! query embedding and the embeddings of its clips, so retrieval can start
//! from a nearest-neighbour search over clips and re-rank whole moments
//! afterwards.

pub mod corpus;
pub mod cost;
pub mod enumerate;
pub mod error;
pub mod eval;
pub mod index;
pub mod io;
pub mod model;
pub mod retrieval;
pub mod tensor;
pub mod train;
pub mod types;

pub use corpus::{Corpus, Dataset};
pub use cost::{
    clip_distances, embed_pooled_moments, moment_cost_aggregate, moment_cost_cal,
    score_all_moments, ClipDistanceTable, OpCounters, ScoreVariant, ScoredMoment, VideoInput,
};
pub use enumerate::{
    aggregate_index_entries, clip_index_entries, enumerate_moments, stride_clips, EnumConfig,
    Preset, StrideMode,
};
pub use error::{Error, Result};
pub use eval::{
    consensus_miou, consensus_rank, evaluate, median_rank, oracle_recall, query_hit, recall_at_k,
    single_video_eval, EvalMode, EvalSettings, MetricsReport,
};
pub use index::{build_exact, build_ivf, ClipHit, ClipIndex, CounterSnapshot, IndexEntries};
pub use model::{
    compute_context, embed_clips, embed_query, init_params, tef, ClipEmbeddings, ModelDims,
    ModelParams,
};
pub use retrieval::{
    baseline_scores, exhaustive_search, nms, single_video_search, two_stage_search, BaselineKind,
    ClipCache, MomentPrior, RankedResult, RetrievalConfig, StageCounters, StageOne,
};
pub use tensor::Tensor;
pub use train::{retrain_reranker, train, TrainConfig, TrainOutcome, TrainVariant};
pub use types::{
    clip_span, temporal_iou, FeatureMatrix, GroundTruth, Moment, Query, TemporalSpan, VideoMeta,
};
