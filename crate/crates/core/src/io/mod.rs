//! On-disk formats and the synthetic corpus generator.

pub(crate) mod binary;
mod checkpoint;
mod features;
mod records;
mod results;
mod synthetic;

pub use checkpoint::{Checkpoint, CheckpointConfig, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use features::{
    read_features, write_feature_matrix, write_features, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use records::{
    load_corpus, load_ground_truth, load_queries, read_jsonl, save_dataset, select_split,
    write_jsonl, LoadedQuery, ManifestRecord, QueryRecord, Split, MANIFEST_FILE, QUERIES_FILE,
};
pub use results::{read_results, write_results, ResultEntry, ResultRecord};
pub use synthetic::{
    generate_synthetic, write_synthetic, ClipCount, SyntheticData, SyntheticSpec, SPEC_FILE,
};
