//! Line-delimited JSON records: the video manifest and the query list.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::features::{read_features, write_features};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::types::{GroundTruth, Query, TemporalSpan, VideoMeta};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub video_id: String,
    pub duration_s: f64,
    pub clip_length_s: f64,
    pub num_clips: usize,
    /// Relative to the manifest's directory.
    pub features_path: String,
}

/// Which side of the train/test split a query belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub query_id: String,
    pub video_id: String,
    /// Annotations as `[start_s, end_s]` pairs.
    pub spans: Vec<[f64; 2]>,
    /// Relative to the query file's directory.
    pub words_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// Reads one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn record_error(path: &Path, line: usize, e: Error) -> Error {
    Error::Record {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    }
}

/// Loads `dir/manifest.jsonl` and every feature file it names.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(MANIFEST_FILE);
    let records: Vec<ManifestRecord> = read_jsonl(&path)?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        let meta = VideoMeta::new(
            r.video_id,
            r.duration_s,
            r.clip_length_s,
            r.num_clips,
            r.features_path,
        )
        .map_err(|e| record_error(&path, i + 1, e))?;
        let features = read_features(&dir.join(&meta.feature_ref))?;
        entries.push((meta, features));
    }
    Corpus::new(entries)
}

/// A query together with the split it was generated for.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedQuery {
    pub query: Query,
    pub split: Option<Split>,
}

/// Loads a query file, resolving ground truth against `corpus`.
pub fn load_queries(path: &Path, corpus: &Corpus) -> Result<Vec<LoadedQuery>> {
    let dir = parent(path);
    let records: Vec<QueryRecord> = read_jsonl(path)?;
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        let line = i + 1;
        let ground_truth = if r.spans.is_empty() {
            None
        } else {
            let v = corpus
                .require_ordinal(&r.video_id)
                .map_err(|e| record_error(path, line, e))?;
            let spans = r
                .spans
                .iter()
                .map(|&[s, e]| TemporalSpan::new(s, e))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| record_error(path, line, e))?;
            Some(
                GroundTruth::new(corpus.video(v), spans)
                    .map_err(|e| record_error(path, line, e))?,
            )
        };
        let words = read_features(&dir.join(&r.words_path))?;
        let query =
            Query::new(r.query_id, words, ground_truth).map_err(|e| record_error(path, line, e))?;
        out.push(LoadedQuery {
            query,
            split: r.split,
        });
    }
    Ok(out)
}

/// Queries of one side of the split. Queries without a split marker count as
/// training queries; `None` keeps everything.
pub fn select_split(queries: &[LoadedQuery], split: Option<Split>) -> Vec<Query> {
    queries
        .iter()
        .filter(|q| match split {
            None => true,
            Some(Split::Test) => q.split == Some(Split::Test),
            Some(Split::Train) => q.split != Some(Split::Test),
        })
        .map(|q| q.query.clone())
        .collect()
}

/// Ground truth only, without word vectors: `query_id -> GroundTruth`.
pub fn load_ground_truth(path: &Path) -> Result<Vec<(String, GroundTruth)>> {
    let records: Vec<QueryRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let annotations = r
                .spans
                .iter()
                .map(|&[s, e]| TemporalSpan::new(s, e))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| record_error(path, i + 1, e))?;
            if annotations.is_empty() {
                return Err(record_error(path, i + 1, Error::Empty("annotations")));
            }
            Ok((
                r.query_id,
                GroundTruth {
                    video_id: r.video_id,
                    annotations,
                },
            ))
        })
        .collect()
}

/// Writes a corpus and its queries under `dir`: the manifest, the query file,
/// and one feature file per video and per query.
pub fn save_dataset(dir: &Path, corpus: &Corpus, queries: &[LoadedQuery]) -> Result<()> {
    for sub in ["features", "words"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut manifest = Vec::with_capacity(corpus.len());
    for (v, meta) in corpus.videos().iter().enumerate() {
        let rel = format!("features/{v:06}.calf");
        write_features(&dir.join(&rel), corpus.features(v))?;
        manifest.push(ManifestRecord {
            video_id: meta.video_id.clone(),
            duration_s: meta.duration,
            clip_length_s: meta.clip_length,
            num_clips: meta.num_clips,
            features_path: rel,
        });
    }
    write_jsonl(&dir.join(MANIFEST_FILE), &manifest)?;
    let mut records = Vec::with_capacity(queries.len());
    for (i, lq) in queries.iter().enumerate() {
        let rel = format!("words/{i:06}.calf");
        write_features(&dir.join(&rel), &lq.query.word_vectors)?;
        let (video_id, spans) = match &lq.query.ground_truth {
            Some(gt) => (
                gt.video_id.clone(),
                gt.annotations.iter().map(|a| [a.start, a.end]).collect(),
            ),
            None => (String::new(), Vec::new()),
        };
        records.push(QueryRecord {
            query_id: lq.query.query_id.clone(),
            video_id,
            spans,
            words_path: rel,
            split: lq.split,
        });
    }
    write_jsonl(&dir.join(QUERIES_FILE), &records)
}
