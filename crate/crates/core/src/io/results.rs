//! Ranked results, one JSON record per query.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::records::{read_jsonl, write_jsonl};
use crate::cost::ScoredMoment;
use crate::error::{Error, Result};
use crate::retrieval::RankedResult;
use crate::types::{Moment, TemporalSpan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultEntry {
    pub video_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub cost: f64,
    pub first_clip: usize,
    pub last_clip: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub query_id: String,
    pub seed: u64,
    pub universe: usize,
    pub truncated: bool,
    pub ranked: Vec<ResultEntry>,
}

impl ResultRecord {
    pub fn from_result(r: &RankedResult, seed: u64) -> Self {
        Self {
            query_id: r.query_id.clone(),
            seed,
            universe: r.universe,
            truncated: r.truncated,
            ranked: r
                .ranked
                .iter()
                .map(|s| ResultEntry {
                    video_id: s.moment.video_id.clone(),
                    start_s: s.moment.span.start,
                    end_s: s.moment.span.end,
                    cost: s.cost,
                    first_clip: s.moment.first_clip,
                    last_clip: s.moment.last_clip,
                })
                .collect(),
        }
    }

    pub fn into_result(self) -> Result<RankedResult> {
        let ranked = self
            .ranked
            .into_iter()
            .map(|e| {
                Ok(ScoredMoment {
                    moment: Moment {
                        video_id: e.video_id,
                        first_clip: e.first_clip,
                        last_clip: e.last_clip,
                        span: TemporalSpan::new(e.start_s, e.end_s)?,
                    },
                    cost: e.cost,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RankedResult {
            query_id: self.query_id,
            ranked,
            stage_counters: Default::default(),
            universe: self.universe,
            truncated: self.truncated,
            diagnostic: None,
        })
    }
}

pub fn write_results(path: &Path, results: &[RankedResult], seed: u64) -> Result<()> {
    let records: Vec<ResultRecord> = results
        .iter()
        .map(|r| ResultRecord::from_result(r, seed))
        .collect();
    write_jsonl(path, &records)
}

/// Reads a results file, returning the records' seed alongside.
pub fn read_results(path: &Path) -> Result<(Vec<RankedResult>, Option<u64>)> {
    let records: Vec<ResultRecord> = read_jsonl(path)?;
    let seed = records.first().map(|r| r.seed);
    let results = records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.into_result().map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    Ok((results, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let r = RankedResult {
            query_id: "q".into(),
            ranked: vec![ScoredMoment {
                moment: Moment {
                    video_id: "v".into(),
                    first_clip: 1,
                    last_clip: 3,
                    span: TemporalSpan::new(2.5, 10.0).unwrap(),
                },
                cost: 0.1 + 0.2,
            }],
            stage_counters: Default::default(),
            universe: 21,
            truncated: false,
            diagnostic: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_results(&path, std::slice::from_ref(&r), 7).unwrap();
        let (back, seed) = read_results(&path).unwrap();
        assert_eq!(back, vec![r]);
        assert_eq!(seed, Some(7));
    }
}
