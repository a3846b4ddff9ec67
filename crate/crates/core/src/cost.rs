//! Alignment costs between a query embedding and candidate moments.
//!
//! The clip-alignment cost of a moment is the mean squared Euclidean distance
//! between the query embedding and each clip embedding in the moment. Clip
//! distances are computed once per video and moments are then scored in O(1)
//! from a running sum. The aggregate cost instead pools the raw features of
//! the moment, embeds the pooled vector, and compares that single embedding.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::enumerate::{enumerate_ranges, EnumConfig};
use crate::error::{Error, Result};
use crate::model::{embed_clips, ClipEmbeddings, ModelParams, VisualEncoder};
use crate::tensor::squared_distance;
use crate::types::{FeatureMatrix, Moment, VideoMeta};

#[derive(Debug, Clone, PartialEq)]
pub struct ClipDistanceTable {
    pub video_id: String,
    distances: Vec<f64>,
    prefix: Vec<f64>,
}

impl ClipDistanceTable {
    pub fn from_distances(video_id: impl Into<String>, distances: Vec<f64>) -> Self {
        let mut prefix = Vec::with_capacity(distances.len() + 1);
        let mut acc = 0.0;
        prefix.push(acc);
        for d in &distances {
            acc += d;
            prefix.push(acc);
        }
        Self {
            video_id: video_id.into(),
            distances,
            prefix,
        }
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    #[inline]
    pub(crate) fn cost_unchecked(&self, i: usize, j: usize) -> f64 {
        (self.prefix[j + 1] - self.prefix[i]) / (j - i + 1) as f64
    }
}

/// Squared distance from the query to every clip embedding, with running sums.
pub fn clip_distances(query_emb: &[f64], clips: &ClipEmbeddings) -> Result<ClipDistanceTable> {
    if query_emb.len() != clips.embed() {
        return Err(Error::DimMismatch {
            context: "query embedding",
            expected: clips.embed(),
            actual: query_emb.len(),
        });
    }
    let distances = (0..clips.rows())
        .map(|k| squared_distance(clips.row(k), query_emb))
        .collect();
    Ok(ClipDistanceTable::from_distances(
        clips.video_id.clone(),
        distances,
    ))
}

/// Clip-alignment cost of clips `i..=j`.
pub fn moment_cost_cal(table: &ClipDistanceTable, i: usize, j: usize) -> Result<f64> {
    if i >= j || j >= table.len() {
        return Err(Error::InvalidMoment {
            video_id: table.video_id.clone(),
            first: i,
            last: j,
            reason: format!("need i < j < {}", table.len()),
        });
    }
    Ok(table.cost_unchecked(i, j))
}

fn pooled_feature(features: &FeatureMatrix, i: usize, j: usize) -> Vec<f64> {
    let mut pooled = vec![0.0; features.dim()];
    for k in i..=j {
        for (p, &x) in pooled.iter_mut().zip(features.row(k)) {
            *p += f64::from(x);
        }
    }
    let z = (j - i + 1) as f64;
    pooled.iter_mut().for_each(|p| *p /= z);
    pooled
}

/// Aggregate-baseline cost: mean-pool raw clip features over the moment,
/// embed the pooled vector, and take its squared distance to the query.
pub fn moment_cost_aggregate(
    query_emb: &[f64],
    video_features: &FeatureMatrix,
    context: &[f64],
    tef: Option<(f64, f64)>,
    moment: &Moment,
    params: &ModelParams,
) -> Result<f64> {
    params.check_tef(tef)?;
    check_dims(query_emb, video_features, params)?;
    if moment.last_clip >= video_features.rows() {
        return Err(Error::ClipOutOfRange {
            video_id: moment.video_id.clone(),
            index: moment.last_clip,
            num_clips: video_features.rows(),
        });
    }
    let encoder = VisualEncoder::new(params, context)?;
    let pooled = pooled_feature(video_features, moment.first_clip, moment.last_clip);
    Ok(squared_distance(&encoder.encode(&pooled, tef), query_emb))
}

/// Aggregate-variant embeddings of the pooled features of each range, one
/// row per range. These are the entries an aggregate index would store.
pub fn embed_pooled_moments(
    input: VideoInput<'_>,
    ranges: &[(usize, usize)],
    params: &ModelParams,
) -> Result<ClipEmbeddings> {
    params.check_tef(None)?;
    if input.features.dim() != params.dims.visual_in {
        return Err(Error::DimMismatch {
            context: "clip features",
            expected: params.dims.visual_in,
            actual: input.features.dim(),
        });
    }
    if let Some(&(i, j)) = ranges
        .iter()
        .find(|&&(i, j)| i > j || j >= input.features.rows())
    {
        return Err(Error::InvalidMoment {
            video_id: input.video.video_id.clone(),
            first: i,
            last: j,
            reason: format!("outside a {}-clip video", input.features.rows()),
        });
    }
    let encoder = VisualEncoder::new(params, input.context)?;
    let embed = params.dims.embed;
    let mut data = Vec::with_capacity(ranges.len() * embed);
    for &(i, j) in ranges {
        data.extend(encoder.encode(&pooled_feature(input.features, i, j), None));
    }
    Ok(ClipEmbeddings::new(
        &input.video.video_id,
        ranges.len(),
        embed,
        data,
    ))
}

fn check_dims(query_emb: &[f64], features: &FeatureMatrix, params: &ModelParams) -> Result<()> {
    if query_emb.len() != params.dims.embed {
        return Err(Error::DimMismatch {
            context: "query embedding",
            expected: params.dims.embed,
            actual: query_emb.len(),
        });
    }
    if features.dim() != params.dims.visual_in {
        return Err(Error::DimMismatch {
            context: "clip features",
            expected: params.dims.visual_in,
            actual: features.dim(),
        });
    }
    Ok(())
}

/// Which cost to evaluate, and whether moment endpoints feed the visual head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreVariant {
    Cal,
    Aggregate,
    CalTef,
    AggregateTef,
}

impl ScoreVariant {
    pub fn uses_tef(self) -> bool {
        matches!(self, ScoreVariant::CalTef | ScoreVariant::AggregateTef)
    }

    pub fn is_aggregate(self) -> bool {
        matches!(self, ScoreVariant::Aggregate | ScoreVariant::AggregateTef)
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreVariant::Cal => "cal",
            ScoreVariant::Aggregate => "aggregate",
            ScoreVariant::CalTef => "cal-tef",
            ScoreVariant::AggregateTef => "aggregate-tef",
        }
    }

    /// The variant matching a model: endpoint inputs follow `params.dims.use_tef`.
    pub fn for_model(aggregate: bool, params: &ModelParams) -> Self {
        match (aggregate, params.dims.use_tef) {
            (false, false) => ScoreVariant::Cal,
            (false, true) => ScoreVariant::CalTef,
            (true, false) => ScoreVariant::Aggregate,
            (true, true) => ScoreVariant::AggregateTef,
        }
    }

    pub(crate) fn check_model(self, params: &ModelParams) -> Result<()> {
        if self.uses_tef() != params.dims.use_tef {
            return Err(Error::Config(format!(
                "variant {} does not match a model with use_tef = {}",
                self.name(),
                params.dims.use_tef
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for ScoreVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cal" => Ok(ScoreVariant::Cal),
            "aggregate" => Ok(ScoreVariant::Aggregate),
            "cal-tef" => Ok(ScoreVariant::CalTef),
            "aggregate-tef" => Ok(ScoreVariant::AggregateTef),
            _ => Err(Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

impl std::fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Work counters: vector-distance evaluations and moments scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub distance_evals: u64,
    pub moments_scored: u64,
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.distance_evals += rhs.distance_evals;
        self.moments_scored += rhs.moments_scored;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMoment {
    pub moment: Moment,
    pub cost: f64,
}

/// Borrowed view of one video's inputs.
#[derive(Debug, Clone, Copy)]
pub struct VideoInput<'a> {
    pub video: &'a VideoMeta,
    pub features: &'a FeatureMatrix,
    pub context: &'a [f64],
}

/// Scores the clip ranges `ranges` of one video. `clip_embeddings` may carry
/// precomputed non-endpoint embeddings for the clip-alignment variant.
pub(crate) fn score_ranges(
    input: VideoInput<'_>,
    ranges: &[(usize, usize)],
    query_emb: &[f64],
    variant: ScoreVariant,
    params: &ModelParams,
    clip_embeddings: Option<&ClipEmbeddings>,
    counters: &mut OpCounters,
) -> Result<Vec<f64>> {
    variant.check_model(params)?;
    check_dims(query_emb, input.features, params)?;
    if ranges.is_empty() {
        return Ok(Vec::new());
    }
    let video = input.video;
    let tef_of = |i: usize, j: usize| {
        let span = video.span_of(i, j);
        (span.start / video.duration, span.end / video.duration)
    };
    counters.moments_scored += ranges.len() as u64;
    let costs = match variant {
        ScoreVariant::Cal => {
            let owned;
            let clips = match clip_embeddings {
                Some(c) => c,
                None => {
                    owned =
                        embed_clips(&video.video_id, input.features, input.context, None, params)?;
                    &owned
                }
            };
            let table = clip_distances(query_emb, clips)?;
            counters.distance_evals += table.len() as u64;
            ranges
                .iter()
                .map(|&(i, j)| table.cost_unchecked(i, j))
                .collect()
        }
        ScoreVariant::CalTef => {
            let encoder = VisualEncoder::new(params, input.context)?;
            ranges
                .iter()
                .map(|&(i, j)| {
                    let tef = Some(tef_of(i, j));
                    let sum: f64 = (i..=j)
                        .map(|k| {
                            squared_distance(
                                &encoder.encode_f32(input.features.row(k), tef),
                                query_emb,
                            )
                        })
                        .sum();
                    counters.distance_evals += (j - i + 1) as u64;
                    sum / (j - i + 1) as f64
                })
                .collect()
        }
        ScoreVariant::Aggregate | ScoreVariant::AggregateTef => {
            let encoder = VisualEncoder::new(params, input.context)?;
            counters.distance_evals += ranges.len() as u64;
            ranges
                .iter()
                .map(|&(i, j)| {
                    let tef = variant.uses_tef().then(|| tef_of(i, j));
                    let pooled = pooled_feature(input.features, i, j);
                    squared_distance(&encoder.encode(&pooled, tef), query_emb)
                })
                .collect()
        }
    };
    Ok(costs)
}

/// Scores every candidate of `video` under `cfg`, in enumeration order.
pub fn score_all_moments(
    input: VideoInput<'_>,
    query_emb: &[f64],
    variant: ScoreVariant,
    cfg: &EnumConfig,
    params: &ModelParams,
) -> Result<(Vec<ScoredMoment>, OpCounters)> {
    let video = input.video;
    if input.features.rows() != video.num_clips {
        return Err(Error::InvalidVideo {
            video_id: video.video_id.clone(),
            reason: "feature rows do not match clip count".into(),
        });
    }
    let ranges = if video.num_clips >= cfg.min_moment_clips {
        enumerate_ranges(video.num_clips, cfg)
    } else {
        Vec::new()
    };
    let mut counters = OpCounters::default();
    let costs = score_ranges(
        input,
        &ranges,
        query_emb,
        variant,
        params,
        None,
        &mut counters,
    )?;
    let scored = ranges
        .into_iter()
        .zip(costs)
        .map(|((i, j), cost)| ScoredMoment {
            moment: Moment {
                video_id: video.video_id.clone(),
                first_clip: i,
                last_clip: j,
                span: video.span_of(i, j),
            },
            cost,
        })
        .collect();
    Ok((scored, counters))
}
