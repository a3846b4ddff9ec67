//! Query answering over a corpus: exhaustive scoring, two-stage retrieval
//! (clip search, expansion to moments, re-ranking), and reference baselines.
//!
//! Rankings are sorted by ascending cost; ties break by video ordinal, then
//! first and last clip. Non-minimum suppression runs per video before videos
//! are merged.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::cost::{score_ranges, OpCounters, ScoreVariant, ScoredMoment, VideoInput};
use crate::enumerate::{enumerate_ranges, EnumConfig, Preset};
use crate::error::{Error, Result};
use crate::index::ClipIndex;
use crate::model::{embed_clips, embed_query, ClipEmbeddings, ModelParams};
use crate::types::{temporal_iou, GroundTruth, Query};

/// How stage one narrows the corpus before re-ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageOne {
    /// Nearest clips from the index, expanded to the moments containing them.
    #[default]
    Clips,
    /// The `budget` lowest stage-one-cost moments over the whole corpus.
    Moments,
}

impl std::str::FromStr for StageOne {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clips" => Ok(StageOne::Clips),
            "moments" => Ok(StageOne::Moments),
            _ => Err(Error::Config(format!("unknown stage-one mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub enum_cfg: EnumConfig,
    pub variant: ScoreVariant,
    /// Stage-two cost; defaults to `variant`.
    pub rerank_variant: Option<ScoreVariant>,
    /// Moments kept from stage one in moment-budget mode.
    pub budget: usize,
    /// Clips retrieved from the index in clip mode.
    pub clip_budget: usize,
    pub nms_iou: f64,
    pub top_k: usize,
    pub nprobe: usize,
    pub stage_one: StageOne,
    /// Also expand to moments within one clip of a retrieved clip.
    pub dilate: bool,
}

impl RetrievalConfig {
    pub fn for_preset(preset: Preset) -> Self {
        Self {
            enum_cfg: preset.enum_config(),
            variant: ScoreVariant::Cal,
            rerank_variant: None,
            budget: 200,
            clip_budget: 200,
            nms_iou: preset.nms_iou(),
            top_k: 100,
            nprobe: 8,
            stage_one: StageOne::Clips,
            dilate: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.enum_cfg.validate()?;
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::Config(format!(
                "NMS threshold {} outside (0, 1]",
                self.nms_iou
            )));
        }
        if self.top_k == 0 || self.clip_budget == 0 || self.nprobe == 0 {
            return Err(Error::Config(
                "top_k, clip_budget and nprobe must be positive".into(),
            ));
        }
        if self.budget < self.top_k {
            return Err(Error::Config(format!(
                "moment budget {} is below top_k {}",
                self.budget, self.top_k
            )));
        }
        Ok(())
    }

    pub fn stage_two_variant(&self) -> ScoreVariant {
        self.rerank_variant.unwrap_or(self.variant)
    }
}

/// Distance evaluations and moments scored in each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounters {
    pub stage_one: OpCounters,
    pub stage_two: OpCounters,
    /// Query-to-centroid distances of an inverted-file index.
    pub centroid_distances: u64,
    pub partitions_probed: u64,
}

impl StageCounters {
    /// Clip or moment distance evaluations over both stages.
    pub fn distance_evals(&self) -> u64 {
        self.stage_one.distance_evals + self.stage_two.distance_evals
    }
}

impl std::ops::AddAssign for StageCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.stage_one += rhs.stage_one;
        self.stage_two += rhs.stage_two;
        self.centroid_distances += rhs.centroid_distances;
        self.partitions_probed += rhs.partitions_probed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub ranked: Vec<ScoredMoment>,
    #[serde(default)]
    pub stage_counters: StageCounters,
    /// Size of the candidate set that was ranked.
    pub universe: usize,
    /// True when candidates were dropped by `top_k` or by a stage-one cut, so
    /// absent moments carry no rank information.
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    cost: f64,
    tie: u64,
    video: usize,
    first: usize,
    last: usize,
}

fn cand_order(a: &Cand, b: &Cand) -> Ordering {
    a.cost
        .total_cmp(&b.cost)
        .then(a.tie.cmp(&b.tie))
        .then(a.video.cmp(&b.video))
        .then(a.first.cmp(&b.first))
        .then(a.last.cmp(&b.last))
}

/// Greedy suppression within one video, candidates in any order.
fn nms_video(corpus: &Corpus, mut cands: Vec<Cand>, threshold: f64) -> Vec<Cand> {
    cands.sort_unstable_by(cand_order);
    if threshold >= 1.0 {
        return cands;
    }
    let mut kept: Vec<Cand> = Vec::with_capacity(cands.len());
    for c in cands {
        let video = corpus.video(c.video);
        let span = video.span_of(c.first, c.last);
        let suppressed = kept.iter().any(|k| {
            k.video == c.video && temporal_iou(&video.span_of(k.first, k.last), &span) > threshold
        });
        if !suppressed {
            kept.push(c);
        }
    }
    kept
}

/// Non-minimum suppression: by ascending cost, drop a moment whose IoU with an
/// already kept moment of the same video exceeds `iou_threshold`.
pub fn nms(scored: &[ScoredMoment], iou_threshold: f64) -> Vec<ScoredMoment> {
    let mut order: Vec<&ScoredMoment> = scored.iter().collect();
    order.sort_by(|a, b| {
        a.cost
            .total_cmp(&b.cost)
            .then(a.moment.video_id.cmp(&b.moment.video_id))
            .then(a.moment.first_clip.cmp(&b.moment.first_clip))
            .then(a.moment.last_clip.cmp(&b.moment.last_clip))
    });
    let mut kept: Vec<ScoredMoment> = Vec::with_capacity(order.len());
    for s in order {
        let suppressed = kept.iter().any(|k| {
            k.moment.video_id == s.moment.video_id
                && temporal_iou(&k.moment.span, &s.moment.span) > iou_threshold
        });
        if !suppressed {
            kept.push(s.clone());
        }
    }
    kept
}

/// Clip embeddings of every video under one endpoint-free model, reusable
/// across queries.
pub struct ClipCache<'a> {
    params: &'a ModelParams,
    clips: Vec<ClipEmbeddings>,
}

impl<'a> ClipCache<'a> {
    pub fn build(corpus: &Corpus, params: &'a ModelParams) -> Result<Self> {
        if params.dims.use_tef {
            return Err(Error::Config(
                "clip embeddings with endpoint inputs cannot be cached".into(),
            ));
        }
        let clips = (0..corpus.len())
            .into_par_iter()
            .map(|v| {
                let meta = corpus.video(v);
                embed_clips(
                    &meta.video_id,
                    corpus.features(v),
                    corpus.context(v),
                    None,
                    params,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { params, clips })
    }

    fn for_params(&self, params: &ModelParams, v: usize) -> Option<&ClipEmbeddings> {
        std::ptr::eq(self.params, params).then(|| &self.clips[v])
    }
}

fn video_input(corpus: &Corpus, v: usize) -> VideoInput<'_> {
    VideoInput {
        video: corpus.video(v),
        features: corpus.features(v),
        context: corpus.context(v),
    }
}

fn all_ranges(corpus: &Corpus, v: usize, cfg: &EnumConfig) -> Vec<(usize, usize)> {
    let n = corpus.video(v).num_clips;
    if n < cfg.min_moment_clips {
        Vec::new()
    } else {
        enumerate_ranges(n, cfg)
    }
}

/// Total number of candidates over the corpus.
pub fn universe_size(corpus: &Corpus, cfg: &EnumConfig) -> usize {
    let mut memo: HashMap<usize, usize> = HashMap::new();
    corpus
        .videos()
        .iter()
        .map(|v| {
            let n = v.num_clips;
            *memo.entry(n).or_insert_with(|| {
                if n < cfg.min_moment_clips {
                    0
                } else {
                    enumerate_ranges(n, cfg).len()
                }
            })
        })
        .sum()
}

struct Scoring<'a> {
    corpus: &'a Corpus,
    params: &'a ModelParams,
    variant: ScoreVariant,
    query_emb: Vec<f64>,
    cache: Option<&'a ClipCache<'a>>,
}

impl<'a> Scoring<'a> {
    fn new(
        corpus: &'a Corpus,
        query: &Query,
        params: &'a ModelParams,
        variant: ScoreVariant,
        cache: Option<&'a ClipCache<'a>>,
    ) -> Result<Self> {
        variant.check_model(params)?;
        if params.dims.visual_in != corpus.feature_dim() {
            return Err(Error::DimMismatch {
                context: "clip features",
                expected: params.dims.visual_in,
                actual: corpus.feature_dim(),
            });
        }
        Ok(Self {
            corpus,
            params,
            variant,
            query_emb: embed_query(&query.word_vectors, params)?,
            cache,
        })
    }

    fn score(&self, v: usize, ranges: &[(usize, usize)]) -> Result<(Vec<Cand>, OpCounters)> {
        let mut counters = OpCounters::default();
        let clips = self.cache.and_then(|c| c.for_params(self.params, v));
        let costs = score_ranges(
            video_input(self.corpus, v),
            ranges,
            &self.query_emb,
            self.variant,
            self.params,
            clips,
            &mut counters,
        )?;
        let cands = ranges
            .iter()
            .zip(costs)
            .map(|(&(first, last), cost)| Cand {
                cost,
                tie: 0,
                video: v,
                first,
                last,
            })
            .collect();
        Ok((cands, counters))
    }

    /// Scores the given ranges per video in parallel, with per-video NMS.
    fn score_videos(
        &self,
        work: Vec<(usize, Vec<(usize, usize)>)>,
        nms_iou: Option<f64>,
    ) -> Result<(Vec<Cand>, OpCounters)> {
        let per_video: Vec<(Vec<Cand>, OpCounters)> = work
            .into_par_iter()
            .map(|(v, ranges)| {
                let (cands, counters) = self.score(v, &ranges)?;
                let cands = match nms_iou {
                    Some(t) => nms_video(self.corpus, cands, t),
                    None => cands,
                };
                Ok((cands, counters))
            })
            .collect::<Result<_>>()?;
        let mut total = OpCounters::default();
        let mut all = Vec::new();
        for (cands, counters) in per_video {
            total += counters;
            all.extend(cands);
        }
        Ok((all, total))
    }
}

fn top_sorted(mut cands: Vec<Cand>, k: usize) -> Vec<Cand> {
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, cand_order);
        cands.truncate(k);
    }
    cands.sort_unstable_by(cand_order);
    cands
}

fn finish(
    corpus: &Corpus,
    query_id: &str,
    cands: Vec<Cand>,
    top_k: usize,
    universe: usize,
    restricted: bool,
    stage_counters: StageCounters,
) -> RankedResult {
    let truncated = restricted || cands.len() > top_k;
    let ranked = top_sorted(cands, top_k)
        .into_iter()
        .map(|c| {
            let video = corpus.video(c.video);
            ScoredMoment {
                moment: crate::types::Moment {
                    video_id: video.video_id.clone(),
                    first_clip: c.first,
                    last_clip: c.last,
                    span: video.span_of(c.first, c.last),
                },
                cost: c.cost,
            }
        })
        .collect();
    RankedResult {
        query_id: query_id.to_string(),
        ranked,
        stage_counters,
        universe,
        truncated,
        diagnostic: None,
    }
}

/// Scores every candidate of every video with `cfg.variant`.
pub fn exhaustive_search(
    corpus: &Corpus,
    query: &Query,
    params: &ModelParams,
    cache: Option<&ClipCache<'_>>,
    cfg: &RetrievalConfig,
) -> Result<RankedResult> {
    cfg.validate()?;
    let scoring = Scoring::new(corpus, query, params, cfg.variant, cache)?;
    let work: Vec<_> = (0..corpus.len())
        .map(|v| (v, all_ranges(corpus, v, &cfg.enum_cfg)))
        .collect();
    let universe = work.iter().map(|(_, r)| r.len()).sum();
    let (cands, counters) = scoring.score_videos(work, Some(cfg.nms_iou))?;
    Ok(finish(
        corpus,
        &query.query_id,
        cands,
        cfg.top_k,
        universe,
        false,
        StageCounters {
            stage_one: counters,
            ..Default::default()
        },
    ))
}

/// Moments of one video that contain (or, with `dilate`, touch) a retrieved clip.
pub fn expand_clips(
    num_clips: usize,
    clips: &[usize],
    cfg: &EnumConfig,
    dilate: bool,
) -> Vec<(usize, usize)> {
    if num_clips < cfg.min_moment_clips {
        return Vec::new();
    }
    let pad = usize::from(dilate);
    enumerate_ranges(num_clips, cfg)
        .into_iter()
        .filter(|&(i, j)| clips.iter().any(|&k| i <= k + pad && k <= j + pad))
        .collect()
}

/// Stage one narrows the corpus, stage two re-ranks the survivors with the
/// full cost (`rerank_params`, defaulting to `stage1_params`).
pub fn two_stage_search(
    corpus: &Corpus,
    index: Option<&ClipIndex>,
    query: &Query,
    stage1_params: &ModelParams,
    rerank_params: Option<&ModelParams>,
    cache: Option<&ClipCache<'_>>,
    cfg: &RetrievalConfig,
) -> Result<RankedResult> {
    cfg.validate()?;
    if cfg.variant.uses_tef() {
        return Err(Error::Config(format!(
            "stage one needs a moment-independent cost, got {}",
            cfg.variant
        )));
    }
    let rerank_params = rerank_params.unwrap_or(stage1_params);
    let universe = universe_size(corpus, &cfg.enum_cfg);
    let stage1 = Scoring::new(corpus, query, stage1_params, cfg.variant, cache)?;
    let mut counters = StageCounters::default();

    let work: Vec<(usize, Vec<(usize, usize)>)> = match cfg.stage_one {
        StageOne::Clips => {
            let index = index.ok_or_else(|| {
                Error::Config("clip-mode two-stage search needs a clip index".into())
            })?;
            if index.dim() != stage1_params.dims.embed {
                return Err(Error::DimMismatch {
                    context: "index embedding",
                    expected: stage1_params.dims.embed,
                    actual: index.dim(),
                });
            }
            let q: Vec<f32> = stage1.query_emb.iter().map(|&x| x as f32).collect();
            let (hits, stats) = index.search_counted(&q, cfg.clip_budget, cfg.nprobe);
            counters.stage_one.distance_evals = stats.distances;
            counters.centroid_distances = stats.centroid_distances;
            counters.partitions_probed = stats.partitions_probed;
            let mut touched: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for h in &hits {
                let (v, k) = (h.key.video as usize, h.key.clip as usize);
                if v >= corpus.len() || k >= corpus.video(v).num_clips {
                    return Err(Error::Config(format!(
                        "index entry (video #{v}, clip {k}) is not in the corpus"
                    )));
                }
                touched.entry(v).or_default().push(k);
            }
            touched
                .into_iter()
                .map(|(v, clips)| {
                    let n = corpus.video(v).num_clips;
                    (v, expand_clips(n, &clips, &cfg.enum_cfg, cfg.dilate))
                })
                .filter(|(_, r)| !r.is_empty())
                .collect()
        }
        StageOne::Moments => {
            let work = (0..corpus.len())
                .map(|v| (v, all_ranges(corpus, v, &cfg.enum_cfg)))
                .collect();
            let (cands, c1) = stage1.score_videos(work, None)?;
            counters.stage_one = c1;
            let mut by_video: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
            for c in top_sorted(cands, cfg.budget) {
                by_video.entry(c.video).or_default().push((c.first, c.last));
            }
            by_video
                .into_iter()
                .map(|(v, mut r)| {
                    r.sort_unstable();
                    (v, r)
                })
                .collect()
        }
    };

    let candidates: usize = work.iter().map(|(_, r)| r.len()).sum();
    if candidates == 0 {
        let mut result = finish(
            corpus,
            &query.query_id,
            Vec::new(),
            cfg.top_k,
            0,
            true,
            counters,
        );
        result.diagnostic = Some("stage one returned no candidates".into());
        return Ok(result);
    }
    let stage2 =
        if std::ptr::eq(rerank_params, stage1_params) && cfg.stage_two_variant() == cfg.variant {
            stage1
        } else {
            Scoring::new(corpus, query, rerank_params, cfg.stage_two_variant(), cache)?
        };
    let (cands, c2) = stage2.score_videos(work, Some(cfg.nms_iou))?;
    counters.stage_two = c2;
    Ok(finish(
        corpus,
        &query.query_id,
        cands,
        cfg.top_k,
        candidates,
        candidates < universe,
        counters,
    ))
}

/// Ranks only the candidates of the query's ground-truth video.
pub fn single_video_search(
    corpus: &Corpus,
    query: &Query,
    params: &ModelParams,
    cfg: &RetrievalConfig,
) -> Result<RankedResult> {
    cfg.validate()?;
    let gt = query
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::MissingGroundTruth(query.query_id.clone()))?;
    let v = corpus.require_ordinal(&gt.video_id)?;
    let scoring = Scoring::new(corpus, query, params, cfg.variant, None)?;
    let ranges = all_ranges(corpus, v, &cfg.enum_cfg);
    let universe = ranges.len();
    let (cands, counters) = scoring.score_videos(vec![(v, ranges)], Some(cfg.nms_iou))?;
    Ok(finish(
        corpus,
        &query.query_id,
        cands,
        cfg.top_k,
        universe,
        false,
        StageCounters {
            stage_one: counters,
            ..Default::default()
        },
    ))
}

/// Histogram of ground-truth endpoints normalized by video duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentPrior {
    bins: usize,
    probs: Vec<f64>,
}

impl MomentPrior {
    /// Fits a `bins` x `bins` histogram over (start / T, end / T) of every annotation.
    pub fn fit<'g>(
        corpus: &Corpus,
        ground_truths: impl IntoIterator<Item = &'g GroundTruth>,
        bins: usize,
    ) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("prior needs at least one bin".into()));
        }
        let mut counts = vec![0.0; bins * bins];
        let mut total = 0.0;
        for gt in ground_truths {
            let v = corpus.require_ordinal(&gt.video_id)?;
            let duration = corpus.video(v).duration;
            for a in &gt.annotations {
                counts[Self::bin(bins, a.start / duration) * bins
                    + Self::bin(bins, a.end / duration)] += 1.0;
                total += 1.0;
            }
        }
        if total == 0.0 {
            return Err(Error::Empty("moment prior ground truth"));
        }
        counts.iter_mut().for_each(|c| *c /= total);
        Ok(Self {
            bins,
            probs: counts,
        })
    }

    fn bin(bins: usize, x: f64) -> usize {
        ((x.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn probability(&self, start: f64, end: f64) -> f64 {
        self.probs[Self::bin(self.bins, start) * self.bins + Self::bin(self.bins, end)]
    }
}

/// Reference rankings that need no trained alignment model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Uniformly random permutation of all candidates.
    Chance,
    /// Candidates by endpoint histogram probability, random cross-video ties.
    MomentPrior,
    /// Exhaustive search with a model that sees only the endpoints.
    TefOnly,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chance" => Ok(BaselineKind::Chance),
            "moment-prior" | "prior" => Ok(BaselineKind::MomentPrior),
            "tef-only" => Ok(BaselineKind::TefOnly),
            _ => Err(Error::Config(format!("unknown baseline {s:?}"))),
        }
    }
}

/// Ranks `query` with a baseline. `seed` drives the chance permutation and the
/// prior's tie-breaking.
pub fn baseline_scores(
    corpus: &Corpus,
    query: &Query,
    kind: BaselineKind,
    prior: Option<&MomentPrior>,
    params: Option<&ModelParams>,
    cfg: &RetrievalConfig,
    seed: u64,
) -> Result<RankedResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enumerate_all = || -> Vec<(usize, usize, usize)> {
        (0..corpus.len())
            .flat_map(|v| {
                all_ranges(corpus, v, &cfg.enum_cfg)
                    .into_iter()
                    .map(move |(i, j)| (v, i, j))
            })
            .collect()
    };
    match kind {
        BaselineKind::Chance => {
            let mut all = enumerate_all();
            all.shuffle(&mut rng);
            let universe = all.len();
            let cands = all
                .into_iter()
                .enumerate()
                .map(|(pos, (video, first, last))| Cand {
                    cost: pos as f64,
                    tie: 0,
                    video,
                    first,
                    last,
                })
                .collect();
            Ok(finish(
                corpus,
                &query.query_id,
                cands,
                cfg.top_k,
                universe,
                false,
                StageCounters::default(),
            ))
        }
        BaselineKind::MomentPrior => {
            let prior = prior.ok_or_else(|| {
                Error::Config("the moment-prior baseline needs a fitted prior".into())
            })?;
            let all = enumerate_all();
            let universe = all.len();
            let mut by_video: Vec<Vec<Cand>> = vec![Vec::new(); corpus.len()];
            for (video, first, last) in all {
                let meta = corpus.video(video);
                let span = meta.span_of(first, last);
                let p = prior.probability(span.start / meta.duration, span.end / meta.duration);
                by_video[video].push(Cand {
                    cost: 1.0 - p,
                    tie: rng.random(),
                    video,
                    first,
                    last,
                });
            }
            let cands = by_video
                .into_iter()
                .flat_map(|c| nms_video(corpus, c, cfg.nms_iou))
                .collect();
            Ok(finish(
                corpus,
                &query.query_id,
                cands,
                cfg.top_k,
                universe,
                false,
                StageCounters::default(),
            ))
        }
        BaselineKind::TefOnly => {
            let params = params.ok_or_else(|| {
                Error::Config("the endpoint-only baseline needs model parameters".into())
            })?;
            if !params.dims.tef_only {
                return Err(Error::Config(
                    "the endpoint-only baseline needs a model trained with visual inputs masked"
                        .into(),
                ));
            }
            let mut cfg = cfg.clone();
            cfg.variant = ScoreVariant::for_model(cfg.variant.is_aggregate(), params);
            exhaustive_search(corpus, query, params, None, &cfg)
        }
    }
}
