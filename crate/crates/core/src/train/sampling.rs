//! Positive / intra-video negative / inter-video negative triple sampling.

use std::collections::{BTreeMap, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::corpus::{Dataset, MomentRef};
use crate::enumerate::{enumerate_ranges, EnumConfig};
use crate::error::{Error, Result};
use crate::types::temporal_iou;

/// One element of the training objective: a positive and its two negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingTriple {
    /// Index into `Dataset::queries`.
    pub query: usize,
    pub positive: MomentRef,
    pub intra_negative: MomentRef,
    /// Absent when the inter-video term carries zero weight.
    pub inter_negative: Option<MomentRef>,
}

/// A query aligned with a candidate moment of its ground-truth video.
#[derive(Debug, Clone)]
struct AlignedPair {
    query: usize,
    positive: MomentRef,
    intra: Vec<(usize, usize)>,
}

/// Draws indices into a ranked list with probability proportional to
/// `exp(-rate * rank)`.
#[derive(Debug, Clone)]
pub struct RankSampler {
    top: usize,
    weights: Option<WeightedIndex<f64>>,
}

impl RankSampler {
    /// `ranks` are the (1-based) ranks of the eligible items, in list order.
    pub fn new(ranks: &[usize], rate: f64) -> Option<Self> {
        let min_rank = *ranks.iter().min()?;
        let top = ranks.iter().position(|&r| r == min_rank)?;
        if rate.is_infinite() {
            return Some(Self { top, weights: None });
        }
        // shifting by the smallest rank keeps the largest weight at 1
        let w: Vec<f64> = ranks
            .iter()
            .map(|&r| (-rate * (r - min_rank) as f64).exp())
            .collect();
        let weights = WeightedIndex::new(w).ok();
        Some(Self { top, weights })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.weights {
            Some(w) => w.sample(rng),
            None => self.top,
        }
    }
}

/// Where inter-video negatives come from.
#[derive(Debug, Clone)]
pub enum InterSource {
    /// A uniformly random other video, at the positive's temporal location.
    Uniform,
    /// Per query, retrieved moments weighted by rank; queries without a
    /// usable list fall back to [`InterSource::Uniform`].
    Ranked(HashMap<usize, (Vec<MomentRef>, RankSampler)>),
}

impl InterSource {
    /// Builds rank-weighted sources from retrieved lists (keyed by query
    /// index). Moments in the query's ground-truth video whose IoU with any
    /// annotation reaches `exclusion` are dropped before weighting.
    pub fn ranked(
        dataset: &Dataset,
        retrieved: &BTreeMap<usize, Vec<MomentRef>>,
        exclusion: f64,
        rate: f64,
    ) -> Self {
        let mut out = HashMap::new();
        for (&q, list) in retrieved {
            let gt = dataset.queries[q].ground_truth.as_ref();
            let gt_video = gt.and_then(|g| dataset.corpus.ordinal(&g.video_id));
            let mut kept = Vec::new();
            let mut ranks = Vec::new();
            for (pos, m) in list.iter().enumerate() {
                let overlapping = match (gt, gt_video) {
                    (Some(g), Some(v)) if v == m.video => {
                        g.max_iou(&m.span(&dataset.corpus)) >= exclusion
                    }
                    _ => false,
                };
                if !overlapping {
                    kept.push(*m);
                    ranks.push(pos + 1);
                }
            }
            if let Some(sampler) = RankSampler::new(&ranks, rate) {
                out.insert(q, (kept, sampler));
            }
        }
        InterSource::Ranked(out)
    }
}

/// Samples training triples from a dataset's ground-truth-bearing queries.
#[derive(Debug, Clone)]
pub struct TripleSampler<'a> {
    dataset: &'a Dataset,
    pairs: Vec<AlignedPair>,
    ranges: HashMap<usize, Vec<(usize, usize)>>,
    inter: InterSource,
    with_inter: bool,
}

/// Attempts at drawing a positive with a usable intra negative before giving up.
const POSITIVE_RETRIES: usize = 100;

impl<'a> TripleSampler<'a> {
    /// `exclusion`: intra negatives need IoU strictly below it against every
    /// annotation of the query.
    pub fn new(
        dataset: &'a Dataset,
        enum_cfg: &EnumConfig,
        exclusion: f64,
        with_inter: bool,
    ) -> Result<Self> {
        if dataset.corpus.len() < 2 {
            return Err(Error::Sampling("need at least two videos".into()));
        }
        let corpus = &dataset.corpus;
        let mut ranges: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
        for v in corpus.videos() {
            ranges
                .entry(v.num_clips)
                .or_insert_with(|| enumerate_ranges(v.num_clips, enum_cfg));
        }
        let mut pairs = Vec::new();
        for (qi, q) in dataset.queries.iter().enumerate() {
            let Some(gt) = &q.ground_truth else { continue };
            let ordinal = corpus.require_ordinal(&gt.video_id)?;
            let video = corpus.video(ordinal);
            let candidates = &ranges[&video.num_clips];
            let mut positives: Vec<(usize, usize)> = Vec::new();
            for a in &gt.annotations {
                // snap each annotation to its best-overlapping candidate
                let best = candidates
                    .iter()
                    .map(|&(i, j)| ((i, j), temporal_iou(a, &video.span_of(i, j))))
                    .fold(None::<((usize, usize), f64)>, |acc, cur| match acc {
                        Some(b) if b.1 >= cur.1 => Some(b),
                        _ => Some(cur),
                    });
                if let Some((range, iou)) = best {
                    if iou > 0.0 && !positives.contains(&range) {
                        positives.push(range);
                    }
                }
            }
            let intra: Vec<(usize, usize)> = candidates
                .iter()
                .copied()
                .filter(|&(i, j)| gt.max_iou(&video.span_of(i, j)) < exclusion)
                .collect();
            for (i, j) in positives {
                pairs.push(AlignedPair {
                    query: qi,
                    positive: MomentRef::new(ordinal, i, j),
                    intra: intra.clone(),
                });
            }
        }
        if pairs.is_empty() {
            return Err(Error::Sampling("no aligned query/moment pairs".into()));
        }
        Ok(Self {
            dataset,
            pairs,
            ranges,
            inter: InterSource::Uniform,
            with_inter,
        })
    }

    pub fn with_inter_source(mut self, inter: InterSource) -> Self {
        self.inter = inter;
        self
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Positive moments in pair order, as `(query index, moment)`.
    pub fn positives(&self) -> impl Iterator<Item = (usize, MomentRef)> + '_ {
        self.pairs.iter().map(|p| (p.query, p.positive))
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        size: usize,
    ) -> Result<Vec<TrainingTriple>> {
        (0..size).map(|_| self.sample_triple(rng)).collect()
    }

    fn sample_triple<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrainingTriple> {
        for _ in 0..POSITIVE_RETRIES {
            let pair = &self.pairs[rng.random_range(0..self.pairs.len())];
            if pair.intra.is_empty() {
                continue;
            }
            let (i, j) = pair.intra[rng.random_range(0..pair.intra.len())];
            let intra_negative = MomentRef::new(pair.positive.video, i, j);
            let inter_negative = if self.with_inter {
                Some(self.sample_inter(rng, pair))
            } else {
                None
            };
            return Ok(TrainingTriple {
                query: pair.query,
                positive: pair.positive,
                intra_negative,
                inter_negative,
            });
        }
        Err(Error::Sampling(format!(
            "no positive with a valid intra-video negative after {POSITIVE_RETRIES} draws"
        )))
    }

    fn sample_inter<R: Rng + ?Sized>(&self, rng: &mut R, pair: &AlignedPair) -> MomentRef {
        if let InterSource::Ranked(lists) = &self.inter {
            if let Some((moments, sampler)) = lists.get(&pair.query) {
                return moments[sampler.sample(rng)];
            }
        }
        self.uniform_inter(rng, pair.positive)
    }

    fn uniform_inter<R: Rng + ?Sized>(&self, rng: &mut R, positive: MomentRef) -> MomentRef {
        let corpus = &self.dataset.corpus;
        let mut other = rng.random_range(0..corpus.len() - 1);
        if other >= positive.video {
            other += 1;
        }
        let video = corpus.video(other);
        if positive.last < video.num_clips {
            return MomentRef::new(other, positive.first, positive.last);
        }
        // nearest normalized endpoints among the other video's candidates
        let src = corpus.video(positive.video);
        let span = src.span_of(positive.first, positive.last);
        let (s, e) = (span.start / src.duration, span.end / src.duration);
        let (i, j) = self.ranges[&video.num_clips]
            .iter()
            .copied()
            .min_by(|a, b| {
                let d = |&(i, j): &(usize, usize)| {
                    let sp = video.span_of(i, j);
                    (sp.start / video.duration - s).abs() + (sp.end / video.duration - e).abs()
                };
                d(a).total_cmp(&d(b))
            })
            .unwrap_or((0, video.num_clips - 1));
        MomentRef::new(other, i, j)
    }
}
