//! Retrieval metrics: recall at K over IoU thresholds, median rank, the
//! enumeration oracle, and the consensus rank / mIoU over 3-subsets of
//! annotations.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::corpus::Corpus;
use crate::cost::ScoredMoment;
use crate::enumerate::{enumerate_ranges, EnumConfig};
use crate::error::{Error, Result};
use crate::retrieval::RankedResult;
use crate::types::{temporal_iou, GroundTruth, TemporalSpan};

/// Whether `span` in `video_id` overlaps at least `min_judgments` annotations
/// with IoU of at least `iou_thr`.
pub fn is_correct(
    video_id: &str,
    span: &TemporalSpan,
    gt: &GroundTruth,
    iou_thr: f64,
    min_judgments: usize,
) -> bool {
    video_id == gt.video_id
        && gt
            .annotations
            .iter()
            .filter(|a| temporal_iou(a, span) >= iou_thr)
            .count()
            >= min_judgments
}

/// 1-based rank of the first correct moment.
pub fn first_correct_rank(
    ranked: &[ScoredMoment],
    gt: &GroundTruth,
    iou_thr: f64,
    min_judgments: usize,
) -> Option<usize> {
    ranked
        .iter()
        .position(|s| {
            is_correct(
                &s.moment.video_id,
                &s.moment.span,
                gt,
                iou_thr,
                min_judgments,
            )
        })
        .map(|p| p + 1)
}

pub fn query_hit(
    ranked: &RankedResult,
    gt: &GroundTruth,
    k: usize,
    iou_thr: f64,
    min_judgments: usize,
) -> bool {
    first_correct_rank(&ranked.ranked, gt, iou_thr, min_judgments).is_some_and(|r| r <= k)
}

fn lookup<'g>(gts: &'g HashMap<String, GroundTruth>, query_id: &str) -> Result<&'g GroundTruth> {
    gts.get(query_id)
        .ok_or_else(|| Error::MissingGroundTruth(query_id.to_string()))
}

fn check_judgments(min_judgments: usize) -> Result<()> {
    if min_judgments == 0 {
        return Err(Error::Eval("min_judgments must be at least 1".into()));
    }
    Ok(())
}

/// Mean of [`query_hit`] over `results`.
pub fn recall_at_k(
    results: &[RankedResult],
    gts: &HashMap<String, GroundTruth>,
    k: usize,
    iou_thr: f64,
    min_judgments: usize,
) -> Result<f64> {
    check_judgments(min_judgments)?;
    if results.is_empty() {
        return Err(Error::Empty("results"));
    }
    let mut hits = 0usize;
    for r in results {
        hits += usize::from(query_hit(
            r,
            lookup(gts, &r.query_id)?,
            k,
            iou_thr,
            min_judgments,
        ));
    }
    Ok(hits as f64 / results.len() as f64)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Median over queries of the first correct rank; a query with no correct
/// moment counts as `universe + 1`. Requires untruncated rankings.
pub fn median_rank(
    results: &[RankedResult],
    gts: &HashMap<String, GroundTruth>,
    iou_thr: f64,
    min_judgments: usize,
) -> Result<f64> {
    check_judgments(min_judgments)?;
    if results.is_empty() {
        return Err(Error::Empty("results"));
    }
    let mut ranks = Vec::with_capacity(results.len());
    for r in results {
        if r.truncated {
            return Err(Error::Eval(format!(
                "median rank needs a full ranking, but query {} was truncated",
                r.query_id
            )));
        }
        let gt = lookup(gts, &r.query_id)?;
        let rank =
            first_correct_rank(&r.ranked, gt, iou_thr, min_judgments).unwrap_or(r.universe + 1);
        ranks.push(rank as f64);
    }
    Ok(median(ranks))
}

/// Fraction of ground truths for which some enumerated candidate of the
/// ground-truth video is correct.
pub fn oracle_recall<'g>(
    corpus: &Corpus,
    gts: impl IntoIterator<Item = &'g GroundTruth>,
    cfg: &EnumConfig,
    iou_thr: f64,
    min_judgments: usize,
) -> Result<f64> {
    check_judgments(min_judgments)?;
    let mut memo: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    let (mut hits, mut total) = (0usize, 0usize);
    for gt in gts {
        let v = corpus.require_ordinal(&gt.video_id)?;
        let video = corpus.video(v);
        let ranges = memo.entry(video.num_clips).or_insert_with(|| {
            if video.num_clips < cfg.min_moment_clips {
                Vec::new()
            } else {
                enumerate_ranges(video.num_clips, cfg)
            }
        });
        let hit = ranges.iter().any(|&(i, j)| {
            is_correct(
                &gt.video_id,
                &video.span_of(i, j),
                gt,
                iou_thr,
                min_judgments,
            )
        });
        hits += usize::from(hit);
        total += 1;
    }
    if total == 0 {
        return Err(Error::Empty("ground truth"));
    }
    Ok(hits as f64 / total as f64)
}

fn triads(n: usize) -> impl Iterator<Item = [usize; 3]> {
    (0..n).flat_map(move |a| (a + 1..n).flat_map(move |b| (b + 1..n).map(move |c| [a, b, c])))
}

fn check_annotations(annotations: &[TemporalSpan]) -> Result<()> {
    if annotations.len() < 3 {
        return Err(Error::Eval(format!(
            "consensus metrics need at least 3 annotations, got {}",
            annotations.len()
        )));
    }
    Ok(())
}

/// Spans are matched exactly (IoU of 1 up to rounding).
fn exact_rank(predictions: &[TemporalSpan], a: &TemporalSpan) -> usize {
    predictions
        .iter()
        .position(|p| temporal_iou(p, a) >= 1.0 - 1e-9)
        .map_or(predictions.len() + 1, |p| p + 1)
}

/// Minimum over 3-subsets of annotations of the mean rank at which each
/// annotation is predicted exactly. Unmatched annotations rank last + 1.
pub fn consensus_rank(predictions: &[TemporalSpan], annotations: &[TemporalSpan]) -> Result<f64> {
    check_annotations(annotations)?;
    let ranks: Vec<usize> = annotations
        .iter()
        .map(|a| exact_rank(predictions, a))
        .collect();
    Ok(triads(ranks.len())
        .map(|t| t.iter().map(|&i| ranks[i] as f64).sum::<f64>() / 3.0)
        .fold(f64::INFINITY, f64::min))
}

/// Maximum over 3-subsets of annotations of the mean IoU with `top1`.
pub fn consensus_miou(top1: &TemporalSpan, annotations: &[TemporalSpan]) -> Result<f64> {
    check_annotations(annotations)?;
    let ious: Vec<f64> = annotations.iter().map(|a| temporal_iou(top1, a)).collect();
    Ok(triads(ious.len())
        .map(|t| t.iter().map(|&i| ious[i]).sum::<f64>() / 3.0)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Which retrieval universe a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Corpus,
    SingleVideo,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Corpus => "corpus",
            EvalMode::SingleVideo => "single-video",
        }
    }

    /// Default cut-offs: 1/10/100 over the corpus, 1/5 within one video.
    pub fn default_ks(self) -> Vec<usize> {
        match self {
            EvalMode::Corpus => vec![1, 10, 100],
            EvalMode::SingleVideo => vec![1, 5],
        }
    }
}

/// Metrics over a set of queries, printable as `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub queries: usize,
    pub min_judgments: usize,
    pub ks: Vec<usize>,
    pub ious: Vec<f64>,
    /// `recall[i][j]`: recall at `ks[j]` for `ious[i]`.
    pub recall: Vec<Vec<f64>>,
    /// Per IoU, when every ranking is complete.
    pub median_rank: Option<Vec<f64>>,
    pub oracle: Option<Vec<f64>>,
    pub consensus_rank: Option<f64>,
    pub consensus_miou: Option<f64>,
    /// Free-form echo of the run configuration (seed, preset, ...).
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub mode: EvalMode,
    pub ks: Vec<usize>,
    pub ious: Vec<f64>,
    pub min_judgments: usize,
}

impl EvalSettings {
    pub fn new(mode: EvalMode, min_judgments: usize) -> Self {
        Self {
            mode,
            ks: mode.default_ks(),
            ious: vec![0.5, 0.7],
            min_judgments,
        }
    }
}

/// Computes recall for every (IoU, K) pair, median rank when all rankings
/// are complete, and consensus metrics when every query has 3+ annotations.
pub fn evaluate(
    results: &[RankedResult],
    gts: &HashMap<String, GroundTruth>,
    settings: &EvalSettings,
) -> Result<MetricsReport> {
    let mut recall = Vec::with_capacity(settings.ious.len());
    for &iou in &settings.ious {
        let row = settings
            .ks
            .iter()
            .map(|&k| recall_at_k(results, gts, k, iou, settings.min_judgments))
            .collect::<Result<Vec<_>>>()?;
        recall.push(row);
    }
    let median_rank = if results.iter().any(|r| r.truncated) {
        None
    } else {
        Some(
            settings
                .ious
                .iter()
                .map(|&iou| median_rank(results, gts, iou, settings.min_judgments))
                .collect::<Result<Vec<_>>>()?,
        )
    };
    let consensus = results
        .iter()
        .map(|r| {
            let gt = lookup(gts, &r.query_id)?;
            if gt.annotations.len() < 3 || r.ranked.is_empty() {
                return Ok(None);
            }
            let own: Vec<TemporalSpan> = r
                .ranked
                .iter()
                .filter(|s| s.moment.video_id == gt.video_id)
                .map(|s| s.moment.span)
                .collect();
            let rank = consensus_rank(&own, &gt.annotations)?;
            let miou = match own.first() {
                Some(top) if r.ranked[0].moment.video_id == gt.video_id => {
                    consensus_miou(top, &gt.annotations)?
                }
                _ => 0.0,
            };
            Ok(Some((rank, miou)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (consensus_rank, consensus_miou) = if consensus.iter().all(Option::is_some) {
        let n = consensus.len() as f64;
        let (r, m) = consensus
            .iter()
            .flatten()
            .fold((0.0, 0.0), |(a, b), (r, m)| (a + r, b + m));
        (Some(r / n), Some(m / n))
    } else {
        (None, None)
    };
    let report = MetricsReport {
        mode: settings.mode,
        queries: results.len(),
        min_judgments: settings.min_judgments,
        ks: settings.ks.clone(),
        ious: settings.ious.clone(),
        recall,
        median_rank,
        oracle: None,
        consensus_rank,
        consensus_miou,
        config: BTreeMap::new(),
    };
    report.check_monotone()?;
    Ok(report)
}

/// Recall at K in {1, 5} and IoU in {0.5, 0.7} for rankings restricted to
/// each query's ground-truth video.
pub fn single_video_eval(
    results: &[RankedResult],
    gts: &HashMap<String, GroundTruth>,
    min_judgments: usize,
) -> Result<MetricsReport> {
    for r in results {
        let gt = lookup(gts, &r.query_id)?;
        if let Some(other) = r.ranked.iter().find(|s| s.moment.video_id != gt.video_id) {
            return Err(Error::Eval(format!(
                "query {} ranks a moment of {} outside its own video",
                r.query_id, other.moment.video_id
            )));
        }
    }
    evaluate(
        results,
        gts,
        &EvalSettings::new(EvalMode::SingleVideo, min_judgments),
    )
}

fn iou_key(iou: f64) -> String {
    format!("iou{iou:.2}")
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize, iou: f64) -> Option<f64> {
        let i = self.ious.iter().position(|&x| x == iou)?;
        let j = self.ks.iter().position(|&x| x == k)?;
        Some(self.recall[i][j])
    }

    /// Recall must not fall as K grows, nor rise as the IoU threshold grows.
    pub fn check_monotone(&self) -> Result<()> {
        let mut iou_order: Vec<usize> = (0..self.ious.len()).collect();
        iou_order.sort_by(|&a, &b| self.ious[a].total_cmp(&self.ious[b]));
        let mut k_order: Vec<usize> = (0..self.ks.len()).collect();
        k_order.sort_by_key(|&j| self.ks[j]);
        for &i in &iou_order {
            for w in k_order.windows(2) {
                if self.recall[i][w[0]] > self.recall[i][w[1]] {
                    return Err(Error::Eval(format!(
                        "recall decreases from K={} to K={} at IoU {}",
                        self.ks[w[0]], self.ks[w[1]], self.ious[i]
                    )));
                }
            }
        }
        for &j in &k_order {
            for w in iou_order.windows(2) {
                if self.recall[w[0]][j] < self.recall[w[1]][j] {
                    return Err(Error::Eval(format!(
                        "recall at K={} increases from IoU {} to IoU {}",
                        self.ks[j], self.ious[w[0]], self.ious[w[1]]
                    )));
                }
            }
        }
        Ok(())
    }

    /// `key = value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", self.mode.name());
        let _ = writeln!(s, "queries = {}", self.queries);
        let _ = writeln!(s, "min_judgments = {}", self.min_judgments);
        let ks: Vec<String> = self.ks.iter().map(|k| k.to_string()).collect();
        let ious: Vec<String> = self.ious.iter().map(|i| format!("{i}")).collect();
        let _ = writeln!(s, "ks = {}", ks.join(","));
        let _ = writeln!(s, "ious = {}", ious.join(","));
        for (i, &iou) in self.ious.iter().enumerate() {
            for (j, &k) in self.ks.iter().enumerate() {
                let _ = writeln!(s, "recall.r{k}.{} = {}", iou_key(iou), self.recall[i][j]);
            }
        }
        if let Some(m) = &self.median_rank {
            for (&iou, v) in self.ious.iter().zip(m) {
                let _ = writeln!(s, "median_rank.{} = {v}", iou_key(iou));
            }
        }
        if let Some(o) = &self.oracle {
            for (&iou, v) in self.ious.iter().zip(o) {
                let _ = writeln!(s, "oracle.{} = {v}", iou_key(iou));
            }
        }
        if let Some(v) = self.consensus_rank {
            let _ = writeln!(s, "consensus.rank = {v}");
        }
        if let Some(v) = self.consensus_miou {
            let _ = writeln!(s, "consensus.miou = {v}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k} = {v}");
        }
        s
    }

    /// Parses the output of [`to_text`](Self::to_text).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| {
                Error::Eval(format!("report line {}: expected `key = value`", n + 1))
            })?;
            kv.insert(k, v);
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::Eval(format!("report is missing {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Eval(format!("report value of {k} is not a number")))
        };
        let mode = match get("mode")? {
            "corpus" => EvalMode::Corpus,
            "single-video" => EvalMode::SingleVideo,
            other => return Err(Error::Eval(format!("unknown report mode {other}"))),
        };
        let list = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split(',')
                .map(|x| {
                    x.parse()
                        .map_err(|_| Error::Eval(format!("bad list entry {x:?} in {k}")))
                })
                .collect()
        };
        let ks: Vec<usize> = list("ks")?.into_iter().map(|k| k as usize).collect();
        let ious = list("ious")?;
        let recall = ious
            .iter()
            .map(|&iou| {
                ks.iter()
                    .map(|&k| num(&format!("recall.r{k}.{}", iou_key(iou))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let per_iou = |prefix: &str| -> Result<Option<Vec<f64>>> {
            if !kv.contains_key(format!("{prefix}.{}", iou_key(ious[0])).as_str()) {
                return Ok(None);
            }
            ious.iter()
                .map(|&iou| num(&format!("{prefix}.{}", iou_key(iou))))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        };
        let optional = |k: &str| kv.contains_key(k).then(|| num(k)).transpose();
        Ok(Self {
            mode,
            queries: num("queries")? as usize,
            min_judgments: num("min_judgments")? as usize,
            median_rank: per_iou("median_rank")?,
            oracle: per_iou("oracle")?,
            consensus_rank: optional("consensus.rank")?,
            consensus_miou: optional("consensus.miou")?,
            config: kv
                .iter()
                .filter_map(|(k, v)| {
                    k.strip_prefix("config.")
                        .map(|k| (k.to_string(), v.to_string()))
                })
                .collect(),
            ks,
            ious,
            recall,
        })
    }
}
