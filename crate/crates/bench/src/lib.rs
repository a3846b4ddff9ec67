//! Run-time, distance-count and index-size comparison of exhaustive and
//! indexed retrieval under the clip-alignment and aggregate costs.
//!
//! Counts are exact and machine independent (all counting runs use a single
//! worker). Timings are reported for information only.

use std::fmt::Write as _;
use std::process::Command;
use std::str::FromStr;
use std::time::Instant;

use cal_core::enumerate::{enumerate_ranges, StrideMode};
use cal_core::index::{default_partitions, entry_bytes, IndexEntries};
use cal_core::io::{generate_synthetic, ClipCount, SyntheticSpec};
use cal_core::{
    aggregate_index_entries, build_exact, build_ivf, clip_index_entries, embed_pooled_moments,
    embed_query, exhaustive_search, init_params, nms, two_stage_search, ClipCache, ClipEmbeddings,
    ClipIndex, Corpus, EnumConfig, Error, ModelDims, ModelParams, Moment, Preset, Query,
    RetrievalConfig, ScoreVariant, ScoredMoment, StageOne, VideoInput,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type Result<T> = std::result::Result<T, Error>;

/// Published index sizes for a one-million-video corpus, in gigabytes.
pub const REPORTED_AGGREGATE_GB: f64 = 63.3;
pub const REPORTED_CLIP_GB: f64 = 7.45;

/// Header of a flat index file: magic, version, flavor, dim, count.
const INDEX_HEADER_BYTES: u64 = 4 + 2 + 1 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Exhaustive clip-alignment scoring over cached clip embeddings.
    Cal,
    /// Exhaustive scan of precomputed pooled-moment embeddings.
    Aggregate,
    /// Exact clip index, then re-ranking of moments around retrieved clips.
    TwoStage,
    /// Inverted-file clip index, then re-ranking.
    Approx,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Cal,
        Method::Aggregate,
        Method::TwoStage,
        Method::Approx,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cal => "cal",
            Method::Aggregate => "aggregate",
            Method::TwoStage => "two-stage",
            Method::Approx => "approx",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown bench method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub num_videos: usize,
    pub clips_per_video: usize,
    pub visual_dim: usize,
    pub word_dim: usize,
    pub hidden_mlp: usize,
    pub hidden_lstm: usize,
    pub embed: usize,
    /// Longest candidate moment, in clips.
    pub max_moment_clips: usize,
    pub queries: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Inverted-file partitions; `ceil(sqrt(entries))` when unset.
    pub partitions: Option<usize>,
    pub nprobe: usize,
    pub kmeans_iters: usize,
    pub clip_budget: usize,
    pub top_k: usize,
    /// Also time every method with all workers.
    pub throughput: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            num_videos: 10_000,
            clips_per_video: 20,
            visual_dim: 32,
            word_dim: 16,
            hidden_mlp: 64,
            hidden_lstm: 32,
            embed: 100,
            max_moment_clips: 14,
            queries: 10,
            repetitions: 1,
            seed: 0,
            methods: Method::ALL.to_vec(),
            partitions: None,
            nprobe: 8,
            kmeans_iters: 10,
            clip_budget: 200,
            top_k: 100,
            throughput: false,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.num_videos,
            self.clips_per_video,
            self.visual_dim,
            self.word_dim,
            self.hidden_mlp,
            self.hidden_lstm,
            self.embed,
            self.queries,
            self.repetitions,
            self.nprobe,
            self.clip_budget,
            self.top_k,
        ];
        if counts.contains(&0) {
            return Err(Error::Config(
                "bench: counts and dimensions must be positive".into(),
            ));
        }
        if self.max_moment_clips < 2 || self.clips_per_video < 2 {
            return Err(Error::Config(
                "bench: moments need at least two clips".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("bench: no methods selected".into()));
        }
        Ok(())
    }

    /// Every clip position starts a candidate of every length `2..=K`.
    pub fn enum_config(&self) -> EnumConfig {
        let clip_length = Preset::CharadesSta.enum_config().clip_length;
        EnumConfig {
            clip_length,
            max_moment_clips: self.max_moment_clips,
            stride_mode: StrideMode::Fixed(clip_length),
            min_moment_clips: 2,
            length_step: 1,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            visual_in: self.visual_dim,
            word_in: self.word_dim,
            hidden_mlp: self.hidden_mlp,
            embed: self.embed,
            hidden_lstm: self.hidden_lstm,
            use_tef: false,
            tef_only: false,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Closed-form entry counts per video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub clips_per_video: usize,
    pub max_moment_clips: usize,
    /// Moments of every length `1..=K`, as an aggregate index would store them.
    pub aggregate_entries: usize,
    /// Moments of length `2..=K`, the candidates actually enumerated here.
    pub aggregate_entries_min2: usize,
    pub clip_entries: usize,
    pub entry_ratio: f64,
    pub entry_ratio_min2: f64,
    pub reported_size_ratio: f64,
}

impl Accounting {
    pub fn new(n: usize, k: usize) -> Self {
        let aggregate_entries = aggregate_index_entries(n, k, 1);
        let aggregate_entries_min2 = aggregate_index_entries(n, k, 2);
        let clip_entries = clip_index_entries(n);
        Self {
            clips_per_video: n,
            max_moment_clips: k,
            aggregate_entries,
            aggregate_entries_min2,
            clip_entries,
            entry_ratio: aggregate_entries as f64 / clip_entries as f64,
            entry_ratio_min2: aggregate_entries_min2 as f64 / clip_entries as f64,
            reported_size_ratio: REPORTED_AGGREGATE_GB / REPORTED_CLIP_GB,
        }
    }
}

/// Latency summary in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl Latency {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let pick = |q: f64| ms[((ms.len() - 1) as f64 * q).round() as usize];
        Self {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_ms: pick(0.5),
            p95_ms: pick(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub index_entries: u64,
    pub index_bytes: u64,
    /// Vector distances per query, summed over both stages (single worker).
    pub distance_evals_per_query: f64,
    /// Query-to-centroid distances per query (inverted file only).
    pub centroid_distances_per_query: f64,
    pub build_seconds: f64,
    pub latency: Latency,
    /// Queries per second with all workers, when measured.
    pub throughput_qps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub git_revision: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: BenchSpec,
    pub provenance: Provenance,
    pub accounting: Accounting,
    pub partitions: usize,
    pub total_clips: usize,
    pub methods: Vec<MethodReport>,
}

fn git_revision() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Precomputed pooled-moment embeddings for every candidate of the corpus.
pub struct AggregateIndex {
    ranges: Vec<Vec<(usize, usize)>>,
    offsets: Vec<usize>,
    embed: usize,
    data: Vec<f32>,
}

impl AggregateIndex {
    pub fn build(corpus: &Corpus, params: &ModelParams, cfg: &EnumConfig) -> Result<Self> {
        let per_video: Vec<(Vec<(usize, usize)>, ClipEmbeddings)> = (0..corpus.len())
            .into_par_iter()
            .map(|v| {
                let features = corpus.features(v);
                let ranges = enumerate_ranges(features.rows(), cfg);
                let input = VideoInput {
                    video: corpus.video(v),
                    features,
                    context: corpus.context(v),
                };
                let e = embed_pooled_moments(input, &ranges, params)?;
                Ok((ranges, e))
            })
            .collect::<Result<_>>()?;
        let mut offsets = vec![0];
        let mut ranges = Vec::with_capacity(per_video.len());
        let mut data = Vec::new();
        for (r, e) in per_video {
            offsets.push(offsets.last().unwrap() + r.len());
            ranges.push(r);
            data.extend(e.data().iter().map(|&x| x as f32));
        }
        Ok(Self {
            ranges,
            offsets,
            embed: params.dims.embed,
            data,
        })
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes of the same flat layout used for clip indexes.
    pub fn encoded_len(&self) -> u64 {
        INDEX_HEADER_BYTES + self.len() as u64 * entry_bytes(self.embed)
    }

    /// Scans every entry; returns the top `top_k` after per-video NMS and the
    /// number of distances evaluated.
    pub fn search(
        &self,
        corpus: &Corpus,
        query_emb: &[f32],
        nms_iou: f64,
        top_k: usize,
    ) -> (Vec<ScoredMoment>, u64) {
        let mut all = Vec::new();
        for (v, ranges) in self.ranges.iter().enumerate() {
            let video = corpus.video(v);
            let scored: Vec<ScoredMoment> = ranges
                .iter()
                .enumerate()
                .map(|(r, &(i, j))| {
                    let row = &self.data[(self.offsets[v] + r) * self.embed..][..self.embed];
                    let cost = row
                        .iter()
                        .zip(query_emb)
                        .map(|(a, b)| f64::from(a - b) * f64::from(a - b))
                        .sum();
                    ScoredMoment {
                        moment: Moment {
                            video_id: video.video_id.clone(),
                            first_clip: i,
                            last_clip: j,
                            span: video.span_of(i, j),
                        },
                        cost,
                    }
                })
                .collect();
            all.extend(nms(&scored, nms_iou));
        }
        all.sort_by(|a, b| a.cost.total_cmp(&b.cost));
        all.truncate(top_k);
        (all, self.len() as u64)
    }
}

fn bench_corpus(spec: &BenchSpec) -> Result<(Corpus, Vec<Query>)> {
    let synthetic = SyntheticSpec {
        num_videos: spec.num_videos,
        clips_per_video: ClipCount::Fixed(spec.clips_per_video),
        visual_dim: spec.visual_dim,
        word_dim: spec.word_dim,
        queries_per_video: 1,
        seed: spec.seed,
        preset: Preset::CharadesSta,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&synthetic)?;
    let queries = data
        .queries
        .into_iter()
        .take(spec.queries)
        .map(|q| q.query)
        .collect();
    Ok((data.corpus, queries))
}

struct Prepared<'a> {
    corpus: &'a Corpus,
    params: &'a ModelParams,
    cache: Option<ClipCache<'a>>,
    index: Option<ClipIndex>,
    aggregate: Option<AggregateIndex>,
    cfg: RetrievalConfig,
}

impl Prepared<'_> {
    /// Distance and centroid evaluations of one query.
    fn run(&self, method: Method, query: &Query) -> Result<(u64, u64)> {
        match method {
            Method::Aggregate => {
                let agg = self.aggregate.as_ref().expect("aggregate index built");
                let u: Vec<f32> = embed_query(&query.word_vectors, self.params)?
                    .into_iter()
                    .map(|x| x as f32)
                    .collect();
                let (_, evals) = agg.search(self.corpus, &u, self.cfg.nms_iou, self.cfg.top_k);
                Ok((evals, 0))
            }
            Method::Cal => {
                let r = exhaustive_search(
                    self.corpus,
                    query,
                    self.params,
                    self.cache.as_ref(),
                    &self.cfg,
                )?;
                Ok((r.stage_counters.distance_evals(), 0))
            }
            Method::TwoStage | Method::Approx => {
                let r = two_stage_search(
                    self.corpus,
                    self.index.as_ref(),
                    query,
                    self.params,
                    None,
                    self.cache.as_ref(),
                    &self.cfg,
                )?;
                let c = r.stage_counters;
                Ok((c.distance_evals(), c.centroid_distances))
            }
        }
    }
}

fn retrieval_config(spec: &BenchSpec) -> RetrievalConfig {
    RetrievalConfig {
        enum_cfg: spec.enum_config(),
        variant: ScoreVariant::Cal,
        rerank_variant: None,
        budget: spec.top_k,
        clip_budget: spec.clip_budget,
        nms_iou: Preset::CharadesSta.nms_iou(),
        top_k: spec.top_k,
        nprobe: spec.nprobe,
        stage_one: StageOne::Clips,
        dilate: false,
    }
}

/// Builds whatever `method` searches over; returns it with its entry count
/// and encoded size.
fn prepare<'a>(
    method: Method,
    spec: &BenchSpec,
    corpus: &'a Corpus,
    params: &'a ModelParams,
    partitions: usize,
) -> Result<(Prepared<'a>, u64, u64)> {
    let mut prepared = Prepared {
        corpus,
        params,
        cache: None,
        index: None,
        aggregate: None,
        cfg: retrieval_config(spec),
    };
    let (entries, bytes) = match method {
        Method::Aggregate => {
            let agg = AggregateIndex::build(corpus, params, &spec.enum_config())?;
            let out = (agg.len() as u64, agg.encoded_len());
            prepared.aggregate = Some(agg);
            out
        }
        Method::Cal => {
            prepared.cache = Some(ClipCache::build(corpus, params)?);
            let n = corpus.total_clips() as u64;
            (n, INDEX_HEADER_BYTES + n * entry_bytes(spec.embed))
        }
        Method::TwoStage | Method::Approx => {
            prepared.cache = Some(ClipCache::build(corpus, params)?);
            let entries = IndexEntries::from_corpus(corpus, params)?;
            let index = if method == Method::TwoStage {
                ClipIndex::Exact(build_exact(entries))
            } else {
                ClipIndex::Ivf(build_ivf(
                    entries,
                    partitions,
                    spec.seed,
                    spec.kmeans_iters,
                )?)
            };
            let out = (index.len() as u64, index.encoded_len());
            prepared.index = Some(index);
            out
        }
    };
    Ok((prepared, entries, bytes))
}

fn bench_method(
    method: Method,
    spec: &BenchSpec,
    corpus: &Corpus,
    queries: &[Query],
    params: &ModelParams,
    partitions: usize,
    pool: &rayon::ThreadPool,
) -> Result<MethodReport> {
    let start = Instant::now();
    let (prepared, entries, bytes) =
        pool.install(|| prepare(method, spec, corpus, params, partitions))?;
    let build_seconds = start.elapsed().as_secs_f64();

    let mut evals = 0u64;
    let mut centroids = 0u64;
    let mut samples = Vec::with_capacity(queries.len() * spec.repetitions);
    pool.install(|| -> Result<()> {
        for q in queries {
            for rep in 0..spec.repetitions {
                let t = Instant::now();
                let (e, c) = prepared.run(method, q)?;
                samples.push(t.elapsed().as_secs_f64() * 1e3);
                if rep == 0 {
                    evals += e;
                    centroids += c;
                }
            }
        }
        Ok(())
    })?;
    let throughput_qps = if spec.throughput {
        let t = Instant::now();
        queries
            .par_iter()
            .map(|q| prepared.run(method, q).map(|_| ()))
            .collect::<Result<Vec<()>>>()?;
        Some(queries.len() as f64 / t.elapsed().as_secs_f64())
    } else {
        None
    };
    let n = queries.len() as f64;
    Ok(MethodReport {
        method,
        index_entries: entries,
        index_bytes: bytes,
        distance_evals_per_query: evals as f64 / n,
        centroid_distances_per_query: centroids as f64 / n,
        build_seconds,
        latency: Latency::from_samples(samples),
        throughput_qps,
    })
}

/// Generates the corpus described by `spec` and measures every method.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchReport> {
    spec.validate()?;
    let (corpus, queries) = bench_corpus(spec)?;
    let params = init_params(spec.dims(), spec.seed);
    let partitions = spec
        .partitions
        .unwrap_or_else(|| default_partitions(corpus.total_clips()));
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let methods = spec
        .methods
        .iter()
        .map(|&m| bench_method(m, spec, &corpus, &queries, &params, partitions, &single))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        spec: spec.clone(),
        provenance: Provenance {
            seed: spec.seed,
            config_hash: spec.config_hash(),
            git_revision: git_revision(),
        },
        accounting: Accounting::new(spec.clips_per_video, spec.max_moment_clips),
        partitions,
        total_clips: corpus.total_clips(),
        methods,
    })
}

/// Corpus size used for the extrapolated figures.
pub const EXTRAPOLATION_VIDEOS: f64 = 1e6;

impl BenchReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// `key = value` lines. Timing keys carry a `time.` prefix so they can be
    /// filtered out when comparing runs.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.provenance;
        let _ = writeln!(s, "seed = {}", p.seed);
        let _ = writeln!(s, "config_hash = {}", p.config_hash);
        let _ = writeln!(s, "git_revision = {}", p.git_revision);
        let _ = writeln!(s, "corpus.videos = {}", self.spec.num_videos);
        let _ = writeln!(s, "corpus.clips = {}", self.total_clips);
        let _ = writeln!(s, "corpus.embed = {}", self.spec.embed);
        let _ = writeln!(s, "corpus.queries = {}", self.spec.queries);
        let a = &self.accounting;
        let _ = writeln!(s, "accounting.clips_per_video = {}", a.clips_per_video);
        let _ = writeln!(s, "accounting.max_moment_clips = {}", a.max_moment_clips);
        let _ = writeln!(s, "accounting.aggregate_entries = {}", a.aggregate_entries);
        let _ = writeln!(
            s,
            "accounting.aggregate_entries_min2 = {}",
            a.aggregate_entries_min2
        );
        let _ = writeln!(s, "accounting.clip_entries = {}", a.clip_entries);
        let _ = writeln!(s, "accounting.entry_ratio = {:.4}", a.entry_ratio);
        let _ = writeln!(s, "accounting.entry_ratio_min2 = {:.4}", a.entry_ratio_min2);
        let _ = writeln!(
            s,
            "accounting.reported_size_ratio = {:.4} ({REPORTED_AGGREGATE_GB} GB / {REPORTED_CLIP_GB} GB, not asserted)",
            a.reported_size_ratio
        );
        let _ = writeln!(s, "ivf.partitions = {}", self.partitions);
        let _ = writeln!(s, "ivf.nprobe = {}", self.spec.nprobe);
        for r in &self.methods {
            let m = r.method.name();
            let _ = writeln!(s, "{m}.index_entries = {}", r.index_entries);
            let _ = writeln!(s, "{m}.index_bytes = {}", r.index_bytes);
            let _ = writeln!(
                s,
                "{m}.distance_evals_per_query = {}",
                r.distance_evals_per_query
            );
            let _ = writeln!(
                s,
                "{m}.centroid_distances_per_query = {}",
                r.centroid_distances_per_query
            );
        }
        if let (Some(c), Some(g)) = (self.method(Method::Cal), self.method(Method::Aggregate)) {
            let _ = writeln!(
                s,
                "ratio.aggregate_over_cal_evals = {:.4}",
                g.distance_evals_per_query / c.distance_evals_per_query
            );
            let _ = writeln!(
                s,
                "ratio.aggregate_over_cal_bytes = {:.4}",
                g.index_bytes as f64 / c.index_bytes as f64
            );
        }
        if let (Some(c), Some(x)) = (self.method(Method::Cal), self.method(Method::Approx)) {
            let _ = writeln!(
                s,
                "ratio.cal_over_approx_evals = {:.4}",
                c.distance_evals_per_query
                    / (x.distance_evals_per_query + x.centroid_distances_per_query)
            );
        }
        let scale = EXTRAPOLATION_VIDEOS / self.spec.num_videos as f64;
        let per_entry = entry_bytes(self.spec.embed) as f64;
        let _ = writeln!(
            s,
            "extrapolation.1m.clip_index_gb = {:.3}",
            EXTRAPOLATION_VIDEOS * a.clip_entries as f64 * per_entry / 1e9
        );
        let _ = writeln!(
            s,
            "extrapolation.1m.aggregate_index_gb = {:.3}",
            EXTRAPOLATION_VIDEOS * a.aggregate_entries as f64 * per_entry / 1e9
        );
        for r in &self.methods {
            let _ = writeln!(
                s,
                "time.{}.build_seconds = {:.4}",
                r.method.name(),
                r.build_seconds
            );
            let l = r.latency;
            let _ = writeln!(
                s,
                "time.{}.latency_ms = mean {:.3} p50 {:.3} p95 {:.3}",
                r.method.name(),
                l.mean_ms,
                l.p50_ms,
                l.p95_ms
            );
            if let Some(q) = r.throughput_qps {
                let _ = writeln!(s, "time.{}.throughput_qps = {q:.2}", r.method.name());
            }
            let _ = writeln!(
                s,
                "time.{}.extrapolation.1m.latency_s = {:.3}",
                r.method.name(),
                l.mean_ms * scale / 1e3
            );
        }
        s
    }

    /// One row per method, for plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "method,index_entries,index_bytes,distance_evals_per_query,centroid_distances_per_query,build_seconds,mean_ms,p50_ms,p95_ms\n",
        );
        for r in &self.methods {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
                r.method.name(),
                r.index_entries,
                r.index_bytes,
                r.distance_evals_per_query,
                r.centroid_distances_per_query,
                r.build_seconds,
                r.latency.mean_ms,
                r.latency.p50_ms,
                r.latency.p95_ms
            );
        }
        s
    }
}
