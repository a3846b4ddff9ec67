use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cal_core::index::{build_exact, build_ivf, default_partitions, IndexEntries, IndexFlavor};
use cal_core::io::{
    load_corpus, load_ground_truth, load_queries, read_results, select_split, write_jsonl,
    write_results, write_synthetic, Checkpoint, CheckpointConfig, SyntheticSpec, QUERIES_FILE,
};
use cal_core::{
    baseline_scores, evaluate, exhaustive_search, oracle_recall, retrain_reranker,
    single_video_eval, train, two_stage_search, BaselineKind, ClipCache, ClipIndex, Corpus,
    Dataset, EvalMode, EvalSettings, GroundTruth, MetricsReport, MomentPrior, Preset, Query,
    RankedResult, RetrievalConfig, ScoreVariant, StageCounters, StageOne, TrainOutcome,
    TrainVariant,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, TrainFile};
use crate::*;

fn verbose() -> bool {
    std::env::var("CAL_VERBOSE").is_ok_and(|v| !v.is_empty() && v != "0")
}

macro_rules! note {
    ($($arg:tt)*) => {
        if verbose() {
            eprintln!($($arg)*);
        }
    };
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let parallel = !matches!(cli.command, Command::Train(_) | Command::RetrainRerank(_));
    if let (Some(n), true) = (cli.workers, parallel) {
        if n == 0 {
            bail!("--workers must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Gen(a) => gen(&a, seed),
        Command::Train(a) => train_cmd(&a, seed),
        Command::Index(a) => index(&a, seed),
        Command::Search(a) => search(&a, seed),
        Command::RetrainRerank(a) => retrain(&a, seed),
        Command::Eval(a) => eval(&a, seed),
        Command::Bench(a) => bench(&a, seed),
        Command::Baseline(a) => baseline(&a, seed),
        Command::Report(ReportCommand::Show { file }) => show(&file),
    }
}

/// `path` with `suffix` appended to its file name.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn queries_path(corpus: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| corpus.join(QUERIES_FILE))
}

fn load_split(corpus: &Corpus, path: &Path, split: SplitArg) -> Result<Vec<Query>> {
    let loaded = load_queries(path, corpus)?;
    let queries = select_split(&loaded, split.select());
    if queries.is_empty() {
        return Err(cal_core::Error::Empty("selected queries").into());
    }
    Ok(queries)
}

fn checkpoint_preset(ckpt: &Checkpoint, explicit: Option<PresetArg>) -> Result<Preset> {
    if let Some(p) = explicit {
        return Ok(p.into());
    }
    match &ckpt.config.preset {
        Some(name) => Ok(name.parse()?),
        None => bail!("checkpoint names no preset; pass --preset"),
    }
}

fn score_variant(ckpt: &Checkpoint) -> ScoreVariant {
    ScoreVariant::for_model(ckpt.config.variant == TrainVariant::Aggregate, &ckpt.params)
}

fn save_trained(out: &Path, outcome: &TrainOutcome, config: CheckpointConfig) -> Result<()> {
    ensure_parent(out)?;
    Checkpoint {
        params: outcome.params.clone(),
        config,
    }
    .save(out)?;
    write_jsonl(&sidecar(out, ".log.jsonl"), &outcome.log)?;
    Ok(())
}

fn gen(a: &GenArgs, seed: Option<u64>) -> Result<()> {
    let mut spec: SyntheticSpec = match &a.spec {
        Some(p) => config::load(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = write_synthetic(&spec, &a.out)?;
    note!(
        "generated {} videos, {} queries",
        data.corpus.len(),
        data.queries.len()
    );
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let preset: Preset = a.preset.into();
    let file: TrainFile = match &a.config {
        Some(p) => config::load(p)?,
        None => TrainFile::default(),
    };
    let corpus = load_corpus(&a.corpus)?;
    let queries = load_split(&corpus, &queries_path(&a.corpus, &a.queries), a.split)?;
    let mut dims = file
        .model
        .dims(corpus.feature_dim(), queries[0].word_vectors.dim());
    dims.use_tef = a.tef || a.tef_only;
    dims.tef_only = a.tef_only;
    let mut cfg = file.train;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = a.variant {
        cfg.variant = match v {
            VariantArg::Cal => TrainVariant::Cal,
            VariantArg::Aggregate => TrainVariant::Aggregate,
        };
    }
    cfg.intra_iou_exclusion
        .get_or_insert(preset.intra_iou_exclusion());
    let dataset = Dataset::new(corpus, queries)?;
    note!(
        "training on {} queries for {} epochs",
        dataset.queries.len(),
        cfg.epochs
    );
    let outcome = train(&dataset, dims, &preset.enum_config(), &cfg)?;
    let config = CheckpointConfig {
        dims,
        variant: cfg.variant,
        seed: cfg.seed,
        preset: Some(preset.name().to_string()),
        train: Some(cfg),
        reranker: false,
    };
    save_trained(&a.out, &outcome, config)
}

#[derive(Serialize)]
struct IndexMeta {
    flavor: IndexFlavor,
    seed: u64,
    entries: usize,
    dim: usize,
    partitions: Option<usize>,
    kmeans_iters: Option<usize>,
}

fn index(a: &IndexArgs, seed: Option<u64>) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let seed = seed.unwrap_or(ckpt.config.seed);
    let entries = IndexEntries::from_corpus(&corpus, &ckpt.params)?;
    let (n, dim) = (entries.len(), entries.dim());
    let (index, partitions, iters) = match a.flavor {
        FlavorArg::Exact => (ClipIndex::Exact(build_exact(entries)), None, None),
        FlavorArg::Ivf => {
            let p = a.partitions.unwrap_or_else(|| default_partitions(n));
            let ivf = build_ivf(entries, p, seed, a.kmeans_iters)?;
            (ClipIndex::Ivf(ivf), Some(p), Some(a.kmeans_iters))
        }
    };
    ensure_parent(&a.out)?;
    index.save(&a.out)?;
    write_json(
        &sidecar(&a.out, ".meta.json"),
        &IndexMeta {
            flavor: index.flavor(),
            seed,
            entries: n,
            dim,
            partitions,
            kmeans_iters: iters,
        },
    )?;
    note!("indexed {n} clips");
    Ok(())
}

#[derive(Serialize)]
struct QueryStats<'a> {
    query_id: &'a str,
    universe: usize,
    truncated: bool,
    counters: StageCounters,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostic: Option<&'a str>,
}

#[derive(Serialize)]
struct SearchStats<'a> {
    seed: u64,
    mode: &'static str,
    config: &'a RetrievalConfig,
    queries: usize,
    totals: StageCounters,
    per_query: Vec<QueryStats<'a>>,
}

fn search(a: &SearchArgs, seed: Option<u64>) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let rerank = a.rerank_ckpt.as_deref().map(Checkpoint::load).transpose()?;
    let seed = seed.unwrap_or(ckpt.config.seed);
    let preset = checkpoint_preset(&ckpt, a.preset)?;
    let queries = load_split(&corpus, &queries_path(&a.corpus, &a.queries), a.split)?;

    let mut cfg = RetrievalConfig::for_preset(preset);
    cfg.variant = score_variant(&ckpt);
    cfg.rerank_variant = rerank.as_ref().map(score_variant);
    cfg.top_k = a.top_k;
    cfg.budget = a.budget.unwrap_or(cfg.budget.max(a.top_k));
    cfg.clip_budget = match a.clip_budget {
        Budget::All => corpus.total_clips(),
        Budget::Count(n) => n,
    };
    cfg.nprobe = a.nprobe;
    cfg.stage_one = match a.stage_one {
        StageOneArg::Clips => StageOne::Clips,
        StageOneArg::Moments => StageOne::Moments,
    };
    cfg.dilate = a.dilate;
    cfg.validate()?;

    let index = match (a.mode, cfg.stage_one) {
        (ModeArg::Exhaustive, _) | (_, StageOne::Moments) => None,
        (mode, StageOne::Clips) => {
            let path = a
                .index
                .as_ref()
                .context("clip-level stage one needs --index")?;
            let index = ClipIndex::load(path)?;
            let want = if mode == ModeArg::Approx {
                IndexFlavor::Ivf
            } else {
                IndexFlavor::Exact
            };
            if index.flavor() != want {
                return Err(cal_core::Error::Config(format!(
                    "mode {} needs an {} index, got {}",
                    mode_name(mode),
                    flavor_name(want),
                    flavor_name(index.flavor())
                ))
                .into());
            }
            Some(index)
        }
    };

    let cache = if ckpt.params.dims.use_tef {
        None
    } else {
        Some(ClipCache::build(&corpus, &ckpt.params)?)
    };
    let results: Vec<RankedResult> = queries
        .par_iter()
        .map(|q| match a.mode {
            ModeArg::Exhaustive => {
                exhaustive_search(&corpus, q, &ckpt.params, cache.as_ref(), &cfg)
            }
            ModeArg::TwoStage | ModeArg::Approx => two_stage_search(
                &corpus,
                index.as_ref(),
                q,
                &ckpt.params,
                rerank.as_ref().map(|r| &r.params),
                cache.as_ref(),
                &cfg,
            ),
        })
        .collect::<cal_core::Result<_>>()?;

    ensure_parent(&a.out)?;
    write_results(&a.out, &results, seed)?;
    let mut totals = StageCounters::default();
    for r in &results {
        totals += r.stage_counters;
    }
    let stats = SearchStats {
        seed,
        mode: mode_name(a.mode),
        config: &cfg,
        queries: results.len(),
        totals,
        per_query: results
            .iter()
            .map(|r| QueryStats {
                query_id: &r.query_id,
                universe: r.universe,
                truncated: r.truncated,
                counters: r.stage_counters,
                diagnostic: r.diagnostic.as_deref(),
            })
            .collect(),
    };
    write_json(&sidecar(&a.out, ".stats.json"), &stats)?;
    note!(
        "searched {} queries, {} distance evaluations",
        results.len(),
        totals.distance_evals()
    );
    Ok(())
}

fn mode_name(m: ModeArg) -> &'static str {
    match m {
        ModeArg::Exhaustive => "exhaustive",
        ModeArg::TwoStage => "two-stage",
        ModeArg::Approx => "approx",
    }
}

fn flavor_name(f: IndexFlavor) -> &'static str {
    match f {
        IndexFlavor::Exact => "exact",
        IndexFlavor::Ivf => "ivf",
    }
}

fn retrain(a: &RetrainArgs, seed: Option<u64>) -> Result<()> {
    let base = Checkpoint::load(&a.base)?;
    let preset = checkpoint_preset(&base, a.preset)?;
    let mut cfg = match &a.config {
        Some(p) => config::load::<TrainFile>(p)?.train,
        None => base.config.train.clone().unwrap_or_default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.variant = base.config.variant;
    cfg.intra_iou_exclusion
        .get_or_insert(preset.intra_iou_exclusion());
    let corpus = load_corpus(&a.corpus)?;
    let queries = load_split(&corpus, &queries_path(&a.corpus, &a.queries), a.split)?;
    let (retrieved, _) = read_results(&a.retrievals)?;
    let dataset = Dataset::new(corpus, queries)?;
    let outcome = retrain_reranker(
        &base.params,
        &retrieved,
        &dataset,
        &preset.enum_config(),
        &cfg,
    )?;
    let config = CheckpointConfig {
        dims: base.config.dims,
        variant: cfg.variant,
        seed: cfg.seed,
        preset: Some(preset.name().to_string()),
        train: Some(cfg),
        reranker: true,
    };
    save_trained(&a.out, &outcome, config)
}

fn eval(a: &EvalArgs, seed: Option<u64>) -> Result<()> {
    let preset: Preset = a.preset.into();
    let (results, file_seed) = read_results(&a.results)?;
    let gts: HashMap<String, GroundTruth> = load_ground_truth(&a.gt)?.into_iter().collect();
    let min_judgments = a.min_judgments.unwrap_or(preset.min_judgments());
    let mode = if a.single_video {
        EvalMode::SingleVideo
    } else {
        EvalMode::Corpus
    };
    let mut settings = EvalSettings::new(mode, min_judgments);
    if let Some(ks) = &a.ks {
        settings.ks = ks.clone();
    }
    if let Some(ious) = &a.ious {
        settings.ious = ious.clone();
    }
    let mut report = match mode {
        EvalMode::SingleVideo => single_video_eval(&results, &gts, min_judgments)?,
        EvalMode::Corpus => evaluate(&results, &gts, &settings)?,
    };
    if let Some(dir) = &a.corpus {
        let corpus = load_corpus(dir)?;
        let evaluated = results
            .iter()
            .map(|r| {
                gts.get(&r.query_id)
                    .ok_or_else(|| cal_core::Error::MissingGroundTruth(r.query_id.clone()))
            })
            .collect::<cal_core::Result<Vec<_>>>()?;
        let enum_cfg = preset.enum_config();
        let oracle = report
            .ious
            .par_iter()
            .map(|&iou| {
                oracle_recall(
                    &corpus,
                    evaluated.iter().copied(),
                    &enum_cfg,
                    iou,
                    min_judgments,
                )
            })
            .collect::<cal_core::Result<Vec<_>>>()?;
        report.oracle = Some(oracle);
    }
    let seed = seed.or(file_seed).unwrap_or(0);
    report.config.insert("seed".into(), seed.to_string());
    report.config.insert("preset".into(), preset.name().into());
    write_text(&a.out, &report.to_text())
}

fn bench(a: &BenchArgs, seed: Option<u64>) -> Result<()> {
    let mut spec: cal_bench::BenchSpec = match &a.spec {
        Some(p) => config::load(p)?,
        None => Default::default(),
    };
    if let Some(m) = &a.methods {
        spec.methods = m.clone();
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let report = cal_bench::run_bench(&spec)?;
    write_text(&a.out, &report.to_text())?;
    if let Some(csv) = &a.csv {
        write_text(csv, &report.to_csv())?;
    }
    Ok(())
}

fn baseline(a: &BaselineArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let preset: Preset = a.preset.into();
    let corpus = load_corpus(&a.corpus)?;
    let qpath = queries_path(&a.corpus, &a.queries);
    let queries = load_split(&corpus, &qpath, a.split)?;
    let mut cfg = RetrievalConfig::for_preset(preset);
    cfg.top_k = a.top_k;
    cfg.budget = cfg.budget.max(a.top_k);
    let kind = match a.kind {
        BaselineArg::Chance => BaselineKind::Chance,
        BaselineArg::MomentPrior => BaselineKind::MomentPrior,
        BaselineArg::TefOnly => BaselineKind::TefOnly,
    };
    let prior = match kind {
        BaselineKind::MomentPrior => {
            let path = a.prior_queries.as_ref().unwrap_or(&qpath);
            let fitted = load_split(&corpus, path, SplitArg::Train)?;
            let gts = fitted.iter().filter_map(|q| q.ground_truth.as_ref());
            Some(MomentPrior::fit(&corpus, gts, a.bins)?)
        }
        _ => None,
    };
    let ckpt = match kind {
        BaselineKind::TefOnly => {
            let path = a.ckpt.as_ref().context("the tef-only baseline needs --ckpt")?;
            let ckpt = Checkpoint::load(path)?;
            if !ckpt.params.dims.tef_only {
                bail!("{} is not an endpoint-only checkpoint", path.display());
            }
            cfg.variant = score_variant(&ckpt);
            Some(ckpt)
        }
        _ => None,
    };
    let results: Vec<RankedResult> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            baseline_scores(
                &corpus,
                q,
                kind,
                prior.as_ref(),
                ckpt.as_ref().map(|c| &c.params),
                &cfg,
                seed.wrapping_add(i as u64),
            )
        })
        .collect::<cal_core::Result<_>>()?;
    ensure_parent(&a.out)?;
    write_results(&a.out, &results, seed)?;
    Ok(())
}

fn show(file: &Path) -> Result<()> {
    let text =
        std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    match MetricsReport::from_text(&text) {
        Ok(report) => print!("{}", report.to_text()),
        Err(_) => {
            let pairs: BTreeMap<_, _> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.split_once(" = "))
                .collect::<Option<_>>()
                .with_context(|| format!("{} is not a report", file.display()))?;
            if pairs.is_empty() {
                bail!("{} is empty", file.display());
            }
            print!("{text}");
        }
    }
    Ok(())
}
