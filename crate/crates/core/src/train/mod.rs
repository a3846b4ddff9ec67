//! Training: triple sampling, the ranking objective, and SGD with momentum.

mod grad;
mod sampling;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, MomentRef};
use crate::enumerate::EnumConfig;
use crate::error::{Error, Result};
use crate::model::{init_params, ModelDims, ModelParams};
use crate::retrieval::RankedResult;

pub use grad::{batch_loss, gradient_check, loss_and_grads, ranking_loss, GradCheck, LossAndGrads};
pub use sampling::{InterSource, RankSampler, TrainingTriple, TripleSampler};

/// Cost the model is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainVariant {
    #[default]
    Cal,
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub margin: f64,
    pub inter_weight: f64,
    pub lr0: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub batch_triples: usize,
    /// Falls back to 0.35 when unset; presets supply their own value.
    pub intra_iou_exclusion: Option<f64>,
    pub seed: u64,
    pub variant: TrainVariant,
    /// Decay rate of the rank-weighted inter-negative distribution used when
    /// re-training a re-ranker.
    pub rank_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            inter_weight: 0.4,
            lr0: 0.05,
            momentum: 0.95,
            lr_decay: 0.1,
            lr_decay_every: 30,
            epochs: 108,
            batch_triples: 128,
            intra_iou_exclusion: None,
            seed: 0,
            variant: TrainVariant::Cal,
            rank_rate: 0.02,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("training: {what}")));
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.inter_weight >= 0.0) {
            return bad("inter-video weight must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.lr0 > 0.0) {
            return bad("initial learning rate must be positive");
        }
        if self.batch_triples == 0 || self.lr_decay_every == 0 {
            return bad("batch size and decay period must be positive");
        }
        if !(self.rank_rate >= 0.0) {
            return bad("rank rate must be non-negative");
        }
        Ok(())
    }

    pub fn exclusion(&self) -> f64 {
        self.intra_iou_exclusion.unwrap_or(0.35)
    }

    pub(crate) fn variant_is_aggregate(&self) -> bool {
        self.variant == TrainVariant::Aggregate
    }

    /// Step size for `epoch` (zero-based): `lr0 * decay^(epoch / period)`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// `v <- momentum * v - lr * g; theta <- theta + v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    velocity: &mut ModelParams,
    epoch: usize,
    cfg: &TrainConfig,
) {
    let lr = cfg.learning_rate(epoch);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(velocity.tensors_mut());
    for (((_, p), (_, g)), (_, v)) in tensors {
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = cfg.momentum * *vv - lr * gv;
            *pv += *vv;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss per sampled triple.
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
    /// Inter-negative cost evaluations over the whole run.
    pub inter_evaluations: usize,
}

fn fit(
    sampler: &TripleSampler<'_>,
    dataset: &Dataset,
    mut params: ModelParams,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    let batches = sampler.num_pairs().div_ceil(cfg.batch_triples).max(1);
    let mut velocity = params.zeros_like();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut inter_evaluations = 0;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut total = 0.0;
        for _ in 0..batches {
            let batch = sampler.sample_batch(rng, cfg.batch_triples)?;
            let step = loss_and_grads(&batch, dataset, &params, cfg)?;
            total += step.loss;
            inter_evaluations += step.inter_evaluations;
            sgd_step(&mut params, &step.grads, &mut velocity, epoch, cfg);
        }
        params.validate()?;
        log.push(EpochRecord {
            epoch,
            lr: cfg.learning_rate(epoch),
            mean_loss: total / (batches * cfg.batch_triples) as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome {
        params,
        log,
        inter_evaluations,
    })
}

/// Trains from scratch. Initialization and sampling both derive from `cfg.seed`.
pub fn train(
    dataset: &Dataset,
    dims: ModelDims,
    enum_cfg: &EnumConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    dims.validate()?;
    if dims.visual_in != dataset.corpus.feature_dim() {
        return Err(Error::DimMismatch {
            context: "model visual input",
            expected: dataset.corpus.feature_dim(),
            actual: dims.visual_in,
        });
    }
    let sampler = TripleSampler::new(dataset, enum_cfg, cfg.exclusion(), cfg.inter_weight != 0.0)?;
    let params = init_params(dims, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    fit(&sampler, dataset, params, cfg, &mut rng)
}

/// Fine-tunes `base` as a re-ranker, drawing inter-video negatives from each
/// query's retrieved list with probability decaying exponentially in rank.
pub fn retrain_reranker(
    base: &ModelParams,
    retrieved: &[RankedResult],
    dataset: &Dataset,
    enum_cfg: &EnumConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let by_query: BTreeMap<&str, usize> = dataset
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| (q.query_id.as_str(), i))
        .collect();
    let mut lists: BTreeMap<usize, Vec<MomentRef>> = BTreeMap::new();
    for r in retrieved {
        let Some(&q) = by_query.get(r.query_id.as_str()) else {
            continue;
        };
        let moments = r
            .ranked
            .iter()
            .map(|s| dataset.corpus.moment_ref(&s.moment))
            .collect::<Result<Vec<_>>>()?;
        lists.insert(q, moments);
    }
    let inter = InterSource::ranked(dataset, &lists, cfg.exclusion(), cfg.rank_rate);
    let sampler = TripleSampler::new(dataset, enum_cfg, cfg.exclusion(), cfg.inter_weight != 0.0)?
        .with_inter_source(inter);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    fit(&sampler, dataset, base.clone(), cfg, &mut rng)
}
