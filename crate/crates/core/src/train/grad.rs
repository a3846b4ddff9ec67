//! Ranking loss over triples and its exact gradient.
//!
//! Gradients flow hinge -> alignment cost -> (visual MLP, language projection
//! -> LSTM through time). The hinge subgradient at the kink is zero.

use crate::corpus::{Dataset, MomentRef};
use crate::error::{Error, Result};
use crate::model::{LanguageTrace, ModelParams, VisualTrace};
use crate::tensor::{gemv_t_acc, squared_distance};

use super::sampling::TrainingTriple;
use super::TrainConfig;

/// `max(0, x - y + b)`.
pub fn ranking_loss(x: f64, y: f64, margin: f64) -> f64 {
    (x - y + margin).max(0.0)
}

/// Loss value, gradients, and bookkeeping for one batch.
#[derive(Debug, Clone)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: ModelParams,
    /// Triples whose intra / inter hinge was active.
    pub intra_active: usize,
    pub inter_active: usize,
    /// Inter-negative costs evaluated (zero whenever the inter weight is zero).
    pub inter_evaluations: usize,
}

/// Forward state of one moment cost, enough to backpropagate it.
struct CostTrace {
    traces: Vec<VisualTrace>,
    cost: f64,
}

fn moment_trace(
    dataset: &Dataset,
    params: &ModelParams,
    aggregate: bool,
    m: MomentRef,
    query_emb: &[f64],
) -> CostTrace {
    let corpus = &dataset.corpus;
    let video = corpus.video(m.video);
    let features = corpus.features(m.video);
    let ctx = corpus.context(m.video);
    let tef = params.dims.use_tef.then(|| {
        let span = video.span_of(m.first, m.last);
        (span.start / video.duration, span.end / video.duration)
    });
    let z = m.num_clips() as f64;
    if aggregate {
        let mut pooled = vec![0.0; features.dim()];
        for k in m.first..=m.last {
            for (p, &x) in pooled.iter_mut().zip(features.row(k)) {
                *p += f64::from(x);
            }
        }
        pooled.iter_mut().for_each(|p| *p /= z);
        let t = params.visual_trace(&pooled, ctx, tef);
        let cost = squared_distance(&t.out, query_emb);
        CostTrace {
            traces: vec![t],
            cost,
        }
    } else {
        let traces: Vec<VisualTrace> = (m.first..=m.last)
            .map(|k| {
                let x: Vec<f64> = features.row(k).iter().map(|&v| f64::from(v)).collect();
                params.visual_trace(&x, ctx, tef)
            })
            .collect();
        let cost = traces
            .iter()
            .map(|t| squared_distance(&t.out, query_emb))
            .sum::<f64>()
            / z;
        CostTrace { traces, cost }
    }
}

/// Backpropagates `scale * d(cost)` into `grads`, accumulating the query
/// embedding gradient into `d_query`.
fn backprop_cost(
    trace: &CostTrace,
    scale: f64,
    query_emb: &[f64],
    params: &ModelParams,
    grads: &mut ModelParams,
    d_query: &mut [f64],
) {
    let per = scale * 2.0 / trace.traces.len() as f64;
    for t in &trace.traces {
        let d_out: Vec<f64> = t
            .out
            .iter()
            .zip(query_emb)
            .map(|(e, q)| per * (e - q))
            .collect();
        for (dq, d) in d_query.iter_mut().zip(&d_out) {
            *dq -= d;
        }
        backprop_visual(t, &d_out, params, grads);
    }
}

fn backprop_visual(t: &VisualTrace, d_out: &[f64], params: &ModelParams, grads: &mut ModelParams) {
    grads.mlp_w2.add_outer(d_out, &t.hidden);
    grads.mlp_b2.axpy_slice(d_out);
    let mut d_hidden = vec![0.0; t.hidden.len()];
    gemv_t_acc(&params.mlp_w2, d_out, &mut d_hidden);
    let d_pre: Vec<f64> = d_hidden
        .iter()
        .zip(&t.pre)
        .map(|(d, &p)| if p > 0.0 { *d } else { 0.0 })
        .collect();
    grads.mlp_w1.add_outer(&d_pre, &t.input);
    grads.mlp_b1.axpy_slice(&d_pre);
}

fn backprop_language(
    trace: &LanguageTrace,
    d_out: &[f64],
    params: &ModelParams,
    grads: &mut ModelParams,
) {
    let h = params.dims.hidden_lstm;
    grads.proj_w.add_outer(d_out, &trace.h_last);
    grads.proj_b.axpy_slice(d_out);
    let mut d_h = vec![0.0; h];
    gemv_t_acc(&params.proj_w, d_out, &mut d_h);
    let mut d_c = vec![0.0; h];
    let mut d_z = vec![0.0; 4 * h];
    for step in trace.steps.iter().rev() {
        for k in 0..h {
            let d_o = d_h[k] * step.tanh_c[k];
            let dc = d_c[k] + d_h[k] * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
            let d_i = dc * step.g[k];
            let d_g = dc * step.i[k];
            let d_f = dc * step.c_prev[k];
            d_c[k] = dc * step.f[k];
            d_z[k] = d_i * step.i[k] * (1.0 - step.i[k]);
            d_z[h + k] = d_f * step.f[k] * (1.0 - step.f[k]);
            d_z[2 * h + k] = d_g * (1.0 - step.g[k] * step.g[k]);
            d_z[3 * h + k] = d_o * step.o[k] * (1.0 - step.o[k]);
        }
        grads.lstm_w_ih.add_outer(&d_z, &step.x);
        grads.lstm_w_hh.add_outer(&d_z, &step.h_prev);
        grads.lstm_b.axpy_slice(&d_z);
        d_h.fill(0.0);
        gemv_t_acc(&params.lstm_w_hh, &d_z, &mut d_h);
    }
}

fn check_triple(dataset: &Dataset, t: &TrainingTriple) -> Result<()> {
    let corpus = &dataset.corpus;
    if t.query >= dataset.queries.len() {
        return Err(Error::Config(format!(
            "triple query {} out of range",
            t.query
        )));
    }
    let moments = [Some(t.positive), Some(t.intra_negative), t.inter_negative];
    for m in moments.into_iter().flatten() {
        if m.video >= corpus.len() || m.first >= m.last || m.last >= corpus.video(m.video).num_clips
        {
            return Err(Error::InvalidMoment {
                video_id: format!("#{}", m.video),
                first: m.first,
                last: m.last,
                reason: "not a valid moment of the corpus".into(),
            });
        }
    }
    Ok(())
}

/// Sums per-triple values in a canonical order so the total does not depend
/// on how the batch was arranged.
fn canonical_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

fn run(
    batch: &[TrainingTriple],
    dataset: &Dataset,
    params: &ModelParams,
    cfg: &TrainConfig,
    with_grads: bool,
) -> Result<LossAndGrads> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let aggregate = cfg.variant_is_aggregate();
    let mut grads = params.zeros_like();
    let mut per_triple = Vec::with_capacity(batch.len());
    let (mut intra_active, mut inter_active, mut inter_evaluations) = (0, 0, 0);
    for t in batch {
        check_triple(dataset, t)?;
        let lang = params.language_trace(&dataset.queries[t.query].word_vectors)?;
        let u = &lang.out;
        let pos = moment_trace(dataset, params, aggregate, t.positive, u);
        let neg = moment_trace(dataset, params, aggregate, t.intra_negative, u);
        let intra = ranking_loss(pos.cost, neg.cost, cfg.margin);
        let mut loss = intra;
        let mut d_query = vec![0.0; u.len()];
        let mut pos_scale = 0.0;
        if intra > 0.0 {
            intra_active += 1;
            pos_scale += 1.0;
            if with_grads {
                backprop_cost(&neg, -1.0, u, params, &mut grads, &mut d_query);
            }
        }
        if cfg.inter_weight != 0.0 {
            if let Some(n) = t.inter_negative {
                inter_evaluations += 1;
                let inter_trace = moment_trace(dataset, params, aggregate, n, u);
                let inter = ranking_loss(pos.cost, inter_trace.cost, cfg.margin);
                loss += cfg.inter_weight * inter;
                if inter > 0.0 {
                    inter_active += 1;
                    pos_scale += cfg.inter_weight;
                    if with_grads {
                        backprop_cost(
                            &inter_trace,
                            -cfg.inter_weight,
                            u,
                            params,
                            &mut grads,
                            &mut d_query,
                        );
                    }
                }
            }
        }
        if with_grads && pos_scale != 0.0 {
            backprop_cost(&pos, pos_scale, u, params, &mut grads, &mut d_query);
            backprop_language(&lang, &d_query, params, &mut grads);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss of triple for query {}",
                dataset.queries[t.query].query_id
            )));
        }
        per_triple.push(loss);
    }
    if with_grads {
        for (name, g) in grads.tensors() {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
    }
    Ok(LossAndGrads {
        loss: canonical_sum(per_triple),
        grads,
        intra_active,
        inter_active,
        inter_evaluations,
    })
}

/// Summed ranking loss of a batch under the current parameters.
pub fn batch_loss(
    batch: &[TrainingTriple],
    dataset: &Dataset,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<f64> {
    Ok(run(batch, dataset, params, cfg, false)?.loss)
}

/// Batch loss together with its gradient with respect to every parameter.
pub fn loss_and_grads(
    batch: &[TrainingTriple],
    dataset: &Dataset,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<LossAndGrads> {
    run(batch, dataset, params, cfg, true)
}

/// Worst disagreement between analytic gradients and central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `|g - fd| / max(|g|, |fd|, 1e-6)`, maximized over every parameter.
    pub max_relative_error: f64,
    pub tensor: &'static str,
    pub index: usize,
    pub active_hinges: usize,
}

/// Compares `loss_and_grads` with central differences of step `h` on every
/// parameter entry.
pub fn gradient_check(
    batch: &[TrainingTriple],
    dataset: &Dataset,
    params: &ModelParams,
    cfg: &TrainConfig,
    h: f64,
) -> Result<GradCheck> {
    let analytic = loss_and_grads(batch, dataset, params, cfg)?;
    let mut worst = GradCheck {
        max_relative_error: 0.0,
        tensor: "",
        index: 0,
        active_hinges: analytic.intra_active + analytic.inter_active,
    };
    let mut probe = params.clone();
    for (t, (name, g)) in analytic.grads.tensors().into_iter().enumerate() {
        for (k, &gk) in g.data().iter().enumerate() {
            let orig = params.tensors()[t].1.data()[k];
            probe.tensors_mut()[t].1.data_mut()[k] = orig + h;
            let up = batch_loss(batch, dataset, &probe, cfg)?;
            probe.tensors_mut()[t].1.data_mut()[k] = orig - h;
            let down = batch_loss(batch, dataset, &probe, cfg)?;
            probe.tensors_mut()[t].1.data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (gk - fd).abs() / gk.abs().max(fd.abs()).max(1e-6);
            if rel > worst.max_relative_error {
                worst.max_relative_error = rel;
                worst.tensor = name;
                worst.index = k;
            }
        }
    }
    Ok(worst)
}
