//! Forward computation of the two embedding heads.
//!
//! The visual head is a two-layer perceptron over `[clip feature, video
//! context, (temporal endpoints)]`. The language head runs an LSTM over the
//! query's word vectors and maps the last hidden state linearly into the same
//! embedding space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, sigmoid, Tensor};
use crate::types::{FeatureMatrix, Moment, VideoMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub visual_in: usize,
    pub word_in: usize,
    pub hidden_mlp: usize,
    pub embed: usize,
    pub hidden_lstm: usize,
    pub use_tef: bool,
    /// Zero the visual and context inputs so only the endpoints reach the MLP.
    #[serde(default)]
    pub tef_only: bool,
}

impl ModelDims {
    /// Full-size architecture: 500-unit hidden layer, 100-d embedding, 1000-unit LSTM.
    pub fn full(visual_in: usize, word_in: usize) -> Self {
        Self {
            visual_in,
            word_in,
            hidden_mlp: 500,
            embed: 100,
            hidden_lstm: 1000,
            use_tef: false,
            tef_only: false,
        }
    }

    /// Width of the MLP input: clip feature, context, and two endpoint slots if enabled.
    pub fn mlp_input(&self) -> usize {
        2 * self.visual_in + if self.use_tef { 2 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.visual_in,
            self.word_in,
            self.hidden_mlp,
            self.embed,
            self.hidden_lstm,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if self.tef_only && !self.use_tef {
            return Err(Error::Config("tef_only requires use_tef".into()));
        }
        Ok(())
    }
}

/// Learned parameters. Gradients reuse this type.
///
/// LSTM gate blocks are stacked in the order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
    pub lstm_w_ih: Tensor,
    pub lstm_w_hh: Tensor,
    pub lstm_b: Tensor,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
}

impl ModelParams {
    pub const TENSOR_NAMES: [&'static str; 9] = [
        "mlp.w1",
        "mlp.b1",
        "mlp.w2",
        "mlp.b2",
        "lstm.w_ih",
        "lstm.w_hh",
        "lstm.b",
        "proj.w",
        "proj.b",
    ];

    pub fn zeros(dims: ModelDims) -> Self {
        let h = dims.hidden_lstm;
        Self {
            dims,
            mlp_w1: Tensor::zeros(&[dims.hidden_mlp, dims.mlp_input()]),
            mlp_b1: Tensor::zeros(&[dims.hidden_mlp]),
            mlp_w2: Tensor::zeros(&[dims.embed, dims.hidden_mlp]),
            mlp_b2: Tensor::zeros(&[dims.embed]),
            lstm_w_ih: Tensor::zeros(&[4 * h, dims.word_in]),
            lstm_w_hh: Tensor::zeros(&[4 * h, h]),
            lstm_b: Tensor::zeros(&[4 * h]),
            proj_w: Tensor::zeros(&[dims.embed, h]),
            proj_b: Tensor::zeros(&[dims.embed]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 9] {
        let n = Self::TENSOR_NAMES;
        [
            (n[0], &self.mlp_w1),
            (n[1], &self.mlp_b1),
            (n[2], &self.mlp_w2),
            (n[3], &self.mlp_b2),
            (n[4], &self.lstm_w_ih),
            (n[5], &self.lstm_w_hh),
            (n[6], &self.lstm_b),
            (n[7], &self.proj_w),
            (n[8], &self.proj_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 9] {
        let n = Self::TENSOR_NAMES;
        [
            (n[0], &mut self.mlp_w1),
            (n[1], &mut self.mlp_b1),
            (n[2], &mut self.mlp_w2),
            (n[3], &mut self.mlp_b2),
            (n[4], &mut self.lstm_w_ih),
            (n[5], &mut self.lstm_w_hh),
            (n[6], &mut self.lstm_b),
            (n[7], &mut self.proj_w),
            (n[8], &mut self.proj_b),
        ]
    }

    /// Checks shapes against `dims` and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let reference = Self::zeros(self.dims);
        for ((name, t), (_, r)) in self.tensors().into_iter().zip(reference.tensors()) {
            if !t.same_shape(r) {
                return Err(Error::Config(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.dims(),
                    r.dims()
                )));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!("tensor {name}")));
            }
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub(crate) fn check_tef(&self, tef: Option<(f64, f64)>) -> Result<()> {
        match (self.dims.use_tef, tef.is_some()) {
            (true, false) => Err(Error::Config(
                "model was trained with temporal endpoints; supply them".into(),
            )),
            (false, true) => Err(Error::Config(
                "model has no temporal endpoint inputs".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Deterministic initialization: weights uniform in `±sqrt(6 / (fan_in + fan_out))`,
/// biases zero except the LSTM forget gate, which starts at one.
pub fn init_params(dims: ModelDims, seed: u64) -> ModelParams {
    let mut params = ModelParams::zeros(dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in params.tensors_mut() {
        if t.dims().len() != 2 {
            continue;
        }
        let (fan_out, fan_in) = (t.dims()[0], t.dims()[1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        for v in t.data_mut() {
            *v = dist.sample(&mut rng);
        }
    }
    let h = dims.hidden_lstm;
    params.lstm_b.data_mut()[h..2 * h].fill(1.0);
    params
}

/// Mean of the clip features over the whole video.
pub fn compute_context(clip_features: &FeatureMatrix) -> Vec<f64> {
    let mut ctx = vec![0.0; clip_features.dim()];
    for row in clip_features.iter_rows() {
        for (c, &x) in ctx.iter_mut().zip(row) {
            *c += f64::from(x);
        }
    }
    let n = clip_features.rows().max(1) as f64;
    ctx.iter_mut().for_each(|c| *c /= n);
    ctx
}

/// Moment endpoints normalized by the video duration.
pub fn tef(moment: &Moment, video: &VideoMeta) -> (f64, f64) {
    (
        moment.span.start / video.duration,
        moment.span.end / video.duration,
    )
}

/// Embedded clips of one video (or of one moment, for the endpoint variant).
#[derive(Debug, Clone, PartialEq)]
pub struct ClipEmbeddings {
    pub video_id: String,
    rows: usize,
    embed: usize,
    data: Vec<f64>,
    pub tef_used: bool,
}

impl ClipEmbeddings {
    pub fn new(video_id: impl Into<String>, rows: usize, embed: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * embed, data.len());
        Self {
            video_id: video_id.into(),
            rows,
            embed,
            data,
            tef_used: false,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn embed(&self) -> usize {
        self.embed
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.embed..(k + 1) * self.embed]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-video view of the visual head with the context term folded into the bias.
pub(crate) struct VisualEncoder<'a> {
    params: &'a ModelParams,
    base: Vec<f64>,
}

impl<'a> VisualEncoder<'a> {
    pub(crate) fn new(params: &'a ModelParams, context: &[f64]) -> Result<Self> {
        let dims = &params.dims;
        if context.len() != dims.visual_in {
            return Err(Error::DimMismatch {
                context: "context feature",
                expected: dims.visual_in,
                actual: context.len(),
            });
        }
        let mut base = params.mlp_b1.data().to_vec();
        if !dims.tef_only {
            tensor::gemv_cols_acc(&params.mlp_w1, context, dims.visual_in, &mut base);
        }
        Ok(Self { params, base })
    }

    fn finish(&self, mut pre: Vec<f64>, tef: Option<(f64, f64)>) -> Vec<f64> {
        let p = self.params;
        if let Some((s, e)) = tef {
            tensor::gemv_cols_acc(&p.mlp_w1, &[s, e], 2 * p.dims.visual_in, &mut pre);
        }
        pre.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut out = p.mlp_b2.data().to_vec();
        tensor::gemv_cols_acc(&p.mlp_w2, &pre, 0, &mut out);
        out
    }

    pub(crate) fn encode_f32(&self, x: &[f32], tef: Option<(f64, f64)>) -> Vec<f64> {
        let mut pre = self.base.clone();
        if !self.params.dims.tef_only {
            tensor::gemv_cols_acc_f32(&self.params.mlp_w1, x, 0, &mut pre);
        }
        self.finish(pre, tef)
    }

    pub(crate) fn encode(&self, x: &[f64], tef: Option<(f64, f64)>) -> Vec<f64> {
        let mut pre = self.base.clone();
        if !self.params.dims.tef_only {
            tensor::gemv_cols_acc(&self.params.mlp_w1, x, 0, &mut pre);
        }
        self.finish(pre, tef)
    }
}

/// Embeds every row of `video_features`, tiling `tef` (when given) across rows.
pub fn embed_clips(
    video_id: &str,
    video_features: &FeatureMatrix,
    context: &[f64],
    tef: Option<(f64, f64)>,
    params: &ModelParams,
) -> Result<ClipEmbeddings> {
    params.check_tef(tef)?;
    if video_features.dim() != params.dims.visual_in {
        return Err(Error::DimMismatch {
            context: "clip features",
            expected: params.dims.visual_in,
            actual: video_features.dim(),
        });
    }
    let encoder = VisualEncoder::new(params, context)?;
    let mut data = Vec::with_capacity(video_features.rows() * params.dims.embed);
    for row in video_features.iter_rows() {
        data.extend(encoder.encode_f32(row, tef));
    }
    let mut out = ClipEmbeddings::new(video_id, video_features.rows(), params.dims.embed, data);
    out.tef_used = tef.is_some();
    Ok(out)
}

/// Cached activations of one visual-head evaluation, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct VisualTrace {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl ModelParams {
    /// Straight concatenate-then-multiply evaluation with all activations kept.
    pub(crate) fn visual_trace(
        &self,
        x: &[f64],
        context: &[f64],
        tef: Option<(f64, f64)>,
    ) -> VisualTrace {
        let d = &self.dims;
        let mut input = Vec::with_capacity(d.mlp_input());
        if d.tef_only {
            input.resize(2 * d.visual_in, 0.0);
        } else {
            input.extend_from_slice(x);
            input.extend_from_slice(context);
        }
        if let Some((s, e)) = tef {
            input.push(s);
            input.push(e);
        }
        let mut pre = self.mlp_b1.data().to_vec();
        tensor::gemv_cols_acc(&self.mlp_w1, &input, 0, &mut pre);
        let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let mut out = self.mlp_b2.data().to_vec();
        tensor::gemv_cols_acc(&self.mlp_w2, &hidden, 0, &mut out);
        VisualTrace {
            input,
            pre,
            hidden,
            out,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LanguageTrace {
    pub steps: Vec<LstmStep>,
    pub h_last: Vec<f64>,
    pub out: Vec<f64>,
}

impl ModelParams {
    pub(crate) fn language_trace(&self, words: &FeatureMatrix) -> Result<LanguageTrace> {
        if words.rows() == 0 {
            return Err(Error::Empty("query word sequence"));
        }
        if words.dim() != self.dims.word_in {
            return Err(Error::DimMismatch {
                context: "word vectors",
                expected: self.dims.word_in,
                actual: words.dim(),
            });
        }
        let h = self.dims.hidden_lstm;
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut steps = Vec::with_capacity(words.rows());
        for row in words.iter_rows() {
            let x: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
            let mut z = self.lstm_b.data().to_vec();
            tensor::gemv_cols_acc(&self.lstm_w_ih, &x, 0, &mut z);
            tensor::gemv_cols_acc(&self.lstm_w_hh, &h_prev, 0, &mut z);
            let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
            let o: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
            let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h_next: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
            steps.push(LstmStep {
                x,
                h_prev: std::mem::replace(&mut h_prev, h_next),
                c_prev: std::mem::replace(&mut c_prev, c),
                i,
                f,
                g,
                o,
                tanh_c,
            });
        }
        let mut out = self.proj_b.data().to_vec();
        tensor::gemv_cols_acc(&self.proj_w, &h_prev, 0, &mut out);
        Ok(LanguageTrace {
            steps,
            h_last: h_prev,
            out,
        })
    }
}

/// Query embedding: last LSTM hidden state through the linear projection.
pub fn embed_query(word_vectors: &FeatureMatrix, params: &ModelParams) -> Result<Vec<f64>> {
    Ok(params.language_trace(word_vectors)?.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(use_tef: bool) -> ModelDims {
        ModelDims {
            visual_in: 3,
            word_in: 4,
            hidden_mlp: 5,
            embed: 3,
            hidden_lstm: 6,
            use_tef,
            tef_only: false,
        }
    }

    fn features(rows: &[&[f32]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn context_is_row_mean() {
        assert_eq!(
            compute_context(&features(&[&[1.0, 1.0], &[3.0, 3.0]])),
            vec![2.0, 2.0]
        );
        assert_eq!(compute_context(&features(&[&[4.0, -1.0]])), vec![4.0, -1.0]);
        assert_eq!(compute_context(&features(&[&[0.0], &[0.0]])), vec![0.0]);
    }

    #[test]
    fn tef_examples() {
        let v = VideoMeta::new("v", 30.0, 2.5, 12, "").unwrap();
        assert_eq!(tef(&Moment::new(&v, 0, 11).unwrap(), &v), (0.0, 1.0));
        assert_eq!(tef(&Moment::new(&v, 3, 5).unwrap(), &v), (0.25, 0.5));
        let (s, e) = tef(&Moment::new(&v, 0, 1).unwrap(), &v);
        assert_eq!(s, 0.0);
        assert!((e - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_params(dims(true), 7);
        assert_eq!(a, init_params(dims(true), 7));
        assert_ne!(a, init_params(dims(true), 8));
        let h = a.dims.hidden_lstm;
        assert!(a.lstm_b.data()[h..2 * h].iter().all(|&b| b == 1.0));
        assert!(a.lstm_b.data()[..h].iter().all(|&b| b == 0.0));
        assert!(a.mlp_b1.data().iter().all(|&b| b == 0.0));
        a.validate().unwrap();
    }

    #[test]
    fn identity_visual_head_returns_raw_feature() {
        let d = ModelDims {
            visual_in: 3,
            word_in: 2,
            hidden_mlp: 3,
            embed: 3,
            hidden_lstm: 2,
            use_tef: false,
            tef_only: false,
        };
        let mut p = ModelParams::zeros(d);
        for k in 0..3 {
            p.mlp_w1.data_mut()[k * 6 + k] = 1.0;
            p.mlp_w2.data_mut()[k * 3 + k] = 1.0;
        }
        let f = features(&[&[0.5, 2.0, 1.0], &[3.0, 0.25, 0.0]]);
        let ctx = compute_context(&f);
        let e = embed_clips("v", &f, &ctx, None, &p).unwrap();
        assert_eq!(e.row(0), &[0.5, 2.0, 1.0]);
        assert_eq!(e.row(1), &[3.0, 0.25, 0.0]);
    }

    #[test]
    fn zero_params_embed_to_zero_and_bias() {
        let mut p = ModelParams::zeros(dims(false));
        let f = features(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let e = embed_clips("v", &f, &compute_context(&f), None, &p).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
        p.proj_b.data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
        let w = features(&[&[1.0, 0.0, 2.0, 3.0], &[5.0, 1.0, 1.0, 1.0]]);
        assert_eq!(embed_query(&w, &p).unwrap(), vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn embed_clips_matches_concatenated_evaluation() {
        let p = init_params(dims(true), 3);
        let f = features(&[&[0.1, -0.4, 0.9], &[1.5, 0.2, -0.3], &[-0.7, 0.8, 0.05]]);
        let ctx = compute_context(&f);
        let e = embed_clips("v", &f, &ctx, Some((0.2, 0.6)), &p).unwrap();
        assert!(e.tef_used);
        for k in 0..3 {
            // independent evaluation: build the full input and run both layers by hand
            let mut input: Vec<f64> = f.row(k).iter().map(|&v| f64::from(v)).collect();
            input.extend(&ctx);
            input.extend([0.2, 0.6]);
            let w1 = &p.mlp_w1;
            let hidden: Vec<f64> = (0..5)
                .map(|r| {
                    let s: f64 = (0..input.len()).map(|c| w1.row(r)[c] * input[c]).sum();
                    (s + p.mlp_b1.data()[r]).max(0.0)
                })
                .collect();
            for d in 0..3 {
                let s: f64 = (0..5).map(|r| p.mlp_w2.row(d)[r] * hidden[r]).sum();
                let expect = s + p.mlp_b2.data()[d];
                assert!((e.row(k)[d] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn embed_clips_rejects_mismatches() {
        let p = init_params(dims(false), 1);
        let f = features(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!(matches!(
            embed_clips("v", &f, &[0.0, 0.0], None, &p),
            Err(Error::DimMismatch { .. })
        ));
        let g = features(&[&[1.0, 2.0, 3.0], &[3.0, 4.0, 5.0]]);
        assert!(embed_clips("v", &g, &compute_context(&g), Some((0.0, 1.0)), &p).is_err());
    }

    #[test]
    fn single_word_matches_hand_unrolled_step() {
        let p = init_params(dims(false), 11);
        let word = [0.3f32, -0.8, 0.5, 0.1];
        let w = features(&[&word]);
        let got = embed_query(&w, &p).unwrap();
        let h = 6;
        let x: Vec<f64> = word.iter().map(|&v| f64::from(v)).collect();
        let gate = |block: usize, r: usize| {
            let row = block * h + r;
            let s: f64 = (0..4).map(|c| p.lstm_w_ih.row(row)[c] * x[c]).sum();
            s + p.lstm_b.data()[row]
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let hidden: Vec<f64> = (0..h)
            .map(|r| {
                let c = sig(gate(0, r)) * gate(2, r).tanh();
                sig(gate(3, r)) * c.tanh()
            })
            .collect();
        for d in 0..3 {
            let s: f64 = (0..h).map(|r| p.proj_w.row(d)[r] * hidden[r]).sum();
            assert!((got[d] - (s + p.proj_b.data()[d])).abs() < 1e-12);
        }
    }

    #[test]
    fn word_order_matters() {
        let p = init_params(dims(false), 5);
        let a = [0.9f32, -0.1, 0.4, 0.7];
        let b = [-0.6f32, 0.3, 0.8, -0.2];
        let ab = embed_query(&features(&[&a, &b]), &p).unwrap();
        let ba = embed_query(&features(&[&b, &a]), &p).unwrap();
        assert_ne!(ab, ba);
    }

    #[test]
    fn embeddings_are_row_independent() {
        let p = init_params(dims(false), 9);
        let f = features(&[&[0.1, 0.2, 0.3], &[0.4, -0.5, 0.6], &[-0.7, 0.8, 0.9]]);
        let g = features(&[&[-0.7, 0.8, 0.9], &[0.1, 0.2, 0.3], &[0.4, -0.5, 0.6]]);
        // same multiset of rows, so the context is identical
        let ctx = compute_context(&f);
        let ef = embed_clips("v", &f, &ctx, None, &p).unwrap();
        let eg = embed_clips("v", &g, &ctx, None, &p).unwrap();
        assert_eq!(ef.row(0), eg.row(1));
        assert_eq!(ef.row(1), eg.row(2));
        assert_eq!(ef.row(2), eg.row(0));
    }

    #[test]
    fn tef_only_mask_ignores_visual_input() {
        let mut d = dims(true);
        d.tef_only = true;
        let p = init_params(d, 2);
        let f = features(&[&[0.1, 0.2, 0.3], &[5.0, -5.0, 2.0]]);
        let e1 = embed_clips("v", &f, &compute_context(&f), Some((0.1, 0.4)), &p).unwrap();
        assert_eq!(e1.row(0), e1.row(1));
        let e2 = embed_clips("v", &f, &compute_context(&f), Some((0.2, 0.4)), &p).unwrap();
        assert_ne!(e1.row(0), e2.row(0));
    }
}
