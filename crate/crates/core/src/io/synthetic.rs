//! Synthetic corpora with planted ground truth.
//!
//! Each query is a bag of vocabulary words. A fixed random read-out maps the
//! mean word vector to a latent visual vector, and the clips of the query's
//! ground-truth moment are set to that latent plus Gaussian noise. Every
//! other clip is the latent of an unrelated random bag plus noise, so clip
//! statistics alone do not reveal the planted moments.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::records::{save_dataset, LoadedQuery, Split};
use crate::corpus::Corpus;
use crate::enumerate::{enumerate_ranges, Preset};
use crate::error::{Error, Result};
use crate::types::{FeatureMatrix, GroundTruth, Query, VideoMeta};

/// Clip count per video: a fixed number or an inclusive `[min, max]` range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClipCount {
    Fixed(usize),
    Range([usize; 2]),
}

impl ClipCount {
    fn bounds(self) -> (usize, usize) {
        match self {
            ClipCount::Fixed(n) => (n, n),
            ClipCount::Range([a, b]) => (a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    pub clips_per_video: ClipCount,
    pub visual_dim: usize,
    pub word_dim: usize,
    pub vocab_size: usize,
    pub queries_per_video: usize,
    /// Standard deviation of the noise added to every clip feature.
    pub signal_noise: f64,
    pub seed: u64,
    /// Supplies the clip length and the candidate grid for planted moments.
    pub preset: Preset,
    /// Inclusive range of planted moment lengths, in clips.
    pub planted_clips: [usize; 2],
    /// Inclusive range of words per query.
    pub words_per_query: [usize; 2],
    pub annotations_per_query: usize,
    /// Fraction of queries marked as test split.
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_videos: 200,
            clips_per_video: ClipCount::Fixed(12),
            visual_dim: 64,
            word_dim: 16,
            vocab_size: 200,
            queries_per_video: 3,
            signal_noise: 0.1,
            seed: 0,
            preset: Preset::CharadesSta,
            planted_clips: [2, 3],
            words_per_query: [4, 8],
            annotations_per_query: 1,
            test_fraction: 0.2,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(format!("synthetic spec: {what}")));
        let (lo, hi) = self.clips_per_video.bounds();
        let counts = [
            self.num_videos,
            self.visual_dim,
            self.word_dim,
            self.vocab_size,
            self.queries_per_video,
            self.annotations_per_query,
        ];
        if counts.contains(&0) {
            return bad("counts and dimensions must be positive".into());
        }
        if !(self.signal_noise >= 0.0 && self.signal_noise.is_finite()) {
            return bad(format!("signal_noise {} must be >= 0", self.signal_noise));
        }
        if lo < 2 || lo > hi {
            return bad(format!("clips_per_video range [{lo}, {hi}] is invalid"));
        }
        let [pmin, pmax] = self.planted_clips;
        let cfg = self.preset.enum_config();
        if pmin < cfg.min_moment_clips || pmin > pmax || pmin > lo.min(cfg.max_moment_clips) {
            return bad(format!(
                "planted_clips [{pmin}, {pmax}] do not fit the videos"
            ));
        }
        let [wmin, wmax] = self.words_per_query;
        if wmin == 0 || wmin > wmax {
            return bad(format!("words_per_query [{wmin}, {wmax}] is invalid"));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return bad(format!(
                "test_fraction {} outside [0, 1]",
                self.test_fraction
            ));
        }
        Ok(())
    }
}

/// A generated dataset, plus the latent vector each query was planted with.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub queries: Vec<LoadedQuery>,
    pub latents: Vec<Vec<f64>>,
}

struct Generator {
    rng: ChaCha8Rng,
    vocab: Vec<Vec<f64>>,
    readout: Vec<f64>,
    spec: SyntheticSpec,
}

impl Generator {
    fn bag(&mut self) -> Vec<usize> {
        let [a, b] = self.spec.words_per_query;
        let t = self.rng.random_range(a..=b);
        (0..t)
            .map(|_| self.rng.random_range(0..self.spec.vocab_size))
            .collect()
    }

    fn latent(&self, bag: &[usize]) -> Vec<f64> {
        let w = self.spec.word_dim;
        let mut mean = vec![0.0; w];
        for &i in bag {
            for (m, x) in mean.iter_mut().zip(&self.vocab[i]) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= bag.len() as f64);
        (0..self.spec.visual_dim)
            .map(|r| {
                self.readout[r * w..(r + 1) * w]
                    .iter()
                    .zip(&mean)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    fn noisy(&mut self, latent: &[f64]) -> Vec<f32> {
        let noise = Normal::new(0.0, self.spec.signal_noise).expect("validated");
        latent
            .iter()
            .map(|&x| (x + noise.sample(&mut self.rng)) as f32)
            .collect()
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab: Vec<Vec<f64>> = (0..spec.vocab_size)
        .map(|_| {
            (0..spec.word_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    // scaled so latents have roughly unit variance per dimension
    let [wmin, wmax] = spec.words_per_query;
    let scale = ((wmin + wmax) as f64 / 2.0 / spec.word_dim as f64).sqrt();
    let readout: Vec<f64> = (0..spec.visual_dim * spec.word_dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect();
    let mut g = Generator {
        rng,
        vocab,
        readout,
        spec: spec.clone(),
    };

    let cfg = spec.preset.enum_config();
    let (lo, hi) = spec.clips_per_video.bounds();
    let mut videos = Vec::with_capacity(spec.num_videos);
    let mut features: Vec<Vec<f32>> = Vec::with_capacity(spec.num_videos);
    for v in 0..spec.num_videos {
        let n = g.rng.random_range(lo..=hi);
        let meta = VideoMeta::new(
            format!("vid{v:05}"),
            n as f64 * cfg.clip_length,
            cfg.clip_length,
            n,
            "",
        )?;
        let mut data = Vec::with_capacity(n * spec.visual_dim);
        for _ in 0..n {
            let bag = g.bag();
            let latent = g.latent(&bag);
            data.extend(g.noisy(&latent));
        }
        videos.push(meta);
        features.push(data);
    }

    let [pmin, pmax] = spec.planted_clips;
    let mut queries = Vec::new();
    let mut latents = Vec::new();
    for (v, meta) in videos.iter().enumerate() {
        let candidates: Vec<(usize, usize)> = enumerate_ranges(meta.num_clips, &cfg)
            .into_iter()
            .filter(|&(i, j)| (pmin..=pmax).contains(&(j - i + 1)))
            .collect();
        let mut taken: Vec<(usize, usize)> = Vec::new();
        for _ in 0..spec.queries_per_video {
            let free: Vec<(usize, usize)> = candidates
                .iter()
                .copied()
                .filter(|&(i, j)| taken.iter().all(|&(a, b)| j < a || b < i))
                .collect();
            if free.is_empty() {
                return Err(Error::Config(format!(
                    "synthetic spec: cannot plant {} disjoint moments in {}",
                    spec.queries_per_video, meta.video_id
                )));
            }
            let (i, j) = free[g.rng.random_range(0..free.len())];
            taken.push((i, j));
            let bag = g.bag();
            let latent = g.latent(&bag);
            for k in i..=j {
                let row = g.noisy(&latent);
                features[v][k * spec.visual_dim..(k + 1) * spec.visual_dim].copy_from_slice(&row);
            }
            let planted = meta.span_of(i, j);
            let exact = spec.annotations_per_query.min(2);
            let overlapping: Vec<(usize, usize)> = enumerate_ranges(meta.num_clips, &cfg)
                .into_iter()
                .filter(|&(a, b)| a <= j && i <= b && (a, b) != (i, j))
                .collect();
            let mut annotations = vec![planted; exact];
            for _ in exact..spec.annotations_per_query {
                let span = if overlapping.is_empty() || g.rng.random_bool(0.5) {
                    planted
                } else {
                    let (a, b) = overlapping[g.rng.random_range(0..overlapping.len())];
                    meta.span_of(a, b)
                };
                annotations.push(span);
            }
            let words: Vec<f32> = bag
                .iter()
                .flat_map(|&w| g.vocab[w].iter().map(|&x| x as f32))
                .collect();
            let query = Query::new(
                format!("q{:06}", queries.len()),
                FeatureMatrix::new(bag.len(), spec.word_dim, words)?,
                Some(GroundTruth::new(meta, annotations)?),
            )?;
            queries.push(LoadedQuery {
                query,
                split: Some(Split::Train),
            });
            latents.push(latent);
        }
    }

    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.shuffle(&mut g.rng);
    let n_test = (spec.test_fraction * queries.len() as f64).round() as usize;
    for &q in &order[..n_test] {
        queries[q].split = Some(Split::Test);
    }

    let entries = videos
        .into_iter()
        .zip(features)
        .map(|(meta, data)| {
            let n = meta.num_clips;
            Ok((meta, FeatureMatrix::new(n, spec.visual_dim, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticData {
        corpus: Corpus::new(entries)?,
        queries,
        latents,
    })
}

pub const SPEC_FILE: &str = "spec.json";

/// Generates a dataset and writes it, with its spec, under `dir`.
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<SyntheticData> {
    let data = generate_synthetic(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    save_dataset(dir, &data.corpus, &data.queries)?;
    let text = serde_json::to_string_pretty(spec)
        .map_err(|e| Error::Config(format!("synthetic spec: {e}")))?;
    let path = dir.join(SPEC_FILE);
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(data)
}
