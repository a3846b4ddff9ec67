#![allow(dead_code)]

use cal_core::{Corpus, Dataset, FeatureMatrix, GroundTruth, Query, TemporalSpan, VideoMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random features for `clips.len()` videos and one query per ground-truth
/// triple `(video, start, end)`.
pub fn random_dataset(
    seed: u64,
    clips: &[usize],
    visual_dim: usize,
    word_dim: usize,
    gts: &[(usize, f64, f64)],
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip_len = 2.0;
    let entries = clips
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let v =
                VideoMeta::new(format!("v{k:03}"), n as f64 * clip_len, clip_len, n, "").unwrap();
            let data = (0..n * visual_dim)
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect();
            (v, FeatureMatrix::new(n, visual_dim, data).unwrap())
        })
        .collect();
    let corpus = Corpus::new(entries).unwrap();
    let queries = gts
        .iter()
        .enumerate()
        .map(|(qi, &(v, s, e))| {
            let gt =
                GroundTruth::new(corpus.video(v), vec![TemporalSpan::new(s, e).unwrap()]).unwrap();
            let words = rng.random_range(2..5);
            let data = (0..words * word_dim)
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect();
            let wv = FeatureMatrix::new(words, word_dim, data).unwrap();
            Query::new(format!("q{qi}"), wv, Some(gt)).unwrap()
        })
        .collect();
    Dataset::new(corpus, queries).unwrap()
}
