//! In-memory corpus and query collections.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::compute_context;
use crate::types::{FeatureMatrix, Moment, Query, TemporalSpan, VideoMeta};

/// Videos with their clip features, held sorted by `video_id` so that video
/// ordinals order the same way as ids.
#[derive(Debug, Clone)]
pub struct Corpus {
    videos: Vec<VideoMeta>,
    features: Vec<FeatureMatrix>,
    contexts: Vec<Vec<f64>>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(entries: Vec<(VideoMeta, FeatureMatrix)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.video_id.cmp(&b.0.video_id));
        let dim = entries[0].1.dim();
        let mut by_id = HashMap::with_capacity(entries.len());
        for (ordinal, (video, feats)) in entries.iter().enumerate() {
            video.validate()?;
            if feats.rows() != video.num_clips {
                return Err(Error::InvalidVideo {
                    video_id: video.video_id.clone(),
                    reason: format!(
                        "{} feature rows for {} clips",
                        feats.rows(),
                        video.num_clips
                    ),
                });
            }
            if feats.dim() != dim {
                return Err(Error::DimMismatch {
                    context: "corpus feature dimension",
                    expected: dim,
                    actual: feats.dim(),
                });
            }
            if by_id.insert(video.video_id.clone(), ordinal).is_some() {
                return Err(Error::InvalidVideo {
                    video_id: video.video_id.clone(),
                    reason: "duplicate video id".into(),
                });
            }
        }
        let contexts = entries.iter().map(|(_, f)| compute_context(f)).collect();
        let (videos, features) = entries.into_iter().unzip();
        Ok(Self {
            videos,
            features,
            contexts,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn videos(&self) -> &[VideoMeta] {
        &self.videos
    }

    pub fn video(&self, ordinal: usize) -> &VideoMeta {
        &self.videos[ordinal]
    }

    pub fn features(&self, ordinal: usize) -> &FeatureMatrix {
        &self.features[ordinal]
    }

    pub fn context(&self, ordinal: usize) -> &[f64] {
        &self.contexts[ordinal]
    }

    pub fn ordinal(&self, video_id: &str) -> Option<usize> {
        self.by_id.get(video_id).copied()
    }

    pub fn require_ordinal(&self, video_id: &str) -> Result<usize> {
        self.ordinal(video_id)
            .ok_or_else(|| Error::UnknownVideo(video_id.to_string()))
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].dim()
    }

    pub fn total_clips(&self) -> usize {
        self.videos.iter().map(|v| v.num_clips).sum()
    }

    pub fn into_parts(self) -> Vec<(VideoMeta, FeatureMatrix)> {
        self.videos.into_iter().zip(self.features).collect()
    }
}

/// Queries paired with the corpus they refer to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub queries: Vec<Query>,
}

impl Dataset {
    pub fn new(corpus: Corpus, queries: Vec<Query>) -> Result<Self> {
        for q in &queries {
            if let Some(gt) = &q.ground_truth {
                let ordinal = corpus.require_ordinal(&gt.video_id)?;
                let duration = corpus.video(ordinal).duration;
                if gt.annotations.iter().any(|a| a.end > duration + 1e-9) {
                    return Err(Error::InvalidVideo {
                        video_id: gt.video_id.clone(),
                        reason: format!(
                            "annotation of query {} runs past the end of the video",
                            q.query_id
                        ),
                    });
                }
            }
        }
        Ok(Self { corpus, queries })
    }
}

/// A moment addressed by video ordinal within a [`Corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MomentRef {
    pub video: usize,
    pub first: usize,
    pub last: usize,
}

impl MomentRef {
    pub fn new(video: usize, first: usize, last: usize) -> Self {
        Self { video, first, last }
    }

    pub fn to_moment(self, corpus: &Corpus) -> Moment {
        let video = corpus.video(self.video);
        Moment {
            video_id: video.video_id.clone(),
            first_clip: self.first,
            last_clip: self.last,
            span: video.span_of(self.first, self.last),
        }
    }

    pub fn span(self, corpus: &Corpus) -> TemporalSpan {
        corpus.video(self.video).span_of(self.first, self.last)
    }

    pub fn num_clips(self) -> usize {
        self.last - self.first + 1
    }
}

impl Corpus {
    /// Resolves a moment to its ordinal form, validating the clip range.
    pub fn moment_ref(&self, moment: &Moment) -> Result<MomentRef> {
        let ordinal = self.require_ordinal(&moment.video_id)?;
        Moment::new(self.video(ordinal), moment.first_clip, moment.last_clip)?;
        Ok(MomentRef::new(ordinal, moment.first_clip, moment.last_clip))
    }
}
