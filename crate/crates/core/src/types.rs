//! Domain types shared by every stage of the engine, plus temporal geometry.
//!
//! Clip indices are zero-based. Clip `k` of a video covers
//! `[k * clip_length, min((k + 1) * clip_length, duration)]`, so the last clip
//! may be shorter than the others.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalSpan {
    pub start: f64,
    pub end: f64,
}

impl TemporalSpan {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || start >= end {
            return Err(Error::InvalidSpan { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Temporal intersection over union of two spans.
pub fn temporal_iou(a: &TemporalSpan, b: &TemporalSpan) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.end.max(b.end) - a.start.min(b.start);
    inter / union
}

/// Row-major matrix of 32-bit features, the in-memory form of a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows * dim != data.len() {
            return Err(Error::DimMismatch {
                context: "feature matrix",
                expected: rows * dim,
                actual: data.len(),
            });
        }
        if dim == 0 {
            return Err(Error::Empty("feature dimension"));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature matrix at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or(Error::Empty("feature rows"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    context: "feature rows",
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Per-video metadata: the clip grid and where its features live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub duration: f64,
    pub clip_length: f64,
    pub num_clips: usize,
    pub feature_ref: String,
}

impl VideoMeta {
    pub fn new(
        video_id: impl Into<String>,
        duration: f64,
        clip_length: f64,
        num_clips: usize,
        feature_ref: impl Into<String>,
    ) -> Result<Self> {
        let video = Self {
            video_id: video_id.into(),
            duration,
            clip_length,
            num_clips,
            feature_ref: feature_ref.into(),
        };
        video.validate()?;
        Ok(video)
    }

    /// Builds the clip grid covering `duration`, with a partial last clip if needed.
    pub fn from_duration(
        video_id: impl Into<String>,
        duration: f64,
        clip_length: f64,
        feature_ref: impl Into<String>,
    ) -> Result<Self> {
        let num_clips = if clip_length > 0.0 && duration.is_finite() {
            (duration / clip_length).ceil() as usize
        } else {
            0
        };
        Self::new(video_id, duration, clip_length, num_clips, feature_ref)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidVideo {
                video_id: self.video_id.clone(),
                reason,
            })
        };
        if self.video_id.is_empty() {
            return fail("empty video id".into());
        }
        if !(self.clip_length.is_finite() && self.clip_length > 0.0) {
            return fail(format!("clip length {} must be positive", self.clip_length));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return fail(format!("duration {} must be positive", self.duration));
        }
        if self.num_clips < 2 {
            return fail(format!("{} clips, need at least 2", self.num_clips));
        }
        let n = self.num_clips as f64;
        if n * self.clip_length > self.duration + self.clip_length {
            return fail(format!(
                "{} clips of {} s exceed duration {}",
                self.num_clips, self.clip_length, self.duration
            ));
        }
        if (n - 1.0) * self.clip_length >= self.duration {
            return fail(format!(
                "last clip starts at or after the end of the video ({} s)",
                self.duration
            ));
        }
        Ok(())
    }

    /// Span of clip `k`, clamped to the video duration.
    pub fn clip_span(&self, k: usize) -> Result<TemporalSpan> {
        if k >= self.num_clips {
            return Err(Error::ClipOutOfRange {
                video_id: self.video_id.clone(),
                index: k,
                num_clips: self.num_clips,
            });
        }
        Ok(self.span_of(k, k))
    }

    /// Span covering clips `first..=last`; callers guarantee the range is valid.
    pub fn span_of(&self, first: usize, last: usize) -> TemporalSpan {
        TemporalSpan {
            start: first as f64 * self.clip_length,
            end: ((last + 1) as f64 * self.clip_length).min(self.duration),
        }
    }
}

/// Free-function form of [`VideoMeta::clip_span`].
pub fn clip_span(video: &VideoMeta, k: usize) -> Result<TemporalSpan> {
    video.clip_span(k)
}

/// A contiguous run of at least two clips inside one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub video_id: String,
    pub first_clip: usize,
    pub last_clip: usize,
    pub span: TemporalSpan,
}

impl Moment {
    pub fn new(video: &VideoMeta, first_clip: usize, last_clip: usize) -> Result<Self> {
        if first_clip >= last_clip || last_clip >= video.num_clips {
            return Err(Error::InvalidMoment {
                video_id: video.video_id.clone(),
                first: first_clip,
                last: last_clip,
                reason: format!(
                    "need first < last < {} (at least two clips)",
                    video.num_clips
                ),
            });
        }
        Ok(Self {
            video_id: video.video_id.clone(),
            first_clip,
            last_clip,
            span: video.span_of(first_clip, last_clip),
        })
    }

    pub fn num_clips(&self) -> usize {
        self.last_clip - self.first_clip + 1
    }

    pub fn contains_clip(&self, k: usize) -> bool {
        self.first_clip <= k && k <= self.last_clip
    }
}

/// Human-annotated location of a query: one span per judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub annotations: Vec<TemporalSpan>,
}

impl GroundTruth {
    pub fn new(video: &VideoMeta, annotations: Vec<TemporalSpan>) -> Result<Self> {
        if annotations.is_empty() {
            return Err(Error::Empty("ground-truth annotations"));
        }
        for a in &annotations {
            if a.start < 0.0 || a.end > video.duration + 1e-9 {
                return Err(Error::InvalidSpan {
                    start: a.start,
                    end: a.end,
                });
            }
        }
        Ok(Self {
            video_id: video.video_id.clone(),
            annotations,
        })
    }

    /// Largest IoU between `span` and any annotation.
    pub fn max_iou(&self, span: &TemporalSpan) -> f64 {
        self.annotations
            .iter()
            .map(|a| temporal_iou(a, span))
            .fold(0.0, f64::max)
    }
}

/// A natural-language query, represented by its word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: String,
    pub word_vectors: FeatureMatrix,
    pub ground_truth: Option<GroundTruth>,
}

impl Query {
    pub fn new(
        query_id: impl Into<String>,
        word_vectors: FeatureMatrix,
        ground_truth: Option<GroundTruth>,
    ) -> Result<Self> {
        if word_vectors.rows() == 0 {
            return Err(Error::Empty("query word vectors"));
        }
        Ok(Self {
            query_id: query_id.into(),
            word_vectors,
            ground_truth,
        })
    }
}
