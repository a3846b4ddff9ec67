//! Candidate moment generation and index-size accounting.
//!
//! Enumeration works in clip units. Second-valued settings (the fixed stride)
//! are converted to clips once, so candidate sets never depend on float drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Moment, VideoMeta};

/// How far apart consecutive start positions are for a given moment length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum StrideMode {
    /// Fixed stride in seconds, snapped to the clip grid.
    Fixed(f64),
    /// Stride proportional to the moment length (in clips).
    Proportional(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumConfig {
    pub clip_length: f64,
    /// Longest candidate, in clips.
    pub max_moment_clips: usize,
    pub stride_mode: StrideMode,
    pub min_moment_clips: usize,
    /// Candidate lengths are `min_moment_clips + n * length_step`.
    #[serde(default = "one")]
    pub length_step: usize,
}

fn one() -> usize {
    1
}

impl EnumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_length.is_finite() && self.clip_length > 0.0) {
            return Err(Error::Config(format!(
                "clip length {} must be positive",
                self.clip_length
            )));
        }
        if self.min_moment_clips < 2 {
            return Err(Error::Config("moments need at least two clips".into()));
        }
        if self.max_moment_clips < self.min_moment_clips {
            return Err(Error::Config(format!(
                "max moment length {} below minimum {}",
                self.max_moment_clips, self.min_moment_clips
            )));
        }
        if self.length_step == 0 {
            return Err(Error::Config("length step must be positive".into()));
        }
        match self.stride_mode {
            StrideMode::Fixed(s) => {
                if !(s.is_finite() && (s / self.clip_length).round() >= 1.0) {
                    return Err(Error::Config(format!(
                        "fixed stride {s} s is not a positive multiple of the clip length"
                    )));
                }
            }
            StrideMode::Proportional(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::Config(format!("stride ratio {r} outside (0, 1]")));
                }
            }
        }
        Ok(())
    }

    /// Candidate lengths (in clips) admissible in a video of `num_clips` clips.
    pub fn lengths(&self, num_clips: usize) -> impl Iterator<Item = usize> {
        let top = self.max_moment_clips.min(num_clips);
        (self.min_moment_clips..=top).step_by(self.length_step)
    }
}

/// Stride in clips for moments of `moment_clips` clips. Halves round away from zero.
pub fn stride_clips(moment_clips: usize, cfg: &EnumConfig) -> usize {
    let raw = match cfg.stride_mode {
        StrideMode::Fixed(seconds) => (seconds / cfg.clip_length).round(),
        StrideMode::Proportional(ratio) => (ratio * moment_clips as f64).round(),
    };
    (raw as usize).max(1)
}

/// Candidate clip ranges `(first, last)` for a video with `num_clips` clips,
/// sorted by `(first, last)`.
pub fn enumerate_ranges(num_clips: usize, cfg: &EnumConfig) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for len in cfg.lengths(num_clips) {
        let stride = stride_clips(len, cfg);
        let mut start = 0;
        while start + len <= num_clips {
            out.push((start, start + len - 1));
            start += stride;
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Result of enumerating one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumerated {
    pub moments: Vec<Moment>,
    pub diagnostic: Option<String>,
}

pub fn enumerate_moments(video: &VideoMeta, cfg: &EnumConfig) -> Enumerated {
    if video.num_clips < cfg.min_moment_clips {
        return Enumerated {
            moments: Vec::new(),
            diagnostic: Some(format!(
                "{}: {} clips is shorter than the {}-clip minimum moment",
                video.video_id, video.num_clips, cfg.min_moment_clips
            )),
        };
    }
    let moments = enumerate_ranges(video.num_clips, cfg)
        .into_iter()
        .map(|(i, j)| Moment {
            video_id: video.video_id.clone(),
            first_clip: i,
            last_clip: j,
            span: video.span_of(i, j),
        })
        .collect();
    Enumerated {
        moments,
        diagnostic: None,
    }
}

/// Entries needed to index every moment of length `min_len..=K` in an
/// `n`-clip video. With `min_len = 1` and `n >= k` this is `nK - K(K-1)/2`.
pub fn aggregate_index_entries(n: usize, k: usize, min_len: usize) -> usize {
    let min_len = min_len.max(1);
    (min_len..=k.min(n)).map(|len| n - len + 1).sum()
}

/// Entries needed to index the clips of an `n`-clip video.
pub fn clip_index_entries(n: usize) -> usize {
    n
}

/// Dataset presets bundling grid settings with evaluation and sampling knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Didemo,
    CharadesSta,
    Activitynet,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Didemo, Preset::CharadesSta, Preset::Activitynet];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Didemo => "didemo",
            Preset::CharadesSta => "charades-sta",
            Preset::Activitynet => "activitynet",
        }
    }

    pub fn enum_config(self) -> EnumConfig {
        match self {
            // 5 s annotation units made of two 2.5 s clips; up to six units.
            Preset::Didemo => EnumConfig {
                clip_length: 2.5,
                max_moment_clips: 12,
                stride_mode: StrideMode::Fixed(5.0),
                min_moment_clips: 2,
                length_step: 2,
            },
            Preset::CharadesSta => EnumConfig {
                clip_length: 3.0,
                max_moment_clips: 8,
                stride_mode: StrideMode::Proportional(0.3),
                min_moment_clips: 2,
                length_step: 1,
            },
            Preset::Activitynet => EnumConfig {
                clip_length: 5.0,
                max_moment_clips: 26,
                stride_mode: StrideMode::Proportional(0.3),
                min_moment_clips: 2,
                length_step: 1,
            },
        }
    }

    /// NMS threshold used when ranking moments.
    pub fn nms_iou(self) -> f64 {
        match self {
            Preset::Didemo => 1.0,
            Preset::CharadesSta => 0.6,
            Preset::Activitynet => 0.5,
        }
    }

    /// Annotations a prediction must match to count as correct.
    pub fn min_judgments(self) -> usize {
        match self {
            Preset::Didemo => 2,
            _ => 1,
        }
    }

    /// Intra-video negatives must have IoU strictly below this with ground truth.
    pub fn intra_iou_exclusion(self) -> f64 {
        match self {
            Preset::Didemo => 1.0,
            _ => 0.35,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
