//! Time-tagged detection streams and their on-disk formats.

mod format;

pub use format::{
    read_tags, read_tags_file, write_tags, write_tags_csv, write_tags_file, FormatError,
    TagFileHeader, TagFormat, TagReader, HEADER_LEN, MAGIC, RECORD_LEN, VERSION,
};

use thiserror::Error;

/// One detection event. Ordering is by time, then channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag {
    pub time_ps: u64,
    pub channel: u8,
}

impl Tag {
    pub fn new(channel: u8, time_ps: u64) -> Self {
        Tag { time_ps, channel }
    }
}

/// Acquisition metadata carried by both file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamMeta {
    /// Laser pulse spacing; 0 for an unpulsed source.
    pub rep_period_ps: u64,
    pub duration_ps: u64,
    pub channel_count: u8,
}

impl StreamMeta {
    pub fn new(rep_period_ps: u64, duration_ps: u64) -> Self {
        StreamMeta {
            rep_period_ps,
            duration_ps,
            channel_count: 2,
        }
    }
}

/// The part of the acquisition window the tags were drawn from.
///
/// Post-selected substreams only cover the bins assigned to one state; the
/// correlator needs that mask to normalize coincidences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Coverage {
    /// The whole window `[0, duration)`.
    Full,
    /// Selected bins of a regular grid.
    Bins {
        origin_ps: u64,
        width_ps: u64,
        selected: Vec<bool>,
    },
}

impl Coverage {
    pub fn live_time_ps(&self, duration_ps: u64) -> u64 {
        match self {
            Coverage::Full => duration_ps,
            Coverage::Bins {
                width_ps, selected, ..
            } => selected.iter().filter(|&&s| s).count() as u64 * width_ps,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StreamError {
    #[error("tag {index} at {time_ps} ps precedes its predecessor")]
    NotSorted { index: usize, time_ps: u64 },
    #[error("tag {index} at {time_ps} ps lies beyond the duration {duration_ps} ps")]
    OutOfWindow {
        index: usize,
        time_ps: u64,
        duration_ps: u64,
    },
    #[error("tag {index} has channel {channel}, expected 1..={channel_count}")]
    BadChannel {
        index: usize,
        channel: u8,
        channel_count: u8,
    },
}

/// Time-ordered detection events with their acquisition metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagStream {
    tags: Vec<Tag>,
    meta: StreamMeta,
    coverage: Coverage,
}

impl TimeTagStream {
    pub fn new(tags: Vec<Tag>, meta: StreamMeta) -> Result<Self, StreamError> {
        validate(&tags, &meta)?;
        Ok(TimeTagStream {
            tags,
            meta,
            coverage: Coverage::Full,
        })
    }

    /// Sorts the tags first.
    pub fn from_unsorted(mut tags: Vec<Tag>, meta: StreamMeta) -> Result<Self, StreamError> {
        tags.sort_unstable();
        Self::new(tags, meta)
    }

    pub fn empty(meta: StreamMeta) -> Self {
        TimeTagStream {
            tags: Vec::new(),
            meta,
            coverage: Coverage::Full,
        }
    }

    pub(crate) fn from_parts_unchecked(
        tags: Vec<Tag>,
        meta: StreamMeta,
        coverage: Coverage,
    ) -> Self {
        debug_assert!(validate(&tags, &meta).is_ok());
        TimeTagStream {
            tags,
            meta,
            coverage,
        }
    }

    pub fn with_coverage(mut self, coverage: Coverage) -> Self {
        self.coverage = coverage;
        self
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<Tag> {
        self.tags
    }

    pub fn meta(&self) -> &StreamMeta {
        &self.meta
    }

    pub fn coverage(&self) -> &Coverage {
        &self.coverage
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn live_time_ps(&self) -> u64 {
        self.coverage.live_time_ps(self.meta.duration_ps)
    }

    /// Sorted arrival times on one channel.
    pub fn channel_times(&self, channel: u8) -> Vec<u64> {
        self.tags
            .iter()
            .filter(|t| t.channel == channel)
            .map(|t| t.time_ps)
            .collect()
    }

    /// Mean count rate over the live time, counts/s.
    pub fn mean_rate_hz(&self) -> f64 {
        let live = self.live_time_ps();
        if live == 0 {
            0.0
        } else {
            self.tags.len() as f64 / (live as f64 * 1e-12)
        }
    }

    /// Tags in `[start, end)`, re-based to start at zero.
    pub fn slice(&self, start_ps: u64, end_ps: u64) -> TimeTagStream {
        let end_ps = end_ps.min(self.meta.duration_ps);
        let start_ps = start_ps.min(end_ps);
        let lo = self.tags.partition_point(|t| t.time_ps < start_ps);
        let hi = self.tags.partition_point(|t| t.time_ps < end_ps);
        let tags = self.tags[lo..hi]
            .iter()
            .map(|t| Tag::new(t.channel, t.time_ps - start_ps))
            .collect();
        let meta = StreamMeta {
            duration_ps: end_ps - start_ps,
            ..self.meta
        };
        TimeTagStream::from_parts_unchecked(tags, meta, Coverage::Full)
    }

    /// Merges two streams on the same time base.
    pub fn merge(&self, other: &TimeTagStream) -> TimeTagStream {
        let mut tags = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        while i < self.tags.len() && j < other.tags.len() {
            if self.tags[i] <= other.tags[j] {
                tags.push(self.tags[i]);
                i += 1;
            } else {
                tags.push(other.tags[j]);
                j += 1;
            }
        }
        tags.extend_from_slice(&self.tags[i..]);
        tags.extend_from_slice(&other.tags[j..]);
        let meta = StreamMeta {
            duration_ps: self.meta.duration_ps.max(other.meta.duration_ps),
            channel_count: self.meta.channel_count.max(other.meta.channel_count),
            ..self.meta
        };
        TimeTagStream::from_parts_unchecked(tags, meta, Coverage::Full)
    }
}

fn validate(tags: &[Tag], meta: &StreamMeta) -> Result<(), StreamError> {
    let mut prev: Option<Tag> = None;
    for (index, &tag) in tags.iter().enumerate() {
        if tag.channel == 0 || tag.channel > meta.channel_count {
            return Err(StreamError::BadChannel {
                index,
                channel: tag.channel,
                channel_count: meta.channel_count,
            });
        }
        if tag.time_ps > meta.duration_ps {
            return Err(StreamError::OutOfWindow {
                index,
                time_ps: tag.time_ps,
                duration_ps: meta.duration_ps,
            });
        }
        if let Some(p) = prev {
            if tag < p {
                return Err(StreamError::NotSorted {
                    index,
                    time_ps: tag.time_ps,
                });
            }
        }
        prev = Some(tag);
    }
    Ok(())
}
