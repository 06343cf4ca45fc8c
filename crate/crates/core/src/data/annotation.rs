use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default annotation rate: one valence value every 40 ms.
pub const DEFAULT_SAMPLE_PERIOD_MS: u64 = 40;

/// One viewer's continuous valence stream for one movie.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTrack {
    pub movie_id: String,
    /// 1-based viewer index.
    pub viewer_id: usize,
    pub sample_period_ms: u64,
    values: Vec<f64>,
}

impl AnnotationTrack {
    pub fn new(movie_id: impl Into<String>, viewer_id: usize, sample_period_ms: u64, values: Vec<f64>) -> Result<Self> {
        if sample_period_ms == 0 {
            return Err(Error::Invalid("sample period must be positive".into()));
        }
        if values.is_empty() {
            return Err(Error::Invalid("annotation track is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Invalid(format!("valence {} at sample {i} is outside [-1, 1]", values[i])));
        }
        Ok(Self { movie_id: movie_id.into(), viewer_id, sample_period_ms, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// End of the covered time range (exclusive), in ms.
    pub fn end_ms(&self) -> u64 {
        self.values.len() as u64 * self.sample_period_ms
    }

    /// Indices of samples with `start_ms <= t < end_ms`.
    pub fn sample_range(&self, start_ms: u64, end_ms: u64) -> std::ops::Range<usize> {
        let p = self.sample_period_ms;
        let first = start_ms.div_ceil(p) as usize;
        let last = (end_ms.div_ceil(p) as usize).min(self.values.len());
        first.min(last)..last
    }
}

/// A subtitle-aligned time span of one movie.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub movie_id: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: String,
}

impl SegmentSpec {
    pub fn new(movie_id: impl Into<String>, start_ms: u64, end_ms: u64, text: impl Into<String>) -> Result<Self> {
        if start_ms >= end_ms {
            return Err(Error::Invalid(format!("segment start {start_ms} ms is not before end {end_ms} ms")));
        }
        Ok(Self { movie_id: movie_id.into(), start_ms, end_ms, text: text.into() })
    }

    /// Short human-readable identifier used in error messages.
    pub fn label(&self) -> String {
        format!("{}@{}-{}ms", self.movie_id, self.start_ms, self.end_ms)
    }
}

/// Binary valence class. `Negative < Positive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn as_f64(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

/// Arithmetic mean of the samples falling in `[start_ms, end_ms)`.
pub fn segment_mean(track: &AnnotationTrack, seg: &SegmentSpec) -> Result<f64> {
    let range = track.sample_range(seg.start_ms, seg.end_ms);
    if range.is_empty() {
        return Err(Error::EmptyOverlap { segment: seg.label(), start_ms: seg.start_ms, end_ms: seg.end_ms });
    }
    let samples = &track.values()[range];
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Positive iff the mean is strictly above `threshold`; a tie is negative.
pub fn binarize(mean_valence: f64, threshold: f64) -> Label {
    if mean_valence > threshold {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// Mean over the viewers whose value is present.
pub fn average_viewer(per_viewer_means: &[Option<f64>]) -> Result<f64> {
    let (sum, count) = per_viewer_means
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if count == 0 {
        return Err(Error::AllAbsent);
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(values: &[f64]) -> AnnotationTrack {
        AnnotationTrack::new("M", 1, 40, values.to_vec()).unwrap()
    }

    fn seg(start: u64, end: u64) -> SegmentSpec {
        SegmentSpec::new("M", start, end, "").unwrap()
    }

    #[test]
    fn mean_of_covered_samples() {
        assert!((segment_mean(&track(&[0.2, 0.4]), &seg(0, 80)).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(segment_mean(&track(&[0.1, -0.7, 0.3]), &seg(40, 80)).unwrap(), -0.7);
    }

    #[test]
    fn half_open_inclusion() {
        // Samples sit at 0, 40, 80, 120 ms; [0, 120) takes the first three.
        let t = track(&[0.1, 0.2, 0.3, 0.9]);
        assert_eq!(t.sample_range(0, 120), 0..3);
        assert!((segment_mean(&t, &seg(0, 120)).unwrap() - 0.2).abs() < 1e-15);
        // [1, 41) contains only the sample at 40 ms.
        assert_eq!(segment_mean(&t, &seg(1, 41)).unwrap(), 0.2);
    }

    #[test]
    fn empty_overlap_is_an_error() {
        let t = track(&[0.1, 0.2]);
        assert!(matches!(segment_mean(&t, &seg(1, 39)), Err(Error::EmptyOverlap { .. })));
        assert!(matches!(segment_mean(&t, &seg(200, 400)), Err(Error::EmptyOverlap { .. })));
    }

    #[test]
    fn binarize_threshold_and_tie() {
        assert_eq!(binarize(0.3, 0.0), Label::Positive);
        assert_eq!(binarize(-0.2, 0.0), Label::Negative);
        assert_eq!(binarize(0.0, 0.0), Label::Negative);
        assert_eq!(binarize(0.3, 0.5), Label::Negative);
    }

    #[test]
    fn average_viewer_cases() {
        assert_eq!(average_viewer(&[Some(0.5), Some(0.5), Some(0.5)]).unwrap(), 0.5);
        assert!((average_viewer(&[Some(0.4); 7]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(average_viewer(&[Some(1.0), Some(-1.0)]).unwrap(), 0.0);
        assert_eq!(average_viewer(&[Some(0.5), None, Some(-0.1)]).unwrap(), 0.2);
        assert!(matches!(average_viewer(&[None, None]), Err(Error::AllAbsent)));
    }

    #[test]
    fn track_validation() {
        assert!(AnnotationTrack::new("M", 1, 40, vec![]).is_err());
        assert!(AnnotationTrack::new("M", 1, 0, vec![0.0]).is_err());
        assert!(AnnotationTrack::new("M", 1, 40, vec![1.2]).is_err());
        assert!(SegmentSpec::new("M", 5, 5, "").is_err());
    }
}
