//! Annotation CSV and simplified SRT readers and writers.

use std::fmt::Write as _;
use std::path::Path;

use super::annotation::{AnnotationTrack, SegmentSpec};
use crate::error::{Error, Result};

pub const ANNOTATION_HEADER: &str = "frame_index,valence";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses an annotation CSV. Frame indices must run 0, 1, 2, ... in order.
pub fn parse_annotation_csv(
    text: &str,
    path: &Path,
    movie_id: &str,
    viewer_id: usize,
    sample_period_ms: u64,
) -> Result<AnnotationTrack> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == ANNOTATION_HEADER => {}
        _ => return Err(parse_err(path, 1, format!("expected header `{ANNOTATION_HEADER}`"))),
    }
    let mut values = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (frame, value) =
            line.split_once(',').ok_or_else(|| parse_err(path, lineno, "expected `frame_index,valence`"))?;
        let frame: usize =
            frame.trim().parse().map_err(|_| parse_err(path, lineno, format!("bad frame index `{frame}`")))?;
        if frame != values.len() {
            return Err(parse_err(path, lineno, format!("expected frame {}, found {frame}", values.len())));
        }
        let value: f64 =
            value.trim().parse().map_err(|_| parse_err(path, lineno, format!("bad valence `{value}`")))?;
        if !(-1.0..=1.0).contains(&value) {
            return Err(parse_err(path, lineno, format!("valence {value} outside [-1, 1]")));
        }
        values.push(value);
    }
    if values.is_empty() {
        return Err(parse_err(path, 1, "no annotation rows"));
    }
    AnnotationTrack::new(movie_id, viewer_id, sample_period_ms, values)
}

pub fn read_annotation_csv(path: &Path, movie_id: &str, viewer_id: usize, sample_period_ms: u64) -> Result<AnnotationTrack> {
    parse_annotation_csv(&read_text(path)?, path, movie_id, viewer_id, sample_period_ms)
}

pub fn format_annotation_csv(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 12 + 24);
    out.push_str(ANNOTATION_HEADER);
    out.push('\n');
    for (i, v) in values.iter().enumerate() {
        // Fixed precision keeps regenerated files byte-identical and small.
        let _ = writeln!(out, "{i},{v:.4}");
    }
    out
}

fn parse_timestamp(s: &str) -> Option<u64> {
    let (hms, ms) = s.trim().split_once(',')?;
    let mut parts = hms.split(':');
    let h: u64 = parts.next()?.parse().ok()?;
    let m: u64 = parts.next()?.parse().ok()?;
    let sec: u64 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || m >= 60 || sec >= 60 || ms.len() != 3 {
        return None;
    }
    let ms: u64 = ms.parse().ok()?;
    Some(((h * 60 + m) * 60 + sec) * 1000 + ms)
}

pub fn format_timestamp(ms: u64) -> String {
    let (h, rem) = (ms / 3_600_000, ms % 3_600_000);
    let (m, rem) = (rem / 60_000, rem % 60_000);
    let (s, milli) = (rem / 1000, rem % 1000);
    format!("{h:02}:{m:02}:{s:02},{milli:03}")
}

/// Parses subtitle blocks: index line, `start --> end` line, text lines,
/// blank separator. Segments must be sorted and non-overlapping.
pub fn parse_srt(text: &str, path: &Path, movie_id: &str) -> Result<Vec<SegmentSpec>> {
    let mut segments: Vec<SegmentSpec> = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    loop {
        while lines.peek().is_some_and(|(_, l)| l.trim().is_empty()) {
            lines.next();
        }
        let Some((i, index_line)) = lines.next() else { break };
        let index_line = index_line.trim_start_matches('\u{feff}').trim();
        if index_line.parse::<u64>().is_err() {
            return Err(parse_err(path, i + 1, format!("expected subtitle index, found `{index_line}`")));
        }
        let (j, timing) = lines.next().ok_or_else(|| parse_err(path, i + 2, "missing timing line"))?;
        let (start, end) = timing
            .split_once("-->")
            .and_then(|(a, b)| Some((parse_timestamp(a)?, parse_timestamp(b)?)))
            .ok_or_else(|| parse_err(path, j + 1, format!("bad timing line `{}`", timing.trim())))?;
        let mut body = Vec::new();
        while let Some((_, l)) = lines.peek() {
            if l.trim().is_empty() {
                break;
            }
            body.push(l.trim().to_string());
            lines.next();
        }
        let seg = SegmentSpec::new(movie_id, start, end, body.join(" "))
            .map_err(|e| parse_err(path, j + 1, e.to_string()))?;
        if let Some(prev) = segments.last() {
            if seg.start_ms < prev.end_ms {
                return Err(parse_err(path, j + 1, "subtitle overlaps or precedes the previous one"));
            }
        }
        segments.push(seg);
    }
    Ok(segments)
}

pub fn read_srt(path: &Path, movie_id: &str) -> Result<Vec<SegmentSpec>> {
    parse_srt(&read_text(path)?, path, movie_id)
}

pub fn format_srt(segments: &[SegmentSpec]) -> String {
    let mut out = String::new();
    for (i, s) in segments.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "{}", i + 1);
        let _ = writeln!(out, "{} --> {}", format_timestamp(s.start_ms), format_timestamp(s.end_ms));
        let _ = writeln!(out, "{}", s.text);
    }
    out
}
