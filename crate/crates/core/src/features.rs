//! Text tokenization into fixed-length id sequences and temporal pooling of
//! precomputed visual chunk features.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledSample, SegmentSpec};
use crate::error::{Error, Result};

/// Words per sentence after padding or truncation.
pub const MAX_TOKENS: usize = 18;
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Movie frame rate used to map milliseconds onto frames.
pub const DEFAULT_FPS: u64 = 25;
pub const DEFAULT_WINDOW: usize = 16;
pub const DEFAULT_STRIDE: usize = 8;
pub const FVEC_MAGIC: &[u8] = b"FVEC1\n";

/// Lowercase, split on whitespace, strip punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .flat_map(|w| w.split(|c: char| !c.is_alphanumeric() && c != '\''))
        .map(|w| w.trim_matches('\'').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Counts tokens and keeps those seen at least `min_count` times, ordered
    /// by descending frequency then lexicographically.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
            .into_iter()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens).expect("reserved tokens cannot collide with tokenized words")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(Error::Invalid("vocabulary must start with the PAD and UNK tokens".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Builds the vocabulary from training samples only.
pub fn build_vocab(training_samples: &[LabeledSample], min_count: usize) -> Vocabulary {
    Vocabulary::from_texts(training_samples.iter().map(|s| s.segment.text.as_str()), min_count)
}

/// Exactly [`MAX_TOKENS`] ids, front-aligned and padded at the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSeq(pub [usize; MAX_TOKENS]);

impl TokenSeq {
    pub fn ids(&self) -> &[usize] {
        &self.0
    }
}

pub fn tokenize_pad(text: &str, vocab: &Vocabulary) -> TokenSeq {
    let mut ids = [PAD_ID; MAX_TOKENS];
    for (slot, tok) in ids.iter_mut().zip(tokenize(text)) {
        *slot = vocab.id(&tok);
    }
    TokenSeq(ids)
}

/// Per-movie visual chunk features from an external extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatureSet {
    pub movie_id: String,
    pub window: usize,
    pub stride: usize,
    dim: usize,
    data: Vec<f64>,
}

impl VisualFeatureSet {
    pub fn new(movie_id: impl Into<String>, window: usize, stride: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if window == 0 || stride == 0 || dim == 0 {
            return Err(Error::Invalid("window, stride and feature_dim must be positive".into()));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::Invalid(format!("{} values do not form chunks of dimension {dim}", data.len())));
        }
        Ok(Self { movie_id: movie_id.into(), window, stride, dim, data })
    }

    pub fn num_chunks(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }

    pub fn chunk(&self, c: usize) -> &[f64] {
        &self.data[c * self.dim..(c + 1) * self.dim]
    }

    /// First frame covered by chunk `c`; the chunk spans `window` frames.
    pub fn chunk_start(&self, c: usize) -> usize {
        c * self.stride
    }

    /// Chunks assigned to the frame span `[first, end)`: those lying fully
    /// inside it, or, when the span is shorter than a window, those sharing
    /// at least one frame with it.
    pub fn chunks_for_frames(&self, first: usize, end: usize) -> Vec<usize> {
        let contained: Vec<usize> = (0..self.num_chunks())
            .filter(|&c| self.chunk_start(c) >= first && self.chunk_start(c) + self.window <= end)
            .collect();
        if !contained.is_empty() {
            return contained;
        }
        (0..self.num_chunks())
            .filter(|&c| self.chunk_start(c) < end && self.chunk_start(c) + self.window > first)
            .collect()
    }

    pub fn to_fvec_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.data.len() * 4);
        out.extend_from_slice(FVEC_MAGIC);
        out.extend_from_slice(
            format!("{} {} {} {}\n", self.num_chunks(), self.dim, self.window, self.stride).as_bytes(),
        );
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_fvec_bytes(bytes: &[u8], movie_id: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, message: &str| Error::Parse { path: path.to_path_buf(), line, message: message.into() };
        let rest = bytes.strip_prefix(FVEC_MAGIC).ok_or_else(|| bad(1, "missing FVEC1 magic"))?;
        let newline = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad(2, "missing header line"))?;
        let header = std::str::from_utf8(&rest[..newline]).map_err(|_| bad(2, "header is not ASCII"))?;
        let fields: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(2, "header must be four integers"))?;
        let [chunks, dim, window, stride] = fields[..] else {
            return Err(bad(2, "header must be `num_chunks feature_dim window stride`"));
        };
        let body = &rest[newline + 1..];
        if chunks == 0 || body.len() != chunks * dim * 4 {
            return Err(bad(3, &format!("expected {} float32 values, found {} bytes", chunks * dim, body.len())));
        }
        let mut data = Vec::with_capacity(chunks * dim);
        for (i, b) in body.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(bad(3, &format!("non-finite value at index {i}")));
            }
            data.push(v as f64);
        }
        Self::new(movie_id, window, stride, dim, data)
    }

    pub fn read(path: &Path, movie_id: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_fvec_bytes(&bytes, movie_id, path)
    }
}

/// Frames `[first, end)` whose timestamps fall in the segment.
pub fn segment_frames(seg: &SegmentSpec, fps: u64) -> (usize, usize) {
    // Frame f is shown at f·1000/fps ms.
    let first = (seg.start_ms * fps).div_ceil(1000) as usize;
    let end = (seg.end_ms * fps).div_ceil(1000) as usize;
    (first, end)
}

/// Elementwise maximum over the chunk vectors assigned to the segment.
pub fn segment_visual_feature(features: &VisualFeatureSet, seg: &SegmentSpec, fps: u64) -> Result<Vec<f64>> {
    let (first, end) = segment_frames(seg, fps);
    let chunks = features.chunks_for_frames(first, end);
    let mut iter = chunks.into_iter();
    let first_chunk = iter.next().ok_or_else(|| Error::NoOverlappingChunk { segment: seg.label() })?;
    let mut pooled = features.chunk(first_chunk).to_vec();
    for c in iter {
        for (p, v) in pooled.iter_mut().zip(features.chunk(c)) {
            *p = p.max(*v);
        }
    }
    Ok(pooled)
}
