//! Synthetic corpora with controllable inter-viewer agreement.
//!
//! Each segment carries a shared affect signal `s` and one idiosyncratic
//! component per viewer. Viewer `i` perceives
//! `clip(ρ·s + (1-ρ)·ε_i + bias_i)`, where `ε_i` mixes an attribute that is
//! visible in the visual features with noise that is not. Subtitle text is
//! drawn from word pools conditioned on the sign and strength of `s`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::annotation::{AnnotationTrack, SegmentSpec, DEFAULT_SAMPLE_PERIOD_MS};
use super::dataset::{Dataset, DatasetManifest, LabeledSample, MovieEntry};
use super::formats::{format_annotation_csv, format_srt};
use super::{segment_mean, PROTOCOL_MOVIES};
use crate::error::{Error, Result};
use crate::features::{segment_visual_feature, VisualFeatureSet, DEFAULT_FPS, DEFAULT_STRIDE, DEFAULT_WINDOW};

/// Spread of the latent affect components before clipping.
const LATENT_SD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub movies: usize,
    pub segments_per_movie: usize,
    pub viewers: usize,
    /// Weight ρ of the shared signal, in `[0, 1]`.
    pub correlation: f64,
    /// Per-frame annotation jitter.
    pub noise_scale: f64,
    /// Spread of the constant per-viewer offsets.
    pub bias_scale: f64,
    /// Share of each viewer's idiosyncratic variance explained by visual content.
    pub visibility: f64,
    /// Per-chunk noise added to visual features.
    pub feature_noise: f64,
    pub vocab_size: usize,
    pub feature_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            movies: 7,
            segments_per_movie: 60,
            viewers: 7,
            correlation: 0.6,
            noise_scale: 0.1,
            bias_scale: 0.1,
            visibility: 0.3,
            feature_noise: 1.5,
            vocab_size: 400,
            feature_dim: 32,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("correlation", self.correlation)?;
        unit("visibility", self.visibility)?;
        for (name, v) in [("noise_scale", self.noise_scale), ("bias_scale", self.bias_scale), ("feature_noise", self.feature_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.movies == 0 || self.segments_per_movie == 0 || self.viewers == 0 || self.feature_dim == 0 {
            return Err(Error::Invalid("movie, segment, viewer and feature counts must be positive".into()));
        }
        if self.vocab_size < 8 {
            return Err(Error::Invalid("vocab_size must be at least 8".into()));
        }
        Ok(())
    }
}

/// What the generator knows that the files do not say directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub viewer_bias: Vec<f64>,
    /// Shared affect signal per segment, per movie.
    pub shared_signal: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SynthMovie {
    pub id: String,
    pub segments: Vec<SegmentSpec>,
    /// Per viewer, per frame valence (already quantized to the on-disk precision).
    pub tracks: Vec<Vec<f64>>,
    pub features: VisualFeatureSet,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub movies: Vec<SynthMovie>,
    pub truth: GroundTruth,
}

fn quantize(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn movie_ids(n: usize) -> Vec<String> {
    if n == PROTOCOL_MOVIES.len() {
        PROTOCOL_MOVIES.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=n).map(|i| format!("M{i:02}")).collect()
    }
}

fn word(id: usize) -> String {
    format!("tok{id:04}")
}

/// Builds the corpus in memory.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let v = cfg.viewers;
    let factors = v + 1;

    let viewer_bias: Vec<f64> = (0..v).map(|_| cfg.bias_scale * std_normal.sample(&mut rng)).collect();
    // Mixes the normalized latent factors [s, a_1..a_V] into visual features.
    let mixing: Vec<f64> =
        (0..cfg.feature_dim * factors).map(|_| std_normal.sample(&mut rng) / (factors as f64).sqrt()).collect();

    let pool = (cfg.vocab_size / 4).max(1);
    let (vis, hidden) = (cfg.visibility.sqrt(), (1.0 - cfg.visibility).sqrt());
    let rho = cfg.correlation;
    let period = DEFAULT_SAMPLE_PERIOD_MS;

    let mut movies = Vec::with_capacity(cfg.movies);
    let mut shared_signal = Vec::with_capacity(cfg.movies);
    for id in movie_ids(cfg.movies) {
        let mut segments = Vec::with_capacity(cfg.segments_per_movie);
        let mut latents: Vec<Vec<f64>> = Vec::with_capacity(cfg.segments_per_movie);
        let mut perceived: Vec<Vec<f64>> = Vec::with_capacity(cfg.segments_per_movie);
        let mut cursor = 0u64;
        for _ in 0..cfg.segments_per_movie {
            let gap = rng.gen_range(0..=20) * period;
            let duration = rng.gen_range(25..=100) * period;
            let start = cursor + gap;
            let end = start + duration;
            cursor = end;

            let s = LATENT_SD * std_normal.sample(&mut rng);
            let attrs: Vec<f64> = (0..v).map(|_| LATENT_SD * std_normal.sample(&mut rng)).collect();
            let values: Vec<f64> = (0..v)
                .map(|i| {
                    let eps = vis * attrs[i] + hidden * LATENT_SD * std_normal.sample(&mut rng);
                    (rho * s + (1.0 - rho) * eps + viewer_bias[i]).clamp(-1.0, 1.0)
                })
                .collect();

            let len = rng.gen_range(3..=22);
            let strength = (s.abs() / LATENT_SD).min(2.0) / 2.0;
            let words: Vec<String> = (0..len)
                .map(|_| {
                    if rng.gen_bool(0.15 + 0.6 * strength) {
                        let positive = (s > 0.0) != rng.gen_bool(0.15);
                        let offset = if positive { 0 } else { pool };
                        word(offset + rng.gen_range(0..pool))
                    } else {
                        word(rng.gen_range(2 * pool..cfg.vocab_size.max(2 * pool + 1)))
                    }
                })
                .collect();

            segments.push(SegmentSpec::new(id.clone(), start, end, words.join(" "))?);
            let mut latent = Vec::with_capacity(factors);
            latent.push(s / LATENT_SD);
            latent.extend(attrs.iter().map(|a| a / LATENT_SD));
            latents.push(latent);
            perceived.push(values);
        }
        let total_ms = cursor + 1000;
        let frames = (total_ms / period) as usize;

        let mut tracks = vec![Vec::with_capacity(frames); v];
        let mut seg_idx = 0;
        for f in 0..frames {
            let t = f as u64 * period;
            while seg_idx < segments.len() && segments[seg_idx].end_ms <= t {
                seg_idx += 1;
            }
            let inside = seg_idx < segments.len() && segments[seg_idx].start_ms <= t;
            for (i, track) in tracks.iter_mut().enumerate() {
                let base = if inside { perceived[seg_idx][i] } else { viewer_bias[i].clamp(-1.0, 1.0) };
                let jitter = cfg.noise_scale * std_normal.sample(&mut rng);
                track.push(quantize((base + jitter).clamp(-1.0, 1.0)));
            }
        }

        let video_frames = (total_ms * DEFAULT_FPS / 1000) as usize;
        let chunks = (video_frames.saturating_sub(DEFAULT_WINDOW)) / DEFAULT_STRIDE + 1;
        let mut data = Vec::with_capacity(chunks * cfg.feature_dim);
        let mut seg_idx = 0;
        for c in 0..chunks {
            let center_ms = ((c * DEFAULT_STRIDE + DEFAULT_WINDOW / 2) as u64 * 1000) / DEFAULT_FPS;
            while seg_idx < segments.len() && segments[seg_idx].end_ms <= center_ms {
                seg_idx += 1;
            }
            let latent = (seg_idx < segments.len() && segments[seg_idx].start_ms <= center_ms).then(|| &latents[seg_idx]);
            for d in 0..cfg.feature_dim {
                let signal = latent.map_or(0.0, |z| {
                    z.iter().zip(&mixing[d * factors..(d + 1) * factors]).map(|(a, b)| a * b).sum()
                });
                let value = signal + cfg.feature_noise * std_normal.sample(&mut rng);
                data.push(value as f32 as f64);
            }
        }
        let features = VisualFeatureSet::new(id.clone(), DEFAULT_WINDOW, DEFAULT_STRIDE, cfg.feature_dim, data)?;

        shared_signal.push(latents.iter().map(|z| z[0] * LATENT_SD).collect());
        movies.push(SynthMovie { id, segments, tracks, features });
    }

    Ok(SynthCorpus { movies, truth: GroundTruth { config: cfg.clone(), viewer_bias, shared_signal } })
}

impl SynthCorpus {
    /// Labels the in-memory corpus exactly as `build_dataset` labels its files.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let v = self.truth.config.viewers;
        let mut samples = Vec::new();
        for m in &self.movies {
            let tracks: Vec<AnnotationTrack> = m
                .tracks
                .iter()
                .enumerate()
                .map(|(i, t)| AnnotationTrack::new(m.id.clone(), i + 1, DEFAULT_SAMPLE_PERIOD_MS, t.clone()))
                .collect::<Result<_>>()?;
            for seg in &m.segments {
                let means = tracks.iter().map(|t| segment_mean(t, seg).map(Some)).collect::<Result<Vec<_>>>()?;
                let visual = segment_visual_feature(&m.features, seg, DEFAULT_FPS)?;
                samples.push(LabeledSample::from_means(seg.clone(), visual, means, 0.0)?);
            }
        }
        Ok(Dataset { viewer_count: v, movies: self.movies.iter().map(|m| m.id.clone()).collect(), samples })
    }

    /// Writes the corpus in the on-disk formats and returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let write = |path: PathBuf, bytes: &[u8]| std::fs::write(&path, bytes).map_err(|e| Error::io(path, e));
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.movies.len());
        for m in &self.movies {
            let movie_dir = dir.join(&m.id);
            std::fs::create_dir_all(&movie_dir).map_err(|e| Error::io(&movie_dir, e))?;
            let mut annotations = Vec::with_capacity(m.tracks.len());
            for (i, track) in m.tracks.iter().enumerate() {
                let rel = PathBuf::from(&m.id).join(format!("viewer_{}.csv", i + 1));
                write(dir.join(&rel), format_annotation_csv(track).as_bytes())?;
                annotations.push(Some(rel));
            }
            let subtitles = PathBuf::from(&m.id).join("subtitles.srt");
            write(dir.join(&subtitles), format_srt(&m.segments).as_bytes())?;
            let features = PathBuf::from(&m.id).join("visual.fvec");
            write(dir.join(&features), &m.features.to_fvec_bytes())?;
            entries.push(MovieEntry { id: m.id.clone(), annotations, subtitles, features });
        }
        let manifest = DatasetManifest {
            sample_period_ms: DEFAULT_SAMPLE_PERIOD_MS,
            fps: DEFAULT_FPS,
            threshold: 0.0,
            viewer_count: self.truth.config.viewers,
            movies: entries,
            base_dir: dir.to_path_buf(),
        };
        let manifest_path = dir.join("manifest.json");
        write(manifest_path.clone(), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        write(dir.join("ground_truth.json"), serde_json::to_string_pretty(&self.truth)?.as_bytes())?;
        Ok(manifest_path)
    }
}

/// Generates a corpus and materializes it under `dir`.
pub fn synth_generate(cfg: &SynthConfig, dir: &Path) -> Result<(PathBuf, GroundTruth)> {
    let corpus = synth_corpus(cfg)?;
    let path = corpus.write(dir)?;
    Ok((path, corpus.truth))
}
