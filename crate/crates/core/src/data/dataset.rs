use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotation::{average_viewer, binarize, segment_mean, AnnotationTrack, Label, SegmentSpec, DEFAULT_SAMPLE_PERIOD_MS};
use super::formats::{read_annotation_csv, read_srt, read_text};
use crate::error::{Error, Result};
use crate::features::{segment_visual_feature, VisualFeatureSet, DEFAULT_FPS};

fn default_period() -> u64 {
    DEFAULT_SAMPLE_PERIOD_MS
}

fn default_fps() -> u64 {
    DEFAULT_FPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieEntry {
    pub id: String,
    /// One entry per viewer; `null` marks a viewer who did not annotate this movie.
    pub annotations: Vec<Option<PathBuf>>,
    pub subtitles: PathBuf,
    pub features: PathBuf,
}

/// JSON manifest describing a corpus on disk. Relative paths resolve
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default = "default_period")]
    pub sample_period_ms: u64,
    #[serde(default = "default_fps")]
    pub fps: u64,
    #[serde(default)]
    pub threshold: f64,
    pub viewer_count: usize,
    pub movies: Vec<MovieEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.viewer_count == 0 {
            return Err(Error::Invalid("viewer_count must be at least 1".into()));
        }
        if self.sample_period_ms == 0 || self.fps == 0 {
            return Err(Error::Invalid("sample_period_ms and fps must be positive".into()));
        }
        if self.movies.is_empty() {
            return Err(Error::Invalid("manifest lists no movies".into()));
        }
        for (i, m) in self.movies.iter().enumerate() {
            if self.movies[..i].iter().any(|o| o.id == m.id) {
                return Err(Error::Invalid(format!("movie `{}` listed twice", m.id)));
            }
            if m.annotations.len() != self.viewer_count {
                return Err(Error::Invalid(format!(
                    "movie `{}` lists {} annotation files for {} viewers",
                    m.id,
                    m.annotations.len(),
                    self.viewer_count
                )));
            }
            let files = m.annotations.iter().flatten().chain([&m.subtitles, &m.features]);
            for f in files {
                let full = self.resolve(f);
                if !full.is_file() {
                    return Err(Error::io(full, std::io::ErrorKind::NotFound.into()));
                }
            }
        }
        Ok(())
    }

    pub fn movie_ids(&self) -> Vec<String> {
        self.movies.iter().map(|m| m.id.clone()).collect()
    }
}

/// One subtitle segment with its pooled visual feature and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub segment: SegmentSpec,
    pub visual: Vec<f64>,
    /// `None` where the viewer has no annotation.
    pub per_viewer_mean: Vec<Option<f64>>,
    pub avg_viewer_mean: f64,
    pub per_viewer_label: Vec<Option<Label>>,
    pub avg_viewer_label: Label,
}

impl LabeledSample {
    pub fn from_means(segment: SegmentSpec, visual: Vec<f64>, per_viewer_mean: Vec<Option<f64>>, threshold: f64) -> Result<Self> {
        let avg_viewer_mean = average_viewer(&per_viewer_mean)?;
        let per_viewer_label = per_viewer_mean.iter().map(|m| m.map(|v| binarize(v, threshold))).collect();
        Ok(Self {
            segment,
            visual,
            per_viewer_mean,
            avg_viewer_mean,
            per_viewer_label,
            avg_viewer_label: binarize(avg_viewer_mean, threshold),
        })
    }

    pub fn viewer_count(&self) -> usize {
        self.per_viewer_label.len()
    }

    /// Label of target `t`: viewers `0..V`, then the average viewer at `V`.
    pub fn target_label(&self, t: usize) -> Option<Label> {
        if t == self.viewer_count() {
            Some(self.avg_viewer_label)
        } else {
            self.per_viewer_label[t]
        }
    }

    pub fn target_mean(&self, t: usize) -> Option<f64> {
        if t == self.viewer_count() {
            Some(self.avg_viewer_mean)
        } else {
            self.per_viewer_mean[t]
        }
    }

    pub fn movie_id(&self) -> &str {
        &self.segment.movie_id
    }
}

/// Samples ordered by movie (manifest order) then segment start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub viewer_count: usize,
    pub movies: Vec<String>,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    /// Targets per sample: every viewer plus the average viewer.
    pub fn target_count(&self) -> usize {
        self.viewer_count + 1
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.visual.len())
    }

    pub fn for_movies(&self, ids: &[String]) -> Vec<LabeledSample> {
        self.samples.iter().filter(|s| ids.iter().any(|m| m == s.movie_id())).cloned().collect()
    }

    pub fn movie_samples<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a LabeledSample> + 'a {
        self.samples.iter().filter(move |s| s.movie_id() == id)
    }
}

pub fn target_name(t: usize, viewer_count: usize) -> String {
    if t == viewer_count {
        "V_avg".to_string()
    } else {
        format!("V{}", t + 1)
    }
}

/// Labels every subtitle segment of every movie in the manifest.
pub fn build_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    let mut samples = Vec::new();
    for movie in &manifest.movies {
        let tracks: Vec<Option<AnnotationTrack>> = movie
            .annotations
            .iter()
            .enumerate()
            .map(|(v, p)| {
                p.as_ref()
                    .map(|p| read_annotation_csv(&manifest.resolve(p), &movie.id, v + 1, manifest.sample_period_ms))
                    .transpose()
            })
            .collect::<Result<_>>()?;
        if tracks.iter().all(Option::is_none) {
            return Err(Error::Invalid(format!("movie `{}` has no annotation tracks", movie.id)));
        }
        let segments = read_srt(&manifest.resolve(&movie.subtitles), &movie.id)?;
        let features = VisualFeatureSet::read(&manifest.resolve(&movie.features), &movie.id)?;
        for seg in segments {
            let means = tracks
                .iter()
                .map(|t| {
                    let Some(t) = t else { return Ok(None) };
                    if seg.end_ms > t.end_ms() {
                        return Err(Error::TrackTooShort {
                            segment: seg.label(),
                            viewer: t.viewer_id,
                            track_end_ms: t.end_ms(),
                        });
                    }
                    segment_mean(t, &seg).map(Some)
                })
                .collect::<Result<Vec<_>>>()?;
            let visual = segment_visual_feature(&features, &seg, manifest.fps)?;
            samples.push(LabeledSample::from_means(seg, visual, means, manifest.threshold)?);
        }
    }
    let dim = samples.first().map_or(0, |s| s.visual.len());
    if let Some(s) = samples.iter().find(|s| s.visual.len() != dim) {
        return Err(Error::Invalid(format!("movie `{}` has a different feature dimension", s.movie_id())));
    }
    Ok(Dataset { viewer_count: manifest.viewer_count, movies: manifest.movie_ids(), samples })
}
