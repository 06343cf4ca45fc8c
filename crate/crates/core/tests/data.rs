use std::path::Path;

use emt_core::data::formats::{format_annotation_csv, format_srt, parse_annotation_csv, parse_srt};
use emt_core::data::*;
use emt_core::eval::pearson;
use emt_core::features::{segment_frames, segment_visual_feature, tokenize_pad, VisualFeatureSet, Vocabulary, MAX_TOKENS};
use emt_core::Error;
use proptest::prelude::*;

/// Reads `frame,value` rows without the library parser.
fn raw_track(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

/// `start <= i·period < end`, scanning every sample.
fn brute_mean(track: &[f64], period: u64, start: u64, end: u64) -> Option<f64> {
    let inside: Vec<f64> =
        track.iter().enumerate().filter(|(i, _)| (start..end).contains(&(*i as u64 * period))).map(|(_, v)| *v).collect();
    (!inside.is_empty()).then(|| inside.iter().sum::<f64>() / inside.len() as f64)
}

fn small_cfg(seed: u64) -> SynthConfig {
    SynthConfig { seed, movies: 3, segments_per_movie: 12, viewers: 4, feature_dim: 6, ..Default::default() }
}

#[test]
fn on_disk_labels_match_a_brute_force_rederivation() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest_path, _) = synth_generate(&small_cfg(3), dir.path()).unwrap();
    let manifest = DatasetManifest::load(&manifest_path).unwrap();
    let ds = build_dataset(&manifest).unwrap();
    let mut checked = 0;
    for movie in &manifest.movies {
        let tracks: Vec<Vec<f64>> =
            movie.annotations.iter().map(|p| raw_track(&manifest.resolve(p.as_ref().unwrap()))).collect();
        for s in ds.movie_samples(&movie.id) {
            let means: Vec<f64> = tracks
                .iter()
                .map(|t| brute_mean(t, 40, s.segment.start_ms, s.segment.end_ms).unwrap())
                .collect();
            let avg = means.iter().sum::<f64>() / means.len() as f64;
            for (i, m) in means.iter().enumerate() {
                assert_eq!(s.per_viewer_mean[i], Some(*m));
                assert_eq!(s.per_viewer_label[i], Some(if *m > 0.0 { Label::Positive } else { Label::Negative }));
            }
            assert_eq!(s.avg_viewer_mean, avg);
            assert_eq!(s.avg_viewer_label, if avg > 0.0 { Label::Positive } else { Label::Negative });
            checked += 1;
        }
    }
    assert_eq!(checked, 36);
}

#[test]
fn files_and_memory_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg(4);
    let (path, _) = synth_generate(&cfg, dir.path()).unwrap();
    let from_files = build_dataset(&DatasetManifest::load(&path).unwrap()).unwrap();
    let in_memory = synth_corpus(&cfg).unwrap().to_dataset().unwrap();
    assert_eq!(from_files, in_memory);
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synthesis_is_byte_deterministic() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth_generate(&small_cfg(7), a.path()).unwrap();
    synth_generate(&small_cfg(7), b.path()).unwrap();
    synth_generate(&small_cfg(8), c.path()).unwrap();
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
    assert_ne!(tree_bytes(a.path()), tree_bytes(c.path()));
}

#[test]
fn uncorrelated_viewers_have_small_correlation() {
    let cfg = SynthConfig { correlation: 0.0, bias_scale: 0.0, segments_per_movie: 200, ..small_cfg(5) };
    let ds = synth_corpus(&cfg).unwrap().to_dataset().unwrap();
    let col = |t: usize| ds.samples.iter().map(|s| s.target_mean(t).unwrap()).collect::<Vec<_>>();
    for i in 0..cfg.viewers {
        for j in (i + 1)..cfg.viewers {
            let r = pearson(&col(i), &col(j)).unwrap();
            assert!(r.abs() < 0.1, "viewers {i},{j}: {r}");
        }
    }
}

#[test]
fn missing_viewer_is_absent_and_short_track_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = synth_generate(&small_cfg(6), dir.path()).unwrap();
    let mut manifest = DatasetManifest::load(&path).unwrap();
    manifest.movies[0].annotations[1] = None;
    let ds = build_dataset(&manifest).unwrap();
    let first = ds.movie_samples(&manifest.movies[0].id).next().unwrap();
    assert_eq!(first.per_viewer_label[1], None);
    let present: Vec<f64> = first.per_viewer_mean.iter().flatten().copied().collect();
    assert_eq!(first.avg_viewer_mean, present.iter().sum::<f64>() / present.len() as f64);

    let track = manifest.resolve(manifest.movies[0].annotations[0].as_ref().unwrap());
    let text = std::fs::read_to_string(&track).unwrap();
    let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
    std::fs::write(&track, truncated).unwrap();
    assert!(matches!(build_dataset(&manifest), Err(Error::TrackTooShort { viewer: 1, .. })));
}

#[test]
fn malformed_manifest_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    std::fs::write(&path, "{\n  \"viewer_count\": 2,\n  \"movies\": [ oops ]\n}").unwrap();
    assert!(matches!(DatasetManifest::load(&path), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn visual_pooling_is_an_elementwise_max_over_contained_windows() {
    // Window 16, stride 8: chunk c covers frames [8c, 8c + 16).
    let dim = 3;
    let data: Vec<f64> = (0..10 * dim).map(|i| ((i * 7919) % 23) as f64 - 11.0).collect();
    let fs = VisualFeatureSet::new("M", 16, 8, dim, data.clone()).unwrap();
    let seg = SegmentSpec::new("M", 1600, 3200, "").unwrap();
    assert_eq!(segment_frames(&seg, 25), (40, 80));
    let pooled = segment_visual_feature(&fs, &seg, 25).unwrap();
    let contained: Vec<usize> = (0..10).filter(|c| 8 * c >= 40 && 8 * c + 16 <= 80).collect();
    assert_eq!(contained.len(), 4);
    for d in 0..dim {
        let expected = contained.iter().map(|c| data[c * dim + d]).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(pooled[d], expected);
    }
}

fn label(v: f64) -> Label {
    if v > 0.0 {
        Label::Positive
    } else {
        Label::Negative
    }
}

proptest! {
    #[test]
    fn annotation_csv_round_trips(values in prop::collection::vec(-1.0f64..=1.0, 1..200)) {
        let quantized: Vec<f64> = values.iter().map(|v| (v * 1e4).round() / 1e4).collect();
        let text = format_annotation_csv(&quantized);
        let track = parse_annotation_csv(&text, Path::new("x.csv"), "M", 1, 40).unwrap();
        prop_assert_eq!(track.values(), &quantized[..]);
        prop_assert_eq!(format_annotation_csv(track.values()), text);
    }

    #[test]
    fn srt_round_trips(gaps in prop::collection::vec((0u64..5000, 1u64..8000), 1..20)) {
        let mut t = 0;
        let segs: Vec<SegmentSpec> = gaps.iter().enumerate().map(|(i, (gap, len))| {
            let start = t + gap;
            t = start + len;
            SegmentSpec::new("M", start, t, format!("line {i}")).unwrap()
        }).collect();
        prop_assert_eq!(parse_srt(&format_srt(&segs), Path::new("x.srt"), "M").unwrap(), segs);
    }

    #[test]
    fn averaging_order_commutes(means in prop::collection::vec(prop::option::weighted(0.8, -1.0f64..1.0), 1..10), rot in 0usize..10) {
        prop_assume!(means.iter().any(Option::is_some));
        let mut rotated = means.clone();
        rotated.rotate_left(rot % means.len());
        let (a, b) = (average_viewer(&means).unwrap(), average_viewer(&rotated).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert_eq!(binarize(a, 0.0) == Label::Positive, a > 0.0);
    }

    #[test]
    fn segment_mean_matches_scan(track in prop::collection::vec(-1.0f64..=1.0, 1..100), start in 0u64..4000, len in 1u64..4000) {
        let t = AnnotationTrack::new("M", 1, 40, track.clone()).unwrap();
        let seg = SegmentSpec::new("M", start, start + len, "").unwrap();
        match (segment_mean(&t, &seg), brute_mean(&track, 40, start, start + len)) {
            (Ok(m), Some(o)) => { prop_assert_eq!(m, o); prop_assert_eq!(binarize(m, 0.0), label(o)); }
            (Err(Error::EmptyOverlap { .. }), None) => {}
            (got, want) => prop_assert!(false, "{:?} vs {:?}", got, want),
        }
    }

    #[test]
    fn token_sequences_have_fixed_length(words in prop::collection::vec("[a-z]{1,6}", 0..40)) {
        let vocab = Vocabulary::from_texts(["abc de fgh"], 1);
        let seq = tokenize_pad(&words.join(" "), &vocab);
        prop_assert_eq!(seq.ids().len(), MAX_TOKENS);
        let used = words.len().min(MAX_TOKENS);
        prop_assert!(seq.ids()[used..].iter().all(|&id| id == 0));
        prop_assert!(seq.ids()[..used].iter().all(|&id| id != 0));
    }
}
