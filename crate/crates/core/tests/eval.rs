use emt_core::data::{synth_corpus, Dataset, Label, SynthConfig};
use emt_core::eval::*;
use emt_core::model::{ConvStage, ModelKind};
use emt_core::training::{encode_samples, TrainConfig};
use emt_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let (sxx, syy) = (x.iter().map(|a| a * a).sum::<f64>(), y.iter().map(|b| b * b).sum::<f64>());
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn labels_strategy() -> impl Strategy<Value = Vec<Option<Label>>> {
    prop::collection::vec(
        prop::option::weighted(0.8, prop::bool::ANY.prop_map(|b| if b { Label::Positive } else { Label::Negative })),
        1..200,
    )
    .prop_filter("needs a present label", |l| l.iter().any(Option::is_some))
}

proptest! {
    #[test]
    fn accuracy_matches_a_count(labels in labels_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<f64> = labels.iter().map(|_| rng.gen()).collect();
        let (mut hit, mut n) = (0, 0);
        for (p, l) in preds.iter().zip(&labels) {
            if let Some(l) = l {
                n += 1;
                if (*p > 0.5) == (*l == Label::Positive) { hit += 1; }
            }
        }
        prop_assert_eq!(accuracy(&preds, &labels, 0.5).unwrap(), 100.0 * hit as f64 / n as f64);
    }

    #[test]
    fn reference_identities(labels in labels_strategy(), seed in any::<u64>()) {
        let r = reference_classifiers(&labels, seed).unwrap();
        let present = labels.iter().flatten().count() as f64;
        let pos = labels.iter().filter(|l| **l == Some(Label::Positive)).count() as f64;
        prop_assert_eq!(r.positive, 100.0 * pos / present);
        prop_assert_eq!(r.positive + r.negative, 100.0);
        prop_assert_eq!(r, reference_classifiers(&labels, seed).unwrap());
    }

    #[test]
    fn pearson_matches_textbook_formula(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..100)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = pearson(&x, &y).unwrap();
        prop_assert!((r - textbook_pearson(&x, &y)).abs() < 1e-12);
        prop_assert!((r - pearson(&y, &x).unwrap()).abs() < 1e-15);
    }
}

#[test]
fn fair_coin_is_near_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<Option<Label>> =
        (0..100_000).map(|_| Some(if rng.gen_bool(0.7) { Label::Positive } else { Label::Negative })).collect();
    let r = reference_classifiers(&labels, 9).unwrap();
    assert!((r.random - 50.0).abs() < 1.0, "{}", r.random);
}

#[test]
fn accuracy_rejects_empty_and_mismatched_input() {
    assert!(matches!(accuracy(&[0.9], &[None], 0.5), Err(Error::EmptyMask)));
    assert!(accuracy(&[0.9, 0.1], &[Some(Label::Positive)], 0.5).is_err());
}

#[test]
fn pearson_edge_cases() {
    assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation)));
    assert!(pearson(&[1.0], &[2.0]).is_err());
    assert!(pearson(&[1.0, 2.0], &[2.0]).is_err());
    assert_eq!(pearson(&[1.0, 2.0, 4.0], &[3.0, 5.0, 9.0]).unwrap(), 1.0);
    assert_eq!(pearson(&[1.0, 2.0, 4.0], &[-1.0, -2.0, -4.0]).unwrap(), -1.0);
}

#[test]
fn builtin_folds_are_valid_partitions() {
    let movies = protocol_movies();
    let folds = builtin_folds(Protocol::Table1);
    assert_eq!(folds.len(), 7);
    let mut tested: Vec<&String> = folds.iter().flat_map(|f| &f.test).collect();
    tested.sort();
    let mut all: Vec<&String> = movies.iter().collect();
    all.sort();
    assert_eq!(tested, all, "every movie is tested exactly once");
    for f in &folds {
        f.validate(&movies).unwrap();
        assert_eq!((f.train.len(), f.validation.len(), f.test.len()), (5, 1, 1));
    }
    let baseline = builtin_folds(Protocol::Baseline);
    assert_eq!(baseline.len(), 1);
    baseline[0].validate(&movies).unwrap();

    let mut overlapping = folds[0].clone();
    overlapping.validation = overlapping.test.clone();
    assert!(overlapping.validate(&movies).is_err());
    let mut unknown = folds[0].clone();
    unknown.train[0] = "XYZ".into();
    assert!(unknown.validate(&movies).is_err());
}

fn corpus(correlation: f64, segments: usize, seed: u64) -> Dataset {
    let cfg = SynthConfig { seed, correlation, segments_per_movie: segments, feature_dim: 4, ..Default::default() };
    synth_corpus(&cfg).unwrap().to_dataset().unwrap()
}

#[test]
fn correlation_matrices_are_symmetric_with_unit_diagonal() {
    let ds = corpus(0.6, 40, 2);
    let report = correlation_analysis(&ds, CorrelationMode::Continuous).unwrap();
    assert_eq!(report.per_movie.len(), 7);
    for m in report.per_movie.iter().map(|(_, m)| m).chain([&report.average]) {
        for i in 0..8 {
            assert_eq!(m.get(i, i), 1.0);
            for j in 0..8 {
                assert_eq!(m.get(i, j), m.get(j, i));
                assert!((-1.0..=1.0).contains(&m.get(i, j)));
            }
        }
    }
    for h in &report.histograms {
        assert_eq!(h.positive + h.negative + h.absent, 40);
    }
    assert_eq!(report.histograms.len(), 7 * 8);
    let binary = correlation_analysis(&ds, CorrelationMode::Binary).unwrap();
    assert_ne!(binary.average, report.average);
}

#[test]
fn stronger_shared_signal_gives_higher_viewer_correlation() {
    let weak = correlation_analysis(&corpus(0.1, 80, 3), CorrelationMode::Continuous).unwrap();
    let strong = correlation_analysis(&corpus(0.9, 80, 3), CorrelationMode::Continuous).unwrap();
    let (w, s) = (weak.average.mean_viewer_off_diagonal(), strong.average.mean_viewer_off_diagonal());
    assert!(s > w + 0.3, "weak {w} strong {s}");
}

#[test]
fn identical_viewers_correlate_perfectly() {
    let cfg = SynthConfig { correlation: 1.0, noise_scale: 0.0, bias_scale: 0.0, segments_per_movie: 20, ..Default::default() };
    let ds = synth_corpus(&cfg).unwrap().to_dataset().unwrap();
    let report = correlation_analysis(&ds, CorrelationMode::Continuous).unwrap();
    assert!((report.average.mean_viewer_off_diagonal() - 1.0).abs() < 1e-9);
}

#[test]
fn report_aggregates_skip_missing_entries() {
    let folds = vec![
        FoldAccuracy { fold_id: "A".into(), accuracy: vec![Some(60.0), None, Some(80.0)] },
        FoldAccuracy { fold_id: "B".into(), accuracy: vec![Some(70.0), Some(50.0), Some(90.0)] },
    ];
    let r = EvalReport::new("MT-both".into(), "h".into(), 0, 2, folds);
    assert_eq!(r.targets, ["V1", "V2", "V_avg"]);
    assert_eq!(r.target_mean, [Some(65.0), Some(50.0), Some(85.0)]);
    assert_eq!(r.mean, Some(200.0 / 3.0));
    assert_eq!(reports_to_csv(std::slice::from_ref(&r)), "model,V1,V2,V_avg,Mean\nMT-both,65.00,50.00,85.00,66.67\n");
    assert_eq!(folds_to_csv(&r).lines().nth(1), Some("A,60.00,,80.00,70.00"));
    let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn reference_rows_sum_to_one_hundred() {
    let ds = corpus(0.6, 30, 4);
    let folds = builtin_folds(Protocol::Table1);
    let rows = reference_reports(&ds, &folds, 0, "h").unwrap();
    let ids: Vec<_> = rows.iter().map(|r| r.model_id.as_str()).collect();
    assert_eq!(ids, ["Random", "Positive", "Negative"]);
    for (p, n) in rows[1].target_mean.iter().zip(&rows[2].target_mean) {
        assert!((p.unwrap() + n.unwrap() - 100.0).abs() < 1e-9);
    }
}

fn micro_spec(kind: ModelKind) -> ModelSpec {
    ModelSpec {
        kind,
        embed_dim: 4,
        conv_stages: vec![ConvStage { kernel_width: 3, out_channels: 4, pool_width: 4 }],
        ..Default::default()
    }
}

fn micro_cfg() -> TrainConfig {
    TrainConfig { max_epochs: 1, batch_size: 16, seed: 11, ..Default::default() }
}

#[test]
fn single_fold_cross_validation_equals_run_fold() {
    let ds = corpus(0.6, 8, 5);
    let folds = builtin_folds(Protocol::Table1);
    let spec = micro_spec(ModelKind::Mt);
    let direct = run_fold(&ds, &folds[2], 0, &spec, &micro_cfg()).unwrap();
    let mut seen = Vec::new();
    let report = cross_validate(&ds, &folds[2..3], &spec, &micro_cfg(), 1, &mut |run| {
        seen.push(run.test_accuracy.clone());
        let test = encode_samples(&ds.for_movies(&run.fold.test), &run.vocabulary);
        let inputs: Vec<_> = test.iter().map(|s| &s.input).collect();
        assert_eq!(
            run.models[0].network.forward(&inputs).unwrap(),
            direct.models[0].network.forward(&inputs).unwrap()
        );
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, std::slice::from_ref(&direct.test_accuracy));
    assert_eq!(report.folds[0].accuracy, direct.test_accuracy);
    assert_eq!(report.model_id, "MT-both");
}

#[test]
fn worker_count_does_not_change_results() {
    let ds = corpus(0.6, 6, 6);
    let folds = &builtin_folds(Protocol::Table1)[..3];
    let spec = micro_spec(ModelKind::Mt);
    let run = |workers| {
        let mut order = Vec::new();
        let report = cross_validate(&ds, folds, &spec, &micro_cfg(), workers, &mut |r| {
            order.push(r.index);
            Ok(())
        })
        .unwrap();
        (report, order)
    };
    let (one, order1) = run(1);
    let (two, order2) = run(2);
    assert_eq!(one, two);
    assert_eq!(order1, [0, 1, 2]);
    assert_eq!(order2, [0, 1, 2]);
}

#[test]
fn single_task_trains_one_network_per_target() {
    let ds = corpus(0.6, 6, 7);
    let folds = builtin_folds(Protocol::Table1);
    let run = run_fold(&ds, &folds[0], 0, &micro_spec(ModelKind::St), &micro_cfg()).unwrap();
    assert_eq!(run.models.len(), 8);
    for (t, m) in run.models.iter().enumerate() {
        assert_eq!(m.network.architecture().target, Some(t));
    }
    assert!(run.test_accuracy.iter().all(Option::is_some));
}
