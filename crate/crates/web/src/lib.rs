//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each operation has a plain Rust form, tested natively, and a
//! `#[wasm_bindgen]` wrapper that hands the result to JavaScript as a
//! plain object.

use emt_core::data::{synth_corpus, Label, SynthConfig};
use emt_core::eval::{correlation_analysis, CorrelationMode};
use emt_core::training::{target_class_weights, weighted_bce, TargetWeights};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agreement {
    pub targets: Vec<String>,
    /// Average correlation matrix over movies, row-major.
    pub matrix: Vec<Vec<f64>>,
    pub mean_viewer_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCurve {
    pub predictions: Vec<f64>,
    pub weighted: Vec<f64>,
    pub unweighted: Vec<f64>,
    pub weights: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelCounts {
    pub movies: Vec<String>,
    pub targets: Vec<String>,
    /// `positive[movie][target]`.
    pub positive: Vec<Vec<usize>>,
    pub negative: Vec<Vec<usize>>,
}

fn corpus_config(correlation: f64, segments: usize, seed: u64) -> SynthConfig {
    SynthConfig { seed, correlation, segments_per_movie: segments, feature_dim: 4, ..Default::default() }
}

/// Viewer agreement on a synthetic corpus with shared-signal weight `correlation`.
pub fn agreement(correlation: f64, segments: usize, seed: u64) -> Result<Agreement, String> {
    let ds = synth_corpus(&corpus_config(correlation, segments, seed))
        .and_then(|c| c.to_dataset())
        .map_err(|e| e.to_string())?;
    let report = correlation_analysis(&ds, CorrelationMode::Continuous).map_err(|e| e.to_string())?;
    Ok(Agreement {
        mean_viewer_correlation: report.average.mean_viewer_off_diagonal(),
        targets: report.average.targets,
        matrix: report.average.values,
    })
}

/// Loss of a constant prediction swept over (0, 1) on a label set with the
/// given positive fraction, with and without class weights.
pub fn loss_curve(positive_fraction: f64, points: usize) -> Result<LossCurve, String> {
    if !(0.0..1.0).contains(&positive_fraction) || positive_fraction == 0.0 {
        return Err("positive fraction must lie strictly between 0 and 1".into());
    }
    let n = 1000;
    let pos = ((positive_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let labels: Vec<Option<Label>> =
        (0..n).map(|i| Some(if i < pos { Label::Positive } else { Label::Negative })).collect();
    let w = target_class_weights(&labels, "demo").map_err(|e| e.to_string())?;
    let points = points.max(2);
    let predictions: Vec<f64> = (1..=points).map(|i| i as f64 / (points + 1) as f64).collect();
    let at = |p: f64, w: TargetWeights| weighted_bce(&vec![p; n], &labels, w).map_err(|e| e.to_string());
    Ok(LossCurve {
        weighted: predictions.iter().map(|&p| at(p, w)).collect::<Result<_, _>>()?,
        unweighted: predictions.iter().map(|&p| at(p, TargetWeights::UNIT)).collect::<Result<_, _>>()?,
        predictions,
        weights: [w.pos, w.neg],
    })
}

/// Positive and negative segment counts per movie and target.
pub fn label_counts(correlation: f64, segments: usize, seed: u64) -> Result<LabelCounts, String> {
    let ds = synth_corpus(&corpus_config(correlation, segments, seed))
        .and_then(|c| c.to_dataset())
        .map_err(|e| e.to_string())?;
    let report = correlation_analysis(&ds, CorrelationMode::Continuous).map_err(|e| e.to_string())?;
    let per_movie = ds.viewer_count + 1;
    let rows = &report.histograms;
    Ok(LabelCounts {
        movies: ds.movies.clone(),
        targets: rows[..per_movie].iter().map(|r| r.target.clone()).collect(),
        positive: rows.chunks(per_movie).map(|c| c.iter().map(|r| r.positive).collect()).collect(),
        negative: rows.chunks(per_movie).map(|c| c.iter().map(|r| r.negative).collect()).collect(),
    })
}

fn to_js<T: Serialize>(value: Result<T, String>) -> Result<JsValue, JsValue> {
    let value = value.map_err(|e| JsValue::from_str(&e))?;
    serde_wasm_bindgen::to_value(&value).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = agreement)]
pub fn agreement_js(correlation: f64, segments: usize, seed: u32) -> Result<JsValue, JsValue> {
    to_js(agreement(correlation, segments, seed.into()))
}

#[wasm_bindgen(js_name = lossCurve)]
pub fn loss_curve_js(positive_fraction: f64, points: usize) -> Result<JsValue, JsValue> {
    to_js(loss_curve(positive_fraction, points))
}

#[wasm_bindgen(js_name = labelCounts)]
pub fn label_counts_js(correlation: f64, segments: usize, seed: u32) -> Result<JsValue, JsValue> {
    to_js(label_counts(correlation, segments, seed.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_loss_crosses_ln2_at_one_half() {
        let curve = loss_curve(0.2, 9).unwrap();
        assert_eq!(curve.predictions[4], 0.5);
        assert!((curve.weighted[4] - 2f64.ln()).abs() < 1e-9);
        assert!((curve.unweighted[4] - 2f64.ln()).abs() < 1e-9);
        assert!(loss_curve(1.0, 9).is_err());
    }
}
