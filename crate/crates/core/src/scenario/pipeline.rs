use serde::Serialize;

use super::report::corpus_windows;
use crate::ids::{evaluate_windows, quantise_model, train_reference, FloatMlp, IdsError, LabeledWindow, QuantMlpModel, TrainConfig};
use crate::monitor::{compute_metrics, BusLogRecord, MetricsReport};

pub const ACTIVATION_BITS: u8 = 4;

/// Activation-range quantiles tried during calibration.
pub const CALIBRATION_QUANTILES: [f64; 5] = [0.99, 0.995, 0.999, 0.9999, 1.0];

/// Fraction of corpus windows, taken from the start, used for training.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutcome {
    pub train_windows: usize,
    pub test_windows: usize,
    /// Calibration quantile picked on the training windows.
    pub activation_quantile: f64,
    /// Float reference model on the held-out windows.
    pub float_metrics: MetricsReport,
    /// Quantised model on the held-out windows.
    pub quant_metrics: MetricsReport,
    #[serde(skip)]
    pub float: FloatMlp,
    #[serde(skip)]
    pub model: QuantMlpModel,
}

/// Chronological split: the first `train_fraction` of windows trains, the
/// rest is held out.
pub fn split_windows(windows: &[LabeledWindow], train_fraction: f64) -> (&[LabeledWindow], &[LabeledWindow]) {
    let cut = ((windows.len() as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
    windows.split_at(cut)
}

/// Train and quantise on a labelled bus log, scored on held-out windows.
pub fn train_pipeline(
    log: &[BusLogRecord],
    train_fraction: f64,
    config: &TrainConfig,
) -> Result<PipelineOutcome, IdsError> {
    train_on_windows(&corpus_windows(log), train_fraction, config)
}

/// [`train_pipeline`] over already windowed data.
pub fn train_on_windows(
    windows: &[LabeledWindow],
    train_fraction: f64,
    config: &TrainConfig,
) -> Result<PipelineOutcome, IdsError> {
    let (train, test) = split_windows(windows, train_fraction);
    if test.is_empty() {
        return Err(IdsError::InsufficientData("no held-out windows".into()));
    }
    let mut float = train_reference(train, config)?;
    let (quantile, model) = calibrate_quantised(&mut float, train)?;
    let float_metrics = compute_metrics(test.iter().map(|w| (w.label, float.predict(&w.features))));
    let quant_metrics = evaluate_windows(&model, test)?;
    Ok(PipelineOutcome {
        train_windows: train.len(),
        test_windows: test.len(),
        activation_quantile: quantile,
        float_metrics,
        quant_metrics,
        float,
        model,
    })
}

/// Quantise under each candidate activation range and keep the one with
/// the best accuracy on `calibration`; ties keep the earlier quantile.
pub fn calibrate_quantised(
    float: &mut FloatMlp,
    calibration: &[LabeledWindow],
) -> Result<(f64, QuantMlpModel), IdsError> {
    let mut best: Option<(f64, f64, QuantMlpModel)> = None;
    for q in CALIBRATION_QUANTILES {
        float.calibrate(calibration, q);
        let (model, _) = quantise_model(float, ACTIVATION_BITS)?;
        let acc = evaluate_windows(&model, calibration)?.accuracy;
        if best.as_ref().is_none_or(|(a, _, _)| acc > *a) {
            best = Some((acc, q, model));
        }
    }
    let (_, q, model) = best.expect("candidates");
    float.calibrate(calibration, q);
    Ok((q, model))
}
