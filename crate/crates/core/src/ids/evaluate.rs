use super::features::{windows_from_trace, LabeledWindow};
use super::model::{mlp_infer, QuantMlpModel};
use super::softmax::argmax;
use super::IdsError;
use crate::can::CanFrame;
use crate::monitor::{compute_metrics, MetricsReport};
use crate::TrafficClass;

pub fn predict_windows(
    model: &QuantMlpModel,
    windows: &[LabeledWindow],
) -> Result<Vec<TrafficClass>, IdsError> {
    windows
        .iter()
        .map(|w| {
            let logits = mlp_infer(model, &w.features)?;
            let real: Vec<f64> = logits.iter().map(|&l| l as f64).collect();
            Ok(TrafficClass::from_index(argmax(&real)).expect("4 outputs"))
        })
        .collect()
}

pub fn evaluate_windows(
    model: &QuantMlpModel,
    windows: &[LabeledWindow],
) -> Result<MetricsReport, IdsError> {
    let predicted = predict_windows(model, windows)?;
    Ok(compute_metrics(
        windows.iter().map(|w| w.label).zip(predicted),
    ))
}

/// Window a labelled trace (newest-frame labelling) and score the model.
pub fn evaluate<'a>(
    model: &QuantMlpModel,
    trace: impl IntoIterator<Item = (&'a CanFrame, TrafficClass)>,
) -> Result<MetricsReport, IdsError> {
    evaluate_windows(model, &windows_from_trace(trace))
}
