use serde::{Deserialize, Serialize};

use super::model::{QuantLayer, QuantMlpModel, Requant, MODEL_FORMAT_VERSION};
use super::train::FloatMlp;
use super::IdsError;

/// Largest per-layer weight quantisation error, in real units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantiseReport {
    pub weight_scales: Vec<f64>,
    pub max_weight_error: Vec<f64>,
    pub activation_scales: Vec<f64>,
}

/// Round `w / scale` to the nearest int4 step, clamping to `[-8, 7]`.
pub fn quantise_weight(w: f64, scale: f64) -> i8 {
    (w / scale).round().clamp(-8.0, 7.0) as i8
}

/// Post-training symmetric quantisation of a float MLP.
///
/// Weight scale per layer is `max|w| / 7`. Hidden activation scales come
/// from the activation ranges recorded at training time, mapped onto the
/// unsigned `activation_bits` grid; the layer's fixed-point rescale is the
/// nearest representable `weight_scale × input_scale / activation_scale`.
pub fn quantise_model(
    float: &FloatMlp,
    activation_bits: u8,
) -> Result<(QuantMlpModel, QuantiseReport), IdsError> {
    float.validate()?;
    let amax = f64::from((1u32 << activation_bits) - 1);
    let mut layers = Vec::with_capacity(float.layers.len());
    let mut report = QuantiseReport {
        weight_scales: Vec::new(),
        max_weight_error: Vec::new(),
        activation_scales: Vec::new(),
    };
    let mut s_in = float.input_scale;
    let last = float.layers.len() - 1;
    for (i, fl) in float.layers.iter().enumerate() {
        let wmax = fl.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let s_w = if wmax > 0.0 { wmax / 7.0 } else { 1.0 };
        let weights: Vec<i8> = fl.weights.iter().map(|&w| quantise_weight(w, s_w)).collect();
        let err = fl
            .weights
            .iter()
            .zip(&weights)
            .fold(0.0f64, |m, (&w, &q)| m.max((w - f64::from(q) * s_w).abs()));
        let acc_scale = s_w * s_in;
        let biases = fl
            .biases
            .iter()
            .map(|&b| (b / acc_scale).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
            .collect();
        let requant = if i < last {
            let range = float.activation_max.get(i).copied().unwrap_or(0.0);
            let s_a = if range > 0.0 { range / amax } else { 1.0 };
            let r = Requant::from_scale(acc_scale / s_a);
            let effective = if r.multiplier > 0 { acc_scale / r.as_f64() } else { s_a };
            report.activation_scales.push(effective);
            s_in = effective;
            Some(r)
        } else {
            None
        };
        report.weight_scales.push(s_w);
        report.max_weight_error.push(err);
        layers.push(QuantLayer {
            inputs: fl.inputs,
            outputs: fl.outputs,
            weight_scale: s_w,
            weights,
            biases,
            requant,
        });
    }
    let model = QuantMlpModel {
        format_version: MODEL_FORMAT_VERSION,
        input_scale: float.input_scale,
        activation_bits,
        layers,
    };
    model.validate()?;
    Ok((model, report))
}
