use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IdsError, FEATURE_LEN};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MODEL_LAYERS: usize = 5;
pub const OUTPUT_DIM: usize = 4;

const INT4_MIN: i8 = -8;
const INT4_MAX: i8 = 7;

/// Fixed-point rescale `multiplier / 2^shift` applied to a hidden layer's
/// accumulator before the activation clamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requant {
    pub multiplier: i32,
    pub shift: u8,
}

impl Requant {
    pub const IDENTITY: Requant = Requant {
        multiplier: 1,
        shift: 0,
    };

    /// Nearest fixed-point form of a positive real scale, with the
    /// multiplier normalised into `[2^30, 2^31)` where the range allows.
    pub fn from_scale(scale: f64) -> Requant {
        if !(scale.is_finite() && scale > 0.0) {
            return Requant {
                multiplier: 0,
                shift: 0,
            };
        }
        let mut shift: i32 = 30 - scale.log2().floor() as i32;
        shift = shift.clamp(0, 62);
        let mut m = (scale * 2f64.powi(shift)).round();
        if m >= 2f64.powi(31) && shift > 0 {
            shift -= 1;
            m = (scale * 2f64.powi(shift)).round();
        }
        Requant {
            multiplier: m.min(i32::MAX as f64) as i32,
            shift: shift as u8,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.multiplier) / 2f64.powi(i32::from(self.shift))
    }

    /// `round_half_up(acc * multiplier / 2^shift)`.
    pub fn apply(self, acc: i64) -> i64 {
        let prod = i128::from(acc) * i128::from(self.multiplier);
        let v = if self.shift == 0 {
            prod
        } else {
            (prod + (1i128 << (self.shift - 1))) >> self.shift
        };
        v.clamp(i128::from(i64::MIN), i128::from(i64::MAX)) as i64
    }
}

/// One affine layer with int4 weights stored row-major (`outputs × inputs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// Real value of one weight step.
    pub weight_scale: f64,
    pub weights: Vec<i8>,
    /// Biases in accumulator units (`weight_scale × input scale`).
    pub biases: Vec<i32>,
    /// Present on hidden layers; the output layer emits raw accumulators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requant: Option<Requant>,
}

impl QuantLayer {
    pub fn weight(&self, out: usize, inp: usize) -> i8 {
        self.weights[out * self.inputs + inp]
    }

    fn accumulate(&self, x: &[i64]) -> Vec<i64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, &b)| {
                row.iter()
                    .zip(x)
                    .fold(i64::from(b), |acc, (&w, &v)| acc + i64::from(w) * v)
            })
            .collect()
    }
}

/// Integer MLP: 5 affine layers, int4 weights, quantised ReLU between
/// layers, 4 output logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantMlpModel {
    pub format_version: u32,
    /// Real value of one input step (raw feature bytes are the layer-1 input).
    pub input_scale: f64,
    /// Bit width of hidden activations; values clamp to `[0, 2^bits - 1]`.
    pub activation_bits: u8,
    pub layers: Vec<QuantLayer>,
}

impl QuantMlpModel {
    pub fn activation_max(&self) -> i64 {
        (1i64 << self.activation_bits) - 1
    }

    pub fn validate(&self) -> Result<(), IdsError> {
        let bad = |m: String| Err(IdsError::InvalidModel(m));
        if self.format_version != MODEL_FORMAT_VERSION {
            return bad(format!(
                "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            ));
        }
        if !(1..=16).contains(&self.activation_bits) {
            return bad(format!("activation_bits {} out of range", self.activation_bits));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return bad("input_scale must be positive".into());
        }
        if self.layers.len() != MODEL_LAYERS {
            return bad(format!("expected {MODEL_LAYERS} layers, found {}", self.layers.len()));
        }
        let mut expect_in = FEATURE_LEN;
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs != expect_in {
                return Err(IdsError::DimensionMismatch(format!(
                    "layer {i} takes {} inputs, previous layer gives {expect_in}",
                    l.inputs
                )));
            }
            if l.outputs == 0 {
                return bad(format!("layer {i} has no outputs"));
            }
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(IdsError::DimensionMismatch(format!(
                    "layer {i}: {} weights / {} biases for {}x{}",
                    l.weights.len(),
                    l.biases.len(),
                    l.outputs,
                    l.inputs
                )));
            }
            if let Some(w) = l.weights.iter().find(|w| !(INT4_MIN..=INT4_MAX).contains(*w)) {
                return bad(format!("layer {i} weight {w} outside int4 range"));
            }
            if !(l.weight_scale.is_finite() && l.weight_scale > 0.0) {
                return bad(format!("layer {i} weight_scale must be positive"));
            }
            let last = i + 1 == MODEL_LAYERS;
            match (last, l.requant) {
                (false, None) => return bad(format!("hidden layer {i} lacks requant")),
                (true, Some(_)) => return bad("output layer must not requantise".into()),
                (false, Some(r)) if r.multiplier < 0 || r.shift > 62 => {
                    return bad(format!("layer {i} requant out of range"))
                }
                _ => {}
            }
            expect_in = l.outputs;
        }
        if expect_in != OUTPUT_DIM {
            return Err(IdsError::DimensionMismatch(format!(
                "model emits {expect_in} logits, expected {OUTPUT_DIM}"
            )));
        }
        Ok(())
    }

    /// Real value of one output-logit step.
    pub fn output_scale(&self) -> f64 {
        let mut s_in = self.input_scale;
        for l in &self.layers {
            match l.requant {
                Some(r) if r.multiplier > 0 => s_in = l.weight_scale * s_in / r.as_f64(),
                Some(_) => s_in = 1.0,
                None => return l.weight_scale * s_in,
            }
        }
        s_in
    }

    pub fn from_json(text: &str) -> Result<Self, IdsError> {
        let m: QuantMlpModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }

    pub fn load(path: &Path) -> Result<Self, IdsError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), IdsError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Integer forward pass over a 40-byte window.
pub fn mlp_infer(model: &QuantMlpModel, features: &[u8]) -> Result<[i64; OUTPUT_DIM], IdsError> {
    let first = model
        .layers
        .first()
        .ok_or_else(|| IdsError::InvalidModel("model has no layers".into()))?;
    if features.len() != first.inputs {
        return Err(IdsError::DimensionMismatch(format!(
            "window has {} bytes, model expects {}",
            features.len(),
            first.inputs
        )));
    }
    let amax = model.activation_max();
    let mut x: Vec<i64> = features.iter().map(|&b| i64::from(b)).collect();
    for layer in &model.layers {
        if layer.inputs != x.len() {
            return Err(IdsError::DimensionMismatch(format!(
                "layer expects {} inputs, got {}",
                layer.inputs,
                x.len()
            )));
        }
        let acc = layer.accumulate(&x);
        x = match layer.requant {
            Some(r) => acc.into_iter().map(|a| r.apply(a).clamp(0, amax)).collect(),
            None => acc,
        };
    }
    x.try_into().map_err(|v: Vec<i64>| {
        IdsError::DimensionMismatch(format!("model emitted {} logits", v.len()))
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Single-path model: input 0 → unit 0 of every layer → logit 0.
    pub(crate) fn passthrough_model() -> QuantMlpModel {
        let dims = [FEATURE_LEN, 4, 4, 4, 4, OUTPUT_DIM];
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let mut weights = vec![0i8; d[0] * d[1]];
                weights[0] = 1;
                QuantLayer {
                    inputs: d[0],
                    outputs: d[1],
                    weight_scale: 1.0,
                    weights,
                    biases: vec![0; d[1]],
                    requant: (i < 4).then_some(Requant::IDENTITY),
                }
            })
            .collect();
        QuantMlpModel {
            format_version: MODEL_FORMAT_VERSION,
            input_scale: 1.0,
            activation_bits: 4,
            layers,
        }
    }

    #[test]
    fn passthrough_logit_equals_input() {
        let m = passthrough_model();
        m.validate().unwrap();
        let mut window = [0u8; FEATURE_LEN];
        window[0] = 11;
        assert_eq!(mlp_infer(&m, &window).unwrap(), [11, 0, 0, 0]);
        // Activations saturate at 15 with 4-bit activations.
        window[0] = 200;
        assert_eq!(mlp_infer(&m, &window).unwrap()[0], 15);
    }

    #[test]
    fn zero_weights_give_biases() {
        let mut m = passthrough_model();
        for l in &mut m.layers {
            l.weights.iter_mut().for_each(|w| *w = 0);
        }
        m.layers[4].biases = vec![3, -2, 0, 9];
        assert_eq!(mlp_infer(&m, &[0xFF; FEATURE_LEN]).unwrap(), [3, -2, 0, 9]);
    }

    #[test]
    fn wrong_window_length() {
        let m = passthrough_model();
        assert!(matches!(mlp_infer(&m, &[0; 39]), Err(IdsError::DimensionMismatch(_))));
    }

    #[test]
    fn validation_catches_bad_models() {
        let mut m = passthrough_model();
        m.layers[1].weights[0] = 8;
        assert!(matches!(m.validate(), Err(IdsError::InvalidModel(_))));

        let mut m = passthrough_model();
        m.layers.pop();
        assert!(m.validate().is_err());

        let mut m = passthrough_model();
        m.layers[2].inputs = 5;
        assert!(matches!(m.validate(), Err(IdsError::DimensionMismatch(_))));

        let mut m = passthrough_model();
        m.layers[4].requant = Some(Requant::IDENTITY);
        assert!(m.validate().is_err());
    }

    #[test]
    fn json_round_trip_validates() {
        let m = passthrough_model();
        let back = QuantMlpModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let bad = m.to_json().replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(QuantMlpModel::from_json(&bad).is_err());
    }

    #[test]
    fn requant_rounds_half_up() {
        let half = Requant { multiplier: 1, shift: 1 };
        assert_eq!(half.apply(3), 2); // 1.5 -> 2
        assert_eq!(half.apply(-3), -1); // -1.5 -> -1
        let r = Requant::from_scale(0.1);
        assert!((r.as_f64() - 0.1).abs() < 1e-9);
        assert!((1 << 30..1i64 << 31).contains(&i64::from(r.multiplier)));
    }
}
