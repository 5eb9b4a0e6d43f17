use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::LabeledWindow;
use super::model::{MODEL_LAYERS, OUTPUT_DIM};
use super::softmax::softmax;
use super::{IdsError, FEATURE_LEN};
use crate::rng::stream_rng;
use crate::TrafficClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Float reference MLP, the input to post-training quantisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatMlp {
    pub input_scale: f64,
    pub layers: Vec<FloatLayer>,
    /// Calibrated upper range of each hidden layer's ReLU output.
    #[serde(default)]
    pub activation_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after each epoch.
    pub lr_decay: f64,
    pub seed: u64,
    /// L2 penalty on weights.
    pub weight_decay: f64,
    /// Quantile of observed hidden activations used as the activation range.
    pub activation_quantile: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![64, 64, 64, 64],
            epochs: 12,
            learning_rate: 0.02,
            lr_decay: 0.85,
            seed: 1,
            weight_decay: 1e-4,
            activation_quantile: 0.999,
        }
    }
}

impl FloatMlp {
    pub fn validate(&self) -> Result<(), IdsError> {
        if self.layers.len() != MODEL_LAYERS {
            return Err(IdsError::DimensionMismatch(format!(
                "expected {MODEL_LAYERS} layers, found {}",
                self.layers.len()
            )));
        }
        let mut expect = FEATURE_LEN;
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs != expect
                || l.weights.len() != l.inputs * l.outputs
                || l.biases.len() != l.outputs
            {
                return Err(IdsError::DimensionMismatch(format!("float layer {i}")));
            }
            expect = l.outputs;
        }
        if expect != OUTPUT_DIM {
            return Err(IdsError::DimensionMismatch(format!(
                "float model emits {expect} outputs"
            )));
        }
        Ok(())
    }

    /// Per-layer outputs: ReLU on hidden layers, raw logits last.
    fn forward(&self, features: &[u8]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(features.iter().map(|&b| f64::from(b) * self.input_scale).collect::<Vec<_>>());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let x = acts.last().unwrap();
            let y: Vec<f64> = l
                .weights
                .chunks_exact(l.inputs)
                .zip(&l.biases)
                .map(|(row, b)| {
                    let z = row.iter().zip(x).fold(*b, |a, (w, v)| a + w * v);
                    if i < last {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(y);
        }
        acts
    }

    pub fn logits(&self, features: &[u8]) -> Vec<f64> {
        self.forward(features).pop().unwrap()
    }

    pub fn predict(&self, features: &[u8]) -> TrafficClass {
        let l = self.logits(features);
        TrafficClass::from_index(super::softmax::argmax(&l)).unwrap()
    }

    pub fn load(path: &Path) -> Result<Self, IdsError> {
        let m: FloatMlp = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), IdsError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

fn init_mlp(dims: &[usize], seed: u64) -> FloatMlp {
    let mut rng = stream_rng(seed, "ids.train.init");
    let layers = dims
        .windows(2)
        .map(|d| {
            let bound = (6.0 / d[0] as f64).sqrt();
            FloatLayer {
                inputs: d[0],
                outputs: d[1],
                weights: (0..d[0] * d[1]).map(|_| rng.gen_range(-bound..bound)).collect(),
                biases: vec![0.0; d[1]],
            }
        })
        .collect();
    FloatMlp {
        input_scale: 1.0 / 255.0,
        layers,
        activation_max: Vec::new(),
    }
}

/// Plain per-sample SGD on softmax cross-entropy. Deterministic under
/// `config.seed`.
pub fn train_reference(windows: &[LabeledWindow], config: &TrainConfig) -> Result<FloatMlp, IdsError> {
    let mut present = [false; OUTPUT_DIM];
    for w in windows {
        present[w.label.index()] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(IdsError::InsufficientData(
            "need windows from at least two classes".into(),
        ));
    }
    if config.hidden.len() != MODEL_LAYERS - 1 || config.hidden.contains(&0) {
        return Err(IdsError::DimensionMismatch(format!(
            "need {} non-zero hidden widths",
            MODEL_LAYERS - 1
        )));
    }
    let mut dims = vec![FEATURE_LEN];
    dims.extend(&config.hidden);
    dims.push(OUTPUT_DIM);
    let mut mlp = init_mlp(&dims, config.seed);

    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut rng = stream_rng(config.seed, "ids.train.shuffle");
    let mut lr = config.learning_rate;
    let last = mlp.layers.len() - 1;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            let w = &windows[k];
            let acts = mlp.forward(&w.features);
            let mut delta = softmax(&acts[last + 1]);
            delta[w.label.index()] -= 1.0;
            for li in (0..=last).rev() {
                let layer = &mut mlp.layers[li];
                let x = &acts[li];
                let mut prev = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for ((wv, &xv), p) in row.iter_mut().zip(x).zip(prev.iter_mut()) {
                        *p += *wv * d;
                        *wv -= lr * (d * xv + config.weight_decay * *wv);
                    }
                    layer.biases[o] -= lr * d;
                }
                if li > 0 {
                    // ReLU derivative of the layer below.
                    for (p, &a) in prev.iter_mut().zip(x) {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
                delta = prev;
            }
        }
        lr *= config.lr_decay;
    }
    mlp.calibrate(windows, config.activation_quantile);
    Ok(mlp)
}

impl FloatMlp {
    /// Set each hidden layer's activation range to the given quantile of
    /// its positive activations over `windows`.
    pub fn calibrate(&mut self, windows: &[LabeledWindow], quantile: f64) {
        self.activation_max = calibrate_activations(self, windows, quantile);
    }
}

fn calibrate_activations(mlp: &FloatMlp, windows: &[LabeledWindow], quantile: f64) -> Vec<f64> {
    let hidden = mlp.layers.len() - 1;
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); hidden];
    for w in windows {
        let acts = mlp.forward(&w.features);
        for (h, s) in samples.iter_mut().enumerate() {
            s.extend(acts[h + 1].iter().copied().filter(|&v| v > 0.0));
        }
    }
    samples
        .into_iter()
        .map(|mut s| {
            if s.is_empty() {
                return 0.0;
            }
            let q = quantile.clamp(0.0, 1.0);
            let k = ((s.len() - 1) as f64 * q).round() as usize;
            let (_, v, _) = s.select_nth_unstable_by(k, f64::total_cmp);
            *v
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn random_float_mlp(dims: &[usize], seed: u64) -> FloatMlp {
        let mut m = init_mlp(dims, seed);
        let mut rng = stream_rng(seed, "test.bias");
        for l in &mut m.layers {
            l.biases.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
        m.activation_max = vec![4.0; dims.len() - 2];
        m
    }

    fn toy_set() -> Vec<LabeledWindow> {
        let mut rng = stream_rng(5, "toy");
        (0..400)
            .map(|i| {
                let attack = i % 2 == 1;
                let mut features = [0u8; FEATURE_LEN];
                for b in features.iter_mut() {
                    *b = rng.gen_range(0..100);
                }
                if attack {
                    features[1] = 200 + rng.gen_range(0..50);
                }
                LabeledWindow {
                    features,
                    label: if attack { TrafficClass::Dos } else { TrafficClass::Benign },
                }
            })
            .collect()
    }

    fn small() -> TrainConfig {
        TrainConfig {
            hidden: vec![16, 16, 16, 16],
            epochs: 20,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_set_is_learned() {
        let data = toy_set();
        let m = train_reference(&data, &small()).unwrap();
        let correct = data.iter().filter(|w| m.predict(&w.features) == w.label).count();
        assert!(correct as f64 / data.len() as f64 >= 0.99, "{correct}/{}", data.len());
    }

    #[test]
    fn same_seed_same_weights() {
        let data = toy_set();
        let cfg = TrainConfig { epochs: 2, ..small() };
        assert_eq!(train_reference(&data, &cfg).unwrap(), train_reference(&data, &cfg).unwrap());
    }

    #[test]
    fn single_class_is_insufficient() {
        let data: Vec<_> = toy_set().into_iter().filter(|w| w.label == TrafficClass::Benign).collect();
        assert!(matches!(train_reference(&data, &small()), Err(IdsError::InsufficientData(_))));
    }
}
