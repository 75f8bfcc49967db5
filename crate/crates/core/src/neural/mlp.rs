use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, FEATURE_DIM};

/// Which classification head a model implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Conflict / no-conflict, 1536→256→128→2.
    Binary,
    /// No-conflict / factual / temporal / opinion, 1536→256→128→64→4.
    FourWay,
}

impl HeadKind {
    pub fn classes(self) -> usize {
        match self {
            HeadKind::Binary => 2,
            HeadKind::FourWay => 4,
        }
    }

    pub fn default_hidden(self) -> &'static [usize] {
        match self {
            HeadKind::Binary => &[256, 128],
            HeadKind::FourWay => &[256, 128, 64],
        }
    }
}

/// Dense layer computing `weights · x + bias`; weights are `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Self {
        Self { weights, bias }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Feed-forward classifier: ReLU on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    head_kind: HeadKind,
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Default architecture for `head_kind`, He-uniform initialized.
    pub fn new(head_kind: HeadKind, seed: u64) -> Self {
        Self::with_hidden(head_kind, head_kind.default_hidden(), seed)
    }

    /// Custom hidden widths; input and output sizes are fixed by the head.
    pub fn with_hidden(head_kind: HeadKind, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![FEATURE_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(head_kind.classes());
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..limit));
                Layer::new(weights, Array1::zeros(fan_out))
            })
            .collect();
        Self { head_kind, layers }
    }

    pub fn from_layers(head_kind: HeadKind, layers: Vec<Layer>) -> Result<Self, ModelError> {
        let first = layers.first().ok_or(ModelError::NoLayers)?;
        if first.inputs() != FEATURE_DIM {
            return Err(ModelError::InputDimension {
                expected: FEATURE_DIM,
                found: first.inputs(),
            });
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(ModelError::Chain(format!(
                    "layer {i}: bias length {} vs {} outputs",
                    layer.bias.len(),
                    layer.outputs()
                )));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.inputs() != layer.outputs() {
                    return Err(ModelError::Chain(format!(
                        "layer {i} outputs {} but layer {} expects {}",
                        layer.outputs(),
                        i + 1,
                        next.inputs()
                    )));
                }
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite);
            }
        }
        let outputs = layers.last().map(Layer::outputs).unwrap_or_default();
        if outputs != head_kind.classes() {
            return Err(ModelError::Chain(format!(
                "{head_kind:?} head needs {} outputs, found {outputs}",
                head_kind.classes()
            )));
        }
        Ok(Self { head_kind, layers })
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head_kind
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    fn check_input(&self, features: &[f64]) -> Result<(), ModelError> {
        if features.len() != FEATURE_DIM {
            return Err(ModelError::InputDimension {
                expected: FEATURE_DIM,
                found: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(())
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_input(features)?;
        let mut activation = ArrayView1::from(features).to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.dot(&activation) + &layer.bias;
            if i < last {
                z.mapv_inplace(relu);
            }
            activation = z;
        }
        Ok(activation.to_vec())
    }

    /// Forward pass over a `[batch × 1536]` matrix, returning every layer's
    /// pre-activations followed by nothing else; the last entry is the logits.
    pub(crate) fn forward_batch(&self, inputs: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activation = inputs.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = activation.dot(&layer.weights.t()) + &layer.bias.view().insert_axis(Axis(0));
            if i < last {
                activation = z.mapv(relu);
            }
            pre_activations.push(z);
        }
        pre_activations
    }

    /// `(argmax label, softmax probability of the argmax)`.
    pub fn predict_with_confidence(&self, features: &[f64]) -> Result<(usize, f64), ModelError> {
        let logits = self.forward(features)?;
        Ok(confidence_from_logits(&logits))
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(softmax(&self.forward(features)?))
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Argmax (lowest index on ties) and its softmax probability.
pub fn confidence_from_logits(logits: &[f64]) -> (usize, f64) {
    let probs = softmax(logits);
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    (best, probs[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_model_gives_zero_logits() {
        let layers = vec![Layer::zeros(FEATURE_DIM, 8), Layer::zeros(8, 2)];
        let m = MlpModel::from_layers(HeadKind::Binary, layers).unwrap();
        let x: Vec<f64> = (0..FEATURE_DIM).map(|i| i as f64).collect();
        assert_eq!(m.forward(&x).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_selects_inputs() {
        let mut layer = Layer::zeros(FEATURE_DIM, 4);
        for (row, col) in [(0, 10), (1, 3), (2, 1535), (3, 0)] {
            layer.weights[[row, col]] = 1.0;
        }
        let m = MlpModel::from_layers(HeadKind::FourWay, vec![layer]).unwrap();
        let x: Vec<f64> = (0..FEATURE_DIM).map(|i| i as f64 * 0.5).collect();
        assert_eq!(m.forward(&x).unwrap(), vec![5.0, 1.5, 767.5, 0.0]);
    }

    #[test]
    fn confidence_cases() {
        assert_eq!(confidence_from_logits(&[0.0, 0.0]), (0, 0.5));
        let (label, conf) = confidence_from_logits(&[10.0, 0.0]);
        assert_eq!(label, 0);
        // 1 / (1 + e^-10)
        assert_abs_diff_eq!(conf, 0.999_954_602_131_297_6, epsilon = 1e-15);
        assert_eq!(confidence_from_logits(&[1.0; 4]), (0, 0.25));
    }

    #[test]
    fn default_architectures() {
        let b = MlpModel::new(HeadKind::Binary, 1);
        let shapes: Vec<_> = b.layers().iter().map(|l| (l.inputs(), l.outputs())).collect();
        assert_eq!(shapes, vec![(1536, 256), (256, 128), (128, 2)]);
        let f = MlpModel::new(HeadKind::FourWay, 1);
        let shapes: Vec<_> = f.layers().iter().map(|l| (l.inputs(), l.outputs())).collect();
        assert_eq!(shapes, vec![(1536, 256), (256, 128), (128, 64), (64, 4)]);
    }

    #[test]
    fn broken_chains_are_rejected() {
        let bad = vec![Layer::zeros(FEATURE_DIM, 8), Layer::zeros(7, 2)];
        assert!(matches!(MlpModel::from_layers(HeadKind::Binary, bad), Err(ModelError::Chain(_))));
        let wrong_out = vec![Layer::zeros(FEATURE_DIM, 3)];
        assert!(MlpModel::from_layers(HeadKind::Binary, wrong_out).is_err());
        let wrong_in = vec![Layer::zeros(10, 2)];
        assert!(matches!(
            MlpModel::from_layers(HeadKind::Binary, wrong_in),
            Err(ModelError::InputDimension { .. })
        ));
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let m = MlpModel::with_hidden(HeadKind::Binary, &[4], 0);
        assert!(matches!(m.forward(&[0.0; 10]), Err(ModelError::InputDimension { .. })));
    }

    #[test]
    fn first_layer_row_is_positively_homogeneous() {
        let mut m = MlpModel::with_hidden(HeadKind::Binary, &[6], 3);
        let x: Vec<f64> = (0..FEATURE_DIM).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        let pre = |m: &MlpModel| m.layers()[0].weights.row(2).dot(&ArrayView1::from(&x[..]));
        let before = pre(&m);
        m.layers_mut()[0].weights.row_mut(2).mapv_inplace(|w| w * 3.0);
        assert_abs_diff_eq!(pre(&m), 3.0 * before, epsilon = 1e-12);
    }

    #[test]
    fn batch_forward_matches_single() {
        let m = MlpModel::with_hidden(HeadKind::FourWay, &[16, 8], 9);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|r| (0..FEATURE_DIM).map(|i| ((i + r) % 5) as f64 - 2.0).collect())
            .collect();
        let batch = Array2::from_shape_fn((3, FEATURE_DIM), |(r, c)| rows[r][c]);
        let logits = m.forward_batch(&batch).pop().unwrap();
        for (r, row) in rows.iter().enumerate() {
            let single = m.forward(row).unwrap();
            for (a, b) in single.iter().zip(logits.row(r)) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }
}
