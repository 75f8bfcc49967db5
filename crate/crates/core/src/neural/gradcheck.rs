//! Finite-difference validation of the analytic gradients.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::MlpModel;
use super::train::{loss_and_gradients, LabeledPairExample};
use super::{ModelError, FEATURE_DIM};

/// Which parameters to compare.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamSelection {
    /// `count` parameters drawn uniformly without replacement.
    Sample { count: usize, seed: u64 },
    /// Every bias of every layer.
    Biases,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ParamRef {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, index: usize },
}

fn all_params(model: &MlpModel) -> Vec<ParamRef> {
    let mut out = Vec::with_capacity(model.parameter_count());
    for (layer, l) in model.layers().iter().enumerate() {
        for row in 0..l.outputs() {
            for col in 0..l.inputs() {
                out.push(ParamRef::Weight { layer, row, col });
            }
        }
        for index in 0..l.outputs() {
            out.push(ParamRef::Bias { layer, index });
        }
    }
    out
}

fn param_mut(model: &mut MlpModel, p: ParamRef) -> &mut f64 {
    match p {
        ParamRef::Weight { layer, row, col } => &mut model.layers_mut()[layer].weights[[row, col]],
        ParamRef::Bias { layer, index } => &mut model.layers_mut()[layer].bias[index],
    }
}

/// Relative error `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// vanishing gradients from dividing round-off by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between backprop and central differences over
/// the selected parameters, using unweighted cross-entropy on one example.
pub fn gradient_check_selected(
    model: &MlpModel,
    example: &LabeledPairExample,
    epsilon: f64,
    selection: ParamSelection,
) -> Result<f64, ModelError> {
    if !(epsilon > 0.0) {
        return Err(ModelError::Precondition(format!("epsilon must be positive, got {epsilon}")));
    }
    let head = model.head_kind();
    let x = Array2::from_shape_vec((1, FEATURE_DIM), example.features().to_vec())
        .expect("feature length checked on construction");
    let y = [example.label_for(head)];
    let weights = vec![1.0; head.classes()];
    let (_, grads) = loss_and_gradients(model, &x, &y, &weights, true);
    let grads = grads.expect("requested gradients");

    let params = all_params(model);
    let chosen: Vec<ParamRef> = match selection {
        ParamSelection::Sample { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, params.len(), count.min(params.len()))
                .into_iter()
                .map(|i| params[i])
                .collect()
        }
        ParamSelection::Biases => params
            .into_iter()
            .filter(|p| matches!(p, ParamRef::Bias { .. }))
            .collect(),
    };

    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    for p in chosen {
        let original = *param_mut(&mut probe, p);
        *param_mut(&mut probe, p) = original + epsilon;
        let (plus, _) = loss_and_gradients(&probe, &x, &y, &weights, false);
        *param_mut(&mut probe, p) = original - epsilon;
        let (minus, _) = loss_and_gradients(&probe, &x, &y, &weights, false);
        *param_mut(&mut probe, p) = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = match p {
            ParamRef::Weight { layer, row, col } => grads.weights[layer][[row, col]],
            ParamRef::Bias { layer, index } => grads.biases[layer][index],
        };
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}

/// [`gradient_check_selected`] over 128 sampled parameters.
pub fn gradient_check(model: &MlpModel, example: &LabeledPairExample, epsilon: f64) -> Result<f64, ModelError> {
    gradient_check_selected(model, example, epsilon, ParamSelection::Sample { count: 128, seed: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConflictType;
    use crate::neural::HeadKind;

    #[test]
    fn zero_epsilon_is_a_precondition_error() {
        let m = MlpModel::with_hidden(HeadKind::Binary, &[4], 0);
        let e = LabeledPairExample::new(vec![0.1; FEATURE_DIM], ConflictType::Factual).unwrap();
        assert!(matches!(gradient_check(&m, &e, 0.0), Err(ModelError::Precondition(_))));
    }

    #[test]
    fn small_random_model_passes() {
        let m = MlpModel::with_hidden(HeadKind::FourWay, &[12, 6], 11);
        let f: Vec<f64> = (0..FEATURE_DIM).map(|i| ((i * 31) % 17) as f64 / 17.0 - 0.5).collect();
        let e = LabeledPairExample::new(f, ConflictType::Temporal).unwrap();
        assert!(gradient_check(&m, &e, 1e-5).unwrap() < 1e-4);
    }
}
