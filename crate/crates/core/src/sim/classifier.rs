//! Softmax classifier: linear, or one tanh hidden layer followed by a linear head.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
struct Hidden {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    input_dim: usize,
    hidden: Option<Hidden>,
    head_weights: Array2<f64>,
    head_bias: Array1<f64>,
}

impl Classifier {
    /// `hidden_units == 0` gives a linear model. The head starts at zero.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_units: usize, classes: usize, rng: &mut R) -> Self {
        let hidden = (hidden_units > 0).then(|| {
            let scale = 1.0 / (input_dim as f64).sqrt();
            Hidden {
                weights: Array2::from_shape_fn((input_dim, hidden_units), |_| {
                    scale * rng.sample::<f64, _>(StandardNormal)
                }),
                bias: Array1::zeros(hidden_units),
            }
        });
        let features = if hidden_units > 0 { hidden_units } else { input_dim };
        Self {
            input_dim,
            hidden,
            head_weights: Array2::zeros((features, classes)),
            head_bias: Array1::zeros(classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.head_bias.len()
    }

    /// Appends zero-initialized output columns.
    pub fn grow(&mut self, additional: usize) {
        let (features, classes) = self.head_weights.dim();
        let mut w = Array2::zeros((features, classes + additional));
        w.slice_mut(ndarray::s![.., ..classes]).assign(&self.head_weights);
        self.head_weights = w;
        let mut b = Array1::zeros(classes + additional);
        b.slice_mut(ndarray::s![..classes]).assign(&self.head_bias);
        self.head_bias = b;
    }

    fn features(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match &self.hidden {
            Some(h) => (x.dot(&h.weights) + &h.bias).mapv(f64::tanh),
            None => x.to_owned(),
        }
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.features(x).dot(&self.head_weights) + &self.head_bias
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.logits(x)
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                    .0
            })
            .collect()
    }

    /// One SGD step given `∂loss/∂logits` for the batch `x`.
    pub fn sgd_step(&mut self, x: ArrayView2<'_, f64>, grad_logits: ArrayView2<'_, f64>, learning_rate: f64) {
        let features = self.features(x);
        let grad_w = features.t().dot(&grad_logits);
        let grad_b = grad_logits.sum_axis(Axis(0));
        if let Some(h) = &mut self.hidden {
            let back = grad_logits.dot(&self.head_weights.t());
            let pre = &back * &features.mapv(|a| 1.0 - a * a);
            h.weights.scaled_add(-learning_rate, &x.t().dot(&pre));
            h.bias.scaled_add(-learning_rate, &pre.sum_axis(Axis(0)));
        }
        self.head_weights.scaled_add(-learning_rate, &grad_w);
        self.head_bias.scaled_add(-learning_rate, &grad_b);
    }
}
