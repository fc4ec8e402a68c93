use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
const INIT_SCALE: f64 = 0.01;

/// Multinomial logistic regression: one weight row and bias per class.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LinearClassifier {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        let scores = self.scores(x);
        (0..scores.nrows())
            .map(|i| {
                let row = scores.row(i);
                // First index wins on ties so predictions are deterministic.
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect()
    }

    pub fn accuracy(&self, x: &DMatrix<f64>, labels: &[usize]) -> f64 {
        let hits = self
            .predict(x)
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        hits as f64 / labels.len() as f64
    }

    fn scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = x * self.weights.transpose();
        for mut row in s.row_iter_mut() {
            row += self.bias.transpose();
        }
        s
    }
}

/// Full-batch gradient descent on the softmax cross-entropy.
///
/// `x` is n × d, `labels` are class indices below `classes`. Weights start
/// from a small uniform draw determined by `rng`.
pub fn fit_softmax(
    x: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    iterations: usize,
    learning_rate: f64,
    rng: &mut ChaCha8Rng,
) -> LinearClassifier {
    let (n, d) = x.shape();
    let weights = DMatrix::from_fn(classes, d, |_, _| rng.random_range(-INIT_SCALE..INIT_SCALE));
    let bias = DVector::zeros(classes);
    let mut model = LinearClassifier { weights, bias };

    let mut onehot = DMatrix::zeros(n, classes);
    for (i, &y) in labels.iter().enumerate() {
        onehot[(i, y)] = 1.0;
    }
    for _ in 0..iterations {
        let mut residual = model.scores(x);
        for mut row in residual.row_iter_mut() {
            let max = row.max();
            row.apply(|v| *v = (*v - max).exp());
            let total = row.sum();
            row /= total;
        }
        residual -= &onehot;
        let grad_w = residual.transpose() * x / n as f64;
        let grad_b = residual.row_sum().transpose() / n as f64;
        model.weights -= grad_w * learning_rate;
        model.bias -= grad_b * learning_rate;
    }
    model
}

/// Convenience constructor for the per-round generator.
pub fn round_rng(seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_points_are_learned() {
        let x = DMatrix::from_row_slice(4, 2, &[2.0, 0.1, 1.5, -0.3, -2.0, 0.2, -1.0, -0.1]);
        let labels = [0, 0, 1, 1];
        let model = fit_softmax(&x, &labels, 2, 500, 0.1, &mut round_rng(7, 0));
        assert_eq!(model.accuracy(&x, &labels), 1.0);
        let w = model.weights.row(0) - model.weights.row(1);
        assert!(w[0].abs() > 5.0 * w[1].abs());
    }

    #[test]
    fn same_seed_same_weights() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let a = fit_softmax(&x, &[0, 1, 2], 3, 50, 0.1, &mut round_rng(3, 1));
        let b = fit_softmax(&x, &[0, 1, 2], 3, 50, 0.1, &mut round_rng(3, 1));
        assert_eq!(a.weights, b.weights);
    }
}
