//! Softmax (multinomial logistic) regression trained by full-batch
//! gradient descent. Deterministic: weights start at zero and the data
//! order is fixed, so the seed only labels the run.

use super::TabularClassifier;

pub struct LogisticRegression {
    /// Per-class weight rows; the last column is the bias.
    weights: Vec<Vec<f64>>,
}

const LEARNING_RATE: f64 = 0.5;
const EPOCHS: usize = 400;

impl LogisticRegression {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, _seed: u64) -> Self {
        assert_eq!(x.len(), y.len());
        let dims = x.first().map_or(0, Vec::len);
        let n = x.len() as f64;
        let mut weights = vec![vec![0.0; dims + 1]; classes];

        let mut scores = vec![0.0; classes];
        let mut gradient = vec![vec![0.0; dims + 1]; classes];
        for _ in 0..EPOCHS {
            for row in &mut gradient {
                row.iter_mut().for_each(|g| *g = 0.0);
            }
            for (features, &gold) in x.iter().zip(y) {
                softmax_scores(&weights, features, &mut scores);
                for (class, score) in scores.iter().enumerate() {
                    let err = score - if class == gold { 1.0 } else { 0.0 };
                    let grad = &mut gradient[class];
                    for (g, &f) in grad.iter_mut().zip(features) {
                        *g += err * f;
                    }
                    grad[dims] += err;
                }
            }
            for (w_row, g_row) in weights.iter_mut().zip(&gradient) {
                for (w, g) in w_row.iter_mut().zip(g_row) {
                    *w -= LEARNING_RATE * g / n;
                }
            }
        }
        LogisticRegression { weights }
    }
}

fn softmax_scores(weights: &[Vec<f64>], features: &[f64], out: &mut [f64]) {
    let dims = features.len();
    for (slot, row) in out.iter_mut().zip(weights) {
        let mut z = row[dims];
        for (w, f) in row.iter().zip(features) {
            z += w * f;
        }
        *slot = z;
    }
    let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in out.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in out.iter_mut() {
        *z /= sum;
    }
}

impl TabularClassifier for LogisticRegression {
    fn predict(&self, features: &[f64]) -> usize {
        let mut scores = vec![0.0; self.weights.len()];
        softmax_scores(&self.weights, features, &mut scores);
        scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite scores"))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}
