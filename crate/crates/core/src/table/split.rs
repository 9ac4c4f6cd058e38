//! Deterministic train/validation/test splitting.

use rand::seq::SliceRandom;

use super::{Dataset, Split, TableError};
use crate::seeds;

/// Tags every record with a split. Counts are floor-based on the shuffled
/// order: `floor(r_val * n)` validation, `floor(r_test * n)` test, and the
/// remainder (including rounding leftovers) goes to train.
pub fn split(
    dataset: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Dataset, TableError> {
    let (r_train, r_val, r_test) = ratios;
    let sum = r_train + r_val + r_test;
    if !(r_train > 0.0 && r_val > 0.0 && r_test > 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(TableError::BadRatios(ratios));
    }
    let n = dataset.len();
    if n < 3 {
        return Err(TableError::TooSmallToSplit(n));
    }

    let n_val = (r_val * n as f64).floor() as usize;
    let n_test = (r_test * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed));

    let mut tags = vec![Split::Train; n];
    for &i in order.iter().take(n_train) {
        tags[i] = Split::Train;
    }
    for &i in order.iter().skip(n_train).take(n_val) {
        tags[i] = Split::Val;
    }
    for &i in order.iter().skip(n_train + n_val) {
        tags[i] = Split::Test;
    }

    let mut out = dataset.clone();
    out.set_splits(tags);
    Ok(out)
}
