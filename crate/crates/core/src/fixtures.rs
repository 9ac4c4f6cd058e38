//! Seeded synthetic datasets for tests, benchmarks, and demos.

use rand::Rng;

use crate::seeds;
use crate::table::{Dataset, FeatureSpec, Record, Schema, Value};

const CATEGORY_POOL: [&str; 8] = ["alpha", "beta", "gamma", "delta", "north", "south", "east", "west"];

/// Builds a random mixed-type dataset: `numeric` numerical features over
/// seeded ranges, `categorical` categorical features over small category
/// pools, and `classes` label classes. Deterministic under `seed`.
pub fn random_dataset(
    seed: u64,
    rows: usize,
    numeric: usize,
    categorical: usize,
    classes: usize,
) -> Dataset {
    assert!(classes >= 2, "need at least two classes");
    let mut rng = seeds::rng(seeds::derive(seed, "fixture", 0));

    let mut features = Vec::new();
    let mut ranges = Vec::new();
    for i in 0..numeric {
        let min = rng.gen_range(-50.0_f64..50.0).round();
        let width = rng.gen_range(1.0_f64..200.0).round();
        ranges.push((min, min + width));
        features.push(FeatureSpec::numerical(format!("num{i}"), min, min + width));
    }
    let mut pools: Vec<Vec<&str>> = Vec::new();
    for i in 0..categorical {
        let size = rng.gen_range(2..=CATEGORY_POOL.len());
        let pool: Vec<&str> = CATEGORY_POOL[..size].to_vec();
        features.push(FeatureSpec::categorical(format!("cat{i}"), pool.clone()));
        pools.push(pool);
    }
    let class_names: Vec<String> = (0..classes).map(|c| c.to_string()).collect();
    let label = FeatureSpec::categorical("label", class_names.clone());
    let schema = Schema::new(features, label);

    let mut records = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut values = Vec::new();
        for &(min, max) in &ranges {
            // Two-decimal values keep text forms short and parse-stable.
            let v = (rng.gen_range(min..=max) * 100.0).round() / 100.0;
            values.push(Value::numeric(format!("{v}")).expect("finite"));
        }
        for pool in &pools {
            let pick = pool[rng.gen_range(0..pool.len())];
            values.push(Value::Categorical(pick.to_string()));
        }
        let label = class_names[rng.gen_range(0..classes)].clone();
        records.push(Record { values, label });
    }
    Dataset::new(schema, records).expect("fixture records conform")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic() {
        let a = random_dataset(3, 25, 2, 2, 2);
        let b = random_dataset(3, 25, 2, 2, 2);
        assert_eq!(a, b);
        let c = random_dataset(4, 25, 2, 2, 2);
        assert_ne!(a, c);
    }
}
