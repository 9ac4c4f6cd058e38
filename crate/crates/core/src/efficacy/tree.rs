//! CART-style decision tree: Gini impurity, midpoint thresholds,
//! depth-limited. Split scanning is in fixed feature/threshold order, so
//! training is deterministic.

use super::TabularClassifier;

enum Node {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

pub struct DecisionTree {
    root: Node,
}

const MIN_SPLIT: usize = 2;

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn class_counts(rows: &[usize], y: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; classes];
    for &row in rows {
        counts[y[row]] += 1;
    }
    counts
}

fn build(
    x: &[Vec<f64>],
    y: &[usize],
    rows: Vec<usize>,
    classes: usize,
    depth: usize,
    max_depth: usize,
) -> Node {
    let counts = class_counts(&rows, y, classes);
    let node_gini = gini(&counts, rows.len());
    if depth >= max_depth || rows.len() < MIN_SPLIT || node_gini == 0.0 {
        return Node::Leaf {
            class: majority(&counts),
        };
    }

    let dims = x.first().map_or(0, Vec::len);
    let mut best: Option<(f64, usize, f64)> = None; // (weighted gini, feature, threshold)
    for feature in 0..dims {
        let mut values: Vec<f64> = rows.iter().map(|&r| x[r][feature]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
        values.dedup();
        for pair in values.windows(2) {
            let threshold = (pair[0] + pair[1]) / 2.0;
            let mut left_counts = vec![0usize; classes];
            let mut left_total = 0usize;
            for &row in &rows {
                if x[row][feature] <= threshold {
                    left_counts[y[row]] += 1;
                    left_total += 1;
                }
            }
            let right_total = rows.len() - left_total;
            if left_total == 0 || right_total == 0 {
                continue;
            }
            let right_counts: Vec<usize> = counts
                .iter()
                .zip(&left_counts)
                .map(|(&all, &l)| all - l)
                .collect();
            let weighted = (left_total as f64 * gini(&left_counts, left_total)
                + right_total as f64 * gini(&right_counts, right_total))
                / rows.len() as f64;
            let better = match best {
                None => true,
                Some((b, _, _)) => weighted < b - 1e-12,
            };
            if better {
                best = Some((weighted, feature, threshold));
            }
        }
    }

    match best {
        Some((weighted, feature, threshold)) if weighted < node_gini - 1e-12 => {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&r| x[r][feature] <= threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(build(x, y, left_rows, classes, depth + 1, max_depth)),
                right: Box::new(build(x, y, right_rows, classes, depth + 1, max_depth)),
            }
        }
        _ => Node::Leaf {
            class: majority(&counts),
        },
    }
}

impl DecisionTree {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, max_depth: usize) -> Self {
        assert_eq!(x.len(), y.len());
        let rows: Vec<usize> = (0..x.len()).collect();
        DecisionTree {
            root: build(x, y, rows, classes, 0, max_depth),
        }
    }
}

impl TabularClassifier for DecisionTree {
    fn predict(&self, features: &[f64]) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { class } => return *class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if features[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }
}
