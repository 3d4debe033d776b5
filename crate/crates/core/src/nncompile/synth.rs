//! Benchmark shapes, random models and a small synthetic classification
//! task with a hand-constructed model.

use rand::Rng;

use super::fixed;
use super::model::{Activation, DenseLayer, MlpModel};

pub const BM1: [usize; 5] = [784, 1024, 1024, 1024, 10];
pub const BM2: [usize; 4] = [784, 5, 5, 10];
pub const BM3: [usize; 5] = [784, 6, 5, 5, 10];

/// Random weights scaled by fan-in so activations neither vanish nor
/// saturate; hidden layers use `hidden`, the output layer none.
pub fn random_mlp<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, rng: &mut R) -> MlpModel {
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(l, io)| {
            let (n_in, n_out) = (io[0], io[1]);
            let r = ((4.0 * fixed::ONE as f64) / (n_in as f64).sqrt()).max(1.0) as i32;
            DenseLayer {
                weights: (0..n_out)
                    .map(|_| (0..n_in).map(|_| rng.gen_range(-r..=r)).collect())
                    .collect(),
                biases: (0..n_out).map(|_| rng.gen_range(-64..=64)).collect(),
                activation: if l + 2 == sizes.len() { Activation::None } else { hidden },
            }
        })
        .collect();
    MlpModel {
        layer_sizes: sizes.to_vec(),
        layers,
    }
}

pub fn bm1<R: Rng + ?Sized>(rng: &mut R) -> MlpModel {
    random_mlp(&BM1, Activation::Relu, rng)
}

pub fn bm2<R: Rng + ?Sized>(rng: &mut R) -> MlpModel {
    random_mlp(&BM2, Activation::Relu, rng)
}

pub fn bm3<R: Rng + ?Sized>(rng: &mut R) -> MlpModel {
    random_mlp(&BM3, Activation::HardSigmoid, rng)
}

/// Sparse pixel vector: mostly dark, the rest uniform in `1..=255`.
pub fn random_input<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<i32> {
    (0..n)
        .map(|_| if rng.gen_bool(0.75) { 0 } else { rng.gen_range(1..=255) })
        .collect()
}

/// Ten classes, one per pair of five pixel groups. Group `k` is the pixels
/// `i < 780` with `i % 5 == k`; a sample of class `c` lights each pixel of
/// its two groups with probability 0.8 and every other pixel with 0.2.
pub const TASK_GROUPS: usize = 5;

pub fn class_code(c: usize) -> [bool; TASK_GROUPS] {
    let mut pairs = Vec::new();
    for a in 0..TASK_GROUPS {
        for b in a + 1..TASK_GROUPS {
            pairs.push((a, b));
        }
    }
    let (a, b) = pairs[c];
    let mut code = [false; TASK_GROUPS];
    code[a] = true;
    code[b] = true;
    code
}

pub fn task_sample<R: Rng + ?Sized>(class: usize, rng: &mut R) -> Vec<i32> {
    let code = class_code(class);
    (0..784)
        .map(|i| {
            let p = if i >= 780 {
                0.5
            } else if code[i % TASK_GROUPS] {
                0.8
            } else {
                0.2
            };
            if rng.gen_bool(p) {
                255
            } else {
                0
            }
        })
        .collect()
}

/// `(inputs, labels)`, classes cycling `0..10`.
pub fn task_dataset<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (Vec<Vec<i32>>, Vec<usize>) {
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let xs = labels.iter().map(|&c| task_sample(c, rng)).collect();
    (xs, labels)
}

/// A 784-5-5-10 model solving the task. Layer one detects each group by a
/// majority vote; layer two recovers the group bits from the pair code;
/// the output layer scores the negated Hamming distance to each class code.
/// Every weight in a layer shares one magnitude and the hidden layers are
/// steep hard sigmoids, the regime where sign binarization loses little.
pub fn task_model() -> MlpModel {
    const A: i32 = 32;
    let l1 = DenseLayer {
        weights: (0..TASK_GROUPS)
            .map(|k| {
                (0..784)
                    .map(|i| {
                        if i < 780 && i % TASK_GROUPS == k {
                            A
                        } else if (i / TASK_GROUPS).is_multiple_of(2) {
                            A
                        } else {
                            -A
                        }
                    })
                    .collect()
            })
            .collect(),
        // Fires above 77.5 of 156 lit pixels.
        biases: vec![-(155 * A * 255) / (2 * fixed::ONE); TASK_GROUPS],
        activation: Activation::HardSigmoid,
    };
    // Balance the alternating weights: each neuron sees the same number of
    // +A and -A weights outside its own group apart from a constant, which
    // the bias absorbs.
    let l1 = rebalance(l1);
    const B: i32 = 4 * fixed::ONE;
    let l2 = DenseLayer {
        weights: (0..TASK_GROUPS)
            .map(|k| (0..TASK_GROUPS).map(|j| if j == k { B } else { -B }).collect())
            .collect(),
        biases: vec![B / 2; TASK_GROUPS],
        activation: Activation::HardSigmoid,
    };
    let l3 = DenseLayer {
        weights: (0..10)
            .map(|c| {
                class_code(c)
                    .iter()
                    .map(|&b| if b { fixed::ONE } else { -fixed::ONE })
                    .collect()
            })
            .collect(),
        biases: vec![-2 * fixed::ONE; 10],
        activation: Activation::None,
    };
    MlpModel {
        layer_sizes: BM2.to_vec(),
        layers: vec![l1, l2, l3],
    }
}

/// Shifts each layer-one bias by the expected contribution of the
/// out-of-group weights on a sample whose other groups are half lit.
fn rebalance(mut l: DenseLayer) -> DenseLayer {
    for (k, (row, b)) in l.weights.iter().zip(l.biases.iter_mut()).enumerate() {
        let outside: i64 = row
            .iter()
            .enumerate()
            .filter(|(i, _)| !(*i < 780 && i % TASK_GROUPS == k))
            .map(|(_, &w)| w as i64)
            .sum();
        *b -= (outside * 255 / 2 / fixed::ONE as i64) as i32;
    }
    l
}
