//! Plaintext reference inference and binarization.

use super::model::{Activation, BnnLayer, BnnModel, MlpModel};
use super::{fixed, NnError};

pub(crate) fn activate(a: Activation, v: i32) -> i32 {
    match a {
        Activation::Relu => v.max(0),
        Activation::HardSigmoid => ((v >> 2) + fixed::ONE / 2).clamp(0, fixed::ONE),
        Activation::None => v,
    }
}

/// Layerwise `sat((b << 8) + sum w x) >> 8` followed by the activation.
/// The accumulator is exact; saturation happens once per neuron.
pub fn infer_plain(m: &MlpModel, x: &[i32]) -> Result<Vec<i32>, NnError> {
    m.validate()?;
    if x.len() != m.n_inputs() {
        return Err(NnError::InputLength {
            expected: m.n_inputs(),
            got: x.len(),
        });
    }
    let mut cur = x.to_vec();
    for layer in &m.layers {
        cur = layer
            .weights
            .iter()
            .zip(&layer.biases)
            .map(|(row, &b)| {
                let acc = ((b as i64) << fixed::FRAC_BITS)
                    + row.iter().zip(&cur).map(|(&w, &v)| w as i64 * v as i64).sum::<i64>();
                activate(layer.activation, fixed::saturate(acc >> fixed::FRAC_BITS))
            })
            .collect();
    }
    Ok(cur)
}

/// `2 * popcount(xnor(w, x)) - n` over ±1 vectors encoded as bits.
pub fn xnor_popcount(w: &[bool], x: &[bool]) -> i32 {
    let agree = w.iter().zip(x).filter(|(a, b)| a == b).count() as i32;
    2 * agree - w.len() as i32
}

/// Hidden layers emit bit `acc >= threshold`; the output layer emits
/// `acc - threshold` as its logit.
pub fn infer_plain_bnn(m: &BnnModel, x: &[bool]) -> Result<Vec<i32>, NnError> {
    m.validate()?;
    if x.len() != m.n_inputs() {
        return Err(NnError::InputLength {
            expected: m.n_inputs(),
            got: x.len(),
        });
    }
    let mut cur = x.to_vec();
    let last = m.layers.len() - 1;
    for (l, layer) in m.layers.iter().enumerate() {
        let acc: Vec<i32> = layer.weights.iter().map(|w| xnor_popcount(w, &cur)).collect();
        if l == last {
            return Ok(acc.iter().zip(&layer.thresholds).map(|(a, t)| a - t).collect());
        }
        cur = acc.iter().zip(&layer.thresholds).map(|(a, t)| a >= t).collect();
    }
    unreachable!("validated models have at least one layer")
}

/// Input bits for a binarized network: a value is on at one half or more.
pub fn binarize_input(x: &[i32]) -> Vec<bool> {
    x.iter().map(|&v| v >= fixed::ONE / 2).collect()
}

/// Sign-binarizes every weight (0 maps to +1) and derives integer
/// thresholds.
///
/// Inputs are read as bits `u` with real value `u` in {0, 1}. Writing
/// `u = (s + 1) / 2` for `s` in {-1, +1} and `w ≈ α sign(w)` with
/// `α = mean |w|`, the neuron `sum w u + b >= 0` becomes
/// `acc >= -(sum w + 2b) / α` where `acc` is the ±1 dot product, so the
/// threshold is the ceiling of that bound. Integer arithmetic throughout.
pub fn binarize(m: &MlpModel) -> BnnModel {
    let layers = m
        .layers
        .iter()
        .map(|layer| {
            let n = layer.weights.first().map_or(0, Vec::len) as i64;
            let weights = layer
                .weights
                .iter()
                .map(|row| row.iter().map(|&w| w >= 0).collect())
                .collect();
            let thresholds = layer
                .weights
                .iter()
                .zip(&layer.biases)
                .map(|(row, &b)| {
                    let sum: i64 = row.iter().map(|&w| w as i64).sum();
                    let abs: i64 = row.iter().map(|&w| (w as i64).abs()).sum();
                    let num = -(sum + 2 * b as i64);
                    let t = if abs == 0 {
                        // Constant neuron: fires always or never.
                        if num <= 0 {
                            -n
                        } else {
                            n + 1
                        }
                    } else {
                        // ceil(num / (abs / n)) = ceil(num * n / abs)
                        let p = num * n;
                        p.div_euclid(abs) + (p.rem_euclid(abs) != 0) as i64
                    };
                    t.clamp(-n - 1, n + 1) as i32
                })
                .collect();
            BnnLayer {
                weights,
                thresholds,
            }
        })
        .collect();
    BnnModel {
        layer_sizes: m.layer_sizes.clone(),
        layers,
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[i32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncompile::model::DenseLayer;

    fn identity(n: usize) -> MlpModel {
        MlpModel {
            layer_sizes: vec![n, n],
            layers: vec![DenseLayer {
                weights: (0..n)
                    .map(|i| (0..n).map(|j| if i == j { fixed::ONE } else { 0 }).collect())
                    .collect(),
                biases: vec![0; n],
                activation: Activation::None,
            }],
        }
    }

    #[test]
    fn identity_model_returns_input() {
        let x = vec![5, -300, 32767, -32768];
        assert_eq!(infer_plain(&identity(4), &x).unwrap(), x);
    }

    #[test]
    fn toy_network_by_hand() {
        // h0 = relu(1*1 - 0.5*2 + 0) = 0
        // h1 = relu(0.25*1 + 2*2 + 0.125) = 4.375
        // y = h0 + h1 - 1 = 3.375
        let m = MlpModel {
            layer_sizes: vec![2, 2, 1],
            layers: vec![
                DenseLayer {
                    weights: vec![vec![256, -128], vec![64, 512]],
                    biases: vec![0, 32],
                    activation: Activation::Relu,
                },
                DenseLayer {
                    weights: vec![vec![256, 256]],
                    biases: vec![-256],
                    activation: Activation::None,
                },
            ],
        };
        assert_eq!(infer_plain(&m, &[256, 512]).unwrap(), vec![864]);
        assert_eq!(fixed::to_f64(864), 3.375);
    }

    #[test]
    fn saturates_instead_of_wrapping() {
        let mut m = identity(1);
        m.layers[0].weights[0][0] = fixed::MAX;
        assert_eq!(infer_plain(&m, &[fixed::MAX]).unwrap(), vec![fixed::MAX]);
        assert_eq!(infer_plain(&m, &[fixed::MIN]).unwrap(), vec![fixed::MIN]);
    }

    #[test]
    fn hard_sigmoid_clamps() {
        assert_eq!(activate(Activation::HardSigmoid, 0), 128);
        assert_eq!(activate(Activation::HardSigmoid, 4 * 256), 256);
        assert_eq!(activate(Activation::HardSigmoid, -4 * 256), 0);
        assert_eq!(activate(Activation::HardSigmoid, 256), 192);
    }

    #[test]
    fn xnor_popcount_extremes() {
        let x = [true, false, true, true, false, false, true, false];
        let not_x: Vec<bool> = x.iter().map(|b| !b).collect();
        assert_eq!(xnor_popcount(&x, &x), 8);
        assert_eq!(xnor_popcount(&not_x, &x), -8);
    }

    #[test]
    fn binarize_signs_and_ties() {
        let mut m = identity(2);
        m.layers[0].weights = vec![vec![3, 0], vec![-1, 7]];
        let b = binarize(&m);
        assert_eq!(b.layers[0].weights, vec![vec![true, true], vec![false, true]]);
    }

    #[test]
    fn binarize_threshold_rule() {
        // w = (1, 1, -1, 1) real, b = -1: sum w = 2, alpha = 1,
        // threshold = ceil(-(2 - 2) / 1) = 0.
        let m = MlpModel {
            layer_sizes: vec![4, 1],
            layers: vec![DenseLayer {
                weights: vec![vec![256, 256, -256, 256]],
                biases: vec![-256],
                activation: Activation::None,
            }],
        };
        assert_eq!(binarize(&m).layers[0].thresholds, vec![0]);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            infer_plain(&identity(2), &[1]),
            Err(NnError::InputLength { expected: 2, got: 1 })
        ));
    }
}
