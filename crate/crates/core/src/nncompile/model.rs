//! Model types and the JSON model file.
//!
//! ```json
//! {
//!   "kind": "mlp",
//!   "layer_sizes": [2, 2, 1],
//!   "layers": [
//!     { "weights": [["1", "-0.5"], ["0.25", "2"]], "biases": ["0", "0.125"], "activation": "relu" },
//!     { "weights": [["1", "1"]], "biases": ["-1"], "activation": "none" }
//!   ]
//! }
//! ```
//!
//! Weights are row-major, one row of `layer_sizes[i]` decimal strings per
//! output neuron. A binarized file uses `"kind": "bnn"`, rows of `0`/`1`
//! characters (1 is +1) and integer `"thresholds"` instead of biases.

use serde::{Deserialize, Serialize};

use super::{fixed, NnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    HardSigmoid,
    None,
}

impl Activation {
    /// Largest magnitude the activation can emit, in raw units.
    pub fn max_abs(self) -> i64 {
        match self {
            Activation::Relu => fixed::MAX as i64,
            Activation::HardSigmoid => fixed::ONE as i64,
            Activation::None => -(fixed::MIN as i64),
        }
    }
}

/// One dense layer; `weights[o][i]` and `biases[o]` are raw Q8.8.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseLayer {
    pub weights: Vec<Vec<i32>>,
    pub biases: Vec<i32>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<DenseLayer>,
}

/// `weights[o][i]` is true for +1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BnnLayer {
    pub weights: Vec<Vec<bool>>,
    pub thresholds: Vec<i32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BnnModel {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<BnnLayer>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Model {
    Mlp(MlpModel),
    Bnn(BnnModel),
}

fn check_shape(sizes: &[usize], layer_rows: &[(usize, Vec<usize>, usize)]) -> Result<(), NnError> {
    if sizes.len() < 2 {
        return Err(NnError::dim(None, "need at least an input and an output size"));
    }
    if sizes.contains(&0) {
        return Err(NnError::dim(None, "layer sizes must be positive"));
    }
    if layer_rows.len() != sizes.len() - 1 {
        return Err(NnError::dim(
            None,
            format!("{} layer sizes need {} layers, found {}", sizes.len(), sizes.len() - 1, layer_rows.len()),
        ));
    }
    for (l, (rows, cols, extra)) in layer_rows.iter().enumerate() {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        if *rows != n_out || *extra != n_out {
            return Err(NnError::dim(
                Some(l),
                format!("layer {l} needs {n_out} neurons, has {rows} weight rows and {extra} biases"),
            ));
        }
        if let Some((o, c)) = cols.iter().enumerate().find(|(_, &c)| c != n_in) {
            return Err(NnError::dim(
                Some(l),
                format!("layer {l} row {o} has {c} weights, expected {n_in}"),
            ));
        }
    }
    Ok(())
}

impl MlpModel {
    pub fn validate(&self) -> Result<(), NnError> {
        let rows: Vec<_> = self
            .layers
            .iter()
            .map(|l| (l.weights.len(), l.weights.iter().map(Vec::len).collect(), l.biases.len()))
            .collect();
        check_shape(&self.layer_sizes, &rows)?;
        let in_range = |v: i32| (fixed::MIN..=fixed::MAX).contains(&v);
        for (l, layer) in self.layers.iter().enumerate() {
            if !layer.weights.iter().flatten().chain(&layer.biases).all(|&v| in_range(v)) {
                return Err(NnError::dim(Some(l), format!("layer {l} has a value outside Q8.8")));
            }
        }
        if self.layers.last().map(|l| l.activation) != Some(Activation::None) {
            return Err(NnError::dim(
                Some(self.layers.len() - 1),
                "output layer activation must be none",
            ));
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

impl BnnModel {
    pub fn validate(&self) -> Result<(), NnError> {
        let rows: Vec<_> = self
            .layers
            .iter()
            .map(|l| (l.weights.len(), l.weights.iter().map(Vec::len).collect(), l.thresholds.len()))
            .collect();
        check_shape(&self.layer_sizes, &rows)
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLayer {
    weights: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    biases: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thresholds: Option<Vec<i32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<Activation>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    kind: String,
    layer_sizes: Vec<usize>,
    layers: Vec<FileLayer>,
}

/// Line of the `n`-th `"weights"` key, for error messages.
fn layer_line(text: &str, n: usize) -> Option<usize> {
    text.match_indices("\"weights\"")
        .nth(n)
        .map(|(pos, _)| text[..pos].matches('\n').count() + 1)
}

fn locate(text: &str, e: NnError) -> NnError {
    match e {
        NnError::Dimension { layer: Some(l), line: None, message } => NnError::Dimension {
            layer: Some(l),
            line: layer_line(text, l),
            message,
        },
        other => other,
    }
}

impl Model {
    pub fn from_json(text: &str) -> Result<Model, NnError> {
        let f: File = serde_json::from_str(text).map_err(|e| NnError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let model = match f.kind.as_str() {
            "mlp" => {
                let mut layers = Vec::new();
                for (l, fl) in f.layers.into_iter().enumerate() {
                    let at = |e: NnError| match e {
                        NnError::Number(s) | NnError::Range(s) => locate(
                            text,
                            NnError::dim(Some(l), format!("layer {l}: bad fixed-point value {s:?}")),
                        ),
                        other => other,
                    };
                    let weights = fl
                        .weights
                        .iter()
                        .map(|row| row.iter().map(|s| fixed::parse(s)).collect::<Result<Vec<_>, _>>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(at)?;
                    let biases = fl
                        .biases
                        .ok_or_else(|| locate(text, NnError::dim(Some(l), format!("layer {l} has no biases"))))?
                        .iter()
                        .map(|s| fixed::parse(s))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(at)?;
                    let activation = fl.activation.ok_or_else(|| {
                        locate(text, NnError::dim(Some(l), format!("layer {l} has no activation")))
                    })?;
                    layers.push(DenseLayer {
                        weights,
                        biases,
                        activation,
                    });
                }
                let m = MlpModel {
                    layer_sizes: f.layer_sizes,
                    layers,
                };
                m.validate().map_err(|e| locate(text, e))?;
                Model::Mlp(m)
            }
            "bnn" => {
                let mut layers = Vec::new();
                for (l, fl) in f.layers.into_iter().enumerate() {
                    let mut weights = Vec::new();
                    for row in &fl.weights {
                        let bits: String = row.concat();
                        if !bits.bytes().all(|b| b == b'0' || b == b'1') {
                            return Err(locate(
                                text,
                                NnError::dim(Some(l), format!("layer {l}: weights must be 0/1 strings")),
                            ));
                        }
                        weights.push(bits.bytes().map(|b| b == b'1').collect());
                    }
                    let thresholds = fl.thresholds.ok_or_else(|| {
                        locate(text, NnError::dim(Some(l), format!("layer {l} has no thresholds")))
                    })?;
                    layers.push(BnnLayer {
                        weights,
                        thresholds,
                    });
                }
                let m = BnnModel {
                    layer_sizes: f.layer_sizes,
                    layers,
                };
                m.validate().map_err(|e| locate(text, e))?;
                Model::Bnn(m)
            }
            other => {
                return Err(NnError::Parse {
                    line: 1,
                    column: 1,
                    message: format!("unknown model kind {other:?}"),
                })
            }
        };
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let f = match self {
            Model::Mlp(m) => File {
                kind: "mlp".into(),
                layer_sizes: m.layer_sizes.clone(),
                layers: m
                    .layers
                    .iter()
                    .map(|l| FileLayer {
                        weights: l
                            .weights
                            .iter()
                            .map(|r| r.iter().map(|&v| fixed::format(v)).collect())
                            .collect(),
                        biases: Some(l.biases.iter().map(|&v| fixed::format(v)).collect()),
                        thresholds: None,
                        activation: Some(l.activation),
                    })
                    .collect(),
            },
            Model::Bnn(m) => File {
                kind: "bnn".into(),
                layer_sizes: m.layer_sizes.clone(),
                layers: m
                    .layers
                    .iter()
                    .map(|l| FileLayer {
                        weights: l
                            .weights
                            .iter()
                            .map(|r| vec![r.iter().map(|&b| if b { '1' } else { '0' }).collect()])
                            .collect(),
                        biases: None,
                        thresholds: Some(l.thresholds.clone()),
                        activation: None,
                    })
                    .collect(),
            },
        };
        let mut s = serde_json::to_string_pretty(&f).expect("serializable");
        s.push('\n');
        s
    }
}

impl From<MlpModel> for Model {
    fn from(m: MlpModel) -> Model {
        Model::Mlp(m)
    }
}

impl From<BnnModel> for Model {
    fn from(m: BnnModel) -> Model {
        Model::Bnn(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"{
  "kind": "mlp",
  "layer_sizes": [2, 2, 1],
  "layers": [
    { "weights": [["1", "-0.5"], ["0.25", "2"]], "biases": ["0", "0.125"], "activation": "relu" },
    { "weights": [["1", "1"]], "biases": ["-1"], "activation": "none" }
  ]
}"#;

    #[test]
    fn loads_and_round_trips() {
        let m = Model::from_json(TOY).unwrap();
        let Model::Mlp(mlp) = &m else { panic!() };
        assert_eq!(mlp.layers[0].weights[0], vec![256, -128]);
        assert_eq!(mlp.layers[0].biases[1], 32);
        assert_eq!(Model::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn dimension_error_names_line() {
        let bad = TOY.replace(r#"[["1", "1"]]"#, r#"[["1"]]"#);
        match Model::from_json(&bad) {
            Err(NnError::Dimension { line, layer, .. }) => {
                assert_eq!(layer, Some(1));
                assert_eq!(line, Some(6));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        assert!(matches!(
            Model::from_json("{\n  \"kind\": \"mlp\",\n  oops"),
            Err(NnError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn output_activation_must_be_none() {
        let bad = TOY.replace(r#""activation": "none""#, r#""activation": "relu""#);
        assert!(matches!(Model::from_json(&bad), Err(NnError::Dimension { .. })));
    }

    #[test]
    fn bnn_round_trips() {
        let m = Model::Bnn(BnnModel {
            layer_sizes: vec![3, 1],
            layers: vec![BnnLayer {
                weights: vec![vec![true, false, true]],
                thresholds: vec![-1],
            }],
        });
        assert_eq!(Model::from_json(&m.to_json()).unwrap(), m);
    }
}
