//! Quantized MLP models: loading, validation, integer reference inference
//! and seeded sample generation.
//!
//! All arithmetic is integer. A neuron computes `acc = Σ w·a + bias`, the
//! accumulator is arithmetically shifted right by the layer's
//! `requant_shift`, clamped to the signed activation range, and finally passed
//! through ReLU or left unchanged.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Activation widths accepted by the loader.
pub const SUPPORTED_ACTIVATION_BITS: std::ops::RangeInclusive<u32> = 2..=8;
/// Weight widths accepted by the loader.
pub const SUPPORTED_WEIGHT_BITS: std::ops::RangeInclusive<u32> = 2..=8;
pub const DEFAULT_WEIGHT_BITS: u32 = 4;
const MAX_REQUANT_SHIFT: u32 = 30;
const MAX_ABS_BIAS: i64 = 1 << 20;

/// The nine healthcare topologies with their activation widths.
pub const REFERENCE_TOPOLOGIES: [(&str, &[usize], u32); 9] = [
    ("AffectiveRoad", &[63, 9, 3], 4),
    ("Arrhythmia", &[279, 9, 11], 4),
    ("Dermatology", &[34, 9, 6], 4),
    ("DriveDB", &[61, 9, 3], 4),
    ("ECG5000", &[140, 3, 5], 4),
    ("HAR", &[561, 7, 6], 4),
    ("SPD", &[75, 9, 3], 5),
    ("StressInNurses", &[72, 9, 3], 4),
    ("WESAD", &[96, 9, 3], 4),
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("model parse error: {0}")]
    Parse(String),
    #[error("model has no layers")]
    NoLayers,
    #[error("unsupported activation_bits {0} (supported: 2..=8)")]
    UnsupportedActivationBits(u32),
    #[error("unsupported weight_bits {0} (supported: 2..=8)")]
    UnsupportedWeightBits(u32),
    #[error("layer {layer}: {what}")]
    Dimension { layer: usize, what: String },
    #[error("layer {layer} row {row} column {col}: weight {value} outside [{min}, {max}]")]
    WeightOutOfRange {
        layer: usize,
        row: usize,
        col: usize,
        value: i32,
        min: i32,
        max: i32,
    },
    #[error("layer {layer} row {row}: bias {value} outside ±{MAX_ABS_BIAS}")]
    BiasOutOfRange { layer: usize, row: usize, value: i32 },
    #[error("layer {layer}: requant_shift {shift} exceeds {MAX_REQUANT_SHIFT}")]
    ShiftTooLarge { layer: usize, shift: u32 },
    #[error("input length {found} does not match model input dimension {expected}")]
    InputLength { expected: usize, found: usize },
    #[error("input[{index}] = {value} outside activation range [{min}, {max}]")]
    InputOutOfRange {
        index: usize,
        value: i32,
        min: i32,
        max: i32,
    },
    #[error("invalid topology '{0}'")]
    Topology(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub activation: Activation,
    pub biases: Vec<i32>,
    pub requant_shift: u32,
    /// `[out_dim][in_dim]`; row `n` is the weight vector of neuron `n`.
    pub weights: Vec<Vec<i32>>,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

/// Names one neuron of a model: `layer` is the layer index, `neuron` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NeuronId {
    pub layer: usize,
    pub neuron: usize,
}

impl NeuronId {
    pub fn new(layer: usize, neuron: usize) -> Self {
        Self { layer, neuron }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}N{}", self.layer, self.neuron)
    }
}

impl std::str::FromStr for NeuronId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid neuron id '{s}'");
        let rest = s.strip_prefix('L').ok_or_else(bad)?;
        let (layer, neuron) = rest.split_once('N').ok_or_else(bad)?;
        Ok(Self {
            layer: layer.parse().map_err(|_| bad())?,
            neuron: neuron.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for NeuronId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NeuronId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizedMlp {
    pub activation_bits: u32,
    pub layers: Vec<Layer>,
    pub name: String,
    #[serde(default = "default_weight_bits")]
    pub weight_bits: u32,
}

fn default_weight_bits() -> u32 {
    DEFAULT_WEIGHT_BITS
}

/// Inclusive signed range of a `bits`-wide two's-complement value.
pub fn signed_range(bits: u32) -> (i32, i32) {
    let half = 1i32 << (bits - 1);
    (-half, half - 1)
}

/// Result of [`reference_inference`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inference {
    pub outputs: Vec<i32>,
    /// `trace[layer][neuron]` is the pre-activation accumulator `Σ w·a + bias`.
    pub trace: Vec<Vec<i64>>,
    /// `layer_inputs[layer]` is the activation vector fed to that layer.
    pub layer_inputs: Vec<Vec<i32>>,
}

impl Inference {
    /// Index of the largest output score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.outputs)
    }
}

pub fn argmax(scores: &[i32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl QuantizedMlp {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn weight_range(&self) -> (i32, i32) {
        signed_range(self.weight_bits)
    }

    pub fn activation_range(&self) -> (i32, i32) {
        signed_range(self.activation_bits)
    }

    /// Topology as `in-h1-...-out`.
    pub fn topology(&self) -> Vec<usize> {
        let mut t = vec![self.input_dim()];
        t.extend(self.layers.iter().map(Layer::out_dim));
        t
    }

    /// Every neuron in layer-major order with its weight row.
    pub fn neurons(&self) -> impl Iterator<Item = (NeuronId, &[i32])> + '_ {
        self.layers.iter().enumerate().flat_map(|(l, layer)| {
            layer
                .weights
                .iter()
                .enumerate()
                .map(move |(n, row)| (NeuronId::new(l, n), row.as_slice()))
        })
    }

    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(Layer::out_dim).sum()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !SUPPORTED_ACTIVATION_BITS.contains(&self.activation_bits) {
            return Err(ModelError::UnsupportedActivationBits(self.activation_bits));
        }
        if !SUPPORTED_WEIGHT_BITS.contains(&self.weight_bits) {
            return Err(ModelError::UnsupportedWeightBits(self.weight_bits));
        }
        if self.layers.is_empty() {
            return Err(ModelError::NoLayers);
        }
        let (min, max) = self.weight_range();
        let mut expected_in: Option<usize> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let dim_err = |what: String| ModelError::Dimension { layer: l, what };
            if layer.weights.is_empty() {
                return Err(dim_err("output dimension must be at least 1".into()));
            }
            let in_dim = layer.in_dim();
            if in_dim == 0 {
                return Err(dim_err("input dimension must be at least 1".into()));
            }
            if let Some(exp) = expected_in {
                if exp != in_dim {
                    return Err(dim_err(format!(
                        "input dimension {in_dim} does not match previous layer output {exp}"
                    )));
                }
            }
            for (r, row) in layer.weights.iter().enumerate() {
                if row.len() != in_dim {
                    return Err(dim_err(format!(
                        "row {r} has {} weights, expected {in_dim}",
                        row.len()
                    )));
                }
                for (c, &w) in row.iter().enumerate() {
                    if w < min || w > max {
                        return Err(ModelError::WeightOutOfRange {
                            layer: l,
                            row: r,
                            col: c,
                            value: w,
                            min,
                            max,
                        });
                    }
                }
            }
            if layer.biases.len() != layer.out_dim() {
                return Err(dim_err(format!(
                    "{} biases for {} neurons",
                    layer.biases.len(),
                    layer.out_dim()
                )));
            }
            for (r, &b) in layer.biases.iter().enumerate() {
                if i64::from(b).abs() > MAX_ABS_BIAS {
                    return Err(ModelError::BiasOutOfRange { layer: l, row: r, value: b });
                }
            }
            if layer.requant_shift > MAX_REQUANT_SHIFT {
                return Err(ModelError::ShiftTooLarge { layer: l, shift: layer.requant_shift });
            }
            expected_in = Some(layer.out_dim());
        }
        Ok(())
    }

    pub fn validate_input(&self, input: &[i32]) -> Result<(), ModelError> {
        if input.len() != self.input_dim() {
            return Err(ModelError::InputLength { expected: self.input_dim(), found: input.len() });
        }
        let (min, max) = self.activation_range();
        for (index, &value) in input.iter().enumerate() {
            if value < min || value > max {
                return Err(ModelError::InputOutOfRange { index, value, min, max });
            }
        }
        Ok(())
    }

    /// Post-accumulation step executed on the host core: shift, clamp, activation.
    pub fn activate(&self, layer: usize, acc: i64) -> i32 {
        let l = &self.layers[layer];
        let (min, max) = self.activation_range();
        let shifted = (acc >> l.requant_shift).clamp(i64::from(min), i64::from(max)) as i32;
        match l.activation {
            Activation::Relu => shifted.max(0),
            Activation::Identity => shifted,
        }
    }

    /// Canonical JSON text: sorted keys, integers only, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        crate::canonical_json(self)
    }
}

/// Parses and validates a model document.
pub fn load_model(document: &str) -> Result<QuantizedMlp, ModelError> {
    let model: QuantizedMlp =
        serde_json::from_str(document).map_err(|e| ModelError::Parse(e.to_string()))?;
    model.validate()?;
    Ok(model)
}

/// Number of multiply-accumulates in one forward pass.
pub fn mac_count(model: &QuantizedMlp) -> usize {
    model.layers.iter().map(|l| l.out_dim() * l.in_dim()).sum()
}

/// Exact integer forward pass.
pub fn reference_inference(model: &QuantizedMlp, input: &[i32]) -> Result<Inference, ModelError> {
    model.validate_input(input)?;
    let mut acts = input.to_vec();
    let mut trace = Vec::with_capacity(model.layers.len());
    let mut layer_inputs = Vec::with_capacity(model.layers.len());
    for (l, layer) in model.layers.iter().enumerate() {
        let accs: Vec<i64> = layer
            .weights
            .iter()
            .zip(&layer.biases)
            .map(|(row, &b)| {
                row.iter().zip(&acts).map(|(&w, &a)| i64::from(w) * i64::from(a)).sum::<i64>()
                    + i64::from(b)
            })
            .collect();
        let next = accs.iter().map(|&acc| model.activate(l, acc)).collect();
        layer_inputs.push(std::mem::replace(&mut acts, next));
        trace.push(accs);
    }
    Ok(Inference { outputs: acts, trace, layer_inputs })
}

/// Parses `"63-9-3"` into `[63, 9, 3]`.
pub fn parse_topology(s: &str) -> Result<Vec<usize>, ModelError> {
    let dims: Vec<usize> = s
        .split('-')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| ModelError::Topology(s.to_string()))?;
    check_topology(&dims).map_err(|_| ModelError::Topology(s.to_string()))?;
    Ok(dims)
}

fn check_topology(dims: &[usize]) -> Result<(), ModelError> {
    if dims.len() < 2 || dims.contains(&0) {
        let text = dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("-");
        return Err(ModelError::Topology(text));
    }
    Ok(())
}

/// Parameters for [`generate_sample_model`].
#[derive(Debug, Clone)]
pub struct SampleSpec {
    pub name: String,
    pub topology: Vec<usize>,
    pub weight_bits: u32,
    pub activation_bits: u32,
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(topology: &[usize], activation_bits: u32, seed: u64) -> Self {
        let name = topology.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("-");
        Self {
            name,
            topology: topology.to_vec(),
            weight_bits: DEFAULT_WEIGHT_BITS,
            activation_bits,
            seed,
        }
    }
}

/// Seeded pseudo-random model with weights uniform over the legal range.
///
/// Shifts are sized so that a typical accumulator lands inside the
/// activation range instead of saturating.
pub fn generate_sample_model(spec: &SampleSpec) -> Result<QuantizedMlp, ModelError> {
    check_topology(&spec.topology)?;
    if !SUPPORTED_WEIGHT_BITS.contains(&spec.weight_bits) {
        return Err(ModelError::UnsupportedWeightBits(spec.weight_bits));
    }
    if !SUPPORTED_ACTIVATION_BITS.contains(&spec.activation_bits) {
        return Err(ModelError::UnsupportedActivationBits(spec.activation_bits));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (wmin, wmax) = signed_range(spec.weight_bits);
    let (_, amax) = signed_range(spec.activation_bits);
    let n_layers = spec.topology.len() - 1;
    let layers = spec
        .topology
        .windows(2)
        .enumerate()
        .map(|(l, dims)| {
            let (fan_in, fan_out) = (dims[0], dims[1]);
            let spread = (fan_in as f64).sqrt() * f64::from(wmax) * f64::from(amax);
            let shift = (spread / f64::from(amax)).log2().round().max(0.0) as u32;
            let bias_span = (1i32 << shift).max(1);
            let weights = (0..fan_out)
                .map(|_| (0..fan_in).map(|_| rng.gen_range(wmin..=wmax)).collect())
                .collect();
            let biases = (0..fan_out).map(|_| rng.gen_range(-bias_span..=bias_span)).collect();
            Layer {
                activation: if l + 1 == n_layers { Activation::Identity } else { Activation::Relu },
                biases,
                requant_shift: shift,
                weights,
            }
        })
        .collect();
    let model = QuantizedMlp {
        activation_bits: spec.activation_bits,
        layers,
        name: spec.name.clone(),
        weight_bits: spec.weight_bits,
    };
    model.validate()?;
    Ok(model)
}

/// Uniform random input vector within the activation range.
pub fn random_input<R: Rng + ?Sized>(model: &QuantizedMlp, rng: &mut R) -> Vec<i32> {
    let (min, max) = model.activation_range();
    (0..model.input_dim()).map(|_| rng.gen_range(min..=max)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: Vec<Vec<i32>>, b: Vec<i32>, act: Activation, shift: u32) -> QuantizedMlp {
        QuantizedMlp {
            activation_bits: 4,
            layers: vec![Layer { activation: act, biases: b, requant_shift: shift, weights: w }],
            name: "t".into(),
            weight_bits: 4,
        }
    }

    #[test]
    fn minimal_model_loads() {
        let doc = r#"{"name":"one","weight_bits":4,"activation_bits":4,
            "layers":[{"weights":[[0]],"biases":[0],"activation":"identity","requant_shift":0}]}"#;
        let m = load_model(doc).unwrap();
        assert_eq!(mac_count(&m), 1);
        assert_eq!(m.topology(), vec![1, 1]);
    }

    #[test]
    fn out_of_range_weight_reports_location() {
        let doc = r#"{"name":"bad","weight_bits":4,"activation_bits":4,
            "layers":[{"weights":[[1,9]],"biases":[0],"activation":"identity","requant_shift":0}]}"#;
        match load_model(doc) {
            Err(ModelError::WeightOutOfRange { layer: 0, row: 0, col: 1, value: 9, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_between_layers() {
        let m = QuantizedMlp {
            activation_bits: 4,
            layers: vec![
                Layer {
                    activation: Activation::Relu,
                    biases: vec![0, 0],
                    requant_shift: 0,
                    weights: vec![vec![1, 1], vec![1, 1]],
                },
                Layer {
                    activation: Activation::Identity,
                    biases: vec![0],
                    requant_shift: 0,
                    weights: vec![vec![1, 1, 1]],
                },
            ],
            name: "x".into(),
            weight_bits: 4,
        };
        assert!(matches!(m.validate(), Err(ModelError::Dimension { layer: 1, .. })));
    }

    #[test]
    fn unsupported_activation_bits() {
        let mut m = single(vec![vec![1]], vec![0], Activation::Identity, 0);
        m.activation_bits = 12;
        assert_eq!(m.validate(), Err(ModelError::UnsupportedActivationBits(12)));
    }

    #[test]
    fn parse_errors_are_reported() {
        assert!(matches!(load_model("{not json"), Err(ModelError::Parse(_))));
    }

    #[test]
    fn single_mac_inference() {
        let m = single(vec![vec![3]], vec![1], Activation::Identity, 0);
        let r = reference_inference(&m, &[2]).unwrap();
        assert_eq!(r.outputs, vec![7]);
        assert_eq!(r.trace, vec![vec![7]]);
    }

    #[test]
    fn extreme_weights_accumulate() {
        let m = single(vec![vec![-8, 7]], vec![0], Activation::Identity, 0);
        let r = reference_inference(&m, &[7, 7]).unwrap();
        assert_eq!(r.trace[0][0], -7);
        assert_eq!(r.outputs, vec![-7]);
    }

    #[test]
    fn requant_clamps_and_relu() {
        let m = single(vec![vec![7]], vec![0], Activation::Relu, 1);
        // 7*7 = 49 >> 1 = 24 -> clamp 7
        assert_eq!(reference_inference(&m, &[7]).unwrap().outputs, vec![7]);
        // -49 >> 1 = -25 -> clamp -8 -> relu 0
        assert_eq!(reference_inference(&m, &[-7]).unwrap().outputs, vec![0]);
    }

    #[test]
    fn input_validation() {
        let m = single(vec![vec![1, 1]], vec![0], Activation::Identity, 0);
        assert!(matches!(
            reference_inference(&m, &[1]),
            Err(ModelError::InputLength { expected: 2, found: 1 })
        ));
        assert!(matches!(
            reference_inference(&m, &[1, 8]),
            Err(ModelError::InputOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn table_mac_counts() {
        let expected = [594, 2610, 360, 576, 435, 3969, 702, 675, 891];
        for ((name, topo, bits), want) in REFERENCE_TOPOLOGIES.iter().zip(expected) {
            let m = generate_sample_model(&SampleSpec::new(topo, *bits, 0)).unwrap();
            assert_eq!(mac_count(&m), want, "{name}");
        }
    }

    #[test]
    fn sample_models_are_deterministic() {
        let spec = SampleSpec::new(&[63, 9, 3], 4, 1);
        let a = generate_sample_model(&spec).unwrap().to_canonical_json();
        let b = generate_sample_model(&spec).unwrap().to_canonical_json();
        assert_eq!(a, b);
        let c = generate_sample_model(&SampleSpec::new(&[63, 9, 3], 4, 2)).unwrap();
        assert_ne!(a, c.to_canonical_json());
    }

    #[test]
    fn sample_weights_in_range() {
        let m = generate_sample_model(&SampleSpec::new(&[2, 1], 4, 0)).unwrap();
        assert!(m.neurons().all(|(_, w)| w.iter().all(|&x| (-8..=7).contains(&x))));
        assert_eq!(mac_count(&generate_sample_model(&SampleSpec::new(&[561, 7, 6], 4, 7)).unwrap()), 3969);
    }

    #[test]
    fn topology_parsing() {
        assert_eq!(parse_topology("63-9-3").unwrap(), vec![63, 9, 3]);
        assert!(parse_topology("63").is_err());
        assert!(parse_topology("3-0-1").is_err());
        assert!(parse_topology("a-b").is_err());
    }

    #[test]
    fn canonical_json_round_trips() {
        let m = generate_sample_model(&SampleSpec::new(&[4, 3, 2], 5, 3)).unwrap();
        let text = m.to_canonical_json();
        assert!(!text.contains('.'));
        assert_eq!(load_model(&text).unwrap(), m);
        let a = text.find("\"activation_bits\"").unwrap();
        let n = text.find("\"name\"").unwrap();
        assert!(a < n);
    }

    #[test]
    fn neuron_id_text() {
        let id = NeuronId::new(1, 12);
        assert_eq!(id.to_string(), "L1N12");
        assert_eq!("L1N12".parse::<NeuronId>().unwrap(), id);
        assert!("X1".parse::<NeuronId>().is_err());
    }
}
