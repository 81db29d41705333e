//! Tanh MLP imitators: float and bit-exact fixed-point inference, training
//! with quantization awareness and magnitude pruning, and the model file.
//!
//! Hidden layers use tanh, the output layer is linear. Inputs are mapped
//! per feature to roughly `[-1, 1]` and outputs are produced in normalized
//! units; [`Normalization`] converts both ways and travels with the model.
//!
//! Fixed-point inference quantizes the normalized input to the input format,
//! accumulates exact products of mantissas bounded by the intermediate
//! format, rounds each pre-activation to the intermediate format and maps it
//! through an exhaustive tanh table into the activation format. The output
//! layer rounds its sum directly into the activation format.

mod controller;
mod deviation;
mod file;
mod train;

pub use controller::{NcCar, NcCartpole};
pub use deviation::{path_deviations, summarize_deviations, DeviationSummary};
pub use file::{MODEL_FORMAT, MODEL_VERSION};
pub use train::{evaluate_mse, train, EpochStats, TrainConfig, TrainOutcome, TrainPhase};

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imitation::PlantKind;
use crate::qformat::{qmul_acc, quantize, snap, Accumulator, QFormatSpec, QValue, TanhTable};

pub const CARTPOLE_LAYERS: [usize; 4] = [7, 32, 32, 1];
pub const CAR_LAYERS: [usize; 4] = [64, 64, 64, 2];

/// Number formats of one network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub input: QFormatSpec,
    pub weight: QFormatSpec,
    pub activation: QFormatSpec,
    /// Bound on accumulated sums; also the format of tanh table inputs.
    pub intermediate: QFormatSpec,
}

impl QuantConfig {
    pub fn cartpole() -> Self {
        Self {
            input: spec(12, 2),
            weight: spec(14, 4),
            activation: spec(12, 1),
            intermediate: spec(18, 8),
        }
    }

    pub fn car() -> Self {
        Self {
            input: spec(16, 4),
            weight: spec(16, 4),
            activation: spec(16, 4),
            intermediate: spec(16, 8),
        }
    }

    pub fn for_plant(plant: PlantKind) -> Self {
        match plant {
            PlantKind::Cartpole => Self::cartpole(),
            PlantKind::Car => Self::car(),
        }
    }
}

fn spec(m: u32, n: u32) -> QFormatSpec {
    QFormatSpec::new(m, n).expect("built-in formats are valid")
}

pub fn layers_for(plant: PlantKind) -> &'static [usize] {
    match plant {
        PlantKind::Cartpole => &CARTPOLE_LAYERS,
        PlantKind::Car => &CAR_LAYERS,
    }
}

/// `normalized = (raw - offset) * scale` for inputs and `raw = offset + normalized * scale` for outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_offset: Vec<f64>,
    pub output_scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(inputs: usize, outputs: usize) -> Self {
        Self {
            input_offset: vec![0.0; inputs],
            input_scale: vec![1.0; inputs],
            output_offset: vec![0.0; outputs],
            output_scale: vec![1.0; outputs],
        }
    }

    /// Map each column's observed range onto `[-1, 1]`; constant columns are only centered.
    pub fn fit(inputs: &[&[f64]], outputs: &[&[f64]]) -> Self {
        let fit = |rows: &[&[f64]]| -> (Vec<f64>, Vec<f64>) {
            let dim = rows.first().map_or(0, |r| r.len());
            (0..dim)
                .map(|j| {
                    let (lo, hi) = rows
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])));
                    let half = 0.5 * (hi - lo);
                    (0.5 * (hi + lo), if half > 1e-12 { half } else { 1.0 })
                })
                .unzip()
        };
        let (input_offset, half_in) = fit(inputs);
        let (output_offset, output_scale) = fit(outputs);
        Self {
            input_offset,
            input_scale: half_in.iter().map(|h| 1.0 / h).collect(),
            output_offset,
            output_scale,
        }
    }

    pub fn normalize_input(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.input_offset)
            .zip(&self.input_scale)
            .map(|((x, o), s)| (x - o) * s)
            .collect()
    }

    pub fn denormalize_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.output_offset)
            .zip(&self.output_scale)
            .map(|((y, o), s)| o + y * s)
            .collect()
    }

    pub fn normalize_output(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.output_offset)
            .zip(&self.output_scale)
            .map(|((x, o), s)| (x - o) / s)
            .collect()
    }
}

/// Dense layer; `weights[o * inputs + i]` connects input `i` to output `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// False where a weight has been pruned; such weights are exactly zero.
    pub mask: Vec<bool>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            mask: vec![true; inputs * outputs],
        }
    }

    pub fn weight(&self, o: usize, i: usize) -> f64 {
        self.weights[o * self.inputs + i]
    }

    fn validate(&self) -> Result<()> {
        let n = self.inputs * self.outputs;
        if self.inputs == 0 || self.outputs == 0 {
            return Err(Error::ModelFile("layer with zero width".into()));
        }
        if self.weights.len() != n || self.mask.len() != n || self.bias.len() != self.outputs {
            return Err(Error::ModelFile("layer arrays do not match its size".into()));
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::ModelFile("layer holds non-finite parameters".into()));
        }
        if self.weights.iter().zip(&self.mask).any(|(w, &keep)| !keep && *w != 0.0) {
            return Err(Error::ModelFile("a pruned weight is not zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferencePath {
    Float,
    Fixed,
}

/// Result of one fixed-point forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedInference {
    /// Output mantissas in the activation format.
    pub raw: Vec<i32>,
    /// Outputs in normalized units.
    pub outputs: Vec<f64>,
    /// Multiply-accumulates performed; pruned weights are skipped.
    pub macs: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelData {
    plant: Option<PlantKind>,
    layers: Vec<Layer>,
    quant: QuantConfig,
    normalization: Normalization,
}

/// MLP with its quantization formats, pruning masks and normalization.
#[derive(Debug, Serialize, Deserialize)]
#[serde(try_from = "ModelData", into = "ModelData")]
pub struct QMlpModel {
    plant: Option<PlantKind>,
    layers: Vec<Layer>,
    quant: QuantConfig,
    normalization: Normalization,
    engine: OnceLock<FixedMlp>,
}

impl Clone for QMlpModel {
    fn clone(&self) -> Self {
        Self {
            plant: self.plant,
            layers: self.layers.clone(),
            quant: self.quant,
            normalization: self.normalization.clone(),
            engine: OnceLock::new(),
        }
    }
}

impl PartialEq for QMlpModel {
    fn eq(&self, other: &Self) -> bool {
        self.plant == other.plant
            && self.layers == other.layers
            && self.quant == other.quant
            && self.normalization == other.normalization
    }
}

impl TryFrom<ModelData> for QMlpModel {
    type Error = Error;

    fn try_from(d: ModelData) -> Result<Self> {
        Self::from_parts(d.plant, d.layers, d.quant, d.normalization)
    }
}

impl From<QMlpModel> for ModelData {
    fn from(m: QMlpModel) -> Self {
        ModelData {
            plant: m.plant,
            layers: m.layers,
            quant: m.quant,
            normalization: m.normalization,
        }
    }
}

impl QMlpModel {
    /// Glorot-uniform weights, zero biases, nothing pruned, identity normalization.
    pub fn new(sizes: &[usize], quant: QuantConfig, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let mut layer = Layer::zeros(w[0], w[1]);
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                for v in &mut layer.weights {
                    *v = rng.gen_range(-limit..=limit);
                }
                layer
            })
            .collect();
        let norm = Normalization::identity(sizes[0], sizes[sizes.len() - 1]);
        Self::from_parts(None, layers, quant, norm)
    }

    pub fn from_parts(
        plant: Option<PlantKind>,
        layers: Vec<Layer>,
        quant: QuantConfig,
        normalization: Normalization,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ModelFile("model has no layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            l.validate()?;
            if k > 0 && layers[k - 1].outputs != l.inputs {
                return Err(Error::ModelFile(format!("layer {k} does not fit its predecessor")));
            }
        }
        let (n_in, n_out) = (layers[0].inputs, layers[layers.len() - 1].outputs);
        let norm_ok = normalization.input_offset.len() == n_in
            && normalization.input_scale.len() == n_in
            && normalization.output_offset.len() == n_out
            && normalization.output_scale.len() == n_out
            && normalization
                .input_offset
                .iter()
                .chain(&normalization.input_scale)
                .chain(&normalization.output_offset)
                .chain(&normalization.output_scale)
                .all(|v| v.is_finite());
        if !norm_ok {
            return Err(Error::ModelFile("normalization does not match the layer sizes".into()));
        }
        if let Some(p) = plant {
            let expected = layers_for(p);
            if expected[0] != n_in || expected[expected.len() - 1] != n_out {
                return Err(Error::ModelFile(format!("model does not fit the {p:?} plant")));
            }
        }
        Ok(Self {
            plant,
            layers,
            quant,
            normalization,
            engine: OnceLock::new(),
        })
    }

    pub fn with_plant(mut self, plant: PlantKind) -> Result<Self> {
        self.plant = Some(plant);
        Self::from_parts(self.plant, self.layers, self.quant, self.normalization)
    }

    pub fn with_normalization(self, normalization: Normalization) -> Result<Self> {
        Self::from_parts(self.plant, self.layers, self.quant, normalization)
    }

    pub fn plant(&self) -> Option<PlantKind> {
        self.plant
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn quant(&self) -> QuantConfig {
        self.quant
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| (l.inputs + 1) * l.outputs).sum()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn pruned_count(&self) -> usize {
        self.layers.iter().map(|l| l.mask.iter().filter(|k| !**k).count()).sum()
    }

    /// Share of weights that are exactly zero.
    pub fn sparsity(&self) -> f64 {
        let zeros: usize = self.layers.iter().map(|l| l.weights.iter().filter(|w| **w == 0.0).count()).sum();
        zeros as f64 / self.weight_count() as f64
    }

    /// Multiply-accumulates of one fixed-point inference: unpruned weights.
    pub fn mac_count(&self) -> usize {
        self.weight_count() - self.pruned_count()
    }

    /// Whether every weight and bias is representable in the weight format.
    pub fn weights_representable(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .all(|&w| snap(w, self.quant.weight) == w)
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: features.len(),
            });
        }
        Ok(())
    }

    /// Float forward pass from raw features to normalized outputs.
    pub fn infer_float(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        let mut a = self.normalization.normalize_input(features);
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = l.bias.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                *zo += row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>();
            }
            if k < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = z;
        }
        Ok(a)
    }

    pub fn fixed(&self) -> Result<&FixedMlp> {
        if let Some(e) = self.engine.get() {
            return Ok(e);
        }
        let e = FixedMlp::new(self)?;
        Ok(self.engine.get_or_init(|| e))
    }

    /// Fixed-point forward pass from raw features to normalized outputs.
    pub fn infer_fixed(&self, features: &[f64]) -> Result<FixedInference> {
        self.check_input(features)?;
        self.fixed()?.infer(&self.normalization.normalize_input(features))
    }

    /// Outputs in physical units.
    pub fn predict(&self, features: &[f64], path: InferencePath) -> Result<Vec<f64>> {
        let y = match path {
            InferencePath::Float => self.infer_float(features)?,
            InferencePath::Fixed => self.infer_fixed(features)?.outputs,
        };
        Ok(self.normalization.denormalize_output(&y))
    }
}

#[derive(Debug, Clone)]
struct FixedLayer {
    outputs: usize,
    bias: Vec<QValue>,
    /// Per output, the unpruned `(input index, weight)` pairs.
    rows: Vec<Vec<(usize, QValue)>>,
}

/// Integer-only evaluation of a model.
#[derive(Debug, Clone)]
pub struct FixedMlp {
    quant: QuantConfig,
    layers: Vec<FixedLayer>,
    tanh: TanhTable,
}

impl FixedMlp {
    pub fn new(model: &QMlpModel) -> Result<Self> {
        let q = model.quant;
        let layers = model
            .layers
            .iter()
            .map(|l| -> Result<FixedLayer> {
                let bias = l.bias.iter().map(|&b| quantize(b, q.weight)).collect::<Result<_>>()?;
                let rows = (0..l.outputs)
                    .map(|o| {
                        (0..l.inputs)
                            .filter(|&i| l.mask[o * l.inputs + i])
                            .map(|i| Ok((i, quantize(l.weight(o, i), q.weight)?)))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<_>>()?;
                Ok(FixedLayer {
                    outputs: l.outputs,
                    bias,
                    rows,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            quant: q,
            layers,
            tanh: TanhTable::new(q.intermediate, q.activation)?,
        })
    }

    /// Forward pass on normalized inputs.
    pub fn infer(&self, normalized: &[f64]) -> Result<FixedInference> {
        let q = self.quant;
        let mut a: Vec<QValue> = normalized.iter().map(|&x| quantize(x, q.input)).collect::<Result<_>>()?;
        let mut macs = 0;
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let in_spec = if k == 0 { q.input } else { q.activation };
            let mut next = Vec::with_capacity(l.outputs);
            for (o, row) in l.rows.iter().enumerate() {
                let layer_err = |e: Error| match e {
                    Error::Overflow(msg) => Error::Overflow(format!("layer {k}, unit {o}: {msg}")),
                    other => other,
                };
                let mut acc = Accumulator::for_operands(in_spec, q.weight, q.intermediate)
                    .add(l.bias[o])
                    .map_err(layer_err)?;
                for &(i, w) in row {
                    acc = qmul_acc(acc, a[i], w).map_err(layer_err)?;
                }
                macs += row.len();
                next.push(if k < last {
                    self.tanh.lookup(acc.requantize(q.intermediate))
                } else {
                    acc.requantize(q.activation)
                });
            }
            a = next;
        }
        Ok(FixedInference {
            raw: a.iter().map(|v| v.raw()).collect(),
            outputs: a.iter().map(|v| v.value()).collect(),
            macs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_forward(m: &QMlpModel, x: &[f64]) -> Vec<f64> {
        let mut a: Vec<f64> = m.normalization().normalize_input(x);
        let n = m.layers().len();
        for (k, l) in m.layers().iter().enumerate() {
            let mut out = vec![0.0; l.outputs];
            for o in 0..l.outputs {
                let mut s = l.bias[o];
                for i in 0..l.inputs {
                    s += l.weights[o * l.inputs + i] * a[i];
                }
                out[o] = if k + 1 < n { s.tanh() } else { s };
            }
            a = out;
        }
        a
    }

    #[test]
    fn cartpole_parameter_count() {
        let m = QMlpModel::new(&CARTPOLE_LAYERS, QuantConfig::cartpole(), 0).unwrap();
        assert_eq!(m.param_count(), 8 * 32 + 33 * 32 + 33);
        assert_eq!(m.param_count(), 1345);
        let car = QMlpModel::new(&CAR_LAYERS, QuantConfig::car(), 0).unwrap();
        assert_eq!(car.param_count(), 65 * 64 + 65 * 64 + 65 * 2);
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut m = QMlpModel::new(&[3, 4, 2], QuantConfig::cartpole(), 1).unwrap();
        for l in &mut m.layers {
            l.weights.fill(0.0);
        }
        let m = m.clone();
        assert_eq!(m.infer_float(&[0.3, -0.2, 0.9]).unwrap(), vec![0.0, 0.0]);
        let f = m.infer_fixed(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(f.raw, vec![0, 0]);
    }

    #[test]
    fn linear_identity_passes_inputs_through() {
        let mut l = Layer::zeros(3, 2);
        l.weights[0] = 1.0;
        l.weights[3 + 1] = 1.0;
        let m = QMlpModel::from_parts(None, vec![l], QuantConfig::cartpole(), Normalization::identity(3, 2)).unwrap();
        assert_eq!(m.infer_float(&[0.25, -0.5, 0.75]).unwrap(), vec![0.25, -0.5]);
    }

    #[test]
    fn float_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = QMlpModel::new(&[5, 6, 4, 2], QuantConfig::cartpole(), 9).unwrap();
        for l in &mut m.layers {
            for b in &mut l.bias {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = m.infer_float(&x).unwrap();
            let b = naive_forward(&m, &x);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_linear_model_matches_float() {
        let mut l = Layer::zeros(2, 1);
        l.weights = vec![0.5, -0.25];
        l.bias = vec![0.125];
        let m = QMlpModel::from_parts(None, vec![l], QuantConfig::cartpole(), Normalization::identity(2, 1)).unwrap();
        let x = [0.75, 0.5];
        let f = m.infer_fixed(&x).unwrap();
        assert_eq!(f.outputs, m.infer_float(&x).unwrap());
        assert_eq!(f.outputs[0], 0.375);
    }

    #[test]
    fn shape_and_overflow_errors() {
        let m = QMlpModel::new(&[3, 2, 1], QuantConfig::cartpole(), 0).unwrap();
        assert!(matches!(m.infer_float(&[1.0]), Err(Error::Shape { expected: 3, actual: 1 })));
        let mut l = Layer::zeros(40, 1);
        l.weights.fill(7.9);
        let m = QMlpModel::from_parts(None, vec![l], QuantConfig::cartpole(), Normalization::identity(40, 1)).unwrap();
        match m.infer_fixed(&[1.9; 40]) {
            Err(Error::Overflow(msg)) => assert!(msg.contains("layer 0"), "{msg}"),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn mac_count_skips_pruned_weights() {
        let mut m = QMlpModel::new(&CARTPOLE_LAYERS, QuantConfig::cartpole(), 4).unwrap();
        let l = &mut m.layers[1];
        for k in (0..l.weights.len()).step_by(3) {
            l.weights[k] = 0.0;
            l.mask[k] = false;
        }
        let m = m.clone();
        let f = m.infer_fixed(&[0.1; 7]).unwrap();
        assert_eq!(f.macs, 7 * 32 + 32 * 32 + 32 - (32usize * 32).div_ceil(3));
        assert_eq!(f.macs, m.mac_count());
    }

    #[test]
    fn unpruned_nonzero_mask_is_rejected() {
        let mut l = Layer::zeros(2, 1);
        l.weights[0] = 0.5;
        l.mask[0] = false;
        assert!(QMlpModel::from_parts(None, vec![l], QuantConfig::car(), Normalization::identity(2, 1)).is_err());
    }
}
