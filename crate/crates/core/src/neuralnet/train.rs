use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Layer, Normalization, QMlpModel, QuantConfig};
use crate::error::{Error, Result};
use crate::imitation::Dataset;
use crate::qformat::{snap, QFormatSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub float_epochs: usize,
    /// Epochs after the float phase with quantized weights and activations in the forward pass.
    pub qat_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Final share of pruned weights in every layer, in `[0, 1)`.
    pub target_sparsity: f64,
    /// Pruning ramps cubically from zero at this epoch to the target at `prune_end`.
    pub prune_start: usize,
    pub prune_end: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            float_epochs: 30,
            qat_epochs: 20,
            batch_size: 256,
            learning_rate: 1e-3,
            target_sparsity: 0.0,
            prune_start: 5,
            prune_end: 25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("training needs batch size >= 1 and a positive learning rate".into()));
        }
        if !(0.0..1.0).contains(&self.target_sparsity) {
            return Err(Error::Config(format!(
                "target sparsity must be in [0, 1), got {}",
                self.target_sparsity
            )));
        }
        if self.prune_start > self.prune_end {
            return Err(Error::Config("pruning must start before it ends".into()));
        }
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.float_epochs + self.qat_epochs
    }

    /// Required sparsity at the start of `epoch`.
    pub fn sparsity_at(&self, epoch: usize) -> f64 {
        if self.target_sparsity == 0.0 || epoch < self.prune_start {
            return 0.0;
        }
        if epoch >= self.prune_end {
            return self.target_sparsity;
        }
        let p = (epoch - self.prune_start) as f64 / (self.prune_end - self.prune_start) as f64;
        self.target_sparsity * (1.0 - (1.0 - p).powi(3))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainPhase {
    Float,
    Qat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub phase: TrainPhase,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub sparsity: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: QMlpModel,
    pub history: Vec<EpochStats>,
    /// Validation loss of the freshly initialized network.
    pub initial_validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Params {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
    /// 1 where a weight is live, 0 where it is pruned.
    pub mask: Vec<Array2<f64>>,
}

impl Params {
    pub fn from_model(m: &QMlpModel) -> Self {
        let mut p = Params {
            w: Vec::new(),
            b: Vec::new(),
            mask: Vec::new(),
        };
        for l in m.layers() {
            let shape = (l.outputs, l.inputs);
            p.w.push(Array2::from_shape_vec(shape, l.weights.clone()).expect("layer shape"));
            p.b.push(Array1::from(l.bias.clone()));
            p.mask.push(Array2::from_shape_fn(shape, |(o, i)| f64::from(u8::from(l.mask[o * l.inputs + i]))));
        }
        p
    }

    fn layers(&self) -> Vec<Layer> {
        self.w
            .iter()
            .zip(&self.b)
            .zip(&self.mask)
            .map(|((w, b), m)| Layer {
                inputs: w.ncols(),
                outputs: w.nrows(),
                weights: w.iter().copied().collect(),
                bias: b.to_vec(),
                mask: m.iter().map(|&v| v != 0.0).collect(),
            })
            .collect()
    }
}

struct Cache {
    /// Layer inputs as used in the forward pass.
    inputs: Vec<Array2<f64>>,
    /// Unrounded tanh outputs of hidden layers, for the derivative.
    hidden: Vec<Array2<f64>>,
    /// Weights as used in the forward pass.
    weights: Vec<Array2<f64>>,
    output: Array2<f64>,
}

fn snap_all(a: &Array2<f64>, spec: QFormatSpec) -> Array2<f64> {
    a.mapv(|v| snap(v, spec))
}

fn forward(p: &Params, x: &Array2<f64>, quant: Option<&QuantConfig>) -> Cache {
    let mut a = match quant {
        Some(q) => snap_all(x, q.input),
        None => x.clone(),
    };
    let last = p.w.len() - 1;
    let mut cache = Cache {
        inputs: Vec::new(),
        hidden: Vec::new(),
        weights: Vec::new(),
        output: Array2::zeros((0, 0)),
    };
    for k in 0..p.w.len() {
        let (w, b) = match quant {
            Some(q) => (snap_all(&p.w[k], q.weight), p.b[k].mapv(|v| snap(v, q.weight))),
            None => (p.w[k].clone(), p.b[k].clone()),
        };
        let z = a.dot(&w.t()) + &b;
        cache.inputs.push(a);
        cache.weights.push(w);
        if k < last {
            let t = z.mapv(f64::tanh);
            a = match quant {
                Some(q) => snap_all(&t, q.activation),
                None => t.clone(),
            };
            cache.hidden.push(t);
        } else {
            a = match quant {
                Some(q) => snap_all(&z, q.activation),
                None => z,
            };
        }
    }
    cache.output = a;
    cache
}

fn mse(pred: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let n = pred.len().max(1) as f64;
    (pred - y).mapv(|d| d * d).sum() / n
}

/// Mean squared error and its gradients; quantizers pass gradients straight through.
pub(crate) fn loss_and_grad(
    p: &Params,
    x: &Array2<f64>,
    y: &Array2<f64>,
    quant: Option<&QuantConfig>,
) -> (f64, Vec<Array2<f64>>, Vec<Array1<f64>>) {
    let cache = forward(p, x, quant);
    let loss = mse(&cache.output, y);
    let n = y.len().max(1) as f64;
    let mut dz = (&cache.output - y) * (2.0 / n);
    let layers = p.w.len();
    let mut gw = vec![Array2::zeros((0, 0)); layers];
    let mut gb = vec![Array1::zeros(0); layers];
    for k in (0..layers).rev() {
        gw[k] = dz.t().dot(&cache.inputs[k]) * &p.mask[k];
        gb[k] = dz.sum_axis(Axis(0));
        if k > 0 {
            let da = dz.dot(&cache.weights[k]);
            dz = da * cache.hidden[k - 1].mapv(|t| 1.0 - t * t);
        }
    }
    (loss, gw, gb)
}

struct Adam {
    mw: Vec<Array2<f64>>,
    vw: Vec<Array2<f64>>,
    mb: Vec<Array1<f64>>,
    vb: Vec<Array1<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(p: &Params) -> Self {
        Self {
            mw: p.w.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            vw: p.w.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            mb: p.b.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            vb: p.b.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, p: &mut Params, gw: &[Array2<f64>], gb: &[Array1<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for k in 0..p.w.len() {
            self.mw[k] = &self.mw[k] * Self::B1 + &gw[k] * (1.0 - Self::B1);
            self.vw[k] = &self.vw[k] * Self::B2 + &gw[k].mapv(|g| g * g) * (1.0 - Self::B2);
            let upd = ndarray::Zip::from(&self.mw[k])
                .and(&self.vw[k])
                .map_collect(|m, v| lr * (m / c1) / ((v / c2).sqrt() + Self::EPS));
            p.w[k] = (&p.w[k] - &upd) * &p.mask[k];
            self.mb[k] = &self.mb[k] * Self::B1 + &gb[k] * (1.0 - Self::B1);
            self.vb[k] = &self.vb[k] * Self::B2 + &gb[k].mapv(|g| g * g) * (1.0 - Self::B2);
            let upd = ndarray::Zip::from(&self.mb[k])
                .and(&self.vb[k])
                .map_collect(|m, v| lr * (m / c1) / ((v / c2).sqrt() + Self::EPS));
            p.b[k] = &p.b[k] - &upd;
        }
    }
}

/// Prune the smallest live weights of every layer until it reaches `sparsity`.
/// Pruned weights never come back.
fn prune(p: &mut Params, sparsity: f64) {
    for (w, m) in p.w.iter_mut().zip(&mut p.mask) {
        let total = w.len();
        let want = (sparsity * total as f64).floor() as usize;
        let have = m.iter().filter(|v| **v == 0.0).count();
        if want <= have {
            continue;
        }
        let mut live: Vec<(f64, usize)> = w
            .iter()
            .zip(m.iter())
            .enumerate()
            .filter(|(_, (_, &keep))| keep != 0.0)
            .map(|(k, (v, _))| (v.abs(), k))
            .collect();
        live.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let cols = w.ncols();
        for &(_, k) in live.iter().take(want - have) {
            m[(k / cols, k % cols)] = 0.0;
            w[(k / cols, k % cols)] = 0.0;
        }
    }
}

fn matrices(ds: &Dataset, norm: &Normalization) -> (Array2<f64>, Array2<f64>) {
    let (n, nf, nl) = (ds.len(), ds.feature_dim(), ds.label_dim());
    let mut x = Array2::zeros((n, nf));
    let mut y = Array2::zeros((n, nl));
    for (r, s) in ds.samples.iter().enumerate() {
        for (j, v) in norm.normalize_input(&s.features).into_iter().enumerate() {
            x[(r, j)] = v;
        }
        for (j, v) in norm.normalize_output(&s.label).into_iter().enumerate() {
            y[(r, j)] = v;
        }
    }
    (x, y)
}

fn batched_loss(p: &Params, x: &Array2<f64>, y: &Array2<f64>, quant: Option<&QuantConfig>, batch: usize) -> f64 {
    let n = x.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + batch.max(1024)).min(n);
        let xs = x.slice(ndarray::s![start..end, ..]).to_owned();
        let ys = y.slice(ndarray::s![start..end, ..]).to_owned();
        sum += mse(&forward(p, &xs, quant).output, &ys) * (end - start) as f64;
        start = end;
    }
    sum / n as f64
}

/// Fit an MLP with layer `sizes` to a dataset by mini-batch Adam on squared
/// error: a float phase, then a quantization-aware phase, with magnitude
/// pruning on the configured schedule. After a quantization-aware phase every
/// weight and bias is stored exactly representable in the weight format.
pub fn train(
    train_set: &Dataset,
    validation: Option<&Dataset>,
    sizes: &[usize],
    quant: QuantConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    if sizes.first() != Some(&train_set.feature_dim()) || sizes.last() != Some(&train_set.label_dim()) {
        return Err(Error::Config(format!(
            "layer sizes {sizes:?} do not fit {} features and {} labels",
            train_set.feature_dim(),
            train_set.label_dim()
        )));
    }
    if let Some(v) = validation {
        if v.plant != train_set.plant {
            return Err(Error::Dataset("validation set is for another plant".into()));
        }
    }
    let feats: Vec<&[f64]> = train_set.samples.iter().map(|s| s.features.as_slice()).collect();
    let labels: Vec<&[f64]> = train_set.samples.iter().map(|s| s.label.as_slice()).collect();
    let norm = Normalization::fit(&feats, &labels);
    let init = QMlpModel::new(sizes, quant, cfg.seed)?.with_normalization(norm.clone())?;
    let mut p = Params::from_model(&init);
    let (x, y) = matrices(train_set, &norm);
    let val = validation.map(|v| matrices(v, &norm));
    let initial_validation_loss = val.as_ref().map(|(vx, vy)| batched_loss(&p, vx, vy, None, cfg.batch_size));

    let mut adam = Adam::new(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs());
    for epoch in 0..cfg.epochs() {
        let phase = if epoch < cfg.float_epochs { TrainPhase::Float } else { TrainPhase::Qat };
        let q = (phase == TrainPhase::Qat).then_some(&quant);
        prune(&mut p, cfg.sparsity_at(epoch));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let (loss, gw, gb) = loss_and_grad(&p, &xb, &yb, q);
            if !loss.is_finite() {
                return Err(Error::Training(format!("epoch {epoch}, batch {b}: loss is {loss}")));
            }
            sum += loss * chunk.len() as f64;
            adam.step(&mut p, &gw, &gb, cfg.learning_rate);
        }
        let model_sparsity = p.mask.iter().map(|m| m.iter().filter(|v| **v == 0.0).count()).sum::<usize>() as f64
            / p.mask.iter().map(|m| m.len()).sum::<usize>() as f64;
        history.push(EpochStats {
            epoch,
            phase,
            train_loss: sum / x.nrows() as f64,
            validation_loss: val.as_ref().map(|(vx, vy)| batched_loss(&p, vx, vy, q, cfg.batch_size)),
            sparsity: model_sparsity,
        });
        log::debug!("epoch {epoch}: {:?}", history.last());
    }
    if cfg.qat_epochs > 0 {
        for (w, b) in p.w.iter_mut().zip(&mut p.b) {
            w.mapv_inplace(|v| snap(v, quant.weight));
            b.mapv_inplace(|v| snap(v, quant.weight));
        }
    }
    let model = QMlpModel::from_parts(Some(train_set.plant), p.layers(), quant, norm)?;
    Ok(TrainOutcome {
        model,
        history,
        initial_validation_loss,
    })
}

/// Mean squared error of a model over a dataset, in normalized output units.
pub fn evaluate_mse(model: &QMlpModel, ds: &Dataset) -> Result<f64> {
    let (x, y) = matrices(ds, model.normalization());
    Ok(batched_loss(&Params::from_model(model), &x, &y, None, 1024))
}
