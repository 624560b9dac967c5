//! Feed-forward network mapping stacked reverberant log-Mel frames to clean
//! frames.
//!
//! Hidden layers use the logistic sigmoid, the output layer is affine.
//! Training is plain mini-batch gradient descent on the mean squared error
//! with a validation-driven learning-rate schedule. All products go through
//! `ndarray`'s single-threaded gemm, so a run is reproducible bit for bit.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EpochRecord, Error, Result};
use crate::featurize::{align_pairs, stack_context, FeatureMatrix};
use crate::scalar::{CompensatedSum, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    pub layer_dims: Vec<usize>,
    /// `weights[l]` has shape `(layer_dims[l], layer_dims[l + 1])`.
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
    pub seed: u64,
}

/// Layer widths `(p + q + 1) n_mels, hidden x hidden_layers, n_mels`.
pub fn topology(p: usize, q: usize, n_mels: usize, hidden: usize, hidden_layers: usize) -> Vec<usize> {
    let mut dims = vec![(p + q + 1) * n_mels];
    dims.extend(std::iter::repeat(hidden).take(hidden_layers));
    dims.push(n_mels);
    dims
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.iter().any(|d| *d == 0) {
        return Err(Error::InvalidArgument(format!(
            "layer dims must have at least two positive entries, got {dims:?}"
        )));
    }
    Ok(())
}

/// Glorot-uniform weights, `U(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`,
/// and zero biases.
pub fn init_model<T: Real>(layer_dims: &[usize], seed: u64) -> Result<MlpModel<T>> {
    check_dims(layer_dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in layer_dims.windows(2) {
        let s = (6.0 / (w[0] + w[1]) as f64).sqrt();
        weights.push(Array2::from_shape_simple_fn((w[0], w[1]), || T::of(rng.gen_range(-s..s))));
        biases.push(Array1::zeros(w[1]));
    }
    Ok(MlpModel { layer_dims: layer_dims.to_vec(), weights, biases, seed })
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Real> MlpModel<T> {
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> MlpModel<U> {
        let c = |v: &T| U::of(v.to_f64_lossy());
        MlpModel {
            layer_dims: self.layer_dims.clone(),
            weights: self.weights.iter().map(|w| w.map(c)).collect(),
            biases: self.biases.iter().map(|b| b.map(c)).collect(),
            seed: self.seed,
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {cols} values, model expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Activations of every layer for a batch; element 0 is the input.
    fn activations(&self, x: ArrayView2<'_, T>) -> Vec<Array2<T>> {
        let mut acts = vec![x.to_owned()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(w) + b;
            if l + 1 < self.layers() {
                z.mapv_inplace(sigmoid);
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
        self.check_input(x.len())?;
        let batch = x.insert_axis(Axis(0));
        Ok(self.forward_batch(batch)?.row(0).to_owned())
    }

    /// One output row per input row.
    pub fn forward_batch(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(x.ncols())?;
        Ok(self.activations(x).pop().unwrap())
    }

    /// Backpropagates `d_out` (gradient w.r.t. the outputs) and returns the
    /// parameter gradients and the gradient w.r.t. the inputs.
    fn backward(&self, acts: &[Array2<T>], d_out: Array2<T>) -> (Gradients<T>, Array2<T>) {
        let n = self.layers();
        let mut dw = Vec::with_capacity(n);
        let mut db = Vec::with_capacity(n);
        let mut delta = d_out;
        for l in (0..n).rev() {
            dw.push(acts[l].t().dot(&delta));
            db.push(delta.sum_axis(Axis(0)));
            let mut back = delta.dot(&self.weights[l].t());
            if l > 0 {
                back.zip_mut_with(&acts[l], |d, a| *d = *d * *a * (T::one() - *a));
            }
            delta = back;
        }
        dw.reverse();
        db.reverse();
        (Gradients { weights: dw, biases: db }, delta)
    }

    /// Mean squared error on a batch and its parameter gradients.
    pub fn loss_and_gradients(&self, x: ArrayView2<'_, T>, y: ArrayView2<'_, T>) -> Result<(T, Gradients<T>)> {
        self.check_input(x.ncols())?;
        let acts = self.activations(x);
        let out = acts.last().unwrap();
        let loss = mse_loss(out.view(), y)?;
        let scale = T::of(2.0 / out.len() as f64);
        let d_out = (out - &y).mapv(|v| v * scale);
        let (g, _) = self.backward(&acts, d_out);
        Ok((loss, g))
    }

    /// `J(x)^T v`: gradient of `v . forward(x)` with respect to `x`.
    pub fn input_gradient(&self, x: ArrayView1<'_, T>, v: ArrayView1<'_, T>) -> Result<Array1<T>> {
        self.check_input(x.len())?;
        if v.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient has {} values, model outputs {}",
                v.len(),
                self.output_dim()
            )));
        }
        let acts = self.activations(x.insert_axis(Axis(0)));
        let (_, dx) = self.backward(&acts, v.insert_axis(Axis(0)).to_owned());
        Ok(dx.row(0).to_owned())
    }

    fn step(&mut self, g: &Gradients<T>, lr: T) {
        for (w, d) in self.weights.iter_mut().zip(&g.weights) {
            w.scaled_add(-lr, d);
        }
        for (b, d) in self.biases.iter_mut().zip(&g.biases) {
            b.scaled_add(-lr, d);
        }
    }
}

/// Mean over batch and output dimensions of the squared differences.
pub fn mse_loss<T: Real>(outputs: ArrayView2<'_, T>, targets: ArrayView2<'_, T>) -> Result<T> {
    if outputs.dim() != targets.dim() {
        return Err(Error::ShapeMismatch(format!(
            "outputs {:?} vs targets {:?}",
            outputs.dim(),
            targets.dim()
        )));
    }
    if outputs.is_empty() {
        return Err(Error::Empty("mse batch"));
    }
    let mut acc = CompensatedSum::new();
    for (a, b) in outputs.iter().zip(targets.iter()) {
        acc.add((a.to_f64_lossy() - b.to_f64_lossy()).powi(2));
    }
    Ok(T::of(acc.value() / outputs.len() as f64))
}

/// Frame-aligned inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Array2<T>,
    pub targets: Array2<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(inputs: Array2<T>, targets: Array2<T>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} input rows vs {} target rows",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(Self { inputs, targets })
    }

    /// Aligns each (reverberant, clean) pair, stacks `p`/`q` context on the
    /// reverberant side and concatenates all utterances.
    pub fn from_utterances(pairs: &[(FeatureMatrix<T>, FeatureMatrix<T>)], p: usize, q: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("utterance pairs"));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (reverb, clean) in pairs {
            let (r, c) = align_pairs(reverb, clean)?;
            xs.push(stack_context(&r, p, q).features.values);
            ys.push(c.values);
        }
        let xv: Vec<_> = xs.iter().map(|a| a.view()).collect();
        let yv: Vec<_> = ys.iter().map(|a| a.view()).collect();
        let inputs = ndarray::concatenate(Axis(0), &xv).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let targets = ndarray::concatenate(Axis(0), &yv).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Halve the rate whenever the validation loss improves by less than
    /// `min_improvement` (relative) over the previous epoch; stop after
    /// `max_halvings` consecutive halvings.
    Newbob { min_improvement: f64, max_halvings: usize },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Newbob { min_improvement: 1e-3, max_halvings: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, batch_size: 200, epochs: 50, schedule: LrSchedule::default(), seed: 0 }
    }
}

/// Model from the epoch with the lowest validation loss, plus the trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: MlpModel<T>,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Full-set loss evaluated in chunks.
pub fn evaluate<T: Real>(model: &MlpModel<T>, data: &Dataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    const CHUNK: usize = 4096;
    let mut acc = CompensatedSum::new();
    for start in (0..data.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.len());
        let out = model.forward_batch(data.inputs.slice(ndarray::s![start..end, ..]))?;
        let loss = mse_loss(out.view(), data.targets.slice(ndarray::s![start..end, ..]))?;
        acc.add(loss.to_f64_lossy() * (end - start) as f64);
    }
    Ok(acc.value() / data.len() as f64)
}

/// Mini-batch SGD. Batches are drawn from a per-epoch shuffle seeded by
/// `(config.seed, epoch)`. Without a validation set the training loss
/// drives the schedule and model selection.
pub fn train<T: Real>(
    model: &MlpModel<T>,
    train_set: &Dataset<T>,
    valid_set: Option<&Dataset<T>>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if valid_set.is_some_and(|v| v.is_empty()) {
        return Err(Error::Empty("validation set"));
    }
    if config.batch_size == 0 || !(config.learning_rate >= 0.0) {
        return Err(Error::InvalidArgument("batch_size must be positive and learning_rate non-negative".into()));
    }
    model.check_input(train_set.inputs.ncols())?;
    if train_set.targets.ncols() != model.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "targets have {} dims, model outputs {}",
            train_set.targets.ncols(),
            model.output_dim()
        )));
    }

    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut lr = config.learning_rate;
    let mut prev_valid: Option<f64> = None;
    let mut halvings = 0;
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut train_acc = CompensatedSum::new();
        for batch in order.chunks(config.batch_size) {
            let x = train_set.inputs.select(Axis(0), batch);
            let y = train_set.targets.select(Axis(0), batch);
            let (loss, g) = current.loss_and_gradients(x.view(), y.view())?;
            train_acc.add(loss.to_f64_lossy() * batch.len() as f64);
            current.step(&g, T::of(lr));
        }
        let train_mse = train_acc.value() / train_set.len() as f64;
        let valid_mse = match valid_set {
            Some(v) => evaluate(&current, v)?,
            None => evaluate(&current, train_set)?,
        };
        trace.push(EpochRecord { epoch, train_mse, valid_mse, lr });
        if !train_mse.is_finite() || !valid_mse.is_finite() || !current.is_finite() {
            return Err(Error::Diverged { epoch, trace });
        }
        if valid_mse < best_loss {
            best_loss = valid_mse;
            best = current.clone();
            best_epoch = epoch;
        }
        if let LrSchedule::Newbob { min_improvement, max_halvings } = config.schedule {
            let improved = prev_valid.map_or(true, |p| p - valid_mse >= min_improvement * p.abs());
            if improved {
                halvings = 0;
            } else {
                lr *= 0.5;
                halvings += 1;
                if halvings >= max_halvings {
                    break;
                }
            }
        }
        prev_valid = Some(valid_mse);
    }
    if best_epoch == 0 {
        best = current;
    }
    Ok(TrainOutcome { model: best, trace, best_epoch })
}

/// Stacks context around each reverberant frame and maps it through the model.
pub fn dereverberate_features<T: Real>(
    model: &MlpModel<T>,
    reverb: &FeatureMatrix<T>,
    p: usize,
    q: usize,
) -> Result<FeatureMatrix<T>> {
    if model.input_dim() != (p + q + 1) * reverb.cols() {
        return Err(Error::ShapeMismatch(format!(
            "model input {} does not match ({p}+{q}+1) x {}",
            model.input_dim(),
            reverb.cols()
        )));
    }
    let ctx = stack_context(reverb, p, q);
    FeatureMatrix::new(model.forward_batch(ctx.features.values.view())?)
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: String,
    biases: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    layer_dims: Vec<usize>,
    seed: u64,
    hidden_activation: String,
    output_activation: String,
    /// Row-major `(fan_in, fan_out)` f32 LE, base64.
    layers: Vec<LayerFile>,
}

const MODEL_FORMAT: &str = "ncderev-mlp-1";

fn encode<'a, T: Real>(values: impl Iterator<Item = &'a T>) -> String {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode<T: Real>(text: &str, expect: usize) -> Result<Vec<T>> {
    let bad = |reason: String| Error::Format { format: "model", reason };
    let bytes = B64.decode(text).map_err(|e| bad(e.to_string()))?;
    if bytes.len() != 4 * expect {
        return Err(bad(format!("expected {expect} values, found {} bytes", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect())
}

pub fn save_model<T: Real>(model: &MlpModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        layer_dims: model.layer_dims.clone(),
        seed: model.seed,
        hidden_activation: "sigmoid".into(),
        output_activation: "identity".into(),
        layers: model
            .weights
            .iter()
            .zip(&model.biases)
            .map(|(w, b)| LayerFile {
                rows: w.nrows(),
                cols: w.ncols(),
                weights: encode(w.iter()),
                biases: encode(b.iter()),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Format {
        format: "model",
        reason: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<MlpModel<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Format { format: "model", reason };
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if file.format != MODEL_FORMAT {
        return Err(bad(format!("unknown format tag {:?}", file.format)));
    }
    check_dims(&file.layer_dims)?;
    if file.layers.len() + 1 != file.layer_dims.len() {
        return Err(bad("layer count does not match layer_dims".into()));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (l, layer) in file.layers.iter().enumerate() {
        let (r, c) = (file.layer_dims[l], file.layer_dims[l + 1]);
        if (layer.rows, layer.cols) != (r, c) {
            return Err(bad(format!("layer {l} is {}x{}, expected {r}x{c}", layer.rows, layer.cols)));
        }
        weights.push(Array2::from_shape_vec((r, c), decode(&layer.weights, r * c)?).unwrap());
        biases.push(Array1::from_vec(decode(&layer.biases, c)?));
    }
    let model = MlpModel { layer_dims: file.layer_dims, weights, biases, seed: file.seed };
    if !model.is_finite() {
        return Err(bad("non-finite parameters".into()));
    }
    Ok(model)
}

/// CSV `epoch,train_mse,valid_mse,lr`.
pub fn write_loss_trace(trace: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("epoch,train_mse,valid_mse,lr\n");
    for r in trace {
        text.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_mse, r.valid_mse, r.lr));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0))
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn full_size_topology_parameter_count() {
        let dims = topology(10, 10, 40, 1000, 3);
        assert_eq!(dims, vec![840, 1000, 1000, 1000, 40]);
        let m: MlpModel<f32> = init_model(&dims, 0).unwrap();
        assert_eq!(m.parameter_count(), 2_883_040);
    }

    #[test]
    fn init_is_seeded_and_centered() {
        let a: MlpModel<f64> = init_model(&[100, 80, 60], 7).unwrap();
        let b: MlpModel<f64> = init_model(&[100, 80, 60], 7).unwrap();
        let c: MlpModel<f64> = init_model(&[100, 80, 60], 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for w in &a.weights {
            let s = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() < s));
            let sigma_mean = s / 3f64.sqrt() / (w.len() as f64).sqrt();
            assert!(w.mean().unwrap().abs() < 3.0 * sigma_mean);
        }
        assert!(a.biases.iter().all(|b| b.iter().all(|v| *v == 0.0)));
        assert!(init_model::<f64>(&[5], 0).is_err());
        assert!(init_model::<f64>(&[5, 0, 2], 0).is_err());
    }

    #[test]
    fn zero_model_and_output_bias() {
        let mut m: MlpModel<f64> = init_model(&[6, 5, 5, 5, 3], 1).unwrap();
        for w in &mut m.weights {
            w.fill(0.0);
        }
        let x = array![1.0, -2.0, 3.0, 0.5, 0.0, 9.0];
        assert_eq!(m.forward(x.view()).unwrap(), array![0.0, 0.0, 0.0]);
        *m.biases.last_mut().unwrap() = array![0.5, -1.0, 2.0];
        assert_eq!(m.forward(x.view()).unwrap(), array![0.5, -1.0, 2.0]);
        assert!(m.forward(array![1.0].view()).is_err());
    }

    #[test]
    fn output_is_bounded_by_output_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m: MlpModel<f64> = init_model(&[4, 7, 7, 3], 2).unwrap();
        let w = m.weights.last().unwrap();
        let b = m.biases.last().unwrap();
        let x = random_batch(&mut rng, 50, 4).mapv(|v| v * 100.0);
        let out = m.forward_batch(x.view()).unwrap();
        for j in 0..3 {
            let bound = b[j].abs() + w.column(j).iter().map(|v| v.abs()).sum::<f64>();
            assert!(out.column(j).iter().all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn mse_loss_examples() {
        let a = Array2::<f64>::zeros((1, 40));
        assert_eq!(mse_loss(a.view(), a.view()).unwrap(), 0.0);
        let mut b = a.clone();
        b[(0, 3)] = 2.0;
        assert!((mse_loss(a.view(), b.view()).unwrap() - 0.1).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_batch(&mut rng, 6, 5);
        let y = random_batch(&mut rng, 6, 5);
        let perm = [3, 0, 5, 1, 4, 2];
        let l1 = mse_loss(x.view(), y.view()).unwrap();
        let l2 = mse_loss(x.select(Axis(0), &perm).view(), y.select(Axis(0), &perm).view()).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        assert!(mse_loss(x.view(), a.view()).is_err());
    }

    #[test]
    fn parameter_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m: MlpModel<f64> = init_model(&[8, 6, 6, 6, 4], 4).unwrap();
        let x = random_batch(&mut rng, 5, 8);
        let y = random_batch(&mut rng, 5, 4);
        let (_, g) = m.loss_and_gradients(x.view(), y.view()).unwrap();
        let h = 1e-5;
        let loss = |m: &MlpModel<f64>| mse_loss(m.forward_batch(x.view()).unwrap().view(), y.view()).unwrap();
        for l in 0..m.layers() {
            for idx in 0..m.weights[l].len() {
                let (r, c) = (idx / m.weights[l].ncols(), idx % m.weights[l].ncols());
                let mut p = m.clone();
                p.weights[l][(r, c)] += h;
                let mut n = m.clone();
                n.weights[l][(r, c)] -= h;
                let fd = (loss(&p) - loss(&n)) / (2.0 * h);
                let an = g.weights[l][(r, c)];
                assert!(rel_err(an, fd) <= 1e-4 || (an - fd).abs() < 1e-10, "w{l}[{r},{c}] {an} vs {fd}");
            }
            for j in 0..m.biases[l].len() {
                let mut p = m.clone();
                p.biases[l][j] += h;
                let mut n = m.clone();
                n.biases[l][j] -= h;
                let fd = (loss(&p) - loss(&n)) / (2.0 * h);
                let an = g.biases[l][j];
                assert!(rel_err(an, fd) <= 1e-4 || (an - fd).abs() < 1e-10, "b{l}[{j}] {an} vs {fd}");
            }
        }
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: MlpModel<f64> = init_model(&[12, 9, 9, 9, 5], 5).unwrap();
        let x = Array1::from_iter((0..12).map(|_| rng.gen_range(-1.0..1.0)));
        let v = Array1::from_iter((0..5).map(|_| rng.gen_range(-1.0..1.0)));
        let g = m.input_gradient(x.view(), v.view()).unwrap();
        let f = |x: &Array1<f64>| m.forward(x.view()).unwrap().dot(&v);
        for i in 0..12 {
            let mut p = x.clone();
            p[i] += 1e-5;
            let mut n = x.clone();
            n[i] -= 1e-5;
            let fd = (f(&p) - f(&n)) / 2e-5;
            assert!(rel_err(g[i], fd) <= 1e-4 || (g[i] - fd).abs() < 1e-10);
        }
    }

    #[test]
    fn memorizes_a_toy_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = Dataset::new(random_batch(&mut rng, 10, 12), random_batch(&mut rng, 10, 4)).unwrap();
        let m: MlpModel<f64> = init_model(&[12, 32, 32, 32, 4], 6).unwrap();
        let cfg = TrainConfig { learning_rate: 0.5, batch_size: 2, epochs: 2000, schedule: LrSchedule::Constant, seed: 6 };
        let out = train(&m, &data, None, &cfg).unwrap();
        let final_mse = evaluate(&out.model, &data).unwrap();
        assert!(final_mse <= 1e-3, "training MSE {final_mse}");
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = Dataset::new(random_batch(&mut rng, 30, 6), random_batch(&mut rng, 30, 2)).unwrap();
        let m: MlpModel<f64> = init_model(&[6, 5, 2], 7).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, batch_size: 7, epochs: 4, schedule: LrSchedule::Constant, seed: 1 };
        let out = train(&m, &data, None, &cfg).unwrap();
        assert_eq!(out.model, m);
        assert_eq!(out.trace.len(), 4);
        let first = out.trace[0].train_mse;
        assert!(out.trace.iter().all(|r| (r.train_mse - first).abs() < 1e-12 && r.valid_mse == out.trace[0].valid_mse));
    }

    #[test]
    fn newbob_halves_and_stops() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = Dataset::new(random_batch(&mut rng, 30, 6), random_batch(&mut rng, 30, 2)).unwrap();
        let m: MlpModel<f64> = init_model(&[6, 5, 2], 8).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 100, ..TrainConfig::default() };
        let out = train(&m, &data, Some(&data), &cfg).unwrap();
        assert_eq!(out.trace.len(), 6);
        assert_eq!(out.trace[5].lr, 0.0);
        let cfg = TrainConfig { learning_rate: 0.05, batch_size: 5, epochs: 200, seed: 3, ..TrainConfig::default() };
        let out = train(&m, &data, Some(&data), &cfg).unwrap();
        let lrs: Vec<f64> = out.trace.iter().map(|r| r.lr).collect();
        assert!(lrs.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] / 2.0));
        let best = out.trace.iter().map(|r| r.valid_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(out.trace[out.best_epoch - 1].valid_mse, best);
        assert_eq!(evaluate(&out.model, &data).unwrap(), best);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = Dataset::new(random_batch(&mut rng, 64, 6), random_batch(&mut rng, 64, 3)).unwrap();
        let m: MlpModel<f32> = init_model(&[6, 8, 3], 9).unwrap();
        let data32 = Dataset::new(data.inputs.mapv(|v| v as f32), data.targets.mapv(|v| v as f32)).unwrap();
        let cfg = TrainConfig { batch_size: 16, epochs: 5, ..TrainConfig::default() };
        let a = train(&m, &data32, None, &cfg).unwrap();
        let b = train(&m, &data32, None, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn divergence_and_empty_data_are_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_batch(&mut rng, 20, 3);
        let y = random_batch(&mut rng, 20, 2).mapv(|v| v * 1e200);
        let data = Dataset::new(x, y).unwrap();
        let m: MlpModel<f64> = init_model(&[3, 4, 2], 10).unwrap();
        let cfg = TrainConfig { learning_rate: 10.0, batch_size: 5, epochs: 3, schedule: LrSchedule::Constant, seed: 0 };
        assert!(matches!(train(&m, &data, None, &cfg), Err(Error::Diverged { .. })));
        let empty = Dataset::new(Array2::<f64>::zeros((0, 3)), Array2::zeros((0, 2))).unwrap();
        assert!(matches!(train(&m, &empty, None, &cfg), Err(Error::Empty(_))));
    }

    #[test]
    fn dereverberation_shapes() {
        let m: MlpModel<f64> = init_model(&topology(2, 1, 4, 6, 2), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 7, 30] {
            let f = FeatureMatrix::new(random_batch(&mut rng, n, 4)).unwrap();
            let out = dereverberate_features(&m, &f, 2, 1).unwrap();
            assert_eq!((out.rows(), out.cols()), (n, 4));
        }
        let f = FeatureMatrix::new(random_batch(&mut rng, 5, 4)).unwrap();
        assert!(dereverberate_features(&m, &f, 1, 1).is_err());
    }

    #[test]
    fn model_file_and_trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m: MlpModel<f32> = init_model(&[5, 4, 3], 12).unwrap();
        let p = dir.path().join("m.json");
        save_model(&m, &p).unwrap();
        let back: MlpModel<f32> = load_model(&p).unwrap();
        assert_eq!(back, m);
        let first = std::fs::read(&p).unwrap();
        save_model(&back, &p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
        std::fs::write(&p, "{\"format\":\"other\"}").unwrap();
        assert!(matches!(load_model::<f32>(&p), Err(Error::Format { .. })));
        let t = dir.path().join("t.csv");
        write_loss_trace(&[EpochRecord { epoch: 1, train_mse: 0.5, valid_mse: 0.25, lr: 0.1 }], &t).unwrap();
        assert_eq!(std::fs::read_to_string(&t).unwrap(), "epoch,train_mse,valid_mse,lr\n1,0.5,0.25,0.1\n");
    }
}
