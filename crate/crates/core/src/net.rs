//! Masked multilayer perceptron surrogate with hand-rolled reverse-mode
//! gradients and AdaMax optimization.
//!
//! A net maps `x = (u^n, b_T^n)` to `u^{n+1}` through `L` affine layers with
//! leaky-ReLU activation after every layer except the last, which stays
//! affine so negative coarse pressures survive the output. Optional binary
//! masks restrict each weight matrix to block-local connections (the
//! region-of-influence pattern); masked entries are exactly zero at
//! initialization and after every optimizer step.
//!
//! Training standardizes inputs and targets per component with training-set
//! statistics; [`SurrogateNet::predict`] applies the forward transform and
//! its inverse, while [`forward`](SurrogateNet::forward), [`loss`],
//! [`backward`], and [`adamax_step`] all operate in the net's own
//! (standardized) coordinates.

use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{TargetLabel, TrainingPair};
use crate::error::{FracError, Result};
use crate::mesh::Geometry;
use crate::seed::rng_for;

/// Which objective the optimizer minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared residual norm: (1/N)·Σ ‖y − N(x)‖².
    Standard,
    /// Label-weighted sum: w1·Σ_obs ‖·‖² + w2·Σ_sim ‖·‖².
    Weighted { w1: f64, w2: f64 },
}

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub leaky_slope: f64,
    /// Standardize inputs/targets with training-set statistics.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 32,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            loss: LossKind::Standard,
            seed: 0,
            leaky_slope: 0.01,
            normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FracError::InvalidConfig(msg));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be within [0, 1), got {b}"));
            }
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return bad(format!("leaky slope must be within [0, 1), got {}", self.leaky_slope));
        }
        if let LossKind::Weighted { w1, w2 } = self.loss {
            if !(w1 > w2 && w2 > 0.0) {
                return bad(format!("weighted loss needs w1 > w2 > 0, got w1={w1}, w2={w2}"));
            }
        }
        Ok(())
    }
}

/// Per-component affine standardization of inputs and targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_shift: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_shift: Vec<f64>,
    pub y_scale: Vec<f64>,
}

fn column_stats(rows: impl Iterator<Item = f64> + Clone, n_rows: usize) -> (f64, f64) {
    let mean = rows.clone().sum::<f64>() / n_rows as f64;
    let var = rows.map(|v| (v - mean).powi(2)).sum::<f64>() / n_rows as f64;
    // A (numerically) constant component keeps unit scale so the shifted
    // feature is exactly zero instead of an amplified rounding error.
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

impl Normalization {
    pub fn from_pairs(pairs: &[TrainingPair]) -> Normalization {
        let n = pairs.len();
        let x_dim = pairs[0].x.len();
        let y_dim = pairs[0].y.len();
        let mut out = Normalization {
            x_shift: Vec::with_capacity(x_dim),
            x_scale: Vec::with_capacity(x_dim),
            y_shift: Vec::with_capacity(y_dim),
            y_scale: Vec::with_capacity(y_dim),
        };
        for i in 0..x_dim {
            let (m, s) = column_stats(pairs.iter().map(move |p| p.x[i]), n);
            out.x_shift.push(m);
            out.x_scale.push(s);
        }
        for i in 0..y_dim {
            let (m, s) = column_stats(pairs.iter().map(move |p| p.y[i]), n);
            out.y_shift.push(m);
            out.y_scale.push(s);
        }
        out
    }

    pub fn encode_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_shift.iter().zip(&self.x_scale))
            .map(|(v, (sh, sc))| (v - sh) / sc)
            .collect()
    }

    pub fn encode_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.y_shift.iter().zip(&self.y_scale))
            .map(|(v, (sh, sc))| (v - sh) / sc)
            .collect()
    }

    pub fn decode_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.y_shift.iter().zip(&self.y_scale))
            .map(|(v, (sh, sc))| v * sc + sh)
            .collect()
    }
}

/// Block-local connectivity pattern for every weight matrix.
#[derive(Clone, Debug)]
pub struct InfluenceMask {
    pub radius: usize,
    /// One 0/1 matrix per weight matrix, same shapes.
    pub layer_masks: Vec<Array2<f64>>,
    /// Home coarse block of every neuron, per layer boundary
    /// (input, hidden.., output).
    pub neuron_blocks: Vec<Vec<usize>>,
}

/// Build the region-of-influence masks for architecture `dims` over the
/// coarse blocks of `geo`. Input neuron `i` belongs to the home block of
/// DOF `i mod n` (so a source entry attaches to the block its well loads),
/// output neuron `o` to the home block of DOF `o`, and each hidden layer's
/// neurons are dealt round-robin across all blocks. A connection survives
/// iff its endpoints' blocks are within Chebyshev distance `radius`.
pub fn build_influence_mask(geo: &Geometry, radius: usize, dims: &[usize]) -> Result<InfluenceMask> {
    let n = geo.index.n;
    let n_blocks = geo.n_blocks();
    if dims.len() < 2 {
        return Err(FracError::InvalidConfig("need at least one layer".into()));
    }
    if dims[0] % n != 0 || *dims.last().unwrap() % n != 0 {
        return Err(FracError::InvalidConfig(format!(
            "mask endpoints must be whole multiples of the coarse dimension {n}, got {} and {}",
            dims[0],
            dims.last().unwrap()
        )));
    }
    for (l, &w) in dims[1..dims.len() - 1].iter().enumerate() {
        if w < n_blocks {
            return Err(FracError::InvalidConfig(format!(
                "hidden layer {} has width {w} < {n_blocks} blocks; every block needs a neuron",
                l + 1
            )));
        }
    }
    let blocks_of = |layer: usize, width: usize| -> Vec<usize> {
        if layer == 0 || layer == dims.len() - 1 {
            (0..width).map(|i| geo.index.dof_block[i % n]).collect()
        } else {
            (0..width).map(|i| i % n_blocks).collect()
        }
    };
    let neuron_blocks: Vec<Vec<usize>> = dims
        .iter()
        .enumerate()
        .map(|(l, &w)| blocks_of(l, w))
        .collect();
    let layer_masks = neuron_blocks
        .windows(2)
        .map(|io| {
            let (inb, outb) = (&io[0], &io[1]);
            Array2::from_shape_fn((outb.len(), inb.len()), |(o, i)| {
                if geo.block_distance(outb[o], inb[i]) <= radius {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect();
    Ok(InfluenceMask {
        radius,
        layer_masks,
        neuron_blocks,
    })
}

/// The surrogate network. Weight matrix `l` has shape
/// `(dims[l+1], dims[l])`; outputs are `σ(W x + b)` per hidden layer and
/// `W x + b` at the last layer.
#[derive(Clone, Debug)]
pub struct SurrogateNet {
    pub dims: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub slope: f64,
    pub masks: Option<Vec<Array2<f64>>>,
    pub norm: Option<Normalization>,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(FracError::InvalidConfig(format!(
            "layer dimensions must chain at least input→output with positive widths, got {dims:?}"
        )));
    }
    Ok(())
}

impl SurrogateNet {
    /// Zero-initialized net (useful for hand-built weights in tests and for
    /// identity constructions).
    pub fn zeros(dims: &[usize], slope: f64) -> Result<SurrogateNet> {
        validate_dims(dims)?;
        let weights = dims
            .windows(2)
            .map(|w| Array2::zeros((w[1], w[0])))
            .collect();
        let biases = dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(SurrogateNet {
            dims: dims.to_vec(),
            weights,
            biases,
            slope,
            masks: None,
            norm: None,
        })
    }

    /// Glorot-uniform initialization, drawn layer by layer in row-major
    /// order from the given stream; masked entries are zeroed afterwards.
    pub fn glorot(
        dims: &[usize],
        slope: f64,
        mask: Option<&InfluenceMask>,
        rng: &mut impl Rng,
    ) -> Result<SurrogateNet> {
        let mut net = SurrogateNet::zeros(dims, slope)?;
        if let Some(m) = mask {
            if m.layer_masks.len() != net.weights.len()
                || m.layer_masks
                    .iter()
                    .zip(&net.weights)
                    .any(|(a, b)| a.dim() != b.dim())
            {
                return Err(FracError::InvalidConfig(
                    "mask shapes do not match the architecture".into(),
                ));
            }
        }
        for w in &mut net.weights {
            let (fan_out, fan_in) = w.dim();
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.gen_range(-s..s);
            }
        }
        if let Some(m) = mask {
            net.masks = Some(m.layer_masks.clone());
            net.apply_masks();
        }
        Ok(net)
    }

    pub fn d_in(&self) -> usize {
        self.dims[0]
    }

    pub fn d_out(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn leaky(&self, v: f64) -> f64 {
        if v >= 0.0 {
            v
        } else {
            self.slope * v
        }
    }

    /// Zero out masked weights in place (idempotent).
    pub fn apply_masks(&mut self) {
        if let Some(masks) = &self.masks {
            for (w, m) in self.weights.iter_mut().zip(masks) {
                ndarray::Zip::from(w).and(m).for_each(|w, &m| {
                    if m == 0.0 {
                        *w = 0.0;
                    }
                });
            }
        }
    }

    /// Forward pass in net coordinates (no standardization).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in() {
            return Err(FracError::DimensionMismatch {
                context: "network input".into(),
                expected: self.d_in(),
                got: x.len(),
            });
        }
        let batch = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
        Ok(self.forward_batch(&batch).row(0).to_vec())
    }

    /// Batched forward pass: rows of `x` are samples.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let (acts, _) = self.forward_trace(x);
        acts.into_iter().last().unwrap()
    }

    /// Forward pass keeping every layer's pre-activations for backprop.
    /// Returns (activations a_0..a_L, pre-activations z_1..z_L).
    fn forward_trace(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        let mut zs = Vec::with_capacity(self.weights.len());
        acts.push(x.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += b;
            let a = if l == last {
                z.clone()
            } else {
                z.mapv(|v| self.leaky(v))
            };
            zs.push(z);
            acts.push(a);
        }
        (acts, zs)
    }

    /// Standardize, run the net, and undo the target standardization.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.norm {
            None => self.forward(x),
            Some(nm) => {
                if x.len() != self.d_in() {
                    return Err(FracError::DimensionMismatch {
                        context: "network input".into(),
                        expected: self.d_in(),
                        got: x.len(),
                    });
                }
                let z = self.forward(&nm.encode_x(x))?;
                Ok(nm.decode_y(&z))
            }
        }
    }
}

/// Per-pair loss weight under the configured objective.
fn pair_weight(label: TargetLabel, n_pairs: usize, loss: &LossKind) -> Result<f64> {
    match loss {
        LossKind::Standard => Ok(1.0 / n_pairs as f64),
        LossKind::Weighted { w1, w2 } => match label {
            TargetLabel::Obs => Ok(*w1),
            TargetLabel::Sim => Ok(*w2),
            TargetLabel::Mixed => Err(FracError::InvalidConfig(
                "weighted loss needs per-pair observation/simulation labels; \
                 by-region mixtures carry mixed targets"
                    .into(),
            )),
        },
    }
}

fn pack_pairs(pairs: &[TrainingPair], net: &SurrogateNet) -> Result<(Array2<f64>, Array2<f64>)> {
    if pairs.is_empty() {
        return Err(FracError::InvalidConfig("empty pair set".into()));
    }
    let (d_in, d_out) = (net.d_in(), net.d_out());
    for p in pairs {
        if p.x.len() != d_in || p.y.len() != d_out {
            return Err(FracError::DimensionMismatch {
                context: format!("pair (sample {}, step {})", p.sample, p.step),
                expected: d_in,
                got: p.x.len(),
            });
        }
    }
    let mut x = Array2::zeros((pairs.len(), d_in));
    let mut y = Array2::zeros((pairs.len(), d_out));
    for (r, p) in pairs.iter().enumerate() {
        x.row_mut(r).assign(&ndarray::ArrayView1::from(&p.x[..]));
        y.row_mut(r).assign(&ndarray::ArrayView1::from(&p.y[..]));
    }
    Ok((x, y))
}

/// Objective value over `pairs` in net coordinates. Standard is the exact
/// special case of weighted with both weights 1/N, computed by the same
/// summation, so the two agree bitwise when the weights do.
pub fn loss(net: &SurrogateNet, pairs: &[TrainingPair], config: &TrainConfig) -> Result<f64> {
    let (x, y) = pack_pairs(pairs, net)?;
    let out = net.forward_batch(&x);
    let mut total = 0.0;
    for (r, p) in pairs.iter().enumerate() {
        let w = pair_weight(p.label, pairs.len(), &config.loss)?;
        let sq: f64 = out
            .row(r)
            .iter()
            .zip(y.row(r))
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        total += w * sq;
    }
    Ok(total)
}

/// Gradient of [`loss`] with respect to every weight and bias.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub d_weights: Vec<Array2<f64>>,
    pub d_biases: Vec<Array1<f64>>,
}

/// Reverse-mode gradient of the configured loss over `pairs`. Masked weight
/// entries come back exactly zero.
pub fn backward(net: &SurrogateNet, pairs: &[TrainingPair], config: &TrainConfig) -> Result<Gradient> {
    let (x, y) = pack_pairs(pairs, net)?;
    let (acts, zs) = net.forward_trace(&x);
    let n_layers = net.weights.len();
    // d(loss)/d(output row r) = 2·w_r·(out_r − y_r).
    let mut delta = &acts[n_layers] - &y;
    for (r, p) in pairs.iter().enumerate() {
        let w = 2.0 * pair_weight(p.label, pairs.len(), &config.loss)?;
        delta.row_mut(r).mapv_inplace(|v| w * v);
    }
    let mut d_weights = vec![Array2::zeros((0, 0)); n_layers];
    let mut d_biases = vec![Array1::zeros(0); n_layers];
    for l in (0..n_layers).rev() {
        if l != n_layers - 1 {
            // Chain through the leaky activation; σ'(0) = 1.
            ndarray::Zip::from(&mut delta).and(&zs[l]).for_each(|d, &z| {
                if z < 0.0 {
                    *d *= net.slope;
                }
            });
        }
        d_weights[l] = delta.t().dot(&acts[l]);
        d_biases[l] = delta.sum_axis(Axis(0));
        if let Some(masks) = &net.masks {
            d_weights[l] *= &masks[l];
        }
        if l > 0 {
            delta = delta.dot(&net.weights[l]);
        }
    }
    Ok(Gradient {
        d_weights,
        d_biases,
    })
}

/// AdaMax first/∞-moment state, one slot per parameter.
#[derive(Clone, Debug)]
pub struct AdaMax {
    pub m_w: Vec<Array2<f64>>,
    pub u_w: Vec<Array2<f64>>,
    pub m_b: Vec<Array1<f64>>,
    pub u_b: Vec<Array1<f64>>,
}

impl AdaMax {
    pub fn new(net: &SurrogateNet) -> AdaMax {
        AdaMax {
            m_w: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            u_w: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            u_b: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }
}

fn adamax_update(theta: &mut f64, m: &mut f64, u: &mut f64, g: f64, cfg: &TrainConfig, bias_fix: f64) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *u = (cfg.beta2 * *u).max(g.abs());
    let denom = u.max(1e-12) * bias_fix;
    *theta -= cfg.learning_rate * (*m / denom);
}

/// One AdaMax step at 1-based time `t`:
/// m ← β1·m + (1−β1)·g, u ← max(β2·u, |g|),
/// θ ← θ − η·m / (max(u, 1e-12)·(1−β1ᵗ)); masked weights re-zeroed.
pub fn adamax_step(
    state: &mut AdaMax,
    net: &mut SurrogateNet,
    grad: &Gradient,
    config: &TrainConfig,
    t: u32,
) {
    assert!(t >= 1, "AdaMax step index is 1-based");
    let bias_fix = 1.0 - config.beta1.powi(t as i32);
    for l in 0..net.weights.len() {
        ndarray::Zip::from(&mut net.weights[l])
            .and(&mut state.m_w[l])
            .and(&mut state.u_w[l])
            .and(&grad.d_weights[l])
            .for_each(|th, m, u, &g| adamax_update(th, m, u, g, config, bias_fix));
        ndarray::Zip::from(&mut net.biases[l])
            .and(&mut state.m_b[l])
            .and(&mut state.u_b[l])
            .and(&grad.d_biases[l])
            .for_each(|th, m, u, &g| adamax_update(th, m, u, g, config, bias_fix));
    }
    net.apply_masks();
}

/// Train a fresh net on `pairs` with mini-batch AdaMax. Deterministic in
/// (pairs, dims, config, mask). Returns the net and the loss history —
/// entry 0 is the pre-training loss, entry e ≥ 1 the full-set loss after
/// epoch e, both in net (standardized) coordinates.
pub fn train(
    pairs: &[TrainingPair],
    dims: &[usize],
    config: &TrainConfig,
    mask: Option<&InfluenceMask>,
) -> Result<(SurrogateNet, Vec<f64>)> {
    config.validate()?;
    validate_dims(dims)?;
    if pairs.is_empty() {
        return Err(FracError::InvalidConfig("empty training set".into()));
    }
    let mut rng = rng_for(config.seed, "train");
    let mut net = SurrogateNet::glorot(dims, config.leaky_slope, mask, &mut rng)?;

    // Standardize once up front; the returned net carries the transform.
    let work: Vec<TrainingPair>;
    let train_pairs: &[TrainingPair] = if config.normalize {
        let nm = Normalization::from_pairs(pairs);
        work = pairs
            .iter()
            .map(|p| TrainingPair {
                x: nm.encode_x(&p.x),
                y: nm.encode_y(&p.y),
                label: p.label,
                sample: p.sample,
                step: p.step,
            })
            .collect();
        net.norm = Some(nm);
        &work
    } else {
        pairs
    };

    let mut history = Vec::with_capacity(config.epochs + 1);
    history.push(loss(&net, train_pairs, config)?);
    let mut state = AdaMax::new(&net);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut t: u32 = 0;
    let mut batch: Vec<TrainingPair> = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_pairs[i].clone()));
            let grad = backward(&net, &batch, config)?;
            t += 1;
            adamax_step(&mut state, &mut net, &grad, config, t);
        }
        let l = loss(&net, train_pairs, config)?;
        if !l.is_finite() {
            return Err(FracError::NonFinite {
                context: "training loss".into(),
                step: epoch + 1,
            });
        }
        history.push(l);
    }
    Ok((net, history))
}

/// Chain per-step nets over the source encodings: step j feeds
/// `(u^j, sources[j])` into `nets[j]`. Returns every state u^1..u^{n+1};
/// a universal net is passed repeated. Uses [`SurrogateNet::predict`].
pub fn rollout(
    nets: &[&SurrogateNet],
    u1: &[f64],
    sources: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if nets.len() != sources.len() {
        return Err(FracError::DimensionMismatch {
            context: "rollout nets vs source encodings".into(),
            expected: sources.len(),
            got: nets.len(),
        });
    }
    let mut states = Vec::with_capacity(nets.len() + 1);
    states.push(u1.to_vec());
    for (net, src) in nets.iter().zip(sources) {
        let mut x = states.last().unwrap().clone();
        x.extend_from_slice(src);
        let next = net.predict(&x)?;
        states.push(next);
    }
    Ok(states)
}

const MODEL_MAGIC: &[u8; 8] = b"FFNET001";

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    dims: Vec<usize>,
    slope: f64,
    /// Mask pattern radius when the net is masked; mask matrices live in
    /// the binary blob.
    mask_radius: Option<usize>,
    has_norm: bool,
    seed: Option<u64>,
    config: Option<TrainConfig>,
}

fn push_f64s<'a>(buf: &mut Vec<u8>, vals: impl IntoIterator<Item = &'a f64>) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize a net: magic, u64 LE header length, JSON header, then an f64
/// LE blob holding W_1, b_1, …, W_L, b_L (row-major), the mask matrices in
/// the same order when masked, and the normalization arrays
/// (x_shift, x_scale, y_shift, y_scale) when standardized.
pub fn save_model(
    net: &SurrogateNet,
    mask_radius: Option<usize>,
    seed: Option<u64>,
    config: Option<&TrainConfig>,
    path: &Path,
) -> Result<()> {
    let header = ModelHeader {
        dims: net.dims.clone(),
        slope: net.slope,
        mask_radius: if net.masks.is_some() { mask_radius } else { None },
        has_norm: net.norm.is_some(),
        seed,
        config: config.cloned(),
    };
    let hjson = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
    buf.extend_from_slice(&hjson);
    for (w, b) in net.weights.iter().zip(&net.biases) {
        push_f64s(&mut buf, w.iter());
        push_f64s(&mut buf, b.iter());
    }
    if let Some(masks) = &net.masks {
        for m in masks {
            push_f64s(&mut buf, m.iter());
        }
    }
    if let Some(nm) = &net.norm {
        for arr in [&nm.x_shift, &nm.x_scale, &nm.y_shift, &nm.y_scale] {
            push_f64s(&mut buf, arr.iter());
        }
    }
    let mut f =
        std::fs::File::create(path).map_err(|e| FracError::io(path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| FracError::io(path.display().to_string(), e))
}

/// Reload a model written by [`save_model`], bit-exactly.
pub fn load_model(path: &Path) -> Result<SurrogateNet> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| FracError::io(path.display().to_string(), e))?;
    let bad = |detail: String| FracError::MalformedFile {
        path: path.display().to_string(),
        detail,
    };
    if buf.len() < 16 || &buf[..8] != MODEL_MAGIC {
        return Err(bad("missing model magic".into()));
    }
    let hlen = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    if buf.len() < 16 + hlen {
        return Err(bad("truncated model header".into()));
    }
    let header: ModelHeader =
        serde_json::from_slice(&buf[16..16 + hlen]).map_err(|e| bad(e.to_string()))?;
    validate_dims(&header.dims)?;
    let mut off = 16 + hlen;
    let mut take = |count: usize| -> Result<Vec<f64>> {
        let need = 8 * count;
        if buf.len() < off + need {
            return Err(FracError::MalformedFile {
                path: path.display().to_string(),
                detail: "truncated model blob".into(),
            });
        }
        let vals = buf[off..off + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += need;
        Ok(vals)
    };
    let shapes: Vec<(usize, usize)> = header.dims.windows(2).map(|w| (w[1], w[0])).collect();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for &(o, i) in &shapes {
        weights.push(Array2::from_shape_vec((o, i), take(o * i)?).expect("shape"));
        biases.push(Array1::from_vec(take(o)?));
    }
    let masks = if header.mask_radius.is_some() {
        let mut ms = Vec::new();
        for &(o, i) in &shapes {
            ms.push(Array2::from_shape_vec((o, i), take(o * i)?).expect("shape"));
        }
        Some(ms)
    } else {
        None
    };
    let norm = if header.has_norm {
        let d_in = header.dims[0];
        let d_out = *header.dims.last().unwrap();
        Some(Normalization {
            x_shift: take(d_in)?,
            x_scale: take(d_in)?,
            y_shift: take(d_out)?,
            y_scale: take(d_out)?,
        })
    } else {
        None
    };
    if off != buf.len() {
        return Err(bad(format!("{} trailing bytes", buf.len() - off)));
    }
    Ok(SurrogateNet {
        dims: header.dims,
        weights,
        biases,
        slope: header.slope,
        masks,
        norm,
    })
}

/// Write a per-epoch loss table (`epoch,loss`; epoch 0 is pre-training).
pub fn write_loss_history(history: &[f64], path: &Path) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        text.push_str(&format!("{e},{l}\n"));
    }
    std::fs::write(path, text).map_err(|e| FracError::io(path.display().to_string(), e))
}
