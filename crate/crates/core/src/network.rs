//! Score-estimation network.
//!
//! A symmetric tanh MLP `n → h1 → … → hk → … → h1 → n` over the scaled
//! state `x / K`. The diffusion step enters through a sinusoidal embedding
//! projected into the first hidden pre-activation. Forward and backward are
//! written out by hand over `ndarray` matrices; the optimizer is Adam.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::StageVector;

/// Architecture of the estimator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub n_items: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub time_dim: usize,
}

impl NetShape {
    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.n_items];
        w.extend(&self.hidden);
        w.extend(self.hidden.iter().rev().skip(1));
        w.push(self.n_items);
        w
    }

    /// Widths of the hidden activations, in layer order.
    pub fn hidden_widths(&self) -> Vec<usize> {
        let w = self.widths();
        w[1..w.len() - 1].to_vec()
    }

    fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid network shape {self:?}")));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "time embedding dimension must be even and positive, got {}",
                self.time_dim
            )));
        }
        Ok(())
    }
}

/// Sinusoidal features of a step index; first half sines, second half cosines.
pub fn time_embedding(step: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let freq = (-(10_000f64).ln() * j as f64 / half as f64).exp();
        let arg = step as f64 * freq;
        out[j] = arg.sin();
        out[j + half] = arg.cos();
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// One full set of tensors shaped like the network. Used for weights,
/// gradients and optimizer moments alike.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<Linear>,
    /// `time_dim × h1`.
    pub time_proj: Array2<f64>,
}

impl ParamSet {
    pub fn zeros(shape: &NetShape) -> Self {
        let w = shape.widths();
        ParamSet {
            layers: w
                .windows(2)
                .map(|p| Linear {
                    weight: Array2::zeros((p[0], p[1])),
                    bias: Array1::zeros(p[1]),
                })
                .collect(),
            time_proj: Array2::zeros((shape.time_dim, w[1])),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
            time_proj: Array2::zeros(self.time_proj.raw_dim()),
        }
    }

    /// Flat views in a fixed order: (weight, bias) per layer, then time projection.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out.push(self.time_proj.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.time_proj.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened copy of every value.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Per-layer dropout keep-masks, already scaled by `1 / (1 - p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    pub masks: Vec<Array2<f64>>,
}

impl DropoutMasks {
    /// Sample one mask row per batch row, each from its own generator.
    pub fn sample<R: Rng>(shape: &NetShape, p: f64, rngs: &mut [R]) -> Self {
        let keep = 1.0 - p;
        let masks = shape
            .hidden_widths()
            .into_iter()
            .map(|w| {
                let mut m = Array2::zeros((rngs.len(), w));
                for (mut row, rng) in m.rows_mut().into_iter().zip(rngs.iter_mut()) {
                    for v in row.iter_mut() {
                        *v = if p > 0.0 && rng.random::<f64>() < p {
                            0.0
                        } else {
                            1.0 / keep
                        };
                    }
                }
                m
            })
            .collect();
        DropoutMasks { masks }
    }
}

/// Activations saved by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer (the first is the scaled state).
    inputs: Vec<Array2<f64>>,
    /// tanh outputs of each hidden layer, before dropout.
    hidden: Vec<Array2<f64>>,
    masks: Option<DropoutMasks>,
    embedding: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNet {
    pub shape: NetShape,
    pub params: ParamSet,
}

impl ScoreNet {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let mut params = ParamSet::zeros(&shape);
        let xavier = |m: &mut Array2<f64>, rng: &mut R| {
            let (fan_in, fan_out) = m.dim();
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            m.iter_mut().for_each(|w| *w = rng.random_range(-a..a));
        };
        for l in &mut params.layers {
            xavier(&mut l.weight, rng);
        }
        xavier(&mut params.time_proj, rng);
        Ok(ScoreNet { shape, params })
    }

    pub fn zeros(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        let params = ParamSet::zeros(&shape);
        Ok(ScoreNet { shape, params })
    }

    pub fn n_items(&self) -> usize {
        self.shape.n_items
    }

    /// Batched forward pass. `x` holds the scaled states `x / K`, one row
    /// per user; `steps` the grid index of each row. Dropout applies only
    /// when masks are supplied.
    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        steps: &[usize],
        masks: Option<DropoutMasks>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let (batch, width) = x.dim();
        if width != self.shape.n_items {
            return Err(Error::DimensionMismatch {
                expected: self.shape.n_items,
                actual: width,
            });
        }
        if steps.len() != batch {
            return Err(Error::DimensionMismatch {
                expected: batch,
                actual: steps.len(),
            });
        }
        let d = self.shape.time_dim;
        let mut embedding = Array2::zeros((batch, d));
        for (mut row, &s) in embedding.rows_mut().into_iter().zip(steps) {
            row.assign(&Array1::from(time_embedding(s, d)));
        }

        let n_layers = self.params.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut hidden = Vec::with_capacity(n_layers - 1);
        let mut h = x.to_owned();
        for (l, layer) in self.params.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if l == 0 {
                z += &embedding.dot(&self.params.time_proj);
            }
            inputs.push(h);
            if l + 1 == n_layers {
                h = z;
                break;
            }
            z.mapv_inplace(f64::tanh);
            let mut a = z.clone();
            if let Some(m) = &masks {
                a *= &m.masks[l];
            }
            hidden.push(z);
            h = a;
        }
        Ok((
            h,
            ForwardCache {
                inputs,
                hidden,
                masks,
                embedding,
            },
        ))
    }

    /// Single-state convenience wrapper returning the pre-softplus logits.
    pub fn forward_one<R: Rng + ?Sized>(
        &self,
        x: &StageVector,
        k: u32,
        step: usize,
        dropout: Option<(f64, &mut R)>,
    ) -> Result<Vec<f64>> {
        let row = scaled_state(std::slice::from_ref(x), k, self.shape.n_items)?;
        let masks = dropout.map(|(p, rng)| {
            let mut rng = rng;
            let mut seeded = [<rand_chacha::ChaCha8Rng as rand::SeedableRng>::from_rng(
                &mut rng,
            )];
            DropoutMasks::sample(&self.shape, p, &mut seeded)
        });
        let (logits, _) = self.forward(row.view(), &[step], masks)?;
        Ok(logits.into_raw_vec_and_offset().0)
    }

    /// Exact gradients of a scalar loss given `dL/dlogits` for the cached pass.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: ArrayView2<f64>) -> Result<ParamSet> {
        let n_layers = self.params.layers.len();
        if cache.inputs.len() != n_layers {
            return Err(Error::Domain("forward cache does not match network".into()));
        }
        let expected = (cache.inputs[0].nrows(), self.shape.n_items);
        if grad_logits.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected: expected.0 * expected.1,
                actual: grad_logits.len(),
            });
        }
        let mut grads = self.params.zeros_like();
        let mut g = grad_logits.to_owned();
        for l in (0..n_layers).rev() {
            let input = &cache.inputs[l];
            grads.layers[l].weight = input.t().dot(&g);
            grads.layers[l].bias = g.sum_axis(Axis(0));
            if l == 0 {
                grads.time_proj = cache.embedding.t().dot(&g);
                break;
            }
            let mut up = g.dot(&self.params.layers[l].weight.t());
            if let Some(m) = &cache.masks {
                up *= &m.masks[l - 1];
            }
            let a = &cache.hidden[l - 1];
            up.zip_mut_with(a, |u, &t| *u *= 1.0 - t * t);
            g = up;
        }
        Ok(grads)
    }
}

/// Stack states into a `batch × n_items` matrix scaled by `1 / K`.
pub fn scaled_state(states: &[StageVector], k: u32, n_items: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((states.len(), n_items));
    let inv = 1.0 / k as f64;
    for (mut row, s) in out.rows_mut().into_iter().zip(states) {
        if s.len() != n_items {
            return Err(Error::DimensionMismatch {
                expected: n_items,
                actual: s.len(),
            });
        }
        for (dst, &c) in row.iter_mut().zip(&s.counts) {
            *dst = c as f64 * inv;
        }
    }
    Ok(out)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `q = softplus(logits)` elementwise.
pub fn q_estimate(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&x| softplus(x)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for (((p, g), m), v) in tensors {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

const MAGIC: &[u8; 8] = b"STAGECF\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config_hash: String,
    shape: NetShape,
    adam_step: u64,
    epoch: usize,
    n_values: usize,
}

/// Network weights, optimizer state and the hash of the producing config.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub net: ScoreNet,
    pub adam: AdamState,
    /// Number of completed training epochs.
    pub epoch: usize,
}

impl Checkpoint {
    /// Layout: magic, u32 version, u32 header length, JSON header, then the
    /// weights, Adam first and second moments as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            config_hash: self.config_hash.clone(),
            shape: self.net.shape.clone(),
            adam_step: self.adam.step,
            epoch: self.epoch,
            n_values: self.net.params.len(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 24 * self.net.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for set in [&self.net.params, &self.adam.m, &self.adam.v] {
            for t in set.tensors() {
                for x in t {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::Checkpoint(msg.to_string());
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic)
            .map_err(|_| corrupt("truncated magic"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut word = [0u8; 4];
        cur.read_exact(&mut word)
            .map_err(|_| corrupt("truncated version"))?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        cur.read_exact(&mut word)
            .map_err(|_| corrupt("truncated header length"))?;
        let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
        cur.read_exact(&mut header)
            .map_err(|_| corrupt("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&header)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let net = ScoreNet::zeros(header.shape)?;
        if net.params.len() != header.n_values {
            return Err(corrupt("value count does not match shape"));
        }
        let mut read_set = || -> Result<ParamSet> {
            let mut set = net.params.zeros_like();
            let mut buf = [0u8; 8];
            for t in set.tensors_mut() {
                for x in t.iter_mut() {
                    cur.read_exact(&mut buf)
                        .map_err(|_| corrupt("truncated tensor data"))?;
                    *x = f64::from_le_bytes(buf);
                }
            }
            Ok(set)
        };
        let params = read_set()?;
        let m = read_set()?;
        let v = read_set()?;
        if (cur.position() as usize) != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            config_hash: header.config_hash,
            net: ScoreNet {
                shape: net.shape,
                params,
            },
            adam: AdamState {
                m,
                v,
                step: header.adam_step,
            },
            epoch: header.epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Load and refuse a checkpoint produced under a different config.
    pub fn load_checked(path: &Path, expected_hash: &str) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.config_hash != expected_hash {
            return Err(Error::HashMismatch {
                checkpoint: ck.config_hash,
                current: expected_hash.to_string(),
            });
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand_chacha::ChaCha8Rng;

    fn shape(n: usize, hidden: Vec<usize>) -> NetShape {
        NetShape {
            n_items: n,
            hidden,
            time_dim: 4,
        }
    }

    #[test]
    fn widths_are_symmetric() {
        assert_eq!(shape(50, vec![1000]).widths(), vec![50, 1000, 50]);
        assert_eq!(
            shape(50, vec![600, 200]).widths(),
            vec![50, 600, 200, 600, 50]
        );
        assert_eq!(
            shape(50, vec![600, 200]).hidden_widths(),
            vec![600, 200, 600]
        );
    }

    #[test]
    fn embedding_bounded_and_deterministic() {
        for s in [1, 7, 100] {
            let e = time_embedding(s, 16);
            assert_eq!(e, time_embedding(s, 16));
            assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert_ne!(time_embedding(1, 16), time_embedding(2, 16));
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let net = ScoreNet::zeros(shape(6, vec![5])).unwrap();
        let x = StageVector {
            counts: vec![3, 0, 3, 1, 2, 0],
        };
        let logits = net.forward_one::<ChaCha8Rng>(&x, 3, 7, None).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_forward_is_repeatable_and_finite() {
        let mut rng = stream(1, Purpose::Init, 0, 0);
        let net = ScoreNet::new(shape(20, vec![16, 8]), &mut rng).unwrap();
        let x = StageVector {
            counts: vec![300; 20],
        };
        let a = net.forward_one::<ChaCha8Rng>(&x, 300, 50, None).unwrap();
        let b = net.forward_one::<ChaCha8Rng>(&x, 300, 50, None).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
        let bad = StageVector { counts: vec![0; 3] };
        assert!(net.forward_one::<ChaCha8Rng>(&bad, 300, 1, None).is_err());
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        let tiny = softplus(-40.0);
        assert!(tiny > 0.0);
        assert!((tiny / (-40.0f64).exp() - 1.0).abs() < 1e-12);
        assert!((softplus(40.0) - 40.0).abs() < 1e-15);
        assert!(softplus(800.0).is_finite());
        assert!(q_estimate(&[-700.0, 0.0, 700.0]).iter().all(|&q| q >= 0.0));
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = stream(2, Purpose::Init, 0, 0);
        let net = ScoreNet::new(shape(5, vec![8]), &mut rng).unwrap();
        let x = Array2::from_elem((2, 5), 0.5);
        let (_, cache) = net.forward(x.view(), &[1, 2], None).unwrap();
        let g = net.backward(&cache, Array2::zeros((2, 5)).view()).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_with_same_cache_is_repeatable() {
        let mut rng = stream(3, Purpose::Init, 0, 0);
        let net = ScoreNet::new(shape(5, vec![8]), &mut rng).unwrap();
        let mut rngs = [
            stream(3, Purpose::Dropout, 0, 0),
            stream(3, Purpose::Dropout, 1, 0),
        ];
        let masks = DropoutMasks::sample(&net.shape, 0.5, &mut rngs);
        let x = Array2::from_elem((2, 5), 0.25);
        let (_, cache) = net.forward(x.view(), &[3, 4], Some(masks)).unwrap();
        let up = Array2::from_elem((2, 5), 0.1);
        let a = net.backward(&cache, up.view()).unwrap();
        let b = net.backward(&cache, up.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut rng = stream(4, Purpose::Init, 0, 0);
        let mut net = ScoreNet::new(shape(4, vec![3]), &mut rng).unwrap();
        let before = net.params.clone();
        let mut state = AdamState::new(&net.params);
        let zero = net.params.zeros_like();
        adam_step(&mut net.params, &zero, &mut state, &AdamConfig::default());
        assert_eq!(net.params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // Closed form at step 1: m̂ = g, v̂ = g², update = -lr · g / (|g| + eps).
        let s = shape(1, vec![1]);
        let mut params = ParamSet::zeros(&s);
        let mut grads = params.zeros_like();
        grads.layers[0].bias[0] = 1.0;
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        adam_step(&mut params, &grads, &mut state, &cfg);
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((params.layers[0].bias[0] - expected).abs() < 1e-15);
        assert_eq!(params.layers[0].weight[[0, 0]], 0.0);
    }

    #[test]
    fn adam_trajectories_repeat() {
        let run = || {
            let mut rng = stream(9, Purpose::Init, 0, 0);
            let mut net = ScoreNet::new(shape(4, vec![3]), &mut rng).unwrap();
            let mut state = AdamState::new(&net.params);
            for i in 0..5 {
                let mut g = net.params.zeros_like();
                for t in g.tensors_mut() {
                    t.iter_mut()
                        .enumerate()
                        .for_each(|(j, v)| *v = ((i * 31 + j) as f64).sin());
                }
                adam_step(&mut net.params, &g, &mut state, &AdamConfig::default());
            }
            net.params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip_and_hash_check() {
        let mut rng = stream(5, Purpose::Init, 0, 0);
        let net = ScoreNet::new(shape(7, vec![6, 3]), &mut rng).unwrap();
        let mut adam = AdamState::new(&net.params);
        adam.m.layers[1].bias[0] = 0.25;
        adam.step = 12;
        let ck = Checkpoint {
            config_hash: "abc".into(),
            net,
            adam,
            epoch: 3,
        };
        let bytes = ck.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        ck.save(&path).unwrap();
        assert!(Checkpoint::load_checked(&path, "abc").is_ok());
        assert!(matches!(
            Checkpoint::load_checked(&path, "xyz"),
            Err(Error::HashMismatch { .. })
        ));
    }
}
