//! Time-conditioned multilayer perceptrons with hand-written backprop, the
//! AdamW optimizer, and checkpoint files.
//!
//! Each network maps `[x ; t]` (width `d + 1`) through two hidden layers of
//! width 64 with SiLU activations to a `d`-vector. Parameters live in one flat
//! buffer, layer by layer, each layer stored as its `in × out` weight matrix
//! (row-major) followed by its `out` biases.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

pub const HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `z · sigmoid(z)`.
    Silu,
    /// Linear network; used to test the forward pass.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Silu => z / (1.0 + (-z).exp()),
            Self::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Self::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Silu => "silu",
            Self::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// Offset of the weight block; biases follow it.
    offset: usize,
}

impl Layer {
    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.inputs * self.outputs]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.inputs * self.outputs;
        &params[start..start + self.outputs]
    }

    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    /// `out = b + inᵀ W`, accumulating over inputs in order.
    #[inline]
    fn forward(&self, params: &[f64], input: &[f64], out: &mut [f64]) {
        combine_rows(self.bias(params), input, self.weights(params), out);
    }
}

/// `out = init + Σ_i coefs[i] · rows[i]`, where `rows` holds `coefs.len()`
/// rows of width `init.len()`. Each output element accumulates in row order,
/// so the result does not depend on which kernel width is used.
#[inline]
fn combine_rows(init: &[f64], coefs: &[f64], rows: &[f64], out: &mut [f64]) {
    match init.len() {
        64 => combine_fixed::<64>(init, coefs, rows, out),
        32 => combine_fixed::<32>(init, coefs, rows, out),
        2 => combine_fixed::<2>(init, coefs, rows, out),
        3 => combine_fixed::<3>(init, coefs, rows, out),
        w => {
            out.copy_from_slice(init);
            for (c, row) in coefs.iter().zip(rows.chunks_exact(w)) {
                for (o, r) in out.iter_mut().zip(row) {
                    *o += c * r;
                }
            }
        }
    }
}

#[inline]
fn combine_fixed<const N: usize>(init: &[f64], coefs: &[f64], rows: &[f64], out: &mut [f64]) {
    let mut acc = [0.0; N];
    acc.copy_from_slice(init);
    for (c, row) in coefs.iter().zip(rows.chunks_exact(N)) {
        let row: &[f64; N] = row.try_into().expect("row width");
        for j in 0..N {
            acc[j] += c * row[j];
        }
    }
    out.copy_from_slice(&acc);
}

/// A `(d+1) → 64 → 64 → d` perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dim: usize,
    hidden: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Per-batch activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `inputs[l]` is the (post-activation) input of layer `l`, `B × in_l`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers, `B × out_l`.
    pre: Vec<Vec<f64>>,
    /// Network outputs, `B × d`.
    pub output: Vec<f64>,
}

impl Mlp {
    /// Uniform `±1/√fan_in` weights and zero biases.
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        Self::with_architecture(dim, &HIDDEN, Activation::Silu, seed)
    }

    pub fn with_architecture(dim: usize, hidden: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        let mut mlp = Self {
            dim,
            hidden: hidden.to_vec(),
            activation,
            params: Vec::new(),
        };
        let layers = mlp.layers();
        let total: usize = layers.iter().map(Layer::len).sum();
        mlp.params = vec![0.0; total];
        let mut rng = rng_from_seed(seed);
        for layer in layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in &mut mlp.params[layer.offset..layer.offset + layer.inputs * layer.outputs] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    fn layers(&self) -> Vec<Layer> {
        let mut sizes = vec![self.dim + 1];
        sizes.extend(&self.hidden);
        sizes.push(self.dim);
        let mut offset = 0;
        sizes
            .windows(2)
            .map(|w| {
                let layer = Layer {
                    inputs: w[0],
                    outputs: w[1],
                    offset,
                };
                offset += layer.len();
                layer
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn set_activation(&mut self, activation: Activation) {
        self.activation = activation;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Biases of every layer, concatenated.
    pub fn biases(&self) -> Vec<f64> {
        self.layers()
            .iter()
            .flat_map(|l| l.bias(&self.params).to_vec())
            .collect()
    }

    pub fn forward(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.forward_batch(&[t], x)
    }

    /// Evaluates `B = ts.len()` samples; `xs` is `B × d` row-major. Every
    /// sample follows the same arithmetic as [`Mlp::forward`].
    pub fn forward_batch(&self, ts: &[f64], xs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; ts.len() * self.dim];
        self.forward_batch_into(ts, xs, &mut out);
        out
    }

    pub fn forward_batch_into(&self, ts: &[f64], xs: &[f64], out: &mut [f64]) {
        let d = self.dim;
        assert_eq!(xs.len(), ts.len() * d, "batch shape");
        assert_eq!(out.len(), ts.len() * d, "output shape");
        let layers = self.layers();
        let width = layers.iter().map(|l| l.outputs).max().unwrap_or(0).max(d + 1);
        let mut a = vec![0.0; width];
        let mut b = vec![0.0; width];
        for (s, &t) in ts.iter().enumerate() {
            a[..d].copy_from_slice(&xs[s * d..(s + 1) * d]);
            a[d] = t;
            let mut len = d + 1;
            for (l, layer) in layers.iter().enumerate() {
                layer.forward(&self.params, &a[..len], &mut b[..layer.outputs]);
                len = layer.outputs;
                if l + 1 < layers.len() {
                    for v in &mut b[..len] {
                        *v = self.activation.apply(*v);
                    }
                }
                std::mem::swap(&mut a, &mut b);
            }
            out[s * d..(s + 1) * d].copy_from_slice(&a[..d]);
        }
    }

    /// Forward pass that keeps what [`Mlp::backward`] needs.
    pub fn forward_cached(&self, ts: &[f64], xs: &[f64]) -> Result<ForwardCache> {
        let d = self.dim;
        let batch = ts.len();
        if xs.len() != batch * d {
            return Err(Error::DimensionMismatch {
                expected: batch * d,
                got: xs.len(),
            });
        }
        let layers = self.layers();
        let mut input0 = Vec::with_capacity(batch * (d + 1));
        for (s, &t) in ts.iter().enumerate() {
            input0.extend_from_slice(&xs[s * d..(s + 1) * d]);
            input0.push(t);
        }
        let mut inputs = vec![input0];
        let mut pre = Vec::new();
        let mut output = Vec::new();
        for (l, layer) in layers.iter().enumerate() {
            let input = inputs.last().expect("layer input");
            let mut z = vec![0.0; batch * layer.outputs];
            for s in 0..batch {
                layer.forward(
                    &self.params,
                    &input[s * layer.inputs..(s + 1) * layer.inputs],
                    &mut z[s * layer.outputs..(s + 1) * layer.outputs],
                );
            }
            if l + 1 < layers.len() {
                let act: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(z);
                inputs.push(act);
            } else {
                output = z;
            }
        }
        Ok(ForwardCache {
            batch,
            inputs,
            pre,
            output,
        })
    }

    /// Gradient of `(1/B) Σ_s ⟨upstream_s, out_s⟩` with respect to every
    /// parameter, i.e. the batch-mean gradient for per-sample output
    /// gradients `upstream` (`B × d`).
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim;
        let batch = cache.batch;
        if upstream.len() != batch * d {
            return Err(Error::DimensionMismatch {
                expected: batch * d,
                got: upstream.len(),
            });
        }
        let layers = self.layers();
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.to_vec();
        let ones = vec![1.0; batch];
        let mut column = vec![0.0; batch];
        for (l, layer) in layers.iter().enumerate().rev() {
            let (nin, nout) = (layer.inputs, layer.outputs);
            let input = &cache.inputs[l];
            let g = &mut grads[layer.offset..layer.offset + layer.len()];
            let (gw, gb) = g.split_at_mut(nin * nout);
            let zeros = vec![0.0; nout];
            combine_rows(&zeros, &ones, &delta, gb);
            for i in 0..nin {
                for (c, s) in column.iter_mut().zip(0..batch) {
                    *c = input[s * nin + i];
                }
                combine_rows(&zeros, &column, &delta, &mut gw[i * nout..(i + 1) * nout]);
            }
            if l == 0 {
                break;
            }
            let w = layer.weights(&self.params);
            let mut wt = vec![0.0; nin * nout];
            for i in 0..nin {
                for j in 0..nout {
                    wt[j * nin + i] = w[i * nout + j];
                }
            }
            let pre = &cache.pre[l - 1];
            let zeros_in = vec![0.0; nin];
            let mut next = vec![0.0; batch * nin];
            for s in 0..batch {
                let out = &mut next[s * nin..(s + 1) * nin];
                combine_rows(&zeros_in, &delta[s * nout..(s + 1) * nout], &wt, out);
                for (o, &z) in out.iter_mut().zip(&pre[s * nin..(s + 1) * nin]) {
                    *o *= self.activation.derivative(z);
                }
            }
            delta = next;
        }
        let scale = 1.0 / batch.max(1) as f64;
        grads.iter_mut().for_each(|g| *g *= scale);
        Ok(grads)
    }

    /// Forward then backward in one call.
    pub fn gradients(&self, ts: &[f64], xs: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_cached(ts, xs)?;
        self.backward(&cache, upstream)
    }
}

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

impl AdamW {
    /// `θ ← θ − lr · (m̂ / (√v̂ + eps) + wd · θ)` with bias-corrected moments.
    pub fn step(&self, params: &mut [f64], grads: &[f64], state: &mut AdamState) {
        assert_eq!(params.len(), grads.len(), "gradient shape");
        assert_eq!(params.len(), state.m.len(), "optimizer state shape");
        state.step += 1;
        let c1 = 1.0 - self.beta1.powi(state.step as i32);
        let c2 = 1.0 - self.beta2.powi(state.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
        }
    }
}

/// Drift and score networks with their optimizer states.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub drift: Mlp,
    pub score: Mlp,
    pub drift_opt: AdamState,
    pub score_opt: AdamState,
    pub sigma: f64,
}

const CHECKPOINT_MAGIC: &str = "qdsb-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

impl ModelBundle {
    /// Two independently initialized networks.
    pub fn new(dim: usize, sigma: f64, seed: u64) -> Result<Self> {
        let drift = Mlp::new(dim, derive_seed(seed, 1))?;
        let score = Mlp::new(dim, derive_seed(seed, 2))?;
        Ok(Self {
            drift_opt: AdamState::new(drift.num_params()),
            score_opt: AdamState::new(score.num_params()),
            drift,
            score,
            sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    /// Text checkpoint: a header line per field, then one section per
    /// parameter or moment buffer, every value with 17 significant digits.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}").unwrap();
        writeln!(out, "dim {}", self.dim()).unwrap();
        let hidden: Vec<String> = self.drift.hidden().iter().map(|h| h.to_string()).collect();
        writeln!(out, "hidden {}", hidden.join(" ")).unwrap();
        writeln!(out, "sigma {:.16e}", self.sigma).unwrap();
        writeln!(out, "activation {}", self.drift.activation().name()).unwrap();
        writeln!(out, "steps {} {}", self.drift_opt.step, self.score_opt.step).unwrap();
        let sections: [(&str, &[f64]); 6] = [
            ("drift.params", self.drift.params()),
            ("drift.m", &self.drift_opt.m),
            ("drift.v", &self.drift_opt.v),
            ("score.params", self.score.params()),
            ("score.m", &self.score_opt.m),
            ("score.v", &self.score_opt.v),
        ];
        for (name, values) in sections {
            writeln!(out, "{name} {}", values.len()).unwrap();
            for v in values {
                writeln!(out, "{v:.16e}").unwrap();
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_checkpoint_str(&fs::read_to_string(path)?)
    }

    /// Loads and rejects a checkpoint whose header disagrees with `dim` or
    /// `sigma`.
    pub fn load_expecting(path: impl AsRef<Path>, dim: usize, sigma: f64) -> Result<Self> {
        let bundle = Self::load(path)?;
        if bundle.dim() != dim {
            return Err(Error::Checkpoint(format!("dimension {} does not match expected {dim}", bundle.dim())));
        }
        if bundle.sigma != sigma {
            return Err(Error::Checkpoint(format!("sigma {} does not match expected {sigma}", bundle.sigma)));
        }
        Ok(bundle)
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        let mut lines = text.lines();
        fn header_fields(lines: &mut std::str::Lines<'_>, key: &str) -> Result<Vec<String>> {
            let bad = |msg: String| Error::Checkpoint(msg);
            let line = lines.next().ok_or_else(|| bad(format!("missing {key} line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(format!("expected {key:?} line, found {line:?}")));
            }
            Ok(parts.map(str::to_string).collect())
        }
        let mut header = |key: &str| header_fields(&mut lines, key);
        let version = header(CHECKPOINT_MAGIC)?;
        if version != [format!("v{CHECKPOINT_VERSION}")] {
            return Err(bad(&format!("unsupported version {version:?}")));
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad integer {s:?}")));
        let parse_f64 = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));

        let dim_field = header("dim")?;
        let dim = parse_usize(dim_field.first().ok_or_else(|| bad("empty dim"))?)?;
        let hidden = header("hidden")?
            .iter()
            .map(|s| parse_usize(s))
            .collect::<Result<Vec<_>>>()?;
        let sigma = parse_f64(header("sigma")?.first().ok_or_else(|| bad("empty sigma"))?)?;
        let activation = match header("activation")?.first().map(String::as_str) {
            Some("silu") => Activation::Silu,
            Some("identity") => Activation::Identity,
            other => return Err(bad(&format!("unknown activation {other:?}"))),
        };
        let steps = header("steps")?;
        if steps.len() != 2 {
            return Err(bad("steps needs two counters"));
        }
        let (drift_step, score_step) = (
            parse_usize(&steps[0])? as u64,
            parse_usize(&steps[1])? as u64,
        );

        let mut drift = Mlp::with_architecture(dim, &hidden, activation, 0)?;
        let mut score = drift.clone();
        let expected = drift.num_params();
        let mut sections = Vec::with_capacity(6);
        for name in ["drift.params", "drift.m", "drift.v", "score.params", "score.m", "score.v"] {
            let count = parse_usize(header_fields(&mut lines, name)?.first().ok_or_else(|| bad("empty count"))?)?;
            if count != expected {
                return Err(bad(&format!("{name} holds {count} values, architecture needs {expected}")));
            }
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                let line = lines.next().ok_or_else(|| bad(&format!("{name} truncated")))?;
                values.push(parse_f64(line.trim())?);
            }
            sections.push(values);
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad("trailing content"));
        }
        let mut it = sections.into_iter();
        let mut next = || it.next().expect("six sections");
        drift.params = next();
        let drift_opt = AdamState {
            m: next(),
            v: next(),
            step: drift_step,
        };
        score.params = next();
        let score_opt = AdamState {
            m: next(),
            v: next(),
            step: score_step,
        };
        Ok(Self {
            drift,
            score,
            drift_opt,
            score_opt,
            sigma,
        })
    }
}
