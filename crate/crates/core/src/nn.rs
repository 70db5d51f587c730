//! Small neural-network toolkit over candle tensors: a named parameter store
//! with seeded initialization and deterministic serialization, the handful of
//! layers the classifier and interpreter need, and an Adam step with global
//! gradient-norm clipping.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Named parameters and buffers. Parameters are trainable `Var`s; buffers
/// (batch-norm running statistics) are `Var`s too so they can be updated in
/// place, but they never reach the optimizer.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    frozen: bool,
    dtype: DType,
    device: Device,
}

pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

impl ParamStore {
    pub fn new(dtype: DType, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            buffers: BTreeMap::new(),
            frozen: false,
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn make<R: Rng + ?Sized>(&self, shape: &[usize], init: Init, rng: &mut R) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(b) => uniform_vec(n, b, rng),
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<()> {
        let v = self.make(shape, init, rng)?;
        self.vars.insert(name.to_string(), v);
        Ok(())
    }

    pub fn add_buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<()> {
        let v = self.make(shape, init, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        self.buffers.insert(name.to_string(), v);
        Ok(())
    }

    /// Parameter as a tensor. Frozen stores hand out detached copies so no
    /// gradient can ever be attributed to them.
    pub fn get(&self, name: &str) -> Result<Tensor> {
        let v = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Shape(format!("unknown parameter {name}")))?;
        Ok(if self.frozen {
            v.as_tensor().detach()
        } else {
            v.as_tensor().clone()
        })
    }

    pub fn buffer(&self, name: &str) -> Result<Tensor> {
        self.buffers
            .get(name)
            .map(|v| v.as_tensor().detach())
            .ok_or_else(|| Error::Shape(format!("unknown buffer {name}")))
    }

    pub fn set_buffer(&self, name: &str, value: &Tensor) -> Result<()> {
        let v = self
            .buffers
            .get(name)
            .ok_or_else(|| Error::Shape(format!("unknown buffer {name}")))?;
        v.set(&value.detach())?;
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Trainable variables in name order.
    pub fn trainable(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named_trainable(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Deep copy of every parameter and buffer.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.all()
            .map(|(k, v)| Ok((k, v.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snap: &BTreeMap<String, Tensor>) -> Result<()> {
        for (k, v) in self.all() {
            let t = snap
                .get(&k)
                .ok_or_else(|| Error::Shape(format!("snapshot lacks {k}")))?;
            v.set(t)?;
        }
        Ok(())
    }

    fn all(&self) -> impl Iterator<Item = (String, &Var)> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v))
            .chain(self.buffers.iter().map(|(k, v)| (format!("buffer.{k}"), v)))
    }

    /// safetensors blob with entries in name order; identical parameters give
    /// identical bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let entries: Vec<(String, Tensor)> = self
            .all()
            .map(|(k, v)| (k, v.as_tensor().detach()))
            .collect();
        Ok(safetensors::serialize(entries, None)?)
    }

    pub fn sha256(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    /// Overwrite values from a blob produced by [`ParamStore::to_bytes`]. Names
    /// and shapes must match the current layout exactly.
    pub fn load_bytes(&self, bytes: &[u8]) -> Result<()> {
        let loaded = candle_core::safetensors::load_buffer(bytes, &self.device)?;
        let expected: Vec<String> = self.all().map(|(k, _)| k).collect();
        if loaded.len() != expected.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model expects {}",
                loaded.len(),
                expected.len()
            )));
        }
        for (k, v) in self.all() {
            let t = loaded
                .get(&k)
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks {k}")))?;
            if t.dims() != v.dims() {
                return Err(Error::Shape(format!(
                    "{k}: checkpoint {:?} vs model {:?}",
                    t.dims(),
                    v.dims()
                )));
            }
            v.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Same parameters, converted to `dtype`. The copy is unfrozen.
    pub fn to_dtype(&self, dtype: DType) -> Result<ParamStore> {
        let conv = |m: &BTreeMap<String, Var>| -> Result<BTreeMap<String, Var>> {
            m.iter()
                .map(|(k, v)| Ok((k.clone(), Var::from_tensor(&v.as_tensor().to_dtype(dtype)?)?)))
                .collect()
        };
        Ok(ParamStore {
            vars: conv(&self.vars)?,
            buffers: conv(&self.buffers)?,
            frozen: false,
            dtype,
            device: self.device.clone(),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn uniform_vec<R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// PyTorch-style default bound `1/sqrt(fan_in)`.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

// ---- layers -------------------------------------------------------------

/// Register `{prefix}.weight` `(out, in)` and `{prefix}.bias`.
pub fn init_linear<R: Rng + ?Sized>(
    ps: &mut ParamStore,
    prefix: &str,
    input: usize,
    output: usize,
    rng: &mut R,
) -> Result<()> {
    let b = fan_in_bound(input);
    ps.add(&format!("{prefix}.weight"), &[output, input], Init::Uniform(b), rng)?;
    ps.add(&format!("{prefix}.bias"), &[output], Init::Uniform(b), rng)
}

/// Affine map over the last dimension of `x`.
pub fn linear(ps: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let w = ps.get(&format!("{prefix}.weight"))?;
    let b = ps.get(&format!("{prefix}.bias"))?;
    let (out, input) = w.dims2()?;
    let dims = x.dims().to_vec();
    let rows: usize = dims[..dims.len() - 1].iter().product();
    let y = x.reshape((rows, input))?.matmul(&w.t()?)?.broadcast_add(&b)?;
    let mut out_dims = dims;
    *out_dims.last_mut().expect("non-scalar input") = out;
    Ok(y.reshape(out_dims)?)
}

pub fn init_conv2d<R: Rng + ?Sized>(
    ps: &mut ParamStore,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    kernel: (usize, usize),
    rng: &mut R,
) -> Result<()> {
    let b = fan_in_bound(c_in * kernel.0 * kernel.1);
    ps.add(
        &format!("{prefix}.weight"),
        &[c_out, c_in, kernel.0, kernel.1],
        Init::Uniform(b),
        rng,
    )?;
    ps.add(&format!("{prefix}.bias"), &[c_out], Init::Uniform(b), rng)
}

pub fn conv2d(ps: &ParamStore, prefix: &str, x: &Tensor, padding: usize) -> Result<Tensor> {
    let w = ps.get(&format!("{prefix}.weight"))?;
    let b = ps.get(&format!("{prefix}.bias"))?;
    let y = x.conv2d(&w, padding, 1, 1, 1)?;
    Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?)
}

/// Weights are stored `(c_in, c_out, kh, kw)` as candle expects.
pub fn init_conv_transpose2d<R: Rng + ?Sized>(
    ps: &mut ParamStore,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    rng: &mut R,
) -> Result<()> {
    let b = fan_in_bound(c_in * kernel * kernel);
    ps.add(
        &format!("{prefix}.weight"),
        &[c_in, c_out, kernel, kernel],
        Init::Uniform(b),
        rng,
    )?;
    ps.add(&format!("{prefix}.bias"), &[c_out], Init::Uniform(b), rng)
}

pub fn conv_transpose2d(
    ps: &ParamStore,
    prefix: &str,
    x: &Tensor,
    padding: usize,
    stride: usize,
) -> Result<Tensor> {
    let w = ps.get(&format!("{prefix}.weight"))?;
    let b = ps.get(&format!("{prefix}.bias"))?;
    let y = x.conv_transpose2d(&w, padding, 0, stride, 1)?;
    Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?)
}

/// Weights `(c_out, c_in, kernel)`.
pub fn init_conv_transpose1d<R: Rng + ?Sized>(
    ps: &mut ParamStore,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    rng: &mut R,
) -> Result<()> {
    let b = fan_in_bound(c_in * kernel / 2);
    ps.add(&format!("{prefix}.weight"), &[c_out, c_in, kernel], Init::Uniform(b), rng)?;
    ps.add(&format!("{prefix}.bias"), &[c_out], Init::Uniform(b), rng)
}

/// Stride-2 transposed 1-D convolution on `(B, C, T)` producing `2T` frames,
/// written as a correlation over the zero-stuffed input (kernel stored
/// flipped, even width). Candle has no backward for `conv_transpose1d`.
pub fn conv_transpose1d_x2(ps: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let w = ps.get(&format!("{prefix}.weight"))?;
    let b = ps.get(&format!("{prefix}.bias"))?;
    let (bsz, c, t) = x.dims3()?;
    let k = w.dim(2)?;
    let stuffed = Tensor::stack(&[x, &x.zeros_like()?], 3)?
        .reshape((bsz, c, 2 * t))?
        .narrow(2, 0, 2 * t - 1)?;
    // Length: (2t - 1) + 2p - k + 1 = 2t with p = k/2.
    let y = stuffed.conv1d(&w, k / 2, 1, 1, 1)?;
    Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1))?)?)
}

pub fn init_layer_norm(ps: &mut ParamStore, prefix: &str, dim: usize) -> Result<()> {
    let mut none = rand::rngs::mock::StepRng::new(0, 0);
    ps.add(&format!("{prefix}.gamma"), &[dim], Init::Ones, &mut none)?;
    ps.add(&format!("{prefix}.beta"), &[dim], Init::Zeros, &mut none)
}

/// Layer normalization over the last dimension.
pub fn layer_norm(ps: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let g = ps.get(&format!("{prefix}.gamma"))?;
    let b = ps.get(&format!("{prefix}.beta"))?;
    let mean = x.mean_keepdim(D::Minus1)?;
    let centred = x.broadcast_sub(&mean)?;
    let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centred.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
    Ok(normed.broadcast_mul(&g)?.broadcast_add(&b)?)
}

pub const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

pub fn init_batch_norm(ps: &mut ParamStore, prefix: &str, channels: usize) -> Result<()> {
    let mut none = rand::rngs::mock::StepRng::new(0, 0);
    ps.add(&format!("{prefix}.gamma"), &[channels], Init::Ones, &mut none)?;
    ps.add(&format!("{prefix}.beta"), &[channels], Init::Zeros, &mut none)?;
    ps.add_buffer(&format!("{prefix}.running_mean"), &[channels], Init::Zeros)?;
    ps.add_buffer(&format!("{prefix}.running_var"), &[channels], Init::Ones)
}

/// Batch normalization of `(B, C, H, W)` over all axes but `C`. In training
/// mode batch statistics are used and the running estimates updated.
pub fn batch_norm(ps: &ParamStore, prefix: &str, x: &Tensor, train: bool) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let shape = (1, c, 1, 1);
    let (mean, var) = if train {
        let flat = x.transpose(0, 1)?.reshape((c, b * h * w))?;
        let mean = flat.mean_keepdim(1)?;
        let var = flat.broadcast_sub(&mean)?.sqr()?.mean_keepdim(1)?;
        let n = (b * h * w) as f64;
        let unbiased = if n > 1.0 {
            (var.detach() * (n / (n - 1.0)))?
        } else {
            var.detach()
        };
        let rm = ps.buffer(&format!("{prefix}.running_mean"))?;
        let rv = ps.buffer(&format!("{prefix}.running_var"))?;
        let new_rm = ((rm * (1.0 - BN_MOMENTUM))? + (mean.detach().flatten_all()? * BN_MOMENTUM)?)?;
        let new_rv = ((rv * (1.0 - BN_MOMENTUM))? + (unbiased.flatten_all()? * BN_MOMENTUM)?)?;
        ps.set_buffer(&format!("{prefix}.running_mean"), &new_rm)?;
        ps.set_buffer(&format!("{prefix}.running_var"), &new_rv)?;
        (mean.reshape(shape)?, var.reshape(shape)?)
    } else {
        (
            ps.buffer(&format!("{prefix}.running_mean"))?.reshape(shape)?,
            ps.buffer(&format!("{prefix}.running_var"))?.reshape(shape)?,
        )
    };
    let g = ps.get(&format!("{prefix}.gamma"))?.reshape(shape)?;
    let beta = ps.get(&format!("{prefix}.beta"))?.reshape(shape)?;
    let y = x
        .broadcast_sub(&mean)?
        .broadcast_div(&(var + BN_EPS)?.sqrt()?)?
        .broadcast_mul(&g)?
        .broadcast_add(&beta)?;
    Ok(y)
}

/// Numerically stable softmax over the last dimension.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Sinusoidal position table `(len, dim)`.
pub fn positional_encoding(len: usize, dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = vec![0f64; len * dim];
    for p in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = p as f64 * rate;
            data[p * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Ok(Tensor::from_vec(data, (len, dim), device)?.to_dtype(dtype)?)
}

// ---- optimization -------------------------------------------------------

/// Adam (AdamW with zero decay) plus optional global-norm clipping.
pub struct Adam {
    vars: Vec<Var>,
    inner: AdamW,
    clip: Option<f64>,
}

impl Adam {
    pub fn new(vars: Vec<Var>, lr: f64, clip: Option<f64>) -> Result<Self> {
        let params = ParamsAdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        Ok(Self {
            inner: AdamW::new(vars.clone(), params)?,
            vars,
            clip,
        })
    }

    /// Backpropagate `loss`, clip, update. Returns the pre-clip gradient norm.
    pub fn backward_step(&mut self, loss: &Tensor) -> Result<f64> {
        let mut grads = loss.backward()?;
        let norm = global_grad_norm(&grads, &self.vars)?;
        if let Some(max) = self.clip {
            if norm > max {
                let scale = max / (norm + 1e-12);
                for v in &self.vars {
                    if let Some(g) = grads.remove(v.as_tensor()) {
                        grads.insert(v.as_tensor(), (g * scale)?);
                    }
                }
            }
        }
        self.inner.step(&grads)?;
        Ok(norm)
    }
}

pub fn global_grad_norm(grads: &GradStore, vars: &[Var]) -> Result<f64> {
    let mut total = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            total += g
                .to_dtype(DType::F64)?
                .sqr()?
                .sum_all()?
                .to_scalar::<f64>()?;
        }
    }
    Ok(total.sqrt())
}
