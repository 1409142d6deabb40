//! Small neural-network toolkit on top of candle tensors: a named parameter
//! store with deterministic initialisation, the handful of layers the
//! encoder and the flow backbone need, and helpers to move data in and out.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Initial values for a freshly created parameter.
#[derive(Debug, Clone)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-a, a]`.
    Uniform(f64),
    Normal(f64),
    Values(Vec<f64>),
}

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Creates parameter `name`. Creation order fixes the random draws, so
    /// models must build their layers in a fixed order.
    pub fn create(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(a) => (0..n).map(|_| self.rng.random_range(-a..=a)).collect(),
            Init::Normal(s) => (0..n)
                .map(|_| s * Distribution::<f64>::sample(&StandardNormal, &mut self.rng))
                .collect(),
            Init::Values(v) => {
                if v.len() != n {
                    return Err(Error::Shape(format!("{name}: {} values for {n} entries", v.len())));
                }
                v
            }
        };
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// SHA-256 over names, shapes and raw little-endian values.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in &self.vars {
            h.update(name.as_bytes());
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            h.update(tensor_bytes(var.as_tensor())?);
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Overwrites every parameter with values from `other`, which must hold
    /// the same names and shapes.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        for (name, var) in &self.vars {
            let src = other
                .get(name)
                .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))?;
            if src.dims() != var.dims() {
                return Err(Error::Shape(format!("{name}: shape {:?} vs {:?}", src.dims(), var.dims())));
            }
            var.set(&src.as_tensor().to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Replaces every value with a fresh draw from `N(0, scale^2)`.
    pub fn randomize(&self, seed: u64, scale: f64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for var in self.vars.values() {
            let v: Vec<f64> = (0..var.elem_count())
                .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            var.set(&Tensor::from_vec(v, var.dims(), &Device::Cpu)?.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Named tensors, detached, in name order.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_detached_tensor()))
            .collect()
    }

    /// Loads values from a snapshot; every stored name must match.
    pub fn load_snapshot(&self, tensors: &[(String, Tensor)]) -> Result<()> {
        let map: BTreeMap<&str, &Tensor> = tensors.iter().map(|(k, t)| (k.as_str(), t)).collect();
        if map.len() != self.vars.len() {
            return Err(Error::Shape(format!(
                "snapshot has {} tensors, model has {}",
                map.len(),
                self.vars.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = map
                .get(name.as_str())
                .ok_or_else(|| Error::Shape(format!("snapshot lacks {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Shape(format!("{name}: shape {:?} vs {:?}", t.dims(), var.dims())));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

pub(crate) fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        _ => flat
            .to_dtype(DType::F32)?
            .to_vec1::<f32>()?
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
    })
}

/// Affine map over the last axis: `x @ w + b`, `w` stored as `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let a = (1.0 / d_in as f64).sqrt();
        Self::with_init(store, name, d_in, d_out, bias, Init::Uniform(a))
    }

    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let weight = store.create(&format!("{name}.weight"), &[d_in, d_out], init)?;
        let bias = if bias {
            Some(store.create(&format!("{name}.bias"), &[d_out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn d_in(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().ok_or_else(|| Error::Shape("linear on a scalar".into()))?;
        if d_in != self.d_in() {
            return Err(Error::Shape(format!("linear expects {} inputs, got {d_in}", self.d_in())));
        }
        let rows = x.elem_count() / d_in;
        let y = x.contiguous()?.reshape((rows, d_in))?.matmul(self.weight.as_tensor())?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b.as_tensor())?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.d_out();
        Ok(y.reshape(out_dims)?)
    }
}

/// Layer normalisation over the last axis, optionally with a learned affine.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Option<Var>,
    pub shift: Option<Var>,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, affine: bool) -> Result<Self> {
        let (gain, shift) = if affine {
            (
                Some(store.create(&format!("{name}.gain"), &[dim], Init::Ones)?),
                Some(store.create(&format!("{name}.shift"), &[dim], Init::Zeros)?),
            )
        } else {
            (None, None)
        };
        Ok(Self { gain, shift, eps: 1e-5 })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = normalize_last(x, self.eps)?;
        let y = match &self.gain {
            Some(g) => y.broadcast_mul(g.as_tensor())?,
            None => y,
        };
        Ok(match &self.shift {
            Some(b) => y.broadcast_add(b.as_tensor())?,
            None => y,
        })
    }
}

pub fn normalize_last(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(xc.broadcast_div(&(var + eps)?.sqrt()?)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Bidirectional multi-head self-attention.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    qkv: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("width {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            qkv: Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, true)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, true)?,
            heads,
        })
    }

    /// `x`: `[batch, frames, dim]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        let hd = c / self.heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, t, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?; // [3, b, h, t, hd]
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
        let p = softmax_last(&scores)?;
        let y = p.matmul(&v)?.transpose(1, 2)?.reshape((b, t, c))?;
        self.out.forward(&y)
    }
}

/// Two-layer GELU MLP.
#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu_erf()?)
    }
}

/// Sinusoidal features of scalar positions: `[n] -> [n, dim]`, first half
/// sines, second half cosines, geometric frequencies from 1 down to 1e-4.
pub fn sinusoidal_features(positions: &[f64], dim: usize, dtype: DType) -> Result<Tensor> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
            out.push((p * freq).sin());
        }
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
            out.push((p * freq).cos());
        }
        for _ in 2 * half..dim {
            out.push(0.0);
        }
    }
    Ok(Tensor::from_vec(out, (positions.len(), dim), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Row-major `[rows, cols]` values as a tensor of `dtype`.
pub fn matrix(values: &[f64], rows: usize, cols: usize, dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_slice(values, (rows, cols), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Stacks equally sized row-major matrices into `[batch, rows, cols]`.
pub fn stack_matrices(items: &[&[f64]], rows: usize, cols: usize, dtype: DType) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(items.len() * rows * cols);
    for m in items {
        if m.len() != rows * cols {
            return Err(Error::Shape(format!("expected {} values, got {}", rows * cols, m.len())));
        }
        flat.extend_from_slice(m);
    }
    Ok(Tensor::from_vec(flat, (items.len(), rows, cols), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Flattened values of any tensor as `f64`.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Gaussian tensor drawn from `rng`.
pub fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], dtype: DType) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn creation_is_deterministic() {
        let mk = || {
            let mut s = ParamStore::new(DType::F32, 5);
            Linear::new(&mut s, "a", 4, 3, true).unwrap();
            Linear::new(&mut s, "b", 3, 2, false).unwrap();
            s.checksum().unwrap()
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(DType::F32, 0);
        s.create("x", &[2], Init::Zeros).unwrap();
        assert!(s.create("x", &[2], Init::Zeros).is_err());
    }

    #[test]
    fn linear_handles_batched_input() {
        let mut s = ParamStore::new(DType::F64, 1);
        let l = Linear::new(&mut s, "l", 3, 5, true).unwrap();
        let x = Tensor::ones((2, 4, 3), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(l.forward(&x).unwrap().dims(), &[2, 4, 5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0], [-1.0, 0.0, 10.0]], &Device::Cpu).unwrap();
        let s = softmax_last(&x).unwrap().sum(1).unwrap().to_vec1::<f64>().unwrap();
        for v in s {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let mut s = ParamStore::new(DType::F64, 1);
        let ln = LayerNorm::new(&mut s, "n", 4, false).unwrap();
        let x = Tensor::new(&[[1.0f64, 5.0, -2.0, 8.0]], &Device::Cpu).unwrap();
        let y = to_f64_vec(&ln.forward(&x).unwrap()).unwrap();
        let m: f64 = y.iter().sum::<f64>() / 4.0;
        let v: f64 = y.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-4);
    }

    #[test]
    fn snapshot_roundtrip_preserves_checksum() {
        let mut a = ParamStore::new(DType::F32, 1);
        Linear::new(&mut a, "l", 3, 3, true).unwrap();
        let mut b = ParamStore::new(DType::F32, 2);
        Linear::new(&mut b, "l", 3, 3, true).unwrap();
        assert_ne!(a.checksum().unwrap(), b.checksum().unwrap());
        b.load_snapshot(&a.snapshot()).unwrap();
        assert_eq!(a.checksum().unwrap(), b.checksum().unwrap());
    }
}
