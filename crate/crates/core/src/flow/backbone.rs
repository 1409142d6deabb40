//! Diffusion-transformer velocity network with adaLN-Zero time conditioning.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::condition::ConditionBundle;
use crate::nn::{self, FeedForward, Init, LayerNorm, Linear, ParamStore, SelfAttention};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub n_mels: usize,
    pub phonetic_dim: usize,
    pub semantic_dim: usize,
    pub time_dim: usize,
}

impl BackboneConfig {
    pub fn desk() -> Self {
        Self {
            layers: 4,
            heads: 4,
            hidden: 256,
            ffn: 512,
            n_mels: 100,
            phonetic_dim: 64,
            semantic_dim: 512,
            time_dim: 256,
        }
    }

    pub fn paper() -> Self {
        Self {
            layers: 12,
            heads: 16,
            hidden: 1024,
            ffn: 2048,
            n_mels: 100,
            phonetic_dim: 1024,
            semantic_dim: 512,
            time_dim: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.n_mels == 0 || self.phonetic_dim == 0 || self.semantic_dim == 0 || self.ffn == 0 {
            return Err(Error::Config("backbone widths must be positive".into()));
        }
        if self.time_dim < 2 {
            return Err(Error::Config("time_dim must be at least 2".into()));
        }
        Ok(())
    }

    /// Per-frame width entering the input projection.
    pub fn input_width(&self) -> usize {
        self.n_mels + self.semantic_dim + 2 * self.n_mels + 2
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone)]
struct DitBlock {
    modulation: Linear,
    ln1: LayerNorm,
    attn: SelfAttention,
    ln2: LayerNorm,
    ff: FeedForward,
}

fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&(scale + 1.0)?)?.broadcast_add(shift)?)
}

impl DitBlock {
    fn forward(&self, h: &Tensor, c: &Tensor) -> Result<Tensor> {
        let hidden = h.dim(D::Minus1)?;
        let m = self.modulation.forward(c)?.unsqueeze(1)?;
        let part = |i: usize| m.narrow(D::Minus1, i * hidden, hidden);
        let (sh1, sc1, g1) = (part(0)?, part(1)?, part(2)?);
        let (sh2, sc2, g2) = (part(3)?, part(4)?, part(5)?);
        let a = self.attn.forward(&modulate(&self.ln1.forward(h)?, &sh1, &sc1)?)?;
        let h = (h + a.broadcast_mul(&g1)?)?;
        let f = self.ff.forward(&modulate(&self.ln2.forward(&h)?, &sh2, &sc2)?)?;
        Ok((&h + f.broadcast_mul(&g2)?)?)
    }
}

#[derive(Debug)]
pub struct Backbone {
    cfg: BackboneConfig,
    store: ParamStore,
    semantic_proj: Linear,
    input: Linear,
    time1: Linear,
    time2: Linear,
    blocks: Vec<DitBlock>,
    final_mod: Linear,
    final_ln: LayerNorm,
    out: Linear,
}

impl Backbone {
    pub fn new(cfg: &BackboneConfig, dtype: DType, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut s = ParamStore::new(dtype, seed);
        let h = cfg.hidden;
        let semantic_proj = Linear::new(&mut s, "semantic_proj", cfg.phonetic_dim, cfg.semantic_dim, false)?;
        let input = Linear::new(&mut s, "input", cfg.input_width(), h, true)?;
        let time1 = Linear::new(&mut s, "time.fc1", cfg.time_dim, h, true)?;
        let time2 = Linear::new(&mut s, "time.fc2", h, h, true)?;
        let blocks = (0..cfg.layers)
            .map(|i| {
                let p = format!("block{i}");
                Ok(DitBlock {
                    modulation: Linear::with_init(&mut s, &format!("{p}.adaln"), h, 6 * h, true, Init::Zeros)?,
                    ln1: LayerNorm::new(&mut s, &format!("{p}.ln1"), h, false)?,
                    attn: SelfAttention::new(&mut s, &format!("{p}.attn"), h, cfg.heads)?,
                    ln2: LayerNorm::new(&mut s, &format!("{p}.ln2"), h, false)?,
                    ff: FeedForward::new(&mut s, &format!("{p}.ff"), h, cfg.ffn)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let final_mod = Linear::with_init(&mut s, "final.adaln", h, 2 * h, true, Init::Zeros)?;
        let final_ln = LayerNorm::new(&mut s, "final.ln", h, false)?;
        let out = Linear::with_init(&mut s, "final.out", h, cfg.n_mels, true, Init::Zeros)?;
        Ok(Self {
            cfg: cfg.clone(),
            store: s,
            semantic_proj,
            input,
            time1,
            time2,
            blocks,
            final_mod,
            final_ln,
            out,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// The 1-layer linear map applied to phonetic features.
    pub fn semantic_projection(&self) -> &Linear {
        &self.semantic_proj
    }

    /// `x_t`: `[B, F, n_mels]`, `t`: one time per item. Returns the
    /// predicted velocity with the shape of `x_t`.
    pub fn forward(&self, x_t: &Tensor, t: &[f64], cond: &ConditionBundle) -> Result<Tensor> {
        let (b, f, m) = x_t.dims3()?;
        if m != self.cfg.n_mels || t.len() != b || cond.batch() != b || cond.frames() != f {
            return Err(Error::Shape(format!(
                "x_t {b}x{f}x{m}, {} times, condition {}x{}",
                t.len(),
                cond.batch(),
                cond.frames()
            )));
        }
        let x = Tensor::cat(&[x_t, &cond.features()?, &cond.flags()?], D::Minus1)?;
        let pos: Vec<f64> = (0..f).map(|i| i as f64).collect();
        let mut h = self
            .input
            .forward(&x)?
            .broadcast_add(&nn::sinusoidal_features(&pos, self.cfg.hidden, x.dtype())?)?;

        let ts: Vec<f64> = t.iter().map(|v| v * 1000.0).collect();
        let temb = nn::sinusoidal_features(&ts, self.cfg.time_dim, x.dtype())?;
        let c = self.time2.forward(&self.time1.forward(&temb)?.silu()?)?;
        let c = c.silu()?;

        for blk in &self.blocks {
            h = blk.forward(&h, &c)?;
        }
        let fm = self.final_mod.forward(&c)?.unsqueeze(1)?;
        let hid = self.cfg.hidden;
        let (sh, sc) = (fm.narrow(D::Minus1, 0, hid)?, fm.narrow(D::Minus1, hid, hid)?);
        self.out.forward(&modulate(&self.final_ln.forward(&h)?, &sh, &sc)?)
    }
}
