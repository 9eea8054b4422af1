use super::blocks::LayerFlops;
use super::layers::{Dense, Forward, LayerNorm};
use super::params::ParamStore;
use super::spec::EncoderSpec;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Padding, Tensor, Var};
use rand::Rng;

/// Sinusoidal position table `[L, d]`: sin on even, cos on odd features.
pub fn positional_encoding(len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64 * 2.0;
            let angle = pos as f64 / 10000f64.powf(pair / d as f64);
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub o: Dense,
    pub norm1: LayerNorm,
    pub ff1: Dense,
    pub ff2: Dense,
    pub norm2: LayerNorm,
}

/// Self-attention sequence encoder over a channel-major feature map.
/// Blocks are post-norm: `x = LN(x + attn(x))`, `x = LN(x + ff(x))`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub input_width: usize,
    pub proj: Dense,
    pub layers: Vec<EncoderLayer>,
}

/// Values recorded during an encoder pass.
pub struct EncoderOutput {
    /// `[B, L, d_model]`
    pub sequence: Var,
    /// Per layer, attention weights `[B·heads, L, L]`.
    pub attention: Vec<Var>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore<f64>, rng: &mut impl Rng, spec: &EncoderSpec, input_width: usize) -> Result<Self> {
        spec.validate()?;
        if input_width == 0 {
            return Err(Error::InvalidSpec("encoder input width must be >= 1".into()));
        }
        let d = spec.d_model;
        let proj = Dense::new(store, rng, "encoder.proj", input_width, d, true);
        let layers = (0..spec.layers)
            .map(|l| {
                let n = format!("encoder.layer{l}");
                EncoderLayer {
                    q: Dense::new(store, rng, &format!("{n}.q"), d, d, true),
                    k: Dense::new(store, rng, &format!("{n}.k"), d, d, true),
                    v: Dense::new(store, rng, &format!("{n}.v"), d, d, true),
                    o: Dense::new(store, rng, &format!("{n}.o"), d, d, true),
                    norm1: LayerNorm::new(store, &format!("{n}.norm1"), d),
                    ff1: Dense::new(store, rng, &format!("{n}.ff1"), d, spec.ff_width, true),
                    ff2: Dense::new(store, rng, &format!("{n}.ff2"), spec.ff_width, d, true),
                    norm2: LayerNorm::new(store, &format!("{n}.norm2"), d),
                }
            })
            .collect();
        Ok(Self { spec: spec.clone(), input_width, proj, layers })
    }

    /// `x: [B, C, T]` with `C = input_width`.
    pub fn forward<R: Real>(&self, f: &mut Forward<R>, x: Var) -> Result<EncoderOutput> {
        let xs = f.tape.shape(x).to_vec();
        if xs.len() != 3 || xs[1] != self.input_width {
            return Err(Error::Shape(format!("encoder expects [B, {}, T], got {xs:?}", self.input_width)));
        }
        let s = self.spec.attn_downsample;
        let pooled = if s > 1 { f.tape.maxpool1d(x, s, s, Padding::Same)? } else { x };
        let (b, l) = (xs[0], f.tape.shape(pooled)[2]);
        let d = self.spec.d_model;
        let seq = f.tape.permute(pooled, &[0, 2, 1])?;
        let h = self.proj.forward(f, seq)?;
        let pe = Tensor::new(vec![l, d], positional_encoding(l, d).into_iter().map(R::of).collect())?;
        let mut h = f.tape.add_const(h, &pe)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a, w) = self.attend(f, layer, h, b, l)?;
            attention.push(w);
            let a = f.dropout(a, self.spec.dropout)?;
            let r = f.tape.add(h, a)?;
            h = layer.norm1.forward(f, r)?;
            let u = layer.ff1.forward(f, h)?;
            let u = f.tape.relu(u);
            let u = layer.ff2.forward(f, u)?;
            let u = f.dropout(u, self.spec.dropout)?;
            let r = f.tape.add(h, u)?;
            h = layer.norm2.forward(f, r)?;
        }
        Ok(EncoderOutput { sequence: h, attention })
    }

    fn split_heads<R: Real>(&self, f: &mut Forward<R>, x: Var, b: usize, l: usize) -> Result<Var> {
        let (hn, dh) = (self.spec.heads, self.spec.d_model / self.spec.heads);
        let x = f.tape.reshape(x, &[b, l, hn, dh])?;
        let x = f.tape.permute(x, &[0, 2, 1, 3])?;
        f.tape.reshape(x, &[b * hn, l, dh])
    }

    fn attend<R: Real>(&self, f: &mut Forward<R>, layer: &EncoderLayer, h: Var, b: usize, l: usize) -> Result<(Var, Var)> {
        let (hn, d) = (self.spec.heads, self.spec.d_model);
        let dh = d / hn;
        let q = layer.q.forward(f, h)?;
        let k = layer.k.forward(f, h)?;
        let v = layer.v.forward(f, h)?;
        let q = self.split_heads(f, q, b, l)?;
        let k = self.split_heads(f, k, b, l)?;
        let v = self.split_heads(f, v, b, l)?;
        let kt = f.tape.permute(k, &[0, 2, 1])?;
        let scores = f.tape.matmul(q, kt)?;
        let scores = f.tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let w = f.tape.softmax(scores, 1.0)?;
        let ctx = f.tape.matmul(w, v)?;
        let ctx = f.tape.reshape(ctx, &[b, hn, l, dh])?;
        let ctx = f.tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = f.tape.reshape(ctx, &[b, l, d])?;
        Ok((layer.o.forward(f, ctx)?, w))
    }

    pub fn flops(&self, t: usize, out: &mut Vec<LayerFlops>) {
        let s = self.spec.attn_downsample;
        let l = self.spec.output_len(t);
        let (d, hn, ff) = (self.spec.d_model as u64, self.spec.heads as u64, self.spec.ff_width as u64);
        let lu = l as u64;
        if s > 1 {
            out.push(LayerFlops { name: "encoder.pool".into(), flops: (self.input_width * l) as u64 });
        }
        out.push(LayerFlops { name: "encoder.proj".into(), flops: self.proj.flops(l) });
        out.push(LayerFlops { name: "encoder.posenc".into(), flops: lu * d });
        for (i, layer) in self.layers.iter().enumerate() {
            let n = format!("encoder.layer{i}");
            let dh = d / hn;
            let attn = layer.q.flops(l) + layer.k.flops(l) + layer.v.flops(l) + layer.o.flops(l)
                + 2 * hn * lu * lu * dh // scores
                + hn * lu * lu // scaling
                + hn * lu * lu // softmax
                + 2 * hn * lu * lu * dh; // weights · values
            out.push(LayerFlops { name: format!("{n}.attention"), flops: attn });
            out.push(LayerFlops { name: format!("{n}.add_norm1"), flops: 2 * lu * d });
            let ffn = layer.ff1.flops(l) + lu * ff + layer.ff2.flops(l);
            out.push(LayerFlops { name: format!("{n}.feed_forward"), flops: ffn });
            out.push(LayerFlops { name: format!("{n}.add_norm2"), flops: 2 * lu * d });
        }
    }
}
