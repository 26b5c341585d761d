//! Single-head attention plus a two-layer MLP, with frozen Gaussian weights.
//!
//! A token's feature is `u = x + e(t)` where `e` is a sinusoidal time
//! embedding. Queries come from the chunk being denoised; keys and values
//! come from every earlier chunk in the [`KvCache`] (oldest first) followed
//! by the chunk's own tokens. The velocity is `gain · MLP(attn(u)) + g`.
//!
//! The optional conditioning drift is
//! `g = x + γ (x_f − x_{f−1}) − κ ŷ_f(σ)`, with `ŷ_f(σ) = (1 − w) d_f + w d_{f−1}`
//! and `w = min(1, lag · σ)`. Its residual `g − x` does not move for content
//! that is constant in time, while moving content keeps shifting its target
//! as the lag shrinks.

use rand::Rng;
use serde::{Deserialize, Serialize};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::NoiseSchedule;
use crate::tensor::{Shape, Tensor, TokenMask};

use super::kv::{KvBlock, KvCache, KvRows};
use super::scenario::{rng_for, stream};
use super::{check_mask, EvalContext, FieldKind, SparseVelocity, VelocityField};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyAttentionParams {
    pub channels: usize,
    pub hidden: usize,
    pub mlp_gain: f64,
    pub embed_scale: f64,
    pub max_frequency: f64,
    pub seed: u64,
}

/// Conditioning drift toward the scenario's data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuideParams {
    /// Frames the target trails the data by at `σ = 1`.
    #[serde(default = "default_lag")]
    pub motion_lag: f64,
    /// Weight `γ` of the backward frame difference.
    #[serde(default = "default_temporal_gain")]
    pub temporal_gain: f64,
    /// Weight `κ` of the target.
    #[serde(default = "default_pull")]
    pub pull: f64,
}

fn default_lag() -> f64 {
    1.0
}
fn default_temporal_gain() -> f64 {
    0.4
}
/// Lands a time-constant token exactly on its data when `x = 0` at `σ = 1`.
fn default_pull() -> f64 {
    std::f64::consts::E / (std::f64::consts::E - 1.0)
}

impl Default for GuideParams {
    fn default() -> Self {
        GuideParams {
            motion_lag: default_lag(),
            temporal_gain: default_temporal_gain(),
            pull: default_pull(),
        }
    }
}

#[derive(Debug, Clone)]
struct Guide {
    data: Vec<Tensor>,
    params: GuideParams,
}

#[derive(Debug, Clone)]
pub struct ToyAttention {
    params: ToyAttentionParams,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    guide: Option<Guide>,
}

fn gaussian(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `out = M · x` for row-major `M` with `x.len()` columns.
fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = m[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

impl ToyAttention {
    pub fn new(params: ToyAttentionParams) -> Result<Self> {
        if params.channels == 0 || params.hidden == 0 {
            return Err(Error::invalid("toy attention needs channels >= 1 and hidden >= 1"));
        }
        for (name, v) in [
            ("mlp_gain", params.mlp_gain),
            ("embed_scale", params.embed_scale),
            ("max_frequency", params.max_frequency),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        let c = params.channels;
        let h = params.hidden;
        let mut rng = rng_for(params.seed, stream::FIELD, 0);
        let sc = 1.0 / (c as f64).sqrt();
        let sh = 1.0 / (h as f64).sqrt();
        Ok(ToyAttention {
            wq: gaussian(&mut rng, c * c, sc),
            wk: gaussian(&mut rng, c * c, sc),
            wv: gaussian(&mut rng, c * c, sc),
            w1: gaussian(&mut rng, h * c, sc),
            b1: gaussian(&mut rng, h, 0.1),
            w2: gaussian(&mut rng, c * h, sh),
            b2: gaussian(&mut rng, c, 0.1),
            params,
            guide: None,
        })
    }

    /// Adds the conditioning drift toward `data` (one tensor per chunk).
    pub fn with_guide(mut self, data: Vec<Tensor>, params: GuideParams) -> Result<Self> {
        for (name, v) in [
            ("motion_lag", params.motion_lag),
            ("temporal_gain", params.temporal_gain),
            ("pull", params.pull),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if data.windows(2).any(|w| w[0].shape() != w[1].shape()) {
            return Err(Error::invalid("guide data chunks differ in shape"));
        }
        if data.iter().any(|d| d.shape().channels != self.params.channels) {
            return Err(Error::invalid("guide data channel count differs from the field"));
        }
        self.guide = Some(Guide { data, params });
        Ok(self)
    }

    pub fn params(&self) -> &ToyAttentionParams {
        &self.params
    }

    /// Time embedding at normalised time `s = t / T`; frequencies rise
    /// linearly to `max_frequency` across channel pairs.
    pub fn embedding(&self, t: usize, sched: &NoiseSchedule) -> Vec<f64> {
        let c = self.params.channels;
        let s = t as f64 / sched.total_steps as f64;
        let pairs = c.div_ceil(2);
        (0..c)
            .map(|ch| {
                let k = ch / 2;
                let w = self.params.max_frequency * (k + 1) as f64 / pairs as f64;
                let phase = std::f64::consts::TAU * w * s;
                self.params.embed_scale * if ch % 2 == 0 { phase.sin() } else { phase.cos() }
            })
            .collect()
    }

    fn features(&self, x: &[f64], emb: &[f64]) -> Vec<f64> {
        x.iter().zip(emb).map(|(a, b)| a + b).collect()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().channels != self.params.channels {
            return Err(Error::invalid(format!(
                "toy attention built for {} channels, got {}",
                self.params.channels,
                x.shape().channels
            )));
        }
        Ok(())
    }

    fn project(&self, x: &Tensor, emb: &[f64], tokens: &[usize]) -> KvRows {
        let c = self.params.channels;
        let mut keys = vec![0.0; tokens.len() * c];
        let mut values = vec![0.0; tokens.len() * c];
        for (r, &p) in tokens.iter().enumerate() {
            let u = self.features(x.token(p), emb);
            matvec(&self.wk, &u, &mut keys[r * c..(r + 1) * c]);
            matvec(&self.wv, &u, &mut values[r * c..(r + 1) * c]);
        }
        KvRows {
            tokens: tokens.to_vec(),
            dim: c,
            keys,
            values,
        }
    }

    fn fresh_block(&self, x: &Tensor, emb: &[f64]) -> KvBlock {
        let tokens: Vec<usize> = (0..x.shape().tokens()).collect();
        let rows = self.project(x, emb, &tokens);
        KvBlock::new(tokens.len(), rows.dim, rows.keys, rows.values).expect("rows sized by construction")
    }

    fn context<'a>(&self, ctx: &EvalContext<'a>) -> Result<Vec<&'a KvBlock>> {
        if ctx.chunk == 0 {
            return Ok(Vec::new());
        }
        let kv: &KvCache = ctx
            .kv
            .ok_or_else(|| Error::state(format!("chunk {} needs the kv cache of earlier chunks", ctx.chunk)))?;
        kv.context_for(ctx.chunk)
    }

    /// Target row of token `p`: the data trailing by `lag · σ` frames.
    fn guide_target(&self, guide: &Guide, chunk: usize, shape: Shape, p: usize, sigma: f64, out: &mut [f64]) {
        let hw = shape.tokens_per_frame();
        let (f, q) = (p / hw, p % hw);
        let data = &guide.data[chunk];
        let cur = data.token(p);
        let before = match (f, chunk) {
            (0, 0) => cur,
            (0, i) => guide.data[i - 1].token((shape.frames - 1) * hw + q),
            _ => data.token(p - hw),
        };
        let w = (guide.params.motion_lag * sigma).min(1.0);
        for ((o, a), b) in out.iter_mut().zip(cur).zip(before) {
            *o = (1.0 - w) * a + w * b;
        }
    }

    /// Velocity of one token; shared by the full and sparse paths.
    fn row(
        &self,
        x: &Tensor,
        p: usize,
        emb: &[f64],
        blocks: &[&KvBlock],
        guide: Option<(f64, usize)>,
        out: &mut Vec<f64>,
    ) {
        let c = self.params.channels;
        let h = self.params.hidden;
        let u = self.features(x.token(p), emb);
        let mut q = vec![0.0; c];
        matvec(&self.wq, &u, &mut q);
        let scale = 1.0 / (c as f64).sqrt();

        let mut scores = Vec::with_capacity(blocks.iter().map(|b| b.tokens()).sum());
        for b in blocks {
            for j in 0..b.tokens() {
                scores.push(q.iter().zip(b.key(j)).map(|(a, k)| a * k).sum::<f64>() * scale);
            }
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        let mut o = vec![0.0; c];
        let mut idx = 0;
        for b in blocks {
            for j in 0..b.tokens() {
                let a = scores[idx] / total;
                for (oi, vj) in o.iter_mut().zip(b.value(j)) {
                    *oi += a * vj;
                }
                idx += 1;
            }
        }

        let mut z = vec![0.0; h];
        matvec(&self.w1, &o, &mut z);
        for (zi, bi) in z.iter_mut().zip(&self.b1) {
            *zi = (*zi + bi).tanh();
        }
        let mut y = vec![0.0; c];
        matvec(&self.w2, &z, &mut y);

        let mut target = vec![0.0; c];
        if let (Some(g), Some((sigma, chunk))) = (&self.guide, guide) {
            self.guide_target(g, chunk, x.shape(), p, sigma, &mut target);
        }
        let hw = x.shape().tokens_per_frame();
        let xp = x.token(p);
        let back = (p >= hw).then(|| x.token(p - hw));
        for ch in 0..c {
            let mut v = self.params.mlp_gain * (y[ch] + self.b2[ch]);
            if let (Some(g), Some(_)) = (&self.guide, guide) {
                let diff = back.map_or(0.0, |b| xp[ch] - b[ch]);
                v += xp[ch] + g.params.temporal_gain * diff - g.params.pull * target[ch];
            }
            out.push(v);
        }
    }

    fn guide_args(&self, x: &Tensor, ctx: &EvalContext<'_>) -> Result<Option<(f64, usize)>> {
        match &self.guide {
            None => Ok(None),
            Some(g) => {
                let d = g
                    .data
                    .get(ctx.chunk)
                    .ok_or_else(|| Error::invalid(format!("no guide data for chunk {}", ctx.chunk)))?;
                x.ensure_same_shape(d, "toy attention guide")?;
                Ok(Some((ctx.sched.sigma(ctx.t), ctx.chunk)))
            }
        }
    }

    fn own_block<'b>(&self, x: &Tensor, ctx: &EvalContext<'b>, emb: &[f64], fresh: &'b mut Option<KvBlock>) -> Result<&'b KvBlock> {
        match ctx.own_kv {
            Some(b) => {
                if b.tokens() != x.shape().tokens() || b.dim() != self.params.channels {
                    return Err(Error::invalid("own kv block does not match the chunk"));
                }
                Ok(b)
            }
            None => Ok(fresh.insert(self.fresh_block(x, emb))),
        }
    }
}

impl VelocityField for ToyAttention {
    fn kind(&self) -> FieldKind {
        FieldKind::ToyAttention
    }

    fn eval_full(&self, x: &Tensor, ctx: &EvalContext<'_>) -> Result<Tensor> {
        self.check(x)?;
        let guide = self.guide_args(x, ctx)?;
        let emb = self.embedding(ctx.t, ctx.sched);
        let mut fresh = None;
        let own = self.own_block(x, ctx, &emb, &mut fresh)?;
        let mut blocks = self.context(ctx)?;
        blocks.push(own);
        let mut out = Vec::with_capacity(x.shape().len());
        for p in 0..x.shape().tokens() {
            self.row(x, p, &emb, &blocks, guide, &mut out);
        }
        Tensor::new(x.shape(), out)
    }

    fn eval_sparse(&self, x: &Tensor, ctx: &EvalContext<'_>, mask: &TokenMask) -> Result<SparseVelocity> {
        self.check(x)?;
        let active = check_mask(x, mask)?;
        let guide = self.guide_args(x, ctx)?;
        let emb = self.embedding(ctx.t, ctx.sched);
        let mut fresh = None;
        let own = self.own_block(x, ctx, &emb, &mut fresh)?;
        let mut blocks = self.context(ctx)?;
        blocks.push(own);
        let mut data = Vec::with_capacity(active.len() * self.params.channels);
        for &p in &active {
            self.row(x, p, &emb, &blocks, guide, &mut data);
        }
        Ok(SparseVelocity {
            tokens: active,
            channels: self.params.channels,
            data,
        })
    }

    fn project_kv(&self, x: &Tensor, t: usize, sched: &NoiseSchedule, tokens: &[usize]) -> Option<KvRows> {
        let emb = self.embedding(t, sched);
        Some(self.project(x, &emb, tokens))
    }

    fn uses_kv(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(c: usize) -> ToyAttention {
        ToyAttention::new(ToyAttentionParams {
            channels: c,
            hidden: 6,
            mlp_gain: 1.0,
            embed_scale: 0.5,
            max_frequency: 3.0,
            seed: 11,
        })
        .unwrap()
    }

    fn latent(shape: Shape, salt: f64) -> Tensor {
        Tensor::new(shape, (0..shape.len()).map(|i| ((i as f64) * 0.37 + salt).sin()).collect()).unwrap()
    }

    #[test]
    fn embedding_is_bounded() {
        let f = field(5);
        let sched = NoiseSchedule::new(20, 1).unwrap();
        for t in 0..=20 {
            assert!(f.embedding(t, &sched).iter().all(|e| e.abs() <= 0.5));
        }
    }

    #[test]
    fn later_chunk_without_cache_is_a_state_error() {
        let f = field(4);
        let sched = NoiseSchedule::new(10, 1).unwrap();
        let x = latent(Shape::new(1, 2, 2, 4).unwrap(), 0.0);
        let err = f.eval_full(&x, &EvalContext::new(1, 5, &sched)).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn all_active_sparse_is_bit_identical() {
        let f = field(4);
        let sched = NoiseSchedule::new(10, 2).unwrap();
        let shape = Shape::new(2, 2, 3, 4).unwrap();
        let prev = latent(shape, 1.0);
        let x = latent(shape, 2.0);
        let mut kv = KvCache::new();
        kv.finalize_chunk(0, f.fresh_block(&prev, &f.embedding(0, &sched))).unwrap();
        let ctx = EvalContext::new(1, 4, &sched).with_kv(&kv);
        let full = f.eval_full(&x, &ctx).unwrap();
        let sparse = f.eval_sparse(&x, &ctx, &TokenMask::all(shape.tokens())).unwrap();
        assert_eq!(sparse.data, full.data());
    }

    #[test]
    fn static_content_has_a_time_constant_residual() {
        let shape = Shape::new(3, 1, 2, 4).unwrap();
        let frame: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).cos()).collect();
        let data = Tensor::new(shape, frame.repeat(3)).unwrap();
        let sched = NoiseSchedule::new(10, 1).unwrap();
        let mut p = field(4).params().clone();
        p.mlp_gain = 0.0;
        let g = GuideParams::default();
        let f = ToyAttention::new(p).unwrap().with_guide(vec![data.clone()], g).unwrap();
        let x = latent(Shape::new(1, 1, 2, 4).unwrap(), 0.4);
        let x = Tensor::new(shape, x.data().repeat(3)).unwrap();
        for t in [1, 4, 10] {
            let v = f.eval_full(&x, &EvalContext::new(0, t, &sched)).unwrap();
            for i in 0..shape.len() {
                let r = v.data()[i] - x.data()[i];
                assert!((r + g.pull * data.data()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn target_trails_moving_content() {
        let shape = Shape::new(2, 1, 1, 4).unwrap();
        let data = Tensor::new(shape, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let sched = NoiseSchedule::new(10, 1).unwrap();
        let mut p = field(4).params().clone();
        p.mlp_gain = 0.0;
        let g = GuideParams {
            motion_lag: 1.0,
            temporal_gain: 0.0,
            pull: 1.0,
        };
        let f = ToyAttention::new(p).unwrap().with_guide(vec![data.clone()], g).unwrap();
        let x = Tensor::zeros(shape);
        let v = f.eval_full(&x, &EvalContext::new(0, 3, &sched)).unwrap();
        // w = 0.3: the second frame's target is 0.7 of its data.
        for ch in 0..4 {
            assert_eq!(v.data()[ch], 0.0);
            assert!((v.data()[4 + ch] + 0.7 * (ch + 1) as f64).abs() < 1e-12);
        }
    }

    /// Dense reference written independently of `row`: every key and value
    /// is projected from raw latents, softmax without max-shifting.
    fn dense_row(f: &ToyAttention, context: &[(&Tensor, usize)], x: &Tensor, t: usize, sched: &NoiseSchedule, p: usize) -> Vec<f64> {
        let c = f.params.channels;
        let h = f.params.hidden;
        let lin = |m: &[f64], v: &[f64], rows: usize| -> Vec<f64> {
            (0..rows).map(|r| (0..v.len()).map(|k| m[r * v.len() + k] * v[k]).sum()).collect()
        };
        let feat = |lat: &Tensor, tt: usize, q: usize| -> Vec<f64> {
            let e = f.embedding(tt, sched);
            lat.token(q).iter().zip(&e).map(|(a, b)| a + b).collect()
        };
        let mut keys = Vec::new();
        let mut vals = Vec::new();
        for &(lat, tt) in context.iter().chain(std::iter::once(&(x, t))) {
            for q in 0..lat.shape().tokens() {
                let u = feat(lat, tt, q);
                keys.push(lin(&f.wk, &u, c));
                vals.push(lin(&f.wv, &u, c));
            }
        }
        let q = lin(&f.wq, &feat(x, t, p), c);
        let w: Vec<f64> = keys
            .iter()
            .map(|k| (q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (c as f64).sqrt()).exp())
            .collect();
        let total: f64 = w.iter().sum();
        let o: Vec<f64> = (0..c).map(|ch| w.iter().zip(&vals).map(|(wi, v)| wi * v[ch]).sum::<f64>() / total).collect();
        let z: Vec<f64> = lin(&f.w1, &o, h).iter().zip(&f.b1).map(|(a, b)| (a + b).tanh()).collect();
        lin(&f.w2, &z, c).iter().zip(&f.b2).map(|(a, b)| f.params.mlp_gain * (a + b)).collect()
    }

    fn close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn one_token_chunk_matches_dense_reference() {
        let f = field(4);
        let sched = NoiseSchedule::new(12, 2).unwrap();
        let one = Shape::new(1, 1, 1, 4).unwrap();
        let done = [latent(one, 0.2), latent(one, 0.9)];
        let mut kv = KvCache::new();
        for (i, d) in done.iter().enumerate() {
            let rows = f.project_kv(d, 0, &sched, &[0]).unwrap();
            kv.finalize_chunk(i, KvBlock::new(1, 4, rows.keys, rows.values).unwrap()).unwrap();
        }
        let x = latent(one, 3.1);
        let v = f.eval_full(&x, &EvalContext::new(2, 7, &sched).with_kv(&kv)).unwrap();
        let reference = dense_row(&f, &[(&done[0], 0), (&done[1], 0)], &x, 7, &sched, 0);
        close(v.data(), &reference);
    }

    #[test]
    fn single_active_token_matches_dense_row_when_kv_is_fresh() {
        let f = field(4);
        let sched = NoiseSchedule::new(12, 2).unwrap();
        let shape = Shape::new(2, 2, 2, 4).unwrap();
        let prev = latent(shape, 0.5);
        let mut kv = KvCache::new();
        kv.finalize_chunk(0, f.fresh_block(&prev, &f.embedding(0, &sched))).unwrap();
        let x = latent(shape, 1.7);
        let own = f.fresh_block(&x, &f.embedding(5, &sched));
        let ctx = EvalContext::new(1, 5, &sched).with_kv(&kv).with_own_kv(&own);
        for p in [0, 3, 7] {
            let sparse = f.eval_sparse(&x, &ctx, &TokenMask::from_indices(shape.tokens(), &[p]).unwrap()).unwrap();
            close(&sparse.data, &dense_row(&f, &[(&prev, 0)], &x, 5, &sched, p));
        }
    }

    #[test]
    fn finalized_context_drives_later_chunks() {
        let f = field(4);
        let sched = NoiseSchedule::new(12, 2).unwrap();
        let shape = Shape::new(1, 2, 2, 4).unwrap();
        let x = latent(shape, 2.2);
        let eval = |done: &Tensor| {
            let mut kv = KvCache::new();
            kv.finalize_chunk(0, f.fresh_block(done, &f.embedding(0, &sched))).unwrap();
            f.eval_full(&x, &EvalContext::new(1, 6, &sched).with_kv(&kv)).unwrap()
        };
        let base = latent(shape, 0.1);
        let mut bumped = base.clone();
        bumped.token_mut(2)[1] += 0.5;
        let (a, b) = (eval(&base), eval(&bumped));
        assert!(a.data().iter().zip(b.data()).any(|(p, q)| p != q));
        for p in 0..shape.tokens() {
            close(b.token(p), &dense_row(&f, &[(&bumped, 0)], &x, 6, &sched, p));
        }
    }
}
