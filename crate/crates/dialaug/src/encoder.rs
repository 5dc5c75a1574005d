//! Desk-scale trainable sequence encoder with analytic gradients.
//!
//! A small transformer-style encoder with learned position embeddings and
//! post-layer-norm blocks. Contexts, augmented contexts and responses all
//! go through the single shared parameter set; the CLS (position 0) hidden
//! state is the sequence representation. A 2-layer ReLU projection head
//! maps CLS vectors into the contrastive space during training.
//!
//! PAD positions never influence the output: the forward pass runs over the
//! first `true_len` positions only, which by construction contain no PAD.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::seeding;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub proj_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0, // filled from the vocabulary at train time
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ffn: 128,
            max_len: 64,
            dropout: 0.1,
            proj_dim: 64,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.d_model == 0 || self.n_heads == 0 || self.d_ffn == 0 || self.proj_dim == 0 {
            problems.push("all dims >= 1".to_string());
        }
        if self.vocab_size == 0 {
            problems.push("vocab_size >= 1".to_string());
        }
        if self.max_len == 0 {
            problems.push("max_len >= 1".to_string());
        }
        if self.n_heads > 0 && !self.d_model.is_multiple_of(self.n_heads) {
            problems.push("d_model divisible by n_heads".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push("dropout in [0, 1)".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
}

/// All trainable weights: token/position embeddings, per-layer attention
/// and feed-forward blocks, and the shared projection head. One instance
/// encodes contexts, augmented contexts and responses alike; the same
/// struct doubles as a gradient buffer.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub proj_w1: Array2<f64>,
    pub proj_b1: Array1<f64>,
    pub proj_w2: Array2<f64>,
    pub proj_b2: Array1<f64>,
}

/// Canonical (name, shape) listing of every parameter array.
pub fn array_specs(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.d_model;
    let mut specs = vec![
        ("tok_emb".to_string(), vec![config.vocab_size, d]),
        ("pos_emb".to_string(), vec![config.max_len, d]),
    ];
    for l in 0..config.n_layers {
        for (name, shape) in [
            ("wq", vec![d, d]),
            ("bq", vec![d]),
            ("wk", vec![d, d]),
            ("bk", vec![d]),
            ("wv", vec![d, d]),
            ("bv", vec![d]),
            ("wo", vec![d, d]),
            ("bo", vec![d]),
            ("ln1_gamma", vec![d]),
            ("ln1_beta", vec![d]),
            ("w1", vec![d, config.d_ffn]),
            ("b1", vec![config.d_ffn]),
            ("w2", vec![config.d_ffn, d]),
            ("b2", vec![d]),
            ("ln2_gamma", vec![d]),
            ("ln2_beta", vec![d]),
        ] {
            specs.push((format!("layer{l}.{name}"), shape));
        }
    }
    specs.push(("proj_w1".to_string(), vec![d, d]));
    specs.push(("proj_b1".to_string(), vec![d]));
    specs.push(("proj_w2".to_string(), vec![d, config.proj_dim]));
    specs.push(("proj_b2".to_string(), vec![config.proj_dim]));
    specs
}

impl EncoderParams {
    pub fn zeros(config: &EncoderConfig) -> Self {
        let d = config.d_model;
        let layer = || LayerParams {
            wq: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            wk: Array2::zeros((d, d)),
            bk: Array1::zeros(d),
            wv: Array2::zeros((d, d)),
            bv: Array1::zeros(d),
            wo: Array2::zeros((d, d)),
            bo: Array1::zeros(d),
            ln1_gamma: Array1::zeros(d),
            ln1_beta: Array1::zeros(d),
            w1: Array2::zeros((d, config.d_ffn)),
            b1: Array1::zeros(config.d_ffn),
            w2: Array2::zeros((config.d_ffn, d)),
            b2: Array1::zeros(d),
            ln2_gamma: Array1::zeros(d),
            ln2_beta: Array1::zeros(d),
        };
        EncoderParams {
            tok_emb: Array2::zeros((config.vocab_size, d)),
            pos_emb: Array2::zeros((config.max_len, d)),
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            proj_w1: Array2::zeros((d, d)),
            proj_b1: Array1::zeros(d),
            proj_w2: Array2::zeros((d, config.proj_dim)),
            proj_b2: Array1::zeros(config.proj_dim),
        }
    }

    /// Flatten every array in the canonical `array_specs` order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        flat.extend(self.tok_emb.iter());
        flat.extend(self.pos_emb.iter());
        for l in &self.layers {
            flat.extend(l.wq.iter());
            flat.extend(l.bq.iter());
            flat.extend(l.wk.iter());
            flat.extend(l.bk.iter());
            flat.extend(l.wv.iter());
            flat.extend(l.bv.iter());
            flat.extend(l.wo.iter());
            flat.extend(l.bo.iter());
            flat.extend(l.ln1_gamma.iter());
            flat.extend(l.ln1_beta.iter());
            flat.extend(l.w1.iter());
            flat.extend(l.b1.iter());
            flat.extend(l.w2.iter());
            flat.extend(l.b2.iter());
            flat.extend(l.ln2_gamma.iter());
            flat.extend(l.ln2_beta.iter());
        }
        flat.extend(self.proj_w1.iter());
        flat.extend(self.proj_b1.iter());
        flat.extend(self.proj_w2.iter());
        flat.extend(self.proj_b2.iter());
        flat
    }

    pub fn from_flat(config: &EncoderConfig, flat: &[f64]) -> Result<Self> {
        let expected = n_params(config);
        if flat.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector has {} entries, config implies {expected}",
                flat.len()
            )));
        }
        let mut params = EncoderParams::zeros(config);
        let mut offset = 0;
        params.for_each_array_mut(|_, mut arr| {
            for x in arr.iter_mut() {
                *x = flat[offset];
                offset += 1;
            }
        });
        debug_assert_eq!(offset, expected);
        Ok(params)
    }

    /// Visit every array mutably in the canonical order.
    pub fn for_each_array_mut(
        &mut self,
        mut f: impl FnMut(String, ndarray::ArrayViewMutD<'_, f64>),
    ) {
        f("tok_emb".into(), self.tok_emb.view_mut().into_dyn());
        f("pos_emb".into(), self.pos_emb.view_mut().into_dyn());
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(format!("layer{i}.wq"), l.wq.view_mut().into_dyn());
            f(format!("layer{i}.bq"), l.bq.view_mut().into_dyn());
            f(format!("layer{i}.wk"), l.wk.view_mut().into_dyn());
            f(format!("layer{i}.bk"), l.bk.view_mut().into_dyn());
            f(format!("layer{i}.wv"), l.wv.view_mut().into_dyn());
            f(format!("layer{i}.bv"), l.bv.view_mut().into_dyn());
            f(format!("layer{i}.wo"), l.wo.view_mut().into_dyn());
            f(format!("layer{i}.bo"), l.bo.view_mut().into_dyn());
            f(
                format!("layer{i}.ln1_gamma"),
                l.ln1_gamma.view_mut().into_dyn(),
            );
            f(
                format!("layer{i}.ln1_beta"),
                l.ln1_beta.view_mut().into_dyn(),
            );
            f(format!("layer{i}.w1"), l.w1.view_mut().into_dyn());
            f(format!("layer{i}.b1"), l.b1.view_mut().into_dyn());
            f(format!("layer{i}.w2"), l.w2.view_mut().into_dyn());
            f(format!("layer{i}.b2"), l.b2.view_mut().into_dyn());
            f(
                format!("layer{i}.ln2_gamma"),
                l.ln2_gamma.view_mut().into_dyn(),
            );
            f(
                format!("layer{i}.ln2_beta"),
                l.ln2_beta.view_mut().into_dyn(),
            );
        }
        f("proj_w1".into(), self.proj_w1.view_mut().into_dyn());
        f("proj_b1".into(), self.proj_b1.view_mut().into_dyn());
        f("proj_w2".into(), self.proj_w2.view_mut().into_dyn());
        f("proj_b2".into(), self.proj_b2.view_mut().into_dyn());
    }
}

pub fn n_params(config: &EncoderConfig) -> usize {
    array_specs(config)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

/// Initialize parameters deterministically per config seed. Weights and
/// embeddings are Normal(0, 1/sqrt(fan_in)); biases zero; layer-norm gains
/// one.
pub fn init_params(config: &EncoderConfig) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = seeding::rng_for(config.seed, &[0x1217]);
    let mut params = EncoderParams::zeros(config);

    let fill = |arr: &mut Array2<f64>, fan_in: usize, rng: &mut ChaCha8Rng| {
        let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid std");
        for x in arr.iter_mut() {
            *x = dist.sample(rng);
        }
    };

    let d = config.d_model;
    fill(&mut params.tok_emb, d, &mut rng);
    fill(&mut params.pos_emb, d, &mut rng);
    for l in &mut params.layers {
        fill(&mut l.wq, d, &mut rng);
        fill(&mut l.wk, d, &mut rng);
        fill(&mut l.wv, d, &mut rng);
        fill(&mut l.wo, d, &mut rng);
        fill(&mut l.w1, d, &mut rng);
        fill(&mut l.w2, config.d_ffn, &mut rng);
        l.ln1_gamma.fill(1.0);
        l.ln2_gamma.fill(1.0);
    }
    fill(&mut params.proj_w1, d, &mut rng);
    fill(&mut params.proj_w2, d, &mut rng);
    Ok(params)
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    x_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    drop1: Option<Array2<f64>>,
    ln1: LnCache,
    h: Array2<f64>,
    z1: Array2<f64>,
    r1: Array2<f64>,
    drop2: Option<Array2<f64>>,
    ln2: LnCache,
}

/// Cached activations of one forward pass, consumed by `backward`.
pub struct ForwardCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
}

fn layer_norm(x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut inv_std = Array1::zeros(x.nrows());
    let mut y = Array2::zeros(x.raw_dim());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let mean = row.sum() / d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = istd;
        for j in 0..x.ncols() {
            let xh = (row[j] - mean) * istd;
            xhat[[i, j]] = xh;
            y[[i, j]] = gamma[j] * xh + beta[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gamma: &Array1<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..dy.ncols() {
            let dxh = dy[[i, j]] * gamma[j];
            m1 += dxh;
            m2 += dxh * cache.xhat[[i, j]];
            dgamma[j] += dy[[i, j]] * cache.xhat[[i, j]];
            dbeta[j] += dy[[i, j]];
        }
        m1 /= d;
        m2 /= d;
        for j in 0..dy.ncols() {
            let dxh = dy[[i, j]] * gamma[j];
            dx[[i, j]] = cache.inv_std[i] * (dxh - m1 - cache.xhat[[i, j]] * m2);
        }
    }
    dx
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 - rate;
    let mut mask = Array2::zeros(shape);
    for x in mask.iter_mut() {
        *x = if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 };
    }
    mask
}

/// Encode a sequence to its CLS hidden state. PAD positions are excluded
/// from the computation entirely, so the output is independent of the PAD
/// tail. Dropout is active only in train mode, which then requires an rng.
pub fn encode(
    seq: &TokenSequence,
    params: &EncoderParams,
    config: &EncoderConfig,
    train_mode: bool,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Array1<f64>, ForwardCache)> {
    if seq.len() > config.max_len {
        return Err(Error::InvalidInput(format!(
            "sequence length {} exceeds max_len {}",
            seq.len(),
            config.max_len
        )));
    }
    let ids = seq.content().to_vec();
    if ids.is_empty() {
        return Err(Error::EmptyContext);
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::InvalidInput(format!(
            "token id {bad} out of range for vocab_size {}",
            config.vocab_size
        )));
    }
    let use_dropout = train_mode && config.dropout > 0.0;
    if use_dropout && rng.is_none() {
        return Err(Error::InvalidInput(
            "train-mode dropout requires an rng".into(),
        ));
    }

    let n = ids.len();
    let d = config.d_model;
    let mut x = Array2::zeros((n, d));
    for (p, &id) in ids.iter().enumerate() {
        let row = &params.tok_emb.row(id as usize) + &params.pos_emb.row(p);
        x.row_mut(p).assign(&row);
    }

    let dk = config.d_head();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut layers = Vec::with_capacity(config.n_layers);
    for lp in &params.layers {
        let x_in = x.clone();
        let q = &x.dot(&lp.wq) + &lp.bq;
        let k = &x.dot(&lp.wk) + &lp.bk;
        let v = &x.dot(&lp.wv) + &lp.bv;

        let mut ctx = Array2::zeros((n, d));
        let mut attn = Vec::with_capacity(config.n_heads);
        for h in 0..config.n_heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let scores = qh.dot(&kh.t()) * scale;
            let a = softmax_rows(&scores);
            ctx.slice_mut(cols).assign(&a.dot(&vh));
            attn.push(a);
        }
        let o = &ctx.dot(&lp.wo) + &lp.bo;
        let (o_dropped, drop1) = if use_dropout {
            let mask = dropout_mask((n, d), config.dropout, rng.as_deref_mut().unwrap());
            (&o * &mask, Some(mask))
        } else {
            (o, None)
        };
        let res1 = &x_in + &o_dropped;
        let (h_out, ln1) = layer_norm(&res1, &lp.ln1_gamma, &lp.ln1_beta);

        let z1 = &h_out.dot(&lp.w1) + &lp.b1;
        let r1 = z1.mapv(|v| v.max(0.0));
        let z2 = &r1.dot(&lp.w2) + &lp.b2;
        let (z2_dropped, drop2) = if use_dropout {
            let mask = dropout_mask((n, d), config.dropout, rng.as_deref_mut().unwrap());
            (&z2 * &mask, Some(mask))
        } else {
            (z2, None)
        };
        let res2 = &h_out + &z2_dropped;
        let (y, ln2) = layer_norm(&res2, &lp.ln2_gamma, &lp.ln2_beta);

        layers.push(LayerCache {
            x_in,
            q,
            k,
            v,
            attn,
            ctx,
            drop1,
            ln1,
            h: h_out,
            z1,
            r1,
            drop2,
            ln2,
        });
        x = y;
    }

    let cls = x.row(0).to_owned();
    Ok((cls, ForwardCache { ids, layers }))
}

/// Gradients of everything reachable from the CLS output, accumulated into
/// `grads` (same shapes as `EncoderParams`).
pub fn backward(
    d_cls: &Array1<f64>,
    cache: &ForwardCache,
    params: &EncoderParams,
    config: &EncoderConfig,
    grads: &mut EncoderParams,
) -> Result<()> {
    let n = cache.ids.len();
    let d = config.d_model;
    if d_cls.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "d_cls length {} vs d_model {d}",
            d_cls.len()
        )));
    }
    if cache.layers.len() != params.layers.len() {
        return Err(Error::ShapeMismatch("cache does not match params".into()));
    }
    let mut dy = Array2::zeros((n, d));
    dy.row_mut(0).assign(d_cls);

    let dk = config.d_head();
    let scale = 1.0 / (dk as f64).sqrt();
    for (lc, (lp, lg)) in cache
        .layers
        .iter()
        .zip(params.layers.iter().zip(grads.layers.iter_mut()))
        .rev()
    {
        let dres2 = layer_norm_backward(
            &dy,
            &lc.ln2,
            &lp.ln2_gamma,
            &mut lg.ln2_gamma,
            &mut lg.ln2_beta,
        );
        let mut dh = dres2.clone();
        let dz2 = match &lc.drop2 {
            Some(mask) => &dres2 * mask,
            None => dres2,
        };
        lg.w2 += &lc.r1.t().dot(&dz2);
        lg.b2 += &dz2.sum_axis(Axis(0));
        let dr1 = dz2.dot(&lp.w2.t());
        let dz1 = &dr1 * &lc.z1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        lg.w1 += &lc.h.t().dot(&dz1);
        lg.b1 += &dz1.sum_axis(Axis(0));
        dh += &dz1.dot(&lp.w1.t());

        let dres1 = layer_norm_backward(
            &dh,
            &lc.ln1,
            &lp.ln1_gamma,
            &mut lg.ln1_gamma,
            &mut lg.ln1_beta,
        );
        let mut dx = dres1.clone();
        let do_ = match &lc.drop1 {
            Some(mask) => &dres1 * mask,
            None => dres1,
        };
        let dctx = do_.dot(&lp.wo.t());
        lg.wo += &lc.ctx.t().dot(&do_);
        lg.bo += &do_.sum_axis(Axis(0));

        let mut dq = Array2::zeros((n, d));
        let mut dkm = Array2::zeros((n, d));
        let mut dv = Array2::zeros((n, d));
        for h in 0..config.n_heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let a = &lc.attn[h];
            let qh = lc.q.slice(cols);
            let kh = lc.k.slice(cols);
            let vh = lc.v.slice(cols);
            let dctx_h = dctx.slice(cols);

            let da = dctx_h.dot(&vh.t());
            dv.slice_mut(cols).assign(&a.t().dot(&dctx_h));

            // Softmax backward per row: ds = a * (da - sum(da * a)).
            let mut ds = Array2::zeros((n, n));
            for i in 0..n {
                let dot: f64 = (0..n).map(|j| da[[i, j]] * a[[i, j]]).sum();
                for j in 0..n {
                    ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot) * scale;
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&kh));
            dkm.slice_mut(cols).assign(&ds.t().dot(&qh));
        }
        dx += &dq.dot(&lp.wq.t());
        dx += &dkm.dot(&lp.wk.t());
        dx += &dv.dot(&lp.wv.t());
        lg.wq += &lc.x_in.t().dot(&dq);
        lg.bq += &dq.sum_axis(Axis(0));
        lg.wk += &lc.x_in.t().dot(&dkm);
        lg.bk += &dkm.sum_axis(Axis(0));
        lg.wv += &lc.x_in.t().dot(&dv);
        lg.bv += &dv.sum_axis(Axis(0));

        dy = dx;
    }

    for (p, &id) in cache.ids.iter().enumerate() {
        let row = dy.row(p);
        grads
            .tok_emb
            .row_mut(id as usize)
            .zip_mut_with(&row, |g, &d| *g += d);
        grads.pos_emb.row_mut(p).zip_mut_with(&row, |g, &d| *g += d);
    }
    Ok(())
}

/// Cached projection activations.
pub struct ProjCache {
    input: Array1<f64>,
    z1: Array1<f64>,
}

/// Projection head: W2 . relu(W1 . cls + b1) + b2. Used only by the
/// contrastive loss during training and discarded at inference.
pub fn project(cls: &Array1<f64>, params: &EncoderParams) -> Result<(Array1<f64>, ProjCache)> {
    if cls.len() != params.proj_w1.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "cls length {} vs projection input {}",
            cls.len(),
            params.proj_w1.nrows()
        )));
    }
    let z1 = &cls.dot(&params.proj_w1) + &params.proj_b1;
    let r = z1.mapv(|v| v.max(0.0));
    let z = &r.dot(&params.proj_w2) + &params.proj_b2;
    Ok((
        z,
        ProjCache {
            input: cls.clone(),
            z1,
        },
    ))
}

/// Backprop through the projection head; returns the gradient w.r.t. the
/// CLS input and accumulates head parameter gradients.
pub fn project_backward(
    d_z: &Array1<f64>,
    cache: &ProjCache,
    params: &EncoderParams,
    grads: &mut EncoderParams,
) -> Array1<f64> {
    let r = cache.z1.mapv(|v| v.max(0.0));
    // z = r . W2 + b2
    for (i, &ri) in r.iter().enumerate() {
        grads
            .proj_w2
            .row_mut(i)
            .zip_mut_with(d_z, |g, &dz| *g += ri * dz);
    }
    grads.proj_b2 += d_z;
    let dr = params.proj_w2.dot(d_z);
    let dz1 = &dr * &cache.z1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    for (i, &xi) in cache.input.iter().enumerate() {
        grads
            .proj_w1
            .row_mut(i)
            .zip_mut_with(&dz1, |g, &dz| *g += xi * dz);
    }
    grads.proj_b1 += &dz1;
    params.proj_w1.dot(&dz1)
}
