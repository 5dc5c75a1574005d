//! Training loop (Adam), checkpointing, candidate ranking, Recall@k/MRR
//! evaluation, robustness orchestration, configuration parsing, and a
//! seed-deterministic synthetic corpus generator.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, AugKind, AugmentationSpec};
use crate::corpus::{
    build_vocab, encoded_context_len, make_batches, percentile_max_len, tokenize_context,
    tokenize_response, Batch, Dialogue, Vocab,
};
use crate::encoder::{
    self, encode, init_params, n_params, project, project_backward, EncoderConfig, EncoderParams,
};
use crate::error::{Error, Result};
use crate::objective::{total_loss, BatchEmbeddings, LossConfig};
use crate::perturb::{perturb_dataset, PerturbationSpec, SynonymTable};
use crate::seeding;

/// Percentile of encoded lengths used to fix the context/response max
/// lengths at train time.
pub const LENGTH_PERCENTILE: f64 = 0.95;

// ---------------------------------------------------------------------------
// Adam

/// First/second moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, applied elementwise in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam buffers disagree: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub min_freq: usize,
    pub augmentation: AugmentationSpec,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    /// Where `train` writes the checkpoint, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            min_freq: 1,
            augmentation: AugmentationSpec {
                kind: AugKind::ConMix,
                rate: 0.7,
                seed: 0,
            },
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    // Negated comparisons also reject NaN values.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be >= 2".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("lr must be > 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must be in (0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig("adam_eps must be > 0".into()));
        }
        if self.min_freq < 1 {
            return Err(Error::InvalidConfig("min_freq must be >= 1".into()));
        }
        if !(self.loss.tau > 0.0) {
            return Err(Error::InvalidConfig("tau must be > 0".into()));
        }
        if self.loss.lambda_cl < 0.0 {
            return Err(Error::InvalidConfig("lambda_cl must be >= 0".into()));
        }
        self.augmentation.validate()
    }
}

/// Parse a flat `key = value` config file on top of the defaults. Blank
/// lines and `#` comments are skipped; unknown keys are errors.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("config line {}: expected key = value", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| {
            Error::InvalidConfig(format!(
                "config line {}: bad {what} value {value:?}",
                lineno + 1
            ))
        };
        match key {
            "epochs" => cfg.epochs = value.parse().map_err(|_| bad("epochs"))?,
            "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
            "lr" => cfg.lr = value.parse().map_err(|_| bad("lr"))?,
            "beta1" => cfg.beta1 = value.parse().map_err(|_| bad("beta1"))?,
            "beta2" => cfg.beta2 = value.parse().map_err(|_| bad("beta2"))?,
            "adam_eps" => cfg.adam_eps = value.parse().map_err(|_| bad("adam_eps"))?,
            "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
            "min_freq" => cfg.min_freq = value.parse().map_err(|_| bad("min_freq"))?,
            "aug_kind" => cfg.augmentation.kind = value.parse()?,
            "aug_rate" => cfg.augmentation.rate = value.parse().map_err(|_| bad("aug_rate"))?,
            "lambda_cl" => cfg.loss.lambda_cl = value.parse().map_err(|_| bad("lambda_cl"))?,
            "tau" => cfg.loss.tau = value.parse().map_err(|_| bad("tau"))?,
            "d_model" => cfg.encoder.d_model = value.parse().map_err(|_| bad("d_model"))?,
            "n_layers" => cfg.encoder.n_layers = value.parse().map_err(|_| bad("n_layers"))?,
            "n_heads" => cfg.encoder.n_heads = value.parse().map_err(|_| bad("n_heads"))?,
            "d_ffn" => cfg.encoder.d_ffn = value.parse().map_err(|_| bad("d_ffn"))?,
            "dropout" => cfg.encoder.dropout = value.parse().map_err(|_| bad("dropout"))?,
            "proj_dim" => cfg.encoder.proj_dim = value.parse().map_err(|_| bad("proj_dim"))?,
            "checkpoint" => cfg.checkpoint = Some(PathBuf::from(value)),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "config line {}: unknown key {other:?}",
                    lineno + 1
                )))
            }
        }
    }
    cfg.augmentation.seed = cfg.seed;
    cfg.encoder.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Checkpoint

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Self-describing JSON checkpoint: encoder config, tokenization limits,
/// the id-ordered vocabulary, and every parameter array by name. Loading
/// validates each shape against the config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    pub max_ctx: usize,
    pub max_resp: usize,
    pub vocab: Vec<String>,
    pub tensors: BTreeMap<String, Tensor>,
}

/// A checkpoint unpacked into live structures, ready for scoring.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: EncoderParams,
    pub encoder: EncoderConfig,
    pub vocab: Vocab,
    pub max_ctx: usize,
    pub max_resp: usize,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let mut tensors = BTreeMap::new();
        let mut params = model.params.clone();
        params.for_each_array_mut(|name, arr| {
            tensors.insert(
                name,
                Tensor {
                    shape: arr.shape().to_vec(),
                    data: arr.iter().cloned().collect(),
                },
            );
        });
        Checkpoint {
            encoder: model.encoder,
            max_ctx: model.max_ctx,
            max_resp: model.max_resp,
            vocab: model.vocab.token_list().to_vec(),
            tensors,
        }
    }

    pub fn into_model(self) -> Result<Model> {
        self.encoder.validate()?;
        if self.vocab.len() != self.encoder.vocab_size {
            return Err(Error::ShapeMismatch(format!(
                "vocab has {} entries, config says {}",
                self.vocab.len(),
                self.encoder.vocab_size
            )));
        }
        let specs = encoder::array_specs(&self.encoder);
        if self.tensors.len() != specs.len() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} tensors, config implies {}",
                self.tensors.len(),
                specs.len()
            )));
        }
        for (name, shape) in &specs {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {name:?}")))?;
            if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {name:?} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
        }
        let mut params = EncoderParams::zeros(&self.encoder);
        params.for_each_array_mut(|name, mut arr| {
            for (dst, src) in arr.iter_mut().zip(&self.tensors[&name].data) {
                *dst = *src;
            }
        });
        Ok(Model {
            params,
            encoder: self.encoder,
            vocab: Vocab::from_token_list(self.vocab)?,
            max_ctx: self.max_ctx,
            max_resp: self.max_resp,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        Ok(serde_json::from_reader(r)?)
    }
}

// ---------------------------------------------------------------------------
// Per-batch loss and gradients

/// Per-step loss components.
#[derive(Debug, Clone, Copy)]
pub struct StepLoss {
    pub total: f64,
    pub ce: f64,
    pub cl: f64,
}

/// Forward the batch's contexts, augmented contexts, and responses through
/// the shared encoder, evaluate the combined objective, and backprop into
/// a fresh gradient buffer.
pub fn loss_and_grads(
    batch: &Batch,
    params: &EncoderParams,
    enc_cfg: &EncoderConfig,
    loss_cfg: &LossConfig,
    train_mode: bool,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(StepLoss, EncoderParams)> {
    let b = batch.size();
    if batch.aug_contexts.len() != b || batch.responses.len() != b {
        return Err(Error::InvalidInput(
            "batch is missing augmented contexts".into(),
        ));
    }
    let d = enc_cfg.d_model;
    let p = enc_cfg.proj_dim;

    let encode_group = |seqs: &[crate::corpus::TokenSequence],
                        rng: &mut Option<&mut ChaCha8Rng>|
     -> Result<(Array2<f64>, Array2<f64>, Vec<_>, Vec<_>)> {
        let mut cls = Array2::zeros((b, d));
        let mut z = Array2::zeros((b, p));
        let mut caches = Vec::with_capacity(b);
        let mut proj_caches = Vec::with_capacity(b);
        for (i, seq) in seqs.iter().enumerate() {
            let (c, cache) = encode(seq, params, enc_cfg, train_mode, rng.as_deref_mut())?;
            let (zi, pc) = project(&c, params)?;
            cls.row_mut(i).assign(&c);
            z.row_mut(i).assign(&zi);
            caches.push(cache);
            proj_caches.push(pc);
        }
        Ok((cls, z, caches, proj_caches))
    };

    let (ctx, z_ctx, ctx_caches, ctx_proj) = encode_group(&batch.contexts, &mut dropout_rng)?;
    let (aug, z_aug, aug_caches, aug_proj) = encode_group(&batch.aug_contexts, &mut dropout_rng)?;
    let (resp, z_resp, resp_caches, resp_proj) = encode_group(&batch.responses, &mut dropout_rng)?;

    let embeds = BatchEmbeddings {
        ctx,
        aug,
        resp,
        z_ctx,
        z_aug,
        z_resp,
    };
    let losses = total_loss(&embeds, loss_cfg)?;

    let mut grads = EncoderParams::zeros(enc_cfg);
    let groups = [
        (
            &losses.ranking.d_ctx,
            &losses.contrastive.d_z_ctx,
            &ctx_caches,
            &ctx_proj,
        ),
        (
            &losses.ranking.d_aug,
            &losses.contrastive.d_z_aug,
            &aug_caches,
            &aug_proj,
        ),
        (
            &losses.ranking.d_resp,
            &losses.contrastive.d_z_resp,
            &resp_caches,
            &resp_proj,
        ),
    ];
    for (d_cls_m, d_z_m, caches, proj_caches) in groups {
        for i in 0..b {
            let d_z: Array1<f64> = d_z_m.row(i).to_owned();
            let d_cls_from_proj = project_backward(&d_z, &proj_caches[i], params, &mut grads);
            let d_cls = &d_cls_m.row(i) + &d_cls_from_proj;
            encoder::backward(&d_cls, &caches[i], params, enc_cfg, &mut grads)?;
        }
    }

    Ok((
        StepLoss {
            total: losses.loss,
            ce: losses.ce,
            cl: losses.cl,
        },
        grads,
    ))
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub epoch_mean_losses: Vec<f64>,
    pub step_losses: Vec<f64>,
}

/// Train end to end: per epoch, reshuffle, re-augment with a fresh derived
/// seed, forward/backward the shared encoder, and apply Adam. Writes the
/// checkpoint to `config.checkpoint` if set.
pub fn train(dialogues: &[Dialogue], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let vocab = build_vocab(dialogues, config.min_freq)?;

    let ctx_lens: Vec<usize> = dialogues
        .iter()
        .map(|d| encoded_context_len(&d.turns))
        .collect();
    let resp_lens: Vec<usize> = dialogues
        .iter()
        .map(|d| encoded_context_len(std::slice::from_ref(&d.response)))
        .collect();
    let max_ctx = percentile_max_len(&ctx_lens, LENGTH_PERCENTILE)?.max(3);
    let max_resp = percentile_max_len(&resp_lens, LENGTH_PERCENTILE)?.max(3);

    let mut enc_cfg = config.encoder;
    enc_cfg.vocab_size = vocab.size();
    enc_cfg.max_len = max_ctx.max(max_resp);
    enc_cfg.seed = config.seed;

    let params = init_params(&enc_cfg)?;
    let mut flat = params.to_flat();
    let mut params = params;
    let mut adam = AdamState::new(n_params(&enc_cfg));

    let mut epoch_mean_losses = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::new();
    for epoch in 0..config.epochs {
        let e = epoch as u64;
        let batches = make_batches(
            dialogues,
            &vocab,
            config.batch_size,
            max_ctx,
            max_resp,
            seeding::derive_seed(config.seed, &[1, e]),
        )?;
        let mut aug_rng = seeding::rng_for(config.seed, &[2, e]);
        let mut drop_rng = seeding::rng_for(config.seed, &[3, e]);

        let mut epoch_sum = 0.0;
        let mut n_steps = 0usize;
        for (bi, batch) in batches.into_iter().enumerate() {
            let batch = augment_batch(batch, &config.augmentation, &vocab, &mut aug_rng)?;
            let (loss, grads) = loss_and_grads(
                &batch,
                &params,
                &enc_cfg,
                &config.loss,
                true,
                Some(&mut drop_rng),
            )?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    ce: loss.ce,
                    cl: loss.cl,
                });
            }
            adam_step(
                &mut flat,
                &grads.to_flat(),
                &mut adam,
                config.lr,
                config.beta1,
                config.beta2,
                config.adam_eps,
            )?;
            params = EncoderParams::from_flat(&enc_cfg, &flat)?;
            epoch_sum += loss.total;
            n_steps += 1;
            step_losses.push(loss.total);
        }
        let mean = epoch_sum / n_steps as f64;
        epoch_mean_losses.push(mean);
        log::info!("epoch {epoch}: mean loss {mean:.6}");
    }

    let model = Model {
        params,
        encoder: enc_cfg,
        vocab,
        max_ctx,
        max_resp,
    };
    if let Some(path) = &config.checkpoint {
        Checkpoint::from_model(&model).save(path)?;
    }
    Ok(TrainOutcome {
        model,
        epoch_mean_losses,
        step_losses,
    })
}

// ---------------------------------------------------------------------------
// Ranking and evaluation

/// Score candidates against a context by CLS dot product. The projection
/// head plays no part here.
pub fn rank_candidates(model: &Model, turns: &[String], candidates: &[String]) -> Result<Vec<f64>> {
    if candidates.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 candidates".into()));
    }
    let ctx_seq = tokenize_context(turns, &model.vocab, model.max_ctx)?;
    let (ctx_cls, _) = encode(&ctx_seq, &model.params, &model.encoder, false, None)?;
    candidates
        .iter()
        .map(|cand| {
            let seq = tokenize_response(cand, &model.vocab, model.max_resp)?;
            let (cls, _) = encode(&seq, &model.params, &model.encoder, false, None)?;
            Ok(ctx_cls.dot(&cls))
        })
        .collect()
}

/// One ranking example: a context, a candidate pool with exactly one gold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub turns: Vec<String>,
    pub candidates: Vec<String>,
    pub gold_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: String,
    pub n: usize,
    /// Keyed by the recall cutoff rendered as a string.
    pub recall: BTreeMap<String, f64>,
    pub mrr: f64,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.get(&k.to_string()).copied()
    }
}

/// 1-based rank of the gold candidate; ties broken by candidate index
/// (lower index ranks first).
pub fn gold_rank(scores: &[f64], gold_index: usize) -> usize {
    let gold = scores[gold_index];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > gold || (s == gold && j < gold_index))
        .count()
}

/// Recall@k and MRR from pre-computed score lists; `golds[i]` is the gold
/// index in `score_lists[i]`.
pub fn metrics_from_scores(
    score_lists: &[Vec<f64>],
    golds: &[usize],
    ks: &[usize],
    kind: &str,
) -> Result<MetricsReport> {
    if score_lists.is_empty() || score_lists.len() != golds.len() {
        return Err(Error::InvalidInput(
            "empty or misaligned score lists".into(),
        ));
    }
    if ks.is_empty() {
        return Err(Error::InvalidConfig("ks must be non-empty".into()));
    }
    let min_cands = score_lists.iter().map(|s| s.len()).min().unwrap();
    for &k in ks {
        if k < 1 || k > min_cands {
            return Err(Error::InvalidConfig(format!(
                "recall cutoff {k} outside 1..={min_cands}"
            )));
        }
    }
    let n = score_lists.len();
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    let mut rr_sum = 0.0;
    for (scores, &gold) in score_lists.iter().zip(golds) {
        let rank = gold_rank(scores, gold);
        for (&k, h) in hits.iter_mut() {
            if rank <= k {
                *h += 1;
            }
        }
        rr_sum += 1.0 / rank as f64;
    }
    Ok(MetricsReport {
        kind: kind.to_string(),
        n,
        recall: hits
            .into_iter()
            .map(|(k, h)| (k.to_string(), h as f64 / n as f64))
            .collect(),
        mrr: rr_sum / n as f64,
    })
}

fn evaluate_named(
    records: &[EvalRecord],
    model: &Model,
    ks: &[usize],
    kind: &str,
) -> Result<MetricsReport> {
    let mut score_lists = Vec::with_capacity(records.len());
    let mut golds = Vec::with_capacity(records.len());
    for r in records {
        if r.gold_index >= r.candidates.len() {
            return Err(Error::InvalidInput(format!(
                "record {:?}: gold index {} out of range",
                r.id, r.gold_index
            )));
        }
        score_lists.push(rank_candidates(model, &r.turns, &r.candidates)?);
        golds.push(r.gold_index);
    }
    metrics_from_scores(&score_lists, &golds, ks, kind)
}

/// Recall@k and MRR over an evaluation set; side-effect free on the model.
pub fn evaluate(records: &[EvalRecord], model: &Model, ks: &[usize]) -> Result<MetricsReport> {
    evaluate_named(records, model, ks, "clean")
}

/// Sample an evaluation set: for every dialogue, the gold response plus
/// `n_candidates - 1` distinct negatives drawn uniformly from the pool of
/// other dialogues' distinct responses; gold position randomized.
pub fn build_eval_set(
    dialogues: &[Dialogue],
    n_candidates: usize,
    seed: u64,
) -> Result<Vec<EvalRecord>> {
    if n_candidates < 2 {
        return Err(Error::InvalidConfig("n_candidates must be >= 2".into()));
    }
    let mut seen = HashSet::new();
    let pool: Vec<&String> = dialogues
        .iter()
        .map(|d| &d.response)
        .filter(|r| seen.insert(r.as_str()))
        .collect();
    if pool.len() <= n_candidates {
        return Err(Error::InvalidInput(format!(
            "insufficient distinct responses: {} for {n_candidates} candidates",
            pool.len()
        )));
    }
    dialogues
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut rng = seeding::rng_for(seed, &[4, i as u64]);
            let mut others: Vec<usize> = (0..pool.len())
                .filter(|&j| pool[j] != &d.response)
                .collect();
            // Partial Fisher-Yates: a uniform distinct sample of negatives.
            let need = n_candidates - 1;
            for s in 0..need {
                let r = rng.gen_range(s..others.len());
                others.swap(s, r);
            }
            let mut candidates: Vec<String> =
                others[..need].iter().map(|&j| pool[j].clone()).collect();
            let gold_index = rng.gen_range(0..n_candidates);
            candidates.insert(gold_index, d.response.clone());
            Ok(EvalRecord {
                id: d.id.clone(),
                turns: d.turns.clone(),
                candidates,
                gold_index,
            })
        })
        .collect()
}

/// Evaluate the same records clean and under each perturbation. Only the
/// contexts are perturbed; every report sees the identical candidate pools.
pub fn robustness_suite(
    records: &[EvalRecord],
    model: &Model,
    specs: &[PerturbationSpec],
    ks: &[usize],
) -> Result<Vec<MetricsReport>> {
    let mut reports = vec![evaluate_named(records, model, ks, "clean")?];
    for spec in specs {
        let as_dialogues: Vec<Dialogue> = records
            .iter()
            .map(|r| Dialogue {
                id: r.id.clone(),
                turns: r.turns.clone(),
                response: r.candidates[r.gold_index].clone(),
            })
            .collect();
        let perturbed = perturb_dataset(&as_dialogues, spec)?;
        let perturbed_records: Vec<EvalRecord> = records
            .iter()
            .zip(&perturbed)
            .map(|(r, p)| EvalRecord {
                id: r.id.clone(),
                turns: p.turns.clone(),
                candidates: r.candidates.clone(),
                gold_index: r.gold_index,
            })
            .collect();
        reports.push(evaluate_named(
            &perturbed_records,
            model,
            ks,
            &spec.kind.to_string(),
        )?);
    }
    Ok(reports)
}

pub fn write_metrics(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Bookable item with a one-word synonym; contexts sometimes use the
/// synonym, responses always the canonical form.
const ITEMS: [(&str, &str); 24] = [
    ("taxi", "cab"),
    ("doctor", "physician"),
    ("movie", "film"),
    ("dinner", "supper"),
    ("car", "auto"),
    ("house", "home"),
    ("gift", "present"),
    ("sofa", "couch"),
    ("trip", "journey"),
    ("meeting", "appointment"),
    ("bike", "bicycle"),
    ("phone", "telephone"),
    ("shop", "store"),
    ("song", "tune"),
    ("photo", "picture"),
    ("drink", "beverage"),
    ("bag", "sack"),
    ("road", "street"),
    ("kid", "child"),
    ("coat", "jacket"),
    ("boat", "ship"),
    ("lamp", "light"),
    ("pasta", "noodles"),
    ("cash", "money"),
];

const DAYS: [&str; 7] = [
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
];

const ATTRS: [&str; 6] = ["quick", "late", "early", "cheap", "fancy", "simple"];

/// Fraction of item mentions that use the synonym form in generated
/// contexts. Low but non-zero: both forms land in the vocabulary, yet
/// synonym-heavy inputs stay out-of-distribution.
const SYNONYM_USE_RATE: f64 = 0.05;

/// Deterministic templated booking dialogues over a small slot vocabulary,
/// plus a synonym table mapping each item word to its alternate form (both
/// directions).
pub fn generate_synthetic(n: usize, seed: u64) -> (Vec<Dialogue>, SynonymTable) {
    let mut rng = seeding::rng_for(seed, &[0xC0]);
    let mut dialogues = Vec::with_capacity(n);
    for i in 0..n {
        let (item, syn) = ITEMS[rng.gen_range(0..ITEMS.len())];
        let day = DAYS[rng.gen_range(0..DAYS.len())];
        let attr = ATTRS[rng.gen_range(0..ATTRS.len())];
        let w1 = if rng.gen_bool(SYNONYM_USE_RATE) {
            syn
        } else {
            item
        };
        let w2 = if rng.gen_bool(SYNONYM_USE_RATE) {
            syn
        } else {
            item
        };
        let turns = match rng.gen_range(0..3u8) {
            0 => vec![
                format!("hello i need a {attr} {w1}"),
                "sure which day works for you".to_string(),
                format!("{day} please for the {w2}"),
            ],
            1 => vec![
                format!("hi can you arrange a {attr} {w1}"),
                "of course what day do you prefer".to_string(),
                format!("let us do {day} for the {w2}"),
            ],
            _ => vec![
                format!("good morning i want to book a {attr} {w1}"),
                "happy to help pick a day".to_string(),
                format!("{day} would be great for that {w2}"),
            ],
        };
        dialogues.push(Dialogue {
            id: format!("syn-{i}"),
            turns,
            response: format!("your {item} for {day} is confirmed"),
        });
    }
    let mut table = SynonymTable::new();
    for (item, syn) in ITEMS {
        table.insert(item.to_string(), vec![syn.to_string()]);
        table.insert(syn.to_string(), vec![item.to_string()]);
    }
    (dialogues, table)
}
