//! End-to-end acceptance checks. Every test pins its tolerances inline and
//! prints a single PASS line with the measured values on success; a failed
//! assertion marks the criterion FAIL.

use std::collections::HashSet;
use std::process::Command;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;

use dialaug::augment::{
    apply_mix, augment_batch, conmix_batch, sample_mix_mask, AugKind, AugmentationSpec, MixMask,
};
use dialaug::corpus::{
    build_vocab, make_batches, tokenize_context, Batch, Dialogue, TokenSequence, Vocab,
};
use dialaug::encoder::{encode, init_params, EncoderConfig, EncoderParams};
use dialaug::harness::{
    adam_step, build_eval_set, evaluate, generate_synthetic, gold_rank, loss_and_grads,
    metrics_from_scores, robustness_suite, train, AdamState, Model, TrainConfig,
};
use dialaug::objective::{contrastive_loss, ranking_ce_loss, BatchEmbeddings, LossConfig};
use dialaug::perturb::{PerturbKind, PerturbationSpec};
use dialaug::seeding;

fn pass(name: &str, details: &str) {
    println!("PASS {name}: {details}");
}

fn letters_context(vocab: &Vocab, len: usize, rng: &mut impl Rng) -> TokenSequence {
    let letters = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];
    // CLS + (len - 4) words + EOT + one word + EOT fills `len` exactly.
    let words: Vec<&str> = (0..len - 4)
        .map(|_| letters[rng.gen_range(0..letters.len())])
        .collect();
    let turns = vec![words.join(" "), "k".to_string()];
    tokenize_context(&turns, vocab, len).unwrap()
}

fn letters_vocab() -> Vocab {
    let d = Dialogue {
        id: "v".into(),
        turns: vec!["a b c d e f g h i j k".into()],
        response: "a".into(),
    };
    build_vocab(std::slice::from_ref(&d), 1).unwrap()
}

fn letters_batch(b: usize, len: usize, seed: u64) -> (Vocab, Batch) {
    let v = letters_vocab();
    let mut rng = seeding::rng_for(seed, &[50]);
    let contexts: Vec<TokenSequence> = (0..b).map(|_| letters_context(&v, len, &mut rng)).collect();
    let responses = contexts.clone();
    (
        v,
        Batch {
            contexts,
            responses,
            aug_contexts: Vec::new(),
            partner: Vec::new(),
        },
    )
}

#[test]
fn mixing_replacement_statistics() {
    let t0 = Instant::now();
    let lambda = 0.7;
    let v = letters_vocab();

    // Replacement fraction over >= 10^4 unprotected positions.
    let mut rng = seeding::rng_for(0, &[51]);
    let mut unprotected = 0usize;
    let mut replaced = 0usize;
    while unprotected < 10_000 {
        let seq = letters_context(&v, 40, &mut rng);
        let mask = sample_mix_mask(&seq, lambda, &mut rng).unwrap();
        for p in 0..seq.len() {
            if !seq.protected[p] {
                unprotected += 1;
                if !mask.bits[p] {
                    replaced += 1;
                }
            }
        }
    }
    let fraction = replaced as f64 / unprotected as f64;
    assert!(
        (fraction - 0.30).abs() <= 0.02,
        "replacement fraction {fraction}"
    );

    // Special positions survive in every one of 10^3 seeded trials.
    for trial in 0..1000u64 {
        let (_, batch) = letters_batch(8, 24, trial);
        let mut trial_rng = seeding::rng_for(trial, &[52]);
        let out = conmix_batch(batch, lambda, &mut trial_rng).unwrap();
        for i in 0..out.size() {
            let ci = &out.contexts[i];
            let aug = &out.aug_contexts[i];
            for p in 0..ci.len() {
                if ci.protected[p] {
                    assert_eq!(aug.ids[p], ci.ids[p], "trial {trial} row {i} pos {p}");
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 5.0, "took {secs:.2}s");
    pass(
        "mixing_replacement_statistics",
        &format!("fraction {fraction:.4} over {unprotected} positions, {secs:.2}s"),
    );
}

#[test]
fn elementwise_mixing_formula() {
    let t0 = Instant::now();
    let v = letters_vocab();
    let mut rng = seeding::rng_for(1, &[53]);
    let len = 20;

    let check = |bits: Vec<bool>, ci: &TokenSequence, cj: &TokenSequence| {
        let mask = MixMask {
            bits,
            lambda_mix: 0.7,
        };
        let out = apply_mix(ci, cj, &mask);
        for p in 0..len {
            let want = if mask.bits[p] { ci.ids[p] } else { cj.ids[p] };
            assert_eq!(out.ids[p], want, "pos {p}");
        }
    };

    for _ in 0..1000 {
        // Full-length sequences: no PAD, so the pure formula applies at
        // every position.
        let ci = letters_context(&v, len, &mut rng);
        let cj = letters_context(&v, len, &mut rng);
        let bits: Vec<bool> = (0..len)
            .map(|p| ci.protected[p] || rng.gen_bool(0.5))
            .collect();
        check(bits, &ci, &cj);
    }

    // Extremes: identity and full partner-copy on unprotected positions.
    let ci = letters_context(&v, len, &mut rng);
    let cj = letters_context(&v, len, &mut rng);
    check(vec![true; len], &ci, &cj);
    check(ci.protected.clone(), &ci, &cj);

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 5.0, "took {secs:.2}s");
    pass(
        "elementwise_mixing_formula",
        &format!("1002 cases exact, {secs:.2}s"),
    );
}

fn random_embeds(b: usize, d: usize, p: usize, seed: u64) -> BatchEmbeddings {
    let mut rng = seeding::rng_for(seed, &[54]);
    let mut mk = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0));
    BatchEmbeddings {
        ctx: mk(b, d),
        aug: mk(b, d),
        resp: mk(b, d),
        z_ctx: mk(b, p),
        z_aug: mk(b, p),
        z_resp: mk(b, p),
    }
}

/// Exhaustive enumeration of every anchor/positive term and denominator.
#[allow(clippy::needless_range_loop)]
fn enumerated_contrastive(e: &BatchEmbeddings, tau: f64) -> f64 {
    let b = e.z_ctx.nrows();
    let views = [&e.z_ctx, &e.z_aug, &e.z_resp];
    let mut total = 0.0;
    let mut terms = 0usize;
    for i in 0..b {
        for (pa, pb) in [(0usize, 1usize), (0, 2), (1, 2)] {
            for (a, p) in [(pa, pb), (pb, pa)] {
                let anchor = views[a].row(i);
                let num = (anchor.dot(&views[p].row(i)) / tau).exp();
                let mut denom = 0.0;
                for k in 0..b {
                    if k != i {
                        for q in 0..3 {
                            denom += (anchor.dot(&views[q].row(k)) / tau).exp();
                        }
                    }
                }
                total -= (num / denom).ln();
                terms += 1;
            }
        }
    }
    total / terms as f64
}

#[test]
fn loss_value_oracles() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for b in [2usize, 3, 4] {
        for p in [2usize, 8] {
            for tau in [0.1, 0.5, 1.0] {
                let e = random_embeds(b, 4, p, (b * 100 + p * 10) as u64);
                let (got, _) = contrastive_loss(&e, tau).unwrap();
                let want = enumerated_contrastive(&e, tau);
                let rel = (got - want).abs() / want.abs().max(1e-12);
                worst = worst.max(rel);
                cases += 1;
                assert!(rel < 1e-8, "B={b} p={p} tau={tau}: rel err {rel}");
            }
        }
    }

    // Two identical projected rows in every view: each positive ties with
    // exactly three denominator entries, so every term is ln 3.
    let z = Array2::from_shape_fn((2, 4), |(_, j)| j as f64 / 3.0);
    let sym = BatchEmbeddings {
        ctx: Array2::zeros((2, 4)),
        aug: Array2::zeros((2, 4)),
        resp: Array2::zeros((2, 4)),
        z_ctx: z.clone(),
        z_aug: z.clone(),
        z_resp: z,
    };
    let (ln3, _) = contrastive_loss(&sym, 0.5).unwrap();
    assert!((ln3 - 3f64.ln()).abs() <= 1e-9, "got {ln3}");

    for b in [2usize, 3, 8] {
        let uniform = BatchEmbeddings {
            ctx: Array2::zeros((b, 4)),
            aug: Array2::zeros((b, 4)),
            resp: Array2::zeros((b, 4)),
            z_ctx: Array2::zeros((b, 2)),
            z_aug: Array2::zeros((b, 2)),
            z_resp: Array2::zeros((b, 2)),
        };
        let (ce, _) = ranking_ce_loss(&uniform).unwrap();
        assert!((ce - (b as f64).ln()).abs() <= 1e-9, "B={b}: got {ce}");
    }

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 10.0, "took {secs:.2}s");
    pass(
        "loss_value_oracles",
        &format!("{cases} enumerated cases, worst rel err {worst:.2e}, {secs:.2}s"),
    );
}

#[test]
fn end_to_end_gradient_check() {
    let t0 = Instant::now();
    let (ds, _) = generate_synthetic(24, 3);
    let vocab = build_vocab(&ds, 1).unwrap();
    let enc = EncoderConfig {
        vocab_size: vocab.size(),
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ffn: 12,
        max_len: 28,
        dropout: 0.0,
        proj_dim: 4,
        seed: 5,
    };
    let loss_cfg = LossConfig {
        tau: 0.5,
        lambda_cl: 0.5,
    };

    let batches = make_batches(&ds, &vocab, 3, 28, 12, 1).unwrap();
    let mut aug_rng = seeding::rng_for(2, &[55]);
    let spec = AugmentationSpec {
        kind: AugKind::ConMix,
        rate: 0.7,
        seed: 2,
    };
    let batch = augment_batch(batches[0].clone(), &spec, &vocab, &mut aug_rng).unwrap();

    let params = init_params(&enc).unwrap();
    let (_, grads) = loss_and_grads(&batch, &params, &enc, &loss_cfg, false, None).unwrap();
    let flat = params.to_flat();
    let gflat = grads.to_flat();

    let probe = |flat: &[f64]| -> f64 {
        let p = EncoderParams::from_flat(&enc, flat).unwrap();
        loss_and_grads(&batch, &p, &enc, &loss_cfg, false, None)
            .unwrap()
            .0
            .total
    };

    let eps = 1e-4;
    let mut rng = seeding::rng_for(7, &[56]);
    let mut max_rel: f64 = 0.0;
    let n_coords = 120;
    for _ in 0..n_coords {
        let i = rng.gen_range(0..flat.len());
        let mut plus = flat.clone();
        plus[i] += eps;
        let mut minus = flat.clone();
        minus[i] -= eps;
        let fd = (probe(&plus) - probe(&minus)) / (2.0 * eps);
        let denom = fd.abs().max(gflat[i].abs()).max(1e-5);
        max_rel = max_rel.max((fd - gflat[i]).abs() / denom);
    }
    assert!(max_rel < 1e-4, "max relative error {max_rel}");

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 60.0, "took {secs:.2}s");
    pass(
        "end_to_end_gradient_check",
        &format!("{n_coords} coordinates, max rel err {max_rel:.2e}, {secs:.2}s"),
    );
}

#[test]
fn ranking_metric_oracles() {
    let t0 = Instant::now();
    let mut rng = seeding::rng_for(9, &[57]);
    let mut score_lists = Vec::new();
    let mut golds = Vec::new();
    for _ in 0..1000 {
        let n = rng.gen_range(4..20);
        // Coarse score grid so ties occur and exercise index tie-breaking.
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64 / 5.0).collect();
        golds.push(rng.gen_range(0..n));
        score_lists.push(scores);
    }
    let ks = [1usize, 2, 3, 4];
    let report = metrics_from_scores(&score_lists, &golds, &ks, "clean").unwrap();

    // Independent sort-based oracle.
    let mut rr = 0.0;
    let mut hits = [0usize; 4];
    for (scores, &gold) in score_lists.iter().zip(&golds) {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let rank = order.iter().position(|&i| i == gold).unwrap() + 1;
        assert_eq!(rank, gold_rank(scores, gold));
        rr += 1.0 / rank as f64;
        for (ki, &k) in ks.iter().enumerate() {
            if rank <= k {
                hits[ki] += 1;
            }
        }
    }
    let n = score_lists.len() as f64;
    assert_eq!(report.mrr, rr / n);
    let mut prev = 0.0;
    for (ki, &k) in ks.iter().enumerate() {
        let got = report.recall_at(k).unwrap();
        assert_eq!(got, hits[ki] as f64 / n);
        assert!(got >= prev, "recall not monotone at k={k}");
        prev = got;
    }

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 5.0, "took {secs:.2}s");
    pass(
        "ranking_metric_oracles",
        &format!("1000 records exact, mrr {:.4}, {secs:.2}s", report.mrr),
    );
}

fn tiny_train_config(kind: AugKind, rate: f64, lambda_cl: f64, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: 20,
        batch_size: 32,
        lr: 2e-3,
        seed,
        augmentation: AugmentationSpec { kind, rate, seed },
        encoder: EncoderConfig {
            d_model: 32,
            n_layers: 1,
            n_heads: 2,
            d_ffn: 64,
            dropout: 0.1,
            proj_dim: 32,
            ..EncoderConfig::default()
        },
        ..TrainConfig::default()
    };
    cfg.loss.lambda_cl = lambda_cl;
    cfg
}

#[test]
fn training_sanity_synthetic() {
    let t0 = Instant::now();
    let (train_ds, _) = generate_synthetic(1000, 42);
    let (test_ds, _) = generate_synthetic(300, 43);
    let cfg = tiny_train_config(AugKind::None, 0.0, 0.5, 7);

    let out = train(&train_ds, &cfg).unwrap();
    let out2 = train(&train_ds, &cfg).unwrap();
    assert_eq!(
        out.model.params.to_flat(),
        out2.model.params.to_flat(),
        "same-seed runs diverged"
    );

    let eval_set = build_eval_set(&test_ds, 50, 1).unwrap();
    let trained = evaluate(&eval_set, &out.model, &[1, 5]).unwrap();
    let untrained_model = Model {
        params: init_params(&out.model.encoder).unwrap(),
        ..out.model.clone()
    };
    let untrained = evaluate(&eval_set, &untrained_model, &[1, 5]).unwrap();

    let r1 = trained.recall_at(1).unwrap();
    let r1_untrained = untrained.recall_at(1).unwrap();
    assert!(r1 >= 0.6, "trained recall@1 {r1}");
    assert!(
        r1 > r1_untrained,
        "trained {r1} vs untrained {r1_untrained}"
    );

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 900.0, "took {secs:.1}s");
    pass(
        "training_sanity_synthetic",
        &format!("recall@1 {r1:.3} (untrained {r1_untrained:.3}), {secs:.1}s"),
    );
}

#[test]
fn augmentation_improves_noisy_recall() {
    let t0 = Instant::now();
    let (train_ds, table) = generate_synthetic(1000, 42);
    let (test_ds, _) = generate_synthetic(300, 43);
    let eval_set = build_eval_set(&test_ds, 50, 1).unwrap();
    let specs = vec![
        {
            let mut s = PerturbationSpec::new(PerturbKind::Synonym, 5);
            s.synonym_table = Some(table);
            s
        },
        PerturbationSpec::new(PerturbKind::Typo, 5),
    ];

    // Mean recall@1 on clean / synonym / typo sets over 3 seeds per system.
    let mut means = Vec::new();
    for (kind, rate, lambda) in [(AugKind::None, 0.0, 0.0), (AugKind::ConMix, 0.7, 0.5)] {
        let mut sums = [0.0f64; 3];
        for seed in [11u64, 12, 13] {
            let cfg = tiny_train_config(kind, rate, lambda, seed);
            let out = train(&train_ds, &cfg).unwrap();
            let reports = robustness_suite(&eval_set, &out.model, &specs, &[1]).unwrap();
            for (slot, r) in reports.iter().enumerate() {
                sums[slot] += r.recall_at(1).unwrap();
            }
        }
        means.push(sums.map(|s| s / 3.0));
    }
    let (baseline, mixed) = (means[0], means[1]);

    assert!(
        mixed[1] > baseline[1],
        "synonym: mixed {:.3} vs baseline {:.3}",
        mixed[1],
        baseline[1]
    );
    assert!(
        mixed[2] > baseline[2],
        "typo: mixed {:.3} vs baseline {:.3}",
        mixed[2],
        baseline[2]
    );
    // Clean performance may not drop by more than 2 points absolute.
    assert!(
        mixed[0] >= baseline[0] - 0.02,
        "clean: mixed {:.3} vs baseline {:.3}",
        mixed[0],
        baseline[0]
    );

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 3600.0, "took {secs:.1}s");
    pass(
        "augmentation_improves_noisy_recall",
        &format!(
            "clean {:.3}/{:.3}, synonym {:.3}/{:.3}, typo {:.3}/{:.3} (mixed/baseline), {secs:.1}s",
            mixed[0], baseline[0], mixed[1], baseline[1], mixed[2], baseline[2]
        ),
    );
}

/// Independent single-view trainer: one softmax cross-entropy over the
/// batch's responses, its own Adam loop, no augmented view and no
/// projection head anywhere.
fn reference_single_view_losses(
    dialogues: &[Dialogue],
    cfg: &TrainConfig,
    steps: usize,
) -> Vec<f64> {
    let vocab = build_vocab(dialogues, cfg.min_freq).unwrap();
    let ctx_lens: Vec<usize> = dialogues
        .iter()
        .map(|d| dialaug::corpus::encoded_context_len(&d.turns))
        .collect();
    let resp_lens: Vec<usize> = dialogues
        .iter()
        .map(|d| dialaug::corpus::encoded_context_len(std::slice::from_ref(&d.response)))
        .collect();
    let max_ctx = dialaug::corpus::percentile_max_len(&ctx_lens, 0.95)
        .unwrap()
        .max(3);
    let max_resp = dialaug::corpus::percentile_max_len(&resp_lens, 0.95)
        .unwrap()
        .max(3);

    let mut enc = cfg.encoder;
    enc.vocab_size = vocab.size();
    enc.max_len = max_ctx.max(max_resp);
    enc.seed = cfg.seed;

    let params = init_params(&enc).unwrap();
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len());
    let mut losses = Vec::with_capacity(steps);

    let batches = make_batches(
        dialogues,
        &vocab,
        cfg.batch_size,
        max_ctx,
        max_resp,
        seeding::derive_seed(cfg.seed, &[1, 0]),
    )
    .unwrap();
    for batch in batches.into_iter().take(steps) {
        let params = EncoderParams::from_flat(&enc, &flat).unwrap();
        let b = batch.size();
        let d = enc.d_model;
        let mut ctx = Array2::zeros((b, d));
        let mut resp = Array2::zeros((b, d));
        let mut ctx_caches = Vec::new();
        let mut resp_caches = Vec::new();
        for i in 0..b {
            let (c, cache) = encode(&batch.contexts[i], &params, &enc, false, None).unwrap();
            ctx.row_mut(i).assign(&c);
            ctx_caches.push(cache);
            let (r, cache) = encode(&batch.responses[i], &params, &enc, false, None).unwrap();
            resp.row_mut(i).assign(&r);
            resp_caches.push(cache);
        }
        let scores = ctx.dot(&resp.t());
        let mut loss = 0.0;
        let mut dscores = Array2::zeros((b, b));
        for i in 0..b {
            let row = scores.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            loss += sum.ln() + max - row[i];
            for k in 0..b {
                dscores[[i, k]] = (exps[k] / sum - if k == i { 1.0 } else { 0.0 }) / b as f64;
            }
        }
        loss /= b as f64;
        losses.push(loss);

        let d_ctx = dscores.dot(&resp);
        let d_resp = dscores.t().dot(&ctx);
        let mut grads = EncoderParams::zeros(&enc);
        for i in 0..b {
            let gc: Array1<f64> = d_ctx.row(i).to_owned();
            dialaug::encoder::backward(&gc, &ctx_caches[i], &params, &enc, &mut grads).unwrap();
            let gr: Array1<f64> = d_resp.row(i).to_owned();
            dialaug::encoder::backward(&gr, &resp_caches[i], &params, &enc, &mut grads).unwrap();
        }
        adam_step(
            &mut flat,
            &grads.to_flat(),
            &mut adam,
            cfg.lr,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
        )
        .unwrap();
    }
    losses
}

#[test]
fn plain_dual_encoder_degeneracy() {
    let (ds, _) = generate_synthetic(320, 21);
    let mut cfg = tiny_train_config(AugKind::None, 0.0, 0.0, 3);
    cfg.epochs = 1;
    cfg.encoder.dropout = 0.0;

    let out = train(&ds, &cfg).unwrap();
    let reference = reference_single_view_losses(&ds, &cfg, 10);
    assert_eq!(out.step_losses.len(), 10);

    let mut worst: f64 = 0.0;
    for (step, (&got, &want)) in out.step_losses.iter().zip(&reference).enumerate() {
        let diff = (got - want).abs();
        worst = worst.max(diff);
        assert!(diff < 1e-6, "step {step}: {got} vs {want}");
    }
    pass(
        "plain_dual_encoder_degeneracy",
        &format!("10 steps, max per-step loss gap {worst:.2e}"),
    );
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_dialaug"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .expect("spawn cli");
    assert!(status.success(), "dialaug {args:?} failed");
}

#[test]
fn cli_byte_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();

    let config = dir.path().join("train.cfg");
    std::fs::write(
        &config,
        "epochs = 2\nbatch_size = 16\nd_model = 8\nn_layers = 1\nn_heads = 2\nd_ffn = 12\n\
         dropout = 0.0\nproj_dim = 4\nseed = 4\naug_kind = conmix\naug_rate = 0.7\n",
    )
    .unwrap();
    let cfg_path = config.to_string_lossy().into_owned();

    // (output file, subcommand argv) per run; inputs come from run "a".
    let runs: Vec<(String, Vec<String>)> = ["a", "b"]
        .iter()
        .flat_map(|tag| {
            let out = |name: &str| p(&format!("{name}.{tag}"));
            vec![
                (
                    out("data.jsonl"),
                    vec![
                        "gen-synthetic".into(),
                        "--n".into(),
                        "80".into(),
                        "--seed".into(),
                        "3".into(),
                        "--out".into(),
                        out("data.jsonl"),
                        "--synonyms-out".into(),
                        out("syn.tsv"),
                    ],
                ),
                (
                    out("vocab.txt"),
                    vec![
                        "build-vocab".into(),
                        "--data".into(),
                        p("data.jsonl.a"),
                        "--min-freq".into(),
                        "1".into(),
                        "--out".into(),
                        out("vocab.txt"),
                    ],
                ),
                (
                    out("aug.jsonl"),
                    vec![
                        "augment".into(),
                        "--data".into(),
                        p("data.jsonl.a"),
                        "--kind".into(),
                        "conmix".into(),
                        "--rate".into(),
                        "0.7".into(),
                        "--seed".into(),
                        "5".into(),
                        "--vocab".into(),
                        p("vocab.txt.a"),
                        "--batch-size".into(),
                        "16".into(),
                        "--max-len".into(),
                        "32".into(),
                        "--out".into(),
                        out("aug.jsonl"),
                    ],
                ),
                (
                    out("pert.jsonl"),
                    vec![
                        "perturb".into(),
                        "--data".into(),
                        p("data.jsonl.a"),
                        "--kind".into(),
                        "typo".into(),
                        "--seed".into(),
                        "5".into(),
                        "--out".into(),
                        out("pert.jsonl"),
                    ],
                ),
                (
                    out("syn-pert.jsonl"),
                    vec![
                        "perturb".into(),
                        "--data".into(),
                        p("data.jsonl.a"),
                        "--kind".into(),
                        "synonym".into(),
                        "--synonyms".into(),
                        p("syn.tsv.a"),
                        "--seed".into(),
                        "5".into(),
                        "--out".into(),
                        out("syn-pert.jsonl"),
                    ],
                ),
                (
                    out("ckpt.json"),
                    vec![
                        "train".into(),
                        "--data".into(),
                        p("data.jsonl.a"),
                        "--config".into(),
                        cfg_path.clone(),
                        "--out".into(),
                        out("ckpt.json"),
                    ],
                ),
                (
                    out("metrics.json"),
                    vec![
                        "eval".into(),
                        "--data".into(),
                        p("data.jsonl.a"),
                        "--ckpt".into(),
                        p("ckpt.json.a"),
                        "--candidates".into(),
                        "10".into(),
                        "--ks".into(),
                        "1,5".into(),
                        "--seed".into(),
                        "2".into(),
                        "--out".into(),
                        out("metrics.json"),
                    ],
                ),
            ]
        })
        .collect();

    for (_, argv) in &runs {
        let args: Vec<&str> = argv.iter().map(|s| s.as_str()).collect();
        run_cli(&args);
    }

    let mut checked = HashSet::new();
    for name in [
        "data.jsonl",
        "syn.tsv",
        "vocab.txt",
        "aug.jsonl",
        "pert.jsonl",
        "syn-pert.jsonl",
        "ckpt.json",
        "metrics.json",
    ] {
        let a = std::fs::read(p(&format!("{name}.a"))).unwrap();
        let b = std::fs::read(p(&format!("{name}.b"))).unwrap();
        assert!(!a.is_empty(), "{name} empty");
        assert_eq!(a, b, "{name} differs between identical runs");
        checked.insert(name);
    }

    // The augmented output carries the extra context field.
    let aug = std::fs::read_to_string(p("aug.jsonl.a")).unwrap();
    assert!(aug.lines().all(|l| l.contains("\"aug_context\"")));

    pass(
        "cli_byte_determinism",
        &format!(
            "{} output files byte-identical across two runs",
            checked.len()
        ),
    );
}
