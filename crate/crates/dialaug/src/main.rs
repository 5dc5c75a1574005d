use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use dialaug::augment::{augment_batch, AugKind, AugmentationSpec};
use dialaug::corpus::{
    build_vocab, detokenize_turns, read_jsonl, tokenize_context, tokenize_response, write_jsonl,
    Batch, Vocab,
};
use dialaug::harness::{
    build_eval_set, evaluate, generate_synthetic, parse_train_config, train, Checkpoint,
    TrainConfig,
};
use dialaug::perturb::{load_synonym_table, save_synonym_table, PerturbKind, PerturbationSpec};
use dialaug::seeding;

/// Dual-encoder dialogue response ranking with batch-mixing augmentation.
#[derive(Parser)]
#[command(name = "dialaug", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a word-level vocabulary from a JSONL dataset.
    BuildVocab {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Flat key = value config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample an eval set from a dataset and report Recall@k / MRR.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Candidate pool size per context (gold plus sampled negatives).
        #[arg(long, default_value_t = 50)]
        candidates: usize,
        /// Comma-separated recall cutoffs, e.g. 1,5,10.
        #[arg(long, default_value = "1,5")]
        ks: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Augment contexts and write JSONL with an added "aug_context" field.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        vocab: PathBuf,
        /// Rows mixed together per conmix step.
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Padded context length used for tokenization.
        #[arg(long, default_value_t = 64)]
        max_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perturb contexts (test-time noise) and write the dataset back out.
    Perturb {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 0.3)]
        word_rate: f64,
        #[arg(long, default_value_t = 0.1)]
        char_noise: f64,
        /// TSV synonym table, required for kind=synonym.
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic booking corpus.
    GenSynthetic {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the item synonym table as TSV.
        #[arg(long)]
        synonyms_out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct AugmentedRow<'a> {
    id: &'a str,
    context: &'a [String],
    response: &'a str,
    aug_context: Vec<String>,
}

fn parse_ks(ks: &str) -> Result<Vec<usize>> {
    ks.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .with_context(|| format!("bad recall cutoff {s:?}"))
        })
        .collect()
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::BuildVocab {
            data,
            min_freq,
            out,
        } => {
            let dialogues = read_jsonl(&data)?;
            let vocab = build_vocab(&dialogues, min_freq)?;
            vocab.save(&out)?;
            eprintln!("wrote {} tokens to {}", vocab.size(), out.display());
        }
        Cmd::Train { data, config, out } => {
            let dialogues = read_jsonl(&data)?;
            let mut cfg = match config {
                Some(path) => parse_train_config(&std::fs::read_to_string(&path)?)?,
                None => TrainConfig::default(),
            };
            cfg.checkpoint = Some(out.clone());
            let outcome = train(&dialogues, &cfg)?;
            eprintln!(
                "trained {} epochs, final mean loss {:.6}, checkpoint {}",
                cfg.epochs,
                outcome.epoch_mean_losses.last().unwrap(),
                out.display()
            );
        }
        Cmd::Eval {
            data,
            ckpt,
            candidates,
            ks,
            seed,
            out,
        } => {
            let dialogues = read_jsonl(&data)?;
            let model = Checkpoint::load(&ckpt)?.into_model()?;
            let ks = parse_ks(&ks)?;
            let records = build_eval_set(&dialogues, candidates, seed)?;
            let report = evaluate(&records, &model, &ks)?;
            let mut w = BufWriter::new(File::create(&out)?);
            serde_json::to_writer(&mut w, &report)?;
            writeln!(w)?;
            w.flush()?;
            eprintln!("evaluated {} records, mrr {:.4}", report.n, report.mrr);
        }
        Cmd::Augment {
            data,
            kind,
            rate,
            seed,
            vocab,
            batch_size,
            max_len,
            out,
        } => {
            let dialogues = read_jsonl(&data)?;
            let vocab = Vocab::load(&vocab)?;
            let kind: AugKind = kind.parse()?;
            let spec = AugmentationSpec { kind, rate, seed };
            spec.validate()?;
            if batch_size < 2 {
                bail!("batch_size must be >= 2");
            }

            let contexts = dialogues
                .iter()
                .map(|d| tokenize_context(&d.turns, &vocab, max_len))
                .collect::<dialaug::Result<Vec<_>>>()?;
            let responses = dialogues
                .iter()
                .map(|d| tokenize_response(&d.response, &vocab, max_len))
                .collect::<dialaug::Result<Vec<_>>>()?;

            let n = dialogues.len();
            let mut aug_turns: Vec<Vec<String>> = Vec::with_capacity(n);
            let mut rng = seeding::rng_for(seed, &[0]);
            let mut s = 0;
            while s < n {
                let e = (s + batch_size).min(n);
                // conmix needs a partner; widen a trailing singleton window
                // backwards (outputs are still taken from [s, e) only).
                let w = if kind == AugKind::ConMix && e - s < 2 {
                    e.saturating_sub(2)
                } else {
                    s
                };
                let batch = Batch {
                    contexts: contexts[w..e].to_vec(),
                    responses: responses[w..e].to_vec(),
                    aug_contexts: Vec::new(),
                    partner: Vec::new(),
                };
                let batch = augment_batch(batch, &spec, &vocab, &mut rng)?;
                for i in s..e {
                    aug_turns.push(detokenize_turns(&batch.aug_contexts[i - w], &vocab));
                }
                s = e;
            }

            let mut wtr = BufWriter::new(File::create(&out)?);
            for (d, aug) in dialogues.iter().zip(aug_turns) {
                let row = AugmentedRow {
                    id: &d.id,
                    context: &d.turns,
                    response: &d.response,
                    aug_context: aug,
                };
                serde_json::to_writer(&mut wtr, &row)?;
                writeln!(wtr)?;
            }
            wtr.flush()?;
            eprintln!("augmented {n} dialogues to {}", out.display());
        }
        Cmd::Perturb {
            data,
            kind,
            word_rate,
            char_noise,
            synonyms,
            seed,
            out,
        } => {
            let dialogues = read_jsonl(&data)?;
            let kind: PerturbKind = kind.parse()?;
            let spec = PerturbationSpec {
                kind,
                word_rate,
                char_noise,
                synonym_table: synonyms.as_deref().map(load_synonym_table).transpose()?,
                seed,
            };
            let perturbed = dialaug::perturb::perturb_dataset(&dialogues, &spec)?;
            write_jsonl(&out, &perturbed)?;
            eprintln!(
                "perturbed {} dialogues to {}",
                perturbed.len(),
                out.display()
            );
        }
        Cmd::GenSynthetic {
            n,
            seed,
            out,
            synonyms_out,
        } => {
            let (dialogues, table) = generate_synthetic(n, seed);
            write_jsonl(&out, &dialogues)?;
            if let Some(path) = synonyms_out {
                save_synonym_table(&path, &table)?;
            }
            eprintln!("generated {n} dialogues to {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
