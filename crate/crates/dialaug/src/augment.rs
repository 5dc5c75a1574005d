//! Training-time context augmentations: ConMix batch mixing plus four
//! baselines (subsequence, deletion, reordering, replacement).
//!
//! Every op is a deterministic function of (input, rng state). CLS, EOT and
//! PAD positions of the input are never overwritten.

use rand::Rng;

use crate::corpus::{Batch, TokenSequence, Vocab, CLS_ID, DEL_ID, EOT_ID, PAD_ID};
use crate::error::{Error, Result};

/// Binary keep-mask for ConMix. `bits[p] = true` keeps the original token.
#[derive(Debug, Clone)]
pub struct MixMask {
    pub bits: Vec<bool>,
    pub lambda_mix: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugKind {
    ConMix,
    Subsequence,
    Deletion,
    Reordering,
    Replacement,
    None,
}

impl std::str::FromStr for AugKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "conmix" => AugKind::ConMix,
            "subsequence" => AugKind::Subsequence,
            "deletion" => AugKind::Deletion,
            "reordering" => AugKind::Reordering,
            "replacement" => AugKind::Replacement,
            "none" => AugKind::None,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown augmentation kind {other:?}"
                )))
            }
        })
    }
}

impl std::fmt::Display for AugKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AugKind::ConMix => "conmix",
            AugKind::Subsequence => "subsequence",
            AugKind::Deletion => "deletion",
            AugKind::Reordering => "reordering",
            AugKind::Replacement => "replacement",
            AugKind::None => "none",
        };
        f.write_str(s)
    }
}

/// Which augmentation to apply and at what rate. For conmix the rate is the
/// mixing coefficient lambda_mix in (0.5, 1]; for the others a fraction in
/// [0, 1].
#[derive(Debug, Clone, Copy)]
pub struct AugmentationSpec {
    pub kind: AugKind,
    pub rate: f64,
    pub seed: u64,
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            AugKind::ConMix => {
                if !(self.rate > 0.5 && self.rate <= 1.0) {
                    return Err(Error::MixCoefficientOutOfRange);
                }
            }
            AugKind::None => {}
            _ => {
                if !(0.0..=1.0).contains(&self.rate) {
                    return Err(Error::InvalidConfig(format!(
                        "rate {} outside [0, 1]",
                        self.rate
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sample a Bernoulli(lambda_mix) keep-mask; protected positions are
/// forced to 1 so CLS/EOT/PAD always survive the mixing.
pub fn sample_mix_mask(
    seq: &TokenSequence,
    lambda_mix: f64,
    rng: &mut impl Rng,
) -> Result<MixMask> {
    if !(lambda_mix > 0.5 && lambda_mix <= 1.0) {
        return Err(Error::MixCoefficientOutOfRange);
    }
    let bits = seq
        .protected
        .iter()
        .map(|&prot| prot || rng.gen_bool(lambda_mix))
        .collect();
    Ok(MixMask { bits, lambda_mix })
}

/// Elementwise mixing: keep `ci[p]` where the mask is set, otherwise take
/// `cj[p]`. Positions where the partner holds PAD but `ci` does not are
/// kept from `ci`, so `true_len` is preserved.
pub fn apply_mix(ci: &TokenSequence, cj: &TokenSequence, mask: &MixMask) -> TokenSequence {
    debug_assert_eq!(ci.len(), cj.len());
    debug_assert_eq!(ci.len(), mask.bits.len());
    let ids: Vec<u32> = (0..ci.len())
        .map(|p| {
            if mask.bits[p] || cj.ids[p] == PAD_ID {
                ci.ids[p]
            } else {
                cj.ids[p]
            }
        })
        .collect();
    let protected = ids
        .iter()
        .map(|&id| id == CLS_ID || id == EOT_ID || id == PAD_ID)
        .collect();
    TokenSequence {
        ids,
        protected,
        true_len: ci.true_len,
    }
}

/// ConMix over a whole batch: each row gets a uniformly drawn partner
/// j != i and a fresh Bernoulli keep-mask, then mixes per `apply_mix`.
pub fn conmix_batch(mut batch: Batch, lambda_mix: f64, rng: &mut impl Rng) -> Result<Batch> {
    let b = batch.size();
    if b < 2 {
        return Err(Error::NoMixingPartner);
    }
    let mut aug = Vec::with_capacity(b);
    let mut partner = Vec::with_capacity(b);
    for i in 0..b {
        let mut j = rng.gen_range(0..b - 1);
        if j >= i {
            j += 1;
        }
        let mask = sample_mix_mask(&batch.contexts[i], lambda_mix, rng)?;
        aug.push(apply_mix(&batch.contexts[i], &batch.contexts[j], &mask));
        partner.push(j);
    }
    batch.aug_contexts = aug;
    batch.partner = partner;
    Ok(batch)
}

/// Keep the last k turns, k uniform in 1..=T, re-prepend CLS and re-pad.
pub fn subsequence_sample(seq: &TokenSequence, rng: &mut impl Rng) -> TokenSequence {
    let turns = seq.turns();
    let t = turns.len().max(1);
    let k = rng.gen_range(1..=t);
    let mut ids = vec![CLS_ID];
    for turn in &turns[turns.len() - k..] {
        ids.extend_from_slice(turn);
        ids.push(EOT_ID);
    }
    TokenSequence::from_content(ids, seq.len())
}

/// Replace each unprotected token with [DEL] with probability `rate`, then
/// merge consecutive [DEL] tokens into one and re-pad at the tail.
pub fn word_delete(seq: &TokenSequence, rate: f64, rng: &mut impl Rng) -> TokenSequence {
    let replaced: Vec<u32> = seq
        .content()
        .iter()
        .enumerate()
        .map(|(p, &id)| {
            if !seq.protected[p] && rng.gen_bool(rate) {
                DEL_ID
            } else {
                id
            }
        })
        .collect();
    let mut merged: Vec<u32> = Vec::with_capacity(replaced.len());
    for id in replaced {
        if id == DEL_ID && merged.last() == Some(&DEL_ID) {
            continue;
        }
        merged.push(id);
    }
    TokenSequence::from_content(merged, seq.len())
}

/// Swap floor(rate * U / 2) disjoint pairs of unprotected positions, where
/// U is the unprotected count. The token multiset is unchanged.
pub fn word_reorder(seq: &TokenSequence, rate: f64, rng: &mut impl Rng) -> TokenSequence {
    let mut positions: Vec<usize> = (0..seq.true_len).filter(|&p| !seq.protected[p]).collect();
    let n_pairs = ((rate * positions.len() as f64) / 2.0).floor() as usize;
    // Partial Fisher-Yates: the first 2*n_pairs entries are a uniform
    // disjoint sample.
    let mut ids = seq.ids.clone();
    for s in 0..(2 * n_pairs).min(positions.len()) {
        let r = rng.gen_range(s..positions.len());
        positions.swap(s, r);
    }
    for pair in positions[..2 * n_pairs].chunks_exact(2) {
        ids.swap(pair[0], pair[1]);
    }
    TokenSequence {
        ids,
        protected: seq.protected.clone(),
        true_len: seq.true_len,
    }
}

/// Replace each unprotected token with probability `rate` by a token drawn
/// uniformly from the non-reserved vocabulary.
pub fn word_replace(
    seq: &TokenSequence,
    rate: f64,
    vocab: &Vocab,
    rng: &mut impl Rng,
) -> Result<TokenSequence> {
    let pool = vocab.content_ids();
    if pool.is_empty() {
        return Err(Error::InvalidInput(
            "vocab has no non-reserved entries".into(),
        ));
    }
    let ids: Vec<u32> = seq
        .ids
        .iter()
        .enumerate()
        .map(|(p, &id)| {
            if p < seq.true_len && !seq.protected[p] && rng.gen_bool(rate) {
                rng.gen_range(pool.clone())
            } else {
                id
            }
        })
        .collect();
    Ok(TokenSequence {
        ids,
        protected: seq.protected.clone(),
        true_len: seq.true_len,
    })
}

/// Fill `aug_contexts` by dispatching to the spec's kind. Callers pass a
/// fresh per-epoch rng so the same context yields different views across
/// epochs.
pub fn augment_batch(
    batch: Batch,
    spec: &AugmentationSpec,
    vocab: &Vocab,
    rng: &mut impl Rng,
) -> Result<Batch> {
    spec.validate()?;
    match spec.kind {
        AugKind::ConMix => conmix_batch(batch, spec.rate, rng),
        AugKind::None => {
            let mut batch = batch;
            batch.aug_contexts = batch.contexts.clone();
            Ok(batch)
        }
        kind => {
            let mut batch = batch;
            let mut aug = Vec::with_capacity(batch.size());
            for seq in &batch.contexts {
                aug.push(match kind {
                    AugKind::Subsequence => subsequence_sample(seq, rng),
                    AugKind::Deletion => word_delete(seq, spec.rate, rng),
                    AugKind::Reordering => word_reorder(seq, spec.rate, rng),
                    AugKind::Replacement => word_replace(seq, spec.rate, vocab, rng)?,
                    _ => unreachable!(),
                });
            }
            batch.aug_contexts = aug;
            Ok(batch)
        }
    }
}
