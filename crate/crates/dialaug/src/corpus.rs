//! Corpus ingestion: dialogues, vocabulary, tokenization, and batching.
//!
//! Tokenization is whitespace + lowercasing over a word-level vocabulary.
//! Encoded contexts follow the layout `[CLS, w.., EOT, w.., EOT, ..]` with
//! one EOT terminating each turn, padded with PAD to a fixed length.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

pub const CLS_ID: u32 = 0;
pub const EOT_ID: u32 = 1;
pub const PAD_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const DEL_ID: u32 = 4;
pub const NUM_RESERVED: u32 = 5;

/// Reserved token strings, index = id.
pub const RESERVED_TOKENS: [&str; 5] = ["[CLS]", "[EOT]", "[PAD]", "[UNK]", "[DEL]"];

/// One dialogue: ordered context turns plus the gold next response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    #[serde(rename = "context")]
    pub turns: Vec<String>,
    pub response: String,
}

/// Word-level vocabulary with fixed reserved ids.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

/// Lowercased whitespace tokens of a string.
pub fn split_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

impl Vocab {
    /// Number of entries including the five reserved tokens.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id_for(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token_for(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    /// Ids of all non-reserved entries, ascending.
    pub fn content_ids(&self) -> std::ops::Range<u32> {
        NUM_RESERVED..self.size() as u32
    }

    /// Build from an explicit id-ordered token list; the first five entries
    /// must be the reserved tokens.
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_RESERVED as usize {
            return Err(Error::InvalidInput(
                "token list missing reserved tokens".into(),
            ));
        }
        for (i, want) in RESERVED_TOKENS.iter().enumerate() {
            if tokens[i] != *want {
                return Err(Error::InvalidInput(format!(
                    "token list entry {i} is {:?}, expected {want:?}",
                    tokens[i]
                )));
            }
        }
        Self::from_tokens(tokens)
    }

    /// Id-ordered token list, inverse of `from_token_list`.
    pub fn token_list(&self) -> &[String] {
        &self.id_to_token
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if token_to_id.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate vocab token {tok:?}"
                )));
            }
        }
        Ok(Vocab {
            token_to_id,
            id_to_token: tokens,
        })
    }

    /// Save as plain text, one token per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for tok in &self.id_to_token {
            writeln!(w, "{tok}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let tokens: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        Self::from_token_list(tokens)
    }
}

/// Build a vocabulary from a dialogue stream. Tokens with corpus frequency
/// of at least `min_freq` get an id; ordering is frequency descending, then
/// lexicographic, after the five reserved tokens.
pub fn build_vocab<'a>(
    dialogues: impl IntoIterator<Item = &'a Dialogue>,
    min_freq: usize,
) -> Result<Vocab> {
    if min_freq < 1 {
        return Err(Error::InvalidConfig("min_freq must be >= 1".into()));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    let mut saw_any = false;
    for d in dialogues {
        saw_any = true;
        for text in d.turns.iter().chain(std::iter::once(&d.response)) {
            for w in split_words(text) {
                *freq.entry(w).or_insert(0) += 1;
            }
        }
    }
    if !saw_any {
        return Err(Error::EmptyCorpus);
    }
    let mut pairs: Vec<(String, usize)> =
        freq.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(pairs.into_iter().map(|(w, _)| w));
    Vocab::from_tokens(tokens)
}

/// Token ids with CLS/EOT/PAD structure and a protected-position mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// True at CLS, every EOT, and every PAD position.
    pub protected: Vec<bool>,
    /// Count of non-PAD positions.
    pub true_len: usize,
}

impl TokenSequence {
    /// Wrap content ids (no padding yet) and pad with PAD up to `len`.
    /// The protected mask is recomputed from the ids.
    pub fn from_content(mut ids: Vec<u32>, len: usize) -> Self {
        let true_len = ids.len();
        debug_assert!(true_len <= len);
        ids.resize(len, PAD_ID);
        let protected = ids
            .iter()
            .map(|&id| id == CLS_ID || id == EOT_ID || id == PAD_ID)
            .collect();
        TokenSequence {
            ids,
            protected,
            true_len,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Content ids without the PAD tail.
    pub fn content(&self) -> &[u32] {
        &self.ids[..self.true_len]
    }

    /// Number of EOT markers, i.e. retained turns.
    pub fn turn_count(&self) -> usize {
        self.content().iter().filter(|&&id| id == EOT_ID).count()
    }

    /// Word-id slices of each turn (EOT delimited, CLS dropped).
    pub fn turns(&self) -> Vec<Vec<u32>> {
        let mut turns = Vec::new();
        let mut cur = Vec::new();
        for &id in self.content() {
            match id {
                CLS_ID => {}
                EOT_ID => turns.push(std::mem::take(&mut cur)),
                _ => cur.push(id),
            }
        }
        turns
    }
}

/// Tokenize context turns into `[CLS, w.., EOT, .., EOT]` padded to
/// `max_len`. When the encoding exceeds `max_len`, whole earliest turns are
/// dropped first, then the earliest remaining word tokens, always keeping
/// CLS and the final EOT.
pub fn tokenize_context(turns: &[String], vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    if max_len < 3 {
        return Err(Error::InvalidConfig("max_len must be >= 3".into()));
    }
    let mut words: Vec<Vec<String>> = turns.iter().map(|t| split_words(t)).collect();
    if words.is_empty() || words.iter().all(|w| w.is_empty()) {
        return Err(Error::EmptyContext);
    }
    let enc_len = |ws: &[Vec<String>]| 1 + ws.iter().map(|w| w.len() + 1).sum::<usize>();

    let mut start = 0;
    while enc_len(&words[start..]) > max_len && words.len() - start > 1 {
        start += 1;
    }
    words.drain(..start);
    if enc_len(&words) > max_len {
        // Single turn still too long: keep the last max_len - 2 words.
        let keep = max_len - 2;
        let w = &mut words[0];
        let drop = w.len() - keep;
        w.drain(..drop);
    }

    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    for turn in &words {
        ids.extend(turn.iter().map(|w| vocab.id_for(w)));
        ids.push(EOT_ID);
    }
    Ok(TokenSequence::from_content(ids, max_len))
}

/// Tokenize a response as a single-turn context.
pub fn tokenize_response(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    tokenize_context(std::slice::from_ref(&text.to_string()), vocab, max_len)
}

/// Detokenize back into turn strings, dropping CLS/PAD and splitting on EOT.
pub fn detokenize_turns(seq: &TokenSequence, vocab: &Vocab) -> Vec<String> {
    seq.turns()
        .iter()
        .map(|turn| {
            turn.iter()
                .map(|&id| {
                    vocab
                        .token_for(id)
                        .unwrap_or(RESERVED_TOKENS[UNK_ID as usize])
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Unpadded encoded length of a context (CLS + words + one EOT per turn).
pub fn encoded_context_len(turns: &[String]) -> usize {
    1 + turns
        .iter()
        .map(|t| split_words(t).len() + 1)
        .sum::<usize>()
}

/// Nearest-rank percentile: sort ascending, return the element at index
/// ceil(p * N) - 1.
pub fn percentile_max_len(lengths: &[usize], p: f64) -> Result<usize> {
    if lengths.is_empty() {
        return Err(Error::InvalidInput("empty length list".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidConfig("percentile must be in (0, 1]".into()));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let idx = (p * sorted.len() as f64).ceil() as usize - 1;
    Ok(sorted[idx])
}

/// Aligned matrices of context, augmented-context, and response sequences.
/// `aug_contexts` and `partner` stay empty until an augmentation fills them.
#[derive(Debug, Clone)]
pub struct Batch {
    pub contexts: Vec<TokenSequence>,
    pub responses: Vec<TokenSequence>,
    pub aug_contexts: Vec<TokenSequence>,
    /// Mixing partner j(i) per row, set by ConMix.
    pub partner: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.contexts.len()
    }
}

/// Shuffle dialogues deterministically by seed, tokenize, and chunk into
/// fixed-size batches; the final partial batch is dropped.
pub fn make_batches(
    dialogues: &[Dialogue],
    vocab: &Vocab,
    batch_size: usize,
    max_ctx: usize,
    max_resp: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::InvalidConfig("batch_size must be >= 2".into()));
    }
    if dialogues.len() < batch_size {
        return Err(Error::DatasetTooSmall);
    }
    let mut order: Vec<usize> = (0..dialogues.len()).collect();
    order.shuffle(&mut seeding::rng_for(seed, &[0]));

    let mut batches = Vec::with_capacity(dialogues.len() / batch_size);
    for chunk in order.chunks_exact(batch_size) {
        let mut contexts = Vec::with_capacity(batch_size);
        let mut responses = Vec::with_capacity(batch_size);
        for &idx in chunk {
            let d = &dialogues[idx];
            contexts.push(tokenize_context(&d.turns, vocab, max_ctx)?);
            responses.push(tokenize_response(&d.response, vocab, max_resp)?);
        }
        batches.push(Batch {
            contexts,
            responses,
            aug_contexts: Vec::new(),
            partner: Vec::new(),
        });
    }
    Ok(batches)
}

/// Read a JSON-lines dataset: one `{"id", "context", "response"}` per line.
pub fn read_jsonl(path: &Path) -> Result<Vec<Dialogue>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in dialogues {
        serde_json::to_writer(&mut w, d)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
