//! Test-time perturbation suite: truncation, word deletion, word
//! reordering, typos, and synonym replacement.
//!
//! Unlike the training augmentations, these operate on raw turn text
//! before tokenization. Responses are never modified.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::corpus::Dialogue;
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbKind {
    Truncation,
    Deletion,
    Reordering,
    Typo,
    Synonym,
}

impl std::str::FromStr for PerturbKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "truncation" => PerturbKind::Truncation,
            "deletion" => PerturbKind::Deletion,
            "reordering" => PerturbKind::Reordering,
            "typo" => PerturbKind::Typo,
            "synonym" => PerturbKind::Synonym,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown perturbation kind {other:?}"
                )))
            }
        })
    }
}

impl std::fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PerturbKind::Truncation => "truncation",
            PerturbKind::Deletion => "deletion",
            PerturbKind::Reordering => "reordering",
            PerturbKind::Typo => "typo",
            PerturbKind::Synonym => "synonym",
        };
        f.write_str(s)
    }
}

pub type SynonymTable = BTreeMap<String, Vec<String>>;

/// Load a synonym table from UTF-8 lines of `word<TAB>syn1,syn2,...`.
pub fn load_synonym_table(path: &Path) -> Result<SynonymTable> {
    let r = BufReader::new(File::open(path)?);
    let mut table = SynonymTable::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (word, syns) = line.split_once('\t').ok_or_else(|| {
            Error::InvalidInput(format!("synonym file line {}: missing tab", i + 1))
        })?;
        let syns: Vec<String> = syns
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if syns.is_empty() {
            return Err(Error::InvalidInput(format!(
                "synonym file line {}: no synonyms",
                i + 1
            )));
        }
        table.insert(word.to_string(), syns);
    }
    Ok(table)
}

pub fn save_synonym_table(path: &Path, table: &SynonymTable) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (word, syns) in table {
        writeln!(w, "{word}\t{}", syns.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    pub kind: PerturbKind,
    pub word_rate: f64,
    pub char_noise: f64,
    pub synonym_table: Option<SynonymTable>,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbKind, seed: u64) -> Self {
        PerturbationSpec {
            kind,
            word_rate: 0.3,
            char_noise: 0.1,
            synonym_table: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.word_rate) {
            return Err(Error::InvalidConfig("word_rate outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.char_noise) {
            return Err(Error::InvalidConfig("char_noise outside [0, 1]".into()));
        }
        if self.kind == PerturbKind::Synonym
            && self.synonym_table.as_ref().is_none_or(|t| t.is_empty())
        {
            return Err(Error::SynonymTableRequired);
        }
        Ok(())
    }
}

/// Keep the last k turns, k uniform in 1..=T.
pub fn truncate_context(turns: &[String], rng: &mut impl Rng) -> Vec<String> {
    if turns.is_empty() {
        return Vec::new();
    }
    let k = rng.gen_range(1..=turns.len());
    turns[turns.len() - k..].to_vec()
}

/// Remove each word independently with probability `rate`; words vanish
/// (no placeholder). A turn is never emptied completely: if every word is
/// selected, one survivor is retained uniformly.
pub fn perturb_delete(turns: &[String], rate: f64, rng: &mut impl Rng) -> Vec<String> {
    turns
        .iter()
        .map(|turn| {
            let words: Vec<&str> = turn.split_whitespace().collect();
            if words.is_empty() {
                return turn.clone();
            }
            let keep: Vec<bool> = words.iter().map(|_| !rng.gen_bool(rate)).collect();
            let mut kept: Vec<&str> = words
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(&w, _)| w)
                .collect();
            if kept.is_empty() {
                kept.push(words[rng.gen_range(0..words.len())]);
            }
            kept.join(" ")
        })
        .collect()
}

/// Swap floor(rate * W / 2) disjoint word pairs per turn; each turn's word
/// multiset is preserved.
pub fn perturb_reorder(turns: &[String], rate: f64, rng: &mut impl Rng) -> Vec<String> {
    turns
        .iter()
        .map(|turn| {
            let mut words: Vec<&str> = turn.split_whitespace().collect();
            let n_pairs = ((rate * words.len() as f64) / 2.0).floor() as usize;
            let mut positions: Vec<usize> = (0..words.len()).collect();
            for s in 0..(2 * n_pairs).min(positions.len()) {
                let r = rng.gen_range(s..positions.len());
                positions.swap(s, r);
            }
            for pair in positions[..2 * n_pairs].chunks_exact(2) {
                words.swap(pair[0], pair[1]);
            }
            words.join(" ")
        })
        .collect()
}

/// Apply character noise once: each character is hit independently with
/// probability `char_noise`; a hit applies one of substitute / delete /
/// insert-after / swap-with-next, drawn uniformly. Returns the noised word
/// and the number of hits.
pub fn apply_char_noise(word: &str, char_noise: f64, rng: &mut impl Rng) -> (String, usize) {
    let chars: Vec<char> = word.chars().collect();
    let mut out = String::with_capacity(word.len() + 2);
    let mut edits = 0usize;
    let mut i = 0;
    while i < chars.len() {
        if char_noise > 0.0 && rng.gen_bool(char_noise) {
            edits += 1;
            match rng.gen_range(0..4u8) {
                0 => {
                    out.push(random_letter(rng));
                    i += 1;
                }
                1 => {
                    i += 1; // delete
                }
                2 => {
                    out.push(chars[i]);
                    out.push(random_letter(rng));
                    i += 1;
                }
                _ => {
                    if i + 1 < chars.len() {
                        out.push(chars[i + 1]);
                        out.push(chars[i]);
                        i += 2;
                    } else {
                        out.push(chars[i]);
                        i += 1;
                    }
                }
            }
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    (out, edits)
}

fn random_letter(rng: &mut impl Rng) -> char {
    (b'a' + rng.gen_range(0..26u8)) as char
}

/// Select `word_rate` of the context's words and corrupt each with
/// character-level noise. A selected word is guaranteed to change: the
/// noise is resampled up to 10 times, after which one substitution is
/// forced.
pub fn inject_typos(
    turns: &[String],
    word_rate: f64,
    char_noise: f64,
    rng: &mut impl Rng,
) -> Vec<String> {
    turns
        .iter()
        .map(|turn| {
            let words: Vec<String> = turn
                .split_whitespace()
                .map(|w| {
                    if word_rate > 0.0 && rng.gen_bool(word_rate) {
                        corrupt_word(w, char_noise, rng)
                    } else {
                        w.to_string()
                    }
                })
                .collect();
            words.join(" ")
        })
        .collect()
}

fn corrupt_word(word: &str, char_noise: f64, rng: &mut impl Rng) -> String {
    for _ in 0..10 {
        let (cand, _) = apply_char_noise(word, char_noise, rng);
        if cand != word && !cand.is_empty() {
            return cand;
        }
    }
    // Force one substitution at a random position.
    let mut chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return word.to_string();
    }
    let pos = rng.gen_range(0..chars.len());
    let old = chars[pos];
    loop {
        let c = random_letter(rng);
        if c != old {
            chars[pos] = c;
            break;
        }
    }
    chars.into_iter().collect()
}

/// Among words with a table entry, replace each with probability `rate`
/// by a uniform choice from its synonym list.
pub fn synonym_replace(
    turns: &[String],
    rate: f64,
    table: &SynonymTable,
    rng: &mut impl Rng,
) -> Result<Vec<String>> {
    if table.is_empty() {
        return Err(Error::SynonymTableRequired);
    }
    Ok(turns
        .iter()
        .map(|turn| {
            turn.split_whitespace()
                .map(|w| match table.get(&w.to_lowercase()) {
                    Some(syns) if rate > 0.0 && rng.gen_bool(rate) => {
                        syns[rng.gen_range(0..syns.len())].clone()
                    }
                    _ => w.to_string(),
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect())
}

/// Apply one perturbation kind to every dialogue's context turns.
/// Responses and ordering are untouched; deterministic per spec seed.
pub fn perturb_dataset(dialogues: &[Dialogue], spec: &PerturbationSpec) -> Result<Vec<Dialogue>> {
    spec.validate()?;
    dialogues
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut rng = seeding::rng_for(spec.seed, &[i as u64]);
            let turns = match spec.kind {
                PerturbKind::Truncation => truncate_context(&d.turns, &mut rng),
                PerturbKind::Deletion => perturb_delete(&d.turns, spec.word_rate, &mut rng),
                PerturbKind::Reordering => perturb_reorder(&d.turns, spec.word_rate, &mut rng),
                PerturbKind::Typo => {
                    inject_typos(&d.turns, spec.word_rate, spec.char_noise, &mut rng)
                }
                PerturbKind::Synonym => synonym_replace(
                    &d.turns,
                    spec.word_rate,
                    spec.synonym_table.as_ref().expect("validated above"),
                    &mut rng,
                )?,
            };
            Ok(Dialogue {
                id: d.id.clone(),
                turns,
                response: d.response.clone(),
            })
        })
        .collect()
}
