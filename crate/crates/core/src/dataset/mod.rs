//! Corpus container, on-disk formats, sampling and statistics.

mod multiwoz;
mod native;
mod stats;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Dialogue;
use crate::rng;

pub use multiwoz::{emit_multiwoz, parse_multiwoz, to_multiwoz, MultiWozDialogue, MultiWozEntry};
pub use native::{emit_native, parse_native, parse_native_line, to_native_line};
pub use stats::{compute_stats, StatsReport};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub contexts: usize,
    pub pairs: usize,
    pub chosen: usize,
    pub reached_end: usize,
    pub stalled: usize,
    /// Contexts left unexpanded, moved to the results.
    #[serde(default)]
    pub unextended: usize,
    pub working_set: usize,
}

/// Where a mixed corpus's parts came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartInfo {
    pub source: String,
    pub fraction: f64,
    pub seed: u64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetadata {
    pub domain: String,
    pub model_hash: String,
    pub grammar_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<crate::synthesizer::SynthesisParams>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iterations: Vec<IterationStats>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<PartInfo>,
    /// Dialogues produced before sampling.
    pub synthesized: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DialogueCorpus {
    pub dialogues: Vec<Dialogue>,
    pub metadata: CorpusMetadata,
}

impl DialogueCorpus {
    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("malformed MultiWOZ document: {0}")]
    MultiWoz(String),
    #[error("sampling fraction {0} is outside [0, 1]")]
    Fraction(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Keeps `round(fraction * n)` dialogues chosen uniformly without
/// replacement, in their original order.
pub fn sample_corpus(
    corpus: &DialogueCorpus,
    fraction: f64,
    seed: u64,
) -> Result<DialogueCorpus, DatasetError> {
    if !(0.0..=1.0).contains(&fraction) || fraction.is_nan() {
        return Err(DatasetError::Fraction(fraction));
    }
    let n = corpus.dialogues.len();
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut r = rng::stream(seed, &[rng::TAG_ORDER]);
    let keep = crate::expander::subsample(&mut r, n, k);
    Ok(DialogueCorpus {
        dialogues: keep.into_iter().map(|i| corpus.dialogues[i].clone()).collect(),
        metadata: corpus.metadata.clone(),
    })
}

/// Concatenates samples of several corpora. A later id that collides with an
/// earlier one is prefixed with its part index, as in `p1-SYN-restaurant-000001`.
pub fn mix(
    parts: &[(&DialogueCorpus, f64, u64)],
    sources: &[String],
) -> Result<DialogueCorpus, DatasetError> {
    let mut out = DialogueCorpus::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut domains: Vec<String> = Vec::new();
    for (i, (corpus, fraction, seed)) in parts.iter().enumerate() {
        let sampled = sample_corpus(corpus, *fraction, *seed)?;
        out.metadata.parts.push(PartInfo {
            source: sources.get(i).cloned().unwrap_or_else(|| format!("part{i}")),
            fraction: *fraction,
            seed: *seed,
            count: sampled.dialogues.len(),
        });
        if !corpus.metadata.domain.is_empty() && !domains.contains(&corpus.metadata.domain) {
            domains.push(corpus.metadata.domain.clone());
        }
        for mut d in sampled.dialogues {
            if seen.contains(&d.id) {
                let mut id = format!("p{i}-{}", d.id);
                let mut n = 1;
                while seen.contains(&id) {
                    id = format!("p{i}.{n}-{}", d.id);
                    n += 1;
                }
                d.id = id;
            }
            seen.insert(d.id.clone());
            out.dialogues.push(d);
        }
    }
    out.metadata.domain = domains.join("+");
    out.metadata.synthesized = out.dialogues.len();
    Ok(out)
}
