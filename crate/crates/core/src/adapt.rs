//! Reusing dialogues across domains: adapting a dialogue to a sibling domain
//! by value substitution, and splicing two single-domain dialogues into one
//! multi-domain dialogue.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DialogueCorpus;
use crate::grammar::SemValue;
use crate::model::{ConcreteState, Dialogue, DialogueModel, SlotValue, Turn};
use crate::ontology::{Ontology, OntologyError, SlotKind, SlotSpec};
use crate::rng;

/// What happens to the value of a mapped slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuePolicy {
    /// Keep values the target slot accepts; draw the others.
    #[default]
    IdentityIfShared,
    /// Draw every value from the target slot's pool.
    Draw,
}

/// How slots and values of one domain correspond to another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainMapping {
    pub source: String,
    pub target: String,
    /// Source slot name to target slot name. Slots not listed are unmapped.
    pub slot_map: BTreeMap<String, String>,
    /// Fixed substitutions per source slot, applied before the policy.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub value_map: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    pub value_policy: ValuePolicy,
}

impl DomainMapping {
    /// Maps every slot of `domain` to itself and keeps all values.
    pub fn identity(ontology: &Ontology, domain: &str) -> Result<Self, AdaptError> {
        let spec = ontology.domain(domain)?;
        Ok(DomainMapping {
            source: domain.to_string(),
            target: domain.to_string(),
            slot_map: spec.slots.iter().map(|s| (s.name.clone(), s.name.clone())).collect(),
            value_map: BTreeMap::new(),
            value_policy: ValuePolicy::IdentityIfShared,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdaptError {
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("mapping is for domain `{expected}`, dialogue `{id}` is in `{found}`")]
    WrongDomain {
        id: String,
        expected: String,
        found: String,
    },
    #[error("mapping names slot `{slot}`, which domain `{domain}` lacks")]
    UnknownSlot { slot: String, domain: String },
    #[error("malformed mapping document: {0}")]
    Syntax(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdaptOutcome {
    Adapted(Dialogue),
    /// The dialogue cannot be adapted; the reason names the obstacle.
    Skip(String),
}

pub fn load_mapping(source: &str) -> Result<DomainMapping, AdaptError> {
    serde_json::from_str(source).map_err(|e| AdaptError::Syntax(e.to_string()))
}

fn accepts(spec: &SlotSpec, value: &str) -> bool {
    spec.kind != SlotKind::Categorical || spec.values.iter().any(|v| v == value)
}

/// Single-pass, longest-match, whole-word replacement.
struct Replacer {
    pairs: Vec<(String, String)>,
}

impl Replacer {
    fn new(mut base: Vec<(String, String)>) -> Self {
        let mut extra = Vec::new();
        for (from, to) in &base {
            let cap = capitalize(from);
            if cap != *from {
                extra.push((cap, capitalize(to)));
            }
        }
        base.extend(extra);
        base.retain(|(f, t)| !f.is_empty() && f != t);
        base.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        base.dedup_by(|a, b| a.0 == b.0);
        Replacer { pairs: base }
    }

    fn find(&self, text: &str) -> bool {
        let mut found = false;
        self.scan(text, |_| found = true);
        found
    }

    fn apply(&self, text: &str) -> String {
        self.scan(text, |_| {})
    }

    fn scan(&self, text: &str, mut hit: impl FnMut(usize)) -> String {
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        let bytes = text.as_bytes();
        let is_word = |c: u8| c.is_ascii_alphanumeric() || c == b'\'' || c >= 0x80;
        'outer: while i < text.len() {
            if i == 0 || !is_word(bytes[i - 1]) {
                for (k, (from, to)) in self.pairs.iter().enumerate() {
                    if text[i..].starts_with(from.as_str()) {
                        let end = i + from.len();
                        if end == text.len() || !is_word(bytes[end]) {
                            out.push_str(to);
                            hit(k);
                            i = end;
                            continue 'outer;
                        }
                    }
                }
            }
            let c = text[i..].chars().next().unwrap();
            out.push(c);
            i += c.len_utf8();
        }
        out
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Compiled form of a mapping against an ontology.
pub struct Adapter<'o> {
    mapping: &'o DomainMapping,
    ontology: &'o Ontology,
    subjects: Vec<(String, String)>,
}

/// Per-dialogue substitution state: source value to target value per slot,
/// and the turn where each changed value first appeared.
struct Session {
    chosen: BTreeMap<(String, String), String>,
    first_seen: BTreeMap<String, (usize, String)>,
    rng: rand_chacha::ChaCha8Rng,
    turn: usize,
}

impl<'o> Adapter<'o> {
    pub fn new(mapping: &'o DomainMapping, ontology: &'o Ontology) -> Result<Self, AdaptError> {
        let src = ontology.domain(&mapping.source)?;
        let dst = ontology.domain(&mapping.target)?;
        for (s, t) in &mapping.slot_map {
            if src.slot(s).is_none() {
                return Err(AdaptError::UnknownSlot {
                    slot: s.clone(),
                    domain: mapping.source.clone(),
                });
            }
            if dst.slot(t).is_none() {
                return Err(AdaptError::UnknownSlot {
                    slot: t.clone(),
                    domain: mapping.target.clone(),
                });
            }
        }
        let mut subjects = Vec::new();
        for (i, s) in src.subjects.iter().enumerate() {
            let t = &dst.subjects[i % dst.subjects.len()];
            subjects.push((format!("{s}s"), format!("{t}s")));
            subjects.push((s.clone(), t.clone()));
        }
        Ok(Adapter {
            mapping,
            ontology,
            subjects,
        })
    }

    fn map_pair(&self, slot: &str, v: &SlotValue, session: &mut Session) -> Result<(String, SlotValue), String> {
        let target = self
            .mapping
            .slot_map
            .get(slot)
            .ok_or_else(|| format!("unmapped slot: {slot}"))?;
        let dst = self.ontology.domain(&self.mapping.target).map_err(|e| e.to_string())?;
        let spec = dst.slot(target).ok_or_else(|| format!("unmapped slot: {slot}"))?;
        let v = match v {
            SlotValue::Value(s) => {
                let key = (slot.to_string(), s.clone());
                let t = match session.chosen.get(&key) {
                    Some(t) => t.clone(),
                    None => {
                        let t = if let Some(t) = self.mapping.value_map.get(slot).and_then(|m| m.get(s)) {
                            t.clone()
                        } else if self.mapping.value_policy == ValuePolicy::IdentityIfShared && accepts(spec, s) {
                            s.clone()
                        } else {
                            let pool = self.ontology.value_pool(spec, usize::MAX);
                            pool[session.rng.gen_range(0..pool.len())].clone()
                        };
                        session.chosen.insert(key, t.clone());
                        t
                    }
                };
                if t != *s {
                    session.first_seen.entry(s.clone()).or_insert((session.turn, t.clone()));
                }
                SlotValue::Value(t)
            }
            other => other.clone(),
        };
        Ok((target.clone(), v))
    }

    fn map_sem(&self, v: &SemValue, session: &mut Session) -> Result<SemValue, String> {
        let mut err = None;
        let out = v.map_slots(|k, v| match self.map_pair(k, v, session) {
            Ok(p) => p,
            Err(e) => {
                err.get_or_insert(e);
                (k.to_string(), v.clone())
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Adapts one dialogue, or explains why it cannot be adapted. Drawn
    /// values depend only on `seed` and the dialogue.
    pub fn adapt(&self, d: &Dialogue, seed: u64) -> Result<AdaptOutcome, AdaptError> {
        if d.domains().len() != 1 || d.domain() != self.mapping.source {
            return Err(AdaptError::WrongDomain {
                id: d.id.clone(),
                expected: self.mapping.source.clone(),
                found: d.domains().join("+"),
            });
        }
        let mut session = Session {
            chosen: BTreeMap::new(),
            first_seen: BTreeMap::new(),
            rng: rng::stream(seed, &[rng::TAG_ORDER, crate::rng::derive(0, &[hash_str(&d.id)])]),
            turn: 0,
        };
        let mut turns = Vec::with_capacity(d.turns.len());
        for (i, t) in d.turns.iter().enumerate() {
            session.turn = i;
            let mut end_state = ConcreteState::new(t.end_state.abstract_state.clone(), self.mapping.target.clone());
            for (k, v) in &t.end_state.slots {
                match self.map_pair(k, v, &mut session) {
                    Ok((k, v)) => {
                        end_state.slots.insert(k, v);
                    }
                    Err(reason) => return Ok(AdaptOutcome::Skip(reason)),
                }
            }
            let mut provenance = t.provenance.clone();
            if let Some(p) = provenance.as_mut() {
                for v in p.capture_bindings.values_mut() {
                    match self.map_sem(v, &mut session) {
                        Ok(n) => *v = n,
                        Err(reason) => return Ok(AdaptOutcome::Skip(reason)),
                    }
                }
            }
            turns.push(Turn {
                agent_utterance: t.agent_utterance.clone(),
                user_utterance: t.user_utterance.clone(),
                end_state,
                provenance,
            });
        }

        // A changed value must be visible in the turn that introduced it, or
        // the text and the annotation would disagree after substitution.
        let mut pairs = Vec::new();
        for (from, (turn, to)) in &session.first_seen {
            let one = Replacer::new(vec![(from.clone(), to.clone())]);
            let t = &d.turns[*turn];
            if !(one.find(&t.agent_utterance) || one.find(&t.user_utterance)) {
                return Ok(AdaptOutcome::Skip(format!("value not found in text: {from}")));
            }
            pairs.push((from.clone(), to.clone()));
        }
        pairs.extend(self.subjects.iter().cloned());
        let rep = Replacer::new(pairs);
        for t in turns.iter_mut() {
            t.agent_utterance = rep.apply(&t.agent_utterance);
            t.user_utterance = rep.apply(&t.user_utterance);
        }
        let marker = format!("-{}-", self.mapping.source);
        let id = if self.mapping.source == self.mapping.target {
            d.id.clone()
        } else if d.id.contains(&marker) {
            d.id.replacen(&marker, &format!("-{}-", self.mapping.target), 1)
        } else {
            format!("{}-{}", d.id, self.mapping.target)
        };
        Ok(AdaptOutcome::Adapted(Dialogue { id, turns }))
    }
}

fn hash_str(s: &str) -> u64 {
    // FNV-1a; only needs to be stable, not strong.
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Adapts one dialogue with a freshly compiled mapping.
pub fn adapt_dialogue(
    d: &Dialogue,
    mapping: &DomainMapping,
    ontology: &Ontology,
    seed: u64,
) -> Result<AdaptOutcome, AdaptError> {
    Adapter::new(mapping, ontology)?.adapt(d, seed)
}

/// Adapts every dialogue in parallel, keeping input order. Returns the
/// adapted corpus and `(id, reason)` for each skipped dialogue.
pub fn adapt_corpus(
    corpus: &DialogueCorpus,
    mapping: &DomainMapping,
    ontology: &Ontology,
    seed: u64,
) -> Result<(DialogueCorpus, Vec<(String, String)>), AdaptError> {
    let a = Adapter::new(mapping, ontology)?;
    let outcomes: Vec<AdaptOutcome> = corpus
        .dialogues
        .par_iter()
        .map(|d| a.adapt(d, seed))
        .collect::<Result<_, _>>()?;
    let mut out = DialogueCorpus {
        dialogues: Vec::new(),
        metadata: corpus.metadata.clone(),
    };
    out.metadata.domain = mapping.target.clone();
    let mut skipped = Vec::new();
    for (d, o) in corpus.dialogues.iter().zip(outcomes) {
        match o {
            AdaptOutcome::Adapted(n) => out.dialogues.push(n),
            AdaptOutcome::Skip(reason) => skipped.push((d.id.clone(), reason)),
        }
    }
    out.metadata.synthesized = out.dialogues.len();
    Ok((out, skipped))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConcatError {
    #[error("both dialogues are in domain `{0}`")]
    SameDomain(String),
    #[error("dialogue `{0}` spans several domains")]
    MultiDomain(String),
    #[error("dialogue `{0}` never reaches a state from which it could close")]
    NoClosing(String),
    #[error("dialogue `{0}` has fewer than two turns")]
    TooShort(String),
}

/// First turn whose end state has a transition straight to the end state.
pub fn closing_turn(d: &Dialogue, model: &DialogueModel) -> Option<usize> {
    let end = &model.end_state().name;
    d.turns.iter().position(|t| {
        model
            .enabled_transitions(&t.end_state.abstract_state)
            .map(|ts| ts.iter().any(|x| x.to_state == *end))
            .unwrap_or(false)
    })
}

const CLOSING_CUES: [&str; 5] = ["anything else", "goodbye", "bye", "have a nice", "have a great"];

/// Guess of [`closing_turn`] from text alone, for corpora without annotations:
/// the turn before the first agent utterance containing a closing cue.
pub fn closing_turn_by_text(d: &Dialogue) -> Option<usize> {
    (1..d.turns.len())
        .find(|&i| {
            let a = d.turns[i].agent_utterance.to_lowercase();
            CLOSING_CUES.iter().any(|c| {
                a.match_indices(c).any(|(p, _)| {
                    let before = a[..p].chars().next_back();
                    let after = a[p + c.len()..].chars().next();
                    !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
                })
            })
        })
        .map(|i| i - 1)
}

fn qualify(s: &ConcreteState) -> BTreeMap<String, SlotValue> {
    s.qualified_slots().map(|(d, k, v)| (format!("{d}-{k}"), v.clone())).collect()
}

/// Splices two single-domain dialogues: `first` up to `cut` (inclusive),
/// then `second` without its greeting turn, if any. Slot names become
/// `domain-slot` and the second part's states keep the first part's final slots.
/// Provenance is dropped since the spliced turns were not produced by one
/// template action.
pub fn concat_at(first: &Dialogue, cut: usize, second: &Dialogue, id: &str) -> Result<Dialogue, ConcatError> {
    for d in [first, second] {
        if d.domains().len() != 1 {
            return Err(ConcatError::MultiDomain(d.id.clone()));
        }
    }
    if first.domain() == second.domain() {
        return Err(ConcatError::SameDomain(first.domain().to_string()));
    }
    // A leading turn that records no slots is a greeting and is dropped.
    let skip = usize::from(second.turns.first().is_some_and(|t| t.end_state.slots.is_empty()));
    if second.turns.len() <= skip {
        return Err(ConcatError::TooShort(second.id.clone()));
    }
    let strip = |t: &Turn, slots: BTreeMap<String, SlotValue>| Turn {
        agent_utterance: t.agent_utterance.clone(),
        user_utterance: t.user_utterance.clone(),
        end_state: ConcreteState {
            abstract_state: t.end_state.abstract_state.clone(),
            domain: t.end_state.domain.clone(),
            slots,
        },
        provenance: None,
    };
    let mut turns: Vec<Turn> = first.turns[..=cut].iter().map(|t| strip(t, qualify(&t.end_state))).collect();
    let carried = turns.last().map(|t| t.end_state.slots.clone()).unwrap_or_default();
    for t in &second.turns[skip..] {
        let mut slots = carried.clone();
        slots.extend(qualify(&t.end_state));
        turns.push(strip(t, slots));
    }
    // The agent's closing prompt from the first dialogue opens the second part.
    if let Some(prompt) = first.turns.get(cut + 1).map(|t| &t.agent_utterance).filter(|a| !a.is_empty()) {
        turns[cut + 1].agent_utterance = prompt.clone();
    }
    Ok(Dialogue {
        id: id.to_string(),
        turns,
    })
}

/// Splices at the first turn of `first` from which the model allows closing.
pub fn concat(first: &Dialogue, second: &Dialogue, model: &DialogueModel, id: &str) -> Result<Dialogue, ConcatError> {
    if first.domain() == second.domain() {
        return Err(ConcatError::SameDomain(first.domain().to_string()));
    }
    let cut = closing_turn(first, model).ok_or_else(|| ConcatError::NoClosing(first.id.clone()))?;
    concat_at(first, cut, second, id)
}

/// Like [`concat`], locating the cut from closing phrases in the text.
pub fn concat_by_text(first: &Dialogue, second: &Dialogue, id: &str) -> Result<Dialogue, ConcatError> {
    if first.domain() == second.domain() {
        return Err(ConcatError::SameDomain(first.domain().to_string()));
    }
    let cut = closing_turn_by_text(first).ok_or_else(|| ConcatError::NoClosing(first.id.clone()))?;
    concat_at(first, cut, second, id)
}
