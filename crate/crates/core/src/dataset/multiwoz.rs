//! MultiWOZ-style JSON: one object keyed by dialogue id, each holding a `log`
//! that alternates user and system entries.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use super::{DatasetError, DialogueCorpus};
use crate::model::{ConcreteState, SlotValue};

/// One log entry. User entries carry empty metadata; system entries carry the
/// belief state after the preceding user utterance, both nested by domain and
/// flattened as `domain-slot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiWozEntry {
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_state: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiWozDialogue {
    pub log: Vec<MultiWozEntry>,
}

fn wire_value(v: &SlotValue) -> String {
    match v {
        SlotValue::Value(s) => s.clone(),
        SlotValue::DontCare => "dontcare".into(),
        SlotValue::Requested => "?".into(),
    }
}

fn belief(state: &ConcreteState) -> (BTreeMap<String, BTreeMap<String, String>>, BTreeMap<String, String>) {
    let mut nested: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut flat = BTreeMap::new();
    nested.entry(state.domain.clone()).or_default();
    for (d, s, v) in state.qualified_slots() {
        nested.entry(d.to_string()).or_default().insert(s.to_string(), wire_value(v));
        flat.insert(format!("{d}-{s}"), wire_value(v));
    }
    (nested, flat)
}

/// Converts one dialogue. The opening agent utterance has no MultiWOZ slot
/// and is dropped; the system reply to user turn i is the agent utterance of
/// turn i+1, and the final reply is empty.
pub fn to_multiwoz(d: &crate::model::Dialogue) -> MultiWozDialogue {
    let mut log = Vec::with_capacity(d.turns.len() * 2);
    for (i, t) in d.turns.iter().enumerate() {
        log.push(MultiWozEntry {
            text: t.user_utterance.clone(),
            metadata: BTreeMap::new(),
            dialogue_state: None,
        });
        let (metadata, flat) = belief(&t.end_state);
        log.push(MultiWozEntry {
            text: d.turns.get(i + 1).map(|n| n.agent_utterance.clone()).unwrap_or_default(),
            metadata,
            dialogue_state: Some(flat),
        });
    }
    MultiWozDialogue { log }
}

/// Writes the corpus as one JSON object, keys in corpus order.
pub fn emit_multiwoz<W: Write>(corpus: &DialogueCorpus, mut out: W) -> std::io::Result<()> {
    out.write_all(b"{")?;
    for (i, d) in corpus.dialogues.iter().enumerate() {
        if i > 0 {
            out.write_all(b",")?;
        }
        out.write_all(b"\n")?;
        serde_json::to_writer(&mut out, &d.id)?;
        out.write_all(b": ")?;
        serde_json::to_writer(&mut out, &to_multiwoz(d))?;
    }
    out.write_all(b"\n}\n")?;
    out.flush()
}

struct Ordered(Vec<(String, MultiWozDialogue)>);

impl<'de> Deserialize<'de> for Ordered {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Ordered;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of dialogues keyed by id")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> Result<Ordered, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = m.next_entry::<String, MultiWozDialogue>()? {
                    out.push((k, v));
                }
                Ok(Ordered(out))
            }
        }
        d.deserialize_map(V)
    }
}

/// Reads a MultiWOZ-style document, keeping the document's key order.
pub fn parse_multiwoz<R: Read>(input: R) -> Result<Vec<(String, MultiWozDialogue)>, DatasetError> {
    let Ordered(v) = serde_json::from_reader(input).map_err(|e| DatasetError::MultiWoz(e.to_string()))?;
    for (id, d) in &v {
        if d.log.len() % 2 != 0 {
            return Err(DatasetError::MultiWoz(format!("dialogue `{id}` has an odd number of log entries")));
        }
    }
    Ok(v)
}
