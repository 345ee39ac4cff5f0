//! One JSON object per line per dialogue.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{DatasetError, DialogueCorpus};
use crate::grammar::SemValue;
use crate::model::{ConcreteState, Dialogue, Provenance, SlotValue, Turn};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDialogue {
    id: String,
    domain: String,
    turns: Vec<WireTurn>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTurn {
    agent: String,
    user: String,
    state: WireState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prov: Option<WireProv>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireState {
    #[serde(rename = "abstract")]
    abstract_state: String,
    /// Present only in multi-domain dialogues.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<String>,
    slots: BTreeMap<String, SlotValue>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireProv {
    transition: String,
    template: String,
    captures: BTreeMap<String, SemValue>,
}

pub fn to_native_line(d: &Dialogue) -> String {
    let domains = d.domains();
    let multi = domains.len() > 1;
    let wire = WireDialogue {
        id: d.id.clone(),
        domain: domains.join("+"),
        turns: d
            .turns
            .iter()
            .map(|t| WireTurn {
                agent: t.agent_utterance.clone(),
                user: t.user_utterance.clone(),
                state: WireState {
                    abstract_state: t.end_state.abstract_state.clone(),
                    domain: multi.then(|| t.end_state.domain.clone()),
                    slots: t.end_state.slots.clone(),
                },
                prov: t.provenance.as_ref().map(|p| WireProv {
                    transition: p.transition_id.clone(),
                    template: p.template_id.clone(),
                    captures: p.capture_bindings.clone(),
                }),
            })
            .collect(),
    };
    serde_json::to_string(&wire).expect("serializable")
}

pub fn parse_native_line(line: &str) -> Result<Dialogue, String> {
    let w: WireDialogue = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let mut turns = Vec::with_capacity(w.turns.len());
    for t in w.turns {
        let domain = match t.state.domain {
            Some(d) => d,
            None if !w.domain.contains('+') => w.domain.clone(),
            None => return Err("multi-domain dialogue turn lacks a state domain".into()),
        };
        turns.push(Turn {
            agent_utterance: t.agent,
            user_utterance: t.user,
            end_state: ConcreteState {
                abstract_state: t.state.abstract_state,
                domain,
                slots: t.state.slots,
            },
            provenance: t.prov.map(|p| Provenance {
                transition_id: p.transition,
                template_id: p.template,
                capture_bindings: p.captures,
            }),
        });
    }
    Ok(Dialogue { id: w.id, turns })
}

pub fn emit_native<W: Write>(corpus: &DialogueCorpus, mut out: W) -> std::io::Result<()> {
    for d in &corpus.dialogues {
        out.write_all(to_native_line(d).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads dialogues; blank lines are ignored. Metadata is not part of this format.
pub fn parse_native<R: BufRead>(input: R) -> Result<DialogueCorpus, DatasetError> {
    let mut corpus = DialogueCorpus::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d = parse_native_line(&line).map_err(|message| DatasetError::Format {
            line: i + 1,
            message,
        })?;
        corpus.dialogues.push(d);
    }
    if let Some(d) = corpus.dialogues.first() {
        corpus.metadata.domain = d.domain().to_string();
    }
    corpus.metadata.synthesized = corpus.dialogues.len();
    Ok(corpus)
}
