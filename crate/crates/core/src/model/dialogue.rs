use std::collections::BTreeMap;

use super::ConcreteState;
use crate::grammar::SemValue;

/// Which template produced a turn and with which captured values, so the
/// turn's state update can be replayed.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub transition_id: String,
    pub template_id: String,
    pub capture_bindings: BTreeMap<String, SemValue>,
}

/// One agent utterance followed by one user utterance, and the state after both.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    /// Empty for the opening turn.
    pub agent_utterance: String,
    pub user_utterance: String,
    pub end_state: ConcreteState,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// Domain of the first turn, or the empty string for an empty dialogue.
    pub fn domain(&self) -> &str {
        self.turns.first().map(|t| t.end_state.domain.as_str()).unwrap_or("")
    }

    /// Distinct turn domains in order of first appearance.
    pub fn domains(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.turns {
            if !out.contains(&t.end_state.domain.as_str()) {
                out.push(&t.end_state.domain);
            }
        }
        out
    }

    pub fn final_state(&self) -> Option<&ConcreteState> {
        self.turns.last().map(|t| &t.end_state)
    }
}
