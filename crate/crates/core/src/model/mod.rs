//! The abstract dialogue model: states, dialogue acts and the transitions
//! between states, plus the concrete dialogue types built on top of it.

mod dialogue;
mod state;
mod validate;

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dialogue::{Dialogue, Provenance, Turn};
pub use state::{ConcreteState, SlotValue};
pub use validate::{validate_dialogue, Condition, ReplayStatus, ValidationReport, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractState {
    pub name: String,
    #[serde(rename = "start", default)]
    pub is_start: bool,
    #[serde(rename = "end", default)]
    pub is_end: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Agent,
    User,
}

impl std::fmt::Display for Speaker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Speaker::Agent => "agent",
            Speaker::User => "user",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueAct {
    pub name: String,
    pub speaker: Speaker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub id: String,
    #[serde(rename = "from")]
    pub from_state: String,
    pub agent_act: String,
    pub user_act: String,
    #[serde(rename = "to")]
    pub to_state: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    states: Vec<AbstractState>,
    acts: Vec<DialogueAct>,
    transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed model document: {0}")]
    Syntax(String),
    #[error("empty {0} name")]
    EmptyName(&'static str),
    #[error("duplicate state `{0}`")]
    DuplicateState(String),
    #[error("duplicate {speaker} act `{name}`")]
    DuplicateAct { name: String, speaker: Speaker },
    #[error("duplicate transition id `{0}`")]
    DuplicateTransition(String),
    #[error("transition `{transition}` references unknown {kind} `{name}`")]
    DanglingReference {
        transition: String,
        kind: &'static str,
        name: String,
    },
    #[error("model must have exactly one start state, found {0}")]
    StartStates(usize),
    #[error("model must have exactly one end state, found {0}")]
    EndStates(usize),
    #[error("states unreachable from the start state: {}", .0.join(", "))]
    Unreachable(Vec<String>),
    #[error("states with no path to the end state: {}", .0.join(", "))]
    DeadEnd(Vec<String>),
    #[error("unknown state `{0}`")]
    UnknownState(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Downgrade unreachable and dead-end states from errors to warnings.
    pub allow_unreachable: bool,
}

/// A validated, immutable dialogue model.
#[derive(Debug, Clone)]
pub struct DialogueModel {
    states: Vec<AbstractState>,
    acts: Vec<DialogueAct>,
    transitions: Vec<Transition>,
    state_index: HashMap<String, usize>,
    transition_index: HashMap<String, usize>,
    outgoing: Vec<Vec<usize>>,
    start: usize,
    end: usize,
    hash: String,
}

pub fn load_model(source: &str) -> Result<DialogueModel, ModelError> {
    load_model_with(source, LoadOptions::default())
}

pub fn load_model_with(source: &str, opts: LoadOptions) -> Result<DialogueModel, ModelError> {
    let doc: ModelDocument =
        serde_json::from_str(source).map_err(|e| ModelError::Syntax(e.to_string()))?;
    DialogueModel::from_parts(doc.states, doc.acts, doc.transitions, opts)
}

impl DialogueModel {
    pub fn from_parts(
        states: Vec<AbstractState>,
        acts: Vec<DialogueAct>,
        transitions: Vec<Transition>,
        opts: LoadOptions,
    ) -> Result<Self, ModelError> {
        let mut state_index = HashMap::new();
        for (i, s) in states.iter().enumerate() {
            if s.name.is_empty() {
                return Err(ModelError::EmptyName("state"));
            }
            if state_index.insert(s.name.clone(), i).is_some() {
                return Err(ModelError::DuplicateState(s.name.clone()));
            }
        }
        let mut act_set = HashSet::new();
        for a in &acts {
            if a.name.is_empty() {
                return Err(ModelError::EmptyName("act"));
            }
            if !act_set.insert((a.name.as_str(), a.speaker)) {
                return Err(ModelError::DuplicateAct {
                    name: a.name.clone(),
                    speaker: a.speaker,
                });
            }
        }
        let starts: Vec<usize> = (0..states.len()).filter(|&i| states[i].is_start).collect();
        let ends: Vec<usize> = (0..states.len()).filter(|&i| states[i].is_end).collect();
        if starts.len() != 1 {
            return Err(ModelError::StartStates(starts.len()));
        }
        if ends.len() != 1 {
            return Err(ModelError::EndStates(ends.len()));
        }

        let mut transition_index = HashMap::new();
        let mut outgoing = vec![Vec::new(); states.len()];
        for (i, t) in transitions.iter().enumerate() {
            if t.id.is_empty() {
                return Err(ModelError::EmptyName("transition"));
            }
            if transition_index.insert(t.id.clone(), i).is_some() {
                return Err(ModelError::DuplicateTransition(t.id.clone()));
            }
            let dangling = |kind, name: &str| ModelError::DanglingReference {
                transition: t.id.clone(),
                kind,
                name: name.to_string(),
            };
            let from = *state_index
                .get(&t.from_state)
                .ok_or_else(|| dangling("state", &t.from_state))?;
            if !state_index.contains_key(&t.to_state) {
                return Err(dangling("state", &t.to_state));
            }
            if !act_set.contains(&(t.agent_act.as_str(), Speaker::Agent)) {
                return Err(dangling("agent act", &t.agent_act));
            }
            if !act_set.contains(&(t.user_act.as_str(), Speaker::User)) {
                return Err(dangling("user act", &t.user_act));
            }
            outgoing[from].push(i);
        }

        let doc = ModelDocument {
            states: states.clone(),
            acts: acts.clone(),
            transitions: transitions.clone(),
        };
        let hash = crate::sha256_hex(serde_json::to_string(&doc).expect("serializable").as_bytes());
        let model = DialogueModel {
            states,
            acts,
            transitions,
            state_index,
            transition_index,
            outgoing,
            start: starts[0],
            end: ends[0],
            hash,
        };
        model.check_reachability(opts)?;
        Ok(model)
    }

    fn check_reachability(&self, opts: LoadOptions) -> Result<(), ModelError> {
        let n = self.states.len();
        let mut forward = vec![false; n];
        let mut queue = VecDeque::from([self.start]);
        forward[self.start] = true;
        while let Some(s) = queue.pop_front() {
            for &t in &self.outgoing[s] {
                let to = self.state_index[&self.transitions[t].to_state];
                if !forward[to] {
                    forward[to] = true;
                    queue.push_back(to);
                }
            }
        }
        let mut backward = vec![false; n];
        backward[self.end] = true;
        let mut changed = true;
        while changed {
            changed = false;
            for t in &self.transitions {
                let (f, to) = (self.state_index[&t.from_state], self.state_index[&t.to_state]);
                if backward[to] && !backward[f] {
                    backward[f] = true;
                    changed = true;
                }
            }
        }
        let names = |mask: &[bool]| -> Vec<String> {
            (0..n).filter(|&i| !mask[i]).map(|i| self.states[i].name.clone()).collect()
        };
        let unreachable = names(&forward);
        let dead = names(&backward);
        if opts.allow_unreachable {
            if !unreachable.is_empty() {
                log::warn!("states unreachable from start: {}", unreachable.join(", "));
            }
            if !dead.is_empty() {
                log::warn!("states with no path to end: {}", dead.join(", "));
            }
            return Ok(());
        }
        if !unreachable.is_empty() {
            return Err(ModelError::Unreachable(unreachable));
        }
        if !dead.is_empty() {
            return Err(ModelError::DeadEnd(dead));
        }
        Ok(())
    }

    pub fn states(&self) -> &[AbstractState] {
        &self.states
    }

    pub fn acts(&self) -> &[DialogueAct] {
        &self.acts
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn start_state(&self) -> &AbstractState {
        &self.states[self.start]
    }

    pub fn end_state(&self) -> &AbstractState {
        &self.states[self.end]
    }

    pub fn state(&self, name: &str) -> Option<&AbstractState> {
        self.state_index.get(name).map(|&i| &self.states[i])
    }

    pub fn transition(&self, id: &str) -> Option<&Transition> {
        self.transition_index.get(id).map(|&i| &self.transitions[i])
    }

    /// Transitions leaving `state`, in document order.
    pub fn enabled_transitions(&self, state: &str) -> Result<Vec<&Transition>, ModelError> {
        let i = *self
            .state_index
            .get(state)
            .ok_or_else(|| ModelError::UnknownState(state.to_string()))?;
        Ok(self.outgoing[i].iter().map(|&t| &self.transitions[t]).collect())
    }

    /// Whether some transition goes from `from` to `to`.
    pub fn connects(&self, from: &str, to: &str) -> bool {
        self.state_index
            .get(from)
            .map(|&i| self.outgoing[i].iter().any(|&t| self.transitions[t].to_state == to))
            .unwrap_or(false)
    }

    pub fn agent_acts(&self) -> impl Iterator<Item = &DialogueAct> {
        self.acts.iter().filter(|a| a.speaker == Speaker::Agent)
    }

    pub fn user_acts(&self) -> impl Iterator<Item = &DialogueAct> {
        self.acts.iter().filter(|a| a.speaker == Speaker::User)
    }

    /// Stable content hash of the canonical document.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Canonical JSON document; loading it yields an identical model.
    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            states: self.states.clone(),
            acts: self.acts.clone(),
            transitions: self.transitions.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable")
    }

    /// The empty state a dialogue in `domain` starts from.
    pub fn initial_state(&self, domain: &str) -> ConcreteState {
        ConcreteState::new(self.start_state().name.clone(), domain)
    }
}
