//! Well-formedness checking of dialogues against a model and, optionally, the
//! grammar whose actions produced them.

use std::fmt;

use super::{Dialogue, DialogueModel};
use crate::grammar::{eval_action, ActionOutcome, BoundGrammar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    /// Each turn follows a transition of the model.
    Transition = 1,
    /// Replaying the turn's template action reproduces its end state.
    Replay = 2,
    /// The dialogue starts at the start state, chains, and ends at the end state.
    Structure = 3,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", *self as u8)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Zero-based turn index; `None` for dialogue-level problems.
    pub turn: Option<usize>,
    pub condition: Condition,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.turn {
            Some(t) => write!(f, "turn {t}: condition {}: {}", self.condition, self.message),
            None => write!(f, "condition {}: {}", self.condition, self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayStatus {
    Checked,
    /// No provenance, no grammar, or a domain switch.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub replay: Vec<ReplayStatus>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn replay_skipped(&self) -> usize {
        self.replay.iter().filter(|r| **r == ReplayStatus::Skipped).count()
    }

    pub fn has(&self, condition: Condition) -> bool {
        self.violations.iter().any(|v| v.condition == condition)
    }
}

/// Checks the three well-formedness conditions. Without `grammar` (or
/// without provenance) the replay condition is reported as skipped.
///
/// A turn whose domain differs from the previous turn's is a domain switch:
/// it need not chain from the previous abstract state, and is not replayed.
pub fn validate_dialogue(
    dialogue: &Dialogue,
    model: &DialogueModel,
    grammar: Option<&BoundGrammar>,
) -> ValidationReport {
    let mut violations = Vec::new();
    let mut replay = Vec::with_capacity(dialogue.turns.len());
    let mut v = |turn, condition, message: String| {
        violations.push(Violation {
            turn,
            condition,
            message,
        })
    };

    if dialogue.turns.is_empty() {
        v(None, Condition::Structure, "dialogue has no turns".into());
        return ValidationReport {
            violations,
            replay,
        };
    }

    let mut prev = model.initial_state(dialogue.domain());
    for (i, turn) in dialogue.turns.iter().enumerate() {
        let end = &turn.end_state;
        let switch = i > 0 && end.domain != prev.domain;
        for (what, u) in [("agent", &turn.agent_utterance), ("user", &turn.user_utterance)] {
            if u.contains(crate::SEP) {
                v(Some(i), Condition::Structure, format!("{what} utterance contains the reserved delimiter"));
            }
        }
        if model.state(&end.abstract_state).is_none() {
            v(Some(i), Condition::Transition, format!("unknown state `{}`", end.abstract_state));
        }

        let mut replayed = ReplayStatus::Skipped;
        match &turn.provenance {
            Some(p) => match model.transition(&p.transition_id) {
                None => v(Some(i), Condition::Transition, format!("unknown transition `{}`", p.transition_id)),
                Some(t) => {
                    if t.to_state != end.abstract_state {
                        v(
                            Some(i),
                            Condition::Transition,
                            format!("transition `{}` leads to `{}`, turn ends in `{}`", t.id, t.to_state, end.abstract_state),
                        );
                    }
                    if !switch && t.from_state != prev.abstract_state {
                        let msg = if i == 0 {
                            format!("first turn starts at `{}`, not `{}`", t.from_state, prev.abstract_state)
                        } else {
                            format!("turn starts at `{}` but previous turn ended in `{}`", t.from_state, prev.abstract_state)
                        };
                        v(Some(i), Condition::Structure, msg);
                    }
                    if let (Some(g), false) = (grammar, switch) {
                        replayed = ReplayStatus::Checked;
                        match g.template(&p.template_id) {
                            None => v(Some(i), Condition::Replay, format!("unknown template `{}`", p.template_id)),
                            Some(tpl) if tpl.transition_id != t.id => v(
                                Some(i),
                                Condition::Replay,
                                format!("template `{}` belongs to transition `{}`", tpl.id, tpl.transition_id),
                            ),
                            Some(tpl) => match eval_action(&tpl.action, &prev, &p.capture_bindings) {
                                Ok(ActionOutcome::Accept(s)) if s == *end => {}
                                Ok(ActionOutcome::Accept(_)) => v(
                                    Some(i),
                                    Condition::Replay,
                                    "replayed action yields a different state".into(),
                                ),
                                Ok(ActionOutcome::Reject) => {
                                    v(Some(i), Condition::Replay, "replayed action rejects the context".into())
                                }
                                Err(e) => v(Some(i), Condition::Replay, format!("replay failed: {e}")),
                            },
                        }
                    }
                }
            },
            None if !switch && !model.connects(&prev.abstract_state, &end.abstract_state) => {
                let cond = if i == 0 { Condition::Structure } else { Condition::Transition };
                v(
                    Some(i),
                    cond,
                    format!("no transition from `{}` to `{}`", prev.abstract_state, end.abstract_state),
                );
            }
            None => {}
        }
        replay.push(replayed);
        prev = end.clone();
    }

    let last = &dialogue.turns.last().unwrap().end_state.abstract_state;
    if *last != model.end_state().name {
        v(None, Condition::Structure, format!("dialogue ends in `{last}`, not `{}`", model.end_state().name));
    }
    ValidationReport {
        violations,
        replay,
    }
}
