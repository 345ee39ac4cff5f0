use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::Serialize;

use super::DialogueCorpus;
use crate::model::{DialogueModel, SlotValue};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub dialogues: usize,
    pub turns: usize,
    /// Dialogue length in turns -> number of dialogues.
    pub turn_histogram: BTreeMap<usize, usize>,
    /// Slots in a turn's end state -> number of turns.
    pub slots_per_turn: BTreeMap<usize, usize>,
    /// Turns per transition. With a model every transition is listed, even unused ones.
    pub transition_counts: BTreeMap<String, usize>,
    pub transitions_covered: usize,
    pub transitions_total: usize,
    pub distinct_user_utterances: usize,
    /// Slot -> value -> dialogues whose states ever hold that value.
    pub slot_values: BTreeMap<String, BTreeMap<String, usize>>,
}

pub fn compute_stats(corpus: &DialogueCorpus, model: Option<&DialogueModel>) -> StatsReport {
    let mut r = StatsReport {
        dialogues: corpus.dialogues.len(),
        turns: 0,
        turn_histogram: BTreeMap::new(),
        slots_per_turn: BTreeMap::new(),
        transition_counts: BTreeMap::new(),
        transitions_covered: 0,
        transitions_total: 0,
        distinct_user_utterances: 0,
        slot_values: BTreeMap::new(),
    };
    if let Some(m) = model {
        for t in m.transitions() {
            r.transition_counts.insert(t.id.clone(), 0);
        }
    }
    let mut users: HashSet<&str> = HashSet::new();
    for d in &corpus.dialogues {
        r.turns += d.turns.len();
        *r.turn_histogram.entry(d.turns.len()).or_default() += 1;
        let mut seen: BTreeSet<(&str, &str)> = BTreeSet::new();
        for t in &d.turns {
            users.insert(&t.user_utterance);
            *r.slots_per_turn.entry(t.end_state.slots.len()).or_default() += 1;
            if let Some(p) = &t.provenance {
                *r.transition_counts.entry(p.transition_id.clone()).or_default() += 1;
            }
            for (slot, v) in &t.end_state.slots {
                match v {
                    SlotValue::Value(s) => {
                        seen.insert((slot, s));
                    }
                    SlotValue::DontCare => {
                        seen.insert((slot, "dontcare"));
                    }
                    SlotValue::Requested => {}
                }
            }
        }
        for (slot, v) in seen {
            *r.slot_values.entry(slot.to_string()).or_default().entry(v.to_string()).or_default() += 1;
        }
    }
    r.distinct_user_utterances = users.len();
    r.transitions_total = r.transition_counts.len();
    r.transitions_covered = r.transition_counts.values().filter(|&&c| c > 0).count();
    r
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dialogues: {}", self.dialogues)?;
        writeln!(f, "turns: {}", self.turns)?;
        if self.dialogues > 0 {
            writeln!(f, "mean turns per dialogue: {:.2}", self.turns as f64 / self.dialogues as f64)?;
        }
        writeln!(f, "distinct user utterances: {}", self.distinct_user_utterances)?;
        writeln!(f, "turns per dialogue:")?;
        for (k, v) in &self.turn_histogram {
            writeln!(f, "  {k}: {v}")?;
        }
        writeln!(f, "slots per turn:")?;
        for (k, v) in &self.slots_per_turn {
            writeln!(f, "  {k}: {v}")?;
        }
        writeln!(f, "transitions covered: {}/{}", self.transitions_covered, self.transitions_total)?;
        for (k, v) in &self.transition_counts {
            writeln!(f, "  {k}: {v}")?;
        }
        writeln!(f, "slot values:")?;
        for (slot, vals) in &self.slot_values {
            writeln!(f, "  {slot}: {} distinct", vals.len())?;
            for (v, c) in vals {
                writeln!(f, "    {v}: {c}")?;
            }
        }
        Ok(())
    }
}
