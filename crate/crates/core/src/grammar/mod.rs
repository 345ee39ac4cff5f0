//! Template grammar: a small DSL of phrase rules, turn templates and ontology
//! hooks, each production paired with a declarative semantic action.
//!
//! ```text
//! rule NP := SUBJECT@s => $s ;
//! rule NP := ADJ_SLOT@adj NP@np => union($np, $adj) ;
//! values FOOD from slot food => pair(food, $value) ;
//! turn ask_price on search_propose_slot_question :=
//!     "How about" NAME "?" "It is a" NP@np "." "<sep>" "Is it" ADJ_SLOT@adj_slot "?"
//!     action { require disjoint($adj_slot, union(state.slots, $np)) ;
//!              abstract SlotQuestion ; set $adj_slot.name "?" ; } ;
//! ```

mod action;
mod bind;
mod lexer;
mod parser;
mod realize;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::SlotValue;

pub use action::{
    eval_action, ActionError, ActionOutcome, Effect, Guard, NewValue, Operand, PairValue,
    ResultExpr, SemanticAction, SlotTarget, ValueRef,
};
pub(crate) use action::{guard_atoms, guard_deps, Env};
pub use bind::{bind_ontology, bind_ontology_with, BindError, BindOptions, BoundGrammar, BoundNonTerminal, BoundProduction, Item, TurnTemplate};
pub use parser::{load_template_dir, parse_template_str, parse_templates, TemplateSource};
pub use realize::{realize, sentence_case};

pub(crate) mod action_internals {
    pub(crate) use super::action::{apply_effects, eval_guard, eval_result, Positional};
}

pub type SlotMap = BTreeMap<String, SlotValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    SlotPair,
    SlotSet,
    Scalar,
    State,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::SlotPair => "slot_pair",
            ValueKind::SlotSet => "slot_set",
            ValueKind::Scalar => "scalar",
            ValueKind::State => "state",
        })
    }
}

impl ValueKind {
    pub fn is_slots(self) -> bool {
        matches!(self, ValueKind::SlotPair | ValueKind::SlotSet)
    }
}

/// Value computed by a production's semantic function.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SemValue {
    Pair(String, SlotValue),
    Set(SlotMap),
    Scalar(String),
}

impl SemValue {
    pub fn empty() -> Self {
        SemValue::Set(SlotMap::new())
    }

    pub fn kind(&self) -> ValueKind {
        match self {
            SemValue::Pair(..) => ValueKind::SlotPair,
            SemValue::Set(_) => ValueKind::SlotSet,
            SemValue::Scalar(_) => ValueKind::Scalar,
        }
    }

    /// Slot entries; scalars have none.
    pub fn slots(&self) -> SlotIter<'_> {
        match self {
            SemValue::Pair(n, v) => SlotIter::One(Some((n, v))),
            SemValue::Set(m) => SlotIter::Many(m.iter()),
            SemValue::Scalar(_) => SlotIter::One(None),
        }
    }

    pub fn get(&self, name: &str) -> Option<&SlotValue> {
        match self {
            SemValue::Pair(n, v) if n == name => Some(v),
            SemValue::Set(m) => m.get(name),
            _ => None,
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// Renames slots and rewrites values; scalars pass through `value`.
    pub fn map_slots(&self, mut f: impl FnMut(&str, &SlotValue) -> (String, SlotValue)) -> SemValue {
        match self {
            SemValue::Pair(n, v) => {
                let (n, v) = f(n, v);
                SemValue::Pair(n, v)
            }
            SemValue::Set(m) => SemValue::Set(m.iter().map(|(n, v)| f(n, v)).collect()),
            SemValue::Scalar(s) => SemValue::Scalar(s.clone()),
        }
    }
}

pub enum SlotIter<'a> {
    One(Option<(&'a String, &'a SlotValue)>),
    Many(std::collections::btree_map::Iter<'a, String, SlotValue>),
}

impl<'a> Iterator for SlotIter<'a> {
    type Item = (&'a String, &'a SlotValue);
    fn next(&mut self) -> Option<Self::Item> {
        match self {
            SlotIter::One(o) => o.take(),
            SlotIter::Many(it) => it.next(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum WireSemValue {
    SlotPair { slot: String, value: SlotValue },
    SlotSet { slots: SlotMap },
    Scalar { text: String },
}

impl Serialize for SemValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SemValue::Pair(n, v) => WireSemValue::SlotPair {
                slot: n.clone(),
                value: v.clone(),
            },
            SemValue::Set(m) => WireSemValue::SlotSet { slots: m.clone() },
            SemValue::Scalar(t) => WireSemValue::Scalar { text: t.clone() },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SemValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match WireSemValue::deserialize(d)? {
            WireSemValue::SlotPair { slot, value } => SemValue::Pair(slot, value),
            WireSemValue::SlotSet { slots } => SemValue::Set(slots),
            WireSemValue::Scalar { text } => SemValue::Scalar(text),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Location {
    pub file: String,
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NonTerminal {
    pub name: String,
    pub value_kind: ValueKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RhsItem {
    Literal(String),
    Ref { nonterminal: String, capture: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductionKind {
    Phrase,
    /// Domain-specific full utterance fragment.
    InformationUtterance,
    Turn,
}

/// Turn-template specifics. The agent half is `rhs[..agent_len]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnMeta {
    pub template_id: String,
    pub transition_id: String,
    pub agent_len: usize,
}

/// One expanded production. Alternations in the source become several
/// productions sharing an action; the action's capture list equals the
/// capture names of `rhs` refs, in order.
#[derive(Debug, Clone)]
pub struct Production {
    pub lhs: String,
    pub rhs: Vec<RhsItem>,
    pub action: SemanticAction,
    pub kind: ProductionKind,
    pub turn: Option<TurnMeta>,
    pub domain: Option<String>,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternItem {
    Literal(String),
    Value,
}

/// Ontology-driven terminal productions, instantiated at bind time.
#[derive(Debug, Clone)]
pub enum HookKind {
    /// One production per subject phrase of the domain, valued as the empty set.
    Subject,
    /// One production per (pattern, slot value); `action.result` sees the
    /// value as capture `value`.
    SlotValue {
        slot: String,
        patterns: Vec<Vec<PatternItem>>,
        action: SemanticAction,
    },
    /// One production per phrase naming the slot, valued `(slot, Requested)`.
    SlotName { slot: String, phrases: Vec<String> },
}

#[derive(Debug, Clone)]
pub struct DomainHook {
    pub nonterminal: String,
    pub domain: Option<String>,
    pub kind: HookKind,
    pub location: Location,
}

/// Source-order entry: either a production or a hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definition {
    Production(usize),
    Hook(usize),
}

/// A parsed, checked, ontology-independent grammar.
#[derive(Debug, Clone)]
pub struct Grammar {
    pub nonterminals: Vec<NonTerminal>,
    pub productions: Vec<Production>,
    pub hooks: Vec<DomainHook>,
    pub definitions: Vec<Definition>,
    pub(crate) hash: String,
}

impl Grammar {
    pub fn nonterminal(&self, name: &str) -> Option<&NonTerminal> {
        self.nonterminals.iter().find(|n| n.name == name)
    }

    pub fn turn_templates(&self) -> impl Iterator<Item = &Production> {
        self.productions.iter().filter(|p| p.kind == ProductionKind::Turn)
    }

    pub fn phrase_productions(&self) -> impl Iterator<Item = &Production> {
        self.productions.iter().filter(|p| p.kind != ProductionKind::Turn)
    }

    /// Distinct turn-template identifiers in source order.
    pub fn template_ids(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in self.turn_templates() {
            let id = p.turn.as_ref().map(|t| t.template_id.as_str()).unwrap_or("");
            if !out.contains(&id) {
                out.push(id);
            }
        }
        out
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("{loc}: parse error: {message}")]
    Parse { loc: Location, message: String },
    #[error("{loc}: unknown non-terminal `{name}`")]
    UnknownNonTerminal { loc: Location, name: String },
    #[error("unproductive non-terminal `{name}` (cycle: {})", cycle.join(" -> "))]
    Unproductive { name: String, cycle: Vec<String> },
    #[error("{loc}: unbound capture `${capture}`")]
    UnboundCapture { loc: Location, capture: String },
    #[error("{loc}: capture `{capture}` bound twice; use NT@name to disambiguate")]
    DuplicateCapture { loc: Location, capture: String },
    #[error("{loc}: turn template `{template}` must contain exactly one top-level \"<sep>\"")]
    MissingDelimiter { loc: Location, template: String },
    #[error("{loc}: duplicate turn template id `{template}`")]
    DuplicateTemplate { loc: Location, template: String },
    #[error("{loc}: type error: {message}")]
    Type { loc: Location, message: String },
    #[error("{loc}: literal contains the reserved token \"<sep>\"")]
    ReservedToken { loc: Location },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
