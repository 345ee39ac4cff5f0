use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The value a dialogue state holds for one slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotValue {
    Value(String),
    DontCare,
    /// The user asked for this slot's value.
    Requested,
}

impl SlotValue {
    /// Text form used in flat annotations: the value itself, `dontcare` or `?`.
    pub fn text(&self) -> &str {
        match self {
            SlotValue::Value(v) => v,
            SlotValue::DontCare => "dontcare",
            SlotValue::Requested => "?",
        }
    }

    pub fn as_value(&self) -> Option<&str> {
        match self {
            SlotValue::Value(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "t", deny_unknown_fields)]
enum WireSlotValue {
    #[serde(rename = "v")]
    Value { v: String },
    #[serde(rename = "dontcare")]
    DontCare,
    #[serde(rename = "?")]
    Requested,
}

impl Serialize for SlotValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SlotValue::Value(v) => WireSlotValue::Value { v: v.clone() },
            SlotValue::DontCare => WireSlotValue::DontCare,
            SlotValue::Requested => WireSlotValue::Requested,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SlotValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match WireSlotValue::deserialize(d)? {
            WireSlotValue::Value { v } => SlotValue::Value(v),
            WireSlotValue::DontCare => SlotValue::DontCare,
            WireSlotValue::Requested => SlotValue::Requested,
        })
    }
}

/// An abstract state refined with a domain and the slots mentioned so far.
///
/// Slot names are plain (`food`) in single-domain dialogues and
/// domain-qualified (`restaurant-food`) after multi-domain concatenation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConcreteState {
    pub abstract_state: String,
    pub domain: String,
    pub slots: BTreeMap<String, SlotValue>,
}

impl ConcreteState {
    pub fn new(abstract_state: impl Into<String>, domain: impl Into<String>) -> Self {
        ConcreteState {
            abstract_state: abstract_state.into(),
            domain: domain.into(),
            slots: BTreeMap::new(),
        }
    }

    pub fn with_slot(mut self, name: impl Into<String>, value: SlotValue) -> Self {
        self.slots.insert(name.into(), value);
        self
    }

    /// Slots as `(domain, slot, value)`, splitting qualified names.
    pub fn qualified_slots(&self) -> impl Iterator<Item = (&str, &str, &SlotValue)> {
        self.slots.iter().map(move |(k, v)| match k.split_once('-') {
            Some((d, s)) => (d, s, v),
            None => (self.domain.as_str(), k.as_str(), v),
        })
    }
}
