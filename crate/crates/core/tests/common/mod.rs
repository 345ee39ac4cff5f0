#![allow(dead_code)]

use std::collections::BTreeMap;

use dialogue_synth::grammar::{bind_ontology, BoundGrammar, SemValue};
use dialogue_synth::model::{load_model, ConcreteState, Dialogue, DialogueModel, Provenance, SlotValue, Turn};
use dialogue_synth::ontology::{load_ontology, Ontology};
use dialogue_synth::builtin;

pub fn v(s: &str) -> SlotValue {
    SlotValue::Value(s.to_string())
}

pub fn pair(slot: &str, value: SlotValue) -> SemValue {
    SemValue::Pair(slot.to_string(), value)
}

pub fn set(entries: &[(&str, SlotValue)]) -> SemValue {
    SemValue::Set(entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect())
}

pub fn empty() -> SemValue {
    SemValue::empty()
}

pub fn state(abs: &str, domain: &str, slots: &[(&str, SlotValue)]) -> ConcreteState {
    let mut s = ConcreteState::new(abs, domain);
    for (k, v) in slots {
        s.slots.insert(k.to_string(), v.clone());
    }
    s
}

pub fn turn(
    agent: &str,
    user: &str,
    end: ConcreteState,
    transition: &str,
    template: &str,
    captures: &[(&str, SemValue)],
) -> Turn {
    Turn {
        agent_utterance: agent.into(),
        user_utterance: user.into(),
        end_state: end,
        provenance: Some(Provenance {
            transition_id: transition.into(),
            template_id: template.into(),
            capture_bindings: captures.iter().map(|(k, v)| (k.to_string(), v.clone())).collect::<BTreeMap<_, _>>(),
        }),
    }
}

pub fn restaurant() -> (DialogueModel, Ontology, BoundGrammar) {
    let model = builtin::model();
    let ont = builtin::ontology();
    let bg = bind_ontology(&builtin::grammar(), &model, &ont, "restaurant").expect("builtin grammar binds");
    (model, ont, bg)
}

/// A six-turn restaurant booking dialogue, annotated
/// with the templates of the built-in library that produce each turn.
pub fn booking_dialogue() -> Dialogue {
    let t = |x: &str| ("book time", v(x));
    let f = |x: &str| ("food", v(x));
    let d = |x: &str| ("book day", v(x));
    let r = "restaurant";
    Dialogue {
        id: "booking".into(),
        turns: vec![
            turn(
                "",
                "Can you help with information regarding a food place? I need to book at 15:45.",
                state("SearchRequest", r, &[t("15:45")]),
                "start_search",
                "search_book",
                &[("q", empty()), ("b", pair("book time", v("15:45")))],
            ),
            turn(
                "How about La Tasca? It is a food place.",
                "No, something which serves seafood.",
                state("SearchRequest", r, &[t("15:45"), f("seafood")]),
                "search_propose_reject",
                "reject_add",
                &[
                    ("n", pair("name", v("La Tasca"))),
                    ("np", empty()),
                    ("l", empty()),
                    ("v", pair("food", v("seafood"))),
                ],
            ),
            turn(
                "What date are you looking for?",
                "Thursday please.",
                state("SearchRequest", r, &[t("15:45"), f("seafood"), d("thursday")]),
                "search_ask_answer",
                "ask_answer",
                &[
                    ("q", pair("book day", SlotValue::Requested)),
                    ("l", empty()),
                    ("v", pair("book day", v("thursday"))),
                ],
            ),
            turn(
                "How about the Copper Kettle? It is a food place with seafood food.",
                "What is the price range and the area?",
                state(
                    "SlotQuestion",
                    r,
                    &[
                        t("15:45"),
                        f("seafood"),
                        d("thursday"),
                        ("price range", SlotValue::Requested),
                        ("area", SlotValue::Requested),
                    ],
                ),
                "search_propose_slot_question",
                "slot_question_what",
                &[
                    ("n", pair("name", v("Copper Kettle"))),
                    ("np", set(&[f("seafood")])),
                    ("q", set(&[("price range", SlotValue::Requested), ("area", SlotValue::Requested)])),
                ],
            ),
            turn(
                "The Copper Kettle is a moderately priced restaurant in the north of the city.",
                "No, thanks.",
                state("CloseConversation", r, &[t("15:45"), f("seafood"), d("thursday")]),
                "slot_question_answer_thanks",
                "slot_answer_thanks",
                &[("v", set(&[("price range", v("moderate")), ("area", v("north"))])), ("t", empty())],
            ),
            turn(
                "Can I help you with anything else?",
                "Thank you, that will be it for now.",
                state("End", r, &[t("15:45"), f("seafood"), d("thursday")]),
                "close_anything_else_goodbye",
                "goodbye",
                &[("x", empty()), ("y", empty())],
            ),
        ],
    }
}

/// Start --only--> End.
pub const TWO_STATE_MODEL: &str = r#"{
  "states": [{"name": "Start", "start": true}, {"name": "End", "end": true}],
  "acts": [{"name": "Silence", "speaker": "agent"}, {"name": "Say", "speaker": "user"}],
  "transitions": [{"id": "only", "from": "Start", "agent_act": "Silence", "user_act": "Say", "to": "End"}]
}"#;

pub fn two_state_model() -> DialogueModel {
    load_model(TWO_STATE_MODEL).unwrap()
}

/// A one-domain toy ontology with two foods and two areas.
pub const TOY_ONTOLOGY: &str = r#"{"domains": {"toy": {
  "subjects": ["place"],
  "slots": [
    {"name": "food", "kind": "categorical", "values": ["Thai", "Greek"]},
    {"name": "area", "kind": "categorical", "values": ["north", "south"]}
  ]}}}"#;

pub fn toy_ontology() -> Ontology {
    load_ontology(TOY_ONTOLOGY).unwrap()
}
