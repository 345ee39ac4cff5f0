mod common;

use common::*;
use dialogue_synth::adapt::{
    adapt_corpus, adapt_dialogue, closing_turn, closing_turn_by_text, concat, concat_at, concat_by_text, AdaptError,
    AdaptOutcome, ConcatError, DomainMapping,
};
use dialogue_synth::builtin;
use dialogue_synth::model::{validate_dialogue, Dialogue, SlotValue};
use dialogue_synth::ontology::SlotKind;
use dialogue_synth::synthesizer::{synthesize, SynthesisParams};

fn one_turn(user: &str, slots: &[(&str, SlotValue)]) -> Dialogue {
    Dialogue {
        id: "SYN-restaurant-000001".into(),
        turns: vec![turn("", user, state("SearchRequest", "restaurant", slots), "start_search", "search", &[])],
    }
}

fn adapted(o: AdaptOutcome) -> Dialogue {
    match o {
        AdaptOutcome::Adapted(d) => d,
        AdaptOutcome::Skip(r) => panic!("skipped: {r}"),
    }
}

#[test]
fn restaurant_request_becomes_hotel_request() {
    let ont = builtin::ontology();
    let d = one_turn("find me a restaurant in the city center", &[("area", v("centre"))]);
    let out = adapted(adapt_dialogue(&d, &builtin::restaurant_to_hotel(), &ont, 0).unwrap());
    assert_eq!(out.turns[0].user_utterance, "find me a hotel in the city center");
    assert_eq!(out.turns[0].end_state.domain, "hotel");
    assert_eq!(out.turns[0].end_state.slots.get("area"), Some(&v("centre")));
    assert_eq!(out.id, "SYN-hotel-000001");
}

#[test]
fn identity_mapping_changes_nothing() {
    let ont = builtin::ontology();
    let d = booking_dialogue();
    let m = DomainMapping::identity(&ont, "restaurant").unwrap();
    assert_eq!(adapted(adapt_dialogue(&d, &m, &ont, 3).unwrap()), d);
}

#[test]
fn unmapped_slot_skips_the_dialogue() {
    let ont = builtin::ontology();
    let out = adapt_dialogue(&booking_dialogue(), &builtin::restaurant_to_hotel(), &ont, 0).unwrap();
    assert_eq!(out, AdaptOutcome::Skip("unmapped slot: food".into()));
}

#[test]
fn mapped_name_is_replaced_consistently() {
    let ont = builtin::ontology();
    let name = ("name", v("Curry Garden"));
    let d = Dialogue {
        id: "x".into(),
        turns: vec![
            turn("", "I want Curry Garden.", state("SearchRequest", "restaurant", std::slice::from_ref(&name)), "a", "a", &[]),
            turn(
                "Curry Garden is nice. Curry Gardens are rare.",
                "Book Curry Garden.",
                state("SearchRequest", "restaurant", &[name.clone(), ("book day", v("monday"))]),
                "b",
                "b",
                &[("n", pair("name", v("Curry Garden")))],
            ),
        ],
    };
    let out = adapted(adapt_dialogue(&d, &builtin::restaurant_to_hotel(), &ont, 0).unwrap());
    assert_eq!(out.turns[0].user_utterance, "I want Acorn Guest House.");
    assert_eq!(out.turns[1].agent_utterance, "Acorn Guest House is nice. Curry Gardens are rare.");
    assert_eq!(out.turns[1].user_utterance, "Book Acorn Guest House.");
    for t in &out.turns {
        assert_eq!(t.end_state.slots.get("name"), Some(&v("Acorn Guest House")));
    }
    let caps = &out.turns[1].provenance.as_ref().unwrap().capture_bindings;
    assert_eq!(caps["n"], pair("name", v("Acorn Guest House")));
    assert_eq!(out.id, "x-hotel");
}

#[test]
fn value_missing_from_text_is_skipped() {
    let ont = builtin::ontology();
    let d = one_turn("a table please", &[("name", v("Curry Garden"))]);
    let out = adapt_dialogue(&d, &builtin::restaurant_to_hotel(), &ont, 0).unwrap();
    assert_eq!(out, AdaptOutcome::Skip("value not found in text: Curry Garden".into()));
}

#[test]
fn wrong_source_domain_and_unknown_slot_are_errors() {
    let ont = builtin::ontology();
    let mut d = one_turn("x", &[]);
    d.turns[0].end_state.domain = "taxi".into();
    assert!(matches!(
        adapt_dialogue(&d, &builtin::restaurant_to_hotel(), &ont, 0),
        Err(AdaptError::WrongDomain { .. })
    ));
    let mut m = builtin::restaurant_to_hotel();
    m.slot_map.insert("food".into(), "cuisine".into());
    assert!(matches!(adapt_dialogue(&booking_dialogue(), &m, &ont, 0), Err(AdaptError::UnknownSlot { .. })));
}

#[test]
fn adapted_corpus_keeps_structure_and_uses_target_values() {
    let (model, ont, bg) = restaurant();
    let params = SynthesisParams {
        first_turn_max_depth: 4,
        first_turn_pruning: 400,
        max_depth: 4,
        pruning_size: 40,
        working_set_size: 300,
        seed: 2,
        ..SynthesisParams::default()
    };
    let corpus = synthesize(&model, &bg, &params).unwrap();
    let (out, skipped) = adapt_corpus(&corpus, &builtin::restaurant_to_hotel(), &ont, 9).unwrap();
    assert_eq!(out.len() + skipped.len(), corpus.len());
    assert!(!out.is_empty(), "nothing adapted, reasons {skipped:?}");
    assert_eq!(out.metadata.domain, "hotel");
    let hotel = ont.domain("hotel").unwrap();
    let mut src = corpus.dialogues.iter();
    for d in &out.dialogues {
        let orig = src.find(|o| o.id.replacen("-restaurant-", "-hotel-", 1) == d.id).expect("source dialogue");
        assert_eq!(d.turns.len(), orig.turns.len());
        for (a, b) in d.turns.iter().zip(&orig.turns) {
            assert_eq!(a.end_state.abstract_state, b.end_state.abstract_state);
            assert_eq!(a.end_state.domain, "hotel");
            for (k, v) in &a.end_state.slots {
                let spec = hotel.slot(k).unwrap_or_else(|| panic!("slot {k} not in hotel"));
                if let (SlotKind::Categorical, SlotValue::Value(x)) = (spec.kind, v) {
                    assert!(spec.values.contains(x), "{k}={x}");
                }
            }
        }
        assert!(validate_dialogue(d, &model, None).is_valid());
    }
    for (_, reason) in &skipped {
        assert!(reason.starts_with("unmapped slot") || reason.starts_with("value not found"), "{reason}");
    }
    let again = adapt_corpus(&corpus, &builtin::restaurant_to_hotel(), &ont, 9).unwrap();
    assert_eq!(again.0, out);
}

/// Taxi request: destination, then departure time, then goodbye.
fn taxi(greeting: bool) -> Dialogue {
    let dest = ("destination", v("Kings College"));
    let leave = ("leave at", v("11:30"));
    let mut turns = Vec::new();
    if greeting {
        turns.push(turn("", "Hello.", state("Greet", "taxi", &[]), "start_greet", "greet", &[]));
    }
    turns.extend([
        turn("", "I need a taxi to Kings College.", state("SearchRequest", "taxi", std::slice::from_ref(&dest)), "a", "a", &[]),
        turn(
            "When do you want to leave?",
            "At 11:30.",
            state("CloseConversation", "taxi", &[dest.clone(), leave.clone()]),
            "b",
            "b",
            &[],
        ),
        turn("Anything else?", "No, bye.", state("End", "taxi", &[dest, leave]), "c", "c", &[]),
    ]);
    Dialogue { id: "taxi-1".into(), turns }
}

#[test]
fn restaurant_then_taxi() {
    let model = builtin::model();
    let first = booking_dialogue();
    assert_eq!(closing_turn(&first, &model), Some(4));
    assert_eq!(closing_turn_by_text(&first), Some(4));
    let second = taxi(false);
    let out = concat(&first, &second, &model, "multi-1").unwrap();
    assert_eq!(out.id, "multi-1");
    assert_eq!(out.turns.len(), 5 + second.turns.len());
    assert_eq!(out.domains(), vec!["restaurant".to_string(), "taxi".to_string()]);
    assert_eq!(out.turns[5].agent_utterance, first.turns[5].agent_utterance);
    assert_eq!(out.turns[5].user_utterance, second.turns[0].user_utterance);
    assert!(out.turns.iter().all(|t| t.provenance.is_none()));

    let last = &out.turns.last().unwrap().end_state;
    assert_eq!(last.abstract_state, "End");
    let mut want: Vec<(String, SlotValue)> = Vec::new();
    for (d, s) in [("restaurant", &first.turns[4].end_state), ("taxi", &second.turns[2].end_state)] {
        want.extend(s.slots.iter().map(|(k, v)| (format!("{d}-{k}"), v.clone())));
    }
    want.sort();
    let got: Vec<(String, SlotValue)> = last.slots.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    assert_eq!(got, want);
    assert_eq!(concat_by_text(&first, &second, "multi-1").unwrap(), out);
}

#[test]
fn greeting_of_second_dialogue_is_dropped() {
    let with = concat_at(&booking_dialogue(), 4, &taxi(true), "m").unwrap();
    let without = concat_at(&booking_dialogue(), 4, &taxi(false), "m").unwrap();
    assert_eq!(with, without);
}

#[test]
fn concat_errors() {
    let model = builtin::model();
    let first = booking_dialogue();
    assert_eq!(concat(&first, &first, &model, "x").unwrap_err(), ConcatError::SameDomain("restaurant".into()));
    let mut short = first.clone();
    short.turns.truncate(3);
    assert_eq!(concat(&short, &taxi(false), &model, "x").unwrap_err(), ConcatError::NoClosing("booking".into()));
    let mut greet_only = taxi(true);
    greet_only.turns.truncate(1);
    assert_eq!(concat_at(&first, 4, &greet_only, "x").unwrap_err(), ConcatError::TooShort("taxi-1".into()));
    let multi = concat(&first, &taxi(false), &model, "m").unwrap();
    assert!(matches!(concat(&multi, &taxi(false), &model, "y"), Err(ConcatError::MultiDomain(_))));
}
