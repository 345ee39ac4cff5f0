mod common;

use common::*;
use dialogue_synth::builtin;
use dialogue_synth::expander::{expand_nonterminal, expand_turn, ExpansionParams};
use dialogue_synth::grammar::{
    bind_ontology, eval_action, parse_template_str, parse_templates, ActionOutcome, BindError, GrammarError, Item,
    ProductionKind, SemValue, TemplateSource,
};
use dialogue_synth::model::SlotValue;
use dialogue_synth::ontology::{load_ontology, Ontology};

pub const SLOT_QUESTION_GRAMMAR: &str = r#"
rule NP := ADJ_SLOT@adj_slot NP@np => union($np, $adj_slot) ;
rule NP := NP@np PREP_SLOT@prep_slot => union($np, $prep_slot) ;
rule NP := "restaurant" => empty ;

rule ADJ_SLOT := FOOD@x | PRICE@x => $x ;
rule PREP_SLOT := "in the" AREA@x "of town" => $x ;

values NAME from slot name => pair(name, $value) ;
values FOOD from slot food => pair(food, $value) ;
values AREA from slot area => pair(area, $value) ;
values PRICE from slot price => pair(price, $value) ;

turn slot_question on search_propose_slot_question :=
    "How about" NAME@name "?" "It is a" NP@np "." "<sep>" "Is it" ADJ_SLOT@adj_slot "?"
    action {
        require disjoint($adj_slot, union(state.slots, $np)) ;
        abstract SlotQuestion ;
        set $adj_slot.name "?" ;
    } ;
"#;

pub const SLOT_QUESTION_ONTOLOGY: &str = r#"{"domains": {"restaurant": {
  "subjects": ["restaurant"],
  "slots": [
    {"name": "name", "kind": "open", "values": ["Curry Garden"]},
    {"name": "food", "kind": "categorical", "values": ["Italian", "Indian"]},
    {"name": "area", "kind": "categorical", "values": ["north", "south"]},
    {"name": "price", "kind": "categorical", "values": ["cheap", "expensive"]}
  ]}}}"#;

fn sq_ontology() -> Ontology {
    load_ontology(SLOT_QUESTION_ONTOLOGY).unwrap()
}

fn sq_bound() -> dialogue_synth::grammar::BoundGrammar {
    bind_ontology(&parse_template_str(SLOT_QUESTION_GRAMMAR).unwrap(), &builtin::model(), &sq_ontology(), "restaurant").unwrap()
}

fn search_state() -> dialogue_synth::ConcreteState {
    state(
        "SearchRequest",
        "restaurant",
        &[("food", v("Indian")), ("area", v("south")), ("name", v("Curry Garden"))],
    )
}

#[test]
fn slot_question_source_parses_into_one_turn_and_phrase_rules() {
    let g = parse_template_str(SLOT_QUESTION_GRAMMAR).unwrap();
    assert_eq!(g.turn_templates().count(), 1);
    assert_eq!(g.template_ids(), vec!["slot_question"]);
    let lhs: Vec<&str> = g.phrase_productions().map(|p| p.lhs.as_str()).collect();
    assert_eq!(lhs.iter().filter(|l| **l == "NP").count(), 3);
    // The alternation becomes two productions sharing one action.
    assert_eq!(lhs.iter().filter(|l| **l == "ADJ_SLOT").count(), 2);
    assert_eq!(lhs.iter().filter(|l| **l == "PREP_SLOT").count(), 1);
    assert!(g.hooks.iter().any(|h| h.nonterminal == "NAME"));
    let t = g.turn_templates().next().unwrap();
    assert_eq!(t.kind, ProductionKind::Turn);
    let meta = t.turn.as_ref().unwrap();
    assert_eq!(meta.transition_id, "search_propose_slot_question");
    // "How about" NAME "?" "It is a" NP "." precede the delimiter.
    assert_eq!(meta.agent_len, 6);
}

#[test]
fn binding_instantiates_value_productions() {
    let bg = sq_bound();
    let food = &bg.nonterminals()[bg.nonterminal_index("FOOD").unwrap()];
    let got: Vec<(String, SemValue)> = food
        .productions
        .iter()
        .map(|p| {
            let text = p
                .items
                .iter()
                .filter_map(|i| match i {
                    Item::Literal(s) => Some(s.clone()),
                    _ => None,
                })
                .collect::<Vec<_>>()
                .join(" ");
            (text, p.constant.clone().expect("hook productions are constant"))
        })
        .collect();
    assert_eq!(
        got,
        vec![
            ("Italian".to_string(), pair("food", v("Italian"))),
            ("Indian".to_string(), pair("food", v("Indian"))),
        ]
    );
}

#[test]
fn binding_two_domains_gives_independent_grammars() {
    let g = builtin::grammar();
    let (m, o) = (builtin::model(), builtin::ontology());
    let r1 = bind_ontology(&g, &m, &o, "restaurant").unwrap();
    let h = bind_ontology(&g, &m, &o, "hotel").unwrap();
    let r2 = bind_ontology(&g, &m, &o, "restaurant").unwrap();
    assert_eq!(r1.domain(), "restaurant");
    assert_eq!(h.domain(), "hotel");
    assert_ne!(r1.hash(), h.hash());
    assert_eq!(r1.hash(), r2.hash());
    assert!(r1.nonterminal_index("FOOD").is_some());
    assert!(h.nonterminal_index("STARS").is_some());
}

#[test]
fn builtin_grammar_covers_every_transition() {
    let (model, _, bg) = restaurant();
    for t in model.transitions() {
        assert!(bg.has_templates(&t.id), "no template for {}", t.id);
    }
}

#[test]
fn self_recursive_rule_is_unproductive() {
    match parse_template_str("rule A := A@a => $a ;") {
        Err(GrammarError::Unproductive { name, cycle }) => {
            assert_eq!(name, "A");
            assert!(cycle.contains(&"A".to_string()));
        }
        other => panic!("expected unproductive error, got {other:?}"),
    }
}

#[test]
fn single_literal_rule_gives_one_production() {
    let g = parse_template_str(r#"rule X := "hi" => empty ;"#).unwrap();
    assert_eq!(g.productions.len(), 1);
    assert_eq!(g.productions[0].lhs, "X");
}

#[test]
fn syntax_error_reports_position() {
    match parse_template_str("rule X := \"hi\"\n  => => ;") {
        Err(GrammarError::Parse { loc, .. }) => {
            assert_eq!(loc.line, 2);
            assert_eq!(loc.col, 6);
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    let err = parse_template_str("rule X := \"unterminated ;").unwrap_err();
    assert!(err.to_string().starts_with("<input>:1:"), "{err}");
}

#[test]
fn unknown_nonterminal_is_reported() {
    match parse_template_str("rule X := Y@y => $y ;") {
        Err(GrammarError::UnknownNonTerminal { name, .. }) => assert_eq!(name, "Y"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unbound_capture_is_reported() {
    let src = r#"rule X := "a" => empty ; rule Y := X@x => $z ;"#;
    match parse_template_str(src) {
        Err(GrammarError::UnboundCapture { capture, .. }) => assert_eq!(capture, "z"),
        other => panic!("{other:?}"),
    }
    // Every alternative of a group must bind what the action reads.
    let src = r#"rule X := "a" => empty ; rule Y := ( X@x | "b" ) => $x ;"#;
    assert!(matches!(parse_template_str(src), Err(GrammarError::UnboundCapture { .. })));
}

#[test]
fn duplicate_capture_needs_disambiguation() {
    let src = r#"rule X := "a" => empty ; rule Y := X X => empty ;"#;
    assert!(matches!(parse_template_str(src), Err(GrammarError::DuplicateCapture { .. })));
    let ok = r#"rule X := "a" => empty ; rule Y := X@p X@q => empty ;"#;
    assert!(parse_template_str(ok).is_ok());
}

#[test]
fn turn_template_needs_exactly_one_delimiter() {
    let none = r#"turn t on start_greet := "hi" action { abstract Greet ; } ;"#;
    assert!(matches!(parse_template_str(none), Err(GrammarError::MissingDelimiter { .. })));
    let two = r#"turn t on start_greet := "<sep>" "hi" "<sep>" action { abstract Greet ; } ;"#;
    assert!(matches!(parse_template_str(two), Err(GrammarError::MissingDelimiter { .. })));
}

#[test]
fn duplicate_template_ids_are_rejected() {
    let src = r#"
        turn t on start_greet := "<sep>" "hi" action { abstract Greet ; } ;
        turn t on start_greet := "<sep>" "hello" action { abstract Greet ; } ;"#;
    assert!(matches!(parse_template_str(src), Err(GrammarError::DuplicateTemplate { .. })));
}

#[test]
fn reserved_token_inside_literal_is_rejected() {
    let src = r#"rule X := "a <sep> b" => empty ;"#;
    assert!(matches!(parse_template_str(src), Err(GrammarError::ReservedToken { .. })));
}

#[test]
fn errors_name_the_source_file() {
    let sources = vec![
        TemplateSource { name: "ok.tmpl".into(), text: r#"rule X := "a" => empty ;"#.into() },
        TemplateSource { name: "bad.tmpl".into(), text: "rule Y := ;;".into() },
    ];
    let err = parse_templates(&sources).unwrap_err();
    assert!(err.to_string().starts_with("bad.tmpl:1:"), "{err}");
}

#[test]
fn binding_rejects_unknown_slot_and_transition() {
    let model = builtin::model();
    let ont = sq_ontology();
    let g = parse_template_str("values X from slot colour => pair(colour, $value) ;").unwrap();
    match bind_ontology(&g, &model, &ont, "restaurant") {
        Err(BindError::UnknownSlot { slot, .. }) => assert_eq!(slot, "colour"),
        other => panic!("{:?}", other.err()),
    }
    let g = parse_template_str(r#"turn t on no_such := "<sep>" "hi" action { } ;"#).unwrap();
    assert!(matches!(bind_ontology(&g, &model, &ont, "restaurant"), Err(BindError::UnknownTransition { .. })));
    let g = parse_template_str(r#"turn t on start_greet := "<sep>" "hi" action { abstract End ; } ;"#).unwrap();
    assert!(matches!(bind_ontology(&g, &model, &ont, "restaurant"), Err(BindError::AbstractMismatch { .. })));
}

#[test]
fn empty_value_list_is_an_error_naming_the_slot() {
    let doc = SLOT_QUESTION_ONTOLOGY.replace(r#""values": ["Italian", "Indian"]"#, r#""values": []"#);
    let err = load_ontology(&doc).unwrap_err();
    assert!(err.to_string().contains("`food`"), "{err}");
    let mut ont = sq_ontology();
    ont.domains.get_mut("restaurant").unwrap().slots[1].values.clear();
    let err = bind_ontology(&parse_template_str(SLOT_QUESTION_GRAMMAR).unwrap(), &builtin::model(), &ont, "restaurant").unwrap_err();
    assert!(err.to_string().contains("food"), "{err}");
}

#[test]
fn slot_question_action_requests_the_adjective_slot() {
    let bg = sq_bound();
    let action = &bg.template("slot_question").unwrap().action;
    let caps = |adj: SemValue| {
        [
            ("name".to_string(), pair("name", v("Curry Garden"))),
            ("np".to_string(), set(&[("food", v("Indian")), ("area", v("south"))])),
            ("adj_slot".to_string(), adj),
        ]
        .into_iter()
        .collect()
    };
    let out = eval_action(action, &search_state(), &caps(pair("price", v("expensive")))).unwrap();
    let mut expected = search_state();
    expected.abstract_state = "SlotQuestion".into();
    expected.slots.insert("price".into(), SlotValue::Requested);
    assert_eq!(out, ActionOutcome::Accept(expected));

    let mut priced = search_state();
    priced.slots.insert("price".into(), v("cheap"));
    assert_eq!(eval_action(action, &priced, &caps(pair("price", v("expensive")))).unwrap(), ActionOutcome::Reject);
    // Asking about a slot the agent just described is rejected as well.
    assert_eq!(eval_action(action, &search_state(), &caps(pair("food", v("Italian")))).unwrap(), ActionOutcome::Reject);
}

#[test]
fn empty_action_is_identity() {
    let g = parse_template_str(r#"turn t on search_propose_reject := "a" "<sep>" "b" action { } ;"#).unwrap();
    let bg = bind_ontology(&g, &builtin::model(), &sq_ontology(), "restaurant").unwrap();
    let s = search_state();
    let out = eval_action(&bg.template("t").unwrap().action, &s, &Default::default()).unwrap();
    assert_eq!(out, ActionOutcome::Accept(s));
}

#[test]
fn slot_question_noun_phrase_is_derived() {
    let bg = sq_bound();
    let ders = expand_nonterminal(&bg, "NP", &ExpansionParams::new(4, 100_000, 0)).unwrap();
    let d = ders
        .iter()
        .find(|d| d.surface == "Indian restaurant in the south of town")
        .expect("noun phrase derived");
    assert_eq!(d.value, set(&[("food", v("Indian")), ("area", v("south"))]));
    // Every rule application adds one level; value phrases sit at depth 0.
    assert_eq!(d.depth, 3);
    let shallow = expand_nonterminal(&bg, "NP", &ExpansionParams::new(2, 100_000, 0)).unwrap();
    assert!(shallow.iter().any(|d| d.surface == "Indian restaurant"));
    assert!(shallow.iter().any(|d| d.surface == "restaurant in the south of town"));
    assert!(shallow.iter().all(|d| d.depth <= 2 && d.surface != "Indian restaurant in the south of town"));
    let lit = parse_template_str(r#"rule X := "hi" => empty ;"#).unwrap();
    let lit = bind_ontology(&lit, &builtin::model(), &sq_ontology(), "restaurant").unwrap();
    let ders = expand_nonterminal(&lit, "X", &ExpansionParams::new(5, 7, 1)).unwrap();
    assert_eq!(ders.len(), 1);
    assert_eq!(ders[0].depth, 0);
    assert!(expand_nonterminal(&lit, "Y", &ExpansionParams::new(5, 7, 1)).is_err());
}

#[test]
fn slot_question_turn_is_realized() {
    let bg = sq_bound();
    let model = builtin::model();
    let t = model.transition("search_propose_slot_question").unwrap();
    let state = state("SearchRequest", "restaurant", &[("food", v("Indian")), ("area", v("south"))]);
    let cands = expand_turn(&bg, t, &state, &ExpansionParams::new(4, 100_000, 0)).unwrap();
    let c = cands
        .iter()
        .find(|c| c.agent_utterance == "How about Curry Garden? It is an Indian restaurant in the south of town.")
        .expect("price question present");
    assert!(cands.iter().any(|c| c.user_utterance == "Is it expensive?"));
    assert_eq!(c.transition_id, "search_propose_slot_question");
    assert_eq!(c.template_id, "slot_question");
    let asked = cands
        .iter()
        .find(|c| c.agent_utterance == "How about Curry Garden? It is an Indian restaurant in the south of town." && c.user_utterance == "Is it expensive?")
        .unwrap();
    assert_eq!(asked.new_state.slots.get("price"), Some(&SlotValue::Requested));
    assert_eq!(asked.new_state.abstract_state, "SlotQuestion");

    // Once price is known, no candidate asks about it.
    let mut priced = state.clone();
    priced.slots.insert("price".into(), v("cheap"));
    let cands = expand_turn(&bg, t, &priced, &ExpansionParams::new(4, 100_000, 0)).unwrap();
    assert!(cands.iter().all(|c| !c.user_utterance.contains("expensive") && !c.user_utterance.contains("cheap")));

    let other = model.transition("search_propose_accept").unwrap();
    assert!(expand_turn(&bg, other, &state, &ExpansionParams::new(4, 100_000, 0)).unwrap().is_empty());
}
