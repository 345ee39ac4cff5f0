mod common;

use std::collections::BTreeMap;

use common::*;
use dialogue_synth::builtin;
use dialogue_synth::expander::{expand_nonterminal, expand_turn, Derivation, ExpansionParams};
use dialogue_synth::grammar::{bind_ontology, parse_template_str, BoundGrammar, SemValue};
use dialogue_synth::model::SlotValue;
use dialogue_synth::ontology::load_ontology;
use proptest::prelude::*;

/// Shape of a toy noun-phrase grammar; the same shape drives both the DSL
/// source and the reference enumerator.
#[derive(Debug, Clone)]
struct Toy {
    foods: Vec<&'static str>,
    areas: Vec<&'static str>,
    adj_rule: bool,
    prep_rule: bool,
}

const FOODS: [&str; 3] = ["Thai", "Greek", "Sushi"];
const AREAS: [&str; 3] = ["north", "south", "east"];

impl Toy {
    fn source(&self) -> String {
        let mut s = String::from(
            "values FOOD from slot food => pair(food, $value) ;\n\
             values AREA from slot area := \"in the\" $value => pair(area, $value) ;\n\
             rule NP := \"place\" => empty ;\n",
        );
        if self.adj_rule {
            s.push_str("rule NP := FOOD@f NP@np => union($np, $f) ;\n");
        }
        if self.prep_rule {
            s.push_str("rule NP := NP@np AREA@a => union($np, $a) ;\n");
        }
        s.push_str(
            "turn want on search_propose_reject := \"How about\" NP@np \"?\" \"<sep>\" \"I want\" NP@want \".\"\n\
             action { require disjoint($want, state.slots) ; merge $want ; } ;\n",
        );
        s
    }

    fn ontology(&self) -> String {
        let list = |v: &[&str]| v.iter().map(|x| format!("\"{x}\"")).collect::<Vec<_>>().join(",");
        format!(
            r#"{{"domains": {{"toy": {{"subjects": ["place"], "slots": [
              {{"name": "food", "kind": "categorical", "values": [{}]}},
              {{"name": "area", "kind": "categorical", "values": [{}]}}]}}}}}}"#,
            list(&self.foods),
            list(&self.areas)
        )
    }

    fn bind(&self) -> BoundGrammar {
        let g = parse_template_str(&self.source()).unwrap();
        let ont = load_ontology(&self.ontology()).unwrap();
        bind_ontology(&g, &builtin::model(), &ont, "toy").unwrap()
    }

    /// Every derivation tree of NP with depth at most `max`, by direct
    /// recursion over the rules above.
    fn oracle_np(&self, max: u32) -> Vec<Flat> {
        let mut out = vec![("place".to_string(), BTreeMap::new(), 0)];
        if max == 0 {
            return out;
        }
        let smaller = self.oracle_np(max - 1);
        if self.adj_rule {
            for f in &self.foods {
                for (s, slots, d) in &smaller {
                    if let Some(u) = union(slots, "food", f) {
                        out.push((format!("{f} {s}"), u, d + 1));
                    }
                }
            }
        }
        if self.prep_rule {
            for (s, slots, d) in &smaller {
                for a in &self.areas {
                    if let Some(u) = union(slots, "area", a) {
                        out.push((format!("{s} in the {a}"), u, d + 1));
                    }
                }
            }
        }
        out
    }
}

type Flat = (String, BTreeMap<String, String>, u32);

fn union(slots: &BTreeMap<String, String>, k: &str, v: &str) -> Option<BTreeMap<String, String>> {
    if slots.contains_key(k) {
        return None;
    }
    let mut u = slots.clone();
    u.insert(k.into(), v.into());
    Some(u)
}

fn flat_value(v: &SemValue) -> BTreeMap<String, String> {
    v.slots().map(|(k, v)| (k.clone(), v.text().to_string())).collect()
}

fn flatten(ders: &[Derivation]) -> Vec<Flat> {
    let mut out: Vec<Flat> = ders.iter().map(|d| (d.surface.clone(), flat_value(&d.value), d.depth)).collect();
    out.sort();
    out
}

fn sorted(mut v: Vec<Flat>) -> Vec<Flat> {
    v.sort();
    v
}

fn full() -> Toy {
    Toy {
        foods: FOODS[..2].to_vec(),
        areas: AREAS[..2].to_vec(),
        adj_rule: true,
        prep_rule: true,
    }
}

#[test]
fn two_by_two_grammar_matches_exhaustive_enumeration() {
    let toy = full();
    let bg = toy.bind();
    let got = expand_nonterminal(&bg, "NP", &ExpansionParams::new(2, usize::MAX, 0)).unwrap();
    let want = sorted(toy.oracle_np(2));
    assert_eq!(flatten(&got), want);
    // place, 2 + 2 at depth 1, then 2*(1+2) + (1+2)*2 minus 4 strict-union clashes at depth 2.
    assert_eq!(want.len(), 1 + 4 + 8);
}

#[test]
fn derivations_are_ordered_by_depth() {
    let bg = full().bind();
    let got = expand_nonterminal(&bg, "NP", &ExpansionParams::new(3, usize::MAX, 0)).unwrap();
    assert!(got.windows(2).all(|w| w[0].depth <= w[1].depth));
}

#[test]
fn pruning_caps_each_depth_and_keeps_real_derivations() {
    let toy = full();
    let bg = toy.bind();
    let all = flatten(&expand_nonterminal(&bg, "NP", &ExpansionParams::new(3, usize::MAX, 0)).unwrap());
    let pruned = expand_nonterminal(&bg, "NP", &ExpansionParams::new(3, 3, 9)).unwrap();
    for d in 0..=3 {
        assert!(pruned.iter().filter(|x| x.depth == d).count() <= 3);
    }
    for f in flatten(&pruned) {
        assert!(all.contains(&f), "{f:?} is not a derivation");
    }
    let again = expand_nonterminal(&bg, "NP", &ExpansionParams::new(3, 3, 9)).unwrap();
    assert_eq!(flatten(&pruned), flatten(&again));
}

/// Reference turn expansion for the `want` template over the oracle NPs.
fn oracle_turns(toy: &Toy, max_depth: u32, state: &BTreeMap<String, String>) -> Vec<(String, String, BTreeMap<String, String>)> {
    // Captures use derivations strictly below the expansion depth.
    let nps = if max_depth == 0 { Vec::new() } else { toy.oracle_np(max_depth - 1) };
    let mut out = Vec::new();
    for (a, _, _) in &nps {
        for (w, slots, _) in &nps {
            if slots.keys().any(|k| state.contains_key(k)) {
                continue;
            }
            let mut next = state.clone();
            next.extend(slots.clone());
            out.push((format!("How about {a}?"), format!("I want {w}."), next));
        }
    }
    out.sort();
    out
}

fn check_turns(toy: &Toy, max_depth: u32, slots: &[(&str, &str)]) {
    let bg = toy.bind();
    let model = builtin::model();
    let t = model.transition("search_propose_reject").unwrap();
    let s = state("SearchRequest", "toy", &slots.iter().map(|(k, x)| (*k, v(x))).collect::<Vec<_>>());
    let flat_state: BTreeMap<String, String> = slots.iter().map(|(k, x)| (k.to_string(), x.to_string())).collect();
    let mut got: Vec<_> = expand_turn(&bg, t, &s, &ExpansionParams::new(max_depth, usize::MAX, 0))
        .unwrap()
        .into_iter()
        .map(|c| {
            assert_eq!(c.new_state.abstract_state, "SearchRequest");
            let flat = c.new_state.slots.iter().map(|(k, v)| (k.clone(), v.text().to_string())).collect();
            (c.agent_utterance, c.user_utterance, flat)
        })
        .collect();
    got.sort();
    assert_eq!(got, oracle_turns(toy, max_depth, &flat_state));
}

#[test]
fn turn_expansion_matches_exhaustive_enumeration() {
    check_turns(&full(), 2, &[]);
    check_turns(&full(), 3, &[("food", "Thai")]);
    check_turns(&full(), 3, &[("food", "Greek"), ("area", "south")]);
}

#[test]
fn turn_candidates_carry_their_bindings() {
    let bg = full().bind();
    let model = builtin::model();
    let t = model.transition("search_propose_reject").unwrap();
    let s = state("SearchRequest", "toy", &[]);
    let cands = expand_turn(&bg, t, &s, &ExpansionParams::new(2, usize::MAX, 0)).unwrap();
    let c = cands.iter().find(|c| c.user_utterance == "I want Thai place.").unwrap();
    assert_eq!(c.capture_bindings["want"], set(&[("food", v("Thai"))]));
    assert_eq!(c.template_id, "want");
    assert_eq!(c.new_state.slots.get("food"), Some(&SlotValue::Value("Thai".into())));
}

#[test]
fn transition_from_another_state_is_an_error() {
    let bg = full().bind();
    let model = builtin::model();
    let t = model.transition("search_propose_reject").unwrap();
    let s = state("Greet", "toy", &[]);
    assert!(expand_turn(&bg, t, &s, &ExpansionParams::new(2, 10, 0)).is_err());
}

fn toy_strategy() -> impl Strategy<Value = (Toy, u32)> {
    (1usize..=3, 1usize..=3, any::<bool>(), any::<bool>(), 0u32..=3).prop_map(|(f, a, adj, prep, d)| {
        (
            Toy {
                foods: FOODS[..f].to_vec(),
                areas: AREAS[..a].to_vec(),
                adj_rule: adj,
                prep_rule: prep,
            },
            d,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unpruned_expansion_equals_oracle((toy, depth) in toy_strategy()) {
        let bg = toy.bind();
        let got = expand_nonterminal(&bg, "NP", &ExpansionParams::new(depth, usize::MAX, 0)).unwrap();
        prop_assert_eq!(flatten(&got), sorted(toy.oracle_np(depth)));
    }

    #[test]
    fn pruned_expansion_is_a_capped_subset((toy, depth) in toy_strategy(), k in 1usize..6, seed in any::<u64>()) {
        let bg = toy.bind();
        let all = sorted(toy.oracle_np(depth));
        let got = expand_nonterminal(&bg, "NP", &ExpansionParams::new(depth, k, seed)).unwrap();
        for d in 0..=depth {
            let at = all.iter().filter(|x| x.2 == d).count();
            prop_assert!(got.iter().filter(|x| x.depth == d).count() <= k.min(at));
        }
        for f in flatten(&got) {
            prop_assert!(all.contains(&f));
        }
    }

    #[test]
    fn unpruned_turns_equal_oracle((toy, depth) in toy_strategy(), has_food in any::<bool>()) {
        let slots: Vec<(&str, &str)> = if has_food { vec![("food", toy.foods[0])] } else { Vec::new() };
        check_turns(&toy, depth, &slots);
    }
}

#[test]
fn shipped_grammar_asks_about_an_unknown_price() {
    let (model, _, bg) = restaurant();
    let t = model.transition("search_propose_slot_question").unwrap();
    let s = state(
        "SearchRequest",
        "restaurant",
        &[("food", v("indian")), ("area", v("south")), ("name", v("Curry Garden"))],
    );
    let cands = expand_turn(&bg, t, &s, &ExpansionParams::new(4, usize::MAX, 0)).unwrap();
    let c = cands
        .iter()
        .find(|c| c.user_utterance == "Is it expensive?")
        .unwrap_or_else(|| panic!("no price question among {} candidates", cands.len()));
    assert_eq!(c.new_state.abstract_state, "SlotQuestion");
    assert_eq!(c.new_state.slots.get("price range"), Some(&SlotValue::Requested));
    for k in ["food", "area", "name"] {
        assert_eq!(c.new_state.slots.get(k), s.slots.get(k));
    }
    // Slots that are already known are never asked about.
    for c in &cands {
        for k in ["food", "area"] {
            assert_eq!(c.new_state.slots.get(k), s.slots.get(k), "{}", c.user_utterance);
        }
    }
}
