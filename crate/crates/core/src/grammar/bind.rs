//! Binding a grammar to one ontology domain and a dialogue model.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use super::action::{eval_result, ActionError, Positional, SemanticAction};
use super::{
    Definition, Grammar, HookKind, Location, PatternItem, ProductionKind, RhsItem, SemValue,
    ValueKind,
};
use crate::model::{DialogueModel, SlotValue};
use crate::ontology::{Ontology, OntologyError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindError {
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("{loc}: domain `{domain}` has no slot `{slot}`")]
    UnknownSlot {
        loc: Location,
        domain: String,
        slot: String,
    },
    #[error("{loc}: template `{template}` names unknown transition `{transition}`")]
    UnknownTransition {
        loc: Location,
        template: String,
        transition: String,
    },
    #[error("{loc}: template `{template}` sets unknown state `{state}`")]
    UnknownState {
        loc: Location,
        template: String,
        state: String,
    },
    #[error("{loc}: template `{template}` ends in `{found}` but its transition leads to `{expected}`")]
    AbstractMismatch {
        loc: Location,
        template: String,
        expected: String,
        found: String,
    },
    #[error("{loc}: {source}")]
    Action { loc: Location, source: ActionError },
}

#[derive(Debug, Clone, Copy)]
pub struct BindOptions {
    /// Values taken from open, time and number slots.
    pub pool_size: usize,
}

impl Default for BindOptions {
    fn default() -> Self {
        BindOptions { pool_size: 50 }
    }
}

/// A right-hand-side element after binding; `Ref(i)` is the i-th reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    Literal(String),
    Ref(usize),
}

#[derive(Debug, Clone)]
pub struct BoundProduction {
    pub items: Vec<Item>,
    /// Non-terminal index of each reference.
    pub refs: Vec<usize>,
    pub action: SemanticAction,
    /// Precomputed value of ontology-instantiated terminals.
    pub constant: Option<SemValue>,
}

#[derive(Debug, Clone)]
pub struct BoundNonTerminal {
    pub name: Arc<str>,
    pub kind: ValueKind,
    pub productions: Vec<BoundProduction>,
}

#[derive(Debug, Clone)]
pub struct TurnTemplate {
    pub id: String,
    pub transition_id: String,
    pub items: Vec<Item>,
    /// `items[..agent_len]` is the agent half.
    pub agent_len: usize,
    pub refs: Vec<usize>,
    pub action: SemanticAction,
}

/// A grammar specialised to one domain, with turn templates indexed by transition.
#[derive(Debug, Clone)]
pub struct BoundGrammar {
    domain: String,
    nonterminals: Vec<BoundNonTerminal>,
    nt_index: HashMap<String, usize>,
    templates: Vec<TurnTemplate>,
    by_transition: BTreeMap<String, Vec<usize>>,
    model_hash: String,
    grammar_hash: String,
    hash: String,
}

pub fn bind_ontology(
    grammar: &Grammar,
    model: &DialogueModel,
    ontology: &Ontology,
    domain: &str,
) -> Result<BoundGrammar, BindError> {
    bind_ontology_with(grammar, model, ontology, domain, BindOptions::default())
}

pub fn bind_ontology_with(
    grammar: &Grammar,
    model: &DialogueModel,
    ontology: &Ontology,
    domain: &str,
    opts: BindOptions,
) -> Result<BoundGrammar, BindError> {
    // The ontology may have been built in code rather than loaded.
    ontology.validate()?;
    let spec = ontology.domain(domain)?;
    let applies = |d: &Option<String>| d.as_deref().is_none_or(|d| d == domain);

    let nt_index: HashMap<String, usize> = grammar
        .nonterminals
        .iter()
        .enumerate()
        .map(|(i, n)| (n.name.clone(), i))
        .collect();
    let mut nonterminals: Vec<BoundNonTerminal> = grammar
        .nonterminals
        .iter()
        .map(|n| BoundNonTerminal {
            name: Arc::from(n.name.as_str()),
            kind: n.value_kind,
            productions: Vec::new(),
        })
        .collect();
    let mut templates = Vec::new();

    let compile = |rhs: &[RhsItem]| -> (Vec<Item>, Vec<usize>) {
        let mut items = Vec::new();
        let mut refs = Vec::new();
        for r in rhs {
            match r {
                RhsItem::Literal(s) => items.push(Item::Literal(s.clone())),
                RhsItem::Ref { nonterminal, .. } => {
                    items.push(Item::Ref(refs.len()));
                    refs.push(nt_index[nonterminal]);
                }
            }
        }
        (items, refs)
    };

    for def in &grammar.definitions {
        match *def {
            Definition::Production(i) => {
                let p = &grammar.productions[i];
                if !applies(&p.domain) {
                    continue;
                }
                let (items, refs) = compile(&p.rhs);
                if p.kind == ProductionKind::Turn {
                    let meta = p.turn.as_ref().expect("turn metadata");
                    let t = model.transition(&meta.transition_id).ok_or_else(|| {
                        BindError::UnknownTransition {
                            loc: p.location.clone(),
                            template: meta.template_id.clone(),
                            transition: meta.transition_id.clone(),
                        }
                    })?;
                    for e in &p.action.effects {
                        if let super::Effect::SetAbstract(s) = e {
                            if model.state(s).is_none() {
                                return Err(BindError::UnknownState {
                                    loc: p.location.clone(),
                                    template: meta.template_id.clone(),
                                    state: s.clone(),
                                });
                            }
                        }
                    }
                    let ends = p.action.target_state().unwrap_or(&t.from_state);
                    if ends != t.to_state {
                        return Err(BindError::AbstractMismatch {
                            loc: p.location.clone(),
                            template: meta.template_id.clone(),
                            expected: t.to_state.clone(),
                            found: ends.to_string(),
                        });
                    }
                    let agent_len = p.rhs[..meta.agent_len].len();
                    templates.push(TurnTemplate {
                        id: meta.template_id.clone(),
                        transition_id: meta.transition_id.clone(),
                        items,
                        agent_len,
                        refs,
                        action: p.action.clone(),
                    });
                } else {
                    nonterminals[nt_index[&p.lhs]].productions.push(BoundProduction {
                        items,
                        refs,
                        action: p.action.clone(),
                        constant: None,
                    });
                }
            }
            Definition::Hook(i) => {
                let h = &grammar.hooks[i];
                if !applies(&h.domain) {
                    continue;
                }
                let nt = nt_index[&h.nonterminal];
                let slot_spec = |slot: &str| {
                    spec.slot(slot).ok_or_else(|| BindError::UnknownSlot {
                        loc: h.location.clone(),
                        domain: domain.to_string(),
                        slot: slot.to_string(),
                    })
                };
                let terminal = |text: String, value: SemValue| BoundProduction {
                    items: vec![Item::Literal(text)],
                    refs: Vec::new(),
                    action: SemanticAction::default(),
                    constant: Some(value),
                };
                let out = &mut nonterminals[nt].productions;
                match &h.kind {
                    HookKind::Subject => {
                        for s in spec.subjects.iter().filter(|s| !s.trim().is_empty()) {
                            out.push(terminal(s.clone(), SemValue::empty()));
                        }
                    }
                    HookKind::SlotName { slot, phrases } => {
                        slot_spec(slot)?;
                        for ph in phrases {
                            out.push(terminal(
                                ph.clone(),
                                SemValue::Pair(slot.clone(), SlotValue::Requested),
                            ));
                        }
                    }
                    HookKind::SlotValue {
                        slot,
                        patterns,
                        action,
                    } => {
                        let s = slot_spec(slot)?;
                        let result = action.result.as_ref().expect("hook result");
                        for pattern in patterns {
                            for v in ontology.value_pool(s, opts.pool_size) {
                                let scalar = SemValue::Scalar(v.clone());
                                let vals = [&scalar];
                                let names: Vec<String> = vec!["value".into()];
                                let env = Positional {
                                    names: &names,
                                    values: if action.captures.is_empty() { &[] } else { &vals },
                                };
                                let value = eval_result(result, &env)
                                    .map_err(|source| BindError::Action {
                                        loc: h.location.clone(),
                                        source,
                                    })?
                                    .unwrap_or_else(SemValue::empty);
                                let items = pattern
                                    .iter()
                                    .map(|p| match p {
                                        PatternItem::Literal(l) => Item::Literal(l.clone()),
                                        PatternItem::Value => Item::Literal(v.clone()),
                                    })
                                    .collect();
                                out.push(BoundProduction {
                                    items,
                                    refs: Vec::new(),
                                    action: SemanticAction::default(),
                                    constant: Some(value),
                                });
                            }
                        }
                    }
                }
            }
        }
    }

    // Non-terminals without derivations in this domain are dead; drop
    // everything that depends on them.
    let mut live: HashSet<usize> = HashSet::new();
    loop {
        let before = live.len();
        for (i, n) in nonterminals.iter().enumerate() {
            if !live.contains(&i) && n.productions.iter().any(|p| p.refs.iter().all(|r| live.contains(r))) {
                live.insert(i);
            }
        }
        if live.len() == before {
            break;
        }
    }
    for n in nonterminals.iter_mut() {
        n.productions.retain(|p| p.refs.iter().all(|r| live.contains(r)));
    }
    let before = templates.len();
    templates.retain(|t| t.refs.iter().all(|r| live.contains(r)));
    if templates.len() != before {
        log::debug!(
            "{} turn template expansions inactive in domain `{domain}`",
            before - templates.len()
        );
    }

    let mut by_transition: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, t) in templates.iter().enumerate() {
        by_transition.entry(t.transition_id.clone()).or_default().push(i);
    }

    let domain_json = serde_json::to_string(spec).expect("serializable");
    let hash = crate::sha256_hex(
        format!(
            "{}\u{0}{}\u{0}{}\u{0}{}\u{0}{}",
            grammar.hash(),
            domain,
            domain_json,
            opts.pool_size,
            model.hash()
        )
        .as_bytes(),
    );
    Ok(BoundGrammar {
        domain: domain.to_string(),
        nonterminals,
        nt_index,
        templates,
        by_transition,
        model_hash: model.hash().to_string(),
        grammar_hash: grammar.hash().to_string(),
        hash,
    })
}

impl BoundGrammar {
    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn nonterminals(&self) -> &[BoundNonTerminal] {
        &self.nonterminals
    }

    pub fn nonterminal_index(&self, name: &str) -> Option<usize> {
        self.nt_index.get(name).copied()
    }

    pub fn templates(&self) -> &[TurnTemplate] {
        &self.templates
    }

    /// Template expansions registered for a transition.
    pub fn templates_for(&self, transition_id: &str) -> impl Iterator<Item = &TurnTemplate> {
        self.by_transition
            .get(transition_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.templates[i])
    }

    pub fn has_templates(&self, transition_id: &str) -> bool {
        self.by_transition.contains_key(transition_id)
    }

    /// First expansion of the template with this id.
    pub fn template(&self, id: &str) -> Option<&TurnTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn grammar_hash(&self) -> &str {
        &self.grammar_hash
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }
}
