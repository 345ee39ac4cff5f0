//! Declarative semantic actions: guards, effects and result expressions.
//!
//! Captures are referred to by index into [`SemanticAction::captures`].

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::SemValue;
use crate::model::{ConcreteState, SlotValue};

/// A set of slots a guard talks about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    StateSlots,
    Capture(usize),
    /// A literal slot name; it has a name but no value.
    Slot(String),
    Union(Box<Operand>, Box<Operand>),
}

/// A text a guard can compare against a literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueRef {
    /// `$x` or `$x.value`: scalar text or the slot value(s) of the capture.
    Capture(usize),
    /// `state.slots[$x]`: the state's value for every slot of the capture.
    StateOf(usize),
    /// `state.slots[name]`.
    StateSlot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Guard {
    /// None of the operand's slots is in the state.
    Absent(Operand),
    /// All of the operand's slots are in the state.
    Present(Operand),
    /// The two operands share no slot name.
    Disjoint(Operand, Operand),
    /// Every slot of the first operand appears in the second with the same value.
    Subset(Operand, Operand),
    Equals(ValueRef, String),
    Not(Box<Guard>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotTarget {
    /// Every slot named by the capture.
    Capture(usize),
    Named(String),
    /// Every slot whose value is currently `Requested`.
    Requested,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NewValue {
    Requested,
    DontCare,
    Literal(String),
    /// The capture's own value for the slot being set.
    CaptureValue(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    SetAbstract(String),
    SetSlot(SlotTarget, NewValue),
    Merge(usize),
    Clear(SlotTarget),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairValue {
    Capture(usize),
    Literal(String),
    DontCare,
    Requested,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResultExpr {
    Capture(usize),
    /// Strict union: rejects when both sides mention the same slot.
    Union(Box<ResultExpr>, Box<ResultExpr>),
    Pair(String, PairValue),
    Empty,
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SemanticAction {
    pub captures: Vec<String>,
    pub guards: Vec<Guard>,
    pub effects: Vec<Effect>,
    pub result: Option<ResultExpr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionOutcome {
    Accept(ConcreteState),
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("capture `{0}` is not bound")]
    Unbound(String),
    #[error("capture `{capture}` holds a {found} where slots are required")]
    NotSlots { capture: String, found: super::ValueKind },
    #[error("capture `{capture}` has no value for slot `{slot}`")]
    NoValue { capture: String, slot: String },
}

pub(crate) trait Env {
    fn get(&self, i: usize) -> Result<&SemValue, ActionError>;
    fn name(&self, i: usize) -> String;
}

/// Positional environment: the i-th capture is the i-th value.
pub(crate) struct Positional<'a, 'b> {
    pub names: &'a [String],
    pub values: &'b [&'b SemValue],
}

impl Env for Positional<'_, '_> {
    fn get(&self, i: usize) -> Result<&SemValue, ActionError> {
        self.values.get(i).copied().ok_or_else(|| ActionError::Unbound(self.name(i)))
    }
    fn name(&self, i: usize) -> String {
        self.names.get(i).cloned().unwrap_or_else(|| format!("#{i}"))
    }
}

struct Named<'a> {
    names: &'a [String],
    values: Vec<Option<&'a SemValue>>,
}

impl Env for Named<'_> {
    fn get(&self, i: usize) -> Result<&SemValue, ActionError> {
        self.values
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| ActionError::Unbound(self.name(i)))
    }
    fn name(&self, i: usize) -> String {
        self.names.get(i).cloned().unwrap_or_else(|| format!("#{i}"))
    }
}

fn slots_of<E: Env + ?Sized>(env: &E, i: usize) -> Result<&SemValue, ActionError> {
    let v = env.get(i)?;
    match v {
        SemValue::Scalar(_) => Err(ActionError::NotSlots {
            capture: env.name(i),
            found: v.kind(),
        }),
        _ => Ok(v),
    }
}

/// Calls `f` on every slot of the operand; stops early when `f` returns false.
/// Returns whether iteration ran to completion.
fn each_slot<E: Env + ?Sized>(
    op: &Operand,
    state: &ConcreteState,
    env: &E,
    f: &mut dyn FnMut(&str, Option<&SlotValue>) -> bool,
) -> Result<bool, ActionError> {
    Ok(match op {
        Operand::StateSlots => state.slots.iter().all(|(n, v)| f(n, Some(v))),
        Operand::Capture(i) => slots_of(env, *i)?.slots().all(|(n, v)| f(n, Some(v))),
        Operand::Slot(n) => f(n, None),
        Operand::Union(a, b) => each_slot(a, state, env, f)? && each_slot(b, state, env, f)?,
    })
}

fn lookup<'s, E: Env + ?Sized>(
    op: &'s Operand,
    state: &'s ConcreteState,
    env: &'s E,
    name: &str,
) -> Result<Option<Option<&'s SlotValue>>, ActionError> {
    Ok(match op {
        Operand::StateSlots => state.slots.get(name).map(Some),
        Operand::Capture(i) => slots_of(env, *i)?.get(name).map(Some),
        Operand::Slot(n) => (n == name).then_some(None),
        Operand::Union(a, b) => match lookup(a, state, env, name)? {
            Some(v) => Some(v),
            None => lookup(b, state, env, name)?,
        },
    })
}

fn all_texts_equal<'a>(mut it: impl Iterator<Item = &'a SlotValue>, lit: &str) -> bool {
    let mut any = false;
    let ok = it.all(|v| {
        any = true;
        v.text() == lit
    });
    any && ok
}

pub(crate) fn eval_guard<E: Env + ?Sized>(
    g: &Guard,
    state: &ConcreteState,
    env: &E,
) -> Result<bool, ActionError> {
    match g {
        Guard::Absent(op) => each_slot(op, state, env, &mut |n, _| !state.slots.contains_key(n)),
        Guard::Present(op) => each_slot(op, state, env, &mut |n, _| state.slots.contains_key(n)),
        Guard::Disjoint(a, b) => {
            let mut err = None;
            let ok = each_slot(a, state, env, &mut |n, _| match lookup(b, state, env, n) {
                Ok(found) => found.is_none(),
                Err(e) => {
                    err = Some(e);
                    false
                }
            })?;
            err.map_or(Ok(ok), Err)
        }
        Guard::Subset(a, b) => {
            let mut err = None;
            let ok = each_slot(a, state, env, &mut |n, v| match lookup(b, state, env, n) {
                Ok(Some(Some(w))) => v == Some(w),
                Ok(_) => false,
                Err(e) => {
                    err = Some(e);
                    false
                }
            })?;
            err.map_or(Ok(ok), Err)
        }
        Guard::Equals(r, lit) => Ok(match r {
            ValueRef::Capture(i) => match env.get(*i)? {
                SemValue::Scalar(t) => t == lit,
                v => all_texts_equal(v.slots().map(|(_, v)| v), lit),
            },
            ValueRef::StateOf(i) => {
                let v = slots_of(env, *i)?;
                let mut any = false;
                let ok = v.slots().all(|(n, _)| {
                    any = true;
                    state.slots.get(n).is_some_and(|s| s.text() == lit)
                });
                any && ok
            }
            ValueRef::StateSlot(n) => state.slots.get(n).is_some_and(|s| s.text() == lit),
        }),
        Guard::Not(inner) => Ok(!eval_guard(inner, state, env)?),
    }
}

fn target_names<E: Env + ?Sized>(
    t: &SlotTarget,
    state: &ConcreteState,
    env: &E,
) -> Result<Vec<String>, ActionError> {
    Ok(match t {
        SlotTarget::Capture(i) => slots_of(env, *i)?.slots().map(|(n, _)| n.clone()).collect(),
        SlotTarget::Named(n) => vec![n.clone()],
        SlotTarget::Requested => state
            .slots
            .iter()
            .filter(|(_, v)| **v == SlotValue::Requested)
            .map(|(n, _)| n.clone())
            .collect(),
    })
}

pub(crate) fn apply_effects<E: Env + ?Sized>(
    effects: &[Effect],
    state: &mut ConcreteState,
    env: &E,
) -> Result<(), ActionError> {
    for e in effects {
        match e {
            Effect::SetAbstract(s) => state.abstract_state = s.clone(),
            Effect::SetSlot(target, value) => {
                for name in target_names(target, state, env)? {
                    let v = match value {
                        NewValue::Requested => SlotValue::Requested,
                        NewValue::DontCare => SlotValue::DontCare,
                        NewValue::Literal(s) => SlotValue::Value(s.clone()),
                        NewValue::CaptureValue(i) => match env.get(*i)? {
                            SemValue::Scalar(t) => SlotValue::Value(t.clone()),
                            SemValue::Pair(_, v) => v.clone(),
                            set @ SemValue::Set(_) => set.get(&name).cloned().ok_or_else(|| {
                                ActionError::NoValue {
                                    capture: env.name(*i),
                                    slot: name.clone(),
                                }
                            })?,
                        },
                    };
                    state.slots.insert(name, v);
                }
            }
            Effect::Merge(i) => {
                for (n, v) in slots_of(env, *i)?.slots() {
                    state.slots.insert(n.clone(), v.clone());
                }
            }
            Effect::Clear(target) => {
                for name in target_names(target, state, env)? {
                    state.slots.remove(&name);
                }
            }
        }
    }
    Ok(())
}

/// Evaluates a result expression; `None` means the strict union rejected.
pub(crate) fn eval_result<E: Env + ?Sized>(
    r: &ResultExpr,
    env: &E,
) -> Result<Option<SemValue>, ActionError> {
    Ok(match r {
        ResultExpr::Capture(i) => Some(env.get(*i)?.clone()),
        ResultExpr::Empty => Some(SemValue::empty()),
        ResultExpr::Text(t) => Some(SemValue::Scalar(t.clone())),
        ResultExpr::Pair(slot, pv) => {
            let v = match pv {
                PairValue::Literal(s) => SlotValue::Value(s.clone()),
                PairValue::DontCare => SlotValue::DontCare,
                PairValue::Requested => SlotValue::Requested,
                PairValue::Capture(i) => match env.get(*i)? {
                    SemValue::Scalar(t) => SlotValue::Value(t.clone()),
                    SemValue::Pair(_, v) => v.clone(),
                    s @ SemValue::Set(_) => s.get(slot).cloned().ok_or_else(|| ActionError::NoValue {
                        capture: env.name(*i),
                        slot: slot.clone(),
                    })?,
                },
            };
            Some(SemValue::Pair(slot.clone(), v))
        }
        ResultExpr::Union(a, b) => {
            let (Some(a), Some(b)) = (eval_result(a, env)?, eval_result(b, env)?) else {
                return Ok(None);
            };
            let mut out = BTreeMap::new();
            for v in [&a, &b] {
                if let SemValue::Scalar(_) = v {
                    return Err(ActionError::NotSlots {
                        capture: "union operand".into(),
                        found: v.kind(),
                    });
                }
                for (n, v) in v.slots() {
                    if out.insert(n.clone(), v.clone()).is_some() {
                        return Ok(None);
                    }
                }
            }
            Some(SemValue::Set(out))
        }
    })
}

pub(crate) fn run_action<E: Env + ?Sized>(
    action: &SemanticAction,
    state: &ConcreteState,
    env: &E,
) -> Result<ActionOutcome, ActionError> {
    for g in &action.guards {
        if !eval_guard(g, state, env)? {
            return Ok(ActionOutcome::Reject);
        }
    }
    let mut next = state.clone();
    apply_effects(&action.effects, &mut next, env)?;
    Ok(ActionOutcome::Accept(next))
}

/// Evaluates guards against `state`, then applies effects to a copy of it.
/// Captures are looked up by name.
pub fn eval_action(
    action: &SemanticAction,
    state: &ConcreteState,
    captures: &BTreeMap<String, SemValue>,
) -> Result<ActionOutcome, ActionError> {
    let env = Named {
        names: &action.captures,
        values: action.captures.iter().map(|n| captures.get(n)).collect(),
    };
    run_action(action, state, &env)
}

/// Splits guards into conjunctive atoms, distributing over unions where
/// the semantics allow it. The conjunction of atoms is equivalent to the
/// conjunction of the input guards.
pub(crate) fn guard_atoms(guards: &[Guard]) -> Vec<Guard> {
    fn split(op: &Operand) -> Vec<&Operand> {
        match op {
            Operand::Union(a, b) => {
                let mut v = split(a);
                v.extend(split(b));
                v
            }
            o => vec![o],
        }
    }
    let mut out = Vec::new();
    for g in guards {
        match g {
            Guard::Absent(o) => out.extend(split(o).into_iter().map(|o| Guard::Absent(o.clone()))),
            Guard::Present(o) => out.extend(split(o).into_iter().map(|o| Guard::Present(o.clone()))),
            Guard::Disjoint(a, b) => {
                for x in split(a) {
                    for y in split(b) {
                        out.push(Guard::Disjoint(x.clone(), y.clone()));
                    }
                }
            }
            Guard::Subset(a, b) => {
                out.extend(split(a).into_iter().map(|x| Guard::Subset(x.clone(), b.clone())))
            }
            g => out.push(g.clone()),
        }
    }
    out
}

/// Capture indices a guard reads.
pub(crate) fn guard_deps(g: &Guard) -> BTreeSet<usize> {
    fn op(o: &Operand, s: &mut BTreeSet<usize>) {
        match o {
            Operand::Capture(i) => {
                s.insert(*i);
            }
            Operand::Union(a, b) => {
                op(a, s);
                op(b, s);
            }
            _ => {}
        }
    }
    let mut s = BTreeSet::new();
    match g {
        Guard::Absent(o) | Guard::Present(o) => op(o, &mut s),
        Guard::Disjoint(a, b) | Guard::Subset(a, b) => {
            op(a, &mut s);
            op(b, &mut s);
        }
        Guard::Equals(r, _) => match r {
            ValueRef::Capture(i) | ValueRef::StateOf(i) => {
                s.insert(*i);
            }
            ValueRef::StateSlot(_) => {}
        },
        Guard::Not(g) => s = guard_deps(g),
    }
    s
}

impl SemanticAction {
    /// Rewrites capture indices through `map` and replaces the capture list.
    pub(crate) fn remap(&self, map: &[usize], captures: Vec<String>) -> SemanticAction {
        fn op(o: &Operand, m: &[usize]) -> Operand {
            match o {
                Operand::Capture(i) => Operand::Capture(m[*i]),
                Operand::Union(a, b) => Operand::Union(Box::new(op(a, m)), Box::new(op(b, m))),
                o => o.clone(),
            }
        }
        fn guard(g: &Guard, m: &[usize]) -> Guard {
            match g {
                Guard::Absent(o) => Guard::Absent(op(o, m)),
                Guard::Present(o) => Guard::Present(op(o, m)),
                Guard::Disjoint(a, b) => Guard::Disjoint(op(a, m), op(b, m)),
                Guard::Subset(a, b) => Guard::Subset(op(a, m), op(b, m)),
                Guard::Equals(r, l) => Guard::Equals(
                    match r {
                        ValueRef::Capture(i) => ValueRef::Capture(m[*i]),
                        ValueRef::StateOf(i) => ValueRef::StateOf(m[*i]),
                        r => r.clone(),
                    },
                    l.clone(),
                ),
                Guard::Not(g) => Guard::Not(Box::new(guard(g, m))),
            }
        }
        fn target(t: &SlotTarget, m: &[usize]) -> SlotTarget {
            match t {
                SlotTarget::Capture(i) => SlotTarget::Capture(m[*i]),
                t => t.clone(),
            }
        }
        fn result(r: &ResultExpr, m: &[usize]) -> ResultExpr {
            match r {
                ResultExpr::Capture(i) => ResultExpr::Capture(m[*i]),
                ResultExpr::Union(a, b) => {
                    ResultExpr::Union(Box::new(result(a, m)), Box::new(result(b, m)))
                }
                ResultExpr::Pair(s, PairValue::Capture(i)) => {
                    ResultExpr::Pair(s.clone(), PairValue::Capture(m[*i]))
                }
                r => r.clone(),
            }
        }
        SemanticAction {
            captures,
            guards: self.guards.iter().map(|g| guard(g, map)).collect(),
            effects: self
                .effects
                .iter()
                .map(|e| match e {
                    Effect::SetSlot(t, v) => Effect::SetSlot(
                        target(t, map),
                        match v {
                            NewValue::CaptureValue(i) => NewValue::CaptureValue(map[*i]),
                            v => v.clone(),
                        },
                    ),
                    Effect::Merge(i) => Effect::Merge(map[*i]),
                    Effect::Clear(t) => Effect::Clear(target(t, map)),
                    e => e.clone(),
                })
                .collect(),
            result: self.result.as_ref().map(|r| result(r, map)),
        }
    }

    /// Capture indices that must hold slot values (not scalars).
    pub(crate) fn slot_uses(&self) -> BTreeSet<usize> {
        fn op(o: &Operand, s: &mut BTreeSet<usize>) {
            match o {
                Operand::Capture(i) => {
                    s.insert(*i);
                }
                Operand::Union(a, b) => {
                    op(a, s);
                    op(b, s);
                }
                _ => {}
            }
        }
        fn guard(g: &Guard, s: &mut BTreeSet<usize>) {
            match g {
                Guard::Absent(o) | Guard::Present(o) => op(o, s),
                Guard::Disjoint(a, b) | Guard::Subset(a, b) => {
                    op(a, s);
                    op(b, s);
                }
                Guard::Equals(ValueRef::StateOf(i), _) => {
                    s.insert(*i);
                }
                Guard::Equals(..) => {}
                Guard::Not(g) => guard(g, s),
            }
        }
        fn result(r: &ResultExpr, s: &mut BTreeSet<usize>) {
            if let ResultExpr::Union(a, b) = r {
                for side in [a, b] {
                    match side.as_ref() {
                        ResultExpr::Capture(i) => {
                            s.insert(*i);
                        }
                        other => result(other, s),
                    }
                }
            }
        }
        let mut s = BTreeSet::new();
        for g in &self.guards {
            guard(g, &mut s);
        }
        for e in &self.effects {
            match e {
                Effect::SetSlot(SlotTarget::Capture(i), _)
                | Effect::Clear(SlotTarget::Capture(i))
                | Effect::Merge(i) => {
                    s.insert(*i);
                }
                _ => {}
            }
        }
        if let Some(r) = &self.result {
            result(r, &mut s);
        }
        s
    }

    /// The abstract state the effects leave behind, if they set one.
    pub fn target_state(&self) -> Option<&str> {
        self.effects.iter().rev().find_map(|e| match e {
            Effect::SetAbstract(s) => Some(s.as_str()),
            _ => None,
        })
    }
}
