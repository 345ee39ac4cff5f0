//! Bottom-up, depth-indexed expansion of non-terminals and turn templates.
//!
//! Derivations are built one depth at a time. A derivation made only of
//! literals has depth 0; any other has depth one more than its deepest child.
//! Each (non-terminal, depth) bucket is uniformly subsampled to the pruning
//! size, and each production evaluates at most `budget_factor * pruning_size`
//! child combinations per depth, chosen uniformly when there are more.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{
    guard_atoms, guard_deps, realize, sentence_case, ActionError, BoundGrammar, Env, Guard, Item, SemValue,
    TurnTemplate,
};
use crate::grammar::action_internals::{apply_effects, eval_guard, eval_result, Positional};
use crate::model::{ConcreteState, Transition};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionParams {
    pub max_depth: u32,
    pub pruning_size: usize,
    pub rng_seed: u64,
    /// Combination evaluations allowed per production per depth, as a
    /// multiple of `pruning_size`.
    pub budget_factor: usize,
}

impl ExpansionParams {
    pub const DEFAULT_BUDGET_FACTOR: usize = 10;

    pub fn new(max_depth: u32, pruning_size: usize, rng_seed: u64) -> Self {
        ExpansionParams {
            max_depth,
            pruning_size,
            rng_seed,
            budget_factor: Self::DEFAULT_BUDGET_FACTOR,
        }
    }

    /// Parameters for the opening turn of a dialogue.
    pub fn first_turn(rng_seed: u64) -> Self {
        Self::new(9, 50_000, rng_seed)
    }

    /// Parameters for every turn after the first.
    pub fn later_turns(rng_seed: u64) -> Self {
        Self::new(6, 1_000, rng_seed)
    }

    fn budget(&self) -> usize {
        self.budget_factor.saturating_mul(self.pruning_size).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExpandError {
    #[error("unknown non-terminal `{0}`")]
    UnknownNonTerminal(String),
    #[error("transition `{transition}` starts at `{expected}`, state is `{found}`")]
    NotEnabled {
        transition: String,
        expected: String,
        found: String,
    },
    #[error("pruning size must be positive")]
    ZeroPruning,
    #[error(transparent)]
    Action(#[from] ActionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub nonterminal: Arc<str>,
    pub surface: String,
    pub value: SemValue,
    pub depth: u32,
}

/// Derivations of every non-terminal up to a depth, ordered by depth, then
/// production, then child indices.
#[derive(Debug, Clone)]
pub struct DerivationTable {
    lists: Vec<Vec<Derivation>>,
    /// `ends[nt][d]` = number of derivations of `nt` with depth <= d.
    ends: Vec<Vec<usize>>,
    max_depth: u32,
}

/// Mixed-radix enumeration of index tuples.
fn decode(mut n: u128, radices: &[usize], out: &mut [u32]) {
    for j in (0..radices.len()).rev() {
        let r = radices[j] as u128;
        out[j] = (n % r) as u32;
        n /= r;
    }
}

fn product(radices: &[usize]) -> u128 {
    radices.iter().fold(1u128, |acc, &r| acc.saturating_mul(r as u128))
}

/// Draws `amount` distinct integers from `0..total` and returns them sorted.
fn sample_sorted<R: Rng>(rng: &mut R, total: u128, amount: usize) -> Vec<u128> {
    let mut picked: Vec<u128> = if total <= usize::MAX as u128 {
        index::sample(rng, total as usize, amount)
            .into_iter()
            .map(|i| i as u128)
            .collect()
    } else {
        // Floyd's algorithm for ranges beyond usize.
        let mut set = std::collections::BTreeSet::new();
        for j in (total - amount as u128)..total {
            let t = rng.gen_range(0..=j);
            if !set.insert(t) {
                set.insert(j);
            }
        }
        set.into_iter().collect()
    };
    picked.sort_unstable();
    picked
}

/// Uniform subset of `0..len` of size `min(len, amount)`, sorted.
pub(crate) fn subsample<R: Rng>(rng: &mut R, len: usize, amount: usize) -> Vec<usize> {
    if len <= amount {
        return (0..len).collect();
    }
    let mut v = index::sample(rng, len, amount).into_vec();
    v.sort_unstable();
    v
}

/// Child combinations whose deepest child has depth exactly `d - 1`, in
/// lexicographic order; subsampled to `budget` when there are more.
fn exact_depth_combos<R: Rng>(le: &[usize], lt: &[usize], budget: usize, rng: &mut R) -> Vec<Vec<u32>> {
    let k = le.len();
    // Block i: children before i shallower than d-1, child i exactly d-1,
    // children after i at most d-1. Blocks are disjoint and cover the set.
    let blocks: Vec<Vec<usize>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| match j.cmp(&i) {
                    std::cmp::Ordering::Less => lt[j],
                    std::cmp::Ordering::Equal => le[j] - lt[j],
                    std::cmp::Ordering::Greater => le[j],
                })
                .collect()
        })
        .collect();
    let sizes: Vec<u128> = blocks.iter().map(|b| product(b)).collect();
    let total: u128 = sizes.iter().fold(0u128, |a, &s| a.saturating_add(s));
    if total == 0 {
        return Vec::new();
    }
    let to_combo = |mut n: u128| -> Vec<u32> {
        let mut out = vec![0u32; k];
        for (i, b) in blocks.iter().enumerate() {
            if n < sizes[i] {
                decode(n, b, &mut out);
                out[i] += lt[i] as u32;
                return out;
            }
            n -= sizes[i];
        }
        unreachable!("index within total")
    };
    let mut combos: Vec<Vec<u32>> = if total <= budget as u128 {
        (0..total).map(to_combo).collect()
    } else {
        sample_sorted(rng, total, budget).into_iter().map(to_combo).collect()
    };
    combos.sort_unstable();
    combos
}

struct Candidate {
    production: usize,
    combo: Vec<u32>,
    value: SemValue,
}

impl DerivationTable {
    pub fn build(bg: &BoundGrammar, params: &ExpansionParams) -> Result<Self, ExpandError> {
        if params.pruning_size == 0 {
            return Err(ExpandError::ZeroPruning);
        }
        let nts = bg.nonterminals();
        let mut table = DerivationTable {
            lists: vec![Vec::new(); nts.len()],
            ends: vec![Vec::new(); nts.len()],
            max_depth: params.max_depth,
        };
        for d in 0..=params.max_depth {
            let fresh: Vec<Vec<Derivation>> = (0..nts.len())
                .into_par_iter()
                .map(|nt| table.expand_at(bg, nt, d, params))
                .collect::<Result<_, _>>()?;
            for (nt, new) in fresh.into_iter().enumerate() {
                table.lists[nt].extend(new);
                table.ends[nt].push(table.lists[nt].len());
            }
        }
        Ok(table)
    }

    fn upto(&self, nt: usize, d: i64) -> usize {
        if d < 0 {
            0
        } else {
            self.ends[nt][d as usize]
        }
    }

    fn expand_at(
        &self,
        bg: &BoundGrammar,
        nt: usize,
        d: u32,
        params: &ExpansionParams,
    ) -> Result<Vec<Derivation>, ExpandError> {
        let info = &bg.nonterminals()[nt];
        let mut rng = rng::stream(params.rng_seed, &[rng::TAG_PHRASE, nt as u64, d as u64]);
        let mut cands: Vec<Candidate> = Vec::new();
        for (pi, p) in info.productions.iter().enumerate() {
            if p.refs.is_empty() {
                if d == 0 {
                    let value = match &p.constant {
                        Some(v) => Some(v.clone()),
                        None => {
                            let env = Positional {
                                names: &p.action.captures,
                                values: &[],
                            };
                            eval_result(p.action.result.as_ref().expect("phrase result"), &env)?
                        }
                    };
                    if let Some(value) = value {
                        cands.push(Candidate {
                            production: pi,
                            combo: Vec::new(),
                            value,
                        });
                    }
                }
                continue;
            }
            if d == 0 {
                continue;
            }
            let le: Vec<usize> = p.refs.iter().map(|&c| self.upto(c, d as i64 - 1)).collect();
            let lt: Vec<usize> = p.refs.iter().map(|&c| self.upto(c, d as i64 - 2)).collect();
            let result = p.action.result.as_ref().expect("phrase result");
            for combo in exact_depth_combos(&le, &lt, params.budget(), &mut rng) {
                let values: Vec<&SemValue> = combo
                    .iter()
                    .zip(&p.refs)
                    .map(|(&i, &c)| &self.lists[c][i as usize].value)
                    .collect();
                let env = Positional {
                    names: &p.action.captures,
                    values: &values,
                };
                if let Some(value) = eval_result(result, &env)? {
                    cands.push(Candidate {
                        production: pi,
                        combo,
                        value,
                    });
                }
            }
        }
        let keep = subsample(&mut rng, cands.len(), params.pruning_size);
        let mut slots: Vec<Option<Candidate>> = cands.into_iter().map(Some).collect();
        Ok(keep
            .into_iter()
            .map(|i| {
                let c = slots[i].take().unwrap();
                let p = &info.productions[c.production];
                let surface = realize(p.items.iter().map(|it| match it {
                    Item::Literal(s) => (s.as_str(), true),
                    Item::Ref(r) => {
                        (self.lists[p.refs[*r]][c.combo[*r] as usize].surface.as_str(), false)
                    }
                }));
                Derivation {
                    nonterminal: info.name.clone(),
                    surface,
                    value: c.value,
                    depth: d,
                }
            })
            .collect())
    }

    pub fn derivations(&self, nt: usize) -> &[Derivation] {
        &self.lists[nt]
    }

    /// Derivations of `nt` with depth strictly below `depth`.
    pub fn below(&self, nt: usize, depth: u32) -> &[Derivation] {
        &self.lists[nt][..self.upto(nt, depth as i64 - 1)]
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }
}

/// All derivations of one non-terminal up to `params.max_depth`.
pub fn expand_nonterminal(
    bg: &BoundGrammar,
    nonterminal: &str,
    params: &ExpansionParams,
) -> Result<Vec<Derivation>, ExpandError> {
    let nt = bg
        .nonterminal_index(nonterminal)
        .ok_or_else(|| ExpandError::UnknownNonTerminal(nonterminal.to_string()))?;
    let mut table = DerivationTable::build(bg, params)?;
    Ok(std::mem::take(&mut table.lists[nt]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnCandidate {
    pub transition_id: String,
    pub template_id: String,
    pub agent_utterance: String,
    pub user_utterance: String,
    pub new_state: ConcreteState,
    pub capture_bindings: BTreeMap<String, SemValue>,
}

/// Guards of a template split by which captures they read.
struct CompiledGuards {
    state_only: Vec<Guard>,
    unary: Vec<Vec<Guard>>,
    multi: Vec<Guard>,
}

struct OneEnv<'a> {
    names: &'a [String],
    index: usize,
    value: &'a SemValue,
}

impl Env for OneEnv<'_> {
    fn get(&self, i: usize) -> Result<&SemValue, ActionError> {
        if i == self.index {
            Ok(self.value)
        } else {
            Err(ActionError::Unbound(self.name(i)))
        }
    }
    fn name(&self, i: usize) -> String {
        self.names.get(i).cloned().unwrap_or_default()
    }
}

/// One accepted combination: template index and child indices.
pub(crate) type PlanEntry = (u32, Vec<u32>);

/// Expands turn templates against concrete states, reusing one derivation table.
pub struct Expander<'g> {
    bg: &'g BoundGrammar,
    table: DerivationTable,
    params: ExpansionParams,
    guards: Vec<CompiledGuards>,
}

impl<'g> Expander<'g> {
    pub fn new(bg: &'g BoundGrammar, params: ExpansionParams) -> Result<Self, ExpandError> {
        let table = DerivationTable::build(bg, &params)?;
        let guards = bg
            .templates()
            .iter()
            .map(|t| {
                let mut g = CompiledGuards {
                    state_only: Vec::new(),
                    unary: vec![Vec::new(); t.refs.len()],
                    multi: Vec::new(),
                };
                for atom in guard_atoms(&t.action.guards) {
                    let deps = guard_deps(&atom);
                    match deps.len() {
                        0 => g.state_only.push(atom),
                        1 => g.unary[*deps.iter().next().unwrap()].push(atom),
                        _ => g.multi.push(atom),
                    }
                }
                g
            })
            .collect();
        Ok(Expander {
            bg,
            table,
            params,
            guards,
        })
    }

    pub fn table(&self) -> &DerivationTable {
        &self.table
    }

    pub fn params(&self) -> &ExpansionParams {
        &self.params
    }

    fn child_lists(&self, t: &TurnTemplate) -> Vec<&[Derivation]> {
        t.refs.iter().map(|&nt| self.table.below(nt, self.params.max_depth)).collect()
    }

    /// Accepted combinations of one template, in lexicographic order.
    fn plan_template<R: Rng>(
        &self,
        ti: usize,
        state: &ConcreteState,
        rng: &mut R,
    ) -> Result<Vec<Vec<u32>>, ExpandError> {
        let t = &self.bg.templates()[ti];
        let g = &self.guards[ti];
        let names = &t.action.captures;
        let empty = Positional { names, values: &[] };
        for atom in &g.state_only {
            if !eval_guard(atom, state, &empty)? {
                return Ok(Vec::new());
            }
        }
        let lists = self.child_lists(t);
        let mut filtered: Vec<Vec<u32>> = Vec::with_capacity(lists.len());
        for (i, list) in lists.iter().enumerate() {
            let mut keep = Vec::new();
            for (j, d) in list.iter().enumerate() {
                let env = OneEnv {
                    names,
                    index: i,
                    value: &d.value,
                };
                let mut ok = true;
                for atom in &g.unary[i] {
                    if !eval_guard(atom, state, &env)? {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    keep.push(j as u32);
                }
            }
            if keep.is_empty() {
                return Ok(Vec::new());
            }
            filtered.push(keep);
        }
        let radices: Vec<usize> = filtered.iter().map(Vec::len).collect();
        let total = product(&radices);
        let budget = self.params.budget();
        let picks: Box<dyn Iterator<Item = u128>> = if total <= budget as u128 {
            Box::new(0..total)
        } else {
            Box::new(sample_sorted(rng, total, budget).into_iter())
        };
        let mut digits = vec![0u32; radices.len()];
        let mut out = Vec::new();
        for n in picks {
            decode(n, &radices, &mut digits);
            let combo: Vec<u32> = digits.iter().zip(&filtered).map(|(&d, f)| f[d as usize]).collect();
            if !g.multi.is_empty() {
                let values: Vec<&SemValue> =
                    combo.iter().zip(&lists).map(|(&c, l)| &l[c as usize].value).collect();
                let env = Positional {
                    names,
                    values: &values,
                };
                let mut ok = true;
                for atom in &g.multi {
                    if !eval_guard(atom, state, &env)? {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
            }
            out.push(combo);
        }
        Ok(out)
    }

    /// Whether some template of `transition` may accept a combination in
    /// `state`. Never false when `plan` would return candidates; an
    /// inconclusive search within the budget counts as feasible.
    pub(crate) fn feasible(&self, transition: &Transition, state: &ConcreteState) -> Result<bool, ExpandError> {
        for (ti, t) in self.bg.templates().iter().enumerate() {
            if t.transition_id == transition.id && self.template_feasible(ti, state)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn template_feasible(&self, ti: usize, state: &ConcreteState) -> Result<bool, ExpandError> {
        let t = &self.bg.templates()[ti];
        let g = &self.guards[ti];
        let names = &t.action.captures;
        let empty = Positional { names, values: &[] };
        for atom in &g.state_only {
            if !eval_guard(atom, state, &empty)? {
                return Ok(false);
            }
        }
        let lists = self.child_lists(t);
        // With no multi-capture guard, one passing derivation per capture suffices.
        let first_only = g.multi.is_empty();
        let mut filtered: Vec<Vec<u32>> = Vec::with_capacity(lists.len());
        for (i, list) in lists.iter().enumerate() {
            let mut keep = Vec::new();
            for (j, d) in list.iter().enumerate() {
                let env = OneEnv {
                    names,
                    index: i,
                    value: &d.value,
                };
                let mut ok = true;
                for atom in &g.unary[i] {
                    if !eval_guard(atom, state, &env)? {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    keep.push(j as u32);
                    if first_only {
                        break;
                    }
                }
            }
            if keep.is_empty() {
                return Ok(false);
            }
            filtered.push(keep);
        }
        if first_only {
            return Ok(true);
        }
        let radices: Vec<usize> = filtered.iter().map(Vec::len).collect();
        let total = product(&radices);
        let limit = total.min(self.params.budget() as u128);
        let mut digits = vec![0u32; radices.len()];
        for n in 0..limit {
            decode(n, &radices, &mut digits);
            let values: Vec<&SemValue> = digits
                .iter()
                .zip(&filtered)
                .zip(&lists)
                .map(|((&d, f), l)| &l[f[d as usize] as usize].value)
                .collect();
            let env = Positional {
                names,
                values: &values,
            };
            let mut ok = true;
            for atom in &g.multi {
                if !eval_guard(atom, state, &env)? {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Ok(true);
            }
        }
        Ok(limit < total)
    }

    /// Accepted (template, combination) pairs for a transition, uniformly
    /// pruned to the pruning size.
    pub(crate) fn plan<R: Rng>(
        &self,
        transition: &Transition,
        state: &ConcreteState,
        rng: &mut R,
    ) -> Result<Vec<PlanEntry>, ExpandError> {
        if transition.from_state != state.abstract_state {
            return Err(ExpandError::NotEnabled {
                transition: transition.id.clone(),
                expected: transition.from_state.clone(),
                found: state.abstract_state.clone(),
            });
        }
        let mut all: Vec<PlanEntry> = Vec::new();
        for (ti, t) in self.bg.templates().iter().enumerate() {
            if t.transition_id != transition.id {
                continue;
            }
            all.extend(self.plan_template(ti, state, rng)?.into_iter().map(|c| (ti as u32, c)));
        }
        if all.len() > self.params.pruning_size {
            let keep = subsample(rng, all.len(), self.params.pruning_size);
            let mut slots: Vec<Option<PlanEntry>> = all.into_iter().map(Some).collect();
            all = keep.into_iter().map(|i| slots[i].take().unwrap()).collect();
        }
        Ok(all)
    }

    pub(crate) fn materialize(
        &self,
        entry: &PlanEntry,
        state: &ConcreteState,
    ) -> Result<TurnCandidate, ExpandError> {
        let t = &self.bg.templates()[entry.0 as usize];
        let lists = self.child_lists(t);
        let ders: Vec<&Derivation> = entry.1.iter().zip(&lists).map(|(&c, l)| &l[c as usize]).collect();
        let values: Vec<&SemValue> = ders.iter().map(|d| &d.value).collect();
        let env = Positional {
            names: &t.action.captures,
            values: &values,
        };
        let mut new_state = state.clone();
        apply_effects(&t.action.effects, &mut new_state, &env)?;
        fn piece<'a>(it: &'a Item, ders: &[&'a Derivation]) -> (&'a str, bool) {
            match it {
                Item::Literal(s) => (s.as_str(), true),
                Item::Ref(r) => (ders[*r].surface.as_ref(), false),
            }
        }
        Ok(TurnCandidate {
            transition_id: t.transition_id.clone(),
            template_id: t.id.clone(),
            agent_utterance: sentence_case(&realize(t.items[..t.agent_len].iter().map(|it| piece(it, &ders)))),
            user_utterance: sentence_case(&realize(t.items[t.agent_len..].iter().map(|it| piece(it, &ders)))),
            new_state,
            capture_bindings: t
                .action
                .captures
                .iter()
                .cloned()
                .zip(values.iter().map(|v| (*v).clone()))
                .collect(),
        })
    }

    /// All candidate turns for `transition` from `state`.
    pub fn expand_turn(
        &self,
        transition: &Transition,
        state: &ConcreteState,
    ) -> Result<Vec<TurnCandidate>, ExpandError> {
        let mut rng = rng::stream(self.params.rng_seed, &[rng::TAG_TURN]);
        self.plan(transition, state, &mut rng)?
            .iter()
            .map(|e| self.materialize(e, state))
            .collect()
    }
}

/// Candidate turns realising `transition` from `state`.
pub fn expand_turn(
    bg: &BoundGrammar,
    transition: &Transition,
    state: &ConcreteState,
    params: &ExpansionParams,
) -> Result<Vec<TurnCandidate>, ExpandError> {
    Expander::new(bg, *params)?.expand_turn(transition, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn exact_depth_blocks_match_filter() {
        // Children with (le, lt) counts; compare against a naive filter.
        let le = [3usize, 2, 4];
        let lt = [1usize, 2, 1];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let got = exact_depth_combos(&le, &lt, usize::MAX, &mut rng);
        let mut want = Vec::new();
        for a in 0..3u32 {
            for b in 0..2u32 {
                for c in 0..4u32 {
                    let deep = (a as usize) >= lt[0] || (b as usize) >= lt[1] || (c as usize) >= lt[2];
                    if deep {
                        want.push(vec![a, b, c]);
                    }
                }
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn budget_caps_combinations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let got = exact_depth_combos(&[100, 100], &[0, 0], 50, &mut rng);
        assert_eq!(got.len(), 50);
        assert!(got.windows(2).all(|w| w[0] < w[1]));
    }
}
