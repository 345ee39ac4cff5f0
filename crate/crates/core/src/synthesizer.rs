//! Breadth-first dialogue synthesis.
//!
//! A working set of partial dialogues is extended one turn per iteration.
//! Every (context, enabled transition) pair is a candidate source of turns;
//! a uniform subsample of pairs is expanded, dialogues that reach the end
//! state are emitted, and the rest are truncated back to the working-set
//! size to seed the next iteration.
//!
//! All randomness comes from streams derived from the seed and the position
//! of a work item, so the output does not depend on thread count.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{CorpusMetadata, DialogueCorpus, IterationStats};
use crate::expander::{subsample, ExpandError, ExpansionParams, Expander, PlanEntry};
use crate::grammar::BoundGrammar;
use crate::model::{ConcreteState, Dialogue, DialogueModel, ModelError, Provenance, Transition, Turn};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruningScope {
    /// Each (context, transition) pair keeps at most `pruning_size` turns.
    #[default]
    PerPair,
    /// Each context keeps at most `pruning_size` turns over all its transitions.
    PerContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Spread the working set evenly over pairs, so rare transitions survive.
    #[default]
    Balanced,
    /// Keep a uniform sample of all candidate extensions.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    pub first_turn_max_depth: u32,
    pub first_turn_pruning: usize,
    pub max_depth: u32,
    pub pruning_size: usize,
    pub budget_factor: usize,
    pub working_set_size: usize,
    /// Pairs expanded per iteration; `None` means `working_set_size`.
    pub transitions_per_iteration: Option<usize>,
    pub max_turns: usize,
    pub pruning_scope: PruningScope,
    pub truncation: Truncation,
    /// Close dialogues that could not be extended instead of dropping them.
    pub complete_stalled: bool,
    pub seed: u64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        SynthesisParams {
            first_turn_max_depth: 9,
            first_turn_pruning: 50_000,
            max_depth: 6,
            pruning_size: 1_000,
            budget_factor: ExpansionParams::DEFAULT_BUDGET_FACTOR,
            working_set_size: 10_000,
            transitions_per_iteration: None,
            max_turns: 6,
            pruning_scope: PruningScope::PerPair,
            truncation: Truncation::Balanced,
            complete_stalled: false,
            seed: 0,
        }
    }
}

impl SynthesisParams {
    pub fn first_turn_expansion(&self) -> ExpansionParams {
        ExpansionParams {
            max_depth: self.first_turn_max_depth,
            pruning_size: self.first_turn_pruning,
            rng_seed: self.seed,
            budget_factor: self.budget_factor,
        }
    }

    pub fn later_turn_expansion(&self) -> ExpansionParams {
        ExpansionParams {
            max_depth: self.max_depth,
            pruning_size: self.pruning_size,
            rng_seed: self.seed,
            budget_factor: self.budget_factor,
        }
    }

    fn pairs_per_iteration(&self) -> usize {
        self.transitions_per_iteration.unwrap_or(self.working_set_size)
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("grammar was bound to model {bound}, synthesis uses model {given}")]
    ModelMismatch { bound: String, given: String },
    #[error("invalid parameter: {0}")]
    Param(&'static str),
    #[error("no transition out of `{0}` has a turn template; nothing can be generated")]
    NoStartTemplates(String),
    #[error("no context has an enabled transition with templates")]
    NoTransitions,
    #[error(transparent)]
    Expand(#[from] ExpandError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A dialogue prefix, shared between its extensions.
struct Node {
    turn: Turn,
    parent: Option<Arc<Node>>,
    len: usize,
}

#[derive(Clone)]
struct Context {
    node: Option<Arc<Node>>,
    state: ConcreteState,
}

impl Context {
    fn turns(&self) -> usize {
        self.node.as_ref().map_or(0, |n| n.len)
    }

    fn extend(&self, turn: Turn) -> Context {
        let state = turn.end_state.clone();
        Context {
            node: Some(Arc::new(Node {
                turn,
                parent: self.node.clone(),
                len: self.turns() + 1,
            })),
            state,
        }
    }

    fn to_turns(&self) -> Vec<Turn> {
        let mut out = Vec::with_capacity(self.turns());
        let mut cur = self.node.as_deref();
        while let Some(n) = cur {
            out.push(n.turn.clone());
            cur = n.parent.as_deref();
        }
        out.reverse();
        out
    }
}

/// Planning outcome for one chosen pair.
struct PairPlan {
    ctx: usize,
    pair: usize,
    to_end: bool,
    total: usize,
    /// Uniformly random subset of the plan (all of it for end pairs), in
    /// random order so that any prefix is itself a uniform sample.
    kept: Vec<PlanEntry>,
}

fn candidate_turn(c: crate::expander::TurnCandidate) -> Turn {
    Turn {
        agent_utterance: c.agent_utterance,
        user_utterance: c.user_utterance,
        end_state: c.new_state,
        provenance: Some(Provenance {
            transition_id: c.transition_id,
            template_id: c.template_id,
            capture_bindings: c.capture_bindings,
        }),
    }
}

/// Transitions enabled in `state` that have at least one template.
fn usable<'m>(
    model: &'m DialogueModel,
    bg: &BoundGrammar,
    state: &str,
) -> Result<Vec<&'m Transition>, ModelError> {
    Ok(model
        .enabled_transitions(state)?
        .into_iter()
        .filter(|t| bg.has_templates(&t.id))
        .collect())
}

/// Per-pair quotas summing to `min(capacity, sum(sizes))`.
fn quotas<R: Rng>(sizes: &[usize], capacity: usize, mode: Truncation, rng: &mut R) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total <= capacity {
        return sizes.to_vec();
    }
    match mode {
        Truncation::Uniform => {
            let mut starts = Vec::with_capacity(sizes.len());
            let mut acc = 0usize;
            for &s in sizes {
                starts.push(acc);
                acc += s;
            }
            let mut q = vec![0; sizes.len()];
            for i in index::sample(rng, total, capacity) {
                let p = starts.partition_point(|&s| s <= i) - 1;
                q[p] += 1;
            }
            q
        }
        Truncation::Balanced => {
            // Largest level L with sum(min(size, L)) <= capacity.
            let fill = |l: usize| sizes.iter().map(|&s| s.min(l)).sum::<usize>();
            let (mut lo, mut hi) = (0usize, sizes.iter().copied().max().unwrap_or(0));
            while lo < hi {
                let mid = lo + (hi - lo).div_ceil(2);
                if fill(mid) <= capacity {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            let mut q: Vec<usize> = sizes.iter().map(|&s| s.min(lo)).collect();
            let rest = capacity - fill(lo);
            let above: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] > lo).collect();
            for i in subsample(rng, above.len(), rest) {
                q[above[i]] += 1;
            }
            q
        }
    }
}

/// Runs synthesis and returns the dialogues that reached the end state.
pub fn synthesize(
    model: &DialogueModel,
    bg: &BoundGrammar,
    params: &SynthesisParams,
) -> Result<DialogueCorpus, SynthError> {
    if bg.model_hash() != model.hash() {
        return Err(SynthError::ModelMismatch {
            bound: bg.model_hash().to_string(),
            given: model.hash().to_string(),
        });
    }
    if params.working_set_size == 0 {
        return Err(SynthError::Param("working set size must be positive"));
    }
    if params.pairs_per_iteration() == 0 {
        return Err(SynthError::Param("transitions per iteration must be positive"));
    }
    if params.pruning_size == 0 || params.first_turn_pruning == 0 {
        return Err(SynthError::Param("pruning size must be positive"));
    }

    let start = &model.start_state().name;
    if usable(model, bg, start)?.is_empty() {
        return Err(SynthError::NoStartTemplates(start.clone()));
    }

    let first = Expander::new(bg, params.first_turn_expansion())?;
    let later = if params.max_turns > 1 {
        Some(Expander::new(bg, params.later_turn_expansion())?)
    } else {
        None
    };
    let end_name = model.end_state().name.as_str();
    let seed = params.seed;

    let mut working = vec![Context {
        node: None,
        state: model.initial_state(bg.domain()),
    }];
    let mut finished: Vec<Context> = Vec::new();
    let mut stalled: Vec<Context> = Vec::new();
    let mut unextended: Vec<Context> = Vec::new();
    let mut iterations = Vec::new();

    for iter in 0..params.max_turns {
        if working.is_empty() {
            break;
        }
        let exp = if iter == 0 { &first } else { later.as_ref().expect("later expander") };
        let it = iter as u64;

        // Pairs whose transition has no applicable template instance in the
        // context are not possible moves and are left out of the sample.
        let per_context: Vec<Vec<&Transition>> = working
            .par_iter()
            .map(|c| -> Result<Vec<&Transition>, SynthError> {
                let mut out = Vec::new();
                for t in usable(model, bg, &c.state.abstract_state)? {
                    if exp.feasible(t, &c.state)? {
                        out.push(t);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_, _>>()?;
        let pairs: Vec<(usize, &Transition)> = per_context
            .into_iter()
            .enumerate()
            .flat_map(|(ci, ts)| ts.into_iter().map(move |t| (ci, t)))
            .collect();
        let chosen = subsample(&mut rng::stream(seed, &[rng::TAG_PAIRS, it]), pairs.len(), params.pairs_per_iteration());

        // Group chosen pairs by context; `chosen` is sorted so groups are contiguous.
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for &p in &chosen {
            let ci = pairs[p].0;
            match groups.last_mut() {
                Some((c, v)) if *c == ci => v.push(p),
                _ => groups.push((ci, vec![p])),
            }
        }
        let open_pairs = chosen.iter().filter(|&&p| pairs[p].1.to_state != end_name).count();
        let keep_cap = 16usize.max(params.working_set_size.div_ceil(open_pairs.max(1)).saturating_mul(4));

        let plan_pair = |p: usize| -> Result<Vec<PlanEntry>, SynthError> {
            let (ci, t) = pairs[p];
            let mut r = rng::stream(seed, &[rng::TAG_TURN, it, p as u64]);
            Ok(exp.plan(t, &working[ci].state, &mut r)?)
        };

        let planned: Vec<Vec<PairPlan>> = groups
            .par_iter()
            .map(|(ci, ps)| -> Result<Vec<PairPlan>, SynthError> {
                let mut plans: Vec<Vec<PlanEntry>> = ps.iter().map(|&p| plan_pair(p)).collect::<Result<_, _>>()?;
                if params.pruning_scope == PruningScope::PerContext {
                    let sizes: Vec<usize> = plans.iter().map(Vec::len).collect();
                    let total: usize = sizes.iter().sum();
                    if total > exp.params().pruning_size {
                        let mut r = rng::stream(seed, &[rng::TAG_CONTEXT, it, *ci as u64]);
                        let mut keep = subsample(&mut r, total, exp.params().pruning_size).into_iter().peekable();
                        let mut offset = 0;
                        for plan in plans.iter_mut() {
                            let n = plan.len();
                            let mut mine = Vec::new();
                            while let Some(&k) = keep.peek() {
                                if k >= offset + n {
                                    break;
                                }
                                mine.push(k - offset);
                                keep.next();
                            }
                            let mut slots: Vec<Option<PlanEntry>> = std::mem::take(plan).into_iter().map(Some).collect();
                            *plan = mine.into_iter().map(|i| slots[i].take().unwrap()).collect();
                            offset += n;
                        }
                    }
                }
                Ok(ps
                    .iter()
                    .zip(plans)
                    .map(|(&p, plan)| {
                        let to_end = pairs[p].1.to_state == end_name;
                        let total = plan.len();
                        let kept = if to_end {
                            plan
                        } else {
                            let mut r = rng::stream(seed, &[rng::TAG_TRUNCATE, it, 0, p as u64]);
                            let idx = index::sample(&mut r, total, keep_cap.min(total));
                            let mut slots: Vec<Option<PlanEntry>> = plan.into_iter().map(Some).collect();
                            idx.into_iter().map(|i| slots[i].take().unwrap()).collect()
                        };
                        PairPlan {
                            ctx: *ci,
                            pair: p,
                            to_end,
                            total,
                            kept,
                        }
                    })
                    .collect())
            })
            .collect::<Result<_, _>>()?;
        let planned: Vec<PairPlan> = planned.into_iter().flatten().collect();
        if log::log_enabled!(log::Level::Debug) {
            let mut empty: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
            for pp in &planned {
                let e = empty.entry(pairs[pp.pair].1.id.as_str()).or_default();
                e.1 += 1;
                if pp.total == 0 {
                    e.0 += 1;
                }
            }
            log::debug!("iteration {}: empty plans per transition {:?}", iter + 1, empty);
        }

        let open: Vec<&PairPlan> = planned.iter().filter(|p| !p.to_end).collect();
        let sizes: Vec<usize> = open.iter().map(|p| p.total).collect();
        let mut trng = rng::stream(seed, &[rng::TAG_TRUNCATE, it]);
        let quota = quotas(&sizes, params.working_set_size, params.truncation, &mut trng);

        // Entries to materialise, as (pair plan, entries) in pair order.
        let mut selected: Vec<(&PairPlan, Vec<PlanEntry>)> = Vec::new();
        let mut oi = 0;
        for pp in &planned {
            if pp.to_end {
                selected.push((pp, pp.kept.clone()));
                continue;
            }
            let q = quota[oi];
            oi += 1;
            if q == 0 {
                continue;
            }
            let entries = if q <= pp.kept.len() {
                pp.kept[..q].to_vec()
            } else {
                let mut plan = plan_pair(pp.pair)?;
                let mut r = rng::stream(seed, &[rng::TAG_TRUNCATE, it, 1, pp.pair as u64]);
                index::sample(&mut r, plan.len(), q)
                    .into_iter()
                    .map(|i| std::mem::take(&mut plan[i]))
                    .collect()
            };
            selected.push((pp, entries));
        }

        let extended: Vec<Vec<Context>> = selected
            .par_iter()
            .map(|(pp, entries)| -> Result<Vec<Context>, SynthError> {
                let ctx = &working[pp.ctx];
                entries
                    .iter()
                    .map(|e| Ok(ctx.extend(candidate_turn(exp.materialize(e, &ctx.state)?))))
                    .collect()
            })
            .collect::<Result<_, _>>()?;

        // A context is extended when any of its chosen pairs yielded a turn, and
        // stalled when every chosen pair had no candidate at all.
        let mut touched = vec![false; working.len()];
        let mut has_candidates = vec![false; working.len()];
        let mut was_chosen = vec![false; working.len()];
        for pp in &planned {
            was_chosen[pp.ctx] = true;
            has_candidates[pp.ctx] |= pp.total > 0;
        }
        let mut next = Vec::new();
        let mut reached = 0;
        for ((pp, _), contexts) in selected.iter().zip(extended) {
            if !contexts.is_empty() {
                touched[pp.ctx] = true;
            }
            if pp.to_end {
                reached += contexts.len();
                finished.extend(contexts);
            } else {
                next.extend(contexts);
            }
        }
        let (mut n_stalled, mut n_unextended) = (0, 0);
        for (ci, c) in working.iter().enumerate() {
            if touched[ci] {
                continue;
            }
            if was_chosen[ci] && !has_candidates[ci] {
                n_stalled += 1;
                stalled.push(c.clone());
            } else {
                n_unextended += 1;
                unextended.push(c.clone());
            }
        }
        iterations.push(IterationStats {
            contexts: working.len(),
            pairs: pairs.len(),
            chosen: chosen.len(),
            reached_end: reached,
            stalled: n_stalled,
            unextended: n_unextended,
            working_set: next.len(),
        });
        log::info!(
            "iteration {}: {} contexts, {} pairs ({} expanded), {} finished, {} carried",
            iter + 1,
            working.len(),
            pairs.len(),
            chosen.len(),
            reached,
            next.len()
        );
        working = next;
    }
    if let Some(last) = iterations.last_mut() {
        last.unextended += working.len();
    }
    unextended.extend(working);

    // Results that stopped short of End get a closing turn where a template
    // allows one; the rest are dropped.
    let exp = later.as_ref().unwrap_or(&first);
    let close = |tag: u64, pool: &[Context]| -> Result<Vec<Context>, SynthError> {
        Ok(pool
            .par_iter()
            .enumerate()
            .map(|(si, c)| -> Result<Option<Context>, SynthError> {
                if c.turns() == 0 || c.turns() >= params.max_turns {
                    return Ok(None);
                }
                for t in usable(model, bg, &c.state.abstract_state)? {
                    if t.to_state != end_name {
                        continue;
                    }
                    let mut r = rng::stream(seed, &[rng::TAG_CONTEXT, u64::MAX, tag, si as u64]);
                    let plan = exp.plan(t, &c.state, &mut r)?;
                    if plan.is_empty() {
                        continue;
                    }
                    let e = &plan[r.gen_range(0..plan.len())];
                    return Ok(Some(c.extend(candidate_turn(exp.materialize(e, &c.state)?))));
                }
                Ok(None)
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect())
    };
    finished.extend(close(0, &unextended)?);
    if params.complete_stalled {
        finished.extend(close(1, &stalled)?);
    }

    let domain = bg.domain().to_string();
    let dialogues: Vec<Dialogue> = finished
        .iter()
        .enumerate()
        .map(|(i, c)| Dialogue {
            id: format!("SYN-{domain}-{:06}", i + 1),
            turns: c.to_turns(),
        })
        .collect();
    Ok(DialogueCorpus {
        metadata: CorpusMetadata {
            domain,
            model_hash: model.hash().to_string(),
            grammar_hash: bg.grammar_hash().to_string(),
            seed,
            params: Some(params.clone()),
            iterations,
            parts: Vec::new(),
            synthesized: dialogues.len(),
        },
        dialogues,
    })
}

/// Draws `n` (context, transition) pairs the way one synthesis step picks
/// pairs to expand, and counts the draws per transition.
///
/// Each context contributes one pair per enabled transition that has
/// templates; a pair is drawn with probability proportional to its context's
/// weight.
pub fn transition_sampling_histogram(
    model: &DialogueModel,
    bg: &BoundGrammar,
    contexts: &[(ConcreteState, f64)],
    n: usize,
    seed: u64,
) -> Result<BTreeMap<String, usize>, SynthError> {
    let mut pairs: Vec<(&str, f64)> = Vec::new();
    let mut hist = BTreeMap::new();
    for (c, w) in contexts {
        if !(w.is_finite() && *w >= 0.0) {
            return Err(SynthError::Param("context weights must be finite and non-negative"));
        }
        for t in usable(model, bg, &c.abstract_state)? {
            pairs.push((&t.id, *w));
            hist.insert(t.id.clone(), 0usize);
        }
    }
    if pairs.is_empty() {
        return Err(SynthError::NoTransitions);
    }
    let mut r = rng::stream(seed, &[rng::TAG_PAIRS]);
    let equal = pairs.iter().all(|p| p.1 == pairs[0].1);
    if equal {
        for _ in 0..n {
            let i = subsample(&mut r, pairs.len(), 1)[0];
            *hist.get_mut(pairs[i].0).unwrap() += 1;
        }
    } else {
        let dist = WeightedIndex::new(pairs.iter().map(|p| p.1))
            .map_err(|_| SynthError::Param("context weights must not all be zero"))?;
        for _ in 0..n {
            *hist.get_mut(pairs[dist.sample(&mut r)].0).unwrap() += 1;
        }
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn balanced_quotas_fill_evenly() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let q = quotas(&[1, 100, 100, 3], 50, Truncation::Balanced, &mut r);
        assert_eq!(q.iter().sum::<usize>(), 50);
        assert_eq!(q[0], 1);
        assert_eq!(q[3], 3);
        assert!((q[1] as i64 - q[2] as i64).abs() <= 1);
    }

    #[test]
    fn uniform_quotas_respect_sizes() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let sizes = [5, 0, 7, 300];
        let q = quotas(&sizes, 100, Truncation::Uniform, &mut r);
        assert_eq!(q.iter().sum::<usize>(), 100);
        assert!(q.iter().zip(&sizes).all(|(a, b)| a <= b));
    }

    #[test]
    fn quotas_keep_everything_under_capacity() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        assert_eq!(quotas(&[2, 3], 10, Truncation::Balanced, &mut r), vec![2, 3]);
    }
}
