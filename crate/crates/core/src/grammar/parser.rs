use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use super::action::*;
use super::lexer::{lex, Tok, Token};
use super::{
    Definition, DomainHook, Grammar, GrammarError, HookKind, Location, NonTerminal, PatternItem,
    Production, ProductionKind, RhsItem, TurnMeta, ValueKind,
};
use crate::SEP;

/// One named source text.
#[derive(Debug, Clone)]
pub struct TemplateSource {
    pub name: String,
    pub text: String,
}

impl TemplateSource {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        TemplateSource {
            name: name.into(),
            text: text.into(),
        }
    }
}

const MAX_EXPANSIONS: usize = 100_000;

#[derive(Debug, Clone)]
enum Elem {
    Lit(String),
    Ref {
        nt: String,
        capture: Option<String>,
        loc: Location,
    },
    Group(Vec<Vec<Elem>>, Location),
}

#[derive(Debug, Clone)]
enum Flat {
    Lit(String),
    Ref { nt: String, capture: String, loc: Location },
}

enum Raw {
    Rule {
        kind: ProductionKind,
        lhs: String,
        alts: Vec<Vec<Elem>>,
        action: SemanticAction,
        loc: Location,
    },
    Turn {
        id: String,
        transition: String,
        seq: Vec<Elem>,
        action: SemanticAction,
        loc: Location,
    },
    Hook(DomainHook),
}

struct Parser<'a> {
    file: &'a str,
    toks: Vec<Token>,
    pos: usize,
    /// Capture names referenced by the action being parsed.
    captures: Vec<String>,
}

type PResult<T> = Result<T, GrammarError>;

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn loc(&self) -> Location {
        let t = &self.toks[self.pos];
        Location {
            file: self.file.to_string(),
            line: t.line,
            col: t.col,
        }
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(GrammarError::Parse {
            loc: self.loc(),
            message: message.into(),
        })
    }

    fn unexpected<T>(&self, wanted: &str) -> PResult<T> {
        self.fail(format!("expected {wanted}, found {}", self.peek().describe()))
    }

    fn expect(&mut self, t: Tok) -> PResult<()> {
        if *self.peek() == t {
            self.bump();
            Ok(())
        } else {
            self.unexpected(&t.describe())
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn keyword(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.unexpected(&format!("`{kw}`"))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.unexpected(what),
        }
    }

    /// A slot name: bare identifier or quoted string.
    fn slot_name(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) | Tok::Str(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.unexpected("a slot name"),
        }
    }

    fn capture_index(&mut self, name: &str) -> usize {
        match self.captures.iter().position(|c| c == name) {
            Some(i) => i,
            None => {
                self.captures.push(name.to_string());
                self.captures.len() - 1
            }
        }
    }

    fn capture(&mut self) -> PResult<usize> {
        match self.peek().clone() {
            Tok::Capture(s) => {
                self.bump();
                Ok(self.capture_index(&s))
            }
            _ => self.unexpected("a capture such as `$x`"),
        }
    }

    fn dotted(&mut self, field: &str) -> PResult<bool> {
        if *self.peek() == Tok::Dot {
            self.bump();
            self.keyword(field)?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn file(&mut self) -> PResult<Vec<(Raw, Option<String>)>> {
        let mut out = Vec::new();
        while *self.peek() != Tok::Eof {
            if self.is_kw("domain") {
                self.bump();
                let d = self.ident("a domain name")?;
                self.expect(Tok::LBrace)?;
                while *self.peek() != Tok::RBrace {
                    if *self.peek() == Tok::Eof {
                        return self.unexpected("`}`");
                    }
                    out.push((self.item(Some(&d))?, Some(d.clone())));
                }
                self.bump();
            } else {
                out.push((self.item(None)?, None));
            }
        }
        Ok(out)
    }

    fn item(&mut self, domain: Option<&str>) -> PResult<Raw> {
        let loc = self.loc();
        self.captures.clear();
        let kw = match self.peek() {
            Tok::Ident(s) => s.clone(),
            _ => return self.unexpected("`rule`, `info`, `turn`, `values`, `subject`, `slotname` or `domain`"),
        };
        match kw.as_str() {
            "rule" | "info" => {
                self.bump();
                let lhs = self.ident("a non-terminal name")?;
                self.expect(Tok::Assign)?;
                let alts = self.alts(false)?;
                self.expect(Tok::Arrow)?;
                let result = self.expr()?;
                self.expect(Tok::Semi)?;
                Ok(Raw::Rule {
                    kind: if kw == "rule" {
                        ProductionKind::Phrase
                    } else {
                        ProductionKind::InformationUtterance
                    },
                    lhs,
                    alts,
                    action: SemanticAction {
                        captures: std::mem::take(&mut self.captures),
                        result: Some(result),
                        ..Default::default()
                    },
                    loc,
                })
            }
            "turn" => {
                self.bump();
                let id = self.ident("a template id")?;
                self.keyword("on")?;
                let transition = self.ident("a transition id")?;
                self.expect(Tok::Assign)?;
                let seq = self.seq(true)?;
                self.keyword("action")?;
                self.expect(Tok::LBrace)?;
                let mut action = SemanticAction::default();
                while *self.peek() != Tok::RBrace {
                    self.statement(&mut action)?;
                }
                self.bump();
                self.expect(Tok::Semi)?;
                action.captures = std::mem::take(&mut self.captures);
                Ok(Raw::Turn {
                    id,
                    transition,
                    seq,
                    action,
                    loc,
                })
            }
            "values" => {
                self.bump();
                let nt = self.ident("a non-terminal name")?;
                self.keyword("from")?;
                self.keyword("slot")?;
                let slot = self.slot_name()?;
                let mut patterns = vec![vec![PatternItem::Value]];
                if *self.peek() == Tok::Assign {
                    self.bump();
                    patterns = vec![Vec::new()];
                    loop {
                        match self.peek().clone() {
                            Tok::Str(s) => {
                                self.bump();
                                if s.contains(SEP) {
                                    return Err(GrammarError::ReservedToken { loc: self.loc() });
                                }
                                if !s.is_empty() {
                                    patterns.last_mut().unwrap().push(PatternItem::Literal(s));
                                }
                            }
                            Tok::Capture(c) if c == "value" => {
                                self.bump();
                                patterns.last_mut().unwrap().push(PatternItem::Value);
                            }
                            Tok::Bar => {
                                self.bump();
                                patterns.push(Vec::new());
                            }
                            _ => break,
                        }
                    }
                    if let Some(p) = patterns.iter().find(|p| !p.contains(&PatternItem::Value)) {
                        let _ = p;
                        return self.fail("every value pattern must contain `$value`");
                    }
                }
                self.expect(Tok::Arrow)?;
                let result = self.expr()?;
                self.expect(Tok::Semi)?;
                Ok(Raw::Hook(DomainHook {
                    nonterminal: nt,
                    domain: domain.map(str::to_string),
                    kind: HookKind::SlotValue {
                        slot,
                        patterns,
                        action: SemanticAction {
                            captures: std::mem::take(&mut self.captures),
                            result: Some(result),
                            ..Default::default()
                        },
                    },
                    location: loc,
                }))
            }
            "subject" => {
                self.bump();
                let nt = self.ident("a non-terminal name")?;
                self.expect(Tok::Semi)?;
                Ok(Raw::Hook(DomainHook {
                    nonterminal: nt,
                    domain: domain.map(str::to_string),
                    kind: HookKind::Subject,
                    location: loc,
                }))
            }
            "slotname" => {
                self.bump();
                let nt = self.ident("a non-terminal name")?;
                self.keyword("for")?;
                self.keyword("slot")?;
                let slot = self.slot_name()?;
                self.expect(Tok::Assign)?;
                let mut phrases = Vec::new();
                loop {
                    match self.peek().clone() {
                        Tok::Str(s) => {
                            self.bump();
                            if s.contains(SEP) {
                                return Err(GrammarError::ReservedToken { loc: self.loc() });
                            }
                            phrases.push(s);
                        }
                        _ => return self.unexpected("a phrase string"),
                    }
                    if *self.peek() == Tok::Bar {
                        self.bump();
                    } else {
                        break;
                    }
                }
                self.expect(Tok::Semi)?;
                Ok(Raw::Hook(DomainHook {
                    nonterminal: nt,
                    domain: domain.map(str::to_string),
                    kind: HookKind::SlotName { slot, phrases },
                    location: loc,
                }))
            }
            _ => self.unexpected("`rule`, `info`, `turn`, `values`, `subject`, `slotname` or `domain`"),
        }
    }

    fn alts(&mut self, allow_sep: bool) -> PResult<Vec<Vec<Elem>>> {
        let mut alts = vec![self.seq(allow_sep)?];
        while *self.peek() == Tok::Bar {
            self.bump();
            alts.push(self.seq(allow_sep)?);
        }
        Ok(alts)
    }

    fn seq(&mut self, allow_sep: bool) -> PResult<Vec<Elem>> {
        let mut out = Vec::new();
        loop {
            let loc = self.loc();
            match self.peek().clone() {
                Tok::Str(s) => {
                    self.bump();
                    if s.contains(SEP) && !(allow_sep && s == SEP) {
                        return Err(GrammarError::ReservedToken { loc });
                    }
                    out.push(Elem::Lit(s));
                }
                Tok::Ident(s) if s != "action" => {
                    self.bump();
                    let capture = if *self.peek() == Tok::At {
                        self.bump();
                        Some(self.ident("a capture name")?)
                    } else {
                        None
                    };
                    out.push(Elem::Ref { nt: s, capture, loc });
                }
                Tok::LParen => {
                    self.bump();
                    let alts = self.alts(false)?;
                    self.expect(Tok::RParen)?;
                    out.push(Elem::Group(alts, loc));
                }
                _ => return Ok(out),
            }
        }
    }

    fn expr(&mut self) -> PResult<ResultExpr> {
        match self.peek().clone() {
            Tok::Capture(_) => {
                let i = self.capture()?;
                Ok(ResultExpr::Capture(i))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(ResultExpr::Text(s))
            }
            Tok::Ident(s) if s == "empty" => {
                self.bump();
                Ok(ResultExpr::Empty)
            }
            Tok::Ident(s) if s == "union" => {
                self.bump();
                self.expect(Tok::LParen)?;
                let a = self.expr()?;
                self.expect(Tok::Comma)?;
                let b = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(ResultExpr::Union(Box::new(a), Box::new(b)))
            }
            Tok::Ident(s) if s == "pair" => {
                self.bump();
                self.expect(Tok::LParen)?;
                let slot = self.slot_name()?;
                self.expect(Tok::Comma)?;
                let v = match self.peek().clone() {
                    Tok::Capture(_) => {
                        let i = self.capture()?;
                        self.dotted("value")?;
                        PairValue::Capture(i)
                    }
                    Tok::Str(s) => {
                        self.bump();
                        if s == "?" {
                            PairValue::Requested
                        } else {
                            PairValue::Literal(s)
                        }
                    }
                    Tok::Ident(s) if s == "dontcare" => {
                        self.bump();
                        PairValue::DontCare
                    }
                    _ => return self.unexpected("a slot value"),
                };
                self.expect(Tok::RParen)?;
                Ok(ResultExpr::Pair(slot, v))
            }
            _ => self.unexpected("an expression (`$x`, `union`, `pair`, `empty` or a string)"),
        }
    }

    fn operand(&mut self) -> PResult<Operand> {
        match self.peek().clone() {
            Tok::Capture(_) => Ok(Operand::Capture(self.capture()?)),
            Tok::Ident(s) if s == "state" => {
                self.bump();
                self.expect(Tok::Dot)?;
                self.keyword("slots")?;
                Ok(Operand::StateSlots)
            }
            Tok::Ident(s) if s == "union" => {
                self.bump();
                self.expect(Tok::LParen)?;
                let a = self.operand()?;
                self.expect(Tok::Comma)?;
                let b = self.operand()?;
                self.expect(Tok::RParen)?;
                Ok(Operand::Union(Box::new(a), Box::new(b)))
            }
            Tok::Ident(_) | Tok::Str(_) => Ok(Operand::Slot(self.slot_name()?)),
            _ => self.unexpected("an operand (`state.slots`, `$x`, `union(..)` or a slot name)"),
        }
    }

    fn guard(&mut self) -> PResult<Guard> {
        let name = self.ident("a guard (`absent`, `present`, `disjoint`, `subset`, `eq`, `not`)")?;
        self.expect(Tok::LParen)?;
        let g = match name.as_str() {
            "absent" => Guard::Absent(self.operand()?),
            "present" => Guard::Present(self.operand()?),
            "disjoint" | "subset" => {
                let a = self.operand()?;
                self.expect(Tok::Comma)?;
                let b = self.operand()?;
                if name == "disjoint" {
                    Guard::Disjoint(a, b)
                } else {
                    if contains_literal_slot(&a) {
                        return self.fail("`subset` needs valued slots on the left");
                    }
                    Guard::Subset(a, b)
                }
            }
            "eq" => {
                let r = match self.peek().clone() {
                    Tok::Capture(_) => {
                        let i = self.capture()?;
                        self.dotted("value")?;
                        ValueRef::Capture(i)
                    }
                    Tok::Ident(s) if s == "state" => {
                        self.bump();
                        self.expect(Tok::Dot)?;
                        self.keyword("slots")?;
                        self.expect(Tok::LBracket)?;
                        let r = match self.peek().clone() {
                            Tok::Capture(_) => ValueRef::StateOf(self.capture()?),
                            _ => ValueRef::StateSlot(self.slot_name()?),
                        };
                        self.expect(Tok::RBracket)?;
                        r
                    }
                    _ => return self.unexpected("`$x`, `$x.value` or `state.slots[..]`"),
                };
                self.expect(Tok::Comma)?;
                let lit = match self.bump() {
                    Tok::Str(s) => s,
                    _ => return self.fail("expected a string literal"),
                };
                Guard::Equals(r, lit)
            }
            "not" => Guard::Not(Box::new(self.guard()?)),
            other => return self.fail(format!("unknown guard `{other}`")),
        };
        self.expect(Tok::RParen)?;
        Ok(g)
    }

    fn target(&mut self) -> PResult<SlotTarget> {
        match self.peek().clone() {
            Tok::Capture(_) => {
                let i = self.capture()?;
                self.dotted("name")?;
                Ok(SlotTarget::Capture(i))
            }
            Tok::Ident(s) if s == "requested" => {
                self.bump();
                Ok(SlotTarget::Requested)
            }
            _ => Ok(SlotTarget::Named(self.slot_name()?)),
        }
    }

    fn statement(&mut self, action: &mut SemanticAction) -> PResult<()> {
        let kw = self.ident("a statement (`require`, `abstract`, `set`, `merge`, `clear`)")?;
        match kw.as_str() {
            "require" => action.guards.push(self.guard()?),
            "abstract" => {
                let s = self.ident("a state name")?;
                action.effects.push(Effect::SetAbstract(s));
            }
            "set" => {
                let t = self.target()?;
                if t == SlotTarget::Requested {
                    return self.fail("`set` needs a capture or slot name");
                }
                let v = match self.peek().clone() {
                    Tok::Str(s) => {
                        self.bump();
                        if s == "?" {
                            NewValue::Requested
                        } else {
                            NewValue::Literal(s)
                        }
                    }
                    Tok::Ident(s) if s == "dontcare" => {
                        self.bump();
                        NewValue::DontCare
                    }
                    Tok::Capture(_) => {
                        let i = self.capture()?;
                        self.dotted("value")?;
                        NewValue::CaptureValue(i)
                    }
                    _ => return self.unexpected("`\"?\"`, `dontcare`, a string or `$x.value`"),
                };
                action.effects.push(Effect::SetSlot(t, v));
            }
            "merge" => {
                let i = self.capture()?;
                action.effects.push(Effect::Merge(i));
            }
            "clear" => {
                let t = self.target()?;
                action.effects.push(Effect::Clear(t));
            }
            other => return self.fail(format!("unknown statement `{other}`")),
        }
        self.expect(Tok::Semi)
    }
}

fn contains_literal_slot(o: &Operand) -> bool {
    match o {
        Operand::Slot(_) => true,
        Operand::Union(a, b) => contains_literal_slot(a) || contains_literal_slot(b),
        _ => false,
    }
}

fn expand(seq: &[Elem]) -> Result<Vec<Vec<Flat>>, GrammarError> {
    let mut out: Vec<Vec<Flat>> = vec![Vec::new()];
    for e in seq {
        match e {
            Elem::Lit(s) => {
                if !s.is_empty() {
                    out.iter_mut().for_each(|v| v.push(Flat::Lit(s.clone())));
                }
            }
            Elem::Ref { nt, capture, loc } => {
                let f = Flat::Ref {
                    nt: nt.clone(),
                    capture: capture.clone().unwrap_or_else(|| nt.to_lowercase()),
                    loc: loc.clone(),
                };
                out.iter_mut().for_each(|v| v.push(f.clone()));
            }
            Elem::Group(alts, loc) => {
                let mut options = Vec::new();
                for a in alts {
                    options.extend(expand(a)?);
                }
                if out.len().saturating_mul(options.len()) > MAX_EXPANSIONS {
                    return Err(GrammarError::Parse {
                        loc: loc.clone(),
                        message: "alternation expands to too many productions".into(),
                    });
                }
                out = out
                    .iter()
                    .flat_map(|p| {
                        options.iter().map(move |o| {
                            let mut v = p.clone();
                            v.extend(o.iter().cloned());
                            v
                        })
                    })
                    .collect();
            }
        }
    }
    Ok(out)
}

fn group_has_sep(seq: &[Elem]) -> Option<Location> {
    seq.iter().find_map(|e| match e {
        Elem::Group(alts, loc) => alts
            .iter()
            .find_map(|a| {
                a.iter()
                    .any(|e| matches!(e, Elem::Lit(s) if s == SEP))
                    .then(|| loc.clone())
                    .or_else(|| group_has_sep(a))
            }),
        _ => None,
    })
}

/// Builds the production for one expansion, binding action captures to refs.
fn bind_production(
    flat: Vec<Flat>,
    action: &SemanticAction,
    loc: &Location,
) -> Result<(Vec<RhsItem>, SemanticAction, Vec<Location>), GrammarError> {
    let mut names: Vec<String> = Vec::new();
    let mut rhs = Vec::new();
    let mut locs = Vec::new();
    for f in flat {
        match f {
            Flat::Lit(s) => rhs.push(RhsItem::Literal(s)),
            Flat::Ref { nt, capture, loc } => {
                if names.contains(&capture) {
                    return Err(GrammarError::DuplicateCapture { loc, capture });
                }
                names.push(capture.clone());
                locs.push(loc);
                rhs.push(RhsItem::Ref {
                    nonterminal: nt,
                    capture,
                });
            }
        }
    }
    let mut map = Vec::new();
    for c in &action.captures {
        match names.iter().position(|n| n == c) {
            Some(i) => map.push(i),
            None => {
                return Err(GrammarError::UnboundCapture {
                    loc: loc.clone(),
                    capture: c.clone(),
                })
            }
        }
    }
    Ok((rhs, action.remap(&map, names), locs))
}

/// Parses and checks a set of template sources as one grammar.
pub fn parse_templates(sources: &[TemplateSource]) -> Result<Grammar, GrammarError> {
    let mut raws = Vec::new();
    for src in sources {
        let toks = lex(&src.name, &src.text)?;
        let mut p = Parser {
            file: &src.name,
            toks,
            pos: 0,
            captures: Vec::new(),
        };
        raws.extend(p.file()?);
    }

    let mut productions: Vec<Production> = Vec::new();
    let mut hooks: Vec<DomainHook> = Vec::new();
    let mut definitions = Vec::new();
    let mut ref_locs: Vec<Vec<Location>> = Vec::new();
    let mut nt_order: Vec<String> = Vec::new();
    let mut seen_templates = HashSet::new();
    let note_nt = |name: &str, order: &mut Vec<String>| {
        if !order.iter().any(|n| n == name) {
            order.push(name.to_string());
        }
    };

    for (raw, domain) in raws {
        match raw {
            Raw::Rule {
                kind,
                lhs,
                alts,
                action,
                loc,
            } => {
                note_nt(&lhs, &mut nt_order);
                for alt in &alts {
                    for flat in expand(alt)? {
                        let (rhs, action, locs) = bind_production(flat, &action, &loc)?;
                        definitions.push(Definition::Production(productions.len()));
                        ref_locs.push(locs);
                        productions.push(Production {
                            lhs: lhs.clone(),
                            rhs,
                            action,
                            kind,
                            turn: None,
                            domain: domain.clone(),
                            location: loc.clone(),
                        });
                    }
                }
            }
            Raw::Turn {
                id,
                transition,
                seq,
                action,
                loc,
            } => {
                if !seen_templates.insert(id.clone()) {
                    return Err(GrammarError::DuplicateTemplate { loc, template: id });
                }
                let seps: Vec<usize> = seq
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| matches!(e, Elem::Lit(s) if s == SEP))
                    .map(|(i, _)| i)
                    .collect();
                if seps.len() != 1 || group_has_sep(&seq).is_some() {
                    return Err(GrammarError::MissingDelimiter { loc, template: id });
                }
                let agent = expand(&seq[..seps[0]])?;
                let user = expand(&seq[seps[0] + 1..])?;
                if agent.len().saturating_mul(user.len()) > MAX_EXPANSIONS {
                    return Err(GrammarError::Parse {
                        loc,
                        message: "alternation expands to too many productions".into(),
                    });
                }
                for a in &agent {
                    for u in &user {
                        let agent_len = a.len();
                        let flat: Vec<Flat> = a.iter().chain(u.iter()).cloned().collect();
                        let (rhs, action, locs) = bind_production(flat, &action, &loc)?;
                        definitions.push(Definition::Production(productions.len()));
                        ref_locs.push(locs);
                        productions.push(Production {
                            lhs: id.clone(),
                            rhs,
                            action,
                            kind: ProductionKind::Turn,
                            turn: Some(TurnMeta {
                                template_id: id.clone(),
                                transition_id: transition.clone(),
                                agent_len,
                            }),
                            domain: domain.clone(),
                            location: loc.clone(),
                        });
                    }
                }
            }
            Raw::Hook(h) => {
                note_nt(&h.nonterminal, &mut nt_order);
                if let HookKind::SlotValue { action, .. } = &h.kind {
                    if let Some(c) = action.captures.iter().find(|c| *c != "value") {
                        return Err(GrammarError::UnboundCapture {
                            loc: h.location.clone(),
                            capture: c.clone(),
                        });
                    }
                }
                definitions.push(Definition::Hook(hooks.len()));
                hooks.push(h);
            }
        }
    }

    // Every referenced non-terminal must be defined somewhere.
    let defined: HashSet<&str> = nt_order.iter().map(String::as_str).collect();
    for (p, locs) in productions.iter().zip(&ref_locs) {
        let refs = p.rhs.iter().filter_map(|r| match r {
            RhsItem::Ref { nonterminal, .. } => Some(nonterminal),
            _ => None,
        });
        for (nt, loc) in refs.zip(locs) {
            if !defined.contains(nt.as_str()) {
                return Err(GrammarError::UnknownNonTerminal {
                    loc: loc.clone(),
                    name: nt.clone(),
                });
            }
        }
    }

    let kinds = infer_kinds(&nt_order, &productions, &hooks)?;
    type_check(&productions, &kinds)?;
    check_productive(&nt_order, &productions, &hooks)?;

    let mut hasher_input = String::new();
    for s in sources {
        hasher_input.push_str(&format!("{}\u{0}{}\u{0}", s.name, s.text));
    }
    Ok(Grammar {
        nonterminals: nt_order
            .iter()
            .map(|n| NonTerminal {
                name: n.clone(),
                value_kind: kinds[n],
            })
            .collect(),
        productions,
        hooks,
        definitions,
        hash: crate::sha256_hex(hasher_input.as_bytes()),
    })
}

fn join(a: ValueKind, b: ValueKind) -> Option<ValueKind> {
    use ValueKind::*;
    match (a, b) {
        (x, y) if x == y => Some(x),
        (SlotPair, SlotSet) | (SlotSet, SlotPair) => Some(SlotSet),
        _ => None,
    }
}

fn expr_kind(
    e: &ResultExpr,
    refs: &dyn Fn(usize) -> Option<ValueKind>,
) -> Option<ValueKind> {
    match e {
        ResultExpr::Capture(i) => refs(*i),
        ResultExpr::Union(..) | ResultExpr::Empty => Some(ValueKind::SlotSet),
        ResultExpr::Pair(..) => Some(ValueKind::SlotPair),
        ResultExpr::Text(_) => Some(ValueKind::Scalar),
    }
}

fn ref_nts(p: &Production) -> Vec<&str> {
    p.rhs
        .iter()
        .filter_map(|r| match r {
            RhsItem::Ref { nonterminal, .. } => Some(nonterminal.as_str()),
            _ => None,
        })
        .collect()
}

fn infer_kinds(
    order: &[String],
    productions: &[Production],
    hooks: &[DomainHook],
) -> Result<HashMap<String, ValueKind>, GrammarError> {
    let mut kinds: HashMap<String, ValueKind> = HashMap::new();
    let update = |kinds: &mut HashMap<String, ValueKind>,
                      nt: &str,
                      k: ValueKind,
                      loc: &Location|
     -> Result<bool, GrammarError> {
        match kinds.get(nt).copied() {
            None => {
                kinds.insert(nt.to_string(), k);
                Ok(true)
            }
            Some(old) => match join(old, k) {
                Some(j) if j == old => Ok(false),
                Some(j) => {
                    kinds.insert(nt.to_string(), j);
                    Ok(true)
                }
                None => Err(GrammarError::Type {
                    loc: loc.clone(),
                    message: format!("non-terminal `{nt}` mixes {old} and {k} values"),
                }),
            },
        }
    };
    for h in hooks {
        let k = match &h.kind {
            HookKind::Subject => ValueKind::SlotSet,
            HookKind::SlotName { .. } => ValueKind::SlotPair,
            HookKind::SlotValue { action, .. } => {
                expr_kind(action.result.as_ref().unwrap(), &|_| Some(ValueKind::Scalar)).unwrap()
            }
        };
        update(&mut kinds, &h.nonterminal, k, &h.location)?;
    }
    loop {
        let mut changed = false;
        for p in productions.iter().filter(|p| p.kind != ProductionKind::Turn) {
            let refs = ref_nts(p);
            let snapshot = kinds.clone();
            let lookup = |i: usize| snapshot.get(refs[i]).copied();
            if let Some(k) = expr_kind(p.action.result.as_ref().unwrap(), &lookup) {
                changed |= update(&mut kinds, &p.lhs, k, &p.location)?;
            }
        }
        if !changed {
            break;
        }
    }
    for n in order {
        kinds.entry(n.clone()).or_insert(ValueKind::SlotSet);
    }
    Ok(kinds)
}

fn type_check(
    productions: &[Production],
    kinds: &HashMap<String, ValueKind>,
) -> Result<(), GrammarError> {
    for p in productions {
        let refs = ref_nts(p);
        for i in p.action.slot_uses() {
            let k = kinds[refs[i]];
            if !k.is_slots() {
                return Err(GrammarError::Type {
                    loc: p.location.clone(),
                    message: format!(
                        "capture `{}` of `{}` is {k}, but is used as slots",
                        p.action.captures[i], refs[i]
                    ),
                });
            }
        }
        if p.kind == ProductionKind::Turn && p.action.result.is_some() {
            return Err(GrammarError::Type {
                loc: p.location.clone(),
                message: "turn templates have no result expression".into(),
            });
        }
    }
    Ok(())
}

fn check_productive(
    order: &[String],
    productions: &[Production],
    hooks: &[DomainHook],
) -> Result<(), GrammarError> {
    let mut productive: HashSet<&str> = hooks.iter().map(|h| h.nonterminal.as_str()).collect();
    loop {
        let mut changed = false;
        for p in productions.iter().filter(|p| p.kind != ProductionKind::Turn) {
            if !productive.contains(p.lhs.as_str())
                && ref_nts(p).iter().all(|r| productive.contains(r))
            {
                productive.insert(&p.lhs);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let Some(bad) = order.iter().find(|n| !productive.contains(n.as_str())) else {
        return Ok(());
    };
    // Report a cycle among unproductive non-terminals reachable from `bad`.
    let mut edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in productions.iter().filter(|p| p.kind != ProductionKind::Turn) {
        if productive.contains(p.lhs.as_str()) {
            continue;
        }
        for r in ref_nts(p) {
            if !productive.contains(r) {
                let e = edges.entry(p.lhs.as_str()).or_default();
                if !e.contains(&r) {
                    e.push(r);
                }
            }
        }
    }
    let mut path: Vec<&str> = vec![bad.as_str()];
    let mut visited: HashSet<&str> = HashSet::new();
    fn dfs<'a>(
        edges: &BTreeMap<&'a str, Vec<&'a str>>,
        path: &mut Vec<&'a str>,
        visited: &mut HashSet<&'a str>,
    ) -> Option<Vec<String>> {
        let cur = *path.last().unwrap();
        visited.insert(cur);
        for &next in edges.get(cur).map(Vec::as_slice).unwrap_or(&[]) {
            if let Some(pos) = path.iter().position(|&p| p == next) {
                let mut cyc: Vec<String> = path[pos..].iter().map(|s| s.to_string()).collect();
                cyc.push(next.to_string());
                return Some(cyc);
            }
            if !visited.contains(next) {
                path.push(next);
                if let Some(c) = dfs(edges, path, visited) {
                    return Some(c);
                }
                path.pop();
            }
        }
        None
    }
    let cycle = dfs(&edges, &mut path, &mut visited).unwrap_or_else(|| vec![bad.clone()]);
    Err(GrammarError::Unproductive {
        name: bad.clone(),
        cycle,
    })
}

/// Parses a single source text named `<input>`.
pub fn parse_template_str(text: &str) -> Result<Grammar, GrammarError> {
    parse_templates(&[TemplateSource::new("<input>", text)])
}

/// Reads every `*.tmpl` file of a directory, in file-name order.
pub fn load_template_dir(dir: &Path) -> Result<Vec<TemplateSource>, GrammarError> {
    let io = |e: std::io::Error| GrammarError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tmpl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(GrammarError::Io {
            path: dir.display().to_string(),
            message: "no .tmpl files found".into(),
        });
    }
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|e| GrammarError::Io {
                path: p.display().to_string(),
                message: e.to_string(),
            })?;
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            Ok(TemplateSource::new(name, text))
        })
        .collect()
}
