//! Reachability over configuration graphs: descent summaries, milestone
//! chains, certificates, the recogniser for the reachable set, and regular
//! constrained reachability via products with word automata.
//!
//! A run into a configuration passes all milestones of its stack, and
//! between consecutive milestones it is a loop, one operation, and a loop
//! (clone segments additionally popping the copied word down to the next
//! word mark). That turns membership into a forward pass over the encoding
//! tree in lexicographic order, reachability of one configuration from
//! another into a descent to the greatest milestone of the target below
//! the source followed by such a pass, and the reachable set itself into
//! a tree automaton threading loop classes and transfer relations
//! bottom-up.

use crate::codec::{self, encode_stack, path_word, Addr, TLabel, TreeMap};
use crate::stack::{Config, Level, Stack2, StackOp};
use crate::summaries::{
    build_loops_automaton, Budget, Convergence, LoopsAutomaton, Rel, SummaryEngine, SummaryError,
};
use crate::system::CpsSpec;
use crate::tnfa::{Kids, Nfta, Rule};
use serde::Deserialize;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReachError {
    #[error(transparent)]
    Summary(#[from] SummaryError),
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
    #[error("certificate is not total on the stack tree (missing {0})")]
    PartialCertificate(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("loop quotient did not stabilise within bound {0}; raise the budget")]
    QuotientUnstable(usize),
    #[error("domain automaton exceeded the state budget {0}")]
    DomainBudget(usize),
    #[error("constraint error: {0}")]
    Constraint(String),
}

/// The computed loop relation for one projected top word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopsTable {
    pub pairs: BTreeSet<(String, String)>,
    pub convergence: Convergence,
}

/// Frozen analysis context for one system: summary engine plus caches.
pub struct Analysis {
    pub spec: CpsSpec,
    engine: SummaryEngine,
    quotient: Option<LoopsAutomaton>,
    quotient_bound: usize,
    desc_memo: BTreeMap<(Stack2, Stack2), Rel>,
    reach_memo: BTreeMap<(Stack2, Stack2), Rel>,
}

impl Analysis {
    pub fn new(spec: CpsSpec, budget: Budget) -> Analysis {
        let engine = SummaryEngine::new(&spec, budget);
        Analysis {
            spec,
            engine,
            quotient: None,
            quotient_bound: 6,
            desc_memo: BTreeMap::new(),
            reach_memo: BTreeMap::new(),
        }
    }

    pub fn with_quotient_bound(mut self, bound: usize) -> Analysis {
        self.quotient_bound = bound;
        self
    }

    fn q0(&self) -> u16 {
        self.engine
            .state_id(&self.spec.initial)
            .expect("initial state is declared")
    }

    fn state_id(&self, name: &str) -> Result<u16, ReachError> {
        self.engine
            .state_id(name)
            .map_err(|_| ReachError::UnknownState(name.to_string()))
    }

    /// Loop relation of every stack whose projected top word is `word`.
    pub fn loops_table(&mut self, word: &[(String, Level)]) -> Result<LoopsTable, ReachError> {
        let w = self.engine.intern_word(word)?;
        let (rel, convergence) = self.engine.loops_of(&w)?;
        Ok(LoopsTable {
            pairs: self.named(&rel),
            convergence,
        })
    }

    fn named(&self, rel: &Rel) -> BTreeSet<(String, String)> {
        rel.0
            .iter()
            .map(|(a, b)| {
                (
                    self.engine.state_name(*a).to_string(),
                    self.engine.state_name(*b).to_string(),
                )
            })
            .collect()
    }

    fn loops_of_path(&mut self, pw: &[(String, Level)]) -> Result<Rel, ReachError> {
        let w = self.engine.intern_word(pw)?;
        Ok(self.engine.loops_of(&w)?.0)
    }

    /// The word-to-loop-relation automaton (empirical quotient).
    pub fn loops_automaton(&mut self) -> Result<&LoopsAutomaton, ReachError> {
        if self.quotient.is_none() {
            let bottom = self.engine.sym_id(&self.spec.bottom)?;
            let letters: Vec<(u16, Level)> = self
                .spec
                .alphabet
                .iter()
                .filter(|s| **s != self.spec.bottom)
                .flat_map(|s| {
                    let id = self.engine.sym_id(s).expect("alphabet symbol");
                    [(id, Level::L1), (id, Level::L2)]
                })
                .collect();
            let auto =
                build_loops_automaton(&mut self.engine, bottom, &letters, self.quotient_bound)?;
            self.quotient = Some(auto);
        }
        Ok(self.quotient.as_ref().expect("just built"))
    }

    /// The relation between certificate values of two lex-consecutive
    /// nodes of a stack tree.
    fn segment(&mut self, t: &TreeMap, cur: &Addr, next: &Addr) -> Result<Rel, ReachError> {
        let pw_cur = path_word(t, cur)?;
        let loops_cur = self.loops_of_path(&pw_cur)?;
        let top_cur = self.engine.sym_id(&pw_cur.last().expect("nonempty").0)?;
        if *next == cur.child(0) {
            // Push segment: the next milestone extends the top word.
            let (sym_name, level) = match t.get(next) {
                Some(TLabel::Letter(s, l)) => (s.clone(), *l),
                _ => unreachable!("0-successors carry letters"),
            };
            let sym = self.engine.sym_id(&sym_name)?;
            let push = self.engine.push_edges(top_cur, sym, level);
            let mut pw_next = pw_cur.clone();
            pw_next.push((sym_name, level));
            let loops_next = self.loops_of_path(&pw_next)?;
            return Ok(loops_cur.compose(&push).compose(&loops_next));
        }
        // Clone segment: the next node is a word mark e·1 for an
        // ancestor-or-self e of the current node. The copied word is popped
        // down to e's path word, with loops at every stage.
        let host = next.parent().expect("word marks are never the root");
        debug_assert!(host.is_prefix_of(cur));
        let clone = self.engine.clone_edges(top_cur);
        let mut rel = loops_cur.compose(&clone);
        let mut stages: Vec<(String, Level)> = Vec::new();
        {
            let mut a = cur.clone();
            while a != host {
                if let Some(TLabel::Letter(s, l)) = t.get(&a) {
                    stages.push((s.clone(), *l));
                }
                a = a.parent().expect("host is an ancestor");
            }
        }
        let mut pw = pw_cur.clone();
        for (sym, level) in stages {
            let loops_here = self.loops_of_path(&pw)?;
            let sym_id = self.engine.sym_id(&sym)?;
            let pop = self.engine.pop1_like_edges(sym_id, level);
            rel = rel.compose(&loops_here).compose(&pop);
            pw.pop();
        }
        let loops_end = self.loops_of_path(&pw)?;
        Ok(rel.compose(&loops_end))
    }

    /// Checks one certificate: a total map from stack-tree addresses to
    /// states, anchored at the initial state, matching every segment
    /// relation, and ending in the configuration's state.
    pub fn certificate_check(
        &mut self,
        c: &Config,
        cert: &BTreeMap<Addr, String>,
    ) -> Result<bool, ReachError> {
        let t = encode_stack(&c.stack);
        let nodes: Vec<Addr> = t.addrs().cloned().collect();
        let mut values = Vec::new();
        for n in &nodes {
            let name = cert
                .get(n)
                .ok_or_else(|| ReachError::PartialCertificate(n.to_string()))?;
            values.push(self.state_id(name)?);
        }
        let anchor = self.loops_of_path(&path_word(&t, &nodes[0])?)?;
        if !anchor.contains(self.q0(), values[0]) {
            return Ok(false);
        }
        for i in 0..nodes.len() - 1 {
            let seg = self.segment(&t, &nodes[i], &nodes[i + 1])?;
            if !seg.contains(values[i], values[i + 1]) {
                return Ok(false);
            }
        }
        Ok(*values.last().expect("trees are nonempty") == self.state_id(&c.state)?)
    }

    /// Membership in the reachable set: the certificate forward pass with
    /// feasible state sets.
    pub fn is_reachable(&mut self, c: &Config) -> Result<bool, ReachError> {
        let final_state = self.state_id(&c.state)?;
        let t = encode_stack(&c.stack);
        let nodes: Vec<Addr> = t.addrs().cloned().collect();
        let anchor = self.loops_of_path(&path_word(&t, &nodes[0])?)?;
        let mut feasible: BTreeSet<u16> = BTreeSet::new();
        feasible.insert(self.q0());
        feasible = anchor.image(&feasible);
        for i in 0..nodes.len() - 1 {
            if feasible.is_empty() {
                break;
            }
            let seg = self.segment(&t, &nodes[i], &nodes[i + 1])?;
            feasible = seg.image(&feasible);
        }
        Ok(feasible.contains(&final_state))
    }

    /// All `(q, q')` such that some run leads from `(q, s)` to `(q', u)`,
    /// for a substack `u` of `s`.
    pub fn desc_of(
        &mut self,
        s: &Stack2,
        u: &Stack2,
    ) -> Result<BTreeSet<(String, String)>, ReachError> {
        assert!(u.is_substack_of(s), "descent target must be a substack");
        let rel = self.desc_rel(s, u)?;
        Ok(self.named(&rel))
    }

    fn desc_rel(&mut self, s: &Stack2, u: &Stack2) -> Result<Rel, ReachError> {
        if let Some(r) = self.desc_memo.get(&(s.clone(), u.clone())) {
            return Ok(r.clone());
        }
        let result = if s == u {
            self.top_loops(s)?
        } else {
            let loops_s = self.top_loops(s)?;
            let top = s.top_letter().clone();
            let top_id = self.engine.sym_id(&top.sym)?;
            // Single downward steps plus escapes from excursions above s.
            let mut steps: Vec<(Rel, Stack2)> = Vec::new();
            if let Some(x) = s.apply(&StackOp::Pop1) {
                steps.push((self.engine.pop1_like_edges(top_id, top.level), x));
            }
            if let Some(x) = s.apply(&StackOp::Pop2) {
                steps.push((self.engine.pop2_edges(top_id), x));
            }
            if top.level == Level::L2 {
                if let Some(x) = s.apply(&StackOp::Collapse) {
                    steps.push((self.engine.collapse_edges(top_id), x));
                }
            }
            let top_word: Vec<(u16, Level, u32)> = s
                .top_word()
                .iter()
                .map(|l| Ok((self.engine.sym_id(&l.sym)?, l.level, l.link as u32)))
                .collect::<Result<_, SummaryError>>()?;
            let (escapes, _) = self.engine.escapes(&top_word, s.word_count() as u32)?;
            for (r, rel) in escapes {
                if r >= 1 && (r as usize) < s.word_count() {
                    steps.push((rel, s.word_prefix(r as usize)));
                }
            }
            let mut acc = Rel::default();
            for (edges, x) in steps {
                if edges.0.is_empty() {
                    continue;
                }
                let sub = if u.is_substack_of(&x) {
                    self.desc_rel(&x, u)?
                } else {
                    // Substacks of s form a chain, so x lies strictly below
                    // u and the run must climb back up to it.
                    debug_assert!(x.is_substack_of(u));
                    self.reach_rel(&x, u)?
                };
                acc.absorb(&edges.compose(&sub));
            }
            loops_s.compose(&acc)
        };
        self.desc_memo
            .insert((s.clone(), u.clone()), result.clone());
        Ok(result)
    }

    fn top_loops(&mut self, s: &Stack2) -> Result<Rel, ReachError> {
        let pw: Vec<(String, Level)> = s
            .top_word()
            .iter()
            .map(|l| (l.sym.clone(), l.level))
            .collect();
        self.loops_of_path(&pw)
    }

    /// All `(q, q')` with a run from `(q, x)` to `(q', t)`: descend to the
    /// greatest milestone of `t` below `x`, then climb the milestone chain.
    fn reach_rel(&mut self, x: &Stack2, t: &Stack2) -> Result<Rel, ReachError> {
        if let Some(r) = self.reach_memo.get(&(x.clone(), t.clone())) {
            return Ok(r.clone());
        }
        let milestones = t.milestones();
        let m = milestones
            .iter()
            .rev()
            .find(|m| m.is_substack_of(x))
            .expect("the initial stack is below everything")
            .clone();
        let down = self.desc_rel(x, &m)?;
        let chain = self.chain_rel(t, &m)?;
        let result = down.compose(&chain);
        self.reach_memo
            .insert((x.clone(), t.clone()), result.clone());
        Ok(result)
    }

    /// The composite segment relation from the milestone `m` of `t` up to
    /// `t` itself (identity when `m` is `t`).
    fn chain_rel(&mut self, t: &Stack2, m: &Stack2) -> Result<Rel, ReachError> {
        let tree = encode_stack(t);
        let nodes: Vec<Addr> = tree.addrs().cloned().collect();
        let mut start = None;
        for (i, n) in nodes.iter().enumerate() {
            if codec::left_stack(&tree, n)? == *m {
                start = Some(i);
                break;
            }
        }
        let start = start.expect("m is a milestone of t");
        let mut rel = Rel::identity(self.engine.state_count());
        for i in start..nodes.len() - 1 {
            let seg = self.segment(&tree, &nodes[i], &nodes[i + 1])?;
            rel = rel.compose(&seg);
        }
        Ok(rel)
    }

    /// Plain reachability between configurations.
    pub fn reach(&mut self, c1: &Config, c2: &Config) -> Result<bool, ReachError> {
        let q1 = self.state_id(&c1.state)?;
        let q2 = self.state_id(&c2.state)?;
        let rel = self.reach_rel(&c1.stack, &c2.stack)?;
        Ok(rel.contains(q1, q2))
    }

    /// The tree automaton accepting exactly the encodings of reachable
    /// configurations.
    pub fn domain_automaton(&mut self) -> Result<Nfta<TLabel>, ReachError> {
        let quotient = self.loops_automaton()?.clone();
        if !quotient.stabilized {
            return Err(ReachError::QuotientUnstable(quotient.bound));
        }
        let builder = DomainBuilder {
            bottom: self.spec.bottom.clone(),
            alphabet: self.spec.alphabet.clone(),
            base: crate::treeops::base_labels(&self.spec),
            sym_ids: self
                .spec
                .alphabet
                .iter()
                .map(|s| (s.clone(), self.engine.sym_id(s).expect("alphabet")))
                .collect(),
            q0: self.q0(),
            n_states: self.engine.state_count(),
            quotient,
            budget_states: 60_000,
        };
        let names = self.spec.states.clone();
        builder.build(&mut self.engine, move |q| names[q as usize].clone())
    }

    /// Regular-constrained reachability: product with the word automaton,
    /// initial tag on the source, any final tag on the target.
    pub fn reach_regular(
        &mut self,
        c1: &Config,
        c2: &Config,
        constraint: &RegularConstraint,
        budget: Budget,
    ) -> Result<bool, ReachError> {
        let product = product_cps(&self.spec, constraint)?;
        let mut analysis = Analysis::new(product, budget);
        let from = Config::new(product_state(&c1.state, &constraint.initial), c1.stack.clone());
        for f in &constraint.finals {
            let to = Config::new(product_state(&c2.state, f), c2.stack.clone());
            if analysis.reach(&from, &to)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Bottom-up state of the domain automaton over the stack region.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct DS {
    /// Own label; parents need it to validate shapes and classes.
    lbl: TLabel,
    /// Class of the own path word in the loop quotient (guessed bottom-up,
    /// validated by the parent, pinned at the configuration root).
    lc: usize,
    /// Symbol of the last letter of the own path word.
    symown: String,
    /// Certificate transfer from this node's value to the value at the
    /// lex-greatest node of the subtree.
    tr: Rel,
    /// Pop transfer from the word at the subtree's lex-greatest node down
    /// past this node's own letter (used by clone segments above).
    pd: Rel,
    /// Class and last-letter symbol of the path word at the subtree's
    /// lex-greatest node.
    lcmax: usize,
    symmax: String,
    /// The 0-child's letter, for the block-maximality condition.
    lbl0: Option<(String, Level)>,
}

struct DomainBuilder {
    bottom: String,
    alphabet: Vec<String>,
    base: Vec<TLabel>,
    sym_ids: BTreeMap<String, u16>,
    q0: u16,
    n_states: u16,
    quotient: LoopsAutomaton,
    budget_states: usize,
}

impl DomainBuilder {
    fn build(
        &self,
        engine: &mut SummaryEngine,
        state_name: impl Fn(u16) -> String,
    ) -> Result<Nfta<TLabel>, ReachError> {
        let label_ix: BTreeMap<TLabel, u32> = self
            .base
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u32))
            .collect();
        let mut states: BTreeMap<DS, u32> = BTreeMap::new();
        let mut rules: BTreeSet<Rule> = BTreeSet::new();
        let mut frontier: Vec<DS> = Vec::new();

        let add = |s: DS,
                       kids: Kids,
                       states: &mut BTreeMap<DS, u32>,
                       frontier: &mut Vec<DS>,
                       rules: &mut BTreeSet<Rule>|
         -> Result<(), ReachError> {
            let label = label_ix[&s.lbl];
            let q = match states.get(&s) {
                Some(q) => *q,
                None => {
                    if states.len() >= self.budget_states {
                        return Err(ReachError::DomainBudget(self.budget_states));
                    }
                    let q = states.len() as u32;
                    states.insert(s.clone(), q);
                    frontier.push(s);
                    q
                }
            };
            rules.insert(Rule { label, kids, state: q });
            Ok(())
        };

        // Leaves.
        for (sym, lvl) in self.stack_letters() {
            for lc in 0..self.quotient.class_count() {
                let pd = self
                    .quotient
                    .value(lc)
                    .compose(&engine.pop1_like_edges(self.sym_ids[&sym], lvl));
                let s = DS {
                    lbl: TLabel::Letter(sym.clone(), lvl),
                    lc,
                    symown: sym.clone(),
                    tr: Rel::identity(self.n_states),
                    pd,
                    lcmax: lc,
                    symmax: sym.clone(),
                    lbl0: None,
                };
                add(s, Kids::Leaf, &mut states, &mut frontier, &mut rules)?;
            }
        }
        for lc in 0..self.quotient.class_count() {
            for sym in &self.alphabet {
                let s = DS {
                    lbl: TLabel::Eps,
                    lc,
                    symown: sym.clone(),
                    tr: Rel::identity(self.n_states),
                    pd: Rel::identity(self.n_states),
                    lcmax: lc,
                    symmax: sym.clone(),
                    lbl0: None,
                };
                add(s, Kids::Leaf, &mut states, &mut frontier, &mut rules)?;
            }
        }

        // Closure under parent composition; each round combines newly
        // discovered states with everything seen so far.
        let mut known: Vec<DS> = Vec::new();
        while !frontier.is_empty() {
            let fresh = std::mem::take(&mut frontier);
            let mut combos: Vec<(Option<DS>, Option<DS>)> = Vec::new();
            for f in &fresh {
                combos.push((Some(f.clone()), None));
                combos.push((None, Some(f.clone())));
                for k in known.iter().chain(fresh.iter()) {
                    combos.push((Some(f.clone()), Some(k.clone())));
                    combos.push((Some(k.clone()), Some(f.clone())));
                }
            }
            known.extend(fresh);
            for (s0, s1) in combos {
                for parent in self.compose(engine, s0.as_ref(), s1.as_ref()) {
                    let kids = match (&s0, &s1) {
                        (Some(a), None) => Kids::L(states[a]),
                        (None, Some(b)) => Kids::R(states[b]),
                        (Some(a), Some(b)) => Kids::LR(states[a], states[b]),
                        (None, None) => unreachable!(),
                    };
                    add(parent, kids, &mut states, &mut frontier, &mut rules)?;
                }
            }
        }

        // Configuration root.
        let mut auto: Nfta<TLabel> = Nfta::new(self.base.clone());
        let accept = states.len() as u32;
        auto.state_count = accept + 1;
        auto.roots.insert(accept);
        auto.rules = rules;
        for (s, id) in &states {
            if s.lbl != TLabel::Letter(self.bottom.clone(), Level::L1)
                || s.lc != self.quotient.init_class
                || s.symown != self.bottom
            {
                continue;
            }
            let mut from_q0 = BTreeSet::new();
            from_q0.insert(self.q0);
            let after_anchor = self.quotient.value(s.lc).image(&from_q0);
            for qf in s.tr.image(&after_anchor) {
                auto.rules.insert(Rule {
                    label: label_ix[&TLabel::State(state_name(qf))],
                    kids: Kids::L(*id),
                    state: accept,
                });
            }
        }
        Ok(auto.trim())
    }

    fn stack_letters(&self) -> Vec<(String, Level)> {
        self.alphabet
            .iter()
            .flat_map(|s| [(s.clone(), Level::L1), (s.clone(), Level::L2)])
            .collect()
    }

    /// All consistent parent states over the given children.
    fn compose(
        &self,
        engine: &mut SummaryEngine,
        s0: Option<&DS>,
        s1: Option<&DS>,
    ) -> Vec<DS> {
        let mut out = Vec::new();
        // The 1-child must be a word mark; the 0-child a non-bottom letter.
        if let Some(s1) = s1 {
            if s1.lbl != TLabel::Eps {
                return out;
            }
        }
        let child0 = match s0 {
            None => None,
            Some(s0) => match &s0.lbl {
                TLabel::Letter(sym, lvl) if *sym != self.bottom => {
                    Some((sym.clone(), *lvl))
                }
                _ => return out,
            },
        };
        // Block maximality: no equal level-1 letters at the 0-child and
        // the 1-child's 0-child.
        if let (Some((sym, Level::L1)), Some(s1)) = (&child0, s1) {
            if s1.lbl0 == Some((sym.clone(), Level::L1)) {
                return out;
            }
        }
        let mut own_labels: Vec<(TLabel, Option<String>)> = Vec::new();
        for (sym, lvl) in self.stack_letters() {
            own_labels.push((TLabel::Letter(sym.clone(), lvl), Some(sym)));
        }
        for sym in &self.alphabet {
            // Word marks inherit the top symbol of their path word.
            own_labels.push((TLabel::Eps, Some(sym.clone())));
        }
        for (lbl, symown) in own_labels {
            let symown = symown.expect("always set above");
            if let TLabel::Letter(s, _) = &lbl {
                if *s != symown {
                    continue;
                }
            }
            for lc in 0..self.quotient.class_count() {
                // Validate children classes and mark symbols.
                if let Some(s1) = s1 {
                    if s1.lc != lc || s1.symown != symown {
                        continue;
                    }
                }
                if let (Some(s0), Some((sym, lvl))) = (s0, &child0) {
                    match self.quotient.step(lc, (self.sym_ids[sym], *lvl)) {
                        Some(c) if c == s0.lc => {}
                        _ => continue,
                    }
                }
                let value = |c: usize| self.quotient.value(c).clone();
                // Certificate transfer across the subtree.
                let mut tr = Rel::identity(self.n_states);
                if let (Some(s0), Some((sym, lvl))) = (s0, &child0) {
                    let push =
                        engine.push_edges(self.sym_ids[&symown], self.sym_ids[sym], *lvl);
                    let seg0 = value(lc).compose(&push).compose(&value(s0.lc));
                    tr = seg0.compose(&s0.tr);
                }
                if let Some(s1) = s1 {
                    let (head_lc, head_sym, pd) = match s0 {
                        Some(s0) => (s0.lcmax, s0.symmax.clone(), s0.pd.clone()),
                        None => (lc, symown.clone(), Rel::identity(self.n_states)),
                    };
                    let seg1 = value(head_lc)
                        .compose(&engine.clone_edges(self.sym_ids[&head_sym]))
                        .compose(&pd)
                        .compose(&value(lc));
                    tr = tr.compose(&seg1).compose(&s1.tr);
                }
                // Pop transfer, extended by the own letter if any.
                let base_pd = if let Some(s1) = s1 {
                    s1.pd.clone()
                } else if let Some(s0) = s0 {
                    s0.pd.clone()
                } else {
                    unreachable!("compose is for inner nodes")
                };
                let pd = match &lbl {
                    TLabel::Letter(sym, lvl) => base_pd.compose(
                        &value(lc)
                            .compose(&engine.pop1_like_edges(self.sym_ids[sym], *lvl)),
                    ),
                    _ => base_pd,
                };
                let (lcmax, symmax) = if let Some(s1) = s1 {
                    (s1.lcmax, s1.symmax.clone())
                } else if let Some(s0) = s0 {
                    (s0.lcmax, s0.symmax.clone())
                } else {
                    unreachable!()
                };
                out.push(DS {
                    lbl: lbl.clone(),
                    lc,
                    symown: symown.clone(),
                    tr,
                    pd,
                    lcmax,
                    symmax,
                    lbl0: child0.clone(),
                });
            }
        }
        out
    }
}

fn product_state(q: &str, p: &str) -> String {
    format!("{q}/{p}")
}

/// A finite word automaton over transition names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegularConstraint {
    pub states: Vec<String>,
    pub initial: String,
    pub finals: Vec<String>,
    pub edges: Vec<(String, String, String)>, // (from, transition name, to)
}

#[derive(Deserialize)]
struct RawConstraint {
    states: Vec<String>,
    initial: String,
    finals: Vec<String>,
    edges: Vec<RawCEdge>,
}

#[derive(Deserialize)]
struct RawCEdge {
    from: String,
    #[serde(rename = "transition-name")]
    name: String,
    to: String,
}

impl RegularConstraint {
    pub fn parse(document: &str, spec: &CpsSpec) -> Result<RegularConstraint, ReachError> {
        let raw: RawConstraint =
            serde_json::from_str(document).map_err(|e| ReachError::Constraint(e.to_string()))?;
        if !raw.states.contains(&raw.initial) {
            return Err(ReachError::Constraint(format!(
                "unknown initial state {}",
                raw.initial
            )));
        }
        for f in &raw.finals {
            if !raw.states.contains(f) {
                return Err(ReachError::Constraint(format!("unknown final state {f}")));
            }
        }
        let names: BTreeSet<&String> = spec.rules.iter().map(|r| &r.name).collect();
        for e in &raw.edges {
            if !raw.states.contains(&e.from) || !raw.states.contains(&e.to) {
                return Err(ReachError::Constraint(format!(
                    "edge endpoints {}→{} not declared",
                    e.from, e.to
                )));
            }
            if !names.contains(&e.name) {
                return Err(ReachError::Constraint(format!(
                    "unknown transition name `{}`",
                    e.name
                )));
            }
        }
        Ok(RegularConstraint {
            states: raw.states,
            initial: raw.initial,
            finals: raw.finals,
            edges: raw
                .edges
                .into_iter()
                .map(|e| (e.from, e.name, e.to))
                .collect(),
        })
    }
}

/// The product system: states are pairs, transitions fire when the word
/// automaton steps on the transition's name.
pub fn product_cps(spec: &CpsSpec, r: &RegularConstraint) -> Result<CpsSpec, ReachError> {
    let mut states = Vec::new();
    for q in &spec.states {
        for p in &r.states {
            states.push(product_state(q, p));
        }
    }
    let mut rules = Vec::new();
    for rule in &spec.rules {
        for (from_p, name, to_p) in &r.edges {
            if *name != rule.name {
                continue;
            }
            rules.push(crate::system::Rule {
                name: rule.name.clone(),
                from: product_state(&rule.from, from_p),
                top: rule.top.clone(),
                to: product_state(&rule.to, to_p),
                op: rule.op.clone(),
            });
        }
    }
    Ok(CpsSpec {
        alphabet: spec.alphabet.clone(),
        bottom: spec.bottom.clone(),
        states,
        initial: product_state(&spec.initial, &r.initial),
        schema_count: rules.len(),
        rules,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{bfs_graph, reach_oracle, ExplorationBounds};
    use crate::treeops::tree_of;

    const SYS1: &str = r#"{
        "alphabet": ["⊥", "a"],
        "bottom": "⊥",
        "states": ["0", "1", "2"],
        "initial": "0",
        "transitions": [
            {"name": "cl", "from": "0", "top": "*", "to": "1", "op": "clone2"},
            {"name": "a",  "from": "1", "top": "*", "to": "0", "op": "push", "sym": "a", "level": 2},
            {"name": "a2", "from": "1", "top": "*", "to": "2", "op": "push", "sym": "a", "level": 2},
            {"name": "p",  "from": "2", "top": "a", "to": "2", "op": "pop1"},
            {"name": "co", "from": "2", "top": "a", "to": "0", "op": "collapse"}
        ]
    }"#;

    fn analysis() -> Analysis {
        Analysis::new(CpsSpec::parse(SYS1).unwrap(), Budget::default())
    }

    fn pair(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    #[test]
    fn desc_follows_collapse_links() {
        let mut an = analysis();
        let s = Stack2::parse("⊥ : ⊥ a^2@1").unwrap();
        let bot = Stack2::initial("⊥");
        let d = an.desc_of(&s, &bot).unwrap();
        assert!(d.contains(&pair("2", "0")), "collapse edge lands on ⊥: {d:?}");

        // Descent to itself is the loop closure.
        let d = an.desc_of(&s, &s).unwrap();
        assert!(d.contains(&pair("0", "0")));
        assert!(d.contains(&pair("1", "1")));
        assert!(d.contains(&pair("2", "2")));
    }

    #[test]
    fn desc_to_middle_milestone_matches_search() {
        // From (0, ⊥:⊥a) the system can collapse down to ⊥ through a copied
        // link and rebuild ⊥:⊥; an exhaustive search confirms both targets.
        let spec = CpsSpec::parse(SYS1).unwrap();
        let mut an = analysis();
        let s = Stack2::parse("⊥ : ⊥ a^2@1").unwrap();
        let u = Stack2::parse("⊥ : ⊥").unwrap();
        let d = an.desc_of(&s, &u).unwrap();
        let from0: BTreeSet<(String, String)> =
            d.iter().filter(|(a, _)| a == "0").cloned().collect();

        let bounds = ExplorationBounds::new(7, 7, 12, 60_000);
        let mut expected = BTreeSet::new();
        for q in ["0", "1", "2"] {
            let src = Config::new("0", s.clone());
            let dst = Config::new(q, u.clone());
            if reach_oracle(&spec, &src, &dst, &bounds).reached() {
                expected.insert(pair("0", q));
            }
        }
        assert_eq!(from0, expected);
        assert_eq!(expected.len(), 2, "the climb back reaches states 1 and 2");
    }

    #[test]
    fn certificates_from_drawn_run() {
        let mut an = analysis();
        let c = Config::parse("2|⊥ : ⊥ a^2@1").unwrap();
        let cert: BTreeMap<Addr, String> = [
            (Addr::root(), "0".to_string()),
            (Addr("1".into()), "1".to_string()),
            (Addr("10".into()), "2".to_string()),
        ]
        .into_iter()
        .collect();
        assert!(an.certificate_check(&c, &cert).unwrap());

        let mut bad = cert.clone();
        bad.insert(Addr("10".into()), "1".to_string());
        let c_alt = Config::parse("1|⊥ : ⊥ a^2@1").unwrap();
        assert!(!an.certificate_check(&c_alt, &bad).unwrap());

        let init = Config::parse("0|⊥").unwrap();
        let cert0: BTreeMap<Addr, String> =
            [(Addr::root(), "0".to_string())].into_iter().collect();
        assert!(an.certificate_check(&init, &cert0).unwrap());
    }

    #[test]
    fn membership_matches_exploration() {
        let spec = CpsSpec::parse(SYS1).unwrap();
        let mut an = analysis();
        assert!(an.is_reachable(&Config::parse("2|⊥ : ⊥").unwrap()).unwrap());
        assert!(!an.is_reachable(&Config::parse("1|⊥").unwrap()).unwrap());
        assert!(!an.is_reachable(&Config::parse("2|⊥").unwrap()).unwrap());
        assert!(an.is_reachable(&spec.initial_config()).unwrap());

        let g = bfs_graph(&spec, &ExplorationBounds::new(5, 5, 8, 2_000));
        for v in &g.vertices {
            assert!(an.is_reachable(v).unwrap(), "missing {v}");
        }
    }

    #[test]
    fn reach_on_drawn_pairs() {
        let mut an = analysis();
        let from = Config::parse("0|⊥").unwrap();
        let sink = Config::parse("2|⊥ : ⊥").unwrap();
        assert!(an.reach(&from, &sink).unwrap());
        assert!(!an.reach(&sink, &from).unwrap());
        assert!(an.reach(&sink, &sink).unwrap());
        assert!(an.reach(&from, &from).unwrap());
    }

    #[test]
    fn domain_automaton_matches_membership() {
        let spec = CpsSpec::parse(SYS1).unwrap();
        let mut an = analysis();
        let auto = an.domain_automaton().unwrap();

        let yes = crate::codec::encode_config(&Config::parse("2|⊥ : ⊥ a^2@1").unwrap());
        assert!(auto.accepts(&tree_of(&yes)).unwrap());
        let no = crate::codec::encode_config(&Config::parse("1|⊥").unwrap());
        assert!(!auto.accepts(&tree_of(&no)).unwrap());

        // Minimal witness decodes to the initial configuration.
        let w = auto.witness().expect("reachable set is nonempty");
        assert_eq!(w.size(), 2);
        let g = bfs_graph(&spec, &ExplorationBounds::new(4, 4, 6, 500));
        for v in &g.vertices {
            let t = crate::codec::encode_config(v);
            assert!(auto.accepts(&tree_of(&t)).unwrap(), "rejects reachable {v}");
        }
    }

    #[test]
    fn products_and_constrained_reachability() {
        let spec = CpsSpec::parse(SYS1).unwrap();
        let r = RegularConstraint::parse(
            r#"{"states": ["i", "m1", "m2", "f"], "initial": "i", "finals": ["f"],
                "edges": [
                    {"from": "i",  "transition-name": "cl", "to": "m1"},
                    {"from": "m1", "transition-name": "a2", "to": "m2"},
                    {"from": "m2", "transition-name": "co", "to": "f"}
                ]}"#,
            &spec,
        )
        .unwrap();
        let product = product_cps(&spec, &r).unwrap();
        assert_eq!(product.states.len(), 12);

        let mut an = analysis();
        let start = Config::parse("0|⊥").unwrap();
        assert!(an
            .reach_regular(&start, &start, &r, Budget::default())
            .unwrap());

        // First step must be the clone transition.
        let single = RegularConstraint::parse(
            r#"{"states": ["i", "f"], "initial": "i", "finals": ["f"],
                "edges": [{"from": "i", "transition-name": "a", "to": "f"}]}"#,
            &spec,
        )
        .unwrap();
        let target = Config::parse("1|⊥ : ⊥").unwrap();
        assert!(!an
            .reach_regular(&start, &target, &single, Budget::default())
            .unwrap());

        // The universal one-letter-alphabet constraint reduces to plain
        // reachability on sampled pairs.
        let universal = RegularConstraint::parse(
            r#"{"states": ["u"], "initial": "u", "finals": ["u"],
                "edges": [
                    {"from": "u", "transition-name": "cl", "to": "u"},
                    {"from": "u", "transition-name": "a", "to": "u"},
                    {"from": "u", "transition-name": "a2", "to": "u"},
                    {"from": "u", "transition-name": "p", "to": "u"},
                    {"from": "u", "transition-name": "co", "to": "u"}
                ]}"#,
            &spec,
        )
        .unwrap();
        let g = bfs_graph(&spec, &ExplorationBounds::new(4, 4, 4, 60));
        for c1 in g.vertices.iter().take(6) {
            for c2 in g.vertices.iter().take(6) {
                let plain = an.reach(c1, c2).unwrap();
                let constrained = an
                    .reach_regular(c1, c2, &universal, Budget::default())
                    .unwrap();
                assert_eq!(plain, constrained, "{c1} → {c2}");
            }
        }

        // An empty-language constraint admits nothing of positive length.
        let empty = RegularConstraint::parse(
            r#"{"states": ["i", "f"], "initial": "i", "finals": ["f"], "edges": []}"#,
            &spec,
        )
        .unwrap();
        assert!(!an
            .reach_regular(&start, &target, &empty, Budget::default())
            .unwrap());
    }
}
