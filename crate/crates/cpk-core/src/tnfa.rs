//! A self-contained finite tree automata algebra over binary trees whose
//! nodes may lack either child: acceptance, boolean closure, determinization,
//! complement, convolution with padding, track projection/insertion, and
//! emptiness with minimal witnesses.
//!
//! Automata run bottom-up; child shapes are part of the transition signature
//! rather than padding every tree to full binary form, because encoding
//! trees are inherently partial and padding would distort convolution.

use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// A finite binary tree with optional children.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tree<L> {
    pub label: L,
    pub left: Option<Box<Tree<L>>>,
    pub right: Option<Box<Tree<L>>>,
}

impl<L> Tree<L> {
    pub fn leaf(label: L) -> Tree<L> {
        Tree {
            label,
            left: None,
            right: None,
        }
    }

    pub fn node(label: L, left: Option<Tree<L>>, right: Option<Tree<L>>) -> Tree<L> {
        Tree {
            label,
            left: left.map(Box::new),
            right: right.map(Box::new),
        }
    }

    pub fn size(&self) -> usize {
        1 + self.left.as_ref().map_or(0, |t| t.size())
            + self.right.as_ref().map_or(0, |t| t.size())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TnfaError {
    #[error("tree label not in the automaton alphabet")]
    LabelNotInAlphabet,
    #[error("automata have different alphabets")]
    AlphabetMismatch,
    #[error("state budget {0} exceeded during determinization")]
    StateBudget(usize),
}

/// Child shape of a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kids {
    Leaf,
    L(u32),
    R(u32),
    LR(u32, u32),
}

/// One bottom-up transition: reading `label` over children in states given
/// by `kids` may assign `state`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rule {
    pub label: u32,
    pub kids: Kids,
    pub state: u32,
}

/// A nondeterministic finite tree automaton (bottom-up).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nfta<L> {
    /// The alphabet; label indices in rules refer to this list.
    pub labels: Vec<L>,
    pub state_count: u32,
    /// Accepting states at the root.
    pub roots: BTreeSet<u32>,
    pub rules: BTreeSet<Rule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum ShapeKind {
    Leaf,
    L,
    R,
    LR,
}

fn shape_kind(k: &Kids) -> ShapeKind {
    match k {
        Kids::Leaf => ShapeKind::Leaf,
        Kids::L(_) => ShapeKind::L,
        Kids::R(_) => ShapeKind::R,
        Kids::LR(..) => ShapeKind::LR,
    }
}

impl<L: Ord + Clone> Nfta<L> {
    pub fn new(labels: Vec<L>) -> Nfta<L> {
        Nfta {
            labels,
            state_count: 0,
            roots: BTreeSet::new(),
            rules: BTreeSet::new(),
        }
    }

    /// Accepts every tree over the alphabet.
    pub fn universal(labels: Vec<L>) -> Nfta<L> {
        let mut a = Nfta::new(labels);
        a.state_count = 1;
        a.roots.insert(0);
        for label in 0..a.labels.len() as u32 {
            a.rules.insert(Rule {
                label,
                kids: Kids::Leaf,
                state: 0,
            });
            a.rules.insert(Rule {
                label,
                kids: Kids::L(0),
                state: 0,
            });
            a.rules.insert(Rule {
                label,
                kids: Kids::R(0),
                state: 0,
            });
            a.rules.insert(Rule {
                label,
                kids: Kids::LR(0, 0),
                state: 0,
            });
        }
        a
    }

    /// Accepts nothing.
    pub fn empty_lang(labels: Vec<L>) -> Nfta<L> {
        Nfta::new(labels)
    }

    /// Accepts exactly the given tree.
    pub fn singleton(labels: Vec<L>, tree: &Tree<L>) -> Result<Nfta<L>, TnfaError> {
        let mut a = Nfta::new(labels);
        fn build<L: Ord + Clone>(a: &mut Nfta<L>, t: &Tree<L>) -> Result<u32, TnfaError> {
            let label = a.label_index(&t.label)?;
            let kids = match (&t.left, &t.right) {
                (None, None) => Kids::Leaf,
                (Some(l), None) => Kids::L(build(a, l)?),
                (None, Some(r)) => Kids::R(build(a, r)?),
                (Some(l), Some(r)) => {
                    let lq = build(a, l)?;
                    let rq = build(a, r)?;
                    Kids::LR(lq, rq)
                }
            };
            let state = a.state_count;
            a.state_count += 1;
            a.rules.insert(Rule { label, kids, state });
            Ok(state)
        }
        let root = build(&mut a, tree)?;
        a.roots.insert(root);
        Ok(a)
    }

    pub fn label_index(&self, l: &L) -> Result<u32, TnfaError> {
        self.labels
            .iter()
            .position(|x| x == l)
            .map(|i| i as u32)
            .ok_or(TnfaError::LabelNotInAlphabet)
    }

    fn rule_index(&self) -> BTreeMap<(u32, ShapeKind), Vec<&Rule>> {
        let mut idx: BTreeMap<(u32, ShapeKind), Vec<&Rule>> = BTreeMap::new();
        for r in &self.rules {
            idx.entry((r.label, shape_kind(&r.kids))).or_default().push(r);
        }
        idx
    }

    /// The set of states reachable at the root of `t`.
    pub fn run_states(&self, t: &Tree<L>) -> Result<BTreeSet<u32>, TnfaError> {
        let idx = self.rule_index();
        self.run_states_inner(t, &idx)
    }

    fn run_states_inner(
        &self,
        t: &Tree<L>,
        idx: &BTreeMap<(u32, ShapeKind), Vec<&Rule>>,
    ) -> Result<BTreeSet<u32>, TnfaError> {
        let label = self.label_index(&t.label)?;
        let mut out = BTreeSet::new();
        match (&t.left, &t.right) {
            (None, None) => {
                if let Some(rules) = idx.get(&(label, ShapeKind::Leaf)) {
                    out.extend(rules.iter().map(|r| r.state));
                }
            }
            (Some(l), None) => {
                let ls = self.run_states_inner(l, idx)?;
                if let Some(rules) = idx.get(&(label, ShapeKind::L)) {
                    for r in rules {
                        if let Kids::L(q) = r.kids {
                            if ls.contains(&q) {
                                out.insert(r.state);
                            }
                        }
                    }
                }
            }
            (None, Some(r0)) => {
                let rs = self.run_states_inner(r0, idx)?;
                if let Some(rules) = idx.get(&(label, ShapeKind::R)) {
                    for r in rules {
                        if let Kids::R(q) = r.kids {
                            if rs.contains(&q) {
                                out.insert(r.state);
                            }
                        }
                    }
                }
            }
            (Some(l), Some(r0)) => {
                let ls = self.run_states_inner(l, idx)?;
                let rs = self.run_states_inner(r0, idx)?;
                if let Some(rules) = idx.get(&(label, ShapeKind::LR)) {
                    for r in rules {
                        if let Kids::LR(q1, q2) = r.kids {
                            if ls.contains(&q1) && rs.contains(&q2) {
                                out.insert(r.state);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn accepts(&self, t: &Tree<L>) -> Result<bool, TnfaError> {
        Ok(self.run_states(t)?.iter().any(|q| self.roots.contains(q)))
    }

    fn require_same_alphabet(&self, other: &Nfta<L>) -> Result<(), TnfaError> {
        let a: BTreeSet<&L> = self.labels.iter().collect();
        let b: BTreeSet<&L> = other.labels.iter().collect();
        if a == b {
            Ok(())
        } else {
            Err(TnfaError::AlphabetMismatch)
        }
    }

    /// Language intersection (product) or union (disjoint sum).
    pub fn combine(&self, other: &Nfta<L>, and: bool) -> Result<Nfta<L>, TnfaError> {
        self.require_same_alphabet(other)?;
        // Re-express the other automaton over this alphabet's indices.
        let remap: Vec<u32> = other
            .labels
            .iter()
            .map(|l| self.label_index(l).expect("checked same alphabet"))
            .collect();
        if and {
            let pair = |q1: u32, q2: u32| q1 * other.state_count + q2;
            let mut out = Nfta::new(self.labels.clone());
            out.state_count = self.state_count * other.state_count;
            for q1 in &self.roots {
                for q2 in &other.roots {
                    out.roots.insert(pair(*q1, *q2));
                }
            }
            let by_key: BTreeMap<(u32, ShapeKind), Vec<&Rule>> = {
                let mut m: BTreeMap<(u32, ShapeKind), Vec<&Rule>> = BTreeMap::new();
                for r in &other.rules {
                    m.entry((remap[r.label as usize], shape_kind(&r.kids)))
                        .or_default()
                        .push(r);
                }
                m
            };
            for r1 in &self.rules {
                if let Some(partners) = by_key.get(&(r1.label, shape_kind(&r1.kids))) {
                    for r2 in partners {
                        let kids = match (&r1.kids, &r2.kids) {
                            (Kids::Leaf, Kids::Leaf) => Kids::Leaf,
                            (Kids::L(a), Kids::L(b)) => Kids::L(pair(*a, *b)),
                            (Kids::R(a), Kids::R(b)) => Kids::R(pair(*a, *b)),
                            (Kids::LR(a1, a2), Kids::LR(b1, b2)) => {
                                Kids::LR(pair(*a1, *b1), pair(*a2, *b2))
                            }
                            _ => unreachable!("grouped by shape"),
                        };
                        out.rules.insert(Rule {
                            label: r1.label,
                            kids,
                            state: pair(r1.state, r2.state),
                        });
                    }
                }
            }
            Ok(out.trim())
        } else {
            let off = self.state_count;
            let mut out = Nfta::new(self.labels.clone());
            out.state_count = self.state_count + other.state_count;
            out.roots.extend(self.roots.iter().copied());
            out.roots.extend(other.roots.iter().map(|q| q + off));
            out.rules.extend(self.rules.iter().copied());
            for r in &other.rules {
                let kids = match r.kids {
                    Kids::Leaf => Kids::Leaf,
                    Kids::L(a) => Kids::L(a + off),
                    Kids::R(a) => Kids::R(a + off),
                    Kids::LR(a, b) => Kids::LR(a + off, b + off),
                };
                out.rules.insert(Rule {
                    label: remap[r.label as usize],
                    kids,
                    state: r.state + off,
                });
            }
            Ok(out)
        }
    }

    /// Drops states that cannot occur in any bottom-up run and rules
    /// referring to them.
    pub fn trim(&self) -> Nfta<L> {
        let mut alive: BTreeSet<u32> = BTreeSet::new();
        loop {
            let mut changed = false;
            for r in &self.rules {
                let ok = match r.kids {
                    Kids::Leaf => true,
                    Kids::L(a) | Kids::R(a) => alive.contains(&a),
                    Kids::LR(a, b) => alive.contains(&a) && alive.contains(&b),
                };
                if ok && alive.insert(r.state) {
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let index: BTreeMap<u32, u32> = alive
            .iter()
            .enumerate()
            .map(|(i, q)| (*q, i as u32))
            .collect();
        let mut out = Nfta::new(self.labels.clone());
        out.state_count = alive.len() as u32;
        out.roots = self
            .roots
            .iter()
            .filter_map(|q| index.get(q).copied())
            .collect();
        for r in &self.rules {
            let kids = match r.kids {
                Kids::Leaf => Kids::Leaf,
                Kids::L(a) => match index.get(&a) {
                    Some(a) => Kids::L(*a),
                    None => continue,
                },
                Kids::R(a) => match index.get(&a) {
                    Some(a) => Kids::R(*a),
                    None => continue,
                },
                Kids::LR(a, b) => match (index.get(&a), index.get(&b)) {
                    (Some(a), Some(b)) => Kids::LR(*a, *b),
                    _ => continue,
                },
            };
            if let Some(state) = index.get(&r.state) {
                out.rules.insert(Rule {
                    label: r.label,
                    kids,
                    state: *state,
                });
            }
        }
        out
    }

    /// Bottom-up subset construction. The result is deterministic and
    /// complete: every tree over the alphabet has exactly one run.
    pub fn determinize(&self, state_budget: usize) -> Result<Nfta<L>, TnfaError> {
        let idx = self.rule_index();
        let mut subsets: Vec<BTreeSet<u32>> = Vec::new();
        let mut subset_index: BTreeMap<BTreeSet<u32>, u32> = BTreeMap::new();
        let mut rules: BTreeSet<Rule> = BTreeSet::new();
        let intern = |s: BTreeSet<u32>,
                          subsets: &mut Vec<BTreeSet<u32>>,
                          subset_index: &mut BTreeMap<BTreeSet<u32>, u32>|
         -> u32 {
            if let Some(i) = subset_index.get(&s) {
                return *i;
            }
            let i = subsets.len() as u32;
            subsets.push(s.clone());
            subset_index.insert(s, i);
            i
        };
        // The empty subset doubles as the completion sink.
        intern(BTreeSet::new(), &mut subsets, &mut subset_index);
        for label in 0..self.labels.len() as u32 {
            let image: BTreeSet<u32> = idx
                .get(&(label, ShapeKind::Leaf))
                .map(|rs| rs.iter().map(|r| r.state).collect())
                .unwrap_or_default();
            let q = intern(image, &mut subsets, &mut subset_index);
            rules.insert(Rule {
                label,
                kids: Kids::Leaf,
                state: q,
            });
        }
        // Saturate unary and binary transitions over discovered subsets.
        let mut done_upto = 0usize;
        loop {
            let n = subsets.len();
            if n > state_budget {
                return Err(TnfaError::StateBudget(state_budget));
            }
            if done_upto == n {
                break;
            }
            for label in 0..self.labels.len() as u32 {
                for di in 0..n {
                    // Unary shapes only need each subset once; binary shapes
                    // need all pairs with at least one new side.
                    if di >= done_upto {
                        for (kind, mk) in [(ShapeKind::L, 0), (ShapeKind::R, 1)] {
                            let mut image = BTreeSet::new();
                            if let Some(rs) = idx.get(&(label, kind)) {
                                for r in rs {
                                    let q0 = match r.kids {
                                        Kids::L(q) | Kids::R(q) => q,
                                        _ => unreachable!(),
                                    };
                                    if subsets[di].contains(&q0) {
                                        image.insert(r.state);
                                    }
                                }
                            }
                            let q = intern(image, &mut subsets, &mut subset_index);
                            rules.insert(Rule {
                                label,
                                kids: if mk == 0 {
                                    Kids::L(di as u32)
                                } else {
                                    Kids::R(di as u32)
                                },
                                state: q,
                            });
                        }
                    }
                    for dj in 0..n {
                        if di < done_upto && dj < done_upto {
                            continue;
                        }
                        let mut image = BTreeSet::new();
                        if let Some(rs) = idx.get(&(label, ShapeKind::LR)) {
                            for r in rs {
                                if let Kids::LR(q1, q2) = r.kids {
                                    if subsets[di].contains(&q1) && subsets[dj].contains(&q2) {
                                        image.insert(r.state);
                                    }
                                }
                            }
                        }
                        let q = intern(image, &mut subsets, &mut subset_index);
                        rules.insert(Rule {
                            label,
                            kids: Kids::LR(di as u32, dj as u32),
                            state: q,
                        });
                    }
                }
            }
            done_upto = n;
        }
        let mut out = Nfta::new(self.labels.clone());
        out.state_count = subsets.len() as u32;
        out.rules = rules;
        for (i, s) in subsets.iter().enumerate() {
            if s.iter().any(|q| self.roots.contains(q)) {
                out.roots.insert(i as u32);
            }
        }
        Ok(out)
    }

    /// All trees over the alphabet not accepted.
    pub fn complement(&self, state_budget: usize) -> Result<Nfta<L>, TnfaError> {
        let det = self.determinize(state_budget)?;
        let mut out = det.clone();
        out.roots = (0..det.state_count)
            .filter(|q| !det.roots.contains(q))
            .collect();
        Ok(out)
    }

    /// Emptiness check; a nonempty language yields a minimal-size witness
    /// (ties broken by tree order).
    pub fn witness(&self) -> Option<Tree<L>> {
        let mut best: BTreeMap<u32, Tree<L>> = BTreeMap::new();
        let better = |cand: &Tree<L>, old: Option<&Tree<L>>| match old {
            None => true,
            Some(o) => (cand.size(), cand) < (o.size(), o),
        };
        loop {
            let mut changed = false;
            for r in &self.rules {
                let cand = match r.kids {
                    Kids::Leaf => Some(Tree::leaf(self.labels[r.label as usize].clone())),
                    Kids::L(a) => best.get(&a).cloned().map(|t| {
                        Tree::node(self.labels[r.label as usize].clone(), Some(t), None)
                    }),
                    Kids::R(a) => best.get(&a).cloned().map(|t| {
                        Tree::node(self.labels[r.label as usize].clone(), None, Some(t))
                    }),
                    Kids::LR(a, b) => match (best.get(&a), best.get(&b)) {
                        (Some(ta), Some(tb)) => Some(Tree::node(
                            self.labels[r.label as usize].clone(),
                            Some(ta.clone()),
                            Some(tb.clone()),
                        )),
                        _ => None,
                    },
                };
                if let Some(c) = cand {
                    if better(&c, best.get(&r.state)) {
                        best.insert(r.state, c);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        self.roots
            .iter()
            .filter_map(|q| best.get(q))
            .min_by(|a, b| (a.size(), *a).cmp(&(b.size(), *b)))
            .cloned()
    }

    pub fn is_empty(&self) -> bool {
        self.witness().is_none()
    }

    /// Canonical dump: states, roots, and transitions one per line.
    pub fn dump(&self, show_label: impl Fn(&L) -> String) -> String {
        let mut out = format!("states {}\n", self.state_count);
        for q in &self.roots {
            out.push_str(&format!("root {q}\n"));
        }
        for r in &self.rules {
            let kids = match r.kids {
                Kids::Leaf => "leaf".to_string(),
                Kids::L(a) => format!("l({a})"),
                Kids::R(a) => format!("r({a})"),
                Kids::LR(a, b) => format!("lr({a},{b})"),
            };
            out.push_str(&format!(
                "rule {} {} -> {}\n",
                show_label(&self.labels[r.label as usize]),
                kids,
                r.state
            ));
        }
        out
    }
}

/// A k-track convolution label; absent positions are padded with `None`,
/// and the all-padding tuple never occurs.
pub type ConvLabel<L> = Vec<Option<L>>;

/// Overlays trees on the union of their domains.
pub fn convolve<L: Clone>(trees: &[&Tree<L>]) -> Tree<ConvLabel<L>> {
    fn go<L: Clone>(trees: &[Option<&Tree<L>>]) -> Tree<ConvLabel<L>> {
        let label: ConvLabel<L> = trees
            .iter()
            .map(|t| t.map(|t| t.label.clone()))
            .collect();
        let lefts: Vec<Option<&Tree<L>>> = trees
            .iter()
            .map(|t| t.and_then(|t| t.left.as_deref()))
            .collect();
        let rights: Vec<Option<&Tree<L>>> = trees
            .iter()
            .map(|t| t.and_then(|t| t.right.as_deref()))
            .collect();
        let left = lefts.iter().any(|t| t.is_some()).then(|| go(&lefts));
        let right = rights.iter().any(|t| t.is_some()).then(|| go(&rights));
        Tree {
            label,
            left: left.map(Box::new),
            right: right.map(Box::new),
        }
    }
    let slots: Vec<Option<&Tree<L>>> = trees.iter().map(|t| Some(*t)).collect();
    go(&slots)
}

/// The full k-track alphabet over a base label universe.
pub fn conv_alphabet<L: Ord + Clone>(base: &[L], k: usize) -> Vec<ConvLabel<L>> {
    let mut out: Vec<ConvLabel<L>> = vec![Vec::new()];
    for _ in 0..k {
        let mut next = Vec::new();
        for prefix in &out {
            let mut with_none = prefix.clone();
            with_none.push(None);
            next.push(with_none);
            for l in base {
                let mut with = prefix.clone();
                with.push(Some(l.clone()));
                next.push(with);
            }
        }
        out = next;
    }
    out.retain(|l| l.iter().any(|x| x.is_some()));
    out.sort();
    out
}

impl<L: Ord + Clone> Nfta<ConvLabel<L>> {
    /// Existentially removes track `i`: accepted are exactly the trees
    /// obtained from accepted trees by deleting track `i` and dropping
    /// nodes that become all-padding.
    pub fn project(&self, track: usize) -> Nfta<ConvLabel<L>> {
        // States that some track-i-only subtree can reach; such subtrees
        // vanish entirely under projection.
        let mut phantom: BTreeSet<u32> = BTreeSet::new();
        let only_i = |label: &ConvLabel<L>| {
            label
                .iter()
                .enumerate()
                .all(|(j, x)| (j == track) == x.is_some())
        };
        loop {
            let mut changed = false;
            for r in &self.rules {
                if !only_i(&self.labels[r.label as usize]) {
                    continue;
                }
                let ok = match r.kids {
                    Kids::Leaf => true,
                    Kids::L(a) | Kids::R(a) => phantom.contains(&a),
                    Kids::LR(a, b) => phantom.contains(&a) && phantom.contains(&b),
                };
                if ok && phantom.insert(r.state) {
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let strip = |label: &ConvLabel<L>| -> ConvLabel<L> {
            label
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != track)
                .map(|(_, x)| x.clone())
                .collect()
        };
        let new_labels: Vec<ConvLabel<L>> = {
            let mut ls: BTreeSet<ConvLabel<L>> = BTreeSet::new();
            for l in &self.labels {
                let s = strip(l);
                if s.iter().any(|x| x.is_some()) {
                    ls.insert(s);
                }
            }
            ls.into_iter().collect()
        };
        let mut out: Nfta<ConvLabel<L>> = Nfta::new(new_labels);
        out.state_count = self.state_count;
        out.roots = self.roots.clone();
        for r in &self.rules {
            let stripped = strip(&self.labels[r.label as usize]);
            if !stripped.iter().any(|x| x.is_some()) {
                continue; // node vanishes; handled through phantom states
            }
            let label = out
                .label_index(&stripped)
                .expect("stripped label was collected");
            // Children whose subtree was track-i-only disappear from the
            // shape; every combination of kept/vanished children is allowed.
            let mut variants: Vec<Kids> = Vec::new();
            match r.kids {
                Kids::Leaf => variants.push(Kids::Leaf),
                Kids::L(a) => {
                    variants.push(Kids::L(a));
                    if phantom.contains(&a) {
                        variants.push(Kids::Leaf);
                    }
                }
                Kids::R(a) => {
                    variants.push(Kids::R(a));
                    if phantom.contains(&a) {
                        variants.push(Kids::Leaf);
                    }
                }
                Kids::LR(a, b) => {
                    variants.push(Kids::LR(a, b));
                    if phantom.contains(&a) {
                        variants.push(Kids::R(b));
                    }
                    if phantom.contains(&b) {
                        variants.push(Kids::L(a));
                    }
                    if phantom.contains(&a) && phantom.contains(&b) {
                        variants.push(Kids::Leaf);
                    }
                }
            }
            for kids in variants {
                out.rules.insert(Rule {
                    label,
                    kids,
                    state: r.state,
                });
            }
        }
        out.trim()
    }

    /// Swaps the two tracks of a binary relation automaton.
    pub fn transpose2(&self) -> Nfta<ConvLabel<L>> {
        let mut labels: Vec<ConvLabel<L>> = self
            .labels
            .iter()
            .map(|l| {
                let mut l = l.clone();
                l.reverse();
                l
            })
            .collect();
        let order: BTreeMap<ConvLabel<L>, u32> = {
            let mut ls = labels.clone();
            ls.sort();
            ls.into_iter()
                .enumerate()
                .map(|(i, l)| (l, i as u32))
                .collect()
        };
        let remap: Vec<u32> = labels.iter().map(|l| order[l]).collect();
        labels.sort();
        let mut out = Nfta::new(labels);
        out.state_count = self.state_count;
        out.roots = self.roots.clone();
        for r in &self.rules {
            out.rules.insert(Rule {
                label: remap[r.label as usize],
                kids: r.kids,
                state: r.state,
            });
        }
        out
    }

    /// Inserts a fresh unconstrained track at position `i` ranging over
    /// `base`; the new track may also extend beyond the current domain.
    pub fn cylindrify(&self, track: usize, base: &[L]) -> Nfta<ConvLabel<L>> {
        let k = if self.labels.is_empty() {
            track
        } else {
            self.labels[0].len()
        };
        let insert =
            |label: &ConvLabel<L>, x: Option<L>| -> ConvLabel<L> {
                let mut l = label.clone();
                l.insert(track, x);
                l
            };
        let mut new_labels: BTreeSet<ConvLabel<L>> = BTreeSet::new();
        for l in &self.labels {
            new_labels.insert(insert(l, None));
            for b in base {
                new_labels.insert(insert(l, Some(b.clone())));
            }
        }
        // Labels where only the new track is present (beyond-domain nodes).
        for b in base {
            let mut only = vec![None; k];
            only.insert(track, Some(b.clone()));
            new_labels.insert(only);
        }
        let mut out: Nfta<ConvLabel<L>> = Nfta::new(new_labels.into_iter().collect());
        // State p = "track-i-only subtree", appended after existing states.
        let p = self.state_count;
        out.state_count = self.state_count + 1;
        out.roots = self.roots.clone();
        let only_labels: Vec<u32> = out
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.iter().enumerate().all(|(j, x)| (j == track) == x.is_some()))
            .map(|(i, _)| i as u32)
            .collect();
        for label in &only_labels {
            for kids in [Kids::Leaf, Kids::L(p), Kids::R(p), Kids::LR(p, p)] {
                out.rules.insert(Rule {
                    label: *label,
                    kids,
                    state: p,
                });
            }
        }
        for r in &self.rules {
            let old_label = &self.labels[r.label as usize];
            let mut values: Vec<Option<L>> = vec![None];
            values.extend(base.iter().cloned().map(Some));
            for v in values {
                let label = out
                    .label_index(&insert(old_label, v))
                    .expect("inserted label was collected");
                // The new track can hang extra subtrees where the original
                // tree had no child.
                let mut variants: Vec<Kids> = vec![r.kids];
                match r.kids {
                    Kids::Leaf => {
                        variants.push(Kids::L(p));
                        variants.push(Kids::R(p));
                        variants.push(Kids::LR(p, p));
                    }
                    Kids::L(a) => variants.push(Kids::LR(a, p)),
                    Kids::R(a) => variants.push(Kids::LR(p, a)),
                    Kids::LR(..) => {}
                }
                for kids in variants {
                    out.rules.insert(Rule {
                        label,
                        kids,
                        state: r.state,
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type L = char;

    fn t(label: L, left: Option<Tree<L>>, right: Option<Tree<L>>) -> Tree<L> {
        Tree::node(label, left, right)
    }

    fn alphabet() -> Vec<L> {
        vec!['a', 'b', 'c']
    }

    fn sample_trees() -> Vec<Tree<L>> {
        let mut out = vec![
            Tree::leaf('a'),
            Tree::leaf('b'),
            t('a', Some(Tree::leaf('b')), None),
            t('a', None, Some(Tree::leaf('c'))),
            t('b', Some(Tree::leaf('a')), Some(Tree::leaf('c'))),
            t(
                'c',
                Some(t('a', Some(Tree::leaf('b')), None)),
                Some(Tree::leaf('a')),
            ),
        ];
        let more: Vec<Tree<L>> = out
            .iter()
            .map(|x| t('b', Some(x.clone()), Some(Tree::leaf('c'))))
            .collect();
        out.extend(more);
        out
    }

    /// Accepts trees whose root label is `l`.
    fn root_is(l: L) -> Nfta<L> {
        let mut a = Nfta::universal(alphabet());
        // State 1 = root saw `l`.
        a.state_count = 2;
        a.roots = [1].into_iter().collect();
        let li = a.label_index(&l).unwrap();
        for kids in [Kids::Leaf, Kids::L(0), Kids::R(0), Kids::LR(0, 0)] {
            a.rules.insert(Rule {
                label: li,
                kids,
                state: 1,
            });
        }
        a
    }

    #[test]
    fn universal_and_empty() {
        let u = Nfta::universal(alphabet());
        let e = Nfta::<L>::empty_lang(alphabet());
        for tr in sample_trees() {
            assert!(u.accepts(&tr).unwrap());
            assert!(!e.accepts(&tr).unwrap());
        }
        assert!(e.is_empty());
        // The smallest witness of the universal automaton is a single leaf
        // with the least label.
        assert_eq!(u.witness().unwrap(), Tree::leaf('a'));
    }

    #[test]
    fn boolean_laws_pointwise() {
        let a = root_is('a');
        let b = root_is('b');
        let and = a.combine(&b, true).unwrap();
        let or = a.combine(&b, false).unwrap();
        let not_a = a.complement(1 << 16).unwrap();
        for tr in sample_trees() {
            let pa = a.accepts(&tr).unwrap();
            let pb = b.accepts(&tr).unwrap();
            assert_eq!(and.accepts(&tr).unwrap(), pa && pb);
            assert_eq!(or.accepts(&tr).unwrap(), pa || pb);
            assert_eq!(not_a.accepts(&tr).unwrap(), !pa);
            let nn = not_a.complement(1 << 16).unwrap();
            assert_eq!(nn.accepts(&tr).unwrap(), pa);
        }
        assert!(a.combine(&not_a, true).unwrap().is_empty());
        assert!(Nfta::universal(alphabet())
            .complement(1 << 16)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn determinize_preserves_acceptance_and_emptiness() {
        for auto in [root_is('a'), root_is('c'), Nfta::universal(alphabet())] {
            let det = auto.determinize(1 << 16).unwrap();
            for tr in sample_trees() {
                assert_eq!(det.accepts(&tr).unwrap(), auto.accepts(&tr).unwrap());
                assert_eq!(det.run_states(&tr).unwrap().len(), 1, "must be deterministic");
            }
            assert_eq!(det.is_empty(), auto.is_empty());
        }
    }

    #[test]
    fn singleton_accepts_only_its_tree() {
        let trees = sample_trees();
        let target = trees[4].clone();
        let a = Nfta::singleton(alphabet(), &target).unwrap();
        for tr in &trees {
            assert_eq!(a.accepts(tr).unwrap(), *tr == target);
        }
        assert_eq!(a.witness().unwrap(), target);
    }

    #[test]
    fn alphabet_mismatch_is_reported() {
        let a = Nfta::universal(alphabet());
        let b = Nfta::universal(vec!['x']);
        assert!(matches!(
            a.combine(&b, true),
            Err(TnfaError::AlphabetMismatch)
        ));
        assert!(matches!(
            a.accepts(&Tree::leaf('z')),
            Err(TnfaError::LabelNotInAlphabet)
        ));
    }

    #[test]
    fn convolution_matches_definition() {
        let x = t('a', Some(Tree::leaf('b')), None);
        let same = convolve(&[&x, &x]);
        assert_eq!(same.size(), x.size());
        assert_eq!(same.label, vec![Some('a'), Some('a')]);

        // A leaf against a two-node tree pads the extra node.
        let y = t('c', None, Some(Tree::leaf('a')));
        let c = convolve(&[&Tree::leaf('a'), &y]);
        assert_eq!(c.label, vec![Some('a'), Some('c')]);
        assert_eq!(c.right.as_ref().unwrap().label, vec![None, Some('a')]);
        assert!(c.left.is_none());

        // Domains merge: left-only and right-only children both survive.
        let l = t('a', Some(Tree::leaf('b')), None);
        let r = t('a', None, Some(Tree::leaf('c')));
        let c = convolve(&[&l, &r]);
        assert_eq!(c.left.as_ref().unwrap().label, vec![Some('b'), None]);
        assert_eq!(c.right.as_ref().unwrap().label, vec![None, Some('c')]);
    }

    #[test]
    fn projection_of_diagonal_is_full_language() {
        // Diagonal: pairs (t, t). Projecting either track gives everything.
        let base = alphabet();
        let mut diag: Nfta<ConvLabel<L>> = Nfta::new(conv_alphabet(&base, 2));
        diag.state_count = 1;
        diag.roots.insert(0);
        for l in &base {
            let li = diag.label_index(&vec![Some(*l), Some(*l)]).unwrap();
            for kids in [Kids::Leaf, Kids::L(0), Kids::R(0), Kids::LR(0, 0)] {
                diag.rules.insert(Rule {
                    label: li,
                    kids,
                    state: 0,
                });
            }
        }
        let proj = diag.project(1);
        for tr in sample_trees() {
            let one: Tree<ConvLabel<L>> = map_single(&tr);
            assert!(proj.accepts(&one).unwrap());
        }
    }

    fn map_single(t: &Tree<L>) -> Tree<ConvLabel<L>> {
        Tree {
            label: vec![Some(t.label)],
            left: t.left.as_ref().map(|x| Box::new(map_single(x))),
            right: t.right.as_ref().map(|x| Box::new(map_single(x))),
        }
    }

    #[test]
    fn cylindrify_then_project_roundtrip_on_membership() {
        let a = root_is('b');
        // Lift to track layout (x, new) and quantify the new track away.
        let single: Nfta<ConvLabel<L>> = {
            let mut out: Nfta<ConvLabel<L>> =
                Nfta::new(conv_alphabet(&alphabet(), 1));
            out.state_count = a.state_count;
            out.roots = a.roots.clone();
            for r in &a.rules {
                let label = out
                    .label_index(&vec![Some(a.labels[r.label as usize])])
                    .unwrap();
                out.rules.insert(Rule {
                    label,
                    kids: r.kids,
                    state: r.state,
                });
            }
            out
        };
        let lifted = single.cylindrify(1, &alphabet());
        // The lifted automaton constrains only its original track.
        for tr in sample_trees() {
            for partner in [Tree::leaf('a'), t('c', Some(Tree::leaf('b')), None)] {
                let conv = convolve(&[&tr, &partner]);
                assert_eq!(
                    lifted.accepts(&conv).unwrap(),
                    a.accepts(&tr).unwrap(),
                    "tree {tr:?} with partner {partner:?}"
                );
            }
        }
        let back = lifted.project(1);
        for tr in sample_trees() {
            assert_eq!(
                back.accepts(&map_single(&tr)).unwrap(),
                a.accepts(&tr).unwrap()
            );
        }
    }

    #[test]
    fn witnesses_are_accepted_and_minimal() {
        let b = root_is('b');
        let w = b.witness().unwrap();
        assert!(b.accepts(&w).unwrap());
        assert_eq!(w, Tree::leaf('b'));
    }
}
