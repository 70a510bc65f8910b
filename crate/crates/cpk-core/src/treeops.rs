//! Stack operations as direct tree surgery, and the per-edge-label tree
//! automata recognising those surgeries on convolutions of encodings.
//!
//! Every operation touches the encoding only near the lexicographically
//! greatest node: clone hangs a fresh word mark under it, push extends it,
//! the pops and collapse remove it or the whole region after a word mark.
//! Pushing a level-1 letter that equals the parallel letter of the word
//! below merges blocks (the encoding forbids equal level-1 siblings), so
//! the word mark relocates one letter deeper; popping undoes it.

use crate::codec::{Addr, TLabel, TreeMap};
use crate::stack::{Level, StackOp};
use crate::system::CpsSpec;
use crate::tnfa::{conv_alphabet, ConvLabel, Kids, Nfta, Rule};
use std::collections::BTreeMap;

/// Applies a stack operation directly on a stack tree; `None` mirrors the
/// undefined cases of the stack semantics. The decode→apply→encode
/// composition is kept separate as the differential oracle.
pub fn tree_op_apply(t: &TreeMap, op: &StackOp) -> Option<TreeMap> {
    let lexmax = t.lex_max()?.clone();
    match op {
        StackOp::Clone2 => {
            let mut out = t.clone();
            out.insert(lexmax.child(1), TLabel::Eps);
            Some(out)
        }
        StackOp::Push { sym, level } => {
            let bottom = match t.get(&Addr::root()) {
                Some(TLabel::Letter(b, Level::L1)) => b.clone(),
                _ => return None,
            };
            if *sym == bottom {
                return None;
            }
            if *level == Level::L1 {
                if let Some(TLabel::Eps) = t.get(&lexmax) {
                    let host = lexmax.parent().expect("eps nodes are never the root");
                    let parallel = host.child(0);
                    if t.get(&parallel) == Some(&TLabel::Letter(sym.clone(), Level::L1)) {
                        // Block merge: relocate the word mark one letter
                        // deeper, at the end of the parallel letter's chain
                        // of word marks.
                        let mut out = t.clone();
                        out.remove(&lexmax);
                        let mut end = parallel;
                        while out.contains(&end.child(1)) {
                            end = end.child(1);
                        }
                        out.insert(end.child(1), TLabel::Eps);
                        return Some(out);
                    }
                }
            }
            let mut out = t.clone();
            out.insert(lexmax.child(0), TLabel::Letter(sym.clone(), *level));
            Some(out)
        }
        StackOp::Pop1 => {
            match t.get(&lexmax) {
                Some(TLabel::Eps) => {
                    // The top word ends exactly at a word mark; shorten it
                    // by relocating the mark one letter shallower.
                    let letters: Vec<Addr> = path_letter_nodes(t, &lexmax);
                    if letters.len() < 2 {
                        return None; // single-letter top word
                    }
                    let anchor = letters[letters.len() - 2].clone();
                    let mut out = t.clone();
                    out.remove(&lexmax);
                    let mut end = anchor;
                    while out.contains(&end.child(1)) {
                        end = end.child(1);
                    }
                    out.insert(end.child(1), TLabel::Eps);
                    Some(out)
                }
                Some(TLabel::Letter(..)) => {
                    if lexmax.is_root() {
                        return None;
                    }
                    let mut out = t.clone();
                    out.remove(&lexmax);
                    Some(out)
                }
                _ => None,
            }
        }
        StackOp::Pop2 => {
            let g = lexmax.strip_zeros();
            if g.is_root() {
                return None;
            }
            let mut out = t.clone();
            out.remove_subtree(&g);
            Some(out)
        }
        StackOp::Collapse => {
            // First non-ε ancestor-or-self of the greatest node is the
            // letter the collapse goes through.
            let mut d = lexmax.clone();
            while matches!(t.get(&d), Some(TLabel::Eps)) {
                d = d.parent().expect("the root is a letter");
            }
            match t.get(&d) {
                Some(TLabel::Letter(_, Level::L1)) => tree_op_apply(t, &StackOp::Pop1),
                Some(TLabel::Letter(_, Level::L2)) => {
                    let g = d.strip_zeros();
                    if g.is_root() {
                        return None;
                    }
                    let mut out = t.clone();
                    out.remove_subtree(&g);
                    Some(out)
                }
                _ => None,
            }
        }
    }
}

fn path_letter_nodes(t: &TreeMap, d: &Addr) -> Vec<Addr> {
    let mut out = Vec::new();
    for i in 0..=d.0.len() {
        let a = Addr(d.0[..i].to_string());
        if matches!(t.get(&a), Some(TLabel::Letter(..))) {
            out.push(a);
        }
    }
    out
}

/// The base label universe of a system's encoding trees.
pub fn base_labels(spec: &CpsSpec) -> Vec<TLabel> {
    let mut out: Vec<TLabel> = spec
        .states
        .iter()
        .map(|q| TLabel::State(q.clone()))
        .collect();
    for s in &spec.alphabet {
        out.push(TLabel::Letter(s.clone(), Level::L1));
        out.push(TLabel::Letter(s.clone(), Level::L2));
    }
    out.push(TLabel::Eps);
    out.sort();
    out
}

/// Pattern-machine states for the convolution of a stack tree with the
/// result of one operation on it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum PState {
    /// Identical subtrees on both tracks.
    Eq,
    /// The single added node (second track only).
    Added(TLabel),
    /// ε node (both tracks) whose word-mark chain ends in the added ε.
    ChainToAdded,
    /// Level-1 letter node whose chain gained the added ε (block merge).
    MergeHost(String),
    /// Deleted ε word mark (first track only), as a leaf.
    DelEpsLeaf,
    /// Track-1-only pure letter chain; carries its deepest letter.
    DelChain(String, Level),
    /// Track-1-only full region: first non-ε ancestor-or-self of its
    /// greatest node, and whether that node sits on the region root's
    /// 0-spine.
    DelFull {
        ts: Option<(String, Level)>,
        on0: bool,
    },
    /// Difference consumed; threading toward the stack root along the
    /// greatest-node path, resolving the top symbol of the source stack.
    Up {
        ts: Option<(String, Level)>,
        fact: Fact,
    },
}

/// What change the pattern recognised, with the data the guards need.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Fact {
    Cloned,
    Pushed(String, Level),
    PushMerged(String),
    Popped2,
    Collapsed(String),
}

struct PatternBuilder {
    labels: Vec<ConvLabel<TLabel>>,
    states: BTreeMap<PState, u32>,
    rules: Vec<(u32, Kids, u32)>,
}

impl PatternBuilder {
    fn new(labels: Vec<ConvLabel<TLabel>>) -> Self {
        PatternBuilder {
            labels,
            states: BTreeMap::new(),
            rules: Vec::new(),
        }
    }

    fn state(&mut self, s: PState) -> u32 {
        let next = self.states.len() as u32;
        *self.states.entry(s).or_insert(next)
    }

    fn label(&self, l: &ConvLabel<TLabel>) -> u32 {
        self.labels
            .iter()
            .position(|x| x == l)
            .expect("label in conv alphabet") as u32
    }

    fn rule(&mut self, label: ConvLabel<TLabel>, kids: Kids, state: PState) {
        let l = self.label(&label);
        let q = self.state(state);
        self.rules.push((l, kids, q));
    }

    fn both(l: &TLabel) -> ConvLabel<TLabel> {
        vec![Some(l.clone()), Some(l.clone())]
    }

    fn only1(l: &TLabel) -> ConvLabel<TLabel> {
        vec![Some(l.clone()), None]
    }

    fn only2(l: &TLabel) -> ConvLabel<TLabel> {
        vec![None, Some(l.clone())]
    }
}

fn resolve(ts: &Option<(String, Level)>, here: &TLabel) -> Option<(String, Level)> {
    match ts {
        Some(x) => Some(x.clone()),
        None => match here {
            TLabel::Letter(s, l) => Some((s.clone(), *l)),
            _ => None,
        },
    }
}

/// Builds the stack-level pattern rules shared by all operations. Facts
/// carried to the stack root tell the per-operation wrapper what happened.
fn build_patterns(spec: &CpsSpec) -> (Vec<ConvLabel<TLabel>>, Vec<(u32, Kids, u32)>, BTreeMap<PState, u32>) {
    let base = base_labels(spec);
    let alphabet = conv_alphabet(&base, 2);
    let mut b = PatternBuilder::new(alphabet);
    let letters: Vec<(String, Level)> = spec
        .alphabet
        .iter()
        .flat_map(|s| [(s.clone(), Level::L1), (s.clone(), Level::L2)])
        .collect();
    let stack_labels: Vec<TLabel> = letters
        .iter()
        .map(|(s, l)| TLabel::Letter(s.clone(), *l))
        .chain([TLabel::Eps])
        .collect();
    let mut ts_values: Vec<Option<(String, Level)>> = vec![None];
    ts_values.extend(letters.iter().cloned().map(Some));

    // Equal subtrees.
    for l in &stack_labels {
        let eq = b.state(PState::Eq);
        for kids in [Kids::Leaf, Kids::L(eq), Kids::R(eq), Kids::LR(eq, eq)] {
            b.rule(PatternBuilder::both(l), kids, PState::Eq);
        }
    }

    // Single added / deleted leaves.
    b.rule(
        PatternBuilder::only2(&TLabel::Eps),
        Kids::Leaf,
        PState::Added(TLabel::Eps),
    );
    for (s, l) in &letters {
        b.rule(
            PatternBuilder::only2(&TLabel::Letter(s.clone(), *l)),
            Kids::Leaf,
            PState::Added(TLabel::Letter(s.clone(), *l)),
        );
    }
    b.rule(
        PatternBuilder::only1(&TLabel::Eps),
        Kids::Leaf,
        PState::DelEpsLeaf,
    );

    // Base cases at the greatest node of the source tree.
    for host in &stack_labels {
        // Clone: ε added as the 1-child of a leaf.
        let added = b.state(PState::Added(TLabel::Eps));
        b.rule(
            PatternBuilder::both(host),
            Kids::R(added),
            PState::Up {
                ts: resolve(&None, host),
                fact: Fact::Cloned,
            },
        );
        // Plain push: a letter added as the 0-child of a leaf.
        for (s, l) in &letters {
            let added = b.state(PState::Added(TLabel::Letter(s.clone(), *l)));
            b.rule(
                PatternBuilder::both(host),
                Kids::L(added),
                PState::Up {
                    ts: resolve(&None, host),
                    fact: Fact::Pushed(s.clone(), *l),
                },
            );
        }
    }

    // Block-merge machinery: the added ε travels to the end of the word
    // mark chain under the parallel level-1 letter.
    {
        let added = b.state(PState::Added(TLabel::Eps));
        let chain = b.state(PState::ChainToAdded);
        let eq = b.state(PState::Eq);
        for tail in [added, chain] {
            b.rule(
                PatternBuilder::both(&TLabel::Eps),
                Kids::R(tail),
                PState::ChainToAdded,
            );
            b.rule(
                PatternBuilder::both(&TLabel::Eps),
                Kids::LR(eq, tail),
                PState::ChainToAdded,
            );
        }
        for (s, _) in letters.iter().filter(|(_, l)| *l == Level::L1) {
            let host_label = TLabel::Letter(s.clone(), Level::L1);
            for tail in [added, chain] {
                b.rule(
                    PatternBuilder::both(&host_label),
                    Kids::R(tail),
                    PState::MergeHost(s.clone()),
                );
                b.rule(
                    PatternBuilder::both(&host_label),
                    Kids::LR(eq, tail),
                    PState::MergeHost(s.clone()),
                );
            }
        }
        for host in &stack_labels {
            for (s, _) in letters.iter().filter(|(_, l)| *l == Level::L1) {
                let mh = b.state(PState::MergeHost(s.clone()));
                let del = b.state(PState::DelEpsLeaf);
                b.rule(
                    PatternBuilder::both(host),
                    Kids::LR(mh, del),
                    PState::Up {
                        ts: resolve(&None, host),
                        fact: Fact::PushMerged(s.clone()),
                    },
                );
            }
        }
    }

    // Deleted regions (first track only).
    for (s, l) in &letters {
        let lbl = TLabel::Letter(s.clone(), *l);
        b.rule(
            PatternBuilder::only1(&lbl),
            Kids::Leaf,
            PState::DelChain(s.clone(), *l),
        );
        for (s2, l2) in &letters {
            let inner = b.state(PState::DelChain(s2.clone(), *l2));
            b.rule(
                PatternBuilder::only1(&lbl),
                Kids::L(inner),
                PState::DelChain(s2.clone(), *l2),
            );
        }
    }
    // Full deleted subtrees, tracking the collapse guard letter.
    {
        // Leaves.
        b.rule(
            PatternBuilder::only1(&TLabel::Eps),
            Kids::Leaf,
            PState::DelFull { ts: None, on0: true },
        );
        for (s, l) in &letters {
            b.rule(
                PatternBuilder::only1(&TLabel::Letter(s.clone(), *l)),
                Kids::Leaf,
                PState::DelFull {
                    ts: Some((s.clone(), *l)),
                    on0: true,
                },
            );
        }
        // Inner nodes: the greatest node lives in the right subtree if one
        // exists, else the left one.
        for lbl in &stack_labels {
            for ts in &ts_values {
                for on0 in [false, true] {
                    let child = b.state(PState::DelFull {
                        ts: ts.clone(),
                        on0,
                    });
                    let others: Vec<u32> = ts_values
                        .iter()
                        .flat_map(|t2| {
                            [false, true].map(|o2| {
                                b.state(PState::DelFull {
                                    ts: t2.clone(),
                                    on0: o2,
                                })
                            })
                        })
                        .collect();
                    // Via the right child: the guard node, if below, is off
                    // the 0-spine; unresolved regions resolve at this node.
                    let up = match ts {
                        Some(x) => PState::DelFull {
                            ts: Some(x.clone()),
                            on0: false,
                        },
                        None => PState::DelFull {
                            ts: resolve(&None, lbl),
                            on0: true,
                        },
                    };
                    b.rule(PatternBuilder::only1(lbl), Kids::R(child), up.clone());
                    for left in &others {
                        b.rule(
                            PatternBuilder::only1(lbl),
                            Kids::LR(*left, child),
                            up.clone(),
                        );
                    }
                    // Via an only-left child: the 0-spine extends.
                    let up = match ts {
                        Some(x) => PState::DelFull {
                            ts: Some(x.clone()),
                            on0,
                        },
                        None => PState::DelFull {
                            ts: resolve(&None, lbl),
                            on0: true,
                        },
                    };
                    b.rule(PatternBuilder::only1(lbl), Kids::L(child), up);
                }
            }
        }
    }
    // Whole-word removal regions: an ε mark over an optional letter chain.
    // With letters below, the region root itself yields the Up state (its
    // top symbol is the deepest chain letter); a bare mark resolves its top
    // symbol during threading.
    for (s, l) in &letters {
        let body = b.state(PState::DelChain(s.clone(), *l));
        b.rule(
            PatternBuilder::only1(&TLabel::Eps),
            Kids::L(body),
            PState::Up {
                ts: Some((s.clone(), *l)),
                fact: Fact::Popped2,
            },
        );
    }
    for host in &stack_labels {
        let eq = b.state(PState::Eq);
        let del_eps = b.state(PState::DelEpsLeaf);
        b.rule(
            PatternBuilder::both(host),
            Kids::R(del_eps),
            PState::Up {
                ts: resolve(&None, host),
                fact: Fact::Popped2,
            },
        );
        b.rule(
            PatternBuilder::both(host),
            Kids::LR(eq, del_eps),
            PState::Up {
                ts: resolve(&None, host),
                fact: Fact::Popped2,
            },
        );
        // Collapse removal: full region whose guard letter is level 2 and
        // sits on the region root's 0-spine.
        for (s, _) in &letters {
            let region = b.state(PState::DelFull {
                ts: Some((s.clone(), Level::L2)),
                on0: true,
            });
            b.rule(
                PatternBuilder::both(host),
                Kids::R(region),
                PState::Up {
                    ts: resolve(&None, host),
                    fact: Fact::Collapsed(s.clone()),
                },
            );
            b.rule(
                PatternBuilder::both(host),
                Kids::LR(eq, region),
                PState::Up {
                    ts: resolve(&None, host),
                    fact: Fact::Collapsed(s.clone()),
                },
            );
        }
    }

    // Threading the consumed difference up the greatest-node path.
    let facts: Vec<Fact> = {
        let mut f = vec![Fact::Cloned, Fact::Popped2];
        for (s, l) in &letters {
            f.push(Fact::Pushed(s.clone(), *l));
        }
        for (s, _) in &letters {
            f.push(Fact::PushMerged(s.clone()));
            f.push(Fact::Collapsed(s.clone()));
        }
        f.sort();
        f.dedup();
        f
    };
    for lbl in &stack_labels {
        for ts in &ts_values {
            for fact in &facts {
                let child = b.state(PState::Up {
                    ts: ts.clone(),
                    fact: fact.clone(),
                });
                let eq = b.state(PState::Eq);
                let up = PState::Up {
                    ts: resolve(ts, lbl),
                    fact: fact.clone(),
                };
                b.rule(PatternBuilder::both(lbl), Kids::L(child), up.clone());
                b.rule(PatternBuilder::both(lbl), Kids::R(child), up.clone());
                b.rule(PatternBuilder::both(lbl), Kids::LR(eq, child), up);
            }
        }
    }

    (b.labels, b.rules, b.states)
}

/// Swaps the two tracks of every label, turning a "target = op(source)"
/// machine into the machine of the inverse change.
fn swap_tracks(
    labels: &[ConvLabel<TLabel>],
    rules: &[(u32, Kids, u32)],
    state_offset: u32,
) -> Vec<(u32, Kids, u32)> {
    let index: BTreeMap<&ConvLabel<TLabel>, u32> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l, i as u32))
        .collect();
    rules
        .iter()
        .map(|(label, kids, state)| {
            let mut swapped = labels[*label as usize].clone();
            swapped.reverse();
            let new_label = index[&swapped];
            let kids = match kids {
                Kids::Leaf => Kids::Leaf,
                Kids::L(a) => Kids::L(a + state_offset),
                Kids::R(a) => Kids::R(a + state_offset),
                Kids::LR(a, c) => Kids::LR(a + state_offset, c + state_offset),
            };
            (new_label, kids, state + state_offset)
        })
        .collect()
}

/// The automaton accepting `Encode(c1) ⊗ Encode(c2)` exactly when
/// `c1 → c2` under a transition to `to_state` performing `op`, for valid
/// configuration encodings.
pub fn op_relation_automaton(
    spec: &CpsSpec,
    to_state: &str,
    op: &StackOp,
) -> Nfta<ConvLabel<TLabel>> {
    op_relation_automaton_impl(spec, to_state, op, None)
}

/// Like [`op_relation_automaton`], but restricted to the firings of one
/// named transition schema.
pub fn edge_relation_automaton(spec: &CpsSpec, name: &str) -> Option<Nfta<ConvLabel<TLabel>>> {
    let rule = spec.rules.iter().find(|r| r.name == name)?;
    let (to, op) = (rule.to.clone(), rule.op.clone());
    Some(op_relation_automaton_impl(spec, &to, &op, Some(name)))
}

fn op_relation_automaton_impl(
    spec: &CpsSpec,
    to_state: &str,
    op: &StackOp,
    name_filter: Option<&str>,
) -> Nfta<ConvLabel<TLabel>> {
    let (labels, fwd_rules, states) = build_patterns(spec);
    let fwd_count = states.len() as u32;
    let bwd_rules = swap_tracks(&labels, &fwd_rules, fwd_count);

    let mut auto: Nfta<ConvLabel<TLabel>> = Nfta::new(labels.clone());
    auto.state_count = 2 * fwd_count + 1;
    let accept = 2 * fwd_count;
    auto.roots.insert(accept);
    for (label, kids, state) in fwd_rules.iter().chain(bwd_rules.iter()) {
        auto.rules.insert(Rule {
            label: *label,
            kids: *kids,
            state: *state,
        });
    }

    // Root rules: match the source state, the guard symbol and the fact.
    let label_index = |l: &ConvLabel<TLabel>| -> u32 {
        labels.iter().position(|x| x == l).expect("in alphabet") as u32
    };
    let mut add_root = |q1: &str, q2: &str, stack_state: u32| {
        let root_label = vec![
            Some(TLabel::State(q1.to_string())),
            Some(TLabel::State(q2.to_string())),
        ];
        auto.rules.insert(Rule {
            label: label_index(&root_label),
            kids: Kids::L(stack_state),
            state: accept,
        });
    };
    let filtered = spec
        .rules
        .iter()
        .filter(|r| r.to == to_state && r.op == *op)
        .filter(|r| name_filter.is_none_or(|n| r.name == n));
    for rule in filtered {
        let guard = &rule.top;
        match op {
            StackOp::Clone2 => {
                for lvl in [Level::L1, Level::L2] {
                    let st = states.get(&PState::Up {
                        ts: Some((guard.clone(), lvl)),
                        fact: Fact::Cloned,
                    });
                    if let Some(st) = st {
                        add_root(&rule.from, &rule.to, *st);
                    }
                }
            }
            StackOp::Push { sym, level } => {
                for lvl in [Level::L1, Level::L2] {
                    if let Some(st) = states.get(&PState::Up {
                        ts: Some((guard.clone(), lvl)),
                        fact: Fact::Pushed(sym.clone(), *level),
                    }) {
                        add_root(&rule.from, &rule.to, *st);
                    }
                    if *level == Level::L1 {
                        if let Some(st) = states.get(&PState::Up {
                            ts: Some((guard.clone(), lvl)),
                            fact: Fact::PushMerged(sym.clone()),
                        }) {
                            add_root(&rule.from, &rule.to, *st);
                        }
                    }
                }
            }
            StackOp::Pop1 => {
                // Swapped push machines; the popped letter is the guard.
                for lvl in [Level::L1, Level::L2] {
                    for ts in ts_values_of(spec) {
                        if let Some(st) = states.get(&PState::Up {
                            ts: ts.clone(),
                            fact: Fact::Pushed(guard.clone(), lvl),
                        }) {
                            add_root(&rule.from, &rule.to, *st + fwd_count);
                        }
                    }
                }
                for ts in ts_values_of(spec) {
                    if let Some(st) = states.get(&PState::Up {
                        ts,
                        fact: Fact::PushMerged(guard.clone()),
                    }) {
                        add_root(&rule.from, &rule.to, *st + fwd_count);
                    }
                }
            }
            StackOp::Pop2 => {
                for lvl in [Level::L1, Level::L2] {
                    if let Some(st) = states.get(&PState::Up {
                        ts: Some((guard.clone(), lvl)),
                        fact: Fact::Popped2,
                    }) {
                        add_root(&rule.from, &rule.to, *st);
                    }
                }
            }
            StackOp::Collapse => {
                // Level-2 collapse removes the linked suffix region; the
                // guard is the collapsing letter itself, which the pattern
                // carries (the threaded top symbol is not meaningful here).
                for ts in ts_values_of(spec) {
                    if let Some(st) = states.get(&PState::Up {
                        ts,
                        fact: Fact::Collapsed(guard.clone()),
                    }) {
                        add_root(&rule.from, &rule.to, *st);
                    }
                }
                // Level-1 collapse behaves as a pop of a level-1 top.
                for ts in ts_values_of(spec) {
                    if let Some(st) = states.get(&PState::Up {
                        ts: ts.clone(),
                        fact: Fact::Pushed(guard.clone(), Level::L1),
                    }) {
                        add_root(&rule.from, &rule.to, *st + fwd_count);
                    }
                    if let Some(st) = states.get(&PState::Up {
                        ts,
                        fact: Fact::PushMerged(guard.clone()),
                    }) {
                        add_root(&rule.from, &rule.to, *st + fwd_count);
                    }
                }
            }
        }
    }
    auto.trim()
}

fn ts_values_of(spec: &CpsSpec) -> Vec<Option<(String, Level)>> {
    let mut out: Vec<Option<(String, Level)>> = vec![None];
    for s in &spec.alphabet {
        out.push(Some((s.clone(), Level::L1)));
        out.push(Some((s.clone(), Level::L2)));
    }
    out
}

/// Converts a tree map into the pointer tree the automata run on.
pub fn tree_of(t: &TreeMap) -> crate::tnfa::Tree<TLabel> {
    fn go(t: &TreeMap, at: &Addr) -> crate::tnfa::Tree<TLabel> {
        let label = t.get(at).expect("prefix-closed").clone();
        let left = t.contains(&at.child(0)).then(|| go(t, &at.child(0)));
        let right = t.contains(&at.child(1)).then(|| go(t, &at.child(1)));
        crate::tnfa::Tree::node(label, left, right)
    }
    go(t, &Addr::root())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode_stack, encode_stack};
    use crate::stack::Stack2;
    use crate::system::CpsSpec;
    use crate::tnfa::convolve;

    fn fig3() -> Stack2 {
        Stack2::parse(
            "⊥ a^2@0 b^2@0 : ⊥ a^2@0 b^2@0 c^2@1 : ⊥ a^2@2 c^1 : ⊥ a^2@2 d^2@3 e^1 : ⊥ a^2@2",
        )
        .unwrap()
    }

    fn ops_for(syms: &[&str]) -> Vec<StackOp> {
        let mut ops = vec![StackOp::Pop1, StackOp::Pop2, StackOp::Clone2, StackOp::Collapse];
        for s in syms {
            for level in [Level::L1, Level::L2] {
                ops.push(StackOp::Push {
                    sym: s.to_string(),
                    level,
                });
            }
        }
        ops
    }

    #[test]
    fn pop2_on_fig3_deletes_exactly_the_last_mark() {
        let t = encode_stack(&fig3());
        let out = tree_op_apply(&t, &StackOp::Pop2).unwrap();
        assert_eq!(t.len() - out.len(), 1);
        assert!(!out.contains(&Addr("1011".into())));
        assert_eq!(decode_stack(&out).unwrap(), fig3().apply(&StackOp::Pop2).unwrap());
    }

    #[test]
    fn collapse_on_fig3_deletes_the_linked_region() {
        let t = encode_stack(&fig3());
        let out = tree_op_apply(&t, &StackOp::Collapse).unwrap();
        assert_eq!(t.len() - out.len(), 7);
        let expected = Stack2::parse("⊥ a^2@0 b^2@0 : ⊥ a^2@0 b^2@0 c^2@1").unwrap();
        assert_eq!(decode_stack(&out).unwrap(), expected);
        assert_eq!(out, encode_stack(&expected));
    }

    #[test]
    fn clone_on_initial_adds_one_mark() {
        let t = encode_stack(&Stack2::initial("⊥"));
        let out = tree_op_apply(&t, &StackOp::Clone2).unwrap();
        assert_eq!(out.to_text(), ". ⊥^1\n1 ~\n");
    }

    #[test]
    fn push_merge_relocates_the_word_mark() {
        let s = Stack2::parse("⊥ a^1 b^1 : ⊥ a^1").unwrap();
        let t = encode_stack(&s);
        assert_eq!(t.to_text(), ". ⊥^1\n0 a^1\n00 b^1\n01 ~\n");
        let out = tree_op_apply(
            &t,
            &StackOp::Push {
                sym: "b".into(),
                level: Level::L1,
            },
        )
        .unwrap();
        assert!(!out.contains(&Addr("01".into())));
        assert!(out.contains(&Addr("001".into())));
        let expected = s
            .apply(&StackOp::Push {
                sym: "b".into(),
                level: Level::L1,
            })
            .unwrap();
        assert_eq!(decode_stack(&out).unwrap(), expected);
    }

    #[test]
    fn tree_ops_agree_with_stack_semantics_exhaustively() {
        // Every operation on every stack reachable by operations within a
        // small radius, including undefined cases.
        let ops = ops_for(&["a", "b"]);
        let mut pool = vec![Stack2::initial("⊥")];
        let mut frontier = pool.clone();
        for _ in 0..4 {
            let mut next = Vec::new();
            for s in &frontier {
                for op in &ops {
                    if let Some(t) = s.apply(op) {
                        if !pool.contains(&t) {
                            pool.push(t.clone());
                            next.push(t);
                        }
                    }
                }
            }
            frontier = next;
        }
        assert!(pool.len() > 150);
        for s in &pool {
            let t = encode_stack(s);
            for op in &ops {
                let direct = tree_op_apply(&t, op);
                let via_stack = s.apply(op).map(|u| encode_stack(&u));
                assert_eq!(direct, via_stack, "op {op} on {s}");
            }
        }
    }

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

    #[test]
    fn relation_automata_on_drawn_edges() {
        use crate::codec::encode_config;
        use crate::stack::Config;
        let spec = CpsSpec::parse(SYS1).unwrap();
        let push_a2 = StackOp::Push {
            sym: "a".into(),
            level: Level::L2,
        };
        let a = op_relation_automaton(&spec, "2", &push_a2);
        let c1 = Config::parse("1|⊥ : ⊥").unwrap();
        let c2 = Config::parse("2|⊥ : ⊥ a^2@1").unwrap();
        let conv = convolve(&[&tree_of(&encode_config(&c1)), &tree_of(&encode_config(&c2))]);
        assert!(a.accepts(&conv).unwrap());

        // Wrong guard: from the sink the top symbol is ⊥, not a.
        let pop = op_relation_automaton(&spec, "2", &StackOp::Pop1);
        let sink = Config::parse("2|⊥ : ⊥").unwrap();
        for target in [&c1, &c2, &sink] {
            let conv = convolve(&[
                &tree_of(&encode_config(&sink)),
                &tree_of(&encode_config(target)),
            ]);
            assert!(!pop.accepts(&conv).unwrap());
        }

        // The pop edge from (2, ⊥:⊥a) to the sink.
        let conv = convolve(&[&tree_of(&encode_config(&c2)), &tree_of(&encode_config(&sink))]);
        assert!(pop.accepts(&conv).unwrap());

        // The collapse edge back to (0, ⊥).
        let co = op_relation_automaton(&spec, "0", &StackOp::Collapse);
        let c0 = Config::parse("0|⊥").unwrap();
        let conv = convolve(&[&tree_of(&encode_config(&c2)), &tree_of(&encode_config(&c0))]);
        assert!(co.accepts(&conv).unwrap());
        let conv = convolve(&[&tree_of(&encode_config(&c1)), &tree_of(&encode_config(&c0))]);
        assert!(!co.accepts(&conv).unwrap());
    }

    #[test]
    fn relation_automata_match_successors_on_small_graph() {
        use crate::codec::encode_config;
        use crate::system::{bfs_graph, ExplorationBounds};
        let spec = CpsSpec::parse(SYS1).unwrap();
        let g = bfs_graph(&spec, &ExplorationBounds::new(4, 4, 5, 200));
        let mut edge_ops: Vec<(String, StackOp)> = spec
            .rules
            .iter()
            .map(|r| (r.to.clone(), r.op.clone()))
            .collect();
        edge_ops.sort();
        edge_ops.dedup();
        for (to, op) in edge_ops {
            let auto = op_relation_automaton(&spec, &to, &op);
            for c1 in &g.vertices {
                let succs = spec.successors(c1);
                for c2 in &g.vertices {
                    let expected = succs
                        .iter()
                        .any(|(l, t)| t == c2 && l.to == to && l.op == op);
                    let conv = convolve(&[
                        &tree_of(&encode_config(c1)),
                        &tree_of(&encode_config(c2)),
                    ]);
                    let got = auto.accepts(&conv).unwrap();
                    assert_eq!(got, expected, "{c1} -> {c2} via ({to},{op})");
                }
            }
        }
    }
}
