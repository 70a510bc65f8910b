//! Encoding of stacks and configurations as finite binary trees.
//!
//! A stack is cut into blocks: maximal runs of adjacent words sharing their
//! first two letters. The blockline induced by the first block goes to the
//! 0-subtree, the remaining blocks to the 1-subtree under an ε root. Left
//! (0) successors therefore spell words; right (1) successors mark the
//! boundaries between words. Collapse links are not stored in the tree at
//! all: they are recoverable from node positions alone.

use crate::stack::{Config, Letter, Level, Stack2};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// A tree node address: a word over {0,1}; `String` ordering coincides with
/// the lexicographic tree order (prefixes first, then 0 before 1).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Addr(pub String);

impl Addr {
    pub fn root() -> Addr {
        Addr(String::new())
    }

    pub fn child(&self, bit: u8) -> Addr {
        let mut s = self.0.clone();
        s.push(if bit == 0 { '0' } else { '1' });
        Addr(s)
    }

    pub fn parent(&self) -> Option<Addr> {
        if self.0.is_empty() {
            None
        } else {
            Some(Addr(self.0[..self.0.len() - 1].to_string()))
        }
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ends_in_one(&self) -> bool {
        self.0.ends_with('1')
    }

    pub fn zeros(&self) -> usize {
        self.0.chars().filter(|&c| c == '0').count()
    }

    /// Strips trailing zeros: the nearest ancestor-or-self ending in 1 (or
    /// the root).
    pub fn strip_zeros(&self) -> Addr {
        Addr(self.0.trim_end_matches('0').to_string())
    }

    pub fn is_prefix_of(&self, other: &Addr) -> bool {
        other.0.starts_with(&self.0)
    }
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            f.write_str(".")
        } else {
            f.write_str(&self.0)
        }
    }
}

/// Labels of encoding trees: a control state at the root, letter symbols
/// with their collapse level at 0-successors, ε at 1-successors.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TLabel {
    State(String),
    Letter(String, Level),
    Eps,
}

impl fmt::Display for TLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TLabel::State(q) => f.write_str(q),
            TLabel::Letter(s, l) => write!(f, "{}^{}", s, l.as_u8()),
            TLabel::Eps => f.write_str("~"),
        }
    }
}

/// A finite labelled binary tree as an address → label map.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TreeMap {
    nodes: BTreeMap<Addr, TLabel>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("address {0} is not in the tree")]
    MissingAddress(String),
    #[error("tree is not an encoding: violated conditions {0:?}")]
    Invalid(Vec<Condition>),
    #[error("label at {0} has the wrong kind for this operation")]
    WrongLabelKind(String),
    #[error("cannot parse tree text: {0}")]
    Parse(String),
    #[error("node addresses are not prefix-closed at {0}")]
    NotPrefixClosed(String),
    #[error("milestone correspondence failed: {0}")]
    IsoMismatch(String),
}

/// The five local conditions cutting out exactly the encoding trees,
/// plus the structural prefix-closure of the address set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Condition {
    /// 1: the root carries a control state.
    RootState,
    /// 2: 0-successors carry letters; address 0 carries the bottom at level
    /// 1 and the bottom symbol occurs nowhere else.
    LetterShape,
    /// 3: 1-successors carry ε.
    EpsShape,
    /// 4: address 1 absent, address 0 present.
    RootChildren,
    /// 5: no node with equal level-1 letters at its 0-child and its
    /// 1-child's 0-child (blocks would not be maximal).
    BlockMaximality,
    /// The address set is not prefix-closed.
    PrefixClosed,
}

impl TreeMap {
    pub fn new() -> TreeMap {
        TreeMap {
            nodes: BTreeMap::new(),
        }
    }

    pub fn from_nodes(nodes: BTreeMap<Addr, TLabel>) -> TreeMap {
        TreeMap { nodes }
    }

    pub fn get(&self, d: &Addr) -> Option<&TLabel> {
        self.nodes.get(d)
    }

    pub fn contains(&self, d: &Addr) -> bool {
        self.nodes.contains_key(d)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn insert(&mut self, d: Addr, l: TLabel) {
        self.nodes.insert(d, l);
    }

    pub fn remove(&mut self, d: &Addr) -> Option<TLabel> {
        self.nodes.remove(d)
    }

    /// Addresses in lexicographic order.
    pub fn addrs(&self) -> impl Iterator<Item = &Addr> {
        self.nodes.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Addr, &TLabel)> {
        self.nodes.iter()
    }

    pub fn is_prefix_closed(&self) -> Result<(), CodecError> {
        for addr in self.nodes.keys() {
            if let Some(p) = addr.parent() {
                if !self.nodes.contains_key(&p) {
                    return Err(CodecError::NotPrefixClosed(addr.to_string()));
                }
            }
        }
        Ok(())
    }

    /// Removes the whole subtree rooted at `d`.
    pub fn remove_subtree(&mut self, d: &Addr) {
        let doomed: Vec<Addr> = self
            .nodes
            .keys()
            .filter(|a| d.is_prefix_of(a))
            .cloned()
            .collect();
        for a in doomed {
            self.nodes.remove(&a);
        }
    }

    /// Restriction to the lex-downward closure of `d` (a prefix-closed set).
    pub fn left_closure(&self, d: &Addr) -> TreeMap {
        TreeMap {
            nodes: self
                .nodes
                .iter()
                .filter(|(a, _)| *a <= d)
                .map(|(a, l)| (a.clone(), l.clone()))
                .collect(),
        }
    }

    /// The lexicographically greatest node.
    pub fn lex_max(&self) -> Option<&Addr> {
        self.nodes.keys().next_back()
    }

    /// Canonical text: one `address label` line per node in lex order; the
    /// root address prints as "." and ε labels print as "~".
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (a, l) in &self.nodes {
            out.push_str(&format!("{} {}\n", a, l));
        }
        out
    }

    pub fn parse(text: &str) -> Result<TreeMap, CodecError> {
        let mut nodes = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (addr_text, label_text) = line
                .split_once(' ')
                .ok_or_else(|| CodecError::Parse(format!("expected `addr label`: {line}")))?;
            let addr = if addr_text == "." {
                Addr::root()
            } else if addr_text.chars().all(|c| c == '0' || c == '1') {
                Addr(addr_text.to_string())
            } else {
                return Err(CodecError::Parse(format!("bad address `{addr_text}`")));
            };
            let label = match label_text.trim() {
                "~" => TLabel::Eps,
                t if t.contains('^') => {
                    let (sym, lvl) = t.split_once('^').unwrap();
                    let level = lvl
                        .parse::<u8>()
                        .ok()
                        .and_then(Level::from_u8)
                        .ok_or_else(|| CodecError::Parse(format!("bad level in `{t}`")))?;
                    TLabel::Letter(sym.to_string(), level)
                }
                t => TLabel::State(t.to_string()),
            };
            if nodes.insert(addr, label).is_some() {
                return Err(CodecError::Parse(format!("duplicate address {addr_text}")));
            }
        }
        Ok(TreeMap { nodes })
    }
}

impl Default for TreeMap {
    fn default() -> Self {
        TreeMap::new()
    }
}

/// Encodes a bare stack; the root is the bottom letter's label.
pub fn encode_stack(s: &Stack2) -> TreeMap {
    let mut out = TreeMap::new();
    let words: Vec<&[Letter]> = s.words().iter().map(|w| w.as_slice()).collect();
    encode_blockline(&words, 0, label_of(&s.words()[0][0]), Addr::root(), &mut out);
    out
}

/// Encodes a configuration: the state becomes a fresh root, the stack tree
/// hangs below it as the 0-subtree.
pub fn encode_config(c: &Config) -> TreeMap {
    let mut out = TreeMap::new();
    out.insert(Addr::root(), TLabel::State(c.state.clone()));
    let words: Vec<&[Letter]> = c.stack.words().iter().map(|w| w.as_slice()).collect();
    encode_blockline(
        &words,
        0,
        label_of(&c.stack.words()[0][0]),
        Addr::root().child(0),
        &mut out,
    );
    out
}

fn label_of(l: &Letter) -> TLabel {
    TLabel::Letter(l.sym.clone(), l.level)
}

/// One step of the recursive block decomposition. `words` is the current
/// blockline (suffixes starting at `depth` all share their first letter);
/// the node at `at` gets label `rho`.
fn encode_blockline(words: &[&[Letter]], depth: usize, rho: TLabel, at: Addr, out: &mut TreeMap) {
    out.insert(at.clone(), rho);
    let first = &words[0][depth..];
    debug_assert!(!first.is_empty());
    if first.len() == 1 {
        // First block is the single letter; no induced blockline.
        if words.len() > 1 {
            encode_blockline(&words[1..], depth, TLabel::Eps, at.child(1), out);
        }
        return;
    }
    // First maximal block: adjacent words sharing the first two letters of
    // the current suffixes.
    let head2 = &first[..2];
    let mut j = 1;
    while j < words.len() {
        let w = &words[j][depth..];
        if w.len() >= 2 && w[..2] == *head2 {
            j += 1;
        } else {
            break;
        }
    }
    encode_blockline(&words[..j], depth + 1, label_of(&head2[1]), at.child(0), out);
    if j < words.len() {
        encode_blockline(&words[j..], depth, TLabel::Eps, at.child(1), out);
    }
}

/// Checks the five encoding-tree conditions on a configuration tree,
/// returning every violated one.
pub fn validate_enctree(t: &TreeMap) -> Vec<Condition> {
    let mut violated = Vec::new();
    if t.is_prefix_closed().is_err() || t.is_empty() {
        violated.push(Condition::PrefixClosed);
        if t.is_empty() {
            violated.push(Condition::RootState);
            return violated;
        }
    }
    if !matches!(t.get(&Addr::root()), Some(TLabel::State(_))) {
        violated.push(Condition::RootState);
    }
    let zero = Addr::root().child(0);
    if t.contains(&Addr::root().child(1)) || !t.contains(&zero) {
        violated.push(Condition::RootChildren);
    }
    if stack_letter_shape_violated(t, &zero) {
        violated.push(Condition::LetterShape);
    }
    let eps_bad = t.iter().any(|(a, l)| {
        !a.is_root() && a.ends_in_one() && !matches!(l, TLabel::Eps)
    });
    if eps_bad {
        violated.push(Condition::EpsShape);
    }
    if block_maximality_violated(t) {
        violated.push(Condition::BlockMaximality);
    }
    violated.sort();
    violated.dedup();
    violated
}

fn stack_letter_shape_violated(t: &TreeMap, stack_root: &Addr) -> bool {
    // The stack root must be a level-1 letter, the bottom; it may occur
    // nowhere else, and every other 0-successor must carry a letter.
    let bottom = match t.get(stack_root) {
        Some(TLabel::Letter(sym, Level::L1)) => sym.clone(),
        _ => return true,
    };
    for (a, l) in t.iter() {
        if a.is_root() {
            continue;
        }
        if !a.ends_in_one() {
            match l {
                TLabel::Letter(sym, _) => {
                    if sym == &bottom && a != stack_root {
                        return true;
                    }
                }
                _ => return true,
            }
        }
    }
    false
}

fn block_maximality_violated(t: &TreeMap) -> bool {
    t.iter().any(|(a, _)| {
        let c0 = a.child(0);
        let c10 = a.child(1).child(0);
        match (t.get(&c0), t.get(&c10)) {
            (Some(TLabel::Letter(s1, Level::L1)), Some(TLabel::Letter(s2, Level::L1))) => s1 == s2,
            _ => false,
        }
    })
}

/// Relativized validation for a bare stack tree (no state root).
pub fn validate_stack_tree(t: &TreeMap) -> Vec<Condition> {
    let mut violated = Vec::new();
    if t.is_prefix_closed().is_err() || t.is_empty() {
        violated.push(Condition::PrefixClosed);
        return violated;
    }
    if stack_letter_shape_violated(t, &Addr::root()) {
        violated.push(Condition::LetterShape);
    }
    if t
        .iter()
        .any(|(a, l)| !a.is_root() && a.ends_in_one() && !matches!(l, TLabel::Eps))
    {
        violated.push(Condition::EpsShape);
    }
    if block_maximality_violated(t) {
        violated.push(Condition::BlockMaximality);
    }
    violated
}

/// Word positions: the root plus every node ending in 1, in lex order.
/// The i-th entry marks where the i-th word separates from the previous
/// one; their count equals the word count of the decoded stack.
pub fn split_positions(t: &TreeMap) -> Vec<Addr> {
    t.addrs()
        .filter(|a| a.is_root() || a.ends_in_one())
        .cloned()
        .collect()
}

/// The non-ε labels along the path from the root to `d`, inclusive.
pub fn path_word(t: &TreeMap, d: &Addr) -> Result<Vec<(String, Level)>, CodecError> {
    if !t.contains(d) {
        return Err(CodecError::MissingAddress(d.to_string()));
    }
    let mut out = Vec::new();
    for i in 0..=d.0.len() {
        let a = Addr(d.0[..i].to_string());
        match t.get(&a) {
            Some(TLabel::Letter(s, l)) => out.push((s.clone(), *l)),
            Some(TLabel::Eps) => {}
            Some(TLabel::State(_)) => {}
            None => return Err(CodecError::MissingAddress(a.to_string())),
        }
    }
    Ok(out)
}

/// Reconstructs the collapse link of the letter encoded at `d` from its
/// position alone: level-1 letters count the zeros in the address, level-2
/// letters count the word marks lexicographically before it.
pub fn link_at(t: &TreeMap, d: &Addr) -> Result<usize, CodecError> {
    match t.get(d) {
        Some(TLabel::Letter(_, Level::L1)) => Ok(d.zeros()),
        Some(TLabel::Letter(_, Level::L2)) => Ok(t
            .addrs()
            .filter(|a| a.ends_in_one() && *a <= d)
            .count()),
        Some(_) => Err(CodecError::WrongLabelKind(d.to_string())),
        None => Err(CodecError::MissingAddress(d.to_string())),
    }
}

/// Decodes a stack tree. Words are read off the split positions: the path
/// word gives the shared prefix, the maximal 0-chain below the split gives
/// the rest; links are restored positionally.
pub fn decode_stack(t: &TreeMap) -> Result<Stack2, CodecError> {
    let violated = validate_stack_tree(t);
    if !violated.is_empty() {
        return Err(CodecError::Invalid(violated));
    }
    let mut words = Vec::new();
    for f in split_positions(t) {
        let mut node_path: Vec<Addr> = Vec::new();
        for i in 0..=f.0.len() {
            let a = Addr(f.0[..i].to_string());
            if matches!(t.get(&a), Some(TLabel::Letter(..))) {
                node_path.push(a);
            }
        }
        let mut chain = f.child(0);
        while t.contains(&chain) {
            node_path.push(chain.clone());
            chain = chain.child(0);
        }
        let mut word = Vec::new();
        for a in node_path {
            let (sym, level) = match t.get(&a) {
                Some(TLabel::Letter(s, l)) => (s.clone(), *l),
                _ => unreachable!("only letter nodes collected"),
            };
            let link = link_at(t, &a)?;
            word.push(Letter { sym, level, link });
        }
        words.push(word);
    }
    Stack2::try_new(words).map_err(|e| CodecError::Parse(format!("decoded stack invalid: {e}")))
}

/// Decodes a configuration tree (state root, stack below address 0).
pub fn decode_config(t: &TreeMap) -> Result<Config, CodecError> {
    let violated = validate_enctree(t);
    if !violated.is_empty() {
        return Err(CodecError::Invalid(violated));
    }
    let state = match t.get(&Addr::root()) {
        Some(TLabel::State(q)) => q.clone(),
        _ => unreachable!("validated above"),
    };
    let stack = decode_stack(&strip_config_root(t))?;
    Ok(Config { state, stack })
}

/// The stack subtree of a configuration tree, re-rooted at ε.
pub fn strip_config_root(t: &TreeMap) -> TreeMap {
    let mut nodes = BTreeMap::new();
    for (a, l) in t.iter() {
        if let Some(rest) = a.0.strip_prefix('0') {
            nodes.insert(Addr(rest.to_string()), l.clone());
        }
    }
    TreeMap::from_nodes(nodes)
}

/// Wraps a stack tree under a state-labelled root.
pub fn wrap_config_root(state: &str, stack_tree: &TreeMap) -> TreeMap {
    let mut nodes = BTreeMap::new();
    nodes.insert(Addr::root(), TLabel::State(state.to_string()));
    for (a, l) in stack_tree.iter() {
        nodes.insert(Addr(format!("0{}", a.0)), l.clone());
    }
    TreeMap::from_nodes(nodes)
}

/// The substack encoded by the lex-downward closure of `d` in a stack tree.
/// The root's closure is the root itself, giving the initial stack.
pub fn left_stack(t: &TreeMap, d: &Addr) -> Result<Stack2, CodecError> {
    if !t.contains(d) {
        return Err(CodecError::MissingAddress(d.to_string()));
    }
    decode_stack(&t.left_closure(d))
}

/// The node ↦ left-stack map in lex order, checked to be an order
/// isomorphism onto the milestone chain of the decoded stack.
pub fn milestone_iso(t: &TreeMap) -> Result<Vec<(Addr, Stack2)>, CodecError> {
    let s = decode_stack(t)?;
    let pairs: Vec<(Addr, Stack2)> = t
        .addrs()
        .map(|a| left_stack(t, a).map(|m| (a.clone(), m)))
        .collect::<Result<_, _>>()?;
    let milestones = s.milestones();
    if pairs.len() != milestones.len() {
        return Err(CodecError::IsoMismatch(format!(
            "{} tree nodes vs {} milestones",
            pairs.len(),
            milestones.len()
        )));
    }
    for ((a, m), expect) in pairs.iter().zip(milestones.iter()) {
        if m != expect {
            return Err(CodecError::IsoMismatch(format!(
                "node {a} decodes to `{m}` but the milestone chain has `{expect}`"
            )));
        }
    }
    Ok(pairs)
}

/// π of the topmost word: the path word of the lex-greatest node.
pub fn top_word_projection(t: &TreeMap) -> Result<Vec<(String, Level)>, CodecError> {
    let max = t
        .lex_max()
        .ok_or_else(|| CodecError::MissingAddress(".".into()))?
        .clone();
    path_word(t, &max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::{common_prefix_len, StackOp};

    fn fig3() -> Stack2 {
        Stack2::parse(
            "⊥ a^2@0 b^2@0 : ⊥ a^2@0 b^2@0 c^2@1 : ⊥ a^2@2 c^1 : ⊥ a^2@2 d^2@3 e^1 : ⊥ a^2@2",
        )
        .unwrap()
    }

    fn t3() -> TreeMap {
        encode_stack(&fig3())
    }

    #[test]
    fn fig3_encoding_matches_node_for_node() {
        let expected = "\
. ⊥^1
0 a^2
00 b^2
001 ~
0010 c^2
1 ~
10 a^2
100 c^1
101 ~
1010 d^2
10100 e^1
1011 ~
";
        assert_eq!(t3().to_text(), expected);
    }

    #[test]
    fn small_encodings() {
        let bot = Stack2::initial("⊥");
        assert_eq!(encode_stack(&bot).to_text(), ". ⊥^1\n");

        let s = Stack2::parse("⊥ : ⊥ a^2@1").unwrap();
        assert_eq!(encode_stack(&s).to_text(), ". ⊥^1\n1 ~\n10 a^2\n");
    }

    #[test]
    fn decode_restores_links_and_state() {
        let c = Config::new("q", fig3());
        let t = encode_config(&c);
        assert_eq!(t.len(), 13);
        assert_eq!(decode_config(&t).unwrap(), c);

        let trivial = wrap_config_root("q", &encode_stack(&Stack2::initial("⊥")));
        assert_eq!(
            decode_config(&trivial).unwrap(),
            Config::new("q", Stack2::initial("⊥"))
        );
    }

    #[test]
    fn decode_rejects_condition5_violations() {
        let mut t = TreeMap::new();
        t.insert(Addr::root(), TLabel::Letter("⊥".into(), Level::L1));
        t.insert(Addr("0".into()), TLabel::Letter("b".into(), Level::L1));
        t.insert(Addr("1".into()), TLabel::Eps);
        t.insert(Addr("10".into()), TLabel::Letter("b".into(), Level::L1));
        assert_eq!(validate_stack_tree(&t), vec![Condition::BlockMaximality]);
        assert!(matches!(decode_stack(&t), Err(CodecError::Invalid(_))));
    }

    #[test]
    fn validate_flags_each_condition() {
        let good = wrap_config_root("q", &t3());
        assert!(validate_enctree(&good).is_empty());

        let mut bad = good.clone();
        bad.insert(Addr("1".into()), TLabel::Eps);
        assert!(validate_enctree(&bad).contains(&Condition::RootChildren));

        let mut bad = good.clone();
        bad.insert(Addr("01".into()), TLabel::Letter("a".into(), Level::L2));
        assert!(validate_enctree(&bad).contains(&Condition::EpsShape));

        let mut bad = good.clone();
        bad.insert(Addr::root(), TLabel::Eps);
        assert!(validate_enctree(&bad).contains(&Condition::RootState));

        let mut bad = good.clone();
        assert!(bad.remove(&Addr("0001".into())).is_some());
        assert!(validate_enctree(&bad).contains(&Condition::PrefixClosed));
    }

    #[test]
    fn left_stacks_are_milestones() {
        let t = t3();
        assert_eq!(
            left_stack(&t, &Addr("0010".into())).unwrap(),
            Stack2::parse("⊥ a^2@0 b^2@0 : ⊥ a^2@0 b^2@0 c^2@1").unwrap()
        );
        assert_eq!(left_stack(&t, &Addr("1011".into())).unwrap(), fig3());
        assert_eq!(
            left_stack(&t, &Addr::root()).unwrap(),
            Stack2::initial("⊥")
        );
        for a in t.addrs() {
            assert!(left_stack(&t, a).unwrap().is_substack_of(&fig3()));
        }
    }

    #[test]
    fn milestone_isomorphism_holds() {
        let pairs = milestone_iso(&t3()).unwrap();
        assert_eq!(pairs.len(), 12);
        assert_eq!(fig3().milestones().len(), 12);

        let s = Stack2::parse("⊥ : ⊥ a^2@1").unwrap();
        let pairs = milestone_iso(&encode_stack(&s)).unwrap();
        let texts: Vec<String> = pairs.iter().map(|(a, m)| format!("{a}:{m}")).collect();
        assert_eq!(
            texts,
            vec![
                ".:⊥^1@0",
                "1:⊥^1@0 : ⊥^1@0",
                "10:⊥^1@0 : ⊥^1@0 a^2@1"
            ]
        );

        let single = encode_stack(&Stack2::initial("⊥"));
        assert_eq!(milestone_iso(&single).unwrap().len(), 1);
    }

    #[test]
    fn positional_link_laws_on_fig3() {
        let t = t3();
        assert_eq!(link_at(&t, &Addr("0010".into())).unwrap(), 1);
        assert_eq!(link_at(&t, &Addr("1010".into())).unwrap(), 3);
        assert_eq!(link_at(&t, &Addr("10".into())).unwrap(), 2);
        assert_eq!(link_at(&t, &Addr("10100".into())).unwrap(), 3);
        assert!(link_at(&t, &Addr("1".into())).is_err());
    }

    #[test]
    fn split_positions_and_path_words() {
        let t = t3();
        let splits: Vec<String> = split_positions(&t).iter().map(|a| a.to_string()).collect();
        assert_eq!(splits, vec![".", "001", "1", "101", "1011"]);
        assert_eq!(split_positions(&encode_stack(&Stack2::initial("⊥"))).len(), 1);

        let pw = path_word(&t, &Addr("10100".into())).unwrap();
        let text: Vec<String> = pw.iter().map(|(s, l)| format!("{s}{}", l.as_u8())).collect();
        assert_eq!(text, vec!["⊥1", "a2", "d2", "e1"]);

        assert_eq!(path_word(&t, &Addr("1".into())).unwrap().len(), 1);
        let pw = path_word(&t, &Addr("0010".into())).unwrap();
        assert_eq!(pw.len(), 4);

        // Path word to each split spells the shared prefix of adjacent words.
        let s = fig3();
        for (i, f) in split_positions(&t).iter().enumerate().skip(1) {
            let shared = common_prefix_len(&s.words()[i - 1], &s.words()[i]);
            let pw = path_word(&t, f).unwrap();
            assert_eq!(pw.len(), shared);
            for (k, (sym, lvl)) in pw.iter().enumerate() {
                assert_eq!((sym.as_str(), *lvl), (s.words()[i][k].sym.as_str(), s.words()[i][k].level));
            }
        }
    }

    #[test]
    fn tree_text_roundtrip() {
        let t = wrap_config_root("2", &t3());
        assert_eq!(TreeMap::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn roundtrip_over_generated_stacks() {
        let mut pool = vec![Stack2::initial("⊥")];
        let ops = [
            StackOp::Clone2,
            StackOp::Push {
                sym: "a".into(),
                level: Level::L2,
            },
            StackOp::Push {
                sym: "b".into(),
                level: Level::L1,
            },
            StackOp::Pop1,
            StackOp::Pop2,
            StackOp::Collapse,
        ];
        let mut frontier = pool.clone();
        for _ in 0..5 {
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
        assert!(pool.len() > 100);
        for s in &pool {
            let t = encode_stack(s);
            assert!(validate_stack_tree(&t).is_empty(), "image invalid for {s}");
            assert_eq!(decode_stack(&t).unwrap(), *s, "roundtrip failed for {s}");
            assert!(milestone_iso(&t).is_ok(), "iso failed for {s}");
            for a in t.addrs() {
                if let Some(TLabel::Letter(..)) = t.get(a) {
                    let _ = link_at(&t, a).unwrap();
                }
            }
        }
    }
}
