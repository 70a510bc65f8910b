//! Collapsible pushdown systems: the transition table, configuration-graph
//! exploration, runs, and the brute-force oracles that the summary and
//! automata constructions are validated against.

use crate::stack::{Config, Level, Stack2, StackOp};
use serde::Deserialize;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("malformed system document: {0}")]
    Malformed(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("unknown operation `{0}`")]
    UnknownOp(String),
    #[error("transition {0} pushes the bottom symbol")]
    PushBottom(usize),
    #[error("bottom symbol `{0}` is not in the alphabet")]
    BottomNotInAlphabet(String),
}

/// One expanded transition: wildcards already resolved to concrete symbols.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rule {
    pub name: String,
    pub from: String,
    pub top: String,
    pub to: String,
    pub op: StackOp,
}

/// The label of a graph edge: target state plus operation, with the
/// transition name carried along for display and regular constraints.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeLabel {
    pub name: String,
    pub to: String,
    pub op: StackOp,
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.to, self.op)
    }
}

/// A validated level-2 collapsible pushdown system.
#[derive(Debug, Clone)]
pub struct CpsSpec {
    pub alphabet: Vec<String>,
    pub bottom: String,
    pub states: Vec<String>,
    pub initial: String,
    /// Expanded transition table, in document order.
    pub rules: Vec<Rule>,
    /// Number of rule schemas before wildcard expansion.
    pub schema_count: usize,
    /// Non-fatal findings from parsing, e.g. duplicate transitions.
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct RawSystem {
    alphabet: Vec<String>,
    bottom: String,
    states: Vec<String>,
    initial: String,
    transitions: Vec<RawTransition>,
}

#[derive(Deserialize)]
struct RawTransition {
    #[serde(default)]
    name: Option<String>,
    from: String,
    top: String,
    to: String,
    op: String,
    #[serde(default)]
    sym: Option<String>,
    #[serde(default)]
    level: Option<u8>,
}

impl CpsSpec {
    /// Parses and validates the JSON system format, expanding `*` tops.
    pub fn parse(document: &str) -> Result<CpsSpec, SpecError> {
        let raw: RawSystem =
            serde_json::from_str(document).map_err(|e| SpecError::Malformed(e.to_string()))?;
        if !raw.alphabet.contains(&raw.bottom) {
            return Err(SpecError::BottomNotInAlphabet(raw.bottom));
        }
        if !raw.states.contains(&raw.initial) {
            return Err(SpecError::UnknownState(raw.initial));
        }
        let mut rules = Vec::new();
        let mut warnings = Vec::new();
        for (idx, t) in raw.transitions.iter().enumerate() {
            if !raw.states.contains(&t.from) {
                return Err(SpecError::UnknownState(t.from.clone()));
            }
            if !raw.states.contains(&t.to) {
                return Err(SpecError::UnknownState(t.to.clone()));
            }
            let op = match t.op.as_str() {
                "pop1" => StackOp::Pop1,
                "pop2" => StackOp::Pop2,
                "clone2" => StackOp::Clone2,
                "collapse" => StackOp::Collapse,
                "push" => {
                    let sym = t.sym.clone().ok_or_else(|| {
                        SpecError::Malformed(format!("transition {idx}: push needs `sym`"))
                    })?;
                    let level = t
                        .level
                        .and_then(Level::from_u8)
                        .ok_or_else(|| {
                            SpecError::Malformed(format!(
                                "transition {idx}: push needs `level` 1 or 2"
                            ))
                        })?;
                    if sym == raw.bottom {
                        return Err(SpecError::PushBottom(idx));
                    }
                    if !raw.alphabet.contains(&sym) {
                        return Err(SpecError::UnknownSymbol(sym));
                    }
                    StackOp::Push { sym, level }
                }
                other => return Err(SpecError::UnknownOp(other.to_string())),
            };
            let name = t.name.clone().unwrap_or_else(|| format!("t{idx}"));
            let tops: Vec<String> = if t.top == "*" {
                raw.alphabet.clone()
            } else {
                if !raw.alphabet.contains(&t.top) {
                    return Err(SpecError::UnknownSymbol(t.top.clone()));
                }
                vec![t.top.clone()]
            };
            for top in tops {
                let rule = Rule {
                    name: name.clone(),
                    from: t.from.clone(),
                    top,
                    to: t.to.clone(),
                    op: op.clone(),
                };
                if rules
                    .iter()
                    .any(|r: &Rule| (&r.from, &r.top, &r.to, &r.op)
                        == (&rule.from, &rule.top, &rule.to, &rule.op))
                {
                    warnings.push(format!(
                        "duplicate transition ({},{},{},{})",
                        rule.from, rule.top, rule.to, rule.op
                    ));
                }
                rules.push(rule);
            }
        }
        Ok(CpsSpec {
            alphabet: raw.alphabet,
            bottom: raw.bottom,
            states: raw.states,
            initial: raw.initial,
            rules,
            schema_count: raw.transitions.len(),
            warnings,
        })
    }

    pub fn initial_config(&self) -> Config {
        Config::new(self.initial.clone(), Stack2::initial(self.bottom.clone()))
    }

    /// All one-step successors of a configuration, in rule order.
    pub fn successors(&self, c: &Config) -> Vec<(EdgeLabel, Config)> {
        let top_sym = c.stack.top_letter().sym.clone();
        let mut out = Vec::new();
        for rule in &self.rules {
            if rule.from != c.state || rule.top != top_sym {
                continue;
            }
            if let Some(stack) = c.stack.apply(&rule.op) {
                out.push((
                    EdgeLabel {
                        name: rule.name.clone(),
                        to: rule.to.clone(),
                        op: rule.op.clone(),
                    },
                    Config::new(rule.to.clone(), stack),
                ));
            }
        }
        out
    }

    /// Looks up a rule firing a specific labelled step, if any.
    pub fn step_is_legal(&self, from: &Config, label: &EdgeLabel, to: &Config) -> bool {
        if label.to != to.state {
            return false;
        }
        let top_sym = &from.stack.top_letter().sym;
        self.rules.iter().any(|r| {
            r.from == from.state
                && &r.top == top_sym
                && r.to == label.to
                && r.op == label.op
                && from.stack.apply(&r.op).as_ref() == Some(&to.stack)
        })
    }
}

/// Caps for the bounded explorations. All fields must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExplorationBounds {
    pub max_words: usize,
    pub max_word_len: usize,
    pub max_radius: usize,
    pub max_visited: usize,
}

impl ExplorationBounds {
    pub fn new(max_words: usize, max_word_len: usize, max_radius: usize, max_visited: usize) -> Self {
        assert!(max_words > 0 && max_word_len > 0 && max_radius > 0 && max_visited > 0);
        ExplorationBounds {
            max_words,
            max_word_len,
            max_radius,
            max_visited,
        }
    }

    pub fn admits(&self, s: &Stack2) -> bool {
        s.word_count() <= self.max_words
            && s.words().iter().all(|w| w.len() <= self.max_word_len)
    }
}

impl Default for ExplorationBounds {
    fn default() -> Self {
        ExplorationBounds::new(8, 8, 12, 20_000)
    }
}

/// The explored portion of a configuration graph.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    pub root: Config,
    /// Vertices in canonical (textual) order.
    pub vertices: Vec<Config>,
    /// Edges among retained vertices, canonically ordered.
    pub edges: Vec<(Config, EdgeLabel, Config)>,
    /// True when some successor was cut off by the bounds.
    pub truncated: bool,
}

impl LabeledGraph {
    pub fn contains(&self, c: &Config) -> bool {
        self.vertices.binary_search(c).is_ok()
    }
}

/// Breadth-first exploration of the reachable configurations within bounds.
pub fn bfs_graph(spec: &CpsSpec, bounds: &ExplorationBounds) -> LabeledGraph {
    let root = spec.initial_config();
    let mut seen: BTreeSet<Config> = BTreeSet::new();
    let mut frontier = VecDeque::new();
    let mut truncated = false;
    seen.insert(root.clone());
    frontier.push_back((root.clone(), 0usize));
    while let Some((c, depth)) = frontier.pop_front() {
        if depth == bounds.max_radius {
            truncated = true;
            continue;
        }
        for (_, succ) in spec.successors(&c) {
            if !bounds.admits(&succ.stack) {
                truncated = true;
                continue;
            }
            if seen.len() >= bounds.max_visited {
                truncated = true;
                continue;
            }
            if seen.insert(succ.clone()) {
                frontier.push_back((succ, depth + 1));
            }
        }
    }
    let vertices: Vec<Config> = seen.into_iter().collect();
    let mut edges = BTreeSet::new();
    for v in &vertices {
        for (label, succ) in spec.successors(v) {
            if vertices.binary_search(&succ).is_ok() {
                edges.insert((v.clone(), label, succ));
            }
        }
    }
    LabeledGraph {
        root,
        vertices,
        edges: edges.into_iter().collect(),
        truncated,
    }
}

/// A finite run: configurations plus the labels between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub configs: Vec<Config>,
    pub labels: Vec<EdgeLabel>,
}

impl Run {
    pub fn single(c: Config) -> Run {
        Run {
            configs: vec![c],
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn first(&self) -> &Config {
        &self.configs[0]
    }

    pub fn last(&self) -> &Config {
        self.configs.last().expect("runs are nonempty")
    }
}

/// Checks that every consecutive pair of a run is a legal labelled step.
pub fn run_check(spec: &CpsSpec, run: &Run) -> bool {
    if run.configs.is_empty() || run.configs.len() != run.labels.len() + 1 {
        return false;
    }
    run.labels
        .iter()
        .enumerate()
        .all(|(i, label)| spec.step_is_legal(&run.configs[i], label, &run.configs[i + 1]))
}

/// Outcome of a bounded reachability search.
#[derive(Debug, Clone)]
pub enum OracleAnswer {
    /// A checkable witness run from source to target.
    Reached(Run),
    /// No run found; only meaningful relative to the bounds used.
    NotFoundWithin(ExplorationBounds),
}

impl OracleAnswer {
    pub fn reached(&self) -> bool {
        matches!(self, OracleAnswer::Reached(_))
    }
}

/// Bounded breadth-first search for a run from `c1` to `c2`.
pub fn reach_oracle(
    spec: &CpsSpec,
    c1: &Config,
    c2: &Config,
    bounds: &ExplorationBounds,
) -> OracleAnswer {
    if c1 == c2 {
        return OracleAnswer::Reached(Run::single(c1.clone()));
    }
    let mut parent: BTreeMap<Config, (Config, EdgeLabel)> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut frontier = VecDeque::new();
    seen.insert(c1.clone());
    frontier.push_back((c1.clone(), 0usize));
    while let Some((c, depth)) = frontier.pop_front() {
        if depth == bounds.max_radius {
            continue;
        }
        for (label, succ) in spec.successors(&c) {
            if !bounds.admits(&succ.stack) || seen.len() >= bounds.max_visited {
                continue;
            }
            if seen.insert(succ.clone()) {
                parent.insert(succ.clone(), (c.clone(), label));
                if &succ == c2 {
                    let mut configs = vec![succ.clone()];
                    let mut labels = Vec::new();
                    let mut cur = succ;
                    while let Some((p, l)) = parent.get(&cur) {
                        configs.push(p.clone());
                        labels.push(l.clone());
                        cur = p.clone();
                    }
                    configs.reverse();
                    labels.reverse();
                    return OracleAnswer::Reached(Run { configs, labels });
                }
                frontier.push_back((succ, depth + 1));
            }
        }
    }
    OracleAnswer::NotFoundWithin(*bounds)
}

/// All state pairs realised by loops of `s`, found by structure-checked
/// search over the loop grammar: reflexive-transitive closure of simple
/// high loops (strictly above `s` throughout) and simple low loops (a pop
/// of a level-1 top, loops of the shortened stack, and the restoring push).
///
/// Sound within the bounds; a lower approximation in general.
pub fn loops_oracle(
    spec: &CpsSpec,
    s: &Stack2,
    bounds: &ExplorationBounds,
) -> BTreeSet<(String, String)> {
    let mut memo = BTreeMap::new();
    loops_oracle_rec(spec, s, bounds, &mut memo)
}

fn loops_oracle_rec(
    spec: &CpsSpec,
    s: &Stack2,
    bounds: &ExplorationBounds,
    memo: &mut BTreeMap<Stack2, BTreeSet<(String, String)>>,
) -> BTreeSet<(String, String)> {
    if let Some(r) = memo.get(s) {
        return r.clone();
    }
    // Seed the memo with the reflexive closure so self-recursive shapes
    // terminate; the result below only grows it.
    let identity: BTreeSet<(String, String)> = spec
        .states
        .iter()
        .map(|q| (q.clone(), q.clone()))
        .collect();
    memo.insert(s.clone(), identity.clone());

    let mut pairs = identity;
    // Simple high loops: explore the region strictly above s.
    for q in &spec.states {
        for q2 in simple_high_targets(spec, q, s, bounds) {
            pairs.insert((q.clone(), q2));
        }
    }
    // Simple low loops need a level-1 top with a poppable word.
    let top = s.top_letter().clone();
    if top.level == Level::L1 && s.top_word().len() >= 2 {
        let inner = s.apply(&StackOp::Pop1).expect("checked poppable");
        let inner_loops = loops_oracle_rec(spec, &inner, bounds, memo);
        let inner_sym = inner.top_letter().sym.clone();
        for r1 in &spec.rules {
            let pop_like = r1.op == StackOp::Pop1 || r1.op == StackOp::Collapse;
            if !pop_like || r1.top != top.sym {
                continue;
            }
            for r2 in &spec.rules {
                let restores = r2.op
                    == (StackOp::Push {
                        sym: top.sym.clone(),
                        level: Level::L1,
                    });
                if !restores || r2.top != inner_sym {
                    continue;
                }
                if inner_loops.contains(&(r1.to.clone(), r2.from.clone())) {
                    pairs.insert((r1.from.clone(), r2.to.clone()));
                }
            }
        }
    }
    let closed = transitive_closure(pairs);
    memo.insert(s.clone(), closed.clone());
    closed
}

fn simple_high_targets(
    spec: &CpsSpec,
    q: &str,
    s: &Stack2,
    bounds: &ExplorationBounds,
) -> BTreeSet<String> {
    let start = Config::new(q, s.clone());
    let mut out = BTreeSet::new();
    let mut seen = BTreeSet::new();
    let mut frontier = VecDeque::new();
    frontier.push_back((start.clone(), 0usize));
    while let Some((c, depth)) = frontier.pop_front() {
        if depth == bounds.max_radius {
            continue;
        }
        for (_, succ) in spec.successors(&c) {
            if succ.stack == *s {
                out.insert(succ.state);
                continue;
            }
            // Intermediates must stay strictly above s.
            if !s.is_substack_of(&succ.stack) {
                continue;
            }
            if !bounds.admits(&succ.stack) || seen.len() >= bounds.max_visited {
                continue;
            }
            if seen.insert(succ.clone()) {
                frontier.push_back((succ, depth + 1));
            }
        }
    }
    out
}

fn transitive_closure(mut pairs: BTreeSet<(String, String)>) -> BTreeSet<(String, String)> {
    loop {
        let mut added = Vec::new();
        for (a, b) in &pairs {
            for (c, d) in &pairs {
                if b == c && !pairs.contains(&(a.clone(), d.clone())) {
                    added.push((a.clone(), d.clone()));
                }
            }
        }
        if added.is_empty() {
            return pairs;
        }
        pairs.extend(added);
    }
}

/// Deterministic DOT rendering: canonical configuration strings as vertex
/// names, transition names as edge labels.
pub fn to_dot(g: &LabeledGraph) -> String {
    let mut out = String::from("digraph cpg {\n  rankdir=LR;\n");
    for v in &g.vertices {
        out.push_str(&format!("  \"{}\";\n", v.to_text()));
    }
    for (from, label, to) in &g.edges {
        out.push_str(&format!(
            "  \"{}\" -> \"{}\" [label=\"{}\"];\n",
            from.to_text(),
            to.to_text(),
            label.name,
        ));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SYS1: &str = r#"{
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

    fn sys1() -> CpsSpec {
        CpsSpec::parse(SYS1).unwrap()
    }

    #[test]
    fn parse_expands_wildcards() {
        let spec = sys1();
        assert_eq!(spec.schema_count, 5);
        assert_eq!(spec.rules.len(), 8);
        assert!(spec.warnings.is_empty());
    }

    #[test]
    fn parse_rejects_bad_documents() {
        assert!(matches!(
            CpsSpec::parse(&SYS1.replace("\"op\": \"pop1\"", "\"op\": \"pop3\"")),
            Err(SpecError::UnknownOp(_))
        ));
        assert!(matches!(
            CpsSpec::parse(&SYS1.replace("\"sym\": \"a\"", "\"sym\": \"⊥\"")),
            Err(SpecError::PushBottom(_))
        ));
        assert!(CpsSpec::parse("{").is_err());
    }

    #[test]
    fn successors_match_example_graph() {
        let spec = sys1();
        let c = Config::parse("1|⊥ : ⊥").unwrap();
        let succs = spec.successors(&c);
        let texts: BTreeSet<String> = succs.iter().map(|(_, c)| c.to_text()).collect();
        assert_eq!(
            texts,
            ["0|⊥^1@0 : ⊥^1@0 a^2@1", "2|⊥^1@0 : ⊥^1@0 a^2@1"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        );

        let sink = Config::parse("2|⊥ : ⊥").unwrap();
        assert!(spec.successors(&sink).is_empty());

        let init = spec.initial_config();
        let succs = spec.successors(&init);
        assert_eq!(succs.len(), 1);
        assert_eq!(succs[0].1.to_text(), "1|⊥^1@0 : ⊥^1@0");
    }

    #[test]
    fn bfs_contains_drawn_vertices_and_no_spurious_ones() {
        let spec = sys1();
        let g = bfs_graph(&spec, &ExplorationBounds::new(8, 8, 6, 10_000));
        for v in [
            "0|⊥^1@0",
            "1|⊥^1@0 : ⊥^1@0",
            "0|⊥^1@0 : ⊥^1@0 a^2@1",
            "2|⊥^1@0 : ⊥^1@0 a^2@1",
            "2|⊥^1@0 : ⊥^1@0",
        ] {
            assert!(g.contains(&Config::parse(v).unwrap()), "missing {v}");
        }
        assert!(!g.contains(&Config::parse("1|⊥").unwrap()));
        assert!(!g.contains(&Config::parse("2|⊥").unwrap()));

        let g0 = bfs_graph(&spec, &ExplorationBounds::new(8, 8, 1, 1));
        assert_eq!(g0.vertices, vec![spec.initial_config()]);
    }

    #[test]
    fn bfs_edges_agree_with_successors() {
        let spec = sys1();
        let g = bfs_graph(&spec, &ExplorationBounds::new(6, 6, 6, 10_000));
        for v in &g.vertices {
            for (label, succ) in spec.successors(v) {
                let present = g
                    .edges
                    .binary_search(&(v.clone(), label.clone(), succ.clone()))
                    .is_ok();
                assert_eq!(present, g.contains(&succ));
            }
        }
        for (from, label, to) in &g.edges {
            assert!(spec.step_is_legal(from, label, to));
        }
    }

    #[test]
    fn reach_oracle_finds_fig1_path_and_certifies_it() {
        let spec = sys1();
        let bounds = ExplorationBounds::new(8, 8, 8, 10_000);
        let from = Config::parse("0|⊥").unwrap();
        let to = Config::parse("2|⊥ : ⊥").unwrap();
        match reach_oracle(&spec, &from, &to, &bounds) {
            OracleAnswer::Reached(run) => {
                assert_eq!(run.len(), 3);
                assert!(run_check(&spec, &run));
            }
            _ => panic!("expected a witness"),
        }
        // The sink has no successors at all.
        assert!(!reach_oracle(&spec, &to, &from, &bounds).reached());
        // Trivial self-run.
        match reach_oracle(&spec, &from, &from, &bounds) {
            OracleAnswer::Reached(run) => assert!(run.is_empty()),
            _ => panic!("expected the empty run"),
        }
    }

    #[test]
    fn run_check_rejects_forged_steps() {
        let spec = sys1();
        let c = spec.initial_config();
        assert!(run_check(&spec, &Run::single(c.clone())));
        let forged = Run {
            configs: vec![c.clone(), Config::parse("1|⊥").unwrap()],
            labels: vec![EdgeLabel {
                name: "x".into(),
                to: "1".into(),
                op: StackOp::Pop2,
            }],
        };
        assert!(!run_check(&spec, &forged));
    }

    #[test]
    fn loops_oracle_on_sys1() {
        let spec = sys1();
        let bounds = ExplorationBounds::new(6, 6, 10, 20_000);
        let loops_bot = loops_oracle(&spec, &Stack2::initial("⊥"), &bounds);
        // The clone→push→collapse cycle plus the push→pop high loop.
        assert!(loops_bot.contains(&("0".into(), "0".into())));
        assert!(loops_bot.contains(&("1".into(), "2".into())));
        for q in &spec.states {
            assert!(loops_bot.contains(&(q.clone(), q.clone())));
        }
        assert!(!loops_bot.contains(&("2".into(), "0".into())));

        let s = Stack2::parse("⊥ : ⊥ a^2@1").unwrap();
        let loops_s = loops_oracle(&spec, &s, &bounds);
        let from2: BTreeSet<_> = loops_s.iter().filter(|(a, _)| a == "2").collect();
        assert_eq!(from2.len(), 1, "only the empty loop starts at state 2");
    }

    #[test]
    fn dot_output_is_deterministic_and_labelled() {
        let spec = sys1();
        let g = bfs_graph(&spec, &ExplorationBounds::new(6, 6, 4, 10_000));
        let d1 = to_dot(&g);
        let d2 = to_dot(&g);
        assert_eq!(d1, d2);
        for label in ["cl", "a", "a2", "p", "co"] {
            assert!(d1.contains(&format!("label=\"{label}\"")));
        }
    }
}
