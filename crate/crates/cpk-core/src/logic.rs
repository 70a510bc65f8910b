//! First-order queries over a configuration graph, with edge, equality,
//! reachability and constrained-reachability atoms.
//!
//! Two backends answer the same questions. The automata backend compiles a
//! sentence bottom-up over convolution alphabets — atoms to relation
//! automata, connectives to boolean combinations relativised to the domain
//! automaton, quantifiers to track projection — and decides by emptiness;
//! its verdicts are exact. The bounded backend materialises every
//! reachable configuration whose encoding fits a node budget and evaluates
//! directly; its verdicts carry the budget. Reachability atoms in the
//! automata backend must be anchored at the initial configuration through
//! an `init` conjunct, because only those relation automata are
//! constructible here; the bounded backend takes all of them.

use crate::codec::{encode_config, TLabel};
use crate::reach::{Analysis, ReachError, RegularConstraint};
use crate::stack::{Config, Stack2, StackOp};
use crate::summaries::Budget;
use crate::tnfa::{conv_alphabet, convolve, ConvLabel, Nfta, TnfaError, Tree};
use crate::treeops::{base_labels, edge_relation_automaton, tree_of};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FoError {
    #[error("formula syntax error: {0}")]
    Parse(String),
    #[error("unknown edge label `{0}`")]
    UnknownEdge(String),
    #[error("unknown constraint `{0}`")]
    UnknownConstraint(String),
    #[error("variable `{0}` is unbound")]
    Unbound(String),
    #[error("variable `{0}` is bound twice along one branch")]
    Shadowed(String),
    #[error(
        "the automata backend only compiles reach atoms anchored by an \
         (init v) conjunct; rewrite as (and (init {0}) (reach {0} {1})) or \
         use the bounded backend"
    )]
    UnanchoredReach(String, String),
    #[error("sentence expected, but `{0}` is free")]
    NotClosed(String),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Tnfa(#[from] TnfaError),
}

/// Formula syntax: s-expressions over the listed constructors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    Exists(String, Box<Formula>),
    Forall(String, Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Not(Box<Formula>),
    Edge(String, String, String),
    Reach(String, String),
    ReachR(String, String, String),
    Eq(String, String),
    Init(String),
}

impl Formula {
    pub fn free_vars(&self) -> BTreeSet<String> {
        match self {
            Formula::Exists(v, f) | Formula::Forall(v, f) => {
                let mut s = f.free_vars();
                s.remove(v);
                s
            }
            Formula::And(a, b) | Formula::Or(a, b) => {
                let mut s = a.free_vars();
                s.extend(b.free_vars());
                s
            }
            Formula::Not(f) => f.free_vars(),
            Formula::Edge(_, x, y) | Formula::Reach(x, y) | Formula::ReachR(_, x, y) => {
                [x.clone(), y.clone()].into_iter().collect()
            }
            Formula::Eq(x, y) => [x.clone(), y.clone()].into_iter().collect(),
            Formula::Init(x) => [x.clone()].into_iter().collect(),
        }
    }

    pub fn quantifier_count(&self) -> usize {
        match self {
            Formula::Exists(_, f) | Formula::Forall(_, f) => 1 + f.quantifier_count(),
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.quantifier_count() + b.quantifier_count()
            }
            Formula::Not(f) => f.quantifier_count(),
            _ => 0,
        }
    }
}

#[derive(Debug)]
enum SExpr {
    Atom(String),
    List(Vec<SExpr>),
}

fn tokenize(text: &str) -> Vec<String> {
    text.replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .map(|s| s.to_string())
        .collect()
}

fn parse_sexpr(tokens: &[String], at: &mut usize) -> Result<SExpr, FoError> {
    if *at >= tokens.len() {
        return Err(FoError::Parse("unexpected end of input".into()));
    }
    let tok = &tokens[*at];
    *at += 1;
    if tok == "(" {
        let mut items = Vec::new();
        loop {
            if *at >= tokens.len() {
                return Err(FoError::Parse("unbalanced parentheses".into()));
            }
            if tokens[*at] == ")" {
                *at += 1;
                return Ok(SExpr::List(items));
            }
            items.push(parse_sexpr(tokens, at)?);
        }
    } else if tok == ")" {
        Err(FoError::Parse("unexpected `)`".into()))
    } else {
        Ok(SExpr::Atom(tok.clone()))
    }
}

/// Parses a formula, checking edge labels and constraint names against the
/// declarations and rejecting rebinding of in-scope variables.
pub fn parse_formula(
    text: &str,
    edge_names: &BTreeSet<String>,
    constraint_names: &BTreeSet<String>,
) -> Result<Formula, FoError> {
    let tokens = tokenize(text);
    let mut at = 0;
    let sexpr = parse_sexpr(&tokens, &mut at)?;
    if at != tokens.len() {
        return Err(FoError::Parse("trailing input after formula".into()));
    }
    let f = build(&sexpr, edge_names, constraint_names)?;
    check_vars(&f, &mut BTreeSet::new())?;
    Ok(f)
}

fn atom(e: &SExpr) -> Result<String, FoError> {
    match e {
        SExpr::Atom(a) => Ok(a.clone()),
        SExpr::List(_) => Err(FoError::Parse("expected a name".into())),
    }
}

fn build(
    e: &SExpr,
    edges: &BTreeSet<String>,
    constraints: &BTreeSet<String>,
) -> Result<Formula, FoError> {
    let items = match e {
        SExpr::List(items) if !items.is_empty() => items,
        _ => return Err(FoError::Parse("expected a ( … ) form".into())),
    };
    let head = atom(&items[0])?;
    let arity = items.len() - 1;
    let expect = |n: usize| {
        if arity == n {
            Ok(())
        } else {
            Err(FoError::Parse(format!("`{head}` takes {n} arguments")))
        }
    };
    match head.as_str() {
        "exists" | "forall" => {
            expect(2)?;
            let v = atom(&items[1])?;
            let body = Box::new(build(&items[2], edges, constraints)?);
            Ok(if head == "exists" {
                Formula::Exists(v, body)
            } else {
                Formula::Forall(v, body)
            })
        }
        "and" | "or" => {
            expect(2)?;
            let a = Box::new(build(&items[1], edges, constraints)?);
            let b = Box::new(build(&items[2], edges, constraints)?);
            Ok(if head == "and" {
                Formula::And(a, b)
            } else {
                Formula::Or(a, b)
            })
        }
        "not" => {
            expect(1)?;
            Ok(Formula::Not(Box::new(build(&items[1], edges, constraints)?)))
        }
        "edge" => {
            expect(3)?;
            let name = atom(&items[1])?;
            if !edges.contains(&name) {
                return Err(FoError::UnknownEdge(name));
            }
            Ok(Formula::Edge(name, atom(&items[2])?, atom(&items[3])?))
        }
        "reach" => {
            expect(2)?;
            Ok(Formula::Reach(atom(&items[1])?, atom(&items[2])?))
        }
        "reachr" => {
            expect(3)?;
            let name = atom(&items[1])?;
            if !constraints.contains(&name) {
                return Err(FoError::UnknownConstraint(name));
            }
            Ok(Formula::ReachR(name, atom(&items[2])?, atom(&items[3])?))
        }
        "=" => {
            expect(2)?;
            Ok(Formula::Eq(atom(&items[1])?, atom(&items[2])?))
        }
        "init" => {
            expect(1)?;
            Ok(Formula::Init(atom(&items[1])?))
        }
        other => Err(FoError::Parse(format!("unknown form `{other}`"))),
    }
}

fn check_vars(f: &Formula, bound: &mut BTreeSet<String>) -> Result<(), FoError> {
    match f {
        Formula::Exists(v, body) | Formula::Forall(v, body) => {
            if !bound.insert(v.clone()) {
                return Err(FoError::Shadowed(v.clone()));
            }
            check_vars(body, bound)?;
            bound.remove(v);
            Ok(())
        }
        Formula::And(a, b) | Formula::Or(a, b) => {
            check_vars(a, bound)?;
            check_vars(b, bound)
        }
        Formula::Not(a) => check_vars(a, bound),
        _ => {
            for v in f.free_vars() {
                if !bound.contains(&v) {
                    return Err(FoError::Unbound(v));
                }
            }
            Ok(())
        }
    }
}

/// Truth value plus how it was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Exact(bool),
    Bounded { value: bool, bound: usize },
}

impl Verdict {
    pub fn value(&self) -> bool {
        match self {
            Verdict::Exact(v) => *v,
            Verdict::Bounded { value, .. } => *value,
        }
    }
}

/// All valid stacks of the system with encodings of at most `max_nodes`
/// tree nodes, found by closing the stack space under the operations with
/// headroom for intermediate growth.
pub fn stacks_up_to(spec: &crate::system::CpsSpec, max_nodes: usize) -> Vec<Stack2> {
    let mut ops = vec![StackOp::Pop1, StackOp::Pop2, StackOp::Clone2, StackOp::Collapse];
    for s in &spec.alphabet {
        if *s == spec.bottom {
            continue;
        }
        for level in [crate::stack::Level::L1, crate::stack::Level::L2] {
            ops.push(StackOp::Push {
                sym: s.clone(),
                level,
            });
        }
    }
    let size = |s: &Stack2| crate::codec::encode_stack(s).len();
    let slack = 2 * max_nodes;
    let mut seen: BTreeSet<Stack2> = BTreeSet::new();
    let mut frontier = vec![Stack2::initial(spec.bottom.clone())];
    seen.insert(frontier[0].clone());
    while let Some(s) = frontier.pop() {
        for op in &ops {
            if let Some(t) = s.apply(op) {
                if size(&t) <= slack && seen.insert(t.clone()) {
                    frontier.push(t);
                }
            }
        }
    }
    seen.into_iter().filter(|s| size(s) <= max_nodes).collect()
}

/// The quantification universe of the bounded backend: reachable
/// configurations whose encodings have at most `bound` nodes.
pub fn bounded_universe(
    analysis: &mut Analysis,
    bound: usize,
) -> Result<Vec<Config>, ReachError> {
    let stacks = stacks_up_to(&analysis.spec, bound.saturating_sub(1));
    let states = analysis.spec.states.clone();
    let mut out = Vec::new();
    for stack in stacks {
        for q in &states {
            let c = Config::new(q.clone(), stack.clone());
            if analysis.is_reachable(&c)? {
                out.push(c);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Direct evaluation over the bounded universe.
pub fn eval_sentence_bounded(
    analysis: &mut Analysis,
    f: &Formula,
    bound: usize,
    constraints: &BTreeMap<String, RegularConstraint>,
    budget: Budget,
) -> Result<Verdict, FoError> {
    if let Some(v) = f.free_vars().into_iter().next() {
        return Err(FoError::NotClosed(v));
    }
    let universe = bounded_universe(analysis, bound)?;
    let mut env = BTreeMap::new();
    let value = eval_in(analysis, f, &universe, &mut env, constraints, budget)?;
    Ok(Verdict::Bounded { value, bound })
}

fn eval_in(
    analysis: &mut Analysis,
    f: &Formula,
    universe: &[Config],
    env: &mut BTreeMap<String, Config>,
    constraints: &BTreeMap<String, RegularConstraint>,
    budget: Budget,
) -> Result<bool, FoError> {
    Ok(match f {
        Formula::Exists(v, body) => {
            let mut found = false;
            for c in universe {
                env.insert(v.clone(), c.clone());
                if eval_in(analysis, body, universe, env, constraints, budget)? {
                    found = true;
                    break;
                }
            }
            env.remove(v);
            found
        }
        Formula::Forall(v, body) => {
            let mut all = true;
            for c in universe {
                env.insert(v.clone(), c.clone());
                if !eval_in(analysis, body, universe, env, constraints, budget)? {
                    all = false;
                    break;
                }
            }
            env.remove(v);
            all
        }
        Formula::And(a, b) => {
            eval_in(analysis, a, universe, env, constraints, budget)?
                && eval_in(analysis, b, universe, env, constraints, budget)?
        }
        Formula::Or(a, b) => {
            eval_in(analysis, a, universe, env, constraints, budget)?
                || eval_in(analysis, b, universe, env, constraints, budget)?
        }
        Formula::Not(a) => !eval_in(analysis, a, universe, env, constraints, budget)?,
        Formula::Edge(name, x, y) => {
            let cx = env.get(x).ok_or_else(|| FoError::Unbound(x.clone()))?;
            let cy = env.get(y).ok_or_else(|| FoError::Unbound(y.clone()))?;
            analysis
                .spec
                .successors(cx)
                .iter()
                .any(|(l, t)| l.name == *name && t == cy)
        }
        Formula::Reach(x, y) => {
            let cx = env.get(x).cloned().ok_or_else(|| FoError::Unbound(x.clone()))?;
            let cy = env.get(y).cloned().ok_or_else(|| FoError::Unbound(y.clone()))?;
            analysis.reach(&cx, &cy)?
        }
        Formula::ReachR(name, x, y) => {
            let cx = env.get(x).cloned().ok_or_else(|| FoError::Unbound(x.clone()))?;
            let cy = env.get(y).cloned().ok_or_else(|| FoError::Unbound(y.clone()))?;
            let r = constraints
                .get(name)
                .ok_or_else(|| FoError::UnknownConstraint(name.clone()))?;
            analysis.reach_regular(&cx, &cy, r, budget)?
        }
        Formula::Eq(x, y) => env.get(x) == env.get(y),
        Formula::Init(x) => {
            env.get(x) == Some(&analysis.spec.initial_config())
        }
    })
}

/// All satisfying assignments of an open formula over the bounded
/// universe, in canonical order of the sorted free variables.
pub fn solutions(
    analysis: &mut Analysis,
    f: &Formula,
    bound: usize,
    constraints: &BTreeMap<String, RegularConstraint>,
    budget: Budget,
) -> Result<Vec<BTreeMap<String, Config>>, FoError> {
    let universe = bounded_universe(analysis, bound)?;
    let vars: Vec<String> = f.free_vars().into_iter().collect();
    let mut out = Vec::new();
    let mut assignment: BTreeMap<String, Config> = BTreeMap::new();
    enumerate(
        analysis,
        f,
        &universe,
        &vars,
        0,
        &mut assignment,
        &mut out,
        constraints,
        budget,
    )?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    analysis: &mut Analysis,
    f: &Formula,
    universe: &[Config],
    vars: &[String],
    at: usize,
    assignment: &mut BTreeMap<String, Config>,
    out: &mut Vec<BTreeMap<String, Config>>,
    constraints: &BTreeMap<String, RegularConstraint>,
    budget: Budget,
) -> Result<(), FoError> {
    if at == vars.len() {
        let mut env = assignment.clone();
        if eval_in(analysis, f, universe, &mut env, constraints, budget)? {
            out.push(assignment.clone());
        }
        return Ok(());
    }
    for c in universe {
        assignment.insert(vars[at].clone(), c.clone());
        enumerate(
            analysis,
            f,
            universe,
            vars,
            at + 1,
            assignment,
            out,
            constraints,
            budget,
        )?;
    }
    assignment.remove(&vars[at]);
    Ok(())
}

/// The automata backend: compiles and decides sentences exactly.
pub struct AutomataBackend<'a> {
    analysis: &'a mut Analysis,
    constraints: BTreeMap<String, RegularConstraint>,
    budget: Budget,
    base: Vec<TLabel>,
    dom: Option<Nfta<TLabel>>,
    reachr_doms: BTreeMap<String, Nfta<TLabel>>,
    pub det_budget: usize,
}

impl<'a> AutomataBackend<'a> {
    pub fn new(
        analysis: &'a mut Analysis,
        constraints: BTreeMap<String, RegularConstraint>,
        budget: Budget,
    ) -> AutomataBackend<'a> {
        let base = base_labels(&analysis.spec);
        AutomataBackend {
            analysis,
            constraints,
            budget,
            base,
            dom: None,
            reachr_doms: BTreeMap::new(),
            det_budget: 1 << 14,
        }
    }

    fn domain(&mut self) -> Result<Nfta<TLabel>, FoError> {
        if self.dom.is_none() {
            self.dom = Some(self.analysis.domain_automaton()?);
        }
        Ok(self.dom.clone().expect("just built"))
    }

    /// Domain of the product system, re-rooted on the original states and
    /// restricted to final constraint states.
    fn reachr_domain(&mut self, name: &str) -> Result<Nfta<TLabel>, FoError> {
        if let Some(a) = self.reachr_doms.get(name) {
            return Ok(a.clone());
        }
        let r = self
            .constraints
            .get(name)
            .ok_or_else(|| FoError::UnknownConstraint(name.to_string()))?
            .clone();
        let product = crate::reach::product_cps(&self.analysis.spec, &r)?;
        let mut product_analysis = Analysis::new(product, self.budget);
        let product_dom = product_analysis.domain_automaton()?;
        // Relabel tagged root states (q/p) to q for final p; drop others.
        let mut out: Nfta<TLabel> = Nfta::new(self.base.clone());
        out.state_count = product_dom.state_count;
        out.roots = product_dom.roots.clone();
        for rule in &product_dom.rules {
            let label = &product_dom.labels[rule.label as usize];
            let mapped = match label {
                TLabel::State(tagged) => {
                    let (q, p) = tagged
                        .rsplit_once('/')
                        .expect("product states are tagged");
                    if r.finals.iter().any(|f| f == p) {
                        TLabel::State(q.to_string())
                    } else {
                        continue;
                    }
                }
                other => other.clone(),
            };
            out.rules.insert(crate::tnfa::Rule {
                label: out.label_index(&mapped)?,
                kids: rule.kids,
                state: rule.state,
            });
        }
        let out = out.trim();
        self.reachr_doms.insert(name.to_string(), out.clone());
        Ok(out)
    }

    fn lift1(&self, a: &Nfta<TLabel>) -> Nfta<ConvLabel<TLabel>> {
        let mut out: Nfta<ConvLabel<TLabel>> = Nfta::new(conv_alphabet(&self.base, 1));
        out.state_count = a.state_count;
        out.roots = a.roots.clone();
        for r in &a.rules {
            let label = out
                .label_index(&vec![Some(a.labels[r.label as usize].clone())])
                .expect("single-track label");
            out.rules.insert(crate::tnfa::Rule {
                label,
                kids: r.kids,
                state: r.state,
            });
        }
        out
    }

    /// Inserts unconstrained tracks so that的 automaton over `own` (sorted)
    /// becomes one over `scope` (sorted superset).
    fn widen(
        &self,
        a: Nfta<ConvLabel<TLabel>>,
        own: &[String],
        scope: &[String],
    ) -> Nfta<ConvLabel<TLabel>> {
        let mut out = a;
        let mut have: Vec<&String> = own.iter().collect();
        for (i, v) in scope.iter().enumerate() {
            if !have.iter().any(|h| *h == v) {
                out = out.cylindrify(i, &self.base);
                have.insert(i, v);
            }
        }
        out
    }

    /// The diagonal (equality) over two tracks.
    fn diagonal(&self) -> Nfta<ConvLabel<TLabel>> {
        let mut a: Nfta<ConvLabel<TLabel>> = Nfta::new(conv_alphabet(&self.base, 2));
        a.state_count = 1;
        a.roots.insert(0);
        for l in &self.base {
            let li = a
                .label_index(&vec![Some(l.clone()), Some(l.clone())])
                .expect("pair label");
            for kids in [
                crate::tnfa::Kids::Leaf,
                crate::tnfa::Kids::L(0),
                crate::tnfa::Kids::R(0),
                crate::tnfa::Kids::LR(0, 0),
            ] {
                a.rules.insert(crate::tnfa::Rule {
                    label: li,
                    kids,
                    state: 0,
                });
            }
        }
        a
    }

    /// Relativises every track of `a` to the domain automaton.
    fn relativize(
        &mut self,
        a: Nfta<ConvLabel<TLabel>>,
        scope_len: usize,
    ) -> Result<Nfta<ConvLabel<TLabel>>, FoError> {
        let dom = self.domain()?;
        let mut out = a;
        for i in 0..scope_len {
            let mut d = self.lift1(&dom);
            for j in 0..scope_len {
                if j < i {
                    d = d.cylindrify(0, &self.base);
                } else if j > i {
                    d = d.cylindrify(d.labels.first().map_or(1, |l| l.len()), &self.base);
                }
            }
            out = out.combine(&d, true)?;
        }
        Ok(out)
    }

    /// Compiles a formula over the sorted scope of its free variables plus
    /// enclosing binders; every variable's track is domain-relativised.
    fn compile(
        &mut self,
        f: &Formula,
        scope: &[String],
    ) -> Result<Nfta<ConvLabel<TLabel>>, FoError> {
        let track = |v: &String| -> usize {
            scope
                .iter()
                .position(|s| s == v)
                .expect("scope covers free variables")
        };
        match f {
            Formula::Exists(v, body) => {
                let mut inner_scope: Vec<String> = scope.to_vec();
                inner_scope.push(v.clone());
                inner_scope.sort();
                let inner = self.compile(body, &inner_scope)?;
                let ti = inner_scope.iter().position(|s| s == v).expect("added");
                Ok(inner.project(ti).trim())
            }
            Formula::Forall(v, body) => {
                // ∀x φ  ≡  ¬∃x ¬φ
                let rewritten = Formula::Not(Box::new(Formula::Exists(
                    v.clone(),
                    Box::new(Formula::Not(body.clone())),
                )));
                self.compile(&rewritten, scope)
            }
            Formula::And(a, b) => {
                let ca = self.compile(a, scope)?;
                let cb = self.compile(b, scope)?;
                Ok(ca.combine(&cb, true)?.trim())
            }
            Formula::Or(a, b) => {
                let ca = self.compile(a, scope)?;
                let cb = self.compile(b, scope)?;
                Ok(ca.combine(&cb, false)?.trim())
            }
            Formula::Not(a) => {
                let ca = self.compile(a, scope)?;
                let complement = ca.complement(self.det_budget)?;
                self.relativize(complement.trim(), scope.len())
            }
            Formula::Eq(x, y) => {
                let own = sorted_pair(x, y);
                let a = if own[0] == *x && own.len() == 2 {
                    self.diagonal()
                } else {
                    self.diagonal()
                };
                let a = if own.len() == 1 {
                    // x = x over a single track: the whole domain.
                    let dom = self.domain()?;
                    self.lift1(&dom)
                } else {
                    a
                };
                let wide = self.widen(a, &own, scope);
                self.relativize(wide, scope.len())
            }
            Formula::Edge(name, x, y) => {
                let auto = edge_relation_automaton(&self.analysis.spec, name)
                    .ok_or_else(|| FoError::UnknownEdge(name.clone()))?;
                let own = sorted_pair(x, y);
                if own.len() == 1 {
                    return Err(FoError::Parse(format!(
                        "edge atom needs two distinct variables, got `{x}` twice; \
                         intersect with equality instead"
                    )));
                }
                let oriented = if own[0] == *x { auto } else { auto.transpose2() };
                let wide = self.widen(oriented, &own, scope);
                self.relativize(wide, scope.len())
            }
            Formula::Init(x) => {
                let init = self.analysis.spec.initial_config();
                let tree = tree_of(&encode_config(&init));
                let single = Nfta::singleton(self.base.clone(), &tree)?;
                let lifted = self.lift1(&single);
                let wide = self.widen(lifted, &[x.clone()], scope);
                self.relativize(wide, scope.len())
            }
            Formula::Reach(x, y) => Err(FoError::UnanchoredReach(x.clone(), y.clone())),
            Formula::ReachR(_, x, y) => Err(FoError::UnanchoredReach(x.clone(), y.clone())),
        }
    }

    /// Recognises `(and (init u) (reach u v))` and its commuted and
    /// constrained forms, the anchored shapes this backend compiles.
    fn compile_anchored(
        &mut self,
        a: &Formula,
        b: &Formula,
        scope: &[String],
    ) -> Result<Option<Nfta<ConvLabel<TLabel>>>, FoError> {
        let (init_var, reach) = match (a, b) {
            (Formula::Init(u), r) => (u, r),
            (r, Formula::Init(u)) => (u, r),
            _ => return Ok(None),
        };
        let (u, v, target_dom) = match reach {
            Formula::Reach(u, v) if u == init_var => {
                let d = self.domain()?;
                (u, v, d)
            }
            Formula::ReachR(name, u, v) if u == init_var => {
                let d = self.reachr_domain(name)?;
                (u, v, d)
            }
            _ => return Ok(None),
        };
        // init on u's track, reach-from-init on v's track.
        let init = self.analysis.spec.initial_config();
        let tree = tree_of(&encode_config(&init));
        let single = Nfta::singleton(self.base.clone(), &tree)?;
        let iu = self.widen(self.lift1(&single), &[u.clone()], scope);
        let rv = self.widen(self.lift1(&target_dom), &[v.clone()], scope);
        let combined = iu.combine(&rv, true)?.trim();
        Ok(Some(self.relativize(combined, scope.len())?))
    }

    /// Decides a closed formula exactly.
    pub fn eval_sentence(&mut self, f: &Formula) -> Result<Verdict, FoError> {
        if let Some(v) = f.free_vars().into_iter().next() {
            return Err(FoError::NotClosed(v));
        }
        Ok(Verdict::Exact(self.eval_closed(f)?))
    }

    fn eval_closed(&mut self, f: &Formula) -> Result<bool, FoError> {
        match f {
            Formula::And(a, b) => Ok(self.eval_closed(a)? && self.eval_closed(b)?),
            Formula::Or(a, b) => Ok(self.eval_closed(a)? || self.eval_closed(b)?),
            Formula::Not(a) => Ok(!self.eval_closed(a)?),
            Formula::Exists(v, body) => {
                let scope = vec![v.clone()];
                let auto = self.compile_scoped(body, &scope)?;
                Ok(!auto.is_empty())
            }
            Formula::Forall(v, body) => {
                let inner = Formula::Exists(
                    v.clone(),
                    Box::new(Formula::Not(body.clone())),
                );
                Ok(!self.eval_closed(&inner)?)
            }
            other => Err(FoError::Parse(format!(
                "sentence has a bare atom outside quantifiers: {other:?}"
            ))),
        }
    }

    /// compile() with the anchored-reach special form handled at every
    /// conjunction node.
    fn compile_scoped(
        &mut self,
        f: &Formula,
        scope: &[String],
    ) -> Result<Nfta<ConvLabel<TLabel>>, FoError> {
        if let Formula::And(a, b) = f {
            if let Some(auto) = self.compile_anchored(a, b, scope)? {
                return Ok(auto);
            }
            let ca = self.compile_scoped(a, scope)?;
            let cb = self.compile_scoped(b, scope)?;
            return Ok(ca.combine(&cb, true)?.trim());
        }
        if let Formula::Exists(v, body) = f {
            let mut inner_scope: Vec<String> = scope.to_vec();
            inner_scope.push(v.clone());
            inner_scope.sort();
            let inner = self.compile_scoped(body, &inner_scope)?;
            let ti = inner_scope.iter().position(|s| s == v).expect("added");
            return Ok(inner.project(ti).trim());
        }
        if let Formula::Forall(v, body) = f {
            let rewritten = Formula::Not(Box::new(Formula::Exists(
                v.clone(),
                Box::new(Formula::Not(body.clone())),
            )));
            return self.compile_scoped(&rewritten, scope);
        }
        if let Formula::Not(a) = f {
            let ca = self.compile_scoped(a, scope)?;
            let complement = ca.complement(self.det_budget)?;
            return self.relativize(complement.trim(), scope.len());
        }
        if let Formula::Or(a, b) = f {
            let ca = self.compile_scoped(a, scope)?;
            let cb = self.compile_scoped(b, scope)?;
            return Ok(ca.combine(&cb, false)?.trim());
        }
        self.compile(f, scope)
    }

    /// Language equivalence through emptiness of the symmetric difference.
    pub fn equivalent(
        &mut self,
        a: &Nfta<ConvLabel<TLabel>>,
        b: &Nfta<ConvLabel<TLabel>>,
    ) -> Result<bool, FoError> {
        let not_b = b.complement(self.det_budget)?;
        let not_a = a.complement(self.det_budget)?;
        let d1 = a.combine(&not_b, true)?;
        let d2 = b.combine(&not_a, true)?;
        Ok(d1.is_empty() && d2.is_empty())
    }

    /// Compiles an open formula for law checks.
    pub fn compile_open(
        &mut self,
        f: &Formula,
        scope: &[String],
    ) -> Result<Nfta<ConvLabel<TLabel>>, FoError> {
        self.compile_scoped(f, scope)
    }
}

fn sorted_pair(x: &str, y: &str) -> Vec<String> {
    let mut v = vec![x.to_string(), y.to_string()];
    v.sort();
    v.dedup();
    v
}

/// A convolution tree from an assignment, for spot checks.
pub fn assignment_tree(
    configs: &[&Config],
) -> Tree<ConvLabel<TLabel>> {
    let trees: Vec<Tree<TLabel>> = configs
        .iter()
        .map(|c| tree_of(&encode_config(c)))
        .collect();
    let refs: Vec<&Tree<TLabel>> = trees.iter().collect();
    convolve(&refs)
}
