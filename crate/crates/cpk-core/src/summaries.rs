//! Loop and escape summaries.
//!
//! `Loops(s)` — the state pairs realisable by runs that return to `s`
//! without ever dropping below it — depends only on the projection of the
//! topmost word of `s`. This module computes those relations by a least
//! fixpoint over two task families:
//!
//! * `Loop(w)`: loops of any stack whose projected top word is `w`. Rules:
//!   identity and composition; a low dip (pop a level-1 top, loop below,
//!   push it back); a push excursion (push, loop on the longer word, pop);
//!   and a clone excursion (clone, then dispose of the copied word while
//!   staying above the base).
//!
//! * `Exc(ṽ)`: runs that start on an excursion word `ṽ` and exit the cone
//!   above it. Level-2 letters carry tags describing where their collapse
//!   lands: `Dep(d)` = d frames below the current word (pushed letters start
//!   at depth 1 and shift one deeper every time a clone copies them),
//!   `Esc` = below the loop base (fatal for loops, and exactly the exits
//!   the descent machinery wants, so escapes optionally carry the concrete
//!   word index they land on).
//!
//! The word space is infinite, so tasks are spawned by demand under caps;
//! results are exact when no cap was hit, and otherwise recomputed under
//! growing caps until the queried value stabilises across two rounds —
//! reported as such — or the budget runs out, which is an error rather than
//! a silently wrong answer.

use crate::stack::{Level, StackOp};
use crate::system::CpsSpec;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// A relation over control states, interned as indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Rel(pub BTreeSet<(u16, u16)>);

impl Rel {
    pub fn identity(n: u16) -> Rel {
        Rel((0..n).map(|q| (q, q)).collect())
    }

    pub fn compose(&self, other: &Rel) -> Rel {
        let mut by_first: BTreeMap<u16, Vec<u16>> = BTreeMap::new();
        for (a, b) in &other.0 {
            by_first.entry(*a).or_default().push(*b);
        }
        let mut out = BTreeSet::new();
        for (a, b) in &self.0 {
            if let Some(cs) = by_first.get(b) {
                for c in cs {
                    out.insert((*a, *c));
                }
            }
        }
        Rel(out)
    }

    pub fn absorb(&mut self, other: &Rel) -> bool {
        let before = self.0.len();
        self.0.extend(other.0.iter().copied());
        self.0.len() != before
    }

    /// Reflexive-transitive closure over `n` states.
    pub fn closure(&self, n: u16) -> Rel {
        let mut out = Rel::identity(n);
        out.absorb(self);
        loop {
            let next = out.compose(&out);
            let mut grown = out.clone();
            if !grown.absorb(&next) {
                return out;
            }
            out = grown;
        }
    }

    pub fn contains(&self, a: u16, b: u16) -> bool {
        self.0.contains(&(a, b))
    }

    pub fn image(&self, from: &BTreeSet<u16>) -> BTreeSet<u16> {
        self.0
            .iter()
            .filter(|(a, _)| from.contains(a))
            .map(|(_, b)| *b)
            .collect()
    }
}

/// A projected letter: symbol and collapse level, no link.
pub type WLetter = (u16, Level);
/// A projected word, innermost letter first.
pub type Word = Vec<WLetter>;

/// Where a level-2 letter's collapse lands, relative to the summary scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Tag {
    /// `d` frames below the word currently holding the letter.
    Dep(u32),
    /// Below the loop base; `Some(r)` remembers the concrete landing
    /// prefix (first `r` words) for descent queries.
    Esc(Option<u32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct TLetter {
    sym: u16,
    level: Level,
    tag: Option<Tag>, // None for level-1 letters
}

type TWord = Vec<TLetter>;

/// How the frame behaves at its lower boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Frame {
    /// Popping down to this many letters means arriving back at the base
    /// stack itself (only nonzero for base-level excursions).
    floor: u16,
    /// `Some(r)`: this word extends the base's own top word, so removing a
    /// whole word (pop2) or collapsing a letter pushed here lands on the
    /// first `r` words, strictly below the base. `None`: a proper excursion
    /// frame, where pop2 returns one frame down.
    base_link: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Exit {
    /// Lands exactly `d` frames below the current word.
    Up(u32),
    /// Lands on the first `r` words of the enclosing concrete stack.
    Esc(u32),
    /// Pops back onto the base stack itself (base-level excursions only).
    Floor,
}

type ExcVal = BTreeMap<Exit, Rel>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Task {
    Loop(Word),
    Exc(TWord, Frame),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Val {
    Rel(Rel),
    Exits(ExcVal),
}

impl Val {
    fn bottom_for(task: &Task) -> Val {
        match task {
            Task::Loop(_) => Val::Rel(Rel::default()),
            Task::Exc(..) => Val::Exits(BTreeMap::new()),
        }
    }

    fn as_rel(&self) -> &Rel {
        match self {
            Val::Rel(r) => r,
            _ => unreachable!("loop task holds a relation"),
        }
    }

    fn as_exits(&self) -> &ExcVal {
        match self {
            Val::Exits(e) => e,
            _ => unreachable!("excursion task holds exit relations"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SummaryError {
    #[error("summary fixpoint did not stabilise within {rounds} rounds (caps {caps:?})")]
    NonConvergence { rounds: usize, caps: Caps },
    #[error("summary task budget exceeded ({0} tasks)")]
    TaskBudget(usize),
    #[error("unknown state or symbol `{0}` for this system")]
    Unknown(String),
    #[error("loop summary queried on an empty word")]
    EmptyWord,
}

/// Per-round caps; exceeding one taints the affected values instead of
/// producing wrong answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Caps {
    pub max_word_len: usize,
    pub max_dep: u32,
}

/// Overall computation budget. Caps grow linearly over rounds; values
/// almost always stabilise at small caps, and linear growth keeps the
/// tagged-word key space from exploding when they do not.
#[derive(Debug, Clone, Copy)]
pub struct Budget {
    pub len_slack: usize,
    pub len_step: usize,
    pub dep0: u32,
    pub dep_step: u32,
    pub max_rounds: usize,
    pub max_tasks: usize,
}

impl Default for Budget {
    fn default() -> Budget {
        Budget {
            len_slack: 4,
            len_step: 2,
            dep0: 4,
            dep_step: 2,
            max_rounds: 4,
            max_tasks: 400_000,
        }
    }
}

impl Budget {
    /// Scales the budget, the hook used by the CPK_BUDGET override.
    pub fn scaled(factor: usize) -> Budget {
        let f = factor.max(1);
        Budget {
            len_slack: 4 * f,
            len_step: 2 * f,
            dep0: 4 * f as u32,
            dep_step: 2 * f as u32,
            max_rounds: 3 + f,
            max_tasks: 400_000 * f,
        }
    }
}

/// How a reported value was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    /// No cap was hit anywhere in the dependency cone.
    Exact,
    /// Value unchanged across two cap-doubling rounds.
    Stabilized { rounds: usize },
}

/// Edge relations of a system, grouped by guard symbol and operation shape.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum OpKey {
    Pop1,
    Pop2,
    Clone2,
    Collapse,
    Push(u16, Level),
}

struct Interned {
    states: Vec<String>,
    syms: Vec<String>,
    edges: BTreeMap<(u16, OpKey), Rel>,
    push_shapes: Vec<(u16, Level)>, // distinct (sym, level) ever pushed
    state_count: u16,
}

impl Interned {
    fn new(spec: &CpsSpec) -> Interned {
        let states = spec.states.clone();
        let syms = spec.alphabet.clone();
        let sym_id = |s: &str| syms.iter().position(|x| x == s).expect("validated") as u16;
        let state_id =
            |s: &str| states.iter().position(|x| x == s).expect("validated") as u16;
        let mut edges: BTreeMap<(u16, OpKey), Rel> = BTreeMap::new();
        let mut push_shapes = BTreeSet::new();
        for r in &spec.rules {
            let key = match &r.op {
                StackOp::Pop1 => OpKey::Pop1,
                StackOp::Pop2 => OpKey::Pop2,
                StackOp::Clone2 => OpKey::Clone2,
                StackOp::Collapse => OpKey::Collapse,
                StackOp::Push { sym, level } => {
                    push_shapes.insert((sym_id(sym), *level));
                    OpKey::Push(sym_id(sym), *level)
                }
            };
            edges
                .entry((sym_id(&r.top), key))
                .or_default()
                .0
                .insert((state_id(&r.from), state_id(&r.to)));
        }
        Interned {
            state_count: states.len() as u16,
            states,
            syms,
            edges,
            push_shapes: push_shapes.into_iter().collect(),
        }
    }

    fn edge(&self, top: u16, key: OpKey) -> Rel {
        self.edges.get(&(top, key)).cloned().unwrap_or_default()
    }

    /// Pop1 edges plus collapse edges acting as pop1 on a level-1 top.
    fn pop1_like(&self, top: u16, level: Level) -> Rel {
        let mut r = self.edge(top, OpKey::Pop1);
        if level == Level::L1 {
            r.absorb(&self.edge(top, OpKey::Collapse));
        }
        r
    }
}

struct Tables {
    caps: Caps,
    values: BTreeMap<Task, Val>,
    tainted: BTreeSet<Task>,
    rev_deps: BTreeMap<Task, BTreeSet<Task>>,
    dirty: VecDeque<Task>,
    queued: BTreeSet<Task>,
}

impl Tables {
    fn new(caps: Caps) -> Tables {
        Tables {
            caps,
            values: BTreeMap::new(),
            tainted: BTreeSet::new(),
            rev_deps: BTreeMap::new(),
            dirty: VecDeque::new(),
            queued: BTreeSet::new(),
        }
    }

    fn enqueue(&mut self, t: Task) {
        if self.queued.insert(t.clone()) {
            self.dirty.push_back(t);
        }
    }
}

/// The demand-driven summary solver for one system.
pub struct SummaryEngine {
    interned: Interned,
    budget: Budget,
    rounds: Vec<Tables>,
    seeds: BTreeSet<Task>,
    max_seed_len: usize,
}

impl SummaryEngine {
    pub fn new(spec: &CpsSpec, budget: Budget) -> SummaryEngine {
        SummaryEngine {
            interned: Interned::new(spec),
            budget,
            rounds: Vec::new(),
            seeds: BTreeSet::new(),
            max_seed_len: 1,
        }
    }

    pub fn state_name(&self, q: u16) -> &str {
        &self.interned.states[q as usize]
    }

    pub fn state_id(&self, name: &str) -> Result<u16, SummaryError> {
        self.interned
            .states
            .iter()
            .position(|s| s == name)
            .map(|i| i as u16)
            .ok_or_else(|| SummaryError::Unknown(name.into()))
    }

    pub fn sym_id(&self, name: &str) -> Result<u16, SummaryError> {
        self.interned
            .syms
            .iter()
            .position(|s| s == name)
            .map(|i| i as u16)
            .ok_or_else(|| SummaryError::Unknown(name.into()))
    }

    pub fn state_count(&self) -> u16 {
        self.interned.state_count
    }

    pub fn intern_word(&self, word: &[(String, Level)]) -> Result<Word, SummaryError> {
        word.iter()
            .map(|(s, l)| self.sym_id(s).map(|id| (id, *l)))
            .collect()
    }

    /// Edges guarded by `top` performing a pop of one letter at the given
    /// level (collapse acts as a pop on level-1 tops).
    pub fn pop1_like_edges(&self, top: u16, level: Level) -> Rel {
        self.interned.pop1_like(top, level)
    }

    pub fn push_edges(&self, top: u16, sym: u16, level: Level) -> Rel {
        self.interned.edge(top, OpKey::Push(sym, level))
    }

    pub fn clone_edges(&self, top: u16) -> Rel {
        self.interned.edge(top, OpKey::Clone2)
    }

    pub fn pop2_edges(&self, top: u16) -> Rel {
        self.interned.edge(top, OpKey::Pop2)
    }

    pub fn collapse_edges(&self, top: u16) -> Rel {
        self.interned.edge(top, OpKey::Collapse)
    }

    /// The loop relation for every stack whose projected top word is `word`.
    pub fn loops_of(&mut self, word: &Word) -> Result<(Rel, Convergence), SummaryError> {
        if word.is_empty() {
            return Err(SummaryError::EmptyWord);
        }
        let task = Task::Loop(word.clone());
        let (val, conv) = self.query(task)?;
        Ok((val.as_rel().clone(), conv))
    }

    /// Escape summaries for descents: all `(q, r, q')` such that a run from
    /// `(q, s)` stays strictly above `s` and then lands on the first `r`
    /// words of `s`, for the concrete annotated top word of `s`.
    pub fn escapes(
        &mut self,
        top_word: &[(u16, Level, u32)],
        word_count: u32,
    ) -> Result<(BTreeMap<u32, Rel>, Convergence), SummaryError> {
        let concrete: TWord = top_word
            .iter()
            .map(|(sym, level, link)| TLetter {
                sym: *sym,
                level: *level,
                tag: match level {
                    Level::L1 => None,
                    Level::L2 => Some(Tag::Esc(Some(*link))),
                },
            })
            .collect();
        let top_sym = concrete.last().expect("top word nonempty").sym;
        let mut tasks: Vec<(Rel, Task)> = Vec::new();
        // Clone-led: duplicate the top word one frame up.
        let clone_edges = self.interned.edge(top_sym, OpKey::Clone2);
        if !clone_edges.0.is_empty() {
            tasks.push((
                clone_edges,
                Task::Exc(
                    concrete.clone(),
                    Frame {
                        floor: 0,
                        base_link: None,
                    },
                ),
            ));
        }
        // Push-led: extend the base's own top word.
        let base_link = word_count - 1;
        for (sym, level) in self.interned.push_shapes.clone() {
            let edges = self.interned.edge(top_sym, OpKey::Push(sym, level));
            if edges.0.is_empty() {
                continue;
            }
            let mut word = concrete.clone();
            word.push(TLetter {
                sym,
                level,
                tag: match level {
                    Level::L1 => None,
                    Level::L2 => Some(Tag::Esc(Some(base_link))),
                },
            });
            tasks.push((
                edges,
                Task::Exc(
                    word,
                    Frame {
                        floor: concrete.len() as u16,
                        base_link: Some(base_link),
                    },
                ),
            ));
        }
        let mut out: BTreeMap<u32, Rel> = BTreeMap::new();
        let mut worst = Convergence::Exact;
        for (edges, task) in tasks {
            let (val, conv) = self.query(task)?;
            if let Convergence::Stabilized { rounds } = conv {
                worst = Convergence::Stabilized { rounds };
            }
            for (exit, rel) in val.as_exits() {
                if let Exit::Esc(r) = exit {
                    out.entry(*r).or_default().absorb(&edges.compose(rel));
                }
            }
        }
        Ok((out, worst))
    }

    fn task_len(task: &Task) -> usize {
        match task {
            Task::Loop(w) => w.len(),
            Task::Exc(w, _) => w.len(),
        }
    }

    fn query(&mut self, task: Task) -> Result<(Val, Convergence), SummaryError> {
        let len = Self::task_len(&task);
        if len > self.max_seed_len {
            self.max_seed_len = len;
            // Caps are seed-relative; start over with roomier tables.
            self.rounds.clear();
        }
        self.seeds.insert(task.clone());
        let mut round = 0;
        loop {
            if self.rounds.len() <= round {
                let caps = Caps {
                    max_word_len: self.max_seed_len
                        + self.budget.len_slack
                        + self.budget.len_step * round,
                    max_dep: self.budget.dep0 + self.budget.dep_step * round as u32,
                };
                self.rounds.push(Tables::new(caps));
            }
            self.solve_round(round)?;
            let tables = &self.rounds[round];
            let val = tables.values.get(&task).cloned().unwrap_or_else(|| {
                Val::bottom_for(&task)
            });
            if !tables.tainted.contains(&task) {
                return Ok((val, Convergence::Exact));
            }
            if round >= 1 {
                let prev = self.rounds[round - 1]
                    .values
                    .get(&task)
                    .cloned()
                    .unwrap_or_else(|| Val::bottom_for(&task));
                if prev == val {
                    return Ok((val, Convergence::Stabilized { rounds: round + 1 }));
                }
            }
            round += 1;
            if round >= self.budget.max_rounds {
                return Err(SummaryError::NonConvergence {
                    rounds: round,
                    caps: self.rounds.last().expect("at least one round").caps,
                });
            }
        }
    }

    fn solve_round(&mut self, round: usize) -> Result<(), SummaryError> {
        let seeds: Vec<Task> = self.seeds.iter().cloned().collect();
        for s in seeds {
            if !self.rounds[round].values.contains_key(&s) {
                self.rounds[round]
                    .values
                    .insert(s.clone(), Val::bottom_for(&s));
            }
            self.rounds[round].enqueue(s);
        }
        loop {
            let task = {
                let tables = &mut self.rounds[round];
                match tables.dirty.pop_front() {
                    None => break,
                    Some(t) => {
                        tables.queued.remove(&t);
                        t
                    }
                }
            };
            if self.rounds[round].values.len() > self.budget.max_tasks {
                return Err(SummaryError::TaskBudget(self.budget.max_tasks));
            }
            let mut ctx = EvalCtx {
                reads: Vec::new(),
                suppressed: false,
            };
            let new_val = self.eval(&task, round, &mut ctx);
            let tables = &mut self.rounds[round];
            let mut new_taint = ctx.suppressed;
            for dep in &ctx.reads {
                tables
                    .rev_deps
                    .entry(dep.clone())
                    .or_default()
                    .insert(task.clone());
                if tables.tainted.contains(dep) {
                    new_taint = true;
                }
            }
            let old_val = tables.values.get(&task);
            let val_changed = old_val != Some(&new_val);
            let taint_changed = new_taint && !tables.tainted.contains(&task);
            if val_changed {
                tables.values.insert(task.clone(), new_val);
            }
            if taint_changed {
                tables.tainted.insert(task.clone());
            }
            if val_changed || taint_changed {
                let dependents: Vec<Task> = tables
                    .rev_deps
                    .get(&task)
                    .map(|d| d.iter().cloned().collect())
                    .unwrap_or_default();
                for d in dependents {
                    tables.enqueue(d);
                }
            }
        }
        Ok(())
    }

    /// Reads a dependency's current value, spawning it at bottom if new.
    fn read(&mut self, round: usize, ctx: &mut EvalCtx, dep: Task) -> Val {
        ctx.reads.push(dep.clone());
        let tables = &mut self.rounds[round];
        if let Some(v) = tables.values.get(&dep) {
            return v.clone();
        }
        let bottom = Val::bottom_for(&dep);
        tables.values.insert(dep.clone(), bottom.clone());
        tables.enqueue(dep);
        bottom
    }

    fn eval(&mut self, task: &Task, round: usize, ctx: &mut EvalCtx) -> Val {
        match task.clone() {
            Task::Loop(w) => Val::Rel(self.eval_loop(&w, round, ctx)),
            Task::Exc(w, frame) => Val::Exits(self.eval_exc(&w, frame, round, ctx)),
        }
    }

    fn eval_loop(&mut self, w: &Word, round: usize, ctx: &mut EvalCtx) -> Rel {
        let caps = self.rounds[round].caps;
        let n = self.interned.state_count;
        let (top_sym, top_level) = *w.last().expect("loop words are nonempty");
        let mut acc = Rel::identity(n);

        // Low dip: pop the level-1 top, loop below, push it back.
        if top_level == Level::L1 && w.len() >= 2 {
            let inner_word: Word = w[..w.len() - 1].to_vec();
            let below_sym = inner_word.last().expect("len >= 2").0;
            let pop = self.interned.pop1_like(top_sym, Level::L1);
            let push = self
                .interned
                .edge(below_sym, OpKey::Push(top_sym, Level::L1));
            if !pop.0.is_empty() && !push.0.is_empty() {
                let inner = self.read(round, ctx, Task::Loop(inner_word));
                acc.absorb(&pop.compose(inner.as_rel()).compose(&push));
            }
        }

        // Push excursions: push a letter, loop on the longer word, remove it.
        for (sym, level) in self.interned.push_shapes.clone() {
            let push = self.interned.edge(top_sym, OpKey::Push(sym, level));
            if push.0.is_empty() {
                continue;
            }
            let removal = self.interned.pop1_like(sym, level);
            if removal.0.is_empty() {
                continue;
            }
            if w.len() + 1 > caps.max_word_len {
                ctx.suppressed = true;
                continue;
            }
            let mut longer = w.clone();
            longer.push((sym, level));
            let inner = self.read(round, ctx, Task::Loop(longer));
            acc.absorb(&push.compose(inner.as_rel()).compose(&removal));
        }

        // Clone excursions: duplicate the top word, dispose of the copy.
        let clone_edges = self.interned.edge(top_sym, OpKey::Clone2);
        if !clone_edges.0.is_empty() {
            let tagged: TWord = w
                .iter()
                .map(|(sym, level)| TLetter {
                    sym: *sym,
                    level: *level,
                    tag: match level {
                        Level::L1 => None,
                        Level::L2 => Some(Tag::Esc(None)),
                    },
                })
                .collect();
            let sub = self.read(
                round,
                ctx,
                Task::Exc(
                    tagged,
                    Frame {
                        floor: 0,
                        base_link: None,
                    },
                ),
            );
            if let Some(up1) = sub.as_exits().get(&Exit::Up(1)) {
                acc.absorb(&clone_edges.compose(up1));
            }
        }

        acc.closure(n)
    }

    fn eval_exc(&mut self, w: &TWord, frame: Frame, round: usize, ctx: &mut EvalCtx) -> ExcVal {
        let caps = self.rounds[round].caps;
        let top = *w.last().expect("excursion words are nonempty");
        let mut acc: ExcVal = BTreeMap::new();
        let add = |acc: &mut ExcVal, exit: Exit, rel: Rel| {
            if !rel.0.is_empty() {
                acc.entry(exit).or_default().absorb(&rel);
            }
        };

        // Removing the whole top word.
        let pop2 = self.interned.edge(top.sym, OpKey::Pop2);
        if !pop2.0.is_empty() {
            match frame.base_link {
                None => add(&mut acc, Exit::Up(1), pop2),
                Some(r) if r >= 1 => add(&mut acc, Exit::Esc(r), pop2),
                Some(_) => {} // removing the only word is undefined
            }
        }

        // Collapsing the top letter.
        if top.level == Level::L2 {
            let col = self.interned.edge(top.sym, OpKey::Collapse);
            if !col.0.is_empty() {
                match top.tag.expect("level-2 letters are tagged") {
                    Tag::Dep(d) => add(&mut acc, Exit::Up(d), col),
                    Tag::Esc(Some(r)) if r >= 1 => add(&mut acc, Exit::Esc(r), col),
                    Tag::Esc(_) => {}
                }
            }
        }

        // Popping one letter.
        let pop1 = self.interned.pop1_like(top.sym, top.level);
        if !pop1.0.is_empty() {
            if w.len() >= frame.floor as usize + 2 {
                let shorter: TWord = w[..w.len() - 1].to_vec();
                let inner = self.read(round, ctx, Task::Exc(shorter, frame));
                for (exit, rel) in inner.as_exits() {
                    add(&mut acc, *exit, pop1.compose(rel));
                }
            } else if w.len() == frame.floor as usize + 1 && frame.floor >= 1 {
                add(&mut acc, Exit::Floor, pop1);
            }
        }

        // Pushing a letter.
        for (sym, level) in self.interned.push_shapes.clone() {
            let push = self.interned.edge(top.sym, OpKey::Push(sym, level));
            if push.0.is_empty() {
                continue;
            }
            if w.len() + 1 > caps.max_word_len {
                ctx.suppressed = true;
                continue;
            }
            let tag = match level {
                Level::L1 => None,
                Level::L2 => Some(match frame.base_link {
                    Some(r) => Tag::Esc(Some(r)),
                    None => Tag::Dep(1),
                }),
            };
            let mut longer = w.clone();
            longer.push(TLetter { sym, level, tag });
            let inner = self.read(round, ctx, Task::Exc(longer, frame));
            for (exit, rel) in inner.as_exits() {
                add(&mut acc, *exit, push.compose(rel));
            }
        }

        // Cloning the top word one frame up; tags in the copy shift deeper.
        let clone_edges = self.interned.edge(top.sym, OpKey::Clone2);
        if !clone_edges.0.is_empty() {
            let mut shifted = Vec::with_capacity(w.len());
            let mut ok = true;
            for l in w {
                let tag = match l.tag {
                    Some(Tag::Dep(d)) => {
                        if d + 1 > caps.max_dep {
                            ctx.suppressed = true;
                            ok = false;
                            break;
                        }
                        Some(Tag::Dep(d + 1))
                    }
                    other => other,
                };
                shifted.push(TLetter { tag, ..*l });
            }
            if ok {
                let sub = self.read(
                    round,
                    ctx,
                    Task::Exc(
                        shifted,
                        Frame {
                            floor: 0,
                            base_link: None,
                        },
                    ),
                );
                let own = self.read(round, ctx, Task::Exc(w.clone(), frame));
                for (exit, rel) in sub.as_exits() {
                    match exit {
                        Exit::Up(1) => {
                            // Back on this frame; continue with our own exits.
                            let resumed = clone_edges.compose(rel);
                            for (e2, r2) in own.as_exits() {
                                add(&mut acc, *e2, resumed.compose(r2));
                            }
                        }
                        Exit::Up(d) => {
                            add(&mut acc, Exit::Up(d - 1), clone_edges.compose(rel))
                        }
                        Exit::Esc(r) => {
                            add(&mut acc, Exit::Esc(*r), clone_edges.compose(rel))
                        }
                        Exit::Floor => unreachable!("subframes have no floor"),
                    }
                }
            }
        }

        // Loops of the current stack may precede any exit.
        let pi: Word = w.iter().map(|l| (l.sym, l.level)).collect();
        let lp = self.read(round, ctx, Task::Loop(pi));
        let lp = lp.as_rel().clone();
        let snapshot: Vec<(Exit, Rel)> = acc.iter().map(|(e, r)| (*e, r.clone())).collect();
        for (exit, rel) in snapshot {
            add(&mut acc, exit, lp.compose(&rel));
        }
        // Also via exits already recorded for this task (chaotic iteration
        // converges on the least fixpoint).
        let own = self.read(round, ctx, Task::Exc(w.clone(), frame));
        for (exit, rel) in own.as_exits() {
            add(&mut acc, *exit, lp.compose(rel));
        }

        acc
    }
}

struct EvalCtx {
    reads: Vec<Task>,
    suppressed: bool,
}

/// A deterministic word automaton computing loop relations from projected
/// top words, built as an empirical quotient of the memoized summaries up
/// to a length bound.
#[derive(Debug, Clone)]
pub struct LoopsAutomaton {
    /// Letters the automaton can step on (non-bottom symbols, both levels).
    pub letters: Vec<(u16, Level)>,
    /// Class of the one-letter bottom word.
    pub init_class: usize,
    /// Loop relation attached to each class.
    pub values: Vec<Rel>,
    pub step_map: BTreeMap<(usize, (u16, Level)), usize>,
    /// Whether the quotient was observed stable within the bound.
    pub stabilized: bool,
    pub bound: usize,
}

impl LoopsAutomaton {
    pub fn class_count(&self) -> usize {
        self.values.len()
    }

    pub fn step(&self, class: usize, letter: (u16, Level)) -> Option<usize> {
        self.step_map.get(&(class, letter)).copied()
    }

    /// Runs the automaton over a full word (starting with the bottom).
    pub fn class_of_word(&self, word: &Word) -> Option<usize> {
        let mut class = self.init_class;
        for letter in &word[1..] {
            class = self.step(class, *letter)?;
        }
        Some(class)
    }

    pub fn value(&self, class: usize) -> &Rel {
        &self.values[class]
    }
}

/// Builds the quotient automaton by enumerating all top words up to
/// `bound` letters, computing their loop relations, and merging words
/// whose observed futures agree. Stabilisation means the construction was
/// conflict-free at this bound and at the previous one with the same
/// classes, so extrapolation beyond the bound is trusted but flagged.
pub fn build_loops_automaton(
    engine: &mut SummaryEngine,
    bottom_sym: u16,
    letters: &[(u16, Level)],
    bound: usize,
) -> Result<LoopsAutomaton, SummaryError> {
    assert!(bound >= 2);
    let (auto_prev, _) = build_at_bound(engine, bottom_sym, letters, bound - 1)?;
    let (mut auto, consistent) = build_at_bound(engine, bottom_sym, letters, bound)?;
    auto.stabilized = consistent
        && auto_prev.stabilized
        && auto_prev.class_count() == auto.class_count();
    Ok(auto)
}

fn build_at_bound(
    engine: &mut SummaryEngine,
    bottom_sym: u16,
    letters: &[(u16, Level)],
    bound: usize,
) -> Result<(LoopsAutomaton, bool), SummaryError> {
    // All words in shortest-then-lex order.
    let root: Word = vec![(bottom_sym, Level::L1)];
    let mut words: Vec<Word> = vec![root.clone()];
    let mut frontier = vec![root.clone()];
    for _ in 1..bound {
        let mut next = Vec::new();
        for w in &frontier {
            for l in letters {
                let mut w2 = w.clone();
                w2.push(*l);
                next.push(w2.clone());
                words.push(w2);
            }
        }
        frontier = next;
    }
    let mut value_of: BTreeMap<Word, Rel> = BTreeMap::new();
    for w in &words {
        let (rel, _) = engine.loops_of(w)?;
        value_of.insert(w.clone(), rel);
    }
    // Two words are observationally equal when their values agree on every
    // common extension that fits under the bound.
    let obs_equiv = |a: &Word, b: &Word| -> bool {
        let depth = bound - a.len().max(b.len());
        let mut suffixes: Vec<Word> = vec![Vec::new()];
        let mut layer: Vec<Word> = vec![Vec::new()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for z in &layer {
                for l in letters {
                    let mut z2 = z.clone();
                    z2.push(*l);
                    next.push(z2);
                }
            }
            suffixes.extend(next.iter().cloned());
            layer = next;
        }
        suffixes.iter().all(|z| {
            let mut wa = a.clone();
            wa.extend(z.iter().copied());
            let mut wb = b.clone();
            wb.extend(z.iter().copied());
            value_of[&wa] == value_of[&wb]
        })
    };
    // Shortest-first state discovery: merge into the first compatible class.
    let mut reps: Vec<Word> = Vec::new();
    let mut class_of: BTreeMap<Word, usize> = BTreeMap::new();
    for w in &words {
        let found = reps.iter().position(|r| obs_equiv(w, r));
        let c = match found {
            Some(c) => c,
            None => {
                reps.push(w.clone());
                reps.len() - 1
            }
        };
        class_of.insert(w.clone(), c);
    }
    // Steps from observed one-letter extensions; conflicts mean the merge
    // was too eager for this bound.
    let mut step_map: BTreeMap<(usize, (u16, Level)), usize> = BTreeMap::new();
    let mut consistent = true;
    for w in &words {
        if w.len() >= bound {
            continue;
        }
        for l in letters {
            let mut w2 = w.clone();
            w2.push(*l);
            let target = class_of[&w2];
            match step_map.entry((class_of[w], *l)) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(target);
                }
                std::collections::btree_map::Entry::Occupied(e) => {
                    if *e.get() != target {
                        consistent = false;
                    }
                }
            }
        }
    }
    // Totality: every class must step somewhere on every letter.
    for c in 0..reps.len() {
        for l in letters {
            if !step_map.contains_key(&(c, *l)) {
                consistent = false;
            }
        }
    }
    let auto = LoopsAutomaton {
        letters: letters.to_vec(),
        init_class: class_of[&vec![(bottom_sym, Level::L1)]],
        values: reps.iter().map(|r| value_of[r].clone()).collect(),
        step_map,
        stabilized: consistent,
        bound,
    };
    Ok((auto, consistent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::Stack2;
    use crate::system::{loops_oracle, CpsSpec, ExplorationBounds};

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

    fn engine() -> SummaryEngine {
        SummaryEngine::new(&CpsSpec::parse(SYS1).unwrap(), Budget::default())
    }

    fn rel_names(e: &SummaryEngine, r: &Rel) -> BTreeSet<(String, String)> {
        r.0.iter()
            .map(|(a, b)| {
                (
                    e.state_name(*a).to_string(),
                    e.state_name(*b).to_string(),
                )
            })
            .collect()
    }

    #[test]
    fn loops_of_bottom_word() {
        let mut e = engine();
        let w = vec![(0u16, Level::L1)];
        let (rel, _) = e.loops_of(&w).unwrap();
        let names = rel_names(&e, &rel);
        let expected: BTreeSet<(String, String)> = [
            ("0", "0"),
            ("1", "1"),
            ("2", "2"),
            ("1", "2"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        assert_eq!(names, expected);
    }

    #[test]
    fn loops_of_pushed_word_restricted_to_state2_is_identity() {
        let mut e = engine();
        let a = e.sym_id("a").unwrap();
        let w = vec![(0u16, Level::L1), (a, Level::L2)];
        let (rel, _) = e.loops_of(&w).unwrap();
        let from2: Vec<_> = rel.0.iter().filter(|(x, _)| *x == 2).collect();
        assert_eq!(from2, vec![&(2, 2)]);
        // The clone→push→collapse cycle is present from state 0.
        assert!(rel.contains(0, 0));
        assert!(rel.contains(1, 2));
    }

    #[test]
    fn loops_match_oracle_on_short_words() {
        let spec = CpsSpec::parse(SYS1).unwrap();
        let mut e = engine();
        let bounds = ExplorationBounds::new(6, 6, 10, 20_000);
        // Stacks with distinct short top words, built by hand.
        let stacks = [
            Stack2::initial("⊥"),
            Stack2::parse("⊥ : ⊥").unwrap(),
            Stack2::parse("⊥ a^2@0").unwrap(),
            Stack2::parse("⊥ : ⊥ a^2@1").unwrap(),
            Stack2::parse("⊥ a^2@0 a^2@0").unwrap(),
            Stack2::parse("⊥ : ⊥ a^2@1 a^2@1").unwrap(),
            Stack2::parse("⊥ : ⊥ : ⊥ a^2@2").unwrap(),
        ];
        for s in &stacks {
            let oracle = loops_oracle(&spec, s, &bounds);
            let word: Word = s
                .top_word()
                .iter()
                .map(|l| (e.sym_id(&l.sym).unwrap(), l.level))
                .collect();
            let (rel, _) = e.loops_of(&word).unwrap();
            let summary = rel_names(&e, &rel);
            assert_eq!(summary, oracle, "mismatch for stack {s}");
        }
    }

    #[test]
    fn escapes_find_deep_collapses() {
        let mut e = engine();
        // From ⊥:⊥a (top letter linked to the first word), an excursion can
        // clone, push, pop, and collapse through the copied link onto ⊥.
        let a = e.sym_id("a").unwrap();
        let bot = e.sym_id("⊥").unwrap();
        let top: Vec<(u16, Level, u32)> =
            vec![(bot, Level::L1, 0), (a, Level::L2, 1)];
        let (esc, _) = e.escapes(&top, 2).unwrap();
        let to_first = esc.get(&1).expect("escape to the first word");
        // cl: 0→1, then a2: 1→2, then co fires on the cloned link: 2→0.
        assert!(to_first.contains(0, 0));
        // Push-led: a2 pushes (a,2) with link 1 at the base, co exits.
        assert!(to_first.contains(1, 0));
    }

    #[test]
    fn empty_system_has_identity_loops_everywhere() {
        let spec = CpsSpec::parse(
            r#"{"alphabet": ["⊥","a"], "bottom": "⊥", "states": ["0"],
                 "initial": "0", "transitions": []}"#,
        )
        .unwrap();
        let mut e = SummaryEngine::new(&spec, Budget::default());
        let auto = build_loops_automaton(
            &mut e,
            0,
            &[(1, Level::L1), (1, Level::L2)],
            4,
        )
        .unwrap();
        assert_eq!(auto.class_count(), 1);
        assert!(auto.stabilized);
        assert_eq!(*auto.value(auto.init_class), Rel::identity(1));
    }

    #[test]
    fn quotient_automaton_agrees_with_summaries() {
        let mut e = engine();
        let a = e.sym_id("a").unwrap();
        let letters = vec![(a, Level::L1), (a, Level::L2)];
        let auto = build_loops_automaton(&mut e, 0, &letters, 5).unwrap();
        assert!(auto.stabilized);
        // Automaton value equals the summary on every word within bound,
        // and extending by a letter that lands in a known class keeps the
        // value consistent beyond it.
        let mut words: Vec<Word> = vec![vec![(0, Level::L1)]];
        for _ in 0..6 {
            let mut next = Vec::new();
            for w in &words {
                for l in &letters {
                    let mut w2 = w.clone();
                    w2.push(*l);
                    next.push(w2);
                }
            }
            words.extend(next.clone());
            if words.iter().any(|w| w.len() > 6) {
                break;
            }
        }
        for w in words.iter().filter(|w| w.len() <= 6) {
            let class = auto.class_of_word(w).expect("total automaton");
            let (rel, _) = e.loops_of(w).unwrap();
            assert_eq!(*auto.value(class), rel, "word {w:?}");
        }
    }
}
