//! Level-2 collapsible stacks: annotated 2-words, the six stack operations,
//! the substack order, and milestone enumeration.
//!
//! A stack is a nonempty list of nonempty words over `Σ × {1,2} × ℕ`. The
//! number pair on each letter is its collapse annotation: the level (1 or 2)
//! and the link. Level-1 links always point at the preceding letter of the
//! same word; level-2 links name a prefix of the word list.

use std::fmt;
use thiserror::Error;

/// Collapse level of a stack letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    L1,
    L2,
}

impl Level {
    pub fn as_u8(self) -> u8 {
        match self {
            Level::L1 => 1,
            Level::L2 => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Level> {
        match v {
            1 => Some(Level::L1),
            2 => Some(Level::L2),
            _ => None,
        }
    }
}

/// One annotated stack letter `(sym, level, link)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Letter {
    pub sym: String,
    pub level: Level,
    pub link: usize,
}

impl Letter {
    pub fn new(sym: impl Into<String>, level: Level, link: usize) -> Letter {
        Letter {
            sym: sym.into(),
            level,
            link,
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}^{}@{}", self.sym, self.level.as_u8(), self.link)
    }
}

/// The six level-2 stack operations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StackOp {
    Pop1,
    Pop2,
    Clone2,
    Push { sym: String, level: Level },
    Collapse,
}

impl fmt::Display for StackOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StackOp::Pop1 => write!(f, "pop1"),
            StackOp::Pop2 => write!(f, "pop2"),
            StackOp::Clone2 => write!(f, "clone2"),
            StackOp::Push { sym, level } => write!(f, "push({},{})", sym, level.as_u8()),
            StackOp::Collapse => write!(f, "collapse"),
        }
    }
}

/// Violations reported when a 2-word fails the stack well-formedness laws.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StackError {
    #[error("stack must contain at least one word")]
    EmptyStack,
    #[error("word {0} is empty")]
    EmptyWord(usize),
    #[error("word {word} must begin with the bottom letter {bottom}^1@0")]
    BadBottom { word: usize, bottom: String },
    #[error("bottom symbol {bottom} occurs above position 1 in word {word}")]
    InnerBottom { word: usize, bottom: String },
    #[error("level-1 letter at word {word} position {pos} has link {link}, expected {expected}")]
    BadLevel1Link {
        word: usize,
        pos: usize,
        link: usize,
        expected: usize,
    },
    #[error("level-2 letter in word {word} has link {link} > {max}")]
    BadLevel2Link { word: usize, link: usize, max: usize },
    #[error("cannot parse stack text: {0}")]
    Parse(String),
}

/// An immutable level-2 collapsible stack.
///
/// All operations return fresh values; an operation that would leave the
/// `(Σ⁺)⁺` shape is reported as undefined (`None`), which is a normal
/// outcome, not an error.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stack2 {
    words: Vec<Vec<Letter>>,
}

impl Stack2 {
    /// The one-letter initial stack `[ (bottom,1,0) ]`.
    pub fn initial(bottom: impl Into<String>) -> Stack2 {
        Stack2 {
            words: vec![vec![Letter::new(bottom, Level::L1, 0)]],
        }
    }

    /// Builds a stack from raw words, checking every well-formedness law.
    pub fn try_new(words: Vec<Vec<Letter>>) -> Result<Stack2, StackError> {
        let s = Stack2 { words };
        s.validate()?;
        Ok(s)
    }

    /// Re-derives all four stack invariants from scratch.
    pub fn validate(&self) -> Result<(), StackError> {
        if self.words.is_empty() {
            return Err(StackError::EmptyStack);
        }
        let bottom = match self.words[0].first() {
            None => return Err(StackError::EmptyWord(1)),
            Some(l) => l.sym.clone(),
        };
        for (j, word) in self.words.iter().enumerate() {
            if word.is_empty() {
                return Err(StackError::EmptyWord(j + 1));
            }
            let first = &word[0];
            if first.sym != bottom || first.level != Level::L1 || first.link != 0 {
                return Err(StackError::BadBottom {
                    word: j + 1,
                    bottom: bottom.clone(),
                });
            }
            for (i, letter) in word.iter().enumerate() {
                if i > 0 && letter.sym == bottom {
                    return Err(StackError::InnerBottom {
                        word: j + 1,
                        bottom: bottom.clone(),
                    });
                }
                match letter.level {
                    Level::L1 => {
                        if letter.link != i {
                            // 1-based position i+1 must carry link i.
                            return Err(StackError::BadLevel1Link {
                                word: j + 1,
                                pos: i + 1,
                                link: letter.link,
                                expected: i,
                            });
                        }
                    }
                    Level::L2 => {
                        if letter.link > j {
                            return Err(StackError::BadLevel2Link {
                                word: j + 1,
                                link: letter.link,
                                max: j,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn words(&self) -> &[Vec<Letter>] {
        &self.words
    }

    /// Number of words.
    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    /// Total letter count, a convenient size measure.
    pub fn letter_count(&self) -> usize {
        self.words.iter().map(|w| w.len()).sum()
    }

    pub fn bottom_sym(&self) -> &str {
        &self.words[0][0].sym
    }

    /// The topmost word.
    pub fn top_word(&self) -> &[Letter] {
        self.words.last().expect("stack is nonempty")
    }

    /// The topmost letter.
    pub fn top_letter(&self) -> &Letter {
        self.top_word().last().expect("word is nonempty")
    }

    /// Topmost word, symbol, level and link in one shot.
    pub fn inspect(&self) -> (&[Letter], &str, Level, usize) {
        let top = self.top_letter();
        (self.top_word(), &top.sym, top.level, top.link)
    }

    /// Applies one operation; `None` means the operation is undefined here.
    pub fn apply(&self, op: &StackOp) -> Option<Stack2> {
        let n = self.words.len();
        let m = self.top_word().len();
        let result = match op {
            StackOp::Pop1 => {
                if m < 2 {
                    return None;
                }
                let mut words = self.words.clone();
                words.last_mut().unwrap().pop();
                Stack2 { words }
            }
            StackOp::Pop2 => {
                if n < 2 {
                    return None;
                }
                let mut words = self.words.clone();
                words.pop();
                Stack2 { words }
            }
            StackOp::Clone2 => {
                let mut words = self.words.clone();
                words.push(self.top_word().to_vec());
                Stack2 { words }
            }
            StackOp::Push { sym, level } => {
                if sym == self.bottom_sym() {
                    return None;
                }
                let link = match level {
                    Level::L2 => n - 1,
                    Level::L1 => m,
                };
                let mut words = self.words.clone();
                words
                    .last_mut()
                    .unwrap()
                    .push(Letter::new(sym.clone(), *level, link));
                Stack2 { words }
            }
            StackOp::Collapse => {
                let top = self.top_letter();
                match top.level {
                    Level::L1 => return self.apply(&StackOp::Pop1),
                    Level::L2 => {
                        let r = top.link;
                        if r == 0 {
                            return None;
                        }
                        Stack2 {
                            words: self.words[..r].to_vec(),
                        }
                    }
                }
            }
        };
        debug_assert!(result.validate().is_ok(), "operation broke an invariant");
        Some(result)
    }

    /// `self ≤ other`: some number of pop2 then pop1 steps turns `other`
    /// into `self`. A partial order; substacks of a fixed stack form a chain.
    pub fn is_substack_of(&self, other: &Stack2) -> bool {
        let k = self.words.len();
        if k > other.words.len() {
            return false;
        }
        for j in 0..k - 1 {
            if self.words[j] != other.words[j] {
                return false;
            }
        }
        let last = &self.words[k - 1];
        let target = &other.words[k - 1];
        last.len() <= target.len() && *last == target[..last.len()]
    }

    /// The prefix consisting of the first `r` words (1 ≤ r ≤ word count).
    pub fn word_prefix(&self, r: usize) -> Stack2 {
        assert!(r >= 1 && r <= self.words.len());
        Stack2 {
            words: self.words[..r].to_vec(),
        }
    }

    /// All milestones in increasing substack order.
    ///
    /// A milestone keeps some words intact and truncates the next word no
    /// deeper than its shared prefix with the word below; these are exactly
    /// the substacks every run building this stack has to pass through.
    pub fn milestones(&self) -> Vec<Stack2> {
        let mut out = Vec::new();
        for i in 0..self.words.len() {
            let next = &self.words[i];
            let lo = if i == 0 {
                1
            } else {
                common_prefix_len(&self.words[i - 1], next).max(1)
            };
            for len in lo..=next.len() {
                let mut words: Vec<Vec<Letter>> = self.words[..i].to_vec();
                words.push(next[..len].to_vec());
                out.push(Stack2 { words });
            }
        }
        out
    }

    /// Canonical text: letters as `sym^level@link`, words joined by " : ".
    pub fn to_text(&self) -> String {
        self.words
            .iter()
            .map(|w| {
                w.iter()
                    .map(|l| l.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect::<Vec<_>>()
            .join(" : ")
    }

    /// Parses the canonical text form. A bare symbol token is shorthand for
    /// the bottom letter `sym^1@0`; `sym^1` is allowed because level-1 links
    /// are forced by position; level-2 letters must spell their link.
    pub fn parse(text: &str) -> Result<Stack2, StackError> {
        let mut words = Vec::new();
        for word_text in text.split(':') {
            let mut word = Vec::new();
            for tok in word_text.split_whitespace() {
                let (sym, rest) = match tok.split_once('^') {
                    None => (tok.to_string(), None),
                    Some((s, r)) => (s.to_string(), Some(r)),
                };
                if sym.is_empty() {
                    return Err(StackError::Parse(format!("empty symbol in `{tok}`")));
                }
                let letter = match rest {
                    None => Letter::new(sym, Level::L1, 0),
                    Some(r) => {
                        let (lvl_text, link_text) = match r.split_once('@') {
                            None => (r, None),
                            Some((l, k)) => (l, Some(k)),
                        };
                        let lvl = lvl_text
                            .parse::<u8>()
                            .ok()
                            .and_then(Level::from_u8)
                            .ok_or_else(|| {
                                StackError::Parse(format!("bad level in `{tok}`"))
                            })?;
                        let link = match (lvl, link_text) {
                            (Level::L1, None) => word.len(),
                            (Level::L2, None) => {
                                return Err(StackError::Parse(format!(
                                    "level-2 letter `{tok}` needs an explicit @link"
                                )))
                            }
                            (_, Some(k)) => k.parse::<usize>().map_err(|_| {
                                StackError::Parse(format!("bad link in `{tok}`"))
                            })?,
                        };
                        Letter::new(sym, lvl, link)
                    }
                };
                word.push(letter);
            }
            words.push(word);
        }
        Stack2::try_new(words)
    }
}

impl fmt::Display for Stack2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Length of the greatest common prefix of two letter sequences.
pub fn common_prefix_len(a: &[Letter], b: &[Letter]) -> usize {
    a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count()
}

/// A control state paired with a stack.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Config {
    pub state: String,
    pub stack: Stack2,
}

impl Config {
    pub fn new(state: impl Into<String>, stack: Stack2) -> Config {
        Config {
            state: state.into(),
            stack,
        }
    }

    /// Canonical `state|stack` text.
    pub fn to_text(&self) -> String {
        format!("{}|{}", self.state, self.stack.to_text())
    }

    pub fn parse(text: &str) -> Result<Config, StackError> {
        let (state, stack_text) = text
            .split_once('|')
            .ok_or_else(|| StackError::Parse("expected `state|stack`".into()))?;
        if state.trim().is_empty() {
            return Err(StackError::Parse("empty state name".into()));
        }
        Ok(Config {
            state: state.trim().to_string(),
            stack: Stack2::parse(stack_text)?,
        })
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bot() -> Stack2 {
        Stack2::initial("⊥")
    }

    fn push(s: &Stack2, sym: &str, level: Level) -> Stack2 {
        s.apply(&StackOp::Push {
            sym: sym.into(),
            level,
        })
        .unwrap()
    }

    #[test]
    fn push_level2_links_to_word_below() {
        let s = push(&bot(), "a", Level::L2);
        assert_eq!(s.to_text(), "⊥^1@0 a^2@0");
    }

    #[test]
    fn clone_push_clone_collapse_returns_to_initial() {
        let s1 = bot().apply(&StackOp::Clone2).unwrap();
        assert_eq!(s1.to_text(), "⊥^1@0 : ⊥^1@0");
        let s2 = push(&s1, "a", Level::L2);
        assert_eq!(s2.top_letter().link, 1);
        let s3 = s2.apply(&StackOp::Clone2).unwrap();
        assert_eq!(s3.word_count(), 3);
        let s4 = s3.apply(&StackOp::Collapse).unwrap();
        assert_eq!(s4, bot());
    }

    #[test]
    fn pops_are_undefined_on_initial_stack() {
        assert_eq!(bot().apply(&StackOp::Pop1), None);
        assert_eq!(bot().apply(&StackOp::Pop2), None);
        assert_eq!(bot().apply(&StackOp::Collapse), None);
    }

    #[test]
    fn collapse_keeps_linked_word_prefix() {
        // ⊥ : ⊥a₁ : ⊥a₁a₂ with top link 2 collapses to the first two words.
        let s = push(&bot().apply(&StackOp::Clone2).unwrap(), "a", Level::L2);
        let t = push(&s.apply(&StackOp::Clone2).unwrap(), "a", Level::L2);
        assert_eq!(t.top_letter().link, 2);
        let c = t.apply(&StackOp::Collapse).unwrap();
        assert_eq!(c.to_text(), "⊥^1@0 : ⊥^1@0 a^2@1");
    }

    #[test]
    fn push_bottom_is_undefined() {
        assert_eq!(
            bot().apply(&StackOp::Push {
                sym: "⊥".into(),
                level: Level::L2
            }),
            None
        );
    }

    #[test]
    fn inspect_reads_top_annotations() {
        let b = bot();
        let (w, sym, lvl, lnk) = b.inspect();
        assert_eq!((w.len(), sym, lvl, lnk), (1, "⊥", Level::L1, 0));

        let s = push(&bot().apply(&StackOp::Clone2).unwrap(), "a", Level::L2);
        let (_, sym, lvl, lnk) = s.inspect();
        assert_eq!((sym, lvl, lnk), ("a", Level::L2, 1));

        let s = push(&bot(), "a", Level::L1);
        let (_, _, lvl, lnk) = s.inspect();
        assert_eq!((lvl, lnk), (Level::L1, 1));
    }

    #[test]
    fn substack_examples() {
        let s = push(&bot().apply(&StackOp::Clone2).unwrap(), "a", Level::L2);
        let t = push(&s.apply(&StackOp::Clone2).unwrap(), "a", Level::L2);
        assert!(bot().is_substack_of(&s));
        assert!(bot().is_substack_of(&t));
        assert!(s.is_substack_of(&t));
        assert!(!t.is_substack_of(&s));
        let b = push(&bot().apply(&StackOp::Clone2).unwrap(), "b", Level::L2);
        assert!(!s.is_substack_of(&b));
        assert!(!b.is_substack_of(&s));
    }

    #[test]
    fn milestones_of_initial_and_two_word_stacks() {
        assert_eq!(bot().milestones(), vec![bot()]);

        let s = push(&bot().apply(&StackOp::Clone2).unwrap(), "a", Level::L2);
        let ms: Vec<String> = s.milestones().iter().map(|m| m.to_text()).collect();
        assert_eq!(
            ms,
            vec!["⊥^1@0", "⊥^1@0 : ⊥^1@0", "⊥^1@0 : ⊥^1@0 a^2@1"]
        );
    }

    #[test]
    fn milestones_form_a_chain_containing_endpoints() {
        let s = fig3_stack();
        let ms = s.milestones();
        assert_eq!(ms.len(), 12);
        assert_eq!(ms[0], Stack2::initial("⊥"));
        assert_eq!(*ms.last().unwrap(), s);
        for w in ms.windows(2) {
            assert!(w[0].is_substack_of(&w[1]));
            assert_ne!(w[0], w[1]);
        }
    }

    /// The five-word stack ⊥ab : ⊥abc : ⊥a′c′ : ⊥a′de : ⊥a′ with a′=(a,2,2).
    pub(crate) fn fig3_stack() -> Stack2 {
        Stack2::parse(
            "⊥ a^2@0 b^2@0 : ⊥ a^2@0 b^2@0 c^2@1 : ⊥ a^2@2 c^1 : ⊥ a^2@2 d^2@3 e^1 : ⊥ a^2@2",
        )
        .unwrap()
    }

    #[test]
    fn fig3_stack_is_well_formed() {
        let s = fig3_stack();
        assert_eq!(s.word_count(), 5);
        assert_eq!(s.words()[3][3], Letter::new("e", Level::L1, 3));
    }

    #[test]
    fn text_roundtrip() {
        let s = fig3_stack();
        assert_eq!(Stack2::parse(&s.to_text()).unwrap(), s);
        let c = Config::new("q7", s);
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn validator_rejects_broken_links() {
        // Level-1 letter with wrong link.
        assert!(Stack2::parse("⊥ a^1@2").is_err());
        // Level-2 link exceeding the word index.
        let words = vec![vec![
            Letter::new("⊥", Level::L1, 0),
            Letter::new("a", Level::L2, 1),
        ]];
        assert!(matches!(
            Stack2::try_new(words),
            Err(StackError::BadLevel2Link { .. })
        ));
        // Second word not starting with bottom.
        assert!(Stack2::parse("⊥ : a^2@0").is_err());
        // Inner bottom.
        let words = vec![vec![
            Letter::new("⊥", Level::L1, 0),
            Letter::new("⊥", Level::L2, 0),
        ]];
        assert!(matches!(
            Stack2::try_new(words),
            Err(StackError::InnerBottom { .. })
        ));
    }

    #[test]
    fn clone_then_pop2_is_identity_and_push_then_pop1_is_identity() {
        let stacks = sample_stacks();
        for s in &stacks {
            let c = s.apply(&StackOp::Clone2).unwrap();
            assert_eq!(c.apply(&StackOp::Pop2).unwrap(), *s);
            for level in [Level::L1, Level::L2] {
                let p = s
                    .apply(&StackOp::Push {
                        sym: "a".into(),
                        level,
                    })
                    .unwrap();
                assert_eq!(p.apply(&StackOp::Pop1).unwrap(), *s);
            }
        }
    }

    #[test]
    fn collapse_equals_pop1_on_level1_top() {
        for s in sample_stacks() {
            if s.top_letter().level == Level::L1 {
                assert_eq!(s.apply(&StackOp::Collapse), s.apply(&StackOp::Pop1));
            }
        }
    }

    #[test]
    fn collapse_after_level2_push_drops_to_snapshot() {
        for s in sample_stacks() {
            if s.word_count() < 2 {
                continue;
            }
            let p = push(&s, "z", Level::L2);
            let collapsed = p.apply(&StackOp::Collapse).unwrap();
            assert_eq!(collapsed, s.word_prefix(s.word_count() - 1));
        }
    }

    /// A small deterministic pool of well-formed stacks for law checks.
    pub(crate) fn sample_stacks() -> Vec<Stack2> {
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
            StackOp::Collapse,
            StackOp::Pop2,
        ];
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
        pool.push(fig3_stack());
        pool
    }
}
