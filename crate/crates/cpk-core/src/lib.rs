//! Level-2 collapsible pushdown systems, end to end: stack semantics,
//! configuration-graph exploration, the tree encoding of configurations,
//! a finite tree automata algebra, loop/descent summaries with reachability
//! certificates, and first-order queries over configuration graphs.

pub mod codec;
pub mod tnfa;
pub mod treeops;
pub mod reach;
pub mod stack;
pub mod summaries;
pub mod system;
