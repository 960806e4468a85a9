//! Causal DAGs: construction, a line-oriented text format, and the
//! identification queries the estimators rely on (descendants,
//! d-separation, back-door validity and testable implications).
//!
//! A [`Dag`] is immutable once built. Construction rejects duplicate
//! nodes or edges, self-loops, edges naming undeclared nodes and cycles,
//! so every query can assume a well-formed acyclic graph.

mod parse;

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_dag, render};

/// Reconstructed 11-node Framingham structure shipped with the crate.
///
/// Only the relations described in prose are authoritative; the remaining
/// edges (e.g. the exact parents of GLUCOSE) are a reconstruction.
pub const FRAMINGHAM_DAG: &str = include_str!("../../assets/framingham.dag");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid node name `{0}`")]
    InvalidName(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("duplicate edge `{0} -> {1}`")]
    DuplicateEdge(String, String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("edge `{from} -> {to}` references undeclared node `{node}`")]
    UndeclaredNode {
        from: String,
        to: String,
        node: String,
    },
    #[error("graph contains a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

pub(crate) fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A directed acyclic graph over named nodes.
///
/// Equality ignores declaration order of nodes and edges.
#[derive(Debug, Clone)]
pub struct Dag {
    nodes: Vec<String>,
    edges: Vec<(String, String)>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl PartialEq for Dag {
    fn eq(&self, other: &Self) -> bool {
        let a: BTreeSet<&String> = self.nodes.iter().collect();
        let b: BTreeSet<&String> = other.nodes.iter().collect();
        let ea: BTreeSet<&(String, String)> = self.edges.iter().collect();
        let eb: BTreeSet<&(String, String)> = other.edges.iter().collect();
        a == b && ea == eb
    }
}

impl Eq for Dag {}

impl Dag {
    pub fn new<N, E, S, T>(nodes: N, edges: E) -> Result<Self, DagError>
    where
        N: IntoIterator<Item = S>,
        S: Into<String>,
        E: IntoIterator<Item = (T, T)>,
        T: Into<String>,
    {
        let nodes: Vec<String> = nodes.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, name) in nodes.iter().enumerate() {
            if !is_valid_name(name) {
                return Err(DagError::InvalidName(name.clone()));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(DagError::DuplicateNode(name.clone()));
            }
        }

        let mut parents = vec![Vec::new(); nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        let mut seen = BTreeSet::new();
        let mut edge_list = Vec::new();
        for (from, to) in edges {
            let (from, to): (String, String) = (from.into(), to.into());
            let lookup = |node: &String| {
                index
                    .get(node)
                    .copied()
                    .ok_or_else(|| DagError::UndeclaredNode {
                        from: from.clone(),
                        to: to.clone(),
                        node: node.clone(),
                    })
            };
            let (f, t) = (lookup(&from)?, lookup(&to)?);
            if f == t {
                return Err(DagError::SelfLoop(from));
            }
            if !seen.insert((f, t)) {
                return Err(DagError::DuplicateEdge(from, to));
            }
            parents[t].push(f);
            children[f].push(t);
            edge_list.push((from, to));
        }

        let dag = Dag {
            nodes,
            edges: edge_list,
            index,
            parents,
            children,
        };
        if let Some(cycle) = dag.find_cycle() {
            return Err(DagError::Cycle(
                cycle.into_iter().map(|i| dag.nodes[i].clone()).collect(),
            ));
        }
        Ok(dag)
    }

    /// Kahn's algorithm; on failure walks the leftover subgraph to extract
    /// one cycle (first node repeated at the end).
    fn find_cycle(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut removed = vec![false; n];
        while let Some(v) = queue.pop_front() {
            removed[v] = true;
            for &c in &self.children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        let start = (0..n).find(|&i| !removed[i])?;
        // Every leftover node keeps a leftover parent, so walking parents
        // must eventually revisit a node.
        let mut order = vec![usize::MAX; n];
        let mut walk = Vec::new();
        let mut v = start;
        while order[v] == usize::MAX {
            order[v] = walk.len();
            walk.push(v);
            v = *self.parents[v]
                .iter()
                .find(|&&p| !removed[p])
                .expect("leftover node has a leftover parent");
        }
        let mut cycle: Vec<usize> = walk[order[v]..].to_vec();
        cycle.reverse();
        cycle.push(cycle[0]);
        Some(cycle)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(String, String)] {
        &self.edges
    }

    pub fn contains(&self, node: &str) -> bool {
        self.index.contains_key(node)
    }

    fn id(&self, node: &str) -> Result<usize, DagError> {
        self.index
            .get(node)
            .copied()
            .ok_or_else(|| DagError::UnknownNode(node.to_string()))
    }

    fn names(&self, ids: impl IntoIterator<Item = usize>) -> BTreeSet<String> {
        ids.into_iter().map(|i| self.nodes[i].clone()).collect()
    }

    pub fn parents(&self, node: &str) -> Result<BTreeSet<String>, DagError> {
        Ok(self.names(self.parents[self.id(node)?].iter().copied()))
    }

    pub fn children(&self, node: &str) -> Result<BTreeSet<String>, DagError> {
        Ok(self.names(self.children[self.id(node)?].iter().copied()))
    }

    pub fn is_adjacent(&self, a: &str, b: &str) -> Result<bool, DagError> {
        let (a, b) = (self.id(a)?, self.id(b)?);
        Ok(self.children[a].contains(&b) || self.children[b].contains(&a))
    }

    fn reach(&self, start: usize, next: &[Vec<usize>]) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = next[start].clone();
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(next[v].iter().copied());
            }
        }
        seen
    }

    /// Nodes reachable from `node` by at least one directed step.
    pub fn descendants(&self, node: &str) -> Result<BTreeSet<String>, DagError> {
        let mask = self.reach(self.id(node)?, &self.children);
        Ok(self.names((0..mask.len()).filter(|&i| mask[i])))
    }

    pub fn ancestors(&self, node: &str) -> Result<BTreeSet<String>, DagError> {
        let mask = self.reach(self.id(node)?, &self.parents);
        Ok(self.names((0..mask.len()).filter(|&i| mask[i])))
    }

    fn ids<I, S>(&self, set: I) -> Result<Vec<bool>, DagError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut mask = vec![false; self.nodes.len()];
        for s in set {
            mask[self.id(s.as_ref())?] = true;
        }
        Ok(mask)
    }

    /// True iff `x` and `y` are d-separated given `cond`.
    pub fn d_separated<I, S>(&self, x: &str, y: &str, cond: I) -> Result<bool, DagError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let (xi, yi) = (self.id(x)?, self.id(y)?);
        let cond = self.ids(cond)?;
        if xi == yi {
            return Err(DagError::InvalidQuery(format!(
                "d-separation of `{x}` from itself"
            )));
        }
        if cond[xi] || cond[yi] {
            return Err(DagError::InvalidQuery(
                "query endpoints must not appear in the conditioning set".into(),
            ));
        }
        Ok(!self.d_connected_from(xi, &cond)[yi])
    }

    /// Active-trail reachability ("Bayes ball"). Returns the nodes that are
    /// d-connected to `source` given the conditioning mask.
    fn d_connected_from(&self, source: usize, cond: &[bool]) -> Vec<bool> {
        let n = self.nodes.len();
        // Nodes that are in the conditioning set or have a descendant in it.
        let mut opens_collider = cond.to_vec();
        let mut stack: Vec<usize> = (0..n).filter(|&i| cond[i]).collect();
        while let Some(v) = stack.pop() {
            for &p in &self.parents[v] {
                if !opens_collider[p] {
                    opens_collider[p] = true;
                    stack.push(p);
                }
            }
        }

        #[derive(Clone, Copy, PartialEq, Eq)]
        enum Dir {
            // arrived from a child, travelling against the edge
            Up,
            // arrived from a parent
            Down,
        }

        let mut visited = vec![[false; 2]; n];
        let mut reachable = vec![false; n];
        let mut queue = vec![(source, Dir::Up)];
        while let Some((v, dir)) = queue.pop() {
            let slot = if dir == Dir::Up { 0 } else { 1 };
            if visited[v][slot] {
                continue;
            }
            visited[v][slot] = true;
            if !cond[v] && v != source {
                reachable[v] = true;
            }
            match dir {
                Dir::Up if !cond[v] => {
                    queue.extend(self.parents[v].iter().map(|&p| (p, Dir::Up)));
                    queue.extend(self.children[v].iter().map(|&c| (c, Dir::Down)));
                }
                Dir::Up => {}
                Dir::Down => {
                    if !cond[v] {
                        queue.extend(self.children[v].iter().map(|&c| (c, Dir::Down)));
                    }
                    if opens_collider[v] {
                        queue.extend(self.parents[v].iter().map(|&p| (p, Dir::Up)));
                    }
                }
            }
        }
        reachable
    }

    /// Checks `z` against the back-door criterion for the effect of
    /// `treatment` on `outcome`.
    ///
    /// Open back-door paths are enumerated (up to [`MAX_REPORTED_PATHS`])
    /// by a depth-first search that abandons a partial path as soon as one
    /// of its interior nodes blocks it.
    pub fn is_valid_backdoor<I, S>(
        &self,
        treatment: &str,
        outcome: &str,
        z: I,
    ) -> Result<BackdoorVerdict, DagError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let (t, y) = (self.id(treatment)?, self.id(outcome)?);
        if t == y {
            return Err(DagError::InvalidQuery(
                "treatment and outcome must differ".into(),
            ));
        }
        let zmask = self.ids(z)?;
        let mut violations = Vec::new();

        let desc = self.reach(t, &self.children);
        for (i, name) in self.nodes.iter().enumerate() {
            if zmask[i] && desc[i] {
                violations.push(BackdoorViolation::DescendantOfTreatment { node: name.clone() });
            }
        }

        // has_desc_in_z[v]: v or one of its descendants is in z
        let mut has_desc_in_z = zmask.clone();
        for v in 0..self.nodes.len() {
            if !has_desc_in_z[v] {
                has_desc_in_z[v] = self.reach(v, &self.children).iter().zip(&zmask).any(|(a, b)| *a && *b);
            }
        }

        let mut search = PathSearch {
            dag: self,
            target: y,
            zmask: &zmask,
            has_desc_in_z: &has_desc_in_z,
            on_path: vec![false; self.nodes.len()],
            path: vec![t],
            found: Vec::new(),
        };
        search.on_path[t] = true;
        for &p in &self.parents[t] {
            search.extend(p, Arrow::IntoPrev);
            if search.found.len() >= MAX_REPORTED_PATHS {
                break;
            }
        }
        for path in search.found {
            violations.push(BackdoorViolation::OpenBackdoorPath {
                path: path.into_iter().map(|i| self.nodes[i].clone()).collect(),
            });
        }

        Ok(BackdoorVerdict {
            valid: violations.is_empty(),
            violations,
        })
    }

    /// Conditional independencies implied by the graph: for every
    /// non-adjacent pair, independence given the union of both parent
    /// sets. Sets larger than `max_cond_size` are skipped.
    pub fn testable_implications(&self, max_cond_size: usize) -> Vec<Implication> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|&a, &b| self.nodes[a].cmp(&self.nodes[b]));
        let mut out = Vec::new();
        for (k, &a) in order.iter().enumerate() {
            for &b in &order[k + 1..] {
                if self.children[a].contains(&b) || self.children[b].contains(&a) {
                    continue;
                }
                let cond: BTreeSet<String> = self
                    .names(self.parents[a].iter().chain(&self.parents[b]).copied());
                if cond.len() > max_cond_size {
                    continue;
                }
                debug_assert!(self
                    .d_separated(&self.nodes[a], &self.nodes[b], &cond)
                    .unwrap_or(false));
                out.push(Implication {
                    x: self.nodes[a].clone(),
                    y: self.nodes[b].clone(),
                    cond,
                });
            }
        }
        out
    }
}

/// Cap on the number of open paths listed in a verdict.
pub const MAX_REPORTED_PATHS: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Arrow {
    // edge points from the new node into the previous node
    IntoPrev,
    // edge points from the previous node into the new node
    IntoNew,
}

struct PathSearch<'a> {
    dag: &'a Dag,
    target: usize,
    zmask: &'a [bool],
    has_desc_in_z: &'a [bool],
    on_path: Vec<bool>,
    path: Vec<usize>,
    found: Vec<Vec<usize>>,
}

impl PathSearch<'_> {
    /// `arrow` is the orientation of the edge between the current path end
    /// and `v`.
    fn extend(&mut self, v: usize, arrow: Arrow) {
        if self.on_path[v] || self.found.len() >= MAX_REPORTED_PATHS {
            return;
        }
        self.path.push(v);
        self.on_path[v] = true;
        if v == self.target {
            self.found.push(self.path.clone());
        } else {
            let steps: Vec<(usize, Arrow)> = self.dag.parents[v]
                .iter()
                .map(|&p| (p, Arrow::IntoPrev))
                .chain(self.dag.children[v].iter().map(|&c| (c, Arrow::IntoNew)))
                .collect();
            for (next, out) in steps {
                // v is a collider iff both edges point into it
                let collider = arrow == Arrow::IntoNew && out == Arrow::IntoPrev;
                let blocked = if collider {
                    !self.has_desc_in_z[v]
                } else {
                    self.zmask[v]
                };
                if !blocked {
                    self.extend(next, out);
                }
            }
        }
        self.on_path[v] = false;
        self.path.pop();
    }
}

/// A conditional independence `x ⊥ y | cond` implied by a DAG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Implication {
    pub x: String,
    pub y: String,
    pub cond: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackdoorViolation {
    DescendantOfTreatment { node: String },
    OpenBackdoorPath { path: Vec<String> },
}

impl std::fmt::Display for BackdoorViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackdoorViolation::DescendantOfTreatment { node } => {
                write!(f, "`{node}` is a descendant of the treatment")
            }
            BackdoorViolation::OpenBackdoorPath { path } => {
                write!(f, "open back-door path {}", path.join(" - "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackdoorVerdict {
    pub valid: bool,
    pub violations: Vec<BackdoorViolation>,
}
