//! Radial feeder model.
//!
//! A [`FeederGraph`] is an immutable, validated tree rooted at the substation
//! node. Every non-root node owns exactly one incoming branch, so a branch is
//! identified by its downstream node ([`BranchId`] wraps the child's id).
//! Ancestry queries run in constant time off a preorder numbering computed at
//! construction.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

/// A branch, named by the node at its downstream end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BranchId(pub u32);

impl BranchId {
    pub fn child(self) -> NodeId {
        NodeId(self.0)
    }
}

impl From<NodeId> for BranchId {
    fn from(n: NodeId) -> Self {
        BranchId(n.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Phase {
    #[default]
    A,
    B,
    C,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: BranchId,
    pub parent: NodeId,
    pub child: NodeId,
    /// Approximate voltage drop factor, % drop per kVA·mile.
    pub drop_factor: f64,
    /// Segment length in miles.
    pub length: f64,
    pub phase: Phase,
}

impl Branch {
    /// Product of drop factor and length; the only combination the drop model uses.
    pub fn k_l(&self) -> f64 {
        self.drop_factor * self.length
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeLoad {
    pub node: NodeId,
    /// Mean real power demand in kW.
    pub mean_demand: f64,
    pub power_factor: f64,
    pub is_observable: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeederError {
    #[error("cycle detected through node {0}")]
    CycleDetected(NodeId),
    #[error("node {0} is not connected to the root")]
    DisconnectedNode(NodeId),
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("root node {0} must be observable")]
    RootNotObservable(NodeId),
    #[error("malformed topology document: {0}")]
    MalformedDocument(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

/// Serialized form of a feeder. Field names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub root: u32,
    pub nodes: Vec<NodeRecord>,
    pub branches: Vec<BranchRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: u32,
    pub observable: bool,
    pub mean_demand_kw: f64,
    pub power_factor: f64,
    #[serde(default)]
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchRecord {
    pub parent: u32,
    pub child: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_miles: Option<f64>,
    /// Shorthand for `drop_factor * length_miles`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederGraph {
    name: Option<String>,
    root: usize,
    phase: Phase,
    ids: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    loads: Vec<NodeLoad>,
    branch: Vec<Option<Branch>>,
    depth: Vec<usize>,
    // preorder position and subtree size; descendants of v occupy
    // preorder[pre[v]+1 ..= pre[v]+size[v]-1]
    pre: Vec<usize>,
    size: Vec<usize>,
    preorder: Vec<usize>,
    observables: Vec<NodeId>,
}

/// Topology document of the bundled 164-node test feeder.
pub const BUNDLED_FEEDER: &str = include_str!("../data/feeder164.json");

/// Parse and validate a JSON topology document.
pub fn load_topology(document: &str) -> Result<FeederGraph, FeederError> {
    let doc: TopologyDocument =
        serde_json::from_str(document).map_err(|e| FeederError::MalformedDocument(e.to_string()))?;
    FeederGraph::from_document(&doc)
}

fn check_positive(what: &str, v: f64) -> Result<(), FeederError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(FeederError::MalformedDocument(format!(
            "{what} must be positive and finite, got {v}"
        )))
    }
}

impl FeederGraph {
    pub fn from_document(doc: &TopologyDocument) -> Result<Self, FeederError> {
        let mut index = HashMap::with_capacity(doc.nodes.len());
        let mut records: Vec<&NodeRecord> = doc.nodes.iter().collect();
        records.sort_by_key(|r| r.id);
        for (i, r) in records.iter().enumerate() {
            if index.insert(NodeId(r.id), i).is_some() {
                return Err(FeederError::DuplicateId(NodeId(r.id)));
            }
        }
        let n = records.len();
        let root = *index
            .get(&NodeId(doc.root))
            .ok_or_else(|| FeederError::MalformedDocument(format!("root {} is not a listed node", doc.root)))?;

        let phase = records[root].phase;
        let mut loads = Vec::with_capacity(n);
        for r in &records {
            let id = NodeId(r.id);
            if !(r.mean_demand_kw.is_finite() && r.mean_demand_kw >= 0.0) {
                return Err(FeederError::MalformedDocument(format!(
                    "node {id}: mean_demand_kw must be non-negative, got {}",
                    r.mean_demand_kw
                )));
            }
            if !(r.power_factor > 0.0 && r.power_factor <= 1.0) {
                return Err(FeederError::MalformedDocument(format!(
                    "node {id}: power_factor must lie in (0, 1], got {}",
                    r.power_factor
                )));
            }
            if r.phase != phase {
                return Err(FeederError::MalformedDocument(format!(
                    "node {id} is on phase {:?} but the feeder is single-phase {:?}",
                    r.phase, phase
                )));
            }
            loads.push(NodeLoad {
                node: id,
                mean_demand: r.mean_demand_kw,
                power_factor: r.power_factor,
                is_observable: r.observable,
            });
        }

        let lookup = |raw: u32| {
            index.get(&NodeId(raw)).copied().ok_or_else(|| {
                FeederError::MalformedDocument(format!("branch references unknown node {}", NodeId(raw)))
            })
        };
        let mut edges: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut params: Vec<Option<(f64, f64)>> = vec![None; n];
        for b in &doc.branches {
            let (p, c) = (lookup(b.parent)?, lookup(b.child)?);
            let (drop_factor, length) = match (b.drop_factor, b.length_miles, b.k_l) {
                (Some(k), Some(l), None) => (k, l),
                (None, None, Some(kl)) => (kl, 1.0),
                _ => {
                    return Err(FeederError::MalformedDocument(format!(
                        "branch {}->{} needs either drop_factor and length_miles or k_l",
                        NodeId(b.parent),
                        NodeId(b.child)
                    )))
                }
            };
            check_positive(
                &format!("branch {}->{} drop_factor", NodeId(b.parent), NodeId(b.child)),
                drop_factor,
            )?;
            check_positive(
                &format!("branch {}->{} length", NodeId(b.parent), NodeId(b.child)),
                length,
            )?;
            edges[p].push(c);
            incoming[c].push(p);
            params[c] = Some((drop_factor, length));
        }

        if let Some(v) = find_cycle(&edges) {
            return Err(FeederError::CycleDetected(NodeId(records[v].id)));
        }
        if !incoming[root].is_empty() {
            return Err(FeederError::MalformedDocument(format!(
                "root {} has an incoming branch",
                NodeId(doc.root)
            )));
        }
        for (v, inc) in incoming.iter().enumerate() {
            if inc.len() > 1 {
                return Err(FeederError::MalformedDocument(format!(
                    "node {} has {} parents",
                    NodeId(records[v].id),
                    inc.len()
                )));
            }
        }
        if !loads[root].is_observable {
            return Err(FeederError::RootNotObservable(NodeId(doc.root)));
        }

        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        for (v, inc) in incoming.iter().enumerate() {
            if let Some(&p) = inc.first() {
                parent[v] = Some(p);
                children[p].push(v);
            }
        }
        for ch in &mut children {
            ch.sort_unstable();
        }

        // iterative preorder walk from the root
        let mut pre = vec![usize::MAX; n];
        let mut size = vec![1usize; n];
        let mut depth = vec![0usize; n];
        let mut preorder = Vec::with_capacity(n);
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            pre[v] = preorder.len();
            preorder.push(v);
            for &c in children[v].iter().rev() {
                depth[c] = depth[v] + 1;
                stack.push(c);
            }
        }
        if preorder.len() != n {
            let v = (0..n).find(|&v| pre[v] == usize::MAX).expect("unvisited node");
            return Err(FeederError::DisconnectedNode(NodeId(records[v].id)));
        }
        for &v in preorder.iter().rev() {
            if let Some(p) = parent[v] {
                size[p] += size[v];
            }
        }

        let ids: Vec<NodeId> = records.iter().map(|r| NodeId(r.id)).collect();
        let branch = (0..n)
            .map(|v| {
                parent[v].map(|p| {
                    let (drop_factor, length) = params[v].expect("branch parameters");
                    Branch {
                        id: BranchId(ids[v].0),
                        parent: ids[p],
                        child: ids[v],
                        drop_factor,
                        length,
                        phase,
                    }
                })
            })
            .collect();
        let mut observables: Vec<NodeId> = std::iter::once(ids[root])
            .chain((0..n).filter(|&v| v != root && loads[v].is_observable).map(|v| ids[v]))
            .collect();
        observables[1..].sort_unstable();

        Ok(FeederGraph {
            name: doc.name.clone(),
            root,
            phase,
            ids,
            index,
            parent,
            children,
            loads,
            branch,
            depth,
            pre,
            size,
            preorder,
            observables,
        })
    }

    pub fn to_document(&self) -> TopologyDocument {
        let nodes = self
            .loads
            .iter()
            .map(|l| NodeRecord {
                id: l.node.0,
                observable: l.is_observable,
                mean_demand_kw: l.mean_demand,
                power_factor: l.power_factor,
                phase: self.phase,
            })
            .collect();
        let branches = self
            .branches()
            .map(|b| BranchRecord {
                parent: b.parent.0,
                child: b.child.0,
                drop_factor: Some(b.drop_factor),
                length_miles: Some(b.length),
                k_l: None,
            })
            .collect();
        TopologyDocument {
            name: self.name.clone(),
            root: self.ids[self.root].0,
            nodes,
            branches,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("topology serializes")
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn root(&self) -> NodeId {
        self.ids[self.root]
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    /// Number of branches, `M`.
    pub fn branch_count(&self) -> usize {
        self.ids.len() - 1
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.index.contains_key(&n)
    }

    fn idx(&self, n: NodeId) -> Result<usize, FeederError> {
        self.index.get(&n).copied().ok_or(FeederError::UnknownNode(n))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids.iter().copied()
    }

    /// Branches in ascending id order.
    pub fn branches(&self) -> impl Iterator<Item = &Branch> + '_ {
        self.branch.iter().flatten()
    }

    pub fn branch_ids(&self) -> BTreeSet<BranchId> {
        self.branches().map(|b| b.id).collect()
    }

    pub fn branch(&self, id: BranchId) -> Option<&Branch> {
        self.index.get(&id.child()).and_then(|&v| self.branch[v].as_ref())
    }

    pub fn load(&self, n: NodeId) -> Option<&NodeLoad> {
        self.index.get(&n).map(|&v| &self.loads[v])
    }

    pub fn loads(&self) -> &[NodeLoad] {
        &self.loads
    }

    /// Observable nodes: the root first, then the rest in ascending id order.
    pub fn observables(&self) -> &[NodeId] {
        &self.observables
    }

    pub fn is_observable(&self, n: NodeId) -> bool {
        self.load(n).is_some_and(|l| l.is_observable)
    }

    pub fn parent(&self, n: NodeId) -> Result<Option<NodeId>, FeederError> {
        Ok(self.parent[self.idx(n)?].map(|p| self.ids[p]))
    }

    pub fn children(&self, n: NodeId) -> Result<Vec<NodeId>, FeederError> {
        Ok(self.children[self.idx(n)?].iter().map(|&c| self.ids[c]).collect())
    }

    pub fn depth(&self, n: NodeId) -> Result<usize, FeederError> {
        Ok(self.depth[self.idx(n)?])
    }

    fn is_ancestor_idx(&self, a: usize, b: usize) -> bool {
        self.pre[a] <= self.pre[b] && self.pre[b] < self.pre[a] + self.size[a]
    }

    /// True when `a` is a strict ancestor of `b`.
    pub fn is_ancestor(&self, a: NodeId, b: NodeId) -> Result<bool, FeederError> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        Ok(a != b && self.is_ancestor_idx(a, b))
    }

    /// True iff one node lies on the other's path to the root. A node is on
    /// its own path.
    pub fn is_on_path(&self, a: NodeId, b: NodeId) -> Result<bool, FeederError> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        Ok(self.is_ancestor_idx(a, b) || self.is_ancestor_idx(b, a))
    }

    fn subtree_idx(&self, v: usize) -> &[usize] {
        &self.preorder[self.pre[v]..self.pre[v] + self.size[v]]
    }

    /// Nodes in the subtree rooted at `n`, including `n`, in preorder.
    pub fn subtree(&self, n: NodeId) -> Result<Vec<NodeId>, FeederError> {
        Ok(self.subtree_idx(self.idx(n)?).iter().map(|&v| self.ids[v]).collect())
    }

    /// Every branch strictly below `n`. For the root this is all `M` branches.
    pub fn downstream_branches(&self, n: NodeId) -> Result<BTreeSet<BranchId>, FeederError> {
        let v = self.idx(n)?;
        Ok(self.subtree_idx(v)[1..]
            .iter()
            .map(|&d| BranchId(self.ids[d].0))
            .collect())
    }

    /// Branches on the path from `upper` down to `lower`, top first.
    pub fn path_branches(&self, upper: NodeId, lower: NodeId) -> Result<Vec<BranchId>, FeederError> {
        let (u, mut l) = (self.idx(upper)?, self.idx(lower)?);
        if !self.is_ancestor_idx(u, l) {
            return Err(FeederError::MalformedDocument(format!(
                "{upper} is not an ancestor of {lower}"
            )));
        }
        let mut out = Vec::new();
        while l != u {
            out.push(BranchId(self.ids[l].0));
            l = self.parent[l].expect("walk stays below upper");
        }
        out.reverse();
        Ok(out)
    }

    /// Observable nodes strictly below `n` with no observable node in between.
    pub fn immediate_observable_descendants(&self, n: NodeId) -> Result<Vec<NodeId>, FeederError> {
        let v = self.idx(n)?;
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.children[v].iter().rev().copied().collect();
        while let Some(c) = stack.pop() {
            if self.loads[c].is_observable {
                out.push(self.ids[c]);
            } else {
                stack.extend(self.children[c].iter().rev());
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Node ids in preorder (parents before children).
    pub fn preorder(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.preorder.iter().map(|&v| self.ids[v])
    }

    /// Dense index of a node, stable for the lifetime of the graph.
    pub fn index_of(&self, n: NodeId) -> Option<usize> {
        self.index.get(&n).copied()
    }

    pub(crate) fn preorder_indices(&self) -> &[usize] {
        &self.preorder
    }

    pub(crate) fn parent_index(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub(crate) fn load_at(&self, v: usize) -> &NodeLoad {
        &self.loads[v]
    }

    pub(crate) fn branch_at(&self, v: usize) -> Option<&Branch> {
        self.branch[v].as_ref()
    }
}

/// Returns a node lying on a directed cycle, if any.
fn find_cycle(edges: &[Vec<usize>]) -> Option<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut mark = vec![Mark::New; edges.len()];
    for start in 0..edges.len() {
        if mark[start] != Mark::New {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        mark[start] = Mark::Active;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&w) = edges[v].get(*next) {
                *next += 1;
                match mark[w] {
                    Mark::Active => return Some(w),
                    Mark::New => {
                        mark[w] = Mark::Active;
                        stack.push((w, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

/// Random radial feeder with node ids `0..nodes`, root `0`, and
/// `observables` randomly chosen non-root observable nodes. Each node attaches
/// to a uniformly chosen earlier node.
pub fn random_feeder<R: Rng + ?Sized>(rng: &mut R, nodes: usize, observables: usize) -> FeederGraph {
    assert!(nodes >= 2, "a feeder needs at least one branch");
    let observables = observables.min(nodes - 1);
    let mut picked: HashSet<u32> = HashSet::new();
    while picked.len() < observables {
        picked.insert(rng.random_range(1..nodes as u32));
    }
    let node_records = (0..nodes as u32)
        .map(|id| NodeRecord {
            id,
            observable: id == 0 || picked.contains(&id),
            mean_demand_kw: if id == 0 { 0.0 } else { rng.random_range(0.5..3.0) },
            power_factor: rng.random_range(0.9..1.0),
            phase: Phase::A,
        })
        .collect();
    let branch_records = (1..nodes as u32)
        .map(|child| BranchRecord {
            parent: rng.random_range(0..child),
            child,
            drop_factor: Some(rng.random_range(0.001..0.003)),
            length_miles: Some(rng.random_range(0.05..0.3)),
            k_l: None,
        })
        .collect();
    let doc = TopologyDocument {
        name: None,
        root: 0,
        nodes: node_records,
        branches: branch_records,
    };
    FeederGraph::from_document(&doc).expect("random feeder is a valid tree")
}
