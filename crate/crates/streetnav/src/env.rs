//! Directed street-graph environment and the agent transition function.
//!
//! The world is a directed graph whose edges carry the compass heading an
//! agent faces while traveling them. Agent state is a (node, heading,
//! terminated) triple; unless terminated, the heading always equals the
//! heading of exactly one outgoing edge of the current node, which makes
//! FORWARD unambiguous and lets LEFT/RIGHT rotate through the sorted cycle
//! of outgoing headings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a navigable node, unique within one graph.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Compass heading in degrees, normalized into `[0, 360)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Heading(f64);

impl Heading {
    pub fn new(degrees: f64) -> Self {
        let d = degrees.rem_euclid(360.0);
        // rem_euclid can round up to exactly 360.0 for tiny negative inputs
        Self(if d >= 360.0 { 0.0 } else { d })
    }

    pub fn degrees(&self) -> f64 {
        self.0
    }

    /// Circular distance `min(|a-b|, 360-|a-b|)` in degrees.
    pub fn circular_distance(&self, other: Heading) -> f64 {
        let diff = (self.0 - other.0).abs();
        diff.min(360.0 - diff)
    }
}

impl<'de> Deserialize<'de> for Heading {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let degrees = f64::deserialize(deserializer)?;
        if !degrees.is_finite() {
            return Err(serde::de::Error::custom("heading must be finite"));
        }
        Ok(Heading::new(degrees))
    }
}

/// A directed edge with the heading faced while traveling it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub heading: Heading,
}

/// The four-action space of the agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Forward,
    Left,
    Right,
    Stop,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Forward, Action::Left, Action::Right, Action::Stop];

    /// Stable index used by policies emitting logits over the action space.
    pub fn index(&self) -> usize {
        match self {
            Action::Forward => 0,
            Action::Left => 1,
            Action::Right => 2,
            Action::Stop => 3,
        }
    }

    pub fn from_index(idx: usize) -> Option<Action> {
        Action::ALL.get(idx).copied()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Forward => "FORWARD",
            Action::Left => "LEFT",
            Action::Right => "RIGHT",
            Action::Stop => "STOP",
        };
        f.write_str(s)
    }
}

/// Agent state: where it is, where it faces, and whether the episode ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub node: NodeId,
    pub heading: Heading,
    pub terminated: bool,
}

impl AgentState {
    pub fn new(node: NodeId, heading: Heading) -> Self {
        Self {
            node,
            heading,
            terminated: false,
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(NodeId),
    #[error("duplicate edge `{from}` -> `{to}`")]
    DuplicateEdge { from: NodeId, to: NodeId },
    #[error("node `{node}` has two outgoing edges with heading {heading}°")]
    DuplicateHeading { node: NodeId, heading: f64 },
    #[error("edge `{from}` -> `{to}` has non-finite heading")]
    NonFiniteHeading { from: NodeId, to: NodeId },
    #[error("agent already terminated")]
    AlreadyTerminated,
    #[error("dead end: node `{node}` has no outgoing edges")]
    DeadEnd { node: NodeId },
    #[error("heading {heading}° at node `{node}` matches no outgoing edge")]
    HeadingNotOnEdge { node: NodeId, heading: f64 },
}

/// Immutable directed street graph. Construction validates all structural
/// invariants, so every loaded graph is safe to share read-only across
/// parallel episode runners.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvGraph {
    nodes: Vec<NodeId>,
    edges: Vec<Edge>,
    // outgoing edges per node, sorted ascending by heading degrees
    outgoing: BTreeMap<NodeId, Vec<(NodeId, Heading)>>,
    // undirected neighbor sets, sorted and deduplicated
    undirected: BTreeMap<NodeId, Vec<NodeId>>,
}

impl EnvGraph {
    pub fn new(nodes: Vec<NodeId>, edges: Vec<Edge>) -> Result<Self, EnvError> {
        let mut node_set = BTreeSet::new();
        for node in &nodes {
            if !node_set.insert(node.clone()) {
                return Err(EnvError::DuplicateNode(node.clone()));
            }
        }

        let mut outgoing: BTreeMap<NodeId, Vec<(NodeId, Heading)>> = BTreeMap::new();
        let mut undirected: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        for node in &nodes {
            outgoing.insert(node.clone(), Vec::new());
            undirected.insert(node.clone(), BTreeSet::new());
        }

        let mut seen_pairs = BTreeSet::new();
        for edge in &edges {
            if !node_set.contains(&edge.from) {
                return Err(EnvError::UnknownNode(edge.from.clone()));
            }
            if !node_set.contains(&edge.to) {
                return Err(EnvError::UnknownNode(edge.to.clone()));
            }
            if !edge.heading.degrees().is_finite() {
                return Err(EnvError::NonFiniteHeading {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                });
            }
            if !seen_pairs.insert((edge.from.clone(), edge.to.clone())) {
                return Err(EnvError::DuplicateEdge {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                });
            }
            let outs = outgoing.get_mut(&edge.from).expect("from validated");
            if outs.iter().any(|(_, h)| *h == edge.heading) {
                return Err(EnvError::DuplicateHeading {
                    node: edge.from.clone(),
                    heading: edge.heading.degrees(),
                });
            }
            outs.push((edge.to.clone(), edge.heading));
            undirected
                .get_mut(&edge.from)
                .expect("from validated")
                .insert(edge.to.clone());
            undirected
                .get_mut(&edge.to)
                .expect("to validated")
                .insert(edge.from.clone());
        }

        for outs in outgoing.values_mut() {
            outs.sort_by(|a, b| a.1.degrees().total_cmp(&b.1.degrees()));
        }
        let undirected = undirected
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect();

        Ok(Self {
            nodes,
            edges,
            outgoing,
            undirected,
        })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.outgoing.contains_key(node)
    }

    /// Outgoing edges of `node`, sorted ascending by heading degrees.
    pub fn outgoing(&self, node: &NodeId) -> Result<&[(NodeId, Heading)], EnvError> {
        self.outgoing
            .get(node)
            .map(Vec::as_slice)
            .ok_or_else(|| EnvError::UnknownNode(node.clone()))
    }

    /// Undirected neighbors (union of in- and out-neighbors), sorted by id.
    pub fn undirected_neighbors(&self, node: &NodeId) -> Result<&[NodeId], EnvError> {
        self.undirected
            .get(node)
            .map(Vec::as_slice)
            .ok_or_else(|| EnvError::UnknownNode(node.clone()))
    }

    /// Nodes with no outgoing edges terminate any episode that enters them.
    pub fn is_terminal_only(&self, node: &NodeId) -> Result<bool, EnvError> {
        Ok(self.outgoing(node)?.is_empty())
    }

    pub fn has_edge(&self, from: &NodeId, to: &NodeId) -> bool {
        self.outgoing
            .get(from)
            .map(|outs| outs.iter().any(|(t, _)| t == to))
            .unwrap_or(false)
    }
}

/// The transition function: applies one action to a live agent state.
///
/// STOP terminates in place. FORWARD travels the edge matching the current
/// heading; the arrival heading is the outgoing heading of the new node with
/// minimal circular distance to the travel heading (ties to the smaller
/// degree value). LEFT/RIGHT step through the sorted heading cycle without
/// changing node. FORWARD into a node with no outgoing edges fails with
/// [`EnvError::DeadEnd`] carrying the arrival node.
pub fn apply_action(
    graph: &EnvGraph,
    state: &AgentState,
    action: Action,
) -> Result<AgentState, EnvError> {
    if state.terminated {
        return Err(EnvError::AlreadyTerminated);
    }
    match action {
        Action::Stop => Ok(AgentState {
            terminated: true,
            ..state.clone()
        }),
        Action::Forward => {
            let outs = graph.outgoing(&state.node)?;
            let (to, _) = outs
                .iter()
                .find(|(_, h)| *h == state.heading)
                .ok_or_else(|| EnvError::HeadingNotOnEdge {
                    node: state.node.clone(),
                    heading: state.heading.degrees(),
                })?;
            let arrivals = graph.outgoing(to)?;
            if arrivals.is_empty() {
                return Err(EnvError::DeadEnd { node: to.clone() });
            }
            let new_heading = arrivals
                .iter()
                .map(|(_, h)| *h)
                .min_by(|a, b| {
                    state
                        .heading
                        .circular_distance(*a)
                        .total_cmp(&state.heading.circular_distance(*b))
                        .then(a.degrees().total_cmp(&b.degrees()))
                })
                .expect("arrivals non-empty");
            Ok(AgentState {
                node: to.clone(),
                heading: new_heading,
                terminated: false,
            })
        }
        Action::Left | Action::Right => {
            let outs = graph.outgoing(&state.node)?;
            let idx = outs
                .iter()
                .position(|(_, h)| *h == state.heading)
                .ok_or_else(|| EnvError::HeadingNotOnEdge {
                    node: state.node.clone(),
                    heading: state.heading.degrees(),
                })?;
            let n = outs.len();
            let new_idx = match action {
                Action::Left => (idx + n - 1) % n,
                Action::Right => (idx + 1) % n,
                _ => unreachable!(),
            };
            Ok(AgentState {
                heading: outs[new_idx].1,
                ..state.clone()
            })
        }
    }
}

/// An episode succeeds when the stop node is the goal itself or connected to
/// it by an edge in either direction.
pub fn is_success(graph: &EnvGraph, stop: &NodeId, goal: &NodeId) -> Result<bool, EnvError> {
    if !graph.contains(stop) {
        return Err(EnvError::UnknownNode(stop.clone()));
    }
    if !graph.contains(goal) {
        return Err(EnvError::UnknownNode(goal.clone()));
    }
    Ok(stop == goal || graph.has_edge(stop, goal) || graph.has_edge(goal, stop))
}
