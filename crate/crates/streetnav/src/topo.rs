//! Dynamically growing topology map of the explored environment.
//!
//! The map starts as a star around the initial node and grows as the agent
//! moves: the old current node becomes visited, the arrival node becomes
//! current, and its graph neighbors join as contiguous frontier nodes.
//! Nothing is ever removed. Map edges are undirected — the map records
//! spatial layout, not traversability — and updates return a new value so a
//! single episode owns its map while snapshots stay cheap to keep.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvGraph, NodeId};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TopoError {
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("illegal move: `{to}` is not adjacent to current node `{from}`")]
    IllegalMove { from: NodeId, to: NodeId },
}

/// Role of a node inside the topology map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeCategory {
    Visited,
    Current,
    Contiguous,
}

impl NodeCategory {
    pub fn one_hot(&self) -> [f64; 3] {
        match self {
            NodeCategory::Visited => [1.0, 0.0, 0.0],
            NodeCategory::Current => [0.0, 1.0, 0.0],
            NodeCategory::Contiguous => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopoNode {
    pub id: NodeId,
    pub category: NodeCategory,
    pub feature: Array1<f64>,
}

/// Structure-only view of a map, serialized into episode traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopoSnapshot {
    pub step: usize,
    pub nodes: Vec<(NodeId, NodeCategory)>,
    pub edges: Vec<(NodeId, NodeId)>,
}

/// The growing scene map. Node order is insertion order, which also fixes
/// the adjacency-matrix ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct TopoMap {
    nodes: Vec<TopoNode>,
    index: BTreeMap<NodeId, usize>,
    edges: BTreeSet<(usize, usize)>,
    current: usize,
    step: usize,
}

impl TopoMap {
    pub fn nodes(&self) -> &[TopoNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn current(&self) -> &NodeId {
        &self.nodes[self.current].id
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.index.contains_key(id)
    }

    pub fn category_of(&self, id: &NodeId) -> Option<NodeCategory> {
        self.index.get(id).map(|&i| self.nodes[i].category)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&NodeId, &NodeId)> {
        self.edges
            .iter()
            .map(|&(a, b)| (&self.nodes[a].id, &self.nodes[b].id))
    }

    /// Node features stacked in insertion order, one row per node.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let dim = self.nodes.first().map(|n| n.feature.len()).unwrap_or(0);
        let mut m = Array2::zeros((self.nodes.len(), dim));
        for (i, node) in self.nodes.iter().enumerate() {
            m.row_mut(i).assign(&node.feature);
        }
        m
    }

    /// Per-node neighbor index sets under the map's undirected edges.
    pub fn neighbor_sets(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            sets[a].push(b);
            sets[b].push(a);
        }
        sets
    }

    pub fn snapshot(&self) -> TopoSnapshot {
        TopoSnapshot {
            step: self.step,
            nodes: self
                .nodes
                .iter()
                .map(|n| (n.id.clone(), n.category))
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|&(a, b)| (self.nodes[a].id.clone(), self.nodes[b].id.clone()))
                .collect(),
        }
    }

    fn insert_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.edges.insert((a.min(b), a.max(b)));
        }
    }

    fn push_node(
        &mut self,
        id: NodeId,
        category: NodeCategory,
        feature_init: &dyn Fn(&NodeId, NodeCategory) -> Array1<f64>,
    ) -> usize {
        let feature = feature_init(&id, category);
        let idx = self.nodes.len();
        self.nodes.push(TopoNode {
            id: id.clone(),
            category,
            feature,
        });
        self.index.insert(id, idx);
        idx
    }

    fn set_category(
        &mut self,
        idx: usize,
        category: NodeCategory,
        feature_init: &dyn Fn(&NodeId, NodeCategory) -> Array1<f64>,
    ) {
        self.nodes[idx].category = category;
        self.nodes[idx].feature = feature_init(&self.nodes[idx].id, category);
    }
}

/// Builds the initial map: the start node as current plus all of its graph
/// neighbors as contiguous frontier, connected by a star of edges.
pub fn init_topomap(
    graph: &EnvGraph,
    start: &NodeId,
    feature_init: &dyn Fn(&NodeId, NodeCategory) -> Array1<f64>,
) -> Result<TopoMap, TopoError> {
    let neighbors = graph
        .undirected_neighbors(start)
        .map_err(|_| TopoError::UnknownNode(start.clone()))?;
    let mut map = TopoMap {
        nodes: Vec::new(),
        index: BTreeMap::new(),
        edges: BTreeSet::new(),
        current: 0,
        step: 0,
    };
    let current = map.push_node(start.clone(), NodeCategory::Current, feature_init);
    map.current = current;
    for nbr in neighbors {
        let idx = map.push_node(nbr.clone(), NodeCategory::Contiguous, feature_init);
        map.insert_edge(current, idx);
    }
    Ok(map)
}

/// Grows the map after a move onto `new_node`, which must be adjacent to the
/// current node in the environment graph. Returns the updated copy.
pub fn update_on_move(
    map: &TopoMap,
    graph: &EnvGraph,
    new_node: &NodeId,
    feature_init: &dyn Fn(&NodeId, NodeCategory) -> Array1<f64>,
) -> Result<TopoMap, TopoError> {
    let current_id = map.current().clone();
    let adjacent = graph
        .undirected_neighbors(&current_id)
        .map_err(|_| TopoError::UnknownNode(current_id.clone()))?
        .contains(new_node);
    if !adjacent {
        return Err(TopoError::IllegalMove {
            from: current_id,
            to: new_node.clone(),
        });
    }

    let mut next = map.clone();
    let old_current = next.current;
    next.set_category(old_current, NodeCategory::Visited, feature_init);

    let new_idx = match next.index.get(new_node) {
        Some(&idx) => {
            next.set_category(idx, NodeCategory::Current, feature_init);
            idx
        }
        None => next.push_node(new_node.clone(), NodeCategory::Current, feature_init),
    };
    next.current = new_idx;
    next.insert_edge(old_current, new_idx);

    let neighbors = graph
        .undirected_neighbors(new_node)
        .map_err(|_| TopoError::UnknownNode(new_node.clone()))?;
    for nbr in neighbors {
        let nbr_idx = match next.index.get(nbr) {
            Some(&idx) => idx,
            None => next.push_node(nbr.clone(), NodeCategory::Contiguous, feature_init),
        };
        next.insert_edge(new_idx, nbr_idx);
    }

    next.step += 1;
    Ok(next)
}

/// Dense adjacency of a map, in node insertion order. The normalized form
/// is `D^{-1/2} (A + I) D^{-1/2}` with self-loops added so isolated nodes
/// keep a well-defined degree.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    pub order: Vec<NodeId>,
    pub matrix: Array2<f64>,
    pub normalized: bool,
}

pub fn to_adjacency(map: &TopoMap, normalize: bool) -> AdjacencyMatrix {
    let n = map.len();
    let order: Vec<NodeId> = map.nodes.iter().map(|node| node.id.clone()).collect();
    let mut a = Array2::zeros((n, n));
    for &(i, j) in &map.edges {
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    if !normalize {
        return AdjacencyMatrix {
            order,
            matrix: a,
            normalized: false,
        };
    }
    for i in 0..n {
        a[[i, i]] += 1.0;
    }
    let deg_inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = a.row(i).sum();
            1.0 / deg.sqrt()
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] *= deg_inv_sqrt[i] * deg_inv_sqrt[j];
        }
    }
    AdjacencyMatrix {
        order,
        matrix: a,
        normalized: true,
    }
}

/// Squared Frobenius distance between the raw adjacencies of two maps,
/// aligned on the union of their node ids with zero padding for nodes the
/// other side lacks.
pub fn topo_loss(s: &TopoMap, c: &TopoMap) -> f64 {
    structure_loss(&s.snapshot(), &c.snapshot())
}

/// [`topo_loss`] over structure-only snapshots, as stored in traces.
pub fn structure_loss(s: &TopoSnapshot, c: &TopoSnapshot) -> f64 {
    let mut order: Vec<&NodeId> = Vec::new();
    let mut seen = BTreeSet::new();
    for (id, _) in s.nodes.iter().chain(c.nodes.iter()) {
        if seen.insert(id.clone()) {
            order.push(id);
        }
    }
    let pos: BTreeMap<&NodeId, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let n = order.len();
    let fill = |snap: &TopoSnapshot| -> Array2<f64> {
        let mut a = Array2::zeros((n, n));
        for (u, v) in &snap.edges {
            let (i, j) = (pos[u], pos[v]);
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    };
    let a_s = fill(s);
    let a_c = fill(c);
    a_s.iter()
        .zip(a_c.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}
