//! Trajectory evaluation: task completion (TC), shortest-path distance of
//! the stop node to the goal (SPD, in graph hops), and key-point accuracy
//! (KPA) over the decision-critical nodes of each gold demonstration.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{is_success, Action, EnvGraph, NodeId};
use crate::data::NavInstance;
use crate::runtime::EpisodeTrace;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MetricsError {
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("no path between `{from}` and `{to}`")]
    Unreachable { from: NodeId, to: NodeId },
    #[error("empty input: {0}")]
    EmptyInput(String),
}

/// Directed BFS hop count; falls back to undirected adjacency when no
/// directed path exists, and errors only when both fail.
pub fn spd(graph: &EnvGraph, stop: &NodeId, goal: &NodeId) -> Result<usize, MetricsError> {
    if !graph.contains(stop) {
        return Err(MetricsError::UnknownNode(stop.clone()));
    }
    if !graph.contains(goal) {
        return Err(MetricsError::UnknownNode(goal.clone()));
    }
    if let Some(d) = bfs(graph, stop, goal, false) {
        return Ok(d);
    }
    bfs(graph, stop, goal, true).ok_or_else(|| MetricsError::Unreachable {
        from: stop.clone(),
        to: goal.clone(),
    })
}

fn bfs(graph: &EnvGraph, from: &NodeId, to: &NodeId, undirected: bool) -> Option<usize> {
    if from == to {
        return Some(0);
    }
    let mut seen: BTreeMap<&NodeId, usize> = BTreeMap::new();
    seen.insert(from, 0);
    let mut queue = VecDeque::new();
    queue.push_back(from);
    while let Some(node) = queue.pop_front() {
        let dist = seen[node];
        let next_nodes: Vec<&NodeId> = if undirected {
            graph
                .undirected_neighbors(node)
                .expect("node validated")
                .iter()
                .collect()
        } else {
            graph
                .outgoing(node)
                .expect("node validated")
                .iter()
                .map(|(t, _)| t)
                .collect()
        };
        for next in next_nodes {
            if next == to {
                return Some(dist + 1);
            }
            if !seen.contains_key(next) {
                seen.insert(next, dist + 1);
                queue.push_back(next);
            }
        }
    }
    None
}

/// One evaluated episode: the recorded trace and the instance it ran on.
pub struct EpisodeOutcome<'a> {
    pub trace: &'a EpisodeTrace,
    pub instance: &'a NavInstance,
}

/// Key decisions of one instance: every gold action taken at the initial
/// node, a landmark-annotated node, or the goal node, with its position in
/// the gold action sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Keypoint {
    pub action_index: usize,
    pub node: NodeId,
    pub gold_action: Action,
}

/// Walks the gold action sequence through the route and keeps the decisions
/// taken at key nodes. Rotations and the forward move at a key node each
/// count as one decision.
pub fn keypoint_set(instance: &NavInstance) -> Vec<Keypoint> {
    let mut key_nodes: Vec<&NodeId> = vec![&instance.gold_route[0], instance.goal()];
    for ann in &instance.landmark_annotations {
        key_nodes.push(&ann.node);
    }

    let mut keypoints = Vec::new();
    let mut route_pos = 0;
    for (action_index, action) in instance.gold_actions.iter().enumerate() {
        let node = &instance.gold_route[route_pos.min(instance.gold_route.len() - 1)];
        if key_nodes.contains(&node) {
            keypoints.push(Keypoint {
                action_index,
                node: node.clone(),
                gold_action: *action,
            });
        }
        if *action == Action::Forward {
            route_pos += 1;
        }
    }
    keypoints
}

/// Fraction of episodes stopping at the goal or one of its direct
/// neighbors, in percent. Truncated and dead-ended episodes count as stops
/// at their final node.
pub fn tc(outcomes: &[EpisodeOutcome<'_>], graph: &EnvGraph) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyInput("no episodes".into()));
    }
    let mut successes = 0usize;
    for outcome in outcomes {
        let ok = is_success(graph, outcome.trace.final_node(), outcome.instance.goal())
            .map_err(|_| MetricsError::UnknownNode(outcome.trace.final_node().clone()))?;
        if ok {
            successes += 1;
        }
    }
    Ok(100.0 * successes as f64 / outcomes.len() as f64)
}

/// Key-point accuracy in percent: a key decision is correct when the trace
/// still matches the gold action prefix at that index and takes the gold
/// action. Keypoints past the divergence point count as incorrect.
pub fn kpa(outcomes: &[EpisodeOutcome<'_>]) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyInput("no episodes".into()));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for outcome in outcomes {
        let keypoints = keypoint_set(outcome.instance);
        let taken = outcome.trace.actions();
        let gold = &outcome.instance.gold_actions;
        let mut prefix = 0;
        while prefix < taken.len() && prefix < gold.len() && taken[prefix] == gold[prefix] {
            prefix += 1;
        }
        total += keypoints.len();
        correct += keypoints
            .iter()
            .filter(|k| k.action_index < prefix)
            .count();
    }
    if total == 0 {
        return Err(MetricsError::EmptyInput("no keypoints".into()));
    }
    Ok(100.0 * correct as f64 / total as f64)
}

/// Aggregated metrics of one evaluation batch, rounded for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub tc: f64,
    pub spd: f64,
    pub kpa: f64,
    pub episode_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub result: EvalResult,
    /// Episodes whose stop node has no path to the goal, excluded from the
    /// SPD mean and reported here instead.
    pub spd_unreachable: usize,
}

/// Round half up to one decimal, matching the report layout.
pub fn round1(x: f64) -> f64 {
    (x * 10.0 + 0.5).floor() / 10.0
}

pub fn evaluate(
    outcomes: &[EpisodeOutcome<'_>],
    graph: &EnvGraph,
) -> Result<EvalReport, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyInput("no episodes".into()));
    }
    let tc_value = tc(outcomes, graph)?;
    let kpa_value = kpa(outcomes)?;
    let mut spd_sum = 0usize;
    let mut spd_count = 0usize;
    let mut unreachable = 0usize;
    for outcome in outcomes {
        match spd(graph, outcome.trace.final_node(), outcome.instance.goal()) {
            Ok(d) => {
                spd_sum += d;
                spd_count += 1;
            }
            Err(MetricsError::Unreachable { .. }) => unreachable += 1,
            Err(e) => return Err(e),
        }
    }
    let spd_mean = if spd_count == 0 {
        0.0
    } else {
        spd_sum as f64 / spd_count as f64
    };
    Ok(EvalReport {
        result: EvalResult {
            tc: round1(tc_value),
            spd: round1(spd_mean),
            kpa: round1(kpa_value),
            episode_count: outcomes.len(),
        },
        spd_unreachable: unreachable,
    })
}

/// Plain-text table in the standard column convention (SPD down-is-better,
/// KPA/TC up-is-better). Values match the JSON report exactly.
pub fn render_table(label: &str, report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18} {:>8} {:>8} {:>8} {:>10}\n",
        "model", "SPD\u{2193}", "KPA\u{2191}", "TC\u{2191}", "episodes"
    ));
    out.push_str(&format!(
        "{:<18} {:>8.1} {:>8.1} {:>8.1} {:>10}\n",
        label,
        report.result.spd,
        report.result.kpa,
        report.result.tc,
        report.result.episode_count
    ));
    if report.spd_unreachable > 0 {
        out.push_str(&format!(
            "(SPD excludes {} unreachable episode(s))\n",
            report.spd_unreachable
        ));
    }
    out
}
