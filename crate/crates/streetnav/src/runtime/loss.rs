//! The combined training loss: a topology term comparing the agent's map
//! against the gold-replay map at equal move counts, plus action
//! cross-entropy against the gold demonstration, weighted by two lambdas.

use serde::{Deserialize, Serialize};

use crate::data::NavInstance;
use crate::env::{apply_action, Action, AgentState, EnvGraph};
use crate::runtime::{EpisodeTrace, RuntimeError};
use crate::topo::{init_topomap, structure_loss, update_on_move, TopoSnapshot};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 0.5,
        }
    }
}

impl LossConfig {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self, RuntimeError> {
        if lambda1 < 0.0 || lambda2 < 0.0 {
            return Err(RuntimeError::ConfigError(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(Self { lambda1, lambda2 })
    }
}

/// `-log softmax(logits)[gold]`, numerically stable.
pub fn cross_entropy(logits: &[f64; 4], gold: Action) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    log_sum - logits[gold.index()]
}

/// Softmax probabilities of four logits.
pub fn softmax4(logits: &[f64; 4]) -> [f64; 4] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|z| (z - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

/// Structure snapshots of the gold route replay, indexed by move count.
/// Entry `m` is the map after the first `m` moves of the gold demonstration.
pub fn gold_replay_snapshots(
    graph: &EnvGraph,
    instance: &NavInstance,
) -> Result<Vec<TopoSnapshot>, RuntimeError> {
    let zero_features = |_: &crate::env::NodeId, _: crate::topo::NodeCategory| {
        ndarray::Array1::<f64>::zeros(1)
    };
    let heading = instance.aligned_heading(graph)?;
    let mut state = AgentState::new(instance.gold_route[0].clone(), heading);
    let mut map = init_topomap(graph, &state.node, &zero_features)?;
    let mut snapshots = vec![map.snapshot()];
    for action in &instance.gold_actions {
        if state.terminated {
            break;
        }
        let next = apply_action(graph, &state, *action)?;
        if next.node != state.node {
            map = update_on_move(&map, graph, &next.node, &zero_features)?;
            snapshots.push(map.snapshot());
        }
        state = next;
    }
    Ok(snapshots)
}

/// The combined loss of a recorded trace against its instance: the mean
/// per-step topology distance to the gold-replay map of equal move count,
/// plus the mean action cross-entropy over the aligned step prefix.
pub fn compute_loss(
    trace: &EpisodeTrace,
    instance: &NavInstance,
    graph: &EnvGraph,
    cfg: &LossConfig,
) -> Result<f64, RuntimeError> {
    let gold_maps = gold_replay_snapshots(graph, instance)?;
    let max_moves = gold_maps.len() - 1;

    let mut topo_sum = 0.0;
    for step in &trace.steps {
        let reference = &gold_maps[step.topo.step.min(max_moves)];
        topo_sum += structure_loss(&step.topo, reference);
    }
    let topo_mean = if trace.steps.is_empty() {
        0.0
    } else {
        topo_sum / trace.steps.len() as f64
    };

    let compared = trace.steps.len().min(instance.gold_actions.len());
    let mut ce_sum = 0.0;
    for (t, step) in trace.steps.iter().take(compared).enumerate() {
        let logits = step
            .logits
            .ok_or(RuntimeError::MissingLogits { step: t })?;
        ce_sum += cross_entropy(&logits, instance.gold_actions[t]);
    }
    let ce_mean = if compared == 0 {
        0.0
    } else {
        ce_sum / compared as f64
    };

    Ok(cfg.lambda1 * topo_mean + cfg.lambda2 * ce_mean)
}
