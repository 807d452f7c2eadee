//! Synthetic world generation.
//!
//! A generated world is a ring-plus-chords street graph, a set of simple
//! gold routes with exactly one rotation per planned turn, landmark phrases
//! planted at the turn nodes and the goal, template instructions referencing
//! those phrases, and per-node panoramas whose region features guarantee the
//! planted phrases score above the default verbalizer threshold at their
//! nodes while background regions stay quiet.
//!
//! Everything is drawn from one seeded stream, so equal configs produce
//! byte-identical bundles.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::vocab::{
    category_of_phrase, ADJECTIVES, HEAD_NOUNS, PLURAL_COUNTS, SINGULAR_DETERMINERS,
};
use crate::data::{
    validate_instance, BBox, DataError, InitialHeadingMode, LandmarkAnnotation, LandmarkRecord,
    NavInstance, WorldBundle,
};
use crate::env::{Action, Edge, EnvGraph, Heading, NodeId};
use crate::fusion::{encode_text, Direction, Panorama, ViewObservation};

/// Raw (pre-squash) match target injected for planted phrases. The logistic
/// of 1.9 is ≈0.870: above the default threshold of 0.8 with margin, below
/// extreme thresholds like 0.999, and low enough that two phrases sharing a
/// determiner plus one hash-collided token (cosine 2/3) stay under the
/// threshold at 1.9 * 2/3 ≈ 1.27 raw.
pub const PLANT_RAW_TARGET: f64 = 1.9;
/// Background region rows never exceed this Euclidean norm, so their raw
/// scores against unit text embeddings stay below the message threshold.
pub const DISTRACTOR_MAX_NORM: f64 = 0.5;
const BASE_REGIONS_PER_VIEW: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WorldConfig {
    pub nodes: usize,
    /// Maximum out-degree per node (ring edge plus chords).
    pub branching: usize,
    pub route_count: usize,
    pub landmarks_per_route: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            nodes: 20,
            branching: 3,
            route_count: 5,
            landmarks_per_route: 3,
            feature_dim: 32,
            seed: 0,
        }
    }
}

impl WorldConfig {
    fn validate(&self) -> Result<(), DataError> {
        if self.nodes < 2 {
            return Err(DataError::ConfigError(format!(
                "need at least 2 nodes, got {}",
                self.nodes
            )));
        }
        if self.feature_dim < 2 {
            return Err(DataError::ConfigError(format!(
                "feature_dim must be at least 2, got {}",
                self.feature_dim
            )));
        }
        if self.branching < 1 {
            return Err(DataError::ConfigError("branching must be at least 1".into()));
        }
        if self.landmarks_per_route < 1 {
            return Err(DataError::ConfigError(
                "landmarks_per_route must be at least 1".into(),
            ));
        }
        if self.landmarks_per_route >= 2 && self.branching < 2 {
            return Err(DataError::ConfigError(
                "turn landmarks need branching of at least 2".into(),
            ));
        }
        let plants = self.route_count * self.landmarks_per_route;
        let capacity = ADJECTIVES.len().min(HEAD_NOUNS.len());
        if plants > capacity {
            return Err(DataError::ConfigError(format!(
                "{plants} landmarks exceed the {capacity}-phrase vocabulary"
            )));
        }
        let min_len = (self.landmarks_per_route - 1) + 2;
        if self.nodes < min_len + 1 {
            return Err(DataError::ConfigError(format!(
                "{} nodes cannot host simple routes of {} hops",
                self.nodes, min_len
            )));
        }
        Ok(())
    }
}

struct RoutePlan {
    route: Vec<usize>,
    /// (route position, rotation) for every planned turn.
    turns: Vec<(usize, Action)>,
}

pub fn generate_world(config: &WorldConfig) -> Result<WorldBundle, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let graph = build_graph(config, &mut rng);
    let node_ids: Vec<NodeId> = graph.nodes().to_vec();

    // phrase pools drawn without replacement across the whole world
    let mut adjective_order: Vec<usize> = (0..ADJECTIVES.len()).collect();
    adjective_order.shuffle(&mut rng);
    let mut noun_order: Vec<usize> = (0..HEAD_NOUNS.len()).collect();
    noun_order.shuffle(&mut rng);
    let mut next_phrase = {
        let mut adj_at = 0;
        let mut noun_at = 0;
        move |rng: &mut ChaCha8Rng| -> String {
            let adjective = ADJECTIVES[adjective_order[adj_at]];
            let (noun, _, plural) = HEAD_NOUNS[noun_order[noun_at]];
            adj_at += 1;
            noun_at += 1;
            let determiner = if plural {
                PLURAL_COUNTS[rng.random_range(0..PLURAL_COUNTS.len())]
            } else {
                SINGULAR_DETERMINERS[rng.random_range(0..SINGULAR_DETERMINERS.len())]
            };
            format!("{determiner} {adjective} {noun}")
        }
    };

    let mut instances = Vec::new();
    let mut plants: BTreeMap<(NodeId, Direction), Vec<String>> = BTreeMap::new();
    for route_idx in 0..config.route_count {
        let plan = plan_route(config, &graph, &mut rng)?;
        let route: Vec<NodeId> = plan.route.iter().map(|&i| node_ids[i].clone()).collect();
        let gold_actions = gold_actions_for(&graph, &route)?;

        let mut annotations = Vec::new();
        let mut sentences = Vec::new();
        let mut straight_run_open = false;
        let mut turn_iter = plan.turns.iter().peekable();
        for hop in 0..route.len() - 1 {
            let turning_here = turn_iter.peek().map(|(p, _)| *p == hop).unwrap_or(false);
            if !turning_here {
                straight_run_open = true;
                continue;
            }
            let (turn_pos, rotation) = *turn_iter.next().expect("peeked");
            let phrase = next_phrase(&mut rng);
            let direction = match rotation {
                Action::Left => Direction::Left,
                Action::Right => Direction::Right,
                _ => unreachable!("turns are rotations"),
            };
            let side = match direction {
                Direction::Left => "left",
                _ => "right",
            };
            if straight_run_open {
                sentences.push("Go forward.".to_string());
                straight_run_open = false;
            }
            sentences.push(format!("Turn {side} at {phrase}."));
            annotations.push(LandmarkAnnotation {
                phrase: phrase.clone(),
                node: route[turn_pos].clone(),
                direction,
            });
            plants
                .entry((route[turn_pos].clone(), direction))
                .or_default()
                .push(phrase);
        }
        if straight_run_open {
            sentences.push("Go forward.".to_string());
        }
        let goal_phrase = next_phrase(&mut rng);
        sentences.push(format!("Stop at {goal_phrase}."));
        annotations.push(LandmarkAnnotation {
            phrase: goal_phrase.clone(),
            node: route.last().expect("route non-empty").clone(),
            direction: Direction::Front,
        });
        plants
            .entry((route.last().expect("route non-empty").clone(), Direction::Front))
            .or_default()
            .push(goal_phrase);

        instances.push(NavInstance {
            id: format!("i{route_idx:03}"),
            instruction: sentences.join(" "),
            gold_route: route,
            gold_actions,
            landmark_annotations: annotations,
            initial_heading_mode: InitialHeadingMode::Aligned,
        });
    }

    let node_observations = build_observations(config, &graph, &plants, &mut rng);

    let bundle = WorldBundle {
        graph,
        node_observations,
        instances,
    };
    for instance in &bundle.instances {
        validate_instance(&bundle.graph, instance)?;
    }
    Ok(bundle)
}

fn build_graph(config: &WorldConfig, rng: &mut ChaCha8Rng) -> EnvGraph {
    let n = config.nodes;
    let node_ids: Vec<NodeId> = (0..n).map(|i| NodeId::new(format!("n{i:03}"))).collect();
    let mut targets: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut outs = vec![(i + 1) % n];
        let extra = rng.random_range(0..config.branching);
        for _ in 0..extra {
            let to = rng.random_range(0..n);
            if to != i && !outs.contains(&to) {
                outs.push(to);
            }
        }
        targets.push(outs);
    }
    let mut edges = Vec::new();
    for (i, outs) in targets.iter().enumerate() {
        let k = outs.len();
        let base: f64 = rng.random_range(0.0..360.0);
        let slot = 360.0 / k as f64;
        for (j, &to) in outs.iter().enumerate() {
            let jitter: f64 = rng.random_range(0.0..slot * 0.5);
            edges.push(Edge {
                from: node_ids[i].clone(),
                to: node_ids[to].clone(),
                heading: Heading::new(base + slot * j as f64 + jitter),
            });
        }
    }
    EnvGraph::new(node_ids, edges).expect("generated graph is structurally valid")
}

/// Index of `heading` in the sorted outgoing cycle of `node`.
fn heading_index(outs: &[(NodeId, Heading)], heading: Heading) -> usize {
    outs.iter()
        .position(|(_, h)| *h == heading)
        .expect("heading lies on an outgoing edge")
}

/// Walks a simple path with exactly `landmarks_per_route - 1` single-rotation
/// turns, retrying from fresh starts until one fits.
fn plan_route(
    config: &WorldConfig,
    graph: &EnvGraph,
    rng: &mut ChaCha8Rng,
) -> Result<RoutePlan, DataError> {
    let n = config.nodes;
    let want_turns = config.landmarks_per_route - 1;
    let node_ids = graph.nodes();

    'attempt: for _ in 0..500 {
        let hops = want_turns + rng.random_range(2..=4);
        if hops + 1 > n {
            continue;
        }
        let start = rng.random_range(0..n);
        let mut route = vec![start];
        let mut visited: BTreeSet<usize> = BTreeSet::new();
        visited.insert(start);
        let mut turns: Vec<(usize, Action)> = Vec::new();
        let index_of = |id: &NodeId| -> usize {
            node_ids.iter().position(|x| x == id).expect("node exists")
        };

        // first hop: any outgoing edge with an unvisited target
        let outs = graph.outgoing(&node_ids[start]).expect("node exists");
        let choices: Vec<usize> = (0..outs.len())
            .filter(|&j| !visited.contains(&index_of(&outs[j].0)))
            .collect();
        if choices.is_empty() {
            continue 'attempt;
        }
        let pick = choices[rng.random_range(0..choices.len())];
        let mut heading = outs[pick].1;
        let mut here = index_of(&outs[pick].0);
        route.push(here);
        visited.insert(here);
        // arrival heading after traveling the edge
        heading = arrival_heading(graph, &node_ids[here], heading);

        let mut turns_left = want_turns;
        for hop in 1..hops {
            let outs = graph.outgoing(&node_ids[here]).expect("node exists");
            let cur_idx = heading_index(outs, heading);
            let k = outs.len();
            let straight = cur_idx;
            let left_adj = (cur_idx + k - 1) % k;
            let right_adj = (cur_idx + 1) % k;

            let mut turn_options: Vec<(usize, Action)> = Vec::new();
            if k >= 2 {
                // at out-degree 2 both rotations reach the same edge and the
                // shorter-rotation tie resolves to RIGHT
                if left_adj != straight && left_adj != right_adj {
                    if !visited.contains(&index_of(&outs[left_adj].0)) {
                        turn_options.push((left_adj, Action::Left));
                    }
                }
                if right_adj != straight && !visited.contains(&index_of(&outs[right_adj].0)) {
                    turn_options.push((right_adj, Action::Right));
                }
            }
            let straight_ok = !visited.contains(&index_of(&outs[straight].0));

            let hops_left = hops - hop;
            let must_turn = turns_left >= hops_left;
            let want_turn = turns_left > 0
                && (must_turn || rng.random_range(0.0..1.0) < turns_left as f64 / hops_left as f64);

            let (edge_idx, rotation) = if want_turn && !turn_options.is_empty() {
                let choice = turn_options[rng.random_range(0..turn_options.len())];
                turns_left -= 1;
                (choice.0, Some(choice.1))
            } else if must_turn {
                continue 'attempt;
            } else if straight_ok {
                (straight, None)
            } else if !turn_options.is_empty() && turns_left > 0 {
                let choice = turn_options[rng.random_range(0..turn_options.len())];
                turns_left -= 1;
                (choice.0, Some(choice.1))
            } else {
                continue 'attempt;
            };

            if let Some(rotation) = rotation {
                turns.push((hop, rotation));
            }
            let target = index_of(&outs[edge_idx].0);
            heading = outs[edge_idx].1;
            here = target;
            route.push(here);
            visited.insert(here);
            heading = arrival_heading(graph, &node_ids[here], heading);
        }
        if turns_left > 0 {
            continue 'attempt;
        }
        return Ok(RoutePlan { route, turns });
    }
    Err(DataError::ConfigError(
        "could not construct a feasible route; try more nodes or branching".into(),
    ))
}

/// The heading an agent holds after traveling an edge with `travel` heading
/// into `node`: nearest outgoing heading, ties to the smaller degree value.
fn arrival_heading(graph: &EnvGraph, node: &NodeId, travel: Heading) -> Heading {
    let outs = graph.outgoing(node).expect("node exists");
    outs.iter()
        .map(|(_, h)| *h)
        .min_by(|a, b| {
            travel
                .circular_distance(*a)
                .total_cmp(&travel.circular_distance(*b))
                .then(a.degrees().total_cmp(&b.degrees()))
        })
        .expect("generated graphs have no sinks")
}

/// Builds the rotation+forward action sequence that replays `route` from its
/// aligned start heading, ending with STOP.
pub(crate) fn gold_actions_for(graph: &EnvGraph, route: &[NodeId]) -> Result<Vec<Action>, DataError> {
    let mut actions = Vec::new();
    if route.len() < 2 {
        actions.push(Action::Stop);
        return Ok(actions);
    }
    let mut heading = graph
        .outgoing(&route[0])
        .ok()
        .and_then(|outs| outs.iter().find(|(to, _)| *to == route[1]).map(|(_, h)| *h))
        .ok_or_else(|| {
            DataError::InvariantViolation(format!(
                "route edge {} -> {} missing from graph",
                route[0], route[1]
            ))
        })?;

    for window in route.windows(2) {
        let (from, to) = (&window[0], &window[1]);
        let outs = graph
            .outgoing(from)
            .map_err(|e| DataError::InvariantViolation(e.to_string()))?;
        let target_idx = outs
            .iter()
            .position(|(t, _)| t == to)
            .ok_or_else(|| {
                DataError::InvariantViolation(format!("route edge {from} -> {to} missing"))
            })?;
        let cur_idx = heading_index(outs, heading);
        let k = outs.len();
        let steps_right = (target_idx + k - cur_idx) % k;
        let steps_left = (cur_idx + k - target_idx) % k;
        if steps_right <= steps_left {
            for _ in 0..steps_right {
                actions.push(Action::Right);
            }
        } else {
            for _ in 0..steps_left {
                actions.push(Action::Left);
            }
        }
        actions.push(Action::Forward);
        heading = arrival_heading(graph, to, outs[target_idx].1);
    }
    actions.push(Action::Stop);
    Ok(actions)
}

/// Panoramas for every node: quiet background regions everywhere, plus one
/// high-scoring region per planted phrase, orthogonal to nothing but its own
/// embedding direction.
fn build_observations(
    config: &WorldConfig,
    graph: &EnvGraph,
    plants: &BTreeMap<(NodeId, Direction), Vec<String>>,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<NodeId, Panorama> {
    let dim = config.feature_dim;
    let mut observations = BTreeMap::new();
    for node in graph.nodes() {
        let mut views = Vec::with_capacity(3);
        for direction in Direction::ALL {
            let planted = plants
                .get(&(node.clone(), direction))
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let rows = BASE_REGIONS_PER_VIEW + planted.len();
            let mut regions = Array2::zeros((rows, dim));
            for r in 0..BASE_REGIONS_PER_VIEW {
                let mut v: Array1<f64> = Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0));
                let norm = v.dot(&v).sqrt().max(1e-9);
                let scale: f64 = rng.random_range(0.1..DISTRACTOR_MAX_NORM);
                v *= scale / norm;
                regions.row_mut(r).assign(&v);
            }
            for (offset, phrase) in planted.iter().enumerate() {
                let text = encode_text(phrase, dim);
                regions
                    .row_mut(BASE_REGIONS_PER_VIEW + offset)
                    .assign(&(text.vector * PLANT_RAW_TARGET));
            }
            views.push(ViewObservation::new(direction, regions).expect("non-empty regions"));
        }
        let views: [ViewObservation; 3] = views.try_into().expect("three views");
        observations.insert(
            node.clone(),
            Panorama::new(views).expect("views ordered left/front/right"),
        );
    }
    observations
}

/// Synthetic annotation records for every planted landmark of a bundle.
/// Boxes are deterministic functions of the phrase, so equal bundles give
/// equal record files.
pub fn records_from_instances(bundle: &WorldBundle) -> Vec<LandmarkRecord> {
    let mut records = Vec::new();
    for instance in &bundle.instances {
        for ann in &instance.landmark_annotations {
            let h = phrase_hash(&ann.phrase);
            let x = (h % 400) as f64;
            let y = ((h >> 16) % 280) as f64;
            let w = 16.0 + ((h >> 24) % 112) as f64;
            let height = 16.0 + ((h >> 32) % 112) as f64;
            records.push(LandmarkRecord {
                image_id: format!("{}:{}:{}", instance.id, ann.node, ann.direction),
                bbox: BBox(x, y, w, height),
                caption: ann.phrase.clone(),
                category: category_of_phrase(&ann.phrase),
            });
        }
    }
    records
}

fn phrase_hash(phrase: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in phrase.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
