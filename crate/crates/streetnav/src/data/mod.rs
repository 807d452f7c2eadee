//! File formats, dataset tooling, and synthetic world generation.
//!
//! On-disk layout of one world directory:
//!
//! - `graph.json` — `{"nodes":[{"id":..}], "edges":[{"from":..,"to":..,"heading":deg}]}`
//! - `instances.jsonl` — one navigation instance per line
//! - `observations.json` — per-node panorama region features
//! - `records.json` — `{"records":[{"image_id","bbox":[x,y,w,h],"caption","category"}]}`
//!
//! All files are UTF-8 and headings are decimal degrees. Loading re-checks
//! every structural invariant, including replaying each instance's gold
//! actions through the transition function.

mod generate;
pub mod vocab;

pub use generate::{generate_world, records_from_instances, WorldConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{apply_action, Action, AgentState, Edge, EnvGraph, Heading, NodeId};
use crate::fusion::{Direction, Panorama};

#[derive(Error, Debug)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}{}: {msg}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Parse {
        path: String,
        line: Option<usize>,
        msg: String,
    },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("instance `{id}`: gold actions do not replay to the gold route ({msg})")]
    RouteInconsistent { id: String, msg: String },
    #[error("invalid configuration: {0}")]
    ConfigError(String),
    #[error("dataset is empty")]
    EmptyDataset,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: Option<usize>, msg: impl fmt::Display) -> DataError {
    DataError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.to_string(),
    }
}

/// How the agent's initial heading is chosen when an episode starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialHeadingMode {
    /// A seeded random choice among the start node's outgoing headings.
    Random,
    /// The heading of the gold route's first edge.
    Aligned,
}

/// One landmark referenced by an instruction: its phrase, the route node it
/// sits at, and the view it appears in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkAnnotation {
    pub phrase: String,
    pub node: NodeId,
    pub direction: Direction,
}

/// One navigation instance: instruction text plus the gold demonstration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavInstance {
    pub id: String,
    pub instruction: String,
    pub gold_route: Vec<NodeId>,
    pub gold_actions: Vec<Action>,
    pub landmark_annotations: Vec<LandmarkAnnotation>,
    pub initial_heading_mode: InitialHeadingMode,
}

impl NavInstance {
    pub fn goal(&self) -> &NodeId {
        self.gold_route.last().expect("route is never empty")
    }

    /// The canonical start heading: the heading of the first route edge, or
    /// the smallest outgoing heading for single-node routes.
    pub fn aligned_heading(&self, graph: &EnvGraph) -> Result<Heading, DataError> {
        let start = &self.gold_route[0];
        let outs = graph
            .outgoing(start)
            .map_err(|e| DataError::InvariantViolation(e.to_string()))?;
        if self.gold_route.len() >= 2 {
            let next = &self.gold_route[1];
            outs.iter()
                .find(|(to, _)| to == next)
                .map(|(_, h)| *h)
                .ok_or_else(|| {
                    DataError::InvariantViolation(format!(
                        "route edge {start} -> {next} missing from graph"
                    ))
                })
        } else {
            outs.first().map(|(_, h)| *h).ok_or_else(|| {
                DataError::InvariantViolation(format!("start node {start} has no outgoing edges"))
            })
        }
    }
}

/// Replays `gold_actions` from the canonical start state and checks that the
/// visited node sequence is exactly `gold_route`, terminating on its last
/// node. Also checks every annotation sits on the route.
pub fn validate_instance(graph: &EnvGraph, instance: &NavInstance) -> Result<(), DataError> {
    if instance.gold_route.is_empty() {
        return Err(DataError::RouteInconsistent {
            id: instance.id.clone(),
            msg: "empty gold route".into(),
        });
    }
    for node in &instance.gold_route {
        if !graph.contains(node) {
            return Err(DataError::InvariantViolation(format!(
                "instance `{}` references unknown node `{node}`",
                instance.id
            )));
        }
    }
    let heading = instance.aligned_heading(graph)?;
    let mut state = AgentState::new(instance.gold_route[0].clone(), heading);
    let mut visited = vec![state.node.clone()];
    for action in &instance.gold_actions {
        state = apply_action(graph, &state, *action).map_err(|e| DataError::RouteInconsistent {
            id: instance.id.clone(),
            msg: e.to_string(),
        })?;
        if visited.last() != Some(&state.node) {
            visited.push(state.node.clone());
        }
    }
    if !state.terminated {
        return Err(DataError::RouteInconsistent {
            id: instance.id.clone(),
            msg: "replay does not terminate".into(),
        });
    }
    if visited != instance.gold_route {
        return Err(DataError::RouteInconsistent {
            id: instance.id.clone(),
            msg: format!(
                "replay visits {} nodes ending at `{}`, expected {} ending at `{}`",
                visited.len(),
                visited.last().expect("non-empty"),
                instance.gold_route.len(),
                instance.goal()
            ),
        });
    }
    let route_set: BTreeSet<&NodeId> = instance.gold_route.iter().collect();
    for ann in &instance.landmark_annotations {
        if !route_set.contains(&ann.node) {
            return Err(DataError::InvariantViolation(format!(
                "instance `{}`: annotation node `{}` not on the gold route",
                instance.id, ann.node
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Graph files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NodeWire {
    id: NodeId,
}

#[derive(Serialize, Deserialize)]
struct GraphWire {
    nodes: Vec<NodeWire>,
    edges: Vec<Edge>,
}

pub fn save_env_graph(path: &Path, graph: &EnvGraph) -> Result<(), DataError> {
    let wire = GraphWire {
        nodes: graph
            .nodes()
            .iter()
            .map(|id| NodeWire { id: id.clone() })
            .collect(),
        edges: graph.edges().to_vec(),
    };
    let text = serde_json::to_string_pretty(&wire).expect("graph serializes");
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn load_env_graph(path: &Path) -> Result<EnvGraph, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let wire: GraphWire = serde_json::from_str(&text).map_err(|e| parse_err(path, None, e))?;
    EnvGraph::new(
        wire.nodes.into_iter().map(|n| n.id).collect(),
        wire.edges,
    )
    .map_err(|e| DataError::InvariantViolation(e.to_string()))
}

// ---------------------------------------------------------------------------
// Instance files (JSONL)
// ---------------------------------------------------------------------------

pub fn save_instances(path: &Path, instances: &[NavInstance]) -> Result<(), DataError> {
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    for instance in instances {
        let line = serde_json::to_string(instance).expect("instance serializes");
        writeln!(file, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Loads instances and validates each against the graph, including the gold
/// action replay.
pub fn load_instances(path: &Path, graph: &EnvGraph) -> Result<Vec<NavInstance>, DataError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let instance: NavInstance =
            serde_json::from_str(&line).map_err(|e| parse_err(path, Some(idx + 1), e))?;
        validate_instance(graph, &instance)?;
        out.push(instance);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Landmark annotation records
// ---------------------------------------------------------------------------

/// The closed six-way landmark category set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LandmarkCategory {
    #[serde(rename = "traffic light")]
    TrafficLight,
    #[serde(rename = "signpost")]
    Signpost,
    #[serde(rename = "mailbox")]
    Mailbox,
    #[serde(rename = "bus stop")]
    BusStop,
    #[serde(rename = "building")]
    Building,
    #[serde(rename = "other")]
    Other,
}

impl LandmarkCategory {
    pub const ALL: [LandmarkCategory; 6] = [
        LandmarkCategory::TrafficLight,
        LandmarkCategory::Signpost,
        LandmarkCategory::Mailbox,
        LandmarkCategory::BusStop,
        LandmarkCategory::Building,
        LandmarkCategory::Other,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            LandmarkCategory::TrafficLight => "traffic light",
            LandmarkCategory::Signpost => "signpost",
            LandmarkCategory::Mailbox => "mailbox",
            LandmarkCategory::BusStop => "bus stop",
            LandmarkCategory::Building => "building",
            LandmarkCategory::Other => "other",
        }
    }
}

/// Pixel-space bounding box serialized as `[x, y, w, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox(pub f64, pub f64, pub f64, pub f64);

impl BBox {
    pub fn width(&self) -> f64 {
        self.2
    }

    pub fn height(&self) -> f64 {
        self.3
    }
}

/// One image/box/caption annotation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub image_id: String,
    pub bbox: BBox,
    pub caption: String,
    pub category: LandmarkCategory,
}

#[derive(Serialize, Deserialize)]
struct RecordsWire {
    records: Vec<LandmarkRecord>,
}

pub fn save_records(path: &Path, records: &[LandmarkRecord]) -> Result<(), DataError> {
    let wire = RecordsWire {
        records: records.to_vec(),
    };
    let text = serde_json::to_string_pretty(&wire).expect("records serialize");
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn load_records(path: &Path) -> Result<Vec<LandmarkRecord>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let wire: RecordsWire = serde_json::from_str(&text).map_err(|e| parse_err(path, None, e))?;
    for record in &wire.records {
        if record.bbox.width() <= 0.0 || record.bbox.height() <= 0.0 {
            return Err(DataError::InvariantViolation(format!(
                "record `{}` has non-positive box dimensions",
                record.image_id
            )));
        }
    }
    Ok(wire.records)
}

// ---------------------------------------------------------------------------
// Splits and statistics
// ---------------------------------------------------------------------------

/// Disjoint train/val/test record-id sets covering every record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Seeded shuffle, then floor allocation by ratio with the remainder going
/// to train.
pub fn split_records(
    records: &[LandmarkRecord],
    ratio: (usize, usize, usize),
    seed: u64,
) -> Result<SplitAssignment, DataError> {
    if records.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let total_ratio = ratio.0 + ratio.1 + ratio.2;
    if total_ratio == 0 {
        return Err(DataError::ConfigError("split ratio sums to zero".into()));
    }
    let mut ids: Vec<String> = records.iter().map(|r| r.image_id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let val_n = n * ratio.1 / total_ratio;
    let test_n = n * ratio.2 / total_ratio;
    let train_n = n - val_n - test_n;

    Ok(SplitAssignment {
        train: ids[..train_n].to_vec(),
        val: ids[train_n..train_n + val_n].to_vec(),
        test: ids[train_n + val_n..].to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub avg_caption_words: f64,
    pub category_histogram: BTreeMap<String, usize>,
}

/// Whitespace-token average caption length plus the six-way category
/// histogram (zero-filled so absent categories still show).
pub fn dataset_stats(records: &[LandmarkRecord]) -> Result<DatasetStats, DataError> {
    if records.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let total_words: usize = records
        .iter()
        .map(|r| r.caption.trim().split_whitespace().count())
        .sum();
    let mut histogram: BTreeMap<String, usize> = LandmarkCategory::ALL
        .iter()
        .map(|c| (c.label().to_string(), 0))
        .collect();
    for record in records {
        *histogram
            .get_mut(record.category.label())
            .expect("all categories present") += 1;
    }
    Ok(DatasetStats {
        avg_caption_words: total_words as f64 / records.len() as f64,
        category_histogram: histogram,
    })
}

// ---------------------------------------------------------------------------
// World bundles
// ---------------------------------------------------------------------------

/// A complete world: the graph, per-node panoramas, and its instances.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldBundle {
    pub graph: EnvGraph,
    pub node_observations: BTreeMap<NodeId, Panorama>,
    pub instances: Vec<NavInstance>,
}

pub const GRAPH_FILE: &str = "graph.json";
pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const OBSERVATIONS_FILE: &str = "observations.json";
pub const RECORDS_FILE: &str = "records.json";

#[derive(Serialize, Deserialize)]
struct ObservationsWire {
    observations: BTreeMap<NodeId, Panorama>,
}

pub fn save_world(dir: &Path, world: &WorldBundle) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    save_env_graph(&dir.join(GRAPH_FILE), &world.graph)?;
    save_instances(&dir.join(INSTANCES_FILE), &world.instances)?;
    let obs_path = dir.join(OBSERVATIONS_FILE);
    let wire = ObservationsWire {
        observations: world.node_observations.clone(),
    };
    let text = serde_json::to_string(&wire).expect("observations serialize");
    fs::write(&obs_path, text).map_err(|e| io_err(&obs_path, e))
}

pub fn load_world(dir: &Path) -> Result<WorldBundle, DataError> {
    let graph = load_env_graph(&dir.join(GRAPH_FILE))?;
    let instances = load_instances(&dir.join(INSTANCES_FILE), &graph)?;
    let obs_path = dir.join(OBSERVATIONS_FILE);
    let text = fs::read_to_string(&obs_path).map_err(|e| io_err(&obs_path, e))?;
    let wire: ObservationsWire =
        serde_json::from_str(&text).map_err(|e| parse_err(&obs_path, None, e))?;
    for node in wire.observations.keys() {
        if !graph.contains(node) {
            return Err(DataError::InvariantViolation(format!(
                "observation for unknown node `{node}`"
            )));
        }
    }
    Ok(WorldBundle {
        graph,
        node_observations: wire.observations,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Heading;

    fn node(id: &str) -> NodeId {
        NodeId::from(id)
    }

    fn tri_graph() -> EnvGraph {
        EnvGraph::new(
            vec![node("a"), node("b"), node("c")],
            vec![
                Edge {
                    from: node("a"),
                    to: node("b"),
                    heading: Heading::new(0.0),
                },
                Edge {
                    from: node("b"),
                    to: node("c"),
                    heading: Heading::new(0.0),
                },
                Edge {
                    from: node("c"),
                    to: node("a"),
                    heading: Heading::new(0.0),
                },
            ],
        )
        .unwrap()
    }

    fn simple_instance() -> NavInstance {
        NavInstance {
            id: "i0".into(),
            instruction: "Go forward. Stop at the end.".into(),
            gold_route: vec![node("a"), node("b")],
            gold_actions: vec![Action::Forward, Action::Stop],
            landmark_annotations: vec![],
            initial_heading_mode: InitialHeadingMode::Aligned,
        }
    }

    #[test]
    fn graph_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.json");
        let graph = tri_graph();
        save_env_graph(&path, &graph).unwrap();
        let loaded = load_env_graph(&path).unwrap();
        assert_eq!(loaded, graph);
        assert_eq!(loaded.nodes().len(), 3);
    }

    #[test]
    fn graph_load_rejects_unknown_edge_endpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(
            &path,
            r#"{"nodes":[{"id":"a"}],"edges":[{"from":"a","to":"ghost","heading":0.0}]}"#,
        )
        .unwrap();
        let err = load_env_graph(&path).unwrap_err();
        assert!(matches!(err, DataError::InvariantViolation(_)));
    }

    #[test]
    fn graph_load_rejects_duplicate_edge() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.json");
        fs::write(
            &path,
            r#"{"nodes":[{"id":"a"},{"id":"b"}],"edges":[
                {"from":"a","to":"b","heading":0.0},
                {"from":"a","to":"b","heading":90.0}]}"#,
        )
        .unwrap();
        let err = load_env_graph(&path).unwrap_err();
        assert!(matches!(err, DataError::InvariantViolation(_)));
    }

    #[test]
    fn graph_load_reports_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        fs::write(&path, "{ not json").unwrap();
        let err = load_env_graph(&path).unwrap_err();
        assert!(matches!(err, DataError::Parse { .. }));
    }

    #[test]
    fn instances_roundtrip_and_replay_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instances.jsonl");
        let graph = tri_graph();
        let instances = vec![simple_instance()];
        save_instances(&path, &instances).unwrap();
        let loaded = load_instances(&path, &graph).unwrap();
        assert_eq!(loaded, instances);
    }

    #[test]
    fn instances_reject_inconsistent_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instances.jsonl");
        let graph = tri_graph();
        let mut bad = simple_instance();
        // actions walk two hops but the route claims one
        bad.gold_actions = vec![Action::Forward, Action::Forward, Action::Stop];
        save_instances(&path, &[bad]).unwrap();
        let err = load_instances(&path, &graph).unwrap_err();
        assert!(matches!(err, DataError::RouteInconsistent { .. }));
    }

    #[test]
    fn instances_empty_file_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let loaded = load_instances(&path, &tri_graph()).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn action_serialization_is_uppercase() {
        let json = serde_json::to_string(&Action::Forward).unwrap();
        assert_eq!(json, r#""FORWARD""#);
    }

    #[test]
    fn records_roundtrip_and_box_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.json");
        let records = vec![LandmarkRecord {
            image_id: "img0".into(),
            bbox: BBox(4.0, 8.0, 32.0, 16.0),
            caption: "a green mailbox".into(),
            category: LandmarkCategory::Mailbox,
        }];
        save_records(&path, &records).unwrap();
        assert_eq!(load_records(&path).unwrap(), records);

        fs::write(
            &path,
            r#"{"records":[{"image_id":"x","bbox":[0,0,0,5],"caption":"c","category":"other"}]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_records(&path).unwrap_err(),
            DataError::InvariantViolation(_)
        ));
    }

    fn synthetic_records(n: usize) -> Vec<LandmarkRecord> {
        (0..n)
            .map(|i| LandmarkRecord {
                image_id: format!("img{i:05}"),
                bbox: BBox(0.0, 0.0, 10.0, 10.0),
                caption: "a thing".into(),
                category: LandmarkCategory::Other,
            })
            .collect()
    }

    #[test]
    fn split_2000_records_at_6_2_2() {
        let records = synthetic_records(2000);
        let split = split_records(&records, (6, 2, 2), 0).unwrap();
        assert_eq!(split.sizes(), (1200, 400, 400));
    }

    #[test]
    fn split_small_counts_and_remainder_to_train() {
        let split = split_records(&synthetic_records(10), (6, 2, 2), 1).unwrap();
        assert_eq!(split.sizes(), (6, 2, 2));
        let split = split_records(&synthetic_records(11), (6, 2, 2), 1).unwrap();
        assert_eq!(split.sizes(), (7, 2, 2));
    }

    #[test]
    fn split_is_deterministic_disjoint_and_covering() {
        let records = synthetic_records(123);
        let a = split_records(&records, (6, 2, 2), 42).unwrap();
        let b = split_records(&records, (6, 2, 2), 42).unwrap();
        assert_eq!(a, b);
        let c = split_records(&records, (6, 2, 2), 43).unwrap();
        assert_ne!(a, c);

        let mut all: Vec<&String> = a.train.iter().chain(&a.val).chain(&a.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 123);
    }

    #[test]
    fn split_empty_records_error() {
        assert!(matches!(
            split_records(&[], (6, 2, 2), 0),
            Err(DataError::EmptyDataset)
        ));
    }

    #[test]
    fn stats_average_and_histogram() {
        let mut records = synthetic_records(2);
        records[0].caption = "one two three".into();
        records[1].caption = "one two three four five".into();
        let stats = dataset_stats(&records).unwrap();
        assert_eq!(stats.avg_caption_words, 4.0);
        assert_eq!(stats.category_histogram["other"], 2);
        assert_eq!(stats.category_histogram["mailbox"], 0);
        assert_eq!(stats.category_histogram.len(), 6);
    }

    #[test]
    fn stats_all_same_category() {
        let mut records = synthetic_records(3);
        for r in &mut records {
            r.category = LandmarkCategory::Mailbox;
        }
        let stats = dataset_stats(&records).unwrap();
        assert_eq!(stats.category_histogram["mailbox"], 3);
        assert_eq!(stats.category_histogram["other"], 0);
    }

    #[test]
    fn stats_empty_dataset_error() {
        assert!(matches!(dataset_stats(&[]), Err(DataError::EmptyDataset)));
    }
}
