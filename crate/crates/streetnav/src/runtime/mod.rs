//! The episode loop binding every component: extraction once up front, then
//! per step recognize → grow map → encode → decide → transition, recording a
//! replayable trace. Teacher-forced training and the combined loss live in
//! [`train`] and [`loss`].

pub mod loss;
pub mod policy;
pub mod train;

pub use loss::{compute_loss, cross_entropy, LossConfig};
pub use policy::{
    direction_flags, policy_features, Decision, DecisionPolicy, LinearPolicy, LinearPolicyParams,
    OraclePolicy, PolicyInput, RandomPolicy, CURSOR_SLOTS,
};
pub use train::{build_context, train_policy, EpisodeContext, TrainConfig, TrainableParams};

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, InitialHeadingMode, NavInstance, WorldBundle};
use crate::encoder::{encode, EncoderInput, EncoderParams};
use crate::env::{apply_action, Action, AgentState, EnvError, NodeId};
use crate::extract::{extract_landmarks, Lexicon};
use crate::fusion::{
    recognize, recognize_noisy, FusionError, FusionParams, ScoreReport, VerbalizedMessage,
    VerbalizerConfig,
};
use crate::kernels::KernelError;
use crate::topo::{init_topomap, update_on_move, to_adjacency, NodeCategory, TopoError, TopoSnapshot};

#[derive(Error, Debug)]
pub enum RuntimeError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Topo(#[from] TopoError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("component dimensions disagree: {0}")]
    ComponentDimMismatch(String),
    #[error("no observation recorded for node `{0}`")]
    MissingObservation(NodeId),
    #[error("step {step} carries no action logits")]
    MissingLogits { step: usize },
    #[error("invalid configuration: {0}")]
    ConfigError(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("trace parse error in {path} line {line}: {msg}")]
    TraceParse {
        path: String,
        line: usize,
        msg: String,
    },
}

/// Run-wide knobs; defaults mirror the evaluated configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Verbalizer message threshold.
    pub tau: f64,
    /// Fusion rounds of the landmark scorer.
    pub rounds: usize,
    /// Region/text/map feature dimension.
    pub feature_dim: usize,
    /// Output dimension of the encoder projection consumed by policies.
    pub policy_dim: usize,
    /// Episode cap; `None` means `2 * |gold route| + 10`.
    pub max_steps: Option<usize>,
    /// Standard deviation of raw-score noise injected into the scorer.
    pub noise_sigma: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tau: 0.8,
            rounds: 2,
            feature_dim: 32,
            policy_dim: 16,
            max_steps: None,
            noise_sigma: None,
        }
    }
}

impl RunConfig {
    pub fn max_steps_for(&self, instance: &NavInstance) -> usize {
        self.max_steps
            .unwrap_or(2 * instance.gold_route.len() + 10)
    }
}

/// The frozen components an episode runs with. The fusion stack defaults to
/// the identity configuration, under which a match score is exactly the
/// logistic of the best region/text dot product — the regime the world
/// generator calibrates its planted features against.
pub struct Pipeline {
    pub lexicon: Lexicon,
    pub fusion: FusionParams,
    pub verbalizer: VerbalizerConfig,
    pub encoder: EncoderParams,
    /// Fixed projection from [mean region feature ‖ category one-hot] to the
    /// map feature space; deterministic per dimension, never trained.
    pub feature_proj: Array2<f64>,
}

impl Pipeline {
    pub fn new(cfg: &RunConfig) -> Result<Self, RuntimeError> {
        let verbalizer = VerbalizerConfig::new(cfg.tau)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Self {
            lexicon: crate::data::vocab::standard_lexicon(),
            fusion: FusionParams::identity(cfg.feature_dim, cfg.rounds),
            verbalizer,
            encoder: EncoderParams::seeded(cfg.feature_dim, cfg.policy_dim, &mut rng),
            feature_proj: feature_projection(cfg.feature_dim),
        })
    }

    fn validate(&self, cfg: &RunConfig, world: &WorldBundle) -> Result<(), RuntimeError> {
        if self.fusion.dim != cfg.feature_dim {
            return Err(RuntimeError::ComponentDimMismatch(format!(
                "fusion dim {} vs feature dim {}",
                self.fusion.dim, cfg.feature_dim
            )));
        }
        if self.encoder.dim() != cfg.feature_dim {
            return Err(RuntimeError::ComponentDimMismatch(format!(
                "encoder dim {} vs feature dim {}",
                self.encoder.dim(),
                cfg.feature_dim
            )));
        }
        if self.feature_proj.nrows() != cfg.feature_dim + 3
            || self.feature_proj.ncols() != cfg.feature_dim
        {
            return Err(RuntimeError::ComponentDimMismatch(
                "feature projection shape".into(),
            ));
        }
        for node in world.graph.nodes() {
            match world.node_observations.get(node) {
                None => return Err(RuntimeError::MissingObservation(node.clone())),
                Some(pano) => {
                    if pano.views()[0].dim() != cfg.feature_dim {
                        return Err(RuntimeError::ComponentDimMismatch(format!(
                            "observation dim {} at `{node}` vs feature dim {}",
                            pano.views()[0].dim(),
                            cfg.feature_dim
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Deterministic, never-trained projection used for map node features; the
/// same dimensions always give the same matrix so gold-replay maps agree
/// across processes.
pub fn feature_projection(dim: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57ee_7f00du64 ^ dim as u64);
    crate::kernels::uniform_init(dim + 3, dim, &mut rng)
}

/// Stable per-episode seed derived from the run seed and instance id.
pub fn episode_seed(run_seed: u64, instance_id: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64 ^ run_seed;
    for b in instance_id.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Stopped,
    MaxSteps,
    DeadEnd,
}

/// One recorded step: the state the decision was taken in, what the agent
/// saw, and what it did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub state: AgentState,
    pub topo: TopoSnapshot,
    pub scores: ScoreReport,
    pub messages: Vec<VerbalizedMessage>,
    pub cursor: usize,
    pub action: Action,
    pub logits: Option<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub instance_id: String,
    pub steps: Vec<TraceStep>,
    pub terminal_reason: TerminalReason,
    pub final_state: AgentState,
}

impl EpisodeTrace {
    pub fn final_node(&self) -> &NodeId {
        &self.final_state.node
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Everything assembled for one step before the decision is taken.
pub(crate) struct StepRecord {
    pub inputs: EncoderInput,
    pub report: ScoreReport,
    pub messages: Vec<VerbalizedMessage>,
    pub flags: [f64; 3],
    pub cursor: usize,
    pub snapshot: TopoSnapshot,
    pub state: AgentState,
    pub topo_feature: Array1<f64>,
}

pub(crate) struct EpisodeOutcomeRaw {
    pub records: Vec<(StepRecord, Decision)>,
    pub terminal_reason: TerminalReason,
    pub final_state: AgentState,
}

/// The shared episode driver. `decide` sees each assembled step and picks
/// the action; both live policies and teacher forcing run through here so
/// their step semantics cannot drift apart.
pub(crate) fn episode_core(
    world: &WorldBundle,
    instance: &NavInstance,
    pipeline: &Pipeline,
    cfg: &RunConfig,
    mut decide: impl FnMut(&StepRecord, usize) -> Decision,
) -> Result<EpisodeOutcomeRaw, RuntimeError> {
    pipeline.validate(cfg, world)?;
    let landmarks = extract_landmarks(&instance.instruction, &pipeline.lexicon);
    let seed = episode_seed(cfg.seed, &instance.id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let start = instance.gold_route[0].clone();
    let heading = match instance.initial_heading_mode {
        InitialHeadingMode::Aligned => instance.aligned_heading(&world.graph)?,
        InitialHeadingMode::Random => {
            let outs = world.graph.outgoing(&start)?;
            if outs.is_empty() {
                return Err(RuntimeError::Env(EnvError::DeadEnd { node: start }));
            }
            outs[rng.random_range(0..outs.len())].1
        }
    };
    let mut state = AgentState::new(start.clone(), heading);

    let proj = &pipeline.feature_proj;
    let feature_init = |node: &NodeId, category: NodeCategory| -> Array1<f64> {
        let mean = world
            .node_observations
            .get(node)
            .map(|p| p.mean_region_feature())
            .unwrap_or_else(|| Array1::zeros(proj.nrows() - 3));
        let mut input = Array1::zeros(proj.nrows());
        for (i, v) in mean.iter().enumerate() {
            input[i] = *v;
        }
        let one_hot = category.one_hot();
        for (i, v) in one_hot.iter().enumerate() {
            input[mean.len() + i] = *v;
        }
        input.dot(proj)
    };

    let mut map = init_topomap(&world.graph, &start, &feature_init)?;
    let max_steps = cfg.max_steps_for(instance);
    let mut cursor = 0usize;
    let mut records: Vec<(StepRecord, Decision)> = Vec::new();
    let mut terminal: Option<(TerminalReason, AgentState)> = None;

    for t in 0..max_steps {
        let pano = world
            .node_observations
            .get(&state.node)
            .ok_or_else(|| RuntimeError::MissingObservation(state.node.clone()))?;

        let (report, messages) = match cfg.noise_sigma {
            Some(sigma) => recognize_noisy(
                pano,
                &landmarks,
                &pipeline.fusion,
                &pipeline.verbalizer,
                sigma,
                &mut rng,
            )?,
            None => recognize(pano, &landmarks, &pipeline.fusion, &pipeline.verbalizer)?,
        };

        let cursor_message = landmarks
            .get(cursor)
            .and_then(|phrase| messages.iter().find(|m| &m.phrase == phrase));
        let flags = direction_flags(cursor_message.map(|m| m.direction));
        let cursor_fired = cursor_message.is_some();

        let inputs = EncoderInput {
            node_features: map.feature_matrix(),
            neighbor_sets: map.neighbor_sets(),
            a_norm: to_adjacency(&map, true).matrix,
            image_regions: pano.stacked_regions(),
        };
        let acts = encode(&inputs, &pipeline.encoder)?;

        let record = StepRecord {
            inputs,
            report,
            messages,
            flags,
            cursor,
            snapshot: map.snapshot(),
            state: state.clone(),
            topo_feature: acts.output.clone(),
        };
        let decision = decide(&record, t);
        let action = decision.action;
        records.push((record, decision));

        match apply_action(&world.graph, &state, action) {
            Ok(next) if next.terminated => {
                terminal = Some((TerminalReason::Stopped, next));
                break;
            }
            Ok(next) => {
                let moved = next.node != state.node;
                state = next;
                if moved {
                    map = update_on_move(&map, &world.graph, &state.node, &feature_init)?;
                }
            }
            Err(EnvError::DeadEnd { node }) => {
                let final_state = AgentState {
                    node: node.clone(),
                    heading: state.heading,
                    terminated: true,
                };
                terminal = Some((TerminalReason::DeadEnd, final_state));
                break;
            }
            Err(e) => return Err(RuntimeError::Env(e)),
        }
        if cursor_fired && action != Action::Stop {
            cursor += 1;
        }
    }

    let (terminal_reason, final_state) = terminal.unwrap_or((TerminalReason::MaxSteps, state));
    Ok(EpisodeOutcomeRaw {
        records,
        terminal_reason,
        final_state,
    })
}

/// Runs one episode under a live policy and records the trace.
pub fn run_episode(
    world: &WorldBundle,
    instance: &NavInstance,
    pipeline: &Pipeline,
    policy: &mut dyn DecisionPolicy,
    cfg: &RunConfig,
) -> Result<EpisodeTrace, RuntimeError> {
    policy.reset(episode_seed(cfg.seed, &instance.id));
    let outcome = episode_core(world, instance, pipeline, cfg, |record, step| {
        policy.decide(&PolicyInput {
            topo_feature: record.topo_feature.view(),
            flags: record.flags,
            messages: &record.messages,
            cursor: record.cursor,
            step,
        })
    })?;
    let steps = outcome
        .records
        .into_iter()
        .enumerate()
        .map(|(t, (record, decision))| TraceStep {
            t,
            state: record.state,
            topo: record.snapshot,
            scores: record.report,
            messages: record.messages,
            cursor: record.cursor,
            action: decision.action,
            logits: decision.logits,
        })
        .collect();
    Ok(EpisodeTrace {
        instance_id: instance.id.clone(),
        steps,
        terminal_reason: outcome.terminal_reason,
        final_state: outcome.final_state,
    })
}

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub instance_id: String,
    pub terminal_reason: TerminalReason,
    pub success: bool,
    pub steps: usize,
    pub final_state: AgentState,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine {
    Step(TraceStep),
    Footer(TraceFooter),
}

/// Writes one step per line plus a footer carrying the outcome flags.
pub fn write_trace(path: &Path, trace: &EpisodeTrace, success: bool) -> Result<(), RuntimeError> {
    let io_err = |source: std::io::Error| RuntimeError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    for step in &trace.steps {
        let line = serde_json::to_string(&TraceLine::Step(step.clone())).expect("step serializes");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    let footer = TraceFooter {
        instance_id: trace.instance_id.clone(),
        terminal_reason: trace.terminal_reason,
        success,
        steps: trace.steps.len(),
        final_state: trace.final_state.clone(),
    };
    let line = serde_json::to_string(&TraceLine::Footer(footer)).expect("footer serializes");
    writeln!(file, "{line}").map_err(io_err)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<(EpisodeTrace, TraceFooter), RuntimeError> {
    let io_err = |source: std::io::Error| RuntimeError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let reader = BufReader::new(file);
    let mut steps = Vec::new();
    let mut footer = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine =
            serde_json::from_str(&line).map_err(|e| RuntimeError::TraceParse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        match parsed {
            TraceLine::Step(step) => steps.push(step),
            TraceLine::Footer(f) => footer = Some(f),
        }
    }
    let footer = footer.ok_or_else(|| RuntimeError::TraceParse {
        path: path.display().to_string(),
        line: 0,
        msg: "missing footer record".into(),
    })?;
    let trace = EpisodeTrace {
        instance_id: footer.instance_id.clone(),
        steps,
        terminal_reason: footer.terminal_reason,
        final_state: footer.final_state.clone(),
    };
    Ok((trace, footer))
}
