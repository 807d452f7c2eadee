//! Teacher-forced training of the trainable parameters (encoder chain plus
//! linear policy head) by plain full-batch gradient descent.
//!
//! Step inputs are captured once per instance by forcing the gold actions
//! through the shared episode driver; they do not depend on the trainable
//! parameters, so every epoch re-evaluates only the encoder forward/backward
//! and the policy head on frozen contexts.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{BundleError, ParamBundle};
use crate::data::{NavInstance, WorldBundle};
use crate::encoder::{encode, encode_vjp, EncoderInput, EncoderParams};
use crate::env::Action;
use crate::runtime::loss::{gold_replay_snapshots, softmax4, LossConfig};
use crate::runtime::policy::{policy_features, LinearPolicyParams};
use crate::runtime::{episode_core, Decision, Pipeline, RunConfig, RuntimeError};
use crate::topo::structure_loss;

/// Everything gradient descent updates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableParams {
    pub encoder: EncoderParams,
    pub policy: LinearPolicyParams,
}

impl TrainableParams {
    pub fn seeded(cfg: &RunConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            encoder: EncoderParams::seeded(cfg.feature_dim, cfg.policy_dim, &mut rng),
            policy: LinearPolicyParams::seeded(cfg.policy_dim, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let dim = self.encoder.dim();
        let out = self.encoder.output_dim();
        Self {
            encoder: EncoderParams::zeros(dim, out),
            policy: LinearPolicyParams {
                w: ndarray::Array2::zeros(self.policy.w.raw_dim()),
                b: Array1::zeros(self.policy.b.len()),
            },
        }
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.encoder.pack_into(&mut v);
        self.policy.pack_into(&mut v);
        v
    }

    pub fn unpack(&mut self, data: &[f64]) {
        let used = self.encoder.unpack_from(data);
        let used2 = self.policy.unpack_from(&data[used..]);
        debug_assert_eq!(used + used2, data.len());
    }

    pub fn accumulate(&mut self, other: &TrainableParams) {
        self.encoder.accumulate(&other.encoder);
        self.policy.accumulate(&other.policy);
    }

    pub fn scale(&mut self, factor: f64) {
        self.encoder.scale(factor);
        self.policy.scale(factor);
    }

    pub fn write_bundle(&self) -> ParamBundle {
        let mut bundle = ParamBundle::new();
        self.encoder.write_bundle(&mut bundle, "encoder");
        self.policy.write_bundle(&mut bundle, "policy");
        bundle
    }

    pub fn read_bundle(bundle: &ParamBundle) -> Result<Self, BundleError> {
        Ok(Self {
            encoder: EncoderParams::read_bundle(bundle, "encoder")?,
            policy: LinearPolicyParams::read_bundle(bundle, "policy")?,
        })
    }
}

/// One teacher-forced step: frozen encoder inputs plus the gold action.
pub struct StepContext {
    pub inputs: EncoderInput,
    pub flags: [f64; 3],
    pub cursor: usize,
    pub gold: Action,
}

/// One teacher-forced episode with its parameter-independent topology term.
pub struct EpisodeContext {
    pub instance_id: String,
    pub steps: Vec<StepContext>,
    pub topo_mean: f64,
}

/// Forces the gold actions through the episode driver and freezes each
/// step's encoder inputs, flags, cursor, and gold action.
pub fn build_context(
    world: &WorldBundle,
    instance: &NavInstance,
    pipeline: &Pipeline,
    cfg: &RunConfig,
) -> Result<EpisodeContext, RuntimeError> {
    let gold = instance.gold_actions.clone();
    let outcome = episode_core(world, instance, pipeline, cfg, |_, t| Decision {
        action: gold.get(t).copied().unwrap_or(Action::Stop),
        logits: None,
    })?;

    let gold_maps = gold_replay_snapshots(&world.graph, instance)?;
    let max_moves = gold_maps.len() - 1;
    let mut topo_sum = 0.0;
    let mut steps = Vec::with_capacity(outcome.records.len());
    for (record, decision) in outcome.records {
        topo_sum += structure_loss(
            &record.snapshot,
            &gold_maps[record.snapshot.step.min(max_moves)],
        );
        steps.push(StepContext {
            inputs: record.inputs,
            flags: record.flags,
            cursor: record.cursor,
            gold: decision.action,
        });
    }
    let topo_mean = if steps.is_empty() {
        0.0
    } else {
        topo_sum / steps.len() as f64
    };
    Ok(EpisodeContext {
        instance_id: instance.id.clone(),
        steps,
        topo_mean,
    })
}

/// Combined loss over teacher-forced contexts for the given parameters.
pub fn loss_forward(
    params: &TrainableParams,
    contexts: &[EpisodeContext],
    cfg: &LossConfig,
) -> Result<f64, RuntimeError> {
    if contexts.is_empty() {
        return Err(RuntimeError::ConfigError("no training contexts".into()));
    }
    let mut total = 0.0;
    for ctx in contexts {
        let mut ce_sum = 0.0;
        for step in &ctx.steps {
            let acts = encode(&step.inputs, &params.encoder)?;
            let features = policy_features(&acts.output.view(), step.flags, step.cursor);
            let logits = params.policy.logits(&features);
            ce_sum += crate::runtime::loss::cross_entropy(&logits, step.gold);
        }
        let ce_mean = if ctx.steps.is_empty() {
            0.0
        } else {
            ce_sum / ctx.steps.len() as f64
        };
        total += cfg.lambda1 * ctx.topo_mean + cfg.lambda2 * ce_mean;
    }
    Ok(total / contexts.len() as f64)
}

/// Loss plus analytic gradients w.r.t. every trainable parameter.
pub fn loss_backward(
    params: &TrainableParams,
    contexts: &[EpisodeContext],
    cfg: &LossConfig,
) -> Result<(f64, TrainableParams), RuntimeError> {
    if contexts.is_empty() {
        return Err(RuntimeError::ConfigError("no training contexts".into()));
    }
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    let episode_weight = 1.0 / contexts.len() as f64;
    let d_llm = params.encoder.output_dim();

    for ctx in contexts {
        if ctx.steps.is_empty() {
            total += cfg.lambda1 * ctx.topo_mean;
            continue;
        }
        let step_weight = episode_weight * cfg.lambda2 / ctx.steps.len() as f64;
        let mut ce_sum = 0.0;
        for step in &ctx.steps {
            let acts = encode(&step.inputs, &params.encoder)?;
            let features = policy_features(&acts.output.view(), step.flags, step.cursor);
            let logits = params.policy.logits(&features);
            ce_sum += crate::runtime::loss::cross_entropy(&logits, step.gold);

            // d(CE)/d(logits) = softmax - onehot(gold), scaled by the weight
            let probs = softmax4(&logits);
            let mut d_logits = Array1::zeros(4);
            for i in 0..4 {
                d_logits[i] = step_weight * (probs[i] - f64::from(u8::from(i == step.gold.index())));
            }

            // policy head gradients
            for i in 0..features.len() {
                for j in 0..4 {
                    grads.policy.w[[i, j]] += features[i] * d_logits[j];
                }
            }
            for j in 0..4 {
                grads.policy.b[j] += d_logits[j];
            }

            // feature gradient: only the projected-map slice flows back
            let d_features = params.policy.w.dot(&d_logits);
            let d_topo_feature = d_features.slice(ndarray::s![0..d_llm]).to_owned();
            let d_encoder = encode_vjp(&step.inputs, &params.encoder, &acts, &d_topo_feature)?;
            grads.encoder.accumulate(&d_encoder);
        }
        let ce_mean = ce_sum / ctx.steps.len() as f64;
        total += cfg.lambda1 * ctx.topo_mean + cfg.lambda2 * ce_mean;
    }
    Ok((total / contexts.len() as f64, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.5,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

pub struct TrainReport {
    pub params: TrainableParams,
    /// Loss evaluated at the start of every epoch, before that epoch's step.
    pub loss_curve: Vec<f64>,
}

/// Full-batch gradient descent on the combined loss over every instance of
/// every world. Deterministic per seed.
pub fn train_policy(
    worlds: &[WorldBundle],
    run_cfg: &RunConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainReport, RuntimeError> {
    if worlds.is_empty() {
        return Err(RuntimeError::ConfigError("no training worlds".into()));
    }
    if train_cfg.lr < 0.0 {
        return Err(RuntimeError::ConfigError(
            "learning rate must be non-negative".into(),
        ));
    }
    let pipeline = Pipeline::new(run_cfg)?;
    let mut contexts = Vec::new();
    for world in worlds {
        for instance in &world.instances {
            contexts.push(build_context(world, instance, &pipeline, run_cfg)?);
        }
    }
    if contexts.is_empty() {
        return Err(RuntimeError::ConfigError(
            "training worlds contain no instances".into(),
        ));
    }

    let mut params = TrainableParams::seeded(run_cfg, train_cfg.seed);
    let mut loss_curve = Vec::with_capacity(train_cfg.epochs);
    for _ in 0..train_cfg.epochs {
        let (loss, mut grads) = loss_backward(&params, &contexts, &train_cfg.loss)?;
        loss_curve.push(loss);
        grads.scale(-train_cfg.lr);
        params.accumulate(&grads);
    }
    Ok(TrainReport { params, loss_curve })
}
