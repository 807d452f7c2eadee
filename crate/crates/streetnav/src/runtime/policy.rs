//! Decision policies: the pluggable "driver" contract behind the episode
//! loop, plus the oracle, random, and trainable linear implementations.

use ndarray::{Array1, Array2, ArrayView1};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bundle::{BundleError, ParamBundle};
use crate::env::Action;
use crate::fusion::{Direction, VerbalizedMessage};
use crate::kernels::uniform_init;

/// Slots of the landmark-cursor one-hot inside the policy feature vector.
/// Cursor positions beyond the last slot clamp into it.
pub const CURSOR_SLOTS: usize = 8;

/// Everything a policy sees at one step.
pub struct PolicyInput<'a> {
    /// Projected topology-map feature of the current step.
    pub topo_feature: ArrayView1<'a, f64>,
    /// Direction one-hot of the cursor landmark's message, zero when silent.
    pub flags: [f64; 3],
    /// All messages the verbalizer emitted this step.
    pub messages: &'a [VerbalizedMessage],
    /// Index of the next unconsumed instruction landmark.
    pub cursor: usize,
    /// Step counter within the episode.
    pub step: usize,
}

/// A chosen action, with logits when the policy is trainable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub logits: Option<[f64; 4]>,
}

pub trait DecisionPolicy {
    fn decide(&mut self, input: &PolicyInput<'_>) -> Decision;

    /// Called once per episode before the first step; `episode_seed` is the
    /// per-episode stream so parallel and serial runs agree.
    fn reset(&mut self, episode_seed: u64) {
        let _ = episode_seed;
    }
}

/// Replays a fixed action sequence, stopping once it runs out.
pub struct OraclePolicy {
    actions: Vec<Action>,
    at: usize,
}

impl OraclePolicy {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions, at: 0 }
    }
}

impl DecisionPolicy for OraclePolicy {
    fn decide(&mut self, _input: &PolicyInput<'_>) -> Decision {
        let action = self.actions.get(self.at).copied().unwrap_or(Action::Stop);
        self.at += 1;
        Decision {
            action,
            logits: None,
        }
    }

    fn reset(&mut self, _episode_seed: u64) {
        self.at = 0;
    }
}

/// Uniform random policy over the full action space.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl DecisionPolicy for RandomPolicy {
    fn decide(&mut self, _input: &PolicyInput<'_>) -> Decision {
        let action = Action::from_index(self.rng.random_range(0..4)).expect("index in range");
        Decision {
            action,
            logits: None,
        }
    }

    fn reset(&mut self, episode_seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(episode_seed ^ 0x5eed_0bad);
    }
}

/// Assembles the linear policy's input: projected map feature, message
/// direction flags, then the clamped cursor one-hot.
pub fn policy_features(
    topo_feature: &ArrayView1<f64>,
    flags: [f64; 3],
    cursor: usize,
) -> Array1<f64> {
    let d = topo_feature.len();
    let mut v = Array1::zeros(d + 3 + CURSOR_SLOTS);
    for (i, x) in topo_feature.iter().enumerate() {
        v[i] = *x;
    }
    for (i, x) in flags.iter().enumerate() {
        v[d + i] = *x;
    }
    v[d + 3 + cursor.min(CURSOR_SLOTS - 1)] = 1.0;
    v
}

pub fn direction_flags(direction: Option<Direction>) -> [f64; 3] {
    let mut flags = [0.0; 3];
    if let Some(d) = direction {
        flags[d.index()] = 1.0;
    }
    flags
}

/// Affine map from the policy features to the four action logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPolicyParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl LinearPolicyParams {
    pub fn feature_dim(topo_dim: usize) -> usize {
        topo_dim + 3 + CURSOR_SLOTS
    }

    pub fn seeded(topo_dim: usize, rng: &mut impl Rng) -> Self {
        let f = Self::feature_dim(topo_dim);
        Self {
            w: uniform_init(f, 4, rng),
            b: Array1::zeros(4),
        }
    }

    pub fn zeros(topo_dim: usize) -> Self {
        let f = Self::feature_dim(topo_dim);
        Self {
            w: Array2::zeros((f, 4)),
            b: Array1::zeros(4),
        }
    }

    pub fn logits(&self, features: &Array1<f64>) -> [f64; 4] {
        let z = features.dot(&self.w) + &self.b;
        [z[0], z[1], z[2], z[3]]
    }

    pub fn pack_into(&self, vec: &mut Vec<f64>) {
        vec.extend(self.w.iter());
        vec.extend(self.b.iter());
    }

    pub fn unpack_from(&mut self, data: &[f64]) -> usize {
        let mut at = 0;
        for dst in self.w.iter_mut() {
            *dst = data[at];
            at += 1;
        }
        for dst in self.b.iter_mut() {
            *dst = data[at];
            at += 1;
        }
        at
    }

    pub fn accumulate(&mut self, other: &LinearPolicyParams) {
        self.w += &other.w;
        self.b += &other.b;
    }

    pub fn scale(&mut self, factor: f64) {
        self.w *= factor;
        self.b *= factor;
    }

    pub fn write_bundle(&self, bundle: &mut ParamBundle, prefix: &str) {
        bundle.insert_matrix(&format!("{prefix}.w"), &self.w);
        bundle.insert_vector(&format!("{prefix}.b"), &self.b);
    }

    pub fn read_bundle(bundle: &ParamBundle, prefix: &str) -> Result<Self, BundleError> {
        Ok(Self {
            w: bundle.matrix(&format!("{prefix}.w"))?,
            b: bundle.vector(&format!("{prefix}.b"))?,
        })
    }
}

/// Greedy trainable policy: argmax over the affine logits, ties to the
/// lowest action index.
pub struct LinearPolicy {
    pub params: LinearPolicyParams,
}

impl LinearPolicy {
    pub fn new(params: LinearPolicyParams) -> Self {
        Self { params }
    }
}

impl DecisionPolicy for LinearPolicy {
    fn decide(&mut self, input: &PolicyInput<'_>) -> Decision {
        let features = policy_features(&input.topo_feature, input.flags, input.cursor);
        let logits = self.params.logits(&features);
        let mut best = 0;
        for i in 1..4 {
            if logits[i] > logits[best] {
                best = i;
            }
        }
        Decision {
            action: Action::from_index(best).expect("index in range"),
            logits: Some(logits),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_input<'a>(feature: &'a Array1<f64>, flags: [f64; 3]) -> PolicyInput<'a> {
        PolicyInput {
            topo_feature: feature.view(),
            flags,
            messages: &[],
            cursor: 0,
            step: 0,
        }
    }

    #[test]
    fn oracle_replays_and_falls_back_to_stop() {
        let mut policy = OraclePolicy::new(vec![Action::Forward, Action::Left]);
        let feature = Array1::zeros(4);
        let input = dummy_input(&feature, [0.0; 3]);
        assert_eq!(policy.decide(&input).action, Action::Forward);
        assert_eq!(policy.decide(&input).action, Action::Left);
        assert_eq!(policy.decide(&input).action, Action::Stop);
        policy.reset(0);
        assert_eq!(policy.decide(&input).action, Action::Forward);
    }

    #[test]
    fn random_policy_is_reproducible_per_seed() {
        let feature = Array1::zeros(4);
        let input = dummy_input(&feature, [0.0; 3]);
        let mut a = RandomPolicy::new(0);
        let mut b = RandomPolicy::new(0);
        a.reset(99);
        b.reset(99);
        for _ in 0..32 {
            assert_eq!(a.decide(&input).action, b.decide(&input).action);
        }
    }

    #[test]
    fn feature_layout_and_cursor_clamp() {
        let topo = Array1::from_vec(vec![0.5, -0.5]);
        let f = policy_features(&topo.view(), [0.0, 1.0, 0.0], 2);
        assert_eq!(f.len(), 2 + 3 + CURSOR_SLOTS);
        assert_eq!(f[0], 0.5);
        assert_eq!(f[3], 1.0); // front flag
        assert_eq!(f[2 + 3 + 2], 1.0);

        let clamped = policy_features(&topo.view(), [0.0; 3], 500);
        assert_eq!(clamped[2 + 3 + CURSOR_SLOTS - 1], 1.0);
    }

    #[test]
    fn linear_policy_argmax_ties_to_lowest_index() {
        let topo_dim = 2;
        let mut params = LinearPolicyParams::zeros(topo_dim);
        // all logits zero: tie resolves to FORWARD (index 0)
        let mut policy = LinearPolicy::new(params.clone());
        let feature = Array1::zeros(topo_dim);
        let decision = policy.decide(&dummy_input(&feature, [0.0; 3]));
        assert_eq!(decision.action, Action::Forward);
        assert_eq!(decision.logits, Some([0.0; 4]));

        // bias toward STOP wins
        params.b[3] = 1.0;
        let mut policy = LinearPolicy::new(params);
        let decision = policy.decide(&dummy_input(&feature, [0.0; 3]));
        assert_eq!(decision.action, Action::Stop);
    }

    #[test]
    fn linear_params_pack_roundtrip_and_bundle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = LinearPolicyParams::seeded(5, &mut rng);
        let mut flat = Vec::new();
        params.pack_into(&mut flat);
        let mut rebuilt = LinearPolicyParams::zeros(5);
        assert_eq!(rebuilt.unpack_from(&flat), flat.len());
        assert_eq!(rebuilt, params);

        let mut bundle = ParamBundle::new();
        params.write_bundle(&mut bundle, "policy");
        let parsed = LinearPolicyParams::read_bundle(&bundle, "policy").unwrap();
        assert_eq!(parsed, params);
    }
}
