//! Region/text feature fusion, landmark match scoring, and verbalization.
//!
//! A panorama is three 60° views (left, front, right), each carrying an
//! N×d matrix of region features. Landmark phrases are embedded with a
//! deterministic signed token-hash bag encoder. Scoring runs R rounds of
//! bidirectional cross-attention plus residual feedforward refinement over
//! (regions, text), then takes the maximum region/text dot product through
//! a logistic squash so thresholds live in (0, 1). The verbalizer turns
//! above-threshold scores into templated messages for the decision policy.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::extract::LandmarkSet;
use crate::kernels::{self, cross_attention, AttentionParams, KernelError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum FusionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("panorama must have exactly one {0} view")]
    BadPanorama(Direction),
    #[error("region matrix must have at least one row")]
    EmptyRegions,
    #[error("threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
}

impl From<KernelError> for FusionError {
    fn from(e: KernelError) -> Self {
        FusionError::ShapeMismatch(e.to_string())
    }
}

/// The three view directions of a panorama, in fixed left/front/right order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Front,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Left, Direction::Front, Direction::Right];

    pub fn index(&self) -> usize {
        match self {
            Direction::Left => 0,
            Direction::Front => 1,
            Direction::Right => 2,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::Left => "left",
            Direction::Front => "front",
            Direction::Right => "right",
        };
        f.write_str(s)
    }
}

/// Region features of one 60° view: row i is one region's d-vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewObservation {
    pub direction: Direction,
    pub regions: Array2<f64>,
}

impl ViewObservation {
    pub fn new(direction: Direction, regions: Array2<f64>) -> Result<Self, FusionError> {
        if regions.nrows() == 0 {
            return Err(FusionError::EmptyRegions);
        }
        if regions.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::ShapeMismatch(
                "region features must be finite".into(),
            ));
        }
        Ok(Self { direction, regions })
    }

    pub fn region_count(&self) -> usize {
        self.regions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.regions.ncols()
    }
}

#[derive(Serialize, Deserialize)]
struct ViewWire {
    direction: Direction,
    regions: Vec<Vec<f64>>,
}

impl Serialize for ViewObservation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let regions = self
            .regions
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect();
        ViewWire {
            direction: self.direction,
            regions,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ViewObservation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = ViewWire::deserialize(deserializer)?;
        if wire.regions.is_empty() {
            return Err(D::Error::custom("view must have at least one region"));
        }
        let cols = wire.regions[0].len();
        if cols == 0 || wire.regions.iter().any(|r| r.len() != cols) {
            return Err(D::Error::custom("ragged region matrix"));
        }
        let flat: Vec<f64> = wire.regions.into_iter().flatten().collect();
        let regions = Array2::from_shape_vec((flat.len() / cols, cols), flat)
            .map_err(|e| D::Error::custom(e.to_string()))?;
        ViewObservation::new(wire.direction, regions).map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// A node's observation: exactly one view per direction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Panorama {
    views: [ViewObservation; 3],
}

impl Panorama {
    pub fn new(views: [ViewObservation; 3]) -> Result<Self, FusionError> {
        for (i, dir) in Direction::ALL.iter().enumerate() {
            if views[i].direction != *dir {
                return Err(FusionError::BadPanorama(*dir));
            }
        }
        Ok(Self { views })
    }

    pub fn view(&self, direction: Direction) -> &ViewObservation {
        &self.views[direction.index()]
    }

    pub fn views(&self) -> &[ViewObservation; 3] {
        &self.views
    }

    /// All region rows of all three views stacked into one matrix.
    pub fn stacked_regions(&self) -> Array2<f64> {
        let dim = self.views[0].dim();
        let total: usize = self.views.iter().map(|v| v.region_count()).sum();
        let mut out = Array2::zeros((total, dim));
        let mut at = 0;
        for view in &self.views {
            for row in view.regions.rows() {
                out.row_mut(at).assign(&row);
                at += 1;
            }
        }
        out
    }

    /// Mean of every region row across all three views.
    pub fn mean_region_feature(&self) -> Array1<f64> {
        let stacked = self.stacked_regions();
        let n = stacked.nrows() as f64;
        let mut mean = Array1::zeros(stacked.ncols());
        for row in stacked.rows() {
            mean = mean + &row;
        }
        mean / n
    }
}

impl<'de> Deserialize<'de> for Panorama {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            views: Vec<ViewObservation>,
        }
        let wire = Wire::deserialize(deserializer)?;
        let views: [ViewObservation; 3] = wire
            .views
            .try_into()
            .map_err(|_| D::Error::custom("panorama must have exactly 3 views"))?;
        Panorama::new(views).map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// Unit-norm text embedding of one landmark phrase.
#[derive(Clone, Debug, PartialEq)]
pub struct TextFeature {
    pub vector: Array1<f64>,
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut hash = 0xcbf29ce484222325u64 ^ seed;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic signed token-hash bag embedding, L2-normalized.
///
/// Each whitespace token lands in bucket `h1 mod d` with sign from a second
/// hash, so distinct token multisets give distinct directions with high
/// probability while identical phrases always embed identically.
pub fn encode_text(phrase: &str, dim: usize) -> TextFeature {
    let mut v: Array1<f64> = Array1::zeros(dim);
    for token in phrase.split_whitespace() {
        let token = token.to_lowercase();
        let bucket = (fnv1a(token.as_bytes(), 0x9e37) % dim as u64) as usize;
        let sign = if fnv1a(token.as_bytes(), 0x85eb) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        v[bucket] += sign;
    }
    let norm = v.dot(&v).sqrt();
    if norm < 1e-12 {
        // all tokens cancelled (or empty phrase): fall back to a whole-phrase bucket
        let bucket = (fnv1a(phrase.as_bytes(), 0xc2b2) % dim as u64) as usize;
        v.fill(0.0);
        v[bucket] = 1.0;
        return TextFeature { vector: v };
    }
    TextFeature { vector: v / norm }
}

/// One residual feedforward refinement block `z + tanh(z W1 + b1) W2 + b2`,
/// applied row-wise. With all-zero weights it is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct FfParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl FfParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            w1: Array2::zeros((dim, dim)),
            b1: Array1::zeros(dim),
            w2: Array2::zeros((dim, dim)),
            b2: Array1::zeros(dim),
        }
    }

    pub fn seeded(dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: kernels::uniform_init(dim, dim, rng),
            b1: Array1::zeros(dim),
            w2: kernels::uniform_init(dim, dim, rng),
            b2: Array1::zeros(dim),
        }
    }

    fn apply(&self, z: &Array2<f64>) -> Array2<f64> {
        let hidden = (z.dot(&self.w1) + &self.b1).mapv(f64::tanh);
        z + &(hidden.dot(&self.w2) + &self.b2)
    }
}

/// Parameters of one fusion round: a shared attention projection used in
/// both directions plus per-modality feedforward refiners.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionRound {
    pub attn: AttentionParams,
    pub ff_visual: FfParams,
    pub ff_text: FfParams,
}

/// The full R-round fusion stack.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub dim: usize,
    pub rounds: Vec<FusionRound>,
}

impl FusionParams {
    /// Identity-configured stack: uniform attention contributes zero value
    /// vectors and the feedforward blocks pass features through unchanged,
    /// so the final score reduces to the plain max region/text dot product.
    pub fn identity(dim: usize, rounds: usize) -> Self {
        Self {
            dim,
            rounds: (0..rounds)
                .map(|_| FusionRound {
                    attn: AttentionParams::zeros(dim),
                    ff_visual: FfParams::identity(dim),
                    ff_text: FfParams::identity(dim),
                })
                .collect(),
        }
    }

    pub fn seeded(dim: usize, rounds: usize, rng: &mut impl Rng) -> Self {
        Self {
            dim,
            rounds: (0..rounds)
                .map(|_| FusionRound {
                    attn: AttentionParams::seeded(dim, rng),
                    ff_visual: FfParams::seeded(dim, rng),
                    ff_text: FfParams::seeded(dim, rng),
                })
                .collect(),
        }
    }
}

/// One bidirectional fusion round over region rows `o` and text vector `b`.
pub fn fuse_round(
    o: &Array2<f64>,
    b: &Array1<f64>,
    round: &FusionRound,
) -> Result<(Array2<f64>, Array1<f64>), FusionError> {
    if o.ncols() != b.len() {
        return Err(FusionError::ShapeMismatch(format!(
            "regions dim {} vs text dim {}",
            o.ncols(),
            b.len()
        )));
    }
    let b_mat = b.clone().insert_axis(ndarray::Axis(0));
    let o_tilde = cross_attention(o, &b_mat, &round.attn)?;
    let b_tilde = cross_attention(&b_mat, o, &round.attn)?;
    let o_next = round.ff_visual.apply(&(o + &o_tilde));
    let b_next = round.ff_text.apply(&(&b_mat + &b_tilde));
    Ok((o_next, b_next.row(0).to_owned()))
}

/// Raw (pre-squash) match: R fusion rounds, then the maximum dot product of
/// a region row with the text vector. Ties break to the lowest row index.
pub fn raw_match(
    view: &ViewObservation,
    text: &TextFeature,
    params: &FusionParams,
) -> Result<(f64, usize), FusionError> {
    if view.dim() != text.vector.len() || view.dim() != params.dim {
        return Err(FusionError::ShapeMismatch(format!(
            "view dim {}, text dim {}, fusion dim {}",
            view.dim(),
            text.vector.len(),
            params.dim
        )));
    }
    let mut o = view.regions.clone();
    let mut b = text.vector.clone();
    for round in &params.rounds {
        let (o2, b2) = fuse_round(&o, &b, round)?;
        o = o2;
        b = b2;
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0;
    for (i, row) in o.rows().into_iter().enumerate() {
        let dot = row.dot(&b);
        if dot > best {
            best = dot;
            best_idx = i;
        }
    }
    Ok((best, best_idx))
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Match score in (0, 1): the logistic squash of [`raw_match`].
pub fn match_score(
    view: &ViewObservation,
    text: &TextFeature,
    params: &FusionParams,
) -> Result<(f64, usize), FusionError> {
    let (raw, idx) = raw_match(view, text, params)?;
    Ok((logistic(raw), idx))
}

/// Message threshold of the verbalizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerbalizerConfig {
    pub tau: f64,
}

impl Default for VerbalizerConfig {
    fn default() -> Self {
        Self { tau: 0.8 }
    }
}

impl VerbalizerConfig {
    pub fn new(tau: f64) -> Result<Self, FusionError> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(FusionError::BadThreshold(tau));
        }
        Ok(Self { tau })
    }
}

/// Score of one (landmark, direction) pair with its best region row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub phrase: String,
    pub direction: Direction,
    pub score: f64,
    pub argmax_region: usize,
}

/// All (landmark, direction) scores of one recognition pass, landmark-major
/// in left/front/right order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreReport {
    pub fn score_of(&self, phrase: &str, direction: Direction) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.phrase == phrase && e.direction == direction)
            .map(|e| e.score)
    }
}

/// A templated message emitted for an above-threshold landmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerbalizedMessage {
    pub phrase: String,
    pub direction: Direction,
    pub text: String,
}

impl VerbalizedMessage {
    fn new(phrase: &str, direction: Direction) -> Self {
        Self {
            phrase: phrase.to_string(),
            direction,
            text: format!("There is [{phrase}] on your [{direction}]"),
        }
    }
}

/// Scores every landmark against every view and emits at most one message
/// per landmark: its best-direction score, when strictly above `tau`.
pub fn recognize(
    panorama: &Panorama,
    landmarks: &LandmarkSet,
    params: &FusionParams,
    cfg: &VerbalizerConfig,
) -> Result<(ScoreReport, Vec<VerbalizedMessage>), FusionError> {
    recognize_inner(panorama, landmarks, params, cfg, |raw| raw)
}

/// [`recognize`] with zero-mean Gaussian noise of deviation `sigma` added to
/// each raw score before the logistic squash; used to probe threshold
/// error modes. Noise is drawn landmark-major, direction-minor, from the
/// caller's stream, so identical streams perturb identically regardless of
/// the threshold.
pub fn recognize_noisy(
    panorama: &Panorama,
    landmarks: &LandmarkSet,
    params: &FusionParams,
    cfg: &VerbalizerConfig,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<(ScoreReport, Vec<VerbalizedMessage>), FusionError> {
    let mut draws = Vec::with_capacity(landmarks.len() * 3);
    for _ in 0..landmarks.len() * 3 {
        draws.push(sigma * gaussian(rng));
    }
    let mut at = 0;
    recognize_inner(panorama, landmarks, params, cfg, move |raw| {
        let noisy = raw + draws[at];
        at += 1;
        noisy
    })
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller from two uniform draws
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn recognize_inner(
    panorama: &Panorama,
    landmarks: &LandmarkSet,
    params: &FusionParams,
    cfg: &VerbalizerConfig,
    mut perturb: impl FnMut(f64) -> f64,
) -> Result<(ScoreReport, Vec<VerbalizedMessage>), FusionError> {
    let mut report = ScoreReport::default();
    let mut messages = Vec::new();
    for phrase in landmarks.phrases() {
        let text = encode_text(phrase, params.dim);
        let mut best: Option<(f64, Direction)> = None;
        for direction in Direction::ALL {
            let view = panorama.view(direction);
            let (raw, argmax_region) = raw_match(view, &text, params)?;
            let score = logistic(perturb(raw));
            if best.map(|(s, _)| score > s).unwrap_or(true) {
                best = Some((score, direction));
            }
            report.entries.push(ScoreEntry {
                phrase: phrase.clone(),
                direction,
                score,
                argmax_region,
            });
        }
        if let Some((score, direction)) = best {
            if score > cfg.tau {
                messages.push(VerbalizedMessage::new(phrase, direction));
            }
        }
    }
    Ok((report, messages))
}
