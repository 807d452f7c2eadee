//! Command-line wiring: `gen`, `run`, `train`, `eval`, `extract-eval`,
//! `gradcheck`, and `stats` subcommands over the library.
//!
//! Configuration precedence is defaults < `--config` JSON < explicit flags,
//! and every command writes a `manifest.json` beside its artifacts that can
//! be fed back through `--config` to reproduce the run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::ParamBundle;
use crate::data::{
    self, dataset_stats, generate_world, load_records, load_world, records_from_instances,
    save_records, save_world, WorldConfig,
};
use crate::encoder::{encode, encode_vjp, EncoderParams};
use crate::env::is_success;
use crate::extract::{extract_landmarks, score_extraction, LandmarkSet};
use crate::kernels::{fd_pairs, fd_summary, FdSummary, FD_ABS_BOUND, FD_SCALE_FLOOR};
use crate::metrics::{evaluate, render_table, round1, EpisodeOutcome};
use crate::runtime::{
    build_context, loss::LossConfig, read_trace, run_episode, train::loss_backward,
    train::loss_forward, train_policy, write_trace, DecisionPolicy, EpisodeTrace, LinearPolicy,
    OraclePolicy, Pipeline, RandomPolicy, RunConfig, TrainConfig, TrainableParams,
};

#[derive(Parser)]
#[command(
    name = "streetnav",
    about = "Street-graph navigation simulator, agent pipeline, and evaluation harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Oracle,
    Random,
    Linear,
}

#[derive(Args, Clone, Debug, Default)]
struct CommonArgs {
    /// JSON config merged under explicit flags (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Verbalizer message threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Weight of the topology loss term.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Weight of the action cross-entropy term.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Fusion rounds of the landmark scorer.
    #[arg(long)]
    rounds: Option<usize>,
    /// Feature dimension of regions, text embeddings, and map features.
    #[arg(long)]
    dim: Option<usize>,
    /// Output dimension of the encoder projection.
    #[arg(long = "policy-dim")]
    policy_dim: Option<usize>,
    #[arg(long = "max-steps")]
    max_steps: Option<usize>,
    #[arg(long)]
    policy: Option<PolicyKind>,
    /// Parallel episode workers.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory for artifacts and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Standard deviation of raw-score noise injected into the scorer.
    #[arg(long = "noise-sigma")]
    noise_sigma: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world directory.
    Gen {
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        routes: Option<usize>,
        #[arg(long)]
        branching: Option<usize>,
        /// Landmarks per route (turn landmarks plus the stop landmark).
        #[arg(long)]
        landmarks: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run episodes over a world and evaluate them.
    Run {
        world: PathBuf,
        /// Parameter bundle for the linear policy and encoder.
        #[arg(long)]
        params: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the linear policy by teacher forcing.
    Train {
        world: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate previously written trace files.
    Eval {
        world: PathBuf,
        /// Directory of `*.jsonl` trace files.
        traces: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score the landmark extractor against gold annotations.
    #[command(name = "extract-eval")]
    ExtractEval {
        world: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Finite-difference check of the encoder and loss gradients.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Caption-length and category statistics of an annotation file.
    Stats {
        records: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Optional values read from `--config`; unknown keys are ignored so a
/// manifest (which carries extra bookkeeping fields) loads directly.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct FileConfig {
    seed: Option<u64>,
    tau: Option<f64>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    rounds: Option<usize>,
    dim: Option<usize>,
    policy_dim: Option<usize>,
    max_steps: Option<usize>,
    policy: Option<PolicyKind>,
    jobs: Option<usize>,
    noise_sigma: Option<f64>,
    nodes: Option<usize>,
    routes: Option<usize>,
    branching: Option<usize>,
    landmarks: Option<usize>,
    epochs: Option<usize>,
    lr: Option<f64>,
}

/// Fully resolved settings; serialized verbatim into the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Effective {
    seed: u64,
    tau: f64,
    lambda1: f64,
    lambda2: f64,
    rounds: usize,
    dim: usize,
    policy_dim: usize,
    max_steps: Option<usize>,
    policy: PolicyKind,
    jobs: usize,
    noise_sigma: Option<f64>,
    nodes: usize,
    routes: usize,
    branching: usize,
    landmarks: usize,
    epochs: usize,
    lr: f64,
}

impl Effective {
    fn resolve(
        common: &CommonArgs,
        gen: (Option<usize>, Option<usize>, Option<usize>, Option<usize>),
        train: (Option<usize>, Option<f64>),
    ) -> Result<(Self, PathBuf)> {
        let file: FileConfig = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let effective = Effective {
            seed: common.seed.or(file.seed).unwrap_or(0),
            tau: common.tau.or(file.tau).unwrap_or(0.8),
            lambda1: common.lambda1.or(file.lambda1).unwrap_or(0.5),
            lambda2: common.lambda2.or(file.lambda2).unwrap_or(0.5),
            rounds: common.rounds.or(file.rounds).unwrap_or(2),
            dim: common.dim.or(file.dim).unwrap_or(32),
            policy_dim: common.policy_dim.or(file.policy_dim).unwrap_or(16),
            max_steps: common.max_steps.or(file.max_steps),
            policy: common.policy.or(file.policy).unwrap_or(PolicyKind::Oracle),
            jobs: common.jobs.or(file.jobs).unwrap_or(1),
            noise_sigma: common.noise_sigma.or(file.noise_sigma),
            nodes: gen.0.or(file.nodes).unwrap_or(20),
            routes: gen.1.or(file.routes).unwrap_or(5),
            branching: gen.2.or(file.branching).unwrap_or(3),
            landmarks: gen.3.or(file.landmarks).unwrap_or(3),
            epochs: train.0.or(file.epochs).unwrap_or(50),
            lr: train.1.or(file.lr).unwrap_or(0.5),
        };
        let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        Ok((effective, out))
    }

    fn run_config(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            tau: self.tau,
            rounds: self.rounds,
            feature_dim: self.dim,
            policy_dim: self.policy_dim,
            max_steps: self.max_steps,
            noise_sigma: self.noise_sigma,
        }
    }

    fn loss_config(&self) -> Result<LossConfig> {
        LossConfig::new(self.lambda1, self.lambda2).map_err(|e| anyhow!(e.to_string()))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    inputs: Vec<String>,
    #[serde(flatten)]
    effective: &'a Effective,
}

fn write_manifest(out: &Path, command: &str, inputs: &[&Path], eff: &Effective) -> Result<()> {
    fs::create_dir_all(out)?;
    let manifest = Manifest {
        command,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        effective: eff,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_report<T: Serialize>(out: &Path, report: &T) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let path = out.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(report)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    match run_with_args(std::env::args()) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}

/// Testable entry point taking explicit arguments.
pub fn run_with_args<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Gen {
            nodes,
            routes,
            branching,
            landmarks,
            common,
        } => cmd_gen(&common, (nodes, routes, branching, landmarks)),
        Command::Run {
            world,
            params,
            common,
        } => cmd_run(&world, params.as_deref(), &common),
        Command::Train {
            world,
            epochs,
            lr,
            common,
        } => cmd_train(&world, (epochs, lr), &common),
        Command::Eval {
            world,
            traces,
            common,
        } => cmd_eval(&world, &traces, &common),
        Command::ExtractEval { world, common } => cmd_extract_eval(&world, &common),
        Command::Gradcheck { common } => cmd_gradcheck(&common),
        Command::Stats { records, common } => cmd_stats(&records, &common),
    }
}

fn cmd_gen(
    common: &CommonArgs,
    gen: (Option<usize>, Option<usize>, Option<usize>, Option<usize>),
) -> Result<()> {
    let (eff, out) = Effective::resolve(common, gen, (None, None))?;
    let config = WorldConfig {
        nodes: eff.nodes,
        branching: eff.branching,
        route_count: eff.routes,
        landmarks_per_route: eff.landmarks,
        feature_dim: eff.dim,
        seed: eff.seed,
    };
    let world = generate_world(&config)?;
    save_world(&out, &world)?;
    let records = records_from_instances(&world);
    save_records(&out.join(data::RECORDS_FILE), &records)?;
    write_manifest(&out, "gen", &[], &eff)?;
    println!(
        "world: {} nodes, {} edges, {} instances, {} landmark records -> {}",
        world.graph.nodes().len(),
        world.graph.edges().len(),
        world.instances.len(),
        records.len(),
        out.display()
    );
    Ok(())
}

struct PreparedPolicy {
    kind: PolicyKind,
    trained: Option<TrainableParams>,
    run_seed: u64,
}

impl PreparedPolicy {
    fn for_instance(&self, instance: &crate::data::NavInstance) -> Box<dyn DecisionPolicy> {
        match self.kind {
            PolicyKind::Oracle => Box::new(OraclePolicy::new(instance.gold_actions.clone())),
            PolicyKind::Random => Box::new(RandomPolicy::new(self.run_seed)),
            PolicyKind::Linear => {
                let params = self
                    .trained
                    .as_ref()
                    .expect("linear policy params prepared")
                    .policy
                    .clone();
                Box::new(LinearPolicy::new(params))
            }
        }
    }

    fn label(&self) -> &'static str {
        match self.kind {
            PolicyKind::Oracle => "oracle",
            PolicyKind::Random => "random",
            PolicyKind::Linear => "linear",
        }
    }
}

fn cmd_run(world_dir: &Path, params: Option<&Path>, common: &CommonArgs) -> Result<()> {
    let (eff, out) = Effective::resolve(common, (None, None, None, None), (None, None))?;
    let world = load_world(world_dir)?;
    let run_cfg = eff.run_config();
    let mut pipeline = Pipeline::new(&run_cfg)?;

    let trained = match params {
        Some(path) => {
            let bundle = ParamBundle::load(path)
                .map_err(|e| anyhow!("loading params {}: {e}", path.display()))?;
            let trained = TrainableParams::read_bundle(&bundle)
                .map_err(|e| anyhow!("decoding params {}: {e}", path.display()))?;
            pipeline.encoder = trained.encoder.clone();
            Some(trained)
        }
        None if eff.policy == PolicyKind::Linear => {
            Some(TrainableParams::seeded(&run_cfg, eff.seed))
        }
        None => None,
    };
    let prepared = PreparedPolicy {
        kind: eff.policy,
        trained,
        run_seed: eff.seed,
    };

    let traces = run_batch(&world, &pipeline, &run_cfg, &prepared, eff.jobs)?;

    let traces_dir = out.join("traces");
    fs::create_dir_all(&traces_dir)?;
    for (trace, instance) in traces.iter().zip(&world.instances) {
        let success = is_success(&world.graph, trace.final_node(), instance.goal())
            .map_err(|e| anyhow!(e.to_string()))?;
        write_trace(
            &traces_dir.join(format!("{}.jsonl", instance.id)),
            trace,
            success,
        )?;
    }

    let outcomes: Vec<EpisodeOutcome> = traces
        .iter()
        .zip(&world.instances)
        .map(|(trace, instance)| EpisodeOutcome { trace, instance })
        .collect();
    let report = evaluate(&outcomes, &world.graph)?;
    write_report(&out, &report)?;
    write_manifest(&out, "run", &[world_dir], &eff)?;
    print!("{}", render_table(prepared.label(), &report));
    Ok(())
}

/// Runs every instance of the world, optionally across a rayon pool;
/// results stay ordered by instance regardless of the worker count.
fn run_batch(
    world: &crate::data::WorldBundle,
    pipeline: &Pipeline,
    run_cfg: &RunConfig,
    prepared: &PreparedPolicy,
    jobs: usize,
) -> Result<Vec<EpisodeTrace>> {
    let run_one = |instance: &crate::data::NavInstance| -> Result<EpisodeTrace> {
        let mut policy = prepared.for_instance(instance);
        run_episode(world, instance, pipeline, policy.as_mut(), run_cfg)
            .map_err(|e| anyhow!("instance {}: {e}", instance.id))
    };
    if jobs <= 1 {
        world.instances.iter().map(run_one).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .context("building worker pool")?;
        pool.install(|| world.instances.par_iter().map(run_one).collect())
    }
}

#[derive(Serialize)]
struct TrainReportFile {
    epochs: usize,
    lr: f64,
    first_epoch_loss: Option<f64>,
    final_epoch_loss: Option<f64>,
    loss_curve: Vec<f64>,
}

fn cmd_train(world_dir: &Path, train: (Option<usize>, Option<f64>), common: &CommonArgs) -> Result<()> {
    let (eff, out) = Effective::resolve(common, (None, None, None, None), train)?;
    let world = load_world(world_dir)?;
    let run_cfg = eff.run_config();
    let train_cfg = TrainConfig {
        epochs: eff.epochs,
        lr: eff.lr,
        seed: eff.seed,
        loss: eff.loss_config()?,
    };
    let report = train_policy(std::slice::from_ref(&world), &run_cfg, &train_cfg)?;

    fs::create_dir_all(&out)?;
    let checkpoint = out.join("checkpoint.json");
    report
        .params
        .write_bundle()
        .save(&checkpoint)
        .map_err(|e| anyhow!("writing checkpoint: {e}"))?;
    let file = TrainReportFile {
        epochs: eff.epochs,
        lr: eff.lr,
        first_epoch_loss: report.loss_curve.first().copied(),
        final_epoch_loss: report.loss_curve.last().copied(),
        loss_curve: report.loss_curve.clone(),
    };
    write_report(&out, &file)?;
    write_manifest(&out, "train", &[world_dir], &eff)?;
    match (file.first_epoch_loss, file.final_epoch_loss) {
        (Some(first), Some(last)) => {
            println!("trained {} epochs: loss {first:.6} -> {last:.6}", eff.epochs)
        }
        _ => println!("trained 0 epochs (initial parameters kept)"),
    }
    println!("checkpoint: {}", checkpoint.display());
    Ok(())
}

fn cmd_eval(world_dir: &Path, traces_dir: &Path, common: &CommonArgs) -> Result<()> {
    let (eff, out) = Effective::resolve(common, (None, None, None, None), (None, None))?;
    let world = load_world(world_dir)?;
    let mut by_id = std::collections::BTreeMap::new();
    for instance in &world.instances {
        by_id.insert(instance.id.clone(), instance);
    }

    let mut entries: Vec<PathBuf> = fs::read_dir(traces_dir)
        .with_context(|| format!("reading {}", traces_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "jsonl").unwrap_or(false))
        .collect();
    entries.sort();
    if entries.is_empty() {
        bail!("no trace files in {}", traces_dir.display());
    }

    let mut traces = Vec::new();
    for path in &entries {
        let (trace, _footer) = read_trace(path)?;
        let instance = by_id
            .get(&trace.instance_id)
            .ok_or_else(|| anyhow!("trace {} references unknown instance", path.display()))?;
        traces.push((trace, *instance));
    }
    let outcomes: Vec<EpisodeOutcome> = traces
        .iter()
        .map(|(trace, instance)| EpisodeOutcome { trace, instance })
        .collect();
    let report = evaluate(&outcomes, &world.graph)?;
    write_report(&out, &report)?;
    write_manifest(&out, "eval", &[world_dir, traces_dir], &eff)?;
    print!("{}", render_table("traces", &report));
    Ok(())
}

#[derive(Serialize)]
struct ExtractEvalReport {
    extractor: String,
    instances: usize,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn cmd_extract_eval(world_dir: &Path, common: &CommonArgs) -> Result<()> {
    let (eff, out) = Effective::resolve(common, (None, None, None, None), (None, None))?;
    let world = load_world(world_dir)?;
    if world.instances.is_empty() {
        bail!("world has no instances");
    }
    let lexicon = data::vocab::standard_lexicon();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for instance in &world.instances {
        let predicted = extract_landmarks(&instance.instruction, &lexicon);
        let gold = LandmarkSet::from_phrases(
            instance
                .landmark_annotations
                .iter()
                .map(|a| a.phrase.clone())
                .collect(),
        );
        let score = score_extraction(&predicted, &gold);
        p_sum += score.precision;
        r_sum += score.recall;
        f_sum += score.f1;
    }
    let n = world.instances.len() as f64;
    let report = ExtractEvalReport {
        extractor: "rule-based".into(),
        instances: world.instances.len(),
        precision: round1(100.0 * p_sum / n),
        recall: round1(100.0 * r_sum / n),
        f1: round1(100.0 * f_sum / n),
    };
    write_report(&out, &report)?;
    write_manifest(&out, "extract-eval", &[world_dir], &eff)?;
    println!(
        "{:<14} {:>10} {:>8} {:>8}",
        "extractor", "Precision", "Recall", "F1"
    );
    println!(
        "{:<14} {:>10.1} {:>8.1} {:>8.1}",
        report.extractor, report.precision, report.recall, report.f1
    );
    Ok(())
}

#[derive(Serialize)]
struct GradcheckReport {
    eps: f64,
    seeds: usize,
    /// Max relative error over coordinates large enough for the
    /// finite-difference oracle to resolve relatively.
    encoder_max_rel_error: f64,
    loss_max_rel_error: f64,
    /// Max absolute analytic/numeric mismatch over every coordinate,
    /// including near-zero ones.
    encoder_max_abs_error: f64,
    loss_max_abs_error: f64,
    rel_threshold: f64,
    abs_threshold: f64,
    pass: bool,
}

fn cmd_gradcheck(common: &CommonArgs) -> Result<()> {
    let (eff, out) = Effective::resolve(common, (None, None, None, None), (None, None))?;
    let eps = 1e-5;
    let seeds = 3u64;

    // composed encoder chain against central differences
    let mut encoder_summary = FdSummary {
        max_rel: 0.0,
        max_rel_scaled: 0.0,
        max_abs: 0.0,
    };
    for seed in 0..seeds {
        let s = encoder_gradcheck_once(eff.seed ^ seed, eps)?;
        encoder_summary.max_rel = encoder_summary.max_rel.max(s.max_rel);
        encoder_summary.max_rel_scaled = encoder_summary.max_rel_scaled.max(s.max_rel_scaled);
        encoder_summary.max_abs = encoder_summary.max_abs.max(s.max_abs);
    }

    // combined loss over a teacher-forced world
    let world = generate_world(&WorldConfig {
        nodes: 12,
        branching: 3,
        route_count: 2,
        landmarks_per_route: 2,
        feature_dim: 6,
        seed: eff.seed,
    })?;
    let run_cfg = RunConfig {
        feature_dim: 6,
        policy_dim: 4,
        seed: eff.seed,
        ..RunConfig::default()
    };
    let pipeline = Pipeline::new(&run_cfg)?;
    let contexts: Vec<_> = world
        .instances
        .iter()
        .map(|i| build_context(&world, i, &pipeline, &run_cfg))
        .collect::<Result<_, _>>()?;
    let loss_cfg = eff.loss_config()?;
    let params = TrainableParams::seeded(&run_cfg, eff.seed);
    let theta = params.pack();
    let (_, grads) = loss_backward(&params, &contexts, &loss_cfg)?;
    let analytic = grads.pack();
    let template = params.clone();
    let pairs = fd_pairs(
        move |t: &[f64]| {
            let mut p = template.clone();
            p.unpack(t);
            loss_forward(&p, &contexts, &loss_cfg).expect("forward evaluates")
        },
        &analytic,
        &theta,
        eps,
    )?;
    let loss_summary = fd_summary(&pairs, FD_SCALE_FLOOR);

    let report = GradcheckReport {
        eps,
        seeds: seeds as usize,
        encoder_max_rel_error: encoder_summary.max_rel_scaled,
        loss_max_rel_error: loss_summary.max_rel_scaled,
        encoder_max_abs_error: encoder_summary.max_abs,
        loss_max_abs_error: loss_summary.max_abs,
        rel_threshold: 1e-5,
        abs_threshold: FD_ABS_BOUND,
        pass: encoder_summary.max_rel_scaled < 1e-5
            && loss_summary.max_rel_scaled < 1e-5
            && encoder_summary.max_abs < FD_ABS_BOUND
            && loss_summary.max_abs < FD_ABS_BOUND,
    };
    write_report(&out, &report)?;
    write_manifest(&out, "gradcheck", &[], &eff)?;
    println!(
        "encoder max rel {:.3e} / abs {:.3e}; loss max rel {:.3e} / abs {:.3e}",
        report.encoder_max_rel_error,
        report.encoder_max_abs_error,
        report.loss_max_rel_error,
        report.loss_max_abs_error
    );
    if !report.pass {
        bail!("gradient check failed");
    }
    Ok(())
}

fn encoder_gradcheck_once(seed: u64, eps: f64) -> Result<FdSummary> {
    use ndarray::{Array1, Array2};
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, dim, regions, d_out) = (5, 4, 3, 2);
    let node_features = Array2::from_shape_fn((n, dim), |_| rng.random_range(-0.8..0.8));
    let mut neighbor_sets = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(0.4) {
                neighbor_sets[i].push(j);
            }
        }
    }
    let mut a_norm = Array2::zeros((n, n));
    for i in 0..n {
        a_norm[[i, i]] = 1.0;
    }
    let image_regions = Array2::from_shape_fn((regions, dim), |_| rng.random_range(-1.0..1.0));
    let input = crate::encoder::EncoderInput {
        node_features,
        neighbor_sets,
        a_norm,
        image_regions,
    };
    let params = EncoderParams::seeded(dim, d_out, &mut rng);
    let mut theta = Vec::new();
    params.pack_into(&mut theta);
    let acts = encode(&input, &params)?;
    let grads = encode_vjp(&input, &params, &acts, &Array1::ones(d_out))?;
    let mut analytic = Vec::new();
    grads.pack_into(&mut analytic);
    let template = params.clone();
    let pairs = fd_pairs(
        move |t: &[f64]| {
            let mut p = template.clone();
            p.unpack_from(t);
            encode(&input, &p).expect("forward evaluates").output.sum()
        },
        &analytic,
        &theta,
        eps,
    )?;
    Ok(fd_summary(&pairs, FD_SCALE_FLOOR))
}

fn cmd_stats(records_path: &Path, common: &CommonArgs) -> Result<()> {
    let (eff, out) = Effective::resolve(common, (None, None, None, None), (None, None))?;
    let records = load_records(records_path)?;
    let stats = dataset_stats(&records)?;
    write_report(&out, &stats)?;
    write_manifest(&out, "stats", &[records_path], &eff)?;
    println!(
        "{} records, avg caption words {:.2}",
        records.len(),
        stats.avg_caption_words
    );
    for (category, count) in &stats.category_histogram {
        println!("{category:<14} {count}");
    }
    Ok(())
}
