//! The `dhcp` command line.
//!
//! Every artifact is written together with a run manifest,
//! `<artifact>.manifest.json` (or `manifest.json` inside a bundle directory),
//! recording the command, the fully resolved configuration, SHA-256 digests
//! of the inputs, the seed, the toolkit version and the wallclock time.
//!
//! Failures print one JSON line `{"error": <kind>, "message": <text>}` on
//! stderr and exit with status 1 for I/O errors and 2 for everything else.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dataset::{self, AnnotationSet};
use crate::error::{Error, Result};
use crate::metrics;
use crate::mlp::{self, EpochLog, StepDecay, TrainConfig};
use crate::pipeline::{self, DetectorBundle, Variant, VerdictRecord};
use crate::synthgen::{self, SynthSpec};
use crate::tensor::{self, Cluster, Sample, Shard};

#[derive(Parser, Debug)]
#[command(name = "dhcp", version, about = "Two-stage hallucination detection from cross-modal attention")]
pub struct Cli {
    /// Seed for every random stream
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; changes speed only, never results
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress progress lines on stderr
    #[arg(long, global = true)]
    pub quiet: bool,
    /// JSON file with training settings; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic shard from a spec
    Synth(SynthArgs),
    /// Generate POPE-style yes/no questions from object annotations
    GenQuestions(GenQuestionsArgs),
    /// Split a shard or an id list into train and test sides
    Split(SplitArgs),
    /// Train the first-stage detector into a new bundle
    TrainStage1(TrainStage1Args),
    /// Train the second-stage refiners of an existing bundle
    TrainStage2(TrainStage2Args),
    /// Train a DHCP-g bundle (binary first stage and its refiner)
    TrainG(TrainGArgs),
    /// Train the random/popular/adversarial source classifier
    TrainSource(TrainSourceArgs),
    /// Run a bundle over a shard and write verdicts
    Detect(DetectArgs),
    /// Classification reports for verdicts against shard labels
    Eval(EvalArgs),
    /// Flip detected hallucinations and report yes/no metrics before and after
    Mitigate(MitigateArgs),
    /// Confidence-gap histograms of false alarms against correct clean calls
    Gap(GapArgs),
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Training epochs
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Mini-batch size
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Multiply the learning rate by 0.1 from epoch 60 on
    #[arg(long)]
    pub lr_decay: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Spec JSON file
    #[arg(long, value_name = "FILE", required_unless_present = "standard")]
    pub spec: Option<PathBuf>,
    /// Use the built-in standard four-class benchmark
    #[arg(long, conflicts_with = "spec")]
    pub standard: bool,
    /// Multiply every class count
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Confine bumps to layers A..=B
    #[arg(long, value_name = "A:B", value_parser = parse_band)]
    pub layer_band: Option<(u32, u32)>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClusterArg {
    Random,
    Popular,
    Adversarial,
}

impl From<ClusterArg> for Cluster {
    fn from(c: ClusterArg) -> Self {
        match c {
            ClusterArg::Random => Cluster::Random,
            ClusterArg::Popular => Cluster::Popular,
            ClusterArg::Adversarial => Cluster::Adversarial,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenQuestionsArgs {
    /// Annotation JSON: [{"image_id": .., "objects": [..]}, ..]
    #[arg(long, value_name = "FILE")]
    pub annotations: PathBuf,
    /// Negative cluster; all three when omitted
    #[arg(long, value_enum)]
    pub cluster: Option<ClusterArg>,
    /// Positive and negative questions per image
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Drop negatives that more than one cluster selects
    #[arg(long)]
    pub dedupe_clusters: bool,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Shard whose samples are split by id
    #[arg(long, value_name = "FILE", required_unless_present = "ids", conflicts_with = "ids")]
    pub shard: Option<PathBuf>,
    /// Text file with one id per line
    #[arg(long, value_name = "FILE")]
    pub ids: Option<PathBuf>,
    /// Share of ids on the train side
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    /// Ids (one per line) that must land on the test side
    #[arg(long, value_name = "FILE")]
    pub reserved_ids: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub train_out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub test_out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    DhcpD,
    DhcpG,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::DhcpD => Variant::DhcpD,
            VariantArg::DhcpG => Variant::DhcpG,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainStage1Args {
    /// Training shards; their union is the training set
    #[arg(required = true)]
    pub shards: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "dhcp-d")]
    pub variant: VariantArg,
    /// Bundle directory to create
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct TrainStage2Args {
    /// Training shards used for the first stage
    #[arg(required = true)]
    pub shards: Vec<PathBuf>,
    /// Bundle directory holding the first stage; refiners are added in place
    #[arg(long, value_name = "DIR")]
    pub bundle: PathBuf,
    /// Partition these shards instead of the training shards
    #[arg(long, value_name = "FILE", num_args = 1..)]
    pub partition_shards: Vec<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct TrainGArgs {
    #[arg(required = true)]
    pub shards: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Skip the refiner
    #[arg(long)]
    pub one_stage: bool,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct TrainSourceArgs {
    /// Shards whose hallucination samples carry cluster tags
    #[arg(required = true)]
    pub shards: Vec<PathBuf>,
    /// Model file to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Held-out shards to report on after training
    #[arg(long, value_name = "FILE", num_args = 1..)]
    pub eval_shards: Vec<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long, value_name = "DIR")]
    pub bundle: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub shard: PathBuf,
    /// Verdicts JSONL to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Ignore the refiners and judge by the first stage alone
    #[arg(long)]
    pub one_stage: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Shard with the true labels
    #[arg(long, value_name = "FILE")]
    pub shard: PathBuf,
    /// Verdicts to score
    #[arg(long, value_name = "FILE", required_unless_present = "bundle", conflicts_with = "bundle")]
    pub verdicts: Option<PathBuf>,
    /// Or a bundle to run first
    #[arg(long, value_name = "DIR")]
    pub bundle: Option<PathBuf>,
    #[arg(long, requires = "bundle")]
    pub one_stage: bool,
    /// Text report to write; stdout when omitted
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// JSON report to write
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MitigateArgs {
    #[arg(long, value_name = "DIR")]
    pub bundle: PathBuf,
    /// Shard of yes/no samples with answers and ground truth
    #[arg(long, value_name = "FILE")]
    pub shard: PathBuf,
    /// Report (tab-separated, percent) to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub one_stage: bool,
}

#[derive(Args, Debug)]
pub struct GapArgs {
    /// Shard with answer probabilities
    #[arg(long, value_name = "FILE")]
    pub shard: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub verdicts: PathBuf,
    /// Histogram CSV to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

fn parse_band(s: &str) -> std::result::Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or("expected A:B")?;
    let a = a.trim().parse::<u32>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<u32>().map_err(|e| e.to_string())?;
    if a > b {
        return Err(format!("empty layer band {a}:{b}"));
    }
    Ok((a, b))
}

/// Training settings accepted from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    lr_decay: Option<StepDecay>,
    hidden1: Option<usize>,
    hidden2: Option<usize>,
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: Value,
    inputs: Vec<InputDigest>,
    seed: u64,
    version: &'static str,
    wallclock_ms: u64,
}

struct Ctx<'a> {
    command: &'static str,
    matches: &'a ArgMatches,
    config: ConfigFile,
    seed: u64,
    quiet: bool,
    started: Instant,
    inputs: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn from_cli(&self, id: &str) -> bool {
        matches!(self.matches.value_source(id), Some(ValueSource::CommandLine))
    }

    fn pick<T>(&self, id: &str, flag: T, file: Option<T>) -> T {
        if self.from_cli(id) {
            flag
        } else {
            file.unwrap_or(flag)
        }
    }

    fn train_config(&self, a: &TrainArgs) -> TrainConfig {
        let defaults = TrainConfig::default();
        TrainConfig {
            epochs: self.pick("epochs", a.epochs, self.config.epochs),
            batch_size: self.pick("batch_size", a.batch_size, self.config.batch_size),
            learning_rate: self.pick("lr", a.lr, self.config.learning_rate),
            seed: self.seed,
            lr_decay: if a.lr_decay {
                Some(StepDecay::default())
            } else {
                self.config.lr_decay
            },
            hidden1: self.config.hidden1.unwrap_or(defaults.hidden1),
            hidden2: self.config.hidden2.unwrap_or(defaults.hidden2),
            ..defaults
        }
    }

    fn read_shard(&mut self, path: &Path) -> Result<Shard> {
        self.inputs.push(path.to_path_buf());
        self.log(json!({"event": "read", "path": path.display().to_string()}));
        tensor::read_shard(path)
    }

    fn read_shards(&mut self, paths: &[PathBuf]) -> Result<Vec<Shard>> {
        paths.iter().map(|p| self.read_shard(p)).collect()
    }

    fn input(&mut self, path: &Path) -> PathBuf {
        self.inputs.push(path.to_path_buf());
        path.to_path_buf()
    }

    fn log(&self, line: Value) {
        if !self.quiet {
            eprintln!("{line}");
        }
    }

    fn epoch_logger(&self) -> impl FnMut(&str, &EpochLog) + '_ {
        move |model, e| {
            self.log(json!({
                "model": model,
                "epoch": e.epoch,
                "mean_loss": e.mean_loss,
                "wallclock_ms": e.wallclock_ms,
            }))
        }
    }

    fn manifest(&self, artifact: &Path, config: Value) -> Result<()> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = RunManifest {
            command: self.command,
            config,
            inputs,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            wallclock_ms: self.started.elapsed().as_millis() as u64,
        };
        let path = if artifact.is_dir() {
            artifact.join("manifest.json")
        } else {
            let mut name = artifact.as_os_str().to_owned();
            name.push(".manifest.json");
            PathBuf::from(name)
        };
        write_text(&path, &(serde_json::to_string_pretty(&m)? + "\n"))
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn train_json(cfg: &TrainConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let cli = Cli::from_arg_matches(&matches).expect("matches parse");
    match execute(&cli, &matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            if matches!(e, Error::Io { .. }) {
                1
            } else {
                2
            }
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}

fn execute(cli: &Cli, matches: &ArgMatches) -> Result<()> {
    if let Some(n) = cli.threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => ConfigFile::default(),
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let global_seed_from_cli = matches!(sub.value_source("seed"), Some(ValueSource::CommandLine));
    let seed = if global_seed_from_cli {
        cli.seed
    } else {
        config.seed.unwrap_or(cli.seed)
    };
    let mut ctx = Ctx {
        command: command_name(name),
        matches: sub,
        config,
        seed,
        quiet: cli.quiet,
        started: Instant::now(),
        inputs: Vec::new(),
    };
    if let Some(p) = &cli.config {
        ctx.input(p);
    }
    match &cli.command {
        Command::Synth(a) => synth(&mut ctx, a, global_seed_from_cli),
        Command::GenQuestions(a) => gen_questions(&mut ctx, a),
        Command::Split(a) => split(&mut ctx, a),
        Command::TrainStage1(a) => train_stage1(&mut ctx, a),
        Command::TrainStage2(a) => train_stage2(&mut ctx, a),
        Command::TrainG(a) => train_g(&mut ctx, a),
        Command::TrainSource(a) => train_source(&mut ctx, a),
        Command::Detect(a) => detect(&mut ctx, a),
        Command::Eval(a) => eval(&mut ctx, a),
        Command::Mitigate(a) => mitigate(&mut ctx, a),
        Command::Gap(a) => gap(&mut ctx, a),
    }
}

fn command_name(name: &str) -> &'static str {
    match name {
        "synth" => "synth",
        "gen-questions" => "gen-questions",
        "split" => "split",
        "train-stage1" => "train-stage1",
        "train-stage2" => "train-stage2",
        "train-g" => "train-g",
        "train-source" => "train-source",
        "detect" => "detect",
        "eval" => "eval",
        "mitigate" => "mitigate",
        _ => "gap",
    }
}

fn synth(ctx: &mut Ctx, a: &SynthArgs, seed_from_cli: bool) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let p = ctx.input(p);
            SynthSpec::load(p)?
        }
        None => SynthSpec::standard(ctx.seed),
    };
    if seed_from_cli {
        spec.seed = ctx.seed;
    }
    ctx.seed = spec.seed;
    if a.layer_band.is_some() {
        spec.layer_band = a.layer_band;
    }
    if a.scale != 1.0 {
        spec = spec.scaled(a.scale);
    }
    let samples = synthgen::generate(&spec)?;
    tensor::write_shard(&a.out, spec.shape, &samples)?;
    ctx.log(json!({"event": "wrote", "path": a.out.display().to_string(), "samples": samples.len()}));
    ctx.manifest(&a.out, json!({"spec": spec}))
}

fn gen_questions(ctx: &mut Ctx, a: &GenQuestionsArgs) -> Result<()> {
    let ann = AnnotationSet::load(ctx.input(&a.annotations))?;
    let clusters = dataset::gen_pope_clusters(&ann, a.k, ctx.seed, a.dedupe_clusters)?;
    let records: Vec<_> = clusters
        .into_iter()
        .filter(|(c, _)| a.cluster.is_none_or(|want| Cluster::from(want) == *c))
        .flat_map(|(_, r)| r)
        .collect();
    dataset::write_questions_jsonl(&a.out, &records)?;
    ctx.manifest(
        &a.out,
        json!({
            "cluster": a.cluster.map(|c| Cluster::from(c).name()).unwrap_or("all"),
            "k": a.k,
            "dedupe_clusters": a.dedupe_clusters,
        }),
    )
}

fn split(ctx: &mut Ctx, a: &SplitArgs) -> Result<()> {
    let reserved = match &a.reserved_ids {
        Some(p) => read_lines(&ctx.input(p))?,
        None => Vec::new(),
    };
    let config = json!({"ratio": a.ratio, "reserved": reserved.len()});
    if let Some(p) = &a.ids {
        let ids = read_lines(&ctx.input(p))?;
        let s = dataset::split_train_test(&ids, &reserved, a.ratio, ctx.seed)?;
        write_text(&a.train_out, &lines(&s.train))?;
        write_text(&a.test_out, &lines(&s.test))?;
    } else {
        let shard = ctx.read_shard(a.shard.as_ref().expect("clap requires shard or ids"))?;
        let ids: Vec<String> = shard.samples.iter().map(|s| s.id.clone()).collect();
        let s = dataset::split_train_test(&ids, &reserved, a.ratio, ctx.seed)?;
        let train: std::collections::BTreeSet<&String> = s.train.iter().collect();
        let (tr, te): (Vec<Sample>, Vec<Sample>) =
            shard.samples.into_iter().partition(|x| train.contains(&x.id));
        tensor::write_shard(&a.train_out, shard.shape, &tr)?;
        tensor::write_shard(&a.test_out, shard.shape, &te)?;
    }
    ctx.manifest(&a.train_out, config.clone())?;
    ctx.manifest(&a.test_out, config)
}

fn lines(ids: &[String]) -> String {
    ids.iter().map(|i| format!("{i}\n")).collect()
}

fn train_stage1(ctx: &mut Ctx, a: &TrainStage1Args) -> Result<()> {
    let cfg = ctx.train_config(&a.train);
    let shards = ctx.read_shards(&a.shards)?;
    let (shape, samples) = pipeline::union(&shards)?;
    let variant = Variant::from(a.variant);
    let mut log = ctx.epoch_logger();
    let c1 = pipeline::train_stage1(&samples, variant, &cfg, &mut |e| log("c1", e))?.model;
    let bundle = DetectorBundle::one_stage(variant, shape, c1)?;
    pipeline::save_bundle(&a.out, &bundle)?;
    ctx.manifest(&a.out, json!({"variant": variant, "stage1": train_json(&cfg)}))
}

fn train_stage2(ctx: &mut Ctx, a: &TrainStage2Args) -> Result<()> {
    let cfg = ctx.train_config(&a.train);
    let mut bundle = pipeline::load_bundle(&a.bundle)?;
    let shards = ctx.read_shards(&a.shards)?;
    let (shape, train) = pipeline::union(&shards)?;
    check_bundle_shape(&bundle, shape)?;
    let held_out = ctx.read_shards(&a.partition_shards)?;
    let samples = if held_out.is_empty() {
        train
    } else {
        let (shape, s) = pipeline::union(&held_out)?;
        check_bundle_shape(&bundle, shape)?;
        s
    };
    let partition = pipeline::partition_stage2(&bundle.c1, bundle.variant, &samples)?;
    ctx.log(json!({
        "event": "partition",
        "yh_true": partition.yh_true.len(), "yh_false": partition.yh_false.len(),
        "nh_true": partition.nh_true.len(), "nh_false": partition.nh_false.len(),
        "g_true": partition.g_true.len(), "g_false": partition.g_false.len(),
    }));
    let mut log = ctx.epoch_logger();
    match bundle.variant {
        Variant::DhcpD => {
            let (yh, nh) = pipeline::train_stage2(&samples, &partition, &cfg, &mut log)?;
            bundle.c2_yh = Some(yh.model);
            bundle.c2_nh = Some(nh.model);
        }
        Variant::DhcpG => {
            let g = pipeline::train_stage2_g(&samples, &partition, &cfg, &mut |e| log("c2_g", e))?;
            bundle.c2_g = Some(g.model);
        }
    }
    pipeline::save_bundle(&a.bundle, &bundle)?;
    let source = if a.partition_shards.is_empty() { "training" } else { "held_out" };
    ctx.manifest(&a.bundle, json!({"stage2": train_json(&cfg), "partition": source}))
}

fn check_bundle_shape(bundle: &DetectorBundle, shape: tensor::TensorShape) -> Result<()> {
    if bundle.shape != shape {
        return Err(Error::ShapeMismatch {
            expected: bundle.shape.to_string(),
            found: shape.to_string(),
        });
    }
    Ok(())
}

fn train_g(ctx: &mut Ctx, a: &TrainGArgs) -> Result<()> {
    let cfg = ctx.train_config(&a.train);
    let shards = ctx.read_shards(&a.shards)?;
    let (shape, samples) = pipeline::union(&shards)?;
    let mut log = ctx.epoch_logger();
    let bundle = if a.one_stage {
        let c1 = pipeline::train_stage1(&samples, Variant::DhcpG, &cfg, &mut |e| log("c1", e))?;
        DetectorBundle::one_stage(Variant::DhcpG, shape, c1.model)?
    } else {
        pipeline::train_dhcp_g(&samples, &cfg, &cfg, &mut log)?.0
    };
    pipeline::save_bundle(&a.out, &bundle)?;
    ctx.manifest(
        &a.out,
        json!({"variant": Variant::DhcpG, "one_stage": a.one_stage, "train": train_json(&cfg)}),
    )
}

fn hallucinations(shards: &[Shard]) -> Result<Vec<&Sample>> {
    let (_, all) = pipeline::union(shards)?;
    Ok(all
        .into_iter()
        .filter(|s| s.category.is_hallucination() == Some(true))
        .collect())
}

fn train_source(ctx: &mut Ctx, a: &TrainSourceArgs) -> Result<()> {
    let cfg = ctx.train_config(&a.train);
    let shards = ctx.read_shards(&a.shards)?;
    let samples = hallucinations(&shards)?;
    let mut log = ctx.epoch_logger();
    let model = pipeline::train_source_classifier(&samples, &cfg, &mut |e| log("source", e))?.model;
    drop(log);
    mlp::save_model(&a.out, &model)?;
    if !a.eval_shards.is_empty() {
        let held_out = ctx.read_shards(&a.eval_shards)?;
        let test = hallucinations(&held_out)?;
        let truths = test.iter().map(|s| pipeline::source_label(s)).collect::<Result<Vec<_>>>()?;
        let preds = pipeline::classify(&model, &test)?;
        let report = metrics::report(&metrics::confusion(&truths, &preds, &pipeline::source_class_names())?);
        println!("{}", report.to_table());
        let mut path = a.out.as_os_str().to_owned();
        path.push(".report.json");
        write_text(Path::new(&path), &(report.to_json() + "\n"))?;
    }
    ctx.manifest(&a.out, json!({"train": train_json(&cfg)}))
}

fn load_for_serving(ctx: &mut Ctx, dir: &Path, one_stage: bool) -> Result<DetectorBundle> {
    for f in [pipeline::BUNDLE_FILE, "c1.bin", "c2_yh.bin", "c2_nh.bin", "c2_g.bin"] {
        if dir.join(f).exists() {
            ctx.input(&dir.join(f));
        }
    }
    let bundle = pipeline::load_bundle(dir)?;
    Ok(if one_stage { bundle.without_refiners() } else { bundle })
}

fn serve_shard(bundle: &DetectorBundle, shard: &Shard) -> Result<Vec<VerdictRecord>> {
    check_bundle_shape(bundle, shard.shape)?;
    let samples: Vec<&Sample> = shard.samples.iter().collect();
    let verdicts = pipeline::serve_samples(bundle, &samples)?;
    Ok(samples
        .iter()
        .zip(&verdicts)
        .map(|(s, v)| VerdictRecord::new(&s.id, v))
        .collect())
}

fn detect(ctx: &mut Ctx, a: &DetectArgs) -> Result<()> {
    let bundle = load_for_serving(ctx, &a.bundle, a.one_stage)?;
    let shard = ctx.read_shard(&a.shard)?;
    let records = serve_shard(&bundle, &shard)?;
    let file = File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    pipeline::write_verdicts_jsonl(BufWriter::new(file), &records)?;
    ctx.manifest(&a.out, json!({"one_stage": a.one_stage, "two_stage": bundle.is_two_stage()}))
}

/// Verdicts lined up with the shard's samples by id.
fn align<'s>(shard: &'s Shard, records: Vec<VerdictRecord>) -> Result<(Vec<&'s Sample>, Vec<pipeline::Verdict>)> {
    let by_id: BTreeMap<&str, &Sample> = shard.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut samples = Vec::with_capacity(records.len());
    let mut verdicts = Vec::with_capacity(records.len());
    for r in records {
        let s = by_id
            .get(r.id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("verdict for unknown sample {:?}", r.id)))?;
        samples.push(*s);
        verdicts.push(r.verdict());
    }
    Ok((samples, verdicts))
}

fn read_verdicts(ctx: &mut Ctx, path: &Path) -> Result<Vec<VerdictRecord>> {
    let path = ctx.input(path);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    pipeline::read_verdicts_jsonl(&text)
}

fn eval(ctx: &mut Ctx, a: &EvalArgs) -> Result<()> {
    let shard = ctx.read_shard(&a.shard)?;
    let records = match (&a.verdicts, &a.bundle) {
        (Some(v), _) => read_verdicts(ctx, v)?,
        (None, Some(b)) => {
            let bundle = load_for_serving(ctx, b, a.one_stage)?;
            serve_shard(&bundle, &shard)?
        }
        (None, None) => unreachable!("clap requires verdicts or bundle"),
    };
    let (samples, verdicts) = align(&shard, records)?;
    let binary = pipeline::hallucination_report(&samples, &verdicts)?;
    let mut text = format!("hallucination detection\n{}", binary.to_table());
    let mut json_out = json!({"hallucination": binary});
    let four_way = verdicts.iter().all(|v| v.stage1_class.is_hallucination().is_some())
        && samples.iter().all(|s| Variant::DhcpD.label(s).is_ok())
        && verdicts.iter().all(|v| Variant::DhcpD.stage1_classes().contains(&v.stage1_class));
    if four_way && !verdicts.is_empty() {
        let r = pipeline::stage1_report(Variant::DhcpD, &samples, &verdicts)?;
        text = format!("first stage\n{}\n{text}", r.to_table());
        json_out["stage1"] = serde_json::to_value(&r)?;
    }
    match &a.out {
        Some(p) => {
            write_text(p, &text)?;
            ctx.manifest(p, json!({"one_stage": a.one_stage}))?;
        }
        None => print!("{text}"),
    }
    if let Some(p) = &a.json {
        write_text(p, &(serde_json::to_string_pretty(&json_out)? + "\n"))?;
        ctx.manifest(p, json!({"one_stage": a.one_stage}))?;
    }
    Ok(())
}

fn mitigate(ctx: &mut Ctx, a: &MitigateArgs) -> Result<()> {
    let bundle = load_for_serving(ctx, &a.bundle, a.one_stage)?;
    let shard = ctx.read_shard(&a.shard)?;
    let records = serve_shard(&bundle, &shard)?;
    let truths = shard
        .samples
        .iter()
        .map(|s| s.ground_truth.as_answer().ok_or(Error::NonBinary))
        .collect::<Result<Vec<_>>>()?;
    let before: Vec<_> = shard.samples.iter().map(|s| s.answer).collect();
    let after = shard
        .samples
        .iter()
        .zip(&records)
        .map(|(s, r)| pipeline::mitigate_flip(s.answer, &r.verdict()))
        .collect::<Result<Vec<_>>>()?;
    let r0 = metrics::pope_report(&truths, &before)?;
    let r1 = metrics::pope_report(&truths, &after)?;
    let text = format!(
        "run\t{}\noriginal\t{}\nmitigated\t{}\n",
        metrics::PopeReport::HEADER,
        r0.to_row(),
        r1.to_row()
    );
    write_text(&a.out, &text)?;
    if !ctx.quiet {
        eprint!("{text}");
    }
    ctx.manifest(&a.out, json!({"one_stage": a.one_stage}))
}

fn gap(ctx: &mut Ctx, a: &GapArgs) -> Result<()> {
    let shard = ctx.read_shard(&a.shard)?;
    let records = read_verdicts(ctx, &a.verdicts)?;
    let (samples, verdicts) = align(&shard, records)?;
    let mut false_alarm = Vec::new();
    let mut control = Vec::new();
    for (s, v) in samples.iter().zip(&verdicts) {
        match (s.category.is_hallucination(), v.hallucination) {
            (Some(false), true) => false_alarm.push(*s),
            (Some(false), false) => control.push(*s),
            _ => {}
        }
    }
    let stats = pipeline::aggregate_gap_stats(&[("false_alarm", false_alarm), ("control", control)])?;
    write_text(&a.out, &stats.to_csv())?;
    for g in &stats.groups {
        ctx.log(json!({"group": g.name, "count": g.count, "mean_gap": g.mean}));
    }
    ctx.manifest(&a.out, json!({"bin_width": stats.bin_width}))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_parsing() {
        assert_eq!(parse_band("3:7"), Ok((3, 7)));
        assert!(parse_band("7:3").is_err());
        assert!(parse_band("3").is_err());
    }

    #[test]
    fn help_lists_defaults() {
        let mut cmd = Cli::command();
        cmd.build();
        let help = cmd
            .find_subcommand_mut("train-stage1")
            .unwrap()
            .render_long_help()
            .to_string();
        for flag in ["--epochs", "--batch-size", "--lr", "--seed", "--variant", "--threads", "--quiet"] {
            assert!(help.contains(flag), "{flag} missing");
        }
        assert!(help.contains("[default: 100]"));
        assert!(help.contains("[default: 1024]"));
        assert!(help.contains("[default: 0.001]"));
        assert!(help.contains("[default: dhcp-d]"));
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_beat_config_file() {
        let m = Cli::command()
            .try_get_matches_from(["dhcp", "train-stage1", "a.dhcp", "--out", "b", "--epochs", "7"])
            .unwrap();
        let cli = Cli::from_arg_matches(&m).unwrap();
        let Command::TrainStage1(a) = &cli.command else { unreachable!() };
        let ctx = Ctx {
            command: "train-stage1",
            matches: m.subcommand().unwrap().1,
            config: ConfigFile {
                epochs: Some(3),
                batch_size: Some(16),
                ..ConfigFile::default()
            },
            seed: 9,
            quiet: true,
            started: Instant::now(),
            inputs: vec![],
        };
        let cfg = ctx.train_config(&a.train);
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.seed), (7, 16, 0.001, 9));
    }
}
