//! Command-line front end. `run` parses arguments, resolves a [`RunConfig`]
//! (JSON file first, flags on top), echoes it into the output directory and
//! dispatches to the subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::audio::{load_clip, load_manifest};
use crate::cache;
use crate::container;
use crate::dataset::Sample;
use crate::dsp::{log_mel, DspConfig, LogMelSpectrogram};
use crate::error::{Error, Result};
use crate::eval::{
    class_similarity_matrix, knn_baseline, nonstationary_protocol, pair_confusion, split_protocol_inspect,
    KnnOptions, Learner, OracleScorer, ProtocolResult, SiameseLearner, SplitOptions, UnknownMetric,
    UnknownOptions, REFERENCE_TARGETS,
};
use crate::openset::{classify, monitor, write_jsonl, Dictionary, OpenSetConfig, Prediction};
use crate::siamese::{
    train, write_activation_maps, CachedScorer, ConvLayer, SiameseArch, SiameseNetwork, TrainConfig, Variant,
};

pub const CONFIG_ECHO: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub variant: Variant,
    /// Overrides the default conv widths; must match the variant's count.
    pub convs: Option<Vec<ConvLayer>>,
    pub embedding_dim: Option<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            variant: Variant::ThreeConv,
            convs: None,
            embedding_dim: None,
        }
    }
}

impl ArchConfig {
    pub fn resolve(&self) -> Result<SiameseArch> {
        let base = SiameseArch::new(self.variant);
        SiameseArch::custom(
            self.variant,
            self.convs.clone().unwrap_or(base.convs),
            self.embedding_dim.unwrap_or(base.embedding_dim),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Split,
    Nonstationary,
    Knn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub protocol: Protocol,
    pub split_percent: f64,
    pub iterations: usize,
    pub n_unknown: usize,
    pub metric: UnknownMetric,
    /// Pair draws per class and polarity for the 2×2 matrix, and per cell
    /// for the class matrices.
    pub tests_per_class: usize,
    pub pairs: usize,
    pub knn_k: usize,
    pub oracle: bool,
    pub reference_run: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Split,
            split_percent: 70.0,
            iterations: 50,
            n_unknown: 1,
            metric: UnknownMetric::PairAccuracy,
            tests_per_class: 15,
            pairs: 300,
            knn_k: 1,
            oracle: false,
            reference_run: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub segment_seconds: Option<f64>,
    pub dsp: DspConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub openset: OpenSetConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            cache_dir: None,
            out_dir: None,
            seed: 0,
            segment_seconds: None,
            dsp: DspConfig::nocturnal(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            openset: OpenSetConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.arch.resolve()?;
        self.train.validate()?;
        self.openset.validate()?;
        let e = &self.eval;
        if e.iterations == 0 || e.tests_per_class == 0 || e.pairs == 0 || e.knn_k == 0 {
            return Err(Error::Config("iterations, tests_per_class, pairs and knn_k must be positive".into()));
        }
        if !(e.split_percent > 0.0 && e.split_percent <= 100.0) {
            return Err(Error::Config(format!("split {}% outside (0, 100]", e.split_percent)));
        }
        if let Some(s) = self.segment_seconds {
            if !(s > 0.0) {
                return Err(Error::Config("segment_seconds must be positive".into()));
            }
        }
        Ok(())
    }

    fn cache(&self) -> PathBuf {
        cache::resolve_dir(self.cache_dir.as_deref())
    }

    fn out(&self) -> Result<PathBuf> {
        self.out_dir
            .clone()
            .ok_or_else(|| Error::Config("an output directory is required (--out)".into()))
    }

    fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_ECHO);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Parser)]
#[command(name = "oneshot-birds", version, about = "One-shot bird call identification with a Siamese CNN")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute log-Mel and MFCC features for every manifest clip.
    Extract(ExtractArgs),
    /// Train a Siamese network on the cached features.
    Train(TrainArgs),
    /// Classify inputs against a dictionary.
    Classify(ClassifyArgs),
    /// Classify a stream with change detection, growing the dictionary.
    Monitor(MonitorArgs),
    /// Run an evaluation protocol.
    Evaluate(EvaluateArgs),
    /// Write per-conv-layer activation maps.
    InspectActivations(InspectArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Nocturnal,
    Field,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Cache directory (default: $ONESHOT_BIRDS_CACHE, then ./cache).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub segment: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    ThreeConv,
    FourConv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub pairs_per_epoch: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `.lms` spectrograms, audio files, or directories of either.
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Starting dictionary; an empty one is used when absent.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Add matched inputs to their class as exemplars.
    #[arg(long)]
    pub accumulate: bool,
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub protocol: Option<Protocol>,
    /// Training share in percent.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Number of held-out classes.
    #[arg(long)]
    pub unknown: Option<usize>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Score with ground-truth labels instead of a trained network.
    #[arg(long)]
    pub oracle: bool,
    /// Print published reference accuracies beside the measured mean.
    #[arg(long)]
    pub reference_run: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Pair,
    OpenSet,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write grayscale PGM images.
    #[arg(long)]
    pub pgm: bool,
    pub inputs: Vec<PathBuf>,
}

/// Merge file config and flags for `cli`.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    match &cli.command {
        Command::Extract(a) => {
            set(&mut c.manifest, a.manifest.clone());
            set(&mut c.cache_dir, a.cache.clone());
            match a.preset {
                Some(Preset::Nocturnal) => c.dsp = DspConfig::nocturnal(),
                Some(Preset::Field) => c.dsp = DspConfig::field(),
                None => {}
            }
            set(&mut c.segment_seconds, a.segment);
        }
        Command::Train(a) => {
            set(&mut c.cache_dir, a.cache.clone());
            set(&mut c.out_dir, a.out.clone());
            if let Some(v) = a.variant {
                c.arch.variant = match v {
                    VariantArg::ThreeConv => Variant::ThreeConv,
                    VariantArg::FourConv => Variant::FourConv,
                };
            }
            a.epochs.map(|v| c.train.max_epochs = v);
            a.minibatch.map(|v| c.train.minibatch = v);
            a.lr.map(|v| c.train.lr = v);
            a.patience.map(|v| c.train.patience = v);
            if a.pairs_per_epoch.is_some() {
                c.train.pairs_per_epoch = a.pairs_per_epoch;
            }
            if let Some(o) = a.optimizer {
                c.train.optimizer = match o {
                    OptimizerArg::Sgd => crate::siamese::Optimizer::Sgd,
                    OptimizerArg::Adam => crate::siamese::Optimizer::Adam,
                };
            }
        }
        Command::Classify(a) => set(&mut c.out_dir, a.out.clone()),
        Command::Monitor(a) => {
            set(&mut c.out_dir, a.out.clone());
            a.threshold.map(|t| c.openset.threshold = t);
            if a.accumulate {
                c.openset.accumulate_exemplars = true;
            }
        }
        Command::Evaluate(a) => {
            set(&mut c.cache_dir, a.cache.clone());
            set(&mut c.out_dir, a.out.clone());
            a.protocol.map(|p| c.eval.protocol = p);
            a.split.map(|v| c.eval.split_percent = v);
            a.iterations.map(|v| c.eval.iterations = v);
            a.unknown.map(|v| c.eval.n_unknown = v);
            a.k.map(|v| c.eval.knn_k = v);
            if let Some(m) = a.metric {
                c.eval.metric = match m {
                    MetricArg::Pair => UnknownMetric::PairAccuracy,
                    MetricArg::OpenSet => UnknownMetric::OpenSet,
                };
            }
            c.eval.oracle |= a.oracle;
            c.eval.reference_run |= a.reference_run;
        }
        Command::InspectActivations(a) => set(&mut c.out_dir, a.out.clone()),
    }
    c.train.seed = c.seed;
    c.train.threshold = c.openset.threshold;
    c.validate()?;
    Ok(c)
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let config = resolve(cli)?;
    match &cli.command {
        Command::Extract(_) => cmd_extract(&config),
        Command::Train(_) => cmd_train(&config),
        Command::Classify(a) => cmd_classify(&config, a),
        Command::Monitor(a) => cmd_monitor(&config, a),
        Command::Evaluate(_) => cmd_evaluate(&config),
        Command::InspectActivations(a) => cmd_inspect(&config, a),
    }
}

pub fn cmd_extract(config: &RunConfig) -> Result<()> {
    let manifest_path = config
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("a manifest is required (--manifest)".into()))?;
    let dir = config.cache();
    config.echo(&dir)?;
    let manifest = load_manifest(manifest_path)?;
    let summary = cache::extract(&manifest, &config.dsp, config.segment_seconds, &dir)?;
    println!("{} extracted, {} skipped", summary.extracted, summary.skipped);
    for (path, msg) in &summary.failures {
        eprintln!("failed: {}: {msg}", path.display());
    }
    if summary.failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Batch {
            failed: summary.failures.len(),
            total: manifest.entries.len(),
        })
    }
}

fn input_shape(samples: &[Sample]) -> Result<[usize; 3]> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("the feature cache is empty".into()))?;
    Ok([1, first.spec.n_mels, first.spec.n_frames])
}

pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let out = config.out()?;
    config.echo(&out)?;
    let (index, samples) = cache::load_samples(&config.cache())?;
    let mut net = SiameseNetwork::build(config.arch.resolve()?, input_shape(&samples)?, config.seed)?;
    net.dsp = Some(index.dsp.clone());
    let report = train(&mut net, &samples, &config.train)?;
    net.save(out.join("model.snnp"), Some(&config.train))?;
    let history = out.join("history.json");
    fs::write(&history, serde_json::to_string_pretty(&report.history)? + "\n").map_err(|e| Error::io(&history, e))?;
    Dictionary::from_samples(&samples).save(out.join("dict"))?;
    let best = report.history.iter().find(|r| r.epoch == report.best_epoch);
    println!(
        "trained {} epochs (best {}); validation pair accuracy {:.4}",
        report.history.len(),
        report.best_epoch,
        best.map_or(f64::NAN, |r| r.val_acc)
    );
    Ok(())
}

/// Expand directories and load `.lms` files directly; anything else is
/// decoded as audio and featurized with the model's settings.
fn load_inputs(paths: &[PathBuf], net: &SiameseNetwork) -> Result<Vec<(String, LogMelSpectrogram)>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    let name = f.to_string_lossy();
                    (name.ends_with(".lms") && !name.ends_with(".mfcc.lms")) || name.ends_with(".wav")
                })
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    files
        .into_iter()
        .map(|f| {
            let spec = if f.extension().is_some_and(|e| e == "lms") {
                container::read_spectrogram(&f)?
            } else {
                let dsp = net
                    .dsp
                    .as_ref()
                    .ok_or_else(|| Error::Config("model has no feature settings; pass .lms inputs".into()))?;
                log_mel(&load_clip(&f)?, dsp)?
            };
            if let Some(dsp) = &net.dsp {
                if spec.config_id != dsp.config_id() {
                    return Err(Error::format(&f, "features were extracted with different settings than the model"));
                }
            }
            Ok((f.display().to_string(), spec))
        })
        .collect()
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    input: &'a str,
    #[serde(flatten)]
    prediction: &'a Prediction,
}

pub fn cmd_classify(config: &RunConfig, args: &ClassifyArgs) -> Result<()> {
    let out = config.out()?;
    config.echo(&out)?;
    let net = SiameseNetwork::load(&args.model)?;
    let dict = Dictionary::load(&args.dict)?;
    let inputs = load_inputs(&args.inputs, &net)?;
    let scorer = CachedScorer::new(net);
    let mut lines = Vec::with_capacity(inputs.len());
    for (name, spec) in &inputs {
        lines.push((name.clone(), classify(spec, &scorer, &dict)?));
    }
    let rows: Vec<PredictionLine> = lines
        .iter()
        .map(|(n, p)| PredictionLine {
            input: n,
            prediction: p,
        })
        .collect();
    write_jsonl(out.join("predictions.jsonl"), &rows, false)?;
    for r in &rows {
        println!("{}\t{}\t{:.4}", r.input, r.prediction.class_id, r.prediction.score);
    }
    Ok(())
}

pub fn cmd_monitor(config: &RunConfig, args: &MonitorArgs) -> Result<()> {
    let out = config.out()?;
    config.echo(&out)?;
    let net = SiameseNetwork::load(&args.model)?;
    let mut dict = match &args.dict {
        Some(d) if d.join(crate::openset::DICT_FILE).exists() => Dictionary::load(d)?,
        _ => Dictionary::new(),
    };
    let inputs = load_inputs(&args.inputs, &net)?;
    let (names, specs): (Vec<String>, Vec<LogMelSpectrogram>) = inputs.into_iter().unzip();
    let scorer = CachedScorer::new(net);
    let log = monitor(&specs, Some(&names), &scorer, &mut dict, &config.openset)?;
    let rows: Vec<PredictionLine> = names
        .iter()
        .zip(&log.predictions)
        .map(|(n, p)| PredictionLine {
            input: n,
            prediction: p,
        })
        .collect();
    write_jsonl(out.join("predictions.jsonl"), &rows, false)?;
    write_jsonl(out.join("events.jsonl"), &log.events, false)?;
    dict.save(out.join("dict"))?;
    println!("{} inputs, {} change events, {} classes", specs.len(), log.events.len(), dict.len());
    Ok(())
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<()> {
    let out = config.out()?;
    config.echo(&out)?;
    let dir = config.cache();
    let e = &config.eval;
    let result = match e.protocol {
        Protocol::Knn => {
            let features = cache::load_mfcc_means(&dir)?;
            knn_baseline(
                &features,
                &KnnOptions {
                    k: e.knn_k,
                    split: split_options(config),
                },
            )?
        }
        Protocol::Split | Protocol::Nonstationary => {
            let (_, samples) = cache::load_samples(&dir)?;
            if e.oracle {
                evaluate_with(config, &samples, &OracleScorer::from_samples(&samples), &out)?
            } else {
                let learner = SiameseLearner {
                    arch: config.arch.resolve()?,
                    input_shape: input_shape(&samples)?,
                    train: config.train.clone(),
                };
                evaluate_with(config, &samples, &learner, &out)?
            }
        }
    };
    result.write_json(out.join("report.json"))?;
    result.write_csv(out.join("report.csv"))?;
    println!(
        "{}: {:.2} ± {:.2} over {} iterations",
        result.protocol,
        result.mean,
        result.std,
        result.per_iteration.len()
    );
    if e.reference_run {
        for (name, value) in REFERENCE_TARGETS {
            println!("  reference {name}: {value:.2} (measured {:.2})", result.mean);
        }
    }
    Ok(())
}

fn split_options(config: &RunConfig) -> SplitOptions {
    SplitOptions {
        split_percent: config.eval.split_percent,
        iterations: config.eval.iterations,
        master_seed: config.seed,
    }
}

/// Split runs also write the first iteration's 2×2 pair confusion and
/// class-similarity matrices.
fn evaluate_with<L: Learner>(config: &RunConfig, samples: &[Sample], learner: &L, out: &Path) -> Result<ProtocolResult> {
    let e = &config.eval;
    match e.protocol {
        Protocol::Nonstationary => nonstationary_protocol(
            samples,
            learner,
            &UnknownOptions {
                n_unknown: e.n_unknown,
                iterations: e.iterations,
                master_seed: config.seed,
                metric: e.metric,
                pairs: e.pairs,
                threshold: config.openset.threshold,
            },
        ),
        _ => {
            let first = Mutex::new(None);
            let threshold = config.openset.threshold;
            let result = split_protocol_inspect(samples, learner, &split_options(config), |i, model, test| {
                if i == 0 {
                    let conf = pair_confusion(model, test, e.tests_per_class, threshold, config.seed).ok();
                    let ms = class_similarity_matrix(model, test, e.tests_per_class, threshold, config.seed)?;
                    *first.lock().unwrap() = Some((conf, ms));
                }
                Ok(())
            })?;
            if let Some((conf, ms)) = first.into_inner().unwrap() {
                if let Some(conf) = conf {
                    let p = out.join("pair_confusion.json");
                    fs::write(&p, serde_json::to_string_pretty(&conf)? + "\n").map_err(|e| Error::io(&p, e))?;
                }
                ms.write_csv(out.join("similarity_matrix.csv"))?;
                ms.complement().write_csv(out.join("dissimilarity_matrix.csv"))?;
            }
            Ok(result)
        }
    }
}

pub fn cmd_inspect(config: &RunConfig, args: &InspectArgs) -> Result<()> {
    let out = config.out()?;
    config.echo(&out)?;
    let net = SiameseNetwork::load(&args.model)?;
    let inputs = load_inputs(&args.inputs, &net)?;
    for (name, spec) in &inputs {
        let stem = Path::new(name)
            .file_stem()
            .map(|s| s.to_string_lossy().trim_end_matches(".lms").to_string())
            .unwrap_or_else(|| "input".into());
        let maps = net.export_activations(spec)?;
        let written = write_activation_maps(&out, &stem, &maps, args.pgm)?;
        println!("{name}: {} maps", written.len());
    }
    Ok(())
}
