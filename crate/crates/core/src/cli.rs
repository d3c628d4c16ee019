//! Command-line interface: argument definitions and subcommand drivers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::cgan::{train_cgan, GanTriple};
use crate::classify::{novel_conditions, seen_conditions, Strategy, TaskMode};
use crate::config::{describe_keys, Config};
use crate::cptn::{class_targets, train_cptn};
use crate::data::{
    generate_benchmark, load_features, save_features, Dataset, FeatureFormat,
    SyntheticBenchmarkSpec,
};
use crate::diffcore::MlpNet;
use crate::error::{Error, Result};
use crate::evalharness::{
    ablation_table, results_table, run_protocol, run_seed_list, write_report_files, AblationArm,
    RunReport,
};
use crate::synth::{default_count, dump_synthetic, prune, synthesize_cycled};

#[derive(Debug, Parser)]
#[command(name = "protogan", version, about = "Prototype-conditioned GAN feature synthesis for few-shot classification")]
pub struct Cli {
    /// Output directory for every emitted file.
    #[arg(long, global = true, env = "PROTOGAN_OUT", default_value = "protogan-out")]
    pub out: PathBuf,

    /// key = value configuration file (see the key list below).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set gan.epochs=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Maximum number of runs evaluated concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Log more (-v info, -vv debug). `RUST_LOG` takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a Gaussian-cluster feature file.
    GenBenchmark(GenBenchmarkArgs),
    /// Train a prototype network on every class of a feature file.
    TrainCptn(TrainArgs),
    /// Train the conditional GAN on every class of a feature file.
    TrainCgan(TrainCganArgs),
    /// Generate (and optionally prune) features for classes given by shots.
    Synth(SynthArgs),
    /// Run the evaluation protocol and write reports.
    Run(RunArgs),
    /// Sweep pooling and pruning with paired seeds.
    Ablate(AblateArgs),
    /// Summarize a feature file, network, GAN or report.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct FeatureInput {
    /// Feature file (.csv or binary).
    #[arg(long)]
    pub features: PathBuf,
    /// Force the feature format instead of inferring it from the extension.
    #[arg(long)]
    pub format: Option<FeatureFormat>,
}

impl FeatureInput {
    fn load(&self) -> Result<Dataset> {
        let fmt = self
            .format
            .unwrap_or_else(|| FeatureFormat::from_path(&self.features));
        load_features(&self.features, fmt)
    }
}

#[derive(Debug, Args)]
pub struct GenBenchmarkArgs {
    #[arg(long, default_value_t = SyntheticBenchmarkSpec::default().num_classes)]
    pub classes: usize,
    #[arg(long, default_value_t = SyntheticBenchmarkSpec::default().dim)]
    pub dim: usize,
    #[arg(long = "per-class", default_value_t = SyntheticBenchmarkSpec::default().samples_per_class)]
    pub per_class: usize,
    /// Scale of the class-mean draw.
    #[arg(long, default_value_t = SyntheticBenchmarkSpec::default().mean_scale)]
    pub mean_scale: f64,
    /// Within-class standard deviation.
    #[arg(long, default_value_t = SyntheticBenchmarkSpec::default().within_std)]
    pub within_std: f64,
    /// Rank of the shared class-mean subspace; 0 draws means independently.
    #[arg(long, default_value_t = SyntheticBenchmarkSpec::default().latent_rank)]
    pub rank: usize,
    /// Constant added to every class mean.
    #[arg(long, default_value_t = SyntheticBenchmarkSpec::default().offset)]
    pub offset: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// File name inside the output directory.
    #[arg(long, default_value = "benchmark.pgf")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: FeatureInput,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainCganArgs {
    #[command(flatten)]
    pub input: FeatureInput,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Conditioning: learned/heuristic use class targets, sample uses each record.
    #[arg(long, default_value = "learned")]
    pub strategy: Strategy,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Trained GAN file from `train-cgan`.
    #[arg(long)]
    pub gan: PathBuf,
    /// Shots of the classes to synthesize.
    #[command(flatten)]
    pub input: FeatureInput,
    /// Prototype network from `train-cptn` (learned strategy only).
    #[arg(long)]
    pub cptn: Option<PathBuf>,
    #[arg(long, default_value = "learned")]
    pub strategy: Strategy,
    /// Samples per class; defaults to `synth.count`, else twice the largest
    /// training class recorded with the GAN.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output feature file name inside the output directory.
    #[arg(long, default_value = "synthetic.csv")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: FeatureInput,
    /// Protocols, comma-separated (gfsl, fsl). Sets `run.modes`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Shot counts, comma-separated. Sets `run.shots`.
    #[arg(long)]
    pub k: Option<String>,
    /// Strategies, comma-separated. Sets `run.strategies`.
    #[arg(long)]
    pub strategies: Option<String>,
    /// Number of runs. Sets `run.runs`.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Master seed. Sets `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub input: FeatureInput,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Strategy whose pipeline is ablated.
    #[arg(long, default_value = "learned")]
    pub strategy: Strategy,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// Parses arguments with the configuration key list appended to every
/// `--help` page.
pub fn parse_args<I, T>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let keys = format!("Configuration keys (config file or --set):\n{}", describe_keys());
    let cmd = Cli::command()
        .after_long_help(keys.clone())
        .mut_subcommands(|s| s.after_long_help(keys.clone()));
    let matches = cmd.try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

/// Files written by a command, in order.
pub type Emitted = Vec<PathBuf>;

fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got '{o}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    Ok(&cli.out)
}

/// Executes the parsed command, printing progress to stdout. Returns the
/// emitted files.
pub fn execute(cli: &Cli) -> Result<Emitted> {
    let mut cfg = resolve_config(cli)?;
    match &cli.command {
        Command::GenBenchmark(a) => gen_benchmark(cli, a),
        Command::TrainCptn(a) => cmd_train_cptn(cli, &cfg, a),
        Command::TrainCgan(a) => cmd_train_cgan(cli, &cfg, a),
        Command::Synth(a) => cmd_synth(cli, &cfg, a),
        Command::Run(a) => {
            let opts = [
                ("run.modes", a.mode.clone()),
                ("run.shots", a.k.clone()),
                ("run.strategies", a.strategies.clone()),
                ("run.runs", a.runs.map(|v| v.to_string())),
                ("run.seed", a.seed.map(|v| v.to_string())),
            ];
            for (k, v) in opts {
                if let Some(v) = v {
                    cfg.set(k, &v)?;
                }
            }
            cmd_run(cli, &cfg, &a.input)
        }
        Command::Ablate(a) => {
            let opts = [
                ("run.shots", a.k.clone()),
                ("run.runs", a.runs.map(|v| v.to_string())),
                ("run.seed", a.seed.map(|v| v.to_string())),
            ];
            for (k, v) in opts {
                if let Some(v) = v {
                    cfg.set(k, &v)?;
                }
            }
            cmd_ablate(cli, &cfg, &a.input, a.strategy)
        }
        Command::Inspect(a) => inspect(&a.path).map(|text| {
            print!("{text}");
            Vec::new()
        }),
    }
}

fn gen_benchmark(cli: &Cli, a: &GenBenchmarkArgs) -> Result<Emitted> {
    let spec = SyntheticBenchmarkSpec {
        num_classes: a.classes,
        dim: a.dim,
        samples_per_class: a.per_class,
        mean_scale: a.mean_scale,
        within_std: a.within_std,
        latent_rank: a.rank,
        offset: a.offset,
        seed: a.seed,
    };
    let ds = generate_benchmark(&spec)?;
    let path = out_dir(cli)?.join(&a.name);
    save_features(&path, &ds, FeatureFormat::from_path(&path))?;
    println!(
        "{} records, {} classes, dimension {}",
        ds.len(),
        ds.num_classes(),
        ds.dim()
    );
    Ok(vec![path])
}

fn cmd_train_cptn(cli: &Cli, cfg: &Config, a: &TrainArgs) -> Result<Emitted> {
    let ds = a.input.load()?;
    let model = train_cptn(ds.records(), &cfg.aggregation, &cfg.cptn, a.seed)?;
    let dir = out_dir(cli)?;
    let net_path = dir.join("cptn.pgm");
    write_file(&net_path, &model.net.to_bytes())?;
    let mut losses = String::from("epoch,loss\n");
    for (i, l) in model.epoch_losses.iter().enumerate() {
        losses.push_str(&format!("{},{l}\n", i + 1));
    }
    let loss_path = dir.join("cptn_losses.csv");
    write_file(&loss_path, losses.as_bytes())?;
    if let Some(l) = model.epoch_losses.last() {
        println!("final cosine loss {l:.6}");
    }
    Ok(vec![net_path, loss_path])
}

#[derive(serde::Serialize, serde::Deserialize)]
struct GanManifest {
    strategy: Strategy,
    max_class_size: usize,
    normalize_conditioning: bool,
    aggregation: crate::cptn::AggregationConfig,
    gan: crate::cgan::GanConfig,
}

fn cmd_train_cgan(cli: &Cli, cfg: &Config, a: &TrainCganArgs) -> Result<Emitted> {
    if a.strategy == Strategy::Base {
        return Err(Error::config("the base strategy trains no GAN"));
    }
    let ds = a.input.load()?;
    let agg = &cfg.aggregation;
    let targets = class_targets(ds.records(), agg)?;
    let conditions = seen_conditions(
        a.strategy,
        ds.records(),
        &targets,
        agg,
        cfg.synth.normalize_conditioning,
    )?;
    let dims = cfg.gan.dims(ds.dim(), agg.prototype_dim(ds.dim())?);
    let triple = GanTriple::init(dims, &cfg.gan, a.seed)?;
    let trained = train_cgan(ds.records(), &conditions, triple, &cfg.gan, a.seed)?;
    let manifest = GanManifest {
        strategy: a.strategy,
        max_class_size: ds.class_counts().into_iter().max().unwrap_or(0),
        normalize_conditioning: cfg.synth.normalize_conditioning,
        aggregation: *agg,
        gan: cfg.gan,
    };
    let manifest = serde_json::to_string(&manifest).expect("manifest serializes");
    let dir = out_dir(cli)?;
    let gan_path = dir.join("cgan.pgg");
    let mut bytes = Vec::new();
    trained
        .triple
        .write_to(&mut bytes, &manifest)
        .map_err(|e| Error::io(&gan_path, e))?;
    write_file(&gan_path, &bytes)?;

    let mut hist = String::from("epoch,critic_loss,wasserstein_gap,penalty,generator_loss,recon_loss,emd_loss\n");
    for (i, h) in trained.history.iter().enumerate() {
        hist.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i + 1,
            h.critic_loss,
            h.wasserstein_gap,
            h.penalty,
            h.generator_loss,
            h.recon_loss,
            h.emd_loss
        ));
    }
    let hist_path = dir.join("cgan_history.csv");
    write_file(&hist_path, hist.as_bytes())?;
    Ok(vec![gan_path, hist_path])
}

fn read_gan(path: &Path) -> Result<(GanTriple, GanManifest)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (triple, manifest) = GanTriple::read_from(&mut BufReader::new(file))?;
    let manifest: GanManifest = serde_json::from_str(&manifest).map_err(|e| Error::Format {
        what: "GAN manifest",
        message: e.to_string(),
    })?;
    Ok((triple, manifest))
}

fn read_net(path: &Path) -> Result<MlpNet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    MlpNet::read_from(&mut BufReader::new(file))
}

fn cmd_synth(cli: &Cli, cfg: &Config, a: &SynthArgs) -> Result<Emitted> {
    if a.strategy == Strategy::Base {
        return Err(Error::config("the base strategy synthesizes nothing"));
    }
    let (triple, manifest) = read_gan(&a.gan)?;
    let cptn = a.cptn.as_deref().map(read_net).transpose()?;
    let shots = a.input.load()?;
    let count = match (a.count, cfg.synth.count) {
        (Some(c), _) => c,
        (None, 0) => default_count(&[manifest.max_class_size])?,
        (None, c) => c,
    };
    let mut all = Vec::new();
    for class in shots.classes() {
        let rows: Vec<&[f64]> = shots
            .class_records(class)
            .into_iter()
            .map(|r| r.features.as_slice())
            .collect();
        let conditions = novel_conditions(
            a.strategy,
            &rows,
            &manifest.aggregation,
            cptn.as_ref(),
            manifest.normalize_conditioning,
        )?;
        let seed = crate::rng::derive_seed(a.seed, "synth", class as u64);
        let samples = synthesize_cycled(&triple, &conditions, class, count, seed)?;
        let kept = if cfg.synth.prune {
            prune(samples, cfg.synth.keep_fraction)?
        } else {
            samples
        };
        all.extend(kept.into_iter().map(|mut s| {
            s.class = shots.label_map()[s.class] as usize;
            s
        }));
    }
    let path = out_dir(cli)?.join(&a.name);
    let files = dump_synthetic(&path, &all, FeatureFormat::from_path(&path))?;
    println!("{} synthetic records for {} classes", all.len(), shots.num_classes());
    Ok(files)
}

fn seeds_for(cfg: &Config) -> Vec<u64> {
    run_seed_list(cfg.run.seed, cfg.run.runs)
}

fn cmd_run(cli: &Cli, cfg: &Config, input: &FeatureInput) -> Result<Emitted> {
    cfg.validate()?;
    let ds = input.load()?;
    let dir = out_dir(cli)?.to_path_buf();
    let seeds = seeds_for(cfg);
    let mut emitted = Vec::new();
    let config_path = dir.join("config.txt");
    write_file(&config_path, cfg.echo_text().as_bytes())?;
    emitted.push(config_path);

    let mut reports: Vec<RunReport> = Vec::new();
    for &k in &cfg.run.shots {
        match run_protocol(&ds, cfg, k, &cfg.run.modes, &cfg.run.strategies, &seeds, cli.jobs) {
            Ok(r) => reports.extend(r),
            Err(e) => {
                let marker = dir.join("INCOMPLETE");
                let _ = write_file(&marker, format!("failed at k = {k}: {e}\n").as_bytes());
                for p in &emitted {
                    println!("wrote {}", p.display());
                }
                println!("wrote {} (partial results)", marker.display());
                return Err(e);
            }
        }
    }
    for mode in &cfg.run.modes {
        let of_mode: Vec<RunReport> = reports.iter().filter(|r| r.mode == *mode).cloned().collect();
        emitted.extend(write_report_files(&dir, &mode.to_string(), &of_mode)?);
    }
    print!("{}", results_table(&reports));
    Ok(emitted)
}

fn cmd_ablate(cli: &Cli, cfg: &Config, input: &FeatureInput, strategy: Strategy) -> Result<Emitted> {
    cfg.validate()?;
    if !strategy.synthesizes() {
        return Err(Error::config("ablations need a synthesizing strategy"));
    }
    let ds = input.load()?;
    let dir = out_dir(cli)?.to_path_buf();
    let seeds = seeds_for(cfg);
    let mut arms = Vec::new();
    let mut run_arm = |name: String, arm_cfg: Config| -> Result<()> {
        let mut reports = Vec::new();
        for &k in &arm_cfg.run.shots {
            reports.extend(run_protocol(
                &ds,
                &arm_cfg,
                k,
                &[TaskMode::Gfsl],
                &[strategy],
                &seeds,
                cli.jobs,
            )?);
        }
        arms.push(AblationArm { name, reports });
        Ok(())
    };
    for pooling in ["none", "max", "avg"] {
        let mut c = cfg.clone();
        c.set("proto.pooling", pooling)?;
        c.set("synth.prune", "true")?;
        run_arm(format!("pooling={pooling}"), c)?;
    }
    let mut c = cfg.clone();
    c.set("synth.prune", "false")?;
    run_arm(format!("pooling={} pruning=off", cfg.aggregation.pooling), c)?;

    let mut emitted = Vec::new();
    let table = ablation_table(&arms);
    let table_path = dir.join("ablation.txt");
    write_file(&table_path, table.as_bytes())?;
    emitted.push(table_path);

    let mut csv = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format {
        what: "ablation CSV",
        message: e.to_string(),
    };
    csv.write_record(["arm", "strategy", "k", "run", "seed", "seen", "novel", "harmonic"])
        .map_err(err)?;
    for arm in &arms {
        for rep in &arm.reports {
            for r in &rep.runs {
                csv.write_record([
                    arm.name.clone(),
                    r.strategy.to_string(),
                    r.k.to_string(),
                    r.run.to_string(),
                    r.seed.to_string(),
                    r.seen_accuracy.map(|v| v.to_string()).unwrap_or_default(),
                    r.novel_accuracy.to_string(),
                    r.harmonic.map(|v| v.to_string()).unwrap_or_default(),
                ])
                .map_err(err)?;
            }
        }
    }
    let bytes = csv.into_inner().map_err(|e| Error::Format {
        what: "ablation CSV",
        message: e.to_string(),
    })?;
    let csv_path = dir.join("ablation.csv");
    write_file(&csv_path, &bytes)?;
    emitted.push(csv_path);
    let config_path = dir.join("config.txt");
    write_file(&config_path, cfg.echo_text().as_bytes())?;
    emitted.push(config_path);
    print!("{table}");
    Ok(emitted)
}

/// Human-readable summary of any file this tool writes.
pub fn inspect(path: &Path) -> Result<String> {
    let mut head = [0u8; 4];
    let n = File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::io(path, e))?;
    let head = &head[..n];
    let mut out = String::new();
    if head == b"PGF1" || FeatureFormat::from_path(path) == FeatureFormat::Csv && head.starts_with(b"labe") {
        let ds = load_features(path, FeatureFormat::from_path(path))?;
        out.push_str(&format!(
            "feature file: {} records, dimension {}, {} classes\n",
            ds.len(),
            ds.dim(),
            ds.num_classes()
        ));
        for (dense, count) in ds.class_counts().iter().enumerate() {
            out.push_str(&format!("  class {}: {count}\n", ds.label_map()[dense]));
        }
    } else if head == b"PGM1" {
        let net = read_net(path)?;
        out.push_str(&describe_net("network", &net));
    } else if head == b"PGG1" {
        let (t, manifest) = {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            GanTriple::read_from(&mut BufReader::new(file))?
        };
        out.push_str(&format!(
            "GAN: features {}, prototype {}, noise {}\nmanifest: {manifest}\n",
            t.dims.feature_dim, t.dims.proto_dim, t.dims.noise_dim
        ));
        out.push_str(&describe_net("generator", &t.generator));
        out.push_str(&describe_net("critic", &t.critic));
        out.push_str(&describe_net("decoder", &t.decoder));
    } else if head.first() == Some(&b'[') {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let reports: Vec<RunReport> = serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "report JSON",
            message: e.to_string(),
        })?;
        out.push_str(&results_table(&reports));
    } else {
        return Err(Error::Format {
            what: "input",
            message: format!("{} is not a recognized file", path.display()),
        });
    }
    Ok(out)
}

fn describe_net(name: &str, net: &MlpNet) -> String {
    let mut s = format!("{name}: {} parameters\n", net.num_params());
    for (i, l) in net.layers().iter().enumerate() {
        s.push_str(&format!(
            "  layer {i}: {} -> {} {:?}\n",
            l.in_dim(),
            l.out_dim(),
            l.activation
        ));
    }
    s
}

/// Entry point shared by the binary: parses, executes, lists emitted files
/// and maps the outcome to an exit code (0 ok, 1 failure, 2 usage).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match parse_args(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match execute(&cli) {
        Ok(files) => {
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            for f in files {
                let _ = writeln!(w, "wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
