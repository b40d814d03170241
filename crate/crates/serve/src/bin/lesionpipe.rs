use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lesionpipe::augment::{apply_plan, plan_augmentation};
use lesionpipe::data::{load_image, load_manifest, profile_dataset, resize_bilinear, stratified_split, RawManifest};
use lesionpipe::eda::{class_dispersion_image, class_mean_image, difference_heatmap};
use lesionpipe::nn::{build_network, load_weights, save_weights};
use lesionpipe::pipeline::{
    current_triggers, evaluate_model, no_deploy, run_pipeline, validate_schema, SchemaExpectations, Stage, Trigger,
    Workspace,
};
use lesionpipe::synth::{write_dataset, Domain};
use lesionpipe::{DatasetManifest, Label, PixelImage};
use lesionpipe_serve::{AppConfig, AppState};

#[derive(Parser)]
#[command(name = "lesionpipe", version, about = "Skin-lesion classifier with a continuous-training pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON config file holding the pipeline and serve sections.
    #[arg(long, global = true, env = "LESIONPIPE_CONFIG")]
    config: Option<PathBuf>,
    /// Workspace for the registry, state, feedback and run reports.
    #[arg(long, global = true, env = "LESIONPIPE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Dataset manifest; overrides the config.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Weights to evaluate, or to start training from.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, or the weights file written by `train`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest against the model input and print its profile.
    Ingest,
    /// Per-class mean, variance and std images plus the difference heatmap.
    Eda,
    /// Split the manifest and augment the training part.
    Augment {
        /// Per-class targets such as `malignant=750`; default multiplicities otherwise.
        #[arg(long = "target", value_parser = parse_target)]
        targets: Vec<(Label, usize)>,
    },
    /// Train a model on a manifest.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate weights on a manifest.
    Eval,
    /// Inspect or promote registered model versions.
    #[command(subcommand)]
    Registry(RegistryCmd),
    /// Run the continuous-training pipeline or show its trigger status.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
    /// Write a synthetic lesion dataset.
    Synth {
        #[arg(long, default_value_t = 300)]
        benign: usize,
        #[arg(long, default_value_t = 300)]
        malignant: usize,
        #[arg(long, value_enum, default_value = "a")]
        domain: DomainArg,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
}

#[derive(Subcommand)]
enum RegistryCmd {
    /// All versions with their stage and headline metrics.
    List,
    /// Move a version to production, archiving the current one.
    Promote { version: u64 },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Run the pipeline once now.
    Run {
        /// Run only if a trigger fires.
        #[arg(long)]
        if_triggered: bool,
    },
    Status,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    A,
    B,
}

fn parse_target(s: &str) -> Result<(Label, usize), String> {
    let (label, n) = s.split_once('=').ok_or("expected <label>=<count>")?;
    let label: Label = label.parse().map_err(|e| format!("{e}"))?;
    Ok((label, n.parse().map_err(|e| format!("{e}"))?))
}

fn load_config(g: &Global) -> Result<AppConfig> {
    let mut cfg = match &g.config {
        Some(path) => AppConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => AppConfig::default(),
    };
    if let Some(dir) = &g.data_dir {
        cfg.pipeline.data_dir = dir.clone();
    }
    if let Some(m) = &g.manifest {
        cfg.pipeline.manifest = Some(m.clone());
    }
    if let Some(seed) = g.seed {
        let t = &mut cfg.pipeline.training;
        t.split_seed = seed;
        t.augment_seed = seed;
        t.init_seed = seed;
        t.train.shuffle_seed = seed;
    }
    Ok(cfg)
}

fn manifest(cfg: &AppConfig) -> Result<DatasetManifest> {
    let path = cfg.pipeline.manifest.as_ref().context("--manifest is required")?;
    Ok(load_manifest(path)?)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_or_print(out: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, serde_json::to_string_pretty(value)?)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => print_json(value),
    }
}

fn ingest(cfg: &AppConfig, out: Option<&Path>) -> Result<()> {
    let path = cfg.pipeline.manifest.as_ref().context("--manifest is required")?;
    let raw = RawManifest::load(path)?;
    let [c, h, w] = cfg.pipeline.training.network.input_shape;
    let expect = SchemaExpectations { shape: lesionpipe::data::ExpectedShape { width: w, height: h, channels: c } };
    let schema = validate_schema(&raw, &expect);
    if !schema.passed {
        print_json(&schema)?;
        bail!("schema validation failed");
    }
    let manifest = raw.into_manifest()?;
    let profile = profile_dataset(&manifest)?;
    eprintln!("{} records: {:?}", manifest.len(), manifest.class_counts());
    write_or_print(out, &profile)
}

fn eda(cfg: &AppConfig, out: &Path) -> Result<()> {
    let m = manifest(cfg)?;
    let e = m.expected;
    let mut by_class: BTreeMap<Label, Vec<PixelImage>> = BTreeMap::new();
    for r in &m.records {
        let img = resize_bilinear(&load_image(&r.image_path)?, e.width, e.height)?;
        by_class.entry(r.label).or_default().push(img);
    }
    let mut means = BTreeMap::new();
    for (label, images) in &by_class {
        let mean = class_mean_image(images)?;
        let (var, std) = class_dispersion_image(images)?;
        mean.export(out, &format!("{}_mean", label.as_str()))?;
        var.export(out, &format!("{}_variance", label.as_str()))?;
        std.export(out, &format!("{}_std", label.as_str()))?;
        means.insert(*label, mean);
    }
    if let (Some(b), Some(m)) = (means.get(&Label::Benign), means.get(&Label::Malignant)) {
        difference_heatmap(b, m)?.save_png(&out.join("difference_heatmap.png"))?;
    }
    eprintln!("wrote EDA images to {}", out.display());
    Ok(())
}

fn augment(cfg: &AppConfig, out: &Path, targets: &[(Label, usize)]) -> Result<()> {
    let m = manifest(cfg)?;
    let t = &cfg.pipeline.training;
    let split = stratified_split(&m, t.train_fraction, t.split_seed)?;
    let train = split.train_manifest(&m);
    let test = split.test_manifest(&m);
    let targets: BTreeMap<Label, usize> = targets.iter().copied().collect();
    let plan = plan_augmentation(&train.class_counts(), (!targets.is_empty()).then_some(&targets))?;
    let augmented = apply_plan(&train, &plan, t.augment_seed, out)?;
    augmented.save(&out.join("train.json"))?;
    test.save(&out.join("test.json"))?;
    eprintln!(
        "train {} -> {} ({:?}), test {}",
        train.len(),
        augmented.len(),
        plan.output_counts(),
        test.len()
    );
    Ok(())
}

fn train(cfg: &AppConfig, g: &Global, epochs: Option<usize>) -> Result<()> {
    let out = g.out.as_ref().context("--out <weights file> is required")?;
    let t = &cfg.pipeline.training;
    let m = manifest(cfg)?;
    let mut train_cfg = t.train.clone();
    if let Some(n) = epochs {
        train_cfg.epochs = n;
    }
    let net = t.network.clone();
    let mut params = match g.weights.as_ref().or(t.init_weights.as_ref()) {
        Some(path) => lesionpipe::nn::load_weights_with(path, &net)?,
        None => build_network(&net, t.init_seed)?,
    };
    let set = examples(&m, cfg)?;
    let history = lesionpipe::nn::train_with(&mut params, &net, &set, &train_cfg, |s, _| {
        eprintln!("epoch {:>3}  loss {:.4}  acc {:.3}", s.epoch, s.mean_loss, s.train_accuracy);
        std::ops::ControlFlow::Continue(())
    })?;
    save_weights(&params, &net, out)?;
    eprintln!("wrote {} after {} epochs ({} ms)", out.display(), history.epochs.len(), history.wall_time_ms);
    Ok(())
}

fn examples(m: &DatasetManifest, cfg: &AppConfig) -> Result<lesionpipe::nn::ExampleSet> {
    let t = &cfg.pipeline.training;
    let mut set = lesionpipe::nn::ExampleSet::new(t.network.input_shape);
    for r in &m.records {
        let x = lesionpipe::data::prepare_input(&load_image(&r.image_path)?, t.network.input_shape, t.norm)?;
        set.push(x.data(), r.label)?;
    }
    Ok(set)
}

fn eval(cfg: &AppConfig, g: &Global) -> Result<()> {
    let weights = g.weights.as_ref().context("--weights is required")?;
    let (params, net) = load_weights(weights)?;
    let report = evaluate_model(&params, &net, &manifest(cfg)?, &cfg.pipeline)?;
    write_or_print(g.out.as_deref(), &report)
}

fn registry(cfg: &AppConfig, cmd: &RegistryCmd) -> Result<()> {
    let mut reg = Workspace::new(&cfg.pipeline.data_dir).registry()?;
    match cmd {
        RegistryCmd::List => {
            for v in reg.list()? {
                println!(
                    "v{:<4} {:<10} acc {:.4}  auc {}  {}",
                    v.version_id,
                    v.stage,
                    v.eval.accuracy,
                    v.eval.auc.map_or("-".into(), |a| format!("{a:.4}")),
                    v.created_at.to_rfc3339()
                );
            }
        }
        RegistryCmd::Promote { version } => {
            let v = reg.transition_stage(*version, Stage::Production)?;
            println!("v{} is now {}", v.version_id, v.stage);
        }
    }
    Ok(())
}

fn pipeline(cfg: &AppConfig, cmd: &PipelineCmd) -> Result<()> {
    match cmd {
        PipelineCmd::Run { if_triggered } => {
            let (decision, _) = current_triggers(&cfg.pipeline, Utc::now())?;
            let triggers: Vec<Trigger> = if *if_triggered {
                if !decision.fires() {
                    eprintln!("no trigger fired");
                    return Ok(());
                }
                decision.fired.iter().copied().collect()
            } else {
                vec![Trigger::Manual]
            };
            let report = run_pipeline(&cfg.pipeline, &triggers, &no_deploy)?;
            for s in &report.stages {
                eprintln!("{:<18} {:<8} {:>7} ms  {}", format!("{:?}", s.stage), format!("{:?}", s.status), s.elapsed_ms, s.detail);
            }
            print_json(&serde_json::json!({
                "run_id": report.run_id,
                "completed": report.completed,
                "aborted_at": report.aborted_at,
                "promoted": report.promoted,
                "production_version": report.production_version,
            }))
        }
        PipelineCmd::Status => {
            let (decision, state) = current_triggers(&cfg.pipeline, Utc::now())?;
            print_json(&serde_json::json!({ "decision": decision, "state": state }))
        }
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let g = &cli.global;
    let mut cfg = load_config(g)?;
    match &cli.command {
        Command::Ingest => ingest(&cfg, g.out.as_deref()),
        Command::Eda => eda(&cfg, g.out.as_deref().unwrap_or(Path::new("eda"))),
        Command::Augment { targets } => augment(&cfg, g.out.as_deref().unwrap_or(Path::new("augmented")), targets),
        Command::Train { epochs } => train(&cfg, g, *epochs),
        Command::Eval => eval(&cfg, g),
        Command::Registry(cmd) => registry(&cfg, cmd),
        Command::Pipeline(cmd) => pipeline(&cfg, cmd),
        Command::Serve { port } => {
            if let Some(p) = port {
                cfg.serve.port = *p;
            }
            let state = Arc::new(AppState::open(cfg)?);
            tokio::runtime::Runtime::new()?.block_on(lesionpipe_serve::serve(state))
        }
        Command::Synth { benign, malignant, domain, size } => {
            let out = g.out.as_deref().unwrap_or(Path::new("synth"));
            let domain = match domain {
                DomainArg::A => Domain::A,
                DomainArg::B => Domain::B,
            };
            let m = write_dataset(out, *benign, *malignant, domain, *size, g.seed.unwrap_or(0))?;
            eprintln!("wrote {} images and {}", m.len(), out.join("manifest.json").display());
            Ok(())
        }
    }
}
