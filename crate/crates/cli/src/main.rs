use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, ErrorKind};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use oslsp_core::experiment::{evaluate_model, generate_data, make_bags, train_model};
use oslsp_core::losses::sim_prop_loss;
use oslsp_core::seeds::{derive_seed, stream};
use oslsp_core::train::{extract_features, CheckpointPoint};
use oslsp_core::{Bag, ClassOrder, Dataset64, ExperimentConfig, Model64, ProportionTable64};

#[derive(Parser)]
#[command(name = "oslsp", version, about = "Similarity-proportion training on synthetic ordinal data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test datasets and the proportion table.
    GenData(GenData),
    /// Train the backbone and classifier head.
    Train(Train),
    /// Score a checkpoint on a labelled dataset.
    Eval(Eval),
    /// Write predicted and target similarity histograms for two bags.
    InspectHist(InspectHist),
}

#[derive(Args)]
struct Common {
    /// key = value experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Forces serial execution.
    #[arg(long)]
    deterministic: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
                ExperimentConfig::parse(&text, &p.display().to_string())?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenData {
    #[command(flatten)]
    common: Common,
    /// Output directory for train.csv, test.csv and proportions.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    common: Common,
    /// Training dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Proportion table; defaults to proportions.csv next to the dataset.
    #[arg(long)]
    proportions: Option<PathBuf>,
    /// Output directory for checkpoints, logs and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Histogram bin count; overrides the config.
    #[arg(long)]
    bins: Option<usize>,
    /// Gaussian kernel width; overrides the config.
    #[arg(long)]
    sigma: Option<f64>,
    /// Skip stage 1 and train the head on the random initial backbone.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct Eval {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset with truth labels; -1 marks unknown instances.
    #[arg(long)]
    data: PathBuf,
    /// 1-based class ranks for RMSE, e.g. `1,2,3,4,5`.
    #[arg(long)]
    class_order: Option<String>,
    /// Output directory for the metric files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectHist {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset the bags are drawn from.
    #[arg(long)]
    data: PathBuf,
    /// Proportion table; defaults to proportions.csv next to the dataset.
    #[arg(long)]
    proportions: Option<PathBuf>,
    /// Two bags as `DATE[:INDEX],DATE[:INDEX]`.
    #[arg(long)]
    bags: String,
    /// Histogram bin count; overrides the config.
    #[arg(long)]
    bins: Option<usize>,
    /// Gaussian kernel width; overrides the config.
    #[arg(long)]
    sigma: Option<f64>,
    /// Output directory for hist.csv and kl.txt.
    #[arg(long)]
    out: PathBuf,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> anyhow::Error {
    if e.kind() == ErrorKind::NotFound {
        anyhow::anyhow!("file not found: {}", path.display())
    } else {
        anyhow::Error::new(e).context(format!("{}", path.display()))
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create directory {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset64> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(Dataset64::parse(&text, &path.display().to_string())?)
}

fn proportions_path(data: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        data.parent()
            .unwrap_or_else(|| Path::new("."))
            .join("proportions.csv")
    })
}

fn load_table(path: &Path) -> Result<ProportionTable64> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(ProportionTable64::parse(&text, &path.display().to_string())?)
}

fn load_checkpoint(path: &Path) -> Result<Model64> {
    let f = fs::File::open(path).map_err(|e| io_error(path, e))?;
    Model64::read_checkpoint(BufReader::new(f)).with_context(|| format!("{}", path.display()))
}

fn checkpoint_bytes(model: &Model64) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    model.write_checkpoint(&mut buf)?;
    Ok(buf)
}

fn gen_data(args: GenData) -> Result<()> {
    let cfg = args.common.load()?;
    let data = generate_data::<f64>(&cfg)?;
    make_dir(&args.out)?;
    let mut files = Vec::new();
    for (name, ds) in [("train.csv", &data.train), ("test.csv", &data.test)] {
        let mut buf = Vec::new();
        ds.write_csv(&mut buf)?;
        files.push((name, buf));
    }
    let mut buf = Vec::new();
    data.schedule.write_csv(&mut buf)?;
    files.push(("proportions.csv", buf));
    for (name, bytes) in &files {
        write(&args.out.join(name), bytes)?;
    }

    println!("date       count  empirical proportions (train)");
    let k = data.train.classes;
    for date in data.train.dates() {
        let mut counts = vec![0usize; k];
        let mut n = 0;
        for inst in data.train.instances.iter().filter(|i| i.date == date) {
            if let Some(c) = inst.class {
                counts[c] += 1;
            }
            n += 1;
        }
        let props: Vec<String> = counts
            .iter()
            .map(|&c| format!("{:.3}", c as f64 / n as f64))
            .collect();
        println!("{date:<10} {n:>5}  {}", props.join(" "));
    }
    println!("wrote {} to {}", files.iter().map(|f| f.0).collect::<Vec<_>>().join(", "), args.out.display());
    Ok(())
}

fn manifest_text(
    cfg: &ExperimentConfig,
    inputs: &[(&str, &Path, String)],
    out: &Path,
    artifacts: &[(String, String)],
) -> String {
    let mut s = String::from("# oslsp experiment manifest\n");
    let _ = writeln!(s, "root_seed = {}", cfg.seed);
    for (name, id) in [
        ("model_init", stream::MODEL_INIT),
        ("bags", stream::BAGS),
        ("stage1", stream::STAGE1),
        ("stage2", stream::STAGE2),
    ] {
        let _ = writeln!(s, "seed.{name} = {}", derive_seed(cfg.seed, id));
    }
    for (name, path, sum) in inputs {
        let _ = writeln!(s, "input.{name} = {} sha256={sum}", path.display());
    }
    let _ = writeln!(s, "output_dir = {}", out.display());
    s.push_str("\n[config]\n");
    s.push_str(&cfg.to_config_string());
    s.push_str("\n[artifacts]\n");
    if artifacts.is_empty() {
        s.push_str("# pending\n");
    }
    for (name, sum) in artifacts {
        let _ = writeln!(s, "{name} sha256={sum}");
    }
    s
}

fn train(args: Train) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(b) = args.bins {
        cfg.train.bins = b;
    }
    if let Some(s) = args.sigma {
        cfg.train.sigma = s;
    }
    if args.baseline {
        cfg.baseline = true;
    }
    cfg.validate()?;
    let props_path = proportions_path(&args.data, &args.proportions);
    let dataset = load_dataset(&args.data)?;
    let table = load_table(&props_path)?;
    if dataset.input_dim != cfg.arch.input_dim || dataset.classes != cfg.arch.classes {
        bail!(
            "dataset has D_in={} K={}, config expects D_in={} K={}",
            dataset.input_dim,
            dataset.classes,
            cfg.arch.input_dim,
            cfg.arch.classes
        );
    }
    let bags = make_bags(&cfg, &dataset, &table)?;

    make_dir(&args.out)?;
    let inputs = [
        ("data", args.data.as_path(), sha256_file(&args.data)?),
        ("proportions", props_path.as_path(), sha256_file(&props_path)?),
    ];
    let manifest_path = args.out.join("manifest.txt");
    write(&manifest_path, manifest_text(&cfg, &inputs, &args.out, &[]))?;
    write(&args.out.join("config.txt"), cfg.to_config_string())?;

    let out = args.out.clone();
    let mut hook = |point: CheckpointPoint, model: &Model64| -> oslsp_core::Result<Option<String>> {
        let name = match point {
            CheckpointPoint::StageEnd { stage } => format!("stage{stage}.ckpt"),
            CheckpointPoint::Epoch { stage, epoch } => format!("stage{stage}_epoch{}.ckpt", epoch + 1),
        };
        let path = out.join(&name);
        let mut buf = Vec::new();
        model.write_checkpoint(&mut buf)?;
        fs::write(&path, buf).map_err(|e| oslsp_core::Error::Io { path, source: e })?;
        Ok(Some(name))
    };
    let (model, log) = train_model(&cfg, &bags, false, &mut hook)?;
    // joint mode has no separate head stage; the final model is stage 2 either way
    write(&args.out.join("stage2.ckpt"), checkpoint_bytes(&model)?)?;
    write(&args.out.join("train_log.csv"), log.steps_csv())?;
    write(&args.out.join("epoch_log.csv"), log.epochs_csv())?;

    let mut names: Vec<String> = log.checkpoints.clone();
    if !names.iter().any(|n| n == "stage2.ckpt") {
        names.push("stage2.ckpt".into());
    }
    names.push("train_log.csv".into());
    names.push("epoch_log.csv".into());
    names.push("config.txt".into());
    let artifacts = names
        .into_iter()
        .map(|n| {
            let sum = sha256_file(&args.out.join(&n))?;
            Ok((n, sum))
        })
        .collect::<Result<Vec<_>>>()?;
    write(&manifest_path, manifest_text(&cfg, &inputs, &args.out, &artifacts))?;

    if let Some((first, last)) = log.first_last_decile(1) {
        println!("stage 1 loss: {first:.5} -> {last:.5}");
    }
    if let Some((first, last)) = log.first_last_decile(2) {
        println!("stage 2 loss: {first:.5} -> {last:.5}");
    }
    println!("bags: {}  artifacts in {}", bags.len(), args.out.display());
    Ok(())
}

fn eval(args: Eval) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    if dataset.input_dim != model.arch.input_dim || dataset.classes != model.arch.classes {
        bail!(
            "architecture mismatch: checkpoint expects D_in={} K={}, dataset has D_in={} K={}",
            model.arch.input_dim,
            model.arch.classes,
            dataset.input_dim,
            dataset.classes
        );
    }
    let order = match &args.class_order {
        Some(s) => ClassOrder::parse(s, dataset.classes)?,
        None => ClassOrder::identity(dataset.classes),
    };
    let report = evaluate_model(&model, &dataset, &order)?;
    make_dir(&args.out)?;
    write(&args.out.join("metrics.txt"), report.to_table())?;
    write(&args.out.join("metrics.csv"), report.to_csv())?;
    write(&args.out.join("metrics_kv.txt"), report.to_key_values())?;
    write(&args.out.join("confusion.csv"), report.confusion_csv())?;
    print!("{}", report.to_table());
    Ok(())
}

fn pick_bag<'a>(bags: &'a [Bag<f64>], spec: &str) -> Result<&'a Bag<f64>> {
    let (date, index) = match spec.split_once(':') {
        Some((d, i)) => (d.trim(), i.trim().parse::<usize>().context("bag index must be an integer")?),
        None => (spec.trim(), 0),
    };
    let of_date: Vec<&Bag<f64>> = bags.iter().filter(|b| b.date == date).collect();
    if of_date.is_empty() {
        bail!("unknown date label `{date}`");
    }
    of_date
        .get(index)
        .copied()
        .with_context(|| format!("date `{date}` has {} bags, index {index} requested", of_date.len()))
}

fn inspect_hist(args: InspectHist) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(b) = args.bins {
        cfg.train.bins = b;
    }
    if let Some(s) = args.sigma {
        cfg.train.sigma = s;
    }
    cfg.validate()?;
    let model = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let table = load_table(&proportions_path(&args.data, &args.proportions))?;
    if dataset.input_dim != model.arch.input_dim {
        bail!(
            "architecture mismatch: checkpoint expects D_in={}, dataset has D_in={}",
            model.arch.input_dim,
            dataset.input_dim
        );
    }
    let Some((spec_a, spec_b)) = args.bags.split_once(',') else {
        bail!("--bags expects two bag specs separated by a comma");
    };
    // dates are checked up front so a typo is reported as such
    for spec in [spec_a, spec_b] {
        let date = spec.split(':').next().unwrap_or("").trim();
        table.get(date)?;
    }
    let bags = make_bags(&cfg, &dataset, &table)?;
    let (a, b) = (pick_bag(&bags, spec_a)?, pick_bag(&bags, spec_b)?);
    let threads = cfg.train_config().threads;
    let fa = extract_features(&model.backbone, &a.inputs, threads)?;
    let fb = extract_features(&model.backbone, &b.inputs, threads)?;
    let sim = cfg.train.sim_prop::<f64>()?;
    // no permutation: aligned pairs are index-aligned, so a bag against
    // itself gives s = 1 everywhere
    let r = sim_prop_loss(&fa, &fb, &a.proportion, &b.proportion, &sim, None)?;
    make_dir(&args.out)?;
    let mut csv = String::from("bin_center,predicted,target\n");
    for (i, (p, t)) in r.predicted.values().iter().zip(r.target.values()).enumerate() {
        let _ = writeln!(csv, "{},{p},{t}", sim.bins.center::<f64>(i));
    }
    write(&args.out.join("hist.csv"), csv)?;
    write(&args.out.join("kl.txt"), format!("kl={}\n", r.loss))?;
    println!("bags {} and {}: KL(predicted || target) = {:.6}", spec_a.trim(), spec_b.trim(), r.loss);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OSLSP_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::InspectHist(a) => inspect_hist(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
