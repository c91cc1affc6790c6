use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use advsig::classifier::Split;
use advsig::detector::{calibrate_threshold, Decision, DetectionVerdict, Detector, Orientation};
use advsig::experiment::{self, Data, Inputs, Report, RunLayout, HARDENED, SUBSTITUTE, TRANSFER, VICTIM};
use advsig::io::{self, ExperimentConfig, Seeds};

mod render;

/// Detect adversarial examples from distorted-replica prediction signatures.
#[derive(Parser, Debug)]
#[command(name = "advsig", version)]
struct Cli {
    /// Experiment config (JSON). Defaults to `<out>/config.json` if present,
    /// otherwise the built-in desk-scale config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; replaces every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory; replaces the config's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic train, validation and test splits.
    GenData(GenData),
    /// Train the victim and the substitute.
    Train(Train),
    /// Fine-tune the victim on FGSM examples.
    AdvTrain(AdvTrain),
    /// Compute per-class signature statistics.
    Stats(Stats),
    /// Build attack sets.
    Attack(Attack),
    /// Score every image of a container and flag the suspicious ones.
    Detect(Detect),
    /// Evaluate all artifacts and write the report.
    Eval,
    /// Print a report as tables.
    Report(ReportArgs),
    /// Every stage, then the report.
    Run,
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    validation_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TrainTarget {
    Victim,
    Substitute,
    Both,
}

#[derive(Args, Debug)]
struct Train {
    #[arg(long, value_enum, default_value = "both")]
    model: TrainTarget,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
}

#[derive(Args, Debug)]
struct AdvTrain {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    epsilon: Option<f32>,
    #[arg(long)]
    learning_rate: Option<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelName {
    Victim,
    Hardened,
}

impl ModelName {
    fn as_str(self) -> &'static str {
        match self {
            Self::Victim => VICTIM,
            Self::Hardened => HARDENED,
        }
    }
}

#[derive(Args, Debug)]
struct Stats {
    /// Defaults to the victim plus the hardened model if it exists.
    #[arg(long, value_enum)]
    model: Option<ModelName>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AttackTarget {
    Victim,
    Hardened,
    Transfer,
}

#[derive(Args, Debug)]
struct Attack {
    /// Defaults to the victim, plus transfer and hardened sets when those
    /// models exist.
    #[arg(long, value_enum)]
    target: Option<AttackTarget>,
    /// Only these configured attacks.
    #[arg(long = "only", value_name = "NAME", num_args = 1..)]
    only: Vec<String>,
    /// Samples attacked per white-box set.
    #[arg(long)]
    limit: Option<usize>,
    /// Samples attacked per black-box set.
    #[arg(long)]
    black_box_limit: Option<usize>,
}

#[derive(Args, Debug)]
struct Detect {
    /// Tensor container with the images to check; for an attack-set file,
    /// its adversarial images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "victim")]
    model: ModelName,
    /// Fixed threshold; by default calibrated on the validation split.
    #[arg(long)]
    threshold: Option<f64>,
    /// Target false-positive rate for calibration.
    #[arg(long)]
    fpr: Option<f64>,
    /// CSV file name inside the run directory.
    #[arg(long, default_value = "detections.csv")]
    output: String,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Defaults to `<out>/report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let stored = cli.out.as_ref().map(|o| RunLayout::new(o).config());
    let mut config = match (&cli.config, &stored) {
        (Some(p), _) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(p)) if p.is_file() => {
            ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?
        }
        _ => ExperimentConfig::desk(cli.seed.unwrap_or(0)),
    };
    if let Some(seed) = cli.seed {
        config.seeds = Seeds::from_master(seed);
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = resolve_config(&cli)?;
    let layout = RunLayout::new(&config.out_dir);
    match cli.command {
        Command::GenData(a) => gen_data(&mut config, &layout, a),
        Command::Train(a) => train(&mut config, &layout, a),
        Command::AdvTrain(a) => adv_train(&mut config, &layout, a),
        Command::Stats(a) => stats(&config, &layout, a),
        Command::Attack(a) => attack(&mut config, &layout, a),
        Command::Detect(a) => detect(&config, &layout, a),
        Command::Eval => eval(&config, &layout),
        Command::Report(a) => report(&layout, a),
        Command::Run => run(&config, &layout),
    }
}

fn save_config(config: &ExperimentConfig, layout: &RunLayout) -> Result<()> {
    io::write_atomic(&layout.config(), config.to_json().as_bytes())?;
    Ok(())
}

fn gen_data(config: &mut ExperimentConfig, layout: &RunLayout, a: GenData) -> Result<()> {
    let d = &mut config.data;
    if let Some(v) = a.classes {
        d.n_classes = v;
    }
    if let Some(v) = a.image_size {
        d.image_size = v;
    }
    if let Some(v) = a.train_per_class {
        d.train_per_class = v;
    }
    if let Some(v) = a.validation_per_class {
        d.validation_per_class = v;
    }
    if let Some(v) = a.test_per_class {
        d.test_per_class = v;
    }
    config.validate()?;
    let data = Data::prepare(config)?;
    data.save(layout)?;
    save_config(config, layout)?;
    println!(
        "wrote {} train, {} validation and {} test images to {}",
        data.train.len(),
        data.validation.len(),
        data.test.len(),
        layout.root().join("data").display()
    );
    Ok(())
}

fn load_data(layout: &RunLayout) -> Result<Data> {
    Data::load(layout).context("reading the datasets (run `gen-data` first)")
}

fn load_checkpoint(layout: &RunLayout, name: &str) -> Result<advsig::classifier::Checkpoint> {
    let p = layout.checkpoint(name);
    io::load_checkpoint(&p).with_context(|| format!("reading {}", p.display()))
}

fn train(config: &mut ExperimentConfig, layout: &RunLayout, a: Train) -> Result<()> {
    if let Some(v) = a.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        config.train.learning_rate = v;
    }
    config.validate()?;
    let data = load_data(layout)?;
    if a.model != TrainTarget::Substitute {
        let c = experiment::train_victim(config, &data)?;
        io::save_checkpoint(&layout.checkpoint(VICTIM), &c)?;
        println!("victim: test accuracy {:.4}", c.meta.test_accuracy.unwrap_or(f64::NAN));
    }
    if a.model != TrainTarget::Victim {
        let c = experiment::train_substitute(config, &data)?;
        io::save_checkpoint(&layout.checkpoint(SUBSTITUTE), &c)?;
        println!("substitute: test accuracy {:.4}", c.meta.test_accuracy.unwrap_or(f64::NAN));
    }
    Ok(())
}

fn adv_train(config: &mut ExperimentConfig, layout: &RunLayout, a: AdvTrain) -> Result<()> {
    let adv = &mut config.adversarial_training;
    if let Some(v) = a.epochs {
        adv.epochs = v;
    }
    if let Some(v) = a.epsilon {
        adv.epsilon = v;
    }
    if let Some(v) = a.learning_rate {
        adv.learning_rate = v;
    }
    config.validate()?;
    let data = load_data(layout)?;
    let victim = load_checkpoint(layout, VICTIM)?;
    let c = experiment::harden(config, &victim.model, &data)?;
    io::save_checkpoint(&layout.checkpoint(HARDENED), &c)?;
    println!("hardened: test accuracy {:.4}", c.meta.test_accuracy.unwrap_or(f64::NAN));
    Ok(())
}

fn stats(config: &ExperimentConfig, layout: &RunLayout, a: Stats) -> Result<()> {
    let names: Vec<&str> = match a.model {
        Some(m) => vec![m.as_str()],
        None if layout.checkpoint(HARDENED).is_file() => vec![VICTIM, HARDENED],
        None => vec![VICTIM],
    };
    let data = load_data(layout)?;
    for name in names {
        let c = load_checkpoint(layout, name)?;
        let s = experiment::statistics(config, &c.model, &data)?;
        io::save_statistics(&layout.statistics(name), &s)?;
        println!("{name}: statistics over {} distortions", s.distortions.label());
    }
    Ok(())
}

fn attack(config: &mut ExperimentConfig, layout: &RunLayout, a: Attack) -> Result<()> {
    if let Some(v) = a.limit {
        config.attack_limit = v;
    }
    if let Some(v) = a.black_box_limit {
        config.black_box_limit = v;
    }
    for name in &a.only {
        if config.attack(name).is_none() {
            bail!("attack {name:?} is not configured");
        }
    }
    if !a.only.is_empty() {
        config.attacks.retain(|x| a.only.contains(&x.name));
        config.black_box_attacks.retain(|x| a.only.contains(x));
    }
    config.validate()?;
    let targets = match a.target {
        Some(t) => vec![t],
        None => {
            let mut t = vec![AttackTarget::Victim];
            if layout.checkpoint(SUBSTITUTE).is_file() {
                t.push(AttackTarget::Transfer);
            }
            if layout.checkpoint(HARDENED).is_file() {
                t.push(AttackTarget::Hardened);
            }
            t
        }
    };
    let data = load_data(layout)?;
    let n = data.test.n_classes();
    for target in targets {
        let (prefix, sets) = match target {
            AttackTarget::Victim => {
                let m = load_checkpoint(layout, VICTIM)?.model;
                (VICTIM, experiment::white_box_sets(config, &m, &data.test)?)
            }
            AttackTarget::Hardened => {
                let m = load_checkpoint(layout, HARDENED)?.model;
                (HARDENED, experiment::white_box_sets(config, &m, &data.test)?)
            }
            AttackTarget::Transfer => {
                let victim = load_checkpoint(layout, VICTIM)?.model;
                let sub = load_checkpoint(layout, SUBSTITUTE)?.model;
                (TRANSFER, experiment::black_box_sets(config, &sub, &victim, &data.test)?)
            }
        };
        for s in sets {
            io::save_attack_set(&layout.attack_set(prefix, &s.name), &s.set, n)?;
            println!(
                "{prefix}-{}: {} of {} attacked samples fooled the victim",
                s.name,
                s.set.len(),
                s.set.attempted
            );
        }
    }
    Ok(())
}

fn detect(config: &ExperimentConfig, layout: &RunLayout, a: Detect) -> Result<()> {
    let name = a.model.as_str();
    let model = load_checkpoint(layout, name)?.model;
    let stats = io::load_statistics(&layout.statistics(name)).context("reading statistics (run `stats` first)")?;
    let detector = Detector::new(model, stats)?;
    let threshold = match a.threshold {
        Some(t) => t,
        None => {
            let validation = io::load_dataset(&layout.dataset(Split::Validation), Split::Validation)
                .context("reading the validation split for calibration")?;
            let scores: Vec<f64> = detector.score_batch(validation.images())?.into_iter().map(|s| s.1).collect();
            calibrate_threshold(&scores, a.fpr.unwrap_or(config.target_fpr), Orientation::HigherIsLegitimate)?
        }
    };
    let container = io::TensorContainer::load(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let images: Vec<_> = match io::attack_set_from_container(container.clone()) {
        Ok(set) => set.results.into_iter().map(|r| r.adversarial).collect(),
        Err(_) => container.records.into_iter().map(|r| r.tensor).collect(),
    };
    let scored = detector.score_batch(&images)?;
    let mut csv = String::from("index,class,score,decision\n");
    let mut flagged = 0;
    for (i, &(class, score)) in scored.iter().enumerate() {
        let decision = match DetectionVerdict::new(class, score, threshold).decision {
            Decision::Legitimate => "legitimate",
            Decision::Adversarial => {
                flagged += 1;
                "adversarial"
            }
        };
        csv.push_str(&format!("{i},{class},{score},{decision}\n"));
    }
    let out = layout.artifact(&a.output);
    io::write_atomic(&out, csv.as_bytes())?;
    println!(
        "threshold {threshold:.6}: flagged {flagged} of {} images; details in {}",
        images.len(),
        out.display()
    );
    Ok(())
}

fn eval(config: &ExperimentConfig, layout: &RunLayout) -> Result<()> {
    let inputs = Inputs::load(config, layout).context("reading run artifacts")?;
    let outcome = experiment::evaluate(config, &inputs)?;
    outcome.save(layout)?;
    for row in &outcome.report.white_box {
        println!("{}: AUC {:.4} (FS {:.4})", row.attack, row.auc, row.fs_auc);
    }
    println!("report written to {}", layout.report().display());
    Ok(())
}

fn report(layout: &RunLayout, a: ReportArgs) -> Result<()> {
    let path = a.report.unwrap_or_else(|| layout.report());
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report = Report::from_json(&text)?;
    print!("{}", render::tables(&report));
    Ok(())
}

fn run(config: &ExperimentConfig, layout: &RunLayout) -> Result<()> {
    config.validate()?;
    save_config(config, layout)?;
    let inputs = experiment::run(config)?;
    inputs.save(layout)?;
    let outcome = experiment::evaluate(config, &inputs)?;
    outcome.save(layout)?;
    print!("{}", render::tables(&outcome.report));
    println!("report written to {}", layout.report().display());
    Ok(())
}
