//! `forcecast`: data generation, training, evaluation, ablation,
//! verification, and attention inspection for the force-distilled policy
//! stack, as one reproducible command-line surface.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 IO or missing
//! artifact, 3 numerical failure.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{output_root, RunConfig};
use forcecast_core::checkpoint;
use forcecast_core::contactsim::dataset::Dataset;
use forcecast_core::contactsim::expert::expert_action;
use forcecast_core::contactsim::render::render;
use forcecast_core::contactsim::{
    contact_wrench, episode_done, step, NoiseState, SimParams, Task, WorldState,
};
use forcecast_core::embedding::ModalityBundle;
use forcecast_core::error::Error as CoreError;
use forcecast_core::fusion::build_directional_mask;
use forcecast_core::numerics::rng::RngStream;
use forcecast_core::numerics::tape::Tape;
use forcecast_core::trainer::{self, ForceChannel};
use forcecast_core::Variant;

#[derive(Parser)]
#[command(name = "forcecast", version, about = "force-distilled policy pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an expert demonstration dataset.
    GenData(GenDataArgs),
    /// Train a policy from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint closed-loop.
    Eval(EvalArgs),
    /// Train and evaluate every variant under identical budgets.
    Ablation(AblationArgs),
    /// Run the invariant suites (gradients, masks, one-way flow, oracle).
    Verify,
    /// Dump the directional mask and per-step attention for one episode.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// auto: sensor variants receive the sensed wrench; off: withhold force
    /// from every observation.
    #[arg(long, default_value = "auto")]
    force_channel: String,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with one dataset subdirectory per task (wipe/press/insert).
    #[arg(long)]
    data_root: PathBuf,
    #[arg(long, default_value = "wipe,press,insert")]
    tasks: String,
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 900)]
    eval_seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

fn classify(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Config(_)
                | CoreError::Input(_)
                | CoreError::Mode(_)
                | CoreError::Contract(_)
                | CoreError::Dim { .. } => 1,
                CoreError::Io(_) | CoreError::Format(_) => 2,
                CoreError::Numeric { .. } => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return 1;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablation(a) => cmd_ablation(a),
        Command::Verify => cmd_verify(),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    if a.count == 0 {
        return Err(anyhow!(CoreError::Input("--count must be at least 1".into())));
    }
    let task = Task::parse(&a.task)?;
    let out = a
        .out
        .unwrap_or_else(|| PathBuf::from(output_root()).join(format!("data-{}", task.name())));
    let sim = SimParams::default();
    let dataset = Dataset::generate(task, a.count, a.seed, &sim)?;
    dataset.validate()?;
    dataset.save(&out)?;
    println!(
        "wrote {} episodes ({} steps) to {}",
        dataset.episodes.len(),
        dataset.total_steps(),
        out.display()
    );
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cfg.run.task.is_empty() {
        cfg.run.task = "wipe".to_string();
    }
    if let Some(t) = &a.task {
        cfg.run.task = t.clone();
    }
    if let Some(v) = &a.variant {
        cfg.train.variant = Variant::parse(v)?;
    }
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(d) = &a.data {
        cfg.run.data = d.display().to_string();
    }
    if let Some(o) = &a.out {
        cfg.run.out = o.display().to_string();
    }
    if cfg.run.data.is_empty() {
        return Err(anyhow!(CoreError::Config(
            "no dataset: set [run].data or pass --data".into()
        )));
    }
    let out = if cfg.run.out.is_empty() {
        PathBuf::from(output_root()).join(format!(
            "train-{}-{}-s{}",
            cfg.run.task,
            cfg.train.variant.name(),
            cfg.train.seed
        ))
    } else {
        PathBuf::from(&cfg.run.out)
    };
    cfg.run.out = out.display().to_string();
    Ok((cfg, out))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (cfg, out) = resolve_train_config(&a)?;
    let task = Task::parse(&cfg.run.task)?;
    let dataset = Dataset::load(Path::new(&cfg.run.data))
        .with_context(|| format!("loading dataset {}", cfg.run.data))?;
    if dataset.task != task {
        return Err(anyhow!(CoreError::Config(format!(
            "dataset task {} does not match configured task {}",
            dataset.task.name(),
            task.name()
        ))));
    }
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.resolved.toml"), cfg.to_toml()?)?;

    let mut metrics = fs::File::create(out.join("metrics.jsonl"))?;
    let (model, report) = trainer::train(&dataset, &cfg.model, &cfg.train, Some(&mut metrics))?;
    let ckpt = out.join("checkpoint.fck");
    checkpoint::save(&ckpt, &model)?;

    let final_loss = report.final_loss();
    let report_json = serde_json::json!({
        "task": task.name(),
        "variant": cfg.train.variant.name(),
        "steps": cfg.train.steps,
        "seed": cfg.train.seed,
        "final": final_loss,
        "frozen_digest_before": report.frozen_digest_before,
        "frozen_digest_after": report.frozen_digest_after,
        "wall_secs": report.wall_secs,
        "checkpoint": ckpt.display().to_string(),
    });
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report_json)?)?;
    println!(
        "trained {} / {} for {} steps in {:.1}s; final total={:.4} flow={:.4} distill={:.4} recon={:.4}",
        task.name(),
        cfg.train.variant.name(),
        cfg.train.steps,
        report.wall_secs,
        final_loss.total,
        final_loss.flow,
        final_loss.distill,
        final_loss.recon,
    );
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let task = Task::parse(&a.task)?;
    let model = checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let channel = match a.force_channel.as_str() {
        "auto" => ForceChannel::Auto,
        "off" => ForceChannel::Withheld,
        other => {
            return Err(anyhow!(CoreError::Config(format!(
                "unknown force channel {other:?} (auto|off)"
            ))))
        }
    };
    let sim = SimParams::default();
    let report = trainer::evaluate(&model, task, a.episodes, a.seed, &sim, 10, channel)?;
    println!(
        "success rate {:.1}% ({}/{} episodes, 95% CI ±{:.1} points, mean length {:.0} steps)",
        100.0 * report.rate,
        report.successes,
        report.episodes,
        100.0 * report.ci_half_width,
        report.mean_steps,
    );
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_ablation(a: AblationArgs) -> Result<()> {
    let base = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let tasks: Vec<Task> = a
        .tasks
        .split(',')
        .map(|t| Task::parse(t.trim()))
        .collect::<forcecast_core::Result<_>>()?;
    let seeds: Vec<u64> = a
        .seeds
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<std::result::Result<_, _>>()
        .context("parsing --seeds")?;
    let mut datasets = Vec::new();
    for task in &tasks {
        let dir = a.data_root.join(task.name());
        let ds =
            Dataset::load(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
        if ds.task != *task {
            return Err(anyhow!(CoreError::Config(format!(
                "dataset in {} is for task {}",
                dir.display(),
                ds.task.name()
            ))));
        }
        datasets.push(ds);
    }
    let variants = [
        Variant::NoForce,
        Variant::NoFdm,
        Variant::FdmForceToken,
        Variant::FdmLearnable,
    ];
    let mut stdout = std::io::stdout();
    let table = trainer::run_ablation(
        &datasets,
        &base.model,
        &base.train,
        &variants,
        &seeds,
        a.episodes,
        a.eval_seed,
        Some(&mut stdout),
    )?;
    let text = table.render_text();
    println!("\n{text}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("ablation.txt"), &text)?;
        fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&table)?)?;
        println!("wrote {}", out.join("ablation.json").display());
    }
    Ok(())
}

fn cmd_verify() -> Result<()> {
    let results = forcecast_core::verify::run_all()?;
    let mut all_pass = true;
    for r in &results {
        println!("{}", r.line());
        all_pass &= r.passed;
    }
    if all_pass {
        println!("verify: all {} suites passed", results.len());
        Ok(())
    } else {
        Err(anyhow!(CoreError::Numeric {
            step: 0,
            detail: "one or more verification suites failed".into()
        }))
    }
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let out = a
        .out
        .unwrap_or_else(|| PathBuf::from(output_root()).join("inspect"));
    fs::create_dir_all(&out)?;

    // replay one scripted-expert episode and capture attention per step
    let task = Task::Wipe;
    let sim = SimParams::default();
    let rng = RngStream::new(a.seed);
    let mut world = WorldState::init(task, &mut rng.derive_str("world"));
    let mut noise = NoiseState::default();
    let mut noise_rng = rng.derive_str("sensor");

    let mut attn_file = fs::File::create(out.join("attention.txt"))?;
    let mut mask_written = false;
    let mut contact_vision_mass = Vec::new();
    let mut free_vision_mass = Vec::new();

    while !episode_done(&world, &sim) {
        let wrench = contact_wrench(&world, &sim);
        let (sensed, _) = noise.sense(wrench.clean, &sim, &mut noise_rng);
        let bundle = ModalityBundle {
            language: task.instruction().to_string(),
            vision: render(&world),
            state: world.state_vector(),
            force: model.variant.needs_sensor().then(|| sensed.to_vec()),
        };
        let mut tape = Tape::new(&model.store);
        let pass = model.forward_features(&mut tape, &bundle)?;
        if !mask_written {
            let mask = build_directional_mask(&pass.layout);
            let mut text = String::new();
            let n = pass.layout.n_total();
            for i in 0..n {
                for j in 0..n {
                    text.push(if mask.mask.allowed(i, j) { '1' } else { '0' });
                    if j + 1 < n {
                        text.push(' ');
                    }
                }
                text.push('\n');
            }
            fs::write(out.join("mask.txt"), text)?;
            mask_written = true;
        }
        if let Some(attn) = &pass.attention {
            writeln!(attn_file, "step {}", world.steps)?;
            let n_v = pass.layout.n_vision;
            let mut vision_mass = 0.0;
            for (h, alpha) in attn.per_head.iter().enumerate() {
                let values = tape.value(*alpha);
                let row: Vec<String> = values.data().iter().map(|v| format!("{v:.6}")).collect();
                writeln!(attn_file, "  head {h}: {}", row.join(" "))?;
                // context rows are [query, vision.., state]
                vision_mass += values.data()[1..1 + n_v].iter().sum::<f64>();
            }
            vision_mass /= attn.per_head.len() as f64;
            if wrench.in_contact() {
                contact_vision_mass.push(vision_mass);
            } else {
                free_vision_mass.push(vision_mass);
            }
        }
        let action = expert_action(&world, &sim);
        step(&mut world, action, &sim);
    }

    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    println!(
        "inspect: {} steps; mean attention mass on vision tokens: contact {:.4} ({} steps) vs free {:.4} ({} steps)",
        world.steps,
        mean(&contact_vision_mass),
        contact_vision_mass.len(),
        mean(&free_vision_mass),
        free_vision_mass.len(),
    );
    println!(
        "wrote {} and {}",
        out.join("mask.txt").display(),
        out.join("attention.txt").display()
    );
    Ok(())
}
