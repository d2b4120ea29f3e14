use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use asrse3::blockworld::{tasks, BlockWorldConfig};
use asrse3::config::KvConfig;
use asrse3::expert;
use asrse3::qmodel::{load_checkpoint, save_checkpoint, QModel, Representation};
use asrse3::training::{evaluate, Algorithm, RunLog, TrainConfig, TrainError, Trainer};
use asrse3::verify::{run_suite, Fault, Suite, VerifyOptions};

#[derive(Parser)]
#[command(name = "asrse3", version, about = "Factored-action Q-learning on a block-construction grid world")]
struct Cli {
    /// Cap on worker threads (evaluation).
    #[arg(long, global = true, env = "ASRSE3_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate validated construction demonstrations.
    GenExpert(GenExpertArgs),
    /// Pretrain on demonstrations, then learn from self-play.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Run the oracle property suites.
    Verify(VerifyArgs),
    /// Render a run log as an SVG learning curve.
    Curve(CurveArgs),
    /// List the built-in tasks.
    Tasks,
}

#[derive(Args)]
struct GenExpertArgs {
    /// Built-in task name or path to a task file.
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Step sizes and weights from the original setup.
    Reference,
    /// Larger steps for short runs on small grids.
    Desk,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    task: String,
    #[arg(long, default_value = "sdqfd")]
    algo: Algorithm,
    #[arg(long, default_value = "cascade")]
    repr: Representation,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Self-play episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Output directory for the log, checkpoints and summary.
    #[arg(long)]
    out: PathBuf,
    /// Training overrides, `key = value` per line.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Moving-average window of the run log.
    #[arg(long, default_value_t = 1000)]
    window: usize,
    /// Expert buffer written by `gen-expert`.
    #[arg(long)]
    expert: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Reference)]
    preset: Preset,
    #[arg(long)]
    pretrain_steps: Option<usize>,
    /// Stop once a full window reaches this success rate.
    #[arg(long)]
    early_stop: Option<f64>,
    /// Write a checkpoint every N episodes.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Record elapsed milliseconds in the log (otherwise 0, keeping logs reproducible).
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = "all")]
    suite: Suite,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inject a known bug to confirm the suites catch it.
    #[arg(long)]
    fault: Option<Fault>,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where the first counterexample is dumped on failure.
    #[arg(long, default_value = "counterexample.txt")]
    counterexample: PathBuf,
}

#[derive(Args)]
struct CurveArgs {
    /// Run log CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        std::env::set_var("ASRSE3_THREADS", n.to_string());
    }
    match cli.command {
        Command::GenExpert(a) => gen_expert(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Verify(a) => verify(a),
        Command::Curve(a) => curve(a),
        Command::Tasks => {
            for t in tasks::BUILTIN_TASKS {
                println!("{t}");
            }
            Ok(())
        }
    }
}

fn task(name: &str) -> Result<BlockWorldConfig> {
    tasks::resolve(name).with_context(|| format!("invalid task `{name}`"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot write {}", path.display()))?))
}

fn gen_expert(a: GenExpertArgs) -> Result<()> {
    let cfg = task(&a.task)?;
    let (episodes, report) = expert::generate(&cfg, a.count, a.seed)?;
    let mut out = create(&a.out)?;
    expert::write_buffer(&mut out, &cfg, &episodes, &report, a.seed)?;
    out.flush()?;
    println!("wrote {} episodes ({} transitions) to {}", report.validated, report.transitions, a.out.display());
    println!("rejected {}", report.rejected);
    if report.validated < a.count {
        bail!("only {} of {} episodes validated", report.validated, a.count);
    }
    Ok(())
}

fn write_model(model: &QModel, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    save_checkpoint(model, &mut out)?;
    out.flush()?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let env = task(&a.task)?;
    let mut cfg = match a.preset {
        Preset::Reference => TrainConfig::for_algorithm(a.algo),
        Preset::Desk => TrainConfig::desk(a.algo),
    };
    cfg.seed = a.seed;
    if let Some(path) = &a.config {
        let kv = KvConfig::load(path)?;
        if kv.get("algo").is_some_and(|v| v != a.algo.to_string()) {
            bail!("--algo {} conflicts with `algo` in {}", a.algo, path.display());
        }
        cfg.apply_kv(&kv)?;
    }
    cfg.window = a.window;
    if let Some(n) = a.episodes {
        cfg.self_play_episodes = n;
    }
    if let Some(n) = a.pretrain_steps {
        cfg.pretrain_steps = n;
    }
    if a.early_stop.is_some() {
        cfg.early_stop = a.early_stop;
    }
    if let Some(n) = a.checkpoint_every {
        cfg.checkpoint_every = (n > 0).then_some(n);
    }
    cfg.wall_clock = a.wall_clock;
    cfg.validate()?;

    let records = match &a.expert {
        Some(path) => Some(
            expert::load_buffer_for(path, &env)
                .with_context(|| format!("cannot load expert buffer {}", path.display()))?,
        ),
        None if a.algo.needs_expert() => bail!(
            "{} needs an expert buffer: run `asrse3 gen-expert --task {} --out <file>` and pass it with --expert",
            a.algo,
            a.task
        ),
        None => None,
    };

    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let log = RunLog::new(cfg.window).with_sink(Box::new(create(&a.out.join("log.csv"))?))?;
    let mut trainer = Trainer::new(&env, cfg, a.repr, records)?.with_log(log);
    let dir = a.out.clone();
    let mut hook = |episode: usize, model: &QModel| -> Result<(), TrainError> {
        let path = dir.join(format!("checkpoint-{episode:06}.ckpt"));
        let mut out = BufWriter::new(File::create(&path)?);
        save_checkpoint(model, &mut out)?;
        out.flush()?;
        Ok(())
    };
    let summary = match trainer.run(&mut hook) {
        Ok(s) => s,
        Err(e) => {
            let path = a.out.join("failed.ckpt");
            write_model(trainer.agent.model(), &path)?;
            return Err(anyhow::Error::new(e).context(format!("run state saved to {}", path.display())));
        }
    };
    write_model(trainer.agent.model(), &a.out.join("model.ckpt"))?;
    let json = serde_json::json!({
        "task": env.name,
        "algo": a.algo.to_string(),
        "repr": a.repr.to_string(),
        "seed": a.seed,
        "config": trainer.config(),
        "summary": summary,
    });
    fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    println!(
        "episodes {} pretrain_steps {} updates {} moving_success {:.4}{}",
        summary.episodes,
        summary.pretrain_steps,
        summary.updates,
        summary.final_moving_success,
        if summary.early_stopped { " (early stop)" } else { "" }
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let env = task(&a.task)?;
    let file = File::open(&a.checkpoint).with_context(|| format!("cannot open {}", a.checkpoint.display()))?;
    let model = load_checkpoint(BufReader::new(file))?;
    let report = evaluate(&model, &env, a.episodes, a.seed)?;
    println!("{}", serde_json::to_string(&report)?);
    println!("success rate {:.4}", report.success_rate);
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<()> {
    let mut opts = VerifyOptions::new(a.seed);
    opts.fault = a.fault;
    let report = run_suite(a.suite, &opts);
    for p in &report.properties {
        eprintln!("{p}");
    }
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(path) = &a.out {
        fs::write(path, json + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(c) = report.properties.iter().find_map(|p| p.counterexample.as_ref()) {
        fs::write(&a.counterexample, &c.text)
            .with_context(|| format!("cannot write {}", a.counterexample.display()))?;
        eprintln!("counterexample ({}) written to {}", c.kind, a.counterexample.display());
    }
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}

fn curve(a: CurveArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("cannot read {}", a.input.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty log")?;
    if header != asrse3::training::CSV_HEADER {
        bail!("unexpected header `{header}`");
    }
    let points: Vec<(f64, f64)> = lines
        .enumerate()
        .map(|(i, l)| {
            let cols: Vec<&str> = l.split(',').collect();
            let parse = |j: usize| cols.get(j).and_then(|c| c.parse::<f64>().ok());
            match (parse(0), parse(3)) {
                (Some(x), Some(y)) => Ok((x, y)),
                _ => bail!("line {}: malformed row", i + 2),
            }
        })
        .collect::<Result<_>>()?;
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let max_x = points.iter().map(|p| p.0).fold(1.0, f64::max);
    let path: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{:.1},{:.1}", pad + x / max_x * (w - 2.0 * pad), h - pad - y * (h - 2.0 * pad)))
        .collect();
    let mut out = create(&a.out)?;
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#)?;
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(out, r#"<path d="M{pad},{pad} V{b} H{r}" fill="none" stroke="black"/>"#, b = h - pad, r = w - pad)?;
    writeln!(out, r#"<text x="{pad}" y="{}" font-size="12">1.0</text>"#, pad - 6.0)?;
    writeln!(out, r#"<text x="{}" y="{}" font-size="12">episode {max_x}</text>"#, w - 140.0, h - 12.0)?;
    if !path.is_empty() {
        writeln!(out, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#, path.join(" "))?;
    }
    writeln!(out, "</svg>")?;
    out.flush()?;
    println!("wrote {} points to {}", points.len(), a.out.display());
    Ok(())
}
