//! `dts`: data generation, training, evaluation and reporting for dual
//! teacher-student domain adaptation on the ShapesWorld benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dts_core::eval::{class_table, evaluate, metrics_svg, read_metrics, MetricsRow};
use dts_core::kv::KvDoc;
use dts_core::segmodel::load_checkpoint;
use dts_core::synth::{load_benchmark, worker_threads, write_benchmark, BenchmarkSpec};
use dts_core::trainer::{
    read_prob_log, run_with, select_setting, DataCombination, ProbEstimator, RoutingPreset,
    RunWriter, Trainer, TrainerConfig, CONFIG_FILE, METRICS_FILE, PROB_FILE,
};

#[derive(Parser, Debug)]
#[command(
    name = "dts",
    version,
    about = "Dual teacher-student self-training on synthetic two-domain data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Setting {
    #[value(name = "group1-only")]
    Group1Only,
    #[value(name = "A")]
    A,
    #[value(name = "B")]
    B,
    #[value(name = "tt-only")]
    TtOnly,
    #[value(name = "st-only")]
    StOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    TargetEval,
    Source,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Trainer config file (`key = value` with `[section]` headers).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured number of iterations.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a ShapesWorld dataset.
    GenData {
        /// Benchmark spec file; defaults are used for missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Data combination of the second group; `group1-only` trains a
        /// single teacher-student pair.
        #[arg(long, value_enum)]
        setting: Option<Setting>,
        #[arg(long, action = clap::ArgAction::Set)]
        bidirectional: Option<bool>,
        /// `default` or `table5-row1` ... `table5-row5`.
        #[arg(long)]
        routing: Option<RoutingPreset>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "target-eval")]
        split: Split,
    },
    /// Run the five-column ablation grid into `out/`.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick Setting A or B from the Prob logs of two runs, or (with
    /// `--online`) by training both at half budget.
    SelectSetting {
        #[arg(long, required_unless_present = "online")]
        run_a: Option<PathBuf>,
        #[arg(long, required_unless_present = "online")]
        run_b: Option<PathBuf>,
        /// Train both settings interleaved at half the configured budget.
        #[arg(long, requires = "data")]
        online: bool,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Per-class table and mIoU/Prob chart from run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Where to write the SVG chart.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

fn load_config(args: &RunArgs) -> Result<TrainerConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainerConfig::load(p)?,
        None => TrainerConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
        cfg.warmup_iters = cfg.warmup_iters.min(n);
    }
    Ok(cfg)
}

fn train_into(
    cfg: TrainerConfig,
    data: &dts_core::synth::Benchmark,
    out: &Path,
) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let run_id = out
        .file_name()
        .map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned());
    let mut writer = RunWriter::create(out, &cfg)?;
    let outcome = run_with(cfg, data, &run_id, &mut |row| {
        eprintln!("{run_id}: iter {} mIoU {:.4}", row.iter, row.miou);
        writer.row(row)
    })?;
    writer.finish(&outcome)?;
    Ok(outcome.metrics)
}

fn cmd_train(
    run: RunArgs,
    setting: Option<Setting>,
    bidirectional: Option<bool>,
    routing: Option<RoutingPreset>,
    out: PathBuf,
) -> Result<()> {
    let mut cfg = load_config(&run)?;
    if let Some(s) = setting {
        cfg.group2 = match s {
            Setting::Group1Only => None,
            Setting::A => Some(DataCombination::setting_a()),
            Setting::B => Some(DataCombination::setting_b()),
            Setting::TtOnly => Some(DataCombination::tt_only()),
            Setting::StOnly => Some(DataCombination::st_only()),
        };
        if cfg.group2.is_none() && bidirectional.is_none() {
            cfg.bidirectional = false;
        }
    }
    if let Some(b) = bidirectional {
        cfg.bidirectional = b;
    }
    if let Some(r) = routing {
        cfg.routing = r;
    }
    let data = load_benchmark(&run.data)?;
    let rows = train_into(cfg, &data, &out)?;
    if let Some(last) = rows.last() {
        println!("{}", last.to_csv());
    }
    Ok(())
}

/// The five ablation columns: (directory, group 2, bidirectional, group 1).
fn ablation_grid(base: &TrainerConfig) -> Vec<(&'static str, TrainerConfig)> {
    let focus = base
        .group2
        .clone()
        .unwrap_or_else(DataCombination::setting_b);
    let single = |group1: DataCombination| TrainerConfig {
        group1,
        group2: None,
        bidirectional: false,
        ..base.clone()
    };
    let dual = |group2: DataCombination, bidirectional: bool| TrainerConfig {
        group1: DataCombination::group1(),
        group2: Some(group2),
        bidirectional,
        ..base.clone()
    };
    vec![
        ("col1_baseline", single(DataCombination::group1())),
        ("col2_focus", single(DataCombination::setting_a())),
        ("col3_dts_focus", dual(focus.clone(), false)),
        ("col4_dts_bidir", dual(DataCombination::group1(), true)),
        ("col5_full", dual(focus, true)),
    ]
}

fn cmd_ablate(run: RunArgs, out: PathBuf) -> Result<()> {
    let base = load_config(&run)?;
    let data = load_benchmark(&run.data)?;
    let mut summary = Vec::new();
    for (name, cfg) in ablation_grid(&base) {
        let rows = train_into(cfg, &data, &out.join(name))?;
        summary.push((name.to_string(), rows));
    }
    print!("{}", class_table(&summary));
    Ok(())
}

fn prob_of_run(dir: &Path) -> Result<Option<f64>> {
    let window = match TrainerConfig::load(&dir.join(CONFIG_FILE)) {
        Ok(c) => c.prob_window,
        Err(_) => ProbEstimator::DEFAULT_WINDOW,
    };
    let mut est = ProbEstimator::windowed(window);
    for r in read_prob_log(&dir.join(PROB_FILE))? {
        est.record(r.iter, r.gamma_teacher2, r.gamma_student1);
    }
    Ok(est.value())
}

fn cmd_select(
    run_a: Option<PathBuf>,
    run_b: Option<PathBuf>,
    online: bool,
    data: Option<PathBuf>,
    config: Option<PathBuf>,
) -> Result<()> {
    let (pa, pb) = if online {
        let data = load_benchmark(data.as_deref().context("--online needs --data")?)?;
        let mut cfg = match &config {
            Some(p) => TrainerConfig::load(p)?,
            None => TrainerConfig::default(),
        };
        cfg.iterations /= 2;
        cfg.warmup_iters = cfg.warmup_iters.min(cfg.iterations);
        cfg.bidirectional = true;
        let mk = |c: DataCombination| TrainerConfig {
            group2: Some(c),
            ..cfg.clone()
        };
        let mut a = Trainer::new(mk(DataCombination::setting_a()), &data)?;
        let mut b = Trainer::new(mk(DataCombination::setting_b()), &data)?;
        for _ in 0..cfg.iterations {
            a.step()?;
            b.step()?;
        }
        (a.prob().value(), b.prob().value())
    } else {
        let (a, b) = (
            run_a.context("--run-a is required")?,
            run_b.context("--run-b is required")?,
        );
        (prob_of_run(&a)?, prob_of_run(&b)?)
    };
    let (Some(pa), Some(pb)) = (pa, pb) else {
        bail!("a run recorded no Prob comparisons (was group 2 enabled?)");
    };
    let choice = select_setting(pa, pb);
    let name = if choice == DataCombination::setting_b() {
        "B"
    } else {
        "A"
    };
    println!("prob_a={pa:.6} prob_b={pb:.6} setting={name}");
    Ok(())
}

fn cmd_eval(checkpoint: PathBuf, data: PathBuf, split: Split) -> Result<()> {
    let net = load_checkpoint(&checkpoint)?;
    let bench = load_benchmark(&data)?;
    let samples = match split {
        Split::TargetEval => &bench.target_eval,
        Split::Source => &bench.source_train,
    };
    let (ious, miou) = evaluate(&net, samples)?.miou()?;
    let row = MetricsRow {
        run_id: checkpoint.display().to_string(),
        iter: 0,
        ious,
        miou,
        loss_g1: None,
        loss_g2: None,
        gamma_g1: None,
        gamma_g2: None,
        prob: None,
    };
    println!("{}", dts_core::eval::csv_header(row.ious.len()));
    println!("{}", row.to_csv());
    Ok(())
}

fn cmd_report(runs: Vec<PathBuf>, svg: Option<PathBuf>) -> Result<()> {
    let mut all = Vec::new();
    for dir in &runs {
        let rows = read_metrics(&dir.join(METRICS_FILE))?;
        let name = dir.file_name().map_or_else(
            || dir.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        all.push((name, rows));
    }
    print!("{}", class_table(&all));
    if let Some(path) = svg {
        std::fs::write(&path, metrics_svg(&all))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_gen(spec: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let spec = match spec {
        Some(p) => {
            let text =
                std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            BenchmarkSpec::from_kv(&KvDoc::parse(&text).with_context(|| p.display().to_string())?)?
        }
        None => BenchmarkSpec::default(),
    };
    write_benchmark(&spec, &out, worker_threads())?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => cmd_gen(spec, out),
        Command::Train {
            run,
            setting,
            bidirectional,
            routing,
            out,
        } => cmd_train(run, setting, bidirectional, routing, out),
        Command::Eval {
            checkpoint,
            data,
            split,
        } => cmd_eval(checkpoint, data, split),
        Command::Ablate { run, out } => cmd_ablate(run, out),
        Command::SelectSetting {
            run_a,
            run_b,
            online,
            data,
            config,
        } => cmd_select(run_a, run_b, online, data, config),
        Command::Report { runs, svg } => cmd_report(runs, svg),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error");
            eprintln!("error: {}", one_line(first.trim_start_matches("error:")));
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::from(2)
        }
    }
}
