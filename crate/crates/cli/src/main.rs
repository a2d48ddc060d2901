//! `lossscope`: generate data, train, probe loss landscapes and render them.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when reading data or
//! computing fails. Every message goes to standard error; results go to files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lossscope::data::{gen_corpus, gen_task, ClassificationTask, SyntheticCorpus};
use lossscope::experiment::{ExperimentConfig, Figure, Lab};
use lossscope::landscape::{
    curve_1d, error_surface, layer_surface, project_trajectory, read_curve_csv, read_surface,
    read_trajectory_csv, rollback_table, surface_2d, write_curve_csv, write_surface,
    write_trajectory_csv, DatasetLoss, GridSpec, SurfaceGrid,
};
use lossscope::model::{Example, Model};
use lossscope::param::{LayerGroup, ParamVector};
use lossscope::render::{render_curves, render_surface, RenderKind, RenderSpec, Series};
use lossscope::train::{
    finetune, pretrain, read_checkpoint, train_from_scratch, TrainConfig, TrainRun,
};

#[derive(Parser)]
#[command(
    name = "lossscope",
    version,
    about = "Loss-landscape probes for a small transformer encoder"
)]
struct Cli {
    /// Experiment config (TOML); every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Grid worker threads; overrides LOSSSCOPE_WORKERS and the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the pretraining corpus and both task datasets as JSONL.
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Pretrain on a corpus with the masked-token objective.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier from scratch or fine-tune a pretrained checkpoint.
    Train {
        #[arg(long, value_enum)]
        mode: TrainMode,
        #[arg(long)]
        task: PathBuf,
        /// Pretrained checkpoint to start from (finetune mode).
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Training loss along the line through two checkpoints.
    Curve {
        #[command(flatten)]
        pair: Pair,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Training loss over the plane of two fine-tuning directions.
    Surface {
        #[command(flatten)]
        pair: Pair,
        /// End checkpoint of the run spanning the second axis.
        #[arg(long)]
        other: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dev error over the plane of two fine-tuning directions.
    ErrorSurface {
        #[command(flatten)]
        pair: Pair,
        #[arg(long)]
        other: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project a run's checkpoints onto the plane of its own fine-tuning direction.
    Trajectory {
        #[arg(long)]
        run: PathBuf,
        /// Run whose start and end define the plane; defaults to `--run`.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Training loss around the end checkpoint when one layer group is rolled back.
    LayerSurface {
        #[command(flatten)]
        pair: Pair,
        #[arg(long)]
        other: PathBuf,
        /// low, middle, high, all, a range `a-b` or a list `a,b`.
        #[arg(long)]
        group: String,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dev accuracy after restoring each layer group to its start value.
    Rollback {
        #[arg(long)]
        start: PathBuf,
        #[arg(long)]
        end: PathBuf,
        #[arg(long)]
        task: PathBuf,
        /// Groups separated by `;`.
        #[arg(long, value_delimiter = ';', default_value = "none;low;middle;high")]
        groups: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a surface or curve file as SVG.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: RenderKind,
        /// Trajectory CSV drawn over the surface.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        color_cap: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        levels: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate one figure or table, building any missing runs.
    Repro {
        /// fig1 .. fig7 or table1.
        figure: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainMode {
    Scratch,
    Finetune,
}

#[derive(Args)]
struct Pair {
    /// Start checkpoint (pretrained or initial).
    #[arg(long)]
    start: PathBuf,
    /// End checkpoint (fine-tuned or trained).
    #[arg(long)]
    end: PathBuf,
    /// Task file whose training split (or dev split for error surfaces) is scored.
    #[arg(long)]
    task: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    /// Samples per axis; defaults to the config.
    #[arg(long)]
    samples: Option<usize>,
    /// Score only the first N examples.
    #[arg(long)]
    subsample: Option<usize>,
}

fn parse_kind(s: &str) -> Result<RenderKind, String> {
    s.parse().map_err(|e: lossscope::Error| e.to_string())
}

/// Why a command stopped.
enum Failure {
    Usage(String),
    Data(lossscope::Error),
}

impl From<lossscope::Error> for Failure {
    fn from(e: lossscope::Error) -> Self {
        match e {
            lossscope::Error::UnknownFigure(_) => Failure::Usage(e.to_string()),
            e => Failure::Data(e),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require(path: &Path) -> Outcome<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(usage(format!("{} does not exist", path.display())))
    }
}

fn required<'a>(flag: &str, path: &'a Option<PathBuf>) -> Outcome<&'a Path> {
    match path {
        Some(p) => require(p),
        None => Err(usage(format!("--{flag} is required"))),
    }
}

fn workers(flag: Option<usize>, cfg: &ExperimentConfig) -> Outcome<usize> {
    if let Some(n) = flag {
        return if n > 0 {
            Ok(n)
        } else {
            Err(usage("--workers must be positive"))
        };
    }
    if let Ok(v) = std::env::var("LOSSSCOPE_WORKERS") {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(usage(format!(
                "LOSSSCOPE_WORKERS must be a positive integer, got `{v}`"
            ))),
        };
    }
    Ok(cfg
        .run
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| lossscope::Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| lossscope::Error::io(path, e).into())
}

fn open(path: &Path) -> Outcome<std::fs::File> {
    std::fs::File::open(path).map_err(|e| lossscope::Error::io(path, e).into())
}

struct Loaded {
    model: Model,
    start: ParamVector,
    end: ParamVector,
    task: ClassificationTask,
}

fn load_pair(pair: &Pair) -> Outcome<Loaded> {
    let (start, end, task) = (
        require(&pair.start)?,
        require(&pair.end)?,
        require(&pair.task)?,
    );
    let end = read_checkpoint(end)?;
    let start = read_checkpoint(start)?;
    let model = Model::new(end.model)?;
    Ok(Loaded {
        model,
        start: start.checkpoint.params,
        end: end.checkpoint.params,
        task: ClassificationTask::load_jsonl(task)?,
    })
}

fn grid_spec(args: &GridArgs, cfg: &ExperimentConfig) -> Outcome<GridSpec> {
    let g = &cfg.grid;
    GridSpec::new(
        g.alpha_range,
        g.beta_range,
        args.samples.unwrap_or(g.samples_per_axis),
    )
    .map_err(|e| usage(e.to_string()))
}

fn subsample(data: &[Example], n: Option<usize>) -> Outcome<(&[Example], Option<usize>)> {
    match n {
        Some(0) => Err(usage("--subsample must be positive")),
        Some(n) if n < data.len() => Ok((&data[..n], Some(n))),
        _ => Ok((data, None)),
    }
}

fn save_grid(mut grid: SurfaceGrid, sub: Option<usize>, out: &Path) -> Outcome {
    grid.axes.subsample = sub;
    let mut bytes = Vec::new();
    write_surface(&grid, &mut bytes)?;
    write_file(out, &bytes)
}

fn run(cli: Cli) -> Outcome {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(require(path)?).map_err(|e| usage(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    let workers = workers(cli.workers, &cfg)?;
    match cli.command {
        Command::GenData { out_dir } => {
            let corpus = gen_corpus(&cfg.synth, cfg.corpus.seed, cfg.corpus.size)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| lossscope::Error::io(&out_dir, e))?;
            corpus.save_jsonl(&out_dir.join("corpus.jsonl"))?;
            for t in [&cfg.tasks.main, &cfg.tasks.other] {
                let task = gen_task(&cfg.synth, t.kind, t.seed, (t.train, t.dev))?;
                task.save_jsonl(&out_dir.join(format!("{}.jsonl", task.name)))?;
            }
        }
        Command::Pretrain { corpus, out } => {
            let corpus = SyntheticCorpus::load_jsonl(require(&corpus)?)?;
            let model = Model::new(cfg.model.clone())?;
            pretrain(&model, &corpus, &cfg.pretrain)?.save(&out)?;
        }
        Command::Train {
            mode,
            task,
            from,
            epochs,
            seed,
            out,
        } => {
            let task = ClassificationTask::load_jsonl(require(&task)?)?;
            let base = match mode {
                TrainMode::Scratch => &cfg.scratch,
                TrainMode::Finetune => &cfg.finetune,
            };
            let config = TrainConfig {
                epochs: epochs.unwrap_or(base.epochs),
                seed: seed.unwrap_or(cfg.run.seed),
                ..base.clone()
            };
            config.validate().map_err(|e| usage(e.to_string()))?;
            let run = match mode {
                TrainMode::Scratch => {
                    if from.is_some() {
                        return Err(usage("--from applies to finetune mode only"));
                    }
                    train_from_scratch(&Model::new(cfg.model.clone())?, &task, &config)?
                }
                TrainMode::Finetune => {
                    let stored = read_checkpoint(required("from", &from)?)?;
                    let model = Model::new(stored.model)?;
                    let params = &stored.checkpoint.params;
                    finetune(&model, params, params.id(), &task, &config)?
                }
            };
            run.save(&out)?;
        }
        Command::Curve { pair, grid, out } => {
            let spec = grid_spec(&grid, &cfg)?;
            let l = load_pair(&pair)?;
            let (data, _) = subsample(&l.task.train, grid.subsample)?;
            let loss = DatasetLoss {
                model: &l.model,
                data,
            };
            let curve = curve_1d(&l.start, &l.end, &loss, &spec, workers)?;
            let mut bytes = Vec::new();
            write_curve_csv(&curve, &mut bytes)?;
            write_file(&out, &bytes)?;
        }
        Command::Surface {
            pair,
            other,
            grid,
            out,
        } => {
            let spec = grid_spec(&grid, &cfg)?;
            let other = read_checkpoint(require(&other)?)?.checkpoint.params;
            let l = load_pair(&pair)?;
            let (data, sub) = subsample(&l.task.train, grid.subsample)?;
            let loss = DatasetLoss {
                model: &l.model,
                data,
            };
            let g = surface_2d(&l.start, &l.end, &other, &loss, &spec, workers)?;
            save_grid(g, sub, &out)?;
        }
        Command::ErrorSurface {
            pair,
            other,
            grid,
            out,
        } => {
            let spec = grid_spec(&grid, &cfg)?;
            let other = read_checkpoint(require(&other)?)?.checkpoint.params;
            let l = load_pair(&pair)?;
            let (dev, sub) = subsample(&l.task.dev, grid.subsample)?;
            let g = error_surface(&l.model, &l.start, &l.end, &other, dev, &spec, workers)?;
            save_grid(g, sub, &out)?;
        }
        Command::Trajectory {
            run,
            reference,
            out,
        } => {
            let run = TrainRun::load(require(&run)?)?;
            let reference = match &reference {
                Some(dir) => TrainRun::load(require(dir)?)?,
                None => run.clone(),
            };
            let traj =
                project_trajectory(&run, &reference.initial().params, &reference.last().params)?;
            let mut bytes = Vec::new();
            write_trajectory_csv(&traj, &mut bytes)?;
            write_file(&out, &bytes)?;
        }
        Command::LayerSurface {
            pair,
            other,
            group,
            grid,
            out,
        } => {
            let spec = grid_spec(&grid, &cfg)?;
            let other = read_checkpoint(require(&other)?)?.checkpoint.params;
            let l = load_pair(&pair)?;
            let group = LayerGroup::parse(&group, l.model.config().num_layers)
                .map_err(|e| usage(e.to_string()))?;
            let second = other.diff(&l.start)?;
            let (data, sub) = subsample(&l.task.train, grid.subsample)?;
            let loss = DatasetLoss {
                model: &l.model,
                data,
            };
            let g = layer_surface(&l.end, &l.start, &second, &group, &loss, &spec, workers)?;
            save_grid(g, sub, &out)?;
        }
        Command::Rollback {
            start,
            end,
            task,
            groups,
            out,
        } => {
            let (start, end, task) = (require(&start)?, require(&end)?, require(&task)?);
            let end = read_checkpoint(end)?;
            let start = read_checkpoint(start)?.checkpoint.params;
            let model = Model::new(end.model)?;
            let groups = groups
                .iter()
                .map(|g| LayerGroup::parse(g, model.config().num_layers))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| usage(e.to_string()))?;
            let task = ClassificationTask::load_jsonl(task)?;
            let rows = rollback_table(&model, &end.checkpoint.params, &start, &groups, &task.dev)?;
            let mut text = String::from("group,dev_accuracy,delta_vs_full\n");
            for r in rows {
                text.push_str(&format!(
                    "{},{:?},{:?}\n",
                    r.group, r.dev_accuracy, r.delta_vs_full
                ));
            }
            write_file(&out, text.as_bytes())?;
        }
        Command::Render {
            input,
            kind,
            trajectory,
            color_cap,
            levels,
            out,
        } => {
            let input = require(&input)?;
            let trajectory = match &trajectory {
                Some(p) => Some(read_trajectory_csv(open(require(p)?)?)?),
                None => None,
            };
            let svg = if kind == RenderKind::Curve {
                let curve = read_curve_csv(open(input)?)?;
                let spec = render_spec(kind, None, color_cap, levels)?;
                let series = Series {
                    label: input
                        .file_stem()
                        .map_or("curve".into(), |s| s.to_string_lossy().into_owned()),
                    points: curve
                        .alphas
                        .iter()
                        .zip(&curve.losses)
                        .map(|(a, l)| (a * curve.axis_scale, *l))
                        .collect(),
                };
                render_curves(&[series], &spec, "distance from start", "training loss")?
            } else {
                let grid = read_surface(open(input)?)?;
                if kind == RenderKind::TrajectoryOverlay && trajectory.is_none() {
                    return Err(usage("trajectory_overlay needs --trajectory"));
                }
                let spec = render_spec(kind, Some(grid.kind), color_cap, levels)?;
                render_surface(&grid, &spec, trajectory.as_ref())?
            };
            write_file(&out, svg.as_bytes())?;
        }
        Command::Repro { figure } => {
            let figure: Figure = figure.parse()?;
            let mut lab = Lab::new(cfg, workers)?;
            lab.verbose = true;
            let manifest = lab.repro(figure)?;
            eprintln!(
                "{}: wrote {} files under {}",
                manifest.figure,
                manifest.files.len(),
                lab.cfg.run.output_dir.join(figure.id()).display()
            );
        }
    }
    Ok(())
}

fn render_spec(
    kind: RenderKind,
    surface: Option<lossscope::landscape::SurfaceKind>,
    color_cap: Option<f64>,
    levels: Vec<f64>,
) -> Outcome<RenderSpec> {
    let mut spec = RenderSpec::new(kind, surface);
    if let Some(cap) = color_cap {
        spec.color_cap = cap;
    }
    spec.levels = levels;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
