//! Experiment configuration and the recipes that regenerate each figure.
//!
//! Runs are built on demand and cached under `<output_dir>/runs`. A cache
//! directory's name carries a hash of every input that shaped the run, so a
//! changed config never picks up a stale run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{gen_corpus, gen_task, ClassificationTask, SynthConfig, TaskKind};
use crate::error::{Error, Result};
use crate::landscape::{
    curve_1d, error_surface, flatness_width, layer_surface, project_trajectory, rollback_table,
    surface_2d, write_curve_csv, write_surface, write_trajectory_csv, CurveSamples, DatasetLoss,
    Flatness, GridSpec, SurfaceGrid, TrajectoryPoint, TrajectoryProjection,
};
use crate::model::{Head, Model, ModelConfig};
use crate::param::LayerGroup;
use crate::render::{render_curves, render_surface, RenderKind, RenderSpec, Series};
use crate::train::{
    export_learning_curves, finetune, pretrain, train_from_scratch,
    write_curve_csv as write_learning_csv, TrainConfig, TrainRun,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub size: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            size: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub train: usize,
    pub dev: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpecs {
    /// The task every figure is drawn for.
    pub main: TaskSpec,
    /// The second task; its fine-tuning direction spans the second axis.
    pub other: TaskSpec,
}

impl Default for TaskSpecs {
    fn default() -> Self {
        Self {
            main: TaskSpec {
                kind: TaskKind::Regime,
                train: 2000,
                dev: 256,
                seed: 0,
            },
            other: TaskSpec {
                kind: TaskKind::Motif,
                train: 500,
                dev: 256,
                seed: 0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSettings {
    pub alpha_range: [f64; 2],
    pub beta_range: [f64; 2],
    pub samples_per_axis: usize,
    /// Score each cell on the first `subsample` examples instead of the whole split.
    pub subsample: Option<usize>,
}

impl Default for GridSettings {
    fn default() -> Self {
        let spec = GridSpec::default();
        Self {
            alpha_range: spec.alpha_range,
            beta_range: spec.beta_range,
            samples_per_axis: spec.samples_per_axis,
            subsample: None,
        }
    }
}

impl GridSettings {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.alpha_range, self.beta_range, self.samples_per_axis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    /// Seed of the fine-tuning and scratch runs.
    pub seed: u64,
    /// Grid worker count; the `LOSSSCOPE_WORKERS` variable and `--workers` override it.
    pub workers: Option<usize>,
    pub output_dir: PathBuf,
    /// The extended fine-tuning run lasts this many times the fine-tuning epochs.
    pub extend_factor: usize,
    pub flatness_ratio: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: None,
            output_dir: PathBuf::from("lossscope-out"),
            extend_factor: 5,
            flatness_ratio: 2.0,
        }
    }
}

/// Everything a recipe needs, read from a sectioned TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub corpus: CorpusSpec,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub scratch: TrainConfig,
    pub tasks: TaskSpecs,
    pub grid: GridSettings,
    pub run: RunSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            synth: SynthConfig::default(),
            corpus: CorpusSpec::default(),
            pretrain: TrainConfig {
                epochs: 16,
                learning_rate: 3e-3,
                objective: Head::MaskedLm,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                learning_rate: 3e-3,
                ..TrainConfig::default()
            },
            scratch: TrainConfig {
                epochs: 6,
                learning_rate: 3e-3,
                ..TrainConfig::default()
            },
            tasks: TaskSpecs::default(),
            grid: GridSettings::default(),
            run: RunSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.synth.validate()?;
        if self.synth.vocab_size != self.model.vocab_size
            || self.synth.seq_len > self.model.max_seq_len
        {
            return Err(Error::InvalidConfig(
                "synth vocab_size must equal the model's and seq_len must fit max_seq_len".into(),
            ));
        }
        if self.corpus.size == 0 {
            return Err(Error::InvalidConfig("corpus size must be positive".into()));
        }
        self.pretrain.validate()?;
        self.pretrain.expect_objective(Head::MaskedLm)?;
        for (name, c) in [("finetune", &self.finetune), ("scratch", &self.scratch)] {
            c.validate()?;
            c.expect_objective(Head::Classification)?;
            if c.seed != 0 {
                return Err(Error::InvalidConfig(format!(
                    "set the {name} seed through [run] seed"
                )));
            }
        }
        for t in [&self.tasks.main, &self.tasks.other] {
            if t.train == 0 || t.dev == 0 {
                return Err(Error::InvalidConfig("task splits must be nonempty".into()));
            }
        }
        if self.tasks.main.kind == self.tasks.other.kind {
            return Err(Error::InvalidConfig(
                "main and other task must differ in kind".into(),
            ));
        }
        self.grid.spec()?;
        if self.grid.subsample == Some(0) || self.run.workers == Some(0) {
            return Err(Error::InvalidConfig(
                "subsample and workers must be positive".into(),
            ));
        }
        if self.run.extend_factor < 1 || !(self.run.flatness_ratio > 1.0) {
            return Err(Error::InvalidConfig(
                "extend_factor must be ≥ 1 and flatness_ratio > 1".into(),
            ));
        }
        Ok(())
    }

    pub fn finetune_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.finetune.clone()
        }
    }

    pub fn scratch_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.scratch.clone()
        }
    }
}

/// The recipes `repro` knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Figure {
    /// Training loss surfaces with start and end marked.
    Fig1,
    /// Learning curves of fine-tuning and training from scratch.
    Fig2,
    /// Short then extended fine-tuning over the dev-error surface.
    Fig3,
    /// Optimization trajectories over the training loss surfaces.
    Fig4,
    /// Dev-error surfaces.
    Fig5,
    /// 1D loss curves on a distance axis, with flatness widths.
    Fig6,
    /// Layer-group surfaces around the fine-tuned point.
    Fig7,
    /// Rollback accuracy per layer group on both tasks.
    Table1,
}

impl Figure {
    pub const ALL: [Figure; 8] = [
        Figure::Fig1,
        Figure::Fig2,
        Figure::Fig3,
        Figure::Fig4,
        Figure::Fig5,
        Figure::Fig6,
        Figure::Fig7,
        Figure::Table1,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Figure::Fig1 => "fig1",
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
            Figure::Table1 => "table1",
        }
    }
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.id() == s)
            .ok_or_else(|| Error::UnknownFigure(s.to_string()))
    }
}

/// One produced file and the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub figure: String,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("manifest", e.to_string()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects a recipe's output files.
struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            files: BTreeMap::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn surface(
        &mut self,
        name: &str,
        grid: &SurfaceGrid,
        traj: Option<&TrajectoryProjection>,
    ) -> Result<()> {
        let mut bytes = Vec::new();
        write_surface(grid, &mut bytes)?;
        self.put(&format!("{name}.grid"), &bytes)?;
        let kind = if traj.is_some() {
            RenderKind::TrajectoryOverlay
        } else {
            RenderKind::Contour
        };
        let svg = render_surface(grid, &RenderSpec::new(kind, Some(grid.kind)), traj)?;
        self.put(&format!("{name}.svg"), svg.as_bytes())
    }

    fn finish(self, figure: Figure) -> Result<Manifest> {
        let manifest = Manifest {
            figure: figure.id().to_string(),
            files: self
                .files
                .into_iter()
                .map(|(path, sha256)| ManifestEntry { path, sha256 })
                .collect(),
        };
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, manifest.to_json()?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

/// Which of the two configured tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskRole {
    Main,
    Other,
}

/// Builds, caches, and analyses the runs of one experiment config.
pub struct Lab {
    pub cfg: ExperimentConfig,
    pub model: Model,
    pub workers: usize,
    pub verbose: bool,
}

impl Lab {
    pub fn new(cfg: ExperimentConfig, workers: usize) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model.clone())?;
        Ok(Self {
            cfg,
            model,
            workers: workers.max(1),
            verbose: false,
        })
    }

    fn note(&self, msg: &str) {
        if self.verbose {
            eprintln!("{msg}");
        }
    }

    fn runs_dir(&self) -> PathBuf {
        self.cfg.run.output_dir.join("runs")
    }

    pub fn task(&self, role: TaskRole) -> Result<ClassificationTask> {
        let t = match role {
            TaskRole::Main => &self.cfg.tasks.main,
            TaskRole::Other => &self.cfg.tasks.other,
        };
        gen_task(&self.cfg.synth, t.kind, t.seed, (t.train, t.dev))
    }

    /// Loads the cached run keyed by `key` or builds and stores it.
    fn cached(
        &self,
        label: &str,
        key: &impl Serialize,
        build: impl FnOnce() -> Result<TrainRun>,
    ) -> Result<TrainRun> {
        let digest = sha256_hex(serde_json::to_string(key)?.as_bytes());
        let dir = self.runs_dir().join(format!("{label}-{}", &digest[..12]));
        if dir.join("run.json").exists() {
            self.note(&format!("using cached run {}", dir.display()));
            return TrainRun::load(&dir);
        }
        self.note(&format!("training {label}"));
        let run = build()?;
        run.save(&dir)?;
        Ok(run)
    }

    pub fn pretrained(&self) -> Result<TrainRun> {
        let c = &self.cfg;
        let key = ("pretrain", &c.model, &c.synth, &c.corpus, &c.pretrain);
        self.cached(&format!("pretrain-s{}", c.pretrain.seed), &key, || {
            let corpus = gen_corpus(&c.synth, c.corpus.seed, c.corpus.size)?;
            pretrain(&self.model, &corpus, &c.pretrain)
        })
    }

    /// Fine-tunes from the pretrained endpoint for `epochs` epochs.
    pub fn finetuned(&self, role: TaskRole, seed: u64, epochs: usize) -> Result<TrainRun> {
        let pre = self.pretrained()?;
        let task = self.task(role)?;
        let cfg = TrainConfig {
            epochs,
            ..self.cfg.finetune_config(seed)
        };
        let c = &self.cfg;
        let key = (
            "finetune",
            &c.model,
            &c.synth,
            &c.corpus,
            &c.pretrain,
            &task.generator,
            &task.train.len(),
            &task.dev.len(),
            &cfg,
        );
        self.cached(
            &format!("finetune-{}-s{seed}-e{epochs}", task.name),
            &key,
            || finetune(&self.model, &pre.last().params, &pre.label, &task, &cfg),
        )
    }

    pub fn scratch(&self, role: TaskRole, seed: u64) -> Result<TrainRun> {
        let task = self.task(role)?;
        let cfg = self.cfg.scratch_config(seed);
        let c = &self.cfg;
        let key = (
            "scratch",
            &c.model,
            &c.synth,
            &task.generator,
            &task.train.len(),
            &task.dev.len(),
            &cfg,
        );
        self.cached(&format!("scratch-{}-s{seed}", task.name), &key, || {
            train_from_scratch(&self.model, &task, &cfg)
        })
    }

    fn subsample<'t>(&self, data: &'t [crate::model::Example]) -> &'t [crate::model::Example] {
        match self.cfg.grid.subsample {
            Some(n) if n < data.len() => &data[..n],
            _ => data,
        }
    }

    /// Training-loss surface of a run pair (main task run, other task run).
    fn loss_surface(&self, main: &TrainRun, other: &TrainRun) -> Result<SurfaceGrid> {
        let task = self.task(TaskRole::Main)?;
        let data = self.subsample(&task.train);
        let loss = DatasetLoss {
            model: &self.model,
            data,
        };
        let mut grid = surface_2d(
            &main.initial().params,
            &main.last().params,
            &other.last().params,
            &loss,
            &self.cfg.grid.spec()?,
            self.workers,
        )?;
        grid.axes.subsample = self.cfg.grid.subsample.filter(|&n| n < task.train.len());
        Ok(grid)
    }

    fn dev_error_surface(&self, main: &TrainRun, other: &TrainRun) -> Result<SurfaceGrid> {
        let task = self.task(TaskRole::Main)?;
        let dev = self.subsample(&task.dev);
        let mut grid = error_surface(
            &self.model,
            &main.initial().params,
            &main.last().params,
            &other.last().params,
            dev,
            &self.cfg.grid.spec()?,
            self.workers,
        )?;
        grid.axes.subsample = self.cfg.grid.subsample.filter(|&n| n < task.dev.len());
        Ok(grid)
    }

    pub fn curve(&self, run: &TrainRun) -> Result<CurveSamples> {
        let task = self.task(TaskRole::Main)?;
        let loss = DatasetLoss {
            model: &self.model,
            data: self.subsample(&task.train),
        };
        curve_1d(
            &run.initial().params,
            &run.last().params,
            &loss,
            &self.cfg.grid.spec()?,
            self.workers,
        )
    }

    pub fn flatness(&self, run: &TrainRun) -> Result<Flatness> {
        flatness_width(&self.curve(run)?, self.cfg.run.flatness_ratio)
    }

    /// Regenerates one figure under `<output_dir>/<figure id>` and writes its manifest.
    pub fn repro(&self, figure: Figure) -> Result<Manifest> {
        let seed = self.cfg.run.seed;
        let t = self.cfg.finetune.epochs;
        let mut out = Outputs::new(self.cfg.run.output_dir.join(figure.id()))?;
        let ft = || self.finetuned(TaskRole::Main, seed, t);
        let ft_other = || self.finetuned(TaskRole::Other, seed, t);
        let sc = || self.scratch(TaskRole::Main, seed);
        let sc_other = || self.scratch(TaskRole::Other, seed);
        let endpoints = TrajectoryProjection {
            points: vec![TrajectoryPoint {
                epoch: 1,
                d_alpha: 1.0,
                d_beta: 0.0,
                v_cos: Some(1.0),
            }],
        };
        match figure {
            Figure::Fig1 | Figure::Fig4 => {
                for (name, main, other) in [
                    ("finetune", ft()?, ft_other()?),
                    ("scratch", sc()?, sc_other()?),
                ] {
                    self.note(&format!("{}: {name} loss surface", figure.id()));
                    let grid = self.loss_surface(&main, &other)?;
                    let traj = if figure == Figure::Fig4 {
                        let traj =
                            project_trajectory(&main, &main.initial().params, &main.last().params)?;
                        let mut bytes = Vec::new();
                        write_trajectory_csv(&traj, &mut bytes)?;
                        out.put(&format!("{name}_trajectory.csv"), &bytes)?;
                        traj
                    } else {
                        endpoints.clone()
                    };
                    out.surface(&format!("{name}_loss"), &grid, Some(&traj))?;
                }
            }
            Figure::Fig2 => {
                let (ft, sc) = (ft()?, sc()?);
                let rows = export_learning_curves(&[&ft, &sc])?;
                let mut bytes = Vec::new();
                write_learning_csv(&rows, &mut bytes)?;
                out.put("learning_curves.csv", &bytes)?;
                let series: Vec<Series> = [&ft, &sc]
                    .iter()
                    .map(|r| Series {
                        label: r.label.clone(),
                        points: r
                            .checkpoints
                            .iter()
                            .map(|c| (c.epoch_index as f64, c.train_loss))
                            .collect(),
                    })
                    .collect();
                let spec = RenderSpec::new(RenderKind::Curve, None);
                out.put(
                    "learning_curves.svg",
                    render_curves(&series, &spec, "epoch", "training loss")?.as_bytes(),
                )?;
            }
            Figure::Fig3 => {
                let short = ft()?;
                let long = self.finetuned(TaskRole::Main, seed, t * self.cfg.run.extend_factor)?;
                let grid = self.dev_error_surface(&short, &ft_other()?)?;
                let traj =
                    project_trajectory(&long, &short.initial().params, &short.last().params)?;
                let mut bytes = Vec::new();
                write_trajectory_csv(&traj, &mut bytes)?;
                out.put("extended_trajectory.csv", &bytes)?;
                out.surface("dev_error", &grid, Some(&traj))?;
                let rows = export_learning_curves(&[&long])?;
                let mut bytes = Vec::new();
                write_learning_csv(&rows, &mut bytes)?;
                out.put("extended_curve.csv", &bytes)?;
            }
            Figure::Fig5 => {
                for (name, main, other) in [
                    ("finetune", ft()?, ft_other()?),
                    ("scratch", sc()?, sc_other()?),
                ] {
                    self.note(&format!("fig5: {name} dev-error surface"));
                    let grid = self.dev_error_surface(&main, &other)?;
                    out.surface(&format!("{name}_dev_error"), &grid, Some(&endpoints))?;
                }
            }
            Figure::Fig6 => {
                let mut series = Vec::new();
                let mut widths = BTreeMap::new();
                for (name, run) in [("finetune", ft()?), ("scratch", sc()?)] {
                    let curve = self.curve(&run)?;
                    let mut bytes = Vec::new();
                    write_curve_csv(&curve, &mut bytes)?;
                    out.put(&format!("{name}_curve.csv"), &bytes)?;
                    widths.insert(name, flatness_width(&curve, self.cfg.run.flatness_ratio)?);
                    series.push(Series {
                        label: name.to_string(),
                        points: curve
                            .alphas
                            .iter()
                            .zip(&curve.losses)
                            .map(|(a, l)| (a * curve.axis_scale, *l))
                            .collect(),
                    });
                }
                let mut json = serde_json::to_string_pretty(&widths)?;
                json.push('\n');
                out.put("flatness.json", json.as_bytes())?;
                let spec = RenderSpec::new(RenderKind::Curve, None);
                out.put(
                    "curves.svg",
                    render_curves(&series, &spec, "distance from start", "training loss")?
                        .as_bytes(),
                )?;
            }
            Figure::Fig7 => {
                let (main, other) = (ft()?, ft_other()?);
                let task = self.task(TaskRole::Main)?;
                let loss = DatasetLoss {
                    model: &self.model,
                    data: self.subsample(&task.train),
                };
                let second = other.last().params.diff(&other.initial().params)?;
                // The fine-tuned point sits at the origin and the rollback at alpha = -1.
                let rollback = TrajectoryProjection {
                    points: vec![TrajectoryPoint {
                        epoch: 1,
                        d_alpha: -1.0,
                        d_beta: 0.0,
                        v_cos: Some(-1.0),
                    }],
                };
                for group in LayerGroup::thirds(self.cfg.model.num_layers) {
                    self.note(&format!("fig7: {} layer surface", group.label));
                    let mut grid = layer_surface(
                        &main.last().params,
                        &main.initial().params,
                        &second,
                        &group,
                        &loss,
                        &self.cfg.grid.spec()?,
                        self.workers,
                    )?;
                    grid.axes.subsample = self.cfg.grid.subsample.filter(|&n| n < task.train.len());
                    out.surface(&format!("layer_{}", group.label), &grid, Some(&rollback))?;
                }
            }
            Figure::Table1 => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["task", "group", "dev_accuracy", "delta_vs_full"])?;
                for role in [TaskRole::Main, TaskRole::Other] {
                    let task = self.task(role)?;
                    let run = self.finetuned(role, seed, t)?;
                    let mut groups = vec![LayerGroup::empty()];
                    groups.extend(LayerGroup::thirds(self.cfg.model.num_layers));
                    for row in rollback_table(
                        &self.model,
                        &run.last().params,
                        &run.initial().params,
                        &groups,
                        &task.dev,
                    )? {
                        w.write_record([
                            task.name.clone(),
                            row.group,
                            crate::num::exact(row.dev_accuracy),
                            crate::num::exact(row.delta_vs_full),
                        ])?;
                    }
                }
                let bytes = w
                    .into_inner()
                    .map_err(|e| Error::format("rollback table", e.to_string()))?;
                out.put("rollback.csv", &bytes)?;
            }
        }
        out.finish(figure)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(
            ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(),
            cfg
        );
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::from_toml("[grid]\nsamples = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[bogus]\n").is_err());
        assert!(ExperimentConfig::from_toml("[grid]\nsamples_per_axis = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[finetune]\nseed = 4\n").is_err());
        assert!(
            ExperimentConfig::from_toml("[pretrain]\nobjective = \"classification\"\n").is_err()
        );
        assert!(ExperimentConfig::from_toml(
            "[tasks.other]\nkind = \"regime\"\ntrain = 4\ndev = 4\n"
        )
        .is_err());
        let cfg = ExperimentConfig::from_toml("[run]\nseed = 7\n[grid]\nsubsample = 32\n").unwrap();
        assert_eq!(cfg.finetune_config(cfg.run.seed).seed, 7);
        assert_eq!(cfg.grid.subsample, Some(32));
    }

    #[test]
    fn figure_ids_parse() {
        for f in Figure::ALL {
            assert_eq!(f.id().parse::<Figure>().unwrap(), f);
        }
        assert!(matches!(
            "fig9".parse::<Figure>(),
            Err(Error::UnknownFigure(_))
        ));
    }

    #[test]
    fn manifest_round_trips() {
        let m = Manifest {
            figure: "fig2".into(),
            files: vec![ManifestEntry {
                path: "a.csv".into(),
                sha256: sha256_hex(b"abc"),
            }],
        };
        assert_eq!(
            m.files[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(Manifest::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
