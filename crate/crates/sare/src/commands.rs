//! The subcommands, as library functions writing into an experiment directory.
//!
//! Layout under the output directory:
//!
//! ```text
//! config.json                 verbatim copy of the experiment config
//! checkpoints/seed-<s>.json   one per seed
//! logs/seed-<s>.jsonl         one epoch record per line
//! reports/<variant>.json      MetricsReport
//! reports/<variant>.txt       rendered table
//! ablation/<label>/...        same layout, one per ablation
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sare_core::data::{generate_synthetic, Dataset, GeneratorConfig};
use sare_core::eval::Variant;
use sare_core::model::{Ablation, Census, Model};
use sare_core::sare::count_sare_params;
use sare_core::train::{Adam, FitReport, Regime, TrainConfig};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::LoadedConfig;
use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::io::{save_dataset, IMPRESSIONS_FILE, ITEMS_FILE, MANIFEST_FILE, USERS_FILE};
use crate::report::{render_table, MetricsReport, Pairing};

pub const CONFIG_ECHO: &str = "config.json";

/// Ablations run by `ablate`, full model first.
pub const ABLATIONS: [Ablation; 5] = [
    Ablation {
        no_cb: false,
        no_ucpe: false,
        no_psf: false,
        no_conf: false,
    },
    Ablation {
        no_cb: true,
        no_ucpe: false,
        no_psf: false,
        no_conf: false,
    },
    Ablation {
        no_cb: false,
        no_ucpe: true,
        no_psf: false,
        no_conf: false,
    },
    Ablation {
        no_cb: false,
        no_ucpe: false,
        no_psf: true,
        no_conf: false,
    },
    Ablation {
        no_cb: false,
        no_ucpe: false,
        no_psf: false,
        no_conf: true,
    },
];

pub fn checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    out.join("checkpoints").join(format!("seed-{seed}.json"))
}

pub fn log_path(out: &Path, seed: u64) -> PathBuf {
    out.join("logs").join(format!("seed-{seed}.jsonl"))
}

pub fn report_path(out: &Path, variant: Variant) -> PathBuf {
    out.join("reports").join(format!("{}.json", variant.name()))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's seed list.
    pub seeds: Option<Vec<u64>>,
    /// Overrides the config's output directory.
    pub out: Option<PathBuf>,
    pub force: bool,
    /// Print one line per epoch on stderr.
    pub progress: bool,
}

impl RunOptions {
    fn seeds(&self, cfg: &LoadedConfig) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| cfg.config.seeds.clone())
    }

    fn out(&self, cfg: &LoadedConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.output_dir())
    }
}

fn guard(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Error::Config(format!(
            "{} already exists; pass --force to overwrite",
            p.display()
        ))),
        None => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, contents).map_err(Error::io(path))
}

/// Writes a generated dataset into `out`.
pub fn generate(cfg: &GeneratorConfig, out: &Path, force: bool) -> Result<Dataset> {
    cfg.validate()?;
    let files = [MANIFEST_FILE, IMPRESSIONS_FILE, USERS_FILE, ITEMS_FILE].map(|f| out.join(f));
    guard(&files, force)?;
    let dataset = generate_synthetic(cfg)?;
    save_dataset(&dataset, out)?;
    Ok(dataset)
}

#[derive(Debug, Clone)]
pub struct TrainedSeed {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub fit: FitReport,
}

pub fn train(cfg: &LoadedConfig, opts: &RunOptions) -> Result<Vec<TrainedSeed>> {
    let exp = Experiment::prepare(cfg)?;
    train_into(cfg, &exp, &cfg.config.train, &opts.out(cfg), &opts.seeds(cfg), opts)
}

fn load_pretrained(cfg: &LoadedConfig, seed: u64) -> Result<Option<Model>> {
    if cfg.config.train.regime != Regime::FixSare {
        return Ok(None);
    }
    let dir = cfg.resolve(cfg.config.pretrained.as_ref().expect("validated"));
    let path = checkpoint_path(&dir, seed);
    if !path.exists() {
        return Err(Error::Config(format!(
            "pretrained checkpoint {} not found",
            path.display()
        )));
    }
    let ck = Checkpoint::load(&path)?;
    if ck.spec.has_sare() {
        return Err(Error::Config(format!(
            "{} is not a backbone_only checkpoint",
            path.display()
        )));
    }
    Ok(Some(ck.model()?))
}

fn train_into(
    cfg: &LoadedConfig,
    exp: &Experiment,
    train_cfg: &TrainConfig,
    out: &Path,
    seeds: &[u64],
    opts: &RunOptions,
) -> Result<Vec<TrainedSeed>> {
    let mut targets = vec![out.join(CONFIG_ECHO)];
    for &s in seeds {
        targets.push(checkpoint_path(out, s));
        targets.push(log_path(out, s));
    }
    guard(&targets, opts.force)?;
    write_file(&out.join(CONFIG_ECHO), &cfg.raw)?;

    let mut done = Vec::new();
    for &seed in seeds {
        let pretrained = load_pretrained(cfg, seed)?;
        let log = log_path(out, seed);
        fs::create_dir_all(log.parent().unwrap()).map_err(Error::io(out))?;
        let mut writer = BufWriter::new(File::create(&log).map_err(Error::io(&log))?);
        let mut write_err = None;
        let label = format!("{} {}", cfg.config.name, train_cfg.ablation.label());
        let (model, fit) = exp.train_seed(cfg, train_cfg, seed, pretrained.as_ref(), |r| {
            let line = serde_json::to_string(r).expect("record serializes");
            if let Err(e) = writeln!(writer, "{line}") {
                write_err.get_or_insert(e);
            }
            if opts.progress {
                eprintln!(
                    "[{label} seed {seed}] epoch {:>3}  loss {:.4}  valid ndcg@{} {:.4}",
                    r.epoch, r.train_loss, train_cfg.eval_k, r.valid_ndcg
                );
            }
        })?;
        if let Some(e) = write_err {
            return Err(Error::Io { path: log, source: e });
        }
        writer.flush().map_err(Error::io(&log))?;
        let tc = TrainConfig {
            seed,
            ..train_cfg.clone()
        };
        let path = checkpoint_path(out, seed);
        Checkpoint::new(&model, seed, Some(tc), Some(fit.best_epoch)).save(&path)?;
        done.push(TrainedSeed {
            seed,
            checkpoint: path,
            fit,
        });
    }
    Ok(done)
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub run: RunOptions,
    /// Explicit checkpoints; defaults to the seed checkpoints of the output directory.
    pub checkpoints: Vec<PathBuf>,
    pub variant: Option<Variant>,
    pub baseline: Option<PathBuf>,
    pub pairing: Pairing,
}

/// Evaluates checkpoints on the test split. Returns the report and, when a
/// baseline was given, the baseline report for display.
pub fn evaluate(cfg: &LoadedConfig, opts: &EvalOptions) -> Result<(MetricsReport, Option<MetricsReport>)> {
    let exp = Experiment::prepare(cfg)?;
    let out = opts.run.out(cfg);
    let variant = opts.variant.unwrap_or(Variant::Combined);
    let target = report_path(&out, variant);
    guard(&[target.clone()], opts.run.force)?;
    let paths = if opts.checkpoints.is_empty() {
        opts.run.seeds(cfg).iter().map(|&s| checkpoint_path(&out, s)).collect()
    } else {
        opts.checkpoints.clone()
    };
    let mut seeds = Vec::new();
    let mut lists = Vec::new();
    for path in &paths {
        if !path.exists() {
            return Err(Error::Config(format!("checkpoint {} not found", path.display())));
        }
        let ck = Checkpoint::load(path)?;
        let model = ck.model()?;
        if variant == Variant::SareOnly && !model.spec().has_sare() {
            return Err(Error::Config("variant sare_only needs a model with the enhancer".into()));
        }
        let (m, l) = exp.evaluate(&model, ck.seed, cfg.config.eval_k, variant)?;
        seeds.push(m);
        lists.extend(l);
    }
    let mut report = MetricsReport::new(&cfg.config.name, variant.name(), cfg.config.eval_k, seeds)?;
    if opts.pairing == Pairing::List {
        report.lists = lists;
    }
    let baseline = match &opts.baseline {
        Some(p) => {
            let b = MetricsReport::load(p)?;
            report.compare(&b, opts.pairing)?;
            Some(b)
        }
        None => None,
    };
    report.save(&target)?;
    let rows: Vec<&MetricsReport> = baseline.iter().chain(std::iter::once(&report)).collect();
    write_file(&target.with_extension("txt"), &render_table(&rows))?;
    Ok((report, baseline))
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    /// Full model first, then -cb, -ucpe, -psf, -conf; each compared to full.
    pub reports: Vec<MetricsReport>,
    pub table: String,
}

/// Trains and evaluates every ablation on shared seeds.
pub fn ablate(cfg: &LoadedConfig, opts: &RunOptions) -> Result<AblationOutcome> {
    if !cfg.config.train.ablation.is_full() {
        return Err(Error::Config("ablate sets the ablation flags itself; leave train.ablation empty".into()));
    }
    if cfg.config.train.regime == Regime::BackboneOnly {
        return Err(Error::Config("ablate needs regime train_sare or fix_sare".into()));
    }
    let exp = Experiment::prepare(cfg)?;
    let out = opts.out(cfg).join("ablation");
    let seeds = opts.seeds(cfg);
    let k = cfg.config.eval_k;
    guard(&[out.join("table.txt"), out.join("per_seed.tsv")], opts.force)?;
    let mut reports = Vec::new();
    for ablation in ABLATIONS {
        let label = ablation.label();
        let dir = out.join(label);
        let tc = TrainConfig {
            ablation,
            ..cfg.config.train.clone()
        };
        guard(&[report_path(&dir, Variant::Combined)], opts.force)?;
        let trained = train_into(cfg, &exp, &tc, &dir, &seeds, opts)?;
        let mut per_seed = Vec::new();
        for t in &trained {
            let model = Checkpoint::load(&t.checkpoint)?.model()?;
            per_seed.push(exp.evaluate(&model, t.seed, k, Variant::Combined)?.0);
        }
        reports.push(MetricsReport::new(&format!("{} {label}", cfg.config.name), Variant::Combined.name(), k, per_seed)?);
    }
    let full = reports[0].clone();
    if seeds.len() >= 2 {
        for r in reports.iter_mut().skip(1) {
            r.compare(&full, Pairing::Seed)?;
        }
    }
    let mut rows = String::from("ablation\tseed\thr\tmap\tndcg\n");
    for (ablation, r) in ABLATIONS.iter().zip(&reports) {
        r.save(&report_path(&out.join(ablation.label()), Variant::Combined))?;
        for s in &r.seeds {
            rows.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", ablation.label(), s.seed, s.hr, s.map, s.ndcg));
        }
    }
    let table = render_table(&reports.iter().collect::<Vec<_>>());
    write_file(&out.join("table.txt"), &table)?;
    write_file(&out.join("per_seed.tsv"), &rows)?;
    Ok(AblationOutcome { reports, table })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCensus {
    pub backbone: usize,
    pub sare_non_embedding: usize,
    /// `count_sare_params` for the configured D, K and history setting;
    /// absent when the enhancer is disabled or ablated.
    pub sare_formula: Option<usize>,
    pub situation_embedding: usize,
    pub total: usize,
    /// Scalars registered with the optimizer.
    pub optimizer_registered: usize,
}

impl ParamCensus {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("backbone parameters           {:>12}\n", self.backbone));
        out.push_str(&format!("sare non-embedding parameters {:>12}\n", self.sare_non_embedding));
        if let Some(f) = self.sare_formula {
            out.push_str(&format!("  formula 4D²+2KD+2K / 3D²+KD+K {:>10}\n", f));
        }
        out.push_str(&format!("situation embedding (θ_s)     {:>12}\n", self.situation_embedding));
        out.push_str(&format!("total                         {:>12}\n", self.total));
        out.push_str(&format!("optimizer registered          {:>12}\n", self.optimizer_registered));
        out
    }
}

pub fn count_params(cfg: &LoadedConfig) -> Result<ParamCensus> {
    let exp = Experiment::prepare(cfg)?;
    let spec = exp.spec(cfg, cfg.config.train.ablation)?;
    let model = Model::new(spec, 0)?;
    let Census {
        backbone,
        sare_dense,
        sare_embedding,
    } = model.census();
    let c = &cfg.config;
    let sare_formula = (model.spec().has_sare() && c.train.ablation.is_full())
        .then(|| count_sare_params(c.dim, c.activations, c.backbone.use_history));
    let adam = Adam::new(model.params(), c.train.adam);
    Ok(ParamCensus {
        backbone,
        sare_non_embedding: sare_dense,
        sare_formula,
        situation_embedding: sare_embedding,
        total: backbone + sare_dense + sare_embedding,
        optimizer_registered: adam.registered(),
    })
}
