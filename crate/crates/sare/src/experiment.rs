//! Dataset preparation, per-seed training and evaluation for one config.

use sare_core::data::{generate_synthetic, split_lists, Dataset, HistoryIndex, SplitIndices};
use sare_core::eval::{evaluate_lists, summarize, Variant};
use sare_core::model::{Ablation, ListFeatures, Model, ModelSpec};
use sare_core::numeric::ActivationBank;
use sare_core::train::{fit, EpochRecord, FitReport, TrainConfig};

use crate::config::{DatasetSource, LoadedConfig};
use crate::error::Result;
use crate::io::load_dataset_dir;
use crate::report::{ListMetrics, SeedMetrics};

pub struct Experiment {
    pub dataset: Dataset,
    pub split: SplitIndices,
    /// Clicks from the training split, for history pooling.
    pub history: HistoryIndex,
}

impl Experiment {
    pub fn prepare(cfg: &LoadedConfig) -> Result<Self> {
        let dataset = match &cfg.config.dataset {
            DatasetSource::Dir(dir) => load_dataset_dir(&cfg.resolve(dir))?,
            DatasetSource::Generate(g) => generate_synthetic(g)?,
        };
        Self::from_dataset(dataset, cfg)
    }

    pub fn from_dataset(dataset: Dataset, cfg: &LoadedConfig) -> Result<Self> {
        let s = cfg.config.split;
        let split = split_lists(&dataset, s.ratios, s.seed)?;
        let history = HistoryIndex::build(split.train.iter().map(|&i| &dataset.lists[i]));
        Ok(Self {
            dataset,
            split,
            history,
        })
    }

    pub fn spec(&self, cfg: &LoadedConfig, ablation: Ablation) -> Result<ModelSpec> {
        let c = &cfg.config;
        let bank = ActivationBank::truncated(c.activations)?;
        Ok(ModelSpec::from_dataset(&self.dataset, c.backbone, c.dim, &bank, ablation)?)
    }

    pub fn features(&self, model: &Model, part: &[usize]) -> Result<Vec<ListFeatures>> {
        Ok(model.features_for(&self.dataset, part, Some(&self.history))?)
    }

    /// Trains a fresh model. With `pretrained`, its backbone weights are
    /// copied in before training.
    pub fn train_seed(
        &self,
        cfg: &LoadedConfig,
        train_cfg: &TrainConfig,
        seed: u64,
        pretrained: Option<&Model>,
        on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<(Model, FitReport)> {
        let spec = self.spec(cfg, train_cfg.ablation)?;
        let mut model = Model::new(spec, seed)?;
        if let Some(p) = pretrained {
            model.adopt_backbone(p)?;
        }
        let train = self.features(&model, &self.split.train)?;
        let valid = self.features(&model, &self.split.valid)?;
        let tc = TrainConfig {
            seed,
            ..train_cfg.clone()
        };
        let report = fit(&mut model, &train, &valid, &tc, on_epoch)?;
        Ok((model, report))
    }

    /// Test-split metrics of one model. Per-list values are returned too.
    pub fn evaluate(
        &self,
        model: &Model,
        seed: u64,
        k: usize,
        variant: Variant,
    ) -> Result<(SeedMetrics, Vec<ListMetrics>)> {
        let test = self.features(model, &self.split.test)?;
        let per_list = evaluate_lists(model, &test, k, variant)?;
        let s = summarize(&per_list)?;
        let lists = test
            .iter()
            .zip(&per_list)
            .map(|(f, m)| ListMetrics {
                seed,
                list_id: f.list_id,
                hr: m.hr,
                ap: m.ap,
                ndcg: m.ndcg,
            })
            .collect();
        Ok((
            SeedMetrics {
                seed,
                hr: s.hr,
                map: s.map,
                ndcg: s.ndcg,
            },
            lists,
        ))
    }
}
