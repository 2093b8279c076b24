//! The training loop.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig, GroupSettings, Gradients};
use super::loss::{bpr_session_node, ce_constraint_node};
use crate::error::{Error, Result};
use crate::eval::{self, CompensatedSum, Variant};
use crate::model::{Ablation, Forward, ListFeatures, Model, Owner};
use crate::numeric::{Tape, Var};

/// Which parameters a run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Backbone and enhancer trained jointly.
    TrainSare,
    /// Backbone loaded from a checkpoint and frozen; only the enhancer moves.
    FixSare,
    /// A model without the enhancer.
    BackboneOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(alias = "lr_r")]
    pub lr_backbone: f64,
    #[serde(alias = "lr_s")]
    pub lr_sare: f64,
    #[serde(default)]
    pub weight_decay_sare: f64,
    #[serde(default)]
    pub weight_decay_backbone: f64,
    pub lambda_s: f64,
    pub lambda_p: f64,
    pub epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Cutoff of the validation NDCG used for early stopping.
    #[serde(default = "default_eval_k")]
    pub eval_k: usize,
    /// Lists whose gradients are averaged into one optimizer step.
    #[serde(default = "default_accumulate")]
    pub accumulate: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ablation: Ablation,
    pub regime: Regime,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_patience() -> usize {
    5
}

fn default_eval_k() -> usize {
    3
}

fn default_accumulate() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !positive(self.lr_backbone) || !positive(self.lr_sare) {
            return bad("learning rates must be positive");
        }
        if !nonneg(self.lambda_s) || !nonneg(self.lambda_p) {
            return bad("loss weights must be non-negative");
        }
        if !nonneg(self.weight_decay_sare) || !nonneg(self.weight_decay_backbone) {
            return bad("weight decay must be non-negative");
        }
        if self.epochs == 0 || self.eval_k == 0 || self.accumulate == 0 {
            return bad("epochs, eval_k and accumulate must be at least 1");
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !positive(a.eps) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    fn check_model(&self, model: &Model) -> Result<()> {
        let spec = model.spec();
        if spec.ablation != self.ablation {
            return Err(Error::Config(format!(
                "training ablation `{}` differs from the model's `{}`",
                self.ablation.label(),
                spec.ablation.label()
            )));
        }
        match (self.regime, spec.has_sare()) {
            (Regime::BackboneOnly, true) => Err(Error::Config(
                "regime backbone_only needs situation_mode concat or none".into(),
            )),
            (Regime::TrainSare | Regime::FixSare, false) => Err(Error::Config(
                "regimes train_sare and fix_sare need situation_mode sare".into(),
            )),
            _ => Ok(()),
        }
    }

    fn group(&self, owner: Owner) -> GroupSettings {
        match owner {
            Owner::Backbone => GroupSettings {
                lr: self.lr_backbone,
                weight_decay: self.weight_decay_backbone,
                frozen: self.regime == Regime::FixSare,
            },
            Owner::Sare => GroupSettings {
                lr: self.lr_sare,
                weight_decay: self.weight_decay_sare,
                frozen: false,
            },
        }
    }
}

/// Loss nodes of one list. Enhancer terms are absent without the enhancer.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: Var,
    pub l_br: Var,
    pub l_bs: Option<Var>,
    pub l_p: Option<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_br: f64,
    pub l_bs: f64,
    pub l_p: f64,
}

impl LossNodes {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            total: tape.scalar(self.total),
            l_br: tape.scalar(self.l_br),
            l_bs: self.l_bs.map_or(0.0, |v| tape.scalar(v)),
            l_p: self.l_p.map_or(0.0, |v| tape.scalar(v)),
        }
    }
}

/// `L_br + λ_s L_bs + λ_p L_p`; the constraint term reads the output
/// probabilities, which are the enhancer's own under `no_cb`.
pub fn total_loss_node(
    tape: &mut Tape,
    fwd: &Forward,
    labels: &[u8],
    lambda_s: f64,
    lambda_p: f64,
) -> Result<LossNodes> {
    let l_br = bpr_session_node(tape, fwd.backbone_scores, labels)?;
    let Some(sare_scores) = fwd.sare_scores else {
        return Ok(LossNodes {
            total: l_br,
            l_br,
            l_bs: None,
            l_p: None,
        });
    };
    let l_bs = bpr_session_node(tape, sare_scores, labels)?;
    let l_p = ce_constraint_node(tape, fwd.output, labels)?;
    let ws = tape.scale(l_bs, lambda_s);
    let wp = tape.scale(l_p, lambda_p);
    let total = tape.sum_n(&[l_br, ws, wp]);
    Ok(LossNodes {
        total,
        l_br,
        l_bs: Some(l_bs),
        l_p: Some(l_p),
    })
}

pub fn total_loss(model: &Model, feats: &ListFeatures, lambda_s: f64, lambda_p: f64) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, feats)?;
    let nodes = total_loss_node(&mut tape, &fwd, &feats.labels, lambda_s, lambda_p)?;
    Ok(nodes.values(&tape))
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "L_br")]
    pub l_br: f64,
    #[serde(rename = "L_bs")]
    pub l_bs: f64,
    #[serde(rename = "L_p")]
    pub l_p: f64,
    pub valid_hr: f64,
    pub valid_map: f64,
    pub valid_ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_valid_ndcg: f64,
    pub stopped_early: bool,
}

/// Trains `model` in place and leaves it at the best validation epoch.
/// `on_epoch` sees each record as soon as it is complete.
pub fn fit(
    model: &mut Model,
    train: &[ListFeatures],
    valid: &[ListFeatures],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitReport> {
    cfg.validate()?;
    cfg.check_model(model)?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if valid.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params(), cfg.adam);
    let mut grads = Gradients::new(model.params());
    let mut tape = Tape::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [CompensatedSum::default(); 4];
        for (step, &i) in order.iter().enumerate() {
            let feats = &train[i];
            tape.clear();
            let fwd = model.forward(&mut tape, feats)?;
            let nodes = total_loss_node(&mut tape, &fwd, &feats.labels, cfg.lambda_s, cfg.lambda_p)?;
            let parts = nodes.values(&tape);
            if !parts.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("loss {} on list {}", parts.total, feats.list_id),
                });
            }
            tape.backward(nodes.total).map_err(|e| Error::Diverged {
                epoch,
                detail: format!("list {}: {e}", feats.list_id),
            })?;
            grads.accumulate(&tape);
            if grads.lists() == cfg.accumulate || step + 1 == order.len() {
                adam.step(model.params_mut(), &grads, |o| cfg.group(o));
                grads.clear();
            }
            for (s, v) in sums.iter_mut().zip([parts.total, parts.l_br, parts.l_bs, parts.l_p]) {
                s.add(v);
            }
        }
        if let Some(p) = model.params().iter().find(|p| !p.value.all_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: format!("parameter `{}` became non-finite", p.name),
            });
        }
        let n = train.len() as f64;
        let metrics = eval::evaluate(model, valid, cfg.eval_k, Variant::Combined)?;
        let record = EpochRecord {
            epoch,
            train_loss: sums[0].total() / n,
            l_br: sums[1].total() / n,
            l_bs: sums[2].total() / n,
            l_p: sums[3].total() / n,
            valid_hr: metrics.hr,
            valid_map: metrics.map,
            valid_ndcg: metrics.ndcg,
        };
        on_epoch(&record);
        history.push(record);

        let improved = best.as_ref().is_none_or(|(_, score, _)| metrics.ndcg > *score);
        if improved {
            best = Some((epoch, metrics.ndcg, model.params().snapshot()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_valid_ndcg, snapshot) = best.expect("at least one epoch ran");
    model.params_mut().restore(&snapshot);
    Ok(FitReport {
        history,
        best_epoch,
        best_valid_ndcg,
        stopped_early,
    })
}
