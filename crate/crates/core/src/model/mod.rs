//! Shared embedding tables, the two backbones and the full forward pass.

mod backbone;
mod params;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, HistoryIndex, ImpressionList, ITEM_ID, USER_ID};
use crate::error::{Error, Result};
use crate::numeric::{Activation, ActivationBank, Tape, Var};
use crate::sare::{self, SareLayout};
use crate::train::fusion;

pub use backbone::{fm_score, idmf_score, FmBlock};
pub use params::{Init, Owner, Param, ParamId, ParamStore, Role};

/// Standard deviation of freshly initialised embedding rows.
pub const EMBEDDING_INIT_STD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Factorization machine over id and attribute features.
    Fm,
    /// Dot product of id embeddings, optionally adding mean-pooled history.
    Idmf,
}

/// Where situation attributes enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SituationMode {
    /// Fed to the backbone as ordinary features.
    Concat,
    /// Consumed only by the enhancer branch.
    Sare,
    /// Ignored.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    #[serde(default)]
    pub use_history: bool,
    pub situation_mode: SituationMode,
}

/// Structural switches removing one piece of the enhancer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Rank by the enhancer's probabilities alone.
    pub no_cb: bool,
    /// Activation mixing weights are one learned vector shared by all users.
    pub no_ucpe: bool,
    /// Situation attention weights are one learned vector shared by all users.
    pub no_psf: bool,
    /// Unweighted harmonic mean of the two branches.
    pub no_conf: bool,
}

impl Ablation {
    pub fn is_full(&self) -> bool {
        *self == Ablation::default()
    }

    pub fn label(&self) -> &'static str {
        match (self.no_cb, self.no_ucpe, self.no_psf, self.no_conf) {
            (false, false, false, false) => "full",
            (true, false, false, false) => "-cb",
            (false, true, false, false) => "-ucpe",
            (false, false, true, false) => "-psf",
            (false, false, false, true) => "-conf",
            _ => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneConfig,
    pub dim: usize,
    pub activations: Vec<Activation>,
    /// `user_id` first, then attribute fields the backbone reads.
    pub user_fields: Vec<FieldSpec>,
    pub item_fields: Vec<FieldSpec>,
    pub situation_fields: Vec<FieldSpec>,
    pub ablation: Ablation,
}

impl ModelSpec {
    /// Derives field lists from a dataset. The ID backbone reads ids only;
    /// the factorization machine also reads every attribute field.
    pub fn from_dataset(
        dataset: &Dataset,
        backbone: BackboneConfig,
        dim: usize,
        bank: &ActivationBank,
        ablation: Ablation,
    ) -> Result<Self> {
        let fields = |id: &str, attrs: &[String]| -> Result<Vec<FieldSpec>> {
            let mut names = vec![id.to_string()];
            if backbone.kind == BackboneKind::Fm {
                names.extend(attrs.iter().cloned());
            }
            names
                .into_iter()
                .map(|name| {
                    let size = dataset.vocab_size(&name)?;
                    Ok(FieldSpec { name, size })
                })
                .collect()
        };
        let spec = Self {
            backbone,
            dim,
            activations: bank.functions().to_vec(),
            user_fields: fields(USER_ID, &dataset.users.fields)?,
            item_fields: fields(ITEM_ID, &dataset.items.fields)?,
            situation_fields: dataset
                .field_sizes(&dataset.situation_fields)?
                .into_iter()
                .map(|(name, size)| FieldSpec { name, size })
                .collect(),
            ablation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn has_sare(&self) -> bool {
        self.backbone.situation_mode == SituationMode::Sare
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("embedding dimension must be positive".into());
        }
        if self.activations.is_empty() {
            return bad("activation bank is empty".into());
        }
        if self.user_fields.first().map(|f| f.name.as_str()) != Some(USER_ID)
            || self.item_fields.first().map(|f| f.name.as_str()) != Some(ITEM_ID)
        {
            return bad("user and item fields must start with their id field".into());
        }
        if self.backbone.use_history && self.backbone.kind != BackboneKind::Idmf {
            return bad("history pooling is only available for the idmf backbone".into());
        }
        if !self.has_sare() && self.ablation != Ablation::default() {
            return bad("ablation flags require situation_mode = sare".into());
        }
        if self.has_sare() && self.situation_fields.is_empty() {
            return bad("situation_mode = sare needs at least one situation field".into());
        }
        let all = self
            .user_fields
            .iter()
            .chain(&self.item_fields)
            .chain(&self.situation_fields);
        for f in all {
            if f.size == 0 {
                return bad(format!("field `{}` has an empty vocabulary", f.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum BackboneLayout {
    Fm {
        user_linear: Vec<ParamId>,
        item_linear: Vec<ParamId>,
        situation_tables: Vec<ParamId>,
        situation_linear: Vec<ParamId>,
        bias: ParamId,
    },
    Idmf {
        user_bias: ParamId,
        item_bias: ParamId,
        bias: ParamId,
    },
}

/// Model inputs for one impression list, resolved to table rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListFeatures {
    pub list_id: u64,
    /// Category per user field.
    pub user: Vec<u32>,
    /// Category per item field, one row of `item_fields.len()` per candidate.
    pub items: Vec<u32>,
    pub item_ids: Vec<u32>,
    pub labels: Vec<u8>,
    pub situations: Vec<u32>,
    /// Item rows (same stride as `items`) of earlier clicks.
    pub history: Vec<u32>,
}

impl ListFeatures {
    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Vectors produced by the representation layer for one list.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub user: Var,
    pub items: Vec<Var>,
    pub history: Option<Var>,
    /// Situation rows, empty unless the enhancer is attached.
    pub situations: Vec<Var>,
}

/// Output nodes of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub backbone_scores: Var,
    pub sare_scores: Option<Var>,
    pub p_backbone: Var,
    pub p_sare: Option<Var>,
    /// What the model ranks by.
    pub output: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub backbone: usize,
    pub sare_dense: usize,
    pub sare_embedding: usize,
}

impl Census {
    pub fn total(&self) -> usize {
        self.backbone + self.sare_dense + self.sare_embedding
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    bank: ActivationBank,
    params: ParamStore,
    user_tables: Vec<ParamId>,
    item_tables: Vec<ParamId>,
    backbone: BackboneLayout,
    sare: Option<SareLayout>,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let bank = ActivationBank::new(spec.activations.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = spec.dim;
        let emb = Init::Normal(EMBEDDING_INIT_STD);

        let tables = |params: &mut ParamStore, fields: &[FieldSpec], rng: &mut ChaCha8Rng| {
            fields
                .iter()
                .map(|f| {
                    params.add(
                        format!("emb.{}", f.name),
                        Owner::Backbone,
                        Role::Table,
                        f.size as usize,
                        d,
                        emb,
                        rng,
                    )
                })
                .collect::<Vec<_>>()
        };
        let user_tables = tables(&mut params, &spec.user_fields, &mut rng);
        let item_tables = tables(&mut params, &spec.item_fields, &mut rng);

        let backbone = match spec.backbone.kind {
            BackboneKind::Fm => {
                let linear = |params: &mut ParamStore, fields: &[FieldSpec], rng: &mut ChaCha8Rng| {
                    fields
                        .iter()
                        .map(|f| {
                            params.add(
                                format!("fm.linear.{}", f.name),
                                Owner::Backbone,
                                Role::Table,
                                f.size as usize,
                                1,
                                Init::Zeros,
                                rng,
                            )
                        })
                        .collect::<Vec<_>>()
                };
                let user_linear = linear(&mut params, &spec.user_fields, &mut rng);
                let item_linear = linear(&mut params, &spec.item_fields, &mut rng);
                let (situation_tables, situation_linear) =
                    if spec.backbone.situation_mode == SituationMode::Concat {
                        let t = tables_for_situations(&mut params, &spec, Owner::Backbone, &mut rng);
                        let l = linear(&mut params, &spec.situation_fields, &mut rng);
                        (t, l)
                    } else {
                        (Vec::new(), Vec::new())
                    };
                let bias = params.add("fm.bias", Owner::Backbone, Role::Dense, 1, 1, Init::Zeros, &mut rng);
                BackboneLayout::Fm {
                    user_linear,
                    item_linear,
                    situation_tables,
                    situation_linear,
                    bias,
                }
            }
            BackboneKind::Idmf => {
                if spec.backbone.situation_mode == SituationMode::Concat {
                    return Err(Error::Config(
                        "the idmf backbone has no feature slots for concatenated situations".into(),
                    ));
                }
                let user_bias = params.add(
                    "mf.bias.user",
                    Owner::Backbone,
                    Role::Table,
                    spec.user_fields[0].size as usize,
                    1,
                    Init::Zeros,
                    &mut rng,
                );
                let item_bias = params.add(
                    "mf.bias.item",
                    Owner::Backbone,
                    Role::Table,
                    spec.item_fields[0].size as usize,
                    1,
                    Init::Zeros,
                    &mut rng,
                );
                let bias = params.add("mf.bias", Owner::Backbone, Role::Dense, 1, 1, Init::Zeros, &mut rng);
                BackboneLayout::Idmf {
                    user_bias,
                    item_bias,
                    bias,
                }
            }
        };

        let sare = if spec.has_sare() {
            let situation_tables = tables_for_situations(&mut params, &spec, Owner::Sare, &mut rng);
            Some(SareLayout::build(
                &mut params,
                d,
                bank.len(),
                spec.situation_fields.len(),
                spec.backbone.use_history,
                spec.ablation,
                situation_tables,
                &mut rng,
            ))
        } else {
            None
        };

        Ok(Self {
            spec,
            bank,
            params,
            user_tables,
            item_tables,
            backbone,
            sare,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn bank(&self) -> &ActivationBank {
        &self.bank
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn sare_layout(&self) -> Option<&SareLayout> {
        self.sare.as_ref()
    }

    pub fn census(&self) -> Census {
        let mut c = Census {
            backbone: 0,
            sare_dense: 0,
            sare_embedding: 0,
        };
        for p in self.params.iter() {
            match (p.owner, p.role) {
                (Owner::Backbone, _) => c.backbone += p.len(),
                (Owner::Sare, Role::Dense) => c.sare_dense += p.len(),
                (Owner::Sare, Role::Table) => c.sare_embedding += p.len(),
            }
        }
        c
    }

    /// Replaces parameter values with those of an equally shaped store,
    /// matching by name. Owners and shapes must agree.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::Config(format!(
                "parameter count mismatch: model has {}, input has {}",
                self.params.len(),
                other.len()
            )));
        }
        for p in other.iter() {
            self.copy_param(p)?;
        }
        Ok(())
    }

    /// Copies every backbone-owned parameter of `pretrained` into this model.
    /// Returns the number of parameters copied.
    pub fn adopt_backbone(&mut self, pretrained: &Model) -> Result<usize> {
        let mut copied = 0;
        for p in pretrained.params.iter().filter(|p| p.owner == Owner::Backbone) {
            self.copy_param(p)?;
            copied += 1;
        }
        let expected = self.params.iter().filter(|p| p.owner == Owner::Backbone).count();
        if copied != expected {
            return Err(Error::Config(format!(
                "pretrained backbone provides {copied} of {expected} backbone parameters"
            )));
        }
        Ok(copied)
    }

    fn copy_param(&mut self, p: &Param) -> Result<()> {
        let id = self
            .params
            .find(&p.name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{}`", p.name)))?;
        let dst = self.params.get_mut(id);
        if dst.owner != p.owner || dst.role != p.role || dst.value.shape() != p.value.shape() {
            return Err(Error::Config(format!(
                "parameter `{}` does not match in owner, role or shape",
                p.name
            )));
        }
        dst.value.values_mut().copy_from_slice(p.value.values());
        Ok(())
    }

    /// Resolves a list into table rows. `history` supplies earlier clicks
    /// when the backbone pools history.
    pub fn features(
        &self,
        dataset: &Dataset,
        list: &ImpressionList,
        history: Option<&HistoryIndex>,
    ) -> Result<ListFeatures> {
        let user = self.entity_row(dataset, true, list.user_id)?;
        let mut items = Vec::with_capacity(list.len() * self.spec.item_fields.len());
        for c in &list.candidates {
            items.extend(self.entity_row(dataset, false, c.item_id)?);
        }
        let mut hist = Vec::new();
        if self.spec.backbone.use_history {
            if let Some(h) = history {
                for item in h.before(list.user_id, list.timestamp) {
                    hist.extend(self.entity_row(dataset, false, item)?);
                }
            }
        }
        if list.situations.len() != self.spec.situation_fields.len() {
            return Err(Error::Data(format!(
                "list {}: {} situation values for {} fields",
                list.list_id,
                list.situations.len(),
                self.spec.situation_fields.len()
            )));
        }
        for (&v, f) in list.situations.iter().zip(&self.spec.situation_fields) {
            if v >= f.size {
                return Err(Error::Data(format!(
                    "list {}: {}={v} outside vocabulary of {}",
                    list.list_id, f.name, f.size
                )));
            }
        }
        Ok(ListFeatures {
            list_id: list.list_id,
            user,
            items,
            item_ids: list.candidates.iter().map(|c| c.item_id).collect(),
            labels: list.labels(),
            situations: list.situations.clone(),
            history: hist,
        })
    }

    /// Features for a subset of a dataset's lists.
    pub fn features_for(
        &self,
        dataset: &Dataset,
        indices: &[usize],
        history: Option<&HistoryIndex>,
    ) -> Result<Vec<ListFeatures>> {
        indices
            .iter()
            .map(|&i| self.features(dataset, &dataset.lists[i], history))
            .collect()
    }

    fn entity_row(&self, dataset: &Dataset, user: bool, id: u32) -> Result<Vec<u32>> {
        let (fields, table, kind) = if user {
            (&self.spec.user_fields, &dataset.users, "user")
        } else {
            (&self.spec.item_fields, &dataset.items, "item")
        };
        if id >= fields[0].size {
            return Err(Error::Data(format!(
                "{kind} id {id} outside vocabulary of {}",
                fields[0].size
            )));
        }
        let attrs = table
            .attributes(id)
            .ok_or_else(|| Error::Data(format!("unknown {kind} id {id}")))?;
        let mut row = vec![id];
        for f in &fields[1..] {
            let pos = table
                .fields
                .iter()
                .position(|n| *n == f.name)
                .ok_or_else(|| Error::Data(format!("{kind} field `{}` missing", f.name)))?;
            let v = attrs[pos];
            if v >= f.size {
                return Err(Error::Data(format!(
                    "{kind} {id}: {}={v} outside vocabulary of {}",
                    f.name, f.size
                )));
            }
            row.push(v);
        }
        Ok(row)
    }

    fn check_features(&self, feats: &ListFeatures) -> Result<()> {
        let nu = self.spec.user_fields.len();
        let ni = self.spec.item_fields.len();
        let in_vocab = |row: &[u32], fields: &[FieldSpec]| row.iter().zip(fields).all(|(&v, f)| v < f.size);
        let ok = feats.user.len() == nu
            && in_vocab(&feats.user, &self.spec.user_fields)
            && feats.items.len() == ni * feats.len()
            && feats.items.chunks(ni).all(|r| in_vocab(r, &self.spec.item_fields))
            && feats.history.len() % ni == 0
            && feats.history.chunks(ni).all(|r| in_vocab(r, &self.spec.item_fields))
            && feats.situations.len() == self.spec.situation_fields.len()
            && in_vocab(&feats.situations, &self.spec.situation_fields)
            && feats.labels.len() == feats.len();
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "list {}: features do not match the model's vocabulary",
                feats.list_id
            )))
        }
    }

    fn sum_rows(&self, tape: &mut Tape, tables: &[ParamId], row: &[u32]) -> Var {
        let leaves: Vec<Var> = tables
            .iter()
            .zip(row)
            .map(|(&t, &r)| self.params.row_leaf(tape, t, r))
            .collect();
        if leaves.len() == 1 {
            leaves[0]
        } else {
            tape.sum_n(&leaves)
        }
    }

    /// Representation layer: user, candidate, history and situation vectors.
    pub fn embed(&self, tape: &mut Tape, feats: &ListFeatures) -> Result<Embedded> {
        self.check_features(feats)?;
        let ni = self.spec.item_fields.len();
        let user = self.sum_rows(tape, &self.user_tables, &feats.user);
        let items = feats
            .items
            .chunks(ni)
            .map(|row| self.sum_rows(tape, &self.item_tables, row))
            .collect();
        let history = if self.spec.backbone.use_history {
            let n = feats.history.len() / ni;
            Some(if n == 0 {
                tape.constant(&vec![0.0; self.spec.dim])
            } else {
                let rows: Vec<Var> = feats
                    .history
                    .chunks(ni)
                    .map(|row| self.sum_rows(tape, &self.item_tables, row))
                    .collect();
                let total = tape.sum_n(&rows);
                tape.scale(total, 1.0 / n as f64)
            })
        } else {
            None
        };
        let situations = match &self.sare {
            Some(layout) => layout
                .situation_tables
                .iter()
                .zip(&feats.situations)
                .map(|(&t, &r)| self.params.row_leaf(tape, t, r))
                .collect(),
            None => Vec::new(),
        };
        Ok(Embedded {
            user,
            items,
            history,
            situations,
        })
    }

    fn backbone_scores(&self, tape: &mut Tape, feats: &ListFeatures, emb: &Embedded) -> Var {
        let ni = self.spec.item_fields.len();
        let scores: Vec<Var> = match &self.backbone {
            BackboneLayout::Fm {
                user_linear,
                item_linear,
                situation_tables,
                situation_linear,
                bias,
            } => {
                let mut vectors: Vec<Var> = self
                    .user_tables
                    .iter()
                    .zip(&feats.user)
                    .map(|(&t, &r)| self.params.row_leaf(tape, t, r))
                    .collect();
                let mut weights: Vec<Var> = user_linear
                    .iter()
                    .zip(&feats.user)
                    .map(|(&t, &r)| self.params.row_leaf(tape, t, r))
                    .collect();
                for ((&t, &l), &r) in situation_tables.iter().zip(situation_linear).zip(&feats.situations) {
                    vectors.push(self.params.row_leaf(tape, t, r));
                    weights.push(self.params.row_leaf(tape, l, r));
                }
                let user_block = FmBlock::new(tape, &vectors, &weights);
                let b = self.params.dense_leaf(tape, *bias);
                feats
                    .items
                    .chunks(ni)
                    .map(|row| {
                        let v: Vec<Var> = self
                            .item_tables
                            .iter()
                            .zip(row)
                            .map(|(&t, &r)| self.params.row_leaf(tape, t, r))
                            .collect();
                        let w: Vec<Var> = item_linear
                            .iter()
                            .zip(row)
                            .map(|(&t, &r)| self.params.row_leaf(tape, t, r))
                            .collect();
                        let item_block = FmBlock::new(tape, &v, &w);
                        backbone::fm_score_blocks(tape, &[user_block, item_block], b)
                    })
                    .collect()
            }
            BackboneLayout::Idmf {
                user_bias,
                item_bias,
                bias,
            } => {
                let b0 = self.params.dense_leaf(tape, *bias);
                let bu = self.params.row_leaf(tape, *user_bias, feats.user[0]);
                let user_side = tape.add(bu, b0);
                feats
                    .item_ids
                    .iter()
                    .zip(&emb.items)
                    .map(|(&item, &iv)| {
                        let bi = self.params.row_leaf(tape, *item_bias, item);
                        let biases = tape.add(user_side, bi);
                        idmf_score(tape, emb.user, iv, emb.history, biases)
                    })
                    .collect()
            }
        };
        tape.stack(&scores)
    }

    pub fn forward(&self, tape: &mut Tape, feats: &ListFeatures) -> Result<Forward> {
        if feats.len() < 2 {
            return Err(Error::Data(format!(
                "list {} has fewer than two candidates",
                feats.list_id
            )));
        }
        let emb = self.embed(tape, feats)?;
        let backbone_scores = self.backbone_scores(tape, feats, &emb);
        let p_backbone = fusion::scores_to_probs_node(tape, backbone_scores)?;
        let Some(layout) = &self.sare else {
            return Ok(Forward {
                backbone_scores,
                sare_scores: None,
                p_backbone,
                p_sare: None,
                output: p_backbone,
            });
        };
        let sare_scores = sare::branch_scores(tape, &self.params, layout, &self.bank, &emb)?;
        let p_sare = fusion::scores_to_probs_node(tape, sare_scores)?;
        let ablation = self.spec.ablation;
        let output = if ablation.no_cb {
            p_sare
        } else {
            fusion::combine_node(tape, p_backbone, p_sare, !ablation.no_conf)
        };
        Ok(Forward {
            backbone_scores,
            sare_scores: Some(sare_scores),
            p_backbone,
            p_sare: Some(p_sare),
            output,
        })
    }
}

fn tables_for_situations(
    params: &mut ParamStore,
    spec: &ModelSpec,
    owner: Owner,
    rng: &mut ChaCha8Rng,
) -> Vec<ParamId> {
    let prefix = match owner {
        Owner::Backbone => "emb",
        Owner::Sare => "sare.situation",
    };
    spec.situation_fields
        .iter()
        .map(|f| {
            params.add(
                format!("{prefix}.{}", f.name),
                owner,
                Role::Table,
                f.size as usize,
                spec.dim,
                Init::Normal(EMBEDDING_INIT_STD),
                rng,
            )
        })
        .collect()
}
