#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sare_core::data::{Candidate, Dataset, EntityTable, ImpressionList, ITEM_ID, USER_ID};
use sare_core::model::{Ablation, BackboneConfig, BackboneKind, ListFeatures, Model, ModelSpec, SituationMode};
use sare_core::numeric::{Activation, ActivationBank};

/// Random dataset with three situation fields and one attribute per entity.
pub fn toy_dataset(n_lists: usize, list_len: usize, seed: u64) -> Dataset {
    let (n_users, n_items) = (6u32, 12u32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = |n: u32, field: &str, rng: &mut ChaCha8Rng| EntityTable {
        fields: vec![field.to_string()],
        rows: (0..n).map(|id| (id, vec![rng.random_range(0..3)])).collect(),
    };
    let users = table(n_users, "age", &mut rng);
    let items = table(n_items, "genre", &mut rng);
    let sit_sizes = [3u32, 4, 2];
    let lists = (0..n_lists)
        .map(|l| {
            let picks = index::sample(&mut rng, n_items as usize, list_len);
            let mut candidates: Vec<Candidate> = picks
                .iter()
                .map(|i| Candidate {
                    item_id: i as u32,
                    label: u8::from(rng.random_bool(0.4)),
                })
                .collect();
            candidates[0].label = 1;
            candidates[1].label = 0;
            ImpressionList {
                list_id: l as u64,
                user_id: rng.random_range(0..n_users),
                timestamp: l as i64 * 60,
                candidates,
                situations: sit_sizes.iter().map(|&s| rng.random_range(0..s)).collect(),
            }
        })
        .collect();
    let mut vocab = BTreeMap::new();
    vocab.insert(USER_ID.to_string(), n_users);
    vocab.insert(ITEM_ID.to_string(), n_items);
    vocab.insert("age".to_string(), 3);
    vocab.insert("genre".to_string(), 3);
    for (f, s) in ["a", "b", "c"].iter().zip(sit_sizes) {
        vocab.insert(f.to_string(), s);
    }
    let d = Dataset {
        users,
        items,
        lists,
        vocab,
        situation_fields: vec!["a".into(), "b".into(), "c".into()],
    };
    d.validate().unwrap();
    d
}

/// A smooth four-function bank, so finite differences see no kinks.
pub fn smooth_bank() -> ActivationBank {
    ActivationBank::new(vec![
        Activation::Identity,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softplus,
    ])
    .unwrap()
}

pub fn backbone(kind: BackboneKind, use_history: bool, mode: SituationMode) -> BackboneConfig {
    BackboneConfig {
        kind,
        use_history,
        situation_mode: mode,
    }
}

pub fn model(d: &Dataset, cfg: BackboneConfig, dim: usize, ablation: Ablation, seed: u64) -> Model {
    let spec = ModelSpec::from_dataset(d, cfg, dim, &smooth_bank(), ablation).unwrap();
    Model::new(spec, seed).unwrap()
}

pub fn features(m: &Model, d: &Dataset) -> Vec<ListFeatures> {
    let idx: Vec<usize> = (0..d.lists.len()).collect();
    let history = sare_core::data::HistoryIndex::build(&d.lists);
    m.features_for(d, &idx, Some(&history)).unwrap()
}

/// Deterministic O(1)-sized nudge of every weight away from its init, so
/// gradients are not dominated by near-zero embeddings.
pub fn perturb(m: &mut Model) {
    for p in m.params_mut().iter_mut() {
        for (i, v) in p.value.values_mut().iter_mut().enumerate() {
            *v += 0.3 * (i as f64 * 0.37 + p.name.len() as f64).sin();
        }
    }
}
