//! Seeded synthetic impression lists with a tunable situation effect.
//!
//! Each user has a base taste vector and one offset vector per period of
//! day; the period active when a list is shown shifts the user's taste by
//! `situation_effect` times that offset. A per-period engagement shift on the
//! logit, also scaled by `situation_effect`, moves the overall click rate
//! between periods without changing any within-list ordering.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::time::{derive_time_situations, TIME_SITUATION_FIELDS};
use super::{Candidate, Dataset, EntityTable, ImpressionList, ITEM_ID, USER_ID};
use crate::error::{Error, Result};

/// Logit shift per period (night, morning, afternoon, evening) at unit effect.
pub const PERIOD_ENGAGEMENT: [f64; 4] = [-0.2, 0.05, 0.0, 0.15];

const ATTRIBUTE_BUCKETS: u32 = 8;
const LABEL_RETRIES: usize = 20;
// 2023-01-01T00:00:00Z
const YEAR_START: i64 = 1_672_531_200;
const YEAR_SECONDS: i64 = 365 * 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_users: u32,
    pub n_items: u32,
    pub n_lists: u32,
    pub list_len: u32,
    pub latent_dim: u32,
    pub situation_effect: f64,
    pub click_bias: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_users: 2_000,
            n_items: 5_000,
            n_lists: 40_000,
            list_len: 10,
            latent_dim: 1,
            situation_effect: 2.0,
            click_bias: -1.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.list_len < 2 {
            return bad("list_len must be at least 2");
        }
        if self.n_lists == 0 {
            return bad("n_lists must be positive");
        }
        if self.n_users == 0 {
            return bad("n_users must be positive");
        }
        if self.list_len > self.n_items {
            return bad("list_len exceeds n_items");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if !(self.situation_effect >= 0.0 && self.situation_effect.is_finite()) {
            return bad("situation_effect must be finite and non-negative");
        }
        if !self.click_bias.is_finite() {
            return bad("click_bias must be finite");
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

fn draw_vectors(rng: &mut ChaCha8Rng, normal: &Normal<f64>, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| normal.sample(rng)).collect())
        .collect()
}

/// Rank-based bucketing of the first latent coordinate.
fn quantile_buckets(vectors: &[Vec<f64>]) -> Vec<u32> {
    let n = vectors.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vectors[a][0].total_cmp(&vectors[b][0]).then(a.cmp(&b)));
    let mut buckets = vec![0u32; n];
    for (rank, &id) in order.iter().enumerate() {
        buckets[id] = ((rank as u64 * u64::from(ATTRIBUTE_BUCKETS)) / n as u64) as u32;
    }
    buckets
}

fn entity_table(field: &str, buckets: Vec<u32>) -> EntityTable {
    EntityTable {
        fields: vec![field.to_string()],
        rows: buckets
            .into_iter()
            .enumerate()
            .map(|(id, b)| (id as u32, vec![b]))
            .collect(),
    }
}

pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.latent_dim as usize;
    let normal = Normal::new(0.0, 1.0 / libm::sqrt(dim as f64))
        .map_err(|e| Error::Config(e.to_string()))?;

    let n_users = cfg.n_users as usize;
    let n_items = cfg.n_items as usize;
    let base = draw_vectors(&mut rng, &normal, n_users, dim);
    let offsets: Vec<Vec<Vec<f64>>> = (0..n_users)
        .map(|_| draw_vectors(&mut rng, &normal, 4, dim))
        .collect();
    let item_vecs = draw_vectors(&mut rng, &normal, n_items, dim);

    let m = cfg.list_len as usize;
    let mut lists = Vec::with_capacity(cfg.n_lists as usize);
    let mut taste = vec![0.0; dim];
    let mut probs = vec![0.0; m];
    for list_id in 0..u64::from(cfg.n_lists) {
        let user = rng.random_range(0..n_users);
        let timestamp = YEAR_START + rng.random_range(0..YEAR_SECONDS);
        let time = derive_time_situations(timestamp, 0)?;
        let period = time.period as usize;
        let items = index::sample(&mut rng, n_items, m).into_vec();

        for (t, (b, w)) in taste.iter_mut().zip(base[user].iter().zip(&offsets[user][period])) {
            *t = b + cfg.situation_effect * w;
        }
        let shift = cfg.click_bias + cfg.situation_effect * PERIOD_ENGAGEMENT[period];
        for (p, &item) in probs.iter_mut().zip(&items) {
            *p = logistic(crate::numeric::dot(&taste, &item_vecs[item]) + shift);
        }

        let mut labels = vec![0u8; m];
        let mut mixed = false;
        for _ in 0..LABEL_RETRIES {
            for (l, &p) in labels.iter_mut().zip(&probs) {
                *l = u8::from(rng.random::<f64>() < p);
            }
            let pos = labels.iter().filter(|&&l| l == 1).count();
            if pos > 0 && pos < m {
                mixed = true;
                break;
            }
        }
        if !mixed {
            // Unsatisfied after the retries: flip the most extreme candidate.
            let all_positive = labels[0] == 1;
            let pick = (0..m)
                .reduce(|a, b| {
                    let better = if all_positive {
                        probs[b] < probs[a]
                    } else {
                        probs[b] > probs[a]
                    };
                    if better {
                        b
                    } else {
                        a
                    }
                })
                .unwrap_or(0);
            labels[pick] ^= 1;
        }

        lists.push(ImpressionList {
            list_id,
            user_id: user as u32,
            timestamp,
            candidates: items
                .iter()
                .zip(&labels)
                .map(|(&item_id, &label)| Candidate {
                    item_id: item_id as u32,
                    label,
                })
                .collect(),
            situations: time.as_array().to_vec(),
        });
    }

    let mut vocab: BTreeMap<String, u32> = BTreeMap::new();
    vocab.insert(USER_ID.to_string(), cfg.n_users);
    vocab.insert(ITEM_ID.to_string(), cfg.n_items);
    vocab.insert("user_cluster".to_string(), ATTRIBUTE_BUCKETS);
    vocab.insert("item_cluster".to_string(), ATTRIBUTE_BUCKETS);
    for (name, size) in TIME_SITUATION_FIELDS {
        vocab.insert(name.to_string(), size);
    }

    Ok(Dataset {
        users: entity_table("user_cluster", quantile_buckets(&base)),
        items: entity_table("item_cluster", quantile_buckets(&item_vecs)),
        lists,
        vocab,
        situation_fields: TIME_SITUATION_FIELDS
            .iter()
            .map(|(n, _)| n.to_string())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(effect: f64, n_lists: u32) -> GeneratorConfig {
        GeneratorConfig {
            n_users: 500,
            n_items: 1_000,
            n_lists,
            situation_effect: effect,
            seed: 11,
            ..GeneratorConfig::default()
        }
    }

    fn period_rates(d: &Dataset) -> ([f64; 4], [f64; 4]) {
        let mut clicks = [0.0; 4];
        let mut shown = [0.0; 4];
        for l in &d.lists {
            let p = l.situations[2] as usize;
            clicks[p] += l.positives() as f64;
            shown[p] += l.len() as f64;
        }
        (clicks, shown)
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(&cfg(2.0, 300)).unwrap();
        let b = generate_synthetic(&cfg(2.0, 300)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&GeneratorConfig { seed: 12, ..cfg(2.0, 300) }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_list_has_both_classes() {
        let d = generate_synthetic(&GeneratorConfig { click_bias: -4.0, ..cfg(2.0, 2_000) }).unwrap();
        for l in &d.lists {
            let pos = l.positives();
            assert!(pos >= 1 && pos < l.len());
        }
        d.validate().unwrap();
    }

    #[test]
    fn no_effect_means_period_independent_clicks() {
        // Pearson chi-square on the 4x2 (period, label) table, df = 3.
        let d = generate_synthetic(&cfg(0.0, 20_000)).unwrap();
        let (clicks, shown) = period_rates(&d);
        let total_clicks: f64 = clicks.iter().sum();
        let total: f64 = shown.iter().sum();
        let rate = total_clicks / total;
        let mut chi2 = 0.0;
        for p in 0..4 {
            let e1 = shown[p] * rate;
            let e0 = shown[p] * (1.0 - rate);
            chi2 += (clicks[p] - e1).powi(2) / e1;
            chi2 += ((shown[p] - clicks[p]) - e0).powi(2) / e0;
        }
        // chi-square(3) upper 1% point
        assert!(chi2 < 11.345, "chi2 = {chi2}");
    }

    #[test]
    fn strong_effect_spreads_period_click_rates() {
        let d = generate_synthetic(&cfg(2.0, 20_000)).unwrap();
        let (clicks, shown) = period_rates(&d);
        let rates: Vec<f64> = (0..4).map(|p| clicks[p] / shown[p]).collect();
        let hi = rates.iter().copied().fold(f64::MIN, f64::max);
        let lo = rates.iter().copied().fold(f64::MAX, f64::min);
        assert!(hi - lo > 0.05, "rates {rates:?}");
    }

    #[test]
    fn impossible_config_rejected() {
        assert!(generate_synthetic(&GeneratorConfig { list_len: 20, n_items: 10, ..cfg(0.0, 5) }).is_err());
        assert!(generate_synthetic(&GeneratorConfig { list_len: 1, ..cfg(0.0, 5) }).is_err());
        assert!(generate_synthetic(&GeneratorConfig { n_lists: 0, ..cfg(0.0, 5) }).is_err());
    }
}
