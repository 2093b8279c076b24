//! Impression-list datasets.

mod generate;
mod history;
mod split;
mod time;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate_synthetic, GeneratorConfig, PERIOD_ENGAGEMENT};
pub use history::HistoryIndex;
pub use split::{split_lists, SplitIndices};
pub use time::{derive_time_situations, TimeSituations, TIME_SITUATION_FIELDS};

pub const USER_ID: &str = "user_id";
pub const ITEM_ID: &str = "item_id";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub item_id: u32,
    pub label: u8,
}

impl Candidate {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// One ranking instance: the items shown to a user at one moment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionList {
    pub list_id: u64,
    pub user_id: u32,
    pub timestamp: i64,
    pub candidates: Vec<Candidate>,
    /// Category index per situation field, in the dataset's field order.
    pub situations: Vec<u32>,
}

impl ImpressionList {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.candidates.iter().filter(|c| c.is_positive()).count()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.candidates.iter().map(|c| c.label).collect()
    }
}

/// Categorical attributes of users or items.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTable {
    pub fields: Vec<String>,
    /// id -> category index per field, aligned with `fields`.
    pub rows: BTreeMap<u32, Vec<u32>>,
}

impl EntityTable {
    pub fn attributes(&self, id: u32) -> Option<&[u32]> {
        self.rows.get(&id).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub users: EntityTable,
    pub items: EntityTable,
    pub lists: Vec<ImpressionList>,
    /// Category count for every categorical field, ids included.
    pub vocab: BTreeMap<String, u32>,
    pub situation_fields: Vec<String>,
}

impl Dataset {
    pub fn vocab_size(&self, field: &str) -> Result<u32> {
        self.vocab
            .get(field)
            .copied()
            .ok_or_else(|| Error::Data(format!("no vocabulary for field `{field}`")))
    }

    pub fn n_users(&self) -> u32 {
        self.vocab.get(USER_ID).copied().unwrap_or(0)
    }

    pub fn n_items(&self) -> u32 {
        self.vocab.get(ITEM_ID).copied().unwrap_or(0)
    }

    /// (field, vocabulary size) pairs in declaration order.
    pub fn field_sizes(&self, fields: &[String]) -> Result<Vec<(String, u32)>> {
        fields
            .iter()
            .map(|f| Ok((f.clone(), self.vocab_size(f)?)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n_users = self.vocab_size(USER_ID)?;
        let n_items = self.vocab_size(ITEM_ID)?;
        check_entities("user", &self.users, n_users, &self.vocab)?;
        check_entities("item", &self.items, n_items, &self.vocab)?;
        let sit_sizes = self.field_sizes(&self.situation_fields)?;
        for list in &self.lists {
            validate_list(list, self, &sit_sizes)?;
        }
        Ok(())
    }
}

fn check_entities(
    kind: &str,
    table: &EntityTable,
    n_ids: u32,
    vocab: &BTreeMap<String, u32>,
) -> Result<()> {
    let sizes: Vec<u32> = table
        .fields
        .iter()
        .map(|f| {
            vocab
                .get(f)
                .copied()
                .ok_or_else(|| Error::Data(format!("no vocabulary for {kind} field `{f}`")))
        })
        .collect::<Result<_>>()?;
    for (&id, attrs) in &table.rows {
        if id >= n_ids {
            return Err(Error::Data(format!(
                "{kind} id {id} outside vocabulary of {n_ids}"
            )));
        }
        if attrs.len() != sizes.len() {
            return Err(Error::Data(format!(
                "{kind} {id} has {} attributes, expected {}",
                attrs.len(),
                sizes.len()
            )));
        }
        for ((field, &v), &size) in table.fields.iter().zip(attrs).zip(&sizes) {
            if v >= size {
                return Err(Error::Data(format!(
                    "{kind} {id}: {field}={v} outside vocabulary of {size}"
                )));
            }
        }
    }
    Ok(())
}

/// Checks one list against the dataset's schema. Errors name the list id.
pub fn validate_list(
    list: &ImpressionList,
    dataset: &Dataset,
    situation_sizes: &[(String, u32)],
) -> Result<()> {
    let id = list.list_id;
    if !dataset.users.rows.contains_key(&list.user_id) {
        return Err(Error::Data(format!(
            "list {id}: unknown user id {}",
            list.user_id
        )));
    }
    let pos = list.positives();
    if pos == 0 || pos == list.len() {
        return Err(Error::Data(format!(
            "list {id}: needs at least one positive and one negative label"
        )));
    }
    let mut seen = alloc::collections::BTreeSet::new();
    for c in &list.candidates {
        if c.label > 1 {
            return Err(Error::Data(format!("list {id}: label {} not 0/1", c.label)));
        }
        if !dataset.items.rows.contains_key(&c.item_id) {
            return Err(Error::Data(format!(
                "list {id}: unknown item id {}",
                c.item_id
            )));
        }
        if !seen.insert(c.item_id) {
            return Err(Error::Data(format!(
                "list {id}: duplicate item id {}",
                c.item_id
            )));
        }
    }
    if list.situations.len() != situation_sizes.len() {
        return Err(Error::Data(format!(
            "list {id}: {} situation values for {} fields",
            list.situations.len(),
            situation_sizes.len()
        )));
    }
    for (&v, (field, size)) in list.situations.iter().zip(situation_sizes) {
        if v >= *size {
            return Err(Error::Data(format!(
                "list {id}: {field}={v} outside vocabulary of {size}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        generate_synthetic(&GeneratorConfig {
            n_users: 5,
            n_items: 12,
            n_lists: 20,
            list_len: 4,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn generated_dataset_validates() {
        tiny().validate().unwrap();
    }

    #[test]
    fn single_class_list_rejected_by_id() {
        let mut d = tiny();
        d.lists[3].candidates.iter_mut().for_each(|c| c.label = 1);
        let err = d.validate().unwrap_err();
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains(&format!("list {}", d.lists[3].list_id)), "{msg}");
    }

    #[test]
    fn unknown_item_rejected() {
        let mut d = tiny();
        d.lists[0].candidates[0].item_id = 999;
        assert!(d.validate().is_err());
    }

    #[test]
    fn situation_out_of_vocab_rejected() {
        let mut d = tiny();
        d.lists[0].situations[0] = 24;
        assert!(d.validate().is_err());
    }
}
