//! Dataset files: `manifest.json`, `impressions.tsv`, `users.tsv`, `items.tsv`.
//!
//! Impression lines hold `list_id`, `user_id`, `timestamp`, one column per
//! situation field in manifest order, then `item:label` tokens separated by
//! commas. Entity lines hold the id followed by `field=category` tokens.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sare_core::data::{validate_list, Candidate, Dataset, EntityTable, ImpressionList, ITEM_ID, USER_ID};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMPRESSIONS_FILE: &str = "impressions.tsv";
pub const USERS_FILE: &str = "users.tsv";
pub const ITEMS_FILE: &str = "items.tsv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub situation_fields: Vec<String>,
    pub vocab: BTreeMap<String, u32>,
}

/// Error located at one line of one file.
fn at(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}:{line}: {msg}", path.display()))
}

fn parse<T: FromStr>(tok: &str, what: &str, path: &Path, line: usize) -> Result<T> {
    tok.parse()
        .map_err(|_| at(path, line, format!("cannot parse {what} from `{tok}`")))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(Error::io(path))
}

/// Non-empty lines with their 1-based numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.is_empty())
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn load_entities(path: &Path, id_field: &str, vocab: &BTreeMap<String, u32>) -> Result<EntityTable> {
    let text = read(path)?;
    let n_ids = *vocab
        .get(id_field)
        .ok_or_else(|| Error::Data(format!("manifest has no vocabulary for `{id_field}`")))?;
    let mut table = EntityTable::default();
    let mut first = true;
    for (no, line) in lines(&text) {
        let mut cols = line.split('\t');
        let id: u32 = parse(cols.next().unwrap_or(""), "id", path, no)?;
        if id >= n_ids {
            return Err(at(path, no, format!("id {id} outside vocabulary of {n_ids}")));
        }
        let mut names = Vec::new();
        let mut values = Vec::new();
        for tok in cols {
            let (field, v) = tok
                .split_once('=')
                .ok_or_else(|| at(path, no, format!("expected field=category, found `{tok}`")))?;
            let size = *vocab
                .get(field)
                .ok_or_else(|| at(path, no, format!("field `{field}` missing from manifest vocabulary")))?;
            let v: u32 = parse(v, field, path, no)?;
            if v >= size {
                return Err(at(path, no, format!("{field}={v} outside vocabulary of {size}")));
            }
            names.push(field.to_string());
            values.push(v);
        }
        if first {
            table.fields = names;
            first = false;
        } else if names != table.fields {
            return Err(at(
                path,
                no,
                format!("fields [{}] differ from [{}] on earlier lines", names.join(", "), table.fields.join(", ")),
            ));
        }
        if table.rows.insert(id, values).is_some() {
            return Err(at(path, no, format!("duplicate id {id}")));
        }
    }
    Ok(table)
}

fn parse_list(
    path: &Path,
    no: usize,
    line: &str,
    dataset: &Dataset,
    sit_sizes: &[(String, u32)],
) -> Result<ImpressionList> {
    let cols: Vec<&str> = line.split('\t').collect();
    let n_sit = dataset.situation_fields.len();
    let expected = 4 + n_sit;
    if cols.len() < expected {
        return Err(at(
            path,
            no,
            format!(
                "missing situation column: expected {expected} columns (list_id, user_id, timestamp, {}, candidates), found {}",
                dataset.situation_fields.join(", "),
                cols.len()
            ),
        ));
    }
    if cols.len() > expected {
        return Err(at(path, no, format!("expected {expected} columns, found {}", cols.len())));
    }
    let list_id: u64 = parse(cols[0], "list_id", path, no)?;
    let user_id: u32 = parse(cols[1], "user_id", path, no)?;
    let timestamp: i64 = parse(cols[2], "timestamp", path, no)?;
    if !dataset.users.rows.contains_key(&user_id) {
        return Err(at(path, no, format!("list {list_id}: unknown user id {user_id}")));
    }
    let situations = cols[3..3 + n_sit]
        .iter()
        .zip(&dataset.situation_fields)
        .map(|(tok, f)| parse(tok, f, path, no))
        .collect::<Result<Vec<u32>>>()?;
    let mut candidates = Vec::new();
    for tok in cols[3 + n_sit].split(',') {
        let (item, label) = tok
            .split_once(':')
            .ok_or_else(|| at(path, no, format!("expected item:label, found `{tok}`")))?;
        let item_id: u32 = parse(item, "item id", path, no)?;
        let label: u8 = parse(label, "label", path, no)?;
        if label > 1 {
            return Err(at(path, no, format!("list {list_id}: label {label} outside {{0, 1}}")));
        }
        if !dataset.items.rows.contains_key(&item_id) {
            return Err(at(path, no, format!("list {list_id}: unknown item id {item_id}")));
        }
        candidates.push(Candidate { item_id, label });
    }
    let list = ImpressionList {
        list_id,
        user_id,
        timestamp,
        candidates,
        situations,
    };
    validate_list(&list, dataset, sit_sizes).map_err(|e| at(path, no, e))?;
    Ok(list)
}

/// Reads and fully validates a dataset.
pub fn load_dataset(impressions: &Path, users: &Path, items: &Path, manifest: &Path) -> Result<Dataset> {
    let m = load_manifest(manifest)?;
    let mut dataset = Dataset {
        users: load_entities(users, USER_ID, &m.vocab)?,
        items: load_entities(items, ITEM_ID, &m.vocab)?,
        lists: Vec::new(),
        vocab: m.vocab,
        situation_fields: m.situation_fields,
    };
    let sit_sizes = dataset
        .field_sizes(&dataset.situation_fields)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest.display())))?;
    let text = read(impressions)?;
    let mut seen = BTreeSet::new();
    let mut lists = Vec::new();
    for (no, line) in lines(&text) {
        let list = parse_list(impressions, no, line, &dataset, &sit_sizes)?;
        if !seen.insert(list.list_id) {
            return Err(at(impressions, no, format!("duplicate list id {}", list.list_id)));
        }
        lists.push(list);
    }
    dataset.lists = lists;
    dataset.validate()?;
    Ok(dataset)
}

/// Loads the four standard files from one directory.
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    load_dataset(
        &dir.join(IMPRESSIONS_FILE),
        &dir.join(USERS_FILE),
        &dir.join(ITEMS_FILE),
        &dir.join(MANIFEST_FILE),
    )
}

fn entity_text(table: &EntityTable) -> String {
    let mut out = String::new();
    for (id, attrs) in &table.rows {
        write!(out, "{id}").unwrap();
        for (f, v) in table.fields.iter().zip(attrs) {
            write!(out, "\t{f}={v}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn impressions_text(lists: &[ImpressionList]) -> String {
    let mut out = String::new();
    for l in lists {
        write!(out, "{}\t{}\t{}", l.list_id, l.user_id, l.timestamp).unwrap();
        for s in &l.situations {
            write!(out, "\t{s}").unwrap();
        }
        out.push('\t');
        for (i, c) in l.candidates.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{}:{}", c.item_id, c.label).unwrap();
        }
        out.push('\n');
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(Error::io(path))
}

/// Writes the four dataset files into `dir`, creating it if needed.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let manifest = Manifest {
        situation_fields: dataset.situation_fields.clone(),
        vocab: dataset.vocab.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&dir.join(MANIFEST_FILE), &(json + "\n"))?;
    write(&dir.join(USERS_FILE), &entity_text(&dataset.users))?;
    write(&dir.join(ITEMS_FILE), &entity_text(&dataset.items))?;
    write(&dir.join(IMPRESSIONS_FILE), &impressions_text(&dataset.lists))
}
