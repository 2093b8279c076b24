use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numeric::{ParamKey, Tape, Tensor, Var};

pub type ParamId = usize;

/// Which learning rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Backbone,
    Sare,
}

/// Tables are read row by row; dense parameters are read whole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Table,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub owner: Owner,
    pub role: Role,
    pub value: Tensor,
}

impl Param {
    pub fn rows(&self) -> usize {
        self.value.dims().0
    }

    pub fn cols(&self) -> usize {
        self.value.dims().1
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// How a freshly created parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Normal(f64),
    /// Identity plus gaussian noise; square matrices only.
    NearIdentity(f64),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        owner: Owner,
        role: Role,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let mut values = alloc::vec![0.0; rows * cols];
        match init {
            Init::Zeros => {}
            Init::Normal(std) => {
                let n = Normal::new(0.0, std).expect("finite std");
                values.iter_mut().for_each(|v| *v = n.sample(rng));
            }
            Init::NearIdentity(std) => {
                let n = Normal::new(0.0, std).expect("finite std");
                for r in 0..rows {
                    for c in 0..cols {
                        values[r * cols + c] = n.sample(rng) + if r == c { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        let shape = if cols == 1 && role == Role::Dense {
            alloc::vec![rows]
        } else {
            alloc::vec![rows, cols]
        };
        self.params.push(Param {
            name: name.into(),
            owner,
            role,
            value: Tensor::new(shape, values).expect("shape matches"),
        });
        self.params.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    /// Row `row` of a table as a gradient-tracked leaf.
    pub fn row_leaf(&self, tape: &mut Tape, id: ParamId, row: u32) -> Var {
        let p = &self.params[id];
        tape.param(
            ParamKey {
                param: id,
                row: Some(row),
            },
            p.value.row(row as usize),
            1,
        )
    }

    /// A whole dense parameter as a gradient-tracked leaf.
    pub fn dense_leaf(&self, tape: &mut Tape, id: ParamId) -> Var {
        let p = &self.params[id];
        let rows = if p.value.shape().len() == 2 { p.rows() } else { 1 };
        tape.param(ParamKey { param: id, row: None }, p.value.values(), rows)
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.value.values().to_vec()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            p.value.values_mut().copy_from_slice(s);
        }
    }
}
