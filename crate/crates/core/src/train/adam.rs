//! Adam with per-owner learning rates and row-sparse table updates.
//!
//! Table parameters only update rows that received a gradient since the
//! last step; their moments stay untouched otherwise. Dense parameters
//! update whenever they appeared on the tape. Bias correction uses the
//! global step count.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{Owner, ParamId, ParamStore, Role};
use crate::numeric::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Step size, L2 coefficient and freeze flag for one owner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSettings {
    pub lr: f64,
    pub weight_decay: f64,
    pub frozen: bool,
}

/// Gradient buffers accumulated over one or more lists.
#[derive(Debug, Clone)]
pub struct Gradients {
    bufs: Vec<Vec<f64>>,
    cols: Vec<usize>,
    rows: Vec<Vec<u32>>,
    marked: Vec<Vec<bool>>,
    dense: Vec<bool>,
    lists: usize,
}

impl Gradients {
    pub fn new(params: &ParamStore) -> Self {
        let n = params.len();
        let mut g = Self {
            bufs: Vec::with_capacity(n),
            cols: Vec::with_capacity(n),
            rows: vec![Vec::new(); n],
            marked: Vec::with_capacity(n),
            dense: vec![false; n],
            lists: 0,
        };
        for p in params.iter() {
            g.bufs.push(vec![0.0; p.len()]);
            g.cols.push(p.cols());
            g.marked.push(match p.role {
                Role::Table => vec![false; p.rows()],
                Role::Dense => Vec::new(),
            });
        }
        g
    }

    /// Adds the parameter gradients of the tape's last backward pass.
    pub fn accumulate(&mut self, tape: &Tape) {
        for (key, grad) in tape.param_grads() {
            let p = key.param;
            match key.row {
                Some(r) => {
                    let c = self.cols[p];
                    let start = r as usize * c;
                    for (dst, g) in self.bufs[p][start..start + c].iter_mut().zip(grad) {
                        *dst += g;
                    }
                    if !self.marked[p][r as usize] {
                        self.marked[p][r as usize] = true;
                        self.rows[p].push(r);
                    }
                }
                None => {
                    for (dst, g) in self.bufs[p].iter_mut().zip(grad) {
                        *dst += g;
                    }
                    self.dense[p] = true;
                }
            }
        }
        self.lists += 1;
    }

    pub fn lists(&self) -> usize {
        self.lists
    }

    /// Whether any entry of parameter `id` received a gradient.
    pub fn touched(&self, id: ParamId) -> bool {
        self.dense[id] || !self.rows[id].is_empty()
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.bufs[id]
    }

    pub fn clear(&mut self) {
        for p in 0..self.bufs.len() {
            let c = self.cols[p];
            for &r in &self.rows[p] {
                let start = r as usize * c;
                self.bufs[p][start..start + c].fill(0.0);
                self.marked[p][r as usize] = false;
            }
            self.rows[p].clear();
            if self.dense[p] {
                self.bufs[p].fill(0.0);
                self.dense[p] = false;
            }
        }
        self.lists = 0;
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Scalar weights holding optimizer state.
    pub fn registered(&self) -> usize {
        self.m.iter().map(Vec::len).sum()
    }

    /// Applies the mean of the accumulated gradients.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, settings: impl Fn(Owner) -> GroupSettings) {
        if grads.lists == 0 {
            return;
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        let inv_lists = 1.0 / grads.lists as f64;
        for id in 0..params.len() {
            if !grads.touched(id) {
                continue;
            }
            let param = params.get_mut(id);
            let group = settings(param.owner);
            if group.frozen {
                continue;
            }
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            let g = &grads.bufs[id];
            let theta = param.value.values_mut();
            let mut update = |i: usize| {
                let gi = g[i] * inv_lists + group.weight_decay * theta[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                theta[i] -= group.lr * mhat / (libm::sqrt(vhat) + eps);
            };
            if grads.dense[id] {
                (0..g.len()).for_each(&mut update);
            } else {
                let c = grads.cols[id];
                for &r in &grads.rows[id] {
                    let start = r as usize * c;
                    (start..start + c).for_each(&mut update);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        s.add("table", Owner::Backbone, Role::Table, 3, 2, Init::Zeros, &mut rng);
        s.add("dense", Owner::Sare, Role::Dense, 2, 1, Init::Zeros, &mut rng);
        s
    }

    fn plain(lr: f64) -> impl Fn(Owner) -> GroupSettings {
        move |_| GroupSettings {
            lr,
            weight_decay: 0.0,
            frozen: false,
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = store();
        let mut grads = Gradients::new(&params);
        let mut tape = Tape::new();
        let row = params.row_leaf(&mut tape, 0, 1);
        let s = tape.sum(row);
        tape.backward(s).unwrap();
        grads.accumulate(&tape);
        let mut adam = Adam::new(&params, AdamConfig::default());
        adam.step(&mut params, &grads, plain(0.01));
        let v = params.get(0).value.values();
        assert_eq!(&v[0..2], &[0.0, 0.0]);
        assert_eq!(&v[4..6], &[0.0, 0.0]);
        for x in &v[2..4] {
            assert!((x + 0.01).abs() < 1e-9);
        }
        assert!(params.get(1).value.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn frozen_groups_do_not_move() {
        let mut params = store();
        let mut grads = Gradients::new(&params);
        let mut tape = Tape::new();
        let row = params.row_leaf(&mut tape, 0, 0);
        let d = params.dense_leaf(&mut tape, 1);
        let a = tape.sum(row);
        let b = tape.sum(d);
        let s = tape.add(a, b);
        tape.backward(s).unwrap();
        grads.accumulate(&tape);
        let before = params.snapshot();
        let mut adam = Adam::new(&params, AdamConfig::default());
        adam.step(&mut params, &grads, |o| GroupSettings {
            lr: 0.1,
            weight_decay: 0.0,
            frozen: o == Owner::Backbone,
        });
        assert_eq!(params.get(0).value.values(), &before[0][..]);
        assert_ne!(params.get(1).value.values(), &before[1][..]);
    }

    #[test]
    fn clear_resets_buffers() {
        let params = store();
        let mut grads = Gradients::new(&params);
        let mut tape = Tape::new();
        let row = params.row_leaf(&mut tape, 0, 2);
        let s = tape.sum(row);
        tape.backward(s).unwrap();
        grads.accumulate(&tape);
        grads.accumulate(&tape);
        assert_eq!(grads.values(0)[4], 2.0);
        grads.clear();
        assert!(!grads.touched(0));
        assert!(grads.values(0).iter().all(|&x| x == 0.0));
        assert_eq!(grads.lists(), 0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut params = store();
        let mut grads = Gradients::new(&params);
        let mut adam = Adam::new(&params, AdamConfig::default());
        let mut tape = Tape::new();
        for _ in 0..2000 {
            tape.clear();
            let d = params.dense_leaf(&mut tape, 1);
            let target = tape.constant(&[1.5, -0.5]);
            let diff = tape.sub(d, target);
            let sq = tape.dot(diff, diff);
            tape.backward(sq).unwrap();
            grads.clear();
            grads.accumulate(&tape);
            adam.step(&mut params, &grads, plain(0.01));
        }
        let v = params.get(1).value.values();
        assert!((v[0] - 1.5).abs() < 1e-3 && (v[1] + 0.5).abs() < 1e-3);
    }
}
