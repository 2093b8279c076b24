//! The situation-aware enhancer branch.
//!
//! User, item and history vectors are projected into a situation space.
//! The preference encoder mixes the outputs of the activation bank applied
//! to the projected item (and history) with weights derived from the
//! projected user. Situation fusion attends from the projected user over
//! the situation embeddings. The branch score is the inner product of the
//! two results.
//!
//! Graph builders (`*_node`) are the single implementation; the slice-level
//! functions wrap them on a throwaway tape.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Ablation, Embedded, Init, Owner, ParamId, ParamStore, Role};
use crate::numeric::{ActivationBank, Tape, Tensor, Var};

pub const PROJECTION_INIT_STD: f64 = 0.01;
pub const CONDITION_INIT_STD: f64 = 0.1;

/// Source of the activation mixing weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conditioner {
    /// `softmax(W_c u_s + b_c)`
    Personal { weight: ParamId, bias: ParamId },
    /// `softmax(g)` shared by every user.
    Global { logits: ParamId },
}

/// Source of the situation attention weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Attention {
    /// `softmax((W_s u_s) Sᵀ / √D)`
    Personal { weight: ParamId },
    /// `softmax(g)` shared by every user.
    Global { logits: ParamId },
}

/// Parameter ids of the enhancer, all owned by the enhancer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SareLayout {
    pub situation_tables: Vec<ParamId>,
    pub w_user: ParamId,
    pub w_item: ParamId,
    pub w_history: Option<ParamId>,
    pub item_condition: Conditioner,
    pub history_condition: Option<Conditioner>,
    pub attention: Attention,
}

impl SareLayout {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        params: &mut ParamStore,
        dim: usize,
        k: usize,
        n_situations: usize,
        with_history: bool,
        ablation: Ablation,
        situation_tables: Vec<ParamId>,
        rng: &mut impl Rng,
    ) -> Self {
        let dense = |params: &mut ParamStore, name: &str, rows: usize, cols: usize, init: Init, rng: &mut _| {
            params.add(name, Owner::Sare, Role::Dense, rows, cols, init, rng)
        };
        let projection = Init::NearIdentity(PROJECTION_INIT_STD);
        let cond = Init::Normal(CONDITION_INIT_STD);
        let w_user = dense(params, "sare.w_user", dim, dim, projection, rng);
        let w_item = dense(params, "sare.w_item", dim, dim, projection, rng);
        let w_history = with_history.then(|| dense(params, "sare.w_history", dim, dim, projection, rng));
        let conditioner = |params: &mut ParamStore, path: &str, rng: &mut _| {
            if ablation.no_ucpe {
                Conditioner::Global {
                    logits: dense(params, &format!("sare.{path}.global_logits"), k, 1, cond, rng),
                }
            } else {
                Conditioner::Personal {
                    weight: dense(params, &format!("sare.{path}.w_condition"), k, dim, cond, rng),
                    bias: dense(params, &format!("sare.{path}.b_condition"), k, 1, cond, rng),
                }
            }
        };
        let item_condition = conditioner(params, "item", rng);
        let history_condition = with_history.then(|| conditioner(params, "history", rng));
        let attention = if ablation.no_psf {
            Attention::Global {
                logits: dense(params, "sare.attention.global_logits", n_situations, 1, cond, rng),
            }
        } else {
            Attention::Personal {
                weight: dense(params, "sare.w_attention", dim, dim, cond, rng),
            }
        };
        Self {
            situation_tables,
            w_user,
            w_item,
            w_history,
            item_condition,
            history_condition,
            attention,
        }
    }
}

/// Non-embedding enhancer weights: projections, attention and one or two
/// conditioners. With history this is `4D² + 2KD + 2K`.
pub fn count_sare_params(dim: usize, k: usize, with_history: bool) -> usize {
    let projections = if with_history { 3 } else { 2 };
    let conditioners = if with_history { 2 } else { 1 };
    projections * dim * dim + dim * dim + conditioners * k * (dim + 1)
}

pub fn project_node(tape: &mut Tape, w: Var, x: Var) -> Var {
    tape.matvec(w, x)
}

/// Mixing weights on the activation simplex.
pub fn condition_node(
    tape: &mut Tape,
    params: &ParamStore,
    cond: &Conditioner,
    user_s: Var,
) -> Result<Var> {
    let logits = match *cond {
        Conditioner::Personal { weight, bias } => {
            let w = params.dense_leaf(tape, weight);
            let b = params.dense_leaf(tape, bias);
            let z = tape.matvec(w, user_s);
            tape.add(z, b)
        }
        Conditioner::Global { logits } => params.dense_leaf(tape, logits),
    };
    tape.softmax(logits)
}

/// `Σ_j weights_j · A_j(x)`.
pub fn ucpe_node(tape: &mut Tape, bank: &ActivationBank, weights: Var, x: Var) -> Var {
    tape.mix(bank.functions(), weights, x)
}

/// `(W_s u_s) Sᵀ / √D` for a stacked `N x D` situation matrix.
pub fn attention_logits_node(tape: &mut Tape, w_s: Var, user_s: Var, situations: Var, dim: usize) -> Var {
    let q = tape.matvec(w_s, user_s);
    let raw = tape.matvec(situations, q);
    tape.scale(raw, 1.0 / libm::sqrt(dim as f64))
}

/// Attention weights on the situation simplex and the fused vector `aᵀ S`.
pub fn fuse_node(tape: &mut Tape, logits: Var, situations: Var) -> Result<(Var, Var)> {
    let a = tape.softmax(logits)?;
    let fused = tape.matvec_t(situations, a);
    Ok((a, fused))
}

pub fn psf_node(
    tape: &mut Tape,
    params: &ParamStore,
    attention: &Attention,
    user_s: Var,
    situations: Var,
    dim: usize,
) -> Result<(Var, Var)> {
    let logits = match *attention {
        Attention::Personal { weight } => {
            let w = params.dense_leaf(tape, weight);
            attention_logits_node(tape, w, user_s, situations, dim)
        }
        Attention::Global { logits } => params.dense_leaf(tape, logits),
    };
    fuse_node(tape, logits, situations)
}

/// Column of enhancer scores `⟨p_u(i_m), s_u⟩` over the candidates.
pub fn branch_scores(
    tape: &mut Tape,
    params: &ParamStore,
    layout: &SareLayout,
    bank: &ActivationBank,
    emb: &Embedded,
) -> Result<Var> {
    let dim = tape.size(emb.user);
    let w_user = params.dense_leaf(tape, layout.w_user);
    let user_s = project_node(tape, w_user, emb.user);
    let item_weights = condition_node(tape, params, &layout.item_condition, user_s)?;

    let history_pref = match (emb.history, layout.w_history, &layout.history_condition) {
        (Some(h), Some(w_h), Some(cond)) => {
            let w = params.dense_leaf(tape, w_h);
            let h_s = project_node(tape, w, h);
            let hw = condition_node(tape, params, cond, user_s)?;
            Some(ucpe_node(tape, bank, hw, h_s))
        }
        _ => None,
    };

    let s = tape.stack(&emb.situations);
    let (_, fused) = psf_node(tape, params, &layout.attention, user_s, s, dim)?;

    let w_item = params.dense_leaf(tape, layout.w_item);
    let scores: Vec<Var> = emb
        .items
        .iter()
        .map(|&item| {
            let item_s = project_node(tape, w_item, item);
            let mut pref = ucpe_node(tape, bank, item_weights, item_s);
            if let Some(hp) = history_pref {
                pref = tape.add(pref, hp);
            }
            tape.dot(pref, fused)
        })
        .collect();
    Ok(tape.stack(&scores))
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}

fn square_dim(w: &Tensor) -> Result<usize> {
    let (r, c) = w.dims();
    check_len(r, c)?;
    Ok(r)
}

/// `W x` for a square projection.
pub fn project(w: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    check_len(square_dim(w)?, x.len())?;
    let mut tape = Tape::new();
    let wv = tape.constant_matrix(w.values(), w.dims().0);
    let xv = tape.constant(x);
    let out = project_node(&mut tape, wv, xv);
    Ok(tape.value(out).to_vec())
}

/// Mixing weights `softmax(W_c u_s + b_c)` for a `K x D` conditioner.
pub fn ucpe_weights(user_s: &[f64], w_c: &Tensor, b_c: &[f64]) -> Result<Vec<f64>> {
    let (k, d) = w_c.dims();
    check_len(d, user_s.len())?;
    check_len(k, b_c.len())?;
    let mut tape = Tape::new();
    let w = tape.constant_matrix(w_c.values(), k);
    let b = tape.constant(b_c);
    let u = tape.constant(user_s);
    let z = tape.matvec(w, u);
    let logits = tape.add(z, b);
    let out = tape.softmax(logits)?;
    Ok(tape.value(out).to_vec())
}

/// User-conditioned preference encoding of `x_s`.
pub fn ucpe(
    bank: &ActivationBank,
    user_s: &[f64],
    x_s: &[f64],
    w_c: &Tensor,
    b_c: &[f64],
) -> Result<Vec<f64>> {
    check_len(user_s.len(), x_s.len())?;
    check_len(bank.len(), w_c.dims().0)?;
    let weights = ucpe_weights(user_s, w_c, b_c)?;
    ucpe_with_weights(bank, &weights, x_s)
}

/// Preference encoding with explicit mixing weights.
pub fn ucpe_with_weights(bank: &ActivationBank, weights: &[f64], x_s: &[f64]) -> Result<Vec<f64>> {
    check_len(bank.len(), weights.len())?;
    let mut tape = Tape::new();
    let w = tape.constant(weights);
    let x = tape.constant(x_s);
    let out = ucpe_node(&mut tape, bank, w, x);
    Ok(tape.value(out).to_vec())
}

/// Attention weights and fused vector for user `u_s` over situation rows.
pub fn psf(user_s: &[f64], situations: &[Vec<f64>], w_s: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    if situations.is_empty() {
        return Err(Error::Empty("situation set"));
    }
    let dim = square_dim(w_s)?;
    check_len(dim, user_s.len())?;
    for s in situations {
        check_len(dim, s.len())?;
    }
    let mut tape = Tape::new();
    let rows: Vec<Var> = situations.iter().map(|s| tape.constant(s)).collect();
    let s = tape.stack(&rows);
    let u = tape.constant(user_s);
    let w = tape.constant_matrix(w_s.values(), dim);
    let logits = attention_logits_node(&mut tape, w, u, s, dim);
    let (a, fused) = fuse_node(&mut tape, logits, s)?;
    Ok((tape.value(a).to_vec(), tape.value(fused).to_vec()))
}

pub fn sare_score(preference: &[f64], situation: &[f64]) -> Result<f64> {
    check_len(preference.len(), situation.len())?;
    Ok(crate::numeric::dot(preference, situation))
}
