use alloc::vec::Vec;

use crate::numeric::{Tape, Var};

/// Pre-reduced group of factorization machine features: the vector sum,
/// the summed squared norms and the summed first-order weights.
#[derive(Debug, Clone, Copy)]
pub struct FmBlock {
    sum: Var,
    sq_norms: Var,
    linear: Option<Var>,
}

impl FmBlock {
    pub fn new(tape: &mut Tape, vectors: &[Var], weights: &[Var]) -> Self {
        assert!(!vectors.is_empty(), "fm block needs at least one feature");
        let sum = if vectors.len() == 1 {
            vectors[0]
        } else {
            tape.sum_n(vectors)
        };
        let norms: Vec<Var> = vectors.iter().map(|&v| tape.dot(v, v)).collect();
        let sq_norms = if norms.len() == 1 {
            norms[0]
        } else {
            tape.sum_n(&norms)
        };
        let linear = match weights.len() {
            0 => None,
            1 => Some(weights[0]),
            _ => Some(tape.sum_n(weights)),
        };
        Self {
            sum,
            sq_norms,
            linear,
        }
    }
}

/// `bias + Σ w_f + ½(‖Σ v_f‖² − Σ ‖v_f‖²)` over features split into blocks.
pub fn fm_score_blocks(tape: &mut Tape, blocks: &[FmBlock], bias: Var) -> Var {
    let sums: Vec<Var> = blocks.iter().map(|b| b.sum).collect();
    let total = if sums.len() == 1 { sums[0] } else { tape.sum_n(&sums) };
    let sq_total = tape.dot(total, total);
    let norms: Vec<Var> = blocks.iter().map(|b| b.sq_norms).collect();
    let norms = if norms.len() == 1 { norms[0] } else { tape.sum_n(&norms) };
    let pairwise = tape.sub(sq_total, norms);
    let half = tape.scale(pairwise, 0.5);
    let mut terms: Vec<Var> = blocks.iter().filter_map(|b| b.linear).collect();
    terms.push(half);
    terms.push(bias);
    tape.sum_n(&terms)
}

/// Factorization machine score over one flat feature list.
pub fn fm_score(tape: &mut Tape, vectors: &[Var], first_order: &[Var], bias: Var) -> Var {
    let block = FmBlock::new(tape, vectors, first_order);
    fm_score_blocks(tape, &[block], bias)
}

/// `⟨u + h, i⟩ + biases`, with `biases` already summed.
pub fn idmf_score(tape: &mut Tape, user: Var, item: Var, history: Option<Var>, biases: Var) -> Var {
    let query = match history {
        Some(h) => tape.add(user, h),
        None => user,
    };
    let d = tape.dot(query, item);
    tape.add(d, biases)
}
