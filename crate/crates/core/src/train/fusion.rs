//! Per-list probabilities, branch confidence and the weighted harmonic mean.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numeric::{Tape, Var};

/// Lower bound applied to every probability before reciprocals and logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Softmax over the candidate list, floored at [`PROB_FLOOR`].
pub fn scores_to_probs_node(tape: &mut Tape, scores: Var) -> Result<Var> {
    let m = tape.size(scores);
    if m < 2 {
        return Err(Error::Data(alloc::format!(
            "a candidate list needs at least 2 scores, got {m}"
        )));
    }
    let p = tape.softmax(scores)?;
    Ok(tape.clamp(p, PROB_FLOOR, 1.0))
}

/// `1 − 1 / (max_j p_j + 1)`
pub fn confidence_node(tape: &mut Tape, probs: Var) -> Var {
    let m = tape.max(probs);
    let shifted = tape.affine(m, 1.0, 1.0);
    let inv = tape.recip(shifted);
    tape.affine(inv, -1.0, 1.0)
}

/// `(c_b + c_s) / (c_b / p_b + c_s / p_s)` elementwise for scalar weights.
pub fn weighted_harmonic_node(tape: &mut Tape, p_backbone: Var, p_sare: Var, c_b: Var, c_s: Var) -> Var {
    let inv_b = tape.recip(p_backbone);
    let inv_s = tape.recip(p_sare);
    let num = tape.add(c_b, c_s);
    let wb = tape.mul_scalar(inv_b, c_b);
    let ws = tape.mul_scalar(inv_s, c_s);
    let den = tape.add(wb, ws);
    let inv = tape.recip(den);
    tape.mul_scalar(inv, num)
}

/// Weighted harmonic mean with each branch's confidence as its weight;
/// with `use_confidence = false` both weights are 1.
pub fn combine_node(tape: &mut Tape, p_backbone: Var, p_sare: Var, use_confidence: bool) -> Var {
    if use_confidence {
        let c_b = confidence_node(tape, p_backbone);
        let c_s = confidence_node(tape, p_sare);
        weighted_harmonic_node(tape, p_backbone, p_sare, c_b, c_s)
    } else {
        let inv_b = tape.recip(p_backbone);
        let inv_s = tape.recip(p_sare);
        let den = tape.add(inv_b, inv_s);
        let inv = tape.recip(den);
        tape.scale(inv, 2.0)
    }
}

pub fn scores_to_probs(scores: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let s = tape.constant(scores);
    let p = scores_to_probs_node(&mut tape, s)?;
    Ok(tape.value(p).to_vec())
}

pub fn confidence(probs: &[f64]) -> f64 {
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    1.0 - 1.0 / (max + 1.0)
}

fn check_pair(p_backbone: &[f64], p_sare: &[f64]) -> Result<()> {
    if p_backbone.len() != p_sare.len() {
        return Err(Error::Dimension {
            expected: p_backbone.len(),
            found: p_sare.len(),
        });
    }
    if let Some(&bad) = p_backbone.iter().chain(p_sare).find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::Probability(bad));
    }
    Ok(())
}

pub fn combine(p_backbone: &[f64], p_sare: &[f64], use_confidence: bool) -> Result<Vec<f64>> {
    check_pair(p_backbone, p_sare)?;
    let mut tape = Tape::new();
    let b = tape.constant(p_backbone);
    let s = tape.constant(p_sare);
    let out = combine_node(&mut tape, b, s, use_confidence);
    Ok(tape.value(out).to_vec())
}

/// The harmonic mean under explicit, positive branch weights.
pub fn weighted_harmonic(p_backbone: &[f64], p_sare: &[f64], c_b: f64, c_s: f64) -> Result<Vec<f64>> {
    check_pair(p_backbone, p_sare)?;
    if !(c_b > 0.0 && c_s > 0.0 && c_b.is_finite() && c_s.is_finite()) {
        return Err(Error::Config(alloc::format!("branch weights must be positive, got {c_b} and {c_s}")));
    }
    let mut tape = Tape::new();
    let b = tape.constant(p_backbone);
    let s = tape.constant(p_sare);
    let cb = tape.constant(&[c_b]);
    let cs = tape.constant(&[c_s]);
    let out = weighted_harmonic_node(&mut tape, b, s, cb, cs);
    Ok(tape.value(out).to_vec())
}
