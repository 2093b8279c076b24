//! Per-list objectives.

use alloc::vec::Vec;

use super::fusion::PROB_FLOOR;
use crate::error::{Error, Result};
use crate::numeric::{Tape, Var};

fn split_labels(labels: &[u8]) -> Result<(Vec<usize>, Vec<usize>)> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&m| labels[m] == 1);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// `−ln Σ_j Σ_k p⁺_j p⁻_k σ(s_j − s_k)` where `p⁺` and `p⁻` are softmaxes
/// over the positive and negative scores respectively.
pub fn bpr_session_node(tape: &mut Tape, scores: Var, labels: &[u8]) -> Result<Var> {
    if tape.size(scores) != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            found: tape.size(scores),
        });
    }
    let (pos, neg) = split_labels(labels)?;
    let sp = tape.gather(scores, &pos);
    let sn = tape.gather(scores, &neg);
    let wp = tape.softmax(sp)?;
    let wn = tape.softmax(sn)?;
    let pairs = tape.pair_sigmoid(sp, sn);
    let inner = tape.matvec(pairs, wn);
    let total = tape.dot(wp, inner);
    let floored = tape.clamp(total, PROB_FLOOR, 1.0);
    let log = tape.ln(floored);
    Ok(tape.scale(log, -1.0))
}

/// Class-balanced binary cross-entropy of the ranked probabilities.
pub fn ce_constraint_node(tape: &mut Tape, probs: Var, labels: &[u8]) -> Result<Var> {
    if tape.size(probs) != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            found: tape.size(probs),
        });
    }
    let (pos, neg) = split_labels(labels)?;
    let p = tape.clamp(probs, PROB_FLOOR, 1.0 - PROB_FLOOR);
    let pp = tape.gather(p, &pos);
    let pn = tape.gather(p, &neg);
    let lp = tape.ln(pp);
    let sp = tape.sum(lp);
    let mp = tape.scale(sp, -1.0 / pos.len() as f64);
    let qn = tape.affine(pn, -1.0, 1.0);
    let ln = tape.ln(qn);
    let sn = tape.sum(ln);
    let mn = tape.scale(sn, -1.0 / neg.len() as f64);
    Ok(tape.add(mp, mn))
}

pub fn bpr_session_loss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(scores);
    let l = bpr_session_node(&mut tape, s, labels)?;
    Ok(tape.scalar(l))
}

pub fn ce_constraint_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if let Some(&bad) = probs.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Probability(bad));
    }
    let mut tape = Tape::new();
    let p = tape.constant(probs);
    let l = ce_constraint_node(&mut tape, p, labels)?;
    Ok(tape.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bpr_worked_values() {
        let ln2 = core::f64::consts::LN_2;
        assert!((bpr_session_loss(&[0.3; 5], &[1, 0, 1, 0, 0]).unwrap() - ln2).abs() < 1e-12);
        let gap2 = bpr_session_loss(&[2.0, 0.0], &[1, 0]).unwrap();
        assert!((gap2 - libm::log1p(libm::exp(-2.0))).abs() < 1e-12);
        assert!((gap2 - 0.1269).abs() < 1e-4);
        assert!(bpr_session_loss(&[50.0, 50.0, 0.0], &[1, 1, 0]).unwrap() < 1e-9);
    }

    #[test]
    fn single_class_lists_are_rejected() {
        assert!(matches!(bpr_session_loss(&[1.0, 2.0], &[1, 1]), Err(Error::SingleClass)));
        assert!(matches!(ce_constraint_loss(&[0.5, 0.5], &[0, 0]), Err(Error::SingleClass)));
    }

    #[test]
    fn ce_worked_values() {
        let l = ce_constraint_loss(&[0.5; 4], &[0, 1, 0, 0]).unwrap();
        assert!((l - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
        let near = ce_constraint_loss(&[1.0 - 1e-9, 1e-9, 1e-9], &[1, 0, 0]).unwrap();
        assert!(near < 1e-8);
        assert!(matches!(ce_constraint_loss(&[1.0, 0.5], &[1, 0]), Err(Error::Probability(_))));
    }

    proptest! {
        #[test]
        fn bpr_is_shift_invariant_and_nonnegative(
            scores in proptest::collection::vec(-5.0f64..5.0, 4),
            c in -10.0f64..10.0,
        ) {
            let labels = [1, 0, 0, 1];
            let a = bpr_session_loss(&scores, &labels).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let b = bpr_session_loss(&shifted, &labels).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn ce_is_nonnegative(probs in proptest::collection::vec(0.001f64..0.999, 3)) {
            prop_assert!(ce_constraint_loss(&probs, &[0, 1, 0]).unwrap() >= 0.0);
        }
    }
}
