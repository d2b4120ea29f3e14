//! Huber TD loss and the imitation losses applied to one row of Q values.
//!
//! Every row loss returns the scalar loss and its gradient with respect to
//! each entry of the row. Masked (infeasible) actions are expected to be
//! removed from the row before these functions are called; see
//! [`masked_row_loss`].

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("non-finite input to loss")]
    NonFinite,
    #[error("expert action {expert} outside row of width {width}")]
    ExpertOutOfRange { expert: usize, width: usize },
    #[error("no feasible actions in row")]
    EmptyRow,
    #[error("expert action {0} is masked")]
    ExpertMasked(usize),
}

/// Constant-offset margin `l(ae, a)`: 0 on the expert action, `l` elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginFn {
    pub margin: f64,
}

impl MarginFn {
    pub fn new(margin: f64) -> Self {
        assert!(margin >= 0.0, "margin must be non-negative");
        Self { margin }
    }

    pub fn eval(&self, expert: usize, action: usize) -> f64 {
        if action == expert {
            0.0
        } else {
            self.margin
        }
    }
}

impl Default for MarginFn {
    fn default() -> Self {
        Self { margin: 0.1 }
    }
}

/// Scalar loss plus gradient over the row it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct RowLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Huber loss with transition point 1. Returns `(loss, d loss / d q_pred)`.
pub fn td_loss(q_pred: f64, y: f64) -> Result<(f64, f64), LossError> {
    if !q_pred.is_finite() || !y.is_finite() {
        return Err(LossError::NonFinite);
    }
    let d = q_pred - y;
    if d.abs() <= 1.0 {
        Ok((0.5 * d * d, d))
    } else {
        Ok((d.abs() - 0.5, d.signum()))
    }
}

fn check_row(q_row: &[f64], expert: usize) -> Result<(), LossError> {
    if q_row.is_empty() {
        return Err(LossError::EmptyRow);
    }
    if expert >= q_row.len() {
        return Err(LossError::ExpertOutOfRange { expert, width: q_row.len() });
    }
    if q_row.iter().any(|q| !q.is_finite()) {
        return Err(LossError::NonFinite);
    }
    Ok(())
}

/// Indices of actions whose value exceeds the expert value minus the margin.
///
/// The inequality is strict and the expert never qualifies.
pub fn violation_set(q_row: &[f64], expert: usize, margin: MarginFn) -> Vec<usize> {
    let qe = q_row[expert];
    (0..q_row.len()).filter(|&a| q_row[a] > qe - margin.eval(expert, a)).collect()
}

/// Strict large-margin loss: the mean margin violation over every action in
/// the violation set, zero when the set is empty.
pub fn slm_loss(q_row: &[f64], expert: usize, margin: MarginFn) -> Result<RowLoss, LossError> {
    check_row(q_row, expert)?;
    let set = violation_set(q_row, expert, margin);
    let mut grad = vec![0.0; q_row.len()];
    if set.is_empty() {
        return Ok(RowLoss { loss: 0.0, grad });
    }
    let n = set.len() as f64;
    let qe = q_row[expert];
    let mut total = 0.0;
    for &a in &set {
        total += q_row[a] + margin.eval(expert, a) - qe;
        grad[a] += 1.0 / n;
    }
    grad[expert] -= 1.0;
    Ok(RowLoss { loss: total / n, grad })
}

/// DQfD large-margin loss `max_a [Q(a) + l(ae, a)] - Q(ae)`.
pub fn lm_loss(q_row: &[f64], expert: usize, margin: MarginFn) -> Result<RowLoss, LossError> {
    check_row(q_row, expert)?;
    let augmented: Vec<f64> = q_row.iter().enumerate().map(|(a, &q)| q + margin.eval(expert, a)).collect();
    let best = crate::argmax_masked(&augmented, None).ok_or(LossError::EmptyRow)?;
    let mut grad = vec![0.0; q_row.len()];
    grad[best] += 1.0;
    grad[expert] -= 1.0;
    Ok(RowLoss { loss: augmented[best] - q_row[expert], grad })
}

/// Cross-entropy of `softmax(beta * q_row)` against the expert one-hot.
pub fn ce_loss(q_row: &[f64], expert: usize, beta: f64) -> Result<RowLoss, LossError> {
    check_row(q_row, expert)?;
    if !beta.is_finite() {
        return Err(LossError::NonFinite);
    }
    let logits: Vec<f64> = q_row.iter().map(|q| beta * q).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[expert];
    let grad = exps.iter().enumerate().map(|(a, e)| beta * (e / sum - if a == expert { 1.0 } else { 0.0 })).collect();
    Ok(RowLoss { loss, grad })
}

/// Applies a row loss to the feasible entries only and scatters the
/// gradient back to full width (masked entries get zero gradient).
pub fn masked_row_loss<F>(q_row: &[f64], mask: Option<&[bool]>, expert: usize, loss: F) -> Result<RowLoss, LossError>
where
    F: Fn(&[f64], usize) -> Result<RowLoss, LossError>,
{
    let Some(mask) = mask else {
        return loss(q_row, expert);
    };
    if expert >= q_row.len() {
        return Err(LossError::ExpertOutOfRange { expert, width: q_row.len() });
    }
    if !mask[expert] {
        return Err(LossError::ExpertMasked(expert));
    }
    let kept: Vec<usize> = (0..q_row.len()).filter(|&a| mask[a]).collect();
    let compact: Vec<f64> = kept.iter().map(|&a| q_row[a]).collect();
    let compact_expert = kept.iter().position(|&a| a == expert).unwrap();
    let inner = loss(&compact, compact_expert)?;
    let mut grad = vec![0.0; q_row.len()];
    for (i, &a) in kept.iter().enumerate() {
        grad[a] = inner.grad[i];
    }
    Ok(RowLoss { loss: inner.loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    const L: MarginFn = MarginFn { margin: 0.1 };

    #[test]
    fn huber_branches() {
        assert_eq!(td_loss(1.0, 1.0).unwrap(), (0.0, 0.0));
        assert_eq!(td_loss(1.5, 1.0).unwrap(), (0.125, 0.5));
        assert_eq!(td_loss(4.0, 1.0).unwrap(), (2.5, 1.0));
        assert_eq!(td_loss(-2.0, 1.0).unwrap(), (2.5, -1.0));
        assert_eq!(td_loss(f64::NAN, 1.0), Err(LossError::NonFinite));
        assert_eq!(td_loss(0.0, f64::INFINITY), Err(LossError::NonFinite));
    }

    #[test]
    fn slm_single_violator() {
        let r = slm_loss(&[1.0, 0.95, 0.5], 0, L).unwrap();
        assert_eq!(violation_set(&[1.0, 0.95, 0.5], 0, L), vec![1]);
        assert!((r.loss - 0.05).abs() < 1e-12);
        assert_eq!(r.grad, vec![-1.0, 1.0, 0.0]);
    }

    #[test]
    fn slm_empty_set() {
        let r = slm_loss(&[1.0, 0.8], 0, L).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn slm_two_violators() {
        let r = slm_loss(&[0.5, 0.9, 0.85], 0, L).unwrap();
        assert!((r.loss - 0.475).abs() < 1e-12);
        assert_eq!(r.grad, vec![-1.0, 0.5, 0.5]);
    }

    #[test]
    fn slm_boundary_is_excluded() {
        // Q(a) == Q(ae) - l exactly: not a violator.
        let r = slm_loss(&[0.5, 0.25], 0, MarginFn::new(0.25)).unwrap();
        assert_eq!(r.loss, 0.0);
    }

    #[test]
    fn lm_matches_formula_and_slm_with_one_violator() {
        let row = [1.0, 0.95, 0.5];
        let lm = lm_loss(&row, 0, L).unwrap();
        assert!((lm.loss - 0.05).abs() < 1e-12);
        assert_eq!(lm.loss, slm_loss(&row, 0, L).unwrap().loss);
        assert_eq!(lm_loss(&[2.0, 0.5, 1.0], 0, L).unwrap().loss, 0.0);
    }

    #[test]
    fn ce_closed_forms() {
        let r = ce_loss(&[2.0, 0.0], 0, 1.0).unwrap();
        assert!((r.loss - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-15);
        assert!((r.loss - 0.1269).abs() < 1e-4);
        let uniform = ce_loss(&[0.3; 7], 2, 10.0).unwrap();
        assert!((uniform.loss - 7f64.ln()).abs() < 1e-12);
        let sharp = ce_loss(&[100.0, 0.0, 0.0], 0, 10.0).unwrap();
        assert!(sharp.loss < 1e-300);
    }

    #[test]
    fn row_errors() {
        assert_eq!(slm_loss(&[], 0, L), Err(LossError::EmptyRow));
        assert_eq!(lm_loss(&[1.0], 3, L), Err(LossError::ExpertOutOfRange { expert: 3, width: 1 }));
        assert_eq!(ce_loss(&[f64::NAN], 0, 1.0), Err(LossError::NonFinite));
    }

    #[test]
    fn masking_removes_entries_before_the_loss() {
        let row = [0.5, 5.0, 0.9, 0.85];
        let mask = [true, false, true, true];
        let r = masked_row_loss(&row, Some(&mask), 0, |q, e| slm_loss(q, e, L)).unwrap();
        assert!((r.loss - 0.475).abs() < 1e-12);
        assert_eq!(r.grad, vec![-1.0, 0.0, 0.5, 0.5]);
        assert_eq!(masked_row_loss(&row, Some(&mask), 1, |q, e| slm_loss(q, e, L)), Err(LossError::ExpertMasked(1)));
    }
}
