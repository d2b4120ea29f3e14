//! Augmented-state Q-cascades for factored spatial action spaces, strict
//! large-margin imitation losses, and a deterministic heightmap
//! block-construction simulator with a deconstruction expert.

pub mod blockworld;
pub mod config;
pub mod encoding;
pub mod expert;
pub mod grid;
pub mod losses;
pub mod mdp;
pub mod qmodel;
pub mod training;
pub mod transition;
pub mod verify;

pub use transition::TransitionRecord;

/// Index of the largest entry among those allowed by `mask`, lowest index on
/// ties. Entries equal to `-inf` count as masked. Returns `None` when nothing
/// is selectable.
pub fn argmax_masked(values: &[f64], mask: Option<&[bool]>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if mask.is_some_and(|m| !m[i]) || v == f64::NEG_INFINITY || v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_and_respects_mask() {
        assert_eq!(argmax_masked(&[1.0, 3.0, 3.0], None), Some(1));
        assert_eq!(argmax_masked(&[1.0, 3.0, 3.0], Some(&[true, false, true])), Some(2));
        assert_eq!(argmax_masked(&[1.0, 3.0], Some(&[false, false])), None);
        assert_eq!(argmax_masked(&[f64::NEG_INFINITY], None), None);
        assert_eq!(argmax_masked(&[], None), None);
    }
}
