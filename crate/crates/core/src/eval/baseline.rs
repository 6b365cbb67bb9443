//! Constant-velocity extrapolation: every cell keeps moving with its
//! first-frame offset.

use crate::codec::TrajectoryField;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// `offset(t) = t * first[cell]` for `t = 1..=horizon`.
pub fn constant_velocity_baseline<S: Scalar>(
    first: &[[S; 2]],
    height: usize,
    width: usize,
    horizon: usize,
) -> Result<TrajectoryField<S>> {
    if first.len() != height * width {
        return invalid(format!(
            "{} first-frame offsets for a {height}x{width} grid",
            first.len()
        ));
    }
    let mut out = TrajectoryField::zeros(height, width, horizon)?;
    for (cell, &[dx, dy]) in first.iter().enumerate() {
        for t in 0..horizon {
            let s = S::lit((t + 1) as f64);
            out.set_offset(cell, t, s * dx, s * dy);
        }
    }
    Ok(out)
}

/// First-frame offset of every cell.
pub fn first_offsets<S: Scalar>(field: &TrajectoryField<S>) -> Vec<[S; 2]> {
    (0..field.cells())
        .map(|c| {
            let (dx, dy) = field.offset(c, 0);
            [dx, dy]
        })
        .collect()
}
