use crate::nn::{GradStore, ParamStore};
use crate::scalar::Scalar;

/// Central-difference gradient of `loss_fn` at `params`.
pub fn finite_diff_grad<S, F>(mut loss_fn: F, params: &ParamStore<S>, epsilon: S) -> GradStore<S>
where
    S: Scalar,
    F: FnMut(&ParamStore<S>) -> S,
{
    let indices: Vec<usize> = (0..params.len()).collect();
    let values = finite_diff_at(&mut loss_fn, params, epsilon, &indices);
    let mut out = params.zeros_like();
    out.as_mut_slice().copy_from_slice(&values);
    out
}

/// Central differences for a subset of parameter indices.
pub fn finite_diff_at<S, F>(
    mut loss_fn: F,
    params: &ParamStore<S>,
    epsilon: S,
    indices: &[usize],
) -> Vec<S>
where
    S: Scalar,
    F: FnMut(&ParamStore<S>) -> S,
{
    let mut probe = params.clone();
    let two = S::lit(2.0);
    indices
        .iter()
        .map(|&i| {
            let orig = probe.as_slice()[i];
            probe.as_mut_slice()[i] = orig + epsilon;
            let up = loss_fn(&probe);
            probe.as_mut_slice()[i] = orig - epsilon;
            let down = loss_fn(&probe);
            probe.as_mut_slice()[i] = orig;
            (up - down) / (two * epsilon)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error<S: Scalar>(a: S, b: S, floor: S) -> S {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
