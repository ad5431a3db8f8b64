//! Finite-difference gradient verification.
//!
//! These helpers are the independent oracle for every differentiable op and
//! model in the crate: they only ever call the forward pass, so they share no
//! code with the backward implementations they check.

use crate::autodiff::{Tape, Tensor};

/// Central finite differences of a scalar function at `point`.
pub fn finite_diff<F>(f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let fp = f(&probe);
        probe[i] = point[i] - h;
        let fm = f(&probe);
        probe[i] = point[i];
        grads.push((fp - fm) / (2.0 * h));
    }
    grads
}

/// Error of `analytic` against `numeric`: relative for large entries,
/// absolute below unit magnitude.
pub fn max_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Check reverse-mode gradients of `build` against central differences.
///
/// `build` receives one leaf tensor per entry of `inits` and must return a
/// scalar. Returns the worst error over all leaf elements.
pub fn gradcheck<F>(build: F, inits: &[(Vec<usize>, Vec<f64>)], h: f64) -> f64
where
    F: Fn(&Tape, &[Tensor]) -> Tensor,
{
    // Analytic pass.
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inits
        .iter()
        .map(|(shape, data)| tape.leaf(data.clone(), shape))
        .collect();
    let root = build(&tape, &leaves);
    tape.backward(&root).expect("gradcheck root must be scalar");
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|l| l.grad_or_zeros()).collect();

    // Numeric pass, one leaf at a time.
    let mut worst = 0.0f64;
    for (which, (shape, data)) in inits.iter().enumerate() {
        let eval = |point: &[f64]| -> f64 {
            let tape = Tape::new();
            let leaves: Vec<Tensor> = inits
                .iter()
                .enumerate()
                .map(|(i, (s, d))| {
                    if i == which {
                        tape.leaf(point.to_vec(), s)
                    } else {
                        tape.leaf(d.clone(), s)
                    }
                })
                .collect();
            build(&tape, &leaves).item()
        };
        let _ = shape;
        let numeric = finite_diff(eval, data, h);
        worst = worst.max(max_err(&analytic[which], &numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_of_quadratic() {
        let f = |v: &[f64]| v[0] * v[0] + v[1] * v[1];
        let g = finite_diff(f, &[3.0, 4.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
        assert!((g[1] - 8.0).abs() < 1e-8);
    }

    #[test]
    fn gradcheck_catches_matching_gradients() {
        let err = gradcheck(
            |_tape, leaves| leaves[0].mul(&leaves[0]).sum_all(),
            &[(vec![3], vec![0.5, -1.2, 2.0])],
            1e-4,
        );
        assert!(err < 1e-8, "err {err}");
    }
}
