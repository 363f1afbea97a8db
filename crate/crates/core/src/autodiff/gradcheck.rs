//! Central finite-difference checking of tape gradients at 64-bit precision.
//!
//! The numeric side only ever evaluates forward values on a fresh
//! [`Graph::no_grad`] tape, so it shares nothing with the backward pass.

use super::graph::{AutodiffError, Graph, Var};
use super::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-6;

/// Floor on the error denominator, reached only when the whole gradient
/// vanishes.
pub const ERROR_FLOOR: f64 = 1e-8;

/// Worst relative error across all inputs of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Input index and element with the largest error.
    pub worst: (usize, usize),
}

/// `max |a - n| / max(max |a|, max |n|, ERROR_FLOOR)` with both maxima
/// taken over the same vector. Each element may carry several numeric
/// estimates; the one closest to `a` counts. Returns the error and its
/// position.
pub fn relative_error(analytic: &[f64], numeric: &[[f64; 3]]) -> (f64, usize) {
    let scale =
        analytic.iter().chain(numeric.iter().map(|n| &n[0])).fold(0.0f64, |m, v| m.max(v.abs())).max(ERROR_FLOOR);
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(i, (a, n))| (n.iter().map(|n| (a - n).abs()).fold(f64::INFINITY, f64::min) / scale, i))
        .fold((0.0, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences with step `h`. The gradient with respect to all
/// inputs is treated as one vector, so an input whose true gradient is
/// zero is judged against the scale of the whole gradient.
///
/// Besides the central difference, the forward and backward one-sided
/// differences are formed from the same evaluations. When a ReLU or max
/// kink lies within `h` of the point the central difference mixes two
/// linear pieces, while the one-sided difference away from the kink does
/// not. A wrong gradient disagrees with all three.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_grad())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<f64> = vars.iter().flat_map(|&v| g.grad_or_zeros(v)).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64, AutodiffError> {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.data(loss)[0])
    };

    let centre = eval(inputs)?;
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut owner = Vec::with_capacity(analytic.len());
    let mut scratch: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            scratch[i].data_mut()[j] = orig + h;
            let up = eval(&scratch)?;
            scratch[i].data_mut()[j] = orig - h;
            let down = eval(&scratch)?;
            scratch[i].data_mut()[j] = orig;
            numeric.push([(up - down) / (2.0 * h), (up - centre) / h, (centre - down) / h]);
            owner.push((i, j));
        }
    }
    let (err, at) = relative_error(&analytic, &numeric);
    Ok(GradCheck { max_rel_err: err, worst: owner.get(at).copied().unwrap_or((0, 0)) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // mul by itself through two leaves vs a deliberately broken scale
        let x = Tensor::new(vec![3], vec![0.3, -1.2, 2.0]);
        let ok = check(std::slice::from_ref(&x), DEFAULT_STEP, |g, v| {
            let y = g.mul(v[0], v[0])?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(ok.max_rel_err < 1e-8);

        let bad = check(&[x], DEFAULT_STEP, |g, v| {
            // Constant re-entry hides the dependency from the tape.
            let c = g.constant(g.value(v[0]).clone());
            let y = g.mul(v[0], c)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(bad.max_rel_err > 0.1);
    }

    #[test]
    fn kink_inside_the_step_is_not_an_error() {
        let x = Tensor::new(vec![2], vec![3e-6, -0.5]);
        let r = check(&[x], DEFAULT_STEP, |g, v| {
            let y = g.relu(v[0]);
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }
}
