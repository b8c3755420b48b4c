//! Central finite-difference gradient checking.
//!
//! The checker never calls [`Tape::backward`] for its numerical estimate: it
//! rebuilds the graph from perturbed inputs and differences the forward values.

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Worst elementwise disagreement found by [`check_gradients`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with an absolute floor so that near-zero gradients compare
/// on an absolute scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `backward` against central differences of step `h` for every
/// element of every input.
///
/// `build` must record a scalar-valued graph from the given leaves.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, build: F) -> GradCheck
where
    F: Fn(&mut Tape, &[NodeId]) -> NodeId,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::with_finite_checks(false);
        let ids: Vec<NodeId> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let root = build(&mut tape, &ids);
        tape.value(root).item()
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let root = build(&mut tape, &ids);
    let grads = tape.backward(root).expect("backward failed during gradient check");

    let mut worst = 0.0_f64;
    let mut checked = 0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads
            .get(*id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let up = eval(&work);
            work[k].data_mut()[i] = orig - h;
            let down = eval(&work);
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
            checked += 1;
        }
    }
    GradCheck {
        max_rel_err: worst,
        checked,
    }
}
