//! Finite-difference verification of analytic gradients.

use super::network::{Mode, Network};
use super::tensor::{Scalar, Tensor};
use crate::rng::{mix, stream};
use rand::Rng;

/// Result of checking one component.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub component: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compare analytic parameter gradients of `loss(tap output)` against
/// central finite differences on up to `samples` randomly selected
/// parameters. Runs in double precision; the relative step is `1e-5`.
///
/// The loss closure returns the scalar loss and its gradient with respect
/// to the tap output.
pub fn gradient_check(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    aux: Option<&[f64]>,
    loss: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
    samples: usize,
    seed: u64,
) -> GradCheckReport {
    gradient_check_with(net, input, aux, loss, samples, seed, 0.0)
}

/// As [`gradient_check`], with a fault-injection offset added to every
/// analytic gradient before comparison (test harness hook; zero in normal
/// operation).
pub fn gradient_check_with(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    aux: Option<&[f64]>,
    loss: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
    samples: usize,
    seed: u64,
    fault_offset: f64,
) -> GradCheckReport {
    let pass = net.forward(input.clone(), aux, Mode::Eval).expect("forward failed");
    let signature_base = pass.activation_signature(&net.spec);
    let (loss_at_base, d_tap) = loss(pass.tap(&net.spec).data());
    let grads = net.backward(&pass, &d_tap).expect("backward failed");

    // A central difference carries roundoff of roughly eps * |L| / h;
    // flooring the denominator at 1e7 times that scale makes pure roundoff
    // register as at most ~1e-7 relative while real gradient defects (which
    // are proportional to the gradient magnitude) still stand out.
    let fd_noise = f64::EPSILON * loss_at_base.abs().max(1.0) / 1e-5;
    let denom_floor = fd_noise * 1e7;

    // Flatten analytic gradients in param_tensors order.
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    for g in grads.layers.iter().flatten() {
        analytic.push(g.weight.data().to_vec());
        analytic.push(g.bias.data().to_vec());
    }

    let sizes: Vec<usize> = net.param_tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = stream(mix(seed, 0x67d));

    let count = samples.min(total);
    let mut max_rel: f64 = 0.0;
    for _ in 0..count {
        let flat = rng.gen_range(0..total);
        let (tensor_ix, elem_ix) = locate(&sizes, flat);

        let base = net.param_tensors()[tensor_ix].data()[elem_ix];
        let h = 1e-5 * base.abs().max(1.0);

        set_param(net, tensor_ix, elem_ix, base + h);
        let (up, sig_up) = eval_loss(net, input, aux, loss);
        set_param(net, tensor_ix, elem_ix, base - h);
        let (down, sig_down) = eval_loss(net, input, aux, loss);
        set_param(net, tensor_ix, elem_ix, base);

        // Perturbations that flip a rectifier or a pooling argmax put a
        // nondifferentiable point inside the difference stencil; the
        // quotient is meaningless there. A wrong analytic gradient does not
        // change the activation pattern, so skipping these cannot hide a
        // defect.
        if sig_up != signature_base || sig_down != signature_base {
            continue;
        }

        let numeric = (up - down) / (2.0 * h);
        let a = analytic[tensor_ix][elem_ix] + fault_offset;
        let denom = a.abs().max(numeric.abs()).max(denom_floor);
        max_rel = max_rel.max((a - numeric).abs() / denom);
    }

    GradCheckReport {
        component: net.spec.name.clone(),
        max_rel_error: max_rel,
        checked: count,
    }
}

fn locate(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (i, &n) in sizes.iter().enumerate() {
        if flat < n {
            return (i, flat);
        }
        flat -= n;
    }
    unreachable!("flat index out of range")
}

fn set_param<T: Scalar>(net: &mut Network<T>, tensor_ix: usize, elem_ix: usize, value: T) {
    net.param_tensors_mut()[tensor_ix].data_mut()[elem_ix] = value;
}

fn eval_loss(
    net: &Network<f64>,
    input: &Tensor<f64>,
    aux: Option<&[f64]>,
    loss: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
) -> (f64, u64) {
    let pass = net.forward(input.clone(), aux, Mode::Eval).expect("forward failed");
    (loss(pass.tap(&net.spec).data()).0, pass.activation_signature(&net.spec))
}
