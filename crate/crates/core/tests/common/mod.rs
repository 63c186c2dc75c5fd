#![allow(dead_code)]

use hat_core::autograd::{Tape, Var};
use hat_core::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Like [`randn`] but keeps every entry at least `gap` away from each of
/// `kinks`, so piecewise functions are smooth under the probe step.
pub fn randn_avoiding(shape: &[usize], kinks: &[f64], gap: f64, rng: &mut impl Rng) -> Tensor {
    randn(shape, rng).map(|v| {
        let mut v = v;
        for &k in kinks {
            if (v - k).abs() < gap {
                v = k + if v >= k { gap } else { -gap };
            }
        }
        v
    })
}

/// Reduces any output to a scalar through a fixed random projection.
pub fn project(tape: &mut Tape, out: Var, weights: &Tensor) -> Var {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w).unwrap();
    tape.sum(p).unwrap()
}

/// Largest relative error between the tape gradient and central finite
/// differences over all inputs, measured per input as
/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
pub fn gradcheck<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    const H: f64 = 1e-6;
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item().unwrap()
    };
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for k in 0..input.numel() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[k] += H;
            let up = eval(&xs);
            xs[i].data_mut()[k] -= 2.0 * H;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[i].data()[k];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        if scale > 0.0 {
            worst = worst.max(diff2.sqrt() / scale);
        }
    }
    worst
}
