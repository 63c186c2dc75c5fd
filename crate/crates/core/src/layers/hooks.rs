//! Gradient transforms installed by HAT modules.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bound on the cosh arguments inside [`grad_compensate`].
pub const COSH_CLAMP: f64 = 50.0;

/// Compensated embedding gradients are clipped to this multiple of the
/// largest raw gradient magnitude.
pub const COMPENSATION_CLIP: f64 = 100.0;

/// Scales weight gradients so parameters owned by earlier tasks stay put:
/// `g'[i, j, ..] = (1 - min(out[i], in[j])) * g[i, j, ..]`.
///
/// Works for linear weights `[out, in]` and conv kernels `[out, in, kh, kw]`
/// (the factor is shared by all taps of one kernel slice).
pub fn grad_nullify(g: &Tensor, a_out_cum: &[f64], a_in_cum: &[f64]) -> Result<Tensor> {
    let shape = g.shape();
    if shape.len() < 2 || shape[0] != a_out_cum.len() || shape[1] != a_in_cum.len() {
        return Err(Error::dim("grad_nullify", shape, &[a_out_cum.len(), a_in_cum.len()]));
    }
    let taps: usize = shape[2..].iter().product();
    let n_in = shape[1];
    let data = g
        .data()
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let i = idx / (n_in * taps);
            let j = (idx / taps) % n_in;
            (1.0 - a_out_cum[i].min(a_in_cum[j])) * v
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Bias counterpart of [`grad_nullify`]: only the output-side factor.
pub fn bias_nullify(g: &Tensor, a_out_cum: &[f64]) -> Result<Tensor> {
    if g.shape() != [a_out_cum.len()] {
        return Err(Error::dim("bias_nullify", g.shape(), &[a_out_cum.len()]));
    }
    Ok(Tensor::vector(
        g.data()
            .iter()
            .zip(a_out_cum)
            .map(|(&v, &a)| (1.0 - a) * v)
            .collect(),
    ))
}

/// Rescales mask-embedding gradients to undo the vanishing sigmoid slope at
/// large scales:
/// `q'[i] = s_max (cosh(s e[i]) + 1) / (s (cosh(e[i]) + 1)) * q[i]`,
/// with both cosh arguments clamped to `[-COSH_CLAMP, COSH_CLAMP]`.
pub fn grad_compensate(q: &Tensor, e: &Tensor, s: f64, s_max: f64) -> Tensor {
    let clampv = |x: f64| x.clamp(-COSH_CLAMP, COSH_CLAMP);
    let data = q
        .data()
        .iter()
        .zip(e.data())
        .map(|(&qi, &ei)| {
            let num = s_max * (clampv(s * ei).cosh() + 1.0);
            let den = s * (clampv(ei).cosh() + 1.0);
            num / den * qi
        })
        .collect();
    Tensor::new(q.shape().to_vec(), data).expect("same shape as q")
}

/// [`grad_compensate`] followed by clipping to
/// `COMPENSATION_CLIP * max|q|`.
pub fn compensate_and_clip(q: &Tensor, e: &Tensor, s: f64, s_max: f64) -> Tensor {
    let bound = COMPENSATION_CLIP * q.max_abs();
    grad_compensate(q, e, s, s_max).map(|v| v.clamp(-bound, bound))
}
