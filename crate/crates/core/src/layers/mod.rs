//! HAT-wrapped weighted layers and task-indexed modules.
//!
//! A weighted HAT layer reads the masked input from its payload, applies its
//! base operation and hands back a payload with its own masker pending. In
//! training mode, once any task has been finalized, it installs gradient
//! nullification hooks on its weight and bias leaves. The input-side mask for
//! those hooks is the cumulative mask of the last masker on the payload's
//! chain.

pub mod conv;
pub mod gate;
pub mod hooks;
pub mod indexed;
pub mod linear;
pub mod masker;

pub use conv::HatConv2d;
pub use gate::HatGate;
pub use hooks::{bias_nullify, grad_compensate, grad_nullify};
pub use indexed::{Linear, Norm, NormKind, TaskIndexed};
pub use linear::HatLinear;
pub use masker::{attention, HatMasker, E_MAX, THETA_BIN};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::payload::MaskerRef;

/// Resolves the cumulative mask on the input side of a weighted layer with
/// `in_features` inputs.
///
/// With no preceding masker the inputs are treated as used by every task
/// (all ones), so the weight factor reduces to `1 - a_out`. When the
/// preceding masker has fewer units than the layer has inputs (a flattened
/// conv feature map), each unit's value is repeated over its block of
/// inputs.
pub(crate) fn input_side_mask(prev: Option<&MaskerRef>, in_features: usize) -> Result<Vec<f64>> {
    let Some(prev) = prev else {
        return Ok(vec![1.0; in_features]);
    };
    let units = prev.features();
    if units == in_features {
        return Ok(prev.cumulative().to_vec());
    }
    if units == 0 || !in_features.is_multiple_of(units) {
        return Err(Error::dim("input-side mask", &[units], &[in_features]));
    }
    let block = in_features / units;
    Ok(prev
        .cumulative()
        .iter()
        .flat_map(|&a| std::iter::repeat_n(a, block))
        .collect())
}

pub(crate) fn install_nullifiers(
    g: &mut Graph,
    weight: Var,
    bias: Option<Var>,
    out_cum: Vec<f64>,
    in_cum: Vec<f64>,
) -> Result<()> {
    if let Some(b) = bias {
        let out = out_cum.clone();
        g.tape
            .register_hook(b, move |grad| bias_nullify(grad, &out).expect("bias shape"))?;
    }
    g.tape.register_hook(weight, move |grad| {
        grad_nullify(grad, &out_cum, &in_cum).expect("weight shape")
    })?;
    Ok(())
}
