//! Per-layer quota regularizer on new mask capacity.
//!
//! For each layer the usage ratio is
//! `Σ a_i (1 - c_i) / Σ (1 - c_i)` where `a` is the current task's mask and
//! `c` the cumulative mask of earlier tasks; usage up to `1/T` is free.
//! Layers with no free capacity (denominator zero) contribute nothing.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct RegValue(pub f64);

impl RegValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Direct evaluation on plain vectors.
pub fn regularizer_value(current: &[Vec<f64>], cumulative: &[Vec<f64>], task_count: usize) -> Result<RegValue> {
    if current.len() != cumulative.len() || task_count == 0 {
        return Err(Error::Validation("regularizer needs one cumulative mask per layer".into()));
    }
    let quota = 1.0 / task_count as f64;
    let mut total = 0.0;
    for (a, c) in current.iter().zip(cumulative) {
        if a.len() != c.len() {
            return Err(Error::dim("regularizer", &[a.len()], &[c.len()]));
        }
        let den: f64 = c.iter().map(|ci| 1.0 - ci).sum();
        if den <= 0.0 {
            continue;
        }
        let num: f64 = a.iter().zip(c).map(|(ai, ci)| ai * (1.0 - ci)).sum();
        total += (num / den - quota).max(0.0);
    }
    Ok(RegValue(total))
}

/// The same quantity recorded on the tape, differentiable with respect to
/// each layer's current mask. Cumulative masks enter as constants.
pub fn regularizer(g: &mut Graph, layers: &[(Var, &[f64])], task_count: usize) -> Result<Var> {
    if task_count == 0 {
        return Err(Error::Validation("task count must be at least 1".into()));
    }
    let quota = g.tape.constant(Tensor::scalar(1.0 / task_count as f64));
    let mut total: Option<Var> = None;
    for &(a, cumulative) in layers {
        if g.tape.value(a).shape() != [cumulative.len()] {
            return Err(Error::dim("regularizer", g.tape.value(a).shape(), &[cumulative.len()]));
        }
        let free: Vec<f64> = cumulative.iter().map(|c| 1.0 - c).collect();
        let den: f64 = free.iter().sum();
        if den <= 0.0 {
            continue;
        }
        let free = g.tape.constant(Tensor::vector(free));
        let used = g.tape.mul(a, free)?;
        let num = g.tape.sum(used)?;
        let ratio = g.tape.scale(num, 1.0 / den)?;
        let excess = g.tape.sub(ratio, quota)?;
        let term = g.tape.relu(excess)?;
        total = Some(match total {
            Some(t) => g.tape.add(t, term)?,
            None => term,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => g.tape.constant(Tensor::scalar(0.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_usage_over_quota() {
        let r = regularizer_value(&[vec![0.5; 10]], &[vec![0.0; 10]], 5).unwrap();
        assert!((r.value() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn unused_masks_are_free() {
        let r = regularizer_value(&[vec![0.0; 4]], &[vec![0.2; 4]], 3).unwrap();
        assert_eq!(r.value(), 0.0);
    }

    #[test]
    fn full_layer_contributes_nothing() {
        let r = regularizer_value(
            &[vec![1.0; 3], vec![0.5; 10]],
            &[vec![1.0; 3], vec![0.0; 10]],
            5,
        )
        .unwrap();
        assert!((r.value() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn tape_matches_direct_evaluation() {
        let a = vec![0.9, 0.1, 0.7, 0.4];
        let c = vec![0.0, 0.5, 1.0, 0.2];
        let direct = regularizer_value(std::slice::from_ref(&a), std::slice::from_ref(&c), 4).unwrap();
        let mut g = Graph::new();
        let av = g.tape.leaf(Tensor::vector(a), true);
        let r = regularizer(&mut g, &[(av, &c)], 4).unwrap();
        assert!((g.tape.value(r).item().unwrap() - direct.value()).abs() < 1e-15);
    }
}
