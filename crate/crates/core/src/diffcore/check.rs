use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing taped gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate where `max_rel_error` was observed.
    pub worst_coordinate: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the reverse-mode gradient of `f` at `x` with central finite
/// differences of step `h`.
///
/// `f` receives a fresh tape and the leaf holding `x` and must return a
/// scalar node. The error per coordinate is
/// `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite difference step must be positive, got {h}")));
    }
    let eval = |point: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(point.clone());
        let root = f(&mut tape, leaf)?;
        let value = tape.value(root);
        if !value.is_scalar() {
            return Err(Error::NonScalarRoot(value.shape().to_vec()));
        }
        Ok(value.item())
    };

    let analytic = {
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let root = f(&mut tape, leaf)?;
        let grads = tape.backward(root)?;
        grads.get_or_zeros(leaf, x).into_data()
    };

    let mut numeric = Vec::with_capacity(x.numel());
    let mut worst = (0.0_f64, 0_usize);
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let (fp, fm) = (eval(&plus)?, eval(&minus)?);
        for v in [fp, fm] {
            if !v.is_finite() {
                return Err(Error::NonFinite { coordinate: i, value: v });
            }
        }
        let central = (fp - fm) / (2.0 * h);
        let rel = (analytic[i] - central).abs() / central.abs().max(1e-8);
        if rel > worst.0 {
            worst = (rel, i);
        }
        numeric.push(central);
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        worst_coordinate: worst.1,
        analytic,
        numeric,
    })
}
