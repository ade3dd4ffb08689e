//! Dense tensors, a reverse-mode tape, and the layers and optimizer built on it.
//!
//! Every tensor that flows through the tape is two-dimensional; vectors are
//! `[1, n]` rows and scalars are `[1, 1]`. Each forward pass records onto its
//! own [`Graph`], so independent graphs can run on separate threads while the
//! shared [`ParamStore`] stays read-only until the optimizer step.

mod adam;
mod attention;
mod error;
mod graph;
mod init;
mod linalg;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use attention::{AttentionLayer, AttentionOutput, AttentionParams};
pub use error::KernelError;
pub use graph::{Graph, NodeId};
pub use init::glorot_uniform;
pub use linalg::matmul;
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Binary cross-entropy on plain numbers.
///
/// `prob` is clamped into `[1e-7, 1 - 1e-7]`; `label` must be exactly 0 or 1.
pub fn bce_loss(prob: f64, label: f64) -> Result<f64, KernelError> {
    check_label(label)?;
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(-(label * p.ln() + (1.0 - label) * (1.0 - p).ln()))
}

pub(crate) fn check_label(label: f64) -> Result<(), KernelError> {
    if label == 0.0 || label == 1.0 {
        Ok(())
    } else {
        Err(KernelError::InvalidLabel(label))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_at_half() {
        let l = bce_loss(0.5, 1.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn bce_near_one_is_near_zero() {
        let l = bce_loss(1.0 - 1e-7, 1.0).unwrap();
        assert!((l - 1e-7).abs() < 1e-12, "{l}");
        // clamping keeps log finite at the boundary
        assert!(bce_loss(1.0, 0.0).unwrap().is_finite());
        assert!(bce_loss(0.0, 1.0).unwrap().is_finite());
    }

    #[test]
    fn bce_rejects_bad_label() {
        assert_eq!(bce_loss(0.3, 0.5), Err(KernelError::InvalidLabel(0.5)));
        assert!(bce_loss(0.3, 2.0).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0).is_finite());
        assert!(sigmoid(800.0) <= 1.0);
    }
}
