//! Named parameter collections shared by the optimizer and gradient checks.

use alloc::string::String;
use alloc::vec::Vec;

/// A fixed, ordered list of real tensors. Gradients use the same type.
pub trait ParamSet: Clone {
    /// Same shapes, all zeros.
    fn zeros_like(&self) -> Self;
    /// Tensors in a stable order, with display names.
    fn tensors(&self) -> Vec<(String, &[f64])>;
    /// Same order as [`ParamSet::tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn add_scaled(&mut self, alpha: f64, other: &Self) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::linalg::axpy(alpha, src, dst);
        }
    }

    fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}
