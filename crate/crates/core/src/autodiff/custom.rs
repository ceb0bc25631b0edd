use crate::error::Result;

/// A primitive with a hand-written backward rule, recorded on the tape like
/// any built-in op. Effect processors register through this trait so the
/// differentiation engine stays independent of the DSP layer.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Given input values/shapes, the forward output and the output
    /// gradient, return one gradient per input (`None` for inputs that do
    /// not need one). Implementations may recompute forward intermediates.
    fn backward(
        &self,
        inputs: &[(&[f64], &[usize])],
        output: (&[f64], &[usize]),
        grad_out: &[f64],
    ) -> Result<Vec<Option<Vec<f64>>>>;
}
