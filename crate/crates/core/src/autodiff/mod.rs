//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive as it executes; [`Tape::backward`]
//! replays the record in reverse, accumulating gradients into each tensor
//! that requires them. Tensors are addressed by [`TensorId`] and own their
//! values as flat row-major `f64` arrays.
//!
//! Tapes are single-owner: one forward pass per tape, never shared across
//! threads. Independent tapes may run in parallel.

mod adam;
mod custom;
mod gradcheck;
mod ops;

pub use adam::{adam_step, lr_schedule, AdamConfig, AdamState, LrSchedule};
pub use custom::CustomOp;
pub use gradcheck::{finite_difference_grad, grad_check, GradCheckOptions};

use crate::error::{Error, Result};
use std::sync::Arc;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Precomputed DFT basis shared by `framed_dft` nodes (and across tapes).
#[derive(Debug)]
pub struct DftBasis {
    pub window: Vec<f64>,
    pub hop: usize,
    /// cos table, `window_len x bins`, row-major.
    pub cos: Vec<f64>,
    /// sin table (negated sign convention of the forward DFT), `window_len x bins`.
    pub sin: Vec<f64>,
    pub bins: usize,
}

impl DftBasis {
    /// Basis for a Hann-windowed forward DFT with `bins = window/2 + 1`.
    pub fn hann(window_len: usize, hop: usize) -> Arc<DftBasis> {
        let bins = window_len / 2 + 1;
        let mut window = vec![0.0; window_len];
        for (i, w) in window.iter_mut().enumerate() {
            *w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / window_len as f64).cos();
        }
        let mut cos = vec![0.0; window_len * bins];
        let mut sin = vec![0.0; window_len * bins];
        for n in 0..window_len {
            for k in 0..bins {
                let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / window_len as f64;
                cos[n * bins + k] = ang.cos();
                sin[n * bins + k] = ang.sin();
            }
        }
        Arc::new(DftBasis {
            window,
            hop,
            cos,
            sin,
            bins,
        })
    }

    pub fn frame_count(&self, input_len: usize) -> usize {
        let w = self.window.len();
        if input_len < w {
            0
        } else {
            1 + (input_len - w) / self.hop
        }
    }
}

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    /// x * c + b with constant scalars; the offset only matters forward.
    Affine {
        x: TensorId,
        scale: f64,
    },
    MatMul(TensorId, TensorId),
    /// A [m,k] x B[n,k]^T -> [m,n]
    MatMulNT(TensorId, TensorId),
    Conv1d {
        input: TensorId,
        weight: TensorId,
        stride: usize,
        pad: usize,
    },
    Conv2d {
        input: TensorId,
        weight: TensorId,
        stride: usize,
        pad: usize,
    },
    BiasAddChan {
        x: TensorId,
        bias: TensorId,
    },
    Tanh(TensorId),
    Exp(TensorId),
    /// ln(max(x, 1e-8))
    Log(TensorId),
    Sqrt(TensorId),
    Abs(TensorId),
    LeakyRelu {
        x: TensorId,
        slope: f64,
    },
    Clamp {
        x: TensorId,
        lo: f64,
        hi: f64,
    },
    Sum(TensorId),
    Mean(TensorId),
    Max {
        x: TensorId,
        argmax: usize,
    },
    /// 2-D reduction along `axis`; output keeps the reduced dim as 1.
    SumAxis {
        x: TensorId,
        axis: usize,
    },
    Concat {
        parts: Vec<TensorId>,
    },
    SliceRows {
        x: TensorId,
        start: usize,
    },
    Reshape(TensorId),
    /// Whole-vector (1-D) or row-wise (2-D) unit normalization.
    L2Normalize(TensorId),
    Dropout {
        x: TensorId,
        mask: Arc<Vec<f64>>,
    },
    /// Windowed frame extraction plus fixed DFT basis matmul.
    /// Output is [2*frames, bins]: rows 0..frames real, frames.. imaginary.
    FramedDft {
        x: TensorId,
        basis: Arc<DftBasis>,
    },
    /// [C,H,W] -> [C] mean over spatial dims.
    SpatialMean(TensorId),
    Custom {
        inputs: Vec<TensorId>,
        kernel: Arc<dyn CustomOp>,
    },
}

/// A dense tensor recorded on a tape.
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) values: Vec<f64>,
    pub(crate) grad: Option<Vec<f64>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// The operation record. Tensor ids index into `tensors`; every op only
/// references earlier ids, so reverse iteration is a valid topological order.
#[derive(Default)]
pub struct Tape {
    pub(crate) tensors: Vec<Tensor>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            tensors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub(crate) fn push(
        &mut self,
        values: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        op: Op,
    ) -> TensorId {
        debug_assert_eq!(values.len(), numel(&shape));
        let id = TensorId(self.tensors.len());
        self.tensors.push(Tensor {
            shape,
            values,
            grad: None,
            requires_grad,
            op,
        });
        id
    }

    /// Record a leaf that participates in differentiation.
    pub fn leaf(&mut self, values: Vec<f64>, shape: &[usize]) -> TensorId {
        assert_eq!(values.len(), numel(shape), "leaf values/shape mismatch");
        self.push(values, shape.to_vec(), true, Op::Leaf)
    }

    /// Record a constant (no gradient tracked).
    pub fn constant(&mut self, values: Vec<f64>, shape: &[usize]) -> TensorId {
        assert_eq!(values.len(), numel(shape), "constant values/shape mismatch");
        self.push(values, shape.to_vec(), false, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.constant(vec![value], &[1])
    }

    pub fn scalar_leaf(&mut self, value: f64) -> TensorId {
        self.leaf(vec![value], &[1])
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.tensors[id.0].values
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.tensors[id.0].shape
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.tensors[id.0].requires_grad
    }

    /// Gradient of the most recent backward pass, if this tensor received one.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.tensors[id.0].grad.as_deref()
    }

    pub fn check_finite(&self, id: TensorId, context: &str) -> Result<()> {
        if self.tensors[id.0].values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    /// Backpropagate from a scalar loss.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if numel(&self.tensors[loss.0].shape) != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.tensors[loss.0].shape
            )));
        }
        self.backward_seeded(&[(loss, vec![1.0])])
    }

    /// Backpropagate from explicit output gradients. Gradients are reset
    /// first, so repeated calls are pure.
    pub fn backward_seeded(&mut self, seeds: &[(TensorId, Vec<f64>)]) -> Result<()> {
        for t in &mut self.tensors {
            match &mut t.grad {
                Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
                None => {
                    if t.requires_grad {
                        t.grad = Some(vec![0.0; t.values.len()]);
                    }
                }
            }
        }
        for (id, seed) in seeds {
            let t = &mut self.tensors[id.0];
            if seed.len() != t.values.len() {
                return Err(Error::ShapeMismatch(format!(
                    "seed length {} does not match tensor numel {}",
                    seed.len(),
                    t.values.len()
                )));
            }
            if t.grad.is_none() {
                t.grad = Some(vec![0.0; t.values.len()]);
            }
            let g = t.grad.as_mut().unwrap();
            for (gi, si) in g.iter_mut().zip(seed) {
                *gi += si;
            }
        }
        for i in (0..self.tensors.len()).rev() {
            self.backward_node(i)?;
        }
        Ok(())
    }
}
