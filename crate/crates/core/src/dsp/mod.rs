//! Audio DSP: buffers, effects processors, chain application, BS.1770
//! loudness and the multi-resolution STFT distance.

pub mod buffer;
pub mod chain;
pub mod effects;
pub mod fft;
pub mod loudness;
pub mod mrstft;
pub mod wav;

pub use buffer::AudioBuffer;
pub use chain::{apply_chain, apply_chain_tape, sample_chain, ChainId, FxChain};
pub use effects::{apply_effect, apply_effect_tape, EffectSpec, EffectType};
pub use loudness::{measure_lufs, normalize_lufs, NormalizeReport};
pub use mrstft::{mrstft_loss, mrstft_loss_tape, mrstft_components, MrStftConfig};

use num_traits::{Float, FloatConst, NumAssign};
use std::fmt::Debug;
use std::rc::Rc;

/// Scalar type for signal processing. Rendering for training runs in `f32`;
/// every oracle and gradient path uses `f64`.
pub trait Real: Float + FloatConst + NumAssign + Send + Sync + Debug + 'static {
    fn fft_tables(size: usize) -> Rc<fft::FftTables<Self>>;
}

impl Real for f32 {
    fn fft_tables(size: usize) -> Rc<fft::FftTables<f32>> {
        fft::tables_f32(size)
    }
}

impl Real for f64 {
    fn fft_tables(size: usize) -> Rc<fft::FftTables<f64>> {
        fft::tables_f64(size)
    }
}

/// Shorthand for lossy constant conversion into the working scalar type.
#[inline]
pub(crate) fn c<T: Real>(x: f64) -> T {
    T::from(x).unwrap()
}
