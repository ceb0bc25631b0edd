//! Iterative radix-2 complex FFT with per-thread table caching.
//!
//! Stereo filtering uses the packing trick: two real channels enter as the
//! real/imaginary parts of one complex signal, the spectrum is multiplied by
//! a Hermitian-symmetric response, and the inverse transform returns both
//! filtered channels at once.

use super::Real;
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

pub struct FftTables<T> {
    size: usize,
    rev: Vec<u32>,
    /// Full-resolution twiddles: cos/sin of -2*pi*j/size for j < size/2.
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Real> FftTables<T> {
    fn new(size: usize) -> FftTables<T> {
        assert!(size.is_power_of_two() && size >= 2, "fft size must be a power of two");
        let bits = size.trailing_zeros();
        let mut rev = vec![0u32; size];
        for (i, r) in rev.iter_mut().enumerate() {
            *r = (i as u32).reverse_bits() >> (32 - bits);
        }
        let half = size / 2;
        let mut cos = vec![T::zero(); half];
        let mut sin = vec![T::zero(); half];
        for j in 0..half {
            let ang = -2.0 * std::f64::consts::PI * j as f64 / size as f64;
            cos[j] = super::c(ang.cos());
            sin[j] = super::c(ang.sin());
        }
        FftTables { size, rev, cos, sin }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// In-place forward transform of split re/im arrays.
    pub fn forward(&self, re: &mut [T], im: &mut [T]) {
        self.transform(re, im, false);
    }

    /// In-place inverse transform (includes the 1/N scale).
    pub fn inverse(&self, re: &mut [T], im: &mut [T]) {
        self.transform(re, im, true);
        let scale = super::c::<T>(1.0 / self.size as f64);
        for v in re.iter_mut() {
            *v *= scale;
        }
        for v in im.iter_mut() {
            *v *= scale;
        }
    }

    fn transform(&self, re: &mut [T], im: &mut [T], invert: bool) {
        let n = self.size;
        assert_eq!(re.len(), n);
        assert_eq!(im.len(), n);
        for i in 0..n {
            let j = self.rev[i] as usize;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut m = 2;
        while m <= n {
            let half = m / 2;
            let stride = n / m;
            let mut k = 0;
            while k < n {
                for j in 0..half {
                    let wr = self.cos[j * stride];
                    let wi = if invert {
                        -self.sin[j * stride]
                    } else {
                        self.sin[j * stride]
                    };
                    let a = k + j;
                    let b = a + half;
                    let tr = wr * re[b] - wi * im[b];
                    let ti = wr * im[b] + wi * re[b];
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
                k += m;
            }
            m <<= 1;
        }
    }
}

thread_local! {
    static TABLES_F64: RefCell<HashMap<usize, Rc<FftTables<f64>>>> = RefCell::new(HashMap::new());
    static TABLES_F32: RefCell<HashMap<usize, Rc<FftTables<f32>>>> = RefCell::new(HashMap::new());
}

pub fn tables_f64(size: usize) -> Rc<FftTables<f64>> {
    TABLES_F64.with(|m| {
        Rc::clone(
            m.borrow_mut()
                .entry(size)
                .or_insert_with(|| Rc::new(FftTables::new(size))),
        )
    })
}

pub fn tables_f32(size: usize) -> Rc<FftTables<f32>> {
    TABLES_F32.with(|m| {
        Rc::clone(
            m.borrow_mut()
                .entry(size)
                .or_insert_with(|| Rc::new(FftTables::new(size))),
        )
    })
}

pub fn next_pow2(n: usize) -> usize {
    n.next_power_of_two().max(2)
}

/// Filter both channels with one Hermitian response given on bins
/// `0..=size/2`. The response is mirrored to the conjugate half internally.
/// Inputs shorter than `size` are zero-padded; outputs are truncated back.
pub fn filter_stereo_hermitian<T: Real>(
    left: &[T],
    right: &[T],
    h_re: &[f64],
    h_im: &[f64],
    size: usize,
) -> (Vec<T>, Vec<T>) {
    let n = left.len();
    debug_assert_eq!(right.len(), n);
    debug_assert!(size >= n && size.is_power_of_two());
    debug_assert_eq!(h_re.len(), size / 2 + 1);
    let tables = T::fft_tables(size);
    let mut re = vec![T::zero(); size];
    let mut im = vec![T::zero(); size];
    re[..n].copy_from_slice(left);
    im[..n].copy_from_slice(right);
    tables.forward(&mut re, &mut im);
    apply_hermitian(&mut re, &mut im, h_re, h_im, size);
    tables.inverse(&mut re, &mut im);
    (re[..n].to_vec(), im[..n].to_vec())
}

/// Multiply a packed spectrum by a Hermitian response (given on 0..=size/2).
pub fn apply_hermitian<T: Real>(
    re: &mut [T],
    im: &mut [T],
    h_re: &[f64],
    h_im: &[f64],
    size: usize,
) {
    let half = size / 2;
    for k in 0..size {
        let (hr, hi) = if k <= half {
            (h_re[k], h_im[k])
        } else {
            (h_re[size - k], -h_im[size - k])
        };
        let hr = super::c::<T>(hr);
        let hi = super::c::<T>(hi);
        let r = re[k];
        let i = im[k];
        re[k] = r * hr - i * hi;
        im[k] = r * hi + i * hr;
    }
}

/// Linear convolution of both channels with one real kernel, truncated to
/// the input length.
pub fn convolve_stereo_truncated<T: Real>(
    left: &[T],
    right: &[T],
    kernel: &[f64],
) -> (Vec<T>, Vec<T>) {
    let n = left.len();
    let size = next_pow2(n + kernel.len() - 1);
    let tables = T::fft_tables(size);
    // kernel spectrum (real input -> Hermitian), computed in T
    let mut kre = vec![T::zero(); size];
    let mut kim = vec![T::zero(); size];
    for (d, s) in kre.iter_mut().zip(kernel) {
        *d = super::c(*s);
    }
    tables.forward(&mut kre, &mut kim);
    let mut re = vec![T::zero(); size];
    let mut im = vec![T::zero(); size];
    re[..n].copy_from_slice(left);
    im[..n].copy_from_slice(right);
    tables.forward(&mut re, &mut im);
    for k in 0..size {
        let r = re[k];
        let i = im[k];
        re[k] = r * kre[k] - i * kim[k];
        im[k] = r * kim[k] + i * kre[k];
    }
    tables.inverse(&mut re, &mut im);
    (re[..n].to_vec(), im[..n].to_vec())
}
