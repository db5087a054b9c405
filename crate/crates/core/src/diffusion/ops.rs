//! Forward and backward kernels for the denoiser's layers.
//!
//! Feature maps are planar per frame: `channels × height × width`.

use crate::scalar::{axpy, dot, Scalar};

/// 3×3 convolution, stride 1, zero padding 1.
///
/// Inputs are zero-padded to `(h + 2) × (w + 2)` so that every tap becomes a
/// single contiguous multiply-add over the flattened padded rows; the two
/// extra columns per row of the intermediate are discarded.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv3x3 {
    pub ci: usize,
    pub co: usize,
    pub h: usize,
    pub w: usize,
}

impl Conv3x3 {
    pub fn new(ci: usize, co: usize, h: usize, w: usize) -> Self {
        Conv3x3 { ci, co, h, w }
    }

    #[inline]
    fn pw(&self) -> usize {
        self.w + 2
    }

    #[inline]
    pub fn padded_len(&self) -> usize {
        (self.h + 2) * self.pw()
    }

    /// Flattened span of valid output positions in padded-row coordinates.
    #[inline]
    fn span(&self) -> usize {
        (self.h - 1) * self.pw() + self.w
    }

    #[inline]
    fn tap(&self, ky: usize, kx: usize) -> usize {
        ky * self.pw() + kx
    }

    /// Zero-pads `ci` planes of `h × w`.
    pub fn pad<T: Scalar>(&self, input: &[T]) -> Vec<T> {
        let (h, w, pw) = (self.h, self.w, self.pw());
        debug_assert_eq!(input.len(), self.ci * h * w);
        let mut out = vec![T::zero(); self.ci * self.padded_len()];
        for c in 0..self.ci {
            let src = &input[c * h * w..(c + 1) * h * w];
            let dst = &mut out[c * self.padded_len()..(c + 1) * self.padded_len()];
            for y in 0..h {
                dst[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
        out
    }

    /// `out[o] = bias[o] + Σ_i weight[o, i] ⋆ input[i]`; `padded` comes from [`Conv3x3::pad`].
    pub fn forward<T: Scalar>(&self, padded: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
        let (h, w, pw, span, plen) = (self.h, self.w, self.pw(), self.span(), self.padded_len());
        debug_assert_eq!(weight.len(), self.co * self.ci * 9);
        debug_assert_eq!(out.len(), self.co * h * w);
        let mut buf = vec![T::zero(); span];
        for o in 0..self.co {
            buf.iter_mut().for_each(|v| *v = bias[o]);
            for i in 0..self.ci {
                let plane = &padded[i * plen..(i + 1) * plen];
                let k = &weight[(o * self.ci + i) * 9..(o * self.ci + i + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let off = self.tap(ky, kx);
                        axpy(k[ky * 3 + kx], &plane[off..off + span], &mut buf);
                    }
                }
            }
            let dst = &mut out[o * h * w..(o + 1) * h * w];
            for y in 0..h {
                dst[y * w..(y + 1) * w].copy_from_slice(&buf[y * pw..y * pw + w]);
            }
        }
    }

    /// Accumulates weight and bias gradients, and the input gradient when `dinput` is given.
    pub fn backward<T: Scalar>(
        &self,
        padded: &[T],
        weight: &[T],
        dout: &[T],
        dweight: &mut [T],
        dbias: &mut [T],
        mut dinput: Option<&mut [T]>,
    ) {
        let (h, w, pw, span, plen) = (self.h, self.w, self.pw(), self.span(), self.padded_len());
        let mut dbuf = vec![T::zero(); span];
        let mut dpad = if dinput.is_some() {
            vec![T::zero(); self.ci * plen]
        } else {
            Vec::new()
        };
        for o in 0..self.co {
            let g = &dout[o * h * w..(o + 1) * h * w];
            for y in 0..h {
                dbuf[y * pw..y * pw + w].copy_from_slice(&g[y * w..(y + 1) * w]);
            }
            dbias[o] += g.iter().copied().sum::<T>();
            for i in 0..self.ci {
                let plane = &padded[i * plen..(i + 1) * plen];
                let base = (o * self.ci + i) * 9;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let off = self.tap(ky, kx);
                        dweight[base + ky * 3 + kx] += dot(&dbuf, &plane[off..off + span]);
                        if dinput.is_some() {
                            let dst = &mut dpad[i * plen + off..i * plen + off + span];
                            axpy(weight[base + ky * 3 + kx], &dbuf, dst);
                        }
                    }
                }
            }
        }
        if let Some(dinput) = dinput.as_deref_mut() {
            for i in 0..self.ci {
                let src = &dpad[i * plen..(i + 1) * plen];
                let dst = &mut dinput[i * h * w..(i + 1) * h * w];
                for y in 0..h {
                    for x in 0..w {
                        dst[y * w + x] += src[(y + 1) * pw + x + 1];
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `x · σ(x)`
#[inline]
pub(crate) fn swish<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

/// `d/dx [x · σ(x)] = σ(x) · (1 + x · (1 − σ(x)))`
#[inline]
pub(crate) fn swish_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Depthwise kernel-3 convolution over the frame axis (zero padded) followed
/// by a pointwise channel mix with bias.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TemporalMix {
    pub frames: usize,
    pub channels: usize,
    pub plane: usize,
}

impl TemporalMix {
    /// Returns `(depthwise, out)`; both are `frames × channels × plane`.
    pub fn forward<T: Scalar>(&self, input: &[T], depthwise: &[T], pointwise: &[T], bias: &[T]) -> (Vec<T>, Vec<T>) {
        let (n_frames, c_n, p) = (self.frames, self.channels, self.plane);
        let fl = c_n * p;
        let mut mixed = vec![T::zero(); n_frames * fl];
        for n in 0..n_frames {
            for c in 0..c_n {
                let dst = &mut mixed[n * fl + c * p..n * fl + (c + 1) * p];
                for k in 0..3 {
                    let Some(src_n) = (n + k).checked_sub(1).filter(|&m| m < n_frames) else {
                        continue;
                    };
                    let src = &input[src_n * fl + c * p..src_n * fl + (c + 1) * p];
                    axpy(depthwise[c * 3 + k], src, dst);
                }
            }
        }
        let mut out = vec![T::zero(); n_frames * fl];
        for n in 0..n_frames {
            for o in 0..c_n {
                let dst = &mut out[n * fl + o * p..n * fl + (o + 1) * p];
                dst.iter_mut().for_each(|v| *v = bias[o]);
                for c in 0..c_n {
                    axpy(pointwise[o * c_n + c], &mixed[n * fl + c * p..n * fl + (c + 1) * p], dst);
                }
            }
        }
        (mixed, out)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Scalar>(
        &self,
        input: &[T],
        mixed: &[T],
        depthwise: &[T],
        pointwise: &[T],
        dout: &[T],
        ddepthwise: &mut [T],
        dpointwise: &mut [T],
        dbias: &mut [T],
    ) -> Vec<T> {
        let (n_frames, c_n, p) = (self.frames, self.channels, self.plane);
        let fl = c_n * p;
        let mut dmixed = vec![T::zero(); n_frames * fl];
        for n in 0..n_frames {
            for o in 0..c_n {
                let g = &dout[n * fl + o * p..n * fl + (o + 1) * p];
                dbias[o] += g.iter().copied().sum::<T>();
                for c in 0..c_n {
                    let m = &mixed[n * fl + c * p..n * fl + (c + 1) * p];
                    dpointwise[o * c_n + c] += dot(g, m);
                    axpy(pointwise[o * c_n + c], g, &mut dmixed[n * fl + c * p..n * fl + (c + 1) * p]);
                }
            }
        }
        let mut dinput = vec![T::zero(); n_frames * fl];
        for n in 0..n_frames {
            for c in 0..c_n {
                let g = &dmixed[n * fl + c * p..n * fl + (c + 1) * p];
                for k in 0..3 {
                    let Some(src_n) = (n + k).checked_sub(1).filter(|&m| m < n_frames) else {
                        continue;
                    };
                    let x = &input[src_n * fl + c * p..src_n * fl + (c + 1) * p];
                    ddepthwise[c * 3 + k] += dot(g, x);
                    axpy(depthwise[c * 3 + k], g, &mut dinput[src_n * fl + c * p..src_n * fl + (c + 1) * p]);
                }
            }
        }
        dinput
    }
}
