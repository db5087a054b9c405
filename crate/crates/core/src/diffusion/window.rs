use rand::Rng;
use rand_distr::StandardNormal;

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vidio::{Frame, Video};

/// A dense `frames × channels × height × width` block of scalars.
///
/// At this scale pixel space stands in for a latent space, so a window holds
/// RGB (3 channels), gray (1 channel) or assembled denoiser input (4 channels).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentWindow<T = f32> {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> LatentWindow<T> {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != frames * channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{frames}x{channels}x{height}x{width} window needs {} values, got {}",
                frames * channels * height * width,
                data.len()
            )));
        }
        Ok(LatentWindow {
            frames,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        LatentWindow {
            frames,
            channels,
            height,
            width,
            data: vec![T::zero(); frames * channels * height * width],
        }
    }

    pub fn filled(frames: usize, channels: usize, height: usize, width: usize, v: T) -> Self {
        LatentWindow {
            frames,
            channels,
            height,
            width,
            data: vec![v; frames * channels * height * width],
        }
    }

    /// Standard-normal entries.
    pub fn randn<R: Rng>(frames: usize, channels: usize, height: usize, width: usize, rng: &mut R) -> Self {
        let data = (0..frames * channels * height * width)
            .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        LatentWindow {
            frames,
            channels,
            height,
            width,
            data,
        }
    }

    /// Planar window from a slice of video frames.
    pub fn from_frames(frames: &[Frame<T>]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty frame slice".into()))?;
        let (c, h, w) = (first.channels(), first.height(), first.width());
        let mut data = Vec::with_capacity(frames.len() * c * h * w);
        for f in frames {
            if f.channels() != c || f.height() != h || f.width() != w {
                return Err(Error::ShapeMismatch("frames differ in geometry".into()));
            }
            for ch in 0..c {
                data.extend(f.plane(ch));
            }
        }
        LatentWindow::new(frames.len(), c, h, w, data)
    }

    pub fn from_video(video: &Video<T>) -> Result<Self> {
        LatentWindow::from_frames(video.frames())
    }

    /// Converts back to frames, clamping to `[0, 1]`.
    pub fn to_frames(&self) -> Result<Vec<Frame<T>>> {
        (0..self.frames)
            .map(|n| Frame::from_planes(self.width, self.height, self.channels, self.frame(n)))
            .collect()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, n: usize) -> &[T] {
        let len = self.frame_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.frame_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Frames `start..start + count` as a new window.
    pub fn slice_frames(&self, start: usize, count: usize) -> LatentWindow<T> {
        let len = self.frame_len();
        LatentWindow {
            frames: count,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data[start * len..(start + count) * len].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> LatentWindow<U> {
        LatentWindow {
            frames: self.frames,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// `sqrt(ᾱ_t)·z0 + sqrt(1 − ᾱ_t)·eps`, elementwise.
pub fn forward_noise<T: Scalar>(
    z0: &LatentWindow<T>,
    t: usize,
    eps: &LatentWindow<T>,
    schedule: &NoiseSchedule,
) -> Result<LatentWindow<T>> {
    if z0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch(format!(
            "signal {:?} vs noise {:?}",
            z0.shape(),
            eps.shape()
        )));
    }
    schedule.check_timestep(t)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
    let data = z0.data.iter().zip(&eps.data).map(|(&x, &e)| a * x + b * e).collect();
    LatentWindow::new(z0.frames, z0.channels, z0.height, z0.width, data)
}

/// Per-frame channel concatenation: gray channel first, then the noisy RGB channels.
pub fn assemble_input<T: Scalar>(z_gray: &LatentWindow<T>, z_t: &LatentWindow<T>) -> Result<LatentWindow<T>> {
    if z_gray.channels != 1 || z_t.channels != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected 1-channel gray and 3-channel noisy windows, got {} and {}",
            z_gray.channels, z_t.channels
        )));
    }
    if z_gray.frames != z_t.frames || z_gray.height != z_t.height || z_gray.width != z_t.width {
        return Err(Error::ShapeMismatch(format!(
            "gray {:?} vs noisy {:?}",
            z_gray.shape(),
            z_t.shape()
        )));
    }
    let mut data = Vec::with_capacity(z_gray.data.len() + z_t.data.len());
    for n in 0..z_gray.frames {
        data.extend_from_slice(z_gray.frame(n));
        data.extend_from_slice(z_t.frame(n));
    }
    LatentWindow::new(z_gray.frames, 4, z_gray.height, z_gray.width, data)
}

/// Inverse of [`assemble_input`].
pub fn disassemble_input<T: Scalar>(z_in: &LatentWindow<T>) -> Result<(LatentWindow<T>, LatentWindow<T>)> {
    if z_in.channels != 4 {
        return Err(Error::ShapeMismatch(format!(
            "expected 4 channels, got {}",
            z_in.channels
        )));
    }
    let plane = z_in.height * z_in.width;
    let mut gray = Vec::with_capacity(z_in.frames * plane);
    let mut rgb = Vec::with_capacity(z_in.frames * 3 * plane);
    for n in 0..z_in.frames {
        let f = z_in.frame(n);
        gray.extend_from_slice(&f[..plane]);
        rgb.extend_from_slice(&f[plane..]);
    }
    Ok((
        LatentWindow::new(z_in.frames, 1, z_in.height, z_in.width, gray)?,
        LatentWindow::new(z_in.frames, 3, z_in.height, z_in.width, rgb)?,
    ))
}
