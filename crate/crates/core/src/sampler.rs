//! Ancestral DDPM sampling of color windows and progressive long-video
//! colorization by overlapped windows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{assemble_input, predict_eps, Checkpoint, LatentWindow, NoiseSchedule};
use crate::error::{Error, Result};
use crate::palette::Palette;
use crate::scalar::Scalar;
use crate::vidio::{Frame, Video};

/// Segment layout for a video of `video_len` frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub video_len: usize,
    pub window: usize,
    pub overlap: usize,
    pub starts: Vec<usize>,
}

impl WindowPlan {
    /// Frames in each segment; shorter than `window` only when the whole video is.
    pub fn segment_len(&self) -> usize {
        self.window.min(self.video_len)
    }

    /// Number of segments covering each frame.
    pub fn coverage(&self) -> Vec<usize> {
        let mut cover = vec![0; self.video_len];
        for &s in &self.starts {
            for c in &mut cover[s..s + self.segment_len()] {
                *c += 1;
            }
        }
        cover
    }
}

/// Starts at `0, stride, 2·stride, …` with `stride = window − overlap`; the last
/// segment is pulled back to end exactly at the final frame.
pub fn plan_windows(video_len: usize, window: usize, overlap: usize) -> Result<WindowPlan> {
    if video_len == 0 {
        return Err(Error::InvalidArgument("empty video".into()));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    if overlap >= window {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap} must be smaller than window {window}"
        )));
    }
    let stride = window - overlap;
    let mut starts = vec![0];
    if video_len > window {
        while let Some(&last) = starts.last() {
            if last + window >= video_len {
                break;
            }
            starts.push((last + stride).min(video_len - window));
        }
    }
    Ok(WindowPlan {
        video_len,
        window,
        overlap,
        starts,
    })
}

/// Deterministic standard-normal tensors addressed by global frame index and
/// denoising step, so overlapping segments see identical noise on shared frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalNoise {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

const INITIAL_STEP: u64 = u64::MAX;

impl GlobalNoise {
    pub fn new(seed: u64, height: usize, width: usize) -> Self {
        GlobalNoise {
            seed,
            height,
            width,
        }
    }

    fn rng(&self, frame: usize, step: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(frame as u64).to_le_bytes());
        key[16..24].copy_from_slice(&step.to_le_bytes());
        key[24..].copy_from_slice(b"palvid\0\0");
        ChaCha8Rng::from_seed(key)
    }

    fn draw<T: Scalar>(&self, start: usize, frames: usize, step: u64) -> LatentWindow<T> {
        let len = 3 * self.height * self.width;
        let mut data = Vec::with_capacity(frames * len);
        for f in start..start + frames {
            let w = LatentWindow::<T>::randn(1, 3, self.height, self.width, &mut self.rng(f, step));
            data.extend_from_slice(w.data());
        }
        LatentWindow::new(frames, 3, self.height, self.width, data).expect("consistent shape")
    }

    pub fn slice(&self, start: usize, frames: usize) -> NoiseSlice {
        NoiseSlice {
            noise: *self,
            start,
            frames,
        }
    }
}

/// The frames `start..start + frames` of a [`GlobalNoise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSlice {
    noise: GlobalNoise,
    start: usize,
    frames: usize,
}

impl NoiseSlice {
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Starting point `z_T`.
    pub fn initial<T: Scalar>(&self) -> LatentWindow<T> {
        self.noise.draw(self.start, self.frames, INITIAL_STEP)
    }

    /// Fresh noise `ξ` injected by the step leaving timestep `t`.
    pub fn step<T: Scalar>(&self, t: usize) -> LatentWindow<T> {
        self.noise.draw(self.start, self.frames, t as u64)
    }
}

/// Runs the ancestral loop from `t = T` down to 1 and clamps the result to `[0, 1]`.
pub fn sample_window<T: Scalar>(
    gray: &LatentWindow<T>,
    palette: &Palette,
    ref_frame: &Frame<T>,
    ckpt: &Checkpoint<T>,
    noise: &NoiseSlice,
    schedule: &NoiseSchedule,
) -> Result<LatentWindow<T>> {
    let cfg = &ckpt.config;
    if gray.channels() != 1 || gray.height() != cfg.height || gray.width() != cfg.width {
        return Err(Error::ShapeMismatch(format!(
            "gray window {:?} does not match the checkpoint's {}x{} frames",
            gray.shape(),
            cfg.height,
            cfg.width
        )));
    }
    if noise.frames() != gray.frames()
        || noise.noise.height != gray.height()
        || noise.noise.width != gray.width()
    {
        return Err(Error::ShapeMismatch("noise slice does not match window".into()));
    }
    let z = ancestral(noise.initial::<T>(), noise, schedule, |z, t| {
        predict_eps(&assemble_input(gray, z)?, t, palette, ref_frame, cfg, &ckpt.params)
    })?;
    Ok(clamp_unit(z))
}

/// The reverse loop with an arbitrary noise predictor, unclamped.
fn ancestral<T: Scalar>(
    mut z: LatentWindow<T>,
    noise: &NoiseSlice,
    schedule: &NoiseSchedule,
    mut predict: impl FnMut(&LatentWindow<T>, usize) -> Result<LatentWindow<T>>,
) -> Result<LatentWindow<T>> {
    for t in (1..=schedule.timesteps()).rev() {
        let eps = predict(&z, t)?;
        let coef = T::of(schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt());
        let inv_sqrt_alpha = T::of(1.0 / schedule.alpha(t).sqrt());
        for (zi, &ei) in z.data_mut().iter_mut().zip(eps.data()) {
            *zi = (*zi - coef * ei) * inv_sqrt_alpha;
        }
        if t > 1 {
            let sigma = T::of(schedule.posterior_std(t));
            let xi = noise.step::<T>(t);
            for (zi, &x) in z.data_mut().iter_mut().zip(xi.data()) {
                *zi += sigma * x;
            }
        }
    }
    Ok(z)
}

fn clamp_unit<T: Scalar>(mut z: LatentWindow<T>) -> LatentWindow<T> {
    for v in z.data_mut() {
        *v = if v.is_nan() {
            T::zero()
        } else {
            v.max(T::zero()).min(T::one())
        };
    }
    z
}

/// How segment noise relates across overlapping windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// One global tensor sliced per segment.
    #[default]
    Shared,
    /// A separately seeded tensor per segment.
    Independent,
}

#[derive(Debug, Clone)]
pub struct Progressive<T = f32> {
    pub video: Video<T>,
    pub plan: WindowPlan,
    /// Clamped output of every segment, in plan order.
    pub segments: Vec<LatentWindow<T>>,
}

impl<T: Scalar> Progressive<T> {
    /// Mean absolute difference between consecutive segments on the frames they share.
    pub fn overlap_discrepancy(&self) -> Option<f64> {
        let len = self.plan.segment_len();
        let mut sum = 0.0;
        let mut count = 0usize;
        for k in 1..self.segments.len() {
            let (s0, s1) = (self.plan.starts[k - 1], self.plan.starts[k]);
            for f in s1..(s0 + len).min(s1 + len) {
                let a = self.segments[k - 1].frame(f - s0);
                let b = self.segments[k].frame(f - s1);
                sum += a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).sum::<f64>();
                count += a.len();
            }
        }
        (count > 0).then(|| sum / count as f64)
    }
}

/// Colorizes a gray video of any length with shared global noise.
pub fn progressive_colorize<T: Scalar>(
    gray: &Video<T>,
    palette: &Palette,
    ref_frame: &Frame<T>,
    ckpt: &Checkpoint<T>,
    window: usize,
    overlap: usize,
    seed: u64,
) -> Result<Video<T>> {
    progressive_colorize_with(gray, palette, ref_frame, ckpt, window, overlap, seed, NoiseMode::Shared)
        .map(|p| p.video)
}

/// Splits the video per [`plan_windows`], samples every segment and averages
/// the segment outputs on each frame with equal weights.
#[allow(clippy::too_many_arguments)]
pub fn progressive_colorize_with<T: Scalar>(
    gray: &Video<T>,
    palette: &Palette,
    ref_frame: &Frame<T>,
    ckpt: &Checkpoint<T>,
    window: usize,
    overlap: usize,
    seed: u64,
    mode: NoiseMode,
) -> Result<Progressive<T>> {
    if gray.channels() != 1 {
        return Err(Error::InvalidArgument("colorization needs a 1-channel video".into()));
    }
    let plan = plan_windows(gray.len(), window, overlap)?;
    let schedule = ckpt.config.schedule()?;
    let gray_window = LatentWindow::from_video(gray)?;
    let (h, w) = (gray.height(), gray.width());
    let len = plan.segment_len();

    let mut segments = Vec::with_capacity(plan.starts.len());
    for (k, &start) in plan.starts.iter().enumerate() {
        let noise = match mode {
            NoiseMode::Shared => GlobalNoise::new(seed, h, w),
            NoiseMode::Independent => GlobalNoise::new(seed ^ ((k as u64 + 1) << 40), h, w),
        };
        let out = sample_window(
            &gray_window.slice_frames(start, len),
            palette,
            ref_frame,
            ckpt,
            &noise.slice(start, len),
            &schedule,
        )?;
        segments.push(out);
    }

    let mut acc = LatentWindow::<T>::zeros(gray.len(), 3, h, w);
    for (&start, seg) in plan.starts.iter().zip(&segments) {
        for f in 0..len {
            for (a, &v) in acc.frame_mut(start + f).iter_mut().zip(seg.frame(f)) {
                *a += v;
            }
        }
    }
    for (f, &count) in plan.coverage().iter().enumerate() {
        let inv = T::of(count as f64);
        for v in acc.frame_mut(f) {
            *v /= inv;
        }
    }
    let video = Video::new(acc.to_frames()?, gray.fps())?;
    Ok(Progressive {
        video,
        plan,
        segments,
    })
}
