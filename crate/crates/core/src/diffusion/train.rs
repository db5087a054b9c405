//! ε-prediction loss, its gradients and the seeded Adam training loop.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, TrainingMeta};
use super::network::{Denoiser, NetworkConfig, Params};
use super::schedule::NoiseSchedule;
use super::window::{assemble_input, forward_noise, LatentWindow};
use crate::error::{Error, Result};
use crate::palette::{kmeans_extract, Palette};
use crate::scalar::Scalar;
use crate::vidio::{Frame, Video};

/// One training window with its sampled timestep and noise.
#[derive(Debug, Clone)]
pub struct TrainingExample<T = f32> {
    /// Clean RGB window (3 channels).
    pub color: LatentWindow<T>,
    /// Matching gray window (1 channel).
    pub gray: LatentWindow<T>,
    pub ref_frame: Frame<T>,
    pub palette: Palette,
    pub t: usize,
    pub eps: LatentWindow<T>,
}

/// Mean squared error between `eps` and the denoiser's prediction, over every
/// element of every example.
pub fn training_loss<T: Scalar>(
    batch: &[TrainingExample<T>],
    config: &NetworkConfig,
    params: &Params<T>,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    loss_impl(batch, config, params, schedule, false).map(|(loss, _)| loss)
}

/// Loss together with its exact gradient for every parameter tensor.
pub fn loss_and_grad<T: Scalar>(
    batch: &[TrainingExample<T>],
    config: &NetworkConfig,
    params: &Params<T>,
    schedule: &NoiseSchedule,
) -> Result<(f64, Params<T>)> {
    let (loss, grad) = loss_impl(batch, config, params, schedule, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn loss_impl<T: Scalar>(
    batch: &[TrainingExample<T>],
    config: &NetworkConfig,
    params: &Params<T>,
    schedule: &NoiseSchedule,
    want_grad: bool,
) -> Result<(f64, Option<Params<T>>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let denoiser = Denoiser::new(config, params);
    let count: usize = batch.iter().map(|ex| ex.eps.data().len()).sum();
    let scale = T::of(2.0 / count as f64);
    let mut sum_sq = 0.0f64;
    let mut grad = want_grad.then(|| Params::zeros(config));
    for ex in batch {
        let z_t = forward_noise(&ex.color, ex.t, &ex.eps, schedule)?;
        let z_in = assemble_input(&ex.gray, &z_t)?;
        let (pred, cache) = denoiser.forward(&z_in, ex.t, &ex.palette, &ex.ref_frame)?;
        let residual: Vec<T> = pred.data().iter().zip(ex.eps.data()).map(|(&p, &e)| p - e).collect();
        sum_sq += residual.iter().map(|r| r.as_f64() * r.as_f64()).sum::<f64>();
        if let Some(grad) = grad.as_mut() {
            let [n, c, h, w] = pred.shape();
            let dout = LatentWindow::new(n, c, h, w, residual.iter().map(|&r| r * scale).collect())?;
            let g = denoiser.backward(&cache, &ex.ref_frame, &dout)?;
            for ((_, acc), (_, gi)) in grad.iter_mut().zip(g.iter()) {
                for (a, b) in acc.data.iter_mut().zip(&gi.data) {
                    *a += *b;
                }
            }
        }
    }
    Ok((sum_sq / count as f64, grad))
}

/// Adam with bias correction and a linear learning-rate warmup.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    step: usize,
    m: Params<T>,
    v: Params<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: &NetworkConfig, lr: f64, warmup_steps: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps,
            step: 0,
            m: Params::zeros(config),
            v: Params::zeros(config),
        }
    }

    pub fn learning_rate(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * (step as f64 / self.warmup_steps as f64).min(1.0)
        }
    }

    pub fn update(&mut self, params: &mut Params<T>, grad: &Params<T>) {
        self.step += 1;
        let lr = self.learning_rate(self.step);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, eps) = (T::one(), T::of(self.eps));
        let step_size = T::of(lr / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let tensors = params
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (one - b1) * gi;
                v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
                p.data[i] -= step_size * m.data[i] / (v.data[i].sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    /// Probability that a training example is conditioned on the null palette
    /// and a black reference frame instead of its own. Zero leaves the sampling
    /// stream untouched.
    pub palette_dropout: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 1000,
            lr: 1e-3,
            seed: 0,
            batch_size: 1,
            warmup_steps: 100,
            palette_dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport<T = f32> {
    pub checkpoint: Checkpoint<T>,
    /// Loss at every step, in order.
    pub losses: Vec<f64>,
}

impl<T> TrainReport<T> {
    /// Mean loss over the first and last `window` steps.
    pub fn loss_drop(&self, window: usize) -> Option<(f64, f64)> {
        if self.losses.len() < window || window == 0 {
            return None;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((
            mean(&self.losses[..window]),
            mean(&self.losses[self.losses.len() - window..]),
        ))
    }
}

/// Trains on `(color, gray)` clip pairs. See [`train_with_progress`].
pub fn train<T: Scalar>(
    dataset: &[(Video<T>, Video<T>)],
    config: &NetworkConfig,
    options: &TrainOptions,
) -> Result<TrainReport<T>> {
    train_with_progress(dataset, config, options, |_, _| {})
}

/// Each step samples, from one seeded stream: a clip, a window start, a
/// reference frame (whose K-means palette conditions the step), a timestep and
/// Gaussian noise; then applies one Adam update.
pub fn train_with_progress<T: Scalar>(
    dataset: &[(Video<T>, Video<T>)],
    config: &NetworkConfig,
    options: &TrainOptions,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainReport<T>> {
    config.validate()?;
    let n = config.window_frames;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    for (i, (color, gray)) in dataset.iter().enumerate() {
        if color.len() < n || gray.len() != color.len() {
            return Err(Error::InvalidArgument(format!(
                "clip {i} has {} frames, need at least {n}",
                color.len()
            )));
        }
        if color.channels() != 3 || gray.channels() != 1 {
            return Err(Error::InvalidArgument(format!(
                "clip {i} must pair an RGB video with a gray video"
            )));
        }
        if color.width() != config.width || color.height() != config.height {
            return Err(Error::DimensionMismatch(format!(
                "clip {i} is {}x{}, network expects {}x{}",
                color.width(),
                color.height(),
                config.width,
                config.height
            )));
        }
    }
    if !(0.0..=1.0).contains(&options.palette_dropout) {
        return Err(Error::InvalidArgument(format!(
            "palette dropout {} outside [0, 1]",
            options.palette_dropout
        )));
    }
    if options.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }

    let schedule = config.schedule()?;
    let mut params = Params::<T>::init(config, options.seed);
    let mut adam = Adam::new(config, options.lr, options.warmup_steps);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x7472_6169_6e00_0000);
    let mut palettes: HashMap<(usize, usize), Palette> = HashMap::new();
    let mut losses = Vec::with_capacity(options.steps);

    for step in 1..=options.steps {
        let mut batch = Vec::with_capacity(options.batch_size);
        for _ in 0..options.batch_size {
            let clip = rng.gen_range(0..dataset.len());
            let (color, gray) = &dataset[clip];
            let start = rng.gen_range(0..=color.len() - n);
            let ref_idx = rng.gen_range(0..color.len());
            let t = rng.gen_range(1..=config.timesteps);
            let eps = LatentWindow::randn(n, 3, config.height, config.width, &mut rng);
            let mut ref_frame = color.frames()[ref_idx].clone();
            let mut palette = match palettes.get(&(clip, ref_idx)) {
                Some(p) => *p,
                None => {
                    let p = kmeans_extract(std::slice::from_ref(&ref_frame), options.seed, 100)?;
                    palettes.insert((clip, ref_idx), p);
                    p
                }
            };
            if options.palette_dropout > 0.0 && rng.gen_bool(options.palette_dropout) {
                palette = Palette::null();
                ref_frame = palette.swatch(ref_frame.width(), ref_frame.height())?;
            }
            batch.push(TrainingExample {
                color: LatentWindow::from_frames(&color.frames()[start..start + n])?,
                gray: LatentWindow::from_frames(&gray.frames()[start..start + n])?,
                ref_frame,
                palette,
                t,
                eps,
            });
        }
        let (loss, grad) = loss_and_grad(&batch, config, &params, &schedule)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        adam.update(&mut params, &grad);
        if !params.is_finite() {
            return Err(Error::Diverged { step, loss: f64::NAN });
        }
        losses.push(loss);
        progress(step, loss);
    }

    Ok(TrainReport {
        checkpoint: Checkpoint {
            config: config.clone(),
            params,
            meta: TrainingMeta {
                steps: options.steps,
                final_loss: losses.last().copied(),
                seed: options.seed,
            },
        },
        losses,
    })
}
