//! The palette-conditioned spatiotemporal denoiser and its reverse-mode gradients.
//!
//! Topology, per window of `N` frames:
//!
//! 1. `in_conv`: 3×3 conv, 4 → C, per frame.
//! 2. Palette fusion: `W_proj · flatten(palette)` broadcast-added to every position.
//! 3. Timestep embedding: sinusoidal code of `t` (dim 2C) mapped by a C×2C matrix, broadcast-added.
//! 4. Reference embedding: 3×3 conv 3 → C over the reference frame, spatially averaged, broadcast-added.
//! 5. `body1` (3×3 conv + swish), temporal mix, `body2` (3×3 conv + swish).
//! 6. `out_conv`: 3×3 conv C → 3, no activation.

use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{swish, swish_grad, Conv3x3, TemporalMix};
use super::window::LatentWindow;
use crate::error::{Error, Result};
use crate::palette::{Palette, PALETTE_DIM};
use crate::scalar::{dot, Scalar};
use crate::vidio::Frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub window_frames: usize,
    pub height: usize,
    pub width: usize,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub palette_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_channels: 32,
            window_frames: 8,
            height: 32,
            width: 32,
            timesteps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            palette_dim: PALETTE_DIM,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 8 {
            return Err(Error::InvalidArgument("base_channels must be >= 8".into()));
        }
        if self.window_frames < 2 {
            return Err(Error::InvalidArgument("window_frames must be >= 2".into()));
        }
        if self.palette_dim != PALETTE_DIM {
            return Err(Error::InvalidArgument(format!(
                "palette_dim must be {PALETTE_DIM}"
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("empty frame size".into()));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<super::NoiseSchedule> {
        super::make_schedule(self.timesteps, self.beta_start, self.beta_end)
    }
}

/// Every learnable tensor of the fixed topology, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    InConvWeight,
    InConvBias,
    PaletteProj,
    TimeEmbed,
    RefConvWeight,
    RefConvBias,
    Body1Weight,
    Body1Bias,
    TemporalDepthwise,
    TemporalPointwise,
    TemporalBias,
    Body2Weight,
    Body2Bias,
    OutConvWeight,
    OutConvBias,
}

impl ParamId {
    pub const ALL: [ParamId; 15] = [
        ParamId::InConvWeight,
        ParamId::InConvBias,
        ParamId::PaletteProj,
        ParamId::TimeEmbed,
        ParamId::RefConvWeight,
        ParamId::RefConvBias,
        ParamId::Body1Weight,
        ParamId::Body1Bias,
        ParamId::TemporalDepthwise,
        ParamId::TemporalPointwise,
        ParamId::TemporalBias,
        ParamId::Body2Weight,
        ParamId::Body2Bias,
        ParamId::OutConvWeight,
        ParamId::OutConvBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::InConvWeight => "in_conv.weight",
            ParamId::InConvBias => "in_conv.bias",
            ParamId::PaletteProj => "palette_proj.weight",
            ParamId::TimeEmbed => "time_embed.weight",
            ParamId::RefConvWeight => "ref_conv.weight",
            ParamId::RefConvBias => "ref_conv.bias",
            ParamId::Body1Weight => "body1.weight",
            ParamId::Body1Bias => "body1.bias",
            ParamId::TemporalDepthwise => "temporal.depthwise",
            ParamId::TemporalPointwise => "temporal.pointwise",
            ParamId::TemporalBias => "temporal.bias",
            ParamId::Body2Weight => "body2.weight",
            ParamId::Body2Bias => "body2.bias",
            ParamId::OutConvWeight => "out_conv.weight",
            ParamId::OutConvBias => "out_conv.bias",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        ParamId::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn shape(self, config: &NetworkConfig) -> Vec<usize> {
        let c = config.base_channels;
        match self {
            ParamId::InConvWeight => vec![c, 4, 3, 3],
            ParamId::PaletteProj => vec![c, config.palette_dim],
            ParamId::TimeEmbed => vec![c, 2 * c],
            ParamId::RefConvWeight => vec![c, 3, 3, 3],
            ParamId::Body1Weight | ParamId::Body2Weight => vec![c, c, 3, 3],
            ParamId::TemporalDepthwise => vec![c, 3],
            ParamId::TemporalPointwise => vec![c, c],
            ParamId::OutConvWeight => vec![3, c, 3, 3],
            ParamId::OutConvBias => vec![3],
            ParamId::InConvBias
            | ParamId::RefConvBias
            | ParamId::Body1Bias
            | ParamId::TemporalBias
            | ParamId::Body2Bias => vec![c],
        }
    }

    fn is_bias(self) -> bool {
        matches!(
            self,
            ParamId::InConvBias
                | ParamId::RefConvBias
                | ParamId::Body1Bias
                | ParamId::TemporalBias
                | ParamId::Body2Bias
                | ParamId::OutConvBias
        )
    }

    /// Input count feeding one output unit, for initialization scaling.
    pub fn fan_in(self, config: &NetworkConfig) -> usize {
        let shape = self.shape(config);
        shape[1..].iter().product::<usize>().max(1)
    }
}

/// A named, shaped tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }
}

/// All learnable tensors, indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T = f32> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(config: &NetworkConfig) -> Self {
        Params {
            tensors: ParamId::ALL.iter().map(|p| Tensor::zeros(p.shape(config))).collect(),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(config: &NetworkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros(config);
        for id in ParamId::ALL {
            if id.is_bias() {
                continue;
            }
            let bound = 1.0 / (id.fan_in(config) as f64).sqrt();
            for v in params[id].data.iter_mut() {
                *v = T::of(rng.gen_range(-bound..bound));
            }
        }
        params
    }

    pub fn from_tensors(config: &NetworkConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != ParamId::ALL.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                ParamId::ALL.len(),
                tensors.len()
            )));
        }
        for (id, t) in ParamId::ALL.iter().zip(&tensors) {
            let shape = id.shape(config);
            if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::ShapeMismatch(format!(
                    "{} has shape {:?}, expected {:?}",
                    id.name(),
                    t.shape,
                    shape
                )));
            }
        }
        Ok(Params { tensors })
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        ParamId::ALL.into_iter().zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor<T>)> {
        ParamId::ALL.into_iter().zip(self.tensors.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

impl<T> Index<ParamId> for Params<T> {
    type Output = Tensor<T>;

    fn index(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id as usize]
    }
}

impl<T> IndexMut<ParamId> for Params<T> {
    fn index_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id as usize]
    }
}

/// `W_proj · flatten(palette)`, no bias.
pub fn project_palette<T: Scalar>(palette: &Palette, proj: &Tensor<T>) -> Result<Vec<T>> {
    if proj.shape.len() != 2 || proj.shape[1] != PALETTE_DIM {
        return Err(Error::ShapeMismatch(format!(
            "projection must be C x {PALETTE_DIM}, got {:?}",
            proj.shape
        )));
    }
    let v: Vec<T> = palette.flatten().iter().map(|&x| T::of(x)).collect();
    Ok(proj.data.chunks_exact(PALETTE_DIM).map(|row| dot(row, &v)).collect())
}

/// Adds `emb[c]` to every position of channel `c` in every frame.
pub fn fuse_palette<T: Scalar>(features: &LatentWindow<T>, emb: &[T]) -> Result<LatentWindow<T>> {
    if emb.len() != features.channels() {
        return Err(Error::ShapeMismatch(format!(
            "embedding has {} channels, features have {}",
            emb.len(),
            features.channels()
        )));
    }
    let mut out = features.clone();
    let plane = features.height() * features.width();
    for n in 0..features.frames() {
        for (c, chunk) in out.frame_mut(n).chunks_exact_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v += emb[c]);
        }
    }
    Ok(out)
}

/// Interleaved sin/cos code of dimension `2 · channels` with frequencies `10000^(−k/channels)`.
pub fn timestep_embedding<T: Scalar>(t: usize, channels: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * channels);
    for k in 0..channels {
        let freq = 10000f64.powf(-(k as f64) / channels as f64);
        let arg = t as f64 * freq;
        out.push(T::of(arg.sin()));
        out.push(T::of(arg.cos()));
    }
    out
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    frames: usize,
    palette: Vec<T>,
    time_code: Vec<T>,
    ref_padded: Vec<T>,
    input_padded: Vec<T>,
    h0_padded: Vec<T>,
    a1: Vec<T>,
    h1: Vec<T>,
    mixed: Vec<T>,
    h2_padded: Vec<T>,
    a3: Vec<T>,
    h3_padded: Vec<T>,
}

/// Evaluates and differentiates the denoiser for one configuration.
#[derive(Debug, Clone, Copy)]
pub struct Denoiser<'a, T: Scalar> {
    config: &'a NetworkConfig,
    params: &'a Params<T>,
}

impl<'a, T: Scalar> Denoiser<'a, T> {
    pub fn new(config: &'a NetworkConfig, params: &'a Params<T>) -> Self {
        Denoiser { config, params }
    }

    fn check_inputs(&self, z_in: &LatentWindow<T>, ref_frame: &Frame<T>) -> Result<()> {
        let cfg = self.config;
        if z_in.channels() != 4 || z_in.height() != cfg.height || z_in.width() != cfg.width {
            return Err(Error::ShapeMismatch(format!(
                "denoiser input {:?} does not match config 4x{}x{}",
                z_in.shape(),
                cfg.height,
                cfg.width
            )));
        }
        if z_in.frames() == 0 {
            return Err(Error::ShapeMismatch("empty window".into()));
        }
        if ref_frame.channels() != 3 {
            return Err(Error::ShapeMismatch("reference frame must be RGB".into()));
        }
        Ok(())
    }

    /// Predicted noise plus the cache for [`Denoiser::backward`].
    pub fn forward(
        &self,
        z_in: &LatentWindow<T>,
        t: usize,
        palette: &Palette,
        ref_frame: &Frame<T>,
    ) -> Result<(LatentWindow<T>, ForwardCache<T>)> {
        self.check_inputs(z_in, ref_frame)?;
        let p = self.params;
        let c = self.config.base_channels;
        let (n_frames, h, w) = (z_in.frames(), self.config.height, self.config.width);
        let plane = h * w;
        let fl = c * plane;

        // per-channel additive conditioning
        let palette_vec: Vec<T> = palette.flatten().iter().map(|&x| T::of(x)).collect();
        let palette_emb = project_palette(palette, &p[ParamId::PaletteProj])?;
        let time_code = timestep_embedding::<T>(t, c);
        let time_emb: Vec<T> = p[ParamId::TimeEmbed]
            .data
            .chunks_exact(2 * c)
            .map(|row| dot(row, &time_code))
            .collect();
        let ref_conv = Conv3x3::new(3, c, ref_frame.height(), ref_frame.width());
        let ref_planes: Vec<T> = (0..3).flat_map(|ch| ref_frame.plane(ch)).collect();
        let ref_padded = ref_conv.pad(&ref_planes);
        let mut ref_out = vec![T::zero(); c * ref_frame.pixel_count()];
        ref_conv.forward(
            &ref_padded,
            &p[ParamId::RefConvWeight].data,
            &p[ParamId::RefConvBias].data,
            &mut ref_out,
        );
        let ref_count = T::of(ref_frame.pixel_count() as f64);
        let ref_emb: Vec<T> = ref_out
            .chunks_exact(ref_frame.pixel_count())
            .map(|ch| ch.iter().copied().sum::<T>() / ref_count)
            .collect();
        let shift: Vec<T> = (0..c)
            .map(|o| p[ParamId::InConvBias].data[o] + palette_emb[o] + time_emb[o] + ref_emb[o])
            .collect();

        let in_conv = Conv3x3::new(4, c, h, w);
        let body = Conv3x3::new(c, c, h, w);
        let out_conv = Conv3x3::new(c, 3, h, w);

        let mut input_padded = Vec::with_capacity(n_frames * in_conv.padded_len() * 4);
        let mut h0_padded = Vec::with_capacity(n_frames * body.padded_len() * c);
        let mut a1 = vec![T::zero(); n_frames * fl];
        let mut h0 = vec![T::zero(); fl];
        for n in 0..n_frames {
            let xp = in_conv.pad(z_in.frame(n));
            in_conv.forward(&xp, &p[ParamId::InConvWeight].data, &shift, &mut h0);
            input_padded.extend(xp);
            let hp = body.pad(&h0);
            body.forward(
                &hp,
                &p[ParamId::Body1Weight].data,
                &p[ParamId::Body1Bias].data,
                &mut a1[n * fl..(n + 1) * fl],
            );
            h0_padded.extend(hp);
        }
        let h1: Vec<T> = a1.iter().map(|&x| swish(x)).collect();

        let temporal = TemporalMix {
            frames: n_frames,
            channels: c,
            plane,
        };
        let (mixed, h2) = temporal.forward(
            &h1,
            &p[ParamId::TemporalDepthwise].data,
            &p[ParamId::TemporalPointwise].data,
            &p[ParamId::TemporalBias].data,
        );

        let mut h2_padded = Vec::with_capacity(n_frames * body.padded_len() * c);
        let mut h3_padded = Vec::with_capacity(n_frames * body.padded_len() * c);
        let mut a3 = vec![T::zero(); n_frames * fl];
        let mut out = vec![T::zero(); n_frames * 3 * plane];
        for n in 0..n_frames {
            let hp = body.pad(&h2[n * fl..(n + 1) * fl]);
            body.forward(
                &hp,
                &p[ParamId::Body2Weight].data,
                &p[ParamId::Body2Bias].data,
                &mut a3[n * fl..(n + 1) * fl],
            );
            h2_padded.extend(hp);
            let h3: Vec<T> = a3[n * fl..(n + 1) * fl].iter().map(|&x| swish(x)).collect();
            let h3p = out_conv.pad(&h3);
            out_conv.forward(
                &h3p,
                &p[ParamId::OutConvWeight].data,
                &p[ParamId::OutConvBias].data,
                &mut out[n * 3 * plane..(n + 1) * 3 * plane],
            );
            h3_padded.extend(h3p);
        }

        let cache = ForwardCache {
            frames: n_frames,
            palette: palette_vec,
            time_code,
            ref_padded,
            input_padded,
            h0_padded,
            a1,
            h1,
            mixed,
            h2_padded,
            a3,
            h3_padded,
        };
        Ok((LatentWindow::new(n_frames, 3, h, w, out)?, cache))
    }

    /// Gradients of a scalar loss with respect to every parameter, given `∂loss/∂output`.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        ref_frame: &Frame<T>,
        dout: &LatentWindow<T>,
    ) -> Result<Params<T>> {
        let p = self.params;
        let c = self.config.base_channels;
        let (h, w) = (self.config.height, self.config.width);
        let n_frames = cache.frames;
        if dout.shape() != [n_frames, 3, h, w] {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} does not match forward pass",
                dout.shape()
            )));
        }
        let plane = h * w;
        let fl = c * plane;
        let mut g = Params::zeros(self.config);

        let in_conv = Conv3x3::new(4, c, h, w);
        let body = Conv3x3::new(c, c, h, w);
        let out_conv = Conv3x3::new(c, 3, h, w);
        let bpl = body.padded_len() * c;

        // out_conv and body2
        let mut dh2 = vec![T::zero(); n_frames * fl];
        let mut dh3 = vec![T::zero(); fl];
        for n in 0..n_frames {
            dh3.iter_mut().for_each(|v| *v = T::zero());
            let h3p = &cache.h3_padded[n * bpl..(n + 1) * bpl];
            {
                let (dw, db) = two_mut(&mut g, ParamId::OutConvWeight, ParamId::OutConvBias);
                out_conv.backward(h3p, &p[ParamId::OutConvWeight].data, dout.frame(n), dw, db, Some(&mut dh3));
            }
            let a3 = &cache.a3[n * fl..(n + 1) * fl];
            let da3: Vec<T> = dh3.iter().zip(a3).map(|(&d, &a)| d * swish_grad(a)).collect();
            let h2p = &cache.h2_padded[n * bpl..(n + 1) * bpl];
            let (dw, db) = two_mut(&mut g, ParamId::Body2Weight, ParamId::Body2Bias);
            body.backward(h2p, &p[ParamId::Body2Weight].data, &da3, dw, db, Some(&mut dh2[n * fl..(n + 1) * fl]));
        }

        // temporal mix
        let temporal = TemporalMix {
            frames: n_frames,
            channels: c,
            plane,
        };
        let dh1 = {
            let [ddw, dpw, db] = three_mut(
                &mut g,
                ParamId::TemporalDepthwise,
                ParamId::TemporalPointwise,
                ParamId::TemporalBias,
            );
            temporal.backward(
                &cache.h1,
                &cache.mixed,
                &p[ParamId::TemporalDepthwise].data,
                &p[ParamId::TemporalPointwise].data,
                &dh2,
                ddw,
                dpw,
                db,
            )
        };

        // body1 and in_conv
        let mut dshift = vec![T::zero(); c];
        let mut dh0 = vec![T::zero(); fl];
        let ipl = in_conv.padded_len() * 4;
        for n in 0..n_frames {
            let a1 = &cache.a1[n * fl..(n + 1) * fl];
            let da1: Vec<T> = dh1[n * fl..(n + 1) * fl]
                .iter()
                .zip(a1)
                .map(|(&d, &a)| d * swish_grad(a))
                .collect();
            dh0.iter_mut().for_each(|v| *v = T::zero());
            {
                let h0p = &cache.h0_padded[n * bpl..(n + 1) * bpl];
                let (dw, db) = two_mut(&mut g, ParamId::Body1Weight, ParamId::Body1Bias);
                body.backward(h0p, &p[ParamId::Body1Weight].data, &da1, dw, db, Some(&mut dh0));
            }
            let xp = &cache.input_padded[n * ipl..(n + 1) * ipl];
            let dw = &mut g[ParamId::InConvWeight].data;
            in_conv.backward(xp, &p[ParamId::InConvWeight].data, &dh0, dw, &mut dshift, None);
        }

        // conditioning paths all receive the per-channel shift gradient
        g[ParamId::InConvBias].data.copy_from_slice(&dshift);
        for o in 0..c {
            for (j, &x) in cache.palette.iter().enumerate() {
                g[ParamId::PaletteProj].data[o * PALETTE_DIM + j] = dshift[o] * x;
            }
            for (j, &x) in cache.time_code.iter().enumerate() {
                g[ParamId::TimeEmbed].data[o * 2 * c + j] = dshift[o] * x;
            }
        }
        let ref_conv = Conv3x3::new(3, c, ref_frame.height(), ref_frame.width());
        let rp = ref_frame.pixel_count();
        let inv = T::one() / T::of(rp as f64);
        let mut dref = vec![T::zero(); c * rp];
        for o in 0..c {
            dref[o * rp..(o + 1) * rp].iter_mut().for_each(|v| *v = dshift[o] * inv);
        }
        let (dw, db) = two_mut(&mut g, ParamId::RefConvWeight, ParamId::RefConvBias);
        ref_conv.backward(&cache.ref_padded, &p[ParamId::RefConvWeight].data, &dref, dw, db, None);
        Ok(g)
    }
}

fn two_mut<T>(g: &mut Params<T>, a: ParamId, b: ParamId) -> (&mut [T], &mut [T]) {
    let (a, b) = (a as usize, b as usize);
    assert!(a < b);
    let (lo, hi) = g.tensors.split_at_mut(b);
    (&mut lo[a].data, &mut hi[0].data)
}

fn three_mut<T>(g: &mut Params<T>, a: ParamId, b: ParamId, c: ParamId) -> [&mut [T]; 3] {
    let (a, b, c) = (a as usize, b as usize, c as usize);
    assert!(a < b && b < c);
    let (lo, rest) = g.tensors.split_at_mut(b);
    let (mid, hi) = rest.split_at_mut(c - b);
    [&mut lo[a].data, &mut mid[0].data, &mut hi[0].data]
}

/// ε̂ for an assembled 4-channel window.
pub fn predict_eps<T: Scalar>(
    z_in: &LatentWindow<T>,
    t: usize,
    palette: &Palette,
    ref_frame: &Frame<T>,
    config: &NetworkConfig,
    params: &Params<T>,
) -> Result<LatentWindow<T>> {
    Denoiser::new(config, params)
        .forward(z_in, t, palette, ref_frame)
        .map(|(out, _)| out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig {
            base_channels: 8,
            window_frames: 2,
            height: 6,
            width: 5,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn projection_examples() {
        let ones = Tensor {
            shape: vec![4, PALETTE_DIM],
            data: vec![1.0f64; 4 * PALETTE_DIM],
        };
        let half = Palette::uniform([0.5, 0.5, 0.5]).unwrap();
        assert_eq!(project_palette(&half, &ones).unwrap(), vec![7.5; 4]);
        assert_eq!(project_palette(&Palette::null(), &ones).unwrap(), vec![0.0; 4]);

        // scaling preserves the canonical order, so flatten(a) + flatten(b) is flatten(a + b)
        let a = Palette::new([[0.1, 0.2, 0.3], [0.3, 0.1, 0.2], [0.2, 0.2, 0.2], [0.15, 0.3, 0.05], [0.25, 0.3, 0.1]]).unwrap();
        let b = Palette::new(a.colors().map(|c| c.map(|v| 2.0 * v))).unwrap();
        let proj = Params::<f64>::init(&small(), 4)[ParamId::PaletteProj].clone();
        let pa = project_palette(&a, &proj).unwrap();
        let pb = project_palette(&b, &proj).unwrap();
        let sum = Palette::new(a.colors().map(|c| c.map(|v| 3.0 * v))).unwrap();
        for ((x, y), z) in pa.iter().zip(&pb).zip(project_palette(&sum, &proj).unwrap()) {
            assert!((x + y - z).abs() < 1e-12);
        }
        let bad = Tensor {
            shape: vec![4, 14],
            data: vec![0.0f64; 56],
        };
        assert!(project_palette(&half, &bad).is_err());
    }

    #[test]
    fn fusion_examples() {
        let zeros = LatentWindow::<f64>::zeros(2, 3, 2, 2);
        let e = [1.0, -2.0, 0.5];
        let fused = fuse_palette(&zeros, &e).unwrap();
        for n in 0..2 {
            for (c, chunk) in fused.frame(n).chunks(4).enumerate() {
                assert!(chunk.iter().all(|&v| v == e[c]));
            }
        }
        let back = fuse_palette(&fused, &e.map(|v| -v)).unwrap();
        assert_eq!(back, zeros);
        assert_eq!(fuse_palette(&fused, &[0.0; 3]).unwrap(), fused);
        assert!(fuse_palette(&zeros, &[0.0; 2]).is_err());
    }

    #[test]
    fn timestep_code_layout() {
        let code = timestep_embedding::<f64>(3, 4);
        assert_eq!(code.len(), 8);
        assert_eq!(code[0], 3f64.sin());
        assert_eq!(code[1], 3f64.cos());
        let f = 10000f64.powf(-0.25);
        assert!((code[2] - (3.0 * f).sin()).abs() < 1e-15);
        assert!((code[3] - (3.0 * f).cos()).abs() < 1e-15);
    }

    #[test]
    fn parameter_table() {
        let cfg = small();
        let p = Params::<f32>::init(&cfg, 1);
        assert_eq!(p.iter().count(), 15);
        assert_eq!(p.len(), p.iter().map(|(_, t)| t.data.len()).sum::<usize>());
        for (id, t) in p.iter() {
            assert_eq!(ParamId::from_name(id.name()), Some(id));
            assert_eq!(t.shape, id.shape(&cfg));
            let bound = 1.0 / (id.fan_in(&cfg) as f32).sqrt();
            if id.is_bias() {
                assert!(t.data.iter().all(|&v| v == 0.0), "{}", id.name());
            } else {
                assert!(t.data.iter().all(|v| v.abs() <= bound), "{}", id.name());
                assert!(t.data.iter().any(|&v| v != 0.0));
            }
        }
        assert_eq!(ParamId::PaletteProj.shape(&cfg), vec![8, 15]);
        assert_eq!(ParamId::TimeEmbed.shape(&cfg), vec![8, 16]);
        assert_eq!(p, Params::init(&cfg, 1));
        assert_ne!(p, Params::init(&cfg, 2));
    }

    #[test]
    fn input_checks() {
        let cfg = small();
        let p = Params::<f64>::init(&cfg, 0);
        let d = Denoiser::new(&cfg, &p);
        let reff = Frame::filled(3, 3, &[0.2, 0.3, 0.4]).unwrap();
        let z = LatentWindow::<f64>::zeros(2, 4, 6, 5);
        assert!(d.forward(&z, 1, &Palette::null(), &reff).is_ok());
        assert!(d.forward(&LatentWindow::zeros(2, 3, 6, 5), 1, &Palette::null(), &reff).is_err());
        assert!(d.forward(&LatentWindow::zeros(2, 4, 5, 5), 1, &Palette::null(), &reff).is_err());
        let gray_ref = Frame::filled(3, 3, &[0.2]).unwrap();
        assert!(d.forward(&z, 1, &Palette::null(), &gray_ref).is_err());
        let (_, cache) = d.forward(&z, 1, &Palette::null(), &reff).unwrap();
        assert!(d.backward(&cache, &reff, &LatentWindow::zeros(3, 3, 6, 5)).is_err());
    }
}
