//! Diagonal-covariance Gaussian mixture over RGB pixels, fitted by EM, used to
//! sample random palettes.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::palette::{kmeans_plus_plus, Palette, Rgb, PALETTE_SIZE};
use crate::scalar::Scalar;
use crate::vidio::Video;

pub const VARIANCE_FLOOR: f64 = 1e-4;
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Rgb>,
    pub variances: Vec<Rgb>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<Rgb>, variances: Vec<Rgb>) -> Result<Self> {
        let model = GmmModel {
            k: weights.len(),
            weights,
            means,
            variances,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        if k == 0 || self.weights.len() != k || self.means.len() != k || self.variances.len() != k
        {
            return Err(Error::InvalidArgument(format!(
                "GMM with k={k} has {} weights, {} means, {} variances",
                self.weights.len(),
                self.means.len(),
                self.variances.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("negative mixture weight".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}"
            )));
        }
        if self
            .variances
            .iter()
            .flatten()
            .any(|v| !(*v >= VARIANCE_FLOOR * (1.0 - 1e-12)))
        {
            return Err(Error::InvalidArgument("variance below floor".into()));
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mean".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: GmmModel = serde_json::from_str(text).map_err(|e| Error::MalformedFile {
            path: "gmm.json".into(),
            reason: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GmmModel::from_json(&text)
    }

    /// Per-component `log(w_j) + log N(x | mu_j, diag(var_j))`.
    fn component_log_densities(&self, x: &Rgb, out: &mut [f64]) {
        for j in 0..self.k {
            let mut acc = self.weights[j].ln();
            for c in 0..3 {
                let v = self.variances[j][c];
                let d = x[c] - self.means[j][c];
                acc -= 0.5 * ((2.0 * PI * v).ln() + d * d / v);
            }
            out[j] = acc;
        }
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sum over pixels of the log mixture density.
pub fn log_likelihood(model: &GmmModel, pixels: &[Rgb]) -> f64 {
    let mut scratch = vec![0.0; model.k];
    pixels
        .iter()
        .map(|x| {
            model.component_log_densities(x, &mut scratch);
            log_sum_exp(&scratch)
        })
        .sum()
}

/// Population variance of the three channel values.
#[inline]
pub fn channel_variance(p: &Rgb) -> f64 {
    let mean = (p[0] + p[1] + p[2]) / 3.0;
    p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0
}

/// Keeps pixels (0-255 scale) whose cross-channel population variance is at least `threshold`.
pub fn variance_filter(pixels: &[Rgb], threshold: f64) -> Vec<Rgb> {
    pixels
        .iter()
        .filter(|p| channel_variance(p) >= threshold)
        .copied()
        .collect()
}

/// Samples up to `frames_per_video` distinct frames per video, gathers their
/// pixels on the 0-255 scale and drops low-saturation ones.
pub fn collect_training_pixels<T: Scalar>(
    dataset: &[Video<T>],
    frames_per_video: usize,
    threshold: f64,
    seed: u64,
) -> Result<Vec<Rgb>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::new();
    for video in dataset {
        if video.channels() != 3 {
            return Err(Error::InvalidArgument(
                "GMM training pixels need RGB videos".into(),
            ));
        }
        let take = frames_per_video.min(video.len());
        let mut idx = sample(&mut rng, video.len(), take).into_vec();
        idx.sort_unstable();
        for i in idx {
            pixels.extend(
                video.frames()[i]
                    .rgb_pixels()
                    .map(|p| p.map(|v| v * 255.0))
                    .filter(|p| channel_variance(p) >= threshold),
            );
        }
    }
    Ok(pixels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub components: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            components: 8,
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// A fitted model with its log-likelihood trace (initial model first).
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmmModel,
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
}

/// Fits a diagonal GMM to `[0, 1]`-scaled RGB pixels by expectation-maximization.
pub fn fit_em(pixels: &[Rgb], options: &EmOptions) -> Result<EmFit> {
    let k = options.components;
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    if pixels.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} pixels cannot support {k} components",
            pixels.len()
        )));
    }
    let n = pixels.len() as f64;
    let mut global_mean = [0.0; 3];
    for p in pixels {
        for c in 0..3 {
            global_mean[c] += p[c] / n;
        }
    }
    let mut global_var = [0.0; 3];
    for p in pixels {
        for c in 0..3 {
            let d = p[c] - global_mean[c];
            global_var[c] += d * d / n;
        }
    }

    if pixels.iter().all(|p| p == &pixels[0]) {
        let model = GmmModel::new(vec![1.0], vec![pixels[0]], vec![[VARIANCE_FLOOR; 3]])?;
        let ll = log_likelihood(&model, pixels);
        return Ok(EmFit {
            model,
            log_likelihoods: vec![ll],
            iterations: 0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut model = GmmModel {
        k,
        weights: vec![1.0 / k as f64; k],
        means: kmeans_plus_plus(pixels, k, &mut rng),
        variances: vec![global_var.map(|v| v.max(VARIANCE_FLOOR)); k],
    };

    let mut resp = vec![0.0; pixels.len() * k];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut ll = e_step(&model, pixels, &mut resp);
    trace.push(ll);
    while iterations < options.max_iters {
        iterations += 1;
        m_step(&mut model, pixels, &resp);
        let next = e_step(&model, pixels, &mut resp);
        trace.push(next);
        let improvement = (next - ll) / ll.abs().max(f64::MIN_POSITIVE);
        ll = next;
        if improvement < options.tol {
            break;
        }
    }
    Ok(EmFit {
        model,
        log_likelihoods: trace,
        iterations,
    })
}

/// Fills `resp` (row-major `n × k`) and returns the log-likelihood.
fn e_step(model: &GmmModel, pixels: &[Rgb], resp: &mut [f64]) -> f64 {
    let k = model.k;
    let mut total = 0.0;
    for (x, row) in pixels.iter().zip(resp.chunks_exact_mut(k)) {
        model.component_log_densities(x, row);
        let lse = log_sum_exp(row);
        for r in row.iter_mut() {
            *r = (*r - lse).exp();
        }
        total += lse;
    }
    total
}

fn m_step(model: &mut GmmModel, pixels: &[Rgb], resp: &[f64]) {
    let k = model.k;
    let n = pixels.len() as f64;
    let mut mass = vec![0.0; k];
    let mut sums = vec![[0.0; 3]; k];
    for (x, row) in pixels.iter().zip(resp.chunks_exact(k)) {
        for j in 0..k {
            mass[j] += row[j];
            for c in 0..3 {
                sums[j][c] += row[j] * x[c];
            }
        }
    }
    for j in 0..k {
        // a component that lost all mass keeps its previous mean and variance
        if mass[j] > 0.0 {
            model.means[j] = sums[j].map(|s| s / mass[j]);
        }
    }
    let mut sq = vec![[0.0; 3]; k];
    for (x, row) in pixels.iter().zip(resp.chunks_exact(k)) {
        for j in 0..k {
            for c in 0..3 {
                let d = x[c] - model.means[j][c];
                sq[j][c] += row[j] * d * d;
            }
        }
    }
    for j in 0..k {
        if mass[j] > 0.0 {
            model.variances[j] = sq[j].map(|s| (s / mass[j]).max(VARIANCE_FLOOR));
        }
        model.weights[j] = mass[j] / n;
    }
    let total: f64 = model.weights.iter().sum();
    for w in &mut model.weights {
        *w /= total;
    }
}

/// Draws five colors i.i.d. from the mixture, clamps them to `[0, 1]` and canonicalizes.
pub fn sample_palette(model: &GmmModel, seed: u64) -> Result<Palette> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let choose = WeightedIndex::new(&model.weights)
        .map_err(|e| Error::InvalidArgument(format!("mixture weights: {e}")))?;
    let mut colors = [[0.0; 3]; PALETTE_SIZE];
    for color in colors.iter_mut() {
        let j = choose.sample(&mut rng);
        for c in 0..3 {
            let z: f64 = StandardNormal.sample(&mut rng);
            color[c] = model.means[j][c] + model.variances[j][c].sqrt() * z;
        }
    }
    Ok(Palette::clamped(colors))
}
