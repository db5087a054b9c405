use crate::error::{Error, Result};

/// Linear-β DDPM schedule. Timesteps are 1-based: index `t - 1` holds step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps < 1 {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = if timesteps == 1 {
            vec![beta_start]
        } else {
            let step = (beta_end - beta_start) / (timesteps - 1) as f64;
            (0..timesteps)
                .map(|i| (beta_start + step * i as f64).min(beta_end))
                .collect()
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Posterior standard deviation `σ_t` of the ancestral step `t → t-1`.
    pub fn posterior_std(&self, t: usize) -> f64 {
        let var = self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t));
        var.max(0.0).sqrt()
    }

    pub(crate) fn check_timestep(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.timesteps() {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.timesteps()
            )));
        }
        Ok(())
    }
}

pub fn make_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(timesteps, beta_start, beta_end)
}
