//! Forward-noising schedule and the discrete timestep set.
//!
//! Timesteps are 1-based: `t = 1` is the first diffusion step and
//! `alpha_bar(1) = 1 - beta_1`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::MultiViewLatent;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("timestep {t} outside [1, {max}]")]
    Timestep { t: usize, max: usize },
    #[error("latent shape {0:?} does not match noise shape {1:?}")]
    Shape([usize; 4], [usize; 4]),
}

pub type Result<T, E = ScheduleError> = std::result::Result<T, E>;

fn param(name: &'static str, reason: impl Into<String>) -> ScheduleError {
    ScheduleError::Parameter {
        name,
        reason: reason.into(),
    }
}

/// Parameters of a linear-beta schedule. Defaults are the conventional
/// DDPM linear schedule with ten evenly spaced sampling timesteps.
///
/// The timestep count and range (`num_timesteps`, `t_min`, `t_max`) are
/// not tuned values; they are a configurable choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleParams {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub num_timesteps: usize,
    pub t_min: usize,
    pub t_max: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            num_timesteps: 10,
            t_min: 20,
            t_max: 980,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(
            self.train_steps,
            self.beta_start,
            self.beta_end,
            self.num_timesteps,
            self.t_min,
            self.t_max,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    timesteps: Vec<usize>,
}

/// Linear betas from `beta_start` to `beta_end` over `train_steps`, with
/// `k` evenly spaced integer timesteps spanning `[t_min, t_max]`.
pub fn build_schedule(
    train_steps: usize,
    beta_start: f64,
    beta_end: f64,
    k: usize,
    t_min: usize,
    t_max: usize,
) -> Result<NoiseSchedule> {
    if train_steps == 0 {
        return Err(param("train_steps", "must be positive"));
    }
    if !(beta_start > 0.0 && beta_start < 1.0) {
        return Err(param("beta_start", format!("{beta_start} not in (0, 1)")));
    }
    if !(beta_end >= beta_start && beta_end < 1.0) {
        return Err(param(
            "beta_end",
            format!("{beta_end} not in [beta_start, 1)"),
        ));
    }
    if k == 0 {
        return Err(param("num_timesteps", "must be at least 1"));
    }
    if t_min < 1 || t_min > train_steps {
        return Err(param("t_min", format!("{t_min} not in [1, {train_steps}]")));
    }
    if t_max < t_min || t_max > train_steps {
        return Err(param(
            "t_max",
            format!("{t_max} not in [t_min, {train_steps}]"),
        ));
    }
    if k > t_max - t_min + 1 {
        return Err(param(
            "num_timesteps",
            format!("{k} distinct timesteps do not fit in [{t_min}, {t_max}]"),
        ));
    }
    if k > 1 && t_min == t_max {
        return Err(param(
            "t_max",
            "must exceed t_min when more than one timestep",
        ));
    }

    let betas: Vec<f64> = (0..train_steps)
        .map(|i| {
            if train_steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (train_steps - 1) as f64
            }
        })
        .collect();
    let alpha_bar = betas
        .iter()
        .scan(1.0, |acc, b| {
            *acc *= 1.0 - b;
            Some(*acc)
        })
        .collect();
    let timesteps = if k == 1 {
        vec![t_min]
    } else {
        let span = (t_max - t_min) as f64;
        (0..k)
            .map(|i| t_min + (span * i as f64 / (k - 1) as f64).round() as usize)
            .collect()
    };
    Ok(NoiseSchedule {
        betas,
        alpha_bar,
        timesteps,
    })
}

impl NoiseSchedule {
    /// Builds a schedule directly from cumulative products.
    ///
    /// `alpha_bar` must be strictly decreasing inside (0, 1]; the timestep
    /// set must be sorted, duplicate-free and within range.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>, timesteps: Vec<usize>) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(param("alpha_bar", "must be nonempty"));
        }
        if alpha_bar.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(param("alpha_bar", "values must lie in (0, 1]"));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(param("alpha_bar", "must be strictly decreasing"));
        }
        if timesteps.is_empty() {
            return Err(param("timesteps", "must be nonempty"));
        }
        if timesteps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(param("timesteps", "must be sorted and duplicate-free"));
        }
        if timesteps[0] < 1 || *timesteps.last().unwrap() > alpha_bar.len() {
            return Err(param("timesteps", "out of range"));
        }
        let mut prev = 1.0;
        let betas = alpha_bar
            .iter()
            .map(|&a| {
                let b = 1.0 - a / prev;
                prev = a;
                b
            })
            .collect();
        Ok(Self {
            betas,
            alpha_bar,
            timesteps,
        })
    }

    pub fn train_steps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// All cumulative products; entry `i` belongs to timestep `i + 1`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.alpha_bar.len() {
            return Err(ScheduleError::Timestep {
                t,
                max: self.alpha_bar.len(),
            });
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_timestep(t)?;
        Ok(self.alpha_bar[t - 1])
    }

    /// Uniform draw from the discrete timestep set.
    pub fn sample_timestep<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.timesteps[rng.random_range(0..self.timesteps.len())]
    }
}

/// `sqrt(ᾱ_t) z0 + sqrt(1 - ᾱ_t) eps`.
pub fn ddim_noise(
    z0: &MultiViewLatent,
    t: usize,
    eps: &MultiViewLatent,
    schedule: &NoiseSchedule,
) -> Result<MultiViewLatent> {
    let a = schedule.alpha_bar(t)?;
    if z0.shape() != eps.shape() {
        return Err(ScheduleError::Shape(z0.shape(), eps.shape()));
    }
    Ok(z0
        .lincomb(a.sqrt(), eps, (1.0 - a).sqrt())
        .expect("shapes checked"))
}
