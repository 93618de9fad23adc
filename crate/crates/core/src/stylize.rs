//! The stylization loop: render, noise, filter, distill, pull back, update.
//!
//! Only the SH color block moves. Source renders are taken once before the
//! first update and reused as the frozen source pathway.

use std::time::Instant;

use ndarray::{s, Array3, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::{self, DistillConfig, DistillError};
use crate::guidance::{ConditioningSpec, Denoiser};
use crate::rng::{self, Stream};
use crate::scene::{render_views, render_vjp, GaussianScene, SceneError, SplatWeights};
use crate::schedule::{NoiseSchedule, ScheduleError, ScheduleParams};
use crate::spectral::{self, CrossViewStats, SpectralError};
use crate::tensor::{LatentPair, MultiViewLatent, TensorError};

/// Residual RMS above which a run is treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum StylizeError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("non-finite {field} at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        field: &'static str,
    },
    #[error(
        "diverged at iteration {iteration}: residual rms {norm:e} exceeds {DIVERGENCE_LIMIT:e}"
    )]
    Divergence { iteration: usize, norm: f64 },
    #[error("consistency metrics need at least 2 views, got {0}")]
    TooFewViews(usize),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl StylizeError {
    /// Aborts caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            StylizeError::NonFinite { .. } | StylizeError::Divergence { .. }
        )
    }
}

pub type Result<T, E = StylizeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    PlainDescent,
    /// First/second moment accumulators with bias correction.
    AdaptiveMoments,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub iterations: usize,
    pub views_per_step: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adaptive: AdaptiveParams,
    pub distill: DistillConfig,
    pub schedule: ScheduleParams,
    /// Render every camera each `snapshot_every` iterations; 0 disables.
    pub snapshot_every: usize,
    pub seed: u64,
    /// Keep SH degrees >= 1 fixed.
    pub freeze_higher_sh: bool,
    /// Store wall-clock times in the report (makes reports run-dependent).
    pub record_timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            views_per_step: 4,
            learning_rate: 0.01,
            optimizer: OptimizerKind::AdaptiveMoments,
            adaptive: AdaptiveParams::default(),
            distill: DistillConfig::default(),
            schedule: ScheduleParams::default(),
            snapshot_every: 0,
            seed: 0,
            freeze_higher_sh: false,
            record_timings: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, n_cameras: usize) -> Result<()> {
        let bad = |m: String| Err(StylizeError::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.views_per_step == 0 || self.views_per_step > n_cameras {
            return bad(format!(
                "views_per_step must be in 1..={n_cameras}, got {}",
                self.views_per_step
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        let a = &self.adaptive;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return bad("adaptive parameters out of range".into());
        }
        self.distill.validate()?;
        self.schedule.build()?;
        Ok(())
    }
}

/// Cameras rendered at iteration `m` (0-based): a sliding window over the ring.
pub fn camera_batch(m: usize, views_per_step: usize, n_cameras: usize) -> Vec<usize> {
    (0..views_per_step)
        .map(|k| (m * views_per_step + k) % n_cameras)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub timestep: usize,
    pub cameras: Vec<usize>,
    /// RMS of the weighted residual.
    pub delta_rms: f64,
    /// Per batch view, RMSE of the current render against its source render.
    pub render_rmse_vs_source: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

/// Short- and long-range cross-view agreement of a set of renders.
///
/// RMSE values and band variances are internal diagnostics; they are not
/// comparable to perceptual consistency scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyTable {
    /// RMSE between ring neighbours `(i, i+1 mod N)`.
    pub adjacent_rmse: Vec<f64>,
    pub mean_adjacent_rmse: f64,
    /// Mean RMSE between `(i, i + N/2 mod N)`.
    pub max_separation_rmse: f64,
    pub bands: CrossViewStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub initial: ConsistencyTable,
    #[serde(rename = "final")]
    pub final_: ConsistencyTable,
    pub initial_mean_color: [f64; 3],
    pub final_mean_color: [f64; 3],
    pub mean_color_displacement: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<IterationRecord>,
    pub summary: RunSummary,
}

impl RunReport {
    /// One JSON object per iteration, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Number of updates applied before the renders were taken.
    pub iteration: usize,
    pub renders: MultiViewLatent,
}

#[derive(Debug, Clone)]
pub struct StylizeOutput {
    pub sh_coeffs: Array3<f64>,
    pub report: RunReport,
    pub snapshots: Vec<Snapshot>,
    /// Renders of every camera before the first update.
    pub source_renders: MultiViewLatent,
    pub final_renders: MultiViewLatent,
}

fn rmse(a: ndarray::ArrayView3<f64>, b: ndarray::ArrayView3<f64>) -> f64 {
    let mut acc = 0.0;
    Zip::from(a)
        .and(b)
        .for_each(|x, y| acc += (x - y) * (x - y));
    (acc / a.len() as f64).sqrt()
}

/// Mean over views and pixels of each channel.
pub fn mean_color(renders: &MultiViewLatent) -> [f64; 3] {
    let m = renders.channel_means();
    [m[0], m[1], m[2]]
}

pub fn consistency_metrics(renders: &MultiViewLatent, cutoff: f64) -> Result<ConsistencyTable> {
    let [n, _, h, w] = renders.shape();
    if n < 2 {
        return Err(StylizeError::TooFewViews(n));
    }
    let adjacent_rmse: Vec<f64> = (0..n)
        .map(|i| rmse(renders.view(i), renders.view((i + 1) % n)))
        .collect();
    let mean_adjacent_rmse = adjacent_rmse.iter().sum::<f64>() / n as f64;
    let half = n / 2;
    let max_separation_rmse = (0..n)
        .map(|i| rmse(renders.view(i), renders.view((i + half) % n)))
        .sum::<f64>()
        / n as f64;
    let mask = spectral::make_highpass(n, h, w, cutoff)?;
    Ok(ConsistencyTable {
        adjacent_rmse,
        mean_adjacent_rmse,
        max_separation_rmse,
        bands: spectral::cross_view_stats(renders, &mask)?,
    })
}

struct Adaptive {
    m: Array3<f64>,
    v: Array3<f64>,
    step: i32,
}

fn check_finite(x: &Array3<f64>, iteration: usize, field: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StylizeError::NonFinite { iteration, field })
    }
}

/// Runs the stylization loop on a copy of `scene`.
pub fn stylize<D: Denoiser + ?Sized>(
    scene: &GaussianScene,
    weights: &[SplatWeights],
    denoiser: &D,
    cond_tgt: &ConditioningSpec,
    cond_src: &ConditioningSpec,
    cfg: &RunConfig,
) -> Result<StylizeOutput> {
    let start = Instant::now();
    let n_cam = scene.cameras().len();
    if n_cam < 2 {
        return Err(StylizeError::TooFewViews(n_cam));
    }
    cfg.validate(n_cam)?;
    cond_tgt
        .check_pathway_roles("target")
        .map_err(DistillError::from)?;
    cond_src
        .check_pathway_roles("source")
        .map_err(DistillError::from)?;
    let schedule: NoiseSchedule = cfg.schedule.build()?;
    let (h, w) = scene.image_size();
    let n = cfg.views_per_step;
    let shape = [n, 3, h, w];
    let mask = spectral::make_highpass(n, h, w, cfg.distill.cutoff)?;

    let all: Vec<usize> = (0..n_cam).collect();
    let mut scene = scene.clone();
    let source_renders = render_views(&scene, weights, &all)?;

    let mut rng_t = rng::stream(cfg.seed, Stream::Timesteps);
    let mut rng_eps = rng::stream(cfg.seed, Stream::Eps);
    let mut rng_shared = rng::stream(cfg.seed, Stream::EpsShared);

    let mut adaptive = Adaptive {
        m: Array3::zeros(scene.sh_coeffs().raw_dim()),
        v: Array3::zeros(scene.sh_coeffs().raw_dim()),
        step: 0,
    };
    let mut snapshots = Vec::new();
    let mut records = Vec::with_capacity(cfg.iterations);

    for m in 0..cfg.iterations {
        let iteration = m + 1;
        let t_iter = Instant::now();
        if cfg.snapshot_every > 0 && m.is_multiple_of(cfg.snapshot_every) {
            snapshots.push(Snapshot {
                iteration: m,
                renders: render_views(&scene, weights, &all)?,
            });
        }
        let batch = camera_batch(m, n, n_cam);
        let target = render_views(&scene, weights, &batch)?;
        let source_views: Vec<Array3<f64>> = batch
            .iter()
            .map(|&c| source_renders.view(c).to_owned())
            .collect();
        let source = MultiViewLatent::stack_views(&source_views)?;
        let render_rmse_vs_source = (0..n)
            .map(|i| rmse(target.view(i), source.view(i)))
            .collect();

        let t = schedule.sample_timestep(&mut rng_t);
        let eps = rng::gaussian_stack(&mut rng_eps, shape);
        let eps_shared = rng::shared_gaussian_stack(&mut rng_shared, shape);

        let pair = LatentPair::new(source, target)?;
        let delta = distill::csd_delta(
            denoiser,
            &pair,
            t,
            &eps,
            &eps_shared,
            cond_tgt,
            cond_src,
            &cfg.distill,
            &schedule,
            &mask,
        )
        .map_err(|e| match e {
            DistillError::Guidance(crate::guidance::GuidanceError::NonFinite) => {
                StylizeError::NonFinite {
                    iteration,
                    field: "denoiser prediction",
                }
            }
            e => e.into(),
        })?;
        let weighted = distill::apply_omega(&delta, &schedule, &cfg.distill)?;
        if weighted.data().iter().any(|v| !v.is_finite()) {
            return Err(StylizeError::NonFinite {
                iteration,
                field: "delta",
            });
        }
        let delta_rms = weighted.rms();
        if delta_rms > DIVERGENCE_LIMIT {
            return Err(StylizeError::Divergence {
                iteration,
                norm: delta_rms,
            });
        }

        let mut cotangent = weighted.scale(schedule.alpha_bar(t)?.sqrt());
        if cfg.distill.pullback_through_mvfc && cfg.distill.gamma != 1.0 {
            cotangent = spectral::band_scale(&cotangent, &mask, cfg.distill.gamma, 1.0)?;
        }
        let parts: Vec<Array3<f64>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, &c)| render_vjp(&scene, &weights[c], &cotangent.view(i).to_owned()))
            .collect::<Result<_, SceneError>>()?;
        let mut grad = Array3::zeros(scene.sh_coeffs().raw_dim());
        for p in &parts {
            grad += p;
        }
        if cfg.freeze_higher_sh {
            grad.slice_mut(s![.., 1.., ..]).fill(0.0);
        }
        check_finite(&grad, iteration, "gradient")?;

        let mut coeffs = scene.sh_coeffs().clone();
        match cfg.optimizer {
            OptimizerKind::PlainDescent => {
                coeffs.scaled_add(-cfg.learning_rate, &grad);
            }
            OptimizerKind::AdaptiveMoments => {
                let p = cfg.adaptive;
                adaptive.step += 1;
                let c1 = 1.0 - p.beta1.powi(adaptive.step);
                let c2 = 1.0 - p.beta2.powi(adaptive.step);
                Zip::from(&mut coeffs)
                    .and(&mut adaptive.m)
                    .and(&mut adaptive.v)
                    .and(&grad)
                    .for_each(|x, m1, m2, &g| {
                        *m1 = p.beta1 * *m1 + (1.0 - p.beta1) * g;
                        *m2 = p.beta2 * *m2 + (1.0 - p.beta2) * g * g;
                        let mh = *m1 / c1;
                        let vh = *m2 / c2;
                        *x -= cfg.learning_rate * mh / (vh.sqrt() + p.epsilon);
                    });
            }
        }
        check_finite(&coeffs, iteration, "sh_coeffs")?;
        scene.set_sh_coeffs(coeffs)?;

        records.push(IterationRecord {
            iteration,
            timestep: t,
            cameras: batch,
            delta_rms,
            render_rmse_vs_source,
            wall_ms: cfg
                .record_timings
                .then(|| t_iter.elapsed().as_secs_f64() * 1e3),
        });
    }

    let final_renders = render_views(&scene, weights, &all)?;
    if cfg.snapshot_every > 0 && cfg.iterations.is_multiple_of(cfg.snapshot_every) {
        snapshots.push(Snapshot {
            iteration: cfg.iterations,
            renders: final_renders.clone(),
        });
    }
    let initial = consistency_metrics(&source_renders, cfg.distill.cutoff)?;
    let final_ = consistency_metrics(&final_renders, cfg.distill.cutoff)?;
    let c0 = mean_color(&source_renders);
    let c1 = mean_color(&final_renders);
    let summary = RunSummary {
        iterations: cfg.iterations,
        initial,
        final_,
        initial_mean_color: c0,
        final_mean_color: c1,
        mean_color_displacement: [c1[0] - c0[0], c1[1] - c0[1], c1[2] - c0[2]],
        wall_ms: cfg
            .record_timings
            .then(|| start.elapsed().as_secs_f64() * 1e3),
    };
    Ok(StylizeOutput {
        sh_coeffs: scene.sh_coeffs().clone(),
        report: RunReport { records, summary },
        snapshots,
        source_renders,
        final_renders,
    })
}

/// Draws the same timestep sequence a run with this seed would use.
pub fn timestep_sequence(cfg: &RunConfig) -> Result<Vec<usize>> {
    let schedule = cfg.schedule.build()?;
    let mut rng = rng::stream(cfg.seed, Stream::Timesteps);
    Ok((0..cfg.iterations)
        .map(|_| schedule.sample_timestep(&mut rng))
        .collect())
}
