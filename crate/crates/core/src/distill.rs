//! Distillation residual fields.
//!
//! Every function here returns the bracketed residual `δ` that multiplies
//! the latent Jacobian; the denoiser Jacobian is never formed. The
//! optimizer descends along `ω(t) δ` pulled back through the renderer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guidance::{self, ConditioningSpec, Denoiser, GuidanceError};
use crate::schedule::{ddim_noise, NoiseSchedule, ScheduleError};
use crate::spectral::{self, FrequencyMask, SpectralError, DEFAULT_CUTOFF};
use crate::tensor::{LatentPair, MultiViewLatent, TensorError};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("guidance scale beta = {0} must be finite and non-negative")]
    Beta(f64),
    #[error("gamma = {0} outside [0, 1]")]
    Gamma(f64),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = DistillError> = std::result::Result<T, E>;

/// Timestep weighting `ω(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Omega {
    #[default]
    ConstantOne,
    OneMinusAlphaBar,
}

impl Omega {
    pub fn weight(self, alpha_bar: f64) -> f64 {
        match self {
            Omega::ConstantOne => 1.0,
            Omega::OneMinusAlphaBar => 1.0 - alpha_bar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Guidance scale.
    pub beta: f64,
    pub omega: Omega,
    /// Low-band blend of the frequency-consistency filter; 1 disables it.
    pub gamma: f64,
    /// Normalized cutoff radius of the high-pass mask.
    pub cutoff: f64,
    /// Pull the residual back through the filter's linear map instead of
    /// treating the filter as identity in the backward pass.
    pub pullback_through_mvfc: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            beta: 7.5,
            omega: Omega::ConstantOne,
            gamma: 0.9,
            cutoff: DEFAULT_CUTOFF,
            pullback_through_mvfc: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(DistillError::Beta(self.beta));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(DistillError::Gamma(self.gamma));
        }
        if !(self.cutoff > 0.0 && self.cutoff <= spectral::MAX_CUTOFF) {
            return Err(SpectralError::Cutoff(self.cutoff).into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKind {
    Sds,
    Dds,
    Csd,
}

/// A residual field before the Jacobian pullback.
#[derive(Debug, Clone)]
pub struct ScoreDelta {
    pub value: MultiViewLatent,
    pub t: usize,
    pub kind: DeltaKind,
}

/// Reconstruction and guidance parts of a residual:
/// `δ = recon + β · cfg_term`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub recon: MultiViewLatent,
    pub cfg_term: MultiViewLatent,
}

/// `ε̃(z_t) - ε` with `z_t` the forward-noised `z0`.
pub fn sds_delta<D: Denoiser + ?Sized>(
    denoiser: &D,
    z0: &MultiViewLatent,
    t: usize,
    eps: &MultiViewLatent,
    cond: &ConditioningSpec,
    cfg: &DistillConfig,
    schedule: &NoiseSchedule,
) -> Result<ScoreDelta> {
    cfg.validate()?;
    let z_t = ddim_noise(z0, t, eps, schedule)?;
    let guided = guidance::guided_predict(denoiser, &z_t, t, cond, cfg.beta)?;
    Ok(ScoreDelta {
        value: guided.sub(eps)?,
        t,
        kind: DeltaKind::Sds,
    })
}

/// `ε̃(z_t^tgt) - ε̃(z_t^src)` with both pathways sharing `eps`.
#[allow(clippy::too_many_arguments)]
pub fn dds_delta<D: Denoiser + ?Sized>(
    denoiser: &D,
    pair: &LatentPair,
    t: usize,
    eps: &MultiViewLatent,
    cond_tgt: &ConditioningSpec,
    cond_src: &ConditioningSpec,
    cfg: &DistillConfig,
    schedule: &NoiseSchedule,
) -> Result<ScoreDelta> {
    cfg.validate()?;
    let z_tgt = ddim_noise(pair.target(), t, eps, schedule)?;
    let z_src = ddim_noise(pair.source(), t, eps, schedule)?;
    let (tgt, src) = rayon::join(
        || guidance::guided_predict(denoiser, &z_tgt, t, cond_tgt, cfg.beta),
        || guidance::guided_predict(denoiser, &z_src, t, cond_src, cfg.beta),
    );
    Ok(ScoreDelta {
        value: tgt?.sub(&src?)?,
        t,
        kind: DeltaKind::Dds,
    })
}

/// SDS residual split into `ε̂_neg - ε` and `ε̂_pos - ε̂_neg`.
pub fn decompose_sds<D: Denoiser + ?Sized>(
    denoiser: &D,
    z0: &MultiViewLatent,
    t: usize,
    eps: &MultiViewLatent,
    cond: &ConditioningSpec,
    schedule: &NoiseSchedule,
) -> Result<Decomposition> {
    let z_t = ddim_noise(z0, t, eps, schedule)?;
    let (neg, pos) = guidance::predict_branches(denoiser, &z_t, t, cond)?;
    Ok(Decomposition {
        recon: neg.sub(eps)?,
        cfg_term: pos.sub(&neg)?,
    })
}

/// DDS residual split branch-wise: `recon = ε̂_neg(tgt) - ε̂_neg(src)`,
/// `cfg_term = (ε̂_pos - ε̂_neg)(tgt) - (ε̂_pos - ε̂_neg)(src)`.
pub fn decompose_dds<D: Denoiser + ?Sized>(
    denoiser: &D,
    pair: &LatentPair,
    t: usize,
    eps: &MultiViewLatent,
    cond_tgt: &ConditioningSpec,
    cond_src: &ConditioningSpec,
    schedule: &NoiseSchedule,
) -> Result<Decomposition> {
    let z_tgt = ddim_noise(pair.target(), t, eps, schedule)?;
    let z_src = ddim_noise(pair.source(), t, eps, schedule)?;
    let (neg_t, pos_t) = guidance::predict_branches(denoiser, &z_tgt, t, cond_tgt)?;
    let (neg_s, pos_s) = guidance::predict_branches(denoiser, &z_src, t, cond_src)?;
    Ok(Decomposition {
        recon: neg_t.sub(&neg_s)?,
        cfg_term: pos_t.sub(&neg_t)?.sub(&pos_s.sub(&neg_s)?)?,
    })
}

/// Intermediate fields of one stylized-distillation evaluation.
#[derive(Debug, Clone)]
pub struct CsdTerms {
    /// Filtered noisy target latent fed to the denoiser.
    pub z_hat_tgt: MultiViewLatent,
    pub phi_tgt: MultiViewLatent,
    pub phi_src: MultiViewLatent,
}

fn guidance_term<D: Denoiser + ?Sized>(
    denoiser: &D,
    z_t: &MultiViewLatent,
    t: usize,
    cond: &ConditioningSpec,
    beta: f64,
) -> Result<MultiViewLatent> {
    let (neg, pos) = guidance::predict_branches(denoiser, z_t, t, cond)?;
    Ok(pos.sub(&neg)?.scale(beta))
}

/// Guidance-only terms for both pathways.
///
/// The target pathway is noised and then filtered with the
/// frequency-consistency filter (skipped when `γ = 1`, where it is the
/// identity); the source pathway is only noised.
#[allow(clippy::too_many_arguments)]
pub fn csd_terms<D: Denoiser + ?Sized>(
    denoiser: &D,
    pair: &LatentPair,
    t: usize,
    eps: &MultiViewLatent,
    eps_shared: &MultiViewLatent,
    cond_tgt: &ConditioningSpec,
    cond_src: &ConditioningSpec,
    cfg: &DistillConfig,
    schedule: &NoiseSchedule,
    mask: &FrequencyMask,
) -> Result<CsdTerms> {
    cfg.validate()?;
    cond_tgt.check_pathway_roles("target")?;
    cond_src.check_pathway_roles("source")?;
    let z_tgt = ddim_noise(pair.target(), t, eps, schedule)?;
    let z_src = ddim_noise(pair.source(), t, eps, schedule)?;
    let z_hat_tgt = if cfg.gamma == 1.0 {
        z_tgt
    } else {
        spectral::mvfc(&z_tgt, eps_shared, cfg.gamma, mask)?
    };
    let (phi_tgt, phi_src) = rayon::join(
        || guidance_term(denoiser, &z_hat_tgt, t, cond_tgt, cfg.beta),
        || guidance_term(denoiser, &z_src, t, cond_src, cfg.beta),
    );
    Ok(CsdTerms {
        z_hat_tgt,
        phi_tgt: phi_tgt?,
        phi_src: phi_src?,
    })
}

/// `Φ^tgt - Φ^src`; no reconstruction term.
#[allow(clippy::too_many_arguments)]
pub fn csd_delta<D: Denoiser + ?Sized>(
    denoiser: &D,
    pair: &LatentPair,
    t: usize,
    eps: &MultiViewLatent,
    eps_shared: &MultiViewLatent,
    cond_tgt: &ConditioningSpec,
    cond_src: &ConditioningSpec,
    cfg: &DistillConfig,
    schedule: &NoiseSchedule,
    mask: &FrequencyMask,
) -> Result<ScoreDelta> {
    let terms = csd_terms(
        denoiser, pair, t, eps, eps_shared, cond_tgt, cond_src, cfg, schedule, mask,
    )?;
    Ok(ScoreDelta {
        value: terms.phi_tgt.sub(&terms.phi_src)?,
        t,
        kind: DeltaKind::Csd,
    })
}

/// `ω(t) · δ`.
pub fn apply_omega(
    delta: &ScoreDelta,
    schedule: &NoiseSchedule,
    cfg: &DistillConfig,
) -> Result<MultiViewLatent> {
    let a = schedule.alpha_bar(delta.t)?;
    Ok(match cfg.omega {
        Omega::ConstantOne => delta.value.clone(),
        w => delta.value.scale(w.weight(a)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::{GaussianToyDenoiser, Role, Token};
    use crate::schedule::build_schedule;

    fn scalar(v: f64) -> MultiViewLatent {
        MultiViewLatent::from_elem([1, 1, 1, 1], v)
    }

    fn at(x: &MultiViewLatent) -> f64 {
        x.data()[[0, 0, 0, 0]]
    }

    fn schedule() -> NoiseSchedule {
        build_schedule(3, 0.1, 0.1, 1, 2, 2).unwrap()
    }

    fn tok(name: &str, role: Role) -> Token {
        Token::scalar(name, role, 0.0)
    }

    fn plain(beta: f64) -> DistillConfig {
        DistillConfig {
            beta,
            gamma: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn sds_at_data_mean_vanishes() {
        let d = GaussianToyDenoiser::new(schedule())
            .with_mean(&["prompt"], vec![0.6])
            .with_mean(&["null"], vec![-1.0]);
        let cond = ConditioningSpec::new(
            vec![tok("prompt", Role::TextPrompt)],
            vec![tok("null", Role::Null)],
        )
        .unwrap();
        let delta = sds_delta(
            &d,
            &scalar(0.6),
            2,
            &scalar(0.3),
            &cond,
            &plain(1.0),
            &schedule(),
        )
        .unwrap();
        assert!(at(&delta.value).abs() < 1e-14);
        assert_eq!(delta.kind, DeltaKind::Sds);
    }

    #[test]
    fn sds_scalar_closed_form() {
        let d = GaussianToyDenoiser::new(schedule())
            .with_mean(&["prompt"], vec![0.0])
            .with_mean(&["null"], vec![0.0]);
        let cond = ConditioningSpec::new(
            vec![tok("prompt", Role::TextPrompt)],
            vec![tok("null", Role::Null)],
        )
        .unwrap();
        let delta = sds_delta(
            &d,
            &scalar(1.0),
            2,
            &scalar(0.0),
            &cond,
            &plain(1.0),
            &schedule(),
        )
        .unwrap();
        assert!((at(&delta.value) - 0.9 / 0.19f64.sqrt()).abs() < 1e-12);
        assert!((at(&delta.value) - 2.06474).abs() < 1e-5);
    }

    #[test]
    fn sds_beta_zero_is_unconditional_residual() {
        let s = schedule();
        let d = GaussianToyDenoiser::new(s.clone())
            .with_mean(&["prompt"], vec![3.0])
            .with_mean(&["null"], vec![0.5]);
        let null = [tok("null", Role::Null)];
        let cond =
            ConditioningSpec::new(vec![tok("prompt", Role::TextPrompt)], null.to_vec()).unwrap();
        let (z0, eps) = (scalar(0.2), scalar(-0.7));
        let delta = sds_delta(&d, &z0, 2, &eps, &cond, &plain(0.0), &s).unwrap();
        let z_t = ddim_noise(&z0, 2, &eps, &s).unwrap();
        let expected = d.predict(&z_t, 2, &null).unwrap().sub(&eps).unwrap();
        assert_eq!(delta.value, expected);
    }

    #[test]
    fn dds_identical_branches_vanish() {
        let s = schedule();
        let d = GaussianToyDenoiser::new(s.clone())
            .with_mean(&["prompt"], vec![1.0])
            .with_mean(&["null"], vec![0.0]);
        let cond = ConditioningSpec::new(
            vec![tok("prompt", Role::TextPrompt)],
            vec![tok("null", Role::Null)],
        )
        .unwrap();
        let pair = LatentPair::new(scalar(0.4), scalar(0.4)).unwrap();
        let delta = dds_delta(&d, &pair, 2, &scalar(1.3), &cond, &cond, &plain(7.5), &s).unwrap();
        assert_eq!(at(&delta.value), 0.0);
    }

    #[test]
    fn dds_closed_form_and_eps_cancellation() {
        let s = schedule();
        let (mu_pos_t, mu_neg_t, mu_pos_s, mu_neg_s) =
            ([0.7, -0.2], [0.1, 0.4], [0.3, 0.0], [-0.5, 0.2]);
        let d = GaussianToyDenoiser::new(s.clone())
            .with_mean(&["prompt", "style"], mu_pos_t.to_vec())
            .with_mean(&["content"], mu_neg_t.to_vec())
            .with_mean(&["prompt"], mu_pos_s.to_vec())
            .with_mean(&["null"], mu_neg_s.to_vec());
        let tgt = ConditioningSpec::new(
            vec![tok("prompt", Role::TextPrompt), tok("style", Role::Style)],
            vec![tok("content", Role::Content)],
        )
        .unwrap();
        let src = ConditioningSpec::new(
            vec![tok("prompt", Role::TextPrompt)],
            vec![tok("null", Role::Null)],
        )
        .unwrap();
        let shape = [2, 2, 3, 3];
        let field = |k: f64| {
            MultiViewLatent::new(ndarray::Array4::from_shape_fn(shape, |(v, c, y, x)| {
                ((v * 7 + c * 5 + y * 3 + x) as f64 * k).sin()
            }))
            .unwrap()
        };
        let pair = LatentPair::new(field(0.3), field(1.1)).unwrap();
        let beta = 7.5;
        let a: f64 = 0.81;
        let kappa = a.sqrt() / (1.0 - a).sqrt();
        let first = dds_delta(&d, &pair, 2, &field(2.3), &tgt, &src, &plain(beta), &s).unwrap();
        let second = dds_delta(&d, &pair, 2, &field(-0.7), &tgt, &src, &plain(beta), &s).unwrap();
        assert!(first.value.max_abs_diff(&second.value) <= 1e-12);
        for ((idx, &got), (&zt, &zs)) in first
            .value
            .data()
            .indexed_iter()
            .zip(pair.target().data().iter().zip(pair.source().data().iter()))
        {
            let c = idx.1;
            let guided = |pos: f64, neg: f64| neg + beta * (pos - neg);
            let expected = kappa * (zt - zs)
                - kappa * (guided(mu_pos_t[c], mu_neg_t[c]) - guided(mu_pos_s[c], mu_neg_s[c]));
            assert!((got - expected).abs() <= 1e-10);
        }
    }

    #[test]
    fn csd_identical_pathways_vanish() {
        let s = schedule();
        let d = GaussianToyDenoiser::new(s.clone())
            .with_mean(&["prompt"], vec![1.0])
            .with_mean(&["null"], vec![0.0]);
        let cond = ConditioningSpec::new(
            vec![tok("prompt", Role::TextPrompt)],
            vec![tok("null", Role::Null)],
        )
        .unwrap();
        let pair = LatentPair::new(scalar(0.4), scalar(0.4)).unwrap();
        let mask = spectral::make_highpass(1, 1, 1, 0.25).unwrap();
        let delta = csd_delta(
            &d,
            &pair,
            2,
            &scalar(1.3),
            &scalar(0.2),
            &cond,
            &cond,
            &plain(7.5),
            &s,
            &mask,
        )
        .unwrap();
        assert_eq!(at(&delta.value), 0.0);
    }

    #[test]
    fn decompose_at_negative_mean_has_zero_recon() {
        let s = schedule();
        let d = GaussianToyDenoiser::new(s.clone())
            .with_mean(&["prompt"], vec![2.0])
            .with_mean(&["null"], vec![0.8]);
        let cond = ConditioningSpec::new(
            vec![tok("prompt", Role::TextPrompt)],
            vec![tok("null", Role::Null)],
        )
        .unwrap();
        let parts = decompose_sds(&d, &scalar(0.8), 2, &scalar(0.0), &cond, &s).unwrap();
        assert!(at(&parts.recon).abs() < 1e-15);
        let delta0 = sds_delta(&d, &scalar(0.8), 2, &scalar(0.0), &cond, &plain(0.0), &s).unwrap();
        assert_eq!(delta0.value, parts.recon);
    }

    #[test]
    fn csd_scalar_instance() {
        let s = schedule();
        let d = GaussianToyDenoiser::new(s.clone())
            .with_mean(&["prompt", "style"], vec![2.0])
            .with_mean(&["content"], vec![0.5])
            .with_mean(&["prompt"], vec![1.0])
            .with_mean(&["null"], vec![0.0]);
        let tgt = ConditioningSpec::new(
            vec![tok("prompt", Role::TextPrompt), tok("style", Role::Style)],
            vec![tok("content", Role::Content)],
        )
        .unwrap();
        let src = ConditioningSpec::new(
            vec![tok("prompt", Role::TextPrompt)],
            vec![tok("null", Role::Null)],
        )
        .unwrap();
        let pair = LatentPair::new(scalar(0.1), scalar(-0.3)).unwrap();
        let mask = spectral::make_highpass(1, 1, 1, 0.25).unwrap();
        let delta = csd_delta(
            &d,
            &pair,
            2,
            &scalar(0.9),
            &scalar(0.0),
            &tgt,
            &src,
            &plain(7.5),
            &s,
            &mask,
        )
        .unwrap();
        let expected = 7.5 * (0.9 / 0.19f64.sqrt()) * ((0.5 - 2.0) - (0.0 - 1.0));
        assert!((at(&delta.value) - expected).abs() < 1e-10);
        assert!((at(&delta.value) + 7.74277).abs() < 5e-5);
    }

    #[test]
    fn csd_rejects_misplaced_roles() {
        let s = schedule();
        let d = GaussianToyDenoiser::new(s.clone());
        let bad = ConditioningSpec::new(
            vec![tok("null", Role::Null)],
            vec![tok("prompt", Role::TextPrompt)],
        )
        .unwrap();
        let pair = LatentPair::new(scalar(0.0), scalar(0.0)).unwrap();
        let mask = spectral::make_highpass(1, 1, 1, 0.25).unwrap();
        let err = csd_delta(
            &d,
            &pair,
            2,
            &scalar(0.0),
            &scalar(0.0),
            &bad,
            &bad,
            &plain(1.0),
            &s,
            &mask,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            DistillError::Guidance(GuidanceError::Roles { .. })
        ));
    }

    #[test]
    fn omega_weights() {
        let s = schedule();
        let delta = ScoreDelta {
            value: scalar(2.0),
            t: 2,
            kind: DeltaKind::Csd,
        };
        let one = apply_omega(&delta, &s, &DistillConfig::default()).unwrap();
        assert_eq!(one, delta.value);
        let cfg = DistillConfig {
            omega: Omega::OneMinusAlphaBar,
            ..Default::default()
        };
        let w = apply_omega(&delta, &s, &cfg).unwrap();
        assert!((at(&w) - 2.0 * 0.19).abs() < 1e-15);
        // the largest ᾱ (first timestep) gives the smallest weight
        let weights: Vec<f64> = s
            .alpha_bars()
            .iter()
            .map(|&a| Omega::OneMinusAlphaBar.weight(a))
            .collect();
        assert!(weights.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn config_validation() {
        assert!(DistillConfig::default().validate().is_ok());
        let bad_beta = DistillConfig {
            beta: -1.0,
            ..Default::default()
        };
        assert!(matches!(bad_beta.validate(), Err(DistillError::Beta(_))));
        let bad_gamma = DistillConfig {
            gamma: 1.5,
            ..Default::default()
        };
        assert!(matches!(bad_gamma.validate(), Err(DistillError::Gamma(_))));
    }
}
