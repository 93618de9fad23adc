//! Conditioning, the denoiser interface and guidance combinators.
//!
//! Conditioning tokens are opaque named vectors carrying a role. Denoisers
//! only see the token list; the shipped analytic denoisers key their
//! behavior on the token-set [`Fingerprint`].

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array2, Array3, Axis, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Stream};
use crate::schedule::{NoiseSchedule, ScheduleError};
use crate::tensor::MultiViewLatent;

#[derive(Debug, Error, PartialEq)]
pub enum GuidanceError {
    #[error("conditioning has no {0} tokens")]
    EmptyBranch(&'static str),
    #[error("token `{name}` has length {found}, expected {expected}")]
    TokenLength {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("token `{0}` has an empty or non-finite value")]
    TokenValue(String),
    #[error("no denoiser branch for conditioning {0}")]
    UnknownConditioning(Fingerprint),
    #[error("guidance scale {0} must be finite and non-negative")]
    Beta(f64),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape([usize; 4], [usize; 4]),
    #[error("branch mean for {fingerprint} does not fit latent channels/size")]
    MeanShape { fingerprint: Fingerprint },
    #[error("denoiser produced a non-finite prediction")]
    NonFinite,
    #[error("{pathway} conditioning: {reason}")]
    Roles {
        pathway: &'static str,
        reason: String,
    },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

pub type Result<T, E = GuidanceError> = std::result::Result<T, E>;

/// What a conditioning token stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Text prompt embedding (also used for textual negative prompts).
    TextPrompt,
    /// Null / empty-prompt embedding.
    Null,
    /// Style features of the reference image.
    Style,
    /// Content features of the reference image.
    Content,
    /// Structural guidance; forwarded to the denoiser but ignored by the
    /// analytic backends.
    Structure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Token {
    pub name: String,
    pub role: Role,
    pub value: Vec<f64>,
}

impl Token {
    pub fn new(name: impl Into<String>, role: Role, value: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            role,
            value,
        }
    }

    /// Convenience constructor for a one-element token.
    pub fn scalar(name: impl Into<String>, role: Role, value: f64) -> Self {
        Self::new(name, role, vec![value])
    }
}

/// Sorted token names of a token set, excluding structure tokens.
///
/// A concatenation such as `[prompt, style]` is modeled as a set, so the
/// fingerprint does not depend on token order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fingerprint(Vec<String>);

impl Fingerprint {
    pub fn of(tokens: &[Token]) -> Self {
        let mut names: Vec<String> = tokens
            .iter()
            .filter(|t| t.role != Role::Structure)
            .map(|t| t.name.clone())
            .collect();
        names.sort();
        names.dedup();
        Self(names)
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        let mut names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        names.sort();
        names.dedup();
        Self(names)
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.0.join(", "))
    }
}

/// Positive and negative token sets for one guidance evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSpec {
    positive: Vec<Token>,
    negative: Vec<Token>,
}

impl ConditioningSpec {
    /// Both branches must be nonempty; every token vector must be finite
    /// and share one length.
    pub fn new(positive: Vec<Token>, negative: Vec<Token>) -> Result<Self> {
        if positive.is_empty() {
            return Err(GuidanceError::EmptyBranch("positive"));
        }
        if negative.is_empty() {
            return Err(GuidanceError::EmptyBranch("negative"));
        }
        let expected = positive[0].value.len();
        for t in positive.iter().chain(&negative) {
            if t.value.is_empty() || t.value.iter().any(|v| !v.is_finite()) {
                return Err(GuidanceError::TokenValue(t.name.clone()));
            }
            if t.value.len() != expected {
                return Err(GuidanceError::TokenLength {
                    name: t.name.clone(),
                    expected,
                    found: t.value.len(),
                });
            }
        }
        Ok(Self { positive, negative })
    }

    pub fn positive(&self) -> &[Token] {
        &self.positive
    }

    pub fn negative(&self) -> &[Token] {
        &self.negative
    }

    /// Checks roles for a stylization pathway: the positive set holds a
    /// text prompt plus optional style/structure tokens, and the negative
    /// set holds only null, content, text (negative prompt) or structure
    /// tokens.
    pub fn check_pathway_roles(&self, pathway: &'static str) -> Result<()> {
        let err = |reason: String| GuidanceError::Roles { pathway, reason };
        if !self.positive.iter().any(|t| t.role == Role::TextPrompt) {
            return Err(err("positive set needs a text_prompt token".into()));
        }
        for t in &self.positive {
            if matches!(t.role, Role::Null | Role::Content) {
                return Err(err(format!(
                    "token `{}` with role {:?} cannot be positive",
                    t.name, t.role
                )));
            }
        }
        for t in &self.negative {
            if t.role == Role::Style {
                return Err(err(format!("style token `{}` cannot be negative", t.name)));
            }
        }
        Ok(())
    }
}

/// An ε-predictor `ε_φ(z_t, t, c)`.
///
/// Implementations must be deterministic and safe to call concurrently.
pub trait Denoiser: Send + Sync {
    fn predict(&self, z_t: &MultiViewLatent, t: usize, tokens: &[Token])
        -> Result<MultiViewLatent>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(
        &self,
        z_t: &MultiViewLatent,
        t: usize,
        tokens: &[Token],
    ) -> Result<MultiViewLatent> {
        (**self).predict(z_t, t, tokens)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict(
        &self,
        z_t: &MultiViewLatent,
        t: usize,
        tokens: &[Token],
    ) -> Result<MultiViewLatent> {
        (**self).predict(z_t, t, tokens)
    }
}

/// A target mean, either one value per channel or a full `[C, H, W]` field.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanField {
    PerChannel(Vec<f64>),
    Field(Array3<f64>),
}

impl MeanField {
    fn value(&self, c: usize, y: usize, x: usize) -> f64 {
        match self {
            MeanField::PerChannel(v) => v[c],
            MeanField::Field(a) => a[[c, y, x]],
        }
    }

    fn fits(&self, shape: [usize; 4]) -> bool {
        match self {
            MeanField::PerChannel(v) => v.len() == shape[1],
            MeanField::Field(a) => a.shape() == [shape[1], shape[2], shape[3]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBranch {
    pub mean: MeanField,
    /// Per-element data variance around the mean; zero gives a point mass.
    pub variance: f64,
}

/// Exact ε-predictor for data distributed as `N(μ_c, σ_c² I)`.
///
/// For `σ_c = 0` this is `(z - sqrt(ᾱ_t) μ_c) / sqrt(1 - ᾱ_t)`. For positive
/// variance the predictor is `sqrt(1-ᾱ) / (ᾱ σ² + 1 - ᾱ) · (z - sqrt(ᾱ) μ)`,
/// which makes the conditional branches respond differently to `z`.
#[derive(Debug, Clone)]
pub struct GaussianToyDenoiser {
    schedule: NoiseSchedule,
    branches: BTreeMap<Fingerprint, GaussianBranch>,
}

impl GaussianToyDenoiser {
    pub fn new(schedule: NoiseSchedule) -> Self {
        Self {
            schedule,
            branches: BTreeMap::new(),
        }
    }

    /// Adds a point-mass branch with a per-channel mean.
    pub fn with_mean<S: AsRef<str>>(self, names: &[S], mean: Vec<f64>) -> Self {
        self.with_branch(
            Fingerprint::from_names(names),
            GaussianBranch {
                mean: MeanField::PerChannel(mean),
                variance: 0.0,
            },
        )
    }

    pub fn with_branch(mut self, fingerprint: Fingerprint, branch: GaussianBranch) -> Self {
        self.branches.insert(fingerprint, branch);
        self
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn branch(&self, fingerprint: &Fingerprint) -> Option<&GaussianBranch> {
        self.branches.get(fingerprint)
    }
}

impl Denoiser for GaussianToyDenoiser {
    fn predict(
        &self,
        z_t: &MultiViewLatent,
        t: usize,
        tokens: &[Token],
    ) -> Result<MultiViewLatent> {
        let fingerprint = Fingerprint::of(tokens);
        let branch = self
            .branches
            .get(&fingerprint)
            .ok_or_else(|| GuidanceError::UnknownConditioning(fingerprint.clone()))?;
        if !branch.mean.fits(z_t.shape()) {
            return Err(GuidanceError::MeanShape { fingerprint });
        }
        let a = self.schedule.alpha_bar(t)?;
        let signal = a.sqrt();
        let noise = (1.0 - a).sqrt();
        let mut out = z_t.data().clone();
        if branch.variance == 0.0 {
            out.indexed_iter_mut().for_each(|((_, c, y, x), v)| {
                *v = (*v - signal * branch.mean.value(c, y, x)) / noise;
            });
        } else {
            let gain = noise / (a * branch.variance + 1.0 - a);
            out.indexed_iter_mut().for_each(|((_, c, y, x), v)| {
                *v = gain * (*v - signal * branch.mean.value(c, y, x));
            });
        }
        MultiViewLatent::new(out).map_err(|_| GuidanceError::NonFinite)
    }
}

/// `ε̂ = A z + b_c` with a fixed random channel-mixing matrix `A` and a
/// per-conditioning bias `b_c`. Ignores the timestep.
#[derive(Debug, Clone)]
pub struct FrozenLinearDenoiser {
    mixing: Array2<f64>,
    biases: BTreeMap<Fingerprint, Vec<f64>>,
}

impl FrozenLinearDenoiser {
    /// Draws `A` with i.i.d. `N(0, 1/C)` entries from the seed's denoiser stream.
    pub fn new(seed: u64, channels: usize) -> Self {
        let mut rng = rng::stream(seed, Stream::Denoiser);
        let scale = 1.0 / (channels as f64).sqrt();
        let mixing = Array2::from_shape_simple_fn((channels, channels), || {
            scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        Self {
            mixing,
            biases: BTreeMap::new(),
        }
    }

    pub fn from_matrix(mixing: Array2<f64>) -> Self {
        Self {
            mixing,
            biases: BTreeMap::new(),
        }
    }

    pub fn with_bias<S: AsRef<str>>(mut self, names: &[S], bias: Vec<f64>) -> Self {
        self.biases.insert(Fingerprint::from_names(names), bias);
        self
    }

    pub fn mixing(&self) -> &Array2<f64> {
        &self.mixing
    }
}

impl Denoiser for FrozenLinearDenoiser {
    fn predict(
        &self,
        z_t: &MultiViewLatent,
        _t: usize,
        tokens: &[Token],
    ) -> Result<MultiViewLatent> {
        let fingerprint = Fingerprint::of(tokens);
        let bias = self
            .biases
            .get(&fingerprint)
            .ok_or_else(|| GuidanceError::UnknownConditioning(fingerprint.clone()))?;
        let c = z_t.channels();
        if self.mixing.nrows() != c || bias.len() != c {
            return Err(GuidanceError::MeanShape { fingerprint });
        }
        let mut out = ndarray::Array4::zeros(z_t.shape());
        for (mut out_view, in_view) in out.outer_iter_mut().zip(z_t.data().outer_iter()) {
            for (row, mut out_ch) in out_view.axis_iter_mut(Axis(0)).enumerate() {
                out_ch.fill(bias[row]);
                for (col, in_ch) in in_view.axis_iter(Axis(0)).enumerate() {
                    let k = self.mixing[[row, col]];
                    Zip::from(&mut out_ch)
                        .and(&in_ch)
                        .for_each(|o, &i| *o += k * i);
                }
            }
        }
        MultiViewLatent::new(out).map_err(|_| GuidanceError::NonFinite)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(GuidanceError::Beta(beta));
    }
    Ok(())
}

/// Classifier-free guidance: `eps_neg + beta (eps_pos - eps_neg)`.
pub fn cfg_combine(
    eps_neg: &MultiViewLatent,
    eps_pos: &MultiViewLatent,
    beta: f64,
) -> Result<MultiViewLatent> {
    check_beta(beta)?;
    if eps_neg.shape() != eps_pos.shape() {
        return Err(GuidanceError::Shape(eps_neg.shape(), eps_pos.shape()));
    }
    let mut out = eps_neg.data().clone();
    Zip::from(&mut out)
        .and(eps_pos.data())
        .for_each(|n, &p| *n += beta * (p - *n));
    MultiViewLatent::new(out).map_err(|_| GuidanceError::NonFinite)
}

/// Both branch predictions for one conditioning spec.
pub fn predict_branches<D: Denoiser + ?Sized>(
    denoiser: &D,
    z_t: &MultiViewLatent,
    t: usize,
    cond: &ConditioningSpec,
) -> Result<(MultiViewLatent, MultiViewLatent)> {
    let (neg, pos) = rayon::join(
        || denoiser.predict(z_t, t, cond.negative()),
        || denoiser.predict(z_t, t, cond.positive()),
    );
    let (neg, pos) = (neg?, pos?);
    for p in [&neg, &pos] {
        if p.shape() != z_t.shape() {
            return Err(GuidanceError::Shape(z_t.shape(), p.shape()));
        }
    }
    Ok((neg, pos))
}

/// Guidance with an arbitrary negative set; with `negative = {∅}` this is
/// plain classifier-free guidance.
pub fn guided_predict<D: Denoiser + ?Sized>(
    denoiser: &D,
    z_t: &MultiViewLatent,
    t: usize,
    cond: &ConditioningSpec,
    beta: f64,
) -> Result<MultiViewLatent> {
    check_beta(beta)?;
    let (neg, pos) = predict_branches(denoiser, z_t, t, cond)?;
    cfg_combine(&neg, &pos, beta)
}
